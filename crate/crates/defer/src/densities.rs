//! Built-in synthetic target densities, all defined on the unit hypercube,
//! plus their construction parameters for run metadata.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::engine::DensityFunction;
use crate::error::{DeferError, Result};
use crate::rng::{stream_rng, StreamTag};
use rand::Rng;

/// Parameter record for a built-in target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Target {
    Uniform { dim: usize },
    Gaussian { dim: usize, mean: Vec<f64>, scale: f64 },
    StudentT { dim: usize, mean: Vec<f64>, scale: f64, dof: f64 },
    Canoe { dim: usize },
    Mog4,
    Cigar { dim: usize },
}

impl Target {
    pub fn dim(&self) -> usize {
        match self {
            Target::Uniform { dim }
            | Target::Gaussian { dim, .. }
            | Target::StudentT { dim, .. }
            | Target::Canoe { dim }
            | Target::Cigar { dim } => *dim,
            Target::Mog4 => 4,
        }
    }

    /// Isotropic Gaussian with per-run mean sampled from U(0.2, 0.8)^D.
    pub fn gaussian_seeded(dim: usize, scale: f64, seed: u64) -> Self {
        Target::Gaussian {
            dim,
            mean: sample_means(dim, seed),
            scale,
        }
    }

    /// Student's t with scale 0.01, dof 2.5 + D/2, and per-run mean sampled
    /// from U(0.2, 0.8)^D by the experiment seed.
    pub fn student_t_seeded(dim: usize, seed: u64) -> Self {
        Target::StudentT {
            dim,
            mean: sample_means(dim, seed),
            scale: 0.01,
            dof: 2.5 + dim as f64 / 2.0,
        }
    }

    pub fn build(&self) -> Result<BuiltTarget> {
        let imp = match self {
            Target::Uniform { dim } => {
                check_dim(*dim, 1)?;
                Impl::Uniform
            }
            Target::Gaussian { dim, mean, scale } => {
                check_dim(*dim, 1)?;
                if mean.len() != *dim {
                    return Err(DeferError::InvalidConfig(
                        "gaussian mean length must match dim".into(),
                    ));
                }
                if !(*scale > 0.0) {
                    return Err(DeferError::InvalidConfig("gaussian scale must be > 0".into()));
                }
                Impl::Gaussian {
                    mean: mean.clone(),
                    scale: *scale,
                }
            }
            Target::StudentT { dim, mean, scale, dof } => {
                check_dim(*dim, 1)?;
                if mean.len() != *dim {
                    return Err(DeferError::InvalidConfig(
                        "student_t mean length must match dim".into(),
                    ));
                }
                if !(*scale > 0.0) || !(*dof > 0.0) {
                    return Err(DeferError::InvalidConfig(
                        "student_t scale and dof must be > 0".into(),
                    ));
                }
                let d = *dim as f64;
                let log_norm = ln_gamma((dof + d) / 2.0)
                    - ln_gamma(dof / 2.0)
                    - (d / 2.0) * (dof * std::f64::consts::PI).ln()
                    - d * scale.ln();
                Impl::StudentT {
                    mean: mean.clone(),
                    scale: *scale,
                    dof: *dof,
                    log_norm,
                }
            }
            Target::Canoe { dim } => {
                check_dim(*dim, 2)?;
                let mu = vec![0.5; *dim];
                let inner = MvNormal::new(mu.clone(), scaled_ji(*dim, 0.01, 0.95, 0.05))?;
                let outer = MvNormal::new(mu, scaled_ji(*dim, 0.02, 0.60, 0.40))?;
                Impl::Canoe { inner, outer }
            }
            Target::Mog4 => {
                let mu_a = vec![0.6326, 0.7401, 0.7232, 0.2471];
                let mu_b = vec![0.5139, 0.4667, 0.3777, 0.7995];
                let s = 0.01f64 * 0.01;
                #[rustfmt::skip]
                let cov_a = DMatrix::from_row_slice(4, 4, &[
                    2.25, -1.0, 0.0, 0.0,
                    -1.0, 2.25, 0.0, 0.0,
                    0.0, 0.0, 2.25, 0.0,
                    0.0, 0.0, 0.0, 2.25,
                ]) * s;
                let c = 2.25f64 * 2.25;
                #[rustfmt::skip]
                let cov_b = DMatrix::from_row_slice(4, 4, &[
                    c, -2.25, 1.0, -1.0,
                    -2.25, c, 0.0, 0.0,
                    1.0, 0.0, c, 0.0,
                    -1.0, 0.0, 0.0, c,
                ]) * s;
                Impl::Mog4 {
                    a: MvNormal::new(mu_a, cov_a)?,
                    b: MvNormal::new(mu_b, cov_b)?,
                    log_weight_a: 2.5f64.ln(),
                }
            }
            Target::Cigar { dim } => {
                check_dim(*dim, 2)?;
                let mu = vec![0.5; *dim];
                Impl::Cigar {
                    gauss: MvNormal::new(mu, scaled_ji(*dim, 0.01, 0.99, 0.01))?,
                }
            }
        };
        Ok(BuiltTarget {
            spec: self.clone(),
            imp,
        })
    }
}

fn check_dim(dim: usize, min: usize) -> Result<()> {
    if dim < min {
        return Err(DeferError::InvalidConfig(format!(
            "target needs dim >= {min}, got {dim}"
        )));
    }
    Ok(())
}

/// `c * (j_coef * J_D + i_coef * I_D)` where J is all-ones.
fn scaled_ji(dim: usize, c: f64, j_coef: f64, i_coef: f64) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |r, col| {
        c * (j_coef + if r == col { i_coef } else { 0.0 })
    })
}

/// Per-run target means: U(0.2, 0.8) per dimension from a dedicated stream.
pub fn sample_means(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0, StreamTag::TargetMeans);
    (0..dim).map(|_| 0.2 + 0.6 * rng.random::<f64>()).collect()
}

/// Dense multivariate normal with a precomputed Cholesky factor.
#[derive(Debug, Clone)]
pub struct MvNormal {
    mean: Vec<f64>,
    /// Lower-triangular factor, row-major.
    l: Vec<f64>,
    log_norm: f64,
}

impl MvNormal {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(DeferError::InvalidConfig(
                "covariance shape must match mean length".into(),
            ));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| DeferError::InvalidConfig("covariance is not positive definite".into()))?;
        let l_mat = chol.l();
        let mut l = vec![0.0; dim * dim];
        let mut log_det_half = 0.0;
        for r in 0..dim {
            for c in 0..=r {
                l[r * dim + c] = l_mat[(r, c)];
            }
            log_det_half += l_mat[(r, r)].ln();
        }
        let log_norm = -(dim as f64 / 2.0) * (2.0 * std::f64::consts::PI).ln() - log_det_half;
        Ok(MvNormal { mean, l, log_norm })
    }

    #[inline]
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let dim = self.mean.len();
        // Forward substitution: y = L^{-1} (x - mean); qf = |y|^2.
        let mut y = [0.0f64; 16];
        let mut y_heap;
        let ys: &mut [f64] = if dim <= 16 {
            &mut y[..dim]
        } else {
            y_heap = vec![0.0; dim];
            &mut y_heap
        };
        let mut qf = 0.0;
        for r in 0..dim {
            let mut acc = x[r] - self.mean[r];
            for c in 0..r {
                acc -= self.l[r * dim + c] * ys[c];
            }
            let v = acc / self.l[r * dim + r];
            ys[r] = v;
            qf += v * v;
        }
        self.log_norm - 0.5 * qf
    }
}

#[derive(Debug, Clone)]
enum Impl {
    Uniform,
    Gaussian { mean: Vec<f64>, scale: f64 },
    StudentT { mean: Vec<f64>, scale: f64, dof: f64, log_norm: f64 },
    Canoe { inner: MvNormal, outer: MvNormal },
    Mog4 { a: MvNormal, b: MvNormal, log_weight_a: f64 },
    Cigar { gauss: MvNormal },
}

/// A constructed built-in density.
#[derive(Debug, Clone)]
pub struct BuiltTarget {
    pub spec: Target,
    imp: Impl,
}

impl BuiltTarget {
    /// Log density at one point; pure and deterministic.
    pub fn log_density(&self, p: &[f64]) -> f64 {
        match &self.imp {
            Impl::Uniform => 0.0,
            Impl::Gaussian { mean, scale } => {
                let d = mean.len() as f64;
                let qf: f64 = mean
                    .iter()
                    .zip(p)
                    .map(|(m, x)| {
                        let t = (x - m) / scale;
                        t * t
                    })
                    .sum();
                -d * (scale * (2.0 * std::f64::consts::PI).sqrt()).ln() - 0.5 * qf
            }
            Impl::StudentT { mean, scale, dof, log_norm } => {
                let d = mean.len() as f64;
                let qf: f64 = mean
                    .iter()
                    .zip(p)
                    .map(|(m, x)| {
                        let t = (x - m) / scale;
                        t * t
                    })
                    .sum();
                log_norm - (dof + d) / 2.0 * (qf / dof).ln_1p()
            }
            Impl::Canoe { inner, outer } => {
                // f = max(2 + 5 N_inner - 10 N_outer, 0); the subtraction is
                // done in linear space after shifting by the larger term log.
                let la = inner.log_pdf(p);
                let lb = outer.log_pdf(p);
                let s = la.max(lb);
                let v = 2.0 + (5.0 * (la - s).exp() - 10.0 * (lb - s).exp()) * s.exp();
                if v > 0.0 {
                    v.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Impl::Mog4 { a, b, log_weight_a } => {
                let la = log_weight_a + a.log_pdf(p);
                let lb = b.log_pdf(p);
                let hi = la.max(lb);
                hi + ((la - hi).exp() + (lb - hi).exp()).ln()
            }
            Impl::Cigar { gauss } => gauss.log_pdf(p),
        }
    }
}

impl DensityFunction for BuiltTarget {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn eval_batch(&mut self, points: &[f64], out: &mut Vec<f64>) -> Result<()> {
        let dim = self.spec.dim();
        for p in points.chunks_exact(dim) {
            out.push(self.log_density(p));
        }
        Ok(())
    }
}
