//! Down-stream computations on a finished tree: evidence, normalized density,
//! sampling, entropy, expectations, subregion mass, marginals, conditionals.
//!
//! Everything here treats the approximation as the piecewise-constant density
//! it is: sums over leaves, midpoint-rule expectations, constant-density
//! clipping for subregions. All operations are read-only and safe to run
//! concurrently on a finalized tree.

use rand::Rng;

use crate::accum::{dd_sum, TwoFloat};
use crate::alias::AliasSampler;
use crate::engine::Aggregates;
use crate::error::{DeferError, Result};
use crate::geom::{coord_to_cell, pow3_neg};
use crate::tree::{NodeId, Tree};

/// Evidence estimate in original units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evidence {
    pub z: f64,
    pub log_z: f64,
    /// True when every leaf carries zero mass.
    pub all_zero: bool,
}

/// Total offset-shifted mass, summed over leaves in creation order.
fn leaf_mass_total(tree: &Tree) -> TwoFloat {
    dd_sum(tree.leaf_ids().map(|l| tree.mass(l)))
}

/// Normalisation-constant estimate: the sum of leaf masses, corrected back
/// to original units by the log offset and the domain volume.
pub fn evidence(tree: &Tree, aggregates: &Aggregates) -> Evidence {
    let total = leaf_mass_total(tree);
    let all_zero = total.value() == 0.0;
    let log_z = total.ln() - aggregates.log_offset() + tree.domain().log_volume();
    Evidence {
        z: log_z.exp(),
        log_z,
        all_zero,
    }
}

/// Normalized proxy density at `point` (original units): the containing
/// leaf's density over the evidence, as a proper pdf on the domain.
pub fn density(tree: &Tree, aggregates: &Aggregates, point: &[f64]) -> Result<f64> {
    let leaf = tree.locate(point)?;
    let total = leaf_mass_total(tree);
    if total.value() == 0.0 {
        return Err(DeferError::ZeroMass);
    }
    let shifted = tree.log_f(leaf) + aggregates.log_offset();
    Ok((shifted - total.ln() - tree.domain().log_volume()).exp())
}

/// Build the constant-time sampler over the current leaves.
pub fn build_sampler(tree: &Tree) -> Result<AliasSampler> {
    AliasSampler::build(tree)
}

/// Draw `n` points proportional to the approximation, flattened row-major in
/// original units: pick a leaf by the alias method, then sample uniformly
/// within its box.
pub fn sample<R: Rng>(sampler: &AliasSampler, tree: &Tree, rng: &mut R, n: usize) -> Vec<f64> {
    let dim = tree.dim();
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let leaf = sampler.sample_leaf(rng);
        let b = tree.boxx(leaf);
        for d in 0..dim {
            let lo = tree.domain().denormalize_coord(d, b.lo_norm(d));
            let hi = tree.domain().denormalize_coord(d, b.hi_norm(d));
            let u: f64 = rng.random();
            out.push(lo + u * (hi - lo));
        }
    }
    out
}

/// Exact differential entropy of the piecewise-constant normalized
/// approximation, in nats over original units. Zero-mass leaves contribute
/// nothing.
pub fn entropy(tree: &Tree, aggregates: &Aggregates) -> Result<f64> {
    let total = leaf_mass_total(tree);
    if total.value() == 0.0 {
        return Err(DeferError::ZeroMass);
    }
    let log_total = total.ln();
    let log_vol = tree.domain().log_volume();
    let offset = aggregates.log_offset();
    // H = -sum (m_i/Z) ln p_i with ln p_i = s_i - ln Z - ln vol.
    let weighted = dd_sum(tree.leaf_ids().filter_map(|l| {
        let m = tree.mass(l);
        if m == 0.0 {
            None
        } else {
            Some(m * (tree.log_f(l) + offset))
        }
    }));
    Ok(log_total + log_vol - weighted.value() / total.value())
}

/// Midpoint-rule expectation of `g` under the normalized approximation:
/// `sum (m_i / Z) g(centroid_i)` with centroids in original units.
pub fn expectation(
    tree: &Tree,
    _aggregates: &Aggregates,
    mut g: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    let total = leaf_mass_total(tree);
    if total.value() == 0.0 {
        return Err(DeferError::ZeroMass);
    }
    let mut acc = TwoFloat::ZERO;
    for l in tree.leaf_ids() {
        let m = tree.mass(l);
        if m == 0.0 {
            continue;
        }
        let v = g(&tree.centroid_original(l));
        if v.is_nan() {
            return Err(DeferError::Evaluation(
                "expectation integrand returned NaN".into(),
            ));
        }
        acc.add_f64(m * v);
    }
    Ok(acc.value() / total.value())
}

/// Mass and probability of an axis-aligned box in original units, treating
/// the density as constant on each leaf (straddling leaves are clipped by
/// volume fraction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubregionMass {
    /// Integral of the unnormalised density over the region, original units.
    pub mass: f64,
    pub log_mass: f64,
    /// `mass / Z`: the probability the approximation assigns to the region.
    pub probability: f64,
}

pub fn subregion_mass(
    tree: &Tree,
    aggregates: &Aggregates,
    lo: &[f64],
    hi: &[f64],
) -> Result<SubregionMass> {
    let dim = tree.dim();
    if lo.len() != dim || hi.len() != dim {
        return Err(DeferError::InvalidConfig(format!(
            "subregion bounds must have {dim} coordinates"
        )));
    }
    let domain = tree.domain();
    // Clip the region to the domain in normalized coordinates.
    let r_lo: Vec<f64> = (0..dim)
        .map(|d| domain.normalize_coord(d, lo[d]).max(0.0))
        .collect();
    let r_hi: Vec<f64> = (0..dim)
        .map(|d| domain.normalize_coord(d, hi[d]).min(1.0))
        .collect();

    let mut clipped = TwoFloat::ZERO;
    for l in tree.leaf_ids() {
        let m = tree.mass(l);
        if m == 0.0 {
            continue;
        }
        let b = tree.boxx(l);
        let mut frac = 1.0;
        for d in 0..dim {
            let blo = b.lo_norm(d);
            let bhi = b.hi_norm(d);
            let w = (bhi.min(r_hi[d]) - blo.max(r_lo[d])) / (bhi - blo);
            if w <= 0.0 {
                frac = 0.0;
                break;
            }
            frac *= w.min(1.0);
        }
        if frac > 0.0 {
            clipped.add_f64(m * frac);
        }
    }

    let total = leaf_mass_total(tree);
    let probability = if total.value() > 0.0 {
        clipped.value() / total.value()
    } else {
        0.0
    };
    let log_mass = clipped.ln() - aggregates.log_offset() + domain.log_volume();
    Ok(SubregionMass {
        mass: log_mass.exp(),
        log_mass,
        probability,
    })
}

/// Marginal density over `kept_dims` at `point_a` (original units), obtained
/// by integrating the piecewise-constant approximation over the dropped
/// dimensions: every leaf whose kept-dims slice contains the point
/// contributes its mass spread over its kept-dims footprint.
pub fn marginal_density(
    tree: &Tree,
    _aggregates: &Aggregates,
    kept_dims: &[usize],
    point_a: &[f64],
) -> Result<f64> {
    let dim = tree.dim();
    validate_dims(kept_dims, dim)?;
    if point_a.len() != kept_dims.len() {
        return Err(DeferError::InvalidConfig(format!(
            "marginal point needs {} coordinates, got {}",
            kept_dims.len(),
            point_a.len()
        )));
    }
    let domain = tree.domain();
    let mut cells = Vec::with_capacity(kept_dims.len());
    let mut log_vol_a = 0.0;
    for (j, &d) in kept_dims.iter().enumerate() {
        let x = point_a[j];
        if !(x >= domain.lower()[d] && x <= domain.upper()[d]) {
            return Err(DeferError::OutOfDomain {
                dim: d,
                value: x,
                lo: domain.lower()[d],
                hi: domain.upper()[d],
            });
        }
        cells.push(coord_to_cell(domain.normalize_coord(d, x)));
        log_vol_a += domain.side(d).ln();
    }

    let total = leaf_mass_total(tree);
    if total.value() == 0.0 {
        return Err(DeferError::ZeroMass);
    }
    let mut acc = TwoFloat::ZERO;
    for l in tree.leaf_ids() {
        let m = tree.mass(l);
        if m == 0.0 {
            continue;
        }
        let b = tree.boxx(l);
        let contains = kept_dims.iter().zip(&cells).all(|(&d, &c)| {
            let (lo, hi) = b.cell_range(d);
            c >= lo && c < hi
        });
        if contains {
            let depth_a: u32 = kept_dims.iter().map(|&d| b.depths()[d] as u32).sum();
            acc.add_f64(m / pow3_neg(depth_a));
        }
    }
    Ok(acc.value() / total.value() / log_vol_a.exp())
}

/// One piece of a conditional slice: the leaf's footprint on the free
/// dimensions (original units) and the renormalized conditional density.
#[derive(Debug, Clone)]
pub struct ConditionalPiece {
    pub leaf: NodeId,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub density: f64,
}

/// Piecewise-constant conditional over the free dimensions.
#[derive(Debug, Clone)]
pub struct ConditionalSlice {
    pub free_dims: Vec<usize>,
    pub pieces: Vec<ConditionalPiece>,
}

/// Condition on exact values for `fixed_dims`; the leaves intersecting the
/// axis-aligned slice, restricted to the free dimensions and renormalized,
/// tile the free-dims box.
pub fn conditional_slice(
    tree: &Tree,
    aggregates: &Aggregates,
    fixed_dims: &[usize],
    fixed_values: &[f64],
) -> Result<ConditionalSlice> {
    let dim = tree.dim();
    validate_dims(fixed_dims, dim)?;
    if fixed_values.len() != fixed_dims.len() {
        return Err(DeferError::InvalidConfig(format!(
            "conditional needs {} fixed values, got {}",
            fixed_dims.len(),
            fixed_values.len()
        )));
    }
    let free_dims: Vec<usize> = (0..dim).filter(|d| !fixed_dims.contains(d)).collect();
    if free_dims.is_empty() {
        return Err(DeferError::InvalidConfig(
            "conditioning on every dimension leaves nothing free".into(),
        ));
    }
    let domain = tree.domain();
    let mut cells = Vec::with_capacity(fixed_dims.len());
    for (j, &d) in fixed_dims.iter().enumerate() {
        let x = fixed_values[j];
        if !(x >= domain.lower()[d] && x <= domain.upper()[d]) {
            return Err(DeferError::OutOfDomain {
                dim: d,
                value: x,
                lo: domain.lower()[d],
                hi: domain.upper()[d],
            });
        }
        cells.push(coord_to_cell(domain.normalize_coord(d, x)));
    }

    let offset = aggregates.log_offset();
    let log_vol_free: f64 = free_dims.iter().map(|&d| domain.side(d).ln()).sum();

    // Shifted conditional weights: f_i * V_free,i per intersecting leaf.
    let mut hits: Vec<(NodeId, f64)> = Vec::new();
    let mut norm = TwoFloat::ZERO;
    for l in tree.leaf_ids() {
        let b = tree.boxx(l);
        let contains = fixed_dims.iter().zip(&cells).all(|(&d, &c)| {
            let (lo, hi) = b.cell_range(d);
            c >= lo && c < hi
        });
        if !contains {
            continue;
        }
        let depth_free: u32 = free_dims.iter().map(|&d| b.depths()[d] as u32).sum();
        let weight = (tree.log_f(l) + offset).exp() * pow3_neg(depth_free);
        hits.push((l, weight));
        norm.add_f64(weight);
    }
    if norm.value() == 0.0 {
        return Err(DeferError::ZeroMeasureConditional);
    }

    let norm_v = norm.value();
    let pieces = hits
        .into_iter()
        .map(|(l, weight)| {
            let b = tree.boxx(l);
            let lo = free_dims
                .iter()
                .map(|&d| domain.denormalize_coord(d, b.lo_norm(d)))
                .collect();
            let hi = free_dims
                .iter()
                .map(|&d| domain.denormalize_coord(d, b.hi_norm(d)))
                .collect();
            let depth_free: u32 = free_dims.iter().map(|&d| b.depths()[d] as u32).sum();
            // density * V_free_orig must sum to 1 across pieces.
            let density = weight / pow3_neg(depth_free) / norm_v / log_vol_free.exp();
            ConditionalPiece {
                leaf: l,
                lo,
                hi,
                density,
            }
        })
        .collect();
    Ok(ConditionalSlice { free_dims, pieces })
}

fn validate_dims(dims: &[usize], dim: usize) -> Result<()> {
    if dims.is_empty() {
        return Err(DeferError::InvalidConfig("need at least one dimension".into()));
    }
    let mut seen = vec![false; dim];
    for &d in dims {
        if d >= dim {
            return Err(DeferError::InvalidConfig(format!(
                "dimension {d} out of range for a {dim}-dimensional tree"
            )));
        }
        if seen[d] {
            return Err(DeferError::InvalidConfig(format!("dimension {d} repeated")));
        }
        seen[d] = true;
    }
    Ok(())
}
