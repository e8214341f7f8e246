//! Division criteria: which leaves to divide at each iteration.
//!
//! CR1 selects every leaf whose (V*d/2, V*f) point sits on the upper-right
//! hull chain and clears the mass threshold. CR2 probes the affine hulls
//! spanned by high-mass centroids; CR3 probes balls around them. A leaf is
//! divided if any criterion selects it; the right-most hull member always
//! qualifies, which drives the asymptotic refinement of the whole domain.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DeferError, Result};
use crate::hull::{cr1_filter, urqh};
use crate::index::{LeafIndex, TopMasses};
use crate::rng::{stream_rng, StreamTag};
use crate::tree::{NodeId, Tree};

/// Relative singular-value cutoff below which a centroid set is treated as
/// affinely degenerate and its subspace skipped.
const DEGENERACY_RTOL: f64 = 1e-9;

/// Tunable criterion parameters with the standard defaults.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CriteriaConfig {
    /// CR1 mass-threshold factor.
    pub beta: f64,
    /// High-mass outlier factor.
    pub alpha: f64,
    /// Ball diameter factor (must exceed 1 so the ball leaves the partition).
    pub phi: f64,
    /// Cap on the high-mass set size; `None` means `min(5, D)`.
    pub big_m: Option<usize>,
    /// Random representer points per affine subspace.
    pub l: usize,
    /// Ball representer points per high-mass partition; `None` means `D`.
    pub b: Option<usize>,
}

impl Default for CriteriaConfig {
    fn default() -> Self {
        CriteriaConfig {
            beta: 1.0,
            alpha: 20.0,
            phi: 1.2,
            big_m: None,
            l: 1,
            b: None,
        }
    }
}

impl CriteriaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(DeferError::InvalidConfig(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.alpha > 0.0) {
            return Err(DeferError::InvalidConfig(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.phi > 1.0) {
            return Err(DeferError::InvalidConfig(format!("phi must be > 1, got {}", self.phi)));
        }
        if let Some(m) = self.big_m {
            if m < 1 {
                return Err(DeferError::InvalidConfig("M must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn effective_m(&self, dim: usize) -> usize {
        self.big_m.unwrap_or_else(|| 5.min(dim.max(1)))
    }

    pub fn effective_b(&self, dim: usize) -> usize {
        self.b.unwrap_or(dim)
    }
}

/// The current high-relative-mass leaves seeding CR2 and CR3.
#[derive(Debug, Clone, Default)]
pub struct HighMassSet {
    /// `(node id, mass)`, descending mass, ties won by the lower id.
    pub members: Vec<(NodeId, f64)>,
}

impl HighMassSet {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }
}

/// Select the high-mass set from mass candidates (any superset of the top-M
/// works; typically exactly the top-M). A leaf joins when it is among the M
/// highest masses and its mass is at least `alpha * z_hat / (n_t + 1)`;
/// fewer than two qualifiers yield the empty set. Zero-mass leaves never
/// qualify: with nothing observed there is no outlier to exploit.
pub fn high_mass_set(
    candidates: &[(NodeId, f64)],
    z_hat: f64,
    n_t: usize,
    m: usize,
    alpha: f64,
) -> HighMassSet {
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    sorted.truncate(m);
    let threshold = alpha * z_hat / (n_t as f64 + 1.0);
    let members: Vec<(NodeId, f64)> = sorted
        .into_iter()
        .filter(|&(_, mass)| mass > 0.0 && mass >= threshold)
        .collect();
    if members.len() < 2 {
        HighMassSet::default()
    } else {
        HighMassSet { members }
    }
}

/// True when the centroid set spans an affine subspace of dimension less
/// than `points.len() - 1` (the generalized collinearity skip).
fn affinely_degenerate(points: &[&[f64]], dim: usize) -> bool {
    let size = points.len();
    if size < 2 {
        return true;
    }
    if size - 1 > dim {
        return true;
    }
    let mut mean = vec![0.0; dim];
    for p in points {
        for d in 0..dim {
            mean[d] += p[d];
        }
    }
    for v in &mut mean {
        *v /= size as f64;
    }
    let centered = DMatrix::from_fn(size, dim, |r, c| points[r][c] - mean[c]);
    let sv = centered.singular_values();
    let largest = sv[0];
    if largest <= 0.0 {
        return true;
    }
    // Need rank size-1; singular values are sorted descending.
    sv[size - 2] < DEGENERACY_RTOL * largest
}

/// Orthonormal basis of the direction space spanned by `points`, as columns.
fn affine_basis(points: &[&[f64]], dim: usize) -> DMatrix<f64> {
    let cols = points.len() - 1;
    let e = DMatrix::from_fn(dim, cols, |r, c| points[c + 1][r] - points[0][r]);
    let qr = e.qr();
    let q = qr.q();
    q.columns(0, cols).into_owned()
}

fn inside_unit_cube(p: &[f64]) -> bool {
    p.iter().all(|&v| (0.0..=1.0).contains(&v))
}

/// Representer points for CR2: for every affinely non-degenerate subset of
/// the high-mass centroids (size 2 up to |H|), the subset mean plus `l`
/// uniform cube samples orthogonally projected onto the subset's affine
/// hull. Points outside the closed cube are discarded, and duplicates
/// (e.g. coinciding means of different subsets) are removed.
pub fn cr2_representers<R: Rng>(
    centroids: &[Vec<f64>],
    l: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let h = centroids.len();
    if h < 2 {
        return Vec::new();
    }
    let dim = centroids[0].len();
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut seen: BTreeSet<Vec<u64>> = BTreeSet::new();
    let mut push = |p: Vec<f64>, out: &mut Vec<Vec<f64>>| {
        if inside_unit_cube(&p) && seen.insert(p.iter().map(|v| v.to_bits()).collect()) {
            out.push(p);
        }
    };

    for subset in combinations(h) {
        let pts: Vec<&[f64]> = subset.iter().map(|&i| centroids[i].as_slice()).collect();
        if affinely_degenerate(&pts, dim) {
            continue;
        }
        let size = pts.len();
        let mut mean = vec![0.0; dim];
        for p in &pts {
            for d in 0..dim {
                mean[d] += p[d];
            }
        }
        for v in &mut mean {
            *v /= size as f64;
        }
        push(mean.clone(), &mut out);

        if l == 0 {
            continue;
        }
        let basis = affine_basis(&pts, dim);
        for _ in 0..l {
            let u: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            // Orthogonal projection of u onto the affine hull.
            let mut r = mean.clone();
            for c in 0..basis.ncols() {
                let dot: f64 = (0..dim).map(|d| (u[d] - mean[d]) * basis[(d, c)]).sum();
                for d in 0..dim {
                    r[d] += dot * basis[(d, c)];
                }
            }
            push(r, &mut out);
        }
    }
    out
}

/// All index subsets of `{0..n}` with size >= 2, in deterministic order
/// (by size, then lexicographic).
fn combinations(n: usize) -> Vec<Vec<usize>> {
    let mut all = Vec::new();
    for size in 2..=n {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            all.push(idx.clone());
            // Advance to the next lexicographic combination of this size.
            let mut i = size;
            while i > 0 && idx[i - 1] == i - 1 + n - size {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    all
}

/// Representer points for CR3: for each high-mass member, `b` points sampled
/// uniformly inside the ball of diameter `phi * d` around its centroid
/// (normalized Gaussian direction, radius scaled by u^(1/D)). Points outside
/// the closed cube are discarded.
pub fn cr3_representers<R: Rng>(
    members: &[(Vec<f64>, f64)],
    phi: f64,
    b: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (centroid, diameter) in members {
        let dim = centroid.len();
        let radius = phi * diameter / 2.0;
        for _ in 0..b {
            let dir: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-300 {
                continue;
            }
            let u: f64 = rng.random();
            let r = radius * u.powf(1.0 / dim as f64);
            let p: Vec<f64> = (0..dim).map(|d| centroid[d] + r * dir[d] / norm).collect();
            if inside_unit_cube(&p) {
                out.push(p);
            }
        }
    }
    out
}

/// Full per-iteration selection: CR1 hull members over threshold, plus the
/// leaves containing each CR2/CR3 representer point. Returns deduplicated
/// ids in ascending order; never empty.
pub fn select_to_divide(
    tree: &Tree,
    index: &mut LeafIndex,
    top_masses: &mut TopMasses,
    z_hat: f64,
    cfg: &CriteriaConfig,
    seed: u64,
    iteration: u64,
) -> Vec<NodeId> {
    let n_t = tree.leaf_count();
    let mut selected: BTreeSet<NodeId> = BTreeSet::new();

    let candidates = index.hull_candidates();
    let members = urqh(&candidates);
    selected.extend(cr1_filter(&members, z_hat, n_t, cfg.beta));

    let m = cfg.effective_m(tree.dim());
    let top = top_masses.top(m, |id| tree.is_leaf(id));
    let h = high_mass_set(&top, z_hat, n_t, m, cfg.alpha);
    if !h.is_empty() {
        let centroids: Vec<Vec<f64>> = h.members.iter().map(|&(id, _)| tree.boxx(id).centroid()).collect();

        let mut rng2 = stream_rng(seed, iteration, StreamTag::Cr2);
        for p in cr2_representers(&centroids, cfg.l, &mut rng2) {
            selected.insert(tree.locate_normalized(&p));
        }

        let with_diameters: Vec<(Vec<f64>, f64)> = h
            .members
            .iter()
            .zip(&centroids)
            .map(|(&(id, _), c)| (c.clone(), tree.boxx(id).diameter()))
            .collect();
        let mut rng3 = stream_rng(seed, iteration, StreamTag::Cr3);
        for p in cr3_representers(&with_diameters, cfg.phi, cfg.effective_b(tree.dim()), &mut rng3) {
            selected.insert(tree.locate_normalized(&p));
        }
    }

    debug_assert!(!selected.is_empty(), "CR1 always selects the right-most hull member");
    selected.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn high_mass_examples() {
        // Threshold 20*193/6 = 643.3 dwarfs every mass: empty.
        let h = high_mass_set(&[(0, 100.0), (1, 90.0), (2, 1.0), (3, 1.0), (4, 1.0)], 193.0, 5, 2, 20.0);
        assert!(h.is_empty());

        // alpha = 20: threshold 5440, empty; alpha = 2: threshold 544.
        let masses = [(0, 1000.0), (1, 900.0), (2, 1.0), (3, 1.0), (4, 1.0), (5, 1.0)];
        assert!(high_mass_set(&masses, 1904.0, 6, 2, 20.0).is_empty());
        let h = high_mass_set(&masses, 1904.0, 6, 2, 2.0);
        assert_eq!(h.members, vec![(0, 1000.0), (1, 900.0)]);

        // All masses equal: nobody is an outlier at alpha = 20.
        let equal = [(0, 2.0), (1, 2.0), (2, 2.0), (3, 2.0)];
        assert!(high_mass_set(&equal, 8.0, 4, 3, 20.0).is_empty());
    }

    #[test]
    fn high_mass_single_qualifier_yields_empty() {
        let h = high_mass_set(&[(0, 100.0), (1, 0.1)], 100.1, 2, 2, 1.0);
        assert!(h.is_empty());
    }

    #[test]
    fn high_mass_tie_at_threshold_prefers_lower_id() {
        let h = high_mass_set(&[(7, 5.0), (3, 5.0), (1, 5.0)], 15.0, 3, 2, 0.1);
        assert_eq!(h.members, vec![(1, 5.0), (3, 5.0)]);
    }

    #[test]
    fn combinations_cover_all_subset_sizes() {
        let c = combinations(3);
        assert_eq!(
            c,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![1, 2],
                vec![0, 1, 2],
            ]
        );
        let c4 = combinations(4);
        assert_eq!(c4.len(), 6 + 4 + 1);
    }

    #[test]
    fn cr2_midpoint_of_two_centroids() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = vec![0.25, 0.25];
        let b = vec![0.75, 0.75];
        let pts = cr2_representers(&[a, b], 0, &mut rng);
        assert_eq!(pts, vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn cr2_collinear_triple_is_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let centroids = vec![vec![0.2, 0.2], vec![0.5, 0.5], vec![0.8, 0.8]];
        let pts = cr2_representers(&centroids, 0, &mut rng);
        // Only the three pairwise midpoints survive; the size-3 subset is
        // degenerate. The midpoint of the outer pair coincides with a
        // centroid-pair mean and dedup keeps one copy.
        assert_eq!(pts.len(), 3);
        for p in &pts {
            assert!((p[0] - p[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn cr2_random_points_lie_on_the_affine_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let centroids = vec![
            vec![0.2, 0.3, 0.4, 0.5],
            vec![0.6, 0.5, 0.4, 0.3],
            vec![0.5, 0.5, 0.6, 0.6],
        ];
        let pts = cr2_representers(&centroids, 4, &mut rng);
        assert!(!pts.is_empty());
        for p in &pts {
            // Residual against an independent projection: solve for the
            // closest point on each candidate hull and take the best.
            let mut best = f64::INFINITY;
            for subset in combinations(3) {
                let sel: Vec<&[f64]> = subset.iter().map(|&i| centroids[i].as_slice()).collect();
                if affinely_degenerate(&sel, 4) {
                    continue;
                }
                let basis = affine_basis(&sel, 4);
                let anchor = sel[0];
                let mut proj: Vec<f64> = anchor.to_vec();
                for c in 0..basis.ncols() {
                    let dot: f64 = (0..4).map(|d| (p[d] - anchor[d]) * basis[(d, c)]).sum();
                    for d in 0..4 {
                        proj[d] += dot * basis[(d, c)];
                    }
                }
                let resid: f64 = (0..4).map(|d| (p[d] - proj[d]).powi(2)).sum::<f64>().sqrt();
                best = best.min(resid);
            }
            assert!(best <= 1e-12, "representer point off every hull by {best}");
        }
    }

    #[test]
    fn cr3_points_stay_inside_their_balls() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let members = vec![(vec![0.5, 0.5, 0.5], 0.2), (vec![0.3, 0.7, 0.5], 0.05)];
        let pts = cr3_representers(&members, 1.2, 50, &mut rng);
        for p in &pts {
            let within = members.iter().any(|(c, d)| {
                let dist: f64 = c.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                dist <= 1.2 * d / 2.0 + 1e-12
            });
            assert!(within);
            assert!(inside_unit_cube(p));
        }
    }

    #[test]
    fn cr3_1d_mean_matches_interval_midpoint() {
        // Uniform on (c - r, c + r) entirely inside the cube: the sample
        // mean over 1e5 draws stays within 3 sigma of c.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = 0.5;
        let d = 0.4;
        let members = vec![(vec![c], d)];
        let pts = cr3_representers(&members, 1.2, 100_000, &mut rng);
        let n = pts.len() as f64;
        let mean: f64 = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let r = 1.2 * d / 2.0;
        let sigma = r / 3f64.sqrt() / n.sqrt();
        assert!((mean - c).abs() < 3.0 * sigma, "mean {mean} vs {c}");
    }

    #[test]
    fn cr3_3d_inner_half_radius_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = vec![0.5, 0.5, 0.5];
        let d = 0.3;
        let members = vec![(c.clone(), d)];
        let n = 100_000;
        let pts = cr3_representers(&members, 1.2, n, &mut rng);
        assert_eq!(pts.len(), n); // ball fully inside the cube
        let r = 1.2 * d / 2.0;
        let inner = pts
            .iter()
            .filter(|p| {
                let dist: f64 = c.iter().zip(p.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                dist <= r / 2.0
            })
            .count() as f64;
        let frac = inner / n as f64;
        let expect = 0.125;
        let sigma = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!((frac - expect).abs() < 3.0 * sigma, "fraction {frac}");
    }
}
