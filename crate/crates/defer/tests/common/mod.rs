//! Shared oracle helpers for integration tests. Everything here is an
//! independent code path from the library implementation it checks.

#![allow(dead_code)]

use defer::densities::BuiltTarget;
use defer::domain::DomainSpec;
use defer::engine::{run, EngineConfig, RunOutput};
use defer::geom::volumes_tile_unit;
use defer::hull::HullPoint;
use defer::index::DepthKey;
use defer::tree::Tree;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

/// Midpoint-rule log evidence of a built-in target on the unit cube:
/// `log( (1/n^D) * sum f(midpoints) )`, computed with compensated summation
/// of shifted exponentials.
pub fn grid_log_evidence(target: &BuiltTarget, n_per_dim: usize) -> f64 {
    let dim = target.spec.dim();
    let (sum, _, shift, count) = grid_scan(target, n_per_dim);
    debug_assert_eq!(count, n_per_dim.pow(dim as u32));
    sum.ln() + shift - (count as f64).ln()
}

/// Differential entropy of the normalized midpoint-rule grid approximation:
/// the grid plays the role of an equal-volume piecewise-constant density.
pub fn grid_entropy(target: &BuiltTarget, n_per_dim: usize) -> f64 {
    let (sum, weighted, _shift, count) = grid_scan(target, n_per_dim);
    // H = ln Z_grid - (1/Z) sum p ln f, with cell volume 1/count.
    let z = sum / count as f64;
    let mean_logf_weighted = weighted / count as f64;
    // weighted holds sum exp(lf - shift) * (lf - shift); shifts cancel in
    // H = ln z + ln vol_cell ... - E[ln f]; assemble in shifted units.
    z.ln() - mean_logf_weighted / z
}

/// One pass over the grid: returns (sum of exp(lf - shift),
/// sum of exp(lf - shift) * (lf - shift), shift, cell count).
fn grid_scan(target: &BuiltTarget, n_per_dim: usize) -> (f64, f64, f64, usize) {
    let dim = target.spec.dim();
    let count = n_per_dim.pow(dim as u32);
    // First pass over a coarse subsample to pick a stable shift.
    let mut shift = f64::NEG_INFINITY;
    let coarse = 16.min(n_per_dim);
    let mut p = vec![0.0f64; dim];
    for flat in 0..coarse.pow(dim as u32) {
        let mut rest = flat;
        for d in 0..dim {
            let i = rest % coarse;
            rest /= coarse;
            p[d] = (i as f64 + 0.5) / coarse as f64;
        }
        shift = shift.max(target.log_density(&p));
    }
    if !shift.is_finite() {
        shift = 0.0;
    }

    let mut sum = 0.0f64;
    let mut sum_c = 0.0f64; // Kahan compensation
    let mut weighted = 0.0f64;
    let mut weighted_c = 0.0f64;
    for flat in 0..count {
        let mut rest = flat;
        for d in 0..dim {
            let i = rest % n_per_dim;
            rest /= n_per_dim;
            p[d] = (i as f64 + 0.5) / n_per_dim as f64;
        }
        let lf = target.log_density(&p) - shift;
        let v = lf.exp();
        if v > 0.0 {
            kahan_add(&mut sum, &mut sum_c, v);
            kahan_add(&mut weighted, &mut weighted_c, v * lf);
        }
    }
    (sum, weighted, shift, count)
}

#[inline]
fn kahan_add(sum: &mut f64, comp: &mut f64, v: f64) {
    let y = v - *comp;
    let t = *sum + y;
    *comp = (t - *sum) - y;
    *sum = t;
}

/// Run a built-in target on the unit cube.
pub fn run_target(target: &defer::densities::Target, budget: usize, seed: u64) -> RunOutput {
    let mut built = target.build().expect("valid target");
    let dim = target.dim();
    let mut config = EngineConfig::new(budget, seed);
    config.criteria = defer::CriteriaConfig::default();
    run(&mut built, DomainSpec::unit_cube(dim), config).expect("run succeeds")
}

/// Exact-tiling and accounting checks every finished run must satisfy.
pub fn check_run_geometry(out: &RunOutput) {
    assert_eq!(out.tree.eval_count(), out.tree.leaf_count());
    assert!(volumes_tile_unit(
        out.tree.leaf_ids().map(|l| out.tree.boxx(l).depth_sum())
    ));
}

/// A synthetic leaf for CR1 oracle checks: identity, abscissa, ordinate.
#[derive(Debug, Clone)]
pub struct OracleLeaf {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

fn rat(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite float")
}

/// Literal evaluation of the two-part selection rule over all leaves with
/// exact rational arithmetic. A leaf is selected when some rate constant
/// K > 0 makes its upper-bound mass (a) maximal among all leaves and
/// (b) at least `beta * z / (n + 1)`. Candidate K values are the pairwise
/// slopes between per-key maxima, plus the unbounded limit. Exact (x, y)
/// ties are broken toward the lower id, matching the implementation's
/// documented convention.
pub fn cr1_oracle(leaves: &[OracleLeaf], z: f64, n_t: usize, beta: f64) -> Vec<u32> {
    assert!(!leaves.is_empty());
    let xs: Vec<BigRational> = leaves.iter().map(|l| rat(l.x)).collect();
    let ys: Vec<BigRational> = leaves.iter().map(|l| rat(l.y)).collect();
    let threshold = rat(beta) * rat(z) / BigRational::from_integer(BigInt::from(n_t as i64 + 1));

    // Per unique abscissa, only the max-ordinate leaf can ever be argmax.
    let mut candidates: Vec<usize> = Vec::new();
    for i in 0..leaves.len() {
        let mut dominated = false;
        for j in 0..leaves.len() {
            if i == j {
                continue;
            }
            if xs[j] == xs[i]
                && (ys[j] > ys[i] || (ys[j] == ys[i] && leaves[j].id < leaves[i].id))
            {
                dominated = true;
                break;
            }
        }
        if !dominated {
            candidates.push(i);
        }
    }

    // Candidate rate constants: positive pairwise slopes between candidates.
    let mut slopes: Vec<BigRational> = Vec::new();
    for ai in 0..candidates.len() {
        for bi in (ai + 1)..candidates.len() {
            let (a, b) = (candidates[ai], candidates[bi]);
            if xs[a] == xs[b] {
                continue;
            }
            let slope = (&ys[a] - &ys[b]) / (&xs[b] - &xs[a]);
            if slope.is_positive() {
                slopes.push(slope);
            }
        }
    }

    let mut selected: std::collections::BTreeSet<u32> = Default::default();
    // Finite candidate rate constants: at each, the argmax set is selected
    // when its (shared) upper-bound mass clears the threshold.
    let mut values: Vec<BigRational> = Vec::new();
    for s in &slopes {
        values.clear();
        values.extend(candidates.iter().map(|&i| &ys[i] + s * &xs[i]));
        let max = values.iter().max().expect("non-empty").clone();
        if max >= threshold {
            for (ci, v) in values.iter().enumerate() {
                if *v == max {
                    selected.insert(leaves[candidates[ci]].id);
                }
            }
        }
    }
    // The unbounded limit: the max-abscissa candidate's upper-bound mass
    // grows without bound (x > 0), so it passes any finite threshold.
    let x_max = candidates
        .iter()
        .map(|&i| &xs[i])
        .max()
        .expect("non-empty candidates");
    if !x_max.is_zero() || threshold.is_zero() || threshold.is_negative() {
        let best_y = candidates
            .iter()
            .filter(|&&i| &xs[i] == x_max)
            .map(|&i| &ys[i])
            .max()
            .expect("non-empty");
        for &i in &candidates {
            if &xs[i] == x_max && &ys[i] == best_y {
                selected.insert(leaves[i].id);
            }
        }
    }
    selected.into_iter().collect()
}

/// Implementation-path CR1 selection over the same synthetic leaves:
/// build the index, take per-key candidates, walk the hull, apply the
/// threshold.
pub fn cr1_impl(leaves: &[(u32, Vec<u8>, f64)], z: f64, n_t: usize, beta: f64) -> Vec<u32> {
    let mut index = defer::index::LeafIndex::new();
    for (id, depths, y) in leaves {
        index.insert(*id, depths, *y).unwrap();
    }
    let candidates = index.hull_candidates();
    let members = defer::hull::urqh(&candidates);
    let mut sel = defer::hull::cr1_filter(&members, z, n_t, beta);
    sel.sort_unstable();
    sel
}

/// Abscissa for a synthetic leaf's depth vector (same pure function of the
/// key the index uses).
pub fn abscissa_of(depths: &[u8]) -> f64 {
    DepthKey::new(depths).abscissa()
}

/// Membership test used against `urqh`: exact rational check that some
/// K > 0 makes the point the argmax of y + K x among all points.
pub fn hull_member_oracle(points: &[HullPoint]) -> Vec<u32> {
    let leaves: Vec<OracleLeaf> = points
        .iter()
        .map(|p| OracleLeaf {
            id: p.node_id,
            x: p.x,
            y: p.y,
        })
        .collect();
    // beta = 0 disables the threshold: pure statement-1 membership.
    cr1_oracle(&leaves, 0.0, 1, 0.0)
}

/// Per-leaf (x, y) pairs of a finished run, as synthetic oracle leaves.
pub fn leaves_of_run(tree: &Tree) -> (Vec<OracleLeaf>, Vec<(u32, Vec<u8>, f64)>) {
    let mut oracle = Vec::new();
    let mut raw = Vec::new();
    for id in tree.leaf_ids() {
        let depths = tree.boxx(id).depths().to_vec();
        let x = abscissa_of(&depths);
        let y = tree.mass(id);
        oracle.push(OracleLeaf { id, x, y });
        raw.push((id, depths, y));
    }
    (oracle, raw)
}
