//! Upper-right convex hull chain over (V*d/2, V*f) points.
//!
//! A leaf maximizes the upper-bound mass `y + K*x` for some rate constant
//! `K > 0` exactly when its point lies on the chain from the maximum-ordinate
//! point to the maximum-abscissa point of the convex hull. Members carry the
//! largest admissible `K` (the slope magnitude to their right neighbour);
//! the right-most member's bound is positively infinite, so it always clears
//! any finite mass threshold and is always divided.

use crate::tree::NodeId;

/// A hull candidate: one leaf's (abscissa, ordinate) coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HullPoint {
    pub node_id: NodeId,
    /// `V * d / 2`; strictly positive.
    pub x: f64,
    /// `V * f(centroid)` in offset-shifted units; non-negative.
    pub y: f64,
}

/// A chain member together with its upper bound on the rate constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HullMember {
    pub point: HullPoint,
    /// `(y_i - y_{i+1}) / (x_{i+1} - x_i)` toward the right neighbour;
    /// `f64::INFINITY` for the right-most member.
    pub k_upper: f64,
}

#[inline]
fn cross(o: &HullPoint, a: &HullPoint, b: &HullPoint) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Build the upper-right chain from candidates sorted by ascending `x`
/// (one per key; equal abscissas are merged here keeping the max ordinate).
/// Collinear chain points are retained, so no leaf a rate constant would
/// select is dropped.
pub fn urqh(candidates: &[HullPoint]) -> Vec<HullMember> {
    if candidates.is_empty() {
        return Vec::new();
    }
    debug_assert!(candidates.windows(2).all(|w| w[0].x <= w[1].x));

    // Merge numerically equal abscissas: max ordinate wins, ties by lower id.
    let mut merged: Vec<HullPoint> = Vec::with_capacity(candidates.len());
    for &p in candidates {
        match merged.last_mut() {
            Some(last) if last.x == p.x => {
                if p.y > last.y || (p.y == last.y && p.node_id < last.node_id) {
                    *last = p;
                }
            }
            _ => merged.push(p),
        }
    }

    // Chain start: maximum ordinate; among ties the maximum abscissa, since
    // for any K > 0 the larger-x point dominates its equal-y peers.
    let start = merged
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.y.total_cmp(&b.y).then_with(|| a.x.total_cmp(&b.x)))
        .map(|(i, _)| i)
        .expect("merged candidates non-empty");

    let mut chain: Vec<HullPoint> = Vec::with_capacity(merged.len() - start);
    for &p in &merged[start..] {
        // Pop while the previous point falls strictly below the new segment.
        while chain.len() >= 2 {
            let o = chain[chain.len() - 2];
            let a = chain[chain.len() - 1];
            if cross(&o, &a, &p) > 0.0 {
                chain.pop();
            } else {
                break;
            }
        }
        chain.push(p);
    }

    (0..chain.len())
        .map(|i| {
            let k_upper = if i + 1 < chain.len() {
                (chain[i].y - chain[i + 1].y) / (chain[i + 1].x - chain[i].x)
            } else {
                f64::INFINITY
            };
            HullMember {
                point: chain[i],
                k_upper,
            }
        })
        .collect()
}

/// Apply the mass threshold: keep members whose upper-bound mass
/// `y + K_upper * x` reaches `beta * z_hat / (n_t + 1)`. The right-most
/// member's infinite bound always passes, so the result is never empty.
pub fn cr1_filter(members: &[HullMember], z_hat: f64, n_t: usize, beta: f64) -> Vec<NodeId> {
    let threshold = beta * z_hat / (n_t as f64 + 1.0);
    members
        .iter()
        .filter(|m| m.point.y + m.k_upper * m.point.x >= threshold)
        .map(|m| m.point.node_id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(id: NodeId, x: f64, y: f64) -> HullPoint {
        HullPoint { node_id: id, x, y }
    }

    #[test]
    fn two_points_both_on_chain() {
        let members = urqh(&[pt(0, 1.0, 3.0), pt(1, 2.0, 1.0)]);
        assert_eq!(members.len(), 2);
        assert_eq!(members[0].point.node_id, 0);
        assert_eq!(members[0].k_upper, 2.0);
        assert_eq!(members[1].point.node_id, 1);
        assert_eq!(members[1].k_upper, f64::INFINITY);
    }

    #[test]
    fn sagging_middle_point_is_dropped() {
        // (1.5, 1.4) lies below the segment (1,3)-(2,1): no K > 0 makes it
        // the argmax of y + K*x (interpolation at x=1.5 gives 2.0 > 1.4).
        let members = urqh(&[pt(0, 1.0, 3.0), pt(1, 1.5, 1.4), pt(2, 2.0, 1.0)]);
        let ids: Vec<NodeId> = members.iter().map(|m| m.point.node_id).collect();
        assert_eq!(ids, vec![0, 2]);
    }

    #[test]
    fn collinear_points_are_retained() {
        let members = urqh(&[pt(0, 1.0, 3.0), pt(1, 1.5, 2.0), pt(2, 2.0, 1.0)]);
        let ids: Vec<NodeId> = members.iter().map(|m| m.point.node_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(members[0].k_upper, 2.0);
        assert_eq!(members[1].k_upper, 2.0);
    }

    #[test]
    fn single_candidate_gets_infinite_bound() {
        let members = urqh(&[pt(7, 0.5, 0.0)]);
        assert_eq!(members.len(), 1);
        assert_eq!(members[0].k_upper, f64::INFINITY);
    }

    #[test]
    fn points_left_of_the_max_ordinate_are_excluded() {
        let members = urqh(&[pt(0, 0.5, 1.0), pt(1, 1.0, 5.0), pt(2, 2.0, 2.0)]);
        let ids: Vec<NodeId> = members.iter().map(|m| m.point.node_id).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn equal_abscissas_are_merged_keeping_max_ordinate() {
        let members = urqh(&[pt(0, 1.0, 2.0), pt(1, 1.0, 3.0), pt(2, 2.0, 1.0)]);
        let ids: Vec<NodeId> = members.iter().map(|m| m.point.node_id).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn chain_is_monotone() {
        let pts = vec![
            pt(0, 0.1, 0.2),
            pt(1, 0.2, 0.9),
            pt(2, 0.3, 0.8),
            pt(3, 0.5, 0.85),
            pt(4, 0.9, 0.3),
            pt(5, 1.5, 0.1),
        ];
        let members = urqh(&pts);
        for w in members.windows(2) {
            assert!(w[0].point.x < w[1].point.x);
            assert!(w[0].point.y > w[1].point.y);
            assert!(w[0].k_upper <= w[1].k_upper + 1e-12 || w[1].k_upper.is_infinite());
        }
    }

    #[test]
    fn rightmost_always_passes_any_finite_threshold() {
        let members = urqh(&[pt(0, 1.0, 0.0), pt(1, 2.0, 0.0)]);
        let selected = cr1_filter(&members, 0.0, 1, 1.0);
        assert!(selected.contains(&1));
        let selected = cr1_filter(&members, 1e300, 5, 100.0);
        assert!(selected.contains(&1));
    }
}
