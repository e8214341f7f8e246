//! Exact ternary-rational box geometry.
//!
//! Every partition is a product of intervals `[n/3^k, (n+1)/3^k)` stored as
//! integer `(numerator, depth)` pairs per dimension. All tiling, disjointness,
//! and point-location decisions reduce to integer comparisons on a fixed
//! `3^MAX_DEPTH` grid, so the geometry carries no floating-point error.
//! Floating-point coordinates are derived views used for evaluation, sampling,
//! and export.

use crate::error::{DeferError, Result};

/// Per-dimension trisection depth cap. `3^-40` is far below f64 resolution at
/// unit scale, and `3^40` still fits in a u64.
pub const MAX_DEPTH: u8 = 40;

/// Powers of three up to `3^MAX_DEPTH`, exact in u64.
static POW3: [u64; MAX_DEPTH as usize + 1] = {
    let mut t = [0u64; MAX_DEPTH as usize + 1];
    t[0] = 1;
    let mut i = 1;
    while i <= MAX_DEPTH as usize {
        t[i] = t[i - 1] * 3;
        i += 1;
    }
    t
};

/// Number of grid cells per dimension at full depth.
pub const GRID: u64 = POW3[MAX_DEPTH as usize];

#[inline]
pub fn pow3(k: u8) -> u64 {
    POW3[k as usize]
}

#[inline]
fn pow3_f64(k: u8) -> f64 {
    POW3[k as usize] as f64
}

/// `3^-s` as f64, a pure function of the total depth `s`.
#[inline]
pub fn pow3_neg(s: u32) -> f64 {
    3f64.powi(-(s as i32))
}

/// Quantize a normalized coordinate onto the full-depth grid. The top face
/// (`u = 1`) lands in the last cell, which closes the domain's upper boundary.
#[inline]
pub fn coord_to_cell(u: f64) -> u64 {
    if u <= 0.0 {
        return 0;
    }
    if u >= 1.0 {
        return GRID - 1;
    }
    // `as` saturates, so rounding in the product still clamps safely.
    ((u * (GRID as f64)) as u64).min(GRID - 1)
}

pub fn point_to_cells(u: &[f64]) -> Vec<u64> {
    u.iter().map(|&c| coord_to_cell(c)).collect()
}

/// An axis-aligned box with exact ternary-rational bounds
/// `prod_i [n_i/3^{k_i}, (n_i+1)/3^{k_i})`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TernaryBox {
    nums: Box<[u64]>,
    depths: Box<[u8]>,
}

/// One child produced by a trisection.
#[derive(Debug, Clone)]
pub struct TrisectChild {
    pub boxx: TernaryBox,
    /// Centroid in normalized coordinates.
    pub centroid: Vec<f64>,
    /// True for the final middle box (every ranked dimension at depth + 1).
    pub is_center: bool,
}

impl TernaryBox {
    /// The unit cube: all numerators 0, all depths 0.
    pub fn root(dim: usize) -> Self {
        TernaryBox {
            nums: vec![0; dim].into_boxed_slice(),
            depths: vec![0; dim].into_boxed_slice(),
        }
    }

    pub fn from_parts(nums: Vec<u64>, depths: Vec<u8>) -> Result<Self> {
        if nums.len() != depths.len() || nums.is_empty() {
            return Err(DeferError::Invariant(
                "box numerators and depths must have equal non-zero length".into(),
            ));
        }
        for (i, (&n, &k)) in nums.iter().zip(&depths).enumerate() {
            if k > MAX_DEPTH {
                return Err(DeferError::DepthLimit { dim: i, max: MAX_DEPTH });
            }
            if n >= pow3(k) {
                return Err(DeferError::Invariant(format!(
                    "numerator {n} out of range for depth {k} in dimension {i}"
                )));
            }
        }
        Ok(TernaryBox {
            nums: nums.into_boxed_slice(),
            depths: depths.into_boxed_slice(),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.nums.len()
    }

    #[inline]
    pub fn depths(&self) -> &[u8] {
        &self.depths
    }

    #[inline]
    pub fn numerators(&self) -> &[u64] {
        &self.nums
    }

    #[inline]
    pub fn depth_sum(&self) -> u32 {
        self.depths.iter().map(|&k| k as u32).sum()
    }

    /// Exact normalized volume `3^-(sum of depths)`.
    #[inline]
    pub fn volume(&self) -> f64 {
        pow3_neg(self.depth_sum())
    }

    /// Normalized diameter `sqrt(sum_i 3^(-2 k_i))`.
    pub fn diameter(&self) -> f64 {
        diameter_of_depths(&self.depths)
    }

    /// Lower bound of dimension `d` as a normalized float.
    #[inline]
    pub fn lo_norm(&self, d: usize) -> f64 {
        self.nums[d] as f64 / pow3_f64(self.depths[d])
    }

    /// Upper bound of dimension `d` as a normalized float.
    #[inline]
    pub fn hi_norm(&self, d: usize) -> f64 {
        (self.nums[d] + 1) as f64 / pow3_f64(self.depths[d])
    }

    /// Exact centroid coordinate `(2n+1) / (2*3^k)` of dimension `d`.
    #[inline]
    pub fn centroid_norm(&self, d: usize) -> f64 {
        centroid_coord(self.nums[d], self.depths[d])
    }

    pub fn centroid(&self) -> Vec<f64> {
        (0..self.dim()).map(|d| self.centroid_norm(d)).collect()
    }

    /// Side length of dimension `d` (normalized).
    #[inline]
    pub fn side_norm(&self, d: usize) -> f64 {
        pow3_neg(self.depths[d] as u32)
    }

    /// Half-open cell range `[start, end)` covered in dimension `d` on the
    /// full-depth grid.
    #[inline]
    pub fn cell_range(&self, d: usize) -> (u64, u64) {
        let scale = pow3(MAX_DEPTH - self.depths[d]);
        let start = self.nums[d] * scale;
        (start, start + scale)
    }

    /// Exact containment of a grid-quantized point.
    pub fn contains_cells(&self, cells: &[u64]) -> bool {
        debug_assert_eq!(cells.len(), self.dim());
        (0..self.dim()).all(|d| {
            let (lo, hi) = self.cell_range(d);
            cells[d] >= lo && cells[d] < hi
        })
    }

    /// Exact disjointness test between two boxes of the same dimensionality.
    pub fn disjoint(&self, other: &TernaryBox) -> bool {
        (0..self.dim()).any(|d| {
            let (alo, ahi) = self.cell_range(d);
            let (blo, bhi) = other.cell_range(d);
            ahi <= blo || bhi <= alo
        })
    }

    /// Trisect along `ranked_dims` (most significant first), producing
    /// `2m + 1` children that tile this box exactly. For the j-th ranked
    /// dimension the two outer thirds of the current middle box become
    /// children spanning every not-yet-divided dimension fully; the final
    /// middle box carries the center flag. Centroids depend only on the set
    /// of divided dimensions, not on their order.
    pub fn trisect(&self, ranked_dims: &[usize]) -> Result<Vec<TrisectChild>> {
        if ranked_dims.is_empty() {
            return Err(DeferError::Invariant("trisect needs at least one dimension".into()));
        }
        let dim = self.dim();
        let mut seen = vec![false; dim];
        for &d in ranked_dims {
            if d >= dim {
                return Err(DeferError::Invariant(format!(
                    "trisect dimension {d} out of range for {dim}-dimensional box"
                )));
            }
            if seen[d] {
                return Err(DeferError::Invariant(format!("trisect dimension {d} repeated")));
            }
            seen[d] = true;
            if self.depths[d] >= MAX_DEPTH {
                return Err(DeferError::DepthLimit { dim: d, max: MAX_DEPTH });
            }
        }

        let mut children = Vec::with_capacity(2 * ranked_dims.len() + 1);
        // The running middle box, narrowed one ranked dimension at a time.
        let mut middle = self.clone();
        for &d in ranked_dims {
            let n3 = 3 * middle.nums[d];
            let k1 = middle.depths[d] + 1;
            for outer in [n3, n3 + 2] {
                let mut child = middle.clone();
                child.nums[d] = outer;
                child.depths[d] = k1;
                let centroid = child.centroid();
                children.push(TrisectChild {
                    boxx: child,
                    centroid,
                    is_center: false,
                });
            }
            middle.nums[d] = n3 + 1;
            middle.depths[d] = k1;
        }
        let centroid = middle.centroid();
        children.push(TrisectChild {
            boxx: middle,
            centroid,
            is_center: true,
        });
        Ok(children)
    }
}

/// Centroid coordinate `(2n+1) / (2*3^k)` of the interval `[n/3^k, (n+1)/3^k)`.
#[inline]
pub fn centroid_coord(num: u64, depth: u8) -> f64 {
    (2 * num as u128 + 1) as f64 / (2.0 * pow3_f64(depth))
}

/// Diameter from a depth vector alone.
pub fn diameter_of_depths(depths: &[u8]) -> f64 {
    depths
        .iter()
        .map(|&k| {
            let s = pow3_neg(k as u32);
            s * s
        })
        .sum::<f64>()
        .sqrt()
}

/// Exactly verify that a multiset of box volumes `3^-s` sums to 1, given the
/// per-box total depths. Works by carrying counts from the deepest level
/// upward in base 3; no big-integer arithmetic needed.
pub fn volumes_tile_unit<I: IntoIterator<Item = u32>>(depth_sums: I) -> bool {
    let mut counts: Vec<u64> = Vec::new();
    for s in depth_sums {
        let s = s as usize;
        if counts.len() <= s {
            counts.resize(s + 1, 0);
        }
        counts[s] += 1;
    }
    if counts.is_empty() {
        return false;
    }
    for s in (1..counts.len()).rev() {
        if counts[s] % 3 != 0 {
            return false;
        }
        counts[s - 1] += counts[s] / 3;
    }
    counts[0] == 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_box_geometry() {
        let b = TernaryBox::root(2);
        assert_eq!(b.volume(), 1.0);
        assert!((b.diameter() - 2f64.sqrt()).abs() < 1e-15);
        let b10 = TernaryBox::root(10);
        assert!((b10.diameter() - 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn volume_diameter_examples() {
        let b = TernaryBox::from_parts(vec![0, 0], vec![1, 1]).unwrap();
        assert!((b.volume() - 1.0 / 9.0).abs() < 1e-16);
        assert!((b.diameter() - 2f64.sqrt() / 3.0).abs() < 1e-15);

        let b = TernaryBox::from_parts(vec![0, 0], vec![1, 0]).unwrap();
        assert!((b.volume() - 1.0 / 3.0).abs() < 1e-16);
        assert!((b.diameter() - 10f64.sqrt() / 3.0).abs() < 1e-15);

        let b = TernaryBox::root(6);
        assert_eq!(b.volume(), 1.0);
        assert!((b.diameter() - 6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn trisect_unit_square_dim0_then_dim1() {
        // Horizontal then vertical division of the unit square.
        let b = TernaryBox::root(2);
        let kids = b.trisect(&[0, 1]).unwrap();
        assert_eq!(kids.len(), 5);
        let bounds: Vec<[f64; 4]> = kids
            .iter()
            .map(|c| {
                [
                    c.boxx.lo_norm(0),
                    c.boxx.hi_norm(0),
                    c.boxx.lo_norm(1),
                    c.boxx.hi_norm(1),
                ]
            })
            .collect();
        let third = 1.0 / 3.0;
        let two_thirds = 2.0 / 3.0;
        assert_eq!(bounds[0], [0.0, third, 0.0, 1.0]);
        assert_eq!(bounds[1], [two_thirds, 1.0, 0.0, 1.0]);
        assert_eq!(bounds[2], [third, two_thirds, 0.0, third]);
        assert_eq!(bounds[3], [third, two_thirds, two_thirds, 1.0]);
        assert_eq!(bounds[4], [third, two_thirds, third, two_thirds]);
        assert!(kids[4].is_center);
        assert!(kids[..4].iter().all(|c| !c.is_center));
    }

    #[test]
    fn trisect_centroids_are_order_invariant() {
        let b = TernaryBox::root(2);
        let a = b.trisect(&[0, 1]).unwrap();
        let c = b.trisect(&[1, 0]).unwrap();
        let mut ca: Vec<Vec<u64>> = a
            .iter()
            .map(|k| k.centroid.iter().map(|x| x.to_bits() as u64).collect())
            .collect();
        let mut cc: Vec<Vec<u64>> = c
            .iter()
            .map(|k| k.centroid.iter().map(|x| x.to_bits() as u64).collect())
            .collect();
        ca.sort();
        cc.sort();
        assert_eq!(ca, cc);
        // Outer box shapes do depend on order.
        assert_eq!(c[0].boxx.lo_norm(0), 0.0);
        assert_eq!(c[0].boxx.hi_norm(0), 1.0);
        assert_eq!(c[0].boxx.hi_norm(1), 1.0 / 3.0);
    }

    #[test]
    fn trisect_1d() {
        let b = TernaryBox::root(1);
        let kids = b.trisect(&[0]).unwrap();
        assert_eq!(kids.len(), 3);
        let spans: Vec<(f64, f64)> =
            kids.iter().map(|c| (c.boxx.lo_norm(0), c.boxx.hi_norm(0))).collect();
        assert_eq!(spans[0], (0.0, 1.0 / 3.0));
        assert_eq!(spans[1], (2.0 / 3.0, 1.0));
        assert_eq!(spans[2], (1.0 / 3.0, 2.0 / 3.0));
        assert!(kids[2].is_center);
    }

    #[test]
    fn trisect_children_tile_parent() {
        let b = TernaryBox::from_parts(vec![1, 2, 0], vec![1, 2, 0]).unwrap();
        let kids = b.trisect(&[2, 0]).unwrap();
        assert_eq!(kids.len(), 5);
        // Volumes sum back to the parent volume.
        let vsum: f64 = kids.iter().map(|c| c.boxx.volume()).sum();
        assert!((vsum - b.volume()).abs() < 1e-16 * b.volume().max(1.0));
        // Pairwise disjoint, each inside the parent.
        for i in 0..kids.len() {
            for j in (i + 1)..kids.len() {
                assert!(kids[i].boxx.disjoint(&kids[j].boxx));
            }
            for d in 0..3 {
                let (plo, phi) = b.cell_range(d);
                let (clo, chi) = kids[i].boxx.cell_range(d);
                assert!(clo >= plo && chi <= phi);
            }
        }
    }

    #[test]
    fn depth_limit_is_enforced() {
        let b = TernaryBox::from_parts(vec![0], vec![MAX_DEPTH]).unwrap();
        assert!(matches!(
            b.trisect(&[0]),
            Err(DeferError::DepthLimit { .. })
        ));
    }

    #[test]
    fn cells_quantization_boundaries() {
        assert_eq!(coord_to_cell(0.0), 0);
        assert_eq!(coord_to_cell(1.0), GRID - 1);
        assert_eq!(coord_to_cell(-0.1), 0);
        let b = TernaryBox::root(1);
        assert!(b.contains_cells(&[coord_to_cell(0.999999)]));
    }

    #[test]
    fn tiling_checker() {
        // Root alone tiles.
        assert!(volumes_tile_unit([0u32]));
        // 1D trisection: three boxes of depth 1.
        assert!(volumes_tile_unit([1u32, 1, 1]));
        // 2D division into 5: depths sums 1,1,2,2,2.
        assert!(volumes_tile_unit([1u32, 1, 2, 2, 2]));
        // Missing a box fails.
        assert!(!volumes_tile_unit([1u32, 1, 2, 2]));
        assert!(!volumes_tile_unit([1u32, 1, 1, 1]));
    }
}
