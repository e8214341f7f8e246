//! Search tree over ternary partitions.
//!
//! Nodes live in a contiguous arena addressed by `NodeId`. The tree is
//! append-only: dividing a leaf appends its children as one contiguous block
//! and flips the parent to divided. After construction (or between engine
//! steps) the tree is immutable and all read paths are safe to share across
//! threads.

use crate::domain::DomainSpec;
use crate::error::{DeferError, Result};
use crate::geom::{point_to_cells, TernaryBox};

pub type NodeId = u32;

const NO_CHILD: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    Leaf,
    Divided,
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub boxx: TernaryBox,
    /// Observed log density at the centroid, as returned by the target.
    pub log_f: f64,
    /// Offset-shifted mass `V * exp(log_f + offset)`, fixed at creation.
    pub mass: f64,
    first_child: u32,
    n_children: u8,
}

/// Arena-backed partition tree tiling the normalized unit cube.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
    domain: DomainSpec,
    leaf_count: usize,
    eval_count: usize,
}

impl Tree {
    /// Start a tree from a single root leaf covering the whole domain.
    /// `log_f_at_center` is the observed log density at the domain center and
    /// `mass` its offset-shifted mass.
    pub fn create_root(domain: DomainSpec, log_f_at_center: f64, mass: f64) -> Result<Self> {
        if log_f_at_center.is_nan() {
            return Err(DeferError::Evaluation(
                "density returned NaN at the domain center".into(),
            ));
        }
        let root = Node {
            boxx: TernaryBox::root(domain.dim()),
            log_f: log_f_at_center,
            mass,
            first_child: NO_CHILD,
            n_children: 0,
        };
        Ok(Tree {
            nodes: vec![root],
            domain,
            leaf_count: 1,
            eval_count: 1,
        })
    }

    pub const ROOT: NodeId = 0;

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of live leaves (the current partitioning size `N_t`).
    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    /// Number of density evaluations consumed; equal to `leaf_count` by
    /// construction (each division of m dimensions evaluates 2m centroids and
    /// nets 2m leaves; the root contributes one of each).
    pub fn eval_count(&self) -> usize {
        self.eval_count
    }

    #[inline]
    pub fn boxx(&self, id: NodeId) -> &TernaryBox {
        &self.nodes[id as usize].boxx
    }

    #[inline]
    pub fn log_f(&self, id: NodeId) -> f64 {
        self.nodes[id as usize].log_f
    }

    #[inline]
    pub fn mass(&self, id: NodeId) -> f64 {
        self.nodes[id as usize].mass
    }

    #[inline]
    pub fn status(&self, id: NodeId) -> NodeStatus {
        if self.nodes[id as usize].n_children == 0 {
            NodeStatus::Leaf
        } else {
            NodeStatus::Divided
        }
    }

    #[inline]
    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id as usize].n_children == 0
    }

    /// Child ids of a divided node, in creation order (empty for leaves).
    pub fn children(&self, id: NodeId) -> std::ops::Range<NodeId> {
        let n = &self.nodes[id as usize];
        if n.n_children == 0 {
            0..0
        } else {
            n.first_child..n.first_child + n.n_children as u32
        }
    }

    /// Append a block of children under `parent`, flipping it to divided.
    /// Each entry is `(box, log_f, mass)`. Returns the new ids.
    pub(crate) fn push_children(
        &mut self,
        parent: NodeId,
        children: Vec<(TernaryBox, f64, f64)>,
    ) -> Result<std::ops::Range<NodeId>> {
        if !self.is_leaf(parent) {
            return Err(DeferError::Invariant(format!(
                "node {parent} is already divided"
            )));
        }
        if children.len() < 3 || children.len() % 2 == 0 {
            return Err(DeferError::Invariant(
                "a division must produce 2m+1 children".into(),
            ));
        }
        let first = self.nodes.len() as u32;
        let count = children.len();
        for (boxx, log_f, mass) in children {
            if log_f.is_nan() {
                return Err(DeferError::Evaluation("density returned NaN".into()));
            }
            self.nodes.push(Node {
                boxx,
                log_f,
                mass,
                first_child: NO_CHILD,
                n_children: 0,
            });
        }
        let p = &mut self.nodes[parent as usize];
        p.first_child = first;
        p.n_children = count as u8;
        // Parent leaves the leaf set; 2m of the children carry new evaluations.
        self.leaf_count += count - 1;
        self.eval_count += count - 1;
        Ok(first..first + count as u32)
    }

    /// Ids of all live leaves in creation order.
    pub fn leaf_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as u32).filter(move |&i| self.is_leaf(i))
    }

    /// Locate the leaf containing a point given in original units.
    pub fn locate(&self, point: &[f64]) -> Result<NodeId> {
        let u = self.domain.normalize_point(point)?;
        Ok(self.locate_cells(&point_to_cells(&u)))
    }

    /// Locate the leaf containing a normalized point (caller guarantees it is
    /// inside the closed unit cube).
    pub fn locate_normalized(&self, u: &[f64]) -> NodeId {
        self.locate_cells(&point_to_cells(u))
    }

    /// Locate by exact grid-cell coordinates.
    pub fn locate_cells(&self, cells: &[u64]) -> NodeId {
        let mut id = Tree::ROOT;
        loop {
            let node = &self.nodes[id as usize];
            if node.n_children == 0 {
                return id;
            }
            let range = node.first_child..node.first_child + node.n_children as u32;
            let mut next = None;
            for c in range {
                if self.nodes[c as usize].boxx.contains_cells(cells) {
                    next = Some(c);
                    break;
                }
            }
            // Children tile the parent exactly in integer arithmetic.
            id = next.expect("children tile their parent");
        }
    }

    /// Leaf box corner in original units.
    pub fn box_original(&self, id: NodeId) -> (Vec<f64>, Vec<f64>) {
        let b = self.boxx(id);
        let lo = (0..self.dim())
            .map(|d| self.domain.denormalize_coord(d, b.lo_norm(d)))
            .collect();
        let hi = (0..self.dim())
            .map(|d| self.domain.denormalize_coord(d, b.hi_norm(d)))
            .collect();
        (lo, hi)
    }

    /// Leaf centroid in original units.
    pub fn centroid_original(&self, id: NodeId) -> Vec<f64> {
        let b = self.boxx(id);
        (0..self.dim())
            .map(|d| self.domain.denormalize_coord(d, b.centroid_norm(d)))
            .collect()
    }
}
