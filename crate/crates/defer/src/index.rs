//! Bucketed max tracking over live leaves.
//!
//! `LeafIndex` is a hash map from depth-multiset keys to max-heaps of
//! `(ordinate, node id)` entries. The abscissa `V*d/2` is a pure function of
//! the key, so one peek per bucket yields exactly the per-unique-abscissa
//! maxima the hull computation needs. Removal is lazy: entries are purged when
//! they surface at a heap head.

use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};

use crate::error::{DeferError, Result};
use crate::geom::{diameter_of_depths, pow3_neg};
use crate::hull::HullPoint;
use crate::tree::NodeId;

/// Canonical depth-multiset key: the depth vector sorted descending.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DepthKey(Box<[u8]>);

impl DepthKey {
    pub fn new(depths: &[u8]) -> Self {
        let mut v = depths.to_vec();
        v.sort_unstable_by(|a, b| b.cmp(a));
        DepthKey(v.into_boxed_slice())
    }

    /// Abscissa `V * d / 2`, identical for every box sharing this key.
    pub fn abscissa(&self) -> f64 {
        let sum: u32 = self.0.iter().map(|&k| k as u32).sum();
        pow3_neg(sum) * diameter_of_depths(&self.0) / 2.0
    }
}

/// Heap entry ordered by ordinate, ties won by the lower node id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    y: f64,
    id: NodeId,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.y
            .total_cmp(&other.y)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
struct Bucket {
    heap: BinaryHeap<HeapEntry>,
    live: usize,
}

/// Hash map of lazy-deletion max-heaps over the live leaf set.
#[derive(Debug, Default)]
pub struct LeafIndex {
    buckets: HashMap<DepthKey, Bucket>,
    /// Presence flags addressed by node id; ids are dense arena indices.
    present: Vec<bool>,
    live: usize,
}

impl LeafIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    /// Number of live unique keys (`U`).
    pub fn unique_keys(&self) -> usize {
        self.buckets.len()
    }

    fn present(&self, id: NodeId) -> bool {
        self.present.get(id as usize).copied().unwrap_or(false)
    }

    fn set_present(&mut self, id: NodeId, value: bool) {
        let idx = id as usize;
        if self.present.len() <= idx {
            self.present.resize(idx + 1, false);
        }
        self.present[idx] = value;
    }

    /// Insert a live leaf with its depth vector and ordinate `V*f`.
    pub fn insert(&mut self, id: NodeId, depths: &[u8], ordinate: f64) -> Result<()> {
        if self.present(id) {
            return Err(DeferError::Invariant(format!(
                "leaf {id} inserted into index twice"
            )));
        }
        self.set_present(id, true);
        self.live += 1;
        let bucket = self.buckets.entry(DepthKey::new(depths)).or_default();
        bucket.heap.push(HeapEntry { y: ordinate, id });
        bucket.live += 1;
        Ok(())
    }

    /// Mark a leaf removed. Its heap entry is purged lazily; an emptied
    /// bucket is dropped immediately so `unique_keys` stays exact.
    pub fn remove(&mut self, id: NodeId, depths: &[u8]) -> Result<()> {
        if !self.present(id) {
            return Err(DeferError::Invariant(format!(
                "leaf {id} removed from index but not present"
            )));
        }
        self.present[id as usize] = false;
        self.live -= 1;
        let key = DepthKey::new(depths);
        match self.buckets.entry(key) {
            Entry::Occupied(mut e) => {
                let bucket = e.get_mut();
                if bucket.live == 0 {
                    return Err(DeferError::Invariant(format!(
                        "bucket for leaf {id} has no live entries"
                    )));
                }
                bucket.live -= 1;
                if bucket.live == 0 {
                    e.remove();
                }
            }
            Entry::Vacant(_) => {
                return Err(DeferError::Invariant(format!(
                    "no bucket holds leaf {id}"
                )));
            }
        }
        Ok(())
    }

    /// Max-ordinate live entry for `key`, purging stale heads.
    pub fn peek(&mut self, key: &DepthKey) -> Option<(NodeId, f64)> {
        let bucket = self.buckets.get_mut(key)?;
        while let Some(head) = bucket.heap.peek() {
            let id = head.id;
            if self.present.get(id as usize).copied().unwrap_or(false) {
                return Some((id, head.y));
            }
            bucket.heap.pop();
        }
        None
    }

    /// One hull candidate per live key (its max-ordinate leaf), sorted by
    /// ascending abscissa. Ties in abscissa are ordered by descending ordinate
    /// then ascending id so downstream merging is deterministic.
    pub fn hull_candidates(&mut self) -> Vec<HullPoint> {
        let keys: Vec<DepthKey> = self.buckets.keys().cloned().collect();
        let mut out = Vec::with_capacity(keys.len());
        for key in keys {
            let x = key.abscissa();
            if let Some((id, y)) = self.peek(&key) {
                out.push(HullPoint { node_id: id, x, y });
            }
        }
        out.sort_unstable_by(|a, b| {
            a.x.total_cmp(&b.x)
                .then_with(|| b.y.total_cmp(&a.y))
                .then_with(|| a.node_id.cmp(&b.node_id))
        });
        out
    }
}

/// Lazy max-heap over leaf masses used to extract the current top-M set.
/// Liveness is checked against the tree (divided nodes left the leaf set),
/// so exclusion needs no bookkeeping here.
#[derive(Debug, Default)]
pub struct TopMasses {
    heap: BinaryHeap<HeapEntry>,
}

impl TopMasses {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn include(&mut self, id: NodeId, mass: f64) {
        self.heap.push(HeapEntry { y: mass, id });
    }

    /// The up-to-`m` highest-mass live leaves, in descending mass order with
    /// ties won by the lower id. Stale heads are dropped permanently; live
    /// heads are popped and re-pushed.
    pub fn top(&mut self, m: usize, is_live: impl Fn(NodeId) -> bool) -> Vec<(NodeId, f64)> {
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            match self.heap.pop() {
                Some(e) if is_live(e.id) => out.push(e),
                Some(_) => continue,
                None => break,
            }
        }
        for &e in &out {
            self.heap.push(e);
        }
        out.into_iter().map(|e| (e.id, e.y)).collect()
    }
}
