//! Constant-time categorical sampling over leaf masses (Vose alias method).

use rand::Rng;

use crate::accum::dd_sum;
use crate::error::{DeferError, Result};
use crate::tree::{NodeId, Tree};

/// Preprocessed alias tables realizing the categorical distribution
/// `p_i = m_i / sum(m)` over live leaves. Construction is linear in the leaf
/// count; each draw costs two uniforms.
#[derive(Debug, Clone)]
pub struct AliasSampler {
    leaf_ids: Vec<NodeId>,
    prob: Vec<f64>,
    alias: Vec<usize>,
    /// Normalizer (total offset-shifted mass) at build time.
    z_used: f64,
}

impl AliasSampler {
    /// Build tables over the tree's live leaves in creation order.
    pub fn build(tree: &Tree) -> Result<Self> {
        let leaf_ids: Vec<NodeId> = tree.leaf_ids().collect();
        let total = dd_sum(leaf_ids.iter().map(|&l| tree.mass(l))).value();
        if !(total > 0.0) {
            return Err(DeferError::ZeroMass);
        }
        let n = leaf_ids.len();
        let mut scaled: Vec<f64> = leaf_ids
            .iter()
            .map(|&l| tree.mass(l) / total * n as f64)
            .collect();
        let mut prob = vec![1.0f64; n];
        let mut alias: Vec<usize> = (0..n).collect();

        let mut small: Vec<usize> = Vec::new();
        let mut large: Vec<usize> = Vec::new();
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        // Work stacks: deterministic LIFO pairing of donors and receivers.
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers in either list sit at probability 1 (modulo rounding).
        for &i in small.iter().chain(large.iter()) {
            prob[i] = 1.0;
            alias[i] = i;
        }

        Ok(AliasSampler {
            leaf_ids,
            prob,
            alias,
            z_used: total,
        })
    }

    pub fn len(&self) -> usize {
        self.leaf_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaf_ids.is_empty()
    }

    pub fn z_used(&self) -> f64 {
        self.z_used
    }

    /// Draw one leaf id.
    pub fn sample_leaf<R: Rng>(&self, rng: &mut R) -> NodeId {
        let n = self.leaf_ids.len();
        let u1: f64 = rng.random();
        let slot = ((u1 * n as f64) as usize).min(n - 1);
        let u2: f64 = rng.random();
        let idx = if u2 < self.prob[slot] {
            slot
        } else {
            self.alias[slot]
        };
        self.leaf_ids[idx]
    }

    /// Exact per-leaf probabilities realized by the discrete mechanism:
    /// enumerate every (slot, coin) outcome and accumulate. Used to verify
    /// the tables against `m_i / sum(m)`.
    pub fn enumerate_probabilities(&self) -> Vec<(NodeId, f64)> {
        let n = self.leaf_ids.len();
        let mut acc = vec![0.0f64; n];
        for slot in 0..n {
            acc[slot] += self.prob[slot] / n as f64;
            acc[self.alias[slot]] += (1.0 - self.prob[slot]) / n as f64;
        }
        self.leaf_ids.iter().copied().zip(acc).collect()
    }
}
