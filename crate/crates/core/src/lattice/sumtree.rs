use alloc::vec;
use alloc::vec::Vec;

/// Binary sum tree over nonnegative weights: `O(log n)` proportional
/// selection, and contiguous-range updates that touch each ancestor once.
///
/// Parents are recomputed from their children rather than patched with
/// differences, so the total never drifts from the sum of the leaves.
#[derive(Debug, Clone)]
pub struct SumTree {
    len: usize,
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(len: usize) -> Self {
        let leaves = len.max(1).next_power_of_two();
        Self {
            len,
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn from_weights(weights: &[f64]) -> Self {
        let mut t = Self::new(weights.len());
        t.nodes[t.leaves..t.leaves + weights.len()].copy_from_slice(weights);
        for i in (1..t.leaves).rev() {
            t.nodes[i] = t.nodes[2 * i] + t.nodes[2 * i + 1];
        }
        t
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    /// Sets one leaf without touching ancestors; follow with
    /// [`Self::refresh`] over a range that covers it.
    #[inline]
    pub fn set_leaf(&mut self, i: usize, w: f64) {
        self.nodes[self.leaves + i] = w;
    }

    /// Recomputes every ancestor of the leaves `lo..=hi`.
    pub fn refresh(&mut self, lo: usize, hi: usize) {
        let (mut a, mut b) = ((self.leaves + lo) >> 1, (self.leaves + hi) >> 1);
        while a >= 1 {
            for i in a..=b {
                self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
            }
            a >>= 1;
            b >>= 1;
        }
    }

    pub fn set(&mut self, i: usize, w: f64) {
        self.set_leaf(i, w);
        self.refresh(i, i);
    }

    /// Index `i` such that the prefix sum up to `i` first exceeds `u`,
    /// where `u ∈ [0, total)`. Never returns a zero-weight leaf while the
    /// total is positive, even under rounding.
    pub fn select(&self, mut u: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let left = self.nodes[2 * i];
            let right = self.nodes[2 * i + 1];
            if left > 0.0 && (u < left || right <= 0.0) {
                i *= 2;
            } else {
                u -= left;
                i = 2 * i + 1;
            }
        }
        i - self.leaves
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn total_matches_leaf_sum_after_range_updates(
            init in prop::collection::vec(0.0f64..5.0, 1..70),
            updates in prop::collection::vec((0usize..70, 0usize..8, 0.0f64..5.0), 0..40),
        ) {
            let mut t = SumTree::from_weights(&init);
            let mut w = init.clone();
            for (start, span, value) in updates {
                let lo = start % w.len();
                let hi = (lo + span).min(w.len() - 1);
                for (k, wk) in w.iter_mut().enumerate().take(hi + 1).skip(lo) {
                    *wk = value + k as f64 * 0.01;
                    t.set_leaf(k, *wk);
                }
                t.refresh(lo, hi);
            }
            let s: f64 = w.iter().sum();
            prop_assert!((t.total() - s).abs() <= 1e-9 * (1.0 + s));
        }

        #[test]
        fn selection_never_hits_zero_weight(
            w in prop::collection::vec(prop_oneof![Just(0.0), 0.1f64..3.0], 1..50),
            u in 0.0f64..1.0,
        ) {
            let t = SumTree::from_weights(&w);
            prop_assume!(t.total() > 0.0);
            let i = t.select(u * t.total());
            prop_assert!(w[i] > 0.0);
            // Also at the upper edge where rounding could overshoot.
            let j = t.select(t.total());
            prop_assert!(w[j] > 0.0);
        }
    }

    #[test]
    fn selection_follows_prefix_sums() {
        let t = SumTree::from_weights(&[1.0, 0.0, 2.0, 1.0]);
        assert_eq!(t.select(0.5), 0);
        assert_eq!(t.select(1.0), 2);
        assert_eq!(t.select(2.99), 2);
        assert_eq!(t.select(3.5), 3);
        assert_eq!(t.total(), 4.0);
    }
}
