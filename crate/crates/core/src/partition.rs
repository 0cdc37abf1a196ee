//! Strategies that split a node's input indices into `N` groups.
//!
//! Each group `S_n` gets one auxiliary sum `z_n = sum_{i in S_n} w_i x_i` in the
//! partitioned encoding, so the choice of grouping controls which facets of the
//! node's convex hull the relaxation captures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disjoint cover of `{0, .., n-1}`. Subsets may be empty; encoders skip them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    subsets: Vec<Vec<usize>>,
}

impl Partition {
    /// Checks that `subsets` is a disjoint cover of `0..n` and sorts each subset.
    pub fn new(n: usize, mut subsets: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n];
        for s in &mut subsets {
            s.sort_unstable();
            for &i in s.iter() {
                if i >= n {
                    return Err(Error::Strategy(format!("index {i} out of range for {n} inputs")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Strategy(format!("index {i} appears twice")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Strategy(format!("index {missing} is not covered")));
        }
        Ok(Self { subsets })
    }

    /// One group containing every input (the big-M equivalent case).
    pub fn single(n: usize) -> Self {
        Self {
            subsets: vec![(0..n).collect()],
        }
    }

    /// One group per input (the convex-hull case).
    pub fn singletons(n: usize) -> Self {
        Self {
            subsets: (0..n).map(|i| vec![i]).collect(),
        }
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn num_indices(&self) -> usize {
        self.subsets.iter().map(Vec::len).sum()
    }

    /// The same partition with empty subsets removed.
    pub fn non_empty(&self) -> Self {
        Self {
            subsets: self
                .subsets
                .iter()
                .filter(|s| !s.is_empty())
                .cloned()
                .collect(),
        }
    }

    /// Merges subsets `a` and `b` into one (placed at the smaller position).
    pub fn merge(&self, a: usize, b: usize) -> Self {
        let (lo, hi) = (a.min(b), a.max(b));
        let mut subsets = self.subsets.clone();
        let moved = subsets.remove(hi);
        subsets[lo].extend(moved);
        subsets[lo].sort_unstable();
        Self { subsets }
    }

    /// Subset index of every input.
    pub fn membership(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.num_indices()];
        for (n, s) in self.subsets.iter().enumerate() {
            for &i in s {
                out[i] = n;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    EqualSize,
    EqualRange,
    Random,
    UnevenMagnitudes,
}

/// Direction in which sorted weights are dealt by [`uneven_magnitudes`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DealOrder {
    #[default]
    Descending,
    Ascending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub num_partitions: usize,
    /// Only used by [`Strategy::Random`].
    pub seed: u64,
    pub quantile_clip: (f64, f64),
    pub deal_order: DealOrder,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy, num_partitions: usize) -> Self {
        Self {
            strategy,
            num_partitions,
            seed: 0,
            quantile_clip: (0.05, 0.95),
            deal_order: DealOrder::Descending,
        }
    }

    pub fn equal_size(num_partitions: usize) -> Self {
        Self::new(Strategy::EqualSize, num_partitions)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_partitions == 0 {
            return Err(Error::Strategy("number of partitions must be at least 1".into()));
        }
        if self.strategy == Strategy::EqualRange && self.num_partitions < 3 {
            return Err(Error::Strategy("equal-range partitioning requires N >= 3".into()));
        }
        Ok(())
    }

    /// Partition for the node at (`layer`, `node`) with weight row `w`.
    ///
    /// The random strategy derives a per-node stream from the base seed so that
    /// every node gets an independent but reproducible assignment.
    pub fn partition_node(&self, w: &[f64], layer: usize, node: usize) -> Result<Partition> {
        self.validate()?;
        let n = self.num_partitions;
        match self.strategy {
            Strategy::EqualSize => equal_size(w, n),
            Strategy::EqualRange => equal_range(w, n, self.quantile_clip),
            Strategy::Random => random_partition(w.len(), n, node_seed(self.seed, layer, node)),
            Strategy::UnevenMagnitudes => uneven_magnitudes_ordered(w, n, self.deal_order),
        }
    }
}

fn node_seed(seed: u64, layer: usize, node: usize) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ ((layer as u64) << 32 | node as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Indices sorted by ascending weight; ties keep index order.
fn argsort(w: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(a.cmp(&b)));
    idx
}

fn check_finite(w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Strategy("weights must be finite".into()));
    }
    Ok(())
}

/// Sort by weight and split into `n` contiguous chunks whose sizes differ by at
/// most one; the first `len % n` chunks take the extra element.
pub fn equal_size(w: &[f64], n: usize) -> Result<Partition> {
    if n == 0 {
        return Err(Error::Strategy("number of partitions must be at least 1".into()));
    }
    check_finite(w)?;
    let order = argsort(w);
    let (base, extra) = (w.len() / n, w.len() % n);
    let mut subsets = Vec::with_capacity(n);
    let mut start = 0;
    for k in 0..n {
        let size = base + usize::from(k < extra);
        subsets.push(order[start..start + size].to_vec());
        start += size;
    }
    Partition::new(w.len(), subsets)
}

/// Linear interpolation between order statistics.
pub fn quantile(w: &[f64], q: f64) -> f64 {
    let mut sorted = w.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Threshold vector `v` of length `n + 1` used by [`equal_range`].
pub fn equal_range_thresholds(w: &[f64], n: usize, clip: (f64, f64)) -> Vec<f64> {
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = quantile(w, clip.0);
    let hi = quantile(w, clip.1);
    let inner = n - 1;
    let mut v = Vec::with_capacity(n + 1);
    v.push(min);
    for k in 0..inner {
        v.push(lo + (hi - lo) * k as f64 / (inner - 1) as f64);
    }
    v.push(max);
    v
}

/// Bins weights by value into `n` ranges: the outer bins catch the tails below
/// and above the clip quantiles, the inner ones split the middle evenly.
/// Bins are half-open `[v_k, v_{k+1})` except the last, which is closed.
pub fn equal_range(w: &[f64], n: usize, clip: (f64, f64)) -> Result<Partition> {
    if n < 3 {
        return Err(Error::Strategy("equal-range partitioning requires N >= 3".into()));
    }
    check_finite(w)?;
    if w.is_empty() {
        return Partition::new(0, vec![Vec::new(); n]);
    }
    let v = equal_range_thresholds(w, n, clip);
    let mut subsets = vec![Vec::new(); n];
    for (i, &wi) in w.iter().enumerate() {
        let bin = (0..n - 1)
            .find(|&k| wi >= v[k] && wi < v[k + 1])
            .unwrap_or(n - 1);
        subsets[bin].push(i);
    }
    Partition::new(w.len(), subsets)
}

/// Uniform, independent assignment of each index, reproducible from `seed`.
pub fn random_partition(len: usize, n: usize, seed: u64) -> Result<Partition> {
    if n == 0 {
        return Err(Error::Strategy("number of partitions must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subsets = vec![Vec::new(); n];
    for i in 0..len {
        subsets[rng.gen_range(0..n)].push(i);
    }
    Partition::new(len, subsets)
}

/// Weights sorted in descending order and dealt snake-draft style:
/// `S_1..S_N, S_N..S_1, S_1..`.
pub fn uneven_magnitudes(w: &[f64], n: usize) -> Result<Partition> {
    uneven_magnitudes_ordered(w, n, DealOrder::Descending)
}

pub fn uneven_magnitudes_ordered(w: &[f64], n: usize, order: DealOrder) -> Result<Partition> {
    if n == 0 {
        return Err(Error::Strategy("number of partitions must be at least 1".into()));
    }
    check_finite(w)?;
    let mut idx: Vec<usize> = (0..w.len()).collect();
    match order {
        DealOrder::Descending => idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b))),
        DealOrder::Ascending => idx = argsort(w),
    }
    let mut subsets = vec![Vec::new(); n];
    for (pos, i) in idx.into_iter().enumerate() {
        let round = pos / n;
        let slot = pos % n;
        let target = if round.is_multiple_of(2) { slot } else { n - 1 - slot };
        subsets[target].push(i);
    }
    Partition::new(w.len(), subsets)
}
