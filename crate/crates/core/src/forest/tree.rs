//! CART growth on binary features.
//!
//! Rows with identical feature vectors always travel together, so the
//! training matrix is packed into distinct feature patterns once, and every
//! tree works on per-pattern class weights. Split quality is compared in
//! exact integer arithmetic; the floating decrease is only materialized for
//! the chosen split.

use std::collections::HashMap;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ForestParams, MaxFeatures};
use crate::error::{Error, Result};
use crate::rng::TaskRng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node<T> {
    /// Rows with feature value 0 go left, value 1 go right.
    Split { feature: usize, decrease: T, left: usize, right: usize },
    /// Class-1 frequency of the training rows reaching the leaf.
    Leaf { frequency: T },
}

/// Binary tree stored in preorder, root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> DecisionTree<T> {
    pub fn leaf(frequency: T) -> Self {
        Self { nodes: vec![Node::Leaf { frequency }] }
    }

    /// Class-1 frequency of the leaf reached by `row`.
    pub fn predict_row(&self, row: &[u8]) -> T {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { frequency } => return *frequency,
                Node::Split { feature, left, right, .. } => {
                    at = if row[*feature] == 0 { *left } else { *right };
                }
            }
        }
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }

    /// Per-feature share of the tree's total impurity decrease.
    pub fn importance(&self, n_features: usize) -> Vec<T> {
        let mut acc = vec![T::zero(); n_features];
        let mut total = T::zero();
        for node in &self.nodes {
            if let Node::Split { feature, decrease, .. } = node {
                acc[*feature] += *decrease;
                total += *decrease;
            }
        }
        if total > T::zero() {
            for v in &mut acc {
                *v /= total;
            }
        }
        acc
    }

    pub(crate) fn validate(&self, n_features: usize) -> Result<()> {
        let n = self.nodes.len();
        for node in &self.nodes {
            match node {
                Node::Split { feature, left, right, .. } => {
                    if *feature >= n_features || *left >= n || *right >= n {
                        return Err(Error::Format("tree node references out of range".into()));
                    }
                }
                Node::Leaf { frequency } => {
                    if !(*frequency >= T::zero() && *frequency <= T::one()) {
                        return Err(Error::Format("leaf frequency outside [0,1]".into()));
                    }
                }
            }
        }
        if n == 0 {
            return Err(Error::Format("empty tree".into()));
        }
        Ok(())
    }
}

/// Binary observation × feature matrix packed into distinct row patterns.
#[derive(Debug, Clone)]
pub struct TrainingMatrix {
    n_rows: usize,
    n_features: usize,
    words: usize,
    /// Pattern bitsets, `words` u64 per pattern.
    bits: Vec<u64>,
    row_pattern: Vec<u32>,
}

impl TrainingMatrix {
    pub fn new(x: ArrayView2<'_, u8>) -> Result<Self> {
        let (n_rows, n_features) = x.dim();
        if n_rows == 0 {
            return Err(Error::param("training set has no observations"));
        }
        if n_features == 0 {
            return Err(Error::param("training set has no features"));
        }
        let words = n_features.div_ceil(64);
        let mut bits = Vec::new();
        let mut seen: HashMap<Vec<u64>, u32> = HashMap::new();
        let mut row_pattern = Vec::with_capacity(n_rows);
        for row in x.rows() {
            let mut key = vec![0u64; words];
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => key[j / 64] |= 1 << (j % 64),
                    _ => return Err(Error::param("features must be binary (0/1)")),
                }
            }
            let next = seen.len() as u32;
            let id = *seen.entry(key.clone()).or_insert_with(|| {
                bits.extend_from_slice(&key);
                next
            });
            row_pattern.push(id);
        }
        Ok(Self { n_rows, n_features, words, bits, row_pattern })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_patterns(&self) -> usize {
        self.bits.len() / self.words
    }

    #[inline]
    fn bit(&self, pattern: u32, feature: usize) -> bool {
        (self.bits[pattern as usize * self.words + feature / 64] >> (feature % 64)) & 1 == 1
    }
}

/// Class weights of a node: (total, class 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Counts {
    n: u64,
    n1: u64,
}

impl Counts {
    fn n0(self) -> u64 {
        self.n - self.n1
    }
}

/// Candidate split scored by Σ_child (c1·c0 / n_child) as a fraction;
/// smaller is better, and the decrease is positive iff the fraction is
/// below n1·n0 / n.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    num: u128,
    den: u128,
    left: Counts,
    right: Counts,
}

fn score(left: Counts, right: Counts) -> (u128, u128) {
    let (l, r) = (left.n as u128, right.n as u128);
    let num = (left.n1 as u128) * (left.n0() as u128) * r + (right.n1 as u128) * (right.n0() as u128) * l;
    (num, l * r)
}

/// Impurity decrease G − f¹G¹ − f²G² from integer counts.
fn decrease<T: Scalar>(parent: Counts, c: &Candidate) -> T {
    let n = parent.n as u128;
    let top = (parent.n1 as u128) * (parent.n0() as u128) * c.den - n * c.num;
    let bottom = n * n * c.den;
    T::lit(2.0 * (top as f64 / bottom as f64))
}

pub(crate) struct Grower<'a, T> {
    data: &'a TrainingMatrix,
    params: &'a ForestParams,
    w0: Vec<u64>,
    w1: Vec<u64>,
    features: Vec<usize>,
    n_try: usize,
    nodes: Vec<Node<T>>,
}

impl<'a, T: Scalar> Grower<'a, T> {
    pub(crate) fn grow(data: &'a TrainingMatrix, y: &[u8], params: &'a ForestParams, rng: &mut TaskRng) -> DecisionTree<T> {
        let n_pat = data.n_patterns();
        let mut w0 = vec![0u64; n_pat];
        let mut w1 = vec![0u64; n_pat];
        if params.bootstrap {
            for _ in 0..data.n_rows {
                let r = rng.random_range(0..data.n_rows);
                let p = data.row_pattern[r] as usize;
                if y[r] == 1 { w1[p] += 1 } else { w0[p] += 1 }
            }
        } else {
            for (r, &p) in data.row_pattern.iter().enumerate() {
                if y[r] == 1 { w1[p as usize] += 1 } else { w0[p as usize] += 1 }
            }
        }
        let mut samples: Vec<u32> = (0..n_pat as u32).filter(|&p| w0[p as usize] + w1[p as usize] > 0).collect();
        let v = data.n_features;
        let n_try = match params.max_features {
            MaxFeatures::Sqrt => ((v as f64).sqrt().ceil() as usize).max(1),
            MaxFeatures::All => v,
            MaxFeatures::Count(k) => k.clamp(1, v),
        };
        let mut g = Grower { data, params, w0, w1, features: (0..v).collect(), n_try, nodes: Vec::new() };
        g.build(&mut samples, 0, rng);
        DecisionTree { nodes: g.nodes }
    }

    fn counts(&self, samples: &[u32]) -> Counts {
        let mut c = Counts { n: 0, n1: 0 };
        for &p in samples {
            c.n += self.w0[p as usize] + self.w1[p as usize];
            c.n1 += self.w1[p as usize];
        }
        c
    }

    fn build(&mut self, samples: &mut [u32], depth: usize, rng: &mut TaskRng) -> usize {
        let idx = self.nodes.len();
        let here = self.counts(samples);
        let frequency = T::from_count(here.n1 as usize) / T::from_count(here.n as usize);
        self.nodes.push(Node::Leaf { frequency });
        let too_deep = self.params.max_depth.is_some_and(|d| depth >= d);
        if here.n1 == 0 || here.n1 == here.n || (here.n as usize) < self.params.min_samples_split || too_deep {
            return idx;
        }
        let Some(best) = self.best_split(samples, here, rng) else {
            return idx;
        };
        // left: feature value 0
        let mut mid = 0;
        for i in 0..samples.len() {
            if !self.data.bit(samples[i], best.feature) {
                samples.swap(i, mid);
                mid += 1;
            }
        }
        let decrease = decrease::<T>(here, &best);
        let (lo, hi) = samples.split_at_mut(mid);
        let left = self.build(lo, depth + 1, rng);
        let right = self.build(hi, depth + 1, rng);
        self.nodes[idx] = Node::Split { feature: best.feature, decrease, left, right };
        idx
    }

    /// Visit features in random order, skipping those constant in the node,
    /// until `n_try` informative ones have been scored.
    fn best_split(&mut self, samples: &[u32], here: Counts, rng: &mut TaskRng) -> Option<Candidate> {
        let v = self.features.len();
        let mut best: Option<Candidate> = None;
        let mut visited = 0;
        let mut remaining = v;
        while visited < self.n_try && remaining > 0 {
            let k = rng.random_range(0..remaining);
            remaining -= 1;
            self.features.swap(k, remaining);
            let j = self.features[remaining];
            let mut right = Counts { n: 0, n1: 0 };
            for &p in samples {
                if self.data.bit(p, j) {
                    right.n += self.w0[p as usize] + self.w1[p as usize];
                    right.n1 += self.w1[p as usize];
                }
            }
            if right.n == 0 || right.n == here.n {
                continue;
            }
            visited += 1;
            let left = Counts { n: here.n - right.n, n1: here.n1 - right.n1 };
            let (num, den) = score(left, right);
            let better = match &best {
                None => true,
                Some(b) => {
                    let lhs = num * b.den;
                    let rhs = b.num * den;
                    lhs < rhs || (lhs == rhs && j < b.feature)
                }
            };
            if better {
                best = Some(Candidate { feature: j, num, den, left, right });
            }
        }
        let b = best?;
        debug_assert_eq!(b.left.n + b.right.n, here.n);
        // positive decrease: n1·n0/n > num/den
        let parent = (here.n1 as u128) * (here.n0() as u128) * b.den;
        if parent > (here.n as u128) * b.num {
            Some(b)
        } else {
            None
        }
    }
}
