//! Bagged CART regression trees.
//!
//! Features are discretized once per fit into at most `max_bins` ordered
//! bins (every distinct value gets its own bin when there are few enough),
//! and splits are searched over bin boundaries with per-node histograms of
//! `(count, sum)`. Splits minimize the within-node squared error. On a 0/1
//! response the leaves are class probabilities.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{child_seed, rng_from, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub trees: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `max(1, ⌈d/3⌉)`.
    pub features_per_split: Option<usize>,
    pub max_bins: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 100,
            min_leaf: 20,
            features_per_split: None,
            max_bins: 64,
        }
    }
}

impl ForestParams {
    pub fn mtry(&self, d: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| d.div_ceil(3))
            .clamp(1, d.max(1))
    }
}

/// Column-wise bin codes plus the real-valued cut between adjacent codes.
struct Binned {
    n: usize,
    codes: Vec<Vec<u8>>,
    /// `cuts[j][b]`: rows with code `<= b` have value `<= cuts[j][b]`.
    cuts: Vec<Vec<f64>>,
}

impl Binned {
    fn new(x: &[f64], n: usize, d: usize, max_bins: usize) -> Binned {
        let max_bins = max_bins.clamp(2, 256);
        let mut codes = Vec::with_capacity(d);
        let mut cuts = Vec::with_capacity(d);
        let mut col = vec![0.0; n];
        for j in 0..d {
            for (i, c) in col.iter_mut().enumerate() {
                *c = x[i * d + j];
            }
            let mut sorted = col.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            sorted.dedup();
            let feature_cuts: Vec<f64> = if sorted.len() <= max_bins {
                sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                // quantile cuts over the distinct values of the full column
                let mut all = col.clone();
                all.sort_by(|a, b| a.total_cmp(b));
                let mut c: Vec<f64> = (1..max_bins)
                    .map(|b| {
                        let pos = b * n / max_bins;
                        0.5 * (all[pos - 1] + all[pos])
                    })
                    .collect();
                c.dedup();
                c
            };
            codes.push(
                col.iter()
                    .map(|&v| feature_cuts.partition_point(|&c| c < v) as u8)
                    .collect(),
            );
            cuts.push(feature_cuts);
        }
        Binned { n, codes, cuts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

struct Grower<'a, R> {
    data: &'a Binned,
    y: &'a [f64],
    min_leaf: usize,
    mtry: usize,
    rng: R,
    nodes: Vec<Node>,
    count: Vec<usize>,
    sum: Vec<f64>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    code: u8,
}

impl<R: Rng> Grower<'_, R> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64
    }

    fn find_split(&mut self, rows: &[usize]) -> Option<BestSplit> {
        let m = rows.len();
        let total: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let parent = total * total / m as f64;
        let d = self.data.codes.len();
        let mut best: Option<BestSplit> = None;
        for feature in index::sample(&mut self.rng, d, self.mtry) {
            let nb = self.data.cuts[feature].len() + 1;
            if nb < 2 {
                continue;
            }
            let codes = &self.data.codes[feature];
            self.count[..nb].fill(0);
            self.sum[..nb].fill(0.0);
            for &i in rows {
                let c = codes[i] as usize;
                self.count[c] += 1;
                self.sum[c] += self.y[i];
            }
            let mut left_n = 0;
            let mut left_s = 0.0;
            for b in 0..nb - 1 {
                left_n += self.count[b];
                left_s += self.sum[b];
                if left_n < self.min_leaf {
                    continue;
                }
                let right_n = m - left_n;
                if right_n < self.min_leaf {
                    break;
                }
                if self.count[b] == 0 && b > 0 {
                    // same partition as the previous boundary
                    continue;
                }
                let right_s = total - left_s;
                let gain = left_s * left_s / left_n as f64 + right_s * right_s / right_n as f64 - parent;
                if best.as_ref().is_none_or(|bs| gain > bs.gain) {
                    best = Some(BestSplit {
                        gain,
                        feature,
                        code: b as u8,
                    });
                }
            }
        }
        let scale = 1e-12 * (1.0 + parent.abs());
        best.filter(|b| b.gain > scale)
    }

    fn grow(&mut self, rows: &mut [usize]) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        let split = if rows.len() >= 2 * self.min_leaf {
            self.find_split(rows)
        } else {
            None
        };
        let Some(split) = split else {
            self.nodes[id] = Node::Leaf(self.leaf_value(rows));
            return id;
        };
        let codes = &self.data.codes[split.feature];
        let mut mid = 0;
        for k in 0..rows.len() {
            if codes[rows[k]] <= split.code {
                rows.swap(k, mid);
                mid += 1;
            }
        }
        let (l, r) = rows.split_at_mut(mid);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: self.data.cuts[split.feature][split.code as usize],
            left,
            right,
        };
        id
    }
}

/// Bootstrap-aggregated regression trees; prediction is the mean of the
/// tree predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<RegressionTree>,
    dim: usize,
}

impl Forest {
    /// Fits on row-major `x` (`n × d`). Each tree sees a bootstrap resample
    /// drawn from its own seed, so the forest is a pure function of `seed`.
    pub fn fit(x: &[f64], y: &[f64], d: usize, params: &ForestParams, seed: u64) -> Forest {
        let n = y.len();
        let data = Binned::new(x, n, d, params.max_bins);
        let mtry = params.mtry(d);
        let trees = (0..params.trees.max(1))
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_from(child_seed(seed, Stream::Trees, t as u64));
                let mut rows: Vec<usize> = (0..data.n).map(|_| rng.random_range(0..data.n)).collect();
                let mut grower = Grower {
                    data: &data,
                    y,
                    min_leaf: params.min_leaf.max(1),
                    mtry,
                    rng,
                    nodes: Vec::new(),
                    count: vec![0; 257],
                    sum: vec![0.0; 257],
                };
                grower.grow(&mut rows);
                RegressionTree { nodes: grower.nodes }
            })
            .collect();
        Forest { trees, dim: d }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }
}
