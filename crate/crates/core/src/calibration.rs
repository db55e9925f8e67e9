//! Histogram estimate of the calibration function `γ(δ) = E[τ | Δ = δ]`.
//!
//! Predictions are partitioned into bins; inside each bin the calibration
//! function is the mean score. Per-bin sums and counts are kept so the
//! leave-one-out mean for any row is O(1).

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{EcethError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinStrategy {
    /// Bins hold equal numbers of predictions (quantile bins).
    #[default]
    #[serde(alias = "freq")]
    EqualFrequency,
    /// Bins have equal width over `[min Δ, max Δ]`.
    #[serde(alias = "width")]
    EqualWidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPartition {
    pub strategy: BinStrategy,
    /// `K + 1` non-decreasing edges; `edges[0] = min Δ`, `edges[K] = max Δ`.
    pub edges: Vec<f64>,
    /// Bin index of every row.
    pub assignment: Vec<usize>,
}

impl BinPartition {
    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.bins()];
        for &k in &self.assignment {
            c[k] += 1;
        }
        c
    }

    /// Merges every single-member bin into its nearest occupied neighbour
    /// until no singleton remains. The shared edges are dropped, so the
    /// result has fewer bins. Returns the number of merges performed.
    pub fn merge_singletons(&mut self, delta: &[f64]) -> Result<usize> {
        self.merge_sparse(delta, None)
    }

    /// [`merge_singletons`](Self::merge_singletons) where a bin counts as a
    /// singleton when all its rows share one unit id.
    pub fn merge_single_unit_bins(&mut self, delta: &[f64], units: &[usize]) -> Result<usize> {
        self.merge_sparse(delta, Some(units))
    }

    /// Distinct units per bin (rows, when `units` is `None`).
    fn occupancy(&self, units: Option<&[usize]>) -> Vec<usize> {
        match units {
            None => self.counts(),
            Some(u) => {
                let mut seen: Vec<HashSet<usize>> = vec![HashSet::new(); self.bins()];
                for (&b, &unit) in self.assignment.iter().zip(u) {
                    seen[b].insert(unit);
                }
                seen.iter().map(HashSet::len).collect()
            }
        }
    }

    fn merge_sparse(&mut self, delta: &[f64], units: Option<&[usize]>) -> Result<usize> {
        let mut merges = 0;
        loop {
            let counts = self.occupancy(units);
            let Some(k) = counts.iter().position(|&c| c == 1) else {
                return Ok(merges);
            };
            let row = self.assignment.iter().position(|&b| b == k).unwrap();
            let value = delta[row];
            let left = (0..k).rev().find(|&j| counts[j] > 0);
            let right = (k + 1..counts.len()).find(|&j| counts[j] > 0);
            let target = match (left, right) {
                (None, None) => return Err(EcethError::SingletonBin(k)),
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (Some(l), Some(r)) => {
                    let dl = value - self.edges[l + 1];
                    let dr = self.edges[r] - value;
                    if dl <= dr {
                        l
                    } else {
                        r
                    }
                }
            };
            // Collapse bins lo..=hi into one.
            let (lo, hi) = if target < k { (target, k) } else { (k, target) };
            self.edges.drain(lo + 1..=hi);
            let removed = hi - lo;
            for b in self.assignment.iter_mut() {
                if *b > lo && *b <= hi {
                    *b = lo;
                } else if *b > hi {
                    *b -= removed;
                }
            }
            merges += 1;
        }
    }
}

fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Partitions the predictions into `bins` bins.
///
/// Equal-frequency bins are formed by rank (stable sort, original index as
/// tiebreak), so occupancies differ by at most one even under ties.
/// Equal-width bins are uniform over `[min Δ, max Δ]`, right edge inclusive.
pub fn make_bins(delta: &[f64], bins: usize, strategy: BinStrategy) -> Result<BinPartition> {
    let n = delta.len();
    if bins == 0 {
        return Err(EcethError::InvalidBinCount);
    }
    if bins > n {
        return Err(EcethError::TooManyBins { bins, n });
    }
    let (lo, hi) = delta
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if bins > 1 && lo == hi {
        return Err(EcethError::DegeneratePredictions { bins });
    }
    let mut assignment = vec![0; n];
    let mut edges = Vec::with_capacity(bins + 1);
    match strategy {
        BinStrategy::EqualFrequency => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| cmp_f64(delta[a], delta[b]).then(a.cmp(&b)));
            for (rank, &row) in order.iter().enumerate() {
                assignment[row] = rank * bins / n;
            }
            edges.push(lo);
            for k in 1..bins {
                // first rank in bin k
                let first = (k * n).div_ceil(bins);
                edges.push(0.5 * (delta[order[first - 1]] + delta[order[first]]));
            }
            edges.push(hi);
        }
        BinStrategy::EqualWidth => {
            let width = (hi - lo) / bins as f64;
            for (a, &d) in assignment.iter_mut().zip(delta) {
                *a = if width > 0.0 {
                    (((d - lo) / width).floor() as usize).min(bins - 1)
                } else {
                    0
                };
            }
            edges.extend((0..bins).map(|k| lo + k as f64 * width));
            edges.push(hi);
        }
    }
    Ok(BinPartition {
        strategy,
        edges,
        assignment,
    })
}

/// Per-bin sufficient statistics of the scores (and of the predictions, for
/// plotting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub partition: BinPartition,
    pub bin_sums: Vec<f64>,
    pub bin_counts: Vec<usize>,
    pub delta_sums: Vec<f64>,
    /// The per-row scores the curve was built from.
    pub scores: Vec<f64>,
}

impl CalibrationCurve {
    pub fn bins(&self) -> usize {
        self.bin_counts.len()
    }

    /// γ̂ for bin `k`; `None` when the bin is empty.
    pub fn bin_mean(&self, k: usize) -> Option<f64> {
        (self.bin_counts[k] > 0).then(|| self.bin_sums[k] / self.bin_counts[k] as f64)
    }

    pub fn bin_means(&self) -> Vec<Option<f64>> {
        (0..self.bins()).map(|k| self.bin_mean(k)).collect()
    }

    /// Mean prediction inside bin `k`.
    pub fn mean_delta(&self, k: usize) -> Option<f64> {
        (self.bin_counts[k] > 0).then(|| self.delta_sums[k] / self.bin_counts[k] as f64)
    }

    /// Full-sample γ̂ at row `i`'s bin.
    pub fn value(&self, i: usize) -> f64 {
        let k = self.partition.assignment[i];
        self.bin_sums[k] / self.bin_counts[k] as f64
    }

    /// γ̂ at an arbitrary prediction value, using the bin edges.
    pub fn value_at(&self, delta: f64) -> Option<f64> {
        let edges = &self.partition.edges;
        let k = edges[1..edges.len() - 1].partition_point(|&e| e < delta);
        self.bin_mean(k)
    }

    /// Rows for a calibration plot.
    pub fn plot_rows(&self) -> Vec<PlotRow> {
        let e = &self.partition.edges;
        (0..self.bins())
            .map(|k| PlotRow {
                bin_index: k,
                delta_low: e[k],
                delta_high: e[k + 1],
                mean_delta: self.mean_delta(k),
                gamma_hat: self.bin_mean(k),
                count: self.bin_counts[k],
            })
            .collect()
    }
}

/// One bin of a calibration plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub bin_index: usize,
    pub delta_low: f64,
    pub delta_high: f64,
    pub mean_delta: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub count: usize,
}

/// Per-bin mean score over `partition`.
pub fn calibration_curve(
    scores: &[f64],
    delta: &[f64],
    partition: &BinPartition,
) -> Result<CalibrationCurve> {
    let n = scores.len();
    for (what, len) in [("predictions", delta.len()), ("bin assignment", partition.assignment.len())] {
        if len != n {
            return Err(EcethError::Shape {
                what,
                expected: n,
                found: len,
            });
        }
    }
    let k = partition.bins();
    let mut bin_sums = vec![0.0; k];
    let mut delta_sums = vec![0.0; k];
    let mut bin_counts = vec![0usize; k];
    for ((&b, &s), &d) in partition.assignment.iter().zip(scores).zip(delta) {
        if b >= k {
            return Err(EcethError::EmptyBin(b));
        }
        bin_sums[b] += s;
        delta_sums[b] += d;
        bin_counts[b] += 1;
    }
    Ok(CalibrationCurve {
        partition: partition.clone(),
        bin_sums,
        bin_counts,
        delta_sums,
        scores: scores.to_vec(),
    })
}

/// Leave-one-out γ̂ at row `i`: the mean of the other scores in its bin.
pub fn loo_value(curve: &CalibrationCurve, i: usize) -> Result<f64> {
    let k = curve.partition.assignment[i];
    let count = curve.bin_counts[k];
    if count < 2 {
        return Err(EcethError::SingletonBin(k));
    }
    Ok((curve.bin_sums[k] - curve.scores[i]) / (count - 1) as f64)
}

/// Leave-one-unit-out γ̂ for every row: the mean of the other scores in
/// the row's bin after removing every row that shares its unit.
pub fn loo_values_by_unit(curve: &CalibrationCurve, units: &[usize]) -> Result<Vec<f64>> {
    let assignment = &curve.partition.assignment;
    if units.len() != assignment.len() {
        return Err(EcethError::Shape {
            what: "units",
            expected: assignment.len(),
            found: units.len(),
        });
    }
    let mut own: HashMap<(usize, usize), (usize, f64)> = HashMap::new();
    for (i, (&b, &u)) in assignment.iter().zip(units).enumerate() {
        let e = own.entry((b, u)).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += curve.scores[i];
    }
    assignment
        .iter()
        .zip(units)
        .map(|(&b, &u)| {
            let (c, s) = own[&(b, u)];
            let rest = curve.bin_counts[b] - c;
            if rest == 0 {
                return Err(EcethError::SingletonBin(b));
            }
            Ok((curve.bin_sums[b] - s) / rest as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_width_hand_example() {
        let p = make_bins(&[0.1, 0.2, 0.8, 0.9], 2, BinStrategy::EqualWidth).unwrap();
        assert_eq!(p.assignment, vec![0, 0, 1, 1]);
        assert_eq!(p.edges[0], 0.1);
        assert_eq!(p.edges[2], 0.9);
    }

    #[test]
    fn equal_frequency_exact_quantiles() {
        let delta: Vec<f64> = (1..=100).map(f64::from).collect();
        let p = make_bins(&delta, 10, BinStrategy::EqualFrequency).unwrap();
        assert_eq!(p.counts(), vec![10; 10]);
        assert_eq!(p.edges[1], 10.5);
        assert!(p.edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_bin_takes_everything() {
        for strategy in [BinStrategy::EqualFrequency, BinStrategy::EqualWidth] {
            let p = make_bins(&[3.0, -1.0, 2.0], 1, strategy).unwrap();
            assert_eq!(p.assignment, vec![0, 0, 0]);
            assert_eq!(p.edges, vec![-1.0, 3.0]);
        }
        // constant predictions are fine with one bin
        assert!(make_bins(&[1.0, 1.0], 1, BinStrategy::EqualWidth).is_ok());
    }

    #[test]
    fn bin_count_errors() {
        assert!(matches!(
            make_bins(&[1.0, 2.0], 3, BinStrategy::EqualFrequency),
            Err(EcethError::TooManyBins { bins: 3, n: 2 })
        ));
        assert!(matches!(
            make_bins(&[1.0, 1.0, 1.0], 2, BinStrategy::EqualFrequency),
            Err(EcethError::DegeneratePredictions { bins: 2 })
        ));
        assert!(matches!(
            make_bins(&[1.0], 0, BinStrategy::EqualWidth),
            Err(EcethError::InvalidBinCount)
        ));
    }

    #[test]
    fn ties_split_by_rank() {
        let delta = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let p = make_bins(&delta, 3, BinStrategy::EqualFrequency).unwrap();
        assert_eq!(p.counts(), vec![2, 2, 2]);
        assert_eq!(p.assignment, vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn curve_means() {
        let p = make_bins(&[0.0, 0.0], 1, BinStrategy::EqualWidth).unwrap();
        let c = calibration_curve(&[1.0, 3.0], &[0.0, 0.0], &p).unwrap();
        assert_eq!(c.bin_mean(0), Some(2.0));

        let p = BinPartition {
            strategy: BinStrategy::EqualWidth,
            edges: vec![0.0, 0.5, 1.0],
            assignment: vec![0, 0, 1, 1],
        };
        let c = calibration_curve(&[1.0, 2.0, 3.0, 5.0], &[0.1, 0.2, 0.7, 0.9], &p).unwrap();
        assert_eq!(c.bin_means(), vec![Some(1.5), Some(4.0)]);
        assert_eq!(c.value_at(0.3), Some(1.5));
        assert_eq!(c.value_at(0.95), Some(4.0));
    }

    #[test]
    fn loo_examples() {
        let p = make_bins(&[0.0, 0.0], 1, BinStrategy::EqualWidth).unwrap();
        let scores = [1.0, 3.0];
        let c = calibration_curve(&scores, &[0.0, 0.0], &p).unwrap();
        assert_eq!(loo_value(&c, 0).unwrap(), 3.0);
        assert_eq!(loo_value(&c, 1).unwrap(), 1.0);

        let p = make_bins(&[0.0], 1, BinStrategy::EqualWidth).unwrap();
        let c = calibration_curve(&[2.0], &[0.0], &p).unwrap();
        assert!(matches!(loo_value(&c, 0), Err(EcethError::SingletonBin(0))));
    }

    #[test]
    fn singleton_merges_with_nearest_neighbour() {
        // equal width over [0, 10] with 5 bins: 0.0, 1.0 | - | 4.5 | 6.5, 7.0 | 10
        let delta = [0.0, 1.0, 4.5, 6.5, 7.0, 10.0, 9.5];
        let mut p = make_bins(&delta, 5, BinStrategy::EqualWidth).unwrap();
        assert_eq!(p.counts(), vec![2, 0, 1, 2, 2]);
        let merges = p.merge_singletons(&delta).unwrap();
        assert_eq!(merges, 1);
        // 4.5 is 1.5 from bin 3's lower edge (6.0) and 2.5 from bin 0's upper edge (2.0)
        assert_eq!(p.counts(), vec![2, 0, 3, 2]);
        assert_eq!(p.edges, vec![0.0, 2.0, 4.0, 8.0, 10.0]);

        let mut lone = make_bins(&[1.0], 1, BinStrategy::EqualWidth).unwrap();
        assert!(lone.merge_singletons(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_weighted_mean(
            rows in proptest::collection::vec((-5.0f64..5.0, -10.0f64..10.0), 2..200),
            k in 1usize..12,
            width in proptest::bool::ANY,
        ) {
            let delta: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let scores: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let k = k.min(delta.len());
            let strategy = if width { BinStrategy::EqualWidth } else { BinStrategy::EqualFrequency };
            let p = make_bins(&delta, k, strategy).unwrap();
            let counts = p.counts();
            prop_assert_eq!(counts.iter().sum::<usize>(), delta.len());
            if !width {
                let (mn, mx) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
                prop_assert!(mx - mn <= 1);
            }
            prop_assert!(p.edges.windows(2).all(|w| w[0] <= w[1]));
            let c = calibration_curve(&scores, &delta, &p).unwrap();
            let weighted: f64 = (0..c.bins())
                .filter_map(|b| c.bin_mean(b).map(|m| m * c.bin_counts[b] as f64))
                .sum::<f64>() / delta.len() as f64;
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            prop_assert!((weighted - mean).abs() <= 1e-12 * (1.0 + mean.abs()) * 10.0);
            // every row sits between its bin's edges
            for (i, &b) in p.assignment.iter().enumerate() {
                prop_assert!(delta[i] >= p.edges[b] - 1e-12 && delta[i] <= p.edges[b + 1] + 1e-12);
            }
        }

        #[test]
        fn permutation_invariance(
            rows in proptest::collection::vec((-5.0f64..5.0, -10.0f64..10.0), 4..100),
            shift in 0usize..100,
        ) {
            let k = 3.min(rows.len());
            let mut rotated = rows.clone();
            let len = rotated.len();
            rotated.rotate_left(shift % len);
            let summary = |rows: &[(f64, f64)]| {
                let delta: Vec<f64> = rows.iter().map(|r| r.0).collect();
                let scores: Vec<f64> = rows.iter().map(|r| r.1).collect();
                let p = make_bins(&delta, k, BinStrategy::EqualWidth).unwrap();
                let c = calibration_curve(&scores, &delta, &p).unwrap();
                let mut v: Vec<(i64, usize)> = (0..c.bins())
                    .map(|b| ((c.bin_mean(b).unwrap_or(0.0) * 1e9).round() as i64, c.bin_counts[b]))
                    .collect();
                v.sort();
                v
            };
            prop_assert_eq!(summary(&rows), summary(&rotated));
        }
    }

    #[test]
    fn loo_by_unit_drops_copies() {
        // rows 0 and 1 are copies of unit 7
        let delta = [0.1, 0.1, 0.2, 0.3];
        let scores = [4.0, 4.0, 1.0, 2.0];
        let units = [7, 7, 2, 3];
        let part = make_bins(&delta, 1, BinStrategy::EqualFrequency).unwrap();
        let curve = calibration_curve(&scores, &delta, &part).unwrap();
        let loo = loo_values_by_unit(&curve, &units).unwrap();
        assert_eq!(loo, vec![1.5, 1.5, 10.0 / 3.0, 3.0]);
        // distinct units reduce to the ordinary leave-one-out mean
        let plain = loo_values_by_unit(&curve, &[0, 1, 2, 3]).unwrap();
        for (i, v) in plain.iter().enumerate() {
            assert_eq!(*v, loo_value(&curve, i).unwrap());
        }
        let only = loo_values_by_unit(&curve, &[1, 1, 1, 1]);
        assert!(matches!(only, Err(EcethError::SingletonBin(0))));
    }

    #[test]
    fn single_unit_bins_are_merged() {
        let delta = [0.0, 0.0, 0.5, 0.6, 0.9, 1.0];
        let units = [4, 4, 1, 2, 3, 5];
        let mut part = make_bins(&delta, 3, BinStrategy::EqualFrequency).unwrap();
        assert_eq!(part.counts(), vec![2, 2, 2]);
        let merged = part.merge_single_unit_bins(&delta, &units).unwrap();
        assert_eq!(merged, 1);
        assert_eq!(part.counts(), vec![4, 2]);
    }
}
