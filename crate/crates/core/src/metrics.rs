//! Ranking and threshold metrics for link prediction, plus multi-seed aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores with binary labels. `weights` are carried for reporting and are not
/// used by the ranking metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPairs {
    scores: Vec<f64>,
    labels: Vec<bool>,
    weights: Option<Vec<f64>>,
}

impl ScoredPairs {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Validation("NaN score".into()));
        }
        Ok(Self {
            scores,
            labels,
            weights: None,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.scores.len() {
            return Err(Error::Validation("weights length differs from scores".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    /// Positives first, then negatives.
    pub fn from_split(pos: &[f64], neg: &[f64]) -> Result<Self> {
        let scores = pos.iter().chain(neg).copied().collect();
        let labels = std::iter::repeat_n(true, pos.len())
            .chain(std::iter::repeat_n(false, neg.len()))
            .collect();
        Self::new(scores, labels)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn counts(&self) -> (usize, usize) {
        let p = self.labels.iter().filter(|&&l| l).count();
        (p, self.labels.len() - p)
    }

    /// Indices in descending score order; equal scores keep input order.
    fn descending_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

/// Probability that a random positive outscores a random negative, ties counted ½.
pub fn roc_auc(sp: &ScoredPairs) -> Result<f64> {
    let (p, n) = sp.counts();
    if p == 0 || n == 0 {
        return Err(Error::Validation("ROC-AUC needs at least one positive and one negative".into()));
    }
    let mut idx: Vec<usize> = (0..sp.len()).collect();
    idx.sort_by(|&a, &b| sp.scores[a].total_cmp(&sp.scores[b]));
    // Twice the Mann–Whitney U statistic; midranks of tie groups keep it an integer.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && sp.scores[idx[j + 1]] == sp.scores[idx[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1, midrank = (i + j + 2) / 2
        let twice_midrank = (i + j + 2) as u128;
        let pos_in_group = idx[i..=j].iter().filter(|&&k| sp.labels[k]).count() as u128;
        twice_rank_sum += twice_midrank * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (p as u128, n as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Mean over positives of precision at the positive's rank, walking scores in
/// descending order with equal scores kept in input order.
pub fn average_precision(sp: &ScoredPairs) -> Result<f64> {
    let (p, _) = sp.counts();
    if p == 0 {
        return Err(Error::Validation("average precision needs at least one positive".into()));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in sp.descending_order().iter().enumerate() {
        if sp.labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / p as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitsMode {
    /// Each positive is ranked against the shared negative pool: a hit when it
    /// scores strictly above the k-th highest negative.
    #[default]
    NegativePool,
    /// Fraction of the k highest-scoring pairs (all labels) that are positive.
    TopK,
}

pub fn hits_at_k(sp: &ScoredPairs, k: usize, mode: HitsMode) -> Result<f64> {
    if k == 0 {
        return Err(Error::Validation("Hits@K needs k ≥ 1".into()));
    }
    let (p, n) = sp.counts();
    if n == 0 {
        return Err(Error::Validation("Hits@K needs at least one negative".into()));
    }
    if p == 0 {
        return Err(Error::Validation("Hits@K needs at least one positive".into()));
    }
    match mode {
        HitsMode::NegativePool => {
            if n < k {
                return Ok(1.0);
            }
            let mut neg: Vec<f64> = sp
                .scores
                .iter()
                .zip(&sp.labels)
                .filter(|(_, &l)| !l)
                .map(|(&s, _)| s)
                .collect();
            neg.sort_by(|a, b| b.total_cmp(a));
            let threshold = neg[k - 1];
            let hits = sp
                .scores
                .iter()
                .zip(&sp.labels)
                .filter(|(&s, &l)| l && s > threshold)
                .count();
            Ok(hits as f64 / p as f64)
        }
        HitsMode::TopK => {
            let order = sp.descending_order();
            let top = &order[..k.min(order.len())];
            let hits = top.iter().filter(|&&i| sp.labels[i]).count();
            Ok(hits as f64 / top.len() as f64)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// A zero denominator was replaced by 0.
    pub degenerate: bool,
}

/// Precision, recall and F1 with prediction `score ≥ t`.
pub fn threshold_prf(sp: &ScoredPairs, t: f64) -> Prf {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &l) in sp.scores.iter().zip(&sp.labels) {
        match (s >= t, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let mut degenerate = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            degenerate = true;
            0.0
        } else {
            num / den
        }
    };
    let precision = ratio(tp as f64, (tp + fp) as f64);
    let recall = ratio(tp as f64, (tp + fn_) as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Prf {
        precision,
        recall,
        f1,
        degenerate,
    }
}

pub const ROC_AUC: &str = "roc_auc";
pub const AP: &str = "ap";
pub const F1: &str = "f1";
pub const RECALL: &str = "recall";
pub const PRECISION: &str = "precision";
pub const HITS_AT_50: &str = "hits_at_50";

/// Metric keys in report column order.
pub const METRIC_ORDER: [&str; 6] = [ROC_AUC, AP, F1, RECALL, PRECISION, HITS_AT_50];

const METRIC_HEADERS: [&str; 6] = [
    "ROC-AUC",
    "AP",
    "F1-Score (t = 0.5)",
    "Recall (t = 0.5)",
    "Precision (t = 0.5)",
    "Hits@50",
];

/// The six link-prediction metrics for one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub roc_auc: f64,
    pub ap: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub hits_at_50: f64,
    pub prf_degenerate: bool,
}

impl LinkMetrics {
    /// Scores must be probabilities; the threshold metrics use 0.5. The Hits
    /// value is stored under `hits_at_50` whatever `hits_k` is.
    pub fn compute(sp: &ScoredPairs, hits_k: usize, hits_mode: HitsMode) -> Result<Self> {
        let prf = threshold_prf(sp, 0.5);
        Ok(Self {
            roc_auc: roc_auc(sp)?,
            ap: average_precision(sp)?,
            f1: prf.f1,
            recall: prf.recall,
            precision: prf.precision,
            hits_at_50: hits_at_k(sp, hits_k, hits_mode)?,
            prf_degenerate: prf.degenerate,
        })
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            (ROC_AUC.to_owned(), self.roc_auc),
            (AP.to_owned(), self.ap),
            (F1.to_owned(), self.f1),
            (RECALL.to_owned(), self.recall),
            (PRECISION.to_owned(), self.precision),
            (HITS_AT_50.to_owned(), self.hits_at_50),
        ])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Per-seed metric values and their mean / sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub per_seed: BTreeMap<String, Vec<f64>>,
    pub aggregate: BTreeMap<String, MeanStd>,
}

/// Aggregates metric maps from at least two seeds. All maps must carry the same keys.
pub fn aggregate(entries: &[(u64, BTreeMap<String, f64>)]) -> Result<EvalReport> {
    if entries.len() < 2 {
        return Err(Error::Validation(format!(
            "aggregation needs at least 2 seeds, got {}",
            entries.len()
        )));
    }
    let keys: Vec<&String> = entries[0].1.keys().collect();
    for (seed, m) in entries {
        if m.keys().collect::<Vec<_>>() != keys {
            return Err(Error::Validation(format!("seed {seed} has a different metric set")));
        }
    }
    let mut per_seed = BTreeMap::new();
    let mut agg = BTreeMap::new();
    for key in keys {
        let values: Vec<f64> = entries.iter().map(|(_, m)| m[key]).collect();
        // Welford
        let (mut mean, mut m2) = (0.0, 0.0);
        for (i, &x) in values.iter().enumerate() {
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
        }
        let std = (m2 / (values.len() - 1) as f64).sqrt();
        agg.insert(key.clone(), MeanStd { mean, std });
        per_seed.insert(key.clone(), values);
    }
    Ok(EvalReport {
        seeds: entries.iter().map(|(s, _)| *s).collect(),
        per_seed,
        aggregate: agg,
    })
}

impl EvalReport {
    /// One CSV row: `label` followed by `mean ± std` for the six metrics.
    pub fn table_row(&self, label: &str) -> String {
        let mut row = label.to_owned();
        for key in METRIC_ORDER {
            match self.aggregate.get(key) {
                Some(ms) => write!(row, ",{:.4} ± {:.4}", ms.mean, ms.std).unwrap(),
                None => row.push(','),
            }
        }
        row
    }
}

/// Header matching [`EvalReport::table_row`].
pub fn table_header() -> String {
    let mut h = "Model".to_owned();
    for name in METRIC_HEADERS {
        h.push(',');
        h.push_str(name);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sp(pos: &[f64], neg: &[f64]) -> ScoredPairs {
        ScoredPairs::from_split(pos, neg).unwrap()
    }

    /// O(P·N) pair counting.
    fn auc_oracle(s: &ScoredPairs) -> f64 {
        let mut twice = 0u64;
        let (mut p, mut n) = (0u64, 0u64);
        for (i, &li) in s.labels().iter().enumerate() {
            if li {
                p += 1
            } else {
                n += 1
            }
            if !li {
                continue;
            }
            for (j, &lj) in s.labels().iter().enumerate() {
                if lj {
                    continue;
                }
                let (a, b) = (s.scores()[i], s.scores()[j]);
                twice += if a > b {
                    2
                } else if a == b {
                    1
                } else {
                    0
                };
            }
        }
        twice as f64 / (2 * p * n) as f64
    }

    #[test]
    fn auc_basic_cases() {
        assert_eq!(roc_auc(&sp(&[0.9], &[0.1])).unwrap(), 1.0);
        assert_eq!(roc_auc(&sp(&[0.3, 0.3], &[0.3, 0.3, 0.3])).unwrap(), 0.5);
        assert!(roc_auc(&sp(&[0.3], &[])).is_err());
        let mixed = sp(&[0.8, 0.4, 0.4], &[0.4, 0.1, 0.9]);
        assert_eq!(roc_auc(&mixed).unwrap(), auc_oracle(&mixed));
    }

    #[test]
    fn ap_closed_forms() {
        assert_eq!(average_precision(&sp(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 1.0);
        let last = sp(&[0.01], &[0.5, 0.6, 0.7, 0.8]);
        assert_eq!(average_precision(&last).unwrap(), 1.0 / 5.0);
        assert!(average_precision(&sp(&[], &[0.5])).is_err());
    }

    #[test]
    fn ap_ties_follow_input_order() {
        // positive listed first wins the tie
        assert_eq!(average_precision(&sp(&[0.5], &[0.5])).unwrap(), 1.0);
        let s = ScoredPairs::new(vec![0.5, 0.5], vec![false, true]).unwrap();
        assert_eq!(average_precision(&s).unwrap(), 0.5);
    }

    #[test]
    fn hits_basic_cases() {
        let neg: Vec<f64> = (0..60).map(|i| i as f64 / 100.0).collect();
        assert_eq!(hits_at_k(&sp(&[0.9, 0.95], &neg), 50, HitsMode::NegativePool).unwrap(), 1.0);
        assert_eq!(hits_at_k(&sp(&[-1.0], &neg), 50, HitsMode::NegativePool).unwrap(), 0.0);
        // fewer negatives than k: every positive counts
        assert_eq!(hits_at_k(&sp(&[-1.0], &[0.0, 1.0]), 50, HitsMode::NegativePool).unwrap(), 1.0);
        assert!(hits_at_k(&sp(&[0.5], &[]), 50, HitsMode::NegativePool).is_err());
        // 50th highest negative is 0.10; strictly above required
        assert_eq!(hits_at_k(&sp(&[0.10, 0.11], &neg), 50, HitsMode::NegativePool).unwrap(), 0.5);
    }

    #[test]
    fn hits_top_k_mode() {
        let s = sp(&[0.9, 0.2], &[0.8, 0.1, 0.05]);
        assert_eq!(hits_at_k(&s, 2, HitsMode::TopK).unwrap(), 0.5);
        assert_eq!(hits_at_k(&s, 1, HitsMode::TopK).unwrap(), 1.0);
        assert_eq!(hits_at_k(&s, 50, HitsMode::TopK).unwrap(), 0.4);
    }

    #[test]
    fn prf_cases() {
        let perfect = threshold_prf(&sp(&[0.9, 0.6], &[0.1, 0.4]), 0.5);
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
        assert!(!perfect.degenerate);
        let none = threshold_prf(&sp(&[0.2], &[0.1]), 0.5);
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        assert!(none.degenerate);
        // 8 pairs: tp=2 (0.9, 0.5), fn=2 (0.3, 0.49), fp=1 (0.7), tn=3
        let mixed = threshold_prf(&sp(&[0.9, 0.5, 0.3, 0.49], &[0.7, 0.2, 0.1, 0.0]), 0.5);
        assert_eq!(mixed.precision, 2.0 / 3.0);
        assert_eq!(mixed.recall, 0.5);
        assert!((mixed.f1 - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_closed_forms() {
        let m = |x: f64| BTreeMap::from([("a".to_owned(), x)]);
        let r = aggregate(&[(1, m(0.9)), (2, m(1.0))]).unwrap();
        assert!((r.aggregate["a"].mean - 0.95).abs() < 1e-15);
        assert!((r.aggregate["a"].std - 0.070710678).abs() < 1e-8);
        let same = aggregate(&[(1, m(0.7)), (2, m(0.7)), (3, m(0.7))]).unwrap();
        assert_eq!(same.aggregate["a"].std, 0.0);
        assert!(aggregate(&[(1, m(0.7))]).is_err());
        let other = BTreeMap::from([("b".to_owned(), 0.1)]);
        assert!(aggregate(&[(1, m(0.7)), (2, other)]).is_err());
    }

    #[test]
    fn table_row_shape() {
        let m = LinkMetrics {
            roc_auc: 0.9,
            ap: 0.8,
            f1: 0.7,
            recall: 0.6,
            precision: 0.5,
            hits_at_50: 0.4,
            prf_degenerate: false,
        };
        let r = aggregate(&[(42, m.to_map()), (43, m.to_map())]).unwrap();
        let row = r.table_row("NWP_NWB");
        assert_eq!(row, "NWP_NWB,0.9000 ± 0.0000,0.8000 ± 0.0000,0.7000 ± 0.0000,0.6000 ± 0.0000,0.5000 ± 0.0000,0.4000 ± 0.0000");
        assert_eq!(table_header().split(',').count(), 7);
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            scores in proptest::collection::vec(-5.0f64..5.0, 2..40),
            labels in proptest::collection::vec(any::<bool>(), 40),
        ) {
            let labels: Vec<bool> = labels[..scores.len()].to_vec();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let a = ScoredPairs::new(scores.clone(), labels.clone()).unwrap();
            let b = ScoredPairs::new(scores.iter().map(|s| (3.0 * s).exp()).collect(), labels).unwrap();
            prop_assert_eq!(roc_auc(&a).unwrap(), roc_auc(&b).unwrap());
        }

        #[test]
        fn hits_monotone_in_k(
            pos in proptest::collection::vec(0.0f64..1.0, 1..20),
            neg in proptest::collection::vec(0.0f64..1.0, 1..80),
        ) {
            let s = sp(&pos, &neg);
            let mut prev = 0.0;
            for k in 1..100 {
                let h = hits_at_k(&s, k, HitsMode::NegativePool).unwrap();
                prop_assert!(h >= prev);
                prev = h;
            }
        }

        #[test]
        fn ap_is_one_iff_positives_lead(
            pos in proptest::collection::vec(0u8..20, 1..10),
            neg in proptest::collection::vec(0u8..20, 1..10),
        ) {
            let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
            let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
            let min_pos = pos.iter().cloned().fold(f64::INFINITY, f64::min);
            let max_neg = neg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // negatives listed first so ties never favour positives
            let s = ScoredPairs::new(
                neg.iter().chain(&pos).copied().collect(),
                std::iter::repeat_n(false, neg.len()).chain(std::iter::repeat_n(true, pos.len())).collect(),
            ).unwrap();
            prop_assert_eq!(average_precision(&s).unwrap() == 1.0, min_pos > max_neg);
        }
    }
}
