//! Planted-community bipartite graph generator.
//!
//! Left node `i` belongs to community `i % communities`, right node `j` to
//! `j % communities`, and community `c` on the left is matched with `c` on the
//! right. Most pairs are drawn inside matched communities; features are a noisy
//! one-hot of the community padded with pure-noise columns. With
//! `block_structure` off every pair is drawn uniformly, which leaves nothing for
//! a link predictor to learn.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Dataset, Edge, IdMap, IdMaps};
use crate::rng::{rng_from, Rng};

/// Tail index of the weight distribution. Small enough that a few weights hit
/// the cap even at `weight_skew` in the hundreds.
const WEIGHT_TAIL: f64 = 1.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_u: usize,
    pub n_v: usize,
    /// Distinct `(u, v)` pairs, one event each.
    pub n_edges: usize,
    /// Cap on the integer power-law weights; 1 makes the graph unweighted.
    pub weight_skew: u32,
    pub block_structure: bool,
    /// Timestamps are uniform over `0..time_span`.
    pub time_span: i64,
    pub seed: u64,
    pub communities: usize,
    /// Share of edges drawn inside matched communities.
    pub intra_fraction: f64,
    /// Pure-noise feature columns appended on each side.
    pub noise_dims_u: usize,
    pub noise_dims_v: usize,
    /// Standard deviation of the Gaussian noise added to every feature.
    pub feature_noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_u: 200,
            n_v: 300,
            n_edges: 4000,
            weight_skew: 50,
            block_structure: true,
            time_span: 1_000_000,
            seed: 0,
            communities: 10,
            intra_fraction: 0.95,
            noise_dims_u: 2,
            noise_dims_v: 6,
            feature_noise: 0.5,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if self.n_u == 0 || self.n_v == 0 || self.n_edges == 0 {
            return Err(Error::Validation("n_u, n_v and n_edges must be positive".into()));
        }
        if self.weight_skew == 0 {
            return Err(Error::Validation("weight_skew must be at least 1".into()));
        }
        if self.time_span <= 0 {
            return Err(Error::Validation("time_span must be positive".into()));
        }
        if self.communities == 0 || self.communities > self.n_u.min(self.n_v) {
            return Err(Error::Validation(format!(
                "communities must lie in 1..={}",
                self.n_u.min(self.n_v)
            )));
        }
        if !(0.0..=1.0).contains(&self.intra_fraction) || !(self.feature_noise >= 0.0) {
            return Err(Error::Validation("intra_fraction must lie in [0, 1] and feature_noise be nonnegative".into()));
        }
        if self.n_edges > self.n_u * self.n_v {
            return Err(Error::Validation(format!(
                "{} edges requested but only {} distinct pairs exist",
                self.n_edges,
                self.n_u * self.n_v
            )));
        }
        Ok(())
    }
}

fn members(n: usize, c: usize, k: usize) -> Vec<usize> {
    (c..n).step_by(k).collect()
}

/// `count` distinct pairs drawn uniformly from the pairs accepted by `keep`,
/// of which there are `available`.
fn distinct_pairs(
    n_u: usize,
    n_v: usize,
    count: usize,
    available: usize,
    keep: impl Fn(usize, usize) -> bool,
    rng: &mut Rng,
) -> Result<Vec<(usize, usize)>> {
    if count > available {
        return Err(Error::Validation(format!(
            "{count} pairs requested from a class with only {available}"
        )));
    }
    if 2 * count >= available {
        let all: Vec<(usize, usize)> = (0..n_u)
            .flat_map(|u| (0..n_v).map(move |v| (u, v)))
            .filter(|&(u, v)| keep(u, v))
            .collect();
        return Ok(sample_indices(rng, all.len(), count).into_iter().map(|i| all[i]).collect());
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let pair = (rng.random_range(0..n_u), rng.random_range(0..n_v));
        if keep(pair.0, pair.1) && seen.insert(pair) {
            out.push(pair);
        }
    }
    Ok(out)
}

fn features(n: usize, k: usize, noise_dims: usize, sd: f64, rng: &mut Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, sd).expect("finite sd");
    Array2::from_shape_fn((n, k + noise_dims), |(i, j)| {
        let base = if j < k && i % k == j { 1.0 } else { 0.0 };
        base + if sd > 0.0 { normal.sample(rng) } else { 0.0 }
    })
}

pub fn generate(params: &SynthParams) -> Result<Dataset> {
    params.validate()?;
    let (n_u, n_v, k) = (params.n_u, params.n_v, params.communities);
    let mut rng = rng_from(params.seed, &[]);

    let pairs = if params.block_structure {
        let intra_available: usize = (0..k).map(|c| members(n_u, c, k).len() * members(n_v, c, k).len()).sum();
        let cross_available = n_u * n_v - intra_available;
        let n_intra = ((params.intra_fraction * params.n_edges as f64).round() as usize).min(params.n_edges);
        let same = move |u: usize, v: usize| u % k == v % k;
        let mut pairs = distinct_pairs(n_u, n_v, n_intra, intra_available, same, &mut rng)?;
        pairs.extend(distinct_pairs(
            n_u,
            n_v,
            params.n_edges - n_intra,
            cross_available,
            move |u, v| !same(u, v),
            &mut rng,
        )?);
        pairs
    } else {
        distinct_pairs(n_u, n_v, params.n_edges, n_u * n_v, |_, _| true, &mut rng)?
    };

    let pareto = Pareto::new(1.0, WEIGHT_TAIL).expect("valid pareto");
    let cap = f64::from(params.weight_skew);
    let edges = pairs
        .into_iter()
        .map(|(u, v)| Edge {
            u,
            v,
            weight: pareto.sample(&mut rng).floor().min(cap),
            timestamp: rng.random_range(0..params.time_span),
        })
        .collect();

    let x_u = features(n_u, k, params.noise_dims_u, params.feature_noise, &mut rng);
    let x_v = features(n_v, k, params.noise_dims_v, params.feature_noise, &mut rng);
    Ok(Dataset {
        graph: BipartiteGraph::new(x_u, x_v, edges)?,
        ids: IdMaps {
            u: IdMap::sequential(n_u),
            v: IdMap::sequential(n_v),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthParams {
        SynthParams {
            n_u: 40,
            n_v: 60,
            n_edges: 300,
            communities: 4,
            ..SynthParams::default()
        }
    }

    #[test]
    fn unit_skew_is_unweighted() {
        let d = generate(&SynthParams { weight_skew: 1, ..small() }).unwrap();
        assert!(d.graph.edges().iter().all(|e| e.weight == 1.0));
    }

    #[test]
    fn requested_size_and_weight_cap() {
        let d = generate(&SynthParams::default()).unwrap();
        let edges = d.graph.edges();
        assert_eq!(edges.len(), 4000);
        assert!(edges.iter().all(|e| e.weight >= 1.0 && e.weight <= 50.0 && e.weight.fract() == 0.0));
        assert!(edges.iter().any(|e| e.weight > 1.0));
        let distinct: HashSet<(usize, usize)> = edges.iter().map(|e| (e.u, e.v)).collect();
        assert_eq!(distinct.len(), 4000);
        assert!(edges.iter().all(|e| (0..1_000_000).contains(&e.timestamp)));
    }

    #[test]
    fn planted_blocks_dominate() {
        let d = generate(&small()).unwrap();
        let intra = d.graph.edges().iter().filter(|e| e.u % 4 == e.v % 4).count();
        assert_eq!(intra, 285);
        let control = generate(&SynthParams { block_structure: false, ..small() }).unwrap();
        let intra = control.graph.edges().iter().filter(|e| e.u % 4 == e.v % 4).count() as f64 / 300.0;
        assert!((intra - 0.25).abs() < 0.1, "{intra}");
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        assert_ne!(generate(&small()).unwrap(), generate(&SynthParams { seed: 1, ..small() }).unwrap());
    }

    #[test]
    fn infeasible_requests_fail() {
        assert!(generate(&SynthParams { n_edges: 40 * 60 + 1, ..small() }).is_err());
        // 4 communities of 10×15 hold 600 intra pairs
        assert!(generate(&SynthParams { n_edges: 1000, intra_fraction: 1.0, ..small() }).is_err());
        assert!(generate(&SynthParams { communities: 41, ..small() }).is_err());
    }
}
