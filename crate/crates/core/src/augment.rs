//! Augmented and corrupted graph views for pretraining.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::PairEdge;
use crate::rng::Rng;

/// Lower clamp on the keep probability of any edge.
pub const MIN_KEEP: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewKind {
    Augmented1,
    Augmented2,
    Corrupted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphView {
    pub x_u: Array2<f64>,
    pub x_v: Array2<f64>,
    pub edges: Vec<PairEdge>,
    pub kind: ViewKind,
}

/// Zeroes each entry independently with probability `p`.
pub fn drop_features(x: &Array2<f64>, p: f64, rng: &mut Rng) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Validation(format!("feature drop probability {p} outside [0, 1)")));
    }
    if p == 0.0 {
        return Ok(x.clone());
    }
    let mut out = x.clone();
    out.mapv_inplace(|v| if rng.random::<f64>() < p { 0.0 } else { v });
    Ok(out)
}

/// `clamp(base_keep · w / mean(w), MIN_KEEP, 1)` for every edge.
pub fn keep_probabilities(edges: &[PairEdge], base_keep: f64) -> Vec<f64> {
    if edges.is_empty() {
        return Vec::new();
    }
    let mean = edges.iter().map(|e| e.weight).sum::<f64>() / edges.len() as f64;
    edges
        .iter()
        .map(|e| (base_keep * e.weight / mean).clamp(MIN_KEEP, 1.0))
        .collect()
}

/// Keeps each edge independently with its weight-proportional probability.
/// Retained edges keep their original weight.
pub fn drop_edges_weight_aware(edges: &[PairEdge], base_keep: f64, rng: &mut Rng) -> Result<Vec<PairEdge>> {
    if !(base_keep > 0.0 && base_keep <= 1.0) {
        return Err(Error::Validation(format!("base keep probability {base_keep} outside (0, 1]")));
    }
    Ok(edges
        .iter()
        .zip(keep_probabilities(edges, base_keep))
        .filter(|&(_, keep)| keep >= 1.0 || rng.random::<f64>() < keep)
        .map(|(e, _)| *e)
        .collect())
}

/// Feature dropping on both partitions plus weight-aware edge dropping.
pub fn augmented_view(
    x_u: &Array2<f64>,
    x_v: &Array2<f64>,
    edges: &[PairEdge],
    feature_drop: f64,
    base_keep: f64,
    kind: ViewKind,
    rng: &mut Rng,
) -> Result<GraphView> {
    Ok(GraphView {
        x_u: drop_features(x_u, feature_drop, rng)?,
        x_v: drop_features(x_v, feature_drop, rng)?,
        edges: drop_edges_weight_aware(edges, base_keep, rng)?,
        kind,
    })
}

fn permute_rows(x: &Array2<f64>, rng: &mut Rng) -> Array2<f64> {
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.shuffle(rng);
    x.select(Axis(0), &order)
}

/// Rows of each feature matrix shuffled by independent permutations, and the
/// edge set replaced by `n_random_edges` uniform `U × V` pairs of weight 1.
/// Repeated pairs are allowed.
pub fn corrupt_view(x_u: &Array2<f64>, x_v: &Array2<f64>, n_random_edges: usize, rng: &mut Rng) -> Result<GraphView> {
    if n_random_edges == 0 {
        return Err(Error::Validation("corrupted view needs at least one random edge".into()));
    }
    let (n_u, n_v) = (x_u.nrows(), x_v.nrows());
    let x_u = permute_rows(x_u, rng);
    let x_v = permute_rows(x_v, rng);
    let edges = (0..n_random_edges)
        .map(|_| PairEdge {
            u: rng.random_range(0..n_u),
            v: rng.random_range(0..n_v),
            weight: 1.0,
        })
        .collect();
    Ok(GraphView {
        x_u,
        x_v,
        edges,
        kind: ViewKind::Corrupted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use std::collections::HashSet;

    fn pair(u: usize, v: usize, weight: f64) -> PairEdge {
        PairEdge { u, v, weight }
    }

    #[test]
    fn zero_drop_is_identity() {
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i * 4 + j) as f64 + 1.0);
        assert_eq!(drop_features(&x, 0.0, &mut rng_from(1, &[])).unwrap(), x);
    }

    #[test]
    fn drop_rate_near_target() {
        let x = Array2::ones((1000, 100));
        let dropped = drop_features(&x, 0.1, &mut rng_from(2, &[])).unwrap();
        let frac = dropped.iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        // binomial sd ≈ 0.00095, so ±0.01 is a >10σ band
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
        let again = drop_features(&x, 0.1, &mut rng_from(2, &[])).unwrap();
        assert_eq!(dropped, again);
    }

    #[test]
    fn keep_probabilities_closed_forms() {
        assert_eq!(keep_probabilities(&[pair(0, 0, 1.0), pair(0, 1, 3.0)], 0.5), vec![0.25, 0.75]);
        assert_eq!(keep_probabilities(&[pair(0, 0, 4.0), pair(1, 1, 4.0)], 0.7), vec![0.7, 0.7]);
        let p = keep_probabilities(&[pair(0, 0, 1.0), pair(0, 1, 1000.0)], 1.0);
        assert_eq!(p[0], MIN_KEEP);
        assert_eq!(p[1], 1.0);
    }

    #[test]
    fn full_keep_retains_everything() {
        let edges = vec![pair(0, 0, 2.0), pair(1, 0, 2.0), pair(1, 1, 2.0)];
        let kept = drop_edges_weight_aware(&edges, 1.0, &mut rng_from(3, &[])).unwrap();
        assert_eq!(kept, edges);
        assert!(drop_edges_weight_aware(&[], 0.5, &mut rng_from(3, &[])).unwrap().is_empty());
    }

    #[test]
    fn corrupted_view_is_bipartite_with_unit_weights() {
        let x_u = Array2::from_shape_fn((7, 2), |(i, j)| (i * 2 + j) as f64);
        let x_v = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64 + 100.0);
        let view = corrupt_view(&x_u, &x_v, 40, &mut rng_from(4, &[])).unwrap();
        assert_eq!(view.edges.len(), 40);
        assert!(view.edges.iter().all(|e| e.u < 7 && e.v < 5 && e.weight == 1.0));
        let rows = |x: &Array2<f64>| -> HashSet<Vec<u64>> {
            x.rows().into_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect()
        };
        assert_eq!(rows(&view.x_u), rows(&x_u));
        assert_eq!(rows(&view.x_v), rows(&x_v));
        assert_ne!(view.x_u, x_u);
        assert!(corrupt_view(&x_u, &x_v, 0, &mut rng_from(4, &[])).is_err());
    }
}
