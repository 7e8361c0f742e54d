//! Weighted triplet pretraining objective.
//!
//! The attractive term pulls the online prediction for `u` toward the target
//! representation of its neighbour `v` in the second augmented view; the
//! repulsive term pushes it away from `v`'s representation in the corrupted
//! view. Both are weighted averages of cosine similarity over edge sets.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::PairEdge;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainLossConfig {
    pub lambda: f64,
    /// Use edge weights in the averages (otherwise every edge counts 1).
    pub weighted: bool,
}

impl PretrainLossConfig {
    pub fn new(lambda: f64, weighted: bool) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Validation(format!("lambda {lambda} outside [0, 1]")));
        }
        Ok(Self { lambda, weighted })
    }
}

fn weighted_cosine(tape: &mut Tape, from: Var, to: Var, edges: &[PairEdge], weighted: bool, what: &str) -> Result<Var> {
    if edges.is_empty() {
        return Err(Error::Validation(format!("{what} loss over an empty edge set")));
    }
    let a = tape.gather_rows(from, edges.iter().map(|e| e.u).collect())?;
    let b = tape.gather_rows(to, edges.iter().map(|e| e.v).collect())?;
    let cos = tape.row_cosine(a, b)?;
    let weights = edges
        .iter()
        .map(|e| if weighted { e.weight } else { 1.0 })
        .collect();
    tape.weighted_mean(cos, weights)
}

/// `−Σ w · cos(pred_u, target_v) / Σ w` over the first augmented view's edges.
pub fn attractive_loss(tape: &mut Tape, pred_online: Var, target: Var, edges: &[PairEdge], weighted: bool) -> Result<Var> {
    let mean = weighted_cosine(tape, pred_online, target, edges, weighted, "attractive")?;
    tape.scale(mean, -1.0)
}

/// `+Σ w · cos(pred_u, corrupted_v) / Σ w` over the corrupted view's edges.
pub fn repulsive_loss(tape: &mut Tape, pred_online: Var, target_corrupted: Var, edges: &[PairEdge], weighted: bool) -> Result<Var> {
    weighted_cosine(tape, pred_online, target_corrupted, edges, weighted, "repulsive")
}

/// `λ · repulsive + (1 − λ) · attractive`
pub fn total_pretrain_loss(tape: &mut Tape, attractive: Var, repulsive: Var, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Validation(format!("lambda {lambda} outside [0, 1]")));
    }
    let r = tape.scale(repulsive, lambda)?;
    let a = tape.scale(attractive, 1.0 - lambda)?;
    tape.add(r, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use ndarray::{array, Array2};
    use rand_distr::{Distribution, StandardNormal};

    fn randn(seed: u64, r: usize, c: usize) -> Array2<f64> {
        let mut rng = rng_from(seed, &[]);
        Array2::from_shape_simple_fn((r, c), || StandardNormal.sample(&mut rng))
    }

    fn scalar_loop(a: &Array2<f64>, b: &Array2<f64>, edges: &[PairEdge], weighted: bool) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for e in edges {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for k in 0..a.ncols() {
                dot += a[[e.u, k]] * b[[e.v, k]];
                na += a[[e.u, k]] * a[[e.u, k]];
                nb += b[[e.v, k]] * b[[e.v, k]];
            }
            let w = if weighted { e.weight } else { 1.0 };
            num += w * dot / (na.sqrt() * nb.sqrt());
            den += w;
        }
        num / den
    }

    fn edges3() -> Vec<PairEdge> {
        vec![
            PairEdge { u: 0, v: 1, weight: 1.0 },
            PairEdge { u: 2, v: 0, weight: 2.0 },
            PairEdge { u: 1, v: 1, weight: 377.0 },
        ]
    }

    #[test]
    fn attractive_identical_rows_is_minus_one() {
        let x = randn(1, 3, 4);
        let mut t = Tape::new();
        let (a, b) = (t.param(x.clone()), t.constant(x));
        let edges: Vec<_> = (0..3).map(|i| PairEdge { u: i, v: i, weight: 1.0 + i as f64 }).collect();
        let l = attractive_loss(&mut t, a, b, &edges, true).unwrap();
        assert!((t.scalar(l) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_rows_give_zero() {
        let mut t = Tape::new();
        let a = t.param(array![[1.0, 0.0], [1.0, 0.0]]);
        let b = t.constant(array![[0.0, 2.0], [0.0, -3.0]]);
        let edges = [PairEdge { u: 0, v: 0, weight: 5.0 }, PairEdge { u: 1, v: 1, weight: 1.0 }];
        let l = attractive_loss(&mut t, a, b, &edges, true).unwrap();
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn repulsive_signs() {
        let mut t = Tape::new();
        let a = t.param(array![[1.0, 2.0]]);
        let same = t.constant(array![[2.0, 4.0]]);
        let opposite = t.constant(array![[-1.0, -2.0]]);
        let e = [PairEdge { u: 0, v: 0, weight: 1.0 }];
        let l = repulsive_loss(&mut t, a, same, &e, false).unwrap();
        assert!((t.scalar(l) - 1.0).abs() < 1e-15);
        let l = repulsive_loss(&mut t, a, opposite, &e, false).unwrap();
        assert!((t.scalar(l) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_case_matches_scalar_loop() {
        let (a, b) = (randn(2, 3, 5), randn(3, 2, 5));
        for weighted in [true, false] {
            let mut t = Tape::new();
            let (va, vb) = (t.param(a.clone()), t.constant(b.clone()));
            let att = attractive_loss(&mut t, va, vb, &edges3(), weighted).unwrap();
            let rep = repulsive_loss(&mut t, va, vb, &edges3(), weighted).unwrap();
            let want = scalar_loop(&a, &b, &edges3(), weighted);
            assert!((t.scalar(att) + want).abs() <= 1e-12);
            assert!((t.scalar(rep) - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_edges_error() {
        let mut t = Tape::new();
        let a = t.param(array![[1.0]]);
        assert!(attractive_loss(&mut t, a, a, &[], true).is_err());
        assert!(repulsive_loss(&mut t, a, a, &[], true).is_err());
    }

    #[test]
    fn total_combines_terms() {
        let mut t = Tape::new();
        let att = t.param(array![[-1.0]]);
        let rep = t.param(array![[-1.0]]);
        let l = total_pretrain_loss(&mut t, att, rep, 0.5).unwrap();
        assert_eq!(t.scalar(l), -1.0);
        let att = t.param(array![[-0.3]]);
        let rep = t.param(array![[0.8]]);
        let l0 = total_pretrain_loss(&mut t, att, rep, 0.0).unwrap();
        let l1 = total_pretrain_loss(&mut t, att, rep, 1.0).unwrap();
        assert_eq!((t.scalar(l0), t.scalar(l1)), (-0.3, 0.8));
        assert!(total_pretrain_loss(&mut t, att, rep, 1.5).is_err());
    }

    #[test]
    fn equal_weights_make_weighting_irrelevant() {
        let (a, b) = (randn(4, 3, 3), randn(5, 2, 3));
        let edges: Vec<_> = edges3().into_iter().map(|e| PairEdge { weight: 1.0, ..e }).collect();
        let mut t = Tape::new();
        let (va, vb) = (t.param(a), t.constant(b));
        let w = attractive_loss(&mut t, va, vb, &edges, true).unwrap();
        let nw = attractive_loss(&mut t, va, vb, &edges, false).unwrap();
        assert_eq!(t.scalar(w).to_bits(), t.scalar(nw).to_bits());
    }

    #[test]
    fn row_scaling_leaves_loss_unchanged() {
        let (a, b) = (randn(6, 3, 4), randn(7, 2, 4));
        let mut scaled = a.clone();
        scaled.row_mut(1).mapv_inplace(|x| 7.5 * x);
        let mut t = Tape::new();
        let (va, vs, vb) = (t.param(a), t.param(scaled), t.constant(b));
        let l1 = attractive_loss(&mut t, va, vb, &edges3(), true).unwrap();
        let l2 = attractive_loss(&mut t, vs, vb, &edges3(), true).unwrap();
        assert!((t.scalar(l1) - t.scalar(l2)).abs() < 1e-10);
    }
}
