//! Weighted bipartite GCN encoder, per-partition projector and predictor heads,
//! the EMA target network and the MLP link decoder.
//!
//! Matrices use the row convention: each node is a row, so a linear layer is
//! `H · W + b`.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{normalized_adjacency, CsrMatrix, PairEdge};
use crate::params::{Bound, Params};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelDims {
    pub d_u: usize,
    pub d_v: usize,
    /// Shared width the per-partition input projections map into.
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Decoder widths after the concatenated `2 × output_dim` input.
    pub decoder_hidden: (usize, usize),
}

/// Uniform Glorot initialization.
pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
}

fn linear(p: &mut Params, name: &str, rows: usize, cols: usize, rng: &mut Rng) {
    p.insert(format!("{name}.w"), glorot(rows, cols, rng));
    p.insert(format!("{name}.b"), Array2::zeros((1, cols)));
}

pub const HEADS: [&str; 4] = ["proj_u", "proj_v", "pred_u", "pred_v"];

/// Encoder and head parameters for the online network. The target network is
/// a copy of the same set.
pub fn init_encoder_and_heads(dims: &ModelDims, rng: &mut Rng) -> Params {
    let mut p = Params::new();
    linear(&mut p, "enc.in_u", dims.d_u, dims.input_dim, rng);
    linear(&mut p, "enc.in_v", dims.d_v, dims.input_dim, rng);
    linear(&mut p, "enc.gcn0", dims.input_dim, dims.hidden_dim, rng);
    linear(&mut p, "enc.gcn1", dims.hidden_dim, dims.output_dim, rng);
    let unk = Normal::new(0.0, 0.01).expect("valid sigma");
    for name in ["enc.unk_u", "enc.unk_v"] {
        p.insert(
            name,
            Array2::from_shape_simple_fn((1, dims.output_dim), || unk.sample(rng)),
        );
    }
    for head in HEADS {
        linear(&mut p, &format!("{head}.l1"), dims.output_dim, dims.hidden_dim, rng);
        p.insert(format!("{head}.slope"), Array2::from_elem((1, 1), 0.25));
        linear(&mut p, &format!("{head}.l2"), dims.hidden_dim, dims.output_dim, rng);
    }
    p
}

pub fn init_decoder(dims: &ModelDims, rng: &mut Rng) -> Params {
    let (h1, h2) = dims.decoder_hidden;
    let mut p = Params::new();
    linear(&mut p, "dec.l0", 2 * dims.output_dim, h1, rng);
    linear(&mut p, "dec.l1", h1, h2, rng);
    linear(&mut p, "dec.l2", h2, 1, rng);
    p
}

fn affine(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let h = tape.matmul(x, p.get(&format!("{name}.w")))?;
    tape.add_row_bias(h, p.get(&format!("{name}.b")))
}

/// Graph inputs for one encoder pass.
#[derive(Clone, Debug)]
pub struct GraphInput {
    pub n_u: usize,
    pub n_v: usize,
    pub adj: Rc<CsrMatrix>,
    pub x_u: Array2<f64>,
    pub x_v: Array2<f64>,
}

impl GraphInput {
    pub fn new(x_u: Array2<f64>, x_v: Array2<f64>, pairs: &[PairEdge]) -> Self {
        let (n_u, n_v) = (x_u.nrows(), x_v.nrows());
        Self {
            n_u,
            n_v,
            adj: Rc::new(normalized_adjacency(n_u, n_v, pairs)),
            x_u,
            x_v,
        }
    }
}

/// Stochastic pieces of an encoder pass.
pub struct EncodeOptions<'a> {
    /// Dropout between the two GCN layers, with its randomness.
    pub dropout: Option<(f64, &'a mut Rng)>,
    /// Apply ReLU after the final GCN layer as well.
    pub relu_final: bool,
}

impl EncodeOptions<'_> {
    pub fn eval(relu_final: bool) -> Self {
        Self {
            dropout: None,
            relu_final,
        }
    }
}

/// Two-layer weighted GCN over the stacked `[U; V]` nodes:
/// `H¹ = ReLU(Ã H⁰ W⁰ + b⁰)`, `H² = Ã H¹ W¹ + b¹`, where `H⁰` stacks the
/// input-projected features. Returns the `U` and `V` blocks of `H²`.
pub fn encode(tape: &mut Tape, p: &Bound, g: &GraphInput, opts: EncodeOptions<'_>) -> Result<(Var, Var)> {
    if g.x_u.nrows() != g.n_u || g.x_v.nrows() != g.n_v || g.adj.dim() != g.n_u + g.n_v {
        return Err(Error::Shape {
            op: "encode",
            left: (g.n_u, g.n_v),
            right: (g.x_u.nrows(), g.x_v.nrows()),
        });
    }
    let xu = tape.constant(g.x_u.clone());
    let xv = tape.constant(g.x_v.clone());
    let hu = affine(tape, p, "enc.in_u", xu)?;
    let hv = affine(tape, p, "enc.in_v", xv)?;
    let h0 = tape.concat_rows(hu, hv)?;

    let m = tape.sparse_matmul(g.adj.clone(), h0)?;
    let h1 = affine(tape, p, "enc.gcn0", m)?;
    let mut h1 = tape.relu(h1)?;
    if let Some((rate, rng)) = opts.dropout {
        h1 = tape.dropout(h1, rate, rng)?;
    }

    let m = tape.sparse_matmul(g.adj.clone(), h1)?;
    let mut h2 = affine(tape, p, "enc.gcn1", m)?;
    if opts.relu_final {
        h2 = tape.relu(h2)?;
    }
    let out_u = tape.slice_rows(h2, 0, g.n_u)?;
    let out_v = tape.slice_rows(h2, g.n_u, g.n_v)?;
    Ok((out_u, out_v))
}

/// `PReLU(H W₁ + b₁) W₂ + b₂` with the head's own parameters.
pub fn head(tape: &mut Tape, p: &Bound, name: &str, h: Var) -> Result<Var> {
    let z = affine(tape, p, &format!("{name}.l1"), h)?;
    let z = tape.prelu(z, p.get(&format!("{name}.slope")))?;
    affine(tape, p, &format!("{name}.l2"), z)
}

/// Projectors applied per partition.
pub fn project(tape: &mut Tape, p: &Bound, h_u: Var, h_v: Var) -> Result<(Var, Var)> {
    Ok((head(tape, p, "proj_u", h_u)?, head(tape, p, "proj_v", h_v)?))
}

/// Predictors applied per partition.
pub fn predict_heads(tape: &mut Tape, p: &Bound, z_u: Var, z_v: Var) -> Result<(Var, Var)> {
    Ok((head(tape, p, "pred_u", z_u)?, head(tape, p, "pred_v", z_v)?))
}

/// Online parameters, their EMA target copy and the EMA coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub online: Params,
    pub target: Params,
    pub tau: f64,
}

impl ModelState {
    /// Target starts as an exact copy of the online network.
    pub fn new(online: Params, tau: f64) -> Self {
        Self {
            target: online.clone(),
            online,
            tau,
        }
    }

    /// `θ_target ← τ θ_target + (1 − τ) θ_online` over every encoder and head parameter.
    pub fn ema_update(&mut self) {
        ema_update(&mut self.target, &self.online, self.tau);
    }

    pub fn checksum(&self) -> String {
        format!("{}:{}", self.online.checksum(), self.target.checksum())
    }
}

pub fn ema_update(target: &mut Params, online: &Params, tau: f64) {
    debug_assert!(target.aligned_with(online));
    for ((_, t), (_, o)) in target.iter_mut().zip(online.iter()) {
        t.zip_mut_with(o, |t, &o| *t = tau * *t + (1.0 - tau) * o);
    }
}

/// `MLP([h_u ‖ h_v])` logits for each pair, as an `M × 1` column.
pub fn decode(tape: &mut Tape, dec: &Bound, emb_u: Var, emb_v: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let hu = tape.gather_rows(emb_u, pairs.iter().map(|p| p.0).collect())?;
    let hv = tape.gather_rows(emb_v, pairs.iter().map(|p| p.1).collect())?;
    let x = tape.concat_cols(hu, hv)?;
    let x = affine(tape, dec, "dec.l0", x)?;
    let x = tape.relu(x)?;
    let x = affine(tape, dec, "dec.l1", x)?;
    let x = tape.relu(x)?;
    affine(tape, dec, "dec.l2", x)
}

/// Pre-sigmoid decoder scores without recording gradients.
pub fn decode_logits(dec: &Params, emb_u: &Array2<f64>, emb_v: &Array2<f64>, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = dec.bind(&mut tape, false);
    let eu = tape.constant(emb_u.clone());
    let ev = tape.constant(emb_v.clone());
    let out = decode(&mut tape, &bound, eu, ev, pairs)?;
    Ok(tape.value(out).column(0).to_vec())
}

/// Encoder output for every node with no dropout and no gradient.
pub fn embed(params: &Params, g: &GraphInput, relu_final: bool) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let (u, v) = encode(&mut tape, &bound, g, EncodeOptions::eval(relu_final))?;
    Ok((tape.value(u).clone(), tape.value(v).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_gradients;
    use crate::rng::rng_from;
    use ndarray::{array, s};

    fn dims() -> ModelDims {
        ModelDims {
            d_u: 3,
            d_v: 2,
            input_dim: 4,
            hidden_dim: 5,
            output_dim: 3,
            decoder_hidden: (6, 4),
        }
    }

    fn randomize_biases(p: &mut Params, rng: &mut Rng) {
        let names: Vec<String> = p.names().filter(|n| n.ends_with(".b")).cloned().collect();
        for n in names {
            let b = p.get_mut(&n).unwrap();
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }

    fn relu(a: &Array2<f64>) -> Array2<f64> {
        a.mapv(|x| x.max(0.0))
    }

    fn dense_affine(p: &Params, name: &str, x: &Array2<f64>) -> Array2<f64> {
        x.dot(p.get(&format!("{name}.w")).unwrap()) + p.get(&format!("{name}.b")).unwrap()
    }

    fn dense_head(p: &Params, name: &str, h: &Array2<f64>) -> Array2<f64> {
        let slope = p.get(&format!("{name}.slope")).unwrap()[[0, 0]];
        let z = dense_affine(p, &format!("{name}.l1"), h).mapv(|x| if x > 0.0 { x } else { slope * x });
        dense_affine(p, &format!("{name}.l2"), &z)
    }

    /// Hand-rolled dense normalized adjacency for a pair list.
    fn dense_adjacency(n_u: usize, n_v: usize, pairs: &[PairEdge]) -> Array2<f64> {
        let n = n_u + n_v;
        let mut a = Array2::<f64>::eye(n);
        for p in pairs {
            a[[p.u, n_u + p.v]] += p.weight;
            a[[n_u + p.v, p.u]] += p.weight;
        }
        let d: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
        Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] / (d[i] * d[j]).sqrt())
    }

    fn toy_graph() -> (GraphInput, Vec<PairEdge>) {
        let pairs = vec![
            PairEdge { u: 0, v: 0, weight: 1.0 },
            PairEdge { u: 1, v: 0, weight: 3.0 },
            PairEdge { u: 1, v: 1, weight: 2.0 },
        ];
        let x_u = array![[0.5, -1.0, 2.0], [1.0, 0.0, -0.5]];
        let x_v = array![[0.3, 0.7], [-1.2, 0.4]];
        (GraphInput::new(x_u, x_v, &pairs), pairs)
    }

    #[test]
    fn encoder_matches_dense_oracle() {
        let mut rng = rng_from(3, &[]);
        let mut p = init_encoder_and_heads(&dims(), &mut rng);
        randomize_biases(&mut p, &mut rng);
        let (g, pairs) = toy_graph();
        let (eu, ev) = embed(&p, &g, false).unwrap();

        let a = dense_adjacency(2, 2, &pairs);
        let h0 = ndarray::concatenate(
            ndarray::Axis(0),
            &[dense_affine(&p, "enc.in_u", &g.x_u).view(), dense_affine(&p, "enc.in_v", &g.x_v).view()],
        )
        .unwrap();
        let h1 = relu(&dense_affine(&p, "enc.gcn0", &a.dot(&h0)));
        let h2 = dense_affine(&p, "enc.gcn1", &a.dot(&h1));
        let diff_u = (&eu - &h2.slice(s![..2, ..])).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
        let diff_v = (&ev - &h2.slice(s![2.., ..])).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
        assert!(diff_u < 1e-10 && diff_v < 1e-10, "{diff_u} {diff_v}");
    }

    #[test]
    fn zero_features_and_biases_give_zero_embeddings() {
        let mut rng = rng_from(4, &[]);
        let p = init_encoder_and_heads(&dims(), &mut rng);
        let pairs = [PairEdge { u: 0, v: 1, weight: 2.0 }];
        let g = GraphInput::new(Array2::zeros((2, 3)), Array2::zeros((2, 2)), &pairs);
        let (eu, ev) = embed(&p, &g, false).unwrap();
        assert!(eu.iter().chain(ev.iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn isolated_node_depends_only_on_own_features() {
        let mut rng = rng_from(5, &[]);
        let p = init_encoder_and_heads(&dims(), &mut rng);
        let pairs = [PairEdge { u: 0, v: 0, weight: 1.0 }];
        let x_u = array![[1.0, 2.0, 3.0], [0.1, -0.2, 0.3]];
        let g1 = GraphInput::new(x_u.clone(), array![[1.0, 1.0], [0.0, 0.0]], &pairs);
        let g2 = GraphInput::new(x_u, array![[-4.0, 9.0], [0.0, 0.0]], &pairs);
        let (a, _) = embed(&p, &g1, false).unwrap();
        let (b, _) = embed(&p, &g2, false).unwrap();
        assert_eq!(a.row(1), b.row(1));
        assert_ne!(a.row(0), b.row(0));
    }

    #[test]
    fn identity_head_passes_nonnegative_input() {
        let mut p = Params::new();
        for l in ["l1", "l2"] {
            p.insert(format!("proj_u.{l}.w"), Array2::eye(3));
            p.insert(format!("proj_u.{l}.b"), Array2::zeros((1, 3)));
        }
        p.insert("proj_u.slope", array![[0.25]]);
        let h = array![[0.0, 1.0, 2.5], [3.0, 0.5, 0.0]];
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let hv = tape.constant(h.clone());
        let z = head(&mut tape, &b, "proj_u", hv).unwrap();
        assert_eq!(tape.value(z), &h);
        let zero = tape.constant(Array2::zeros((2, 3)));
        let z = head(&mut tape, &b, "proj_u", zero).unwrap();
        assert!(tape.value(z).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn heads_match_dense_oracle() {
        let mut rng = rng_from(8, &[]);
        let mut p = init_encoder_and_heads(&dims(), &mut rng);
        randomize_biases(&mut p, &mut rng);
        for h in HEADS {
            p.get_mut(&format!("{h}.slope")).unwrap()[[0, 0]] = rng.random_range(-0.5..0.5);
        }
        let hu = glorot(4, 3, &mut rng);
        let hv = glorot(5, 3, &mut rng);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let (vu, vv) = (tape.constant(hu.clone()), tape.constant(hv.clone()));
        let (zu, zv) = project(&mut tape, &b, vu, vv).unwrap();
        let (pu, pv) = predict_heads(&mut tape, &b, zu, zv).unwrap();
        let ezu = dense_head(&p, "proj_u", &hu);
        let ezv = dense_head(&p, "proj_v", &hv);
        let checks = [
            (tape.value(zu), ezu.clone()),
            (tape.value(zv), ezv.clone()),
            (tape.value(pu), dense_head(&p, "pred_u", &ezu)),
            (tape.value(pv), dense_head(&p, "pred_v", &ezv)),
        ];
        for (got, want) in checks {
            let d = (got - &want).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
            assert!(d < 1e-10, "{d}");
        }
    }

    #[test]
    fn ema_arithmetic() {
        let one = Params::from_iter([("w".to_owned(), array![[1.0]])]);
        let zero = Params::from_iter([("w".to_owned(), array![[0.0]])]);
        let mut t = one.clone();
        ema_update(&mut t, &zero, 1.0);
        assert_eq!(t, one);
        ema_update(&mut t, &zero, 0.0);
        assert_eq!(t, zero);
        let mut t = one.clone();
        ema_update(&mut t, &zero, 0.99);
        assert_eq!(t.get("w").unwrap()[[0, 0]], 0.99);
    }

    #[test]
    fn decoder_zero_weights_give_half_probability() {
        let mut rng = rng_from(1, &[]);
        let mut dec = init_decoder(&dims(), &mut rng);
        for (_, v) in dec.iter_mut() {
            v.fill(0.0);
        }
        let eu = glorot(3, 3, &mut rng);
        let ev = glorot(2, 3, &mut rng);
        let logits = decode_logits(&dec, &eu, &ev, &[(0, 1), (2, 0)]).unwrap();
        assert_eq!(logits, vec![0.0, 0.0]);
        assert!(matches!(decode_logits(&dec, &eu, &ev, &[(3, 0)]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn decoder_is_order_sensitive_and_matches_dense() {
        let mut rng = rng_from(2, &[]);
        let mut dec = init_decoder(&dims(), &mut rng);
        randomize_biases(&mut dec, &mut rng);
        let e = glorot(3, 3, &mut rng);
        let logits = decode_logits(&dec, &e, &e, &[(0, 1), (1, 0)]).unwrap();
        assert_ne!(logits[0], logits[1]);

        let x = ndarray::concatenate(ndarray::Axis(1), &[e.slice(s![0..1, ..]), e.slice(s![1..2, ..])]).unwrap();
        let h = relu(&dense_affine(&dec, "dec.l0", &x));
        let h = relu(&dense_affine(&dec, "dec.l1", &h));
        let want = dense_affine(&dec, "dec.l2", &h)[[0, 0]];
        assert!((logits[0] - want).abs() < 1e-10);
    }

    #[test]
    fn encoder_and_heads_gradcheck() {
        let mut rng = rng_from(11, &[]);
        let mut p = init_encoder_and_heads(&dims(), &mut rng);
        randomize_biases(&mut p, &mut rng);
        let (g, _) = toy_graph();
        let names: Vec<String> = p.names().cloned().collect();
        let values: Vec<Array2<f64>> = names.iter().map(|n| p.get(n).unwrap().clone()).collect();
        let report = check_gradients(&values, 1e-5, |tape, vars| {
            let b = Bound::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            let (hu, hv) = encode(tape, &b, &g, EncodeOptions::eval(false))?;
            let (zu, zv) = project(tape, &b, hu, hv)?;
            let (pu, _) = predict_heads(tape, &b, zu, zv)?;
            let c = tape.row_cosine(pu, zu)?;
            tape.sum(c)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
