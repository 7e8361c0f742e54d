//! Two-phase training: bootstrapped self-supervised pretraining of the encoder,
//! then a supervised link decoder on frozen embeddings.

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augmented_view, corrupt_view, GraphView, ViewKind};
use crate::autodiff::{Adam, AdamConfig, Tape, Var};
use crate::config::VariantConfig;
use crate::error::{Error, Result};
use crate::graph::{aggregate_pairs, BipartiteGraph, Edge, NegativeSampler, PairEdge, TemporalSplit};
use crate::loss::{attractive_loss, repulsive_loss, total_pretrain_loss};
use crate::metrics::{hits_at_k, roc_auc, LinkMetrics, ScoredPairs};
use crate::model::{self, decode, decode_logits, encode, head, init_decoder, init_encoder_and_heads, EncodeOptions, GraphInput, ModelState};
use crate::params::{Bound, Params};
use crate::rng::{rng_from, stream};

#[derive(Clone, Debug)]
pub struct PretrainOutput {
    pub state: ModelState,
    /// Total loss per epoch.
    pub losses: Vec<f64>,
}

fn view_input(view: &GraphView) -> GraphInput {
    GraphInput::new(view.x_u.clone(), view.x_v.clone(), &view.edges)
}

fn swapped(edges: &[PairEdge]) -> Vec<PairEdge> {
    edges
        .iter()
        .map(|e| PairEdge {
            u: e.v,
            v: e.u,
            weight: e.weight,
        })
        .collect()
}

/// Target-side representations (projector outputs, or raw encoder outputs when
/// `raw`) for both partitions. Computed without gradient tracking.
fn target_reps(target: &Params, g: &GraphInput, cfg: &VariantConfig) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut tape = Tape::new();
    let b = target.bind(&mut tape, false);
    let (hu, hv) = encode(&mut tape, &b, g, EncodeOptions::eval(cfg.relu_final))?;
    if cfg.loss_on_raw_embeddings {
        return Ok((tape.value(hu).clone(), tape.value(hv).clone()));
    }
    let (zu, zv) = model::project(&mut tape, &b, hu, hv)?;
    Ok((tape.value(zu).clone(), tape.value(zv).clone()))
}

fn unk_rows(n: usize, fraction: f64, rng: &mut crate::rng::Rng) -> Vec<usize> {
    let count = (fraction * n as f64).round() as usize;
    if count == 0 || n == 0 {
        return Vec::new();
    }
    sample_indices(rng, n, count.min(n)).into_vec()
}

/// Online-side prediction for one partition from encoder output `h`.
fn online_prediction(tape: &mut Tape, b: &Bound, side: char, h: Var, raw: bool) -> Result<Var> {
    if raw {
        return head(tape, b, &format!("pred_{side}"), h);
    }
    let z = head(tape, b, &format!("proj_{side}"), h)?;
    head(tape, b, &format!("pred_{side}"), z)
}

/// One optimization step of the triplet objective. Returns the loss value.
fn pretrain_step(state: &mut ModelState, adam: &mut Adam, train_x: (&Array2<f64>, &Array2<f64>), pairs: &[PairEdge], cfg: &VariantConfig, seed: u64, epoch: usize) -> Result<f64> {
    let e = epoch as u64;
    let (x_u, x_v) = train_x;
    let v1 = augmented_view(x_u, x_v, pairs, cfg.feature_drop_p, cfg.edge_keep, ViewKind::Augmented1, &mut rng_from(seed, &[stream::VIEW, e, 1]))?;
    let v2 = augmented_view(x_u, x_v, pairs, cfg.feature_drop_p, cfg.edge_keep, ViewKind::Augmented2, &mut rng_from(seed, &[stream::VIEW, e, 2]))?;
    let vc = corrupt_view(x_u, x_v, v1.edges.len().max(1), &mut rng_from(seed, &[stream::CORRUPT, e]))?;

    let (t2_u, t2_v) = target_reps(&state.target, &view_input(&v2), cfg)?;
    let (tc_u, tc_v) = target_reps(&state.target, &view_input(&vc), cfg)?;

    let mut tape = Tape::new();
    let b = state.online.bind(&mut tape, true);
    let g1 = view_input(&v1);
    let mut drop_rng = rng_from(seed, &[stream::DROPOUT, e]);
    let (hu, hv) = encode(
        &mut tape,
        &b,
        &g1,
        EncodeOptions {
            dropout: Some((cfg.dropout, &mut drop_rng)),
            relu_final: cfg.relu_final,
        },
    )?;
    let mut unk_rng = rng_from(seed, &[stream::UNK, e]);
    let rows_u = unk_rows(g1.n_u, cfg.unk_fraction, &mut unk_rng);
    let rows_v = unk_rows(g1.n_v, cfg.unk_fraction, &mut unk_rng);
    let hu = if rows_u.is_empty() { hu } else { tape.substitute_rows(hu, b.get("enc.unk_u"), rows_u)? };
    let hv = if rows_v.is_empty() { hv } else { tape.substitute_rows(hv, b.get("enc.unk_v"), rows_v)? };

    let raw = cfg.loss_on_raw_embeddings;
    let pu = online_prediction(&mut tape, &b, 'u', hu, raw)?;
    let t2v = tape.constant(t2_v);
    let tcv = tape.constant(tc_v);
    let attr = attractive_loss(&mut tape, pu, t2v, &v1.edges, cfg.wp)?;
    let rep = repulsive_loss(&mut tape, pu, tcv, &vc.edges, cfg.wp)?;
    let mut loss = total_pretrain_loss(&mut tape, attr, rep, cfg.lambda)?;

    if cfg.symmetrize {
        let pv = online_prediction(&mut tape, &b, 'v', hv, raw)?;
        let t2u = tape.constant(t2_u);
        let tcu = tape.constant(tc_u);
        let attr = attractive_loss(&mut tape, pv, t2u, &swapped(&v1.edges), cfg.wp)?;
        let rep = repulsive_loss(&mut tape, pv, tcu, &swapped(&vc.edges), cfg.wp)?;
        let other = total_pretrain_loss(&mut tape, attr, rep, cfg.lambda)?;
        let sum = tape.add(loss, other)?;
        loss = tape.scale(sum, 0.5)?;
    }

    let value = tape.scalar(loss);
    tape.backward(loss)?;
    adam.step(&mut state.online, &Params::collect_grads(&tape, &b))?;
    state.ema_update();
    Ok(value)
}

/// Self-supervised pretraining on the train-era graph.
///
/// Each epoch draws two augmented views and one corrupted view, runs the
/// online network on view 1 and the target network on view 2 and the
/// corrupted view, takes one optimizer step on the online parameters and one
/// EMA step on the target.
pub fn pretrain(split: &TemporalSplit, cfg: &VariantConfig, seed: u64) -> Result<PretrainOutput> {
    cfg.validate()?;
    let train = &split.train;
    let pairs = train.pairs(cfg.wp);
    if pairs.is_empty() {
        return Err(Error::Validation("train graph has no edges".into()));
    }
    let dims = cfg.dims(train.x_u().ncols(), train.x_v().ncols());
    let online = init_encoder_and_heads(&dims, &mut rng_from(seed, &[stream::INIT]));
    let mut state = ModelState::new(online, cfg.tau);
    let mut adam = Adam::new(AdamConfig::new(cfg.lr, cfg.weight_decay));
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        let loss = pretrain_step(&mut state, &mut adam, (train.x_u(), train.x_v()), &pairs, cfg, seed, epoch).map_err(|e| match e {
            Error::NonFinite(_) | Error::NonFiniteGradient(_) => Error::NonFiniteLoss(epoch),
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        log::debug!("pretrain epoch {epoch}: loss {loss:.6}");
        losses.push(loss);
    }
    Ok(PretrainOutput { state, losses })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Train,
    TrainVal,
}

/// Frozen encoder output for every node plus the UNK rows.
///
/// Row `n` of each matrix (one past the last node) is the UNK embedding, and
/// every node not touched by an edge of the encoded graph also carries it.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenEmbeddings {
    pub emb_u: Array2<f64>,
    pub emb_v: Array2<f64>,
    pub known_u: Vec<bool>,
    pub known_v: Vec<bool>,
    pub provenance: Provenance,
}

impl FrozenEmbeddings {
    pub fn n_u(&self) -> usize {
        self.known_u.len()
    }

    pub fn n_v(&self) -> usize {
        self.known_v.len()
    }

    pub fn unk_u(&self) -> usize {
        self.n_u()
    }

    pub fn unk_v(&self) -> usize {
        self.n_v()
    }

    /// Dense row indices for a node pair, with unknown nodes mapped to UNK.
    pub fn resolve(&self, u: usize, v: usize) -> (usize, usize) {
        let ru = if self.known_u.get(u).copied().unwrap_or(false) { u } else { self.unk_u() };
        let rv = if self.known_v.get(v).copied().unwrap_or(false) { v } else { self.unk_v() };
        (ru, rv)
    }

    pub fn resolve_all(&self, pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
        pairs.iter().map(|&(u, v)| self.resolve(u, v)).collect()
    }
}

fn with_unk(h: Array2<f64>, known: &[bool], unk: &Array2<f64>) -> Array2<f64> {
    let mut out = ndarray::concatenate(ndarray::Axis(0), &[h.view(), unk.view()]).expect("unk width matches");
    for (i, &k) in known.iter().enumerate() {
        if !k {
            out.row_mut(i).assign(&unk.row(0));
        }
    }
    out
}

/// Online-encoder embeddings over `graph` (no dropout, no gradients).
pub fn extract_embeddings(state: &ModelState, graph: &BipartiteGraph, cfg: &VariantConfig, provenance: Provenance) -> Result<FrozenEmbeddings> {
    let g = GraphInput::new(graph.x_u().clone(), graph.x_v().clone(), &graph.pairs(cfg.wp));
    let (hu, hv) = model::embed(&state.online, &g, cfg.relu_final)?;
    let (known_u, known_v) = graph.seen_nodes();
    let unk = |name: &str| state.online.get(name).cloned().ok_or_else(|| Error::Checkpoint(format!("missing `{name}`")));
    Ok(FrozenEmbeddings {
        emb_u: with_unk(hu, &known_u, &unk("enc.unk_u")?),
        emb_v: with_unk(hv, &known_v, &unk("enc.unk_v")?),
        known_u,
        known_v,
        provenance,
    })
}

#[derive(Clone, Debug)]
pub struct DecoderOutput {
    pub params: Params,
    /// Epoch (0-based) of the returned checkpoint.
    pub best_epoch: usize,
    pub best_monitor: (f64, f64),
    pub epochs_run: usize,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    /// Monitor Hits@K per epoch.
    pub monitor_hits: Vec<f64>,
}

/// Positive decoder targets: one entry per distinct pair, weighted by summed
/// event weight when `weighted`.
pub fn positive_targets(edges: &[Edge], weighted: bool) -> Vec<PairEdge> {
    aggregate_pairs(edges, weighted)
}

fn monitor_score(dec: &Params, emb: &FrozenEmbeddings, pos: &[(usize, usize)], neg: &[(usize, usize)], k: usize, mode: crate::metrics::HitsMode) -> Result<(f64, f64)> {
    let pos_s = decode_logits(dec, &emb.emb_u, &emb.emb_v, pos)?;
    let neg_s = decode_logits(dec, &emb.emb_u, &emb.emb_v, neg)?;
    let sp = ScoredPairs::from_split(&pos_s, &neg_s)?;
    Ok((hits_at_k(&sp, k, mode)?, roc_auc(&sp)?))
}

/// Minibatch weighted-BCE training of the link decoder on frozen embeddings.
///
/// A `monitor_fraction` slice of the positives is held back; each epoch the
/// rest are paired with freshly sampled negatives at 1:1. Early stopping
/// tracks Hits@K on the held-back slice (ties broken by ROC-AUC) and returns
/// the best epoch's parameters.
pub fn train_decoder(emb: &FrozenEmbeddings, positives: &[PairEdge], sampler: &NegativeSampler, cfg: &VariantConfig, seed: u64) -> Result<DecoderOutput> {
    cfg.validate()?;
    if positives.is_empty() {
        return Err(Error::Validation("decoder training needs at least one positive pair".into()));
    }
    let out_dim = emb.emb_u.ncols();
    let mut dims = cfg.dims(0, 0);
    dims.output_dim = out_dim;
    let mut params = init_decoder(&dims, &mut rng_from(seed, &[stream::DECODER_INIT]));
    let mut adam = Adam::new(AdamConfig::new(cfg.lr, cfg.weight_decay));

    let mut order: Vec<usize> = (0..positives.len()).collect();
    order.shuffle(&mut rng_from(seed, &[stream::MONITOR, 0]));
    let n_monitor = if positives.len() >= 2 {
        ((cfg.monitor_fraction * positives.len() as f64).round() as usize).clamp(1, positives.len() - 1)
    } else {
        0
    };
    let (mon_idx, train_idx) = order.split_at(n_monitor);
    let train_pos: Vec<PairEdge> = train_idx.iter().map(|&i| positives[i]).collect();
    let monitor = if n_monitor > 0 {
        let pos: Vec<(usize, usize)> = mon_idx.iter().map(|&i| emb.resolve(positives[i].u, positives[i].v)).collect();
        let want = n_monitor.max(2 * cfg.hits_k).min(sampler.available());
        let neg = sampler.sample(want, &mut rng_from(seed, &[stream::MONITOR, 1]))?;
        Some((pos, emb.resolve_all(&neg.pairs)))
    } else {
        None
    };

    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut losses = Vec::new();
    let mut monitor_hits = Vec::new();
    let mut epochs_run = 0;

    for epoch in 0..cfg.decoder_epochs {
        let e = epoch as u64;
        let neg = sampler.sample(train_pos.len(), &mut rng_from(seed, &[stream::DECODER_NEG, e]))?;
        // (u, v, label, weight)
        let mut batch_items: Vec<(usize, usize, f64, f64)> = train_pos
            .iter()
            .map(|p| {
                let (u, v) = emb.resolve(p.u, p.v);
                (u, v, 1.0, if cfg.wb { p.weight } else { 1.0 })
            })
            .chain(neg.pairs.iter().map(|&(u, v)| {
                let (u, v) = emb.resolve(u, v);
                (u, v, 0.0, 1.0)
            }))
            .collect();
        batch_items.shuffle(&mut rng_from(seed, &[stream::DECODER_SHUFFLE, e]));

        let mut epoch_loss = 0.0;
        for chunk in batch_items.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let b = params.bind(&mut tape, true);
            let eu = tape.constant(emb.emb_u.clone());
            let ev = tape.constant(emb.emb_v.clone());
            let pairs: Vec<(usize, usize)> = chunk.iter().map(|c| (c.0, c.1)).collect();
            let logits = decode(&mut tape, &b, eu, ev, &pairs)?;
            let loss = tape.bce_with_logits(logits, chunk.iter().map(|c| c.2).collect(), chunk.iter().map(|c| c.3).collect())?;
            epoch_loss += tape.scalar(loss) * chunk.len() as f64;
            tape.backward(loss)?;
            adam.step(&mut params, &Params::collect_grads(&tape, &b))?;
        }
        losses.push(epoch_loss / batch_items.len() as f64);
        epochs_run = epoch + 1;

        let Some((mon_pos, mon_neg)) = &monitor else {
            best_params = params.clone();
            best_epoch = epoch;
            continue;
        };
        let score = monitor_score(&params, emb, mon_pos, mon_neg, cfg.hits_k, cfg.hits_mode)?;
        monitor_hits.push(score.0);
        if score > best {
            best = score;
            best_params = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(DecoderOutput {
        params: best_params,
        best_epoch,
        best_monitor: best,
        epochs_run,
        losses,
        monitor_hits,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalEvaluation {
    pub metrics: LinkMetrics,
    pub n_test_positives: usize,
    pub n_test_negatives: usize,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scores test positives against fresh negatives using embeddings recomputed
/// on the train + validation history.
pub fn evaluate_final(state: &ModelState, split: &TemporalSplit, decoder: &Params, cfg: &VariantConfig, seed: u64) -> Result<FinalEvaluation> {
    let history = split.train_val_graph()?;
    let emb = extract_embeddings(state, &history, cfg, Provenance::TrainVal)?;
    let pos_pairs: Vec<(usize, usize)> = aggregate_pairs(&split.test_edges, false).iter().map(|p| (p.u, p.v)).collect();
    if pos_pairs.is_empty() {
        return Err(Error::Validation("no test positives".into()));
    }
    let sampler = NegativeSampler::new(split);
    let n_neg = ((cfg.test_negative_ratio * pos_pairs.len() as f64).round() as usize).max(1);
    let neg = sampler.sample(n_neg, &mut rng_from(seed, &[stream::TEST_NEG]))?;
    let pos_s = decode_logits(decoder, &emb.emb_u, &emb.emb_v, &emb.resolve_all(&pos_pairs))?;
    let neg_s = decode_logits(decoder, &emb.emb_u, &emb.emb_v, &emb.resolve_all(&neg.pairs))?;
    let prob = |s: Vec<f64>| s.into_iter().map(sigmoid).collect::<Vec<_>>();
    let sp = ScoredPairs::from_split(&prob(pos_s), &prob(neg_s))?;
    Ok(FinalEvaluation {
        metrics: LinkMetrics::compute(&sp, cfg.hits_k, cfg.hits_mode)?,
        n_test_positives: pos_pairs.len(),
        n_test_negatives: neg.pairs.len(),
    })
}
