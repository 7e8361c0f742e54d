//! End-to-end runs: one seed through the whole pipeline, seed grids with
//! on-disk manifests and checkpoints, the four-variant ablation, and
//! re-evaluation from saved checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::config::{VariantConfig, VARIANTS};
use crate::error::{Error, Result};
use crate::graph::{chronological_split, load_graph, Dataset, NegativeSampler, TemporalSplit, DEFAULT_FRACTIONS};
use crate::metrics::{aggregate, table_header, EvalReport, LinkMetrics, ROC_AUC};
use crate::model::ModelState;
use crate::params::Params;
use crate::synth::{generate, SynthParams};
use crate::trainer::{evaluate_final, extract_embeddings, positive_targets, pretrain, train_decoder, Provenance};

pub const DEFAULT_SEEDS: [u64; 5] = [42, 43, 44, 45, 46];

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ENCODER_FILE: &str = "encoder.ckpt";
pub const DECODER_FILE: &str = "decoder.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Files {
        edges: PathBuf,
        u_features: PathBuf,
        v_features: PathBuf,
    },
    Synthetic(SynthParams),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Files {
                edges,
                u_features,
                v_features,
            } => load_graph(edges, u_features, v_features),
            DataSource::Synthetic(p) => generate(p),
        }
    }
}

/// SHA-256 over node counts, feature bits, events and raw node ids.
pub fn dataset_hash(d: &Dataset) -> String {
    let mut h = Sha256::new();
    let g = &d.graph;
    for x in [g.x_u(), g.x_v()] {
        h.update((x.nrows() as u64).to_le_bytes());
        h.update((x.ncols() as u64).to_le_bytes());
        for v in x.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.update((g.edges().len() as u64).to_le_bytes());
    for e in g.edges() {
        h.update((e.u as u64).to_le_bytes());
        h.update((e.v as u64).to_le_bytes());
        h.update(e.weight.to_bits().to_le_bytes());
        h.update(e.timestamp.to_le_bytes());
    }
    for map in [&d.ids.u, &d.ids.v] {
        for i in 0..map.len() {
            let id = map.id(i).unwrap_or_default();
            h.update((id.len() as u64).to_le_bytes());
            h.update(id.as_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub boundary_ties: bool,
}

impl SplitSizes {
    fn of(split: &TemporalSplit) -> Self {
        Self {
            train: split.train.edges().len(),
            val: split.val_edges.len(),
            test: split.test_edges.len(),
            boundary_ties: split.boundary_ties,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checksums {
    /// Online and target encoder state before the decoder phase.
    pub encoder_before_decoder: String,
    pub encoder_after_decoder: String,
    pub decoder: String,
}

/// Everything reproducible about one seed's run. Timing lives in
/// [`SeedManifest::wall_clock_secs`] and is the only nondeterministic field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub variant: String,
    pub seed: u64,
    pub config: VariantConfig,
    pub dataset_hash: String,
    pub split: SplitSizes,
    pub pretrain_losses: Vec<f64>,
    pub decoder_losses: Vec<f64>,
    pub monitor_hits: Vec<f64>,
    pub best_epoch: usize,
    pub decoder_epochs_run: usize,
    pub metrics: LinkMetrics,
    pub n_test_positives: usize,
    pub n_test_negatives: usize,
    pub checksums: Checksums,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub manifest: SeedManifest,
    pub state: ModelState,
    pub decoder: Params,
}

/// split → pretrain → extract → decoder → test evaluation, for one seed.
pub fn run_seed(split: &TemporalSplit, dataset_hash: &str, cfg: &VariantConfig, seed: u64) -> Result<SeedRun> {
    let started = Instant::now();
    let pre = pretrain(split, cfg, seed)?;
    let state = pre.state;
    let emb = extract_embeddings(&state, &split.train, cfg, Provenance::Train)?;
    let positives = positive_targets(&split.val_edges, true);
    let sampler = NegativeSampler::new(split);

    let before = state.checksum();
    let dec = train_decoder(&emb, &positives, &sampler, cfg, seed)?;
    let after = state.checksum();
    if before != after {
        return Err(Error::EncoderMutated);
    }

    let eval = evaluate_final(&state, split, &dec.params, cfg, seed)?;
    log::info!(
        "{} seed {seed}: roc_auc {:.4}, hits {:.4}, best decoder epoch {}",
        cfg.variant_name(),
        eval.metrics.roc_auc,
        eval.metrics.hits_at_50,
        dec.best_epoch
    );
    Ok(SeedRun {
        manifest: SeedManifest {
            variant: cfg.variant_name(),
            seed,
            config: cfg.clone(),
            dataset_hash: dataset_hash.to_owned(),
            split: SplitSizes::of(split),
            pretrain_losses: pre.losses,
            decoder_losses: dec.losses,
            monitor_hits: dec.monitor_hits,
            best_epoch: dec.best_epoch,
            decoder_epochs_run: dec.epochs_run,
            metrics: eval.metrics,
            n_test_positives: eval.n_test_positives,
            n_test_negatives: eval.n_test_negatives,
            checksums: Checksums {
                encoder_before_decoder: before,
                encoder_after_decoder: after,
                decoder: dec.params.checksum(),
            },
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
        state,
        decoder: dec.params,
    })
}

/// Runs `f` over `items` on up to `workers` threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                out.lock().expect("no panics while held")[i] = Some(r);
            });
        }
    });
    out.into_inner()
        .expect("threads joined")
        .into_iter()
        .map(|r| r.expect("every index filled"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: String,
    pub config: VariantConfig,
    pub dataset_hash: String,
    pub runs: Vec<SeedManifest>,
    pub failures: Vec<SeedFailure>,
    /// Present when at least two seeds succeeded.
    pub summary: Option<EvalReport>,
}

impl RunReport {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary.as_ref()?.aggregate.get(metric).map(|m| m.mean)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_seed(dir: &Path, run: &SeedRun) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(MANIFEST_FILE), &run.manifest)?;
    checkpoint::save(&run.state.online, &dir.join(ENCODER_FILE))?;
    checkpoint::save(&run.decoder, &dir.join(DECODER_FILE))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Runs every seed on an already-loaded dataset. Seeds that fail are recorded
/// and the rest still run. With `out_dir`, writes one directory per seed plus
/// `report.json` and `report.csv`.
pub fn run_seeds(dataset: &Dataset, cfg: &VariantConfig, seeds: &[u64], out_dir: Option<&Path>, workers: usize) -> Result<RunReport> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::Validation("no seeds given".into()));
    }
    let hash = dataset_hash(dataset);
    let split = chronological_split(dataset, DEFAULT_FRACTIONS)?;
    let results = par_map(seeds, workers, |&seed| {
        let run = run_seed(&split, &hash, cfg, seed)?;
        if let Some(out) = out_dir {
            write_seed(&seed_dir(out, seed), &run)?;
        }
        Ok::<_, Error>(run.manifest)
    });

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (&seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(m) => runs.push(m),
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                failures.push(SeedFailure { seed, error: e.to_string() });
            }
        }
    }
    let summary = if runs.len() >= 2 {
        let entries: Vec<(u64, BTreeMap<String, f64>)> = runs.iter().map(|m| (m.seed, m.metrics.to_map())).collect();
        Some(aggregate(&entries)?)
    } else {
        None
    };
    let report = RunReport {
        variant: cfg.variant_name(),
        config: cfg.clone(),
        dataset_hash: hash,
        runs,
        failures,
        summary,
    };
    if let Some(out) = out_dir {
        fs::create_dir_all(out)?;
        write_json(&out.join("report.json"), &report)?;
        let mut csv = table_header();
        csv.push('\n');
        if let Some(s) = &report.summary {
            csv.push_str(&s.table_row(&report.variant));
            csv.push('\n');
        }
        fs::write(out.join("report.csv"), csv)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<RunReport>,
    /// Largest difference in mean ROC-AUC between any two variants.
    pub max_roc_auc_gap: f64,
    pub max_gap_between: (String, String),
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&RunReport> {
        self.variants.iter().find(|r| r.variant == name)
    }

    pub fn table_csv(&self) -> String {
        let mut csv = table_header();
        csv.push('\n');
        for r in &self.variants {
            if let Some(s) = &r.summary {
                csv.push_str(&s.table_row(&r.variant));
                csv.push('\n');
            }
        }
        csv
    }
}

/// The four weighting variants over the same dataset and seeds.
pub fn run_ablation(dataset: &Dataset, base: &VariantConfig, seeds: &[u64], out_dir: Option<&Path>, workers: usize) -> Result<AblationReport> {
    let mut variants = Vec::new();
    for (wp, wb) in VARIANTS {
        let cfg = base.clone().with_variant(wp, wb);
        let sub = out_dir.map(|o| o.join(cfg.variant_name()));
        variants.push(run_seeds(dataset, &cfg, seeds, sub.as_deref(), workers)?);
    }
    let mut gap = 0.0;
    let mut between = (String::new(), String::new());
    for (i, a) in variants.iter().enumerate() {
        for b in &variants[i + 1..] {
            if let (Some(x), Some(y)) = (a.mean(ROC_AUC), b.mean(ROC_AUC)) {
                if (x - y).abs() >= gap {
                    gap = (x - y).abs();
                    between = (a.variant.clone(), b.variant.clone());
                }
            }
        }
    }
    let report = AblationReport {
        variants,
        max_roc_auc_gap: gap,
        max_gap_between: between,
    };
    if let Some(out) = out_dir {
        fs::create_dir_all(out)?;
        write_json(&out.join("ablation.json"), &report)?;
        fs::write(out.join("table.csv"), report.table_csv())?;
    }
    Ok(report)
}

pub fn read_manifest(seed_dir: &Path) -> Result<SeedManifest> {
    Ok(serde_json::from_str(&fs::read_to_string(seed_dir.join(MANIFEST_FILE))?)?)
}

/// Re-scores the test split from a seed directory's checkpoints.
pub fn eval_only(seed_dir: &Path, dataset: &Dataset) -> Result<LinkMetrics> {
    let manifest = read_manifest(seed_dir)?;
    let hash = dataset_hash(dataset);
    if hash != manifest.dataset_hash {
        return Err(Error::Validation(format!(
            "dataset hash {hash} does not match the run's {}",
            manifest.dataset_hash
        )));
    }
    let encoder = checkpoint::load(&seed_dir.join(ENCODER_FILE))?;
    let decoder = checkpoint::load(&seed_dir.join(DECODER_FILE))?;
    let split = chronological_split(dataset, DEFAULT_FRACTIONS)?;
    let state = ModelState::new(encoder, manifest.config.tau);
    Ok(evaluate_final(&state, &split, &decoder, &manifest.config, manifest.seed)?.metrics)
}
