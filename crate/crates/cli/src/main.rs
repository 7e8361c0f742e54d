use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wbgrl_core::config::VariantConfig;
use wbgrl_core::experiment::{eval_only, run_ablation, run_seeds, DataSource, DEFAULT_SEEDS};
use wbgrl_core::graph::{write_graph, Dataset};
use wbgrl_core::metrics::{table_header, HitsMode};
use wbgrl_core::synth::SynthParams;
use wbgrl_core::{checkpoint, synth};

const EDGES_FILE: &str = "edges.csv";
const U_FEATURES_FILE: &str = "u_features.csv";
const V_FEATURES_FILE: &str = "v_features.csv";

/// Weighted bipartite graph representation learning and link prediction.
#[derive(Parser)]
#[command(name = "wbgrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-community synthetic dataset as edge and feature CSVs.
    GenSynth(GenSynthArgs),
    /// Train and evaluate one variant over a list of seeds.
    Run(RunArgs),
    /// Run all four weighting variants and write a comparison table.
    Ablate(RunArgs),
    /// Re-evaluate a finished seed from its checkpoints.
    EvalOnly(EvalOnlyArgs),
    /// Print the parameter names, shapes and checksum of a checkpoint.
    InspectCheckpoint { path: PathBuf },
}

#[derive(Args)]
struct GenSynthArgs {
    /// Output directory for edges.csv, u_features.csv and v_features.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_u: usize,
    #[arg(long, default_value_t = 300)]
    n_v: usize,
    #[arg(long, default_value_t = 4000)]
    n_edges: usize,
    #[arg(long, default_value_t = 50)]
    weight_skew: u32,
    /// Plant matched communities; `false` gives uniformly random edges.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    block_structure: bool,
    #[arg(long, default_value_t = 1_000_000)]
    time_span: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    communities: usize,
    #[arg(long, default_value_t = 0.95)]
    intra_fraction: f64,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding edges.csv, u_features.csv and v_features.csv.
    #[arg(long, conflicts_with_all = ["edges", "u_features", "v_features"])]
    data: Option<PathBuf>,
    #[arg(long, requires_all = ["u_features", "v_features"])]
    edges: Option<PathBuf>,
    #[arg(long)]
    u_features: Option<PathBuf>,
    #[arg(long)]
    v_features: Option<PathBuf>,
}

impl DataArgs {
    fn source(&self) -> Result<DataSource> {
        let files = |dir: &Path| DataSource::Files {
            edges: dir.join(EDGES_FILE),
            u_features: dir.join(U_FEATURES_FILE),
            v_features: dir.join(V_FEATURES_FILE),
        };
        match (&self.data, &self.edges, &self.u_features, &self.v_features) {
            (Some(dir), ..) => Ok(files(dir)),
            (None, Some(e), Some(u), Some(v)) => Ok(DataSource::Files {
                edges: e.clone(),
                u_features: u.clone(),
                v_features: v.clone(),
            }),
            _ => bail!(wbgrl_core::Error::Validation(
                "pass --data DIR or all of --edges, --u-features, --v-features".into()
            )),
        }
    }

    fn load(&self) -> Result<Dataset> {
        let source = self.source()?;
        if let DataSource::Files { edges, u_features, v_features } = &source {
            if let Some(missing) = [edges, u_features, v_features].into_iter().find(|p| !p.is_file()) {
                bail!(wbgrl_core::Error::Validation(format!("input file {} not found", missing.display())));
            }
        }
        Ok(source.load()?)
    }
}

/// One optional flag per configuration field; set flags override the file.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML file with configuration fields; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    wp: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    wb: Option<bool>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    output_dim: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    decoder_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    feature_drop_p: Option<f64>,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    edge_keep: Option<f64>,
    /// Two comma-separated widths, e.g. `256,64`.
    #[arg(long, value_delimiter = ',')]
    decoder_hidden: Option<Vec<usize>>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    relu_final: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    loss_on_raw_embeddings: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    symmetrize: Option<bool>,
    #[arg(long)]
    unk_fraction: Option<f64>,
    #[arg(long)]
    monitor_fraction: Option<f64>,
    #[arg(long)]
    test_negative_ratio: Option<f64>,
    #[arg(long)]
    hits_k: Option<usize>,
    /// `negative_pool` or `top_k`.
    #[arg(long, value_parser = parse_hits_mode)]
    hits_mode: Option<HitsMode>,
}

fn parse_hits_mode(s: &str) -> Result<HitsMode, String> {
    match s {
        "negative_pool" => Ok(HitsMode::NegativePool),
        "top_k" => Ok(HitsMode::TopK),
        other => Err(format!("unknown hits mode `{other}`")),
    }
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! push {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    out.push((stringify!($field), format!("{v:?}")));
                })*
            };
        }
        push!(
            wp, wb, lambda, tau, hidden_dim, output_dim, num_layers, dropout, lr, weight_decay, batch_size,
            pretrain_epochs, decoder_epochs, patience, feature_drop_p, input_dim, edge_keep, relu_final,
            loss_on_raw_embeddings, symmetrize, unk_fraction, monitor_fraction, test_negative_ratio, hits_k
        );
        // TOML spells the non-finite floats in lowercase
        for (_, v) in out.iter_mut() {
            if v == "NaN" {
                *v = "nan".to_owned();
            }
        }
        if let Some(h) = &self.decoder_hidden {
            out.push(("decoder_hidden", format!("{h:?}")));
        }
        if let Some(m) = self.hits_mode {
            let name = match m {
                HitsMode::NegativePool => "negative_pool",
                HitsMode::TopK => "top_k",
            };
            out.push(("hits_mode", format!("\"{name}\"")));
        }
        out
    }

    fn resolve(&self) -> Result<VariantConfig> {
        if self.decoder_hidden.as_ref().is_some_and(|h| h.len() != 2) {
            bail!(wbgrl_core::Error::Validation("--decoder-hidden takes exactly two widths".into()));
        }
        let base = match &self.config {
            Some(path) => VariantConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?,
            None => VariantConfig::default(),
        };
        Ok(base.with_overrides(self.overrides())?)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Single seed; shorthand for `--seeds N`.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seed list (default 42,43,44,45,46).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Seeds trained in parallel.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory for manifests, checkpoints and reports.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn seeds(&self) -> Vec<u64> {
        match (self.seed, &self.seeds) {
            (Some(s), _) => vec![s],
            (None, Some(list)) => list.clone(),
            (None, None) => DEFAULT_SEEDS.to_vec(),
        }
    }
}

#[derive(Args)]
struct EvalOnlyArgs {
    /// A `seed_N` directory written by `run` or `ablate`.
    #[arg(long)]
    run_dir: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

fn gen_synth(a: &GenSynthArgs) -> Result<()> {
    let params = SynthParams {
        n_u: a.n_u,
        n_v: a.n_v,
        n_edges: a.n_edges,
        weight_skew: a.weight_skew,
        block_structure: a.block_structure,
        time_span: a.time_span,
        seed: a.seed,
        communities: a.communities,
        intra_fraction: a.intra_fraction,
        ..SynthParams::default()
    };
    let dataset = synth::generate(&params)?;
    std::fs::create_dir_all(&a.out)?;
    write_graph(
        &dataset,
        &a.out.join(EDGES_FILE),
        &a.out.join(U_FEATURES_FILE),
        &a.out.join(V_FEATURES_FILE),
    )?;
    println!("wrote {} edges to {}", dataset.graph.edges().len(), a.out.display());
    Ok(())
}

fn run(a: &RunArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let dataset = a.data.load()?;
    let report = run_seeds(&dataset, &cfg, &a.seeds(), a.out.as_deref(), a.workers)?;
    println!("{}", table_header());
    match &report.summary {
        Some(s) => println!("{}", s.table_row(&report.variant)),
        None => {
            for m in &report.runs {
                println!("{} seed {}: {}", report.variant, m.seed, serde_json::to_string(&m.metrics)?);
            }
        }
    }
    for f in &report.failures {
        eprintln!("seed {} failed: {}", f.seed, f.error);
    }
    if report.runs.is_empty() {
        bail!("every seed failed");
    }
    Ok(())
}

fn ablate(a: &RunArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let dataset = a.data.load()?;
    let report = run_ablation(&dataset, &cfg, &a.seeds(), a.out.as_deref(), a.workers)?;
    print!("{}", report.table_csv());
    println!(
        "max ROC-AUC gap: {:.4} ({} vs {})",
        report.max_roc_auc_gap, report.max_gap_between.0, report.max_gap_between.1
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Run(a) => run(a),
        Command::Ablate(a) => ablate(a),
        Command::EvalOnly(a) => a
            .data
            .load()
            .and_then(|d| Ok(eval_only(&a.run_dir, &d)?))
            .and_then(|m| Ok(println!("{}", serde_json::to_string_pretty(&m)?))),
        Command::InspectCheckpoint { path } => checkpoint::inspect(path)
            .map_err(Into::into)
            .and_then(|s| Ok(println!("{}", serde_json::to_string_pretty(&s)?))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .downcast_ref::<wbgrl_core::Error>()
                .is_some_and(wbgrl_core::Error::is_validation);
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
