// SPDX-License-Identifier: MIT OR Apache-2.0

//! `resid-scope` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use resid_scope::dataset::{load_dataset, Variant};
use resid_scope::dataset_builder::load_build_rows;
use resid_scope::harness::output::sibling;
use resid_scope::harness::{
    run, run_build_dataset, EdgeTarget, Experiment, ExperimentConfig, ExperimentOutput, InputHash, Inputs,
    LayerRange, Manifest, PatchSource, Sublayer,
};
use resid_scope::interventions::KnockoutMode;
use resid_scope::io::embeddings::EmbeddingTable;
use resid_scope::io::{load_weights, OutputFormat, Tokenizer};
use resid_scope::metrics::{HeadSets, QueryRow};
use resid_scope::model::ModelConfig;
use resid_scope::{Error, Result};

const THREADS_ENV: &str = "RESID_SCOPE_THREADS";
const BOS_TOKEN: &str = "<|begin_of_text|>";

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Zero,
    Mean,
}

/// Run an interpretability experiment on a Llama-style checkpoint.
#[derive(Debug, Parser)]
#[command(name = "resid-scope", version)]
struct Cli {
    /// sublayer-knockout, head-scan, component-patch, kernel-align,
    /// because-patch, edge-knockout, head-divergence, build-dataset, validate
    experiment: Experiment,

    /// Weights file (.safetensors) or a directory containing model.safetensors.
    #[arg(long)]
    model: PathBuf,

    /// Model config.json; defaults to config.json next to the weights.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Idiom dataset (JSONL); for build-dataset, the phrase CSV.
    #[arg(long, alias = "csv")]
    dataset: PathBuf,

    /// Primary output file. Companions (manifest, head sets, reports) are
    /// written next to it.
    #[arg(long)]
    out: PathBuf,

    /// Output format; inferred from the --out extension when omitted.
    #[arg(long)]
    format: Option<OutputFormat>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Knockout replacement.
    #[arg(long, value_enum, default_value_t = Mode::Mean)]
    mode: Mode,

    /// Sentence intervened on: sa, sf or sl.
    #[arg(long, default_value = "sa")]
    variant: Variant,

    /// Layers to sweep, e.g. 0..4, 2..=5 or 3; all layers when omitted.
    #[arg(long)]
    layers: Option<LayerRange>,

    #[arg(long, default_value_t = resid_scope::metrics::DEFAULT_K)]
    k_neighbors: usize,

    /// Head-set JSON written by head-scan.
    #[arg(long)]
    heads_file: Option<PathBuf>,

    /// Sublayer knocked out: mlp or attn.
    #[arg(long, default_value = "mlp")]
    target: Sublayer,

    /// Patch source for because-patch: sf, sl or sa-star.
    #[arg(long, default_value = "sf")]
    source: PatchSource,

    /// Patch the idiom's state into the paraphrase instead.
    #[arg(long)]
    reverse: bool,

    /// Query position of blocked edges: subsequent or last.
    #[arg(long, default_value = "subsequent")]
    edge: EdgeTarget,

    /// Sentence-embedding sidecar (JSONL) for kernel-align.
    #[arg(long)]
    embeddings: Option<PathBuf>,

    /// tokenizer.json; defaults to tokenizer.json next to the weights.
    #[arg(long)]
    tokenizer: Option<PathBuf>,

    /// Size of each head set.
    #[arg(long, default_value_t = resid_scope::metrics::DEFAULT_HEAD_SET_SIZE)]
    top_k: usize,

    /// Query row of the value-weighting for head-divergence.
    #[arg(long, default_value = "subsequent")]
    query_row: QueryRow,

    /// Early MLP layers patched by component-patch.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    early_mlp: Vec<usize>,

    #[arg(long, default_value_t = resid_scope::metrics::sweep::DEFAULT_RESAMPLES)]
    resamples: usize,

    #[arg(long, default_value_t = resid_scope::metrics::sweep::DEFAULT_LEVEL)]
    level: f64,

    /// Candidate set size for build-dataset.
    #[arg(long, default_value_t = resid_scope::dataset::CANDIDATE_SET_SIZE)]
    candidates: usize,

    /// Token id prepended by build-dataset; defaults to the tokenizer's
    /// begin-of-text token if it has one.
    #[arg(long, conflicts_with = "no_bos")]
    bos: Option<u32>,

    #[arg(long)]
    no_bos: bool,

    /// validate: exit with status 2 if any instance fails the filter.
    #[arg(long)]
    strict: bool,
}

impl Cli {
    fn experiment_config(&self) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(self.experiment);
        c.variant = self.variant;
        c.mode = match self.mode {
            Mode::Zero => KnockoutMode::Zero,
            Mode::Mean => KnockoutMode::Mean,
        };
        c.target = self.target;
        c.source = self.source;
        c.reverse = self.reverse;
        c.edge = self.edge;
        c.layers = self.layers;
        c.k_neighbors = self.k_neighbors;
        c.top_k = self.top_k;
        c.early_mlp_layers = self.early_mlp.clone();
        c.query_row = self.query_row;
        c.resamples = self.resamples;
        c.level = self.level;
        c.seed = self.seed;
        c.candidates = self.candidates;
        c
    }

    fn format(&self) -> Result<OutputFormat> {
        if let Some(f) = self.format {
            return Ok(f);
        }
        match self.out.extension().and_then(|e| e.to_str()) {
            Some(ext) => ext.parse().or(Ok(OutputFormat::Csv)),
            None => Ok(OutputFormat::Csv),
        }
    }

    fn weights_path(&self) -> PathBuf {
        if self.model.is_dir() {
            self.model.join("model.safetensors")
        } else {
            self.model.clone()
        }
    }

    /// A file next to the weights, used when `explicit` is not given.
    fn beside_model(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| {
            let dir = if self.model.is_dir() { self.model.as_path() } else { self.model.parent().unwrap_or(Path::new(".")) };
            dir.join(name)
        })
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    let cfg = cli.experiment_config();
    let format = cli.format()?;
    let weights_path = cli.weights_path();
    let config_path = cli.beside_model(&cli.config, "config.json");
    let model_cfg = ModelConfig::load(&config_path)?;
    cfg.validate(&model_cfg)?;

    let mut inputs = vec![
        InputHash::of("model", &weights_path)?,
        InputHash::of("config", &config_path)?,
        InputHash::of("dataset", &cli.dataset)?,
    ];
    let weights = load_weights(&weights_path, &model_cfg)?;

    let output = if cli.experiment == Experiment::BuildDataset {
        let tok_path = cli.beside_model(&cli.tokenizer, "tokenizer.json");
        inputs.push(InputHash::of("tokenizer", &tok_path)?);
        let tok = Tokenizer::load(&tok_path)?;
        let rows = load_build_rows(&cli.dataset)?;
        let bos = if cli.no_bos { None } else { cli.bos.or_else(|| tok.special_token(BOS_TOKEN)) };
        run_build_dataset(&weights, &tok, &rows, &cfg, bos)?
    } else {
        let instances = load_dataset(&cli.dataset)?;
        let embeddings = match &cli.embeddings {
            Some(p) => {
                inputs.push(InputHash::of("embeddings", p)?);
                Some(EmbeddingTable::load(p)?)
            }
            None => None,
        };
        let heads = match &cli.heads_file {
            Some(p) => {
                inputs.push(InputHash::of("heads", p)?);
                Some(HeadSets::load(p)?)
            }
            None => None,
        };
        let mut inp = Inputs::new(&weights, &instances);
        if let Some(e) = &embeddings {
            inp = inp.with_embeddings(e);
        }
        if let Some(h) = &heads {
            inp = inp.with_head_sets(h);
        }
        run(&inp, &cfg)?
    };

    let title = format!("{} ({})", cli.experiment, cli.variant.short_name());
    let written = output.write(&cli.out, format, &title)?;
    let mut manifest = Manifest::new(&cfg, inputs)?;
    manifest.outputs = written
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let manifest_path = sibling(&cli.out, "manifest.json");
    std::fs::write(&manifest_path, manifest.to_json()?).map_err(|e| Error::Io {
        path: manifest_path.clone(),
        source: e,
    })?;
    for p in written.iter().chain([&manifest_path]) {
        println!("{}", p.display());
    }

    let ok = match &output {
        ExperimentOutput::Validation(r) | ExperimentOutput::Dataset { report: r, .. } => {
            eprintln!("{}/{} instances passed the filter", r.passed, r.total);
            !(cli.strict && r.passed < r.total)
        }
        _ => true,
    };
    Ok(ok)
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| execute(&cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}
