//! Operator command surface behind the `manifoldmind` binary.
//!
//! Seven verbs: `ingest`, `train`, `evaluate`, `recommend`, `explain`,
//! `ablate`, `synth`. Every run writes its artifacts into a fresh
//! directory under `--out` named `<verb>-<unix seconds>-<config hash>`,
//! always including a manifest with the full canonical config, the seed,
//! and a SHA-256 per input file, so a run is reproducible from its
//! manifest alone. Artifact files and manifests carry no timestamps;
//! reruns with equal inputs produce byte-identical files.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 validation failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::{file_hash, short_hash, Ablation, DiversityMode, EceMode, KernelVariant, RunConfig};
use crate::data::{
    build_eval_instances, chronological_split, ingest, synth_hierarchy, user_item_sets, Dataset,
    Splits, SynthParams,
};
use crate::graph::{build_graph, SemanticGraph};
use crate::metrics::{evaluate, render_report};
use crate::reasoning::{BeamConfig, Scorer, TraceNode};
use crate::sphere::{
    load_checkpoint, save_checkpoint, CheckpointMeta, EntityId, EntityKind, InitOptions,
    KernelConfig, Model,
};
use crate::train::{train, TrainError};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, bad input files, or inconsistent artifacts. Exit 2.
    Validation(String),
    /// Failures during otherwise valid work. Exit 1.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn validation(e: impl fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum SplitChoice {
    Val,
    #[default]
    Test,
}

#[derive(Parser, Debug)]
#[command(
    name = "manifoldmind",
    version,
    about = "Hyperbolic sphere embeddings with beam-search path reasoning for explainable recommendation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct GlobalArgs {
    /// JSON config file of flat dotted keys, e.g. {"train.lr": 0.0005};
    /// command-line flags override file values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// RNG seed for init, sampling, and negative draws. [default: 42]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for scoring and gradients; 0 uses every core.
    /// [default: 0]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Base directory for run artifacts. [default: runs]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Stdout rendering; artifact files are always JSON.
    #[arg(long, global = true, value_enum, default_value_t)]
    pub format: OutputFormat,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    Ablation::from_str(s).map_err(|e| e.to_string())
}

fn parse_kernel_variant(s: &str) -> Result<KernelVariant, String> {
    KernelVariant::from_str(s).map_err(|e| e.to_string())
}

fn parse_ece_mode(s: &str) -> Result<EceMode, String> {
    EceMode::from_str(s).map_err(|e| e.to_string())
}

fn parse_diversity_mode(s: &str) -> Result<DiversityMode, String> {
    DiversityMode::from_str(s).map_err(|e| e.to_string())
}

/// Flag overrides for every run-config field, applied on top of the
/// config file. Defaults shown here are the built-in values used when
/// neither a flag nor a file key sets the field.
#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// Interactions TSV: user, item, timestamp, optional rating.
    /// [default: unset]
    #[arg(long, value_name = "PATH")]
    pub interactions: Option<PathBuf>,
    /// Item-tag TSV: item, tag. [default: unset]
    #[arg(long, value_name = "PATH")]
    pub item_tags: Option<PathBuf>,
    /// Skip the first line of each input file. [default: false]
    #[arg(long, value_name = "BOOL")]
    pub has_header: Option<bool>,
    /// Keep rows with rating >= this when a rating column exists.
    /// [default: 1.0]
    #[arg(long)]
    pub rating_min: Option<f64>,
    /// Chronological train fraction. [default: 0.8]
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// Chronological validation fraction. [default: 0.1]
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// Chronological test fraction. [default: 0.1]
    #[arg(long)]
    pub test_frac: Option<f64>,
    /// Sampled negatives per evaluation instance. [default: 100]
    #[arg(long)]
    pub n_negatives: Option<usize>,
    /// Distinct items two tags must share for a tag-tag edge. [default: 2]
    #[arg(long)]
    pub cooccur_threshold: Option<usize>,
    /// Distinct items a tag needs to survive ingest. [default: 2]
    #[arg(long)]
    pub min_tag_items: Option<usize>,
    /// Minimum tag length in characters after cleaning. [default: 2]
    #[arg(long)]
    pub min_tag_len: Option<usize>,
    /// Beam width b. [default: 5]
    #[arg(long)]
    pub beam_width: Option<usize>,
    /// Maximum tag hops k per path. [default: 3]
    #[arg(long)]
    pub max_hops: Option<usize>,
    /// Ranking margin gamma. [default: 1.0]
    #[arg(long)]
    pub margin: Option<f64>,
    /// Curvature regularizer weight lambda. [default: 0.1]
    #[arg(long)]
    pub reg_weight: Option<f64>,
    /// Curvature hinge offset delta. [default: 0.1]
    #[arg(long)]
    pub curv_margin: Option<f64>,
    /// Learning rate eta. [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Triples per optimizer step. [default: 1024]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Embedding dimension d. [default: 20]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Epochs without validation improvement before stopping.
    /// [default: 10]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Hard epoch cap. [default: 100]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Model variant: full, fixed_radius, fixed_curvature,
    /// no_transitivity, euclidean. [default: full]
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
    /// Kernel scaling: as_printed or uncertainty_penalizing.
    /// [default: as_printed]
    #[arg(long, value_parser = parse_kernel_variant)]
    pub kernel_variant: Option<KernelVariant>,
    /// Ranking cutoff for metrics. [default: 10]
    #[arg(long)]
    pub eval_k: Option<usize>,
    /// Calibration histogram bins. [default: 10]
    #[arg(long)]
    pub ece_bins: Option<usize>,
    /// Calibration samples: top_one or per_candidate. [default: top_one]
    #[arg(long, value_parser = parse_ece_mode)]
    pub ece_mode: Option<EceMode>,
    /// Diversity scaling: normalized or absolute. [default: normalized]
    #[arg(long, value_parser = parse_diversity_mode)]
    pub diversity_mode: Option<DiversityMode>,
}

impl ConfigArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),* $(,)?) => {
                $(if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                })*
            };
        }
        if let Some(p) = &self.interactions {
            cfg.interactions = Some(p.clone());
        }
        if let Some(p) = &self.item_tags {
            cfg.item_tags = Some(p.clone());
        }
        set!(
            has_header,
            rating_min,
            train_frac,
            val_frac,
            test_frac,
            n_negatives,
            cooccur_threshold,
            min_tag_items,
            min_tag_len,
            beam_width,
            max_hops,
            margin,
            reg_weight,
            curv_margin,
            lr,
            batch_size,
            dim,
            patience,
            max_epochs,
            ablation,
            kernel_variant,
            eval_k,
            ece_bins,
            ece_mode,
            diversity_mode,
        );
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse raw TSVs, split chronologically, and report the graph build.
    Ingest {
        #[command(flatten)]
        overrides: ConfigArgs,
    },
    /// Train sphere embeddings; saves the best-validation checkpoint.
    Train {
        #[command(flatten)]
        overrides: ConfigArgs,
    },
    /// Score a held-out split with a checkpoint and emit the full report.
    Evaluate {
        #[command(flatten)]
        overrides: ConfigArgs,
        /// Checkpoint file written by `train`.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Held-out split to score.
        #[arg(long, value_enum, default_value_t)]
        split: SplitChoice,
    },
    /// Rank catalog items a user has not interacted with.
    Recommend {
        #[command(flatten)]
        overrides: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Raw user id as written in the interactions file.
        #[arg(long)]
        user: String,
        /// Number of items to return. [default: eval_k]
        #[arg(long)]
        topn: Option<usize>,
    },
    /// Emit the reasoning trace behind one user-item score.
    Explain {
        #[command(flatten)]
        overrides: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Raw user id as written in the interactions file.
        #[arg(long)]
        user: String,
        /// Raw item id as written in the input files.
        #[arg(long)]
        item: String,
    },
    /// Train and evaluate all five model variants on one shared split.
    Ablate {
        #[command(flatten)]
        overrides: ConfigArgs,
    },
    /// Generate a synthetic hierarchical-tag dataset as TSV files.
    Synth {
        /// Number of users.
        #[arg(long, default_value_t = 200)]
        users: usize,
        /// Number of items.
        #[arg(long, default_value_t = 300)]
        items: usize,
        /// Tag budget for the balanced tag tree.
        #[arg(long, default_value_t = 30)]
        tags: usize,
        /// Depth of the tag tree (at least 2).
        #[arg(long, default_value_t = 3)]
        depth: usize,
        /// Probability an interaction ignores the user's subtree.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Interactions drawn per user.
        #[arg(long, default_value_t = 20)]
        interactions_per_user: usize,
    },
}

/// Parses argv and runs one command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let global = cli.global;
    match cli.command {
        Command::Ingest { overrides } => cmd_ingest(&global, &overrides),
        Command::Train { overrides } => cmd_train(&global, &overrides),
        Command::Evaluate { overrides, checkpoint, split } => {
            cmd_evaluate(&global, &overrides, &checkpoint, split)
        }
        Command::Recommend { overrides, checkpoint, user, topn } => {
            cmd_recommend(&global, &overrides, &checkpoint, &user, topn)
        }
        Command::Explain { overrides, checkpoint, user, item } => {
            cmd_explain(&global, &overrides, &checkpoint, &user, &item)
        }
        Command::Ablate { overrides } => cmd_ablate(&global, &overrides),
        Command::Synth { users, items, tags, depth, noise, interactions_per_user } => cmd_synth(
            &global,
            SynthParams {
                n_users: users,
                n_items: items,
                n_tags: tags,
                depth,
                noise,
                interactions_per_user,
                seed: 0,
            },
        ),
    }
}

/// Builds the effective config: defaults, then file keys, then flags, then
/// global seed/threads. Returns the set of keys the file actually set so
/// commands can tell explicit values from defaults.
fn effective_config(
    global: &GlobalArgs,
    overrides: &ConfigArgs,
) -> Result<(RunConfig, std::collections::BTreeSet<String>), CliError> {
    let mut cfg = RunConfig::default();
    let mut file_keys = std::collections::BTreeSet::new();
    if let Some(path) = &global.config {
        cfg.apply_file(path).map_err(validation)?;
        let text = fs::read_to_string(path)
            .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
        let doc: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| validation(format!("{} is not valid JSON: {e}", path.display())))?;
        if let Some(obj) = doc.as_object() {
            file_keys.extend(obj.keys().cloned());
        }
    }
    overrides.apply(&mut cfg);
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = global.threads {
        cfg.threads = threads;
    }
    cfg.validate().map_err(validation)?;
    if cfg.threads > 0 {
        // First caller wins; later commands in the same process keep the
        // existing pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    Ok((cfg, file_keys))
}

fn out_base(global: &GlobalArgs) -> PathBuf {
    global.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

/// Creates `<base>/<verb>-<unix seconds>-<hash8>`, suffixing a counter on
/// collision.
fn make_run_dir(base: &Path, verb: &str, config_hash: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(base)
        .map_err(|e| runtime(format!("cannot create {}: {e}", base.display())))?;
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("system clock after 1970")
        .as_secs();
    let stem = format!("{verb}-{secs}-{}", &config_hash[..8]);
    for n in 0..10_000u32 {
        let name = if n == 0 { stem.clone() } else { format!("{stem}-{n}") };
        let dir = base.join(&name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(runtime(format!("cannot create {}: {e}", dir.display()))),
        }
    }
    Err(runtime("exhausted run directory name suffixes"))
}

fn write_json_file(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| runtime(format!("serialization failed: {e}")))?;
    text.push('\n');
    write_text_file(path, &text)
}

fn write_text_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

/// Hashes named input files and writes the run manifest.
fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    inputs: &[(&str, &Path)],
    outputs: &[&str],
) -> Result<(), CliError> {
    let mut input_map = BTreeMap::new();
    for (name, path) in inputs {
        let digest = file_hash(path)
            .map_err(|e| runtime(format!("cannot hash {}: {e}", path.display())))?;
        input_map.insert(
            name.to_string(),
            json!({ "path": path.display().to_string(), "sha256": digest }),
        );
    }
    let manifest = json!({
        "command": command,
        "config": cfg.canonical_map(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "threads": cfg.threads,
        "inputs": input_map,
        "outputs": outputs,
    });
    write_json_file(&dir.join("manifest.json"), &manifest)
}

fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, Splits), CliError> {
    let dataset = ingest(cfg).map_err(validation)?;
    let splits = chronological_split(&dataset, cfg);
    Ok((dataset, splits))
}

fn data_inputs(cfg: &RunConfig) -> Vec<(&'static str, &Path)> {
    let mut v = Vec::new();
    if let Some(p) = &cfg.interactions {
        v.push(("interactions", p.as_path()));
    }
    if let Some(p) = &cfg.item_tags {
        v.push(("item_tags", p.as_path()));
    }
    v
}

fn emit(global: &GlobalArgs, json_text: &str, text: &str) {
    match global.format {
        OutputFormat::Json => println!("{}", json_text.trim_end()),
        OutputFormat::Text => println!("{}", text.trim_end()),
    }
}

fn cmd_ingest(global: &GlobalArgs, overrides: &ConfigArgs) -> Result<(), CliError> {
    let (cfg, _) = effective_config(global, overrides)?;
    let (dataset, splits) = load_dataset(&cfg)?;
    let graph = build_graph(
        &splits.train,
        &dataset.item_tag_pairs,
        dataset.counts(),
        cfg.cooccur_threshold,
    );
    let report = json!({
        "dataset": dataset.report,
        "split": splits.report,
        "graph": graph.report(),
    });

    let dir = make_run_dir(&out_base(global), "ingest", &cfg.hash())?;
    write_json_file(&dir.join("ingest_report.json"), &report)?;
    write_manifest(&dir, "ingest", &cfg, &data_inputs(&cfg), &["ingest_report.json"])?;
    eprintln!("run dir: {}", dir.display());

    let counts = dataset.counts();
    let mut text = String::new();
    let _ = writeln!(text, "users         {}", counts.users);
    let _ = writeln!(text, "items         {}", counts.items);
    let _ = writeln!(text, "tags          {}", counts.tags);
    let _ = writeln!(text, "interactions  {}", dataset.interactions.len());
    let _ = writeln!(
        text,
        "split         {}/{}/{} (train/val/test)",
        splits.report.train_rows, splits.report.val_rows, splits.report.test_rows
    );
    let g = graph.report();
    let _ = writeln!(text, "user-tag edges {}", g.user_tag_edges);
    let _ = writeln!(text, "tag-tag pairs  {}", g.tag_tag_pairs);
    let _ = writeln!(text, "tag-item edges {}", g.tag_item_edges);
    emit(global, &serde_json::to_string_pretty(&report).map_err(runtime)?, &text);
    Ok(())
}

/// Trains on the train split and writes checkpoint, history, and manifest.
/// On divergence the last good checkpoint is still written and the command
/// exits 1 naming it.
fn cmd_train(global: &GlobalArgs, overrides: &ConfigArgs) -> Result<(), CliError> {
    let (cfg, _) = effective_config(global, overrides)?;
    let (dataset, splits) = load_dataset(&cfg)?;
    let graph = build_graph(
        &splits.train,
        &dataset.item_tag_pairs,
        dataset.counts(),
        cfg.cooccur_threshold,
    );
    let val_instances =
        build_eval_instances(&splits.val, &dataset, &splits, cfg.n_negatives, cfg.seed)
            .map_err(validation)?;
    let model = Model::init(
        dataset.counts(),
        cfg.dim,
        cfg.seed,
        &InitOptions::for_ablation(cfg.ablation),
    );
    let meta = CheckpointMeta {
        config_hash: cfg.hash(),
        kernel_variant: cfg.kernel_variant,
        ablation: cfg.ablation,
    };

    let dir = make_run_dir(&out_base(global), "train", &cfg.hash())?;
    let ckpt_path = dir.join("checkpoint.json");
    let (best, history) = match train(model, &graph, &splits.train, &val_instances, &cfg) {
        Ok(pair) => pair,
        Err(TrainError::Diverged { epoch, best_epoch, last_good, history }) => {
            save_checkpoint(&last_good, &meta, &ckpt_path).map_err(runtime)?;
            write_json_file(&dir.join("history.json"), &history)?;
            return Err(runtime(format!(
                "training diverged at epoch {epoch}; last good checkpoint (epoch {best_epoch}) written to {}",
                ckpt_path.display()
            )));
        }
        Err(e @ (TrainError::NoTriples | TrainError::NoValidation)) => {
            return Err(validation(e));
        }
        Err(e) => return Err(runtime(e)),
    };

    save_checkpoint(&best, &meta, &ckpt_path).map_err(runtime)?;
    write_json_file(&dir.join("history.json"), &history)?;
    write_manifest(
        &dir,
        "train",
        &cfg,
        &data_inputs(&cfg),
        &["checkpoint.json", "history.json"],
    )?;
    eprintln!("run dir: {}", dir.display());

    let summary = json!({
        "run_dir": dir.display().to_string(),
        "checkpoint": ckpt_path.display().to_string(),
        "model_hash": best.hash(),
        "epochs": history.epochs.len(),
        "best_epoch": history.best_epoch,
        "best_val_ndcg": history.best_val_ndcg,
        "stopped_early": history.stopped_early,
    });
    let mut text = String::new();
    for e in &history.epochs {
        let _ = writeln!(
            text,
            "epoch {:>3}  loss {:.6}  reg {:.6}  val_ndcg {:.4}",
            e.epoch, e.loss, e.reg, e.val_ndcg
        );
    }
    let _ = writeln!(
        text,
        "best epoch {} (val_ndcg {:.4}); checkpoint {}",
        history.best_epoch,
        history.best_val_ndcg,
        ckpt_path.display()
    );
    emit(global, &serde_json::to_string_pretty(&summary).map_err(runtime)?, &text);
    Ok(())
}

/// Dataset, split, graph, and model rebuilt around a checkpoint. The
/// checkpoint's recorded ablation and kernel variant win unless the
/// command sets them explicitly, in which case a mismatch is an error.
struct InferenceCtx {
    cfg: RunConfig,
    dataset: Dataset,
    splits: Splits,
    graph: SemanticGraph,
    model: Model,
}

fn load_inference(
    global: &GlobalArgs,
    overrides: &ConfigArgs,
    checkpoint: &Path,
) -> Result<InferenceCtx, CliError> {
    let (mut cfg, file_keys) = effective_config(global, overrides)?;
    let (model, meta) = load_checkpoint(checkpoint).map_err(validation)?;

    let ablation_explicit =
        overrides.ablation.is_some() || file_keys.contains("train.ablation");
    if ablation_explicit && cfg.ablation != meta.ablation {
        return Err(validation(format!(
            "checkpoint was trained with ablation '{}' but this run asks for '{}'",
            meta.ablation, cfg.ablation
        )));
    }
    cfg.ablation = meta.ablation;

    let kernel_explicit =
        overrides.kernel_variant.is_some() || file_keys.contains("train.kernel_variant");
    if kernel_explicit && cfg.kernel_variant != meta.kernel_variant {
        return Err(validation(format!(
            "checkpoint was trained with kernel variant '{}' but this run asks for '{}'",
            meta.kernel_variant, cfg.kernel_variant
        )));
    }
    cfg.kernel_variant = meta.kernel_variant;

    let (dataset, splits) = load_dataset(&cfg)?;
    let dc = dataset.counts();
    let mc = model.counts();
    if dc != mc {
        return Err(validation(format!(
            "checkpoint catalog ({}u/{}i/{}t) does not match the ingested data ({}u/{}i/{}t)",
            mc.users, mc.items, mc.tags, dc.users, dc.items, dc.tags
        )));
    }
    let graph = build_graph(
        &splits.train,
        &dataset.item_tag_pairs,
        dc,
        cfg.cooccur_threshold,
    );
    Ok(InferenceCtx { cfg, dataset, splits, graph, model })
}

fn cmd_evaluate(
    global: &GlobalArgs,
    overrides: &ConfigArgs,
    checkpoint: &Path,
    split: SplitChoice,
) -> Result<(), CliError> {
    let ctx = load_inference(global, overrides, checkpoint)?;
    let source = match split {
        SplitChoice::Val => &ctx.splits.val,
        SplitChoice::Test => &ctx.splits.test,
    };
    let instances =
        build_eval_instances(source, &ctx.dataset, &ctx.splits, ctx.cfg.n_negatives, ctx.cfg.seed)
            .map_err(validation)?;
    let (report, _) =
        evaluate(&ctx.model, &ctx.graph, &instances, &ctx.cfg).map_err(runtime)?;
    let rendered = render_report(&report);

    let dir = make_run_dir(&out_base(global), "evaluate", &ctx.cfg.hash())?;
    write_text_file(&dir.join("eval_report.json"), &rendered)?;
    let mut inputs = data_inputs(&ctx.cfg);
    inputs.push(("checkpoint", checkpoint));
    write_manifest(&dir, "evaluate", &ctx.cfg, &inputs, &["eval_report.json"])?;
    eprintln!("run dir: {}", dir.display());

    let mut text = String::new();
    let _ = writeln!(text, "instances       {}", report.instances);
    let _ = writeln!(text, "ndcg@{}         {:.6}", report.k, report.ndcg_at_k);
    let _ = writeln!(text, "recall@{}       {:.6}", report.k, report.recall_at_k);
    let _ = writeln!(text, "ece             {:.6}", report.ece);
    let _ = writeln!(text, "diversity@{}    {:.6}", report.k, report.diversity_at_k);
    let _ = writeln!(text, "t-ils@{}        {:.6}", report.k, report.tils_at_k);
    let _ = writeln!(text, "coverage        {:.2}%", report.coverage_pct);
    let _ = writeln!(text, "alignment       {:.2}%", report.alignment_pct);
    let _ = writeln!(text, "mean confidence {:.6}", report.mean_confidence);
    emit(global, &rendered, &text);
    Ok(())
}

#[derive(Serialize)]
struct RecommendationRow {
    rank: usize,
    item: String,
    score: f64,
    path: Vec<TraceNode>,
}

#[derive(Serialize)]
struct RecommendationList {
    user: String,
    topn: usize,
    items: Vec<RecommendationRow>,
}

fn entity_label(dataset: &Dataset, e: EntityId) -> String {
    match e.kind {
        EntityKind::User => dataset.users[e.index as usize].clone(),
        EntityKind::Item => dataset.items[e.index as usize].clone(),
        EntityKind::Tag => dataset.tags[e.index as usize].clone(),
    }
}

fn cmd_recommend(
    global: &GlobalArgs,
    overrides: &ConfigArgs,
    checkpoint: &Path,
    user_raw: &str,
    topn: Option<usize>,
) -> Result<(), CliError> {
    let ctx = load_inference(global, overrides, checkpoint)?;
    let user = ctx
        .dataset
        .user_index(user_raw)
        .ok_or_else(|| validation(format!("unknown user id '{user_raw}'")))?;
    let counts = ctx.dataset.counts();
    let owned = user_item_sets(counts.users, &[&ctx.dataset.interactions]);
    let candidates: Vec<u32> = (0..counts.items as u32)
        .filter(|i| !owned[user as usize].contains(i))
        .collect();
    if candidates.is_empty() {
        return Err(validation(format!(
            "user '{user_raw}' has interacted with every catalog item"
        )));
    }
    let topn = topn.unwrap_or(ctx.cfg.eval_k);
    let bc = BeamConfig::from_run(&ctx.cfg);
    let kcfg = KernelConfig::new(ctx.cfg.kernel_variant, ctx.cfg.ablation);
    let mut scorer = Scorer::new(&ctx.model, &ctx.graph, kcfg);
    let ranked = scorer
        .recommend(user, &candidates, topn, &bc)
        .map_err(runtime)?;

    let items: Vec<RecommendationRow> = ranked
        .iter()
        .enumerate()
        .map(|(i, r)| RecommendationRow {
            rank: i + 1,
            item: ctx.dataset.items[r.item as usize].clone(),
            score: r.score,
            path: r
                .path
                .as_ref()
                .map(|p| {
                    p.entities
                        .iter()
                        .map(|&e| TraceNode {
                            kind: e.kind.as_str(),
                            id: entity_label(&ctx.dataset, e),
                        })
                        .collect()
                })
                .unwrap_or_default(),
        })
        .collect();
    let doc = RecommendationList { user: user_raw.to_string(), topn, items };

    let dir = make_run_dir(&out_base(global), "recommend", &ctx.cfg.hash())?;
    write_json_file(&dir.join("recommendations.json"), &doc)?;
    let mut inputs = data_inputs(&ctx.cfg);
    inputs.push(("checkpoint", checkpoint));
    write_manifest(&dir, "recommend", &ctx.cfg, &inputs, &["recommendations.json"])?;
    eprintln!("run dir: {}", dir.display());

    let mut text = String::new();
    for row in &doc.items {
        let via: Vec<&str> = row
            .path
            .iter()
            .filter(|n| n.kind == "tag")
            .map(|n| n.id.as_str())
            .collect();
        let _ = writeln!(
            text,
            "{:>4}  {:<24} {:>10.6}  via {}",
            row.rank,
            row.item,
            row.score,
            if via.is_empty() { "-".to_string() } else { via.join(" > ") }
        );
    }
    emit(global, &serde_json::to_string_pretty(&doc).map_err(runtime)?, &text);
    Ok(())
}

fn cmd_explain(
    global: &GlobalArgs,
    overrides: &ConfigArgs,
    checkpoint: &Path,
    user_raw: &str,
    item_raw: &str,
) -> Result<(), CliError> {
    let ctx = load_inference(global, overrides, checkpoint)?;
    let user = ctx
        .dataset
        .user_index(user_raw)
        .ok_or_else(|| validation(format!("unknown user id '{user_raw}'")))?;
    let item = ctx
        .dataset
        .item_index(item_raw)
        .ok_or_else(|| validation(format!("unknown item id '{item_raw}'")))?;
    let bc = BeamConfig::from_run(&ctx.cfg);
    let kcfg = KernelConfig::new(ctx.cfg.kernel_variant, ctx.cfg.ablation);
    let mut scorer = Scorer::new(&ctx.model, &ctx.graph, kcfg);
    let trace = scorer
        .explain(user, item, &bc, &ctx.dataset, &ctx.model.hash())
        .map_err(runtime)?;

    let dir = make_run_dir(&out_base(global), "explain", &ctx.cfg.hash())?;
    write_json_file(&dir.join("trace.json"), &trace)?;
    let mut inputs = data_inputs(&ctx.cfg);
    inputs.push(("checkpoint", checkpoint));
    write_manifest(&dir, "explain", &ctx.cfg, &inputs, &["trace.json"])?;
    eprintln!("run dir: {}", dir.display());

    let mut text = String::new();
    if trace.path.is_empty() {
        let _ = writeln!(text, "no path from '{user_raw}' to '{item_raw}' (score 0)");
    } else {
        let chain: Vec<&str> = trace.path.iter().map(|n| n.id.as_str()).collect();
        let _ = writeln!(text, "score {:.6}  {}", trace.score, chain.join(" -> "));
        for e in &trace.edges {
            let _ = writeln!(
                text,
                "  {} -> {}  kernel {:.6}  distance {:.6}  share {:.3}",
                e.from, e.to, e.kernel, e.distance, e.share
            );
        }
    }
    emit(global, &serde_json::to_string_pretty(&trace).map_err(runtime)?, &text);
    Ok(())
}

#[derive(Serialize)]
struct AblateRow {
    ablation: String,
    label: String,
    status: String,
    best_epoch: Option<usize>,
    model_hash: Option<String>,
    ndcg_at_k: Option<f64>,
    recall_at_k: Option<f64>,
    ece: Option<f64>,
    diversity_at_k: Option<f64>,
    tils_at_k: Option<f64>,
}

#[derive(Serialize)]
struct AblateDoc {
    split_manifest_hash: String,
    seed: u64,
    k: usize,
    rows: Vec<AblateRow>,
}

/// Trains every variant on the identical ingest, split, and seed, then
/// evaluates each on the test split. A failing variant becomes an error
/// row; the others still complete, and the command exits 1 at the end if
/// any row failed.
fn cmd_ablate(global: &GlobalArgs, overrides: &ConfigArgs) -> Result<(), CliError> {
    let (cfg, _) = effective_config(global, overrides)?;
    let (dataset, splits) = load_dataset(&cfg)?;
    let graph = build_graph(
        &splits.train,
        &dataset.item_tag_pairs,
        dataset.counts(),
        cfg.cooccur_threshold,
    );
    let val_instances =
        build_eval_instances(&splits.val, &dataset, &splits, cfg.n_negatives, cfg.seed)
            .map_err(validation)?;
    let test_instances =
        build_eval_instances(&splits.test, &dataset, &splits, cfg.n_negatives, cfg.seed)
            .map_err(validation)?;

    let mut input_hashes = BTreeMap::new();
    for (name, path) in data_inputs(&cfg) {
        let digest =
            file_hash(path).map_err(|e| runtime(format!("cannot hash {}: {e}", path.display())))?;
        input_hashes.insert(name.to_string(), digest);
    }
    let split_manifest = json!({
        "dataset": dataset.report,
        "split": splits.report,
        "inputs": input_hashes,
        "seed": cfg.seed,
    });
    let split_manifest_text = serde_json::to_string_pretty(&split_manifest).map_err(runtime)?;
    let split_manifest_hash = short_hash(split_manifest_text.as_bytes());

    let dir = make_run_dir(&out_base(global), "ablate", &cfg.hash())?;
    write_text_file(&dir.join("split_manifest.json"), &(split_manifest_text + "\n"))?;

    let mut rows = Vec::new();
    let mut outputs: Vec<String> = vec!["split_manifest.json".into(), "ablation.json".into(), "ablation.txt".into()];
    for ablation in Ablation::ALL {
        let mut vcfg = cfg.clone();
        vcfg.ablation = ablation;
        let model = Model::init(
            dataset.counts(),
            vcfg.dim,
            vcfg.seed,
            &InitOptions::for_ablation(ablation),
        );
        let outcome = train(model, &graph, &splits.train, &val_instances, &vcfg)
            .map_err(|e| e.to_string())
            .and_then(|(best, history)| {
                evaluate(&best, &graph, &test_instances, &vcfg)
                    .map(|(report, _)| (best, history, report))
                    .map_err(|e| e.to_string())
            });
        match outcome {
            Ok((best, history, report)) => {
                let ckpt_name = format!("checkpoint-{ablation}.json");
                let meta = CheckpointMeta {
                    config_hash: vcfg.hash(),
                    kernel_variant: vcfg.kernel_variant,
                    ablation,
                };
                save_checkpoint(&best, &meta, &dir.join(&ckpt_name)).map_err(runtime)?;
                outputs.push(ckpt_name);
                rows.push(AblateRow {
                    ablation: ablation.to_string(),
                    label: ablation.label().to_string(),
                    status: "ok".into(),
                    best_epoch: Some(history.best_epoch),
                    model_hash: Some(best.hash()),
                    ndcg_at_k: Some(report.ndcg_at_k),
                    recall_at_k: Some(report.recall_at_k),
                    ece: Some(report.ece),
                    diversity_at_k: Some(report.diversity_at_k),
                    tils_at_k: Some(report.tils_at_k),
                });
            }
            Err(msg) => rows.push(AblateRow {
                ablation: ablation.to_string(),
                label: ablation.label().to_string(),
                status: msg,
                best_epoch: None,
                model_hash: None,
                ndcg_at_k: None,
                recall_at_k: None,
                ece: None,
                diversity_at_k: None,
                tils_at_k: None,
            }),
        }
    }

    let doc = AblateDoc {
        split_manifest_hash,
        seed: cfg.seed,
        k: cfg.eval_k,
        rows,
    };
    write_json_file(&dir.join("ablation.json"), &doc)?;
    let table = render_ablate_table(&doc);
    write_text_file(&dir.join("ablation.txt"), &table)?;
    let output_refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    write_manifest(&dir, "ablate", &cfg, &data_inputs(&cfg), &output_refs)?;
    eprintln!("run dir: {}", dir.display());

    emit(global, &serde_json::to_string_pretty(&doc).map_err(runtime)?, &table);

    let failures: Vec<&AblateRow> = doc.rows.iter().filter(|r| r.status != "ok").collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!(
            "{} of {} variants failed: {}",
            failures.len(),
            doc.rows.len(),
            failures
                .iter()
                .map(|r| format!("{} ({})", r.ablation, r.status))
                .collect::<Vec<_>>()
                .join("; ")
        )))
    }
}

fn render_ablate_table(doc: &AblateDoc) -> String {
    let fmt_opt = |v: Option<f64>| match v {
        Some(x) => format!("{x:>10.4}"),
        None => format!("{:>10}", "-"),
    };
    let mut text = String::new();
    let k = doc.k;
    let _ = writeln!(
        text,
        "{:<22} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "variant",
        format!("ndcg@{k}"),
        format!("recall@{k}"),
        "ece",
        format!("div@{k}"),
        format!("t-ils@{k}"),
    );
    for r in &doc.rows {
        let _ = writeln!(
            text,
            "{:<22} {} {} {} {} {}{}",
            r.label,
            fmt_opt(r.ndcg_at_k),
            fmt_opt(r.recall_at_k),
            fmt_opt(r.ece),
            fmt_opt(r.diversity_at_k),
            fmt_opt(r.tils_at_k),
            if r.status == "ok" { String::new() } else { format!("  [{}]", r.status) },
        );
    }
    let _ = writeln!(text, "split manifest hash: {}", doc.split_manifest_hash);
    text
}

fn cmd_synth(global: &GlobalArgs, mut params: SynthParams) -> Result<(), CliError> {
    let mut cfg = RunConfig::default();
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    params.seed = cfg.seed;
    let output = synth_hierarchy(&params).map_err(validation)?;

    let dir = make_run_dir(&out_base(global), "synth", &cfg.hash())?;
    let inter_path = dir.join("interactions.tsv");
    let tags_path = dir.join("item_tags.tsv");
    write_text_file(&inter_path, &output.interactions_tsv)?;
    write_text_file(&tags_path, &output.item_tags_tsv)?;
    write_json_file(&dir.join("synth_report.json"), &output.report)?;
    let manifest = json!({
        "command": "synth",
        "params": {
            "users": params.n_users,
            "items": params.n_items,
            "tags": params.n_tags,
            "depth": params.depth,
            "noise": params.noise,
            "interactions_per_user": params.interactions_per_user,
            "seed": params.seed,
        },
        "outputs": ["interactions.tsv", "item_tags.tsv", "synth_report.json"],
    });
    write_json_file(&dir.join("manifest.json"), &manifest)?;
    eprintln!("run dir: {}", dir.display());

    let doc = json!({
        "run_dir": dir.display().to_string(),
        "interactions": inter_path.display().to_string(),
        "item_tags": tags_path.display().to_string(),
        "report": output.report,
    });
    let r = &output.report;
    let mut text = String::new();
    let _ = writeln!(text, "interactions  {}", inter_path.display());
    let _ = writeln!(text, "item tags     {}", tags_path.display());
    let _ = writeln!(
        text,
        "tree          branching {} depth {} ({} tags used, {} leaves)",
        r.branching, r.levels, r.tags_used, r.leaves
    );
    let _ = writeln!(text, "rows          {}", r.interactions);
    emit(global, &serde_json::to_string_pretty(&doc).map_err(runtime)?, &text);
    Ok(())
}
