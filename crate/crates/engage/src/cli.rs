//! Command-line interface: reproducible runs over dialogue logs.
//!
//! Every subcommand writes its artifacts into `--out-dir` along with exactly
//! one `manifest.json` recording the command, input checksums, seed, and
//! outputs. For fixed inputs and seed, outputs are byte-identical across
//! runs and manifests differ only in their timing fields.
//!
//! Sessions without a single labeled user utterance are dropped with a
//! warning before statistics, metrics, training, and evaluation — the
//! library itself stays strict and rejects them.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dialogue::Session;
use crate::error::{Error, Result};
use crate::eval::{
    feature_importance, run_baselines, run_experiment, EvalReport, ExperimentConfig,
    MethodSummary, SelectionGrid,
};
use crate::features::basic::CommandVocab;
use crate::features::syntactic::Sidecar;
use crate::features::topics::LdaConfig;
use crate::features::{build_rows, ContextSetting, FeatureConfig, FeatureGroup, FeatureRegistry, FittedPipeline, Row};
use crate::ingest::{dataset_stats, load_sessions, write_sessions_jsonl, CorpusStats, DEFAULT_SESSION_GAP_SECONDS};
use crate::learn::{train, LogRegModel, TrainConfig};
use crate::manifest::RunManifest;
use crate::metrics::{corpus_aggregate, AggregationMode, CorpusReport, DEFAULT_ALPHA, DEFAULT_LOW_ENGAGEMENT_THRESHOLD};

/// Engagement metrics and engagement-status prediction for
/// intelligent-assistant dialogue logs.
#[derive(Debug, Parser)]
#[command(name = "engage", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Seed for all randomness in the run; overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for parallel sections (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    /// Experiment configuration JSON (required by train and evaluate).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse raw dialogue logs (JSONL) into a sessions file.
    Ingest {
        /// Input log files; concatenated streams are split by time gap.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Start a new session when consecutive records are further apart
        /// than this many seconds.
        #[arg(long, default_value_t = DEFAULT_SESSION_GAP_SECONDS)]
        gap_seconds: f64,
        #[arg(long, short)]
        out_dir: PathBuf,
    },
    /// Corpus statistics (per dataset and overall).
    Stats {
        /// Sessions file produced by `ingest`.
        sessions: PathBuf,
        #[arg(long, short)]
        out_dir: PathBuf,
    },
    /// Per-session engagement metrics and the corpus summary.
    Metrics {
        /// Sessions file produced by `ingest`.
        sessions: PathBuf,
        /// Fatigue exponent.
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: u32,
        /// Engagement score below which a session counts as low-engagement.
        #[arg(long, default_value_t = DEFAULT_LOW_ENGAGEMENT_THRESHOLD)]
        threshold: f64,
        /// How corpus-level metrics combine sessions.
        #[arg(long, value_enum, default_value_t = AggregateArg::Pooled)]
        aggregate: AggregateArg,
        #[arg(long, short)]
        out_dir: PathBuf,
    },
    /// Train a model on the full configured dataset.
    Train {
        #[arg(long, short)]
        out_dir: PathBuf,
    },
    /// Run the repeated cross-validation protocol.
    Evaluate {
        #[arg(long, short)]
        out_dir: PathBuf,
    },
    /// Rank a trained model's features by weight.
    Importance {
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Registry file written alongside the model.
        #[arg(long)]
        registry: PathBuf,
        #[arg(long, default_value_t = 100)]
        top_k: usize,
        #[arg(long, short)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregateArg {
    /// Pool raw counts across sessions.
    Pooled,
    /// Average per-session metrics.
    PerSession,
}

impl AggregateArg {
    fn mode(self) -> AggregationMode {
        match self {
            AggregateArg::Pooled => AggregationMode::PoolCounts,
            AggregateArg::PerSession => AggregationMode::PerSessionMean,
        }
    }

    fn name(self) -> &'static str {
        match self {
            AggregateArg::Pooled => "pooled",
            AggregateArg::PerSession => "per-session",
        }
    }
}

/// The experiment configuration file consumed by `train` and `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    /// Sessions files (output of `ingest`).
    pub dataset: Vec<PathBuf>,
    /// Optional syntactic-annotation sidecar (JSONL).
    #[serde(default)]
    pub sidecar: Option<PathBuf>,
    /// Context window: cur_utt | cur | next | prev | all.
    #[serde(default = "default_context")]
    pub context: String,
    /// Feature groups: basic | phrasal | syntactic | ngram | topic.
    #[serde(default = "default_groups")]
    pub groups: Vec<String>,
    #[serde(default = "default_true")]
    pub with_similarity: bool,
    #[serde(default)]
    pub shared_ngram_vocab: bool,
    /// L1 penalty strength.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Chi-square selection grid (numbers of discrete columns to keep).
    #[serde(default)]
    pub grid: Vec<usize>,
    /// PCA grid for the topic block (numbers of components).
    #[serde(default)]
    pub pca_grid: Vec<usize>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bonferroni_m: Option<usize>,
    #[serde(default = "default_true")]
    pub stratified: bool,
    /// Misclassified test rows to sample into the evaluation report.
    #[serde(default)]
    pub failure_sample: usize,
    /// Evaluate only the majority and random baselines (no model).
    #[serde(default)]
    pub baselines_only: bool,
    /// Command vocabulary JSON; when absent one is derived per training fold.
    #[serde(default)]
    pub command_vocab: Option<PathBuf>,
    #[serde(default = "default_auto_command_words")]
    pub auto_command_words: usize,
    /// Topic model size.
    #[serde(default = "default_n_topics")]
    pub n_topics: usize,
    #[serde(default)]
    pub lda_burn_in: Option<usize>,
    #[serde(default)]
    pub lda_infer_sweeps: Option<usize>,
    /// Session gap when a dataset file still needs time-based splitting.
    #[serde(default)]
    pub gap_seconds: Option<f64>,
}

fn default_context() -> String {
    "next".to_string()
}

fn default_groups() -> Vec<String> {
    FeatureGroup::ALL.iter().map(|g| g.name().to_string()).collect()
}

fn default_true() -> bool {
    true
}

fn default_lambda() -> f64 {
    1.0
}

fn default_folds() -> usize {
    10
}

fn default_repeats() -> usize {
    5
}

fn default_auto_command_words() -> usize {
    20
}

fn default_n_topics() -> usize {
    50
}

impl ExperimentFile {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Resolve into the runnable configuration. The command-line seed, when
    /// given, overrides the file's.
    pub fn to_experiment_config(&self, seed_override: Option<u64>) -> Result<ExperimentConfig> {
        let seed = seed_override.unwrap_or(self.seed);
        let setting: ContextSetting = self.context.parse()?;
        let groups: BTreeSet<FeatureGroup> = self
            .groups
            .iter()
            .map(|g| g.parse())
            .collect::<Result<_>>()?;
        let command_vocab = match &self.command_vocab {
            Some(path) => {
                let file = fs::File::open(path)?;
                let vocab: CommandVocab = serde_json::from_reader(BufReader::new(file))
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                Some(vocab)
            }
            None => None,
        };
        let mut lda = LdaConfig {
            n_topics: self.n_topics,
            seed,
            ..LdaConfig::default()
        };
        if let Some(b) = self.lda_burn_in {
            lda.burn_in = b;
        }
        if let Some(s) = self.lda_infer_sweeps {
            lda.infer_sweeps = s;
        }

        let features = FeatureConfig {
            setting,
            groups,
            with_similarity: self.with_similarity,
            shared_ngram_vocab: self.shared_ngram_vocab,
            lda,
            command_vocab,
            auto_command_words: self.auto_command_words,
        };
        let train = TrainConfig {
            lambda: self.lambda,
            seed,
            ..TrainConfig::default()
        };

        Ok(ExperimentConfig {
            features,
            train,
            folds: self.folds,
            repeats: self.repeats,
            seed,
            stratified: self.stratified,
            grid: SelectionGrid {
                chi_k: self.grid.clone(),
                pca_k: self.pca_grid.clone(),
            },
            bonferroni_m: self.bonferroni_m,
            failure_sample: self.failure_sample,
        })
    }

    fn load_sidecar(&self) -> Result<Option<Sidecar>> {
        match &self.sidecar {
            Some(path) => {
                let file = fs::File::open(path)?;
                Ok(Some(Sidecar::from_jsonl_reader(BufReader::new(file))?))
            }
            None => Ok(None),
        }
    }
}

/// Parse the process arguments and run. Clap itself exits with code 2 on
/// usage errors, matching the config-error convention.
pub fn run() -> Result<()> {
    run_cli(Cli::parse())
}

/// Entry point usable from tests: parse the given arguments and run.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)
        .map_err(|e| Error::Config(format!("argument parsing: {e}")))?;
    run_cli(cli)
}

fn run_cli(cli: Cli) -> Result<()> {
    if cli.jobs > 0 {
        // Ignore the error if a pool already exists (repeat calls in-process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }
    match &cli.command {
        Command::Ingest {
            inputs,
            gap_seconds,
            out_dir,
        } => cmd_ingest(inputs, *gap_seconds, out_dir, cli.seed),
        Command::Stats { sessions, out_dir } => cmd_stats(sessions, out_dir, cli.seed),
        Command::Metrics {
            sessions,
            alpha,
            threshold,
            aggregate,
            out_dir,
        } => cmd_metrics(sessions, *alpha, *threshold, *aggregate, out_dir, cli.seed),
        Command::Train { out_dir } => {
            let config = require_config(&cli)?;
            cmd_train(&config, out_dir, cli.seed)
        }
        Command::Evaluate { out_dir } => {
            let config = require_config(&cli)?;
            cmd_evaluate(&config, out_dir, cli.seed)
        }
        Command::Importance {
            model,
            registry,
            top_k,
            out_dir,
        } => cmd_importance(model, registry, *top_k, out_dir, cli.seed),
    }
}

fn require_config(cli: &Cli) -> Result<PathBuf> {
    cli.config
        .clone()
        .ok_or_else(|| Error::Config("this command requires --config <file>".into()))
}

/// Drop sessions without any labeled user utterance, warning on stderr.
fn filter_labeled(sessions: Vec<Session>) -> Vec<Session> {
    let before = sessions.len();
    let kept: Vec<Session> = sessions
        .into_iter()
        .filter(|s| !s.labels().is_empty())
        .collect();
    let dropped = before - kept.len();
    if dropped > 0 {
        eprintln!("warning: dropped {dropped} session(s) without any labeled user utterance");
    }
    kept
}

fn load_corpus(paths: &[PathBuf], gap_seconds: f64) -> Result<Vec<Session>> {
    let mut sessions = Vec::new();
    for path in paths {
        sessions.extend(load_sessions(path, gap_seconds)?);
    }
    Ok(sessions)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::from)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("{}: {e}", path.display())))?;
    fs::write(path, json + "\n").map_err(Error::from)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_ingest(
    inputs: &[PathBuf],
    gap_seconds: f64,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let started = Instant::now();
    if gap_seconds.is_nan() || gap_seconds <= 0.0 {
        return Err(Error::Config("gap-seconds must be > 0".into()));
    }
    ensure_dir(out_dir)?;
    let mut manifest = RunManifest::new(
        format!("ingest --gap-seconds {gap_seconds}"),
        seed.unwrap_or(0),
    );
    let mut sessions = Vec::new();
    let mut n_utts = 0usize;
    for path in inputs {
        manifest.record_input(path)?;
        let loaded = load_sessions(path, gap_seconds)?;
        n_utts += loaded.iter().map(|s| s.utterances.len()).sum::<usize>();
        sessions.extend(loaded);
    }

    let out_path = out_dir.join("sessions.jsonl");
    let mut buffer = Vec::new();
    write_sessions_jsonl(&sessions, &mut buffer)?;
    fs::write(&out_path, buffer)?;
    manifest.record_output(&out_path);
    manifest.finish(started);
    manifest.write(&out_dir.join("manifest.json"))?;

    println!(
        "ingested {} session(s), {} utterance(s) from {} file(s) -> {}",
        sessions.len(),
        n_utts,
        inputs.len(),
        out_path.display()
    );
    Ok(())
}

/// Table-shaped corpus statistics: one block per dataset plus the overall
/// pool, datasets in first-appearance order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsReport {
    pub datasets: Vec<DatasetStatsEntry>,
    pub overall: CorpusStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStatsEntry {
    pub dataset: String,
    #[serde(flatten)]
    pub stats: CorpusStats,
}

fn stats_report(sessions: &[Session]) -> Result<StatsReport> {
    let mut order: Vec<String> = Vec::new();
    for s in sessions {
        if !order.contains(&s.dataset_id) {
            order.push(s.dataset_id.clone());
        }
    }
    let mut datasets = Vec::with_capacity(order.len());
    for id in order {
        let subset: Vec<Session> = sessions
            .iter()
            .filter(|s| s.dataset_id == id)
            .cloned()
            .collect();
        datasets.push(DatasetStatsEntry {
            dataset: id,
            stats: dataset_stats(&subset)?,
        });
    }
    Ok(StatsReport {
        datasets,
        overall: dataset_stats(sessions)?,
    })
}

fn write_stats_csv(path: &Path, report: &StatsReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "dataset",
        "n_sessions",
        "n_tasks",
        "utt_per_task",
        "words_per_user_utt",
        "n_labeled_utts",
        "C%",
        "R%",
        "F%",
        "A%",
    ])?;
    let mut write_row = |name: &str, stats: &CorpusStats| -> Result<()> {
        let pct = |code: char| {
            (stats.label_fractions.get(&code).copied().unwrap_or(0.0) * 100.0).to_string()
        };
        writer.write_record([
            name.to_string(),
            stats.n_sessions.to_string(),
            stats.n_tasks.to_string(),
            stats.utt_per_task.to_string(),
            stats.words_per_user_utt.to_string(),
            stats.n_labeled_utts.to_string(),
            pct('C'),
            pct('R'),
            pct('F'),
            pct('A'),
        ])?;
        Ok(())
    };
    for entry in &report.datasets {
        write_row(&entry.dataset, &entry.stats)?;
    }
    write_row("overall", &report.overall)?;
    Ok(())
}

fn cmd_stats(sessions_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let started = Instant::now();
    ensure_dir(out_dir)?;
    let mut manifest = RunManifest::new("stats", seed.unwrap_or(0));
    manifest.record_input(sessions_path)?;

    let sessions = filter_labeled(load_corpus(
        &[sessions_path.to_path_buf()],
        DEFAULT_SESSION_GAP_SECONDS,
    )?);
    if sessions.is_empty() {
        return Err(Error::InvalidInput("no labeled sessions".into()));
    }
    let report = stats_report(&sessions)?;

    let json_path = out_dir.join("stats.json");
    write_json(&json_path, &report)?;
    let csv_path = out_dir.join("stats.csv");
    write_stats_csv(&csv_path, &report)?;

    manifest.record_output(&json_path);
    manifest.record_output(&csv_path);
    manifest.finish(started);
    manifest.write(&out_dir.join("manifest.json"))?;

    println!(
        "{} session(s), {} task(s), {} labeled utterance(s) across {} dataset(s)",
        report.overall.n_sessions,
        report.overall.n_tasks,
        report.overall.n_labeled_utts,
        report.datasets.len()
    );
    Ok(())
}

fn write_session_metrics_csv(path: &Path, report: &CorpusReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "session_id",
        "n_tasks",
        "success_rate",
        "reform_rate",
        "fatigue_value",
        "efficiency_rate",
        "ue_score",
    ])?;
    for row in &report.per_session {
        writer.write_record([
            row.session_id.clone(),
            row.metrics.n_tasks.to_string(),
            fmt_opt(row.metrics.success_rate),
            row.metrics.reform_rate.to_string(),
            row.metrics.fatigue_value.to_string(),
            row.metrics.efficiency_rate.to_string(),
            fmt_opt(row.metrics.ue_score),
        ])?;
    }
    Ok(())
}

/// Scatter data: one (success, efficiency) pair per session with a defined
/// success rate.
fn write_scatter_csv(path: &Path, report: &CorpusReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["success_rate", "efficiency_rate"])?;
    for row in &report.per_session {
        if let Some(success) = row.metrics.success_rate {
            writer.write_record([
                success.to_string(),
                row.metrics.efficiency_rate.to_string(),
            ])?;
        }
    }
    Ok(())
}

fn cmd_metrics(
    sessions_path: &Path,
    alpha: u32,
    threshold: f64,
    aggregate: AggregateArg,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let started = Instant::now();
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config("threshold must lie in [0, 1]".into()));
    }
    ensure_dir(out_dir)?;
    let mut manifest = RunManifest::new(
        format!(
            "metrics --alpha {alpha} --threshold {threshold} --aggregate {}",
            aggregate.name()
        ),
        seed.unwrap_or(0),
    );
    manifest.record_input(sessions_path)?;

    let sessions = filter_labeled(load_corpus(
        &[sessions_path.to_path_buf()],
        DEFAULT_SESSION_GAP_SECONDS,
    )?);
    if sessions.is_empty() {
        return Err(Error::InvalidInput("no labeled sessions".into()));
    }
    let report = corpus_aggregate(&sessions, alpha, aggregate.mode(), threshold)?;

    let summary_path = out_dir.join("corpus_summary.json");
    write_json(&summary_path, &report.summary)?;
    let per_session_path = out_dir.join("session_metrics.csv");
    write_session_metrics_csv(&per_session_path, &report)?;
    let scatter_path = out_dir.join("scatter.csv");
    write_scatter_csv(&scatter_path, &report)?;

    manifest.record_output(&summary_path);
    manifest.record_output(&per_session_path);
    manifest.record_output(&scatter_path);
    manifest.finish(started);
    manifest.write(&out_dir.join("manifest.json"))?;

    let s = &report.summary;
    println!(
        "{} session(s): success {} reform {:.6} fatigue {:.6} efficiency {:.6} engagement {} ({} low-engagement)",
        s.n_sessions,
        fmt_opt(s.success_rate),
        s.reform_rate,
        s.fatigue_value,
        s.efficiency_rate,
        fmt_opt(s.ue_score),
        s.n_low_engagement_sessions,
    );
    Ok(())
}

/// Load the configured corpus and build prediction rows.
fn load_rows(file: &ExperimentFile) -> Result<(Vec<Row>, Option<Sidecar>)> {
    let gap = file.gap_seconds.unwrap_or(DEFAULT_SESSION_GAP_SECONDS);
    let sessions = filter_labeled(load_corpus(&file.dataset, gap)?);
    if sessions.is_empty() {
        return Err(Error::InvalidInput("no labeled sessions".into()));
    }
    let setting: ContextSetting = file.context.parse()?;
    let rows = build_rows(&sessions, setting)?;
    if rows.is_empty() {
        return Err(Error::InvalidInput("no labeled user utterances".into()));
    }
    let sidecar = file.load_sidecar()?;
    Ok((rows, sidecar))
}

fn record_experiment_inputs(manifest: &mut RunManifest, config_path: &Path, file: &ExperimentFile) -> Result<()> {
    manifest.record_config(&fs::read(config_path)?);
    manifest.record_input(config_path)?;
    for path in &file.dataset {
        manifest.record_input(path)?;
    }
    if let Some(path) = &file.sidecar {
        manifest.record_input(path)?;
    }
    if let Some(path) = &file.command_vocab {
        manifest.record_input(path)?;
    }
    Ok(())
}

fn cmd_train(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let started = Instant::now();
    ensure_dir(out_dir)?;
    let file = ExperimentFile::from_path(config_path)?;
    let cfg = file.to_experiment_config(seed)?;
    let mut manifest = RunManifest::new("train", cfg.seed);
    record_experiment_inputs(&mut manifest, config_path, &file)?;

    let (rows, sidecar) = load_rows(&file)?;
    let all: Vec<usize> = (0..rows.len()).collect();
    let pipeline = FittedPipeline::fit(&rows, &all, &cfg.features, sidecar.as_ref())?;
    let output = pipeline.transform(&rows, &all, sidecar.as_ref())?;
    let mut model = train(&output.matrix, &output.labels, &cfg.train)?;
    model.registry_checksum = Some(pipeline.registry().checksum());

    let model_path = out_dir.join("model.json");
    write_json(&model_path, &model)?;
    let registry_path = out_dir.join("registry.json");
    write_json(&registry_path, pipeline.registry())?;

    manifest.record_output(&model_path);
    manifest.record_output(&registry_path);
    manifest.finish(started);
    manifest.write(&out_dir.join("manifest.json"))?;

    println!(
        "trained on {} row(s) x {} feature(s); {} of {} weights zero; objective {:.6}",
        rows.len(),
        model.n_features(),
        model.n_zero_weights(),
        model.n_features() * crate::learn::N_CLASSES,
        model.final_objective,
    );
    Ok(())
}

fn write_summary_csv(path: &Path, methods: &[&MethodSummary]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "method",
        "mean_accuracy",
        "std_accuracy",
        "mean_macro_f1",
        "std_macro_f1",
        "f1_F",
        "f1_C",
        "f1_R",
        "f1_A",
    ])?;
    for summary in methods {
        writer.write_record([
            summary.name.clone(),
            summary.mean_accuracy.to_string(),
            summary.std_accuracy.to_string(),
            summary.mean_macro_f1.to_string(),
            summary.std_macro_f1.to_string(),
            summary.per_class[0].f1.to_string(),
            summary.per_class[1].f1.to_string(),
            summary.per_class[2].f1.to_string(),
            summary.per_class[3].f1.to_string(),
        ])?;
    }
    Ok(())
}

fn write_splits_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "split_index",
        "chosen_chi_k",
        "chosen_pca_k",
        "validation_macro_f1",
        "accuracy",
        "macro_f1",
        "f1_F",
        "f1_C",
        "f1_R",
        "f1_A",
        "n_features_used",
        "nonzero_weights",
        "syntactic_skips",
    ])?;
    for split in &report.splits {
        writer.write_record([
            split.split_index.to_string(),
            split.chosen.chi_k.map(|k| k.to_string()).unwrap_or_default(),
            split.chosen.pca_k.map(|k| k.to_string()).unwrap_or_default(),
            split.validation_macro_f1.to_string(),
            split.scores.accuracy.to_string(),
            split.scores.macro_f1.to_string(),
            split.scores.per_class_f1[0].to_string(),
            split.scores.per_class_f1[1].to_string(),
            split.scores.per_class_f1[2].to_string(),
            split.scores.per_class_f1[3].to_string(),
            split.n_features_used.to_string(),
            split.nonzero_weights.to_string(),
            split.syntactic_skips.to_string(),
        ])?;
    }
    Ok(())
}

fn write_grid_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["split_index", "chi_k", "pca_k", "validation_macro_f1"])?;
    for row in &report.grid_rows {
        writer.write_record([
            row.split_index.to_string(),
            row.point.chi_k.map(|k| k.to_string()).unwrap_or_default(),
            row.point.pca_k.map(|k| k.to_string()).unwrap_or_default(),
            row.validation_macro_f1.to_string(),
        ])?;
    }
    Ok(())
}

fn write_significance_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "comparison",
        "metric",
        "mean_diff",
        "t",
        "p",
        "p_adjusted",
        "m",
        "degenerate",
    ])?;
    for entry in &report.significance {
        writer.write_record([
            entry.comparison.clone(),
            entry.metric.clone(),
            entry.mean_diff.to_string(),
            entry.t.to_string(),
            entry.p.to_string(),
            entry.p_adjusted.to_string(),
            entry.m.to_string(),
            entry.degenerate.to_string(),
        ])?;
    }
    Ok(())
}

fn cmd_evaluate(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let started = Instant::now();
    ensure_dir(out_dir)?;
    let file = ExperimentFile::from_path(config_path)?;
    let cfg = file.to_experiment_config(seed)?;
    let mut manifest = RunManifest::new(
        if file.baselines_only { "evaluate --baselines-only" } else { "evaluate" },
        cfg.seed,
    );
    record_experiment_inputs(&mut manifest, config_path, &file)?;
    let (rows, sidecar) = load_rows(&file)?;

    if file.baselines_only {
        let report = run_baselines(&rows, &cfg)?;
        for warning in &report.warnings {
            eprintln!("warning: {warning}");
        }
        let report_path = out_dir.join("report.json");
        write_json(&report_path, &report)?;
        let summary_path = out_dir.join("summary.csv");
        write_summary_csv(&summary_path, &[&report.majority, &report.random])?;
        manifest.record_output(&report_path);
        manifest.record_output(&summary_path);
        manifest.finish(started);
        manifest.write(&out_dir.join("manifest.json"))?;
        println!(
            "baselines over {} row(s): majority macro-F1 {:.4}, random {:.4}",
            report.n_rows, report.majority.mean_macro_f1, report.random.mean_macro_f1,
        );
        return Ok(());
    }

    let report = run_experiment(&rows, &cfg, sidecar.as_ref())?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }

    let report_path = out_dir.join("report.json");
    write_json(&report_path, &report)?;
    let summary_path = out_dir.join("summary.csv");
    write_summary_csv(&summary_path, &[&report.model, &report.majority, &report.random])?;
    let splits_path = out_dir.join("splits.csv");
    write_splits_csv(&splits_path, &report)?;
    let grid_path = out_dir.join("grid.csv");
    write_grid_csv(&grid_path, &report)?;
    let significance_path = out_dir.join("significance.csv");
    write_significance_csv(&significance_path, &report)?;

    for path in [&report_path, &summary_path, &splits_path, &grid_path, &significance_path] {
        manifest.record_output(path);
    }
    manifest.finish(started);
    manifest.write(&out_dir.join("manifest.json"))?;

    println!(
        "{} split(s) over {} row(s): model macro-F1 {:.4} (+/- {:.4}), majority {:.4}, random {:.4}",
        report.splits.len(),
        report.n_rows,
        report.model.mean_macro_f1,
        report.model.std_macro_f1,
        report.majority.mean_macro_f1,
        report.random.mean_macro_f1,
    );
    Ok(())
}

fn cmd_importance(
    model_path: &Path,
    registry_path: &Path,
    top_k: usize,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let started = Instant::now();
    ensure_dir(out_dir)?;
    let mut manifest = RunManifest::new(format!("importance --top-k {top_k}"), seed.unwrap_or(0));
    manifest.record_input(model_path)?;
    manifest.record_input(registry_path)?;

    let model: LogRegModel = serde_json::from_str(&fs::read_to_string(model_path)?)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", model_path.display())))?;
    let mut registry: FeatureRegistry =
        serde_json::from_str(&fs::read_to_string(registry_path)?)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", registry_path.display())))?;
    registry.reindex();
    if let Some(expected) = &model.registry_checksum {
        let actual = registry.checksum();
        if *expected != actual {
            return Err(Error::InvalidInput(format!(
                "model was trained against registry {} but {} has checksum {}",
                &expected[..8.min(expected.len())],
                registry_path.display(),
                &actual[..8],
            )));
        }
    }

    let report = feature_importance(&model, &registry, top_k)?;

    let csv_path = out_dir.join("importance.csv");
    let mut writer = csv::Writer::from_path(&csv_path)?;
    writer.write_record(["#", "Context", "Feature Type", "Name"])?;
    for entry in &report.entries {
        writer.write_record([
            entry.rank.to_string(),
            entry.slot.clone(),
            entry.group.name().to_string(),
            entry.name.clone(),
        ])?;
    }
    drop(writer);

    let dist_path = out_dir.join("source_distribution.json");
    write_json(&dist_path, &report)?;

    manifest.record_output(&csv_path);
    manifest.record_output(&dist_path);
    manifest.finish(started);
    manifest.write(&out_dir.join("manifest.json"))?;

    println!(
        "ranked {} feature(s); slot shares: {}",
        report.entries.len(),
        report
            .slot_shares
            .iter()
            .map(|(slot, share)| format!("{slot} {share:.1}%"))
            .collect::<Vec<_>>()
            .join(", "),
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_file_defaults_fill_in() {
        let file: ExperimentFile =
            serde_json::from_str(r#"{"dataset": ["sessions.jsonl"]}"#).unwrap();
        assert_eq!(file.context, "next");
        assert_eq!(file.groups.len(), 5);
        assert!(file.with_similarity);
        assert_eq!(file.lambda, 1.0);
        assert_eq!(file.folds, 10);
        assert_eq!(file.repeats, 5);
        assert_eq!(file.n_topics, 50);
        let cfg = file.to_experiment_config(None).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.features.setting, ContextSetting::Next);
        assert_eq!(cfg.train.lambda, 1.0);
    }

    #[test]
    fn command_line_seed_overrides_the_config_seed() {
        let file: ExperimentFile =
            serde_json::from_str(r#"{"dataset": ["x.jsonl"], "seed": 7}"#).unwrap();
        assert_eq!(file.to_experiment_config(None).unwrap().seed, 7);
        let cfg = file.to_experiment_config(Some(99)).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.train.seed, 99);
        assert_eq!(cfg.features.lda.seed, 99);
    }

    #[test]
    fn unknown_config_fields_are_config_errors() {
        let err = serde_json::from_str::<ExperimentFile>(
            r#"{"dataset": [], "lambada": 1.0}"#,
        );
        assert!(err.is_err());
        let parsed = ExperimentFile::from_path(Path::new("/nonexistent.json"));
        assert!(parsed.is_err());
    }

    #[test]
    fn bad_context_and_group_names_are_rejected() {
        let file: ExperimentFile = serde_json::from_str(
            r#"{"dataset": [], "context": "sideways"}"#,
        )
        .unwrap();
        assert!(matches!(
            file.to_experiment_config(None),
            Err(Error::Config(_))
        ));
        let file: ExperimentFile = serde_json::from_str(
            r#"{"dataset": [], "groups": ["basic", "psychic"]}"#,
        )
        .unwrap();
        assert!(matches!(
            file.to_experiment_config(None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn grid_fields_map_onto_both_axes() {
        let file: ExperimentFile = serde_json::from_str(
            r#"{"dataset": [], "grid": [100, 400], "pca_grid": [5]}"#,
        )
        .unwrap();
        let cfg = file.to_experiment_config(None).unwrap();
        assert_eq!(cfg.grid.chi_k, vec![100, 400]);
        assert_eq!(cfg.grid.pca_k, vec![5]);
        assert_eq!(cfg.grid.points().len(), 2);
    }

    #[test]
    fn cli_parses_every_subcommand() {
        let cases: &[&[&str]] = &[
            &["engage", "ingest", "a.jsonl", "b.jsonl", "--out-dir", "out"],
            &["engage", "stats", "s.jsonl", "--out-dir", "out"],
            &["engage", "metrics", "s.jsonl", "--alpha", "3", "--out-dir", "out"],
            &["engage", "train", "--config", "c.json", "--out-dir", "out"],
            &["engage", "evaluate", "--config", "c.json", "--seed", "5", "--out-dir", "out"],
            &["engage", "importance", "--model", "m.json", "--registry", "r.json", "--out-dir", "out"],
        ];
        for case in cases {
            Cli::try_parse_from(*case).unwrap_or_else(|e| panic!("{case:?}: {e}"));
        }
        assert!(Cli::try_parse_from(["engage", "fly"]).is_err());
    }

    #[test]
    fn train_and_evaluate_require_a_config() {
        let err = run_from(["engage", "train", "--out-dir", "/tmp/none"]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 2);
    }
}
