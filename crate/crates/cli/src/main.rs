//! `sourcetrace` — one-binary workflow for spoofed-speech source tracing:
//! generate a synthetic corpus, split it speaker-disjointly, train the
//! multi-task (or binary baseline) model, and evaluate attribute accuracy
//! and spoofing EER.
//!
//! Exit codes: 0 success, 2 usage error, 3 data/validation error, 4 runtime
//! failure. Logs go to stderr; outputs carry the resolved configuration.

mod config;

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sourcetrace_core::dataset::{
    build_partitioned_samples, read_protocol_file, CorpusDir, DatasetError,
};
use sourcetrace_core::eval::{evaluate, EvalError};
use sourcetrace_core::model::{self, EncoderKind, Model, ModelError, TrainMode, TrainingData};
use sourcetrace_core::partition::{
    apply_manifest, export_manifest, import_manifest, split, verify, SplitError, SplitSpec,
};
use sourcetrace_core::protocol::{AttackId, SourceSubset};
use sourcetrace_core::scoring::{write_score_file, ScoreError};
use sourcetrace_core::synthcorpus::{generate_to_dir, SynthError};
use sourcetrace_core::taxonomy::labeled_corpus;

use config::{
    persist_resolved, resolve_features, resolve_input, resolve_synth_spec, resolve_train_config,
    FileConfig, TrainFlags,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::BadSpec(_) => CliError::Usage(e.to_string()),
            SynthError::Feature(_) => CliError::Data(e.to_string()),
            SynthError::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SplitError> for CliError {
    fn from(e: SplitError) -> Self {
        match e {
            SplitError::BadFraction(_) | SplitError::OverlappingAttackSets(_) => {
                CliError::Usage(e.to_string())
            }
            SplitError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) => CliError::Runtime(e.to_string()),
            DatasetError::Split(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::BadConfig(_) => CliError::Usage(e.to_string()),
            ModelError::Diverged { .. } | ModelError::Io(_) | ModelError::Json(_) => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// Exclusive lock on an output directory for the lifetime of a command.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("create `{}`: {e}", dir.display())))?;
        let path = dir.join(".sourcetrace.lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Runtime(
                format!(
                    "output directory `{}` is locked by another run (remove `{}` if stale)",
                    dir.display(),
                    path.display()
                ),
            )),
            Err(e) => Err(CliError::Runtime(format!("lock `{}`: {e}", path.display()))),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Parser)]
#[command(
    name = "sourcetrace",
    version,
    about = "Trace generation-pipeline attributes of spoofed speech and score spoofing detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Multitask,
    Binary,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> TrainMode {
        match m {
            ModeArg::Multitask => TrainMode::Multitask,
            ModeArg::Binary => TrainMode::Binary,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EncoderArg {
    ConvResidualFbank,
    RawWaveformFilterbank,
}

impl From<EncoderArg> for EncoderKind {
    fn from(e: EncoderArg) -> EncoderKind {
        match e {
            EncoderArg::ConvResidualFbank => EncoderKind::ConvResidualFbank,
            EncoderArg::RawWaveformFilterbank => EncoderKind::RawWaveformFilterbank,
        }
    }
}

#[derive(Args)]
struct CommonOpts {
    /// Optional TOML config; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data root for relative input paths (else $SOURCETRACE_DATA_ROOT).
    #[arg(long)]
    data_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic corpus (wav/ + protocol.txt).
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        /// Output corpus directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        speakers: Option<usize>,
        #[arg(long)]
        utts_per_attack: Option<usize>,
        #[arg(long)]
        bonafide_per_speaker: Option<usize>,
        /// Utterance duration in seconds (>= 0.5).
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        sample_rate: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strength_conv: Option<f64>,
        #[arg(long)]
        strength_spk: Option<f64>,
        #[arg(long)]
        strength_wg: Option<f64>,
    },
    /// Split a protocol speaker-disjointly and write a manifest.
    Split {
        #[command(flatten)]
        common: CommonOpts,
        /// Protocol file to split.
        #[arg(long)]
        protocol: PathBuf,
        /// Manifest output path.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated eval-side attacks (default A01,A05,A07).
        #[arg(long, value_delimiter = ',')]
        eval_attacks: Option<Vec<String>>,
        /// Comma-separated train-side attacks (default: complement).
        #[arg(long, value_delimiter = ',')]
        train_attacks: Option<Vec<String>>,
        #[arg(long)]
        eval_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Verify an existing manifest against the protocol instead of
        /// splitting; exits nonzero when the partition invariants fail.
        #[arg(long)]
        verify_manifest: Option<PathBuf>,
    },
    /// Train a model on a corpus + manifest; writes checkpoint and log.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Corpus directory (protocol.txt + wav/).
        #[arg(long)]
        corpus: PathBuf,
        /// Split manifest from `split`.
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory (checkpoint.json, train_log.jsonl).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<ModeArg>,
        #[arg(long)]
        encoder: Option<EncoderArg>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_decay: Option<f64>,
        #[arg(long)]
        weight_decay: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        embedding_dim: Option<usize>,
        #[arg(long)]
        lambda_conv: Option<f64>,
        #[arg(long)]
        lambda_spk: Option<f64>,
        #[arg(long)]
        lambda_wg: Option<f64>,
        /// `adam` or `sgd`.
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        blocks: Option<usize>,
        /// Fixed input length in seconds before featurization.
        #[arg(long)]
        target_seconds: Option<f64>,
        #[arg(long)]
        mean_var_norm: bool,
    },
    /// Evaluate a checkpoint on the manifest's eval side.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory (report.json, report.txt).
        #[arg(long)]
        out: PathBuf,
        /// Also write per-head and fused score files into this directory.
        #[arg(long)]
        scores_out: Option<PathBuf>,
    },
}

fn parse_attack_list(tokens: &[String]) -> Result<BTreeSet<AttackId>, CliError> {
    let mut out = BTreeSet::new();
    for t in tokens {
        let t = t.trim();
        if t.is_empty() {
            continue;
        }
        match AttackId::parse(t) {
            Some(a) => {
                out.insert(a);
            }
            None => {
                return Err(CliError::Usage(format!(
                    "unknown attack ID `{t}` in attack list (expected A01..A19)"
                )))
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    common: CommonOpts,
    out: PathBuf,
    speakers: Option<usize>,
    utts_per_attack: Option<usize>,
    bonafide_per_speaker: Option<usize>,
    duration: Option<f64>,
    sample_rate: Option<u32>,
    seed: Option<u64>,
    strength_conv: Option<f64>,
    strength_spk: Option<f64>,
    strength_wg: Option<f64>,
) -> Result<(), CliError> {
    let file = FileConfig::load(common.config.as_deref())?;
    let spec = resolve_synth_spec(
        &file.synth,
        speakers,
        utts_per_attack,
        bonafide_per_speaker,
        sample_rate,
        duration,
        seed,
        strength_conv,
        strength_spk,
        strength_wg,
    );
    spec.validate().map_err(|e| match e {
        SynthError::BadSpec(msg) if msg.contains("duration") => {
            CliError::Usage(format!("--duration: {msg}"))
        }
        other => other.into(),
    })?;
    let _lock = DirLock::acquire(&out)?;
    log::info!(
        "synth: {} speakers x ({} per attack + {} bona fide) -> {}",
        spec.speakers,
        spec.utterances_per_attack,
        spec.bonafide_count(),
        out.display()
    );
    let n = generate_to_dir(&spec, &out)?;
    persist_resolved(&out, &spec)?;
    log::info!("synth: wrote {n} utterances");
    println!("{n} utterances -> {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct ResolvedSplit {
    protocol: PathBuf,
    manifest: PathBuf,
    spec: SplitSpec,
}

#[allow(clippy::too_many_arguments)]
fn cmd_split(
    common: CommonOpts,
    protocol: PathBuf,
    out: PathBuf,
    eval_attacks: Option<Vec<String>>,
    train_attacks: Option<Vec<String>>,
    eval_fraction: Option<f64>,
    seed: Option<u64>,
    verify_manifest: Option<PathBuf>,
) -> Result<(), CliError> {
    let file = FileConfig::load(common.config.as_deref())?;
    let data_root = common.data_root.as_deref().or(file.data_root.as_deref());
    let protocol = resolve_input(&protocol, data_root);

    let defaults = SplitSpec::default();
    let eval_set = match eval_attacks.as_deref().or(file.split.eval_attacks.as_deref()) {
        Some(list) => parse_attack_list(list)?,
        None => defaults.eval_attacks.clone(),
    };
    let train_set = match train_attacks.as_deref().or(file.split.train_attacks.as_deref()) {
        Some(list) => parse_attack_list(list)?,
        None => AttackId::ALL
            .iter()
            .copied()
            .filter(|a| !eval_set.contains(a))
            .collect(),
    };
    let spec = SplitSpec {
        eval_attacks: eval_set,
        train_attacks: train_set,
        eval_speaker_fraction: config::pick(
            eval_fraction,
            file.split.eval_fraction,
            defaults.eval_speaker_fraction,
        ),
        rng_seed: config::pick(seed, file.split.seed, defaults.rng_seed),
    };

    let records = read_protocol_file(&protocol, SourceSubset::Unknown)?;
    let corpus = labeled_corpus(&records).map_err(|e| CliError::Data(e.to_string()))?;

    let partition = match &verify_manifest {
        None => {
            let p = split(&corpus, &spec)?;
            export_manifest(&p, &out)?;
            let resolved = ResolvedSplit {
                protocol: protocol.clone(),
                manifest: out.clone(),
                spec: spec.clone(),
            };
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)
                    .map_err(|e| CliError::Runtime(format!("create `{}`: {e}", parent.display())))?;
                persist_resolved(parent, &resolved)?;
            }
            p
        }
        Some(path) => {
            let assignments = import_manifest(&resolve_input(path, data_root))?;
            apply_manifest(&corpus, &assignments)?
        }
    };

    let report = verify(&partition, &spec);
    print!("{}", report.summary());
    if !report.pass {
        return Err(CliError::Data("partition verification failed".into()));
    }
    log::info!(
        "split: {} train / {} eval / {} unused",
        report.train_utts,
        report.eval_utts,
        report.unused_utts
    );
    Ok(())
}

#[derive(Serialize)]
struct ResolvedTrain {
    corpus: PathBuf,
    manifest: PathBuf,
    out: PathBuf,
    train: model::TrainConfig,
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    common: CommonOpts,
    corpus: PathBuf,
    manifest: PathBuf,
    out: PathBuf,
    flags: TrainFlags,
    target_seconds: Option<f64>,
    mean_var_norm: bool,
) -> Result<(), CliError> {
    let file = FileConfig::load(common.config.as_deref())?;
    let data_root = common.data_root.as_deref().or(file.data_root.as_deref());
    let corpus_dir = CorpusDir::new(resolve_input(&corpus, data_root));
    let manifest_path = resolve_input(&manifest, data_root);

    let features = resolve_features(&file.features, mean_var_norm, target_seconds);
    let cfg = resolve_train_config(&file, &flags, features)?;
    cfg.validate()?;

    // Resolve all inputs before any compute.
    if !manifest_path.exists() {
        return Err(CliError::Data(format!(
            "manifest `{}` does not exist",
            manifest_path.display()
        )));
    }
    let labeled = corpus_dir.labeled(SourceSubset::Unknown)?;
    let assignments = import_manifest(&manifest_path)?;
    let partition = apply_manifest(&labeled, &assignments)?;

    let _lock = DirLock::acquire(&out)?;
    persist_resolved(
        &out,
        &ResolvedTrain {
            corpus: corpus_dir.root.clone(),
            manifest: manifest_path.clone(),
            out: out.clone(),
            train: cfg.clone(),
        },
    )?;

    log::info!(
        "train: {} mode, {} encoder, {} train utts, {} heldout utts",
        cfg.mode,
        match cfg.encoder {
            EncoderKind::ConvResidualFbank => "conv-residual-fbank",
            EncoderKind::RawWaveformFilterbank => "raw-waveform-filterbank",
        },
        partition.train.len(),
        partition.eval.len()
    );
    let (train_samples, heldout) =
        build_partitioned_samples(&corpus_dir, &partition, cfg.encoder, &cfg.features)?;
    let data = TrainingData {
        train: train_samples,
        heldout,
    };
    let outcome = model::train(&data, &cfg)?;

    let ckpt_path = out.join("checkpoint.json");
    outcome.model.save(&ckpt_path)?;
    let mut log_file = std::fs::File::create(out.join("train_log.jsonl"))
        .map_err(|e| CliError::Runtime(format!("write train log: {e}")))?;
    for rec in &outcome.log {
        let line = serde_json::to_string(rec)
            .map_err(|e| CliError::Runtime(format!("serialize log record: {e}")))?;
        writeln!(log_file, "{line}").map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let last_train = outcome
        .log
        .iter()
        .rev()
        .find(|r| r.split == "train")
        .expect("at least one epoch");
    log::info!("train: final loss {:.6}", last_train.loss);
    println!("checkpoint -> {}", ckpt_path.display());
    Ok(())
}

#[derive(Serialize)]
struct ResolvedEval {
    checkpoint: PathBuf,
    corpus: PathBuf,
    manifest: PathBuf,
    out: PathBuf,
    scores_out: Option<PathBuf>,
}

fn cmd_eval(
    common: CommonOpts,
    checkpoint: PathBuf,
    corpus: PathBuf,
    manifest: PathBuf,
    out: PathBuf,
    scores_out: Option<PathBuf>,
) -> Result<(), CliError> {
    let file = FileConfig::load(common.config.as_deref())?;
    let data_root = common.data_root.as_deref().or(file.data_root.as_deref());
    let ckpt_path = resolve_input(&checkpoint, data_root);
    let corpus_dir = CorpusDir::new(resolve_input(&corpus, data_root));
    let manifest_path = resolve_input(&manifest, data_root);

    if !ckpt_path.exists() {
        return Err(CliError::Data(format!(
            "checkpoint `{}` does not exist",
            ckpt_path.display()
        )));
    }
    let model = Model::load(&ckpt_path)?;
    let labeled = corpus_dir.labeled(SourceSubset::Unknown)?;
    let assignments = import_manifest(&manifest_path)?;
    let partition = apply_manifest(&labeled, &assignments)?;

    let _lock = DirLock::acquire(&out)?;
    persist_resolved(
        &out,
        &ResolvedEval {
            checkpoint: ckpt_path.clone(),
            corpus: corpus_dir.root.clone(),
            manifest: manifest_path.clone(),
            out: out.clone(),
            scores_out: scores_out.clone(),
        },
    )?;

    let eval_samples = sourcetrace_core::dataset::build_samples(
        &corpus_dir,
        &partition.eval,
        model.config().encoder,
        &model.config().features,
    )?;
    log::info!("eval: {} utterances", eval_samples.len());
    let mut evaluation = evaluate(&model, &eval_samples)?;

    if let Some(dir) = &scores_out {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("create `{}`: {e}", dir.display())))?;
        let write = |name: &str, entries: &[(String, f64)]| -> Result<Option<String>, CliError> {
            if entries.is_empty() {
                return Ok(None);
            }
            let path = dir.join(name);
            let f = std::fs::File::create(&path).map_err(|e| CliError::Runtime(e.to_string()))?;
            write_score_file(std::io::BufWriter::new(f), entries)?;
            Ok(Some(path.display().to_string()))
        };
        let written = [
            write("fused.tsv", &evaluation.scores.fused)?,
            write("conv.tsv", &evaluation.scores.conv)?,
            write("spk.tsv", &evaluation.scores.spk)?,
            write("wg.tsv", &evaluation.scores.wg)?,
        ];
        evaluation.report.score_files = written.into_iter().flatten().collect();
        log::info!("eval: scores -> {}", dir.display());
    }

    let report_json = serde_json::to_string_pretty(&evaluation.report)
        .map_err(|e| CliError::Runtime(format!("serialize report: {e}")))?;
    std::fs::write(out.join("report.json"), report_json)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut text = evaluation.report.summary();
    text.push('\n');
    text.push_str(&evaluation.report.tables());
    std::fs::write(out.join("report.txt"), &text).map_err(|e| CliError::Runtime(e.to_string()))?;
    print!("{}", evaluation.report.summary());

    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            common,
            out,
            speakers,
            utts_per_attack,
            bonafide_per_speaker,
            duration,
            sample_rate,
            seed,
            strength_conv,
            strength_spk,
            strength_wg,
        } => cmd_synth(
            common,
            out,
            speakers,
            utts_per_attack,
            bonafide_per_speaker,
            duration,
            sample_rate,
            seed,
            strength_conv,
            strength_spk,
            strength_wg,
        ),
        Command::Split {
            common,
            protocol,
            out,
            eval_attacks,
            train_attacks,
            eval_fraction,
            seed,
            verify_manifest,
        } => cmd_split(
            common,
            protocol,
            out,
            eval_attacks,
            train_attacks,
            eval_fraction,
            seed,
            verify_manifest,
        ),
        Command::Train {
            common,
            corpus,
            manifest,
            out,
            mode,
            encoder,
            epochs,
            batch_size,
            lr,
            lr_decay,
            weight_decay,
            seed,
            embedding_dim,
            lambda_conv,
            lambda_spk,
            lambda_wg,
            optimizer,
            momentum,
            channels,
            blocks,
            target_seconds,
            mean_var_norm,
        } => cmd_train(
            common,
            corpus,
            manifest,
            out,
            TrainFlags {
                mode: mode.map(Into::into),
                encoder: encoder.map(Into::into),
                epochs,
                batch_size,
                learning_rate: lr,
                lr_decay,
                weight_decay,
                seed,
                embedding_dim,
                lambda_conv,
                lambda_spk,
                lambda_wg,
                optimizer,
                momentum,
                channels,
                blocks,
            },
            target_seconds,
            mean_var_norm,
        ),
        Command::Eval {
            common,
            checkpoint,
            corpus,
            manifest,
            out,
            scores_out,
        } => cmd_eval(common, checkpoint, corpus, manifest, out, scores_out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
