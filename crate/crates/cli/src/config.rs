//! Declarative run configuration: optional TOML file, overridden by
//! command-line flags, resolved to concrete values before any job starts.
//! The resolved copy is persisted alongside outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sourcetrace_core::model::{
    ConvEncoderConfig, EncoderKind, FeatureConfig, LossWeights, OptimizerKind, RawEncoderConfig,
    TrainConfig, TrainMode,
};
use sourcetrace_core::synthcorpus::SynthSpec;

/// Environment variable naming the default data root; relative input paths
/// resolve against it.
pub const DATA_ROOT_ENV: &str = "SOURCETRACE_DATA_ROOT";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data_root: Option<PathBuf>,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub speakers: Option<usize>,
    pub utterances_per_attack: Option<usize>,
    pub bonafide_per_speaker: Option<usize>,
    pub sample_rate: Option<u32>,
    pub duration_secs: Option<f64>,
    pub seed: Option<u64>,
    pub strength_conv: Option<f64>,
    pub strength_spk: Option<f64>,
    pub strength_wg: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub eval_attacks: Option<Vec<String>>,
    pub train_attacks: Option<Vec<String>>,
    pub eval_fraction: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    pub sample_rate: Option<u32>,
    pub win_ms: Option<f64>,
    pub hop_ms: Option<f64>,
    pub n_fft: Option<usize>,
    pub n_mels: Option<usize>,
    pub mean_var_norm: Option<bool>,
    pub target_seconds: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: Option<TrainMode>,
    pub encoder: Option<EncoderKind>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay_per_epoch: Option<f64>,
    pub weight_decay: Option<f64>,
    pub seed: Option<u64>,
    pub embedding_dim: Option<usize>,
    pub lambda_conv: Option<f64>,
    pub lambda_spk: Option<f64>,
    pub lambda_wg: Option<f64>,
    pub optimizer: Option<String>,
    pub momentum: Option<f64>,
    pub channels: Option<usize>,
    pub blocks: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, crate::CliError> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    crate::CliError::Data(format!("config `{}`: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| crate::CliError::Usage(format!("config `{}`: {e}", p.display())))
            }
        }
    }
}

/// Resolve a data input path: absolute paths pass through, relative paths
/// join the data root (flag/file value, else the environment variable, else
/// the current directory).
pub fn resolve_input(path: &Path, data_root: Option<&Path>) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    if let Some(root) = data_root {
        return root.join(path);
    }
    if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
        if !root.is_empty() {
            return PathBuf::from(root).join(path);
        }
    }
    path.to_path_buf()
}

pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Synth settings merged from flags, file and defaults.
#[allow(clippy::too_many_arguments)]
pub fn resolve_synth_spec(
    file: &SynthSection,
    speakers: Option<usize>,
    utterances_per_attack: Option<usize>,
    bonafide_per_speaker: Option<usize>,
    sample_rate: Option<u32>,
    duration_secs: Option<f64>,
    seed: Option<u64>,
    strength_conv: Option<f64>,
    strength_spk: Option<f64>,
    strength_wg: Option<f64>,
) -> SynthSpec {
    let d = SynthSpec::default();
    SynthSpec {
        speakers: pick(speakers, file.speakers, d.speakers),
        utterances_per_attack: pick(
            utterances_per_attack,
            file.utterances_per_attack,
            d.utterances_per_attack,
        ),
        bonafide_per_speaker: bonafide_per_speaker.or(file.bonafide_per_speaker),
        sample_rate: pick(sample_rate, file.sample_rate, d.sample_rate),
        duration_secs: pick(duration_secs, file.duration_secs, d.duration_secs),
        rng_seed: pick(seed, file.seed, d.rng_seed),
        strength_conv: pick(strength_conv, file.strength_conv, d.strength_conv),
        strength_spk: pick(strength_spk, file.strength_spk, d.strength_spk),
        strength_wg: pick(strength_wg, file.strength_wg, d.strength_wg),
    }
}

/// Feature settings merged from flags, file and defaults.
pub fn resolve_features(
    file: &FeaturesSection,
    mean_var_norm: bool,
    target_seconds: Option<f64>,
) -> FeatureConfig {
    let mut fc = FeatureConfig::default();
    let sr = file.sample_rate.unwrap_or(fc.fbank.sample_rate);
    fc.fbank.sample_rate = sr;
    let ms_to_samples = |ms: f64| ((ms / 1000.0) * sr as f64).round() as usize;
    if let Some(w) = file.win_ms {
        fc.fbank.win_len = ms_to_samples(w);
    }
    if let Some(h) = file.hop_ms {
        fc.fbank.hop = ms_to_samples(h);
    }
    if let Some(n) = file.n_fft {
        fc.fbank.n_fft = n;
    }
    if let Some(n) = file.n_mels {
        fc.fbank.n_mels = n;
    }
    fc.fbank.mean_var_norm = mean_var_norm || file.mean_var_norm.unwrap_or(false);
    let secs = target_seconds.or(file.target_seconds);
    if let Some(s) = secs {
        fc.target_samples = (s * sr as f64).round() as usize;
    }
    fc
}

pub struct TrainFlags {
    pub mode: Option<TrainMode>,
    pub encoder: Option<EncoderKind>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay: Option<f64>,
    pub weight_decay: Option<f64>,
    pub seed: Option<u64>,
    pub embedding_dim: Option<usize>,
    pub lambda_conv: Option<f64>,
    pub lambda_spk: Option<f64>,
    pub lambda_wg: Option<f64>,
    pub optimizer: Option<String>,
    pub momentum: Option<f64>,
    pub channels: Option<usize>,
    pub blocks: Option<usize>,
}

pub fn resolve_train_config(
    file: &FileConfig,
    flags: &TrainFlags,
    features: FeatureConfig,
) -> Result<TrainConfig, crate::CliError> {
    let t = &file.train;
    let d = TrainConfig::default();
    let optimizer = match flags
        .optimizer
        .clone()
        .or_else(|| t.optimizer.clone())
        .as_deref()
    {
        None | Some("adam") => OptimizerKind::default(),
        Some("sgd") => OptimizerKind::Sgd {
            momentum: pick(flags.momentum, t.momentum, 0.9),
        },
        Some(other) => {
            return Err(crate::CliError::Usage(format!(
                "--optimizer must be `adam` or `sgd`, got `{other}`"
            )))
        }
    };
    let channels = pick(flags.channels, t.channels, d.conv_encoder.channels);
    let blocks = pick(flags.blocks, t.blocks, d.conv_encoder.blocks);
    Ok(TrainConfig {
        encoder: pick(flags.encoder, t.encoder, d.encoder),
        mode: pick(flags.mode, t.mode, d.mode),
        epochs: pick(flags.epochs, t.epochs, d.epochs),
        batch_size: pick(flags.batch_size, t.batch_size, d.batch_size),
        optimizer,
        learning_rate: pick(flags.learning_rate, t.learning_rate, d.learning_rate),
        lr_decay_per_epoch: pick(flags.lr_decay, t.lr_decay_per_epoch, d.lr_decay_per_epoch),
        weight_decay: pick(flags.weight_decay, t.weight_decay, d.weight_decay),
        rng_seed: pick(flags.seed, t.seed, d.rng_seed),
        loss_weights: LossWeights {
            conv: pick(flags.lambda_conv, t.lambda_conv, 1.0),
            spk: pick(flags.lambda_spk, t.lambda_spk, 1.0),
            wg: pick(flags.lambda_wg, t.lambda_wg, 1.0),
        },
        embedding_dim: pick(flags.embedding_dim, t.embedding_dim, d.embedding_dim),
        conv_encoder: ConvEncoderConfig {
            channels,
            blocks,
            ..d.conv_encoder
        },
        raw_encoder: RawEncoderConfig {
            filters: channels,
            blocks,
            ..d.raw_encoder
        },
        features,
    })
}

/// Persist a resolved configuration next to the outputs it produced.
pub fn persist_resolved<T: Serialize>(out_dir: &Path, resolved: &T) -> Result<(), crate::CliError> {
    let path = out_dir.join("config.resolved.json");
    let json = serde_json::to_string_pretty(resolved)
        .map_err(|e| crate::CliError::Runtime(format!("serialize resolved config: {e}")))?;
    std::fs::write(&path, json)
        .map_err(|e| crate::CliError::Runtime(format!("write `{}`: {e}", path.display())))?;
    Ok(())
}
