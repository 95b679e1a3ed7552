//! Shared front-end encoder, attribute classification heads, weighted
//! multi-task loss, and the training loop.
//!
//! One encoder maps an input (log-FBank matrix or fixed-length raw waveform)
//! to an embedding; three affine heads classify conversion, speaker
//! representation and waveform generator from that same embedding. A binary
//! mode swaps the three heads for a single 2-class bona fide/spoof head.

mod encoder;
mod loss;
mod nn;
mod optim;

pub use encoder::{ConvEncoderConfig, RawEncoderConfig};
pub use loss::{cross_entropy_mean, multitask_loss, softmax, LossWeights};
pub use optim::OptimizerKind;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FbankConfig, FeatureMatrix, Waveform};
use crate::scoring::HeadPosteriors;
use crate::taxonomy::{AttributeLabels, TAXONOMY_VERSION};
use encoder::{ConvFbankEncoder, RawEncoder};
use loss::cross_entropy_grad;
use nn::{Linear, ParamCursor};
use optim::Optimizer;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("input shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad labels: {0}")]
    BadLabels(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("model is in {actual} mode, requested a {requested} operation")]
    WrongMode { actual: String, requested: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Which front end the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    ConvResidualFbank,
    RawWaveformFilterbank,
}

/// Multi-task attribute heads or the binary bona fide/spoof baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Multitask,
    Binary,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Multitask => "multitask",
            TrainMode::Binary => "binary",
        })
    }
}

/// Front-end feature settings carried by checkpoints so evaluation featurizes
/// inputs exactly like training did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub fbank: FbankConfig,
    /// Fixed input length in samples; waveforms are cropped/tiled to this
    /// before featurization.
    pub target_samples: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            fbank: FbankConfig::default(),
            target_samples: 64000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub encoder: EncoderKind,
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied per epoch.
    pub lr_decay_per_epoch: f64,
    /// Decoupled L2 weight decay applied by the optimizer step.
    pub weight_decay: f64,
    pub rng_seed: u64,
    pub loss_weights: LossWeights,
    pub embedding_dim: usize,
    pub conv_encoder: ConvEncoderConfig,
    pub raw_encoder: RawEncoderConfig,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder: EncoderKind::ConvResidualFbank,
            mode: TrainMode::Multitask,
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerKind::default(),
            learning_rate: 1e-3,
            lr_decay_per_epoch: 1.0,
            weight_decay: 0.0,
            rng_seed: 0,
            loss_weights: LossWeights::default(),
            embedding_dim: 128,
            conv_encoder: ConvEncoderConfig::default(),
            raw_encoder: RawEncoderConfig::default(),
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::BadConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::BadConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::BadConfig("learning_rate must be positive".into()));
        }
        let decay_ok = self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0;
        if !decay_ok {
            return Err(ModelError::BadConfig("lr_decay_per_epoch must lie in (0, 1]".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ModelError::BadConfig("weight_decay must be non-negative".into()));
        }
        if self.embedding_dim == 0 {
            return Err(ModelError::BadConfig("embedding_dim must be >= 1".into()));
        }
        if self.mode == TrainMode::Multitask {
            self.loss_weights.validate()?;
        }
        if self.raw_encoder.kernel.is_multiple_of(2) {
            return Err(ModelError::BadConfig("raw encoder kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Model input matching the encoder kind. Log-FBank matrices are stored
/// transposed as (mel, frames) for the convolution stack.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Fbank(Array2<f64>),
    Raw(Vec<f64>),
}

impl ModelInput {
    pub fn from_features(f: &FeatureMatrix) -> ModelInput {
        ModelInput::Fbank(f.frames.t().to_owned())
    }

    pub fn from_waveform(w: &Waveform) -> ModelInput {
        ModelInput::Raw(w.samples().to_vec())
    }
}

/// Encoder output vector shared by every head.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Array1<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Binary-head posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryPosterior {
    pub bonafide: f64,
    pub spoof: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Multitask(HeadPosteriors),
    Binary(BinaryPosterior),
}

/// The three attribute heads (affine maps from the embedding).
#[derive(Debug, Clone)]
struct HeadSet {
    conv: Linear,
    spk: Linear,
    wg: Linear,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum Heads {
    Multitask(HeadSet),
    Binary(Linear),
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum EncoderNet {
    ConvFbank(ConvFbankEncoder),
    Raw(RawEncoder),
}

/// Logits of the three heads for a batch, in head order.
pub struct LogitTriple {
    pub conv: Array2<f64>,
    pub spk: Array2<f64>,
    pub wg: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: TrainConfig,
    encoder: EncoderNet,
    heads: Heads,
}

impl Model {
    /// Fresh model with seeded parameter initialization.
    pub fn new(config: &TrainConfig) -> Result<Model, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        Self::init_with_rng(config, &mut rng)
    }

    fn init_with_rng(config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Model, ModelError> {
        let d = config.embedding_dim;
        let encoder = match config.encoder {
            EncoderKind::ConvResidualFbank => {
                EncoderNet::ConvFbank(ConvFbankEncoder::new(&config.conv_encoder, d, rng))
            }
            EncoderKind::RawWaveformFilterbank => EncoderNet::Raw(RawEncoder::new(
                &config.raw_encoder,
                config.features.fbank.sample_rate as f64,
                d,
                rng,
            )),
        };
        let (n_conv, n_spk, n_wg) = crate::taxonomy::class_cardinalities();
        let heads = match config.mode {
            TrainMode::Multitask => Heads::Multitask(HeadSet {
                conv: Linear::new(d, n_conv, rng),
                spk: Linear::new(d, n_spk, rng),
                wg: Linear::new(d, n_wg, rng),
            }),
            TrainMode::Binary => Heads::Binary(Linear::new(d, 2, rng)),
        };
        Ok(Model {
            config: config.clone(),
            encoder,
            heads,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn mode(&self) -> TrainMode {
        self.config.mode
    }

    fn check_input(&self, input: &ModelInput) -> Result<(), ModelError> {
        match (&self.encoder, input) {
            (EncoderNet::ConvFbank(enc), ModelInput::Fbank(x)) => {
                if x.nrows() != enc.cfg.mel_bins {
                    return Err(ModelError::ShapeMismatch(format!(
                        "expected {} mel channels, got {}",
                        enc.cfg.mel_bins,
                        x.nrows()
                    )));
                }
                if x.ncols() < enc.min_frames() {
                    return Err(ModelError::ShapeMismatch(format!(
                        "need at least {} frames, got {}",
                        enc.min_frames(),
                        x.ncols()
                    )));
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::ShapeMismatch("non-finite feature values".into()));
                }
                Ok(())
            }
            (EncoderNet::Raw(enc), ModelInput::Raw(x)) => {
                if x.len() != self.config.features.target_samples {
                    return Err(ModelError::ShapeMismatch(format!(
                        "raw input must be fixed at {} samples, got {}",
                        self.config.features.target_samples,
                        x.len()
                    )));
                }
                if x.len() < enc.min_samples() {
                    return Err(ModelError::ShapeMismatch(format!(
                        "need at least {} samples, got {}",
                        enc.min_samples(),
                        x.len()
                    )));
                }
                Ok(())
            }
            (EncoderNet::ConvFbank(_), ModelInput::Raw(_)) => Err(ModelError::ShapeMismatch(
                "encoder expects log-FBank input, got raw samples".into(),
            )),
            (EncoderNet::Raw(_), ModelInput::Fbank(_)) => Err(ModelError::ShapeMismatch(
                "encoder expects raw samples, got log-FBank input".into(),
            )),
        }
    }

    fn forward_embeddings(&self, inputs: &[&ModelInput]) -> Result<(Array2<f64>, EncCache), ModelError> {
        for input in inputs {
            self.check_input(input)?;
        }
        match &self.encoder {
            EncoderNet::ConvFbank(enc) => {
                let items: Vec<Array2<f64>> = inputs
                    .iter()
                    .map(|i| match i {
                        ModelInput::Fbank(x) => x.clone(),
                        _ => unreachable!(),
                    })
                    .collect();
                let (emb, cache) = enc.forward(&items);
                Ok((emb, EncCache::ConvFbank(cache)))
            }
            EncoderNet::Raw(enc) => {
                let items: Vec<&[f64]> = inputs
                    .iter()
                    .map(|i| match i {
                        ModelInput::Raw(x) => x.as_slice(),
                        _ => unreachable!(),
                    })
                    .collect();
                let (emb, cache) = enc.forward(&items);
                Ok((emb, EncCache::Raw(cache)))
            }
        }
    }

    /// Embed one input. Deterministic for fixed parameters.
    pub fn encode(&self, input: &ModelInput) -> Result<Embedding, ModelError> {
        let (emb, _) = self.forward_embeddings(&[input])?;
        Ok(Embedding(emb.row(0).to_owned()))
    }

    /// Embed a batch, order-preserving.
    pub fn encode_batch(&self, inputs: &[&ModelInput]) -> Result<Vec<Embedding>, ModelError> {
        let (emb, _) = self.forward_embeddings(inputs)?;
        Ok(emb.outer_iter().map(|r| Embedding(r.to_owned())).collect())
    }

    /// Per-head logits from an embedding (multitask mode).
    pub fn head_logits(&self, e: &Embedding) -> Result<LogitTriple, ModelError> {
        match &self.heads {
            Heads::Multitask(set) => {
                let x = e.0.clone().insert_axis(ndarray::Axis(0));
                Ok(LogitTriple {
                    conv: set.conv.forward(&x),
                    spk: set.spk.forward(&x),
                    wg: set.wg.forward(&x),
                })
            }
            Heads::Binary(_) => Err(ModelError::WrongMode {
                actual: "binary".into(),
                requested: "multitask head".into(),
            }),
        }
    }

    /// Posterior prediction for one input.
    pub fn predict(&self, input: &ModelInput) -> Result<Prediction, ModelError> {
        Ok(self.predict_batch(&[input])?.pop().expect("one input"))
    }

    /// Embedding plus prediction; every head consumes the returned embedding.
    pub fn predict_with_embedding(
        &self,
        input: &ModelInput,
    ) -> Result<(Embedding, Prediction), ModelError> {
        let e = self.encode(input)?;
        let pred = self.heads_predict_row(&e.0)?;
        Ok((e, pred))
    }

    fn heads_predict_row(&self, e: &Array1<f64>) -> Result<Prediction, ModelError> {
        let x = e.clone().insert_axis(ndarray::Axis(0));
        match &self.heads {
            Heads::Multitask(set) => {
                let conv = softmax(set.conv.forward(&x).row(0).as_slice().unwrap());
                let spk = softmax(set.spk.forward(&x).row(0).as_slice().unwrap());
                let wg = softmax(set.wg.forward(&x).row(0).as_slice().unwrap());
                Ok(Prediction::Multitask(HeadPosteriors { conv, spk, wg }))
            }
            Heads::Binary(head) => {
                let p = softmax(head.forward(&x).row(0).as_slice().unwrap());
                Ok(Prediction::Binary(BinaryPosterior {
                    bonafide: p[0],
                    spoof: p[1],
                }))
            }
        }
    }

    /// Batch prediction, order-preserving; identical to per-item predict.
    pub fn predict_batch(&self, inputs: &[&ModelInput]) -> Result<Vec<Prediction>, ModelError> {
        let (emb, _) = self.forward_embeddings(inputs)?;
        emb.outer_iter()
            .map(|row| self.heads_predict_row(&row.to_owned()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        let enc = match &self.encoder {
            EncoderNet::ConvFbank(e) => e.param_count(),
            EncoderNet::Raw(e) => e.param_count(),
        };
        let heads = match &self.heads {
            Heads::Multitask(set) => {
                set.conv.param_count() + set.spk.param_count() + set.wg.param_count()
            }
            Heads::Binary(h) => h.param_count(),
        };
        enc + heads
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(self.num_params());
        match &self.encoder {
            EncoderNet::ConvFbank(e) => e.append_params(out),
            EncoderNet::Raw(e) => e.append_params(out),
        }
        match &self.heads {
            Heads::Multitask(set) => {
                set.conv.append_params(out);
                set.spk.append_params(out);
                set.wg.append_params(out);
            }
            Heads::Binary(h) => h.append_params(out),
        }
    }

    pub fn read_params(&mut self, v: &[f64]) -> Result<(), ModelError> {
        if v.len() != self.num_params() {
            return Err(ModelError::Checkpoint(format!(
                "parameter count mismatch: model has {}, vector has {}",
                self.num_params(),
                v.len()
            )));
        }
        let mut cursor = ParamCursor::new(v);
        match &mut self.encoder {
            EncoderNet::ConvFbank(e) => e.read_params(&mut cursor),
            EncoderNet::Raw(e) => e.read_params(&mut cursor),
        }
        match &mut self.heads {
            Heads::Multitask(set) => {
                set.conv.read_params(&mut cursor);
                set.spk.read_params(&mut cursor);
                set.wg.read_params(&mut cursor);
            }
            Heads::Binary(h) => h.read_params(&mut cursor),
        }
        debug_assert!(cursor.finished());
        Ok(())
    }

    pub fn write_grads(&self, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(self.num_params());
        match &self.encoder {
            EncoderNet::ConvFbank(e) => e.append_grads(out),
            EncoderNet::Raw(e) => e.append_grads(out),
        }
        match &self.heads {
            Heads::Multitask(set) => {
                set.conv.append_grads(out);
                set.spk.append_grads(out);
                set.wg.append_grads(out);
            }
            Heads::Binary(h) => h.append_grads(out),
        }
    }

    pub fn zero_grads(&mut self) {
        match &mut self.encoder {
            EncoderNet::ConvFbank(e) => e.zero_grads(),
            EncoderNet::Raw(e) => e.zero_grads(),
        }
        match &mut self.heads {
            Heads::Multitask(set) => {
                set.conv.zero_grads();
                set.spk.zero_grads();
                set.wg.zero_grads();
            }
            Heads::Binary(h) => h.zero_grads(),
        }
    }

    #[cfg(test)]
    pub(crate) fn zero_head_params(&mut self) {
        match &mut self.heads {
            Heads::Multitask(set) => {
                for h in [&mut set.conv, &mut set.spk, &mut set.wg] {
                    h.w.fill(0.0);
                    h.b.fill(0.0);
                }
            }
            Heads::Binary(h) => {
                h.w.fill(0.0);
                h.b.fill(0.0);
            }
        }
    }

    /// Forward + backward over one batch; accumulates gradients and returns
    /// the batch loss.
    pub fn loss_and_grad(&mut self, batch: &[(&ModelInput, [usize; 3])]) -> Result<f64, ModelError> {
        let inputs: Vec<&ModelInput> = batch.iter().map(|(i, _)| *i).collect();
        let (emb, cache) = self.forward_embeddings(&inputs)?;
        let d_emb;
        let total;
        match &mut self.heads {
            Heads::Multitask(set) => {
                let conv_labels: Vec<usize> = batch.iter().map(|(_, l)| l[0]).collect();
                let spk_labels: Vec<usize> = batch.iter().map(|(_, l)| l[1]).collect();
                let wg_labels: Vec<usize> = batch.iter().map(|(_, l)| l[2]).collect();
                let conv_logits = set.conv.forward(&emb);
                let spk_logits = set.spk.forward(&emb);
                let wg_logits = set.wg.forward(&emb);
                let w = &self.config.loss_weights;
                total = multitask_loss(
                    &conv_logits,
                    &spk_logits,
                    &wg_logits,
                    &conv_labels,
                    &spk_labels,
                    &wg_labels,
                    w,
                )?;
                let d_conv = cross_entropy_grad(&conv_logits, &conv_labels, w.conv)?;
                let d_spk = cross_entropy_grad(&spk_logits, &spk_labels, w.spk)?;
                let d_wg = cross_entropy_grad(&wg_logits, &wg_labels, w.wg)?;
                d_emb = set.conv.backward(&emb, &d_conv)
                    + &set.spk.backward(&emb, &d_spk)
                    + &set.wg.backward(&emb, &d_wg);
            }
            Heads::Binary(head) => {
                // Binary labels ride in slot 0 as {0: bona fide, 1: spoof}.
                let labels: Vec<usize> = batch.iter().map(|(_, l)| l[0]).collect();
                let logits = head.forward(&emb);
                total = cross_entropy_mean(&logits, &labels)?;
                let d_logits = cross_entropy_grad(&logits, &labels, 1.0)?;
                d_emb = head.backward(&emb, &d_logits);
            }
        }
        match (&mut self.encoder, &cache) {
            (EncoderNet::ConvFbank(e), EncCache::ConvFbank(c)) => e.backward(c, &d_emb),
            (EncoderNet::Raw(e), EncCache::Raw(c)) => e.backward(c, &d_emb),
            _ => unreachable!(),
        }
        Ok(total)
    }

    /// Loss only, no gradient accumulation.
    pub fn loss_only(&self, batch: &[(&ModelInput, [usize; 3])]) -> Result<f64, ModelError> {
        let inputs: Vec<&ModelInput> = batch.iter().map(|(i, _)| *i).collect();
        let (emb, _) = self.forward_embeddings(&inputs)?;
        match &self.heads {
            Heads::Multitask(set) => {
                let conv_labels: Vec<usize> = batch.iter().map(|(_, l)| l[0]).collect();
                let spk_labels: Vec<usize> = batch.iter().map(|(_, l)| l[1]).collect();
                let wg_labels: Vec<usize> = batch.iter().map(|(_, l)| l[2]).collect();
                multitask_loss(
                    &set.conv.forward(&emb),
                    &set.spk.forward(&emb),
                    &set.wg.forward(&emb),
                    &conv_labels,
                    &spk_labels,
                    &wg_labels,
                    &self.config.loss_weights,
                )
            }
            Heads::Binary(head) => {
                let labels: Vec<usize> = batch.iter().map(|(_, l)| l[0]).collect();
                cross_entropy_mean(&head.forward(&emb), &labels)
            }
        }
    }
}

enum EncCache {
    ConvFbank(encoder::ConvFbankCache),
    Raw(encoder::RawCache),
}

/// One training/evaluation sample.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub utt_id: String,
    pub input: ModelInput,
    pub labels: AttributeLabels,
}

impl TrainSample {
    /// Head label indices; binary mode reads slot 0 as {0: bona, 1: spoof}.
    fn label_indices(&self, mode: TrainMode) -> [usize; 3] {
        match mode {
            TrainMode::Multitask => self.labels.indices(),
            TrainMode::Binary => [usize::from(!self.labels.is_bonafide()), 0, 0],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub train: Vec<TrainSample>,
    pub heldout: Vec<TrainSample>,
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conv_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spk_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wg_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub binary_acc: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogRecord>,
}

/// Argmax accuracies of a model over samples, per head (multitask) or as a
/// single binary accuracy.
fn heldout_metrics(model: &Model, samples: &[TrainSample]) -> Result<LogRecord, ModelError> {
    let batch: Vec<(&ModelInput, [usize; 3])> = samples
        .iter()
        .map(|s| (&s.input, s.label_indices(model.mode())))
        .collect();
    let loss = model.loss_only(&batch)?;
    let inputs: Vec<&ModelInput> = samples.iter().map(|s| &s.input).collect();
    let preds = model.predict_batch(&inputs)?;
    let mut rec = LogRecord {
        epoch: 0,
        split: "heldout".into(),
        loss,
        conv_acc: None,
        spk_acc: None,
        wg_acc: None,
        binary_acc: None,
    };
    match model.mode() {
        TrainMode::Multitask => {
            let mut correct = [0usize; 3];
            for (p, s) in preds.iter().zip(samples) {
                if let Prediction::Multitask(post) = p {
                    let got = post.argmax_indices();
                    let want = s.labels.indices();
                    for h in 0..3 {
                        if got[h] == want[h] {
                            correct[h] += 1;
                        }
                    }
                }
            }
            let n = samples.len() as f64;
            rec.conv_acc = Some(correct[0] as f64 / n);
            rec.spk_acc = Some(correct[1] as f64 / n);
            rec.wg_acc = Some(correct[2] as f64 / n);
        }
        TrainMode::Binary => {
            let mut correct = 0usize;
            for (p, s) in preds.iter().zip(samples) {
                if let Prediction::Binary(post) = p {
                    let got_spoof = post.spoof > post.bonafide;
                    if got_spoof == !s.labels.is_bonafide() {
                        correct += 1;
                    }
                }
            }
            rec.binary_acc = Some(correct as f64 / samples.len() as f64);
        }
    }
    Ok(rec)
}

/// Train a model by mini-batch first-order optimization of the batch-mean
/// loss. Identical (data, config, seed) produce an identical parameter
/// trajectory.
pub fn train(data: &TrainingData, cfg: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut model = Model::init_with_rng(cfg, &mut rng)?;
    for s in &data.train {
        model.check_input(&s.input)?;
    }
    if cfg.mode == TrainMode::Multitask {
        for s in &data.train {
            if !s.labels.is_consistent() {
                return Err(ModelError::BadLabels(format!(
                    "utterance {} has an inconsistent bona fide triple",
                    s.utt_id
                )));
            }
        }
    }

    let mut optimizer = Optimizer::new(cfg.optimizer, model.num_params());
    let mut params = Vec::with_capacity(model.num_params());
    let mut grads = Vec::with_capacity(model.num_params());
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * cfg.lr_decay_per_epoch.powi(epoch as i32);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&ModelInput, [usize; 3])> = chunk
                .iter()
                .map(|&i| {
                    let s = &data.train[i];
                    (&s.input, s.label_indices(cfg.mode))
                })
                .collect();
            model.zero_grads();
            let loss = model.loss_and_grad(&batch)?;
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch, step });
            }
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
            model.write_params(&mut params);
            model.write_grads(&mut grads);
            optimizer.step(&mut params, &grads, lr, cfg.weight_decay);
            model.read_params(&params)?;
        }
        let train_loss = epoch_loss / seen as f64;
        log.push(LogRecord {
            epoch,
            split: "train".into(),
            loss: train_loss,
            conv_acc: None,
            spk_acc: None,
            wg_acc: None,
            binary_acc: None,
        });
        if !data.heldout.is_empty() {
            let mut rec = heldout_metrics(&model, &data.heldout)?;
            rec.epoch = epoch;
            log.push(rec);
        }
    }
    Ok(TrainOutcome { model, log })
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Self-describing serialized model: format and taxonomy versions, the full
/// training config (including feature settings), and the parameter vector.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub taxonomy_version: String,
    pub config: TrainConfig,
    pub param_count: usize,
    pub params: Vec<f64>,
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut params = Vec::new();
        self.write_params(&mut params);
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            taxonomy_version: TAXONOMY_VERSION.to_string(),
            config: self.config.clone(),
            param_count: params.len(),
            params,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Model, ModelError> {
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format version {}",
                ckpt.format_version
            )));
        }
        if ckpt.taxonomy_version != TAXONOMY_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "taxonomy version `{}` does not match `{}`",
                ckpt.taxonomy_version, TAXONOMY_VERSION
            )));
        }
        if ckpt.params.len() != ckpt.param_count {
            return Err(ModelError::Checkpoint("corrupt parameter vector".into()));
        }
        let mut model = Model::new(&ckpt.config)?;
        model.read_params(&ckpt.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Model, ModelError> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        Model::from_checkpoint(&ckpt)
    }
}

/// Head sizes consistency: the public contract that logits match the
/// taxonomy cardinalities.
pub fn head_output_sizes(model: &Model) -> (usize, usize, usize) {
    match &model.heads {
        Heads::Multitask(set) => (set.conv.out_dim(), set.spk.out_dim(), set.wg.out_dim()),
        Heads::Binary(h) => (h.out_dim(), 0, 0),
    }
}
