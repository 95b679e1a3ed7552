//! Model evaluation: runs a trained model over labeled samples and produces
//! per-attribute accuracies, confusion matrices, spoofing scores and EER.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, ModelError, Prediction, TrainMode, TrainSample};
use crate::scoring::{
    accuracy, compute_eer, confusion, ScoreError,
};
use crate::taxonomy::{class_cardinalities, ConversionClass, SpeakerReprClass, WaveformGenClass};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("evaluation set is empty")]
    EmptySet,
}

/// Per-attribute metrics (multitask mode only).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeMetrics {
    pub conv_accuracy: f64,
    pub spk_accuracy: f64,
    pub wg_accuracy: f64,
    pub conv_confusion: Vec<Vec<usize>>,
    pub spk_confusion: Vec<Vec<usize>>,
    pub wg_confusion: Vec<Vec<usize>>,
}

/// Evaluation summary for one checkpoint on one evaluation set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: TrainMode,
    pub n_utterances: usize,
    pub n_bonafide: usize,
    pub n_spoof: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribute: Option<AttributeMetrics>,
    /// EER of the spoofing score, reported as a percentage.
    pub eer_percent: f64,
    pub eer_threshold: f64,
    /// Paths of score files written for this evaluation, if any.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub score_files: Vec<String>,
}

/// Scores produced during evaluation, keyed by utt_id in evaluation order.
#[derive(Debug, Clone, Default)]
pub struct ScoreBundle {
    /// Fused score (multitask) or the binary spoof posterior.
    pub fused: Vec<(String, f64)>,
    pub conv: Vec<(String, f64)>,
    pub spk: Vec<(String, f64)>,
    pub wg: Vec<(String, f64)>,
}

pub struct Evaluation {
    pub report: EvalReport,
    pub scores: ScoreBundle,
}

/// Evaluate a model over labeled samples. The spoofing score is the fused
/// cube-root product in multitask mode and the spoof posterior in binary
/// mode; EER needs both classes present.
pub fn evaluate(model: &Model, samples: &[TrainSample]) -> Result<Evaluation, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let inputs: Vec<&crate::model::ModelInput> = samples.iter().map(|s| &s.input).collect();
    let preds = model.predict_batch(&inputs)?;

    let mut scores = ScoreBundle::default();
    let mut trials = Vec::with_capacity(samples.len());
    let mut pred_indices: Vec<[usize; 3]> = Vec::new();
    let mut label_indices: Vec<[usize; 3]> = Vec::new();

    for (sample, pred) in samples.iter().zip(&preds) {
        let is_spoof = !sample.labels.is_bonafide();
        match pred {
            Prediction::Multitask(post) => {
                let fused = post.fused().0;
                scores.fused.push((sample.utt_id.clone(), fused));
                scores
                    .conv
                    .push((sample.utt_id.clone(), post.spoof_prob_conv()));
                scores
                    .spk
                    .push((sample.utt_id.clone(), post.spoof_prob_spk()));
                scores.wg.push((sample.utt_id.clone(), post.spoof_prob_wg()));
                trials.push((fused, is_spoof));
                pred_indices.push(post.argmax_indices());
                label_indices.push(sample.labels.indices());
            }
            Prediction::Binary(post) => {
                scores.fused.push((sample.utt_id.clone(), post.spoof));
                trials.push((post.spoof, is_spoof));
            }
        }
    }

    let eer = compute_eer(&trials)?;
    let n_spoof = trials.iter().filter(|(_, s)| *s).count();

    let attribute = if model.mode() == TrainMode::Multitask {
        let (n_conv, n_spk, n_wg) = class_cardinalities();
        let col = |i: usize, v: &[[usize; 3]]| -> Vec<usize> { v.iter().map(|x| x[i]).collect() };
        let (pc, ps, pw) = (col(0, &pred_indices), col(1, &pred_indices), col(2, &pred_indices));
        let (lc, ls, lw) = (col(0, &label_indices), col(1, &label_indices), col(2, &label_indices));
        Some(AttributeMetrics {
            conv_accuracy: accuracy(&pc, &lc)?,
            spk_accuracy: accuracy(&ps, &ls)?,
            wg_accuracy: accuracy(&pw, &lw)?,
            conv_confusion: confusion(&pc, &lc, n_conv)?,
            spk_confusion: confusion(&ps, &ls, n_spk)?,
            wg_confusion: confusion(&pw, &lw, n_wg)?,
        })
    } else {
        None
    };

    Ok(Evaluation {
        report: EvalReport {
            mode: model.mode(),
            n_utterances: samples.len(),
            n_bonafide: samples.len() - n_spoof,
            n_spoof,
            attribute,
            eer_percent: eer.eer_percent(),
            eer_threshold: eer.threshold,
            score_files: Vec::new(),
        },
        scores,
    })
}

fn confusion_table(names: &[&str], matrix: &[Vec<usize>]) -> String {
    let mut s = String::from("label\\pred");
    for n in names {
        let _ = write!(s, "\t{n}");
    }
    s.push('\n');
    for (i, row) in matrix.iter().enumerate() {
        let _ = write!(s, "{}", names[i]);
        for v in row {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    s
}

impl EvalReport {
    /// Human-readable summary. EER carries an explicit percent unit.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}", self.mode);
        let _ = writeln!(
            s,
            "utterances: {} ({} bona fide / {} spoof)",
            self.n_utterances, self.n_bonafide, self.n_spoof
        );
        if let Some(a) = &self.attribute {
            let _ = writeln!(s, "conversion accuracy:      {:.4}", a.conv_accuracy);
            let _ = writeln!(s, "speaker-repr accuracy:    {:.4}", a.spk_accuracy);
            let _ = writeln!(s, "waveform-gen accuracy:    {:.4}", a.wg_accuracy);
        }
        let _ = writeln!(s, "EER [%]: {:.4} at threshold {:.6}", self.eer_percent, self.eer_threshold);
        s
    }

    /// Delimited confusion tables (multitask only).
    pub fn tables(&self) -> String {
        let mut s = String::new();
        if let Some(a) = &self.attribute {
            let conv_names: Vec<&str> = ConversionClass::ALL.iter().map(|c| c.name()).collect();
            let spk_names: Vec<&str> = SpeakerReprClass::ALL.iter().map(|c| c.name()).collect();
            let wg_names: Vec<&str> = WaveformGenClass::ALL.iter().map(|c| c.name()).collect();
            let _ = writeln!(s, "# conversion confusion");
            s.push_str(&confusion_table(&conv_names, &a.conv_confusion));
            let _ = writeln!(s, "\n# speaker-representation confusion");
            s.push_str(&confusion_table(&spk_names, &a.spk_confusion));
            let _ = writeln!(s, "\n# waveform-generator confusion");
            s.push_str(&confusion_table(&wg_names, &a.wg_confusion));
        }
        s
    }
}
