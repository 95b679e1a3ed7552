//! Score fusion and evaluation metrics: per-head spoof probabilities, the
//! cube-root fused score, per-attribute accuracy, confusion matrices, the
//! EER threshold sweep, and score-file I/O.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{ConversionClass, SpeakerReprClass, WaveformGenClass};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("prediction/label sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("EER needs at least one bona fide and one spoof trial")]
    SingleClass,
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("score file line {line}: {reason}")]
    BadScoreLine { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-head posterior simplexes for one utterance, in the fixed class order
/// of the taxonomy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadPosteriors {
    pub conv: Vec<f64>,
    pub spk: Vec<f64>,
    pub wg: Vec<f64>,
}

impl HeadPosteriors {
    /// Each head's simplex must sum to 1 within 1e-6.
    pub fn is_valid(&self) -> bool {
        let ok = |p: &[f64], n: usize| {
            p.len() == n
                && p.iter().all(|v| v.is_finite() && *v >= 0.0)
                && (p.iter().sum::<f64>() - 1.0).abs() < 1e-6
        };
        ok(&self.conv, ConversionClass::cardinality())
            && ok(&self.spk, SpeakerReprClass::cardinality())
            && ok(&self.wg, WaveformGenClass::cardinality())
    }

    /// Spoof probability per head: 1 minus that head's bona fide probability.
    pub fn spoof_prob_conv(&self) -> f64 {
        1.0 - self.conv[ConversionClass::Bonafide.index()]
    }

    pub fn spoof_prob_spk(&self) -> f64 {
        1.0 - self.spk[SpeakerReprClass::Bonafide.index()]
    }

    pub fn spoof_prob_wg(&self) -> f64 {
        1.0 - self.wg[WaveformGenClass::Bonafide.index()]
    }

    /// Predicted class index per head (argmax).
    pub fn argmax_indices(&self) -> [usize; 3] {
        [argmax(&self.conv), argmax(&self.spk), argmax(&self.wg)]
    }

    pub fn fused(&self) -> FusedScore {
        fuse(
            self.spoof_prob_conv(),
            self.spoof_prob_wg(),
            self.spoof_prob_spk(),
        )
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Fused spoofing score in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedScore(pub f64);

/// Cube root of the product of the three per-head spoof probabilities.
pub fn fuse(p_conv: f64, p_wg: f64, p_spk: f64) -> FusedScore {
    FusedScore((p_conv * p_wg * p_spk).cbrt())
}

/// Fraction of positions where prediction equals label.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64, ScoreError> {
    if predicted.len() != labels.len() {
        return Err(ScoreError::LengthMismatch(predicted.len(), labels.len()));
    }
    if predicted.is_empty() {
        return Err(ScoreError::LengthMismatch(0, 0));
    }
    let correct = predicted
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Confusion matrix: `matrix[i][j]` counts utterances with label `i`
/// predicted as `j`. Rows therefore sum to the per-class support.
pub fn confusion(
    predicted: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<Vec<Vec<usize>>, ScoreError> {
    if predicted.len() != labels.len() {
        return Err(ScoreError::LengthMismatch(predicted.len(), labels.len()));
    }
    let mut m = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &l) in predicted.iter().zip(labels) {
        if p >= n_classes {
            return Err(ScoreError::ClassOutOfRange { index: p, classes: n_classes });
        }
        if l >= n_classes {
            return Err(ScoreError::ClassOutOfRange { index: l, classes: n_classes });
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// EER operating point from a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    /// Equal error rate as a fraction in [0, 1].
    pub eer: f64,
    pub threshold: f64,
    pub false_alarm_rate: f64,
    pub miss_rate: f64,
}

impl EerResult {
    pub fn eer_percent(&self) -> f64 {
        100.0 * self.eer
    }
}

/// Sweep decision thresholds over `(score, is_spoof)` trials where higher
/// scores are more spoof-like.
///
/// Candidate thresholds are the midpoints between adjacent sorted unique
/// scores plus -inf and +inf. At a threshold `t` the false-alarm rate is the
/// fraction of bona fide trials with score >= t and the miss rate is the
/// fraction of spoof trials with score < t. The reported operating point
/// minimizes |FAR - miss| (ties resolved toward the smaller threshold) and
/// the EER is the mean of the two rates there.
pub fn compute_eer(trials: &[(f64, bool)]) -> Result<EerResult, ScoreError> {
    let n_spoof = trials.iter().filter(|(_, s)| *s).count();
    let n_bona = trials.len() - n_spoof;
    if n_spoof == 0 || n_bona == 0 {
        return Err(ScoreError::SingleClass);
    }
    if trials.iter().any(|(s, _)| !s.is_finite()) {
        return Err(ScoreError::NonFiniteScore);
    }

    let mut sorted: Vec<(f64, bool)> = trials.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Unique scores with per-score class counts, ascending.
    let mut uniq: Vec<(f64, usize, usize)> = Vec::new(); // (score, bona, spoof)
    for &(s, is_spoof) in &sorted {
        match uniq.last_mut() {
            Some(last) if last.0 == s => {
                if is_spoof {
                    last.2 += 1;
                } else {
                    last.1 += 1;
                }
            }
            _ => uniq.push((s, usize::from(!is_spoof), usize::from(is_spoof))),
        }
    }

    // Walking the candidates in ascending order, maintain the number of
    // trials strictly below the candidate threshold.
    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(uniq.len() + 1);
    candidates.push((f64::NEG_INFINITY, 0, 0));
    let (mut bona_below, mut spoof_below) = (0usize, 0usize);
    for w in uniq.windows(2) {
        bona_below += w[0].1;
        spoof_below += w[0].2;
        candidates.push(((w[0].0 + w[1].0) / 2.0, bona_below, spoof_below));
    }
    candidates.push((f64::INFINITY, n_bona, n_spoof));

    let mut best: Option<EerResult> = None;
    let mut best_gap = f64::INFINITY;
    for (t, bona_lt, spoof_lt) in candidates {
        let far = (n_bona - bona_lt) as f64 / n_bona as f64;
        let miss = spoof_lt as f64 / n_spoof as f64;
        let gap = (far - miss).abs();
        if gap < best_gap {
            best_gap = gap;
            best = Some(EerResult {
                eer: (far + miss) / 2.0,
                threshold: t,
                false_alarm_rate: far,
                miss_rate: miss,
            });
        }
    }
    Ok(best.expect("at least two candidates"))
}

/// Write `utt_id<TAB>score` lines with 9 decimal digits.
pub fn write_score_file<W: Write>(mut w: W, entries: &[(String, f64)]) -> Result<(), ScoreError> {
    for (utt, score) in entries {
        writeln!(w, "{utt}\t{score:.9}")?;
    }
    Ok(())
}

/// Read a score file, preserving file order.
pub fn read_score_file<R: BufRead>(r: R) -> Result<Vec<(String, f64)>, ScoreError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let utt = parts.next().unwrap_or("");
        let score = parts.next().unwrap_or("");
        if utt.is_empty() || parts.next().is_some() {
            return Err(ScoreError::BadScoreLine {
                line: line_no,
                reason: "expected `utt_id<TAB>score`".into(),
            });
        }
        let score: f64 = score.parse().map_err(|_| ScoreError::BadScoreLine {
            line: line_no,
            reason: format!("bad score `{score}`"),
        })?;
        out.push((utt.to_string(), score));
    }
    Ok(out)
}
