//! Glue between on-disk corpora and model inputs: reads a protocol file plus
//! a wav directory, joins labels, applies a manifest, and featurizes
//! utterances for the configured encoder.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::features::{fix_length, logfbank, read_wav, FeatureError};
use crate::model::{EncoderKind, FeatureConfig, ModelInput, TrainSample};
use crate::partition::{Partition, SplitError};
use crate::protocol::{parse_protocol, ProtocolError, SourceSubset, UtteranceRecord};
use crate::taxonomy::{labeled_corpus, LabelError, LabeledUtterance};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("protocol `{path}`: {source}")]
    Protocol {
        path: String,
        #[source]
        source: ProtocolError,
    },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("missing path: {0}")]
    MissingPath(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A corpus rooted at a directory holding `protocol.txt` and `wav/`.
#[derive(Debug, Clone)]
pub struct CorpusDir {
    pub root: PathBuf,
}

impl CorpusDir {
    pub fn new(root: impl Into<PathBuf>) -> CorpusDir {
        CorpusDir { root: root.into() }
    }

    pub fn protocol_path(&self) -> PathBuf {
        self.root.join("protocol.txt")
    }

    pub fn wav_path(&self, utt_id: &str) -> PathBuf {
        self.root.join("wav").join(format!("{utt_id}.wav"))
    }

    pub fn records(&self, subset: SourceSubset) -> Result<Vec<UtteranceRecord>, DatasetError> {
        let path = self.protocol_path();
        if !path.exists() {
            return Err(DatasetError::MissingPath(path));
        }
        let text = std::fs::read_to_string(&path)?;
        parse_protocol(&text, subset).map_err(|source| DatasetError::Protocol {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn labeled(&self, subset: SourceSubset) -> Result<Vec<LabeledUtterance>, DatasetError> {
        Ok(labeled_corpus(&self.records(subset)?)?)
    }
}

/// Read a protocol file from an explicit path.
pub fn read_protocol_file(path: &Path, subset: SourceSubset) -> Result<Vec<UtteranceRecord>, DatasetError> {
    if !path.exists() {
        return Err(DatasetError::MissingPath(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    parse_protocol(&text, subset).map_err(|source| DatasetError::Protocol {
        path: path.display().to_string(),
        source,
    })
}

/// Featurize one waveform file for the given encoder kind.
pub fn featurize(
    wav_path: &Path,
    encoder: EncoderKind,
    features: &FeatureConfig,
) -> Result<ModelInput, DatasetError> {
    let wave = read_wav(wav_path)?;
    let fixed = fix_length(&wave, features.target_samples)?;
    let input = match encoder {
        EncoderKind::ConvResidualFbank => {
            ModelInput::from_features(&logfbank(&fixed, &features.fbank)?)
        }
        EncoderKind::RawWaveformFilterbank => ModelInput::from_waveform(&fixed),
    };
    Ok(input)
}

/// Build model samples for a list of labeled utterances backed by a corpus
/// directory.
pub fn build_samples(
    corpus: &CorpusDir,
    utts: &[LabeledUtterance],
    encoder: EncoderKind,
    features: &FeatureConfig,
) -> Result<Vec<TrainSample>, DatasetError> {
    let mut out = Vec::with_capacity(utts.len());
    for u in utts {
        let wav = corpus.wav_path(&u.record.utt_id);
        if !wav.exists() {
            return Err(DatasetError::MissingPath(wav));
        }
        out.push(TrainSample {
            utt_id: u.record.utt_id.clone(),
            input: featurize(&wav, encoder, features)?,
            labels: u.labels,
        });
    }
    Ok(out)
}

/// Train/heldout samples for a partition of a corpus directory.
pub fn build_partitioned_samples(
    corpus: &CorpusDir,
    partition: &Partition,
    encoder: EncoderKind,
    features: &FeatureConfig,
) -> Result<(Vec<TrainSample>, Vec<TrainSample>), DatasetError> {
    Ok((
        build_samples(corpus, &partition.train, encoder, features)?,
        build_samples(corpus, &partition.eval, encoder, features)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcorpus::{generate_to_dir, SynthSpec};

    fn tiny_corpus() -> (tempfile::TempDir, CorpusDir) {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            speakers: 2,
            utterances_per_attack: 1,
            bonafide_per_speaker: Some(1),
            duration_secs: 0.5,
            rng_seed: 3,
            ..SynthSpec::default()
        };
        generate_to_dir(&spec, dir.path()).unwrap();
        let corpus = CorpusDir::new(dir.path());
        (dir, corpus)
    }

    #[test]
    fn loads_and_labels_synth_corpus() {
        let (_guard, corpus) = tiny_corpus();
        let labeled = corpus.labeled(SourceSubset::Unknown).unwrap();
        assert_eq!(labeled.len(), 40);
    }

    #[test]
    fn builds_fbank_and_raw_samples() {
        let (_guard, corpus) = tiny_corpus();
        let labeled = corpus.labeled(SourceSubset::Unknown).unwrap();
        let features = FeatureConfig {
            target_samples: 8000,
            ..FeatureConfig::default()
        };
        let fbank = build_samples(
            &corpus,
            &labeled[..4],
            EncoderKind::ConvResidualFbank,
            &features,
        )
        .unwrap();
        match &fbank[0].input {
            ModelInput::Fbank(x) => {
                assert_eq!(x.nrows(), 80);
                assert_eq!(x.ncols(), features.fbank.frame_count(8000));
            }
            _ => panic!("expected fbank input"),
        }
        let raw = build_samples(
            &corpus,
            &labeled[..4],
            EncoderKind::RawWaveformFilterbank,
            &features,
        )
        .unwrap();
        match &raw[0].input {
            ModelInput::Raw(x) => assert_eq!(x.len(), 8000),
            _ => panic!("expected raw input"),
        }
    }

    #[test]
    fn missing_paths_error_before_compute() {
        let corpus = CorpusDir::new("/nonexistent/corpus");
        assert!(matches!(
            corpus.records(SourceSubset::Unknown),
            Err(DatasetError::MissingPath(_))
        ));
    }
}
