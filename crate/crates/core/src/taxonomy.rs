//! Attribute class taxonomy: maps every attack ID (and bona fide) to the
//! three generation-pipeline attribute labels, derived from the registry
//! method strings.
//!
//! Class index order is fixed as listed in the enums and is part of the
//! model/checkpoint contract.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{attack_profile, AttackId, AttackTag, UtteranceRecord};

/// Version tag recorded in checkpoints; bump on any class-set change.
pub const TAXONOMY_VERSION: &str = "conv8-spk6-wg3.v1";

/// Conversion-stage classes. RNN-related method strings collapse into a
/// single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConversionClass {
    RnnRelated,
    Ff,
    Cart,
    Vae,
    GmmUbm,
    MomentMatching,
    Linear,
    Bonafide,
}

/// Speaker-representation classes. `NoneRepr` covers systems whose registry
/// entry is `-` (no explicit speaker representation); it is an artifact
/// addition on top of the five cataloged classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpeakerReprClass {
    Vae,
    OneHot,
    DVector,
    Plda,
    NoneRepr,
    Bonafide,
}

/// Waveform-generator classes: the neural / non-neural split plus bona fide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WaveformGenClass {
    Neural,
    NonNeural,
    Bonafide,
}

macro_rules! class_index_impl {
    ($ty:ident, [$($variant:ident => $name:expr),+ $(,)?]) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn index(self) -> usize {
                $ty::ALL.iter().position(|c| *c == self).unwrap()
            }

            pub fn from_index(i: usize) -> Option<$ty> {
                $ty::ALL.get(i).copied()
            }

            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }

            pub fn cardinality() -> usize {
                $ty::ALL.len()
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

class_index_impl!(ConversionClass, [
    RnnRelated => "rnn-related",
    Ff => "ff",
    Cart => "cart",
    Vae => "vae",
    GmmUbm => "gmm-ubm",
    MomentMatching => "moment-matching",
    Linear => "linear",
    Bonafide => "bonafide",
]);

class_index_impl!(SpeakerReprClass, [
    Vae => "vae",
    OneHot => "one-hot",
    DVector => "d-vector",
    Plda => "plda",
    NoneRepr => "none",
    Bonafide => "bonafide",
]);

class_index_impl!(WaveformGenClass, [
    Neural => "neural",
    NonNeural => "non-neural",
    Bonafide => "bonafide",
]);

/// The (conversion, speaker representation, waveform generator) label triple
/// for one utterance. Bona fide is all-or-none across the three heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeLabels {
    pub conversion: ConversionClass,
    pub speaker_repr: SpeakerReprClass,
    pub waveform_gen: WaveformGenClass,
}

impl AttributeLabels {
    pub const BONAFIDE: AttributeLabels = AttributeLabels {
        conversion: ConversionClass::Bonafide,
        speaker_repr: SpeakerReprClass::Bonafide,
        waveform_gen: WaveformGenClass::Bonafide,
    };

    pub fn is_bonafide(&self) -> bool {
        self.conversion == ConversionClass::Bonafide
    }

    /// Bona fide must hold across all three heads simultaneously.
    pub fn is_consistent(&self) -> bool {
        let flags = [
            self.conversion == ConversionClass::Bonafide,
            self.speaker_repr == SpeakerReprClass::Bonafide,
            self.waveform_gen == WaveformGenClass::Bonafide,
        ];
        flags.iter().all(|&f| f) || flags.iter().all(|&f| !f)
    }

    /// Class indices in head order (conversion, speaker repr, waveform gen).
    pub fn indices(&self) -> [usize; 3] {
        [
            self.conversion.index(),
            self.speaker_repr.index(),
            self.waveform_gen.index(),
        ]
    }
}

/// Class counts per head: (conversion, speaker representation, waveform
/// generator) = (8, 6, 3).
pub fn class_cardinalities() -> (usize, usize, usize) {
    (
        ConversionClass::cardinality(),
        SpeakerReprClass::cardinality(),
        WaveformGenClass::cardinality(),
    )
}

/// Number of attribute heads.
pub const HEAD_COUNT: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("unknown attack ID `{0}` cannot be labeled")]
    UnknownAttack(String),
    #[error("registry method string `{0}` has no class mapping")]
    UnmappedMethod(String),
}

fn conversion_class(method: &str) -> Result<ConversionClass, LabelError> {
    match method {
        "AR RNN*" | "RNN*" | "AR RNN+CNN*" => Ok(ConversionClass::RnnRelated),
        "FF*" => Ok(ConversionClass::Ff),
        "CART" => Ok(ConversionClass::Cart),
        "VAE*" => Ok(ConversionClass::Vae),
        "GMM-UBM" => Ok(ConversionClass::GmmUbm),
        "Moment matching*" => Ok(ConversionClass::MomentMatching),
        "Linear" => Ok(ConversionClass::Linear),
        other => Err(LabelError::UnmappedMethod(other.to_string())),
    }
}

fn speaker_repr_class(method: &str) -> Result<SpeakerReprClass, LabelError> {
    match method {
        "VAE*" => Ok(SpeakerReprClass::Vae),
        "One hot embed." => Ok(SpeakerReprClass::OneHot),
        "d-vector (RNN)*" => Ok(SpeakerReprClass::DVector),
        "PLDA" => Ok(SpeakerReprClass::Plda),
        "-" => Ok(SpeakerReprClass::NoneRepr),
        other => Err(LabelError::UnmappedMethod(other.to_string())),
    }
}

fn waveform_gen_class(method: &str) -> WaveformGenClass {
    // The `*` suffix is the authoritative neural marker.
    if method.ends_with('*') {
        WaveformGenClass::Neural
    } else {
        WaveformGenClass::NonNeural
    }
}

/// Label triple for a known attack, derived from its registry profile.
pub fn label_of_attack(id: AttackId) -> AttributeLabels {
    let p = attack_profile(id);
    // The registry is closed; every method string maps.
    AttributeLabels {
        conversion: conversion_class(p.conversion).expect("registry conversion string"),
        speaker_repr: speaker_repr_class(p.speaker_representation).expect("registry speaker string"),
        waveform_gen: waveform_gen_class(p.waveform_generator),
    }
}

/// Label triple for any protocol attack tag; unknown attacks are a hard error
/// here.
pub fn label_of(tag: &AttackTag) -> Result<AttributeLabels, LabelError> {
    match tag {
        AttackTag::Bonafide => Ok(AttributeLabels::BONAFIDE),
        AttackTag::Known(id) => Ok(label_of_attack(*id)),
        AttackTag::Unknown(tok) => Err(LabelError::UnknownAttack(tok.clone())),
    }
}

/// How utterances without an explicit speaker representation (`-` rows) are
/// handled when building a labeled corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbsentSpeakerReprPolicy {
    /// Keep them and label the speaker head with the dedicated `none` class.
    #[default]
    NoneClass,
    /// Drop those utterances from the labeled corpus entirely.
    DropUtterance,
}

/// One record joined with its label triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledUtterance {
    pub record: UtteranceRecord,
    pub labels: AttributeLabels,
}

/// Order-preserving join of records with their labels under the default
/// policy (the `none` class is kept).
pub fn labeled_corpus(records: &[UtteranceRecord]) -> Result<Vec<LabeledUtterance>, LabelError> {
    labeled_corpus_with_policy(records, AbsentSpeakerReprPolicy::NoneClass)
}

pub fn labeled_corpus_with_policy(
    records: &[UtteranceRecord],
    policy: AbsentSpeakerReprPolicy,
) -> Result<Vec<LabeledUtterance>, LabelError> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let labels = label_of(&r.attack)?;
        if policy == AbsentSpeakerReprPolicy::DropUtterance
            && labels.speaker_repr == SpeakerReprClass::NoneRepr
        {
            continue;
        }
        out.push(LabeledUtterance {
            record: r.clone(),
            labels,
        });
    }
    Ok(out)
}

/// Label map as a tab-delimited audit table: attack_id, conversion, speaker
/// representation, waveform generator; bona fide last.
pub fn label_table_tsv() -> String {
    let mut out = String::from("attack_id\tconversion\tspeaker_representation\twaveform_generator\n");
    for id in AttackId::ALL {
        let l = label_of_attack(id);
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            id, l.conversion, l.speaker_repr, l.waveform_gen
        ));
    }
    let b = AttributeLabels::BONAFIDE;
    out.push_str(&format!(
        "bonafide\t{}\t{}\t{}\n",
        b.conversion, b.speaker_repr, b.waveform_gen
    ));
    out
}
