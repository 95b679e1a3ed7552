//! ASVspoof-LA-style protocol parsing and the static attack-metadata registry.
//!
//! A protocol file is UTF-8 text with one utterance per line:
//!
//! ```text
//! SPEAKER UTT_ID - ATTACK KEY
//! ```
//!
//! Field 3 is an unused column carried by real protocol files; it is parsed
//! and discarded. Field 4 is `-` for bona fide utterances or an attack ID,
//! field 5 is `bonafide` or `spoof`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 19 cataloged spoofing systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(missing_docs)]
pub enum AttackId {
    A01, A02, A03, A04, A05, A06, A07, A08, A09, A10,
    A11, A12, A13, A14, A15, A16, A17, A18, A19,
}

impl AttackId {
    /// All attack IDs in catalog order.
    pub const ALL: [AttackId; 19] = [
        AttackId::A01, AttackId::A02, AttackId::A03, AttackId::A04, AttackId::A05,
        AttackId::A06, AttackId::A07, AttackId::A08, AttackId::A09, AttackId::A10,
        AttackId::A11, AttackId::A12, AttackId::A13, AttackId::A14, AttackId::A15,
        AttackId::A16, AttackId::A17, AttackId::A18, AttackId::A19,
    ];

    pub fn parse(token: &str) -> Option<AttackId> {
        AttackId::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == token)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackId::A01 => "A01",
            AttackId::A02 => "A02",
            AttackId::A03 => "A03",
            AttackId::A04 => "A04",
            AttackId::A05 => "A05",
            AttackId::A06 => "A06",
            AttackId::A07 => "A07",
            AttackId::A08 => "A08",
            AttackId::A09 => "A09",
            AttackId::A10 => "A10",
            AttackId::A11 => "A11",
            AttackId::A12 => "A12",
            AttackId::A13 => "A13",
            AttackId::A14 => "A14",
            AttackId::A15 => "A15",
            AttackId::A16 => "A16",
            AttackId::A17 => "A17",
            AttackId::A18 => "A18",
            AttackId::A19 => "A19",
        }
    }
}

impl fmt::Display for AttackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The attack field of a protocol line. Unknown IDs are kept as raw tokens so
/// that foreign protocols can still be inspected; labeling rejects them later.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackTag {
    Bonafide,
    Known(AttackId),
    Unknown(String),
}

impl AttackTag {
    pub fn is_bonafide(&self) -> bool {
        matches!(self, AttackTag::Bonafide)
    }

    pub fn as_protocol_field(&self) -> String {
        match self {
            AttackTag::Bonafide => "-".to_string(),
            AttackTag::Known(a) => a.as_str().to_string(),
            AttackTag::Unknown(s) => s.clone(),
        }
    }
}

impl fmt::Display for AttackTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackTag::Bonafide => f.write_str("bonafide"),
            AttackTag::Known(a) => f.write_str(a.as_str()),
            AttackTag::Unknown(s) => f.write_str(s),
        }
    }
}

/// Which original corpus partition a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceSubset {
    Train,
    Dev,
    Eval,
    Unknown,
}

impl fmt::Display for SourceSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SourceSubset::Train => "train",
            SourceSubset::Dev => "dev",
            SourceSubset::Eval => "eval",
            SourceSubset::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

/// One parsed protocol line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub speaker_id: String,
    pub utt_id: String,
    pub attack: AttackTag,
    pub source_subset: SourceSubset,
}

/// Per-stage method strings for one cataloged attack, transcribed verbatim
/// from the system summary. The trailing `*` marks neural components and is
/// part of the string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackProfile {
    pub attack_id: AttackId,
    pub input: &'static str,
    pub input_processor: &'static str,
    pub duration: &'static str,
    pub conversion: &'static str,
    /// `-` marks systems without an explicit speaker representation.
    pub speaker_representation: &'static str,
    pub waveform_generator: &'static str,
    pub usage: AttackUsage,
}

/// Original corpus usage of an attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AttackUsage {
    Train,
    Eval,
}

impl fmt::Display for AttackUsage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackUsage::Train => "Train",
            AttackUsage::Eval => "Eval",
        })
    }
}

macro_rules! profile {
    ($id:ident, $input:expr, $proc:expr, $dur:expr, $conv:expr, $spk:expr, $wg:expr, $usage:ident) => {
        AttackProfile {
            attack_id: AttackId::$id,
            input: $input,
            input_processor: $proc,
            duration: $dur,
            conversion: $conv,
            speaker_representation: $spk,
            waveform_generator: $wg,
            usage: AttackUsage::$usage,
        }
    };
}

static REGISTRY: [AttackProfile; 19] = [
    profile!(A01, "Text", "NLP", "HMM", "AR RNN*", "VAE*", "WaveNet*", Eval),
    profile!(A02, "Text", "NLP", "HMM", "AR RNN*", "VAE*", "WORLD", Train),
    profile!(A03, "Text", "NLP", "FF*", "FF*", "One hot embed.", "WORLD", Train),
    profile!(A04, "Text", "NLP", "-", "CART", "-", "Waveform concat.", Train),
    profile!(A05, "Speech (human)", "WORLD", "-", "VAE*", "One hot embed.", "WORLD", Eval),
    profile!(A06, "Speech (human)", "LPCC/MFCC", "-", "GMM-UBM", "-", "Spectral filtering + OLA", Train),
    profile!(A07, "Text", "NLP", "RNN*", "RNN*", "One hot embed.", "WORLD", Eval),
    profile!(A08, "Text", "NLP", "HMM", "AR RNN*", "One hot embed.", "Neural source-filter*", Train),
    profile!(A09, "Text", "NLP", "RNN*", "RNN*", "One hot embed.", "Vocaine", Train),
    profile!(A10, "Text", "CNN+bi-RNN*", "Attention*", "AR RNN+CNN*", "d-vector (RNN)*", "WaveRNN*", Train),
    profile!(A11, "Text", "CNN+bi-RNN*", "Attention*", "AR RNN+CNN*", "d-vector (RNN)*", "Griffin-Lim", Train),
    profile!(A12, "Text", "NLP", "RNN*", "RNN*", "One hot embed.", "WaveNet*", Train),
    profile!(A13, "Speech (TTS)", "WORLD", "DTW", "Moment matching*", "-", "Waveform filtering", Train),
    profile!(A14, "Speech (TTS)", "ASR*", "-", "RNN*", "-", "STRAIGHT", Train),
    profile!(A15, "Speech (TTS)", "ASR*", "-", "RNN*", "-", "WaveNet*", Train),
    profile!(A16, "Text", "NLP", "-", "CART", "-", "Waveform concat.", Train),
    profile!(A17, "Speech (human)", "WORLD", "-", "VAE*", "One hot embed.", "Waveform filtering", Train),
    profile!(A18, "Speech (human)", "MFCC/i-vector", "-", "Linear", "PLDA", "MFCC vocoder", Train),
    profile!(A19, "Speech (human)", "LPCC/MFCC", "-", "GMM-UBM", "-", "Spectral filtering+OLA", Train),
];

/// The full attack-metadata registry, one profile per attack ID, in catalog
/// order. The returned slice is static: callers always observe the same data.
pub fn attack_registry() -> &'static [AttackProfile; 19] {
    &REGISTRY
}

/// Look up a single profile.
pub fn attack_profile(id: AttackId) -> &'static AttackProfile {
    let p = &REGISTRY[id as usize];
    debug_assert_eq!(p.attack_id, id);
    p
}

/// Registry as a tab-delimited table, one profile per row, columns in catalog
/// order, with a header row.
pub fn registry_to_tsv() -> String {
    let mut out = String::from(
        "attack_id\tinput\tinput_processor\tduration\tconversion\tspeaker_representation\twaveform_generator\tusage\n",
    );
    for p in REGISTRY.iter() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            p.attack_id,
            p.input,
            p.input_processor,
            p.duration,
            p.conversion,
            p.speaker_representation,
            p.waveform_generator,
            p.usage
        ));
    }
    out
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("line {line}: expected 5 whitespace-separated fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: key field must be `bonafide` or `spoof`, found `{key}`")]
    BadKey { line: usize, key: String },
    #[error("line {line}: key `{key}` is inconsistent with attack field `{attack}`")]
    KeyAttackMismatch {
        line: usize,
        key: String,
        attack: String,
    },
}

/// Parse protocol text into records, in file order. Blank lines are skipped.
/// Unknown attack tokens are preserved (see [`AttackTag::Unknown`]); they are
/// only reported by [`validate_records`] and rejected at labeling time.
pub fn parse_protocol(text: &str, subset: SourceSubset) -> Result<Vec<UtteranceRecord>, ProtocolError> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(ProtocolError::FieldCount {
                line: line_no,
                found: fields.len(),
            });
        }
        let (speaker, utt, _unused, attack_field, key) =
            (fields[0], fields[1], fields[2], fields[3], fields[4]);
        let attack = match key {
            "bonafide" => {
                if attack_field != "-" {
                    return Err(ProtocolError::KeyAttackMismatch {
                        line: line_no,
                        key: key.to_string(),
                        attack: attack_field.to_string(),
                    });
                }
                AttackTag::Bonafide
            }
            "spoof" => {
                if attack_field == "-" {
                    return Err(ProtocolError::KeyAttackMismatch {
                        line: line_no,
                        key: key.to_string(),
                        attack: attack_field.to_string(),
                    });
                }
                match AttackId::parse(attack_field) {
                    Some(id) => AttackTag::Known(id),
                    None => AttackTag::Unknown(attack_field.to_string()),
                }
            }
            other => {
                return Err(ProtocolError::BadKey {
                    line: line_no,
                    key: other.to_string(),
                })
            }
        };
        records.push(UtteranceRecord {
            speaker_id: speaker.to_string(),
            utt_id: utt.to_string(),
            attack,
            source_subset: subset,
        });
    }
    Ok(records)
}

/// Render records back to protocol text (single-space separators, the unused
/// third column written as `-`).
pub fn serialize_protocol(records: &[UtteranceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let key = if r.attack.is_bonafide() { "bonafide" } else { "spoof" };
        out.push_str(&format!(
            "{} {} - {} {}\n",
            r.speaker_id,
            r.utt_id,
            r.attack.as_protocol_field(),
            key
        ));
    }
    out
}

/// Report-only validation over a parsed record set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub duplicate_utt_ids: Vec<String>,
    pub unknown_attacks: Vec<String>,
    /// (attack field, speaker count, utterance count) per attack tag seen,
    /// sorted by attack field.
    pub per_attack_counts: Vec<(String, usize, usize)>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.duplicate_utt_ids.is_empty() && self.unknown_attacks.is_empty()
    }
}

pub fn validate_records(records: &[UtteranceRecord]) -> ValidationReport {
    let mut seen = BTreeMap::new();
    let mut duplicates = Vec::new();
    for r in records {
        let n = seen.entry(r.utt_id.clone()).or_insert(0usize);
        *n += 1;
        if *n == 2 {
            duplicates.push(r.utt_id.clone());
        }
    }
    let mut unknown = Vec::new();
    let mut per_attack: BTreeMap<String, (std::collections::BTreeSet<&str>, usize)> = BTreeMap::new();
    for r in records {
        if let AttackTag::Unknown(tok) = &r.attack {
            if !unknown.contains(tok) {
                unknown.push(tok.clone());
            }
        }
        let entry = per_attack
            .entry(r.attack.as_protocol_field())
            .or_default();
        entry.0.insert(r.speaker_id.as_str());
        entry.1 += 1;
    }
    ValidationReport {
        duplicate_utt_ids: duplicates,
        unknown_attacks: unknown,
        per_attack_counts: per_attack
            .into_iter()
            .map(|(k, (spk, utts))| (k, spk.len(), utts))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_bonafide_line() {
        let recs = parse_protocol("LA_0079 LA_T_1138215 - - bonafide\n", SourceSubset::Train).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].speaker_id, "LA_0079");
        assert_eq!(recs[0].utt_id, "LA_T_1138215");
        assert_eq!(recs[0].attack, AttackTag::Bonafide);
        assert_eq!(recs[0].source_subset, SourceSubset::Train);
    }

    #[test]
    fn empty_input_gives_empty_list() {
        assert!(parse_protocol("", SourceSubset::Unknown).unwrap().is_empty());
        assert!(parse_protocol("\n  \n", SourceSubset::Unknown).unwrap().is_empty());
    }

    #[test]
    fn parses_spoof_line_round_trip() {
        let line = "LA_0081 LA_T_0001 - A03 spoof\n";
        let recs = parse_protocol(line, SourceSubset::Train).unwrap();
        assert_eq!(recs[0].attack, AttackTag::Known(AttackId::A03));
        assert_eq!(serialize_protocol(&recs), line);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = parse_protocol("a b - - bonafide\nx y - A01\n", SourceSubset::Train).unwrap_err();
        match err {
            ProtocolError::FieldCount { line, found } => {
                assert_eq!(line, 2);
                assert_eq!(found, 4);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn spoof_key_with_dash_attack_is_rejected() {
        let err = parse_protocol("a b - - spoof\n", SourceSubset::Train).unwrap_err();
        assert!(matches!(err, ProtocolError::KeyAttackMismatch { line: 1, .. }));
    }

    #[test]
    fn bonafide_key_with_attack_is_rejected() {
        let err = parse_protocol("a b - A01 bonafide\n", SourceSubset::Train).unwrap_err();
        assert!(matches!(err, ProtocolError::KeyAttackMismatch { .. }));
    }

    #[test]
    fn bad_key_is_rejected() {
        let err = parse_protocol("a b - A01 real\n", SourceSubset::Train).unwrap_err();
        assert!(matches!(err, ProtocolError::BadKey { .. }));
    }

    #[test]
    fn unknown_attack_is_kept_for_inspection() {
        let recs = parse_protocol("a b - A20 spoof\n", SourceSubset::Eval).unwrap();
        assert_eq!(recs[0].attack, AttackTag::Unknown("A20".to_string()));
    }

    #[test]
    fn registry_has_19_profiles_in_order() {
        let reg = attack_registry();
        assert_eq!(reg.len(), 19);
        for (i, p) in reg.iter().enumerate() {
            assert_eq!(p.attack_id, AttackId::ALL[i]);
        }
    }

    #[test]
    fn registry_a01_row() {
        let p = attack_profile(AttackId::A01);
        assert_eq!(p.conversion, "AR RNN*");
        assert_eq!(p.speaker_representation, "VAE*");
        assert_eq!(p.waveform_generator, "WaveNet*");
        assert_eq!(p.usage, AttackUsage::Eval);
    }

    #[test]
    fn registry_a04_has_absent_speaker_representation() {
        assert_eq!(attack_profile(AttackId::A04).speaker_representation, "-");
    }

    #[test]
    fn registry_is_referentially_constant() {
        let a = attack_registry() as *const _;
        let b = attack_registry() as *const _;
        assert_eq!(a, b);
        assert_eq!(attack_registry(), attack_registry());
    }

    #[test]
    fn registry_tsv_has_header_and_19_rows() {
        let tsv = registry_to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 20);
        assert!(lines[0].starts_with("attack_id\t"));
        assert!(lines[1].starts_with("A01\tText\tNLP\tHMM\tAR RNN*\tVAE*\tWaveNet*\tEval"));
        for l in &lines[1..] {
            assert_eq!(l.split('\t').count(), 8);
        }
    }

    #[test]
    fn validate_reports_duplicates_and_unknown_attacks() {
        let text = "s1 u1 - A01 spoof\ns1 u1 - A01 spoof\ns2 u2 - A20 spoof\n";
        let recs = parse_protocol(text, SourceSubset::Train).unwrap();
        let report = validate_records(&recs);
        assert_eq!(report.duplicate_utt_ids, vec!["u1".to_string()]);
        assert_eq!(report.unknown_attacks, vec!["A20".to_string()]);
        assert!(!report.is_clean());
    }

    #[test]
    fn validate_clean_set() {
        let text = "s1 u1 - A01 spoof\ns2 u2 - - bonafide\n";
        let recs = parse_protocol(text, SourceSubset::Train).unwrap();
        let report = validate_records(&recs);
        assert!(report.is_clean());
        // (attack field, distinct speakers, utterances)
        assert_eq!(
            report.per_attack_counts,
            vec![("-".to_string(), 1, 1), ("A01".to_string(), 1, 1)]
        );
    }

    #[test]
    fn parse_serialize_parse_is_identity() {
        let text = "s1 u1 - A01 spoof\n s2  u2  -  -  bonafide \ns3 u3 - A19 spoof\n";
        let recs = parse_protocol(text, SourceSubset::Dev).unwrap();
        let rendered = serialize_protocol(&recs);
        let reparsed = parse_protocol(&rendered, SourceSubset::Dev).unwrap();
        assert_eq!(recs, reparsed);
    }
}
