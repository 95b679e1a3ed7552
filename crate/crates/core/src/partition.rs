//! Speaker-disjoint re-partitioning of a labeled corpus into training and
//! evaluation sides.
//!
//! Speakers are shuffled deterministically from the split seed and cut by a
//! fraction; utterances then route by (speaker side, attack membership).
//! Bona fide utterances always follow their speaker's side. Utterances whose
//! attack belongs to the other side's attack set (or to neither set) land in
//! `unused`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{AttackId, AttackTag};
use crate::taxonomy::{ConversionClass, LabeledUtterance, SpeakerReprClass, WaveformGenClass};

/// Which attacks go to which side, how speakers are cut, and the split seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub eval_attacks: BTreeSet<AttackId>,
    pub train_attacks: BTreeSet<AttackId>,
    /// Fraction of speakers assigned to the evaluation side, in (0, 1).
    pub eval_speaker_fraction: f64,
    pub rng_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        let eval_attacks: BTreeSet<AttackId> =
            [AttackId::A01, AttackId::A05, AttackId::A07].into_iter().collect();
        let train_attacks: BTreeSet<AttackId> = AttackId::ALL
            .iter()
            .copied()
            .filter(|a| !eval_attacks.contains(a))
            .collect();
        SplitSpec {
            eval_attacks,
            train_attacks,
            // Mirrors an 11-of-78 speaker cut.
            eval_speaker_fraction: 11.0 / 78.0,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("eval and train attack sets overlap: {0:?}")]
    OverlappingAttackSets(Vec<AttackId>),
    #[error("eval_speaker_fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("need at least 2 distinct speakers to split, found {0}")]
    TooFewSpeakers(usize),
    #[error("corpus contains an unknown attack `{0}`; label it first")]
    UnknownAttack(String),
    #[error("manifest line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
    #[error("manifest references unknown utt_id `{0}`")]
    UnknownManifestUtt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Side assignment used by manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Eval,
}

impl Side {
    fn as_str(self) -> &'static str {
        match self {
            Side::Train => "train",
            Side::Eval => "eval",
        }
    }
}

/// A finished split. Speaker sets are derived from the routed utterance
/// lists, so a manifest round trip reconstructs the partition exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub train: Vec<LabeledUtterance>,
    pub eval: Vec<LabeledUtterance>,
    pub unused: Vec<LabeledUtterance>,
    pub train_speakers: BTreeSet<String>,
    pub eval_speakers: BTreeSet<String>,
}

impl Partition {
    fn from_routed(
        train: Vec<LabeledUtterance>,
        eval: Vec<LabeledUtterance>,
        unused: Vec<LabeledUtterance>,
    ) -> Partition {
        let train_speakers = train.iter().map(|u| u.record.speaker_id.clone()).collect();
        let eval_speakers = eval.iter().map(|u| u.record.speaker_id.clone()).collect();
        Partition {
            train,
            eval,
            unused,
            train_speakers,
            eval_speakers,
        }
    }

    pub fn total_len(&self) -> usize {
        self.train.len() + self.eval.len() + self.unused.len()
    }
}

/// Split a labeled corpus. Deterministic in (corpus, spec).
pub fn split(corpus: &[LabeledUtterance], spec: &SplitSpec) -> Result<Partition, SplitError> {
    let overlap: Vec<AttackId> = spec
        .eval_attacks
        .intersection(&spec.train_attacks)
        .copied()
        .collect();
    if !overlap.is_empty() {
        return Err(SplitError::OverlappingAttackSets(overlap));
    }
    if !(spec.eval_speaker_fraction > 0.0 && spec.eval_speaker_fraction < 1.0) {
        return Err(SplitError::BadFraction(spec.eval_speaker_fraction));
    }
    if corpus.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    for u in corpus {
        if let AttackTag::Unknown(tok) = &u.record.attack {
            return Err(SplitError::UnknownAttack(tok.clone()));
        }
    }

    // Deterministic speaker cut: sort, shuffle with the seed, take the head
    // as the eval side.
    let mut speakers: Vec<String> = corpus
        .iter()
        .map(|u| u.record.speaker_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if speakers.len() < 2 {
        return Err(SplitError::TooFewSpeakers(speakers.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    speakers.shuffle(&mut rng);
    let n = speakers.len();
    let n_eval = ((spec.eval_speaker_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let eval_side: BTreeSet<&str> = speakers[..n_eval].iter().map(|s| s.as_str()).collect();

    let mut train = Vec::new();
    let mut eval = Vec::new();
    let mut unused = Vec::new();
    for u in corpus {
        let on_eval_side = eval_side.contains(u.record.speaker_id.as_str());
        match &u.record.attack {
            AttackTag::Bonafide => {
                if on_eval_side {
                    eval.push(u.clone())
                } else {
                    train.push(u.clone())
                }
            }
            AttackTag::Known(id) => {
                let belongs = if on_eval_side {
                    spec.eval_attacks.contains(id)
                } else {
                    spec.train_attacks.contains(id)
                };
                if belongs {
                    if on_eval_side {
                        eval.push(u.clone())
                    } else {
                        train.push(u.clone())
                    }
                } else {
                    unused.push(u.clone());
                }
            }
            AttackTag::Unknown(_) => unreachable!("rejected above"),
        }
    }
    Ok(Partition::from_routed(train, eval, unused))
}

/// Pass/fail verification of the partition invariants plus per-attack and
/// per-class occupancy counts.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub shared_speakers: Vec<String>,
    pub misrouted_utts: Vec<String>,
    /// Eval-side attribute classes missing from the train side, as
    /// `head:class` strings.
    pub uncovered_eval_classes: Vec<String>,
    pub train_utts: usize,
    pub eval_utts: usize,
    pub unused_utts: usize,
    /// attack field -> (train count, eval count, unused count)
    pub per_attack: BTreeMap<String, (usize, usize, usize)>,
}

impl VerifyReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "partition verify: {}",
            if self.pass { "PASS" } else { "FAIL" }
        );
        let _ = writeln!(
            s,
            "  train {} utts / eval {} utts / unused {} utts",
            self.train_utts, self.eval_utts, self.unused_utts
        );
        if !self.shared_speakers.is_empty() {
            let _ = writeln!(s, "  shared speakers: {:?}", self.shared_speakers);
        }
        if !self.misrouted_utts.is_empty() {
            let _ = writeln!(s, "  misrouted utterances: {:?}", self.misrouted_utts);
        }
        if !self.uncovered_eval_classes.is_empty() {
            let _ = writeln!(s, "  uncovered eval classes: {:?}", self.uncovered_eval_classes);
        }
        for (attack, (tr, ev, un)) in &self.per_attack {
            let _ = writeln!(s, "  {attack}: train {tr} / eval {ev} / unused {un}");
        }
        s
    }
}

/// Check speaker disjointness, attack-membership routing, and eval-side
/// attribute-class coverage against the split spec that produced the partition.
pub fn verify(partition: &Partition, spec: &SplitSpec) -> VerifyReport {
    let shared: Vec<String> = partition
        .train_speakers
        .intersection(&partition.eval_speakers)
        .cloned()
        .collect();

    let mut misrouted = Vec::new();
    for u in &partition.eval {
        let ok = match &u.record.attack {
            AttackTag::Bonafide => true,
            AttackTag::Known(id) => spec.eval_attacks.contains(id),
            AttackTag::Unknown(_) => false,
        };
        if !ok {
            misrouted.push(u.record.utt_id.clone());
        }
    }
    for u in &partition.train {
        let ok = match &u.record.attack {
            AttackTag::Bonafide => true,
            AttackTag::Known(id) => spec.train_attacks.contains(id),
            AttackTag::Unknown(_) => false,
        };
        if !ok {
            misrouted.push(u.record.utt_id.clone());
        }
    }

    // Every attribute class that appears on the eval side must also appear on
    // the train side, per head.
    let mut uncovered = Vec::new();
    let collect = |utts: &[LabeledUtterance]| {
        let mut conv = BTreeSet::new();
        let mut spk = BTreeSet::new();
        let mut wg = BTreeSet::new();
        for u in utts {
            conv.insert(u.labels.conversion.index());
            spk.insert(u.labels.speaker_repr.index());
            wg.insert(u.labels.waveform_gen.index());
        }
        (conv, spk, wg)
    };
    let (conv_e, spk_e, wg_e) = collect(&partition.eval);
    let (conv_t, spk_t, wg_t) = collect(&partition.train);
    for c in conv_e.difference(&conv_t) {
        uncovered.push(format!("conversion:{}", ConversionClass::from_index(*c).unwrap()));
    }
    for c in spk_e.difference(&spk_t) {
        uncovered.push(format!("speaker_repr:{}", SpeakerReprClass::from_index(*c).unwrap()));
    }
    for c in wg_e.difference(&wg_t) {
        uncovered.push(format!("waveform_gen:{}", WaveformGenClass::from_index(*c).unwrap()));
    }

    let mut per_attack: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (idx, list) in [&partition.train, &partition.eval, &partition.unused]
        .into_iter()
        .enumerate()
    {
        for u in list {
            let e = per_attack
                .entry(u.record.attack.as_protocol_field())
                .or_default();
            match idx {
                0 => e.0 += 1,
                1 => e.1 += 1,
                _ => e.2 += 1,
            }
        }
    }

    VerifyReport {
        pass: shared.is_empty() && misrouted.is_empty() && uncovered.is_empty(),
        shared_speakers: shared,
        misrouted_utts: misrouted,
        uncovered_eval_classes: uncovered,
        train_utts: partition.train.len(),
        eval_utts: partition.eval.len(),
        unused_utts: partition.unused.len(),
        per_attack,
    }
}

/// Manifest text: one `utt_id<TAB>{train|eval}` per line, sorted by utt_id.
/// Unused utterances are not listed.
pub fn manifest_text(partition: &Partition) -> String {
    let mut rows: Vec<(String, Side)> = partition
        .train
        .iter()
        .map(|u| (u.record.utt_id.clone(), Side::Train))
        .chain(partition.eval.iter().map(|u| (u.record.utt_id.clone(), Side::Eval)))
        .collect();
    rows.sort();
    let mut out = String::new();
    for (utt, side) in rows {
        out.push_str(&utt);
        out.push('\t');
        out.push_str(side.as_str());
        out.push('\n');
    }
    out
}

pub fn export_manifest(partition: &Partition, path: &std::path::Path) -> Result<(), SplitError> {
    std::fs::write(path, manifest_text(partition))?;
    Ok(())
}

/// Parse manifest text into (utt_id, side) pairs.
pub fn parse_manifest(text: &str) -> Result<Vec<(String, Side)>, SplitError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut parts = raw.split('\t');
        let utt = parts.next().unwrap_or("");
        let side = parts.next().unwrap_or("");
        if utt.is_empty() || parts.next().is_some() {
            return Err(SplitError::BadManifest {
                line,
                reason: "expected `utt_id<TAB>{train|eval}`".into(),
            });
        }
        let side = match side {
            "train" => Side::Train,
            "eval" => Side::Eval,
            other => {
                return Err(SplitError::BadManifest {
                    line,
                    reason: format!("bad side `{other}`"),
                })
            }
        };
        if !seen.insert(utt.to_string()) {
            return Err(SplitError::BadManifest {
                line,
                reason: format!("duplicate utt_id `{utt}`"),
            });
        }
        out.push((utt.to_string(), side));
    }
    Ok(out)
}

pub fn import_manifest(path: &std::path::Path) -> Result<Vec<(String, Side)>, SplitError> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text)
}

/// Rebuild a partition from a manifest and the original labeled corpus.
/// Corpus utterances absent from the manifest become `unused`.
pub fn apply_manifest(
    corpus: &[LabeledUtterance],
    assignments: &[(String, Side)],
) -> Result<Partition, SplitError> {
    let by_utt: BTreeMap<&str, Side> = assignments
        .iter()
        .map(|(u, s)| (u.as_str(), *s))
        .collect();
    let known: BTreeSet<&str> = corpus.iter().map(|u| u.record.utt_id.as_str()).collect();
    for (utt, _) in assignments {
        if !known.contains(utt.as_str()) {
            return Err(SplitError::UnknownManifestUtt(utt.clone()));
        }
    }
    let mut train = Vec::new();
    let mut eval = Vec::new();
    let mut unused = Vec::new();
    for u in corpus {
        match by_utt.get(u.record.utt_id.as_str()) {
            Some(Side::Train) => train.push(u.clone()),
            Some(Side::Eval) => eval.push(u.clone()),
            None => unused.push(u.clone()),
        }
    }
    Ok(Partition::from_routed(train, eval, unused))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{SourceSubset, UtteranceRecord};
    use crate::taxonomy::labeled_corpus;
    use proptest::prelude::*;

    fn record(speaker: &str, utt: &str, attack: AttackTag) -> UtteranceRecord {
        UtteranceRecord {
            speaker_id: speaker.into(),
            utt_id: utt.into(),
            attack,
            source_subset: SourceSubset::Unknown,
        }
    }

    fn toy_corpus() -> Vec<LabeledUtterance> {
        // 4 speakers x {bonafide, A01, A02} = 12 utterances.
        let mut recs = Vec::new();
        for (i, s) in ["s1", "s2", "s3", "s4"].iter().enumerate() {
            recs.push(record(s, &format!("u{}b", i), AttackTag::Bonafide));
            recs.push(record(s, &format!("u{}a01", i), AttackTag::Known(AttackId::A01)));
            recs.push(record(s, &format!("u{}a02", i), AttackTag::Known(AttackId::A02)));
        }
        labeled_corpus(&recs).unwrap()
    }

    /// Toy corpus widened so every eval-side attribute class also occurs on
    /// the train side (A12 supplies a train-side neural generator).
    fn covered_corpus() -> Vec<LabeledUtterance> {
        let mut recs = Vec::new();
        for (i, s) in ["s1", "s2", "s3", "s4"].iter().enumerate() {
            recs.push(record(s, &format!("u{}b", i), AttackTag::Bonafide));
            recs.push(record(s, &format!("u{}a01", i), AttackTag::Known(AttackId::A01)));
            recs.push(record(s, &format!("u{}a02", i), AttackTag::Known(AttackId::A02)));
            recs.push(record(s, &format!("u{}a12", i), AttackTag::Known(AttackId::A12)));
        }
        labeled_corpus(&recs).unwrap()
    }

    fn toy_spec() -> SplitSpec {
        SplitSpec {
            eval_speaker_fraction: 0.5,
            rng_seed: 42,
            ..SplitSpec::default()
        }
    }

    #[test]
    fn toy_corpus_routes_by_speaker_side_and_attack() {
        let corpus = toy_corpus();
        let spec = toy_spec();
        let p = split(&corpus, &spec).unwrap();
        assert_eq!(p.train_speakers.len(), 2);
        assert_eq!(p.eval_speakers.len(), 2);
        assert!(p.train_speakers.is_disjoint(&p.eval_speakers));
        // Enumerate expected routing per rules, given the chosen sides.
        for u in &corpus {
            let on_eval = p.eval_speakers.contains(&u.record.speaker_id);
            let expect_in = |list: &[LabeledUtterance]| {
                list.iter().any(|x| x.record.utt_id == u.record.utt_id)
            };
            match &u.record.attack {
                AttackTag::Bonafide => {
                    assert!(expect_in(if on_eval { &p.eval } else { &p.train }))
                }
                AttackTag::Known(AttackId::A01) => {
                    // A01 is an eval attack: eval speakers keep it, train
                    // speakers lose it to unused.
                    assert!(expect_in(if on_eval { &p.eval } else { &p.unused }))
                }
                AttackTag::Known(AttackId::A02) => {
                    assert!(expect_in(if on_eval { &p.unused } else { &p.train }))
                }
                _ => unreachable!(),
            }
        }
        assert_eq!(p.total_len(), corpus.len());
    }

    #[test]
    fn empty_eval_attacks_keeps_only_bonafide_on_eval() {
        let corpus = toy_corpus();
        let spec = SplitSpec {
            eval_attacks: BTreeSet::new(),
            train_attacks: AttackId::ALL.iter().copied().collect(),
            eval_speaker_fraction: 0.5,
            rng_seed: 1,
        };
        let p = split(&corpus, &spec).unwrap();
        assert!(p.eval.iter().all(|u| u.record.attack.is_bonafide()));
        assert!(!p.eval.is_empty());
    }

    #[test]
    fn bad_fraction_is_rejected() {
        let corpus = toy_corpus();
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            let spec = SplitSpec {
                eval_speaker_fraction: f,
                ..SplitSpec::default()
            };
            assert!(matches!(split(&corpus, &spec), Err(SplitError::BadFraction(_))));
        }
    }

    #[test]
    fn single_speaker_is_rejected() {
        let recs = vec![record("s1", "u1", AttackTag::Bonafide)];
        let corpus = labeled_corpus(&recs).unwrap();
        assert!(matches!(
            split(&corpus, &SplitSpec::default()),
            Err(SplitError::TooFewSpeakers(1))
        ));
    }

    #[test]
    fn overlapping_attack_sets_are_rejected() {
        let corpus = toy_corpus();
        let mut spec = SplitSpec::default();
        spec.train_attacks.insert(AttackId::A01);
        assert!(matches!(
            split(&corpus, &spec),
            Err(SplitError::OverlappingAttackSets(_))
        ));
    }

    #[test]
    fn verify_passes_on_valid_partition() {
        let corpus = covered_corpus();
        let spec = toy_spec();
        let p = split(&corpus, &spec).unwrap();
        let report = verify(&p, &spec);
        assert!(report.pass, "{}", report.summary());
    }

    #[test]
    fn verify_flags_uncovered_eval_classes() {
        // Only A01 carries a neural generator here, so the eval side sees a
        // class the train side never does.
        let corpus = toy_corpus();
        let spec = toy_spec();
        let p = split(&corpus, &spec).unwrap();
        let report = verify(&p, &spec);
        assert!(!report.pass);
        assert_eq!(report.uncovered_eval_classes, vec!["waveform_gen:neural".to_string()]);
    }

    #[test]
    fn verify_names_injected_shared_speaker() {
        let corpus = covered_corpus();
        let spec = toy_spec();
        let mut p = split(&corpus, &spec).unwrap();
        // Move one eval bona fide utterance into train: its speaker now sits
        // on both sides.
        let moved = p
            .eval
            .iter()
            .position(|u| u.record.attack.is_bonafide())
            .unwrap();
        let u = p.eval.remove(moved);
        let speaker = u.record.speaker_id.clone();
        p.train.push(u);
        p.train_speakers.insert(speaker.clone());
        let report = verify(&p, &spec);
        assert!(!report.pass);
        assert_eq!(report.shared_speakers, vec![speaker]);
    }

    #[test]
    fn counts_are_conserved() {
        let corpus = toy_corpus();
        let p = split(&corpus, &toy_spec()).unwrap();
        assert_eq!(p.train.len() + p.eval.len() + p.unused.len(), corpus.len());
    }

    #[test]
    fn manifest_round_trip_is_exact() {
        let corpus = toy_corpus();
        let p = split(&corpus, &toy_spec()).unwrap();
        let text = manifest_text(&p);
        let assignments = parse_manifest(&text).unwrap();
        assert_eq!(assignments.len(), p.train.len() + p.eval.len());
        let rebuilt = apply_manifest(&corpus, &assignments).unwrap();
        assert_eq!(rebuilt, p);
    }

    #[test]
    fn manifest_is_sorted_and_deterministic() {
        let corpus = toy_corpus();
        let p1 = split(&corpus, &toy_spec()).unwrap();
        let p2 = split(&corpus, &toy_spec()).unwrap();
        let t1 = manifest_text(&p1);
        assert_eq!(t1, manifest_text(&p2));
        let utts: Vec<&str> = t1.lines().map(|l| l.split('\t').next().unwrap()).collect();
        let mut sorted = utts.clone();
        sorted.sort();
        assert_eq!(utts, sorted);
    }

    #[test]
    fn manifest_with_unknown_utt_errors() {
        let corpus = toy_corpus();
        let assignments = vec![("nosuch".to_string(), Side::Train)];
        assert!(matches!(
            apply_manifest(&corpus, &assignments),
            Err(SplitError::UnknownManifestUtt(_))
        ));
    }

    #[test]
    fn manifest_parse_rejects_garbage() {
        assert!(parse_manifest("u1\tnorth\n").is_err());
        assert!(parse_manifest("u1 train\n").is_err());
        assert!(parse_manifest("u1\ttrain\nu1\teval\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn random_partitions_keep_invariants(
            n_speakers in 2usize..8,
            utts_per_speaker in 1usize..6,
            seed in any::<u64>(),
            fraction in 0.05f64..0.95,
            attack_choices in proptest::collection::vec(0usize..20, 1..40),
        ) {
            let mut recs = Vec::new();
            let mut k = 0usize;
            for s in 0..n_speakers {
                for u in 0..utts_per_speaker {
                    let pick = attack_choices[k % attack_choices.len()];
                    k += 1;
                    let attack = if pick == 19 {
                        AttackTag::Bonafide
                    } else {
                        AttackTag::Known(AttackId::ALL[pick])
                    };
                    recs.push(record(&format!("spk{s}"), &format!("utt{s}_{u}"), attack));
                }
            }
            let corpus = labeled_corpus(&recs).unwrap();
            let spec = SplitSpec { eval_speaker_fraction: fraction, rng_seed: seed, ..SplitSpec::default() };
            let p = split(&corpus, &spec).unwrap();

            // Speaker disjointness.
            prop_assert!(p.train_speakers.is_disjoint(&p.eval_speakers));
            // Attack membership routing.
            for u in &p.eval {
                match &u.record.attack {
                    AttackTag::Bonafide => {}
                    AttackTag::Known(id) => prop_assert!(spec.eval_attacks.contains(id)),
                    _ => prop_assert!(false),
                }
            }
            for u in &p.train {
                match &u.record.attack {
                    AttackTag::Bonafide => {}
                    AttackTag::Known(id) => prop_assert!(spec.train_attacks.contains(id)),
                    _ => prop_assert!(false),
                }
            }
            // Count conservation.
            prop_assert_eq!(p.total_len(), corpus.len());
            // Determinism: bit-identical manifest on a re-run.
            let p2 = split(&corpus, &spec).unwrap();
            prop_assert_eq!(manifest_text(&p), manifest_text(&p2));
        }
    }
}
