//! Deterministic synthetic corpus with separable per-attribute acoustic
//! signatures, for end-to-end runs without licensed audio.
//!
//! Every utterance is a harmonic voice-like carrier (speaker-specific
//! fundamental) plus three independent, attribute-determined components:
//!
//! - conversion class: sinusoidal amplitude modulation of the carrier at a
//!   class-specific rate (bona fide: none). The modulation rates live well
//!   below the frame rate, so they appear as temporal patterns in frame
//!   energies.
//! - speaker-representation class: a narrow resonant noise band at a
//!   class-specific center between 3.9 and 5.3 kHz (above the carrier's top
//!   harmonic, below the generator band).
//! - waveform-generator class: fine texture in the 5.8-8 kHz band. Neural: a
//!   dense, spectrally flat comb (noise-like). Non-neural: a few strong
//!   inharmonic peaks (buzz). Bona fide: nothing beyond the mild noise floor.
//!
//! Signatures attach to attribute classes, not attack IDs, so any attack
//! label combination synthesizes consistently. All randomness flows from one
//! seed through counter-derived substreams.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{write_wav, FeatureError, Waveform};
use crate::protocol::{AttackId, AttackTag, SourceSubset, UtteranceRecord};
use crate::taxonomy::{
    label_of_attack, AttributeLabels, ConversionClass, SpeakerReprClass, WaveformGenClass,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad synth spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub speakers: usize,
    pub utterances_per_attack: usize,
    /// Bona fide utterances per speaker; defaults to twice
    /// `utterances_per_attack` so the bona fide class is not starved.
    pub bonafide_per_speaker: Option<usize>,
    pub sample_rate: u32,
    pub duration_secs: f64,
    pub rng_seed: u64,
    /// Per-attribute signature strengths in [0, 1]; 0 removes the signature.
    pub strength_conv: f64,
    pub strength_spk: f64,
    pub strength_wg: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            speakers: 6,
            utterances_per_attack: 3,
            bonafide_per_speaker: None,
            sample_rate: 16000,
            duration_secs: 1.0,
            rng_seed: 0,
            strength_conv: 1.0,
            strength_spk: 1.0,
            strength_wg: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.speakers == 0 {
            return Err(SynthError::BadSpec("speakers must be >= 1".into()));
        }
        if self.utterances_per_attack == 0 {
            return Err(SynthError::BadSpec("utterances_per_attack must be >= 1".into()));
        }
        if self.bonafide_per_speaker == Some(0) {
            return Err(SynthError::BadSpec("bonafide_per_speaker must be >= 1".into()));
        }
        let duration_ok = self.duration_secs >= 0.5;
        if !duration_ok {
            return Err(SynthError::BadSpec(format!(
                "duration_secs must be >= 0.5, got {}",
                self.duration_secs
            )));
        }
        if self.sample_rate < 16000 {
            return Err(SynthError::BadSpec(
                "sample_rate must be >= 16000 (signature bands reach 8 kHz)".into(),
            ));
        }
        for (name, v) in [
            ("strength_conv", self.strength_conv),
            ("strength_spk", self.strength_spk),
            ("strength_wg", self.strength_wg),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::BadSpec(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn bonafide_count(&self) -> usize {
        self.bonafide_per_speaker
            .unwrap_or(2 * self.utterances_per_attack)
    }

    pub fn utterances_per_speaker(&self) -> usize {
        19 * self.utterances_per_attack + self.bonafide_count()
    }

    pub fn total_utterances(&self) -> usize {
        self.speakers * self.utterances_per_speaker()
    }
}

/// Amplitude-modulation rate (Hz) of a conversion class; bona fide carries
/// no modulation.
pub fn conv_am_rate(class: ConversionClass) -> Option<f64> {
    match class {
        ConversionClass::RnnRelated => Some(4.0),
        ConversionClass::Ff => Some(6.3),
        ConversionClass::Cart => Some(9.0),
        ConversionClass::Vae => Some(13.0),
        ConversionClass::GmmUbm => Some(19.0),
        ConversionClass::MomentMatching => Some(27.0),
        ConversionClass::Linear => Some(38.0),
        ConversionClass::Bonafide => None,
    }
}

/// Resonant-band center (Hz) of a speaker-representation class.
pub fn spk_band_center(class: SpeakerReprClass) -> Option<f64> {
    match class {
        SpeakerReprClass::Vae => Some(3750.0),
        SpeakerReprClass::OneHot => Some(4190.0),
        SpeakerReprClass::DVector => Some(4625.0),
        SpeakerReprClass::Plda => Some(5060.0),
        SpeakerReprClass::NoneRepr => Some(5500.0),
        SpeakerReprClass::Bonafide => None,
    }
}

/// Generator-texture band shared by both spoof textures.
pub const WG_BAND_LOW_HZ: f64 = 5800.0;
pub const WG_BAND_HIGH_HZ: f64 = 8000.0;
/// Dense-comb spacing of the neural texture; merges into a flat band under
/// any analysis window longer than ~70 ms.
pub const WG_NEURAL_SPACING_HZ: f64 = 15.0;
/// Sparse peaks of the non-neural buzz. Wide spacing keeps the peaks in
/// distinct mel channels after filterbank smearing.
pub const WG_BUZZ_PEAKS_HZ: [f64; 2] = [6200.0, 7600.0];

const CARRIER_RMS: f64 = 0.15;
const CARRIER_TOP_HZ: f64 = 3400.0;
const MILD_NOISE_RMS: f64 = 0.004;
const AM_DEPTH: f64 = 0.45;
const SPK_BAND_RMS: f64 = 0.12;
const WG_TEXTURE_RMS: f64 = 0.07;
const OUTPUT_RMS: f64 = 0.15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Substream seed derived from the corpus seed and counters.
fn derive_seed(seed: u64, lane: u64, a: u64, b: u64) -> u64 {
    let mut s = seed;
    let mut out = splitmix64(&mut s) ^ lane.wrapping_mul(0xA24BAED4963EE407);
    out ^= splitmix64(&mut s).wrapping_add(a.wrapping_mul(0x9FB21C651E98DF25));
    out ^= splitmix64(&mut s).rotate_left((b % 63) as u32) ^ b;
    let mut f = out;
    splitmix64(&mut f)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller over open-interval uniforms.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Adds `amp * sin(2 pi f t + phase)` via complex-phasor recurrence.
fn add_tone(samples: &mut [f64], sample_rate: f64, freq: f64, amp: f64, phase: f64) {
    let step = 2.0 * std::f64::consts::PI * freq / sample_rate;
    let (wr, wi) = (step.cos(), step.sin());
    let (mut re, mut im) = (phase.cos(), phase.sin());
    for s in samples.iter_mut() {
        *s += amp * im;
        let nre = re * wr - im * wi;
        im = re * wi + im * wr;
        re = nre;
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn scale_to_rms(x: &mut [f64], target: f64) {
    let r = rms(x);
    if r > 0.0 {
        let g = target / r;
        for v in x.iter_mut() {
            *v *= g;
        }
    }
}

/// Half-width of the speaker-representation resonant band.
pub const SPK_BAND_HALF_WIDTH_HZ: f64 = 80.0;

/// Narrow resonant band: a dense random-phase sinusoid comb within
/// +-SPK_BAND_HALF_WIDTH_HZ of the center. Unlike filtered noise this has no
/// spectral skirt, so it cannot bleed into neighboring signature bands.
fn resonant_band(rng: &mut ChaCha8Rng, n: usize, sample_rate: f64, center_hz: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let spacing = 10.0;
    let count = (2.0 * SPK_BAND_HALF_WIDTH_HZ / spacing) as usize;
    for k in 0..=count {
        let f = center_hz - SPK_BAND_HALF_WIDTH_HZ + k as f64 * spacing;
        let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        add_tone(&mut out, sample_rate, f, 1.0, phase);
    }
    out
}

/// Speaker fundamental, log-uniform in 110..240 Hz, fixed per speaker.
fn speaker_f0(seed: u64, speaker_idx: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, speaker_idx as u64, 0));
    let u: f64 = rng.gen();
    110.0 * (240.0f64 / 110.0).powf(u)
}

/// Synthesize one utterance for (speaker, attack-or-bonafide, replica index).
fn synth_utterance(
    spec: &SynthSpec,
    speaker_idx: usize,
    variant_idx: usize, // 0 = bona fide, 1..=19 = A01..A19
    utt_idx: usize,
    labels: &AttributeLabels,
) -> Vec<f64> {
    let sr = spec.sample_rate as f64;
    let n = (spec.duration_secs * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        spec.rng_seed,
        2,
        speaker_idx as u64,
        (variant_idx as u64) << 32 | utt_idx as u64,
    ));

    // Carrier: harmonics of the speaker fundamental with mild per-utterance
    // jitter and random phases.
    let f0 = speaker_f0(spec.rng_seed, speaker_idx) * (1.0 + rng.gen_range(-0.02..0.02));
    let mut carrier = vec![0.0; n];
    let n_harm = (CARRIER_TOP_HZ / f0).floor() as usize;
    for h in 1..=n_harm {
        let amp = (h as f64).powf(-0.8);
        let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        add_tone(&mut carrier, sr, h as f64 * f0, amp, phase);
    }
    scale_to_rms(&mut carrier, CARRIER_RMS);

    // Conversion signature: amplitude modulation of the carrier.
    if let Some(rate) = conv_am_rate(labels.conversion) {
        let depth = AM_DEPTH * spec.strength_conv;
        let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        for (i, s) in carrier.iter_mut().enumerate() {
            let t = i as f64 / sr;
            *s *= 1.0 + depth * (2.0 * std::f64::consts::PI * rate * t + phase).sin();
        }
    }

    let mut signal = carrier;

    // Speaker-representation signature: resonant band emphasis.
    if let Some(center) = spk_band_center(labels.speaker_repr) {
        if spec.strength_spk > 0.0 {
            let mut band = resonant_band(&mut rng, n, sr, center);
            scale_to_rms(&mut band, SPK_BAND_RMS * spec.strength_spk);
            for (s, b) in signal.iter_mut().zip(&band) {
                *s += b;
            }
        }
    }

    // Waveform-generator signature: fine texture in the top band.
    let texture_rms = WG_TEXTURE_RMS * spec.strength_wg;
    match labels.waveform_gen {
        WaveformGenClass::Neural if texture_rms > 0.0 => {
            let mut comb = vec![0.0; n];
            let count = ((WG_BAND_HIGH_HZ - WG_BAND_LOW_HZ) / WG_NEURAL_SPACING_HZ) as usize;
            let amp = 1.0;
            for k in 0..count {
                let f = WG_BAND_LOW_HZ + (k as f64 + 0.5) * WG_NEURAL_SPACING_HZ;
                let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                add_tone(&mut comb, sr, f, amp, phase);
            }
            scale_to_rms(&mut comb, texture_rms);
            for (s, c) in signal.iter_mut().zip(&comb) {
                *s += c;
            }
        }
        WaveformGenClass::NonNeural if texture_rms > 0.0 => {
            let mut buzz = vec![0.0; n];
            for f in WG_BUZZ_PEAKS_HZ {
                let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                add_tone(&mut buzz, sr, f, 1.0, phase);
            }
            scale_to_rms(&mut buzz, texture_rms);
            for (s, b) in signal.iter_mut().zip(&buzz) {
                *s += b;
            }
        }
        _ => {}
    }

    // Mild noise floor on everything, bona fide included.
    for s in signal.iter_mut() {
        *s += MILD_NOISE_RMS * gaussian(&mut rng);
    }

    scale_to_rms(&mut signal, OUTPUT_RMS);
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.95 {
        let g = 0.95 / peak;
        for s in signal.iter_mut() {
            *s *= g;
        }
    }
    signal
}

/// One generated utterance with its protocol record.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub record: UtteranceRecord,
    pub wave: Waveform,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub utterances: Vec<SynthUtterance>,
    pub protocol_text: String,
}

fn speaker_id(i: usize) -> String {
    format!("SYN{:03}", i + 1)
}

/// Deterministic enumeration: per speaker, bona fide replicas first, then
/// every attack A01..A19 in order.
fn plan(spec: &SynthSpec) -> Vec<(usize, usize, usize, AttackTag, AttributeLabels)> {
    let mut items = Vec::with_capacity(spec.total_utterances());
    for s in 0..spec.speakers {
        for k in 0..spec.bonafide_count() {
            items.push((s, 0, k, AttackTag::Bonafide, AttributeLabels::BONAFIDE));
        }
        for (ai, attack) in AttackId::ALL.iter().enumerate() {
            let labels = label_of_attack(*attack);
            for k in 0..spec.utterances_per_attack {
                items.push((s, ai + 1, k, AttackTag::Known(*attack), labels));
            }
        }
    }
    items
}

fn utt_id(speaker_idx: usize, tag: &AttackTag, k: usize) -> String {
    let variant = match tag {
        AttackTag::Bonafide => "BF".to_string(),
        AttackTag::Known(a) => a.as_str().to_string(),
        AttackTag::Unknown(s) => s.clone(),
    };
    format!("{}_{}_{:03}", speaker_id(speaker_idx), variant, k)
}

/// Generate the corpus in memory.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let mut utterances = Vec::with_capacity(spec.total_utterances());
    let mut protocol = String::new();
    for (s, v, k, tag, labels) in plan(spec) {
        let samples = synth_utterance(spec, s, v, k, &labels);
        let wave = Waveform::new(samples, spec.sample_rate)?;
        let id = utt_id(s, &tag, k);
        let key = if tag.is_bonafide() { "bonafide" } else { "spoof" };
        protocol.push_str(&format!(
            "{} {} - {} {}\n",
            speaker_id(s),
            id,
            tag.as_protocol_field(),
            key
        ));
        utterances.push(SynthUtterance {
            record: UtteranceRecord {
                speaker_id: speaker_id(s),
                utt_id: id,
                attack: tag,
                source_subset: SourceSubset::Unknown,
            },
            wave,
        });
    }
    Ok(SynthCorpus {
        utterances,
        protocol_text: protocol,
    })
}

/// Generate straight to disk: `<dir>/protocol.txt` plus
/// `<dir>/wav/<utt_id>.wav`, one utterance in memory at a time.
pub fn generate_to_dir(spec: &SynthSpec, dir: &Path) -> Result<usize, SynthError> {
    spec.validate()?;
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir)?;
    let mut protocol = String::new();
    let mut count = 0usize;
    for (s, v, k, tag, labels) in plan(spec) {
        let samples = synth_utterance(spec, s, v, k, &labels);
        let wave = Waveform::new(samples, spec.sample_rate)?;
        let id = utt_id(s, &tag, k);
        write_wav(&wav_dir.join(format!("{id}.wav")), &wave)?;
        let key = if tag.is_bonafide() { "bonafide" } else { "spoof" };
        protocol.push_str(&format!(
            "{} {} - {} {}\n",
            speaker_id(s),
            id,
            tag.as_protocol_field(),
            key
        ));
        count += 1;
    }
    std::fs::write(dir.join("protocol.txt"), protocol)?;
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::parse_protocol;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn small_spec() -> SynthSpec {
        SynthSpec {
            speakers: 2,
            utterances_per_attack: 1,
            bonafide_per_speaker: Some(2),
            duration_secs: 1.0,
            rng_seed: 13,
            ..SynthSpec::default()
        }
    }

    /// Welch-style averaged power spectral density, Hann-windowed 2048-point
    /// segments with 50% overlap. Returns (bin_hz, psd).
    fn psd(x: &[f64], sr: f64) -> (f64, Vec<f64>) {
        let nfft = 2048;
        let hop = nfft / 2;
        let hann: Vec<f64> = (0..nfft)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nfft as f64).cos())
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(nfft);
        let mut acc = vec![0.0; nfft / 2 + 1];
        let mut windows = 0;
        let mut start = 0;
        while start + nfft <= x.len() {
            let mut buf: Vec<Complex<f64>> = (0..nfft)
                .map(|i| Complex::new(x[start + i] * hann[i], 0.0))
                .collect();
            fft.process(&mut buf);
            for (b, a) in buf[..nfft / 2 + 1].iter().zip(acc.iter_mut()) {
                *a += b.norm_sqr();
            }
            windows += 1;
            start += hop;
        }
        for a in acc.iter_mut() {
            *a /= windows.max(1) as f64;
        }
        (sr / nfft as f64, acc)
    }

    fn band_mean(psd: &[f64], bin_hz: f64, lo: f64, hi: f64) -> f64 {
        let b0 = (lo / bin_hz).ceil() as usize;
        let b1 = ((hi / bin_hz).floor() as usize).min(psd.len() - 1);
        let slice = &psd[b0..=b1];
        slice.iter().sum::<f64>() / slice.len() as f64
    }

    /// Spectral flatness (geometric over arithmetic mean) of a PSD band.
    fn band_flatness(psd: &[f64], bin_hz: f64, lo: f64, hi: f64) -> f64 {
        let b0 = (lo / bin_hz).ceil() as usize;
        let b1 = ((hi / bin_hz).floor() as usize).min(psd.len() - 1);
        let slice = &psd[b0..=b1];
        let log_mean = slice.iter().map(|v| (v + 1e-30).ln()).sum::<f64>() / slice.len() as f64;
        let mean = slice.iter().sum::<f64>() / slice.len() as f64;
        log_mean.exp() / mean
    }

    /// Low-band frame-energy envelope and its dominant modulation frequency.
    /// Returns (peak_hz, modulation_index). Short 10 ms frames keep the
    /// envelope passband well above the fastest modulation rate.
    fn modulation_peak(x: &[f64], sr: f64) -> (f64, f64) {
        let win = 160;
        let hop = 80;
        let nfft = 256;
        let top_bin = (3500.0 / (sr / nfft as f64)) as usize;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(nfft);
        let mut env = Vec::new();
        let mut start = 0;
        while start + win <= x.len() {
            let mut buf: Vec<Complex<f64>> = (0..nfft)
                .map(|i| {
                    if i < win {
                        Complex::new(x[start + i], 0.0)
                    } else {
                        Complex::new(0.0, 0.0)
                    }
                })
                .collect();
            fft.process(&mut buf);
            let e: f64 = buf[..top_bin].iter().map(|c| c.norm_sqr()).sum();
            env.push(e.sqrt());
            start += hop;
        }
        let frame_rate = sr / hop as f64;
        let n = env.len();
        let hann: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let mut buf: Vec<Complex<f64>> = env
            .iter()
            .zip(&hann)
            .map(|(e, w)| Complex::new(e * w, 0.0))
            .collect();
        let mut planner2 = FftPlanner::new();
        let fft2 = planner2.plan_fft_forward(n);
        fft2.process(&mut buf);
        let dc = buf[0].norm();
        let mut best = (0usize, 0.0f64);
        for (k, c) in buf.iter().enumerate().take(n / 2).skip(2) {
            let m = c.norm();
            if m > best.1 {
                best = (k, m);
            }
        }
        (best.0 as f64 * frame_rate / n as f64, best.1 / dc.max(1e-30))
    }

    /// Oracle classifiers over the designed signature statistics.
    fn oracle_conv(x: &[f64], sr: f64) -> ConversionClass {
        let (peak_hz, index) = modulation_peak(x, sr);
        if index < 0.08 {
            return ConversionClass::Bonafide;
        }
        let mut best = (ConversionClass::Bonafide, f64::INFINITY);
        for c in ConversionClass::ALL {
            if let Some(rate) = conv_am_rate(*c) {
                let d = (rate - peak_hz).abs();
                if d < best.1 {
                    best = (*c, d);
                }
            }
        }
        best.0
    }

    fn oracle_spk(x: &[f64], sr: f64) -> SpeakerReprClass {
        let (bin_hz, p) = psd(x, sr);
        // Resonant utterances raise exactly one center window far above the
        // others; bona fide leaves all five near the common noise floor.
        let mut windows: Vec<(SpeakerReprClass, f64)> = SpeakerReprClass::ALL
            .iter()
            .filter_map(|c| {
                spk_band_center(*c)
                    .map(|f| (*c, band_mean(&p, bin_hz, f - 100.0, f + 100.0)))
            })
            .collect();
        windows.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let median = windows[windows.len() / 2].1;
        let best = windows.last().unwrap();
        if best.1 > 8.0 * median.max(1e-30) {
            best.0
        } else {
            SpeakerReprClass::Bonafide
        }
    }

    fn oracle_wg(x: &[f64], sr: f64) -> WaveformGenClass {
        let (bin_hz, p) = psd(x, sr);
        let band = band_mean(&p, bin_hz, WG_BAND_LOW_HZ, WG_BAND_HIGH_HZ);
        let reference = band_mean(&p, bin_hz, 200.0, 3400.0);
        if band < 0.02 * reference {
            return WaveformGenClass::Bonafide;
        }
        let flatness = band_flatness(&p, bin_hz, WG_BAND_LOW_HZ, WG_BAND_HIGH_HZ);
        if flatness > 0.2 {
            WaveformGenClass::Neural
        } else {
            WaveformGenClass::NonNeural
        }
    }

    #[test]
    fn generation_is_bit_identical() {
        let spec = small_spec();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.protocol_text, b.protocol_text);
        assert_eq!(a.utterances.len(), b.utterances.len());
        for (x, y) in a.utterances.iter().zip(&b.utterances) {
            assert_eq!(x.record, y.record);
            assert_eq!(x.wave.samples(), y.wave.samples());
        }
    }

    #[test]
    fn counts_match_the_plan() {
        let spec = SynthSpec {
            speakers: 2,
            utterances_per_attack: 3,
            bonafide_per_speaker: None,
            ..SynthSpec::default()
        };
        // 2 speakers x (19 attacks x 3 + 6 bona fide) = 126.
        assert_eq!(spec.total_utterances(), 126);
        let corpus = generate(&spec).unwrap();
        assert_eq!(corpus.utterances.len(), 126);
        assert_eq!(corpus.protocol_text.lines().count(), 126);
    }

    #[test]
    fn protocol_text_parses_verbatim() {
        let corpus = generate(&small_spec()).unwrap();
        let records = parse_protocol(&corpus.protocol_text, SourceSubset::Unknown).unwrap();
        assert_eq!(records.len(), corpus.utterances.len());
        for (r, u) in records.iter().zip(&corpus.utterances) {
            assert_eq!(r, &u.record);
        }
    }

    #[test]
    fn oracle_statistics_classify_every_attribute_perfectly() {
        let spec = small_spec();
        let corpus = generate(&spec).unwrap();
        let sr = spec.sample_rate as f64;
        for u in &corpus.utterances {
            let labels = crate::taxonomy::label_of(&u.record.attack).unwrap();
            let x = u.wave.samples();
            assert_eq!(oracle_conv(x, sr), labels.conversion, "utt {}", u.record.utt_id);
            assert_eq!(oracle_spk(x, sr), labels.speaker_repr, "utt {}", u.record.utt_id);
            assert_eq!(oracle_wg(x, sr), labels.waveform_gen, "utt {}", u.record.utt_id);
        }
    }

    #[test]
    fn shared_generator_class_means_same_texture_different_modulation() {
        // A02 and A06 share a non-neural generator but differ in conversion.
        let spec = small_spec();
        let corpus = generate(&spec).unwrap();
        let sr = spec.sample_rate as f64;
        let find = |needle: &str| {
            corpus
                .utterances
                .iter()
                .find(|u| u.record.utt_id.contains(needle))
                .unwrap()
        };
        let a02 = find("_A02_");
        let a06 = find("_A06_");
        let flat = |u: &SynthUtterance| {
            let (bin_hz, p) = psd(u.wave.samples(), sr);
            band_flatness(&p, bin_hz, WG_BAND_LOW_HZ, WG_BAND_HIGH_HZ)
        };
        let (f2, f6) = (flat(a02), flat(a06));
        let ratio = (f2 / f6).max(f6 / f2);
        assert!(ratio < 2.0, "flatness {f2} vs {f6}");
        let (r2, _) = modulation_peak(a02.wave.samples(), sr);
        let (r6, _) = modulation_peak(a06.wave.samples(), sr);
        assert!((r2 - 4.0).abs() < 1.5, "A02 modulation at {r2}");
        assert!((r6 - 19.0).abs() < 1.5, "A06 modulation at {r6}");
    }

    #[test]
    fn zero_strength_removes_the_signature() {
        let spec = SynthSpec {
            strength_conv: 0.0,
            ..small_spec()
        };
        let corpus = generate(&spec).unwrap();
        let sr = spec.sample_rate as f64;
        for u in corpus.utterances.iter().take(30) {
            let (_, index) = modulation_peak(u.wave.samples(), sr);
            assert!(index < 0.08, "utt {} index {index}", u.record.utt_id);
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        for spec in [
            SynthSpec { speakers: 0, ..SynthSpec::default() },
            SynthSpec { utterances_per_attack: 0, ..SynthSpec::default() },
            SynthSpec { duration_secs: 0.3, ..SynthSpec::default() },
            SynthSpec { strength_wg: 1.4, ..SynthSpec::default() },
            SynthSpec { sample_rate: 8000, ..SynthSpec::default() },
        ] {
            assert!(generate(&spec).is_err());
        }
    }

    #[test]
    fn corpus_writes_to_disk_with_matching_protocol() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            speakers: 1,
            utterances_per_attack: 1,
            bonafide_per_speaker: Some(1),
            duration_secs: 0.5,
            ..SynthSpec::default()
        };
        let n = generate_to_dir(&spec, dir.path()).unwrap();
        assert_eq!(n, 20);
        let text = std::fs::read_to_string(dir.path().join("protocol.txt")).unwrap();
        let records = parse_protocol(&text, SourceSubset::Unknown).unwrap();
        assert_eq!(records.len(), 20);
        for r in &records {
            assert!(dir.path().join("wav").join(format!("{}.wav", r.utt_id)).exists());
        }
    }
}
