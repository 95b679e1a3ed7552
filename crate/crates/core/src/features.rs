//! Waveform front end: fixed-length cropping/tiling, 80-dim log mel
//! filterbank extraction, and 16-bit PCM mono WAV I/O.

use std::path::Path;

use ndarray::{Array1, Array2};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("waveform is empty")]
    EmptyWaveform,
    #[error("waveform contains non-finite or out-of-range samples")]
    BadSamples,
    #[error("sample rate mismatch: config expects {expected} Hz, waveform is {got} Hz")]
    SampleRateMismatch { expected: u32, got: u32 },
    #[error("signal too short: {got} samples, need at least {min}")]
    TooShort { min: usize, got: usize },
    #[error("target length must be >= 1")]
    BadTargetLength,
    #[error("wav `{path}`: expected 16-bit PCM mono, found {found}")]
    UnsupportedWav { path: String, found: String },
    #[error("wav `{path}`: {source}")]
    Wav {
        path: String,
        #[source]
        source: hound::Error,
    },
}

/// Mono waveform with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Waveform, FeatureError> {
        if samples.is_empty() {
            return Err(FeatureError::EmptyWaveform);
        }
        if samples.iter().any(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(FeatureError::BadSamples);
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Log mel filterbank configuration. Defaults: 25 ms Hann window, 10 ms hop,
/// 512-point FFT, 80 triangular mel filters spanning 0..Nyquist, natural log
/// with a 1e-10 energy floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbankConfig {
    pub sample_rate: u32,
    pub win_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    /// Upper filter edge; `None` means Nyquist.
    pub fmax_hz: Option<f64>,
    pub floor: f64,
    /// Per-utterance mean/variance normalization over frames, per mel channel.
    pub mean_var_norm: bool,
}

impl Default for FbankConfig {
    fn default() -> Self {
        FbankConfig {
            sample_rate: 16000,
            win_len: 400,
            hop: 160,
            n_fft: 512,
            n_mels: 80,
            fmin_hz: 0.0,
            fmax_hz: None,
            floor: 1e-10,
            mean_var_norm: false,
        }
    }
}

impl FbankConfig {
    pub fn fmax(&self) -> f64 {
        self.fmax_hz.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    /// Frames produced for a signal of `n` samples: 1 + floor((n - win)/hop).
    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.win_len {
            0
        } else {
            1 + (n - self.win_len) / self.hop
        }
    }

    /// Stable hash over the config fields, for cache keys and checkpoints.
    pub fn digest(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.sample_rate.hash(&mut h);
        self.win_len.hash(&mut h);
        self.hop.hash(&mut h);
        self.n_fft.hash(&mut h);
        self.n_mels.hash(&mut h);
        self.fmin_hz.to_bits().hash(&mut h);
        self.fmax().to_bits().hash(&mut h);
        self.floor.to_bits().hash(&mut h);
        self.mean_var_norm.hash(&mut h);
        h.finish()
    }
}

/// T x n_mels matrix of log mel filterbank energies.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Array2<f64>,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_mels(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank evaluated at the FFT bin center frequencies.
/// Rows are filters, columns are the n_fft/2 + 1 non-negative bins.
pub fn mel_filterbank(cfg: &FbankConfig) -> Array2<f64> {
    let n_bins = cfg.n_fft / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin_hz);
    let mel_hi = hz_to_mel(cfg.fmax());
    let n_points = cfg.n_mels + 2;
    let edges_hz: Vec<f64> = (0..n_points)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_points - 1) as f64))
        .collect();
    let bin_hz = |b: usize| b as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;

    let mut fb = Array2::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        for b in 0..n_bins {
            let f = bin_hz(b);
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= center {
                (f - lo) / (center - lo)
            } else {
                (hi - f) / (hi - center)
            };
            if w > 0.0 {
                fb[(m, b)] = w;
            }
        }
    }
    fb
}

fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}

/// Extract the log mel filterbank matrix: STFT power -> mel filterbank ->
/// floored natural log.
pub fn logfbank(wave: &Waveform, cfg: &FbankConfig) -> Result<FeatureMatrix, FeatureError> {
    if wave.sample_rate() != cfg.sample_rate {
        return Err(FeatureError::SampleRateMismatch {
            expected: cfg.sample_rate,
            got: wave.sample_rate(),
        });
    }
    let n = wave.len();
    if n < cfg.win_len {
        return Err(FeatureError::TooShort {
            min: cfg.win_len,
            got: n,
        });
    }
    let n_frames = cfg.frame_count(n);
    let n_bins = cfg.n_fft / 2 + 1;
    let window = hann_window(cfg.win_len);
    let fb = mel_filterbank(cfg);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut power = Array1::zeros(n_bins);
    let mut frames = Array2::zeros((n_frames, cfg.n_mels));

    for t in 0..n_frames {
        let start = t * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < cfg.win_len {
                Complex::new(wave.samples[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for b in 0..n_bins {
            power[b] = buf[b].norm_sqr();
        }
        for m in 0..cfg.n_mels {
            let mut e = 0.0;
            for b in 0..n_bins {
                e += fb[(m, b)] * power[b];
            }
            frames[(t, m)] = e.max(cfg.floor).ln();
        }
    }

    if cfg.mean_var_norm {
        for m in 0..cfg.n_mels {
            let mut col = frames.column_mut(m);
            let mean = col.sum() / n_frames as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_frames as f64;
            let std = (var + 1e-12).sqrt();
            col.mapv_inplace(|v| (v - mean) / std);
        }
    }

    Ok(FeatureMatrix { frames })
}

/// Crop or tile a waveform to exactly `target_samples`: longer inputs are
/// truncated, shorter ones self-concatenated then truncated.
pub fn fix_length(wave: &Waveform, target_samples: usize) -> Result<Waveform, FeatureError> {
    if target_samples == 0 {
        return Err(FeatureError::BadTargetLength);
    }
    if wave.is_empty() {
        return Err(FeatureError::EmptyWaveform);
    }
    let n = wave.len();
    let samples = if n >= target_samples {
        wave.samples[..target_samples].to_vec()
    } else {
        let mut out = Vec::with_capacity(target_samples);
        while out.len() < target_samples {
            let take = (target_samples - out.len()).min(n);
            out.extend_from_slice(&wave.samples[..take]);
        }
        out
    };
    Waveform::new(samples, wave.sample_rate)
}

/// Read a 16-bit PCM mono WAV into a normalized waveform.
pub fn read_wav(path: &Path) -> Result<Waveform, FeatureError> {
    let display = path.display().to_string();
    let mut reader = hound::WavReader::open(path).map_err(|source| FeatureError::Wav {
        path: display.clone(),
        source,
    })?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(FeatureError::UnsupportedWav {
            path: display,
            found: format!(
                "{} ch / {} bit / {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    let samples: Result<Vec<i16>, _> = reader.samples::<i16>().collect();
    let samples = samples.map_err(|source| FeatureError::Wav {
        path: display,
        source,
    })?;
    Waveform::new(
        samples.iter().map(|&s| s as f64 / 32768.0).collect(),
        spec.sample_rate,
    )
}

fn quantize_i16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Write a waveform as 16-bit PCM mono WAV.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<(), FeatureError> {
    let display = path.display().to_string();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |source: hound::Error| FeatureError::Wav {
        path: display.clone(),
        source,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in wave.samples() {
        writer.write_sample(quantize_i16(s)).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, secs: f64, rate: u32, amp: f64) -> Waveform {
        let n = (secs * rate as f64) as usize;
        let samples: Vec<f64> = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let wave = Waveform::new(vec![0.0; 16000], 16000).unwrap();
        let cfg = FbankConfig::default();
        let feats = logfbank(&wave, &cfg).unwrap();
        let expected = cfg.floor.ln();
        for v in feats.frames.iter() {
            assert_eq!(*v, expected);
        }
    }

    #[test]
    fn one_second_at_16k_gives_98_frames() {
        let wave = Waveform::new(vec![0.0; 16000], 16000).unwrap();
        let cfg = FbankConfig::default();
        assert_eq!(cfg.frame_count(16000), 98);
        let feats = logfbank(&wave, &cfg).unwrap();
        assert_eq!(feats.num_frames(), 98);
        assert_eq!(feats.num_mels(), 80);
    }

    #[test]
    fn pure_tone_peaks_in_the_analytically_expected_mel_bin() {
        let cfg = FbankConfig::default();
        // Independent expectation: evaluate the triangular filter weights at
        // exactly 1 kHz from the mel edge formula and take the argmax.
        let mel_lo = hz_to_mel(cfg.fmin_hz);
        let mel_hi = hz_to_mel(cfg.fmax());
        let n_points = cfg.n_mels + 2;
        let edge = |i: usize| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_points - 1) as f64);
        let mut expected_bin = 0;
        let mut best = -1.0;
        for m in 0..cfg.n_mels {
            let (lo, c, hi) = (edge(m), edge(m + 1), edge(m + 2));
            let f = 1000.0;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= c {
                (f - lo) / (c - lo)
            } else {
                (hi - f) / (hi - c)
            };
            if w > best {
                best = w;
                expected_bin = m;
            }
        }
        assert!(best > 0.0);

        let wave = tone(1000.0, 1.0, 16000, 0.5);
        let feats = logfbank(&wave, &cfg).unwrap();
        for t in 0..feats.num_frames() {
            let row = feats.frames.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, expected_bin, "frame {t}");
        }
    }

    #[test]
    fn too_short_signal_is_rejected() {
        let wave = Waveform::new(vec![0.1; 100], 16000).unwrap();
        assert!(matches!(
            logfbank(&wave, &FbankConfig::default()),
            Err(FeatureError::TooShort { min: 400, got: 100 })
        ));
    }

    #[test]
    fn sample_rate_mismatch_is_rejected() {
        let wave = Waveform::new(vec![0.1; 8000], 8000).unwrap();
        assert!(matches!(
            logfbank(&wave, &FbankConfig::default()),
            Err(FeatureError::SampleRateMismatch { expected: 16000, got: 8000 })
        ));
    }

    #[test]
    fn fix_length_truncates() {
        let w = Waveform::new(vec![0.1, 0.2, 0.3, 0.4, 0.5], 16000).unwrap();
        let out = fix_length(&w, 3).unwrap();
        assert_eq!(out.samples(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn fix_length_tiles() {
        let w = Waveform::new(vec![0.1, 0.2], 16000).unwrap();
        let out = fix_length(&w, 5).unwrap();
        assert_eq!(out.samples(), &[0.1, 0.2, 0.1, 0.2, 0.1]);
    }

    #[test]
    fn fix_length_is_identity_at_target() {
        let w = Waveform::new(vec![0.1, 0.2, 0.3], 16000).unwrap();
        assert_eq!(fix_length(&w, 3).unwrap(), w);
        // Idempotence.
        let once = fix_length(&w, 7).unwrap();
        assert_eq!(fix_length(&once, 7).unwrap(), once);
    }

    #[test]
    fn fix_length_rejects_zero_target() {
        let w = Waveform::new(vec![0.1], 16000).unwrap();
        assert!(matches!(fix_length(&w, 0), Err(FeatureError::BadTargetLength)));
    }

    #[test]
    fn trailing_silence_appends_frames_without_touching_existing_ones() {
        let cfg = FbankConfig::default();
        let base = tone(440.0, 0.5, 16000, 0.4);
        let feats = logfbank(&base, &cfg).unwrap();
        for k in 1..=3usize {
            let mut samples = base.samples().to_vec();
            samples.extend(std::iter::repeat_n(0.0, cfg.hop * k));
            let longer = Waveform::new(samples, 16000).unwrap();
            let feats2 = logfbank(&longer, &cfg).unwrap();
            assert_eq!(feats2.num_frames(), feats.num_frames() + k);
            for t in 0..feats.num_frames() {
                for m in 0..cfg.n_mels {
                    assert_eq!(feats.frames[(t, m)], feats2.frames[(t, m)], "frame {t} mel {m}");
                }
            }
        }
    }

    #[test]
    fn amplitude_scaling_shifts_log_energies_by_log_c_squared() {
        let cfg = FbankConfig::default();
        let c = 2.0;
        let quiet = tone(1000.0, 0.5, 16000, 0.25);
        let loud = tone(1000.0, 0.5, 16000, 0.25 * c);
        let f_quiet = logfbank(&quiet, &cfg).unwrap();
        let f_loud = logfbank(&loud, &cfg).unwrap();
        let shift = (c * c).ln();
        let floor = cfg.floor.ln();
        let mut checked = 0;
        for (a, b) in f_quiet.frames.iter().zip(f_loud.frames.iter()) {
            // Only entries clear of the floor in both obey the exact shift.
            if *a > floor + shift && *b > floor + shift {
                assert!((b - a - shift).abs() < 1e-9, "{a} vs {b}");
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn mean_var_norm_centers_each_channel() {
        let cfg = FbankConfig { mean_var_norm: true, ..FbankConfig::default() };
        let wave = tone(700.0, 1.0, 16000, 0.5);
        let feats = logfbank(&wave, &cfg).unwrap();
        // Near-constant channels trade precision for the variance floor, so
        // the residual mean is only ~1e-7 there.
        for m in 0..cfg.n_mels {
            let col = feats.frames.column(m);
            let mean = col.sum() / col.len() as f64;
            assert!(mean.abs() < 1e-6, "mel {m}: mean {mean}");
        }
    }

    #[test]
    fn wav_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let wave = tone(523.0, 0.25, 16000, 0.6);
        write_wav(&path, &wave).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 16000);
        assert_eq!(back.len(), wave.len());
        for (a, b) in wave.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn waveform_rejects_bad_samples() {
        assert!(Waveform::new(vec![], 16000).is_err());
        assert!(Waveform::new(vec![f64::NAN], 16000).is_err());
        assert!(Waveform::new(vec![1.5], 16000).is_err());
    }
}
