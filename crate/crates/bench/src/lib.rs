//! Shared fixtures for the pipeline benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sourcetrace_core::features::Waveform;
use sourcetrace_core::model::{
    ConvEncoderConfig, EncoderKind, Model, ModelInput, TrainConfig,
};

/// One second of a 220 Hz tone with mild noise at 16 kHz.
pub fn bench_waveform() -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<f64> = (0..16000)
        .map(|i| {
            let t = i as f64 / 16000.0;
            0.4 * (2.0 * std::f64::consts::PI * 220.0 * t).sin() + 0.002 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    Waveform::new(samples, 16000).expect("valid waveform")
}

/// Random score trials for EER benchmarks.
pub fn bench_trials(n: usize) -> Vec<(f64, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut trials: Vec<(f64, bool)> = (0..n).map(|_| (rng.gen(), rng.gen_bool(0.5))).collect();
    trials[0].1 = false;
    trials[1].1 = true;
    trials
}

/// Desk-scale convolutional model plus a batch of random feature inputs.
pub fn bench_model_and_batch(batch: usize) -> (Model, Vec<ModelInput>) {
    let cfg = TrainConfig {
        encoder: EncoderKind::ConvResidualFbank,
        conv_encoder: ConvEncoderConfig {
            channels: 24,
            blocks: 2,
            ..ConvEncoderConfig::default()
        },
        embedding_dim: 64,
        ..TrainConfig::default()
    };
    let model = Model::new(&cfg).expect("model");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = (0..batch)
        .map(|_| ModelInput::Fbank(Array2::from_shape_fn((80, 98), |_| rng.gen_range(-8.0..2.0))))
        .collect();
    (model, inputs)
}
