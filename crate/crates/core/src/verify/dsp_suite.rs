//! Spectrogram checks: bin-center sine peak, zero-signal log floor, output
//! shapes for the standard constants, and magnitude linearity.

use crate::dsp::{mel_spectrogram, stft_magnitude, MelConfig, StftConfig, Waveform};

use super::CheckResult;

/// A sine at bin center k peaks at bin k for every interior frame.
pub fn sine_peak_bin(_seed: u64) -> CheckResult {
    let cfg = StftConfig::<f64>::default();
    let k = 32usize;
    let samples: Vec<f64> = (0..22050)
        .map(|n| 0.8 * (std::f64::consts::TAU * k as f64 * n as f64 / cfg.fft_size as f64).sin())
        .collect();
    let w = Waveform::new(samples, 22050).unwrap();
    let s = stft_magnitude(&w, &cfg).unwrap();
    for frame in 3..s.frames - 3 {
        let row = s.frame(frame);
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if argmax != k {
            return CheckResult::new(
                "dsp/sine_peak_bin",
                false,
                format!("frame {frame}: peak at bin {argmax}, expected {k}"),
            );
        }
    }
    CheckResult::new("dsp/sine_peak_bin", true, format!("peak at bin {k} for all interior frames"))
}

/// Zero signal, epsilon-free magnitudes: every log-mel value is exactly
/// log(1e-5).
pub fn zero_signal_log_floor(_seed: u64) -> CheckResult {
    let stft_cfg = StftConfig::<f64> { magnitude_epsilon: 0.0, ..Default::default() };
    let mel_cfg = MelConfig::<f64>::default();
    let w = Waveform::new(vec![0.0; 22050], 22050).unwrap();
    let mel = mel_spectrogram(&w, &stft_cfg, &mel_cfg).unwrap();
    let floor = 1e-5f64.ln();
    let ok = mel.values.iter().all(|v| *v == floor);
    CheckResult::new(
        "dsp/zero_signal_log_floor",
        ok,
        format!("all {} values equal ln(1e-5) = {floor:.6}", mel.values.len()),
    )
}

/// 80 mel bins, 513 linear bins, and 1 + len/hop frames for the standard
/// constants.
pub fn output_shapes(_seed: u64) -> CheckResult {
    let stft_cfg = StftConfig::<f64>::default();
    let mel_cfg = MelConfig::<f64>::default();
    let w = Waveform::new(vec![0.25; 22050], 22050).unwrap();
    let linear = stft_magnitude(&w, &stft_cfg).unwrap();
    let mel = mel_spectrogram(&w, &stft_cfg, &mel_cfg).unwrap();
    let ok = linear.bins == 513 && mel.bins == 80 && linear.frames == 87 && mel.frames == 87;
    CheckResult::new(
        "dsp/output_shapes",
        ok,
        format!(
            "linear {}x{}, mel {}x{} (want 87x513 and 87x80)",
            linear.frames, linear.bins, mel.frames, mel.bins
        ),
    )
}

/// stft(alpha * w) == alpha * stft(w) elementwise with epsilon disabled.
pub fn magnitude_linearity(_seed: u64) -> CheckResult {
    let cfg = StftConfig::<f64> { magnitude_epsilon: 0.0, ..Default::default() };
    let base: Vec<f64> = (0..8192)
        .map(|i| 0.9 * (std::f64::consts::TAU * 313.0 * i as f64 / 22050.0).sin() * ((i % 97) as f64 / 97.0))
        .collect();
    let alpha = 0.43;
    let w1 = Waveform::new(base.clone(), 22050).unwrap();
    let w2 = Waveform::new(base.iter().map(|v| v * alpha).collect(), 22050).unwrap();
    let s1 = stft_magnitude(&w1, &cfg).unwrap();
    let s2 = stft_magnitude(&w2, &cfg).unwrap();
    let mut worst = 0.0f64;
    for (a, b) in s1.values.iter().zip(&s2.values) {
        worst = worst.max((a * alpha - b).abs());
    }
    CheckResult::new(
        "dsp/magnitude_linearity",
        worst < 1e-10,
        format!("max |alpha*stft(w) - stft(alpha*w)| = {worst:.2e} (tol 1e-10)"),
    )
}

pub fn run(seed: u64) -> Vec<CheckResult> {
    vec![
        sine_peak_bin(seed),
        zero_signal_log_floor(seed),
        output_shapes(seed),
        magnitude_linearity(seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dsp_suite_passes() {
        for r in run(0) {
            assert!(r.passed, "{r}");
        }
    }
}
