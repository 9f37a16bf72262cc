//! Triangular mel filterbank on the 2595 * log10(1 + f/700) scale and the
//! log-mel spectrogram built from it.

use super::{stft_magnitude, Spectrogram, SpectrogramScale, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn hz_to_mel<F: Scalar>(hz: F) -> F {
    F::of_f64(2595.0) * (F::one() + hz / F::of_f64(700.0)).log10()
}

pub fn mel_to_hz<F: Scalar>(mel: F) -> F {
    F::of_f64(700.0) * (F::of_f64(10.0).powf(mel / F::of_f64(2595.0)) - F::one())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MelNorm {
    /// Triangles peak at 1.
    None,
    /// Each triangle divided by half its base width (area normalization).
    Area,
}

#[derive(Debug, Clone, Copy)]
pub struct MelConfig<F: Scalar> {
    pub n_mels: usize,
    pub fmin: F,
    /// Defaults to the Nyquist frequency when absent.
    pub fmax: Option<F>,
    pub log_floor: F,
    pub norm: MelNorm,
}

impl<F: Scalar> Default for MelConfig<F> {
    fn default() -> Self {
        MelConfig {
            n_mels: 80,
            fmin: F::zero(),
            fmax: None,
            log_floor: F::of_f64(1e-5),
            norm: MelNorm::None,
        }
    }
}

/// Filter center frequencies in Hz: `n_mels + 2` points equally spaced on
/// the mel scale between `fmin` and `fmax`.
pub fn mel_points<F: Scalar>(cfg: &MelConfig<F>, sample_rate: u32) -> Result<Vec<F>> {
    let nyquist = F::of_f64(sample_rate as f64 / 2.0);
    let fmax = cfg.fmax.unwrap_or(nyquist);
    if cfg.fmin < F::zero() || cfg.fmin >= fmax || fmax > nyquist {
        return Err(Error::invalid(format!(
            "mel: need 0 <= fmin < fmax <= {}, got fmin={}, fmax={}",
            nyquist.as_f64(),
            cfg.fmin.as_f64(),
            fmax.as_f64()
        )));
    }
    if cfg.n_mels == 0 {
        return Err(Error::invalid("mel: n_mels must be positive"));
    }
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(fmax);
    let steps = F::of_usize(cfg.n_mels + 1);
    Ok((0..cfg.n_mels + 2)
        .map(|m| mel_to_hz(mel_lo + (mel_hi - mel_lo) * F::of_usize(m) / steps))
        .collect())
}

/// Row-major `[n_mels, fft_size/2 + 1]` filter matrix.
pub fn mel_filterbank<F: Scalar>(
    mel_cfg: &MelConfig<F>,
    stft_cfg: &StftConfig<F>,
    sample_rate: u32,
) -> Result<Vec<F>> {
    stft_cfg.validate()?;
    let points = mel_points(mel_cfg, sample_rate)?;
    let bins = stft_cfg.linear_bins();
    let bin_hz = F::of_f64(sample_rate as f64) / F::of_usize(stft_cfg.fft_size);

    let mut fb = vec![F::zero(); mel_cfg.n_mels * bins];
    for m in 0..mel_cfg.n_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        let norm = match mel_cfg.norm {
            MelNorm::None => F::one(),
            MelNorm::Area => F::of_f64(2.0) / (hi - lo),
        };
        for k in 0..bins {
            let f = bin_hz * F::of_usize(k);
            let rise = (f - lo) / (center - lo);
            let fall = (hi - f) / (hi - center);
            let w = rise.min(fall).max(F::zero());
            fb[m * bins + k] = w * norm;
        }
    }
    Ok(fb)
}

/// log(max(filterbank . magnitude, floor)) with the shared STFT config, so
/// composing `stft_magnitude` and the projection by hand reproduces it
/// bit-for-bit.
pub fn mel_spectrogram<F: Scalar>(
    w: &Waveform<F>,
    stft_cfg: &StftConfig<F>,
    mel_cfg: &MelConfig<F>,
) -> Result<Spectrogram<F>> {
    let linear = stft_magnitude(w, stft_cfg)?;
    project_to_log_mel(&linear, stft_cfg, mel_cfg, w.sample_rate)
}

/// Filterbank projection plus log-floor applied to an existing linear
/// magnitude spectrogram.
pub fn project_to_log_mel<F: Scalar>(
    linear: &Spectrogram<F>,
    stft_cfg: &StftConfig<F>,
    mel_cfg: &MelConfig<F>,
    sample_rate: u32,
) -> Result<Spectrogram<F>> {
    if linear.scale != SpectrogramScale::Linear {
        return Err(Error::invalid("mel: input spectrogram must be linear magnitude"));
    }
    let fb = mel_filterbank(mel_cfg, stft_cfg, sample_rate)?;
    let bins = linear.bins;
    let mut values = vec![F::zero(); linear.frames * mel_cfg.n_mels];
    for frame in 0..linear.frames {
        let row = linear.frame(frame);
        for m in 0..mel_cfg.n_mels {
            let mut acc = F::zero();
            for k in 0..bins {
                acc += fb[m * bins + k] * row[k];
            }
            values[frame * mel_cfg.n_mels + m] = acc.max(mel_cfg.log_floor).ln();
        }
    }
    Ok(Spectrogram {
        values,
        frames: linear.frames,
        bins: mel_cfg.n_mels,
        scale: SpectrogramScale::LogMel,
    })
}
