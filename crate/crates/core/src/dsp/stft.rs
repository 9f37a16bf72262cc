//! Short-time magnitude spectra. Frames are reflect-padded by half the FFT
//! size on both ends so the frame count is `1 + len/hop`, windowed with a
//! periodic Hann window, and transformed with a radix-2 FFT (direct DFT for
//! non-power-of-two sizes).

use super::{Spectrogram, SpectrogramScale, Waveform};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct StftConfig<F: Scalar> {
    pub fft_size: usize,
    pub window_size: usize,
    pub hop_size: usize,
    /// Added under the square root of the magnitude; settable to zero for
    /// exact-linearity checks.
    pub magnitude_epsilon: F,
}

impl<F: Scalar> Default for StftConfig<F> {
    fn default() -> Self {
        StftConfig {
            fft_size: 1024,
            window_size: 1024,
            hop_size: 256,
            magnitude_epsilon: F::of_f64(1e-9),
        }
    }
}

impl<F: Scalar> StftConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 || self.window_size == 0 || self.hop_size == 0 {
            return Err(Error::invalid("stft: sizes must be positive"));
        }
        if self.window_size > self.fft_size {
            return Err(Error::invalid(format!(
                "stft: window size {} exceeds FFT size {}",
                self.window_size, self.fft_size
            )));
        }
        if self.hop_size > self.window_size {
            return Err(Error::invalid(format!(
                "stft: hop size {} exceeds window size {}",
                self.hop_size, self.window_size
            )));
        }
        if self.magnitude_epsilon < F::zero() {
            return Err(Error::invalid("stft: magnitude epsilon must be >= 0"));
        }
        Ok(())
    }

    pub fn linear_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

/// Reflect index into `[0, n)` without repeating the edge sample.
fn reflect_index(v: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = v % period;
    if m < 0 {
        m += period;
    }
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn hann_periodic<F: Scalar>(n: usize) -> Vec<F> {
    let two_pi = std::f64::consts::TAU;
    (0..n)
        .map(|i| F::of_f64(0.5 - 0.5 * (two_pi * i as f64 / n as f64).cos()))
        .collect()
}

/// In-place iterative radix-2 FFT; `len` must be a power of two.
fn fft_pow2<F: Scalar>(re: &mut [F], im: &mut [F]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // bit reversal
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -std::f64::consts::TAU / len as f64;
        let (wr, wi) = (F::of_f64(ang.cos()), F::of_f64(ang.sin()));
        let mut i = 0;
        while i < n {
            let mut cr = F::one();
            let mut ci = F::zero();
            for k in 0..len / 2 {
                let (ur, ui) = (re[i + k], im[i + k]);
                let (vr, vi) = (re[i + k + len / 2], im[i + k + len / 2]);
                let tr = vr * cr - vi * ci;
                let ti = vr * ci + vi * cr;
                re[i + k] = ur + tr;
                im[i + k] = ui + ti;
                re[i + k + len / 2] = ur - tr;
                im[i + k + len / 2] = ui - ti;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Direct O(n^2) DFT. Doubles as the transform for non-power-of-two sizes
/// and as an independent oracle for the FFT path.
pub fn dft_direct<F: Scalar>(signal: &[F]) -> (Vec<F>, Vec<F>) {
    let n = signal.len();
    let mut re = vec![F::zero(); n];
    let mut im = vec![F::zero(); n];
    for (k, (rk, ik)) in re.iter_mut().zip(im.iter_mut()).enumerate() {
        let mut acc_r = F::zero();
        let mut acc_i = F::zero();
        for (t, &x) in signal.iter().enumerate() {
            let ang = -std::f64::consts::TAU * (k as f64) * (t as f64) / (n as f64);
            acc_r += x * F::of_f64(ang.cos());
            acc_i += x * F::of_f64(ang.sin());
        }
        *rk = acc_r;
        *ik = acc_i;
    }
    (re, im)
}

/// Magnitude spectrogram: `sqrt(re^2 + im^2 + eps)` per bin, `1 + len/hop`
/// frames, `fft_size/2 + 1` bins.
pub fn stft_magnitude<F: Scalar>(w: &Waveform<F>, cfg: &StftConfig<F>) -> Result<Spectrogram<F>> {
    cfg.validate()?;
    if w.is_empty() {
        return Err(Error::invalid("stft: empty waveform"));
    }
    let n = w.len();
    let pad = cfg.fft_size / 2;
    let frames = 1 + n / cfg.hop_size;
    let bins = cfg.linear_bins();
    let window = hann_periodic::<F>(cfg.window_size);
    let offset = (cfg.fft_size - cfg.window_size) / 2;

    let mut values = vec![F::zero(); frames * bins];
    let mut re = vec![F::zero(); cfg.fft_size];
    let mut im = vec![F::zero(); cfg.fft_size];
    for frame in 0..frames {
        let start = frame * cfg.hop_size;
        re.iter_mut().for_each(|v| *v = F::zero());
        im.iter_mut().for_each(|v| *v = F::zero());
        for (i, &win) in window.iter().enumerate() {
            let src = start + offset + i;
            let idx = reflect_index(src as isize - pad as isize, n);
            re[offset + i] = w.samples[idx] * win;
        }
        if cfg.fft_size.is_power_of_two() {
            fft_pow2(&mut re, &mut im);
        } else {
            let (r, i) = dft_direct(&re);
            re = r;
            im = i;
        }
        for bin in 0..bins {
            values[frame * bins + bin] =
                (re[bin] * re[bin] + im[bin] * im[bin] + cfg.magnitude_epsilon).sqrt();
        }
    }
    Ok(Spectrogram { values, frames, bins, scale: SpectrogramScale::Linear })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> StftConfig<f64> {
        StftConfig::default()
    }

    #[test]
    fn frame_count_is_one_plus_len_over_hop() {
        let w = Waveform::new(vec![0.0; 22050], 22050).unwrap();
        let s = stft_magnitude(&w, &cfg()).unwrap();
        assert_eq!(s.frames, 87);
        assert_eq!(s.bins, 513);
    }

    #[test]
    fn zero_signal_is_zero_up_to_epsilon() {
        let w = Waveform::new(vec![0.0; 2048], 22050).unwrap();
        let s = stft_magnitude(&w, &cfg()).unwrap();
        let eps_mag = 1e-9f64.sqrt();
        assert!(s.values.iter().all(|v| (*v - eps_mag).abs() < 1e-12));
    }

    #[test]
    fn empty_waveform_rejected() {
        let w = Waveform::<f64>::new(vec![], 22050).unwrap();
        assert!(stft_magnitude(&w, &cfg()).is_err());
    }

    #[test]
    fn sine_at_bin_center_peaks_at_that_bin() {
        let k = 32.0;
        let samples: Vec<f64> = (0..22050)
            .map(|n| 0.8 * (std::f64::consts::TAU * k * n as f64 / 1024.0).sin())
            .collect();
        let w = Waveform::new(samples, 22050).unwrap();
        let s = stft_magnitude(&w, &cfg()).unwrap();
        // interior frames only; edge frames see reflected padding
        for frame in 3..s.frames - 3 {
            let row = s.frame(frame);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, 32, "frame {frame}");
        }
    }

    #[test]
    fn fft_matches_direct_dft() {
        let signal: Vec<f64> = (0..64).map(|i| ((i * 37 + 11) % 23) as f64 / 23.0 - 0.5).collect();
        let (dr, di) = dft_direct(&signal);
        let mut re = signal.clone();
        let mut im = vec![0.0; 64];
        fft_pow2(&mut re, &mut im);
        for i in 0..64 {
            assert!((re[i] - dr[i]).abs() < 1e-10, "re[{i}]");
            assert!((im[i] - di[i]).abs() < 1e-10, "im[{i}]");
        }
    }

    #[test]
    fn magnitude_scales_linearly_without_epsilon() {
        let mut c = cfg();
        c.magnitude_epsilon = 0.0;
        let base: Vec<f64> = (0..4096).map(|i| ((i % 61) as f64 / 61.0 - 0.5) * 0.9).collect();
        let alpha = 0.37;
        let w1 = Waveform::new(base.clone(), 22050).unwrap();
        let w2 = Waveform::new(base.iter().map(|v| v * alpha).collect(), 22050).unwrap();
        let s1 = stft_magnitude(&w1, &c).unwrap();
        let s2 = stft_magnitude(&w2, &c).unwrap();
        for (a, b) in s1.values.iter().zip(&s2.values) {
            assert!((a * alpha - b).abs() < 1e-10);
        }
    }

    #[test]
    fn windowed_frame_energy_matches_direct_dft() {
        // Parseval on one frame: sum |X_k|^2 == n * sum x_t^2
        let n = 1024usize;
        let signal: Vec<f64> = (0..n).map(|i| ((i * 13 + 5) % 97) as f64 / 97.0 - 0.5).collect();
        let (re, im) = dft_direct(&signal);
        let freq_energy: f64 = re.iter().zip(&im).map(|(r, i)| r * r + i * i).sum();
        let time_energy: f64 = signal.iter().map(|v| v * v).sum();
        let rel = (freq_energy - n as f64 * time_energy).abs() / (n as f64 * time_energy);
        assert!(rel < 1e-6);
    }

    #[test]
    fn reflect_padding_bounces() {
        // n = 4: virtual indices ...-2,-1 | 0 1 2 3 | 4 5...
        assert_eq!(reflect_index(-1, 4), 1);
        assert_eq!(reflect_index(-2, 4), 2);
        assert_eq!(reflect_index(4, 4), 2);
        assert_eq!(reflect_index(5, 4), 1);
        assert_eq!(reflect_index(0, 1), 0);
        assert_eq!(reflect_index(-3, 1), 0);
    }
}
