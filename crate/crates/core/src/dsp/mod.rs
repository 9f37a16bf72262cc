//! Waveform ingestion and spectrogram computation: linear-magnitude STFT
//! and log-mel projection, with CSV and binary export.

mod io;
mod mel;
mod stft;
mod wav;

pub use io::{read_matrix_csv, write_matrix_csv};
pub use mel::{hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, MelConfig, MelNorm};
pub use stft::{dft_direct, stft_magnitude, StftConfig};
pub use wav::{load_wav, wav_bytes};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mono audio in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Waveform<F: Scalar> {
    pub samples: Vec<F>,
    pub sample_rate: u32,
}

impl<F: Scalar> Waveform<F> {
    pub fn new(samples: Vec<F>, sample_rate: u32) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite() || s.abs() > F::one()) {
            return Err(Error::invalid("waveform: samples must be finite and within [-1, 1]"));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrogramScale {
    Linear,
    Mel,
    LogMel,
}

impl SpectrogramScale {
    pub fn tag(self) -> u8 {
        match self {
            SpectrogramScale::Linear => 0,
            SpectrogramScale::Mel => 1,
            SpectrogramScale::LogMel => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(SpectrogramScale::Linear),
            1 => Ok(SpectrogramScale::Mel),
            2 => Ok(SpectrogramScale::LogMel),
            other => Err(Error::invalid(format!("unknown spectrogram scale tag {other}"))),
        }
    }
}

/// Time-frequency matrix, row-major `[frames, bins]`.
#[derive(Debug, Clone)]
pub struct Spectrogram<F: Scalar> {
    pub values: Vec<F>,
    pub frames: usize,
    pub bins: usize,
    pub scale: SpectrogramScale,
}

impl<F: Scalar> Spectrogram<F> {
    pub fn at(&self, frame: usize, bin: usize) -> F {
        self.values[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[F] {
        &self.values[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        io::write_rows_csv(w, &self.values, self.bins)
    }

    pub fn write_binary(&self, w: &mut impl std::io::Write) -> Result<()> {
        io::write_spec_binary(w, self)
    }

    pub fn read_binary(r: &mut impl std::io::Read) -> Result<Self> {
        io::read_spec_binary(r)
    }
}
