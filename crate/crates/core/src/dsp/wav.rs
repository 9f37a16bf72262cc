//! Minimal RIFF/WAVE reader for 16-bit PCM mono files.

use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn u16_at(bytes: &[u8], at: usize) -> Result<u16> {
    bytes
        .get(at..at + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| Error::invalid("wav: truncated file"))
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::invalid("wav: truncated file"))
}

/// Integer samples are scaled by 1/32768, so the range is [-1, 1).
pub fn load_wav<F: Scalar>(path: &Path) -> Result<Waveform<F>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::invalid(format!(
            "{}: not a RIFF/WAVE file",
            path.display()
        )));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let chunk_id = &bytes[at..at + 4];
        let chunk_len = u32_at(&bytes, at + 4)? as usize;
        let body_start = at + 8;
        let body_end = (body_start + chunk_len).min(bytes.len());
        match chunk_id {
            b"fmt " => {
                if chunk_len < 16 {
                    return Err(Error::invalid("wav: fmt chunk too short"));
                }
                fmt = Some((
                    u16_at(&bytes, body_start)?,
                    u16_at(&bytes, body_start + 2)?,
                    u32_at(&bytes, body_start + 4)?,
                    u16_at(&bytes, body_start + 14)?,
                ));
            }
            b"data" => data = Some(&bytes[body_start..body_end]),
            _ => {}
        }
        // chunks are word-aligned
        at = body_start + chunk_len + (chunk_len & 1);
    }

    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| Error::invalid("wav: missing fmt chunk"))?;
    if format != 1 {
        return Err(Error::invalid(format!(
            "wav: unsupported format code {format}, expected PCM (1)"
        )));
    }
    if channels != 1 {
        return Err(Error::invalid(format!(
            "wav: expected mono, got {channels} channels"
        )));
    }
    if bits != 16 {
        return Err(Error::invalid(format!(
            "wav: expected 16-bit samples, got {bits}"
        )));
    }
    let data = data.ok_or_else(|| Error::invalid("wav: missing data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(Error::invalid("wav: odd data chunk length"));
    }

    let scale = F::of_f64(1.0 / 32768.0);
    let samples: Vec<F> = data
        .chunks_exact(2)
        .map(|c| F::of_f64(i16::from_le_bytes([c[0], c[1]]) as f64) * scale)
        .collect();
    Waveform::new(samples, sample_rate)
}

/// Serialize PCM16 mono samples as a WAV byte blob (testing and fixtures).
pub fn wav_bytes(samples: &[i16], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(name);
        fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn zero_pcm_decodes_to_zeros() {
        let path = write_temp("ttsflow_wav_zeros.wav", &wav_bytes(&[0; 1024], 22050));
        let w: Waveform<f64> = load_wav(&path).unwrap();
        assert_eq!(w.len(), 1024);
        assert_eq!(w.sample_rate, 22050);
        assert!(w.samples.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn scaling_is_over_32768() {
        let path = write_temp("ttsflow_wav_scale.wav", &wav_bytes(&[16384, -32768], 22050));
        let w: Waveform<f64> = load_wav(&path).unwrap();
        assert_eq!(w.samples[0], 0.5);
        assert_eq!(w.samples[1], -1.0);
    }

    #[test]
    fn rejects_stereo_and_wrong_depth() {
        // stereo: patch the channel count
        let mut stereo = wav_bytes(&[0; 4], 22050);
        stereo[22] = 2;
        let path = write_temp("ttsflow_wav_stereo.wav", &stereo);
        let err = load_wav::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("mono"), "{err}");

        let mut depth = wav_bytes(&[0; 4], 22050);
        depth[34] = 8;
        let path = write_temp("ttsflow_wav_depth.wav", &depth);
        let err = load_wav::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("16-bit"), "{err}");

        let mut fmt = wav_bytes(&[0; 4], 22050);
        fmt[20] = 3; // IEEE float
        let path = write_temp("ttsflow_wav_fmt.wav", &fmt);
        let err = load_wav::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("PCM"), "{err}");
    }
}
