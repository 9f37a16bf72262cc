//! Spectrogram and matrix file formats: CSV (row per frame) and the binary
//! layout `"SPEC"`, u32 frames, u32 bins, u8 scale tag, little-endian f64
//! values row-major.

use std::io::{Read, Write};

use super::{Spectrogram, SpectrogramScale};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"SPEC";

pub(crate) fn write_rows_csv<F: Scalar>(
    w: &mut impl Write,
    values: &[F],
    cols: usize,
) -> Result<()> {
    for row in values.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{}", v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn write_matrix_csv<F: Scalar>(w: &mut impl Write, values: &[F], cols: usize) -> Result<()> {
    write_rows_csv(w, values, cols)
}

/// Parse a rectangular CSV of numbers; returns (values, rows, cols).
pub fn read_matrix_csv<F: Scalar>(r: &mut impl Read) -> Result<(Vec<F>, usize, usize)> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match cols {
            None => cols = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(Error::invalid(format!(
                    "csv line {}: expected {} columns, got {}",
                    lineno + 1,
                    c,
                    fields.len()
                )));
            }
            _ => {}
        }
        for field in fields {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::invalid(format!("csv line {}: bad number `{}`", lineno + 1, field))
            })?;
            values.push(F::of_f64(v));
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::invalid("csv: no data rows"))?;
    Ok((values, rows, cols))
}

pub(crate) fn write_spec_binary<F: Scalar>(w: &mut impl Write, s: &Spectrogram<F>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(s.frames as u32).to_le_bytes())?;
    w.write_all(&(s.bins as u32).to_le_bytes())?;
    w.write_all(&[s.scale.tag()])?;
    let mut buf = Vec::with_capacity(s.values.len() * 8);
    for v in &s.values {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_spec_binary<F: Scalar>(r: &mut impl Read) -> Result<Spectrogram<F>> {
    let mut header = [0u8; 13];
    r.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(Error::invalid("spectrogram: bad magic, expected SPEC"));
    }
    let frames = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let bins = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let scale = SpectrogramScale::from_tag(header[12])?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != frames * bins * 8 {
        return Err(Error::invalid(format!(
            "spectrogram: expected {} value bytes, found {}",
            frames * bins * 8,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| F::of_f64(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(Spectrogram { values, frames, bins, scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_roundtrip_preserves_everything() {
        let s = Spectrogram::<f64> {
            values: vec![0.0, 1.5, -2.25, 1e-300, 3.25, 7.0],
            frames: 3,
            bins: 2,
            scale: SpectrogramScale::LogMel,
        };
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        let back = Spectrogram::<f64>::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.frames, 3);
        assert_eq!(back.bins, 2);
        assert_eq!(back.scale, SpectrogramScale::LogMel);
        assert_eq!(back.values, s.values);
    }

    #[test]
    fn csv_roundtrip() {
        let values = vec![1.0, 2.5, -3.0, 0.125];
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &values, 2).unwrap();
        let (back, rows, cols) = read_matrix_csv::<f64>(&mut buf.as_slice()).unwrap();
        assert_eq!((rows, cols), (2, 2));
        assert_eq!(back, values);
    }

    #[test]
    fn ragged_csv_rejected() {
        let text = b"1,2,3\n4,5\n";
        let err = read_matrix_csv::<f64>(&mut text.as_slice()).unwrap_err();
        assert!(err.to_string().contains("columns"));
    }
}
