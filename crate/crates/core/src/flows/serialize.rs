//! Flow parameter serialization: a JSON manifest describing layer types and
//! hyperparameters next to a flat file of little-endian 64-bit floats.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{AffineCoupling, FlowLayer, FlowStack, SplineCoupling};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Affine {
        channels: usize,
        hidden: usize,
        depth: usize,
        kernel: usize,
        flip: bool,
    },
    Spline {
        channels: usize,
        hidden: usize,
        kernel: usize,
        bins: usize,
        bound: f64,
        min_bin: f64,
        flip: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackManifest {
    pub layers: Vec<LayerSpec>,
    pub params: Vec<ParamRecord>,
    pub total_values: u64,
}

pub fn layer_spec<F: Scalar>(layer: &FlowLayer<F>) -> LayerSpec {
    match layer {
        FlowLayer::Affine(l) => LayerSpec::Affine {
            channels: l.channels,
            hidden: l.hidden,
            depth: l.depth,
            kernel: l.kernel,
            flip: l.flip,
        },
        FlowLayer::Spline(l) => LayerSpec::Spline {
            channels: l.channels,
            hidden: l.hidden,
            kernel: l.kernel,
            bins: l.bins,
            bound: l.bound.as_f64(),
            min_bin: l.min_bin.as_f64(),
            flip: l.flip,
        },
    }
}

pub fn build_layer<F: Scalar>(spec: &LayerSpec, seed: u64) -> Result<FlowLayer<F>> {
    let mut rng = seeded(seed);
    match *spec {
        LayerSpec::Affine { channels, hidden, depth, kernel, flip } => Ok(FlowLayer::Affine(
            AffineCoupling::new(&mut rng, channels, hidden, depth, kernel, flip)?,
        )),
        LayerSpec::Spline { channels, hidden, kernel, bins, bound, min_bin, flip } => {
            Ok(FlowLayer::Spline(SplineCoupling::new(
                &mut rng,
                channels,
                hidden,
                kernel,
                bins,
                F::of_f64(bound),
                F::of_f64(min_bin),
                flip,
            )?))
        }
    }
}

/// Append named tensors to a flat value buffer, returning their records.
pub fn record_params<F: Scalar>(
    params: &[(String, Tensor<F>)],
    values: &mut Vec<f64>,
) -> Vec<ParamRecord> {
    params
        .iter()
        .map(|(name, t)| {
            let offset = values.len() as u64;
            values.extend(t.values().into_iter().map(|v| v.as_f64()));
            ParamRecord { name: name.clone(), shape: t.shape().to_vec(), offset }
        })
        .collect()
}

/// Restore named tensors from a flat value buffer.
pub fn restore_params<F: Scalar>(
    params: &[(String, Tensor<F>)],
    records: &[ParamRecord],
    values: &[f64],
) -> Result<()> {
    if params.len() != records.len() {
        return Err(Error::invalid(format!(
            "parameter count mismatch: model has {}, manifest has {}",
            params.len(),
            records.len()
        )));
    }
    for ((name, tensor), rec) in params.iter().zip(records) {
        if name != &rec.name || tensor.shape() != rec.shape.as_slice() {
            return Err(Error::invalid(format!(
                "parameter mismatch: model `{name}` {:?} vs manifest `{}` {:?}",
                tensor.shape(),
                rec.name,
                rec.shape
            )));
        }
        let n = tensor.numel();
        let start = rec.offset as usize;
        if start + n > values.len() {
            return Err(Error::invalid(format!("parameter `{name}` overruns value file")));
        }
        tensor.set_data(values[start..start + n].iter().map(|v| F::of_f64(*v)).collect())?;
    }
    Ok(())
}

pub fn write_values(path: &Path, values: &[f64]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_values(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::invalid(format!(
            "{}: length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save_stack<F: Scalar>(stack: &FlowStack<F>, manifest_path: &Path, values_path: &Path) -> Result<()> {
    let mut values = Vec::new();
    let params = stack.parameters();
    let records = record_params(&params, &mut values);
    let manifest = StackManifest {
        layers: stack.layers.iter().map(layer_spec).collect(),
        params: records,
        total_values: values.len() as u64,
    };
    fs::write(manifest_path, serde_json::to_string_pretty(&manifest).expect("serializable"))?;
    write_values(values_path, &values)
}

pub fn load_stack<F: Scalar>(manifest_path: &Path, values_path: &Path) -> Result<FlowStack<F>> {
    let manifest: StackManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)
        .map_err(|e| Error::invalid(format!("{}: {e}", manifest_path.display())))?;
    let values = read_values(values_path)?;
    if values.len() as u64 != manifest.total_values {
        return Err(Error::invalid(format!(
            "{}: expected {} values, found {}",
            values_path.display(),
            manifest.total_values,
            values.len()
        )));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for spec in &manifest.layers {
        layers.push(build_layer::<F>(spec, 0)?);
    }
    let stack = FlowStack { layers };
    restore_params(&stack.parameters(), &manifest.params, &values)?;
    Ok(stack)
}
