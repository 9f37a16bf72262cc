//! Toy-scale training loop for the duration predictor: JSONL dataset
//! loading, batched negative-ELBO steps under AdamW, and checkpointing.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::serialize::{read_values, record_params, restore_params, write_values, ParamRecord};
use crate::rng::{seeded, SeedRng};
use crate::scalar::Scalar;
use crate::tensor::{AdamW, AdamWConfig, Tensor};

use super::{SdpConfig, StochasticDurationPredictor};

/// One training row: a duration per token and a `[T, cond_dim]` condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DurationExample {
    pub durations: Vec<usize>,
    pub condition: Vec<Vec<f64>>,
}

impl DurationExample {
    pub fn validate(&self) -> Result<()> {
        if self.durations.is_empty() {
            return Err(Error::invalid("example: empty durations"));
        }
        if self.durations.contains(&0) {
            return Err(Error::invalid("example: durations must be >= 1"));
        }
        if self.condition.len() != self.durations.len() {
            return Err(Error::invalid(format!(
                "example: {} duration entries but {} condition rows",
                self.durations.len(),
                self.condition.len()
            )));
        }
        let dim = self.condition[0].len();
        if dim == 0 || self.condition.iter().any(|row| row.len() != dim) {
            return Err(Error::invalid("example: ragged condition rows"));
        }
        Ok(())
    }

    pub fn cond_dim(&self) -> usize {
        self.condition[0].len()
    }

    pub fn condition_tensor<F: Scalar>(&self) -> Result<Tensor<F>> {
        let t_len = self.condition.len();
        let dim = self.cond_dim();
        let flat: Vec<F> = self
            .condition
            .iter()
            .flat_map(|row| row.iter().map(|v| F::of_f64(*v)))
            .collect();
        Tensor::new(flat, &[t_len, dim])
    }
}

/// Parse `{"durations": [...], "condition": [[...]]}` JSON lines; failures
/// carry the 1-based line number.
pub fn load_jsonl(path: &Path) -> Result<Vec<DurationExample>> {
    let file = fs::File::open(path)?;
    let mut examples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let example: DurationExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        example.validate().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        examples.push(example);
    }
    if examples.is_empty() {
        return Err(Error::invalid(format!("{}: no examples", path.display())));
    }
    Ok(examples)
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions<F: Scalar> {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optim: AdamWConfig<F>,
}

impl<F: Scalar> Default for TrainOptions<F> {
    fn default() -> Self {
        TrainOptions { steps: 500, batch_size: 8, seed: 0, optim: AdamWConfig::default() }
    }
}

/// Per-step loss trace.
pub type Metrics<F> = Vec<(u64, F)>;

/// Sequential passes over the dataset; the learning rate decays at each
/// epoch boundary (one full pass).
pub fn train<F: Scalar>(
    model: &StochasticDurationPredictor<F>,
    data: &[DurationExample],
    opts: &TrainOptions<F>,
) -> Result<(Metrics<F>, AdamW<F>)> {
    if data.is_empty() {
        return Err(Error::invalid("train: empty dataset"));
    }
    if opts.batch_size == 0 {
        return Err(Error::invalid("train: batch size must be >= 1"));
    }
    let conds: Vec<Tensor<F>> = data
        .iter()
        .map(|e| e.condition_tensor())
        .collect::<Result<_>>()?;

    let mut opt = AdamW::new(opts.optim);
    opt.register_all(model.parameters().iter().map(|(n, p)| (n.clone(), p)));
    let mut rng: SeedRng = seeded(opts.seed);
    let mut metrics = Vec::with_capacity(opts.steps);
    let mut cursor = 0usize;

    for step in 1..=opts.steps as u64 {
        let mut batch_loss: Option<Tensor<F>> = None;
        for _ in 0..opts.batch_size {
            let example = &data[cursor];
            let loss = model.duration_loss(&example.durations, &conds[cursor], &mut rng)?;
            batch_loss = Some(match batch_loss {
                None => loss,
                Some(acc) => acc.add(&loss)?,
            });
            cursor += 1;
            if cursor == data.len() {
                cursor = 0;
                opt.end_epoch();
            }
        }
        let loss = batch_loss
            .expect("batch_size >= 1")
            .mul_scalar(F::one() / F::of_usize(opts.batch_size))?;
        loss.backward()?;
        opt.step()?;
        opt.zero_grad();
        metrics.push((step, loss.item()));
    }
    Ok((metrics, opt))
}

// --- checkpoint format: JSON manifest + flat little-endian f64 values ---

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerManifest {
    step_count: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    lr_decay_per_epoch: f64,
    first_moments: Vec<ParamRecord>,
    second_moments: Vec<ParamRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConditionManifest {
    t_len: usize,
    dim: usize,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    config: SdpConfig,
    params: Vec<ParamRecord>,
    optimizer: Option<OptimizerManifest>,
    sample_condition: Option<ConditionManifest>,
    total_values: u64,
}

pub struct Checkpoint<F: Scalar> {
    pub model: StochasticDurationPredictor<F>,
    pub optimizer: Option<AdamW<F>>,
    pub sample_condition: Option<Tensor<F>>,
}

/// Write `<prefix>.json` and `<prefix>.bin`.
pub fn save_checkpoint<F: Scalar>(
    prefix: &Path,
    model: &StochasticDurationPredictor<F>,
    optimizer: Option<&AdamW<F>>,
    sample_condition: Option<&Tensor<F>>,
) -> Result<()> {
    let mut values: Vec<f64> = Vec::new();
    let params = model.parameters();
    let records = record_params(&params, &mut values);

    let optimizer = optimizer.map(|opt| {
        let mut firsts = Vec::new();
        let mut seconds = Vec::new();
        for (name, m, v) in opt.moments() {
            let offset = values.len() as u64;
            values.extend(m.iter().map(|x| x.as_f64()));
            firsts.push(ParamRecord { name: name.to_string(), shape: vec![m.len()], offset });
            let offset = values.len() as u64;
            values.extend(v.iter().map(|x| x.as_f64()));
            seconds.push(ParamRecord { name: name.to_string(), shape: vec![v.len()], offset });
        }
        let cfg = opt.config();
        OptimizerManifest {
            step_count: opt.step_count(),
            learning_rate: opt.learning_rate().as_f64(),
            beta1: cfg.beta1.as_f64(),
            beta2: cfg.beta2.as_f64(),
            eps: cfg.eps.as_f64(),
            weight_decay: cfg.weight_decay.as_f64(),
            lr_decay_per_epoch: cfg.lr_decay_per_epoch.as_f64(),
            first_moments: firsts,
            second_moments: seconds,
        }
    });

    let sample_condition = sample_condition.map(|cond| {
        let offset = values.len() as u64;
        values.extend(cond.values().into_iter().map(|v| v.as_f64()));
        ConditionManifest { t_len: cond.shape()[0], dim: cond.shape()[1], offset }
    });

    let manifest = CheckpointManifest {
        config: model.cfg,
        params: records,
        optimizer,
        sample_condition,
        total_values: values.len() as u64,
    };
    fs::write(
        prefix.with_extension("json"),
        serde_json::to_string_pretty(&manifest).expect("serializable"),
    )?;
    write_values(&prefix.with_extension("bin"), &values)
}

pub fn load_checkpoint<F: Scalar>(prefix: &Path) -> Result<Checkpoint<F>> {
    let manifest_path = prefix.with_extension("json");
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(&manifest_path)?)
            .map_err(|e| Error::invalid(format!("{}: {e}", manifest_path.display())))?;
    let values = read_values(&prefix.with_extension("bin"))?;
    if values.len() as u64 != manifest.total_values {
        return Err(Error::invalid(format!(
            "checkpoint: expected {} values, found {}",
            manifest.total_values,
            values.len()
        )));
    }

    // Architecture is rebuilt from the manifest config; every weight is then
    // overwritten from the value file, so the init seed is irrelevant.
    let model = StochasticDurationPredictor::new(manifest.config, &mut seeded(0))?;
    restore_params(&model.parameters(), &manifest.params, &values)?;

    let optimizer = match &manifest.optimizer {
        None => None,
        Some(om) => {
            let cfg = AdamWConfig {
                learning_rate: F::of_f64(om.learning_rate),
                beta1: F::of_f64(om.beta1),
                beta2: F::of_f64(om.beta2),
                eps: F::of_f64(om.eps),
                weight_decay: F::of_f64(om.weight_decay),
                lr_decay_per_epoch: F::of_f64(om.lr_decay_per_epoch),
            };
            let mut opt = AdamW::new(cfg);
            opt.register_all(model.parameters().iter().map(|(n, p)| (n.clone(), p)));
            let mut moments = Vec::new();
            for (fm, sm) in om.first_moments.iter().zip(&om.second_moments) {
                let take = |rec: &ParamRecord| -> Result<Vec<F>> {
                    let n = rec.shape.iter().product::<usize>();
                    let start = rec.offset as usize;
                    if start + n > values.len() {
                        return Err(Error::invalid("checkpoint: moment record overruns file"));
                    }
                    Ok(values[start..start + n].iter().map(|v| F::of_f64(*v)).collect())
                };
                moments.push((fm.name.clone(), take(fm)?, take(sm)?));
            }
            opt.restore(om.step_count, F::of_f64(om.learning_rate), &moments)?;
            Some(opt)
        }
    };

    let sample_condition = match &manifest.sample_condition {
        None => None,
        Some(cm) => {
            let n = cm.t_len * cm.dim;
            let start = cm.offset as usize;
            if start + n > values.len() {
                return Err(Error::invalid("checkpoint: condition record overruns file"));
            }
            Some(Tensor::new(
                values[start..start + n].iter().map(|v| F::of_f64(*v)).collect(),
                &[cm.t_len, cm.dim],
            )?)
        }
    };

    Ok(Checkpoint { model, optimizer, sample_condition })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn toy_data(n: usize, seed: u64) -> Vec<DurationExample> {
        use rand::Rng;
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| {
                let t_len = 6;
                DurationExample {
                    durations: (0..t_len).map(|_| rng.random_range(1..=4)).collect(),
                    condition: (0..t_len)
                        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .collect(),
                }
            })
            .collect()
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let dir = std::env::temp_dir().join("ttsflow_jsonl_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.jsonl");
        fs::write(
            &path,
            "{\"durations\":[1,2],\"condition\":[[0.1],[0.2]]}\n{\"durations\":[0],\"condition\":[[0.1]]}\n",
        )
        .unwrap();
        let err = load_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn training_runs_and_reports_metrics() {
        let cfg = SdpConfig { cond_dim: 3, hidden_dim: 8, ..Default::default() };
        let model = StochasticDurationPredictor::<f64>::new(cfg, &mut seeded(2)).unwrap();
        let data = toy_data(8, 3);
        let opts = TrainOptions { steps: 5, batch_size: 2, seed: 11, ..Default::default() };
        let (metrics, opt) = train(&model, &data, &opts).unwrap();
        assert_eq!(metrics.len(), 5);
        assert_eq!(opt.step_count(), 5);
        assert!(metrics.iter().all(|(_, l)| l.is_finite()));
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let data = toy_data(6, 5);
        let run = || {
            let cfg = SdpConfig { cond_dim: 3, hidden_dim: 8, ..Default::default() };
            let model = StochasticDurationPredictor::<f64>::new(cfg, &mut seeded(4)).unwrap();
            let opts = TrainOptions { steps: 4, batch_size: 2, seed: 7, ..Default::default() };
            train(&model, &data, &opts).unwrap().0
        };
        let a = run();
        let b = run();
        for ((s1, l1), (s2, l2)) in a.iter().zip(&b) {
            assert_eq!(s1, s2);
            assert_eq!(l1.to_bits(), l2.to_bits());
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_model_and_condition() {
        let cfg = SdpConfig { cond_dim: 3, hidden_dim: 8, ..Default::default() };
        let model = StochasticDurationPredictor::<f64>::new(cfg, &mut seeded(6)).unwrap();
        let cond = Tensor::randn(&mut seeded(8), &[5, 3]);
        let dir = std::env::temp_dir().join("ttsflow_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let prefix = dir.join("ckpt");
        save_checkpoint(&prefix, &model, None, Some(&cond)).unwrap();
        let loaded = load_checkpoint::<f64>(&prefix).unwrap();

        let d1 = model.sample_durations(&cond, 0.7, &mut seeded(9)).unwrap();
        let d2 = loaded
            .model
            .sample_durations(&loaded.sample_condition.unwrap(), 0.7, &mut seeded(9))
            .unwrap();
        assert_eq!(d1, d2);
    }
}
