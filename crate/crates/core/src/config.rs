//! Plain-text configuration: one `section.key = value` per line, `#`
//! comments. Unknown keys are rejected and every value is type-checked at
//! load time. Defaults encode the standard training and DSP constants.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::dsp::{MelConfig, MelNorm, StftConfig};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::sdp::SdpConfig;
use crate::tensor::AdamWConfig;

#[derive(Debug, Clone)]
pub struct Config {
    pub stft: StftConfig<f64>,
    pub mel: MelConfig<f64>,
    pub sdp: SdpConfig,
    pub optim: AdamWConfig<f64>,
    pub loss_weights: LossWeights<f64>,
    pub recon_sum_reduction: bool,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            stft: StftConfig::default(),
            mel: MelConfig::default(),
            sdp: SdpConfig::default(),
            optim: AdamWConfig::default(),
            loss_weights: LossWeights::default(),
            recon_sum_reduction: false,
            seed: 0,
            batch_size: 8,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::invalid(format!(
            "config: bad value `{value}` for `{key}` (expected {})",
            std::any::type_name::<T>()
        ))
    })
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::invalid(format!(
                    "config line {}: expected `section.key = value`, got `{raw}`",
                    idx + 1
                )));
            };
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }

        let mut cfg = Config::default();
        for (key, value) in entries {
            cfg.apply(&key, &value)?;
        }
        cfg.sdp.validate()?;
        cfg.stft.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "stft.fft_size" => self.stft.fft_size = parse_value(key, value)?,
            "stft.window_size" => self.stft.window_size = parse_value(key, value)?,
            "stft.hop_size" => self.stft.hop_size = parse_value(key, value)?,
            "stft.magnitude_epsilon" => self.stft.magnitude_epsilon = parse_value(key, value)?,
            "mel.n_mels" => self.mel.n_mels = parse_value(key, value)?,
            "mel.fmin" => self.mel.fmin = parse_value(key, value)?,
            "mel.fmax" => self.mel.fmax = Some(parse_value(key, value)?),
            "mel.log_floor" => self.mel.log_floor = parse_value(key, value)?,
            "mel.normalization" => {
                self.mel.norm = match value {
                    "none" => MelNorm::None,
                    "area" => MelNorm::Area,
                    other => {
                        return Err(Error::invalid(format!(
                            "config: mel.normalization must be `none` or `area`, got `{other}`"
                        )))
                    }
                }
            }
            "sdp.cond_dim" => self.sdp.cond_dim = parse_value(key, value)?,
            "sdp.hidden_dim" => self.sdp.hidden_dim = parse_value(key, value)?,
            "sdp.n_coupling_layers" => self.sdp.n_coupling_layers = parse_value(key, value)?,
            "sdp.spline_bins" => self.sdp.spline_bins = parse_value(key, value)?,
            "sdp.kernel_size" => self.sdp.kernel_size = parse_value(key, value)?,
            "sdp.noise_scale" => self.sdp.noise_scale = parse_value(key, value)?,
            "flow.tail_bound" => self.sdp.tail_bound = parse_value(key, value)?,
            "flow.min_bin_size" => self.sdp.min_bin_size = parse_value(key, value)?,
            "optim.learning_rate" => self.optim.learning_rate = parse_value(key, value)?,
            "optim.beta1" => self.optim.beta1 = parse_value(key, value)?,
            "optim.beta2" => self.optim.beta2 = parse_value(key, value)?,
            "optim.eps" => self.optim.eps = parse_value(key, value)?,
            "optim.weight_decay" => self.optim.weight_decay = parse_value(key, value)?,
            "optim.lr_decay_per_epoch" => self.optim.lr_decay_per_epoch = parse_value(key, value)?,
            "loss.weight_recon" => self.loss_weights.recon = parse_value(key, value)?,
            "loss.weight_kl" => self.loss_weights.kl = parse_value(key, value)?,
            "loss.weight_duration" => self.loss_weights.duration = parse_value(key, value)?,
            "loss.weight_adv_g" => self.loss_weights.adv_g = parse_value(key, value)?,
            "loss.weight_fm" => self.loss_weights.fm = parse_value(key, value)?,
            "loss.recon_sum_reduction" => self.recon_sum_reduction = parse_value(key, value)?,
            "train.seed" => self.seed = parse_value(key, value)?,
            "train.batch_size" => self.batch_size = parse_value(key, value)?,
            other => {
                return Err(Error::invalid(format!("config: unknown key `{other}`")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_constants() {
        let cfg = Config::default();
        assert_eq!(cfg.stft.fft_size, 1024);
        assert_eq!(cfg.stft.window_size, 1024);
        assert_eq!(cfg.stft.hop_size, 256);
        assert_eq!(cfg.mel.n_mels, 80);
        assert_eq!(cfg.sdp.n_coupling_layers, 4);
        assert_eq!(cfg.sdp.spline_bins, 10);
        assert_eq!(cfg.sdp.noise_scale, 0.8);
        assert_eq!(cfg.optim.learning_rate, 2e-4);
        assert_eq!(cfg.optim.beta1, 0.8);
        assert_eq!(cfg.optim.beta2, 0.99);
        assert_eq!(cfg.optim.weight_decay, 0.01);
    }

    #[test]
    fn parses_overrides_and_comments() {
        let cfg = Config::parse(
            "# comment\nsdp.hidden_dim = 16\noptim.learning_rate = 1e-3   # inline\nmel.normalization = area\n",
        )
        .unwrap();
        assert_eq!(cfg.sdp.hidden_dim, 16);
        assert_eq!(cfg.optim.learning_rate, 1e-3);
        assert_eq!(cfg.mel.norm, MelNorm::Area);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = Config::parse("sdp.hiden_dim = 16\n").unwrap_err().to_string();
        assert!(err.contains("unknown key"), "{err}");
    }

    #[test]
    fn type_errors_rejected() {
        let err = Config::parse("sdp.hidden_dim = fast\n").unwrap_err().to_string();
        assert!(err.contains("bad value"), "{err}");
    }
}
