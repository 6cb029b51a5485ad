//! Run configuration: defaults, the line-oriented `key = value` file
//! format, and command-line overrides.
//!
//! Every report embeds the fully resolved configuration, so a run can be
//! reproduced from its own output. Unknown keys are rejected.

use std::fmt;
use std::path::Path;

use fracdet_core::detector::DetectorConfig;
use fracdet_core::dfa::DfaConfig;
use fracdet_core::mc::McConfig;
use serde::{Deserialize, Serialize};

/// All tunables of a run. Field names mirror the config-file keys
/// (`dfa.heads`, `tol.grad`, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub outdir: String,

    pub dfa_heads: usize,
    pub dfa_local_window: usize,
    pub dfa_global_pool_ratio: usize,
    pub dfa_bias_mlp_hidden: usize,
    pub dfa_dropout_p: f64,
    pub dfa_eps: f64,

    pub mc_reduction: usize,

    pub detector_widths: [usize; 3],
    pub detector_with_dfa: bool,
    pub detector_with_mc: bool,

    pub train_epochs: usize,
    pub train_lr: f64,
    pub train_box_loss_weight: f64,
    pub train_pos_weight: f64,
    pub train_scenes: usize,
    pub train_image_size: usize,

    pub tol_grad: f64,
    pub tol_grad_step: f64,
    pub tol_grad_seeds: usize,
    pub tol_row_sum: f64,
    pub tol_unit_norm: f64,
    pub tol_oracle: f64,
    pub tol_separability: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            outdir: String::from("out"),
            dfa_heads: 1,
            dfa_local_window: 8,
            dfa_global_pool_ratio: 4,
            dfa_bias_mlp_hidden: 32,
            dfa_dropout_p: 0.1,
            dfa_eps: 1e-12,
            mc_reduction: 16,
            detector_widths: [8, 16, 32],
            detector_with_dfa: false,
            detector_with_mc: false,
            train_epochs: 40,
            train_lr: 0.1,
            train_box_loss_weight: 1.0,
            train_pos_weight: 16.0,
            train_scenes: 200,
            train_image_size: 64,
            tol_grad: 1e-4,
            tol_grad_step: 1e-5,
            tol_grad_seeds: 10,
            tol_row_sum: 1e-12,
            tol_unit_norm: 1e-10,
            tol_oracle: 1e-12,
            tol_separability: 1e-10,
        }
    }
}

/// A malformed file, an unknown key, or an unparsable value.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    /// Parses a config file over the defaults. Blank lines and `#` comments
    /// are ignored; everything else must be `key = value`.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut config = RunConfig::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| ConfigError(format!("line {}: {}", lineno + 1, e.0)))?;
        }
        Ok(())
    }

    /// Sets one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value
                .parse()
                .map_err(|_| ConfigError(format!("invalid value {value:?} for key {key:?}")))
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "outdir" => self.outdir = String::from(value),
            "dfa.heads" => self.dfa_heads = parse(key, value)?,
            "dfa.local_window" => self.dfa_local_window = parse(key, value)?,
            "dfa.global_pool_ratio" => self.dfa_global_pool_ratio = parse(key, value)?,
            "dfa.bias_mlp_hidden" => self.dfa_bias_mlp_hidden = parse(key, value)?,
            "dfa.dropout_p" => self.dfa_dropout_p = parse(key, value)?,
            "dfa.eps" => self.dfa_eps = parse(key, value)?,
            "mc.reduction" => self.mc_reduction = parse(key, value)?,
            "detector.widths" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(ConfigError(format!(
                        "detector.widths wants three comma-separated values, got {value:?}"
                    )));
                }
                for (slot, part) in self.detector_widths.iter_mut().zip(parts) {
                    *slot = part
                        .parse()
                        .map_err(|_| ConfigError(format!("invalid width {part:?}")))?;
                }
            }
            "detector.with_dfa" => self.detector_with_dfa = parse(key, value)?,
            "detector.with_mc" => self.detector_with_mc = parse(key, value)?,
            "train.epochs" => self.train_epochs = parse(key, value)?,
            "train.lr" => self.train_lr = parse(key, value)?,
            "train.box_loss_weight" => self.train_box_loss_weight = parse(key, value)?,
            "train.pos_weight" => self.train_pos_weight = parse(key, value)?,
            "train.scenes" => self.train_scenes = parse(key, value)?,
            "train.image_size" => self.train_image_size = parse(key, value)?,
            "tol.grad" => self.tol_grad = parse(key, value)?,
            "tol.grad_step" => self.tol_grad_step = parse(key, value)?,
            "tol.grad_seeds" => self.tol_grad_seeds = parse(key, value)?,
            "tol.row_sum" => self.tol_row_sum = parse(key, value)?,
            "tol.unit_norm" => self.tol_unit_norm = parse(key, value)?,
            "tol.oracle" => self.tol_oracle = parse(key, value)?,
            "tol.separability" => self.tol_separability = parse(key, value)?,
            other => return Err(ConfigError(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// DFA hyperparameters for a given channel count.
    pub fn dfa_config(&self, channels: usize) -> DfaConfig {
        DfaConfig {
            channels,
            heads: self.dfa_heads,
            local_window: self.dfa_local_window,
            global_pool_ratio: self.dfa_global_pool_ratio,
            bias_mlp_hidden: self.dfa_bias_mlp_hidden,
            dropout_p: self.dfa_dropout_p,
            eps: self.dfa_eps,
        }
    }

    pub fn mc_config(&self, channels: usize) -> McConfig {
        McConfig {
            channels,
            reduction: self.mc_reduction,
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            widths: self.detector_widths,
            with_dfa: self.detector_with_dfa,
            with_mc: self.detector_with_mc,
        }
    }

    /// Renders the resolved configuration back into the `key = value` file
    /// format, so a report's embedded config can seed a new run.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        push("seed", self.seed.to_string());
        push("outdir", self.outdir.clone());
        push("dfa.heads", self.dfa_heads.to_string());
        push("dfa.local_window", self.dfa_local_window.to_string());
        push("dfa.global_pool_ratio", self.dfa_global_pool_ratio.to_string());
        push("dfa.bias_mlp_hidden", self.dfa_bias_mlp_hidden.to_string());
        push("dfa.dropout_p", self.dfa_dropout_p.to_string());
        push("dfa.eps", self.dfa_eps.to_string());
        push("mc.reduction", self.mc_reduction.to_string());
        push(
            "detector.widths",
            format!(
                "{},{},{}",
                self.detector_widths[0], self.detector_widths[1], self.detector_widths[2]
            ),
        );
        push("detector.with_dfa", self.detector_with_dfa.to_string());
        push("detector.with_mc", self.detector_with_mc.to_string());
        push("train.epochs", self.train_epochs.to_string());
        push("train.lr", self.train_lr.to_string());
        push("train.box_loss_weight", self.train_box_loss_weight.to_string());
        push("train.pos_weight", self.train_pos_weight.to_string());
        push("train.scenes", self.train_scenes.to_string());
        push("train.image_size", self.train_image_size.to_string());
        push("tol.grad", self.tol_grad.to_string());
        push("tol.grad_step", self.tol_grad_step.to_string());
        push("tol.grad_seeds", self.tol_grad_seeds.to_string());
        push("tol.row_sum", self.tol_row_sum.to_string());
        push("tol.unit_norm", self.tol_unit_norm.to_string());
        push("tol.oracle", self.tol_oracle.to_string());
        push("tol.separability", self.tol_separability.to_string());
        out
    }

    /// Output directory resolution: explicit flag, then config key, with
    /// `FRACDET_OUTDIR` as the environment fallback when the key still
    /// holds its default.
    pub fn resolve_outdir(&self) -> std::path::PathBuf {
        if self.outdir == "out" {
            if let Ok(env_dir) = std::env::var("FRACDET_OUTDIR") {
                if !env_dir.is_empty() {
                    return std::path::PathBuf::from(env_dir);
                }
            }
        }
        std::path::PathBuf::from(&self.outdir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let mut config = RunConfig::default();
        assert!(config.set("nonsense.key", "1").is_err());
        assert!(config.apply_text("train.epochs = 3\nbogus = 1\n").is_err());
    }

    #[test]
    fn comments_blank_lines_and_values_parse() {
        let mut config = RunConfig::default();
        config
            .apply_text(
                "# a comment\n\nseed = 9\ndfa.dropout_p = 0.25\ndetector.widths = 4, 8, 16\ndetector.with_mc = true\n",
            )
            .unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.dfa_dropout_p, 0.25);
        assert_eq!(config.detector_widths, [4, 8, 16]);
        assert!(config.detector_with_mc);
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut config = RunConfig::default();
        let err = config.set("train.epochs", "many").unwrap_err();
        assert!(err.0.contains("train.epochs"));
        let err = config.set("detector.widths", "1,2").unwrap_err();
        assert!(err.0.contains("three"));
    }

    #[test]
    fn config_text_roundtrip_reproduces_every_key() {
        let mut config = RunConfig::default();
        config.seed = 123;
        config.dfa_dropout_p = 0.05;
        config.detector_widths = [4, 8, 12];
        config.detector_with_dfa = true;
        config.tol_grad = 2e-4;
        let text = config.to_config_text();
        let mut back = RunConfig::default();
        back.apply_text(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn json_roundtrip_is_stable() {
        let config = RunConfig::default();
        let json = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(config, back);
        assert_eq!(json, serde_json::to_string(&back).unwrap());
    }
}
