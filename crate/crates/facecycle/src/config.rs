//! Declarative run configuration: a single TOML file of key-value sections
//! mirroring the module configs, with command-line overrides applied on top.
//! Unknown keys are rejected; the fully resolved config is echoed into the
//! run directory before any compute.

use crate::augment::AugmentPolicy;
use crate::baselines::{Pix2pixConfig, VaeConfig};
use crate::error::{Error, Result};
use crate::guidance::{MissingSidecarPolicy, RetrievalMetric};
use crate::losses::{GanLossKind, LossWeights, PatchSampleSpec};
use crate::networks::{DiscriminatorConfig, GeneratorConfig};
use crate::schedule::TrainSchedule;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    CycleganGuided,
    Vae,
    Pix2pix,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::CycleganGuided => write!(f, "cyclegan_guided"),
            ModelKind::Vae => write!(f, "vae"),
            ModelKind::Pix2pix => write!(f, "pix2pix"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Fp32,
    Mixed,
}

impl Default for Precision {
    fn default() -> Self {
        Precision::Fp32
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub x_dir: PathBuf,
    pub y_dir: PathBuf,
    pub train_frac: f64,
    pub split_seed: u64,
    /// Treat same-id images across directories as a curated paired subset.
    pub paired_ids: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            x_dir: PathBuf::from("data/x"),
            y_dir: PathBuf::from("data/y"),
            train_frac: 0.8,
            split_seed: 0,
            paired_ids: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub encoder_seed: u64,
    pub embed_dim: usize,
    pub retrieval_metric: RetrievalMetric,
    pub missing_sidecar_policy: MissingSidecarPolicy,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            encoder_seed: 17,
            embed_dim: crate::types::DEFAULT_EMBED_DIM,
            retrieval_metric: RetrievalMetric::Cosine,
            missing_sidecar_policy: MissingSidecarPolicy::Strict,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub fid_splits: usize,
    pub extractor_seed: u64,
    pub extractor_dim: usize,
    /// Evaluate EMA weights (default) or live weights.
    pub eval_ema: bool,
    pub timing_images: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            fid_splits: 10,
            extractor_seed: 33,
            extractor_dim: 16,
            eval_ema: true,
            timing_images: 1000,
        }
    }
}

fn default_log_every() -> usize {
    1
}
fn default_ckpt_every() -> usize {
    1000
}
fn default_sample_every() -> usize {
    500
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub precision: Precision,
    pub data: DataConfig,
    pub schedule: TrainSchedule,
    pub loss_weights: LossWeights,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub augment: AugmentPolicy,
    pub patch: PatchSampleSpec,
    pub guidance: GuidanceConfig,
    pub metrics: MetricsConfig,
    pub vae: VaeConfig,
    pub pix2pix: Pix2pixConfig,
    pub gan_loss: GanLossKind,
    /// Run a hybrid paired step every n iterations (0 = never); requires a
    /// curated paired subset in the data.
    pub hybrid_paired_every: usize,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub sample_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::CycleganGuided,
            seed: 0,
            output_dir: PathBuf::from("runs/run"),
            precision: Precision::Fp32,
            data: DataConfig::default(),
            schedule: TrainSchedule::default(),
            loss_weights: LossWeights::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            augment: AugmentPolicy::default(),
            patch: PatchSampleSpec::default(),
            guidance: GuidanceConfig::default(),
            metrics: MetricsConfig::default(),
            vae: VaeConfig::default(),
            pix2pix: Pix2pixConfig::default(),
            gan_loss: GanLossKind::NonSaturating,
            hybrid_paired_every: 0,
            log_every: default_log_every(),
            checkpoint_every: default_ckpt_every(),
            sample_every: default_sample_every(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.loss_weights.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.patch.validate()?;
        self.vae.validate()?;
        self.pix2pix.validate()?;
        if !(0.0..1.0).contains(&self.data.train_frac) || self.data.train_frac <= 0.0 {
            return Err(Error::Config(format!(
                "data.train_frac must be in (0, 1), got {}",
                self.data.train_frac
            )));
        }
        for r in &self.schedule.resolutions {
            if !crate::types::SUPPORTED_RESOLUTIONS.contains(r) {
                return Err(Error::Config(format!(
                    "schedule.resolutions entry {r} not in {:?}",
                    crate::types::SUPPORTED_RESOLUTIONS
                )));
            }
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize config: {e}")))
    }
}

/// Parse a TOML config file, then apply `key.path=value` overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {path:?}: {e}")))?;
    parse_config(&text, overrides)
}

pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut value: toml::Value = toml::from_str(text)
        .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
    for ov in overrides {
        apply_override(&mut value, ov)?;
    }
    let cfg: RunConfig = value
        .try_into()
        .map_err(|e| Error::Config(format!("config field error: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Apply one `a.b.c=value` override; the value is parsed as TOML (falling
/// back to a string).
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' must be key.path=value")))?;
    let parsed: toml::Value = match raw.parse::<toml::Value>() {
        Ok(v) => v,
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (i, key) in keys.iter().enumerate() {
        if i + 1 == keys.len() {
            match cur {
                toml::Value::Table(t) => {
                    t.insert(key.to_string(), parsed);
                    return Ok(());
                }
                _ => return Err(Error::Config(format!("override path '{path}' not a table"))),
            }
        } else {
            let toml::Value::Table(t) = cur else {
                return Err(Error::Config(format!("override path '{path}' not a table")));
            };
            cur = t
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_paper_hyperparameters() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.loss_weights.lambda_cyc, 10.0);
        assert_eq!(cfg.loss_weights.lambda_id, 1.0);
        assert_eq!(cfg.loss_weights.lambda_perc, 0.5);
        assert_eq!(cfg.loss_weights.lambda_sem, 2.0);
        assert_eq!(cfg.loss_weights.lambda_lmk, 1.0);
        assert_eq!(cfg.loss_weights.lambda_con, 0.5);
        assert_eq!(cfg.schedule.lr0, 2e-4);
        assert_eq!(cfg.schedule.adam_beta1, 0.5);
        assert_eq!(cfg.schedule.adam_beta2, 0.999);
        assert_eq!(cfg.schedule.ema_decay, 0.999);
        assert_eq!(cfg.schedule.ttur_ratio, 2);
        assert_eq!(cfg.schedule.ttur_phase_frac, 0.25);
        assert_eq!(cfg.schedule.resolutions, vec![128, 256]);
        assert_eq!(cfg.vae.latent_dim, 128);
        assert_eq!(cfg.vae.lr, 1e-4);
        assert_eq!(cfg.pix2pix.lr, 2e-4);
        assert_eq!(cfg.pix2pix.lambda_l1, 100.0);
        assert_eq!(cfg.generator.n_res_blocks, 9);
        assert_eq!(cfg.generator.attention_scales, vec![16, 8]);
        assert_eq!(cfg.generator.skip_scales, vec![4, 2]);
        assert!(!cfg.generator.use_sn_on_g);
        assert!(cfg.discriminator.use_sn);
    }

    #[test]
    fn roundtrip_and_overrides() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let re = parse_config(&text, &[]).unwrap();
        assert_eq!(cfg, re);
        let ov = parse_config(
            &text,
            &[
                "seed=42".to_string(),
                "schedule.total_iters=123".to_string(),
                "loss_weights.lambda_cyc=3.5".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(ov.seed, 42);
        assert_eq!(ov.schedule.total_iters, 123);
        assert_eq!(ov.loss_weights.lambda_cyc, 3.5);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "no_such_key = 1\n";
        let err = parse_config(text, &[]).unwrap_err();
        assert!(err.to_string().contains("no_such_key"));
    }

    #[test]
    fn negative_lambda_names_field() {
        let text = "[loss_weights]\nlambda_cyc = -1.0\n";
        let err = parse_config(text, &[]).unwrap_err();
        assert!(err.to_string().contains("lambda_cyc"));
        assert_eq!(err.exit_code(), 2);
    }
}
