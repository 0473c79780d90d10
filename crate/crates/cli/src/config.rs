//! Run configuration: a sectioned, human-editable TOML file.
//!
//! Every key has a default, so an empty file is a valid config; unknown keys
//! are rejected, not ignored. Each command writes its fully resolved config
//! next to its outputs, and re-running from that file reproduces the
//! artifacts byte for byte.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dmtl_core::config::{SizePreset, TrainConfig};
use dmtl_core::datagen::GenConfig;
use dmtl_core::numerics::OptimizerConfig;
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DMTL_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub num_users: usize,
    pub num_items: usize,
    pub impressions_per_user: usize,
    pub clickbait_fraction: f64,
    pub duration_threshold: f64,
    pub duration_median: f64,
    pub duration_sigma: f64,
    pub negative_smoothing: f64,
    pub negative_ratio: usize,
    pub train_fraction: f64,
    pub latent_dim: usize,
    pub feature_buckets: usize,
    pub noise_cardinality: usize,
    pub embedding_dim: usize,
    pub ctr_scale: f64,
    pub ctr_bias: f64,
    pub clickbait_ctr_boost: f64,
    pub cvr_scale: f64,
    pub cvr_bias: f64,
    pub clickbait_cvr_penalty: f64,
    pub cvr_factor_mix: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        GenConfig::default().into()
    }
}

impl From<GenConfig> for DataSection {
    fn from(g: GenConfig) -> Self {
        Self {
            num_users: g.num_users,
            num_items: g.num_items,
            impressions_per_user: g.impressions_per_user,
            clickbait_fraction: g.clickbait_fraction,
            duration_threshold: g.duration_threshold,
            duration_median: g.duration_median,
            duration_sigma: g.duration_sigma,
            negative_smoothing: g.negative_smoothing,
            negative_ratio: g.negative_ratio,
            train_fraction: g.train_fraction,
            latent_dim: g.latent_dim,
            feature_buckets: g.feature_buckets,
            noise_cardinality: g.noise_cardinality,
            embedding_dim: g.embedding_dim,
            ctr_scale: g.ctr_scale,
            ctr_bias: g.ctr_bias,
            clickbait_ctr_boost: g.clickbait_ctr_boost,
            cvr_scale: g.cvr_scale,
            cvr_bias: g.cvr_bias,
            clickbait_cvr_penalty: g.clickbait_cvr_penalty,
            cvr_factor_mix: g.cvr_factor_mix,
        }
    }
}

impl DataSection {
    pub fn to_gen_config(&self) -> GenConfig {
        GenConfig {
            num_users: self.num_users,
            num_items: self.num_items,
            impressions_per_user: self.impressions_per_user,
            clickbait_fraction: self.clickbait_fraction,
            duration_threshold: self.duration_threshold,
            duration_median: self.duration_median,
            duration_sigma: self.duration_sigma,
            negative_smoothing: self.negative_smoothing,
            negative_ratio: self.negative_ratio,
            train_fraction: self.train_fraction,
            latent_dim: self.latent_dim,
            feature_buckets: self.feature_buckets,
            noise_cardinality: self.noise_cardinality,
            embedding_dim: self.embedding_dim,
            ctr_scale: self.ctr_scale,
            ctr_bias: self.ctr_bias,
            clickbait_ctr_boost: self.clickbait_ctr_boost,
            cvr_scale: self.cvr_scale,
            cvr_bias: self.cvr_bias,
            clickbait_cvr_penalty: self.clickbait_cvr_penalty,
            cvr_factor_mix: self.cvr_factor_mix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `desk` or `paper` layer sizes.
    pub preset: SizePreset,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: SizePreset::Desk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub w1: f64,
    pub w2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Teacher-side learning rate; the teacher is not one of the compared
    /// models, so it may converge faster than the shared tower optimizer.
    pub teacher_lr: f64,
    pub paper_literal_click_label: bool,
    pub literal_printed_distill: bool,
    pub distill_temperature: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            batch_size: 256,
            epochs: 2,
            optimizer: "adam".to_string(),
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            teacher_lr: 1e-2,
            paper_literal_click_label: false,
            literal_printed_distill: false,
            distill_temperature: 1.0,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64, duration_threshold: f64) -> anyhow::Result<TrainConfig> {
        let optimizer = match self.optimizer.as_str() {
            "adam" => OptimizerConfig::Adam {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            "sgd" => OptimizerConfig::Sgd { lr: self.lr },
            other => bail!("invalid value for `train.optimizer`: `{other}` (use adam or sgd)"),
        };
        let teacher_optimizer = match self.optimizer.as_str() {
            "adam" => OptimizerConfig::Adam {
                lr: self.teacher_lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            _ => OptimizerConfig::Sgd {
                lr: self.teacher_lr,
            },
        };
        Ok(TrainConfig {
            w1: self.w1,
            w2: self.w2,
            batch_size: self.batch_size,
            epochs: self.epochs,
            optimizer,
            teacher_optimizer: Some(teacher_optimizer),
            duration_threshold,
            seed,
            paper_literal_click_label: self.paper_literal_click_label,
            literal_printed_distill: self.literal_printed_distill,
            distill_temperature: self.distill_temperature,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Retrieval depth of the simulated serving metric.
    pub k: usize,
    pub ivf_cells: usize,
    pub ivf_probes: usize,
    pub kmeans_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            k: 100,
            ivf_cells: 64,
            ivf_probes: 8,
            kmeans_seed: 12345,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    /// Seed replications; seeds are `seed..seed + seeds`.
    pub seeds: u64,
    /// Re-run the first seed a second time and byte-compare all artifacts.
    pub verify_reproducibility: bool,
    /// Ordering requirement: how many of the seeds must rank
    /// regression < classification < click < dmtl.
    pub min_ordered_seeds: u64,
    /// Required mean AUC margins of dmtl over the two nearest baselines.
    pub min_auc_gap_classification: f64,
    pub min_auc_gap_click: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            seeds: 5,
            verify_reproducibility: true,
            min_ordered_seeds: 4,
            min_auc_gap_classification: 0.03,
            min_auc_gap_click: 0.005,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        self.data
            .to_gen_config()
            .validate()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        self.train
            .to_train_config(self.seed, self.data.duration_threshold)?
            .validate()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        if self.eval.k == 0 {
            bail!("invalid value for `eval.k`: must be >= 1");
        }
        if self.eval.ivf_cells == 0 || self.eval.ivf_probes == 0 {
            bail!("invalid value for `eval.ivf_cells`/`eval.ivf_probes`: must be >= 1");
        }
        if self.bench.seeds == 0 {
            bail!("invalid value for `bench.seeds`: must be >= 1");
        }
        if self.bench.min_ordered_seeds > self.bench.seeds {
            bail!("invalid value for `bench.min_ordered_seeds`: exceeds bench.seeds");
        }
        Ok(())
    }
}

/// Parse, default and validate a config file. A missing or empty file gives
/// the defaults.
pub fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let config: RunConfig = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("invalid config {}", p.display()))?
        }
    };
    config.validate()?;
    Ok(config)
}

/// Write the fully resolved config next to a run's outputs.
pub fn write_resolved(config: &RunConfig, dir: &Path) -> anyhow::Result<PathBuf> {
    let path = dir.join("config.resolved.toml");
    let text = toml::to_string_pretty(config).context("serialize resolved config")?;
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Default output directory: flag, else env, else `./dmtl-out`.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("dmtl-out"))
}
