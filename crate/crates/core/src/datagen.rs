//! Synthetic click/duration log generator with ground truth.
//!
//! A latent-factor world drives per-pair click and long-read probabilities.
//! A configurable fraction of items are click baits: their click probability
//! is boosted while their long-read probability is penalized, which is the
//! phenomenon a duration-aware ranker must beat. Clicked durations follow a
//! log-normal whose median defaults to the labeling threshold, so the
//! threshold is approximately the median of clicked durations; the long/short
//! side is decided first and the duration is drawn from the matching
//! truncated half.
//!
//! Everything is deterministic per seed, with per-user streams; output files
//! are byte-identical across runs.

use std::collections::BTreeSet;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::features::{write_dataset, write_schema, FeatureSchema, FieldSpec, Sample};
use crate::train::derive_seed;
use crate::{Matrix, Real};

const WORLD_TAG: u64 = 0x776f_726c_64; // "world"
const LOG_TAG: u64 = 0x6c6f_6773; // "logs"
const NEG_TAG: u64 = 0x6e65_67; // "neg"

/// Generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub impressions_per_user: usize,
    /// Fraction of items flagged as click bait.
    pub clickbait_fraction: f64,
    /// Seconds; a read longer than this is a conversion.
    pub duration_threshold: f64,
    /// Median of the clicked-duration log-normal; defaults to the threshold.
    pub duration_median: f64,
    /// Log-scale spread of clicked durations.
    pub duration_sigma: f64,
    /// Additive smoothing on click counts when sampling negatives.
    pub negative_smoothing: f64,
    /// Negatives drawn per positive.
    pub negative_ratio: usize,
    /// Fraction of each user's impressions that go to the training split.
    pub train_fraction: f64,
    pub latent_dim: usize,
    /// Buckets per quantized latent feature.
    pub feature_buckets: usize,
    /// Cardinality of the pure-noise field.
    pub noise_cardinality: usize,
    pub embedding_dim: usize,
    pub ctr_scale: f64,
    pub ctr_bias: f64,
    pub clickbait_ctr_boost: f64,
    pub cvr_scale: f64,
    pub cvr_bias: f64,
    pub clickbait_cvr_penalty: f64,
    /// Correlation between the click-side and read-side item factors.
    pub cvr_factor_mix: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_users: 2000,
            num_items: 5000,
            impressions_per_user: 180,
            clickbait_fraction: 0.2,
            duration_threshold: 50.0,
            duration_median: 50.0,
            duration_sigma: 0.8,
            negative_smoothing: 1.0,
            negative_ratio: 4,
            train_fraction: 0.8,
            latent_dim: 2,
            feature_buckets: 16,
            noise_cardinality: 50,
            embedding_dim: 30,
            ctr_scale: 1.0,
            ctr_bias: -1.6,
            clickbait_ctr_boost: 1.5,
            cvr_scale: 1.0,
            cvr_bias: 0.1,
            clickbait_cvr_penalty: 2.5,
            cvr_factor_mix: 0.85,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("num_users", self.num_users),
            ("num_items", self.num_items),
            ("impressions_per_user", self.impressions_per_user),
            ("latent_dim", self.latent_dim),
            ("feature_buckets", self.feature_buckets),
            ("noise_cardinality", self.noise_cardinality),
            ("embedding_dim", self.embedding_dim),
        ];
        for (key, v) in positive_counts {
            if v == 0 {
                return Err(Error::InvalidConfig {
                    key: key.into(),
                    reason: "must be >= 1".into(),
                });
            }
        }
        for (key, v) in [
            ("clickbait_fraction", self.clickbait_fraction),
            ("train_fraction", self.train_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig {
                    key: key.into(),
                    reason: format!("must be in [0, 1], got {v}"),
                });
            }
        }
        if self.duration_threshold <= 0.0 || self.duration_median <= 0.0 {
            return Err(Error::InvalidConfig {
                key: "duration_threshold/duration_median".into(),
                reason: "must be > 0".into(),
            });
        }
        if self.duration_sigma < 0.0 {
            return Err(Error::InvalidConfig {
                key: "duration_sigma".into(),
                reason: "must be >= 0".into(),
            });
        }
        if self.negative_smoothing < 0.0 {
            return Err(Error::InvalidConfig {
                key: "negative_smoothing".into(),
                reason: "must be >= 0".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.cvr_factor_mix) {
            return Err(Error::InvalidConfig {
                key: "cvr_factor_mix".into(),
                reason: "must be in [0, 1]".into(),
            });
        }
        Ok(())
    }
}

/// Latent ground truth: factors, clickbait flags and the probability and
/// duration models they induce.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldModel {
    pub config: GenConfig,
    pub seed: u64,
    user_factors: Matrix,
    item_factors_click: Matrix,
    item_factors_read: Matrix,
    clickbait: Vec<bool>,
    /// Per-entity value of the pure-noise categorical field.
    user_noise_field: Vec<usize>,
    item_noise_field: Vec<usize>,
    /// Mean clicked duration conditional on the long / short side.
    mean_duration_long: Real,
    mean_duration_short: Real,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

impl WorldModel {
    pub fn num_users(&self) -> usize {
        self.config.num_users
    }

    pub fn num_items(&self) -> usize {
        self.config.num_items
    }

    pub fn is_clickbait(&self, item: usize) -> bool {
        self.clickbait[item]
    }

    pub fn clickbait_count(&self) -> usize {
        self.clickbait.iter().filter(|&&b| b).count()
    }

    /// Ground-truth click probability.
    pub fn ctr_star(&self, user: usize, item: usize) -> Real {
        let dot = row_dot(self.user_factors.row(user), self.item_factors_click.row(item));
        let boost = if self.clickbait[item] {
            self.config.clickbait_ctr_boost
        } else {
            0.0
        };
        crate::numerics::sigmoid(self.config.ctr_scale * dot + self.config.ctr_bias + boost)
    }

    /// Ground-truth long-read probability given a click.
    pub fn cvr_star(&self, user: usize, item: usize) -> Real {
        let dot = row_dot(self.user_factors.row(user), self.item_factors_read.row(item));
        let penalty = if self.clickbait[item] {
            self.config.clickbait_cvr_penalty
        } else {
            0.0
        };
        crate::numerics::sigmoid(self.config.cvr_scale * dot + self.config.cvr_bias - penalty)
    }

    /// Ground-truth expected duration of one impression:
    /// `ctr* (cvr* mean_long + (1 - cvr*) mean_short)`.
    pub fn expected_duration(&self, user: usize, item: usize) -> Real {
        let ctr = self.ctr_star(user, item);
        let cvr = self.cvr_star(user, item);
        ctr * (cvr * self.mean_duration_long + (1.0 - cvr) * self.mean_duration_short)
    }

    /// The feature schema all emitted datasets follow: entity id, one bucket
    /// per quantized latent coordinate (up to two), and a pure-noise field,
    /// on each side. The dense block carries the raw user-side and item-side
    /// latent coordinates plus their norms; only the teacher consumes it.
    pub fn schema(&self) -> FeatureSchema {
        let cfg = &self.config;
        let q = cfg.latent_dim.min(2);
        let mut user_fields = vec![FieldSpec::new("user_id", cfg.num_users)];
        for i in 0..q {
            user_fields.push(FieldSpec::new(format!("user_bucket_{i}"), cfg.feature_buckets));
        }
        user_fields.push(FieldSpec::new("user_noise", cfg.noise_cardinality));
        let mut item_fields = vec![FieldSpec::new("item_id", cfg.num_items)];
        for i in 0..q {
            item_fields.push(FieldSpec::new(format!("item_bucket_{i}"), cfg.feature_buckets));
        }
        item_fields.push(FieldSpec::new("item_noise", cfg.noise_cardinality));
        FeatureSchema::new(user_fields, item_fields, self.dense_dim(), cfg.embedding_dim)
            .expect("generator schema is valid")
    }

    fn dense_dim(&self) -> usize {
        // user-side block, item-side block, and one cross-affinity feature
        2 * (self.config.latent_dim + 1) + 1
    }

    pub fn user_field_ids(&self, user: usize) -> Vec<usize> {
        let cfg = &self.config;
        let mut ids = vec![user];
        for i in 0..cfg.latent_dim.min(2) {
            ids.push(bucketize(self.user_factors.get(user, i), cfg.feature_buckets));
        }
        ids.push(self.user_noise_field[user]);
        ids
    }

    pub fn item_field_ids(&self, item: usize) -> Vec<usize> {
        let cfg = &self.config;
        let mut ids = vec![item];
        for i in 0..cfg.latent_dim.min(2) {
            ids.push(bucketize(self.item_factors_click.get(item, i), cfg.feature_buckets));
        }
        ids.push(self.item_noise_field[item]);
        ids
    }

    /// Dense block: raw user-side latents and norm, raw item-side latents and
    /// norm, and the click-side cross affinity. Cross features rule these out
    /// as tower inputs, which is exactly why only the teacher sees them.
    fn dense_features(&self, user: usize, item: usize) -> Vec<Real> {
        let d = self.config.latent_dim as Real;
        let u = self.user_factors.row(user);
        let v = self.item_factors_click.row(item);
        let norm = |xs: &[Real]| (xs.iter().map(|x| x * x).sum::<Real>() / d).sqrt();
        let mut out = Vec::with_capacity(self.dense_dim());
        out.extend_from_slice(u);
        out.push(norm(u));
        out.extend_from_slice(v);
        out.push(norm(v));
        out.push(row_dot(u, v));
        out
    }

    /// Recover the (user, item) pair of a generated sample; the entity id is
    /// the first field on each side by construction.
    pub fn sample_pair(sample: &Sample) -> (usize, usize) {
        (sample.user_ids[0], sample.item_ids[0])
    }

    /// Assemble one dataset sample for a (user, item) outcome.
    pub fn make_sample(
        &self,
        user: usize,
        item: usize,
        clicked: bool,
        duration_seconds: Real,
    ) -> Result<Sample> {
        Sample::new(
            self.user_field_ids(user),
            self.item_field_ids(item),
            self.dense_features(user, item),
            clicked,
            duration_seconds,
            self.config.duration_threshold,
        )
    }

    /// Draw a clicked duration on the given side of the threshold by inverse
    /// CDF of the truncated log-normal half.
    fn draw_duration(&self, long: bool, rng: &mut ChaCha8Rng) -> Real {
        let cfg = &self.config;
        let mu = cfg.duration_median.ln();
        if cfg.duration_sigma == 0.0 {
            return cfg.duration_median;
        }
        let alpha = (cfg.duration_threshold.ln() - mu) / cfg.duration_sigma;
        let n = std_normal();
        let p_short = n.cdf(alpha);
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let p = if long {
            p_short + u * (1.0 - p_short)
        } else {
            u * p_short
        };
        (mu + cfg.duration_sigma * n.inverse_cdf(p)).exp()
    }
}

fn row_dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quantize a standard-normal coordinate into `buckets` equal-mass bins.
fn bucketize(x: Real, buckets: usize) -> usize {
    let p = std_normal().cdf(x);
    ((p * buckets as f64) as usize).min(buckets - 1)
}

/// Conditional means of the threshold-truncated log-normal halves.
fn truncated_means(median: f64, sigma: f64, threshold: f64) -> (Real, Real) {
    if sigma == 0.0 {
        return (median, median);
    }
    let mu = median.ln();
    let alpha = (threshold.ln() - mu) / sigma;
    let n = std_normal();
    let p_short = n.cdf(alpha);
    let p_long = 1.0 - p_short;
    let full_mean = (mu + sigma * sigma / 2.0).exp();
    let long_mass = n.cdf(sigma - alpha);
    let mean_long = full_mean * long_mass / p_long;
    let mean_short = full_mean * (1.0 - long_mass) / p_short;
    (mean_long, mean_short)
}

/// Build a reproducible world: latent factors, clickbait flags, noise fields.
pub fn generate_world(config: &GenConfig, seed: u64) -> Result<WorldModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, WORLD_TAG));
    let d = config.latent_dim;
    let user_factors = Matrix::from_fn(config.num_users, d, |_, _| sample_normal(&mut rng));
    let item_factors_click = Matrix::from_fn(config.num_items, d, |_, _| sample_normal(&mut rng));
    // read-side factors correlate with the click side through the mix weight
    let mix = config.cvr_factor_mix;
    let ortho = (1.0 - mix * mix).sqrt();
    let item_factors_read = Matrix::from_fn(config.num_items, d, |r, c| {
        mix * item_factors_click.get(r, c) + ortho * sample_normal(&mut rng)
    });
    // exactly floor(fraction * n) flagged items, chosen by seeded shuffle
    let flag_count = (config.clickbait_fraction * config.num_items as f64).floor() as usize;
    let mut order: Vec<usize> = (0..config.num_items).collect();
    crate::train::shuffle(&mut order, &mut rng);
    let mut clickbait = vec![false; config.num_items];
    for &item in order.iter().take(flag_count) {
        clickbait[item] = true;
    }
    let user_noise_field = (0..config.num_users)
        .map(|_| rng.random_range(0..config.noise_cardinality))
        .collect();
    let item_noise_field = (0..config.num_items)
        .map(|_| rng.random_range(0..config.noise_cardinality))
        .collect();
    let (mean_duration_long, mean_duration_short) = truncated_means(
        config.duration_median,
        config.duration_sigma,
        config.duration_threshold,
    );
    Ok(WorldModel {
        config: config.clone(),
        seed,
        user_factors,
        item_factors_click,
        item_factors_read,
        clickbait,
        user_noise_field,
        item_noise_field,
        mean_duration_long,
        mean_duration_short,
    })
}

/// Box-Muller style draw through the inverse CDF; one uniform per value
/// keeps streams simple and reproducible.
fn sample_normal(rng: &mut ChaCha8Rng) -> Real {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    std_normal().inverse_cdf(u)
}

/// One simulated impression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub user: usize,
    pub item: usize,
    pub clicked: bool,
    pub duration_seconds: Real,
}

/// Simulate the impression log: per user, uniform item exposure; clicks are
/// Bernoulli in `ctr*`; clicked durations come from the truncated log-normal
/// side chosen by a Bernoulli in `cvr*`; un-clicked impressions have zero
/// duration.
pub fn simulate_logs(world: &WorldModel, config: &GenConfig) -> Vec<Impression> {
    let mut log = Vec::with_capacity(config.num_users * config.impressions_per_user);
    for user in 0..config.num_users {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(world.seed, LOG_TAG ^ (user as u64) << 8));
        for _ in 0..config.impressions_per_user {
            let item = rng.random_range(0..config.num_items);
            let clicked = rng.random_bool(world.ctr_star(user, item).clamp(0.0, 1.0));
            let duration = if clicked {
                let long = rng.random_bool(world.cvr_star(user, item).clamp(0.0, 1.0));
                world.draw_duration(long, &mut rng)
            } else {
                0.0
            };
            log.push(Impression {
                user,
                item,
                clicked,
                duration_seconds: duration,
            });
        }
    }
    log
}

/// Split impressions per user: the first `train_fraction` of each user's
/// stream goes to training, the rest is held out.
pub fn split_logs(log: &[Impression], config: &GenConfig) -> (Vec<Impression>, Vec<Impression>) {
    let per_user = config.impressions_per_user;
    let cut = (config.train_fraction * per_user as f64).ceil() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for chunk in log.chunks(per_user) {
        let cut = cut.min(chunk.len());
        train.extend_from_slice(&chunk[..cut]);
        test.extend_from_slice(&chunk[cut..]);
    }
    (train, test)
}

/// `n` iid draws with `P(item) ∝ click_count + smoothing`.
pub fn sample_negatives(
    click_counts: &[u64],
    n: usize,
    smoothing: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut cumulative = Vec::with_capacity(click_counts.len());
    let mut total = 0.0;
    for &c in click_counts {
        total += c as f64 + smoothing;
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::DegenerateSamplingWeights);
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.random_range(0.0..total);
        let idx = cumulative.partition_point(|&c| c <= t);
        out.push(idx.min(click_counts.len() - 1));
    }
    Ok(out)
}

/// Count, per item, how often it was clicked in a log.
pub fn click_counts(log: &[Impression], num_items: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_items];
    for imp in log {
        if imp.clicked {
            counts[imp.item] += 1;
        }
    }
    counts
}

/// A built training set plus any warnings raised while building it.
#[derive(Debug)]
pub struct TrainingSet {
    pub samples: Vec<Sample>,
    pub positives: usize,
    pub negatives: usize,
    pub warnings: Vec<String>,
}

/// Turn the training-split impressions into the training set: every clicked
/// impression is a positive; per user, `negative_ratio` negatives per
/// positive are drawn from the click-frequency distribution and emitted with
/// zero duration. Output order is canonical: users ascending, each user's
/// positives (impression order) then their negatives (draw order).
pub fn build_training_set(
    log: &[Impression],
    world: &WorldModel,
    config: &GenConfig,
) -> Result<TrainingSet> {
    if log.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let counts = click_counts(log, config.num_items);
    let mut samples = Vec::new();
    let mut positives = 0;
    let mut negatives = 0;
    let mut warnings = Vec::new();

    let mut by_user: Vec<Vec<&Impression>> = vec![Vec::new(); config.num_users];
    for imp in log {
        by_user[imp.user].push(imp);
    }

    let any_clicks = counts.iter().any(|&c| c > 0);
    if !any_clicks {
        warnings.push("no clicks in logs: training set has no positives".to_string());
    }

    for (user, imps) in by_user.iter().enumerate() {
        let user_positives: Vec<&&Impression> = imps.iter().filter(|i| i.clicked).collect();
        if user_positives.is_empty() {
            continue;
        }
        for imp in &user_positives {
            samples.push(world.make_sample(user, imp.item, true, imp.duration_seconds)?);
            positives += 1;
        }
        let n_neg = config.negative_ratio * user_positives.len();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(world.seed, NEG_TAG ^ (user as u64) << 8));
        for item in sample_negatives(&counts, n_neg, config.negative_smoothing, &mut rng)? {
            samples.push(world.make_sample(user, item, false, 0.0)?);
            negatives += 1;
        }
    }

    Ok(TrainingSet {
        samples,
        positives,
        negatives,
        warnings,
    })
}

/// Turn held-out impressions into evaluation samples with their true labels.
pub fn build_test_set(log: &[Impression], world: &WorldModel) -> Result<Vec<Sample>> {
    log.iter()
        .map(|imp| world.make_sample(imp.user, imp.item, imp.clicked, imp.duration_seconds))
        .collect()
}

/// Ground-truth sidecar record for one evaluated (user, item) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    pub user: usize,
    pub item: usize,
    pub ctr: Real,
    pub cvr: Real,
    pub expected_duration: Real,
    pub clickbait: bool,
}

/// Paths of everything one generation run emits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenArtifacts {
    pub schema: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub truth: PathBuf,
    pub world: PathBuf,
    pub users: PathBuf,
    pub items: PathBuf,
    pub positives: usize,
    pub negatives: usize,
    pub test_samples: usize,
    pub warnings: Vec<String>,
}

/// Run the full generation pipeline and write every artifact under `dir`.
pub fn generate_to_dir(config: &GenConfig, seed: u64, dir: &Path) -> Result<GenArtifacts> {
    std::fs::create_dir_all(dir)?;
    let world = generate_world(config, seed)?;
    let log = simulate_logs(&world, config);
    let (train_log, test_log) = split_logs(&log, config);
    let training = build_training_set(&train_log, &world, config)?;
    let test = build_test_set(&test_log, &world)?;

    let schema_path = dir.join("schema.json");
    write_schema(&schema_path, &world.schema())?;
    let train_path = dir.join("train.jsonl");
    write_dataset(&train_path, &training.samples)?;
    let test_path = dir.join("test.jsonl");
    write_dataset(&test_path, &test)?;

    // ground truth for every distinct evaluated pair, ascending
    let truth_path = dir.join("truth.jsonl");
    {
        let pairs: BTreeSet<(usize, usize)> =
            test_log.iter().map(|imp| (imp.user, imp.item)).collect();
        let file = std::fs::File::create(&truth_path)?;
        let mut w = BufWriter::new(file);
        for (user, item) in pairs {
            let rec = TruthRecord {
                user,
                item,
                ctr: world.ctr_star(user, item),
                cvr: world.cvr_star(user, item),
                expected_duration: world.expected_duration(user, item),
                clickbait: world.is_clickbait(item),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }

    let world_path = dir.join("world.json");
    {
        let file = std::fs::File::create(&world_path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &world)?;
        w.flush()?;
    }

    // id catalogs for serving and index building
    let users_path = dir.join("users.jsonl");
    write_catalog(&users_path, world.num_users(), |u| world.user_field_ids(u))?;
    let items_path = dir.join("items.jsonl");
    write_catalog(&items_path, world.num_items(), |i| world.item_field_ids(i))?;

    Ok(GenArtifacts {
        schema: schema_path,
        train: train_path,
        test: test_path,
        truth: truth_path,
        world: world_path,
        users: users_path,
        items: items_path,
        positives: training.positives,
        negatives: training.negatives,
        test_samples: test.len(),
        warnings: training.warnings,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub id: usize,
    pub field_ids: Vec<usize>,
}

fn write_catalog(
    path: &Path,
    count: usize,
    field_ids: impl Fn(usize) -> Vec<usize>,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for id in 0..count {
        serde_json::to_writer(
            &mut w,
            &CatalogRecord {
                id,
                field_ids: field_ids(id),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_world(path: &Path) -> Result<WorldModel> {
    let file = std::fs::File::open(path)?;
    let world: WorldModel = serde_json::from_reader(std::io::BufReader::new(file))?;
    Ok(world)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn read_catalog(path: &Path) -> Result<Vec<CatalogRecord>> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GenConfig {
        GenConfig {
            num_users: 50,
            num_items: 200,
            impressions_per_user: 40,
            ..GenConfig::default()
        }
    }

    #[test]
    fn clickbait_flag_count_is_exact_floor() {
        let cfg = GenConfig {
            num_items: 1000,
            clickbait_fraction: 0.2,
            ..small_config()
        };
        let world = generate_world(&cfg, 1).unwrap();
        assert_eq!(world.clickbait_count(), 200);
    }

    #[test]
    fn same_seed_gives_identical_worlds() {
        let cfg = small_config();
        let a = generate_world(&cfg, 7).unwrap();
        let b = generate_world(&cfg, 7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_world(&cfg, 8).unwrap();
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn clickbait_items_click_more_and_convert_less() {
        // Monte-Carlo over 1e5 user-item pairs at 5 sigma
        let cfg = GenConfig {
            num_users: 500,
            num_items: 1000,
            ..small_config()
        };
        let world = generate_world(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut cb = (0.0, 0.0, 0usize);
        let mut plain = (0.0, 0.0, 0usize);
        for _ in 0..100_000 {
            let u = rng.random_range(0..cfg.num_users);
            let i = rng.random_range(0..cfg.num_items);
            let bucket = if world.is_clickbait(i) { &mut cb } else { &mut plain };
            bucket.0 += world.ctr_star(u, i);
            bucket.1 += world.cvr_star(u, i);
            bucket.2 += 1;
        }
        let (cb_ctr, cb_cvr) = (cb.0 / cb.2 as f64, cb.1 / cb.2 as f64);
        let (pl_ctr, pl_cvr) = (plain.0 / plain.2 as f64, plain.1 / plain.2 as f64);
        // sigma of a mean of n values in [0,1] is at most 0.5/sqrt(n)
        let five_sigma = 5.0 * 0.5 / (cb.2.min(plain.2) as f64).sqrt();
        assert!(cb_ctr > pl_ctr + five_sigma, "ctr: {cb_ctr} vs {pl_ctr}");
        assert!(cb_cvr < pl_cvr - five_sigma, "cvr: {cb_cvr} vs {pl_cvr}");
    }

    #[test]
    fn forced_zero_ctr_gives_no_clicks() {
        let cfg = GenConfig {
            ctr_bias: -1000.0,
            clickbait_ctr_boost: 0.0,
            ..small_config()
        };
        let world = generate_world(&cfg, 4).unwrap();
        let log = simulate_logs(&world, &cfg);
        assert!(log.iter().all(|i| !i.clicked && i.duration_seconds == 0.0));
    }

    #[test]
    fn forced_certain_click_and_long_read() {
        // ctr* = cvr* = 1 and a degenerate duration above the threshold
        let cfg = GenConfig {
            ctr_bias: 1000.0,
            cvr_bias: 1000.0,
            clickbait_ctr_boost: 0.0,
            clickbait_cvr_penalty: 0.0,
            duration_median: 60.0,
            duration_sigma: 0.0,
            ..small_config()
        };
        let world = generate_world(&cfg, 5).unwrap();
        let log = simulate_logs(&world, &cfg);
        assert!(log
            .iter()
            .all(|i| i.clicked && i.duration_seconds == 60.0));
        let samples = build_test_set(&log, &world).unwrap();
        assert!(samples.iter().all(|s| s.long_read));
    }

    #[test]
    fn empirical_click_rate_matches_mean_ctr() {
        let cfg = GenConfig {
            num_users: 500,
            num_items: 500,
            impressions_per_user: 200,
            ..small_config()
        };
        let world = generate_world(&cfg, 6).unwrap();
        let log = simulate_logs(&world, &cfg);
        let n = log.len() as f64;
        let empirical = log.iter().filter(|i| i.clicked).count() as f64 / n;
        let expected: f64 =
            log.iter().map(|i| world.ctr_star(i.user, i.item)).sum::<f64>() / n;
        // 3 sigma binomial band
        let sigma = (expected * (1.0 - expected) / n).sqrt();
        assert!(
            (empirical - expected).abs() < 3.0 * sigma,
            "{empirical} vs {expected} (sigma {sigma})"
        );
    }

    #[test]
    fn clicked_duration_median_sits_near_threshold() {
        let cfg = GenConfig {
            num_users: 400,
            num_items: 400,
            impressions_per_user: 100,
            ..small_config()
        };
        let world = generate_world(&cfg, 11).unwrap();
        let log = simulate_logs(&world, &cfg);
        let mut durations: Vec<f64> = log
            .iter()
            .filter(|i| i.clicked)
            .map(|i| i.duration_seconds)
            .collect();
        assert!(durations.len() > 1000);
        durations.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = durations[durations.len() / 2];
        // approximately the configured threshold
        assert!(
            (median / cfg.duration_threshold - 1.0).abs() < 0.25,
            "median {median}"
        );
    }

    #[test]
    fn negative_sampling_probabilities_are_normalized_counts() {
        // counts [3,1,0] with smoothing 0 -> probabilities [0.75, 0.25, 0]
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draws = sample_negatives(&[3, 1, 0], 200_000, 0.0, &mut rng).unwrap();
        let mut freq = [0.0; 3];
        for d in &draws {
            freq[*d] += 1.0 / draws.len() as f64;
        }
        assert!((freq[0] - 0.75).abs() < 0.005);
        assert!((freq[1] - 0.25).abs() < 0.005);
        assert_eq!(freq[2], 0.0);
    }

    #[test]
    fn uniform_counts_sample_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let draws = sample_negatives(&[5, 5, 5, 5], 100_000, 0.0, &mut rng).unwrap();
        let mut freq = [0.0; 4];
        for d in &draws {
            freq[*d] += 1.0 / draws.len() as f64;
        }
        for f in freq {
            assert!((f - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn multinomial_band_on_weighted_counts() {
        // 1e5 draws from counts [5,3,2]: empirical within 3 sigma of [.5,.3,.2]
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 100_000;
        let draws = sample_negatives(&[5, 3, 2], n, 0.0, &mut rng).unwrap();
        let mut freq = [0.0; 3];
        for d in &draws {
            freq[*d] += 1.0 / n as f64;
        }
        for (f, p) in freq.iter().zip([0.5, 0.3, 0.2]) {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() < 3.0 * sigma, "{f} vs {p}");
        }
    }

    #[test]
    fn all_zero_counts_without_smoothing_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let err = sample_negatives(&[0, 0], 5, 0.0, &mut rng).unwrap_err();
        assert!(matches!(err, Error::DegenerateSamplingWeights));
        // smoothing rescues cold items
        assert!(sample_negatives(&[0, 0], 5, 1.0, &mut rng).is_ok());
    }

    #[test]
    fn training_set_ratio_is_exact_and_invariants_hold() {
        let cfg = small_config();
        let world = generate_world(&cfg, 16).unwrap();
        let log = simulate_logs(&world, &cfg);
        let (train_log, _) = split_logs(&log, &cfg);
        let ts = build_training_set(&train_log, &world, &cfg).unwrap();
        assert_eq!(ts.negatives, cfg.negative_ratio * ts.positives);
        assert!(ts.warnings.is_empty());
        let schema = world.schema();
        for s in &ts.samples {
            s.check_against(&schema).unwrap();
        }
    }

    #[test]
    fn no_clicks_yields_empty_set_with_warning() {
        let cfg = GenConfig {
            ctr_bias: -1000.0,
            clickbait_ctr_boost: 0.0,
            ..small_config()
        };
        let world = generate_world(&cfg, 17).unwrap();
        let log = simulate_logs(&world, &cfg);
        let ts = build_training_set(&log, &world, &cfg).unwrap();
        assert_eq!(ts.positives, 0);
        assert_eq!(ts.samples.len(), 0);
        assert!(!ts.warnings.is_empty());
    }

    #[test]
    fn boundary_duration_is_not_a_long_read() {
        let cfg = small_config();
        let world = generate_world(&cfg, 18).unwrap();
        let s = world.make_sample(0, 0, true, 50.0).unwrap();
        assert!(!s.long_read);
    }

    #[test]
    fn generation_is_byte_identical_per_seed() {
        let cfg = small_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate_to_dir(&cfg, 21, dir_a.path()).unwrap();
        generate_to_dir(&cfg, 21, dir_b.path()).unwrap();
        for name in [
            "schema.json",
            "train.jsonl",
            "test.jsonl",
            "truth.jsonl",
            "world.json",
            "users.jsonl",
            "items.jsonl",
        ] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "artifact {name} differs between runs");
        }
    }

    #[test]
    fn truncated_means_match_high_precision_oracle() {
        // median 50, sigma 0.8, threshold 50: conditional means evaluated
        // independently at 30 digits; agreement is limited by the normal-CDF
        // implementation (~1e-11 absolute), far below metric needs
        let (long, short) = truncated_means(50.0, 0.8, 50.0);
        assert!((long - 108.53758129223009).abs() < 1e-6);
        assert!((short - 29.175195141365617).abs() < 1e-6);
    }

    #[test]
    fn expected_duration_formula_is_exposed() {
        let cfg = small_config();
        let world = generate_world(&cfg, 19).unwrap();
        let (u, i) = (3, 5);
        let expected = world.ctr_star(u, i)
            * (world.cvr_star(u, i) * world.mean_duration_long
                + (1.0 - world.cvr_star(u, i)) * world.mean_duration_short);
        assert_eq!(world.expected_duration(u, i), expected);
    }

    #[test]
    fn drawn_durations_respect_their_side() {
        let cfg = small_config();
        let world = generate_world(&cfg, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..2000 {
            let long = world.draw_duration(true, &mut rng);
            assert!(long > cfg.duration_threshold, "long draw {long}");
            let short = world.draw_duration(false, &mut rng);
            assert!(short <= cfg.duration_threshold, "short draw {short}");
        }
    }

    #[test]
    fn invalid_config_is_rejected_with_key() {
        let cfg = GenConfig {
            clickbait_fraction: 1.5,
            ..GenConfig::default()
        };
        let err = generate_world(&cfg, 1).unwrap_err();
        assert!(err.to_string().contains("clickbait_fraction"));
    }
}
