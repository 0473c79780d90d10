//! Offline AUC evaluation and the simulated serving metric (average
//! ground-truth expected duration of the items each model retrieves).
//!
//! AUC is the probability that a random positive outranks a random negative,
//! ties counting one half. It is computed by the rank-sum method on sorted
//! scores, with pair counts accumulated in integers so the result is exact
//! and bit-for-bit equal to brute-force pair counting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::datagen::WorldModel;
use crate::error::{Error, Result};
use crate::features::Sample;
use crate::numerics::sigmoid;
use crate::retrieval::RetrievalIndex;
use crate::student::StudentModel;
use crate::{Real, Vector};

/// Probability that a random positive is scored above a random negative;
/// ties count 0.5. Rejects single-class inputs.
pub fn auc(scores: &[Real], labels: &[bool]) -> Result<Real> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass {
            positives,
            negatives,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // walk tie groups in ascending score order; count (positive, negative)
    // pairs in integer halves: 2 per win, 1 per tie
    let mut half_pairs: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut pos_in_group: u64 = 0;
        let mut neg_in_group: u64 = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos_in_group += 1;
            } else {
                neg_in_group += 1;
            }
            j += 1;
        }
        half_pairs += 2 * pos_in_group * negatives_below + pos_in_group * neg_in_group;
        negatives_below += neg_in_group;
        i = j;
    }
    Ok(half_pairs as Real / (2 * positives as u64 * negatives as u64) as Real)
}

/// How a tower model turns an inner product into its ranking score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// `σ(dot)`: the distilled student and the classification/click models.
    Probability,
    /// Raw inner product: the regression model (duration scale).
    RawInnerProduct,
}

impl ScoreMode {
    pub fn for_baseline(kind: BaselineKind) -> Self {
        match kind {
            BaselineKind::Regression => ScoreMode::RawInnerProduct,
            _ => ScoreMode::Probability,
        }
    }
}

/// One model under evaluation.
pub struct EvaluatedModel<'a> {
    pub name: String,
    pub model: &'a StudentModel,
    pub mode: ScoreMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineRow {
    pub model: String,
    /// Duration-task AUC: positives are clicked impressions read past the
    /// threshold, everything else is negative.
    pub auc: Real,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServingRow {
    pub model: String,
    /// Mean ground-truth expected duration (seconds) over served items.
    pub avg_expected_duration: Real,
    /// Fraction of served items flagged as click bait.
    pub clickbait_share: Real,
    /// Mean recall@k of the pruned index against the exact scan.
    pub pruned_recall: Real,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub dataset_hash: String,
    pub k: usize,
    pub offline: Vec<OfflineRow>,
    pub serving: Vec<ServingRow>,
    pub warnings: Vec<String>,
}

/// Score every test sample with every model and compute the duration-task
/// AUC. Tower inputs repeat heavily across samples, so vectors are cached
/// per distinct id tuple.
pub fn evaluate_offline(models: &[EvaluatedModel], test_set: &[Sample]) -> Result<Vec<OfflineRow>> {
    if test_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let labels: Vec<bool> = test_set.iter().map(|s| s.long_read).collect();
    let mut rows = Vec::with_capacity(models.len());
    for m in models {
        let scores = score_all(m, test_set)?;
        rows.push(OfflineRow {
            model: m.name.clone(),
            auc: auc(&scores, &labels)?,
        });
    }
    Ok(rows)
}

/// All scores of one model over a sample set, with tower-vector caching.
pub fn score_all(m: &EvaluatedModel, samples: &[Sample]) -> Result<Vec<Real>> {
    let mut user_cache: HashMap<&[usize], Vector> = HashMap::new();
    let mut item_cache: HashMap<&[usize], Vector> = HashMap::new();
    let mut scores = Vec::with_capacity(samples.len());
    for s in samples {
        let u = match user_cache.get(s.user_ids.as_slice()) {
            Some(v) => v.clone(),
            None => {
                let v = m.model.user_vector(s)?;
                user_cache.insert(&s.user_ids, v.clone());
                v
            }
        };
        let v = match item_cache.get(s.item_ids.as_slice()) {
            Some(v) => v.clone(),
            None => {
                let v = m.model.item_vector(s)?;
                item_cache.insert(&s.item_ids, v.clone());
                v
            }
        };
        let dot = u.dot(&v)?;
        scores.push(match m.mode {
            ScoreMode::Probability => sigmoid(dot),
            ScoreMode::RawInnerProduct => dot,
        });
    }
    Ok(scores)
}

/// Serving-simulation settings.
#[derive(Debug, Clone, Copy)]
pub struct ServingConfig {
    pub k: usize,
    /// Cells for the pruned-recall measurement.
    pub ivf_cells: usize,
    pub ivf_probes: usize,
    pub kmeans_seed: u64,
}

impl Default for ServingConfig {
    fn default() -> Self {
        Self {
            k: 100,
            ivf_cells: 64,
            ivf_probes: 8,
            kmeans_seed: 12345,
        }
    }
}

/// Simulated online metric: for every user, retrieve top-k items through the
/// index built from the model's item vectors; report the mean ground-truth
/// expected duration and the clickbait share over all served pairs, plus the
/// pruned index's recall against the exact scan.
pub fn simulate_serving(
    models: &[EvaluatedModel],
    world: &WorldModel,
    cfg: &ServingConfig,
) -> Result<(Vec<ServingRow>, Vec<String>)> {
    let mut warnings = Vec::new();
    let corpus = world.num_items();
    let k = if cfg.k > corpus {
        warnings.push(format!("k={} exceeds corpus size {corpus}; clamped", cfg.k));
        corpus
    } else {
        cfg.k
    };

    let items: Vec<(u64, Vec<usize>)> = (0..corpus)
        .map(|i| (i as u64, world.item_field_ids(i)))
        .collect();

    let mut rows = Vec::with_capacity(models.len());
    for m in models {
        let exact = RetrievalIndex::build(&items, m.model, "serving")?;
        let pruned = exact
            .clone()
            .with_ivf(cfg.ivf_cells.min(corpus), cfg.kmeans_seed)?;

        let mut duration_sum = 0.0;
        let mut clickbait_hits = 0usize;
        let mut served = 0usize;
        let mut recall_sum = 0.0;
        for user in 0..world.num_users() {
            let sample = world.make_sample(user, 0, false, 0.0)?;
            let u = m.model.user_vector(&sample)?;
            let top = exact.topk(&u, k)?;
            let approx = pruned.topk_pruned(&u, k, cfg.ivf_probes)?;
            recall_sum += crate::retrieval::recall_at_k(&top, &approx);
            for (item, _) in top {
                let item = item as usize;
                duration_sum += world.expected_duration(user, item);
                clickbait_hits += world.is_clickbait(item) as usize;
                served += 1;
            }
        }
        rows.push(ServingRow {
            model: m.name.clone(),
            avg_expected_duration: duration_sum / served as Real,
            clickbait_share: clickbait_hits as Real / served as Real,
            pruned_recall: recall_sum / world.num_users() as Real,
        });
    }
    Ok((rows, warnings))
}

/// Upper bound for the serving metric: rank items by true expected duration.
pub fn oracle_serving_duration(world: &WorldModel, k: usize) -> Real {
    let k = k.min(world.num_items());
    let mut total = 0.0;
    let mut served = 0usize;
    for user in 0..world.num_users() {
        let mut durations: Vec<Real> = (0..world.num_items())
            .map(|item| world.expected_duration(user, item))
            .collect();
        durations.sort_by(|a, b| b.partial_cmp(a).unwrap());
        total += durations[..k].iter().sum::<Real>();
        served += k;
    }
    total / served as Real
}

/// Render the report as an aligned text table: offline AUC first, then the
/// simulated serving block.
pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "seed {}  dataset {}\n\n",
        report.seed,
        &report.dataset_hash[..12.min(report.dataset_hash.len())]
    ));
    let name_w = report
        .offline
        .iter()
        .map(|r| r.model.len())
        .chain(report.serving.iter().map(|r| r.model.len()))
        .max()
        .unwrap_or(8)
        .max("models".len());
    out.push_str(&format!("{:<name_w$}  duration-AUC\n", "models"));
    for row in &report.offline {
        out.push_str(&format!("{:<name_w$}  {:.4}\n", row.model, row.auc));
    }
    out.push('\n');
    out.push_str(&format!(
        "{:<name_w$}  avg expected duration (s)  clickbait share  recall@{}\n",
        "models", report.k
    ));
    for row in &report.serving {
        out.push_str(&format!(
            "{:<name_w$}  {:>25.3}  {:>15.4}  {:>8.3}\n",
            row.model, row.avg_expected_duration, row.clickbait_share, row.pruned_recall
        ));
    }
    for w in &report.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}
