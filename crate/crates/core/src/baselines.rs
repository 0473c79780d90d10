//! The three competing double-tower models: same architecture,
//! initialization, optimizer and batch stream as the distilled student, so
//! the loss and labeling are the only experimental variables.
//!
//! - Regression: the inner product regresses the reading duration by square
//!   loss, with zero duration for negatives.
//! - Classification: cross entropy of `σ(dot)` against the long-read label.
//! - Click: cross entropy of `σ(dot)` against the click label.

use serde::{Deserialize, Serialize};

use crate::config::{ModelShape, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, Sample};
use crate::numerics::{bce, bce_grad, sigmoid};
use crate::student::StudentModel;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Regression,
    Classification,
    Click,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [
        BaselineKind::Regression,
        BaselineKind::Classification,
        BaselineKind::Click,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Regression => "dssm-regression",
            BaselineKind::Classification => "dssm-classification",
            BaselineKind::Click => "dssm-click",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" | "dssm-regression" => Ok(BaselineKind::Regression),
            "classification" | "dssm-classification" => Ok(BaselineKind::Classification),
            "click" | "dssm-click" => Ok(BaselineKind::Click),
            other => Err(Error::InvalidConfig {
                key: "baseline".into(),
                reason: format!("unknown kind `{other}`"),
            }),
        }
    }
}

fn per_sample(kind: BaselineKind, dot: Real, sample: &Sample) -> (Real, Real) {
    match kind {
        BaselineKind::Regression => {
            // raw inner product against seconds; negatives count as zero
            let err = dot - sample.duration_seconds;
            (err * err, 2.0 * err)
        }
        BaselineKind::Classification => bce_on_dot(dot, sample.duration_label()),
        BaselineKind::Click => bce_on_dot(dot, sample.click_label()),
    }
}

fn bce_on_dot(dot: Real, label: Real) -> (Real, Real) {
    let p = sigmoid(dot);
    (bce(p, label), bce_grad(p, label) * p * (1.0 - p))
}

/// Summed square loss of the inner product against duration seconds.
pub fn regression_loss(batch: &[Sample], model: &StudentModel) -> Result<Real> {
    batch_loss(BaselineKind::Regression, batch, model)
}

/// Summed cross entropy of `σ(dot)` against the long-read label.
pub fn classification_loss(batch: &[Sample], model: &StudentModel) -> Result<Real> {
    batch_loss(BaselineKind::Classification, batch, model)
}

/// Summed cross entropy of `σ(dot)` against the click label.
pub fn click_loss(batch: &[Sample], model: &StudentModel) -> Result<Real> {
    batch_loss(BaselineKind::Click, batch, model)
}

/// Batch loss of the given kind without touching gradients.
pub fn batch_loss(kind: BaselineKind, batch: &[Sample], model: &StudentModel) -> Result<Real> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for sample in batch {
        let dot = model.score(sample)?;
        total += per_sample(kind, dot, sample).0;
    }
    Ok(total)
}

/// One optimizer step of the given kind over a batch; returns the summed
/// loss at the pre-update parameters.
pub fn baseline_train_step(
    kind: BaselineKind,
    batch: &[Sample],
    model: &mut StudentModel,
    optimizer: &mut crate::Optimizer,
) -> Result<Real> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    model.zero_grads();
    let mut total = 0.0;
    for sample in batch {
        total += model.accumulate_sample(sample, |dot| per_sample(kind, dot, sample))?;
    }
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss(total));
    }
    optimizer.step(model.param_tensors());
    Ok(total)
}

/// Score a sample for evaluation: raw inner product for the regression
/// model (rank-based metrics need no calibration), `σ(dot)` otherwise.
pub fn baseline_score(kind: BaselineKind, model: &StudentModel, sample: &Sample) -> Result<Real> {
    let dot = model.score(sample)?;
    Ok(match kind {
        BaselineKind::Regression => dot,
        _ => sigmoid(dot),
    })
}

/// Train a baseline of the requested kind from scratch, deterministic per
/// seed. Initialization and batch order match the distilled student's.
pub fn train_baseline(
    kind: BaselineKind,
    dataset: &[Sample],
    schema: &FeatureSchema,
    shape: &ModelShape,
    cfg: &TrainConfig,
) -> Result<StudentModel> {
    train_baseline_with(kind, dataset, schema, shape, cfg, |_| {})
}

/// [`train_baseline`] with a per-epoch stats callback.
pub fn train_baseline_with(
    kind: BaselineKind,
    dataset: &[Sample],
    schema: &FeatureSchema,
    shape: &ModelShape,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&crate::train::EpochStats),
) -> Result<StudentModel> {
    cfg.validate()?;
    let mut model = StudentModel::init(schema, shape, cfg.seed)?;
    let mut optimizer = cfg.optimizer.build();
    let mut data = dataset.to_vec();
    let mut rng = crate::train::shuffle_rng(cfg.seed);
    for epoch in 0..cfg.epochs {
        crate::train::shuffle(&mut data, &mut rng);
        let mut total = 0.0;
        for batch in data.chunks(cfg.batch_size) {
            total += baseline_train_step(kind, batch, &mut model, &mut optimizer)?;
        }
        on_epoch(&crate::train::EpochStats {
            epoch,
            samples: data.len(),
            teacher_loss: 0.0,
            student_loss: total / data.len() as Real,
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FieldSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![FieldSpec::new("user_id", 7), FieldSpec::new("u_a", 5)],
            vec![FieldSpec::new("item_id", 9), FieldSpec::new("i_a", 6)],
            0,
            4,
        )
        .unwrap()
    }

    fn tiny_shape() -> ModelShape {
        ModelShape {
            num_experts: 2,
            expert_hidden: vec![8, 4],
            head_hidden: vec![4],
            tower_hidden: vec![8, 4],
        }
    }

    fn random_sample(schema: &FeatureSchema, rng: &mut ChaCha8Rng) -> Sample {
        let user_ids = schema
            .user_fields
            .iter()
            .map(|f| rng.random_range(0..f.cardinality))
            .collect();
        let item_ids = schema
            .item_fields
            .iter()
            .map(|f| rng.random_range(0..f.cardinality))
            .collect();
        let clicked = rng.random_bool(0.5);
        let duration = if clicked {
            rng.random_range(1.0..120.0)
        } else {
            0.0
        };
        Sample::new(user_ids, item_ids, vec![], clicked, duration, 50.0).unwrap()
    }

    fn random_batch(n: usize, seed: u64) -> (FeatureSchema, Vec<Sample>) {
        let schema = tiny_schema();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = (0..n).map(|_| random_sample(&schema, &mut rng)).collect();
        (schema, batch)
    }

    fn zeroed_model(schema: &FeatureSchema) -> StudentModel {
        let mut model = StudentModel::init(schema, &tiny_shape(), 1).unwrap();
        for i in 0..model.embeddings().num_tables() {
            model.embeddings_mut().table_mut(i).fill(0.0);
        }
        let (u, v) = model.towers_mut();
        for net in [u, v] {
            for layer in net.layers_mut() {
                layer.weight.fill(0.0);
                layer.bias.fill(0.0);
            }
        }
        model
    }

    #[test]
    fn regression_loss_zero_at_exact_fit() {
        // durations set to the model's own predictions
        let (schema, mut batch) = random_batch(6, 90);
        let model = StudentModel::init(&schema, &tiny_shape(), 2).unwrap();
        for s in &mut batch {
            let dot = model.score(s).unwrap();
            if dot > 0.0 {
                s.clicked = true;
                s.duration_seconds = dot;
                s.long_read = dot > 50.0;
            } else {
                s.clicked = false;
                s.duration_seconds = 0.0;
                s.long_read = false;
            }
        }
        // samples whose duration was forced to a positive dot fit exactly;
        // negatives contribute dot^2
        let expected: f64 = batch
            .iter()
            .map(|s| {
                let dot = model.score(s).unwrap();
                (dot - s.duration_seconds).powi(2)
            })
            .sum();
        let loss = regression_loss(&batch, &model).unwrap();
        assert!((loss - expected).abs() < 1e-12);
        if batch.iter().all(|s| s.clicked) {
            assert!(loss < 1e-20);
        }
    }

    #[test]
    fn regression_loss_single_sample_square() {
        // prediction 3, duration 5 -> (3-5)^2 = 4; forced via zero towers
        // plus a bias that yields dot = 3... simpler: oracle comparison below
        let (schema, batch) = random_batch(1, 91);
        let model = zeroed_model(&schema);
        let mut s = batch[0].clone();
        s.clicked = true;
        s.duration_seconds = 2.0;
        s.long_read = false;
        // dot = 0 for the zeroed model, so loss = (0-2)^2 = 4
        let loss = regression_loss(&[s], &model).unwrap();
        assert_eq!(loss, 4.0);
    }

    #[test]
    fn losses_match_loop_oracles_on_random_batch() {
        let (schema, batch) = random_batch(24, 92);
        let model = StudentModel::init(&schema, &tiny_shape(), 3).unwrap();

        let mut reg = 0.0;
        let mut cls = 0.0;
        let mut clk = 0.0;
        for s in &batch {
            let dot = model
                .user_vector(s)
                .unwrap()
                .dot(&model.item_vector(s).unwrap())
                .unwrap();
            reg += (dot - s.duration_seconds) * (dot - s.duration_seconds);
            let p = 1.0 / (1.0 + (-dot).exp());
            let z = if s.long_read { 1.0 } else { 0.0 };
            let y = if s.clicked { 1.0 } else { 0.0 };
            cls += -(z * p.ln() + (1.0 - z) * (1.0 - p).ln());
            clk += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        }

        assert!((regression_loss(&batch, &model).unwrap() - reg).abs() < 1e-9);
        assert!((classification_loss(&batch, &model).unwrap() - cls).abs() < 1e-9);
        assert!((click_loss(&batch, &model).unwrap() - clk).abs() < 1e-9);
    }

    #[test]
    fn zero_scores_cost_ln2_per_sample() {
        let (schema, batch) = random_batch(10, 93);
        let model = zeroed_model(&schema);
        let n = batch.len() as f64;
        let ln2 = std::f64::consts::LN_2;
        assert!((classification_loss(&batch, &model).unwrap() - n * ln2).abs() < 1e-12);
        assert!((click_loss(&batch, &model).unwrap() - n * ln2).abs() < 1e-12);
    }

    #[test]
    fn perfect_confident_classification_is_near_zero() {
        // scale a trained-ish direction: force huge aligned vectors via bias
        let (schema, mut batch) = random_batch(6, 94);
        let mut model = zeroed_model(&schema);
        {
            let (u, v) = model.towers_mut();
            u.layers_mut().last_mut().unwrap().bias[0] = 30.0;
            v.layers_mut().last_mut().unwrap().bias[0] = 30.0;
        }
        // dot = 900 -> sigmoid ~ 1; make all samples long reads
        for s in &mut batch {
            s.clicked = true;
            s.duration_seconds = 80.0;
            s.long_read = true;
        }
        let loss = classification_loss(&batch, &model).unwrap();
        assert!(loss < batch.len() as f64 * 2e-7);
    }

    #[test]
    fn zero_epochs_returns_initialized_model_unchanged() {
        let (schema, batch) = random_batch(20, 95);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let trained =
            train_baseline(BaselineKind::Click, &batch, &schema, &tiny_shape(), &cfg).unwrap();
        let fresh = StudentModel::init(&schema, &tiny_shape(), cfg.seed).unwrap();
        assert_eq!(trained.flat_params(), fresh.flat_params());
    }

    #[test]
    fn click_baseline_loss_decreases_over_ten_epochs() {
        let (schema, dataset) = random_batch(100, 96);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 25,
            ..TrainConfig::default()
        };
        let mut model = StudentModel::init(&schema, &tiny_shape(), cfg.seed).unwrap();
        let mut optimizer = cfg.optimizer.build();
        let mut epoch_losses = Vec::new();
        for _ in 0..10 {
            let mut total = 0.0;
            for chunk in dataset.chunks(cfg.batch_size) {
                total +=
                    baseline_train_step(BaselineKind::Click, chunk, &mut model, &mut optimizer)
                        .unwrap();
            }
            epoch_losses.push(total);
        }
        // monotone within optimizer noise: allow tiny upticks only
        for w in epoch_losses.windows(2) {
            assert!(w[1] <= w[0] * 1.02, "epoch losses: {epoch_losses:?}");
        }
        assert!(epoch_losses.last().unwrap() < &epoch_losses[0]);
    }

    #[test]
    fn baselines_share_initialization_with_student_per_seed() {
        let (schema, _) = random_batch(1, 97);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let student = StudentModel::init(&schema, &tiny_shape(), cfg.seed).unwrap();
        for kind in BaselineKind::ALL {
            let b = train_baseline(kind, &[], &schema, &tiny_shape(), &cfg).unwrap();
            assert_eq!(b.flat_params(), student.flat_params());
        }
    }

    #[test]
    fn baseline_gradients_match_finite_differences() {
        use crate::numerics::grad_check;
        let (schema, batch) = random_batch(16, 98);
        for kind in BaselineKind::ALL {
            let mut model = StudentModel::init(&schema, &tiny_shape(), 4).unwrap();
            model.zero_grads();
            for s in &batch {
                model
                    .accumulate_sample(s, |dot| per_sample(kind, dot, s))
                    .unwrap();
            }
            let params = model.flat_params();
            let analytic = model.flat_grads();
            let mut probe = model.clone();
            let mut loss = |p: &[f64]| {
                probe.set_flat_params(p);
                batch_loss(kind, &batch, &probe).unwrap()
            };
            let err = grad_check(&mut loss, &params, &analytic, 1e-5).unwrap();
            assert!(err < 1e-4, "{kind:?}: max relative error {err}");
        }
    }

    #[test]
    fn unknown_kind_string_is_rejected() {
        let err = "dssm-magic".parse::<BaselineKind>().unwrap_err();
        assert!(err.to_string().contains("unknown kind"));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (schema, _) = random_batch(1, 99);
        let model = StudentModel::init(&schema, &tiny_shape(), 5).unwrap();
        assert!(matches!(
            regression_loss(&[], &model).unwrap_err(),
            Error::EmptyBatch
        ));
    }
}
