//! Training loops and the seeded batch stream shared by the distilled
//! student and all baselines, so the loss/labeling is the only variable
//! between them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelShape, TrainConfig};
use crate::error::Result;
use crate::features::{FeatureSchema, Sample};
use crate::student::{joint_train_step, StudentModel};
use crate::teacher::TeacherModel;
use crate::Real;

/// Stream tag for the teacher's init seed; the student keeps the bare seed
/// so the baselines can share its initialization exactly.
const TEACHER_SEED_TAG: u64 = 0x7465_6163_6865_72; // "teacher"

/// Derive an independent sub-seed (splitmix64 step).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG that drives epoch shuffling; identical across all models per seed.
pub fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7368_7566_666c_65)) // "shuffle"
}

/// In-place Fisher-Yates, hand-rolled so byte reproducibility depends only
/// on this crate.
pub fn shuffle<T>(data: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..data.len()).rev() {
        let j = rng.random_range(0..=i);
        data.swap(i, j);
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub samples: usize,
    /// Mean weighted teacher loss per sample (zero for baseline runs).
    pub teacher_loss: Real,
    /// Mean distillation (or baseline) loss per sample.
    pub student_loss: Real,
}

/// Train teacher and student jointly; the teacher minimizes its weighted
/// two-task loss while the student distills the frozen per-batch teacher
/// estimates.
pub fn train_dmtl(
    dataset: &[Sample],
    schema: &FeatureSchema,
    shape: &ModelShape,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(TeacherModel, StudentModel)> {
    cfg.validate()?;
    let mut teacher = TeacherModel::init(schema, shape, derive_seed(cfg.seed, TEACHER_SEED_TAG))?;
    let mut student = StudentModel::init(schema, shape, cfg.seed)?;
    let mut teacher_opt = cfg.teacher_optimizer.unwrap_or(cfg.optimizer).build();
    let mut student_opt = cfg.optimizer.build();

    let mut data = dataset.to_vec();
    let mut rng = shuffle_rng(cfg.seed);
    for epoch in 0..cfg.epochs {
        shuffle(&mut data, &mut rng);
        let mut teacher_total = 0.0;
        let mut student_total = 0.0;
        for batch in data.chunks(cfg.batch_size) {
            let (tl, sl) = joint_train_step(
                batch,
                &mut teacher,
                &mut student,
                cfg,
                &mut teacher_opt,
                &mut student_opt,
            )?;
            teacher_total += tl.total;
            student_total += sl;
        }
        on_epoch(&EpochStats {
            epoch,
            samples: data.len(),
            teacher_loss: teacher_total / data.len() as Real,
            student_loss: student_total / data.len() as Real,
        });
    }
    Ok((teacher, student))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_separates_streams() {
        assert_ne!(derive_seed(7, 1), derive_seed(7, 2));
        assert_eq!(derive_seed(7, 1), derive_seed(7, 1));
    }

    #[test]
    fn shuffle_is_deterministic_per_seed() {
        let mut a: Vec<u32> = (0..100).collect();
        let mut b: Vec<u32> = (0..100).collect();
        shuffle(&mut a, &mut shuffle_rng(5));
        shuffle(&mut b, &mut shuffle_rng(5));
        assert_eq!(a, b);
        let mut c: Vec<u32> = (0..100).collect();
        shuffle(&mut c, &mut shuffle_rng(6));
        assert_ne!(a, c);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut a: Vec<u32> = (0..50).collect();
        shuffle(&mut a, &mut shuffle_rng(9));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<u32>>());
    }
}
