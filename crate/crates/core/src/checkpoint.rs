//! Self-describing JSON checkpoints for teacher and student models.
//!
//! The file carries the schema, layer shapes and every parameter tensor;
//! floats survive the JSON round trip bit-exactly (shortest-round-trip
//! formatting). Gradient buffers are never persisted.

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelShape;
use crate::error::{Error, Result};
use crate::features::{EmbeddingSet, FeatureSchema};
use crate::numerics::{Activation, DenseLayer};
use crate::student::StudentModel;
use crate::teacher::TeacherModel;
use crate::{DenseNet, Matrix, Vector};

const FORMAT: &str = "dmtl-checkpoint-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerSnapshot {
    weight: Matrix,
    bias: Vector,
    activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetSnapshot {
    layers: Vec<LayerSnapshot>,
}

impl NetSnapshot {
    fn of(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerSnapshot {
                    weight: l.weight.clone(),
                    bias: l.bias.clone(),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    fn restore(self) -> DenseNet {
        DenseNet::from_layers(
            self.layers
                .into_iter()
                .map(|l| DenseLayer {
                    grad_weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    grad_bias: Vector::zeros(l.bias.len()),
                    weight: l.weight,
                    bias: l.bias,
                    activation: l.activation,
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
enum ModelSnapshot {
    Teacher {
        embeddings: Vec<Matrix>,
        gate_click: Matrix,
        gate_duration: Matrix,
        experts: Vec<NetSnapshot>,
        head_click: NetSnapshot,
        head_duration: NetSnapshot,
    },
    Student {
        embeddings: Vec<Matrix>,
        user_tower: NetSnapshot,
        item_tower: NetSnapshot,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    schema: FeatureSchema,
    shape: ModelShape,
    #[serde(flatten)]
    model: ModelSnapshot,
}

fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, ckpt)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
    if ckpt.format != FORMAT {
        return Err(Error::CorruptFile {
            path: path.display().to_string(),
            reason: format!("unexpected checkpoint format `{}`", ckpt.format),
        });
    }
    Ok(ckpt)
}

pub fn save_teacher(path: impl AsRef<Path>, model: &TeacherModel) -> Result<()> {
    let (embeddings, experts, gate_click, gate_duration, head_click, head_duration) = model.parts();
    let ckpt = Checkpoint {
        format: FORMAT.to_string(),
        schema: model.schema().clone(),
        shape: model.shape().clone(),
        model: ModelSnapshot::Teacher {
            embeddings: embeddings.tables().to_vec(),
            gate_click: gate_click.clone(),
            gate_duration: gate_duration.clone(),
            experts: experts.iter().map(NetSnapshot::of).collect(),
            head_click: NetSnapshot::of(head_click),
            head_duration: NetSnapshot::of(head_duration),
        },
    };
    write_checkpoint(path.as_ref(), &ckpt)
}

pub fn load_teacher(path: impl AsRef<Path>) -> Result<TeacherModel> {
    let path = path.as_ref();
    let ckpt = read_checkpoint(path)?;
    match ckpt.model {
        ModelSnapshot::Teacher {
            embeddings,
            gate_click,
            gate_duration,
            experts,
            head_click,
            head_duration,
        } => {
            let emb = EmbeddingSet::from_tables(&ckpt.schema, embeddings)?;
            Ok(TeacherModel::from_parts(
                ckpt.schema,
                ckpt.shape,
                emb,
                experts.into_iter().map(NetSnapshot::restore).collect(),
                gate_click,
                gate_duration,
                head_click.restore(),
                head_duration.restore(),
            ))
        }
        ModelSnapshot::Student { .. } => Err(Error::CorruptFile {
            path: path.display().to_string(),
            reason: "expected a teacher checkpoint, found a student".into(),
        }),
    }
}

pub fn save_student(path: impl AsRef<Path>, model: &StudentModel) -> Result<()> {
    let (embeddings, user_tower, item_tower) = model.parts();
    let ckpt = Checkpoint {
        format: FORMAT.to_string(),
        schema: model.schema().clone(),
        shape: model.shape().clone(),
        model: ModelSnapshot::Student {
            embeddings: embeddings.tables().to_vec(),
            user_tower: NetSnapshot::of(user_tower),
            item_tower: NetSnapshot::of(item_tower),
        },
    };
    write_checkpoint(path.as_ref(), &ckpt)
}

pub fn load_student(path: impl AsRef<Path>) -> Result<StudentModel> {
    let path = path.as_ref();
    let ckpt = read_checkpoint(path)?;
    match ckpt.model {
        ModelSnapshot::Student {
            embeddings,
            user_tower,
            item_tower,
        } => {
            let emb = EmbeddingSet::from_tables(&ckpt.schema, embeddings)?;
            Ok(StudentModel::from_parts(
                ckpt.schema,
                ckpt.shape,
                emb,
                user_tower.restore(),
                item_tower.restore(),
            ))
        }
        ModelSnapshot::Teacher { .. } => Err(Error::CorruptFile {
            path: path.display().to_string(),
            reason: "expected a student checkpoint, found a teacher".into(),
        }),
    }
}
