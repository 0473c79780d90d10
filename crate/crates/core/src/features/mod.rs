//! Feature schema, sample representation, embedding tables and construction
//! of the teacher input and the tower inputs.
//!
//! Encoded lengths are a pure function of the schema. Teacher and student own
//! disjoint [`EmbeddingSet`]s; mutating one never touches the other.

mod dataset;

pub use dataset::{read_dataset, read_schema, write_dataset, write_schema, RawRecord};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{FlatReader, ParamTensor};
use crate::{Matrix, Real, Vector};

/// One categorical field: a name and the number of distinct ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub cardinality: usize,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            cardinality,
        }
    }
}

/// Categorical/dense layout shared by every model trained on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub user_fields: Vec<FieldSpec>,
    pub item_fields: Vec<FieldSpec>,
    pub dense_dim: usize,
    pub embedding_dim: usize,
}

impl FeatureSchema {
    pub fn new(
        user_fields: Vec<FieldSpec>,
        item_fields: Vec<FieldSpec>,
        dense_dim: usize,
        embedding_dim: usize,
    ) -> Result<Self> {
        let schema = Self {
            user_fields,
            item_fields,
            dense_dim,
            embedding_dim,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::InvalidSchema("embedding_dim must be >= 1".into()));
        }
        if self.user_fields.is_empty() || self.item_fields.is_empty() {
            return Err(Error::InvalidSchema(
                "need at least one user field and one item field".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for f in self.user_fields.iter().chain(&self.item_fields) {
            if f.cardinality == 0 {
                return Err(Error::InvalidSchema(format!(
                    "field `{}` has cardinality 0",
                    f.name
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate field name `{}`",
                    f.name
                )));
            }
        }
        Ok(())
    }

    /// Length of the user tower input `u_i`.
    pub fn user_dim(&self) -> usize {
        self.user_fields.len() * self.embedding_dim
    }

    /// Length of the item tower input `v_i`.
    pub fn item_dim(&self) -> usize {
        self.item_fields.len() * self.embedding_dim
    }

    /// Length of the teacher input `x_i = concat(u_i, v_i, dense)`.
    pub fn teacher_input_dim(&self) -> usize {
        self.user_dim() + self.item_dim() + self.dense_dim
    }
}

/// One impression with labels.
///
/// Invariant: an un-clicked sample has zero duration and `long_read = false`;
/// `long_read` is true exactly when the duration strictly exceeds the
/// labeling threshold. Construction validates this instead of fixing it up.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub user_ids: Vec<usize>,
    pub item_ids: Vec<usize>,
    pub dense: Vec<Real>,
    pub clicked: bool,
    pub duration_seconds: Real,
    pub long_read: bool,
}

impl Sample {
    /// Build a sample, deriving the duration label from the threshold.
    pub fn new(
        user_ids: Vec<usize>,
        item_ids: Vec<usize>,
        dense: Vec<Real>,
        clicked: bool,
        duration_seconds: Real,
        threshold: Real,
    ) -> Result<Self> {
        if !duration_seconds.is_finite() || duration_seconds < 0.0 {
            return Err(Error::InvalidRecord {
                line: 0,
                reason: format!("duration_seconds must be finite and >= 0, got {duration_seconds}"),
            });
        }
        if !clicked && duration_seconds != 0.0 {
            return Err(Error::InvalidRecord {
                line: 0,
                reason: "un-clicked sample with nonzero duration".into(),
            });
        }
        let long_read = clicked && duration_seconds > threshold;
        Ok(Self {
            user_ids,
            item_ids,
            dense,
            clicked,
            duration_seconds,
            long_read,
        })
    }

    /// Check ids and dense length against a schema; errors name the field.
    pub fn check_against(&self, schema: &FeatureSchema) -> Result<()> {
        check_ids(&self.user_ids, &schema.user_fields)?;
        check_ids(&self.item_ids, &schema.item_fields)?;
        if self.dense.len() != schema.dense_dim {
            return Err(Error::ShapeMismatch {
                context: "sample dense features",
                expected: schema.dense_dim.to_string(),
                got: self.dense.len().to_string(),
            });
        }
        Ok(())
    }

    /// Click label as a float.
    pub fn click_label(&self) -> Real {
        if self.clicked {
            1.0
        } else {
            0.0
        }
    }

    /// Duration label as a float.
    pub fn duration_label(&self) -> Real {
        if self.long_read {
            1.0
        } else {
            0.0
        }
    }
}

fn check_ids(ids: &[usize], fields: &[FieldSpec]) -> Result<()> {
    if ids.len() != fields.len() {
        return Err(Error::ShapeMismatch {
            context: "sample categorical ids",
            expected: fields.len().to_string(),
            got: ids.len().to_string(),
        });
    }
    for (id, field) in ids.iter().zip(fields) {
        if *id >= field.cardinality {
            return Err(Error::IdOutOfRange {
                field: field.name.clone(),
                id: *id,
                cardinality: field.cardinality,
            });
        }
    }
    Ok(())
}

/// Embedding tables for every field of a schema, with gradient buffers.
///
/// Tables are indexed user fields first, then item fields. Each model owns
/// its own set; teacher and student never share storage.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    tables: Vec<Matrix>,
    grads: Vec<Matrix>,
    num_user_fields: usize,
    embedding_dim: usize,
}

/// Range of the uniform embedding initialization.
pub const EMBEDDING_INIT_RANGE: f64 = 0.05;

impl EmbeddingSet {
    pub fn init<R: Rng + ?Sized>(schema: &FeatureSchema, rng: &mut R) -> Self {
        let dim = schema.embedding_dim;
        let tables: Vec<Matrix> = schema
            .user_fields
            .iter()
            .chain(&schema.item_fields)
            .map(|f| {
                Matrix::from_fn(f.cardinality, dim, |_, _| {
                    rng.random_range(-EMBEDDING_INIT_RANGE..EMBEDDING_INIT_RANGE)
                })
            })
            .collect();
        let grads = tables
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            tables,
            grads,
            num_user_fields: schema.user_fields.len(),
            embedding_dim: dim,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, field: usize) -> &Matrix {
        &self.tables[field]
    }

    pub fn table_mut(&mut self, field: usize) -> &mut Matrix {
        &mut self.tables[field]
    }

    pub fn grad_table(&self, field: usize) -> &Matrix {
        &self.grads[field]
    }

    fn user_table_range(&self) -> std::ops::Range<usize> {
        0..self.num_user_fields
    }

    fn item_table_range(&self) -> std::ops::Range<usize> {
        self.num_user_fields..self.tables.len()
    }

    /// Concatenated embedding rows for the user fields: `u_i`.
    pub fn encode_user(&self, sample: &Sample) -> Vector {
        self.encode_fields(self.user_table_range(), &sample.user_ids)
    }

    /// Concatenated embedding rows for the item fields: `v_i`.
    pub fn encode_item(&self, sample: &Sample) -> Vector {
        self.encode_fields(self.item_table_range(), &sample.item_ids)
    }

    /// Item-side encoding straight from ids (used by index building, where no
    /// full sample exists).
    pub fn encode_item_ids(&self, item_ids: &[usize]) -> Vector {
        self.encode_fields(self.item_table_range(), item_ids)
    }

    /// Teacher input `x_i = concat(u_i, v_i, dense)`.
    pub fn encode_teacher_input(&self, sample: &Sample) -> Vector {
        let u = self.encode_user(sample);
        let v = self.encode_item(sample);
        Vector::concat(&[u.as_slice(), v.as_slice(), &sample.dense])
    }

    fn encode_fields(&self, range: std::ops::Range<usize>, ids: &[usize]) -> Vector {
        debug_assert_eq!(range.len(), ids.len());
        let mut out = Vec::with_capacity(ids.len() * self.embedding_dim);
        for (table_idx, &id) in range.zip(ids) {
            out.extend_from_slice(self.tables[table_idx].row(id));
        }
        Vector::from_vec(out)
    }

    /// Accumulate a gradient slice into one looked-up row; all other rows are
    /// untouched.
    pub fn accumulate_row_grad(&mut self, field: usize, id: usize, grad: &[Real]) {
        debug_assert_eq!(grad.len(), self.embedding_dim);
        for (g, &u) in self.grads[field].row_mut(id).iter_mut().zip(grad) {
            *g += u;
        }
    }

    /// Scatter the gradient of `u_i` back into the user tables.
    pub fn scatter_user_grad(&mut self, user_ids: &[usize], grad_u: &[Real]) {
        self.scatter(0, user_ids, grad_u);
    }

    /// Scatter the gradient of `v_i` back into the item tables.
    pub fn scatter_item_grad(&mut self, item_ids: &[usize], grad_v: &[Real]) {
        self.scatter(self.num_user_fields, item_ids, grad_v);
    }

    /// Scatter the gradient of `x_i` back into all tables; the trailing dense
    /// segment has no parameters and is dropped.
    pub fn scatter_teacher_input_grad(
        &mut self,
        user_ids: &[usize],
        item_ids: &[usize],
        grad_x: &[Real],
    ) {
        let u_len = user_ids.len() * self.embedding_dim;
        let v_len = item_ids.len() * self.embedding_dim;
        self.scatter(0, user_ids, &grad_x[..u_len]);
        self.scatter(self.num_user_fields, item_ids, &grad_x[u_len..u_len + v_len]);
    }

    fn scatter(&mut self, table_offset: usize, ids: &[usize], grad: &[Real]) {
        let dim = self.embedding_dim;
        debug_assert_eq!(grad.len(), ids.len() * dim);
        for (k, &id) in ids.iter().enumerate() {
            self.accumulate_row_grad(table_offset + k, id, &grad[k * dim..(k + 1) * dim]);
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// (parameter, gradient) pairs for the optimizer, one per table.
    pub fn param_tensors(&mut self) -> Vec<ParamTensor<'_, Real>> {
        self.tables
            .iter_mut()
            .zip(&self.grads)
            .map(|(t, g)| ParamTensor::new(t.as_mut_slice(), g.as_slice()))
            .collect()
    }

    /// Rebuild from checkpointed tables; shapes must match the schema.
    pub fn from_tables(schema: &FeatureSchema, tables: Vec<Matrix>) -> Result<Self> {
        let specs: Vec<&FieldSpec> = schema.user_fields.iter().chain(&schema.item_fields).collect();
        if tables.len() != specs.len() {
            return Err(Error::ShapeMismatch {
                context: "embedding tables",
                expected: specs.len().to_string(),
                got: tables.len().to_string(),
            });
        }
        for (t, f) in tables.iter().zip(&specs) {
            if t.rows() != f.cardinality || t.cols() != schema.embedding_dim {
                return Err(Error::ShapeMismatch {
                    context: "embedding table",
                    expected: format!("{}x{} for `{}`", f.cardinality, schema.embedding_dim, f.name),
                    got: format!("{}x{}", t.rows(), t.cols()),
                });
            }
        }
        let grads = tables
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        Ok(Self {
            tables,
            grads,
            num_user_fields: schema.user_fields.len(),
            embedding_dim: schema.embedding_dim,
        })
    }

    pub fn tables(&self) -> &[Matrix] {
        &self.tables
    }

    pub fn push_flat_params(&self, out: &mut Vec<Real>) {
        for t in &self.tables {
            out.extend_from_slice(t.as_slice());
        }
    }

    pub fn push_flat_grads(&self, out: &mut Vec<Real>) {
        for g in &self.grads {
            out.extend_from_slice(g.as_slice());
        }
    }

    pub fn load_flat_params(&mut self, src: &mut FlatReader<'_, Real>) {
        for t in &mut self.tables {
            src.take_into(t.as_mut_slice());
        }
    }
}
