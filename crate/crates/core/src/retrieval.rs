//! Item index over student item vectors answering top-k maximum-inner-product
//! queries: the serving path of candidate generation.
//!
//! Exact mode scans every vector and is the correctness reference. The
//! pruned mode partitions items into coarse k-means cells and scans only the
//! `nprobe` cells whose centroids score highest against the query; its only
//! contract is measured recall against the exact scan.
//!
//! Entries are canonicalized by ascending item id at build time, so results
//! never depend on insertion order. Ties in score break toward the smaller
//! item id.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{FramedReader, FramedWriter};
use crate::student::StudentModel;
use crate::{Real, Vector};

pub const INDEX_FORMAT: &str = "dmtl-index-v1";
pub const KMEANS_ITERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    Exact,
    Ivf,
}

#[derive(Debug, Clone, PartialEq)]
struct IvfData {
    nlist: usize,
    /// nlist x dim centroid matrix, flattened.
    centroids: Vec<Real>,
    /// Cell start offsets into `point_indices`; length nlist + 1.
    offsets: Vec<usize>,
    /// Item positions grouped by cell.
    point_indices: Vec<usize>,
}

/// Immutable item-vector index.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    dim: usize,
    ids: Vec<u64>,
    /// n x dim row-major vectors, aligned with `ids`.
    vectors: Vec<Real>,
    checkpoint_hash: String,
    ivf: Option<IvfData>,
}

impl RetrievalIndex {
    /// Build an exact index from `(item id, item field ids)` entries and a
    /// student model. Entries are sorted by id; duplicates are rejected.
    pub fn build(
        items: &[(u64, Vec<usize>)],
        student: &StudentModel,
        checkpoint_hash: &str,
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut entries: Vec<(u64, &Vec<usize>)> =
            items.iter().map(|(id, ids)| (*id, ids)).collect();
        entries.sort_by_key(|(id, _)| *id);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DuplicateItemId(w[0].0));
            }
        }
        let dim = student.vector_dim();
        let mut ids = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len() * dim);
        for (id, field_ids) in entries {
            let v = student.item_vector_from_ids(field_ids)?;
            ids.push(id);
            vectors.extend_from_slice(v.as_slice());
        }
        Ok(Self {
            dim,
            ids,
            vectors,
            checkpoint_hash: checkpoint_hash.to_string(),
            ivf: None,
        })
    }

    /// Build directly from precomputed vectors (used when loading a vector
    /// table instead of a checkpoint).
    pub fn from_vectors(
        dim: usize,
        ids: Vec<u64>,
        vectors: Vec<Real>,
        checkpoint_hash: &str,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::ShapeMismatch {
                context: "index vectors",
                expected: format!("{} values", ids.len() * dim),
                got: vectors.len().to_string(),
            });
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by_key(|&i| ids[i]);
        for w in order.windows(2) {
            if ids[w[0]] == ids[w[1]] {
                return Err(Error::DuplicateItemId(ids[w[0]]));
            }
        }
        let sorted_ids: Vec<u64> = order.iter().map(|&i| ids[i]).collect();
        let mut sorted_vectors = Vec::with_capacity(vectors.len());
        for &i in &order {
            sorted_vectors.extend_from_slice(&vectors[i * dim..(i + 1) * dim]);
        }
        Ok(Self {
            dim,
            ids: sorted_ids,
            vectors: sorted_vectors,
            checkpoint_hash: checkpoint_hash.to_string(),
            ivf: None,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> IndexMode {
        if self.ivf.is_some() {
            IndexMode::Ivf
        } else {
            IndexMode::Exact
        }
    }

    pub fn checkpoint_hash(&self) -> &str {
        &self.checkpoint_hash
    }

    pub fn vector_of(&self, id: u64) -> Option<&[Real]> {
        let pos = self.ids.binary_search(&id).ok()?;
        Some(&self.vectors[pos * self.dim..(pos + 1) * self.dim])
    }

    fn score(&self, pos: usize, query: &[Real]) -> Real {
        crate::numerics::dot_product(&self.vectors[pos * self.dim..(pos + 1) * self.dim], query)
    }

    /// Exact top-k by inner product, descending; ties break toward the
    /// smaller item id.
    pub fn topk(&self, query: &Vector, k: usize) -> Result<Vec<(u64, Real)>> {
        self.check_query(query, k)?;
        let scored = (0..self.len()).map(|pos| (self.score(pos, query.as_slice()), pos));
        Ok(self.select_top(scored, k))
    }

    /// Approximate top-k scanning the `nprobe` cells whose centroids have the
    /// largest inner product with the query. `nprobe` larger than the cell
    /// count is clamped.
    pub fn topk_pruned(&self, query: &Vector, k: usize, nprobe: usize) -> Result<Vec<(u64, Real)>> {
        self.check_query(query, k)?;
        if nprobe == 0 {
            return Err(Error::InvalidConfig {
                key: "nprobe".into(),
                reason: "must be >= 1".into(),
            });
        }
        let ivf = self.ivf.as_ref().ok_or_else(|| Error::InvalidConfig {
            key: "mode".into(),
            reason: "pruned search requires an index built with quantization".into(),
        })?;
        let nprobe = nprobe.min(ivf.nlist);
        // rank cells by centroid score, ties toward the lower cell index
        let mut cells: Vec<(Real, usize)> = (0..ivf.nlist)
            .map(|c| {
                let row = &ivf.centroids[c * self.dim..(c + 1) * self.dim];
                (crate::numerics::dot_product(row, query.as_slice()), c)
            })
            .collect();
        cells.sort_by(|a, b| match b.0.partial_cmp(&a.0).unwrap() {
            Ordering::Equal => a.1.cmp(&b.1),
            other => other,
        });
        let scored = cells[..nprobe].iter().flat_map(|&(_, c)| {
            ivf.point_indices[ivf.offsets[c]..ivf.offsets[c + 1]]
                .iter()
                .map(|&pos| (self.score(pos, query.as_slice()), pos))
        });
        Ok(self.select_top(scored, k))
    }

    fn check_query(&self, query: &Vector, k: usize) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::ShapeMismatch {
                context: "topk query",
                expected: self.dim.to_string(),
                got: query.len().to_string(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidConfig {
                key: "k".into(),
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }

    fn select_top(
        &self,
        scored: impl Iterator<Item = (Real, usize)>,
        k: usize,
    ) -> Vec<(u64, Real)> {
        // candidate ordering: higher score wins, then smaller id
        let better = |a: &(Real, u64), b: &(Real, u64)| match a.0.partial_cmp(&b.0).unwrap() {
            Ordering::Equal => a.1 < b.1,
            Ordering::Greater => true,
            Ordering::Less => false,
        };
        let mut top: Vec<(Real, u64)> = Vec::with_capacity(k + 1);
        for (score, pos) in scored {
            let cand = (score, self.ids[pos]);
            if top.len() < k {
                let at = top.partition_point(|e| better(e, &cand));
                top.insert(at, cand);
            } else if better(&cand, top.last().unwrap()) {
                let at = top.partition_point(|e| better(e, &cand));
                top.insert(at, cand);
                top.pop();
            }
        }
        top.into_iter().map(|(s, id)| (id, s)).collect()
    }

    /// Attach an IVF coarse quantization: seeded k-means++ with a fixed
    /// iteration budget, then inverted lists per cell.
    pub fn with_ivf(mut self, nlist: usize, seed: u64) -> Result<Self> {
        if nlist == 0 {
            return Err(Error::InvalidConfig {
                key: "nlist".into(),
                reason: "must be >= 1".into(),
            });
        }
        let nlist = nlist.min(self.len());
        let centroids = kmeans(&self.vectors, self.len(), self.dim, nlist, seed);
        let assignment: Vec<usize> = (0..self.len())
            .map(|pos| nearest_centroid(&self.vectors[pos * self.dim..(pos + 1) * self.dim], &centroids, self.dim))
            .collect();
        let mut offsets = vec![0usize; nlist + 1];
        for &cell in &assignment {
            offsets[cell + 1] += 1;
        }
        for c in 0..nlist {
            offsets[c + 1] += offsets[c];
        }
        let mut cursor = offsets.clone();
        let mut point_indices = vec![0usize; self.len()];
        for (pos, &cell) in assignment.iter().enumerate() {
            point_indices[cursor[cell]] = pos;
            cursor[cell] += 1;
        }
        self.ivf = Some(IvfData {
            nlist,
            centroids,
            offsets,
            point_indices,
        });
        Ok(self)
    }

    pub fn nlist(&self) -> Option<usize> {
        self.ivf.as_ref().map(|i| i.nlist)
    }

    /// Persist: JSON header, vector block, id block, then IVF blocks when
    /// quantized.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = IndexHeader {
            format: INDEX_FORMAT.to_string(),
            dim: self.dim,
            count: self.len(),
            mode: self.mode(),
            checkpoint_hash: self.checkpoint_hash.clone(),
            nlist: self.ivf.as_ref().map(|i| i.nlist),
        };
        let file = File::create(path.as_ref())?;
        let mut w = FramedWriter::new(BufWriter::new(file), &header)?;
        w.write_f64_block(&self.vectors)?;
        w.write_u64_block(&self.ids)?;
        if let Some(ivf) = &self.ivf {
            w.write_f64_block(&ivf.centroids)?;
            let offsets: Vec<u64> = ivf.offsets.iter().map(|&o| o as u64).collect();
            w.write_u64_block(&offsets)?;
            let points: Vec<u64> = ivf.point_indices.iter().map(|&p| p as u64).collect();
            w.write_u64_block(&points)?;
        }
        w.finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        let (header, mut r): (IndexHeader, _) = FramedReader::new(BufReader::new(file), path)?;
        if header.format != INDEX_FORMAT {
            return Err(Error::CorruptFile {
                path: path.display().to_string(),
                reason: format!("unexpected format `{}`", header.format),
            });
        }
        let vectors = r.read_f64_block(header.count * header.dim)?;
        let ids = r.read_u64_block(header.count)?;
        let ivf = match header.mode {
            IndexMode::Exact => None,
            IndexMode::Ivf => {
                let nlist = header.nlist.ok_or_else(|| Error::CorruptFile {
                    path: path.display().to_string(),
                    reason: "ivf index missing nlist".into(),
                })?;
                let centroids = r.read_f64_block(nlist * header.dim)?;
                let offsets = r
                    .read_u64_block(nlist + 1)?
                    .into_iter()
                    .map(|o| o as usize)
                    .collect();
                let point_indices = r
                    .read_u64_block(header.count)?
                    .into_iter()
                    .map(|p| p as usize)
                    .collect();
                Some(IvfData {
                    nlist,
                    centroids,
                    offsets,
                    point_indices,
                })
            }
        };
        Ok(Self {
            dim: header.dim,
            ids,
            vectors,
            checkpoint_hash: header.checkpoint_hash,
            ivf,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    dim: usize,
    count: usize,
    mode: IndexMode,
    checkpoint_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    nlist: Option<usize>,
}

fn squared_distance(a: &[Real], b: &[Real]) -> Real {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn nearest_centroid(point: &[Real], centroids: &[Real], dim: usize) -> usize {
    let mut best = 0;
    let mut best_d = Real::INFINITY;
    for c in 0..centroids.len() / dim {
        let d = squared_distance(point, &centroids[c * dim..(c + 1) * dim]);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding, fixed seed and iteration count.
/// Empty cells are repaired deterministically with the point farthest from
/// its assigned centroid.
fn kmeans(points: &[Real], n: usize, dim: usize, k: usize, seed: u64) -> Vec<Real> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    // k-means++ seeding
    let mut centroids: Vec<Real> = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut min_d2: Vec<Real> = (0..n)
        .map(|i| squared_distance(point(i), &centroids[..dim]))
        .collect();
    while centroids.len() < k * dim {
        let total: Real = min_d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut t = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &d) in min_d2.iter().enumerate() {
                if t < d {
                    idx = i;
                    break;
                }
                t -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c_start = centroids.len();
        centroids.extend_from_slice(point(chosen));
        let c = &centroids[c_start..c_start + dim];
        for i in 0..n {
            let d = squared_distance(point(i), c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..KMEANS_ITERATIONS {
        for (i, a) in assignment.iter_mut().enumerate() {
            *a = nearest_centroid(point(i), &centroids, dim);
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![0.0; k * dim];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // farthest point from its centroid takes over the empty cell
                let (mut far_i, mut far_d) = (0, -1.0);
                for i in 0..n {
                    let d = squared_distance(point(i), &centroids[assignment[i] * dim..(assignment[i] + 1) * dim]);
                    if d > far_d {
                        far_d = d;
                        far_i = i;
                    }
                }
                centroids[c * dim..(c + 1) * dim].copy_from_slice(point(far_i));
                assignment[far_i] = c;
            } else {
                for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = s / counts[c] as Real;
                }
            }
        }
    }
    centroids
}

/// Recall of approximate results against exact ones: fraction of the exact
/// id set that the approximate list recovered.
pub fn recall_at_k(exact: &[(u64, Real)], approx: &[(u64, Real)]) -> Real {
    if exact.is_empty() {
        return 1.0;
    }
    let truth: HashSet<u64> = exact.iter().map(|&(id, _)| id).collect();
    let hit = approx.iter().filter(|(id, _)| truth.contains(id)).count();
    hit as Real / exact.len() as Real
}
