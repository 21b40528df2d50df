//! Semantic feature embeddings and patch averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default embedding width.
pub const DEFAULT_DIM: usize = 384;

/// Fixed-width semantic descriptor. Finite and never the zero vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DegenerateEmbedding("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateEmbedding("non-finite component".into()));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateEmbedding("zero vector".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-length copy.
    pub fn normalized(&self) -> Embedding {
        let n = self.norm();
        Embedding {
            values: self.values.iter().map(|v| v / n).collect(),
        }
    }
}

/// `N x D` grid of patch features, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePatchGrid {
    dim: usize,
    data: Vec<f64>,
}

impl FeaturePatchGrid {
    pub fn new(patches: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = patches.first() else {
            return Err(Error::invalid("patch grid needs at least one patch"));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::invalid("patch grid has zero width"));
        }
        let mut data = Vec::with_capacity(dim * patches.len());
        for (i, p) in patches.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::invalid(format!(
                    "patch {i} has width {} but patch 0 has width {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("patch {i} has a non-finite entry")));
            }
            data.extend_from_slice(p);
        }
        Ok(Self { dim, data })
    }

    pub fn num_patches(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patch(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }
}

/// Collapses a patch grid to one embedding by averaging each column.
///
/// Columns are summed in sorted order so the result does not depend on the
/// order of the patches.
pub fn patch_average(grid: &FeaturePatchGrid) -> Result<Embedding> {
    let n = grid.num_patches();
    let mut column = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(grid.dim());
    for d in 0..grid.dim() {
        column.clear();
        column.extend((0..n).map(|i| grid.patch(i)[d]));
        column.sort_by(f64::total_cmp);
        values.push(column.iter().sum::<f64>() / n as f64);
    }
    Embedding::new(values).map_err(|_| {
        Error::DegenerateEmbedding("patch average is the zero vector".into())
    })
}

/// `a.b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "embedding dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let denom = a.norm() * b.norm();
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateEmbedding(
            "cosine similarity of a vanishing vector".into(),
        ));
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Running-mean update after the `count + 1`-th accepted observation.
///
/// If the mean collapses to zero (antipodal observations) the current
/// embedding is kept.
pub fn aggregate_landmark_embedding(current: &Embedding, count: usize, new_obs: &Embedding) -> Embedding {
    debug_assert!(count >= 1);
    debug_assert_eq!(current.dim(), new_obs.dim());
    let k = (count + 1) as f64;
    let values = current
        .values
        .iter()
        .zip(&new_obs.values)
        .map(|(c, n)| c + (n - c) / k)
        .collect();
    Embedding::new(values).unwrap_or_else(|_| current.clone())
}
