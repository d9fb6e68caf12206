use serde::{Deserialize, Serialize};

use super::Seed;
use crate::error::{Error, Result};

/// Where a batch came from: the measure tag and the stream that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub measure: String,
    pub seed: Seed,
}

/// `count × dim` matrix of sample points stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    points: Vec<f64>,
    provenance: Provenance,
}

impl SampleBatch {
    pub fn new(dim: usize, points: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::Usage(format!(
                "a batch needs a positive number of {dim}-dimensional points, got {} values",
                points.len()
            )));
        }
        Ok(SampleBatch {
            dim,
            points,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Rows `start..start+len` as a flat slice.
    pub fn slice(&self, start: usize, len: usize) -> &[f64] {
        &self.points[start * self.dim..(start + len) * self.dim]
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for row in self.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Sample covariance (divisor `N - 1`), row-major `dim × dim`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let mean = self.mean();
        let mut cov = vec![0.0; d * d];
        let mut centered = vec![0.0; d];
        for row in self.rows() {
            for j in 0..d {
                centered[j] = row[j] - mean[j];
            }
            for i in 0..d {
                let ci = centered[i];
                for j in i..d {
                    cov[i * d + j] += ci * centered[j];
                }
            }
        }
        let denom = (self.len().max(2) - 1) as f64;
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / denom;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        cov
    }

    /// Applies `f` to every row, producing a batch in dimension `dim`.
    pub fn map_rows(
        &self,
        dim: usize,
        measure: String,
        mut f: impl FnMut(&[f64], &mut [f64]),
    ) -> SampleBatch {
        let mut out = vec![0.0; self.len() * dim];
        for (row, target) in self.rows().zip(out.chunks_exact_mut(dim)) {
            f(row, target);
        }
        SampleBatch {
            dim,
            points: out,
            provenance: Provenance {
                measure,
                seed: self.provenance.seed,
            },
        }
    }
}
