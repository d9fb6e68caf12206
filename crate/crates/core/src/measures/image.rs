use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ConvexSupport;
use crate::error::{Error, Result};
use crate::sampler::seed::map_chunks;
use crate::sampler::{SampleBatch, Seed};
use crate::special::ln_unit_ball_volume;

/// Affine map `T(x) = map·(x − shift)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearImage {
    shift: Vec<f64>,
    map: DMatrix<f64>,
    ln_det: f64,
}

impl LinearImage {
    pub fn new(shift: Vec<f64>, map: DMatrix<f64>, ln_det: f64) -> Self {
        LinearImage { shift, map, ln_det }
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn map(&self) -> &DMatrix<f64> {
        &self.map
    }

    /// `ln |det map|`.
    pub fn ln_det(&self) -> f64 {
        self.ln_det
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.shift.len();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.map[(i, j)] * (x[j] - self.shift[j]);
            }
            *o = acc;
        }
    }

    /// Pushes every row of `batch` through the map.
    pub fn push(&self, batch: &SampleBatch) -> SampleBatch {
        let tag = format!("image({})", batch.provenance().measure);
        batch.map_rows(batch.dim(), tag, |x, out| self.apply_into(x, out))
    }
}

/// Empirical isotropic position: shift = sample mean, map = Cov^{-1/2}.
pub fn isotropize(batch: &SampleBatch) -> Result<LinearImage> {
    let n = batch.dim();
    if batch.len() < 10 * n * n {
        return Err(Error::DegenerateMeasure(format!(
            "isotropize needs at least 10·n² = {} samples in dimension {n}, got {}",
            10 * n * n,
            batch.len()
        )));
    }
    let cov = DMatrix::from_row_slice(n, n, &batch.covariance());
    let eig = cov.symmetric_eigen();
    let top = eig.eigenvalues.max();
    if !(top > 0.0) || eig.eigenvalues.min() <= 1e-12 * top {
        return Err(Error::DegenerateMeasure(
            "sample covariance is singular".into(),
        ));
    }
    let inv_sqrt = DVector::from_iterator(n, eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()));
    let map = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    let ln_det = -0.5 * eig.eigenvalues.iter().map(|l| l.ln()).sum::<f64>();
    Ok(LinearImage::new(batch.mean(), map, ln_det))
}

/// A strictly interior point of `{Ax ≤ b}`: relaxation to feasibility, then Newton steps
/// towards the analytic centre.
pub(crate) fn interior_point(dim: usize, normals: &[f64], offsets: &[f64]) -> Result<Vec<f64>> {
    let m = offsets.len();
    let row = |j: usize| &normals[j * dim..(j + 1) * dim];
    let norms: Vec<f64> = (0..m)
        .map(|j| row(j).iter().map(|a| a * a).sum::<f64>().sqrt())
        .collect();
    if norms.iter().any(|&v| v == 0.0) {
        return Err(Error::DegenerateMeasure(
            "zero normal in halfspace list".into(),
        ));
    }
    let scale = 1.0 + offsets.iter().fold(0.0f64, |acc, b| acc.max(b.abs()));
    let margin = 1e-7 * scale;
    let dot = |j: usize, x: &[f64]| row(j).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    let mut x = vec![0.0; dim];
    let mut feasible = false;
    for _ in 0..200_000 {
        let (worst, j) = (0..m)
            .map(|j| ((dot(j, &x) - offsets[j] + margin * norms[j]) / norms[j], j))
            .fold(
                (f64::NEG_INFINITY, 0),
                |acc, v| if v.0 > acc.0 { v } else { acc },
            );
        if worst <= 0.0 {
            feasible = true;
            break;
        }
        let step = 1.5 * worst / norms[j];
        for (xi, a) in x.iter_mut().zip(row(j)) {
            *xi -= step * a;
        }
    }
    if !feasible {
        return Err(Error::DegenerateMeasure(
            "halfspaces have empty interior".into(),
        ));
    }
    // damped Newton on −Σ ln(b − a·x)
    for _ in 0..100 {
        let slack: Vec<f64> = (0..m).map(|j| offsets[j] - dot(j, &x)).collect();
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        for j in 0..m {
            let a = DVector::from_column_slice(row(j));
            grad += &a / slack[j];
            hess += &a * a.transpose() / (slack[j] * slack[j]);
        }
        let Some(chol) = hess.clone().cholesky() else {
            return Err(Error::DegenerateMeasure(
                "halfspaces do not bound a body".into(),
            ));
        };
        let step = chol.solve(&(-&grad));
        let decrement = (-grad.dot(&step)).max(0.0).sqrt();
        if decrement < 1e-10 {
            break;
        }
        let mut t = 1.0 / (1.0 + decrement);
        loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            if (0..m).all(|j| dot(j, &trial) < offsets[j]) {
                x = trial;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                break;
            }
        }
    }
    Ok(x)
}

/// Rejects supports that are unbounded along some sampled direction.
pub(crate) fn check_bounded(support: &ConvexSupport, seed: Seed) -> Result<()> {
    let n = support.dim();
    let origin = vec![0.0; n];
    let mut rng = seed.rng();
    let mut d = vec![0.0; n];
    for trial in 0..(2 * n + 2000) {
        if trial < 2 * n {
            d.iter_mut().for_each(|v| *v = 0.0);
            d[trial / 2] = if trial % 2 == 0 { 1.0 } else { -1.0 };
        } else {
            d.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        }
        let (lo, hi) = support.chord(&origin, &d);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::DegenerateMeasure(
                "halfspaces do not bound a body".into(),
            ));
        }
    }
    Ok(())
}

/// `ln |K|` from `|K| = ω_n E_u[ρ_K(u)^n]` over uniform directions, with its standard error.
pub(crate) fn radial_ln_volume(
    support: &ConvexSupport,
    directions: usize,
    seed: Seed,
) -> (f64, f64) {
    let n = support.dim();
    let directions = directions.max(64);
    let parts = map_chunks(directions, 4096, |c, _, len| {
        let mut rng = seed.derive("radial", c as u64).rng();
        let mut u = vec![0.0; n];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..len {
            u.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            u.iter_mut().for_each(|v| *v /= norm);
            let r = support.radial(&u).powi(n as i32);
            s += r;
            s2 += r * r;
        }
        (s, s2)
    });
    let (s, s2) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let count = directions as f64;
    let mean = s / count;
    let var = (s2 / count - mean * mean).max(0.0) * count / (count - 1.0);
    let se_rel = (var / count).sqrt() / mean;
    (ln_unit_ball_volume(n) + mean.ln(), se_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::Provenance;

    fn batch_from(dim: usize, points: Vec<f64>) -> SampleBatch {
        SampleBatch::new(
            dim,
            points,
            Provenance {
                measure: "test".into(),
                seed: Seed::new(0),
            },
        )
        .unwrap()
    }

    #[test]
    fn isotropize_scaled_gaussian() {
        let mut rng = Seed::new(3).rng();
        let pts: Vec<f64> = (0..200_000)
            .flat_map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                [2.0 * a, b]
            })
            .collect();
        let img = isotropize(&batch_from(2, pts)).unwrap();
        let m = img.map();
        assert!((m[(0, 0)] - 0.5).abs() < 0.01, "{m}");
        assert!((m[(1, 1)] - 1.0).abs() < 0.01);
        assert!(m[(0, 1)].abs() < 0.01);
        assert!((img.ln_det() - 0.5f64.ln()).abs() < 0.02);
    }

    #[test]
    fn too_few_samples_is_degenerate() {
        let pts: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert!(matches!(
            isotropize(&batch_from(4, pts)),
            Err(Error::DegenerateMeasure(_))
        ));
    }

    #[test]
    fn interior_point_of_shifted_box() {
        // 2 ≤ x ≤ 3, −1 ≤ y ≤ 5
        let normals = vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0];
        let offsets = vec![3.0, -2.0, 5.0, 1.0];
        let x = interior_point(2, &normals, &offsets).unwrap();
        assert!(
            (x[0] - 2.5).abs() < 1e-6 && (x[1] - 2.0).abs() < 1e-6,
            "{x:?}"
        );
        let empty = interior_point(1, &[1.0, -1.0], &[0.0, -1.0]);
        assert!(empty.is_err());
    }

    #[test]
    fn radial_volume_of_square() {
        let sq = ConvexSupport::Cube { dim: 2, half: 1.0 };
        let (lv, se) = radial_ln_volume(&sq, 200_000, Seed::new(5));
        assert!((lv - 4f64.ln()).abs() < 4.0 * se + 1e-3, "{lv} {se}");
    }
}
