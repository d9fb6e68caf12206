use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{SampleBatch, Seed};
use crate::error::{check_dim, Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-10;

/// A point of the Grassmannian `G_{n,k}`, held as an `n × k` orthonormal frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subspace {
    frame: DMatrix<f64>,
}

impl Subspace {
    /// Wraps an existing frame after checking `frameᵀ·frame = I_k`.
    pub fn from_frame(frame: DMatrix<f64>) -> Result<Self> {
        let (n, k) = frame.shape();
        if k == 0 || k > n {
            return Err(Error::Usage(format!(
                "a frame needs 1 <= k <= n, got {n}x{k}"
            )));
        }
        let s = Subspace { frame };
        let defect = s.orthonormality_defect();
        if defect > ORTHONORMAL_TOL {
            return Err(Error::Usage(format!(
                "frame columns are not orthonormal (defect {defect:.3e})"
            )));
        }
        Ok(s)
    }

    /// Orthonormalizes the columns of `matrix` (they must be independent).
    pub fn span(matrix: DMatrix<f64>) -> Result<Self> {
        let (n, k) = matrix.shape();
        if k == 0 || k > n {
            return Err(Error::Usage(format!(
                "cannot span {k} vectors in dimension {n}"
            )));
        }
        let qr = matrix.qr();
        let r = qr.r();
        let mut q = qr.q();
        for j in 0..k {
            let d = r[(j, j)];
            if d.abs() < 1e-12 {
                return Err(Error::Usage(
                    "spanning vectors are linearly dependent".into(),
                ));
            }
            // fix the QR sign convention so the result is a deterministic function of the input
            if d < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        Ok(Subspace { frame: q })
    }

    /// `span(e_i : i ∈ axes)`.
    pub fn coordinate(n: usize, axes: &[usize]) -> Result<Self> {
        let mut frame = DMatrix::zeros(n, axes.len());
        for (j, &i) in axes.iter().enumerate() {
            if i >= n {
                return Err(Error::Usage(format!(
                    "axis {i} out of range for dimension {n}"
                )));
            }
            frame[(i, j)] = 1.0;
        }
        Subspace::from_frame(frame)
    }

    pub fn whole(n: usize) -> Self {
        Subspace {
            frame: DMatrix::identity(n, n),
        }
    }

    /// Haar-distributed subspace: orthonormalized `n × k` standard Gaussian matrix.
    pub fn haar(n: usize, k: usize, seed: Seed) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::Usage(format!(
                "haar_subspace needs 1 <= k <= n, got n={n}, k={k}"
            )));
        }
        let mut rng = seed.rng();
        let g = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        Subspace::span(g)
    }

    pub fn ambient(&self) -> usize {
        self.frame.nrows()
    }

    pub fn k(&self) -> usize {
        self.frame.ncols()
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    /// Max entry of `|frameᵀ·frame − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.frame.transpose() * &self.frame;
        let k = self.k();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Coordinates `frameᵀ·x` of the projection of `x` onto the subspace.
    pub fn coords_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.ambient();
        for (j, o) in out.iter_mut().enumerate() {
            let col = &self.frame.as_slice()[j * n..(j + 1) * n];
            *o = col.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn coords(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k()];
        self.coords_into(x, &mut out);
        out
    }

    /// `frame·y`: the ambient vector with subspace coordinates `y`.
    pub fn embed(&self, y: &[f64]) -> Vec<f64> {
        let n = self.ambient();
        let mut out = vec![0.0; n];
        for (j, &yj) in y.iter().enumerate() {
            let col = &self.frame.as_slice()[j * n..(j + 1) * n];
            for (o, c) in out.iter_mut().zip(col) {
                *o += c * yj;
            }
        }
        out
    }

    /// Orthogonal projection `Proj_E(x) = frame·frameᵀ·x`.
    pub fn project_vector(&self, x: &[f64]) -> Vec<f64> {
        self.embed(&self.coords(x))
    }

    /// Subspace of `self` spanned by `self.frame · inner.frame`.
    pub fn compose(&self, inner: &Subspace) -> Result<Subspace> {
        check_dim(self.k(), inner.ambient())?;
        Ok(Subspace {
            frame: &self.frame * &inner.frame,
        })
    }

    /// Removes the component of `v` lying in the subspace, in place.
    pub fn reject_in_place(&self, v: &mut [f64]) {
        let c = self.coords(v);
        let n = self.ambient();
        for (j, cj) in c.iter().enumerate() {
            let col = &self.frame.as_slice()[j * n..(j + 1) * n];
            for (vi, fi) in v.iter_mut().zip(col) {
                *vi -= cj * fi;
            }
        }
    }

    /// Uniform unit vector of `E^⊥`: a projected Gaussian, normalized.
    pub fn random_orthogonal_direction<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        loop {
            for o in out.iter_mut() {
                *o = rng.sample(StandardNormal);
            }
            self.reject_in_place(out);
            let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                out.iter_mut().for_each(|x| *x /= norm);
                return;
            }
        }
    }

    /// A unit vector spanning `E^⊥` when `k = n − 1`.
    pub fn normal_line(&self) -> Result<Vec<f64>> {
        let n = self.ambient();
        if self.k() + 1 != n {
            return Err(Error::Usage("normal_line needs a hyperplane".into()));
        }
        let mut best = vec![0.0; n];
        let mut best_norm = -1.0;
        for i in 0..n {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            self.reject_in_place(&mut v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > best_norm {
                best_norm = norm;
                best = v;
            }
        }
        // one Gram-Schmidt pass is not quite enough for nearly coordinate frames
        self.reject_in_place(&mut best);
        let norm = best.iter().map(|x| x * x).sum::<f64>().sqrt();
        best.iter_mut().for_each(|x| *x /= norm);
        Ok(best)
    }

    /// Rotates column `col` towards the unit vector `dir ⊥ E` by `angle`.
    ///
    /// This is a Givens rotation in the plane `(frame_col, dir)` and keeps the
    /// frame orthonormal.
    pub fn givens_move(&self, col: usize, dir: &[f64], angle: f64) -> Subspace {
        let mut frame = self.frame.clone();
        let (c, s) = (angle.cos(), angle.sin());
        let n = self.ambient();
        for i in 0..n {
            let f = frame[(i, col)];
            frame[(i, col)] = c * f + s * dir[i];
        }
        Subspace { frame }
    }

    /// Renders the frame as text: `ambient` rows of `k` whitespace-separated entries.
    pub fn to_frame_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.ambient() {
            let row: Vec<String> = (0..self.k())
                .map(|j| format!("{:.17e}", self.frame[(i, j)]))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse_frame_text(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|e| Error::Parse(format!("frame entry {t:?}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if n == 0 || k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Parse(
                "frame file must be a non-empty rectangular matrix".into(),
            ));
        }
        let frame = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
        // frames written with 17 digits reorthonormalize to the same subspace
        Subspace::from_frame(frame.clone()).or_else(|_| Subspace::span(frame))
    }
}

/// Projects every row of `batch` onto `E`, giving samples of the marginal `π_E μ`.
pub fn project(batch: &SampleBatch, subspace: &Subspace) -> Result<SampleBatch> {
    check_dim(subspace.ambient(), batch.dim())?;
    let tag = format!(
        "marginal[{}->{}]({})",
        subspace.ambient(),
        subspace.k(),
        batch.provenance().measure
    );
    Ok(batch.map_rows(subspace.k(), tag, |x, out| subspace.coords_into(x, out)))
}
