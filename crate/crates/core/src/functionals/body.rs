use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    boundary_point_batch, dot, hull_volume, mean_se, support_zp_batch, EstimateCI, Method,
};
use crate::error::{check_dim, Error, Result};
use crate::sampler::seed::map_chunks;
use crate::sampler::{SampleBatch, Seed};
use crate::special::unit_ball_volume;

pub const MAX_VOLUME_DIM: usize = 6;

/// A convex body exposed through its support function on unit directions.
pub trait BodyOracle: Sync {
    fn dim(&self) -> usize;

    fn support(&self, theta: &[f64]) -> EstimateCI;

    fn symmetric(&self) -> bool {
        true
    }

    /// An upper bound for the circumradius `R(K)`.
    fn radius_bound(&self) -> f64;

    /// A boundary point `x` with `⟨x,θ⟩ = h_K(θ)`.
    ///
    /// The default differentiates the 1-homogeneous extension of `h` numerically.
    fn touching_point(&self, theta: &[f64]) -> Vec<f64> {
        let n = theta.len();
        let eps = 1e-6;
        let h = |v: &[f64]| {
            let r = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            let u: Vec<f64> = v.iter().map(|t| t / r).collect();
            r * self.support(&u).value
        };
        (0..n)
            .map(|i| {
                let mut a = theta.to_vec();
                let mut b = theta.to_vec();
                a[i] += eps;
                b[i] -= eps;
                (h(&a) - h(&b)) / (2.0 * eps)
            })
            .collect()
    }
}

/// `Z_p(μ)` estimated from a shared sample batch.
#[derive(Clone, Debug)]
pub struct CentroidBody {
    p: f64,
    batch: Arc<SampleBatch>,
    radius_bound: f64,
}

impl CentroidBody {
    pub fn new(p: f64, batch: Arc<SampleBatch>) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::Domain(format!("Z_p needs p >= 1, got {p}")));
        }
        // |⟨x,θ⟩| ≤ ‖x‖ bounds h by (E‖x‖^p)^{1/p} on the same batch
        let (mean, _, _) = mean_se(
            batch
                .rows()
                .map(|x| x.iter().map(|v| v * v).sum::<f64>().powf(p / 2.0)),
        );
        Ok(CentroidBody {
            p,
            batch,
            radius_bound: mean.powf(1.0 / p),
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn batch(&self) -> &SampleBatch {
        &self.batch
    }
}

impl BodyOracle for CentroidBody {
    fn dim(&self) -> usize {
        self.batch.dim()
    }

    fn support(&self, theta: &[f64]) -> EstimateCI {
        support_zp_batch(self.p, theta, &self.batch).expect("validated centroid body")
    }

    fn radius_bound(&self) -> f64 {
        self.radius_bound
    }

    fn touching_point(&self, theta: &[f64]) -> Vec<f64> {
        boundary_point_batch(self.p, theta, &self.batch)
            .expect("validated centroid body")
            .point
    }
}

/// Euclidean ball `r·B_2^n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallBody {
    pub dim: usize,
    pub radius: f64,
}

impl BodyOracle for BallBody {
    fn dim(&self) -> usize {
        self.dim
    }

    fn support(&self, _theta: &[f64]) -> EstimateCI {
        EstimateCI::exact(self.radius)
    }

    fn radius_bound(&self) -> f64 {
        self.radius
    }

    fn touching_point(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|t| t * self.radius).collect()
    }
}

/// A body given by an exact support function.
pub struct ExactBody<F> {
    dim: usize,
    radius_bound: f64,
    h: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> ExactBody<F> {
    pub fn new(dim: usize, radius_bound: f64, h: F) -> Self {
        ExactBody {
            dim,
            radius_bound,
            h,
        }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> BodyOracle for ExactBody<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn support(&self, theta: &[f64]) -> EstimateCI {
        EstimateCI::exact((self.h)(theta))
    }

    fn radius_bound(&self) -> f64 {
        self.radius_bound
    }
}

/// I.i.d. uniform directions on `S^{n−1}` with weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionGrid {
    dim: usize,
    directions: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DirectionGrid {
    pub fn random(dim: usize, count: usize, seed: Seed) -> Result<Self> {
        if dim == 0 || count == 0 {
            return Err(Error::Usage(
                "a direction grid needs a positive dimension and count".into(),
            ));
        }
        let mut rng = seed.rng();
        let directions = (0..count).map(|_| random_unit(dim, &mut rng)).collect();
        Ok(DirectionGrid {
            dim,
            directions,
            weights: vec![1.0 / count as f64; count],
        })
    }

    pub fn new(directions: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = directions.first().map_or(0, Vec::len);
        if dim == 0 || directions.len() != weights.len() {
            return Err(Error::Usage(
                "direction grid needs matching non-empty directions and weights".into(),
            ));
        }
        let mut normed = Vec::with_capacity(directions.len());
        for d in directions {
            check_dim(dim, d.len())?;
            let r = d.iter().map(|t| t * t).sum::<f64>().sqrt();
            if r == 0.0 {
                return Err(Error::Usage("zero direction in grid".into()));
            }
            normed.push(d.iter().map(|t| t / r).collect());
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0) || total <= 0.0 {
            return Err(Error::Usage(
                "grid weights must be non-negative with positive sum".into(),
            ));
        }
        Ok(DirectionGrid {
            dim,
            directions: normed,
            weights: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let r = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if r > 1e-12 {
            return v.into_iter().map(|t| t / r).collect();
        }
    }
}

/// `w_q(K) = (∫ h_K^q dσ)^{1/q}` on the grid.
///
/// Refuses `q < −dim`; `q = −dim` is admitted because the Santaló width needs it.
/// The error combines the spread of `h^q` over the grid with the support errors,
/// the latter treated as fully correlated.
pub fn q_mean_width(body: &dyn BodyOracle, q: f64, grid: &DirectionGrid) -> Result<EstimateCI> {
    check_dim(body.dim(), grid.dim())?;
    if q == 0.0 || !q.is_finite() || q < -(body.dim() as f64) {
        return Err(Error::Domain(format!(
            "w_q needs q != 0 and q >= -{}, got {q}",
            body.dim()
        )));
    }
    let values: Vec<EstimateCI> = grid.directions().iter().map(|d| body.support(d)).collect();
    let weights = grid.weights();
    let s: f64 = values
        .iter()
        .zip(weights)
        .map(|(h, w)| w * h.value.powf(q))
        .sum();
    let value = s.powf(1.0 / q);
    // grid spread (weights are a probability vector, effective size 1/Σw²)
    let var: f64 = values
        .iter()
        .zip(weights)
        .map(|(h, w)| w * (h.value.powf(q) - s).powi(2))
        .sum();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let se_s_grid = if ess > 1.0 {
        (var / (ess - 1.0)).sqrt()
    } else {
        0.0
    };
    let se_s_body: f64 = values
        .iter()
        .zip(weights)
        .map(|(h, w)| w * (q * h.value.powf(q - 1.0)).abs() * h.stderr)
        .sum();
    let se_s = se_s_grid.hypot(se_s_body);
    let stderr = (value / (q * s)).abs() * se_s;
    let count = values
        .iter()
        .map(|h| h.sample_count)
        .max()
        .unwrap_or(0)
        .max(grid.len());
    let mut est = EstimateCI {
        value,
        stderr,
        sample_count: count,
        method: Method::DirectionGrid,
        flags: Vec::new(),
    };
    if values.iter().all(EstimateCI::is_exact)
        && values
            .iter()
            .all(|h| (h.value - values[0].value).abs() <= 1e-14 * h.value)
    {
        // constant support: the power mean is that constant, without rounding drift
        est.value = values[0].value;
        est.stderr = 0.0;
        est.method = Method::ClosedForm;
    }
    Ok(est)
}

/// Inner and outer bracket of `|K|^{1/n}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeBracket {
    pub lower_per_dim: f64,
    pub upper_per_dim: f64,
    pub lower_volume: f64,
    pub upper_volume: f64,
    /// Monte Carlo standard error of the outer volume before the 3σ allowance.
    pub upper_stderr: f64,
    pub directions: usize,
    pub mc_points: usize,
}

/// Bracket `|K|^{1/n}` from `resolution` directions.
///
/// Lower: exact volume of the convex hull of the touching points (and their
/// reflections for symmetric bodies). Upper: rejection estimate of the polyhedron
/// `∩{⟨x,θ_i⟩ ≤ h(θ_i)}` inside a ball containing `K`, plus three standard errors.
pub fn volume_bracket(
    body: &dyn BodyOracle,
    resolution: usize,
    mc_points: usize,
    seed: Seed,
) -> Result<VolumeBracket> {
    let n = body.dim();
    if n > MAX_VOLUME_DIM {
        return Err(Error::ScaleRefusal {
            dim: n,
            max: MAX_VOLUME_DIM,
        });
    }
    if resolution < 100 {
        return Err(Error::Usage(format!(
            "volume bracket needs at least 100 directions, got {resolution}"
        )));
    }
    let grid = DirectionGrid::random(n, resolution, seed.derive("volume-grid", 0))?;
    let dirs = grid.directions();
    let h: Vec<f64> = dirs.iter().map(|d| body.support(d).value).collect();

    let mut points: Vec<Vec<f64>> = dirs.iter().map(|d| body.touching_point(d)).collect();
    if body.symmetric() {
        let reflected: Vec<Vec<f64>> = points
            .iter()
            .map(|p| p.iter().map(|v| -v).collect())
            .collect();
        points.extend(reflected);
    }
    let lower_volume = hull_volume(&points);

    let radius = (1.001 * circumradius_ascent(body, dirs, &h)).min(body.radius_bound());
    let mc_points = mc_points.max(1000);
    let inner = h.iter().cloned().fold(f64::INFINITY, f64::min);
    let counts = map_chunks(mc_points, 16_384, |c, _, len| {
        let mut rng = seed.derive("volume-mc", c as u64).rng();
        let mut hits = 0usize;
        let mut x = vec![0.0; n];
        for _ in 0..len {
            let u = random_unit(n, &mut rng);
            let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
            x.iter_mut().zip(&u).for_each(|(xi, ui)| *xi = r * ui);
            if r <= inner || dirs.iter().zip(&h).all(|(d, hi)| dot(&x, d) <= *hi) {
                hits += 1;
            }
        }
        hits
    });
    let hits: usize = counts.iter().sum();
    let frac = hits as f64 / mc_points as f64;
    let ball = unit_ball_volume(n) * radius.powi(n as i32);
    let upper_est = ball * frac;
    let upper_stderr = ball
        * (frac * (1.0 - frac) / mc_points as f64)
            .sqrt()
            .max(1.0 / mc_points as f64);
    let upper_volume = (upper_est + 3.0 * upper_stderr).max(lower_volume);
    let nf = n as f64;
    Ok(VolumeBracket {
        lower_per_dim: lower_volume.powf(1.0 / nf),
        upper_per_dim: upper_volume.powf(1.0 / nf),
        lower_volume,
        upper_volume,
        upper_stderr,
        directions: resolution,
        mc_points,
    })
}

/// `max h`, after ascending from the best grid directions along `θ ← x(θ)/‖x(θ)‖`.
pub(crate) fn circumradius_ascent(body: &dyn BodyOracle, dirs: &[Vec<f64>], h: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..dirs.len()).collect();
    order.sort_by(|&a, &b| h[b].total_cmp(&h[a]));
    let mut best = h[order[0]];
    for &i in order.iter().take(8) {
        let mut theta = dirs[i].clone();
        for _ in 0..30 {
            let x = body.touching_point(&theta);
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r == 0.0 {
                break;
            }
            theta = x.iter().map(|v| v / r).collect();
            let val = body.support(&theta).value;
            if val <= best * (1.0 + 1e-12) {
                best = best.max(val);
                break;
            }
            best = val;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::MeasureModel;
    use crate::sampler::draw;
    use crate::special::gaussian_zp_radius;
    use std::f64::consts::PI;

    #[test]
    fn grid_invariants() {
        let g = DirectionGrid::random(4, 50, Seed::new(1)).unwrap();
        assert!(g
            .directions()
            .iter()
            .all(|d| (d.iter().map(|t| t * t).sum::<f64>().sqrt() - 1.0).abs() <= 1e-12));
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ball_widths_are_exact() {
        let b = BallBody {
            dim: 5,
            radius: 1.0,
        };
        let g = DirectionGrid::random(5, 100, Seed::new(2)).unwrap();
        for q in [-5.0, -2.0, 1.0, 3.0] {
            let w = q_mean_width(&b, q, &g).unwrap();
            assert_eq!(w.value, 1.0);
            assert_eq!(w.stderr, 0.0);
        }
        assert!(q_mean_width(&b, 0.0, &g).is_err());
        assert!(q_mean_width(&b, -5.5, &g).is_err());
    }

    #[test]
    fn widths_monotone_in_q() {
        let body = ExactBody::new(3, 2.0, |t: &[f64]| t[0].abs() + 0.3 * t[1].abs() + 0.1);
        let g = DirectionGrid::random(3, 500, Seed::new(3)).unwrap();
        let mut last = 0.0;
        for q in [-2.0, -1.0, 1.0, 2.0, 4.0] {
            let w = q_mean_width(&body, q, &g).unwrap().value;
            assert!(w >= last);
            last = w;
        }
    }

    #[test]
    fn gaussian_zp_width() {
        let g = MeasureModel::gaussian(3).unwrap();
        let batch = Arc::new(draw(&g, 200_000, Seed::new(4)).unwrap());
        let body = CentroidBody::new(3.0, batch).unwrap();
        let grid = DirectionGrid::random(3, 200, Seed::new(5)).unwrap();
        let w = q_mean_width(&body, 1.0, &grid).unwrap();
        assert!(
            w.within(gaussian_zp_radius(3.0), 3.0),
            "{w:?} {}",
            gaussian_zp_radius(3.0)
        );
    }

    #[test]
    fn unit_ball_bracket() {
        let b = BallBody {
            dim: 3,
            radius: 1.0,
        };
        let v = volume_bracket(&b, 5000, 400_000, Seed::new(6)).unwrap();
        let exact = (4.0 * PI / 3.0f64).powf(1.0 / 3.0);
        assert!(
            v.lower_per_dim <= exact && exact <= v.upper_per_dim,
            "{v:?}"
        );
        assert!(v.upper_per_dim / v.lower_per_dim <= 1.05);
        assert!(matches!(
            volume_bracket(
                &BallBody {
                    dim: 7,
                    radius: 1.0
                },
                200,
                1000,
                Seed::new(1)
            ),
            Err(Error::ScaleRefusal { .. })
        ));
    }

    #[test]
    fn gaussian_z1_disc_bracket() {
        let g = MeasureModel::gaussian(2).unwrap();
        let batch = Arc::new(draw(&g, 400_000, Seed::new(7)).unwrap());
        let body = CentroidBody::new(1.0, batch).unwrap();
        let v = volume_bracket(&body, 400, 200_000, Seed::new(8)).unwrap();
        // MC error in h is about 0.2%; widen by that much
        assert!(
            v.lower_per_dim <= 2f64.sqrt() * 1.005 && 2f64.sqrt() * 0.995 <= v.upper_per_dim,
            "{v:?}"
        );
        assert!(v.lower_per_dim <= v.upper_per_dim);
    }
}
