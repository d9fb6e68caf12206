//! Monte Carlo estimators: moments, centroid bodies, mean widths, volumes and marginal densities.

mod body;
mod hull;
mod sections;

use serde::{Deserialize, Serialize};

pub(crate) use body::{circumradius_ascent, random_unit};
pub use body::{
    q_mean_width, volume_bracket, BallBody, BodyOracle, CentroidBody, DirectionGrid, ExactBody,
    VolumeBracket, MAX_VOLUME_DIM,
};
pub use hull::hull_volume;
pub use sections::{
    i_negk_via_sections, marginal_density_at_zero, marginal_l_surrogate, neg_moment_radial,
    MarginalLInterval,
};

use crate::error::{check_dim, Error, Result};
use crate::measures::MeasureModel;
use crate::sampler::SampleBatch;
use crate::special::ln_unit_ball_volume;

/// How an [`EstimateCI`] was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    MonteCarlo,
    SectionFormula,
    GaugeQuadrature,
    DirectionGrid,
    Jackknife,
    Bisection,
}

/// A point estimate with standard error; `stderr == 0` only for closed forms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateCI {
    pub value: f64,
    pub stderr: f64,
    pub sample_count: usize,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl EstimateCI {
    pub fn exact(value: f64) -> Self {
        EstimateCI {
            value,
            stderr: 0.0,
            sample_count: 0,
            method: Method::ClosedForm,
            flags: Vec::new(),
        }
    }

    pub fn monte_carlo(value: f64, stderr: f64, sample_count: usize) -> Self {
        EstimateCI {
            value,
            stderr,
            sample_count,
            method: Method::MonteCarlo,
            flags: Vec::new(),
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_flag(mut self, flag: &str) -> Self {
        if !self.flags.iter().any(|f| f == flag) {
            self.flags.push(flag.to_string());
        }
        self
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    pub fn is_exact(&self) -> bool {
        self.stderr == 0.0 && self.method == Method::ClosedForm
    }

    /// `|a − b| ≤ k·√(se_a² + se_b²)`.
    pub fn agrees_with(&self, other: &EstimateCI, k: f64) -> bool {
        (self.value - other.value).abs() <= k * self.stderr.hypot(other.stderr)
    }

    /// `|a − x| ≤ k·se_a` for an exact reference `x`.
    pub fn within(&self, exact: f64, k: f64) -> bool {
        (self.value - exact).abs() <= k * self.stderr
    }
}

/// Mean and standard error of the mean, summed in a fixed order.
pub(crate) fn mean_se(values: impl IntoIterator<Item = f64>) -> (f64, f64, usize) {
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
    for v in values {
        s += v;
        s2 += v * v;
        n += 1;
    }
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let nf = n as f64;
    let mean = s / nf;
    let var = if n > 1 {
        ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    (mean, (var / nf).sqrt(), n)
}

/// `(M)^{1/q}` with delta-method error, from the mean `M` of some power.
fn power_root(mean: f64, se: f64, q: f64, count: usize) -> EstimateCI {
    let value = mean.powf(1.0 / q);
    EstimateCI::monte_carlo(value, (value / (q * mean)).abs() * se, count)
}

fn check_unit(theta: &[f64]) -> Result<()> {
    let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Usage(format!(
            "direction must be a unit vector, has norm {norm}"
        )));
    }
    Ok(())
}

/// `I_q(μ) = (E‖x‖^q)^{1/q}` from the batch.
///
/// Refuses `q ≤ −n/2`, where the estimator's variance is infinite.
pub fn moment_iq(m: &MeasureModel, q: f64, batch: &SampleBatch) -> Result<EstimateCI> {
    let n = m.dim();
    check_dim(n, batch.dim())?;
    let nf = n as f64;
    if q == 0.0 || !q.is_finite() || q <= -nf {
        return Err(Error::Domain(format!(
            "I_q needs q in (-{n}, inf) without 0, got {q}"
        )));
    }
    if q <= -nf / 2.0 {
        return Err(Error::VarianceRefusal { q, dim: n });
    }
    let (mean, se, count) = mean_se(
        batch
            .rows()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().powf(q / 2.0)),
    );
    Ok(power_root(mean, se, q, count))
}

/// `c_{n,k} = ((n−k)ω_{n−k} / (nω_n))^{1/k}`, evaluated in log space.
pub fn cnk(n: usize, k: usize) -> Result<f64> {
    if k == 0 || k >= n {
        return Err(Error::Usage(format!(
            "c_(n,k) needs 1 <= k <= n-1, got n={n}, k={k}"
        )));
    }
    let ln = ((n - k) as f64).ln() + ln_unit_ball_volume(n - k)
        - (n as f64).ln()
        - ln_unit_ball_volume(n);
    Ok((ln / k as f64).exp())
}

/// `h_{Z_p(μ)}(θ) = (E|⟨x,θ⟩|^p)^{1/p}`.
pub fn support_zp(
    m: &MeasureModel,
    p: f64,
    theta: &[f64],
    batch: &SampleBatch,
) -> Result<EstimateCI> {
    check_dim(m.dim(), theta.len())?;
    support_zp_batch(p, theta, batch)
}

pub(crate) fn support_zp_batch(p: f64, theta: &[f64], batch: &SampleBatch) -> Result<EstimateCI> {
    check_dim(batch.dim(), theta.len())?;
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("Z_p needs p >= 1, got {p}")));
    }
    check_unit(theta)?;
    let (mean, se, count) = mean_se(batch.rows().map(|x| dot(x, theta).abs().powf(p)));
    let est = power_root(mean, se, p, count);
    Ok(if p > 40.0 {
        est.with_flag("high-variance")
    } else {
        est
    })
}

/// Touching point of `Z_p(μ)` in direction `θ`, with the support value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchingPoint {
    pub point: Vec<f64>,
    pub support: EstimateCI,
}

/// `h^{1−p}·E(|⟨x,θ⟩|^{p−1} sign⟨x,θ⟩ x)`, the gradient of the estimated support function.
pub fn boundary_point_zp(
    m: &MeasureModel,
    p: f64,
    theta: &[f64],
    batch: &SampleBatch,
) -> Result<TouchingPoint> {
    check_dim(m.dim(), theta.len())?;
    boundary_point_batch(p, theta, batch)
}

pub(crate) fn boundary_point_batch(
    p: f64,
    theta: &[f64],
    batch: &SampleBatch,
) -> Result<TouchingPoint> {
    let support = support_zp_batch(p, theta, batch)?;
    let n = batch.dim();
    let mut acc = vec![0.0; n];
    for x in batch.rows() {
        let t = dot(x, theta);
        let w = t.abs().powf(p - 1.0) * t.signum();
        for (a, xi) in acc.iter_mut().zip(x) {
            *a += w * xi;
        }
    }
    let scale = support.value.powf(1.0 - p) / batch.len() as f64;
    acc.iter_mut().for_each(|a| *a *= scale);
    Ok(TouchingPoint {
        point: acc,
        support,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
