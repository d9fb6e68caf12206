use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use super::{cnk, mean_se, EstimateCI, Method};
use crate::error::{check_dim, Error, Result};
use crate::measures::{base_of, MeasureModel, Shape, LAPLACE_RATE};
use crate::sampler::seed::map_chunks;
use crate::sampler::{Seed, Subspace};
use crate::special::{ln_gamma, ln_unit_ball_volume};

type Gauge = Box<dyn Fn(&[f64]) -> f64 + Sync>;

/// `(ln f(0), its relative error, ln J_m, N)` for the radial integral
/// `∫_0^∞ f(rθ) r^{m−1} dr = f(0)·J_m·N(θ)^{−m}`; `None` for the Gaussian.
fn radial_setup(base: &MeasureModel, m: usize) -> Option<(f64, f64, f64, Gauge)> {
    let n = base.dim();
    match base.shape() {
        Shape::Gaussian => None,
        Shape::ProductExponential => Some((
            -0.5 * n as f64 * 2f64.ln(),
            0.0,
            ln_gamma(m as f64),
            Box::new(|u: &[f64]| LAPLACE_RATE * u.iter().map(|v| v.abs()).sum::<f64>()),
        )),
        Shape::Uniform(body) => {
            let support = body.support.clone();
            Some((
                -body.ln_volume,
                body.ln_volume_se,
                -(m as f64).ln(),
                Box::new(move |u: &[f64]| support.gauge(u)),
            ))
        }
    }
}

/// `I_{−k}(μ)` from `E‖x‖^{−k} = f(0)·nω_n·J_{n−k}·E_θ[N(θ)^{−(n−k)}]`, a polar integral
/// with finite variance for every `k ≤ n − 1`; antithetic uniform directions.
pub fn neg_moment_radial(
    m: &MeasureModel,
    k: usize,
    directions: usize,
    seed: Seed,
) -> Result<EstimateCI> {
    let n = m.dim();
    if k == 0 || k >= n {
        return Err(Error::Usage(format!(
            "radial I_-k needs 1 <= k <= n-1, got k={k}, n={n}"
        )));
    }
    if m.is_marginal() {
        return Err(Error::UnsupportedMeasure(
            "radial I_-k needs the density of a full-dimensional measure".into(),
        ));
    }
    let kf = k as f64;
    let Some((ln_f0, ln_f0_se, ln_j, gauge)) = radial_setup(m, n - k) else {
        return Ok(EstimateCI::exact(crate::special::gaussian_norm_moment(
            n, -kf,
        )));
    };
    let mf = (n - k) as f64;
    let pairs = directions.max(16);
    let parts = map_chunks(pairs, 4096, |c, _, len| {
        let mut rng = seed.derive("radial-dirs", c as u64).rng();
        (0..len)
            .map(|_| {
                let u = super::random_unit(n, &mut rng);
                let neg: Vec<f64> = u.iter().map(|x| -x).collect();
                0.5 * (gauge(&u).powf(-mf) + gauge(&neg).powf(-mf))
            })
            .collect::<Vec<f64>>()
    });
    let (mean, se, count) = mean_se(parts.into_iter().flatten());
    let ln_pre = ln_f0 + (n as f64).ln() + ln_unit_ball_volume(n) + ln_j;
    let moment = ln_pre.exp() * mean;
    let value = moment.powf(-1.0 / kf);
    let rel = (se / mean).hypot(ln_f0_se);
    Ok(EstimateCI {
        value,
        stderr: value * rel / kf,
        sample_count: count,
        method: Method::GaugeQuadrature,
        flags: Vec::new(),
    })
}

/// `f_{π_E μ}(0) = ∫_{E^⊥} f_μ`.
///
/// Gaussian marginals are exact. For the other families the integral is taken
/// in polar coordinates on `E^⊥` (dimension `m = n − k`):
/// `f_{π_E μ}(0) = f(0)·mω_m·J_m·E_u[N(u)^{−m}]`, where `N` is the gauge of the
/// level sets and `J_m = 1/m` for uniform bodies, `Γ(m)` for the Laplace product.
/// For `m = 1` the average over `u = ±v` is exact; otherwise `directions`
/// antithetic pairs of uniform directions of `E^⊥` are used.
pub fn marginal_density_at_zero(
    m: &MeasureModel,
    e: &Subspace,
    directions: usize,
    seed: Seed,
) -> Result<EstimateCI> {
    check_dim(m.dim(), e.ambient())?;
    if e.k() >= m.dim() {
        return Err(Error::Usage(
            "marginal density at zero needs k < n (E^⊥ must be non-trivial)".into(),
        ));
    }
    let frame = match m.view() {
        Some(outer) => outer.compose(e)?,
        None => e.clone(),
    };
    let n = m.base_dim();
    let k = frame.k();
    let codim = n - k;
    let base = base_of(m);

    let Some((ln_f0, ln_f0_se, ln_j, gauge)) = radial_setup(&base, codim) else {
        return Ok(EstimateCI::exact((2.0 * PI).powf(-(k as f64) / 2.0)));
    };
    let mf = codim as f64;
    let ln_prefactor = ln_f0 + mf.ln() + ln_unit_ball_volume(codim) + ln_j;

    let (mean, se, count) = if codim == 1 {
        let v = frame.normal_line()?;
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        (0.5 * (gauge(&v).recip() + gauge(&neg).recip()), 0.0, 2)
    } else {
        let pairs = directions.max(16);
        let parts = map_chunks(pairs, 4096, |c, _, len| {
            let mut rng = seed.derive("fzero-dirs", c as u64).rng();
            let mut u = vec![0.0; n];
            let mut neg = vec![0.0; n];
            (0..len)
                .map(|_| {
                    frame.random_orthogonal_direction(&mut rng, &mut u);
                    neg.iter_mut().zip(&u).for_each(|(a, b)| *a = -b);
                    0.5 * (gauge(&u).powf(-mf) + gauge(&neg).powf(-mf))
                })
                .collect::<Vec<f64>>()
        });
        mean_se(parts.into_iter().flatten())
    };
    let value = (ln_prefactor).exp() * mean;
    let stderr = value * (se / mean).hypot(ln_f0_se);
    let method = if stderr == 0.0 {
        Method::ClosedForm
    } else {
        Method::GaugeQuadrature
    };
    Ok(EstimateCI {
        value,
        stderr,
        sample_count: count,
        method,
        flags: Vec::new(),
    })
}

/// `I_{−k}(μ) = c_{n,k}·(∫_{G_{n,k}} f_{π_E μ}(0) dν)^{−1/k}` with a Haar Monte Carlo average.
///
/// The standard error comes from the spread of the per-subspace estimates, which
/// already contains their own sampling noise.
pub fn i_negk_via_sections(
    m: &MeasureModel,
    k: usize,
    subspace_count: usize,
    directions: usize,
    seed: Seed,
) -> Result<EstimateCI> {
    let n = m.dim();
    if k == 0 || k >= n {
        return Err(Error::Usage(format!(
            "section formula needs 1 <= k <= n-1, got k={k}, n={n}"
        )));
    }
    let count = subspace_count.max(1);
    let values = map_chunks(count, 1, |i, _, _| -> Result<EstimateCI> {
        let e = Subspace::haar(n, k, seed.derive("sections-haar", i as u64))?;
        marginal_density_at_zero(m, &e, directions, seed.derive("sections-fzero", i as u64))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (mut avg, mut se, _) = mean_se(values.iter().map(|v| v.value));
    if count == 1 {
        se = values[0].stderr;
    }
    let spread = values
        .iter()
        .map(|v| (v.value - avg).abs())
        .fold(0.0, f64::max);
    if values.iter().all(EstimateCI::is_exact) && spread <= 1e-13 * avg {
        avg = values[0].value;
        se = 0.0;
    }
    let c = cnk(n, k)?;
    let value = c * avg.powf(-1.0 / k as f64);
    let stderr = value * se / (k as f64 * avg);
    let samples = values
        .iter()
        .map(|v| v.sample_count)
        .sum::<usize>()
        .max(count);
    Ok(EstimateCI {
        value,
        stderr,
        sample_count: samples,
        method: Method::SectionFormula,
        flags: Vec::new(),
    })
}

/// Fradelizi interval for `L_{π_E μ}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalLInterval {
    pub lo: f64,
    pub hi: f64,
    pub lo_stderr: f64,
    /// Exact marginal constant when known (Gaussian marginals).
    pub exact: Option<f64>,
}

/// `[f_{π_E μ}(0)^{1/k}, e·f_{π_E μ}(0)^{1/k}]` for an isotropic `μ`.
pub fn marginal_l_surrogate(
    m: &MeasureModel,
    e: &Subspace,
    directions: usize,
    seed: Seed,
) -> Result<MarginalLInterval> {
    let f0 = marginal_density_at_zero(m, e, directions, seed)?;
    let k = e.k() as f64;
    let lo = f0.value.powf(1.0 / k);
    let exact = matches!(m.shape(), Shape::Gaussian).then(|| (2.0 * PI).powf(-0.5));
    Ok(MarginalLInterval {
        lo,
        hi: E * lo,
        lo_stderr: lo * f0.stderr / (k * f0.value),
        exact,
    })
}
