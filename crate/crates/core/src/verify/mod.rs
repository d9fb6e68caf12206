//! Executable relation checks with fitted constants and verdicts.

mod checks;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::EstimateCI;
use crate::measures::{MeasureModel, MeasureSpec};
use crate::parameters::GrassmannSearchConfig;
use crate::sampler::{ChainConfig, Seed};

pub use checks::{chain_fit, ChainFit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationId {
    SectionFormula,
    ProjectionIdentity,
    #[serde(rename = "Ik-width")]
    IkWidth,
    #[serde(rename = "LZn-identity")]
    LZnIdentity,
    Fradelizi,
    ReverseInclusion,
    LambdaPolar,
    TiltDerivatives,
    TiltStability,
    #[serde(rename = "theorem1-chain")]
    Theorem1Chain,
    #[serde(rename = "corollary34")]
    Corollary34,
    VolumeLower,
    GoodMarginals,
    ZpSqrtpMonotone,
    SantaloWidth,
    #[serde(rename = "I2-normalization")]
    I2Normalization,
    #[serde(rename = "negmoment-via-L")]
    NegmomentViaL,
}

/// Whether a relation is an equality checked at three standard errors or an
/// inequality with an a-priori band on its fitted constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationKind {
    Identity,
    Band,
}

/// How per-report constants combine into one fitted constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// Ratio farthest from 1.
    Identity,
    /// Largest value.
    Upper,
    /// Smallest value.
    Lower,
    /// Largest of `max(c, 1/c)`.
    TwoSided,
}

impl RelationId {
    pub const ALL: [RelationId; 17] = [
        RelationId::SectionFormula,
        RelationId::ProjectionIdentity,
        RelationId::IkWidth,
        RelationId::LZnIdentity,
        RelationId::Fradelizi,
        RelationId::ReverseInclusion,
        RelationId::LambdaPolar,
        RelationId::TiltDerivatives,
        RelationId::TiltStability,
        RelationId::Theorem1Chain,
        RelationId::Corollary34,
        RelationId::VolumeLower,
        RelationId::GoodMarginals,
        RelationId::ZpSqrtpMonotone,
        RelationId::SantaloWidth,
        RelationId::I2Normalization,
        RelationId::NegmomentViaL,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            RelationId::SectionFormula => "section-formula",
            RelationId::ProjectionIdentity => "projection-identity",
            RelationId::IkWidth => "Ik-width",
            RelationId::LZnIdentity => "LZn-identity",
            RelationId::Fradelizi => "fradelizi",
            RelationId::ReverseInclusion => "reverse-inclusion",
            RelationId::LambdaPolar => "lambda-polar",
            RelationId::TiltDerivatives => "tilt-derivatives",
            RelationId::TiltStability => "tilt-stability",
            RelationId::Theorem1Chain => "theorem1-chain",
            RelationId::Corollary34 => "corollary34",
            RelationId::VolumeLower => "volume-lower",
            RelationId::GoodMarginals => "good-marginals",
            RelationId::ZpSqrtpMonotone => "zp-sqrtp-monotone",
            RelationId::SantaloWidth => "santalo-width",
            RelationId::I2Normalization => "I2-normalization",
            RelationId::NegmomentViaL => "negmoment-via-L",
        }
    }

    /// The relation being checked, written out.
    pub fn formula(self) -> &'static str {
        match self {
            RelationId::SectionFormula => {
                "I_{-k}(mu) = c_{n,k} (int_{G_{n,k}} f_{pi_E mu}(0) dnu)^{-1/k}"
            }
            RelationId::ProjectionIdentity => "Proj_E Z_q(mu) = Z_q(pi_E mu)",
            RelationId::IkWidth => "I_{-k}(mu) ~ sqrt(n/k) w_{-k}(Z_k(mu))",
            RelationId::LZnIdentity => "L_mu |Z_n(mu)|^{1/n} ~ 1",
            RelationId::Fradelizi => "||mu||_inf^{1/n} <= e f_mu(0)^{1/n}",
            RelationId::ReverseInclusion => "Z_q(mu) <= c (q/p) Z_p(mu)",
            RelationId::LambdaPolar => "Lambda_p(mu) ~ p Z_p(mu)^o",
            RelationId::TiltDerivatives => {
                "bar(mu'_x) = grad Lambda(x), Cov(mu'_x) = Hess Lambda(x)"
            }
            RelationId::TiltStability => "Z_q(mu) ~ Z_q(mu_x) for x in Lambda_p/2, q >= p",
            RelationId::Theorem1Chain => "r#^H(mu, A) <= q_{-c}^H(mu, C1 A)",
            RelationId::Corollary34 => "I_{-p}(mu) >= I_2(mu) / (C1 A) for p <= r#^H",
            RelationId::VolumeLower => "|Z_p(mu)|^{1/n} >= (c/A) sqrt(p/n) for p <= r#^H",
            RelationId::GoodMarginals => "nu(E : L_{pi_E mu} <= C1 L_mu) >= 1 - e^{-k}",
            RelationId::ZpSqrtpMonotone => "|Z_p|^{1/n}/sqrt(p) >> |Z_q|^{1/n}/sqrt(q) for p < q",
            RelationId::SantaloWidth => "w_{-n}(K) = |B|^{1/n}/|K^o|^{1/n} >= |K|^{1/n}/|B|^{1/n}",
            RelationId::I2Normalization => "I_2(mu) = sqrt(n), Cov(mu) = I",
            RelationId::NegmomentViaL => "I_{-k}(mu) ~ sqrt(n) (int L_{pi_E mu}^k dnu)^{-1/k}",
        }
    }

    pub fn kind(self) -> RelationKind {
        match self {
            RelationId::SectionFormula
            | RelationId::ProjectionIdentity
            | RelationId::TiltDerivatives
            | RelationId::I2Normalization => RelationKind::Identity,
            _ => RelationKind::Band,
        }
    }

    pub fn orientation(self) -> Orientation {
        match self {
            RelationId::SectionFormula
            | RelationId::ProjectionIdentity
            | RelationId::I2Normalization => Orientation::Identity,
            RelationId::IkWidth
            | RelationId::LZnIdentity
            | RelationId::LambdaPolar
            | RelationId::TiltStability
            | RelationId::NegmomentViaL => Orientation::TwoSided,
            RelationId::SantaloWidth | RelationId::VolumeLower | RelationId::GoodMarginals => {
                Orientation::Lower
            }
            _ => Orientation::Upper,
        }
    }

    /// Relations that need volume brackets and therefore `n ≤ 6`.
    pub fn needs_volume(self) -> bool {
        matches!(
            self,
            RelationId::LZnIdentity
                | RelationId::VolumeLower
                | RelationId::ZpSqrtpMonotone
                | RelationId::SantaloWidth
        )
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for RelationId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationId::ALL
            .into_iter()
            .find(|r| r.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse(format!("unknown relation {s:?}")))
    }
}

/// Parameters of one check; unset fields take per-relation defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", rename = "A")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
}

impl GridPoint {
    pub fn new(n: usize) -> Self {
        GridPoint {
            n,
            ..Default::default()
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = Some(p);
        self
    }

    pub fn with_q(mut self, q: f64) -> Self {
        self.q = Some(q);
        self
    }

    pub fn with_a(mut self, a: f64) -> Self {
        self.a = Some(a);
        self
    }

    pub fn with_x(mut self, x: Vec<f64>) -> Self {
        self.x = Some(x);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

/// Outcome of one relation check at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub relation: RelationId,
    pub measure_spec: String,
    pub grid_point: GridPoint,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lhs: Option<EstimateCI>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rhs: Option<EstimateCI>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_constant: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<[f64; 2]>,
    pub verdict: Verdict,
    pub seed: Seed,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Named side statistics of the check, e.g. the largest covariance z-score.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<String, f64>,
}

/// Sample budgets for relation checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    /// Batch size for moment and centroid-body estimates.
    pub samples: usize,
    /// Haar subspaces in section-formula averages.
    pub subspaces: usize,
    /// Directions per marginal-density estimate.
    pub directions: usize,
    /// Directions on the sphere for widths, gauges and support-ratio scans.
    pub grid_directions: usize,
    pub volume_resolution: usize,
    pub volume_mc: usize,
    /// Haar subspaces in the good-marginals fraction.
    pub haar: usize,
    pub tilt_samples: usize,
    /// Batch size of sampled log-Laplace transforms.
    pub laplace_samples: usize,
    pub search: GrassmannSearchConfig,
    /// Haar subspaces per dimension in the chain-constant fit.
    pub chain_subspaces: usize,
    pub chain: ChainConfig,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            samples: 200_000,
            subspaces: 128,
            directions: 1024,
            grid_directions: 200,
            volume_resolution: 400,
            volume_mc: 200_000,
            haar: 500,
            tilt_samples: 200_000,
            laplace_samples: 20_000,
            search: GrassmannSearchConfig {
                haar_samples: 32,
                ..Default::default()
            },
            chain_subspaces: 16,
            chain: ChainConfig::default(),
        }
    }
}

impl Budget {
    /// A small budget for smoke runs and determinism audits.
    pub fn quick() -> Self {
        Budget {
            samples: 20_000,
            subspaces: 16,
            directions: 256,
            grid_directions: 50,
            volume_resolution: 150,
            volume_mc: 20_000,
            haar: 50,
            tilt_samples: 20_000,
            laplace_samples: 5_000,
            search: GrassmannSearchConfig {
                restarts: 2,
                local_steps: 4,
                haar_samples: 4,
                directions: 256,
                ..Default::default()
            },
            chain_subspaces: 4,
            chain: ChainConfig::default(),
        }
    }
}

/// Per-comparison `z` threshold that keeps `m` simultaneous two-sided comparisons
/// at the familywise error of one 3σ test (Bonferroni).
pub fn familywise_z(m: usize) -> f64 {
    use statrs::function::erf::{erfc, erfc_inv};
    use std::f64::consts::SQRT_2;
    if m <= 1 {
        return 3.0;
    }
    SQRT_2 * erfc_inv(erfc(3.0 / SQRT_2) / m as f64)
}

/// Runs one relation on one measure at one grid point.
pub fn run_check(
    relation: RelationId,
    m: &MeasureModel,
    gp: &GridPoint,
    budget: &Budget,
    seed: Seed,
) -> Result<RelationReport> {
    crate::error::check_dim(m.dim(), gp.n)?;
    checks::run(relation, m, gp, budget, seed)
}

/// Default grid points of a relation in dimension `n`; empty when the relation
/// does not apply (volume relations above the cap, subspace relations at `n = 1`).
pub fn default_points(relation: RelationId, n: usize) -> Vec<GridPoint> {
    let base = GridPoint::new(n);
    if n < 2 || (relation.needs_volume() && n > crate::functionals::MAX_VOLUME_DIM) {
        return if relation == RelationId::I2Normalization || relation == RelationId::Fradelizi {
            vec![base]
        } else {
            vec![]
        };
    }
    let ks = || {
        let mut ks = vec![1, n / 3, 2 * n / 3, n - 1];
        ks.retain(|&k| k >= 1 && k < n);
        ks.dedup();
        ks
    };
    match relation {
        RelationId::SectionFormula | RelationId::IkWidth | RelationId::NegmomentViaL => {
            ks().into_iter().map(|k| base.clone().with_k(k)).collect()
        }
        RelationId::LambdaPolar => [2.0, 4.0, 8.0]
            .into_iter()
            .map(|p| base.clone().with_p(p))
            .collect(),
        RelationId::TiltStability => [(2.0, 2.0), (2.0, 4.0)]
            .into_iter()
            .map(|(p, q)| base.clone().with_p(p).with_q(q))
            .collect(),
        RelationId::ReverseInclusion => [(1.0, 2.0), (2.0, 4.0), (4.0, 8.0)]
            .into_iter()
            .map(|(p, q)| base.clone().with_p(p).with_q(q))
            .collect(),
        RelationId::GoodMarginals => (2..=4)
            .filter(|&k| k < n)
            .map(|k| base.clone().with_k(k))
            .collect(),
        RelationId::ZpSqrtpMonotone => {
            let mut v = vec![base.clone().with_p(1.0).with_q(2.0)];
            if n > 2 {
                v.push(base.clone().with_p(2.0).with_q(n as f64));
            }
            v
        }
        RelationId::SantaloWidth => [1.0, 2.0]
            .into_iter()
            .map(|p| base.clone().with_p(p))
            .collect(),
        RelationId::Theorem1Chain | RelationId::Corollary34 | RelationId::VolumeLower => {
            vec![base.with_a(2.0)]
        }
        _ => vec![base],
    }
}

/// Smallest constant making the relation hold on every usable report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedConstant {
    pub constant: f64,
    pub used: usize,
    /// Indeterminate reports and reports without a constant.
    pub excluded: usize,
}

pub fn fit_constant(relation: RelationId, reports: &[RelationReport]) -> Result<FittedConstant> {
    let mut used = Vec::new();
    let mut excluded = 0;
    for r in reports.iter().filter(|r| r.relation == relation) {
        match (r.verdict, r.fitted_constant) {
            (Verdict::Indeterminate, _) | (_, None) => excluded += 1,
            (_, Some(c)) => used.push(c),
        }
    }
    if used.is_empty() {
        return Err(Error::Usage(format!(
            "no report of {relation} carries a fitted constant"
        )));
    }
    let constant = match relation.orientation() {
        Orientation::Identity => used
            .iter()
            .cloned()
            .max_by(|a, b| a.ln().abs().total_cmp(&b.ln().abs()))
            .expect("non-empty"),
        Orientation::Upper => used.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        Orientation::Lower => used.iter().cloned().fold(f64::INFINITY, f64::min),
        Orientation::TwoSided => used
            .iter()
            .map(|c| c.max(1.0 / c))
            .fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(FittedConstant {
        constant,
        used: used.len(),
        excluded,
    })
}

/// Grid summary: the fitted constant and the least-squares slope of its log against `log n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub max_fitted_constant: Option<f64>,
    pub trend_slope: Option<f64>,
    pub pass: usize,
    pub fail: usize,
    pub indeterminate: usize,
    pub errors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFailure {
    pub measure_spec: String,
    pub grid_point: GridPoint,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub relation: RelationId,
    pub reports: Vec<RelationReport>,
    pub failures: Vec<GridFailure>,
    pub summary: GridSummary,
}

/// Slope of `ln c` against `ln n` over `(n, c)` pairs; needs two distinct `n`.
pub fn trend_slope(points: &[(usize, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, c)| *c > 0.0 && c.is_finite())
        .map(|&(n, c)| ((n as f64).ln(), c.ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if pts.len() < 2 || sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Per-`n` constants of a relation, oriented as in [`fit_constant`].
pub fn constants_by_n(relation: RelationId, reports: &[RelationReport]) -> Vec<(usize, f64)> {
    let mut ns: Vec<usize> = reports.iter().map(|r| r.grid_point.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .filter_map(|n| {
            let at: Vec<RelationReport> = reports
                .iter()
                .filter(|r| r.grid_point.n == n)
                .cloned()
                .collect();
            fit_constant(relation, &at).ok().map(|f| (n, f.constant))
        })
        .collect()
}

/// Runs a relation over `specs × n_values` and its default grid points, concurrently,
/// keeping reports in grid order. Build and estimator errors are collected, not fatal.
pub fn run_grid(
    relation: RelationId,
    specs: &[MeasureSpec],
    n_values: &[usize],
    budget: &Budget,
    seed: Seed,
    base_dir: Option<&Path>,
) -> Result<GridOutcome> {
    let mut tasks = Vec::new();
    for spec in specs {
        for &n in n_values {
            for gp in default_points(relation, n) {
                tasks.push((spec.with_dim(n), gp));
            }
        }
    }
    if tasks.is_empty() {
        return Err(Error::Usage(format!("empty grid for {relation}")));
    }
    let results: Vec<std::result::Result<RelationReport, GridFailure>> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, (spec, gp))| {
            let s = seed.derive(relation.tag(), i as u64);
            spec.build(base_dir, budget.chain, s.derive("build", 0))
                .and_then(|m| run_check(relation, &m, gp, budget, s))
                .map_err(|e| GridFailure {
                    measure_spec: spec.to_string(),
                    grid_point: gp.clone(),
                    error: e.to_string(),
                })
        })
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rep) => reports.push(rep),
            Err(f) => failures.push(f),
        }
    }
    let count = |v: Verdict| reports.iter().filter(|r| r.verdict == v).count();
    let summary = GridSummary {
        max_fitted_constant: fit_constant(relation, &reports).ok().map(|f| f.constant),
        trend_slope: trend_slope(&constants_by_n(relation, &reports)),
        pass: count(Verdict::Pass),
        fail: count(Verdict::Fail),
        indeterminate: count(Verdict::Indeterminate),
        errors: failures.len(),
    };
    Ok(GridOutcome {
        relation,
        reports,
        failures,
        summary,
    })
}

#[cfg(test)]
mod tests;
