//! Subspace parameters: `q_{−c}`, `k_*`, `q_*`, `r_♯` and their hereditary versions.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{
    circumradius_ascent, i_negk_via_sections, marginal_l_surrogate, q_mean_width, BallBody,
    BodyOracle, CentroidBody, DirectionGrid, EstimateCI, Method,
};
use crate::measures::MeasureModel;
use crate::sampler::{draw, Seed, Subspace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Exact,
    LowerCertificate,
    UpperEstimate,
}

/// Value of one parameter with the status of the bound it represents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub value: f64,
    pub bound_kind: BoundKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Subspace>,
    /// Dimension of the minimizing marginal for hereditary parameters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    /// The estimate that decided the value, when there is one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence: Option<EstimateCI>,
    pub config: BTreeMap<String, f64>,
}

impl ParamEstimate {
    fn new(name: &str, value: f64, bound_kind: BoundKind) -> Self {
        ParamEstimate {
            name: name.to_string(),
            value,
            bound_kind,
            witness: None,
            witness_k: None,
            flags: Vec::new(),
            evidence: None,
            config: BTreeMap::new(),
        }
    }

    fn flag(mut self, flag: &str) -> Self {
        if !self.flags.iter().any(|f| f == flag) {
            self.flags.push(flag.to_string());
        }
        self
    }

    fn echo(mut self, key: &str, value: f64) -> Self {
        self.config.insert(key.to_string(), value);
        self
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    /// Whether some decision straddled its threshold after the refinement budget.
    pub fn is_indeterminate(&self) -> bool {
        self.flags.iter().any(|f| f.starts_with("indeterminate"))
    }
}

/// Budget for section-formula estimates inside parameter scans.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionBudget {
    pub subspaces: usize,
    pub directions: usize,
    /// Largest sample multiplier used to resolve a straddling decision.
    pub max_refine: usize,
}

impl Default for SectionBudget {
    fn default() -> Self {
        SectionBudget {
            subspaces: 128,
            directions: 1024,
            max_refine: 8,
        }
    }
}

/// Grassmannian search schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrassmannSearchConfig {
    pub restarts: usize,
    pub local_steps: usize,
    /// Largest Givens angle, in `(0, π/2]`.
    pub move_scale: f64,
    /// Per-step shrink factor of the move angle.
    pub cooling_rate: f64,
    pub haar_samples: usize,
    /// Directions per marginal-density evaluation.
    pub directions: usize,
}

impl Default for GrassmannSearchConfig {
    fn default() -> Self {
        GrassmannSearchConfig {
            restarts: 4,
            local_steps: 24,
            move_scale: 0.6,
            cooling_rate: 0.9,
            haar_samples: 256,
            directions: 1024,
        }
    }
}

impl GrassmannSearchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.restarts > 0
            && self.local_steps > 0
            && self.haar_samples > 0
            && self.directions > 0
            && self.move_scale > 0.0
            && self.move_scale <= std::f64::consts::FRAC_PI_2
            && self.cooling_rate > 0.0
            && self.cooling_rate <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Usage(format!(
                "invalid Grassmann search configuration {self:?}"
            )))
        }
    }
}

/// `q_{−c}(μ, δ) = max{1 ≤ p ≤ n−1 : I_{−p}(μ) ≥ √n/δ}`.
///
/// Descending scan over `p`; each decision is made at three standard errors,
/// doubling the section budget up to `max_refine` times before giving up with
/// `indeterminate-at-p` and deciding on the point estimate.
pub fn q_minus_c(
    m: &MeasureModel,
    delta: f64,
    budget: &SectionBudget,
    seed: Seed,
) -> Result<ParamEstimate> {
    if !(delta > 0.0) {
        return Err(Error::Usage(format!("delta must be positive, got {delta}")));
    }
    let n = m.dim();
    let base = |v: f64, kind| {
        ParamEstimate::new("q_minus_c", v, kind)
            .echo("delta", delta)
            .echo("n", n as f64)
    };
    if n == 1 {
        return Ok(base(1.0, BoundKind::Exact).flag("one-dimensional-convention"));
    }
    let threshold = (n as f64).sqrt() / delta;
    let mut flags = Vec::new();
    for p in (1..n).rev() {
        let mut factor = 1;
        let (qualifies, est) = loop {
            let est = i_negk_via_sections(
                m,
                p,
                budget.subspaces * factor,
                budget.directions * factor,
                seed.derive("qmc", p as u64).derive("refine", factor as u64),
            )?;
            let margin = 3.0 * est.stderr;
            if est.value - margin >= threshold {
                break (true, est);
            }
            if est.value + margin < threshold {
                break (false, est);
            }
            if factor >= budget.max_refine.max(1) {
                flags.push(format!("indeterminate-at-{p}"));
                break (est.value >= threshold, est);
            }
            factor *= 2;
        };
        if qualifies {
            let mut out = base(p as f64, BoundKind::Exact);
            if !est.is_exact() && est.stderr > 0.0 {
                out = out.flag("mc-decision");
            }
            for f in flags {
                out = out.flag(&f);
            }
            out.evidence = Some(est);
            return Ok(out);
        }
    }
    let mut out = base(0.0, BoundKind::Exact).flag("empty-set");
    for f in flags {
        out = out.flag(&f);
    }
    Ok(out)
}

/// Dual Dvoretzky dimension `k_*(K) = n·(w_1(K)/R(K))²`, convention constant 1.
///
/// `R` is the largest support value over the grid, improved by ascent along
/// touching points.
pub fn k_star(body: &dyn BodyOracle, grid: &DirectionGrid) -> Result<EstimateCI> {
    let w = q_mean_width(body, 1.0, grid)?;
    let h: Vec<f64> = grid
        .directions()
        .iter()
        .map(|d| body.support(d).value)
        .collect();
    let r = circumradius_ascent(body, grid.directions(), &h).max(w.value);
    let n = body.dim() as f64;
    let value = n * (w.value / r).powi(2);
    if w.stderr == 0.0 && (w.value - r).abs() <= 1e-14 * r {
        return Ok(EstimateCI::exact(n));
    }
    Ok(EstimateCI {
        value,
        stderr: 2.0 * value * w.stderr / w.value,
        sample_count: w.sample_count,
        method: Method::DirectionGrid,
        flags: w.flags,
    })
}

/// `q_*(μ) = sup{1 ≤ p ≤ n : k_*(Z_p(μ)) ≥ p}` on `{1, 2, 4, …} ∪ {n}`, refined by integer bisection.
pub fn q_star(
    m: &MeasureModel,
    samples: usize,
    grid_directions: usize,
    seed: Seed,
) -> Result<ParamEstimate> {
    let n = m.dim();
    let profile_ball = m.profile().zp_radius(2.0).is_some();
    let batch = if profile_ball {
        None
    } else {
        Some(Arc::new(draw(m, samples, seed.derive("qstar-batch", 0))?))
    };
    let grid = DirectionGrid::random(n, grid_directions, seed.derive("qstar-grid", 0))?;
    let kstar = |p: usize| -> Result<f64> {
        match &batch {
            None => {
                let r = m.profile().zp_radius(p as f64).expect("ball profile");
                Ok(k_star(&BallBody { dim: n, radius: r }, &grid)?.value)
            }
            Some(b) => Ok(k_star(&CentroidBody::new(p as f64, b.clone())?, &grid)?.value),
        }
    };
    let mut grid_ps: Vec<usize> = std::iter::successors(Some(1usize), |p| Some(p * 2))
        .take_while(|&p| p < n)
        .collect();
    grid_ps.push(n);
    let mut last_ok = 0;
    let mut first_fail = None;
    for &p in &grid_ps {
        if kstar(p)? >= p as f64 {
            last_ok = p;
        } else {
            first_fail = Some(p);
            break;
        }
    }
    let mut out_flags = Vec::new();
    if last_ok == 0 {
        out_flags.push("p1-fails");
        last_ok = 1;
    }
    if let Some(mut hi) = first_fail {
        let mut lo = last_ok;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if kstar(mid)? >= mid as f64 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        last_ok = lo;
    }
    let mut out = ParamEstimate::new("q_star", last_ok as f64, BoundKind::UpperEstimate)
        .echo("n", n as f64)
        .echo("samples", samples as f64)
        .echo("directions", grid_directions as f64);
    for f in out_flags {
        out = out.flag(f);
    }
    Ok(out)
}

/// Minimizes `objective` over `G_{n,k}`: Haar restarts followed by Givens moves
/// that rotate one frame column towards `E^⊥`, accepted only when they improve.
/// Each restart stops early once the value is at most `stop`.
fn grassmann_search<F>(
    n: usize,
    k: usize,
    cfg: &GrassmannSearchConfig,
    seed: Seed,
    stop: f64,
    objective: F,
) -> Result<(Subspace, f64)>
where
    F: Fn(&Subspace) -> Result<f64> + Sync,
{
    let runs: Vec<Result<(Subspace, f64)>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut e = Subspace::haar(n, k, seed.derive("search-start", r as u64))?;
            let mut best = objective(&e)?;
            if k == n {
                return Ok((e, best));
            }
            let mut rng = seed.derive("search-moves", r as u64).rng();
            let mut scale = cfg.move_scale;
            let mut dir = vec![0.0; n];
            for _ in 0..cfg.local_steps {
                if best <= stop {
                    break;
                }
                let col = rng.random_range(0..k);
                e.random_orthogonal_direction(&mut rng, &mut dir);
                let angle = scale * (2.0 * rng.random::<f64>() - 1.0);
                let trial = e.givens_move(col, &dir, angle);
                let v = objective(&trial)?;
                if v < best {
                    best = v;
                    e = trial;
                }
                scale *= cfg.cooling_rate;
            }
            Ok((e, best))
        })
        .collect();
    let mut winner: Option<(Subspace, f64)> = None;
    for run in runs {
        let (e, v) = run?;
        if winner.as_ref().is_none_or(|(_, w)| v < *w) {
            winner = Some((e, v));
        }
    }
    Ok(winner.expect("at least one restart"))
}

/// `r_♯(μ, A) = max{1 ≤ k ≤ n−1 : ∃E ∈ G_{n,k} with L_{π_E μ} ≤ A}`.
///
/// A subspace qualifies when the upper Fradelizi endpoint `e·f_{π_E μ}(0)^{1/k}`
/// is at most `A`; marginals with an exact constant use it directly.
pub fn r_sharp(
    m: &MeasureModel,
    a: f64,
    cfg: &GrassmannSearchConfig,
    seed: Seed,
) -> Result<ParamEstimate> {
    cfg.validate()?;
    if !(a > 0.0) {
        return Err(Error::Usage(format!("A must be positive, got {a}")));
    }
    let n = m.dim();
    let base = |v: f64, kind| {
        ParamEstimate::new("r_sharp", v, kind)
            .echo("A", a)
            .echo("n", n as f64)
    };
    if n == 1 {
        return Ok(base(1.0, BoundKind::Exact).flag("one-dimensional-convention"));
    }
    for k in (1..n).rev() {
        let crn = seed.derive("rsharp-crn", k as u64);
        let (e, score) = grassmann_search(n, k, cfg, seed.derive("rsharp", k as u64), a, |e| {
            let l = marginal_l_surrogate(m, e, cfg.directions, crn)?;
            Ok(l.exact.unwrap_or(l.hi))
        })?;
        if score <= a {
            let mut out = base(k as f64, BoundKind::LowerCertificate).echo("witness_score", score);
            out.witness = Some(e);
            return Ok(out);
        }
    }
    Ok(base(1.0, BoundKind::Exact).flag("convention-floor"))
}

/// Inner parameter of a hereditary infimum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HereditaryParam {
    QMinusC { delta: f64 },
    RSharp { a: f64 },
}

impl HereditaryParam {
    fn name(&self) -> &'static str {
        match self {
            HereditaryParam::QMinusC { .. } => "q_minus_c_hereditary",
            HereditaryParam::RSharp { .. } => "r_sharp_hereditary",
        }
    }

    fn eval(
        &self,
        m: &MeasureModel,
        cfg: &GrassmannSearchConfig,
        budget: &SectionBudget,
        seed: Seed,
    ) -> Result<ParamEstimate> {
        match *self {
            HereditaryParam::QMinusC { delta } => q_minus_c(m, delta, budget, seed),
            HereditaryParam::RSharp { a } => r_sharp(m, a, cfg, seed),
        }
    }

    /// Smallest value the inner parameter can take in dimension `k`.
    fn floor(&self, k: usize) -> f64 {
        match self {
            HereditaryParam::QMinusC { .. } if k > 1 => 0.0,
            _ => 1.0,
        }
    }
}

/// `n·inf_k inf_{E ∈ G_{n,k}} param(π_E μ)/k` over `haar_samples` subspaces per `k`,
/// followed by a local search from the best one that accepts strict decreases.
pub fn hereditary(
    param: HereditaryParam,
    m: &MeasureModel,
    cfg: &GrassmannSearchConfig,
    budget: &SectionBudget,
    seed: Seed,
) -> Result<ParamEstimate> {
    cfg.validate()?;
    let n = m.dim();
    let mut best: Option<(f64, usize, Subspace)> = None;
    let mut flags: Vec<String> = Vec::new();
    let inner_seed = |k: usize, i: u64| seed.derive("hereditary-inner", (k as u64) << 32 | i);
    for k in 1..=n {
        let mut consider = |value: f64, e: Subspace, fl: &[String]| {
            for f in fl {
                if !flags.contains(f) {
                    flags.push(f.clone());
                }
            }
            let ratio = value / k as f64;
            if best.as_ref().is_none_or(|(r, _, _)| ratio < *r) {
                best = Some((ratio, k, e));
            }
        };
        if k == n {
            let v = param.eval(m, cfg, budget, inner_seed(k, 0))?;
            consider(v.value, Subspace::whole(n), &v.flags);
            continue;
        }
        let evals: Vec<Result<(Subspace, ParamEstimate)>> = (0..cfg.haar_samples)
            .into_par_iter()
            .map(|i| {
                let e = Subspace::haar(
                    n,
                    k,
                    seed.derive("hereditary-haar", (k as u64) << 32 | i as u64),
                )?;
                let v = param.eval(&m.marginal(&e)?, cfg, budget, inner_seed(k, i as u64))?;
                Ok((e, v))
            })
            .collect();
        let mut local_best: Option<(Subspace, f64)> = None;
        for r in evals {
            let (e, v) = r?;
            if local_best.as_ref().is_none_or(|(_, b)| v.value < *b) {
                local_best = Some((e.clone(), v.value));
            }
            consider(v.value, e, &v.flags);
        }
        let (mut e, mut value) = local_best.expect("haar_samples > 0");
        if value > param.floor(k) {
            // adversarial refinement of the best sampled subspace
            let mut rng = seed.derive("hereditary-moves", k as u64).rng();
            let mut dir = vec![0.0; n];
            let mut scale = cfg.move_scale;
            for step in 0..cfg.local_steps {
                let col = rng.random_range(0..k);
                e.random_orthogonal_direction(&mut rng, &mut dir);
                let trial = e.givens_move(col, &dir, scale * (2.0 * rng.random::<f64>() - 1.0));
                let v = param.eval(
                    &m.marginal(&trial)?,
                    cfg,
                    budget,
                    inner_seed(k, (1 << 31) + step as u64),
                )?;
                if v.value < value {
                    value = v.value;
                    e = trial;
                    consider(v.value, e.clone(), &v.flags);
                    if value <= param.floor(k) {
                        break;
                    }
                }
                scale *= cfg.cooling_rate;
            }
        }
    }
    let (ratio, k, e) = best.expect("k ranges over 1..=n");
    let mut out = ParamEstimate::new(param.name(), n as f64 * ratio, BoundKind::UpperEstimate)
        .echo("n", n as f64)
        .echo("haar_samples", cfg.haar_samples as f64);
    match param {
        HereditaryParam::QMinusC { delta } => out = out.echo("delta", delta),
        HereditaryParam::RSharp { a } => out = out.echo("A", a),
    }
    out.witness = Some(e);
    out.witness_k = Some(k);
    for f in flags {
        out = out.flag(&f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::ExactBody;
    use std::f64::consts::PI;

    #[test]
    fn q_minus_c_gaussian_golden() {
        let g = MeasureModel::gaussian(10).unwrap();
        let b = SectionBudget::default();
        let v = q_minus_c(&g, 2.0, &b, Seed::new(1)).unwrap();
        assert_eq!(v.value, 9.0);
        assert_eq!(v.bound_kind, BoundKind::Exact);
        let e = q_minus_c(&g, 1.0, &b, Seed::new(1)).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.has_flag("empty-set"));
        let one = q_minus_c(
            &g.marginal(&Subspace::haar(10, 1, Seed::new(2)).unwrap())
                .unwrap(),
            1.0,
            &b,
            Seed::new(1),
        )
        .unwrap();
        assert_eq!(one.value, 1.0);
    }

    #[test]
    fn k_star_examples() {
        let ball = BallBody {
            dim: 6,
            radius: 1.0,
        };
        let grid = DirectionGrid::random(6, 300, Seed::new(3)).unwrap();
        assert_eq!(k_star(&ball, &grid).unwrap().value, 6.0);
        // h(θ) = |θ₁| + ε|θ₂| on an equispaced circle grid
        let eps = 0.01;
        let dirs: Vec<Vec<f64>> = (0..3600)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / 3600.0;
                vec![t.cos(), t.sin()]
            })
            .collect();
        let circle = DirectionGrid::new(dirs, vec![1.0; 3600]).unwrap();
        let seg = ExactBody::new(2, 2.0, move |t: &[f64]| t[0].abs() + eps * t[1].abs());
        let k = k_star(&seg, &circle).unwrap().value;
        let expected = 2.0 * (2.0 / PI * (1.0 + eps)).powi(2) / (1.0 + eps * eps);
        assert!((k - expected).abs() < 1e-3, "{k} {expected}");
        assert!((k / 2.0 - (2.0 / PI).powi(2)).abs() < 0.02);
    }

    #[test]
    fn q_star_gaussian_is_n() {
        let g = MeasureModel::gaussian(7).unwrap();
        assert_eq!(q_star(&g, 1000, 100, Seed::new(4)).unwrap().value, 7.0);
    }

    #[test]
    fn r_sharp_gaussian() {
        let cfg = GrassmannSearchConfig::default();
        for n in [2, 3, 5] {
            let g = MeasureModel::gaussian(n).unwrap();
            let r = r_sharp(&g, 1.5, &cfg, Seed::new(5)).unwrap();
            assert_eq!(r.value, (n - 1) as f64);
            if n > 2 {
                assert_eq!(r.bound_kind, BoundKind::LowerCertificate);
                assert!(r.witness.is_some());
            }
        }
    }

    #[test]
    fn r_sharp_monotone_in_a() {
        let cfg = GrassmannSearchConfig {
            restarts: 2,
            local_steps: 6,
            directions: 256,
            ..Default::default()
        };
        let c = MeasureModel::cube(4).unwrap();
        let mut last = 0.0;
        for a in [0.5, 0.9, 1.2, 2.0] {
            let r = r_sharp(&c, a, &cfg, Seed::new(6)).unwrap().value;
            assert!(r >= last, "{a}: {r} < {last}");
            last = r;
        }
    }

    #[test]
    fn hereditary_r_sharp_gaussian() {
        let cfg = GrassmannSearchConfig {
            haar_samples: 16,
            ..Default::default()
        };
        let g = MeasureModel::gaussian(6).unwrap();
        let r = hereditary(
            HereditaryParam::RSharp { a: 1.5 },
            &g,
            &cfg,
            &SectionBudget::default(),
            Seed::new(7),
        )
        .unwrap();
        assert_eq!(r.value, 3.0);
        assert_eq!(r.witness_k, Some(2));
        assert!(r.value <= 6.0);
    }

    #[test]
    fn hereditary_qmc_bounded_by_top_term() {
        let cfg = GrassmannSearchConfig {
            haar_samples: 4,
            local_steps: 2,
            ..Default::default()
        };
        let g = MeasureModel::gaussian(5).unwrap();
        let b = SectionBudget::default();
        let top = q_minus_c(&g, 2.0, &b, Seed::new(8)).unwrap().value;
        let h = hereditary(
            HereditaryParam::QMinusC { delta: 2.0 },
            &g,
            &cfg,
            &b,
            Seed::new(8),
        )
        .unwrap();
        assert!(h.value <= top.floor() + 1e-12);
    }
}
