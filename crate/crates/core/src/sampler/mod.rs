//! Random generation: measure samples, Haar subspaces and tilted samples.

mod batch;
mod chain;
pub(crate) mod seed;
mod subspace;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

pub use batch::{Provenance, SampleBatch};
pub use chain::ChainConfig;
pub(crate) use chain::{hit_and_run, truncated_exp};
pub use seed::{Seed, DEFAULT_MASTER_SEED};
pub use subspace::{project, Subspace};

use crate::error::{check_dim, Error, Result};
use crate::measures::{ConvexSupport, MeasureModel, Shape, LAPLACE_RATE};
use seed::map_chunks;

const DIRECT_CHUNK: usize = 8192;
const CHAIN_CHUNK: usize = 4096;

/// Haar-distributed `k`-subspace of `R^n`.
pub fn haar_subspace(n: usize, k: usize, seed: Seed) -> Result<Subspace> {
    Subspace::haar(n, k, seed)
}

/// `count` samples of `m`; bit-identical for a given seed at any thread count.
///
/// Marginal views are sampled in the base space and projected.
pub fn draw(m: &MeasureModel, count: usize, seed: Seed) -> Result<SampleBatch> {
    sample_impl(m, None, count, seed, "draw")
}

/// `count` samples of the tilted measure `μ′_x ∝ e^{⟨z,x⟩} dμ(z)`.
pub fn tilted_draw(m: &MeasureModel, x: &[f64], count: usize, seed: Seed) -> Result<SampleBatch> {
    m.laplace_domain_check(x)?;
    sample_impl(m, Some(x), count, seed, "tilted-draw")
}

fn sample_impl(
    m: &MeasureModel,
    tilt: Option<&[f64]>,
    count: usize,
    seed: Seed,
    tag: &str,
) -> Result<SampleBatch> {
    if count == 0 {
        return Err(Error::Usage("sample count must be at least 1".into()));
    }
    if let Some(x) = tilt {
        check_dim(m.dim(), x.len())?;
    }
    let n = m.base_dim();
    let base_tilt = tilt
        .map(|x| m.lift(x))
        .filter(|x| x.iter().any(|v| *v != 0.0));
    let strategy = Strategy::choose(m, base_tilt.as_deref(), seed);
    let chunk = if strategy.is_chain() {
        CHAIN_CHUNK
    } else {
        DIRECT_CHUNK
    };
    let parts = map_chunks(count, chunk, |c, _, len| {
        let mut rng = seed.derive(tag, c as u64).rng();
        let mut out = Vec::with_capacity(len * n);
        strategy.fill(m, base_tilt.as_deref(), len, &mut rng, &mut out);
        out
    });
    let points = parts.concat();
    let label = match tilt {
        Some(x) => format!("tilt({},{:?})", m.label(), x),
        None => m.label().to_string(),
    };
    let batch = SampleBatch::new(
        n,
        points,
        Provenance {
            measure: label,
            seed,
        },
    )?;
    match m.view() {
        Some(e) => project(&batch, e),
        None => Ok(batch),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Strategy {
    Direct,
    /// Uniform proposals accepted with probability `e^{⟨z,x⟩ − h_K(x)}`.
    Rejection {
        log_envelope: f64,
    },
    Chain,
}

impl Strategy {
    fn is_chain(self) -> bool {
        self == Strategy::Chain
    }

    fn choose(m: &MeasureModel, tilt: Option<&[f64]>, seed: Seed) -> Strategy {
        let Shape::Uniform(body) = m.shape() else {
            return Strategy::Direct;
        };
        if matches!(body.support, ConvexSupport::Polytope(_)) && body.simplex_map.is_none() {
            return Strategy::Chain;
        }
        let Some(x) = tilt else {
            return Strategy::Direct;
        };
        if matches!(body.support, ConvexSupport::Cube { .. }) {
            return Strategy::Direct;
        }
        let Some(log_envelope) = body.support.support(x) else {
            return Strategy::Chain;
        };
        // pilot acceptance rate; below 5% the exact-conditional chain is cheaper
        let mut rng = seed.derive("tilt-pilot", 0).rng();
        let mut z = Vec::with_capacity(m.base_dim());
        let trials = 2000;
        let mut accept = 0.0;
        for _ in 0..trials {
            z.clear();
            uniform_point(m, &mut rng, &mut z);
            let dot: f64 = z.iter().zip(x).map(|(a, b)| a * b).sum();
            accept += (dot - log_envelope).exp();
        }
        if accept / trials as f64 >= 0.05 {
            Strategy::Rejection { log_envelope }
        } else {
            Strategy::Chain
        }
    }

    fn fill(
        self,
        m: &MeasureModel,
        tilt: Option<&[f64]>,
        len: usize,
        rng: &mut ChaCha8Rng,
        out: &mut Vec<f64>,
    ) {
        let n = m.base_dim();
        match (self, m.shape()) {
            (Strategy::Chain, Shape::Uniform(body)) => {
                hit_and_run(&body.support, tilt, m.chain(), len, rng, out)
            }
            (Strategy::Rejection { log_envelope }, _) => {
                let x = tilt.expect("rejection needs a tilt");
                let mut z = Vec::with_capacity(n);
                let mut produced = 0;
                while produced < len {
                    z.clear();
                    uniform_point(m, rng, &mut z);
                    let dot: f64 = z.iter().zip(x).map(|(a, b)| a * b).sum();
                    if rng.random::<f64>().ln() <= dot - log_envelope {
                        out.extend_from_slice(&z);
                        produced += 1;
                    }
                }
            }
            (_, Shape::Gaussian) => {
                for _ in 0..len {
                    for i in 0..n {
                        let g: f64 = rng.sample(StandardNormal);
                        out.push(g + tilt.map_or(0.0, |x| x[i]));
                    }
                }
            }
            (_, Shape::ProductExponential) => {
                for _ in 0..len {
                    for i in 0..n {
                        out.push(tilted_laplace(rng, tilt.map_or(0.0, |x| x[i])));
                    }
                }
            }
            (_, Shape::Uniform(body)) => match (&body.support, tilt) {
                (ConvexSupport::Cube { half, .. }, Some(x)) => {
                    for _ in 0..len {
                        for &t in x.iter().take(n) {
                            out.push(-half + truncated_exp(rng, t, 2.0 * half));
                        }
                    }
                }
                _ => {
                    for _ in 0..len {
                        uniform_point(m, rng, out);
                    }
                }
            },
        }
    }
}

/// Two-sided exponential with density `∝ e^{tz − √2|z|}`.
fn tilted_laplace<R: Rng + ?Sized>(rng: &mut R, t: f64) -> f64 {
    let right = LAPLACE_RATE - t;
    let left = LAPLACE_RATE + t;
    let e: f64 = rng.sample(Exp1);
    if rng.random::<f64>() < left / (left + right) {
        e / right
    } else {
        -e / left
    }
}

/// Appends one exact uniform point of a directly samplable body.
fn uniform_point<R: Rng + ?Sized>(m: &MeasureModel, rng: &mut R, out: &mut Vec<f64>) {
    let Shape::Uniform(body) = m.shape() else {
        unreachable!("uniform_point on a non-uniform family")
    };
    let n = m.base_dim();
    match &body.support {
        ConvexSupport::Cube { half, .. } => {
            for _ in 0..n {
                out.push(half * (2.0 * rng.random::<f64>() - 1.0));
            }
        }
        ConvexSupport::Ball { radius, .. } => {
            let start = out.len();
            let mut norm2 = 0.0;
            for _ in 0..n {
                let g: f64 = rng.sample(StandardNormal);
                norm2 += g * g;
                out.push(g);
            }
            let r = radius * rng.random::<f64>().powf(1.0 / n as f64) / norm2.sqrt();
            out[start..].iter_mut().for_each(|v| *v *= r);
        }
        ConvexSupport::L1Ball { radius, .. } => {
            // (E_1,…,E_n)/Σ_{i≤n+1} E_i is uniform on the standard simplex
            let start = out.len();
            let mut total = 0.0;
            for _ in 0..n {
                let e: f64 = rng.sample(Exp1);
                total += e;
                out.push(if rng.random::<bool>() { e } else { -e });
            }
            total += rng.sample::<f64, _>(Exp1);
            out[start..].iter_mut().for_each(|v| *v *= radius / total);
        }
        ConvexSupport::Polytope(_) => {
            let map = body
                .simplex_map
                .as_ref()
                .expect("direct polytope sampling needs the simplex map");
            let mut y = Vec::with_capacity(n);
            let mut total = 0.0;
            for _ in 0..n {
                let e: f64 = rng.sample(Exp1);
                total += e;
                y.push(e);
            }
            total += rng.sample::<f64, _>(Exp1);
            y.iter_mut().for_each(|v| *v /= total);
            out.extend(map.apply(&y));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Family;

    fn mean_and_cov(b: &SampleBatch) -> (Vec<f64>, Vec<f64>) {
        (b.mean(), b.covariance())
    }

    #[test]
    fn gaussian_mean_clt_bound() {
        let g = MeasureModel::gaussian(2).unwrap();
        let b = draw(&g, 1_000_000, Seed::new(1)).unwrap();
        let m = b.mean();
        let norm = (m[0] * m[0] + m[1] * m[1]).sqrt();
        assert!(norm <= 3.0 * 2f64.sqrt() / 1e3, "{norm}");
    }

    #[test]
    fn cube_variance_is_one() {
        let c = MeasureModel::cube(1).unwrap();
        let b = draw(&c, 1_000_000, Seed::new(2)).unwrap();
        let var = b.covariance()[0];
        // Var of x² for uniform[−√3,√3] is 9/5 − 1 = 0.8
        let se = (0.8f64 / 1e6).sqrt();
        assert!((var - 1.0).abs() <= 3.0 * se, "{var}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        for fam in Family::ANALYTIC {
            let m = fam.build(3).unwrap();
            let a = draw(&m, 10_000, Seed::new(4)).unwrap();
            let b = draw(&m, 10_000, Seed::new(4)).unwrap();
            assert_eq!(a.points(), b.points());
        }
    }

    #[test]
    fn samples_lie_in_support() {
        for fam in [
            Family::Cube,
            Family::EuclideanBall,
            Family::L1Ball,
            Family::Simplex,
        ] {
            let m = fam.build(5).unwrap();
            let s = m.support().unwrap().clone();
            let b = draw(&m, 5000, Seed::new(5)).unwrap();
            assert!(b.rows().all(|x| s.contains(x)), "{fam}");
            let t = tilted_draw(&m, &[0.7, -0.2, 0.0, 0.4, 0.1], 5000, Seed::new(6)).unwrap();
            assert!(t.rows().all(|x| s.contains(x)), "{fam} tilted");
        }
    }

    #[test]
    fn gaussian_tilt_shifts_mean() {
        let g = MeasureModel::gaussian(3).unwrap();
        let x = [0.5, -1.0, 0.25];
        let b = tilted_draw(&g, &x, 200_000, Seed::new(7)).unwrap();
        let (mean, _) = mean_and_cov(&b);
        for i in 0..3 {
            assert!(
                (mean[i] - x[i]).abs() < 3.0 / (200_000f64).sqrt(),
                "{mean:?}"
            );
        }
    }

    #[test]
    fn exponential_tilt_domain() {
        let e = MeasureModel::product_exponential(1).unwrap();
        assert!(matches!(
            tilted_draw(&e, &[LAPLACE_RATE], 10, Seed::new(1)),
            Err(Error::LaplaceDomain(_))
        ));
        // Λ'(t) = t/(1 − t²/2)
        let b = tilted_draw(&e, &[0.5], 400_000, Seed::new(8)).unwrap();
        let mean = b.mean()[0];
        assert!((mean - 0.5 / 0.875).abs() < 0.01, "{mean}");
    }

    #[test]
    fn cube_tilt_matches_closed_form_mean() {
        // mean of the tilted uniform[−h,h] is h·coth(th) − 1/t
        let c = MeasureModel::cube(1).unwrap();
        let h = 3f64.sqrt();
        let t = 1.3;
        let b = tilted_draw(&c, &[t], 400_000, Seed::new(9)).unwrap();
        let exact = h / (t * h).tanh() - 1.0 / t;
        assert!((b.mean()[0] - exact).abs() < 0.01);
    }

    #[test]
    fn marginal_draw_is_projection() {
        let g = MeasureModel::cube(4).unwrap();
        let e = Subspace::coordinate(4, &[0]).unwrap();
        let view = g.marginal(&e).unwrap();
        let b = draw(&view, 1000, Seed::new(3)).unwrap();
        let full = draw(&g, 1000, Seed::new(3)).unwrap();
        for (a, row) in b.rows().zip(full.rows()) {
            assert_eq!(a[0], row[0]);
        }
    }

    #[test]
    fn haar_projection_trace_identity() {
        let draws = 10_000;
        let vals: Vec<f64> = (0..draws)
            .map(|i| {
                let e = haar_subspace(5, 2, Seed::new(12).derive("haar", i)).unwrap();
                e.coords(&[1.0, 0.0, 0.0, 0.0, 0.0])
                    .iter()
                    .map(|v| v * v)
                    .sum()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws as f64 - 1.0);
        assert!(
            (mean - 0.4).abs() <= 3.0 * (var / draws as f64).sqrt(),
            "{mean}"
        );
    }
}
