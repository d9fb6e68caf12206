//! Log-concave measure families, their densities and closed-form profiles.

mod image;
mod spec;
mod support;

use std::f64::consts::{E, PI};
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use image::{isotropize, LinearImage};
pub use spec::MeasureSpec;
pub use support::{ConvexSupport, Polytope};

use crate::error::{check_dim, Error, Result};
use crate::functionals::{marginal_density_at_zero, EstimateCI};
use crate::sampler::{draw, ChainConfig, Seed, Subspace};
use crate::special::{
    gaussian_norm_moment, gaussian_zp_radius, ln_bessel_i, ln_gamma, ln_unit_ball_volume,
};

/// Shipped measure families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Gaussian,
    Cube,
    EuclideanBall,
    L1Ball,
    ProductExponential,
    Simplex,
    HpolyBody,
}

impl Family {
    pub const ANALYTIC: [Family; 6] = [
        Family::Gaussian,
        Family::Cube,
        Family::EuclideanBall,
        Family::L1Ball,
        Family::ProductExponential,
        Family::Simplex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Cube => "cube",
            Family::EuclideanBall => "ball",
            Family::L1Ball => "l1ball",
            Family::ProductExponential => "exponential",
            Family::Simplex => "simplex",
            Family::HpolyBody => "hpoly",
        }
    }

    pub fn parse(name: &str) -> Result<Family> {
        Ok(match name.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Family::Gaussian,
            "cube" => Family::Cube,
            "ball" | "euclidean-ball" => Family::EuclideanBall,
            "l1ball" | "l1-ball" | "crosspolytope" => Family::L1Ball,
            "exponential" | "exp" | "product-exponential" | "laplace" => Family::ProductExponential,
            "simplex" => Family::Simplex,
            "hpoly" | "hpoly-body" => Family::HpolyBody,
            other => return Err(Error::Parse(format!("unknown measure family {other:?}"))),
        })
    }

    /// Build the isotropic member of an analytic family in dimension `n`.
    pub fn build(self, n: usize) -> Result<MeasureModel> {
        match self {
            Family::Gaussian => MeasureModel::gaussian(n),
            Family::Cube => MeasureModel::cube(n),
            Family::EuclideanBall => MeasureModel::euclidean_ball(n),
            Family::L1Ball => MeasureModel::l1_ball(n),
            Family::ProductExponential => MeasureModel::product_exponential(n),
            Family::Simplex => MeasureModel::simplex(n),
            Family::HpolyBody => Err(Error::Usage(
                "hpoly bodies are built from a halfspace file".into(),
            )),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Uniform measure on a convex body.
#[derive(Clone, Debug)]
pub(crate) struct UniformBody {
    pub(crate) support: ConvexSupport,
    pub(crate) ln_volume: f64,
    /// Standard error of `ln_volume` (zero when the volume is exact).
    pub(crate) ln_volume_se: f64,
    /// Affine map from the standard simplex, for direct simplex sampling.
    pub(crate) simplex_map: Option<LinearImage>,
}

#[derive(Clone, Debug)]
pub(crate) enum Shape {
    Gaussian,
    /// Product of Laplace laws with rate √2 (unit variance per axis).
    ProductExponential,
    Uniform(UniformBody),
}

/// A log-concave probability measure, optionally viewed through a marginal `π_E`.
///
/// Immutable and cheap to clone.
#[derive(Clone, Debug)]
pub struct MeasureModel {
    family: Family,
    base_dim: usize,
    shape: Arc<Shape>,
    view: Option<Subspace>,
    chain: ChainConfig,
    isotropic: bool,
    label: Arc<str>,
}

pub const LAPLACE_RATE: f64 = std::f64::consts::SQRT_2;

impl MeasureModel {
    fn analytic(family: Family, n: usize, shape: Shape) -> Result<Self> {
        if n == 0 {
            return Err(Error::Usage("dimension must be positive".into()));
        }
        Ok(MeasureModel {
            family,
            base_dim: n,
            shape: Arc::new(shape),
            view: None,
            chain: ChainConfig::default(),
            isotropic: true,
            label: format!("{}:{n}", family.name()).into(),
        })
    }

    /// Standard Gaussian `γ_n`.
    pub fn gaussian(n: usize) -> Result<Self> {
        Self::analytic(Family::Gaussian, n, Shape::Gaussian)
    }

    /// Uniform on `[-√3, √3]^n`.
    pub fn cube(n: usize) -> Result<Self> {
        let half = 3f64.sqrt();
        Self::analytic(
            Family::Cube,
            n,
            Shape::Uniform(UniformBody {
                support: ConvexSupport::Cube { dim: n, half },
                ln_volume: n as f64 * (2.0 * half).ln(),
                ln_volume_se: 0.0,
                simplex_map: None,
            }),
        )
    }

    /// Uniform on the Euclidean ball of radius `√(n+2)`.
    pub fn euclidean_ball(n: usize) -> Result<Self> {
        let radius = (n as f64 + 2.0).sqrt();
        Self::analytic(
            Family::EuclideanBall,
            n,
            Shape::Uniform(UniformBody {
                support: ConvexSupport::Ball { dim: n, radius },
                ln_volume: ln_unit_ball_volume(n) + n as f64 * radius.ln(),
                ln_volume_se: 0.0,
                simplex_map: None,
            }),
        )
    }

    /// Uniform on `r·B_1^n` with `r = √((n+1)(n+2)/2)`.
    pub fn l1_ball(n: usize) -> Result<Self> {
        let nf = n as f64;
        let radius = ((nf + 1.0) * (nf + 2.0) / 2.0).sqrt();
        Self::analytic(
            Family::L1Ball,
            n,
            Shape::Uniform(UniformBody {
                support: ConvexSupport::L1Ball { dim: n, radius },
                ln_volume: nf * (2.0 * radius).ln() - ln_gamma(nf + 1.0),
                ln_volume_se: 0.0,
                simplex_map: None,
            }),
        )
    }

    /// Product of `n` Laplace laws with rate `√2`.
    pub fn product_exponential(n: usize) -> Result<Self> {
        Self::analytic(Family::ProductExponential, n, Shape::ProductExponential)
    }

    /// Uniform on an `n`-simplex, put in isotropic position analytically.
    pub fn simplex(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Usage("dimension must be positive".into()));
        }
        let nf = n as f64;
        // Dirichlet(1,…,1) covariance is a·I − b·11ᵀ
        let a = 1.0 / ((nf + 1.0) * (nf + 2.0));
        let b = 1.0 / ((nf + 1.0) * (nf + 1.0) * (nf + 2.0));
        let along_ones = a - nf * b;
        let proj = DMatrix::from_element(n, n, 1.0 / nf);
        let eye = DMatrix::<f64>::identity(n, n);
        let map = (&eye - &proj) / a.sqrt() + &proj / along_ones.sqrt();
        let inv = (&eye - &proj) * a.sqrt() + &proj * along_ones.sqrt();
        let center = vec![1.0 / (nf + 1.0); n];
        let ln_det = -0.5 * (nf - 1.0) * a.ln() - 0.5 * along_ones.ln();
        let image = LinearImage::new(center.clone(), map, ln_det);

        // y ≥ 0 and Σy ≤ 1, rewritten for x = map·(y − center)
        let mut normals = Vec::with_capacity((n + 1) * n);
        for i in 0..n {
            normals.extend(inv.row(i).iter().map(|v| -v));
        }
        normals.extend(std::iter::repeat_n(along_ones.sqrt(), n));
        let offsets = vec![1.0 / (nf + 1.0); n + 1];
        let mut vertices = vec![image.apply(&vec![0.0; n])];
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            vertices.push(image.apply(&e));
        }
        let polytope = Polytope::new(n, normals, offsets)?.with_vertices(vertices);
        Self::analytic(
            Family::Simplex,
            n,
            Shape::Uniform(UniformBody {
                support: ConvexSupport::Polytope(polytope),
                ln_volume: ln_det - ln_gamma(nf + 1.0),
                ln_volume_se: 0.0,
                simplex_map: Some(image),
            }),
        )
    }

    /// Uniform measure on `{x : Ax ≤ b}`, moved to (empirical) isotropic position.
    ///
    /// A hit-and-run pilot run estimates the barycentre and covariance; the
    /// halfspaces are rewritten in the isotropic coordinates and the volume is
    /// estimated from the radial function with `volume_directions` directions.
    pub fn hpoly(
        dim: usize,
        normals: Vec<f64>,
        offsets: Vec<f64>,
        chain: ChainConfig,
        pilot_samples: usize,
        volume_directions: usize,
        seed: Seed,
    ) -> Result<Self> {
        let interior = image::interior_point(dim, &normals, &offsets)?;
        // recenter at the interior point so that the origin is inside
        let shifted: Vec<f64> = (0..offsets.len())
            .map(|j| {
                let a = &normals[j * dim..(j + 1) * dim];
                offsets[j] - a.iter().zip(&interior).map(|(x, y)| x * y).sum::<f64>()
            })
            .collect();
        let raw = Polytope::new(dim, normals.clone(), shifted)?;
        let raw_support = ConvexSupport::Polytope(raw);
        image::check_bounded(&raw_support, seed.derive("hpoly-bounded", 0))?;
        let pilot = MeasureModel {
            family: Family::HpolyBody,
            base_dim: dim,
            shape: Arc::new(Shape::Uniform(UniformBody {
                support: raw_support,
                ln_volume: 0.0,
                ln_volume_se: f64::INFINITY,
                simplex_map: None,
            })),
            view: None,
            chain,
            isotropic: false,
            label: format!("hpoly-pilot:{dim}").into(),
        };
        let needed = pilot_samples.max(10 * dim * dim);
        let batch = draw(&pilot, needed, seed.derive("hpoly-pilot", 0))?;
        let iso = isotropize(&batch)?;
        // x = map·(y − shift)  ⇔  y = map⁻¹x + shift
        let map_inv = iso
            .map()
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateMeasure("isotropizing map is singular".into()))?;
        let mut new_normals = Vec::with_capacity(normals.len());
        let mut new_offsets = Vec::with_capacity(offsets.len());
        let ConvexSupport::Polytope(raw) = (match &*pilot.shape {
            Shape::Uniform(u) => &u.support,
            _ => unreachable!(),
        }) else {
            unreachable!()
        };
        for j in 0..raw.facets() {
            let a = nalgebra::DVector::from_column_slice(raw.normal(j));
            let a_new = map_inv.transpose() * &a;
            let b_new = raw.offset(j) - a.dot(&nalgebra::DVector::from_column_slice(iso.shift()));
            let scale = a_new.norm();
            new_normals.extend(a_new.iter().map(|v| v / scale));
            new_offsets.push(b_new / scale);
        }
        let polytope = Polytope::new(dim, new_normals, new_offsets)?;
        let support = ConvexSupport::Polytope(polytope);
        let (ln_volume, ln_volume_se) =
            image::radial_ln_volume(&support, volume_directions, seed.derive("hpoly-volume", 0));
        Ok(MeasureModel {
            family: Family::HpolyBody,
            base_dim: dim,
            shape: Arc::new(Shape::Uniform(UniformBody {
                support,
                ln_volume,
                ln_volume_se,
                simplex_map: None,
            })),
            view: None,
            chain,
            isotropic: true,
            label: format!("hpoly:{dim}").into(),
        })
    }

    /// Marginal `π_E μ` for a subspace `E` of this measure's space.
    pub fn marginal(&self, subspace: &Subspace) -> Result<MeasureModel> {
        check_dim(self.dim(), subspace.ambient())?;
        let view = match &self.view {
            Some(outer) => outer.compose(subspace)?,
            None => subspace.clone(),
        };
        Ok(MeasureModel {
            view: Some(view),
            label: format!("{}|{}->{}", self.base_label(), self.base_dim, subspace.k()).into(),
            ..self.clone()
        })
    }

    pub fn with_chain(mut self, chain: ChainConfig) -> Self {
        self.chain = chain;
        self
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Dimension of the space this measure lives on (the view dimension for marginals).
    pub fn dim(&self) -> usize {
        self.view.as_ref().map_or(self.base_dim, Subspace::k)
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn view(&self) -> Option<&Subspace> {
        self.view.as_ref()
    }

    pub fn is_marginal(&self) -> bool {
        self.view.is_some()
    }

    pub fn is_isotropic(&self) -> bool {
        self.isotropic
    }

    pub fn chain(&self) -> ChainConfig {
        self.chain
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    fn base_label(&self) -> String {
        format!("{}:{}", self.family.name(), self.base_dim)
    }

    pub(crate) fn shape(&self) -> &Shape {
        &self.shape
    }

    pub(crate) fn uniform_body(&self) -> Option<&UniformBody> {
        match &*self.shape {
            Shape::Uniform(u) => Some(u),
            _ => None,
        }
    }

    /// The convex support of a uniform family (in base coordinates).
    pub fn support(&self) -> Option<&ConvexSupport> {
        self.uniform_body().map(|u| &u.support)
    }

    /// Map a vector of this measure's space to the base space (`F·ξ`).
    pub(crate) fn lift(&self, xi: &[f64]) -> Vec<f64> {
        match &self.view {
            Some(v) => v.embed(xi),
            None => xi.to_vec(),
        }
    }

    /// `ln f_μ(x)` on the base space (`-∞` outside the support).
    pub(crate) fn base_ln_density(&self, x: &[f64]) -> f64 {
        let n = self.base_dim as f64;
        match &*self.shape {
            Shape::Gaussian => {
                -0.5 * x.iter().map(|v| v * v).sum::<f64>() - 0.5 * n * (2.0 * PI).ln()
            }
            Shape::ProductExponential => {
                -LAPLACE_RATE * x.iter().map(|v| v.abs()).sum::<f64>() - 0.5 * n * 2f64.ln()
            }
            Shape::Uniform(u) => {
                if u.support.contains(x) {
                    -u.ln_volume
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Density `f_μ(x)`; zero outside the support.
    ///
    /// Marginals of non-Gaussian families have no pointwise density oracle;
    /// use [`marginal_density_at_zero`] for their value at the origin.
    pub fn density_at(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        match (&self.view, &*self.shape) {
            (None, _) => Ok(self.base_ln_density(x).exp()),
            (Some(_), Shape::Gaussian) => {
                let k = x.len() as f64;
                Ok((-0.5 * x.iter().map(|v| v * v).sum::<f64>() - 0.5 * k * (2.0 * PI).ln()).exp())
            }
            (Some(_), _) => Err(Error::UnsupportedMeasure(format!(
                "pointwise density of the marginal {} is not available",
                self.label
            ))),
        }
    }

    pub fn profile(&self) -> AnalyticProfile<'_> {
        AnalyticProfile { model: self }
    }

    /// Whether `ξ` lies in the open domain `{Λ_μ < ∞}`.
    pub fn laplace_domain_check(&self, xi: &[f64]) -> Result<()> {
        check_dim(self.dim(), xi.len())?;
        if let Shape::ProductExponential = &*self.shape {
            let v = self.lift(xi);
            let worst = v.iter().fold(0.0f64, |m, t| m.max(t.abs()));
            if worst >= LAPLACE_RATE {
                return Err(Error::LaplaceDomain(format!(
                    "product-exponential needs |ξ_i| < √2 on every axis, got {worst:.6}"
                )));
            }
        }
        Ok(())
    }

    /// Largest `t` with `tθ` in the Laplace domain (infinite for bounded supports).
    pub fn laplace_domain_radius(&self, theta: &[f64]) -> f64 {
        match &*self.shape {
            Shape::ProductExponential => {
                let v = self.lift(theta);
                let worst = v.iter().fold(0.0f64, |m, t| m.max(t.abs()));
                if worst == 0.0 {
                    f64::INFINITY
                } else {
                    LAPLACE_RATE / worst
                }
            }
            _ => f64::INFINITY,
        }
    }
}

/// Closed-form evaluators; each returns `None` when the family has no closed form.
pub struct AnalyticProfile<'a> {
    model: &'a MeasureModel,
}

impl AnalyticProfile<'_> {
    /// `ln f_μ(0)`.
    pub fn ln_density_at_zero(&self) -> Option<f64> {
        let m = self.model;
        let k = m.dim() as f64;
        match (&*m.shape, m.is_marginal()) {
            (Shape::Gaussian, _) => Some(-0.5 * k * (2.0 * PI).ln()),
            (Shape::ProductExponential, false) => Some(-0.5 * k * 2f64.ln()),
            (Shape::Uniform(u), false) if u.ln_volume_se == 0.0 => Some(-u.ln_volume),
            _ => None,
        }
    }

    /// `‖μ‖_∞^{1/n}`. Every shipped density attains its maximum at the origin.
    pub fn sup_norm_per_dim(&self) -> Option<f64> {
        self.ln_density_at_zero()
            .map(|l| (l / self.model.dim() as f64).exp())
    }

    /// Exact isotropic constant `L_μ = ‖μ‖_∞^{1/n}` (all shipped families are isotropic).
    pub fn isotropic_constant(&self) -> Option<f64> {
        self.sup_norm_per_dim()
    }

    /// `I_q(μ)`.
    pub fn moment_iq(&self, q: f64) -> Option<f64> {
        let m = self.model;
        match (&*m.shape, m.is_marginal()) {
            (Shape::Gaussian, _) => Some(gaussian_norm_moment(m.dim(), q)),
            (
                Shape::Uniform(UniformBody {
                    support: ConvexSupport::Ball { dim, radius },
                    ..
                }),
                false,
            ) => {
                let n = *dim as f64;
                Some(radius * (n / (n + q)).powf(1.0 / q))
            }
            _ => None,
        }
    }

    /// Radius of `Z_p(μ)` when it is a Euclidean ball.
    pub fn zp_radius(&self, p: f64) -> Option<f64> {
        let m = self.model;
        match (&*m.shape, m.is_marginal()) {
            (Shape::Gaussian, _) => Some(gaussian_zp_radius(p)),
            (
                Shape::Uniform(UniformBody {
                    support: ConvexSupport::Ball { dim, radius },
                    ..
                }),
                false,
            ) => {
                // 1-d marginal density ∝ (R² − t²)^{(n−1)/2}
                let half = (*dim as f64 + 1.0) / 2.0;
                let ln_ratio = ln_beta((p + 1.0) / 2.0, half) - ln_beta(0.5, half);
                Some(radius * (ln_ratio / p).exp())
            }
            _ => None,
        }
    }

    /// `Λ_μ(ξ)`, `+∞` outside the domain.
    pub fn log_laplace(&self, xi: &[f64]) -> Option<f64> {
        let m = self.model;
        let v = m.lift(xi);
        match &*m.shape {
            Shape::Gaussian => Some(0.5 * v.iter().map(|t| t * t).sum::<f64>()),
            Shape::ProductExponential => Some(
                v.iter()
                    .map(|t| {
                        let s = 1.0 - t * t / (LAPLACE_RATE * LAPLACE_RATE);
                        if s <= 0.0 {
                            f64::INFINITY
                        } else {
                            -s.ln()
                        }
                    })
                    .sum(),
            ),
            Shape::Uniform(UniformBody {
                support: ConvexSupport::Cube { half, .. },
                ..
            }) => Some(v.iter().map(|t| ln_sinhc(half * t)).sum()),
            Shape::Uniform(UniformBody {
                support: ConvexSupport::Ball { dim, radius },
                ..
            }) => {
                let z = radius * v.iter().map(|t| t * t).sum::<f64>().sqrt();
                if z == 0.0 {
                    return Some(0.0);
                }
                let nu = *dim as f64 / 2.0;
                Some(ln_gamma(nu + 1.0) + nu * (2.0 / z).ln() + ln_bessel_i(nu, z))
            }
            _ => None,
        }
    }

    /// Per-axis radius of the Laplace domain, for product families with a finite one.
    pub fn laplace_domain_radius_per_axis(&self) -> Option<f64> {
        match &*self.model.shape {
            Shape::ProductExponential if !self.model.is_marginal() => Some(LAPLACE_RATE),
            _ => None,
        }
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `ln(sinh(a)/a)`, stable for all `a`.
pub(crate) fn ln_sinhc(a: f64) -> f64 {
    let x = a.abs();
    if x < 1e-4 {
        x * x / 6.0
    } else {
        x + (-(-2.0 * x).exp()).ln_1p() - 2f64.ln() - x.ln()
    }
}

/// Bracket for the isotropic constant from the Fradelizi bound `‖μ‖_∞ ≤ eⁿ f(0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsotropicConstantBracket {
    pub lo: f64,
    pub hi: f64,
    pub lo_stderr: f64,
    /// `L_μ` itself, when the density maximum has a closed form.
    pub exact: Option<f64>,
}

/// `[f(0)^{1/n} det(Cov)^{1/2n}, e·(same)]`, plus the exact value when available.
pub fn isotropic_constant_bracket(
    m: &MeasureModel,
    sample_budget: usize,
    seed: Seed,
) -> Result<IsotropicConstantBracket> {
    let n = m.dim();
    let f0: EstimateCI = if let Some(l) = m.profile().ln_density_at_zero() {
        EstimateCI::exact(l.exp())
    } else if let (Some(u), false) = (m.uniform_body(), m.is_marginal()) {
        let v = (-u.ln_volume).exp();
        EstimateCI::monte_carlo(v, v * u.ln_volume_se, 0)
    } else {
        marginal_density_at_zero(
            &base_of(m),
            m.view().expect("marginal"),
            4096,
            seed.derive("lbracket-f0", 0),
        )?
    };
    if f0.value <= 0.0 {
        return Err(Error::UnsupportedMeasure(
            "f(0) = 0: origin outside the support".into(),
        ));
    }
    let ln_det_cov = if m.family() == Family::HpolyBody {
        let batch = draw(
            m,
            sample_budget.max(10 * n * n),
            seed.derive("lbracket-cov", 0),
        )?;
        let cov = DMatrix::from_row_slice(n, n, &batch.covariance());
        cov.determinant().ln()
    } else {
        0.0
    };
    let scale = (ln_det_cov / (2.0 * n as f64)).exp();
    let lo = f0.value.powf(1.0 / n as f64) * scale;
    let lo_stderr = lo * f0.stderr / (n as f64 * f0.value);
    Ok(IsotropicConstantBracket {
        lo,
        hi: E * lo,
        lo_stderr,
        exact: m.profile().isotropic_constant(),
    })
}

/// The same measure with the marginal view removed.
pub(crate) fn base_of(m: &MeasureModel) -> MeasureModel {
    MeasureModel {
        view: None,
        label: m.base_label().into(),
        ..m.clone()
    }
}
