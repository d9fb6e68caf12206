//! Convex supports of the uniform families: gauges, chords and radial functions.

use crate::error::{Error, Result};

/// Bounded convex body containing the origin in its interior.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvexSupport {
    /// `[-half, half]^n`
    Cube {
        dim: usize,
        half: f64,
    },
    /// `radius · B_2^n`
    Ball {
        dim: usize,
        radius: f64,
    },
    /// `radius · B_1^n`
    L1Ball {
        dim: usize,
        radius: f64,
    },
    Polytope(Polytope),
}

/// `{x : ⟨a_j, x⟩ ≤ b_j}` with every `b_j > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    dim: usize,
    normals: Vec<f64>,
    offsets: Vec<f64>,
    vertices: Option<Vec<Vec<f64>>>,
}

impl Polytope {
    pub fn new(dim: usize, normals: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        if dim == 0 || normals.len() != dim * offsets.len() || offsets.is_empty() {
            return Err(Error::Usage(
                "halfspace list does not match the dimension".into(),
            ));
        }
        if let Some(b) = offsets.iter().find(|b| **b <= 0.0) {
            return Err(Error::DegenerateMeasure(format!(
                "origin is not interior to the polytope (offset {b})"
            )));
        }
        Ok(Polytope {
            dim,
            normals,
            offsets,
            vertices: None,
        })
    }

    pub(crate) fn with_vertices(mut self, vertices: Vec<Vec<f64>>) -> Self {
        self.vertices = Some(vertices);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn facets(&self) -> usize {
        self.offsets.len()
    }

    pub fn normal(&self, j: usize) -> &[f64] {
        &self.normals[j * self.dim..(j + 1) * self.dim]
    }

    pub fn offset(&self, j: usize) -> f64 {
        self.offsets[j]
    }

    pub fn vertices(&self) -> Option<&[Vec<f64>]> {
        self.vertices.as_deref()
    }

    /// Parses the `.hpoly` text format: one halfspace per line, `a1 … an b`
    /// meaning `⟨a, x⟩ ≤ b`; blank lines and `#` comments are ignored.
    pub fn parse_hpoly(text: &str) -> Result<(usize, Vec<f64>, Vec<f64>)> {
        let mut dim = None;
        let mut normals = Vec::new();
        let mut offsets = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let values = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: {t:?}: {e}", lineno + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() < 2 {
                return Err(Error::Parse(format!(
                    "line {}: need at least a1 and b",
                    lineno + 1
                )));
            }
            let n = values.len() - 1;
            match dim {
                None => dim = Some(n),
                Some(d) if d != n => {
                    return Err(Error::Parse(format!(
                        "line {}: expected {} coefficients, found {n}",
                        lineno + 1,
                        d
                    )))
                }
                _ => {}
            }
            normals.extend_from_slice(&values[..n]);
            offsets.push(values[n]);
        }
        let dim = dim.ok_or_else(|| Error::Parse("empty .hpoly file".into()))?;
        Ok((dim, normals, offsets))
    }
}

impl ConvexSupport {
    pub fn dim(&self) -> usize {
        match self {
            ConvexSupport::Cube { dim, .. }
            | ConvexSupport::Ball { dim, .. }
            | ConvexSupport::L1Ball { dim, .. } => *dim,
            ConvexSupport::Polytope(p) => p.dim,
        }
    }

    /// Minkowski functional `‖x‖_K = inf{t > 0 : x ∈ tK}`.
    pub fn gauge(&self, x: &[f64]) -> f64 {
        match self {
            ConvexSupport::Cube { half, .. } => x.iter().fold(0.0f64, |m, v| m.max(v.abs())) / half,
            ConvexSupport::Ball { radius, .. } => {
                x.iter().map(|v| v * v).sum::<f64>().sqrt() / radius
            }
            ConvexSupport::L1Ball { radius, .. } => x.iter().map(|v| v.abs()).sum::<f64>() / radius,
            ConvexSupport::Polytope(p) => (0..p.facets()).fold(0.0f64, |m, j| {
                let dot: f64 = p.normal(j).iter().zip(x).map(|(a, b)| a * b).sum();
                m.max(dot / p.offset(j))
            }),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.gauge(x) <= 1.0 + 1e-12
    }

    /// Radial function `ρ_K(u) = 1 / ‖u‖_K`.
    pub fn radial(&self, u: &[f64]) -> f64 {
        1.0 / self.gauge(u)
    }

    /// Support function `h_K(θ)`, when it has a closed form.
    pub fn support(&self, theta: &[f64]) -> Option<f64> {
        match self {
            ConvexSupport::Cube { half, .. } => {
                Some(half * theta.iter().map(|t| t.abs()).sum::<f64>())
            }
            ConvexSupport::Ball { radius, .. } => {
                Some(radius * theta.iter().map(|t| t * t).sum::<f64>().sqrt())
            }
            ConvexSupport::L1Ball { radius, .. } => {
                Some(radius * theta.iter().fold(0.0f64, |m, t| m.max(t.abs())))
            }
            ConvexSupport::Polytope(p) => p.vertices().map(|vs| {
                vs.iter()
                    .map(|v| v.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            }),
        }
    }

    /// Interval `[lo, hi]` of `s` with `z + s·d` in the body, for `z` inside.
    pub fn chord(&self, z: &[f64], d: &[f64]) -> (f64, f64) {
        match self {
            ConvexSupport::Cube { half, .. } => {
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for (zi, di) in z.iter().zip(d) {
                    if *di != 0.0 {
                        let a = (-half - zi) / di;
                        let b = (half - zi) / di;
                        lo = lo.max(a.min(b));
                        hi = hi.min(a.max(b));
                    }
                }
                (lo.min(0.0), hi.max(0.0))
            }
            ConvexSupport::Ball { radius, .. } => {
                let dd: f64 = d.iter().map(|v| v * v).sum();
                let zd: f64 = z.iter().zip(d).map(|(a, b)| a * b).sum();
                let zz: f64 = z.iter().map(|v| v * v).sum();
                let disc = (zd * zd - dd * (zz - radius * radius)).max(0.0).sqrt();
                (((-zd - disc) / dd).min(0.0), ((-zd + disc) / dd).max(0.0))
            }
            ConvexSupport::Polytope(p) => {
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for j in 0..p.facets() {
                    let a = p.normal(j);
                    let az: f64 = a.iter().zip(z).map(|(x, y)| x * y).sum();
                    let ad: f64 = a.iter().zip(d).map(|(x, y)| x * y).sum();
                    let slack = (p.offset(j) - az).max(0.0);
                    if ad > 0.0 {
                        hi = hi.min(slack / ad);
                    } else if ad < 0.0 {
                        lo = lo.max(slack / ad);
                    }
                }
                (lo, hi)
            }
            ConvexSupport::L1Ball { .. } => (-self.ray_exit(z, &neg(d)), self.ray_exit(z, d)),
        }
    }

    /// Largest `s ≥ 0` with `gauge(z + s·d) ≤ 1`, by bracketing and bisection.
    fn ray_exit(&self, z: &[f64], d: &[f64]) -> f64 {
        let point = |s: f64| -> Vec<f64> { z.iter().zip(d).map(|(a, b)| a + s * b).collect() };
        let mut hi = 1.0;
        while self.gauge(&point(hi)) <= 1.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if self.gauge(&point(mid)) <= 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

fn neg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| -x).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_chord(s: &ConvexSupport, z: &[f64], d: &[f64]) {
        let (lo, hi) = s.chord(z, d);
        assert!(lo <= 0.0 && hi >= 0.0);
        let at = |t: f64| -> Vec<f64> { z.iter().zip(d).map(|(a, b)| a + t * b).collect() };
        assert!((s.gauge(&at(lo)) - 1.0).abs() < 1e-9, "{s:?} lo");
        assert!((s.gauge(&at(hi)) - 1.0).abs() < 1e-9, "{s:?} hi");
    }

    #[test]
    fn chords_end_on_the_boundary() {
        let z = [0.3, -0.2, 0.1];
        let d = [0.6, 0.64, -0.48];
        check_chord(
            &ConvexSupport::Cube {
                dim: 3,
                half: 3f64.sqrt(),
            },
            &z,
            &d,
        );
        check_chord(
            &ConvexSupport::Ball {
                dim: 3,
                radius: 2.0,
            },
            &z,
            &d,
        );
        check_chord(
            &ConvexSupport::L1Ball {
                dim: 3,
                radius: 2.0,
            },
            &z,
            &d,
        );
        let mut normals = Vec::new();
        for i in 0..3 {
            for s in [1.0, -1.0] {
                let mut a = [0.0; 3];
                a[i] = s;
                normals.extend_from_slice(&a);
            }
        }
        let cube = Polytope::new(3, normals, vec![1.5; 6]).unwrap();
        check_chord(&ConvexSupport::Polytope(cube), &z, &d);
    }

    #[test]
    fn hpoly_parser_reads_halfspaces() {
        let text = "# unit square\n1 0 1\n-1 0 1\n0 1 1\n0 -1 1\n";
        let (dim, normals, offsets) = Polytope::parse_hpoly(text).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(normals.len(), 8);
        assert_eq!(offsets, vec![1.0; 4]);
        assert!(Polytope::parse_hpoly("1 0 1\n1 1\n1 2 3 4").is_err());
        assert!(Polytope::parse_hpoly("").is_err());
    }
}
