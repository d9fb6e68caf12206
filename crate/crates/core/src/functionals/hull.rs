//! Incremental convex hull in small dimension, used only for its volume.

use std::collections::HashMap;

use nalgebra::DMatrix;

struct Facet {
    vertices: Vec<usize>,
    normal: Vec<f64>,
    offset: f64,
}

/// Volume of `conv(points)`; zero when the points do not span full dimension.
///
/// Points are inserted one at a time; a point only updates the hull when it is
/// strictly outside some facet, so duplicates and coplanar points are skipped.
pub fn hull_volume(points: &[Vec<f64>]) -> f64 {
    let Some(d) = points.first().map(Vec::len) else {
        return 0.0;
    };
    if d == 1 {
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                (a.min(p[0]), b.max(p[0]))
            });
        return hi - lo;
    }
    let scale = points
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let eps = 1e-10 * scale;
    let Some(simplex) = initial_simplex(points, eps) else {
        return 0.0;
    };
    let centre: Vec<f64> = (0..d)
        .map(|j| simplex.iter().map(|&i| points[i][j]).sum::<f64>() / (d + 1) as f64)
        .collect();

    let mut facets: Vec<Facet> = (0..=d)
        .filter_map(|skip| {
            let verts: Vec<usize> = simplex
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, &v)| v)
                .collect();
            make_facet(points, verts, &centre)
        })
        .collect();

    for (idx, p) in points.iter().enumerate() {
        if simplex.contains(&idx) {
            continue;
        }
        let visible: Vec<bool> = facets
            .iter()
            .map(|f| dot(&f.normal, p) > f.offset + eps)
            .collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut ridges: HashMap<Vec<usize>, usize> = HashMap::new();
        for (f, _) in facets.iter().zip(&visible).filter(|(_, v)| **v) {
            for skip in 0..d {
                let mut ridge: Vec<usize> = f
                    .vertices
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != skip)
                    .map(|(_, &v)| v)
                    .collect();
                ridge.sort_unstable();
                *ridges.entry(ridge).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<Facet> = facets
            .into_iter()
            .zip(&visible)
            .filter(|(_, v)| !**v)
            .map(|(f, _)| f)
            .collect();
        let mut horizon: Vec<Vec<usize>> = ridges
            .into_iter()
            .filter(|(_, c)| *c == 1)
            .map(|(r, _)| r)
            .collect();
        // HashMap order is random; sort for reproducible floating-point sums
        horizon.sort_unstable();
        for mut ridge in horizon {
            ridge.push(idx);
            if let Some(f) = make_facet(points, ridge, &centre) {
                kept.push(f);
            }
        }
        facets = kept;
    }

    let mut factorial = 1.0;
    for i in 2..=d {
        factorial *= i as f64;
    }
    facets
        .iter()
        .map(|f| {
            let m = DMatrix::from_fn(d, d, |r, c| points[f.vertices[c]][r] - centre[r]);
            m.determinant().abs()
        })
        .sum::<f64>()
        / factorial
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Greedy `d + 1` affinely independent points, or `None` if the set is flat.
fn initial_simplex(points: &[Vec<f64>], eps: f64) -> Option<Vec<usize>> {
    let d = points[0].len();
    let far = |from: &[f64]| -> usize {
        (0..points.len())
            .max_by(|&a, &b| {
                let da: f64 = points[a]
                    .iter()
                    .zip(from)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum();
                let db: f64 = points[b]
                    .iter()
                    .zip(from)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum();
                da.total_cmp(&db)
            })
            .unwrap()
    };
    let a = far(&points[0]);
    let b = far(&points[a]);
    let mut chosen = vec![a, b];
    // orthonormal basis of the affine span so far
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let push_dir = |basis: &mut Vec<Vec<f64>>, v: &[f64]| -> bool {
        let mut w = v.to_vec();
        for _ in 0..2 {
            for q in basis.iter() {
                let c = dot(&w, q);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
        let r = dot(&w, &w).sqrt();
        if r <= eps {
            return false;
        }
        basis.push(w.into_iter().map(|x| x / r).collect());
        true
    };
    let diff = |i: usize| -> Vec<f64> {
        points[i]
            .iter()
            .zip(&points[a])
            .map(|(x, y)| x - y)
            .collect()
    };
    if !push_dir(&mut basis, &diff(b)) {
        return None;
    }
    while chosen.len() < d + 1 {
        let residual = |i: usize| -> f64 {
            let mut w = diff(i);
            for q in &basis {
                let c = dot(&w, q);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
            dot(&w, &w)
        };
        let best = (0..points.len()).max_by(|&x, &y| residual(x).total_cmp(&residual(y)))?;
        if !push_dir(&mut basis, &diff(best)) {
            return None;
        }
        chosen.push(best);
    }
    Some(chosen)
}

/// Hyperplane through `verts`, oriented so that `centre` is strictly inside.
fn make_facet(points: &[Vec<f64>], vertices: Vec<usize>, centre: &[f64]) -> Option<Facet> {
    let d = centre.len();
    let base = &points[vertices[0]];
    // normal = generalized cross product of the edge vectors (cofactor expansion)
    let edges = DMatrix::from_fn(d - 1, d, |r, c| points[vertices[r + 1]][c] - base[c]);
    let mut normal = vec![0.0; d];
    for (j, nj) in normal.iter_mut().enumerate() {
        let minor = edges.clone().remove_column(j);
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        *nj = sign * minor.determinant();
    }
    let r = dot(&normal, &normal).sqrt();
    if r == 0.0 || !r.is_finite() {
        return None;
    }
    normal.iter_mut().for_each(|v| *v /= r);
    let mut offset = dot(&normal, base);
    if dot(&normal, centre) > offset {
        normal.iter_mut().for_each(|v| *v = -*v);
        offset = -offset;
    }
    Some(Facet {
        vertices,
        normal,
        offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::body::random_unit;
    use crate::sampler::Seed;
    use std::f64::consts::PI;

    #[test]
    fn cube_and_cross_polytope() {
        for d in 2..=5 {
            let mut cube = Vec::new();
            for mask in 0..(1u32 << d) {
                cube.push(
                    (0..d)
                        .map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
                        .collect::<Vec<f64>>(),
                );
            }
            // an interior duplicate-heavy extra set must not change the answer
            cube.push(vec![0.0; d]);
            cube.push(vec![0.5; d]);
            let v = hull_volume(&cube);
            assert!((v - 2f64.powi(d as i32)).abs() < 1e-9, "cube {d}: {v}");
            let mut cross = Vec::new();
            for i in 0..d {
                for s in [1.0, -1.0] {
                    let mut e = vec![0.0; d];
                    e[i] = s;
                    cross.push(e);
                }
            }
            let fact: f64 = (1..=d).map(|i| i as f64).product();
            assert!((hull_volume(&cross) - 2f64.powi(d as i32) / fact).abs() < 1e-9);
        }
    }

    #[test]
    fn sphere_points_approach_ball() {
        let mut rng = Seed::new(3).rng();
        let pts: Vec<Vec<f64>> = (0..4000).map(|_| random_unit(3, &mut rng)).collect();
        let v = hull_volume(&pts);
        let ball = 4.0 * PI / 3.0;
        assert!(v < ball && v > 0.98 * ball, "{v}");
    }

    #[test]
    fn flat_sets_have_zero_volume() {
        let pts = vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0],
        ];
        assert_eq!(hull_volume(&pts), 0.0);
    }
}
