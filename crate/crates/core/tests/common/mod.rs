#![allow(dead_code)] // each test binary uses its own subset

//! Independent reference implementations used by the integration tests.
//!
//! Everything here is deliberately written from first principles (root
//! finding on characteristic polynomials, null-space construction,
//! sorting) so it shares no code path with the library it checks.

use maskbeam::linalg::ComplexMatrix;
use maskbeam::rng::Rng;
use num_complex::Complex64;

/// Roots of a complex polynomial by Durand-Kerner iteration.
/// `coeffs` are ordered from the leading coefficient down to the constant.
pub fn polynomial_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let n = coeffs.len() - 1;
    assert!(n >= 1);
    let lead = coeffs[0];
    let monic: Vec<Complex64> = coeffs.iter().map(|c| c / lead).collect();
    let eval = |roots: &[Complex64], skip: usize, z: Complex64| -> Complex64 {
        // p(z) / prod_{j != skip} (z - r_j)
        let mut p = Complex64::new(1.0, 0.0);
        for c in &monic[1..] {
            p = p * z + c;
        }
        let mut denom = Complex64::new(1.0, 0.0);
        for (j, r) in roots.iter().enumerate() {
            if j != skip {
                denom *= z - r;
            }
        }
        p / denom
    };
    // distinct starting points on a spiral
    let mut roots: Vec<Complex64> = (0..n)
        .map(|k| Complex64::new(0.4, 0.9).powu(k as u32 + 1))
        .collect();
    for _ in 0..200 {
        let mut moved = 0.0f64;
        for i in 0..n {
            let delta = eval(&roots, i, roots[i]);
            roots[i] -= delta;
            moved = moved.max(delta.norm());
        }
        if moved < 1e-14 {
            break;
        }
    }
    roots
}

/// Characteristic polynomial coefficients (leading first) of a 2x2 or 3x3
/// complex matrix, from traces and minors.
pub fn char_poly(a: &ComplexMatrix) -> Vec<Complex64> {
    let one = Complex64::new(1.0, 0.0);
    match a.rows() {
        2 => {
            let tr = a[(0, 0)] + a[(1, 1)];
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            vec![one, -tr, det]
        }
        3 => {
            let tr = a[(0, 0)] + a[(1, 1)] + a[(2, 2)];
            let minor = |i0: usize, i1: usize| {
                a[(i0, i0)] * a[(i1, i1)] - a[(i0, i1)] * a[(i1, i0)]
            };
            let c1 = minor(0, 1) + minor(0, 2) + minor(1, 2);
            let det = a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
                - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
                + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)]);
            vec![one, -tr, c1, -det]
        }
        n => panic!("char_poly oracle only covers n in {{2, 3}}, got {n}"),
    }
}

/// Eigenvalues of a 2x2 or 3x3 matrix through the characteristic
/// polynomial.
pub fn eigenvalues_oracle(a: &ComplexMatrix) -> Vec<Complex64> {
    polynomial_roots(&char_poly(a))
}

/// Null vector of (a - lambda I) for n in {2, 3}; the principal
/// eigenvector when lambda is the dominant root.
pub fn eigenvector_oracle(a: &ComplexMatrix, lambda: Complex64) -> Vec<Complex64> {
    let n = a.rows();
    let m = ComplexMatrix::from_fn(n, n, |i, j| {
        a[(i, j)]
            - if i == j {
                lambda
            } else {
                Complex64::new(0.0, 0.0)
            }
    });
    let v = match n {
        2 => {
            // pick the row with the larger magnitude
            let r0 = m[(0, 0)].norm() + m[(0, 1)].norm();
            let r1 = m[(1, 0)].norm() + m[(1, 1)].norm();
            if r0 >= r1 {
                vec![-m[(0, 1)], m[(0, 0)]]
            } else {
                vec![-m[(1, 1)], m[(1, 0)]]
            }
        }
        3 => {
            // formal (non-conjugated) cross products of row pairs; the
            // null vector is bilinear-orthogonal to every row
            let row = |i: usize| [m[(i, 0)], m[(i, 1)], m[(i, 2)]];
            let cross = |u: [Complex64; 3], w: [Complex64; 3]| {
                [
                    u[1] * w[2] - u[2] * w[1],
                    u[2] * w[0] - u[0] * w[2],
                    u[0] * w[1] - u[1] * w[0],
                ]
            };
            let candidates = [
                cross(row(0), row(1)),
                cross(row(0), row(2)),
                cross(row(1), row(2)),
            ];
            let best = candidates
                .iter()
                .max_by(|a, b| {
                    let na: f64 = a.iter().map(|z| z.norm_sqr()).sum();
                    let nb: f64 = b.iter().map(|z| z.norm_sqr()).sum();
                    na.partial_cmp(&nb).unwrap()
                })
                .unwrap();
            best.to_vec()
        }
        n => panic!("eigenvector oracle only covers n in {{2, 3}}, got {n}"),
    };
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / norm).collect()
}

/// |<a, b>| for unit vectors: cosine similarity modulo phase.
pub fn cosine(a: &[Complex64], b: &[Complex64]) -> f64 {
    let na: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    a.iter()
        .zip(b)
        .map(|(x, y)| x.conj() * y)
        .sum::<Complex64>()
        .norm()
        / (na * nb)
}

pub fn random_complex(rng: &mut Rng, n: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, n, |_, _| Complex64::new(rng.normal(), rng.normal()))
}

pub fn random_hpd(rng: &mut Rng, n: usize) -> ComplexMatrix {
    let g = random_complex(rng, n);
    let mut m = g.mul(&g.adjoint()).symmetrize();
    for i in 0..n {
        m[(i, i)] += Complex64::new(0.1, 0.0);
    }
    m
}

/// Unit vector with uniformly random complex direction.
pub fn random_unit(rng: &mut Rng, n: usize) -> Vec<Complex64> {
    let v: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.normal(), rng.normal()))
        .collect();
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / norm).collect()
}
