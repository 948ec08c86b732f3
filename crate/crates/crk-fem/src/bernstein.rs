//! Barycentric Bernstein representation of polynomials on a triangle.
//!
//! A polynomial of degree d is stored as the coefficient vector c with
//! p = sum_{|beta|=d} c_beta * multinom(d;beta) * l0^b0 l1^b1 l2^b2
//! over barycentric coordinates (l0,l1,l2). The representation is affine
//! invariant, supports exact degree raising and differentiates cleanly.

use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Number of Bernstein coefficients of degree d.
pub fn len(d: usize) -> usize {
    (d + 1) * (d + 2) / 2
}

/// Position of the coefficient with exponents (i, j, d-i-j).
pub fn index(d: usize, i: usize, j: usize) -> usize {
    debug_assert!(i + j <= d);
    i * (2 * d + 3 - i) / 2 + j
}

/// Exponent triples (b0, b1, b2) in storage order, with multinomial factors.
pub fn exponents(d: usize) -> Vec<(usize, usize, usize, f64)> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Vec<(usize, usize, usize, f64)>>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(d)
        .or_insert_with(|| {
            let mut out = Vec::with_capacity(len(d));
            for i in 0..=d {
                for j in 0..=(d - i) {
                    let l = d - i - j;
                    out.push((i, j, l, multinomial(d, i, j, l)));
                }
            }
            out
        })
        .clone()
}

fn multinomial(d: usize, i: usize, j: usize, l: usize) -> f64 {
    let mut v = 1.0;
    for t in 1..=d {
        v *= t as f64;
    }
    for t in 1..=i {
        v /= t as f64;
    }
    for t in 1..=j {
        v /= t as f64;
    }
    for t in 1..=l {
        v /= t as f64;
    }
    v
}

/// Evaluate at barycentric coordinates.
pub fn eval(d: usize, coeffs: &[f64], lam: [f64; 3]) -> f64 {
    debug_assert_eq!(coeffs.len(), len(d));
    let mut acc = 0.0;
    for (idx, &(i, j, l, m)) in exponents(d).iter().enumerate() {
        acc += coeffs[idx] * m * powi(lam[0], i) * powi(lam[1], j) * powi(lam[2], l);
    }
    acc
}

#[inline]
fn powi(x: f64, n: usize) -> f64 {
    let mut v = 1.0;
    for _ in 0..n {
        v *= x;
    }
    v
}

/// Directional derivative coefficients. `g` holds the derivatives of the
/// three barycentric coordinates along the chosen physical direction; the
/// result has degree d-1.
pub fn deriv(d: usize, coeffs: &[f64], g: [f64; 3]) -> Vec<f64> {
    assert!(d >= 1);
    let mut out = vec![0.0; len(d - 1)];
    for i in 0..=(d - 1) {
        for j in 0..=(d - 1 - i) {
            let idx = index(d - 1, i, j);
            out[idx] = d as f64
                * (g[0] * coeffs[index(d, i + 1, j)]
                    + g[1] * coeffs[index(d, i, j + 1)]
                    + g[2] * coeffs[index(d, i, j)]);
        }
    }
    out
}

/// Exact degree raising d -> d+1.
pub fn raise(d: usize, coeffs: &[f64]) -> Vec<f64> {
    let dp = d + 1;
    let mut out = vec![0.0; len(dp)];
    for i in 0..=dp {
        for j in 0..=(dp - i) {
            let l = dp - i - j;
            let mut v = 0.0;
            if i > 0 {
                v += i as f64 * coeffs[index(d, i - 1, j)];
            }
            if j > 0 {
                v += j as f64 * coeffs[index(d, i, j - 1)];
            }
            if l > 0 {
                v += l as f64 * coeffs[index(d, i, j)];
            }
            out[index(dp, i, j)] = v / dp as f64;
        }
    }
    out
}

/// Raise by several degrees.
pub fn raise_to(d: usize, coeffs: &[f64], target: usize) -> Vec<f64> {
    assert!(target >= d);
    let mut cur = coeffs.to_vec();
    for dd in d..target {
        cur = raise(dd, &cur);
    }
    cur
}

/// Uniform lattice (domain points) of degree d in barycentric coordinates.
pub fn lattice(d: usize) -> Vec<[f64; 3]> {
    exponents(d)
        .iter()
        .map(|&(i, j, l, _)| {
            if d == 0 {
                [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]
            } else {
                [
                    i as f64 / d as f64,
                    j as f64 / d as f64,
                    l as f64 / d as f64,
                ]
            }
        })
        .collect()
}

struct InterpData {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    vandermonde: DMatrix<f64>,
}

fn interp_data(d: usize) -> &'static InterpData {
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static InterpData>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard.entry(d).or_insert_with(|| {
        let n = len(d);
        let pts = lattice(d);
        let mut v = DMatrix::<f64>::zeros(n, n);
        let exps = exponents(d);
        for (r, p) in pts.iter().enumerate() {
            for (c, &(i, j, l, m)) in exps.iter().enumerate() {
                v[(r, c)] = m * powi(p[0], i) * powi(p[1], j) * powi(p[2], l);
            }
        }
        let data = InterpData {
            lu: v.clone().lu(),
            vandermonde: v,
        };
        Box::leak(Box::new(data))
    })
}

/// Bernstein coefficients from values at the degree-d lattice points.
/// One step of iterative refinement keeps the round-trip near machine
/// precision for the moderate degrees used here.
pub fn interpolate(d: usize, values: &[f64]) -> Vec<f64> {
    let data = interp_data(d);
    let rhs = DVector::from_column_slice(values);
    let mut c = data.lu.solve(&rhs).expect("Bernstein Vandermonde is invertible");
    let resid = &rhs - &data.vandermonde * &c;
    if let Some(corr) = data.lu.solve(&resid) {
        c += corr;
    }
    c.as_slice().to_vec()
}

/// Interpolate a callable given in barycentric coordinates.
pub fn interpolate_fn<F: Fn([f64; 3]) -> f64>(d: usize, f: F) -> Vec<f64> {
    let values: Vec<f64> = lattice(d).into_iter().map(f).collect();
    interpolate(d, &values)
}

/// Reduce degree by one. Returns None if the polynomial genuinely has
/// degree d (checked by re-raising and comparing at the lattice).
pub fn try_reduce(d: usize, coeffs: &[f64], tol: f64) -> Option<Vec<f64>> {
    assert!(d >= 1);
    let vals: Vec<f64> = lattice(d - 1)
        .into_iter()
        .map(|p| eval(d, coeffs, p))
        .collect();
    let cand = interpolate(d - 1, &vals);
    let back = raise(d - 1, &cand);
    let scale = coeffs.iter().fold(1.0f64, |m, &c| m.max(c.abs()));
    let ok = coeffs
        .iter()
        .zip(&back)
        .all(|(&a, &b)| (a - b).abs() <= tol * scale);
    ok.then_some(cand)
}
