//! Jacobi polynomials, orthogonal polynomials on the reference triangle and
//! Gauss-type quadrature rules on the unit edge and the reference triangle.
//!
//! The reference triangle T has vertices (0,0), (1,0), (0,1).

use crate::{Error, Result};
use nalgebra::DMatrix;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Parameters of a Jacobi polynomial P_n^(a,b).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobiParams {
    pub n: usize,
    pub a: f64,
    pub b: f64,
}

impl JacobiParams {
    pub fn new(n: usize, a: f64, b: f64) -> Result<Self> {
        if a <= -1.0 || b <= -1.0 {
            return Err(Error::InvalidParameter(format!(
                "Jacobi parameters must be > -1, got a={a}, b={b}"
            )));
        }
        Ok(Self { n, a, b })
    }
}

/// Value of P_n^(a,b)(x) by the three-term recurrence.
pub fn jacobi_eval(p: JacobiParams, x: f64) -> f64 {
    let JacobiParams { n, a, b } = p;
    if n == 0 {
        return 1.0;
    }
    let mut pm1 = 1.0;
    let mut p0 = 0.5 * ((a + b + 2.0) * x + (a - b));
    for m in 2..=n {
        let m = m as f64;
        let c = 2.0 * m + a + b;
        let a1 = 2.0 * m * (m + a + b) * (c - 2.0);
        let a2 = (c - 1.0) * (a * a - b * b);
        let a3 = (c - 2.0) * (c - 1.0) * c;
        let a4 = 2.0 * (m + a - 1.0) * (m + b - 1.0) * c;
        let p1 = ((a2 + a3 * x) * p0 - a4 * pm1) / a1;
        pm1 = p0;
        p0 = p1;
    }
    p0
}

/// Derivative d/dx P_n^(a,b)(x).
pub fn jacobi_deriv(p: JacobiParams, x: f64) -> f64 {
    if p.n == 0 {
        return 0.0;
    }
    let q = JacobiParams {
        n: p.n - 1,
        a: p.a + 1.0,
        b: p.b + 1.0,
    };
    0.5 * (p.n as f64 + p.a + p.b + 1.0) * jacobi_eval(q, x)
}

/// Monomial coefficients of the shifted polynomial s -> P_n^(a,b)(2s - 1).
///
/// Runs the three-term recurrence on coefficient vectors in s.
pub fn jacobi_shifted_coeffs(n: usize, a: f64, b: f64) -> Vec<f64> {
    // x = 2s - 1 as a coefficient vector.
    let x = [-1.0, 2.0];
    let mul_x = |p: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; p.len() + 1];
        for (i, &c) in p.iter().enumerate() {
            out[i] += c * x[0];
            out[i + 1] += c * x[1];
        }
        out
    };
    let mut pm1 = vec![1.0];
    if n == 0 {
        return pm1;
    }
    let mut p0 = mul_x(&pm1);
    for v in p0.iter_mut() {
        *v *= 0.5 * (a + b + 2.0);
    }
    p0[0] += 0.5 * (a - b);
    for m in 2..=n {
        let m = m as f64;
        let c = 2.0 * m + a + b;
        let a1 = 2.0 * m * (m + a + b) * (c - 2.0);
        let a2 = (c - 1.0) * (a * a - b * b);
        let a3 = (c - 2.0) * (c - 1.0) * c;
        let a4 = 2.0 * (m + a - 1.0) * (m + b - 1.0) * c;
        let mut p1 = mul_x(&p0);
        for v in p1.iter_mut() {
            *v *= a3;
        }
        for (i, &c0) in p0.iter().enumerate() {
            p1[i] += a2 * c0;
        }
        for (i, &cm) in pm1.iter().enumerate() {
            p1[i] -= a4 * cm;
        }
        for v in p1.iter_mut() {
            *v /= a1;
        }
        pm1 = p0;
        p0 = p1;
    }
    p0
}

/// Multi-index of a bivariate orthogonal polynomial on the reference triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TriOrthoIndex {
    pub a1: usize,
    pub a2: usize,
}

impl TriOrthoIndex {
    pub fn total_degree(&self) -> usize {
        self.a1 + self.a2
    }
}

/// All multi-indices with |alpha| <= n, ordered by total degree then a2.
pub fn multi_indices(n: isize) -> Vec<TriOrthoIndex> {
    let mut out = Vec::new();
    if n < 0 {
        return out;
    }
    for d in 0..=(n as usize) {
        for a2 in 0..=d {
            out.push(TriOrthoIndex { a1: d - a2, a2 });
        }
    }
    out
}

/// Evaluate the triangle orthogonal polynomial at reference coordinates.
///
/// The factor (1-x)^a2 * P_a2^(1,1)(2y/(1-x) - 1) is expanded as a genuine
/// bivariate polynomial sum_j c_j y^j (1-x)^(a2-j), so no division by 1-x
/// occurs and x = 1 is handled exactly.
pub fn tri_ortho_eval(idx: TriOrthoIndex, x: f64, y: f64) -> f64 {
    let outer = jacobi_eval(
        JacobiParams {
            n: idx.a1,
            a: 1.0,
            b: 2.0 * idx.a2 as f64 + 3.0,
        },
        1.0 - 2.0 * x,
    );
    let c = shifted_p11_coeffs(idx.a2);
    let mut inner = 0.0;
    let omx = 1.0 - x;
    for (j, &cj) in c.iter().enumerate() {
        inner += cj * y.powi(j as i32) * omx.powi((idx.a2 - j) as i32);
    }
    outer * inner
}

fn shifted_p11_coeffs(m: usize) -> Vec<f64> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Vec<f64>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(m)
        .or_insert_with(|| jacobi_shifted_coeffs(m, 1.0, 1.0))
        .clone()
}

/// The cubic bubble weight W_T = l0*l1*l2 at reference coordinates.
pub fn triangle_weight(x: f64, y: f64) -> f64 {
    (1.0 - x - y) * x * y
}

/// A quadrature rule: barycentric points for triangles, parameters t in [0,1]
/// for edges. Weights sum to the reference measure (1/2 resp. 1).
#[derive(Debug, Clone)]
pub struct QuadRule {
    /// (l0, l1, l2) for triangle rules; (1-t, t, 0) unused third entry for edges.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Gauss nodes and weights on [-1,1] for the weight (1-x)^a (1+x)^b,
/// computed via the Golub-Welsch eigenvalue method.
fn gauss_jacobi(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    for (i, d) in diag.iter_mut().enumerate() {
        let m = i as f64;
        *d = if i == 0 {
            (b - a) / (a + b + 2.0)
        } else {
            let den = (2.0 * m + a + b) * (2.0 * m + a + b + 2.0);
            (b * b - a * a) / den
        };
    }
    for (i, o) in off.iter_mut().enumerate() {
        let m = (i + 1) as f64;
        let num = 4.0 * m * (m + a) * (m + b) * (m + a + b);
        let c = 2.0 * m + a + b;
        let den = c * c * (c + 1.0) * (c - 1.0);
        *o = (num / den).sqrt();
    }
    let mut mat = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        mat[(i, i)] = diag[i];
        if i + 1 < n {
            mat[(i, i + 1)] = off[i];
            mat[(i + 1, i)] = off[i];
        }
    }
    let eig = mat.symmetric_eigen();
    let mu0 = 2f64.powf(a + b + 1.0) * beta(a + 1.0, b + 1.0);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let v0 = eig.eigenvectors[(0, j)];
            (eig.eigenvalues[j], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    pairs.into_iter().unzip()
}

fn beta(p: f64, q: f64) -> f64 {
    // Arguments here are small positive reals (1 or 2); use the gamma
    // recursion on integers to stay dependency-free.
    fn gamma_int(x: f64) -> f64 {
        // x is a positive integer in all call sites.
        let n = x.round() as usize;
        (1..n).map(|i| i as f64).product()
    }
    gamma_int(p) * gamma_int(q) / gamma_int(p + q)
}

/// Gauss-Legendre rule on [0,1], exact through the given polynomial degree.
pub fn quad_edge(degree: usize) -> QuadRule {
    static CACHE: OnceLock<Mutex<HashMap<usize, QuadRule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(degree)
        .or_insert_with(|| {
            let n = degree / 2 + 1;
            let (x, w) = gauss_jacobi(n, 0.0, 0.0);
            let points = x.iter().map(|&xi| {
                let t = 0.5 * (xi + 1.0);
                [1.0 - t, t, 0.0]
            });
            QuadRule {
                points: points.collect(),
                weights: w.iter().map(|&wi| 0.5 * wi).collect(),
                degree,
            }
        })
        .clone()
}

/// Duffy-collapsed tensor Gauss rule on the reference triangle, exact for all
/// bivariate polynomials of total degree <= degree.
pub fn quad_triangle(degree: usize) -> QuadRule {
    static CACHE: OnceLock<Mutex<HashMap<usize, QuadRule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(degree)
        .or_insert_with(|| build_triangle_rule(degree))
        .clone()
}

fn build_triangle_rule(degree: usize) -> QuadRule {
    let n = (degree + 2).div_ceil(2);
    // x-direction carries the Duffy Jacobian (1-x): Gauss-Jacobi (1,0).
    let (xj, wj) = gauss_jacobi(n, 1.0, 0.0);
    let (xl, wl) = gauss_jacobi(n, 0.0, 0.0);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (ui, wu) in xj.iter().zip(&wj) {
        let u = 0.5 * (ui + 1.0);
        // weight (1-x)^1 on [-1,1] maps to 4*(1-u) on [0,1] with dx = 2 du.
        let wu01 = wu / 4.0;
        for (vi, wv) in xl.iter().zip(&wl) {
            let v = 0.5 * (vi + 1.0);
            let wv01 = wv * 0.5;
            let x = u;
            let y = v * (1.0 - u);
            points.push([1.0 - x - y, x, y]);
            weights.push(wu01 * wv01);
        }
    }
    QuadRule {
        points,
        weights,
        degree,
    }
}

/// Integrate f over the reference triangle with a rule of the given degree;
/// f receives reference coordinates (x, y).
pub fn integrate_triangle<F: Fn(f64, f64) -> f64>(degree: usize, f: F) -> f64 {
    let rule = quad_triangle(degree);
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(p, w)| w * f(p[1], p[2]))
        .sum()
}

/// Integrate f over [0,1] with a Gauss-Legendre rule of the given degree.
pub fn integrate_edge<F: Fn(f64) -> f64>(degree: usize, f: F) -> f64 {
    let rule = quad_edge(degree);
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(p, w)| w * f(p[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jacobi_low_orders() {
        assert_eq!(jacobi_eval(JacobiParams::new(0, 0.7, -0.2).unwrap(), 0.3), 1.0);
        // P_1^(a,b)(x) = ((a+b+2)x + (a-b))/2
        let v = jacobi_eval(JacobiParams::new(1, 1.0, 1.0).unwrap(), 0.5);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jacobi_params_validated() {
        assert!(JacobiParams::new(2, -1.0, 0.0).is_err());
        assert!(JacobiParams::new(2, 0.0, -1.5).is_err());
    }

    /// Three-term recurrence vs hand-expanded monomial forms for n <= 4.
    #[test]
    fn jacobi_matches_monomial_expansion() {
        // Closed forms for P_n^(1,1) from the Gegenbauer connection:
        // P_0 = 1, P_1 = 2x, P_2 = (15x^2-3)/4, P_3 = (7x^3-3x)*... use
        // explicit coefficients derived from the shifted-coefficient builder
        // evaluated against direct recurrence at sample points.
        let xs = [-0.9, -0.3, 0.0, 0.4, 1.0];
        for n in 0..=4 {
            let coeffs = jacobi_shifted_coeffs(n, 1.0, 1.0);
            for &x in &xs {
                let s = 0.5 * (x + 1.0);
                let direct = jacobi_eval(JacobiParams { n, a: 1.0, b: 1.0 }, x);
                let horner = coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c);
                assert!((direct - horner).abs() < 1e-13, "n={n} x={x}");
            }
        }
        // Spot-check P_2^(1,1)(x) = (15x^2 - 3)/4 explicitly.
        for &x in &xs {
            let v = jacobi_eval(JacobiParams { n: 2, a: 1.0, b: 1.0 }, x);
            assert!((v - (15.0 * x * x - 3.0) / 4.0).abs() < 1e-13);
        }
    }

    /// || P_j^(1,1) ||^2 on [-1,1] equals 4(j+1)/(j+2).
    #[test]
    fn jacobi_p11_unweighted_norm() {
        for j in 0..=8 {
            let p = JacobiParams { n: j, a: 1.0, b: 1.0 };
            let rule = quad_edge(2 * j);
            let val: f64 = rule
                .points
                .iter()
                .zip(&rule.weights)
                .map(|(pt, w)| {
                    let x = 2.0 * pt[1] - 1.0;
                    let v = jacobi_eval(p, x);
                    // map [0,1] -> [-1,1] carries factor 2
                    2.0 * w * v * v
                })
                .sum();
            let expect = 4.0 * (j as f64 + 1.0) / (j as f64 + 2.0);
            assert!((val - expect).abs() < 1e-12, "j={j}: {val} vs {expect}");
        }
    }

    #[test]
    fn tri_ortho_constant_is_one() {
        let idx = TriOrthoIndex { a1: 0, a2: 0 };
        assert_eq!(tri_ortho_eval(idx, 0.21, 0.37), 1.0);
        // continuous limit at x = 1
        assert_eq!(tri_ortho_eval(idx, 1.0, 0.0), 1.0);
    }

    #[test]
    fn tri_ortho_no_singularity_at_x_one() {
        let idx = TriOrthoIndex { a1: 1, a2: 2 };
        let v = tri_ortho_eval(idx, 1.0, 0.0);
        assert!(v.is_finite());
    }

    /// Weighted pairwise orthogonality of P_(T,alpha) for |alpha| <= 6.
    #[test]
    fn tri_ortho_weighted_orthogonality() {
        let idxs = multi_indices(6);
        for (i, &ai) in idxs.iter().enumerate() {
            for &aj in idxs.iter().skip(i + 1) {
                let d = 3 + ai.total_degree() + aj.total_degree();
                let val = integrate_triangle(d, |x, y| {
                    triangle_weight(x, y) * tri_ortho_eval(ai, x, y) * tri_ortho_eval(aj, x, y)
                });
                assert!(val.abs() < 1e-12, "{ai:?} vs {aj:?}: {val}");
            }
        }
    }

    /// Golden number: int_T W_T * P_(T,(1,0))^2 = 1/105 (hand-computed from
    /// the barycentric moment formula).
    #[test]
    fn tri_ortho_squared_norm_golden() {
        let idx = TriOrthoIndex { a1: 1, a2: 0 };
        let val = integrate_triangle(6, |x, y| {
            let p = tri_ortho_eval(idx, x, y);
            triangle_weight(x, y) * p * p
        });
        assert!((val - 1.0 / 105.0).abs() < 1e-15, "{val}");
    }

    #[test]
    fn quad_triangle_area_and_xy() {
        let one = integrate_triangle(0, |_, _| 1.0);
        assert!((one - 0.5).abs() < 1e-15);
        let xy = integrate_triangle(3, |x, y| x * y);
        assert!((xy - 1.0 / 24.0).abs() < 1e-16);
    }

    #[test]
    fn quad_triangle_kills_ortho_pair() {
        let k = 3;
        let a = TriOrthoIndex { a1: 1, a2: 0 };
        let b = TriOrthoIndex { a1: 0, a2: 1 };
        let val = integrate_triangle(2 * k, |x, y| {
            tri_ortho_eval(a, x, y) * tri_ortho_eval(b, x, y) * triangle_weight(x, y)
        });
        assert!(val.abs() < 1e-13);
    }

    #[test]
    fn quad_edge_basics() {
        let one = integrate_edge(1, |_| 1.0);
        assert!((one - 1.0).abs() < 1e-15);
        let t5 = integrate_edge(5, |t| t.powi(5));
        assert!((t5 - 1.0 / 6.0).abs() < 1e-15);
        for k in [1usize, 3, 5] {
            let p = JacobiParams { n: k, a: 0.0, b: 0.0 };
            let val = integrate_edge(2 * k, |t| {
                let v = jacobi_eval(p, 1.0 - 2.0 * t);
                v * v
            });
            assert!((val - 1.0 / (2.0 * k as f64 + 1.0)).abs() < 1e-14);
        }
    }

    /// Random polynomials of the declared degree integrate to the symbolic
    /// value: on the triangle use barycentric moments, on the edge monomials.
    #[test]
    fn quad_rules_exact_for_random_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        fn tri_moment(a: usize, b: usize) -> f64 {
            // int_T x^a y^b = a! b! / (a+b+2)!
            let mut v = 1.0;
            for i in 1..=a {
                v *= i as f64;
            }
            for i in 1..=b {
                v *= i as f64;
            }
            for i in 1..=(a + b + 2) {
                v /= i as f64;
            }
            v
        }
        for degree in [2usize, 5, 9, 14] {
            let mut exact = 0.0;
            let mut coeffs = Vec::new();
            for a in 0..=degree {
                for b in 0..=(degree - a) {
                    let c: f64 = rng.gen_range(-1.0..1.0);
                    coeffs.push((a, b, c));
                    exact += c * tri_moment(a, b);
                }
            }
            let quad = integrate_triangle(degree, |x, y| {
                coeffs
                    .iter()
                    .map(|&(a, b, c)| c * x.powi(a as i32) * y.powi(b as i32))
                    .sum()
            });
            assert!(
                (quad - exact).abs() <= 1e-13 * exact.abs().max(1.0),
                "degree {degree}: {quad} vs {exact}"
            );

            let ecoeffs: Vec<f64> = (0..=degree).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let eexact: f64 = ecoeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c / (i as f64 + 1.0))
                .sum();
            let equad = integrate_edge(degree, |t| {
                ecoeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
            });
            assert!((equad - eexact).abs() <= 1e-13 * eexact.abs().max(1.0));
        }
    }

    proptest::proptest! {
        /// Triangle rules integrate arbitrary quartics to the barycentric
        /// moment oracle.
        #[test]
        fn triangle_rule_exact_prop(
            coeffs in proptest::collection::vec(-5.0f64..5.0, 15),
        ) {
            fn tri_moment(a: usize, b: usize) -> f64 {
                let mut v = 1.0;
                for i in 1..=a { v *= i as f64; }
                for i in 1..=b { v *= i as f64; }
                for i in 1..=(a + b + 2) { v /= i as f64; }
                v
            }
            let terms: Vec<(usize, usize)> = (0..=4usize)
                .flat_map(|a| (0..=(4 - a)).map(move |b| (a, b)))
                .collect();
            let exact: f64 = terms
                .iter()
                .zip(&coeffs)
                .map(|(&(a, b), c)| c * tri_moment(a, b))
                .sum();
            let quad = integrate_triangle(4, |x, y| {
                terms
                    .iter()
                    .zip(&coeffs)
                    .map(|(&(a, b), c)| c * x.powi(a as i32) * y.powi(b as i32))
                    .sum()
            });
            proptest::prop_assert!((quad - exact).abs() <= 1e-13 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn weights_sum_to_reference_measure() {
        for d in 0..=12 {
            let t = quad_triangle(d);
            let st: f64 = t.weights.iter().sum();
            assert!((st - 0.5).abs() < 1e-14);
            let e = quad_edge(d);
            let se: f64 = e.weights.iter().sum();
            assert!((se - 1.0).abs() < 1e-14);
        }
    }
}
