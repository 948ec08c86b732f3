//! Benchmark problems behind a name registry, exact-error computation and
//! convergence-rate fitting.
//!
//! The L-shape problem uses the corner-singularity solution
//!   u(r, alpha) = r^(2/3) sin((2/3)(alpha - pi/2)) (r^2 cos^2 - 1)(r^2 sin^2 - 1)
//! with the angle alpha in [pi/2, 2 pi] measured from the x1 axis. The
//! polynomial factor is (x^2 - 1)(y^2 - 1) and the singular factor s is
//! harmonic, so f = -Lap u = -(2 grad s . grad p + s Lap p) in closed form.

use crate::crspace::CRFunction;
use crate::mesh::{make_lshape_initial, make_unit_square_initial, Triangulation};
use crate::polyquad::quad_triangle;
use crate::{Error, Result};
use rayon::prelude::*;
use std::f64::consts::PI;

/// A benchmark problem: domain, load and (optionally) the exact solution.
pub trait Problem: Sync + Send {
    fn name(&self) -> &'static str;
    /// Initial triangulation with a compatible refinement-edge labelling.
    fn initial_mesh(&self) -> Triangulation;
    /// The load f. Never evaluated at singular points by interior-node
    /// quadrature rules.
    fn load(&self, x: f64, y: f64) -> f64;
    fn exact(&self, _x: f64, _y: f64) -> Option<f64> {
        None
    }
    fn exact_grad(&self, _x: f64, _y: f64) -> Option<[f64; 2]> {
        None
    }
    fn has_exact(&self) -> bool {
        false
    }
}

/// Registry of the built-in problems.
pub fn problem_by_name(name: &str) -> Option<Box<dyn Problem>> {
    match name {
        "lshape" => Some(Box::new(LShapeProblem)),
        "square-smooth" => Some(Box::new(SquareSmoothProblem)),
        _ => None,
    }
}

pub fn problem_names() -> &'static [&'static str] {
    &["lshape", "square-smooth"]
}

/// The L-shaped corner-singularity benchmark.
pub struct LShapeProblem;

impl LShapeProblem {
    /// Polar angle in [pi/2, 2 pi], branch cut inside the removed quadrant.
    fn alpha(x: f64, y: f64) -> f64 {
        let a = y.atan2(x);
        if a < 0.5 * PI {
            a + 2.0 * PI
        } else {
            a
        }
    }

    /// The harmonic singular factor s = r^(2/3) sin((2/3)(alpha - pi/2)).
    fn singular(x: f64, y: f64) -> f64 {
        let r2 = x * x + y * y;
        if r2 == 0.0 {
            return 0.0;
        }
        let r = r2.sqrt();
        let phi = Self::alpha(x, y) - 0.5 * PI;
        r.powf(2.0 / 3.0) * (2.0 / 3.0 * phi).sin()
    }

    /// grad s in Cartesian components.
    fn singular_grad(x: f64, y: f64) -> [f64; 2] {
        let r2 = x * x + y * y;
        let r = r2.sqrt();
        let alpha = Self::alpha(x, y);
        let phi = alpha - 0.5 * PI;
        let c = 2.0 / 3.0 * r.powf(-1.0 / 3.0);
        let (sa, ca) = (alpha.sin(), alpha.cos());
        let (sp, cp) = ((2.0 / 3.0 * phi).sin(), (2.0 / 3.0 * phi).cos());
        [c * (sp * ca - cp * sa), c * (sp * sa + cp * ca)]
    }
}

impl Problem for LShapeProblem {
    fn name(&self) -> &'static str {
        "lshape"
    }

    fn initial_mesh(&self) -> Triangulation {
        make_lshape_initial()
    }

    fn load(&self, x: f64, y: f64) -> f64 {
        assert!(
            x != 0.0 || y != 0.0,
            "load is singular at the reentrant corner"
        );
        let s = Self::singular(x, y);
        let gs = Self::singular_grad(x, y);
        let gp = [2.0 * x * (y * y - 1.0), 2.0 * y * (x * x - 1.0)];
        let lap_p = 2.0 * (y * y - 1.0) + 2.0 * (x * x - 1.0);
        -(2.0 * (gs[0] * gp[0] + gs[1] * gp[1]) + s * lap_p)
    }

    fn exact(&self, x: f64, y: f64) -> Option<f64> {
        let p = (x * x - 1.0) * (y * y - 1.0);
        Some(Self::singular(x, y) * p)
    }

    fn exact_grad(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        let s = Self::singular(x, y);
        let gs = Self::singular_grad(x, y);
        let p = (x * x - 1.0) * (y * y - 1.0);
        let gp = [2.0 * x * (y * y - 1.0), 2.0 * y * (x * x - 1.0)];
        Some([p * gs[0] + s * gp[0], p * gs[1] + s * gp[1]])
    }

    fn has_exact(&self) -> bool {
        true
    }
}

/// Smooth sanity problem: f = 1 on the unit square, no exact solution.
pub struct SquareSmoothProblem;

impl Problem for SquareSmoothProblem {
    fn name(&self) -> &'static str {
        "square-smooth"
    }

    fn initial_mesh(&self) -> Triangulation {
        make_unit_square_initial()
    }

    fn load(&self, _x: f64, _y: f64) -> f64 {
        1.0
    }
}

/// || grad u - grad_T u_h ||_{L2} by per-element quadrature of degree 2k+4.
pub fn h1_error(u_h: &CRFunction, problem: &dyn Problem) -> Result<f64> {
    h1_error_with_degree(u_h, problem, 2 * u_h.space.k + 4 + u_h.space.quad_bump)
}

pub fn h1_error_with_degree(u_h: &CRFunction, problem: &dyn Problem, degree: usize) -> Result<f64> {
    if !problem.has_exact() {
        return Err(Error::MissingExact(problem.name().into()));
    }
    let space = &u_h.space;
    let mesh = &space.mesh;
    let u = u_h.to_piecewise();
    let rule = quad_triangle(degree);
    // per-triangle contributions are summed serially in id order so the
    // result is identical regardless of the worker schedule
    let locals: Vec<f64> = (0..mesh.ntri())
        .into_par_iter()
        .map(|t| {
            let coords = mesh.tri_coords(t);
            let mut local = 0.0;
            for (lam, w) in rule.points.iter().zip(&rule.weights) {
                let x = lam[0] * coords[0][0] + lam[1] * coords[1][0] + lam[2] * coords[2][0];
                let y = lam[0] * coords[0][1] + lam[1] * coords[1][1] + lam[2] * coords[2][1];
                let ge = problem.exact_grad(x, y).expect("exact gradient");
                let gh = u.grad(t, *lam);
                let dx = ge[0] - gh[0];
                let dy = ge[1] - gh[1];
                local += w * (dx * dx + dy * dy);
            }
            2.0 * mesh.area(t) * local
        })
        .collect();
    let err2: f64 = locals.iter().sum();
    Ok(err2.sqrt())
}

/// Least-squares slope of log(value) against log(ndof) over a trailing
/// window.
#[derive(Debug, Clone)]
pub struct RateFit {
    pub slope: f64,
    pub window: usize,
}

pub fn fit_rate(series: &[(usize, f64)], window: usize) -> Result<RateFit> {
    if window < 4 {
        return Err(Error::InvalidParameter(
            "rate window must have at least 4 points".into(),
        ));
    }
    if series.len() < window {
        return Err(Error::InvalidParameter(format!(
            "need at least {window} points, got {}",
            series.len()
        )));
    }
    let tail = &series[series.len() - window..];
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .map(|&(n, v)| ((n as f64).ln(), v.ln()))
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    Ok(RateFit { slope, window })
}

/// Slope over the trailing window of all points with ndof above a fraction
/// of the final ndof (at least `min_pts` points).
pub fn fit_rate_tail_fraction(
    series: &[(usize, f64)],
    fraction: f64,
    min_pts: usize,
) -> Result<RateFit> {
    let max_n = series.iter().map(|&(n, _)| n).max().unwrap_or(0);
    let cut = (max_n as f64 * fraction) as usize;
    let count = series.iter().filter(|&&(n, _)| n >= cut).count();
    let window = count.max(min_pts).max(4).min(series.len());
    fit_rate(series, window)
}
