//! Galerkin assembly of the broken bilinear form and the load vector on
//! CR_{k,0}, plus an SPD solver behind a small strategy registry.

use crate::bernstein;
use crate::crspace::{CRSpace, PiecewisePoly};
use crate::polyquad::quad_triangle;
use crate::{Error, Result};
use rayon::prelude::*;
use std::collections::HashMap;

/// Symmetric positive definite sparse matrix in CSR form.
#[derive(Debug, Clone)]
pub struct SparseSpd {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseSpd {
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut map: HashMap<(usize, usize), f64> = HashMap::new();
        for (r, c, v) in triplets {
            *map.entry((r, c)).or_insert(0.0) += v;
        }
        let mut entries: Vec<((usize, usize), f64)> = map.into_iter().collect();
        entries.sort_by_key(|&((r, c), _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for ((r, c), v) in entries {
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        y.par_iter_mut().enumerate().for_each(|(r, yr)| {
            let mut acc = 0.0;
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[i] * x[self.col_idx[i]];
            }
            *yr = acc;
        });
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[i] == r {
                    d[r] = self.values[i];
                }
            }
        }
        d
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        for i in self.row_ptr[r]..self.row_ptr[r + 1] {
            if self.col_idx[i] == c {
                return self.values[i];
            }
        }
        0.0
    }

    /// Coordinate text dump "i j value", one entry per line.
    pub fn to_coordinate_text(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        for r in 0..self.n {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                writeln!(s, "{} {} {:.16e}", r, self.col_idx[i], self.values[i]).unwrap();
            }
        }
        s
    }
}

/// Stiffness matrix A[i][j] = sum_K int_K grad b_i . grad b_j for the
/// homogeneous space CR_{k,0}.
pub fn assemble_stiffness(space: &CRSpace) -> SparseSpd {
    assert!(space.homogeneous, "stiffness assembly expects CR_{{k,0}}");
    let mesh = &space.mesh;
    let k = space.k;
    let rule = quad_triangle(2 * (k - 1) + 2 + space.quad_bump);
    let locals: Vec<Vec<(usize, usize, f64)>> = (0..mesh.ntri())
        .into_par_iter()
        .map(|t| {
            let dofs = space.local_dofs(t);
            let nd = dofs.len();
            let g = mesh.grad_lambda(t);
            let gx = [g[0][0], g[1][0], g[2][0]];
            let gy = [g[0][1], g[1][1], g[2][1]];
            // gradients of every local basis function at the quadrature nodes
            let mut gvals = vec![[0.0f64; 2]; nd * rule.len()];
            for (i, &(_, kind)) in dofs.iter().enumerate() {
                let c = space.table.coeffs(kind);
                let dx = bernstein::deriv(k, c, gx);
                let dy = bernstein::deriv(k, c, gy);
                for (q, lam) in rule.points.iter().enumerate() {
                    gvals[i * rule.len() + q] = [
                        bernstein::eval(k - 1, &dx, *lam),
                        bernstein::eval(k - 1, &dy, *lam),
                    ];
                }
            }
            let scale = 2.0 * mesh.area(t);
            let mut out = Vec::with_capacity(nd * nd);
            for i in 0..nd {
                for j in 0..nd {
                    let mut acc = 0.0;
                    for (q, w) in rule.weights.iter().enumerate() {
                        let a = gvals[i * rule.len() + q];
                        let b = gvals[j * rule.len() + q];
                        acc += w * (a[0] * b[0] + a[1] * b[1]);
                    }
                    out.push((dofs[i].0, dofs[j].0, scale * acc));
                }
            }
            out
        })
        .collect();
    SparseSpd::from_triplets(space.ndof, locals.into_iter().flatten())
}

/// Right-hand sides the load vector accepts.
pub enum Load<'a> {
    Fn(&'a (dyn Fn(f64, f64) -> f64 + Sync)),
    Poly(&'a PiecewisePoly),
}

/// Load vector b[i] = sum_K int_K f b_i, quadrature degree 2k+2.
pub fn assemble_load(space: &CRSpace, f: Load<'_>) -> Vec<f64> {
    let mesh = &space.mesh;
    let k = space.k;
    let rule = quad_triangle(2 * k + 2 + space.quad_bump);
    let locals: Vec<Vec<(usize, f64)>> = (0..mesh.ntri())
        .into_par_iter()
        .map(|t| {
            let coords = mesh.tri_coords(t);
            let fvals: Vec<f64> = rule
                .points
                .iter()
                .map(|lam| match &f {
                    Load::Fn(g) => {
                        let x = lam[0] * coords[0][0] + lam[1] * coords[1][0] + lam[2] * coords[2][0];
                        let y = lam[0] * coords[0][1] + lam[1] * coords[1][1] + lam[2] * coords[2][1];
                        g(x, y)
                    }
                    Load::Poly(p) => p.eval(t, *lam),
                })
                .collect();
            let scale = 2.0 * mesh.area(t);
            space
                .local_dofs(t)
                .iter()
                .map(|&(gdof, kind)| {
                    let c = space.table.coeffs(kind);
                    let mut acc = 0.0;
                    for ((lam, w), fv) in rule.points.iter().zip(&rule.weights).zip(&fvals) {
                        acc += w * fv * bernstein::eval(k, c, *lam);
                    }
                    (gdof, scale * acc)
                })
                .collect()
        })
        .collect();
    let mut b = vec![0.0; space.ndof];
    for chunk in locals {
        for (i, v) in chunk {
            b[i] += v;
        }
    }
    b
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub method: &'static str,
}

/// A linear solver for SPD systems, registered by name.
pub trait SpdSolver: Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, a: &SparseSpd, b: &[f64], tol: f64) -> Result<(Vec<f64>, SolveReport)>;
}

/// Jacobi-preconditioned conjugate gradients.
pub struct CgJacobi;

impl SpdSolver for CgJacobi {
    fn name(&self) -> &'static str {
        "cg-jacobi"
    }

    fn solve(&self, a: &SparseSpd, b: &[f64], tol: f64) -> Result<(Vec<f64>, SolveReport)> {
        let n = a.n;
        let bnorm = norm(b);
        if bnorm == 0.0 {
            return Ok((
                vec![0.0; n],
                SolveReport {
                    iterations: 0,
                    relative_residual: 0.0,
                    method: self.name(),
                },
            ));
        }
        let diag = a.diagonal();
        let minv: Vec<f64> = diag.iter().map(|&d| 1.0 / d).collect();
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&minv).map(|(ri, mi)| ri * mi).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        let max_iter = 10 * n.max(20);
        for it in 0..max_iter {
            let rel = norm(&r) / bnorm;
            if rel <= tol {
                return Ok((
                    x,
                    SolveReport {
                        iterations: it,
                        relative_residual: rel,
                        method: self.name(),
                    },
                ));
            }
            a.matvec(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] * minv[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rel = norm(&r) / bnorm;
        Err(Error::SolveFailure(max_iter, rel))
    }
}

/// Look up a solver strategy by name.
pub fn solver_by_name(name: &str) -> Option<&'static dyn SpdSolver> {
    static CG: CgJacobi = CgJacobi;
    match name {
        "cg-jacobi" => Some(&CG),
        _ => None,
    }
}

pub const DEFAULT_SOLVER: &str = "cg-jacobi";
pub const DEFAULT_SOLVE_TOL: f64 = 1e-10;

/// Solve with the default registered strategy.
pub fn solve_spd(a: &SparseSpd, b: &[f64], tol: f64) -> Result<(Vec<f64>, SolveReport)> {
    solver_by_name(DEFAULT_SOLVER).unwrap().solve(a, b, tol)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
