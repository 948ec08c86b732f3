//! The nonconforming Crouzeix-Raviart spaces CR_k / CR_{k,0} of odd degree k:
//! degree-of-freedom tables, basis functions, dual (moment) functions, the
//! associated functionals, and broken piecewise-polynomial functions.
//!
//! Basis functions, in barycentric form on a triangle K with l_i the hat
//! function of local vertex i:
//!   b_{E,k-1}|_K = P_k^(0,0)(1 - 2 l_E)           (l_E: vertex opposite E)
//!   b_{E,j}      = l_a l_b P_j^(1,1)(2 phi_0 - 1)  for j <= k-2
//!   b_{K,alpha}  = l_0 l_1 l_2 P_(T,alpha)
//! where phi_0 is the hat function of the first endpoint of E's canonical
//! orientation. All three families are barycentric-universal, so their
//! Bernstein coefficient vectors are computed once per degree.

use crate::bernstein;
use crate::mesh::{Submesh, Triangulation};
use crate::polyquad::{
    self, integrate_edge, jacobi_eval, multi_indices, quad_edge, quad_triangle, JacobiParams,
    TriOrthoIndex,
};
use crate::{Error, Result};
use std::fmt::Write as _;
use std::sync::Arc;

/// Relative gate for membership in the broken CR space (jump moments).
pub const JUMP_GATE_TOL: f64 = 1e-8;

/// Which trace of a broken function to use on an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    /// K_L by convention.
    Auto,
}

/// Identifies one local basis function of a triangle.
#[derive(Debug, Clone, Copy)]
pub enum BasisKind {
    /// Nonconforming edge function of local edge e.
    EdgeNc { e: usize },
    /// Conforming edge bubble of local edge e; `flip` is set when the
    /// canonical first endpoint z0 is the local vertex (e+2)%3.
    EdgeConf { e: usize, flip: bool, j: usize },
    /// Volume bubble with multi-index position ai.
    Vol { ai: usize },
}

/// Universal Bernstein coefficient tables for one polynomial degree.
pub struct LocalBasisTable {
    pub k: usize,
    /// dim P_k per triangle.
    pub local_dim: usize,
    nc: [Vec<f64>; 3],
    conf: Vec<Vec<f64>>, // [e * 2 + flip] * (k-1) + j
    vol: Vec<Vec<f64>>,
    g_vertex: [Vec<f64>; 3],
    /// C_alpha = int_T W_T P_(T,alpha)^2 for each multi-index.
    pub c_alpha: Vec<f64>,
    pub alphas: Vec<TriOrthoIndex>,
}

impl LocalBasisTable {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1 && k % 2 == 1, "degree must be odd");
        let interp = |f: &dyn Fn([f64; 3]) -> f64| bernstein::interpolate_fn(k, f);
        let nc = std::array::from_fn(|e| {
            interp(&|lam| jacobi_eval(JacobiParams { n: k, a: 0.0, b: 0.0 }, 1.0 - 2.0 * lam[e]))
        });
        let mut conf = Vec::new();
        for e in 0..3 {
            for flip in [false, true] {
                let a = (e + 1) % 3;
                let b = (e + 2) % 3;
                let z0 = if flip { b } else { a };
                for j in 0..k.saturating_sub(1) {
                    conf.push(interp(&|lam| {
                        lam[a]
                            * lam[b]
                            * jacobi_eval(
                                JacobiParams { n: j, a: 1.0, b: 1.0 },
                                2.0 * lam[z0] - 1.0,
                            )
                    }));
                }
            }
        }
        let alphas = multi_indices(k as isize - 3);
        let vol: Vec<Vec<f64>> = alphas
            .iter()
            .map(|&alpha| {
                interp(&|lam| {
                    lam[0] * lam[1] * lam[2] * polyquad::tri_ortho_eval(alpha, lam[1], lam[2])
                })
            })
            .collect();
        let g_vertex = std::array::from_fn(|v| {
            interp(&|lam| jacobi_eval(JacobiParams { n: k, a: 0.0, b: 2.0 }, 1.0 - 2.0 * lam[v]))
        });
        let c_alpha = alphas
            .iter()
            .map(|&alpha| {
                polyquad::integrate_triangle(2 * k.saturating_sub(3) + 5, |x, y| {
                    let p = polyquad::tri_ortho_eval(alpha, x, y);
                    polyquad::triangle_weight(x, y) * p * p
                })
            })
            .collect();
        Self {
            k,
            local_dim: (k + 1) * (k + 2) / 2,
            nc,
            conf,
            vol,
            g_vertex,
            c_alpha,
            alphas,
        }
    }

    pub fn coeffs(&self, kind: BasisKind) -> &[f64] {
        match kind {
            BasisKind::EdgeNc { e } => &self.nc[e],
            BasisKind::EdgeConf { e, flip, j } => {
                &self.conf[(e * 2 + flip as usize) * (self.k - 1) + j]
            }
            BasisKind::Vol { ai } => &self.vol[ai],
        }
    }

    /// Bernstein coefficients of the unscaled vertex dual P_k^(0,2)(1-2 l_v).
    pub fn g_vertex_coeffs(&self, vloc: usize) -> &[f64] {
        &self.g_vertex[vloc]
    }

    pub fn nvol(&self) -> usize {
        self.alphas.len()
    }
}

/// One degree of freedom of a CR space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dof {
    Edge { edge: usize, j: usize },
    Vol { tri: usize, ai: usize },
}

pub struct CRSpace {
    pub mesh: Arc<Triangulation>,
    pub k: usize,
    pub homogeneous: bool,
    pub ndof: usize,
    /// First dof id of each edge's block (None for dropped boundary blocks).
    pub edge_dof: Vec<Option<usize>>,
    /// First dof id of each triangle's volume block.
    pub vol_dof: Vec<usize>,
    pub table: Arc<LocalBasisTable>,
    /// Per-triangle local dofs: (global id, basis kind).
    local: Vec<Vec<(usize, BasisKind)>>,
    /// Extra quadrature degree added everywhere.
    pub quad_bump: usize,
}

impl CRSpace {
    pub fn new(mesh: Arc<Triangulation>, k: usize, homogeneous: bool) -> Result<Arc<Self>> {
        Self::with_quad_bump(mesh, k, homogeneous, 0)
    }

    pub fn with_quad_bump(
        mesh: Arc<Triangulation>,
        k: usize,
        homogeneous: bool,
        quad_bump: usize,
    ) -> Result<Arc<Self>> {
        if k < 1 || k % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "k must be odd and >= 1, got {k}"
            )));
        }
        let table = Arc::new(LocalBasisTable::new(k));
        let mut edge_dof = Vec::with_capacity(mesh.nedge());
        let mut next = 0usize;
        for e in &mesh.edges {
            if homogeneous && e.is_boundary() {
                edge_dof.push(None);
            } else {
                edge_dof.push(Some(next));
                next += k;
            }
        }
        let nvol = table.nvol();
        let mut vol_dof = Vec::with_capacity(mesh.ntri());
        for _ in 0..mesh.ntri() {
            vol_dof.push(next);
            next += nvol;
        }
        let mut local = Vec::with_capacity(mesh.ntri());
        for t in 0..mesh.ntri() {
            let mut dofs = Vec::with_capacity(table.local_dim);
            for e in 0..3 {
                let ge = mesh.tri_edges[t][e];
                let Some(base) = edge_dof[ge] else { continue };
                let (a, _b) = mesh.triangles[t].edge_vertices(e);
                let flip = mesh.edges[ge].z[0] != a;
                debug_assert!(!flip || mesh.edges[ge].z[0] == _b);
                for j in 0..k - 1 {
                    dofs.push((base + j, BasisKind::EdgeConf { e, flip, j }));
                }
                dofs.push((base + k - 1, BasisKind::EdgeNc { e }));
            }
            for ai in 0..nvol {
                dofs.push((vol_dof[t] + ai, BasisKind::Vol { ai }));
            }
            local.push(dofs);
        }
        Ok(Arc::new(Self {
            mesh,
            k,
            homogeneous,
            ndof: next,
            edge_dof,
            vol_dof,
            table,
            local,
            quad_bump,
        }))
    }

    pub fn local_dofs(&self, t: usize) -> &[(usize, BasisKind)] {
        &self.local[t]
    }

    pub fn dof_of(&self, dof: Dof) -> Option<usize> {
        match dof {
            Dof::Edge { edge, j } => self.edge_dof[edge].map(|b| {
                debug_assert!(j < self.k);
                b + j
            }),
            Dof::Vol { tri, ai } => Some(self.vol_dof[tri] + ai),
        }
    }

    /// Evaluate the basis function of `dof` on triangle t at a physical
    /// point. Returns 0 outside the support; errors if p lies outside t.
    pub fn basis_eval(&self, dof: Dof, t: usize, p: [f64; 2]) -> Result<f64> {
        let lam = self.mesh.barycentric(t, p);
        if lam.iter().any(|&l| l < -1e-12) {
            return Err(Error::PointOutsideTriangle);
        }
        let kind = match dof {
            Dof::Edge { edge, j } => {
                let Some(e) = self.mesh.local_edge(t, edge) else {
                    return Ok(0.0);
                };
                if j == self.k - 1 {
                    BasisKind::EdgeNc { e }
                } else {
                    let (a, _) = self.mesh.triangles[t].edge_vertices(e);
                    let flip = self.mesh.edges[edge].z[0] != a;
                    BasisKind::EdgeConf { e, flip, j }
                }
            }
            Dof::Vol { tri, ai } => {
                if tri != t {
                    return Ok(0.0);
                }
                BasisKind::Vol { ai }
            }
        };
        Ok(bernstein::eval(self.k, self.table.coeffs(kind), lam))
    }

    /// Dual edge polynomial g_{E,j}; evaluate via [`EdgeDual::eval`].
    ///
    /// g_{E,j}(t) = (A_j/|E|) (P_j^(1,1)(1-2t) - c_j P_{k-1}^(1,1)(1-2t)).
    /// The prefactors are calibrated so that the biduality relations
    /// F_{E,j}(b_{E',j'}) = delta delta hold exactly.
    pub fn dual_edge(&self, edge: usize, j: usize) -> Result<EdgeDual> {
        if j >= self.k {
            return Err(Error::InvalidParameter(format!(
                "edge moment index {j} out of range for k={}",
                self.k
            )));
        }
        Ok(EdgeDual::new(self.k, j, self.mesh.h_edge(edge)))
    }

    /// Dual volume polynomial g_{K,alpha} = gamma_{K,alpha} P_{K,alpha}.
    pub fn dual_volume(&self, tri: usize, ai: usize) -> Result<VolumeDual> {
        if ai >= self.table.nvol() {
            return Err(Error::InvalidParameter(format!(
                "volume moment index {ai} out of range for k={}",
                self.k
            )));
        }
        let gamma = 1.0 / (2.0 * self.mesh.area(tri) * self.table.c_alpha[ai]);
        Ok(VolumeDual {
            alpha: self.table.alphas[ai],
            gamma,
        })
    }

    /// F_{E,j}(u): edge moment of the requested trace of u.
    pub fn functional_edge(&self, edge: usize, j: usize, u: &PiecewisePoly, side: Side) -> f64 {
        let dual = EdgeDual::new(self.k, j, 1.0);
        let deg = (self.k - 1) + u.degree + self.quad_bump;
        let rule = quad_edge(deg);
        let tri = self.side_tri(edge, side);
        let mut acc = 0.0;
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let t = p[1];
            let x = self.mesh.edge_point(edge, t);
            // |E| from ds cancels against the 1/|E| in g.
            acc += w * dual.eval_unit(t) * u.eval_at(tri, x);
        }
        acc
    }

    fn side_tri(&self, edge: usize, side: Side) -> usize {
        let e = &self.mesh.edges[edge];
        match side {
            Side::Left | Side::Auto => e.k_left,
            Side::Right => e.k_right.unwrap_or(e.k_left),
        }
    }

    /// F_{S,z}(u): averaged weighted volume functional over the triangles of
    /// S containing z; reproduces vertex values of piecewise polynomials of
    /// degree <= k.
    pub fn functional_vertex(&self, s: &Submesh, z: usize, u: &PiecewisePoly) -> Result<f64> {
        let tris: Vec<usize> = self.mesh.vertex_tris[z]
            .iter()
            .copied()
            .filter(|&t| s.contains(t))
            .collect();
        if tris.is_empty() {
            return Err(Error::NotInMesh(format!("vertex {z} not in V(S)")));
        }
        let deg = self.k + u.degree + self.quad_bump;
        let mut acc = 0.0;
        for &t in &tris {
            acc += self.vertex_dual_inner(t, z, u, deg);
        }
        Ok(acc / tris.len() as f64)
    }

    /// (g_K^z, u)_{L2(K)} for one triangle.
    pub fn vertex_dual_inner(&self, t: usize, z: usize, u: &PiecewisePoly, deg: usize) -> f64 {
        let vloc = self
            .mesh
            .local_vertex(t, z)
            .expect("vertex must belong to triangle");
        let g = self.table.g_vertex_coeffs(vloc);
        let area = self.mesh.area(t);
        let scale = -binom2(self.k + 2) / area;
        let rule = quad_triangle(deg);
        let mut acc = 0.0;
        for (lam, w) in rule.points.iter().zip(&rule.weights) {
            acc += w * bernstein::eval(self.k, g, *lam) * u.eval(t, *lam);
        }
        2.0 * area * scale * acc
    }

    /// F_{K,alpha}(u).
    pub fn functional_volume(&self, tri: usize, ai: usize, u: &PiecewisePoly) -> f64 {
        let dual = self.dual_volume(tri, ai).expect("valid index");
        let deg = self.k.saturating_sub(3) + u.degree + self.quad_bump;
        let rule = quad_triangle(deg);
        let mut acc = 0.0;
        for (lam, w) in rule.points.iter().zip(&rule.weights) {
            acc += w * polyquad::tri_ortho_eval(dual.alpha, lam[1], lam[2]) * u.eval(tri, *lam);
        }
        2.0 * self.mesh.area(tri) * dual.gamma * acc
    }

    /// Expand a coefficient vector into its broken polynomial form.
    pub fn to_piecewise(&self, f: &CRFunction) -> PiecewisePoly {
        assert_eq!(f.coeffs.len(), self.ndof);
        let mut blocks = Vec::with_capacity(self.mesh.ntri());
        let n = bernstein::len(self.k);
        for t in 0..self.mesh.ntri() {
            let mut block = vec![0.0; n];
            for &(gdof, kind) in self.local_dofs(t) {
                let c = f.coeffs[gdof];
                if c == 0.0 {
                    continue;
                }
                for (b, &bc) in block.iter_mut().zip(self.table.coeffs(kind)) {
                    *b += c * bc;
                }
            }
            blocks.push(block);
        }
        PiecewisePoly {
            mesh: self.mesh.clone(),
            degree: self.k,
            blocks,
        }
    }

    /// Extract CR coefficients from a broken polynomial by the functional
    /// cascade; gated on membership in the broken CR space.
    pub fn from_moments(self: &Arc<Self>, u: &PiecewisePoly) -> Result<CRFunction> {
        self.jump_gate(u)?;
        Ok(self.from_moments_ungated(u))
    }

    /// The same extraction without the membership gate (used internally by
    /// operator constructions whose inputs are gated at the boundary of the
    /// pipeline).
    pub fn from_moments_ungated(self: &Arc<Self>, u: &PiecewisePoly) -> CRFunction {
        let mut coeffs = vec![0.0; self.ndof];
        for (e, base) in self.edge_dof.iter().enumerate() {
            let Some(base) = *base else { continue };
            for j in 0..self.k {
                coeffs[base + j] = self.functional_edge(e, j, u, Side::Auto);
            }
        }
        // Volume coefficients apply to the residual u - Pi^E u.
        let edge_part = self.to_piecewise(&CRFunction {
            space: self.clone(),
            coeffs: coeffs.clone(),
        });
        for t in 0..self.mesh.ntri() {
            for ai in 0..self.table.nvol() {
                let m_u = self.functional_volume(t, ai, u);
                let m_e = self.functional_volume(t, ai, &edge_part);
                coeffs[self.vol_dof[t] + ai] = m_u - m_e;
            }
        }
        CRFunction {
            space: self.clone(),
            coeffs,
        }
    }

    /// Largest normalized jump moment of u over the gated edges, relative
    /// to ||u||: the quantity tested by the membership gate.
    pub fn max_jump_moment_rel(&self, u: &PiecewisePoly) -> (usize, f64) {
        let norm = u.norm_l2().max(f64::MIN_POSITIVE);
        let deg = (self.k - 1) + u.degree + self.quad_bump;
        let mut worst = (0usize, 0.0f64);
        for (e, edge) in self.mesh.edges.iter().enumerate() {
            let boundary = edge.is_boundary();
            if boundary && !self.homogeneous {
                continue;
            }
            let he = self.mesh.h_edge(e);
            for j in 0..self.k {
                let p = JacobiParams { n: j, a: 0.0, b: 0.0 };
                let m = integrate_edge(deg, |t| {
                    jacobi_eval(p, 1.0 - 2.0 * t) * u.jump_at(e, t)
                });
                let scaled = m.abs() * ((2.0 * j as f64 + 1.0) * he).sqrt() / norm;
                if scaled > worst.1 {
                    worst = (e, scaled);
                }
            }
        }
        worst
    }

    /// Verify that the jump moments of u vanish relative to ||u||: the
    /// floating-point membership test for the broken CR space (and, for the
    /// homogeneous space, for the boundary moments as well).
    pub fn jump_gate(&self, u: &PiecewisePoly) -> Result<()> {
        let (edge, rel) = self.max_jump_moment_rel(u);
        if rel > JUMP_GATE_TOL {
            return Err(Error::JumpGate {
                edge,
                moment: rel,
                gate: JUMP_GATE_TOL,
            });
        }
        Ok(())
    }
}

fn binom2(n: usize) -> f64 {
    (n * (n - 1) / 2) as f64
}

/// The edge dual polynomial g_{E,j} on the unit parameterization of E.
#[derive(Debug, Clone)]
pub struct EdgeDual {
    pub k: usize,
    pub j: usize,
    inv_len: f64,
    a_j: f64,
    c_j: f64,
}

impl EdgeDual {
    /// The dual on the unit parameterization (|E| = 1).
    pub fn new_unit(k: usize, j: usize) -> Self {
        Self::new(k, j, 1.0)
    }

    fn new(k: usize, j: usize, h_e: f64) -> Self {
        let jf = j as f64;
        let kf = k as f64;
        let gamma = (2.0 * jf + 3.0) * (jf + 2.0) / (8.0 * jf + 8.0);
        let (a_j, c_j) = if j == k - 1 {
            (2.0 * gamma, 1.0 / (2.0 * kf + 1.0))
        } else {
            (
                8.0 * gamma,
                (1.0 + (-1.0f64).powi(j as i32)) * (kf + 1.0) / (2.0 * jf + 4.0),
            )
        };
        Self {
            k,
            j,
            inv_len: 1.0 / h_e,
            a_j,
            c_j,
        }
    }

    /// g_{E,j} at parameter t in [0,1] (includes the 1/|E| factor).
    pub fn eval(&self, t: f64) -> f64 {
        self.inv_len * self.eval_unit(t)
    }

    /// |E| * g_{E,j}(t): the part that pairs with the unit-interval measure.
    pub fn eval_unit(&self, t: f64) -> f64 {
        let x = 1.0 - 2.0 * t;
        let pj = jacobi_eval(JacobiParams { n: self.j, a: 1.0, b: 1.0 }, x);
        let pk1 = jacobi_eval(
            JacobiParams { n: self.k - 1, a: 1.0, b: 1.0 },
            x,
        );
        self.a_j * (pj - self.c_j * pk1)
    }
}

/// The volume dual g_{K,alpha} = gamma_{K,alpha} P_{K,alpha}.
#[derive(Debug, Clone)]
pub struct VolumeDual {
    pub alpha: TriOrthoIndex,
    pub gamma: f64,
}

impl VolumeDual {
    /// Evaluate at barycentric coordinates of K.
    pub fn eval(&self, lam: [f64; 3]) -> f64 {
        self.gamma * polyquad::tri_ortho_eval(self.alpha, lam[1], lam[2])
    }
}

/// A broken polynomial: one Bernstein block per triangle.
#[derive(Debug, Clone)]
pub struct PiecewisePoly {
    pub mesh: Arc<Triangulation>,
    pub degree: usize,
    pub blocks: Vec<Vec<f64>>,
}

impl PiecewisePoly {
    pub fn zero(mesh: Arc<Triangulation>, degree: usize) -> Self {
        let n = bernstein::len(degree);
        let blocks = vec![vec![0.0; n]; mesh.ntri()];
        Self {
            mesh,
            degree,
            blocks,
        }
    }

    /// Interpolate a callable trianglewise at the lattice points (exact for
    /// polynomials of the stored degree).
    pub fn interpolate<F: Fn(f64, f64) -> f64>(
        mesh: Arc<Triangulation>,
        degree: usize,
        f: F,
    ) -> Self {
        let mut blocks = Vec::with_capacity(mesh.ntri());
        for t in 0..mesh.ntri() {
            let c = mesh.tri_coords(t);
            blocks.push(bernstein::interpolate_fn(degree, |lam| {
                let x = lam[0] * c[0][0] + lam[1] * c[1][0] + lam[2] * c[2][0];
                let y = lam[0] * c[0][1] + lam[1] * c[1][1] + lam[2] * c[2][1];
                f(x, y)
            }));
        }
        Self {
            mesh,
            degree,
            blocks,
        }
    }

    pub fn eval(&self, t: usize, lam: [f64; 3]) -> f64 {
        bernstein::eval(self.degree, &self.blocks[t], lam)
    }

    pub fn eval_at(&self, t: usize, p: [f64; 2]) -> f64 {
        self.eval(t, self.mesh.barycentric(t, p))
    }

    /// Piecewise gradient at barycentric coordinates of triangle t.
    pub fn grad(&self, t: usize, lam: [f64; 3]) -> [f64; 2] {
        let g = self.mesh.grad_lambda(t);
        let gx = [g[0][0], g[1][0], g[2][0]];
        let gy = [g[0][1], g[1][1], g[2][1]];
        let dx = bernstein::deriv(self.degree, &self.blocks[t], gx);
        let dy = bernstein::deriv(self.degree, &self.blocks[t], gy);
        [
            bernstein::eval(self.degree - 1, &dx, lam),
            bernstein::eval(self.degree - 1, &dy, lam),
        ]
    }

    /// Bernstein coefficients (degree-2) of the Laplacian on triangle t.
    pub fn laplacian_block(&self, t: usize) -> Vec<f64> {
        assert!(self.degree >= 2);
        let g = self.mesh.grad_lambda(t);
        let gx = [g[0][0], g[1][0], g[2][0]];
        let gy = [g[0][1], g[1][1], g[2][1]];
        let dx = bernstein::deriv(self.degree, &self.blocks[t], gx);
        let dxx = bernstein::deriv(self.degree - 1, &dx, gx);
        let dy = bernstein::deriv(self.degree, &self.blocks[t], gy);
        let dyy = bernstein::deriv(self.degree - 1, &dy, gy);
        dxx.iter().zip(&dyy).map(|(a, b)| a + b).collect()
    }

    /// Trace value on edge e at parameter t from the requested side.
    pub fn trace_at(&self, e: usize, t: f64, side: Side) -> f64 {
        let edge = &self.mesh.edges[e];
        let tri = match side {
            Side::Left | Side::Auto => edge.k_left,
            Side::Right => edge.k_right.unwrap_or(edge.k_left),
        };
        self.eval_at(tri, self.mesh.edge_point(e, t))
    }

    /// Jump over edge e at parameter t (K_L minus K_R; boundary: K_L trace).
    pub fn jump_at(&self, e: usize, t: f64) -> f64 {
        let edge = &self.mesh.edges[e];
        let x = self.mesh.edge_point(e, t);
        let left = self.eval_at(edge.k_left, x);
        match edge.k_right {
            Some(r) => left - self.eval_at(r, x),
            None => left,
        }
    }

    /// Mean over edge e at parameter t.
    pub fn mean_at(&self, e: usize, t: f64) -> f64 {
        let edge = &self.mesh.edges[e];
        let x = self.mesh.edge_point(e, t);
        let left = self.eval_at(edge.k_left, x);
        match edge.k_right {
            Some(r) => 0.5 * (left + self.eval_at(r, x)),
            None => left,
        }
    }

    /// Gradient jump over edge e at parameter t as a vector.
    pub fn grad_jump_at(&self, e: usize, t: f64) -> [f64; 2] {
        let edge = &self.mesh.edges[e];
        let x = self.mesh.edge_point(e, t);
        let gl = self.grad(edge.k_left, self.mesh.barycentric(edge.k_left, x));
        match edge.k_right {
            Some(r) => {
                let gr = self.grad(r, self.mesh.barycentric(r, x));
                [gl[0] - gr[0], gl[1] - gr[1]]
            }
            None => gl,
        }
    }

    pub fn add_scaled(&mut self, other: &PiecewisePoly, s: f64) {
        assert_eq!(self.degree, other.degree);
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn raise_degree(&self, target: usize) -> PiecewisePoly {
        let blocks = self
            .blocks
            .iter()
            .map(|b| bernstein::raise_to(self.degree, b, target))
            .collect();
        PiecewisePoly {
            mesh: self.mesh.clone(),
            degree: target,
            blocks,
        }
    }

    /// Reduce to the target degree; errors if any block genuinely exceeds it.
    pub fn reduce_degree(&self, target: usize, tol: f64) -> Result<PiecewisePoly> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (t, b) in self.blocks.iter().enumerate() {
            let mut cur = b.clone();
            for d in (target + 1..=self.degree).rev() {
                cur = bernstein::try_reduce(d, &cur, tol).ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "block {t} has true degree > {target}; cannot reduce"
                    ))
                })?;
            }
            blocks.push(cur);
        }
        Ok(PiecewisePoly {
            mesh: self.mesh.clone(),
            degree: target,
            blocks,
        })
    }

    pub fn norm_l2(&self) -> f64 {
        let rule = quad_triangle(2 * self.degree);
        let mut acc = 0.0;
        for t in 0..self.mesh.ntri() {
            let mut local = 0.0;
            for (lam, w) in rule.points.iter().zip(&rule.weights) {
                let v = self.eval(t, *lam);
                local += w * v * v;
            }
            acc += 2.0 * self.mesh.area(t) * local;
        }
        acc.sqrt()
    }

    /// || grad_T u ||_{L2} over a subset of the triangles.
    pub fn h1_seminorm_on(&self, tris: impl Iterator<Item = usize>) -> f64 {
        let rule = quad_triangle(2 * self.degree.saturating_sub(1));
        let mut acc = 0.0;
        for t in tris {
            let mut local = 0.0;
            for (lam, w) in rule.points.iter().zip(&rule.weights) {
                let g = self.grad(t, *lam);
                local += w * (g[0] * g[0] + g[1] * g[1]);
            }
            acc += 2.0 * self.mesh.area(t) * local;
        }
        acc.sqrt()
    }

    pub fn h1_seminorm(&self) -> f64 {
        self.h1_seminorm_on(0..self.mesh.ntri())
    }
}

/// A function in a CR space, stored by its coefficient vector.
#[derive(Clone)]
pub struct CRFunction {
    pub space: Arc<CRSpace>,
    pub coeffs: Vec<f64>,
}

impl CRFunction {
    pub fn zero(space: Arc<CRSpace>) -> Self {
        let coeffs = vec![0.0; space.ndof];
        Self { space, coeffs }
    }

    pub fn to_piecewise(&self) -> PiecewisePoly {
        self.space.to_piecewise(self)
    }

    /// Text serialization: "k ndof" header, one coefficient per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {}", self.space.k, self.coeffs.len()).unwrap();
        for c in &self.coeffs {
            writeln!(s, "{c:.16e}").unwrap();
        }
        s
    }

    pub fn from_text(space: Arc<CRSpace>, text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty CR function file".into()))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header {header}"))))
            .collect::<Result<_>>()?;
        if head.len() != 2 || head[0] != space.k || head[1] != space.ndof {
            return Err(Error::Parse(format!(
                "header mismatch: expected '{} {}', got '{header}'",
                space.k, space.ndof
            )));
        }
        let coeffs: Vec<f64> = lines
            .map(|l| l.parse().map_err(|_| Error::Parse(format!("bad coefficient {l}"))))
            .collect::<Result<_>>()?;
        if coeffs.len() != space.ndof {
            return Err(Error::Parse("coefficient count mismatch".into()));
        }
        Ok(Self { space, coeffs })
    }
}
