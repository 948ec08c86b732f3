//! Quasi-interpolation operator constructions: the edge/volume building
//! blocks Pi, the interpolation I_k, the vertex functions psi and their
//! averaged functionals, the partially conforming operator M, the conforming
//! companion J (degree k+1) and the coarse-fine intersection map P_hat.
//!
//! All operators are finite sums of functionals times basis functions. The
//! functionals of coarse entities applied to functions living on a refined
//! mesh are integrated exactly as sums over fine sub-triangles and sub-edges
//! via the successor maps of the refinement relation.

use crate::bernstein;
use crate::crspace::{BasisKind, CRFunction, CRSpace, EdgeDual, PiecewisePoly, JUMP_GATE_TOL};
use crate::mesh::{RefinementRelation, Submesh, Triangulation};
use crate::polyquad::{integrate_edge, jacobi_eval, quad_edge, quad_triangle, JacobiParams};
use crate::{Error, Result};
use std::sync::Arc;

/// Where the operator inputs live relative to the operator's own mesh.
#[derive(Clone)]
pub enum InputMesh {
    /// Inputs are broken polynomials over the operator's mesh.
    Same,
    /// Inputs live on an admissible refinement of the operator's mesh.
    Refined {
        fine: Arc<Triangulation>,
        relation: Arc<RefinementRelation>,
    },
}

/// Mesh, degree, optional sub-mesh S and boundary variant for one operator
/// application. The boundary variant (restriction of edge sums to interior
/// edges) is the `homogeneous` flag of the space.
#[derive(Clone)]
pub struct OperatorContext {
    pub space: Arc<CRSpace>,
    pub sub: Option<Submesh>,
    pub input: InputMesh,
}

impl OperatorContext {
    pub fn new(space: Arc<CRSpace>) -> Self {
        Self {
            space,
            sub: None,
            input: InputMesh::Same,
        }
    }

    pub fn with_sub(space: Arc<CRSpace>, sub: Submesh) -> Self {
        assert_eq!(sub.len(), space.mesh.ntri());
        Self {
            space,
            sub: Some(sub),
            input: InputMesh::Same,
        }
    }

    pub fn with_refined_input(
        mut self,
        fine: Arc<Triangulation>,
        relation: Arc<RefinementRelation>,
    ) -> Self {
        self.input = InputMesh::Refined { fine, relation };
        self
    }

    fn k(&self) -> usize {
        self.space.k
    }

    fn mesh(&self) -> &Triangulation {
        &self.space.mesh
    }

    fn sub_or_full(&self) -> Submesh {
        self.sub
            .clone()
            .unwrap_or_else(|| Submesh::full(self.mesh().ntri()))
    }

    fn check_input(&self, u: &PiecewisePoly) {
        match &self.input {
            InputMesh::Same => assert!(Arc::ptr_eq(&u.mesh, &self.space.mesh)),
            InputMesh::Refined { fine, .. } => assert!(Arc::ptr_eq(&u.mesh, fine)),
        }
    }

    /// F_{E,j}(u) for a coarse edge, integrating over fine sub-edges when
    /// the input lives on a refinement. The trace is taken from K_L.
    pub fn edge_functional(&self, e: usize, j: usize, u: &PiecewisePoly) -> f64 {
        self.check_input(u);
        match &self.input {
            InputMesh::Same => self
                .space
                .functional_edge(e, j, u, crate::crspace::Side::Auto),
            InputMesh::Refined { fine, relation } => {
                let mesh = self.mesh();
                let dual = EdgeDual::new_unit(self.k(), j);
                let rule = quad_edge((self.k() - 1) + u.degree + self.space.quad_bump);
                let z0 = mesh.vertices[mesh.edges[e].z[0]];
                let tang = mesh.edge_tangent(e);
                let h_e = mesh.h_edge(e);
                let coarse_left = mesh.edges[e].k_left;
                let mut acc = 0.0;
                for &fe in &relation.succ_edge[e] {
                    let fedge = &fine.edges[fe];
                    let ftri = [Some(fedge.k_left), fedge.k_right]
                        .into_iter()
                        .flatten()
                        .find(|&t| relation.parent_tri[t] == coarse_left)
                        .expect("one side of a sub-edge lies in the coarse K_L");
                    let scale = fine.h_edge(fe) / h_e;
                    for (p, w) in rule.points.iter().zip(&rule.weights) {
                        let x = fine.edge_point(fe, p[1]);
                        let tg = ((x[0] - z0[0]) * tang[0] + (x[1] - z0[1]) * tang[1]) / h_e;
                        acc += w * scale * dual.eval_unit(tg) * u.eval_at(ftri, x);
                    }
                }
                acc
            }
        }
    }

    /// F_{K,alpha}(u) for a coarse triangle.
    pub fn vol_functional(&self, t: usize, ai: usize, u: &PiecewisePoly) -> f64 {
        self.check_input(u);
        match &self.input {
            InputMesh::Same => self.space.functional_volume(t, ai, u),
            InputMesh::Refined { fine, relation } => {
                let dual = self.space.dual_volume(t, ai).expect("valid index");
                let deg = self.k().saturating_sub(3) + u.degree + self.space.quad_bump;
                let rule = quad_triangle(deg);
                let mut acc = 0.0;
                for &ft in &relation.succ_tri[t] {
                    let coords = fine.tri_coords(ft);
                    let mut local = 0.0;
                    for (lam, w) in rule.points.iter().zip(&rule.weights) {
                        let x = [
                            lam[0] * coords[0][0] + lam[1] * coords[1][0] + lam[2] * coords[2][0],
                            lam[0] * coords[0][1] + lam[1] * coords[1][1] + lam[2] * coords[2][1],
                        ];
                        let clam = self.mesh().barycentric(t, x);
                        local += w * dual.eval(clam) * u.eval(ft, *lam);
                    }
                    acc += 2.0 * fine.area(ft) * local;
                }
                acc
            }
        }
    }

    /// F_{S,z}(u): average of (g_K^z, u) over the triangles of S at z.
    pub fn vertex_functional(&self, s: &Submesh, z: usize, u: &PiecewisePoly) -> Result<f64> {
        self.check_input(u);
        let mesh = self.mesh();
        let tris: Vec<usize> = mesh.vertex_tris[z]
            .iter()
            .copied()
            .filter(|&t| s.contains(t))
            .collect();
        if tris.is_empty() {
            return Err(Error::NotInMesh(format!("vertex {z} not in V(S)")));
        }
        let deg = self.k() + u.degree + self.space.quad_bump;
        let mut acc = 0.0;
        for &t in &tris {
            acc += match &self.input {
                InputMesh::Same => self.space.vertex_dual_inner(t, z, u, deg),
                InputMesh::Refined { fine, relation } => {
                    let vloc = mesh.local_vertex(t, z).unwrap();
                    let g = self.space.table.g_vertex_coeffs(vloc);
                    let scale = -binom2(self.k() + 2) / mesh.area(t);
                    let rule = quad_triangle(deg);
                    let mut inner = 0.0;
                    for &ft in &relation.succ_tri[t] {
                        let coords = fine.tri_coords(ft);
                        let mut local = 0.0;
                        for (lam, w) in rule.points.iter().zip(&rule.weights) {
                            let x = [
                                lam[0] * coords[0][0]
                                    + lam[1] * coords[1][0]
                                    + lam[2] * coords[2][0],
                                lam[0] * coords[0][1]
                                    + lam[1] * coords[1][1]
                                    + lam[2] * coords[2][1],
                            ];
                            let clam = mesh.barycentric(t, x);
                            local += w * bernstein::eval(self.k(), g, clam) * u.eval(ft, *lam);
                        }
                        inner += 2.0 * fine.area(ft) * local;
                    }
                    scale * inner
                }
            };
        }
        Ok(acc / tris.len() as f64)
    }

    /// Membership gate for the broken CR space over *this* context's mesh:
    /// the P_{k-1} moments of the jumps across (coarse) interior edges must
    /// vanish relative to ||u||; for the boundary variant the boundary trace
    /// moments are gated as well.
    pub fn gate(&self, u: &PiecewisePoly) -> Result<()> {
        self.check_input(u);
        if let InputMesh::Same = self.input {
            return self.space.jump_gate(u);
        }
        let InputMesh::Refined { fine, relation } = &self.input else {
            unreachable!()
        };
        let norm = u.norm_l2();
        let mesh = self.mesh();
        let k = self.k();
        let rule = quad_edge((k - 1) + u.degree + self.space.quad_bump);
        for (e, edge) in mesh.edges.iter().enumerate() {
            let boundary = edge.is_boundary();
            if boundary && !self.space.homogeneous {
                continue;
            }
            let he = mesh.h_edge(e);
            let z0 = mesh.vertices[edge.z[0]];
            let tang = mesh.edge_tangent(e);
            for j in 0..k {
                let p = JacobiParams { n: j, a: 0.0, b: 0.0 };
                let mut m = 0.0;
                for &fe in &relation.succ_edge[e] {
                    let fedge = &fine.edges[fe];
                    let scale = fine.h_edge(fe) / he;
                    let left = [Some(fedge.k_left), fedge.k_right]
                        .into_iter()
                        .flatten()
                        .find(|&t| relation.parent_tri[t] == edge.k_left);
                    let right = edge.k_right.and_then(|kr| {
                        [Some(fedge.k_left), fedge.k_right]
                            .into_iter()
                            .flatten()
                            .find(|&t| relation.parent_tri[t] == kr)
                    });
                    for (pt, w) in rule.points.iter().zip(&rule.weights) {
                        let x = fine.edge_point(fe, pt[1]);
                        let tg = ((x[0] - z0[0]) * tang[0] + (x[1] - z0[1]) * tang[1]) / he;
                        let ul = left.map(|t| u.eval_at(t, x)).unwrap_or(0.0);
                        let jump = match right {
                            Some(t) => ul - u.eval_at(t, x),
                            None => ul,
                        };
                        m += w * scale * jacobi_eval(p, 1.0 - 2.0 * tg) * jump;
                    }
                }
                let scaled = m.abs() * ((2.0 * j as f64 + 1.0) * he).sqrt();
                if scaled > JUMP_GATE_TOL * norm.max(f64::MIN_POSITIVE) {
                    return Err(Error::JumpGate {
                        edge: e,
                        moment: scaled,
                        gate: JUMP_GATE_TOL * norm,
                    });
                }
            }
        }
        Ok(())
    }

    /// Interior edges of the sub-mesh S (all edges when not homogeneous).
    fn op_edges(&self, s: &Submesh) -> Vec<usize> {
        self.mesh()
            .submesh_edges(s)
            .into_iter()
            .filter(|&e| !self.space.homogeneous || !self.mesh().edges[e].is_boundary())
            .collect()
    }

    /// Interior vertices of the sub-mesh S.
    fn interior_vertices(&self, s: &Submesh) -> Vec<usize> {
        self.mesh()
            .submesh_vertices(s)
            .into_iter()
            .filter(|&z| !self.mesh().boundary_vertex[z])
            .collect()
    }
}

fn binom2(n: usize) -> f64 {
    (n * (n - 1) / 2) as f64
}

/// Accumulate coefficient * basis function into a broken polynomial of the
/// requested degree (>= k).
fn accumulate_basis(
    space: &CRSpace,
    terms: &[(usize, BasisKind, f64)], // (triangle, kind, coefficient)
    degree: usize,
) -> PiecewisePoly {
    let mut out = PiecewisePoly::zero(space.mesh.clone(), degree);
    for &(t, kind, c) in terms {
        if c == 0.0 {
            continue;
        }
        let base = space.table.coeffs(kind);
        let raised;
        let coeffs: &[f64] = if degree == space.k {
            base
        } else {
            raised = bernstein::raise_to(space.k, base, degree);
            &raised
        };
        for (b, &bc) in out.blocks[t].iter_mut().zip(coeffs) {
            *b += c * bc;
        }
    }
    out
}

/// Terms of b_{E,k-1} as (triangle, kind) pairs.
fn nc_terms(mesh: &Triangulation, e: usize) -> Vec<(usize, BasisKind)> {
    let mut out = Vec::with_capacity(2);
    let edge = &mesh.edges[e];
    for t in [Some(edge.k_left), edge.k_right].into_iter().flatten() {
        let eloc = mesh.local_edge(t, e).unwrap();
        out.push((t, BasisKind::EdgeNc { e: eloc }));
    }
    out
}

fn conf_terms(mesh: &Triangulation, e: usize, j: usize) -> Vec<(usize, BasisKind)> {
    let mut out = Vec::with_capacity(2);
    let edge = &mesh.edges[e];
    for t in [Some(edge.k_left), edge.k_right].into_iter().flatten() {
        let eloc = mesh.local_edge(t, e).unwrap();
        let (a, _) = mesh.triangles[t].edge_vertices(eloc);
        let flip = edge.z[0] != a;
        out.push((t, BasisKind::EdgeConf { e: eloc, flip, j }));
    }
    out
}

/// Pi_k^{E(S),nc} u = sum_E F_{E,k-1}(u) b_{E,k-1}.
pub fn pi_edge_nc(ctx: &OperatorContext, u: &PiecewisePoly) -> Result<PiecewisePoly> {
    ctx.gate(u)?;
    Ok(pi_edge_nc_ungated(ctx, u))
}

fn pi_edge_nc_ungated(ctx: &OperatorContext, u: &PiecewisePoly) -> PiecewisePoly {
    let s = ctx.sub_or_full();
    let k = ctx.k();
    let mut terms = Vec::new();
    for e in ctx.op_edges(&s) {
        let c = ctx.edge_functional(e, k - 1, u);
        for (t, kind) in nc_terms(ctx.mesh(), e) {
            terms.push((t, kind, c));
        }
    }
    accumulate_basis(&ctx.space, &terms, k)
}

/// Pi_k^{E(S),c} u = sum_E sum_{j<=k-2} F_{E,j}(u) b_{E,j}.
pub fn pi_edge_c(ctx: &OperatorContext, u: &PiecewisePoly) -> Result<PiecewisePoly> {
    ctx.gate(u)?;
    Ok(pi_edge_c_ungated(ctx, u))
}

fn pi_edge_c_ungated(ctx: &OperatorContext, u: &PiecewisePoly) -> PiecewisePoly {
    let s = ctx.sub_or_full();
    let k = ctx.k();
    let mut terms = Vec::new();
    for e in ctx.op_edges(&s) {
        for j in 0..k.saturating_sub(1) {
            let c = ctx.edge_functional(e, j, u);
            for (t, kind) in conf_terms(ctx.mesh(), e, j) {
                terms.push((t, kind, c));
            }
        }
    }
    accumulate_basis(&ctx.space, &terms, k)
}

/// Pi_k^{E(S)} = nc + c parts.
pub fn pi_edge(ctx: &OperatorContext, u: &PiecewisePoly) -> Result<PiecewisePoly> {
    ctx.gate(u)?;
    let mut out = pi_edge_nc_ungated(ctx, u);
    out.add_scaled(&pi_edge_c_ungated(ctx, u), 1.0);
    Ok(out)
}

/// Pi_{k,0}^S u = sum_{K in S} sum_alpha F_{K,alpha}(u) b_{K,alpha}.
pub fn pi_vol(ctx: &OperatorContext, u: &PiecewisePoly) -> Result<PiecewisePoly> {
    ctx.gate(u)?;
    Ok(pi_vol_ungated(ctx, u))
}

fn pi_vol_ungated(ctx: &OperatorContext, u: &PiecewisePoly) -> PiecewisePoly {
    let s = ctx.sub_or_full();
    let mut terms = Vec::new();
    for t in s.iter() {
        for ai in 0..ctx.space.table.nvol() {
            let c = ctx.vol_functional(t, ai, u);
            terms.push((t, BasisKind::Vol { ai }, c));
        }
    }
    accumulate_basis(&ctx.space, &terms, ctx.k())
}

/// The vertex-kernel operator Pi-bullet: conforming edge part over interior
/// edges plus the volume part applied to the residual.
pub fn pi_bullet(ctx: &OperatorContext, u: &PiecewisePoly) -> Result<PiecewisePoly> {
    ctx.gate(u)?;
    Ok(pi_bullet_ungated(ctx, u))
}

fn pi_bullet_ungated(ctx: &OperatorContext, u: &PiecewisePoly) -> PiecewisePoly {
    let mesh = ctx.mesh();
    let k = ctx.k();
    // conforming edge part over all interior edges, regardless of ctx.sub
    let mut terms = Vec::new();
    for (e, edge) in mesh.edges.iter().enumerate() {
        if edge.is_boundary() {
            continue;
        }
        for j in 0..k.saturating_sub(1) {
            let c = ctx.edge_functional(e, j, u);
            for (t, kind) in conf_terms(mesh, e, j) {
                terms.push((t, kind, c));
            }
        }
    }
    let edge_part = accumulate_basis(&ctx.space, &terms, k);
    // volume part of the residual: F_{K,a}(u) - F_{K,a}(edge_part)
    let same_ctx = OperatorContext::new(ctx.space.clone());
    let mut vterms = Vec::new();
    for t in 0..mesh.ntri() {
        for ai in 0..ctx.space.table.nvol() {
            let c = ctx.vol_functional(t, ai, u) - same_ctx.vol_functional(t, ai, &edge_part);
            vterms.push((t, BasisKind::Vol { ai }, c));
        }
    }
    let mut out = edge_part;
    out.add_scaled(&accumulate_basis(&ctx.space, &vterms, k), 1.0);
    out
}

/// The quasi-interpolation I_k^{S,CR} u as a coefficient vector of the
/// context's space: edge moments plus volume moments of the residual.
pub fn interp_cr(ctx: &OperatorContext, u: &PiecewisePoly) -> Result<CRFunction> {
    ctx.gate(u)?;
    Ok(interp_cr_ungated(ctx, u))
}

pub(crate) fn interp_cr_ungated(ctx: &OperatorContext, u: &PiecewisePoly) -> CRFunction {
    let space = &ctx.space;
    let s = ctx.sub_or_full();
    let mut coeffs = vec![0.0; space.ndof];
    for e in ctx.op_edges(&s) {
        let Some(base) = space.edge_dof[e] else { continue };
        for j in 0..space.k {
            coeffs[base + j] = ctx.edge_functional(e, j, u);
        }
    }
    let edge_part = space.to_piecewise(&CRFunction {
        space: space.clone(),
        coeffs: coeffs.clone(),
    });
    let same_ctx = OperatorContext::new(space.clone());
    for t in s.iter() {
        for ai in 0..space.table.nvol() {
            let c = ctx.vol_functional(t, ai, u) - same_ctx.vol_functional(t, ai, &edge_part);
            coeffs[space.vol_dof[t] + ai] = c;
        }
    }
    CRFunction {
        space: space.clone(),
        coeffs,
    }
}

/// psi_{S,k}^z = (1/2) sum_{E in E_z(S)} b_{E,k-1} as a broken polynomial.
pub fn psi_vertex(ctx: &OperatorContext, z: usize) -> Result<PiecewisePoly> {
    let s = ctx.sub_or_full();
    let mesh = ctx.mesh();
    if !mesh.submesh_vertices(&s).contains(&z) {
        return Err(Error::NotInMesh(format!("vertex {z} not in V(S)")));
    }
    let mut terms = Vec::new();
    for e in mesh.edge_spider(&s, z) {
        for (t, kind) in nc_terms(mesh, e) {
            terms.push((t, kind, 0.5));
        }
    }
    Ok(accumulate_basis(&ctx.space, &terms, ctx.k()))
}

/// Coefficient contributions of Pi_{k,0}^{V(S)} u on the nonconforming edge
/// dofs: each psi is half the sum of its spider's b_{E,k-1}.
fn pi_vertex_coeffs(ctx: &OperatorContext, u: &PiecewisePoly) -> Result<Vec<(usize, f64)>> {
    let s = ctx.sub_or_full();
    let mesh = ctx.mesh();
    let mut acc: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
    for z in ctx.interior_vertices(&s) {
        let fz = ctx.vertex_functional(&s, z, u)?;
        for e in mesh.edge_spider(&s, z) {
            *acc.entry(e).or_insert(0.0) += 0.5 * fz;
        }
    }
    let mut out: Vec<(usize, f64)> = acc.into_iter().collect();
    out.sort_by_key(|&(e, _)| e);
    Ok(out)
}

/// Pi_{k,0}^{V(S)} u as a broken polynomial.
pub fn pi_vertex(ctx: &OperatorContext, u: &PiecewisePoly) -> Result<PiecewisePoly> {
    ctx.gate(u)?;
    pi_vertex_ungated(ctx, u)
}

fn pi_vertex_ungated(ctx: &OperatorContext, u: &PiecewisePoly) -> Result<PiecewisePoly> {
    let mut terms = Vec::new();
    for (e, c) in pi_vertex_coeffs(ctx, u)? {
        for (t, kind) in nc_terms(ctx.mesh(), e) {
            terms.push((t, kind, c));
        }
    }
    Ok(accumulate_basis(&ctx.space, &terms, ctx.k()))
}

/// The partially conforming operator M_{k,0}^S in the collapsed form
/// Pi^{V(S)} + Pi^{E(T \ S^(1/2)),nc} + Pi-bullet, returned as a coefficient
/// vector of CR_{k,0}.
pub fn partially_conforming(ctx: &OperatorContext, u: &PiecewisePoly) -> Result<CRFunction> {
    ctx.gate(u)?;
    partially_conforming_ungated(ctx, u)
}

fn partially_conforming_ungated(ctx: &OperatorContext, u: &PiecewisePoly) -> Result<CRFunction> {
    let space = &ctx.space;
    assert!(space.homogeneous, "M_{{k,0}} maps into CR_{{k,0}}");
    let mesh = ctx.mesh();
    let k = space.k;
    let s = ctx.sub_or_full();
    let mut coeffs = vec![0.0; space.ndof];

    // vertex part: nc coefficients of the psi combinations
    for (e, c) in pi_vertex_coeffs(ctx, u)? {
        if let Some(base) = space.edge_dof[e] {
            coeffs[base + k - 1] += c;
        }
    }
    // nonconforming part over the interior edges of T \ S^(1/2)
    let far = mesh.layer_half(&s).complement();
    let far_ctx = OperatorContext {
        space: space.clone(),
        sub: Some(far.clone()),
        input: ctx.input.clone(),
    };
    for e in far_ctx.op_edges(&far) {
        if let Some(base) = space.edge_dof[e] {
            coeffs[base + k - 1] += ctx.edge_functional(e, k - 1, u);
        }
    }
    // Pi-bullet part: conforming edge moments plus volume moments of the
    // residual against the conforming edge image
    for (e, edge) in mesh.edges.iter().enumerate() {
        if edge.is_boundary() {
            continue;
        }
        let Some(base) = space.edge_dof[e] else { continue };
        for j in 0..k.saturating_sub(1) {
            coeffs[base + j] = ctx.edge_functional(e, j, u);
        }
    }
    let conf_part = {
        let mut c = vec![0.0; space.ndof];
        for (e, edge) in mesh.edges.iter().enumerate() {
            if edge.is_boundary() {
                continue;
            }
            if let Some(base) = space.edge_dof[e] {
                for j in 0..k.saturating_sub(1) {
                    c[base + j] = coeffs[base + j];
                }
            }
        }
        space.to_piecewise(&CRFunction {
            space: space.clone(),
            coeffs: c,
        })
    };
    let same_ctx = OperatorContext::new(space.clone());
    for t in 0..mesh.ntri() {
        for ai in 0..space.table.nvol() {
            coeffs[space.vol_dof[t] + ai] =
                ctx.vol_functional(t, ai, u) - same_ctx.vol_functional(t, ai, &conf_part);
        }
    }
    Ok(CRFunction {
        space: space.clone(),
        coeffs,
    })
}

/// The nested (uncollapsed) form of M, used as a cross-check: successive
/// applications to residuals, assembled as broken polynomials.
pub fn partially_conforming_nested(
    ctx: &OperatorContext,
    u: &PiecewisePoly,
) -> Result<PiecewisePoly> {
    ctx.gate(u)?;
    let s = ctx.sub_or_full();
    let v = pi_vertex_ungated(ctx, u)?;
    // residual u - Pi^V u on the input mesh
    let mut resid = u.clone();
    let v_in = subdivide_to_input(ctx, &v);
    resid.add_scaled(&v_in, -1.0);
    let far = ctx.mesh().layer_half(&s).complement();
    let far_ctx = OperatorContext {
        space: ctx.space.clone(),
        sub: Some(far),
        input: ctx.input.clone(),
    };
    let nc = pi_edge_nc_ungated(&far_ctx, &resid);
    let mut resid2 = resid;
    resid2.add_scaled(&subdivide_to_input(ctx, &nc), -1.0);
    let bullet = pi_bullet_ungated(ctx, &resid2);
    let mut out = v;
    out.add_scaled(&nc, 1.0);
    out.add_scaled(&bullet, 1.0);
    Ok(out)
}

/// Represent a coarse broken polynomial on the input mesh of the context
/// (exact subdivision when the input mesh is a refinement).
fn subdivide_to_input(ctx: &OperatorContext, p: &PiecewisePoly) -> PiecewisePoly {
    match &ctx.input {
        InputMesh::Same => p.clone(),
        InputMesh::Refined { fine, relation } => subdivide(p, fine.clone(), relation),
    }
}

/// Exact representation of a coarse broken polynomial on a refined mesh.
pub fn subdivide(
    p: &PiecewisePoly,
    fine: Arc<Triangulation>,
    relation: &RefinementRelation,
) -> PiecewisePoly {
    let mut blocks = Vec::with_capacity(fine.ntri());
    for f in 0..fine.ntri() {
        let c = relation.parent_tri[f];
        let coords = fine.tri_coords(f);
        blocks.push(bernstein::interpolate_fn(p.degree, |lam| {
            let x = [
                lam[0] * coords[0][0] + lam[1] * coords[1][0] + lam[2] * coords[2][0],
                lam[0] * coords[0][1] + lam[1] * coords[1][1] + lam[2] * coords[2][1],
            ];
            p.eval(c, p.mesh.barycentric(c, x))
        }));
    }
    PiecewisePoly {
        mesh: fine,
        degree: p.degree,
        blocks,
    }
}

/// The universal scaling of Phi_E: gamma = 1 / F_{E,k-1}(W_E P_{k-1}(..)),
/// which is independent of the edge geometry.
pub fn phi_gamma(k: usize) -> f64 {
    let dual = EdgeDual::new_unit(k, k - 1);
    let p = JacobiParams {
        n: k - 1,
        a: 1.0,
        b: 1.0,
    };
    let f = integrate_edge(2 * k + 2, |t| {
        dual.eval_unit(t) * t * (1.0 - t) * jacobi_eval(p, 1.0 - 2.0 * t)
    });
    assert!(f > 0.0, "1/gamma_E must be positive, got {f}");
    1.0 / f
}

/// Terms of Phi_E (degree k+1 content) as (triangle, edge-local, flip).
fn phi_terms(mesh: &Triangulation, e: usize, k: usize) -> Vec<(usize, usize, bool)> {
    conf_terms(mesh, e, k - 1)
        .into_iter()
        .map(|(t, kind)| match kind {
            BasisKind::EdgeConf { e, flip, .. } => (t, e, flip),
            _ => unreachable!(),
        })
        .collect()
}

/// Bernstein coefficients (degree k+1) of the edge function
/// l_a l_b P_{k-1}^(1,1)(2 l_z0 - 1) underlying Phi_E.
fn phi_block(k: usize, e: usize, flip: bool) -> Vec<f64> {
    let a = (e + 1) % 3;
    let b = (e + 2) % 3;
    let z0 = if flip { b } else { a };
    bernstein::interpolate_fn(k + 1, |lam| {
        lam[a]
            * lam[b]
            * jacobi_eval(
                JacobiParams {
                    n: k - 1,
                    a: 1.0,
                    b: 1.0,
                },
                2.0 * lam[z0] - 1.0,
            )
    })
}

/// Pi^Phi u = sum_{E interior} F_{E,k-1}(u) Phi_E, a broken polynomial of
/// degree k+1 (globally continuous with zero vertex values).
pub fn pi_phi(ctx: &OperatorContext, u: &PiecewisePoly) -> Result<PiecewisePoly> {
    ctx.gate(u)?;
    Ok(pi_phi_ungated(ctx, u))
}

fn pi_phi_ungated(ctx: &OperatorContext, u: &PiecewisePoly) -> PiecewisePoly {
    let mesh = ctx.mesh();
    let k = ctx.k();
    let gamma = phi_gamma(k);
    let mut out = PiecewisePoly::zero(ctx.space.mesh.clone(), k + 1);
    for (e, edge) in mesh.edges.iter().enumerate() {
        if edge.is_boundary() {
            continue;
        }
        let c = gamma * ctx.edge_functional(e, k - 1, u);
        if c == 0.0 {
            continue;
        }
        for (t, eloc, flip) in phi_terms(mesh, e, k) {
            let block = phi_block(k, eloc, flip);
            for (o, &bc) in out.blocks[t].iter_mut().zip(&block) {
                *o += c * bc;
            }
        }
    }
    out
}

/// The conforming companion J_{k,0}: a globally continuous degree-(k+1)
/// polynomial with zero boundary trace that preserves all CR moments.
/// Inputs live on the context's own mesh.
pub fn companion(ctx: &OperatorContext, u: &PiecewisePoly) -> Result<PiecewisePoly> {
    assert!(
        matches!(ctx.input, InputMesh::Same),
        "companion takes same-mesh inputs"
    );
    assert!(ctx.space.homogeneous, "companion maps into S_{{k+1,0}}");
    ctx.gate(u)?;
    let k = ctx.k();
    let full = OperatorContext::new(ctx.space.clone());
    let vpart = pi_vertex_ungated(&full, u)?;
    let mut w = u.clone();
    let v_same = if vpart.degree == u.degree {
        vpart.clone()
    } else {
        vpart.raise_degree(u.degree)
    };
    w.add_scaled(&v_same, -1.0);
    let phi = pi_phi_ungated(&full, &w);
    // residual u - Pi^Phi w at degree k+1
    let mut resid = u.raise_degree(k + 1);
    resid.add_scaled(&phi, -1.0);
    let bullet = pi_bullet_ungated(&full, &resid);
    let mut out = vpart.raise_degree(k + 1);
    out.add_scaled(&phi, 1.0);
    out.add_scaled(&bullet.raise_degree(k + 1), 1.0);
    Ok(out)
}

/// A coarse space, a fine space over an admissible refinement, and the
/// relation connecting them.
pub struct RefinedPair {
    pub coarse: Arc<CRSpace>,
    pub fine: Arc<CRSpace>,
    pub relation: Arc<RefinementRelation>,
}

impl RefinedPair {
    pub fn new(
        coarse: Arc<CRSpace>,
        fine: Arc<CRSpace>,
        relation: Arc<RefinementRelation>,
    ) -> Result<Self> {
        if coarse.k != fine.k || coarse.homogeneous != fine.homogeneous {
            return Err(Error::IncompatiblePair(
                "coarse and fine spaces must share degree and boundary variant".into(),
            ));
        }
        if relation.parent_tri.len() != fine.mesh.ntri()
            || relation.succ_tri.len() != coarse.mesh.ntri()
        {
            return Err(Error::IncompatiblePair(
                "relation does not match the meshes".into(),
            ));
        }
        Ok(Self {
            coarse,
            fine,
            relation,
        })
    }

    /// Context for coarse operators applied to fine inputs.
    pub fn coarse_ctx(&self, sub: Option<Submesh>) -> OperatorContext {
        OperatorContext {
            space: self.coarse.clone(),
            sub,
            input: InputMesh::Refined {
                fine: self.fine.mesh.clone(),
                relation: self.relation.clone(),
            },
        }
    }

    /// u_hat^* = I_{k,0}^{fine}(J_{k,0} u): a fine CR function with
    /// I^{coarse} u_hat^* = u.
    pub fn fine_right_inverse(&self, u: &CRFunction) -> Result<CRFunction> {
        let coarse_ctx = OperatorContext::new(self.coarse.clone());
        let j = companion(&coarse_ctx, &u.to_piecewise())?;
        let j_fine = subdivide(&j, self.fine.mesh.clone(), &self.relation);
        let fine_ctx = OperatorContext::new(self.fine.clone());
        Ok(interp_cr_ungated(&fine_ctx, &j_fine))
    }

    /// P_hat = M^R_coarse after M^{R_hat}_fine: maps fine CR functions into
    /// the intersection CR_{k,0}(coarse) with CR_{k,0}(fine).
    pub fn intersect_map(&self, v_hat: &CRFunction) -> Result<CRFunction> {
        let fine_ctx = OperatorContext {
            space: self.fine.clone(),
            sub: Some(self.relation.refined_fine.clone()),
            input: InputMesh::Same,
        };
        let m_fine = partially_conforming(&fine_ctx, &v_hat.to_piecewise())?;
        let coarse_ctx = OperatorContext {
            space: self.coarse.clone(),
            sub: Some(self.relation.refined.clone()),
            input: InputMesh::Refined {
                fine: self.fine.mesh.clone(),
                relation: self.relation.clone(),
            },
        };
        partially_conforming(&coarse_ctx, &m_fine.to_piecewise())
    }
}
