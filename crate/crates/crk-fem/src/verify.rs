//! Property suites over the operator constructions: biduality, moment
//! preservation, projection and right-inverse identities, the intersection
//! map, orthogonality of the polynomial families, the vertex-evaluation
//! identity and the local boundedness monitors. Shared by the CLI `verify`
//! command and the acceptance tests.

use crate::crspace::{CRFunction, CRSpace, Dof, PiecewisePoly, Side, JUMP_GATE_TOL};
use crate::mesh::{make_lshape_initial, refine_nvb, Submesh, Triangulation};
use crate::operators::{
    companion, interp_cr, subdivide, OperatorContext, RefinedPair,
};
use crate::polyquad::{
    integrate_edge, integrate_triangle, jacobi_eval, multi_indices, quad_triangle,
    triangle_weight, tri_ortho_eval, JacobiParams,
};
use crate::Result;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::sync::Arc;

/// One verified identity: its largest observed deviation and the tolerance.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_err: f64,
    pub tol: f64,
}

impl CheckResult {
    pub fn pass(&self) -> bool {
        self.max_err.is_finite() && self.max_err <= self.tol
    }
}

fn random_cr(space: &Arc<CRSpace>, rng: &mut ChaCha8Rng) -> CRFunction {
    let mut f = CRFunction::zero(space.clone());
    for c in f.coeffs.iter_mut() {
        *c = rng.gen_range(-1.0..1.0);
    }
    f
}

/// A random conforming member of S_{k,0}: interior-vertex psi combinations
/// plus (k >= 3) conforming edge and volume bubbles.
fn random_conforming(space: &Arc<CRSpace>, rng: &mut ChaCha8Rng) -> CRFunction {
    let mesh = &space.mesh;
    let k = space.k;
    let mut f = CRFunction::zero(space.clone());
    let full = Submesh::full(mesh.ntri());
    for z in 0..mesh.nvert() {
        if mesh.boundary_vertex[z] {
            continue;
        }
        let wz: f64 = rng.gen_range(-1.0..1.0);
        for e in mesh.edge_spider(&full, z) {
            if let Some(base) = space.edge_dof[e] {
                f.coeffs[base + k - 1] += 0.5 * wz;
            }
        }
    }
    if k >= 3 {
        for base in space.edge_dof.iter().flatten() {
            for j in 0..k - 1 {
                f.coeffs[base + j] = rng.gen_range(-1.0..1.0);
            }
        }
        for t in 0..mesh.ntri() {
            for ai in 0..space.table.nvol() {
                f.coeffs[space.vol_dof[t] + ai] = rng.gen_range(-1.0..1.0);
            }
        }
    }
    f
}

/// Full biduality matrix deviation on a mesh: the three blocks of the
/// proposition (edge-edge, edge-volume, volume-volume).
pub fn biduality_deviation(mesh: &Arc<Triangulation>, k: usize) -> Result<f64> {
    let space = CRSpace::new(mesh.clone(), k, false)?;
    let mut max_dev: f64 = 0.0;
    for e in 0..mesh.nedge() {
        for j in 0..k {
            let mut unit = CRFunction::zero(space.clone());
            unit.coeffs[space.dof_of(Dof::Edge { edge: e, j }).unwrap()] = 1.0;
            let poly = unit.to_piecewise();
            for e2 in 0..mesh.nedge() {
                for j2 in 0..k {
                    let want = if e == e2 && j == j2 { 1.0 } else { 0.0 };
                    let got = space.functional_edge(e2, j2, &poly, Side::Auto);
                    max_dev = max_dev.max((got - want).abs());
                }
            }
        }
    }
    for t in 0..mesh.ntri() {
        for ai in 0..space.table.nvol() {
            let mut unit = CRFunction::zero(space.clone());
            unit.coeffs[space.dof_of(Dof::Vol { tri: t, ai }).unwrap()] = 1.0;
            let poly = unit.to_piecewise();
            for e2 in 0..mesh.nedge() {
                for j2 in 0..k {
                    let got = space.functional_edge(e2, j2, &poly, Side::Auto);
                    max_dev = max_dev.max(got.abs());
                }
            }
            for t2 in 0..mesh.ntri() {
                for ai2 in 0..space.table.nvol() {
                    let want = if t == t2 && ai == ai2 { 1.0 } else { 0.0 };
                    let got = space.functional_volume(t2, ai2, &poly);
                    max_dev = max_dev.max((got - want).abs());
                }
            }
        }
    }
    Ok(max_dev)
}

/// The operator identity suite on the 6-triangle L-shape mesh and one
/// random NVB refinement of it.
pub fn operator_identity_suite(k: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse_mesh = Arc::new(make_lshape_initial());
    let n = coarse_mesh.ntri();
    let mut marked = Submesh::from_indices(n, (0..n).filter(|_| rng.gen_bool(0.5)));
    if marked.is_empty() {
        marked.insert(0);
    }
    let (fine_mesh, rel) = refine_nvb(&coarse_mesh, &marked);
    let fine_mesh = Arc::new(fine_mesh);
    let rel = Arc::new(rel);

    let mut out = Vec::new();
    out.push(CheckResult {
        name: format!("k={k} biduality matrix (coarse)"),
        max_err: biduality_deviation(&coarse_mesh, k)?,
        tol: 1e-11,
    });
    out.push(CheckResult {
        name: format!("k={k} biduality matrix (refined)"),
        max_err: biduality_deviation(&fine_mesh, k)?,
        tol: 1e-11,
    });

    // I projection on CR functions
    let space = CRSpace::new(coarse_mesh.clone(), k, false)?;
    let ctx = OperatorContext::new(space.clone());
    let f = random_cr(&space, &mut rng);
    let iu = interp_cr(&ctx, &f.to_piecewise())?;
    let proj_dev = f
        .coeffs
        .iter()
        .zip(&iu.coeffs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    out.push(CheckResult {
        name: format!("k={k} I projection on CR"),
        max_err: proj_dev,
        tol: 1e-11,
    });

    // moment preservation of I across the refinement pair
    let fine_space = CRSpace::new(fine_mesh.clone(), k, false)?;
    let fhat = random_cr(&fine_space, &mut rng);
    let u = fhat.to_piecewise();
    let pair_ctx = OperatorContext::new(space.clone())
        .with_refined_input(fine_mesh.clone(), rel.clone());
    let iu = interp_cr(&pair_ctx, &u)?.to_piecewise();
    let same = OperatorContext::new(space.clone());
    let mut edge_dev: f64 = 0.0;
    for e in 0..coarse_mesh.nedge() {
        for j in 0..k {
            let want = pair_ctx.edge_functional(e, j, &u);
            let got = same.edge_functional(e, j, &iu);
            edge_dev = edge_dev.max((got - want).abs());
        }
    }
    let mut vol_dev: f64 = 0.0;
    for t in 0..coarse_mesh.ntri() {
        for ai in 0..space.table.nvol() {
            let want = pair_ctx.vol_functional(t, ai, &u);
            let got = same.vol_functional(t, ai, &iu);
            vol_dev = vol_dev.max((got - want).abs());
        }
    }
    out.push(CheckResult {
        name: format!("k={k} I edge-moment preservation"),
        max_err: edge_dev,
        tol: 1e-11,
    });
    out.push(CheckResult {
        name: format!("k={k} I volume-moment preservation"),
        max_err: vol_dev,
        tol: 1e-11,
    });

    // J identity on S_{k,0} and I(J u) = u on CR_{k,0}
    let space0 = CRSpace::new(coarse_mesh.clone(), k, true)?;
    let ctx0 = OperatorContext::new(space0.clone());
    let v = random_conforming(&space0, &mut rng);
    let vp = v.to_piecewise();
    let jv = companion(&ctx0, &vp)?;
    let rule = quad_triangle(2 * k + 2);
    let mut j_dev: f64 = 0.0;
    for t in 0..coarse_mesh.ntri() {
        for lam in rule.points.iter() {
            j_dev = j_dev.max((jv.eval(t, *lam) - vp.eval(t, *lam)).abs());
        }
    }
    out.push(CheckResult {
        name: format!("k={k} J identity on S_(k,0)"),
        max_err: j_dev,
        tol: 1e-10,
    });

    let u0 = random_cr(&space0, &mut rng);
    let ju = companion(&ctx0, &u0.to_piecewise())?;
    let back = interp_cr(&ctx0, &ju)?;
    let ij_dev = u0
        .coeffs
        .iter()
        .zip(&back.coeffs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    out.push(CheckResult {
        name: format!("k={k} I(J u) = u on CR_(k,0)"),
        max_err: ij_dev,
        tol: 1e-10,
    });

    // P_hat: identity outside R^(1/2) and the two membership gates
    let fine_space0 = CRSpace::new(fine_mesh.clone(), k, true)?;
    let pair = RefinedPair::new(space0.clone(), fine_space0.clone(), rel.clone())?;
    let vhat = random_cr(&fine_space0, &mut rng);
    let p = pair.intersect_map(&vhat)?;
    let pp = p.to_piecewise();
    let pf = subdivide(&pp, fine_mesh.clone(), &rel);
    let half = coarse_mesh.layer_half(&rel.refined);
    let v = vhat.to_piecewise();
    let mut id_dev: f64 = 0.0;
    for (ft, &ct) in rel.parent_tri.iter().enumerate() {
        if half.contains(ct) {
            continue;
        }
        for lam in rule.points.iter() {
            id_dev = id_dev.max((pf.eval(ft, *lam) - v.eval(ft, *lam)).abs());
        }
    }
    out.push(CheckResult {
        name: format!("k={k} P_hat identity outside R^(1/2)"),
        max_err: id_dev,
        tol: 1e-10,
    });
    out.push(CheckResult {
        name: format!("k={k} P_hat coarse membership gate"),
        max_err: space0.max_jump_moment_rel(&pp).1,
        tol: JUMP_GATE_TOL,
    });
    out.push(CheckResult {
        name: format!("k={k} P_hat fine membership gate"),
        max_err: fine_space0.max_jump_moment_rel(&pf).1,
        tol: JUMP_GATE_TOL,
    });

    Ok(out)
}

/// Orthogonality suite: the nonconforming edge function against P_{k-2},
/// weighted pairwise orthogonality of the triangle polynomials, and the
/// unweighted Jacobi norms.
pub fn orthogonality_suite(k: usize) -> Result<Vec<CheckResult>> {
    let mesh = Arc::new(make_lshape_initial());
    let space = CRSpace::new(mesh.clone(), k, false)?;
    let mut out = Vec::new();

    if k >= 3 {
        let rule = quad_triangle(2 * k);
        let mut dev: f64 = 0.0;
        for (e, edge) in mesh.edges.iter().enumerate() {
            for t in [Some(edge.k_left), edge.k_right].into_iter().flatten() {
                let eloc = mesh.local_edge(t, e).unwrap();
                let coeffs =
                    space
                        .table
                        .coeffs(crate::crspace::BasisKind::EdgeNc { e: eloc });
                for a in 0..=(k - 2) {
                    for b in 0..=(k - 2 - a) {
                        let mut acc = 0.0;
                        for (lam, w) in rule.points.iter().zip(&rule.weights) {
                            let p = lam[1].powi(a as i32) * lam[2].powi(b as i32);
                            acc += w * p * crate::bernstein::eval(k, coeffs, *lam);
                        }
                        dev = dev.max((2.0 * mesh.area(t) * acc).abs());
                    }
                }
            }
        }
        out.push(CheckResult {
            name: format!("k={k} b_(E,k-1) orthogonal to P_(k-2)(K)"),
            max_err: dev,
            tol: 1e-12,
        });
    }

    let idxs = multi_indices(6);
    let mut dev: f64 = 0.0;
    for (i, &ai) in idxs.iter().enumerate() {
        for &aj in idxs.iter().skip(i + 1) {
            let d = 3 + ai.total_degree() + aj.total_degree();
            let val = integrate_triangle(d, |x, y| {
                triangle_weight(x, y) * tri_ortho_eval(ai, x, y) * tri_ortho_eval(aj, x, y)
            });
            dev = dev.max(val.abs());
        }
    }
    out.push(CheckResult {
        name: format!("k={k} weighted pairwise orthogonality |alpha|<=6"),
        max_err: dev,
        tol: 1e-12,
    });

    let mut dev: f64 = 0.0;
    for j in 0..=8usize {
        let p = JacobiParams { n: j, a: 1.0, b: 1.0 };
        let val = 2.0
            * integrate_edge(2 * j, |t| {
                let v = jacobi_eval(p, 2.0 * t - 1.0);
                v * v
            });
        let want = 4.0 * (j as f64 + 1.0) / (j as f64 + 2.0);
        dev = dev.max((val - want).abs());
    }
    out.push(CheckResult {
        name: format!("k={k} ||P_j^(1,1)||^2 = 4(j+1)/(j+2), j<=8"),
        max_err: dev,
        tol: 1e-12,
    });

    Ok(out)
}

/// Vertex-evaluation identity (g_K^z, p) = p(z) for random p in P_k(K),
/// relative error.
pub fn vertex_identity_suite(k: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = Arc::new(make_lshape_initial());
    let space = CRSpace::new(mesh.clone(), k, false)?;
    let mut dev: f64 = 0.0;
    for _ in 0..20 {
        let mut p = PiecewisePoly::zero(mesh.clone(), k);
        for b in p.blocks.iter_mut() {
            for c in b.iter_mut() {
                *c = rng.gen_range(-1.0..1.0);
            }
        }
        for t in 0..mesh.ntri() {
            for &z in &mesh.triangles[t].v {
                let vloc = mesh.local_vertex(t, z).unwrap();
                let mut lam = [0.0; 3];
                lam[vloc] = 1.0;
                let want = p.eval(t, lam);
                let got = space.vertex_dual_inner(t, z, &p, 2 * k);
                dev = dev.max((got - want).abs() / want.abs().max(1.0));
            }
        }
    }
    Ok(vec![CheckResult {
        name: format!("k={k} (g_K^z, p) = p(z), 20 random p"),
        max_err: dev,
        tol: 1e-10,
    }])
}

/// Local boundedness monitors for I (coarse interpolation of fine CR
/// functions) and M: the per-triangle ratios ||grad Op u||_K /
/// ||grad u||_(D_K), recorded over a sequence of random refinements.
pub fn boundedness_monitor(k: usize, seed: u64, rounds: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mesh = Arc::new(make_lshape_initial());
    let mut i_ratios = Vec::new();
    let mut m_ratios = Vec::new();
    for _ in 0..rounds {
        let n = mesh.ntri();
        let mut marked = Submesh::from_indices(n, (0..n).filter(|_| rng.gen_bool(0.4)));
        if marked.is_empty() {
            marked.insert(rng.gen_range(0..n));
        }
        let (fine_mesh, rel) = refine_nvb(&mesh, &marked);
        let fine_mesh = Arc::new(fine_mesh);
        let rel = Arc::new(rel);
        let coarse = CRSpace::new(mesh.clone(), k, true)?;
        let fine = CRSpace::new(fine_mesh.clone(), k, true)?;
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let uhat = random_cr(&fine, &mut rng2);
        let up = uhat.to_piecewise();
        // I: coarse interpolation of the fine function
        let ctx = OperatorContext::new(coarse.clone())
            .with_refined_input(fine_mesh.clone(), rel.clone());
        let iu = interp_cr(&ctx, &up)?.to_piecewise();
        let mut worst: f64 = 0.0;
        for t in 0..mesh.ntri() {
            let num = iu.h1_seminorm_on(std::iter::once(t));
            let den = up.h1_seminorm_on(rel.succ_tri[t].iter().copied());
            if den > 1e-12 {
                worst = worst.max(num / den);
            }
        }
        i_ratios.push(worst);
        // M on the fine mesh with S = R_hat
        let fctx = OperatorContext::with_sub(fine.clone(), rel.refined_fine.clone());
        let m = crate::operators::partially_conforming(&fctx, &up)?.to_piecewise();
        let half = fine_mesh.layer_half(&rel.refined_fine);
        let mut worst: f64 = 0.0;
        for t in 0..fine_mesh.ntri() {
            let num = m.h1_seminorm_on(std::iter::once(t));
            let den = if half.contains(t) {
                up.h1_seminorm_on(fine_mesh.patch_tri(t).iter())
            } else {
                up.h1_seminorm_on(std::iter::once(t))
            };
            if den > 1e-12 {
                worst = worst.max(num / den);
            }
        }
        m_ratios.push(worst);
        mesh = fine_mesh;
    }
    Ok(vec![
        (format!("k={k} I local H1 boundedness ratio"), i_ratios),
        (format!("k={k} M local H1 boundedness ratio"), m_ratios),
    ])
}

/// Outcome of the full verification run.
pub struct VerifyOutcome {
    pub checks: Vec<CheckResult>,
    pub monitors: Vec<(String, Vec<f64>)>,
}

impl VerifyOutcome {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(CheckResult::pass)
            && self
                .monitors
                .iter()
                .all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }

    pub fn first_failure(&self) -> Option<&CheckResult> {
        self.checks.iter().find(|c| !c.pass())
    }

    /// Fixed-width pass/fail table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<58} {:>12} {:>9} {:>6}", "identity", "max_err", "tol", "ok").unwrap();
        for c in &self.checks {
            writeln!(
                s,
                "{:<58} {:>12.3e} {:>9.1e} {:>6}",
                c.name,
                c.max_err,
                c.tol,
                if c.pass() { "PASS" } else { "FAIL" }
            )
            .unwrap();
        }
        for (name, vals) in &self.monitors {
            let list = vals
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(s, "{name:<58} [{list}]").unwrap();
        }
        s
    }
}

/// Run every suite for the requested degrees.
pub fn run_verify(ks: &[usize], seed: u64) -> Result<VerifyOutcome> {
    let mut checks = Vec::new();
    let mut monitors = Vec::new();
    for &k in ks {
        checks.extend(orthogonality_suite(k)?);
        checks.extend(vertex_identity_suite(k, seed)?);
        checks.extend(operator_identity_suite(k, seed)?);
        monitors.extend(boundedness_monitor(k, seed, 3)?);
    }
    Ok(VerifyOutcome { checks, monitors })
}
