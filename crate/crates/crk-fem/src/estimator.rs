//! The residual error estimator: per-triangle conformity part mu (volume
//! residual and normal jumps), nonconformity part nu (tangential jumps,
//! including the full trace on boundary edges) and their aggregation eta
//! over sub-meshes. The weights are literally |K| and |K|^(1/2).

use crate::bernstein;
use crate::crspace::CRFunction;
use crate::mesh::Submesh;
use crate::polyquad::{quad_edge, quad_triangle};
use rayon::prelude::*;
use std::fmt::Write as _;

/// Per-triangle squared estimator contributions.
#[derive(Debug, Clone)]
pub struct LocalEstimate {
    pub mu2: Vec<f64>,
    pub nu2: Vec<f64>,
}

impl LocalEstimate {
    pub fn eta2(&self, t: usize) -> f64 {
        self.mu2[t] + self.nu2[t]
    }

    pub fn ntri(&self) -> usize {
        self.mu2.len()
    }

    /// (eta, mu, nu) restricted to a sub-mesh.
    pub fn restricted(&self, s: &Submesh) -> (f64, f64, f64) {
        let mut mu2 = 0.0;
        let mut nu2 = 0.0;
        for t in s.iter() {
            mu2 += self.mu2[t];
            nu2 += self.nu2[t];
        }
        ((mu2 + nu2).sqrt(), mu2.sqrt(), nu2.sqrt())
    }

    pub fn eta_global(&self) -> f64 {
        let total: f64 = self.mu2.iter().sum::<f64>() + self.nu2.iter().sum::<f64>();
        total.sqrt()
    }

    pub fn mu_global(&self) -> f64 {
        self.mu2.iter().sum::<f64>().sqrt()
    }

    pub fn nu_global(&self) -> f64 {
        self.nu2.iter().sum::<f64>().sqrt()
    }

    /// CSV dump "tri_id,mu2,nu2,eta2".
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tri_id,mu2,nu2,eta2\n");
        for t in 0..self.ntri() {
            writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e}",
                t,
                self.mu2[t],
                self.nu2[t],
                self.eta2(t)
            )
            .unwrap();
        }
        s
    }
}

/// Compute the local estimator of v_h for the load f.
///
/// mu(K)^2 = |K| ||f + Lap(v)||^2_K + |K|^(1/2) sum_{E interior}
///           ||[grad v].n||^2_E,
/// nu(K)^2 = |K|^(1/2) sum_{E in E(K)} ||[grad v].t||^2_E.
pub fn estimate<F: Fn(f64, f64) -> f64 + Sync>(v_h: &CRFunction, f: F) -> LocalEstimate {
    let space = &v_h.space;
    let mesh = &space.mesh;
    let k = space.k;
    let u = v_h.to_piecewise();

    // Edge terms once per edge, shared by both adjacent accumulations.
    let edge_rule = quad_edge(2 * k.saturating_sub(1) + space.quad_bump);
    let edge_terms: Vec<(f64, f64)> = (0..mesh.nedge())
        .into_par_iter()
        .map(|e| {
            let he = mesh.h_edge(e);
            let n = mesh.edge_normal(e);
            let tg = mesh.edge_tangent(e);
            let mut normal2 = 0.0;
            let mut tangential2 = 0.0;
            for (p, w) in edge_rule.points.iter().zip(&edge_rule.weights) {
                let gj = u.grad_jump_at(e, p[1]);
                let gn = gj[0] * n[0] + gj[1] * n[1];
                let gt = gj[0] * tg[0] + gj[1] * tg[1];
                normal2 += w * he * gn * gn;
                tangential2 += w * he * gt * gt;
            }
            (normal2, tangential2)
        })
        .collect();

    let vol_rule = quad_triangle(2 * k + 2 + space.quad_bump);
    let mu2nu2: Vec<(f64, f64)> = (0..mesh.ntri())
        .into_par_iter()
        .map(|t| {
            let area = mesh.area(t);
            let coords = mesh.tri_coords(t);
            // volume residual ||f + Lap v||^2 with the Laplacian taken
            // exactly from the Bernstein representation
            let lap = if k >= 2 {
                u.laplacian_block(t)
            } else {
                Vec::new()
            };
            let mut resid2 = 0.0;
            for (lam, w) in vol_rule.points.iter().zip(&vol_rule.weights) {
                let x = lam[0] * coords[0][0] + lam[1] * coords[1][0] + lam[2] * coords[2][0];
                let y = lam[0] * coords[0][1] + lam[1] * coords[1][1] + lam[2] * coords[2][1];
                let lv = if k >= 2 {
                    bernstein::eval(k - 2, &lap, *lam)
                } else {
                    0.0
                };
                let r = f(x, y) + lv;
                resid2 += w * r * r;
            }
            resid2 *= 2.0 * area;

            let mut mu2 = area * resid2;
            let mut nu2 = 0.0;
            let w_edge = area.sqrt();
            for &e in &mesh.tri_edges[t] {
                let (n2, t2) = edge_terms[e];
                if !mesh.edges[e].is_boundary() {
                    mu2 += w_edge * n2;
                }
                nu2 += w_edge * t2;
            }
            (mu2, nu2)
        })
        .collect();

    let (mu2, nu2) = mu2nu2.into_iter().unzip();
    LocalEstimate { mu2, nu2 }
}
