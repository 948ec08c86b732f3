//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line. Criterion 8 (byte-identical CLI outputs) lives in the crk-afem
//! crate next to the command implementations.

use crk_fem::adaptive::{
    afem_run, log_trend_slope, monitor_axioms, AfemOptions, AfemRecord, KeepSteps,
};
use crk_fem::operators::RefinedPair;
use crk_fem::problems::{fit_rate, fit_rate_tail_fraction, problem_by_name};
use crk_fem::verify::{operator_identity_suite, orthogonality_suite, vertex_identity_suite};
use std::time::Instant;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[ACCEPTANCE {criterion}] {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

/// Criterion 1: operator identity suite, k in {1,3,5}, on the 6-triangle
/// L-shape mesh and one random NVB refinement; runtime <= 60 s.
#[test]
fn acceptance_1_operator_identities() {
    let t0 = Instant::now();
    let mut worst: Option<(String, f64, f64)> = None;
    for k in [1usize, 3, 5] {
        for c in operator_identity_suite(k, 2026).unwrap() {
            assert!(
                c.pass(),
                "[ACCEPTANCE 1] FAIL - {} deviated {:.3e} (tol {:.1e})",
                c.name,
                c.max_err,
                c.tol
            );
            let margin = c.max_err / c.tol;
            if worst.as_ref().map(|w| margin > w.1 / w.2).unwrap_or(true) {
                worst = Some((c.name.clone(), c.max_err, c.tol));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let (name, err, tol) = worst.unwrap();
    report(
        "1",
        secs <= 60.0,
        &format!("operator identities k=1,3,5 in {secs:.1} s; tightest: {name} at {err:.2e} (tol {tol:.0e})"),
    );
}

/// Criterion 2: orthogonality suite at the stated tolerances.
#[test]
fn acceptance_2_orthogonality() {
    let mut max_rel: f64 = 0.0;
    for k in [1usize, 3, 5] {
        for c in orthogonality_suite(k).unwrap() {
            assert!(
                c.pass(),
                "[ACCEPTANCE 2] FAIL - {} deviated {:.3e}",
                c.name,
                c.max_err
            );
            max_rel = max_rel.max(c.max_err / c.tol);
        }
    }
    report(
        "2",
        true,
        &format!("orthogonality identities at <= {max_rel:.2}x of tolerance"),
    );
}

/// Criterion 3: vertex-evaluation identity for 20 random polynomials.
#[test]
fn acceptance_3_vertex_identity() {
    let mut max_err: f64 = 0.0;
    for k in [1usize, 3, 5] {
        for c in vertex_identity_suite(k, 2026).unwrap() {
            assert!(
                c.pass(),
                "[ACCEPTANCE 3] FAIL - {} deviated {:.3e}",
                c.name,
                c.max_err
            );
            max_err = max_err.max(c.max_err);
        }
    }
    report(
        "3",
        true,
        &format!("(g_K^z, p) = p(z) to {max_err:.2e} relative"),
    );
}

fn eta_series(records: &[AfemRecord]) -> Vec<(usize, f64)> {
    records.iter().map(|r| (r.ndof, r.eta)).collect()
}

fn err_series(records: &[AfemRecord]) -> Vec<(usize, f64)> {
    records
        .iter()
        .filter_map(|r| r.err_h1.map(|e| (r.ndof, e)))
        .collect()
}

/// Criterion 4: adaptive L-shape slopes. k=1 to 1e5 dofs within 0.10 of
/// -1/2; k=3 to 5e4 dofs within 0.15 of -3/2; each run under 10 minutes.
#[test]
fn acceptance_4_adaptive_convergence() {
    let problem = problem_by_name("lshape").unwrap();
    // k = 1
    let t0 = Instant::now();
    let (rec1, _) = afem_run(problem.as_ref(), &AfemOptions::new(1, 0.5, 100_000)).unwrap();
    let secs1 = t0.elapsed().as_secs_f64();
    let eta1 = fit_rate_tail_fraction(&eta_series(&rec1), 1.0 / 16.0, 6)
        .unwrap()
        .slope;
    let err1 = fit_rate_tail_fraction(&err_series(&rec1), 1.0 / 16.0, 6)
        .unwrap()
        .slope;
    // k = 3
    let t0 = Instant::now();
    let (rec3, _) = afem_run(problem.as_ref(), &AfemOptions::new(3, 0.5, 50_000)).unwrap();
    let secs3 = t0.elapsed().as_secs_f64();
    let eta3 = fit_rate_tail_fraction(&eta_series(&rec3), 1.0 / 16.0, 6)
        .unwrap()
        .slope;
    let err3 = fit_rate_tail_fraction(&err_series(&rec3), 1.0 / 16.0, 6)
        .unwrap()
        .slope;
    let pass = (eta1 + 0.5).abs() <= 0.10
        && (err1 + 0.5).abs() <= 0.10
        && (eta3 + 1.5).abs() <= 0.15
        && (err3 + 1.5).abs() <= 0.15
        && secs1 <= 600.0
        && secs3 <= 600.0;
    report(
        "4",
        pass,
        &format!(
            "adaptive k=1: eta {eta1:+.3}, err {err1:+.3} (target -0.5±0.10, {secs1:.0} s); \
             k=3: eta {eta3:+.3}, err {err3:+.3} (target -1.5±0.15, {secs3:.0} s)"
        ),
    );
}

/// Criterion 5: uniform L-shape H1-error slope within 0.05 of -1/3 for
/// k in {1,3}. The k=1 error is strongly pre-asymptotic (the smooth
/// component decays at -1/2 and only slowly yields to the singular -1/3),
/// so that run is extended to 1e6 dofs; k=3 reaches the singular rate
/// well before 1e5.
#[test]
fn acceptance_5_uniform_convergence() {
    let problem = problem_by_name("lshape").unwrap();
    let (rec1, _) = afem_run(problem.as_ref(), &AfemOptions::new(1, 1.0, 1_000_000)).unwrap();
    let err1 = fit_rate(&err_series(&rec1), 4).unwrap().slope;
    let eta1 = fit_rate(&eta_series(&rec1), 4).unwrap().slope;
    let (rec3, _) = afem_run(problem.as_ref(), &AfemOptions::new(3, 1.0, 100_000)).unwrap();
    let err3 = fit_rate_tail_fraction(&err_series(&rec3), 1.0 / 16.0, 6)
        .unwrap()
        .slope;
    let eta3 = fit_rate_tail_fraction(&eta_series(&rec3), 1.0 / 16.0, 6)
        .unwrap()
        .slope;
    let third = 1.0 / 3.0;
    let pass = (err1 + third).abs() <= 0.05 && (err3 + third).abs() <= 0.05;
    report(
        "5",
        pass,
        &format!(
            "uniform error slopes: k=1 {err1:+.3} (eta {eta1:+.3}), \
             k=3 {err3:+.3} (eta {eta3:+.3}); target -1/3±0.05 on the error"
        ),
    );
}

/// Criterion 6: measured axiom constants over 10 consecutive adaptive steps
/// are finite with log-trend slope <= 0.05.
#[test]
fn acceptance_6_axiom_monitors() {
    let problem = problem_by_name("lshape").unwrap();
    let opts = AfemOptions {
        keep_steps: KeepSteps::All,
        ..AfemOptions::new(1, 0.5, 20_000)
    };
    let (_, steps) = afem_run(problem.as_ref(), &opts).unwrap();
    assert!(steps.len() >= 11, "need at least 11 steps for 10 pairs");
    let mut l1 = Vec::new();
    let mut l2 = Vec::new();
    let mut l3 = Vec::new();
    for w in steps.windows(2) {
        let rel = w[0].relation.clone().unwrap();
        let pair = RefinedPair::new(w[0].space.clone(), w[1].space.clone(), rel).unwrap();
        let rep = monitor_axioms(&pair, &w[0].solution, &w[1].solution, |x, y| {
            problem.load(x, y)
        });
        l1.push(rep.lambda1);
        l2.push(rep.lambda2);
        l3.push(rep.lambda3);
    }
    let n = l1.len();
    let (l1, l2, l3) = (&l1[n - 10..], &l2[n - 10..], &l3[n - 10..]);
    let finite = l1
        .iter()
        .chain(l2)
        .chain(l3)
        .all(|v| v.is_finite() && *v >= 0.0);
    let (t1, t2, t3) = (
        log_trend_slope(l1),
        log_trend_slope(l2),
        log_trend_slope(l3),
    );
    let pass = finite && t1 <= 0.05 && t2 <= 0.05 && t3 <= 0.05;
    report(
        "6",
        pass,
        &format!(
            "Lambda1 in [{:.3},{:.3}] trend {t1:+.3}; Lambda2 max {:.3} trend {t2:+.3}; \
             Lambda3 in [{:.3},{:.3}] trend {t3:+.3} (rho2 fixed)",
            l1.iter().cloned().fold(f64::INFINITY, f64::min),
            l1.iter().cloned().fold(0.0f64, f64::max),
            l2.iter().cloned().fold(0.0f64, f64::max),
            l3.iter().cloned().fold(f64::INFINITY, f64::min),
            l3.iter().cloned().fold(0.0f64, f64::max),
        ),
    );
}

/// Distance from the origin to the closed triangle with the given corners.
fn tri_distance_to_origin(c: [[f64; 2]; 3]) -> f64 {
    let seg = |a: [f64; 2], b: [f64; 2]| -> f64 {
        let ab = [b[0] - a[0], b[1] - a[1]];
        let t = (-(a[0] * ab[0] + a[1] * ab[1])) / (ab[0] * ab[0] + ab[1] * ab[1]);
        let t = t.clamp(0.0, 1.0);
        let p = [a[0] + t * ab[0], a[1] + t * ab[1]];
        (p[0] * p[0] + p[1] * p[1]).sqrt()
    };
    seg(c[0], c[1]).min(seg(c[1], c[2])).min(seg(c[2], c[0]))
}

/// Criterion 7 as stated: beyond step 3 of the adaptive k=1 run, at least
/// half the marked triangles lie within distance 0.25 of the reentrant
/// corner, a region whose area fraction is below 6%.
///
/// This criterion is unattainable as stated and the test is expected red;
/// see the analysis printed below. The refinement does concentrate at the
/// corner: the marked-near-corner fraction exceeds the region's area
/// fraction at every step, and the near-corner element density runs at
/// 2-3x the average. But a k=1 run converging at the optimal rate -1/2
/// (criterion 4) must spend the majority of its markings on the smooth
/// component, whose element count scales linearly with the total. The
/// measured fraction plateaus near 0.1 under every reading (marked count,
/// marked eta^2 mass, mesh density); a method satisfying the stated 50%
/// bound at every step would starve the smooth region and lose the optimal
/// rate criterion 4 requires.
#[test]
fn acceptance_7_refinement_localization() {
    let problem = problem_by_name("lshape").unwrap();
    let opts = AfemOptions {
        keep_steps: KeepSteps::All,
        ..AfemOptions::new(1, 0.5, 20_000)
    };
    let (_, steps) = afem_run(problem.as_ref(), &opts).unwrap();
    // the region {dist <= 0.25} cap Omega is three quarter-disks:
    // area fraction (3/4) pi r^2 / |Omega| with |Omega| = 3
    let area_fraction = 0.75 * std::f64::consts::PI * 0.25 * 0.25 / 3.0;
    assert!(area_fraction <= 0.06);
    let mut min_fraction: f64 = 1.0;
    let mut exceeds_area_fraction = true;
    let mut checked = 0;
    for (i, s) in steps.iter().enumerate() {
        if i <= 3 || s.marked.is_empty() {
            continue;
        }
        let mesh = &s.space.mesh;
        let near = s
            .marked
            .iter()
            .filter(|&t| tri_distance_to_origin(mesh.tri_coords(t)) <= 0.25)
            .count();
        let fraction = near as f64 / s.marked.count() as f64;
        min_fraction = min_fraction.min(fraction);
        // the weaker concentration property that does hold: the marked
        // fraction near the corner exceeds the region's area share; checked
        // on the trailing half since single steps alternate between
        // corner-dominated and smooth-dominated marking waves
        if i >= steps.len() / 2 {
            checked += 1;
            if fraction <= area_fraction {
                exceeds_area_fraction = false;
            }
        }
    }
    println!(
        "[ACCEPTANCE 7][context] marked-near-corner fraction exceeds the area fraction \
         {area_fraction:.3} on the trailing half of the run: {} ({checked} steps)",
        if exceeds_area_fraction { "yes" } else { "no" }
    );
    let pass = min_fraction >= 0.5;
    report(
        "7",
        pass,
        &format!(
            "min marked-near-corner fraction {min_fraction:.3} over steps > 3 against the \
             stated bound 0.50; the bound is incompatible with the optimal k=1 rate that \
             criterion 4 verifies (see this test's doc comment for the analysis)"
        ),
    );
}

/// Non-gating extended check: adaptive slopes for k=5 and k=7 approach
/// -5/2 and -7/2. Run with `cargo test -- --ignored` when wanted.
#[test]
#[ignore = "extended non-gating check (k=5,7 slopes)"]
fn acceptance_extended_k5_k7() {
    let problem = problem_by_name("lshape").unwrap();
    for (k, want) in [(5usize, -2.5), (7usize, -3.5)] {
        let (rec, _) = afem_run(problem.as_ref(), &AfemOptions::new(k, 0.5, 30_000)).unwrap();
        let eta = fit_rate_tail_fraction(&eta_series(&rec), 1.0 / 16.0, 6)
            .unwrap()
            .slope;
        let err = fit_rate_tail_fraction(&err_series(&rec), 1.0 / 16.0, 6)
            .unwrap()
            .slope;
        let final_err = rec.last().and_then(|r| r.err_h1).unwrap_or(f64::NAN);
        // at these sizes the k=7 error approaches the f64 floor, which
        // steepens the fitted slope; the magnitudes are printed for context
        println!(
            "[EXTENDED k={k}] eta slope {eta:+.3}, err slope {err:+.3} \
             (target {want}; final err {final_err:.2e})"
        );
    }
}
