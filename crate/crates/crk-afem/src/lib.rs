//! Command implementations for the adaptive Crouzeix-Raviart front-end:
//! `afem` runs a convergence study and writes CSV tables plus an SVG plot,
//! `verify` drives the operator property suites, and `axioms` records the
//! measured stability/reduction/reliability constants along a run.

pub mod plot;

use anyhow::{bail, Context, Result};
use crk_fem::adaptive::{
    afem_run, axioms_to_csv, monitor_axioms, records_to_csv, AfemOptions, AfemRecord, KeepSteps,
};
use crk_fem::operators::RefinedPair;
use crk_fem::problems::{fit_rate_tail_fraction, problem_by_name, problem_names};
use crk_fem::verify::run_verify;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub k: usize,
    pub theta: f64,
    pub problem: String,
    pub dof_cap: usize,
    pub out: PathBuf,
    pub seed: u64,
    pub quad_bump: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.k % 2 == 0 {
            bail!("k must be odd");
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            bail!("theta must be in (0, 1]");
        }
        if self.dof_cap < 1 {
            bail!("dof-cap must be at least 1");
        }
        if problem_by_name(&self.problem).is_none() {
            bail!(
                "unknown problem '{}'; available: {}",
                self.problem,
                problem_names().join(", ")
            );
        }
        Ok(())
    }
}

fn write_out(dir: &Path, name: &str, content: &str) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Rates summary: trailing-window slopes of eta and the H1 error.
fn rates_csv(records: &[AfemRecord]) -> String {
    let mut s = String::from("series,slope,window\n");
    let eta: Vec<(usize, f64)> = records.iter().map(|r| (r.ndof, r.eta)).collect();
    if let Ok(fit) = fit_rate_tail_fraction(&eta, 1.0 / 16.0, 6) {
        writeln!(s, "eta,{:.6},{}", fit.slope, fit.window).unwrap();
    }
    let err: Vec<(usize, f64)> = records
        .iter()
        .filter_map(|r| r.err_h1.map(|e| (r.ndof, e)))
        .collect();
    if err.len() >= 4 {
        if let Ok(fit) = fit_rate_tail_fraction(&err, 1.0 / 16.0, 6) {
            writeln!(s, "err_h1,{:.6},{}", fit.slope, fit.window).unwrap();
        }
    }
    s
}

/// The `afem` command: solve/estimate/mark/refine until the dof cap, then
/// write run.csv, rates.csv, estimate_final.csv and convergence.svg.
pub fn cmd_afem(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let problem = problem_by_name(&cfg.problem).expect("validated");
    let opts = AfemOptions {
        quad_bump: cfg.quad_bump,
        keep_steps: KeepSteps::Last,
        ..AfemOptions::new(cfg.k, cfg.theta, cfg.dof_cap)
    };
    let (records, steps) = afem_run(problem.as_ref(), &opts)
        .map_err(|e| anyhow::anyhow!("adaptive loop failed: {e}"))?;
    write_out(&cfg.out, "run.csv", &records_to_csv(&records))?;
    write_out(&cfg.out, "rates.csv", &rates_csv(&records))?;
    if let Some(last) = steps.last() {
        write_out(&cfg.out, "estimate_final.csv", &last.estimate.to_csv())?;
    }
    let mut series = vec![plot::Series {
        label: "eta",
        color: "#1f77b4",
        points: records.iter().map(|r| (r.ndof as f64, r.eta)).collect(),
    }];
    let err_pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.err_h1.map(|e| (r.ndof as f64, e)))
        .collect();
    if !err_pts.is_empty() {
        series.push(plot::Series {
            label: "H1 error",
            color: "#d62728",
            points: err_pts,
        });
    }
    let title = format!(
        "{} k={} theta={} ({} dofs)",
        cfg.problem,
        cfg.k,
        cfg.theta,
        records.last().map(|r| r.ndof).unwrap_or(0)
    );
    let kh = format!("-{}/2", cfg.k);
    let refs = [(-1.0 / 3.0, "-1/3"), (-(cfg.k as f64) / 2.0, kh.as_str())];
    let svg = plot::loglog_svg(&title, &series, &refs);
    write_out(&cfg.out, "convergence.svg", &svg)?;
    let eta_series: Vec<(usize, f64)> = records.iter().map(|r| (r.ndof, r.eta)).collect();
    if let Ok(fit) = fit_rate_tail_fraction(&eta_series, 1.0 / 16.0, 6) {
        println!(
            "final ndof {} | eta {:.4e} | eta slope {:+.3} (window {})",
            records.last().unwrap().ndof,
            records.last().unwrap().eta,
            fit.slope,
            fit.window
        );
    }
    Ok(())
}

/// The `verify` command: run the property suites, print the table, write it
/// to the output directory, and fail on the first broken identity.
pub fn cmd_verify(ks: &[usize], seed: u64, out: &Path) -> Result<()> {
    for &k in ks {
        if k < 1 || k % 2 == 0 {
            bail!("k must be odd");
        }
    }
    let outcome = run_verify(ks, seed).map_err(|e| anyhow::anyhow!("verify failed: {e}"))?;
    let table = outcome.to_table();
    print!("{table}");
    write_out(out, "verify_report.txt", &table)?;
    if !outcome.all_pass() {
        let failing = outcome
            .first_failure()
            .map(|c| c.name.clone())
            .unwrap_or_else(|| "a boundedness monitor went non-finite".into());
        bail!("verification failed: {failing}");
    }
    Ok(())
}

/// The `axioms` command: adaptive run retaining all steps; emit the
/// per-step measured constants of the three axioms.
pub fn cmd_axioms(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let problem = problem_by_name(&cfg.problem).expect("validated");
    let opts = AfemOptions {
        quad_bump: cfg.quad_bump,
        keep_steps: KeepSteps::All,
        ..AfemOptions::new(cfg.k, cfg.theta, cfg.dof_cap)
    };
    let (_, steps) = afem_run(problem.as_ref(), &opts)
        .map_err(|e| anyhow::anyhow!("adaptive loop failed: {e}"))?;
    let mut reports = Vec::new();
    for (i, w) in steps.windows(2).enumerate() {
        let rel = w[0].relation.clone().expect("non-terminal step");
        let pair = RefinedPair::new(w[0].space.clone(), w[1].space.clone(), rel)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let rep = monitor_axioms(&pair, &w[0].solution, &w[1].solution, |x, y| {
            problem.load(x, y)
        });
        reports.push((i, rep));
    }
    write_out(&cfg.out, "axioms.csv", &axioms_to_csv(&reports))?;
    println!("wrote {} axiom rows", reports.len());
    Ok(())
}
