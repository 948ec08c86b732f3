use anyhow::Result;
use clap::{Parser, Subcommand};
use crk_afem::{cmd_afem, cmd_axioms, cmd_verify, RunConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "crk-afem",
    about = "Adaptive Crouzeix-Raviart solver for the 2D Poisson problem"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an adaptive (or, with --theta 1.0, uniform) convergence study.
    Afem(RunArgs),
    /// Run the operator property suites and print a pass/fail table.
    Verify {
        /// Polynomial degree; may be given several times. Default: 1 3 5.
        #[arg(long = "k")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Record the measured axiom constants along an adaptive run.
    Axioms(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Polynomial degree (odd).
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Doerfler bulk parameter in (0, 1]; 1.0 marks everything.
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    /// Benchmark problem.
    #[arg(long, default_value = "lshape")]
    problem: String,
    /// Terminate once dim CR_{k,0} exceeds this.
    #[arg(long = "dof-cap", default_value_t = 100_000)]
    dof_cap: usize,
    /// Output directory; all files go here.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized suites (kept for reproducibility bookkeeping).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Additive bump applied to every quadrature degree.
    #[arg(long = "quad-bump", default_value_t = 0)]
    quad_bump: usize,
}

impl From<&RunArgs> for RunConfig {
    fn from(a: &RunArgs) -> Self {
        RunConfig {
            k: a.k,
            theta: a.theta,
            problem: a.problem.clone(),
            dof_cap: a.dof_cap,
            out: a.out.clone(),
            seed: a.seed,
            quad_bump: a.quad_bump,
        }
    }
}

fn main() -> Result<()> {
    if let Ok(threads) = std::env::var("CRK_AFEM_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| anyhow::anyhow!("CRK_AFEM_THREADS must be a positive integer"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Afem(args) => cmd_afem(&RunConfig::from(args)),
        Cmd::Verify { k, seed, out } => {
            let ks = if k.is_empty() {
                vec![1, 3, 5]
            } else {
                k.clone()
            };
            cmd_verify(&ks, *seed, out)
        }
        Cmd::Axioms(args) => cmd_axioms(&RunConfig::from(args)),
    }
}
