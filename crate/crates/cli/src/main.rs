use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde_json::json;

use ctxbai::algorithms::{run_algo, Algo, RunConfig};
use ctxbai::env::{gen_random_instance, GenConstraints, RngStream};
use ctxbai::harness::{run_experiment, write_outputs, ExperimentConfig};
use ctxbai::optim::{
    grid_oracle, nonsep_objective, solve_nonsep_weights, solve_sep_weights, Allocation,
};
use ctxbai::{Error, Instance, Setting};

#[derive(Parser)]
#[command(name = "ctxbai", version, about = "Best-arm identification with post-action contexts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance and write it as JSON.
    GenInstance {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        /// separator or non_separator
        #[arg(long)]
        kind: Setting,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve for the optimal allocation of an instance and print it as JSON.
    SolveWeights {
        #[arg(long)]
        instance: PathBuf,
        /// Compare against an exhaustive grid search (n, k <= 4).
        #[arg(long)]
        oracle: bool,
        /// Certified optimality gap for the separator solver.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Run one algorithm once and write the result as JSON.
    Run {
        #[arg(long)]
        algo: Algo,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Record a snapshot every this many rounds.
        #[arg(long)]
        trajectory: Option<u64>,
        #[arg(long)]
        max_rounds: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a multi-trial experiment described by a JSON config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn write_text(path: &Path, text: String) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn gen_instance(n: usize, k: usize, kind: Setting, seed: u64, out: &Path) -> anyhow::Result<()> {
    let c = GenConstraints::new(n, k);
    let inst = gen_random_instance(&c, kind, &mut RngStream::new(seed, 0))?;
    let mut file = inst.to_file();
    file.meta = Some(json!({ "seed": seed, "generator": c }));
    write_text(out, serde_json::to_string_pretty(&file)?)
}

fn solve_weights(path: &Path, oracle: bool, tol: f64) -> anyhow::Result<()> {
    if tol.is_nan() || tol < 0.0 {
        bail!("--tol must be non-negative");
    }
    let inst = Instance::load(path)?;
    let mut report = json!({
        "kind": inst.setting(),
        "best_arm": inst.best_arm() + 1,
        "gaps": inst.gaps(),
    });
    let objective = match inst.setting() {
        Setting::NonSeparator => {
            let w = solve_nonsep_weights(&inst.gaps())?;
            let obj = nonsep_objective(w.as_slice(), &inst.gaps());
            report["weights"] = json!(w);
            obj
        }
        Setting::Separator => {
            let sol = solve_sep_weights(&inst, tol)?;
            report["weights"] = json!(sol.wz);
            report["arm_mixture"] = json!(sol.lambda);
            report["upper_bound"] = json!(sol.upper_bound);
            report["iterations"] = json!(sol.iterations);
            report["converged"] = json!(sol.converged);
            sol.objective
        }
    };
    report["objective"] = json!(objective);
    report["t_star"] = json!(1.0 / objective);
    if oracle {
        let resolution = 1.0 / 200.0;
        let g = grid_oracle(&inst, resolution)?;
        let weights = match &g.weights {
            Allocation::Arms(w) => json!(w),
            Allocation::Contexts(w) => json!(w),
        };
        report["oracle"] = json!({
            "resolution": resolution,
            "objective": g.objective,
            "t_star": g.t_star,
            "weights": weights,
            "solver_minus_oracle": objective - g.objective,
        });
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_once(
    algo: Algo,
    path: &Path,
    delta: f64,
    seed: u64,
    trajectory: Option<u64>,
    max_rounds: Option<u64>,
    out: &Path,
) -> anyhow::Result<()> {
    let inst = Instance::load(path)?;
    let mut cfg = RunConfig::new(delta);
    cfg.trajectory_stride = trajectory;
    if let Some(m) = max_rounds {
        cfg.max_rounds = m;
    }
    let result = run_algo(algo, &inst, &cfg, &mut RngStream::new(seed, 0))?;
    write_text(out, serde_json::to_string_pretty(&result.report())?)
}

fn bench(config: &Path, out: Option<PathBuf>, jobs: Option<usize>) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    let Some(dir) = out.or_else(|| cfg.out.clone()) else {
        eprintln!("error: no output directory (use --out or set \"out\" in the config)");
        return ExitCode::from(2);
    };
    let output = match run_experiment(&cfg) {
        Ok(o) => o,
        Err(e @ (Error::Config(_) | Error::Usage(_) | Error::Parse { .. })) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    if let Err(e) = write_outputs(&output, &cfg, &dir) {
        eprintln!("error: {e}");
        return ExitCode::from(3);
    }
    let failures = output.failures();
    if failures > 0 {
        eprintln!("error: {failures} run(s) failed; see runs.json");
        return ExitCode::from(3);
    }
    eprintln!(
        "wrote {} aggregates to {}",
        output.aggregates.len(),
        dir.display()
    );
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenInstance {
            n,
            k,
            kind,
            seed,
            out,
        } => gen_instance(n, k, kind, seed, &out),
        Command::SolveWeights {
            instance,
            oracle,
            tol,
        } => solve_weights(&instance, oracle, tol),
        Command::Run {
            algo,
            instance,
            delta,
            seed,
            trajectory,
            max_rounds,
            out,
        } => run_once(algo, &instance, delta, seed, trajectory, max_rounds, &out),
        Command::Bench { config, out, jobs } => return bench(&config, out, jobs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_run_flags() {
        let cli = Cli::try_parse_from([
            "ctxbai", "run", "--algo", "sts", "--instance", "x.json", "--delta", "0.01", "--seed",
            "4", "--trajectory", "100", "--out", "r.json",
        ])
        .unwrap();
        let Command::Run { algo, delta, trajectory, .. } = cli.command else {
            panic!("expected run");
        };
        assert_eq!(algo, Algo::Sts);
        assert_eq!(delta, 0.01);
        assert_eq!(trajectory, Some(100));
        assert!(Cli::try_parse_from(["ctxbai", "run", "--algo", "bogus"]).is_err());
    }
}
