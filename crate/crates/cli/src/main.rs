//! Command-line front end: train, evaluate, benchmark, build references.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spikan::config::TrainConfig;
use spikan::experiment::{cmd_bench, cmd_eval, cmd_reference, cmd_train};
use spikan::metrics::RunReport;
use spikan::physics::Problem;
use spikan::Error;

#[derive(Parser)]
#[command(name = "spikan", version, about = "Separable physics-informed KAN training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file and write a run directory.
    Train {
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Re-evaluate a run directory, optionally on a different grid.
    Eval {
        run_dir: PathBuf,
        /// Points per axis, e.g. `256,256`.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
    },
    /// Time two configs against each other.
    Bench {
        baseline: PathBuf,
        candidate: PathBuf,
        #[arg(long, default_value_t = 60)]
        iters: usize,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build (or reuse) a reference field.
    Reference {
        problem: String,
        /// `nx,nt` for Allen-Cahn, points per axis otherwise.
        #[arg(long, value_delimiter = ',', required = true)]
        resolution: Vec<usize>,
        #[arg(long, default_value = "references")]
        dir: PathBuf,
        /// Filter the cubic term with the 2/3 rule (Allen-Cahn only).
        #[arg(long)]
        dealias: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 4,
        Error::NonFinite { .. } | Error::Unstable { .. } => 3,
        _ => 2,
    }
}

fn summarize(dir: &std::path::Path, r: &RunReport) {
    println!("run: {}", dir.display());
    println!("problem: {} ({})", r.problem, r.method);
    println!("parameters: {}", r.params.count);
    println!("ms/iter: {:.4} +- {:.4}", r.timing.ms_mean, r.timing.ms_std);
    println!(
        "final loss: {:e} (pde {:e}, ic {:e}, bc {:e})",
        r.loss.total, r.loss.l_pde, r.loss.l_ic, r.loss.l_bc
    );
    for (k, v) in &r.l2 {
        println!("relative L2 {k}: {:.4}%", 100.0 * v);
    }
    for (k, v) in &r.diagnostics {
        println!("{k}: {v:e}");
    }
    if let Some(s) = &r.speedup {
        println!(
            "speedup vs {}: {:.2}x wall clock, {:.2}x evaluations",
            s.baseline, s.wall_clock, s.eval_ratio
        );
    }
}

fn run(cli: Cli) -> spikan::Result<()> {
    match cli.command {
        Command::Train { config, out_dir } => {
            let mut cfg = TrainConfig::from_file(&config)?;
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            let report = cmd_train(&cfg)?;
            summarize(&cfg.out_dir, &report);
        }
        Command::Eval { run_dir, grid } => {
            let report = cmd_eval(&run_dir, grid.as_deref())?;
            summarize(&run_dir, &report);
        }
        Command::Bench {
            baseline,
            candidate,
            iters,
            out,
        } => {
            let b = TrainConfig::from_file(&baseline)?;
            let c = TrainConfig::from_file(&candidate)?;
            let text = cmd_bench(&b, &c, iters)?.to_toml();
            print!("{text}");
            if let Some(path) = out {
                std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
            }
        }
        Command::Reference {
            problem,
            resolution,
            dir,
            dealias,
        } => {
            let problem = Problem::from_name(&problem)?;
            let out = cmd_reference(problem, &resolution, &dir, dealias)?;
            let how = if out.reused { "reused" } else { "written" };
            println!("{}: {how}", out.path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
