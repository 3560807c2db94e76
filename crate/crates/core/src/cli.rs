//! Command-line surface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::trace::write_sweep;
use crate::trainer::{self, SweepSettings};

#[derive(Parser, Debug)]
#[command(name = "quadcv", version, about = "Variational inference with quadratic-surrogate control variates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one optimization and write its trace CSV.
    Run(RunArgs),
    /// Gradient variance at μ = 0, Σ = σ²I for each estimator over the `sigmas` grid.
    SweepSigma(RunArgs),
    /// One run per `alpha_w` in `step_sizes`, one trace each.
    SweepStepsize(RunArgs),
    /// Finite-difference checks of every analytic derivative.
    CheckGrads {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for per-sample evaluation (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_file(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 on success, 1 on failure, 2 on usage errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(Error::InvalidArgument("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(f),
    }
}

/// `<dir>/<stem>__alpha=<α>.csv` next to `out`.
pub fn stepsize_trace_path(out: &Path, alpha: f64) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trace".into());
    out.with_file_name(format!("{stem}__alpha={alpha}.csv"))
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let trace = with_threads(args.threads, || trainer::run(&cfg))?;
            trace.write(&cfg.out)?;
            println!("wrote {}", cfg.out.display());
            Ok(0)
        }
        Command::SweepSigma(args) => {
            let cfg = args.load()?;
            let model = cfg.build_model()?;
            let settings = SweepSettings::from_config(&cfg);
            let rows = with_threads(args.threads, || trainer::sigma_sweep(model.as_ref(), &settings))?;
            write_sweep(&rows, &cfg.out)?;
            println!("wrote {}", cfg.out.display());
            Ok(0)
        }
        Command::SweepStepsize(args) => {
            let cfg = args.load()?;
            let model = cfg.build_model()?;
            let traces = with_threads(args.threads, || trainer::stepsize_sweep(model.as_ref(), &cfg))?;
            for (alpha, trace) in traces {
                let path = stepsize_trace_path(&cfg.out, alpha);
                trace.write(&path)?;
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::CheckGrads { seed, threads } => {
            let results = with_threads(threads, || gradcheck::check_all(seed))?;
            let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
            let mut failures = 0;
            for r in &results {
                let status = if r.passed() { "PASS" } else { "FAIL" };
                failures += usize::from(!r.passed());
                println!("{:width$}  rel_err={:.3e}  tol={:.0e}  {status}", r.name, r.rel_err, r.tol);
            }
            println!("{} checks, {failures} failed", results.len());
            Ok(if failures == 0 { 0 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(cli_main(["quadcv", "frobnicate"]), 2);
        assert_eq!(cli_main(["quadcv"]), 2);
        assert_eq!(cli_main(["quadcv", "run"]), 2);
    }

    #[test]
    fn stepsize_names() {
        let p = stepsize_trace_path(Path::new("out/run.csv"), 0.001);
        assert_eq!(p, PathBuf::from("out/run__alpha=0.001.csv"));
    }
}
