//! `lsfp` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lsfp_core::harness::{
    emit_outputs, run_experiment, validation_suite, EmitOptions, ExperimentOptions, SchemeSpec,
};
use lsfp_core::scenario::ScenarioConfig;
use lsfp_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NONCONVERGED: u8 = 3;

/// Environment variable that overrides `--threads`.
const THREADS_ENV: &str = "LSFP_THREADS";

#[derive(Parser)]
#[command(name = "lsfp", version, about = "Large-scale fading precoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run schemes over random setups and write CSV/JSON results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated scheme list, e.g. `LSFP-SumSE,SLP-SumSE,LPA@LS`.
        #[arg(long)]
        schemes: String,
        #[arg(long)]
        setups: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        threads: Option<usize>,
        /// Also compare closed-form statistics with this many channel draws.
        #[arg(long = "mc-validate", value_name = "N_SAMPLES")]
        mc_validate: Option<usize>,
        /// Also write an SVG rendering of the CDFs.
        #[arg(long)]
        svg: bool,
        /// Exit with status 3 if any solver run fails to converge.
        #[arg(long)]
        strict: bool,
        /// Write link statistics, weights and solver traces under `out/debug`.
        #[arg(long = "debug-dump")]
        debug_dump: bool,
    },
    /// Check closed-form link statistics against Monte-Carlo estimates.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Json { .. } => EXIT_CONFIG,
        Error::NonConvergence { .. } => EXIT_NONCONVERGED,
        _ => EXIT_FAILURE,
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Error> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| Error::Config {
            field: THREADS_ENV.into(),
            reason: format!("not a thread count: `{v}`"),
        })?),
        Err(_) => flag,
    };
    if threads == Some(0) {
        return Err(Error::Config {
            field: "threads".into(),
            reason: "must be at least 1".into(),
        });
    }
    Ok(threads)
}

fn with_pool<T>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T, Error>
where
    T: Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

fn load_config(path: &PathBuf) -> Result<ScenarioConfig, Error> {
    ScenarioConfig::from_json_file(path).map_err(|e| match e {
        // A missing or unreadable config file is a configuration problem.
        Error::Io { path, source } => Error::Config {
            field: "config".into(),
            reason: format!("{}: {source}", path.display()),
        },
        other => other,
    })
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run {
            config,
            schemes,
            setups,
            seed,
            out,
            threads,
            mc_validate,
            svg,
            strict,
            debug_dump,
        } => {
            let config = load_config(&config)?;
            let schemes = SchemeSpec::parse_list(&schemes)?;
            if mc_validate == Some(0) {
                return Err(Error::Config {
                    field: "mc-validate".into(),
                    reason: "must be at least 1".into(),
                });
            }
            let mut options = ExperimentOptions::new(setups, seed);
            options.mc_validate = mc_validate;
            options.keep_debug = debug_dump;
            let threads = thread_count(threads)?;
            let result = with_pool(threads, || run_experiment(&config, &schemes, &options))??;
            emit_outputs(&result, &out, EmitOptions { svg, debug_dump })?;

            let summary = result.summary()?;
            println!(
                "{:<28} {:>10} {:>10} {:>10} {:>10} {:>9}",
                "scheme", "median", "p10", "mean", "fronthaul", "converged"
            );
            for s in &summary.schemes {
                let conv = s
                    .convergence
                    .as_ref()
                    .map_or("-".to_string(), |c| format!("{}/{}", c.converged, c.runs));
                println!(
                    "{:<28} {:>10.4} {:>10.4} {:>10.4} {:>10} {:>9}",
                    s.scheme, s.median_se, s.p10_se, s.mean_se, s.fronthaul_symbols_per_block, conv
                );
            }
            println!("results written to {}", out.display());
            if strict && result.any_not_converged() {
                eprintln!("error: at least one solver run did not converge (strict mode)");
                return Ok(EXIT_NONCONVERGED);
            }
            Ok(0)
        }
        Command::Validate {
            config,
            samples,
            threads,
        } => {
            let config = load_config(&config)?;
            let threads = thread_count(threads)?;
            let rows = with_pool(threads, || validation_suite(&config, samples))??;
            println!("{:<48} {:>12} {:>12}  result", "check", "value", "tolerance");
            for r in &rows {
                println!(
                    "{:<48} {:>12.3e} {:>12.3e}  {}",
                    r.check,
                    r.value,
                    r.tolerance,
                    if r.passed { "PASS" } else { "FAIL" }
                );
            }
            let failed = rows.iter().filter(|r| !r.passed).count();
            println!("{} of {} checks passed", rows.len() - failed, rows.len());
            Ok(if failed == 0 { 0 } else { EXIT_FAILURE })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
