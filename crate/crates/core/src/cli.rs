//! `aisle` command-line front end.
//!
//! Exit codes: 0 success, 1 failed check or I/O error, 2 configuration or
//! usage error, 3 numerical abort during a run.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checks::{estimator_identity_checks, gradient_check_suite, zero_variance_checks};
use crate::error::Error;
use crate::estimators::GradientTarget;
use crate::harness::{
    run_experiment, snr_reference_problem, snr_sweep, write_snr_csv, write_trajectory_csv, ConfigError,
    ExperimentResult, RunConfig, RunMetadata, Scenario,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "aisle", version, about = "Adaptive importance sampling gradient estimators on a linear-Gaussian benchmark")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment grid and write median error trajectories.
    Run(RunArgs),
    /// Sweep gradient signal-to-noise ratios over K.
    Snr(SnrArgs),
    /// Compare every analytic gradient with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Check the exact estimator identities on random inputs.
    Identities(IdentitiesArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Trajectory CSV; the metadata sidecar goes next to it with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "D", value_delimiter = ',')]
    d: Option<Vec<usize>>,
    #[arg(long = "K", value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Debug, Args)]
struct SnrArgs {
    /// SNR CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "D", default_value_t = 2)]
    d: usize,
    #[arg(long = "K", value_delimiter = ',', default_value = "1,4,16,64,256")]
    k: Vec<usize>,
    /// Monte-Carlo draws per K.
    #[arg(long = "M", default_value_t = 10_000)]
    m: usize,
    /// Estimator names, or `theta` for the shared θ-gradient.
    #[arg(long, value_delimiter = ',', default_value = "iwae,iwae_stl,iwae_dreg,theta")]
    estimators: Vec<String>,
    #[arg(long, default_value = "diagonal")]
    scenario: String,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "D", value_delimiter = ',', default_value = "1,2,5")]
    d: Vec<usize>,
    /// Random points per dimension.
    #[arg(long, default_value_t = 50)]
    points: usize,
}

#[derive(Debug, Args)]
struct IdentitiesArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random configurations for the estimator identities.
    #[arg(long = "M", default_value_t = 1000)]
    m: usize,
}

fn config_error(e: &ConfigError) -> i32 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

fn report(e: &Error) -> i32 {
    match e {
        Error::NumericalAbort { .. } => {
            eprintln!("numerical abort: {e}");
            EXIT_NUMERICAL
        }
        Error::InvalidInput(_) | Error::NotPositiveDefinite | Error::DimensionMismatch { .. } => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        _ => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> i32 {
    eprintln!("error: writing {}: {e}", path.display());
    EXIT_FAILURE
}

fn load_config(args: &RunArgs) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| ConfigError {
        key: "config".into(),
        message: format!("cannot read {}: {e}", args.config.display()),
    })?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(d) = &args.d {
        cfg.d = crate::harness::OneOrMany::Many(d.clone());
    }
    if let Some(k) = &args.k {
        cfg.k = crate::harness::OneOrMany::Many(k.clone());
    }
    if let Some(names) = &args.estimators {
        let kinds = names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e: Error| ConfigError {
                key: "estimator".into(),
                message: e.to_string(),
            })?;
        cfg.estimator = crate::harness::OneOrMany::Many(kinds);
    }
    if let Some(eta) = args.eta {
        cfg.eta = Some(eta);
    }
    if let Some(it) = args.iterations {
        cfg.iterations = it;
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Path of the metadata sidecar for a trajectory CSV.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn cmd_run(args: &RunArgs) -> i32 {
    let cfg = match load_config(args) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    let mut results: Vec<ExperimentResult> = Vec::new();
    for cell in cfg.expand() {
        match run_experiment(&cell) {
            Ok(r) => results.push(r),
            Err(e) => return report(&e),
        }
    }
    let write = || -> io::Result<()> {
        let mut w = BufWriter::new(File::create(&args.out)?);
        write_trajectory_csv(&mut w, &results)?;
        w.flush()
    };
    if let Err(e) = write() {
        return io_failure(&args.out, e);
    }
    let meta_path = sidecar_path(&args.out);
    let meta = serde_json::to_string_pretty(&RunMetadata::new(&cfg)).expect("metadata serialises");
    if let Err(e) = std::fs::write(&meta_path, meta + "\n") {
        return io_failure(&meta_path, e);
    }
    eprintln!("wrote {} and {}", args.out.display(), meta_path.display());
    EXIT_OK
}

fn cmd_snr(args: &SnrArgs) -> i32 {
    let targets = match args
        .estimators
        .iter()
        .map(|n| n.parse::<GradientTarget>())
        .collect::<Result<Vec<_>, _>>()
    {
        Ok(t) => t,
        Err(e) => {
            return config_error(&ConfigError {
                key: "estimators".into(),
                message: e.to_string(),
            })
        }
    };
    let scenario: Scenario = match args.scenario.parse() {
        Ok(s) => s,
        Err(e) => {
            return config_error(&ConfigError {
                key: "scenario".into(),
                message: format!("{e}"),
            })
        }
    };
    if args.d == 0 {
        return config_error(&ConfigError {
            key: "D".into(),
            message: "must be positive".into(),
        });
    }
    let (model, phi, x) = match snr_reference_problem(scenario, args.d, args.seed) {
        Ok(p) => p,
        Err(e) => return report(&e),
    };
    let table = match snr_sweep(&model, &phi, &x, &targets, &args.k, args.m, args.seed) {
        Ok(t) => t,
        Err(e) => return report(&e),
    };
    let result = match &args.out {
        Some(path) => File::create(path)
            .and_then(|f| {
                let mut w = BufWriter::new(f);
                write_snr_csv(&mut w, &table)?;
                w.flush()
            })
            .map_err(|e| io_failure(path, e)),
        None => write_snr_csv(io::stdout().lock(), &table).map_err(|e| io_failure(Path::new("<stdout>"), e)),
    };
    if let Err(code) = result {
        return code;
    }
    for (target, slope) in &table.slopes {
        eprintln!("slope {target}: {slope:.4}");
    }
    EXIT_OK
}

fn cmd_gradcheck(args: &GradcheckArgs) -> i32 {
    if args.d.contains(&0) || args.points == 0 {
        return config_error(&ConfigError {
            key: "D".into(),
            message: "dimensions and point count must be positive".into(),
        });
    }
    let checks = match gradient_check_suite(&args.d, args.points, args.seed) {
        Ok(c) => c,
        Err(e) => return report(&e),
    };
    let mut ok = true;
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        println!("{status} {:<22} max_rel_error={:.3e} points={}", c.name, c.max_rel_error, c.points);
        ok &= c.passed();
    }
    if ok {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

fn cmd_identities(args: &IdentitiesArgs) -> i32 {
    let checks = estimator_identity_checks(args.m, args.seed)
        .and_then(|mut a| zero_variance_checks(1000, args.seed).map(|b| {
            a.extend(b);
            a
        }));
    let checks = match checks {
        Ok(c) => c,
        Err(e) => return report(&e),
    };
    let mut ok = true;
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<44} value={:.3e} tolerance={:.0e}", c.name, c.max_deviation, c.tolerance);
        ok &= c.passed;
    }
    if ok {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

fn dispatch(cli: &Cli) -> i32 {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Snr(a) => cmd_snr(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Identities(a) => cmd_identities(a),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == Some(0) {
        return config_error(&ConfigError {
            key: "threads".into(),
            message: "must be positive".into(),
        });
    }
    #[cfg(feature = "parallel")]
    {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            builder = builder.num_threads(n);
        }
        match builder.build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => {
                eprintln!("error: cannot start worker pool: {e}");
                EXIT_FAILURE
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    dispatch(&cli)
}
