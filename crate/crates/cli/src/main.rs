use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Parser, ValueEnum};
use hjblab::config::load_config;
use hjblab::manifest::RunManifest;
use hjblab::runner::{self, catalog_text, Command, RunOptions};
use serde_json::json;

/// Exit status when a run completed but some declared check failed.
const EXIT_CHECKS_FAILED: u8 = 1;
/// Exit status for invalid input, I/O failures and numerical breakdowns.
const EXIT_ERROR: u8 = 2;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    SolveHjb,
    PolicyIter,
    Verify,
    DppCheck,
    MollifySweep,
    TruncationStudy,
    Simulate,
    Counterexample,
    Catalog,
    Selftest,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::SolveHjb => Command::SolveHjb,
            Sub::PolicyIter => Command::PolicyIter,
            Sub::Verify => Command::Verify,
            Sub::DppCheck => Command::DppCheck,
            Sub::MollifySweep => Command::MollifySweep,
            Sub::TruncationStudy => Command::TruncationStudy,
            Sub::Simulate => Command::Simulate,
            Sub::Counterexample => Command::Counterexample,
            Sub::Catalog => Command::Catalog,
            Sub::Selftest => Command::Selftest,
        }
    }
}

/// HJB solver, policy iteration, mollification sweeps and Monte Carlo checks.
#[derive(Parser, Debug)]
#[command(name = "hjblab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,
    /// Scenario file (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `$HJBLAB_OUT/<command>`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, env = "HJBLAB_OUT", default_value = "hjblab-out", hide_env_values = true)]
    out_root: PathBuf,
    /// Replaces `mc.seed` of the scenario.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Treat logged warnings as failures.
    #[arg(long)]
    strict: bool,
}

static WARNINGS: AtomicUsize = AtomicUsize::new(0);

/// Forwards to env_logger and counts warnings for `--strict`.
struct CountingLogger(env_logger::Logger);

impl log::Log for CountingLogger {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::Level::Warn || self.0.enabled(m)
    }
    fn log(&self, r: &log::Record) {
        if r.level() <= log::Level::Warn {
            WARNINGS.fetch_add(1, Ordering::Relaxed);
        }
        if self.0.matches(r) {
            self.0.log(r);
        }
    }
    fn flush(&self) {
        self.0.flush();
    }
}

fn init_logging() {
    let inner = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).build();
    let level = inner.filter().max(log::LevelFilter::Warn);
    log::set_boxed_logger(Box::new(CountingLogger(inner))).expect("logger set once");
    log::set_max_level(level);
}

fn failure_summary(command: Command, manifest: Option<&RunManifest>, error: Option<String>, warnings: usize) -> String {
    let failed: Vec<_> = manifest
        .map(|m| {
            m.checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| json!({"name": c.name, "detail": c.detail}))
                .collect()
        })
        .unwrap_or_default();
    json!({
        "status": "failed",
        "command": command.name(),
        "error": error,
        "failed_checks": failed,
        "warnings": warnings,
    })
    .to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let command: Command = cli.command.into();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", failure_summary(command, None, Some(e.to_string()), 0));
            return ExitCode::from(EXIT_ERROR);
        }
    }
    let cfg = match cli.config.as_deref().map(load_config).transpose() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", failure_summary(command, None, Some(e.to_string()), 0));
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let out = cli.out.unwrap_or_else(|| cli.out_root.join(command.name()));
    let opts = RunOptions {
        seed_override: cli.seed_override,
    };
    let manifest = match runner::run(command, cfg, &out, &opts) {
        Ok(m) => m,
        Err(e) => {
            let w = WARNINGS.load(Ordering::Relaxed);
            eprintln!("{}", failure_summary(command, None, Some(e.to_string()), w));
            return ExitCode::from(EXIT_ERROR);
        }
    };
    if command == Command::Catalog {
        print!("{}", catalog_text());
    }
    let warnings = WARNINGS.load(Ordering::Relaxed);
    let strict_fail = cli.strict && warnings > 0;
    let total = manifest.checks.len();
    let passed = manifest.checks.iter().filter(|c| c.passed).count();
    println!("{}: {passed}/{total} checks passed, artifacts in {}", command, out.display());
    if manifest.passed && !strict_fail {
        ExitCode::SUCCESS
    } else {
        let error = strict_fail.then(|| format!("--strict: {warnings} warning(s) logged"));
        eprintln!("{}", failure_summary(command, Some(&manifest), error, warnings));
        ExitCode::from(EXIT_CHECKS_FAILED)
    }
}
