use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qcbt::scenarios::{parse_config, run_scenario, write_report, ScenarioKind};
use qcbt::Error;

/// Monte Carlo simulator for quantum-correlation beam tracking.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// Scenario to run.
    scenario: ScenarioKind,
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// RNG seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the binary event files.
    #[arg(long)]
    keep_events: bool,
    /// Suppress warnings and the summary line.
    #[arg(short, long)]
    quiet: bool,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn fail(e: &Error, code: u8) -> ExitCode {
    // Messages already embed their causes.
    eprintln!("error: {e}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match parse_config(&cli.config) {
        Ok(c) => c,
        Err(e) => return fail(&e, EXIT_CONFIG),
    };
    if let Some(s) = cfg.scenario {
        if s != cli.scenario && !cli.quiet {
            eprintln!("warning: config names scenario {}, running {}", s.as_str(), cli.scenario.as_str());
        }
    }
    let Some(seed) = cli.seed.or(cfg.seed) else {
        return fail(&Error::Config { line: None, message: "a seed is required (--seed or `seed` in the config)".into() }, EXIT_CONFIG);
    };
    let Some(out) = cli.out.clone().or_else(|| cfg.output.clone()) else {
        return fail(&Error::Config { line: None, message: "an output directory is required (--out or `output` in the config)".into() }, EXIT_CONFIG);
    };
    if !cli.quiet {
        for w in cfg.warnings() {
            eprintln!("warning: {w}");
        }
    }
    let report = match run_scenario(&cfg, cli.scenario, seed, cli.keep_events) {
        Ok(r) => r,
        Err(e) if e.is_config() => return fail(&e, EXIT_CONFIG),
        Err(e) => return fail(&e, EXIT_RUNTIME),
    };
    match write_report(&report, &out) {
        Ok(files) => {
            if !cli.quiet {
                eprintln!("{}: {} files in {} ({:.1} s)", report.scenario, files.len(), out.display(), report.wall_clock_s);
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, EXIT_RUNTIME),
    }
}
