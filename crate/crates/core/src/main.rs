use clap::Parser;
use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use tval::config::{Mode, Scenario};
use tval::sim::run_scenario;
use tval::telemetry::write_csv;

/// Run a drive-cycle scenario and write its telemetry and summary.
#[derive(Debug, Parser)]
#[command(name = "tval", version)]
struct Cli {
    /// Scenario configuration (TOML).
    #[arg(short, long, default_value = "crates/core/scenarios/default.toml")]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// tval, passive, driver-only or tv-always.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(short = 'n', long)]
    particles: Option<usize>,
    /// Shorten the scenario, s.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Print the summary without writing telemetry.
    #[arg(long)]
    summary_only: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<bool, Box<dyn std::error::Error>> {
    let mut scenario = Scenario::load(&cli.scenario)?;
    let base = cli.scenario.parent().unwrap_or(std::path::Path::new("."));
    let mut cfg = scenario.config.clone();
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    if let Some(n) = cli.particles {
        cfg.filter.particles = n;
    }
    if let Some(d) = cli.duration {
        cfg.duration = d;
        cfg.surface.retain(|s| s.t_start < d);
    }
    if cfg != scenario.config {
        scenario = Scenario::build(cfg, base)?;
    }

    let out = run_scenario(&scenario)?;
    let text = out.summary.to_text();
    print!("{text}");
    if !cli.summary_only {
        fs::create_dir_all(&cli.out)?;
        let stem = format!("{}_seed{}", scenario.config.mode, scenario.config.seed);
        let mut w = BufWriter::new(fs::File::create(cli.out.join(format!("{stem}.csv")))?);
        write_csv(&mut w, &out.records)?;
        fs::write(cli.out.join(format!("{stem}_summary.txt")), &text)?;
    }
    if let Some(f) = &out.summary.failure {
        eprintln!("run aborted: {f}");
    }
    Ok(out.completed())
}
