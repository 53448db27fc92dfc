//! `secest`: synthesize observer gains, run scenarios, re-check and report.

mod plots;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use secest_core::io::Table;
use secest_core::scenario::{run_scenario, synthesize_gains, GainsMode, RunOutcome, ScenarioConfig};
use secest_core::Error;

const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "secest",
    version,
    about = "Secure state estimation with a bank of circle-criterion observers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize certificates for every required sensor set.
    Synthesize(Common),
    /// Synthesize (or reuse cached) gains, simulate and check.
    Run(Common),
    /// Re-verify stored gains, simulate and check without synthesizing.
    Check(Common),
    /// Summarize an earlier run and redraw its plots.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        no_plots: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the synthesis and scenario seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the LMI eigenvalue tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    no_plots: bool,
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn load(c: &Common) -> Result<ScenarioConfig, Error> {
    let mut cfg = ScenarioConfig::load(&c.config)?;
    cfg.apply_overrides(c.seed, c.tol);
    Ok(cfg)
}

fn synthesize_cmd(c: &Common) -> Result<ExitCode, Error> {
    let cfg = load(c)?;
    let sc = cfg.compile()?;
    let g = synthesize_gains(&cfg, &sc, &c.out)?;
    if g.cached {
        println!("gains up to date in {}", c.out.join("gains").display());
    }
    println!("{:<16} {:>14} {:>12} {:>12}", "set", "lambda_max", "nu", "mu");
    for r in &g.rows {
        println!(
            "{:<16} {:>14.4e} {:>12.5} {:>12.5}",
            r.index_set.to_string(),
            r.lambda_max,
            r.nu,
            r.mu
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn draw(out: &Path, band: Option<[f64; 2]>) {
    let tables = Table::read(&out.join("trace.csv")).and_then(|t| Ok((t, Table::read(&out.join("bounds.csv"))?)));
    match tables {
        Ok((trace, bounds)) => match plots::render(&out.join("plots"), &trace, &bounds, band.map(|b| (b[0], b[1]))) {
            Ok(files) => {
                for f in files {
                    println!("plot: {}", f.display());
                }
            }
            Err(e) => eprintln!("warning: plotting failed: {e}"),
        },
        Err(e) => eprintln!("warning: cannot read tables for plots: {e}"),
    }
}

fn summarize(o: &RunOutcome) -> ExitCode {
    let r = &o.report;
    println!(
        "{}: N = {}, M = {}, attack support {}, {} samples{}",
        r.name,
        r.sensors,
        r.budget,
        r.attack_support,
        r.samples,
        if r.cached_gains { ", cached gains" } else { "" }
    );
    println!(
        "final selection {} (settled from t = {})",
        r.final_sigma,
        r.settled_at.map_or("-".into(), |t| format!("{t}"))
    );
    for ev in &r.false_alarms_averted {
        println!("false alarm averted: customer {} at t = {}", ev.customer, ev.t);
    }
    for v in &r.verdicts {
        println!("[{}] {}: {}", if v.passed { "pass" } else { "FAIL" }, v.name, v.detail);
    }
    if r.passed() {
        ExitCode::SUCCESS
    } else {
        let names: Vec<&str> = r.failures().iter().map(|v| v.name.as_str()).collect();
        eprintln!("check failure: {}", names.join(", "));
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}

fn run_cmd(c: &Common, mode: GainsMode) -> Result<ExitCode, Error> {
    let cfg = load(c)?;
    let outcome = run_scenario(&cfg, &c.out, mode)?;
    if cfg.output.plots && !c.no_plots {
        draw(&c.out, outcome.report.safety_band);
    }
    Ok(summarize(&outcome))
}

fn report_cmd(out: &Path, no_plots: bool) -> Result<ExitCode, Error> {
    let text = std::fs::read_to_string(out.join("report.json"))
        .map_err(|e| Error::Config(format!("{}: {e}", out.join("report.json").display())))?;
    let r: serde_json::Value = serde_json::from_str(&text)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    if !no_plots {
        let band = r["safety_band"]
            .as_array()
            .and_then(|b| Some([b.first()?.as_f64()?, b.get(1)?.as_f64()?]));
        draw(out, band);
    }
    let passed = r["verdicts"]
        .as_array()
        .is_some_and(|v| v.iter().all(|v| v["passed"].as_bool() == Some(true)));
    Ok(if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synthesize(c) => synthesize_cmd(c),
        Command::Run(c) => run_cmd(c, GainsMode::Synthesize),
        Command::Check(c) => run_cmd(c, GainsMode::Verify),
        Command::Report { out, no_plots } => report_cmd(out, *no_plots),
    };
    result.unwrap_or_else(|e| fail(&e))
}
