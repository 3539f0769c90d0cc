use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evsched::harness::{self, io, ForecastNoise, RunSpec};
use evsched::{Error, Policy, PolicyOptions, Scenario};

#[derive(Parser)]
#[command(
    name = "evsched",
    version,
    about = "Transformer-aware EV charging schedules"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a charging profile with one policy and evaluate it.
    Solve(SolveArgs),
    /// Evaluate an existing charging profile.
    Simulate(SimulateArgs),
    /// Compare policies over fleet sizes and forecast qualities.
    Sweep(SweepArgs),
    /// Report convexity and feasibility of a scenario.
    Check(CheckArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "central")]
    policy: Policy,
    /// Forecast SNR in dB for the non-EV demand, or `inf`.
    #[arg(long, default_value = "inf", value_parser = parse_fsnr)]
    fsnr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rectangular-profile power in kW (defaults to v_max).
    #[arg(long)]
    rect_power: Option<f64>,
    #[arg(long, default_value_t = 50)]
    max_rounds: usize,
    /// Output directory for profile.csv, trace.csv and metrics.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Profile CSV with columns ev,slot,kw.
    #[arg(long)]
    profile: PathBuf,
    /// Output directory for trace.csv and metrics.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Run file (TOML).
    runspec: PathBuf,
    /// Comparison CSV destination; overrides the run file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    scenario: PathBuf,
}

fn parse_fsnr(s: &str) -> Result<f64, String> {
    match s {
        "inf" | "Inf" | "infinity" => Ok(f64::INFINITY),
        _ => s
            .parse::<f64>()
            .ok()
            .filter(|v| !v.is_nan())
            .ok_or_else(|| format!("`{s}` is not a number of dB or `inf`")),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Infeasible(_)
        | Error::EvInfeasible { .. }
        | Error::AllocationInfeasible { .. }
        | Error::NonConvex { .. } => 2,
        Error::NotConverged { .. } | Error::EnergyNotActive { .. } => 4,
        _ => 3,
    }
}

fn write(path: &Path, text: &str) -> evsched::Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> evsched::Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn emit(
    out: Option<&Path>,
    v: &evsched::ChargingProfile,
    s: &Scenario,
    metrics_csv: &str,
) -> evsched::Result<()> {
    let Some(dir) = out else {
        print!("{metrics_csv}");
        return Ok(());
    };
    create_dir(dir)?;
    write(&dir.join("profile.csv"), &io::profile_to_csv(v))?;
    let cost = evsched::total_cost(v, s)?;
    write(
        &dir.join("trace.csv"),
        &io::trace_to_csv(&cost.load_pu, &cost.trace),
    )?;
    write(&dir.join("metrics.csv"), metrics_csv)?;
    print!("{metrics_csv}");
    Ok(())
}

fn solve(a: &SolveArgs) -> evsched::Result<()> {
    let s = io::load_scenario(&a.scenario)?;
    let opts = PolicyOptions {
        seed: a.seed,
        rect_power: a.rect_power,
        max_rounds: a.max_rounds,
        ..PolicyOptions::default()
    };
    let noise = ForecastNoise::new(a.fsnr, a.seed);
    let (profile, metrics) = harness::plan_and_evaluate(a.policy, &s, Some(&noise), &opts)?;
    let csv = harness::metrics_to_csv(a.policy, s.ev_count(), a.fsnr, &metrics);
    emit(a.out.as_deref(), &profile, &s, &csv)
}

fn simulate(a: &SimulateArgs) -> evsched::Result<()> {
    let s = io::load_scenario(&a.scenario)?;
    let v = io::read_profile(&a.profile, &s)?;
    let metrics = harness::evaluate(&v, &s)?;
    let csv = format!(
        "lifetime_years,peak_temp_c,total_joule_kwh,total_cost,shutdown_violated,energy_shortfall_kwh\n{:.2},{:.2},{:.3},{},{},{:.3}\n",
        metrics.lifetime_years,
        metrics.peak_temp_c,
        metrics.total_joule_kwh,
        metrics.total_cost,
        metrics.shutdown_violated,
        metrics.energy_shortfall_kwh
    );
    emit(a.out.as_deref(), &v, &s, &csv)
}

fn sweep(a: &SweepArgs) -> evsched::Result<()> {
    let (spec, sweep) = RunSpec::load(&a.runspec)?;
    let base_dir = a.runspec.parent().unwrap_or(Path::new("."));
    let rows = harness::compare_policies(&sweep)?;
    let csv = harness::comparison_to_csv(&rows);
    match a.out.clone().or_else(|| spec.out_path(base_dir)) {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            write(&path, &csv)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn check(a: &CheckArgs) -> evsched::Result<()> {
    let s = io::load_scenario(&a.scenario)?;
    let convexity = evsched::check_convexity(&s);
    let feasibility = evsched::check_feasibility(&s)?;
    println!("convex,{},margin,{}", convexity.convex, convexity.margin);
    println!(
        "feasible,{},energy_ok,{},thermal_ok,{}",
        feasibility.feasible, feasibility.energy_ok, feasibility.thermal_ok
    );
    if !convexity.convex {
        return Err(Error::NonConvex {
            margin: convexity.margin,
        });
    }
    if !feasibility.feasible {
        return Err(Error::Infeasible(Box::new(feasibility.report)));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_root_cause() {
        let stalled = Error::NotConverged {
            iters: 10,
            residual: 1.0,
        };
        assert_eq!(exit_code(&stalled), 4);
        let nested = Error::Cell {
            cell: "ddc".into(),
            source: Box::new(Error::BestResponse {
                ev: 3,
                source: Box::new(Error::AllocationInfeasible { gap_kwh: 1.0 }),
            }),
        };
        assert_eq!(exit_code(&nested), 2);
        assert_eq!(exit_code(&Error::NonConvex { margin: -1.0 }), 2);
        assert_eq!(exit_code(&Error::Domain("x".into())), 3);
    }

    #[test]
    fn fsnr_accepts_numbers_and_inf() {
        assert_eq!(parse_fsnr("inf"), Ok(f64::INFINITY));
        assert_eq!(parse_fsnr("-3.5"), Ok(-3.5));
        assert!(parse_fsnr("NaN").is_err());
        assert!(parse_fsnr("loud").is_err());
    }
}
