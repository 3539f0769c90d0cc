//! Scenario I/O, synthetic data, policy evaluation and comparison sweeps.

pub mod io;
pub mod synth;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Deserialize;

use crate::baselines::{pac_policy, uniform_policy, PacConfig};
use crate::central::{solve_centralized, two_step_solve, SolveOptions, SolveReport};
use crate::distributed::{brd_run, default_init, BrdConfig, BrdRule};
use crate::error::{Error, Result};
use crate::model::lifetime_years;
use crate::problem::{tol, total_cost, ChargingProfile, Scenario};

pub use synth::{
    apply_forecast_noise, forecast_sigma, synth_demand, DemandShape, ForecastNoise, SynthConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Central,
    TwoStep,
    Ddc,
    Ivfa,
    Rect,
    Pac,
    Uniform,
}

impl Policy {
    pub const ALL: [Policy; 7] = [
        Policy::Central,
        Policy::TwoStep,
        Policy::Ddc,
        Policy::Ivfa,
        Policy::Rect,
        Policy::Pac,
        Policy::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Central => "central",
            Policy::TwoStep => "two_step",
            Policy::Ddc => "ddc",
            Policy::Ivfa => "ivfa",
            Policy::Rect => "rect",
            Policy::Pac => "pac",
            Policy::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::validation(
                    "policy",
                    format!(
                        "unknown policy `{s}` (expected one of {})",
                        Policy::ALL.map(Policy::name).join(", ")
                    ),
                )
            })
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Knobs shared by every policy run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOptions {
    pub seed: u64,
    /// Rectangular power (kW); `v_max` when `None`.
    pub rect_power: Option<f64>,
    pub max_rounds: usize,
    pub solve: SolveOptions<f64>,
    pub arrival_mean_slots: f64,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            rect_power: None,
            max_rounds: 50,
            solve: SolveOptions::default(),
            arrival_mean_slots: 5.0,
        }
    }
}

impl PolicyOptions {
    pub fn brd_config(&self, rule: BrdRule) -> BrdConfig<f64> {
        let mut cfg = BrdConfig::new(rule);
        cfg.max_rounds = self.max_rounds;
        cfg.rect_power = self.rect_power;
        cfg.seed = self.seed;
        cfg.inner = SolveOptions {
            temp_constraint: false,
            ..self.solve
        };
        cfg
    }
}

/// Runs a centralized solver; when the planning data itself admits no
/// profile below `x_max` (typically a noisy forecast), plans without the
/// limit and leaves the violation to the evaluation.
fn with_thermal_fallback(
    s: &Scenario<f64>,
    opts: &PolicyOptions,
    solve: fn(&Scenario<f64>, &SolveOptions<f64>) -> Result<SolveReport<f64>>,
) -> Result<ChargingProfile<f64>> {
    match solve(s, &opts.solve) {
        Err(Error::Infeasible(report))
            if opts.solve.temp_constraint && report.min_energy_slack() >= -tol::ENERGY_KWH =>
        {
            let relaxed = SolveOptions {
                temp_constraint: false,
                ..opts.solve
            };
            solve(s, &relaxed).map(|r| r.profile)
        }
        other => other.map(|r| r.profile),
    }
}

/// Charging profile a policy plans on `s`.
pub fn run_policy(
    policy: Policy,
    s: &Scenario<f64>,
    opts: &PolicyOptions,
) -> Result<ChargingProfile<f64>> {
    let brd = |rule| brd_run(s, &opts.brd_config(rule), &default_init(s)).map(|o| o.report.profile);
    match policy {
        Policy::Central => with_thermal_fallback(s, opts, solve_centralized),
        Policy::TwoStep => with_thermal_fallback(s, opts, two_step_solve),
        Policy::Ddc => brd(BrdRule::Ddc),
        Policy::Ivfa => brd(BrdRule::Ivfa),
        Policy::Rect => brd(BrdRule::Rect),
        Policy::Pac => pac_policy(
            s,
            &PacConfig {
                arrival_mean_slots: opts.arrival_mean_slots,
                seed: opts.seed,
            },
        )
        .map(|o| o.profile),
        Policy::Uniform => Ok(uniform_policy(s)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyMetrics {
    pub lifetime_years: f64,
    pub peak_temp_c: f64,
    pub total_joule_kwh: f64,
    pub total_cost: f64,
    /// Some slot exceeded the shutdown temperature.
    pub shutdown_violated: bool,
    /// Demand left undelivered, summed over the fleet (kWh).
    pub energy_shortfall_kwh: f64,
}

/// Metrics of a profile under the (true) scenario.
pub fn evaluate(v: &ChargingProfile<f64>, s: &Scenario<f64>) -> Result<PolicyMetrics> {
    let cost = total_cost(v, s)?;
    let peak = cost.trace.peak_temperature();
    let shortfall = (0..s.ev_count())
        .map(|i| (s.demands_kwh[i] - v.delivered_kwh(i)).max(0.0))
        .fold(0.0, |a, b| a + b);
    Ok(PolicyMetrics {
        lifetime_years: lifetime_years(&cost.trace.faa)?,
        peak_temp_c: peak,
        total_joule_kwh: cost.trace.joule.iter().fold(0.0, |a, b| a + b),
        total_cost: cost.total,
        shutdown_violated: peak > s.thermal.x_max,
        energy_shortfall_kwh: shortfall,
    })
}

/// Plans with a (possibly noisy) forecast of the non-EV demand and
/// evaluates the plan against the true scenario.
pub fn plan_and_evaluate(
    policy: Policy,
    truth: &Scenario<f64>,
    noise: Option<&ForecastNoise>,
    opts: &PolicyOptions,
) -> Result<(ChargingProfile<f64>, PolicyMetrics)> {
    let profile = match noise {
        Some(n) if !n.is_perfect() => {
            let forecast = truth.with_nonev(apply_forecast_noise(&truth.nonev_kw, n));
            run_policy(policy, &forecast, opts)?
        }
        _ => run_policy(policy, truth, opts)?,
    };
    let metrics = evaluate(&profile, truth)?;
    Ok((profile, metrics))
}

/// Policy comparison over fleet sizes and forecast qualities.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: Scenario<f64>,
    pub policies: Vec<Policy>,
    pub ev_counts: Vec<usize>,
    pub demand_kwh: f64,
    /// Forecast SNRs in dB; `INFINITY` is a perfect forecast.
    pub fsnr_db: Vec<f64>,
    /// Noise realizations averaged per noisy cell.
    pub noise_seeds: Vec<u64>,
    pub options: PolicyOptions,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub policy: Policy,
    pub ev_count: usize,
    pub fsnr_db: f64,
    pub metrics: PolicyMetrics,
    /// Mean `(L_perfect - L) / L_perfect` over noise realizations.
    pub lifetime_loss_rel: f64,
}

fn cell_name(policy: Policy, evs: usize, fsnr: f64, seed: Option<u64>) -> String {
    match seed {
        Some(seed) => format!("policy {policy}, {evs} EVs, FSNR {fsnr} dB, noise seed {seed}"),
        None => format!("policy {policy}, {evs} EVs, FSNR {fsnr} dB"),
    }
}

fn mean_metrics(runs: &[PolicyMetrics]) -> PolicyMetrics {
    let n = runs.len() as f64;
    let avg = |f: fn(&PolicyMetrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
    PolicyMetrics {
        lifetime_years: avg(|m| m.lifetime_years),
        peak_temp_c: avg(|m| m.peak_temp_c),
        total_joule_kwh: avg(|m| m.total_joule_kwh),
        total_cost: avg(|m| m.total_cost),
        shutdown_violated: runs.iter().any(|m| m.shutdown_violated),
        energy_shortfall_kwh: avg(|m| m.energy_shortfall_kwh),
    }
}

/// One row per (policy, EV count, FSNR). Cells run in parallel.
pub fn compare_policies(spec: &SweepSpec) -> Result<Vec<ComparisonRow>> {
    if spec.fsnr_db.iter().any(|f| f.is_nan()) {
        return Err(Error::validation("sweep", "FSNR values must not be NaN"));
    }
    if spec.fsnr_db.iter().any(|f| f.is_finite()) && spec.noise_seeds.is_empty() {
        return Err(Error::validation(
            "sweep",
            "noisy cells need at least one noise seed",
        ));
    }
    let groups: Vec<(Policy, usize)> = spec
        .policies
        .iter()
        .flat_map(|&p| spec.ev_counts.iter().map(move |&n| (p, n)))
        .collect();

    let per_group: Vec<Vec<ComparisonRow>> = groups
        .par_iter()
        .map(|&(policy, evs)| {
            let truth = spec.base.with_demands(vec![spec.demand_kwh; evs]);
            let perfect = plan_and_evaluate(policy, &truth, None, &spec.options)
                .map_err(|e| Error::Cell {
                    cell: cell_name(policy, evs, f64::INFINITY, None),
                    source: Box::new(e),
                })?
                .1;
            spec.fsnr_db
                .iter()
                .map(|&fsnr| {
                    if fsnr == f64::INFINITY {
                        return Ok(ComparisonRow {
                            policy,
                            ev_count: evs,
                            fsnr_db: fsnr,
                            metrics: perfect,
                            lifetime_loss_rel: 0.0,
                        });
                    }
                    let runs = spec
                        .noise_seeds
                        .iter()
                        .map(|&seed| {
                            let noise = ForecastNoise::new(fsnr, seed);
                            plan_and_evaluate(policy, &truth, Some(&noise), &spec.options)
                                .map(|(_, m)| m)
                                .map_err(|e| Error::Cell {
                                    cell: cell_name(policy, evs, fsnr, Some(seed)),
                                    source: Box::new(e),
                                })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let loss = runs
                        .iter()
                        .map(|m| {
                            (perfect.lifetime_years - m.lifetime_years) / perfect.lifetime_years
                        })
                        .sum::<f64>()
                        / runs.len() as f64;
                    Ok(ComparisonRow {
                        policy,
                        ev_count: evs,
                        fsnr_db: fsnr,
                        metrics: mean_metrics(&runs),
                        lifetime_loss_rel: loss,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_group.into_iter().flatten().collect())
}

pub const COMPARISON_HEADER: &str = "policy,ev_count,fsnr_db,lifetime_years,peak_temp_c,total_joule_kwh,total_cost,shutdown_violated,energy_shortfall_kwh,lifetime_loss_rel";

fn fmt_fsnr(f: f64) -> String {
    if f == f64::INFINITY {
        "inf".into()
    } else {
        format!("{f}")
    }
}

/// CSV line for one row: lifetime and temperature with 2 decimals, energy
/// with 3, cost and relative loss in full precision.
pub fn comparison_line(r: &ComparisonRow) -> String {
    let m = &r.metrics;
    format!(
        "{},{},{},{:.2},{:.2},{:.3},{},{},{:.3},{}",
        r.policy,
        r.ev_count,
        fmt_fsnr(r.fsnr_db),
        m.lifetime_years,
        m.peak_temp_c,
        m.total_joule_kwh,
        m.total_cost,
        m.shutdown_violated,
        m.energy_shortfall_kwh,
        r.lifetime_loss_rel
    )
}

pub fn comparison_to_csv(rows: &[ComparisonRow]) -> String {
    let mut out = format!("{COMPARISON_HEADER}\n");
    for r in rows {
        out.push_str(&comparison_line(r));
        out.push('\n');
    }
    out
}

#[derive(Debug, Deserialize)]
struct ComparisonRecord {
    policy: Policy,
    ev_count: usize,
    fsnr_db: String,
    lifetime_years: f64,
    peak_temp_c: f64,
    total_joule_kwh: f64,
    total_cost: f64,
    shutdown_violated: bool,
    energy_shortfall_kwh: f64,
    lifetime_loss_rel: f64,
}

pub fn comparison_from_csv(text: &str, origin: &Path) -> Result<Vec<ComparisonRow>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map(|h| h.iter().collect::<Vec<_>>().join(","))
        .unwrap_or_default();
    if header != COMPARISON_HEADER {
        return Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 1,
            reason: format!("expected header `{COMPARISON_HEADER}`"),
        });
    }
    reader
        .deserialize::<ComparisonRecord>()
        .enumerate()
        .map(|(k, rec)| {
            let parse_err = |reason: String| Error::Parse {
                path: origin.to_path_buf(),
                line: k + 2,
                reason,
            };
            let r = rec.map_err(|e| parse_err(e.to_string()))?;
            let fsnr_db = if r.fsnr_db == "inf" {
                f64::INFINITY
            } else {
                r.fsnr_db
                    .parse()
                    .map_err(|_| parse_err(format!("bad FSNR `{}`", r.fsnr_db)))?
            };
            Ok(ComparisonRow {
                policy: r.policy,
                ev_count: r.ev_count,
                fsnr_db,
                metrics: PolicyMetrics {
                    lifetime_years: r.lifetime_years,
                    peak_temp_c: r.peak_temp_c,
                    total_joule_kwh: r.total_joule_kwh,
                    total_cost: r.total_cost,
                    shutdown_violated: r.shutdown_violated,
                    energy_shortfall_kwh: r.energy_shortfall_kwh,
                },
                lifetime_loss_rel: r.lifetime_loss_rel,
            })
        })
        .collect()
}

/// Metrics CSV for a single plan (same columns as the comparison table).
pub fn metrics_to_csv(policy: Policy, evs: usize, fsnr_db: f64, m: &PolicyMetrics) -> String {
    comparison_to_csv(&[ComparisonRow {
        policy,
        ev_count: evs,
        fsnr_db,
        metrics: *m,
        lifetime_loss_rel: 0.0,
    }])
}

/// Sweep description as read from a TOML run file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Scenario file; relative paths resolve against the run file.
    pub scenario: Option<PathBuf>,
    pub synthetic: Option<SynthConfig>,
    pub policies: Vec<Policy>,
    pub ev_counts: Vec<usize>,
    #[serde(default = "default_demand")]
    pub demand_kwh: f64,
    #[serde(default = "default_fsnr")]
    pub fsnr_db: Vec<f64>,
    #[serde(default)]
    pub noise_seeds: Vec<u64>,
    #[serde(default)]
    pub seed: u64,
    pub rect_power_kw: Option<f64>,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    /// Comparison CSV destination; relative paths resolve against the run file.
    pub out: Option<PathBuf>,
}

fn default_demand() -> f64 {
    24.0
}
fn default_fsnr() -> Vec<f64> {
    vec![f64::INFINITY]
}
fn default_rounds() -> usize {
    50
}

impl RunSpec {
    pub fn load(path: &Path) -> Result<(Self, SweepSpec)> {
        let text = std::fs::read_to_string(path).map_err(io::io_err(path))?;
        let spec: RunSpec = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .unwrap_or(0),
            reason: e.message().to_string(),
        })?;
        let base_dir = path.parent().unwrap_or(Path::new("."));
        let sweep = spec.to_sweep(base_dir)?;
        Ok((spec, sweep))
    }

    pub fn to_sweep(&self, base_dir: &Path) -> Result<SweepSpec> {
        let base = match (&self.scenario, &self.synthetic) {
            (Some(file), None) => {
                let p = if file.is_absolute() {
                    file.clone()
                } else {
                    base_dir.join(file)
                };
                io::load_scenario(&p)?
            }
            (None, Some(cfg)) => synthetic_scenario(cfg, Vec::new()),
            _ => {
                return Err(Error::validation(
                    "run spec",
                    "give exactly one of `scenario` or `[synthetic]`",
                ))
            }
        };
        if !(self.demand_kwh >= 0.0) {
            return Err(Error::validation("run spec", "demand_kwh must be >= 0"));
        }
        Ok(SweepSpec {
            base,
            policies: self.policies.clone(),
            ev_counts: self.ev_counts.clone(),
            demand_kwh: self.demand_kwh,
            fsnr_db: self.fsnr_db.clone(),
            noise_seeds: self.noise_seeds.clone(),
            options: PolicyOptions {
                seed: self.seed,
                rect_power: self.rect_power_kw,
                max_rounds: self.max_rounds,
                ..PolicyOptions::default()
            },
        })
    }

    pub fn out_path(&self, base_dir: &Path) -> Option<PathBuf> {
        self.out.as_ref().map(|p| {
            if p.is_absolute() {
                p.clone()
            } else {
                base_dir.join(p)
            }
        })
    }
}

/// Default-transformer scenario over synthetic demand and weather.
pub fn synthetic_scenario(cfg: &SynthConfig, demands_kwh: Vec<f64>) -> Scenario<f64> {
    let (nonev, ambient) = synth_demand(cfg);
    let mut s = Scenario::new(demands_kwh, nonev, crate::model::AmbientSeries(ambient));
    s.delta_h = cfg.delta_h;
    s
}
