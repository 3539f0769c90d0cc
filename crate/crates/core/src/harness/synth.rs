//! Synthetic non-EV demand and ambient series, and forecast noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Mean household draw for the flat shape (kW).
const FLAT_HOUSEHOLD_KW: f64 = 1.5;
/// Evening-peak household shape (kW): base plus an evening and a smaller
/// morning Gaussian bump.
const BASE_KW: f64 = 1.0;
const EVENING_KW: f64 = 1.8;
const EVENING_HOUR: f64 = 19.5;
const EVENING_WIDTH_H: f64 = 1.5;
const MORNING_KW: f64 = 0.6;
const MORNING_HOUR: f64 = 7.5;
const MORNING_WIDTH_H: f64 = 1.2;
/// Relative amplitude of the per-slot multiplicative jitter.
const JITTER: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandShape {
    EveningPeak,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub shape: DemandShape,
    pub households: usize,
    pub seed: u64,
    #[serde(default = "default_slots")]
    pub slots: usize,
    #[serde(default = "default_delta_h")]
    pub delta_h: f64,
    /// Clock time of the first slot, in hours.
    #[serde(default = "default_start_hour")]
    pub start_hour: f64,
}

fn default_slots() -> usize {
    30
}
fn default_delta_h() -> f64 {
    0.5
}
fn default_start_hour() -> f64 {
    17.0
}

impl SynthConfig {
    pub fn new(shape: DemandShape, households: usize, seed: u64) -> Self {
        Self {
            shape,
            households,
            seed,
            slots: default_slots(),
            delta_h: default_delta_h(),
            start_hour: default_start_hour(),
        }
    }

    /// Clock hour in `[0, 24)` at which slot `t` (0-based) starts.
    pub fn slot_hour(&self, t: usize) -> f64 {
        (self.start_hour + t as f64 * self.delta_h).rem_euclid(24.0)
    }
}

fn clock_distance(h: f64, center: f64) -> f64 {
    let d = (h - center).rem_euclid(24.0);
    d.min(24.0 - d)
}

fn bump(h: f64, center: f64, width: f64) -> f64 {
    let z = clock_distance(h, center) / width;
    (-0.5 * z * z).exp()
}

/// Per-household evening-peak draw (kW) at clock hour `h`.
pub fn household_kw(h: f64) -> f64 {
    BASE_KW
        + EVENING_KW * bump(h, EVENING_HOUR, EVENING_WIDTH_H)
        + MORNING_KW * bump(h, MORNING_HOUR, MORNING_WIDTH_H)
}

/// Non-EV demand (kW) and ambient temperature (°C) series.
pub fn synth_demand(cfg: &SynthConfig) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let households = cfg.households as f64;
    match cfg.shape {
        DemandShape::Flat => (
            vec![households * FLAT_HOUSEHOLD_KW; cfg.slots],
            vec![20.0; cfg.slots],
        ),
        DemandShape::EveningPeak => {
            let mean_ambient = 10.0 + rng.random_range(-2.0..2.0);
            (0..cfg.slots)
                .map(|t| {
                    let h = cfg.slot_hour(t);
                    let jitter = 1.0 + rng.random_range(-JITTER..JITTER);
                    let load = households * household_kw(h) * jitter;
                    // Warmest mid-afternoon, coldest before dawn.
                    let ambient = mean_ambient + 4.0 * (2.0 * PI * (h - 15.0) / 24.0).cos();
                    (load, ambient)
                })
                .unzip()
        }
    }
}

/// Additive white Gaussian forecast error at a given forecast SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastNoise {
    /// Forecast SNR in dB; `f64::INFINITY` means a perfect forecast.
    pub fsnr_db: f64,
    pub seed: u64,
    /// Nominal slots per day, recorded for reproducibility; the signal
    /// power is averaged over the series the noise is applied to.
    pub day_slots: usize,
}

impl ForecastNoise {
    pub fn new(fsnr_db: f64, seed: u64) -> Self {
        Self {
            fsnr_db,
            seed,
            day_slots: 48,
        }
    }

    pub fn is_perfect(&self) -> bool {
        self.fsnr_db == f64::INFINITY
    }
}

/// Noise standard deviation for a series at the given FSNR.
pub fn forecast_sigma(load_kw: &[f64], fsnr_db: f64) -> f64 {
    if load_kw.is_empty() || fsnr_db == f64::INFINITY {
        return 0.0;
    }
    let power = load_kw.iter().map(|l| l * l).sum::<f64>() / load_kw.len() as f64;
    (power * 10f64.powf(-fsnr_db / 10.0)).sqrt()
}

/// Noisy forecast `max(l_t + z_t, 0)`.
pub fn apply_forecast_noise(load_kw: &[f64], noise: &ForecastNoise) -> Vec<f64> {
    let sigma = forecast_sigma(load_kw, noise.fsnr_db);
    if sigma == 0.0 {
        return load_kw.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    load_kw
        .iter()
        .map(|&l| (l + normal.sample(&mut rng)).max(0.0))
        .collect()
}
