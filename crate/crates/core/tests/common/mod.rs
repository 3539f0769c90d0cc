//! Instance generators shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use evsched::harness::io;
use evsched::harness::{synthetic_scenario, DemandShape, SynthConfig};
use evsched::{AmbientSeries, ChargingProfile, Scenario};
use rand::Rng;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn shipped(name: &str) -> Scenario {
    io::load_scenario(&scenarios_dir().join(name)).expect("shipped scenario loads")
}

/// Evening-peak day for 30 households with `evs` EVs needing 24 kWh each.
pub fn evening(evs: usize, seed: u64) -> Scenario {
    synthetic_scenario(
        &SynthConfig::new(DemandShape::EveningPeak, 30, seed),
        vec![24.0; evs],
    )
}

/// Default transformer, random non-EV demand and weather, demands within
/// reach of every EV.
pub fn random_instance<R: Rng>(rng: &mut R, evs: usize, slots: usize) -> Scenario {
    let nonev = (0..slots).map(|_| rng.random_range(10.0..70.0)).collect();
    let ambient = AmbientSeries::from(
        (0..slots)
            .map(|_| rng.random_range(0.0..25.0))
            .collect::<Vec<f64>>(),
    );
    let mut s = Scenario::new(Vec::new(), nonev, ambient);
    let cap = s.max_energy_per_ev_kwh();
    s.demands_kwh = (0..evs).map(|_| rng.random_range(0.0..0.8 * cap)).collect();
    s
}

/// Random profile inside `[0, v_max]` meeting every demand: each row is
/// drawn uniformly and, when short, blended towards full power just enough
/// to deliver its demand.
pub fn random_feasible_profile<R: Rng>(rng: &mut R, s: &Scenario) -> ChargingProfile {
    let full = s.max_energy_per_ev_kwh();
    let rows: Vec<Vec<f64>> = s
        .demands_kwh
        .iter()
        .map(|&d| {
            let mut row: Vec<f64> = (0..s.slots())
                .map(|_| rng.random_range(0.0..=s.v_max_kw))
                .collect();
            let e = row.iter().sum::<f64>() * s.delta_h;
            if e < d {
                let theta = ((d - e) / (full - e)).min(1.0);
                for p in &mut row {
                    *p += theta * (s.v_max_kw - *p);
                }
            }
            row
        })
        .collect();
    ChargingProfile::from_rows(rows, s.slots(), s.delta_h).unwrap()
}

pub fn rel_gap(value: f64, reference: f64) -> f64 {
    (value - reference) / reference.abs()
}
