//! Reference charging policies without any optimization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::problem::{self, ChargingProfile, Scenario};
use crate::scalar::Scalar;

/// Plug-and-charge: every EV charges at full power from its arrival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacConfig {
    /// Mean of the Poisson arrival delay, in slots.
    pub arrival_mean_slots: f64,
    pub seed: u64,
}

impl Default for PacConfig {
    fn default() -> Self {
        Self {
            arrival_mean_slots: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacOutcome<S> {
    pub profile: ChargingProfile<S>,
    /// Arrival slot of each EV (1-based, clamped to the horizon).
    pub arrivals: Vec<usize>,
    /// Demand left undelivered at the end of the horizon (kWh).
    pub shortfall_kwh: Vec<S>,
}

/// Samples arrival slots `1 + Poisson(mean)`, clamped to `slots`.
pub fn sample_arrivals(evs: usize, slots: usize, cfg: &PacConfig) -> Result<Vec<usize>> {
    if !(cfg.arrival_mean_slots > 0.0) || !cfg.arrival_mean_slots.is_finite() {
        return Err(Error::validation("PaC config", "arrival mean must be > 0"));
    }
    let poisson = Poisson::new(cfg.arrival_mean_slots)
        .map_err(|e| Error::validation("PaC config", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..evs)
        .map(|_| {
            let delay: f64 = poisson.sample(&mut rng);
            (1 + delay as usize).min(slots)
        })
        .collect())
}

/// Full-power charging from given arrival slots (1-based) until each
/// demand is met, trimming the final slot.
pub fn charge_from_arrivals<S: Scalar>(
    s: &Scenario<S>,
    arrivals: &[usize],
) -> Result<PacOutcome<S>> {
    let (evs, slots) = (s.ev_count(), s.slots());
    if arrivals.len() != evs {
        return Err(Error::Dimension {
            what: "arrivals",
            expected: evs,
            got: arrivals.len(),
        });
    }
    let slot_energy = s.v_max_kw * s.delta_h;
    let mut rows = Vec::with_capacity(evs);
    let mut shortfall_kwh = Vec::with_capacity(evs);
    for (&demand, &arrival) in s.demands_kwh.iter().zip(arrivals) {
        if arrival == 0 || arrival > slots {
            return Err(Error::Index {
                index: arrival,
                len: slots,
            });
        }
        let mut row = vec![S::zero(); slots];
        let mut remaining = demand;
        for p in row.iter_mut().skip(arrival - 1) {
            if remaining <= S::zero() {
                break;
            }
            let e = remaining.min(slot_energy);
            *p = e / s.delta_h;
            remaining -= e;
        }
        shortfall_kwh.push(remaining.max(S::zero()));
        rows.push(row);
    }
    Ok(PacOutcome {
        profile: ChargingProfile::from_rows(rows, slots, s.delta_h)?,
        arrivals: arrivals.to_vec(),
        shortfall_kwh,
    })
}

pub fn pac_policy<S: Scalar>(s: &Scenario<S>, cfg: &PacConfig) -> Result<PacOutcome<S>> {
    let arrivals = sample_arrivals(s.ev_count(), s.slots(), cfg)?;
    charge_from_arrivals(s, &arrivals)
}

/// Every demand spread evenly over the horizon, clipped to `v_max`.
///
/// Stand-in for published uniform-share schedulers; not a reproduction
/// of any of them.
pub fn uniform_policy<S: Scalar>(s: &Scenario<S>) -> ChargingProfile<S> {
    problem::uniform_profile(s)
}
