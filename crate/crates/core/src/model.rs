//! Transformer hot-spot thermal dynamics, ageing and Joule losses.
//!
//! The hot-spot temperature follows the linearized top-oil-rise recursion
//!
//! ```text
//! x_t = a * x_{t-1} + b1 * u_t^2 + b2 * u_{t-1}^2 + c_t
//! c_t = amb_gain * (amb_offset + ambient_t)
//! ```
//!
//! with `u_t` the total load in per-unit of the transformer nominal active
//! power. The instantaneous factor of accelerated ageing is
//! `A_t = exp(alpha * x_t + beta)`, equal to one at the nominal hot-spot
//! temperature `-beta / alpha`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Arrhenius activation constant (K) used to linearize ageing around nominal.
const AGEING_ACTIVATION_K: f64 = 15_000.0;
const NOMINAL_HOT_SPOT_C: f64 = 98.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalParams<S> {
    /// Decay of the previous hot-spot temperature, in `[0, 1]`.
    pub a: S,
    /// Gain on the squared current load, `>= 0`.
    pub b1: S,
    /// Gain on the squared previous load, `<= 0`.
    pub b2: S,
    pub amb_gain: S,
    pub amb_offset: S,
    /// Initial hot-spot temperature (°C).
    pub x0: S,
    /// Initial per-unit load.
    pub u0: S,
    /// Shutdown hot-spot temperature (°C).
    pub x_max: S,
    /// Ageing slope (1/°C), `> 0`.
    pub alpha: S,
    /// Ageing intercept, `<= 0`.
    pub beta: S,
}

impl<S: Scalar> Default for ThermalParams<S> {
    /// 100 kVA distribution transformer with FAA(98 °C) = 1.
    fn default() -> Self {
        let alpha = AGEING_ACTIVATION_K / (NOMINAL_HOT_SPOT_C + 273.0).powi(2);
        Self {
            a: S::lit(0.83),
            b1: S::lit(30.91),
            b2: S::lit(-19.09),
            amb_gain: S::lit(0.17),
            amb_offset: S::lit(8.47),
            x0: S::lit(NOMINAL_HOT_SPOT_C),
            u0: S::one(),
            x_max: S::lit(150.0),
            alpha: S::lit(alpha),
            beta: S::lit(-alpha * NOMINAL_HOT_SPOT_C),
        }
    }
}

impl<S: Scalar> ThermalParams<S> {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::validation("thermal parameters", reason))
            }
        };
        check(
            self.a >= S::zero() && self.a <= S::one(),
            "a must lie in [0, 1]",
        )?;
        check(self.b1 >= S::zero(), "b1 must be >= 0")?;
        check(self.b2 <= S::zero(), "b2 must be <= 0")?;
        check(self.alpha > S::zero(), "alpha must be > 0")?;
        check(self.beta <= S::zero(), "beta must be <= 0")?;
        check(self.x0 >= S::zero(), "x0 must be >= 0")?;
        check(self.u0 >= S::zero(), "u0 must be >= 0")?;
        check(self.x_max > S::zero(), "x_max must be > 0")?;
        Ok(())
    }

    /// Ambient forcing term `c_t` for an ambient temperature in °C.
    #[inline]
    pub fn forcing(&self, ambient_c: S) -> S {
        self.amb_gain * (self.amb_offset + ambient_c)
    }

    /// `a*b1 + b2`; the cost is convex in the loads iff this is non-negative.
    #[inline]
    pub fn convexity_margin(&self) -> S {
        self.a * self.b1 + self.b2
    }

    /// Hot-spot temperature at which the ageing factor equals one.
    pub fn nominal_temperature(&self) -> S {
        -self.beta / self.alpha
    }
}

/// Per-unit total load per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSeries<S> {
    slots: Vec<S>,
    delta_h: S,
}

impl<S: Scalar> LoadSeries<S> {
    pub fn new(slots: Vec<S>, delta_h: S) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::validation("load series", "needs at least one slot"));
        }
        if let Some(t) = slots.iter().position(|&u| !(u >= S::zero())) {
            return Err(Error::validation(
                "load series",
                format!("slot {} is negative or NaN", t + 1),
            ));
        }
        if !(delta_h > S::zero()) {
            return Err(Error::validation(
                "load series",
                "slot duration must be > 0",
            ));
        }
        Ok(Self { slots, delta_h })
    }

    /// Normalizes kW loads by the transformer nominal power.
    pub fn from_kw(kw: &[S], nominal_kw: S, delta_h: S) -> Result<Self> {
        Self::new(kw.iter().map(|&p| p / nominal_kw).collect(), delta_h)
    }

    pub fn slots(&self) -> &[S] {
        &self.slots
    }

    pub fn delta_h(&self) -> S {
        self.delta_h
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Ambient temperature per slot (°C).
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientSeries<S>(pub Vec<S>);

impl<S> From<Vec<S>> for AmbientSeries<S> {
    fn from(celsius: Vec<S>) -> Self {
        Self(celsius)
    }
}

impl<S: Scalar> AmbientSeries<S> {
    pub fn constant(value: S, len: usize) -> Self {
        Self(vec![value; len])
    }

    pub fn slots(&self) -> &[S] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Joule losses `J_t = k * u_t^2 * base_kw * delta_h` in kWh per slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JouleModel<S> {
    /// Equivalent resistance in per-unit.
    pub k: S,
    /// Power base the per-unit load refers to (kW).
    pub base_kw: S,
}

impl<S: Scalar> JouleModel<S> {
    pub fn energy_kwh(&self, u: S, delta_h: S) -> S {
        self.k * u * u * self.base_kw * delta_h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace<S> {
    pub temps: Vec<S>,
    pub faa: Vec<S>,
    pub joule: Vec<S>,
}

impl<S: Scalar> StateTrace<S> {
    pub fn len(&self) -> usize {
        self.temps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temps.is_empty()
    }

    pub fn peak_temperature(&self) -> S {
        self.temps.iter().copied().fold(S::neg_infinity(), S::max)
    }
}

/// One step of the hot-spot recursion.
#[inline]
pub fn step_temperature<S: Scalar>(
    x_prev: S,
    u_t: S,
    u_prev: S,
    c_t: S,
    p: &ThermalParams<S>,
) -> S {
    p.a * x_prev + p.b1 * u_t * u_t + p.b2 * u_prev * u_prev + c_t
}

/// Hot-spot temperatures obtained by iterating the recursion from `(x0, u0)`.
pub fn temperatures<S: Scalar>(loads: &[S], ambient: &[S], p: &ThermalParams<S>) -> Result<Vec<S>> {
    if loads.len() != ambient.len() {
        return Err(Error::Dimension {
            what: "ambient series",
            expected: loads.len(),
            got: ambient.len(),
        });
    }
    let mut temps = Vec::with_capacity(loads.len());
    let (mut x, mut u_prev) = (p.x0, p.u0);
    for (&u, &amb) in loads.iter().zip(ambient) {
        x = step_temperature(x, u, u_prev, p.forcing(amb), p);
        temps.push(x);
        u_prev = u;
    }
    Ok(temps)
}

/// Ageing factor `exp(alpha * x + beta)`.
#[inline]
pub fn faa<S: Scalar>(x: S, p: &ThermalParams<S>) -> S {
    (p.alpha * x + p.beta).exp()
}

pub fn simulate_trace<S: Scalar>(
    loads: &LoadSeries<S>,
    ambient: &AmbientSeries<S>,
    p: &ThermalParams<S>,
    joule: &JouleModel<S>,
) -> Result<StateTrace<S>> {
    let temps = temperatures(loads.slots(), ambient.slots(), p)?;
    let faa = temps.iter().map(|&x| faa(x, p)).collect();
    let joule = loads
        .slots()
        .iter()
        .map(|&u| joule.energy_kwh(u, loads.delta_h()))
        .collect();
    Ok(StateTrace { temps, faa, joule })
}

/// Closed-form hot-spot temperature at slot `t` (1-based) as an explicit
/// function of the whole load history, without running the recursion.
pub fn unroll_state<S: Scalar>(
    t: usize,
    loads: &LoadSeries<S>,
    ambient: &AmbientSeries<S>,
    p: &ThermalParams<S>,
) -> Result<S> {
    let len = loads.len();
    if ambient.len() != len {
        return Err(Error::Dimension {
            what: "ambient series",
            expected: len,
            got: ambient.len(),
        });
    }
    if t == 0 || t > len {
        return Err(Error::Index { index: t, len });
    }
    let u = loads.slots();
    let amb = ambient.slots();
    let sq = |k: usize| u[k - 1] * u[k - 1];

    let mut g =
        p.a.powi(t as i32) * p.x0 + p.b1 * sq(t) + p.b2 * p.a.powi(t as i32 - 1) * p.u0 * p.u0;
    let mut memory = S::zero();
    for lag in 1..t {
        memory += p.a.powi(lag as i32 - 1) * sq(t - lag);
    }
    g += p.convexity_margin() * memory;
    for k in 1..=t {
        g += p.a.powi((t - k) as i32) * p.forcing(amb[k - 1]);
    }
    Ok(g)
}

/// Design life scaled by the mean ageing factor: `40 * T / sum(A_t)` years.
pub fn lifetime_years<S: Scalar>(faa: &[S]) -> Result<S> {
    if faa.is_empty() {
        return Err(Error::Domain(
            "lifetime needs at least one ageing factor".into(),
        ));
    }
    if let Some(t) = faa.iter().position(|&a| !(a > S::zero())) {
        return Err(Error::Domain(format!(
            "ageing factor at slot {} is not positive",
            t + 1
        )));
    }
    let total: S = faa.iter().copied().sum();
    Ok(S::lit(40.0) * S::count(faa.len()) / total)
}
