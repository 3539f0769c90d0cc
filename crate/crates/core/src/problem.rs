//! Charging scenario, composite network cost and constraint diagnostics.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{self, AmbientSeries, JouleModel, LoadSeries, StateTrace, ThermalParams};
use crate::scalar::Scalar;

/// Feasibility tolerances used by every constraint check.
pub mod tol {
    /// Energy slack (kWh).
    pub const ENERGY_KWH: f64 = 1e-6;
    /// Power bound excess (kW).
    pub const BOUND_KW: f64 = 1e-9;
    /// Hot-spot excess over the shutdown temperature (°C).
    pub const TEMP_C: f64 = 1e-6;
}

/// Memoryless part of the cost, a function of the per-unit total load.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MemorylessCost<S> {
    #[default]
    Zero,
    /// `coefficient * u^2`, e.g. Joule losses priced relative to ageing.
    Quadratic { coefficient: S },
}

impl<S: Scalar> MemorylessCost<S> {
    #[inline]
    pub fn value(&self, u: S) -> S {
        match *self {
            MemorylessCost::Zero => S::zero(),
            MemorylessCost::Quadratic { coefficient } => coefficient * u * u,
        }
    }

    #[inline]
    pub fn derivative(&self, u: S) -> S {
        match *self {
            MemorylessCost::Zero => S::zero(),
            MemorylessCost::Quadratic { coefficient } => S::lit(2.0) * coefficient * u,
        }
    }

    /// `value(u_new) - value(u)` without cancellation.
    #[inline]
    pub fn change(&self, u: S, u_new: S) -> S {
        match *self {
            MemorylessCost::Zero => S::zero(),
            MemorylessCost::Quadratic { coefficient } => coefficient * (u_new - u) * (u_new + u),
        }
    }

    #[inline]
    pub fn second_derivative(&self, _u: S) -> S {
        match *self {
            MemorylessCost::Zero => S::zero(),
            MemorylessCost::Quadratic { coefficient } => S::lit(2.0) * coefficient,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            MemorylessCost::Quadratic { coefficient } if !(coefficient >= S::zero()) => Err(
                Error::validation("memoryless cost", "coefficient must be >= 0"),
            ),
            _ => Ok(()),
        }
    }
}

/// One charging day: fleet, non-EV demand, weather and transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<S> {
    /// Slot duration in hours.
    pub delta_h: S,
    /// Energy each EV must receive by the end of the horizon (kWh).
    pub demands_kwh: Vec<S>,
    /// Per-EV charging power cap (kW).
    pub v_max_kw: S,
    /// Transformer nominal active power (kW), the per-unit base.
    pub nominal_kw: S,
    /// Non-EV demand per slot (kW); its length is the horizon.
    pub nonev_kw: Vec<S>,
    pub ambient: AmbientSeries<S>,
    pub thermal: ThermalParams<S>,
    pub memoryless: MemorylessCost<S>,
    /// Per-unit Joule constant used for the reported losses.
    pub joule_k: S,
    /// When set, the ageing term is `exp(alpha x)` and the `exp(-beta)`
    /// scale is assumed to be absorbed by the memoryless coefficient.
    pub fold_beta: bool,
}

impl<S: Scalar> Scenario<S> {
    /// Scenario with default transformer, 3 kW chargers and 30-minute slots.
    pub fn new(demands_kwh: Vec<S>, nonev_kw: Vec<S>, ambient: AmbientSeries<S>) -> Self {
        Self {
            delta_h: S::lit(0.5),
            demands_kwh,
            v_max_kw: S::lit(3.0),
            nominal_kw: S::lit(90.0),
            nonev_kw,
            ambient,
            thermal: ThermalParams::default(),
            memoryless: MemorylessCost::Zero,
            joule_k: S::lit(0.01),
            fold_beta: false,
        }
    }

    pub fn slots(&self) -> usize {
        self.nonev_kw.len()
    }

    pub fn ev_count(&self) -> usize {
        self.demands_kwh.len()
    }

    pub fn total_demand_kwh(&self) -> S {
        self.demands_kwh.iter().copied().sum()
    }

    /// Largest energy one EV can take over the horizon.
    pub fn max_energy_per_ev_kwh(&self) -> S {
        self.v_max_kw * self.delta_h * S::count(self.slots())
    }

    pub fn joule_model(&self) -> JouleModel<S> {
        JouleModel {
            k: self.joule_k,
            base_kw: self.nominal_kw,
        }
    }

    /// Same scenario with a different non-EV demand (e.g. a forecast).
    pub fn with_nonev(&self, nonev_kw: Vec<S>) -> Self {
        Self {
            nonev_kw,
            ..self.clone()
        }
    }

    /// Same scenario with a different fleet.
    pub fn with_demands(&self, demands_kwh: Vec<S>) -> Self {
        Self {
            demands_kwh,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::validation("scenario", reason));
        if self.slots() == 0 {
            return fail("horizon must contain at least one slot".into());
        }
        if self.ambient.len() != self.slots() {
            return Err(Error::Dimension {
                what: "ambient series",
                expected: self.slots(),
                got: self.ambient.len(),
            });
        }
        if !(self.delta_h > S::zero()) {
            return fail("slot duration must be > 0".into());
        }
        if !(self.v_max_kw > S::zero()) {
            return fail("v_max must be > 0".into());
        }
        if !(self.nominal_kw > S::zero()) {
            return fail("nominal power must be > 0".into());
        }
        if !(self.joule_k >= S::zero()) {
            return fail("Joule constant must be >= 0".into());
        }
        if let Some(i) = self.demands_kwh.iter().position(|&d| !(d >= S::zero())) {
            return fail(format!("demand of EV {i} must be >= 0"));
        }
        if let Some(t) = self.nonev_kw.iter().position(|&l| !(l >= S::zero())) {
            return fail(format!("non-EV demand at slot {} must be >= 0", t + 1));
        }
        if self.ambient.slots().iter().any(|x| !x.is_finite()) {
            return fail("ambient temperatures must be finite".into());
        }
        self.thermal.validate()?;
        self.memoryless.validate()
    }

    fn check_profile(&self, v: &ChargingProfile<S>) -> Result<()> {
        if v.ev_count() != self.ev_count() {
            return Err(Error::Dimension {
                what: "profile rows (EVs)",
                expected: self.ev_count(),
                got: v.ev_count(),
            });
        }
        if v.slots() != self.slots() {
            return Err(Error::Dimension {
                what: "profile columns (slots)",
                expected: self.slots(),
                got: v.slots(),
            });
        }
        Ok(())
    }
}

/// Charging powers `v[i][t]` in kW, one row per EV.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargingProfile<S> {
    data: Vec<S>,
    evs: usize,
    slots: usize,
    delta_h: S,
}

impl<S: Scalar> ChargingProfile<S> {
    pub fn zeros(evs: usize, slots: usize, delta_h: S) -> Self {
        Self {
            data: vec![S::zero(); evs * slots],
            evs,
            slots,
            delta_h,
        }
    }

    /// Builds a profile from per-EV rows; rejects ragged or negative input.
    pub fn from_rows(rows: Vec<Vec<S>>, slots: usize, delta_h: S) -> Result<Self> {
        let evs = rows.len();
        let mut data = Vec::with_capacity(evs * slots);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != slots {
                return Err(Error::Dimension {
                    what: "profile row",
                    expected: slots,
                    got: row.len(),
                });
            }
            if let Some(t) = row.iter().position(|&p| !(p >= S::zero())) {
                return Err(Error::validation(
                    "charging profile",
                    format!("EV {i} slot {} has negative or NaN power", t + 1),
                ));
            }
            data.extend(row);
        }
        Ok(Self {
            data,
            evs,
            slots,
            delta_h,
        })
    }

    pub fn ev_count(&self) -> usize {
        self.evs
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn delta_h(&self) -> S {
        self.delta_h
    }

    pub fn get(&self, ev: usize, slot: usize) -> S {
        self.data[ev * self.slots + slot]
    }

    pub fn row(&self, ev: usize) -> &[S] {
        &self.data[ev * self.slots..(ev + 1) * self.slots]
    }

    /// Replaces one EV's row. Negative entries are clamped to zero.
    pub fn set_row(&mut self, ev: usize, row: &[S]) {
        assert_eq!(row.len(), self.slots, "row length must equal the horizon");
        for (dst, &src) in self.data[ev * self.slots..(ev + 1) * self.slots]
            .iter_mut()
            .zip(row)
        {
            *dst = src.max(S::zero());
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = &[S]> {
        (0..self.evs).map(move |i| self.row(i))
    }

    pub(crate) fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub(crate) fn from_flat(data: Vec<S>, evs: usize, slots: usize, delta_h: S) -> Self {
        debug_assert_eq!(data.len(), evs * slots);
        Self {
            data: data.into_iter().map(|x| x.max(S::zero())).collect(),
            evs,
            slots,
            delta_h,
        }
    }

    /// Sum-EV load `w_t = sum_i v[i][t]` (kW).
    pub fn sum_load(&self) -> Vec<S> {
        let mut w = vec![S::zero(); self.slots];
        for row in self.rows() {
            for (acc, &p) in w.iter_mut().zip(row) {
                *acc += p;
            }
        }
        w
    }

    /// Energy delivered to one EV over the horizon (kWh).
    pub fn delivered_kwh(&self, ev: usize) -> S {
        self.row(ev).iter().copied().sum::<S>() * self.delta_h
    }
}

/// Uniform spread `v[i][t] = S_i / (T * delta_h)`, clipped to `v_max`.
pub fn uniform_profile<S: Scalar>(s: &Scenario<S>) -> ChargingProfile<S> {
    let slots = s.slots();
    let horizon_h = S::count(slots) * s.delta_h;
    let rows = s
        .demands_kwh
        .iter()
        .map(|&d| vec![(d / horizon_h).min(s.v_max_kw); slots])
        .collect();
    ChargingProfile::from_rows(rows, slots, s.delta_h).expect("uniform rows are well-formed")
}

/// Cost of a profile split into its ageing and memoryless parts.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown<S> {
    pub total: S,
    pub ageing: S,
    pub memoryless: S,
    pub trace: StateTrace<S>,
    /// Per-unit total load per slot.
    pub load_pu: Vec<S>,
}

/// Evaluates the composite cost of a sum-EV load and its gradient.
///
/// The cost depends on the charging profile only through `w_t`, so every
/// solver works on this aggregate and broadcasts gradients to EV rows.
#[derive(Debug, Clone)]
pub struct CostModel<'a, S> {
    s: &'a Scenario<S>,
    forcing: Vec<S>,
    ageing_offset: S,
}

impl<'a, S: Scalar> CostModel<'a, S> {
    pub fn new(s: &'a Scenario<S>) -> Self {
        let p = &s.thermal;
        Self {
            s,
            forcing: s.ambient.slots().iter().map(|&x| p.forcing(x)).collect(),
            ageing_offset: if s.fold_beta { S::zero() } else { p.beta },
        }
    }

    pub fn scenario(&self) -> &Scenario<S> {
        self.s
    }

    fn per_unit(&self, w: &[S], t: usize) -> S {
        (self.s.nonev_kw[t] + w[t]) / self.s.nominal_kw
    }

    fn temperatures(&self, w: &[S], temps: &mut Vec<S>) {
        let p = &self.s.thermal;
        temps.clear();
        let (mut x, mut u_prev) = (p.x0, p.u0);
        for t in 0..w.len() {
            let u = self.per_unit(w, t);
            x = model::step_temperature(x, u, u_prev, self.forcing[t], p);
            temps.push(x);
            u_prev = u;
        }
    }

    /// Cost of the sum-EV load `w` (kW).
    pub fn value(&self, w: &[S]) -> S {
        let mut temps = Vec::with_capacity(w.len());
        self.temperatures(w, &mut temps);
        let p = &self.s.thermal;
        temps
            .iter()
            .enumerate()
            .map(|(t, &x)| {
                (p.alpha * x + self.ageing_offset).exp()
                    + self.s.memoryless.value(self.per_unit(w, t))
            })
            .sum()
    }

    /// Cost plus optional log-barrier `-mu * sum ln(x_max - x_t)`, with the
    /// gradient with respect to `w` written into `grad`. Returns `None`
    /// when the barrier is active and some slot reaches `x_max`.
    pub fn value_and_gradient(&self, w: &[S], barrier: Option<S>, grad: &mut [S]) -> Option<S> {
        let n = w.len();
        let p = &self.s.thermal;
        let mut temps = Vec::with_capacity(n);
        self.temperatures(w, &mut temps);

        // Sensitivity of the objective to each hot-spot temperature.
        let mut value = S::zero();
        let mut sens = vec![S::zero(); n];
        for t in 0..n {
            let ageing = (p.alpha * temps[t] + self.ageing_offset).exp();
            value += ageing + self.s.memoryless.value(self.per_unit(w, t));
            sens[t] = p.alpha * ageing;
            if let Some(mu) = barrier {
                let headroom = p.x_max - temps[t];
                if !(headroom > S::zero()) {
                    return None;
                }
                value -= mu * headroom.ln();
                sens[t] += mu / headroom;
            }
        }

        // Adjoint sweep: propagated[t] = sum_{k>=t} sens[k] * a^(k-t).
        let two = S::lit(2.0);
        let mut next = S::zero();
        for t in (0..n).rev() {
            let here = sens[t] + p.a * next;
            let u = self.per_unit(w, t);
            let du = two * u * (p.b1 * here + p.b2 * next) + self.s.memoryless.derivative(u);
            grad[t] = du / self.s.nominal_kw;
            next = here;
        }
        Some(value)
    }

    /// `cost(w_new) - cost(w)` under the same optional barrier, propagated
    /// through temperature differences so it stays accurate when the two
    /// loads are close and the cost itself is large. `None` when the
    /// barrier is active and `w_new` reaches `x_max`.
    pub(crate) fn value_change(&self, w: &[S], w_new: &[S], barrier: Option<S>) -> Option<S> {
        let p = &self.s.thermal;
        let mut temps = Vec::with_capacity(w.len());
        self.temperatures(w, &mut temps);
        let (mut dx, mut dq_prev) = (S::zero(), S::zero());
        let mut change = S::zero();
        for (t, &temp) in temps.iter().enumerate() {
            let (u, u_new) = (self.per_unit(w, t), self.per_unit(w_new, t));
            let dq = (u_new - u) * (u_new + u);
            dx = p.a * dx + p.b1 * dq + p.b2 * dq_prev;
            dq_prev = dq;
            let ageing = (p.alpha * temp + self.ageing_offset).exp();
            change += ageing * (p.alpha * dx).exp_m1() + self.s.memoryless.change(u, u_new);
            if let Some(mu) = barrier {
                let headroom = p.x_max - temp;
                if !(headroom - dx > S::zero()) {
                    return None;
                }
                change -= mu * (-dx / headroom).ln_1p();
            }
        }
        Some(change)
    }

    /// Value, gradient and dense row-major Hessian (`n x n`) of the
    /// barrier-augmented cost with respect to `w`.
    pub(crate) fn value_gradient_hessian(
        &self,
        w: &[S],
        barrier: Option<S>,
        grad: &mut [S],
        hess: &mut [S],
    ) -> Option<S> {
        let n = w.len();
        let value = self.value_and_gradient(w, barrier, grad)?;
        let p = &self.s.thermal;
        let nominal = self.s.nominal_kw;
        let mut temps = Vec::with_capacity(n);
        self.temperatures(w, &mut temps);

        // Curvature of the per-slot temperature penalty and its slope.
        let mut slope = vec![S::zero(); n];
        let mut curv = vec![S::zero(); n];
        for t in 0..n {
            let ageing = (p.alpha * temps[t] + self.ageing_offset).exp();
            slope[t] = p.alpha * ageing;
            curv[t] = p.alpha * p.alpha * ageing;
            if let Some(mu) = barrier {
                let headroom = p.x_max - temps[t];
                slope[t] += mu / headroom;
                curv[t] += mu / (headroom * headroom);
            }
        }

        // jac[t][s] = dx_t / dw_s, lower triangular.
        let two = S::lit(2.0);
        let u: Vec<S> = (0..n).map(|t| self.per_unit(w, t)).collect();
        let mut jac = vec![S::zero(); n * n];
        for s in 0..n {
            let du = two * u[s] / nominal;
            let mut coeff = p.b1;
            for t in s..n {
                jac[t * n + s] = coeff * du;
                // Coefficient of u_s^2 in x_{t+1}: a^(t+1-s) b1 + a^(t-s) b2.
                coeff = p.a * coeff + if t == s { p.b2 } else { S::zero() };
            }
        }
        for h in hess.iter_mut() {
            *h = S::zero();
        }
        for t in 0..n {
            if curv[t] == S::zero() {
                continue;
            }
            for r in 0..=t {
                let jr = jac[t * n + r] * curv[t];
                if jr == S::zero() {
                    continue;
                }
                for c in 0..=t {
                    hess[r * n + c] += jr * jac[t * n + c];
                }
            }
        }
        // Second derivative through u_s^2 itself.
        let mut next = S::zero();
        for s in (0..n).rev() {
            let here = slope[s] + p.a * next;
            let d2 = two * (p.b1 * here + p.b2 * next) + self.s.memoryless.second_derivative(u[s]);
            hess[s * n + s] += d2 / (nominal * nominal);
            next = here;
        }
        Some(value)
    }
}

/// Total cost of a charging profile with the full state trace.
pub fn total_cost<S: Scalar>(v: &ChargingProfile<S>, s: &Scenario<S>) -> Result<CostBreakdown<S>> {
    s.check_profile(v)?;
    evaluate_sum_load(&v.sum_load(), s)
}

/// Cost breakdown for a sum-EV load `w` (kW).
pub fn evaluate_sum_load<S: Scalar>(w: &[S], s: &Scenario<S>) -> Result<CostBreakdown<S>> {
    if w.len() != s.slots() {
        return Err(Error::Dimension {
            what: "sum-EV load",
            expected: s.slots(),
            got: w.len(),
        });
    }
    let load_pu: Vec<S> = s
        .nonev_kw
        .iter()
        .zip(w)
        .map(|(&l, &x)| (l + x) / s.nominal_kw)
        .collect();
    let loads = LoadSeries::new(load_pu.clone(), s.delta_h)?;
    let trace = model::simulate_trace(&loads, &s.ambient, &s.thermal, &s.joule_model())?;
    let offset = if s.fold_beta {
        S::zero()
    } else {
        s.thermal.beta
    };
    let ageing: S = trace
        .temps
        .iter()
        .map(|&x| (s.thermal.alpha * x + offset).exp())
        .sum();
    let memoryless: S = load_pu.iter().map(|&u| s.memoryless.value(u)).sum();
    Ok(CostBreakdown {
        total: ageing + memoryless,
        ageing,
        memoryless,
        trace,
        load_pu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convexity<S> {
    pub convex: bool,
    /// `a*b1 + b2`.
    pub margin: S,
}

/// Sufficient (and for the state map, necessary) convexity condition.
pub fn check_convexity<S: Scalar>(s: &Scenario<S>) -> Convexity<S> {
    let margin = s.thermal.convexity_margin();
    Convexity {
        convex: margin >= S::zero(),
        margin,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport<S> {
    /// Per-EV `sum_t v[i][t] * delta_h - S_i` (kWh).
    pub energy_slack_kwh: Vec<S>,
    /// Largest excursion outside `[0, v_max]` (kW), zero when inside.
    pub bound_violation: S,
    /// `max_t (x_t - x_max)` (°C); negative values are headroom.
    pub temp_violation: S,
    pub feasible: bool,
}

impl<S: Scalar> ConstraintReport<S> {
    pub fn to_f64(&self) -> ConstraintReport<f64> {
        ConstraintReport {
            energy_slack_kwh: self.energy_slack_kwh.iter().map(|x| x.as_f64()).collect(),
            bound_violation: self.bound_violation.as_f64(),
            temp_violation: self.temp_violation.as_f64(),
            feasible: self.feasible,
        }
    }

    pub fn min_energy_slack(&self) -> S {
        self.energy_slack_kwh
            .iter()
            .copied()
            .fold(S::infinity(), S::min)
    }
}

impl ConstraintReport<f64> {
    pub fn summary(&self) -> String {
        let min_slack = if self.energy_slack_kwh.is_empty() {
            0.0
        } else {
            self.min_energy_slack()
        };
        format!(
            "min energy slack {min_slack:.6} kWh, bound violation {:.3e} kW, \
             hot-spot margin {:.3} °C over x_max",
            self.bound_violation, self.temp_violation
        )
    }
}

pub fn constraint_report<S: Scalar>(
    v: &ChargingProfile<S>,
    s: &Scenario<S>,
) -> Result<ConstraintReport<S>> {
    s.check_profile(v)?;
    let energy_slack_kwh: Vec<S> = (0..v.ev_count())
        .map(|i| v.delivered_kwh(i) - s.demands_kwh[i])
        .collect();
    let bound_violation = v
        .as_slice()
        .iter()
        .fold(S::zero(), |m, &p| m.max(p - s.v_max_kw).max(-p));
    let breakdown = total_cost(v, s)?;
    let temp_violation = breakdown.trace.peak_temperature() - s.thermal.x_max;
    let feasible = energy_slack_kwh
        .iter()
        .all(|&e| e >= -S::lit(tol::ENERGY_KWH))
        && bound_violation <= S::lit(tol::BOUND_KW)
        && temp_violation <= S::lit(tol::TEMP_C);
    Ok(ConstraintReport {
        energy_slack_kwh,
        bound_violation,
        temp_violation,
        feasible,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility<S> {
    /// Every EV's demand fits under `v_max` over the horizon.
    pub energy_ok: bool,
    /// The uniform profile keeps the hot-spot at or below `x_max`.
    pub thermal_ok: bool,
    pub feasible: bool,
    /// Constraint report of the uniform profile.
    pub report: ConstraintReport<S>,
}

/// Sufficient feasibility test: per-EV energy fits and the uniform spread
/// of every demand stays below the shutdown temperature.
pub fn check_feasibility<S: Scalar>(s: &Scenario<S>) -> Result<Feasibility<S>> {
    let cap = s.max_energy_per_ev_kwh();
    let energy_ok = s.demands_kwh.iter().all(|&d| d <= cap);
    let report = constraint_report(&uniform_profile(s), s)?;
    let thermal_ok = report.temp_violation <= S::lit(tol::TEMP_C);
    Ok(Feasibility {
        energy_ok,
        thermal_ok,
        feasible: energy_ok && thermal_ok,
        report,
    })
}

/// Active slots (0-based) of each EV: `{t : v[i][t] > eps}`.
pub fn support_sets<S: Scalar>(v: &ChargingProfile<S>, eps: S) -> Vec<BTreeSet<usize>> {
    v.rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &p)| p > eps)
                .map(|(t, _)| t)
                .collect()
        })
        .collect()
}

/// Default support threshold, `1e-6 * v_max`.
pub fn default_support_eps<S: Scalar>(s: &Scenario<S>) -> S {
    S::lit(1e-6) * s.v_max_kw
}
