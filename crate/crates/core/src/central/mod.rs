//! Centralized solvers: the joint problem over every EV profile, and the
//! two-step route (optimal sum-EV load, then a transportation allocation).

mod barrier;
mod flow;
pub(crate) mod spg;

use crate::error::{Error, Result};
use crate::problem::{
    self, check_convexity, check_feasibility, tol, ChargingProfile, ConstraintReport,
    CostBreakdown, CostModel, Scenario,
};
use crate::scalar::Scalar;

use flow::FlowNetwork;
use spg::{Block, Settings};

/// Energy resolution of the max-flow repair (kWh per integer unit).
const FLOW_RESOLUTION_KWH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<S> {
    /// Stationarity tolerance on `||P(v - grad) - v||_inf`, relative to
    /// `max(1, ||v||_inf)`; on the barrier
    /// path, the tolerance on half the squared Newton decrement.
    pub kkt_tol: S,
    /// Iteration cap per projected-gradient run.
    pub max_iters: usize,
    /// Enforce `x_t <= x_max` with a log-barrier when it binds.
    pub temp_constraint: bool,
    pub seed: u64,
}

impl<S: Scalar> Default for SolveOptions<S> {
    fn default() -> Self {
        Self {
            kkt_tol: S::lit(1e-10),
            max_iters: 200_000,
            temp_constraint: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence<S> {
    pub iterations: usize,
    pub residual: S,
    /// Barrier stages run; zero when the temperature constraint never bound.
    pub barrier_stages: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<S> {
    pub profile: ChargingProfile<S>,
    pub cost: CostBreakdown<S>,
    pub constraints: ConstraintReport<S>,
    pub convergence: Convergence<S>,
}

impl<S: Scalar> SolveReport<S> {
    pub(crate) fn assemble(
        profile: ChargingProfile<S>,
        s: &Scenario<S>,
        convergence: Convergence<S>,
    ) -> Result<Self> {
        let cost = problem::total_cost(&profile, s)?;
        let constraints = problem::constraint_report(&profile, s)?;
        Ok(Self {
            profile,
            cost,
            constraints,
            convergence,
        })
    }
}

/// Aggregate EV power per slot (kW).
#[derive(Debug, Clone, PartialEq)]
pub struct SumLoadProfile<S> {
    pub w: Vec<S>,
    pub convergence: Convergence<S>,
}

/// Variables laid out as `rows` stacked T-vectors whose sum, plus a fixed
/// offset, is the sum-EV load seen by the cost.
pub(crate) struct Aggregated<'a, S> {
    pub model: CostModel<'a, S>,
    pub rows: usize,
    pub offset: Vec<S>,
    pub blocks: Vec<Block<S>>,
}

impl<'a, S: Scalar> Aggregated<'a, S> {
    fn slots(&self) -> usize {
        self.offset.len()
    }

    fn peak_temperature(&self, x: &[S]) -> S {
        let slots = self.slots();
        let mut w = self.offset.clone();
        for row in x.chunks_exact(slots) {
            for (acc, &p) in w.iter_mut().zip(row) {
                *acc += p;
            }
        }
        problem::evaluate_sum_load(&w, self.model.scenario())
            .map(|c| c.trace.peak_temperature())
            .unwrap_or(S::infinity())
    }

    fn run(&self, x0: Vec<S>, tol: S, opts: &SolveOptions<S>) -> Result<spg::Outcome<S>> {
        debug_assert_eq!(x0.len(), self.rows * self.slots());
        let slots = self.slots();
        spg::minimize(
            &mut AggregatedObjective {
                agg: self,
                w: vec![S::zero(); slots],
                w_new: vec![S::zero(); slots],
                gw: vec![S::zero(); slots],
            },
            x0,
            &self.blocks,
            Settings {
                tol,
                max_iters: opts.max_iters,
            },
        )
    }

    /// Minimizes the cost from `x0`; when requested and violated, the
    /// temperature limit is enforced by a barrier path started at
    /// `interior`, which must keep every slot strictly below `x_max`.
    pub fn solve(
        &self,
        x0: Vec<S>,
        interior: &[S],
        opts: &SolveOptions<S>,
        temp_constraint: bool,
    ) -> Result<(Vec<S>, Convergence<S>)> {
        let free = self.run(x0, opts.kkt_tol, opts)?;
        let x_max = self.model.scenario().thermal.x_max;
        let binding = temp_constraint && self.peak_temperature(&free.x) > x_max;
        if !binding {
            if !free.converged {
                return Err(Error::NotConverged {
                    iters: free.iters,
                    residual: free.residual.as_f64(),
                });
            }
            return Ok((
                free.x,
                Convergence {
                    iterations: free.iters,
                    residual: free.residual,
                    barrier_stages: 0,
                },
            ));
        }

        if !(self.peak_temperature(interior) < x_max) {
            return Err(Error::Domain(
                "temperature limit binds but no strictly feasible starting point exists".into(),
            ));
        }
        let (x, mut convergence) = barrier::barrier_path(self, interior, opts)?;
        convergence.iterations += free.iters;
        Ok((x, convergence))
    }
}

struct AggregatedObjective<'b, 'a, S> {
    agg: &'b Aggregated<'a, S>,
    w: Vec<S>,
    w_new: Vec<S>,
    gw: Vec<S>,
}

impl<S: Scalar> AggregatedObjective<'_, '_, S> {
    fn sum_into(&self, x: &[S], out: &mut [S]) {
        out.copy_from_slice(&self.agg.offset);
        for row in x.chunks_exact(out.len()) {
            for (acc, &p) in out.iter_mut().zip(row) {
                *acc += p;
            }
        }
    }
}

impl<S: Scalar> spg::Objective<S> for AggregatedObjective<'_, '_, S> {
    fn eval(&mut self, x: &[S], g: &mut [S]) -> Option<S> {
        let mut w = std::mem::take(&mut self.w);
        self.sum_into(x, &mut w);
        let value = self.agg.model.value_and_gradient(&w, None, &mut self.gw);
        self.w = w;
        for row in g.chunks_exact_mut(self.gw.len()) {
            row.copy_from_slice(&self.gw);
        }
        value
    }

    fn change(&mut self, x: &[S], fx: S, xt: &[S], fxt: S) -> S {
        let (mut w, mut w_new) = (std::mem::take(&mut self.w), std::mem::take(&mut self.w_new));
        self.sum_into(x, &mut w);
        self.sum_into(xt, &mut w_new);
        let change = self.agg.model.value_change(&w, &w_new, None);
        self.w = w;
        self.w_new = w_new;
        change.unwrap_or(fxt - fx)
    }
}

fn require_solvable<S: Scalar>(s: &Scenario<S>, opts: &SolveOptions<S>) -> Result<()> {
    s.validate()?;
    let convexity = check_convexity(s);
    if !convexity.convex {
        return Err(Error::NonConvex {
            margin: convexity.margin.as_f64(),
        });
    }
    let f = check_feasibility(s)?;
    if !f.energy_ok || (opts.temp_constraint && !f.thermal_ok) {
        return Err(Error::Infeasible(Box::new(f.report.to_f64())));
    }
    Ok(())
}

fn check_energy_active<S: Scalar>(profile: &ChargingProfile<S>, s: &Scenario<S>) -> Result<()> {
    for (i, &d) in s.demands_kwh.iter().enumerate() {
        let slack = profile.delivered_kwh(i) - d;
        if slack.abs() > S::lit(tol::ENERGY_KWH) {
            return Err(Error::EnergyNotActive {
                ev: i,
                slack_kwh: slack.as_f64(),
            });
        }
    }
    Ok(())
}

/// Jointly optimizes every EV's charging profile.
pub fn solve_centralized<S: Scalar>(
    s: &Scenario<S>,
    opts: &SolveOptions<S>,
) -> Result<SolveReport<S>> {
    require_solvable(s, opts)?;
    let (evs, slots) = (s.ev_count(), s.slots());
    let init = problem::uniform_profile(s);
    let blocks = s
        .demands_kwh
        .iter()
        .enumerate()
        .map(|(i, &d)| Block {
            range: i * slots..(i + 1) * slots,
            cap: s.v_max_kw,
            total: d / s.delta_h,
            majorant: None,
        })
        .collect();
    let agg = Aggregated {
        model: CostModel::new(s),
        rows: evs,
        offset: vec![S::zero(); slots],
        blocks,
    };
    let (x, convergence) = if evs == 0 || s.total_demand_kwh() == S::zero() {
        (
            vec![S::zero(); evs * slots],
            Convergence {
                iterations: 0,
                residual: S::zero(),
                barrier_stages: 0,
            },
        )
    } else {
        let start = init.as_slice().to_vec();
        agg.solve(start.clone(), &start, opts, opts.temp_constraint)?
    };
    let profile = ChargingProfile::from_flat(x, evs, slots, s.delta_h);
    check_energy_active(&profile, s)?;
    SolveReport::assemble(profile, s, convergence)
}

/// Sum-EV load when every EV charges at `v_max` from the first slot
/// (non-increasing). The loads some allocation can realize are exactly
/// the convex hull of its slot permutations.
fn packed_sum_load<S: Scalar>(s: &Scenario<S>) -> Vec<S> {
    let c = s.v_max_kw;
    (0..s.slots())
        .map(|m| {
            let before = c * S::count(m);
            s.demands_kwh
                .iter()
                .map(|&d| (d / s.delta_h - before).clip(S::zero(), c))
                .sum()
        })
        .collect()
}

/// Unique optimal sum-EV load over the loads the fleet can realize.
pub fn solve_sum_load<S: Scalar>(
    s: &Scenario<S>,
    opts: &SolveOptions<S>,
) -> Result<SumLoadProfile<S>> {
    require_solvable(s, opts)?;
    let slots = s.slots();
    let total = s.total_demand_kwh();
    if s.ev_count() == 0 || total == S::zero() {
        return Ok(SumLoadProfile {
            w: vec![S::zero(); slots],
            convergence: Convergence {
                iterations: 0,
                residual: S::zero(),
                barrier_stages: 0,
            },
        });
    }
    let majorant = packed_sum_load(s);
    // The barrier path only handles a capped simplex, which the permutohedron
    // reduces to when at most one packed slot is partially filled.
    let simplex = majorant
        .iter()
        .filter(|&&d| d > S::zero() && d < majorant[0])
        .count()
        <= 1;
    let agg = Aggregated {
        model: CostModel::new(s),
        rows: 1,
        offset: vec![S::zero(); slots],
        blocks: vec![Block {
            range: 0..slots,
            cap: majorant[0],
            total: total / s.delta_h,
            majorant: Some(majorant),
        }],
    };
    let start = problem::uniform_profile(s).sum_load();
    let (w, convergence) = if simplex {
        agg.solve(start.clone(), &start, opts, opts.temp_constraint)?
    } else {
        let (w, convergence) = agg.solve(start.clone(), &start, opts, false)?;
        if opts.temp_constraint && agg.peak_temperature(&w) > s.thermal.x_max {
            let lifted = solve_centralized(s, opts)?;
            (lifted.profile.sum_load(), lifted.convergence)
        } else {
            (w, convergence)
        }
    };
    let delivered = w.iter().copied().sum::<S>() * s.delta_h;
    if (delivered - total).abs() > S::lit(tol::ENERGY_KWH) {
        return Err(Error::EnergyNotActive {
            ev: 0,
            slack_kwh: (delivered - total).as_f64(),
        });
    }
    Ok(SumLoadProfile { w, convergence })
}

/// Splits a sum-EV load among the EVs so every slot total, EV demand and
/// power cap is met.
///
/// Uses the proportional split `w_t * S_i / sum S` when it respects the cap,
/// and otherwise a max-flow on the slot -> EV transportation network.
pub fn allocate<S: Scalar>(w: &[S], s: &Scenario<S>) -> Result<ChargingProfile<S>> {
    let (evs, slots) = (s.ev_count(), s.slots());
    if w.len() != slots {
        return Err(Error::Dimension {
            what: "sum-EV load",
            expected: slots,
            got: w.len(),
        });
    }
    let total = s.total_demand_kwh();
    let supplied = w.iter().copied().sum::<S>() * s.delta_h;
    if (supplied - total).abs() > S::lit(tol::ENERGY_KWH) {
        return Err(Error::validation(
            "sum-EV load",
            format!(
                "delivers {} kWh but the fleet needs {} kWh",
                supplied.as_f64(),
                total.as_f64()
            ),
        ));
    }
    if evs == 0 || total == S::zero() {
        return Ok(ChargingProfile::zeros(evs, slots, s.delta_h));
    }
    if evs == 1 {
        return ChargingProfile::from_rows(
            vec![w.iter().map(|&x| x.max(S::zero())).collect()],
            slots,
            s.delta_h,
        );
    }

    let largest = s.demands_kwh.iter().copied().fold(S::zero(), S::max);
    let peak = w.iter().copied().fold(S::zero(), S::max);
    if peak * largest / total <= s.v_max_kw + S::lit(tol::BOUND_KW) {
        let rows = s
            .demands_kwh
            .iter()
            .map(|&d| {
                w.iter()
                    .map(|&x| (x * d / total).clip(S::zero(), s.v_max_kw))
                    .collect()
            })
            .collect();
        return ChargingProfile::from_rows(rows, slots, s.delta_h);
    }
    allocate_by_flow(w, s)
}

fn allocate_by_flow<S: Scalar>(w: &[S], s: &Scenario<S>) -> Result<ChargingProfile<S>> {
    let (evs, slots) = (s.ev_count(), s.slots());
    let delta = s.delta_h.as_f64();
    let units = |kwh: f64| (kwh / FLOW_RESOLUTION_KWH).round() as i64;

    let source = 0;
    let sink = slots + evs + 1;
    let mut net = FlowNetwork::new(slots + evs + 2);
    for (t, &x) in w.iter().enumerate() {
        net.add_edge(source, 1 + t, units(x.as_f64().max(0.0) * delta));
    }
    let cell_cap = (s.v_max_kw.as_f64() * delta / FLOW_RESOLUTION_KWH).floor() as i64;
    let mut cells = Vec::with_capacity(evs * slots);
    for t in 0..slots {
        for i in 0..evs {
            cells.push(net.add_edge(1 + t, 1 + slots + i, cell_cap));
        }
    }
    let mut demand_units = 0i64;
    for (i, &d) in s.demands_kwh.iter().enumerate() {
        let u = units(d.as_f64());
        demand_units += u;
        net.add_edge(1 + slots + i, sink, u);
    }

    let value = net.max_flow(source, sink);
    let gap_kwh = (demand_units - value) as f64 * FLOW_RESOLUTION_KWH;
    if gap_kwh > tol::ENERGY_KWH {
        return Err(Error::AllocationInfeasible { gap_kwh });
    }

    let mut rows = vec![vec![S::zero(); slots]; evs];
    for t in 0..slots {
        for i in 0..evs {
            let kwh = net.flow(cells[t * evs + i]) as f64 * FLOW_RESOLUTION_KWH;
            rows[i][t] = S::lit(kwh / delta).min(s.v_max_kw);
        }
    }
    ChargingProfile::from_rows(rows, slots, s.delta_h)
}

/// Sum-load optimum followed by the allocation step.
pub fn two_step_solve<S: Scalar>(
    s: &Scenario<S>,
    opts: &SolveOptions<S>,
) -> Result<SolveReport<S>> {
    let sum = solve_sum_load(s, opts)?;
    let profile = allocate(&sum.w, s)?;
    SolveReport::assemble(profile, s, sum.convergence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AmbientSeries;
    use approx::assert_abs_diff_eq;

    fn scenario(demands: Vec<f64>, nonev: Vec<f64>) -> Scenario<f64> {
        let n = nonev.len();
        Scenario::new(demands, nonev, AmbientSeries::constant(12.0, n))
    }

    #[test]
    fn allocate_equal_split() {
        let mut s = scenario(vec![6.0, 6.0], vec![10.0, 10.0]);
        s.delta_h = 1.0;
        let v = allocate(&[6.0, 6.0], &s).unwrap();
        for i in 0..2 {
            for t in 0..2 {
                assert_eq!(v.get(i, t), 3.0);
            }
        }
    }

    #[test]
    fn allocate_proportional_two_to_one() {
        let mut s = scenario(vec![2.0, 1.0], vec![10.0, 10.0, 10.0]);
        s.delta_h = 1.0;
        let w = [1.5, 0.9, 0.6];
        let v = allocate(&w, &s).unwrap();
        for (t, &wt) in w.iter().enumerate() {
            assert_abs_diff_eq!(v.get(0, t), 2.0 * wt / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(v.get(1, t), wt / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(v.get(0, t) + v.get(1, t), wt, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(v.delivered_kwh(0), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.delivered_kwh(1), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn allocate_repairs_with_max_flow() {
        // Proportional split would give EV 0 4.5 kW in slot 0.
        let mut s = scenario(vec![9.0, 3.0], vec![10.0; 3]);
        s.delta_h = 1.0;
        s.v_max_kw = 4.0;
        let w = [6.0, 4.0, 2.0];
        assert!(w[0] * 9.0 / 12.0 > s.v_max_kw);
        let v = allocate(&w, &s).unwrap();
        for (t, &wt) in w.iter().enumerate() {
            assert!((v.get(0, t) + v.get(1, t) - wt).abs() <= 1e-9);
            for i in 0..2 {
                assert!(v.get(i, t) >= 0.0 && v.get(i, t) <= s.v_max_kw + 1e-9);
            }
        }
        assert!((v.delivered_kwh(0) - 9.0).abs() <= 1e-9);
        assert!((v.delivered_kwh(1) - 3.0).abs() <= 1e-9);
    }

    #[test]
    fn allocate_reports_flow_gap() {
        // 2 slots, one EV needs more than two capped slots can carry.
        let mut s = scenario(vec![7.0, 1.0], vec![10.0; 2]);
        s.delta_h = 1.0;
        s.v_max_kw = 3.0;
        let err = allocate(&[4.0, 4.0], &s).unwrap_err();
        match err {
            Error::AllocationInfeasible { gap_kwh } => {
                assert_abs_diff_eq!(gap_kwh, 1.0, epsilon = 1e-9)
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn allocate_single_ev_is_identity() {
        let s = scenario(vec![3.0], vec![20.0; 4]);
        let w = [0.0, 2.5, 3.0, 0.5];
        let v = allocate(&w, &s).unwrap();
        assert_eq!(v.row(0), &w);
    }

    #[test]
    fn zero_demand_gives_zero_profile() {
        let s = scenario(vec![0.0, 0.0], vec![40.0, 60.0, 30.0]);
        let r = solve_centralized(&s, &SolveOptions::default()).unwrap();
        assert!(r.profile.as_slice().iter().all(|&x| x == 0.0));
        let baseline = problem::total_cost(&ChargingProfile::zeros(2, 3, 0.5), &s).unwrap();
        assert_eq!(r.cost.total, baseline.total);
        let w = solve_sum_load(&s, &SolveOptions::default()).unwrap();
        assert!(w.w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn refuses_nonconvex_parameters() {
        let mut s = scenario(vec![2.0], vec![40.0; 4]);
        s.thermal.a = 0.1;
        let err = solve_centralized(&s, &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonConvex { margin } if margin < 0.0));
    }

    #[test]
    fn refuses_unreachable_demand() {
        let s = scenario(vec![100.0], vec![40.0; 4]);
        let err = solve_centralized(&s, &SolveOptions::default()).unwrap_err();
        match err {
            Error::Infeasible(report) => assert!(report.min_energy_slack() < 0.0),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn temperature_barrier_keeps_hot_spot_below_limit() {
        // Memoryless cost dominates and valley-fills the hot first half,
        // so the unconstrained optimum runs hotter than the uniform spread.
        let mut nonev = vec![10.0; 6];
        nonev.extend([50.0; 6]);
        let mut ambient = vec![40.0; 6];
        ambient.extend([-40.0; 6]);
        let mut s = scenario(vec![15.0; 4], nonev);
        s.ambient = AmbientSeries(ambient);
        s.v_max_kw = 10.0;
        s.memoryless = problem::MemorylessCost::Quadratic {
            coefficient: 1000.0,
        };
        s.thermal.x0 = 50.0;
        s.thermal.u0 = 0.3;
        let free = solve_centralized(
            &s,
            &SolveOptions {
                temp_constraint: false,
                ..Default::default()
            },
        )
        .unwrap();
        let uniform = problem::total_cost(&problem::uniform_profile(&s), &s).unwrap();
        // Place x_max between the constrained and unconstrained peaks.
        let free_peak = free.cost.trace.peak_temperature();
        let uniform_peak = uniform.trace.peak_temperature();
        assert!(uniform_peak < free_peak, "{uniform_peak} {free_peak}");
        s.thermal.x_max = 0.5 * (free_peak + uniform_peak);
        let r = solve_centralized(&s, &SolveOptions::default()).unwrap();
        assert!(r.convergence.barrier_stages > 0);
        assert!(r.cost.trace.peak_temperature() <= s.thermal.x_max + 1e-6);
        assert!(r.constraints.feasible);
        assert!(r.cost.total >= free.cost.total - 1e-9);
    }
}
