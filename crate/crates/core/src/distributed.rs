//! Sequential best-response dynamics over EV charging profiles.
//!
//! EVs update one at a time in round-robin order, each minimizing the
//! common network cost over its own profile with the others frozen. Three
//! response rules are available:
//!
//! - **DDC**: exact convex best response over the full T-vector;
//! - **IVFA**: clipped-threshold valley filling, using only the total load;
//! - **rectangular**: constant power `V̄` over a contiguous window, choosing
//!   the cheapest start slot by exhaustive evaluation.
//!
//! The common cost makes the game an exact potential game, so each
//! response can only lower the potential and the dynamics terminate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::central::spg::{self, Block};
use crate::central::{Aggregated, Convergence, SolveOptions, SolveReport};
use crate::error::{Error, Result};
use crate::problem::{self, check_convexity, ChargingProfile, CostModel, Scenario};
use crate::scalar::Scalar;

/// Lower end of the tolerance used when sizing rectangular windows.
const WINDOW_EPS: f64 = 1e-9;
const IVFA_BISECTION_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BrdRule {
    Ddc,
    Ivfa,
    Rect,
}

impl BrdRule {
    pub fn name(self) -> &'static str {
        match self {
            BrdRule::Ddc => "ddc",
            BrdRule::Ivfa => "ivfa",
            BrdRule::Rect => "rect",
        }
    }
}

/// How a rectangular response picks among equally cheap windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    Earliest,
    /// Uniformly at random among exact ties, from the config seed.
    Seeded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrdConfig<S> {
    pub rule: BrdRule,
    pub max_rounds: usize,
    /// Stop once a full round changes the cost by less than this fraction.
    pub rel_tol: S,
    /// EV update order; ascending when `None`.
    pub order: Option<Vec<usize>>,
    /// Rectangular power `V̄` (kW); `v_max` when `None`.
    pub rect_power: Option<S>,
    /// Trim the last slot of a rectangular window so it delivers exactly `S_i`.
    pub rect_trim: bool,
    pub tie_break: TieBreak,
    pub seed: u64,
    /// Keep the profile after every round in the trace.
    pub store_profiles: bool,
    /// Options for the DDC inner solve.
    pub inner: SolveOptions<S>,
}

impl<S: Scalar> BrdConfig<S> {
    pub fn new(rule: BrdRule) -> Self {
        Self {
            rule,
            max_rounds: 50,
            rel_tol: S::lit(1e-6),
            order: None,
            rect_power: None,
            rect_trim: false,
            tie_break: TieBreak::Earliest,
            seed: 0,
            store_profiles: false,
            inner: SolveOptions {
                temp_constraint: false,
                ..SolveOptions::default()
            },
        }
    }

    fn validate(&self, s: &Scenario<S>) -> Result<Vec<usize>> {
        if self.max_rounds == 0 {
            return Err(Error::validation("BRD config", "max_rounds must be >= 1"));
        }
        if !(self.rel_tol > S::zero()) {
            return Err(Error::validation("BRD config", "rel_tol must be > 0"));
        }
        if let Some(p) = self.rect_power {
            if !(p > S::zero() && p <= s.v_max_kw) {
                return Err(Error::validation(
                    "BRD config",
                    "rectangular power must lie in (0, v_max]",
                ));
            }
        }
        let n = s.ev_count();
        match &self.order {
            None => Ok((0..n).collect()),
            Some(order) => {
                let mut seen = vec![false; n];
                for &i in order {
                    if i >= n || std::mem::replace(&mut seen[i], true) {
                        return Err(Error::validation(
                            "BRD config",
                            "order must be a permutation of the EV indices",
                        ));
                    }
                }
                if order.len() != n {
                    return Err(Error::validation(
                        "BRD config",
                        "order must be a permutation of the EV indices",
                    ));
                }
                Ok(order.clone())
            }
        }
    }
}

/// One EV update inside a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseRecord<S> {
    pub round: usize,
    pub ev: usize,
    /// Cost before the update; `None` when the EV had no strategy yet
    /// (first rectangular round).
    pub cost_before: Option<S>,
    pub cost_after: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrdTrace<S> {
    /// Cost of the starting profile.
    pub initial_cost: S,
    /// Cost after each completed round.
    pub cost_per_round: Vec<S>,
    /// Rounds run until the stop criterion held.
    pub rounds_to_converge: usize,
    pub converged: bool,
    pub responses: Vec<ResponseRecord<S>>,
    pub per_round_profiles: Option<Vec<ChargingProfile<S>>>,
}

impl<S: Scalar> BrdTrace<S> {
    /// Largest cost increase over any single response that replaced an
    /// existing strategy (non-positive when every response descended).
    pub fn worst_response_increase(&self) -> S {
        self.responses
            .iter()
            .filter_map(|r| r.cost_before.map(|b| r.cost_after - b))
            .fold(S::neg_infinity(), S::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrdOutcome<S> {
    pub report: SolveReport<S>,
    pub trace: BrdTrace<S>,
    /// Start slot (0-based) of every rectangular window, when applicable.
    pub rect_starts: Option<Vec<Option<usize>>>,
}

fn others_load<S: Scalar>(i: usize, v: &ChargingProfile<S>) -> Vec<S> {
    let mut w = vec![S::zero(); v.slots()];
    for (j, row) in v.rows().enumerate() {
        if j != i {
            for (acc, &p) in w.iter_mut().zip(row) {
                *acc += p;
            }
        }
    }
    w
}

fn reachable<S: Scalar>(i: usize, s: &Scenario<S>, power: S) -> Result<()> {
    let cap = power * s.delta_h * S::count(s.slots());
    let d = s.demands_kwh[i];
    if d > cap * (S::one() + S::lit(WINDOW_EPS)) {
        return Err(Error::EvInfeasible {
            ev: i,
            demand_kwh: d.as_f64(),
            reachable_kwh: cap.as_f64(),
        });
    }
    Ok(())
}

fn check_ev<S: Scalar>(i: usize, v: &ChargingProfile<S>, s: &Scenario<S>) -> Result<()> {
    if i >= s.ev_count() {
        return Err(Error::Index {
            index: i,
            len: s.ev_count(),
        });
    }
    if v.ev_count() != s.ev_count() || v.slots() != s.slots() {
        return Err(Error::Dimension {
            what: "profile",
            expected: s.ev_count() * s.slots(),
            got: v.ev_count() * v.slots(),
        });
    }
    Ok(())
}

/// Exact best response of EV `i` to the other rows of `v`, warm-started
/// from its current row.
pub fn ddc_best_response<S: Scalar>(
    i: usize,
    v: &ChargingProfile<S>,
    s: &Scenario<S>,
    opts: &SolveOptions<S>,
) -> Result<Vec<S>> {
    check_ev(i, v, s)?;
    let convexity = check_convexity(s);
    if !convexity.convex {
        return Err(Error::NonConvex {
            margin: convexity.margin.as_f64(),
        });
    }
    reachable(i, s, s.v_max_kw)?;
    let slots = s.slots();
    let demand = s.demands_kwh[i];
    if demand == S::zero() {
        return Ok(vec![S::zero(); slots]);
    }
    let block = Block {
        range: 0..slots,
        cap: s.v_max_kw,
        total: demand / s.delta_h,
        majorant: None,
    };
    let mut start = v.row(i).to_vec();
    spg::project_capped_simplex(&mut start, block.cap, block.total);
    let agg = Aggregated {
        model: CostModel::new(s),
        rows: 1,
        offset: others_load(i, v),
        blocks: vec![block],
    };
    let (x, _) = agg.solve(start.clone(), &start, opts, opts.temp_constraint)?;
    Ok(x)
}

/// Valley-filling response `v_t = clip(lambda - base_t, 0, v_max)` with the
/// threshold set by bisection so the EV receives exactly `S_i`.
pub fn ivfa_best_response<S: Scalar>(
    i: usize,
    v: &ChargingProfile<S>,
    s: &Scenario<S>,
) -> Result<Vec<S>> {
    check_ev(i, v, s)?;
    reachable(i, s, s.v_max_kw)?;
    let base: Vec<S> = others_load(i, v)
        .into_iter()
        .zip(&s.nonev_kw)
        .map(|(w, &l)| w + l)
        .collect();
    Ok(valley_fill(&base, s.demands_kwh[i], s.v_max_kw, s.delta_h))
}

pub(crate) fn valley_fill<S: Scalar>(base: &[S], demand_kwh: S, cap: S, delta_h: S) -> Vec<S> {
    let n = base.len();
    if demand_kwh <= S::zero() || n == 0 {
        return vec![S::zero(); n];
    }
    let fill = |level: S| -> Vec<S> {
        base.iter()
            .map(|&b| (level - b).clip(S::zero(), cap))
            .collect()
    };
    let energy = |level: S| -> S {
        base.iter()
            .map(|&b| (level - b).clip(S::zero(), cap))
            .sum::<S>()
            * delta_h
    };

    let min_base = base.iter().copied().fold(S::infinity(), S::min);
    let max_base = base.iter().copied().fold(S::neg_infinity(), S::max);
    let mut lo = min_base;
    let mut hi = max_base + cap + demand_kwh / (delta_h * S::count(n));
    for _ in 0..IVFA_BISECTION_ITERS {
        let mid = lo + (hi - lo) * S::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        if energy(mid) < demand_kwh {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    fill(hi)
}

/// Chosen rectangular window and the resulting row.
#[derive(Debug, Clone, PartialEq)]
pub struct RectChoice<S> {
    /// 0-based first slot of the window; `None` for a zero demand.
    pub start: Option<usize>,
    pub profile: Vec<S>,
    /// Total cost with this window in place.
    pub cost: S,
}

/// Number of slots a rectangular profile at `power` needs for `demand_kwh`.
pub fn window_length<S: Scalar>(demand_kwh: S, power: S, delta_h: S) -> usize {
    if demand_kwh <= S::zero() {
        return 0;
    }
    let slots = demand_kwh / (power * delta_h) - S::lit(WINDOW_EPS);
    slots.ceil().to_usize().unwrap_or(usize::MAX).max(1)
}

/// Row with `power` over `[start, start + len)`, optionally trimming the
/// last slot so exactly `demand_kwh` is delivered.
pub fn rect_row<S: Scalar>(
    slots: usize,
    start: usize,
    len: usize,
    power: S,
    demand_kwh: S,
    delta_h: S,
    trim: bool,
) -> Vec<S> {
    let mut row = vec![S::zero(); slots];
    for p in &mut row[start..start + len] {
        *p = power;
    }
    if trim && len > 0 {
        let before = power * delta_h * S::count(len - 1);
        row[start + len - 1] = ((demand_kwh - before) / delta_h).clip(S::zero(), power);
    }
    row
}

/// Cheapest rectangular window for EV `i` given the other rows of `v`;
/// ties go to the earliest start.
pub fn rect_best_response<S: Scalar>(
    i: usize,
    v: &ChargingProfile<S>,
    s: &Scenario<S>,
    power: S,
    trim: bool,
) -> Result<RectChoice<S>> {
    rect_response(i, v, s, power, trim, None::<&mut ChaCha8Rng>)
}

fn rect_response<S: Scalar, R: Rng>(
    i: usize,
    v: &ChargingProfile<S>,
    s: &Scenario<S>,
    power: S,
    trim: bool,
    rng: Option<&mut R>,
) -> Result<RectChoice<S>> {
    check_ev(i, v, s)?;
    if !(power > S::zero() && power <= s.v_max_kw) {
        return Err(Error::validation(
            "rectangular power",
            "must lie in (0, v_max]",
        ));
    }
    let slots = s.slots();
    let demand = s.demands_kwh[i];
    let len = window_length(demand, power, s.delta_h);
    if len > slots {
        return Err(Error::EvInfeasible {
            ev: i,
            demand_kwh: demand.as_f64(),
            reachable_kwh: (power * s.delta_h * S::count(slots)).as_f64(),
        });
    }
    let model = CostModel::new(s);
    let others = others_load(i, v);
    if len == 0 {
        return Ok(RectChoice {
            start: None,
            profile: vec![S::zero(); slots],
            cost: model.value(&others),
        });
    }

    let mut w = others.clone();
    let costs: Vec<S> = (0..=slots - len)
        .map(|start| {
            let row = rect_row(slots, start, len, power, demand, s.delta_h, trim);
            for t in 0..slots {
                w[t] = others[t] + row[t];
            }
            model.value(&w)
        })
        .collect();
    let best = costs.iter().copied().fold(S::infinity(), S::min);
    let ties: Vec<usize> = (0..costs.len()).filter(|&k| costs[k] == best).collect();
    let start = match rng {
        Some(rng) if ties.len() > 1 => ties[rng.random_range(0..ties.len())],
        _ => ties[0],
    };
    Ok(RectChoice {
        start: Some(start),
        profile: rect_row(slots, start, len, power, demand, s.delta_h, trim),
        cost: best,
    })
}

/// Runs best-response dynamics from `init` (ignored for the rectangular
/// rule, whose EVs all start unscheduled).
pub fn brd_run<S: Scalar>(
    s: &Scenario<S>,
    cfg: &BrdConfig<S>,
    init: &ChargingProfile<S>,
) -> Result<BrdOutcome<S>> {
    s.validate()?;
    let order = cfg.validate(s)?;
    let (evs, slots) = (s.ev_count(), s.slots());
    let power = cfg.rect_power.unwrap_or(s.v_max_kw);
    let model = CostModel::new(s);
    let cost_of = |v: &ChargingProfile<S>| model.value(&v.sum_load());

    let mut v = match cfg.rule {
        BrdRule::Rect => ChargingProfile::zeros(evs, slots, s.delta_h),
        _ => {
            if init.ev_count() != evs || init.slots() != slots {
                return Err(Error::Dimension {
                    what: "initial profile",
                    expected: evs * slots,
                    got: init.ev_count() * init.slots(),
                });
            }
            init.clone()
        }
    };
    let mut scheduled = vec![cfg.rule != BrdRule::Rect; evs];
    let mut starts: Vec<Option<usize>> = vec![None; evs];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let initial_cost = cost_of(&v);
    let mut cost = initial_cost;
    let mut trace = BrdTrace {
        initial_cost,
        cost_per_round: Vec::new(),
        rounds_to_converge: 0,
        converged: false,
        responses: Vec::new(),
        per_round_profiles: cfg.store_profiles.then(Vec::new),
    };

    for round in 1..=cfg.max_rounds {
        let round_start = cost;
        let mut changed = false;
        for &i in &order {
            let wrap = |e: Error| Error::BestResponse {
                ev: i,
                source: Box::new(e),
            };
            let row = match cfg.rule {
                BrdRule::Ddc => ddc_best_response(i, &v, s, &cfg.inner).map_err(wrap)?,
                BrdRule::Ivfa => ivfa_best_response(i, &v, s).map_err(wrap)?,
                BrdRule::Rect => {
                    let rng = (cfg.tie_break == TieBreak::Seeded).then_some(&mut rng);
                    let choice =
                        rect_response(i, &v, s, power, cfg.rect_trim, rng).map_err(wrap)?;
                    // Keep the incumbent window unless the new one is strictly cheaper.
                    if scheduled[i] && starts[i] != choice.start && choice.cost >= cost {
                        v.row(i).to_vec()
                    } else {
                        if starts[i] != choice.start || !scheduled[i] {
                            changed = true;
                        }
                        starts[i] = choice.start;
                        choice.profile
                    }
                }
            };
            let before = scheduled[i].then_some(cost);
            v.set_row(i, &row);
            scheduled[i] = true;
            cost = cost_of(&v);
            trace.responses.push(ResponseRecord {
                round,
                ev: i,
                cost_before: before,
                cost_after: cost,
            });
        }
        trace.cost_per_round.push(cost);
        if let Some(p) = trace.per_round_profiles.as_mut() {
            p.push(v.clone());
        }
        trace.rounds_to_converge = round;

        let settled = match cfg.rule {
            BrdRule::Rect => !changed,
            _ => {
                let scale = round_start.abs().max(S::min_positive_value());
                (round_start - cost).abs() / scale < cfg.rel_tol
            }
        };
        if settled {
            trace.converged = true;
            break;
        }
    }

    let report = SolveReport::assemble(
        v,
        s,
        Convergence {
            iterations: trace.rounds_to_converge,
            residual: S::zero(),
            barrier_stages: 0,
        },
    )?;
    Ok(BrdOutcome {
        report,
        trace,
        rect_starts: (cfg.rule == BrdRule::Rect).then_some(starts),
    })
}

/// Per-EV feasible starting profile for DDC/IVFA: the uniform spread.
pub fn default_init<S: Scalar>(s: &Scenario<S>) -> ChargingProfile<S> {
    problem::uniform_profile(s)
}
