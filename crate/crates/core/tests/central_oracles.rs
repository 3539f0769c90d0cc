//! Centralized and two-step solvers against independent oracles.

mod common;

use evsched::problem::{default_support_eps, support_sets, uniform_profile};
use evsched::{
    allocate, check_convexity, check_feasibility, solve_centralized, solve_sum_load, total_cost,
    two_step_solve, AmbientSeries, MemorylessCost, Scenario, SolveOptions,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{evening, random_feasible_profile, random_instance, rel_gap, shipped};

/// Root of a non-decreasing `phi` on `[lo, hi]`, or the violated end.
fn kkt_root(phi: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    if phi(lo) >= 0.0 {
        return lo;
    }
    if phi(hi) <= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn memoryless(s: &mut Scenario) {
    s.thermal.a = 0.0;
    s.thermal.b2 = 0.0;
}

#[test]
fn single_ev_two_slots_matches_scalar_kkt() {
    let mut s = Scenario::new(
        vec![2.0],
        vec![40.0, 30.0],
        AmbientSeries::constant(20.0, 2),
    );
    memoryless(&mut s);
    s.memoryless = MemorylessCost::Quadratic { coefficient: 0.5 };
    let p = s.thermal;
    let total = 2.0 / s.delta_h;
    let marginal = |l: f64, w: f64| {
        let u = (l + w) / s.nominal_kw;
        let x = p.b1 * u * u + p.forcing(20.0);
        ((p.alpha * x + p.beta).exp() * p.alpha * p.b1 * 2.0 * u + 2.0 * 0.5 * u) / s.nominal_kw
    };
    let phi = |w1: f64| marginal(40.0, w1) - marginal(30.0, total - w1);
    let w1 = kkt_root(phi, (total - s.v_max_kw).max(0.0), s.v_max_kw.min(total));

    let r = solve_centralized(&s, &SolveOptions::default()).unwrap();
    let v = r.profile.row(0);
    assert!(v[1] > v[0], "{v:?}");
    assert!((v[0] - w1).abs() <= 1e-6, "{} vs oracle {w1}", v[0]);
    assert!((v[1] - (total - w1)).abs() <= 1e-6);
}

#[test]
fn two_slot_sum_load_matches_bisection_with_memory() {
    let nonev = [50.0, 45.0];
    let ambient = [15.0, 10.0];
    let mut s = Scenario::new(
        vec![2.5],
        nonev.to_vec(),
        AmbientSeries::from(ambient.to_vec()),
    );
    s.v_max_kw = 10.0;
    let p = s.thermal;
    let total = 2.5 / s.delta_h;
    let big_p = s.nominal_kw;
    let phi = |w1: f64| {
        let (u1, u2) = ((nonev[0] + w1) / big_p, (nonev[1] + total - w1) / big_p);
        let x1 = p.a * p.x0 + p.b1 * u1 * u1 + p.b2 * p.u0 * p.u0 + p.forcing(ambient[0]);
        let x2 = p.a * x1 + p.b1 * u2 * u2 + p.b2 * u1 * u1 + p.forcing(ambient[1]);
        let dx1 = 2.0 * p.b1 * u1 / big_p;
        let dx2 = p.a * dx1 + 2.0 * p.b2 * u1 / big_p - 2.0 * p.b1 * u2 / big_p;
        (p.alpha * x1 + p.beta).exp() * dx1 + (p.alpha * x2 + p.beta).exp() * dx2
    };
    let w1 = kkt_root(phi, 0.0, total);
    let w = solve_sum_load(&s, &SolveOptions::default()).unwrap().w;
    assert!((w[0] - w1).abs() <= 1e-6, "{} vs oracle {w1}", w[0]);
    assert!((w[1] - (total - w1)).abs() <= 1e-6);
}

#[test]
fn constant_background_gives_constant_sum_load() {
    let mut s = Scenario::new(
        vec![10.0, 6.0, 14.0],
        vec![55.0; 12],
        AmbientSeries::constant(18.0, 12),
    );
    memoryless(&mut s);
    s.memoryless = MemorylessCost::Quadratic { coefficient: 0.2 };
    let w = solve_sum_load(&s, &SolveOptions::default()).unwrap().w;
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    for x in &w {
        assert!((x - mean).abs() <= 1e-6, "{w:?}");
    }
}

#[test]
fn sum_load_is_permutation_equivariant_without_memory() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let mut s = random_instance(&mut rng, 3, 8);
        memoryless(&mut s);
        let w = solve_sum_load(&s, &SolveOptions::default()).unwrap().w;

        let mut perm: Vec<usize> = (0..8).collect();
        perm.shuffle(&mut rng);
        let mut shuffled = s.with_nonev(perm.iter().map(|&t| s.nonev_kw[t]).collect());
        shuffled.ambient =
            AmbientSeries::from(perm.iter().map(|&t| s.ambient.0[t]).collect::<Vec<_>>());
        let w_perm = solve_sum_load(&shuffled, &SolveOptions::default())
            .unwrap()
            .w;
        for (k, &t) in perm.iter().enumerate() {
            assert!(
                (w_perm[k] - w[t]).abs() <= 1e-6,
                "{w_perm:?} vs {w:?} under {perm:?}"
            );
        }
    }
}

#[test]
fn equal_demands_share_one_support() {
    let s = evening(10, 0);
    let eps = default_support_eps(&s);
    for report in [
        solve_centralized(&s, &SolveOptions::default()).unwrap(),
        two_step_solve(&s, &SolveOptions::default()).unwrap(),
    ] {
        let sets = support_sets(&report.profile, eps);
        assert!(!sets[0].is_empty());
        assert!(sets.iter().all(|t| *t == sets[0]), "{sets:?}");
    }
}

#[test]
fn larger_demands_cover_smaller_supports() {
    let s = evening(0, 3).with_demands(vec![6.0, 12.0, 18.0, 24.0]);
    let r = solve_centralized(&s, &SolveOptions::default()).unwrap();
    let sets = support_sets(&r.profile, default_support_eps(&s));
    for i in 0..sets.len() {
        for j in 0..sets.len() {
            if s.demands_kwh[i] >= s.demands_kwh[j] {
                assert!(
                    sets[j].is_subset(&sets[i]),
                    "EV {j} {:?} not within EV {i} {:?}",
                    sets[j],
                    sets[i]
                );
            }
        }
    }
}

#[test]
fn solver_output_is_feasible_and_beats_random_profiles() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..5 {
        let evs = rng.random_range(1..=6);
        let slots = rng.random_range(2..=24);
        let s = random_instance(&mut rng, evs, slots);
        let r = solve_centralized(&s, &SolveOptions::default()).unwrap();
        assert!(r.constraints.feasible, "{:?}", r.constraints);
        let uniform = total_cost(&uniform_profile(&s), &s).unwrap().total;
        assert!(r.cost.total <= uniform);
        for _ in 0..200 {
            let v = random_feasible_profile(&mut rng, &s);
            assert!(r.cost.total <= total_cost(&v, &s).unwrap().total);
        }
    }
}

#[test]
fn unequal_demands_in_a_deep_valley_still_allocate() {
    // Packing the valley would need 6 kW in slot 1, but the 9 kWh EV can
    // take only 3 kW per slot: the realizable loads must be respected.
    let mut s = Scenario::new(
        vec![9.0, 1.0],
        vec![0.0, 80.0, 80.0, 80.0],
        AmbientSeries::constant(20.0, 4),
    );
    s.delta_h = 1.0;
    let opts = SolveOptions::default();
    let two = two_step_solve(&s, &opts).unwrap();
    let direct = solve_centralized(&s, &opts).unwrap();
    assert!(rel_gap(two.cost.total, direct.cost.total).abs() <= 1e-4);
    assert!(two.constraints.feasible);
    let w = solve_sum_load(&s, &opts).unwrap().w;
    let v = allocate(&w, &s).unwrap();
    for (t, x) in v.sum_load().iter().enumerate() {
        assert!((x - w[t]).abs() <= 1e-9);
    }
}

/// Small day where a strong memoryless cost valley-fills a hot first half,
/// so the limit binds at the optimum.
fn binding_day(demands: Vec<f64>) -> Scenario {
    let mut nonev = vec![10.0; 6];
    nonev.extend([50.0; 6]);
    let mut ambient = vec![40.0; 6];
    ambient.extend([-40.0; 6]);
    let mut s = Scenario::new(demands, nonev, AmbientSeries::from(ambient));
    s.v_max_kw = 10.0;
    s.memoryless = MemorylessCost::Quadratic {
        coefficient: 1000.0,
    };
    s.thermal.x0 = 50.0;
    s.thermal.u0 = 0.3;
    let free = solve_centralized(
        &s,
        &SolveOptions {
            temp_constraint: false,
            ..SolveOptions::default()
        },
    )
    .unwrap();
    let uniform = total_cost(&uniform_profile(&s), &s).unwrap();
    let (free_peak, uniform_peak) = (
        free.cost.trace.peak_temperature(),
        uniform.trace.peak_temperature(),
    );
    assert!(uniform_peak < free_peak, "{uniform_peak} {free_peak}");
    s.thermal.x_max = 0.5 * (free_peak + uniform_peak);
    s
}

#[test]
fn binding_limit_with_unequal_demands() {
    let s = binding_day(vec![25.0, 15.0, 10.0, 10.0]);
    let opts = SolveOptions::default();
    let direct = solve_centralized(&s, &opts).unwrap();
    let two = two_step_solve(&s, &opts).unwrap();
    for r in [&direct, &two] {
        assert!(r.cost.trace.peak_temperature() <= s.thermal.x_max + 1e-6);
        assert!(r.constraints.feasible, "{:?}", r.constraints);
    }
    assert!(rel_gap(two.cost.total, direct.cost.total).abs() <= 1e-4);
}

#[test]
fn binding_limit_with_equal_demands_two_step() {
    let s = binding_day(vec![15.0; 4]);
    let opts = SolveOptions::default();
    let two = two_step_solve(&s, &opts).unwrap();
    assert!(two.convergence.barrier_stages > 0);
    assert!(two.cost.trace.peak_temperature() <= s.thermal.x_max + 1e-6);
    let direct = solve_centralized(&s, &opts).unwrap();
    assert!(rel_gap(two.cost.total, direct.cost.total).abs() <= 1e-4);
}

#[test]
fn shipped_default_scenario() {
    let s = shipped("default.toml");
    assert_eq!(s.slots(), 30);
    assert!(s.demands_kwh.iter().all(|&d| d == 24.0));
    assert_eq!(s.delta_h, 0.5);
    assert_eq!(s.thermal.x0, 98.0);
    assert_eq!(s.thermal.x_max, 150.0);
    assert!(check_convexity(&s).convex);
    assert!(check_feasibility(&s).unwrap().feasible);
    let r = solve_centralized(&s, &SolveOptions::default()).unwrap();
    assert!(r.constraints.feasible);
}
