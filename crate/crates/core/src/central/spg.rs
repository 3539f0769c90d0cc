//! Spectral projected gradient over products of capped simplices.
//!
//! Each block of variables is constrained to `0 <= x <= cap` with a fixed
//! sum, or to the permutohedron of a given vector. Projections are exact
//! (sorted breakpoints, resp. sorting plus isotonic regression), steps use
//! Barzilai-Borwein lengths and a monotone backtracking line search.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::scalar::{max_abs, Scalar};

/// Variables `x[range]` with `0 <= x <= cap` and `sum x[range] = total`.
///
/// With a `majorant` (sorted non-increasing, summing to `total`, largest
/// entry `cap`) the block is instead the convex hull of its permutations.
#[derive(Debug, Clone)]
pub(crate) struct Block<S> {
    pub range: Range<usize>,
    pub cap: S,
    pub total: S,
    pub majorant: Option<Vec<S>>,
}

/// Least-squares non-increasing fit of `y`, in place (pool adjacent
/// violators).
fn fit_non_increasing<S: Scalar>(y: &mut [S]) {
    let mut pools: Vec<(S, usize)> = Vec::with_capacity(y.len());
    for &v in y.iter() {
        pools.push((v, 1));
        while let [.., (s0, n0), (s1, n1)] = pools[..] {
            if s0 * S::count(n1) >= s1 * S::count(n0) {
                break;
            }
            pools.pop();
            *pools.last_mut().expect("two pools") = (s0 + s1, n0 + n1);
        }
    }
    let mut k = 0;
    for (sum, n) in pools {
        let mean = sum / S::count(n);
        for v in &mut y[k..k + n] {
            *v = mean;
        }
        k += n;
    }
}

/// Euclidean projection of `y` onto the permutohedron of `majorant`
/// (sorted non-increasing, same length as `y`).
pub(crate) fn project_permutohedron<S: Scalar>(y: &mut [S], majorant: &[S]) {
    debug_assert_eq!(y.len(), majorant.len());
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[b].partial_cmp(&y[a]).expect("finite coordinates"));
    let mut shift: Vec<S> = order
        .iter()
        .zip(majorant)
        .map(|(&k, &d)| y[k] - d)
        .collect();
    fit_non_increasing(&mut shift);
    let cap = majorant.first().copied().unwrap_or(S::zero());
    for (&k, &s) in order.iter().zip(&shift) {
        y[k] = (y[k] - s).clip(S::zero(), cap);
    }
}

/// Euclidean projection of `y` onto `{0 <= x <= cap, sum x = total}`.
///
/// `total` is clamped into `[0, n * cap]`.
pub(crate) fn project_capped_simplex<S: Scalar>(y: &mut [S], cap: S, total: S) {
    let n = y.len();
    if n == 0 {
        return;
    }
    let total = total.clip(S::zero(), cap * S::count(n));
    let filled = |tau: S, y: &[S]| -> S { y.iter().map(|&v| (v - tau).clip(S::zero(), cap)).sum() };

    let mut bps: Vec<S> = y.iter().flat_map(|&v| [v - cap, v]).collect();
    bps.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));

    // filled() is non-increasing in tau: find the last breakpoint with
    // filled >= total.
    let (mut lo, mut hi) = (0usize, bps.len() - 1);
    if filled(bps[hi], y) >= total {
        lo = hi;
    } else {
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if filled(bps[mid], y) >= total {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let (t0, f0) = (bps[lo], filled(bps[lo], y));
    let tau = if lo == bps.len() - 1 {
        t0
    } else {
        let (t1, f1) = (bps[hi], filled(bps[hi], y));
        if f0 > f1 {
            t0 + (f0 - total) * (t1 - t0) / (f0 - f1)
        } else {
            t0
        }
    };
    for v in y.iter_mut() {
        *v = (*v - tau).clip(S::zero(), cap);
    }

    // Remove rounding drift using the coordinates strictly inside the box.
    let drift = total - y.iter().copied().sum::<S>();
    if drift != S::zero() {
        let free: Vec<usize> = (0..n).filter(|&k| y[k] > S::zero() && y[k] < cap).collect();
        if !free.is_empty() {
            let share = drift / S::count(free.len());
            for k in free {
                y[k] = (y[k] + share).clip(S::zero(), cap);
            }
        }
    }
}

pub(crate) fn project<S: Scalar>(x: &mut [S], blocks: &[Block<S>]) {
    for b in blocks {
        match &b.majorant {
            Some(d) => project_permutohedron(&mut x[b.range.clone()], d),
            None => project_capped_simplex(&mut x[b.range.clone()], b.cap, b.total),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings<S> {
    /// Residual tolerance, relative to `max(1, ||x||_inf)` and floored at
    /// the gradient's rounding resolution.
    pub tol: S,
    pub max_iters: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome<S> {
    pub x: Vec<S>,
    /// `||P(x - grad) - x||_inf` at the returned point.
    pub residual: S,
    pub iters: usize,
    pub converged: bool,
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Shifts `g` within each block by the mean over its free coordinates.
/// Projection onto a fixed-sum block ignores such shifts, and removing the
/// common part keeps `g.d` accurate when the gradient has a large offset.
/// Returns the largest raw gradient entry.
fn center<S: Scalar>(g: &mut [S], x: &[S], blocks: &[Block<S>]) -> S {
    let scale = max_abs(g);
    for b in blocks {
        let r = b.range.clone();
        let (mut sum, mut count) = (S::zero(), 0usize);
        for k in r.clone() {
            if x[k] > S::zero() && x[k] < b.cap {
                sum += g[k];
                count += 1;
            }
        }
        let c = if count > 0 {
            sum / S::count(count)
        } else if r.is_empty() {
            S::zero()
        } else {
            g[r.clone()].iter().copied().sum::<S>() / S::count(r.len())
        };
        for v in &mut g[r] {
            *v -= c;
        }
    }
    scale
}

/// Stopping threshold: the requested tolerance, floored at the rounding
/// resolution of a gradient of magnitude `grad_scale`.
fn threshold<S: Scalar>(tol: S, x: &[S], grad_scale: S) -> S {
    (tol * max_abs(x).max(S::one())).max(S::lit(1e3) * S::epsilon() * grad_scale)
}

fn residual<S: Scalar>(x: &[S], g: &[S], blocks: &[Block<S>], scratch: &mut [S]) -> S {
    for ((s, &xi), &gi) in scratch.iter_mut().zip(x).zip(g) {
        *s = xi - gi;
    }
    project(scratch, blocks);
    scratch
        .iter()
        .zip(x)
        .fold(S::zero(), |m, (&p, &xi)| m.max((p - xi).abs()))
}

pub(crate) trait Objective<S: Scalar> {
    /// Value at `x` with the gradient written into `g`; `None` outside the
    /// domain.
    fn eval(&mut self, x: &[S], g: &mut [S]) -> Option<S>;

    /// `f(xt) - f(x)` given both values.
    fn change(&mut self, _x: &[S], fx: S, _xt: &[S], fxt: S) -> S {
        fxt - fx
    }
}

/// Minimizes a convex objective over the blocks, starting from a feasible
/// `x0`.
pub(crate) fn minimize<S: Scalar>(
    objective: &mut impl Objective<S>,
    x0: Vec<S>,
    blocks: &[Block<S>],
    settings: Settings<S>,
) -> Result<Outcome<S>> {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![S::zero(); n];
    let mut f = objective
        .eval(&x, &mut g)
        .ok_or_else(|| Error::Domain("starting point is outside the objective domain".into()))?;
    let mut grad_scale = center(&mut g, &x, blocks);

    let lam_min = S::lit(1e-12);
    let lam_max = S::lit(1e12);
    let armijo = S::lit(1e-4);

    let mut scratch = vec![S::zero(); n];
    let mut d = vec![S::zero(); n];
    let mut xt = vec![S::zero(); n];
    let mut gt = vec![S::zero(); n];

    let mut res = residual(&x, &g, blocks, &mut scratch);
    let mut lam = if res > S::zero() {
        (S::one() / res).clip(lam_min, lam_max)
    } else {
        S::one()
    };

    let mut iters = 0;
    while iters < settings.max_iters {
        if res <= threshold(settings.tol, &x, grad_scale) {
            return Ok(Outcome {
                x,
                residual: res,
                iters,
                converged: true,
            });
        }
        iters += 1;

        for ((dk, &xk), &gk) in d.iter_mut().zip(&x).zip(&g) {
            *dk = xk - lam * gk;
        }
        project(&mut d, blocks);
        for (dk, &xk) in d.iter_mut().zip(&x) {
            *dk -= xk;
        }
        let slope = dot(&g, &d);
        if !(slope < S::zero()) {
            // Scaled direction vanished; fall back to the unit step.
            if lam != S::one() {
                lam = S::one();
                continue;
            }
            break;
        }

        let mut step = S::one();
        let mut scale_t = grad_scale;
        let accepted = loop {
            for ((xtk, &xk), &dk) in xt.iter_mut().zip(&x).zip(&d) {
                *xtk = xk + step * dk;
            }
            if let Some(ft) = objective.eval(&xt, &mut gt) {
                scale_t = center(&mut gt, &xt, blocks);
                // Armijo, or for changes below rounding resolution a
                // directional-derivative certificate: for a convex
                // objective, grad(xt).d <= 0 implies f(xt) <= f(x).
                let df = objective.change(&x, f, &xt, ft);
                let noise = S::epsilon() * S::lit(64.0) * f.abs().max(S::one());
                if df <= armijo * step * slope || (df <= noise && dot(&gt, &d) <= S::zero()) {
                    break Some(ft);
                }
            }
            step *= S::lit(0.5);
            if step < S::lit(1e-20) {
                break None;
            }
        };
        let Some(ft) = accepted else { break };

        let mut ss = S::zero();
        let mut sy = S::zero();
        for k in 0..n {
            let sk = xt[k] - x[k];
            ss += sk * sk;
            sy += sk * (gt[k] - g[k]);
        }
        lam = if sy > S::zero() {
            (ss / sy).clip(lam_min, lam_max)
        } else {
            lam_max
        };
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        f = ft;
        grad_scale = scale_t;
        res = residual(&x, &g, blocks, &mut scratch);
        if max_abs(&d) == S::zero() {
            break;
        }
    }

    Ok(Outcome {
        converged: res <= threshold(settings.tol, &x, grad_scale),
        x,
        residual: res,
        iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain closure objective.
    struct FnObjective<F>(pub F);

    impl<S: Scalar, F: FnMut(&[S], &mut [S]) -> Option<S>> Objective<S> for FnObjective<F> {
        fn eval(&mut self, x: &[S], g: &mut [S]) -> Option<S> {
            (self.0)(x, g)
        }
    }
    use proptest::prelude::*;

    /// Projection oracle: bisection on the threshold with many iterations.
    fn project_by_bisection(y: &[f64], cap: f64, total: f64) -> Vec<f64> {
        let fill = |tau: f64| y.iter().map(|&v| (v - tau).clamp(0.0, cap)).sum::<f64>();
        let (mut lo, mut hi) = (
            y.iter().cloned().fold(f64::INFINITY, f64::min) - cap - 1.0,
            y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0,
        );
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if fill(mid) > total {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tau = 0.5 * (lo + hi);
        y.iter().map(|&v| (v - tau).clamp(0.0, cap)).collect()
    }

    #[test]
    fn projection_small_cases() {
        let mut y = vec![5.0, 1.0, -2.0];
        project_capped_simplex(&mut y, 3.0, 4.0);
        assert_eq!(y, vec![3.0, 1.0, 0.0]);

        let mut y = vec![1.0, 1.0];
        project_capped_simplex(&mut y, 3.0, 3.0);
        assert_eq!(y, vec![1.5, 1.5]);

        let mut y = vec![0.3, -7.0, 2.0];
        project_capped_simplex(&mut y, 1.0, 3.0);
        assert_eq!(y, vec![1.0, 1.0, 1.0]);

        let mut y = vec![0.3, 4.0];
        project_capped_simplex(&mut y, 1.0, 0.0);
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn minimizes_separable_quadratic() {
        // min sum (x_k - c_k)^2 over {0<=x<=1, sum x = 1.5}
        let c = [0.9, 0.8, -0.5, 0.1];
        let blocks = [Block {
            range: 0..4,
            cap: 1.0,
            total: 1.5,
            majorant: None,
        }];
        let out = minimize(
            &mut FnObjective(|x: &[f64], g: &mut [f64]| {
                let mut f = 0.0;
                for k in 0..4 {
                    g[k] = 2.0 * (x[k] - c[k]);
                    f += (x[k] - c[k]).powi(2);
                }
                Some(f)
            }),
            vec![0.375; 4],
            &blocks,
            Settings {
                tol: 1e-12,
                max_iters: 1000,
            },
        )
        .unwrap();
        assert!(out.converged);
        let expected = project_by_bisection(&c, 1.0, 1.5);
        for (a, b) in out.x.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn permutohedron_small_cases() {
        let mut y = vec![5.0, 5.0];
        project_permutohedron(&mut y, &[1.0, 0.0]);
        assert_eq!(y, vec![0.5, 0.5]);

        let mut y = vec![3.0, 0.0];
        project_permutohedron(&mut y, &[1.0, 0.0]);
        assert_eq!(y, vec![1.0, 0.0]);

        // Vertices are fixed points in any order.
        let mut y = vec![0.0, 2.0, 3.0];
        project_permutohedron(&mut y, &[3.0, 2.0, 0.0]);
        assert_eq!(y, vec![0.0, 2.0, 3.0]);
    }

    #[test]
    fn flat_majorant_matches_capped_simplex() {
        let y: Vec<f64> = vec![2.5, -1.0, 0.7, 4.0, 0.1];
        let mut a = y.clone();
        project_permutohedron(&mut a, &[3.0, 3.0, 1.5, 0.0, 0.0]);
        let mut b = y;
        project_capped_simplex(&mut b, 3.0, 7.5);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-12, "{a:?} vs {b:?}");
        }
    }

    fn permutations(v: &[f64]) -> Vec<Vec<f64>> {
        if v.len() <= 1 {
            return vec![v.to_vec()];
        }
        let mut out = Vec::new();
        for k in 0..v.len() {
            let mut rest = v.to_vec();
            let head = rest.remove(k);
            for mut tail in permutations(&rest) {
                tail.insert(0, head);
                out.push(tail);
            }
        }
        out
    }

    proptest! {
        /// The projection lies in the hull and satisfies the variational
        /// inequality against every vertex.
        #[test]
        fn permutohedron_projection_is_optimal(
            y in proptest::collection::vec(-5.0..5.0f64, 1..6),
            raw in proptest::collection::vec(0.0..3.0f64, 6),
        ) {
            let mut d = raw[..y.len()].to_vec();
            d.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut p = y.clone();
            project_permutohedron(&mut p, &d);

            let mut sorted = p.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let (mut ps, mut ds) = (0.0, 0.0);
            for (a, b) in sorted.iter().zip(&d) {
                ps += a;
                ds += b;
                prop_assert!(ps <= ds + 1e-10);
            }
            prop_assert!((ps - ds).abs() <= 1e-10);
            for vertex in permutations(&d) {
                let vi: f64 = y.iter().zip(&p).zip(&vertex).map(|((&yk, &pk), &vk)| (yk - pk) * (vk - pk)).sum();
                prop_assert!(vi <= 1e-9, "{:?} -> {:?}, vertex {:?}: {}", y, p, vertex, vi);
            }
        }

        #[test]
        fn projection_matches_bisection_oracle(
            y in proptest::collection::vec(-5.0..5.0f64, 1..40),
            cap in 0.1..4.0f64,
            frac in 0.0..1.0f64,
        ) {
            let total = frac * cap * y.len() as f64;
            let mut p = y.clone();
            project_capped_simplex(&mut p, cap, total);
            let oracle = project_by_bisection(&y, cap, total);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - total).abs() <= 1e-10 * (1.0 + total));
            for (a, b) in p.iter().zip(&oracle) {
                prop_assert!(*a >= 0.0 && *a <= cap);
                prop_assert!((a - b).abs() <= 1e-8, "{} vs {}", a, b);
            }
        }
    }
}
