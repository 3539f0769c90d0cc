//! Interior-point path for a binding hot-spot limit.
//!
//! Power bounds and the hot-spot limit enter a log-barrier, and each row's
//! energy is an equality kept by the Newton steps. The cost depends on the
//! rows only through their sum, so the Newton system is a diagonal plus a
//! rank-T term and is solved in T x T and rows x rows dense systems.

use super::{Aggregated, Convergence, SolveOptions};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MU_START: f64 = 1.0;
const MU_SHRINK: f64 = 0.2;
const MU_END: f64 = 1e-8;
const NEWTON_PER_STAGE: usize = 100;
/// Fraction of the distance to the nearest bound a step may cover.
const BOUNDARY_FRACTION: f64 = 0.99;

/// Dense LU of a row-major `n x n` matrix, solved in f64.
struct Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>);

impl Lu {
    fn factor<S: Scalar>(a: &[S], n: usize) -> Option<Self> {
        let m = nalgebra::DMatrix::from_fn(n, n, |r, c| a[r * n + c].as_f64());
        let lu = m.lu();
        lu.is_invertible().then_some(Self(lu))
    }

    fn solve<S: Scalar>(&self, b: &mut [S]) {
        let rhs = nalgebra::DVector::from_iterator(b.len(), b.iter().map(|v| v.as_f64()));
        let x = self.0.solve(&rhs).expect("factor checked invertibility");
        for (out, &v) in b.iter_mut().zip(x.iter()) {
            *out = S::lit(v);
        }
    }
}

/// Rows that still carry freedom, with their caps.
struct Layout<S> {
    rows: Vec<usize>,
    caps: Vec<S>,
    slots: usize,
    /// Load of the fixed rows plus the aggregate offset.
    base: Vec<S>,
}

impl<S: Scalar> Layout<S> {
    fn sum_load(&self, y: &[S]) -> Vec<S> {
        let mut w = self.base.clone();
        for row in y.chunks_exact(self.slots) {
            for (acc, &p) in w.iter_mut().zip(row) {
                *acc += p;
            }
        }
        w
    }
}

struct Eval<S> {
    value: S,
    grad: Vec<S>,
    /// Diagonal of the bound-barrier Hessian.
    diag: Vec<S>,
    /// Hessian of the aggregate cost with respect to the sum load.
    hess: Vec<S>,
}

fn evaluate<S: Scalar>(
    agg: &Aggregated<'_, S>,
    lay: &Layout<S>,
    y: &[S],
    mu: S,
    with_hessian: bool,
) -> Option<Eval<S>> {
    let t_len = lay.slots;
    let w = lay.sum_load(y);
    let mut gw = vec![S::zero(); t_len];
    let mut hess = Vec::new();
    let mut value = if with_hessian {
        hess = vec![S::zero(); t_len * t_len];
        agg.model
            .value_gradient_hessian(&w, Some(mu), &mut gw, &mut hess)?
    } else {
        agg.model.value_and_gradient(&w, Some(mu), &mut gw)?
    };
    let mut grad = Vec::with_capacity(y.len());
    let mut diag = Vec::with_capacity(y.len());
    for (k, row) in y.chunks_exact(t_len).enumerate() {
        let cap = lay.caps[k];
        for (t, &x) in row.iter().enumerate() {
            let room = cap - x;
            if !(x > S::zero() && room > S::zero()) {
                return None;
            }
            value -= mu * (x.ln() + room.ln());
            grad.push(gw[t] - mu / x + mu / room);
            diag.push(mu / (x * x) + mu / (room * room));
        }
    }
    Some(Eval {
        value,
        grad,
        diag,
        hess,
    })
}

/// Barrier objective change from `y` to `trial` without cancellation.
fn value_change<S: Scalar>(
    agg: &Aggregated<'_, S>,
    lay: &Layout<S>,
    y: &[S],
    trial: &[S],
    mu: S,
) -> Option<S> {
    let (w, w_new) = (lay.sum_load(y), lay.sum_load(trial));
    let mut change = agg.model.value_change(&w, &w_new, Some(mu))?;
    for (j, (&x, &xt)) in y.iter().zip(trial).enumerate() {
        let room = lay.caps[j / lay.slots] - x;
        let dx = xt - x;
        change -= mu * ((dx / x).ln_1p() + (-dx / room).ln_1p());
    }
    Some(change)
}

/// Equality-constrained Newton direction and the squared Newton decrement.
fn newton_direction<S: Scalar>(e: &Eval<S>, rows: usize, slots: usize) -> Option<(Vec<S>, S)> {
    let n = rows * slots;
    // Woodbury: (D + K'HK)^-1 y = D^-1 y - D^-1 K' z, (I + H E) z = H K D^-1 y,
    // with K summing rows and E = K D^-1 K'.
    let mut spread = vec![S::zero(); slots];
    for row in e.diag[..n].chunks_exact(slots) {
        for (acc, &d) in spread.iter_mut().zip(row) {
            *acc += S::one() / d;
        }
    }
    let mut z_mat = vec![S::zero(); slots * slots];
    for r in 0..slots {
        for c in 0..slots {
            z_mat[r * slots + c] = e.hess[r * slots + c] * spread[c];
        }
        z_mat[r * slots + r] += S::one();
    }
    let z_lu = Lu::factor(&z_mat, slots)?;
    let apply_inverse = |y: &[S]| -> Vec<S> {
        let scaled: Vec<S> = y.iter().zip(&e.diag).map(|(&v, &d)| v / d).collect();
        let mut agg = vec![S::zero(); slots];
        for row in scaled.chunks_exact(slots) {
            for (acc, &v) in agg.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let mut z: Vec<S> = (0..slots)
            .map(|r| (0..slots).map(|c| e.hess[r * slots + c] * agg[c]).sum())
            .collect();
        z_lu.solve(&mut z);
        scaled
            .iter()
            .enumerate()
            .map(|(j, &v)| v - z[j % slots] / e.diag[j])
            .collect()
    };

    let m_grad = apply_inverse(&e.grad);
    let mut row_dirs = Vec::with_capacity(rows);
    let mut schur = vec![S::zero(); rows * rows];
    for k in 0..rows {
        let mut indicator = vec![S::zero(); n];
        for v in &mut indicator[k * slots..(k + 1) * slots] {
            *v = S::one();
        }
        let col = apply_inverse(&indicator);
        for (l, chunk) in col.chunks_exact(slots).enumerate() {
            schur[l * rows + k] = chunk.iter().copied().sum();
        }
        row_dirs.push(col);
    }
    let mut nu: Vec<S> = m_grad
        .chunks_exact(slots)
        .map(|c| -c.iter().copied().sum::<S>())
        .collect();
    Lu::factor(&schur, rows)?.solve(&mut nu);

    let mut d: Vec<S> = m_grad.iter().map(|&v| -v).collect();
    for (k, col) in row_dirs.iter().enumerate() {
        for (dj, &cj) in d.iter_mut().zip(col) {
            *dj -= nu[k] * cj;
        }
    }
    let decrement = -e.grad.iter().zip(&d).map(|(&g, &v)| g * v).sum::<S>();
    Some((d, decrement))
}

fn max_step<S: Scalar>(y: &[S], d: &[S], caps: &[S], slots: usize) -> S {
    let mut step = S::infinity();
    for (j, (&x, &dj)) in y.iter().zip(d).enumerate() {
        if dj < S::zero() {
            step = step.min(-x / dj);
        } else if dj > S::zero() {
            step = step.min((caps[j / slots] - x) / dj);
        }
    }
    (step * S::lit(BOUNDARY_FRACTION)).min(S::one())
}

/// Follows the barrier path from a strictly interior `interior` (same
/// layout as the aggregate's variables). Returns the full variable vector.
pub(crate) fn barrier_path<S: Scalar>(
    agg: &Aggregated<'_, S>,
    interior: &[S],
    opts: &SolveOptions<S>,
) -> Result<(Vec<S>, Convergence<S>)> {
    let slots = agg.offset.len();
    let mut full = interior.to_vec();
    let mut layout = Layout {
        rows: Vec::new(),
        caps: Vec::new(),
        slots,
        base: agg.offset.clone(),
    };
    for (k, b) in agg.blocks.iter().enumerate() {
        let capacity = b.cap * S::count(slots);
        let fixed = if b.total <= S::zero() {
            Some(S::zero())
        } else if b.total >= capacity * (S::one() - S::lit(1e-12)) {
            Some(b.cap)
        } else {
            None
        };
        match fixed {
            Some(value) => {
                for (t, x) in full[b.range.clone()].iter_mut().enumerate() {
                    *x = value;
                    layout.base[t] += value;
                }
            }
            None => {
                layout.rows.push(k);
                layout.caps.push(b.cap);
            }
        }
    }
    let mut y: Vec<S> = layout
        .rows
        .iter()
        .flat_map(|&k| full[agg.blocks[k].range.clone()].to_vec())
        .collect();

    let rows = layout.rows.len();
    let mut mu = S::lit(MU_START);
    let last = S::lit(MU_END);
    let armijo = S::lit(0.25);
    let mut iterations = 0;
    let mut stages = 0;
    let mut decrement = S::zero();
    let mut converged = rows == 0;
    if rows > 0 && evaluate(agg, &layout, &y, mu, false).is_none() {
        return Err(Error::Domain(
            "barrier start is not strictly inside the power and temperature limits".into(),
        ));
    }

    while rows > 0 && mu >= last * S::lit(0.999) {
        stages += 1;
        converged = false;
        for _ in 0..NEWTON_PER_STAGE {
            let e = evaluate(agg, &layout, &y, mu, true).expect("iterate stays interior");
            let (d, lam2) = newton_direction(&e, rows, slots).ok_or_else(|| {
                Error::Domain("singular Newton system on the barrier path".into())
            })?;
            decrement = lam2 * S::lit(0.5);
            if decrement <= opts.kkt_tol {
                converged = true;
                break;
            }
            iterations += 1;
            let mut step = max_step(&y, &d, &layout.caps, slots);
            let slope = -lam2;
            let noise = S::epsilon() * S::lit(64.0) * e.value.abs().max(S::one());
            let mut trial = vec![S::zero(); y.len()];
            let accepted = loop {
                for ((t, &x), &dj) in trial.iter_mut().zip(&y).zip(&d) {
                    *t = x + step * dj;
                }
                if let Some(f) = evaluate(agg, &layout, &trial, mu, false) {
                    let directional = f.grad.iter().zip(&d).map(|(&g, &v)| g * v).sum::<S>();
                    let df =
                        value_change(agg, &layout, &y, &trial, mu).unwrap_or(f.value - e.value);
                    if df <= armijo * step * slope || (df <= noise && directional <= S::zero()) {
                        break true;
                    }
                }
                step *= S::lit(0.5);
                if step < S::lit(1e-20) {
                    break false;
                }
            };
            if !accepted {
                break;
            }
            std::mem::swap(&mut y, &mut trial);
        }
        mu *= S::lit(MU_SHRINK);
    }
    if !converged {
        return Err(Error::NotConverged {
            iters: iterations,
            residual: decrement.as_f64(),
        });
    }

    for (j, &k) in layout.rows.iter().enumerate() {
        full[agg.blocks[k].range.clone()].copy_from_slice(&y[j * slots..(j + 1) * slots]);
    }
    Ok((
        full,
        Convergence {
            iterations,
            residual: decrement,
            barrier_stages: stages,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AmbientSeries;
    use crate::problem::{CostModel, MemorylessCost, Scenario};

    #[test]
    fn lu_solves_permuted_system() {
        let a = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let lu = Lu::factor(&a, 3).unwrap();
        let x = [1.0, -2.0, 0.5];
        let mut b: Vec<f64> = (0..3)
            .map(|r| (0..3).map(|c| a[r * 3 + c] * x[c]).sum())
            .collect();
        lu.solve(&mut b);
        for (u, v) in b.iter().zip(x) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let mut s = Scenario::new(
            vec![5.0],
            vec![60.0, 85.0, 40.0, 70.0, 95.0],
            AmbientSeries(vec![12.0, 15.0, 9.0, 20.0, 25.0]),
        );
        s.memoryless = MemorylessCost::Quadratic { coefficient: 3.0 };
        let m = CostModel::new(&s);
        let w = [2.0, 1.0, 4.0, 0.5, 3.0];
        let n = w.len();
        let mu = Some(0.3);
        let mut g = vec![0.0; n];
        let mut h = vec![0.0f64; n * n];
        m.value_gradient_hessian(&w, mu, &mut g, &mut h).unwrap();
        let eps = 1e-5;
        for c in 0..n {
            let (mut wp, mut wm) = (w, w);
            wp[c] += eps;
            wm[c] -= eps;
            let (mut gp, mut gm) = (vec![0.0; n], vec![0.0; n]);
            m.value_and_gradient(&wp, mu, &mut gp).unwrap();
            m.value_and_gradient(&wm, mu, &mut gm).unwrap();
            for r in 0..n {
                let fd = (gp[r] - gm[r]) / (2.0 * eps);
                let scale = h[r * n + c].abs().max(1e-6);
                assert!(
                    (fd - h[r * n + c]).abs() / scale < 1e-5,
                    "({r},{c}): {fd} vs {}",
                    h[r * n + c]
                );
            }
        }
    }
}
