// SPDX-License-Identifier: Apache-2.0

//! Fixed-step integrators for batched velocity fields.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::nn::{row, VelocityField};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Euler,
    #[default]
    Heun,
}

/// Steps used for teacher log-densities unless configured otherwise.
pub const DEFAULT_LOGPROB_STEPS: usize = 100;

fn finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} produced a non-finite value")))
    }
}

/// `x + h·v` evaluated row-wise.
fn axpy(x: ArrayView2<f64>, h: f64, v: &Array2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    out.scaled_add(h, v);
    out
}

/// One solver step per row, row `i` starting at time `s[i]`.
pub fn step<F: VelocityField + ?Sized>(
    field: &F,
    kind: SolverKind,
    s: &[f64],
    h: f64,
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if h == 0.0 || !h.is_finite() {
        return Err(domain(format!("step size must be finite and non-zero, got {h}")));
    }
    if s.len() != x.nrows() {
        return Err(domain("one start time per row required"));
    }
    let k1 = field.velocity(s, x)?;
    finite(&k1, "velocity field")?;
    let out = match kind {
        SolverKind::Euler => axpy(x, h, &k1),
        SolverKind::Heun => {
            let xe = axpy(x, h, &k1);
            let sh: Vec<f64> = s.iter().map(|v| v + h).collect();
            let k2 = field.velocity(&sh, xe.view())?;
            finite(&k2, "velocity field")?;
            let mut out = x.to_owned();
            Zip::from(&mut out)
                .and(&k1)
                .and(&k2)
                .for_each(|o, &a, &b| *o += 0.5 * h * (a + b));
            out
        }
    };
    Ok(out)
}

/// Single-point form of [`step`].
pub fn solver_step<F: VelocityField + ?Sized>(
    field: &F,
    kind: SolverKind,
    s: f64,
    h: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    Ok(step(field, kind, &[s], h, row(x).view())?.row(0).to_vec())
}

fn check_times(s: f64, t: f64, n_steps: usize) -> Result<()> {
    if n_steps == 0 {
        return Err(domain("n_steps must be at least 1"));
    }
    for v in [s, t] {
        if !(0.0..=1.0).contains(&v) {
            return Err(domain(format!("time {v} outside [0, 1]")));
        }
    }
    Ok(())
}

/// `n_steps` uniform steps from `s` to `t` (backward when `t < s`).
pub fn integrate<F: VelocityField + ?Sized>(
    field: &F,
    kind: SolverKind,
    s: f64,
    t: f64,
    n_steps: usize,
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_times(s, t, n_steps)?;
    let mut cur = x.to_owned();
    if s == t {
        return Ok(cur);
    }
    let h = (t - s) / n_steps as f64;
    let mut times = vec![0.0; x.nrows()];
    for k in 0..n_steps {
        times.fill(s + k as f64 * h);
        cur = step(field, kind, &times, h, cur.view())?;
    }
    Ok(cur)
}

/// Single-point form of [`integrate`].
pub fn integrate_point<F: VelocityField + ?Sized>(
    field: &F,
    kind: SolverKind,
    s: f64,
    t: f64,
    n_steps: usize,
    x: &[f64],
) -> Result<Vec<f64>> {
    Ok(integrate(field, kind, s, t, n_steps, row(x).view())?.row(0).to_vec())
}

/// Augmented state `(x, A)` with `dA/du = tr ∇v_u(x)`, one entry per row.
#[derive(Clone, Debug, PartialEq)]
pub struct AugState {
    pub x: Array2<f64>,
    pub logacc: Vec<f64>,
}

/// Integrates `(x, A)` with Heun from `u = 1` back to `u = 0`.
///
/// Returns the recovered `x_0` and `∫₀¹ tr ∇v_u du` along the trajectory, so
/// that `log p_1(y) = log p_0(x_0) − integral`.
pub fn integrate_logprob_backward<F: VelocityField + ?Sized>(
    field: &F,
    y: ArrayView2<f64>,
    n_steps: usize,
) -> Result<AugState> {
    check_times(1.0, 0.0, n_steps)?;
    let n = y.nrows();
    let h = -1.0 / n_steps as f64;
    let mut x = y.to_owned();
    let mut acc = vec![0.0; n];
    let mut times = vec![0.0; n];
    for k in 0..n_steps {
        let u = 1.0 + k as f64 * h;
        times.fill(u);
        let (k1, tr1) = field.velocity_and_trace(&times, x.view())?;
        finite(&k1, "velocity field")?;
        let xe = axpy(x.view(), h, &k1);
        times.fill(u + h);
        let (k2, tr2) = field.velocity_and_trace(&times, xe.view())?;
        finite(&k2, "velocity field")?;
        Zip::from(&mut x)
            .and(&k1)
            .and(&k2)
            .for_each(|o, &a, &b| *o += 0.5 * h * (a + b));
        for i in 0..n {
            acc[i] += 0.5 * h * (tr1[i] + tr2[i]);
        }
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-density integral".into()));
    }
    // A(1) = 0 at the start, so A(1) − A(0) = −A(0).
    Ok(AugState {
        x,
        logacc: acc.into_iter().map(|a| -a).collect(),
    })
}
