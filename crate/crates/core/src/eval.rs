// SPDX-License-Identifier: Apache-2.0

//! Few-step sampling and the Monte-Carlo KL metric.
//!
//! The student density of a `K`-step sample follows from the change of
//! variables through each TTFM jump; the teacher density comes from
//! integrating `d log p/dt = −tr ∇v` backward along the teacher's ODE.
//! With `r = p_teacher/p_student` evaluated at student samples, the
//! estimator `mean(r − 1 − log r)` is unbiased for `KL(student ‖ teacher)`
//! and every summand is non-negative.

use nalgebra::DMatrix;
use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::nn::{row, AverageVelocity, Ttfm, VelocityField};
use crate::ode::{integrate_logprob_backward, DEFAULT_LOGPROB_STEPS};
use crate::probpath::standard_normal;

/// Jacobians with `|det|` below this are treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// Composition knots `0 = u_0 < … < u_K = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NfeSchedule {
    knots: Vec<f64>,
}

impl NfeSchedule {
    /// Uniform knots `u_k = k/K`.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(domain("NFE must be at least 1"));
        }
        Ok(Self {
            knots: (0..=k).map(|i| i as f64 / k as f64).collect(),
        })
    }

    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        let ok = knots.len() >= 2
            && knots[0] == 0.0
            && *knots.last().unwrap() == 1.0
            && knots.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(domain("knots must increase strictly from 0 to 1"));
        }
        Ok(Self { knots })
    }

    pub fn nfe(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
}

/// One generated sample with all intermediate states `y^(0) = x0, …, y^(K)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub x0: Vec<f64>,
    pub ys: Vec<Vec<f64>>,
}

impl SampleTrace {
    pub fn output(&self) -> &[f64] {
        self.ys.last().expect("trace holds at least x0")
    }
}

/// `log N(x; 0, I)`.
pub fn log_standard_normal(x: &[f64]) -> f64 {
    let d = x.len() as f64;
    -0.5 * x.iter().map(|v| v * v).sum::<f64>() - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
}

/// `det m`: closed form for 2×2, LU otherwise.
pub fn determinant(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 2 {
        m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
    } else {
        m.clone().lu().determinant()
    }
}

/// `log |det m|`, or `None` when the matrix is singular.
pub fn log_abs_det(m: &DMatrix<f64>) -> Option<f64> {
    let det = determinant(m);
    (det.abs() >= SINGULAR_DET && det.is_finite()).then(|| det.abs().ln())
}

/// Batched push-forward of `x0` through the schedule.
struct PushForward {
    states: Vec<Array2<f64>>,
    /// `Σ_k log |det ∂φ|` per row; empty when not requested.
    logdet: Vec<f64>,
    /// Rows that stayed finite and, if log-dets were requested, invertible.
    ok: Vec<bool>,
}

fn push_forward<A: AverageVelocity>(
    ttfm: &Ttfm<A>,
    schedule: &NfeSchedule,
    x0: ArrayView2<f64>,
    with_logdet: bool,
) -> Result<PushForward> {
    let n = x0.nrows();
    let mut states = vec![x0.to_owned()];
    let mut logdet = if with_logdet { vec![0.0; n] } else { Vec::new() };
    let mut ok = vec![true; n];
    for w in schedule.knots().windows(2) {
        let (s, t) = (vec![w[0]; n], vec![w[1]; n]);
        let y = states.last().unwrap().view();
        let next = if with_logdet {
            let (phi, jacs) = ttfm.jacobian_x(&s, &t, y)?;
            for (i, j) in jacs.iter().enumerate() {
                match log_abs_det(j) {
                    Some(l) => logdet[i] += l,
                    None => ok[i] = false,
                }
            }
            phi
        } else {
            ttfm.forward(&s, &t, y)?
        };
        for (i, r) in next.rows().into_iter().enumerate() {
            if r.iter().any(|v| !v.is_finite()) {
                ok[i] = false;
            }
        }
        states.push(next);
    }
    Ok(PushForward { states, logdet, ok })
}

/// `n × d` standard normals in row order.
pub fn draw_noise<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Array2<f64> {
    let flat: Vec<f64> = (0..n).flat_map(|_| standard_normal(rng, d)).collect();
    Array2::from_shape_vec((n, d), flat).expect("n·d values")
}

/// Draws `n` noise vectors and composes the TTFM over the schedule. Samples
/// that turn non-finite are dropped; the count is returned alongside.
pub fn sample_student<A: AverageVelocity, R: Rng + ?Sized>(
    ttfm: &Ttfm<A>,
    schedule: &NfeSchedule,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<SampleTrace>, usize)> {
    let x0 = draw_noise(n, ttfm.dim(), rng);
    let pf = push_forward(ttfm, schedule, x0.view(), false)?;
    let mut traces = Vec::with_capacity(n);
    for i in 0..n {
        if pf.ok[i] {
            traces.push(SampleTrace {
                x0: x0.row(i).to_vec(),
                ys: pf.states.iter().map(|a| a.row(i).to_vec()).collect(),
            });
        }
    }
    let rejected = n - traces.len();
    Ok((traces, rejected))
}

/// Final states only, for bulk generation.
pub fn generate<A: AverageVelocity>(ttfm: &Ttfm<A>, schedule: &NfeSchedule, x0: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(push_forward(ttfm, schedule, x0, false)?.states.pop().unwrap())
}

/// `log p_0(x0) − Σ_k log |det ∂φ_{u_{k−1},u_k}(y^(k−1))|`.
pub fn logprob_student<A: AverageVelocity>(ttfm: &Ttfm<A>, schedule: &NfeSchedule, trace: &SampleTrace) -> Result<f64> {
    if trace.ys.len() != schedule.nfe() + 1 {
        return Err(domain("trace length does not match the schedule"));
    }
    let mut lp = log_standard_normal(&trace.x0);
    for (k, w) in schedule.knots().windows(2).enumerate() {
        let (_, jacs) = ttfm.jacobian_x(&[w[0]], &[w[1]], row(&trace.ys[k]).view())?;
        match log_abs_det(&jacs[0]) {
            Some(l) => lp -= l,
            None => return Err(Error::SingularJacobian(determinant(&jacs[0]))),
        }
    }
    Ok(lp)
}

/// `log p^η_1(y)` for every row of `y`.
pub fn logprob_teacher<F: VelocityField + ?Sized>(teacher: &F, y: ArrayView2<f64>, n_steps: usize) -> Result<Vec<f64>> {
    let aug = integrate_logprob_backward(teacher, y, n_steps)?;
    Ok(aug
        .x
        .rows()
        .into_iter()
        .zip(&aug.logacc)
        .map(|(x0, a)| log_standard_normal(x0.as_slice().expect("standard layout")) - a)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KlOptions {
    pub ode_steps: usize,
    /// Rows per batched evaluation. Only affects memory, not results.
    pub chunk: usize,
    pub keep_terms: bool,
}

impl Default for KlOptions {
    fn default() -> Self {
        Self {
            ode_steps: DEFAULT_LOGPROB_STEPS,
            chunk: 1000,
            keep_terms: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    pub nfe: usize,
    /// Requested sample count.
    pub n: usize,
    pub estimate: f64,
    pub std_error: f64,
    /// Samples dropped for a singular or non-finite student step.
    pub dropped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_sample_terms: Option<Vec<f64>>,
}

/// `e^z − 1 − z`, the per-sample summand for `z = log r`.
pub fn kl_term(z: f64) -> f64 {
    // Non-negative in exact arithmetic; clamp the rounding residue near 0.
    (z.exp_m1() - z).max(0.0)
}

/// Monte-Carlo `KL(student ‖ teacher)` from `n` student samples.
///
/// All noise is drawn up front in row order, so the report depends only on
/// the RNG state, not on `opts.chunk`.
pub fn kl_estimate<A, F, R>(
    ttfm: &Ttfm<A>,
    teacher: &F,
    schedule: &NfeSchedule,
    n: usize,
    rng: &mut R,
    opts: &KlOptions,
) -> Result<KlReport>
where
    A: AverageVelocity,
    F: VelocityField + ?Sized,
    R: Rng + ?Sized,
{
    if n < 2 {
        return Err(domain("KL estimation needs at least 2 samples"));
    }
    if ttfm.dim() != teacher.dim() {
        return Err(domain("student and teacher dimensions differ"));
    }
    let x0 = draw_noise(n, ttfm.dim(), rng);
    let chunk = opts.chunk.max(1);
    let mut terms = Vec::with_capacity(n);
    for start in (0..n).step_by(chunk) {
        let end = (start + chunk).min(n);
        let xs = x0.slice(s![start..end, ..]);
        let pf = push_forward(ttfm, schedule, xs, true)?;
        let keep: Vec<usize> = (0..end - start).filter(|&i| pf.ok[i]).collect();
        if keep.is_empty() {
            continue;
        }
        let y_all = pf.states.last().unwrap();
        let y = y_all.select(ndarray::Axis(0), &keep);
        let lt = logprob_teacher(teacher, y.view(), opts.ode_steps)?;
        for (j, &i) in keep.iter().enumerate() {
            let ls = log_standard_normal(xs.row(i).as_slice().expect("standard layout")) - pf.logdet[i];
            terms.push(kl_term(lt[j] - ls));
        }
    }
    let m = terms.len();
    let dropped = n - m;
    if m < 2 {
        return Err(domain(format!("only {m} of {n} samples were usable")));
    }
    let mean = terms.iter().sum::<f64>() / m as f64;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    let warning = (dropped * 100 > n).then(|| format!("{dropped} of {n} samples dropped (more than 1%)"));
    Ok(KlReport {
        nfe: schedule.nfe(),
        n,
        estimate: mean,
        std_error: (var / m as f64).sqrt(),
        dropped,
        warning,
        per_sample_terms: opts.keep_terms.then_some(terms),
    })
}
