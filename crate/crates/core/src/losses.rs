// SPDX-License-Identifier: Apache-2.0

//! Training losses and their parameter gradients.
//!
//! Every loss is a batch mean of squared Euclidean residuals. Student losses
//! read three parameter views: the live `θ` (the only one that receives
//! gradient), the stop-gradient copy `[θ]` and the in-loss EMA `⟨θ⟩`. During
//! training `[θ]` is the live store itself, in which case its forward values
//! are reused rather than recomputed.

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::PointCloud;
use crate::error::{domain, Error, Result};
use crate::nn::{scale_rows, AverageVelocity, Direction, ParamStore, StudentArch, TeacherArch, VelocityField};
use crate::ode::{step, SolverKind};
use crate::probpath::{sample_coupled, PathConfig, StateSampler};

/// Smallest admissible `t − u` in the finite-difference losses.
pub const MIN_INTERVAL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Cfm,
    Itvm,
    Lfmd,
    Efmd,
    Pid,
    TvmOnly,
}

/// Intermediate time `u` of the terminal velocity term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UStrategy {
    /// `u = t − τ`.
    #[default]
    TerminalMinusTau,
    /// `u = s + τ`, with `t ≥ s + 2τ` so that `t − u ≥ τ`.
    InitialPlusTau,
    /// `u ~ U[s, t − τ]`.
    UniformOnInterval,
}

/// Sign in front of the spatial term of the Eulerian loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EfmdSign {
    /// `∂_s φ + (∂_x φ) v`, zero for exact flows.
    #[default]
    PdeConsistent,
    /// `∂_s φ − (∂_x φ) v`.
    PaperLiteral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    pub tau: f64,
    pub mu: f64,
    pub u_strategy: UStrategy,
    pub efmd_sign: EfmdSign,
    /// Weights of the IIVM, IAVM and TVM terms.
    pub term_weights: [f64; 3],
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: LossKind::Itvm,
            tau: 0.005,
            mu: 0.9,
            u_strategy: UStrategy::TerminalMinusTau,
            efmd_sign: EfmdSign::PdeConsistent,
            term_weights: [1.0, 1.0, 1.0],
        }
    }
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("loss.tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.u_strategy == UStrategy::InitialPlusTau && 2.0 * self.tau >= 1.0 {
            return Err(Error::Config("loss.tau must be below 0.5 for u = s + tau".into()));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::Config(format!("loss.mu must lie in [0, 1), got {}", self.mu)));
        }
        if self.term_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("loss.term_weights must be finite and non-negative".into()));
        }
        if self.kind == LossKind::Itvm && self.term_weights.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("loss.term_weights must not all be zero".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBatchReport {
    pub total: f64,
    pub per_term: BTreeMap<String, f64>,
    pub n: usize,
}

/// Loss value plus gradient with respect to the live parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub report: LossBatchReport,
    pub grad: Vec<f64>,
}

/// A single loss term evaluated on one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct TermLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// The three parameter views a student loss reads.
#[derive(Clone, Copy, Debug)]
pub struct StudentParams<'a> {
    pub live: &'a ParamStore,
    pub stop: &'a ParamStore,
    pub ema: &'a ParamStore,
}

impl<'a> StudentParams<'a> {
    /// `[θ] = θ`, the training configuration.
    pub fn tied(live: &'a ParamStore, ema: &'a ParamStore) -> Self {
        Self { live, stop: live, ema }
    }

    fn stop_is_live(&self) -> bool {
        std::ptr::eq(self.live, self.stop)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CfmBatch {
    pub t: Vec<f64>,
    pub x_t: Array2<f64>,
    pub v_cond: Array2<f64>,
}

/// Times `s` with states `x_s ~ p_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialBatch {
    pub s: Vec<f64>,
    pub x_s: Array2<f64>,
}

/// Time pairs `s ≤ t` with states `x_s ~ p_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoTimeBatch {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub x_s: Array2<f64>,
}

/// Time triples `s ≤ u < t` with states `x_s ~ p_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct TvmBatch {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub x_s: Array2<f64>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// `n` coupled samples, each drawn as `(t, x0, x_data)`.
pub fn sample_cfm_batch<R: Rng + ?Sized>(
    cfg: &PathConfig,
    data: &PointCloud,
    n: usize,
    rng: &mut R,
) -> Result<CfmBatch> {
    if data.is_empty() {
        return Err(domain("cannot sample from an empty point cloud"));
    }
    let d = data.dim();
    let mut batch = CfmBatch {
        t: Vec::with_capacity(n),
        x_t: Array2::zeros((n, d)),
        v_cond: Array2::zeros((n, d)),
    };
    for i in 0..n {
        let c = sample_coupled(cfg, data, rng)?;
        batch.t.push(c.t);
        for k in 0..d {
            batch.x_t[[i, k]] = c.x_t[k];
            batch.v_cond[[i, k]] = c.v_cond[k];
        }
    }
    Ok(batch)
}

/// `s ~ U[0, s_max]` for every row, then the states in row order.
pub fn sample_initial<S: StateSampler, R: Rng + ?Sized>(
    sampler: &S,
    n: usize,
    s_max: f64,
    rng: &mut R,
) -> Result<InitialBatch> {
    let s: Vec<f64> = (0..n).map(|_| uniform(rng, 0.0, s_max)).collect();
    let x_s = sampler.sample_batch(&s, rng)?;
    Ok(InitialBatch { s, x_s })
}

/// `s ~ U[0, 1 − gap]`, `t ~ U[s + gap, 1]` per row, then the states.
pub fn sample_two_time<S: StateSampler, R: Rng + ?Sized>(
    sampler: &S,
    n: usize,
    gap: f64,
    rng: &mut R,
) -> Result<TwoTimeBatch> {
    let mut s = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    for _ in 0..n {
        let si = uniform(rng, 0.0, 1.0 - gap);
        s.push(si);
        t.push(uniform(rng, si + gap, 1.0));
    }
    let x_s = sampler.sample_batch(&s, rng)?;
    Ok(TwoTimeBatch { s, t, x_s })
}

/// Draws `(s, t[, u])` per row according to the strategy, then the states.
pub fn sample_tvm<S: StateSampler, R: Rng + ?Sized>(
    sampler: &S,
    n: usize,
    tau: f64,
    strategy: UStrategy,
    rng: &mut R,
) -> Result<TvmBatch> {
    let gap = match strategy {
        UStrategy::InitialPlusTau => 2.0 * tau,
        _ => tau,
    };
    let (mut s, mut t, mut u) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let si = uniform(rng, 0.0, 1.0 - gap);
        let ti = uniform(rng, si + gap, 1.0);
        let ui = match strategy {
            UStrategy::TerminalMinusTau => ti - tau,
            UStrategy::InitialPlusTau => si + tau,
            UStrategy::UniformOnInterval => uniform(rng, si, ti - tau),
        };
        debug_assert!(si <= ui && ui < ti && ti <= 1.0);
        s.push(si);
        t.push(ti);
        u.push(ui);
    }
    let x_s = sampler.sample_batch(&s, rng)?;
    Ok(TvmBatch { s, t, u, x_s })
}

fn check_rows(n: usize, times: &[&[f64]], x: &Array2<f64>) -> Result<()> {
    if n == 0 {
        return Err(domain("loss batch is empty"));
    }
    if x.nrows() != n || times.iter().any(|t| t.len() != n) {
        return Err(domain("loss batch columns have different lengths"));
    }
    Ok(())
}

/// Mean squared row norm of `r`, with `r` replaced by `∂(mean)/∂r · scale`.
fn mean_sq_and_grad(r: &mut Array2<f64>, scale: f64, what: &str) -> Result<f64> {
    let n = r.nrows() as f64;
    let value = r.iter().map(|v| v * v).sum::<f64>() / n;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{what} loss")));
    }
    r.mapv_inplace(|v| 2.0 * scale * v / n);
    Ok(value)
}

fn diffs(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a - b).collect()
}

/// `x + gap ⊙ v`, row-wise.
fn flow_from(x: ArrayView2<f64>, gap: &[f64], v: ArrayView2<f64>) -> Array2<f64> {
    let mut out = v.to_owned();
    scale_rows(&mut out, gap);
    out + x
}

/// Conditional flow matching loss of a teacher network.
pub fn cfm_loss(arch: &TeacherArch, params: &ParamStore, batch: &CfmBatch) -> Result<TermLoss> {
    let mut grad = vec![0.0; params.len()];
    let value = cfm_loss_into(arch, params, batch, 1.0, &mut grad)?;
    Ok(TermLoss { value, grad })
}

pub fn cfm_loss_into(
    arch: &TeacherArch,
    params: &ParamStore,
    batch: &CfmBatch,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_rows(batch.t.len(), &[], &batch.x_t)?;
    let trace = arch.forward_trace(params, &batch.t, batch.x_t.view())?;
    let mut r = trace.output() - &batch.v_cond;
    let value = mean_sq_and_grad(&mut r, scale, "CFM")?;
    arch.mlp.backward(params, &trace, r.view(), grad)?;
    Ok(value)
}

/// Matches `v^θ_{s,t}(x)` to a fixed target, accumulating the gradient.
#[allow(clippy::too_many_arguments)]
fn regress_into(
    arch: &StudentArch,
    live: &ParamStore,
    s: &[f64],
    t: &[f64],
    x: ArrayView2<f64>,
    target: &Array2<f64>,
    scale: f64,
    grad: &mut [f64],
    what: &str,
) -> Result<f64> {
    let trace = arch.forward_trace(live, s, t, x)?;
    let mut r = trace.output() - target;
    let value = mean_sq_and_grad(&mut r, scale, what)?;
    arch.mlp.backward(live, &trace, r.view(), grad)?;
    Ok(value)
}

/// Initial instantaneous velocity matching: `v^θ_{s,s}(x_s) ≈ v^η_s(x_s)`.
pub fn iivm_loss<T: VelocityField + ?Sized>(
    arch: &StudentArch,
    live: &ParamStore,
    teacher: &T,
    batch: &InitialBatch,
) -> Result<TermLoss> {
    let mut grad = vec![0.0; live.len()];
    let value = iivm_loss_into(arch, live, teacher, batch, 1.0, &mut grad)?;
    Ok(TermLoss { value, grad })
}

pub fn iivm_loss_into<T: VelocityField + ?Sized>(
    arch: &StudentArch,
    live: &ParamStore,
    teacher: &T,
    batch: &InitialBatch,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_rows(batch.s.len(), &[], &batch.x_s)?;
    let target = teacher.velocity(&batch.s, batch.x_s.view())?;
    regress_into(arch, live, &batch.s, &batch.s, batch.x_s.view(), &target, scale, grad, "IIVM")
}

/// `(S^{η,τ}_{s,s+τ}(x) − x)/τ` with one Heun step.
pub fn heun_average_velocity<T: VelocityField + ?Sized>(
    teacher: &T,
    s: &[f64],
    tau: f64,
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let mut y = step(teacher, SolverKind::Heun, s, tau, x)?;
    y -= &x;
    y /= tau;
    Ok(y)
}

/// Initial average velocity matching against one Heun step of the teacher.
pub fn iavm_loss<T: VelocityField + ?Sized>(
    arch: &StudentArch,
    live: &ParamStore,
    teacher: &T,
    batch: &InitialBatch,
    tau: f64,
) -> Result<TermLoss> {
    let mut grad = vec![0.0; live.len()];
    let value = iavm_loss_into(arch, live, teacher, batch, tau, 1.0, &mut grad)?;
    Ok(TermLoss { value, grad })
}

pub fn iavm_loss_into<T: VelocityField + ?Sized>(
    arch: &StudentArch,
    live: &ParamStore,
    teacher: &T,
    batch: &InitialBatch,
    tau: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_rows(batch.s.len(), &[], &batch.x_s)?;
    if batch.s.iter().any(|&s| !(0.0..=1.0 - tau).contains(&s)) {
        return Err(domain("IAVM needs s in [0, 1 - tau]"));
    }
    let target = heun_average_velocity(teacher, &batch.s, tau, batch.x_s.view())?;
    let t: Vec<f64> = batch.s.iter().map(|s| s + tau).collect();
    regress_into(arch, live, &batch.s, &t, batch.x_s.view(), &target, scale, grad, "IAVM")
}

enum FdTarget<'a, T: ?Sized> {
    /// `v^⟨θ⟩_{u,t}(φ^[θ]_{s,u}(x))`.
    SelfEma(&'a ParamStore),
    /// `v^η_t(φ^[θ]_{s,t}(x))`.
    Teacher(&'a T),
}

/// Shared body of TVM and PID:
/// `‖(φ^θ_{s,t} − φ^θ_{s,u})/(t − u) − target‖²`.
#[allow(clippy::too_many_arguments)]
fn finite_difference_into<T: VelocityField + ?Sized>(
    arch: &StudentArch,
    p: &StudentParams<'_>,
    target: FdTarget<'_, T>,
    s: &[f64],
    t: &[f64],
    u: &[f64],
    x: ArrayView2<f64>,
    scale: f64,
    grad: &mut [f64],
    what: &str,
) -> Result<f64> {
    let n = s.len();
    let interval = diffs(t, u);
    if let Some(&h) = interval.iter().find(|&&h| h.is_nan() || h < MIN_INTERVAL) {
        return Err(Error::DegenerateInterval(h));
    }
    let gap_t = diffs(t, s);
    let gap_u = diffs(u, s);
    // Rows 0..n evaluate at (s, t), rows n..2n at (s, u).
    let ss = [s, s].concat();
    let tt = [t, u].concat();
    let xx = concatenate(Axis(0), &[x, x]).expect("equal widths");
    let trace = arch.forward_trace(p.live, &ss, &tt, xx.view())?;
    let out = trace.output();
    let stop_out;
    let sg = if p.stop_is_live() {
        out
    } else {
        stop_out = arch.mlp.eval(p.stop, arch.input(&ss, &tt, xx.view())?.view())?;
        &stop_out
    };
    let tgt = match target {
        FdTarget::SelfEma(ema) => {
            let phi_u = flow_from(x, &gap_u, sg.slice(s![n.., ..]));
            arch.bind(ema).avg_velocity(u, t, phi_u.view())?
        }
        FdTarget::Teacher(teacher) => {
            let phi_t = flow_from(x, &gap_t, sg.slice(s![..n, ..]));
            teacher.velocity(t, phi_t.view())?
        }
    };
    let mut a = out.slice(s![..n, ..]).to_owned();
    let mut b = out.slice(s![n.., ..]).to_owned();
    let ca: Vec<f64> = gap_t.iter().zip(&interval).map(|(g, h)| g / h).collect();
    let cb: Vec<f64> = gap_u.iter().zip(&interval).map(|(g, h)| g / h).collect();
    scale_rows(&mut a, &ca);
    scale_rows(&mut b, &cb);
    let mut r = a - b - tgt;
    let value = mean_sq_and_grad(&mut r, scale, what)?;
    let mut ga = r.clone();
    scale_rows(&mut ga, &ca);
    scale_rows(&mut r, &cb);
    let grad_out = concatenate(Axis(0), &[ga.view(), (-r).view()]).expect("equal widths");
    arch.mlp.backward(p.live, &trace, grad_out.view(), grad)?;
    Ok(value)
}

/// Terminal velocity matching against the EMA model.
pub fn tvm_loss(arch: &StudentArch, p: &StudentParams<'_>, batch: &TvmBatch) -> Result<TermLoss> {
    let mut grad = vec![0.0; p.live.len()];
    let value = tvm_loss_into(arch, p, batch, 1.0, &mut grad)?;
    Ok(TermLoss { value, grad })
}

pub fn tvm_loss_into(
    arch: &StudentArch,
    p: &StudentParams<'_>,
    batch: &TvmBatch,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_rows(batch.s.len(), &[&batch.t, &batch.u], &batch.x_s)?;
    finite_difference_into::<dyn VelocityField>(
        arch,
        p,
        FdTarget::SelfEma(p.ema),
        &batch.s,
        &batch.t,
        &batch.u,
        batch.x_s.view(),
        scale,
        grad,
        "TVM",
    )
}

/// Physics-informed distillation: finite difference in `t` against the teacher.
pub fn pid_loss<T: VelocityField + ?Sized>(
    arch: &StudentArch,
    p: &StudentParams<'_>,
    teacher: &T,
    batch: &TwoTimeBatch,
    tau: f64,
) -> Result<TermLoss> {
    let mut grad = vec![0.0; p.live.len()];
    let value = pid_loss_into(arch, p, teacher, batch, tau, 1.0, &mut grad)?;
    Ok(TermLoss { value, grad })
}

pub fn pid_loss_into<T: VelocityField + ?Sized>(
    arch: &StudentArch,
    p: &StudentParams<'_>,
    teacher: &T,
    batch: &TwoTimeBatch,
    tau: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_rows(batch.s.len(), &[&batch.t], &batch.x_s)?;
    let u: Vec<f64> = batch.t.iter().map(|t| t - tau).collect();
    if batch.s.iter().zip(&u).any(|(s, u)| u < s) {
        return Err(domain("PID needs t >= s + tau"));
    }
    finite_difference_into(
        arch,
        p,
        FdTarget::Teacher(teacher),
        &batch.s,
        &batch.t,
        &u,
        batch.x_s.view(),
        scale,
        grad,
        "PID",
    )
}

/// Lagrangian distillation: `∂_t φ^θ_{s,t}(x_s) ≈ v^η_t(φ^[θ]_{s,t}(x_s))`.
pub fn lfmd_loss<T: VelocityField + ?Sized>(
    arch: &StudentArch,
    p: &StudentParams<'_>,
    teacher: &T,
    batch: &TwoTimeBatch,
) -> Result<TermLoss> {
    let mut grad = vec![0.0; p.live.len()];
    let value = lfmd_loss_into(arch, p, teacher, batch, 1.0, &mut grad)?;
    Ok(TermLoss { value, grad })
}

pub fn lfmd_loss_into<T: VelocityField + ?Sized>(
    arch: &StudentArch,
    p: &StudentParams<'_>,
    teacher: &T,
    batch: &TwoTimeBatch,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let (s, t, x) = (&batch.s, &batch.t, batch.x_s.view());
    check_rows(s.len(), &[t], &batch.x_s)?;
    let gap = diffs(t, s);
    let dual = arch.forward_dual(p.live, s, t, x, &Direction::along_t())?;
    let v = dual.output();
    let phi = if p.stop_is_live() {
        flow_from(x, &gap, v.view())
    } else {
        flow_from(x, &gap, arch.bind(p.stop).avg_velocity(s, t, x)?.view())
    };
    let tgt = teacher.velocity(t, phi.view())?;
    // ∂_t φ = v + (t − s) ∂_t v
    let mut r = dual.output_tangent().clone();
    scale_rows(&mut r, &gap);
    r += v;
    r -= &tgt;
    let value = mean_sq_and_grad(&mut r, scale, "LFMD")?;
    let mut h = r.clone();
    scale_rows(&mut h, &gap);
    arch.mlp.backward_dual(p.live, &dual, r.view(), h.view(), grad)?;
    Ok(value)
}

/// Eulerian distillation: `∂_s φ ± (∂_x φ) v^η_s(x_s) ≈ 0`.
pub fn efmd_loss<T: VelocityField + ?Sized>(
    arch: &StudentArch,
    live: &ParamStore,
    teacher: &T,
    batch: &TwoTimeBatch,
    sign: EfmdSign,
) -> Result<TermLoss> {
    let mut grad = vec![0.0; live.len()];
    let value = efmd_loss_into(arch, live, teacher, batch, sign, 1.0, &mut grad)?;
    Ok(TermLoss { value, grad })
}

pub fn efmd_loss_into<T: VelocityField + ?Sized>(
    arch: &StudentArch,
    live: &ParamStore,
    teacher: &T,
    batch: &TwoTimeBatch,
    sign: EfmdSign,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let (s, t, x) = (&batch.s, &batch.t, batch.x_s.view());
    check_rows(s.len(), &[t], &batch.x_s)?;
    let mut w = teacher.velocity(s, x)?;
    if sign == EfmdSign::PaperLiteral {
        w.mapv_inplace(|v| -v);
    }
    let gap = diffs(t, s);
    // Directional derivative of φ along (ds, dx) = (1, w):
    // w − v + (t − s)(∂_s v + (∂_x v) w).
    let dir = Direction {
        ds: 1.0,
        dt: 0.0,
        dx: Some(w.view()),
    };
    let dual = arch.forward_dual(live, s, t, x, &dir)?;
    let mut r = dual.output_tangent().clone();
    scale_rows(&mut r, &gap);
    Zip::from(&mut r)
        .and(dual.output())
        .and(&w)
        .for_each(|r, &v, &w| *r += w - v);
    let value = mean_sq_and_grad(&mut r, scale, "EFMD")?;
    let mut h = r.clone();
    scale_rows(&mut h, &gap);
    arch.mlp.backward_dual(live, &dual, (-r).view(), h.view(), grad)?;
    Ok(value)
}

/// Splits `n` rows across the active terms; earlier terms get the remainder.
pub fn split_batch(n: usize, active: &[bool]) -> Vec<usize> {
    let k = active.iter().filter(|&&a| a).count();
    let mut extra = if k == 0 { 0 } else { n % k };
    active
        .iter()
        .map(|&a| {
            if !a {
                return 0;
            }
            let base = n / k;
            if extra > 0 {
                extra -= 1;
                base + 1
            } else {
                base
            }
        })
        .collect()
}

pub const ITVM_TERMS: [&str; 3] = ["iivm", "iavm", "tvm"];

/// Distillation objective: a [`LossSpec`] bound to a teacher and a sampler of
/// `p_s`.
pub struct StudentLoss<'a, T: ?Sized, S> {
    pub arch: &'a StudentArch,
    pub teacher: &'a T,
    pub sampler: S,
    pub spec: LossSpec,
}

impl<'a, T: VelocityField + ?Sized, S: StateSampler> StudentLoss<'a, T, S> {
    pub fn new(arch: &'a StudentArch, teacher: &'a T, sampler: S, spec: LossSpec) -> Result<Self> {
        spec.validate()?;
        if spec.kind == LossKind::Cfm {
            return Err(Error::Config("CFM trains teachers, not students".into()));
        }
        if teacher.dim() != arch.dim || sampler.dim() != arch.dim {
            return Err(Error::Config(format!(
                "student dimension {} differs from teacher {} or data {}",
                arch.dim,
                teacher.dim(),
                sampler.dim()
            )));
        }
        Ok(Self {
            arch,
            teacher,
            sampler,
            spec,
        })
    }

    /// Draws one batch of `n` rows and evaluates the loss and its gradient.
    ///
    /// Draw order: terms in IIVM, IAVM, TVM order; within a term, all times
    /// row by row, then all states row by row.
    pub fn evaluate<R: Rng + ?Sized>(&self, p: &StudentParams<'_>, n: usize, rng: &mut R) -> Result<LossOutput> {
        let spec = &self.spec;
        let tau = spec.tau;
        let mut grad = vec![0.0; p.live.len()];
        let mut per_term = BTreeMap::new();
        let total = match spec.kind {
            LossKind::Cfm => unreachable!("rejected in new"),
            LossKind::Itvm => {
                let w = spec.term_weights;
                let sizes = split_batch(n, &w.map(|w| w > 0.0));
                let mut total = 0.0;
                for (k, name) in ITVM_TERMS.iter().enumerate() {
                    if sizes[k] == 0 {
                        continue;
                    }
                    let value = match k {
                        0 => {
                            let b = sample_initial(&self.sampler, sizes[k], 1.0, rng)?;
                            iivm_loss_into(self.arch, p.live, self.teacher, &b, w[k], &mut grad)?
                        }
                        1 => {
                            let b = sample_initial(&self.sampler, sizes[k], 1.0 - tau, rng)?;
                            iavm_loss_into(self.arch, p.live, self.teacher, &b, tau, w[k], &mut grad)?
                        }
                        _ => {
                            let b = sample_tvm(&self.sampler, sizes[k], tau, spec.u_strategy, rng)?;
                            tvm_loss_into(self.arch, p, &b, w[k], &mut grad)?
                        }
                    };
                    per_term.insert(name.to_string(), value);
                    total += w[k] * value;
                }
                total
            }
            LossKind::TvmOnly => {
                let b = sample_tvm(&self.sampler, n, tau, spec.u_strategy, rng)?;
                let v = tvm_loss_into(self.arch, p, &b, 1.0, &mut grad)?;
                per_term.insert("tvm".into(), v);
                v
            }
            LossKind::Pid => {
                let b = sample_two_time(&self.sampler, n, tau, rng)?;
                let v = pid_loss_into(self.arch, p, self.teacher, &b, tau, 1.0, &mut grad)?;
                per_term.insert("pid".into(), v);
                v
            }
            LossKind::Lfmd => {
                let b = sample_two_time(&self.sampler, n, 0.0, rng)?;
                let v = lfmd_loss_into(self.arch, p, self.teacher, &b, 1.0, &mut grad)?;
                per_term.insert("lfmd".into(), v);
                v
            }
            LossKind::Efmd => {
                let b = sample_two_time(&self.sampler, n, 0.0, rng)?;
                let v = efmd_loss_into(self.arch, p.live, self.teacher, &b, spec.efmd_sign, 1.0, &mut grad)?;
                per_term.insert("efmd".into(), v);
                v
            }
        };
        Ok(LossOutput {
            report: LossBatchReport { total, per_term, n },
            grad,
        })
    }
}
