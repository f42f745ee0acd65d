// SPDX-License-Identifier: Apache-2.0

//! Adam with linear warmup, parameter EMAs and the training loop.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::PointCloud;
use crate::error::{domain, Error, Result};
use crate::losses::{cfm_loss_into, sample_cfm_batch, LossBatchReport, LossKind, LossOutput, LossSpec, StudentLoss, StudentParams};
use crate::nn::{ParamStore, TeacherArch, VelocityField};
use crate::probpath::{PathConfig, StateSampler};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr_peak: f64,
    pub warmup_iters: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_peak: 1e-4,
            warmup_iters: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_peak >= 0.0
            && self.lr_peak.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("adam settings are invalid: {self:?}")))
        }
    }
}

/// Learning rate at (zero-based) iteration `iter`: a linear ramp from 0 to
/// `lr_peak` over `warmup_iters`, constant afterwards.
pub fn lr_at(iter: u64, cfg: &AdamConfig) -> f64 {
    if iter >= cfg.warmup_iters {
        cfg.lr_peak
    } else {
        cfg.lr_peak * iter as f64 / cfg.warmup_iters as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl OptimState {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            cfg,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamStore, grad: &[f64], opt: &mut OptimState, lr: f64) -> Result<()> {
    let n = params.len();
    if grad.len() != n || opt.m.len() != n {
        return Err(domain("parameter, gradient and moment lengths differ"));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", grad[i])));
    }
    let AdamConfig { beta1, beta2, eps, .. } = opt.cfg;
    opt.step += 1;
    let c1 = 1.0 - beta1.powf(opt.step as f64);
    let c2 = 1.0 - beta2.powf(opt.step as f64);
    for (((p, &g), m), v) in params.values_mut().iter_mut().zip(grad).zip(&mut opt.m).zip(&mut opt.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    }
    Ok(())
}

/// Exponential moving average of a parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState {
    pub decay: f64,
    pub shadow: ParamStore,
}

impl EmaState {
    /// Starts the average at `params`.
    pub fn new(decay: f64, params: &ParamStore) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!("EMA decay must lie in [0, 1), got {decay}")));
        }
        Ok(Self {
            decay,
            shadow: params.clone(),
        })
    }

    pub fn update(&mut self, params: &ParamStore) -> Result<()> {
        if !self.shadow.same_layout(params) {
            return Err(domain("EMA and parameter layouts differ"));
        }
        let mu = self.decay;
        for (s, &p) in self.shadow.values_mut().iter_mut().zip(params.values()) {
            *s = mu * *s + (1.0 - mu) * p;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_examples: u64,
    pub seed: u64,
    pub loss: LossSpec,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub adam: AdamConfig,
    pub test_ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            total_examples: 256 * 20_000,
            seed: 0,
            loss: LossSpec::default(),
            eval_every: 100,
            checkpoint_every: 1000,
            adam: AdamConfig::default(),
            test_ema_decay: 0.999,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !self.total_examples.is_multiple_of(self.batch_size as u64) {
            return Err(Error::Config(format!(
                "total_examples ({}) must be a multiple of batch_size ({})",
                self.total_examples, self.batch_size
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.test_ema_decay) {
            return Err(Error::Config("test_ema_decay must lie in [0, 1)".into()));
        }
        self.adam.validate()?;
        self.loss.validate()
    }

    pub fn iterations(&self) -> u64 {
        self.total_examples / self.batch_size as u64
    }
}

/// ChaCha stream of the run seed that feeds batch draws. Streams below this
/// are reserved for per-layer initialization.
pub const BATCH_STREAM: u64 = 1 << 32;

/// Generator for batch draws of run `seed`.
pub fn batch_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(BATCH_STREAM);
    rng
}

/// A loss that can be evaluated on a fresh batch drawn from the run stream.
pub trait Objective {
    /// `live` receives the gradient; `ema` is the in-loss average `⟨θ⟩`.
    fn loss_and_grad(&self, live: &ParamStore, ema: &ParamStore, n: usize, rng: &mut ChaCha8Rng) -> Result<LossOutput>;
}

/// Conditional flow matching on a point cloud.
pub struct TeacherLoss<'a> {
    pub arch: &'a TeacherArch,
    pub path: PathConfig,
    pub data: &'a PointCloud,
}

impl Objective for TeacherLoss<'_> {
    fn loss_and_grad(&self, live: &ParamStore, _ema: &ParamStore, n: usize, rng: &mut ChaCha8Rng) -> Result<LossOutput> {
        let batch = sample_cfm_batch(&self.path, self.data, n, rng)?;
        let mut grad = vec![0.0; live.len()];
        let total = cfm_loss_into(self.arch, live, &batch, 1.0, &mut grad)?;
        Ok(LossOutput {
            report: LossBatchReport {
                total,
                per_term: BTreeMap::from([("cfm".to_string(), total)]),
                n,
            },
            grad,
        })
    }
}

impl<T: VelocityField + ?Sized, S: StateSampler> Objective for StudentLoss<'_, T, S> {
    fn loss_and_grad(&self, live: &ParamStore, ema: &ParamStore, n: usize, rng: &mut ChaCha8Rng) -> Result<LossOutput> {
        self.evaluate(&StudentParams::tied(live, ema), n, rng)
    }
}

/// Everything the loop mutates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParamStore,
    /// `⟨θ⟩`, read by the loss and never touched by Adam.
    pub loss_ema: EmaState,
    /// Evaluation weights, never read by any loss.
    pub test_ema: EmaState,
    pub opt: OptimState,
    pub iter: u64,
}

impl TrainState {
    pub fn new(params: ParamStore, cfg: &TrainConfig) -> Result<Self> {
        let mu = if cfg.loss.kind == LossKind::Cfm { 0.0 } else { cfg.loss.mu };
        Ok(Self {
            loss_ema: EmaState::new(mu, &params)?,
            test_ema: EmaState::new(cfg.test_ema_decay, &params)?,
            opt: OptimState::new(params.len(), cfg.adam),
            params,
            iter: 0,
        })
    }
}

/// Window statistics emitted every `eval_every` iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub iter: u64,
    /// Mean total loss over the window.
    pub loss: f64,
    pub loss_terms: BTreeMap<String, f64>,
    pub lr: f64,
    pub wall_ms: u64,
}

pub enum TrainEvent<'a> {
    Telemetry(&'a TelemetryRecord),
    Checkpoint(&'a TrainState),
}

/// Runs `cfg.iterations()` steps from `init`.
///
/// Per iteration: evaluate the loss on a batch drawn from the run stream
/// ([`batch_rng`] of `cfg.seed`), take an Adam step, then update `⟨θ⟩` and the
/// test-time EMA. `observer` sees telemetry and checkpoint events in order.
pub fn train<O: Objective + ?Sized>(
    objective: &O,
    init: ParamStore,
    cfg: &TrainConfig,
    mut observer: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    let mut state = TrainState::new(init, cfg)?;
    let mut rng = batch_rng(cfg.seed);
    let start = Instant::now();
    let mut window_loss = 0.0;
    let mut window_terms: BTreeMap<String, f64> = BTreeMap::new();
    let mut window_len = 0u64;
    for i in 0..cfg.iterations() {
        let out = objective.loss_and_grad(&state.params, &state.loss_ema.shadow, cfg.batch_size, &mut rng)?;
        let report = out.report;
        if !report.total.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iter: i,
                terms: format!("{:?}", report.per_term),
            });
        }
        let lr = lr_at(i, &cfg.adam);
        adam_step(&mut state.params, &out.grad, &mut state.opt, lr)?;
        state.loss_ema.update(&state.params)?;
        state.test_ema.update(&state.params)?;
        state.iter = i + 1;

        window_loss += report.total;
        for (k, v) in report.per_term {
            *window_terms.entry(k).or_default() += v;
        }
        window_len += 1;
        if state.iter % cfg.eval_every == 0 {
            let n = window_len as f64;
            let rec = TelemetryRecord {
                iter: state.iter,
                loss: window_loss / n,
                loss_terms: window_terms.iter().map(|(k, v)| (k.clone(), v / n)).collect(),
                lr,
                wall_ms: start.elapsed().as_millis() as u64,
            };
            observer(TrainEvent::Telemetry(&rec))?;
            window_loss = 0.0;
            window_terms.clear();
            window_len = 0;
        }
        if cfg.checkpoint_every > 0 && state.iter % cfg.checkpoint_every == 0 {
            observer(TrainEvent::Checkpoint(&state))?;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::PointCloud;

    #[test]
    fn warmup_schedule() {
        let cfg = AdamConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.0);
        assert!((lr_at(5, &cfg) - 5e-5).abs() < 1e-20);
        assert_eq!(lr_at(10, &cfg), 1e-4);
        assert_eq!(lr_at(10_000, &cfg), 1e-4);
    }

    fn store(v: Vec<f64>) -> ParamStore {
        ParamStore::from_values(vec![crate::nn::LayerShape { fan_in: v.len() - 1, fan_out: 1 }], v).unwrap()
    }

    /// Scalar Adam written out independently.
    fn scalar_adam(p: f64, gs: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut p) = (0.0, 0.0, p);
        for (k, &g) in gs.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        p
    }

    #[test]
    fn adam_matches_scalar_oracle() {
        let gs = [0.3, -1.2, 0.05, 2.0, -0.7];
        let mut p = store(vec![1.0, -2.0]);
        let mut opt = OptimState::new(2, AdamConfig::default());
        for &g in &gs {
            adam_step(&mut p, &[g, 2.0 * g], &mut opt, 1e-2).unwrap();
        }
        let g2: Vec<f64> = gs.iter().map(|g| 2.0 * g).collect();
        assert!((p.values()[0] - scalar_adam(1.0, &gs, 1e-2)).abs() < 1e-15);
        assert!((p.values()[1] - scalar_adam(-2.0, &g2, 1e-2)).abs() < 1e-15);
        assert_eq!(opt.step, 5);
    }

    #[test]
    fn adam_zero_gradient_and_constant_gradient() {
        let mut p = store(vec![0.5, 0.5]);
        let mut opt = OptimState::new(2, AdamConfig::default());
        opt.m = vec![0.1, 0.1];
        opt.v = vec![0.1, 0.1];
        let before = p.clone();
        let mut zero_opt = opt.clone();
        zero_opt.m = vec![0.0; 2];
        zero_opt.v = vec![0.0; 2];
        adam_step(&mut p, &[0.0, 0.0], &mut zero_opt, 1e-3).unwrap();
        assert_eq!(p, before);
        adam_step(&mut p, &[0.0, 0.0], &mut opt, 1e-3).unwrap();
        assert!((opt.m[0] - 0.09).abs() < 1e-15 && opt.v[0] < 0.1);

        let mut p = store(vec![0.0, 0.0]);
        let mut opt = OptimState::new(2, AdamConfig::default());
        let lr = 1e-3;
        let mut last = 0.0;
        for _ in 0..2000 {
            let prev = p.values()[0];
            adam_step(&mut p, &[3.0, -0.01], &mut opt, lr).unwrap();
            last = prev - p.values()[0];
        }
        assert!((last - lr).abs() < 0.01 * lr);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = store(vec![0.0, 0.0]);
        let mut opt = OptimState::new(2, AdamConfig::default());
        assert!(adam_step(&mut p, &[f64::NAN, 0.0], &mut opt, 1e-3).is_err());
    }

    #[test]
    fn ema_follows_geometric_series() {
        let zero = store(vec![0.0, 0.0]);
        let target = store(vec![2.0, -1.0]);
        let mut ema = EmaState::new(0.99, &zero).unwrap();
        for n in 1..=300 {
            ema.update(&target).unwrap();
            let w = 1.0 - 0.99f64.powi(n);
            assert!((ema.shadow.values()[0] - 2.0 * w).abs() < 1e-12);
            assert!((ema.shadow.values()[1] + w).abs() < 1e-12);
        }
        let mut instant = EmaState::new(0.0, &zero).unwrap();
        instant.update(&target).unwrap();
        assert_eq!(instant.shadow, target);
    }

    fn small_teacher() -> (TeacherArch, PointCloud, TrainConfig) {
        let arch = TeacherArch::new(2, 8, 32, 2).unwrap();
        let data = PointCloud::new(2, vec![0.0, 0.0]).unwrap();
        let cfg = TrainConfig {
            batch_size: 64,
            total_examples: 64 * 500,
            seed: 7,
            loss: LossSpec::new(LossKind::Cfm),
            eval_every: 100,
            checkpoint_every: 100,
            adam: AdamConfig {
                lr_peak: 1e-3,
                ..AdamConfig::default()
            },
            test_ema_decay: 0.999,
        };
        (arch, data, cfg)
    }

    #[test]
    fn zero_iterations_keep_initial_params() {
        let (arch, data, mut cfg) = small_teacher();
        cfg.total_examples = 0;
        let obj = TeacherLoss {
            arch: &arch,
            path: PathConfig { sigma_min: 0.0 },
            data: &data,
        };
        let init = arch.init_params(1);
        let state = train(&obj, init.clone(), &cfg, |_| Ok(())).unwrap();
        assert_eq!(state.params, init);
        assert_eq!(state.iter, 0);
    }

    #[test]
    fn point_mass_teacher_loss_trends_down_and_is_deterministic() {
        let (arch, data, cfg) = small_teacher();
        let obj = TeacherLoss {
            arch: &arch,
            path: PathConfig { sigma_min: 0.0 },
            data: &data,
        };
        let run = || {
            let mut losses = Vec::new();
            let mut ckpts = Vec::new();
            let state = train(&obj, arch.init_params(1), &cfg, |ev| {
                match ev {
                    TrainEvent::Telemetry(r) => losses.push(r.loss),
                    TrainEvent::Checkpoint(s) if s.iter == 100 => ckpts.push(s.params.to_le_bytes()),
                    TrainEvent::Checkpoint(_) => {}
                }
                Ok(())
            })
            .unwrap();
            (losses, ckpts, state)
        };
        let (losses, ckpts, state) = run();
        assert_eq!(losses.len(), 5);
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "window means {losses:?}");
        }
        let (losses2, ckpts2, state2) = run();
        assert_eq!(losses, losses2);
        assert_eq!(ckpts, ckpts2);
        assert_eq!(state.params, state2.params);
        // The test EMA is never consulted, and it lags the live weights.
        assert_ne!(state.test_ema.shadow, state.params);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.iterations(), 20_000);
        cfg.total_examples = 1000;
        assert!(cfg.validate().is_err());
        cfg.total_examples = 1024;
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }
}
