// SPDX-License-Identifier: Apache-2.0

//! End-to-end stages: teacher training, distillation and KL evaluation,
//! plus the run configuration and checkpoint conventions they share.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{DatasetKind, DatasetSpec, PointCloud};
use crate::error::{Error, Result};
use crate::eval::{kl_estimate, KlOptions, KlReport, NfeSchedule};
use crate::losses::{LossKind, LossSpec, StudentLoss};
use crate::nn::{Checkpoint, ModelArch, StudentArch, StudentAvm, TeacherArch, TeacherNet, Ttfm, VelocityField};
use crate::probpath::{PathConfig, StateSampler};
use crate::training::{train, TrainConfig, TrainEvent, TrainState};

/// ChaCha stream of the run seed used for evaluation noise.
pub const EVAL_STREAM: u64 = (1 << 32) + 1;

/// Section names inside checkpoints.
pub const LIVE: &str = "params";
pub const LOSS_EMA: &str = "loss_ema";
pub const TEST_EMA: &str = "test_ema";

/// Width and depth of one network. The default is the reduced-scale size
/// (8 hidden layers of 256) used with the default 20k-iteration budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub pe_dim: usize,
    pub hidden_width: usize,
    pub n_hidden: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            pe_dim: 256,
            hidden_width: 256,
            n_hidden: 8,
        }
    }
}

impl ModelSpec {
    /// Full-size teacher: 8 hidden layers of 512.
    pub fn full_teacher() -> Self {
        Self {
            hidden_width: 512,
            ..Self::default()
        }
    }

    /// Full-size student: 8 hidden layers of 1024.
    pub fn full_student() -> Self {
        Self {
            hidden_width: 1024,
            ..Self::default()
        }
    }

    pub fn teacher(&self, dim: usize) -> Result<TeacherArch> {
        TeacherArch::new(dim, self.pe_dim, self.hidden_width, self.n_hidden)
    }

    pub fn student(&self, dim: usize) -> Result<StudentArch> {
        StudentArch::new(dim, self.pe_dim, self.hidden_width, self.n_hidden)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub nfe: Vec<usize>,
    pub n_samples: usize,
    pub ode_steps: usize,
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            nfe: vec![1, 2, 4, 8],
            n_samples: 50_000,
            ode_steps: 100,
            chunk: 1000,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nfe.is_empty() || self.nfe.contains(&0) {
            return Err(Error::Config("nfe must be a non-empty list of positive counts".into()));
        }
        if self.ode_steps == 0 {
            return Err(Error::Config("ode_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn options(&self) -> KlOptions {
        KlOptions {
            ode_steps: self.ode_steps,
            chunk: self.chunk,
            keep_terms: false,
        }
    }
}

/// One JSON document describing a whole experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub path: PathConfig,
    pub teacher: ModelSpec,
    pub student: ModelSpec,
    /// Teacher optimization; `loss` must be CFM. Fields given in JSON
    /// override the teacher defaults rather than the student ones.
    #[serde(deserialize_with = "teacher_train_patch")]
    pub teacher_train: TrainConfig,
    /// Student optimization, including the distillation loss.
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Master seed: overrides `teacher_train.seed` and `train.seed`.
    pub seed: u64,
    /// Artifact root; the command line `--output` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::new(DatasetKind::Checker),
            path: PathConfig::default(),
            teacher: ModelSpec::default(),
            student: ModelSpec::default(),
            teacher_train: teacher_train_default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
            output_dir: None,
        }
    }
}

fn teacher_train_default() -> TrainConfig {
    TrainConfig {
        loss: LossSpec::new(LossKind::Cfm),
        ..TrainConfig::default()
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn teacher_train_patch<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<TrainConfig, D::Error> {
    use serde::de::Error as _;
    let mut base = serde_json::to_value(teacher_train_default()).map_err(D::Error::custom)?;
    merge(&mut base, serde_json::Value::deserialize(d)?);
    serde_json::from_value(base).map_err(D::Error::custom)
}

fn within(field: &str, err: Error) -> Error {
    match err {
        Error::Config(msg) => Error::Config(format!("{field}.{msg}")),
        other => other,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate().map_err(|e| within("dataset", e))?;
        self.path
            .validate()
            .map_err(|e| Error::Config(format!("path.{}", e.to_string().trim_start_matches("domain error: "))))?;
        if self.teacher_train.loss.kind != LossKind::Cfm {
            return Err(Error::Config("teacher_train.loss.kind must be cfm".into()));
        }
        if self.train.loss.kind == LossKind::Cfm {
            return Err(Error::Config("train.loss.kind must be a distillation loss".into()));
        }
        self.teacher_train.validate().map_err(|e| within("teacher_train", e))?;
        self.train.validate().map_err(|e| within("train", e))?;
        self.eval.validate().map_err(|e| within("eval", e))
    }

    pub fn teacher_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.teacher_train.clone()
        }
    }

    pub fn student_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed.wrapping_add(1),
            ..self.train.clone()
        }
    }
}

/// Trains a teacher from `cfg.seed` (initialization and batches).
pub fn train_teacher(
    data: &PointCloud,
    path: PathConfig,
    model: &ModelSpec,
    cfg: &TrainConfig,
    observer: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<(TeacherArch, TrainState)> {
    let arch = model.teacher(data.dim())?;
    let obj = crate::training::TeacherLoss {
        arch: &arch,
        path,
        data,
    };
    let state = train(&obj, arch.init_params(cfg.seed), cfg, observer)?;
    Ok((arch, state))
}

/// Distills `teacher` into a fresh student trained on states from `sampler`.
pub fn distill<T: VelocityField + ?Sized, S: StateSampler>(
    teacher: &T,
    sampler: S,
    model: &ModelSpec,
    cfg: &TrainConfig,
    observer: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<(StudentArch, TrainState)> {
    let arch = model.student(teacher.dim())?;
    let obj = StudentLoss::new(&arch, teacher, sampler, cfg.loss.clone())?;
    let state = train(&obj, arch.init_params(cfg.seed), cfg, observer)?;
    Ok((arch, state))
}

pub fn teacher_checkpoint(arch: &TeacherArch, state: &TrainState, seed: u64, path: &PathConfig) -> Result<Checkpoint> {
    Checkpoint::new(
        ModelArch::Teacher(arch.clone()),
        seed,
        state.iter,
        path.sigma_min,
        vec![
            (LIVE.into(), state.params.clone()),
            (TEST_EMA.into(), state.test_ema.shadow.clone()),
        ],
    )
}

pub fn student_checkpoint(
    arch: &StudentArch,
    state: &TrainState,
    seed: u64,
    path: &PathConfig,
    loss: &LossSpec,
) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::new(
        ModelArch::Student(arch.clone()),
        seed,
        state.iter,
        path.sigma_min,
        vec![
            (LIVE.into(), state.params.clone()),
            (LOSS_EMA.into(), state.loss_ema.shadow.clone()),
            (TEST_EMA.into(), state.test_ema.shadow.clone()),
        ],
    )?;
    ckpt.header.extra.insert("loss".into(), serde_json::to_value(loss)?);
    Ok(ckpt)
}

fn eval_section(ckpt: &Checkpoint) -> Result<crate::nn::ParamStore> {
    ckpt.section(TEST_EMA)
        .or_else(|| ckpt.section(LIVE))
        .cloned()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no parameter section".into()))
}

/// Teacher with its test-time EMA weights.
pub fn load_teacher(ckpt: &Checkpoint) -> Result<TeacherNet> {
    match &ckpt.header.model {
        ModelArch::Teacher(arch) => Ok(TeacherNet {
            arch: arch.clone(),
            params: eval_section(ckpt)?,
        }),
        ModelArch::Student(_) => Err(Error::Checkpoint("expected a teacher checkpoint, found a student".into())),
    }
}

/// Student with its test-time EMA weights.
pub fn load_student(ckpt: &Checkpoint) -> Result<StudentAvm> {
    match &ckpt.header.model {
        ModelArch::Student(arch) => Ok(StudentAvm {
            arch: arch.clone(),
            params: eval_section(ckpt)?,
        }),
        ModelArch::Teacher(_) => Err(Error::Checkpoint("expected a student checkpoint, found a teacher".into())),
    }
}

/// Fails with a field-by-field report when the two checkpoints disagree on
/// the data dimension or `σ_min`.
pub fn check_compatible(teacher: &Checkpoint, student: &Checkpoint) -> Result<()> {
    let mut issues = Vec::new();
    let (dt, ds) = (teacher.header.model.dim(), student.header.model.dim());
    if dt != ds {
        issues.push(format!("dimension: teacher {dt}, student {ds}"));
    }
    let (st, ss) = (teacher.header.sigma_min, student.header.sigma_min);
    if st != ss {
        issues.push(format!("sigma_min: teacher {st}, student {ss}"));
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!("incompatible checkpoints ({})", issues.join("; "))))
    }
}

/// Generator for evaluation noise of run `seed`.
pub fn eval_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVAL_STREAM);
    rng
}

/// KL report for one NFE. Every NFE restarts the evaluation stream, so all
/// reports of a run share the same noise draws.
pub fn evaluate_kl<T: VelocityField + ?Sized>(
    student: &StudentAvm,
    teacher: &T,
    nfe: usize,
    eval: &EvalConfig,
    seed: u64,
) -> Result<KlReport> {
    let ttfm = Ttfm(student.view());
    kl_estimate(
        &ttfm,
        teacher,
        &NfeSchedule::uniform(nfe)?,
        eval.n_samples,
        &mut eval_rng(seed),
        &eval.options(),
    )
}
