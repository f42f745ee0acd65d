// SPDX-License-Identifier: Apache-2.0

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use ttfm::datasets::{load_csv, save_csv};
use ttfm::eval::{draw_noise, generate};
use ttfm::nn::ModelArch;
use ttfm::ode::integrate;
use ttfm::pipeline::{
    check_compatible, distill, eval_rng, evaluate_kl, load_student, load_teacher, student_checkpoint,
    teacher_checkpoint, train_teacher, RunConfig,
};
use ttfm::probpath::PathSampler;
use ttfm::training::{TelemetryRecord, TrainConfig, TrainEvent};
use ttfm::{Checkpoint, KlReport, NfeSchedule, PointCloud, SolverKind, StudentAvm, TeacherNet, Ttfm, UStrategy};

use crate::artifacts::Artifacts;
use crate::svg;

pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY: &str = "summary.csv";

/// Sweep axes of `ablate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    #[value(name = "u_strategy")]
    UStrategy,
    Tau,
    Mu,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::UStrategy => "u_strategy",
            Axis::Tau => "tau",
            Axis::Mu => "mu",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &TrainConfig, value: &str) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        match self {
            Axis::UStrategy => {
                cfg.loss.u_strategy = serde_json::from_value::<UStrategy>(serde_json::Value::String(value.into()))
                    .with_context(|| format!("unknown u_strategy `{value}`"))?;
            }
            Axis::Tau => cfg.loss.tau = value.parse().with_context(|| format!("tau `{value}`"))?,
            Axis::Mu => cfg.loss.mu = value.parse().with_context(|| format!("mu `{value}`"))?,
        }
        cfg.validate().with_context(|| format!("{}={value}", self.name()))?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Scatter,
    Loss,
}

fn start(out: &Path, cfg: &RunConfig) -> Result<Artifacts> {
    let mut art = Artifacts::create(out)?;
    art.write_json(CONFIG_FILE, cfg)?;
    Ok(art)
}

/// JSON-lines telemetry sink that also echoes progress to stderr.
struct Telemetry {
    w: BufWriter<File>,
    label: &'static str,
}

impl Telemetry {
    fn create(art: &mut Artifacts, rel: &str, label: &'static str) -> Result<Self> {
        let p = art.path(rel)?;
        art.record(rel);
        Ok(Self {
            w: BufWriter::new(File::create(p)?),
            label,
        })
    }

    fn push(&mut self, rec: &TelemetryRecord) -> ttfm::Result<()> {
        writeln!(self.w, "{}", serde_json::to_string(rec)?)?;
        eprintln!("[{}] iter {:>7} loss {:.6e} lr {:.2e}", self.label, rec.iter, rec.loss, rec.lr);
        Ok(())
    }

    fn close(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

fn save_ckpt(art: &mut Artifacts, rel: &str, ckpt: &Checkpoint) -> ttfm::Result<()> {
    let p = art.path(rel).map_err(|e| ttfm::Error::Checkpoint(e.to_string()))?;
    ckpt.save(p)?;
    art.record(rel);
    Ok(())
}

fn load_ckpt(path: &Path, what: &str) -> Result<Checkpoint> {
    crate::config::require_file(path, what)?;
    Checkpoint::load(path).with_context(|| format!("loading {what} {}", path.display()))
}

pub fn dataset(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut art = start(out, cfg)?;
    let data = cfg.dataset.generate()?;
    save_csv(&data, art.path("points.csv")?)?;
    art.record("points.csv");
    art.finish("dataset")
}

pub fn train_teacher_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut art = start(out, cfg)?;
    let data = cfg.dataset.generate()?;
    let tcfg = cfg.teacher_train_config();
    let arch = cfg.teacher.teacher(data.dim())?;
    let mut tel = Telemetry::create(&mut art, "teacher_telemetry.jsonl", "teacher")?;
    let (arch2, state) = train_teacher(&data, cfg.path, &cfg.teacher, &tcfg, |ev| match ev {
        TrainEvent::Telemetry(r) => tel.push(r),
        TrainEvent::Checkpoint(s) => {
            let ck = teacher_checkpoint(&arch, s, tcfg.seed, &cfg.path)?;
            save_ckpt(&mut art, &format!("checkpoints/teacher-{:08}.ckpt", s.iter), &ck)
        }
    })?;
    tel.close()?;
    let ck = teacher_checkpoint(&arch2, &state, tcfg.seed, &cfg.path)?;
    save_ckpt(&mut art, "teacher.ckpt", &ck)?;
    art.finish("train-teacher")
}

/// Rejects a teacher whose dimension or `σ_min` differs from the run config.
fn check_teacher(cfg: &RunConfig, ckpt: &Checkpoint, dim: usize) -> Result<()> {
    let mut issues = Vec::new();
    if ckpt.header.model.dim() != dim {
        issues.push(format!("dimension: teacher {}, dataset {dim}", ckpt.header.model.dim()));
    }
    if ckpt.header.sigma_min != cfg.path.sigma_min {
        issues.push(format!(
            "sigma_min: teacher {}, config {}",
            ckpt.header.sigma_min, cfg.path.sigma_min
        ));
    }
    if !issues.is_empty() {
        bail!("teacher checkpoint incompatible with config ({})", issues.join("; "));
    }
    Ok(())
}

/// Trains one student into `prefix` (relative to the artifact root) and
/// returns it with its checkpoint.
fn distill_into(
    art: &mut Artifacts,
    prefix: &str,
    cfg: &RunConfig,
    scfg: &TrainConfig,
    teacher: &TeacherNet,
    data: &PointCloud,
) -> Result<(StudentAvm, Checkpoint)> {
    let arch = cfg.student.student(data.dim())?;
    let mut tel = Telemetry::create(art, &format!("{prefix}student_telemetry.jsonl"), "student")?;
    let sampler = PathSampler { cfg: cfg.path, data };
    let (arch2, state) = distill(&teacher.view(), sampler, &cfg.student, scfg, |ev| match ev {
        TrainEvent::Telemetry(r) => tel.push(r),
        TrainEvent::Checkpoint(s) => {
            let ck = student_checkpoint(&arch, s, scfg.seed, &cfg.path, &scfg.loss)?;
            save_ckpt(art, &format!("{prefix}checkpoints/student-{:08}.ckpt", s.iter), &ck)
        }
    })?;
    tel.close()?;
    let ck = student_checkpoint(&arch2, &state, scfg.seed, &cfg.path, &scfg.loss)?;
    save_ckpt(art, &format!("{prefix}student.ckpt"), &ck)?;
    Ok((load_student(&ck)?, ck))
}

pub fn distill_cmd(cfg: &RunConfig, out: &Path, teacher_path: &Path) -> Result<()> {
    let tck = load_ckpt(teacher_path, "teacher checkpoint")?;
    let data = cfg.dataset.generate()?;
    check_teacher(cfg, &tck, data.dim())?;
    let teacher = load_teacher(&tck)?;
    let mut art = start(out, cfg)?;
    distill_into(&mut art, "", cfg, &cfg.student_train_config(), &teacher, &data)?;
    art.finish("distill")
}

/// `n` samples from a checkpoint: a student composes its TTFM over `nfe`
/// uniform steps, a teacher integrates its ODE with `nfe` Heun steps.
pub fn sample(cfg: &RunConfig, out: &Path, ckpt_path: &Path, nfe: usize, n: usize) -> Result<()> {
    let ck = load_ckpt(ckpt_path, "checkpoint")?;
    if nfe == 0 {
        bail!("--nfe must be at least 1");
    }
    let mut art = start(out, cfg)?;
    let d = ck.header.model.dim();
    let x0 = draw_noise(n, d, &mut eval_rng(cfg.seed));
    let ys = if n == 0 {
        x0
    } else {
        match ck.header.model {
            ModelArch::Student(_) => {
                let st = load_student(&ck)?;
                generate(&Ttfm(st.view()), &NfeSchedule::uniform(nfe)?, x0.view())?
            }
            ModelArch::Teacher(_) => {
                let t = load_teacher(&ck)?;
                integrate(&t.view(), SolverKind::Heun, 0.0, 1.0, nfe, x0.view())?
            }
        }
    };
    let pc = PointCloud::new(d, ys.iter().copied().collect())?;
    save_csv(&pc, art.path("samples.csv")?)?;
    art.record("samples.csv");
    art.finish("sample")
}

fn kl_file(nfe: usize) -> String {
    format!("kl_nfe{nfe}.json")
}

fn kl_reports(
    art: &mut Artifacts,
    prefix: &str,
    student: &StudentAvm,
    teacher: &TeacherNet,
    cfg: &RunConfig,
) -> Result<Vec<KlReport>> {
    let mut reports = Vec::new();
    for &nfe in &cfg.eval.nfe {
        let rep = evaluate_kl(student, &teacher.view(), nfe, &cfg.eval, cfg.seed)?;
        eprintln!("[eval] nfe {nfe}: KL {:.6} ± {:.6}", rep.estimate, rep.std_error);
        if let Some(w) = &rep.warning {
            eprintln!("[eval] warning: {w}");
        }
        art.write_json(format!("{prefix}{}", kl_file(nfe)), &rep)?;
        reports.push(rep);
    }
    Ok(reports)
}

pub fn eval_kl(cfg: &RunConfig, out: &Path, student_path: &Path, teacher_path: &Path) -> Result<()> {
    let sck = load_ckpt(student_path, "student checkpoint")?;
    let tck = load_ckpt(teacher_path, "teacher checkpoint")?;
    check_compatible(&tck, &sck)?;
    let student = load_student(&sck)?;
    let teacher = load_teacher(&tck)?;
    let mut art = start(out, cfg)?;
    kl_reports(&mut art, "", &student, &teacher, cfg)?;
    art.finish("eval-kl")
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    axis: &'a str,
    value: &'a str,
    nfe: usize,
    kl: f64,
    std_error: f64,
    n: usize,
    dropped: usize,
}

/// One distill + eval leg per value under `<axis>=<value>/`, plus a summary
/// table of KL per (value, NFE). Every leg shares the student seed.
pub fn ablate(cfg: &RunConfig, out: &Path, teacher_path: &Path, axis: Axis, values: &[String]) -> Result<()> {
    if values.is_empty() {
        bail!("--values must list at least one value");
    }
    let legs: Vec<(String, TrainConfig)> = values
        .iter()
        .map(|v| Ok((v.clone(), axis.apply(&cfg.student_train_config(), v)?)))
        .collect::<Result<_>>()?;
    let tck = load_ckpt(teacher_path, "teacher checkpoint")?;
    let data = cfg.dataset.generate()?;
    check_teacher(cfg, &tck, data.dim())?;
    let teacher = load_teacher(&tck)?;
    let mut art = start(out, cfg)?;

    let mut table = csv::Writer::from_writer(Vec::new());
    for (value, scfg) in &legs {
        let prefix = format!("{}={value}/", axis.name());
        eprintln!("[ablate] {}", prefix.trim_end_matches('/'));
        let (student, _) = distill_into(&mut art, &prefix, cfg, scfg, &teacher, &data)?;
        for rep in kl_reports(&mut art, &prefix, &student, &teacher, cfg)? {
            table.serialize(SummaryRow {
                axis: axis.name(),
                value,
                nfe: rep.nfe,
                kl: rep.estimate,
                std_error: rep.std_error,
                n: rep.n,
                dropped: rep.dropped,
            })?;
        }
    }
    let bytes = table.into_inner().map_err(|e| anyhow::anyhow!("summary table: {e}"))?;
    art.write(SUMMARY, &bytes)?;
    art.finish("ablate")
}

fn read_telemetry(path: &Path) -> Result<Vec<(u64, f64)>> {
    let mut series = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TelemetryRecord =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: bad telemetry record", path.display(), i + 1))?;
        series.push((rec.iter, rec.loss));
    }
    Ok(series)
}

/// Scatter for point CSVs and a loss curve for JSON-lines telemetry, chosen
/// by extension unless `kind` is given.
pub fn plot(cfg: &RunConfig, out: &Path, input: &Path, kind: Option<PlotKind>) -> Result<()> {
    crate::config::require_file(input, "plot input")?;
    let kind = match kind {
        Some(k) => k,
        None => match input.extension().and_then(|e| e.to_str()) {
            Some("csv") => PlotKind::Scatter,
            Some("jsonl") => PlotKind::Loss,
            _ => bail!("cannot infer plot kind of {}; pass --kind", input.display()),
        },
    };
    let svg = match kind {
        PlotKind::Scatter => {
            let pc = load_csv(input)?;
            let pts: Vec<Vec<f64>> = pc.rows().map(|r| r.to_vec()).collect();
            svg::scatter(&pts, cfg.seed)
        }
        PlotKind::Loss => svg::loss_curve(&read_telemetry(input)?),
    };
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let mut art = start(out, cfg)?;
    art.write(PathBuf::from(format!("{stem}.svg")), svg.as_bytes())?;
    art.finish("plot")
}

/// Removes a stale manifest so a failed command never leaves one behind.
pub fn clear_manifest(out: &Path) {
    let _ = fs::remove_file(out.join(crate::artifacts::MANIFEST));
}
