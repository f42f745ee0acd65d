// SPDX-License-Identifier: Apache-2.0

//! Deterministic 2D point-cloud generators and CSV persistence.
//!
//! Shapes are fixed parameterizations:
//! - `Lobes5`: five isotropic Gaussians (std 0.3) centred on a circle of
//!   radius 1.5 at angles `2πk/5`, equal weights.
//! - `Checker`: uniform over the 8 cells with even `i + j` of a 4×4 tiling
//!   of `[-2, 2]²`.
//! - `Spiral`: Archimedean spiral `r = 0.3 θ`, `θ ~ U[0.5, 6π]`, isotropic
//!   noise of std 0.05, then scaled so the noiseless curve fits `[-2, 2]²`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Row-major collection of `d`-dimensional points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(domain("point dimension must be at least 1"));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(domain(format!(
                "{} coordinates do not split into rows of {dim}",
                coords.len()
            )));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(domain(format!("non-finite coordinate {bad}")));
        }
        Ok(Self { dim, coords })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            coords: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Uniformly chosen stored point.
    ///
    /// # Panics
    /// Panics on an empty cloud.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &[f64] {
        assert!(!self.is_empty(), "cannot sample from an empty point cloud");
        let i = rng.random_range(0..self.len());
        self.point(i)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for row in self.rows() {
            for (mi, ri) in m.iter_mut().zip(row) {
                *mi += ri;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    Lobes5,
    Checker,
    Spiral,
    CsvPointCloud { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: DatasetKind,
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_points() -> usize {
    1_000_000
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind) -> Self {
        Self {
            kind,
            n_points: default_n_points(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 && !matches!(self.kind, DatasetKind::CsvPointCloud { .. }) {
            return Err(Error::Config("n_points must be at least 1".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<PointCloud> {
        self.validate()?;
        Ok(match &self.kind {
            DatasetKind::Lobes5 => gen_lobes5(self.n_points, self.seed),
            DatasetKind::Checker => gen_checker(self.n_points, self.seed),
            DatasetKind::Spiral => gen_spiral(self.n_points, self.seed),
            DatasetKind::CsvPointCloud { path } => load_csv(path)?,
        })
    }
}

pub const LOBE_RADIUS: f64 = 1.5;
pub const LOBE_STD: f64 = 0.3;

pub fn lobe_centers() -> [[f64; 2]; 5] {
    let mut c = [[0.0; 2]; 5];
    for (k, ck) in c.iter_mut().enumerate() {
        let a = 2.0 * PI * k as f64 / 5.0;
        *ck = [LOBE_RADIUS * a.cos(), LOBE_RADIUS * a.sin()];
    }
    c
}

pub fn gen_lobes5(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = lobe_centers();
    let mut coords = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let c = centers[rng.random_range(0..5)];
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        coords.push(c[0] + LOBE_STD * dx);
        coords.push(c[1] + LOBE_STD * dy);
    }
    PointCloud { dim: 2, coords }
}

/// Cell indices `(i, j)` of the black squares.
pub fn checker_cells() -> Vec<(usize, usize)> {
    (0..4)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .filter(|(i, j)| (i + j) % 2 == 0)
        .collect()
}

/// Cell `(i, j)` containing `p`, or `None` outside `[-2, 2)²`.
pub fn checker_cell_of(p: &[f64]) -> Option<(usize, usize)> {
    let fi = (p[0] + 2.0).floor();
    let fj = (p[1] + 2.0).floor();
    if (0.0..4.0).contains(&fi) && (0.0..4.0).contains(&fj) {
        Some((fi as usize, fj as usize))
    } else {
        None
    }
}

pub fn gen_checker(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = checker_cells();
    let mut coords = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let (i, j) = cells[rng.random_range(0..cells.len())];
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        coords.push(-2.0 + i as f64 + u);
        coords.push(-2.0 + j as f64 + v);
    }
    PointCloud { dim: 2, coords }
}

pub const SPIRAL_RATE: f64 = 0.3;
pub const SPIRAL_THETA_MIN: f64 = 0.5;
pub const SPIRAL_THETA_MAX: f64 = 6.0 * PI;
pub const SPIRAL_NOISE: f64 = 0.05;

/// Scale applied after noise so the noiseless spiral has radius at most 2.
pub fn spiral_scale() -> f64 {
    2.0 / (SPIRAL_RATE * SPIRAL_THETA_MAX)
}

/// Spiral points together with the angle each was drawn at.
pub fn gen_spiral_with_angles(n: usize, seed: u64) -> (PointCloud, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = spiral_scale();
    let mut coords = Vec::with_capacity(2 * n);
    let mut angles = Vec::with_capacity(n);
    for _ in 0..n {
        let theta = rng.random_range(SPIRAL_THETA_MIN..SPIRAL_THETA_MAX);
        let r = SPIRAL_RATE * theta;
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        coords.push(scale * (r * theta.cos() + SPIRAL_NOISE * nx));
        coords.push(scale * (r * theta.sin() + SPIRAL_NOISE * ny));
        angles.push(theta);
    }
    (PointCloud { dim: 2, coords }, angles)
}

pub fn gen_spiral(n: usize, seed: u64) -> PointCloud {
    gen_spiral_with_angles(n, seed).0
}

/// Reads rows of comma-separated reals. All rows must share one width.
pub fn load_csv(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut dim = None;
    let mut coords = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match dim {
            None => dim = Some(record.len()),
            Some(d) if d != record.len() => {
                return Err(parse_err(format!("expected {d} fields, found {}", record.len())))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value {field:?}")));
            }
            coords.push(v);
        }
    }
    match dim {
        Some(d) => PointCloud::new(d, coords),
        None => Ok(PointCloud::empty(2)),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Writes one row per point with 17 significant digits, which round-trips
/// every `f64` exactly.
pub fn save_csv(points: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in points.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lobes_statistics() {
        let n = 1_000_000;
        let pc = gen_lobes5(n, 11);
        let m = pc.mean();
        // Mixture variance per axis: within-lobe 0.09 plus between-lobe 1.5²/2.
        let var = LOBE_STD * LOBE_STD + LOBE_RADIUS * LOBE_RADIUS / 2.0;
        let se = (var / n as f64).sqrt();
        assert!(m[0].abs() < 4.0 * se && m[1].abs() < 4.0 * se, "{m:?}");

        let centers = lobe_centers();
        let mut counts = [0usize; 5];
        let mut sq = [[0.0f64; 2]; 5];
        for p in pc.rows() {
            let k = (0..5)
                .min_by(|&a, &b| {
                    let da = (p[0] - centers[a][0]).powi(2) + (p[1] - centers[a][1]).powi(2);
                    let db = (p[0] - centers[b][0]).powi(2) + (p[1] - centers[b][1]).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            counts[k] += 1;
            sq[k][0] += (p[0] - centers[k][0]).powi(2);
            sq[k][1] += (p[1] - centers[k][1]).powi(2);
        }
        for k in 0..5 {
            let frac = counts[k] as f64 / (n as f64 / 5.0);
            assert!((frac - 1.0).abs() < 0.03, "cluster {k}: {frac}");
            for ax in 0..2 {
                let std = (sq[k][ax] / counts[k] as f64).sqrt();
                assert!((std / LOBE_STD - 1.0).abs() < 0.02, "std {std}");
            }
        }
    }

    #[test]
    fn checker_membership_and_balance() {
        let n = 400_000;
        let pc = gen_checker(n, 5);
        let mut counts = std::collections::HashMap::new();
        for p in pc.rows() {
            let (i, j) = checker_cell_of(p).expect("inside the board");
            assert_eq!((i + j) % 2, 0, "white cell hit by {p:?}");
            *counts.entry((i, j)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 8);
        let expect = n as f64 / 8.0;
        let se = (n as f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        for c in counts.values() {
            assert!((*c as f64 - expect).abs() < 3.0 * se);
        }
        let m = pc.mean();
        // Per-axis variance of the checker is 4/3.
        let se = (4.0 / 3.0 / n as f64).sqrt();
        assert!(m[0].abs() < 4.0 * se && m[1].abs() < 4.0 * se);
    }

    #[test]
    fn spiral_envelope_and_angles() {
        let n = 200_000;
        let (pc, angles) = gen_spiral_with_angles(n, 9);
        let scale = spiral_scale();
        let mut inside = 0usize;
        for (p, th) in pc.rows().zip(&angles) {
            assert!(p[0].abs() <= 2.2 && p[1].abs() <= 2.2);
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt() / scale;
            if (r - SPIRAL_RATE * th).abs() <= 3.0 * SPIRAL_NOISE {
                inside += 1;
            }
        }
        assert!(inside as f64 / n as f64 >= 0.95);

        // Chi-square uniformity of the angle histogram, 20 bins (19 dof);
        // 36.19 is the 0.99 quantile.
        let bins = 20;
        let mut hist = vec![0usize; bins];
        let width = SPIRAL_THETA_MAX - SPIRAL_THETA_MIN;
        for th in &angles {
            let b = (((th - SPIRAL_THETA_MIN) / width) * bins as f64) as usize;
            hist[b.min(bins - 1)] += 1;
        }
        let e = n as f64 / bins as f64;
        let chi2: f64 = hist.iter().map(|&h| (h as f64 - e).powi(2) / e).sum();
        assert!(chi2 < 36.19, "chi2 = {chi2}");
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_checker(1000, 3), gen_checker(1000, 3));
        assert_eq!(gen_spiral(1000, 3), gen_spiral(1000, 3));
        assert_eq!(gen_lobes5(1000, 3), gen_lobes5(1000, 3));
        assert_ne!(gen_lobes5(1000, 3), gen_lobes5(1000, 4));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        let pc = gen_spiral(500, 1);
        save_csv(&pc, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(pc.coords().len(), back.coords().len());
        for (a, b) in pc.coords().iter().zip(back.coords()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_empty_and_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(load_csv(&empty).unwrap().is_empty());

        let fixture = dir.path().join("three.csv");
        std::fs::write(&fixture, "1.5,-2\n0,0.25\n-3e-2, 4\n").unwrap();
        let pc = load_csv(&fixture).unwrap();
        assert_eq!(pc.len(), 3);
        assert_eq!(pc.point(0), &[1.5, -2.0]);
        assert_eq!(pc.point(1), &[0.0, 0.25]);
        assert_eq!(pc.point(2), &[-0.03, 4.0]);
    }

    #[test]
    fn csv_malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "1,2\n3,abc\n").unwrap();
        match load_csv(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&bad, "1,2\n3\n").unwrap();
        match load_csv(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
