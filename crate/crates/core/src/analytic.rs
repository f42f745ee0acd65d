// SPDX-License-Identifier: Apache-2.0

//! Closed-form fields and flow maps. They implement the same traits as the
//! networks, so solvers, losses and the KL metric can be checked against
//! exact answers.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{domain, Result};
use crate::nn::{AverageVelocity, Direction, MlpSpec, ParamStore, VelocityField};
use crate::probpath::{standard_normal, StateSampler};

/// Rows of `x` mapped by `a`: `x Aᵀ`.
fn apply_rows(a: &DMatrix<f64>, x: ArrayView2<f64>) -> Array2<f64> {
    let d = a.nrows();
    let mut out = Array2::zeros((x.nrows(), d));
    for (mut o, r) in out.rows_mut().into_iter().zip(x.rows()) {
        for i in 0..d {
            o[i] = (0..a.ncols()).map(|j| a[(i, j)] * r[j]).sum();
        }
    }
    out
}

fn check_dim(x: &ArrayView2<f64>, d: usize) -> Result<()> {
    if x.ncols() != d {
        return Err(domain(format!("expected {d} coordinates, got {}", x.ncols())));
    }
    Ok(())
}

/// `v_t(x) = c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantField {
    pub c: Vec<f64>,
}

impl ConstantField {
    pub fn new(c: Vec<f64>) -> Self {
        Self { c }
    }
}

impl VelocityField for ConstantField {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn velocity(&self, _t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(&x, self.c.len())?;
        Ok(Array2::from_shape_fn(x.dim(), |(_, k)| self.c[k]))
    }

    fn velocity_jvp(
        &self,
        t: &[f64],
        x: ArrayView2<f64>,
        tangents: &[ArrayView2<f64>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let v = self.velocity(t, x)?;
        Ok((v, tangents.iter().map(|u| Array2::zeros(u.dim())).collect()))
    }
}

/// `v_t(x) = A x`, time independent.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearField {
    pub a: DMatrix<f64>,
}

impl LinearField {
    pub fn new(a: DMatrix<f64>) -> Self {
        Self { a }
    }

    /// `v = a x` in `dim` dimensions.
    pub fn scalar(a: f64, dim: usize) -> Self {
        Self {
            a: DMatrix::identity(dim, dim) * a,
        }
    }
}

impl VelocityField for LinearField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn velocity(&self, _t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(&x, self.dim())?;
        Ok(apply_rows(&self.a, x))
    }

    fn velocity_jvp(
        &self,
        t: &[f64],
        x: ArrayView2<f64>,
        tangents: &[ArrayView2<f64>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let v = self.velocity(t, x)?;
        Ok((v, tangents.iter().map(|u| apply_rows(&self.a, *u)).collect()))
    }
}

/// `v_{s,t}(x) = c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantAvm {
    pub c: Vec<f64>,
}

impl ConstantAvm {
    pub fn new(c: Vec<f64>) -> Self {
        Self { c }
    }
}

impl AverageVelocity for ConstantAvm {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn avg_velocity(&self, _s: &[f64], _t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(&x, self.c.len())?;
        Ok(Array2::from_shape_fn(x.dim(), |(_, k)| self.c[k]))
    }

    fn avg_velocity_jvp(
        &self,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
        dirs: &[Direction<'_>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let v = self.avg_velocity(s, t, x)?;
        Ok((v, dirs.iter().map(|_| Array2::zeros(x.dim())).collect()))
    }
}

/// `v_{s,t}(x) = A x` for all `s, t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearAvm {
    pub a: DMatrix<f64>,
}

impl LinearAvm {
    pub fn new(a: DMatrix<f64>) -> Self {
        Self { a }
    }
}

impl AverageVelocity for LinearAvm {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn avg_velocity(&self, _s: &[f64], _t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(&x, self.dim())?;
        Ok(apply_rows(&self.a, x))
    }

    fn avg_velocity_jvp(
        &self,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
        dirs: &[Direction<'_>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let v = self.avg_velocity(s, t, x)?;
        let tans = dirs
            .iter()
            .map(|d| match &d.dx {
                Some(u) => apply_rows(&self.a, *u),
                None => Array2::zeros(x.dim()),
            })
            .collect();
        Ok((v, tans))
    }
}

const SERIES_TERMS: usize = 40;

/// `e^{hB}` by its Taylor series; accurate for `|h|·‖B‖` up to a few units.
pub fn expm(b: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let d = b.nrows();
    let mut out = DMatrix::identity(d, d);
    let mut term = DMatrix::identity(d, d);
    for k in 1..SERIES_TERMS {
        term = &term * b * (h / k as f64);
        out += &term;
    }
    out
}

/// `M(h) = (e^{hB} − I)/h = Σ_{k≥1} h^{k−1} B^k / k!` and `M'(h)`.
fn avg_matrix(b: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = b.nrows();
    let mut m = DMatrix::zeros(d, d);
    let mut dm = DMatrix::zeros(d, d);
    // pow = B^k / k!
    let mut pow = DMatrix::identity(d, d);
    for k in 1..SERIES_TERMS {
        pow = &pow * b / k as f64;
        m += &pow * h.powi(k as i32 - 1);
        if k >= 2 {
            dm += &pow * ((k - 1) as f64 * h.powi(k as i32 - 2));
        }
    }
    (m, dm)
}

/// Exact average velocity of the linear ODE `dx/dt = B x`:
/// `φ_{s,t}(x) = e^{(t−s)B} x`, so the flow map is exactly consistent.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFlowAvm {
    pub b: DMatrix<f64>,
}

impl LinearFlowAvm {
    pub fn new(b: DMatrix<f64>) -> Self {
        Self { b }
    }

    pub fn flow_matrix(&self, s: f64, t: f64) -> DMatrix<f64> {
        expm(&self.b, t - s)
    }
}

impl AverageVelocity for LinearFlowAvm {
    fn dim(&self) -> usize {
        self.b.nrows()
    }

    fn avg_velocity(&self, s: &[f64], t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.avg_velocity_jvp(s, t, x, &[])?.0)
    }

    fn avg_velocity_jvp(
        &self,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
        dirs: &[Direction<'_>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let d = self.dim();
        check_dim(&x, d)?;
        let mut v = Array2::zeros(x.dim());
        let mut tans: Vec<Array2<f64>> = dirs.iter().map(|_| Array2::zeros(x.dim())).collect();
        for i in 0..x.nrows() {
            let (m, dm) = avg_matrix(&self.b, t[i] - s[i]);
            let xi = x.row(i);
            for r in 0..d {
                let mut mx = 0.0;
                let mut dmx = 0.0;
                for c in 0..d {
                    mx += m[(r, c)] * xi[c];
                    dmx += dm[(r, c)] * xi[c];
                }
                v[[i, r]] = mx;
                for (dir, tan) in dirs.iter().zip(tans.iter_mut()) {
                    let mut val = (dir.dt - dir.ds) * dmx;
                    if let Some(u) = &dir.dx {
                        val += (0..d).map(|c| m[(r, c)] * u[[i, c]]).sum::<f64>();
                    }
                    tan[[i, r]] = val;
                }
            }
        }
        Ok((v, tans))
    }
}

/// Marginals of `N(0, I)` pushed through `dx/dt = B x`:
/// `x_s = e^{sB} x_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFlowSampler {
    pub b: DMatrix<f64>,
}

impl StateSampler for LinearFlowSampler {
    fn dim(&self) -> usize {
        self.b.nrows()
    }

    fn sample_at<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> Result<Vec<f64>> {
        let x0 = nalgebra::DVector::from_vec(standard_normal(rng, self.dim()));
        Ok((expm(&self.b, s) * x0).as_slice().to_vec())
    }
}

/// Randomly initialized MLP whose output is the constant `c`: the final
/// layer has zero weights and bias `c`.
pub fn constant_output_params(spec: &MlpSpec, c: &[f64], seed: u64) -> ParamStore {
    assert_eq!(c.len(), spec.out_dim, "constant has the wrong dimension");
    let mut p = spec.init_params(seed);
    let last = p.n_layers() - 1;
    let (mut w, mut b) = p.layer_mut(last);
    w.fill(0.0);
    b.assign(&ndarray::ArrayView1::from(c));
    p
}
