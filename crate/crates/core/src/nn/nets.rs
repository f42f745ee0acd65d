// SPDX-License-Identifier: Apache-2.0

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::encoding::PositionalEncoding;
use super::mlp::{DualTrace, ForwardTrace, MlpSpec};
use super::params::ParamStore;
use super::{AverageVelocity, Direction, VelocityField};
use crate::error::{domain, Error, Result};

fn check_batch(x: &ArrayView2<f64>, dim: usize, times: &[&[f64]]) -> Result<()> {
    if x.ncols() != dim {
        return Err(domain(format!(
            "points have {} coordinates, network expects {dim}",
            x.ncols()
        )));
    }
    if times.iter().any(|t| t.len() != x.nrows()) {
        return Err(domain("time vector length differs from batch size"));
    }
    Ok(())
}

/// Teacher flow-matching network `v_t(x) = MLP([pe(t), x])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherArch {
    pub dim: usize,
    pub pe: PositionalEncoding,
    pub mlp: MlpSpec,
}

impl TeacherArch {
    pub fn new(dim: usize, pe_dim: usize, hidden_width: usize, n_hidden: usize) -> Result<Self> {
        let arch = Self {
            dim,
            pe: PositionalEncoding::new(pe_dim)?,
            mlp: MlpSpec::new(pe_dim + dim, hidden_width, n_hidden, dim)?,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        if self.mlp.in_dim != self.pe.dim() + self.dim || self.mlp.out_dim != self.dim {
            return Err(Error::Config(format!(
                "teacher MLP must map {} inputs to {} outputs",
                self.pe.dim() + self.dim,
                self.dim
            )));
        }
        Ok(())
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        self.mlp.init_params(seed)
    }

    pub fn input(&self, t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_batch(&x, self.dim, &[t])?;
        let p = self.pe.dim();
        let mut input = Array2::zeros((x.nrows(), p + self.dim));
        for (i, mut r) in input.rows_mut().into_iter().enumerate() {
            let r = r.as_slice_mut().unwrap();
            self.pe.encode_into(t[i], &mut r[..p]);
        }
        input.slice_mut(s![.., p..]).assign(&x);
        Ok(input)
    }

    fn x_tangent(&self, u: ArrayView2<f64>) -> Array2<f64> {
        let p = self.pe.dim();
        let mut tan = Array2::zeros((u.nrows(), p + self.dim));
        tan.slice_mut(s![.., p..]).assign(&u);
        tan
    }

    pub fn forward_trace(&self, params: &ParamStore, t: &[f64], x: ArrayView2<f64>) -> Result<ForwardTrace> {
        self.mlp.forward(params, self.input(t, x)?.view())
    }

    pub fn bind<'a>(&'a self, params: &'a ParamStore) -> TeacherView<'a> {
        TeacherView { arch: self, params }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TeacherView<'a> {
    pub arch: &'a TeacherArch,
    pub params: &'a ParamStore,
}

impl VelocityField for TeacherView<'_> {
    fn dim(&self) -> usize {
        self.arch.dim
    }

    fn velocity(&self, t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.arch.mlp.eval(self.params, self.arch.input(t, x)?.view())
    }

    fn velocity_jvp(
        &self,
        t: &[f64],
        x: ArrayView2<f64>,
        tangents: &[ArrayView2<f64>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let input = self.arch.input(t, x)?;
        let tans: Vec<Array2<f64>> = tangents.iter().map(|u| self.arch.x_tangent(*u)).collect();
        let views: Vec<_> = tans.iter().map(|a| a.view()).collect();
        self.arch.mlp.eval_jvp(self.params, input.view(), &views)
    }
}

/// Owned teacher: architecture plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherNet {
    pub arch: TeacherArch,
    pub params: ParamStore,
}

impl TeacherNet {
    pub fn view(&self) -> TeacherView<'_> {
        self.arch.bind(&self.params)
    }
}

/// Student average-velocity network `v_{s,t}(x) = MLP([pe(s), pe(t), x])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentArch {
    pub dim: usize,
    pub pe: PositionalEncoding,
    pub mlp: MlpSpec,
}

impl StudentArch {
    pub fn new(dim: usize, pe_dim: usize, hidden_width: usize, n_hidden: usize) -> Result<Self> {
        let arch = Self {
            dim,
            pe: PositionalEncoding::new(pe_dim)?,
            mlp: MlpSpec::new(2 * pe_dim + dim, hidden_width, n_hidden, dim)?,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        if self.mlp.in_dim != 2 * self.pe.dim() + self.dim || self.mlp.out_dim != self.dim {
            return Err(Error::Config(format!(
                "student MLP must map {} inputs to {} outputs",
                2 * self.pe.dim() + self.dim,
                self.dim
            )));
        }
        Ok(())
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        self.mlp.init_params(seed)
    }

    pub fn input(&self, s: &[f64], t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_batch(&x, self.dim, &[s, t])?;
        let p = self.pe.dim();
        let mut input = Array2::zeros((x.nrows(), 2 * p + self.dim));
        for (i, mut r) in input.rows_mut().into_iter().enumerate() {
            let r = r.as_slice_mut().unwrap();
            self.pe.encode_into(s[i], &mut r[..p]);
            self.pe.encode_into(t[i], &mut r[p..2 * p]);
        }
        input.slice_mut(s![.., 2 * p..]).assign(&x);
        Ok(input)
    }

    pub fn input_tangent(&self, s: &[f64], t: &[f64], dir: &Direction<'_>) -> Result<Array2<f64>> {
        let p = self.pe.dim();
        let mut tan = Array2::zeros((s.len(), 2 * p + self.dim));
        for (i, mut r) in tan.rows_mut().into_iter().enumerate() {
            let r = r.as_slice_mut().unwrap();
            if dir.ds != 0.0 {
                self.pe.derivative_into(s[i], dir.ds, &mut r[..p]);
            }
            if dir.dt != 0.0 {
                self.pe.derivative_into(t[i], dir.dt, &mut r[p..2 * p]);
            }
        }
        if let Some(dx) = &dir.dx {
            if dx.dim() != (s.len(), self.dim) {
                return Err(domain("x-direction shape differs from batch"));
            }
            tan.slice_mut(s![.., 2 * p..]).assign(dx);
        }
        Ok(tan)
    }

    pub fn forward_trace(
        &self,
        params: &ParamStore,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
    ) -> Result<ForwardTrace> {
        self.mlp.forward(params, self.input(s, t, x)?.view())
    }

    pub fn forward_dual(
        &self,
        params: &ParamStore,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
        dir: &Direction<'_>,
    ) -> Result<DualTrace> {
        let input = self.input(s, t, x)?;
        let tan = self.input_tangent(s, t, dir)?;
        self.mlp.forward_dual(params, input.view(), tan.view())
    }

    pub fn bind<'a>(&'a self, params: &'a ParamStore) -> AvmView<'a> {
        AvmView { arch: self, params }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AvmView<'a> {
    pub arch: &'a StudentArch,
    pub params: &'a ParamStore,
}

impl AverageVelocity for AvmView<'_> {
    fn dim(&self) -> usize {
        self.arch.dim
    }

    fn avg_velocity(&self, s: &[f64], t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.arch.mlp.eval(self.params, self.arch.input(s, t, x)?.view())
    }

    fn avg_velocity_jvp(
        &self,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
        dirs: &[Direction<'_>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let input = self.arch.input(s, t, x)?;
        let tans = dirs
            .iter()
            .map(|d| self.arch.input_tangent(s, t, d))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = tans.iter().map(|a| a.view()).collect();
        self.arch.mlp.eval_jvp(self.params, input.view(), &views)
    }
}

/// Owned student: architecture plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentAvm {
    pub arch: StudentArch,
    pub params: ParamStore,
}

impl StudentAvm {
    pub fn view(&self) -> AvmView<'_> {
        self.arch.bind(&self.params)
    }
}
