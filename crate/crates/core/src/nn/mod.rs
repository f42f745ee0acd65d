// SPDX-License-Identifier: Apache-2.0

//! Networks and their derivatives.
//!
//! Two capabilities are abstracted so analytic fields and trained networks are
//! interchangeable everywhere downstream:
//! - [`VelocityField`]: an instantaneous field `v_t(x)` (the teacher).
//! - [`AverageVelocity`]: a two-time field `v_{s,t}(x)` (the student AVM),
//!   wrapped by [`Ttfm`] into the flow map `φ_{s,t}(x) = x + (t − s) v_{s,t}(x)`.

pub mod checkpoint;
pub mod encoding;
pub mod mlp;
pub mod nets;
pub mod params;
pub mod ttfm;

use ndarray::{Array2, ArrayView2};

use crate::error::Result;

pub use checkpoint::{Checkpoint, CheckpointHeader, ModelArch};
pub use encoding::{pe_encode, PositionalEncoding};
pub use mlp::{Activation, DualTrace, ForwardTrace, MlpSpec};
pub use nets::{AvmView, StudentArch, StudentAvm, TeacherArch, TeacherNet, TeacherView};
pub use params::{LayerShape, ParamStore};
pub use ttfm::Ttfm;

/// Batched instantaneous velocity field; row `i` is evaluated at time `t[i]`.
pub trait VelocityField {
    fn dim(&self) -> usize;

    fn velocity(&self, t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// Velocity plus `(∂v/∂x) u` for every tangent `u`.
    fn velocity_jvp(
        &self,
        t: &[f64],
        x: ArrayView2<f64>,
        tangents: &[ArrayView2<f64>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)>;

    /// Velocity and `tr ∂v/∂x` per row, from `d` basis-vector JVPs.
    fn velocity_and_trace(&self, t: &[f64], x: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        let d = self.dim();
        let basis: Vec<Array2<f64>> = (0..d)
            .map(|k| {
                let mut e = Array2::zeros(x.dim());
                e.column_mut(k).fill(1.0);
                e
            })
            .collect();
        let views: Vec<_> = basis.iter().map(|b| b.view()).collect();
        let (v, jv) = self.velocity_jvp(t, x, &views)?;
        let trace = (0..x.nrows())
            .map(|i| (0..d).map(|k| jv[k][[i, k]]).sum())
            .collect();
        Ok((v, trace))
    }
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn velocity(&self, t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        (**self).velocity(t, x)
    }
    fn velocity_jvp(
        &self,
        t: &[f64],
        x: ArrayView2<f64>,
        tangents: &[ArrayView2<f64>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        (**self).velocity_jvp(t, x, tangents)
    }
    fn velocity_and_trace(&self, t: &[f64], x: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        (**self).velocity_and_trace(t, x)
    }
}

/// A direction in `(s, t, x)` space. `ds` and `dt` are shared by all rows.
#[derive(Clone, Debug)]
pub struct Direction<'a> {
    pub ds: f64,
    pub dt: f64,
    pub dx: Option<ArrayView2<'a, f64>>,
}

impl<'a> Direction<'a> {
    pub fn along_s() -> Self {
        Self { ds: 1.0, dt: 0.0, dx: None }
    }

    pub fn along_t() -> Self {
        Self { ds: 0.0, dt: 1.0, dx: None }
    }

    pub fn along_x(u: ArrayView2<'a, f64>) -> Self {
        Self { ds: 0.0, dt: 0.0, dx: Some(u) }
    }
}

/// Batched average-velocity model `v_{s,t}(x)`.
pub trait AverageVelocity {
    fn dim(&self) -> usize;

    fn avg_velocity(&self, s: &[f64], t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// `v` plus its directional derivative along each direction.
    fn avg_velocity_jvp(
        &self,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
        dirs: &[Direction<'_>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)>;
}

impl<A: AverageVelocity + ?Sized> AverageVelocity for &A {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn avg_velocity(&self, s: &[f64], t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        (**self).avg_velocity(s, t, x)
    }
    fn avg_velocity_jvp(
        &self,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
        dirs: &[Direction<'_>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        (**self).avg_velocity_jvp(s, t, x, dirs)
    }
}

/// One-row matrix from a point.
pub fn row(x: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap()
}

/// `(∂v_t/∂x) u` at a single point.
pub fn jvp_x<F: VelocityField + ?Sized>(field: &F, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let u = row(u);
    let (_, jv) = field.velocity_jvp(&[t], row(x).view(), &[u.view()])?;
    Ok(jv[0].row(0).to_vec())
}

/// `tr ∂v_t/∂x` at a single point.
pub fn trace_jac_teacher<F: VelocityField + ?Sized>(field: &F, t: f64, x: &[f64]) -> Result<f64> {
    Ok(field.velocity_and_trace(&[t], row(x).view())?.1[0])
}

/// Multiplies row `i` of `a` by `coef[i]`.
pub(crate) fn scale_rows(a: &mut Array2<f64>, coef: &[f64]) {
    for (mut r, &c) in a.rows_mut().into_iter().zip(coef) {
        r.mapv_inplace(|v| v * c);
    }
}
