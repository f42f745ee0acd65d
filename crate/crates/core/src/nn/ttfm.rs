// SPDX-License-Identifier: Apache-2.0

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

use super::{row, scale_rows, AverageVelocity, Direction};
use crate::error::Result;

/// Two-timed flow model `φ_{s,t}(x) = x + (t − s) v_{s,t}(x)`.
///
/// The initial condition `φ_{s,s}(x) = x` holds exactly for any AVM.
#[derive(Clone, Copy, Debug)]
pub struct Ttfm<A>(pub A);

fn gaps(s: &[f64], t: &[f64]) -> Vec<f64> {
    s.iter().zip(t).map(|(s, t)| t - s).collect()
}

impl<A: AverageVelocity> Ttfm<A> {
    pub fn avm(&self) -> &A {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn forward(&self, s: &[f64], t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut v = self.0.avg_velocity(s, t, x)?;
        scale_rows(&mut v, &gaps(s, t));
        Ok(v + x)
    }

    /// `φ` and its directional derivative
    /// `φ̇ = ẋ + (ṫ − ṡ) v + (t − s) v̇` along each direction.
    pub fn forward_jvp(
        &self,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
        dirs: &[Direction<'_>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let (v, vdots) = self.0.avg_velocity_jvp(s, t, x, dirs)?;
        let gap = gaps(s, t);
        let tangents = dirs
            .iter()
            .zip(vdots)
            .map(|(d, mut vd)| {
                scale_rows(&mut vd, &gap);
                vd.scaled_add(d.dt - d.ds, &v);
                if let Some(dx) = &d.dx {
                    vd += dx;
                }
                vd
            })
            .collect();
        let mut phi = v;
        scale_rows(&mut phi, &gap);
        Ok((phi + x, tangents))
    }

    /// `∂φ_{s,t}(x)/∂t`.
    pub fn dt_flow(&self, s: &[f64], t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_jvp(s, t, x, &[Direction::along_t()])?.1.remove(0))
    }

    /// `∂φ_{s,t}(x)/∂s`.
    pub fn ds_flow(&self, s: &[f64], t: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_jvp(s, t, x, &[Direction::along_s()])?.1.remove(0))
    }

    /// `(∂φ_{s,t}/∂x) u`.
    pub fn jvp_x(&self, s: &[f64], t: &[f64], x: ArrayView2<f64>, u: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_jvp(s, t, x, &[Direction::along_x(u)])?.1.remove(0))
    }

    /// Full Jacobian `∂φ_{s,t}/∂x` per row, assembled from `d` basis JVPs.
    /// Also returns `φ`.
    pub fn jacobian_x(
        &self,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Vec<DMatrix<f64>>)> {
        let d = self.dim();
        let basis: Vec<Array2<f64>> = (0..d)
            .map(|k| {
                let mut e = Array2::zeros(x.dim());
                e.column_mut(k).fill(1.0);
                e
            })
            .collect();
        let dirs: Vec<Direction<'_>> = basis.iter().map(|b| Direction::along_x(b.view())).collect();
        let (phi, cols) = self.forward_jvp(s, t, x, &dirs)?;
        let jacs = (0..x.nrows())
            .map(|i| DMatrix::from_fn(d, d, |r, c| cols[c][[i, r]]))
            .collect();
        Ok((phi, jacs))
    }

    /// Single-point `φ_{s,t}(x)`.
    pub fn flow_point(&self, s: f64, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(&[s], &[t], row(x).view())?.row(0).to_vec())
    }
}
