// SPDX-License-Identifier: Apache-2.0

//! Batched MLP of `n_hidden` (affine → ELU) blocks and a final affine layer.
//!
//! Rows of every matrix are examples. Besides the plain forward pass the
//! network supports forward-mode tangents (directional derivatives with
//! respect to the input) and reverse-mode gradients with respect to the
//! parameters, both of the outputs and of the output tangents. The latter is
//! what losses built on `∂φ/∂t` need.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::params::{split_layer_mut, LayerShape, ParamStore};
use crate::error::{domain, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Elu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden_width: usize,
    pub n_hidden: usize,
    pub out_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(in_dim: usize, hidden_width: usize, n_hidden: usize, out_dim: usize) -> Result<Self> {
        let spec = Self {
            in_dim,
            hidden_width,
            n_hidden,
            out_dim,
            activation: Activation::Elu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_hidden == 0 || self.in_dim == 0 || self.hidden_width == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!(
                "MLP dimensions must be positive with at least one hidden block: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<LayerShape> {
        let mut v = Vec::with_capacity(self.n_hidden + 1);
        v.push(LayerShape {
            fan_in: self.in_dim,
            fan_out: self.hidden_width,
        });
        for _ in 1..self.n_hidden {
            v.push(LayerShape {
                fan_in: self.hidden_width,
                fan_out: self.hidden_width,
            });
        }
        v.push(LayerShape {
            fan_in: self.hidden_width,
            fan_out: self.out_dim,
        });
        v
    }

    pub fn n_params(&self) -> usize {
        self.layout().iter().map(LayerShape::len).sum()
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        ParamStore::init_he_uniform(self.layout(), seed)
    }
}

/// `z = a Wᵀ + b`.
pub(crate) fn affine(a: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut z = Array2::zeros((a.nrows(), w.nrows()));
    z.rows_mut().into_iter().for_each(|mut r| r.assign(&b));
    general_mat_mul(1.0, &a, &w.t(), 1.0, &mut z);
    z
}

/// `ż = ȧ Wᵀ`.
fn linear(a: ArrayView2<f64>, w: ArrayView2<f64>) -> Array2<f64> {
    let mut z = Array2::zeros((a.nrows(), w.nrows()));
    general_mat_mul(1.0, &a, &w.t(), 0.0, &mut z);
    z
}

/// ELU with α = 1 applied in place; returns nothing, `z` becomes `elu(z)`.
/// Derivatives are recovered from the output: for `z ≤ 0`,
/// `elu'(z) = elu''(z) = elu(z) + 1`.
fn elu_inplace(z: &mut Array2<f64>) {
    z.mapv_inplace(|v| if v > 0.0 { v } else { v.exp_m1() });
}

#[inline]
fn elu_grad(pre: f64, post: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        post + 1.0
    }
}

#[inline]
fn elu_curv(pre: f64, post: f64) -> f64 {
    if pre > 0.0 {
        0.0
    } else {
        post + 1.0
    }
}

fn check_finite(a: &Array2<f64>, stage: &'static str, layer: usize) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteLayer { stage, layer })
    }
}

fn check_shapes(spec: &MlpSpec, params: &ParamStore, input: &ArrayView2<f64>) -> Result<()> {
    if params.layout() != spec.layout().as_slice() {
        return Err(domain("parameter layout does not match the MLP spec"));
    }
    if input.ncols() != spec.in_dim {
        return Err(domain(format!(
            "input has {} columns, MLP expects {}",
            input.ncols(),
            spec.in_dim
        )));
    }
    Ok(())
}

/// Activations retained by a forward pass for the reverse pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.pre.last().unwrap()
    }
}

/// Values and one tangent stream retained for the reverse pass.
#[derive(Clone, Debug)]
pub struct DualTrace {
    primal: ForwardTrace,
    input_tangent: Array2<f64>,
    pre_tangent: Vec<Array2<f64>>,
    post_tangent: Vec<Array2<f64>>,
}

impl DualTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.primal.output()
    }

    pub fn output_tangent(&self) -> &Array2<f64> {
        self.pre_tangent.last().unwrap()
    }
}

impl MlpSpec {
    /// Output only; keeps no intermediates.
    pub fn eval(&self, params: &ParamStore, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_shapes(self, params, &input)?;
        let n = params.n_layers();
        let mut cur: Option<Array2<f64>> = None;
        for l in 0..n {
            let (w, b) = params.layer(l);
            let a = cur.as_ref().map_or(input.view(), |c| c.view());
            let mut z = affine(a, w, b);
            check_finite(&z, "forward", l)?;
            if l + 1 < n {
                elu_inplace(&mut z);
            }
            cur = Some(z);
        }
        Ok(cur.unwrap())
    }

    /// Output plus the directional derivative along each input tangent.
    pub fn eval_jvp(
        &self,
        params: &ParamStore,
        input: ArrayView2<f64>,
        tangents: &[ArrayView2<f64>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        check_shapes(self, params, &input)?;
        for t in tangents {
            if t.dim() != input.dim() {
                return Err(domain("tangent shape differs from input shape"));
            }
        }
        let n = params.n_layers();
        let mut cur: Option<Array2<f64>> = None;
        let mut tans: Vec<Array2<f64>> = Vec::new();
        for l in 0..n {
            let (w, b) = params.layer(l);
            let a = cur.as_ref().map_or(input.view(), |c| c.view());
            let mut z = affine(a, w, b);
            check_finite(&z, "forward", l)?;
            let mut zt: Vec<Array2<f64>> = if l == 0 {
                tangents.iter().map(|t| linear(t.view(), w)).collect()
            } else {
                tans.iter().map(|t| linear(t.view(), w)).collect()
            };
            if l + 1 < n {
                let pre = z.clone();
                elu_inplace(&mut z);
                for t in zt.iter_mut() {
                    Zip::from(t)
                        .and(&pre)
                        .and(&z)
                        .for_each(|t, &p, &q| *t *= elu_grad(p, q));
                }
            }
            for t in &zt {
                check_finite(t, "tangent", l)?;
            }
            cur = Some(z);
            tans = zt;
        }
        Ok((cur.unwrap(), tans))
    }

    pub fn forward(&self, params: &ParamStore, input: ArrayView2<f64>) -> Result<ForwardTrace> {
        check_shapes(self, params, &input)?;
        let n = params.n_layers();
        let mut pre = Vec::with_capacity(n);
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(n - 1);
        for l in 0..n {
            let (w, b) = params.layer(l);
            let a = if l == 0 { input.view() } else { post[l - 1usize].view() };
            let z = affine(a, w, b);
            check_finite(&z, "forward", l)?;
            if l + 1 < n {
                let mut act = z.clone();
                elu_inplace(&mut act);
                post.push(act);
            }
            pre.push(z);
        }
        Ok(ForwardTrace {
            input: input.to_owned(),
            pre,
            post,
        })
    }

    pub fn forward_dual(
        &self,
        params: &ParamStore,
        input: ArrayView2<f64>,
        tangent: ArrayView2<f64>,
    ) -> Result<DualTrace> {
        if tangent.dim() != input.dim() {
            return Err(domain("tangent shape differs from input shape"));
        }
        let primal = self.forward(params, input)?;
        let n = params.n_layers();
        let mut pre_tangent = Vec::with_capacity(n);
        let mut post_tangent: Vec<Array2<f64>> = Vec::with_capacity(n - 1);
        for l in 0..n {
            let (w, _) = params.layer(l);
            let a = if l == 0 { tangent.view() } else { post_tangent[l - 1].view() };
            let zt = linear(a, w);
            check_finite(&zt, "tangent", l)?;
            if l + 1 < n {
                let mut at = zt.clone();
                Zip::from(&mut at)
                    .and(&primal.pre[l])
                    .and(&primal.post[l])
                    .for_each(|t, &p, &q| *t *= elu_grad(p, q));
                post_tangent.push(at);
            }
            pre_tangent.push(zt);
        }
        Ok(DualTrace {
            primal,
            input_tangent: tangent.to_owned(),
            pre_tangent,
            post_tangent,
        })
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂output`.
    pub fn backward(
        &self,
        params: &ParamStore,
        trace: &ForwardTrace,
        grad_out: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != params.len() {
            return Err(domain("gradient buffer length differs from parameter count"));
        }
        let n = params.n_layers();
        let mut g = grad_out.to_owned();
        for l in (0..n).rev() {
            check_finite(&g, "backward", l)?;
            let a = if l == 0 { trace.input.view() } else { trace.post[l - 1].view() };
            accumulate_layer(params, l, grad, &g, a, None);
            if l > 0 {
                let (w, _) = params.layer(l);
                let mut ga = g.dot(&w);
                Zip::from(&mut ga)
                    .and(&trace.pre[l - 1])
                    .and(&trace.post[l - 1])
                    .for_each(|g, &p, &q| *g *= elu_grad(p, q));
                g = ga;
            }
        }
        Ok(())
    }

    /// Accumulates the parameter gradient of a loss that depends on both the
    /// output (`grad_out`) and the output tangent (`grad_out_tangent`).
    pub fn backward_dual(
        &self,
        params: &ParamStore,
        trace: &DualTrace,
        grad_out: ArrayView2<f64>,
        grad_out_tangent: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != params.len() {
            return Err(domain("gradient buffer length differs from parameter count"));
        }
        let n = params.n_layers();
        let p = &trace.primal;
        // g: ∂L/∂z_l, h: ∂L/∂ż_l
        let mut g = grad_out.to_owned();
        let mut h = grad_out_tangent.to_owned();
        for l in (0..n).rev() {
            check_finite(&g, "backward", l)?;
            check_finite(&h, "backward tangent", l)?;
            let (a, at) = if l == 0 {
                (p.input.view(), trace.input_tangent.view())
            } else {
                (p.post[l - 1].view(), trace.post_tangent[l - 1].view())
            };
            accumulate_layer(params, l, grad, &g, a, Some((&h, at)));
            if l > 0 {
                let (w, _) = params.layer(l);
                let mut ga = g.dot(&w);
                let mut ha = h.dot(&w);
                Zip::from(&mut ga)
                    .and(&mut ha)
                    .and(&p.pre[l - 1])
                    .and(&p.post[l - 1])
                    .and(&trace.pre_tangent[l - 1])
                    .for_each(|ga, ha, &pre, &post, &zt| {
                        let d1 = elu_grad(pre, post);
                        *ga = *ga * d1 + *ha * elu_curv(pre, post) * zt;
                        *ha *= d1;
                    });
                g = ga;
                h = ha;
            }
        }
        Ok(())
    }
}

/// `∂W += gᵀ a (+ hᵀ ȧ)`, `∂b += Σ_rows g`.
fn accumulate_layer(
    params: &ParamStore,
    l: usize,
    grad: &mut [f64],
    g: &Array2<f64>,
    a: ArrayView2<f64>,
    tangent: Option<(&Array2<f64>, ArrayView2<f64>)>,
) {
    let shape = params.layout()[l];
    let (mut gw, mut gb) = split_layer_mut(&mut grad[params.layer_range(l)], shape);
    general_mat_mul(1.0, &g.t(), &a, 1.0, &mut gw);
    if let Some((h, at)) = tangent {
        general_mat_mul(1.0, &h.t(), &at, 1.0, &mut gw);
    }
    gb += &g.sum_axis(Axis(0));
}
