// SPDX-License-Identifier: Apache-2.0

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Shape of one affine layer; weights are stored row-major as
/// `fan_out × fan_in`, followed by `fan_out` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector plus the ordered layer layout it is cut into.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    layout: Vec<LayerShape>,
    offsets: Vec<usize>,
}

fn offsets_of(layout: &[LayerShape]) -> Vec<usize> {
    let mut acc = 0;
    let mut out = Vec::with_capacity(layout.len() + 1);
    out.push(0);
    for l in layout {
        acc += l.len();
        out.push(acc);
    }
    out
}

impl ParamStore {
    pub fn zeros(layout: Vec<LayerShape>) -> Self {
        let offsets = offsets_of(&layout);
        let n = *offsets.last().unwrap();
        Self {
            values: vec![0.0; n],
            layout,
            offsets,
        }
    }

    pub fn from_values(layout: Vec<LayerShape>, values: Vec<f64>) -> Result<Self> {
        let offsets = offsets_of(&layout);
        let n = *offsets.last().unwrap();
        if values.len() != n {
            return Err(domain(format!(
                "layout needs {n} parameters, got {}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            layout,
            offsets,
        })
    }

    /// He-style uniform fan-in init: weights ~ U(±√(6 / fan_in)), zero biases.
    /// Layer `l` draws from ChaCha8 stream `l` of `seed`, so layers do not
    /// share random numbers and adding a layer leaves earlier ones unchanged.
    pub fn init_he_uniform(layout: Vec<LayerShape>, seed: u64) -> Self {
        let mut store = Self::zeros(layout);
        for l in 0..store.layout.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(l as u64);
            let limit = (6.0 / store.layout[l].fan_in as f64).sqrt();
            let (mut w, _) = store.layer_mut(l);
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        store
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn n_layers(&self) -> usize {
        self.layout.len()
    }

    pub fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        split_layer(&self.values[self.offsets[l]..self.offsets[l + 1]], self.layout[l])
    }

    pub fn layer_mut(&mut self, l: usize) -> (ArrayViewMut2<'_, f64>, ArrayViewMut1<'_, f64>) {
        let shape = self.layout[l];
        split_layer_mut(
            &mut self.values[self.offsets[l]..self.offsets[l + 1]],
            shape,
        )
    }

    pub(crate) fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.layout == other.layout
    }

    /// Little-endian bytes of the value vector.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(layout: Vec<LayerShape>, bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(8) {
            return Err(domain("parameter payload is not a whole number of f64"));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_values(layout, values)
    }
}

pub(crate) fn split_layer(slice: &[f64], shape: LayerShape) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
    let (w, b) = slice.split_at(shape.fan_in * shape.fan_out);
    (
        ArrayView2::from_shape((shape.fan_out, shape.fan_in), w).unwrap(),
        ArrayView1::from(b),
    )
}

pub(crate) fn split_layer_mut(
    slice: &mut [f64],
    shape: LayerShape,
) -> (ArrayViewMut2<'_, f64>, ArrayViewMut1<'_, f64>) {
    let (w, b) = slice.split_at_mut(shape.fan_in * shape.fan_out);
    (
        ArrayViewMut2::from_shape((shape.fan_out, shape.fan_in), w).unwrap(),
        ArrayViewMut1::from(b),
    )
}
