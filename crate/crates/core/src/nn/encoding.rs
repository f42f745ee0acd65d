// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sinusoidal time encoding laid out as `[sin(t ω_k) … | cos(t ω_k) …]` with
/// `ω_k = 10000^(−2k/dim)` for `k < dim/2`, applied to `t` directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct PositionalEncoding {
    dim: usize,
    freqs: Vec<f64>,
}

impl TryFrom<usize> for PositionalEncoding {
    type Error = Error;

    fn try_from(dim: usize) -> Result<Self> {
        Self::new(dim)
    }
}

impl From<PositionalEncoding> for usize {
    fn from(pe: PositionalEncoding) -> usize {
        pe.dim
    }
}

impl PositionalEncoding {
    pub const BASE: f64 = 10_000.0;

    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "positional encoding dimension must be even and positive, got {dim}"
            )));
        }
        let half = dim / 2;
        let freqs = (0..half)
            .map(|k| Self::BASE.powf(-2.0 * k as f64 / dim as f64))
            .collect();
        Ok(Self { dim, freqs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn encode_into(&self, t: f64, out: &mut [f64]) {
        let half = self.freqs.len();
        for (k, w) in self.freqs.iter().enumerate() {
            let (s, c) = (t * w).sin_cos();
            out[k] = s;
            out[half + k] = c;
        }
    }

    /// `d/dt` of the encoding, scaled by `scale`.
    pub fn derivative_into(&self, t: f64, scale: f64, out: &mut [f64]) {
        let half = self.freqs.len();
        for (k, w) in self.freqs.iter().enumerate() {
            let (s, c) = (t * w).sin_cos();
            out[k] = scale * w * c;
            out[half + k] = -scale * w * s;
        }
    }

    pub fn encode(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.encode_into(t, &mut out);
        out
    }
}

/// Encodes `t` into a fresh vector of length `dim`.
pub fn pe_encode(t: f64, dim: usize) -> Result<Vec<f64>> {
    Ok(PositionalEncoding::new(dim)?.encode(t))
}
