//! Random Fourier feature hidden layer for the rbf kernel `exp(-g ||x - y||^2)`.
//!
//! A [`FrequencyBank`] holds `D` frequency vectors drawn from `N(0, 2g I_d)`.
//! Each frequency produces one `(cos, sin)` pair, so the feature map has `2D`
//! outputs laid out as `cos_1, sin_1, cos_2, sin_2, ...` and scaled by
//! `sqrt(1/D)`. Inner products of mapped points are unbiased estimates of the
//! kernel value.
//!
//! Sampling uses a ChaCha8 stream seeded with [`rand::SeedableRng::seed_from_u64`]
//! and the ziggurat standard normal from `rand_distr`, scaled by `sqrt(2g)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBank {
    /// Row-major `num_pairs x dim_in`.
    freqs: Vec<f64>,
    bandwidth: f64,
    dim_in: usize,
    num_pairs: usize,
}

/// Output of the hidden layer: `2D` interleaved cos/sin activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }
}

impl FrequencyBank {
    /// Draws `num_pairs` i.i.d. frequencies from `N(0, 2g I_d)`.
    pub fn sample(dim_in: usize, num_pairs: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        check_shape(dim_in, num_pairs, bandwidth)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = (2.0 * bandwidth).sqrt();
        let freqs = (0..dim_in * num_pairs)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        Ok(Self {
            freqs,
            bandwidth,
            dim_in,
            num_pairs,
        })
    }

    /// Builds a bank from explicit frequency rows.
    pub fn from_rows(rows: &[Vec<f64>], bandwidth: f64) -> Result<Self> {
        let num_pairs = rows.len();
        let dim_in = rows.first().map_or(0, Vec::len);
        check_shape(dim_in, num_pairs, bandwidth)?;
        let mut freqs = Vec::with_capacity(dim_in * num_pairs);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim_in {
                return Err(Error::invalid(format!(
                    "frequency row {i} has length {}, expected {dim_in}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("frequency row {i} is not finite")));
            }
            freqs.extend_from_slice(row);
        }
        Ok(Self {
            freqs,
            bandwidth,
            dim_in,
            num_pairs,
        })
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }

    /// Number of hidden units, `2D`.
    pub fn num_features(&self) -> usize {
        2 * self.num_pairs
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.freqs[i * self.dim_in..(i + 1) * self.dim_in]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.freqs.chunks_exact(self.dim_in)
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.freqs[i * self.dim_in..(i + 1) * self.dim_in]
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim_in {
            return Err(Error::invalid(format!(
                "input has dimension {}, bank expects {}",
                x.len(),
                self.dim_in
            )));
        }
        Ok(())
    }

    /// Writes the scaled interleaved features into `out` (length `2D`).
    pub(crate) fn transform_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), 2 * self.num_pairs);
        let scale = (1.0 / self.num_pairs as f64).sqrt();
        for (pair, row) in out.chunks_exact_mut(2).zip(self.rows()) {
            let (s, c) = dot(row, x).sin_cos();
            pair[0] = scale * c;
            pair[1] = scale * s;
        }
    }

    pub fn transform(&self, x: &[f64]) -> Result<FeatureVector> {
        self.check_input(x)?;
        let mut out = vec![0.0; self.num_features()];
        self.transform_into(x, &mut out);
        Ok(FeatureVector(out))
    }

    /// Kernel estimate `phi(x)' phi(y)`.
    pub fn kernel_estimate(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let fx = self.transform(x)?;
        let fy = self.transform(y)?;
        Ok(fx.dot(&fy))
    }

    /// Same estimate through the angle-difference identity,
    /// `(1/D) sum_i cos(alpha_i' (x - y))`.
    pub fn kernel_estimate_by_difference(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        self.check_input(y)?;
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let total: f64 = self.rows().map(|row| dot(row, &diff).cos()).sum();
        Ok(total / self.num_pairs as f64)
    }
}

/// Exact rbf kernel value.
pub fn rbf_kernel(x: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-bandwidth * sq).exp()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn check_shape(dim_in: usize, num_pairs: usize, bandwidth: f64) -> Result<()> {
    if dim_in == 0 {
        return Err(Error::invalid("input dimension must be at least 1"));
    }
    if num_pairs == 0 {
        return Err(Error::invalid("number of frequency pairs must be at least 1"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!(
            "bandwidth must be positive and finite, got {bandwidth}"
        )));
    }
    Ok(())
}
