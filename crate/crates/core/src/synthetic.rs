//! Seeded Gaussian data.
//!
//! Stream: ChaCha20 (`rand_chacha::ChaCha20Rng::from_seed`) keyed by the
//! 64-bit seed in little-endian order in bytes 0..8, zeros elsewhere.
//! Uniforms are `(next_u64 >> 11) * 2^-53`. Standard normals come in
//! Box-Muller pairs from two consecutive uniforms `a, b`:
//! `r = sqrt(-2 ln(1 - a))`, giving `r cos(2 pi b)` then `r sin(2 pi b)`.
//! The normals fill the `n x p` draw matrix row by row; row `i` is
//! `mu + L g_i` with `L` the lower Cholesky factor of `sigma`. A response,
//! if requested, consumes `n` further normals from the same stream.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::influence::PopulationModel;
use crate::spectral::SymmetricMatrix;

/// Excess variances of the leading coordinates of the default synthetic
/// covariance; the rest have unit variance.
pub const DEFAULT_SPIKES: [f64; 3] = [40.0, 20.0, 10.0];

/// Standard normal stream of the documented algorithm.
pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self {
            rng: ChaCha20Rng::from_seed(key),
            spare: None,
        }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let a = self.uniform();
        let b = self.uniform();
        let r = (-2.0 * (1.0 - a).ln()).sqrt();
        let t = std::f64::consts::TAU * b;
        self.spare = Some(r * t.sin());
        r * t.cos()
    }
}

/// `y = (beta' x)^2 + noise_sd * e`: a single-index model whose curvature
/// lies along `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    pub beta: Vec<f64>,
    pub noise_sd: f64,
}

impl ResponseModel {
    pub fn single_index(beta: DVector<f64>, noise_sd: f64) -> Self {
        Self {
            beta: beta.iter().copied().collect(),
            noise_sd,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub mu: DVector<f64>,
    pub sigma: SymmetricMatrix,
    pub seed: u64,
    pub response: Option<ResponseModel>,
}

impl SyntheticSpec {
    pub fn new(n: usize, mu: DVector<f64>, sigma: SymmetricMatrix, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        if mu.len() != sigma.dim() {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {}, sigma is {}x{}",
                mu.len(),
                sigma.dim(),
                sigma.dim()
            )));
        }
        Ok(Self {
            n,
            p: mu.len(),
            mu,
            sigma,
            seed,
            response: None,
        })
    }

    /// Zero mean, identity covariance.
    pub fn isotropic(n: usize, p: usize, seed: u64) -> Result<Self> {
        Self::spiked(n, p, &[], seed)
    }

    /// Zero mean, `sigma = diag(1 + spikes[0], 1 + spikes[1], ..., 1, ...)`.
    pub fn spiked(n: usize, p: usize, spikes: &[f64], seed: u64) -> Result<Self> {
        if p == 0 || spikes.len() > p {
            return Err(Error::InvalidArgument(format!("{} spikes for p = {p}", spikes.len())));
        }
        let diag: Vec<f64> = (0..p).map(|j| 1.0 + spikes.get(j).copied().unwrap_or(0.0)).collect();
        Self::new(n, DVector::zeros(p), SymmetricMatrix::from_diagonal(&diag)?, seed)
    }

    /// The default synthetic source for analyses and timing runs:
    /// [`SyntheticSpec::spiked`] with [`DEFAULT_SPIKES`].
    pub fn default_benchmark(n: usize, p: usize, seed: u64) -> Result<Self> {
        let k = DEFAULT_SPIKES.len().min(p);
        Self::spiked(n, p, &DEFAULT_SPIKES[..k], seed)
    }

    pub fn with_mu(mut self, mu: DVector<f64>) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_response(mut self, response: ResponseModel) -> Self {
        self.response = Some(response);
        self
    }

    pub fn generate(&self) -> Result<Dataset> {
        generate_gaussian(self)
    }
}

/// Draws the dataset described by `spec`. A pure function of `spec`.
pub fn generate_gaussian(spec: &SyntheticSpec) -> Result<Dataset> {
    let model = PopulationModel::new(spec.mu.clone(), spec.sigma.clone())?;
    let (n, p) = (spec.n, model.dim());
    let mut stream = NormalStream::new(spec.seed);
    let g = DMatrix::from_row_iterator(n, p, (0..n * p).map(|_| stream.normal()));
    let mut x = g * model.cholesky_factor().transpose();
    for mut row in x.row_iter_mut() {
        row += model.mu().transpose();
    }
    let y = match &spec.response {
        None => None,
        Some(resp) => {
            if resp.beta.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "response coefficients have length {}, p = {p}",
                    resp.beta.len()
                )));
            }
            let beta = DVector::from_column_slice(&resp.beta);
            Some(DVector::from_fn(n, |i, _| {
                let t = x.row(i).transpose().dot(&beta);
                t * t + resp.noise_sd * stream.normal()
            }))
        }
    };
    Dataset::new(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let spec = SyntheticSpec::spiked(5, 4, &[2.0], 42).unwrap();
        assert_eq!(spec.generate().unwrap().x(), spec.generate().unwrap().x());
        let other = SyntheticSpec::spiked(5, 4, &[2.0], 43).unwrap();
        assert_ne!(spec.generate().unwrap().x(), other.generate().unwrap().x());
    }

    #[test]
    fn uniform_stream_is_pinned() {
        // first words of ChaCha20 with an all-zero key
        let mut s = NormalStream::new(0);
        let mut raw = ChaCha20Rng::from_seed([0u8; 32]);
        for _ in 0..4 {
            let expected = (raw.next_u64() >> 11) as f64 / 9007199254740992.0;
            assert_eq!(s.uniform(), expected);
        }
    }

    #[test]
    fn large_sample_moments() {
        let sigma = SymmetricMatrix::from_diagonal(&[3.0, 2.0, 1.0]).unwrap();
        let mu = DVector::from_column_slice(&[5.0, -2.0, 0.5]);
        let spec = SyntheticSpec::new(50_000, mu.clone(), sigma, 7).unwrap();
        let data = spec.generate().unwrap();
        let cov = crate::influence::sample_covariance(&data, crate::influence::Divisor::NMinusOne);
        let cov = cov.as_matrix();
        for j in 0..3 {
            for k in 0..3 {
                let target = [3.0, 2.0, 1.0][j] * f64::from(j == k);
                let tol = if j == k { 0.05 * target } else { 0.05 };
                assert!((cov[(j, k)] - target).abs() < tol, "({j},{k}) {}", cov[(j, k)]);
            }
        }
        let mean = data.column_means();
        for j in 0..3 {
            assert!((mean[j] - mu[j]).abs() < 3.0 * (3.0f64 / 50_000.0).sqrt());
        }
    }

    #[test]
    fn rejects_indefinite_sigma() {
        let sigma = SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        let spec = SyntheticSpec::new(4, DVector::zeros(2), sigma, 1).unwrap();
        assert!(matches!(spec.generate(), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn response_generation() {
        let spec = SyntheticSpec::isotropic(10, 2, 3)
            .unwrap()
            .with_response(ResponseModel::single_index(DVector::from_column_slice(&[1.0, 0.0]), 0.0));
        let data = spec.generate().unwrap();
        let y = data.y().unwrap();
        for i in 0..10 {
            assert!((y[i] - data.x()[(i, 0)].powi(2)).abs() < 1e-15);
        }
    }
}
