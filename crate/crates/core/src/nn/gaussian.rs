//! Diagonal Gaussians: closed-form densities, entropies, and products, both as
//! plain values and as differentiable tape expressions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::matrix::Matrix;
use super::tape::{Tape, Var};

/// Lower bound added after the softplus that maps raw outputs to variances.
pub const VARIANCE_FLOOR: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum GaussianError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("variance entry {index} is not strictly positive: {value}")]
    NonPositiveVariance { index: usize, value: f64 },
    #[error("a product needs at least one factor")]
    NoFactors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self, GaussianError> {
        if mean.len() != variance.len() {
            return Err(GaussianError::DimensionMismatch {
                expected: mean.len(),
                actual: variance.len(),
            });
        }
        if let Some((index, &value)) = variance
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
        {
            return Err(GaussianError::NonPositiveVariance { index, value });
        }
        Ok(Self { mean, variance })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64, GaussianError> {
        self.check_dim(x.len())?;
        let quad: f64 = self
            .mean
            .iter()
            .zip(&self.variance)
            .zip(x)
            .map(|((m, v), x)| (x - m) * (x - m) / v + v.ln())
            .sum();
        Ok(-0.5 * (quad + self.dim() as f64 * (2.0 * PI).ln()))
    }

    /// `0.5 d (1 + ln 2π) + 0.5 Σ ln σ²ᵢ`.
    pub fn entropy(&self) -> f64 {
        0.5 * self.dim() as f64 * (1.0 + (2.0 * PI).ln()) + 0.5 * self.variance.iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Reparameterized sample `mean + sqrt(variance) ⊙ noise`.
    pub fn sample_with(&self, noise: &[f64]) -> Result<Vec<f64>, GaussianError> {
        self.check_dim(noise.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.variance)
            .zip(noise)
            .map(|((m, v), e)| m + v.sqrt() * e)
            .collect())
    }

    /// Normalized product of densities: precisions add and the mean is the
    /// precision-weighted average of the factor means.
    pub fn product(factors: &[DiagGaussian]) -> Result<DiagGaussian, GaussianError> {
        let first = factors.first().ok_or(GaussianError::NoFactors)?;
        let d = first.dim();
        let mut precision = vec![0.0; d];
        let mut weighted = vec![0.0; d];
        for f in factors {
            f.check_dim(d)?;
            for i in 0..d {
                precision[i] += 1.0 / f.variance[i];
                weighted[i] += f.mean[i] / f.variance[i];
            }
        }
        let variance: Vec<f64> = precision.iter().map(|p| 1.0 / p).collect();
        let mean = weighted.iter().zip(&variance).map(|(w, v)| w * v).collect();
        DiagGaussian::new(mean, variance)
    }

    fn check_dim(&self, actual: usize) -> Result<(), GaussianError> {
        if actual == self.dim() {
            Ok(())
        } else {
            Err(GaussianError::DimensionMismatch {
                expected: self.dim(),
                actual,
            })
        }
    }
}

/// A batch of diagonal Gaussians on a tape: one distribution per row.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVars {
    pub mean: Var,
    pub variance: Var,
}

/// `softplus(raw) + VARIANCE_FLOOR`.
pub fn positive_variance(tape: &mut Tape, raw: Var) -> Var {
    let sp = tape.softplus(raw);
    tape.affine(sp, 1.0, VARIANCE_FLOOR)
}

/// Splits `B x 2d` raw outputs into a mean and a floored variance.
pub fn split_gaussian(tape: &mut Tape, raw: Var, dim: usize) -> GaussianVars {
    let mean = tape.slice_cols(raw, 0, dim);
    let pre = tape.slice_cols(raw, dim, dim);
    let variance = positive_variance(tape, pre);
    GaussianVars { mean, variance }
}

/// Row-wise log density, `B x 1`.
pub fn log_prob(tape: &mut Tape, g: GaussianVars, x: Var) -> Var {
    let d = tape.value(x).cols() as f64;
    let diff = tape.sub(x, g.mean);
    let sq = tape.square(diff);
    let inv = tape.recip(g.variance);
    let scaled = tape.mul(sq, inv);
    let lnv = tape.ln(g.variance);
    let terms = tape.add(scaled, lnv);
    let s = tape.sum_cols(terms);
    tape.affine(s, -0.5, -0.5 * d * (2.0 * PI).ln())
}

/// Row-wise entropy, `B x 1`.
pub fn entropy(tape: &mut Tape, variance: Var) -> Var {
    let d = tape.value(variance).cols() as f64;
    let lnv = tape.ln(variance);
    let s = tape.sum_cols(lnv);
    tape.affine(s, 0.5, 0.5 * d * (1.0 + (2.0 * PI).ln()))
}

/// Row-wise product of factors. Each factor may carry a `B x d` 0/1 mask; a
/// masked-out factor contributes nothing to that row.
pub fn product(tape: &mut Tape, factors: &[(GaussianVars, Option<Matrix>)]) -> GaussianVars {
    assert!(!factors.is_empty(), "product needs at least one factor");
    let mut precision: Option<Var> = None;
    let mut weighted: Option<Var> = None;
    for (g, mask) in factors {
        let mut p = tape.recip(g.variance);
        if let Some(mask) = mask {
            let m = tape.constant(mask.clone());
            p = tape.mul(p, m);
        }
        let w = tape.mul(g.mean, p);
        precision = Some(match precision {
            Some(acc) => tape.add(acc, p),
            None => p,
        });
        weighted = Some(match weighted {
            Some(acc) => tape.add(acc, w),
            None => w,
        });
    }
    let variance = tape.recip(precision.expect("nonempty"));
    let mean = tape.mul(weighted.expect("nonempty"), variance);
    GaussianVars { mean, variance }
}

/// Reparameterized sample `mean + sqrt(variance) ⊙ noise`.
pub fn reparameterize(tape: &mut Tape, g: GaussianVars, noise: Var) -> Var {
    let sd = tape.sqrt(g.variance);
    let scaled = tape.mul(sd, noise);
    tape.add(g.mean, scaled)
}
