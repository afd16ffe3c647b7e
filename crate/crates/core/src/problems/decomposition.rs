//! Least-squares matrix decomposition `½‖L·Rᵀ − Y‖_F²`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorized::{FactorGrad, FactorPair};
use crate::linalg::{best_rank_r, random_orthonormal, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionProblem {
    y: Mat,
    r: usize,
}

/// Singular values spaced geometrically from `sigma_max` down to `sigma_max / kappa`.
pub fn geometric_spectrum(r: usize, sigma_max: f64, kappa: f64) -> Vec<f64> {
    if r == 1 {
        return vec![sigma_max];
    }
    (0..r)
        .map(|k| sigma_max * kappa.powf(-(k as f64) / (r - 1) as f64))
        .collect()
}

impl DecompositionProblem {
    pub fn new(y: Mat, r: usize) -> Result<Self> {
        if r == 0 || r > y.rows().min(y.cols()) {
            return Err(Error::InvalidArgument(format!(
                "rank {r} must lie in 1..={} for a {} target",
                y.rows().min(y.cols()),
                y.shape_str()
            )));
        }
        if !y.is_finite() {
            return Err(Error::InvalidArgument("target must be finite".into()));
        }
        Ok(Self { y, r })
    }

    /// Rank-`r` target `U·diag(σ)·Vᵀ` with random orthonormal `U`, `V` and a
    /// geometric spectrum of condition number `kappa`.
    pub fn synthetic<R: Rng + ?Sized>(m: usize, n: usize, r: usize, kappa: f64, rng: &mut R) -> Result<Self> {
        if !(kappa >= 1.0 && kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!("kappa must be >= 1, got {kappa}")));
        }
        if r == 0 || r > m.min(n) {
            return Err(Error::InvalidArgument(format!("rank {r} must lie in 1..={}", m.min(n))));
        }
        let u = random_orthonormal(m, r, rng)?;
        let v = random_orthonormal(n, r, rng)?;
        let s = geometric_spectrum(r, 1.0, kappa);
        Self::new(u.scale_columns(&s).matmul_t(&v), r)
    }

    pub fn y(&self) -> &Mat {
        &self.y
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn loss_grad(&self, pair: &FactorPair) -> Result<(f64, FactorGrad)> {
        decomp_loss_grad(self, pair)
    }

    pub fn loss(&self, pair: &FactorPair) -> f64 {
        0.5 * pair.product().sub(&self.y).frobenius_norm_sq()
    }

    /// `‖L·Rᵀ − Y‖_F / ‖Y‖_F`.
    pub fn relative_error(&self, pair: &FactorPair) -> f64 {
        pair.product().rel_diff(&self.y)
    }

    /// Balanced factors of the best rank-`r` approximation of `Y`.
    pub fn spectral_init(&self, delta: f64) -> Result<FactorPair> {
        let (l, r) = best_rank_r(&self.y, self.r)?;
        FactorPair::new(l, r, delta)
    }

    /// Spectral initialization of `Y + noise·‖Y‖_F·G/‖G‖_F` for Gaussian `G`.
    ///
    /// With an exactly rank-`r` target the plain spectral initialization is
    /// already the solution; the perturbation leaves something to optimize.
    pub fn perturbed_spectral_init<R: Rng + ?Sized>(&self, noise: f64, delta: f64, rng: &mut R) -> Result<FactorPair> {
        let g = Mat::gaussian(self.y.rows(), self.y.cols(), 1.0, rng);
        let scale = noise * self.y.frobenius_norm() / g.frobenius_norm().max(f64::MIN_POSITIVE);
        let (l, r) = best_rank_r(&self.y.axpy(scale, &g), self.r)?;
        FactorPair::new(l, r, delta)
    }
}

/// `½‖L·Rᵀ − Y‖²` with `dL = (L·Rᵀ − Y)·R` and `dR = (L·Rᵀ − Y)ᵀ·L`.
pub fn decomp_loss_grad(p: &DecompositionProblem, pair: &FactorPair) -> Result<(f64, FactorGrad)> {
    if pair.dims() != p.y.shape() {
        return Err(crate::error::shape_err(
            "decomp_loss_grad",
            p.y.shape_str(),
            format!("{}x{}", pair.dims().0, pair.dims().1),
        ));
    }
    let e = pair.product().sub(&p.y);
    let grad = FactorGrad::new(e.matmul(pair.r()), e.t_matmul(pair.l()));
    Ok((0.5 * e.frobenius_norm_sq(), grad))
}
