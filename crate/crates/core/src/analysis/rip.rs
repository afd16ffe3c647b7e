//! Empirical restricted-isometry estimates and the cross-term measurements of
//! the multi-term problem.
//!
//! Certifying a RIP constant is intractable; these are lower estimates from
//! random low-rank test matrices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::problems::multiterm::MultiTermProblem;

/// Running maximum of `|‖C·M‖_F² − 1|` over `trials` random unit-Frobenius
/// `M` (`C.cols() × cols`) of rank `2r`. Entry `k` is the estimate after `k+1` trials.
pub fn empirical_rip_trace(c: &Mat, cols: usize, r: usize, trials: usize, seed: u64) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if r == 0 || cols == 0 {
        return Err(Error::InvalidArgument("rank and column count must be positive".into()));
    }
    let d = c.cols();
    let k = (2 * r).min(d).min(cols);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let g1 = Mat::gaussian(d, k, 1.0, &mut rng);
        let g2 = Mat::gaussian(cols, k, 1.0, &mut rng);
        let m = g1.matmul_t(&g2);
        let m = m.scale(1.0 / m.frobenius_norm());
        let dev = (c.matmul(&m).frobenius_norm_sq() - 1.0).abs();
        best = best.max(dev);
        out.push(best);
    }
    Ok(out)
}

/// Estimated rank-`2r` RIP constant of `C` acting on `C.cols() × cols` matrices.
///
/// ```
/// use scaled_lora::{linalg::Mat, analysis::rip::empirical_rip};
/// let d = empirical_rip(&Mat::identity(4).scale(2.0), 3, 1, 10, 0).unwrap();
/// assert!((d - 3.0).abs() < 1e-12);
/// ```
pub fn empirical_rip(c: &Mat, cols: usize, r: usize, trials: usize, seed: u64) -> Result<f64> {
    Ok(*empirical_rip_trace(c, cols, r, trials, seed)?
        .last()
        .expect("trials >= 1"))
}

/// Measured quantities behind the multi-term convergence assumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Empirical RIP estimate of each `D_i·X`.
    pub delta_hat: Vec<f64>,
    /// `cross[i][j] = ‖Xᵀ·D_iᵀ·D_j·X‖₂`, zero on the diagonal.
    pub cross: Vec<Vec<f64>>,
    /// `min(δ̂_i·‖X★_i‖_F / (P·‖X★_j‖_F), 0.12 / (7P(P+1)))`, zero on the diagonal.
    pub cross_bound: Vec<Vec<f64>>,
    pub max_delta_hat: f64,
    pub max_cross: f64,
    /// Every off-diagonal cross term is within its bound.
    pub cross_ok: bool,
}

impl AssumptionReport {
    /// True when every `δ̂_i ≤ delta_max` and the cross terms are within bounds.
    pub fn holds(&self, delta_max: f64) -> bool {
        self.cross_ok && self.max_delta_hat <= delta_max
    }
}

/// Measures the RIP estimates and cross terms of a multi-term instance.
pub fn assumption_report(p: &MultiTermProblem, trials: usize, seed: u64) -> Result<AssumptionReport> {
    let op = p.operator();
    let count = op.term_count();
    let pf = count as f64;
    let delta_hat =
        op.c.iter()
            .enumerate()
            .map(|(i, ci)| empirical_rip(ci, p.dims.c, p.r, trials, seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
    let norms: Vec<f64> = p.truth.iter().map(|t| t.product().frobenius_norm()).collect();
    let floor = 0.12 / (7.0 * pf * (pf + 1.0));
    let mut cross = vec![vec![0.0; count]; count];
    let mut cross_bound = vec![vec![0.0; count]; count];
    let mut cross_ok = true;
    for i in 0..count {
        for j in 0..count {
            if i == j {
                continue;
            }
            let g = op.c[i].t_matmul(&op.c[j]);
            let v = if g.max_abs() == 0.0 { 0.0 } else { g.spectral_norm()? };
            let ratio = if norms[j] > 0.0 {
                norms[i] / norms[j]
            } else {
                f64::INFINITY
            };
            let bound = (delta_hat[i] * ratio / pf).min(floor);
            cross[i][j] = v;
            cross_bound[i][j] = bound;
            cross_ok &= v <= bound;
        }
    }
    let max_delta_hat = delta_hat.iter().copied().fold(0.0, f64::max);
    let max_cross = cross.iter().flatten().copied().fold(0.0, f64::max);
    Ok(AssumptionReport {
        delta_hat,
        cross,
        cross_bound,
        max_delta_hat,
        max_cross,
        cross_ok,
    })
}
