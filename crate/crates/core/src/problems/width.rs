//! Vector-output adapter `f = L·Rᵀ·x` on one input, used for width sweeps.
//!
//! The adapter starts at zero (`L = 0`) with `R ~ N(0, 1/n)`, as LoRA does.
//! The product `L·Rᵀ` is never formed; all work is `O(n·r)` per step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorized::{FactorGrad, FactorPair, DEFAULT_DELTA};
use crate::linalg::Mat;
use crate::optimizers::{AdamHyper, Optimizer, Rule, StepConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct WidthModel {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub pair: FactorPair,
    pub sigma_a2: f64,
    pub sigma_b2: f64,
}

/// Outcome of one increment run: one `‖f_t − f_{t−1}‖∞` per step, with
/// `f64::INFINITY` marking steps at or after divergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementTrace {
    pub increments: Vec<f64>,
    pub overflowed: bool,
}

impl WidthModel {
    /// Width `n`, output dimension `m = n`, rank `r`: `x` has ±1 entries, `y`
    /// has `N(0,1)` entries, `L = 0` and `R` has `N(0, 1/n)` entries.
    pub fn new(n: usize, r: usize, seed: u64) -> Result<Self> {
        if n == 0 || r == 0 || r > n {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= r <= n, got n = {n}, r = {r}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let sigma_a2 = 1.0 / n as f64;
        let r_factor = Mat::gaussian(n, r, sigma_a2.sqrt(), &mut rng);
        let pair = FactorPair::new(Mat::zeros(n, r), r_factor, DEFAULT_DELTA)?;
        Ok(Self {
            x,
            y,
            pair,
            sigma_a2,
            sigma_b2: 0.0,
        })
    }

    pub fn width(&self) -> usize {
        self.x.len()
    }

    /// `Rᵀ·x`.
    pub fn projected_input(&self, pair: &FactorPair) -> Vec<f64> {
        pair.r().t_matmul(&Mat::column_vector(&self.x)).into_vec()
    }

    /// `f = L·(Rᵀ·x)`.
    pub fn forward(&self, pair: &FactorPair) -> Vec<f64> {
        let z = Mat::column_vector(&self.projected_input(pair));
        pair.l().matmul(&z).into_vec()
    }

    pub fn loss(&self, pair: &FactorPair) -> f64 {
        let f = self.forward(pair);
        0.5 * f.iter().zip(&self.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    /// Loss `½‖L·Rᵀ·x − y‖²` with `dL = e·(Rᵀx)ᵀ` and `dR = x·(Lᵀe)ᵀ`.
    pub fn loss_grad(&self, pair: &FactorPair) -> Result<(f64, FactorGrad)> {
        let n = self.width();
        if pair.dims() != (self.y.len(), n) {
            return Err(crate::error::shape_err(
                "width model",
                format!("{}x{n} adapter", self.y.len()),
                format!("{}x{}", pair.dims().0, pair.dims().1),
            ));
        }
        let z = Mat::column_vector(&self.projected_input(pair));
        let f = pair.l().matmul(&z);
        let e = f.sub(&Mat::column_vector(&self.y));
        let dl = e.matmul_t(&z);
        let lte = pair.l().t_matmul(&e);
        let dr = Mat::column_vector(&self.x).matmul_t(&lte);
        Ok((0.5 * e.frobenius_norm_sq(), FactorGrad::new(dl, dr)))
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// Trains the adapter for `steps` steps and records `‖f_t − f_{t−1}‖∞`.
///
/// Non-finite outputs stop the run; the remaining entries are `f64::INFINITY`.
pub fn width_forward_increment(
    model: &WidthModel,
    steps: usize,
    cfg: &StepConfig,
    hyper: Option<AdamHyper>,
) -> Result<IncrementTrace> {
    if !matches!(cfg.rule, Rule::SignAdam | Rule::Adamw) {
        return Err(Error::InvalidArgument(format!(
            "width runs use sign_adam or adamw, got {}",
            cfg.rule.as_str()
        )));
    }
    let mut opt = Optimizer::new(*cfg, hyper, &model.pair)?;
    let mut pair = model.pair.clone();
    let mut f_prev = model.forward(&pair);
    let mut increments = Vec::with_capacity(steps);
    let mut overflowed = false;
    for _ in 0..steps {
        if overflowed {
            increments.push(f64::INFINITY);
            continue;
        }
        let step = model.loss_grad(&pair).and_then(|(_, g)| {
            if g.is_finite() {
                opt.step(&pair, &g)
            } else {
                Err(Error::NumericalFailure("non-finite gradient".into()))
            }
        });
        let next = match step {
            Ok(p) if p.l().is_finite() && p.r().is_finite() => p,
            // Huge factors also break the Gram factorization; both count as divergence.
            Ok(_) | Err(Error::NumericalFailure(_)) | Err(Error::NotPositiveDefinite { .. }) => {
                overflowed = true;
                increments.push(f64::INFINITY);
                continue;
            }
            Err(e) => return Err(e),
        };
        let f = model.forward(&next);
        let inc = max_abs_diff(&f, &f_prev);
        if !inc.is_finite() {
            overflowed = true;
            increments.push(f64::INFINITY);
            continue;
        }
        increments.push(inc);
        f_prev = f;
        pair = next;
    }
    Ok(IncrementTrace { increments, overflowed })
}
