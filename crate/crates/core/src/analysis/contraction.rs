//! Tracking scaled gradient descent on a multi-term problem against its
//! planted truth.

use serde::{Deserialize, Serialize};

use super::alignment::aligned_distance;
use crate::error::{Error, Result};
use crate::factorized::FactorPair;
use crate::optimizers::{gd_step, StepConfig};
use crate::problems::multiterm::MultiTermProblem;

/// Per-iteration measurements; index 0 is the starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionTrace {
    pub eta: f64,
    pub loss: Vec<f64>,
    /// `max_i dist(F_t^i, F★^i)`.
    pub max_dist: Vec<f64>,
    /// `dist[t][i]`.
    pub dist: Vec<Vec<f64>>,
    /// `product_err[t][i] = ‖L_t^i·R_t^iᵀ − X★_i‖_F`.
    pub product_err: Vec<Vec<f64>>,
    /// Whether every alignment solve at step `t` converged.
    pub aligned: Vec<bool>,
}

impl ContractionTrace {
    /// `max_dist[t+1] / max_dist[t]` for every `t` with `max_dist[t] ≥ floor`.
    pub fn ratios(&self, floor: f64) -> Vec<f64> {
        self.max_dist
            .windows(2)
            .take_while(|w| w[0] >= floor)
            .map(|w| w[1] / w[0])
            .collect()
    }

    /// Per-step contraction factor guaranteed for step size `eta`.
    pub fn theoretical_factor(eta: f64) -> f64 {
        1.0 - 0.5 * eta
    }
}

/// Runs `iters` steps of scaled GD (`δ = 0`) from the extended spectral
/// initialization and measures aligned distances to the truth.
pub fn contraction_trace(p: &MultiTermProblem, eta: f64, iters: usize) -> Result<ContractionTrace> {
    let start = crate::problems::multiterm::spectral_init(p, 0.0)?;
    contraction_trace_from(p, start, eta, iters)
}

/// As [`contraction_trace`], from caller-supplied pairs.
pub fn contraction_trace_from(
    p: &MultiTermProblem,
    start: Vec<FactorPair>,
    eta: f64,
    iters: usize,
) -> Result<ContractionTrace> {
    if !(eta > 0.0 && eta <= 2.0 / 3.0) {
        return Err(Error::InvalidArgument(format!(
            "step size must lie in (0, 2/3], got {eta}"
        )));
    }
    let op = p.operator();
    let cfg = StepConfig::scaled_gd(eta)?;
    let mut pairs: Vec<FactorPair> = start.into_iter().map(|q| q.with_delta(0.0)).collect::<Result<_>>()?;
    let stars = p.truth_pairs(0.0)?;
    let products: Vec<_> = p.truth.iter().map(|t| t.product()).collect();

    let mut trace = ContractionTrace {
        eta,
        loss: Vec::with_capacity(iters + 1),
        max_dist: Vec::with_capacity(iters + 1),
        dist: Vec::with_capacity(iters + 1),
        product_err: Vec::with_capacity(iters + 1),
        aligned: Vec::with_capacity(iters + 1),
    };
    for t in 0..=iters {
        let (loss, grads) = op.loss_grad(&pairs)?;
        let mut dists = Vec::with_capacity(pairs.len());
        let mut errs = Vec::with_capacity(pairs.len());
        let mut all_converged = true;
        for (i, pair) in pairs.iter().enumerate() {
            let rep = aligned_distance(pair, &stars[i], &p.truth[i].sigma)?;
            all_converged &= rep.converged;
            dists.push(rep.dist);
            errs.push(pair.product().sub(&products[i]).frobenius_norm());
        }
        trace.loss.push(loss);
        trace.max_dist.push(dists.iter().copied().fold(0.0, f64::max));
        trace.dist.push(dists);
        trace.product_err.push(errs);
        trace.aligned.push(all_converged);
        if t == iters {
            break;
        }
        pairs = pairs
            .iter()
            .zip(&grads)
            .map(|(pair, g)| gd_step(pair, g, &cfg))
            .collect::<Result<_>>()?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::multiterm::{Design, MultiTermDims, MultiTermSpec};

    fn compliant() -> MultiTermProblem {
        MultiTermSpec {
            dims: MultiTermDims { n: 90, d: 8, c: 6 },
            r: 2,
            p: 3,
            kappa: 10.0,
            sigma_max: 1.0,
            design: Design::Orthogonal { tiny: 0.003 },
        }
        .build(1)
        .unwrap()
    }

    #[test]
    fn starting_at_truth_stays_there() {
        let p = compliant();
        let trace = contraction_trace_from(&p, p.truth_pairs(0.0).unwrap(), 0.5, 5).unwrap();
        assert!(trace.max_dist.iter().all(|d| *d < 1e-12));
    }

    #[test]
    fn theoretical_factor_at_largest_step() {
        assert!((ContractionTrace::theoretical_factor(2.0 / 3.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn step_size_is_validated() {
        let p = compliant();
        assert!(contraction_trace(&p, 0.0, 1).is_err());
        assert!(contraction_trace(&p, 0.7, 1).is_err());
    }

    #[test]
    fn compliant_instance_contracts() {
        let p = compliant();
        let eta = 2.0 / 3.0;
        let trace = contraction_trace(&p, eta, 40).unwrap();
        let ratios = trace.ratios(1e-9);
        assert!(!ratios.is_empty());
        for r in ratios {
            assert!(r <= ContractionTrace::theoretical_factor(eta), "ratio {r}");
        }
        for (errs, dists) in trace.product_err.iter().zip(&trace.dist) {
            for (e, d) in errs.iter().zip(dists) {
                assert!(*e <= 1.5 * d + 1e-12);
            }
        }
    }
}
