//! Objectives with analytic gradients, and generators for their instances.

pub mod arrangements;
pub mod decomposition;
pub mod multiterm;
pub mod toy;
pub mod width;

use crate::factorized::{FactorGrad, FactorPair};
use crate::linalg::Mat;

/// Central finite-difference gradient of `loss` with respect to both factors
/// of `pair`, using step `h` on every entry.
///
/// Meant for checking analytic gradients; costs two loss evaluations per entry.
pub fn finite_difference_grad(pair: &FactorPair, h: f64, mut loss: impl FnMut(&FactorPair) -> f64) -> FactorGrad {
    let diff = |which: usize, loss: &mut dyn FnMut(&FactorPair) -> f64| {
        let base = if which == 0 { pair.l() } else { pair.r() };
        let mut out = Mat::zeros(base.rows(), base.cols());
        for i in 0..base.rows() {
            for j in 0..base.cols() {
                let mut eval = |shift: f64| {
                    let mut moved = base.clone();
                    moved[(i, j)] += shift;
                    let p = if which == 0 {
                        pair.replace(moved, pair.r().clone())
                    } else {
                        pair.replace(pair.l().clone(), moved)
                    };
                    loss(&p)
                };
                out[(i, j)] = (eval(h) - eval(-h)) / (2.0 * h);
            }
        }
        out
    };
    let dl = diff(0, &mut loss);
    let dr = diff(1, &mut loss);
    FactorGrad::new(dl, dr)
}

/// Relative error `‖a − b‖ / max(‖b‖, floor)` over both factor gradients.
pub fn grad_rel_error(a: &FactorGrad, b: &FactorGrad) -> f64 {
    let num = (a.dl.sub(&b.dl).frobenius_norm_sq() + a.dr.sub(&b.dr).frobenius_norm_sq()).sqrt();
    num / b.norm().max(1e-12)
}
