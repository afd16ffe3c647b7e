//! Riemannian-preconditioned optimization for low-rank factor pairs `L·Rᵀ`.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`]: dense matrices, SVD, SPD solves.
//! - [`factorized`]: factor pairs, the Gram preconditioner, the quotient metric.
//! - [`optimizers`]: plain and scaled GD, AdamW and sign-Adam step rules.
//! - [`problems`]: objectives with analytic gradients.
//! - [`analysis`]: aligned distances, RIP estimates, width-exponent fits.
//! - [`harness`]: configuration, seeded runs and CSV output.
//!
//! ```
//! use scaled_lora::linalg::Mat;
//! use scaled_lora::factorized::FactorPair;
//! use scaled_lora::optimizers::{gd_step, StepConfig};
//! use scaled_lora::problems::decomposition::DecompositionProblem;
//!
//! let y = Mat::diag(&[100.0, 1.0]);
//! let problem = DecompositionProblem::new(y.clone(), 2).unwrap();
//! let mut pair = FactorPair::new(Mat::diag(&[9.0, 0.9]), Mat::diag(&[11.0, 1.2]), 0.0).unwrap();
//! let cfg = StepConfig::scaled_gd(0.5).unwrap();
//! for _ in 0..60 {
//!     let (_, grad) = problem.loss_grad(&pair).unwrap();
//!     pair = gd_step(&pair, &grad, &cfg).unwrap();
//! }
//! assert!(pair.product().rel_diff(&y) < 1e-10);
//! ```

pub mod analysis;
pub mod error;
pub mod factorized;
pub mod harness;
pub mod linalg;
pub mod optimizers;
pub mod problems;

#[cfg(doctest)]
mod guide;

pub use error::{Error, Result};
pub use factorized::{FactorGrad, FactorPair, TangentPair};
pub use linalg::Mat;
pub use optimizers::{AdamHyper, AdamState, Mode, Optimizer, Rule, StepConfig};
