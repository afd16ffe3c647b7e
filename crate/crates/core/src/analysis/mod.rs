//! Measurements on the theory side: aligned distances, contraction traces,
//! empirical RIP constants and width exponents.

pub mod alignment;
pub mod contraction;
pub mod gamma;
pub mod rip;

pub use alignment::{aligned_distance, AlignmentReport};
pub use contraction::{contraction_trace, ContractionTrace};
pub use gamma::{gamma_slope, gram_inverse_scaling_check, GammaFit};
pub use rip::{assumption_report, empirical_rip, AssumptionReport};
