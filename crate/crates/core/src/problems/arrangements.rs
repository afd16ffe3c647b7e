//! Hyperplane-arrangement activation masks `diag(1{X·u ≥ 0})`.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd, Mat};

/// A diagonal 0/1 matrix stored as its diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    diag: Vec<bool>,
}

impl Mask {
    pub fn new(diag: Vec<bool>) -> Self {
        Self { diag }
    }

    pub fn full(n: usize) -> Self {
        Self { diag: vec![true; n] }
    }

    /// `diag(1{X·u ≥ 0})`.
    pub fn from_direction(x: &Mat, u: &[f64]) -> Self {
        assert_eq!(x.cols(), u.len(), "direction length must equal X.cols");
        Self {
            diag: (0..x.rows())
                .map(|k| x.row(k).iter().zip(u).map(|(a, b)| a * b).sum::<f64>() >= 0.0)
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diagonal(&self) -> &[bool] {
        &self.diag
    }

    /// `‖D‖₀`, the number of active rows.
    pub fn support(&self) -> usize {
        self.diag.iter().filter(|b| **b).count()
    }

    pub fn as_mat(&self) -> Mat {
        Mat::diag(&self.diag.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect::<Vec<_>>())
    }

    /// `D·X` without forming `D`.
    pub fn apply(&self, x: &Mat) -> Mat {
        assert_eq!(self.len(), x.rows(), "mask length must equal X.rows");
        Mat::from_fn(x.rows(), x.cols(), |i, j| if self.diag[i] { x[(i, j)] } else { 0.0 })
    }
}

/// Upper bound `2r·(e(n−1)/r)^r` on the number of distinct patterns for an
/// `n`-row matrix of rank `r`.
///
/// ```
/// let b = scaled_lora::problems::arrangements::arrangement_bound(5, 1);
/// assert!((b - 8.0 * std::f64::consts::E).abs() < 1e-12);
/// ```
pub fn arrangement_bound(n: usize, r: usize) -> f64 {
    if r == 0 {
        return 1.0;
    }
    let rf = r as f64;
    2.0 * rf * (std::f64::consts::E * (n.saturating_sub(1)) as f64 / rf).powi(r as i32)
}

/// Numerical rank from singular values above `max(rows, cols)·ε·σ₁`.
pub fn numerical_rank(x: &Mat) -> Result<usize> {
    let s = svd(x)?.s;
    let top = s.first().copied().unwrap_or(0.0);
    let tol = top * f64::EPSILON * x.rows().max(x.cols()) as f64;
    Ok(s.iter().filter(|v| **v > tol).count())
}

pub(crate) fn gaussian_direction(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Samples `samples` Gaussian directions and returns the distinct patterns in
/// order of first appearance.
pub fn arrangements(x: &Mat, samples: usize, seed: u64) -> Result<Vec<Mask>> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..samples {
        let u = gaussian_direction(x.cols(), &mut rng);
        let mask = Mask::from_direction(x, &u);
        if seen.insert(mask.clone()) {
            out.push(mask);
        }
    }
    Ok(out)
}

/// Every pattern realized on an open arc of directions `u` on the unit
/// circle, for a two-column `X`.
///
/// The sign of `x_k·u` changes only at the two angles where `u ⟂ x_k`; the
/// pattern is constant between consecutive critical angles, so evaluating one
/// direction per arc enumerates every pattern a continuous sampler can hit.
/// Patterns that occur only on the measure-zero critical directions are not
/// included.
pub fn sweep_patterns_2d(x: &Mat) -> Result<Vec<Mask>> {
    if x.cols() != 2 {
        return Err(crate::error::shape_err("sweep_patterns_2d", "n x 2", x.shape_str()));
    }
    use std::f64::consts::{FRAC_PI_2, PI};
    let tau = 2.0 * PI;
    let mut crit: Vec<f64> = Vec::new();
    for k in 0..x.rows() {
        let (a, b) = (x[(k, 0)], x[(k, 1)]);
        if a == 0.0 && b == 0.0 {
            continue;
        }
        let phi = b.atan2(a);
        for t in [phi + FRAC_PI_2, phi - FRAC_PI_2] {
            crit.push(t.rem_euclid(tau));
        }
    }
    if crit.is_empty() {
        return Ok(vec![Mask::full(x.rows())]);
    }
    crit.sort_by(|a, b| a.partial_cmp(b).expect("angles are finite"));
    crit.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, &start) in crit.iter().enumerate() {
        let end = if i + 1 < crit.len() { crit[i + 1] } else { crit[0] + tau };
        let mid = 0.5 * (start + end);
        let mask = Mask::from_direction(x, &[mid.cos(), mid.sin()]);
        if seen.insert(mask.clone()) {
            out.push(mask);
        }
    }
    Ok(out)
}
