//! Width exponents: least-squares slopes of `log₂|value|` against `log₂ n`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, Mat};

/// Stand-in for `|value| = 0` so that the logarithm stays finite.
pub const ZERO_FLOOR: f64 = 1e-300;

/// Slopes and fit quality, one per quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub exponents: Vec<f64>,
    pub r2: Vec<f64>,
}

fn log_magnitude(v: f64) -> f64 {
    let a = v.abs();
    let a = if a.is_finite() { a.max(ZERO_FLOOR) } else { f64::MAX };
    a.log2()
}

/// Fits one slope per quantity. `values[k]` holds every quantity at `widths[k]`.
///
/// Zeros are mapped to [`ZERO_FLOOR`] and non-finite values to `f64::MAX`.
///
/// ```
/// use scaled_lora::analysis::gamma::gamma_slope;
/// let widths = [64.0, 128.0, 256.0, 512.0];
/// let values: Vec<Vec<f64>> = widths.iter().map(|n| vec![*n, 3.0]).collect();
/// let fit = gamma_slope(&widths, &values).unwrap();
/// assert!((fit.exponents[0] - 1.0).abs() < 1e-12);
/// assert!(fit.exponents[1].abs() < 1e-12);
/// ```
pub fn gamma_slope(widths: &[f64], values: &[Vec<f64>]) -> Result<GammaFit> {
    if widths.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 widths for a slope fit, got {}",
            widths.len()
        )));
    }
    if values.len() != widths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} widths but {} value rows",
            widths.len(),
            values.len()
        )));
    }
    if widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) || widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "widths must be positive and strictly increasing".into(),
        ));
    }
    let q = values[0].len();
    if values.iter().any(|row| row.len() != q) {
        return Err(Error::InvalidArgument(
            "every width needs the same number of quantities".into(),
        ));
    }
    let xs: Vec<f64> = widths.iter().map(|w| w.log2()).collect();
    let x_mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();

    let mut exponents = Vec::with_capacity(q);
    let mut r2 = Vec::with_capacity(q);
    for j in 0..q {
        let ys: Vec<f64> = values.iter().map(|row| log_magnitude(row[j])).collect();
        let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
        let slope = sxy / sxx;
        let intercept = y_mean - slope * x_mean;
        let ss_res: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        let ss_tot: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
        exponents.push(slope);
        r2.push(if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 });
    }
    Ok(GammaFit { exponents, r2 })
}

/// Single-quantity convenience wrapper returning `(slope, r²)`.
pub fn gamma_slope_single(widths: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    let rows: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
    let fit = gamma_slope(widths, &rows)?;
    Ok((fit.exponents[0], fit.r2[0]))
}

const GRAM_DRAWS: usize = 4;
const GRAM_RETRIES: usize = 10;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Compares the width exponents of `‖a‖²` and `(AᵀA)⁻¹` for random `A`.
///
/// For each width `n`, `A` has `m = n·r` rows, `r` columns and i.i.d.
/// `N(0, n^{2c})` entries. The representative magnitudes are the median
/// squared column norm and the median absolute diagonal entry of `(AᵀA)⁻¹`,
/// each averaged over a few draws. Returns `exponents = [norm, inverse]`.
pub fn gram_inverse_scaling_check(widths: &[usize], c: f64, r: usize, seed: u64) -> Result<GammaFit> {
    if r == 0 {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(widths.len());
    for (k, &n) in widths.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let std = (n as f64).powf(c);
        let m = n * r;
        let (mut norm_acc, mut inv_acc) = (0.0, 0.0);
        for _ in 0..GRAM_DRAWS {
            let mut tries = 0;
            let (a, inv) = loop {
                let a = Mat::gaussian(m, r, std, &mut rng);
                match spd_inverse(&a.gram(), "AᵀA") {
                    Ok(inv) => break (a, inv),
                    Err(_) if tries + 1 < GRAM_RETRIES => tries += 1,
                    Err(e) => return Err(e),
                }
            };
            let g = a.gram();
            norm_acc += median(g.diagonal());
            inv_acc += median(inv.diagonal().iter().map(|v| v.abs()).collect());
        }
        let draws = GRAM_DRAWS as f64;
        rows.push(vec![norm_acc / draws, inv_acc / draws]);
    }
    let w: Vec<f64> = widths.iter().map(|n| *n as f64).collect();
    gamma_slope(&w, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn widths() -> Vec<f64> {
        (6..=12).map(|k| 2f64.powi(k)).collect()
    }

    #[test]
    fn too_few_widths_is_an_error() {
        assert!(gamma_slope(&[1.0, 2.0, 4.0], &[vec![1.0], vec![1.0], vec![1.0]]).is_err());
        assert!(gamma_slope(&[1.0, 2.0, 2.0, 4.0], &vec![vec![1.0]; 4]).is_err());
    }

    #[test]
    fn noisy_square_root_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = widths();
        let vals: Vec<f64> = w
            .iter()
            .map(|n| n.sqrt() * (1.0 + 0.05 * (2.0 * rng.random::<f64>() - 1.0)))
            .collect();
        let (slope, r2) = gamma_slope_single(&w, &vals).unwrap();
        assert!((0.45..=0.55).contains(&slope), "{slope}");
        assert!(r2 > 0.99);
    }

    #[test]
    fn zeros_map_to_the_floor() {
        let (slope, _) = gamma_slope_single(&widths(), &[0.0; 7]).unwrap();
        assert_eq!(slope, 0.0);
    }

    #[test]
    fn normalized_columns_have_flat_exponents() {
        let w: Vec<usize> = (6..=11).map(|k| 1usize << k).collect();
        let fit = gram_inverse_scaling_check(&w, -0.5, 4, 2).unwrap();
        assert!(fit.exponents[0].abs() < 0.1);
        assert!(fit.exponents[1].abs() < 0.1);
    }

    #[test]
    fn unit_entries_have_opposite_exponents() {
        let w: Vec<usize> = (6..=11).map(|k| 1usize << k).collect();
        let fit = gram_inverse_scaling_check(&w, 0.0, 4, 3).unwrap();
        assert!((fit.exponents[0] - 1.0).abs() < 0.1);
        assert!((fit.exponents[1] + 1.0).abs() < 0.1);
    }

    #[test]
    fn rank_one_inverse_mirrors_norm() {
        let w: Vec<usize> = (6..=9).map(|k| 1usize << k).collect();
        let fit = gram_inverse_scaling_check(&w, 0.0, 1, 4).unwrap();
        assert!((fit.exponents[0] + fit.exponents[1]).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn exact_power_laws_are_recovered(gamma in -3.0f64..3.0, scale in 1e-3f64..1e3) {
            let w = widths();
            let vals: Vec<f64> = w.iter().map(|n| scale * n.powf(gamma)).collect();
            let (slope, r2) = gamma_slope_single(&w, &vals).unwrap();
            prop_assert!((slope - gamma).abs() < 1e-10);
            prop_assert!(r2 > 1.0 - 1e-10);
        }
    }
}
