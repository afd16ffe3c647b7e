//! Low-rank factor pairs `L·Rᵀ`, the Gram-inverse preconditioner and the
//! quotient metric that makes the preconditioned gradient a Riemannian one.
//!
//! One orientation serves every caller. A LoRA adapter `W + B·A` is stored as
//! `L = B`, `R = Aᵀ`; a sensing term `A_i·B_iᵀ` is stored as `L = A_i`,
//! `R = B_i`.

use crate::error::{shape_err, Error, Result};
use crate::linalg::{inverse, spd_solve_named, Mat};

/// Default Gram regularizer.
pub const DEFAULT_DELTA: f64 = 1e-6;

/// A rank-`r` factor pair representing `L·Rᵀ`, with Gram regularizer `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    l: Mat,
    r: Mat,
    delta: f64,
}

/// Euclidean gradient of a loss with respect to `(L, R)`, stored with the
/// same shapes as the factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGrad {
    pub dl: Mat,
    pub dr: Mat,
}

/// A tangent direction at a factor pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentPair {
    pub eta_l: Mat,
    pub eta_r: Mat,
}

impl FactorPair {
    /// # Errors
    /// Rejects rank-0 or mismatched factors and negative or non-finite `delta`.
    pub fn new(l: Mat, r: Mat, delta: f64) -> Result<Self> {
        if l.cols() == 0 || l.cols() != r.cols() {
            return Err(shape_err(
                "FactorPair::new",
                "L and R with the same rank r >= 1",
                format!("L {}, R {}", l.shape_str(), r.shape_str()),
            ));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "delta must be finite and >= 0, got {delta}"
            )));
        }
        if !l.is_finite() || !r.is_finite() {
            return Err(Error::InvalidArgument("factor entries must be finite".into()));
        }
        Ok(Self { l, r, delta })
    }

    /// Pair with the default regularizer.
    pub fn with_default_delta(l: Mat, r: Mat) -> Result<Self> {
        Self::new(l, r, DEFAULT_DELTA)
    }

    pub fn l(&self) -> &Mat {
        &self.l
    }

    pub fn r(&self) -> &Mat {
        &self.r
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn rank(&self) -> usize {
        self.l.cols()
    }

    /// `(m, n)` of the represented product.
    pub fn dims(&self) -> (usize, usize) {
        (self.l.rows(), self.r.rows())
    }

    pub fn into_parts(self) -> (Mat, Mat, f64) {
        (self.l, self.r, self.delta)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.l.clone(), self.r.clone(), delta)
    }

    /// Same delta, new factors. Internal helper for optimizer steps whose
    /// shapes are already known to match.
    pub(crate) fn replace(&self, l: Mat, r: Mat) -> Self {
        debug_assert_eq!(l.shape(), self.l.shape());
        debug_assert_eq!(r.shape(), self.r.shape());
        Self {
            l,
            r,
            delta: self.delta,
        }
    }

    /// `L·Rᵀ`.
    pub fn product(&self) -> Mat {
        self.l.matmul_t(&self.r)
    }

    /// The `GL(r)` action `(L·Q, R·Q⁻ᵀ)`, which leaves the product unchanged.
    pub fn gl_action(&self, q: &Mat) -> Result<Self> {
        let r = self.rank();
        if q.shape() != (r, r) {
            return Err(shape_err("gl_action", format!("{r}x{r}"), q.shape_str()));
        }
        let q_inv_t = inverse(q)?.transpose();
        Ok(self.replace(self.l.matmul(q), self.r.matmul(&q_inv_t)))
    }

    /// Checks that `grad` has this pair's shapes.
    pub fn check_grad(&self, grad: &FactorGrad) -> Result<()> {
        if grad.dl.shape() != self.l.shape() || grad.dr.shape() != self.r.shape() {
            return Err(shape_err(
                "factor gradient",
                format!("dL {}, dR {}", self.l.shape_str(), self.r.shape_str()),
                format!("dL {}, dR {}", grad.dl.shape_str(), grad.dr.shape_str()),
            ));
        }
        Ok(())
    }

    fn check_tangent(&self, t: &TangentPair) -> Result<()> {
        if t.eta_l.shape() != self.l.shape() || t.eta_r.shape() != self.r.shape() {
            return Err(shape_err(
                "tangent pair",
                format!("etaL {}, etaR {}", self.l.shape_str(), self.r.shape_str()),
                format!("etaL {}, etaR {}", t.eta_l.shape_str(), t.eta_r.shape_str()),
            ));
        }
        Ok(())
    }
}

impl FactorGrad {
    pub fn new(dl: Mat, dr: Mat) -> Self {
        Self { dl, dr }
    }

    pub fn zeros_like(pair: &FactorPair) -> Self {
        Self {
            dl: Mat::zeros(pair.l.rows(), pair.rank()),
            dr: Mat::zeros(pair.r.rows(), pair.rank()),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> Self {
        Self {
            dl: self.dl.map(f),
            dr: self.dr.map(f),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dl.is_finite() && self.dr.is_finite()
    }

    /// `⟨dL, etaL⟩ + ⟨dR, etaR⟩`.
    pub fn euclidean_inner(&self, v: &TangentPair) -> f64 {
        self.dl.inner(&v.eta_l) + self.dr.inner(&v.eta_r)
    }

    pub fn norm(&self) -> f64 {
        (self.dl.frobenius_norm_sq() + self.dr.frobenius_norm_sq()).sqrt()
    }
}

impl From<FactorGrad> for TangentPair {
    fn from(g: FactorGrad) -> Self {
        Self {
            eta_l: g.dl,
            eta_r: g.dr,
        }
    }
}

impl TangentPair {
    pub fn new(eta_l: Mat, eta_r: Mat) -> Self {
        Self { eta_l, eta_r }
    }
}

/// Solves `X·(G)⁻¹` for SPD `G` and maps a failed factorization at `delta = 0`
/// to [`Error::SingularGram`].
fn right_solve(x: &Mat, gram: &Mat, delta: f64, what: &str) -> Result<Mat> {
    let g = if delta > 0.0 {
        gram.add_diag(delta)
    } else {
        gram.clone()
    };
    match spd_solve_named(&g, &x.transpose(), what) {
        Ok(sol) => Ok(sol.transpose()),
        Err(Error::NotPositiveDefinite { .. }) if delta == 0.0 => Err(Error::SingularGram { what: what.into() }),
        Err(e) => Err(e),
    }
}

/// Applies the Gram preconditioner:
/// `(dL·(RᵀR + δI)⁻¹, dR·(LᵀL + δI)⁻¹)` with the pair's `δ`.
///
/// ```
/// use scaled_lora::{linalg::Mat, factorized::{FactorPair, FactorGrad, precondition}};
/// let pair = FactorPair::new(Mat::identity(2), Mat::diag(&[2.0, 1.0]), 0.0).unwrap();
/// let g = FactorGrad::new(Mat::identity(2), Mat::identity(2));
/// let p = precondition(&pair, &g).unwrap();
/// assert_eq!(p.dl, Mat::diag(&[0.25, 1.0]));
/// assert_eq!(p.dr, Mat::identity(2));
/// ```
pub fn precondition(pair: &FactorPair, grad: &FactorGrad) -> Result<FactorGrad> {
    pair.check_grad(grad)?;
    let dl = right_solve(&grad.dl, &pair.r.gram(), pair.delta, "RᵀR + δI")?;
    let dr = right_solve(&grad.dr, &pair.l.gram(), pair.delta, "LᵀL + δI")?;
    Ok(FactorGrad { dl, dr })
}

/// Quotient metric `⟨u_L, v_L·RᵀR⟩ + ⟨u_R, v_R·LᵀL⟩`.
pub fn metric_inner(pair: &FactorPair, u: &TangentPair, v: &TangentPair) -> Result<f64> {
    pair.check_tangent(u)?;
    pair.check_tangent(v)?;
    let left = u.eta_l.inner(&v.eta_l.matmul(&pair.r.gram()));
    let right = u.eta_r.inner(&v.eta_r.matmul(&pair.l.gram()));
    Ok(left + right)
}

/// Distance between one scaled-GD step on the product and its first-order
/// projected-gradient model.
///
/// With `G = full_grad` (the gradient of the loss with respect to `X = L·Rᵀ`),
/// the factor gradients are `G·R` and `Gᵀ·L`. The unregularized step gives
/// `X − η·G·P_R − η·P_L·G + η²·(…)`, where `P_R` and `P_L` project onto the row
/// space of `Rᵀ` and the column space of `L`; this returns the Frobenius norm
/// of the `η²` term, measured as the actual difference.
pub fn projection_residual(pair: &FactorPair, full_grad: &Mat, eta: f64) -> Result<f64> {
    let (m, n) = pair.dims();
    if full_grad.shape() != (m, n) {
        return Err(shape_err(
            "projection_residual",
            format!("{m}x{n}"),
            full_grad.shape_str(),
        ));
    }
    let exact = pair.with_delta(0.0)?;
    let grad = FactorGrad {
        dl: full_grad.matmul(&exact.r),
        dr: full_grad.t_matmul(&exact.l),
    };
    let pg = precondition(&exact, &grad)?;
    let stepped = exact.l.axpy(-eta, &pg.dl).matmul_t(&exact.r.axpy(-eta, &pg.dr));

    // P_R = R(RᵀR)⁻¹Rᵀ applied on the right, P_L = L(LᵀL)⁻¹Lᵀ on the left.
    let row_proj = pg.dl.matmul_t(&exact.r);
    let col_proj = exact.l.matmul_t(&pg.dr);
    let model = exact.product().axpy(-eta, &row_proj).axpy(-eta, &col_proj);
    Ok(stepped.sub(&model).frobenius_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthonormal;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_pair(m: usize, n: usize, r: usize, delta: f64, seed: u64) -> FactorPair {
        let mut g = rng(seed);
        FactorPair::new(
            Mat::gaussian(m, r, 1.0, &mut g),
            Mat::gaussian(n, r, 1.0, &mut g),
            delta,
        )
        .unwrap()
    }

    fn random_grad(pair: &FactorPair, seed: u64) -> FactorGrad {
        let mut g = rng(seed);
        let (m, n) = pair.dims();
        FactorGrad::new(
            Mat::gaussian(m, pair.rank(), 1.0, &mut g),
            Mat::gaussian(n, pair.rank(), 1.0, &mut g),
        )
    }

    fn well_conditioned_q(r: usize, seed: u64) -> Mat {
        let mut g = rng(seed);
        let u = random_orthonormal(r, r, &mut g).unwrap();
        let v = random_orthonormal(r, r, &mut g).unwrap();
        let s: Vec<f64> = (0..r).map(|i| 1.0 + 2.0 * i as f64 / r.max(1) as f64).collect();
        u.scale_columns(&s).matmul_t(&v)
    }

    #[test]
    fn new_validates() {
        assert!(FactorPair::new(Mat::zeros(3, 0), Mat::zeros(2, 0), 0.0).is_err());
        assert!(FactorPair::new(Mat::zeros(3, 2), Mat::zeros(2, 1), 0.0).is_err());
        assert!(FactorPair::new(Mat::zeros(3, 1), Mat::zeros(2, 1), -1.0).is_err());
        let p = FactorPair::with_default_delta(Mat::zeros(3, 1), Mat::zeros(2, 1)).unwrap();
        assert_eq!(p.delta(), 1e-6);
        assert_eq!(p.product().shape(), (3, 2));
    }

    #[test]
    fn orthonormal_l_leaves_dr_unchanged() {
        let mut g = rng(1);
        let l = random_orthonormal(6, 2, &mut g).unwrap();
        let pair = FactorPair::new(l, Mat::gaussian(4, 2, 1.0, &mut g), 0.0).unwrap();
        let grad = random_grad(&pair, 2);
        let p = precondition(&pair, &grad).unwrap();
        assert!(p.dr.sub(&grad.dr).max_abs() < 1e-12);
    }

    #[test]
    fn zero_factors_scale_by_inverse_delta() {
        let pair = FactorPair::new(Mat::zeros(3, 2), Mat::zeros(4, 2), 1e-6).unwrap();
        let grad = random_grad(&pair, 3);
        let p = precondition(&pair, &grad).unwrap();
        assert!(p.dl.sub(&grad.dl.scale(1e6)).max_abs() < 1e-6);
        assert!(p.dr.sub(&grad.dr.scale(1e6)).max_abs() < 1e-6);
    }

    #[test]
    fn multiply_back_recovers_gradient() {
        let pair = random_pair(7, 5, 3, 0.0, 4);
        let grad = random_grad(&pair, 5);
        let p = precondition(&pair, &grad).unwrap();
        assert!(p.dl.matmul(&pair.r().gram()).sub(&grad.dl).max_abs() < 1e-10);
        assert!(p.dr.matmul(&pair.l().gram()).sub(&grad.dr).max_abs() < 1e-10);
    }

    #[test]
    fn singular_gram_without_delta_is_reported() {
        let pair = FactorPair::new(Mat::zeros(3, 1), Mat::zeros(3, 1), 0.0).unwrap();
        let grad = FactorGrad::zeros_like(&pair);
        assert!(matches!(precondition(&pair, &grad), Err(Error::SingularGram { .. })));
    }

    #[test]
    fn precondition_rejects_wrong_shapes() {
        let pair = random_pair(3, 2, 1, 0.0, 6);
        let bad = FactorGrad::new(Mat::zeros(2, 1), Mat::zeros(2, 1));
        assert!(matches!(precondition(&pair, &bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn metric_examples() {
        let pair = random_pair(5, 4, 2, 0.0, 7);
        let z = TangentPair::new(Mat::zeros(5, 2), Mat::zeros(4, 2));
        assert_eq!(metric_inner(&pair, &z, &z).unwrap(), 0.0);

        let mut g = rng(8);
        let ortho = FactorPair::new(
            random_orthonormal(5, 2, &mut g).unwrap(),
            random_orthonormal(4, 2, &mut g).unwrap(),
            0.0,
        )
        .unwrap();
        let u: TangentPair = random_grad(&ortho, 9).into();
        let v: TangentPair = random_grad(&ortho, 10).into();
        let euclid = u.eta_l.inner(&v.eta_l) + u.eta_r.inner(&v.eta_r);
        assert!((metric_inner(&ortho, &u, &v).unwrap() - euclid).abs() < 1e-12);
    }

    #[test]
    fn projection_residual_trivial_cases() {
        let pair = random_pair(5, 4, 2, 0.0, 11);
        let g = Mat::gaussian(5, 4, 1.0, &mut rng(12));
        assert_eq!(projection_residual(&pair, &g, 0.0).unwrap(), 0.0);
        assert_eq!(projection_residual(&pair, &Mat::zeros(5, 4), 0.3).unwrap(), 0.0);
    }

    #[test]
    fn projection_residual_halving_gives_quarter() {
        let pair = random_pair(6, 5, 2, 0.0, 13);
        let g = Mat::gaussian(6, 5, 1.0, &mut rng(14));
        let a = projection_residual(&pair, &g, 0.02).unwrap();
        let b = projection_residual(&pair, &g, 0.01).unwrap();
        let ratio = a / b;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn product_is_gl_invariant(seed in any::<u64>(), r in 1usize..5) {
            let pair = random_pair(6, 5, r, 0.0, seed);
            let moved = pair.gl_action(&well_conditioned_q(r, seed ^ 0xa5)).unwrap();
            prop_assert!(moved.product().rel_diff(&pair.product()) < 1e-10);
        }

        #[test]
        fn metric_duality(seed in any::<u64>(), r in 1usize..4) {
            let pair = random_pair(6, 5, r, 0.0, seed);
            let g = random_grad(&pair, seed.wrapping_add(1));
            let v: TangentPair = random_grad(&pair, seed.wrapping_add(2)).into();
            let pg: TangentPair = precondition(&pair, &g).unwrap().into();
            let lhs = metric_inner(&pair, &pg, &v).unwrap();
            let rhs = g.euclidean_inner(&v);
            prop_assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()));
        }

        #[test]
        fn metric_is_symmetric(seed in any::<u64>()) {
            let pair = random_pair(4, 3, 2, 0.0, seed);
            let u: TangentPair = random_grad(&pair, seed ^ 1).into();
            let v: TangentPair = random_grad(&pair, seed ^ 2).into();
            let a = metric_inner(&pair, &u, &v).unwrap();
            let b = metric_inner(&pair, &v, &u).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }

        #[test]
        fn projection_residual_is_second_order(seed in any::<u64>()) {
            let pair = random_pair(6, 5, 2, 0.0, seed);
            let g = Mat::gaussian(6, 5, 1.0, &mut rng(seed ^ 3));
            let etas = [1e-1, 1e-2, 1e-3, 1e-4];
            let res: Vec<f64> = etas.iter().map(|e| projection_residual(&pair, &g, *e).unwrap()).collect();
            let slope = (res[0].ln() - res[3].ln()) / (etas[0].ln() - etas[3].ln());
            prop_assert!((1.9..=2.1).contains(&slope), "slope {}", slope);
        }
    }
}
