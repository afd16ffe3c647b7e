//! Multi-term masked sensing: fit `Σ_i D_i·X·(W_i + L_i·R_iᵀ) ≈ Y`.
//!
//! Each term has its own activation mask `D_i`, frozen base weight `W_i` and
//! trainable pair `(L_i, R_i)`; `X` is shared. Instances are generated from a
//! planted response `Y = Σ_i D_i·X·(W_i + X★_i)` with known rank-`r` truths.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arrangements::{gaussian_direction, Mask};
use super::decomposition::geometric_spectrum;
use crate::error::{shape_err, Error, Result};
use crate::factorized::{FactorGrad, FactorPair};
use crate::linalg::{best_rank_r, random_orthonormal, Mat};

/// Cap on sampled directions when searching for distinct masks.
pub const MASK_SAMPLE_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiTermDims {
    /// Rows of `X` (samples).
    pub n: usize,
    /// Columns of `X` (features).
    pub d: usize,
    /// Columns of `Y` (outputs).
    pub c: usize,
}

/// How the data matrix and masks are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    /// Gaussian `X` with per-entry variance `1/mean‖D_i‖₀`; masks are the
    /// first `P` distinct patterns of random Gaussian directions.
    Gaussian,
    /// Rows are placed so that the `P` masks are disjoint and every `D_i·X`
    /// is close to having orthonormal columns. `tiny` (in `(0, 1)`) controls
    /// the deviation from exact orthonormality and hence the RIP constant.
    Orthogonal { tiny: f64 },
}

/// Everything needed to generate an instance from a seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiTermSpec {
    pub dims: MultiTermDims,
    pub r: usize,
    pub p: usize,
    pub kappa: f64,
    pub sigma_max: f64,
    pub design: Design,
}

/// A planted factor `X★ = L★·R★ᵀ` in balanced form `L★ = U★Σ★^{1/2}`, `R★ = V★Σ★^{1/2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTerm {
    pub l: Mat,
    pub r: Mat,
    pub sigma: Vec<f64>,
}

impl TruthTerm {
    pub fn from_svd(u: &Mat, sigma: &[f64], v: &Mat) -> Self {
        let half: Vec<f64> = sigma.iter().map(|s| s.sqrt()).collect();
        Self {
            l: u.scale_columns(&half),
            r: v.scale_columns(&half),
            sigma: sigma.to_vec(),
        }
    }

    pub fn product(&self) -> Mat {
        self.l.matmul_t(&self.r)
    }

    pub fn pair(&self, delta: f64) -> Result<FactorPair> {
        FactorPair::new(self.l.clone(), self.r.clone(), delta)
    }

    /// Smallest planted singular value `σ_r(X★)`.
    pub fn sigma_r(&self) -> f64 {
        self.sigma.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTermProblem {
    pub seed: Option<u64>,
    pub dims: MultiTermDims,
    pub r: usize,
    pub design: Option<Design>,
    pub masks: Vec<Mask>,
    pub x: Mat,
    pub w: Vec<Mat>,
    pub y: Mat,
    pub truth: Vec<TruthTerm>,
}

/// The measurement operators `C_i = D_i·X` and shifted target
/// `Y′ = Y − Σ_j D_j·X·W_j` of a problem, computed once.
#[derive(Debug, Clone)]
pub struct MultiTermOperator {
    pub c: Vec<Mat>,
    pub y_prime: Mat,
}

impl MultiTermSpec {
    pub fn validate(&self) -> Result<()> {
        let MultiTermDims { n, d, c } = self.dims;
        if n == 0 || d == 0 || c == 0 {
            return Err(Error::InvalidArgument("dims n, d, c must be positive".into()));
        }
        if self.r == 0 || self.r > d.min(c) {
            return Err(Error::InvalidArgument(format!(
                "rank {} must lie in 1..={}",
                self.r,
                d.min(c)
            )));
        }
        if self.p == 0 {
            return Err(Error::InvalidArgument("term count P must be >= 1".into()));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kappa must be >= 1, got {}",
                self.kappa
            )));
        }
        if !(self.sigma_max > 0.0 && self.sigma_max.is_finite()) {
            return Err(Error::InvalidArgument("sigma_max must be positive".into()));
        }
        if let Design::Orthogonal { tiny } = self.design {
            if !(tiny > 0.0 && tiny < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "orthogonal design needs tiny in (0, 1), got {tiny}"
                )));
            }
            if self.p > d {
                return Err(Error::InvalidArgument(format!(
                    "orthogonal design needs P <= d, got P = {}, d = {d}",
                    self.p
                )));
            }
            if n < self.p * d {
                return Err(Error::InvalidArgument(format!(
                    "orthogonal design needs n >= P*d = {}, got n = {n}",
                    self.p * d
                )));
            }
        }
        Ok(())
    }

    pub fn build(&self, seed: u64) -> Result<MultiTermProblem> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, masks) = match self.design {
            Design::Gaussian => gaussian_design(self, &mut rng)?,
            Design::Orthogonal { tiny } => orthogonal_design(self, tiny, &mut rng)?,
        };
        let MultiTermDims { d, c, .. } = self.dims;
        let sigma = geometric_spectrum(self.r, self.sigma_max, self.kappa);
        let mut truth = Vec::with_capacity(self.p);
        for _ in 0..self.p {
            let u = random_orthonormal(d, self.r, &mut rng)?;
            let v = random_orthonormal(c, self.r, &mut rng)?;
            truth.push(TruthTerm::from_svd(&u, &sigma, &v));
        }
        let w = (0..self.p)
            .map(|_| Mat::gaussian(d, c, 1.0 / (d as f64).sqrt(), &mut rng))
            .collect();
        let mut problem = MultiTermProblem::from_parts(masks, x, w, truth, self.r)?;
        problem.seed = Some(seed);
        problem.design = Some(self.design);
        Ok(problem)
    }
}

fn gaussian_design(spec: &MultiTermSpec, rng: &mut ChaCha8Rng) -> Result<(Mat, Vec<Mask>)> {
    let MultiTermDims { n, d, .. } = spec.dims;
    let x0 = Mat::gaussian(n, d, 1.0, rng);
    let mut masks: Vec<Mask> = Vec::with_capacity(spec.p);
    let mut samples = 0;
    while masks.len() < spec.p && samples < MASK_SAMPLE_CAP {
        samples += 1;
        let mask = Mask::from_direction(&x0, &gaussian_direction(d, rng));
        if mask.support() > 0 && !masks.contains(&mask) {
            masks.push(mask);
        }
    }
    if masks.len() < spec.p {
        return Err(Error::MaskSearch {
            wanted: spec.p,
            found: masks.len(),
            samples,
        });
    }
    // Patterns are invariant under positive scaling, so X can be rescaled
    // after the masks are known.
    let mean_support = masks.iter().map(Mask::support).sum::<usize>() as f64 / masks.len() as f64;
    Ok((x0.scale(1.0 / mean_support.sqrt()), masks))
}

/// Splits `0..len` into `parts` contiguous ranges whose sizes differ by at most one.
fn split(len: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let base = len / parts;
    let extra = len % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let size = base + usize::from(k < extra);
        out.push(start..start + size);
        start += size;
    }
    out
}

fn orthogonal_design(spec: &MultiTermSpec, tiny: f64, rng: &mut ChaCha8Rng) -> Result<(Mat, Vec<Mask>)> {
    let MultiTermDims { n, d, .. } = spec.dims;
    let p = spec.p;
    // Build in a basis where the mask directions are e_0..e_{P-1}: in block j,
    // coordinate j is nonnegative and the other P-1 constrained coordinates are
    // negative, so the rows of block j are exactly the active rows of mask j.
    let mut base = Mat::zeros(n, d);
    for (j, rows) in split(n, p).into_iter().enumerate() {
        let b = rows.len();
        let groups = split(b, p);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
        for i in 0..p {
            let sign = if i == j { 1.0 } else { -1.0 };
            let mut col = vec![0.0; b];
            for (g, range) in groups.iter().enumerate() {
                for k in range.clone() {
                    let mag = if g == i {
                        0.5 + rng.random::<f64>()
                    } else {
                        tiny * (0.5 + rng.random::<f64>())
                    };
                    col[k] = sign * mag;
                }
            }
            normalize(&mut col);
            cols.push(col);
        }
        for _ in p..d {
            let mut col = gaussian_direction(b, rng);
            for _ in 0..2 {
                for prev in &cols {
                    let proj: f64 = col.iter().zip(prev).map(|(a, b)| a * b).sum();
                    for (c, v) in col.iter_mut().zip(prev) {
                        *c -= proj * v;
                    }
                }
            }
            if !normalize(&mut col) {
                return Err(Error::NumericalFailure(
                    "orthogonal design: degenerate free column".into(),
                ));
            }
            cols.push(col);
        }
        for (local, k) in rows.enumerate() {
            for (jj, col) in cols.iter().enumerate() {
                base[(k, jj)] = col[local];
            }
        }
    }

    let t = random_orthonormal(d, d, rng)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let rotated = base.matmul_t(&t);
    let x = Mat::from_fn(n, d, |i, j| rotated[(order[i], j)]);

    let masks: Vec<Mask> = (0..p).map(|i| Mask::from_direction(&x, &t.column(i))).collect();
    let disjoint = (0..n).all(|k| masks.iter().filter(|m| m.diagonal()[k]).count() == 1);
    if !disjoint {
        return Err(Error::NumericalFailure(
            "orthogonal design: recomputed masks are not disjoint".into(),
        ));
    }
    Ok((x, masks))
}

fn normalize(v: &mut [f64]) -> bool {
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nrm <= 1e-12 {
        return false;
    }
    for x in v.iter_mut() {
        *x /= nrm;
    }
    true
}

/// Gaussian-design instance with `σ_max = 1`.
///
/// ```
/// use scaled_lora::problems::multiterm::{build_multiterm, MultiTermDims};
/// let p = build_multiterm(MultiTermDims { n: 40, d: 4, c: 3 }, 2, 3, 10.0, 7).unwrap();
/// assert_eq!(p.term_count(), 3);
/// assert!(p.regenerate_response().sub(&p.y).max_abs() < 1e-12);
/// ```
pub fn build_multiterm(dims: MultiTermDims, r: usize, p: usize, kappa: f64, seed: u64) -> Result<MultiTermProblem> {
    MultiTermSpec {
        dims,
        r,
        p,
        kappa,
        sigma_max: 1.0,
        design: Design::Gaussian,
    }
    .build(seed)
}

impl MultiTermProblem {
    /// Assembles `Y = Σ_i D_i·X·(W_i + X★_i)` from its parts.
    pub fn from_parts(masks: Vec<Mask>, x: Mat, w: Vec<Mat>, truth: Vec<TruthTerm>, r: usize) -> Result<Self> {
        let (n, d) = x.shape();
        let p = masks.len();
        if p == 0 || w.len() != p || truth.len() != p {
            return Err(Error::InvalidArgument(format!(
                "need the same positive number of masks, base weights and truths; got {}, {}, {}",
                p,
                w.len(),
                truth.len()
            )));
        }
        let c = w[0].cols();
        for (i, m) in masks.iter().enumerate() {
            if m.len() != n {
                return Err(shape_err(
                    "mask",
                    format!("length {n}"),
                    format!("mask {i} of length {}", m.len()),
                ));
            }
        }
        for (i, wi) in w.iter().enumerate() {
            if wi.shape() != (d, c) {
                return Err(shape_err(
                    "base weight",
                    format!("{d}x{c}"),
                    format!("W_{i} {}", wi.shape_str()),
                ));
            }
        }
        for (i, t) in truth.iter().enumerate() {
            if t.l.shape() != (d, r) || t.r.shape() != (c, r) || t.sigma.len() != r {
                return Err(shape_err(
                    "truth factor",
                    format!("{d}x{r} and {c}x{r}"),
                    format!("term {i}: {} and {}", t.l.shape_str(), t.r.shape_str()),
                ));
            }
        }
        let mut problem = Self {
            seed: None,
            dims: MultiTermDims { n, d, c },
            r,
            design: None,
            masks,
            x,
            w,
            y: Mat::zeros(n, c),
            truth,
        };
        problem.y = problem.regenerate_response();
        Ok(problem)
    }

    pub fn term_count(&self) -> usize {
        self.masks.len()
    }

    /// `Σ_i D_i·X·(W_i + L★_i·R★_iᵀ)` recomputed from the stored parts.
    pub fn regenerate_response(&self) -> Mat {
        let mut y = Mat::zeros(self.dims.n, self.dims.c);
        for i in 0..self.term_count() {
            let ci = self.masks[i].apply(&self.x);
            y = y.add(&ci.matmul(&self.w[i].add(&self.truth[i].product())));
        }
        y
    }

    pub fn operator(&self) -> MultiTermOperator {
        let c: Vec<Mat> = self.masks.iter().map(|m| m.apply(&self.x)).collect();
        let mut y_prime = self.y.clone();
        for (ci, wi) in c.iter().zip(&self.w) {
            y_prime = y_prime.sub(&ci.matmul(wi));
        }
        MultiTermOperator { c, y_prime }
    }

    pub fn truth_pairs(&self, delta: f64) -> Result<Vec<FactorPair>> {
        self.truth.iter().map(|t| t.pair(delta)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem values always serialize")
    }

    /// Parses a problem and checks that its stored response is consistent.
    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let rebuilt = Self::from_parts(p.masks.clone(), p.x.clone(), p.w.clone(), p.truth.clone(), p.r)?;
        let scale = p.y.max_abs().max(1.0);
        if rebuilt.y.sub(&p.y).max_abs() > 1e-9 * scale {
            return Err(Error::Format(
                "stored response Y does not match the stored parts".into(),
            ));
        }
        Ok(p)
    }
}

impl MultiTermOperator {
    pub fn term_count(&self) -> usize {
        self.c.len()
    }

    pub fn loss_grad(&self, pairs: &[FactorPair]) -> Result<(f64, Vec<FactorGrad>)> {
        if pairs.len() != self.c.len() {
            return Err(shape_err(
                "multiterm_loss_grad",
                format!("{} pairs", self.c.len()),
                format!("{} pairs", pairs.len()),
            ));
        }
        let (n, c) = self.y_prime.shape();
        let mut resid = self.y_prime.scale(-1.0);
        for (i, (ci, pair)) in self.c.iter().zip(pairs).enumerate() {
            if pair.dims() != (ci.cols(), c) {
                return Err(shape_err(
                    "multiterm_loss_grad",
                    format!("pair {i} of dims {}x{c}", ci.cols()),
                    format!("{}x{}", pair.dims().0, pair.dims().1),
                ));
            }
            resid = resid.add(&ci.matmul(pair.l()).matmul_t(pair.r()));
        }
        debug_assert_eq!(resid.shape(), (n, c));
        let grads = self
            .c
            .iter()
            .zip(pairs)
            .map(|(ci, pair)| {
                let back = ci.t_matmul(&resid);
                FactorGrad::new(back.matmul(pair.r()), back.t_matmul(pair.l()))
            })
            .collect();
        Ok((0.5 * resid.frobenius_norm_sq(), grads))
    }

    /// Balanced best rank-`r` factors of `C_iᵀ·Y′` for every term.
    pub fn spectral_init(&self, r: usize, delta: f64) -> Result<Vec<FactorPair>> {
        self.c
            .iter()
            .map(|ci| {
                let (l, rr) = best_rank_r(&ci.t_matmul(&self.y_prime), r)?;
                FactorPair::new(l, rr, delta)
            })
            .collect()
    }
}

/// Loss `½‖Σ_i C_i·L_i·R_iᵀ − Y′‖²` and its gradients
/// `dL_i = C_iᵀ·resid·R_i`, `dR_i = residᵀ·C_i·L_i`.
pub fn multiterm_loss_grad(p: &MultiTermProblem, pairs: &[FactorPair]) -> Result<(f64, Vec<FactorGrad>)> {
    p.operator().loss_grad(pairs)
}

/// Extended spectral initialization of every term.
pub fn spectral_init(p: &MultiTermProblem, delta: f64) -> Result<Vec<FactorPair>> {
    p.operator().spectral_init(p.r, delta)
}

/// Random factor pairs of the problem's shapes, entries `N(0, std²)`.
pub fn random_pairs<R: Rng + ?Sized>(
    p: &MultiTermProblem,
    std: f64,
    delta: f64,
    rng: &mut R,
) -> Result<Vec<FactorPair>> {
    (0..p.term_count())
        .map(|_| {
            FactorPair::new(
                Mat::gaussian(p.dims.d, p.r, std, rng),
                Mat::gaussian(p.dims.c, p.r, std, rng),
                delta,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd;
    use crate::problems::{finite_difference_grad, grad_rel_error};
    use proptest::prelude::*;

    fn dims() -> MultiTermDims {
        MultiTermDims { n: 30, d: 5, c: 4 }
    }

    fn loss_of(op: &MultiTermOperator, pairs: &[FactorPair]) -> f64 {
        op.loss_grad(pairs).unwrap().0
    }

    #[test]
    fn kappa_one_gives_flat_spectrum() {
        let p = build_multiterm(dims(), 3, 2, 1.0, 1).unwrap();
        for t in &p.truth {
            assert_eq!(t.sigma, vec![1.0; 3]);
        }
    }

    #[test]
    fn spectrum_is_geometric_with_condition_kappa() {
        let p = build_multiterm(dims(), 3, 2, 100.0, 2).unwrap();
        let s = svd(&p.truth[0].product()).unwrap().s;
        assert!((s[0] / s[2] - 100.0).abs() < 1e-8);
        assert!((s[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_term_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Mat::gaussian(10, 4, 1.0, &mut rng);
        let w = Mat::gaussian(4, 3, 1.0, &mut rng);
        let t = TruthTerm::from_svd(
            &random_orthonormal(4, 2, &mut rng).unwrap(),
            &[2.0, 1.0],
            &random_orthonormal(3, 2, &mut rng).unwrap(),
        );
        let p =
            MultiTermProblem::from_parts(vec![Mask::full(10)], x.clone(), vec![w.clone()], vec![t.clone()], 2).unwrap();
        let resid = p.y.sub(&x.matmul(&w));
        assert!(resid.sub(&x.matmul(&t.product())).max_abs() < 1e-12);
    }

    #[test]
    fn stored_truth_regenerates_response() {
        for design in [Design::Gaussian, Design::Orthogonal { tiny: 0.01 }] {
            let spec = MultiTermSpec {
                dims: dims(),
                r: 2,
                p: 3,
                kappa: 10.0,
                sigma_max: 1.0,
                design,
            };
            let p = spec.build(4).unwrap();
            assert!(p.regenerate_response().sub(&p.y).max_abs() <= 1e-12);
        }
    }

    #[test]
    fn truth_is_a_stationary_point() {
        let p = build_multiterm(dims(), 2, 3, 5.0, 5).unwrap();
        let (loss, grads) = multiterm_loss_grad(&p, &p.truth_pairs(0.0).unwrap()).unwrap();
        assert!(loss < 1e-24, "{loss}");
        assert!(grads.iter().all(|g| g.norm() < 1e-11));
    }

    #[test]
    fn single_full_mask_reduces_to_masked_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Mat::gaussian(8, 4, 1.0, &mut rng);
        let t = TruthTerm::from_svd(
            &random_orthonormal(4, 1, &mut rng).unwrap(),
            &[1.0],
            &random_orthonormal(3, 1, &mut rng).unwrap(),
        );
        let p =
            MultiTermProblem::from_parts(vec![Mask::full(8)], x.clone(), vec![Mat::zeros(4, 3)], vec![t], 1).unwrap();
        let pair = FactorPair::new(
            Mat::gaussian(4, 1, 1.0, &mut rng),
            Mat::gaussian(3, 1, 1.0, &mut rng),
            0.0,
        )
        .unwrap();
        let (_, grads) = multiterm_loss_grad(&p, std::slice::from_ref(&pair)).unwrap();
        let resid = x.matmul(&pair.product()).sub(&p.y);
        let dl = x.t_matmul(&resid).matmul(pair.r());
        let dr = resid.t_matmul(&x).matmul(pair.l());
        assert!(grads[0].dl.sub(&dl).max_abs() < 1e-12);
        assert!(grads[0].dr.sub(&dr).max_abs() < 1e-12);
    }

    #[test]
    fn isometric_single_term_init_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_orthonormal(12, 5, &mut rng).unwrap();
        let t = TruthTerm::from_svd(
            &random_orthonormal(5, 2, &mut rng).unwrap(),
            &[3.0, 1.0],
            &random_orthonormal(4, 2, &mut rng).unwrap(),
        );
        let w = Mat::gaussian(5, 4, 1.0, &mut rng);
        let p = MultiTermProblem::from_parts(vec![Mask::full(12)], x, vec![w], vec![t.clone()], 2).unwrap();
        let init = spectral_init(&p, 0.0).unwrap();
        assert!(init[0].product().sub(&t.product()).max_abs() < 1e-12);
    }

    #[test]
    fn zero_response_gives_zero_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Mat::gaussian(6, 3, 1.0, &mut rng);
        let t = TruthTerm {
            l: Mat::zeros(3, 1),
            r: Mat::zeros(2, 1),
            sigma: vec![0.0],
        };
        let p = MultiTermProblem::from_parts(vec![Mask::full(6)], x, vec![Mat::zeros(3, 2)], vec![t], 1).unwrap();
        let init = spectral_init(&p, 1e-6).unwrap();
        assert_eq!(init[0].product().max_abs(), 0.0);
    }

    #[test]
    fn orthogonal_design_has_disjoint_near_isometric_terms() {
        let spec = MultiTermSpec {
            dims: MultiTermDims { n: 60, d: 6, c: 5 },
            r: 2,
            p: 3,
            kappa: 10.0,
            sigma_max: 1.0,
            design: Design::Orthogonal { tiny: 0.01 },
        };
        let p = spec.build(9).unwrap();
        let op = p.operator();
        for i in 0..3 {
            for j in 0..3 {
                let g = op.c[i].t_matmul(&op.c[j]);
                if i == j {
                    assert!(g.sub(&Mat::identity(6)).max_abs() < 0.05);
                } else {
                    assert_eq!(g.max_abs(), 0.0);
                }
            }
        }
    }

    #[test]
    fn orthogonal_design_rejects_small_n() {
        let spec = MultiTermSpec {
            dims: MultiTermDims { n: 10, d: 6, c: 5 },
            r: 2,
            p: 3,
            kappa: 1.0,
            sigma_max: 1.0,
            design: Design::Orthogonal { tiny: 0.01 },
        };
        assert!(spec.build(0).is_err());
    }

    #[test]
    fn impossible_mask_count_is_reported() {
        // One feature gives only two patterns.
        let err = build_multiterm(MultiTermDims { n: 5, d: 1, c: 1 }, 1, 3, 1.0, 0).unwrap_err();
        assert!(matches!(
            err,
            Error::MaskSearch {
                wanted: 3,
                found: 2,
                ..
            }
        ));
    }

    #[test]
    fn json_round_trip() {
        let p = build_multiterm(dims(), 2, 2, 3.0, 10).unwrap();
        let back = MultiTermProblem::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        let mut broken = p.clone();
        broken.y[(0, 0)] += 1.0;
        assert!(MultiTermProblem::from_json(&broken.to_json()).is_err());
        assert!(MultiTermProblem::from_json("{").is_err());
    }

    #[test]
    fn wrong_pair_count_is_an_error() {
        let p = build_multiterm(dims(), 2, 2, 3.0, 11).unwrap();
        let pairs = p.truth_pairs(0.0).unwrap();
        assert!(multiterm_loss_grad(&p, &pairs[..1]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn gradient_matches_finite_differences(seed in any::<u64>()) {
            let p = build_multiterm(MultiTermDims { n: 12, d: 4, c: 3 }, 2, 2, 4.0, seed).unwrap();
            let op = p.operator();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
            let pairs = random_pairs(&p, 1.0, 0.0, &mut rng).unwrap();
            let (_, grads) = op.loss_grad(&pairs).unwrap();
            for i in 0..pairs.len() {
                let fd = finite_difference_grad(&pairs[i], 1e-5, |q| {
                    let mut moved = pairs.clone();
                    moved[i] = q.clone();
                    loss_of(&op, &moved)
                });
                prop_assert!(grad_rel_error(&grads[i], &fd) < 1e-4);
            }
        }
    }
}
