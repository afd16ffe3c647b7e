//! Analytic gradients against central differences, and the preconditioned
//! step against an explicitly formed reference.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scaled_lora::factorized::{precondition, FactorGrad, FactorPair};
use scaled_lora::linalg::{inverse, Mat};
use scaled_lora::problems::decomposition::DecompositionProblem;
use scaled_lora::problems::multiterm::{random_pairs, Design, MultiTermDims, MultiTermSpec};
use scaled_lora::problems::{finite_difference_grad, grad_rel_error};

fn pair(m: usize, n: usize, r: usize, delta: f64, seed: u64) -> FactorPair {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    FactorPair::new(
        Mat::gaussian(m, r, 1.0, &mut g),
        Mat::gaussian(n, r, 1.0, &mut g),
        delta,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decomposition_gradient(m in 2usize..8, n in 2usize..8, r in 1usize..3, seed in any::<u64>()) {
        let mut g = ChaCha8Rng::seed_from_u64(seed);
        let prob = DecompositionProblem::new(Mat::gaussian(m, n, 1.0, &mut g), r).unwrap();
        let p = pair(m, n, r, 0.0, seed ^ 7);
        let (_, grad) = prob.loss_grad(&p).unwrap();
        let fd = finite_difference_grad(&p, 1e-5, |q| prob.loss(q));
        prop_assert!(grad_rel_error(&grad, &fd) < 1e-6);
    }

    #[test]
    fn gaussian_multiterm_gradient(seed in 0u64..1000) {
        let spec = MultiTermSpec {
            dims: MultiTermDims { n: 30, d: 3, c: 2 },
            r: 1,
            p: 2,
            kappa: 1.0,
            sigma_max: 1.0,
            design: Design::Gaussian,
        };
        let p = spec.build(seed).unwrap();
        let op = p.operator();
        let pairs = random_pairs(&p, 1.0, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (_, grads) = op.loss_grad(&pairs).unwrap();
        for i in 0..pairs.len() {
            let fd = finite_difference_grad(&pairs[i], 1e-5, |q| {
                let mut t = pairs.clone();
                t[i] = q.clone();
                op.loss_grad(&t).unwrap().0
            });
            prop_assert!(grad_rel_error(&grads[i], &fd) < 1e-6);
        }
    }

    #[test]
    fn preconditioner_matches_explicit_inverse(seed in any::<u64>(), delta in 0.0f64..1.0) {
        let p = pair(7, 5, 3, delta, seed);
        let mut g = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let grad = FactorGrad::new(Mat::gaussian(7, 3, 1.0, &mut g), Mat::gaussian(5, 3, 1.0, &mut g));
        let got = precondition(&p, &grad).unwrap();
        let want_l = grad.dl.matmul(&inverse(&p.r().gram().add_diag(delta)).unwrap());
        let want_r = grad.dr.matmul(&inverse(&p.l().gram().add_diag(delta)).unwrap());
        prop_assert!(got.dl.rel_diff(&want_l) < 1e-9);
        prop_assert!(got.dr.rel_diff(&want_r) < 1e-9);
    }
}
