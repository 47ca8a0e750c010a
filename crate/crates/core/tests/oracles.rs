mod common;

use nalgebra::Vector2;
use proptest::prelude::*;

use common::*;
use vfoa_skf::dynamics::{predictive_obs_likelihood, Mat8, Vec8};
use vfoa_skf::learning::{rts_smooth, LinearGaussianModel};
use vfoa_skf::tracker::moment_match;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn smoother_matches_dense_conditioning(seed in any::<u64>(), t_len in 1usize..=5) {
        let model = random_model(&mut rng(seed), t_len);
        let out = rts_smooth(&model).unwrap();
        let dense = dense_smoother(&model);
        for t in 0..t_len {
            prop_assert!(rel_err(out.internals.smoothed_means[t].iter(), dense.means[t].iter()) < 1e-8);
            prop_assert!(rel_err(out.internals.smoothed_covs[t].iter(), dense.covs[t].iter()) < 1e-6);
            let second: Mat8 = dense.covs[t] + dense.means[t] * dense.means[t].transpose();
            prop_assert!(rel_err(out.moments.second[t].iter(), second.iter()) < 1e-6);
        }
        prop_assert!((out.loglik - dense.loglik).abs() < 1e-8 * dense.loglik.abs().max(1.0));
    }

    #[test]
    fn predictive_likelihood_is_one_step_evidence(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_params(&mut r);
        let (a, b) = random_system(&mut r, &p.beta);
        let mu = normal_vec::<8>(&mut r) * 5.0;
        let cov = random_spd::<8>(&mut r, 2.0, 0.2);
        let c = p.emission();
        let gamma = p.gamma_l();
        let h = c * (a * mu + b) + Vector2::new(normal(&mut r), normal(&mut r)) * 4.0;
        let closed = predictive_obs_likelihood(&mu, &cov, &a, &b, &c, &gamma, &p.sigma_h, &h).unwrap();
        // evidence of a single observation under the propagated prior
        let model = LinearGaussianModel {
            prior_mean: a * mu + b,
            prior_cov: a * cov * a.transpose() + gamma,
            c,
            gamma,
            sigma_h: p.sigma_h,
            systems: vec![],
            obs: vec![h],
        };
        let dense = dense_smoother(&model).loglik.exp();
        prop_assert!((closed - dense).abs() <= 1e-10 * dense.max(1e-300));
    }

    #[test]
    fn moment_match_composes(seed in any::<u64>(), k in 2usize..6) {
        let mut r = rng(seed);
        let mut w: Vec<f64> = (0..k).map(|_| rand::Rng::random_range(&mut r, 0.05..1.0)).collect();
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= z);
        let means: Vec<Vec8> = (0..k).map(|_| normal_vec::<8>(&mut r) * 3.0).collect();
        let covs: Vec<Mat8> = (0..k).map(|_| random_spd::<8>(&mut r, 1.0, 0.1)).collect();
        let (mu, cov) = moment_match(&w, &means, &covs);

        // collapsing the first two components first gives the same result
        let w01 = w[0] + w[1];
        let (m01, c01) = moment_match(&[w[0] / w01, w[1] / w01], &means[..2], &covs[..2]);
        let mut w2 = vec![w01];
        w2.extend_from_slice(&w[2..]);
        let mut means2 = vec![m01];
        means2.extend_from_slice(&means[2..]);
        let mut covs2 = vec![c01];
        covs2.extend_from_slice(&covs[2..]);
        let (mu2, cov2) = moment_match(&w2, &means2, &covs2);
        prop_assert!(rel_err(mu.iter(), mu2.iter()) < 1e-10);
        prop_assert!(rel_err(cov.iter(), cov2.iter()) < 1e-10);

        // the collapse is never tighter than the weighted component covariance
        let inner = covs.iter().zip(&w).fold(Mat8::zeros(), |a, (c, x)| a + c * *x);
        let gap = (cov - inner).symmetric_eigenvalues().min();
        prop_assert!(gap > -1e-9);
    }
}

#[test]
fn one_hot_mixture_is_identity() {
    let mut r = rng(3);
    let means: Vec<Vec8> = (0..3).map(|_| normal_vec::<8>(&mut r)).collect();
    let covs: Vec<Mat8> = (0..3).map(|_| random_spd::<8>(&mut r, 1.0, 0.1)).collect();
    let (mu, cov) = moment_match(&[0.0, 1.0, 0.0], &means, &covs);
    assert!(rel_err(mu.iter(), means[1].iter()) < 1e-15);
    assert!(rel_err(cov.iter(), covs[1].iter()) < 1e-15);
}
