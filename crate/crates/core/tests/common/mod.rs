//! Shared generators and brute-force oracles for the integration and
//! acceptance suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2, SMatrix, SVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vfoa_skf::dynamics::{emission_matrix, transition_matrices, Mat8, Vec8};
use vfoa_skf::learning::LinearGaussianModel;
use vfoa_skf::ModelParams;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec<const D: usize>(rng: &mut ChaCha8Rng) -> SVector<f64, D> {
    SVector::<f64, D>::from_fn(|_, _| normal(rng))
}

/// `M Mᵀ / D + floor·I` with standard normal `M`, scaled.
pub fn random_spd<const D: usize>(
    rng: &mut ChaCha8Rng,
    scale: f64,
    floor: f64,
) -> SMatrix<f64, D, D> {
    let m = SMatrix::<f64, D, D>::from_fn(|_, _| normal(rng));
    (m * m.transpose() / D as f64 + SMatrix::<f64, D, D>::identity() * floor) * scale
}

pub fn random_spd2(rng: &mut ChaCha8Rng, scale: f64) -> Matrix2<f64> {
    random_spd::<2>(rng, scale, 0.2)
}

pub fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    ModelParams {
        alpha: Vector2::new(rng.random_range(0.2..0.9), rng.random_range(0.2..0.9)),
        beta: Vector2::new(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)),
        gamma_g: random_spd2(rng, 3.0),
        gamma_g_dot: random_spd2(rng, 0.5),
        gamma_r: random_spd2(rng, 1.0),
        gamma_r_dot: random_spd2(rng, 0.2),
        sigma_h: random_spd2(rng, 8.0),
    }
}

/// Random `(A, b)` of the tracking dynamics: label 0 or a target within
/// 40° of the origin.
pub fn random_system(rng: &mut ChaCha8Rng, beta: &Vector2<f64>) -> (Mat8, Vec8) {
    if rng.random_bool(0.25) {
        transition_matrices(beta, None, 1.0)
    } else {
        let x = Vector2::new(rng.random_range(-40.0..40.0), rng.random_range(-20.0..20.0));
        transition_matrices(beta, Some(&x), 1.0)
    }
}

/// Model with arbitrary SPD prior and process noise, tracking-style
/// transitions, and observations sampled from the model itself.
pub fn random_model(rng: &mut ChaCha8Rng, t_len: usize) -> LinearGaussianModel {
    let p = random_params(rng);
    let prior_mean = normal_vec::<8>(rng) * 5.0;
    let prior_cov = random_spd::<8>(rng, 4.0, 0.3);
    let gamma = random_spd::<8>(rng, 1.0, 0.2);
    let c = emission_matrix(&p.alpha);
    let systems: Vec<(Mat8, Vec8)> = (1..t_len).map(|_| random_system(rng, &p.beta)).collect();
    let lp = prior_cov.cholesky().unwrap().l();
    let lg = gamma.cholesky().unwrap().l();
    let lh = p.sigma_h.cholesky().unwrap().l();
    let mut x = prior_mean + lp * normal_vec::<8>(rng);
    let mut obs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        if t > 0 {
            let (a, b) = &systems[t - 1];
            x = a * x + b + lg * normal_vec::<8>(rng);
        }
        obs.push(c * x + lh * normal_vec::<2>(rng));
    }
    LinearGaussianModel {
        prior_mean,
        prior_cov,
        c,
        gamma,
        sigma_h: p.sigma_h,
        systems,
        obs,
    }
}

pub struct DenseSmoother {
    pub means: Vec<Vec8>,
    pub covs: Vec<Mat8>,
    /// `Cov(L_t, L_{t-1})`, entry 0 unused.
    pub cross_covs: Vec<Mat8>,
    pub loglik: f64,
}

/// Posterior of all states given all observations, by building the joint
/// Gaussian of `(L_1..L_T, H_1..H_T)` and conditioning.
pub fn dense_smoother(m: &LinearGaussianModel) -> DenseSmoother {
    let t_len = m.obs.len();
    let (ns, no) = (8 * t_len, 2 * t_len);
    let mut mean = DVector::<f64>::zeros(ns);
    let mut cov = DMatrix::<f64>::zeros(ns, ns);
    mean.rows_mut(0, 8).copy_from(&m.prior_mean);
    cov.view_mut((0, 0), (8, 8)).copy_from(&m.prior_cov);
    for t in 1..t_len {
        let (a, b) = &m.systems[t - 1];
        let prev: Vec8 = mean.fixed_rows::<8>(8 * (t - 1)).into();
        mean.fixed_rows_mut::<8>(8 * t).copy_from(&(a * prev + b));
        for s in 0..t {
            let blk: Mat8 = cov.fixed_view::<8, 8>(8 * (t - 1), 8 * s).into();
            let v = a * blk;
            cov.fixed_view_mut::<8, 8>(8 * t, 8 * s).copy_from(&v);
            cov.fixed_view_mut::<8, 8>(8 * s, 8 * t)
                .copy_from(&v.transpose());
        }
        let pp: Mat8 = cov.fixed_view::<8, 8>(8 * (t - 1), 8 * (t - 1)).into();
        let v = a * pp * a.transpose() + m.gamma;
        cov.fixed_view_mut::<8, 8>(8 * t, 8 * t).copy_from(&v);
    }
    let mut cb = DMatrix::<f64>::zeros(no, ns);
    let mut r = DMatrix::<f64>::zeros(no, no);
    let mut h = DVector::<f64>::zeros(no);
    for t in 0..t_len {
        cb.view_mut((2 * t, 8 * t), (2, 8)).copy_from(&m.c);
        r.view_mut((2 * t, 2 * t), (2, 2)).copy_from(&m.sigma_h);
        h.rows_mut(2 * t, 2).copy_from(&m.obs[t]);
    }
    let mh = &cb * &mean;
    let s_lh = &cov * cb.transpose();
    let s_hh = &cb * &s_lh + r;
    let chol = s_hh.clone().cholesky().expect("observation covariance SPD");
    let resid = &h - &mh;
    let post_mean = &mean + &s_lh * chol.solve(&resid);
    let post_cov = &cov - &s_lh * chol.solve(&s_lh.transpose());
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let loglik = -0.5
        * (no as f64 * (2.0 * std::f64::consts::PI).ln()
            + log_det
            + resid.dot(&chol.solve(&resid)));
    DenseSmoother {
        means: (0..t_len)
            .map(|t| post_mean.fixed_rows::<8>(8 * t).into())
            .collect(),
        covs: (0..t_len)
            .map(|t| post_cov.fixed_view::<8, 8>(8 * t, 8 * t).into())
            .collect(),
        cross_covs: (0..t_len)
            .map(|t| {
                if t == 0 {
                    Mat8::zeros()
                } else {
                    post_cov.fixed_view::<8, 8>(8 * t, 8 * (t - 1)).into()
                }
            })
            .collect(),
        loglik,
    }
}

/// Largest `|a - b| / max(1, |b|)` over matching entries.
pub fn rel_err<'a>(
    a: impl IntoIterator<Item = &'a f64>,
    b: impl IntoIterator<Item = &'a f64>,
) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Bivariate normal density, written out.
pub fn normal2_pdf(x: &Vector2<f64>, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> f64 {
    let d = x - mean;
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    let q = (cov[(1, 1)] * d[0] * d[0] - (cov[(0, 1)] + cov[(1, 0)]) * d[0] * d[1]
        + cov[(0, 0)] * d[1] * d[1])
        / det;
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}
