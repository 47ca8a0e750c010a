//! EM estimation of the Gaussian model parameters from VFOA-annotated
//! recordings.
//!
//! With the VFOA annotated, every tracked person's sequence is a
//! time-varying linear-Gaussian model, so the E-step is an exact
//! Rauch-Tung-Striebel smoother. The M-step works on summed second moments
//! of two augmented vectors:
//!
//! * `Z = [L_t; L_{t-1}; X_t; 1]` (19 entries) for the state transition,
//!   accumulated separately for frames whose VFOA is a target and frames
//!   whose VFOA is 0;
//! * `Y = [L_t; H_t; 1]` (11 entries) for the emission.
//!
//! Every residual used by the M-step is linear in one of them, so its
//! expected outer product is `M S Mᵀ` for the summed moment `S`.

use log::warn;
use nalgebra::{Cholesky, Matrix2, SMatrix, SVector, Vector2};
use rayon::prelude::*;

use crate::dynamics::{
    emission_matrix, floor_eigen, logpdf_residual, make_spd, target_direction, transition_matrices,
    Mat28, Mat8, ModelParams, Vec8, EIGEN_FLOOR, G, G_DOT, R, R_DOT,
};
use crate::error::{Error, Result};
use crate::geometry::wrapped_residual;
use crate::scene::{Recording, TargetId, NO_TARGET};

pub const PRIOR_VARIANCE: f64 = 100.0;
pub const MIXING_MIN: f64 = 1e-3;
pub const MIXING_MAX: f64 = 1.0 - 1e-3;

type Mat19 = SMatrix<f64, 19, 19>;
type Vec19 = SVector<f64, 19>;
type Mat11 = SMatrix<f64, 11, 11>;
type Vec11 = SVector<f64, 11>;

/// A linear-Gaussian state-space model
/// `L_1 ~ N(prior)`, `L_t = A_t L_{t-1} + b_t + w`, `H_t = C L_t + v`.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    pub prior_mean: Vec8,
    pub prior_cov: Mat8,
    pub c: Mat28,
    pub gamma: Mat8,
    pub sigma_h: Matrix2<f64>,
    /// `systems[t]` maps frame `t` to frame `t + 1` (zero-based).
    pub systems: Vec<(Mat8, Vec8)>,
    pub obs: Vec<Vector2<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct SmootherInternals {
    pub filtered_means: Vec<Vec8>,
    pub filtered_covs: Vec<Mat8>,
    /// `P_{t|t-1}`; the prior covariance at `t = 0`.
    pub predicted_covs: Vec<Mat8>,
    pub gains: Vec<SMatrix<f64, 8, 2>>,
    /// `J_t` for `t < T - 1`.
    pub smoother_gains: Vec<Mat8>,
    pub smoothed_means: Vec<Vec8>,
    pub smoothed_covs: Vec<Mat8>,
}

#[derive(Debug, Clone, Default)]
pub struct SmoothedMoments {
    /// `E[L_t]`.
    pub mean: Vec<Vec8>,
    /// `E[L_t L_tᵀ]`.
    pub second: Vec<Mat8>,
    /// `E[L_t L_{t-1}ᵀ]`; entry 0 is unused (zero).
    pub cross: Vec<Mat8>,
}

#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub moments: SmoothedMoments,
    pub internals: SmootherInternals,
    /// Observed-data log-likelihood from the prediction errors.
    pub loglik: f64,
}

fn spd_solve(m: &Mat8, what: &str) -> Result<Cholesky<f64, nalgebra::Const<8>>> {
    Cholesky::new((m + m.transpose()) * 0.5).ok_or_else(|| Error::Singular(what.into()))
}

/// Forward Kalman pass then backward RTS pass.
pub fn rts_smooth(model: &LinearGaussianModel) -> Result<SmootherOutput> {
    let t_len = model.obs.len();
    if t_len == 0 {
        return Err(Error::InvalidParams("empty sequence".into()));
    }
    if model.systems.len() + 1 != t_len {
        return Err(Error::InvalidParams(format!(
            "{} observations need {} transition systems, got {}",
            t_len,
            t_len - 1,
            model.systems.len()
        )));
    }
    let c = &model.c;
    let mut it = SmootherInternals::default();
    let mut loglik = 0.0;
    let mut m_pred = model.prior_mean;
    let mut p_pred = model.prior_cov;
    for t in 0..t_len {
        if t > 0 {
            let (a, b) = &model.systems[t - 1];
            m_pred = a * it.filtered_means[t - 1] + b;
            p_pred = make_spd(&(a * it.filtered_covs[t - 1] * a.transpose() + model.gamma));
        }
        let pct = p_pred * c.transpose();
        let s = c * pct + model.sigma_h;
        let s = (s + s.transpose()) * 0.5;
        let innov = model.obs[t] - c * m_pred;
        loglik += logpdf_residual(&innov, &s)?;
        let chol = Cholesky::new(s)
            .ok_or_else(|| Error::Singular(format!("innovation covariance at frame {}", t + 1)))?;
        let k = chol.solve(&pct.transpose()).transpose();
        let ikc = Mat8::identity() - k * c;
        it.filtered_means.push(m_pred + k * innov);
        it.filtered_covs.push(make_spd(
            &(ikc * p_pred * ikc.transpose() + k * model.sigma_h * k.transpose()),
        ));
        it.predicted_covs.push(p_pred);
        it.gains.push(k);
    }

    it.smoothed_means = it.filtered_means.clone();
    it.smoothed_covs = it.filtered_covs.clone();
    it.smoother_gains = vec![Mat8::zeros(); t_len - 1];
    for t in (0..t_len - 1).rev() {
        let (a, b) = &model.systems[t];
        let p_next = &it.predicted_covs[t + 1];
        let chol = spd_solve(p_next, &format!("predicted covariance at frame {}", t + 2))?;
        // J = P_t Aᵀ P_{t+1|t}⁻¹
        let j = chol.solve(&(a * it.filtered_covs[t])).transpose();
        let m_next_pred = a * it.filtered_means[t] + b;
        it.smoothed_means[t] = it.filtered_means[t] + j * (it.smoothed_means[t + 1] - m_next_pred);
        it.smoothed_covs[t] = make_spd(
            &(it.filtered_covs[t] + j * (it.smoothed_covs[t + 1] - p_next) * j.transpose()),
        );
        it.smoother_gains[t] = j;
    }

    let mut mo = SmoothedMoments::default();
    for t in 0..t_len {
        let m = it.smoothed_means[t];
        mo.mean.push(m);
        mo.second.push(it.smoothed_covs[t] + m * m.transpose());
        mo.cross.push(if t == 0 {
            Mat8::zeros()
        } else {
            it.smoothed_covs[t] * it.smoother_gains[t - 1].transpose()
                + m * it.smoothed_means[t - 1].transpose()
        });
    }
    Ok(SmootherOutput {
        moments: mo,
        internals: it,
        loglik,
    })
}

/// Observations and annotated target directions of one tracked person.
#[derive(Debug, Clone)]
pub struct PersonSequence {
    pub person: TargetId,
    /// Unwrapped head orientation per frame.
    pub obs: Vec<Vector2<f64>>,
    /// Direction of the annotated VFOA target per frame, pan next to the
    /// unwrapped head pan; `None` for label 0.
    pub targets: Vec<Option<Vector2<f64>>>,
}

pub fn person_sequence(rec: &Recording, person: TargetId) -> Result<PersonSequence> {
    let labels = rec.full_annotations(person)?;
    let mut obs: Vec<Vector2<f64>> = Vec::with_capacity(rec.len());
    let mut targets = Vec::with_capacity(rec.len());
    for (f, &j) in rec.frames.iter().zip(&labels) {
        let h_raw = f.head(person)?.to_vector();
        let h = match obs.last() {
            Some(prev) => prev + wrapped_residual(&h_raw, prev),
            None => h_raw,
        };
        obs.push(h);
        targets.push(if j == NO_TARGET {
            None
        } else {
            Some(target_direction(&f.positions()?, person, j, h[0])?)
        });
    }
    Ok(PersonSequence {
        person,
        obs,
        targets,
    })
}

/// Sequences of every tracked person of every recording.
pub fn sequences(data: &[Recording]) -> Result<Vec<PersonSequence>> {
    let mut out = Vec::new();
    for rec in data {
        rec.check()?;
        for &i in rec.scene.tracked() {
            out.push(person_sequence(rec, i)?);
        }
    }
    Ok(out)
}

pub fn prior_for(h1: &Vector2<f64>) -> (Vec8, Mat8) {
    let mut m = Vec8::zeros();
    m.fixed_rows_mut::<2>(G).copy_from(h1);
    m.fixed_rows_mut::<2>(R).copy_from(h1);
    (m, Mat8::identity() * PRIOR_VARIANCE)
}

pub fn model_for(seq: &PersonSequence, params: &ModelParams, dt: f64) -> LinearGaussianModel {
    let (prior_mean, prior_cov) = prior_for(&seq.obs[0]);
    LinearGaussianModel {
        prior_mean,
        prior_cov,
        c: params.emission(),
        gamma: params.gamma_l(),
        sigma_h: params.sigma_h,
        systems: seq.targets[1..]
            .iter()
            .map(|x| transition_matrices(&params.beta, x.as_ref(), dt))
            .collect(),
        obs: seq.obs.clone(),
    }
}

/// Smoother for one tracked person of a recording, dynamics fixed by the
/// annotations.
pub fn kalman_smoother(
    rec: &Recording,
    person: TargetId,
    params: &ModelParams,
) -> Result<SmootherOutput> {
    rts_smooth(&model_for(&person_sequence(rec, person)?, params, 1.0))
}

/// Summed moments feeding the M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// Transitions into a frame whose VFOA is a target.
    pub s_target: Mat19,
    pub n_target: usize,
    /// Transitions into a frame whose VFOA is 0 (`X_t` entries are zero).
    pub s_free: Mat19,
    pub n_free: usize,
    pub s_emit: Mat11,
    pub n_emit: usize,
    pub loglik: f64,
}

impl Default for SufficientStats {
    fn default() -> Self {
        Self {
            s_target: Mat19::zeros(),
            n_target: 0,
            s_free: Mat19::zeros(),
            n_free: 0,
            s_emit: Mat11::zeros(),
            n_emit: 0,
            loglik: 0.0,
        }
    }
}

impl SufficientStats {
    pub fn merge(mut self, o: SufficientStats) -> Self {
        self.s_target += o.s_target;
        self.n_target += o.n_target;
        self.s_free += o.s_free;
        self.n_free += o.n_free;
        self.s_emit += o.s_emit;
        self.n_emit += o.n_emit;
        self.loglik += o.loglik;
        self
    }

    pub fn from_moments(mo: &SmoothedMoments, seq: &PersonSequence, loglik: f64) -> Self {
        let mut st = SufficientStats {
            loglik,
            ..Default::default()
        };
        for t in 0..mo.mean.len() {
            let m = &mo.mean[t];
            let h = &seq.obs[t];
            let mut y = Vec11::zeros();
            y.fixed_rows_mut::<8>(0).copy_from(m);
            y.fixed_rows_mut::<2>(8).copy_from(h);
            y[10] = 1.0;
            let mut s = y * y.transpose();
            s.fixed_view_mut::<8, 8>(0, 0).copy_from(&mo.second[t]);
            st.s_emit += s;
            st.n_emit += 1;
            if t == 0 {
                continue;
            }
            let x = seq.targets[t].unwrap_or_else(Vector2::zeros);
            let mut z = Vec19::zeros();
            z.fixed_rows_mut::<8>(0).copy_from(m);
            z.fixed_rows_mut::<8>(8).copy_from(&mo.mean[t - 1]);
            z.fixed_rows_mut::<2>(16).copy_from(&x);
            z[18] = 1.0;
            let mut s = z * z.transpose();
            s.fixed_view_mut::<8, 8>(0, 0).copy_from(&mo.second[t]);
            s.fixed_view_mut::<8, 8>(8, 8).copy_from(&mo.second[t - 1]);
            s.fixed_view_mut::<8, 8>(0, 8).copy_from(&mo.cross[t]);
            s.fixed_view_mut::<8, 8>(8, 0)
                .copy_from(&mo.cross[t].transpose());
            if seq.targets[t].is_some() {
                st.s_target += s;
                st.n_target += 1;
            } else {
                st.s_free += s;
                st.n_free += 1;
            }
        }
        st
    }
}

/// `L_t - A L_{t-1} - b` as a map on `Z`.
fn transition_residual_map(beta: &Vector2<f64>, targeted: bool, dt: f64) -> SMatrix<f64, 8, 19> {
    let x = Vector2::zeros();
    let (a, _) = transition_matrices(beta, targeted.then_some(&x), dt);
    let mut m = SMatrix::<f64, 8, 19>::zeros();
    m.fixed_view_mut::<8, 8>(0, 0).copy_from(&Mat8::identity());
    m.fixed_view_mut::<8, 8>(0, 8).copy_from(&(-a));
    if targeted {
        for d in 0..2 {
            m[(G + d, 16 + d)] = -(1.0 - beta[d]);
        }
    }
    m
}

/// `H_t - C L_t` as a map on `Y`.
fn emission_residual_map(alpha: &Vector2<f64>) -> SMatrix<f64, 2, 11> {
    let mut m = SMatrix::<f64, 2, 11>::zeros();
    m.fixed_view_mut::<2, 8>(0, 0)
        .copy_from(&(-emission_matrix(alpha)));
    m.fixed_view_mut::<2, 2>(0, 8)
        .copy_from(&Matrix2::identity());
    m
}

fn mask_blocks(m: &Mat8) -> Mat8 {
    let mut out = Mat8::zeros();
    for off in [0, 2, 4, 6] {
        out.fixed_view_mut::<2, 2>(off, off)
            .copy_from(&m.fixed_view::<2, 2>(off, off));
    }
    out
}

/// Closed-form covariance updates given the current mixing matrices:
/// returns `(Γ_L, Σ_H)`. Γ_L is masked to its 2x2 diagonal blocks.
pub fn m_step_covariances(
    stats: &SufficientStats,
    params: &ModelParams,
    dt: f64,
) -> Result<(Mat8, Matrix2<f64>)> {
    let n_trans = stats.n_target + stats.n_free;
    if n_trans == 0 {
        return Err(Error::InvalidParams(
            "no transitions to estimate the process noise from".into(),
        ));
    }
    if stats.n_emit == 0 {
        return Err(Error::InvalidParams(
            "no frames to estimate the observation noise from".into(),
        ));
    }
    let rt = transition_residual_map(&params.beta, true, dt);
    let rf = transition_residual_map(&params.beta, false, dt);
    let raw = (rt * stats.s_target * rt.transpose() + rf * stats.s_free * rf.transpose())
        / n_trans as f64;
    let gamma = mask_blocks(&floor_eigen(&raw, EIGEN_FLOOR));
    let gamma = floor_blocks(&gamma);
    let e = emission_residual_map(&params.alpha);
    let sigma = floor_eigen(
        &(e * stats.s_emit * e.transpose() / stats.n_emit as f64),
        EIGEN_FLOOR,
    );
    Ok((gamma, sigma))
}

fn floor_blocks(m: &Mat8) -> Mat8 {
    let mut out = *m;
    for off in [0, 2, 4, 6] {
        let b: Matrix2<f64> = m.fixed_view::<2, 2>(off, off).into_owned();
        out.fixed_view_mut::<2, 2>(off, off)
            .copy_from(&floor_eigen(&b, EIGEN_FLOOR));
    }
    out
}

/// Minimizes `Σ E[(y - D z)ᵀ W (y - D z)]` over diagonal `D`, given
/// `S_zz = Σ E[z zᵀ]` and `S_zy = Σ E[z yᵀ]`.
fn solve_diagonal_mixing(
    s_zz: &Matrix2<f64>,
    s_zy: &Matrix2<f64>,
    w: &Matrix2<f64>,
) -> Option<Vector2<f64>> {
    let m = w.component_mul(s_zz);
    let swy = s_zy * w;
    let rhs = Vector2::new(swy[(0, 0)], swy[(1, 1)]);
    let det = m.determinant();
    if !(det.abs() > 1e-12 * m.norm_squared().max(f64::MIN_POSITIVE)) {
        return None;
    }
    m.lu().solve(&rhs)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MixingFlags {
    pub alpha_singular: bool,
    pub beta_singular: bool,
    pub alpha_clamped: bool,
    pub beta_clamped: bool,
}

fn clamp_mixing(v: Vector2<f64>) -> (Vector2<f64>, bool) {
    let c = v.map(|x| x.clamp(MIXING_MIN, MIXING_MAX));
    (c, c != v)
}

/// Solves the two 2x2 systems for α and β given the covariances.
pub fn m_step_mixing(
    stats: &SufficientStats,
    gamma_g: &Matrix2<f64>,
    sigma_h: &Matrix2<f64>,
    prev: &ModelParams,
    dt: f64,
) -> (Vector2<f64>, Vector2<f64>, MixingFlags) {
    let mut flags = MixingFlags::default();

    // β: z = G_{t-1} - X_t, y = G_t - dt Ġ_{t-1} - X_t
    let mut mz = SMatrix::<f64, 2, 19>::zeros();
    let mut my = SMatrix::<f64, 2, 19>::zeros();
    for d in 0..2 {
        mz[(d, 8 + G + d)] = 1.0;
        mz[(d, 16 + d)] = -1.0;
        my[(d, G + d)] = 1.0;
        my[(d, 8 + G_DOT + d)] = -dt;
        my[(d, 16 + d)] = -1.0;
    }
    let beta = match gamma_g.try_inverse() {
        Some(w) if stats.n_target > 0 => solve_diagonal_mixing(
            &(mz * stats.s_target * mz.transpose()),
            &(mz * stats.s_target * my.transpose()),
            &w,
        ),
        _ => None,
    };
    let beta = match beta {
        Some(b) => {
            let (b, c) = clamp_mixing(b);
            flags.beta_clamped = c;
            b
        }
        None => {
            flags.beta_singular = true;
            prev.beta
        }
    };

    // α: z = G_t - R_t, y = H_t - R_t
    let mut mz = SMatrix::<f64, 2, 11>::zeros();
    let mut my = SMatrix::<f64, 2, 11>::zeros();
    for d in 0..2 {
        mz[(d, G + d)] = 1.0;
        mz[(d, R + d)] = -1.0;
        my[(d, 8 + d)] = 1.0;
        my[(d, R + d)] = -1.0;
    }
    let alpha = sigma_h.try_inverse().and_then(|w| {
        solve_diagonal_mixing(
            &(mz * stats.s_emit * mz.transpose()),
            &(mz * stats.s_emit * my.transpose()),
            &w,
        )
    });
    let alpha = match alpha {
        Some(a) => {
            let (a, c) = clamp_mixing(a);
            flags.alpha_clamped = c;
            a
        }
        None => {
            flags.alpha_singular = true;
            prev.alpha
        }
    };
    (alpha, beta, flags)
}

/// Full M-step: mixing matrices under the old covariances, then the
/// covariances under the new mixing matrices.
pub fn m_step(
    stats: &SufficientStats,
    params: &ModelParams,
    dt: f64,
) -> Result<(ModelParams, MixingFlags)> {
    let (alpha, beta, flags) = m_step_mixing(stats, &params.gamma_g, &params.sigma_h, params, dt);
    let mixed = ModelParams {
        alpha,
        beta,
        ..*params
    };
    let (gamma, sigma_h) = m_step_covariances(stats, &mixed, dt)?;
    let block = |off: usize| -> Matrix2<f64> { gamma.fixed_view::<2, 2>(off, off).into_owned() };
    let next = ModelParams {
        alpha,
        beta,
        gamma_g: block(G),
        gamma_g_dot: block(G_DOT),
        gamma_r: block(R),
        gamma_r_dot: block(R_DOT),
        sigma_h,
    };
    Ok((next, flags))
}

/// E-step over all sequences: summed moments and total log-likelihood.
pub fn e_step(seqs: &[PersonSequence], params: &ModelParams, dt: f64) -> Result<SufficientStats> {
    seqs.par_iter()
        .map(|seq| {
            let out = rts_smooth(&model_for(seq, params, dt))?;
            Ok(SufficientStats::from_moments(&out.moments, seq, out.loglik))
        })
        .try_reduce(SufficientStats::default, |a, b| Ok(a.merge(b)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop once the relative log-likelihood improvement falls below this.
    pub tol: f64,
    pub dt: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
            dt: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub params: ModelParams,
    /// Log-likelihood of the initial parameters, then after each M-step.
    /// The last entry belongs to `params`.
    pub loglik: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

pub fn em_fit(data: &[Recording], init: &ModelParams, opts: &EmOptions) -> Result<EmFit> {
    if data.is_empty() {
        return Err(Error::InvalidParams(
            "learning needs at least one recording".into(),
        ));
    }
    init.validate()?;
    let seqs = sequences(data)?;
    em_fit_sequences(&seqs, init, opts)
}

pub fn em_fit_sequences(
    seqs: &[PersonSequence],
    init: &ModelParams,
    opts: &EmOptions,
) -> Result<EmFit> {
    let mut params = *init;
    let mut fit = EmFit {
        params,
        loglik: Vec::new(),
        iterations: 0,
        converged: false,
        warnings: Vec::new(),
    };
    loop {
        let stats = e_step(seqs, &params, opts.dt).map_err(|e| Error::EStep {
            iteration: fit.iterations,
            source: Box::new(e),
        })?;
        let ll = stats.loglik;
        if let Some(&prev) = fit.loglik.last() {
            if ll < prev - 1e-6 * prev.abs().max(1.0) {
                let msg = format!(
                    "iteration {}: log-likelihood decreased from {prev} to {ll}",
                    fit.iterations
                );
                warn!("{msg}");
                fit.warnings.push(msg);
            }
            fit.loglik.push(ll);
            if (ll - prev).abs() < opts.tol * prev.abs().max(f64::MIN_POSITIVE) {
                fit.converged = true;
                break;
            }
        } else {
            fit.loglik.push(ll);
        }
        if fit.iterations >= opts.max_iters {
            break;
        }
        let (next, flags) = m_step(&stats, &params, opts.dt).map_err(|e| Error::EStep {
            iteration: fit.iterations,
            source: Box::new(e),
        })?;
        if flags.alpha_singular || flags.beta_singular {
            let msg = format!(
                "iteration {}: singular mixing system, previous value kept ({flags:?})",
                fit.iterations
            );
            warn!("{msg}");
            fit.warnings.push(msg);
        }
        params = next;
        fit.iterations += 1;
        if !params.gaze_dominates_reference() {
            let msg = format!(
                "iteration {}: Tr Γ_G = {} does not exceed Tr Γ_R = {}",
                fit.iterations,
                params.gamma_g.trace(),
                params.gamma_r.trace()
            );
            warn!("{msg}");
            fit.warnings.push(msg);
        }
    }
    fit.params = params;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::transition_matrices;

    fn toy_model(t: usize, sigma_h: f64) -> LinearGaussianModel {
        let p = ModelParams::standard_init();
        let obs: Vec<Vector2<f64>> = (0..t)
            .map(|k| Vector2::new(10.0 + k as f64, -2.0 + 0.5 * k as f64))
            .collect();
        let (prior_mean, prior_cov) = prior_for(&obs[0]);
        LinearGaussianModel {
            prior_mean,
            prior_cov,
            c: p.emission(),
            gamma: p.gamma_l(),
            sigma_h: Matrix2::identity() * sigma_h,
            systems: (1..t)
                .map(|k| {
                    transition_matrices(
                        &p.beta,
                        (k % 2 == 0).then_some(&Vector2::new(20.0, 0.0)),
                        1.0,
                    )
                })
                .collect(),
            obs,
        }
    }

    #[test]
    fn single_frame_is_filtered() {
        let out = rts_smooth(&toy_model(1, 15.0)).unwrap();
        assert_eq!(out.internals.smoothed_means, out.internals.filtered_means);
        assert_eq!(out.internals.smoothed_covs, out.internals.filtered_covs);
    }

    #[test]
    fn uninformative_observations_follow_prior() {
        let m = toy_model(6, 1e12);
        let out = rts_smooth(&m).unwrap();
        let mut mean = m.prior_mean;
        for t in 0..6 {
            if t > 0 {
                let (a, b) = &m.systems[t - 1];
                mean = a * mean + b;
            }
            assert!((out.moments.mean[t] - mean).amax() < 1e-4);
        }
    }

    #[test]
    fn second_moments_are_psd() {
        let out = rts_smooth(&toy_model(20, 15.0)).unwrap();
        for t in 0..20 {
            let m = out.moments.mean[t];
            let c = out.moments.second[t] - m * m.transpose();
            assert!(c.symmetric_eigenvalues().min() > -1e-9);
        }
    }

    #[test]
    fn diagonal_weights_decouple() {
        let s_zz = Matrix2::new(4.0, 1.0, 1.0, 9.0);
        let s_zy = Matrix2::new(2.0, 0.7, 0.3, 3.0);
        let w = Matrix2::new(0.5, 0.0, 0.0, 2.0);
        let d = solve_diagonal_mixing(&s_zz, &s_zy, &w).unwrap();
        assert!((d[0] - 2.0 / 4.0).abs() < 1e-12);
        assert!((d[1] - 3.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn single_frame_sigma_is_outer_product() {
        // point-mass moments
        let mut mo = SmoothedMoments::default();
        let mut l = Vec8::zeros();
        l[0] = 4.0;
        l[4] = 2.0;
        mo.mean.push(l);
        mo.second.push(l * l.transpose());
        mo.cross.push(Mat8::zeros());
        let h = Vector2::new(5.0, 1.0);
        let seq = PersonSequence {
            person: 1,
            obs: vec![h],
            targets: vec![None],
        };
        let mut st = SufficientStats::from_moments(&mo, &seq, 0.0);
        st.n_free = 1; // skip the transition guard
        let p = ModelParams::standard_init();
        let (_, sigma) = m_step_covariances(&st, &p, 1.0).unwrap();
        let r = h - p.emission() * l;
        let want = floor_eigen(&(r * r.transpose()), EIGEN_FLOOR);
        assert!((sigma - want).amax() < 1e-9);
        // doubling the residual quadruples Σ_H
        let seq2 = PersonSequence {
            obs: vec![p.emission() * l + r * 2.0],
            ..seq
        };
        let mut st2 = SufficientStats::from_moments(&mo, &seq2, 0.0);
        st2.n_free = 1;
        let (_, sigma2) = m_step_covariances(&st2, &p, 1.0).unwrap();
        assert!((sigma2 - sigma * 4.0).amax() < 1e-6);
    }

    #[test]
    fn alpha_regression_without_reference() {
        // R ≡ 0: α solves least squares of H on G
        let mut mo = SmoothedMoments::default();
        let mut obs = Vec::new();
        let (mut sgg, mut sgh) = (Vector2::<f64>::zeros(), Vector2::<f64>::zeros());
        for k in 0..10 {
            let mut l = Vec8::zeros();
            l[0] = 3.0 + k as f64;
            l[1] = -1.0 - 0.5 * k as f64;
            let h = Vector2::new(
                0.3 * l[0] + 0.1 * (k as f64).sin(),
                0.8 * l[1] + 0.05 * (k as f64).cos(),
            );
            sgg += l.fixed_rows::<2>(0).component_mul(&l.fixed_rows::<2>(0));
            sgh += l.fixed_rows::<2>(0).component_mul(&h);
            mo.mean.push(l);
            mo.second.push(l * l.transpose());
            mo.cross.push(Mat8::zeros());
            obs.push(h);
        }
        let seq = PersonSequence {
            person: 1,
            targets: vec![None; obs.len()],
            obs,
        };
        let st = SufficientStats::from_moments(&mo, &seq, 0.0);
        let p = ModelParams::standard_init();
        let (alpha, _, flags) =
            m_step_mixing(&st, &p.gamma_g, &Matrix2::new(2.0, 0.0, 0.0, 1.0), &p, 1.0);
        assert!(!flags.alpha_singular);
        let want = sgh.component_div(&sgg);
        assert!((alpha - want).amax() < 1e-12);
    }
}
