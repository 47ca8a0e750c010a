//! Switching Kalman filter over VFOA hypotheses.
//!
//! Each tracked person `i` carries one Gaussian per eligible label `j`
//! together with its weight `c^{ij}`. A frame update runs one constrained
//! Kalman step for every pair (new label `j`, previous label `k`), scores it
//! by predictive likelihood, previous weight and transition prior, and
//! collapses the `k` components of each `j` by moment matching.
//!
//! Head orientations are unwrapped on the fly so that the latent state lives
//! on the real line; target directions are re-expressed next to the current
//! unwrapped head pan.

use log::warn;
use nalgebra::{Cholesky, Matrix2, Vector2};

use crate::dynamics::{
    logpdf_residual, make_spd, target_direction, transition_matrices, Mat28, Mat8, ModelParams,
    Vec8, G, R,
};
use crate::error::{Error, Result};
use crate::geometry::{
    angular_distance, angular_distance_raw, direction_from_points, wrapped_residual, Direction,
    Position3D,
};
use crate::scene::{eligible_vfoa_labels, FrameObservation, Recording, Scene, TargetId, NO_TARGET};
use crate::transitions::{marginal_transition_row, transition_row, TransitionTable};

pub const DEFAULT_GAZE_THRESHOLD_DEG: f64 = 15.0;
pub const GAZE_HEAD_BOUND_DEG: f64 = 35.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Frame step inside the transition matrix.
    pub dt: f64,
    pub init_tol: f64,
    pub init_max_iter: usize,
    /// Largest allowed distance between gaze mean and head, degrees.
    pub gaze_head_bound: f64,
    /// Radius used to read a VFOA off a known gaze, degrees.
    pub gaze_threshold: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            init_tol: 1e-6,
            init_max_iter: 100,
            gaze_head_bound: GAZE_HEAD_BOUND_DEG,
            gaze_threshold: DEFAULT_GAZE_THRESHOLD_DEG,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfStep {
    pub mean: Vec8,
    pub cov: Mat8,
    /// Log of the predictive density of the observation.
    pub log_likelihood: f64,
    /// Whether the gaze mean had to be pulled back toward the head.
    pub projected: bool,
}

/// Moves the gaze block of `mu` radially toward `h` so that it lies within
/// `bound` degrees. The gaze pan is first moved to the branch next to `h`,
/// and the reference pan with it so that `C·mu` keeps its meaning.
pub fn project_gaze(mu: &mut Vec8, h: &Vector2<f64>, bound: f64) -> bool {
    let g = Vector2::new(mu[G], mu[G + 1]);
    let d = wrapped_residual(&g, h);
    let shift = h[0] + d[0] - g[0];
    if shift != 0.0 {
        mu[G] += shift;
        mu[R] += shift;
    }
    let norm = d.norm();
    if norm <= bound {
        return false;
    }
    let p = h + d * (bound / norm);
    mu[G] = p[0];
    mu[G + 1] = p[1];
    true
}

/// Predict with `(A, b, Γ)`, update with `(C, Σ_H)` on the wrapped
/// innovation, then project the gaze mean. The covariance is left as the
/// Kalman update produced it (Joseph form, symmetrized).
#[allow(clippy::too_many_arguments)]
pub fn constrained_kf_step(
    mu_prev: &Vec8,
    cov_prev: &Mat8,
    a: &Mat8,
    b: &Vec8,
    c: &Mat28,
    gamma_l: &Mat8,
    sigma_h: &Matrix2<f64>,
    h: &Vector2<f64>,
    bound: f64,
) -> Result<KfStep> {
    let m = a * mu_prev + b;
    let p = a * cov_prev * a.transpose() + gamma_l;
    let pct = p * c.transpose();
    let s = c * pct + sigma_h;
    let s = (s + s.transpose()) * 0.5;
    let innov = wrapped_residual(h, &(c * m));
    let log_likelihood = logpdf_residual(&innov, &s)?;
    let chol = Cholesky::new(s).ok_or_else(|| Error::Singular("innovation covariance".into()))?;
    let k = chol.solve(&pct.transpose()).transpose();
    let mut mean = m + k * innov;
    let ikc = Mat8::identity() - k * c;
    let cov = make_spd(&(ikc * p * ikc.transpose() + k * sigma_h * k.transpose()));
    let projected = project_gaze(&mut mean, h, bound);
    Ok(KfStep {
        mean,
        cov,
        log_likelihood,
        projected,
    })
}

/// Single Gaussian with the mean and covariance of the mixture.
pub fn moment_match(weights: &[f64], means: &[Vec8], covs: &[Mat8]) -> (Vec8, Mat8) {
    let mut mu = Vec8::zeros();
    for (w, m) in weights.iter().zip(means) {
        mu += m * *w;
    }
    let mut cov = Mat8::zeros();
    for ((w, m), s) in weights.iter().zip(means).zip(covs) {
        if *w == 0.0 {
            continue;
        }
        let d = m - mu;
        cov += (s + d * d.transpose()) * *w;
    }
    (mu, (cov + cov.transpose()) * 0.5)
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Nearest target (by angular distance from `person`) within `threshold`,
/// else 0. Ties go to the smaller id.
pub fn vfoa_from_gaze_geometric(
    gaze: &Direction,
    positions: &[Position3D],
    person: TargetId,
    threshold: f64,
) -> Result<TargetId> {
    let src = positions
        .get(person.wrapping_sub(1))
        .ok_or(Error::UnknownTarget(person))?;
    let mut best = (f64::INFINITY, NO_TARGET);
    for (idx, dst) in positions.iter().enumerate() {
        let id = idx + 1;
        if id == person {
            continue;
        }
        let Ok(dir) = direction_from_points(src, dst) else {
            continue;
        };
        let d = angular_distance(gaze, &dir);
        if d < best.0 {
            best = (d, id);
        }
    }
    Ok(if best.0 <= threshold {
        best.1
    } else {
        NO_TARGET
    })
}

/// Filtering state of one person: per label `j` (indexed by label, own id
/// unused) a log weight, a mean and a covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonBelief {
    pub person: TargetId,
    pub log_weights: Vec<f64>,
    pub means: Vec<Vec8>,
    pub covs: Vec<Mat8>,
}

impl PersonBelief {
    pub fn labels(&self) -> impl Iterator<Item = TargetId> + '_ {
        (0..self.log_weights.len()).filter(move |&j| j != self.person)
    }

    /// Weights indexed by label; 0 at the person's own id.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights
            .iter()
            .enumerate()
            .map(|(j, lw)| if j == self.person { 0.0 } else { lw.exp() })
            .collect()
    }

    /// MAP label, ties toward the smaller id.
    pub fn map_label(&self) -> TargetId {
        let mut best = (f64::NEG_INFINITY, NO_TARGET);
        let mut first = true;
        for j in self.labels() {
            let w = self.log_weights[j];
            if first || w > best.0 {
                best = (w, j);
                first = false;
            }
        }
        best.1
    }

    pub fn gaze(&self, label: TargetId) -> Direction {
        let m = &self.means[label];
        Direction::saturating(m[G], m[G + 1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    /// Index of the last frame absorbed.
    pub frame: usize,
    /// One per tracked person, in id order.
    pub beliefs: Vec<PersonBelief>,
    /// Unwrapped head orientation per tracked person.
    pub heads: Vec<Vector2<f64>>,
    /// Known VFOA of untracked active targets at the last frame, by id.
    pub untracked_vfoa: Vec<Option<TargetId>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitReport {
    pub iterations: usize,
    pub converged: bool,
    pub last_change: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    /// Persons whose hypotheses all had zero mass; their belief was kept.
    pub degenerate: Vec<TargetId>,
    /// Largest distance between any gaze mean and the head, degrees.
    pub max_gaze_head_distance: f64,
    /// Largest |Σ_j c^{ij} - 1| over persons.
    pub max_weight_error: f64,
    /// Number of Kalman steps whose gaze mean was projected.
    pub projections: usize,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    scene: Scene,
    params: ModelParams,
    table: TransitionTable,
    config: TrackerConfig,
    c: Mat28,
    gamma_l: Mat8,
    /// Transition rows for previous labels that are not active targets,
    /// `[person index][k]`.
    static_rows: Vec<Vec<Option<Vec<f64>>>>,
}

impl Tracker {
    pub fn new(
        scene: Scene,
        params: ModelParams,
        table: TransitionTable,
        config: TrackerConfig,
    ) -> Result<Self> {
        params.validate()?;
        let n = scene.n_targets();
        let mut static_rows = Vec::new();
        for &i in scene.tracked() {
            let mut rows = vec![None; n + 1];
            for (k, row) in rows.iter_mut().enumerate() {
                if k != i && !scene.is_active(k) {
                    *row = Some(transition_row(&table, &scene, i, k, None)?);
                }
            }
            static_rows.push(rows);
        }
        Ok(Self {
            c: params.emission(),
            gamma_l: params.gamma_l(),
            scene,
            params,
            table,
            config,
            static_rows,
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    fn untracked_vfoa(&self, obs: &FrameObservation) -> Result<Vec<Option<TargetId>>> {
        let mut out = vec![None; self.scene.n_targets() + 1];
        for k in self.scene.untracked_active() {
            let o = obs.get(k)?;
            out[k] = Some(match (o.vfoa, o.direction) {
                (Some(v), _) => v,
                (None, Some(g)) => {
                    vfoa_from_gaze_geometric(&g, &obs.positions()?, k, self.config.gaze_threshold)?
                }
                (None, None) => {
                    return Err(Error::InvalidScene(format!(
                        "frame {}: target {k} has neither a known VFOA nor a known gaze",
                        obs.frame
                    )))
                }
            });
        }
        Ok(out)
    }

    /// Seeds every hypothesis at `[H; 0; H; 0]` with unit covariance and
    /// uniform weights, then absorbs the first frame repeatedly until the
    /// weights stop moving.
    pub fn initialize(&self, obs: &FrameObservation) -> Result<(TrackerState, InitReport)> {
        let n = self.scene.n_targets();
        let mut beliefs = Vec::new();
        let mut heads = Vec::new();
        for &i in self.scene.tracked() {
            let h = obs.head(i)?.to_vector();
            let mut mu = Vec8::zeros();
            mu.fixed_rows_mut::<2>(0).copy_from(&h);
            mu.fixed_rows_mut::<2>(4).copy_from(&h);
            let lw = -(n as f64).ln();
            beliefs.push(PersonBelief {
                person: i,
                log_weights: (0..=n)
                    .map(|j| if j == i { f64::NEG_INFINITY } else { lw })
                    .collect(),
                means: vec![mu; n + 1],
                covs: vec![Mat8::identity(); n + 1],
            });
            heads.push(h);
        }
        let mut state = TrackerState {
            frame: obs.frame,
            beliefs,
            heads,
            untracked_vfoa: self.untracked_vfoa(obs)?,
        };
        let mut report = InitReport {
            iterations: 0,
            converged: false,
            last_change: f64::INFINITY,
        };
        while report.iterations < self.config.init_max_iter {
            let before: Vec<Vec<f64>> = state.beliefs.iter().map(|b| b.weights()).collect();
            self.update(&mut state, obs)?;
            report.iterations += 1;
            report.last_change = state
                .beliefs
                .iter()
                .zip(&before)
                .flat_map(|(b, w0)| {
                    b.weights()
                        .into_iter()
                        .zip(w0.clone())
                        .map(|(x, y)| (x - y).abs())
                })
                .fold(0.0, f64::max);
            if report.last_change < self.config.init_tol {
                report.converged = true;
                break;
            }
        }
        if !report.converged {
            warn!(
                "initialization stopped after {} iterations (weight change {:e})",
                report.iterations, report.last_change
            );
        }
        Ok((state, report))
    }

    /// Absorbs one frame.
    pub fn update(&self, state: &mut TrackerState, obs: &FrameObservation) -> Result<UpdateReport> {
        let scene = &self.scene;
        let n = scene.n_targets();
        let positions = obs.positions()?;
        let prev_weights: Vec<Vec<f64>> = state.beliefs.iter().map(|b| b.weights()).collect();
        let mut report = UpdateReport::default();
        let mut new_beliefs = Vec::with_capacity(state.beliefs.len());
        let mut new_heads = Vec::with_capacity(state.heads.len());

        for (p, belief) in state.beliefs.iter().enumerate() {
            let i = belief.person;
            let h_obs = obs.head(i)?.to_vector();
            let h = state.heads[p] + wrapped_residual(&h_obs, &state.heads[p]);
            new_heads.push(h);
            let labels: Vec<TargetId> = belief.labels().collect();

            let mut systems = Vec::with_capacity(n + 1);
            for j in 0..=n {
                let target = if j == NO_TARGET || j == i {
                    None
                } else {
                    Some(target_direction(&positions, i, j, h[0])?)
                };
                systems.push(transition_matrices(
                    &self.params.beta,
                    target.as_ref(),
                    self.config.dt,
                ));
            }

            // ln P(j | k, ...) per previous label k
            let mut log_prior = vec![Vec::new(); n + 1];
            for &k in &labels {
                let row = if let Some(r) = &self.static_rows[p][k] {
                    r.clone()
                } else if let Some(q) = scene.tracked().iter().position(|&t| t == k) {
                    marginal_transition_row(&self.table, scene, i, k, Some(&prev_weights[q]))?
                } else {
                    let l = state.untracked_vfoa[k].ok_or(Error::UnknownTarget(k))?;
                    let mut point = vec![0.0; n + 1];
                    point[l] = 1.0;
                    marginal_transition_row(&self.table, scene, i, k, Some(&point))?
                };
                log_prior[k] = row.iter().map(|v| v.ln()).collect();
            }

            // steps[j][k]
            let mut steps: Vec<Vec<Option<KfStep>>> = vec![vec![None; n + 1]; n + 1];
            let mut log_c = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
            for &j in &labels {
                let (a, b) = &systems[j];
                for &k in &labels {
                    let step = constrained_kf_step(
                        &belief.means[k],
                        &belief.covs[k],
                        a,
                        b,
                        &self.c,
                        &self.gamma_l,
                        &self.params.sigma_h,
                        &h,
                        self.config.gaze_head_bound,
                    )?;
                    if step.projected {
                        report.projections += 1;
                    }
                    log_c[j][k] = step.log_likelihood + belief.log_weights[k] + log_prior[k][j];
                    steps[j][k] = Some(step);
                }
            }
            let total = logsumexp(labels.iter().flat_map(|&j| {
                labels.iter().map({
                    let log_c = &log_c;
                    move |&k| log_c[j][k]
                })
            }));
            if !total.is_finite() {
                warn!(
                    "frame {}: no hypothesis of person {i} has positive mass",
                    obs.frame
                );
                report.degenerate.push(i);
                new_beliefs.push(belief.clone());
                continue;
            }

            let mut next = PersonBelief {
                person: i,
                log_weights: vec![f64::NEG_INFINITY; n + 1],
                means: belief.means.clone(),
                covs: belief.covs.clone(),
            };
            for &j in &labels {
                let row = &log_c[j];
                let lj = logsumexp(labels.iter().map(|&k| row[k]));
                let w: Vec<f64> = if lj.is_finite() {
                    labels.iter().map(|&k| (row[k] - lj).exp()).collect()
                } else {
                    // zero prior mass for j: collapse with likelihood x weight only
                    let alt: Vec<f64> = labels
                        .iter()
                        .map(|&k| {
                            steps[j][k]
                                .as_ref()
                                .map_or(f64::NEG_INFINITY, |s| s.log_likelihood)
                                + belief.log_weights[k]
                        })
                        .collect();
                    let z = logsumexp(alt.iter().copied());
                    if z.is_finite() {
                        alt.iter().map(|x| (x - z).exp()).collect()
                    } else {
                        vec![1.0 / labels.len() as f64; labels.len()]
                    }
                };
                let means: Vec<Vec8> = labels
                    .iter()
                    .map(|&k| steps[j][k].as_ref().map(|s| s.mean).unwrap_or_default())
                    .collect();
                let covs: Vec<Mat8> = labels
                    .iter()
                    .map(|&k| steps[j][k].as_ref().map(|s| s.cov).unwrap_or_default())
                    .collect();
                let (mu, cov) = if labels.len() == 1 {
                    (means[0], covs[0])
                } else {
                    moment_match(&w, &means, &covs)
                };
                next.means[j] = mu;
                next.covs[j] = make_spd(&cov);
                next.log_weights[j] = lj - total;
            }
            let sum: f64 = next.weights().iter().sum();
            report.max_weight_error = report.max_weight_error.max((sum - 1.0).abs());
            for &j in &labels {
                let g = Vector2::new(next.means[j][G], next.means[j][G + 1]);
                report.max_gaze_head_distance = report
                    .max_gaze_head_distance
                    .max(angular_distance_raw(&g, &h));
            }
            new_beliefs.push(next);
        }

        state.beliefs = new_beliefs;
        state.heads = new_heads;
        state.untracked_vfoa = self.untracked_vfoa(obs)?;
        state.frame = obs.frame;
        Ok(report)
    }
}

/// MAP label per tracked person.
pub fn map_vfoa(state: &TrackerState) -> Vec<TargetId> {
    state.beliefs.iter().map(PersonBelief::map_label).collect()
}

/// Gaze block of the MAP hypothesis per tracked person.
pub fn gaze_estimate(state: &TrackerState) -> Vec<Direction> {
    state
        .beliefs
        .iter()
        .map(|b| b.gaze(b.map_label()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEstimate {
    pub frame: usize,
    /// Per tracked person, in id order.
    pub vfoa: Vec<TargetId>,
    pub gaze: Vec<Direction>,
    /// Per tracked person, weights indexed by label.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub persons: Vec<TargetId>,
    pub n_targets: usize,
    pub frames: Vec<FrameEstimate>,
    pub init: InitReport,
    /// Frames where some person's update was degenerate.
    pub flagged_frames: Vec<usize>,
    /// Worst gaze-to-head distance over every post-update hypothesis.
    pub max_gaze_head_distance: f64,
    pub max_weight_error: f64,
}

fn snapshot(state: &TrackerState) -> FrameEstimate {
    FrameEstimate {
        frame: state.frame,
        vfoa: map_vfoa(state),
        gaze: gaze_estimate(state),
        weights: state.beliefs.iter().map(|b| b.weights()).collect(),
    }
}

/// Runs the filter over a whole recording.
pub fn track(
    rec: &Recording,
    params: &ModelParams,
    table: &TransitionTable,
    config: &TrackerConfig,
) -> Result<TrackOutput> {
    rec.check()?;
    for &i in rec.scene.tracked() {
        eligible_vfoa_labels(&rec.scene, i)?;
    }
    let tracker = Tracker::new(rec.scene.clone(), *params, *table, *config)?;
    let (mut state, init) = tracker.initialize(&rec.frames[0])?;
    let mut out = TrackOutput {
        persons: rec.scene.tracked().to_vec(),
        n_targets: rec.scene.n_targets(),
        frames: Vec::with_capacity(rec.len()),
        init,
        flagged_frames: Vec::new(),
        max_gaze_head_distance: 0.0,
        max_weight_error: 0.0,
    };
    out.frames.push(snapshot(&state));
    for obs in &rec.frames[1..] {
        let r = tracker.update(&mut state, obs)?;
        if !r.degenerate.is_empty() {
            out.flagged_frames.push(obs.frame);
        }
        out.max_gaze_head_distance = out.max_gaze_head_distance.max(r.max_gaze_head_distance);
        out.max_weight_error = out.max_weight_error.max(r.max_weight_error);
        out.frames.push(snapshot(&state));
    }
    Ok(out)
}
