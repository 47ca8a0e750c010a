//! Generative sampler for the tracking model.
//!
//! Draws VFOA chains from the transition table, latent gaze/reference states
//! from the linear dynamics and head orientations from the emission model.
//! The output is a fully annotated [`Recording`] plus the latent truth, and
//! is a deterministic function of the configuration and seed.

use nalgebra::{Cholesky, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    target_direction, transition_matrices, ModelParams, Vec8, G, G_DOT, R, R_DOT,
};
use crate::error::{Error, Result};
use crate::geometry::{direction_from_points, Direction, Position3D};
use crate::scene::{eligible_vfoa_labels, FrameObservation, Recording, Scene, TargetId, NO_TARGET};
use crate::tracker::GAZE_HEAD_BOUND_DEG;
use crate::transitions::{transition_row, TransitionTable};

/// Position of a target over time. Frames are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetPath {
    Static(Position3D),
    /// `start + (t - 1) * velocity`, velocity in meters per frame.
    Linear {
        start: Position3D,
        velocity: [f64; 3],
    },
}

impl TargetPath {
    pub fn at(&self, frame: usize) -> Result<Position3D> {
        match self {
            TargetPath::Static(p) => Ok(*p),
            TargetPath::Linear { start, velocity } => {
                let s = (frame - 1) as f64;
                Position3D::new(
                    start.x + s * velocity[0],
                    start.y + s * velocity[1],
                    start.z + s * velocity[2],
                )
            }
        }
    }
}

/// Gaze of an untracked active target: cycles through `labels`, holding each
/// for `dwell` frames. While on label 0 it looks along `away`, by default the
/// direction opposite to the centroid of the other targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UntrackedScript {
    pub target: TargetId,
    pub labels: Vec<TargetId>,
    pub dwell: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub away: Option<Direction>,
}

impl UntrackedScript {
    pub fn label_at(&self, frame: usize) -> TargetId {
        self.labels[((frame - 1) / self.dwell) % self.labels.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scene: Scene,
    pub params: ModelParams,
    pub table: TransitionTable,
    pub frames: usize,
    pub seed: u64,
    /// Seconds per frame, copied into the recording.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// One per target, in id order.
    pub paths: Vec<TargetPath>,
    /// One per untracked active target.
    #[serde(default)]
    pub scripts: Vec<UntrackedScript>,
    /// When set, the reference direction is pulled toward the gaze whenever
    /// the noise-free head would lie more than this many degrees from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze_head_bound: Option<f64>,
}

fn default_dt() -> f64 {
    0.04
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Synthesis(m));
        if self.frames == 0 {
            return bad("frames must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        self.params.validate()?;
        if let Some(b) = self.gaze_head_bound {
            if !(b > 0.0 && b.is_finite()) {
                return bad(format!("gaze_head_bound must be positive, got {b}"));
            }
        }
        let n = self.scene.n_targets();
        if self.paths.len() != n {
            return bad(format!("{} paths for {n} targets", self.paths.len()));
        }
        for id in self.scene.untracked_active() {
            if !self.scripts.iter().any(|s| s.target == id) {
                return bad(format!("untracked target {id} has no script"));
            }
        }
        for s in &self.scripts {
            if !self.scene.is_active(s.target) || self.scene.is_tracked(s.target) {
                return bad(format!(
                    "script for target {} which is not untracked active",
                    s.target
                ));
            }
            if s.labels.is_empty() || s.dwell == 0 {
                return bad(format!("script for target {} is empty", s.target));
            }
            if let Some(l) = s.labels.iter().find(|&&l| l == s.target || l > n) {
                return bad(format!("script for target {} uses label {l}", s.target));
            }
        }
        for t in [1, self.frames] {
            for p in &self.paths {
                p.at(t)?;
            }
        }
        Ok(())
    }

    fn positions(&self, frame: usize) -> Result<Vec<Position3D>> {
        self.paths.iter().map(|p| p.at(frame)).collect()
    }

    fn script(&self, id: TargetId) -> &UntrackedScript {
        self.scripts
            .iter()
            .find(|s| s.target == id)
            .expect("validated")
    }
}

/// Latent truth of one tracked person at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub frame: usize,
    pub person: TargetId,
    pub vfoa: TargetId,
    /// `[G; Ġ; R; Ṙ]`, angles unwrapped.
    pub state: Vec8,
}

impl TruthRow {
    pub fn gaze(&self) -> Direction {
        Direction::saturating(self.state[G], self.state[G + 1])
    }
}

/// Rows ordered by frame, then person id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub rows: Vec<TruthRow>,
}

impl GroundTruth {
    pub fn person(&self, id: TargetId) -> impl Iterator<Item = &TruthRow> + '_ {
        self.rows.iter().filter(move |r| r.person == id)
    }
}

fn centroid_of_others(pos: &[Position3D], i: TargetId) -> Result<Position3D> {
    let others: Vec<&Position3D> = pos
        .iter()
        .enumerate()
        .filter(|(k, _)| k + 1 != i)
        .map(|(_, p)| p)
        .collect();
    if others.is_empty() {
        return Err(Error::Synthesis("scene has a single target".into()));
    }
    let n = others.len() as f64;
    Position3D::new(
        others.iter().map(|p| p.x).sum::<f64>() / n,
        others.iter().map(|p| p.y).sum::<f64>() / n,
        others.iter().map(|p| p.z).sum::<f64>() / n,
    )
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = j;
        if u < acc {
            return j;
        }
    }
    last
}

fn chol_factor(m: &Matrix2<f64>) -> Matrix2<f64> {
    Cholesky::new(*m)
        .map(|c| c.l())
        .unwrap_or_else(Matrix2::zeros)
}

fn normal2(rng: &mut ChaCha8Rng, l: &Matrix2<f64>) -> Vector2<f64> {
    let z = Vector2::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    l * z
}

struct NoiseFactors {
    blocks: [(usize, Matrix2<f64>); 4],
    emit: Matrix2<f64>,
}

impl NoiseFactors {
    fn new(p: &ModelParams) -> Self {
        Self {
            blocks: [
                (G, chol_factor(&p.gamma_g)),
                (G_DOT, chol_factor(&p.gamma_g_dot)),
                (R, chol_factor(&p.gamma_r)),
                (R_DOT, chol_factor(&p.gamma_r_dot)),
            ],
            emit: chol_factor(&p.sigma_h),
        }
    }

    fn state(&self, rng: &mut ChaCha8Rng) -> Vec8 {
        let mut w = Vec8::zeros();
        for (off, l) in &self.blocks {
            let v = normal2(rng, l);
            w[*off] = v[0];
            w[*off + 1] = v[1];
        }
        w
    }
}

/// Shrinks `R - G` so that the noise-free head `αG + (1-α)R` lies within
/// `bound` of the gaze.
fn turn_body(l: &mut Vec8, alpha: &Vector2<f64>, bound: f64) {
    let d = Vector2::new(l[R] - l[G], l[R + 1] - l[G + 1]);
    let off = Vector2::new((1.0 - alpha[0]) * d[0], (1.0 - alpha[1]) * d[1]).norm();
    if off > bound {
        let s = bound / off;
        l[R] = l[G] + s * d[0];
        l[R + 1] = l[G + 1] + s * d[1];
    }
}

fn head_direction(h: &Vector2<f64>, frame: usize, person: TargetId) -> Result<Direction> {
    Direction::wrapped(h[0], h[1]).map_err(|_| {
        Error::Synthesis(format!(
            "frame {frame}: head tilt of person {person} left the valid range ({:.1})",
            h[1]
        ))
    })
}

/// Samples one recording and its latent truth.
pub fn sample_recording(cfg: &SynthConfig) -> Result<(Recording, GroundTruth)> {
    cfg.validate()?;
    let scene = &cfg.scene;
    let n = scene.n_targets();
    let p = &cfg.params;
    let c = p.emission();
    let noise = NoiseFactors::new(p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tracked = scene.tracked().to_vec();

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut truth = GroundTruth {
        rows: Vec::with_capacity(cfg.frames * tracked.len()),
    };
    let mut labels = vec![NO_TARGET; n + 1];
    let mut states = vec![Vec8::zeros(); n + 1];

    for t in 1..=cfg.frames {
        let pos = cfg.positions(t)?;
        let prev_labels = labels.clone();
        for id in scene.untracked_active() {
            labels[id] = cfg.script(id).label_at(t);
        }
        for &i in &tracked {
            if t == 1 {
                let eligible = eligible_vfoa_labels(scene, i)?;
                let j = eligible[rng.random_range(0..eligible.len())];
                let dst = if j == NO_TARGET {
                    centroid_of_others(&pos, i)?
                } else {
                    pos[j - 1]
                };
                let d = direction_from_points(&pos[i - 1], &dst)?;
                let mut l = Vec8::zeros();
                l[G] = d.pan();
                l[G + 1] = d.tilt();
                l[R] = d.pan();
                l[R + 1] = d.tilt();
                labels[i] = j;
                states[i] = l;
            } else {
                let k = prev_labels[i];
                let l = (k != NO_TARGET && scene.is_active(k)).then(|| prev_labels[k]);
                let row = transition_row(&cfg.table, scene, i, k, l)?;
                let j = sample_categorical(&mut rng, &row);
                let prev = states[i];
                let target = if j == NO_TARGET {
                    None
                } else {
                    Some(target_direction(&pos, i, j, prev[G])?)
                };
                let (a, b) = transition_matrices(&p.beta, target.as_ref(), 1.0);
                labels[i] = j;
                states[i] = a * prev + b + noise.state(&mut rng);
                if let Some(bound) = cfg.gaze_head_bound {
                    turn_body(&mut states[i], &p.alpha, bound);
                }
            }
        }

        let mut obs = FrameObservation::empty(t, n);
        for (idx, slot) in obs.targets.iter_mut().enumerate() {
            slot.position = Some(pos[idx]);
        }
        for id in scene.untracked_active() {
            let s = cfg.script(id);
            let j = labels[id];
            let gaze = if j == NO_TARGET {
                match s.away {
                    Some(d) => d,
                    None => {
                        let d =
                            direction_from_points(&pos[id - 1], &centroid_of_others(&pos, id)?)?;
                        Direction::wrapped(d.pan() + 180.0, -d.tilt())?
                    }
                }
            } else {
                direction_from_points(&pos[id - 1], &pos[j - 1])?
            };
            let slot = obs.get_mut(id)?;
            slot.direction = Some(gaze);
            slot.vfoa = Some(j);
        }
        for &i in &tracked {
            let h = c * states[i] + normal2(&mut rng, &noise.emit);
            let slot = obs.get_mut(i)?;
            slot.direction = Some(head_direction(&h, t, i)?);
            slot.vfoa = Some(labels[i]);
            truth.rows.push(TruthRow {
                frame: t,
                person: i,
                vfoa: labels[i],
                state: states[i],
            });
        }
        frames.push(obs);
    }

    let rec = Recording {
        scene: scene.clone(),
        frames,
        dt: cfg.dt,
    };
    Ok((rec, truth))
}

/// VFOA chains alone, `v[t][id]` for every active target, each drawn from
/// the table as if tracked. Frame 0 is uniform over the eligible labels.
pub fn sample_vfoa_chains(
    scene: &Scene,
    table: &TransitionTable,
    frames: usize,
    seed: u64,
) -> Result<Vec<Vec<TargetId>>> {
    let n = scene.n_targets();
    let na = scene.n_active();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<TargetId>> = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut row = vec![NO_TARGET; na + 1];
        for i in 1..=na {
            row[i] = if t == 0 {
                let j = rng.random_range(0..n);
                if j >= i {
                    j + 1
                } else {
                    j
                }
            } else {
                let prev = &out[t - 1];
                let k = prev[i];
                let l = (k != NO_TARGET && scene.is_active(k)).then(|| prev[k]);
                sample_categorical(&mut rng, &transition_row(table, scene, i, k, l)?)
            };
        }
        out.push(row);
    }
    Ok(out)
}

/// Parameters used to generate the preset data: the initial values for α,
/// β and Γ_G, a smaller head noise, and small velocity and reference noise so
/// that long sequences stay within the physical angle range.
pub fn preset_generative_params() -> ModelParams {
    ModelParams {
        sigma_h: Matrix2::identity() * 5.0,
        gamma_g_dot: Matrix2::identity() * 1e-4,
        gamma_r: Matrix2::identity() * 1e-2,
        gamma_r_dot: Matrix2::identity() * 1e-6,
        ..ModelParams::standard_init()
    }
}

/// Focus is kept 95% of the time; leaving for label 0 is rare and short.
pub fn preset_table() -> TransitionTable {
    let (stay, away) = (0.95, 0.01);
    let rest = 1.0 - stay - away;
    TransitionTable::new([
        0.5,
        0.5,
        away,
        stay,
        rest,
        away,
        stay,
        rest,
        away,
        stay,
        rest,
        away,
        stay,
        rest / 2.0,
        rest / 2.0,
    ])
    .expect("preset table is normalized")
}

/// Two people facing each other with a robot and three paintings between
/// them. Ids: 1 robot (untracked), 2 and 3 people, 4..6 paintings.
pub fn easy_scene_preset() -> SynthConfig {
    use crate::scene::Target;
    let scene = Scene::new(vec![
        Target::active(1, false).named("robot"),
        Target::active(2, true).named("person-a"),
        Target::active(3, true).named("person-b"),
        Target::passive(4).named("painting-1"),
        Target::passive(5).named("painting-2"),
        Target::passive(6).named("painting-3"),
    ])
    .expect("preset scene is valid");
    let at = |x, y, z| TargetPath::Static(Position3D { x, y, z });
    SynthConfig {
        scene,
        params: preset_generative_params(),
        table: preset_table(),
        frames: 1500,
        seed: 42,
        dt: 0.04,
        paths: vec![
            at(2.0, 0.0, 1.15),
            at(0.0, 1.0, 1.6),
            at(0.0, -1.0, 1.6),
            at(0.75, 0.0, 2.7),
            at(-2.3, 0.0, 1.9),
            at(-0.55, 0.0, 3.0),
        ],
        scripts: vec![UntrackedScript {
            target: 1,
            labels: vec![2, 3, 5, 2, 0, 3],
            dwell: 60,
            away: None,
        }],
        gaze_head_bound: Some(GAZE_HEAD_BOUND_DEG),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angular_distance;

    fn quiet(cfg: &mut SynthConfig) {
        let tiny = Matrix2::identity() * 1e-12;
        cfg.params.gamma_g = tiny;
        cfg.params.gamma_g_dot = tiny;
        cfg.params.gamma_r = tiny;
        cfg.params.gamma_r_dot = tiny;
    }

    #[test]
    fn preset_shape_and_separation() {
        let cfg = easy_scene_preset();
        assert_eq!(cfg.scene.n_active(), 3);
        assert_eq!(cfg.scene.m_passive(), 3);
        assert_eq!(cfg.seed, 42);
        let pos = cfg.positions(1).unwrap();
        for &i in cfg.scene.tracked() {
            let dirs: Vec<Direction> = (1..=6)
                .filter(|&j| j != i)
                .map(|j| direction_from_points(&pos[i - 1], &pos[j - 1]).unwrap())
                .collect();
            for a in 0..dirs.len() {
                for b in a + 1..dirs.len() {
                    assert!(angular_distance(&dirs[a], &dirs[b]) >= 40.0);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_annotated() {
        let cfg = easy_scene_preset();
        let (r1, t1) = sample_recording(&cfg).unwrap();
        let (r2, t2) = sample_recording(&cfg).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(t1, t2);
        r1.check().unwrap();
        assert_eq!(r1.len(), cfg.frames);
        assert_eq!(t1.rows.len(), cfg.frames * 2);
    }

    #[test]
    fn noiseless_emission_is_exact() {
        let mut cfg = easy_scene_preset();
        quiet(&mut cfg);
        cfg.params.sigma_h = Matrix2::identity() * 1e-14;
        cfg.frames = 200;
        let (rec, truth) = sample_recording(&cfg).unwrap();
        let c = cfg.params.emission();
        for row in &truth.rows {
            let h = rec.frames[row.frame - 1].head(row.person).unwrap();
            let want = c * row.state;
            let want = Direction::wrapped(want[0], want[1]).unwrap();
            assert!(angular_distance(&h, &want) < 1e-5);
        }
    }

    #[test]
    fn first_frame_points_at_sampled_target() {
        let mut cfg = easy_scene_preset();
        cfg.frames = 1;
        for seed in 0..20 {
            cfg.seed = seed;
            let (_, truth) = sample_recording(&cfg).unwrap();
            let pos = cfg.positions(1).unwrap();
            for row in &truth.rows {
                assert_eq!(row.state[G_DOT], 0.0);
                assert_eq!(row.state[R_DOT + 1], 0.0);
                if row.vfoa != NO_TARGET {
                    let d =
                        direction_from_points(&pos[row.person - 1], &pos[row.vfoa - 1]).unwrap();
                    assert!(angular_distance(&row.gaze(), &d) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = easy_scene_preset();
        cfg.frames = 0;
        assert!(matches!(sample_recording(&cfg), Err(Error::Synthesis(_))));
        let mut cfg = easy_scene_preset();
        cfg.scripts.clear();
        assert!(sample_recording(&cfg).is_err());
        let mut cfg = easy_scene_preset();
        cfg.scripts[0].labels = vec![1];
        assert!(sample_recording(&cfg).is_err());
        let mut cfg = easy_scene_preset();
        cfg.paths.pop();
        assert!(sample_recording(&cfg).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = easy_scene_preset();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: SynthConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn head_follows_gaze() {
        let cfg = easy_scene_preset();
        let (rec, truth) = sample_recording(&cfg).unwrap();
        let rows: Vec<&TruthRow> = truth.person(2).collect();
        let g: Vec<f64> = rows.iter().map(|r| r.state[G]).collect();
        let h: Vec<f64> = rows
            .iter()
            .map(|r| {
                let d = rec.frames[r.frame - 1].head(2).unwrap().pan();
                r.state[G] + crate::geometry::wrap_delta(d, r.state[G])
            })
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mg, mh) = (mean(&g), mean(&h));
        let cov: f64 = g.iter().zip(&h).map(|(a, b)| (a - mg) * (b - mh)).sum();
        let vg: f64 = g.iter().map(|a| (a - mg).powi(2)).sum();
        let vh: f64 = h.iter().map(|b| (b - mh).powi(2)).sum();
        assert!(cov / (vg * vh).sqrt() > 0.5);
    }

    #[test]
    fn linear_path() {
        let p = TargetPath::Linear {
            start: Position3D::new(1.0, 0.0, 0.0).unwrap(),
            velocity: [0.5, 0.0, -1.0],
        };
        assert_eq!(p.at(3).unwrap(), Position3D::new(2.0, 0.0, -2.0).unwrap());
    }
}
