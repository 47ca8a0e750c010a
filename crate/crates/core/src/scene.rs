//! Scenes, targets, per-frame observations and recordings.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Direction, Position3D};
use crate::tracker::{vfoa_from_gaze_geometric, DEFAULT_GAZE_THRESHOLD_DEG};

/// Target label. 0 is reserved for "no target".
pub type TargetId = usize;

pub const NO_TARGET: TargetId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Active,
    Passive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub id: TargetId,
    pub kind: TargetKind,
    #[serde(default)]
    pub tracked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Target {
    pub fn active(id: TargetId, tracked: bool) -> Self {
        Self {
            id,
            kind: TargetKind::Active,
            tracked,
            name: None,
        }
    }

    pub fn passive(id: TargetId) -> Self {
        Self {
            id,
            kind: TargetKind::Passive,
            tracked: false,
            name: None,
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }
}

/// Targets sorted by id. Active targets hold ids `1..=N`, passive ones
/// `N+1..=N+M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scene {
    targets: Vec<Target>,
    n_active: usize,
    tracked: Vec<TargetId>,
}

impl Scene {
    pub fn new(mut targets: Vec<Target>) -> Result<Self> {
        targets.sort_by_key(|t| t.id);
        for (idx, t) in targets.iter().enumerate() {
            if t.id != idx + 1 {
                return Err(Error::InvalidScene(format!(
                    "target ids must be exactly 1..={} without duplicates",
                    targets.len()
                )));
            }
            if t.tracked && t.kind != TargetKind::Active {
                return Err(Error::InvalidScene(format!(
                    "target {} is tracked but passive",
                    t.id
                )));
            }
        }
        let n_active = targets
            .iter()
            .take_while(|t| t.kind == TargetKind::Active)
            .count();
        if targets[n_active..]
            .iter()
            .any(|t| t.kind == TargetKind::Active)
        {
            return Err(Error::InvalidScene(
                "active targets must precede passive targets in id order".into(),
            ));
        }
        let tracked: Vec<TargetId> = targets.iter().filter(|t| t.tracked).map(|t| t.id).collect();
        if tracked.is_empty() {
            return Err(Error::InvalidScene("no tracked target".into()));
        }
        Ok(Self {
            targets,
            n_active,
            tracked,
        })
    }

    /// `n_active` active targets of which the first `n_tracked` are tracked,
    /// followed by `m_passive` passive targets.
    pub fn simple(n_active: usize, n_tracked: usize, m_passive: usize) -> Result<Self> {
        let mut targets: Vec<Target> = (1..=n_active)
            .map(|id| Target::active(id, id <= n_tracked))
            .collect();
        targets.extend((n_active + 1..=n_active + m_passive).map(Target::passive));
        Self::new(targets)
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn n_active(&self) -> usize {
        self.n_active
    }

    pub fn m_passive(&self) -> usize {
        self.targets.len() - self.n_active
    }

    /// N + M.
    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn target(&self, id: TargetId) -> Result<&Target> {
        if id == NO_TARGET {
            return Err(Error::UnknownTarget(id));
        }
        self.targets.get(id - 1).ok_or(Error::UnknownTarget(id))
    }

    pub fn is_active(&self, id: TargetId) -> bool {
        id >= 1 && id <= self.n_active
    }

    pub fn is_passive(&self, id: TargetId) -> bool {
        id > self.n_active && id <= self.targets.len()
    }

    pub fn is_tracked(&self, id: TargetId) -> bool {
        self.target(id).map(|t| t.tracked).unwrap_or(false)
    }

    /// Ids of tracked persons, ascending.
    pub fn tracked(&self) -> &[TargetId] {
        &self.tracked
    }

    pub fn untracked_active(&self) -> impl Iterator<Item = TargetId> + '_ {
        (1..=self.n_active).filter(|&id| !self.targets[id - 1].tracked)
    }
}

impl Serialize for Scene {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.targets.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Scene {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let targets = Vec::<Target>::deserialize(d)?;
        Scene::new(targets).map_err(serde::de::Error::custom)
    }
}

/// `{0, 1, ..., N+M} \ {person}` in ascending order.
pub fn eligible_vfoa_labels(scene: &Scene, person: TargetId) -> Result<Vec<TargetId>> {
    let t = scene.target(person)?;
    if !t.tracked {
        return Err(Error::InvalidScene(format!(
            "target {person} is not a tracked person"
        )));
    }
    Ok((0..=scene.n_targets()).filter(|&j| j != person).collect())
}

/// What is observed about one target at one frame.
///
/// For a tracked person `direction` is the head orientation H and `vfoa` the
/// optional annotation. For an untracked active target they are the known gaze
/// and known VFOA. Passive targets only carry a position.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TargetObs {
    pub position: Option<Position3D>,
    pub direction: Option<Direction>,
    pub vfoa: Option<TargetId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    /// 1-based frame index.
    pub frame: usize,
    /// Indexed by `id - 1`.
    pub targets: Vec<TargetObs>,
}

impl FrameObservation {
    pub fn empty(frame: usize, n_targets: usize) -> Self {
        Self {
            frame,
            targets: vec![TargetObs::default(); n_targets],
        }
    }

    pub fn get(&self, id: TargetId) -> Result<&TargetObs> {
        id.checked_sub(1)
            .and_then(|i| self.targets.get(i))
            .ok_or(Error::UnknownTarget(id))
    }

    pub fn get_mut(&mut self, id: TargetId) -> Result<&mut TargetObs> {
        id.checked_sub(1)
            .and_then(|i| self.targets.get_mut(i))
            .ok_or(Error::UnknownTarget(id))
    }

    pub fn position(&self, id: TargetId) -> Result<Position3D> {
        self.get(id)?.position.ok_or_else(|| {
            Error::InvalidScene(format!("frame {}: no position for target {id}", self.frame))
        })
    }

    /// All positions, in id order. Fails if any is missing.
    pub fn positions(&self) -> Result<Vec<Position3D>> {
        (1..=self.targets.len())
            .map(|id| self.position(id))
            .collect()
    }

    pub fn head(&self, person: TargetId) -> Result<Direction> {
        self.get(person)?.direction.ok_or_else(|| {
            Error::InvalidScene(format!(
                "frame {}: no head orientation for person {person}",
                self.frame
            ))
        })
    }

    /// VFOA of an untracked active target: the supplied label, or the one read
    /// off its known gaze.
    pub fn known_vfoa(&self, id: TargetId) -> Result<TargetId> {
        let obs = self.get(id)?;
        if let Some(v) = obs.vfoa {
            return Ok(v);
        }
        match obs.direction {
            Some(gaze) => {
                vfoa_from_gaze_geometric(&gaze, &self.positions()?, id, DEFAULT_GAZE_THRESHOLD_DEG)
            }
            None => Err(Error::InvalidScene(format!(
                "frame {}: target {id} has neither a known VFOA nor a known gaze",
                self.frame
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub scene: Scene,
    pub frames: Vec<FrameObservation>,
    /// Seconds per frame. Metadata only: the dynamics run in frame units.
    pub dt: f64,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Annotation of `person` at every frame.
    pub fn annotations(&self, person: TargetId) -> Result<Vec<Option<TargetId>>> {
        self.frames
            .iter()
            .map(|f| Ok(f.get(person)?.vfoa))
            .collect()
    }

    /// Annotation of `person` at every frame, failing on the first gap.
    pub fn full_annotations(&self, person: TargetId) -> Result<Vec<TargetId>> {
        self.frames
            .iter()
            .map(|f| {
                f.get(person)?.vfoa.ok_or(Error::NotAnnotated {
                    frame: f.frame,
                    person,
                })
            })
            .collect()
    }

    /// Fails unless [`validate_recording`] reports nothing.
    pub fn check(&self) -> Result<()> {
        let v = validate_recording(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidRecording(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    BadDt(f64),
    FrameIndex {
        position: usize,
        found: usize,
    },
    TargetCount {
        frame: usize,
        found: usize,
        expected: usize,
    },
    MissingPosition {
        frame: usize,
        target: TargetId,
    },
    MissingHead {
        frame: usize,
        person: TargetId,
    },
    MissingUntrackedInfo {
        frame: usize,
        target: TargetId,
    },
    UnexpectedField {
        frame: usize,
        target: TargetId,
        field: &'static str,
    },
    SelfVfoa {
        frame: usize,
        person: TargetId,
    },
    LabelOutOfRange {
        frame: usize,
        target: TargetId,
        label: TargetId,
    },
    NonFinite {
        frame: usize,
        target: TargetId,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            Empty => write!(f, "recording has no frames"),
            BadDt(dt) => write!(f, "dt must be positive and finite, got {dt}"),
            FrameIndex { position, found } => {
                write!(
                    f,
                    "frame #{position} has index {found}, expected {position}"
                )
            }
            TargetCount {
                frame,
                found,
                expected,
            } => write!(
                f,
                "frame {frame}: {found} target entries, expected {expected}"
            ),
            MissingPosition { frame, target } => {
                write!(f, "frame {frame}: missing position of target {target}")
            }
            MissingHead { frame, person } => {
                write!(
                    f,
                    "frame {frame}: missing head orientation of person {person}"
                )
            }
            MissingUntrackedInfo { frame, target } => write!(
                f,
                "frame {frame}: untracked active target {target} needs a known gaze or VFOA"
            ),
            UnexpectedField {
                frame,
                target,
                field,
            } => {
                write!(
                    f,
                    "frame {frame}: passive target {target} carries a {field}"
                )
            }
            SelfVfoa { frame, person } => write!(f, "frame {frame}: self-VFOA for person {person}"),
            LabelOutOfRange {
                frame,
                target,
                label,
            } => {
                write!(
                    f,
                    "frame {frame}: label {label} of target {target} is out of range"
                )
            }
            NonFinite { frame, target } => {
                write!(f, "frame {frame}: non-finite value for target {target}")
            }
        }
    }
}

/// Lists every problem found; an empty list means the recording is usable.
pub fn validate_recording(rec: &Recording) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(rec.dt > 0.0 && rec.dt.is_finite()) {
        out.push(Violation::BadDt(rec.dt));
    }
    if rec.frames.is_empty() {
        out.push(Violation::Empty);
    }
    let scene = &rec.scene;
    let n = scene.n_targets();
    for (pos, f) in rec.frames.iter().enumerate() {
        let frame = f.frame;
        if frame != pos + 1 {
            out.push(Violation::FrameIndex {
                position: pos + 1,
                found: frame,
            });
        }
        if f.targets.len() != n {
            out.push(Violation::TargetCount {
                frame,
                found: f.targets.len(),
                expected: n,
            });
            continue;
        }
        for (idx, obs) in f.targets.iter().enumerate() {
            let id = idx + 1;
            let t = &scene.targets()[idx];
            match obs.position {
                None => out.push(Violation::MissingPosition { frame, target: id }),
                Some(p) if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) => {
                    out.push(Violation::NonFinite { frame, target: id })
                }
                _ => {}
            }
            if let Some(d) = obs.direction {
                if !(d.pan().is_finite() && d.tilt().is_finite()) {
                    out.push(Violation::NonFinite { frame, target: id });
                }
            }
            if let Some(v) = obs.vfoa {
                if v == id {
                    out.push(Violation::SelfVfoa { frame, person: id });
                } else if v > n {
                    out.push(Violation::LabelOutOfRange {
                        frame,
                        target: id,
                        label: v,
                    });
                }
            }
            match (t.kind, t.tracked) {
                (TargetKind::Active, true) => {
                    if obs.direction.is_none() {
                        out.push(Violation::MissingHead { frame, person: id });
                    }
                }
                (TargetKind::Active, false) => {
                    if obs.direction.is_none() && obs.vfoa.is_none() {
                        out.push(Violation::MissingUntrackedInfo { frame, target: id });
                    }
                }
                (TargetKind::Passive, _) => {
                    if obs.direction.is_some() {
                        out.push(Violation::UnexpectedField {
                            frame,
                            target: id,
                            field: "direction",
                        });
                    }
                    if obs.vfoa.is_some() {
                        out.push(Violation::UnexpectedField {
                            frame,
                            target: id,
                            field: "vfoa",
                        });
                    }
                }
            }
        }
    }
    out
}
