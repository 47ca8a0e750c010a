//! Joint gaze and visual-focus-of-attention (VFOA) tracking.
//!
//! Each tracked person's head orientation is modelled as a mix of a latent
//! gaze direction and a latent head reference direction; the gaze is drawn
//! toward whatever target the person attends to. A switching Kalman filter
//! ([`tracker`]) infers gaze and VFOA frame by frame, and [`learning`] fits the
//! model parameters from annotated recordings by EM.

pub mod bench;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod io;
pub mod learning;
pub mod metrics;
pub mod scene;
pub mod synth;
pub mod tracker;
pub mod transitions;

pub use dynamics::ModelParams;
pub use error::{Error, Result};
pub use geometry::{Direction, Position3D};
pub use scene::{FrameObservation, Recording, Scene, Target, TargetId, TargetKind};
pub use tracker::{track, Tracker, TrackerConfig};
pub use transitions::TransitionTable;
