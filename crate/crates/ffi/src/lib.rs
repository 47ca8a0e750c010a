//! C ABI over the `vfoa-skf` tracker.
//!
//! Every function returns a [`VfoaStatus`]; on failure the message is
//! available from [`vfoa_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Scene, parameter and
//! table inputs are the JSON files used by the command-line tool.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use vfoa_skf::io;
use vfoa_skf::scene::TargetObs;
use vfoa_skf::tracker::{TrackerState, UpdateReport};
use vfoa_skf::{
    Direction, Error, FrameObservation, ModelParams, Position3D, Tracker, TrackerConfig,
    TransitionTable,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VfoaStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad argument at the C boundary: invalid UTF-8, wrong length, index
    /// out of range.
    InvalidArgument = 2,
    Io = 3,
    /// Malformed JSON or CSV input.
    Format = 4,
    /// Well-formed input that violates the model: scene, parameters,
    /// table, labels or observations.
    InvalidInput = 5,
    Numerical = 6,
    /// A query that needs at least one absorbed frame.
    NoFrame = 7,
    Panic = 8,
}

/// Observation of one target at one frame. Flags are 0 or 1.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VfoaTargetObservation {
    pub has_position: i32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub has_direction: i32,
    /// Degrees.
    pub pan: f64,
    /// Degrees.
    pub tilt: f64,
    /// Known VFOA of an untracked active target, or -1.
    pub vfoa: i64,
}

/// Online tracker: the first frame initializes, later frames update.
pub struct VfoaTracker {
    tracker: Tracker,
    state: Option<TrackerState>,
    last: UpdateReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(VfoaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => VfoaStatus::Io,
            Error::Format { .. }
            | Error::InvalidFile { .. }
            | Error::MissingField { .. }
            | Error::Json(_)
            | Error::Csv(_) => VfoaStatus::Format,
            Error::Singular(_) | Error::Unnormalized { .. } | Error::EStep { .. } => {
                VfoaStatus::Numerical
            }
            _ => VfoaStatus::InvalidInput,
        };
        Failure(code, e.to_string())
    }
}

fn fail<T>(code: VfoaStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(code, msg.into()))
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VfoaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            VfoaStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            VfoaStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(VfoaStatus::NullPointer, format!("{what} is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(
            VfoaStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        ),
    }
}

unsafe fn opt_path_arg(p: *const c_char, what: &str) -> Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        path_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a>(t: *const VfoaTracker) -> Result<&'a VfoaTracker, Failure> {
    t.as_ref()
        .map_or_else(|| fail(VfoaStatus::NullPointer, "tracker is null"), Ok)
}

fn load_model(
    params: Option<PathBuf>,
    table: Option<PathBuf>,
) -> Result<(ModelParams, TransitionTable), Failure> {
    let p = match params {
        Some(p) => io::load_params(&p)?,
        None => ModelParams::standard_init(),
    };
    let t = match table {
        Some(t) => io::load_table(&t)?,
        None => TransitionTable::uniform(),
    };
    Ok((p, t))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn vfoa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vfoa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a tracker for the scene in `scene_path`. `params_path` and
/// `table_path` may be null for the standard initialization and a uniform
/// table. `init_max_iter` of 0 keeps the default.
///
/// # Safety
/// Path arguments must be null or NUL-terminated strings; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vfoa_tracker_new(
    scene_path: *const c_char,
    params_path: *const c_char,
    table_path: *const c_char,
    init_max_iter: u32,
    out: *mut *mut VfoaTracker,
) -> VfoaStatus {
    guard(|| {
        if out.is_null() {
            return fail(VfoaStatus::NullPointer, "out is null");
        }
        *out = std::ptr::null_mut();
        let scene = io::load_scene(&path_arg(scene_path, "scene_path")?)?;
        let (params, table) = load_model(
            opt_path_arg(params_path, "params_path")?,
            opt_path_arg(table_path, "table_path")?,
        )?;
        let mut config = TrackerConfig::default();
        if init_max_iter > 0 {
            config.init_max_iter = init_max_iter as usize;
        }
        let tracker = Tracker::new(scene.targets, params, table, config)?;
        *out = Box::into_raw(Box::new(VfoaTracker {
            tracker,
            state: None,
            last: UpdateReport::default(),
        }));
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle from [`vfoa_tracker_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vfoa_tracker_free(t: *mut VfoaTracker) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of targets `N + M` in the scene; weight vectors have one more
/// entry (label 0).
///
/// # Safety
/// `t` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vfoa_tracker_num_targets(
    t: *const VfoaTracker,
    out: *mut u32,
) -> VfoaStatus {
    guard(|| {
        let t = handle(t)?;
        if out.is_null() {
            return fail(VfoaStatus::NullPointer, "out is null");
        }
        *out = t.tracker.scene().n_targets() as u32;
        Ok(())
    })
}

/// Number of tracked persons; estimates are indexed `0..count` in id order.
///
/// # Safety
/// `t` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vfoa_tracker_num_persons(
    t: *const VfoaTracker,
    out: *mut u32,
) -> VfoaStatus {
    guard(|| {
        let t = handle(t)?;
        if out.is_null() {
            return fail(VfoaStatus::NullPointer, "out is null");
        }
        *out = t.tracker.scene().tracked().len() as u32;
        Ok(())
    })
}

fn frame_from(index: usize, obs: &[VfoaTargetObservation]) -> Result<FrameObservation, Failure> {
    let mut f = FrameObservation::empty(index, obs.len());
    for (k, o) in obs.iter().enumerate() {
        let position = match o.has_position {
            0 => None,
            _ => Some(Position3D::new(o.x, o.y, o.z)?),
        };
        let direction = match o.has_direction {
            0 => None,
            _ => Some(Direction::new(o.pan, o.tilt)?),
        };
        let vfoa = match o.vfoa {
            v if v < 0 => None,
            v => Some(v as usize),
        };
        f.targets[k] = TargetObs {
            position,
            direction,
            vfoa,
        };
    }
    Ok(f)
}

/// Absorbs one frame. `obs` holds one entry per target in id order
/// (`count` must equal the number of targets). On failure the tracker
/// keeps its previous state.
///
/// # Safety
/// `t` must be a live handle and `obs` must point to `count` entries.
#[no_mangle]
pub unsafe extern "C" fn vfoa_tracker_step(
    t: *mut VfoaTracker,
    obs: *const VfoaTargetObservation,
    count: usize,
) -> VfoaStatus {
    guard(|| {
        let t = match t.as_mut() {
            Some(t) => t,
            None => return fail(VfoaStatus::NullPointer, "tracker is null"),
        };
        if obs.is_null() {
            return fail(VfoaStatus::NullPointer, "obs is null");
        }
        let n = t.tracker.scene().n_targets();
        if count != n {
            return fail(
                VfoaStatus::InvalidArgument,
                format!("{count} observations for a scene with {n} targets"),
            );
        }
        let obs = std::slice::from_raw_parts(obs, count);
        match &mut t.state {
            None => {
                let frame = frame_from(1, obs)?;
                let (state, _) = t.tracker.initialize(&frame)?;
                t.state = Some(state);
            }
            Some(state) => {
                let frame = frame_from(state.frame + 1, obs)?;
                let mut next = state.clone();
                t.last = t.tracker.update(&mut next, &frame)?;
                *state = next;
            }
        }
        Ok(())
    })
}

/// Estimate for the tracked person at `person_index`: its id, MAP VFOA
/// label, gaze of that hypothesis in degrees, and optionally the weights of
/// all labels. `weights` may be null; otherwise `weights_len` must be at
/// least the number of targets plus one.
///
/// # Safety
/// `t` must be a live handle; output pointers must be valid; `weights`
/// must be null or point to `weights_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vfoa_tracker_estimate(
    t: *const VfoaTracker,
    person_index: u32,
    person_id: *mut u32,
    vfoa: *mut u32,
    gaze_pan: *mut f64,
    gaze_tilt: *mut f64,
    weights: *mut f64,
    weights_len: usize,
) -> VfoaStatus {
    guard(|| {
        let t = handle(t)?;
        if person_id.is_null() || vfoa.is_null() || gaze_pan.is_null() || gaze_tilt.is_null() {
            return fail(VfoaStatus::NullPointer, "output pointer is null");
        }
        let state = match &t.state {
            Some(s) => s,
            None => return fail(VfoaStatus::NoFrame, "no frame has been absorbed"),
        };
        let b = match state.beliefs.get(person_index as usize) {
            Some(b) => b,
            None => {
                return fail(
                    VfoaStatus::InvalidArgument,
                    format!(
                        "person index {person_index} out of range ({} persons)",
                        state.beliefs.len()
                    ),
                )
            }
        };
        let label = b.map_label();
        let g = b.gaze(label);
        if !weights.is_null() {
            let w = b.weights();
            if weights_len < w.len() {
                return fail(
                    VfoaStatus::InvalidArgument,
                    format!(
                        "weights buffer holds {weights_len} values, {} needed",
                        w.len()
                    ),
                );
            }
            std::slice::from_raw_parts_mut(weights, w.len()).copy_from_slice(&w);
        }
        *person_id = b.person as u32;
        *vfoa = label as u32;
        *gaze_pan = g.pan();
        *gaze_tilt = g.tilt();
        Ok(())
    })
}

/// Largest gaze-to-head distance after the last update, degrees (0 before
/// the second frame).
///
/// # Safety
/// `t` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vfoa_tracker_last_gaze_head_distance(
    t: *const VfoaTracker,
    out: *mut f64,
) -> VfoaStatus {
    guard(|| {
        let t = handle(t)?;
        if out.is_null() {
            return fail(VfoaStatus::NullPointer, "out is null");
        }
        *out = t.last.max_gaze_head_distance;
        Ok(())
    })
}

/// Tracks a whole recording (`<stem>`, `<stem>.json` or `<stem>.csv`) and
/// writes the per-frame CSV the command-line `track` produces.
///
/// # Safety
/// Path arguments must be null (params, table only) or NUL-terminated
/// strings.
#[no_mangle]
pub unsafe extern "C" fn vfoa_track_recording(
    recording_path: *const c_char,
    params_path: *const c_char,
    table_path: *const c_char,
    out_csv_path: *const c_char,
) -> VfoaStatus {
    guard(|| {
        let rec = io::load_recording(&path_arg(recording_path, "recording_path")?)?;
        let out = path_arg(out_csv_path, "out_csv_path")?;
        let (params, table) = load_model(
            opt_path_arg(params_path, "params_path")?,
            opt_path_arg(table_path, "table_path")?,
        )?;
        let result = vfoa_skf::track(&rec, &params, &table, &TrackerConfig::default())?;
        io::save_track_csv(&out, &result)?;
        Ok(())
    })
}
