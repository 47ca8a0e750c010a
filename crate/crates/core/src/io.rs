//! File formats: scene JSON, recording CSV, ground-truth sidecar, parameter
//! and table JSON, track output, plus the coarse-orientation and
//! bounding-box helpers used to ingest detector output.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! `load(save(x)) == x` bit for bit.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelParams, Vec8};
use crate::error::{Error, Result};
use crate::geometry::{Direction, Position3D};
use crate::scene::{FrameObservation, Recording, Scene, TargetId, Violation};
use crate::synth::{GroundTruth, TruthRow};
use crate::tracker::TrackOutput;
use crate::transitions::TransitionTable;

pub const FORMAT_VERSION: &str = "vfoa-skf/1";
pub const DEFAULT_FACE_WIDTH_M: f64 = 0.18;
pub const RECORDING_HEADER: [&str; 8] =
    ["frame", "target_id", "x", "y", "z", "pan", "tilt", "vfoa"];
pub const TRUTH_HEADER: [&str; 11] = [
    "frame",
    "person",
    "vfoa_true",
    "gaze_pan_true",
    "gaze_tilt_true",
    "gaze_vel_pan_true",
    "gaze_vel_tilt_true",
    "ref_pan_true",
    "ref_tilt_true",
    "ref_vel_pan_true",
    "ref_vel_tilt_true",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Pinhole camera plus the camera-to-world transform `p_w = R p_c + t`.
/// Camera frame: `x` right, `y` down, `z` along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal_px: f64,
    pub principal_point: [f64; 2],
    #[serde(default = "default_face_width")]
    pub face_width_m: f64,
    #[serde(default = "identity_rows")]
    pub rotation: [[f64; 3]; 3],
    #[serde(default)]
    pub translation: [f64; 3],
}

fn default_face_width() -> f64 {
    DEFAULT_FACE_WIDTH_M
}

fn identity_rows() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

impl CameraModel {
    pub fn new(focal_px: f64, principal_point: [f64; 2]) -> Result<Self> {
        let c = Self {
            focal_px,
            principal_point,
            face_width_m: DEFAULT_FACE_WIDTH_M,
            rotation: identity_rows(),
            translation: [0.0; 3],
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err(Error::DegenerateGeometry(format!(
                "focal length {} px",
                self.focal_px
            )));
        }
        if !(self.face_width_m > 0.0 && self.face_width_m.is_finite()) {
            return Err(Error::DegenerateGeometry(format!(
                "face width {} m",
                self.face_width_m
            )));
        }
        let all = self
            .principal_point
            .iter()
            .chain(self.rotation.iter().flatten())
            .chain(self.translation.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("camera model"));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn to_world(&self, p: &Position3D) -> Result<Position3D> {
        let w =
            self.rotation_matrix() * Vector3::new(p.x, p.y, p.z) + Vector3::from(self.translation);
        Position3D::new(w[0], w[1], w[2])
    }
}

/// Pixel rectangle, `(x, y)` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

/// Face position in the camera frame: depth from the apparent face width,
/// then back-projection of the box center.
pub fn bbox_to_position(bbox: &BBox, cam: &CameraModel) -> Result<Position3D> {
    cam.validate()?;
    if !(bbox.width > 0.0 && bbox.width.is_finite() && bbox.height >= 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "bounding box {}x{}",
            bbox.width, bbox.height
        )));
    }
    let z = cam.focal_px * cam.face_width_m / bbox.width;
    let u = bbox.x + 0.5 * bbox.width;
    let v = bbox.y + 0.5 * bbox.height;
    Position3D::new(
        (u - cam.principal_point[0]) * z / cam.focal_px,
        (v - cam.principal_point[1]) * z / cam.focal_px,
        z,
    )
}

/// Head direction for a coarse orientation class.
pub fn coarse_orientation_to_direction(label: &str) -> Result<Direction> {
    let pan = match label {
        "frontal-left" => -20.0,
        "frontal-right" => 20.0,
        "profile-left" => -80.0,
        "profile-right" => 80.0,
        "backwards" => 180.0,
        other => {
            return Err(Error::InvalidScene(format!(
                "unknown coarse orientation `{other}`"
            )));
        }
    };
    Direction::new(pan, 0.0)
}

/// Contents of a scene JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub format: String,
    /// Seconds per frame.
    pub dt: f64,
    pub targets: Scene,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraModel>,
}

impl SceneFile {
    pub fn new(scene: Scene, dt: f64) -> Self {
        Self {
            format: FORMAT_VERSION.into(),
            dt,
            targets: scene,
            camera: None,
        }
    }
}

fn require_fields(path: &Path, v: &serde_json::Value, fields: &[&str]) -> Result<()> {
    let obj = v
        .as_object()
        .ok_or_else(|| fmt_err(path, 1, "expected a JSON object"))?;
    for f in fields {
        if !obj.contains_key(*f) {
            return Err(Error::MissingField {
                path: path.to_path_buf(),
                field: (*f).to_string(),
            });
        }
    }
    Ok(())
}

fn json_err(path: &Path, e: serde_json::Error) -> Error {
    fmt_err(path, e.line() as u64, e.to_string())
}

pub fn load_scene(path: &Path) -> Result<SceneFile> {
    let text = read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| json_err(path, e))?;
    require_fields(path, &v, &["format", "dt", "targets"])?;
    let s: SceneFile = serde_json::from_value(v).map_err(|e| fmt_err(path, 1, e.to_string()))?;
    if s.format != FORMAT_VERSION {
        return Err(fmt_err(
            path,
            1,
            format!(
                "unsupported format `{}`, expected `{FORMAT_VERSION}`",
                s.format
            ),
        ));
    }
    if !(s.dt > 0.0 && s.dt.is_finite()) {
        return Err(fmt_err(
            path,
            1,
            format!("dt must be positive, got {}", s.dt),
        ));
    }
    if let Some(c) = &s.camera {
        c.validate()?;
    }
    Ok(s)
}

pub fn save_scene(path: &Path, scene: &SceneFile) -> Result<()> {
    save_json(path, scene)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    load_json(path)
}

pub fn load_table(path: &Path) -> Result<TransitionTable> {
    load_json(path)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(path)?))
}

fn finish<W: Write>(path: &Path, w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| io_err(path)(e.into_error()))?
        .flush()
        .map_err(io_err(path))
}

pub fn save_recording_csv(path: &Path, rec: &Recording) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(RECORDING_HEADER)?;
    for f in &rec.frames {
        for (idx, o) in f.targets.iter().enumerate() {
            let (x, y, z) = match o.position {
                Some(p) => (p.x.to_string(), p.y.to_string(), p.z.to_string()),
                None => Default::default(),
            };
            w.write_record([
                f.frame.to_string(),
                (idx + 1).to_string(),
                x,
                y,
                z,
                opt(o.direction.map(|d| d.pan())),
                opt(o.direction.map(|d| d.tilt())),
                opt(o.vfoa),
            ])?;
        }
    }
    finish(path, w)
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.csv`.
pub fn save_recording(
    dir: &Path,
    stem: &str,
    rec: &Recording,
    camera: Option<CameraModel>,
) -> Result<(PathBuf, PathBuf)> {
    let scene_path = dir.join(format!("{stem}.json"));
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut sf = SceneFile::new(rec.scene.clone(), rec.dt);
    sf.camera = camera;
    save_scene(&scene_path, &sf)?;
    save_recording_csv(&csv_path, rec)?;
    Ok((scene_path, csv_path))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e| {
        fmt_err(
            path,
            line,
            format!("column `{name}`: cannot parse `{s}`: {e}"),
        )
    })
}

fn parse_opt<T: std::str::FromStr>(path: &Path, line: u64, name: &str, s: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_field(path, line, name, s).map(Some)
    }
}

fn check_header(path: &Path, rdr: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let h = rdr.headers()?.clone();
    let got: Vec<&str> = h.iter().map(str::trim).collect();
    if got != expected {
        return Err(fmt_err(
            path,
            1,
            format!(
                "header must be `{}`, got `{}`",
                expected.join(","),
                got.join(",")
            ),
        ));
    }
    Ok(())
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(f))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Reads a recording CSV against its scene. Every row and every semantic
/// violation is checked; all problems are reported together with the line
/// they occur on.
pub fn load_recording_csv(path: &Path, scene: &SceneFile) -> Result<Recording> {
    let n = scene.targets.n_targets();
    let mut rdr = open_csv(path)?;
    check_header(path, &mut rdr, &RECORDING_HEADER)?;
    let mut problems = Vec::new();
    let mut frames: Vec<FrameObservation> = Vec::new();
    let mut seen: HashMap<(usize, TargetId), u64> = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = line_of(&row);
        match parse_row(path, line, &row, n) {
            Err(e) => problems.push(e.to_string()),
            Ok((frame, id, obs)) => {
                if let Some(prev) = seen.insert((frame, id), line) {
                    problems.push(format!(
                        "{}:{line}: duplicate row for frame {frame}, target {id} (first on line {prev})",
                        path.display()
                    ));
                    continue;
                }
                if frame == 0 {
                    problems.push(format!(
                        "{}:{line}: frames are numbered from 1",
                        path.display()
                    ));
                    continue;
                }
                match frames.last() {
                    Some(f) if f.frame == frame => {}
                    Some(f) if frame != f.frame + 1 => {
                        problems.push(format!(
                            "{}:{line}: frame {frame} follows frame {}",
                            path.display(),
                            f.frame
                        ));
                        continue;
                    }
                    None if frame != 1 => {
                        problems.push(format!(
                            "{}:{line}: first frame is {frame}, expected 1",
                            path.display()
                        ));
                        continue;
                    }
                    _ => frames.push(FrameObservation::empty(frame, n)),
                }
                *frames.last_mut().expect("pushed").get_mut(id)? = obs;
            }
        }
    }
    for f in &frames {
        for id in 1..=n {
            if !seen.contains_key(&(f.frame, id)) {
                problems.push(format!(
                    "{}: frame {}: no row for target {id}",
                    path.display(),
                    f.frame
                ));
            }
        }
    }
    let rec = Recording {
        scene: scene.targets.clone(),
        frames,
        dt: scene.dt,
    };
    if problems.is_empty() {
        for v in crate::scene::validate_recording(&rec) {
            let line = violation_key(&v)
                .and_then(|k| seen.get(&k))
                .copied()
                .unwrap_or(0);
            problems.push(format!("{}:{line}: {v}", path.display()));
        }
    }
    if !problems.is_empty() {
        return Err(Error::InvalidFile {
            path: path.to_path_buf(),
            problems,
        });
    }
    Ok(rec)
}

fn violation_key(v: &Violation) -> Option<(usize, TargetId)> {
    use Violation::*;
    match *v {
        MissingPosition { frame, target }
        | MissingUntrackedInfo { frame, target }
        | UnexpectedField { frame, target, .. }
        | LabelOutOfRange { frame, target, .. }
        | NonFinite { frame, target } => Some((frame, target)),
        MissingHead { frame, person } | SelfVfoa { frame, person } => Some((frame, person)),
        _ => None,
    }
}

fn parse_row(
    path: &Path,
    line: u64,
    row: &csv::StringRecord,
    n: usize,
) -> Result<(usize, TargetId, crate::scene::TargetObs)> {
    if row.len() != RECORDING_HEADER.len() {
        return Err(fmt_err(
            path,
            line,
            format!("expected 8 columns, got {}", row.len()),
        ));
    }
    let frame: usize = parse_field(path, line, "frame", &row[0])?;
    let id: TargetId = parse_field(path, line, "target_id", &row[1])?;
    if id == 0 || id > n {
        return Err(fmt_err(path, line, format!("unknown target id {id}")));
    }
    let xyz: Vec<Option<f64>> = (2..5)
        .map(|c| parse_opt(path, line, RECORDING_HEADER[c], &row[c]))
        .collect::<Result<_>>()?;
    let position = match (xyz[0], xyz[1], xyz[2]) {
        (Some(x), Some(y), Some(z)) => {
            Some(Position3D::new(x, y, z).map_err(|e| fmt_err(path, line, e.to_string()))?)
        }
        (None, None, None) => None,
        _ => return Err(fmt_err(path, line, "position needs all of x, y, z")),
    };
    let pan: Option<f64> = parse_opt(path, line, "pan", &row[5])?;
    let tilt: Option<f64> = parse_opt(path, line, "tilt", &row[6])?;
    let direction = match (pan, tilt) {
        (Some(p), Some(t)) => {
            Some(Direction::new(p, t).map_err(|e| fmt_err(path, line, e.to_string()))?)
        }
        (None, None) => None,
        _ => return Err(fmt_err(path, line, "direction needs both pan and tilt")),
    };
    let vfoa = parse_opt(path, line, "vfoa", &row[7])?;
    Ok((
        frame,
        id,
        crate::scene::TargetObs {
            position,
            direction,
            vfoa,
        },
    ))
}

/// Loads `<stem>.json` + `<stem>.csv` given either path or the stem.
pub fn load_recording(path: &Path) -> Result<Recording> {
    let (scene_path, csv_path) = recording_paths(path);
    let scene = load_scene(&scene_path)?;
    load_recording_csv(&csv_path, &scene)
}

/// Scene and CSV paths for a recording named by its stem, `.json` or `.csv`.
pub fn recording_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("csv") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    (stem.with_extension("json"), stem.with_extension("csv"))
}

/// `<stem>.truth.csv` next to a recording CSV.
pub fn truth_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("truth.csv")
}

pub fn save_truth_csv(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRUTH_HEADER)?;
    for r in &truth.rows {
        let mut rec = vec![
            r.frame.to_string(),
            r.person.to_string(),
            r.vfoa.to_string(),
        ];
        rec.extend(r.state.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    finish(path, w)
}

pub fn load_truth_csv(path: &Path) -> Result<GroundTruth> {
    let mut rdr = open_csv(path)?;
    check_header(path, &mut rdr, &TRUTH_HEADER)?;
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = line_of(&row);
        if row.len() != TRUTH_HEADER.len() {
            return Err(fmt_err(
                path,
                line,
                format!("expected {} columns, got {}", TRUTH_HEADER.len(), row.len()),
            ));
        }
        let mut state = Vec8::zeros();
        for k in 0..8 {
            state[k] = parse_field(path, line, TRUTH_HEADER[k + 3], &row[k + 3])?;
        }
        rows.push(TruthRow {
            frame: parse_field(path, line, "frame", &row[0])?,
            person: parse_field(path, line, "person", &row[1])?,
            vfoa: parse_field(path, line, "vfoa_true", &row[2])?,
            state,
        });
    }
    Ok(GroundTruth { rows })
}

/// One row of a track CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRow {
    pub frame: usize,
    pub person: TargetId,
    pub vfoa: TargetId,
    pub gaze: Direction,
    /// Indexed by label `0..=N+M`; the person's own label is always 0.
    pub weights: Vec<f64>,
}

/// Header `frame,person,vfoa,gaze_pan,gaze_tilt,w0,...,w{N+M}`; one row per
/// frame and tracked person.
pub fn save_track_csv(path: &Path, out: &TrackOutput) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["frame", "person", "vfoa", "gaze_pan", "gaze_tilt"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..=out.n_targets).map(|j| format!("w{j}")));
    w.write_record(&header)?;
    for f in &out.frames {
        for (k, &p) in out.persons.iter().enumerate() {
            let mut rec = vec![
                f.frame.to_string(),
                p.to_string(),
                f.vfoa[k].to_string(),
                f.gaze[k].pan().to_string(),
                f.gaze[k].tilt().to_string(),
            ];
            rec.extend(f.weights[k].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    finish(path, w)
}

pub fn load_track_csv(path: &Path) -> Result<Vec<TrackRow>> {
    let mut rdr = open_csv(path)?;
    let header = rdr.headers()?.clone();
    let fixed = ["frame", "person", "vfoa", "gaze_pan", "gaze_tilt"];
    let ok = header.len() > fixed.len()
        && header.iter().take(5).eq(fixed.iter().copied())
        && header
            .iter()
            .skip(5)
            .enumerate()
            .all(|(j, h)| h == format!("w{j}"));
    if !ok {
        return Err(fmt_err(
            path,
            1,
            "header must be frame,person,vfoa,gaze_pan,gaze_tilt,w0,w1,...",
        ));
    }
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = line_of(&row);
        if row.len() != header.len() {
            return Err(fmt_err(
                path,
                line,
                format!("expected {} columns, got {}", header.len(), row.len()),
            ));
        }
        let pan = parse_field(path, line, "gaze_pan", &row[3])?;
        let tilt = parse_field(path, line, "gaze_tilt", &row[4])?;
        rows.push(TrackRow {
            frame: parse_field(path, line, "frame", &row[0])?,
            person: parse_field(path, line, "person", &row[1])?,
            vfoa: parse_field(path, line, "vfoa", &row[2])?,
            gaze: Direction::new(pan, tilt).map_err(|e| fmt_err(path, line, e.to_string()))?,
            weights: (5..row.len())
                .map(|c| parse_field(path, line, &header[c], &row[c]))
                .collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

/// `iteration,loglik`, iterations counted from 0 (the initial parameters).
pub fn save_loglik_csv(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "loglik"])?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    finish(path, w)
}

/// Writes rows of displayable cells under a header.
pub fn save_table_csv<S: AsRef<str>>(
    path: &Path,
    header: &[S],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header.iter().map(|s| s.as_ref()))?;
    for r in rows {
        w.write_record(r)?;
    }
    finish(path, w)
}
