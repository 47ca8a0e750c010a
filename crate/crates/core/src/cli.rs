//! The `vfoa-skf` command line: simulate, learn, track, evaluate, bench.
//!
//! Every command writes `manifest.json` into its output directory before any
//! result, and `outputs.json` (sha256 of each output plus the manifest hash)
//! after the outputs have been re-read and checked.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bench::{run_bench, BenchConfig};
use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::io::{self, SceneFile};
use crate::learning::{em_fit, EmOptions};
use crate::metrics::{self, DEFAULT_SRR_THRESHOLD};
use crate::scene::{Recording, TargetId};
use crate::synth::{easy_scene_preset, sample_recording, SynthConfig};
use crate::tracker::{track, TrackerConfig};
use crate::transitions::{learn_table, TransitionTable};

pub const THREADS_ENV: &str = "VFOA_SKF_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "vfoa-skf",
    version,
    about = "Gaze and VFOA tracking with a switching Kalman filter"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample synthetic recordings with latent ground truth.
    Simulate(SimulateArgs),
    /// Learn the transition table and model parameters from annotated recordings.
    Learn(LearnArgs),
    /// Run the tracker over one recording.
    Track(TrackArgs),
    /// Score tracks against annotations.
    Evaluate(EvaluateArgs),
    /// Time filter updates over a grid of scene sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Generator config JSON; the built-in easy preset when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Number of recordings; recording k uses seed + k.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// File stem of the outputs.
    #[arg(long, default_value = "recording")]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    /// Directory of `<stem>.json` + `<stem>.csv` recordings.
    #[arg(long)]
    pub data: PathBuf,
    /// Initial parameters; the standard initialization when omitted.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Add-one smoothing of the transition counts.
    #[arg(long)]
    pub add_one: bool,
    /// One fit per recording, trained on all the others.
    #[arg(long)]
    pub leave_one_out: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Recording CSV (or its stem).
    #[arg(long)]
    pub recording: PathBuf,
    /// Scene JSON; `<stem>.json` next to the recording when omitted.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub init_max_iter: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Track CSV; repeat once per recording, paired in order with --recording.
    #[arg(long, required = true)]
    pub track: Vec<PathBuf>,
    /// Annotated recording CSV (or stem) holding the ground truth.
    #[arg(long, required = true)]
    pub recording: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "frr,confusion,srr,ap")]
    pub metrics: Vec<MetricKind>,
    #[arg(long, default_value_t = DEFAULT_SRR_THRESHOLD)]
    pub srr_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Frr,
    Confusion,
    Srr,
    Ap,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub n_active: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6")]
    pub m_passive: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config_paths: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub params: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub started_unix_s: f64,
}

#[derive(Debug, Serialize)]
struct OutputEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct OutputsFile {
    manifest_sha256: String,
    elapsed_s: f64,
    outputs: Vec<OutputEntry>,
}

fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let digest = Sha256::digest(&bytes);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok((hex, bytes.len() as u64))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Bookkeeping for one command run.
struct Run {
    out: PathBuf,
    manifest_sha: String,
    started: Instant,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn start(manifest: RunManifest) -> Result<Self> {
        mkdir(&manifest.out_dir)?;
        let out = manifest.out_dir.clone();
        let path = out.join("manifest.json");
        io::save_json(&path, &manifest)?;
        Ok(Self {
            manifest_sha: sha256_file(&path)?.0,
            out,
            started: Instant::now(),
            outputs: Vec::new(),
        })
    }

    fn record(&mut self, p: PathBuf) {
        self.outputs.push(p);
    }

    fn finish(self) -> Result<()> {
        let mut outputs = Vec::new();
        for p in &self.outputs {
            let (sha256, bytes) = sha256_file(p)?;
            let rel = p.strip_prefix(&self.out).unwrap_or(p);
            outputs.push(OutputEntry {
                path: rel.to_string_lossy().into_owned(),
                bytes,
                sha256,
            });
        }
        io::save_json(
            &self.out.join("outputs.json"),
            &OutputsFile {
                manifest_sha256: self.manifest_sha,
                elapsed_s: self.started.elapsed().as_secs_f64(),
                outputs,
            },
        )
    }
}

fn manifest(command: &str, out: &Path) -> RunManifest {
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    RunManifest {
        tool: "vfoa-skf",
        version: env!("CARGO_PKG_VERSION"),
        command: command.into(),
        args: std::env::args().collect(),
        config_paths: Vec::new(),
        seed: None,
        params: None,
        table: None,
        out_dir: out.to_path_buf(),
        threads: rayon::current_num_threads(),
        started_unix_s: started,
    }
}

/// Caps the global worker pool from `VFOA_SKF_THREADS`, if set.
pub fn init_thread_pool() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::InvalidParams(format!(
            "{THREADS_ENV} must be a positive integer, got `{v}`"
        ))
    })?;
    // a pool built earlier in the same process keeps its size
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Learn(a) => learn(&a),
        Command::Track(a) => track_cmd(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Bench(a) => bench(&a),
    }
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => io::load_json(p)?,
        None => easy_scene_preset(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(f) = a.frames {
        cfg.frames = f;
    }
    if a.count == 0 {
        return Err(Error::InvalidParams("--count must be at least 1".into()));
    }
    cfg.validate()?;
    let mut m = manifest("simulate", &a.out);
    m.config_paths = a.config.iter().cloned().collect();
    m.seed = Some(cfg.seed);
    let mut run = Run::start(m)?;
    let used = run.out.join("config.json");
    io::save_json(&used, &cfg)?;
    run.record(used);
    for k in 0..a.count {
        let stem = if a.count == 1 {
            a.name.clone()
        } else {
            format!("{}-{k:03}", a.name)
        };
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(k as u64);
        let (rec, truth) = sample_recording(&c)?;
        let (scene_path, csv_path) = io::save_recording(&run.out, &stem, &rec, None)?;
        let truth_path = io::truth_path(&csv_path);
        io::save_truth_csv(&truth_path, &truth)?;
        if io::load_recording(&csv_path)? != rec || io::load_truth_csv(&truth_path)? != truth {
            return Err(Error::Synthesis(format!(
                "{stem}: written files do not read back identically"
            )));
        }
        run.record(scene_path);
        run.record(csv_path);
        run.record(truth_path);
    }
    run.finish()
}

/// Recordings in `dir`: every `<stem>.csv` (other than truth sidecars) with a
/// `<stem>.json` beside it, sorted by stem.
pub fn discover_recordings(dir: &Path) -> Result<Vec<(String, Recording)>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut stems = Vec::new();
    for e in entries {
        let p = e
            .map_err(|source| Error::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        let name = p
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        if let Some(stem) = name.strip_suffix(".csv") {
            if !stem.ends_with(".truth") && p.with_extension("json").is_file() {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::InvalidParams(format!(
            "no recordings found in {}",
            dir.display()
        )));
    }
    stems
        .into_iter()
        .map(|s| {
            Ok((
                s.clone(),
                io::load_recording(&dir.join(format!("{s}.csv")))?,
            ))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct FitSummary {
    training: Vec<String>,
    iterations: usize,
    converged: bool,
    final_loglik: Option<f64>,
    warnings: Vec<String>,
}

fn fit_and_write(
    dir: &Path,
    names: Vec<String>,
    data: &[Recording],
    init: &ModelParams,
    a: &LearnArgs,
) -> Result<Vec<PathBuf>> {
    let table = learn_table(data, a.add_one)?;
    let opts = EmOptions {
        max_iters: a.max_iters,
        tol: a.tol,
        ..EmOptions::default()
    };
    let fit = em_fit(data, init, &opts)?;
    mkdir(dir)?;
    let paths = [
        dir.join("params.json"),
        dir.join("table.json"),
        dir.join("loglik.csv"),
        dir.join("fit.json"),
    ];
    io::save_json(&paths[0], &fit.params)?;
    io::save_json(&paths[1], &table)?;
    io::save_loglik_csv(&paths[2], &fit.loglik)?;
    io::save_json(
        &paths[3],
        &FitSummary {
            training: names,
            iterations: fit.iterations,
            converged: fit.converged,
            final_loglik: fit.loglik.last().copied(),
            warnings: fit.warnings.clone(),
        },
    )?;
    if io::load_params(&paths[0])? != fit.params || io::load_table(&paths[1])? != table {
        return Err(Error::InvalidParams(format!(
            "{}: fitted files do not read back identically",
            dir.display()
        )));
    }
    Ok(paths.to_vec())
}

fn learn(a: &LearnArgs) -> Result<()> {
    let init = match &a.params {
        Some(p) => io::load_params(p)?,
        None => ModelParams::standard_init(),
    };
    let data = discover_recordings(&a.data)?;
    for (name, rec) in &data {
        for &p in rec.scene.tracked() {
            rec.full_annotations(p)
                .map_err(|e| Error::InvalidParams(format!("{name}: {e}")))?;
        }
    }
    let mut m = manifest("learn", &a.out);
    m.config_paths = vec![a.data.clone()];
    m.params = a.params.clone();
    let mut run = Run::start(m)?;
    if !a.leave_one_out {
        let names: Vec<String> = data.iter().map(|d| d.0.clone()).collect();
        let recs: Vec<Recording> = data.into_iter().map(|d| d.1).collect();
        for p in fit_and_write(&run.out, names, &recs, &init, a)? {
            run.record(p);
        }
        return run.finish();
    }
    if data.len() < 2 {
        return Err(Error::InvalidParams(
            "leave-one-out needs at least two recordings".into(),
        ));
    }
    let folds: Vec<Result<Vec<PathBuf>>> = (0..data.len())
        .into_par_iter()
        .map(|q| {
            let (names, recs): (Vec<String>, Vec<Recording>) = data
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != q)
                .map(|(_, d)| d.clone())
                .unzip();
            fit_and_write(
                &run.out.join(format!("fold-{}", data[q].0)),
                names,
                &recs,
                &init,
                a,
            )
        })
        .collect();
    for f in folds {
        for p in f? {
            run.record(p);
        }
    }
    run.finish()
}

fn load_recording_with(recording: &Path, scene: Option<&Path>) -> Result<Recording> {
    let (scene_path, csv_path) = io::recording_paths(recording);
    let sf: SceneFile = io::load_scene(scene.unwrap_or(&scene_path))?;
    io::load_recording_csv(&csv_path, &sf)
}

fn track_cmd(a: &TrackArgs) -> Result<()> {
    let rec = load_recording_with(&a.recording, a.scene.as_deref())?;
    let params = match &a.params {
        Some(p) => io::load_params(p)?,
        None => ModelParams::standard_init(),
    };
    let table = match &a.table {
        Some(p) => io::load_table(p)?,
        None => {
            log::warn!("no --table given: uniform transitions let label 0 absorb most frames; pass a learned table");
            TransitionTable::uniform()
        }
    };
    let config = TrackerConfig {
        init_max_iter: a.init_max_iter,
        ..TrackerConfig::default()
    };
    let mut m = manifest("track", &a.out);
    m.config_paths = vec![a.recording.clone()];
    m.config_paths.extend(a.scene.clone());
    m.params = a.params.clone();
    m.table = a.table.clone();
    let mut run = Run::start(m)?;
    let out = track(&rec, &params, &table, &config)?;
    let path = run.out.join("track.csv");
    io::save_track_csv(&path, &out)?;
    let rows = io::load_track_csv(&path)?;
    if rows.len() != rec.len() * out.persons.len() {
        return Err(Error::InvalidParams(
            "track output has the wrong number of rows".into(),
        ));
    }
    if let Some(r) = rows
        .iter()
        .find(|r| (r.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9)
    {
        return Err(Error::InvalidParams(format!(
            "frame {}: weights of person {} do not sum to 1",
            r.frame, r.person
        )));
    }
    run.record(path);
    let summary = run.out.join("summary.json");
    io::save_json(
        &summary,
        &serde_json::json!({
            "frames": rec.len(),
            "persons": out.persons,
            "init_iterations": out.init.iterations,
            "init_converged": out.init.converged,
            "flagged_frames": out.flagged_frames,
            "max_gaze_head_distance": out.max_gaze_head_distance,
            "max_weight_error": out.max_weight_error,
        }),
    )?;
    run.record(summary);
    run.finish()
}

#[derive(Debug, Serialize)]
struct RecordingReport {
    track: PathBuf,
    recording: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    frr_per_person: Option<BTreeMap<TargetId, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frr_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mutual_gaze_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    looking_at_each_other: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gaze_rmse_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    head_rmse_deg: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    metrics: Vec<MetricKind>,
    recordings: Vec<RecordingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frr_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confusion: Option<ConfusionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    srr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ap: Option<f64>,
    srr_threshold: f64,
}

#[derive(Debug, Serialize)]
struct ConfusionReport {
    labels: Vec<TargetId>,
    counts: Vec<Vec<u64>>,
    normalized: Vec<Vec<f64>>,
}

/// Predicted labels and gazes of each person, in frame order.
type PersonTracks = BTreeMap<TargetId, (Vec<TargetId>, Vec<crate::geometry::Direction>)>;

fn person_tracks(path: &Path, rows: &[io::TrackRow], rec: &Recording) -> Result<PersonTracks> {
    let mut out = PersonTracks::new();
    for r in rows {
        let e = out.entry(r.person).or_default();
        e.0.push(r.vfoa);
        e.1.push(r.gaze);
    }
    let persons: Vec<TargetId> = out.keys().copied().collect();
    if persons != rec.scene.tracked() {
        return Err(Error::Metric(format!(
            "{}: persons {persons:?} do not match the tracked persons {:?} of the recording",
            path.display(),
            rec.scene.tracked()
        )));
    }
    for (p, (v, _)) in &out {
        if v.len() != rec.len() {
            return Err(Error::Metric(format!(
                "{}: {} frames for person {p}, recording has {}",
                path.display(),
                v.len(),
                rec.len()
            )));
        }
    }
    Ok(out)
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    if a.track.len() != a.recording.len() {
        return Err(Error::InvalidParams(format!(
            "{} --track values for {} --recording values",
            a.track.len(),
            a.recording.len()
        )));
    }
    let want = |k: MetricKind| a.metrics.contains(&k);
    let mut m = manifest("evaluate", &a.out);
    m.config_paths = a.track.iter().chain(&a.recording).cloned().collect();
    let mut run = Run::start(m)?;

    let mut reports = Vec::new();
    let mut frr_rows = Vec::new();
    let mut all_pred = Vec::new();
    let mut all_gt = Vec::new();
    let mut n_labels = 0;
    let mut shot_scores = Vec::new();
    let mut shot_labels = Vec::new();
    let mut shot_rows = Vec::new();
    for (tp, rp) in a.track.iter().zip(&a.recording) {
        let rec = io::load_recording(rp)?;
        let rows = io::load_track_csv(tp)?;
        let tracks = person_tracks(tp, &rows, &rec)?;
        n_labels = n_labels.max(rec.scene.n_targets());
        let mut rep = RecordingReport {
            track: tp.clone(),
            recording: rp.clone(),
            frr_per_person: None,
            frr_mean: None,
            mutual_gaze_score: None,
            looking_at_each_other: None,
            gaze_rmse_deg: None,
            head_rmse_deg: None,
        };
        if want(MetricKind::Frr) {
            let mut per = BTreeMap::new();
            for (p, (v, _)) in &tracks {
                let f = metrics::frr(v, &rec.annotations(*p)?)
                    .map_err(|e| Error::Metric(format!("{}: person {p}: {e}", rp.display())))?;
                frr_rows.push(vec![rp.display().to_string(), p.to_string(), f.to_string()]);
                per.insert(*p, f);
            }
            rep.frr_mean = Some(per.values().sum::<f64>() / per.len() as f64);
            rep.frr_per_person = Some(per);
        }
        if want(MetricKind::Confusion) {
            for (p, (v, _)) in &tracks {
                all_pred.extend_from_slice(v);
                all_gt.extend(rec.annotations(*p)?);
            }
        }
        if (want(MetricKind::Srr) || want(MetricKind::Ap)) && tracks.len() >= 2 {
            let pred: Vec<(TargetId, Vec<TargetId>)> =
                tracks.iter().map(|(p, t)| (*p, t.0.clone())).collect();
            let gt: Vec<(TargetId, Vec<TargetId>)> = tracks
                .keys()
                .map(|&p| {
                    Ok((
                        p,
                        rec.annotations(p)?
                            .into_iter()
                            .map(|v| v.unwrap_or(0))
                            .collect(),
                    ))
                })
                .collect::<Result<_>>()?;
            let score = metrics::mutual_gaze_score(&pred)?;
            let label = metrics::mutual_gaze_score(&gt)? >= a.srr_threshold;
            rep.mutual_gaze_score = Some(score);
            rep.looking_at_each_other = Some(label);
            shot_scores.push(score);
            shot_labels.push(label);
            shot_rows.push(vec![
                rp.display().to_string(),
                score.to_string(),
                label.to_string(),
            ]);
        }
        let tpath = io::truth_path(&io::recording_paths(rp).1);
        if tpath.is_file() {
            let truth = io::load_truth_csv(&tpath)?;
            let (mut est, mut head, mut gaze) = (Vec::new(), Vec::new(), Vec::new());
            for (p, (_, g)) in &tracks {
                for (row, f) in truth.person(*p).zip(&rec.frames) {
                    est.push(g[row.frame - 1]);
                    head.push(f.head(*p)?);
                    gaze.push(row.gaze());
                }
            }
            rep.gaze_rmse_deg = Some(metrics::angular_rmse(&est, &gaze)?);
            rep.head_rmse_deg = Some(metrics::angular_rmse(&head, &gaze)?);
        }
        reports.push(rep);
    }

    let frr_mean = want(MetricKind::Frr)
        .then(|| reports.iter().filter_map(|r| r.frr_mean).sum::<f64>() / reports.len() as f64);
    let confusion = if want(MetricKind::Confusion) {
        let labels: Vec<TargetId> = (0..=n_labels).collect();
        let c = metrics::confusion(&all_pred, &all_gt, &labels)?;
        Some(ConfusionReport {
            normalized: c.normalized(),
            labels: c.labels,
            counts: c.counts,
        })
    } else {
        None
    };
    let shots_needed = want(MetricKind::Srr) || want(MetricKind::Ap);
    if shots_needed && shot_scores.is_empty() {
        return Err(Error::Metric(
            "srr/ap need recordings with at least two tracked persons".into(),
        ));
    }
    let srr = want(MetricKind::Srr)
        .then(|| metrics::srr(&shot_scores, &shot_labels, a.srr_threshold))
        .transpose()?;
    let ap = if want(MetricKind::Ap) && !shot_labels.contains(&true) {
        log::warn!("average precision is undefined without a positive shot; omitted");
        None
    } else {
        want(MetricKind::Ap)
            .then(|| metrics::average_precision(&shot_scores, &shot_labels))
            .transpose()?
    };

    if want(MetricKind::Frr) {
        let p = run.out.join("frr.csv");
        io::save_table_csv(&p, &["recording", "person", "frr"], &frr_rows)?;
        run.record(p);
    }
    if let Some(c) = &confusion {
        let p = run.out.join("confusion.csv");
        let mut header = vec!["gt\\pred".to_string()];
        header.extend(c.labels.iter().map(|l| l.to_string()));
        let rows: Vec<Vec<String>> = c
            .labels
            .iter()
            .zip(&c.normalized)
            .map(|(l, r)| {
                std::iter::once(l.to_string())
                    .chain(r.iter().map(|v| v.to_string()))
                    .collect()
            })
            .collect();
        io::save_table_csv(&p, &header, &rows)?;
        run.record(p);
    }
    if shots_needed {
        let p = run.out.join("shots.csv");
        io::save_table_csv(
            &p,
            &["recording", "score", "looking_at_each_other"],
            &shot_rows,
        )?;
        run.record(p);
    }
    let report = EvalReport {
        metrics: a.metrics.clone(),
        recordings: reports,
        frr_mean,
        confusion,
        srr,
        ap,
        srr_threshold: a.srr_threshold,
    };
    let p = run.out.join("report.json");
    io::save_json(&p, &report)?;
    run.record(p);
    run.finish()
}

fn bench(a: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        n_active: a.n_active.clone(),
        m_passive: a.m_passive.clone(),
        frames: a.frames,
        seed: a.seed,
    };
    let mut m = manifest("bench", &a.out);
    m.seed = Some(a.seed);
    let mut run = Run::start(m)?;
    let report = run_bench(&cfg)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n_active.to_string(),
                r.m_passive.to_string(),
                (r.n_active + r.m_passive).to_string(),
                r.frames.to_string(),
                r.update_seconds.to_string(),
                r.init_seconds.to_string(),
            ]
        })
        .collect();
    let csv = run.out.join("bench.csv");
    io::save_table_csv(
        &csv,
        &[
            "n_active",
            "m_passive",
            "n_plus_m",
            "frames",
            "update_seconds",
            "init_seconds",
        ],
        &rows,
    )?;
    run.record(csv);
    let json = run.out.join("bench.json");
    io::save_json(&json, &report)?;
    run.record(json);
    println!("n_active m_passive update_us");
    for r in &report.rows {
        println!(
            "{:>8} {:>9} {:>9.2}",
            r.n_active,
            r.m_passive,
            r.update_seconds * 1e6
        );
    }
    println!("fitted exponent of (N+M): {:.3}", report.exponent);
    run.finish()
}
