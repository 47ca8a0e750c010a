//! Update-cost benchmark over a grid of scene sizes.
//!
//! One filter update costs about `N (N+M)^2` Kalman steps: every tracked
//! person carries `N+M` hypotheses and each is propagated under every
//! previous one. The fitted exponent of `N+M` should therefore be near 2.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::geometry::{direction_from_points, Direction, Position3D};
use crate::scene::{FrameObservation, Recording, Scene};
use crate::tracker::{Tracker, TrackerConfig};
use crate::transitions::TransitionTable;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub n_active: Vec<usize>,
    pub m_passive: Vec<usize>,
    pub frames: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_active: vec![1, 2, 3],
            m_passive: (0..=6).collect(),
            frames: 200,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n_active: usize,
    pub m_passive: usize,
    pub frames: usize,
    /// Median wall-clock seconds of one update (all persons).
    pub update_seconds: f64,
    pub init_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Slope of ln(update / N) against ln(N+M), one intercept per N.
    pub exponent: f64,
}

/// All `n` active targets tracked, `m` passive ones, positions on a circle.
/// Each person looks at a random other target with 5° head noise, switching
/// every 25 frames.
pub fn bench_recording(n: usize, m: usize, frames: usize, seed: u64) -> Result<Recording> {
    let scene = Scene::simple(n, n, m)?;
    let total = n + m;
    let pos: Vec<Position3D> = (0..total)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / total as f64;
            let z = if k < n {
                1.6
            } else {
                1.0 + 0.2 * (k % 4) as f64
            };
            Position3D::new(2.0 * a.cos(), 2.0 * a.sin(), z)
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut focus: Vec<usize> = vec![0; n];
    let mut out = Vec::with_capacity(frames);
    for t in 1..=frames {
        let mut f = FrameObservation::empty(t, total);
        for (k, p) in pos.iter().enumerate() {
            f.get_mut(k + 1)?.position = Some(*p);
        }
        for i in 0..n {
            if (t - 1) % 25 == 0 && total > 1 {
                let mut j = rng.random_range(0..total - 1);
                if j >= i {
                    j += 1;
                }
                focus[i] = j;
            }
            let base = if total > 1 {
                direction_from_points(&pos[i], &pos[focus[i]])?
            } else {
                Direction::new(0.0, 0.0)?
            };
            let dp: f64 = rng.sample(StandardNormal);
            let dt: f64 = rng.sample(StandardNormal);
            let d = Direction::wrapped(
                base.pan() + 5.0 * dp,
                (base.tilt() + 5.0 * dt).clamp(-89.0, 89.0),
            )?;
            let o = f.get_mut(i + 1)?;
            o.direction = Some(d);
        }
        out.push(f);
    }
    Ok(Recording {
        scene,
        frames: out,
        dt: 0.04,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn bench_one(n: usize, m: usize, frames: usize, seed: u64) -> Result<BenchRow> {
    if frames < 2 {
        return Err(Error::InvalidParams("bench needs at least 2 frames".into()));
    }
    let rec = bench_recording(n, m, frames, seed)?;
    let tracker = Tracker::new(
        rec.scene.clone(),
        ModelParams::standard_init(),
        TransitionTable::uniform(),
        TrackerConfig::default(),
    )?;
    let t0 = Instant::now();
    let (mut state, _) = tracker.initialize(&rec.frames[0])?;
    let init_seconds = t0.elapsed().as_secs_f64();
    let mut times = Vec::with_capacity(frames - 1);
    for f in &rec.frames[1..] {
        let t = Instant::now();
        tracker.update(&mut state, f)?;
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(BenchRow {
        n_active: n,
        m_passive: m,
        frames,
        update_seconds: median(&mut times),
        init_seconds,
    })
}

/// Least-squares slope of `ln(update/N)` on `ln(N+M)` with a free intercept
/// per `N`.
pub fn fit_exponent(rows: &[BenchRow]) -> Result<f64> {
    let mut groups: Vec<usize> = rows.iter().map(|r| r.n_active).collect();
    groups.sort_unstable();
    groups.dedup();
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for g in groups {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.n_active == g)
            .map(|r| {
                let x = ((r.n_active + r.m_passive) as f64).ln();
                let y = (r.update_seconds / r.n_active as f64).ln();
                (x, y)
            })
            .collect();
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        for (x, y) in pts {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
        }
    }
    if sxx <= 0.0 || !sxy.is_finite() {
        return Err(Error::InvalidParams(
            "bench grid needs at least two sizes of N+M".into(),
        ));
    }
    Ok(sxy / sxx)
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.n_active.contains(&0) {
        return Err(Error::InvalidParams(
            "n-active values must be at least 1".into(),
        ));
    }
    let mut rows = Vec::new();
    for &n in &cfg.n_active {
        for &m in &cfg.m_passive {
            rows.push(bench_one(n, m, cfg.frames, cfg.seed)?);
        }
    }
    let exponent = fit_exponent(&rows)?;
    Ok(BenchReport { rows, exponent })
}
