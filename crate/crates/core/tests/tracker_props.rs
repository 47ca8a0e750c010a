mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use vfoa_skf::dynamics::G;
use vfoa_skf::geometry::{angular_distance, Direction, Position3D};
use vfoa_skf::scene::{FrameObservation, Recording, Scene};
use vfoa_skf::tracker::{track, Tracker, TrackerConfig};
use vfoa_skf::transitions::TransitionTable;

/// Random scene on a jittered circle with head orientations drifting around.
fn random_recording(seed: u64, na: usize, nt: usize, m: usize, frames: usize) -> Recording {
    let mut r = rng(seed);
    let scene = Scene::simple(na, nt, m).unwrap();
    let n = na + m;
    let pos: Vec<Position3D> = (0..n)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / n as f64 + r.random_range(-0.2..0.2);
            Position3D::new(2.0 * a.cos(), 2.0 * a.sin(), r.random_range(1.0..1.8)).unwrap()
        })
        .collect();
    let mut heads: Vec<(f64, f64)> = (0..n)
        .map(|_| (r.random_range(-180.0..180.0), r.random_range(-30.0..30.0)))
        .collect();
    let frames = (1..=frames)
        .map(|t| {
            let mut f = FrameObservation::empty(t, n);
            for (k, p) in pos.iter().enumerate() {
                let id = k + 1;
                f.get_mut(id).unwrap().position = Some(*p);
                if scene.is_active(id) {
                    let h = &mut heads[k];
                    // occasional jumps stress the projection
                    let jump = if r.random_bool(0.05) { 90.0 } else { 0.0 };
                    h.0 += 6.0 * normal(&mut r) + jump;
                    h.1 = (h.1 + 3.0 * normal(&mut r)).clamp(-70.0, 70.0);
                    f.get_mut(id).unwrap().direction = Some(Direction::saturating(h.0, h.1));
                }
            }
            f
        })
        .collect();
    Recording {
        scene,
        frames,
        dt: 0.04,
    }
}

fn random_table(seed: u64) -> TransitionTable {
    let mut r = rng(seed);
    let mut p = [0.0; 15];
    for g in vfoa_skf::transitions::GROUPS {
        let w: Vec<f64> = g.iter().map(|_| r.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        for (&n, x) in g.iter().zip(w) {
            p[n] = x / s;
        }
        let s: f64 = g.iter().map(|&n| p[n]).sum();
        p[g[0]] += 1.0 - s;
    }
    TransitionTable::new(p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn every_update_keeps_the_invariants(
        seed in any::<u64>(),
        na in 1usize..=3,
        m in 0usize..=3,
        tracked_frac in 0.0f64..1.0,
    ) {
        let nt = 1 + ((na - 1) as f64 * tracked_frac).round() as usize;
        let rec = random_recording(seed, na, nt, m, 60);
        let params = random_params(&mut rng(seed ^ 1));
        let table = random_table(seed ^ 2);
        let tracker = Tracker::new(rec.scene.clone(), params, table, TrackerConfig::default()).unwrap();
        let (mut state, _) = tracker.initialize(&rec.frames[0]).unwrap();
        for f in &rec.frames[1..] {
            let rep = tracker.update(&mut state, f).unwrap();
            prop_assert!(rep.max_gaze_head_distance <= 35.0 + 1e-9);
            prop_assert!(rep.max_weight_error <= 1e-9);
            for (b, h) in state.beliefs.iter().zip(&state.heads) {
                let w = b.weights();
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert_eq!(w[b.person], 0.0);
                let head = Direction::saturating(h[0], h[1]);
                for j in b.labels() {
                    prop_assert!(b.covs[j].cholesky().is_some(), "covariance of label {} not SPD", j);
                    let g = Direction::saturating(b.means[j][G], b.means[j][G + 1]);
                    prop_assert!(angular_distance(&g, &head) <= 35.0 + 1e-9);
                }
                prop_assert!(b.map_label() != b.person);
            }
        }
    }

    #[test]
    fn tracking_is_deterministic(seed in any::<u64>()) {
        let rec = random_recording(seed, 2, 2, 2, 30);
        let p = random_params(&mut rng(seed));
        let t = random_table(seed);
        let a = track(&rec, &p, &t, &TrackerConfig::default()).unwrap();
        let b = track(&rec, &p, &t, &TrackerConfig::default()).unwrap();
        prop_assert_eq!(format!("{:?}", a.frames), format!("{:?}", b.frames));
    }
}

#[test]
fn output_covers_every_frame_and_person() {
    let rec = random_recording(5, 3, 2, 2, 40);
    let out = track(
        &rec,
        &vfoa_skf::ModelParams::standard_init(),
        &TransitionTable::uniform(),
        &TrackerConfig::default(),
    )
    .unwrap();
    assert_eq!(out.persons, vec![1, 2]);
    assert_eq!(out.frames.len(), 40);
    for (t, f) in out.frames.iter().enumerate() {
        assert_eq!(f.frame, t + 1);
        assert_eq!(f.vfoa.len(), 2);
        assert_eq!(f.weights[0].len(), out.n_targets + 1);
    }
}
