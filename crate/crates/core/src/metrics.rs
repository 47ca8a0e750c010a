//! VFOA evaluation: frame recognition rate, confusion matrices, and
//! shot-level "looking at each other" scores.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{angular_distance, Direction};
use crate::scene::TargetId;

/// Default decision threshold on the mutual-gaze score of a shot.
pub const DEFAULT_SRR_THRESHOLD: f64 = 0.25;

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Metric(format!(
            "{what}: lengths differ ({a} vs {b})"
        )));
    }
    Ok(())
}

/// Percentage of annotated frames whose predicted label matches. Frames with
/// no ground truth are skipped.
pub fn frr(pred: &[TargetId], gt: &[Option<TargetId>]) -> Result<f64> {
    same_len(pred.len(), gt.len(), "frr")?;
    let (mut hit, mut n) = (0usize, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        if let Some(g) = g {
            n += 1;
            hit += usize::from(p == g);
        }
    }
    if n == 0 {
        return Err(Error::Metric("frr: no annotated frames".into()));
    }
    Ok(100.0 * hit as f64 / n as f64)
}

/// Rows are ground truth, columns predictions, both in `labels` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<TargetId>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Row-normalized counts; empty rows stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    /// Diagonal of the normalized matrix; `None` for labels never seen in
    /// the ground truth.
    pub fn recall(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let s: u64 = row.iter().sum();
                (s > 0).then(|| row[r] as f64 / s as f64)
            })
            .collect()
    }
}

pub fn confusion(
    pred: &[TargetId],
    gt: &[Option<TargetId>],
    labels: &[TargetId],
) -> Result<ConfusionMatrix> {
    same_len(pred.len(), gt.len(), "confusion")?;
    let index = |l: TargetId| {
        labels
            .iter()
            .position(|&x| x == l)
            .ok_or_else(|| Error::Metric(format!("confusion: label {l} is not in the label list")))
    };
    let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
    for (p, g) in pred.iter().zip(gt) {
        if let Some(g) = g {
            counts[index(*g)?][index(*p)?] += 1;
        }
    }
    Ok(ConfusionMatrix {
        labels: labels.to_vec(),
        counts,
    })
}

/// Longest run of frames where two people look at each other, as a
/// fraction of the shot length, maximized over pairs. `tracks` holds
/// `(person id, VFOA per frame)`.
pub fn mutual_gaze_score(tracks: &[(TargetId, Vec<TargetId>)]) -> Result<f64> {
    if tracks.len() < 2 {
        return Err(Error::Metric(
            "mutual gaze needs at least two people".into(),
        ));
    }
    let t = tracks[0].1.len();
    for (_, v) in tracks {
        same_len(v.len(), t, "mutual gaze")?;
    }
    if t == 0 {
        return Err(Error::Metric("mutual gaze: empty shot".into()));
    }
    let mut best = 0usize;
    for (a, (i, vi)) in tracks.iter().enumerate() {
        for (j, vj) in &tracks[a + 1..] {
            let mut run = 0usize;
            for (x, y) in vi.iter().zip(vj) {
                if x == j && y == i {
                    run += 1;
                    best = best.max(run);
                } else {
                    run = 0;
                }
            }
        }
    }
    Ok(best as f64 / t as f64)
}

/// Fraction of shots whose thresholded score agrees with the label.
pub fn srr(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    same_len(scores.len(), labels.len(), "srr")?;
    if scores.is_empty() {
        return Err(Error::Metric("srr: no shots".into()));
    }
    let hit = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| (**s >= threshold) == **l)
        .count();
    Ok(hit as f64 / scores.len() as f64)
}

/// Mean of the precision at each positive, ranking by descending score with
/// ties kept in input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    same_len(scores.len(), labels.len(), "average precision")?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("average precision: NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Metric(
            "average precision: no positive labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut sum) = (0usize, 0.0);
    for (rank, &idx) in order.iter().enumerate() {
        if labels[idx] {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Root mean square of the angular distances between paired directions.
pub fn angular_rmse(a: &[Direction], b: &[Direction]) -> Result<f64> {
    same_len(a.len(), b.len(), "angular rmse")?;
    if a.is_empty() {
        return Err(Error::Metric("angular rmse: no samples".into()));
    }
    let ss: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| angular_distance(x, y).powi(2))
        .sum();
    Ok((ss / a.len() as f64).sqrt())
}
