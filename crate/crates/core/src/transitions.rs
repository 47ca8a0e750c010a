//! VFOA dynamics: the 15-entry transition table, per-label probabilities and
//! the counting estimators used to learn the table from annotations.
//!
//! The table is indexed by the situation of person `i` at `t-1`:
//!
//! | case                          | categories of `V_t^i`             |
//! |-------------------------------|-----------------------------------|
//! | `k = 0`                       | 0 (p1), other (p2)                |
//! | `k` passive                   | 0 (p3), k (p4), other (p5)        |
//! | `k` active, `V^k = 0`         | 0 (p6), k (p7), other (p8)        |
//! | `k` active, `V^k = i`         | 0 (p9), k (p10), other (p11)      |
//! | `k` active, `V^k = l` (other) | 0 (p12), k (p13), l (p14), other (p15) |
//!
//! "Other" is an aggregate over the remaining eligible labels and is split
//! uniformly among them. When no label remains, its mass is spread over the
//! other categories of the group in proportion to their values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Recording, Scene, TargetId, NO_TARGET};

/// Zero-based entry indices of each group, in table order.
pub const GROUPS: [&[usize]; 5] = [
    &[0, 1],
    &[2, 3, 4],
    &[5, 6, 7],
    &[8, 9, 10],
    &[11, 12, 13, 14],
];

const SUM_TOL: f64 = 1e-9;
const DIST_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct TransitionTable {
    p: [f64; 15],
}

impl TransitionTable {
    pub fn new(p: [f64; 15]) -> Result<Self> {
        for (n, &v) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidTable(format!(
                    "p{} = {v} is not a probability",
                    n + 1
                )));
            }
        }
        for g in GROUPS {
            let s: f64 = g.iter().map(|&n| p[n]).sum();
            if (s - 1.0).abs() > SUM_TOL {
                let names: Vec<String> = g.iter().map(|n| format!("p{}", n + 1)).collect();
                return Err(Error::InvalidTable(format!(
                    "{} sum to {s}",
                    names.join("+")
                )));
            }
        }
        Ok(Self { p })
    }

    /// Every group uniform over its categories.
    pub fn uniform() -> Self {
        let mut p = [0.0; 15];
        for g in GROUPS {
            for &n in g {
                p[n] = 1.0 / g.len() as f64;
            }
        }
        Self { p }
    }

    /// A table that keeps the current focus with probability `stay` and
    /// spreads the rest evenly. Mutual attention (case p10) and following the
    /// other's focus (p14) count as staying on `k`.
    pub fn sticky(stay: f64) -> Result<Self> {
        let m = 1.0 - stay;
        Self::new([
            stay,
            m,
            m / 2.0,
            stay,
            m / 2.0,
            m / 2.0,
            stay,
            m / 2.0,
            m / 2.0,
            stay,
            m / 2.0,
            m / 3.0,
            stay,
            m / 3.0,
            m / 3.0,
        ])
    }

    /// Entry `p_n`, `n` in `1..=15`.
    pub fn p(&self, n: usize) -> f64 {
        self.p[n - 1]
    }

    pub fn as_array(&self) -> &[f64; 15] {
        &self.p
    }
}

impl TryFrom<BTreeMap<String, f64>> for TransitionTable {
    type Error = Error;

    fn try_from(m: BTreeMap<String, f64>) -> Result<Self> {
        let mut p = [f64::NAN; 15];
        for (k, v) in &m {
            let n = k
                .strip_prefix('p')
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|n| (1..=15).contains(n))
                .ok_or_else(|| Error::InvalidTable(format!("unknown entry `{k}`")))?;
            p[n - 1] = *v;
        }
        if let Some(n) = p.iter().position(|v| v.is_nan()) {
            return Err(Error::InvalidTable(format!("missing entry `p{}`", n + 1)));
        }
        Self::new(p)
    }
}

impl From<TransitionTable> for BTreeMap<String, f64> {
    fn from(t: TransitionTable) -> Self {
        t.p.iter()
            .enumerate()
            .map(|(n, &v)| (format!("p{}", n + 1), v))
            .collect()
    }
}

/// Conditioning of a transition: `V_{t-1}^i = k` and, for active `k`,
/// `V_{t-1}^k = l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Case {
    FromNone,
    FromPassive,
    FromActiveNone,
    FromActiveMutual,
    FromActiveOther(TargetId),
}

impl Case {
    fn group(self) -> usize {
        match self {
            Case::FromNone => 0,
            Case::FromPassive => 1,
            Case::FromActiveNone => 2,
            Case::FromActiveMutual => 3,
            Case::FromActiveOther(_) => 4,
        }
    }
}

fn classify(scene: &Scene, i: TargetId, k: TargetId, l: Option<TargetId>) -> Result<Case> {
    let n = scene.n_targets();
    if k == i || k > n {
        return Err(Error::InvalidLabel {
            person: i,
            label: k,
            reason: "previous VFOA not eligible",
        });
    }
    if k == NO_TARGET {
        return Ok(Case::FromNone);
    }
    if scene.is_passive(k) {
        return Ok(Case::FromPassive);
    }
    let l = l.ok_or(Error::InvalidLabel {
        person: i,
        label: k,
        reason: "VFOA of the active target at t-1 is required",
    })?;
    if l == k || l > n {
        return Err(Error::InvalidLabel {
            person: k,
            label: l,
            reason: "not an eligible label for that target",
        });
    }
    Ok(if l == NO_TARGET {
        Case::FromActiveNone
    } else if l == i {
        Case::FromActiveMutual
    } else {
        Case::FromActiveOther(l)
    })
}

/// Number of eligible labels of `i` falling in the aggregate category.
fn residual_size(n: usize, case: Case) -> usize {
    let named = match case {
        Case::FromNone => 1,
        Case::FromActiveOther(_) => 3,
        _ => 2,
    };
    // eligible labels number n (0..=n minus i)
    n.saturating_sub(named)
}

/// Per-category probabilities of a group after redistributing an empty
/// aggregate. Last entry is the per-label value of the aggregate.
fn effective_group(table: &TransitionTable, group: usize, residual: usize) -> Vec<f64> {
    let idx = GROUPS[group];
    let mut v: Vec<f64> = idx.iter().map(|&n| table.p[n]).collect();
    let last = v.len() - 1;
    if residual == 0 {
        let mass = v[last];
        v[last] = 0.0;
        let rest: f64 = v[..last].iter().sum();
        if rest > 0.0 {
            for x in &mut v[..last] {
                *x += mass * *x / rest;
            }
        } else {
            for x in &mut v[..last] {
                *x = 1.0 / last as f64;
            }
        }
    } else {
        v[last] /= residual as f64;
    }
    v
}

/// `P(V_t^i = j | V_{t-1}^i = k, V_{t-1}^k = l)`.
pub fn transition_prob(
    table: &TransitionTable,
    scene: &Scene,
    i: TargetId,
    j: TargetId,
    k: TargetId,
    l: Option<TargetId>,
) -> Result<f64> {
    check_person(scene, i)?;
    if j == i || j > scene.n_targets() {
        return Err(Error::InvalidLabel {
            person: i,
            label: j,
            reason: "not an eligible label",
        });
    }
    let case = classify(scene, i, k, l)?;
    let e = effective_group(table, case.group(), residual_size(scene.n_targets(), case));
    Ok(pick(&e, case, j, k))
}

fn pick(e: &[f64], case: Case, j: TargetId, k: TargetId) -> f64 {
    let last = e.len() - 1;
    if j == NO_TARGET {
        return e[0];
    }
    match case {
        Case::FromNone => e[last],
        Case::FromActiveOther(l) if j == l => e[2],
        _ if j == k => e[1],
        _ => e[last],
    }
}

fn check_person(scene: &Scene, i: TargetId) -> Result<()> {
    if !scene.is_active(i) {
        return Err(Error::InvalidLabel {
            person: i,
            label: i,
            reason: "transitions are defined for active targets only",
        });
    }
    Ok(())
}

/// Whole row `j -> P(V_t^i = j | k, l)` indexed by label `0..=N+M`; entry `i`
/// is zero.
pub fn transition_row(
    table: &TransitionTable,
    scene: &Scene,
    i: TargetId,
    k: TargetId,
    l: Option<TargetId>,
) -> Result<Vec<f64>> {
    check_person(scene, i)?;
    let case = classify(scene, i, k, l)?;
    let e = effective_group(table, case.group(), residual_size(scene.n_targets(), case));
    Ok((0..=scene.n_targets())
        .map(|j| if j == i { 0.0 } else { pick(&e, case, j, k) })
        .collect())
}

fn check_distribution(k: TargetId, c: &[f64], len: usize) -> Result<()> {
    if c.len() != len {
        return Err(Error::InvalidLabel {
            person: k,
            label: c.len(),
            reason: "distribution has the wrong number of labels",
        });
    }
    let sum: f64 = c.iter().sum();
    if (sum - 1.0).abs() > DIST_TOL || c.iter().any(|&x| x < 0.0) {
        return Err(Error::Unnormalized { target: k, sum });
    }
    Ok(())
}

/// `P(V_t^i = j | V_{t-1}^i = k)` with `V_{t-1}^k` marginalized over
/// `c_prev_k` (indexed by label, entry `k` ignored) when `k` is active.
pub fn marginal_transition_prior(
    table: &TransitionTable,
    scene: &Scene,
    i: TargetId,
    j: TargetId,
    k: TargetId,
    c_prev_k: Option<&[f64]>,
) -> Result<f64> {
    if !scene.is_active(k) {
        return transition_prob(table, scene, i, j, k, None);
    }
    let c = c_prev_k.ok_or(Error::InvalidLabel {
        person: i,
        label: k,
        reason: "distribution over the active target's VFOA is required",
    })?;
    check_distribution(k, c, scene.n_targets() + 1)?;
    let mut acc = 0.0;
    for (l, &w) in c.iter().enumerate() {
        if l == k || w == 0.0 {
            continue;
        }
        acc += w * transition_prob(table, scene, i, j, k, Some(l))?;
    }
    Ok(acc)
}

/// Row version of [`marginal_transition_prior`], linear in the number of
/// labels: the `l`-other case depends on `l` only through `j == l`.
pub fn marginal_transition_row(
    table: &TransitionTable,
    scene: &Scene,
    i: TargetId,
    k: TargetId,
    c_prev_k: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if !scene.is_active(k) {
        return transition_row(table, scene, i, k, None);
    }
    check_person(scene, i)?;
    let n = scene.n_targets();
    let c = c_prev_k.ok_or(Error::InvalidLabel {
        person: i,
        label: k,
        reason: "distribution over the active target's VFOA is required",
    })?;
    check_distribution(k, c, n + 1)?;
    if k == i {
        classify(scene, i, k, Some(0))?;
    }
    let e_none = effective_group(table, 2, residual_size(n, Case::FromActiveNone));
    let e_mut = effective_group(table, 3, residual_size(n, Case::FromActiveMutual));
    let e_oth = effective_group(table, 4, residual_size(n, Case::FromActiveOther(0)));
    let c0 = c[0];
    let ci = c[i];
    let s_other: f64 = (1..=n).filter(|&l| l != i && l != k).map(|l| c[l]).sum();
    let row = (0..=n)
        .map(|j| {
            if j == i {
                0.0
            } else if j == NO_TARGET {
                c0 * e_none[0] + ci * e_mut[0] + s_other * e_oth[0]
            } else if j == k {
                c0 * e_none[1] + ci * e_mut[1] + s_other * e_oth[1]
            } else {
                c0 * e_none[2] + ci * e_mut[2] + c[j] * e_oth[2] + (s_other - c[j]) * e_oth[3]
            }
        })
        .collect();
    Ok(row)
}

/// Numerators and denominators of the 15 counting estimators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransitionCounts {
    pub num: [u64; 15],
    pub den: [u64; 5],
}

impl TransitionCounts {
    pub fn merge(&mut self, other: &TransitionCounts) {
        for (a, b) in self.num.iter_mut().zip(other.num) {
            *a += b;
        }
        for (a, b) in self.den.iter_mut().zip(other.den) {
            *a += b;
        }
    }

    /// Records one transition `k -> j` of person `i`.
    pub fn add(
        &mut self,
        scene: &Scene,
        i: TargetId,
        j: TargetId,
        k: TargetId,
        l: Option<TargetId>,
    ) -> Result<()> {
        if j == i || j > scene.n_targets() {
            return Err(Error::InvalidLabel {
                person: i,
                label: j,
                reason: "not an eligible label",
            });
        }
        let case = classify(scene, i, k, l)?;
        let g = case.group();
        let idx = GROUPS[g];
        let cat = if j == NO_TARGET {
            0
        } else {
            match case {
                Case::FromNone => 1,
                Case::FromActiveOther(l) if j == l => 2,
                _ if j == k => 1,
                _ => idx.len() - 1,
            }
        };
        self.num[idx[cat]] += 1;
        self.den[g] += 1;
        Ok(())
    }

    /// Ratio estimates. An empty group falls back to uniform; `add_one`
    /// switches to add-one smoothing.
    pub fn to_table(&self, add_one: bool) -> TransitionTable {
        let mut p = [0.0; 15];
        for (g, idx) in GROUPS.iter().enumerate() {
            let width = idx.len() as f64;
            for &n in idx.iter() {
                p[n] = if add_one {
                    (self.num[n] as f64 + 1.0) / (self.den[g] as f64 + width)
                } else if self.den[g] == 0 {
                    1.0 / width
                } else {
                    self.num[n] as f64 / self.den[g] as f64
                };
            }
        }
        TransitionTable { p }
    }
}

/// VFOA of every active target at every frame: annotations for tracked
/// persons, known streams (or geometry) for the others. Indexed `[t][id]`.
pub(crate) fn active_vfoa_streams(rec: &Recording) -> Result<Vec<Vec<TargetId>>> {
    let scene = &rec.scene;
    rec.frames
        .iter()
        .map(|f| {
            let mut row = vec![NO_TARGET; scene.n_active() + 1];
            for k in 1..=scene.n_active() {
                row[k] = if scene.is_tracked(k) {
                    f.get(k)?.vfoa.ok_or(Error::NotAnnotated {
                        frame: f.frame,
                        person: k,
                    })?
                } else {
                    f.known_vfoa(k)?
                };
            }
            Ok(row)
        })
        .collect()
}

pub fn count_transitions(rec: &Recording) -> Result<TransitionCounts> {
    count_label_streams(&rec.scene, &active_vfoa_streams(rec)?)
}

/// Counts over label streams `v[t][id]` covering every active target.
pub fn count_label_streams(scene: &Scene, v: &[Vec<TargetId>]) -> Result<TransitionCounts> {
    if v.iter().any(|r| r.len() <= scene.n_active()) {
        return Err(Error::InvalidScene(format!(
            "label streams must cover the {} active targets",
            scene.n_active()
        )));
    }
    let mut counts = TransitionCounts::default();
    for &i in scene.tracked() {
        for t in 1..v.len() {
            let k = v[t - 1][i];
            let l = scene.is_active(k).then(|| v[t - 1][k]);
            counts.add(scene, i, v[t][i], k, l)?;
        }
    }
    Ok(counts)
}

pub fn learn_table(data: &[Recording], add_one: bool) -> Result<TransitionTable> {
    let mut total = TransitionCounts::default();
    for rec in data {
        total.merge(&count_transitions(rec)?);
    }
    Ok(total.to_table(add_one))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Direction, Position3D};
    use crate::scene::{FrameObservation, Recording};
    use proptest::prelude::*;

    fn example_table() -> TransitionTable {
        let mut p = TransitionTable::uniform().p;
        p[2] = 0.2;
        p[3] = 0.7;
        p[4] = 0.1;
        TransitionTable::new(p).unwrap()
    }

    #[test]
    fn passive_case_examples() {
        let s = Scene::simple(2, 2, 2).unwrap();
        let t = example_table();
        assert_eq!(transition_prob(&t, &s, 2, 3, 3, None).unwrap(), 0.7);
        assert!((transition_prob(&t, &s, 2, 4, 3, None).unwrap() - 0.05).abs() < 1e-15);
        assert!((transition_prob(&t, &s, 2, 1, 3, None).unwrap() - 0.05).abs() < 1e-15);
        let sum: f64 = [0, 1, 3, 4]
            .iter()
            .map(|&j| transition_prob(&t, &s, 2, j, 3, None).unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argument_errors() {
        let s = Scene::simple(2, 2, 2).unwrap();
        let t = example_table();
        assert!(transition_prob(&t, &s, 2, 2, 0, None).is_err());
        assert!(transition_prob(&t, &s, 2, 0, 1, None).is_err());
        assert!(transition_prob(&t, &s, 2, 0, 1, Some(1)).is_err());
        assert!(transition_prob(&t, &s, 2, 0, 1, Some(2)).is_ok());
    }

    #[test]
    fn marginal_prior_examples() {
        let s = Scene::simple(3, 3, 2).unwrap();
        let t = TransitionTable::new([
            0.9, 0.1, 0.1, 0.8, 0.1, 0.05, 0.9, 0.05, 0.2, 0.7, 0.1, 0.1, 0.6, 0.2, 0.1,
        ])
        .unwrap();
        // passive k: no marginalization
        assert_eq!(
            marginal_transition_prior(&t, &s, 1, 4, 4, None).unwrap(),
            transition_prob(&t, &s, 1, 4, 4, None).unwrap()
        );
        // point mass at l0
        let mut c = vec![0.0; 6];
        c[3] = 1.0;
        assert_eq!(
            marginal_transition_prior(&t, &s, 1, 5, 2, Some(&c)).unwrap(),
            transition_prob(&t, &s, 1, 5, 2, Some(3)).unwrap()
        );
        // half on 0, half on i: 0.5 p7 + 0.5 p10
        let mut c = vec![0.0; 6];
        c[0] = 0.5;
        c[1] = 0.5;
        let v = marginal_transition_prior(&t, &s, 1, 2, 2, Some(&c)).unwrap();
        assert!((v - (0.5 * t.p(7) + 0.5 * t.p(10))).abs() < 1e-15);
        c[1] = 0.6;
        assert!(matches!(
            marginal_transition_prior(&t, &s, 1, 2, 2, Some(&c)),
            Err(Error::Unnormalized { .. })
        ));
    }

    #[test]
    fn empty_residual_redistributes() {
        // N=1, M=1: person 1 has labels {0, 2}; p2 (k=0 residual) covers {2}.
        let s = Scene::simple(1, 1, 1).unwrap();
        let t = example_table();
        // k=2 passive: residual {.} empty, p5 goes to p3 and p4 proportionally
        let p0 = transition_prob(&t, &s, 1, 0, 2, None).unwrap();
        let p2 = transition_prob(&t, &s, 1, 2, 2, None).unwrap();
        assert!((p0 - 0.2 / 0.9).abs() < 1e-15);
        assert!((p2 - 0.7 / 0.9).abs() < 1e-15);
        // N=1, M=0: only label 0
        let s = Scene::simple(1, 1, 0).unwrap();
        assert_eq!(transition_prob(&t, &s, 1, 0, 0, None).unwrap(), 1.0);
    }

    #[test]
    fn table_json() {
        let t = example_table();
        let js = serde_json::to_string(&t).unwrap();
        assert!(js.contains("\"p15\""));
        let back: TransitionTable = serde_json::from_str(&js).unwrap();
        assert_eq!(t, back);
        assert!(serde_json::from_str::<TransitionTable>(r#"{"p1":1.0}"#).is_err());
        let mut bad: BTreeMap<String, f64> = t.into();
        bad.insert("p1".into(), 0.7);
        assert!(TransitionTable::try_from(bad).is_err());
    }

    fn single_person_recording(seq: &[TargetId]) -> Recording {
        let scene = Scene::simple(1, 1, 2).unwrap();
        let frames = seq
            .iter()
            .enumerate()
            .map(|(t, &v)| {
                let mut f = FrameObservation::empty(t + 1, 3);
                for id in 1..=3 {
                    f.get_mut(id).unwrap().position =
                        Some(Position3D::new(id as f64, 0.0, 0.0).unwrap());
                }
                let o = f.get_mut(1).unwrap();
                o.direction = Some(Direction::new(0.0, 0.0).unwrap());
                o.vfoa = Some(v);
                f
            })
            .collect();
        Recording {
            scene,
            frames,
            dt: 0.04,
        }
    }

    #[test]
    fn counting_examples() {
        let t = learn_table(&[single_person_recording(&[0, 0, 0, 3, 3])], false).unwrap();
        assert!((t.p(1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.p(2) - 1.0 / 3.0).abs() < 1e-15);
        let t = learn_table(&[single_person_recording(&[3, 3])], false).unwrap();
        assert_eq!((t.p(3), t.p(4), t.p(5)), (0.0, 1.0, 0.0));
        // no frame from 0: fallback
        assert_eq!((t.p(1), t.p(2)), (0.5, 0.5));
        let s = learn_table(&[single_person_recording(&[3, 3])], true).unwrap();
        assert_eq!(s.p(4), 2.0 / 4.0);
    }

    #[test]
    fn counting_rejects_gaps() {
        let mut r = single_person_recording(&[0, 2, 2]);
        r.frames[1].get_mut(1).unwrap().vfoa = None;
        assert!(matches!(
            learn_table(&[r], false),
            Err(Error::NotAnnotated {
                frame: 2,
                person: 1
            })
        ));
    }

    fn scene_strategy() -> impl Strategy<Value = Scene> {
        (1usize..=4, 0usize..=4)
            .prop_flat_map(|(n, m)| (Just(n), 1usize..=n, Just(m)))
            .prop_map(|(n, tr, m)| Scene::simple(n, tr, m).unwrap())
    }

    fn table_strategy() -> impl Strategy<Value = TransitionTable> {
        proptest::collection::vec(0.001f64..1.0, 15).prop_map(|raw| {
            let mut p = [0.0; 15];
            for g in GROUPS {
                let s: f64 = g.iter().map(|&n| raw[n]).sum();
                for &n in g {
                    p[n] = raw[n] / s;
                }
            }
            TransitionTable { p }
        })
    }

    proptest! {
        #[test]
        fn rows_are_normalized(scene in scene_strategy(), table in table_strategy(), seed in 0u64..1000) {
            let n = scene.n_targets();
            for &i in scene.tracked() {
                for k in (0..=n).filter(|&k| k != i) {
                    let ls: Vec<Option<TargetId>> = if scene.is_active(k) {
                        (0..=n).filter(|&l| l != k).map(Some).collect()
                    } else {
                        vec![None]
                    };
                    for l in ls {
                        let s: f64 = (0..=n).filter(|&j| j != i)
                            .map(|j| transition_prob(&table, &scene, i, j, k, l).unwrap())
                            .sum();
                        prop_assert!((s - 1.0).abs() < 1e-12);
                    }
                    // marginal row against the literal sum over l
                    let c: Vec<f64> = (0..=n)
                        .map(|l| if l == k { 0.0 } else { 1.0 + ((seed as usize * 31 + l * 7) % 13) as f64 })
                        .collect();
                    let tot: f64 = c.iter().sum();
                    let c: Vec<f64> = c.iter().map(|x| x / tot).collect();
                    let cp = scene.is_active(k).then_some(c.as_slice());
                    let row = marginal_transition_row(&table, &scene, i, k, cp).unwrap();
                    for j in (0..=n).filter(|&j| j != i) {
                        let lit = marginal_transition_prior(&table, &scene, i, j, k, cp).unwrap();
                        prop_assert!((row[j] - lit).abs() < 1e-14);
                    }
                }
            }
        }
    }
}
