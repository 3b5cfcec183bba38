//! KITTI-style evaluation: difficulty buckets, greedy IoU matching and
//! interpolated average precision at 11 or 40 recall points.

mod kitti;

pub use kitti::{
    load_kitti_scene, read_kitti_labels, read_velodyne_bin, write_kitti_labels, write_kitti_scene, write_velodyne_bin,
    Calib, KittiError, KittiObject,
};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::geom::{self, Box3D};
use crate::scene::{Detection, ObjectLabel};

/// Tolerance when comparing recall values against sample points.
const RECALL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl Difficulty {
    pub const LEVELS: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
            Difficulty::Ignored => "ignored",
        }
    }
}

/// Minimum 2D height, maximum occlusion, maximum truncation per level.
const LEVEL_LIMITS: [(Difficulty, f64, u8, f64); 3] = [
    (Difficulty::Easy, 40.0, 0, 0.15),
    (Difficulty::Moderate, 25.0, 1, 0.30),
    (Difficulty::Hard, 25.0, 2, 0.50),
];

/// The easiest level whose limits the label satisfies.
pub fn difficulty_of(label: &ObjectLabel) -> Difficulty {
    LEVEL_LIMITS
        .iter()
        .find(|(_, min_h, max_occ, max_trunc)| {
            label.bbox_height >= *min_h && label.occlusion <= *max_occ && label.truncation <= *max_trunc
        })
        .map_or(Difficulty::Ignored, |l| l.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Bev,
    #[default]
    #[serde(rename = "3d")]
    ThreeD,
}

impl EvalMode {
    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            EvalMode::Bev => geom::iou_bev(a, b),
            EvalMode::ThreeD => geom::iou_3d(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Bev => "BEV",
            EvalMode::ThreeD => "3D",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RecallPoints {
    R11,
    #[default]
    R40,
}

impl RecallPoints {
    /// Recall sample positions. R11 includes recall 0.
    pub fn samples(self) -> Vec<f64> {
        match self {
            RecallPoints::R11 => (0..=10).map(|k| k as f64 / 10.0).collect(),
            RecallPoints::R40 => (1..=40).map(|k| k as f64 / 40.0).collect(),
        }
    }

    pub fn from_count(n: usize) -> Option<Self> {
        match n {
            11 => Some(Self::R11),
            40 => Some(Self::R40),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RecallPoints::R11 => "R11",
            RecallPoints::R40 => "R40",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub recall_points: RecallPoints,
    pub difficulty: Difficulty,
    pub mode: EvalMode,
    pub class: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.7,
            recall_points: RecallPoints::R40,
            difficulty: Difficulty::Moderate,
            mode: EvalMode::ThreeD,
            class: "Car".into(),
        }
    }
}

/// A detection ready for ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: Box3D,
    pub score: f64,
}

impl From<&Detection> for ScoredBox {
    fn from(d: &Detection) -> Self {
        Self { bbox: d.bbox, score: d.score() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, thresholds descending.
    pub points: Vec<PrPoint>,
    pub ap: f64,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        s
    }
}

/// How one detection was counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetOutcome {
    TruePositive,
    FalsePositive,
    /// Matched a ground truth outside the evaluated bucket; not counted.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GtRole {
    Care,
    Ignore,
    Absent,
}

fn neighbor_class(class: &str) -> Option<&'static str> {
    match class {
        "Car" => Some("Van"),
        "Pedestrian" => Some("Person_sitting"),
        _ => None,
    }
}

fn gt_role(label: &ObjectLabel, cfg: &EvalConfig) -> GtRole {
    if label.class == cfg.class {
        let d = difficulty_of(label);
        if d != Difficulty::Ignored && d <= cfg.difficulty {
            GtRole::Care
        } else {
            GtRole::Ignore
        }
    } else if neighbor_class(&cfg.class) == Some(label.class.as_str()) {
        GtRole::Ignore
    } else {
        GtRole::Absent
    }
}

/// Greedy matching in one scene. Returns `(score, outcome)` per detection
/// and the number of cared-for ground truths.
pub fn match_scene(preds: &[ScoredBox], gts: &[ObjectLabel], cfg: &EvalConfig) -> (Vec<(f64, DetOutcome)>, usize) {
    let roles: Vec<GtRole> = gts.iter().map(|g| gt_role(g, cfg)).collect();
    let n_care = roles.iter().filter(|r| **r == GtRole::Care).count();
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut out = Vec::with_capacity(preds.len());
    for i in order {
        let p = &preds[i];
        let mut best_care: Option<(usize, f64)> = None;
        let mut best_ign: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if used[j] || roles[j] == GtRole::Absent {
                continue;
            }
            let iou = cfg.mode.iou(&p.bbox, &g.bbox);
            if iou < cfg.iou_threshold {
                continue;
            }
            let slot = if roles[j] == GtRole::Care { &mut best_care } else { &mut best_ign };
            if slot.is_none_or(|(_, b)| iou > b) {
                *slot = Some((j, iou));
            }
        }
        let outcome = if let Some((j, _)) = best_care {
            used[j] = true;
            DetOutcome::TruePositive
        } else if let Some((j, _)) = best_ign {
            used[j] = true;
            DetOutcome::Ignored
        } else {
            DetOutcome::FalsePositive
        };
        out.push((p.score, outcome));
    }
    (out, n_care)
}

/// Interpolated precision at each recall sample.
pub fn interpolated_ap(points: &[PrPoint], recall_points: RecallPoints) -> f64 {
    let samples = recall_points.samples();
    let total: f64 = samples
        .iter()
        .map(|&r| {
            points
                .iter()
                .filter(|p| p.recall >= r - RECALL_EPS)
                .map(|p| p.precision)
                .fold(0.0, f64::max)
        })
        .sum();
    total / samples.len() as f64
}

/// Builds the PR curve from per-detection outcomes across scenes.
pub fn pr_curve(outcomes: &[(f64, DetOutcome)], n_care: usize, recall_points: RecallPoints) -> PrCurve {
    if n_care == 0 {
        return PrCurve::default();
    }
    let mut counted: Vec<(f64, bool)> = outcomes
        .iter()
        .filter(|(_, o)| *o != DetOutcome::Ignored)
        .map(|(s, o)| (*s, *o == DetOutcome::TruePositive))
        .collect();
    counted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < counted.len() {
        let thr = counted[i].0;
        while i < counted.len() && counted[i].0 == thr {
            if counted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: thr,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / n_care as f64,
        });
    }
    let ap = interpolated_ap(&points, recall_points);
    PrCurve { points, ap }
}

/// AP over a set of scenes. `preds[i]` and `gts[i]` belong to scene `i`.
pub fn average_precision(preds: &[Vec<ScoredBox>], gts: &[Vec<ObjectLabel>], cfg: &EvalConfig) -> PrCurve {
    average_precision_with(preds, gts, cfg, Exec::default())
}

pub fn average_precision_with(
    preds: &[Vec<ScoredBox>],
    gts: &[Vec<ObjectLabel>],
    cfg: &EvalConfig,
    exec: Exec,
) -> PrCurve {
    assert_eq!(preds.len(), gts.len(), "one prediction list per ground-truth scene");
    let per_scene = exec.map_range(preds.len(), |i| match_scene(&preds[i], &gts[i], cfg));
    let mut outcomes = Vec::new();
    let mut n_care = 0;
    for (o, n) in per_scene {
        outcomes.extend(o);
        n_care += n;
    }
    pr_curve(&outcomes, n_care, cfg.recall_points)
}

pub fn mean_ap(aps: &[f64]) -> f64 {
    if aps.is_empty() {
        return 0.0;
    }
    aps.iter().sum::<f64>() / aps.len() as f64
}

/// AP for every (mode, recall points, difficulty) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApTable {
    pub rows: Vec<ApRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApRow {
    pub mode: EvalMode,
    pub recall_points: RecallPoints,
    /// Easy, moderate, hard.
    pub ap: [f64; 3],
    pub map: f64,
}

impl ApTable {
    pub fn compute(preds: &[Vec<ScoredBox>], gts: &[Vec<ObjectLabel>], base: &EvalConfig, exec: Exec) -> Self {
        let mut rows = Vec::new();
        for mode in [EvalMode::ThreeD, EvalMode::Bev] {
            for rp in [RecallPoints::R11, RecallPoints::R40] {
                let mut ap = [0.0; 3];
                for (k, d) in Difficulty::LEVELS.iter().enumerate() {
                    let cfg = EvalConfig { mode, recall_points: rp, difficulty: *d, ..base.clone() };
                    ap[k] = average_precision_with(preds, gts, &cfg, exec).ap;
                }
                rows.push(ApRow { mode, recall_points: rp, ap, map: mean_ap(&ap) });
            }
        }
        Self { rows }
    }

    pub fn get(&self, mode: EvalMode, rp: RecallPoints) -> Option<&ApRow> {
        self.rows.iter().find(|r| r.mode == mode && r.recall_points == rp)
    }

    /// Fixed-width text rendering with APs in percent.
    pub fn render(&self) -> String {
        let mut s = String::from("mode recall     easy moderate     hard      mAP\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<4} {:<6} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                r.mode.name(),
                r.recall_points.name(),
                100.0 * r.ap[0],
                100.0 * r.ap[1],
                100.0 * r.ap[2],
                100.0 * r.map
            );
        }
        s
    }
}
