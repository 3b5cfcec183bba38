//! IoU-based pairing of student predictions with teacher soft targets.
//!
//! All strategies share the same skeleton: drop unconfident boxes from both
//! sets, compute student-by-teacher IoUs, then pair every student box with its
//! highest-IoU teacher box provided that IoU clears `tau_i`. The ablation
//! strategies additionally thin the teacher set before pairing.

use serde::{Deserialize, Serialize};

use crate::geom::{Box3D, IouKind};
use crate::losses::sigmoid;
use crate::scene::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Keep soft targets that overlap a student box.
    #[default]
    StuFilter,
    /// Deduplicate soft targets with rotated NMS first.
    NmsFilter,
    /// Keep only soft targets overlapping some ground truth.
    GtFilter,
}

impl std::str::FromStr for MatchStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stu" | "stu_filter" => Ok(Self::StuFilter),
            "nms" | "nms_filter" => Ok(Self::NmsFilter),
            "gt" | "gt_filter" => Ok(Self::GtFilter),
            other => Err(format!("unknown match strategy `{other}` (expected stu, nms or gt)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// Confidence threshold applied to both sets.
    pub tau_c: f64,
    /// Pairs need IoU strictly above this.
    pub tau_i: f64,
    pub strategy: MatchStrategy,
    pub iou_kind: IouKind,
    /// Suppression threshold for [`MatchStrategy::NmsFilter`].
    pub nms_iou: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { tau_c: 0.3, tau_i: 0.7, strategy: MatchStrategy::StuFilter, iou_kind: IouKind::Bev, nms_iou: 0.7 }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("tau_c", self.tau_c), ("tau_i", self.tau_i), ("nms_iou", self.nms_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must be in [0,1], got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub student: usize,
    pub teacher: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<MatchPair>,
    /// Number of candidate pairs before IoU filtering: one per confident
    /// student box.
    pub n_initial: usize,
}

impl MatchSet {
    /// Number of surviving pairs.
    pub fn n_final(&self) -> usize {
        self.pairs.len()
    }

    /// Teacher index paired with each student detection.
    pub fn teacher_of(&self, student: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.student == student).map(|p| p.teacher)
    }
}

fn confident(dets: &[Detection], tau_c: f64) -> Vec<usize> {
    (0..dets.len()).filter(|&i| sigmoid(dets[i].logit) >= tau_c).collect()
}

/// Pairs each confident student box with the best of the given teacher
/// candidates. Ties go to the lower teacher index.
fn pair_with(student: &[Detection], teacher: &[Detection], teacher_ids: &[usize], cfg: &MatchConfig) -> MatchSet {
    let student_ids = confident(student, cfg.tau_c);
    let mut pairs = Vec::new();
    for &s in &student_ids {
        let mut best: Option<(usize, f64)> = None;
        for &t in teacher_ids {
            let iou = cfg.iou_kind.iou(&student[s].bbox, &teacher[t].bbox);
            match best {
                Some((bt, bi)) if iou < bi || (iou == bi && t > bt) => {}
                _ => best = Some((t, iou)),
            }
        }
        if let Some((t, iou)) = best {
            if iou > cfg.tau_i {
                pairs.push(MatchPair { student: s, teacher: t, iou });
            }
        }
    }
    MatchSet { pairs, n_initial: student_ids.len() }
}

/// The student-filter strategy.
pub fn match_soft_targets(student: &[Detection], teacher: &[Detection], cfg: &MatchConfig) -> MatchSet {
    let teacher_ids = confident(teacher, cfg.tau_c);
    pair_with(student, teacher, &teacher_ids, cfg)
}

/// Confident teacher boxes are deduplicated by rotated NMS before pairing.
pub fn match_nms_filter(student: &[Detection], teacher: &[Detection], cfg: &MatchConfig) -> MatchSet {
    let teacher_ids = confident(teacher, cfg.tau_c);
    let subset: Vec<Detection> = teacher_ids.iter().map(|&i| teacher[i]).collect();
    let mut kept: Vec<usize> = rotated_nms(&subset, cfg.nms_iou).into_iter().map(|k| teacher_ids[k]).collect();
    kept.sort_unstable();
    pair_with(student, teacher, &kept, cfg)
}

/// Confident teacher boxes are kept only when they overlap a ground truth.
pub fn match_gt_filter(student: &[Detection], teacher: &[Detection], gts: &[Box3D], cfg: &MatchConfig) -> MatchSet {
    let teacher_ids: Vec<usize> = confident(teacher, cfg.tau_c)
        .into_iter()
        .filter(|&t| gts.iter().any(|g| cfg.iou_kind.iou(&teacher[t].bbox, g) > 0.0))
        .collect();
    pair_with(student, teacher, &teacher_ids, cfg)
}

/// Dispatches on `cfg.strategy`. `gts` is only read by the gt filter.
pub fn match_with_strategy(student: &[Detection], teacher: &[Detection], gts: &[Box3D], cfg: &MatchConfig) -> MatchSet {
    match cfg.strategy {
        MatchStrategy::StuFilter => match_soft_targets(student, teacher, cfg),
        MatchStrategy::NmsFilter => match_nms_filter(student, teacher, cfg),
        MatchStrategy::GtFilter => match_gt_filter(student, teacher, gts, cfg),
    }
}

/// Greedy suppression in descending score order using BEV IoU.
///
/// A box is suppressed when its IoU with an already kept box exceeds
/// `iou_thresh`. Equal scores keep the lower index first. Returns kept
/// indices in the order they were kept.
pub fn rotated_nms(dets: &[Detection], iou_thresh: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].logit.total_cmp(&dets[a].logit).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| crate::geom::iou_bev(&dets[k].bbox, &dets[i].bbox) <= iou_thresh) {
            kept.push(i);
        }
    }
    kept
}
