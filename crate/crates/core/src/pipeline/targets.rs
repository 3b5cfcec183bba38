//! Hard-target assignment and the supervised part of the student loss.

use serde::{Deserialize, Serialize};

use super::detector::{encode, DetectorOutput, OutputGrad};
use crate::geom::{iou_bev, Box3D};
use crate::losses::{
    direction_loss, direction_target, focal_loss, odiou_loss, residual_smooth_l1, LossWeights, FOCAL_ALPHA,
    FOCAL_GAMMA, SMOOTH_L1_BETA,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignConfig {
    pub pos_iou: f64,
    pub neg_iou: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self { pos_iou: 0.6, neg_iou: 0.45 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorTarget {
    Positive(usize),
    Negative,
    Ignore,
}

/// BEV-IoU assignment. Each ground truth additionally claims its best
/// overlapping anchor, so small grids still see positives.
pub fn assign_anchors(anchors: &[Box3D], gts: &[Box3D], cfg: &AssignConfig) -> Vec<AnchorTarget> {
    let mut best = vec![(0.0f64, usize::MAX); anchors.len()];
    let mut gt_best = vec![(0.0f64, usize::MAX); gts.len()];
    for (a, anc) in anchors.iter().enumerate() {
        for (g, gt) in gts.iter().enumerate() {
            let iou = iou_bev(anc, gt);
            if iou > best[a].0 {
                best[a] = (iou, g);
            }
            if iou > gt_best[g].0 {
                gt_best[g] = (iou, a);
            }
        }
    }
    let mut out: Vec<AnchorTarget> = best
        .iter()
        .map(|&(iou, g)| {
            if iou >= cfg.pos_iou {
                AnchorTarget::Positive(g)
            } else if iou <= cfg.neg_iou {
                AnchorTarget::Negative
            } else {
                AnchorTarget::Ignore
            }
        })
        .collect();
    for (g, &(iou, a)) in gt_best.iter().enumerate() {
        if iou > 0.0 {
            out[a] = AnchorTarget::Positive(g);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BoxLossKind {
    #[default]
    ODIoU,
    SmoothL1,
}

/// Supervised loss terms and their weighted per-anchor gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedLoss {
    pub cls: f64,
    pub bbox: f64,
    pub dir: f64,
    pub n_pos: usize,
    pub grads: Vec<OutputGrad>,
}

/// Focal loss over positives and negatives, box and direction loss over
/// positives, all normalized by the positive count. Gradients are scaled by
/// `omega1` / `omega2`.
pub fn supervised_loss(
    out: &DetectorOutput,
    anchors: &[Box3D],
    targets: &[AnchorTarget],
    gts: &[Box3D],
    kind: BoxLossKind,
    weights: &LossWeights,
) -> SupervisedLoss {
    let n_pos = targets.iter().filter(|t| matches!(t, AnchorTarget::Positive(_))).count();
    let norm = 1.0 / n_pos.max(1) as f64;
    let mut grads = vec![OutputGrad::default(); targets.len()];
    let (mut cls, mut bbox, mut dir) = (0.0, 0.0, 0.0);
    for (a, t) in targets.iter().enumerate() {
        let det = &out.detections[a];
        let g = &mut grads[a];
        match *t {
            AnchorTarget::Ignore => {}
            AnchorTarget::Negative => {
                let (v, d) = focal_loss(det.logit, false, FOCAL_ALPHA, FOCAL_GAMMA);
                cls += v;
                g.logit = norm * d;
            }
            AnchorTarget::Positive(k) => {
                let gt = &gts[k];
                let (v, d) = focal_loss(det.logit, true, FOCAL_ALPHA, FOCAL_GAMMA);
                cls += v;
                g.logit = norm * d;
                match kind {
                    BoxLossKind::ODIoU => {
                        let o = odiou_loss(&det.bbox, gt, weights.gamma);
                        bbox += o.total;
                        for j in 0..7 {
                            g.bbox[j] = norm * weights.omega1 * o.grad[j];
                        }
                    }
                    BoxLossKind::SmoothL1 => {
                        let target = encode(gt, &anchors[a]);
                        let (v, d) = residual_smooth_l1(&out.residuals[a], &target, SMOOTH_L1_BETA);
                        bbox += v;
                        for j in 0..7 {
                            g.residual[j] = norm * weights.omega1 * d[j];
                        }
                    }
                }
                let (v, d) = direction_loss(out.dir_logits[a], direction_target(gt.r));
                dir += v;
                g.dir = [norm * weights.omega2 * d[0], norm * weights.omega2 * d[1]];
            }
        }
    }
    SupervisedLoss { cls: cls * norm, bbox: bbox * norm, dir: dir * norm, n_pos, grads }
}
