//! Loss functions with their gradients.
//!
//! Every loss returns its value together with the derivative with respect to
//! its continuous inputs, so the toy detector can backpropagate without an
//! autodiff engine. Box gradients use the parameter order
//! `(cx, cy, cz, w, l, h, r)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Box3D};
use crate::matching::MatchSet;
use crate::scene::Detection;

/// Smooth-L1 transition point used throughout.
pub const SMOOTH_L1_BETA: f64 = 1.0;

/// Finite-difference step for the rotated-IoU part of the ODIoU gradient.
pub const IOU_FD_STEP: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LossError {
    #[error("match references student {student} / teacher {teacher}, but only {n_student} / {n_teacher} detections exist")]
    MismatchedIndices { student: usize, teacher: usize, n_student: usize, n_teacher: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub omega1: f64,
    pub omega2: f64,
    pub gamma: f64,
    pub mu_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { omega1: 2.0, omega2: 0.2, gamma: 1.25, mu_t: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("omega1", self.omega1), ("omega2", self.omega2), ("gamma", self.gamma), ("mu_t", self.mu_t)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.mu_t > 1.0 {
            return Err(format!("mu_t must be <= 1, got {}", self.mu_t));
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Returns `(value, d value / dx)`.
pub fn smooth_l1(x: f64, beta: f64) -> (f64, f64) {
    debug_assert!(beta > 0.0);
    if x.abs() < beta {
        (0.5 * x * x / beta, x / beta)
    } else {
        (x.abs() - 0.5 * beta, x.signum())
    }
}

/// Per-term view of the orientation-aware distance-IoU loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ODIoUBreakdown {
    /// `1 - IoU`.
    pub iou_term: f64,
    /// Squared center distance over squared enclosing diagonal.
    pub center_term: f64,
    /// `gamma * (1 - |cos(dr)|)`.
    pub orient_term: f64,
    pub total: f64,
    /// Gradient of `total` with respect to the predicted box.
    pub grad: [f64; 7],
}

/// `gamma * (1 - |cos(dr)|)`.
pub fn orient_term(delta_r: f64, gamma: f64) -> f64 {
    let c = delta_r.cos().abs();
    // cos(pi/2) is 6e-17 in floating point
    let c = if c <= 1e-12 { 0.0 } else { c };
    gamma * (1.0 - c)
}

/// Derivative of [`orient_term`] in `delta_r`; 0 at the kinks `dr = +-pi/2`.
pub fn orient_term_grad(delta_r: f64, gamma: f64) -> f64 {
    let c = delta_r.cos();
    if c.abs() <= 1e-12 {
        return 0.0;
    }
    gamma * c.signum() * delta_r.sin()
}

/// Gradient of `c^2 / d^2` in the predicted box parameters.
fn center_term_grad(pred: &Box3D, gt: &Box3D) -> (f64, [f64; 7]) {
    let dc = [pred.cx - gt.cx, pred.cy - gt.cy, pred.cz - gt.cz];
    let c2: f64 = dc.iter().map(|v| v * v).sum();
    let (lo, hi) = geom::enclosing_bounds(pred, gt);
    let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let d2: f64 = ext.iter().map(|v| v * v).sum();
    let value = c2 / d2;

    let mut dc2 = [0.0; 7];
    dc2[0] = 2.0 * dc[0];
    dc2[1] = 2.0 * dc[1];
    dc2[2] = 2.0 * dc[2];

    // derivatives of the extreme coordinates, nonzero only where the
    // predicted box attains the extreme strictly
    let (gt_lo, gt_hi) = geom::enclosing_bounds(gt, gt);
    let (s, c) = pred.r.sin_cos();
    let mut d_hi = [[0.0; 7]; 3];
    let mut d_lo = [[0.0; 7]; 3];
    let mut best_hi = gt_hi;
    let mut best_lo = gt_lo;
    for (sa, sb) in [(1.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let a = 0.5 * sa * pred.l;
        let b = 0.5 * sb * pred.w;
        let x = pred.cx + c * a - s * b;
        let y = pred.cy + s * a + c * b;
        let mut gx = [0.0; 7];
        gx[0] = 1.0;
        gx[3] = -s * 0.5 * sb;
        gx[4] = c * 0.5 * sa;
        gx[6] = -s * a - c * b;
        let mut gy = [0.0; 7];
        gy[1] = 1.0;
        gy[3] = c * 0.5 * sb;
        gy[4] = s * 0.5 * sa;
        gy[6] = c * a - s * b;
        for (axis, v, g) in [(0usize, x, gx), (1usize, y, gy)] {
            if v > best_hi[axis] {
                best_hi[axis] = v;
                d_hi[axis] = g;
            }
            if v < best_lo[axis] {
                best_lo[axis] = v;
                d_lo[axis] = g;
            }
        }
    }
    if pred.z_max() > gt_hi[2] {
        d_hi[2][2] = 1.0;
        d_hi[2][5] = 0.5;
    }
    if pred.z_min() < gt_lo[2] {
        d_lo[2][2] = 1.0;
        d_lo[2][5] = -0.5;
    }
    let mut dd2 = [0.0; 7];
    for axis in 0..3 {
        for k in 0..7 {
            dd2[k] += 2.0 * ext[axis] * (d_hi[axis][k] - d_lo[axis][k]);
        }
    }
    let mut grad = [0.0; 7];
    for k in 0..7 {
        grad[k] = (dc2[k] * d2 - c2 * dd2[k]) / (d2 * d2);
    }
    (value, grad)
}

/// Central-difference gradient of the 3D IoU in the predicted box.
fn iou_grad_fd(pred: &Box3D, gt: &Box3D, step: f64) -> [f64; 7] {
    let base = pred.to_array();
    let mut g = [0.0; 7];
    for k in 0..7 {
        let mut plus = base;
        let mut minus = base;
        plus[k] += step;
        minus[k] -= step;
        let (Ok(bp), Ok(bm)) = (Box3D::from_array(plus), Box3D::from_array(minus)) else {
            continue;
        };
        g[k] = (geom::iou_3d(&bp, gt) - geom::iou_3d(&bm, gt)) / (2.0 * step);
    }
    g
}

/// The analytic center and orientation terms with their gradient.
pub fn odiou_smooth_terms(pred: &Box3D, gt: &Box3D, gamma: f64) -> (f64, f64, [f64; 7]) {
    let (center, mut grad) = center_term_grad(pred, gt);
    let dr = pred.r - gt.r;
    grad[6] += orient_term_grad(dr, gamma);
    (center, orient_term(dr, gamma), grad)
}

pub fn odiou_loss(pred: &Box3D, gt: &Box3D, gamma: f64) -> ODIoUBreakdown {
    let iou_term = 1.0 - geom::iou_3d(pred, gt);
    let (center_term, orient_term, mut grad) = odiou_smooth_terms(pred, gt, gamma);
    let g_iou = iou_grad_fd(pred, gt, IOU_FD_STEP);
    for k in 0..7 {
        grad[k] -= g_iou[k];
    }
    ODIoUBreakdown { iou_term, center_term, orient_term, total: iou_term + center_term + orient_term, grad }
}

/// Smooth-L1 on box residuals, with the yaw residual taken through `sin`.
///
/// This is the regression loss the ODIoU loss replaces in ablations. Inputs are
/// encoded residuals; the value is the plain sum over the seven dimensions.
pub fn residual_smooth_l1(pred: &[f64; 7], target: &[f64; 7], beta: f64) -> (f64, [f64; 7]) {
    let mut value = 0.0;
    let mut grad = [0.0; 7];
    for k in 0..6 {
        let (v, g) = smooth_l1(pred[k] - target[k], beta);
        value += v;
        grad[k] = g;
    }
    let d = pred[6] - target[6];
    let (v, g) = smooth_l1(d.sin(), beta);
    value += v;
    grad[6] = g * d.cos();
    (value, grad)
}

fn check_indices(matches: &MatchSet, n_student: usize, n_teacher: usize) -> Result<(), LossError> {
    for p in &matches.pairs {
        if p.student >= n_student || p.teacher >= n_teacher {
            return Err(LossError::MismatchedIndices {
                student: p.student,
                teacher: p.teacher,
                n_student,
                n_teacher,
            });
        }
    }
    Ok(())
}

/// Box consistency between matched student and teacher detections.
///
/// Returns the loss and one gradient row per student detection (zero rows for
/// unmatched detections).
pub fn consistency_box_loss(
    matches: &MatchSet,
    student: &[Detection],
    teacher: &[Detection],
) -> Result<(f64, Vec<[f64; 7]>), LossError> {
    check_indices(matches, student.len(), teacher.len())?;
    let mut grads = vec![[0.0; 7]; student.len()];
    let n = matches.n_final();
    if n == 0 {
        return Ok((0.0, grads));
    }
    let norm = 1.0 / (7.0 * n as f64);
    let mut total = 0.0;
    for p in &matches.pairs {
        let s = student[p.student].bbox.to_array();
        let t = teacher[p.teacher].bbox.to_array();
        let g = &mut grads[p.student];
        for k in 0..6 {
            // SmoothL1(|d|) = SmoothL1(d)
            let (v, dv) = smooth_l1(s[k] - t[k], SMOOTH_L1_BETA);
            total += v;
            g[k] += norm * dv;
        }
        let d = s[6] - t[6];
        let (v, dv) = smooth_l1(d.sin(), SMOOTH_L1_BETA);
        total += v;
        g[6] += norm * dv * d.cos();
    }
    Ok((total * norm, grads))
}

/// Confidence consistency; gradients are with respect to the student logits.
pub fn consistency_cls_loss(
    matches: &MatchSet,
    student: &[Detection],
    teacher: &[Detection],
) -> Result<(f64, Vec<f64>), LossError> {
    check_indices(matches, student.len(), teacher.len())?;
    let mut grads = vec![0.0; student.len()];
    let n = matches.n_final();
    if n == 0 {
        return Ok((0.0, grads));
    }
    let norm = 1.0 / n as f64;
    let mut total = 0.0;
    for p in &matches.pairs {
        let ps = sigmoid(student[p.student].logit);
        let pt = sigmoid(teacher[p.teacher].logit);
        let (v, dv) = smooth_l1(ps - pt, SMOOTH_L1_BETA);
        total += v;
        grads[p.student] += norm * dv * ps * (1.0 - ps);
    }
    Ok((total * norm, grads))
}

/// Both consistency terms carry equal weight.
pub fn consistency_total(box_loss: f64, cls_loss: f64) -> f64 {
    cls_loss + box_loss
}

/// Binary focal loss on a logit. Returns `(value, d value / d logit)`.
pub fn focal_loss(logit: f64, target: bool, alpha: f64, gamma_f: f64) -> (f64, f64) {
    // work with z so that the target class probability is sigmoid(z)
    let (z, a, sign) = if target { (logit, alpha, 1.0) } else { (-logit, 1.0 - alpha, -1.0) };
    let p = sigmoid(z);
    let q = sigmoid(-z);
    let log_p = -softplus(-z);
    let mod_f = q.powf(gamma_f);
    let value = -a * mod_f * log_p;
    // d/dz [-a q^g log p] = a q^g (g p log p - q)
    let dz = a * mod_f * (gamma_f * p * log_p - q);
    (value, sign * dz)
}

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

/// Two-way softmax cross-entropy. Returns `(value, d value / d logits)`.
pub fn direction_loss(logits: [f64; 2], target_dir: usize) -> (f64, [f64; 2]) {
    debug_assert!(target_dir < 2);
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let lse = m + (e0 + e1).ln();
    let p = [e0 / (e0 + e1), e1 / (e0 + e1)];
    let value = lse - logits[target_dir];
    let mut grad = p;
    grad[target_dir] -= 1.0;
    (value, grad)
}

/// Direction class of a ground-truth yaw.
pub fn direction_target(yaw: f64) -> usize {
    usize::from(yaw > 0.0)
}

/// Component losses of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StudentLossParts {
    pub cls: f64,
    pub bbox: f64,
    pub dir: f64,
    pub cons_cls: f64,
    pub cons_box: f64,
}

pub fn student_total_loss(parts: &StudentLossParts, weights: &LossWeights) -> f64 {
    parts.cls
        + weights.omega1 * parts.bbox
        + weights.omega2 * parts.dir
        + weights.mu_t * consistency_total(parts.cons_box, parts.cons_cls)
}

/// Sigmoid-shaped ramp `exp(-5 (1 - x)^2)` with `x = min(epoch / ramp, 1)`.
pub fn mu_ramp(epoch: f64, ramp_epochs: f64) -> f64 {
    if ramp_epochs <= 0.0 {
        return 1.0;
    }
    let x = (epoch.max(0.0) / ramp_epochs).min(1.0);
    (-5.0 * (1.0 - x) * (1.0 - x)).exp()
}

pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total_steps == 0 {
        return lr_max;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * t).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub per_param_errs: Vec<f64>,
    pub step: f64,
}

/// Compares an analytic gradient against central differences of `f`.
pub fn grad_check<F>(f: F, analytic: &[f64], point: &[f64], step: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(analytic.len(), point.len(), "gradient and point dimensions differ");
    let mut x = point.to_vec();
    let per_param_errs: Vec<f64> = (0..point.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let fp = f(&x);
            x[i] = orig - step;
            let fm = f(&x);
            x[i] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            (analytic[i] - numeric).abs() / denom
        })
        .collect();
    let max_rel_err = per_param_errs.iter().copied().fold(0.0, f64::max);
    GradCheckReport { max_rel_err, per_param_errs, step }
}

/// Like [`grad_check`] but with the fourth-order central stencil
/// `(f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h`.
pub fn grad_check_5pt<F>(f: F, analytic: &[f64], point: &[f64], step: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(analytic.len(), point.len(), "gradient and point dimensions differ");
    let mut x = point.to_vec();
    let per_param_errs: Vec<f64> = (0..point.len())
        .map(|i| {
            let orig = x[i];
            let mut at = |d: f64| {
                x[i] = orig + d;
                let v = f(&x);
                x[i] = orig;
                v
            };
            let numeric = (at(-2.0 * step) - 8.0 * at(-step) + 8.0 * at(step) - at(2.0 * step)) / (12.0 * step);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            (analytic[i] - numeric).abs() / denom
        })
        .collect();
    let max_rel_err = per_param_errs.iter().copied().fold(0.0, f64::max);
    GradCheckReport { max_rel_err, per_param_errs, step }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::MatchPair;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn det(p: [f64; 7], logit: f64) -> Detection {
        Detection::new(Box3D::from_array(p).unwrap(), logit)
    }

    fn one_pair() -> MatchSet {
        MatchSet { pairs: vec![MatchPair { student: 0, teacher: 0, iou: 1.0 }], n_initial: 1 }
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0, 1.0), (0.0, 0.0));
        assert_eq!(smooth_l1(2.0, 1.0), (1.5, 1.0));
        assert_eq!(smooth_l1(-0.5, 1.0), (0.125, -0.5));
        // continuous at the joint
        let (a, ga) = smooth_l1(1.0 - 1e-12, 1.0);
        let (b, gb) = smooth_l1(1.0, 1.0);
        assert!((a - b).abs() < 1e-9 && (ga - gb).abs() < 1e-9);
    }

    #[test]
    fn odiou_identity_is_zero() {
        let b = Box3D::new(3.0, 1.0, -0.5, 1.6, 3.9, 1.5, 0.4).unwrap();
        let o = odiou_loss(&b, &b, 1.25);
        assert_eq!(o.total, 0.0);
        assert_eq!((o.iou_term, o.center_term, o.orient_term), (0.0, 0.0, 0.0));
    }

    #[test]
    fn odiou_orientation_extremes() {
        let gt = Box3D::new(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
        let perp = Box3D { r: FRAC_PI_2, ..gt };
        assert_eq!(odiou_loss(&perp, &gt, 1.25).orient_term, 1.25);
        for dr in [0.0, PI, -PI] {
            assert_eq!(orient_term(dr, 1.25), 0.0);
        }
    }

    #[test]
    fn odiou_far_cubes() {
        let a = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let b = Box3D::new(3.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let o = odiou_loss(&b, &a, 1.25);
        assert_relative_eq!(o.center_term, 0.5, max_relative = 1e-12);
        assert_eq!(o.iou_term, 1.0);
        assert_relative_eq!(o.total, o.iou_term + o.center_term + o.orient_term, epsilon = 1e-12);
    }

    #[test]
    fn orient_grad_examples() {
        let g = 1.25;
        assert_eq!(orient_term_grad(0.0, g), 0.0);
        assert_relative_eq!(orient_term_grad(FRAC_PI_4, g), g * FRAC_PI_4.sin(), max_relative = 1e-12);
        assert_relative_eq!(orient_term_grad(3.0 * FRAC_PI_4, g), -g * FRAC_PI_4.sin(), max_relative = 1e-12);
        assert_eq!(orient_term_grad(FRAC_PI_2, g), 0.0);
        assert_eq!(orient_term_grad(-FRAC_PI_2, g), 0.0);
    }

    #[test]
    fn consistency_examples() {
        let base = [1.0, 2.0, -1.0, 1.6, 3.9, 1.5, 0.3];
        let s = vec![det(base, 0.5)];
        let (v, g) = consistency_box_loss(&one_pair(), &s, &s).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g[0], [0.0; 7]);

        let mut flipped = base;
        flipped[6] += PI;
        let (v, _) = consistency_box_loss(&one_pair(), &s, &[det(flipped, 0.5)]).unwrap();
        assert!(v.abs() < 1e-20);

        let mut moved = base;
        moved[0] += 1.0;
        let (v, _) = consistency_box_loss(&one_pair(), &[det(moved, 0.5)], &s).unwrap();
        assert_relative_eq!(v, 0.5 / 7.0, max_relative = 1e-12);

        let (v, _) = consistency_cls_loss(&one_pair(), &[det(base, 20.0)], &[det(base, -20.0)]).unwrap();
        assert_relative_eq!(v, 0.5, max_relative = 1e-8);
        let (v, _) = consistency_cls_loss(&one_pair(), &[det(base, 0.0)], &[det(base, 0.0)]).unwrap();
        assert_eq!(v, 0.0);

        let empty = MatchSet::default();
        assert_eq!(consistency_box_loss(&empty, &s, &s).unwrap().0, 0.0);
        assert_eq!(consistency_cls_loss(&empty, &s, &s).unwrap().0, 0.0);
    }

    #[test]
    fn consistency_rejects_bad_indices() {
        let s = vec![det([0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0], 0.0)];
        let bad = MatchSet { pairs: vec![MatchPair { student: 0, teacher: 3, iou: 0.9 }], n_initial: 1 };
        assert!(matches!(consistency_box_loss(&bad, &s, &s), Err(LossError::MismatchedIndices { .. })));
        assert!(consistency_cls_loss(&bad, &s, &s).is_err());
    }

    #[test]
    fn consistency_totals() {
        assert_eq!(consistency_total(0.0, 0.0), 0.0);
        assert_relative_eq!(consistency_total(0.2, 0.3), 0.5);
    }

    #[test]
    fn focal_examples() {
        assert!(focal_loss(20.0, true, 0.25, 2.0).0 < 1e-12);
        let ln2 = 2.0_f64.ln();
        assert_relative_eq!(focal_loss(0.0, true, 0.25, 2.0).0, 0.25 * 0.25 * ln2, max_relative = 1e-12);
        assert_relative_eq!(focal_loss(0.0, false, 0.25, 2.0).0, 0.75 * 0.25 * ln2, max_relative = 1e-12);
        assert!((focal_loss(0.0, true, 0.25, 2.0).0 - 0.0433).abs() < 1e-4);
        assert!((focal_loss(0.0, false, 0.25, 2.0).0 - 0.1300).abs() < 1e-4);
        // stable for extreme logits
        assert!(focal_loss(-800.0, true, 0.25, 2.0).0.is_finite());
        assert!(focal_loss(800.0, false, 0.25, 2.0).1.is_finite());
    }

    #[test]
    fn direction_examples() {
        assert!(direction_loss([10.0, -10.0], 0).0 < 1e-8);
        assert_relative_eq!(direction_loss([0.0, 0.0], 1).0, 2.0_f64.ln());
        let (_, g) = direction_loss([0.3, -1.2], 1);
        assert!((g[0] + g[1]).abs() < 1e-15);
        assert_eq!(direction_target(0.4), 1);
        assert_eq!(direction_target(-0.4), 0);
    }

    #[test]
    fn student_total_examples() {
        let ones = StudentLossParts { cls: 1.0, bbox: 1.0, dir: 1.0, cons_cls: 1.0, cons_box: 1.0 };
        assert_relative_eq!(student_total_loss(&ones, &LossWeights::default()), 5.2, max_relative = 1e-12);
        let w0 = LossWeights { mu_t: 0.0, ..Default::default() };
        let p = StudentLossParts { cls: 0.7, bbox: 0.3, dir: 0.1, cons_cls: 9.0, cons_box: 4.0 };
        assert_eq!(student_total_loss(&p, &w0), 0.7 + 2.0 * 0.3 + 0.2 * 0.1);
    }

    #[test]
    fn ramp_and_schedule() {
        assert!((mu_ramp(0.0, 15.0) - (-5.0_f64).exp()).abs() < 1e-15);
        assert!((mu_ramp(0.0, 15.0) - 0.006737947).abs() < 1e-9);
        assert_eq!(mu_ramp(15.0, 15.0), 1.0);
        assert_eq!(mu_ramp(40.0, 15.0), 1.0);
        assert_relative_eq!(mu_ramp(7.5, 15.0), (-1.25_f64).exp(), max_relative = 1e-15);
        let mut last = 0.0;
        for e in 0..20 {
            let m = mu_ramp(e as f64, 15.0);
            assert!(m >= last);
            last = m;
        }
        assert_eq!(cosine_lr(0, 100, 1e-3, 1e-5), 1e-3);
        assert_relative_eq!(cosine_lr(100, 100, 1e-3, 1e-5), 1e-5, max_relative = 1e-12);
        assert_relative_eq!(cosine_lr(50, 100, 1e-3, 1e-5), 0.5 * (1e-3 + 1e-5), max_relative = 1e-12);
    }

    #[test]
    fn grad_check_quadratic() {
        let f = |x: &[f64]| x.iter().map(|v| 3.0 * v * v).sum::<f64>();
        let pt = [0.5, -1.0, 2.0];
        let grad: Vec<f64> = pt.iter().map(|v| 6.0 * v).collect();
        let rep = grad_check(f, &grad, &pt, 1e-4);
        assert!(rep.max_rel_err < 1e-6);
        assert_eq!(rep.per_param_errs.len(), 3);
    }

    #[test]
    fn five_point_stencil_is_exact_on_quartics() {
        let rep = grad_check_5pt(|x| x[0].powi(4) - x[0], &[4.0 * 1.3f64.powi(3) - 1.0], &[1.3], 1e-2);
        assert!(rep.max_rel_err < 1e-10, "{}", rep.max_rel_err);
    }

    #[test]
    fn grad_check_focal_at_point_three() {
        let (_, g) = focal_loss(0.3, true, 0.25, 2.0);
        let rep = grad_check(|x| focal_loss(x[0], true, 0.25, 2.0).0, &[g], &[0.3], 1e-4);
        assert!(rep.max_rel_err < 1e-6, "{rep:?}");
    }
}
