//! Finite-difference checks of every analytic gradient, shared by the
//! gradient tests and the acceptance report.

use rand::Rng;
use sessd::geom::Box3D;
use sessd::losses::*;
use sessd::matching::{MatchPair, MatchSet};
use sessd::pipeline::{voxelize, DetectorSpec, OutputGrad, ToyDetector};
use sessd::pipeline::synth::{synth_scene, SynthConfig};
use sessd::Detection;

use super::rng;

pub const FD_STEP: f64 = 1e-4;
/// The detector objective sums hundreds of terms, so roundoff swamps the
/// smallest weight gradients at `FD_STEP`; a wider five-point stencil keeps
/// truncation error negligible while cutting roundoff tenfold.
pub const DETECTOR_FD_STEP: f64 = 1e-3;

fn box_from(v: &[f64]) -> Box3D {
    Box3D { cx: v[0], cy: v[1], cz: v[2], w: v[3], l: v[4], h: v[5], r: v[6] }
}

fn random_pair<R: Rng>(r: &mut R) -> (Box3D, Box3D) {
    let gt = Box3D::new(
        r.random_range(-5.0..5.0),
        r.random_range(-5.0..5.0),
        r.random_range(-1.0..1.0),
        r.random_range(1.0..2.5),
        r.random_range(2.0..5.0),
        r.random_range(1.0..2.0),
        r.random_range(-3.0..3.0),
    )
    .unwrap();
    let pred = Box3D::new(
        gt.cx + r.random_range(-2.0..2.0),
        gt.cy + r.random_range(-2.0..2.0),
        gt.cz + r.random_range(-0.8..0.8),
        gt.w * r.random_range(0.6..1.5),
        gt.l * r.random_range(0.6..1.5),
        gt.h * r.random_range(0.6..1.5),
        gt.r + r.random_range(-1.4..1.4),
    )
    .unwrap();
    (pred, gt)
}

pub fn smooth_l1_err(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let mut x: f64 = r.random_range(-3.0..3.0);
            // keep clear of the kink at |x| = beta
            while (x.abs() - SMOOTH_L1_BETA).abs() < 1e-2 {
                x = r.random_range(-3.0..3.0);
            }
            let (_, g) = smooth_l1(x, SMOOTH_L1_BETA);
            grad_check(|v| smooth_l1(v[0], SMOOTH_L1_BETA).0, &[g], &[x], FD_STEP).max_rel_err
        })
        .fold(0.0, f64::max)
}

pub fn focal_err(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let x = r.random_range(-6.0..6.0);
            let t = i % 2 == 0;
            let (_, g) = focal_loss(x, t, FOCAL_ALPHA, FOCAL_GAMMA);
            grad_check(|v| focal_loss(v[0], t, FOCAL_ALPHA, FOCAL_GAMMA).0, &[g], &[x], FD_STEP).max_rel_err
        })
        .fold(0.0, f64::max)
}

pub fn direction_err(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let x = [r.random_range(-4.0..4.0), r.random_range(-4.0..4.0)];
            let t = i % 2;
            let (_, g) = direction_loss(x, t);
            grad_check(|v| direction_loss([v[0], v[1]], t).0, &g, &x, FD_STEP).max_rel_err
        })
        .fold(0.0, f64::max)
}

pub fn odiou_smooth_err(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let gamma = 1.25;
    (0..n)
        .map(|_| {
            let (pred, gt) = random_pair(&mut r);
            let (_, _, g) = odiou_smooth_terms(&pred, &gt, gamma);
            let f = |v: &[f64]| {
                let (c, o, _) = odiou_smooth_terms(&box_from(v), &gt, gamma);
                c + o
            };
            grad_check(f, &g, &pred.to_array(), FD_STEP).max_rel_err
        })
        .fold(0.0, f64::max)
}

pub fn residual_smooth_l1_err(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let t: [f64; 7] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
            let p: [f64; 7] = std::array::from_fn(|k| {
                let mut v: f64 = t[k] + r.random_range(-2.5..2.5);
                while ((v - t[k]).abs() - 1.0).abs() < 1e-2 {
                    v = t[k] + r.random_range(-2.5..2.5);
                }
                v
            });
            let (_, g) = residual_smooth_l1(&p, &t, SMOOTH_L1_BETA);
            let f = |v: &[f64]| residual_smooth_l1(&v.try_into().unwrap(), &t, SMOOTH_L1_BETA).0;
            grad_check(f, &g, &p, FD_STEP).max_rel_err
        })
        .fold(0.0, f64::max)
}

pub fn consistency_err(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let (sb, tb) = random_pair(&mut r);
            let s = vec![Detection::new(sb, r.random_range(-3.0..3.0))];
            let t = vec![Detection::new(tb, r.random_range(-3.0..3.0))];
            let m = MatchSet { pairs: vec![MatchPair { student: 0, teacher: 0, iou: 0.8 }], n_initial: 1 };
            let (_, gb) = consistency_box_loss(&m, &s, &t).unwrap();
            let (_, gc) = consistency_cls_loss(&m, &s, &t).unwrap();
            let mut point = sb.to_array().to_vec();
            point.push(s[0].logit);
            let mut analytic = gb[0].to_vec();
            analytic.push(gc[0]);
            let f = |v: &[f64]| {
                let d = vec![Detection::new(box_from(v), v[7])];
                consistency_box_loss(&m, &d, &t).unwrap().0 + consistency_cls_loss(&m, &d, &t).unwrap().0
            };
            grad_check(f, &analytic, &point, FD_STEP).max_rel_err
        })
        .fold(0.0, f64::max)
}

/// Backprop through the toy detector against a random linear functional of
/// its outputs.
pub fn detector_err(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let spec = DetectorSpec { cells: [4, 4], hidden: 6, ..Default::default() };
    (0..n)
        .map(|i| {
            let scene = synth_scene(&SynthConfig::default(), &mut r);
            let grid = voxelize(&scene.points, &spec.voxel);
            let mut model = ToyDetector::new(spec, seed ^ i as u64);
            for v in &mut model.params.values {
                *v *= 0.5;
            }
            let n_a = spec.n_anchors();
            let up: Vec<OutputGrad> = (0..n_a)
                .map(|_| OutputGrad {
                    bbox: std::array::from_fn(|_| r.random_range(-1.0..1.0)),
                    residual: std::array::from_fn(|_| r.random_range(-1.0..1.0)),
                    logit: r.random_range(-1.0..1.0),
                    dir: [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
                })
                .collect();
            let feats = model.features(&grid);
            let objective = |m: &ToyDetector| {
                let (out, _) = m.forward_features(feats.clone());
                let mut s = 0.0;
                for (a, u) in up.iter().enumerate() {
                    let b = out.detections[a].bbox.to_array();
                    for k in 0..7 {
                        s += u.bbox[k] * b[k] + u.residual[k] * out.residuals[a][k];
                    }
                    s += u.logit * out.detections[a].logit + u.dir[0] * out.dir_logits[a][0] + u.dir[1] * out.dir_logits[a][1];
                }
                s
            };
            let (_, cache) = model.forward_features(feats.clone());
            let g = model.backward(&cache, &up).unwrap();
            let point = model.params.values.clone();
            let f = |v: &[f64]| {
                let mut m = model.clone();
                m.params.values.copy_from_slice(v);
                objective(&m)
            };
            grad_check_5pt(f, &g.values, &point, DETECTOR_FD_STEP).max_rel_err
        })
        .fold(0.0, f64::max)
}
