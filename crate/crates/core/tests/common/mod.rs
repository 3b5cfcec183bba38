//! Independent reference implementations used by several test targets.
#![allow(dead_code)]

pub mod aug;
pub mod grads;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sessd::eval::{EvalConfig, ScoredBox};
use sessd::geom::{iou_bev, Box3D, Point};
use sessd::matching::{MatchConfig, MatchPair};
use sessd::{Detection, Exec, ObjectLabel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box<R: Rng>(rng: &mut R, spread: f64) -> Box3D {
    Box3D::new(
        rng.random_range(-spread..spread),
        rng.random_range(-spread..spread),
        rng.random_range(-0.5..0.5),
        rng.random_range(0.5..3.0),
        rng.random_range(0.5..5.0),
        rng.random_range(0.5..2.0),
        rng.random_range(-3.14..3.14),
    )
    .unwrap()
}

/// Monte-Carlo BEV IoU: sample uniformly inside `a`, count hits in `b`.
/// Samples live in `a`'s normalized frame and are carried into `b`'s by
/// one affine map built from three reference points.
pub fn mc_iou_bev(a: &Box3D, b: &Box3D, samples: usize, seed: u64, exec: Exec) -> f64 {
    const CHUNK: usize = 1 << 14;
    let to_b = |u: [f64; 3]| {
        let w = a.from_normalized(u);
        let n = b.to_normalized(&Point::new(w[0], w[1], b.cz, 0.0));
        [n[0], n[1]]
    };
    let o = to_b([0.0, 0.0, 0.0]);
    let ex = to_b([1.0, 0.0, 0.0]);
    let ey = to_b([0.0, 1.0, 0.0]);
    let (mx, my) = ([ex[0] - o[0], ex[1] - o[1]], [ey[0] - o[0], ey[1] - o[1]]);
    let n_chunks = samples.div_ceil(CHUNK);
    let hits: usize = exec
        .map_range(n_chunks, |c| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(c as u64);
            let n = CHUNK.min(samples - c * CHUNK);
            let mut hit = 0;
            for _ in 0..n {
                let u: f64 = r.random_range(-1.0..1.0);
                let v: f64 = r.random_range(-1.0..1.0);
                let x = o[0] + u * mx[0] + v * my[0];
                let y = o[1] + u * mx[1] + v * my[1];
                hit += usize::from(x.abs() <= 1.0 && y.abs() <= 1.0);
            }
            hit
        })
        .into_iter()
        .sum();
    let inter = a.bev_area() * hits as f64 / samples as f64;
    inter / (a.bev_area() + b.bev_area() - inter)
}

/// Full-table enumeration of the soft-target matching rule.
pub fn brute_force_matching(student: &[Detection], teacher: &[Detection], cfg: &MatchConfig) -> (Vec<MatchPair>, usize) {
    let sig = |l: f64| 1.0 / (1.0 + (-l).exp());
    let table: Vec<Vec<f64>> = student.iter().map(|s| teacher.iter().map(|t| iou_bev(&s.bbox, &t.bbox)).collect()).collect();
    let mut pairs = Vec::new();
    let mut n_initial = 0;
    for (i, s) in student.iter().enumerate() {
        if sig(s.logit) < cfg.tau_c {
            continue;
        }
        n_initial += 1;
        let mut cands: Vec<(usize, f64)> =
            (0..teacher.len()).filter(|&j| sig(teacher[j].logit) >= cfg.tau_c).map(|j| (j, table[i][j])).collect();
        cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        if let Some(&(j, iou)) = cands.first() {
            if iou > cfg.tau_i {
                pairs.push(MatchPair { student: i, teacher: j, iou });
            }
        }
    }
    (pairs, n_initial)
}

/// AP by re-running matching at every score threshold. Only handles
/// ground truths that are all cared for (single class, no ignore regions).
pub fn brute_force_ap(preds: &[Vec<ScoredBox>], gts: &[Vec<ObjectLabel>], cfg: &EvalConfig) -> f64 {
    let n_gt: usize = gts.iter().map(|g| g.len()).sum();
    if n_gt == 0 {
        return 0.0;
    }
    let mut thresholds: Vec<f64> = preds.iter().flatten().map(|p| p.score).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut curve = Vec::new();
    for &th in &thresholds {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (ps, gs) in preds.iter().zip(gts) {
            let mut kept: Vec<&ScoredBox> = ps.iter().filter(|p| p.score >= th).collect();
            kept.sort_by(|a, b| b.score.total_cmp(&a.score));
            let mut used = vec![false; gs.len()];
            for p in kept {
                let best = (0..gs.len())
                    .filter(|&j| !used[j])
                    .map(|j| (j, cfg.mode.iou(&p.bbox, &gs[j].bbox)))
                    .filter(|&(_, v)| v >= cfg.iou_threshold)
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
                match best {
                    Some((j, _)) => {
                        used[j] = true;
                        tp += 1;
                    }
                    None => fp += 1,
                }
            }
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    let samples = cfg.recall_points.samples();
    samples
        .iter()
        .map(|&r| curve.iter().filter(|(rec, _)| *rec >= r - 1e-12).map(|(_, p)| *p).fold(0.0, f64::max))
        .sum::<f64>()
        / samples.len() as f64
}

pub fn random_dets<R: Rng>(r: &mut R, n: usize) -> Vec<Detection> {
    // clustered so that high-IoU pairs are common
    (0..n)
        .map(|_| {
            let cx = r.random_range(0..4) as f64 * 6.0 + r.random_range(-0.4..0.4);
            let cy = r.random_range(-0.4..0.4);
            let b = Box3D::new(cx, cy, 0.0, r.random_range(1.5..1.9), r.random_range(3.6..4.2), 1.5, r.random_range(-0.2..0.2)).unwrap();
            Detection::new(b, r.random_range(-3.0..3.0))
        })
        .collect()
}

pub fn car(cx: f64, logit: f64) -> Detection {
    Detection::new(Box3D::new(cx, 0.0, 0.0, 2.0, 4.0, 1.5, 0.0).unwrap(), logit)
}

/// Students at x=0 and x=10; teachers at 0.4 (score 0.6), 0.1 (0.5) and 10
/// (0.73); one ground truth at x=0.
pub fn strategy_fixture() -> (Vec<Detection>, Vec<Detection>, Vec<Box3D>) {
    let s = vec![car(0.0, 2.0), car(10.0, 2.0)];
    let t = vec![car(0.4, 1.5f64.ln()), car(0.1, 0.0), car(10.0, 1.0)];
    (s, t, vec![car(0.0, 0.0).bbox])
}
