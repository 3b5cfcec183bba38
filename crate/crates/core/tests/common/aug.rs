//! Augmentation invariants shared by the invariant suite and the acceptance run.

use rand::Rng;
use sessd::augment::*;
use sessd::geom::Point;
use sessd::Scene;

use super::rng;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub fn object_points(scene: &Scene, o: usize) -> Vec<Point> {
    scene.points.iter().zip(scene.point_owners(OWNER_EPS)).filter(|(_, w)| *w == Some(o)).map(|(p, _)| *p).collect()
}

pub fn same(a: &Point, b: &Point) -> bool {
    a.x.to_bits() == b.x.to_bits() && a.y.to_bits() == b.y.to_bits() && a.z.to_bits() == b.z.to_bits()
}

/// True when `sub` is a subsequence of `all`.
pub fn is_subsequence(sub: &[Point], all: &[Point]) -> bool {
    let mut it = all.iter();
    sub.iter().all(|p| it.any(|q| same(p, q)))
}

/// Set-membership and count properties of dropout, sparsify and swap on
/// every object of `scene`.
pub fn check_ops<R: Rng>(scene: &Scene, r: &mut R) -> Result<(), String> {
    let n = scene.labels.len();
    for o in 0..n {
        let b = scene.labels[o].bbox;
        let pts = object_points(scene, o);
        let part = partition_pyramids(&pts, &b).map_err(|e| e.to_string())?;
        ensure!(part.faces.len() == pts.len(), "partition size");
        ensure!(part.counts().iter().sum::<usize>() == pts.len(), "partition counts");

        let face = r.random_range(0..6u8);
        let subset = part.subset(face);
        let dropped = dropout_pyramid(&pts, &part, face);
        ensure!(dropped.len() == pts.len() - subset.len(), "dropout count");
        let rest: Vec<Point> = (0..pts.len()).filter(|i| !subset.contains(i)).map(|i| pts[i]).collect();
        ensure!(dropped.iter().zip(&rest).all(|(a, b)| same(a, b)), "dropout kept the wrong points");

        let ratio = r.random_range(0.1..1.0);
        let sp = sparsify_pyramid(&pts, &part, face, ratio, r);
        let expect_kept = if subset.is_empty() { 0 } else { ((ratio * subset.len() as f64).ceil() as usize).clamp(1, subset.len()) };
        ensure!(sp.len() == rest.len() + expect_kept, "sparsify count");
        ensure!(is_subsequence(&sp, &pts), "sparsify invented points");
        let sp_part = partition_pyramids(&sp, &b).map_err(|e| e.to_string())?;
        for f in 0..6usize {
            ensure!(f == face as usize || sp_part.counts()[f] == part.counts()[f], "sparsify touched face {f}");
        }

        if n > 1 {
            let q = (o + 1) % n;
            let qb = scene.labels[q].bbox;
            let qpts = object_points(scene, q);
            let qpart = partition_pyramids(&qpts, &qb).map_err(|e| e.to_string())?;
            let (a2, b2) = swap_pyramids(&pts, &b, &qpts, &qb, face).map_err(|e| e.to_string())?;
            ensure!(a2.len() + b2.len() == pts.len() + qpts.len(), "swap total count");
            ensure!(a2.len() == pts.len() - subset.len() + qpart.subset(face).len(), "swap count");
            ensure!(a2.iter().all(|p| b.contains(p, 1e-9)), "swapped points outside first box");
            ensure!(b2.iter().all(|p| qb.contains(p, 1e-9)), "swapped points outside second box");
        }
    }
    Ok(())
}

/// Determinism and bit-exact replay for scene `i`, with and without a
/// global transform in front. Returns the number of recorded ops.
pub fn check_replay(scene: &Scene, i: u64) -> Result<usize, String> {
    let cfg = AugConfig { p1: 0.5, p2: 0.3, p3: 0.5, ..Default::default() };
    let err = |e: AugError| e.to_string();
    let (a, rec) = shape_aware_augment(scene, &cfg, &mut rng(i)).map_err(err)?;
    let (b, rec2) = shape_aware_augment(scene, &cfg, &mut rng(i)).map_err(err)?;
    ensure!(rec == rec2 && a.to_text() == b.to_text(), "augmentation is not deterministic");

    let parsed: AugRecord = rec.to_string().parse().map_err(err)?;
    ensure!(parsed == rec, "record text round trip");
    let replay = apply_record(scene, &parsed, cfg.sparsify_keep_ratio).map_err(err)?;
    ensure!(replay.to_text() == a.to_text(), "replay differs");

    // background points survive untouched and in order
    let owners = scene.point_owners(OWNER_EPS);
    let bg: Vec<Point> = scene.points.iter().zip(&owners).filter(|(_, o)| o.is_none()).map(|(p, _)| *p).collect();
    ensure!(is_subsequence(&bg, &a.points), "background changed");

    let mut gr = rng(1000 + i);
    let (moved, t) = global_augment(scene, &AugConfig::default(), &mut gr).map_err(err)?;
    let (c, mut rec3) = shape_aware_augment(&moved, &cfg, &mut gr).map_err(err)?;
    rec3.global = Some(t);
    let parsed: AugRecord = rec3.to_string().parse().map_err(err)?;
    ensure!(apply_record(scene, &parsed, cfg.sparsify_keep_ratio).map_err(err)?.to_text() == c.to_text(), "replay with global transform differs");
    Ok(rec.ops.len())
}
