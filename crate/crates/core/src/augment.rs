//! Shape-aware point-cloud augmentation and global scene transforms.
//!
//! Each object's points are split into six pyramids, one per box face, with
//! apex at the box center. Dropout, swap and sparsify act on one pyramid at a
//! time. Every random draw made by [`shape_aware_augment`] ends up in an
//! [`AugRecord`], and applying that record to the original scene reproduces
//! the augmented scene bit for bit.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Box3D, Point, Transform};
use crate::scene::{ObjectLabel, Scene};

/// RNG used by all augmentation entry points.
pub type AugRng = ChaCha8Rng;

/// Slack, in normalized box units, before a point counts as outside its box.
pub const PARTITION_TOL: f64 = 1e-6;

/// Slack in meters for assigning scene points to label boxes.
pub const OWNER_EPS: f64 = 1e-9;

/// Face order, which is also the tie-break order.
pub const FACE_NAMES: [&str; 6] = ["+x", "-x", "+y", "-y", "+z", "-z"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugError {
    #[error("point {index} lies outside its box (normalized coordinate {coord})")]
    PointOutsideBox { index: usize, coord: f64 },
    #[error("farthest point sampling needs 1 <= k <= n, got k={k}, n={n}")]
    InvalidK { k: usize, n: usize },
    #[error("face index {0} out of range 0..6")]
    InvalidFace(u8),
    #[error("op references object {id}, but the scene has {n} objects")]
    UnknownObject { id: usize, n: usize },
    #[error("op `{0}` is reserved and not supported")]
    UnsupportedOp(String),
    #[error("log line {line}: {msg}")]
    ParseLog { line: usize, msg: String },
    #[error("invalid augmentation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalAugRanges {
    /// Yaw drawn uniformly from `[-rotation, rotation]`.
    pub rotation: f64,
    /// Per-axis translation drawn uniformly from `[-t, t]`.
    pub translation: [f64; 3],
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip_prob: f64,
}

impl Default for GlobalAugRanges {
    fn default() -> Self {
        Self {
            rotation: std::f64::consts::FRAC_PI_4,
            translation: [0.5, 0.5, 0.2],
            scale_min: 0.95,
            scale_max: 1.05,
            flip_prob: 0.5,
        }
    }
}

impl GlobalAugRanges {
    pub fn none() -> Self {
        Self { rotation: 0.0, translation: [0.0; 3], scale_min: 1.0, scale_max: 1.0, flip_prob: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalAugRanges {
    pub rotation: f64,
    pub translation: [f64; 3],
}

impl Default for LocalAugRanges {
    fn default() -> Self {
        Self { rotation: std::f64::consts::PI / 20.0, translation: [0.25, 0.25, 0.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugConfig {
    /// Probability of dropping one pyramid per object.
    pub p1: f64,
    /// Probability of swapping one pyramid with another object.
    pub p2: f64,
    /// Probability of sparsifying one pyramid.
    pub p3: f64,
    pub sparsify_keep_ratio: f64,
    pub global: GlobalAugRanges,
    pub local: LocalAugRanges,
    pub seed: u64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            p1: 0.25,
            p2: 0.05,
            p3: 0.10,
            sparsify_keep_ratio: 0.5,
            global: GlobalAugRanges::default(),
            local: LocalAugRanges::default(),
            seed: 0,
        }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<(), AugError> {
        for (name, p) in [("p1", self.p1), ("p2", self.p2), ("p3", self.p3), ("flip_prob", self.global.flip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AugError::Config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        if !(self.sparsify_keep_ratio > 0.0 && self.sparsify_keep_ratio <= 1.0) {
            return Err(AugError::Config(format!(
                "sparsify_keep_ratio must be in (0,1], got {}",
                self.sparsify_keep_ratio
            )));
        }
        let g = &self.global;
        if !(g.scale_min > 0.0 && g.scale_min <= g.scale_max) {
            return Err(AugError::Config(format!("bad scale range [{}, {}]", g.scale_min, g.scale_max)));
        }
        let widths = [g.rotation, g.translation[0], g.translation[1], g.translation[2], self.local.rotation]
            .into_iter()
            .chain(self.local.translation);
        if widths.into_iter().any(|w| !(w >= 0.0) || !w.is_finite()) {
            return Err(AugError::Config("range half-widths must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Face index per object point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidPartition {
    pub faces: Vec<u8>,
}

impl PyramidPartition {
    pub fn subset(&self, face: u8) -> Vec<usize> {
        (0..self.faces.len()).filter(|&i| self.faces[i] == face).collect()
    }

    pub fn counts(&self) -> [usize; 6] {
        let mut c = [0; 6];
        for &f in &self.faces {
            c[f as usize] += 1;
        }
        c
    }
}

fn check_face(face: u8) -> Result<(), AugError> {
    if face < 6 {
        Ok(())
    } else {
        Err(AugError::InvalidFace(face))
    }
}

/// Assigns each point to the pyramid of the face it is closest to in
/// normalized box coordinates. Ties resolve in [`FACE_NAMES`] order.
pub fn partition_pyramids(points: &[Point], bbox: &Box3D) -> Result<PyramidPartition, AugError> {
    let faces = points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let u = bbox.to_normalized(p);
            let mut axis = 0;
            let mut best = u[0].abs();
            for k in 1..3 {
                if u[k].abs() > best {
                    best = u[k].abs();
                    axis = k;
                }
            }
            if best > 1.0 + PARTITION_TOL {
                return Err(AugError::PointOutsideBox { index, coord: best });
            }
            Ok((2 * axis + usize::from(u[axis] < 0.0)) as u8)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PyramidPartition { faces })
}

/// Removes every point of one pyramid, preserving the order of the rest.
pub fn dropout_pyramid(points: &[Point], partition: &PyramidPartition, face: u8) -> Vec<Point> {
    points
        .iter()
        .zip(&partition.faces)
        .filter(|(_, &f)| f != face)
        .map(|(p, _)| *p)
        .collect()
}

/// Exchanges the points of pyramid `face` between two objects.
///
/// Incoming points are carried through normalized box coordinates, so they
/// keep their relative position on the receiving box.
pub fn swap_pyramids(
    a_points: &[Point],
    a_box: &Box3D,
    b_points: &[Point],
    b_box: &Box3D,
    face: u8,
) -> Result<(Vec<Point>, Vec<Point>), AugError> {
    check_face(face)?;
    let pa = partition_pyramids(a_points, a_box)?;
    let pb = partition_pyramids(b_points, b_box)?;
    let take = |pts: &[Point], part: &PyramidPartition| -> (Vec<Point>, Vec<Point>) {
        let mut rest = Vec::with_capacity(pts.len());
        let mut sub = Vec::new();
        for (p, &f) in pts.iter().zip(&part.faces) {
            if f == face {
                sub.push(*p);
            } else {
                rest.push(*p);
            }
        }
        (rest, sub)
    };
    let (mut a_out, a_sub) = take(a_points, &pa);
    let (mut b_out, b_sub) = take(b_points, &pb);
    a_out.extend(b_sub.iter().map(|p| remap(p, b_box, a_box)));
    b_out.extend(a_sub.iter().map(|p| remap(p, a_box, b_box)));
    Ok((a_out, b_out))
}

fn remap(p: &Point, from: &Box3D, to: &Box3D) -> Point {
    if from == to {
        return *p;
    }
    let [x, y, z] = to.from_normalized(from.to_normalized(p));
    Point { x, y, z, intensity: p.intensity }
}

/// Replaces one pyramid by `ceil(keep_ratio * n)` farthest-point samples.
pub fn sparsify_pyramid<R: Rng + ?Sized>(
    points: &[Point],
    partition: &PyramidPartition,
    face: u8,
    keep_ratio: f64,
    rng: &mut R,
) -> Vec<Point> {
    let subset = partition.subset(face);
    let n = subset.len();
    if n == 0 {
        return points.to_vec();
    }
    let k = ((keep_ratio * n as f64).ceil() as usize).clamp(1, n);
    let start = rng.random_range(0..n);
    let sub_pts: Vec<Point> = subset.iter().map(|&i| points[i]).collect();
    let chosen = farthest_point_sampling(&sub_pts, k, start).expect("k within 1..=n");
    let mut keep = vec![true; points.len()];
    for &i in &subset {
        keep[i] = false;
    }
    for c in chosen {
        keep[subset[c]] = true;
    }
    points.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect()
}

/// Greedy farthest point sampling from `seed_index`. Returns indices in
/// selection order; distance ties pick the lowest index.
pub fn farthest_point_sampling(points: &[Point], k: usize, seed_index: usize) -> Result<Vec<usize>, AugError> {
    let n = points.len();
    if k == 0 || k > n || seed_index >= n {
        return Err(AugError::InvalidK { k, n });
    }
    let mut chosen = Vec::with_capacity(k);
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut cur = seed_index;
    loop {
        chosen.push(cur);
        taken[cur] = true;
        if chosen.len() == k {
            break;
        }
        let mut next = usize::MAX;
        let mut best = -1.0;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = points[i].dist2(&points[cur]);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best {
                best = min_d[i];
                next = i;
            }
        }
        cur = next;
    }
    Ok(chosen)
}

/// One shape-aware operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugOp {
    Dropout { face: u8 },
    Swap { partner: usize, face: u8 },
    Sparsify { face: u8 },
    /// Ground-truth database mix-up. Reserved in the log format; not applied.
    MixUp,
}

impl AugOp {
    pub fn name(&self) -> &'static str {
        match self {
            AugOp::Dropout { .. } => "dropout",
            AugOp::Swap { .. } => "swap",
            AugOp::Sparsify { .. } => "sparsify",
            AugOp::MixUp => "mixup",
        }
    }

    fn face(&self) -> Option<u8> {
        match *self {
            AugOp::Dropout { face } | AugOp::Swap { face, .. } | AugOp::Sparsify { face } => Some(face),
            AugOp::MixUp => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpEntry {
    pub object: usize,
    pub op: AugOp,
    /// Seed for any randomness inside the op.
    pub seed: u64,
}

impl fmt::Display for OpEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let face = self.op.face().map_or_else(|| "-".to_string(), |v| v.to_string());
        let partner = match self.op {
            AugOp::Swap { partner, .. } => partner.to_string(),
            _ => "-".to_string(),
        };
        write!(f, "obj={} op={} face={} partner={} seed={}", self.object, self.op.name(), face, partner, self.seed)
    }
}

/// Everything needed to replay an augmentation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugRecord {
    pub global: Option<Transform>,
    pub ops: Vec<OpEntry>,
}

impl fmt::Display for AugRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(t) = &self.global {
            writeln!(
                f,
                "global rotation={} translation={},{},{} flip_y={} scale={}",
                t.rotation, t.translation[0], t.translation[1], t.translation[2], t.flip_y, t.scale
            )?;
        }
        for op in &self.ops {
            writeln!(f, "{op}")?;
        }
        Ok(())
    }
}

impl FromStr for AugRecord {
    type Err = AugError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut rec = AugRecord::default();
        for (i, raw) in s.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| AugError::ParseLog { line: i + 1, msg };
            let mut kv = std::collections::HashMap::new();
            let mut tokens = line.split_whitespace().peekable();
            let is_global = tokens.peek() == Some(&"global");
            if is_global {
                tokens.next();
            }
            for tok in tokens {
                let (k, v) = tok.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{tok}`")))?;
                kv.insert(k, v);
            }
            let get = |k: &str| kv.get(k).copied().ok_or_else(|| err(format!("missing `{k}`")));
            let num = |k: &str| -> Result<f64, AugError> {
                get(k)?.parse::<f64>().map_err(|_| err(format!("bad number for `{k}`")))
            };
            if is_global {
                let tr: Vec<f64> = get("translation")?
                    .split(',')
                    .map(|v| v.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err("bad translation".into()))?;
                if tr.len() != 3 {
                    return Err(err("translation needs 3 components".into()));
                }
                let flip = get("flip_y")?.parse::<bool>().map_err(|_| err("bad flip_y".into()))?;
                let t = Transform::new(num("rotation")?, [tr[0], tr[1], tr[2]], flip, num("scale")?)
                    .map_err(|e| err(e.to_string()))?;
                rec.global = Some(t);
                continue;
            }
            let object = get("obj")?.parse::<usize>().map_err(|_| err("bad obj".into()))?;
            let seed = get("seed")?.parse::<u64>().map_err(|_| err("bad seed".into()))?;
            let face = || -> Result<u8, AugError> {
                let f = get("face")?.parse::<u8>().map_err(|_| err("bad face".into()))?;
                check_face(f).map_err(|e| err(e.to_string()))?;
                Ok(f)
            };
            let op = match get("op")? {
                "dropout" => AugOp::Dropout { face: face()? },
                "sparsify" => AugOp::Sparsify { face: face()? },
                "swap" => AugOp::Swap {
                    face: face()?,
                    partner: get("partner")?.parse::<usize>().map_err(|_| err("bad partner".into()))?,
                },
                "mixup" => AugOp::MixUp,
                other => return Err(err(format!("unknown op `{other}`"))),
            };
            rec.ops.push(OpEntry { object, op, seed });
        }
        Ok(rec)
    }
}

/// Draws the shape-aware ops for `n_objects` objects without touching points.
///
/// Per object the dropout, swap and sparsify draws are independent and are
/// applied in that order.
pub fn draw_shape_aware_ops<R: Rng + ?Sized>(n_objects: usize, cfg: &AugConfig, rng: &mut R) -> Vec<OpEntry> {
    let mut ops = Vec::new();
    for object in 0..n_objects {
        if rng.random_bool(cfg.p1) {
            let face = rng.random_range(0..6u8);
            ops.push(OpEntry { object, op: AugOp::Dropout { face }, seed: rng.next_u64() });
        }
        if rng.random_bool(cfg.p2) && n_objects > 1 {
            let k = rng.random_range(0..n_objects - 1);
            let partner = if k >= object { k + 1 } else { k };
            let face = rng.random_range(0..6u8);
            ops.push(OpEntry { object, op: AugOp::Swap { partner, face }, seed: rng.next_u64() });
        }
        if rng.random_bool(cfg.p3) {
            let face = rng.random_range(0..6u8);
            ops.push(OpEntry { object, op: AugOp::Sparsify { face }, seed: rng.next_u64() });
        }
    }
    ops
}

/// Applies the ops of a record to a scene. The global transform, when present,
/// is applied first. `keep_ratio` is the sparsify keep fraction.
pub fn apply_record(scene: &Scene, record: &AugRecord, keep_ratio: f64) -> Result<Scene, AugError> {
    let base = match &record.global {
        Some(t) => scene.transformed(t),
        None => scene.clone(),
    };
    apply_ops(&base, &record.ops, keep_ratio)
}

fn apply_ops(scene: &Scene, ops: &[OpEntry], keep_ratio: f64) -> Result<Scene, AugError> {
    if ops.is_empty() {
        return Ok(scene.clone());
    }
    let n = scene.labels.len();
    let owners = scene.point_owners(OWNER_EPS);
    let mut objects: Vec<Vec<Point>> = vec![Vec::new(); n];
    for (p, o) in scene.points.iter().zip(&owners) {
        if let Some(o) = o {
            objects[*o].push(*p);
        }
    }
    let boxes: Vec<Box3D> = scene.labels.iter().map(|l| l.bbox).collect();
    let mut touched = vec![false; n];
    for entry in ops {
        let o = entry.object;
        if o >= n {
            return Err(AugError::UnknownObject { id: o, n });
        }
        match entry.op {
            AugOp::Dropout { face } => {
                check_face(face)?;
                let part = partition_pyramids(&objects[o], &boxes[o])?;
                objects[o] = dropout_pyramid(&objects[o], &part, face);
            }
            AugOp::Swap { partner, face } => {
                if partner >= n {
                    return Err(AugError::UnknownObject { id: partner, n });
                }
                let (a, b) = swap_pyramids(&objects[o], &boxes[o], &objects[partner], &boxes[partner], face)?;
                if partner == o {
                    objects[o] = a;
                } else {
                    objects[o] = a;
                    objects[partner] = b;
                }
                touched[partner] = true;
            }
            AugOp::Sparsify { face } => {
                check_face(face)?;
                let part = partition_pyramids(&objects[o], &boxes[o])?;
                let mut rng = AugRng::seed_from_u64(entry.seed);
                objects[o] = sparsify_pyramid(&objects[o], &part, face, keep_ratio, &mut rng);
            }
            AugOp::MixUp => return Err(AugError::UnsupportedOp("mixup".into())),
        }
        touched[o] = true;
    }
    let mut points: Vec<Point> = scene
        .points
        .iter()
        .zip(&owners)
        .filter(|(_, o)| o.is_none_or(|o| !touched[o]))
        .map(|(p, _)| *p)
        .collect();
    for (o, pts) in objects.into_iter().enumerate() {
        if touched[o] {
            points.extend(pts);
        }
    }
    Ok(Scene { points, labels: scene.labels.clone() })
}

/// Per-object dropout, swap and sparsify. Background points are untouched.
pub fn shape_aware_augment<R: Rng + ?Sized>(
    scene: &Scene,
    cfg: &AugConfig,
    rng: &mut R,
) -> Result<(Scene, AugRecord), AugError> {
    cfg.validate()?;
    let ops = draw_shape_aware_ops(scene.labels.len(), cfg, rng);
    let record = AugRecord { global: None, ops };
    let out = apply_ops(scene, &record.ops, cfg.sparsify_keep_ratio)?;
    Ok((out, record))
}

fn uniform_sym<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

/// Draws a scene-level transform from the configured ranges.
pub fn draw_global_transform<R: Rng + ?Sized>(g: &GlobalAugRanges, rng: &mut R) -> Transform {
    let rotation = uniform_sym(rng, g.rotation);
    let translation = [
        uniform_sym(rng, g.translation[0]),
        uniform_sym(rng, g.translation[1]),
        uniform_sym(rng, g.translation[2]),
    ];
    let flip_y = rng.random_bool(g.flip_prob);
    let scale = if g.scale_max > g.scale_min { rng.random_range(g.scale_min..=g.scale_max) } else { g.scale_min };
    Transform { rotation, translation, flip_y, scale }
}

/// One transform applied to all points and label boxes. The transform is
/// returned so teacher predictions can be mapped the same way.
pub fn global_augment<R: Rng + ?Sized>(
    scene: &Scene,
    cfg: &AugConfig,
    rng: &mut R,
) -> Result<(Scene, Transform), AugError> {
    cfg.validate()?;
    let t = draw_global_transform(&cfg.global, rng);
    Ok((scene.transformed(&t), t))
}

/// Rigid motion applied to one object by [`local_augment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalMove {
    pub object: usize,
    pub rotation: f64,
    pub translation: [f64; 3],
    /// False when the move was rejected because it collided with another box.
    pub applied: bool,
}

/// Rotates and translates each object (box and its points) about its own
/// center. Moves that would make the box overlap another box are skipped.
pub fn local_augment<R: Rng + ?Sized>(
    scene: &Scene,
    cfg: &AugConfig,
    rng: &mut R,
) -> Result<(Scene, Vec<LocalMove>), AugError> {
    cfg.validate()?;
    let owners = scene.point_owners(OWNER_EPS);
    let mut labels: Vec<ObjectLabel> = scene.labels.clone();
    let mut points = scene.points.clone();
    let mut moves = Vec::with_capacity(labels.len());
    for o in 0..labels.len() {
        let rotation = uniform_sym(rng, cfg.local.rotation);
        let translation = [
            uniform_sym(rng, cfg.local.translation[0]),
            uniform_sym(rng, cfg.local.translation[1]),
            uniform_sym(rng, cfg.local.translation[2]),
        ];
        let old = labels[o].bbox;
        let (s, c) = rotation.sin_cos();
        let mv = |p: [f64; 3]| -> [f64; 3] {
            let dx = p[0] - old.cx;
            let dy = p[1] - old.cy;
            [
                old.cx + c * dx - s * dy + translation[0],
                old.cy + s * dx + c * dy + translation[1],
                p[2] + translation[2],
            ]
        };
        let [cx, cy, cz] = mv([old.cx, old.cy, old.cz]);
        let new_box = Box3D { cx, cy, cz, r: crate::geom::normalize_angle(old.r + rotation), ..old };
        let collides = labels
            .iter()
            .enumerate()
            .any(|(j, l)| j != o && crate::geom::iou_bev(&new_box, &l.bbox) > 0.0);
        if !collides {
            labels[o].bbox = new_box;
            for (p, owner) in points.iter_mut().zip(&owners) {
                if *owner == Some(o) {
                    let [x, y, z] = mv(p.xyz());
                    *p = Point { x, y, z, intensity: p.intensity };
                }
            }
        }
        moves.push(LocalMove { object: o, rotation, translation, applied: !collides });
    }
    Ok((Scene { points, labels }, moves))
}
