//! Oriented boxes, convex polygon clipping and rotated IoU.
//!
//! Boxes live in a right-handed LiDAR-style frame: `x` forward, `y` left,
//! `z` up. Yaw `r` is measured counterclockwise from `+x` in the ground
//! plane, and `l` is the box extent along the heading axis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cross products below this magnitude count as collinear during clipping.
pub const COLLINEAR_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("box sizes must be positive and finite, got w={w} l={l} h={h}")]
    NonPositiveSize { w: f64, l: f64, h: f64 },
    #[error("box parameter is not finite")]
    NonFinite,
    #[error("transform scale must be positive, got {0}")]
    NonPositiveScale(f64),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(r: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = r - two_pi * ((r + PI) / two_pi).floor();
    if a <= -PI {
        a += two_pi;
    }
    if a > PI {
        a -= two_pi;
    }
    a
}

/// A point with a reflectance channel, as delivered by a LiDAR scan.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }
}

/// Oriented 3D box with yaw-only rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    /// Extent across the heading axis.
    pub w: f64,
    /// Extent along the heading axis.
    pub l: f64,
    pub h: f64,
    /// Yaw in `(-pi, pi]`.
    pub r: f64,
}

impl Box3D {
    /// Builds a box, normalizing the yaw. Sizes must be positive.
    pub fn new(cx: f64, cy: f64, cz: f64, w: f64, l: f64, h: f64, r: f64) -> Result<Self, GeomError> {
        let all = [cx, cy, cz, w, l, h, r];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite);
        }
        if w <= 0.0 || l <= 0.0 || h <= 0.0 {
            return Err(GeomError::NonPositiveSize { w, l, h });
        }
        Ok(Self { cx, cy, cz, w, l, h, r: normalize_angle(r) })
    }

    /// Parameters in the order `(cx, cy, cz, w, l, h, r)`.
    pub fn from_array(p: [f64; 7]) -> Result<Self, GeomError> {
        Self::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6])
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.cx, self.cy, self.cz, self.w, self.l, self.h, self.r]
    }

    pub fn volume(&self) -> f64 {
        self.w * self.l * self.h
    }

    pub fn bev_area(&self) -> f64 {
        self.w * self.l
    }

    pub fn z_min(&self) -> f64 {
        self.cz - 0.5 * self.h
    }

    pub fn z_max(&self) -> f64 {
        self.cz + 0.5 * self.h
    }

    /// Point expressed in the box frame: `(along heading, across heading, up)`
    /// relative to the center.
    pub fn to_local(&self, p: &Point) -> [f64; 3] {
        let (s, c) = self.r.sin_cos();
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        [c * dx + s * dy, -s * dx + c * dy, p.z - self.cz]
    }

    /// Inverse of [`Box3D::to_local`].
    pub fn from_local(&self, local: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.r.sin_cos();
        [
            self.cx + c * local[0] - s * local[1],
            self.cy + s * local[0] + c * local[1],
            self.cz + local[2],
        ]
    }

    /// Local coordinates scaled so that the box surface maps to the unit cube
    /// `[-1, 1]^3`.
    pub fn to_normalized(&self, p: &Point) -> [f64; 3] {
        let [a, b, z] = self.to_local(p);
        [2.0 * a / self.l, 2.0 * b / self.w, 2.0 * z / self.h]
    }

    pub fn from_normalized(&self, u: [f64; 3]) -> [f64; 3] {
        self.from_local([0.5 * u[0] * self.l, 0.5 * u[1] * self.w, 0.5 * u[2] * self.h])
    }

    /// Membership test with an absolute slack `eps` in meters.
    pub fn contains(&self, p: &Point, eps: f64) -> bool {
        let [a, b, z] = self.to_local(p);
        a.abs() <= 0.5 * self.l + eps && b.abs() <= 0.5 * self.w + eps && z.abs() <= 0.5 * self.h + eps
    }

    /// The eight corners, bottom face first.
    pub fn corners_3d(&self) -> [[f64; 3]; 8] {
        let bev = self.corners_bev();
        let mut out = [[0.0; 3]; 8];
        for (i, v) in bev.iter().enumerate() {
            out[i] = [v[0], v[1], self.z_min()];
            out[i + 4] = [v[0], v[1], self.z_max()];
        }
        out
    }

    /// BEV corners in counterclockwise order.
    pub fn corners_bev(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.r.sin_cos();
        let hl = 0.5 * self.l;
        let hw = 0.5 * self.w;
        [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)]
            .map(|(a, b)| [self.cx + c * a - s * b, self.cy + s * a + c * b])
    }
}

/// Convex polygon in the ground plane with counterclockwise vertices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolygonBEV {
    pub vertices: Vec<[f64; 2]>,
}

impl PolygonBEV {
    pub fn new(vertices: Vec<[f64; 2]>) -> Self {
        Self { vertices }
    }

    /// Shoelace area, positive for counterclockwise order.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            acc += a[0] * b[1] - a[1] * b[0];
        }
        0.5 * acc
    }

    pub fn area(&self) -> f64 {
        self.signed_area().max(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }
}

pub fn box_corners_bev(b: &Box3D) -> PolygonBEV {
    PolygonBEV::new(b.corners_bev().to_vec())
}

#[inline]
fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland-Hodgman clipping of convex `a` against convex `b`.
///
/// Returns `None` when the overlap has zero area, including shared edges and
/// single touching points.
pub fn convex_intersection(a: &PolygonBEV, b: &PolygonBEV) -> Option<PolygonBEV> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let mut output = a.vertices.clone();
    let m = b.vertices.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let e0 = b.vertices[i];
        let e1 = b.vertices[(i + 1) % m];
        let input = std::mem::take(&mut output);
        let n = input.len();
        for j in 0..n {
            let cur = input[j];
            let prev = input[(j + n - 1) % n];
            let c_cur = cross(e0, e1, cur);
            let c_prev = cross(e0, e1, prev);
            let cur_in = c_cur >= -COLLINEAR_EPS;
            let prev_in = c_prev >= -COLLINEAR_EPS;
            if cur_in {
                if !prev_in {
                    output.push(segment_line_hit(prev, cur, c_prev, c_cur));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_hit(prev, cur, c_prev, c_cur));
            }
        }
    }
    dedup_ring(&mut output);
    let poly = PolygonBEV::new(output);
    if poly.vertices.len() < 3 || poly.signed_area() <= COLLINEAR_EPS {
        None
    } else {
        Some(poly)
    }
}

fn segment_line_hit(p: [f64; 2], q: [f64; 2], cp: f64, cq: f64) -> [f64; 2] {
    let denom = cp - cq;
    if denom.abs() < f64::MIN_POSITIVE {
        return q;
    }
    let t = cp / denom;
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn dedup_ring(v: &mut Vec<[f64; 2]>) {
    const TOL: f64 = 1e-12;
    v.dedup_by(|a, b| (a[0] - b[0]).abs() < TOL && (a[1] - b[1]).abs() < TOL);
    while v.len() > 1 {
        let (f, l) = (v[0], v[v.len() - 1]);
        if (f[0] - l[0]).abs() < TOL && (f[1] - l[1]).abs() < TOL {
            v.pop();
        } else {
            break;
        }
    }
}

/// Area of the BEV overlap of two boxes.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    // cheap circumscribed-circle rejection
    let ra = 0.5 * a.w.hypot(a.l);
    let rb = 0.5 * b.w.hypot(b.l);
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    if dx * dx + dy * dy >= (ra + rb) * (ra + rb) {
        return 0.0;
    }
    convex_intersection(&box_corners_bev(a), &box_corners_bev(b))
        .map(|p| p.area().min(a.bev_area()).min(b.bev_area()))
        .unwrap_or(0.0)
}

pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = bev_intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Vertical overlap of the two boxes' z-extents.
pub fn z_overlap(a: &Box3D, b: &Box3D) -> f64 {
    (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(0.0)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let dz = z_overlap(a, b);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Which overlap measure to use where either is acceptable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    #[default]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            IouKind::Bev => iou_bev(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }
}

/// Axis-aligned bounds `(min, max)` of all corners of both boxes.
pub fn enclosing_bounds(a: &Box3D, b: &Box3D) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in a.corners_3d().iter().chain(b.corners_3d().iter()) {
        for k in 0..3 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    (lo, hi)
}

/// Diagonal of the axis-aligned cuboid enclosing both boxes.
pub fn enclosing_diagonal(a: &Box3D, b: &Box3D) -> f64 {
    let (lo, hi) = enclosing_bounds(a, b);
    (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
}

pub fn center_distance(a: &Box3D, b: &Box3D) -> f64 {
    ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2) + (a.cz - b.cz).powi(2)).sqrt()
}

/// Rigid-plus-scale scene transform applied as scale, flip, rotate, translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub rotation: f64,
    pub translation: [f64; 3],
    /// Mirror across the x-z plane (`y -> -y`).
    pub flip_y: bool,
    pub scale: f64,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub const fn identity() -> Self {
        Self { rotation: 0.0, translation: [0.0; 3], flip_y: false, scale: 1.0 }
    }

    pub fn new(rotation: f64, translation: [f64; 3], flip_y: bool, scale: f64) -> Result<Self, GeomError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GeomError::NonPositiveScale(scale));
        }
        if !rotation.is_finite() || translation.iter().any(|t| !t.is_finite()) {
            return Err(GeomError::NonFinite);
        }
        Ok(Self { rotation, translation, flip_y, scale })
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn apply_xyz(&self, p: [f64; 3]) -> [f64; 3] {
        let mut x = p[0] * self.scale;
        let mut y = p[1] * self.scale;
        let z = p[2] * self.scale;
        if self.flip_y {
            y = -y;
        }
        let (s, c) = self.rotation.sin_cos();
        let rx = c * x - s * y;
        let ry = s * x + c * y;
        x = rx + self.translation[0];
        y = ry + self.translation[1];
        [x, y, z + self.translation[2]]
    }

    pub fn apply_inverse_xyz(&self, p: [f64; 3]) -> [f64; 3] {
        let x = p[0] - self.translation[0];
        let y = p[1] - self.translation[1];
        let z = p[2] - self.translation[2];
        let (s, c) = self.rotation.sin_cos();
        let ux = c * x + s * y;
        let mut uy = -s * x + c * y;
        if self.flip_y {
            uy = -uy;
        }
        [ux / self.scale, uy / self.scale, z / self.scale]
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        let [x, y, z] = self.apply_xyz(p.xyz());
        Point { x, y, z, intensity: p.intensity }
    }

    pub fn apply_inverse_point(&self, p: &Point) -> Point {
        let [x, y, z] = self.apply_inverse_xyz(p.xyz());
        Point { x, y, z, intensity: p.intensity }
    }

    pub fn apply_box(&self, b: &Box3D) -> Box3D {
        let [cx, cy, cz] = self.apply_xyz([b.cx, b.cy, b.cz]);
        let r = if self.flip_y { -b.r } else { b.r };
        Box3D {
            cx,
            cy,
            cz,
            w: b.w * self.scale,
            l: b.l * self.scale,
            h: b.h * self.scale,
            r: normalize_angle(r + self.rotation),
        }
    }

    pub fn apply_inverse_box(&self, b: &Box3D) -> Box3D {
        let [cx, cy, cz] = self.apply_inverse_xyz([b.cx, b.cy, b.cz]);
        let mut r = b.r - self.rotation;
        if self.flip_y {
            r = -r;
        }
        Box3D {
            cx,
            cy,
            cz,
            w: b.w / self.scale,
            l: b.l / self.scale,
            h: b.h / self.scale,
            r: normalize_angle(r),
        }
    }
}

pub fn apply_transform(t: &Transform, b: &Box3D) -> Box3D {
    t.apply_box(b)
}

pub fn apply_transform_points(t: &Transform, points: &[Point]) -> Vec<Point> {
    points.iter().map(|p| t.apply_point(p)).collect()
}
