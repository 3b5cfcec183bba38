//! KITTI file formats: velodyne scans, `label_2` text files and calibration.
//!
//! Label boxes are stored in the rectified camera frame (bottom-center
//! location, `rotation_y` clockwise about camera `y`). They are converted to
//! the LiDAR frame through `R0_rect` and `Tr_velo_to_cam` on load.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geom::{Box3D, Point};
use crate::scene::{ObjectLabel, Scene};

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("{path}: velodyne file size {len} is not a multiple of 16 bytes")]
    MalformedBin { path: String, len: usize },
    #[error("{path}:{line}: {msg}")]
    MalformedLabel { path: String, line: usize, msg: String },
    #[error("{path}: missing calibration key `{key}`")]
    MissingCalibKey { path: String, key: String },
    #[error("{path}: {msg}")]
    MalformedCalib { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KittiError + '_ {
    move |source| KittiError::Io { path: path.display().to_string(), source }
}

type Mat3 = [[f64; 3]; 3];

fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_inv(m: &Mat3) -> Option<Mat3> {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    if det.abs() < 1e-12 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = cof[j][i] / det;
        }
    }
    Some(inv)
}

/// Camera/LiDAR calibration of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Calib {
    pub r0_rect: Mat3,
    /// Rotation part of `Tr_velo_to_cam`.
    pub velo_to_cam_rot: Mat3,
    pub velo_to_cam_trans: [f64; 3],
    /// Any other keys, kept verbatim for rewriting.
    pub extra: Vec<(String, Vec<f64>)>,
}

impl Default for Calib {
    /// Pure axis permutation: camera `x` right, `y` down, `z` forward.
    fn default() -> Self {
        Self {
            r0_rect: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            velo_to_cam_rot: [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]],
            velo_to_cam_trans: [0.0; 3],
            extra: Vec::new(),
        }
    }
}

impl Calib {
    pub fn parse(text: &str, origin: &str) -> Result<Self, KittiError> {
        let mut r0 = None;
        let mut tr = None;
        let mut extra = Vec::new();
        for line in text.lines() {
            let Some((key, rest)) = line.split_once(':') else { continue };
            let vals: Vec<f64> = rest
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| KittiError::MalformedCalib { path: origin.into(), msg: format!("bad number in `{key}`") })?;
            match key.trim() {
                "R0_rect" | "R_rect" => r0 = Some(vals),
                "Tr_velo_to_cam" | "Tr_velo_cam" => tr = Some(vals),
                other => extra.push((other.to_string(), vals)),
            }
        }
        let r0 = r0.ok_or_else(|| KittiError::MissingCalibKey { path: origin.into(), key: "R0_rect".into() })?;
        let tr = tr.ok_or_else(|| KittiError::MissingCalibKey { path: origin.into(), key: "Tr_velo_to_cam".into() })?;
        if r0.len() != 9 || tr.len() != 12 {
            return Err(KittiError::MalformedCalib {
                path: origin.into(),
                msg: format!("R0_rect needs 9 values and Tr_velo_to_cam 12, got {} and {}", r0.len(), tr.len()),
            });
        }
        let calib = Calib {
            r0_rect: [[r0[0], r0[1], r0[2]], [r0[3], r0[4], r0[5]], [r0[6], r0[7], r0[8]]],
            velo_to_cam_rot: [[tr[0], tr[1], tr[2]], [tr[4], tr[5], tr[6]], [tr[8], tr[9], tr[10]]],
            velo_to_cam_trans: [tr[3], tr[7], tr[11]],
            extra,
        };
        if mat_inv(&calib.r0_rect).is_none() || mat_inv(&calib.velo_to_cam_rot).is_none() {
            return Err(KittiError::MalformedCalib { path: origin.into(), msg: "singular rotation".into() });
        }
        Ok(calib)
    }

    pub fn read(path: &Path) -> Result<Self, KittiError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.extra {
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{k}: {}", vals.join(" "));
        }
        let r = &self.r0_rect;
        let _ = writeln!(
            s,
            "R0_rect: {} {} {} {} {} {} {} {} {}",
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]
        );
        let m = &self.velo_to_cam_rot;
        let t = &self.velo_to_cam_trans;
        let _ = writeln!(
            s,
            "Tr_velo_to_cam: {} {} {} {} {} {} {} {} {} {} {} {}",
            m[0][0], m[0][1], m[0][2], t[0], m[1][0], m[1][1], m[1][2], t[1], m[2][0], m[2][1], m[2][2], t[2]
        );
        s
    }

    /// Linear part of the LiDAR to rectified-camera map.
    fn velo_to_rect_rot(&self) -> Mat3 {
        mat_mul(&self.r0_rect, &self.velo_to_cam_rot)
    }

    pub fn velo_to_rect(&self, p: [f64; 3]) -> [f64; 3] {
        let c = mat_vec(&self.velo_to_cam_rot, p);
        mat_vec(&self.r0_rect, [c[0] + self.velo_to_cam_trans[0], c[1] + self.velo_to_cam_trans[1], c[2] + self.velo_to_cam_trans[2]])
    }

    pub fn rect_to_velo(&self, p: [f64; 3]) -> [f64; 3] {
        let r0_inv = mat_inv(&self.r0_rect).expect("validated on parse");
        let rot_inv = mat_inv(&self.velo_to_cam_rot).expect("validated on parse");
        let c = mat_vec(&r0_inv, p);
        let t = &self.velo_to_cam_trans;
        mat_vec(&rot_inv, [c[0] - t[0], c[1] - t[1], c[2] - t[2]])
    }

    fn rect_dir_to_velo(&self, d: [f64; 3]) -> [f64; 3] {
        let inv = mat_inv(&self.velo_to_rect_rot()).expect("validated on parse");
        mat_vec(&inv, d)
    }

    /// Camera-frame KITTI box to a LiDAR-frame box.
    pub fn box_from_camera(&self, dims_hwl: [f64; 3], location: [f64; 3], rotation_y: f64) -> Result<Box3D, String> {
        let [h, w, l] = dims_hwl;
        // camera y points down; the box center sits h/2 above the bottom face
        let center_rect = [location[0], location[1] - 0.5 * h, location[2]];
        let c = self.rect_to_velo(center_rect);
        let heading = self.rect_dir_to_velo([rotation_y.cos(), 0.0, -rotation_y.sin()]);
        let yaw = heading[1].atan2(heading[0]);
        Box3D::new(c[0], c[1], c[2], w, l, h, yaw).map_err(|e| e.to_string())
    }

    /// Inverse of [`Calib::box_from_camera`]: `(dims hwl, location, rotation_y)`.
    pub fn box_to_camera(&self, b: &Box3D) -> ([f64; 3], [f64; 3], f64) {
        let c = self.velo_to_rect([b.cx, b.cy, b.cz]);
        let location = [c[0], c[1] + 0.5 * b.h, c[2]];
        let d = mat_vec(&self.velo_to_rect_rot(), [b.r.cos(), b.r.sin(), 0.0]);
        let rotation_y = (-d[2]).atan2(d[0]);
        ([b.h, b.w, b.l], location, rotation_y)
    }
}

/// One parsed KITTI label line.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiObject {
    pub label: ObjectLabel,
    /// Field 16, present on prediction files.
    pub score: Option<f64>,
}

pub fn read_velodyne_bin(path: &Path) -> Result<Vec<Point>, KittiError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.len() % 16 != 0 {
        return Err(KittiError::MalformedBin { path: path.display().to_string(), len: bytes.len() });
    }
    let f = |b: &[u8]| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
    Ok(bytes
        .chunks_exact(16)
        .map(|c| Point::new(f(&c[0..4]), f(&c[4..8]), f(&c[8..12]), f(&c[12..16])))
        .collect())
}

pub fn write_velodyne_bin(path: &Path, points: &[Point]) -> Result<(), KittiError> {
    let mut bytes = Vec::with_capacity(points.len() * 16);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn parse_kitti_labels(text: &str, origin: &str, calib: &Calib) -> Result<Vec<KittiObject>, KittiError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| KittiError::MalformedLabel { path: origin.into(), line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 15 && fields.len() != 16 {
            return Err(err(format!("expected 15 or 16 fields, got {}", fields.len())));
        }
        let v: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| err(format!("bad number `{f}`"))))
            .collect::<Result<_, _>>()?;
        let class = fields[0].to_string();
        if class == "DontCare" {
            continue;
        }
        let truncation = v[0].clamp(0.0, 1.0);
        let occ = v[1];
        if occ.fract() != 0.0 || !(0.0..=3.0).contains(&occ) {
            return Err(err(format!("occlusion must be 0..3, got {occ}")));
        }
        let bbox_height = v[6] - v[4];
        let bbox = calib.box_from_camera([v[7], v[8], v[9]], [v[10], v[11], v[12]], v[13]).map_err(err)?;
        out.push(KittiObject {
            label: ObjectLabel { class, bbox, truncation, occlusion: occ as u8, bbox_height },
            score: v.get(14).copied(),
        });
    }
    Ok(out)
}

pub fn read_kitti_labels(path: &Path, calib: &Calib) -> Result<Vec<KittiObject>, KittiError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_kitti_labels(&text, &path.display().to_string(), calib)
}

/// Writes labels in KITTI format; with `scores`, appends field 16.
pub fn write_kitti_labels(
    path: &Path,
    labels: &[ObjectLabel],
    scores: Option<&[f64]>,
    calib: &Calib,
) -> Result<(), KittiError> {
    let mut s = String::new();
    for (i, l) in labels.iter().enumerate() {
        let ([h, w, len], loc, ry) = calib.box_to_camera(&l.bbox);
        let alpha = ry - loc[0].atan2(loc[2]);
        let _ = write!(
            s,
            "{} {} {} {} 0 0 0 {} {} {} {} {} {} {} {}",
            l.class, l.truncation, l.occlusion, alpha, l.bbox_height, h, w, len, loc[0], loc[1], loc[2], ry
        );
        if let Some(sc) = scores {
            let _ = write!(s, " {}", sc[i]);
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(io_err(path))
}

pub fn load_kitti_scene(bin: &Path, label: &Path, calib: &Path) -> Result<Scene, KittiError> {
    let calib = Calib::read(calib)?;
    let points = read_velodyne_bin(bin)?;
    let labels = read_kitti_labels(label, &calib)?.into_iter().map(|o| o.label).collect();
    Ok(Scene { points, labels })
}

pub fn write_kitti_scene(scene: &Scene, calib: &Calib, bin: &Path, label: &Path, calib_path: &Path) -> Result<(), KittiError> {
    write_velodyne_bin(bin, &scene.points)?;
    write_kitti_labels(label, &scene.labels, None, calib)?;
    std::fs::write(calib_path, calib.to_text()).map_err(io_err(calib_path))
}
