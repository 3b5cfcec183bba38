//! Scenes, labels and detections, plus the native line-oriented scene format.
//!
//! The native format has one record per line:
//!
//! ```text
//! P <x> <y> <z> <intensity>
//! L <class> <cx> <cy> <cz> <w> <l> <h> <r> <truncation> <occlusion> <bbox_height>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Floats are written in
//! shortest round-trip form, so write-then-read is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Box3D, Point, Transform};
use crate::losses::sigmoid;

/// A predicted box with its raw confidence logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: Box3D,
    pub logit: f64,
}

impl Detection {
    pub fn new(bbox: Box3D, logit: f64) -> Self {
        Self { bbox, logit }
    }

    /// Confidence in `[0, 1]`.
    pub fn score(&self) -> f64 {
        sigmoid(self.logit)
    }
}

/// A ground-truth object in the LiDAR frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectLabel {
    pub class: String,
    pub bbox: Box3D,
    /// Fraction of the object leaving the image, in `[0, 1]`.
    pub truncation: f64,
    /// 0 fully visible .. 3 unknown.
    pub occlusion: u8,
    /// Height of the 2D image box in pixels.
    pub bbox_height: f64,
}

impl ObjectLabel {
    pub fn car(bbox: Box3D) -> Self {
        Self { class: "Car".into(), bbox, truncation: 0.0, occlusion: 0, bbox_height: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub points: Vec<Point>,
    pub labels: Vec<ObjectLabel>,
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Scene {
    pub fn new(points: Vec<Point>, labels: Vec<ObjectLabel>) -> Self {
        Self { points, labels }
    }

    /// Applies one transform to every point and every label box.
    pub fn transformed(&self, t: &Transform) -> Scene {
        Scene {
            points: self.points.iter().map(|p| t.apply_point(p)).collect(),
            labels: self
                .labels
                .iter()
                .map(|l| ObjectLabel { bbox: t.apply_box(&l.bbox), ..l.clone() })
                .collect(),
        }
    }

    /// For every point, the index of the first label box containing it.
    pub fn point_owners(&self, eps: f64) -> Vec<Option<usize>> {
        self.points
            .iter()
            .map(|p| self.labels.iter().position(|l| l.bbox.contains(p, eps)))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for l in &self.labels {
            let b = &l.bbox;
            let _ = writeln!(
                s,
                "L {} {} {} {} {} {} {} {} {} {} {}",
                l.class, b.cx, b.cy, b.cz, b.w, b.l, b.h, b.r, l.truncation, l.occlusion, l.bbox_height
            );
        }
        for p in &self.points {
            let _ = writeln!(s, "P {} {} {} {}", p.x, p.y, p.z, p.intensity);
        }
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Scene, SceneError> {
        let mut scene = Scene::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| SceneError::Parse { path: origin.to_string(), line: i + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let nums = |from: usize| -> Result<Vec<f64>, SceneError> {
                fields[from..]
                    .iter()
                    .map(|f| f.parse::<f64>().map_err(|_| err(format!("bad number `{f}`"))))
                    .collect()
            };
            match fields[0] {
                "P" => {
                    if fields.len() != 5 {
                        return Err(err(format!("point line needs 4 values, got {}", fields.len() - 1)));
                    }
                    let v = nums(1)?;
                    scene.points.push(Point::new(v[0], v[1], v[2], v[3]));
                }
                "L" => {
                    if fields.len() != 12 {
                        return Err(err(format!("label line needs 11 values, got {}", fields.len() - 1)));
                    }
                    let v = nums(2)?;
                    let bbox = Box3D::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6]).map_err(|e| err(e.to_string()))?;
                    let occ = v[8];
                    if occ.fract() != 0.0 || !(0.0..=3.0).contains(&occ) {
                        return Err(err(format!("occlusion must be 0..3, got {occ}")));
                    }
                    if !(0.0..=1.0).contains(&v[7]) {
                        return Err(err(format!("truncation must be in [0,1], got {}", v[7])));
                    }
                    scene.labels.push(ObjectLabel {
                        class: fields[1].to_string(),
                        bbox,
                        truncation: v[7],
                        occlusion: occ as u8,
                        bbox_height: v[9],
                    });
                }
                other => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        Ok(scene)
    }

    pub fn read(path: &Path) -> Result<Scene, SceneError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SceneError::Io { path: path.display().to_string(), source })?;
        Scene::from_text(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<(), SceneError> {
        std::fs::write(path, self.to_text())
            .map_err(|source| SceneError::Io { path: path.display().to_string(), source })
    }
}
