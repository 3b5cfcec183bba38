//! A small differentiable single-stage detector.
//!
//! One anchor sits at the center of every BEV cell. Each anchor sees a
//! feature vector pooled from the voxel grid around it (point moments within
//! a radius plus a 3x3 patch of per-cell statistics) and a shared two-layer
//! MLP maps it to seven box residuals, one confidence logit and two
//! direction logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::{Layout, ParamVector};
use super::voxel::{GridSpec, VoxelGrid};
use crate::geom::{normalize_angle, Box3D};
use crate::scene::Detection;

/// Outputs per anchor: 7 residuals, 1 confidence logit, 2 direction logits.
pub const OUTPUTS_PER_ANCHOR: usize = 10;
const POOLED_FEATURES: usize = 10;
const CELL_FEATURES: usize = 4;
/// Input width of the MLP.
pub const INPUT_DIM: usize = POOLED_FEATURES + 9 * CELL_FEATURES;
/// Size residuals are clamped to this magnitude before `exp`.
pub const MAX_LOG_SIZE: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DetectorError {
    #[error("forward cache does not match the current parameters")]
    StaleCache,
    #[error("expected {expected} upstream gradients, got {got}")]
    GradCount { expected: usize, got: usize },
}

/// Prior box shared by all anchors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorSize {
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub z: f64,
    pub r: f64,
}

impl Default for AnchorSize {
    fn default() -> Self {
        Self { w: 1.6, l: 3.9, h: 1.56, z: -0.82, r: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    pub bev_min: [f64; 2],
    pub bev_max: [f64; 2],
    pub cells: [usize; 2],
    pub voxel: GridSpec,
    pub anchor: AnchorSize,
    pub hidden: usize,
    /// Radius of the pooled point-moment features.
    pub pool_radius: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            bev_min: [0.0, -10.0],
            bev_max: [20.0, 10.0],
            cells: [16, 16],
            voxel: GridSpec { range_min: [0.0, -10.0, -3.0], range_max: [20.0, 10.0, 1.0], resolution: [0.1, 0.1, 0.2] },
            anchor: AnchorSize::default(),
            hidden: 32,
            pool_radius: 2.5,
        }
    }
}

impl DetectorSpec {
    pub fn n_anchors(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn cell_size(&self) -> [f64; 2] {
        [
            (self.bev_max[0] - self.bev_min[0]) / self.cells[0] as f64,
            (self.bev_max[1] - self.bev_min[1]) / self.cells[1] as f64,
        ]
    }

    /// Anchors in row-major order over `(ix, iy)`.
    pub fn anchors(&self) -> Vec<Box3D> {
        let cs = self.cell_size();
        let a = &self.anchor;
        let mut out = Vec::with_capacity(self.n_anchors());
        for ix in 0..self.cells[0] {
            for iy in 0..self.cells[1] {
                let cx = self.bev_min[0] + (ix as f64 + 0.5) * cs[0];
                let cy = self.bev_min[1] + (iy as f64 + 0.5) * cs[1];
                out.push(Box3D { cx, cy, cz: a.z, w: a.w, l: a.l, h: a.h, r: normalize_angle(a.r) });
            }
        }
        out
    }

    pub fn layout(&self) -> Layout {
        Layout {
            tensors: vec![
                ("w1".into(), vec![self.hidden, INPUT_DIM]),
                ("b1".into(), vec![self.hidden]),
                ("w2".into(), vec![OUTPUTS_PER_ANCHOR, self.hidden]),
                ("b2".into(), vec![OUTPUTS_PER_ANCHOR]),
            ],
        }
    }
}

/// Residual encoding of `b` relative to `anchor`.
pub fn encode(b: &Box3D, anchor: &Box3D) -> [f64; 7] {
    let diag = anchor.w.hypot(anchor.l);
    [
        (b.cx - anchor.cx) / diag,
        (b.cy - anchor.cy) / diag,
        (b.cz - anchor.cz) / anchor.h,
        (b.w / anchor.w).ln(),
        (b.l / anchor.l).ln(),
        (b.h / anchor.h).ln(),
        normalize_angle(b.r - anchor.r),
    ]
}

/// Inverse of [`encode`]. Size residuals are clamped to `MAX_LOG_SIZE`.
pub fn decode(t: &[f64; 7], anchor: &Box3D) -> Box3D {
    let diag = anchor.w.hypot(anchor.l);
    let c = |v: f64| v.clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE);
    Box3D {
        cx: anchor.cx + t[0] * diag,
        cy: anchor.cy + t[1] * diag,
        cz: anchor.cz + t[2] * anchor.h,
        w: anchor.w * c(t[3]).exp(),
        l: anchor.l * c(t[4]).exp(),
        h: anchor.h * c(t[5]).exp(),
        r: normalize_angle(anchor.r + t[6]),
    }
}

/// Jacobian diagonal of [`decode`]: d box param / d residual.
fn decode_jacobian(t: &[f64; 7], b: &Box3D, anchor: &Box3D) -> [f64; 7] {
    let diag = anchor.w.hypot(anchor.l);
    let inside = |v: f64| if v.abs() < MAX_LOG_SIZE { 1.0 } else { 0.0 };
    [diag, diag, anchor.h, b.w * inside(t[3]), b.l * inside(t[4]), b.h * inside(t[5]), 1.0]
}

/// Per-anchor input features from a voxel grid.
pub fn anchor_features(spec: &DetectorSpec, grid: &VoxelGrid) -> Vec<[f64; INPUT_DIM]> {
    let cs = spec.cell_size();
    let [nx, ny] = spec.cells;
    // per-cell (n, sum x, sum y, sum z)
    let mut cell = vec![[0.0f64; 4]; nx * ny];
    let voxels: Vec<([f64; 3], f64)> = grid.cells.values().map(|v| (v.mean, v.count as f64)).collect();
    for (m, n) in &voxels {
        let ix = ((m[0] - spec.bev_min[0]) / cs[0]).floor();
        let iy = ((m[1] - spec.bev_min[1]) / cs[1]).floor();
        if ix < 0.0 || iy < 0.0 || ix >= nx as f64 || iy >= ny as f64 {
            continue;
        }
        let c = &mut cell[ix as usize * ny + iy as usize];
        c[0] += n;
        c[1] += n * m[0];
        c[2] += n * m[1];
        c[3] += n * m[2];
    }
    let anchors = spec.anchors();
    let r2 = spec.pool_radius * spec.pool_radius;
    let rad = spec.pool_radius;
    anchors
        .iter()
        .enumerate()
        .map(|(a, anc)| {
            let mut f = [0.0; INPUT_DIM];
            let (mut n, mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0, 0.0);
            let (mut sxx, mut syy, mut sxy, mut szz) = (0.0, 0.0, 0.0, 0.0);
            for (m, c) in &voxels {
                let dx = m[0] - anc.cx;
                let dy = m[1] - anc.cy;
                if dx * dx + dy * dy > r2 {
                    continue;
                }
                let dz = m[2] - anc.cz;
                n += c;
                sx += c * dx;
                sy += c * dy;
                sz += c * dz;
                sxx += c * dx * dx;
                syy += c * dy * dy;
                sxy += c * dx * dy;
                szz += c * dz * dz;
            }
            if n > 0.0 {
                let (mx, my, mz) = (sx / n, sy / n, sz / n);
                let vxx = (sxx / n - mx * mx).max(0.0);
                let vyy = (syy / n - my * my).max(0.0);
                let vxy = sxy / n - mx * my;
                let vzz = (szz / n - mz * mz).max(0.0);
                let tr = vxx + vyy + 1e-6;
                f[0] = (1.0 + n).ln() / 5.0;
                f[1] = mx / rad;
                f[2] = my / rad;
                f[3] = mz;
                f[4] = vxx / (rad * rad);
                f[5] = vyy / (rad * rad);
                f[6] = vxy / (rad * rad);
                f[7] = (vxx - vyy) / tr;
                f[8] = 2.0 * vxy / tr;
                f[9] = vzz.sqrt();
            }
            let (ax, ay) = (a / ny, a % ny);
            let mut k = POOLED_FEATURES;
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    let (jx, jy) = (ax as i64 + dx, ay as i64 + dy);
                    if jx >= 0 && jy >= 0 && (jx as usize) < nx && (jy as usize) < ny {
                        let c = cell[jx as usize * ny + jy as usize];
                        if c[0] > 0.0 {
                            let ccx = spec.bev_min[0] + (jx as f64 + 0.5) * cs[0];
                            let ccy = spec.bev_min[1] + (jy as f64 + 0.5) * cs[1];
                            f[k] = (1.0 + c[0]).ln() / 5.0;
                            f[k + 1] = (c[1] / c[0] - ccx) / cs[0];
                            f[k + 2] = (c[2] / c[0] - ccy) / cs[1];
                            f[k + 3] = c[3] / c[0] - anc.cz;
                        }
                    }
                    k += CELL_FEATURES;
                }
            }
            f
        })
        .collect()
}

/// Raw head outputs decoded into detections.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub detections: Vec<Detection>,
    pub residuals: Vec<[f64; 7]>,
    pub dir_logits: Vec<[f64; 2]>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    inputs: Vec<[f64; INPUT_DIM]>,
    hidden: Vec<f64>,
    residuals: Vec<[f64; 7]>,
    boxes: Vec<Box3D>,
}

/// Upstream gradient for one anchor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutputGrad {
    /// With respect to the decoded box `(cx, cy, cz, w, l, h, r)`.
    pub bbox: [f64; 7],
    /// With respect to the raw residuals.
    pub residual: [f64; 7],
    pub logit: f64,
    pub dir: [f64; 2],
}

impl OutputGrad {
    pub fn add_scaled(&mut self, o: &OutputGrad, s: f64) {
        for k in 0..7 {
            self.bbox[k] += s * o.bbox[k];
            self.residual[k] += s * o.residual[k];
        }
        self.logit += s * o.logit;
        self.dir[0] += s * o.dir[0];
        self.dir[1] += s * o.dir[1];
    }
}

fn fingerprint(values: &[f64]) -> u64 {
    // FNV-1a over the raw bits
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDetector {
    pub spec: DetectorSpec,
    pub params: ParamVector,
}

impl ToyDetector {
    pub fn zeros(spec: DetectorSpec) -> Self {
        Self { params: ParamVector::zeros(spec.layout()), spec }
    }

    /// Xavier-uniform hidden layer, small output layer, and a confidence
    /// bias matching a 1% foreground prior.
    pub fn new(spec: DetectorSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(spec);
        let h = spec.hidden as f64;
        let a1 = (6.0 / (INPUT_DIM as f64 + h)).sqrt();
        for v in m.params.tensor_mut("w1") {
            *v = rng.random_range(-a1..a1);
        }
        let a2 = 0.1 * (6.0 / (h + OUTPUTS_PER_ANCHOR as f64)).sqrt();
        for v in m.params.tensor_mut("w2") {
            *v = rng.random_range(-a2..a2);
        }
        m.params.tensor_mut("b2")[7] = -(99.0f64).ln();
        m
    }

    pub fn anchors(&self) -> Vec<Box3D> {
        self.spec.anchors()
    }

    pub fn features(&self, grid: &VoxelGrid) -> Vec<[f64; INPUT_DIM]> {
        anchor_features(&self.spec, grid)
    }

    pub fn forward(&self, grid: &VoxelGrid) -> (DetectorOutput, ForwardCache) {
        self.forward_features(self.features(grid))
    }

    pub fn forward_features(&self, inputs: Vec<[f64; INPUT_DIM]>) -> (DetectorOutput, ForwardCache) {
        let hdim = self.spec.hidden;
        let w1 = self.params.tensor("w1");
        let b1 = self.params.tensor("b1");
        let w2 = self.params.tensor("w2");
        let b2 = self.params.tensor("b2");
        let anchors = self.anchors();
        let n = inputs.len();
        let mut hidden = vec![0.0; n * hdim];
        let mut detections = Vec::with_capacity(n);
        let mut residuals = Vec::with_capacity(n);
        let mut dir_logits = Vec::with_capacity(n);
        let mut boxes = Vec::with_capacity(n);
        for (a, x) in inputs.iter().enumerate() {
            let hrow = &mut hidden[a * hdim..(a + 1) * hdim];
            for j in 0..hdim {
                let w = &w1[j * INPUT_DIM..(j + 1) * INPUT_DIM];
                let z: f64 = b1[j] + w.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>();
                hrow[j] = z.tanh();
            }
            let mut o = [0.0; OUTPUTS_PER_ANCHOR];
            for (k, ok) in o.iter_mut().enumerate() {
                let w = &w2[k * hdim..(k + 1) * hdim];
                *ok = b2[k] + w.iter().zip(hrow.iter()).map(|(p, q)| p * q).sum::<f64>();
            }
            let t: [f64; 7] = [o[0], o[1], o[2], o[3], o[4], o[5], o[6]];
            let b = decode(&t, &anchors[a]);
            detections.push(Detection::new(b, o[7]));
            residuals.push(t);
            dir_logits.push([o[8], o[9]]);
            boxes.push(b);
        }
        let cache = ForwardCache {
            fingerprint: fingerprint(&self.params.values),
            inputs,
            hidden,
            residuals: residuals.clone(),
            boxes,
        };
        (DetectorOutput { detections, residuals, dir_logits }, cache)
    }

    /// Exact backpropagation of per-anchor output gradients.
    pub fn backward(&self, cache: &ForwardCache, grads: &[OutputGrad]) -> Result<ParamVector, DetectorError> {
        if fingerprint(&self.params.values) != cache.fingerprint {
            return Err(DetectorError::StaleCache);
        }
        if grads.len() != cache.inputs.len() {
            return Err(DetectorError::GradCount { expected: cache.inputs.len(), got: grads.len() });
        }
        let hdim = self.spec.hidden;
        let anchors = self.anchors();
        let w2 = self.params.tensor("w2");
        let mut out = ParamVector::zeros(self.params.layout.clone());
        let r_w1 = out.layout.range("w1").unwrap();
        let r_b1 = out.layout.range("b1").unwrap();
        let r_w2 = out.layout.range("w2").unwrap();
        let r_b2 = out.layout.range("b2").unwrap();
        let g = &mut out.values;
        let mut dz = vec![0.0; hdim];
        for (a, up) in grads.iter().enumerate() {
            let jac = decode_jacobian(&cache.residuals[a], &cache.boxes[a], &anchors[a]);
            let mut d_out = [0.0; OUTPUTS_PER_ANCHOR];
            for k in 0..7 {
                d_out[k] = up.bbox[k] * jac[k] + up.residual[k];
            }
            d_out[7] = up.logit;
            d_out[8] = up.dir[0];
            d_out[9] = up.dir[1];
            if d_out.iter().all(|v| *v == 0.0) {
                continue;
            }
            let h = &cache.hidden[a * hdim..(a + 1) * hdim];
            for k in 0..OUTPUTS_PER_ANCHOR {
                if d_out[k] == 0.0 {
                    continue;
                }
                g[r_b2.start + k] += d_out[k];
                let row = r_w2.start + k * hdim;
                for j in 0..hdim {
                    g[row + j] += d_out[k] * h[j];
                }
            }
            for j in 0..hdim {
                let mut s = 0.0;
                for k in 0..OUTPUTS_PER_ANCHOR {
                    s += d_out[k] * w2[k * hdim + j];
                }
                dz[j] = s * (1.0 - h[j] * h[j]);
            }
            let x = &cache.inputs[a];
            for j in 0..hdim {
                if dz[j] == 0.0 {
                    continue;
                }
                g[r_b1.start + j] += dz[j];
                let row = r_w1.start + j * INPUT_DIM;
                for (i, xi) in x.iter().enumerate() {
                    g[row + i] += dz[j] * xi;
                }
            }
        }
        Ok(out)
    }
}
