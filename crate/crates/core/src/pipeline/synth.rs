//! Synthetic LiDAR scenes: a few cars on a flat ground, sampled on their
//! sensor-facing surfaces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom::{iou_bev, Box3D, Point};
use crate::scene::{ObjectLabel, Scene};

/// Focal length used to turn object height into image pixels.
pub const FOCAL_PX: f64 = 721.5377;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub n_objects: [usize; 2],
    pub yaw_range: [f64; 2],
    pub w_range: [f64; 2],
    pub l_range: [f64; 2],
    pub h_range: [f64; 2],
    pub ground_z: f64,
    /// Surface points per square meter at `ref_dist`; falls off with range squared.
    pub density: f64,
    pub ref_dist: f64,
    pub noise_sigma: f64,
    pub clutter: usize,
    pub min_gap: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            x_range: [3.0, 17.0],
            y_range: [-7.0, 7.0],
            n_objects: [2, 4],
            yaw_range: [-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2],
            w_range: [1.5, 1.8],
            l_range: [3.6, 4.2],
            h_range: [1.4, 1.7],
            ground_z: -1.6,
            density: 20.0,
            ref_dist: 8.0,
            noise_sigma: 0.02,
            clutter: 30,
            min_gap: 5.0,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn sample_boxes<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Vec<Box3D> {
    let n = rng.random_range(cfg.n_objects[0]..=cfg.n_objects[1].max(cfg.n_objects[0]));
    let mut boxes: Vec<Box3D> = Vec::with_capacity(n);
    let mut tries = 0;
    while boxes.len() < n && tries < 1000 {
        tries += 1;
        let h = uniform(rng, cfg.h_range);
        let b = Box3D::new(
            uniform(rng, cfg.x_range),
            uniform(rng, cfg.y_range),
            cfg.ground_z + h / 2.0,
            uniform(rng, cfg.w_range),
            uniform(rng, cfg.l_range),
            h,
            uniform(rng, cfg.yaw_range),
        )
        .expect("positive sizes");
        let clear = boxes.iter().all(|o| {
            iou_bev(o, &b) == 0.0 && (o.cx - b.cx).hypot(o.cy - b.cy) >= cfg.min_gap
        });
        if clear {
            boxes.push(b);
        }
    }
    boxes
}

/// Points on the faces of `b` visible from the origin, jittered and then
/// clamped back into the box.
fn surface_points<R: Rng + ?Sized>(b: &Box3D, cfg: &SynthConfig, rng: &mut R) -> Vec<Point> {
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
    let dist = b.cx.hypot(b.cy).max(1.0);
    let falloff = (cfg.ref_dist / dist).powi(2).min(1.0);
    let (hl, hw, hh) = (b.l / 2.0, b.w / 2.0, b.h / 2.0);
    let (s, c) = b.r.sin_cos();
    // (outward normal in local xy, fixed coordinate, extent along the face)
    let sides = [([1.0, 0.0], hl, hw), ([-1.0, 0.0], hl, hw), ([0.0, 1.0], hw, hl), ([0.0, -1.0], hw, hl)];
    let mut out = Vec::new();
    for (n, off, half) in sides {
        let nw = [c * n[0] - s * n[1], s * n[0] + c * n[1]];
        let fc = [b.cx + nw[0] * off, b.cy + nw[1] * off];
        if nw[0] * fc[0] + nw[1] * fc[1] >= 0.0 {
            continue;
        }
        let count = (cfg.density * 2.0 * half * b.h * falloff).round() as usize;
        for _ in 0..count {
            let t = rng.random_range(-half..half);
            let z = rng.random_range(-hh..hh);
            let local = if n[0] != 0.0 { [n[0] * off, t, z] } else { [t, n[1] * off, z] };
            out.push(local);
        }
    }
    if b.z_max() < 0.0 {
        let count = (cfg.density * b.l * b.w * falloff).round() as usize;
        for _ in 0..count {
            out.push([rng.random_range(-hl..hl), rng.random_range(-hw..hw), hh]);
        }
    }
    out.into_iter()
        .map(|l| {
            let w = b.from_local(l);
            let p = Point::new(w[0] + noise.sample(rng), w[1] + noise.sample(rng), w[2] + noise.sample(rng), 0.5);
            let u = b.to_normalized(&p).map(|v| v.clamp(-1.0, 1.0));
            let q = b.from_normalized(u);
            Point::new(q[0], q[1], q[2], p.intensity)
        })
        .collect()
}

pub fn synth_scene<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Scene {
    let boxes = sample_boxes(cfg, rng);
    let mut points = Vec::new();
    for b in &boxes {
        points.extend(surface_points(b, cfg, rng));
    }
    let mut placed = 0;
    let mut tries = 0;
    while placed < cfg.clutter && tries < cfg.clutter * 20 {
        tries += 1;
        let p = Point::new(
            rng.random_range(0.0..20.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(cfg.ground_z..cfg.ground_z + 2.0),
            0.1,
        );
        if boxes.iter().all(|b| !b.contains(&p, 0.3)) {
            points.push(p);
            placed += 1;
        }
    }
    let labels = boxes
        .into_iter()
        .map(|b| ObjectLabel {
            class: "Car".into(),
            bbox: b,
            truncation: 0.0,
            occlusion: 0,
            bbox_height: FOCAL_PX * b.h / b.cx.max(1.0),
        })
        .collect();
    Scene { points, labels }
}

/// `n` scenes, each from its own stream so any prefix is stable.
pub fn synth_dataset(cfg: &SynthConfig, n: usize, seed: u64) -> Vec<Scene> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            synth_scene(cfg, &mut rng)
        })
        .collect()
}
