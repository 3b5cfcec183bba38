//! Sparse voxelization with per-cell mean coordinates and point counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geom::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    pub resolution: [f64; 3],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { range_min: [0.0, -40.0, -3.0], range_max: [70.4, 40.0, 1.0], resolution: [0.05, 0.05, 0.1] }
    }
}

impl GridSpec {
    /// Cells per axis.
    pub fn dims(&self) -> [usize; 3] {
        let mut d = [0; 3];
        for k in 0..3 {
            d[k] = ((self.range_max[k] - self.range_min[k]) / self.resolution[k]).round().max(1.0) as usize;
        }
        d
    }

    pub fn validate(&self) -> Result<(), String> {
        for k in 0..3 {
            if !(self.resolution[k] > 0.0) {
                return Err(format!("resolution[{k}] must be > 0"));
            }
            if !(self.range_max[k] > self.range_min[k]) {
                return Err(format!("range_max[{k}] must exceed range_min[{k}]"));
            }
        }
        Ok(())
    }

    /// Cell index of a point, or `None` when outside the range. Points on the
    /// upper boundary fall into the last cell.
    pub fn index_of(&self, p: &Point) -> Option<[usize; 3]> {
        let dims = self.dims();
        let c = p.xyz();
        let mut idx = [0; 3];
        for k in 0..3 {
            if !(c[k] >= self.range_min[k] && c[k] <= self.range_max[k]) {
                return None;
            }
            let i = ((c[k] - self.range_min[k]) / self.resolution[k]).floor() as usize;
            idx[k] = i.min(dims[k] - 1);
        }
        Some(idx)
    }

    /// Spatial bounds `(lo, hi)` of a cell.
    pub fn cell_bounds(&self, idx: [usize; 3]) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for k in 0..3 {
            lo[k] = self.range_min[k] + idx[k] as f64 * self.resolution[k];
            hi[k] = lo[k] + self.resolution[k];
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelFeature {
    pub mean: [f64; 3],
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub cells: BTreeMap<[usize; 3], VoxelFeature>,
}

impl VoxelGrid {
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }
}

pub fn voxelize(points: &[Point], spec: &GridSpec) -> VoxelGrid {
    let mut sums: BTreeMap<[usize; 3], ([f64; 3], usize)> = BTreeMap::new();
    for p in points {
        if let Some(idx) = spec.index_of(p) {
            let e = sums.entry(idx).or_insert(([0.0; 3], 0));
            e.0[0] += p.x;
            e.0[1] += p.y;
            e.0[2] += p.z;
            e.1 += 1;
        }
    }
    let cells = sums
        .into_iter()
        .map(|(idx, (s, n))| {
            let (lo, hi) = spec.cell_bounds(idx);
            let mut mean = [0.0; 3];
            for k in 0..3 {
                // float summation can drift a hair outside the cell
                mean[k] = (s[k] / n as f64).clamp(lo[k], hi[k]);
            }
            (idx, VoxelFeature { mean, count: n })
        })
        .collect();
    VoxelGrid { spec: *spec, cells }
}
