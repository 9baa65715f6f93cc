//! Bird's-eye-view feature grid and oriented-box ROI sampling.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn square(half_width: f64) -> Self {
        Self {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn is_valid(&self) -> bool {
        self.x_max > self.x_min && self.y_max > self.y_min
    }
}

/// Oriented box: length along the heading, width across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDims {
    pub length: f64,
    pub width: f64,
    pub yaw: f64,
}

impl BoxDims {
    /// The four corners followed by the center.
    pub fn sample_points(&self, cx: f64, cy: f64) -> [[f64; 2]; 5] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        let corner = |a: f64, b: f64| [cx + c * a - s * b, cy + s * a + c * b];
        [
            corner(hl, hw),
            corner(hl, -hw),
            corner(-hl, -hw),
            corner(-hl, hw),
            [cx, cy],
        ]
    }
}

/// `G x G` grid of `D`-channel cells covering `region`. Cell `(ix, iy)` has
/// its center at `x_min + (ix + 0.5) * cell_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub size: usize,
    pub channels: usize,
    pub region: Region,
    /// Values indexed `[(iy * size + ix) * channels + c]`.
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(size: usize, channels: usize, region: Region) -> Self {
        Self {
            size,
            channels,
            region,
            data: vec![0.0; size * size * channels],
        }
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (
            (self.region.x_max - self.region.x_min) / self.size as f64,
            (self.region.y_max - self.region.y_min) / self.size as f64,
        )
    }

    pub fn index(&self, ix: usize, iy: usize, c: usize) -> usize {
        (iy * self.size + ix) * self.channels + c
    }

    pub fn get(&self, ix: usize, iy: usize, c: usize) -> f64 {
        self.data[self.index(ix, iy, c)] as f64
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        let (cx, cy) = self.cell_size();
        [
            self.region.x_min + (ix as f64 + 0.5) * cx,
            self.region.y_min + (iy as f64 + 0.5) * cy,
        ]
    }

    /// Cell containing a point, if inside the region.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.region.contains(x, y) {
            return None;
        }
        let (cx, cy) = self.cell_size();
        let ix = (((x - self.region.x_min) / cx) as usize).min(self.size - 1);
        let iy = (((y - self.region.y_min) / cy) as usize).min(self.size - 1);
        Some((ix, iy))
    }

    /// Bilinear interpolation between cell centers; coordinates beyond the
    /// outermost centers take the border value.
    pub fn bilinear(&self, x: f64, y: f64, out: &mut [f64]) {
        let (cx, cy) = self.cell_size();
        let max = (self.size - 1) as f64;
        let u = ((x - self.region.x_min) / cx - 0.5).clamp(0.0, max);
        let v = ((y - self.region.y_min) / cy - 0.5).clamp(0.0, max);
        let (i0, j0) = (u.floor() as usize, v.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(self.size - 1), (j0 + 1).min(self.size - 1));
        let (fu, fv) = (u - i0 as f64, v - j0 as f64);
        for (c, o) in out.iter_mut().enumerate() {
            *o = (1.0 - fu) * (1.0 - fv) * self.get(i0, j0, c)
                + fu * (1.0 - fv) * self.get(i1, j0, c)
                + (1.0 - fu) * fv * self.get(i0, j1, c)
                + fu * fv * self.get(i1, j1, c);
        }
    }
}

/// Bilinear samples at the four box corners and the box center,
/// concatenated (`5 * channels` values). Returns `None` when the box
/// center lies outside the mapped region.
pub fn roi_extract(map: &FeatureMap, cx: f64, cy: f64, bbox: &BoxDims) -> Option<DVector<f64>> {
    if !map.region.contains(cx, cy) {
        return None;
    }
    let d = map.channels;
    let mut out = DVector::zeros(5 * d);
    for (k, p) in bbox.sample_points(cx, cy).iter().enumerate() {
        map.bilinear(p[0], p[1], &mut out.as_mut_slice()[k * d..(k + 1) * d]);
    }
    Some(out)
}

/// [`roi_extract`] with the zero vector for out-of-region boxes; the flag is
/// `false` in that case.
pub fn roi_extract_or_zero(
    map: &FeatureMap,
    cx: f64,
    cy: f64,
    bbox: &BoxDims,
) -> (DVector<f64>, bool) {
    match roi_extract(map, cx, cy, bbox) {
        Some(v) => (v, true),
        None => (DVector::zeros(5 * map.channels), false),
    }
}
