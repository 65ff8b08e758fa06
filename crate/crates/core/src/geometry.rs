//! Camera model, voxel-grid construction over the road ROI, and the
//! world-to-pixel projection used by the view transform.
//!
//! Frames: world X lateral (right), Y longitudinal (forward), Z up.
//! Camera x right, y down, z forward; depth is the camera-frame z coordinate.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::arg("intrinsics: focal lengths must be positive"));
        }
        // the principal point may sit outside the pixel bounds (cropped
        // sensors, recentered ROIs) but must be finite
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::arg("intrinsics: principal point must be finite"));
        }
        Ok(())
    }
}

/// World-to-camera rigid transform: `p_cam = R * p_world + t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    /// Row-major 3x3 rotation.
    pub rotation: [f64; 9],
    /// Translation in meters.
    pub translation: [f64; 3],
}

impl CameraExtrinsics {
    pub fn identity() -> Self {
        CameraExtrinsics {
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            translation: [0.0; 3],
        }
    }

    /// Checks orthonormality and determinant +1 within 1e-6.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let dot = |a: usize, b: usize| -> f64 {
            (0..3).map(|k| r[a * 3 + k] * r[b * 3 + k]).sum()
        };
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot(i, j) - expect).abs() > 1e-6 {
                    return Err(Error::arg("extrinsics: rotation not orthonormal"));
                }
            }
        }
        let det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6])
            + r[2] * (r[3] * r[7] - r[4] * r[6]);
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::arg("extrinsics: rotation determinant != +1"));
        }
        Ok(())
    }

    pub fn transform(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + self.translation[0],
            r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + self.translation[1],
            r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + self.translation[2],
        ]
    }

    /// Inverse rigid transform: camera frame back to world.
    pub fn inverse_transform(&self, p_cam: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let d = [
            p_cam[0] - self.translation[0],
            p_cam[1] - self.translation[1],
            p_cam[2] - self.translation[2],
        ];
        // R^T * d
        [
            r[0] * d[0] + r[3] * d[1] + r[6] * d[2],
            r[1] * d[0] + r[4] * d[1] + r[7] * d[2],
            r[2] * d[0] + r[5] * d[1] + r[8] * d[2],
        ]
    }

    /// Camera center in world coordinates (`-R^T t`).
    pub fn camera_center(&self) -> [f64; 3] {
        self.inverse_transform([0.0; 3])
    }
}

/// A full camera rig: intrinsics plus world-to-camera extrinsics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rig {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

impl Rig {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.extrinsics.validate()
    }

    /// A road-facing rig: camera at world `(x_offset, 0, height)`, mapping
    /// world `(x, y, z)` to camera `(x, -z, y)` and then pitched down by
    /// `pitch` radians about the camera x axis.
    pub fn overlooking(
        intrinsics: CameraIntrinsics,
        height: f64,
        pitch: f64,
        x_offset: f64,
    ) -> Rig {
        // base: x_cam = x_w, y_cam = -z_w, z_cam = y_w
        let base = [1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0];
        // pitch down: rotate about camera x axis so the optical axis dips
        let (c, s) = (pitch.cos(), pitch.sin());
        let rp = [1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c];
        let mut rot = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rot[i * 3 + j] = (0..3).map(|k| rp[i * 3 + k] * base[k * 3 + j]).sum();
            }
        }
        let center = [x_offset, 0.0, height];
        let mut t = [0.0; 3];
        for i in 0..3 {
            t[i] = -(0..3).map(|k| rot[i * 3 + k] * center[k]).sum::<f64>();
        }
        Rig {
            intrinsics,
            extrinsics: CameraExtrinsics {
                rotation: rot,
                translation: t,
            },
        }
    }
}

/// A continuous pixel coordinate with its camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

/// Pinhole projection of a world point.
pub fn project_point(p3d: [f64; 3], k: &CameraIntrinsics, t: &CameraExtrinsics) -> Result<PixelPoint> {
    let p_cam = t.transform(p3d);
    let d = p_cam[2];
    if d <= MIN_DEPTH {
        return Err(Error::BehindCamera { depth: d });
    }
    Ok(PixelPoint {
        u: k.fx * p_cam[0] / d + k.cx,
        v: k.fy * p_cam[1] / d + k.cy,
        d,
    })
}

/// Back-project a pixel with known depth to a world point.
pub fn unproject_point(p: PixelPoint, k: &CameraIntrinsics, t: &CameraExtrinsics) -> [f64; 3] {
    let p_cam = [
        (p.u - k.cx) / k.fx * p.d,
        (p.v - k.cy) / k.fy * p.d,
        p.d,
    ];
    t.inverse_transform(p_cam)
}

/// Voxel grid over the road ROI. Counts are `floor(extent/res + 0.5)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    pub x_res: f64,
    pub y_res: f64,
    pub z_res: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

fn axis_count(range: (f64, f64), res: f64) -> Result<usize> {
    if range.1 <= range.0 {
        return Err(Error::arg("grid: max must exceed min"));
    }
    if res <= 0.0 {
        return Err(Error::arg("grid: resolution must be positive"));
    }
    let n = ((range.1 - range.0) / res + 0.5).floor() as usize;
    Ok(n.max(1))
}

/// Build a [`VoxelGrid`] from per-axis ranges and resolutions.
pub fn make_grid(
    x_range: (f64, f64),
    y_range: (f64, f64),
    z_range: (f64, f64),
    res: (f64, f64, f64),
) -> Result<VoxelGrid> {
    Ok(VoxelGrid {
        nx: axis_count(x_range, res.0)?,
        ny: axis_count(y_range, res.1)?,
        nz: axis_count(z_range, res.2)?,
        x_range,
        y_range,
        z_range,
        x_res: res.0,
        y_res: res.1,
        z_res: res.2,
    })
}

impl VoxelGrid {
    pub fn x_center(&self, i: usize) -> f64 {
        self.x_range.0 + (i as f64 + 0.5) * self.x_res
    }
    pub fn y_center(&self, j: usize) -> f64 {
        self.y_range.0 + (j as f64 + 0.5) * self.y_res
    }
    pub fn z_center(&self, k: usize) -> f64 {
        self.z_range.0 + (k as f64 + 0.5) * self.z_res
    }

    pub fn z_centers(&self) -> Vec<f64> {
        (0..self.nz).map(|k| self.z_center(k)).collect()
    }

    pub fn num_voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }
}
