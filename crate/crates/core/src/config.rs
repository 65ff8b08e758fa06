//! Pipeline configuration: grid, bins, depth spec, camera, scales and channel
//! counts, validated as a whole at load time. Two profiles ship built in:
//! `paper` (full-size geometry, for benchmarking) and `desk` (small, for
//! tests).

use crate::discretize::{bin_strategy, BinSpec};
use crate::error::{Error, Result};
use crate::geometry::{make_grid, CameraIntrinsics, Rig, VoxelGrid};
use crate::viewtrans::{voxel_projector, DepthBinSpec, FeatDims, FusionMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    pub res: (f64, f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinConfig {
    pub n: usize,
    pub e_bound: f64,
    pub alpha: f64,
    /// Bin strategy name: `shuttle` or `uniform`.
    pub mode: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera height above the road plane, meters.
    pub height_m: f64,
    /// Downward pitch, radians.
    pub pitch: f64,
    /// Stereo baseline along world x, meters.
    pub baseline: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub grid: GridConfig,
    pub depth: DepthBinSpec,
    pub bins: BinConfig,
    pub camera: CameraConfig,
    /// Image-to-feature strides, one entry per scale.
    pub scales: Vec<usize>,
    /// Feature channels per scale.
    pub c_i: usize,
    /// Correlation groups.
    pub n_g: usize,
    /// Multi-scale fusion: `concat` or `plus`.
    pub fusion: String,
    /// View-transformation strategy: `lut` or `sampler`.
    pub projector: String,
    pub seed: u64,
}

impl PipelineConfig {
    /// Full-size geometry: the ROI, resolutions and image size used for
    /// benchmarking (grid 63 x 163 x 40, image 960 x 528).
    pub fn paper() -> Self {
        PipelineConfig {
            grid: GridConfig {
                x_range: (-1.0, 0.9),
                y_range: (2.2, 7.1),
                z_range: (-0.2, 0.2),
                res: (0.03, 0.03, 0.01),
            },
            depth: DepthBinSpec {
                d_min: 1.0,
                d_max: 9.0,
                c_d: 64,
            },
            bins: BinConfig {
                n: 80,
                e_bound: 0.2,
                alpha: 1.5,
                mode: "shuttle".to_string(),
            },
            camera: CameraConfig {
                width: 960,
                height: 528,
                fx: 900.0,
                fy: 720.0,
                cx: 479.5,
                cy: 170.0,
                height_m: 1.3,
                pitch: 0.28,
                baseline: 0.12,
            },
            scales: vec![4, 8, 16],
            c_i: 6,
            n_g: 6,
            fusion: "concat".to_string(),
            projector: "lut".to_string(),
            seed: 0,
        }
    }

    /// Small geometry for exhaustive tests: grid 16 x 24 x 8, image 96 x 64.
    pub fn desk() -> Self {
        PipelineConfig {
            grid: GridConfig {
                x_range: (-1.0, 0.9),
                y_range: (2.2, 7.1),
                z_range: (-0.2, 0.2),
                res: (1.9 / 16.0, 4.9 / 24.0, 0.4 / 8.0),
            },
            depth: DepthBinSpec {
                d_min: 2.6,
                d_max: 4.5,
                c_d: 64,
            },
            bins: BinConfig {
                n: 80,
                e_bound: 0.2,
                alpha: 1.5,
                mode: "shuttle".to_string(),
            },
            // steep overhead rig: at 96x64 the forward-looking geometry
            // cannot resolve elevation below a centimeter, so the desk
            // profile looks down at the ROI instead; the principal point
            // sits below the image because the view is recentered on the
            // ROI footprint
            camera: CameraConfig {
                width: 96,
                height: 64,
                fx: 136.0,
                fy: 45.0,
                cx: 49.8,
                cy: 82.0,
                height_m: 2.8,
                pitch: 1.4,
                baseline: 0.12,
            },
            scales: vec![4, 8, 16],
            c_i: 6,
            n_g: 6,
            fusion: "concat".to_string(),
            projector: "lut".to_string(),
            seed: 0,
        }
    }

    /// Look up a named built-in profile.
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::arg(format!(
                "unknown profile `{}` (expected paper or desk)",
                other
            ))),
        }
    }

    /// Check every derived object against its module's preconditions.
    pub fn validate(&self) -> Result<()> {
        self.voxel_grid()?;
        self.bin_spec()?;
        DepthBinSpec::new(self.depth.d_min, self.depth.d_max, self.depth.c_d)?;
        self.rig_left().validate()?;
        if self.scales.is_empty() {
            return Err(Error::arg("config: at least one scale required"));
        }
        for &s in &self.scales {
            self.feat_dims(s)?;
        }
        if self.c_i == 0 {
            return Err(Error::arg("config: c_i must be >= 1"));
        }
        let n_c = self.fused_channels()?;
        if self.n_g == 0 || n_c % self.n_g != 0 {
            return Err(Error::arg(format!(
                "config: n_g = {} must divide the fused channel count {}",
                self.n_g, n_c
            )));
        }
        if voxel_projector(&self.projector).is_none() {
            return Err(Error::arg(format!(
                "config: unknown projector `{}`",
                self.projector
            )));
        }
        Ok(())
    }

    pub fn voxel_grid(&self) -> Result<VoxelGrid> {
        make_grid(
            self.grid.x_range,
            self.grid.y_range,
            self.grid.z_range,
            self.grid.res,
        )
    }

    pub fn bin_spec(&self) -> Result<BinSpec> {
        let strategy = bin_strategy(&self.bins.mode)
            .ok_or_else(|| Error::arg(format!("config: unknown bin mode `{}`", self.bins.mode)))?;
        strategy.build(self.bins.n, self.bins.e_bound, self.bins.alpha)
    }

    pub fn fusion_mode(&self) -> Result<FusionMode> {
        self.fusion.parse()
    }

    pub fn feat_dims(&self, stride: usize) -> Result<FeatDims> {
        FeatDims::for_image(self.camera.width, self.camera.height, stride)
    }

    /// Channel count of the fused voxel volume.
    pub fn fused_channels(&self) -> Result<usize> {
        Ok(match self.fusion_mode()? {
            FusionMode::Concat => self.scales.len() * self.c_i,
            FusionMode::Plus => self.c_i,
        })
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.camera.fx,
            fy: self.camera.fy,
            cx: self.camera.cx,
            cy: self.camera.cy,
            width: self.camera.width,
            height: self.camera.height,
        }
    }

    pub fn rig_left(&self) -> Rig {
        Rig::overlooking(self.intrinsics(), self.camera.height_m, self.camera.pitch, 0.0)
    }

    pub fn rig_right(&self) -> Rig {
        Rig::overlooking(
            self.intrinsics(),
            self.camera.height_m,
            self.camera.pitch,
            self.camera.baseline,
        )
    }
}
