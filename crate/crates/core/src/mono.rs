//! Monocular pipeline: toy feature/depth heads, multi-scale depth-aware
//! projection, BEV encoding, and softmax-expectation elevation regression.
//!
//! The heads stand in for trained backbones; correctness tests inject
//! precomputed features and depth distributions (oracle injection) so they
//! never depend on head quality.

use crate::config::PipelineConfig;
use crate::discretize::{regress_elevation, ElevationMap};
use crate::error::{Error, Result};
use crate::geometry::Rig;
use crate::io::{load_tensor, save_json, save_tensor};
use crate::tensor::{conv2d, softmax, DenseTensor};
use crate::viewtrans::{flatten_to_bev, fuse_multiscale, voxel_projector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Named conv kernels for the mono pipeline, loadable from tensor files.
#[derive(Debug, Clone)]
pub struct MonoWeights {
    /// Per-scale `(C_i, C_raw, k, k)` feature-head kernels.
    pub feat_heads: Vec<DenseTensor>,
    /// Per-scale `(C_d, C_i, k, k)` depth-head kernels.
    pub depth_heads: Vec<DenseTensor>,
    /// BEV-encoder conv2d stack; the last kernel outputs N bin logits.
    pub bev_encoder: Vec<DenseTensor>,
}

/// Calibration constants for [`MonoWeights::reference`]: width of the
/// Gaussian mapping voxel occupancy at height z to nearby elevation bins,
/// and the logit gain ahead of the softmax.
const REF_TAU: f64 = 0.05;
const REF_KAPPA: f64 = 200.0;

impl MonoWeights {
    /// All-zero weights with shapes consistent with `cfg` (`C_raw` input
    /// channels). Zero heads give uniform distributions end to end.
    pub fn zeros(cfg: &PipelineConfig, c_raw: usize) -> Result<Self> {
        let n_scales = cfg.scales.len();
        let fused = cfg.fused_channels()?;
        let nz = cfg.voxel_grid()?.nz;
        Ok(MonoWeights {
            feat_heads: vec![DenseTensor::zeros(&[cfg.c_i, c_raw, 3, 3]); n_scales],
            depth_heads: vec![DenseTensor::zeros(&[cfg.depth.c_d, cfg.c_i, 3, 3]); n_scales],
            bev_encoder: vec![DenseTensor::zeros(&[cfg.bins.n, nz * fused, 1, 1])],
        })
    }

    /// Analytic weights for untrained inference: the BEV encoder is a single
    /// 1x1 conv whose logit for elevation bin `n` pools the occupancy of
    /// voxels whose height is near that bin's center (Gaussian affinity).
    /// Feature/depth heads are zero; this path expects oracle injection.
    pub fn reference(cfg: &PipelineConfig) -> Result<Self> {
        let mut w = Self::zeros(cfg, cfg.c_i)?;
        let grid = cfg.voxel_grid()?;
        let bins = cfg.bin_spec()?;
        let fused = cfg.fused_channels()?;
        let mut k = DenseTensor::zeros(&[cfg.bins.n, grid.nz * fused, 1, 1]);
        for n in 0..cfg.bins.n {
            for (z, &zc) in grid.z_centers().iter().enumerate() {
                let aff = (-((bins.centers[n] - zc).powi(2)) / (2.0 * REF_TAU * REF_TAU)).exp();
                let v = (REF_KAPPA * aff / fused as f64) as f32;
                for ch in 0..fused {
                    k.set(&[n, z * fused + ch, 0, 0], v);
                }
            }
        }
        w.bev_encoder = vec![k];
        Ok(w)
    }
}

/// One conv2d with same-shape padding: raw map to `C_i` feature channels.
pub fn toy_feature_head(raw: &DenseTensor, kernel: &DenseTensor) -> Result<DenseTensor> {
    let (ky, kx) = (kernel.shape()[2], kernel.shape()[3]);
    conv2d(raw, kernel, (ky / 2, kx / 2))
}

/// Conv2d to `C_d` logits, then softmax over the depth-bin axis.
pub fn toy_depth_head(feat: &DenseTensor, kernel: &DenseTensor) -> Result<DenseTensor> {
    let (ky, kx) = (kernel.shape()[2], kernel.shape()[3]);
    let logits = conv2d(feat, kernel, (ky / 2, kx / 2))?;
    softmax(&logits, 2)
}

/// Apply the BEV-encoder conv stack to the flattened `(N_x, N_y, C)` map.
pub fn bev_encode(bev: &DenseTensor, kernels: &[DenseTensor]) -> Result<DenseTensor> {
    if kernels.is_empty() {
        return Err(Error::arg("bev_encode: empty kernel stack"));
    }
    let mut x = bev.clone();
    for k in kernels {
        let (ky, kx) = (k.shape()[2], k.shape()[3]);
        x = conv2d(&x, k, (ky / 2, kx / 2))?;
    }
    Ok(x)
}

/// Pipeline input: either raw per-scale maps for the heads, or injected
/// per-scale features and depth distributions.
pub enum MonoInput {
    Raw(Vec<DenseTensor>),
    Oracle {
        feats: Vec<DenseTensor>,
        depths: Vec<DenseTensor>,
    },
}

#[derive(Debug)]
pub struct MonoOutput {
    pub elevation: ElevationMap,
    /// `(N_x, N_y, N)` softmax scores.
    pub e_prob: DenseTensor,
    /// Per-scale `(h, w, C_d)` depth distributions, for supervision.
    pub d_pre: Vec<DenseTensor>,
    /// Fused `(N_x, N_y, N_z, C)` voxel volume, for the stereo path and
    /// inspection.
    pub volume: DenseTensor,
}

/// Resolve per-scale features and depth distributions from the input,
/// running the toy heads where needed. Shared with the stereo pipeline.
pub fn resolve_scales(
    input: &MonoInput,
    weights: &MonoWeights,
    cfg: &PipelineConfig,
) -> Result<(Vec<DenseTensor>, Vec<DenseTensor>)> {
    let n_scales = cfg.scales.len();
    let (feats, depths) = match input {
        MonoInput::Raw(raw) => {
            if raw.len() != n_scales
                || weights.feat_heads.len() != n_scales
                || weights.depth_heads.len() != n_scales
            {
                return Err(Error::arg(format!(
                    "expected {} per-scale raw maps and head kernels",
                    n_scales
                )));
            }
            let mut feats = Vec::with_capacity(n_scales);
            let mut depths = Vec::with_capacity(n_scales);
            for i in 0..n_scales {
                let f = toy_feature_head(&raw[i], &weights.feat_heads[i])
                    .map_err(|e| e.in_stage("feature_head"))?;
                let d = toy_depth_head(&f, &weights.depth_heads[i])
                    .map_err(|e| e.in_stage("depth_head"))?;
                feats.push(f);
                depths.push(d);
            }
            (feats, depths)
        }
        MonoInput::Oracle { feats, depths } => {
            if feats.len() != n_scales || depths.len() != n_scales {
                return Err(Error::arg(format!(
                    "oracle injection: expected {} per-scale tensors, got {}/{}",
                    n_scales,
                    feats.len(),
                    depths.len()
                )));
            }
            (feats.clone(), depths.clone())
        }
    };
    for (i, &stride) in cfg.scales.iter().enumerate() {
        let fd = cfg.feat_dims(stride)?;
        if feats[i].rank() != 3 || feats[i].shape()[0] != fd.h || feats[i].shape()[1] != fd.w {
            return Err(Error::arg(format!(
                "scale {}: feature shape {:?} does not match ({}, {}, C)",
                stride,
                feats[i].shape(),
                fd.h,
                fd.w
            )));
        }
        if depths[i].shape() != [fd.h, fd.w, cfg.depth.c_d] {
            return Err(Error::arg(format!(
                "scale {}: depth shape {:?} does not match ({}, {}, {})",
                stride,
                depths[i].shape(),
                fd.h,
                fd.w,
                cfg.depth.c_d
            )));
        }
    }
    Ok((feats, depths))
}

/// Project per-scale features into the voxel grid and fuse them.
pub fn build_voxel_volume(
    feats: &[DenseTensor],
    depths: &[DenseTensor],
    rig: &Rig,
    cfg: &PipelineConfig,
) -> Result<DenseTensor> {
    let grid = cfg.voxel_grid()?;
    let projector = voxel_projector(&cfg.projector)
        .ok_or_else(|| Error::arg(format!("unknown projector `{}`", cfg.projector)))?;
    let mut volumes = Vec::with_capacity(cfg.scales.len());
    for (i, &stride) in cfg.scales.iter().enumerate() {
        let fd = cfg.feat_dims(stride)?;
        let v = projector
            .project(&grid, rig, fd, cfg.depth, &feats[i], &depths[i])
            .map_err(|e| e.in_stage("view_transform"))?;
        volumes.push(v);
    }
    fuse_multiscale(&volumes, cfg.fusion_mode()?).map_err(|e| e.in_stage("fusion"))
}

/// Full monocular forward pass.
pub fn run_mono(
    input: &MonoInput,
    weights: &MonoWeights,
    rig: &Rig,
    cfg: &PipelineConfig,
) -> Result<MonoOutput> {
    let bins = cfg.bin_spec()?;
    let (feats, depths) = resolve_scales(input, weights, cfg)?;
    let volume = build_voxel_volume(&feats, &depths, rig, cfg)?;
    let bev = flatten_to_bev(volume.clone()).map_err(|e| e.in_stage("bev_flatten"))?;
    let logits = bev_encode(&bev, &weights.bev_encoder).map_err(|e| e.in_stage("bev_encoder"))?;
    if logits.shape()[2] != bins.n {
        return Err(Error::arg(format!(
            "bev encoder produced {} channels, need {} bins",
            logits.shape()[2],
            bins.n
        ))
        .in_stage("bev_encoder"));
    }
    let e_prob = softmax(&logits, 2).map_err(|e| e.in_stage("softmax"))?;
    let elevation = regress_elevation(&e_prob, &bins).map_err(|e| e.in_stage("regression"))?;
    Ok(MonoOutput {
        elevation,
        e_prob,
        d_pre: depths,
        volume,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct MonoWeightsIndex {
    feat_heads: Vec<String>,
    depth_heads: Vec<String>,
    bev_encoder: Vec<String>,
}

/// Save mono weights as tensor files plus an index JSON.
pub fn save_mono_weights(dir: &Path, w: &MonoWeights) -> Result<()> {
    let mut index = MonoWeightsIndex {
        feat_heads: vec![],
        depth_heads: vec![],
        bev_encoder: vec![],
    };
    for (i, t) in w.feat_heads.iter().enumerate() {
        let name = format!("mono_feat_head_{}", i);
        save_tensor(dir, &name, t)?;
        index.feat_heads.push(name);
    }
    for (i, t) in w.depth_heads.iter().enumerate() {
        let name = format!("mono_depth_head_{}", i);
        save_tensor(dir, &name, t)?;
        index.depth_heads.push(name);
    }
    for (i, t) in w.bev_encoder.iter().enumerate() {
        let name = format!("mono_bev_{}", i);
        save_tensor(dir, &name, t)?;
        index.bev_encoder.push(name);
    }
    save_json(&dir.join("mono_weights.json"), &index)
}

/// Load mono weights saved by [`save_mono_weights`].
pub fn load_mono_weights(dir: &Path) -> Result<MonoWeights> {
    let index: MonoWeightsIndex = crate::io::load_json(&dir.join("mono_weights.json"))?;
    let load_all = |names: &[String]| -> Result<Vec<DenseTensor>> {
        names
            .iter()
            .map(|n| load_tensor(&dir.join(format!("{}.json", n))))
            .collect()
    };
    Ok(MonoWeights {
        feat_heads: load_all(&index.feat_heads)?,
        depth_heads: load_all(&index.depth_heads)?,
        bev_encoder: load_all(&index.bev_encoder)?,
    })
}
