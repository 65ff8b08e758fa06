//! Depth-aware 3D-to-2D projection: look-up-table construction, the parallel
//! gather over voxels, a sampler-based reference path, multi-scale fusion and
//! the BEV reshape.
//!
//! The LUT path and the reference sampler compute the same quantity by two
//! routes; the sampler recomputes projection and interpolation per voxel in
//! f64 and serves as the correctness oracle for the gather.

use crate::error::{Error, Result};
use crate::geometry::{project_point, Rig, VoxelGrid};
use crate::tensor::DenseTensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Uniform depth bins over `[d_min, d_max]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DepthBinSpec {
    pub d_min: f64,
    pub d_max: f64,
    pub c_d: usize,
}

impl DepthBinSpec {
    pub fn new(d_min: f64, d_max: f64, c_d: usize) -> Result<Self> {
        if d_min <= 0.0 || d_max <= d_min || c_d < 2 {
            return Err(Error::arg("depth spec: need 0 < d_min < d_max and c_d >= 2"));
        }
        Ok(DepthBinSpec { d_min, d_max, c_d })
    }

    pub fn bin_width(&self) -> f64 {
        (self.d_max - self.d_min) / self.c_d as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        self.d_min + (k as f64 + 0.5) * self.bin_width()
    }

    /// Continuous bin coordinate of a metric depth; bin centers sit at
    /// integer coordinates.
    pub fn coord(&self, d: f64) -> f64 {
        (d - self.d_min) / self.bin_width() - 0.5
    }

    /// Index of the nearest bin center, clamped to range.
    pub fn nearest_bin(&self, d: f64) -> usize {
        let c = self.coord(d).round();
        (c.max(0.0) as usize).min(self.c_d - 1)
    }
}

/// Feature-map geometry: dims plus the image-to-feature stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatDims {
    pub h: usize,
    pub w: usize,
    pub stride: usize,
}

impl FeatDims {
    pub fn for_image(width: usize, height: usize, stride: usize) -> Result<Self> {
        if stride == 0 || width % stride != 0 || height % stride != 0 {
            return Err(Error::arg(format!(
                "feature dims: image {}x{} not divisible by stride {}",
                width, height, stride
            )));
        }
        Ok(FeatDims {
            h: height / stride,
            w: width / stride,
            stride,
        })
    }
}

/// Per-voxel precomputed interpolation indices and weights.
///
/// `feat_idx`/`feat_w` hold 4 bilinear taps into an `(h, w, C)` feature map
/// (flattened pixel index); `depth_idx`/`depth_w` hold 8 trilinear taps into
/// an `(h, w, C_d)` depth-distribution map (flattened pixel-and-bin index).
/// Invalid voxels carry all-zero weights.
#[derive(Debug, Clone)]
pub struct ProjectionLUT {
    pub grid_dims: (usize, usize, usize),
    pub feat: FeatDims,
    pub dspec: DepthBinSpec,
    pub valid: Vec<bool>,
    pub feat_idx: Vec<u32>,
    pub feat_w: Vec<f32>,
    pub depth_idx: Vec<u32>,
    pub depth_w: Vec<f32>,
}

// Interior sampling domain: a voxel is valid only when every bilinear and
// trilinear neighbor exists, i.e. the continuous coordinates lie in
// [0, size-1] per axis. Outside-the-border voxels are culled, matching the
// invalid-voxel semantics of the gather.
fn lower_tap(coord: f64, size: usize) -> Option<(usize, f64)> {
    if !(0.0..=(size as f64 - 1.0)).contains(&coord) {
        return None;
    }
    let mut i0 = coord.floor() as usize;
    if i0 + 1 >= size {
        // exactly on the last lattice point
        i0 = size.saturating_sub(2);
    }
    if size == 1 {
        return Some((0, 0.0));
    }
    Some((i0, coord - i0 as f64))
}

/// Precompute projection indices and interpolation weights for every voxel
/// center of `grid` as seen by `rig` at one feature scale.
pub fn build_lut(grid: &VoxelGrid, rig: &Rig, feat: FeatDims, dspec: DepthBinSpec) -> ProjectionLUT {
    let n = grid.num_voxels();
    let mut lut = ProjectionLUT {
        grid_dims: (grid.nx, grid.ny, grid.nz),
        feat,
        dspec,
        valid: vec![false; n],
        feat_idx: vec![0; 4 * n],
        feat_w: vec![0.0; 4 * n],
        depth_idx: vec![0; 8 * n],
        depth_w: vec![0.0; 8 * n],
    };
    let stride = feat.stride as f64;
    for ix in 0..grid.nx {
        for iy in 0..grid.ny {
            for iz in 0..grid.nz {
                let vi = (ix * grid.ny + iy) * grid.nz + iz;
                let p = [grid.x_center(ix), grid.y_center(iy), grid.z_center(iz)];
                let px = match project_point(p, &rig.intrinsics, &rig.extrinsics) {
                    Ok(px) => px,
                    Err(_) => continue,
                };
                let uf = px.u / stride - 0.5;
                let vf = px.v / stride - 0.5;
                let td = dspec.coord(px.d);
                let (Some((u0, fu)), Some((v0, fv)), Some((k0, fd))) = (
                    lower_tap(uf, feat.w),
                    lower_tap(vf, feat.h),
                    lower_tap(td, dspec.c_d),
                ) else {
                    continue;
                };
                let u1 = (u0 + 1).min(feat.w - 1);
                let v1 = (v0 + 1).min(feat.h - 1);
                let k1 = (k0 + 1).min(dspec.c_d - 1);
                let bw = [
                    (1.0 - fu) * (1.0 - fv),
                    fu * (1.0 - fv),
                    (1.0 - fu) * fv,
                    fu * fv,
                ];
                let pix = [
                    v0 * feat.w + u0,
                    v0 * feat.w + u1,
                    v1 * feat.w + u0,
                    v1 * feat.w + u1,
                ];
                for t in 0..4 {
                    lut.feat_idx[4 * vi + t] = pix[t] as u32;
                    lut.feat_w[4 * vi + t] = bw[t] as f32;
                }
                for t in 0..4 {
                    for (s, (k, wd)) in [(k0, 1.0 - fd), (k1, fd)].iter().enumerate() {
                        let slot = 8 * vi + 2 * t + s;
                        lut.depth_idx[slot] = (pix[t] * dspec.c_d + k) as u32;
                        lut.depth_w[slot] = (bw[t] * wd) as f32;
                    }
                }
                lut.valid[vi] = true;
            }
        }
    }
    lut
}

/// LUT-driven gather: for each valid voxel, bilinear feature vector times
/// trilinear depth probability. Parallel over voxels; each voxel writes only
/// its own output slot, so results are identical across thread counts.
pub fn gather_voxels(lut: &ProjectionLUT, f_img: &DenseTensor, d_pre: &DenseTensor) -> Result<DenseTensor> {
    let (nx, ny, nz) = lut.grid_dims;
    if f_img.rank() != 3 || f_img.shape()[0] != lut.feat.h || f_img.shape()[1] != lut.feat.w {
        return Err(Error::arg(format!(
            "gather_voxels: feature shape {:?} does not match LUT ({}, {}, C)",
            f_img.shape(),
            lut.feat.h,
            lut.feat.w
        )));
    }
    if d_pre.rank() != 3
        || d_pre.shape()[0] != lut.feat.h
        || d_pre.shape()[1] != lut.feat.w
        || d_pre.shape()[2] != lut.dspec.c_d
    {
        return Err(Error::arg(format!(
            "gather_voxels: depth shape {:?} does not match LUT ({}, {}, {})",
            d_pre.shape(),
            lut.feat.h,
            lut.feat.w,
            lut.dspec.c_d
        )));
    }
    let c = f_img.shape()[2];
    let feats = f_img.data();
    let depths = d_pre.data();
    let mut out = DenseTensor::zeros(&[nx, ny, nz, c]);
    // one task per (x, y) column of voxels: coarse enough to amortize
    // scheduling, and consecutive voxels share cache lines in the LUT
    out.data_mut()
        .par_chunks_mut(nz * c)
        .enumerate()
        .for_each(|(col, slab)| {
            let base = col * nz;
            let valid = &lut.valid[base..base + nz];
            let fi = &lut.feat_idx[4 * base..4 * (base + nz)];
            let fw = &lut.feat_w[4 * base..4 * (base + nz)];
            let di = &lut.depth_idx[8 * base..8 * (base + nz)];
            let dw = &lut.depth_w[8 * base..8 * (base + nz)];
            for iz in 0..nz {
                if !valid[iz] {
                    continue;
                }
                let di = &di[8 * iz..8 * iz + 8];
                let dw = &dw[8 * iz..8 * iz + 8];
                let dp: f32 = di
                    .iter()
                    .zip(dw)
                    .map(|(&i, &w)| w * depths[i as usize])
                    .sum();
                let slot = &mut slab[iz * c..iz * c + c];
                for t in 0..4 {
                    let w = fw[4 * iz + t] * dp;
                    let p = fi[4 * iz + t] as usize * c;
                    let src = &feats[p..p + c];
                    for (o, &f) in slot.iter_mut().zip(src) {
                        *o += w * f;
                    }
                }
            }
        });
    Ok(out)
}

/// Reference path: per-voxel on-the-fly projection and interpolation in f64.
/// The correctness oracle for [`gather_voxels`].
pub fn sample_voxels_reference(
    grid: &VoxelGrid,
    rig: &Rig,
    feat: FeatDims,
    dspec: DepthBinSpec,
    f_img: &DenseTensor,
    d_pre: &DenseTensor,
) -> Result<DenseTensor> {
    if f_img.rank() != 3 || f_img.shape()[0] != feat.h || f_img.shape()[1] != feat.w {
        return Err(Error::arg("sample_voxels_reference: feature shape mismatch"));
    }
    if d_pre.rank() != 3
        || d_pre.shape()[0] != feat.h
        || d_pre.shape()[1] != feat.w
        || d_pre.shape()[2] != dspec.c_d
    {
        return Err(Error::arg("sample_voxels_reference: depth shape mismatch"));
    }
    let c = f_img.shape()[2];
    let feats = f_img.data();
    let depths = d_pre.data();
    let stride = feat.stride as f64;
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let mut out = DenseTensor::zeros(&[nx, ny, nz, c]);
    out.data_mut()
        .par_chunks_mut(nz * c)
        .enumerate()
        .for_each(|(col, slab)| {
            let ix = col / ny;
            let iy = col % ny;
            for iz in 0..nz {
                let p = [grid.x_center(ix), grid.y_center(iy), grid.z_center(iz)];
                let px = match project_point(p, &rig.intrinsics, &rig.extrinsics) {
                    Ok(px) => px,
                    Err(_) => continue,
                };
                let uf = px.u / stride - 0.5;
                let vf = px.v / stride - 0.5;
                let td = dspec.coord(px.d);
                let (Some((u0, fu)), Some((v0, fv)), Some((k0, fd))) = (
                    lower_tap(uf, feat.w),
                    lower_tap(vf, feat.h),
                    lower_tap(td, dspec.c_d),
                ) else {
                    continue;
                };
                let u1 = (u0 + 1).min(feat.w - 1);
                let v1 = (v0 + 1).min(feat.h - 1);
                let k1 = (k0 + 1).min(dspec.c_d - 1);
                // trilinear depth probability
                let mut dp = 0.0f64;
                for (v, wv) in [(v0, 1.0 - fv), (v1, fv)] {
                    for (u, wu) in [(u0, 1.0 - fu), (u1, fu)] {
                        for (kk, wk) in [(k0, 1.0 - fd), (k1, fd)] {
                            dp += wv * wu * wk * depths[(v * feat.w + u) * dspec.c_d + kk] as f64;
                        }
                    }
                }
                for ch in 0..c {
                    let mut fv_acc = 0.0f64;
                    for (v, wv) in [(v0, 1.0 - fv), (v1, fv)] {
                        for (u, wu) in [(u0, 1.0 - fu), (u1, fu)] {
                            fv_acc += wv * wu * feats[(v * feat.w + u) * c + ch] as f64;
                        }
                    }
                    slab[iz * c + ch] = (fv_acc * dp) as f32;
                }
            }
        });
    Ok(out)
}

/// How per-scale voxel features are merged into one volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Concat,
    Plus,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(FusionMode::Concat),
            "plus" => Ok(FusionMode::Plus),
            other => Err(Error::arg(format!("unknown fusion mode `{}`", other))),
        }
    }
}

/// Merge per-scale `(N_x, N_y, N_z, C_i)` volumes: channel concatenation or
/// elementwise sum (equal channel counts required for `plus`).
pub fn fuse_multiscale(volumes: &[DenseTensor], mode: FusionMode) -> Result<DenseTensor> {
    if volumes.is_empty() {
        return Err(Error::arg("fuse_multiscale: no inputs"));
    }
    let spatial = &volumes[0].shape()[..3];
    for v in volumes {
        if v.rank() != 4 || &v.shape()[..3] != spatial {
            return Err(Error::arg(format!(
                "fuse_multiscale: spatial mismatch {:?} vs {:?}",
                &v.shape()[..3],
                spatial
            )));
        }
    }
    match mode {
        FusionMode::Plus => {
            let c = volumes[0].shape()[3];
            for v in volumes {
                if v.shape()[3] != c {
                    return Err(Error::arg("fuse_multiscale: plus requires equal channel counts"));
                }
            }
            let mut acc = volumes[0].clone();
            for v in &volumes[1..] {
                acc = acc.add(v)?;
            }
            Ok(acc)
        }
        FusionMode::Concat => {
            let cells: usize = spatial.iter().product();
            let c_total: usize = volumes.iter().map(|v| v.shape()[3]).sum();
            let mut out = DenseTensor::zeros(&[spatial[0], spatial[1], spatial[2], c_total]);
            let dst = out.data_mut();
            for cell in 0..cells {
                let mut off = cell * c_total;
                for v in volumes {
                    let c = v.shape()[3];
                    dst[off..off + c].copy_from_slice(&v.data()[cell * c..(cell + 1) * c]);
                    off += c;
                }
            }
            Ok(out)
        }
    }
}

/// Reshape `(N_x, N_y, N_z, C)` into `(N_x, N_y, N_z*C)`; pure reshape,
/// z-major within the fused channel axis.
pub fn flatten_to_bev(b: DenseTensor) -> Result<DenseTensor> {
    if b.rank() != 4 {
        return Err(Error::arg(format!("flatten_to_bev: rank {} != 4", b.rank())));
    }
    let s = b.shape().to_vec();
    b.reshape(&[s[0], s[1], s[2] * s[3]])
}

/// Inverse of [`flatten_to_bev`].
pub fn unflatten_bev(t: DenseTensor, nz: usize) -> Result<DenseTensor> {
    if t.rank() != 3 {
        return Err(Error::arg("unflatten_bev: rank != 3"));
    }
    let s = t.shape().to_vec();
    if s[2] % nz != 0 {
        return Err(Error::arg("unflatten_bev: channel axis not divisible by nz"));
    }
    let c = s[2] / nz;
    t.reshape(&[s[0], s[1], nz, c])
}

/// Interchangeable view-transformation strategy, selected by name.
pub trait VoxelProjector: Send + Sync {
    fn name(&self) -> &'static str;
    fn project(
        &self,
        grid: &VoxelGrid,
        rig: &Rig,
        feat: FeatDims,
        dspec: DepthBinSpec,
        f_img: &DenseTensor,
        d_pre: &DenseTensor,
    ) -> Result<DenseTensor>;
}

struct LutProjector;
struct SamplerProjector;

impl VoxelProjector for LutProjector {
    fn name(&self) -> &'static str {
        "lut"
    }
    fn project(
        &self,
        grid: &VoxelGrid,
        rig: &Rig,
        feat: FeatDims,
        dspec: DepthBinSpec,
        f_img: &DenseTensor,
        d_pre: &DenseTensor,
    ) -> Result<DenseTensor> {
        let lut = build_lut(grid, rig, feat, dspec);
        gather_voxels(&lut, f_img, d_pre)
    }
}

impl VoxelProjector for SamplerProjector {
    fn name(&self) -> &'static str {
        "sampler"
    }
    fn project(
        &self,
        grid: &VoxelGrid,
        rig: &Rig,
        feat: FeatDims,
        dspec: DepthBinSpec,
        f_img: &DenseTensor,
        d_pre: &DenseTensor,
    ) -> Result<DenseTensor> {
        sample_voxels_reference(grid, rig, feat, dspec, f_img, d_pre)
    }
}

static PROJECTORS: &[&dyn VoxelProjector] = &[&LutProjector, &SamplerProjector];

/// Look up a registered view-transformation strategy by name.
pub fn voxel_projector(name: &str) -> Option<&'static dyn VoxelProjector> {
    PROJECTORS.iter().copied().find(|p| p.name() == name)
}

pub fn voxel_projector_names() -> Vec<&'static str> {
    PROJECTORS.iter().map(|p| p.name()).collect()
}
