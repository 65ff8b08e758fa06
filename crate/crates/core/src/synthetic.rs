//! Procedural road scenes: analytic elevation surfaces, ray-cast depth maps,
//! ground-truth elevation grids and deterministic feature maps, so the
//! pipelines and metrics run end to end without any dataset.

use crate::discretize::{ElevationMap, INVALID_TARGET};
use crate::error::{Error, Result};
use crate::geometry::{Rig, VoxelGrid};
use crate::tensor::DenseTensor;
use crate::viewtrans::{DepthBinSpec, FeatDims};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Bump,
    Pothole,
    Crack,
}

/// A smooth radial surface feature. Bumps raise the surface, potholes and
/// cracks depress it; cracks are anisotropic (narrow across x).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub amplitude: f64,
}

const CRACK_ANISO: f64 = 5.0;

impl Primitive {
    /// C1-smooth cosine profile; zero outside the support radius.
    fn eval(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let r = match self.kind {
            PrimitiveKind::Crack => ((CRACK_ANISO * dx).powi(2) + dy * dy).sqrt(),
            _ => (dx * dx + dy * dy).sqrt(),
        };
        if r >= self.radius {
            return 0.0;
        }
        0.5 * self.amplitude * (1.0 + (std::f64::consts::PI * r / self.radius).cos())
    }
}

/// A deterministic synthetic road scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub pitch: f64,
    pub roll: f64,
    pub primitives: Vec<Primitive>,
    pub x_extent: (f64, f64),
    pub y_extent: (f64, f64),
}

impl SceneSpec {
    /// Analytic surface elevation at a world point.
    pub fn elevation(&self, x: f64, y: f64) -> f64 {
        let mut e = y * self.pitch.tan() + x * self.roll.tan();
        for p in &self.primitives {
            e += p.eval(x, y);
        }
        e
    }

    /// Surface normal from the analytic gradient (central differences).
    pub fn normal(&self, x: f64, y: f64) -> [f64; 3] {
        let h = 1e-4;
        let gx = (self.elevation(x + h, y) - self.elevation(x - h, y)) / (2.0 * h);
        let gy = (self.elevation(x, y + h) - self.elevation(x, y - h)) / (2.0 * h);
        let norm = (gx * gx + gy * gy + 1.0).sqrt();
        [-gx / norm, -gy / norm, 1.0 / norm]
    }
}

/// Knobs for [`gen_scene`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenParams {
    pub bumps: usize,
    pub potholes: usize,
    pub cracks: usize,
    /// Maximum primitive amplitude magnitude, meters.
    pub max_amplitude: f64,
    pub pitch: f64,
    pub roll: f64,
    pub x_extent: (f64, f64),
    pub y_extent: (f64, f64),
    /// Elevation bound the scene must stay within.
    pub e_bound: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            bumps: 2,
            potholes: 1,
            cracks: 0,
            max_amplitude: 0.05,
            pitch: 0.0,
            roll: 0.0,
            x_extent: (-1.2, 1.1),
            y_extent: (1.8, 7.5),
            e_bound: 0.2,
        }
    }
}

/// Draw a deterministic scene. Primitive supports are kept disjoint so the
/// peak elevation magnitude never exceeds the largest amplitude.
pub fn gen_scene(seed: u64, params: &GenParams) -> Result<SceneSpec> {
    if params.max_amplitude <= 0.0 || params.max_amplitude > params.e_bound {
        return Err(Error::arg(format!(
            "gen_scene: max_amplitude {} outside (0, e_bound={}]",
            params.max_amplitude, params.e_bound
        )));
    }
    let tilt_span = params.pitch.tan().abs()
        * params.y_extent.0.abs().max(params.y_extent.1.abs())
        + params.roll.tan().abs() * params.x_extent.0.abs().max(params.x_extent.1.abs());
    if tilt_span + params.max_amplitude > params.e_bound {
        return Err(Error::arg("gen_scene: tilt plus amplitude exceeds e_bound"));
    }
    if params.x_extent.1 <= params.x_extent.0 || params.y_extent.1 <= params.y_extent.0 {
        return Err(Error::arg("gen_scene: degenerate extent"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut primitives: Vec<Primitive> = Vec::new();
    let kinds: Vec<PrimitiveKind> = std::iter::repeat(PrimitiveKind::Bump)
        .take(params.bumps)
        .chain(std::iter::repeat(PrimitiveKind::Pothole).take(params.potholes))
        .chain(std::iter::repeat(PrimitiveKind::Crack).take(params.cracks))
        .collect();
    for kind in kinds {
        let mut placed = false;
        for _ in 0..200 {
            let radius = rng.gen_range(0.35..0.8);
            let margin = 0.05;
            let cx = rng.gen_range(params.x_extent.0 + margin..params.x_extent.1 - margin);
            let cy = rng.gen_range(params.y_extent.0 + margin..params.y_extent.1 - margin);
            let amp_mag = rng.gen_range(0.4 * params.max_amplitude..params.max_amplitude);
            let amplitude = match kind {
                PrimitiveKind::Bump => amp_mag,
                _ => -amp_mag,
            };
            let overlaps = primitives.iter().any(|p| {
                let d = ((p.cx - cx).powi(2) + (p.cy - cy).powi(2)).sqrt();
                d < p.radius + radius
            });
            if overlaps {
                continue;
            }
            primitives.push(Primitive {
                kind,
                cx,
                cy,
                radius,
                amplitude,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::arg(
                "gen_scene: could not place disjoint primitives; reduce their count",
            ));
        }
    }
    Ok(SceneSpec {
        seed,
        pitch: params.pitch,
        roll: params.roll,
        primitives,
        x_extent: params.x_extent,
        y_extent: params.y_extent,
    })
}

/// Sample the analytic surface at voxel-column centers. `dropout` marks a
/// seeded random fraction of cells invalid, emulating sparse labels.
pub fn gt_elevation_map(
    scene: &SceneSpec,
    grid: &VoxelGrid,
    dropout: f64,
    seed: u64,
) -> Result<ElevationMap> {
    if grid.x_range.0 < scene.x_extent.0
        || grid.x_range.1 > scene.x_extent.1
        || grid.y_range.0 < scene.y_extent.0
        || grid.y_range.1 > scene.y_extent.1
    {
        return Err(Error::arg("gt_elevation_map: grid ROI outside scene extent"));
    }
    let mut map = ElevationMap::new(grid.nx, grid.ny);
    for ix in 0..grid.nx {
        for iy in 0..grid.ny {
            map.values[ix * grid.ny + iy] =
                scene.elevation(grid.x_center(ix), grid.y_center(iy)) as f32;
        }
    }
    if dropout > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
        for m in map.mask.iter_mut() {
            if rng.gen::<f64>() < dropout {
                *m = false;
            }
        }
    }
    Ok(map)
}

/// Ray-cast depth map: per-pixel camera-frame depth to the surface, with a
/// validity mask for rays that never hit.
pub struct DepthRender {
    /// `(h, w)` depths in meters.
    pub depth: DenseTensor,
    pub mask: Vec<bool>,
}

const MARCH_STEP: f64 = 0.02;
const MARCH_NEAR: f64 = 0.3;
const MARCH_FAR: f64 = 12.0;
const BISECT_TOL: f64 = 1e-4;

/// Camera-frame depth at which the pixel ray crosses the surface, or None.
fn cast_ray(scene: &SceneSpec, rig: &Rig, u: f64, v: f64) -> Option<f64> {
    let k = &rig.intrinsics;
    let dir_cam = [(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0];
    let origin = rig.extrinsics.camera_center();
    let r = &rig.extrinsics.rotation;
    // R^T * dir_cam
    let dir = [
        r[0] * dir_cam[0] + r[3] * dir_cam[1] + r[6] * dir_cam[2],
        r[1] * dir_cam[0] + r[4] * dir_cam[1] + r[7] * dir_cam[2],
        r[2] * dir_cam[0] + r[5] * dir_cam[1] + r[8] * dir_cam[2],
    ];
    let height_above = |s: f64| -> f64 {
        let x = origin[0] + s * dir[0];
        let y = origin[1] + s * dir[1];
        let z = origin[2] + s * dir[2];
        z - scene.elevation(x, y)
    };
    let mut s_prev = MARCH_NEAR;
    let mut f_prev = height_above(s_prev);
    if f_prev <= 0.0 {
        return None; // starts below the surface
    }
    let mut s = s_prev + MARCH_STEP;
    while s <= MARCH_FAR {
        let f = height_above(s);
        if f <= 0.0 {
            // bisection refinement
            let (mut lo, mut hi) = (s_prev, s);
            while hi - lo > BISECT_TOL {
                let mid = 0.5 * (lo + hi);
                if height_above(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        s_prev = s;
        f_prev = f;
        s += MARCH_STEP;
    }
    let _ = f_prev;
    None
}

/// Render a full-resolution depth map for `rig`.
pub fn render_depth(scene: &SceneSpec, rig: &Rig) -> DepthRender {
    let (w, h) = (rig.intrinsics.width, rig.intrinsics.height);
    let mut depth = DenseTensor::zeros(&[h, w]);
    let mut mask = vec![false; h * w];
    let rows: Vec<(Vec<f32>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut dr = vec![0.0f32; w];
            let mut mr = vec![false; w];
            for u in 0..w {
                if let Some(d) = cast_ray(scene, rig, u as f64, v as f64) {
                    dr[u] = d as f32;
                    mr[u] = true;
                }
            }
            (dr, mr)
        })
        .collect();
    for (v, (dr, mr)) in rows.into_iter().enumerate() {
        depth.data_mut()[v * w..(v + 1) * w].copy_from_slice(&dr);
        mask[v * w..(v + 1) * w].copy_from_slice(&mr);
    }
    DepthRender { depth, mask }
}

/// Block-average a depth map down to one feature scale.
pub fn downsample_depth(render: &DepthRender, stride: usize) -> DepthRender {
    let (h, w) = (render.depth.shape()[0], render.depth.shape()[1]);
    let (fh, fw) = (h / stride, w / stride);
    let mut depth = DenseTensor::zeros(&[fh, fw]);
    let mut mask = vec![false; fh * fw];
    for j in 0..fh {
        for i in 0..fw {
            let mut acc = 0.0f64;
            let mut n = 0usize;
            for dv in 0..stride {
                for du in 0..stride {
                    let idx = (j * stride + dv) * w + i * stride + du;
                    if render.mask[idx] {
                        acc += render.depth.data()[idx] as f64;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                depth.data_mut()[j * fw + i] = (acc / n as f64) as f32;
                mask[j * fw + i] = true;
            }
        }
    }
    DepthRender { depth, mask }
}

/// Nearest-bin class indices for depth CE supervision; invalid pixels get
/// the sentinel.
pub fn depth_to_targets(render: &DepthRender, dspec: &DepthBinSpec) -> Vec<i32> {
    render
        .depth
        .data()
        .iter()
        .zip(&render.mask)
        .map(|(&d, &ok)| {
            if !ok {
                INVALID_TARGET
            } else {
                dspec.nearest_bin(d as f64) as i32
            }
        })
        .collect()
}

/// Per-pixel depth-bin distributions from a rendered depth map.
///
/// `soft` spreads mass linearly over the two nearest bins (the injection
/// oracle); otherwise mass is one-hot at the nearest bin (matching the CE
/// targets). Invalid pixels carry all-zero rows.
pub fn depth_to_distribution(render: &DepthRender, dspec: &DepthBinSpec, soft: bool) -> DenseTensor {
    let (h, w) = (render.depth.shape()[0], render.depth.shape()[1]);
    let mut out = DenseTensor::zeros(&[h, w, dspec.c_d]);
    let data = out.data_mut();
    for px in 0..h * w {
        if !render.mask[px] {
            continue;
        }
        let d = render.depth.data()[px] as f64;
        if soft {
            let c = dspec.coord(d).clamp(0.0, dspec.c_d as f64 - 1.0);
            let k0 = (c.floor() as usize).min(dspec.c_d - 2);
            let f = c - k0 as f64;
            data[px * dspec.c_d + k0] = (1.0 - f) as f32;
            data[px * dspec.c_d + k0 + 1] = f as f32;
        } else {
            data[px * dspec.c_d + dspec.nearest_bin(d)] = 1.0;
        }
    }
    out
}

/// Default triangle-width multiplier for [`ray_depth_distribution`]: wide
/// enough that interpolation between feature rows keeps the surface covered.
pub const ORACLE_BRIDGE: f64 = 1.3;

/// Ray-exact depth-bin distributions at feature resolution: each feature
/// pixel casts a ray through its center and places a triangular
/// distribution at the exact surface depth. The triangle half-width adapts
/// to the depth step between neighboring feature rows (scaled by `bridge`)
/// so that bilinear interpolation between rows still covers the surface,
/// and never drops below one bin width. Misses produce all-zero rows.
pub fn ray_depth_distribution(
    scene: &SceneSpec,
    rig: &Rig,
    fd: FeatDims,
    dspec: &DepthBinSpec,
    bridge: f64,
) -> DenseTensor {
    let s = fd.stride as f64;
    let c_d = dspec.c_d;
    let mut out = DenseTensor::zeros(&[fd.h, fd.w, c_d]);
    let rows: Vec<Vec<f32>> = (0..fd.h)
        .into_par_iter()
        .map(|j| {
            let mut row = vec![0.0f32; fd.w * c_d];
            let v = (j as f64 + 0.5) * s - 0.5;
            for i in 0..fd.w {
                let u = (i as f64 + 0.5) * s - 0.5;
                let Some(d_c) = cast_ray(scene, rig, u, v) else {
                    continue;
                };
                let up = cast_ray(scene, rig, u, v - s);
                let dn = cast_ray(scene, rig, u, v + s);
                let mut step = 0.0f64;
                if let Some(d) = up {
                    step = step.max((d - d_c).abs());
                }
                if let Some(d) = dn {
                    step = step.max((d - d_c).abs());
                }
                let w = (bridge * step).max(dspec.bin_width());
                let cell = &mut row[i * c_d..(i + 1) * c_d];
                let mut total = 0.0f64;
                for k in 0..c_d {
                    let m = (1.0 - (dspec.center(k) - d_c).abs() / w).max(0.0);
                    cell[k] = m as f32;
                    total += m;
                }
                if total > 0.0 {
                    let inv = (1.0 / total) as f32;
                    cell.iter_mut().for_each(|x| *x *= inv);
                }
            }
            row
        })
        .collect();
    for (j, row) in rows.into_iter().enumerate() {
        out.data_mut()[j * fd.w * c_d..(j + 1) * fd.w * c_d].copy_from_slice(&row);
    }
    out
}

/// Block-pooled depth-bin distributions: per-pixel distributions at full
/// resolution averaged over each `stride x stride` block (valid pixels
/// only). Unlike distributing the block-mean depth, this keeps the depth
/// spread inside a block, which matters at grazing angles where depth
/// varies by several bins across a block.
pub fn pool_depth_distribution(
    full: &DepthRender,
    stride: usize,
    dspec: &DepthBinSpec,
    soft: bool,
) -> DenseTensor {
    let (h, w) = (full.depth.shape()[0], full.depth.shape()[1]);
    let (fh, fw) = (h / stride, w / stride);
    let c_d = dspec.c_d;
    let mut out = DenseTensor::zeros(&[fh, fw, c_d]);
    let data = out.data_mut();
    for j in 0..fh {
        for i in 0..fw {
            let row = &mut data[(j * fw + i) * c_d..(j * fw + i + 1) * c_d];
            let mut n = 0usize;
            for dv in 0..stride {
                for du in 0..stride {
                    let idx = (j * stride + dv) * w + i * stride + du;
                    if !full.mask[idx] {
                        continue;
                    }
                    n += 1;
                    let d = full.depth.data()[idx] as f64;
                    if soft {
                        let c = dspec.coord(d).clamp(0.0, c_d as f64 - 1.0);
                        let k0 = (c.floor() as usize).min(c_d - 2);
                        let f = c - k0 as f64;
                        row[k0] += (1.0 - f) as f32;
                        row[k0 + 1] += f as f32;
                    } else {
                        row[dspec.nearest_bin(d)] += 1.0;
                    }
                }
            }
            if n > 0 {
                let inv = 1.0 / n as f32;
                row.iter_mut().for_each(|x| *x *= inv);
            }
        }
    }
    out
}

// splitmix64; per-pixel noise must not depend on iteration order
fn hash_noise(seed: u64, idx: u64) -> f32 {
    let mut z = seed ^ idx.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    // map to [-1, 1)
    (z >> 11) as f32 / (1u64 << 52) as f32 - 1.0
}

/// Options for [`render_features`].
#[derive(Debug, Clone, Copy)]
pub struct FeatureOpts {
    pub noise_amp: f32,
    pub texture: bool,
}

impl Default for FeatureOpts {
    fn default() -> Self {
        FeatureOpts {
            noise_amp: 0.02,
            texture: true,
        }
    }
}

/// Deterministic feature map at one scale: channel 0 is lambertian shading
/// from the analytic normal; the rest are complementary sine/cosine texture
/// pairs keyed by the world point (stereo-consistent), plus seeded noise.
/// Miss pixels are zero.
pub fn render_features(
    scene: &SceneSpec,
    rig: &Rig,
    feat: FeatDims,
    c_i: usize,
    seed: u64,
    opts: FeatureOpts,
) -> DenseTensor {
    let light = {
        let l: [f64; 3] = [0.25, -0.15, 0.95];
        let n = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        [l[0] / n, l[1] / n, l[2] / n]
    };
    let mut out = DenseTensor::zeros(&[feat.h, feat.w, c_i]);
    let w = feat.w;
    let stride = feat.stride as f64;
    out.data_mut()
        .par_chunks_mut(w * c_i)
        .enumerate()
        .for_each(|(j, row)| {
            for i in 0..w {
                let u = (i as f64 + 0.5) * stride - 0.5;
                let v = (j as f64 + 0.5) * stride - 0.5;
                let Some(d) = cast_ray(scene, rig, u, v) else {
                    continue;
                };
                let k = &rig.intrinsics;
                let p_cam = [(u - k.cx) / k.fx * d, (v - k.cy) / k.fy * d, d];
                let p = rig.extrinsics.inverse_transform(p_cam);
                let n = scene.normal(p[0], p[1]);
                let shade = (n[0] * light[0] + n[1] * light[1] + n[2] * light[2]).max(0.0);
                for ch in 0..c_i {
                    let base = if ch == 0 {
                        shade as f32
                    } else if opts.texture {
                        // complementary pairs keep the channel sum constant
                        let pair = (ch - 1) / 2;
                        let sign = if (ch - 1) % 2 == 0 { 1.0 } else { -1.0 };
                        let freq = 1.5 + 0.9 * pair as f64;
                        let phase = (pair as f64) * 1.7;
                        let t = (2.0 * std::f64::consts::PI
                            * (p[0] * freq + p[1] * (freq * 0.63))
                            + phase)
                            .sin();
                        (0.5 + sign * 0.45 * t) as f32
                    } else {
                        0.5
                    };
                    let noise = opts.noise_amp
                        * hash_noise(seed, ((j * w + i) * c_i + ch) as u64);
                    row[i * c_i + ch] = base + noise;
                }
            }
        });
    out
}
