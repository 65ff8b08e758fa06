//! Stereo pipeline: group-wise correlation cost volume, spatial attention
//! enhancement (SAE), confidence attention generation (CAG), lightweight 3D
//! aggregation, and softmax-expectation regression over the vertical axis.

use crate::config::PipelineConfig;
use crate::discretize::ElevationMap;
use crate::error::{Error, Result};
use crate::geometry::Rig;
use crate::io::{load_json, load_tensor, save_json, save_tensor};
use crate::mono::{build_voxel_volume, resolve_scales, MonoInput, MonoWeights};
use crate::tensor::{
    channel_pool, conv3d, conv3d_strided, conv_transpose3d, delta_kernel3d, sigmoid, softmax,
    DenseTensor,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Group-wise correlation volume. Stored channels-last as
/// `(N_x, N_y, N_z, N_g)` so the conv3d kernels apply directly; the group
/// axis is the channel axis.
#[derive(Debug, Clone)]
pub struct CostVolume {
    pub values: DenseTensor,
}

impl CostVolume {
    pub fn n_g(&self) -> usize {
        self.values.shape()[3]
    }
}

/// Per-BEV-cell confidence in (0, 1), with the scale/offset parameters that
/// produced it.
#[derive(Debug, Clone)]
pub struct ConfidenceField {
    /// `(N_x, N_y)` values.
    pub values: DenseTensor,
    /// Per-cell elevation variance U, kept in f64 for exact inspection.
    pub variance: Vec<f64>,
    pub s: f64,
    pub epsilon: f64,
}

/// Group-wise correlation: mean of elementwise products within each channel
/// group, per voxel.
pub fn build_cost_volume(b_l: &DenseTensor, b_r: &DenseTensor, n_g: usize) -> Result<CostVolume> {
    if b_l.shape() != b_r.shape() {
        return Err(Error::arg(format!(
            "cost volume: shape mismatch {:?} vs {:?}",
            b_l.shape(),
            b_r.shape()
        )));
    }
    if b_l.rank() != 4 {
        return Err(Error::arg("cost volume: expected rank-4 (N_x, N_y, N_z, N_c)"));
    }
    let n_c = b_l.shape()[3];
    if n_g == 0 || n_c % n_g != 0 {
        return Err(Error::arg(format!(
            "cost volume: N_g = {} must divide N_c = {}",
            n_g, n_c
        )));
    }
    let g = n_c / n_g;
    let spatial: usize = b_l.shape()[..3].iter().product();
    let mut out = DenseTensor::zeros(&[b_l.shape()[0], b_l.shape()[1], b_l.shape()[2], n_g]);
    let (l, r) = (b_l.data(), b_r.data());
    let dst = out.data_mut();
    for cell in 0..spatial {
        for grp in 0..n_g {
            let mut acc = 0.0f64;
            for c in 0..g {
                let idx = cell * n_c + grp * g + c;
                acc += l[idx] as f64 * r[idx] as f64;
            }
            dst[cell * n_g + grp] = (acc / g as f64) as f32;
        }
    }
    Ok(CostVolume { values: out })
}

/// SAE attention field: sigmoid of a conv3d over the concatenated avg/max
/// channel pools of the left voxel features. Kernel `(1, 2, k_z, k_y, k_x)`.
pub fn spatial_attention(b_l: &DenseTensor, conv_w: &DenseTensor) -> Result<DenseTensor> {
    if conv_w.rank() != 5 || conv_w.shape()[0] != 1 || conv_w.shape()[1] != 2 {
        return Err(Error::arg(format!(
            "spatial_attention: kernel shape {:?}, expected (1, 2, k_z, k_y, k_x)",
            conv_w.shape()
        )));
    }
    let (avg, max) = channel_pool(b_l)?;
    let pooled = crate::viewtrans::fuse_multiscale(&[avg, max], crate::viewtrans::FusionMode::Concat)?;
    let (kz, ky, kx) = (conv_w.shape()[2], conv_w.shape()[3], conv_w.shape()[4]);
    let logits = conv3d(&pooled, conv_w, (kz / 2, ky / 2, kx / 2))?;
    Ok(sigmoid(&logits))
}

/// Enhanced volume: the attention field scales every group channel.
pub fn apply_sae(v: &CostVolume, a_s: &DenseTensor) -> Result<CostVolume> {
    if a_s.rank() != 4
        || a_s.shape()[..3] != v.values.shape()[..3]
        || a_s.shape()[3] != 1
    {
        return Err(Error::arg(format!(
            "apply_sae: attention shape {:?} does not match volume {:?}",
            a_s.shape(),
            v.values.shape()
        )));
    }
    let n_g = v.n_g();
    let mut out = v.values.clone();
    let att = a_s.data();
    for (cell, chunk) in out.data_mut().chunks_mut(n_g).enumerate() {
        for x in chunk.iter_mut() {
            *x *= att[cell];
        }
    }
    Ok(CostVolume { values: out })
}

/// Per-BEV-cell elevation distribution: mean over groups, softmax over N_z.
pub fn elevation_distribution(v: &CostVolume) -> Result<DenseTensor> {
    let s = v.values.shape().to_vec();
    let (nx, ny, nz, n_g) = (s[0], s[1], s[2], s[3]);
    let mut mean = DenseTensor::zeros(&[nx, ny, nz]);
    let src = v.values.data();
    for cell in 0..nx * ny * nz {
        let mut acc = 0.0f64;
        for g in 0..n_g {
            acc += src[cell * n_g + g] as f64;
        }
        mean.data_mut()[cell] = (acc / n_g as f64) as f32;
    }
    softmax(&mean, 2)
}

/// CAG: variance of the per-cell elevation distribution mapped through
/// `sigmoid(epsilon + s * U)`.
pub fn confidence_attention(
    v_init: &CostVolume,
    z_centers: &[f64],
    s: f64,
    epsilon: f64,
) -> Result<ConfidenceField> {
    let shape = v_init.values.shape().to_vec();
    let (nx, ny, nz) = (shape[0], shape[1], shape[2]);
    if z_centers.len() != nz {
        return Err(Error::arg(format!(
            "confidence_attention: {} z centers for N_z = {}",
            z_centers.len(),
            nz
        )));
    }
    let p = elevation_distribution(v_init)?;
    let mut out = DenseTensor::zeros(&[nx, ny]);
    let mut variance = vec![0.0f64; nx * ny];
    let probs = p.data();
    for cell in 0..nx * ny {
        let row = &probs[cell * nz..(cell + 1) * nz];
        let mut d = 0.0f64;
        for (j, &pj) in row.iter().enumerate() {
            d += z_centers[j] * pj as f64;
        }
        let mut u = 0.0f64;
        for (j, &pj) in row.iter().enumerate() {
            u += (z_centers[j] - d).powi(2) * pj as f64;
        }
        let a = 1.0 / (1.0 + (-(epsilon + s * u)).exp());
        variance[cell] = u;
        out.data_mut()[cell] = a as f32;
    }
    Ok(ConfidenceField {
        values: out,
        variance,
        s,
        epsilon,
    })
}

/// Attention volume: confidence scales every group and z slot of its cell.
pub fn apply_cag(v_e: &CostVolume, a_c: &ConfidenceField) -> Result<CostVolume> {
    let shape = v_e.values.shape().to_vec();
    let (nx, ny, nz, n_g) = (shape[0], shape[1], shape[2], shape[3]);
    if a_c.values.shape() != [nx, ny] {
        return Err(Error::arg(format!(
            "apply_cag: confidence shape {:?} does not match volume {:?}",
            a_c.values.shape(),
            v_e.values.shape()
        )));
    }
    let mut out = v_e.values.clone();
    let att = a_c.values.data();
    let per_cell = nz * n_g;
    for (cell, chunk) in out.data_mut().chunks_mut(per_cell).enumerate() {
        for x in chunk.iter_mut() {
            *x *= att[cell];
        }
    }
    Ok(CostVolume { values: out })
}

/// Aggregation weights: two initial 3x3x3 convs collapsing the groups to one
/// channel, plus one hourglass (stride-2 conv, bottleneck conv,
/// transposed-conv upsample) added back as a residual.
#[derive(Debug, Clone)]
pub struct AggWeights {
    /// `(C_a, N_g, 3, 3, 3)`.
    pub conv1: DenseTensor,
    /// `(1, C_a, 3, 3, 3)`.
    pub conv2: DenseTensor,
    /// `(C_h, 1, 3, 3, 3)`, stride 2.
    pub hg_down: DenseTensor,
    /// `(C_h, C_h, 3, 3, 3)`.
    pub hg_mid: DenseTensor,
    /// `(C_h, 1, 3, 3, 3)` transposed, stride 2.
    pub hg_up: DenseTensor,
}

impl AggWeights {
    pub fn zeros(n_g: usize, c_a: usize, c_h: usize) -> Self {
        AggWeights {
            conv1: DenseTensor::zeros(&[c_a, n_g, 3, 3, 3]),
            conv2: DenseTensor::zeros(&[1, c_a, 3, 3, 3]),
            hg_down: DenseTensor::zeros(&[c_h, 1, 3, 3, 3]),
            hg_mid: DenseTensor::zeros(&[c_h, c_h, 3, 3, 3]),
            hg_up: DenseTensor::zeros(&[c_h, 1, 3, 3, 3]),
        }
    }

    /// Identity path for a single-group volume: delta convs, zero hourglass.
    pub fn identity() -> Self {
        let mut w = Self::zeros(1, 1, 1);
        w.conv1 = delta_kernel3d(1, (3, 3, 3));
        w.conv2 = delta_kernel3d(1, (3, 3, 3));
        w
    }
}

/// Aggregate the attention volume to a single-channel `(N_x, N_y, N_z)`
/// volume of regression logits.
pub fn aggregate(v_a: &CostVolume, w: &AggWeights) -> Result<DenseTensor> {
    let x1 = conv3d(&v_a.values, &w.conv1, (1, 1, 1)).map_err(|e| e.in_stage("agg_conv1"))?;
    let x2 = conv3d(&x1, &w.conv2, (1, 1, 1)).map_err(|e| e.in_stage("agg_conv2"))?;
    let spatial = (x2.shape()[0], x2.shape()[1], x2.shape()[2]);
    let down = conv3d_strided(&x2, &w.hg_down, (1, 1, 1), (2, 2, 2))
        .map_err(|e| e.in_stage("agg_hourglass"))?;
    let mid = conv3d(&down, &w.hg_mid, (1, 1, 1)).map_err(|e| e.in_stage("agg_hourglass"))?;
    // hg_up is stored (C_h, 1, ...) = (C_in, C_out, ...) for the transpose
    let up = conv_transpose3d(&mid, &w.hg_up, (1, 1, 1), (2, 2, 2), spatial)
        .map_err(|e| e.in_stage("agg_hourglass"))?;
    let y = x2.add(&up)?;
    let s = y.shape().to_vec();
    y.reshape(&[s[0], s[1], s[2]])
}

/// Softmax over the vertical axis, then expectation over the z centers.
pub fn regress_disparity(volume: &DenseTensor, z_centers: &[f64]) -> Result<ElevationMap> {
    if volume.rank() != 3 {
        return Err(Error::arg("regress_disparity: expected rank-3 (N_x, N_y, N_z)"));
    }
    let (nx, ny, nz) = (volume.shape()[0], volume.shape()[1], volume.shape()[2]);
    if z_centers.len() != nz {
        return Err(Error::arg(format!(
            "regress_disparity: {} z centers for N_z = {}",
            z_centers.len(),
            nz
        )));
    }
    for w in z_centers.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::arg("regress_disparity: z centers must be strictly increasing"));
        }
    }
    let p = softmax(volume, 2)?;
    let mut map = ElevationMap::new(nx, ny);
    for cell in 0..nx * ny {
        let row = &p.data()[cell * nz..(cell + 1) * nz];
        let mut e = 0.0f64;
        for (j, &pj) in row.iter().enumerate() {
            e += z_centers[j] * pj as f64;
        }
        map.values[cell] = e as f32;
    }
    Ok(map)
}

/// Stereo-specific weights: the SAE conv kernel, the CAG parameters, and the
/// aggregation stack.
#[derive(Debug, Clone)]
pub struct StereoWeights {
    /// `(1, 2, 1, 7, 7)` by default.
    pub sae_conv: DenseTensor,
    pub s: f64,
    pub epsilon: f64,
    pub agg: AggWeights,
}

/// Calibration constants for [`StereoWeights::reference`]: the binomial
/// smoothing applied twice along z, and the logit gain. The gain compensates
/// the ~0.25x scale that the default SAE (A^s = 0.5) and CAG (A^c near 0.5)
/// fields apply ahead of the softmax.
const REF_SMOOTH: [f64; 3] = [0.25, 0.5, 0.25];
const REF_STEREO_KAPPA: f64 = 60.0;

impl StereoWeights {
    pub fn zeros(n_g: usize) -> Self {
        StereoWeights {
            sae_conv: DenseTensor::zeros(&[1, 2, 1, 7, 7]),
            s: -1.0,
            epsilon: 0.0,
            agg: AggWeights::zeros(n_g, 1, 1),
        }
    }

    /// Analytic weights for untrained inference: zero SAE conv (A^s = 0.5
    /// everywhere), default CAG parameters, and an aggregation stack that
    /// averages the groups and smooths twice along z with a binomial kernel
    /// before the gain.
    pub fn reference(cfg: &PipelineConfig) -> Result<Self> {
        let n_g = cfg.n_g;
        let mut w = Self::zeros(n_g);
        for g in 0..n_g {
            for (dz, &sm) in REF_SMOOTH.iter().enumerate() {
                w.agg.conv1.set(&[0, g, dz, 1, 1], (sm / n_g as f64) as f32);
            }
        }
        for (dz, &sm) in REF_SMOOTH.iter().enumerate() {
            w.agg.conv2.set(&[0, 0, dz, 1, 1], (REF_STEREO_KAPPA * sm) as f32);
        }
        Ok(w)
    }
}

/// Which attention stages run; both on by default. Turning one off is the
/// no-attention ablation baseline.
#[derive(Debug, Clone, Copy)]
pub struct StereoOpts {
    pub use_sae: bool,
    pub use_cag: bool,
}

impl Default for StereoOpts {
    fn default() -> Self {
        StereoOpts {
            use_sae: true,
            use_cag: true,
        }
    }
}

pub struct StereoOutput {
    pub elevation: ElevationMap,
    pub a_s: DenseTensor,
    pub a_c: ConfidenceField,
    pub v_init: CostVolume,
    pub aggregated: DenseTensor,
    /// Per-scale left depth distributions, for supervision.
    pub d_pre_left: Vec<DenseTensor>,
}

/// Full stereo forward pass. Feature extraction and projection reuse the
/// mono path per camera; confidence attention consumes the initial volume,
/// not the enhanced one.
#[allow(clippy::too_many_arguments)]
pub fn run_stereo(
    left: &MonoInput,
    right: &MonoInput,
    mono_w: &MonoWeights,
    stereo_w: &StereoWeights,
    rig_left: &Rig,
    rig_right: &Rig,
    cfg: &PipelineConfig,
    opts: StereoOpts,
) -> Result<StereoOutput> {
    let grid = cfg.voxel_grid()?;
    let (feats_l, depths_l) = resolve_scales(left, mono_w, cfg).map_err(|e| e.in_stage("left"))?;
    let (feats_r, depths_r) = resolve_scales(right, mono_w, cfg).map_err(|e| e.in_stage("right"))?;
    let b_l = build_voxel_volume(&feats_l, &depths_l, rig_left, cfg).map_err(|e| e.in_stage("left"))?;
    let b_r = build_voxel_volume(&feats_r, &depths_r, rig_right, cfg).map_err(|e| e.in_stage("right"))?;
    let v_init = build_cost_volume(&b_l, &b_r, cfg.n_g).map_err(|e| e.in_stage("cost_volume"))?;
    let a_s = spatial_attention(&b_l, &stereo_w.sae_conv).map_err(|e| e.in_stage("sae"))?;
    let v_e = if opts.use_sae {
        apply_sae(&v_init, &a_s).map_err(|e| e.in_stage("sae"))?
    } else {
        v_init.clone()
    };
    let a_c = confidence_attention(&v_init, &grid.z_centers(), stereo_w.s, stereo_w.epsilon)
        .map_err(|e| e.in_stage("cag"))?;
    let v_a = if opts.use_cag {
        apply_cag(&v_e, &a_c).map_err(|e| e.in_stage("cag"))?
    } else {
        v_e
    };
    let aggregated = aggregate(&v_a, &stereo_w.agg).map_err(|e| e.in_stage("aggregation"))?;
    let elevation =
        regress_disparity(&aggregated, &grid.z_centers()).map_err(|e| e.in_stage("regression"))?;
    Ok(StereoOutput {
        elevation,
        a_s,
        a_c,
        v_init,
        aggregated,
        d_pre_left: depths_l,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct StereoParams {
    s: f64,
    epsilon: f64,
}

/// Save stereo weights as tensor files plus a parameter JSON.
pub fn save_stereo_weights(dir: &Path, w: &StereoWeights) -> Result<()> {
    save_tensor(dir, "stereo_sae_conv", &w.sae_conv)?;
    save_tensor(dir, "stereo_agg_conv1", &w.agg.conv1)?;
    save_tensor(dir, "stereo_agg_conv2", &w.agg.conv2)?;
    save_tensor(dir, "stereo_hg_down", &w.agg.hg_down)?;
    save_tensor(dir, "stereo_hg_mid", &w.agg.hg_mid)?;
    save_tensor(dir, "stereo_hg_up", &w.agg.hg_up)?;
    save_json(
        &dir.join("stereo_params.json"),
        &StereoParams {
            s: w.s,
            epsilon: w.epsilon,
        },
    )
}

/// Load stereo weights saved by [`save_stereo_weights`].
pub fn load_stereo_weights(dir: &Path) -> Result<StereoWeights> {
    let params: StereoParams = load_json(&dir.join("stereo_params.json"))?;
    Ok(StereoWeights {
        sae_conv: load_tensor(&dir.join("stereo_sae_conv.json"))?,
        s: params.s,
        epsilon: params.epsilon,
        agg: AggWeights {
            conv1: load_tensor(&dir.join("stereo_agg_conv1.json"))?,
            conv2: load_tensor(&dir.join("stereo_agg_conv2.json"))?,
            hg_down: load_tensor(&dir.join("stereo_hg_down.json"))?,
            hg_mid: load_tensor(&dir.join("stereo_hg_mid.json"))?,
            hg_up: load_tensor(&dir.join("stereo_hg_up.json"))?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pseudo(shape: &[usize], salt: u64) -> DenseTensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| {
                let h = (i as u64)
                    .wrapping_mul(0x9e3779b97f4a7c15)
                    .wrapping_add(salt)
                    .wrapping_mul(0xbf58476d1ce4e5b9);
                ((h >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
            })
            .collect();
        DenseTensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn cost_volume_hand_case() {
        let l = DenseTensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let r = DenseTensor::from_vec(&[1, 1, 1, 2], vec![3.0, 4.0]).unwrap();
        let v = build_cost_volume(&l, &r, 1).unwrap();
        assert_eq!(v.values.data(), &[5.5]);
    }

    #[test]
    fn cost_volume_zero_right() {
        let l = pseudo(&[2, 2, 2, 8], 1);
        let r = DenseTensor::zeros(&[2, 2, 2, 8]);
        let v = build_cost_volume(&l, &r, 4).unwrap();
        assert!(v.values.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cost_volume_matches_scalar_oracle() {
        let l = pseudo(&[2, 2, 2, 8], 2);
        let r = pseudo(&[2, 2, 2, 8], 3);
        for n_g in [1usize, 2, 8] {
            let v = build_cost_volume(&l, &r, n_g).unwrap();
            let g = 8 / n_g;
            for cell in 0..8 {
                for grp in 0..n_g {
                    let mut acc = 0.0f64;
                    for c in 0..g {
                        acc += l.data()[cell * 8 + grp * g + c] as f64
                            * r.data()[cell * 8 + grp * g + c] as f64;
                    }
                    let expect = (acc / g as f64) as f32;
                    assert!((v.values.data()[cell * n_g + grp] - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn cost_volume_self_correlation_mean_square() {
        let l = pseudo(&[2, 2, 2, 8], 4);
        let v = build_cost_volume(&l, &l, 2).unwrap();
        for cell in 0..8 {
            for grp in 0..2 {
                let mut acc = 0.0f32;
                for c in 0..4 {
                    let x = l.data()[cell * 8 + grp * 4 + c];
                    acc += x * x;
                }
                assert!((v.values.data()[cell * 2 + grp] - acc / 4.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cost_volume_divisibility_error() {
        let l = DenseTensor::zeros(&[1, 1, 1, 8]);
        assert!(build_cost_volume(&l, &l, 3).is_err());
    }

    #[test]
    fn sae_zero_weights_half() {
        let b = pseudo(&[3, 3, 2, 4], 5);
        let w = DenseTensor::zeros(&[1, 2, 1, 7, 7]);
        let a = spatial_attention(&b, &w).unwrap();
        assert_eq!(a.shape(), &[3, 3, 2, 1]);
        for &x in a.data() {
            assert!((x - 0.5).abs() < 1e-7);
        }
        let v = build_cost_volume(&b, &b, 4).unwrap();
        let ve = apply_sae(&v, &a).unwrap();
        assert!(ve.values.max_abs_diff(&v.values.clone().scale(0.5)) < 1e-7);
    }

    #[test]
    fn sae_in_open_interval() {
        let b = pseudo(&[3, 3, 2, 4], 6);
        let w = pseudo(&[1, 2, 1, 7, 7], 7);
        let a = spatial_attention(&b, &w).unwrap();
        for &x in a.data() {
            assert!(x > 0.0 && x < 1.0);
        }
    }

    #[test]
    fn sae_small_variant_matches_oracle() {
        // 1x3x3 spatial kernel on a 3x3x1 slab vs a scalar-loop conv
        let b = pseudo(&[3, 3, 1, 2], 8);
        let w = pseudo(&[1, 2, 1, 3, 3], 9);
        let a = spatial_attention(&b, &w).unwrap();
        let (avg, max) = channel_pool(&b).unwrap();
        for xo in 0..3 {
            for yo in 0..3 {
                let mut acc = 0.0f64;
                for dy in 0..3usize {
                    for dx in 0..3usize {
                        let xi = xo as isize + dx as isize - 1;
                        let yi = yo as isize + dy as isize - 1;
                        if !(0..3).contains(&xi) || !(0..3).contains(&yi) {
                            continue;
                        }
                        let cell = (xi as usize * 3 + yi as usize) as usize;
                        // kernel layout (C_out, C_in, k_z, k_y, k_x); x is
                        // the input's first axis, matching conv3d
                        acc += avg.data()[cell] as f64 * w.at(&[0, 0, 0, dy, dx]) as f64;
                        acc += max.data()[cell] as f64 * w.at(&[0, 1, 0, dy, dx]) as f64;
                    }
                }
                let expect = 1.0 / (1.0 + (-acc).exp());
                let got = a.at(&[xo, yo, 0, 0]) as f64;
                assert!((got - expect).abs() < 1e-5, "({}, {}): {} vs {}", xo, yo, got, expect);
            }
        }
    }

    #[test]
    fn apply_sae_identity_and_oracle() {
        let b = pseudo(&[2, 2, 2, 4], 10);
        let v = build_cost_volume(&b, &b, 2).unwrap();
        let ones = DenseTensor::filled(&[2, 2, 2, 1], 1.0);
        assert_eq!(apply_sae(&v, &ones).unwrap().values, v.values);
        let a = pseudo(&[2, 2, 2, 1], 11).map(|x| 0.5 + 0.4 * x);
        let ve = apply_sae(&v, &a).unwrap();
        for cell in 0..8 {
            for g in 0..2 {
                let expect = v.values.data()[cell * 2 + g] * a.data()[cell];
                assert!((ve.values.data()[cell * 2 + g] - expect).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn confidence_one_hot_zero_variance() {
        // strongly peaked logits approximate a one-hot distribution
        let mut vol = DenseTensor::zeros(&[1, 1, 4, 1]);
        vol.set(&[0, 0, 2, 0], 80.0);
        let v = CostVolume { values: vol };
        let z = [-0.15, -0.05, 0.05, 0.15];
        let c = confidence_attention(&v, &z, -1.0, 0.0).unwrap();
        // U = 0 -> A^c = sigmoid(0) = 0.5
        assert!((c.values.data()[0] - 0.5).abs() < 1e-6);
        let c2 = confidence_attention(&v, &z, -1.0, 1.0).unwrap();
        let expect = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((c2.values.data()[0] as f64 - expect).abs() < 1e-6);
    }

    #[test]
    fn confidence_hand_case_two_slots() {
        // uniform cost over z = (-0.05, 0.05): D = 0, U = 0.0025
        let v = CostVolume {
            values: DenseTensor::zeros(&[1, 1, 2, 1]),
        };
        let c = confidence_attention(&v, &[-0.05, 0.05], -1.0, 0.0).unwrap();
        assert!((c.variance[0] - 0.0025).abs() < 1e-9);
        let expect = 1.0 / (1.0 + (0.0025f64).exp());
        assert!((c.values.data()[0] as f64 - expect).abs() < 1e-6);
    }

    #[test]
    fn confidence_constant_volume_constant_field() {
        let v = CostVolume {
            values: DenseTensor::filled(&[3, 2, 4, 2], 0.7),
        };
        let z = [-0.15, -0.05, 0.05, 0.15];
        let c = confidence_attention(&v, &z, -1.0, 0.0).unwrap();
        let first = c.values.data()[0];
        for &x in c.values.data() {
            assert_eq!(x, first);
            assert!(x > 0.0 && x < 1.0);
        }
    }

    #[test]
    fn elevation_distribution_normalized() {
        let b = pseudo(&[2, 3, 4, 4], 12);
        let v = build_cost_volume(&b, &b, 2).unwrap();
        let p = elevation_distribution(&v).unwrap();
        for cell in 0..6 {
            let s: f32 = p.data()[cell * 4..(cell + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn apply_cag_identity_half() {
        let b = pseudo(&[2, 2, 2, 4], 13);
        let v = build_cost_volume(&b, &b, 2).unwrap();
        let ones = ConfidenceField {
            values: DenseTensor::filled(&[2, 2], 1.0),
            variance: vec![0.0; 4],
            s: -1.0,
            epsilon: 0.0,
        };
        assert_eq!(apply_cag(&v, &ones).unwrap().values, v.values);
        let half = ConfidenceField {
            values: DenseTensor::filled(&[2, 2], 0.5),
            variance: vec![0.0; 4],
            s: -1.0,
            epsilon: 0.0,
        };
        let out = apply_cag(&v, &half).unwrap();
        assert!(out.values.max_abs_diff(&v.values.clone().scale(0.5)) < 1e-7);
    }

    #[test]
    fn sae_cag_commute() {
        let b = pseudo(&[2, 2, 2, 4], 14);
        let v = build_cost_volume(&b, &b, 2).unwrap();
        let a_s = pseudo(&[2, 2, 2, 1], 15).map(|x| 0.5 + 0.3 * x);
        let a_c = ConfidenceField {
            values: pseudo(&[2, 2], 16).map(|x| 0.5 + 0.3 * x),
            variance: vec![0.0; 4],
            s: -1.0,
            epsilon: 0.0,
        };
        let ab = apply_cag(&apply_sae(&v, &a_s).unwrap(), &a_c).unwrap();
        let ba = apply_sae(&apply_cag(&v, &a_c).unwrap(), &a_s).unwrap();
        assert!(ab.values.max_abs_diff(&ba.values) < 1e-6);
    }

    #[test]
    fn aggregate_identity_path() {
        let v = CostVolume {
            values: pseudo(&[4, 4, 4, 1], 17),
        };
        let out = aggregate(&v, &AggWeights::identity()).unwrap();
        assert_eq!(out.shape(), &[4, 4, 4]);
        let flat = v.values.clone().reshape(&[4, 4, 4]).unwrap();
        assert!(out.max_abs_diff(&flat) < 1e-6);
    }

    #[test]
    fn aggregate_zero_weights_zero() {
        let v = CostVolume {
            values: pseudo(&[3, 3, 4, 2], 18),
        };
        let out = aggregate(&v, &AggWeights::zeros(2, 2, 2)).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn aggregate_one_layer_matches_conv_oracle() {
        // delta second conv and zero hourglass reduce aggregate to conv1
        let v = CostVolume {
            values: pseudo(&[3, 3, 3, 1], 19),
        };
        let mut w = AggWeights::zeros(1, 1, 1);
        w.conv1 = pseudo(&[1, 1, 3, 3, 3], 20);
        w.conv2 = delta_kernel3d(1, (3, 3, 3));
        let out = aggregate(&v, &w).unwrap();
        let direct = conv3d(&v.values, &w.conv1, (1, 1, 1)).unwrap();
        assert!(out.max_abs_diff(&direct.reshape(&[3, 3, 3]).unwrap()) < 1e-6);
    }

    #[test]
    fn regress_disparity_cases() {
        let z = [-0.15, -0.05, 0.05, 0.15];
        // one-hot via saturated logits
        for j in 0..4 {
            let mut v = DenseTensor::zeros(&[1, 1, 4]);
            v.set(&[0, 0, j], 100.0);
            let m = regress_disparity(&v, &z).unwrap();
            assert!((m.values[0] as f64 - z[j]).abs() < 1e-6);
        }
        // uniform over symmetric centers
        let m = regress_disparity(&DenseTensor::zeros(&[1, 1, 4]), &z).unwrap();
        assert!(m.values[0].abs() < 1e-7);
        // hand case
        let v = DenseTensor::from_vec(&[1, 1, 2], vec![0.0, 3.0f32.ln()]).unwrap();
        let m = regress_disparity(&v, &[-0.05, 0.05]).unwrap();
        assert!((m.values[0] - 0.025).abs() < 1e-7);
        // non-monotonic centers rejected
        assert!(regress_disparity(&DenseTensor::zeros(&[1, 1, 2]), &[0.1, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn confidence_variance_nonnegative(vals in proptest::collection::vec(-2.0f32..2.0, 16)) {
            let v = CostVolume { values: DenseTensor::from_vec(&[1, 2, 4, 2], vals).unwrap() };
            let z = [-0.15, -0.05, 0.05, 0.15];
            // sigmoid(-U) <= 0.5 iff U >= 0
            let c = confidence_attention(&v, &z, -1.0, 0.0).unwrap();
            for &x in c.values.data() {
                prop_assert!(x <= 0.5 + 1e-7);
                prop_assert!(x > 0.0);
            }
        }

        #[test]
        fn disparity_within_z_range(vals in proptest::collection::vec(-5.0f32..5.0, 8)) {
            let v = DenseTensor::from_vec(&[1, 2, 4], vals).unwrap();
            let z = [-0.15, -0.05, 0.05, 0.15];
            let m = regress_disparity(&v, &z).unwrap();
            for &e in &m.values {
                prop_assert!((-0.15..=0.15).contains(&(e as f64)));
            }
        }
    }
}
