//! Minimal dense-tensor container and the numeric kernels shared by every
//! other module. Storage is always f32, row-major, flat `Vec<f32>`; shape
//! metadata lives alongside the buffer.

use crate::error::{Error, Result};
use rayon::prelude::*;

/// N-dimensional row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        DenseTensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::arg(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(DenseTensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        DenseTensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::arg(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Flat offset of a multi-index. Debug-checked.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, (&k, &n)) in idx.iter().zip(&self.shape).enumerate() {
            debug_assert!(k < n, "index {} out of range at axis {}", k, i);
            off = off * n + k;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> f32 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f32) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    pub fn map(mut self, f: impl Fn(f32) -> f32 + Sync) -> Self {
        self.data.iter_mut().for_each(|x| *x = f(*x));
        self
    }

    pub fn scale(self, s: f32) -> Self {
        self.map(move |x| x * s)
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.shape != other.shape {
            return Err(Error::arg(format!(
                "add: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Numerically stable softmax along `axis`; max-subtraction before exp.
pub fn softmax(t: &DenseTensor, axis: usize) -> Result<DenseTensor> {
    if axis >= t.rank() {
        return Err(Error::arg(format!(
            "softmax: axis {} out of range for rank {}",
            axis,
            t.rank()
        )));
    }
    let n = t.shape()[axis];
    let inner: usize = t.shape()[axis + 1..].iter().product();
    let outer: usize = t.shape()[..axis].iter().product();
    let mut out = DenseTensor::zeros(t.shape());
    let src = t.data();
    let dst = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut m = f32::NEG_INFINITY;
            for k in 0..n {
                m = m.max(src[base + k * inner]);
            }
            let mut sum = 0.0f64;
            for k in 0..n {
                let e = ((src[base + k * inner] - m) as f64).exp();
                dst[base + k * inner] = e as f32;
                sum += e;
            }
            let inv = (1.0 / sum) as f32;
            for k in 0..n {
                dst[base + k * inner] *= inv;
            }
        }
    }
    Ok(out)
}

/// Elementwise logistic function.
pub fn sigmoid(t: &DenseTensor) -> DenseTensor {
    t.clone().map(|x| 1.0 / (1.0 + (-x).exp()))
}

/// Mean and max over the channel axis of an `(N_x, N_y, N_z, C)` tensor.
pub fn channel_pool(t: &DenseTensor) -> Result<(DenseTensor, DenseTensor)> {
    if t.rank() != 4 {
        return Err(Error::arg(format!(
            "channel_pool: expected rank 4, got {}",
            t.rank()
        )));
    }
    let c = t.shape()[3];
    if c == 0 {
        return Err(Error::arg("channel_pool: C must be >= 1"));
    }
    let spatial: usize = t.shape()[..3].iter().product();
    let out_shape = [t.shape()[0], t.shape()[1], t.shape()[2], 1];
    let mut avg = DenseTensor::zeros(&out_shape);
    let mut max = DenseTensor::zeros(&out_shape);
    let src = t.data();
    for s in 0..spatial {
        let row = &src[s * c..(s + 1) * c];
        let mut acc = 0.0f64;
        let mut m = f32::NEG_INFINITY;
        for &v in row {
            acc += v as f64;
            m = m.max(v);
        }
        avg.data_mut()[s] = (acc / c as f64) as f32;
        max.data_mut()[s] = m;
    }
    Ok((avg, max))
}

/// Zero-padded stride-1 3D cross-correlation.
///
/// Input `(X, Y, Z, C_in)`, kernel `(C_out, C_in, k_z, k_y, k_x)`, padding
/// `(p_z, p_y, p_x)`. Spatial shape is preserved when padding is `(k-1)/2`
/// per axis. Parallel over output x-slabs; each cell writes only its slot.
pub fn conv3d(t: &DenseTensor, kernel: &DenseTensor, padding: (usize, usize, usize)) -> Result<DenseTensor> {
    conv3d_strided(t, kernel, padding, (1, 1, 1))
}

/// Zero-padded 3D cross-correlation with per-axis stride `(s_z, s_y, s_x)`.
pub fn conv3d_strided(
    t: &DenseTensor,
    kernel: &DenseTensor,
    padding: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> Result<DenseTensor> {
    if t.rank() != 4 {
        return Err(Error::arg(format!("conv3d: input rank {} != 4", t.rank())));
    }
    if kernel.rank() != 5 {
        return Err(Error::arg(format!("conv3d: kernel rank {} != 5", kernel.rank())));
    }
    let (nx, ny, nz, cin) = (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
    let (cout, kcin, kz, ky, kx) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
        kernel.shape()[4],
    );
    if kcin != cin {
        return Err(Error::arg(format!(
            "conv3d: kernel expects {} input channels, tensor has {}",
            kcin, cin
        )));
    }
    let (pz, py, px) = padding;
    let (sz, sy, sx) = stride;
    let out_dim = |n: usize, k: usize, p: usize, s: usize| -> Result<usize> {
        let span = n + 2 * p;
        if span < k {
            return Err(Error::arg("conv3d: kernel larger than padded input"));
        }
        Ok((span - k) / s + 1)
    };
    let oz = out_dim(nz, kz, pz, sz)?;
    let oy = out_dim(ny, ky, py, sy)?;
    let ox = out_dim(nx, kx, px, sx)?;

    let mut out = DenseTensor::zeros(&[ox, oy, oz, cout]);
    let src = t.data();
    let w = kernel.data();
    let slab = oy * oz * cout;
    out.data_mut()
        .par_chunks_mut(slab)
        .enumerate()
        .for_each(|(xo, chunk)| {
            for yo in 0..oy {
                for zo in 0..oz {
                    for co in 0..cout {
                        let mut acc = 0.0f64;
                        for dz in 0..kz {
                            let zi = (zo * sz + dz) as isize - pz as isize;
                            if zi < 0 || zi >= nz as isize {
                                continue;
                            }
                            for dy in 0..ky {
                                let yi = (yo * sy + dy) as isize - py as isize;
                                if yi < 0 || yi >= ny as isize {
                                    continue;
                                }
                                for dx in 0..kx {
                                    let xi = (xo * sx + dx) as isize - px as isize;
                                    if xi < 0 || xi >= nx as isize {
                                        continue;
                                    }
                                    let in_base =
                                        ((xi as usize * ny + yi as usize) * nz + zi as usize) * cin;
                                    let w_base = (((co * cin) * kz + dz) * ky + dy) * kx + dx;
                                    for ci in 0..cin {
                                        acc += src[in_base + ci] as f64
                                            * w[w_base + ci * kz * ky * kx] as f64;
                                    }
                                }
                            }
                        }
                        chunk[(yo * oz + zo) * cout + co] = acc as f32;
                    }
                }
            }
        });
    Ok(out)
}

/// Transposed 3D convolution (stride-2 upsampling counterpart of
/// [`conv3d_strided`]). `out_spatial` pins the target `(X, Y, Z)` size so odd
/// input dims round-trip through a stride-2 down/up pair.
pub fn conv_transpose3d(
    t: &DenseTensor,
    kernel: &DenseTensor,
    padding: (usize, usize, usize),
    stride: (usize, usize, usize),
    out_spatial: (usize, usize, usize),
) -> Result<DenseTensor> {
    if t.rank() != 4 || kernel.rank() != 5 {
        return Err(Error::arg("conv_transpose3d: bad ranks"));
    }
    let (nx, ny, nz, cin) = (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
    // transposed conv kernels are stored (C_in, C_out, k_z, k_y, k_x)
    let (kcin, cout, kz, ky, kx) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
        kernel.shape()[4],
    );
    if kcin != cin {
        return Err(Error::arg("conv_transpose3d: channel mismatch"));
    }
    let (pz, py, px) = padding;
    let (sz, sy, sx) = stride;
    let (ox, oy, oz) = out_spatial;
    let mut out = DenseTensor::zeros(&[ox, oy, oz, cout]);
    let src = t.data();
    let w = kernel.data();
    // gather form: out[o] = sum over input cells i and taps d with i*s + d - p == o
    let dst = out.data_mut();
    dst.par_chunks_mut(oy * oz * cout)
        .enumerate()
        .for_each(|(xo, chunk)| {
            for yo in 0..oy {
                for zo in 0..oz {
                    for co in 0..cout {
                        let mut acc = 0.0f64;
                        for dz in 0..kz {
                            let zn = zo as isize + pz as isize - dz as isize;
                            if zn < 0 || zn % sz as isize != 0 {
                                continue;
                            }
                            let zi = (zn / sz as isize) as usize;
                            if zi >= nz {
                                continue;
                            }
                            for dy in 0..ky {
                                let yn = yo as isize + py as isize - dy as isize;
                                if yn < 0 || yn % sy as isize != 0 {
                                    continue;
                                }
                                let yi = (yn / sy as isize) as usize;
                                if yi >= ny {
                                    continue;
                                }
                                for dx in 0..kx {
                                    let xn = xo as isize + px as isize - dx as isize;
                                    if xn < 0 || xn % sx as isize != 0 {
                                        continue;
                                    }
                                    let xi = (xn / sx as isize) as usize;
                                    if xi >= nx {
                                        continue;
                                    }
                                    let in_base = ((xi * ny + yi) * nz + zi) * cin;
                                    for ci in 0..cin {
                                        let w_idx =
                                            (((ci * cout + co) * kz + dz) * ky + dy) * kx + dx;
                                        acc += src[in_base + ci] as f64 * w[w_idx] as f64;
                                    }
                                }
                            }
                        }
                        chunk[(yo * oz + zo) * cout + co] = acc as f32;
                    }
                }
            }
        });
    Ok(out)
}

/// Zero-padded stride-1 2D cross-correlation over an `(X, Y, C_in)` map with
/// kernel `(C_out, C_in, k_y, k_x)`; used by the toy heads and BEV encoder.
pub fn conv2d(t: &DenseTensor, kernel: &DenseTensor, padding: (usize, usize)) -> Result<DenseTensor> {
    if t.rank() != 3 {
        return Err(Error::arg(format!("conv2d: input rank {} != 3", t.rank())));
    }
    if kernel.rank() != 4 {
        return Err(Error::arg("conv2d: kernel rank != 4"));
    }
    let (nx, ny, cin) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let (cout, kcin, ky, kx) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if kcin != cin {
        return Err(Error::arg(format!(
            "conv2d: kernel expects {} input channels, tensor has {}",
            kcin, cin
        )));
    }
    let t4 = t.clone().reshape(&[nx, ny, 1, cin])?;
    let k5 = kernel.clone().reshape(&[cout, cin, 1, ky, kx])?;
    let out = conv3d(&t4, &k5, (0, padding.0, padding.1))?;
    out.reshape(&[nx, ny, cout])
}

/// A delta (identity) conv3d kernel: `C` in/out channels, odd spatial size.
pub fn delta_kernel3d(c: usize, k: (usize, usize, usize)) -> DenseTensor {
    let (kz, ky, kx) = k;
    let mut w = DenseTensor::zeros(&[c, c, kz, ky, kx]);
    for ch in 0..c {
        w.set(&[ch, ch, kz / 2, ky / 2, kx / 2], 1.0);
    }
    w
}
