//! File formats: tensor files (JSON manifest + little-endian f32 blob),
//! 16-bit PGM previews, the LUT dump, and JSON helpers for rigs, scenes,
//! configs, and metrics.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;
use crate::viewtrans::{DepthBinSpec, FeatDims, ProjectionLUT};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Tensor manifest: shape metadata plus the name of the sidecar blob file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorManifest {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub blob: String,
}

fn fmt_err(what: &str, e: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {}", what, e))
}

/// Write `t` as `<dir>/<name>.json` + `<dir>/<name>.bin` (little-endian f32).
pub fn save_tensor(dir: &Path, name: &str, t: &DenseTensor) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let manifest = TensorManifest {
        name: name.to_string(),
        dtype: "f32".to_string(),
        shape: t.shape().to_vec(),
        blob: format!("{}.bin", name),
    };
    let json_path = dir.join(format!("{}.json", name));
    fs::write(
        &json_path,
        serde_json::to_string_pretty(&manifest).map_err(|e| fmt_err("tensor manifest", e))?,
    )?;
    let mut blob = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(&manifest.blob), blob)?;
    Ok(json_path)
}

/// Read a tensor from its manifest path; the blob is resolved next to it.
pub fn load_tensor(manifest_path: &Path) -> Result<DenseTensor> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: TensorManifest =
        serde_json::from_str(&text).map_err(|e| fmt_err("tensor manifest", e))?;
    if manifest.dtype != "f32" {
        return Err(Error::Format(format!(
            "tensor {}: unsupported dtype {}",
            manifest.name, manifest.dtype
        )));
    }
    let blob_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let bytes = fs::read(&blob_path)?;
    let n: usize = manifest.shape.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::Format(format!(
            "tensor {}: blob has {} bytes, shape {:?} needs {}",
            manifest.name,
            bytes.len(),
            manifest.shape,
            n * 4
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    DenseTensor::from_vec(&manifest.shape, data)
}

/// Save any serde-serializable value as pretty JSON.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| fmt_err("json", e))?;
    fs::write(path, text)?;
    Ok(())
}

/// Load a serde-deserializable value from a JSON file.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| fmt_err(&path.display().to_string(), e))
}

/// Write a rank-2 `(rows, cols)` tensor as a 16-bit binary PGM, affinely
/// mapping `[min, max]` to `[0, 65535]` (constant input maps to mid-gray).
pub fn save_pgm16(path: &Path, t: &DenseTensor) -> Result<()> {
    if t.rank() != 2 {
        return Err(Error::arg(format!(
            "save_pgm16: expected rank-2 tensor, got {:?}",
            t.shape()
        )));
    }
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let lo = t.data().iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = t.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut out = Vec::with_capacity(32 + rows * cols * 2);
    write!(&mut out, "P5\n{} {}\n65535\n", cols, rows)
        .map_err(|e| fmt_err("pgm header", e))?;
    for &v in t.data() {
        let g = if span > 0.0 {
            ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            32768
        };
        // PGM stores 16-bit samples most-significant byte first
        out.extend_from_slice(&g.to_be_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LutManifest {
    pub grid_dims: (usize, usize, usize),
    pub feat: FeatDims,
    pub dspec: DepthBinSpec,
    pub blobs: LutBlobs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LutBlobs {
    pub valid: String,
    pub feat_idx: String,
    pub feat_w: String,
    pub depth_idx: String,
    pub depth_w: String,
}

fn write_u32_blob(path: &Path, vals: &[u32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(vals.len() * 4);
    for v in vals {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn write_f32_blob(path: &Path, vals: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(vals.len() * 4);
    for v in vals {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_u32_blob(path: &Path, n: usize) -> Result<Vec<u32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != n * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes, got {}",
            path.display(),
            n * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_f32_blob(path: &Path, n: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != n * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes, got {}",
            path.display(),
            n * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Dump a LUT as `<dir>/<name>.json` plus little-endian sidecar blobs.
pub fn save_lut(dir: &Path, name: &str, lut: &ProjectionLUT) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let blobs = LutBlobs {
        valid: format!("{}.valid.bin", name),
        feat_idx: format!("{}.fidx.bin", name),
        feat_w: format!("{}.fw.bin", name),
        depth_idx: format!("{}.didx.bin", name),
        depth_w: format!("{}.dw.bin", name),
    };
    let manifest = LutManifest {
        grid_dims: lut.grid_dims,
        feat: lut.feat,
        dspec: lut.dspec,
        blobs: blobs.clone(),
    };
    let json_path = dir.join(format!("{}.json", name));
    save_json(&json_path, &manifest)?;
    fs::write(
        dir.join(&blobs.valid),
        lut.valid.iter().map(|&b| b as u8).collect::<Vec<u8>>(),
    )?;
    write_u32_blob(&dir.join(&blobs.feat_idx), &lut.feat_idx)?;
    write_f32_blob(&dir.join(&blobs.feat_w), &lut.feat_w)?;
    write_u32_blob(&dir.join(&blobs.depth_idx), &lut.depth_idx)?;
    write_f32_blob(&dir.join(&blobs.depth_w), &lut.depth_w)?;
    Ok(json_path)
}

/// Load a LUT dumped by [`save_lut`].
pub fn load_lut(manifest_path: &Path) -> Result<ProjectionLUT> {
    let manifest: LutManifest = load_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let n = manifest.grid_dims.0 * manifest.grid_dims.1 * manifest.grid_dims.2;
    let valid_bytes = fs::read(dir.join(&manifest.blobs.valid))?;
    if valid_bytes.len() != n {
        return Err(Error::Format(format!(
            "lut valid blob: expected {} bytes, got {}",
            n,
            valid_bytes.len()
        )));
    }
    Ok(ProjectionLUT {
        grid_dims: manifest.grid_dims,
        feat: manifest.feat,
        dspec: manifest.dspec,
        valid: valid_bytes.iter().map(|&b| b != 0).collect(),
        feat_idx: read_u32_blob(&dir.join(&manifest.blobs.feat_idx), 4 * n)?,
        feat_w: read_f32_blob(&dir.join(&manifest.blobs.feat_w), 4 * n)?,
        depth_idx: read_u32_blob(&dir.join(&manifest.blobs.depth_idx), 8 * n)?,
        depth_w: read_f32_blob(&dir.join(&manifest.blobs.depth_w), 8 * n)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_grid, CameraExtrinsics, CameraIntrinsics, Rig};
    use crate::viewtrans::build_lut;

    #[test]
    fn tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = DenseTensor::from_vec(&[2, 3], vec![1.0, -2.5, 0.0, 3.25, f32::MIN_POSITIVE, 1e9])
            .unwrap();
        let p = save_tensor(dir.path(), "probe", &t).unwrap();
        let back = load_tensor(&p).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn tensor_blob_is_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let t = DenseTensor::from_vec(&[1], vec![1.0]).unwrap();
        save_tensor(dir.path(), "one", &t).unwrap();
        let bytes = std::fs::read(dir.path().join("one.bin")).unwrap();
        assert_eq!(bytes, 1.0f32.to_le_bytes());
    }

    #[test]
    fn tensor_shape_blob_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = DenseTensor::from_vec(&[4], vec![0.0; 4]).unwrap();
        let p = save_tensor(dir.path(), "bad", &t).unwrap();
        std::fs::write(dir.path().join("bad.bin"), [0u8; 8]).unwrap();
        assert!(load_tensor(&p).is_err());
    }

    #[test]
    fn tensor_bad_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        std::fs::write(&p, "{not json").unwrap();
        assert!(matches!(load_tensor(&p), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let t = DenseTensor::from_vec(&[2, 2], vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        let p = dir.path().join("img.pgm");
        save_pgm16(&p, &t).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P5\n2 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 8);
        // min maps to 0, max to 65535, big-endian samples
        assert_eq!(&bytes[header.len()..header.len() + 4], &[0, 0, 255, 255]);
    }

    #[test]
    fn pgm_constant_input_mid_gray() {
        let dir = tempfile::tempdir().unwrap();
        let t = DenseTensor::filled(&[1, 2], 3.0);
        let p = dir.path().join("flat.pgm");
        save_pgm16(&p, &t).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let px = &bytes[bytes.len() - 4..];
        assert_eq!(px, &32768u16.to_be_bytes().repeat(2)[..]);
    }

    #[test]
    fn lut_round_trip() {
        let grid = make_grid((-0.4, 0.4), (-0.3, 0.3), (3.0, 5.0), (0.2, 0.2, 0.25)).unwrap();
        let rig = Rig {
            intrinsics: CameraIntrinsics {
                fx: 8.0,
                fy: 8.0,
                cx: 4.5,
                cy: 3.5,
                width: 10,
                height: 8,
            },
            extrinsics: CameraExtrinsics::identity(),
        };
        let feat = FeatDims { h: 8, w: 10, stride: 1 };
        let lut = build_lut(&grid, &rig, feat, DepthBinSpec::new(2.0, 6.0, 4).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let p = save_lut(dir.path(), "vt", &lut).unwrap();
        let back = load_lut(&p).unwrap();
        assert_eq!(back.grid_dims, lut.grid_dims);
        assert_eq!(back.valid, lut.valid);
        assert_eq!(back.feat_idx, lut.feat_idx);
        assert_eq!(back.feat_w, lut.feat_w);
        assert_eq!(back.depth_idx, lut.depth_idx);
        assert_eq!(back.depth_w, lut.depth_w);
    }

    #[test]
    fn json_round_trip_rig() {
        let dir = tempfile::tempdir().unwrap();
        let rig = Rig::overlooking(
            CameraIntrinsics {
                fx: 90.0,
                fy: 72.0,
                cx: 47.5,
                cy: 20.0,
                width: 96,
                height: 64,
            },
            1.3,
            0.28,
            0.0,
        );
        let p = dir.path().join("rig.json");
        save_json(&p, &rig).unwrap();
        let back: Rig = load_json(&p).unwrap();
        assert_eq!(back.extrinsics.rotation, rig.extrinsics.rotation);
        assert_eq!(back.extrinsics.translation, rig.extrinsics.translation);
    }
}
