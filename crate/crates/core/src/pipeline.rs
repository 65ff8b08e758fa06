//! Pipeline strategy registry (`mono` / `stereo` behind one trait) and the
//! scene-directory artifact layout shared by the CLI and the tests.

use crate::config::PipelineConfig;
use crate::discretize::ElevationMap;
use crate::error::{Error, Result};
use crate::geometry::Rig;
use crate::io::{load_json, load_tensor, save_json, save_pgm16, save_tensor};
use crate::mono::{load_mono_weights, run_mono, MonoInput, MonoWeights};
use crate::stereo::{load_stereo_weights, run_stereo, StereoOpts, StereoWeights};
use crate::synthetic::{
    gt_elevation_map, ray_depth_distribution, render_depth, render_features, FeatureOpts,
    SceneSpec, ORACLE_BRIDGE,
};
use crate::tensor::DenseTensor;
use std::path::Path;

/// Everything a pipeline consumes, loaded from a scene directory.
pub struct SceneData {
    pub rig_left: Rig,
    pub rig_right: Rig,
    pub feats_left: Vec<DenseTensor>,
    pub feats_right: Vec<DenseTensor>,
    pub depths_left: Vec<DenseTensor>,
    pub depths_right: Vec<DenseTensor>,
    pub gt: ElevationMap,
}

/// A pipeline's outputs: the elevation map plus named tensors to dump.
pub struct PipelineRun {
    pub elevation: ElevationMap,
    pub extras: Vec<(String, DenseTensor)>,
}

/// Interchangeable reconstruction pipeline, selected by name.
pub trait Pipeline: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(
        &self,
        data: &SceneData,
        weights_dir: Option<&Path>,
        cfg: &PipelineConfig,
    ) -> Result<PipelineRun>;
}

struct MonoPipeline;
struct StereoPipeline;

impl Pipeline for MonoPipeline {
    fn name(&self) -> &'static str {
        "mono"
    }
    fn run(
        &self,
        data: &SceneData,
        weights_dir: Option<&Path>,
        cfg: &PipelineConfig,
    ) -> Result<PipelineRun> {
        let weights = match weights_dir {
            Some(dir) => load_mono_weights(dir)?,
            None => MonoWeights::reference(cfg)?,
        };
        let input = MonoInput::Oracle {
            feats: data.feats_left.clone(),
            depths: data.depths_left.clone(),
        };
        let out = run_mono(&input, &weights, &data.rig_left, cfg)?;
        Ok(PipelineRun {
            elevation: out.elevation,
            extras: vec![("e_prob".to_string(), out.e_prob)],
        })
    }
}

impl Pipeline for StereoPipeline {
    fn name(&self) -> &'static str {
        "stereo"
    }
    fn run(
        &self,
        data: &SceneData,
        weights_dir: Option<&Path>,
        cfg: &PipelineConfig,
    ) -> Result<PipelineRun> {
        let (mono_w, stereo_w) = match weights_dir {
            Some(dir) => (load_mono_weights(dir)?, load_stereo_weights(dir)?),
            None => (MonoWeights::reference(cfg)?, StereoWeights::reference(cfg)?),
        };
        let left = MonoInput::Oracle {
            feats: data.feats_left.clone(),
            depths: data.depths_left.clone(),
        };
        let right = MonoInput::Oracle {
            feats: data.feats_right.clone(),
            depths: data.depths_right.clone(),
        };
        let out = run_stereo(
            &left,
            &right,
            &mono_w,
            &stereo_w,
            &data.rig_left,
            &data.rig_right,
            cfg,
            StereoOpts::default(),
        )?;
        Ok(PipelineRun {
            elevation: out.elevation,
            extras: vec![
                ("a_s".to_string(), out.a_s),
                ("a_c".to_string(), out.a_c.values),
            ],
        })
    }
}

static PIPELINES: &[&dyn Pipeline] = &[&MonoPipeline, &StereoPipeline];

/// Look up a registered pipeline by name.
pub fn pipeline(name: &str) -> Option<&'static dyn Pipeline> {
    PIPELINES.iter().copied().find(|p| p.name() == name)
}

pub fn pipeline_names() -> Vec<&'static str> {
    PIPELINES.iter().map(|p| p.name()).collect()
}

fn mask_to_tensor(mask: &[bool], shape: &[usize]) -> DenseTensor {
    DenseTensor::from_vec(shape, mask.iter().map(|&b| b as u8 as f32).collect()).unwrap()
}

fn tensor_to_mask(t: &DenseTensor) -> Vec<bool> {
    t.data().iter().map(|&v| v != 0.0).collect()
}

/// Write the full artifact set for `scene` into `dir`: scene and rig JSON,
/// ground-truth elevation, per-camera depth maps (with PGM previews), and
/// per-scale feature maps.
pub fn write_scene_dir(
    dir: &Path,
    scene: &SceneSpec,
    cfg: &PipelineConfig,
    gt_dropout: f64,
) -> Result<()> {
    cfg.validate()?;
    let grid = cfg.voxel_grid()?;
    save_json(&dir.join("scene.json"), scene)?;
    let rigs = [("left", cfg.rig_left()), ("right", cfg.rig_right())];
    save_json(&dir.join("rig_left.json"), &rigs[0].1)?;
    save_json(&dir.join("rig_right.json"), &rigs[1].1)?;
    let gt = gt_elevation_map(scene, &grid, gt_dropout, scene.seed)?;
    let gt_t = DenseTensor::from_vec(&[gt.nx, gt.ny], gt.values.clone())?;
    save_tensor(dir, "gt", &gt_t)?;
    save_tensor(dir, "gt_mask", &mask_to_tensor(&gt.mask, &[gt.nx, gt.ny]))?;
    for (side, rig) in &rigs {
        let full = render_depth(scene, rig);
        save_tensor(dir, &format!("depth_{}", side), &full.depth)?;
        save_tensor(
            dir,
            &format!("depth_mask_{}", side),
            &mask_to_tensor(&full.mask, full.depth.shape()),
        )?;
        save_pgm16(&dir.join(format!("depth_{}.pgm", side)), &full.depth)?;
        for &stride in &cfg.scales {
            let fd = cfg.feat_dims(stride)?;
            let feats = render_features(scene, rig, fd, cfg.c_i, cfg.seed, FeatureOpts::default());
            save_tensor(dir, &format!("feat_{}_{}", side, stride), &feats)?;
        }
    }
    Ok(())
}

/// Load a scene directory written by [`write_scene_dir`], rebuilding the
/// per-scale oracle depth distributions from the stored scene description.
pub fn load_scene_dir(dir: &Path, cfg: &PipelineConfig) -> Result<SceneData> {
    let scene: SceneSpec = load_json(&dir.join("scene.json"))?;
    let rig_left: Rig = load_json(&dir.join("rig_left.json"))?;
    let rig_right: Rig = load_json(&dir.join("rig_right.json"))?;
    let gt_t = load_tensor(&dir.join("gt.json"))?;
    let gt_mask = load_tensor(&dir.join("gt_mask.json"))?;
    if gt_t.rank() != 2 || gt_mask.shape() != gt_t.shape() {
        return Err(Error::Format("scene dir: gt/gt_mask shape mismatch".to_string()));
    }
    let gt = ElevationMap {
        nx: gt_t.shape()[0],
        ny: gt_t.shape()[1],
        values: gt_t.data().to_vec(),
        mask: tensor_to_mask(&gt_mask),
    };
    let mut sides: Vec<(Vec<DenseTensor>, Vec<DenseTensor>)> = Vec::new();
    for (side, rig) in [("left", &rig_left), ("right", &rig_right)] {
        let mut feats = Vec::new();
        let mut dists = Vec::new();
        for &stride in &cfg.scales {
            feats.push(load_tensor(&dir.join(format!("feat_{}_{}.json", side, stride)))?);
            let fd = cfg.feat_dims(stride)?;
            dists.push(ray_depth_distribution(&scene, rig, fd, &cfg.depth, ORACLE_BRIDGE));
        }
        sides.push((feats, dists));
    }
    let (feats_right, depths_right) = sides.pop().unwrap();
    let (feats_left, depths_left) = sides.pop().unwrap();
    Ok(SceneData {
        rig_left,
        rig_right,
        feats_left,
        feats_right,
        depths_left,
        depths_right,
        gt,
    })
}
