//! Masked cross-entropy training objective and the evaluation metrics.

use crate::discretize::{ElevationMap, INVALID_TARGET};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;
use serde::Serialize;

const LOG_FLOOR: f64 = 1e-12;

/// Mean over masked cells of `-log p(target)` for normalized per-cell
/// probability rows. Empty mask yields 0 with the `empty` flag set.
pub struct CeResult {
    pub loss: f64,
    pub empty: bool,
}

pub fn masked_ce(probs: &DenseTensor, targets: &[i32], mask: &[bool]) -> Result<CeResult> {
    let n = *probs
        .shape()
        .last()
        .ok_or_else(|| Error::arg("masked_ce: scalar input"))?;
    let cells = probs.len() / n;
    if targets.len() != cells || mask.len() != cells {
        return Err(Error::arg(format!(
            "masked_ce: {} cells vs {} targets / {} mask entries",
            cells,
            targets.len(),
            mask.len()
        )));
    }
    let data = probs.data();
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for cell in 0..cells {
        if !mask[cell] {
            continue;
        }
        let t = targets[cell];
        if t < 0 || t as usize >= n {
            return Err(Error::arg(format!(
                "masked_ce: target {} out of range 0..{} on a masked cell",
                t, n
            )));
        }
        let p = data[cell * n + t as usize] as f64;
        acc += -(p.max(LOG_FLOOR)).ln();
        count += 1;
    }
    if count == 0 {
        return Ok(CeResult {
            loss: 0.0,
            empty: true,
        });
    }
    Ok(CeResult {
        loss: acc / count as f64,
        empty: false,
    })
}

/// Per-scale depth supervision target: class-index map plus mask.
pub struct DepthTargets {
    pub targets: Vec<i32>,
    pub mask: Vec<bool>,
}

impl DepthTargets {
    pub fn from_indices(targets: Vec<i32>) -> Self {
        let mask = targets.iter().map(|&t| t != INVALID_TARGET).collect();
        DepthTargets { targets, mask }
    }
}

/// Total objective: elevation CE plus `beta` times the mean over scales of
/// the depth CE.
pub fn total_loss(
    e_prob: &DenseTensor,
    elev_targets: &[i32],
    elev_mask: &[bool],
    d_pre: &[DenseTensor],
    depth_targets: &[DepthTargets],
    beta: f64,
) -> Result<f64> {
    let elev = masked_ce(e_prob, elev_targets, elev_mask)?.loss;
    if d_pre.len() != depth_targets.len() {
        return Err(Error::arg("total_loss: depth scale count mismatch"));
    }
    let mut depth = 0.0f64;
    if beta != 0.0 && !d_pre.is_empty() {
        for (d, t) in d_pre.iter().zip(depth_targets) {
            depth += masked_ce(d, &t.targets, &t.mask)?.loss;
        }
        depth /= d_pre.len() as f64;
    }
    Ok(elev + beta * depth)
}

/// Elevation metrics over the intersection of validity masks, in centimeters.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Metrics {
    pub abs_err_cm: f64,
    pub rmse_cm: f64,
    pub pct_gt_half_cm: f64,
    pub n_cells: usize,
}

impl Metrics {
    pub fn empty() -> Self {
        Metrics {
            abs_err_cm: 0.0,
            rmse_cm: 0.0,
            pct_gt_half_cm: 0.0,
            n_cells: 0,
        }
    }
}

pub fn metrics(pre: &ElevationMap, gt: &ElevationMap) -> Result<Metrics> {
    if pre.nx != gt.nx || pre.ny != gt.ny {
        return Err(Error::arg(format!(
            "metrics: grid mismatch {}x{} vs {}x{}",
            pre.nx, pre.ny, gt.nx, gt.ny
        )));
    }
    let mut abs = 0.0f64;
    let mut sq = 0.0f64;
    let mut over = 0usize;
    let mut n = 0usize;
    for i in 0..pre.values.len() {
        if !(pre.mask[i] && gt.mask[i]) {
            continue;
        }
        let err_cm = ((gt.values[i] - pre.values[i]) as f64) * 100.0;
        abs += err_cm.abs();
        sq += err_cm * err_cm;
        if err_cm.abs() > 0.5 {
            over += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Ok(Metrics::empty());
    }
    Ok(Metrics {
        abs_err_cm: abs / n as f64,
        rmse_cm: (sq / n as f64).sqrt(),
        pct_gt_half_cm: 100.0 * over as f64 / n as f64,
        n_cells: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn probs(rows: &[&[f32]]) -> DenseTensor {
        let n = rows[0].len();
        let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        DenseTensor::from_vec(&[rows.len(), n], data).unwrap()
    }

    #[test]
    fn ce_perfect_prediction_zero() {
        let p = probs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = masked_ce(&p, &[0, 1], &[true, true]).unwrap();
        assert!(r.loss.abs() < 1e-9);
        assert!(!r.empty);
    }

    #[test]
    fn ce_uniform_is_ln_n() {
        for n in [2usize, 5, 80] {
            let row: Vec<f32> = vec![1.0 / n as f32; n];
            let p = DenseTensor::from_vec(&[1, n], row).unwrap();
            let r = masked_ce(&p, &[0], &[true]).unwrap();
            assert!((r.loss - (n as f64).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn ce_empty_mask() {
        let p = probs(&[&[0.5, 0.5]]);
        let r = masked_ce(&p, &[0], &[false]).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.empty);
    }

    #[test]
    fn ce_out_of_range_target() {
        let p = probs(&[&[0.5, 0.5]]);
        assert!(masked_ce(&p, &[2], &[true]).is_err());
        assert!(masked_ce(&p, &[-1], &[true]).is_err());
    }

    #[test]
    fn ce_monotone_in_target_probability() {
        let mut prev = f64::INFINITY;
        for p_t in [0.1f32, 0.3, 0.5, 0.7, 0.9] {
            let p = probs(&[&[p_t, 1.0 - p_t]]);
            let r = masked_ce(&p, &[0], &[true]).unwrap();
            assert!(r.loss < prev);
            prev = r.loss;
        }
    }

    #[test]
    fn total_loss_composition() {
        // elevation CE = 1, depth CE = 2, beta = 0.25 -> 1.5
        let pe = (-1.0f64).exp() as f32;
        let e_prob = probs(&[&[pe, 1.0 - pe]]);
        let pd = (-2.0f64).exp() as f32;
        let d = probs(&[&[pd, 1.0 - pd]]);
        let dt = DepthTargets {
            targets: vec![0],
            mask: vec![true],
        };
        let loss = total_loss(&e_prob, &[0], &[true], &[d], &[dt], 0.25).unwrap();
        assert!((loss - 1.5).abs() < 1e-6);
    }

    #[test]
    fn total_loss_beta_zero_drops_depth() {
        let e_prob = probs(&[&[1.0, 0.0]]);
        let d = probs(&[&[0.5, 0.5]]);
        let dt = DepthTargets {
            targets: vec![0],
            mask: vec![true],
        };
        let loss = total_loss(&e_prob, &[0], &[true], &[d], &[dt], 0.0).unwrap();
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn total_loss_perfect_zero() {
        let e_prob = probs(&[&[1.0, 0.0]]);
        let d = probs(&[&[0.0, 1.0]]);
        let dt = DepthTargets {
            targets: vec![1],
            mask: vec![true],
        };
        let loss = total_loss(&e_prob, &[0], &[true], &[d], &[dt], 0.25).unwrap();
        assert!(loss.abs() < 1e-9);
    }

    fn map_from(vals: &[f32]) -> ElevationMap {
        let mut m = ElevationMap::new(1, vals.len());
        m.values.copy_from_slice(vals);
        m
    }

    #[test]
    fn metrics_identity() {
        let m = map_from(&[0.01, -0.02, 0.0]);
        let r = metrics(&m, &m).unwrap();
        assert_eq!(r.abs_err_cm, 0.0);
        assert_eq!(r.rmse_cm, 0.0);
        assert_eq!(r.pct_gt_half_cm, 0.0);
    }

    #[test]
    fn metrics_constant_offset() {
        let gt = map_from(&[0.0, 0.01, -0.01]);
        let pre = map_from(&[-0.01, 0.0, -0.02]);
        let r = metrics(&pre, &gt).unwrap();
        assert!((r.abs_err_cm - 1.0).abs() < 1e-6);
        assert!((r.rmse_cm - 1.0).abs() < 1e-6);
        assert!((r.pct_gt_half_cm - 100.0).abs() < 1e-9);
    }

    #[test]
    fn metrics_hand_case() {
        let gt = map_from(&[0.0, 0.02]);
        let pre = map_from(&[0.0, 0.0]);
        let r = metrics(&pre, &gt).unwrap();
        assert!((r.abs_err_cm - 1.0).abs() < 1e-6);
        assert!((r.rmse_cm - 2.0f64.sqrt()).abs() < 1e-4);
        assert!((r.pct_gt_half_cm - 50.0).abs() < 1e-9);
    }

    #[test]
    fn metrics_empty_intersection() {
        let mut gt = map_from(&[0.0]);
        gt.mask[0] = false;
        let pre = map_from(&[0.1]);
        let r = metrics(&pre, &gt).unwrap();
        assert_eq!(r, Metrics::empty());
    }

    proptest! {
        #[test]
        fn rmse_ge_abs_err(gt_v in proptest::collection::vec(-0.2f32..0.2, 10), pre_v in proptest::collection::vec(-0.2f32..0.2, 10)) {
            let gt = map_from(&gt_v);
            let pre = map_from(&pre_v);
            let r = metrics(&pre, &gt).unwrap();
            prop_assert!(r.rmse_cm >= r.abs_err_cm - 1e-9);
        }

        #[test]
        fn metrics_permutation_invariant(vals in proptest::collection::vec((-0.2f32..0.2, -0.2f32..0.2), 8)) {
            let gt: Vec<f32> = vals.iter().map(|p| p.0).collect();
            let pre: Vec<f32> = vals.iter().map(|p| p.1).collect();
            let r1 = metrics(&map_from(&pre), &map_from(&gt)).unwrap();
            let mut rev_gt = gt.clone(); rev_gt.reverse();
            let mut rev_pre = pre.clone(); rev_pre.reverse();
            let r2 = metrics(&map_from(&rev_pre), &map_from(&rev_gt)).unwrap();
            prop_assert!((r1.abs_err_cm - r2.abs_err_cm).abs() < 1e-9);
            prop_assert!((r1.rmse_cm - r2.rmse_cm).abs() < 1e-9);
        }
    }
}
