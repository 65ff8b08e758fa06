//! Elevation bin construction (shuttle-shape and uniform) and regression
//! from probability scores.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;
use serde::{Deserialize, Serialize};

/// Sentinel class index for cells without a valid target.
pub const INVALID_TARGET: i32 = -1;

/// Ordered elevation bins: `n + 1` edges descending from `+e_bound` to
/// `-e_bound`, with midpoint centers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinSpec {
    pub edges: Vec<f64>,
    pub centers: Vec<f64>,
    pub e_bound: f64,
    pub alpha: f64,
    pub n: usize,
}

impl BinSpec {
    fn from_edges(edges: Vec<f64>, e_bound: f64, alpha: f64) -> Self {
        let centers = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let n = edges.len() - 1;
        BinSpec {
            edges,
            centers,
            e_bound,
            alpha,
            n,
        }
    }
}

/// Shuttle-shape bins: dense near zero elevation, widening toward
/// `±e_bound` with shape exponent `alpha`. `n` must be even; the middle
/// edge is pinned to exactly 0.
pub fn shuttle_bins(n: usize, e_bound: f64, alpha: f64) -> Result<BinSpec> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::arg(format!("shuttle_bins: n must be even and >= 2, got {}", n)));
    }
    if e_bound <= 0.0 {
        return Err(Error::arg("shuttle_bins: e_bound must be positive"));
    }
    if alpha <= 0.0 {
        return Err(Error::arg("shuttle_bins: alpha must be positive"));
    }
    let half = n / 2;
    let mut edges = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let e = if i < half {
            ((half - i) as f64 / half as f64).powf(alpha) * e_bound
        } else if i == half {
            0.0
        } else {
            -((i - half) as f64 / half as f64).powf(alpha) * e_bound
        };
        edges.push(e);
    }
    Ok(BinSpec::from_edges(edges, e_bound, alpha))
}

/// Uniformly spaced bins over `[-e_bound, e_bound]`, edges descending.
pub fn uniform_bins(n: usize, e_bound: f64) -> Result<BinSpec> {
    if n < 1 {
        return Err(Error::arg("uniform_bins: n must be >= 1"));
    }
    if e_bound <= 0.0 {
        return Err(Error::arg("uniform_bins: e_bound must be positive"));
    }
    let width = 2.0 * e_bound / n as f64;
    let edges = (0..=n).map(|i| e_bound - i as f64 * width).collect();
    Ok(BinSpec::from_edges(edges, e_bound, 1.0))
}

/// Interchangeable bin-construction strategy, selected by name from config.
pub trait BinStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, n: usize, e_bound: f64, alpha: f64) -> Result<BinSpec>;
}

struct Shuttle;
struct Uniform;

impl BinStrategy for Shuttle {
    fn name(&self) -> &'static str {
        "shuttle"
    }
    fn build(&self, n: usize, e_bound: f64, alpha: f64) -> Result<BinSpec> {
        shuttle_bins(n, e_bound, alpha)
    }
}

impl BinStrategy for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }
    fn build(&self, n: usize, e_bound: f64, _alpha: f64) -> Result<BinSpec> {
        uniform_bins(n, e_bound)
    }
}

static STRATEGIES: &[&dyn BinStrategy] = &[&Shuttle, &Uniform];

/// Look up a registered bin strategy by name.
pub fn bin_strategy(name: &str) -> Option<&'static dyn BinStrategy> {
    STRATEGIES.iter().copied().find(|s| s.name() == name)
}

pub fn bin_strategy_names() -> Vec<&'static str> {
    STRATEGIES.iter().map(|s| s.name()).collect()
}

/// An `N_x x N_y` elevation grid in meters with a paired validity mask.
#[derive(Debug, Clone)]
pub struct ElevationMap {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f32>,
    pub mask: Vec<bool>,
}

impl ElevationMap {
    pub fn new(nx: usize, ny: usize) -> Self {
        ElevationMap {
            nx,
            ny,
            values: vec![0.0; nx * ny],
            mask: vec![true; nx * ny],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.values[x * self.ny + y]
    }

    pub fn valid(&self, x: usize, y: usize) -> bool {
        self.mask[x * self.ny + y]
    }
}

/// Expectation of bin centers under per-cell probabilities:
/// `E(x, y) = sum_i centers[i] * probs(x, y, i)`.
pub fn regress_elevation(e_prob: &DenseTensor, bins: &BinSpec) -> Result<ElevationMap> {
    if e_prob.rank() != 3 {
        return Err(Error::arg("regress_elevation: expected rank-3 (N_x, N_y, N) tensor"));
    }
    let (nx, ny, n) = (e_prob.shape()[0], e_prob.shape()[1], e_prob.shape()[2]);
    if n != bins.n {
        return Err(Error::arg(format!(
            "regress_elevation: {} probabilities vs {} bins",
            n, bins.n
        )));
    }
    let mut map = ElevationMap::new(nx, ny);
    let data = e_prob.data();
    for cell in 0..nx * ny {
        let row = &data[cell * n..(cell + 1) * n];
        let mut sum = 0.0f64;
        let mut e = 0.0f64;
        for (i, &p) in row.iter().enumerate() {
            if p < 0.0 {
                return Err(Error::arg("regress_elevation: negative probability"));
            }
            sum += p as f64;
            e += bins.centers[i] * p as f64;
        }
        if (sum - 1.0).abs() > 1e-5 {
            return Err(Error::arg(format!(
                "regress_elevation: probabilities sum to {} (must be 1 within 1e-5)",
                sum
            )));
        }
        map.values[cell] = e as f32;
    }
    Ok(map)
}

/// Nearest-bin-center class index per valid cell; ties break to the lower
/// index, out-of-range values clamp to the extreme bins, invalid cells get
/// [`INVALID_TARGET`].
pub fn elevation_to_target(e_gt: &ElevationMap, bins: &BinSpec) -> Vec<i32> {
    e_gt.values
        .iter()
        .zip(&e_gt.mask)
        .map(|(&v, &ok)| {
            if !ok {
                return INVALID_TARGET;
            }
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, &c) in bins.centers.iter().enumerate() {
                let d = (v as f64 - c).abs();
                if d < best_d - 1e-12 {
                    best_d = d;
                    best = i;
                }
            }
            best as i32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shuttle_hand_case_alpha1() {
        let b = shuttle_bins(4, 0.2, 1.0).unwrap();
        let expect = [0.2, 0.1, 0.0, -0.1, -0.2];
        for (a, e) in b.edges.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12);
        }
        let centers = [0.15, 0.05, -0.05, -0.15];
        for (a, e) in b.centers.iter().zip(centers) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn shuttle_hand_case_alpha2() {
        let b = shuttle_bins(4, 0.2, 2.0).unwrap();
        let expect = [0.2, 0.05, 0.0, -0.05, -0.2];
        for (a, e) in b.edges.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12);
        }
        let centers = [0.125, 0.025, -0.025, -0.125];
        for (a, e) in b.centers.iter().zip(centers) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn shuttle_alpha1_equals_uniform() {
        for n in [2usize, 8, 80] {
            let s = shuttle_bins(n, 0.2, 1.0).unwrap();
            let u = uniform_bins(n, 0.2).unwrap();
            for (a, b) in s.edges.iter().zip(&u.edges) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shuttle_odd_n_rejected() {
        assert!(shuttle_bins(5, 0.2, 1.0).is_err());
    }

    #[test]
    fn uniform_hand_cases() {
        let b = uniform_bins(2, 0.2).unwrap();
        assert_eq!(b.edges.len(), 3);
        assert!((b.edges[1] - 0.0).abs() < 1e-12);
        assert!((b.centers[0] - 0.1).abs() < 1e-12);
        assert!((b.centers[1] + 0.1).abs() < 1e-12);
        let b4 = uniform_bins(4, 0.2).unwrap();
        for w in b4.edges.windows(2) {
            assert!((w[0] - w[1] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn centers_antisymmetric() {
        for (n, alpha) in [(4usize, 1.5), (8, 2.0), (80, 1.5)] {
            let b = shuttle_bins(n, 0.2, alpha).unwrap();
            for i in 0..n {
                assert!((b.centers[i] + b.centers[n - 1 - i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shuttle_widths_grow_outward() {
        let b = shuttle_bins(80, 0.2, 1.5).unwrap();
        let widths: Vec<f64> = b.edges.windows(2).map(|w| w[0] - w[1]).collect();
        let half = 40;
        // lower half (indices just below the middle) is densest
        for i in (1..half).rev() {
            assert!(widths[i - 1] >= widths[i] - 1e-12);
        }
        for i in half..79 {
            assert!(widths[i + 1] >= widths[i] - 1e-12);
        }
    }

    #[test]
    fn regress_one_hot() {
        let bins = shuttle_bins(4, 0.2, 1.5).unwrap();
        for i in 0..4 {
            let mut p = vec![0.0f32; 4];
            p[i] = 1.0;
            let t = DenseTensor::from_vec(&[1, 1, 4], p).unwrap();
            let m = regress_elevation(&t, &bins).unwrap();
            assert!((m.at(0, 0) as f64 - bins.centers[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn regress_uniform_is_zero() {
        let bins = shuttle_bins(8, 0.2, 1.5).unwrap();
        let t = DenseTensor::filled(&[2, 2, 8], 1.0 / 8.0);
        let m = regress_elevation(&t, &bins).unwrap();
        for v in &m.values {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn regress_hand_dot_product() {
        let mut bins = uniform_bins(2, 0.2).unwrap();
        bins.centers = vec![0.1, -0.1];
        let t = DenseTensor::from_vec(&[1, 1, 2], vec![0.25, 0.75]).unwrap();
        let m = regress_elevation(&t, &bins).unwrap();
        assert!((m.at(0, 0) + 0.05).abs() < 1e-7);
    }

    #[test]
    fn regress_rejects_unnormalized() {
        let bins = uniform_bins(2, 0.2).unwrap();
        let t = DenseTensor::from_vec(&[1, 1, 2], vec![0.6, 0.6]).unwrap();
        assert!(regress_elevation(&t, &bins).is_err());
    }

    #[test]
    fn target_on_center_and_clamp() {
        let bins = shuttle_bins(8, 0.2, 1.5).unwrap();
        let mut gt = ElevationMap::new(1, 3);
        gt.values[0] = bins.centers[3] as f32;
        gt.values[1] = 10.0 * 0.2;
        gt.values[2] = -10.0 * 0.2;
        let t = elevation_to_target(&gt, &bins);
        assert_eq!(t[0], 3);
        assert_eq!(t[1], 0);
        assert_eq!(t[2], 7);
    }

    #[test]
    fn target_tie_breaks_low() {
        let bins = uniform_bins(8, 0.2).unwrap();
        let mid = 0.5 * (bins.centers[2] + bins.centers[3]);
        let mut gt = ElevationMap::new(1, 1);
        gt.values[0] = mid as f32;
        assert_eq!(elevation_to_target(&gt, &bins)[0], 2);
    }

    #[test]
    fn target_invalid_sentinel() {
        let bins = uniform_bins(4, 0.2).unwrap();
        let mut gt = ElevationMap::new(1, 1);
        gt.mask[0] = false;
        assert_eq!(elevation_to_target(&gt, &bins)[0], INVALID_TARGET);
    }

    #[test]
    fn strategy_registry_lookup() {
        assert_eq!(bin_strategy("shuttle").unwrap().name(), "shuttle");
        assert_eq!(bin_strategy("uniform").unwrap().name(), "uniform");
        assert!(bin_strategy("adaptive").is_none());
    }

    proptest! {
        #[test]
        fn regress_linear_in_probs(
            a in proptest::collection::vec(0.01f32..1.0, 4),
            b in proptest::collection::vec(0.01f32..1.0, 4),
            lam in 0.0f32..1.0,
        ) {
            let norm = |v: &[f32]| -> Vec<f32> {
                let s: f32 = v.iter().sum();
                v.iter().map(|x| x / s).collect()
            };
            let bins = shuttle_bins(4, 0.2, 1.5).unwrap();
            let pa = norm(&a);
            let pb = norm(&b);
            let mix: Vec<f32> = pa.iter().zip(&pb).map(|(x, y)| lam * x + (1.0 - lam) * y).collect();
            let ra = regress_elevation(&DenseTensor::from_vec(&[1,1,4], pa).unwrap(), &bins).unwrap();
            let rb = regress_elevation(&DenseTensor::from_vec(&[1,1,4], pb).unwrap(), &bins).unwrap();
            let rm = regress_elevation(&DenseTensor::from_vec(&[1,1,4], mix).unwrap(), &bins).unwrap();
            let expect = lam * ra.at(0,0) + (1.0 - lam) * rb.at(0,0);
            prop_assert!((rm.at(0,0) - expect).abs() < 1e-6);
        }

        #[test]
        fn regress_bounded_by_center_range(vals in proptest::collection::vec(0.01f32..1.0, 8)) {
            let s: f32 = vals.iter().sum();
            let probs: Vec<f32> = vals.iter().map(|v| v / s).collect();
            let bins = shuttle_bins(8, 0.2, 1.5).unwrap();
            let m = regress_elevation(&DenseTensor::from_vec(&[1,1,8], probs).unwrap(), &bins).unwrap();
            let lo = bins.centers.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = bins.centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((m.at(0,0) as f64) >= lo - 1e-6 && (m.at(0,0) as f64) <= hi + 1e-6);
        }

        #[test]
        fn round_trip_target_within_half_bin(v in -0.19f64..0.19) {
            let bins = shuttle_bins(80, 0.2, 1.5).unwrap();
            let mut gt = ElevationMap::new(1, 1);
            gt.values[0] = v as f32;
            let idx = elevation_to_target(&gt, &bins)[0] as usize;
            let mut probs = vec![0.0f32; 80];
            probs[idx] = 1.0;
            let m = regress_elevation(&DenseTensor::from_vec(&[1,1,80], probs).unwrap(), &bins).unwrap();
            // bound by the width of the bin that actually contains v (edges
            // descend); the snapped center can sit in a narrower neighbor
            let home = (0..80)
                .find(|&i| bins.edges[i] >= v && v >= bins.edges[i + 1])
                .unwrap();
            let w = bins.edges[home] - bins.edges[home + 1];
            prop_assert!(((m.at(0,0) as f64) - v).abs() <= 0.5 * w + 1e-6);
        }
    }
}
