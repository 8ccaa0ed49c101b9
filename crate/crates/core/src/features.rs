//! Fixed-length window embeddings.
//!
//! Layout: `[external semantic (optional) | arm rotations (120) | global distance (14)]`.
//! Right-side windows are mirrored into the left fencer's frame first so both
//! fencers share one action vocabulary. Rotations are expressed in a frame
//! whose x axis runs along the strip; reflecting across the plane normal to
//! that axis maps an axis-angle vector `(x, y, z)` to `(x, -y, -z)`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{zone_of, MotionWindow, Side, Zone, ARM_JOINTS, STRIP_LENGTH, WINDOW_FRAMES};

pub const ARM_FEATURE_DIM: usize = WINDOW_FRAMES * ARM_JOINTS * 3;
pub const GLOBAL_FEATURE_DIM: usize = 14;
/// Floor applied to per-dimension standard deviations when standardizing.
pub const STD_FLOOR: f64 = 1e-8;
const STILL_SPEED: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalDistanceFeatures {
    pub net_displacement: f64,
    pub start_zone: Zone,
    pub end_zone: Zone,
    pub max_forward_disp: f64,
    pub max_backward_disp: f64,
    pub peak_to_median_speed: f64,
}

impl GlobalDistanceFeatures {
    /// `[net, start one-hot (5), end one-hot (5), max fwd, max bwd, ratio]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; GLOBAL_FEATURE_DIM];
        v[0] = self.net_displacement;
        if let Some(i) = self.start_zone.index() {
            v[1 + i] = 1.0;
        }
        if let Some(i) = self.end_zone.index() {
            v[6 + i] = 1.0;
        }
        v[11] = self.max_forward_disp;
        v[12] = self.max_backward_disp;
        v[13] = self.peak_to_median_speed;
        v
    }
}

/// Position in the left fencer's frame: right-side positions are reflected
/// about the strip center.
pub fn canonical_x(side: Side, x: f64) -> f64 {
    match side {
        Side::Left => x,
        Side::Right => STRIP_LENGTH - x,
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn global_distance_features(window: &MotionWindow) -> Result<GlobalDistanceFeatures> {
    if window.root_x.len() != WINDOW_FRAMES {
        return Err(Error::InvalidInput(format!(
            "window has {} frames, expected {WINDOW_FRAMES}",
            window.root_x.len()
        )));
    }
    let sign = window.side.forward_sign();
    let x0 = window.root_x[0];
    let forward: Vec<f64> = window.root_x.iter().map(|x| sign * (x - x0)).collect();

    let max_forward_disp = forward.iter().cloned().fold(0.0, f64::max);
    let max_backward_disp = forward.iter().map(|f| -f).fold(0.0, f64::max);

    let mut speeds: Vec<f64> = window.root_x.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    speeds.sort_by(f64::total_cmp);
    let peak = *speeds.last().expect("at least one delta");
    let med = median(&speeds);
    let peak_to_median_speed = if med < STILL_SPEED { 1.0 } else { peak / med };

    let first = window.root_x[0];
    let last = window.root_x[WINDOW_FRAMES - 1];
    Ok(GlobalDistanceFeatures {
        net_displacement: forward[WINDOW_FRAMES - 1],
        start_zone: zone_of(canonical_x(window.side, first))?,
        end_zone: zone_of(canonical_x(window.side, last))?,
        max_forward_disp,
        max_backward_disp,
        peak_to_median_speed,
    })
}

/// Mirrors an axis-angle rotation across the plane normal to the strip axis.
pub fn mirror_rotation(r: [f64; 3]) -> [f64; 3] {
    [r[0], -r[1], -r[2]]
}

pub fn arm_rotation_features(window: &MotionWindow) -> Result<Vec<f64>> {
    let expected = WINDOW_FRAMES * ARM_JOINTS;
    if window.arm_rotations.len() != expected {
        return Err(Error::InvalidInput(format!(
            "window carries {} joint rotations, expected {expected}",
            window.arm_rotations.len()
        )));
    }
    let mirror = window.side == Side::Right;
    Ok(window
        .arm_rotations
        .iter()
        .flat_map(|&r| if mirror { mirror_rotation(r) } else { r })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Dimension of the externally supplied semantic embedding; 0 disables it.
    pub external_dim: usize,
}

/// Segment offsets of an embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingLayout {
    pub external_dim: usize,
    pub arm_offset: usize,
    pub global_offset: usize,
    pub dim: usize,
}

impl EmbeddingLayout {
    pub fn new(config: FeatureConfig) -> Self {
        let arm_offset = config.external_dim;
        let global_offset = arm_offset + ARM_FEATURE_DIM;
        EmbeddingLayout {
            external_dim: config.external_dim,
            arm_offset,
            global_offset,
            dim: global_offset + GLOBAL_FEATURE_DIM,
        }
    }

    pub fn external(&self) -> Range<usize> {
        0..self.arm_offset
    }

    pub fn arm(&self) -> Range<usize> {
        self.arm_offset..self.global_offset
    }

    pub fn global(&self) -> Range<usize> {
        self.global_offset..self.dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub layout: EmbeddingLayout,
}

/// Per-dimension z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity(dim: usize) -> Self {
        FeatureScaler {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fits means and (population) standard deviations, floored at [`STD_FLOOR`].
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot fit a scaler on no rows".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(FeatureScaler { mean, std })
    }

    pub fn transform(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: raw.len(),
            });
        }
        Ok(raw
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

/// Unscaled concatenation of the three feature groups.
pub fn raw_features(window: &MotionWindow, external: Option<&[f64]>, config: FeatureConfig) -> Result<Vec<f64>> {
    let layout = EmbeddingLayout::new(config);
    let mut out = Vec::with_capacity(layout.dim);
    match (config.external_dim, external) {
        (0, None) => {}
        (0, Some(e)) => {
            return Err(Error::DimensionMismatch {
                expected: 0,
                got: e.len(),
            })
        }
        (dim, Some(e)) if e.len() == dim => out.extend_from_slice(e),
        (dim, e) => {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: e.map_or(0, <[f64]>::len),
            })
        }
    }
    out.extend(arm_rotation_features(window)?);
    out.extend(global_distance_features(window)?.to_vec());
    debug_assert_eq!(out.len(), layout.dim);
    Ok(out)
}

pub fn embed(
    window: &MotionWindow,
    external: Option<&[f64]>,
    config: FeatureConfig,
    scaler: &FeatureScaler,
) -> Result<EmbeddingVector> {
    let raw = raw_features(window, external, config)?;
    Ok(EmbeddingVector {
        values: scaler.transform(&raw)?,
        layout: EmbeddingLayout::new(config),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Rotation3, Vector3};

    fn left_window(xs: Vec<f64>) -> MotionWindow {
        MotionWindow {
            root_x: xs,
            ..MotionWindow::stationary(Side::Left, 0.0)
        }
    }

    #[test]
    fn stationary_window() {
        let g = global_distance_features(&MotionWindow::stationary(Side::Left, 6.0)).unwrap();
        assert_eq!(g.net_displacement, 0.0);
        assert_eq!(g.max_forward_disp, 0.0);
        assert_eq!(g.max_backward_disp, 0.0);
        assert_eq!(g.peak_to_median_speed, 1.0);
        assert_eq!(g.start_zone, Zone::Middle);
    }

    #[test]
    fn constant_advance() {
        let xs: Vec<f64> = (0..20).map(|t| 5.0 + 0.05 * t as f64).collect();
        let g = global_distance_features(&left_window(xs)).unwrap();
        assert!((g.net_displacement - 0.95).abs() < 1e-12);
        assert!((g.max_forward_disp - 0.95).abs() < 1e-12);
        assert_eq!(g.max_backward_disp, 0.0);
        assert!((g.peak_to_median_speed - 1.0).abs() < 1e-9);
    }

    #[test]
    fn out_and_back() {
        let xs: Vec<f64> = (0..20)
            .map(|t| {
                if t <= 9 {
                    6.0 + 0.4 * t as f64 / 9.0
                } else {
                    6.4 - 0.4 * (t - 9) as f64 / 10.0
                }
            })
            .collect();
        // Independent evaluation of the definitions on the explicit sequence.
        let peak_fwd = xs.iter().map(|x| x - xs[0]).fold(f64::MIN, f64::max);
        let mut deltas: Vec<f64> = (1..20).map(|t| (xs[t] - xs[t - 1]).abs()).collect();
        deltas.sort_by(f64::total_cmp);
        let ratio = deltas[18] / deltas[9];

        let g = global_distance_features(&left_window(xs)).unwrap();
        assert!(g.net_displacement.abs() < 1e-12);
        assert!((g.max_forward_disp - 0.4).abs() < 1e-12);
        assert!((g.max_forward_disp - peak_fwd).abs() < 1e-15);
        assert!(g.max_backward_disp < 1e-12);
        assert_eq!(g.start_zone, Zone::Middle);
        assert_eq!(g.end_zone, Zone::Middle);
        assert!((g.peak_to_median_speed - ratio).abs() < 1e-12);
    }

    #[test]
    fn right_fencer_forward_is_negative_x() {
        let xs: Vec<f64> = (0..20).map(|t| 9.0 - 0.02 * t as f64).collect();
        let w = MotionWindow {
            root_x: xs,
            ..MotionWindow::stationary(Side::Right, 0.0)
        };
        let g = global_distance_features(&w).unwrap();
        assert!((g.net_displacement - 0.38).abs() < 1e-12);
        assert!((g.max_forward_disp - 0.38).abs() < 1e-12);
        assert_eq!(g.max_backward_disp, 0.0);
        // Right fencer at 9 m is in its own en garde zone, mirrored to 5 m.
        assert_eq!(g.start_zone, Zone::Middle);
    }

    #[test]
    fn wrong_frame_count_rejected() {
        let w = left_window(vec![1.0; 19]);
        assert!(global_distance_features(&w).is_err());
        let mut w = MotionWindow::stationary(Side::Left, 1.0);
        w.arm_rotations.pop();
        assert!(arm_rotation_features(&w).is_err());
    }

    #[test]
    fn arm_layout() {
        let mut w = MotionWindow::stationary(Side::Left, 6.0);
        assert_eq!(arm_rotation_features(&w).unwrap(), vec![0.0; 120]);
        w.arm_rotations[0][0] = 0.3;
        let v = arm_rotation_features(&w).unwrap();
        assert_eq!(v[0], 0.3);
        assert!(v[1..].iter().all(|&x| x == 0.0));
        // Frame 1 wrist z lands at (1*2 + 1)*3 + 2.
        w.arm_rotations[3][2] = 0.7;
        assert_eq!(arm_rotation_features(&w).unwrap()[11], 0.7);
    }

    fn to_axis_angle(r: &Rotation3<f64>) -> [f64; 3] {
        let v = r.scaled_axis();
        [v.x, v.y, v.z]
    }

    /// Mirror of a rotation computed through matrices: R' = M R M.
    fn reflect_by_matrix(aa: [f64; 3]) -> [f64; 3] {
        let r = Rotation3::new(Vector3::new(aa[0], aa[1], aa[2]));
        let m = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        let mirrored = Rotation3::from_matrix_unchecked(m * r.matrix() * m);
        to_axis_angle(&mirrored)
    }

    #[test]
    fn mirrored_pair_matches() {
        let mut left = MotionWindow::stationary(Side::Left, 0.0);
        let mut right = MotionWindow::stationary(Side::Right, 0.0);
        for (i, (l, r)) in left
            .arm_rotations
            .iter_mut()
            .zip(right.arm_rotations.iter_mut())
            .enumerate()
        {
            let t = i as f64;
            *l = [0.4 * (t * 0.3).sin(), 0.2 + 0.01 * t, -0.5 * (t * 0.1).cos()];
            *r = reflect_by_matrix(*l);
        }
        for t in 0..20 {
            left.root_x[t] = 4.0 + 0.03 * t as f64;
            right.root_x[t] = STRIP_LENGTH - left.root_x[t];
        }
        let a = arm_rotation_features(&left).unwrap();
        let b = arm_rotation_features(&right).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
        let cfg = FeatureConfig::default();
        let s = FeatureScaler::identity(EmbeddingLayout::new(cfg).dim);
        let ea = embed(&left, None, cfg, &s).unwrap().values;
        let eb = embed(&right, None, cfg, &s).unwrap().values;
        for (x, y) in ea.iter().zip(&eb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_window_embedding_layout() {
        let cfg = FeatureConfig::default();
        let layout = EmbeddingLayout::new(cfg);
        assert_eq!(layout.dim, 134);
        let w = MotionWindow::stationary(Side::Left, 0.0);
        let e = embed(&w, None, cfg, &FeatureScaler::identity(134)).unwrap();
        let mut expected = vec![0.0; 134];
        expected[120 + 1] = 1.0; // start zone: left warning
        expected[120 + 6] = 1.0; // end zone: left warning
        expected[133] = 1.0; // still ratio
        assert_eq!(e.values, expected);
    }

    #[test]
    fn external_segment_leads() {
        let cfg = FeatureConfig { external_dim: 2 };
        let w = MotionWindow::stationary(Side::Left, 6.0);
        let s = FeatureScaler::identity(136);
        let e = embed(&w, Some(&[1.0, 2.0]), cfg, &s).unwrap();
        assert_eq!(&e.values[..2], &[1.0, 2.0]);
        assert_eq!(e.layout.arm(), 2..122);
        assert!(matches!(
            embed(&w, Some(&[1.0]), cfg, &s),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(embed(&w, None, cfg, &s).is_err());
        assert!(embed(&w, Some(&[1.0]), FeatureConfig::default(), &s).is_err());
    }

    #[test]
    fn scaler_arithmetic() {
        let rows = vec![vec![1.0, 10.0, 5.0], vec![3.0, 10.0, -5.0]];
        let s = FeatureScaler::fit(&rows).unwrap();
        assert_eq!(s.mean, vec![2.0, 10.0, 0.0]);
        assert_eq!(s.std, vec![1.0, STD_FLOOR, 5.0]);
        // (4-2)/1, (10-10)/1e-8, (2.5-0)/5
        assert_eq!(s.transform(&[4.0, 10.0, 2.5]).unwrap(), vec![2.0, 0.0, 0.5]);
        let hand = FeatureScaler {
            mean: vec![1.0, -2.0, 0.5],
            std: vec![2.0, 4.0, 0.25],
        };
        assert_eq!(hand.transform(&[3.0, 2.0, 1.0]).unwrap(), vec![1.0, 1.0, 2.0]);
    }

    proptest::proptest! {
        #[test]
        fn translation_changes_only_zones(
            steps in proptest::collection::vec(-0.1f64..0.1, 19),
            shift in -3.0f64..3.0,
        ) {
            let mut xs = vec![7.0];
            for s in &steps { let last = *xs.last().unwrap(); xs.push(last + s); }
            let a = global_distance_features(&left_window(xs.clone())).unwrap().to_vec();
            let b = global_distance_features(&left_window(xs.iter().map(|x| x + shift).collect())).unwrap().to_vec();
            for i in [0usize, 11, 12, 13] {
                proptest::prop_assert!((a[i] - b[i]).abs() < 1e-9 * (1.0 + a[i].abs()));
            }
            let g = global_distance_features(&left_window(xs)).unwrap();
            proptest::prop_assert!(g.max_forward_disp >= 0.0 && g.max_backward_disp >= 0.0);
            proptest::prop_assert!(g.peak_to_median_speed >= 1.0);
        }
    }
}
