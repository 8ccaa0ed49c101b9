//! Camera-to-strip calibration from piste line observations.
//!
//! Each visible piste line contributes two correspondences: the pixel where it
//! meets the far border maps to `(x_line, 0)` and the near border to
//! `(x_line, 2)`. The homography is fitted with a normalized DLT and maps
//! pixels onto the strip plane (meters).

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{StripPosition, STRIP_WIDTH};

/// Minimum number of distinct lines needed to fix a homography.
pub const MIN_LINES: usize = 2;

const INFINITY_EPS: f64 = 1e-12;
const DET_EPS: f64 = 1e-12;
const RANK_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineId {
    LeftWarning,
    LeftEnGarde,
    Middle,
    RightEnGarde,
    RightWarning,
}

impl LineId {
    pub const ALL: [LineId; 5] = [
        LineId::LeftWarning,
        LineId::LeftEnGarde,
        LineId::Middle,
        LineId::RightEnGarde,
        LineId::RightWarning,
    ];

    /// Position of the line along the strip in meters.
    pub fn strip_x(self) -> f64 {
        match self {
            LineId::LeftWarning => 2.0,
            LineId::LeftEnGarde => 5.0,
            LineId::Middle => 7.0,
            LineId::RightEnGarde => 9.0,
            LineId::RightWarning => 12.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineObservation {
    pub line_id: LineId,
    /// Pixel where the line meets the far border.
    pub top_px: [f64; 2],
    /// Pixel where the line meets the near border.
    pub bottom_px: [f64; 2],
}

impl LineObservation {
    /// The two `(pixel, strip)` correspondences this observation contributes.
    pub fn correspondences(&self) -> [([f64; 2], [f64; 2]); 2] {
        let x = self.line_id.strip_x();
        [(self.top_px, [x, 0.0]), (self.bottom_px, [x, STRIP_WIDTH])]
    }
}

/// Pixel-to-strip projective transform, normalized so `h[2][2] = 1` when possible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[[f64; 3]; 3]", try_from = "[[f64; 3]; 3]")]
pub struct Homography {
    matrix: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            matrix: Matrix3::identity(),
        }
    }

    /// Wraps and normalizes a matrix, rejecting non-invertible ones.
    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite homography entry".into()));
        }
        let scale = matrix[(2, 2)];
        let norm = matrix.norm();
        let matrix = if scale.abs() > INFINITY_EPS * norm.max(1.0) {
            matrix / scale
        } else {
            matrix / norm
        };
        let det = matrix.determinant();
        if det.abs() <= DET_EPS {
            return Err(Error::SingularSystem(format!(
                "homography determinant {det:e} is not invertible"
            )));
        }
        Ok(Homography { matrix })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Homography::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.matrix;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self
            .matrix
            .try_inverse()
            .ok_or_else(|| Error::SingularSystem("homography has no inverse".into()))?;
        Homography::new(inv)
    }

    /// Applies the transform to a point, dividing by the homogeneous coordinate.
    pub fn apply(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let q = self.matrix * Vector3::new(p[0], p[1], 1.0);
        if q[2].abs() < INFINITY_EPS {
            return Err(Error::PointAtInfinity(q[2]));
        }
        Ok([q[0] / q[2], q[1] / q[2]])
    }
}

impl From<Homography> for [[f64; 3]; 3] {
    fn from(h: Homography) -> Self {
        h.rows()
    }
}

impl TryFrom<[[f64; 3]; 3]> for Homography {
    type Error = Error;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Homography::from_rows(rows)
    }
}

/// Homography plus how well it reproduces its own inputs (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomographyFit {
    pub homography: Homography,
    pub max_residual: f64,
    pub rms_residual: f64,
}

/// Fits the pixel-to-strip homography from at least two distinct piste lines.
pub fn solve_homography(observations: &[LineObservation]) -> Result<HomographyFit> {
    let mut distinct: Vec<LineId> = observations.iter().map(|o| o.line_id).collect();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < MIN_LINES {
        return Err(Error::InsufficientConstraints {
            needed: MIN_LINES,
            got: distinct.len(),
        });
    }
    for o in observations {
        if o.top_px == o.bottom_px {
            return Err(Error::InvalidInput(format!(
                "{:?}: top and bottom pixels coincide",
                o.line_id
            )));
        }
    }

    let (pixels, strip): (Vec<[f64; 2]>, Vec<[f64; 2]>) =
        observations.iter().flat_map(LineObservation::correspondences).unzip();
    let homography = estimate_homography(&pixels, &strip)?;

    let residuals = pixels
        .iter()
        .zip(&strip)
        .map(|(p, q)| {
            let r = homography.apply(*p)?;
            Ok(((r[0] - q[0]).powi(2) + (r[1] - q[1]).powi(2)).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
    let rms_residual = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();

    Ok(HomographyFit {
        homography,
        max_residual,
        rms_residual,
    })
}

/// Translates the centroid to the origin and scales to mean distance √2.
fn conditioning_transform(pts: &[[f64; 2]]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_dist = pts
        .iter()
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 1e-15 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn transform_point(t: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let q = t * Vector3::new(p[0], p[1], 1.0);
    [q[0] / q[2], q[1] / q[2]]
}

/// Least-squares DLT for `dst ≈ H·src` from four or more correspondences.
pub fn estimate_homography(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Homography> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            expected: src.len(),
            got: dst.len(),
        });
    }
    let n = src.len();
    if n < 4 {
        return Err(Error::InsufficientConstraints {
            needed: MIN_LINES,
            got: n / 2,
        });
    }
    if src.iter().chain(dst).flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite correspondence".into()));
    }

    let t_src = conditioning_transform(src);
    let t_dst = conditioning_transform(dst);

    // Zero rows pad the system to at least 9x9 so the SVD exposes the null vector.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let [sx, sy] = transform_point(&t_src, src[i]);
        let [dx, dy] = transform_point(&t_dst, dst[i]);
        let r = 2 * i;
        a[(r, 3)] = -sx;
        a[(r, 4)] = -sy;
        a[(r, 5)] = -1.0;
        a[(r, 6)] = dy * sx;
        a[(r, 7)] = dy * sy;
        a[(r, 8)] = dy;
        a[(r + 1, 0)] = sx;
        a[(r + 1, 1)] = sy;
        a[(r + 1, 2)] = 1.0;
        a[(r + 1, 6)] = -dx * sx;
        a[(r + 1, 7)] = -dx * sy;
        a[(r + 1, 8)] = -dx;
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::SingularSystem("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    let second_smallest = svd.singular_values[order[1]];
    if largest <= 0.0 || second_smallest / largest < RANK_EPS {
        return Err(Error::SingularSystem(
            "correspondences are degenerate (collinear or repeated)".into(),
        ));
    }
    let h = v_t.row(order[0]);
    let h_norm = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("conditioning transform".into()))?;
    Homography::new(t_dst_inv * h_norm * t_src)
}

/// Projects a pixel onto the strip plane, `(x, y)` in meters.
pub fn project_to_strip(h: &Homography, p: [f64; 2]) -> Result<[f64; 2]> {
    h.apply(p)
}

/// Implicit pixel-space line `a·x + b·y + c = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LineRepr")]
pub struct Line2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LineRepr {
    Implicit { a: f64, b: f64, c: f64 },
    SlopeIntercept { slope: f64, intercept: f64 },
    Points { p0: [f64; 2], p1: [f64; 2] },
}

impl TryFrom<LineRepr> for Line2 {
    type Error = Error;

    fn try_from(repr: LineRepr) -> Result<Self> {
        match repr {
            LineRepr::Implicit { a, b, c } => Ok(Line2 { a, b, c }),
            LineRepr::SlopeIntercept { slope, intercept } => Ok(Line2::from_slope_intercept(slope, intercept)),
            LineRepr::Points { p0, p1 } => Line2::through(p0, p1),
        }
    }
}

impl Line2 {
    /// `y = slope·x + intercept`.
    pub fn from_slope_intercept(slope: f64, intercept: f64) -> Self {
        Line2 {
            a: slope,
            b: -1.0,
            c: intercept,
        }
    }

    pub fn horizontal(y: f64) -> Self {
        Line2::from_slope_intercept(0.0, y)
    }

    pub fn through(p0: [f64; 2], p1: [f64; 2]) -> Result<Self> {
        if p0 == p1 {
            return Err(Error::InvalidInput("line through identical points".into()));
        }
        let a = p1[1] - p0[1];
        let b = p0[0] - p1[0];
        let c = -(a * p0[0] + b * p0[1]);
        Ok(Line2 { a, b, c })
    }

    /// `y` where the vertical line `x = x0` meets this line.
    pub fn intersect_vertical(&self, x0: f64) -> Option<f64> {
        let scale = self.a.abs().max(self.b.abs());
        if scale == 0.0 || self.b.abs() < 1e-12 * scale {
            return None;
        }
        let y = -(self.a * x0 + self.c) / self.b;
        y.is_finite().then_some(y)
    }
}

/// Far and near piste borders in pixel space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BorderLines {
    pub top: Line2,
    pub bottom: Line2,
}

/// Casts a vertical ray through the fencer's median mask column, takes the
/// midpoint between the two border hits and projects it onto the strip.
pub fn fencer_strip_x(median_px_x: f64, borders: &BorderLines, h: &Homography) -> Result<StripPosition> {
    let top = borders
        .top
        .intersect_vertical(median_px_x)
        .ok_or(Error::NoIntersection(median_px_x, "top"))?;
    let bottom = borders
        .bottom
        .intersect_vertical(median_px_x)
        .ok_or(Error::NoIntersection(median_px_x, "bottom"))?;
    let [x, _] = project_to_strip(h, [median_px_x, 0.5 * (top + bottom)])?;
    Ok(StripPosition::new(x))
}

/// Lower weighted median of mask columns given as `(column, pixel_count)`.
pub fn median_mask_column(columns: &[(i64, u64)]) -> Result<i64> {
    let mut cols: Vec<(i64, u64)> = columns.iter().copied().filter(|(_, n)| *n > 0).collect();
    let total: u64 = cols.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::InvalidInput("empty segmentation mask".into()));
    }
    cols.sort_by_key(|(c, _)| *c);
    let target = (total - 1) / 2;
    let mut seen = 0u64;
    for (col, n) in cols {
        seen += n;
        if seen > target {
            return Ok(col);
        }
    }
    unreachable!("target index lies below the total count")
}

/// How frames without their own calibration borrow one from another frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InheritPolicy {
    /// Closest calibrated frame; ties go to the earlier frame.
    #[default]
    Nearest,
    /// Most recent calibrated frame at or before this one.
    Previous,
    /// No inheritance; uncalibrated frames yield no positions.
    None,
}

/// A fencer's pixel evidence: either a precomputed median column or a mask histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FencerPixels {
    Median { median_column: f64 },
    Mask { mask_columns: Vec<(i64, u64)> },
}

impl FencerPixels {
    pub fn median_column(&self) -> Result<f64> {
        match self {
            FencerPixels::Median { median_column } => Ok(*median_column),
            FencerPixels::Mask { mask_columns } => Ok(median_mask_column(mask_columns)? as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFrame {
    pub frame: usize,
    #[serde(default)]
    pub lines: Vec<LineObservation>,
    #[serde(default)]
    pub borders: Option<BorderLines>,
    #[serde(default)]
    pub left: Option<FencerPixels>,
    #[serde(default)]
    pub right: Option<FencerPixels>,
}

pub const CALIBRATION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub schema_version: u32,
    pub frames: Vec<CalibrationFrame>,
}

/// Per-frame output of [`calibrate_frames`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePositions {
    pub frame: usize,
    /// Frame whose homography was used (this frame when self-calibrated).
    pub homography_frame: Option<usize>,
    pub max_residual: Option<f64>,
    pub left_x: Option<f64>,
    pub right_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

fn borrow_index(solved: &[usize], frame: usize, policy: InheritPolicy) -> Option<usize> {
    match policy {
        InheritPolicy::None => solved.iter().position(|&f| f == frame),
        InheritPolicy::Previous => solved.iter().rposition(|&f| f <= frame),
        InheritPolicy::Nearest => solved
            .iter()
            .enumerate()
            .min_by_key(|(_, &f)| (f.abs_diff(frame), f))
            .map(|(i, _)| i),
    }
}

/// Solves each frame's homography from its visible lines and projects both
/// fencers. Frames with fewer than two lines (or borders) borrow from another
/// frame according to `policy`. Problems are reported per frame.
pub fn calibrate_frames(file: &CalibrationFile, policy: InheritPolicy) -> Vec<FramePositions> {
    let mut fits: Vec<(usize, HomographyFit)> = Vec::new();
    let mut fit_errors: Vec<(usize, String)> = Vec::new();
    for f in &file.frames {
        if f.lines.is_empty() {
            continue;
        }
        match solve_homography(&f.lines) {
            Ok(fit) => fits.push((f.frame, fit)),
            Err(e) => fit_errors.push((f.frame, e.to_string())),
        }
    }
    fits.sort_by_key(|(frame, _)| *frame);
    let solved: Vec<usize> = fits.iter().map(|(f, _)| *f).collect();

    let mut with_borders: Vec<(usize, BorderLines)> = file
        .frames
        .iter()
        .filter_map(|f| f.borders.map(|b| (f.frame, b)))
        .collect();
    with_borders.sort_by_key(|(frame, _)| *frame);
    let border_frames: Vec<usize> = with_borders.iter().map(|(f, _)| *f).collect();

    file.frames
        .iter()
        .map(|f| {
            let mut out = FramePositions {
                frame: f.frame,
                homography_frame: None,
                max_residual: None,
                left_x: None,
                right_x: None,
                errors: fit_errors
                    .iter()
                    .filter(|(frame, _)| *frame == f.frame)
                    .map(|(_, e)| e.clone())
                    .collect(),
            };
            let Some(hi) = borrow_index(&solved, f.frame, policy) else {
                out.errors.push("no homography available".into());
                return out;
            };
            let (h_frame, fit) = &fits[hi];
            out.homography_frame = Some(*h_frame);
            out.max_residual = Some(fit.max_residual);
            let Some(bi) = borrow_index(&border_frames, f.frame, policy) else {
                out.errors.push("no piste borders available".into());
                return out;
            };
            let borders = &with_borders[bi].1;
            let locate = |pixels: &Option<FencerPixels>| -> Option<Result<f64>> {
                pixels.as_ref().map(|p| {
                    let col = p.median_column()?;
                    fencer_strip_x(col, borders, &fit.homography).map(StripPosition::meters)
                })
            };
            for (side, pixels) in [("left", &f.left), ("right", &f.right)] {
                match locate(pixels) {
                    Some(Ok(x)) if side == "left" => out.left_x = Some(x),
                    Some(Ok(x)) => out.right_x = Some(x),
                    Some(Err(e)) => out.errors.push(format!("{side}: {e}")),
                    None => {}
                }
            }
            out
        })
        .collect()
}
