//! Shared domain types and the strip coordinate system.
//!
//! Positions are meters along the strip, measured from the left end. The left
//! fencer faces +x and the right fencer faces -x; every "forward" quantity in
//! the crate is expressed through [`Side::forward_sign`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priority::PriorityTrace;

/// Length of the piste in meters.
pub const STRIP_LENGTH: f64 = 14.0;
/// Width of the piste in meters.
pub const STRIP_WIDTH: f64 = 2.0;
/// Frames per motion window.
pub const WINDOW_FRAMES: usize = 20;
/// Dominant-arm joints carried per frame (elbow, wrist).
pub const ARM_JOINTS: usize = 2;
/// Default number of action clusters.
pub const DEFAULT_ACTION_COUNT: usize = 30;

/// Piste line positions in meters: warning, en garde, middle, en garde, warning.
pub const LINE_POSITIONS: [f64; 5] = [2.0, 5.0, 7.0, 9.0, 12.0];

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StripPosition(f64);

impl StripPosition {
    pub fn new(meters: f64) -> Self {
        StripPosition(meters)
    }

    pub fn meters(self) -> f64 {
        self.0
    }

    pub fn is_in_bounds(self) -> bool {
        (0.0..=STRIP_LENGTH).contains(&self.0)
    }

    pub fn zone(self) -> Result<Zone> {
        zone_of(self.0)
    }
}

impl From<f64> for StripPosition {
    fn from(x: f64) -> Self {
        StripPosition(x)
    }
}

/// The five strip regions bounded by the warning and en garde lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    LeftWarning,
    LeftEnGarde,
    Middle,
    RightEnGarde,
    RightWarning,
    OutOfBounds,
}

impl Zone {
    pub const ON_STRIP: [Zone; 5] = [
        Zone::LeftWarning,
        Zone::LeftEnGarde,
        Zone::Middle,
        Zone::RightEnGarde,
        Zone::RightWarning,
    ];

    /// Slot in a 5-wide one-hot encoding; `None` for [`Zone::OutOfBounds`].
    pub fn index(self) -> Option<usize> {
        Zone::ON_STRIP.iter().position(|z| *z == self)
    }
}

/// Maps a strip coordinate to its zone. Intervals are half-open except the
/// right warning zone, which includes the strip end at 14 m.
pub fn zone_of(x: f64) -> Result<Zone> {
    if !x.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite strip position {x}")));
    }
    let zone = if !(0.0..=STRIP_LENGTH).contains(&x) {
        Zone::OutOfBounds
    } else if x < 2.0 {
        Zone::LeftWarning
    } else if x < 5.0 {
        Zone::LeftEnGarde
    } else if x < 9.0 {
        Zone::Middle
    } else if x < 12.0 {
        Zone::RightEnGarde
    } else {
        Zone::RightWarning
    };
    Ok(zone)
}

/// Gap between the fencers, `right - left`. Negative once they have crossed.
pub fn relative_distance(left: StripPosition, right: StripPosition) -> f64 {
    right.meters() - left.meters()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Sign of the fencer's forward direction along the strip axis.
    pub fn forward_sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn opponent(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

/// Index of a stage-2 skill cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub u16);

impl ActionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Checked constructor against an action vocabulary of `count` clusters.
    pub fn checked(id: usize, count: usize) -> Result<ActionId> {
        if id >= count || id > u16::MAX as usize {
            return Err(Error::InvalidAction { id, count });
        }
        Ok(ActionId(id as u16))
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

/// Right-of-way state from one fencer's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PriorityMode {
    /// Neither fencer holds priority.
    #[serde(rename = "MM")]
    Neutral,
    /// This fencer holds priority.
    #[serde(rename = "P_NP")]
    Holding,
    /// The opponent holds priority.
    #[serde(rename = "NP_P")]
    Opposing,
}

impl PriorityMode {
    pub const ALL: [PriorityMode; 3] = [PriorityMode::Neutral, PriorityMode::Holding, PriorityMode::Opposing];

    /// The same instant seen from the other fencer.
    pub fn reflect(self) -> PriorityMode {
        match self {
            PriorityMode::Neutral => PriorityMode::Neutral,
            PriorityMode::Holding => PriorityMode::Opposing,
            PriorityMode::Opposing => PriorityMode::Holding,
        }
    }

    /// Mode in which `side` holds priority, expressed from the left fencer's view.
    pub fn favoring(side: Side) -> PriorityMode {
        match side {
            Side::Left => PriorityMode::Holding,
            Side::Right => PriorityMode::Opposing,
        }
    }

    /// The fencer holding priority, if any, given a left-perspective mode.
    pub fn holder(self) -> Option<Side> {
        match self {
            PriorityMode::Neutral => None,
            PriorityMode::Holding => Some(Side::Left),
            PriorityMode::Opposing => Some(Side::Right),
        }
    }

    /// Left-perspective mode re-expressed from `side`'s perspective.
    pub fn for_side(self, side: Side) -> PriorityMode {
        match side {
            Side::Left => self,
            Side::Right => self.reflect(),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            PriorityMode::Neutral => "MM",
            PriorityMode::Holding => "P_NP",
            PriorityMode::Opposing => "NP_P",
        }
    }
}

impl fmt::Display for PriorityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for PriorityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .collect::<String>()
            .to_ascii_uppercase();
        match norm.as_str() {
            "MM" => Ok(PriorityMode::Neutral),
            "PNP" => Ok(PriorityMode::Holding),
            "NPP" => Ok(PriorityMode::Opposing),
            _ => Err(Error::InvalidInput(format!(
                "unknown priority mode {s:?} (expected MM, P-NP or NP-P)"
            ))),
        }
    }
}

/// Where a window came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WindowSource {
    pub bout_id: String,
    pub start_frame: usize,
}

/// One fencer's motion over a fixed number of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionWindow {
    pub side: Side,
    /// Axis-angle rotations, frame-major, elbow then wrist, radians.
    pub arm_rotations: Vec<[f64; 3]>,
    /// Root position along the strip for each frame.
    pub root_x: Vec<f64>,
    pub scored_light: bool,
    #[serde(default)]
    pub source: WindowSource,
}

impl MotionWindow {
    pub fn frame_count(&self) -> usize {
        self.root_x.len()
    }

    /// A window that never moves: constant root position, zero rotations.
    pub fn stationary(side: Side, x: f64) -> MotionWindow {
        MotionWindow {
            side,
            arm_rotations: vec![[0.0; 3]; WINDOW_FRAMES * ARM_JOINTS],
            root_x: vec![x; WINDOW_FRAMES],
            scored_light: false,
            source: WindowSource::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.root_x.len() != WINDOW_FRAMES {
            return Err(Error::InvalidInput(format!(
                "window has {} root positions, expected {WINDOW_FRAMES}",
                self.root_x.len()
            )));
        }
        if self.arm_rotations.len() != WINDOW_FRAMES * ARM_JOINTS {
            return Err(Error::InvalidInput(format!(
                "window has {} joint rotations, expected {}",
                self.arm_rotations.len(),
                WINDOW_FRAMES * ARM_JOINTS
            )));
        }
        Ok(())
    }

    /// Last-minus-first root position, signed along this fencer's forward direction.
    pub fn forward_displacement(&self) -> f64 {
        match (self.root_x.first(), self.root_x.last()) {
            (Some(first), Some(last)) => self.side.forward_sign() * (last - first),
            _ => 0.0,
        }
    }

    /// Frame span `[start, start + frame_count)` within the source bout.
    pub fn frame_span(&self) -> std::ops::Range<usize> {
        self.source.start_frame..self.source.start_frame + self.frame_count()
    }
}

/// One touch after windowing: aligned per-fencer windows plus per-step metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoutRecord {
    pub touch_id: String,
    pub windows_left: Vec<MotionWindow>,
    pub windows_right: Vec<MotionWindow>,
    /// Priority annotation, left fencer's perspective. `None` until annotated.
    pub priority: Option<PriorityTrace>,
    /// Gap at the start of each window, `right - left`.
    pub distances: Vec<f64>,
    pub winner: Option<Side>,
    /// Optional per-window external embeddings; empty when absent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub external_left: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub external_right: Vec<Vec<f64>>,
}

impl BoutRecord {
    pub fn len(&self) -> usize {
        self.windows_left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows_left.is_empty()
    }

    pub fn windows(&self, side: Side) -> &[MotionWindow] {
        match side {
            Side::Left => &self.windows_left,
            Side::Right => &self.windows_right,
        }
    }

    /// External embedding for window `t` of `side`, if the touch carries them.
    pub fn external(&self, side: Side, t: usize) -> Option<&[f64]> {
        let ext = match side {
            Side::Left => &self.external_left,
            Side::Right => &self.external_right,
        };
        ext.get(t).map(Vec::as_slice)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.windows_left.len();
        for (side, ext) in [("left", &self.external_left), ("right", &self.external_right)] {
            if !ext.is_empty() && ext.len() != n {
                return Err(Error::Validation(format!(
                    "touch {}: {} {side} external embeddings for {n} windows",
                    self.touch_id,
                    ext.len()
                )));
            }
        }
        if self.windows_right.len() != n || self.distances.len() != n {
            return Err(Error::Validation(format!(
                "touch {}: misaligned sequences (left {}, right {}, distances {})",
                self.touch_id,
                n,
                self.windows_right.len(),
                self.distances.len()
            )));
        }
        if let Some(trace) = &self.priority {
            if trace.modes.len() != n {
                return Err(Error::Validation(format!(
                    "touch {}: {} priority modes for {n} windows",
                    self.touch_id,
                    trace.modes.len()
                )));
            }
        }
        self.windows_left
            .iter()
            .chain(&self.windows_right)
            .try_for_each(MotionWindow::validate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zones_follow_line_positions() {
        assert_eq!(zone_of(1.0).unwrap(), Zone::LeftWarning);
        assert_eq!(zone_of(7.0).unwrap(), Zone::Middle);
        assert_eq!(zone_of(12.0).unwrap(), Zone::RightWarning);
        assert_eq!(zone_of(15.0).unwrap(), Zone::OutOfBounds);
        assert_eq!(zone_of(-0.1).unwrap(), Zone::OutOfBounds);
        assert_eq!(zone_of(0.0).unwrap(), Zone::LeftWarning);
        assert_eq!(zone_of(14.0).unwrap(), Zone::RightWarning);
        assert_eq!(zone_of(2.0).unwrap(), Zone::LeftEnGarde);
        assert_eq!(zone_of(5.0).unwrap(), Zone::Middle);
        assert_eq!(zone_of(9.0).unwrap(), Zone::RightEnGarde);
        assert!(zone_of(f64::NAN).is_err());
        assert!(zone_of(f64::INFINITY).is_err());
    }

    #[test]
    fn zone_boundaries_sit_on_lines() {
        // Middle line at 7 m is not a boundary.
        assert_eq!(zone_of(6.999).unwrap(), zone_of(7.001).unwrap());
        for b in [2.0, 5.0, 9.0, 12.0] {
            assert_ne!(zone_of(b - 1e-9).unwrap(), zone_of(b).unwrap());
        }
    }

    #[test]
    fn relative_distance_examples() {
        let d = |a: f64, b: f64| relative_distance(a.into(), b.into());
        assert_eq!(d(5.0, 9.0), 4.0);
        assert_eq!(d(7.0, 7.0), 0.0);
        assert_eq!(d(8.0, 6.5), -1.5);
    }

    #[test]
    fn mode_reflection_and_parsing() {
        for m in PriorityMode::ALL {
            assert_eq!(m.reflect().reflect(), m);
            assert_eq!(m.label().parse::<PriorityMode>().unwrap(), m);
        }
        assert_eq!("P-NP".parse::<PriorityMode>().unwrap(), PriorityMode::Holding);
        assert_eq!("np-p".parse::<PriorityMode>().unwrap(), PriorityMode::Opposing);
        assert_eq!("M-M".parse::<PriorityMode>().unwrap(), PriorityMode::Neutral);
        assert!("XX".parse::<PriorityMode>().is_err());
        assert_eq!(serde_json::to_string(&PriorityMode::Holding).unwrap(), "\"P_NP\"");
    }

    #[test]
    fn forward_displacement_respects_side() {
        let mut w = MotionWindow::stationary(Side::Right, 9.0);
        *w.root_x.last_mut().unwrap() = 8.5;
        assert!((w.forward_displacement() - 0.5).abs() < 1e-12);
        w.side = Side::Left;
        assert!((w.forward_displacement() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn action_id_bounds() {
        assert!(ActionId::checked(29, 30).is_ok());
        assert!(matches!(
            ActionId::checked(30, 30),
            Err(Error::InvalidAction { id: 30, count: 30 })
        ));
    }

    proptest::proptest! {
        #[test]
        fn distance_is_antisymmetric(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let ab = relative_distance(a.into(), b.into());
            let ba = relative_distance(b.into(), a.into());
            proptest::prop_assert_eq!(ab, -ba);
        }

        #[test]
        fn zone_total_on_strip(x in 0.0f64..=14.0) {
            let z = zone_of(x).unwrap();
            proptest::prop_assert!(z.index().is_some());
        }
    }
}
