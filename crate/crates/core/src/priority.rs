//! Displacement-based priority annotation and scoring-light attachment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{MotionWindow, PriorityMode, Side};

/// Displacement margin (meters) one fencer must gain over the other to take priority.
pub const DEFAULT_DELTA: f64 = 0.3;

/// Per-window priority modes, left fencer's perspective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityTrace {
    pub modes: Vec<PriorityMode>,
    /// Left forward displacement minus right forward displacement, per window.
    pub delta_series: Vec<f64>,
    pub delta: f64,
}

/// Mode for the next window given this window's displacement difference.
pub fn next_mode(previous: PriorityMode, displacement_diff: f64, delta: f64) -> PriorityMode {
    if displacement_diff > delta {
        PriorityMode::Holding
    } else if displacement_diff < -delta {
        PriorityMode::Opposing
    } else {
        previous
    }
}

/// Starts at MM and applies each difference to produce the following mode.
/// Returns `diffs.len() + 1` modes.
pub fn propagate_modes(diffs: &[f64], delta: f64) -> Vec<PriorityMode> {
    let mut modes = Vec::with_capacity(diffs.len() + 1);
    modes.push(PriorityMode::Neutral);
    for &d in diffs {
        let prev = *modes.last().expect("seeded");
        modes.push(next_mode(prev, d, delta));
    }
    modes
}

pub fn annotate_priority(
    windows_left: &[MotionWindow],
    windows_right: &[MotionWindow],
    delta: f64,
) -> Result<PriorityTrace> {
    if windows_left.len() != windows_right.len() {
        return Err(Error::Validation(format!(
            "misaligned windows: {} left, {} right",
            windows_left.len(),
            windows_right.len()
        )));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::Config(format!("delta must be finite and >= 0, got {delta}")));
    }
    let delta_series: Vec<f64> = windows_left
        .iter()
        .zip(windows_right)
        .map(|(l, r)| l.forward_displacement() - r.forward_displacement())
        .collect();
    let modes = if delta_series.is_empty() {
        Vec::new()
    } else {
        propagate_modes(&delta_series[..delta_series.len() - 1], delta)
    };
    Ok(PriorityTrace {
        modes,
        delta_series,
        delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LightEvent {
    pub frame: usize,
    pub side: Side,
}

/// Sets `scored_light` on every window whose frame span contains a light of
/// its own side. `total_frames` bounds valid event frames.
pub fn attach_lights(windows: &mut [MotionWindow], events: &[LightEvent], total_frames: usize) -> Result<()> {
    if let Some(e) = events.iter().find(|e| e.frame >= total_frames) {
        return Err(Error::Validation(format!(
            "light event at frame {} outside bout of {total_frames} frames",
            e.frame
        )));
    }
    for w in windows.iter_mut() {
        let span = w.frame_span();
        w.scored_light = events.iter().any(|e| e.side == w.side && span.contains(&e.frame));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::WINDOW_FRAMES;

    fn moving(side: Side, start: f64, forward: f64, frame: usize) -> MotionWindow {
        let mut w = MotionWindow::stationary(side, start);
        *w.root_x.last_mut().unwrap() = start + side.forward_sign() * forward;
        w.source.start_frame = frame;
        w
    }

    #[test]
    fn left_gains_priority() {
        let left = vec![moving(Side::Left, 5.0, 0.5, 0), moving(Side::Left, 5.5, 0.0, 20)];
        let right = vec![moving(Side::Right, 9.0, 0.1, 0), moving(Side::Right, 8.9, 0.0, 20)];
        let trace = annotate_priority(&left, &right, DEFAULT_DELTA).unwrap();
        assert!((trace.delta_series[0] - 0.4).abs() < 1e-12);
        assert_eq!(trace.modes, vec![PriorityMode::Neutral, PriorityMode::Holding]);
    }

    #[test]
    fn stationary_stays_neutral() {
        let left: Vec<_> = (0..5).map(|i| moving(Side::Left, 5.0, 0.0, 20 * i)).collect();
        let right: Vec<_> = (0..5).map(|i| moving(Side::Right, 9.0, 0.0, 20 * i)).collect();
        let trace = annotate_priority(&left, &right, DEFAULT_DELTA).unwrap();
        assert_eq!(trace.modes, vec![PriorityMode::Neutral; 5]);
    }

    #[test]
    fn hand_traced_sequence() {
        use PriorityMode::*;
        assert_eq!(
            propagate_modes(&[0.4, 0.0, -0.5], DEFAULT_DELTA),
            vec![Neutral, Holding, Holding, Opposing]
        );
        // Exactly at the threshold retains the mode.
        assert_eq!(propagate_modes(&[0.3, -0.3], 0.3), vec![Neutral; 3]);
    }

    #[test]
    fn misaligned_rejected() {
        let l = vec![moving(Side::Left, 5.0, 0.0, 0)];
        assert!(annotate_priority(&l, &[], DEFAULT_DELTA).is_err());
        assert!(annotate_priority(&[], &[], DEFAULT_DELTA).unwrap().modes.is_empty());
    }

    #[test]
    fn lights() {
        let mut ws: Vec<MotionWindow> = (0..3)
            .flat_map(|i| {
                [
                    moving(Side::Left, 5.0, 0.0, i * WINDOW_FRAMES),
                    moving(Side::Right, 9.0, 0.0, i * WINDOW_FRAMES),
                ]
            })
            .collect();
        attach_lights(&mut ws, &[], 60).unwrap();
        assert!(ws.iter().all(|w| !w.scored_light));

        attach_lights(
            &mut ws,
            &[LightEvent {
                frame: 25,
                side: Side::Left,
            }],
            60,
        )
        .unwrap();
        let lit: Vec<_> = ws.iter().map(|w| w.scored_light).collect();
        assert_eq!(lit, vec![false, false, true, false, false, false]);

        let both = [
            LightEvent {
                frame: 41,
                side: Side::Left,
            },
            LightEvent {
                frame: 59,
                side: Side::Right,
            },
        ];
        attach_lights(&mut ws, &both, 60).unwrap();
        let lit: Vec<_> = ws.iter().map(|w| w.scored_light).collect();
        assert_eq!(lit, vec![false, false, false, false, true, true]);

        assert!(attach_lights(
            &mut ws,
            &[LightEvent {
                frame: 60,
                side: Side::Left
            }],
            60
        )
        .is_err());
    }

    fn mirror(w: &MotionWindow) -> MotionWindow {
        let mut m = w.clone();
        m.side = w.side.opponent();
        m.root_x = w.root_x.iter().map(|x| 14.0 - x).collect();
        m
    }

    proptest::proptest! {
        #[test]
        fn changes_only_past_threshold(diffs in proptest::collection::vec(-1.0f64..1.0, 0..40)) {
            let modes = propagate_modes(&diffs, DEFAULT_DELTA);
            proptest::prop_assert_eq!(modes[0], PriorityMode::Neutral);
            for t in 1..modes.len() {
                if modes[t] != modes[t - 1] {
                    proptest::prop_assert!(diffs[t - 1].abs() > DEFAULT_DELTA);
                }
            }
        }

        #[test]
        fn swapping_fencers_reflects_modes(moves in proptest::collection::vec((-0.8f64..0.8, -0.8f64..0.8), 1..20)) {
            let left: Vec<_> = moves.iter().enumerate().map(|(i, (a, _))| moving(Side::Left, 5.0, *a, 20 * i)).collect();
            let right: Vec<_> = moves.iter().enumerate().map(|(i, (_, b))| moving(Side::Right, 9.0, *b, 20 * i)).collect();
            let trace = annotate_priority(&left, &right, DEFAULT_DELTA).unwrap();
            let sl: Vec<_> = right.iter().map(mirror).collect();
            let sr: Vec<_> = left.iter().map(mirror).collect();
            let swapped = annotate_priority(&sl, &sr, DEFAULT_DELTA).unwrap();
            for (a, b) in trace.modes.iter().zip(&swapped.modes) {
                proptest::prop_assert_eq!(a.reflect(), *b);
            }
        }
    }
}
