//! Synthetic data: random and planted-strategy touch sequences, toy skill
//! models with fixed clip displacements, and raw bout recordings built from
//! per-action motion prototypes.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::mirror_rotation;
use crate::io::{BoutFile, BoutHeader, FencerFrame, FencerInfo, FrameLine};
use crate::kmeans::KMeansModel;
use crate::labels::default_labels;
use crate::priority::{next_mode, LightEvent, DEFAULT_DELTA};
use crate::skills::SkillModel;
use crate::strategy::{TouchSequence, TouchStep};
use crate::types::{ActionId, MotionWindow, PriorityMode, Side, WindowSource, STRIP_LENGTH, WINDOW_FRAMES};

/// Uniformly random sequences; modes follow a random walk.
pub fn random_sequences(action_count: usize, touches: usize, max_steps: usize, seed: u64) -> Vec<TouchSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..touches)
        .map(|i| {
            let len = rng.random_range(1..=max_steps.max(1));
            let mut mode = PriorityMode::Neutral;
            let steps = (0..len)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        mode = PriorityMode::ALL[rng.random_range(0..3)];
                    }
                    TouchStep {
                        left: ActionId(rng.random_range(0..action_count) as u16),
                        right: ActionId(rng.random_range(0..action_count) as u16),
                        // Quantized so repeated distances occur.
                        distance: rng.random_range(4..=40) as f64 / 8.0,
                        mode,
                    }
                })
                .collect();
            TouchSequence {
                touch_id: format!("random-{i}"),
                steps,
            }
        })
        .collect()
}

/// A deterministic policy: the next action is a fixed function of the
/// fencer's mode and the previous action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedStrategy {
    pub action_count: usize,
    /// Indexed `[mode][own_prev][opp_prev]`.
    table: Vec<ActionId>,
    /// Per-step probability that the left-perspective mode changes.
    pub mode_switch: f64,
}

impl PlantedStrategy {
    pub fn random(action_count: usize, seed: u64) -> PlantedStrategy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..3 * action_count * action_count)
            .map(|_| ActionId(rng.random_range(0..action_count) as u16))
            .collect();
        PlantedStrategy {
            action_count,
            table,
            mode_switch: 0.1,
        }
    }

    pub fn next(&self, mode: PriorityMode, own_prev: ActionId, opp_prev: ActionId) -> ActionId {
        let k = self.action_count;
        self.table[(mode.index() * k + own_prev.index()) * k + opp_prev.index()]
    }

    /// Sequences whose first actions are random and every later action follows
    /// the table for both fencers.
    pub fn generate(&self, touches: usize, steps: usize, seed: u64) -> Vec<TouchSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.action_count;
        (0..touches)
            .map(|i| {
                let mut mode = PriorityMode::Neutral;
                let mut left = ActionId(rng.random_range(0..k) as u16);
                let mut right = ActionId(rng.random_range(0..k) as u16);
                let mut out = Vec::with_capacity(steps);
                for t in 0..steps {
                    if t > 0 {
                        if rng.random_bool(self.mode_switch) {
                            mode = PriorityMode::ALL[rng.random_range(0..3)];
                        }
                        let l = self.next(mode, left, right);
                        let r = self.next(mode.reflect(), right, left);
                        (left, right) = (l, r);
                    }
                    out.push(TouchStep {
                        left,
                        right,
                        distance: rng.random_range(1.5..6.0),
                        mode,
                    });
                }
                TouchSequence {
                    touch_id: format!("planted-{i}"),
                    steps: out,
                }
            })
            .collect()
    }
}

/// A window with constant arm pose whose root moves `forward` meters along the
/// fencer's forward direction.
pub fn window_with_displacement(side: Side, start_x: f64, forward: f64, scored_light: bool) -> MotionWindow {
    let n = WINDOW_FRAMES;
    let root_x = (0..n)
        .map(|j| start_x + side.forward_sign() * forward * j as f64 / (n - 1) as f64)
        .collect();
    MotionWindow {
        root_x,
        scored_light,
        ..MotionWindow::stationary(side, start_x)
    }
}

/// Behaviour of one action in a toy skill model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyAction {
    pub forward: f64,
    pub scored_light: bool,
    pub finishing: bool,
}

/// A skill model with one-dimensional centroids `[i]` and a single clip per action.
pub fn toy_skill_model(actions: &[ToyAction]) -> Result<SkillModel> {
    if actions.is_empty() {
        return Err(Error::InvalidInput("toy skill model needs at least one action".into()));
    }
    let k = actions.len();
    let kmeans = KMeansModel {
        k,
        centroids: (0..k).map(|i| vec![i as f64]).collect(),
        inertia: 0.0,
        seed: 0,
    };
    let clips = actions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut w = window_with_displacement(Side::Left, 0.0, a.forward, a.scored_light);
            w.source = WindowSource {
                bout_id: format!("toy-{i}"),
                start_frame: 0,
            };
            vec![w]
        })
        .collect();
    let finishing: BTreeSet<ActionId> = actions
        .iter()
        .enumerate()
        .filter(|(_, a)| a.finishing)
        .map(|(i, _)| ActionId(i as u16))
        .collect();
    let model = SkillModel {
        featurizer: None,
        stage1: kmeans.clone(),
        excluded_stage1: BTreeSet::new(),
        stage2: kmeans,
        labels: default_labels(k),
        finishing,
        clips,
        stage1_points: k,
        stage2_points: k,
    };
    model.validate()?;
    Ok(model)
}

/// Toy actions with forward displacements spread over `[-0.6, 0.6]`; every
/// fifth action is finishing and every seventh fires a light.
pub fn spread_toy_actions(k: usize) -> Vec<ToyAction> {
    (0..k)
        .map(|i| ToyAction {
            forward: if k > 1 {
                -0.6 + 1.2 * i as f64 / (k - 1) as f64
            } else {
                0.0
            },
            scored_light: i % 7 == 6,
            finishing: i % 5 == 4,
        })
        .collect()
}

/// Per-action motion used to render synthetic bouts.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPrototype {
    /// Elbow and wrist base rotations.
    pub arm: [[f64; 3]; 2],
    /// Amplitude of a sinusoidal swing added to the elbow's first component.
    pub swing: f64,
    pub forward: f64,
}

/// Well-separated random prototypes.
pub fn random_prototypes(k: usize, seed: u64) -> Vec<ActionPrototype> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|i| {
            let mut v = || rng.random_range(-1.5..1.5);
            ActionPrototype {
                arm: [[v(), v(), v()], [v(), v(), v()]],
                swing: v() * 0.3,
                forward: -0.6 + 1.2 * ((i * 7) % k) as f64 / (k.max(2) - 1) as f64,
            }
        })
        .collect()
}

/// Renders a bout from per-window action ids. Every rotation component gets
/// uniform jitter of amplitude `noise`.
pub fn render_bout(
    bout_id: &str,
    prototypes: &[ActionPrototype],
    left: &[ActionId],
    right: &[ActionId],
    noise: f64,
    seed: u64,
) -> Result<BoutFile> {
    if left.len() != right.len() {
        return Err(Error::InvalidInput(
            "left and right action sequences differ in length".into(),
        ));
    }
    if let Some(bad) = left.iter().chain(right).find(|a| a.index() >= prototypes.len()) {
        return Err(Error::InvalidAction {
            id: bad.index(),
            count: prototypes.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = move || {
        if noise > 0.0 {
            rng.random_range(-noise..noise)
        } else {
            0.0
        }
    };
    let n = WINDOW_FRAMES;
    let mut x = [5.0, 9.0];
    let mut frames = Vec::with_capacity(left.len() * n);
    for (w, (&l, &r)) in left.iter().zip(right).enumerate() {
        let start = x;
        let protos = [&prototypes[l.index()], &prototypes[r.index()]];
        for j in 0..n {
            let phase = j as f64 / (n - 1) as f64;
            let mut fencer = |s: usize, side: Side| {
                let p = protos[s];
                let root_x = (start[s] + side.forward_sign() * p.forward * phase).clamp(0.0, STRIP_LENGTH);
                let swing = p.swing * (std::f64::consts::PI * phase).sin();
                let mut arm = p.arm;
                arm[0][0] += swing;
                for v in arm.iter_mut().flatten() {
                    *v += jitter();
                }
                if side == Side::Right {
                    // Prototypes are in the left fencer's frame.
                    arm = arm.map(mirror_rotation);
                }
                x[s] = root_x;
                FencerFrame { root_x, arm }
            };
            let lf = fencer(0, Side::Left);
            let rf = fencer(1, Side::Right);
            frames.push(FrameLine {
                frame: w * n + j,
                left: lf,
                right: rf,
            });
        }
    }
    Ok(BoutFile {
        header: BoutHeader {
            bout_id: bout_id.to_string(),
            event: Some("synthetic".into()),
            fps: 25.0,
            left: FencerInfo::default(),
            right: FencerInfo::default(),
            winner: None,
        },
        frames,
        lights: Vec::<LightEvent>::new(),
        external: Vec::new(),
    })
}

/// Priority modes a renderer would produce for these actions, for checking
/// annotation of rendered bouts.
pub fn expected_modes(prototypes: &[ActionPrototype], left: &[ActionId], right: &[ActionId]) -> Vec<PriorityMode> {
    let mut modes = Vec::with_capacity(left.len());
    let mut mode = PriorityMode::Neutral;
    for (&l, &r) in left.iter().zip(right) {
        modes.push(mode);
        mode = next_mode(
            mode,
            prototypes[l.index()].forward - prototypes[r.index()].forward,
            DEFAULT_DELTA,
        );
    }
    modes
}
