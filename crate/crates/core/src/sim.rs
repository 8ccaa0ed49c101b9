//! Turn-based touch simulation.
//!
//! Each turn both fencers pick an action from the same pre-step state, a clip
//! is retrieved for each, and the clips' net forward displacements are applied
//! jointly. Termination is checked in a fixed order (out of bounds, crash,
//! touch registered, terminal action, step cap); if the touch continues the
//! priority mode is updated from lights, finishing actions, then displacement.
//! After any mode change the next actions are drawn from the mode's opening
//! distribution instead of the transition table.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priority::{next_mode, DEFAULT_DELTA};
use crate::skills::SkillModel;
use crate::strategy::{ActionDistribution, ContextSource, StrategyModel};
use crate::types::{ActionId, MotionWindow, PriorityMode, Side, WindowSource, STRIP_LENGTH};

pub const DEFAULT_TAU_CRASH: f64 = 1.5;
pub const DEFAULT_TOUCH_DISTANCE: f64 = 2.0;
pub const DEFAULT_MAX_STEPS: usize = 50;
pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Crash threshold on the fencer gap (meters).
    pub tau_crash: f64,
    /// Gap under which a light or finishing action ends the touch.
    pub touch_distance: f64,
    pub strip_length: f64,
    pub start_left: f64,
    pub start_right: f64,
    pub max_steps: usize,
    /// Displacement margin for the priority displacement cue.
    pub delta: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tau_crash: DEFAULT_TAU_CRASH,
            touch_distance: DEFAULT_TOUCH_DISTANCE,
            strip_length: STRIP_LENGTH,
            start_left: 5.0,
            start_right: 9.0,
            max_steps: DEFAULT_MAX_STEPS,
            delta: DEFAULT_DELTA,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.tau_crash,
            self.touch_distance,
            self.strip_length,
            self.start_left,
            self.start_right,
            self.delta,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Config("non-finite simulation parameter".into()));
        }
        if !(0.0 < self.tau_crash && self.tau_crash < self.touch_distance && self.touch_distance < self.strip_length) {
            return Err(Error::Config(format!(
                "need 0 < tau ({}) < touch distance ({}) < strip length ({})",
                self.tau_crash, self.touch_distance, self.strip_length
            )));
        }
        if self.start_left >= self.start_right {
            return Err(Error::Config(format!(
                "left start {} must be before right start {}",
                self.start_left, self.start_right
            )));
        }
        if self.start_left < 0.0 || self.start_right > self.strip_length {
            return Err(Error::Config("start positions must lie on the strip".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::Config("delta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SimStatus {
    Running,
    OutOfBounds {
        side: Side,
    },
    Crash,
    /// `side` is `None` when both lights fired with neither fencer holding priority.
    TouchRegistered {
        side: Option<Side>,
    },
    /// `side` is `None` when both finished with neither fencer holding priority.
    TerminalAction {
        side: Option<Side>,
    },
    MaxSteps,
}

impl SimStatus {
    pub fn is_running(self) -> bool {
        self == SimStatus::Running
    }
}

impl fmt::Display for SimStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |s: &Option<Side>| s.map_or("none".to_string(), |s| s.to_string());
        match self {
            SimStatus::Running => f.write_str("running"),
            SimStatus::OutOfBounds { side } => write!(f, "out_of_bounds({side})"),
            SimStatus::Crash => f.write_str("crash"),
            SimStatus::TouchRegistered { side: s } => write!(f, "touch_registered({})", side(s)),
            SimStatus::TerminalAction { side: s } => write!(f, "terminal_action({})", side(s)),
            SimStatus::MaxSteps => f.write_str("max_steps"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub left_x: f64,
    pub right_x: f64,
    /// Left fencer's perspective.
    pub mode: PriorityMode,
    pub last_left: Option<ActionId>,
    pub last_right: Option<ActionId>,
    pub step: usize,
    #[serde(flatten)]
    pub status: SimStatus,
    /// Set after a mode change; the next actions open a new segment.
    pub mode_reset: bool,
}

impl SimState {
    pub fn distance(&self) -> f64 {
        self.right_x - self.left_x
    }

    /// Whether the next actions should come from the opening distribution.
    pub fn needs_opening(&self) -> bool {
        self.mode_reset || self.last_left.is_none() || self.last_right.is_none()
    }

    pub fn last(&self, side: Side) -> Option<ActionId> {
        match side {
            Side::Left => self.last_left,
            Side::Right => self.last_right,
        }
    }
}

pub fn init(config: &SimConfig) -> Result<SimState> {
    config.validate()?;
    Ok(SimState {
        left_x: config.start_left,
        right_x: config.start_right,
        mode: PriorityMode::Neutral,
        last_left: None,
        last_right: None,
        step: 0,
        status: SimStatus::Running,
        mode_reset: false,
    })
}

/// What a fencer actually did in one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedMove {
    pub action: ActionId,
    /// Net displacement along the fencer's own forward direction (meters).
    pub displacement: f64,
    pub scored_light: bool,
    pub finishing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<WindowSource>,
}

impl ExecutedMove {
    pub fn from_window(action: ActionId, window: &MotionWindow, skills: &SkillModel) -> Self {
        ExecutedMove {
            action,
            displacement: window.forward_displacement(),
            scored_light: window.scored_light,
            finishing: skills.is_finishing(action),
            clip: Some(window.source.clone()),
        }
    }
}

/// Side that ends the touch when `left`/`right` flags fire; priority decides a tie.
fn decisive_side(left: bool, right: bool, mode: PriorityMode) -> Option<Side> {
    match (left, right) {
        (true, false) => Some(Side::Left),
        (false, true) => Some(Side::Right),
        _ => mode.holder(),
    }
}

/// Priority for the next turn from the three cues, in order.
pub fn update_priority(previous: PriorityMode, left: &ExecutedMove, right: &ExecutedMove, delta: f64) -> PriorityMode {
    // A lone light without a registered touch is a miss: right-of-way passes over.
    match (left.scored_light, right.scored_light) {
        (true, false) => return PriorityMode::favoring(Side::Right),
        (false, true) => return PriorityMode::favoring(Side::Left),
        _ => {}
    }
    match (left.finishing, right.finishing) {
        (true, false) => return PriorityMode::favoring(Side::Right),
        (false, true) => return PriorityMode::favoring(Side::Left),
        _ => {}
    }
    next_mode(previous, left.displacement - right.displacement, delta)
}

/// Applies both moves jointly and evaluates termination.
pub fn step(state: &SimState, left: &ExecutedMove, right: &ExecutedMove, config: &SimConfig) -> Result<SimState> {
    if !state.status.is_running() {
        return Err(Error::Terminated(state.status.to_string()));
    }
    let left_x = state.left_x + Side::Left.forward_sign() * left.displacement;
    let right_x = state.right_x + Side::Right.forward_sign() * right.displacement;
    let distance = right_x - left_x;
    let close = distance < config.touch_distance;
    let off = |x: f64| !(0.0..=config.strip_length).contains(&x);

    let status = if off(left_x) {
        SimStatus::OutOfBounds { side: Side::Left }
    } else if off(right_x) {
        SimStatus::OutOfBounds { side: Side::Right }
    } else if distance < config.tau_crash {
        SimStatus::Crash
    } else if close && (left.scored_light || right.scored_light) {
        SimStatus::TouchRegistered {
            side: decisive_side(left.scored_light, right.scored_light, state.mode),
        }
    } else if close && (left.finishing || right.finishing) {
        SimStatus::TerminalAction {
            side: decisive_side(left.finishing, right.finishing, state.mode),
        }
    } else if state.step + 1 >= config.max_steps {
        SimStatus::MaxSteps
    } else {
        SimStatus::Running
    };

    let mode = if status.is_running() {
        update_priority(state.mode, left, right, config.delta)
    } else {
        state.mode
    };
    Ok(SimState {
        left_x,
        right_x,
        mode,
        last_left: Some(left.action),
        last_right: Some(right.action),
        step: state.step + 1,
        status,
        mode_reset: mode != state.mode,
    })
}

/// A move supplied by a scripted policy; a recorded window overrides retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedMove {
    pub action: ActionId,
    #[serde(default)]
    pub window: Option<MotionWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "script", rename_all = "snake_case")]
pub enum Policy {
    Model,
    Random,
    Scripted(Vec<ScriptedMove>),
    /// Actions arrive from outside (the interactive service); not drivable by `run_touch`.
    External,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Model => "model",
            Policy::Random => "random",
            Policy::Scripted(_) => "scripted",
            Policy::External => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub schema_version: u32,
    pub touch_index: usize,
    pub seed: u64,
    pub config: SimConfig,
    pub left_policy: String,
    pub right_policy: String,
    pub action_count: usize,
    pub strategy_hash: Option<String>,
    pub skills_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub step: usize,
    pub mode_before: PriorityMode,
    pub distance_before: f64,
    /// Actions were drawn from the opening distribution.
    pub opening: bool,
    pub left: ExecutedMove,
    pub right: ExecutedMove,
    pub left_x: f64,
    pub right_x: f64,
    pub distance: f64,
    pub mode_after: PriorityMode,
    #[serde(flatten)]
    pub status: SimStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub steps: Vec<TranscriptStep>,
    pub final_status: SimStatus,
    /// A scripted policy ran out of moves before the touch ended.
    pub truncated: bool,
}

/// Per-touch RNG seed derived from the batch seed.
pub fn touch_seed(seed: u64, touch_index: usize) -> u64 {
    seed ^ (touch_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One fencer's choice for a turn.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub action: ActionId,
    pub window: Option<MotionWindow>,
}

impl From<ActionId> for Choice {
    fn from(action: ActionId) -> Self {
        Choice { action, window: None }
    }
}

/// A touch in progress: state, RNG and the transcript so far.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    state: SimState,
    rng: ChaCha8Rng,
    header: TranscriptHeader,
    steps: Vec<TranscriptStep>,
    truncated: bool,
}

impl Simulation {
    pub fn new(
        config: SimConfig,
        touch_index: usize,
        left: &Policy,
        right: &Policy,
        action_count: usize,
    ) -> Result<Self> {
        let state = init(&config)?;
        let seed = touch_seed(config.seed, touch_index);
        Ok(Simulation {
            config,
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            header: TranscriptHeader {
                schema_version: TRANSCRIPT_SCHEMA_VERSION,
                touch_index,
                seed,
                config,
                left_policy: left.name().into(),
                right_policy: right.name().into(),
                action_count,
                strategy_hash: None,
                skills_hash: None,
            },
            steps: Vec::new(),
            truncated: false,
        })
    }

    pub fn with_model_hashes(mut self, strategy: Option<String>, skills: Option<String>) -> Self {
        self.header.strategy_hash = strategy;
        self.header.skills_hash = skills;
        self
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn steps(&self) -> &[TranscriptStep] {
        &self.steps
    }

    /// The distribution the model would sample `side`'s next action from.
    pub fn model_distribution(&self, side: Side, strategy: &StrategyModel) -> Result<ActionDistribution> {
        let mode = self.state.mode.for_side(side);
        if self.state.needs_opening() {
            return Ok(ActionDistribution {
                probabilities: strategy.initial_distribution(mode),
                source: ContextSource::Observed,
            });
        }
        let own = self.state.last(side).expect("checked by needs_opening");
        let opp = self.state.last(side.opponent()).expect("checked by needs_opening");
        strategy.action_distribution(mode, own, opp, self.state.distance())
    }

    pub fn sample_model_action(&mut self, side: Side, strategy: &StrategyModel) -> Result<ActionId> {
        let mode = self.state.mode.for_side(side);
        if self.state.needs_opening() {
            return strategy.sample_initial_action(mode, &mut self.rng);
        }
        let own = self.state.last(side).expect("checked by needs_opening");
        let opp = self.state.last(side.opponent()).expect("checked by needs_opening");
        strategy.sample_action(mode, own, opp, self.state.distance(), &mut self.rng)
    }

    pub fn random_action(&mut self, action_count: usize) -> ActionId {
        ActionId(self.rng.random_range(0..action_count) as u16)
    }

    fn resolve(&mut self, choice: Choice, skills: &SkillModel) -> Result<ExecutedMove> {
        if choice.action.index() >= skills.action_count() {
            return Err(Error::InvalidAction {
                id: choice.action.index(),
                count: skills.action_count(),
            });
        }
        match &choice.window {
            Some(w) => Ok(ExecutedMove::from_window(choice.action, w, skills)),
            None => {
                let w = skills.retrieve(choice.action, &mut self.rng)?;
                Ok(ExecutedMove::from_window(choice.action, w, skills))
            }
        }
    }

    /// Retrieves clips for both choices and advances one turn.
    pub fn play(&mut self, left: Choice, right: Choice, skills: &SkillModel) -> Result<&TranscriptStep> {
        if !self.state.status.is_running() {
            return Err(Error::Terminated(self.state.status.to_string()));
        }
        let left = self.resolve(left, skills)?;
        let right = self.resolve(right, skills)?;
        self.apply(left, right)
    }

    /// Advances one turn with already-resolved moves.
    pub fn apply(&mut self, left: ExecutedMove, right: ExecutedMove) -> Result<&TranscriptStep> {
        let before = self.state;
        let after = step(&before, &left, &right, &self.config)?;
        self.state = after;
        self.steps.push(TranscriptStep {
            step: before.step,
            mode_before: before.mode,
            distance_before: before.distance(),
            opening: before.needs_opening(),
            left,
            right,
            left_x: after.left_x,
            right_x: after.right_x,
            distance: after.distance(),
            mode_after: after.mode,
            status: after.status,
        });
        Ok(self.steps.last().expect("just pushed"))
    }

    /// Ends a touch whose script ran dry.
    fn truncate(&mut self) {
        self.truncated = true;
        self.state.status = SimStatus::MaxSteps;
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            header: self.header.clone(),
            steps: self.steps.clone(),
            final_status: self.state.status,
            truncated: self.truncated,
        }
    }
}

fn choose(
    sim: &mut Simulation,
    policy: &Policy,
    side: Side,
    cursor: usize,
    strategy: &StrategyModel,
    skills: &SkillModel,
) -> Result<Option<Choice>> {
    Ok(match policy {
        Policy::Model => Some(sim.sample_model_action(side, strategy)?.into()),
        Policy::Random => Some(sim.random_action(skills.action_count()).into()),
        Policy::Scripted(moves) => moves.get(cursor).map(|m| Choice {
            action: m.action,
            window: m.window.clone(),
        }),
        Policy::External => return Err(Error::UnsupportedPolicy { policy: "external" }),
    })
}

/// Plays one touch to completion.
pub fn run_touch(
    strategy: &StrategyModel,
    skills: &SkillModel,
    config: &SimConfig,
    left: &Policy,
    right: &Policy,
    touch_index: usize,
) -> Result<Transcript> {
    if strategy.action_count != skills.action_count() {
        return Err(Error::Config(format!(
            "strategy has {} actions, skills have {}",
            strategy.action_count,
            skills.action_count()
        )));
    }
    let mut sim = Simulation::new(*config, touch_index, left, right, skills.action_count())?;
    while sim.state().status.is_running() {
        let cursor = sim.state().step;
        let l = choose(&mut sim, left, Side::Left, cursor, strategy, skills)?;
        let r = choose(&mut sim, right, Side::Right, cursor, strategy, skills)?;
        match (l, r) {
            (Some(l), Some(r)) => {
                sim.play(l, r, skills)?;
            }
            _ => sim.truncate(),
        }
    }
    Ok(sim.transcript())
}

/// Plays `n` touches in parallel; touch `i` uses [`touch_seed`]`(config.seed, i)`.
pub fn run_batch(
    strategy: &StrategyModel,
    skills: &SkillModel,
    config: &SimConfig,
    left: &Policy,
    right: &Policy,
    n: usize,
) -> Result<Vec<Transcript>> {
    (0..n)
        .into_par_iter()
        .map(|i| run_touch(strategy, skills, config, left, right, i))
        .collect()
}

/// Re-runs a transcript's recorded moves and checks every recorded state.
/// Returns the final state.
pub fn replay(transcript: &Transcript) -> Result<SimState> {
    let config = &transcript.header.config;
    let mut state = init(config)?;
    for (i, rec) in transcript.steps.iter().enumerate() {
        if rec.step != i || rec.mode_before != state.mode || rec.opening != state.needs_opening() {
            return Err(Error::Validation(format!("step {i}: recorded pre-step state diverges")));
        }
        state = step(&state, &rec.left, &rec.right, config)?;
        let same = state.left_x == rec.left_x
            && state.right_x == rec.right_x
            && state.mode == rec.mode_after
            && state.status == rec.status;
        if !same {
            return Err(Error::Validation(format!(
                "step {i}: replay gives {} at ({}, {}), transcript records {} at ({}, {})",
                state.status, state.left_x, state.right_x, rec.status, rec.left_x, rec.right_x
            )));
        }
    }
    if transcript.truncated {
        if !state.status.is_running() && state.status != SimStatus::MaxSteps {
            return Err(Error::Validation(
                "truncated transcript ended on a terminal step".into(),
            ));
        }
        state.status = SimStatus::MaxSteps;
    }
    if state.status != transcript.final_status {
        return Err(Error::Validation(format!(
            "replay ends {}, transcript records {}",
            state.status, transcript.final_status
        )));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mv(action: u16, displacement: f64) -> ExecutedMove {
        ExecutedMove {
            action: ActionId(action),
            displacement,
            scored_light: false,
            finishing: false,
            clip: None,
        }
    }

    fn at(left_x: f64, right_x: f64, mode: PriorityMode) -> SimState {
        SimState {
            left_x,
            right_x,
            mode,
            ..init(&SimConfig::default()).unwrap()
        }
    }

    #[test]
    fn init_examples() {
        let s = init(&SimConfig::default()).unwrap();
        assert_eq!((s.left_x, s.right_x, s.mode), (5.0, 9.0, PriorityMode::Neutral));
        assert_eq!(s.step, 0);
        assert!(s.status.is_running() && s.last_left.is_none());
        let custom = SimConfig {
            start_left: 4.0,
            start_right: 10.0,
            ..SimConfig::default()
        };
        let s = init(&custom).unwrap();
        assert_eq!((s.left_x, s.right_x), (4.0, 10.0));
        let bad = SimConfig {
            start_left: 9.0,
            start_right: 9.0,
            ..SimConfig::default()
        };
        assert!(matches!(init(&bad), Err(Error::Config(_))));
        let bad = SimConfig {
            tau_crash: 2.5,
            ..SimConfig::default()
        };
        assert!(init(&bad).is_err());
    }

    #[test]
    fn crash_on_close_approach() {
        let cfg = SimConfig::default();
        let s = step(&at(5.0, 9.0, PriorityMode::Neutral), &mv(0, 3.6), &mv(1, 0.0), &cfg).unwrap();
        assert!((s.distance() - 0.4).abs() < 1e-12);
        assert_eq!(s.status, SimStatus::Crash);
    }

    #[test]
    fn out_of_bounds_right() {
        let cfg = SimConfig::default();
        // Right fencer retreats (negative forward) from 13.0 to 14.2.
        let s = step(&at(5.0, 13.0, PriorityMode::Neutral), &mv(0, 0.0), &mv(1, -1.2), &cfg).unwrap();
        assert_eq!(s.status, SimStatus::OutOfBounds { side: Side::Right });
    }

    #[test]
    fn light_inside_touch_distance_registers() {
        let cfg = SimConfig::default();
        let mut left = mv(3, 0.0);
        left.scored_light = true;
        let s = step(&at(5.0, 6.8, PriorityMode::Neutral), &left, &mv(1, 0.0), &cfg).unwrap();
        assert_eq!(s.status, SimStatus::TouchRegistered { side: Some(Side::Left) });
    }

    #[test]
    fn finishing_inside_touch_distance_terminates() {
        let cfg = SimConfig::default();
        let mut left = mv(22, 0.0);
        left.finishing = true;
        let s = step(&at(5.0, 6.9, PriorityMode::Neutral), &left, &mv(1, 0.0), &cfg).unwrap();
        assert_eq!(s.status, SimStatus::TerminalAction { side: Some(Side::Left) });
    }

    #[test]
    fn simultaneous_lights_resolve_by_priority() {
        let cfg = SimConfig::default();
        let mut l = mv(3, 0.0);
        let mut r = mv(4, 0.0);
        l.scored_light = true;
        r.scored_light = true;
        let s = step(&at(5.0, 6.8, PriorityMode::Opposing), &l, &r, &cfg).unwrap();
        assert_eq!(
            s.status,
            SimStatus::TouchRegistered {
                side: Some(Side::Right)
            }
        );
        let s = step(&at(5.0, 6.8, PriorityMode::Neutral), &l, &r, &cfg).unwrap();
        assert_eq!(s.status, SimStatus::TouchRegistered { side: None });
    }

    #[test]
    fn termination_order() {
        let cfg = SimConfig::default();
        // Crash beats a light.
        let mut l = mv(3, 3.0);
        l.scored_light = true;
        let s = step(&at(5.0, 9.0, PriorityMode::Neutral), &l, &mv(1, 0.0), &cfg).unwrap();
        assert_eq!(s.status, SimStatus::Crash);
        // Out of bounds beats a crash: crossing off the end.
        let s = step(&at(12.0, 13.5, PriorityMode::Neutral), &mv(0, 2.5), &mv(1, 0.0), &cfg).unwrap();
        assert_eq!(s.status, SimStatus::OutOfBounds { side: Side::Left });
        // Crossed fencers have negative distance, which is a crash.
        let s = step(&at(6.0, 8.0, PriorityMode::Neutral), &mv(0, 1.5), &mv(1, 1.5), &cfg).unwrap();
        assert!(s.distance() < 0.0);
        assert_eq!(s.status, SimStatus::Crash);
    }

    #[test]
    fn step_after_termination_fails() {
        let mut s = at(5.0, 9.0, PriorityMode::Neutral);
        s.status = SimStatus::Crash;
        assert!(matches!(
            step(&s, &mv(0, 0.0), &mv(0, 0.0), &SimConfig::default()),
            Err(Error::Terminated(_))
        ));
    }

    #[test]
    fn max_steps_cap() {
        let cfg = SimConfig {
            max_steps: 3,
            ..SimConfig::default()
        };
        let mut s = init(&cfg).unwrap();
        for _ in 0..3 {
            s = step(&s, &mv(0, 0.0), &mv(0, 0.0), &cfg).unwrap();
        }
        assert_eq!(s.status, SimStatus::MaxSteps);
        assert_eq!(s.step, 3);
    }

    #[test]
    fn missed_light_forfeits_priority() {
        let cfg = SimConfig::default();
        let mut l = mv(3, 0.0);
        l.scored_light = true;
        // Gap 2.5 m: no touch, so the light is a miss.
        let s = step(&at(5.0, 7.5, PriorityMode::Holding), &l, &mv(1, 0.0), &cfg).unwrap();
        assert!(s.status.is_running());
        assert_eq!(s.mode, PriorityMode::Opposing);
        assert!(s.mode_reset);
    }

    #[test]
    fn priority_cues() {
        let d = DEFAULT_DELTA;
        let mut l = mv(22, 0.0);
        let mut r = mv(5, 0.5);
        l.finishing = true;
        r.finishing = true;
        // Both finishing: skip to displacement, right moved 0.5 forward.
        assert_eq!(
            update_priority(PriorityMode::Neutral, &l, &r, d),
            PriorityMode::Opposing
        );
        r.finishing = false;
        assert_eq!(
            update_priority(PriorityMode::Neutral, &l, &r, d),
            PriorityMode::Opposing
        );
        l.finishing = false;
        r.finishing = true;
        assert_eq!(update_priority(PriorityMode::Neutral, &l, &r, d), PriorityMode::Holding);

        let l = mv(0, 0.1);
        let r = mv(1, 0.5);
        assert_eq!(
            update_priority(PriorityMode::Holding, &l, &r, d),
            PriorityMode::Opposing
        );
        let r = mv(1, 0.2);
        assert_eq!(update_priority(PriorityMode::Holding, &l, &r, d), PriorityMode::Holding);

        let mut l = mv(0, 0.0);
        let mut r = mv(1, 0.0);
        l.scored_light = true;
        r.scored_light = true;
        r.finishing = true;
        // Two lights is not "exactly one": the finishing cue decides.
        assert_eq!(update_priority(PriorityMode::Neutral, &l, &r, d), PriorityMode::Holding);
    }
}
