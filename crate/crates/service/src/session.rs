use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use piste_core::io::content_hash;
use piste_core::sim::{Choice, Policy, SimConfig, SimState, SimStatus, Simulation, Transcript};
use piste_core::skills::SkillModel;
use piste_core::strategy::{ContextSource, StrategyModel};
use piste_core::{ActionId, PriorityMode, Side};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

/// Shared, immutable model data.
#[derive(Debug)]
pub struct Models {
    pub strategy: StrategyModel,
    pub skills: SkillModel,
    strategy_hash: String,
    skills_hash: String,
}

impl Models {
    pub fn new(strategy: StrategyModel, skills: SkillModel) -> piste_core::Result<Models> {
        if strategy.action_count != skills.action_count() {
            return Err(piste_core::Error::Config(format!(
                "strategy has {} actions, skills have {}",
                strategy.action_count,
                skills.action_count()
            )));
        }
        Ok(Models {
            strategy_hash: content_hash(&strategy)?,
            skills_hash: content_hash(&skills)?,
            strategy,
            skills,
        })
    }

    pub fn catalog(&self) -> Vec<ActionInfo> {
        self.skills
            .actions()
            .map(|a| ActionInfo {
                id: a.0,
                label: self.skills.label(a).to_string(),
                finishing: self.skills.is_finishing(a),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionInfo {
    pub id: u16,
    pub label: String,
    pub finishing: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub seed: Option<u64>,
    /// Side the human plays; left by default.
    pub human_side: Option<Side>,
    pub tau_crash: Option<f64>,
    pub touch_distance: Option<f64>,
    pub max_steps: Option<usize>,
    pub delta: Option<f64>,
    pub start_left: Option<f64>,
    pub start_right: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitAction {
    pub action: usize,
    /// Rejects the submission unless the session is at this step.
    pub expected_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub step: usize,
    pub left_x: f64,
    pub right_x: f64,
    pub distance: f64,
    pub mode: PriorityMode,
    #[serde(flatten)]
    pub status: SimStatus,
    pub human_side: Side,
    /// The server is waiting for the human's next action.
    pub pending: bool,
}

impl StateView {
    fn new(state: &SimState, human_side: Side) -> StateView {
        StateView {
            step: state.step,
            left_x: state.left_x,
            right_x: state.right_x,
            distance: state.distance(),
            mode: state.mode,
            status: state.status,
            human_side,
            pending: state.status.is_running(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: Uuid,
    pub seed: u64,
    pub state: StateView,
    pub actions: Vec<ActionInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub human_action: u16,
    pub model_action: u16,
    pub model_label: String,
    /// Distribution the model sampled from; absent when hidden by configuration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_distribution: Option<Vec<f64>>,
    pub distribution_source: ContextSource,
    pub state: StateView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: Uuid,
    pub state: StateView,
    pub transcript: Transcript,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionError {
    NotInitialized,
    NotFound(Uuid),
    InvalidAction { id: usize, count: usize },
    InvalidConfig(String),
    Terminated(SimStatus),
    StaleStep { expected: usize, actual: usize },
    Internal(String),
}

impl std::fmt::Display for SessionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SessionError::NotInitialized => f.write_str("models are not loaded"),
            SessionError::NotFound(id) => write!(f, "no session {id}"),
            SessionError::InvalidAction { id, count } => write!(f, "action {id} outside 0..{count}"),
            SessionError::InvalidConfig(m) => write!(f, "invalid session config: {m}"),
            SessionError::Terminated(s) => write!(f, "session already ended: {s}"),
            SessionError::StaleStep { expected, actual } => {
                write!(f, "submission for step {expected}, session is at step {actual}")
            }
            SessionError::Internal(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for SessionError {}

struct Session {
    sim: Simulation,
    human_side: Side,
}

/// All live sessions. Each session has its own lock, so turns within a session
/// serialize while different sessions proceed independently.
pub struct SessionStore {
    models: Option<Arc<Models>>,
    defaults: SimConfig,
    show_distribution: bool,
    sessions: RwLock<HashMap<Uuid, Arc<Mutex<Session>>>>,
}

impl SessionStore {
    pub fn new(models: Option<Arc<Models>>, defaults: SimConfig, show_distribution: bool) -> SessionStore {
        SessionStore {
            models,
            defaults,
            show_distribution,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    fn models(&self) -> Result<&Arc<Models>, SessionError> {
        self.models.as_ref().ok_or(SessionError::NotInitialized)
    }

    pub fn catalog(&self) -> Result<Vec<ActionInfo>, SessionError> {
        Ok(self.models()?.catalog())
    }

    fn session(&self, id: Uuid) -> Result<Arc<Mutex<Session>>, SessionError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(&id)
            .cloned()
            .ok_or(SessionError::NotFound(id))
    }

    pub fn create(&self, req: CreateSession) -> Result<Created, SessionError> {
        let models = self.models()?;
        let seed = req.seed.unwrap_or_else(rand::random);
        let d = self.defaults;
        let config = SimConfig {
            tau_crash: req.tau_crash.unwrap_or(d.tau_crash),
            touch_distance: req.touch_distance.unwrap_or(d.touch_distance),
            max_steps: req.max_steps.unwrap_or(d.max_steps),
            delta: req.delta.unwrap_or(d.delta),
            start_left: req.start_left.unwrap_or(d.start_left),
            start_right: req.start_right.unwrap_or(d.start_right),
            seed,
            ..d
        };
        let human_side = req.human_side.unwrap_or(Side::Left);
        let (left, right) = match human_side {
            Side::Left => (Policy::External, Policy::Model),
            Side::Right => (Policy::Model, Policy::External),
        };
        let sim = Simulation::new(config, 0, &left, &right, models.skills.action_count())
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))?
            .with_model_hashes(Some(models.strategy_hash.clone()), Some(models.skills_hash.clone()));
        let state = StateView::new(sim.state(), human_side);
        let id = Uuid::new_v4();
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(Session { sim, human_side })));
        Ok(Created {
            session_id: id,
            seed,
            state,
            actions: models.catalog(),
        })
    }

    pub fn submit(&self, id: Uuid, req: SubmitAction) -> Result<StepResult, SessionError> {
        let models = self.models()?;
        let session = self.session(id)?;
        let mut session = session.lock().expect("session poisoned");
        let count = models.skills.action_count();
        let status = session.sim.state().status;
        if !status.is_running() {
            return Err(SessionError::Terminated(status));
        }
        let actual = session.sim.state().step;
        if let Some(expected) = req.expected_step {
            if expected != actual {
                return Err(SessionError::StaleStep { expected, actual });
            }
        }
        if req.action >= count {
            return Err(SessionError::InvalidAction { id: req.action, count });
        }
        let human = ActionId(req.action as u16);
        let model_side = session.human_side.opponent();
        let internal = |e: piste_core::Error| SessionError::Internal(e.to_string());
        let dist = session
            .sim
            .model_distribution(model_side, &models.strategy)
            .map_err(internal)?;
        let model = session
            .sim
            .sample_model_action(model_side, &models.strategy)
            .map_err(internal)?;
        let (left, right) = match session.human_side {
            Side::Left => (human, model),
            Side::Right => (model, human),
        };
        session
            .sim
            .play(Choice::from(left), Choice::from(right), &models.skills)
            .map_err(internal)?;
        Ok(StepResult {
            human_action: human.0,
            model_action: model.0,
            model_label: models.skills.label(model).to_string(),
            model_distribution: self.show_distribution.then_some(dist.probabilities),
            distribution_source: dist.source,
            state: StateView::new(session.sim.state(), session.human_side),
        })
    }

    pub fn snapshot(&self, id: Uuid) -> Result<Snapshot, SessionError> {
        let session = self.session(id)?;
        let session = session.lock().expect("session poisoned");
        Ok(Snapshot {
            session_id: id,
            state: StateView::new(session.sim.state(), session.human_side),
            transcript: session.sim.transcript(),
        })
    }

    pub fn transcript(&self, id: Uuid) -> Result<Transcript, SessionError> {
        let session = self.session(id)?;
        let session = session.lock().expect("session poisoned");
        Ok(session.sim.transcript())
    }
}
