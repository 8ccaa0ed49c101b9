//! Priority-aware one-step strategy model.
//!
//! For each priority mode the model keeps empirical counts of the next action
//! `u_t` given the previous pair `(u_{t-1}, v_{t-1})`, together with the mean
//! fencer distance at which each transition was observed. At query time the
//! raw transition probabilities are reweighted by a Gaussian in the gap
//! between the current distance and those means:
//!
//! ```text
//! P(u_t | u_{t-1}, v_{t-1}, d_t) ∝ P_raw(u_t | u_{t-1}, v_{t-1}) · exp(-½ ((d_t - d̄) / σ)²)
//! ```
//!
//! With [`DistanceWeighting::PerCandidate`] (the default) `d̄` is the mean
//! distance of the specific `(u_{t-1}, v_{t-1}, u_t)` triple, falling back to
//! the context mean for candidates never seen with a distance. With
//! [`DistanceWeighting::PerContext`] every candidate shares the context mean,
//! so the weight is constant and the query reduces to the raw distribution.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::content_hash;
use crate::types::{ActionId, BoutRecord, PriorityMode};

/// Width of the distance weighting in meters.
pub const DEFAULT_SIGMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceWeighting {
    #[default]
    PerCandidate,
    PerContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackoffPolicy {
    /// Unseen context: marginalize over the opponent's previous action, then uniform.
    #[default]
    MarginalThenUniform,
    /// Unseen context: uniform.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub sigma: f64,
    pub weighting: DistanceWeighting,
    pub backoff: BackoffPolicy,
    /// Additive smoothing added to every candidate count of a seen context.
    pub laplace: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            sigma: DEFAULT_SIGMA,
            weighting: DistanceWeighting::PerCandidate,
            backoff: BackoffPolicy::MarginalThenUniform,
            laplace: 0.0,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.laplace.is_finite() && self.laplace >= 0.0) {
            return Err(Error::Config(format!("laplace must be >= 0, got {}", self.laplace)));
        }
        Ok(())
    }
}

/// One timestep of a touch: both actions, the gap, and the left-perspective mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouchStep {
    pub left: ActionId,
    pub right: ActionId,
    pub distance: f64,
    pub mode: PriorityMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TouchSequence {
    pub touch_id: String,
    pub steps: Vec<TouchStep>,
}

/// Which distance within a window stands for the step's `d_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSampling {
    #[default]
    Start,
    Mean,
    End,
}

impl TouchSequence {
    /// Pairs an annotated bout with per-window action assignments.
    pub fn from_bout(
        bout: &BoutRecord,
        actions_left: &[ActionId],
        actions_right: &[ActionId],
        sampling: DistanceSampling,
    ) -> Result<TouchSequence> {
        bout.validate()?;
        let trace = bout
            .priority
            .as_ref()
            .ok_or_else(|| Error::MissingAnnotation(format!("touch {} has no priority modes", bout.touch_id)))?;
        let n = bout.len();
        if actions_left.len() != n || actions_right.len() != n {
            return Err(Error::MissingAnnotation(format!(
                "touch {}: {} windows but {}/{} assigned actions",
                bout.touch_id,
                n,
                actions_left.len(),
                actions_right.len()
            )));
        }
        let steps = (0..n)
            .map(|t| {
                let (l, r) = (&bout.windows_left[t], &bout.windows_right[t]);
                let distance = match sampling {
                    DistanceSampling::Start => bout.distances[t],
                    DistanceSampling::End => r.root_x[r.root_x.len() - 1] - l.root_x[l.root_x.len() - 1],
                    DistanceSampling::Mean => {
                        r.root_x.iter().zip(&l.root_x).map(|(b, a)| b - a).sum::<f64>() / l.root_x.len() as f64
                    }
                };
                TouchStep {
                    left: actions_left[t],
                    right: actions_right[t],
                    distance,
                    mode: trace.modes[t],
                }
            })
            .collect();
        Ok(TouchSequence {
            touch_id: bout.touch_id.clone(),
            steps,
        })
    }
}

/// Counts and distance sums for one `(u_prev, v_prev)` context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextStats {
    pub counts: Vec<u64>,
    pub dist_sum: Vec<f64>,
    pub dist_count: Vec<u64>,
    pub context_dist_sum: f64,
    pub context_dist_count: u64,
}

impl ContextStats {
    fn new(k: usize) -> Self {
        ContextStats {
            counts: vec![0; k],
            dist_sum: vec![0.0; k],
            dist_count: vec![0; k],
            context_dist_sum: 0.0,
            context_dist_count: 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn record(&mut self, next: ActionId, distance: f64) {
        let i = next.index();
        self.counts[i] += 1;
        self.dist_sum[i] += distance;
        self.dist_count[i] += 1;
        self.context_dist_sum += distance;
        self.context_dist_count += 1;
    }

    fn absorb(&mut self, other: &ContextStats) {
        for i in 0..self.counts.len() {
            self.counts[i] += other.counts[i];
            self.dist_sum[i] += other.dist_sum[i];
            self.dist_count[i] += other.dist_count[i];
        }
        self.context_dist_sum += other.context_dist_sum;
        self.context_dist_count += other.context_dist_count;
    }

    pub fn mean_distance(&self, next: ActionId) -> Option<f64> {
        let i = next.index();
        (self.dist_count[i] > 0).then(|| self.dist_sum[i] / self.dist_count[i] as f64)
    }

    pub fn context_mean_distance(&self) -> Option<f64> {
        (self.context_dist_count > 0).then(|| self.context_dist_sum / self.context_dist_count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ContextRow {
    u_prev: ActionId,
    v_prev: ActionId,
    #[serde(flatten)]
    stats: ContextStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TableRepr {
    mode: PriorityMode,
    action_count: usize,
    starts: Vec<u64>,
    contexts: Vec<ContextRow>,
}

/// All transitions observed under one priority mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TableRepr", try_from = "TableRepr")]
pub struct TransitionTable {
    pub mode: PriorityMode,
    pub action_count: usize,
    /// First actions of segments that begin in this mode.
    pub starts: Vec<u64>,
    pub contexts: BTreeMap<(ActionId, ActionId), ContextStats>,
}

impl From<TransitionTable> for TableRepr {
    fn from(t: TransitionTable) -> Self {
        TableRepr {
            mode: t.mode,
            action_count: t.action_count,
            starts: t.starts,
            contexts: t
                .contexts
                .into_iter()
                .map(|((u_prev, v_prev), stats)| ContextRow { u_prev, v_prev, stats })
                .collect(),
        }
    }
}

impl TryFrom<TableRepr> for TransitionTable {
    type Error = Error;

    fn try_from(r: TableRepr) -> Result<Self> {
        let k = r.action_count;
        if r.starts.len() != k {
            return Err(Error::Validation(format!(
                "starts has {} entries, expected {k}",
                r.starts.len()
            )));
        }
        let mut contexts = BTreeMap::new();
        for row in r.contexts {
            let s = &row.stats;
            if s.counts.len() != k || s.dist_sum.len() != k || s.dist_count.len() != k {
                return Err(Error::Validation("context row width mismatch".into()));
            }
            if s.dist_count.iter().zip(&s.counts).any(|(d, c)| *d > 0 && *c == 0) {
                return Err(Error::Validation("distance recorded for an unseen transition".into()));
            }
            if row.u_prev.index() >= k || row.v_prev.index() >= k {
                return Err(Error::Validation("context action out of range".into()));
            }
            if contexts.insert((row.u_prev, row.v_prev), row.stats).is_some() {
                return Err(Error::Validation("duplicate context row".into()));
            }
        }
        Ok(TransitionTable {
            mode: r.mode,
            action_count: k,
            starts: r.starts,
            contexts,
        })
    }
}

impl TransitionTable {
    fn new(mode: PriorityMode, k: usize) -> Self {
        TransitionTable {
            mode,
            action_count: k,
            starts: vec![0; k],
            contexts: BTreeMap::new(),
        }
    }

    pub fn context(&self, u_prev: ActionId, v_prev: ActionId) -> Option<&ContextStats> {
        self.contexts.get(&(u_prev, v_prev))
    }

    /// Counts pooled over every opponent action that followed `u_prev`.
    pub fn marginal(&self, u_prev: ActionId) -> Option<ContextStats> {
        let mut pooled: Option<ContextStats> = None;
        for (_, stats) in self
            .contexts
            .range((u_prev, ActionId(0))..=(u_prev, ActionId(u16::MAX)))
        {
            pooled
                .get_or_insert_with(|| ContextStats::new(self.action_count))
                .absorb(stats);
        }
        pooled.filter(|s| s.total() > 0)
    }
}

/// Where a fitted model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProvenance {
    pub dataset_hash: String,
    pub touches: usize,
    pub transitions: u64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyModel {
    pub action_count: usize,
    pub config: StrategyConfig,
    /// One table per mode, indexed by [`PriorityMode::index`].
    pub tables: Vec<TransitionTable>,
    pub provenance: FitProvenance,
}

/// Where a distribution's context statistics came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    Observed,
    Marginal,
    Uniform,
}

/// Distance-weighted action distribution plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub probabilities: Vec<f64>,
    pub source: ContextSource,
}

impl StrategyModel {
    /// A model with no observations; every query falls through to uniform.
    pub fn empty(action_count: usize, config: StrategyConfig) -> Result<Self> {
        fit(&[], action_count, config)
    }

    pub fn table(&self, mode: PriorityMode) -> &TransitionTable {
        &self.tables[mode.index()]
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.tables.len() != 3 {
            return Err(Error::Validation(format!(
                "{} mode tables, expected 3",
                self.tables.len()
            )));
        }
        for (mode, table) in PriorityMode::ALL.iter().zip(&self.tables) {
            if table.mode != *mode || table.action_count != self.action_count {
                return Err(Error::Validation(format!("table for {mode} is inconsistent")));
            }
        }
        Ok(())
    }

    fn check_action(&self, a: ActionId) -> Result<()> {
        if a.index() >= self.action_count {
            return Err(Error::InvalidAction {
                id: a.index(),
                count: self.action_count,
            });
        }
        Ok(())
    }

    fn uniform(&self) -> Vec<f64> {
        vec![1.0 / self.action_count as f64; self.action_count]
    }

    fn resolve_context(
        &self,
        mode: PriorityMode,
        u_prev: ActionId,
        v_prev: ActionId,
    ) -> (Option<Cow<'_, ContextStats>>, ContextSource) {
        let table = self.table(mode);
        if let Some(s) = table.context(u_prev, v_prev).filter(|s| s.total() > 0) {
            return (Some(Cow::Borrowed(s)), ContextSource::Observed);
        }
        if self.config.backoff == BackoffPolicy::MarginalThenUniform {
            if let Some(s) = table.marginal(u_prev) {
                return (Some(Cow::Owned(s)), ContextSource::Marginal);
            }
        }
        (None, ContextSource::Uniform)
    }

    fn raw_from_stats(&self, stats: &ContextStats) -> Vec<f64> {
        let alpha = self.config.laplace;
        let denom = stats.total() as f64 + alpha * self.action_count as f64;
        stats.counts.iter().map(|&c| (c as f64 + alpha) / denom).collect()
    }

    /// Normalized counts for an observed context, without distance weighting.
    pub fn raw_distribution(&self, mode: PriorityMode, u_prev: ActionId, v_prev: ActionId) -> Option<Vec<f64>> {
        self.table(mode)
            .context(u_prev, v_prev)
            .filter(|s| s.total() > 0)
            .map(|s| self.raw_from_stats(s))
    }

    /// Distance-weighted distribution over the next action.
    pub fn action_distribution(
        &self,
        mode: PriorityMode,
        u_prev: ActionId,
        v_prev: ActionId,
        distance: f64,
    ) -> Result<ActionDistribution> {
        if !distance.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite distance {distance}")));
        }
        self.check_action(u_prev)?;
        self.check_action(v_prev)?;
        let (stats, source) = self.resolve_context(mode, u_prev, v_prev);
        let Some(stats) = stats else {
            return Ok(ActionDistribution {
                probabilities: self.uniform(),
                source,
            });
        };
        let raw = self.raw_from_stats(&stats);
        let context_mean = stats.context_mean_distance();
        let sigma = self.config.sigma;

        // Log-space weights keep far-off distances from underflowing to all zeros.
        let log_w: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                if p <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let mean = match self.config.weighting {
                    DistanceWeighting::PerCandidate => stats.mean_distance(ActionId(i as u16)).or(context_mean),
                    DistanceWeighting::PerContext => context_mean,
                };
                let z = mean.map_or(0.0, |m| (distance - m) / sigma);
                p.ln() - 0.5 * z * z
            })
            .collect();
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        Ok(ActionDistribution {
            probabilities: w.iter().map(|x| x / total).collect(),
            source,
        })
    }

    /// Empirical distribution of segment-opening actions under `mode`.
    pub fn initial_distribution(&self, mode: PriorityMode) -> Vec<f64> {
        let starts = &self.table(mode).starts;
        let total: u64 = starts.iter().sum();
        if total == 0 {
            return self.uniform();
        }
        starts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        mode: PriorityMode,
        u_prev: ActionId,
        v_prev: ActionId,
        distance: f64,
        rng: &mut R,
    ) -> Result<ActionId> {
        let dist = self.action_distribution(mode, u_prev, v_prev, distance)?;
        sample_index(&dist.probabilities, rng)
    }

    pub fn sample_initial_action<R: Rng + ?Sized>(&self, mode: PriorityMode, rng: &mut R) -> Result<ActionId> {
        sample_index(&self.initial_distribution(mode), rng)
    }

    /// Raw transition rows for every observed context of `mode`.
    pub fn export_matrix(&self, mode: PriorityMode) -> MatrixSlice {
        let table = self.table(mode);
        let rows = table
            .contexts
            .iter()
            .filter(|(_, s)| s.total() > 0)
            .map(|(&(u_prev, v_prev), s)| MatrixRow {
                u_prev,
                v_prev,
                observations: s.total(),
                mean_distance: s.context_mean_distance(),
                probabilities: self.raw_from_stats(s),
            })
            .collect();
        MatrixSlice {
            mode,
            action_count: self.action_count,
            rows,
        }
    }
}

/// Categorical draw over `weights`.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<ActionId> {
    let dist = WeightedIndex::new(weights)
        .map_err(|e| Error::InvalidInput(format!("cannot sample from distribution: {e}")))?;
    Ok(ActionId(dist.sample(rng) as u16))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub u_prev: ActionId,
    pub v_prev: ActionId,
    pub observations: u64,
    pub mean_distance: Option<f64>,
    pub probabilities: Vec<f64>,
}

/// Rows of one mode's transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSlice {
    pub mode: PriorityMode,
    pub action_count: usize,
    pub rows: Vec<MatrixRow>,
}

/// Counts transitions from both fencers' perspectives. The right fencer's
/// transitions are recorded with roles swapped and the mode reflected.
pub fn fit(sequences: &[TouchSequence], action_count: usize, config: StrategyConfig) -> Result<StrategyModel> {
    config.validate()?;
    if action_count == 0 || action_count > u16::MAX as usize {
        return Err(Error::Config(format!("invalid action count {action_count}")));
    }
    let mut tables: Vec<TransitionTable> = PriorityMode::ALL
        .iter()
        .map(|&m| TransitionTable::new(m, action_count))
        .collect();
    let mut transitions = 0u64;

    for seq in sequences {
        for (t, step) in seq.steps.iter().enumerate() {
            for a in [step.left, step.right] {
                if a.index() >= action_count {
                    return Err(Error::InvalidAction {
                        id: a.index(),
                        count: action_count,
                    });
                }
            }
            if !step.distance.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "touch {}: non-finite distance at step {t}",
                    seq.touch_id
                )));
            }
            let left_mode = step.mode;
            let right_mode = step.mode.reflect();
            let segment_start = t == 0 || seq.steps[t - 1].mode != step.mode;
            if segment_start {
                tables[left_mode.index()].starts[step.left.index()] += 1;
                tables[right_mode.index()].starts[step.right.index()] += 1;
            }
            if t == 0 {
                continue;
            }
            let prev = &seq.steps[t - 1];
            let k = action_count;
            tables[left_mode.index()]
                .contexts
                .entry((prev.left, prev.right))
                .or_insert_with(|| ContextStats::new(k))
                .record(step.left, step.distance);
            tables[right_mode.index()]
                .contexts
                .entry((prev.right, prev.left))
                .or_insert_with(|| ContextStats::new(k))
                .record(step.right, step.distance);
            transitions += 2;
        }
    }

    Ok(StrategyModel {
        action_count,
        config,
        tables,
        provenance: FitProvenance {
            dataset_hash: content_hash(&sequences)?,
            touches: sequences.len(),
            transitions,
            seed: None,
        },
    })
}
