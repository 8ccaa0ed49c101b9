//! Held-out next-action accuracy and per-step log-likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Transcript;
use crate::strategy::{StrategyModel, TouchSequence};
use crate::types::Side;

/// Probabilities below this are clamped before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-6;

fn log_prob(p: f64) -> f64 {
    p.max(PROBABILITY_FLOOR).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    pub model: f64,
    /// Expected accuracy of uniform guessing, `k / action_count`.
    pub random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictions: usize,
    pub top_k: Vec<TopK>,
    pub mean_log_likelihood: f64,
    pub random_log_likelihood: f64,
}

/// Rank of `target` when candidates are sorted by descending probability;
/// ties are broken toward the lower action id.
fn rank_of(probabilities: &[f64], target: usize) -> usize {
    let p = probabilities[target];
    probabilities
        .iter()
        .enumerate()
        .filter(|&(i, &q)| q > p || (q == p && i < target))
        .count()
}

/// Scores every transition (steps after the first) of both fencers.
pub fn evaluate(model: &StrategyModel, sequences: &[TouchSequence], ks: &[usize]) -> Result<EvalReport> {
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > model.action_count) {
        return Err(Error::Config(format!("top-k {k} outside 1..={}", model.action_count)));
    }
    let mut hits = vec![0usize; ks.len()];
    let mut predictions = 0usize;
    let mut ll = 0.0;
    for seq in sequences {
        for t in 1..seq.steps.len() {
            let (prev, cur) = (&seq.steps[t - 1], &seq.steps[t]);
            for side in [Side::Left, Side::Right] {
                let (own_prev, opp_prev, target) = match side {
                    Side::Left => (prev.left, prev.right, cur.left),
                    Side::Right => (prev.right, prev.left, cur.right),
                };
                let dist = model.action_distribution(cur.mode.for_side(side), own_prev, opp_prev, cur.distance)?;
                let p = dist
                    .probabilities
                    .get(target.index())
                    .copied()
                    .ok_or(Error::InvalidAction {
                        id: target.index(),
                        count: model.action_count,
                    })?;
                let rank = rank_of(&dist.probabilities, target.index());
                for (h, &k) in hits.iter_mut().zip(ks) {
                    *h += usize::from(rank < k);
                }
                ll += log_prob(p);
                predictions += 1;
            }
        }
    }
    if predictions == 0 {
        return Err(Error::InvalidInput("no transitions to evaluate".into()));
    }
    let n = predictions as f64;
    Ok(EvalReport {
        predictions,
        top_k: ks
            .iter()
            .zip(&hits)
            .map(|(&k, &h)| TopK {
                k,
                model: h as f64 / n,
                random: k as f64 / model.action_count as f64,
            })
            .collect(),
        mean_log_likelihood: ll / n,
        random_log_likelihood: -(model.action_count as f64).ln(),
    })
}

/// Sum of log-probabilities of both fencers' actions under the distributions a
/// model policy would have sampled from, and the number of actions scored.
pub fn transcript_log_likelihood(model: &StrategyModel, transcript: &Transcript) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut count = 0;
    for (i, step) in transcript.steps.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| &transcript.steps[j]);
        for side in [Side::Left, Side::Right] {
            let mode = step.mode_before.for_side(side);
            let own = match side {
                Side::Left => &step.left,
                Side::Right => &step.right,
            };
            let probabilities = match prev {
                Some(prev) if !step.opening => {
                    let (own_prev, opp_prev) = match side {
                        Side::Left => (prev.left.action, prev.right.action),
                        Side::Right => (prev.right.action, prev.left.action),
                    };
                    model
                        .action_distribution(mode, own_prev, opp_prev, step.distance_before)?
                        .probabilities
                }
                _ => model.initial_distribution(mode),
            };
            let p = probabilities
                .get(own.action.index())
                .copied()
                .ok_or(Error::InvalidAction {
                    id: own.action.index(),
                    count: model.action_count,
                })?;
            total += log_prob(p);
            count += 1;
        }
    }
    Ok((total, count))
}

/// Mean per-action log-likelihood over a set of transcripts.
pub fn mean_log_likelihood(model: &StrategyModel, transcripts: &[Transcript]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for t in transcripts {
        let (s, c) = transcript_log_likelihood(model, t)?;
        total += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::InvalidInput("no transcript steps to score".into()));
    }
    Ok(total / count as f64)
}
