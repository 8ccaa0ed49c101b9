//! End-to-end steps from loaded bouts to fitted models.

use rayon::prelude::*;

use crate::error::Result;
use crate::features::{raw_features, FeatureConfig, FeatureScaler};
use crate::io::{EmbeddingRecord, EmbeddingsFile};
use crate::priority::annotate_priority;
use crate::skills::{fit_skill_model, Featurizer, SkillConfig, SkillFit, SkillModel};
use crate::strategy::{fit, DistanceSampling, StrategyConfig, StrategyModel, TouchSequence};
use crate::types::{ActionId, BoutRecord, MotionWindow, Side};

fn all_windows(bouts: &[BoutRecord]) -> Vec<(&MotionWindow, Option<&[f64]>)> {
    bouts
        .iter()
        .flat_map(|b| {
            [Side::Left, Side::Right].into_iter().flat_map(move |side| {
                b.windows(side)
                    .iter()
                    .enumerate()
                    .map(move |(t, w)| (w, b.external(side, t)))
            })
        })
        .collect()
}

/// Features for every window of every bout, standardized by a scaler fitted on them.
pub fn embed_bouts(bouts: &[BoutRecord], config: FeatureConfig) -> Result<EmbeddingsFile> {
    let windows = all_windows(bouts);
    let raw: Vec<Vec<f64>> = windows
        .par_iter()
        .map(|(w, e)| raw_features(w, *e, config))
        .collect::<Result<_>>()?;
    let scaler = FeatureScaler::fit(&raw)?;
    let records = raw
        .iter()
        .zip(&windows)
        .map(|(r, (w, _))| {
            Ok(EmbeddingRecord {
                values: scaler.transform(r)?,
                window: (*w).clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(EmbeddingsFile {
        featurizer: Featurizer { config, scaler },
        records,
    })
}

/// Two-stage clustering; every non-excluded window is indexed as a clip of its action.
pub fn cluster(embeddings: &EmbeddingsFile, config: &SkillConfig) -> Result<SkillFit> {
    let points: Vec<Vec<f64>> = embeddings.records.iter().map(|r| r.values.clone()).collect();
    let mut fit = fit_skill_model(&points, Some(embeddings.featurizer.clone()), config)?;
    let clips: Vec<_> = fit
        .stage2_labels
        .iter()
        .zip(&embeddings.records)
        .filter_map(|(label, r)| label.map(|l| (ActionId(l as u16), r.window.clone())))
        .collect();
    fit.model.index_clips(clips)?;
    Ok(fit)
}

pub fn annotate(mut bout: BoutRecord, delta: f64) -> Result<BoutRecord> {
    bout.priority = Some(annotate_priority(&bout.windows_left, &bout.windows_right, delta)?);
    Ok(bout)
}

/// Nearest-action assignment of every window in an annotated bout.
pub fn to_sequence(bout: &BoutRecord, skills: &SkillModel, sampling: DistanceSampling) -> Result<TouchSequence> {
    let assign = |side: Side| -> Result<Vec<ActionId>> {
        bout.windows(side)
            .iter()
            .enumerate()
            .map(|(t, w)| skills.assign_window(w, bout.external(side, t)))
            .collect()
    };
    TouchSequence::from_bout(bout, &assign(Side::Left)?, &assign(Side::Right)?, sampling)
}

pub fn to_sequences(
    bouts: &[BoutRecord],
    skills: &SkillModel,
    sampling: DistanceSampling,
) -> Result<Vec<TouchSequence>> {
    bouts.par_iter().map(|b| to_sequence(b, skills, sampling)).collect()
}

pub fn fit_strategy(
    bouts: &[BoutRecord],
    skills: &SkillModel,
    config: StrategyConfig,
    sampling: DistanceSampling,
) -> Result<StrategyModel> {
    fit(&to_sequences(bouts, skills, sampling)?, skills.action_count(), config)
}
