//! Two-stage skill discovery.
//!
//! Stage 1 clusters the representative subset; an operator inspects those
//! clusters and lists the ones that hold no action (standing still, resets).
//! Their members are dropped and stage 2 re-clusters the rest. Stage-2 cluster
//! indices are the action vocabulary used everywhere else.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{embed, EmbeddingLayout, FeatureConfig, FeatureScaler};
use crate::kmeans::{fit_kmeans, KMeansConfig, KMeansModel};
use crate::labels::{default_finishing, default_labels};
use crate::types::{ActionId, MotionWindow};

pub const DEFAULT_STAGE1_K: usize = 40;
pub const DEFAULT_STAGE2_K: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillConfig {
    pub stage1_k: usize,
    pub stage2_k: usize,
    pub excluded_stage1: BTreeSet<usize>,
    /// Finishing clusters; `None` picks the default set for the vocabulary size.
    pub finishing: Option<BTreeSet<ActionId>>,
    /// Human-provided labels; `None` picks the default registry.
    pub labels: Option<Vec<String>>,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SkillConfig {
    fn default() -> Self {
        SkillConfig {
            stage1_k: DEFAULT_STAGE1_K,
            stage2_k: DEFAULT_STAGE2_K,
            excluded_stage1: BTreeSet::new(),
            finishing: None,
            labels: None,
            seed: 0,
            max_iter: 300,
            tol: 1e-9,
        }
    }
}

/// How raw windows become embeddings for this model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub config: FeatureConfig,
    pub scaler: FeatureScaler,
}

impl Featurizer {
    pub fn layout(&self) -> EmbeddingLayout {
        EmbeddingLayout::new(self.config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillModel {
    pub featurizer: Option<Featurizer>,
    pub stage1: KMeansModel,
    pub excluded_stage1: BTreeSet<usize>,
    pub stage2: KMeansModel,
    pub labels: Vec<String>,
    pub finishing: BTreeSet<ActionId>,
    /// Member windows of each stage-2 cluster, used for retrieval.
    pub clips: Vec<Vec<MotionWindow>>,
    pub stage1_points: usize,
    pub stage2_points: usize,
}

/// Fitted model plus the stage-1 assignment of every input point.
#[derive(Debug, Clone)]
pub struct SkillFit {
    pub model: SkillModel,
    pub stage1_labels: Vec<usize>,
    /// Stage-2 label for each input point, `None` where the point was excluded.
    pub stage2_labels: Vec<Option<usize>>,
}

pub fn fit_skill_model(
    embeddings: &[Vec<f64>],
    featurizer: Option<Featurizer>,
    config: &SkillConfig,
) -> Result<SkillFit> {
    if let Some(&bad) = config.excluded_stage1.iter().find(|&&id| id >= config.stage1_k) {
        return Err(Error::Config(format!(
            "excluded stage-1 cluster {bad} out of range for k = {}",
            config.stage1_k
        )));
    }
    if let Some(f) = &featurizer {
        let dim = f.layout().dim;
        if f.scaler.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.scaler.dim(),
            });
        }
    }
    let kmeans = |k: usize, seed: u64| KMeansConfig {
        k,
        seed,
        max_iter: config.max_iter,
        tol: config.tol,
    };
    let stage1 = fit_kmeans(embeddings, &kmeans(config.stage1_k, config.seed))?;

    let kept: Vec<usize> = (0..embeddings.len())
        .filter(|&i| !config.excluded_stage1.contains(&stage1.labels[i]))
        .collect();
    if kept.is_empty() {
        return Err(Error::AllPointsExcluded);
    }
    let remaining: Vec<Vec<f64>> = kept.iter().map(|&i| embeddings[i].clone()).collect();
    let stage2 = fit_kmeans(&remaining, &kmeans(config.stage2_k, config.seed.wrapping_add(1)))?;

    let labels = match &config.labels {
        Some(l) if l.len() == config.stage2_k => l.clone(),
        Some(l) => {
            return Err(Error::Config(format!(
                "{} labels for {} clusters",
                l.len(),
                config.stage2_k
            )))
        }
        None => default_labels(config.stage2_k),
    };
    let finishing = config
        .finishing
        .clone()
        .unwrap_or_else(|| default_finishing(config.stage2_k));

    let mut stage2_labels = vec![None; embeddings.len()];
    for (&i, &l) in kept.iter().zip(&stage2.labels) {
        stage2_labels[i] = Some(l);
    }

    let model = SkillModel {
        featurizer,
        stage1: stage1.model,
        excluded_stage1: config.excluded_stage1.clone(),
        stage2: stage2.model,
        labels,
        finishing,
        clips: vec![Vec::new(); config.stage2_k],
        stage1_points: embeddings.len(),
        stage2_points: kept.len(),
    };
    model.validate()?;
    Ok(SkillFit {
        model,
        stage1_labels: stage1.labels,
        stage2_labels,
    })
}

impl SkillModel {
    pub fn action_count(&self) -> usize {
        self.stage2.k
    }

    pub fn actions(&self) -> impl Iterator<Item = ActionId> {
        (0..self.action_count()).map(|i| ActionId(i as u16))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&bad) = self.excluded_stage1.iter().find(|&&i| i >= self.stage1.k) {
            return Err(Error::Validation(format!("excluded stage-1 id {bad} out of range")));
        }
        if self.labels.len() != self.stage2.k {
            return Err(Error::Validation(format!(
                "{} labels for {} actions",
                self.labels.len(),
                self.stage2.k
            )));
        }
        if let Some(bad) = self.finishing.iter().find(|a| a.index() >= self.stage2.k) {
            return Err(Error::Validation(format!("finishing cluster {bad} out of range")));
        }
        if self.clips.len() != self.stage2.k {
            return Err(Error::Validation(format!(
                "clip index has {} clusters, expected {}",
                self.clips.len(),
                self.stage2.k
            )));
        }
        Ok(())
    }

    pub fn is_finishing(&self, a: ActionId) -> bool {
        self.finishing.contains(&a)
    }

    pub fn label(&self, a: ActionId) -> &str {
        self.labels.get(a.index()).map_or("?", String::as_str)
    }

    /// Nearest stage-2 centroid; ties go to the lowest index.
    pub fn assign(&self, e: &[f64]) -> Result<ActionId> {
        let id = self.stage2.predict(e)?;
        Ok(ActionId(id as u16))
    }

    /// Whether stage 1 would have discarded this embedding as no-action.
    pub fn is_excluded(&self, e: &[f64]) -> Result<bool> {
        Ok(self.excluded_stage1.contains(&self.stage1.predict(e)?))
    }

    /// Embeds a raw window with this model's featurizer, then assigns it.
    pub fn assign_window(&self, w: &MotionWindow, external: Option<&[f64]>) -> Result<ActionId> {
        let f = self
            .featurizer
            .as_ref()
            .ok_or_else(|| Error::Config("skill model has no featurizer; assign embeddings directly".into()))?;
        let e = embed(w, external, f.config, &f.scaler)?;
        self.assign(&e.values)
    }

    /// Replaces the clip index.
    pub fn index_clips(&mut self, clips: impl IntoIterator<Item = (ActionId, MotionWindow)>) -> Result<()> {
        let mut index = vec![Vec::new(); self.action_count()];
        for (a, w) in clips {
            w.validate()?;
            index
                .get_mut(a.index())
                .ok_or(Error::InvalidAction {
                    id: a.index(),
                    count: self.action_count(),
                })?
                .push(w);
        }
        self.clips = index;
        Ok(())
    }

    /// Uniformly samples one member window of cluster `a`.
    pub fn retrieve<R: Rng + ?Sized>(&self, a: ActionId, rng: &mut R) -> Result<&MotionWindow> {
        let members = self.clips.get(a.index()).ok_or(Error::InvalidAction {
            id: a.index(),
            count: self.action_count(),
        })?;
        if members.is_empty() {
            return Err(Error::EmptyCluster(a.index()));
        }
        Ok(&members[rng.random_range(0..members.len())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmeans::nearest;
    use crate::types::Side;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| vec![(i % 7) as f64 * 3.0, (i / 7) as f64 * 2.0 + (i % 3) as f64 * 0.1])
            .collect()
    }

    fn cfg(k1: usize, k2: usize) -> SkillConfig {
        SkillConfig {
            stage1_k: k1,
            stage2_k: k2,
            seed: 42,
            ..SkillConfig::default()
        }
    }

    #[test]
    fn empty_exclusion_and_finer_stage2() {
        let pts = grid(60);
        let fit = fit_skill_model(&pts, None, &cfg(5, 10)).unwrap();
        assert_eq!(fit.model.stage2_points, fit.model.stage1_points);
        // Direct refit with k = 10 on the same data.
        let refit = fit_kmeans(&pts, &KMeansConfig::new(10, 43)).unwrap();
        assert_eq!(refit.model.inertia, fit.model.stage2.inertia);
        assert!(fit.model.stage2.inertia <= fit.model.stage1.inertia);
    }

    #[test]
    fn excluded_still_blob_has_no_stage2_centroid() {
        let mut pts: Vec<Vec<f64>> = (0..40).map(|i| vec![0.01 * (i % 5) as f64, 0.0]).collect();
        for i in 0..60 {
            pts.push(vec![10.0 + (i % 6) as f64 * 4.0, 10.0 + (i / 6) as f64 * 3.0]);
        }
        let still_mean = [0.02, 0.0];
        let probe = fit_skill_model(&pts, None, &cfg(4, 4)).unwrap();
        let still_id = probe.stage1_labels[0];
        assert!(probe.stage1_labels[..40].iter().all(|&l| l == still_id));

        let mut c = cfg(4, 6);
        c.excluded_stage1.insert(still_id);
        let fit = fit_skill_model(&pts, None, &c).unwrap();
        assert_eq!(fit.model.stage2_points, 60);
        assert!(fit.model.stage2_points < fit.model.stage1_points);
        for centroid in &fit.model.stage2.centroids {
            let d = ((centroid[0] - still_mean[0]).powi(2) + (centroid[1] - still_mean[1]).powi(2)).sqrt();
            assert!(d > 1.0, "centroid {centroid:?} too close to the still blob");
        }
        assert!(fit.model.is_excluded(&[0.0, 0.0]).unwrap());
    }

    #[test]
    fn thirty_actions_with_default_registry() {
        let pts = grid(90);
        let fit = fit_skill_model(&pts, None, &cfg(35, 30)).unwrap();
        assert_eq!(fit.model.stage2.centroids.len(), 30);
        assert_eq!(fit.model.labels[22], "Lunge [normal]");
        assert!(fit.model.is_finishing(ActionId(22)));
    }

    #[test]
    fn all_excluded_is_an_error() {
        let pts = grid(10);
        let mut c = cfg(2, 1);
        c.excluded_stage1 = [0, 1].into_iter().collect();
        assert!(matches!(fit_skill_model(&pts, None, &c), Err(Error::AllPointsExcluded)));
        c.excluded_stage1 = [7].into_iter().collect();
        assert!(matches!(fit_skill_model(&pts, None, &c), Err(Error::Config(_))));
    }

    #[test]
    fn assign_examples() {
        let pts = grid(60);
        let model = fit_skill_model(&pts, None, &cfg(5, 10)).unwrap().model;
        for (i, c) in model.stage2.centroids.iter().enumerate() {
            assert_eq!(model.assign(c).unwrap(), ActionId(i as u16));
        }
        // Midpoint between centroids 2 and 5 ties to the lower index when no
        // other centroid is closer.
        let mut tie = model.clone();
        tie.stage2.centroids = vec![vec![0.0, 0.0]; 10];
        for (i, c) in tie.stage2.centroids.iter_mut().enumerate() {
            *c = vec![100.0 * i as f64, 100.0];
        }
        tie.stage2.centroids[2] = vec![-1.0, 0.0];
        tie.stage2.centroids[5] = vec![1.0, 0.0];
        assert_eq!(tie.assign(&[0.0, 0.0]).unwrap(), ActionId(2));
        assert!(model.assign(&[1.0]).is_err());
        // Brute-force scan oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = vec![rng.random_range(-5.0..25.0), rng.random_range(-5.0..25.0)];
            let mut best = (0, f64::INFINITY);
            for (i, c) in model.stage2.centroids.iter().enumerate() {
                let d = (c[0] - p[0]).hypot(c[1] - p[1]);
                if d < best.1 {
                    best = (i, d);
                }
            }
            assert_eq!(model.assign(&p).unwrap().index(), best.0);
            assert_eq!(nearest(&model.stage2.centroids, &p).0, best.0);
        }
    }

    fn tagged(i: usize) -> MotionWindow {
        let mut w = MotionWindow::stationary(Side::Left, 5.0);
        w.source.start_frame = i;
        w
    }

    #[test]
    fn retrieval() {
        let pts = grid(20);
        let mut model = fit_skill_model(&pts, None, &cfg(3, 2)).unwrap().model;
        model
            .index_clips([
                (ActionId(0), tagged(7)),
                (ActionId(1), tagged(1)),
                (ActionId(1), tagged(2)),
                (ActionId(1), tagged(3)),
                (ActionId(1), tagged(4)),
            ])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            assert_eq!(model.retrieve(ActionId(0), &mut rng).unwrap().source.start_frame, 7);
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| model.retrieve(ActionId(1), &mut rng).unwrap().source.start_frame)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));

        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            counts[model.retrieve(ActionId(1), &mut rng).unwrap().source.start_frame] += 1;
        }
        for c in &counts[1..] {
            let f = *c as f64 / 10_000.0;
            assert!((f - 0.25).abs() < 0.05, "frequency {f}");
        }

        model.clips[0].clear();
        assert!(matches!(
            model.retrieve(ActionId(0), &mut rng),
            Err(Error::EmptyCluster(0))
        ));
        assert!(model.index_clips([(ActionId(9), tagged(0))]).is_err());
    }
}
