use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use piste_core::eval::evaluate;
use piste_core::features::FeatureConfig;
use piste_core::io::{load_bouts, save_bout, Manifest, ManifestEntry, Role};
use piste_core::pipeline::{annotate, cluster, embed_bouts, fit_strategy, to_sequences};
use piste_core::sim::{replay, run_batch, Policy, SimConfig};
use piste_core::skills::SkillConfig;
use piste_core::strategy::{DistanceSampling, StrategyConfig};
use piste_core::synthetic::{expected_modes, random_prototypes, render_bout, ActionPrototype};
use piste_core::{ActionId, Side};

const K: usize = 6;

struct Rendered {
    dir: tempfile::TempDir,
    truth: HashMap<(String, Side, usize), ActionId>,
    prototypes: Vec<ActionPrototype>,
}

fn render_corpus(bouts: usize) -> Rendered {
    let dir = tempfile::tempdir().unwrap();
    let prototypes = random_prototypes(K, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut truth = HashMap::new();
    let mut entries = Vec::new();
    for b in 0..bouts {
        let n = rng.random_range(3..7);
        let left: Vec<_> = (0..n).map(|_| ActionId(rng.random_range(0..K) as u16)).collect();
        let right: Vec<_> = (0..n).map(|_| ActionId(rng.random_range(0..K) as u16)).collect();
        let id = format!("bout-{b:02}");
        let file = render_bout(&id, &prototypes, &left, &right, 0.02, b as u64).unwrap();
        save_bout(&dir.path().join(format!("{id}.jsonl")), &file).unwrap();
        for (t, (&l, &r)) in left.iter().zip(&right).enumerate() {
            truth.insert((id.clone(), Side::Left, t), l);
            truth.insert((id.clone(), Side::Right, t), r);
        }
        let role = match b % 4 {
            0 => Role::Clustering,
            3 => Role::Heldout,
            _ => Role::Training,
        };
        entries.push(ManifestEntry {
            path: format!("{id}.jsonl").into(),
            role,
        });
    }
    Manifest::new(entries)
        .unwrap()
        .save(&dir.path().join("manifest.json"))
        .unwrap();
    Rendered { dir, truth, prototypes }
}

#[test]
fn rendered_bouts_flow_through_the_pipeline() {
    let corpus = render_corpus(40);
    let manifest = Manifest::load(&corpus.dir.path().join("manifest.json")).unwrap();
    let clustering: Vec<_> = load_bouts(&manifest.paths(Role::Clustering))
        .unwrap()
        .into_iter()
        .map(|b| b.record)
        .collect();
    let embeddings = embed_bouts(&clustering, FeatureConfig::default()).unwrap();
    assert_eq!(
        embeddings.records.len(),
        2 * clustering.iter().map(|b| b.len()).sum::<usize>()
    );

    let config = SkillConfig {
        stage1_k: K,
        stage2_k: K,
        seed: 3,
        ..SkillConfig::default()
    };
    let skills = cluster(&embeddings, &config).unwrap().model;
    assert_eq!(skills.action_count(), K);

    // Every discovered cluster maps to exactly one planted action, on all bouts.
    let all: Vec<_> = load_bouts(&manifest.paths(Role::Training))
        .unwrap()
        .into_iter()
        .map(|b| annotate(b.record, 0.3).unwrap())
        .collect();
    let mut cluster_to_truth: HashMap<ActionId, ActionId> = HashMap::new();
    for bout in &all {
        for side in [Side::Left, Side::Right] {
            for (t, w) in bout.windows(side).iter().enumerate() {
                let found = skills.assign_window(w, None).unwrap();
                let truth = corpus.truth[&(bout.touch_id.clone(), side, t)];
                assert_eq!(*cluster_to_truth.entry(found).or_insert(truth), truth);
            }
        }
    }

    // Annotation matches the modes implied by the prototypes' displacements.
    for bout in &all {
        let n = bout.len();
        let left: Vec<_> = (0..n)
            .map(|t| corpus.truth[&(bout.touch_id.clone(), Side::Left, t)])
            .collect();
        let right: Vec<_> = (0..n)
            .map(|t| corpus.truth[&(bout.touch_id.clone(), Side::Right, t)])
            .collect();
        assert_eq!(
            bout.priority.as_ref().unwrap().modes,
            expected_modes(&corpus.prototypes, &left, &right)
        );
    }

    let strategy = fit_strategy(&all, &skills, StrategyConfig::default(), DistanceSampling::Start).unwrap();
    assert_eq!(strategy.action_count, K);
    let heldout: Vec<_> = load_bouts(&manifest.paths(Role::Heldout))
        .unwrap()
        .into_iter()
        .map(|b| annotate(b.record, 0.3).unwrap())
        .collect();
    let sequences = to_sequences(&heldout, &skills, DistanceSampling::Start).unwrap();
    let report = evaluate(&strategy, &sequences, &[1, K]).unwrap();
    assert_eq!(report.top_k[1].model, 1.0);

    let transcripts = run_batch(
        &strategy,
        &skills,
        &SimConfig::default(),
        &Policy::Model,
        &Policy::Random,
        25,
    )
    .unwrap();
    for t in &transcripts {
        assert!(!t.final_status.is_running());
        assert_eq!(replay(t).unwrap().status, t.final_status);
        for s in &t.steps {
            let clip = s.left.clip.as_ref().expect("retrieved clips are recorded");
            assert!(clip.bout_id.starts_with("bout-"));
        }
    }
}
