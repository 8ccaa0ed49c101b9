use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use serde::Serialize;
use serde_json::json;

use piste_core::eval::evaluate;
use piste_core::features::FeatureConfig;
use piste_core::geometry::{calibrate_frames, InheritPolicy};
use piste_core::io::{
    content_hash, load_bouts, load_calibration, load_model, load_touches, load_transcripts, save_model, save_touches,
    save_transcripts, write_atomic, EmbeddingsFile, LoadedBout, Manifest, Role,
};
use piste_core::pipeline::{annotate, cluster, embed_bouts, fit_strategy, to_sequences};
use piste_core::sim::{replay, run_batch, Policy, SimConfig};
use piste_core::skills::{SkillConfig, SkillModel};
use piste_core::strategy::{
    BackoffPolicy, ContextSource, DistanceSampling, DistanceWeighting, StrategyConfig, StrategyModel,
};
use piste_core::{ActionId, BoutRecord, Error, PriorityMode, Result};

use crate::{
    AnnotateArgs, Backoff, BoutSource, CalibrateArgs, Cli, ClusterArgs, Command, EmbedArgs, EvalArgs, ExportArgs,
    FitArgs, Inherit, MatrixFormat, PolicyArg, PredictArgs, ReplayArgs, RoleArg, Sampling, ServeArgs, SimParams,
    SimulateArgs, Weighting,
};

pub fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    match cli.command {
        Command::Calibrate(a) => calibrate(a, json),
        Command::Embed(a) => embed(a, json),
        Command::Cluster(a) => cluster_cmd(a, json),
        Command::Annotate(a) => annotate_cmd(a, json),
        Command::Fit(a) => fit(a, json),
        Command::Simulate(a) => simulate(a, json),
        Command::Predict(a) => predict(a, json),
        Command::Eval(a) => eval(a, json),
        Command::ExportMatrix(a) => export_matrix(a, json),
        Command::Serve(a) => serve(a),
        Command::Replay(a) => replay_cmd(a, json),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn load_source(source: &BoutSource) -> Result<Vec<LoadedBout>> {
    if !source.bouts.is_empty() {
        if source.manifest.is_some() {
            return Err(Error::Config("give either --bout files or --manifest, not both".into()));
        }
        return load_bouts(&source.bouts);
    }
    let (Some(manifest), Some(role)) = (&source.manifest, source.role) else {
        return Err(Error::Config(
            "give --bout files, or --manifest together with --role".into(),
        ));
    };
    let role = match role {
        RoleArg::Clustering => Role::Clustering,
        RoleArg::Training => Role::Training,
        RoleArg::Heldout => Role::Heldout,
    };
    let paths = Manifest::load(manifest)?.paths(role);
    if paths.is_empty() {
        warn!("manifest {} has no {role:?} bouts", manifest.display());
    }
    load_bouts(&paths)
}

/// Annotated touches from touches files, or from bouts annotated on the fly.
fn load_annotated(touches: &[std::path::PathBuf], source: &BoutSource, delta: f64) -> Result<Vec<BoutRecord>> {
    if !touches.is_empty() {
        let mut out = Vec::new();
        for path in touches {
            out.extend(load_touches(path)?.1);
        }
        return Ok(out);
    }
    load_source(source)?
        .into_iter()
        .map(|b| annotate(b.record, delta))
        .collect()
}

fn sampling(s: Sampling) -> DistanceSampling {
    match s {
        Sampling::Start => DistanceSampling::Start,
        Sampling::Mean => DistanceSampling::Mean,
        Sampling::End => DistanceSampling::End,
    }
}

fn sim_config(p: &SimParams, seed: u64) -> SimConfig {
    SimConfig {
        tau_crash: p.tau,
        touch_distance: p.touch_distance,
        delta: p.delta,
        max_steps: p.max_steps,
        start_left: p.start_left,
        start_right: p.start_right,
        seed,
        ..SimConfig::default()
    }
}

fn calibrate(a: CalibrateArgs, json: bool) -> Result<()> {
    let file = load_calibration(&a.input)?;
    let policy = match a.inherit {
        Inherit::Nearest => InheritPolicy::Nearest,
        Inherit::Previous => InheritPolicy::Previous,
        Inherit::None => InheritPolicy::None,
    };
    let positions = calibrate_frames(&file, policy);
    if let Some(out) = &a.output {
        write_json(out, &positions)?;
    }
    if json {
        return print_json(&positions);
    }
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |x| format!("{x:.3}"));
    for p in &positions {
        let src = p.homography_frame.map_or("none".to_string(), |f| f.to_string());
        println!(
            "frame {}: left {} right {} (homography from {src})",
            p.frame,
            fmt(p.left_x),
            fmt(p.right_x)
        );
        for e in &p.errors {
            println!("  {e}");
        }
    }
    Ok(())
}

fn embed(a: EmbedArgs, json: bool) -> Result<()> {
    let bouts: Vec<BoutRecord> = load_source(&a.source)?.into_iter().map(|b| b.record).collect();
    let file = embed_bouts(
        &bouts,
        FeatureConfig {
            external_dim: a.external_dim,
        },
    )?;
    file.save(&a.output)?;
    let dim = file.featurizer.layout().dim;
    if json {
        return print_json(&json!({"bouts": bouts.len(), "windows": file.records.len(), "dim": dim}));
    }
    println!(
        "embedded {} windows from {} bouts (dimension {dim})",
        file.records.len(),
        bouts.len()
    );
    Ok(())
}

fn cluster_cmd(a: ClusterArgs, json: bool) -> Result<()> {
    let embeddings = EmbeddingsFile::load(&a.embeddings)?;
    let labels = match &a.labels {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read labels {}: {e}", path.display())))?;
            Some(
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect(),
            )
        }
        None => None,
    };
    let config = SkillConfig {
        stage1_k: a.k1,
        stage2_k: a.k2,
        excluded_stage1: a.exclude.iter().copied().collect(),
        finishing: a.finishing.map(|f| f.into_iter().map(ActionId).collect()),
        labels,
        seed: a.seed,
        max_iter: a.max_iter,
        ..SkillConfig::default()
    };
    let fit = cluster(&embeddings, &config)?;
    save_model(&a.output, &fit.model)?;
    let m = &fit.model;
    let sizes: Vec<usize> = m.clips.iter().map(Vec::len).collect();
    if json {
        return print_json(&json!({
            "actions": m.action_count(),
            "stage1_points": m.stage1_points,
            "stage2_points": m.stage2_points,
            "stage2_inertia": m.stage2.inertia,
            "cluster_sizes": sizes,
        }));
    }
    println!(
        "{} actions from {} windows ({} kept after stage 1), inertia {:.4}",
        m.action_count(),
        m.stage1_points,
        m.stage2_points,
        m.stage2.inertia
    );
    for a in m.actions() {
        let mark = if m.is_finishing(a) { " [finishing]" } else { "" };
        println!("  {a:>4} {:>5} clips  {}{mark}", sizes[a.index()], m.label(a));
    }
    Ok(())
}

fn mode_counts(bouts: &[BoutRecord]) -> BTreeMap<&'static str, usize> {
    let mut counts = BTreeMap::new();
    for b in bouts {
        for m in b.priority.iter().flat_map(|p| &p.modes) {
            *counts.entry(m.label()).or_insert(0) += 1;
        }
    }
    counts
}

fn annotate_cmd(a: AnnotateArgs, json: bool) -> Result<()> {
    let touches: Vec<BoutRecord> = load_source(&a.source)?
        .into_iter()
        .map(|b| annotate(b.record, a.delta))
        .collect::<Result<_>>()?;
    save_touches(&a.output, a.delta, &touches)?;
    let counts = mode_counts(&touches);
    if json {
        return print_json(&json!({"touches": touches.len(), "modes": counts}));
    }
    let summary: Vec<String> = counts.iter().map(|(m, n)| format!("{m} {n}")).collect();
    println!("annotated {} touches: {}", touches.len(), summary.join(", "));
    Ok(())
}

fn fit(a: FitArgs, json: bool) -> Result<()> {
    let skills: SkillModel = load_model(&a.skills)?;
    let touches = load_annotated(&a.touches, &a.source, a.delta)?;
    let config = StrategyConfig {
        sigma: a.sigma,
        weighting: match a.weighting {
            Weighting::PerCandidate => DistanceWeighting::PerCandidate,
            Weighting::PerContext => DistanceWeighting::PerContext,
        },
        backoff: match a.backoff {
            Backoff::Marginal => BackoffPolicy::MarginalThenUniform,
            Backoff::Uniform => BackoffPolicy::Uniform,
        },
        laplace: a.laplace,
    };
    let model = fit_strategy(&touches, &skills, config, sampling(a.distance))?;
    save_model(&a.output, &model)?;
    let contexts: usize = model.tables.iter().map(|t| t.contexts.len()).sum();
    if json {
        return print_json(&json!({
            "touches": model.provenance.touches,
            "transitions": model.provenance.transitions,
            "contexts": contexts,
            "dataset_hash": model.provenance.dataset_hash,
        }));
    }
    println!(
        "fitted {} transitions from {} touches ({contexts} contexts)",
        model.provenance.transitions, model.provenance.touches
    );
    Ok(())
}

fn load_pair(strategy: &Path, skills: &Path) -> Result<(StrategyModel, SkillModel)> {
    Ok((load_model(strategy)?, load_model(skills)?))
}

fn policy(p: PolicyArg) -> Policy {
    match p {
        PolicyArg::Model => Policy::Model,
        PolicyArg::Random => Policy::Random,
    }
}

fn simulate(a: SimulateArgs, json: bool) -> Result<()> {
    let (strategy, skills) = load_pair(&a.models.strategy, &a.models.skills)?;
    let config = sim_config(&a.params, a.seed);
    let mut transcripts = run_batch(&strategy, &skills, &config, &policy(a.left), &policy(a.right), a.n)?;
    let (sh, kh) = (content_hash(&strategy)?, content_hash(&skills)?);
    for t in &mut transcripts {
        t.header.strategy_hash = Some(sh.clone());
        t.header.skills_hash = Some(kh.clone());
    }
    if let Some(out) = &a.output {
        save_transcripts(out, &transcripts)?;
    }
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for t in &transcripts {
        *tally.entry(t.final_status.to_string()).or_insert(0) += 1;
    }
    if json {
        let touches: Vec<_> = transcripts
            .iter()
            .map(|t| json!({"touch": t.header.touch_index, "status": t.final_status, "steps": t.steps.len()}))
            .collect();
        return print_json(&json!({"touches": touches, "statuses": tally}));
    }
    for t in &transcripts {
        println!(
            "touch {}: {} after {} steps",
            t.header.touch_index,
            t.final_status,
            t.steps.len()
        );
    }
    let summary: Vec<String> = tally.iter().map(|(s, n)| format!("{s} {n}")).collect();
    println!("{} touches: {}", transcripts.len(), summary.join(", "));
    Ok(())
}

fn action_arg(id: usize, count: usize) -> Result<ActionId> {
    ActionId::checked(id, count)
}

fn predict(a: PredictArgs, json: bool) -> Result<()> {
    let mut model: StrategyModel = load_model(&a.strategy)?;
    let skills: Option<SkillModel> = a.skills.as_deref().map(load_model).transpose()?;
    if let Some(s) = &skills {
        if s.action_count() != model.action_count {
            return Err(Error::Config(
                "strategy and skill models disagree on the action count".into(),
            ));
        }
    }
    let mode: PriorityMode = a.mode.parse()?;
    if let Some(sigma) = a.sigma {
        model.config.sigma = sigma;
        model.config.validate()?;
    }
    let (probabilities, source) = match (a.u_prev, a.v_prev, a.d) {
        (Some(u), Some(v), Some(d)) => {
            let k = model.action_count;
            let dist = model.action_distribution(mode, action_arg(u, k)?, action_arg(v, k)?, d)?;
            (dist.probabilities, Some(dist.source))
        }
        (None, None, None) => (model.initial_distribution(mode), None),
        _ => {
            return Err(Error::Config(
                "give all of --u-prev, --v-prev and -d, or none for the opening distribution".into(),
            ))
        }
    };
    let label = |i: usize| skills.as_ref().map(|s| s.label(ActionId(i as u16)).to_string());
    if json {
        let source = source.map_or("opening", |s| match s {
            ContextSource::Observed => "observed",
            ContextSource::Marginal => "marginal",
            ContextSource::Uniform => "uniform",
        });
        return print_json(&json!({"mode": mode, "source": source, "probabilities": probabilities}));
    }
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&x, &y| probabilities[y].total_cmp(&probabilities[x]).then(x.cmp(&y)));
    match source {
        Some(s) => println!("context source: {s:?}"),
        None => println!("opening distribution"),
    }
    for i in order.into_iter().take(a.top.unwrap_or(usize::MAX)) {
        let l = label(i).map(|l| format!("  {l}")).unwrap_or_default();
        println!("{:>4}  {:.6}{l}", ActionId(i as u16).to_string(), probabilities[i]);
    }
    Ok(())
}

fn eval(a: EvalArgs, json: bool) -> Result<()> {
    let (strategy, skills) = load_pair(&a.models.strategy, &a.models.skills)?;
    let touches = load_annotated(&a.touches, &a.source, a.delta)?;
    let sequences = to_sequences(&touches, &skills, sampling(a.distance))?;
    let report = evaluate(&strategy, &sequences, &a.k)?;
    if json {
        return print_json(&report);
    }
    println!("{} predictions", report.predictions);
    for t in &report.top_k {
        println!("top-{}: model {:.4}, random {:.4}", t.k, t.model, t.random);
    }
    println!(
        "mean log-likelihood: model {:.4}, random {:.4}",
        report.mean_log_likelihood, report.random_log_likelihood
    );
    Ok(())
}

fn export_matrix(a: ExportArgs, json: bool) -> Result<()> {
    let model: StrategyModel = load_model(&a.strategy)?;
    let slice = model.export_matrix(a.mode.parse()?);
    let text = if json || matches!(a.format, MatrixFormat::Json) {
        serde_json::to_string_pretty(&slice)? + "\n"
    } else {
        let mut out = String::from("u_prev,v_prev,observations,mean_distance");
        for i in 0..slice.action_count {
            out.push_str(&format!(",p{i}"));
        }
        out.push('\n');
        for r in &slice.rows {
            let mean = r.mean_distance.map_or(String::new(), |d| d.to_string());
            out.push_str(&format!("{},{},{},{mean}", r.u_prev.0, r.v_prev.0, r.observations));
            for p in &r.probabilities {
                out.push_str(&format!(",{p}"));
            }
            out.push('\n');
        }
        out
    };
    match &a.output {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let (strategy, skills) = load_pair(&a.models.strategy, &a.models.skills)?;
    let models = Arc::new(piste_service::Models::new(strategy, skills)?);
    let defaults = sim_config(&a.params, 0);
    defaults.validate()?;
    let store = piste_service::SessionStore::new(Some(models), defaults, !a.hide_distribution);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Config(format!("cannot start runtime: {e}")))?;
    eprintln!("serving on http://{}", a.addr);
    runtime
        .block_on(piste_service::serve(a.addr, store))
        .map_err(|e| Error::Config(format!("cannot serve on {}: {e}", a.addr)))
}

fn replay_cmd(a: ReplayArgs, json: bool) -> Result<()> {
    let transcripts = load_transcripts(&a.input)?;
    for (i, t) in transcripts.iter().enumerate() {
        replay(t).map_err(|e| Error::Validation(format!("transcript {i}: {e}")))?;
    }
    if json {
        return print_json(&json!({"verified": transcripts.len()}));
    }
    println!("{} transcripts replay to their recorded states", transcripts.len());
    Ok(())
}
