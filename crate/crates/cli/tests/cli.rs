use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use piste_core::io::{load_bouts, load_model, save_bout, Manifest, ManifestEntry, Role};
use piste_core::skills::SkillModel;
use piste_core::synthetic::{expected_modes, random_prototypes, render_bout};
use piste_core::{ActionId, PriorityMode, Side};
use serde_json::json;

const K: usize = 6;

fn piste(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_piste"))
        .args(args)
        .env_remove("PISTE_MANIFEST")
        .env_remove("PISTE_SKILLS")
        .env_remove("PISTE_STRATEGY")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = piste(args);
    assert!(
        out.status.success(),
        "piste {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Corpus {
    dir: tempfile::TempDir,
    actions: BTreeMap<String, (Vec<ActionId>, Vec<ActionId>)>,
}

impl Corpus {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// Twelve clustering bouts and two training bouts rendered from six prototypes.
fn corpus() -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let prototypes = random_prototypes(K, 1);
    let mut actions = BTreeMap::new();
    let mut entries = Vec::new();
    for b in 0..14usize {
        let n = 4 + b % 3;
        let left: Vec<_> = (0..n).map(|t| ActionId(((b + t) % K) as u16)).collect();
        let right: Vec<_> = (0..n).map(|t| ActionId(((5 * b + 2 * t + 1) % K) as u16)).collect();
        let id = format!("bout-{b:02}");
        let file = render_bout(&id, &prototypes, &left, &right, 0.02, b as u64).unwrap();
        save_bout(&dir.path().join(format!("{id}.jsonl")), &file).unwrap();
        let role = if b < 12 { Role::Clustering } else { Role::Training };
        entries.push(ManifestEntry {
            path: format!("{id}.jsonl").into(),
            role,
        });
        actions.insert(id, (left, right));
    }
    Manifest::new(entries)
        .unwrap()
        .save(&dir.path().join("manifest.json"))
        .unwrap();
    let c = Corpus { dir, actions };
    let manifest = c.path("manifest.json");
    ok(&[
        "embed",
        "--manifest",
        s(&manifest),
        "--role",
        "clustering",
        "-o",
        s(&c.path("emb.jsonl")),
    ]);
    ok(&[
        "cluster",
        "--embeddings",
        s(&c.path("emb.jsonl")),
        "--k1",
        "6",
        "--k2",
        "6",
        "--seed",
        "3",
        "-o",
        s(&c.path("skills.json")),
    ]);
    ok(&[
        "annotate",
        "--manifest",
        s(&manifest),
        "--role",
        "training",
        "-o",
        s(&c.path("touches.jsonl")),
    ]);
    ok(&[
        "fit",
        "--touches",
        s(&c.path("touches.jsonl")),
        "--skills",
        s(&c.path("skills.json")),
        "-o",
        s(&c.path("strategy.json")),
    ]);
    c
}

#[test]
fn exported_matrix_matches_hand_counts() {
    let c = corpus();
    let skills: SkillModel = load_model(&c.path("skills.json")).unwrap();
    let prototypes = random_prototypes(K, 1);

    // Count transitions by hand from the discovered action of every window.
    let mut expected: BTreeMap<(PriorityMode, u16, u16), Vec<u64>> = BTreeMap::new();
    let manifest = Manifest::load(&c.path("manifest.json")).unwrap();
    for bout in load_bouts(&manifest.paths(Role::Training)).unwrap() {
        let (left, right) = &c.actions[&bout.record.touch_id];
        let modes = expected_modes(&prototypes, left, right);
        let assign = |side: Side| -> Vec<u16> {
            bout.record
                .windows(side)
                .iter()
                .map(|w| skills.assign_window(w, None).unwrap().0)
                .collect()
        };
        let (l, r) = (assign(Side::Left), assign(Side::Right));
        for t in 1..l.len() {
            expected
                .entry((modes[t], l[t - 1], r[t - 1]))
                .or_insert_with(|| vec![0; K])[l[t] as usize] += 1;
            expected
                .entry((modes[t].reflect(), r[t - 1], l[t - 1]))
                .or_insert_with(|| vec![0; K])[r[t] as usize] += 1;
        }
    }
    assert!(!expected.is_empty());

    let mut seen = 0;
    for (mode, name) in [
        (PriorityMode::Neutral, "MM"),
        (PriorityMode::Holding, "P-NP"),
        (PriorityMode::Opposing, "NP-P"),
    ] {
        let csv = ok(&[
            "export-matrix",
            "--strategy",
            s(&c.path("strategy.json")),
            "--mode",
            name,
        ]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "u_prev,v_prev,observations,mean_distance,p0,p1,p2,p3,p4,p5"
        );
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            let (u, v): (u16, u16) = (cells[0].parse().unwrap(), cells[1].parse().unwrap());
            let n: u64 = cells[2].parse().unwrap();
            let counts = &expected[&(mode, u, v)];
            assert_eq!(n, counts.iter().sum::<u64>(), "{name} ({u},{v})");
            for (p, &c) in cells[4..].iter().zip(counts) {
                let p: f64 = p.parse().unwrap();
                assert!(
                    (p - c as f64 / n as f64).abs() < 1e-12,
                    "{name} ({u},{v}): {p} vs {c}/{n}"
                );
            }
            seen += 1;
        }
    }
    assert_eq!(seen, expected.len());
}

#[test]
fn predict_eval_simulate_and_replay() {
    let c = corpus();
    let strategy = c.path("strategy.json");
    let skills = c.path("skills.json");

    for extra in [&[][..], &["--u-prev", "1", "--v-prev", "2", "-d", "3.5"][..]] {
        let mut args = vec!["--json", "predict", "--strategy", s(&strategy), "--mode", "P-NP"];
        args.extend_from_slice(extra);
        let v: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
        let p: Vec<f64> = serde_json::from_value(v["probabilities"].clone()).unwrap();
        assert_eq!(p.len(), K);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    let out = ok(&[
        "--json",
        "eval",
        "--strategy",
        s(&strategy),
        "--skills",
        s(&skills),
        "--touches",
        s(&c.path("touches.jsonl")),
        "--k",
        "1,6",
    ]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["top_k"][1]["model"], 1.0);

    let run = |name: &str| {
        let path = c.path(name);
        ok(&[
            "simulate",
            "--strategy",
            s(&strategy),
            "--skills",
            s(&skills),
            "--right",
            "random",
            "-n",
            "20",
            "--seed",
            "9",
            "-o",
            s(&path),
        ]);
        std::fs::read_to_string(path).unwrap()
    };
    let (a, b) = (run("a.jsonl"), run("b.jsonl"));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 21);
    assert!(ok(&["replay", s(&c.path("a.jsonl"))]).contains("20 transcripts"));
}

#[test]
fn environment_supplies_model_paths() {
    let c = corpus();
    let out = Command::new(env!("CARGO_BIN_EXE_piste"))
        .args(["export-matrix", "--mode", "MM", "--format", "json"])
        .env("PISTE_STRATEGY", c.path("strategy.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["action_count"], K);
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "{text}");
    lines[0].to_string()
}

#[test]
fn errors_are_single_categorized_lines() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let line = error_line(&piste(&["export-matrix", "--strategy", s(&missing), "--mode", "MM"]));
    assert!(line.starts_with("error[io]: "), "{line}");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"format\": \"piste.strategy_model\", \"schema_version\": 99}").unwrap();
    let line = error_line(&piste(&["export-matrix", "--strategy", s(&bad), "--mode", "MM"]));
    assert!(line.starts_with("error[model-file]: "), "{line}");

    let out = piste(&["simulate", "--tau", "abc", "--strategy", "x", "--skills", "y"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error[usage]: "));

    let line = error_line(&piste(&["embed", "-o", s(&dir.path().join("e.jsonl"))]));
    assert!(line.starts_with("error[config]: "), "{line}");
}

#[test]
fn help_documents_defaults() {
    let top = ok(&["--help"]);
    for c in [
        "delta               0.3 m",
        "sigma               0.5 m",
        "tau                 1.5 m",
        "actions             30",
    ] {
        assert!(top.contains(c), "{c} missing from {top}");
    }
    let fit = ok(&["fit", "--help"]);
    assert!(fit.contains("[default: 0.5]"), "{fit}");
    assert!(fit.contains("[default: 0.3]"));
    let sim = ok(&["simulate", "--help"]);
    for d in ["[default: 1.5]", "[default: 2]", "[default: 50]", "[default: 0.3]"] {
        assert!(sim.contains(d), "{d} missing from {sim}");
    }
    let cluster = ok(&["cluster", "--help"]);
    assert!(cluster.contains("[default: 40]") && cluster.contains("[default: 30]"));
}

#[test]
fn calibrate_locates_fencers() {
    // Pixel column 100 x + 50, row 100 y + 20.
    let line = |id: &str, x: f64| json!({"line_id": id, "top_px": [100.0 * x + 50.0, 20.0], "bottom_px": [100.0 * x + 50.0, 220.0]});
    let file = json!({
        "schema_version": 1,
        "frames": [
            {
                "frame": 0,
                "lines": [line("left_warning", 2.0), line("middle", 7.0), line("right_warning", 12.0)],
                "borders": {"top": {"slope": 0.0, "intercept": 20.0}, "bottom": {"p0": [0, 220], "p1": [1400, 220]}},
                "left": {"median_column": 550.0},
                "right": {"mask_columns": [[949, 1], [950, 5], [951, 1]]}
            },
            {"frame": 1, "left": {"median_column": 650.0}}
        ]
    });
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("cal.json");
    std::fs::write(&input, file.to_string()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok(&["--json", "calibrate", s(&input)])).unwrap();
    let close = |v: &serde_json::Value, x: f64| (v.as_f64().unwrap() - x).abs() < 1e-9;
    assert!(close(&v[0]["left_x"], 5.0) && close(&v[0]["right_x"], 9.0), "{v}");
    assert_eq!(v[1]["homography_frame"], 0);
    assert!(close(&v[1]["left_x"], 6.0));

    let out = piste(&["calibrate", s(&input), "--inherit", "none"]);
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("frame 1: left - right - (homography from none)"));
}
