use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cortexalign::encoder::ScoreTensor;
use cortexalign::io::{inspect, write_jsonl, write_matrix, Dtype};
use cortexalign::surprisal::TokenRecord;
use nalgebra::DMatrix;
use serde_json::{json, Value};

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cortexalign"))
        .current_dir(dir)
        .env_remove("CORTEXALIGN_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = cli(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_json(path: &Path, v: &Value) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    files
}

fn sim(seed: u64, n_layers: usize, similarity: f64) -> Value {
    json!({
        "seed": seed,
        "n_subjects": 5,
        "n_runs": 3,
        "n_tr": 60,
        "n_rois": 10,
        "dim": 4,
        "n_layers": n_layers,
        "layer_similarity": similarity,
    })
}

/// Token surprisal for three runs of two-token and one-token words.
fn write_surprisal(dir: &Path, name: &str, shift: f64) {
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for w in 0..30usize {
        let run = (w / 10) as u32 + 1;
        for k in 0..(1 + w % 2) {
            records.push(TokenRecord {
                token: records.len(),
                word: w,
                sentence: (w / 5) as u32,
                run,
                position: (w % 5 + k) as u32,
            });
            rows.push(
                (0..4)
                    .map(|l| 1.0 + shift + ((w * 7 + l * 3 + k) % 11) as f64 / (l + 1) as f64)
                    .collect::<Vec<_>>(),
            );
        }
    }
    let m = DMatrix::from_fn(rows.len(), 4, |i, j| rows[i][j]);
    write_matrix(&m, Dtype::F32, dir.join(format!("{name}_surprisal.enc"))).unwrap();
    write_jsonl(&records, dir.join(format!("{name}_tokens.jsonl"))).unwrap();
}

/// Runs every subcommand once under `root`, with configs in `root/cfg`.
fn pipeline(root: &Path, threads: &str) {
    let cfg = root.join("cfg");
    let t = ["--threads", threads];
    let run = |name: &str, config: Value, out: &str, extra: &[&str]| {
        let path = cfg.join(format!("{name}.json"));
        write_json(&path, &config);
        let mut args = vec![name, "--config", path.to_str().unwrap(), "--out", out];
        args.extend_from_slice(&t);
        args.extend_from_slice(extra);
        ok(root, &args);
    };
    let three: Vec<Value> = ["L1", "L2", "L3"]
        .iter()
        .map(|n| json!({"name": n, "scores": format!("../out/encode_{n}/scores")}))
        .collect();

    run(
        "simulate",
        json!({"sim": sim(4, 3, 0.4), "three_languages": {"shared": [0, 1], "private": [[2], [3], [4]]}}),
        "out/simulate",
        &[],
    );
    let before = snapshot(&root.join("out/simulate"));
    run(
        "design",
        json!({"manifest": "../out/simulate/L1/manifest.json", "layers": [2]}),
        "out/design",
        &[],
    );
    for n in ["L1", "L2", "L3"] {
        let path = cfg.join(format!("encode_{n}.json"));
        write_json(
            &path,
            &json!({"manifest": format!("../out/simulate/{n}/manifest.json"), "ridge": {"alphas": [0.1, 10.0, 1000.0]}}),
        );
        let out = format!("out/encode_{n}");
        ok(
            root,
            &[
                "encode",
                "--config",
                path.to_str().unwrap(),
                "--out",
                &out,
                "--threads",
                threads,
            ],
        );
    }
    let l1 = "../out/encode_L1/scores";
    run("group-map", json!({"scores": l1}), "out/group_map", &[]);
    run(
        "layer-compare",
        json!({"scores": l1, "signflip": {"n_perm": 500, "exact_max_subjects": 0}}),
        "out/layer_compare",
        &[],
    );
    run(
        "model-compare",
        json!({
            "a": {"name": "L1-layer1", "scores": l1, "layer": 1},
            "b": {"name": "L1-layer3", "scores": l1, "layer": 3},
            "signflip": {"sidedness": "greater"},
        }),
        "out/model_compare",
        &[],
    );
    run(
        "overlap",
        json!({"languages": three, "layer": 1}),
        "out/overlap",
        &[],
    );
    run(
        "preferred-layer",
        json!({"scores": l1}),
        "out/preferred",
        &[],
    );
    run(
        "networks",
        json!({"languages": three, "atlas": "../out/simulate/L1/atlas.csv"}),
        "out/networks",
        &[],
    );
    run(
        "convergence",
        json!({"languages": three, "significant_only": true}),
        "out/convergence",
        &[],
    );
    run(
        "id",
        json!({"manifests": ["../out/simulate/L1/manifest.json"], "max_n": 100, "seed": 3}),
        "out/id",
        &[],
    );
    for (i, n) in ["L1", "L2", "L3"].iter().enumerate() {
        write_surprisal(&cfg, n, i as f64 * 0.1);
    }
    run(
        "surprisal",
        json!({"languages": (["L1", "L2", "L3"].iter().map(|n| json!({
            "name": n, "matrix": format!("{n}_surprisal.enc"), "alignment": format!("{n}_tokens.jsonl"),
        })).collect::<Vec<_>>())}),
        "out/surprisal",
        &[],
    );
    let mut report_langs = three.clone();
    report_langs[0]["layer_fractions"] = json!("../out/layer_compare/layer_fractions.csv");
    run(
        "report",
        json!({
            "languages": report_langs,
            "atlas": "../out/simulate/L1/atlas.csv",
            "model_compare": "../out/model_compare/model_compare.csv",
            "surprisal": "../out/surprisal/surprisal_layers.csv",
            "id": "../out/id/id.csv",
        }),
        "out/report",
        &["--plots"],
    );
    assert_eq!(
        before,
        snapshot(&root.join("out/simulate")),
        "inputs were modified"
    );
}

#[test]
fn every_subcommand_is_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), "1");
    pipeline(b.path(), "8");
    let (sa, sb) = (
        snapshot(&a.path().join("out")),
        snapshot(&b.path().join("out")),
    );
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{} differs", k.display());
    }
    for stage in [
        "simulate",
        "design",
        "encode_L1",
        "group_map",
        "layer_compare",
        "model_compare",
        "overlap",
        "preferred",
        "networks",
        "convergence",
        "id",
        "surprisal",
        "report",
    ] {
        let files: Vec<_> = sa
            .keys()
            .filter(|p| p.starts_with(stage) && p.extension().is_some_and(|e| e == "csv"))
            .collect();
        assert!(!files.is_empty(), "{stage} wrote no CSV");
        let prov = sa
            .keys()
            .find(|p| p.starts_with(stage) && p.to_string_lossy().ends_with(".provenance.json"))
            .unwrap_or_else(|| panic!("{stage} has no provenance record"));
        let record: Value = serde_json::from_slice(&sa[prov]).unwrap();
        assert_eq!(record["config_sha256"].as_str().unwrap().len(), 64);
        for art in record["artifacts"].as_array().unwrap() {
            let rel = Path::new(stage).join(art["path"].as_str().unwrap());
            assert!(
                sa.contains_key(&rel),
                "{} listed but missing",
                rel.display()
            );
        }
    }
    for svg in [
        "report/fig3a_layer_fractions_L1.svg",
        "report/fig5a_networks_L1.svg",
        "report/fig5c_layer_scores.svg",
        "report/fig5d_surprisal.svg",
        "report/fig5e_id.svg",
    ] {
        assert!(sa.contains_key(Path::new(svg)), "{svg} missing");
    }
    assert!(sa.keys().all(|p| !p.ends_with(".cortexalign.lock")));
}

#[test]
fn rerun_into_same_directory_is_idempotent() {
    let d = tempfile::tempdir().unwrap();
    write_json(&d.path().join("sim.json"), &json!({"sim": sim(9, 2, 0.0)}));
    ok(
        d.path(),
        &["simulate", "--config", "sim.json", "--out", "s"],
    );
    write_json(
        &d.path().join("enc.json"),
        &json!({"manifest": "s/L1/manifest.json"}),
    );
    ok(d.path(), &["encode", "--config", "enc.json", "--out", "e"]);
    let first = snapshot(&d.path().join("e"));
    let out = Command::new(env!("CARGO_BIN_EXE_cortexalign"))
        .current_dir(d.path())
        .env("CORTEXALIGN_THREADS", "3")
        .args(["encode", "--config", "enc.json", "--out", "e"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(first, snapshot(&d.path().join("e")));
}

#[test]
fn encode_writes_score_tensor_of_declared_shape() {
    let d = tempfile::tempdir().unwrap();
    write_json(&d.path().join("sim.json"), &json!({"sim": sim(2, 3, 0.2)}));
    ok(
        d.path(),
        &["simulate", "--config", "sim.json", "--out", "s"],
    );
    write_json(
        &d.path().join("enc.json"),
        &json!({"manifest": "s/L1/manifest.json", "layers": [1, 3]}),
    );
    ok(d.path(), &["encode", "--config", "enc.json", "--out", "e"]);
    let info = inspect(d.path().join("e/scores/scores.enc")).unwrap();
    assert_eq!(info.shape, vec![5, 2, 10]);
    let folds = inspect(d.path().join("e/scores/folds.enc")).unwrap();
    assert_eq!(folds.shape, vec![5, 2, 10, 3]);
    let t = ScoreTensor::load(d.path().join("e/scores")).unwrap();
    assert_eq!(t.layers, vec![1, 3]);
    assert_eq!(t.runs, vec![1, 2, 3]);
    let csv = std::fs::read_to_string(d.path().join("e/scores.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 * 2 * 10);
}

#[test]
fn layer_compare_on_identical_layers_is_all_zero() {
    let d = tempfile::tempdir().unwrap();
    write_json(&d.path().join("sim.json"), &json!({"sim": sim(5, 2, 1.0)}));
    ok(
        d.path(),
        &["simulate", "--config", "sim.json", "--out", "s"],
    );
    write_json(
        &d.path().join("enc.json"),
        &json!({"manifest": "s/L1/manifest.json"}),
    );
    ok(d.path(), &["encode", "--config", "enc.json", "--out", "e"]);
    write_json(&d.path().join("lc.json"), &json!({"scores": "e/scores"}));
    ok(
        d.path(),
        &["layer-compare", "--config", "lc.json", "--out", "lc"],
    );
    let text = std::fs::read_to_string(d.path().join("lc/layer_fractions.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().flatten().all(|&v| v == 0.0), "{text}");
}

#[test]
fn seed_flag_overrides_config() {
    let d = tempfile::tempdir().unwrap();
    write_json(&d.path().join("a.json"), &json!({"sim": sim(5, 2, 0.0)}));
    write_json(&d.path().join("b.json"), &json!({"sim": sim(1, 2, 0.0)}));
    ok(d.path(), &["simulate", "--config", "a.json", "--out", "a"]);
    ok(
        d.path(),
        &[
            "simulate", "--config", "b.json", "--out", "b", "--seed", "5",
        ],
    );
    assert_eq!(snapshot(&d.path().join("a")), snapshot(&d.path().join("b")));
    let record: Value = serde_json::from_slice(
        &std::fs::read(d.path().join("b/simulate.provenance.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(record["seed"], 5);
    assert_eq!(record["config"]["sim"]["seed"], 5);
}

fn error_of(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("not JSON: {text}"))
}

#[test]
fn exit_codes_follow_failure_class() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();

    let out = cli(p, &["simulate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["error"]["class"], "config");

    std::fs::write(
        p.join("bad.json"),
        "{\"sim\": {\"n_subjects\": 5, \"typo\": 1}}",
    )
    .unwrap();
    let out = cli(p, &["simulate", "--config", "bad.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_of(&out);
    assert_eq!(err["error"]["class"], "config");
    assert_eq!(err["error"]["subcommand"], "simulate");

    write_json(&p.join("gm.json"), &json!({"scores": "missing"}));
    let out = cli(p, &["group-map", "--config", "gm.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["error"]["class"], "io");

    write_json(&p.join("q.json"), &json!({"scores": "missing", "q": 1.5}));
    let out = cli(p, &["group-map", "--config", "q.json", "--out", "o"]);
    assert_eq!(error_of(&out)["error"]["class"], "config");

    write_surprisal(p, "neg", -5.0);
    write_json(
        &p.join("s.json"),
        &json!({"languages": [{"name": "neg", "matrix": "neg_surprisal.enc", "alignment": "neg_tokens.jsonl"}]}),
    );
    let out = cli(p, &["surprisal", "--config", "s.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"]["class"], "numeric");

    let out = cli(p, &["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    let out = cli(p, &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(!p.join("o/.cortexalign.lock").exists());
}

#[test]
fn locked_output_directory_is_refused() {
    let d = tempfile::tempdir().unwrap();
    std::fs::create_dir(d.path().join("o")).unwrap();
    std::fs::write(d.path().join("o/.cortexalign.lock"), "1").unwrap();
    let out = cli(d.path(), &["simulate", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_of(&out)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("in use"));
    assert!(!d.path().join("o/ground_truth.json").exists());
    assert!(d.path().join("o/.cortexalign.lock").exists());
}

#[test]
fn report_without_plots_writes_no_images() {
    let d = tempfile::tempdir().unwrap();
    write_json(&d.path().join("sim.json"), &json!({"sim": sim(6, 2, 0.0)}));
    ok(
        d.path(),
        &["simulate", "--config", "sim.json", "--out", "s"],
    );
    write_json(
        &d.path().join("enc.json"),
        &json!({"manifest": "s/L1/manifest.json"}),
    );
    ok(d.path(), &["encode", "--config", "enc.json", "--out", "e"]);
    write_json(
        &d.path().join("r.json"),
        &json!({"languages": [{"name": "L1", "scores": "e/scores"}]}),
    );
    ok(d.path(), &["report", "--config", "r.json", "--out", "r"]);
    let files = snapshot(&d.path().join("r"));
    assert!(files
        .keys()
        .all(|p| p.extension().is_none_or(|e| e != "svg")));
    let md = String::from_utf8(files[Path::new("report.md")].clone()).unwrap();
    assert!(md.contains("| L1 | 1 |"));
    assert!(files.contains_key(Path::new("fig5c_layer_scores.csv")));
}
