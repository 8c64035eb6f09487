use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use odas_core::dataset::{read_annotations, read_corpus_dir, SynthConfig};
use odas_core::experiment::{synthesize, train_model, DetectConfig, EvalSettings, ExperimentConfig};
use odas_core::training::{Methods, TrainConfig};
use odas_core::ModelConfig;
use tempfile::TempDir;

fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn odas(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odas"))
        .args(args)
        .current_dir(dir)
        .env_remove("ODAS_SEED")
        .output()
        .expect("binary runs")
}

fn odas_env(args: &[&str], dir: &Path, seed: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odas"))
        .args(args)
        .current_dir(dir)
        .env("ODAS_SEED", seed)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_config(seed: u64) -> ExperimentConfig {
    let mut synth = SynthConfig::new(seed, 3, 8, 10);
    synth.separation = 8.0;
    synth.video_sec = [40.0, 60.0];
    synth.action_sec = [6.0, 12.0];
    synth.gap_sec = [6.0, 12.0];
    let mut model = ModelConfig::new(3, 8, 16);
    model.noise_dim = 8;
    model.gen_hidden_dim = 16;
    model.lambda = 0.01;
    ExperimentConfig {
        synth,
        test_videos: 4,
        model,
        train: TrainConfig {
            batch_size: 16,
            lambda: 0.01,
            pretrain_iters: 150,
            gan_iters: 30,
            seed,
            ..TrainConfig::default()
        },
        detect: DetectConfig::default(),
        eval: EvalSettings::default(),
    }
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

/// Temp dir holding `exp.json` and a synthesized `data/{train,test}`.
fn prepared() -> TempDir {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "exp.json", &small_config(3));
    ok(&odas(&["synth", "--config", "exp.json", "--out", "data"], tmp.path()));
    tmp
}

fn train(dir: &Path, methods: &str, out: &str) {
    ok(&odas(
        &["train", "--config", "exp.json", "--data", "data/train", "--out", out, "--methods", methods],
        dir,
    ));
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn shipped_config_is_the_reference() {
    let tmp = TempDir::new().unwrap();
    let printed = ok(&odas(&["config"], tmp.path()));
    let shipped = fs::read_to_string(workspace_file("configs/reference.json")).unwrap();
    assert_eq!(printed, shipped);
    let parsed: ExperimentConfig = serde_json::from_str(&shipped).unwrap();
    assert_eq!(parsed, ExperimentConfig::reference());
}

#[test]
fn synth_is_reproducible_and_seed_env_overrides() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "exp.json", &small_config(7));
    ok(&odas(&["synth", "--config", "exp.json", "--out", "a"], tmp.path()));
    ok(&odas(&["synth", "--config", "exp.json", "--out", "b"], tmp.path()));
    ok(&odas_env(&["synth", "--config", "exp.json", "--out", "c"], tmp.path(), "8"));
    let a = dir_bytes(&tmp.path().join("a"));
    assert!(!a.is_empty());
    assert_eq!(a, dir_bytes(&tmp.path().join("b")));
    assert_ne!(a, dir_bytes(&tmp.path().join("c")));

    // the override is the same as writing the seed into the config
    write_config(tmp.path(), "exp8.json", &small_config(8));
    ok(&odas(&["synth", "--config", "exp8.json", "--out", "d"], tmp.path()));
    assert_eq!(dir_bytes(&tmp.path().join("c")), dir_bytes(&tmp.path().join("d")));
}

#[test]
fn synth_summary_matches_recount() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(5);
    write_config(tmp.path(), "exp.json", &cfg);
    let stdout = ok(&odas(&["synth", "--config", "exp.json", "--out", "data"], tmp.path()));
    for (split, videos) in [("train", 6), ("test", 4)] {
        let ann = read_annotations(tmp.path().join("data").join(split).join("annotations.json")).unwrap();
        assert_eq!(ann.videos.len(), videos);
        let instances: usize = ann.videos.iter().map(|v| v.instances.len()).sum();
        assert!(stdout.contains(&format!("{split}: {videos} videos, {instances} action instances")));
        for v in &ann.videos {
            let secs = v.duration();
            assert!(secs >= cfg.synth.video_sec[0] - 0.5 && secs <= cfg.synth.video_sec[1] + 0.5);
            for i in &v.instances {
                let d = i.end_sec - i.start_sec;
                assert!(d >= cfg.synth.action_sec[0] - 0.5 && d <= cfg.synth.action_sec[1] + 0.5);
                assert!((1..=3).contains(&i.class));
            }
        }
    }
    let corpus = read_corpus_dir(tmp.path().join("data/test")).unwrap();
    assert!(corpus.streams.iter().all(|s| s.dim == 8));
}

#[test]
fn bad_inputs_exit_2() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("broken.json"), "{ not json").unwrap();
    let out = odas(&["synth", "--config", "broken.json", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("broken.json"));

    let mut cfg = small_config(1);
    cfg.synth.num_classes = 0;
    write_config(tmp.path(), "zero.json", &cfg);
    assert_eq!(odas(&["synth", "--config", "zero.json", "--out", "x"], tmp.path()).status.code(), Some(2));

    write_config(tmp.path(), "ok.json", &small_config(1));
    let out = odas_env(&["synth", "--config", "ok.json", "--out", "x"], tmp.path(), "seven");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("ODAS_SEED"));

    let out = odas(&["train", "--config", "ok.json", "--data", "missing", "--out", "m.odnn"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_is_deterministic_and_empty_methods_is_plain_training() {
    let tmp = prepared();
    let dir = tmp.path();
    train(dir, "all", "a.odnn");
    train(dir, "adaptive,tc,gan", "b.odnn");
    assert_eq!(fs::read(dir.join("a.odnn")).unwrap(), fs::read(dir.join("b.odnn")).unwrap());
    assert_eq!(
        fs::read(dir.join("a.losses.csv")).unwrap(),
        fs::read(dir.join("b.losses.csv")).unwrap()
    );

    train(dir, "", "plain.odnn");
    let cfg = small_config(3);
    let corpus = read_corpus_dir(dir.join("data/train")).unwrap();
    let lib = train_model(&corpus, &cfg.model, &cfg.train, Methods::NONE).unwrap();
    assert_eq!(fs::read(dir.join("plain.odnn")).unwrap(), lib.checkpoint.to_bytes());

    let log = fs::read_to_string(dir.join("plain.losses.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("iter,loss_cls,loss_sim,loss_match,loss_real,loss_fake"));
    assert_eq!(lines.count(), 150);
}

#[test]
fn divergence_exits_3() {
    let tmp = prepared();
    let mut cfg = small_config(3);
    cfg.train.lr_pretrain = 1e300;
    cfg.train.pretrain_iters = 20;
    write_config(tmp.path(), "hot.json", &cfg);
    let out = odas(&["train", "--config", "hot.json", "--data", "data/train", "--out", "m.odnn"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn detect_threshold_one_is_empty_and_output_is_deterministic() {
    let tmp = prepared();
    let dir = tmp.path();
    train(dir, "all", "m.odnn");
    let base = ["detect", "--config", "exp.json", "--model", "m.odnn", "--streams", "data/test"];
    ok(&odas(&[&base[..], &["--threshold", "1.0", "--out", "none.csv"]].concat(), dir));
    assert_eq!(fs::read_to_string(dir.join("none.csv")).unwrap(), "video_id,time_sec,class_id,score\n");

    for out in ["p1.csv", "p2.csv"] {
        ok(&odas(&[&base[..], &["--train-split", "data/train", "--out", out]].concat(), dir));
    }
    let p1 = fs::read(dir.join("p1.csv")).unwrap();
    assert_eq!(p1, fs::read(dir.join("p2.csv")).unwrap());
    assert!(String::from_utf8(p1).unwrap().lines().count() > 1);

    let out = odas(&[&base[..], &["--out", "x.csv"]].concat(), dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--train-split"));
}

#[test]
fn detect_rejects_dimension_mismatch() {
    let tmp = prepared();
    let dir = tmp.path();
    train(dir, "none", "m.odnn");
    let mut other = small_config(3);
    other.synth.feature_dim = 6;
    other.model.feature_dim = 6;
    write_config(dir, "six.json", &other);
    ok(&odas(&["synth", "--config", "six.json", "--out", "six"], dir));

    let out = odas(
        &["detect", "--config", "six.json", "--model", "m.odnn", "--streams", "six/test", "--threshold", "0.5", "--out", "p.csv"],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("features"));

    // config agrees with the checkpoint, streams do not
    let out = odas(
        &["detect", "--config", "exp.json", "--model", "m.odnn", "--streams", "six/test", "--threshold", "0.5", "--out", "p.csv"],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("shape mismatch"));
}

fn average_map(report: &Path) -> f64 {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    v["average_map"].as_f64().unwrap()
}

#[test]
fn stride_runs_report_a_delta() {
    let tmp = prepared();
    let dir = tmp.path();
    train(dir, "all", "m.odnn");
    for stride in ["1", "8"] {
        let preds = format!("s{stride}.csv");
        let report = format!("s{stride}.json");
        ok(&odas(
            &["detect", "--config", "exp.json", "--model", "m.odnn", "--streams", "data/test", "--train-split", "data/train", "--stride", stride, "--out", &preds],
            dir,
        ));
        let stdout = ok(&odas(
            &["evaluate", "--predictions", &preds, "--ground-truth", "data/test/annotations.json", "--config", "exp.json", "--out", &report],
            dir,
        ));
        assert!(stdout.contains("average mAP"));
    }
    let (m1, m8) = (average_map(&dir.join("s1.json")), average_map(&dir.join("s8.json")));
    assert!((0.0..=1.0).contains(&m1) && (0.0..=1.0).contains(&m8));
    let p1 = fs::read_to_string(dir.join("s1.csv")).unwrap();
    let p8 = fs::read_to_string(dir.join("s8.csv")).unwrap();
    assert_ne!(p1, p8);
}

fn perfect_predictions(dir: &Path) -> String {
    let ann = read_annotations(dir.join("data/test/annotations.json")).unwrap();
    let mut csv = String::from("video_id,time_sec,class_id,score\n");
    for v in &ann.videos {
        for i in &v.instances {
            csv += &format!("{},{:.6},{},0.9\n", v.id, i.start_sec, i.class);
        }
    }
    csv
}

#[test]
fn perfect_predictions_score_one_and_report_matches_schema() {
    let tmp = prepared();
    let dir = tmp.path();
    fs::write(dir.join("perfect.csv"), perfect_predictions(dir)).unwrap();
    ok(&odas(
        &["evaluate", "--predictions", "perfect.csv", "--ground-truth", "data/test/annotations.json", "--num-classes", "3", "--out", "r.json", "--curves", "c.csv"],
        dir,
    ));
    assert_eq!(average_map(&dir.join("r.json")), 1.0);

    let schema: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(workspace_file("schemas/eval-report.schema.json")).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
    assert!(validator.is_valid(&report));
    let mut broken = report.clone();
    broken["average_map"] = serde_json::json!(1.5);
    assert!(!validator.is_valid(&broken));

    let curves = fs::read_to_string(dir.join("c.csv")).unwrap();
    assert!(curves.starts_with("offset,class,recall,precision\n"));
}

#[test]
fn evaluate_flags_override_config() {
    let tmp = prepared();
    let dir = tmp.path();
    fs::write(dir.join("perfect.csv"), perfect_predictions(dir)).unwrap();
    ok(&odas(
        &["evaluate", "--predictions", "perfect.csv", "--ground-truth", "data/test/annotations.json", "--config", "exp.json", "--offsets", "0.5,2", "--depth", "0.5", "--out", "r.json"],
        dir,
    ));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
    assert_eq!(v["ap_depth"], 0.5);
    let offsets: Vec<f64> = v["map_per_offset"].as_array().unwrap().iter().map(|m| m["offset"].as_f64().unwrap()).collect();
    assert_eq!(offsets, vec![0.5, 2.0]);
}

#[test]
fn malformed_predictions_exit_2_with_line_number() {
    let tmp = prepared();
    let dir = tmp.path();
    fs::write(
        dir.join("bad.csv"),
        "video_id,time_sec,class_id,score\nvideo_0006,1.0,1,0.5\nvideo_0006,abc,1,0.5\n",
    )
    .unwrap();
    let out = odas(
        &["evaluate", "--predictions", "bad.csv", "--ground-truth", "data/test/annotations.json", "--num-classes", "3", "--out", "r.json"],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
    assert!(!dir.join("r.json").exists());
}

#[test]
fn random_guess_detection_runs_through_the_cli() {
    let tmp = prepared();
    let dir = tmp.path();
    let args = ["detect", "--config", "exp.json", "--random-guess", "--streams", "data/test", "--train-split", "data/train", "--out"];
    ok(&odas(&[&args[..], &["r1.csv"]].concat(), dir));
    ok(&odas(&[&args[..], &["r2.csv"]].concat(), dir));
    assert_eq!(fs::read(dir.join("r1.csv")).unwrap(), fs::read(dir.join("r2.csv")).unwrap());
    ok(&odas(
        &["evaluate", "--predictions", "r1.csv", "--ground-truth", "data/test/annotations.json", "--config", "exp.json", "--out", "r.json"],
        dir,
    ));
    let m = average_map(&dir.join("r.json"));
    assert!((0.0..1.0).contains(&m));
}

#[test]
fn gradcheck_passes_and_detects_injected_fault() {
    let tmp = TempDir::new().unwrap();
    let first = ok(&odas(&["gradcheck", "--seed", "2"], tmp.path()));
    assert_eq!(first, ok(&odas(&["gradcheck", "--seed", "2"], tmp.path())));
    assert_eq!(first.matches("PASS").count(), 5);

    let out = odas(&["gradcheck", "--seed", "2", "--inject-fault", "0"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("FAIL").count(), 5);
    assert!(stderr(&out).contains("rel error"));
}

#[test]
fn synthesize_matches_cli_split() {
    let tmp = prepared();
    let (train, test) = synthesize(&small_config(3)).unwrap();
    assert_eq!(read_corpus_dir(tmp.path().join("data/train")).unwrap(), train);
    assert_eq!(read_corpus_dir(tmp.path().join("data/test")).unwrap(), test);
}
