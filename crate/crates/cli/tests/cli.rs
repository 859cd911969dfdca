use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phaseforge::dataio::load_dataset;
use phaseforge::decode::feasibility_violations;
use phaseforge::prediction::{PredFlags, Predictions};
use phaseforge_cli::manifest::{verify, RunManifest};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_phaseforge"));
    c.env_remove("PHASEFORGE_JOBS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn phaseforge")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Bi-Sn at 5 at.% over seven temperatures: 147 labelled samples.
fn small_dataset(dir: &Path) -> PathBuf {
    let out = dir.join("d.txt");
    ok(&[
        "gen-data", "--binaries", "Bi-Sn", "--ternaries", "none", "--step", "5", "--t", "873.15:1053.15:30",
        "--out", s(&out),
    ]);
    out
}

fn small_run(dir: &Path, data: &Path, name: &str, seeds: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&[
        "train", "--data", s(data), "--out", s(&out), "--hidden", "16", "--epochs", "3", "--seeds", seeds, "--seed", "0",
    ]);
    out
}

#[test]
fn gen_data_is_deterministic_valid_and_manifested() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_dataset(dir.path());
    let b = dir.path().join("again.txt");
    ok(&[
        "gen-data", "--binaries", "Bi-Sn", "--ternaries", "none", "--step", "5", "--t", "873.15:1053.15:30",
        "--out", s(&b),
    ]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ds = load_dataset(&a).unwrap();
    ds.validate().unwrap();
    assert_eq!(ds.samples.len(), 21 * 7);
    let mp = dir.path().join("d.txt.manifest.json");
    assert!(verify(&mp).unwrap().is_empty());
    let m = RunManifest::load(&mp).unwrap();
    assert_eq!(m.command, "gen-data");
    assert_eq!(m.seeds, vec![7]);
    let listed: Vec<&str> = m.artifacts.iter().map(|x| x.path.as_str()).collect();
    assert_eq!(listed, ["d.txt", "d.txt.split.txt"]);

    // the same schedule in Celsius gives the same bytes
    let c = dir.path().join("c.txt");
    ok(&[
        "gen-data", "--binaries", "Bi-Sn", "--ternaries", "none", "--step", "5", "--t", "600:780:30", "--celsius",
        "--out", s(&c),
    ]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn split_reseeds_tags_only() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_dataset(dir.path());
    let b = dir.path().join("resplit.txt");
    ok(&["split", "--data", s(&a), "--out", s(&b), "--seed", "11"]);
    let (da, db) = (load_dataset(&a).unwrap(), load_dataset(&b).unwrap());
    assert_eq!(da.samples.len(), db.samples.len());
    let same_points = da.samples.iter().zip(&db.samples).all(|(x, y)| x.state == y.state && x.labels == y.labels);
    assert!(same_points);
    assert!(da.samples.iter().zip(&db.samples).any(|(x, y)| x.split != y.split));
}

#[test]
fn invalid_flags_and_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.txt");
    let o = s(&out);
    assert_eq!(code(&["gen-data", "--t", "1000:400:20", "--out", o]), 2);
    assert_eq!(code(&["gen-data", "--step", "3", "--out", o]), 2);
    assert_eq!(code(&["gen-data", "--binaries", "Ag-Xx", "--out", o]), 2);
    assert_eq!(code(&["gen-data", "--no-such-flag", "--out", o]), 2);
    assert!(!out.exists());
    let data = small_dataset(dir.path());
    let run_dir = dir.path().join("r");
    let r = s(&run_dir);
    assert_eq!(code(&["train", "--data", s(&data), "--out", r, "--physics", "bogus"]), 2);
    assert_eq!(code(&["train", "--data", s(&data), "--out", r, "--lr", "-1"]), 2);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[trian]\nlr = 0.1\n").unwrap();
    assert_eq!(code(&["train", "--data", s(&data), "--out", r, "--config", s(&cfg)]), 2);
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(code(&["train", "--data", s(&data), "--out", r, "--config", s(&cfg)]), 2);
    assert_eq!(code(&["sweep", "--data", s(&data), "--out", r]), 2);
    assert!(!run_dir.exists());
}

#[test]
fn divergence_exits_4_without_writing_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("r");
    let c = code(&[
        "train", "--data", s(&data), "--out", s(&out), "--hidden", "16", "--epochs", "2", "--seeds", "1", "--lr",
        "1e300",
    ]);
    assert_eq!(c, 4);
    assert!(!out.exists());
}

#[test]
fn training_twice_gives_identical_checkpoints_and_ten_seeds_give_ten_records() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let a = small_run(dir.path(), &data, "a", "1");
    let b = small_run(dir.path(), &data, "b", "1");
    for f in ["seed0/checkpoint.bin", "seed0/history.csv", "thresholds.txt", "runs.csv", "summary.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(verify(&a.join("manifest.json")).unwrap().is_empty());

    let ten = dir.path().join("ten");
    ok(&[
        "train", "--data", s(&data), "--out", s(&ten), "--hidden", "8", "--epochs", "1", "--physics", "gpr", "--lambda",
        "0.15", "--seeds", "10",
    ]);
    let runs = std::fs::read_to_string(ten.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 11);
    for k in 0..10 {
        assert!(ten.join(format!("seed{k}/checkpoint.bin")).is_file());
    }
    let toml = std::fs::read_to_string(ten.join("run.toml")).unwrap();
    assert!(toml.contains("penalty = \"gpr\"") && toml.contains("lambda = 0.15"));
    let m = RunManifest::load(&ten.join("manifest.json")).unwrap();
    assert_eq!(m.seeds, (0..10).collect::<Vec<u64>>());
    assert_eq!(m.artifacts.len(), 5 + 3 * 10);
}

#[test]
fn jobs_env_var_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let a = small_run(dir.path(), &data, "a", "2");
    let b = dir.path().join("b");
    let out = bin()
        .env("PHASEFORGE_JOBS", "2")
        .args([
            "train", "--data", s(&data), "--out", s(&b), "--hidden", "16", "--epochs", "3", "--seeds", "2", "--seed",
            "0",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    for f in ["seed0/checkpoint.bin", "seed1/checkpoint.bin", "thresholds.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let p1 = dir.path().join("p1.txt");
    let p2 = dir.path().join("p2.txt");
    ok(&["predict", "--run", s(&a), "--system", "Bi-Sn", "--t", "900:1000:50", "--out", s(&p1)]);
    ok(&["predict", "--run", s(&a), "--system", "Bi-Sn", "--t", "900:1000:50", "--out", s(&p2), "--jobs", "3"]);
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn decoded_grid_predictions_are_feasible_and_raw_ones_need_not_be() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let r = small_run(dir.path(), &data, "r", "1");
    let dec = dir.path().join("dec.txt");
    ok(&[
        "predict", "--run", s(&r), "--system", "Ag-Bi", "--comp-step", "1", "--t", "400:1000:50", "--decode", "--out",
        s(&dec),
    ]);
    let p = Predictions::load(&dec).unwrap();
    assert!(p.decoded);
    assert_eq!(p.len(), 101 * 13);
    assert_eq!(feasibility_violations(&p.labels, &p.states), 0);
    // every temperature below the training range is clamped and flagged
    assert!(p.flags.iter().zip(&p.states).all(|(f, q)| f.clamped_t == (q.t < 873.15)));

    // with every threshold at zero, even a single-element point gets all phases
    let raw = dir.path().join("raw.txt");
    ok(&[
        "predict", "--run", s(&r), "--system", "Ag-Bi", "--comp-step", "10", "--t", "973.15", "--thresholds", "0",
        "--out", s(&raw),
    ]);
    let p = Predictions::load(&raw).unwrap();
    assert!(!p.decoded);
    assert!(feasibility_violations(&p.labels, &p.states) > 0);
    let fixed = dir.path().join("fixed.txt");
    ok(&["decode", "--pred", s(&raw), "--run", s(&r), "--thresholds", "0", "--out", s(&fixed)]);
    let q = Predictions::load(&fixed).unwrap();
    assert_eq!(feasibility_violations(&q.labels, &q.states), 0);
    assert_eq!(q.probs, p.probs);
}

#[test]
fn quaternary_grid_covers_the_tetrahedron() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let r = small_run(dir.path(), &data, "r", "1");
    let out = dir.path().join("q.txt");
    ok(&[
        "predict", "--run", s(&r), "--system", "Ag-Bi-Cu-Sn", "--comp-step", "2", "--t", "973.15", "--decode", "--out",
        s(&out),
    ]);
    let p = Predictions::load(&out).unwrap();
    assert_eq!(p.len(), 23426);
    assert_eq!(feasibility_violations(&p.labels, &p.states), 0);
    let ppm = dir.path().join("q.ppm");
    ok(&["render", "--pred", s(&out), "--out", s(&ppm)]);
    assert!(std::fs::read(&ppm).unwrap().starts_with(b"P6\n102 2651\n255\n"));
}

#[test]
fn missing_checkpoints_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let r = small_run(dir.path(), &data, "r", "1");
    let out = dir.path().join("p.txt");
    let args = ["predict", "--run", s(&r), "--system", "Bi-Sn", "--t", "973.15", "--out", s(&out)];
    std::fs::remove_file(r.join("seed0/checkpoint.bin")).unwrap();
    assert_eq!(code(&args), 5);
    let nowhere = dir.path().join("nowhere");
    assert_eq!(
        code(&["predict", "--run", s(&nowhere), "--system", "Bi-Sn", "--t", "973.15", "--out", s(&out)]),
        5
    );
    assert!(!out.exists());
}

fn perfect_predictions(data: &Path, out: &Path) {
    let ds = load_dataset(data).unwrap();
    let k = ds.vocab.len();
    let labels: Vec<_> = ds.samples.iter().map(|s| s.labels).collect();
    let p = Predictions {
        elements: ds.elements.clone(),
        phases: ds.vocab.names().to_vec(),
        decoded: true,
        states: ds.samples.iter().map(|s| s.state.clone()).collect(),
        probs: phaseforge::decode::labels_as_probs(&labels, k),
        labels,
        flags: vec![PredFlags::default(); ds.samples.len()],
    };
    p.save(out).unwrap();
}

#[test]
fn eval_of_perfect_predictions_is_exact_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let pred = dir.path().join("perfect.txt");
    perfect_predictions(&data, &pred);
    let o = ok(&["eval", "--pred", s(&pred), "--truth", s(&data), "--out", s(&dir.path().join("e1"))]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("accuracy     100.0000%  (147/147)"), "{text}");
    assert!(text.contains("macro_f1     1.000000"));
    ok(&["eval", "--pred", s(&pred), "--truth", s(&data), "--out", s(&dir.path().join("e2"))]);
    for f in ["report.txt", "report.csv", "mismatch.csv", "multiplicity.csv"] {
        let a = std::fs::read(dir.path().join("e1").join(f)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("e2").join(f)).unwrap(), "{f}");
    }
    assert!(verify(&dir.path().join("e1/manifest.json")).unwrap().is_empty());

    // the oracle relabels the same points identically
    let o = ok(&["eval", "--pred", s(&pred), "--oracle", "--jobs", "2"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("100.0000%"));
}

#[test]
fn misaligned_truth_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let pred = dir.path().join("perfect.txt");
    perfect_predictions(&data, &pred);
    assert_eq!(code(&["eval", "--pred", s(&pred), "--truth", s(&data), "--split", "test"]), 6);
    let mut p = Predictions::load(&pred).unwrap();
    p.states[3].t += 1.0;
    p.save(&pred).unwrap();
    assert_eq!(code(&["eval", "--pred", s(&pred), "--truth", s(&data)]), 6);
    assert_eq!(code(&["eval", "--pred", s(&pred)]), 2);
}

#[test]
fn render_writes_deterministic_binary_maps() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let pred = dir.path().join("perfect.txt");
    perfect_predictions(&data, &pred);
    let m1 = dir.path().join("m1.ppm");
    let m2 = dir.path().join("m2.ppm");
    ok(&["render", "--pred", s(&pred), "--kind", "multiplicity", "--out", s(&m1)]);
    ok(&["render", "--pred", s(&pred), "--kind", "multiplicity", "--out", s(&m2)]);
    let bytes = std::fs::read(&m1).unwrap();
    assert_eq!(bytes, std::fs::read(&m2).unwrap());
    let header = b"P6\n21 7\n255\n";
    assert!(bytes.starts_with(header));
    assert_eq!(bytes.len(), header.len() + 21 * 7 * 3);
    let mm = dir.path().join("match.ppm");
    ok(&["render", "--pred", s(&pred), "--kind", "match", "--truth", s(&data), "--out", s(&mm)]);
    let px = &std::fs::read(&mm).unwrap()[header.len()..];
    assert!(px.chunks(3).all(|c| c == phaseforge::eval::MATCH_COLOR));
    assert_eq!(code(&["render", "--pred", s(&pred), "--kind", "match", "--out", s(&mm)]), 2);
}

#[test]
fn sweep_writes_nine_columns_and_tune_feeds_train() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let sw = dir.path().join("sweep");
    let o = ok(&[
        "sweep", "--data", s(&data), "--out", s(&sw), "--physics", "gpr", "--hidden", "8", "--sweep-epochs", "1",
        "--seeds", "1",
    ]);
    let table = std::fs::read_to_string(sw.join("sweep.tsv")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), table);
    let head: Vec<&str> = table.lines().next().unwrap().split('\t').collect();
    assert_eq!(head.len(), 10);
    assert_eq!(head[0], "lambda_gpr");
    assert_eq!(head[1], "0.05");
    assert_eq!(head[9], "0.45");

    let tu = dir.path().join("tune");
    let space = dir.path().join("space.toml");
    std::fs::write(&space, "[train]\nlayers = 2\n\n[search]\nhidden_dim = [8, 16]\nbatch_size = [32]\n").unwrap();
    ok(&[
        "tune", "--data", s(&data), "--out", s(&tu), "--config", s(&space), "--budget", "2", "--trial-epochs", "1",
        "--seeds", "1",
    ]);
    let best = tu.join("best.toml");
    let text = std::fs::read_to_string(&best).unwrap();
    assert!(text.contains("layers = 2") && text.contains("batch_size = 32"));
    let r = dir.path().join("r");
    ok(&["train", "--data", s(&data), "--out", s(&r), "--config", s(&best), "--epochs", "1"]);
}
