use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use caadmm::nn::Checkpoint;
use caadmm::rl::{load_actor, load_actor_named, TrainConfig, Trainer};

fn caadmm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caadmm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn gen_one(dir: &Path) -> String {
    let o = caadmm(&["gen", "--family", "random-qp", "--n", "6", "--seed", "5", "--out-dir", "p"], dir);
    assert_eq!(code(&o), 0);
    "p/random-qp-6-5.json".into()
}

const TINY: &str = "seed = 2\nbatch_size = 2\nwarmup = 3\nn_min = 3\nn_max = 4\nmax_mdp_steps = 4\nlog_every = 2\neval_instances = 1\n";

#[test]
fn gen_names_files_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gen", "--family", "svm", "--n", "3", "--count", "2", "--seed", "7", "--out-dir", "a"];
    assert_eq!(code(&caadmm(&args, dir.path())), 0);
    let first = fs::read(dir.path().join("a/svm-3-8.json")).unwrap();
    assert!(dir.path().join("a/svm-3-7.json").exists());
    assert_eq!(fs::read_dir(dir.path().join("a")).unwrap().count(), 2);
    assert_eq!(code(&caadmm(&args, dir.path())), 0);
    assert_eq!(fs::read(dir.path().join("a/svm-3-8.json")).unwrap(), first);
}

#[test]
fn gen_rejects_unknown_family() {
    let dir = tempfile::tempdir().unwrap();
    let o = caadmm(&["gen", "--family", "nope", "--n", "3"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
}

#[test]
fn solve_exit_codes_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let p = gen_one(dir.path());
    let o = caadmm(&["solve", &p, "--policy", "heuristic", "--trace", "t.csv"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("status=solved"));
    let trace = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(trace.starts_with("iteration,norm_r_primal"));

    let o = caadmm(&["solve", &p, "--policy", "fixed:1e-6", "--max-iter", "20"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("status=max_iterations"));

    assert_eq!(code(&caadmm(&["solve", "missing.json"], dir.path())), 1);
    assert_eq!(code(&caadmm(&["solve", &p, "--policy", "ca-admm"], dir.path())), 1);
    assert_eq!(code(&caadmm(&["solve"], dir.path())), 1);
}

#[test]
fn train_zero_updates_writes_initial_actor() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), format!("{TINY}epochs = 0\n")).unwrap();
    let o = caadmm(&["train", "--config", "c.cfg", "--out", "ck.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ck = Checkpoint::load(&dir.path().join("ck.json")).unwrap();
    let cfg = TrainConfig::parse(&format!("{TINY}updates = 0\n")).unwrap();
    assert_eq!(load_actor(&ck).unwrap().store, Trainer::new(cfg).unwrap().ddpg.actor.store);
    let log = fs::read_to_string(dir.path().join("ck.json.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn train_resume_matches_continuous_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("short.cfg"), format!("{TINY}updates = 4\n")).unwrap();
    fs::write(d.join("long.cfg"), format!("{TINY}updates = 8\n")).unwrap();
    assert_eq!(code(&caadmm(&["train", "--config", "long.cfg", "--out", "full.json"], d)), 0);
    assert_eq!(code(&caadmm(&["train", "--config", "short.cfg", "--out", "half.json"], d)), 0);
    let o = caadmm(&["train", "--config", "long.cfg", "--out", "resumed.json", "--resume", "half.json"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let full = Checkpoint::load(&d.join("full.json")).unwrap();
    let resumed = Checkpoint::load(&d.join("resumed.json")).unwrap();
    for name in ["actor", "target_actor"] {
        assert_eq!(
            load_actor_named(&full, name).unwrap().store,
            load_actor_named(&resumed, name).unwrap().store
        );
    }
    assert_eq!(full.state, resumed.state);
    assert_eq!(
        fs::read(d.join("full.json.log.csv")).unwrap(),
        fs::read(d.join("resumed.json.log.csv")).unwrap()
    );
}

#[test]
fn train_bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), "batch_size = 4\nlearning_rate = 3\n").unwrap();
    let o = caadmm(&["train", "--config", "c.cfg", "--out", "ck.json"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
    assert!(!dir.path().join("ck.json").exists());
}

#[test]
fn bench_is_reproducible_and_writes_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "bench", "--families", "random-qp,eq-qp", "--sizes", "4-5", "--policies", "fixed:0.1,heuristic,rlqp:1",
        "--instances", "3", "--seed", "9", "--no-timing", "--plot", "plot.csv",
    ];
    let a = caadmm(&args, dir.path());
    let b = caadmm(&args, dir.path());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let report = String::from_utf8(a.stdout).unwrap();
    assert_eq!(report.lines().count(), 1 + 2 * 3);
    let plot = fs::read_to_string(dir.path().join("plot.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 2 * 3);
    assert!(plot.starts_with("family,n_min,n_max,n_mid,policy"));
}

#[test]
fn bench_ablation_emits_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = caadmm(
        &["bench", "--ablation", "--sizes", "4-5", "--policies", "heuristic", "--instances", "2", "--out", "abl.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("abl.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for (row, k) in rows.iter().zip(["5", "10", "50", "100"]) {
        assert!(row.starts_with(&format!("{k},")));
        assert!(row.ends_with(",true"));
    }
}

#[test]
fn bench_rejects_bad_policy() {
    let dir = tempfile::tempdir().unwrap();
    let o = caadmm(&["bench", "--policies", "magic"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn inspect_dumps_graph_json() {
    let dir = tempfile::tempdir().unwrap();
    let p = gen_one(dir.path());
    let o = caadmm(&["inspect", &p, "--iterations", "10", "--rho", "2"], dir.path());
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let dual = v["dual_features"].as_array().unwrap();
    assert_eq!(dual.len(), 18);
    assert!(dual.iter().all(|r| (r[4].as_f64().unwrap() - 2f64.log10()).abs() < 1e-12));
}
