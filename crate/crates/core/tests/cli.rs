use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_bayes-al");

/// Small enough to finish in seconds.
const SMOKE: &str = "\
data.n = 200
data.n_test = 100
data.dim = 4
data.joints = 2
data.clusters = 4
model.hidden = 16,16
model.mc_passes = 8
train.epochs = 5
al.budget = 10
al.stages = 2
al.trials = 2
";

fn bayes_al(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("BAYES_AL_SEED")
        .env_remove("BAYES_AL_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run_smoke(dir: &Path, out: &str) -> Output {
    let cfg = write_config(dir, "smoke.cfg", &format!("{SMOKE}output.dir = {}\n", dir.join(out).display()));
    bayes_al(&["run", cfg.to_str().unwrap()])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn smoke_run_writes_both_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_smoke(dir.path(), "r");
    assert!(out.status.success(), "{}", stderr(&out));
    let trials = fs::read_to_string(dir.path().join("r/trials.csv")).unwrap();
    let summary = fs::read_to_string(dir.path().join("r/summary.csv")).unwrap();
    assert!(trials.starts_with("strategy,trial,stage,labeled_count,test_mse\n"));
    assert!(summary.starts_with("strategy,stage,mean_mse,std_mse\n"));
    // 4 strategies x 2 trials x 3 stages; 4 strategies x 3 stages.
    assert_eq!(trials.lines().count(), 1 + 24);
    assert_eq!(summary.lines().count(), 1 + 12);
    assert_eq!(stdout(&out), summary);
    assert!(dir.path().join("r/config.resolved").exists());
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_smoke(dir.path(), "a").status.success());
    assert!(run_smoke(dir.path(), "b").status.success());
    for f in ["trials.csv", "summary.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn parallel_jobs_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_smoke(dir.path(), "serial").status.success());
    let cfg = dir.path().join("smoke.cfg");
    let out = bayes_al(&["run", cfg.to_str().unwrap(), "--jobs", "3", "--out", dir.path().join("par").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let a = fs::read(dir.path().join("serial/trials.csv")).unwrap();
    let b = fs::read(dir.path().join("par/trials.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seed_and_output_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "smoke.cfg", SMOKE);
    let run = |seed: &str, out: &str| {
        Command::new(BIN)
            .args(["run", cfg.to_str().unwrap()])
            .env("BAYES_AL_SEED", seed)
            .env("BAYES_AL_OUT", dir.path().join(out))
            .output()
            .unwrap()
    };
    assert!(run("1", "s1").status.success());
    assert!(run("2", "s2").status.success());
    let resolved = fs::read_to_string(dir.path().join("s1/config.resolved")).unwrap();
    assert!(resolved.contains("seeds.master = 1"));
    let a = fs::read_to_string(dir.path().join("s1/trials.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("s2/trials.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn missing_dataset_fails_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.csv");
    let cfg = write_config(
        dir.path(),
        "bad.cfg",
        &format!("data.path = {}\noutput.dir = {}\n", missing.display(), dir.path().join("out").display()),
    );
    let out = bayes_al(&["run", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains(&missing.display().to_string()), "{}", stderr(&out));
    // Nothing was trained, so no report exists.
    assert!(!dir.path().join("out/trials.csv").exists());
}

#[test]
fn misspelled_key_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "al.trials = 1\n\nal.budgett = 5\n");
    let out = bayes_al(&["run", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains(":3:") && err.contains("al.budgett"), "{err}");
}

#[test]
fn generated_dataset_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_config(dir.path(), "spec.cfg", "data.n = 300\ndata.dim = 3\ndata.joints = 1\n");
    let data = dir.path().join("data.csv");
    let out = bayes_al(&["gen-data", spec.to_str().unwrap(), "--out", data.to_str().unwrap(), "--seed", "4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("D=3,K=1\n"));
    assert_eq!(text.lines().count(), 301);
    let cfg = write_config(
        dir.path(),
        "run.cfg",
        &format!(
            "data.path = {}\ndata.n_test = 60\nmodel.hidden = 8\ntrain.epochs = 3\nal.budget = 20\nal.stages = 1\nal.trials = 1\nal.strategies = random,cke\noutput.dir = {}\n",
            data.display(),
            dir.path().join("out").display()
        ),
    );
    let out = bayes_al(&["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let trials = fs::read_to_string(dir.path().join("out/trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 4);
}

#[test]
fn report_rebuilds_summary_from_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_smoke(dir.path(), "r").status.success());
    let summary = fs::read_to_string(dir.path().join("r/summary.csv")).unwrap();
    fs::remove_file(dir.path().join("r/trials.csv")).unwrap();
    fs::remove_file(dir.path().join("r/summary.csv")).unwrap();
    let out = bayes_al(&["report", "--in", dir.path().join("r").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), summary);
    assert_eq!(fs::read_to_string(dir.path().join("r/summary.csv")).unwrap(), summary);
}

fn select(dir: &Path, preds: &str, args: &[&str]) -> Vec<usize> {
    let path = write_config(dir, "preds.csv", preds);
    let mut all = vec!["select", path.to_str().unwrap()];
    all.extend_from_slice(args);
    let out = bayes_al(&all);
    assert!(out.status.success(), "{}", stderr(&out));
    stdout(&out).lines().map(|l| l.parse().unwrap()).collect()
}

#[test]
fn random_select_returns_a_permutation_of_the_pool() {
    let dir = tempfile::tempdir().unwrap();
    let preds = "dim=1\n7,0,0.1,0\n3,0,0.2,0\n9,0,0.3,0\n";
    let mut got = select(dir.path(), preds, &["--strategy", "random", "--budget", "3", "--seed", "11"]);
    got.sort_unstable();
    assert_eq!(got, vec![3, 7, 9]);
}

#[test]
fn cke_with_zero_eta_matches_coreset() {
    let dir = tempfile::tempdir().unwrap();
    let mut preds = String::from("dim=2\n0,1,0,0,0.5,0.5\n1,1,4,1,0.1,0.9\n");
    for i in 0..30 {
        let (a, b) = ((i * 7 % 11) as f64 * 0.5, (i * 5 % 13) as f64 * 0.25);
        preds.push_str(&format!("{},0,{a},{b},{},{}\n", 10 + i, (i % 4) as f64 * 0.3, (i % 3) as f64 * 0.2));
    }
    let coreset = select(dir.path(), &preds, &["--strategy", "coreset", "--budget", "8"]);
    let cke = select(dir.path(), &preds, &["--strategy", "cke", "--budget", "8", "--eta", "0"]);
    assert_eq!(cke, coreset);
    let shifted = select(dir.path(), &preds, &["--strategy", "cke", "--budget", "8", "--eta", "2"]);
    assert_eq!(shifted.len(), 8);
}

#[test]
fn coreset_select_follows_the_hand_trace() {
    let dir = tempfile::tempdir().unwrap();
    // Center at 0; candidates at 1, 2, 5, 6. Picks 6 first, then 2, then
    // 1 and 5 tie at distance 1 and the lower index wins.
    let preds = "dim=1\n0,1,0,0\n10,0,1,0\n11,0,2,0\n12,0,5,0\n13,0,6,0\n";
    let got = select(dir.path(), preds, &["--strategy", "coreset", "--budget", "3"]);
    assert_eq!(got, vec![13, 11, 10]);
}

#[test]
fn uncertainty_select_prefers_the_widest_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let preds = "dim=1\n1,0,0,0.1\n2,0,0,0.9\n3,0,0,0.5\n";
    let got = select(dir.path(), preds, &["--strategy", "uncertainty", "--budget", "2"]);
    assert_eq!(got, vec![2, 3]);
}

#[test]
fn malformed_predictions_file_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "preds.csv", "dim=1\n1,0,0,0.1\n2,0,x,0.9\n");
    let out = bayes_al(&["select", path.to_str().unwrap(), "--strategy", "coreset", "--budget", "1"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains(":3:"), "{}", stderr(&out));
}
