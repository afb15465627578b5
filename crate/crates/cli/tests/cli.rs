use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn npnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npnn"))
        .args(args)
        .output()
        .expect("spawn npnn")
}

fn body(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

fn without_first_line(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.split_once('\n').unwrap().1.to_string()
}

const SMALL: &[&str] = &[
    "--set", "data.source=two_gaussians",
    "--set", "data.n=400",
    "--set", "model.pairs=10",
    "--set", "protocol.permutations=3",
    "--seed", "5",
];

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

#[test]
fn exit_codes_follow_error_kind() {
    let out = npnn(&["train", "--set", "model.tau=1.5", "--set", "data.source=ring"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.tau"));

    let out = npnn(&["train", "--set", "model.tau=0.1", "--set", "model.colour=red"]);
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.csv");
    let out = npnn(&["train", "--set", "model.tau=0.1", "--set", &format!("data.source={}", missing.display())]);
    assert_eq!(out.status.code(), Some(3));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1.0,2.0,1\n1.0,oops,-1\n").unwrap();
    let out = npnn(&["train", "--set", "model.tau=0.1", "--set", &format!("data.source={}", bad.display())]);
    assert_eq!(out.status.code(), Some(3));

    let one_class = dir.path().join("pos.csv");
    fs::write(&one_class, "1.0,2.0,1\n0.5,0.1,1\n0.2,0.3,1\n0.9,0.4,1\n").unwrap();
    let out = npnn(&[
        "train",
        "--seed", "1",
        "--set", "model.tau=0.1",
        "--set", &format!("data.source={}", one_class.display()),
        "--out-dir", &dir.path().join("o").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_seed_warns() {
    let dir = tempfile::tempdir().unwrap();
    let out = npnn(&[
        "cv",
        "--set", "model.tau=0.2",
        "--set", "data.source=ring",
        "--set", "data.n=90",
        "--set", "protocol.cv_bandwidths=1",
        "--set", "protocol.cv_width_multipliers=2",
        "--out-dir", &dir.path().display().to_string(),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no seed given"));
}

#[test]
fn stream_controls_fpr_at_one_percent() {
    let dir = tempfile::tempdir().unwrap();
    let out = npnn(&[
        "stream",
        "--seed", "3",
        "--set", "model.tau=0.01",
        "--set", "model.eta1=0.02",
        "--set", "model.beta1=0.02",
        "--set", "data.source=two_gaussians",
        "--set", "data.n=200000",
        "--set", "output.trace_every=10000",
        "--out-dir", &dir.path().display().to_string(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.tsv")).unwrap();
    let last = trace
        .lines()
        .rfind(|l| !l.starts_with('#') && !l.starts_with("step"))
        .unwrap();
    let cols: Vec<&str> = last.split('\t').collect();
    assert_eq!(cols[0], "200000");
    let fpr: f64 = cols[1].parse().unwrap();
    assert!((0.007..=0.013).contains(&fpr), "cum fpr {fpr}");
    assert!(trace.contains("# final steps=200000"));
    assert!(trace.contains("# tau = 0.01"));

    let out = npnn(&["inspect-snapshot", &dir.path().join("model.snap").display().to_string()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("kind\tnpnn") && text.contains("t\t200000"), "{text}");
}

#[test]
fn sweep_with_single_point_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("train");
    let b = dir.path().join("sweep");
    let mut args = vec!["train"];
    args.extend(with(SMALL, &["--set", "model.tau=0.1", "--out-dir", a.to_str().unwrap()]));
    let train = npnn(&args);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let mut args = vec!["sweep"];
    args.extend(with(SMALL, &["--set", "model.tau=0.3", "--set", "protocol.tfpr_grid=0.1", "--out-dir", b.to_str().unwrap()]));
    let sweep = npnn(&args);
    assert!(sweep.status.success(), "{}", String::from_utf8_lossy(&sweep.stderr));
    assert_eq!(body(&a.join("summary.tsv")), body(&b.join("summary.tsv")));
    assert!(b.join("roc.tsv").exists());
}

#[test]
fn outputs_are_reproducible_across_runs_and_pool_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["sweep"];
        args.extend(with(SMALL, &["--set", "model.tau=0.1", "--workers", workers, "--out-dir", out_dir.to_str().unwrap()]));
        assert!(npnn(&args).status.success());
        out_dir
    };
    let a = run("a", "1");
    let b = run("b", "4");
    assert_eq!(body(&a.join("summary.tsv")), body(&b.join("summary.tsv")));
    assert_eq!(body(&a.join("roc.tsv")), body(&b.join("roc.tsv")));
    let first = without_first_line(&b.join("summary.tsv"));
    let c = run("b", "4");
    assert_eq!(first, without_first_line(&c.join("summary.tsv")));

    let train = |name: &str| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["train"];
        args.extend(with(SMALL, &["--set", "model.tau=0.1", "--out-dir", out_dir.to_str().unwrap()]));
        assert!(npnn(&args).status.success());
        fs::read(out_dir.join("model.snap")).unwrap()
    };
    assert_eq!(train("t1"), train("t2"));
}

#[test]
fn cv_with_singleton_grids_returns_that_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = npnn(&[
        "cv",
        "--seed", "2",
        "--set", "model.tau=0.1",
        "--set", "data.source=ring",
        "--set", "data.n=300",
        "--set", "protocol.cv_bandwidths=0.5",
        "--set", "protocol.cv_width_multipliers=5",
        "--out-dir", &dir.path().display().to_string(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("best bandwidth 0.5 pairs 10"));
    let table = body(&dir.path().join("cv.tsv"));
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn generated_file_feeds_a_config_file_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ring.csv");
    let out = npnn(&[
        "gen",
        "--seed", "1",
        "--set", "model.tau=0.1",
        "--set", "data.source=ring",
        "--set", "data.n=500",
        "--out", data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&data).unwrap().lines().count(), 500);

    let config = dir.path().join("run.cfg");
    fs::write(
        &config,
        format!(
            "[model]\ntau = 0.2\npairs = 20\n[data]\nsource = {}\nnormalization = zscore\n[protocol]\npermutations = 2\n[run]\nseed = 4\n",
            data.display()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = npnn(&["train", "-c", config.to_str().unwrap(), "--set", "model.kind=olnp", "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("summary.tsv")).unwrap();
    assert!(summary.contains("# kind = olnp"));
    assert!(summary.contains("# seed 4"));
    let out = npnn(&["inspect-snapshot", out_dir.join("model.snap").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("kind\tolnp"));

    let bad = dir.path().join("bad.snap");
    fs::write(&bad, "npnn-snapshot 7\nkind npnn\n").unwrap();
    assert_eq!(npnn(&["inspect-snapshot", bad.to_str().unwrap()]).status.code(), Some(3));
}
