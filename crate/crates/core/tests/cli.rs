use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rainflow-dqn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn binary")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(code(&run(&["train", "--bogus"])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);
}

#[test]
fn missing_input_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let out = run(&[
        "train",
        "--price",
        path(&missing),
        "--fr",
        path(&missing),
        "--out-dir",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "not-a-key = 3\n").unwrap();
    assert_eq!(
        code(&run(&["verify-degradation", "--config", path(&cfg)])),
        2
    );
}

#[test]
fn verify_degradation_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, "# quick run\nwalks = 20\nlength = 300\n").unwrap();
    let out = run(&["verify-degradation", "--config", path(&cfg), "--seed", "3"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PASS"));
}

#[test]
fn gen_train_evaluate_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    assert_eq!(
        code(&run(&[
            "gen-data",
            "--out-dir",
            path(&data),
            "--seed",
            "5",
            "--config",
            &{
                let cfg = d.join("gen.cfg");
                std::fs::write(&cfg, "days=2\n").unwrap();
                cfg.to_str().unwrap().to_owned()
            }
        ])),
        0
    );
    let day = |i: usize, kind: &str| data.join(format!("day{i:03}_{kind}.csv"));
    let inputs: Vec<String> = (0..2)
        .flat_map(|i| {
            [
                "--price".to_owned(),
                path(&day(i, "price")).to_owned(),
                "--fr".to_owned(),
                path(&day(i, "fr")).to_owned(),
            ]
        })
        .collect();
    let cfg = d.join("train.cfg");
    std::fs::write(
        &cfg,
        "batch-size = 8\nhidden = 8,4\nsteps-per-episode = 50\n",
    )
    .unwrap();

    for mode in ["cd", "ld"] {
        let out_dir = d.join(mode);
        let weights = out_dir.join("w.bin");
        let out = bin()
            .args([
                "train",
                "--mode",
                mode,
                "--episodes",
                "2",
                "--dt",
                "300",
                "--seed",
                "1",
            ])
            .args(&inputs)
            .args([
                "--config",
                path(&cfg),
                "--out-dir",
                path(&out_dir),
                "--weights",
                path(&weights),
            ])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let trace = std::fs::read_to_string(out_dir.join("train_trace.csv")).unwrap();
        assert_eq!(trace.lines().count(), 3);

        let out = bin()
            .args([
                "evaluate",
                "--dt",
                "300",
                "--weights",
                path(&weights),
                "--out-dir",
                path(&out_dir),
            ])
            .args(&inputs)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let reports = std::fs::read_to_string(out_dir.join("episode_reports.csv")).unwrap();
        assert_eq!(reports.lines().count(), 3);
        for id in ["day000", "day001"] {
            let trace =
                std::fs::read_to_string(out_dir.join(format!("soc_trace_{id}.csv"))).unwrap();
            assert_eq!(trace.lines().count(), 289);
        }
    }

    let out = run(&[
        "compare",
        path(&d.join("cd/episode_reports.csv")),
        path(&d.join("ld/episode_reports.csv")),
        "--out-dir",
        path(d),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cmp = std::fs::read_to_string(d.join("comparison.csv")).unwrap();
    assert!(cmp.contains("day000") && cmp.contains("summary:mean"));

    let dp = bin().args(["dp-oracle"]).args(&inputs).output().unwrap();
    assert_eq!(code(&dp), 0);
    assert_eq!(String::from_utf8_lossy(&dp.stdout).lines().count(), 2);
}

#[test]
fn evaluate_rejects_wrong_weights_file() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.bin");
    std::fs::write(&w, b"garbage").unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&run(&["gen-data", "--out-dir", path(&data)])), 0);
    let out = run(&[
        "evaluate",
        "--weights",
        path(&w),
        "--price",
        path(&data.join("day000_price.csv")),
        "--fr",
        path(&data.join("day000_fr.csv")),
        "--out-dir",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
}
