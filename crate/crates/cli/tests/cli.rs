use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn semisgd(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semisgd"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const TOY_RUN: &[&str] = &[
    "run",
    "--env",
    "toy:3,2,7",
    "--steps",
    "1000",
    "--seeds",
    "2",
    "--cadence",
    "100",
    "--alpha",
    "0.01",
];

#[test]
fn run_writes_eleven_aggregate_rows_and_reruns_byte_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = semisgd(TOY_RUN, dir.path());
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let agg = String::from_utf8(read(a.path(), "aggregate.csv")).unwrap();
    let mut lines = agg.lines();
    assert_eq!(
        lines.next(),
        Some("step,mse_mean,mse_std,expl_mean,expl_std")
    );
    assert_eq!(lines.count(), 11);
    assert!(!agg.contains('\r'));
    for name in [
        "aggregate.csv",
        "run_seed0.csv",
        "run_seed1.csv",
        "reference.csv",
        "mu_star.txt",
    ] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
}

#[test]
fn semisgd_and_fpi_files_share_a_schema() {
    let dir = tempfile::tempdir().unwrap();
    let fpi = dir.path().join("fpi");
    let sgd = dir.path().join("sgd");
    let mut args = TOY_RUN.to_vec();
    assert!(semisgd(&args, &sgd).status.success());
    args.extend(["--algo", "fpi", "--variant", "vanilla", "--inner-k", "10"]);
    assert!(semisgd(&args, &fpi).status.success());
    for name in ["aggregate.csv", "run_seed0.csv"] {
        let header = |d: &Path| {
            String::from_utf8(read(d, name))
                .unwrap()
                .lines()
                .next()
                .unwrap()
                .to_string()
        };
        let rows = |d: &Path| String::from_utf8(read(d, name)).unwrap().lines().count();
        assert_eq!(header(&sgd), header(&fpi));
        assert_eq!(rows(&sgd), rows(&fpi));
    }
}

#[test]
fn reference_creates_missing_output_directory_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a/b/c");
    let out2 = dir.path().join("d");
    for out in [&out1, &out2] {
        let res = semisgd(&["reference", "--env", "toy:3,2,7"], out);
        assert!(
            res.status.success(),
            "{}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    assert_eq!(read(&out1, "reference.csv"), read(&out2, "reference.csv"));
    assert_eq!(read(&out1, "mu_star.txt"), read(&out2, "mu_star.txt"));
}

#[test]
fn toy_reference_exploitability_trends_down() {
    let dir = tempfile::tempdir().unwrap();
    assert!(semisgd(&["reference", "--env", "toy:3,2,7"], dir.path())
        .status
        .success());
    let text = String::from_utf8(read(dir.path(), "reference.csv")).unwrap();
    let expl: Vec<f64> = text
        .lines()
        .filter(|l| l.starts_with("expl,"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(expl.len() >= 4);
    let tail = &expl[expl.len() / 2..];
    assert!(tail.last().unwrap() <= tail.first().unwrap());
    // Fictitious play is not monotone step by step; compare running maxima.
    let mut worst = f64::INFINITY;
    for chunk in tail.chunks(tail.len().div_ceil(4)) {
        let m = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(m <= worst * (1.0 + 1e-9), "{m} > {worst}");
        worst = m;
    }
}

#[test]
fn sweep_k_rejects_an_empty_list() {
    let dir = tempfile::tempdir().unwrap();
    let out = semisgd(&["sweep-k", "--env", "toy", "--k-list", ""], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k_list"));
}

#[test]
fn sweep_k_with_one_matches_semisgd_final_row() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep");
    let run = dir.path().join("run");
    assert!(semisgd(TOY_RUN, &run).status.success());
    let mut args = TOY_RUN.to_vec();
    args[0] = "sweep-k";
    args.extend(["--k-list", "1"]);
    let res = semisgd(&args, &sweep);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let agg = String::from_utf8(read(&run, "aggregate.csv")).unwrap();
    let last = agg.lines().last().unwrap();
    let sweep = String::from_utf8(read(&sweep, "sweep_k.csv")).unwrap();
    let row = sweep.lines().nth(1).unwrap();
    assert_eq!(
        row.split_once(',').unwrap().1,
        last.split_once(',').unwrap().1
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_env = semisgd(&["run", "--env", "maze"], dir.path());
    assert_eq!(bad_env.status.code(), Some(2));
    let bad_alpha = semisgd(
        &["run", "--env", "toy", "--alpha", "1.5", "--steps", "10"],
        dir.path(),
    );
    assert_eq!(bad_alpha.status.code(), Some(2));
    let missing = semisgd(
        &[
            "run",
            "--config",
            dir.path().join("nope.json").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(missing.status.code(), Some(4));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.json");
    fs::write(
        &cfg,
        r#"{"env": {"kind": "toy", "n": 4, "m": 2, "seed": 3},
            "total_steps": 5000, "cadence": 250, "seeds": [4]}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let res = semisgd(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--steps",
            "500",
            "--seed-offset",
            "1",
            "--no-exploitability",
        ],
        &out,
    );
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let run = String::from_utf8(read(&out, "run_seed5.csv")).unwrap();
    assert_eq!(run.lines().count(), 4);
    assert!(run.lines().skip(1).all(|l| l.ends_with(',')));
}
