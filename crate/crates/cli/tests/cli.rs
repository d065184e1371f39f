use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_otfs-sync"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn otfs-sync")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"{
    "frame": {"M": 16, "N": 4, "L_CP": 4},
    "channels": [1],
    "snr_grid_db": [20],
    "samples_per_channel": 48,
    "preamble": {"length": 32},
    "global_seed": 11
}"#;

fn small_dataset(dir: &Path) {
    std::fs::write(dir.join("small.json"), SMALL).unwrap();
    let o = run(
        dir,
        &["gen", "--config", "small.json", "--out", "small.bin"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"frame": {"M": 0}}"#).unwrap();
    let o = run(
        dir.path(),
        &["gen", "--config", "bad.json", "--out", "x.bin"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("x.bin").exists());
}

#[test]
fn corrupt_dataset_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.bin"), b"not a dataset at all").unwrap();
    let o = run(dir.path(), &["info", "--dataset", "junk.bin"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn learned_method_without_weights_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let o = run(
        dir.path(),
        &["eval", "--method", "resnet2stage", "--dataset", "small.bin"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_channel_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let o = run(
        dir.path(),
        &[
            "eval",
            "--method",
            "autocorr2d",
            "--dataset",
            "small.bin",
            "--channel",
            "3",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = run(
        dir.path(),
        &[
            "eval",
            "--method",
            "autocorr2d",
            "--dataset",
            "small.bin",
            "--channel",
            "1",
            "--json",
        ],
    );
    assert!(o.status.success());
}

#[test]
fn gen_is_reproducible_and_info_reads_the_header() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let o = run(
        dir.path(),
        &["gen", "--config", "small.json", "--out", "again.bin"],
    );
    assert!(o.status.success());
    let a = std::fs::read(dir.path().join("small.bin")).unwrap();
    let b = std::fs::read(dir.path().join("again.bin")).unwrap();
    assert_eq!(a, b);

    let o = run(dir.path(), &["info", "--dataset", "small.bin"]);
    assert!(o.status.success());
    let header: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(header["m"], 16);
    assert_eq!(header["n"], 4);
    assert_eq!(header["record_count"], 48);
    assert_eq!(header["global_seed"], 11);
}

#[test]
fn crosscorr_eval_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let o = run(
        dir.path(),
        &[
            "eval",
            "--method",
            "crosscorr",
            "--dataset",
            "small.bin",
            "--config",
            "small.json",
            "--all-records",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut reader = csv::Reader::from_reader(o.stdout.as_slice());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][0], "crosscorr");
    assert_eq!(&rows[0][6], "48");
    let acc: f64 = rows[0][3].parse().unwrap();
    assert!(acc > 0.9, "accuracy {acc}");
}

#[test]
fn train_eval_pipeline_on_a_small_dataset() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let common = [
        "--dataset",
        "small.bin",
        "--recipe",
        "toy",
        "--epochs",
        "2",
        "--batch",
        "8",
    ];

    let mut args = vec!["train", "--stage", "coarse", "--out-weights", "coarse.bin"];
    args.extend(common);
    let o = run(dir.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<serde_json::Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1]["epoch"], 2);
    assert_eq!(lines[2]["stage"], "coarse");
    assert!(dir.path().join("coarse.bin.final").exists());

    let mut args = vec!["train", "--stage", "fine", "--out-weights", "fine.bin"];
    args.extend(common);
    let o = run(dir.path(), &args);
    assert_eq!(o.status.code(), Some(2), "fine without coarse weights");

    args.extend(["--coarse-weights", "coarse.bin"]);
    let o = run(dir.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = run(dir.path(), &["info", "--weights", "fine.bin"]);
    let info: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(info["head"], "fine");
    assert_eq!(info["epochs"], 2);
    assert_eq!(info["batch_size"], 8);

    let o = run(
        dir.path(),
        &[
            "eval",
            "--method",
            "resnet2stage",
            "--dataset",
            "small.bin",
            "--weights",
            "fine.bin",
            "--weights",
            "coarse.bin",
            "--json",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows[0]["method"], "resnet2stage");
    assert!(rows[0]["count"].as_u64().unwrap() > 0);

    // the coarse network cannot stand in for the fine stage
    let o = run(
        dir.path(),
        &[
            "eval",
            "--method",
            "resnet2stage",
            "--dataset",
            "small.bin",
            "--weights",
            "coarse.bin",
            "--weights",
            "coarse.bin",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_covers_the_requested_snrs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.json"), SMALL).unwrap();
    let o = run(
        dir.path(),
        &[
            "sweep",
            "--methods",
            "crosscorr,autocorr2d",
            "--config",
            "small.json",
            "--snr-min",
            "-10",
            "--snr-max",
            "10",
            "--snr-step",
            "10",
            "--trials",
            "5",
            "--json",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows.len(), 6);
    let snrs: Vec<f64> = rows.iter().map(|r| r["snr_db"].as_f64().unwrap()).collect();
    assert_eq!(snrs, [-10.0, 0.0, 10.0, -10.0, 0.0, 10.0]);
}

#[test]
fn complexity_reports_every_method() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.json"), SMALL).unwrap();
    let o = run(
        dir.path(),
        &[
            "complexity",
            "--config",
            "small.json",
            "--trials",
            "3",
            "--json",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let methods: Vec<&str> = report["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["method"].as_str().unwrap())
        .collect();
    assert_eq!(
        methods,
        ["crosscorr", "autocorr2d", "resnet2stage", "resnet1stage"]
    );
}
