use std::path::PathBuf;
use std::process::Command;

use mon_core::bench::{read_records, run_sweep, SweepConfig, SweepRecord, ENVELOPE_MEASURE};

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn mon(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mon")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn small_config() -> String {
    r#"
samples = 20000
seed = 11
measures = ["orig_normalized", "diag", "full", "family(0.7,0.3;0.2)"]

[alpha]
start = 0.1
stop = 10.0
points = 3

[[models]]
name = "rdcos"
variants = ["m", "km"]

[[models]]
name = "bot"
measures = ["full", "orig"]

[envelope]
model = "cart2polar_rad"
points = 11
"#
    .to_string()
}

#[test]
fn fig1_config_row_counts_and_envelope_containment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig1.csv");
    let cfg = config_path("fig1.toml");
    let (code, err) = mon(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# samples: 1000000\n"));
    let recs = read_records(text.as_bytes()).unwrap();
    let values: Vec<&SweepRecord> = recs.iter().filter(|r| r.measure != ENVELOPE_MEASURE).collect();
    let envelope: Vec<&SweepRecord> = recs.iter().filter(|r| r.measure == ENVELOPE_MEASURE).collect();
    assert!(values.len() >= 50);
    assert_eq!(envelope.len(), 25);
    for env in envelope {
        let (lo, hi) = (env.value.unwrap(), env.bound.unwrap());
        for r in values.iter().filter(|r| r.alpha == env.alpha) {
            let v = r.value.unwrap();
            assert!(
                lo <= v && v <= hi,
                "{} at {}: {v} outside [{lo}, {hi}]",
                r.model,
                r.alpha
            );
        }
    }
}

#[test]
fn identical_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, small_config()).unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}.csv"));
        let (code, err) = mon(&[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    // rdcos: 3 alphas x 2 variants x 4 measures, bot: 3 x 2, envelope: 3.
    let recs = read_records(&outputs[0][..]).unwrap();
    assert_eq!(recs.len(), 24 + 6 + 3);
    assert!(recs.iter().all(|r| r.error.is_none()));
}

#[test]
fn sweep_rows_equal_single_point_compute() {
    let cfg = SweepConfig::from_toml_str(&small_config()).unwrap();
    let sweep = run_sweep(&cfg).unwrap();
    for r in sweep
        .records
        .iter()
        .filter(|r| r.measure != ENVELOPE_MEASURE)
        .step_by(5)
    {
        let alpha = format!("{:e}", r.alpha);
        let out = Command::new(env!("CARGO_BIN_EXE_mon"))
            .args(["compute", "--model", &r.model, "--units", &r.variant, "--alpha", &alpha])
            .args(["--measure", &r.measure, "--samples", "20000", "--seed", "11"])
            .output()
            .unwrap();
        assert!(out.status.success());
        let single = read_records(&out.stdout[..]).unwrap();
        assert_eq!(&single[0], r);
    }
}

#[test]
fn invalid_configs_fail_before_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        small_config().replace(
            r#"measures = ["orig_normalized", "diag", "full", "family(0.7,0.3;0.2)"]"#,
            "measures = []",
        ),
        small_config().replace(r#""full", "orig""#, r#""general""#),
        small_config().replace("points = 11", "points = 5000"),
        small_config().replace("start = 0.1", "start = 0.0"),
        small_config().replace(r#"variants = ["m", "km"]"#, r#"variants = ["mi"]"#),
        small_config() + "\nunknown_key = 1\n",
    ];
    for (k, text) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("bad{k}.toml"));
        std::fs::write(&cfg, text).unwrap();
        let out = dir.path().join(format!("bad{k}.csv"));
        let start = std::time::Instant::now();
        let (code, err) = mon(&[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 1, "case {k}: {err}");
        assert!(!out.exists());
        assert!(start.elapsed().as_secs_f64() < 5.0);
    }
}
