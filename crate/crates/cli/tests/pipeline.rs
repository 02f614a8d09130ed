//! End-to-end CLI pipeline on a miniature configuration.

use std::fs;
use std::path::Path;
use std::process::Command;

use trajtta_cli::{cmd_ablate, cmd_generate, cmd_report, cmd_run, cmd_train, Axis, CliError, ExperimentConfig, Mode, RunOptions};

fn mini_config(root: &Path) -> ExperimentConfig {
    let text = format!(
        r#"
[dataset]
n_train = 8
n_val = 4
n_test = 3
root = "{data}"
[dataset.phantom]
height = 32
width = 32
[recon]
steps = 3
[backbone.arch]
height = 32
width = 32
depth = 2
base_width = 4
max_width = 8
[backbone.train]
steps = 20
[adapt]
steps = 3
lr = 1e-3
[eval]
output_dir = "{out}"
"#,
        data = root.join("data").display(),
        out = root.join("out").display()
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generation_is_deterministic_and_guarded() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = mini_config(a.path());
    let cb = mini_config(b.path());
    let ma = cmd_generate(&ca, false).unwrap();
    cmd_generate(&cb, false).unwrap();
    assert_eq!(ma.train.len(), 8);
    assert_eq!(ma.test.len(), 3);
    let strip = |t: Vec<(String, Vec<u8>)>| t.into_iter().filter(|(n, _)| n != "dataset.json").collect::<Vec<_>>();
    assert_eq!(strip(tree_bytes(&ca.dataset.root)), strip(tree_bytes(&cb.dataset.root)));

    assert!(matches!(cmd_generate(&ca, false), Err(CliError::NotEmpty { .. })));
    cmd_generate(&ca, true).unwrap();
}

#[test]
fn full_pipeline_modes_reruns_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path());
    cmd_generate(&cfg, false).unwrap();
    let trained = cmd_train(&cfg).unwrap();
    assert!(trained.checkpoint.exists());
    assert!(trained.val_dice_clean.is_some());

    let opts = RunOptions::default();
    let base = cmd_run(&cfg, Mode::Baseline, &opts).unwrap();
    assert!(base.adaptation.is_none());
    assert_eq!(base.manifest.theta_checksum, trained.checksum);
    for mode in [Mode::LastOnlyAdapt, Mode::Irtta, Mode::IrttaSup] {
        let art = cmd_run(&cfg, mode, &opts).unwrap();
        assert_eq!(art.manifest.theta_checksum, trained.checksum, "{mode}");
        assert_eq!(art.metrics.len(), 3);
        let outcome = art.adaptation.as_ref().unwrap();
        assert_eq!(outcome.reports.len(), 3);
        assert!(art.run_dir.join("adaptation").read_dir().unwrap().count() >= 6);
        for case in &art.manifest.cases {
            for f in ["labels.bin", "entropy.bin", "entropy.png"] {
                assert!(art.run_dir.join("cases").join(case).join(f).exists());
            }
        }
        let log = fs::read_to_string(art.run_dir.join("log.txt")).unwrap();
        assert!(log.contains("checksum before") && log.contains("checksum after"));
    }

    // rerun with the same hash: cached trajectories, identical summary
    let first = cmd_run(&cfg, Mode::Irtta, &opts).unwrap();
    let csv = fs::read_to_string(first.run_dir.join("summary.csv")).unwrap();
    let log = fs::read_to_string(first.run_dir.join("log.txt")).unwrap();
    assert!(log.contains("3 from cache"), "{log}");
    let report = cmd_report(&first.run_dir).unwrap();
    assert_eq!(report, first.summary);
    assert_eq!(fs::read_to_string(first.run_dir.join("summary.csv")).unwrap(), csv);
    cmd_report(&first.run_dir).unwrap();
    assert_eq!(fs::read_to_string(first.run_dir.join("summary.csv")).unwrap(), csv);

    // a foreign config under the same hash is refused
    fs::write(first.run_dir.join("config.toml"), "# something else\n").unwrap();
    assert!(matches!(
        cmd_run(&cfg, Mode::Irtta, &opts),
        Err(CliError::HashCollision { .. })
    ));

    let rows = cmd_ablate(&cfg, Axis::Steps, &["0".into(), "2".into()], &opts).unwrap();
    assert_eq!(rows.len(), 2);
    let table = fs::read_to_string(cfg.eval.output_dir.join("ablation_steps.csv")).unwrap();
    assert!(table.lines().next().unwrap().ends_with("runtime_s"));
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn binary_reports_categorized_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[adapt]\nlr = -1.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_trajtta"))
        .args(["--config", bad.to_str().unwrap(), "run", "--mode", "irtta"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error [config]"));

    let cfg = mini_config(dir.path());
    let good = dir.path().join("good.toml");
    fs::write(&good, cfg.to_toml()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_trajtta"))
        .args(["--config", good.to_str().unwrap(), "run", "--mode", "baseline"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = Command::new(env!("CARGO_BIN_EXE_trajtta"))
        .args(["--config", good.to_str().unwrap(), "run", "--mode", "tent"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
