//! Command-line contract: exit codes, missing-artifact handling, and the
//! determinism of a small generation run driven through the real binary.

use std::path::Path;
use std::process::Command;

fn proxops_bin() -> &'static str {
    env!("CARGO_BIN_EXE_proxops")
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let mesh = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/asteroid_ellipsoid.obj")
        .canonicalize()
        .unwrap();
    let text = format!(
        r#"
version = 1

[mesh]
path = "{}"

[sim]
mass = 50.0

[transits]
step_budget = 50

[dataset]
n_clean = 1
n_disturbed = 2
grid_points_per_axis = 4

[surrogate]
hidden = [16]
epochs = 2

[policy]
epochs = 1
max_batches_per_epoch = 5
"#,
        mesh.display()
    );
    let path = dir.join("tiny.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_artifact_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = Command::new(proxops_bin())
        .args([
            "evaluate",
            "--config",
            cfg.to_str().unwrap(),
            "--run-dir",
            dir.path().join("empty_run").to_str().unwrap(),
            "--seed",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let out = Command::new(proxops_bin())
        .args([
            "report",
            "--run-dir",
            dir.path().join("empty_run").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "version = 1\n[dataset]\nsplit_fractions = [0.9, 0.2, 0.2]\n").unwrap();
    let out = Command::new(proxops_bin())
        .args([
            "gen-data",
            "--config",
            path.to_str().unwrap(),
            "--run-dir",
            dir.path().join("run").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let run = |name: &str| {
        let run_dir = dir.path().join(name);
        let out = Command::new(proxops_bin())
            .args([
                "gen-data",
                "--config",
                cfg.to_str().unwrap(),
                "--run-dir",
                run_dir.to_str().unwrap(),
                "--seed",
                "7",
            ])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "gen-data failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        run_dir
    };
    let a = run("a");
    let b = run("b");

    let mut files_a = list_files(&a);
    let mut files_b = list_files(&b);
    files_a.sort();
    files_b.sort();
    assert_eq!(files_a, files_b);
    for rel in &files_a {
        let ba = std::fs::read(a.join(rel)).unwrap();
        let bb = std::fs::read(b.join(rel)).unwrap();
        assert_eq!(ba, bb, "{} differs between identical-seed runs", rel.display());
    }
}

fn list_files(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let entry = entry.unwrap();
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out
}
