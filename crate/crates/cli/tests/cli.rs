//! End-to-end tests that drive the compiled `stmlmc` binary through its
//! public command-line interface: configuration validation, exit codes,
//! artifact layout, and the determinism guarantees of the written tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_stmlmc")
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("binary should launch")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).expect("config should be writable");
    path
}

/// A deliberately tiny multilevel setup so every subcommand finishes in
/// well under a second.
const SMALL: &str = r#"
[geometry]
dim = 1
base_cells = 4
levels = 2
t_final = 0.16
base_steps = 2

[estimator]
kind = "mlmc"
samples = 8
beta = 16.0
master_seed = 42
"#;

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process should exit normally")
}

/// Data rows of a CSV artifact: everything after the `# `-prefixed
/// preamble and the header line.
fn data_rows(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).expect("artifact should exist");
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .skip(1)
        .map(str::to_owned)
        .collect()
}

#[test]
fn invalid_settings_are_reported_per_field_with_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
[geometry]
dim = 7

[estimator]
kind = "bootstrap"
beta = 0.5
"#,
    );
    let out = run(&["mc", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let err = stderr_of(&out);
    assert!(err.contains("geometry.dim"), "missing field name: {err}");
    assert!(err.contains("estimator.kind"), "missing field name: {err}");
    assert!(err.contains("estimator.beta"), "missing field name: {err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
[geometry]
dimension = 1
"#,
    );
    let out = run(&["solve", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("dimension"));
}

#[test]
fn a_missing_config_file_is_a_configuration_error() {
    let out = run(&["solve", "--config", "/nonexistent/nowhere.toml"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn a_pool_split_must_cover_every_level() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = run(&[
        "mlmc",
        "--config",
        config.to_str().unwrap(),
        "--pool-spec",
        "2,2",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("pools"));
}

#[test]
fn solving_without_forcing_yields_the_zero_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
[geometry]
dim = 1
base_cells = 4
levels = 1
t_final = 0.16
base_steps = 2

[ion]
alpha = 0.0

[stimulus]
amplitude = 0.0
baseline = 0.0
"#,
    );
    let out_dir = dir.path().join("out");
    let out = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));

    let vtk = fs::read_to_string(out_dir.join("solution_step0004.vtk")).unwrap();
    let mut in_data = false;
    let mut values = Vec::new();
    for line in vtk.lines() {
        if line.starts_with("LOOKUP_TABLE") {
            in_data = true;
            continue;
        }
        if in_data {
            values.push(line.trim().parse::<f64>().unwrap());
        }
    }
    assert_eq!(values.len(), 9, "one value per node of the 8-cell mesh");
    assert!(values.iter().all(|v| *v == 0.0), "field: {values:?}");
}

#[test]
fn the_multilevel_table_has_one_row_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "mlmc",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));

    let rows = data_rows(&out_dir.join("per_level.csv"));
    assert_eq!(rows.len(), 3, "levels 0..=2 each get a row: {rows:?}");
    for (l, row) in rows.iter().enumerate() {
        assert!(row.starts_with(&format!("{l},")), "row {l}: {row}");
    }
    // The timing table mirrors the level structure but lives in its own
    // artifact so the statistics tables stay reproducible.
    assert_eq!(data_rows(&out_dir.join("timings.csv")).len(), 3);
    assert!(out_dir.join("summary.csv").is_file());
    assert!(out_dir.join("trace.csv").is_file());
    assert!(out_dir.join("mean_step0008.vtk").is_file());
    assert!(out_dir.join("variance_step0008.vtk").is_file());
    for l in 0..3 {
        let m = 2 * (1 << l);
        let name = format!("correction_l{l}_step{m:04}.vtk");
        assert!(out_dir.join(&name).is_file(), "missing {name}");
    }
}

#[test]
fn requesting_a_dump_past_the_final_step_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{SMALL}\n[output]\nvtk_steps = [9]\n"));
    let out = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("vtk_steps"));
}

#[test]
fn statistics_tables_are_byte_identical_across_reruns_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out_dir, workers) in [(&out_a, "1"), (&out_b, "3")] {
        let out = run(&[
            "mlmc",
            "--config",
            config.to_str().unwrap(),
            "--workers",
            workers,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));
    }

    // Wall-clock measurements are confined to timings.csv and trace.csv;
    // every other table must not change between runs.
    for name in ["per_level.csv", "summary.csv"] {
        let a = fs::read(out_a.join(name)).unwrap();
        let b = fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
    // Field dumps are identical apart from the title line, which carries
    // the write timestamp.
    for entry in fs::read_dir(&out_a).unwrap() {
        let name = entry.unwrap().file_name();
        let name = name.to_str().unwrap().to_owned();
        if !name.ends_with(".vtk") {
            continue;
        }
        let strip = |p: &Path| {
            let text = fs::read_to_string(p).unwrap();
            text.lines()
                .enumerate()
                .filter(|(i, _)| *i != 1)
                .map(|(_, l)| l.to_owned())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(
            strip(&out_a.join(&name)),
            strip(&out_b.join(&name)),
            "{name} differs between reruns"
        );
    }
}

#[test]
fn the_spectrum_table_lists_positive_decreasing_eigenvalues() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "kl-spectrum",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));

    let rows = data_rows(&out_dir.join("kl_spectrum.csv"));
    assert!(!rows.is_empty());
    let lambdas: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(lambdas.iter().all(|l| *l > 0.0), "{lambdas:?}");
    assert!(
        lambdas.windows(2).all(|w| w[0] >= w[1]),
        "eigenvalues should come out ordered: {lambdas:?}"
    );
    let fractions: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert!(fractions.windows(2).all(|w| w[0] <= w[1]));
    assert!(*fractions.last().unwrap() > 0.98);
}

#[test]
fn command_line_overrides_take_precedence_over_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "mc",
        "--config",
        config.to_str().unwrap(),
        "--samples",
        "3",
        "--seed",
        "99",
        "--levels",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));
    let preamble = fs::read_to_string(out_dir.join("per_level.csv")).unwrap();
    assert!(preamble.contains("# samples = 3"), "{preamble}");
    assert!(preamble.contains("# master_seed = 99"), "{preamble}");
    assert!(preamble.contains("# levels = 1"), "{preamble}");
    let rows = data_rows(&out_dir.join("per_level.csv"));
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("1,3,"), "level 1, 3 samples: {rows:?}");
}

#[test]
fn the_verify_command_reports_every_check_and_exits_cleanly() {
    let out = run(&["verify"]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    let passes = text.matches(": PASS").count();
    assert_eq!(passes, 8, "expected all eight checks to pass:\n{text}");
    assert!(!text.contains(": FAIL"), "{text}");
}
