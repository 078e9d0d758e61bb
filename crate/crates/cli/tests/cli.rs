use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gaitforge_cli::files::{read_json, read_library, write_json, GaitLibraryFile, SeedFile};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gaitforge"));
    for (k, _) in std::env::vars() {
        if k.starts_with("GAITFORGE_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn gaitforge")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn short_seed(dir: &Path) -> PathBuf {
    let seed = p(dir, "seed.json");
    let o = run(&["passive", "--model", "compass-gait", "--branch", "short", "--out", s(&seed)]);
    assert!(o.status.success(), "{}", stderr(&o));
    seed
}

fn gamma_library(dir: &Path) -> PathBuf {
    let seed = short_seed(dir);
    let lib = p(dir, "gamma.json");
    let o = run(&["continue", "--seed", s(&seed), "--param", "gamma", "--end", "0", "--out", s(&lib)]);
    assert!(o.status.success(), "{}", stderr(&o));
    lib
}

#[test]
fn passive_seed_is_an_exact_extremal() {
    let dir = tempfile::tempdir().unwrap();
    let path = p(dir.path(), "seed.json");
    let o = run(&["passive", "--model", "compass-gait", "--out", s(&path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let seed: SeedFile = read_json(&path).unwrap();
    assert!(seed.residual_norm <= 1e-8);
    assert_eq!(seed.decision.u0.amax(), 0.0);
    assert_eq!(seed.decision.lambda.amax(), 0.0);
    assert_eq!(seed.passive.branch_tag.as_deref(), Some("long"));
}

#[test]
fn passive_accepts_explicit_guesses() {
    let dir = tempfile::tempdir().unwrap();
    let path = p(dir.path(), "seed.json");
    let o = run(&[
        "passive",
        "--model",
        "compass-gait",
        "--guess-t",
        "1.95",
        "--guess-x0=-0.1,0.094,-0.163,-0.165",
        "--guess-gamma",
        "0.22",
        "--branch",
        "short",
        "--out",
        s(&path),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let seed: SeedFile = read_json(&path).unwrap();
    assert!((seed.sigma[0].to_degrees() - 0.2199).abs() < 1e-3);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "x.json");
    assert_eq!(run(&["passive", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(run(&["passive", "--model", "biped", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let o = run(&["passive", "--model", "compass-gait", "--guess-x0=0.1,0.2", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let seed = short_seed(dir.path());
    let o = run(&["continue", "--seed", s(&seed), "--param", "mass", "--end", "0", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(&["continue", "--seed", s(&seed), "--param", "gamma", "--end", "0", "--h-min", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn environment_sets_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "seed.json");
    let bad = bin()
        .env("GAITFORGE_NEWTON_TOL", "-1")
        .args(["passive", "--model", "compass-gait", "--out", s(&out)])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2), "{}", stderr(&bad));
    let good = bin()
        .env("GAITFORGE_NEWTON_TOL", "-1")
        .args(["passive", "--model", "compass-gait", "--newton-tol", "1e-8", "--out", s(&out)])
        .output()
        .unwrap();
    assert!(good.status.success(), "{}", stderr(&good));
    let threads = bin()
        .env("GAITFORGE_THREADS", "1")
        .args(["passive", "--model", "compass-gait", "--out", s(&out)])
        .output()
        .unwrap();
    assert!(threads.status.success(), "{}", stderr(&threads));
}

#[test]
fn end_at_start_gives_single_point() {
    let dir = tempfile::tempdir().unwrap();
    let seed = short_seed(dir.path());
    let start: SeedFile = read_json(&seed).unwrap();
    let lib = p(dir.path(), "one.json");
    let end = format!("{:.17e}", start.sigma[0].to_degrees());
    let o = run(&["continue", "--seed", s(&seed), "--param", "gamma", "--end", &end, "--out", s(&lib)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lib = read_library(&lib).unwrap();
    assert_eq!(lib.points.len(), 1);
    assert_eq!(lib.points[0].sigma, start.sigma[0]);
}

#[test]
fn verify_accepts_fresh_and_rejects_edited_libraries() {
    let dir = tempfile::tempdir().unwrap();
    let lib = gamma_library(dir.path());
    let o = run(&["verify", s(&lib)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut file: GaitLibraryFile = read_json(&lib).unwrap();
    assert!(file.metadata.termination.is_success());
    file.points[3].t += 1e-6;
    let edited = p(dir.path(), "edited.json");
    write_json(&edited, &file).unwrap();
    let o = run(&["verify", s(&edited)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("point 3"), "{}", stderr(&o));

    let mut file: GaitLibraryFile = read_json(&lib).unwrap();
    file.points.swap(10, 11);
    write_json(&edited, &file).unwrap();
    let o = run(&["verify", s(&edited)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("along the curve"), "{}", stderr(&o));
}

#[test]
fn corrupt_files_report_their_position() {
    let dir = tempfile::tempdir().unwrap();
    let lib = gamma_library(dir.path());
    let text = std::fs::read_to_string(&lib).unwrap();
    let corrupt = p(dir.path(), "corrupt.json");
    std::fs::write(&corrupt, &text[..text.len() / 2]).unwrap();
    let o = run(&["verify", s(&corrupt)]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("corrupt.json:") && msg.contains("line"), "{msg}");

    let missing = p(dir.path(), "missing.json");
    let o = run(&["verify", s(&missing)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn library_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let lib = gamma_library(dir.path());
    let a: GaitLibraryFile = read_json(&lib).unwrap();
    let copy = p(dir.path(), "copy.json");
    write_json(&copy, &a).unwrap();
    let b: GaitLibraryFile = read_json(&copy).unwrap();
    assert_eq!(a, b);
    assert_eq!(std::fs::read_to_string(&lib).unwrap(), std::fs::read_to_string(&copy).unwrap());
}

#[test]
fn direct_run_from_indirect_library_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let gamma = gamma_library(dir.path());
    let direct = p(dir.path(), "direct.json");
    let o = run(&[
        "continue", "--method", "direct", "--seed", s(&gamma), "--param", "v_avg", "--end", "0.105", "--basis", "bspline", "--n-xi", "5",
        "--out", s(&direct),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lib = read_library(&direct).unwrap();
    assert_eq!(lib.metadata.basis.unwrap().n_xi, 5);
    assert!(lib.points.iter().all(|p| p.classification.is_some()));
    assert_eq!(lib.points.last().unwrap().sigma, 0.105);
    let o = run(&["verify", s(&direct)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let csv_path = p(dir.path(), "direct.csv");
    assert!(run(&["export", s(&direct), "--out", s(&csv_path)]).status.success());
    let mut r = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(r.headers().unwrap().iter().next_back(), Some("classification"));
    assert_eq!(r.records().count(), lib.points.len());

    let plot = p(dir.path(), "gamma.dat");
    let o = run(&["export", s(&gamma), "--format", "plot", "--x", "gamma", "--y", "x0[1]", "--out", s(&plot)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&plot).unwrap();
    let first: Vec<f64> = text.lines().nth(1).unwrap().split_whitespace().map(|v| v.parse().unwrap()).collect();
    // Slopes are exported in degrees.
    assert!((first[0] - 0.2199).abs() < 1e-3);
    let o = run(&["export", s(&gamma), "--format", "plot", "--y", "xi[0]", "--out", s(&plot)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_writes_table_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let gamma = gamma_library(dir.path());
    let out = p(dir.path(), "cmp");
    let o = run(&["compare", "--seed", s(&gamma), "--n-min", "4", "--n-max", "5", "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("comparison.csv")).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["basis", "n_xi", "cond_number", "indirect_cond_number", "cost", "rel_cost_error_vs_indirect", "classification", "wall_time_ms"]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let err: f64 = row[5].parse().unwrap();
        assert!(err > 0.0, "{row:?}");
        assert_eq!(&row[3], &rows[0][3]);
    }
    assert!(out.join("bspline_cond.dat").exists());
    assert!(out.join("bezier_rel_error.dat").exists());
    let study = gaitforge_cli::commands::read_comparison(&out.join("comparison.json")).unwrap();
    assert_eq!(study.study.rows.len(), 4);
}
