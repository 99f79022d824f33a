use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_twolmm");

fn twolmm(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = twolmm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.cfg");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = "scene.width = 20\nscene.height = 20\nscene.bands = 30\n";

fn parse_results_csv(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "method,rmse_a,rmse_x,time_s,iters,error");
    lines.map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn generate_writes_five_files_and_manifest_lists_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("scene");
    ok(&["generate", "--config", &cfg, "--seed", "11", "--out", out.to_str().unwrap()]);
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["abundances.bin", "endmembers.bin", "image.bin", "manifest.json", "scalings.csv"]);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["width"], 20);
    assert!(manifest["config"].as_str().unwrap().contains("seed = 11"));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["generate", "--config", &cfg, "--seed", "5", "--out", a.to_str().unwrap()]);
    ok(&["generate", "--config", &cfg, "--seed", "5", "--out", b.to_str().unwrap()]);
    for f in ["image.bin", "abundances.bin", "endmembers.bin", "scalings.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    ok(&["generate", "--config", &cfg, "--seed", "6", "--out", c.to_str().unwrap()]);
    assert_ne!(fs::read(a.join("image.bin")).unwrap(), fs::read(c.join("image.bin")).unwrap());
}

#[test]
fn missing_output_directory_is_created() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("x").join("y").join("z");
    ok(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(out.join("image.bin").is_file());
}

#[test]
fn unmix_csv_and_json_hold_identical_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("u");
    ok(&["unmix", "--config", &cfg, "--seed", "2", "--out", out.to_str().unwrap()]);
    let csv = parse_results_csv(&fs::read_to_string(out.join("results.csv")).unwrap());
    let json: Value = serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(csv.len(), 4);
    assert_eq!(rows.len(), 4);
    for (c, j) in csv.iter().zip(rows) {
        assert_eq!(c[0], j["method"].as_str().unwrap());
        for (i, key) in [(1, "rmse_a"), (2, "rmse_x"), (3, "time_s")] {
            assert_eq!(c[i].parse::<f64>().unwrap(), j[key].as_f64().unwrap(), "{key}");
        }
        assert_eq!(c[4].parse::<u64>().unwrap(), j["iters"].as_u64().unwrap());
        assert!(c[5].is_empty() && j["error"].is_null());
    }
    assert_eq!(json["endmember_sad_deg"].as_array().unwrap().len(), 3);
    for m in ["als2lmm", "lbfgs2lmm"] {
        let trace = fs::read_to_string(out.join(format!("trace_{m}.csv"))).unwrap();
        assert!(trace.starts_with("iteration,cost_start,cost_trial,cost,step"));
        assert!(trace.lines().count() > 1);
    }
    assert!(!out.join("trace_lmm.csv").exists());
}

#[test]
fn unmix_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let strip_time = |p: &Path| -> Vec<Vec<String>> {
        parse_results_csv(&fs::read_to_string(p.join("results.csv")).unwrap())
            .into_iter()
            .map(|mut r| {
                r.remove(3);
                r
            })
            .collect()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["unmix", "--config", &cfg, "--out", a.to_str().unwrap()]);
    ok(&["unmix", "--config", &cfg, "--out", b.to_str().unwrap()]);
    assert_eq!(strip_time(&a), strip_time(&b));
}

#[test]
fn rows_rederive_from_generated_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let scene = dir.path().join("scene");
    ok(&["generate", "--config", &cfg, "--seed", "4", "--out", scene.to_str().unwrap()]);
    let from_files = write_config(
        dir.path(),
        &format!(
            "scene.generator = files\nscene.endmembers = 3\nscene.image = {0}/image.bin\nscene.abundances = {0}/abundances.bin\nscene.truth_endmembers = {0}/endmembers.bin\n",
            scene.display()
        ),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["unmix", "--config", &from_files, "--seed", "4", "--out", a.to_str().unwrap()]);
    ok(&["unmix", "--config", &cfg, "--seed", "4", "--out", b.to_str().unwrap()]);
    let ra = parse_results_csv(&fs::read_to_string(a.join("results.csv")).unwrap());
    let rb = parse_results_csv(&fs::read_to_string(b.join("results.csv")).unwrap());
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!((&x[0], &x[1], &x[2], &x[4]), (&y[0], &y[1], &y[2], &y[4]));
    }
}

#[test]
fn singleton_sweep_matches_unmix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (s, u) = (dir.path().join("s"), dir.path().join("u"));
    ok(&["sweep", "--config", &cfg, "--kind", "bounds_alpha", "--values", "5", "--out", s.to_str().unwrap()]);
    ok(&["unmix", "--config", &cfg, "--bounds", "0.2,5", "--out", u.to_str().unwrap()]);
    let sweep = fs::read_to_string(s.join("sweep.csv")).unwrap();
    let mut lines = sweep.lines();
    assert_eq!(lines.next().unwrap(), "sweep,value,method,rmse_a,rmse_x,time_s,iters,error");
    let sweep_rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let unmix_rows = parse_results_csv(&fs::read_to_string(u.join("results.csv")).unwrap());
    assert_eq!(sweep_rows.len(), unmix_rows.len());
    for (sr, ur) in sweep_rows.iter().zip(&unmix_rows) {
        assert_eq!(sr[0], "bounds_alpha");
        assert_eq!(sr[1].parse::<f64>().unwrap(), 5.0);
        assert_eq!((sr[2], sr[3], sr[4], sr[6]), (ur[0].as_str(), ur[1].as_str(), ur[2].as_str(), ur[4].as_str()));
    }
}

#[test]
fn snr_sweep_is_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let s = dir.path().join("s");
    ok(&["sweep", "--config", &cfg, "--kind", "snr", "--values", "20,50", "--methods", "slmm,lbfgs2lmm", "--out", s.to_str().unwrap()]);
    let text = fs::read_to_string(s.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("snr,20.0,slmm,") && rows[3].starts_with("snr,50.0,lbfgs2lmm,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();

    assert_eq!(twolmm(&["unmix", "--config", &cfg, "--methods", "lmm,nmf", "--out", o]).status.code(), Some(1));
    assert_eq!(twolmm(&["unmix", "--config", "/no/such/file.cfg"]).status.code(), Some(1));
    assert_eq!(twolmm(&["unmix", "--bounds", "5"]).status.code(), Some(1));
    assert_eq!(twolmm(&["frobnicate"]).status.code(), Some(1));

    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "not a directory").unwrap();
    let code = twolmm(&["generate", "--config", &cfg, "--out", blocker.join("sub").to_str().unwrap()]).status.code();
    assert_eq!(code, Some(3));

    // two identical endmembers: every solver fails, rows are still written
    let em = dir.path().join("em.csv");
    let col: Vec<String> = (0..30).map(|i| format!("{}", 0.1 + 0.01 * i as f64)).collect();
    let body: String = col.iter().map(|v| format!("{v},{v}\n")).collect();
    fs::write(&em, format!("30,2\n{body}")).unwrap();
    let run = twolmm(&["unmix", "--config", &cfg, "--em-source", "file", "--out", o, "--methods", "slmm,lbfgs2lmm"]);
    assert_eq!(run.status.code(), Some(1), "file source without a file is a config error");
    let with_file = write_config(dir.path(), &format!("{SMALL}experiment.em_file = {}\n", em.display()));
    let run = twolmm(&["unmix", "--config", &with_file, "--em-source", "file", "--out", o, "--methods", "slmm,lbfgs2lmm"]);
    assert_eq!(run.status.code(), Some(2), "{}", String::from_utf8_lossy(&run.stderr));
    let rows = parse_results_csv(&fs::read_to_string(out.join("results.csv")).unwrap());
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| !r[5].is_empty()));
}

#[test]
fn info_prints_resolved_config() {
    let out = ok(&["info", "--seed", "9", "--snr", "inf"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed = 9"));
    assert!(text.contains("scene.snr_db = inf"));
    assert!(text.contains("lbfgs2lmm"));
}

#[test]
fn ordering_on_generated_scene() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    ok(&["unmix", "--seed", "0", "--methods", "lmm,slmm,lbfgs2lmm", "--out", out.to_str().unwrap()]);
    let rows = parse_results_csv(&fs::read_to_string(out.join("results.csv")).unwrap());
    let a: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert!(a[2] < a[1] && a[1] < a[0], "lmm {} slmm {} lbfgs2lmm {}", a[0], a[1], a[2]);
}

#[test]
fn exact_scene_with_truth_endmembers_reconstructs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    ok(&["unmix", "--seed", "0", "--snr", "inf", "--em-source", "truth", "--methods", "lbfgs2lmm", "--out", out.to_str().unwrap()]);
    let rows = parse_results_csv(&fs::read_to_string(out.join("results.csv")).unwrap());
    let rmse_x: f64 = rows[0][2].parse().unwrap();
    assert!(rmse_x <= 1e-8, "rmse_x {rmse_x}");
}
