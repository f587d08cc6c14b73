use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(rel: &str) -> PathBuf {
    root().join("configs").join(rel)
}

fn out_dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("cgrf-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn cgrf(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgrf")).arg("--out-dir").arg(out).args(args).output().expect("spawn cgrf")
}

fn find(dir: &Path, prefix: &str) -> PathBuf {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .unwrap_or_else(|| panic!("no {prefix}* in {}", dir.display()))
}

fn csv_rows(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_owned).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(str::to_owned).collect()).collect();
    (header, rows)
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn sampled_draws_hit_the_boundary_values() {
    let out = out_dir("sample");
    let cfg = config("fields/interval_state.json");
    let o = cgrf(&out, &["--seed", "7", "sample", cfg.to_str().unwrap(), "--n-draws", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&find(&out, "draws_"));
    assert_eq!(header, ["x1", "on_boundary", "draw_1", "draw_2", "draw_3", "draw_4"]);
    let mut seen = 0;
    for r in rows.iter().filter(|r| r[1] == "1") {
        let x: f64 = r[0].parse().unwrap();
        let g = if x == 0.0 { 0.5 } else { -1.0 };
        for v in &r[2..] {
            assert!((v.parse::<f64>().unwrap() - g).abs() < 1e-6, "{r:?}");
        }
        seen += 1;
    }
    assert_eq!(seen, 2);
    let manifest = json(&find(&out, "manifest_"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["command"], "sample");
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = config("fields/square_robin.json");
    let a = out_dir("rerun-a");
    let b = out_dir("rerun-b");
    for d in [&a, &b] {
        assert!(cgrf(d, &["--seed", "3", "sample", cfg.to_str().unwrap()]).status.success());
    }
    let fa = find(&a, "draws_");
    let fb = find(&b, "draws_");
    assert_eq!(fa.file_name(), fb.file_name());
    assert_eq!(std::fs::read(&fa).unwrap(), std::fs::read(&fb).unwrap());
    let c = out_dir("rerun-c");
    assert!(cgrf(&c, &["--seed", "4", "sample", cfg.to_str().unwrap()]).status.success());
    assert_ne!(std::fs::read(&fa).unwrap(), std::fs::read(find(&c, "draws_")).unwrap());
}

#[test]
fn malformed_config_exits_2_with_position() {
    let out = out_dir("malformed");
    std::fs::create_dir_all(&out).unwrap();
    let bad = out.join("bad.json");
    std::fs::write(&bad, "{\n  \"domain\": {\"shape\": \"interval\", \"a\": 0,, \"b\": 1}\n}\n").unwrap();
    let o = cgrf(&out, &["verify", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2 column"), "{err}");
}

#[test]
fn unknown_kernel_type_exits_2() {
    let out = out_dir("unknown-kernel");
    std::fs::create_dir_all(&out).unwrap();
    let src = std::fs::read_to_string(config("fields/interval_state.json")).unwrap().replace("\"se\"", "\"cubic\"");
    let p = out.join("k.json");
    std::fs::write(&p, src).unwrap();
    assert_eq!(cgrf(&out, &["sample", p.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn verify_separates_recipe_from_sabotaged_weights() {
    let out = out_dir("verify");
    for (f, code) in [("example1_pinned.json", 0), ("square_robin.json", 0), ("sabotaged_weights.json", 3)] {
        let o = cgrf(&out, &["verify", config(&format!("fields/{f}")).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(code), "{f}: {}", String::from_utf8_lossy(&o.stderr));
        let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["pass"], code == 0, "{f}");
    }
}

#[test]
fn sampling_refuses_a_field_that_fails_verification() {
    let out = out_dir("sample-sabotaged");
    let o = cgrf(&out, &["sample", config("fields/sabotaged_weights.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn heat_summary_covers_the_grid() {
    let out = out_dir("heat");
    let o = cgrf(&out, &["solve-heat", config("heat_dirichlet.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&find(&out, "heat_summary_"));
    assert_eq!(header, ["t", "x", "mean", "q025", "q975"]);
    assert_eq!(rows.len(), 1600);
    for r in &rows {
        let v: Vec<f64> = r.iter().map(|c| c.parse().unwrap()).collect();
        assert!(v[3] <= v[2] + 1e-12 && v[2] <= v[4] + 1e-12, "{r:?}");
    }
    let m = json(&find(&out, "heat_metrics_"));
    assert!(m["max_error_exact"].as_f64().unwrap() < 1e-2);
    assert!(m["max_boundary_variance"].as_f64().unwrap() < 1e-10);
}

#[test]
fn discover_smoke_selects_burgers_terms() {
    let out = out_dir("discover");
    let o = cgrf(&out, &["discover", config("discovery_smoke.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&find(&out, "discovery_metrics_"));
    let selected: Vec<&str> = m["selected"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(selected, ["u_xx", "u*u_x"]);
    let (header, rows) = csv_rows(&find(&out, "discovery_coefficients_"));
    assert_eq!(header, ["term", "coefficient", "truth"]);
    assert_eq!(rows.len(), 2);
}

#[test]
fn tensile_writes_one_row_per_prior_and_replicate() {
    let out = out_dir("tensile");
    let o = cgrf(&out, &["tensile", config("tensile_sparse.json").to_str().unwrap(), "--replicates", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = csv_rows(&find(&out, "tensile_replicates_"));
    assert_eq!(rows.len(), 4);
    for prior in ["cgrf", "grf"] {
        assert_eq!(rows.iter().filter(|r| r[1] == prior).count(), 2);
    }
    for r in rows.iter().filter(|r| r[1] == "cgrf") {
        assert!(r[3].parse::<f64>().unwrap() < 1e-6, "{r:?}");
    }
}

#[test]
fn bridge_check_passes() {
    let out = out_dir("bridge");
    let o = cgrf(&out, &["bridge-check", "--pairs", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_config_file_exits_2() {
    let out = out_dir("missing");
    assert_eq!(cgrf(&out, &["verify", "/nonexistent/field.json"]).status.code(), Some(2));
}
