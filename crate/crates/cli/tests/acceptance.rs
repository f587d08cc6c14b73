//! Acceptance criteria, one line each. Run with `cargo test -p cgrf-cli --test acceptance`;
//! append `-- 7 9` to run a subset.

use cgrf::apps::discovery::{self, DiscoveryConfig, PriorKind};
use cgrf::apps::heat::{
    dirichlet_exact, heat_reference_for, max_error_at_slices, solve_heat, HeatBoundary, HeatConfig,
};
use cgrf::apps::tensile::{self, Design, TensileConfig};
use cgrf::cgrf::{base_draw_queries, bridge_check, product_structure_check, transform_sample, verify_conditions};
use cgrf::cgrf::{BaseDraw, BaseField, ConstrainedField};
use cgrf::config::FieldConfig;
use cgrf::geometry::Point;
use cgrf::gp::sample;
use cgrf::kernels::{Kernel, MultiIndex};
use rand::{Rng, SeedableRng};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Check = fn() -> Result<Outcome, String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn field_config(name: &str) -> Result<FieldConfig, String> {
    let p = root().join("configs/fields").join(name);
    let src = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
    FieldConfig::from_json(&src).map_err(|e| e.to_string())
}

fn field(name: &str) -> Result<ConstrainedField, String> {
    field_config(name)?.build().map_err(|e| e.to_string())
}

fn s<E: ToString>(e: E) -> String {
    e.to_string()
}

fn boundary_suite() -> Result<Outcome, String> {
    let fixtures = [
        "interval_state.json",
        "interval_derivative.json",
        "interval_robin.json",
        "square_state.json",
        "square_derivative.json",
        "square_robin.json",
        "disk_state.json",
        "triangle_state.json",
        "dog_bone_state.json",
    ];
    let mut failed = Vec::new();
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for f in fixtures {
        let cfg = field_config(f)?;
        let closed_form = cfg.constraints.iter().all(|c| matches!(c.weight, cgrf::config::WeightConfig::Expr { .. }));
        let var_tol = if closed_form { 1e-8 } else { 1e-6 };
        let report = verify_conditions(&cfg.build().map_err(s)?, 50, 1.0).map_err(s)?;
        for c in &report.constraints {
            worst_mean = worst_mean.max(c.max_mean_violation);
            worst_var = worst_var.max(c.max_variance_violation);
            if !(c.max_mean_violation < 1e-8 && c.max_variance_violation < var_tol) {
                failed.push(format!("{f}#{}", c.index));
            }
        }
    }
    Ok(outcome(
        failed.is_empty(),
        format!("9 fixtures, max |Lm-g| {worst_mean:.1e}, max LkL* {worst_var:.1e}, failing {failed:?}"),
    ))
}

fn kernels_1d() -> Result<Vec<(&'static str, Kernel)>, String> {
    Ok(vec![("se", Kernel::se(1.0, &[0.35]).map_err(s)?), ("matern52", Kernel::matern(2.5, 1.3, &[0.5]).map_err(s)?)])
}

fn bridge() -> Result<Outcome, String> {
    let mut worst = 0.0f64;
    for (_, k) in kernels_1d()? {
        worst = worst.max(bridge_check(&k, 50, 11).map_err(s)?.bridge_max_deviation);
    }
    Ok(outcome(worst < 1e-12, format!("50 pairs, SE and Matern 5/2, max deviation {worst:.1e}")))
}

fn example_one() -> Result<Outcome, String> {
    let mut worst = 0.0f64;
    for (_, k) in kernels_1d()? {
        worst = worst.max(bridge_check(&k, 50, 12).map_err(s)?.example_one_max_deviation);
    }
    let f = field("example1_pinned.json")?;
    let pinned = verify_conditions(&f, 50, 1e-14).map_err(s)?.pass;
    Ok(outcome(worst < 1e-14 && pinned, format!("max deviation {worst:.1e}, pinned endpoint exact: {pinned}")))
}

fn product_structure() -> Result<Outcome, String> {
    let src = r#"{
        "domain": {"shape": "box", "lo": [0, 0], "hi": [1, 1]},
        "kernel": {"form": "product", "factors": [
            {"dims": [0], "kernel": {"form": "periodic", "precision": 1.5, "lengthscale": 0.6, "period": 1}},
            {"dims": [1], "kernel": {"form": "matern", "nu": 2.5, "precision": 1, "lengthscales": [0.4]}}
        ]},
        "constraints": [
            {"segment": 2, "target": "sin(6*x1)", "projection": {"direction": [0, -1]}, "weight": {"expr": "1 - x2"}},
            {"segment": 3, "target": "1", "projection": {"direction": [0, 1]}, "weight": {"expr": "x2"}}
        ]
    }"#;
    let f = FieldConfig::from_json(src).map_err(s)?.build().map_err(s)?;
    let r = product_structure_check(&f, 1, 5).map_err(s)?;
    Ok(outcome(r < 1e-12, format!("periodic x Matern 5/2, 100 pairs, residual {r:.1e}")))
}

/// Largest standardized gap between Monte Carlo moments of transformed draws and the
/// constrained mean and covariance.
fn monte_carlo_gap(f: &ConstrainedField, xs: &[Point], n: usize, seed: u64) -> Result<f64, String> {
    let cs = f.constraint_set();
    let base = BaseField::new(cs.base_kernel().clone(), cs.base_mean().clone());
    let qs = base_draw_queries(f, xs).map_err(s)?;
    let draws = sample(&base, &qs, n, seed).map_err(s)?;
    let m = xs.len();
    let mut samples = vec![vec![0.0; m]; n];
    for (d, row) in samples.iter_mut().enumerate() {
        let col: Vec<f64> = draws.column(d).iter().copied().collect();
        let bd = BaseDraw::from_flat(&col, m, f.n_constraints()).map_err(s)?;
        *row = transform_sample(f, xs, &bd).map_err(s)?;
    }
    let nf = n as f64;
    let mean: Vec<f64> = (0..m).map(|i| samples.iter().map(|r| r[i]).sum::<f64>() / nf).collect();
    let mut gap = 0.0f64;
    let cov = |i: usize, j: usize| f.constrained_cov(None, None, &xs[i], &xs[j]).map_err(s);
    for i in 0..m {
        let mu = f.constrained_mean(&xs[i]).map_err(s)?;
        let se = (cov(i, i)?.max(0.0) / nf).sqrt().max(1e-12);
        gap = gap.max((mean[i] - mu).abs() / se);
        for j in 0..=i {
            let c = samples.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (nf - 1.0);
            let (cij, cii, cjj) = (cov(i, j)?, cov(i, i)?, cov(j, j)?);
            let se = ((cii * cjj + cij * cij) / nf).sqrt().max(1e-12);
            gap = gap.max((c - cij).abs() / se);
        }
    }
    Ok(gap)
}

fn monte_carlo() -> Result<Outcome, String> {
    let line: Vec<Point> = [0.1, 0.3, 0.5, 0.7, 0.9].iter().map(|&x| Point::from(x)).collect();
    let tri: Vec<Point> =
        [[0.1, 0.2], [0.3, 0.3], [0.5, 0.1], [0.2, 0.6], [0.05, 0.05]].iter().map(|&p| Point::from(p)).collect();
    let g1 = monte_carlo_gap(&field("interval_robin.json")?, &line, 50_000, 21)?;
    let g2 = monte_carlo_gap(&field("triangle_state.json")?, &tri, 50_000, 22)?;
    Ok(outcome(
        g1 < 5.0 && g2 < 5.0,
        format!("50000 draws, max gap {g1:.2} SE (interval Robin), {g2:.2} SE (triangle)"),
    ))
}

fn derivatives() -> Result<Outcome, String> {
    let families: Vec<(&str, Kernel)> = vec![
        ("se", Kernel::se(1.3, &[0.4, 0.7]).map_err(s)?),
        ("matern32", Kernel::matern(1.5, 1.0, &[0.5, 0.3]).map_err(s)?),
        ("matern52", Kernel::matern(2.5, 0.8, &[0.5, 0.6]).map_err(s)?),
        ("matern72", Kernel::matern(3.5, 1.0, &[0.3, 0.5]).map_err(s)?),
        ("periodic", Kernel::periodic(1.0, 0.8, 1.7).map_err(s)?),
    ];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut worst_family = "";
    for (name, k) in &families {
        let d = k.dim();
        let h = 1e-5 * k.min_lengthscale();
        let units: Vec<MultiIndex> = (0..d).map(MultiIndex::unit).collect();
        let zero = MultiIndex::default();
        // Each target derivative and the lower derivative it is a central difference of.
        let mut cases: Vec<(MultiIndex, MultiIndex, MultiIndex, MultiIndex, bool, usize)> = Vec::new();
        for a in 0..d {
            cases.push((units[a], zero, zero, zero, true, a));
            cases.push((zero, units[a], zero, zero, false, a));
            for b in 0..d {
                cases.push((units[a], units[b], units[a], zero, false, b));
                cases.push((units[a].plus_axis(b), zero, units[a], zero, true, b));
            }
        }
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            for &(l, r, l0, r0, on_left, axis) in &cases {
                let Ok(exact) = k.eval_deriv(l, r, &x, &y) else { continue };
                let lower = k.derivative(l0, r0).map_err(s)?;
                let (mut xp, mut xm, mut yp, mut ym) = (x.clone(), x.clone(), y.clone(), y.clone());
                if on_left {
                    xp[axis] += h;
                    xm[axis] -= h;
                } else {
                    yp[axis] += h;
                    ym[axis] -= h;
                }
                let fd = (lower.eval(&xp, &yp) - lower.eval(&xm, &ym)) / (2.0 * h);
                let scale = k.variance() / k.min_lengthscale().powi((l.order() + r.order()) as i32);
                let rel = (exact - fd).abs() / exact.abs().max(1e-2 * scale);
                if rel > worst {
                    worst = rel;
                    worst_family = name;
                }
            }
        }
    }
    Ok(outcome(
        worst < 1e-5,
        format!("5 families x 100 pairs, orders 1-2, max relative error {worst:.1e} ({worst_family})"),
    ))
}

fn heat() -> Result<Outcome, String> {
    let mut errors = Vec::new();
    let mut boundary_var = 0.0f64;
    for n_x in [16, 32, 64] {
        let sol = solve_heat(&HeatConfig { n_x, ..Default::default() }, 0).map_err(s)?;
        let err = sol.summary.iter().map(|r| (r.mean - dirichlet_exact(r.t, r.x)).abs()).fold(0.0, f64::max);
        errors.push(err);
        if n_x == 16 {
            boundary_var =
                sol.summary.iter().filter(|r| r.x == 0.0 || r.x == 1.0).map(|r| r.variance).fold(0.0, f64::max);
        }
    }
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    let cfg = HeatConfig { boundary: HeatBoundary::RobinNeumann, ..Default::default() };
    let sol = solve_heat(&cfg, 0).map_err(s)?;
    let reference = heat_reference_for(&cfg).map_err(s)?;
    let robin = max_error_at_slices(&sol, &reference.solution, &[0.05, 0.15, 0.25]);
    Ok(outcome(
        boundary_var < 1e-10 && monotone && robin < 0.05,
        format!(
            "boundary var {boundary_var:.1e}; Dirichlet max error n_x=16/32/64: {:.2e}/{:.2e}/{:.2e} (monotone: {monotone}); Robin/Neumann vs reference {robin:.1e}",
            errors[0], errors[1], errors[2]
        ),
    ))
}

fn discovery() -> Result<Outcome, String> {
    let dense = DiscoveryConfig {
        noise_sd: 0.0,
        data_n_t: 61,
        data_n_x: 161,
        hyperparameters: Some([1.0, 0.05, 0.2]),
        ..Default::default()
    };
    let truth = discovery::burgers_truth(&dense).map_err(s)?;
    let data = discovery::simulate_data(&dense, &truth.solution, 0, 0).map_err(s)?;
    let res = discovery::discover_pde(&dense, &data).map_err(s)?;
    let mut selected = res.selected.clone();
    selected.sort();
    let exact_set = selected == ["u*u_x", "u_xx"];
    let coef = |name: &str| res.terms.iter().position(|t| t == name).map(|i| res.coefficients[i]).unwrap_or(f64::NAN);
    let (c_xx, c_uux) = (coef("u_xx"), coef("u*u_x"));
    let close = (c_xx - 1.0).abs() <= 0.05 && (c_uux + 1.0).abs() <= 0.05;

    let noisy = DiscoveryConfig { noise_sd: 0.2, prior: PriorKind::Cgrf, ..Default::default() };
    let cmp = discovery::compare_priors(&noisy, 20, 0).map_err(s)?;
    let ordered = cmp.median_fdp_cgrf <= cmp.median_fdp_grf && cmp.median_mse_cgrf <= cmp.median_mse_grf;
    Ok(outcome(
        exact_set && close && ordered,
        format!(
            "dense noiseless selects {:?} with u_xx {c_xx:.4}, u*u_x {c_uux:.4}; sigma=0.2 x 20: median FDP {:.3} vs {:.3}, median MSE {:.3e} vs {:.3e} (cGRF vs GRF)",
            res.selected, cmp.median_fdp_cgrf, cmp.median_fdp_grf, cmp.median_mse_cgrf, cmp.median_mse_grf
        ),
    ))
}

fn tensile() -> Result<Outcome, String> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (design, noise) in [(Design::Dense, 1e-4), (Design::Sparse, 1e-2)] {
        let cfg = TensileConfig { design, noise_sd: noise, ..Default::default() };
        let exp = tensile::tensile_experiment(&cfg, 20, 0).map_err(s)?;
        let cgrf_rows: Vec<_> = exp.rows.iter().filter(|r| r.prior == PriorKind::Cgrf).collect();
        let boundary = cgrf_rows.iter().map(|r| r.boundary_max_error).fold(0.0, f64::max);
        let all_ok =
            cgrf_rows.len() == 20 && cgrf_rows.iter().all(|r| r.error.is_none() && r.boundary_max_error < 1e-6);
        pass &= exp.median_log_mspe_cgrf < exp.median_log_mspe_grf && all_ok;
        parts.push(format!(
            "{design:?} sigma={noise}: median log MSPE {:.2} vs {:.2}, cGRF boundary error {boundary:.1e}",
            exp.median_log_mspe_cgrf, exp.median_log_mspe_grf
        ));
    }
    Ok(outcome(pass, parts.join("; ")))
}

/// Output files of one invocation keyed by name; manifests lose their timestamps.
fn run_outputs(args: &[&str], dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let _ = std::fs::remove_dir_all(dir);
    let o = Command::new(env!("CARGO_BIN_EXE_cgrf"))
        .arg("--out-dir")
        .arg(dir)
        .args(["--seed", "17"])
        .args(args)
        .output()
        .map_err(s)?;
    if !o.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
    }
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for e in std::fs::read_dir(dir).map_err(s)? {
        let p = e.map_err(s)?.path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        let mut bytes = std::fs::read(&p).map_err(s)?;
        if name.starts_with("manifest_") {
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).map_err(s)?;
            let m = v.as_object_mut().ok_or("manifest is not an object")?;
            m.remove("started_unix");
            m.remove("finished_unix");
            bytes = serde_json::to_vec(&v).map_err(s)?;
        }
        files.push((name, bytes));
    }
    files.sort();
    let stdout = String::from_utf8_lossy(&o.stdout).replace(&*dir.to_string_lossy(), "<out>");
    files.push(("stdout".into(), stdout.into_bytes()));
    Ok(files)
}

fn determinism() -> Result<Outcome, String> {
    let cfg = |rel: &str| root().join("configs").join(rel).to_string_lossy().into_owned();
    let commands: Vec<Vec<String>> = vec![
        vec!["sample".into(), cfg("fields/square_robin.json"), "--n-draws".into(), "3".into()],
        vec!["verify".into(), cfg("fields/triangle_state.json")],
        vec!["solve-heat".into(), cfg("heat_dirichlet.json")],
        vec!["discover".into(), cfg("discovery_smoke.json")],
        vec!["tensile".into(), cfg("tensile_sparse.json"), "--replicates".into(), "3".into()],
        vec!["bridge-check".into(), "--pairs".into(), "20".into()],
    ];
    let tmp = std::env::temp_dir().join(format!("cgrf-acceptance-{}", std::process::id()));
    let mut differing = Vec::new();
    let mut files = 0;
    for c in &commands {
        let args: Vec<&str> = c.iter().map(String::as_str).collect();
        let a = run_outputs(&args, &tmp.join("a"))?;
        let b = run_outputs(&args, &tmp.join("b"))?;
        files += a.len();
        if a != b {
            differing.push(c[0].clone());
        }
    }
    let _ = std::fs::remove_dir_all(&tmp);
    Ok(outcome(
        differing.is_empty(),
        format!("{} commands, {files} outputs compared, differing: {differing:?}", commands.len()),
    ))
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("1 boundary enforcement suite", boundary_suite),
        ("2 Gaussian-bridge identity", bridge),
        ("3 example-1 identity", example_one),
        ("4 product-structure preservation", product_structure),
        ("5 representation/moment consistency", monte_carlo),
        ("6 kernel derivatives vs finite differences", derivatives),
        ("7 heat solver", heat),
        ("8 PDE discovery", discovery),
        ("9 tensile test", tensile),
        ("10 CLI determinism", determinism),
    ];
    // Criterion numbers given as arguments select a subset.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    let mut run = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|n| name.split(' ').next() == Some(n.as_str())) {
            continue;
        }
        run += 1;
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!("[{}] criterion {name} ({secs:.1} s): {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {run} criteria pass", run - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
