//! Acceptance criteria 1 to 11. Each criterion runs its config from
//! `configs/` through the library runner and prints one PASS/FAIL line.
//! Criteria 1, 3 and 4 are also checked against values computed here from
//! independent formulas.

use std::path::PathBuf;
use std::time::Instant;

use exclusion_core::kernel::{build_kernel, perturb, GraphSpec, Kernel, Perturbation};
use exclusion_core::measures::{nu_c, InitialMeasure, ProductMeasure};
use exclusion_core::oracle::{build_exact, exact_transient};
use exclusion_lab::{run, ExperimentConfig};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

/// Tolerance on exact identities.
const EXACT_TOL: f64 = 1e-12;
/// Agreement between two exact transient solvers.
const SOLVER_TOL: f64 = 1e-10;
const SIGMA: f64 = 3.0;

fn config(file: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(file);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn execute(cfg: &ExperimentConfig) -> Result<(Value, String), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = run(cfg, dir.path()).map_err(|e| e.to_string())?;
    let v = serde_json::from_str(&out.summary_json).map_err(|e| e.to_string())?;
    Ok((v, out.summary_json))
}

fn summary(file: &str) -> Result<Value, String> {
    execute(&config(file)).map(|r| r.0)
}

fn failed_assertions(s: &Value) -> Vec<String> {
    s["assertions"]
        .as_array()
        .into_iter()
        .flatten()
        .filter(|a| a["passed"] != Value::Bool(true))
        .map(|a| format!("{}: {}", a["name"].as_str().unwrap_or("?"), a["detail"].as_str().unwrap_or("")))
        .collect()
}

/// All declared assertions of each run passed.
fn all_passed(files: &[&str]) -> Result<String, String> {
    let mut notes = Vec::new();
    for f in files {
        let s = summary(f)?;
        let bad = failed_assertions(&s);
        if !bad.is_empty() {
            return Err(format!("{f}: {}", bad.join("; ")));
        }
        notes.push(format!("{f}: {} assertions", s["assertions"].as_array().map_or(0, |a| a.len())));
    }
    Ok(notes.join(", "))
}

/// Generator matrix built directly from the kernel, state `s` has site `i` as bit `i`.
fn generator(k: &Kernel) -> DMatrix<f64> {
    let n = 1usize << k.n_sites();
    let mut q = DMatrix::zeros(n, n);
    for s in 0..n {
        for (x, y, r) in k.edges() {
            if (s >> x) & 1 == 1 && (s >> y) & 1 == 0 {
                q[(s, s ^ (1 << x) ^ (1 << y))] += r;
                q[(s, s)] -= r;
            }
        }
    }
    q
}

fn criterion_1() -> Result<String, String> {
    let s = summary("c01_nu_c_stationarity.toml")?;
    let max = s["results"]["max_abs_residual"].as_f64().ok_or("missing residual")?;
    if max > EXACT_TOL {
        return Err(format!("max cylinder residual {max:e}"));
    }
    // νQ = 0 on a 6-site window, for the full state space
    let k = build_kernel(&GraphSpec::path(6, 0.5)).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for eps in [0.1, 0.25, 0.4] {
        let kbar = perturb(&k, &Perturbation::single(2, 3, eps)).map_err(|e| e.to_string())?;
        let q = generator(&kbar);
        for c in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let mu = nu_c(c, eps, 6, 2).map_err(|e| e.to_string())?;
            let p = DVector::from_vec(mu.state_probs().ok_or("no state probs")?);
            worst = worst.max((p.transpose() * &q).amax());
        }
    }
    if worst > EXACT_TOL {
        return Err(format!("full-generator residual {worst:e}"));
    }
    Ok(format!("max cylinder residual {max:.1e}, full-generator residual {worst:.1e}"))
}

fn criterion_2() -> Result<String, String> {
    let mut notes = Vec::new();
    for f in ["c02_duality_path.toml", "c02_duality_torus.toml"] {
        let s = summary(f)?;
        let r = &s["results"]["report"];
        if r["pathwise_equal"] != Value::Bool(true) || r["mismatches"] != 0 {
            return Err(format!("{f}: {} mismatches", r["mismatches"]));
        }
        notes.push(format!("{f}: 0 of {} seeds differ", s["replicas"]));
    }
    Ok(notes.join(", "))
}

fn criterion_3() -> Result<String, String> {
    let cfg = config("c03_oracle.toml");
    let (s, _) = execute(&cfg)?;
    let bad = failed_assertions(&s);
    if !bad.is_empty() {
        return Err(bad.join("; "));
    }
    // the uniformization oracle against a Padé matrix exponential
    let k = build_kernel(&cfg.graph).map_err(|e| e.to_string())?;
    let kbar = perturb(&k, &Perturbation::single(1, 2, 0.4)).map_err(|e| e.to_string())?;
    let chain = build_exact(&kbar).map_err(|e| e.to_string())?;
    let q = generator(&kbar);
    let mu = ProductMeasure::bernoulli(4, 0.5).map_err(|e| e.to_string())?;
    let p0 = mu.state_probs().ok_or("no state probs")?;
    let mut worst = 0.0f64;
    for t in [0.5, 2.0, 10.0] {
        let ours = exact_transient(&chain, &p0, t).map_err(|e| e.to_string())?;
        let reference = DVector::from_vec(p0.clone()).transpose() * (&q * t).exp();
        worst = worst.max(ours.iter().zip(reference.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    if worst > SOLVER_TOL {
        return Err(format!("uniformization differs from expm by {worst:e}"));
    }
    Ok(format!("{} engine checks within 3σ, oracle vs expm {worst:.1e}", s["assertions"].as_array().map_or(0, |a| a.len())))
}

/// `(ξ bits, η bits, probability)` over the listed sites.
type Rows = Vec<(Vec<u8>, Vec<u8>, f64)>;

/// Every pattern of `m` bits under Bernoulli(1/2) has mass `2^-m`.
fn patterns(m: usize) -> Vec<Vec<u8>> {
    (0..1usize << m).map(|i| (0..m).map(|j| ((i >> j) & 1) as u8).collect()).collect()
}

/// Single positive entry on `(u, v)`, sites ordered `(u, v)`.
fn positive_rows(s: f64, eps: f64) -> Rows {
    patterns(2)
        .into_iter()
        .flat_map(|eta| {
            let m = 0.25;
            if eta == [1, 0] {
                vec![(vec![1, 0], eta.clone(), m * (1.0 - s * eps)), (vec![0, 1], eta, m * s * eps)]
            } else {
                vec![(eta.clone(), eta, m)]
            }
        })
        .collect()
}

/// Single negative entry on `(u, v)`, sites ordered `(u, v)`. `D` is still
/// `{η(u)=1, η(v)=0}`; the discrepancy sits on `{η(u)=0, η(v)=1}`. Both have
/// mass 1/4.
fn negative_rows(s: f64, eps: f64) -> Rows {
    let d = 0.25;
    vec![
        (vec![0, 0], vec![0, 0], 0.25),
        (vec![1, 0], vec![1, 0], d),
        (vec![0, 1], vec![0, 1], 0.25 - d * s * eps.abs()),
        (vec![1, 0], vec![0, 1], d * s * eps.abs()),
        (vec![1, 1], vec![1, 1], 0.25),
    ]
}

/// Entries `(w, y, ε1)` and `(w, z, ε2)`, sites ordered `(w, y, z)`.
fn superposition_rows(s: f64, e1: f64, e2: f64) -> Rows {
    let m = 0.125;
    patterns(3)
        .into_iter()
        .flat_map(|eta| match eta.as_slice() {
            [1, 0, 0] => vec![
                (eta.clone(), eta.clone(), m * (1.0 - s * (e1 + e2))),
                (vec![0, 1, 0], eta.clone(), m * s * e1),
                (vec![0, 0, 1], eta, m * s * e2),
            ],
            [1, 0, 1] => vec![(eta.clone(), eta.clone(), m * (1.0 - s * e1)), (vec![0, 1, 1], eta, m * s * e1)],
            [1, 1, 0] => vec![(eta.clone(), eta.clone(), m * (1.0 - s * e2)), (vec![0, 1, 1], eta, m * s * e2)],
            _ => vec![(eta.clone(), eta, m)],
        })
        .collect()
}

/// Compare a run's empirical table with `expected`. `order[i]` is the
/// position in the expected rows of the run's i-th (sorted) site.
fn compare_table(file: &str, expected: &Rows, order: &[usize]) -> Result<usize, String> {
    let s = summary(file)?;
    let n = s["replicas"].as_f64().ok_or("missing replicas")?;
    let rows = s["results"]["rows"].as_array().ok_or("missing rows")?;
    let bits = |v: &Value| -> Vec<u8> {
        let raw: Vec<u8> = v.as_array().into_iter().flatten().map(|b| b.as_u64().unwrap_or(9) as u8).collect();
        let mut out = vec![0; raw.len()];
        for (i, &b) in raw.iter().enumerate() {
            out[order[i]] = b;
        }
        out
    };
    let mut matched = 0;
    for (xi, eta, p) in expected.iter().filter(|r| r.2 > 0.0) {
        let row = rows
            .iter()
            .find(|r| bits(&r["xi"]) == *xi && bits(&r["eta"]) == *eta)
            .ok_or_else(|| format!("{file}: no row xi={xi:?} eta={eta:?}"))?;
        let listed = row["probability"].as_f64().unwrap_or(f64::NAN);
        let freq = row["frequency"].as_f64().unwrap_or(f64::NAN);
        if (listed - p).abs() > EXACT_TOL {
            return Err(format!("{file}: row xi={xi:?} eta={eta:?} lists {listed}, formula gives {p}"));
        }
        let se = (p * (1.0 - p) / n).sqrt();
        if (freq - p).abs() > SIGMA * se {
            return Err(format!("{file}: row xi={xi:?} eta={eta:?} frequency {freq} vs {p} ± {se:.2e}"));
        }
        matched += 1;
    }
    let stray = failed_assertions(&s);
    if !stray.is_empty() {
        return Err(format!("{file}: {}", stray.join("; ")));
    }
    Ok(matched)
}

fn criterion_4() -> Result<String, String> {
    let a = compare_table("c04_table_positive.toml", &positive_rows(0.1, 0.4), &[0, 1])?;
    let b = compare_table("c04_table_negative.toml", &negative_rows(0.1, -0.3), &[0, 1])?;
    // run sites sorted as (y=1, w=2, z=3)
    let c = compare_table("c04_table_two_entries.toml", &superposition_rows(0.1, 0.4, 0.3), &[1, 0, 2])?;
    Ok(format!("{a} + {b} + {c} rows match the formulas and the 10^6-sample frequencies"))
}

fn criterion_9() -> Result<String, String> {
    let one = summary("c09_potential_1d.toml")?;
    let two = summary("c09_potential_2d.toml")?;
    for s in [&one, &two] {
        let bad = failed_assertions(s);
        if !bad.is_empty() {
            return Err(bad.join("; "));
        }
    }
    let values = |s: &Value| -> Vec<f64> {
        s["results"]["scan"]["rows"].as_array().into_iter().flatten().filter_map(|r| r["value"].as_f64()).collect()
    };
    let (v1, v2) = (values(&one), values(&two));
    let (last1, first2, last2) = (v1[v1.len() - 1], v2[0], v2[v2.len() - 1]);
    if (last1 - 1.0).abs() > 0.1 || last2 >= 0.5 * first2 {
        return Err(format!("Z^1 last {last1:.4}, Z^2 {first2:.4} -> {last2:.4}"));
    }
    Ok(format!("Z^1 increment {last1:.4} at the largest radius, Z^2 {first2:.4} -> {last2:.4}"))
}

fn criterion_11() -> Result<String, String> {
    let mut notes = Vec::new();
    for f in ["c02_duality_path.toml", "c03_oracle.toml", "c10_hitting_single.toml"] {
        let mut cfg = config(f);
        let mut bytes = Vec::new();
        for threads in [Some(1), Some(3), None, Some(1)] {
            cfg.threads = threads;
            bytes.push(execute(&cfg)?.1);
        }
        if bytes.iter().any(|b| b != &bytes[0]) {
            return Err(format!("{f}: summary bytes differ across runs"));
        }
        notes.push(format!("{f} ({} bytes)", bytes[0].len()));
    }
    Ok(format!("4 runs each at 1, 3, default and 1 threads identical: {}", notes.join(", ")))
}

type Check = Box<dyn Fn() -> Result<String, String>>;

fn main() {
    let criteria: Vec<(u32, &str, Check)> = vec![
        (1, "exact nu^c stationarity", Box::new(criterion_1)),
        (2, "pathwise duality", Box::new(criterion_2)),
        (3, "oracle equivalence", Box::new(criterion_3)),
        (4, "infinitesimal coupling tables", Box::new(criterion_4)),
        (5, "derivative identity", Box::new(|| all_passed(&["c05_derivative.toml"]))),
        (6, "first-order slope", Box::new(|| all_passed(&["c06_slope.toml"]))),
        (7, "discrepancy Green's function contrast", Box::new(|| all_passed(&["c07_green_3d.toml", "c07_green_1d.toml"]))),
        (8, "Cesàro trend in Z^3", Box::new(|| all_passed(&["c08_cesaro.toml"]))),
        (9, "potential-kernel hypothesis", Box::new(criterion_9)),
        (10, "dual hitting trend", Box::new(|| all_passed(&["c10_hitting.toml", "c10_hitting_single.toml"]))),
        (11, "reproducibility", Box::new(criterion_11)),
    ];
    let mut failures = 0;
    for (n, name, check) in &criteria {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
