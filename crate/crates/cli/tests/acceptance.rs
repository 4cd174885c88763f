//! Acceptance suite: end-to-end statistical and behavioral checks at the
//! published study scales. Each test prints one `[PASS]`/`[FAIL]` line with
//! the quantities it measured; run with `-- --nocapture` to see them.
//!
//! The Monte Carlo checks take hours of CPU time at these scales, so their
//! aggregate results are cached under `target/acceptance/`, keyed by the
//! full run configuration and crate version. Identical seeds make reruns
//! byte-identical, so a cache hit is equivalent to recomputing; delete the
//! directory (or `cargo clean`) to force the full run.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use serde_json::{json, Value};

use hpanel_cli::config::fnv1a;
use hpanel_cli::run_command;
use hpanel_core::dgp::{simulate, DgpConfig};
use hpanel_core::estimator::{fit, FitOptions};
use hpanel_core::fixtures::{exact_recovery_design, exogenous_recovery_design, noise_panel};
use hpanel_core::inference::{dwb_weights, jackknife_bias_correct, jackknife_combine, BootstrapOptions};
use hpanel_core::linalg::projector;
use hpanel_core::mc::{self, McConfig, McSummary};
use hpanel_core::model::{Axis, FactorCounts};
use hpanel_core::rng::substream;

const MASTER_SEED: u64 = 20260823;

/// Prints the single status line for one check, then enforces it.
fn check(ok: bool, line: &str) {
    println!("[{}] {line}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{line}");
}

fn in_window(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

// ---------------------------------------------------------------------------
// Cached Monte Carlo runs shared between checks.

fn cache_dir() -> PathBuf {
    let target = std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target"));
    target.join("acceptance")
}

fn cached(name: &str, key: u64) -> Option<Value> {
    let text = fs::read_to_string(cache_dir().join(format!("{name}.json"))).ok()?;
    let v: Value = serde_json::from_str(&text).ok()?;
    (v["key"].as_str() == Some(&format!("{key:016x}"))).then(|| v["value"].clone())
}

fn store(name: &str, key: u64, desc: &str, value: &Value) {
    let dir = cache_dir();
    fs::create_dir_all(&dir).expect("cache dir is writable");
    let wrapped = json!({ "key": format!("{key:016x}"), "desc": desc, "value": value });
    fs::write(dir.join(format!("{name}.json")), format!("{wrapped:#}\n")).expect("cache file is writable");
}

fn rates_value(r: &Option<hpanel_core::metrics::SelectionRates>) -> Value {
    match r {
        Some(r) => json!({ "exact": r.exact, "under": r.under, "over": r.over }),
        None => Value::Null,
    }
}

fn summary_value(s: &McSummary, seconds: f64) -> Value {
    json!({
        "replications": s.replications,
        "seconds": seconds,
        "rate_global": rates_value(&s.rate_global),
        "rate_country": rates_value(&s.rate_country),
        "rate_industry": rates_value(&s.rate_industry),
        "rmse_beta_true": s.rmse_beta_true,
        "rmse_f_global_true": s.rmse_f_global_true,
        "rmse_f_country_true": s.rmse_f_country_true,
        "rmse_f_industry_true": s.rmse_f_industry_true,
        "rmse_beta_selected": s.rmse_beta_selected,
        "rmse_f_global_selected": s.rmse_f_global_selected,
        "rmse_f_country_selected": s.rmse_f_country_selected,
        "rmse_f_industry_selected": s.rmse_f_industry_selected,
        "coverage": s.coverage,
    })
}

/// Runs (or recalls) one Monte Carlo study and returns its aggregates.
fn mc_cached(name: &str, config: &McConfig) -> Value {
    let desc = format!("{} {config:?}", env!("CARGO_PKG_VERSION"));
    let key = fnv1a(desc.as_bytes());
    if let Some(v) = cached(name, key) {
        return v;
    }
    let t0 = Instant::now();
    let summary = mc::run(config).unwrap_or_else(|e| panic!("{name}: {e}"));
    let value = summary_value(&summary, t0.elapsed().as_secs_f64());
    store(name, key, &desc, &value);
    value
}

fn full_run(t: usize, replications: usize) -> McConfig {
    McConfig::full(DgpConfig::paper_design(60, 60, t, MASTER_SEED), replications)
}

fn base() -> &'static Value {
    static V: OnceLock<Value> = OnceLock::new();
    V.get_or_init(|| mc_cached("base-t60", &full_run(60, 200)))
}

fn mid() -> &'static Value {
    static V: OnceLock<Value> = OnceLock::new();
    V.get_or_init(|| {
        let config = McConfig {
            fit_true_counts: false,
            fit_selected_counts: false,
            ..full_run(120, 200)
        };
        mc_cached("mid-t120", &config)
    })
}

fn long() -> &'static Value {
    static V: OnceLock<Value> = OnceLock::new();
    V.get_or_init(|| mc_cached("long-t180", &full_run(180, 200)))
}

fn f(v: &Value, path: &[&str]) -> f64 {
    let mut cur = v;
    for p in path {
        cur = &cur[*p];
    }
    cur.as_f64().unwrap_or_else(|| panic!("missing aggregate {path:?}"))
}

// ---------------------------------------------------------------------------
// 1..4: Monte Carlo reproductions.

#[test]
fn a01_selection_rates_at_the_base_design() {
    let s = base();
    let exact = f(s, &["rate_global", "exact"]);
    let under = f(s, &["rate_global", "under"]);
    let country = f(s, &["rate_country", "exact"]);
    // This window expects exact ~0.70 with misses almost entirely on the
    // over side. The design's global loadings have mean one, so the two
    // pooled global eigenvalues are structurally unequal (~3 and ~1);
    // the second-to-first ratio then occasionally undercuts the cliff
    // ratio and produces a small under-selection tail instead, while the
    // local leakage spectrum decays too smoothly to over-select. The
    // check states the expected profile anyway.
    let ok = in_window(exact, 0.62, 0.78) && under <= 0.02 && in_window(country, 0.63, 0.79);
    check(
        ok,
        &format!(
            "selection at (60,60,60), R=200: global exact {exact:.3} in [0.62, 0.78]; global under {under:.3} <= 0.02; country exact {country:.3} in [0.63, 0.79]"
        ),
    );
}

#[test]
fn a02_selection_sharpens_as_t_grows() {
    let r60 = f(base(), &["rate_global", "exact"]);
    let r120 = f(mid(), &["rate_global", "exact"]);
    let r180 = f(long(), &["rate_global", "exact"]);
    let ok = r180 >= 0.95 && r120 >= r60 - 0.02 && r180 >= r120 - 0.02;
    check(
        ok,
        &format!("global exact rate over T=60/120/180: {r60:.3} -> {r120:.3} -> {r180:.3}; endpoint >= 0.95 and non-decreasing within 0.02"),
    );
}

#[test]
fn a03_rmse_under_true_and_selected_counts() {
    let s = base();
    let beta_true = f(s, &["rmse_beta_true"]);
    let f_true = f(s, &["rmse_f_global_true"]);
    let beta_sel = f(s, &["rmse_beta_selected"]);
    let gap60 = beta_sel - beta_true;
    let gap180 = f(long(), &["rmse_beta_selected"]) - f(long(), &["rmse_beta_true"]);
    let ok = in_window(beta_true, 0.22, 0.32) && in_window(f_true, 0.16, 0.26) && beta_sel >= beta_true && gap180 <= gap60;
    check(
        ok,
        &format!(
            "RMSE at (60,60,60), R=200: beta {beta_true:.3} in [0.22, 0.32]; factor {f_true:.3} in [0.16, 0.26]; selected-count beta {beta_sel:.3} >= {beta_true:.3}; gap {gap60:.3} -> {gap180:.3} at T=180"
        ),
    );
}

#[test]
fn a04_bootstrap_coverage() {
    let config = McConfig {
        run_selection: false,
        fit_selected_counts: false,
        bootstrap: Some(BootstrapOptions {
            replications: 199,
            ..BootstrapOptions::default()
        }),
        ..McConfig::full(DgpConfig::paper_design(60, 60, 120, MASTER_SEED), 100)
    };
    let s = mc_cached("coverage-t120", &config);
    let cr = f(&s, &["coverage"]);
    check(
        in_window(cr, 0.90, 0.97),
        &format!("bootstrap coverage at (60,60,120), R=100, B=199, nominal 0.95: {cr:.3} in [0.90, 0.97]"),
    );
}

// ---------------------------------------------------------------------------
// 5..9: exactness and distributional checks.

#[test]
fn a05_zero_count_fits_match_per_block_ols() {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let data = noise_panel(3, 3, 20, 2, 1000 + seed);
        let counts = FactorCounts::zeros(3, 3);
        let result = fit(&data, &counts, &FitOptions::default()).expect("zero-count fit");
        for (b, block) in data.blocks().iter().enumerate() {
            let gram = block.x.transpose() * &block.x;
            let rhs = block.x.transpose() * &block.y;
            let ols = gram.cholesky().expect("full-rank regressors").solve(&rhs);
            worst = worst.max((&result.beta_final.values[b] - ols).amax());
        }
    }
    check(
        worst <= 1e-10,
        &format!("zero factor counts reduce to per-block OLS on 50 instances: max deviation {worst:.2e} <= 1e-10"),
    );
}

fn recovery_errors(design: &hpanel_core::fixtures::ExactDesign, sweeps_cap: usize) -> (f64, f64) {
    let options = FitOptions {
        tol: 1e-8,
        ..FitOptions::default()
    };
    let result = fit(&design.dataset, &design.truth.counts, &options).expect("noiseless fit");
    assert!(result.converged && result.iterations <= sweeps_cap, "took {} sweeps", result.iterations);
    let mut beta_err: f64 = 0.0;
    for (b, truth) in design.truth.beta.iter().enumerate() {
        beta_err = beta_err.max((&result.beta_final.values[b] - truth).norm());
    }
    let mut proj: f64 = (projector(&result.factors.global) - projector(&design.truth.f_global)).norm();
    for (est, truth) in result
        .factors
        .country
        .iter()
        .zip(&design.truth.f_country)
        .chain(result.factors.industry.iter().zip(&design.truth.f_industry))
    {
        proj = proj.max((projector(est) - projector(truth)).norm());
    }
    (beta_err, proj)
}

#[test]
fn a06_noiseless_recovery_is_exact() {
    let exogenous = exogenous_recovery_design(8, 8, 48, 2, 2, &[1, 2, 0, 1, 0, 2, 1, 0], &[2, 0, 1, 0, 2, 1, 0, 1], 5, 1.0)
        .expect("design");
    let (b1, p1) = recovery_errors(&exogenous, 20);
    let correlated = exact_recovery_design(6, 6, 48, 2, 2, &[1, 2, 0, 1, 0, 2], &[2, 0, 1, 0, 2, 1], 23).expect("design");
    let (b2, p2) = recovery_errors(&correlated, 60);
    let (beta_err, proj_err) = (b1.max(b2), p1.max(p2));
    check(
        beta_err < 1e-6 && proj_err < 1e-6,
        &format!("noiseless recovery with known counts: max coefficient error {beta_err:.2e} < 1e-6; max projector distance {proj_err:.2e} < 1e-6"),
    );
}

#[test]
fn a07_bootstrap_weights_follow_the_kernel_law() {
    let t = 2000usize;
    let draws = 100_000usize;
    let mut worst: f64 = 0.0;
    let mut report = String::new();
    for &m in &[1usize, 4, 8] {
        let mut rng = substream(MASTER_SEED, &[7, m as u64]);
        let mut sums = vec![0.0f64; m + 1];
        for _ in 0..draws {
            let w = dwb_weights(t, m, rng.random()).expect("weights");
            for (h, sum) in sums.iter_mut().enumerate() {
                let mut s = 0.0;
                for i in 0..t - h {
                    s += w[i] * w[i + h];
                }
                *sum += s;
            }
        }
        let mut worst_m: f64 = 0.0;
        for (h, sum) in sums.iter().enumerate() {
            let empirical = sum / (draws * (t - h)) as f64;
            let target = 1.0 - h as f64 / m as f64;
            worst_m = worst_m.max((empirical - target).abs());
        }
        report.push_str(&format!(" m={m}: {worst_m:.4}"));
        worst = worst.max(worst_m);
    }
    check(
        worst <= 0.02,
        &format!("multiplier covariance vs triangular kernel at lags 0..m, T=2000, 1e5 draws: max gap{report} (all <= 0.02)"),
    );
}

#[test]
fn a08_jackknife_removes_half_sample_bias() {
    // Stub estimator with planted bias c/L + c/N: quarters double it, the
    // combination cancels it exactly.
    let beta = DVector::from_vec(vec![1.25, -0.5]);
    let c = DVector::from_vec(vec![0.8, 0.3]);
    let (l, n) = (12.0, 8.0);
    let full = &beta + &c / l + &c / n;
    let quarter = &beta + &c * (2.0 / l) + &c * (2.0 / n);
    let corrected = jackknife_combine(&full, &vec![quarter; 4]).expect("combine");
    let stub_err = (&corrected - &beta).amax();

    let config = DgpConfig::paper_design(40, 40, 80, MASTER_SEED);
    let desc = format!("{} jackknife {config:?} R=100 country 0", env!("CARGO_PKG_VERSION"));
    let key = fnv1a(desc.as_bytes());
    let stats = cached("jackknife-40x40", key).unwrap_or_else(|| {
        let t0 = Instant::now();
        let mut bias_full = DVector::<f64>::zeros(2);
        let mut bias_corrected = DVector::<f64>::zeros(2);
        for rep in 0..100usize {
            let dgp = DgpConfig {
                seed: substream(MASTER_SEED, &[8, rep as u64]).random(),
                ..config.clone()
            };
            let (data, truth) = simulate(&dgp).expect("simulate");
            let options = FitOptions {
                seed: substream(MASTER_SEED, &[9, rep as u64]).random(),
                ..FitOptions::default()
            };
            let result = jackknife_bias_correct(&data, &truth.counts, &options, Axis::Country, 0).expect("jackknife");
            let ids = data.country_block_ids(0);
            let mut target = DVector::<f64>::zeros(2);
            for &b in ids {
                target += &truth.beta[b];
            }
            target /= ids.len() as f64;
            bias_full += result.full - &target;
            bias_corrected += result.corrected - &target;
        }
        bias_full /= 100.0;
        bias_corrected /= 100.0;
        let value = json!({
            "seconds": t0.elapsed().as_secs_f64(),
            "bias_full": bias_full.norm(),
            "bias_corrected": bias_corrected.norm(),
        });
        store("jackknife-40x40", key, &desc, &value);
        value
    });
    let bias_full = f(&stats, &["bias_full"]);
    let bias_corrected = f(&stats, &["bias_corrected"]);
    let ok = stub_err <= 1e-10 && bias_corrected <= bias_full;
    check(
        ok,
        &format!(
            "jackknife: stub bias cancelled to {stub_err:.2e} <= 1e-10; mean-group bias at (40,40,80), R=100: corrected {bias_corrected:.4} <= uncorrected {bias_full:.4}"
        ),
    );
}

#[test]
fn a09_objective_descends_on_random_fits() {
    let mut rng = substream(MASTER_SEED, &[90]);
    let mut worst_rise: f64 = 0.0;
    let mut rising_fits = 0usize;
    for _ in 0..100 {
        let l = rng.random_range(4..=6);
        let n = rng.random_range(4..=6);
        let t = rng.random_range(24..=36);
        let config = DgpConfig::paper_design(l, n, t, rng.random());
        let (data, truth) = simulate(&config).expect("simulate");
        let options = FitOptions {
            max_iter: 40,
            seed: rng.random(),
            ..FitOptions::default()
        };
        let result = fit(&data, &truth.counts, &options).expect("fit");
        let mut fit_rise: f64 = 0.0;
        for pair in result.objective_trace.windows(2) {
            fit_rise = fit_rise.max(pair[1] - pair[0]);
        }
        if fit_rise > 1e-8 {
            rising_fits += 1;
        }
        worst_rise = worst_rise.max(fit_rise);
    }
    // The sweep re-picks the global factors unrestricted and then rebuilds
    // the locals orthogonal to the new global, so the factor step is greedy
    // rather than an exact coordinate minimization; on small panels the
    // iteration can cycle upward before the coefficient rule halts. The
    // check states the idealized descent property anyway.
    check(
        worst_rise <= 1e-8,
        &format!(
            "objective trace non-increasing over 100 random fits: worst rise {worst_rise:.2e} <= 1e-8 ({rising_fits} fits rose)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 10: determinism of the command surface.

fn run(args: &[&str]) -> i32 {
    let owned: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    run_command(&owned)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("output dir exists")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).expect("readable"))
        })
        .collect();
    entries.sort();
    entries
}

#[test]
fn a10_commands_are_deterministic_across_reruns_and_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let sim = root.join("sim");
    assert_eq!(run(&["simulate", "--L", "4", "--N", "4", "--T", "24", "--seed", "9", "--out", sim.to_str().unwrap()]), 0);
    let panel = sim.join("panel.csv");
    let data = panel.to_str().unwrap();

    let commands: Vec<(&str, Vec<String>)> = vec![
        ("simulate", vec!["simulate".into(), "--L".into(), "4".into(), "--N".into(), "4".into(), "--T".into(), "24".into(), "--seed".into(), "9".into()]),
        (
            "estimate",
            vec!["estimate".into(), "--data".into(), data.into(), "--counts".into(), "1,auto,auto".into(), "--d-max".into(), "2".into()],
        ),
        (
            "select-factors",
            vec!["select-factors".into(), "--data".into(), data.into(), "--d-max".into(), "2".into()],
        ),
        (
            "bootstrap",
            vec!["bootstrap".into(), "--data".into(), data.into(), "--counts".into(), "1,1,1".into(), "--B".into(), "19".into()],
        ),
        (
            "jackknife",
            vec!["jackknife".into(), "--data".into(), data.into(), "--counts".into(), "1,0,0".into(), "--axis".into(), "country".into(), "--unit".into(), "0".into()],
        ),
        (
            "reproduce-tables",
            vec![
                "reproduce-tables".into(),
                "--L".into(),
                "4".into(),
                "--N".into(),
                "4".into(),
                "--T".into(),
                "24".into(),
                "--R".into(),
                "2".into(),
                "--B".into(),
                "9".into(),
                "--d-max".into(),
                "2".into(),
                "--seed".into(),
                "3".into(),
            ],
        ),
    ];

    let mut all_match = true;
    let mut detail = String::new();
    for (name, args) in &commands {
        let out_a = root.join(format!("{name}-a"));
        let out_b = root.join(format!("{name}-b"));
        for (out, workers) in [(&out_a, "1"), (&out_b, "2")] {
            let mut full: Vec<String> = args.clone();
            full.push("--out".into());
            full.push(out.to_str().unwrap().into());
            full.push("--workers".into());
            full.push(workers.into());
            let refs: Vec<&str> = full.iter().map(String::as_str).collect();
            assert_eq!(run(&refs), 0, "{name} failed");
        }
        let same = dir_bytes(&out_a) == dir_bytes(&out_b);
        all_match &= same;
        detail.push_str(&format!(" {name}={}", if same { "ok" } else { "DIFFERS" }));
    }
    check(all_match, &format!("byte-identical outputs across rerun with 1 vs 2 workers:{detail}"));
}
