//! The six workflows behind the command-line interface.
//!
//! Every command resolves its settings, hashes the computation-relevant
//! configuration for provenance, runs the core routines inside an optional
//! fixed-size worker pool, and writes its outputs into one directory.

use std::path::{Path, PathBuf};

use hpanel_core::dgp::DgpConfig;
use hpanel_core::estimator::fit;
use hpanel_core::inference::{bootstrap_beta, jackknife_bias_correct, BootstrapOptions, JackknifeResult};
use hpanel_core::mc::{self, McConfig, McSummary};
use hpanel_core::model::{Axis, FactorCounts, GroundTruth, PanelDataset};
use hpanel_core::select::{select_all, select_all_with, CountOverrides, Selection};
use nalgebra::{DMatrix, DVector};

use crate::config::{config_hash, fnv1a, Settings};
use crate::error::{CliError, CliResult};
use crate::io::{self, field, num, LabelMaps, OutFile, Provenance};

fn ensure_out(settings: &Settings) -> CliResult<PathBuf> {
    let dir = settings.out_dir();
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

/// Runs `task` on a pool with the requested thread count; results never
/// depend on the count because all parallel maps preserve index order.
fn with_workers<R: Send>(workers: Option<usize>, task: impl FnOnce() -> R + Send) -> CliResult<R> {
    match workers {
        None => Ok(task()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| CliError::Flag {
                    flag: "--workers",
                    detail: e.to_string(),
                })?;
            Ok(pool.install(task))
        }
    }
}

fn data_hash(path: &Path) -> CliResult<u64> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(fnv1a(&bytes))
}

fn parse_counts(spec: &str) -> CliResult<[Option<usize>; 3]> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(CliError::Flag {
            flag: "--counts",
            detail: format!("expected `global,country,industry`, got `{spec}`"),
        });
    }
    let mut out = [None; 3];
    for (k, part) in parts.iter().enumerate() {
        if !part.eq_ignore_ascii_case("auto") {
            out[k] = Some(part.parse::<usize>().map_err(|_| CliError::Flag {
                flag: "--counts",
                detail: format!("`{part}` is neither a count nor `auto`"),
            })?);
        }
    }
    Ok(out)
}

/// Turns the counts specification into concrete counts, running selection
/// for any `auto` component.
fn resolve_counts(dataset: &PanelDataset, settings: &Settings) -> CliResult<(FactorCounts, Option<Selection>)> {
    let spec = match (&settings.counts, settings.auto_counts) {
        (Some(s), _) => parse_counts(s)?,
        (None, true) => [None, None, None],
        (None, false) => {
            return Err(CliError::Flag {
                flag: "--counts",
                detail: "pass --counts g,c,i (entries may be `auto`) or --auto-counts".into(),
            })
        }
    };
    if let [Some(g), Some(c), Some(ind)] = spec {
        let counts = FactorCounts::uniform(dataset.l(), dataset.n_units(), g, c, ind);
        return Ok((counts, None));
    }
    let overrides = CountOverrides {
        global: spec[0],
        country: spec[1],
        industry: spec[2],
    };
    let selection = select_all_with(dataset, &settings.selection_options(), &settings.fit_options(), &overrides)?;
    Ok((selection.counts.clone(), Some(selection)))
}

fn counts_spec_string(settings: &Settings) -> String {
    settings.counts.clone().unwrap_or_else(|| "auto,auto,auto".to_string())
}

fn counts_json(counts: &FactorCounts) -> serde_json::Value {
    serde_json::json!({
        "global": counts.global,
        "country": counts.country,
        "industry": counts.industry,
    })
}

fn write_counts_csv(path: &Path, counts: &FactorCounts, labels: &LabelMaps, prov: &Provenance) -> CliResult<()> {
    let mut out = OutFile::create(path, prov)?;
    out.line("axis,unit,count")?;
    out.line(&format!("global,,{}", counts.global))?;
    for (i, c) in counts.country.iter().enumerate() {
        out.line(&format!("country,{},{c}", field(&labels.country[i])))?;
    }
    for (j, c) in counts.industry.iter().enumerate() {
        out.line(&format!("industry,{},{c}", field(&labels.industry[j])))?;
    }
    out.finish()
}

fn write_beta_csv(
    path: &Path,
    dataset: &PanelDataset,
    values: &[DVector<f64>],
    labels: &LabelMaps,
    prov: &Provenance,
) -> CliResult<()> {
    let mut out = OutFile::create(path, prov)?;
    let mut header = String::from("i,j");
    for s in 1..=dataset.d() {
        header.push_str(&format!(",b{s}"));
    }
    out.line(&header)?;
    for (b, block) in dataset.blocks().iter().enumerate() {
        let mut row = format!("{},{}", field(&labels.country[block.i]), field(&labels.industry[block.j]));
        for c in 0..dataset.d() {
            row.push(',');
            row.push_str(&num(values[b][c]));
        }
        out.line(&row)?;
    }
    out.finish()
}

fn write_factor_block(out: &mut OutFile, scope: &str, unit: &str, m: &DMatrix<f64>, periods: &[i64]) -> CliResult<()> {
    for s in 0..m.ncols() {
        for r in 0..m.nrows() {
            out.line(&format!("{scope},{unit},{},{},{}", periods[r], s + 1, num(m[(r, s)])))?;
        }
    }
    Ok(())
}

fn write_factors_csv(
    path: &Path,
    global: &DMatrix<f64>,
    country: &[DMatrix<f64>],
    industry: &[DMatrix<f64>],
    labels: &LabelMaps,
    periods: &[i64],
    prov: &Provenance,
) -> CliResult<()> {
    let mut out = OutFile::create(path, prov)?;
    out.line("scope,unit,t,s,value")?;
    write_factor_block(&mut out, "global", "", global, periods)?;
    for (i, f) in country.iter().enumerate() {
        write_factor_block(&mut out, "country", &field(&labels.country[i]), f, periods)?;
    }
    for (j, f) in industry.iter().enumerate() {
        write_factor_block(&mut out, "industry", &field(&labels.industry[j]), f, periods)?;
    }
    out.finish()
}

fn write_spectra_csv(path: &Path, selection: &Selection, labels: &LabelMaps, prov: &Provenance) -> CliResult<()> {
    let mut out = OutFile::create(path, prov)?;
    out.line("axis,unit,s,eigenvalue")?;
    for (s, v) in selection.global_spectrum.iter().enumerate() {
        out.line(&format!("global,,{},{}", s + 1, num(*v)))?;
    }
    for (i, spectrum) in selection.country_spectra.iter().enumerate() {
        for (s, v) in spectrum.iter().enumerate() {
            out.line(&format!("country,{},{},{}", field(&labels.country[i]), s + 1, num(*v)))?;
        }
    }
    for (j, spectrum) in selection.industry_spectra.iter().enumerate() {
        for (s, v) in spectrum.iter().enumerate() {
            out.line(&format!("industry,{},{},{}", field(&labels.industry[j]), s + 1, num(*v)))?;
        }
    }
    out.finish()
}

pub fn simulate(settings: &Settings) -> CliResult<()> {
    let l = settings.require(settings.l, "--L")?;
    let n = settings.require(settings.n, "--N")?;
    let t = settings.require(settings.t, "--T")?;
    let d = settings.d.unwrap_or(2);
    let seed = settings.seed();
    let config = DgpConfig {
        d,
        ..DgpConfig::paper_design(l, n, t, seed)
    };
    config.validate()?;
    let hash = config_hash(
        "simulate",
        &[
            ("L", l.to_string()),
            ("N", n.to_string()),
            ("T", t.to_string()),
            ("d", d.to_string()),
            ("seed", seed.to_string()),
        ],
    );
    let prov = Provenance { seed, config_hash: hash };
    let (dataset, truth) = hpanel_core::dgp::simulate(&config)?;
    let dir = ensure_out(settings)?;
    let labels = LabelMaps::numeric(l, n);
    let periods: Vec<i64> = (0..t as i64).collect();
    io::write_panel_csv(&dir.join("panel.csv"), &dataset, &labels, &periods, &prov)?;
    write_beta_csv(&dir.join("truth_beta.csv"), &dataset, &truth.beta, &labels, &prov)?;
    write_counts_csv(&dir.join("truth_counts.csv"), &truth.counts, &labels, &prov)?;
    write_truth_factors(&dir.join("truth_factors.csv"), &truth, &labels, &periods, &prov)?;
    io::write_json(
        &dir.join("summary.json"),
        &serde_json::json!({
            "command": "simulate",
            "L": l, "N": n, "T": t, "d": d,
            "counts": counts_json(&truth.counts),
            "provenance": prov.json(),
        }),
    )?;
    println!("simulate: wrote L={l} N={n} T={t} d={d} panel to {}", dir.display());
    Ok(())
}

fn write_truth_factors(
    path: &Path,
    truth: &GroundTruth,
    labels: &LabelMaps,
    periods: &[i64],
    prov: &Provenance,
) -> CliResult<()> {
    write_factors_csv(path, &truth.f_global, &truth.f_country, &truth.f_industry, labels, periods, prov)
}

pub fn estimate(settings: &Settings) -> CliResult<()> {
    let data = settings.require_data()?;
    let loaded = io::load_panel_csv(data)?;
    let fit_options = settings.fit_options();
    let hash = config_hash(
        "estimate",
        &[
            ("data", format!("{:016x}", data_hash(data)?)),
            ("counts", counts_spec_string(settings)),
            ("d-max", settings.selection_options().d_max.to_string()),
            ("tol", format!("{:e}", fit_options.tol)),
            ("max-iter", fit_options.max_iter.to_string()),
            ("seed", settings.seed().to_string()),
        ],
    );
    let prov = Provenance {
        seed: settings.seed(),
        config_hash: hash,
    };
    let dataset = &loaded.dataset;
    let (counts, selection, result) = with_workers(settings.workers, || -> CliResult<_> {
        let (counts, selection) = resolve_counts(dataset, settings)?;
        let result = fit(dataset, &counts, &fit_options)?;
        Ok((counts, selection, result))
    })??;
    let dir = ensure_out(settings)?;
    io::write_labels_csv(&dir.join("labels.csv"), &loaded.labels, &prov)?;
    write_counts_csv(&dir.join("counts.csv"), &counts, &loaded.labels, &prov)?;
    write_beta_csv(&dir.join("beta.csv"), dataset, &result.beta_final.values, &loaded.labels, &prov)?;
    write_factors_csv(
        &dir.join("factors.csv"),
        &result.factors.global,
        &result.factors.country,
        &result.factors.industry,
        &loaded.labels,
        &loaded.periods,
        &prov,
    )?;
    io::write_json(
        &dir.join("fit.json"),
        &serde_json::json!({
            "command": "estimate",
            "converged": result.converged,
            "iterations": result.iterations,
            "rank_drop_events": result.rank_drop_events,
            "objective_trace": result.objective_trace,
            "counts": counts_json(&counts),
            "counts_selected": selection.is_some(),
            "provenance": prov.json(),
        }),
    )?;
    println!(
        "estimate: converged={} iterations={} outputs in {}",
        result.converged,
        result.iterations,
        dir.display()
    );
    Ok(())
}

pub fn select_factors(settings: &Settings) -> CliResult<()> {
    let data = settings.require_data()?;
    let loaded = io::load_panel_csv(data)?;
    let sel_options = settings.selection_options();
    let fit_options = settings.fit_options();
    let hash = config_hash(
        "select-factors",
        &[
            ("data", format!("{:016x}", data_hash(data)?)),
            ("d-max", sel_options.d_max.to_string()),
            ("tol", format!("{:e}", fit_options.tol)),
            ("max-iter", fit_options.max_iter.to_string()),
            ("seed", settings.seed().to_string()),
        ],
    );
    let prov = Provenance {
        seed: settings.seed(),
        config_hash: hash,
    };
    let dataset = &loaded.dataset;
    let selection = with_workers(settings.workers, || select_all(dataset, &sel_options, &fit_options))??;
    let dir = ensure_out(settings)?;
    io::write_labels_csv(&dir.join("labels.csv"), &loaded.labels, &prov)?;
    write_counts_csv(&dir.join("counts.csv"), &selection.counts, &loaded.labels, &prov)?;
    write_spectra_csv(&dir.join("spectra.csv"), &selection, &loaded.labels, &prov)?;
    io::write_json(
        &dir.join("selection.json"),
        &serde_json::json!({
            "command": "select-factors",
            "d_max": sel_options.d_max,
            "omega": selection.omega,
            "counts": counts_json(&selection.counts),
            "provenance": prov.json(),
        }),
    )?;
    println!(
        "select-factors: global={} outputs in {}",
        selection.counts.global,
        dir.display()
    );
    Ok(())
}

pub fn bootstrap(settings: &Settings) -> CliResult<()> {
    let data = settings.require_data()?;
    let loaded = io::load_panel_csv(data)?;
    let fit_options = settings.fit_options();
    let b_options = settings.bootstrap_options(BootstrapOptions::default().replications);
    let hash = config_hash(
        "bootstrap",
        &[
            ("data", format!("{:016x}", data_hash(data)?)),
            ("counts", counts_spec_string(settings)),
            ("d-max", settings.selection_options().d_max.to_string()),
            ("tol", format!("{:e}", fit_options.tol)),
            ("max-iter", fit_options.max_iter.to_string()),
            ("B", b_options.replications.to_string()),
            (
                "bandwidth",
                b_options.bandwidth.map_or_else(|| "auto".to_string(), |m| m.to_string()),
            ),
            ("alpha", format!("{:e}", b_options.alpha)),
            ("seed", settings.seed().to_string()),
        ],
    );
    let prov = Provenance {
        seed: settings.seed(),
        config_hash: hash,
    };
    let dataset = &loaded.dataset;
    let (counts, result, boot) = with_workers(settings.workers, || -> CliResult<_> {
        let (counts, _) = resolve_counts(dataset, settings)?;
        let result = fit(dataset, &counts, &fit_options)?;
        let boot = bootstrap_beta(dataset, &result, &b_options)?;
        Ok((counts, result, boot))
    })??;
    let dir = ensure_out(settings)?;
    io::write_labels_csv(&dir.join("labels.csv"), &loaded.labels, &prov)?;
    write_counts_csv(&dir.join("counts.csv"), &counts, &loaded.labels, &prov)?;
    let mut out = OutFile::create(&dir.join("ci.csv"), &prov)?;
    out.line("i,j,coef,estimate,lower,upper")?;
    for (b, block) in dataset.blocks().iter().enumerate() {
        for c in 0..dataset.d() {
            out.line(&format!(
                "{},{},b{},{},{},{}",
                field(&loaded.labels.country[block.i]),
                field(&loaded.labels.industry[block.j]),
                c + 1,
                num(result.beta_final.values[b][c]),
                num(boot.ci_lower[b][c]),
                num(boot.ci_upper[b][c]),
            ))?;
        }
    }
    out.finish()?;
    io::write_json(
        &dir.join("bootstrap.json"),
        &serde_json::json!({
            "command": "bootstrap",
            "replications": b_options.replications,
            "bandwidth": boot.bandwidth,
            "alpha": boot.alpha,
            "counts": counts_json(&counts),
            "provenance": prov.json(),
        }),
    )?;
    println!(
        "bootstrap: B={} bandwidth={} outputs in {}",
        b_options.replications,
        boot.bandwidth,
        dir.display()
    );
    Ok(())
}

pub fn jackknife(settings: &Settings) -> CliResult<()> {
    let data = settings.require_data()?;
    let loaded = io::load_panel_csv(data)?;
    let fit_options = settings.fit_options();
    let axis_name = settings.axis.as_deref().unwrap_or("country");
    let axis = match axis_name {
        "country" => Axis::Country,
        "industry" => Axis::Industry,
        other => {
            return Err(CliError::Flag {
                flag: "--axis",
                detail: format!("expected `country` or `industry`, got `{other}`"),
            })
        }
    };
    let dataset = &loaded.dataset;
    let unit_total = match axis {
        Axis::Country => dataset.l(),
        Axis::Industry => dataset.n_units(),
    };
    let targets: Vec<usize> = match settings.unit {
        Some(u) => vec![u],
        None => (0..unit_total).collect(),
    };
    let hash = config_hash(
        "jackknife",
        &[
            ("data", format!("{:016x}", data_hash(data)?)),
            ("counts", counts_spec_string(settings)),
            ("d-max", settings.selection_options().d_max.to_string()),
            ("tol", format!("{:e}", fit_options.tol)),
            ("max-iter", fit_options.max_iter.to_string()),
            ("axis", axis_name.to_string()),
            (
                "unit",
                settings.unit.map_or_else(|| "all".to_string(), |u| u.to_string()),
            ),
            ("seed", settings.seed().to_string()),
        ],
    );
    let prov = Provenance {
        seed: settings.seed(),
        config_hash: hash,
    };
    let (counts, results) = with_workers(settings.workers, || -> CliResult<(FactorCounts, Vec<JackknifeResult>)> {
        let (counts, _) = resolve_counts(dataset, settings)?;
        let mut results = Vec::with_capacity(targets.len());
        for &u in &targets {
            results.push(jackknife_bias_correct(dataset, &counts, &fit_options, axis, u)?);
        }
        Ok((counts, results))
    })??;
    let dir = ensure_out(settings)?;
    io::write_labels_csv(&dir.join("labels.csv"), &loaded.labels, &prov)?;
    write_counts_csv(&dir.join("counts.csv"), &counts, &loaded.labels, &prov)?;
    let unit_labels = match axis {
        Axis::Country => &loaded.labels.country,
        Axis::Industry => &loaded.labels.industry,
    };
    let mut out = OutFile::create(&dir.join("jackknife.csv"), &prov)?;
    out.line("axis,unit,coef,full,corrected")?;
    for (&u, res) in targets.iter().zip(&results) {
        for c in 0..dataset.d() {
            out.line(&format!(
                "{axis_name},{},b{},{},{}",
                field(&unit_labels[u]),
                c + 1,
                num(res.full[c]),
                num(res.corrected[c]),
            ))?;
        }
    }
    out.finish()?;
    io::write_json(
        &dir.join("jackknife.json"),
        &serde_json::json!({
            "command": "jackknife",
            "axis": axis_name,
            "units": targets,
            "counts": counts_json(&counts),
            "provenance": prov.json(),
        }),
    )?;
    println!(
        "jackknife: corrected {} unit(s) along {axis_name}; outputs in {}",
        targets.len(),
        dir.display()
    );
    Ok(())
}

fn rate_row(out: &mut OutFile, axis: &str, rates: &Option<hpanel_core::metrics::SelectionRates>) -> CliResult<()> {
    if let Some(r) = rates {
        out.line(&format!("{axis},{},{},{}", num(r.exact), num(r.under), num(r.over)))?;
    }
    Ok(())
}

fn table2_row(out: &mut OutFile, quantity: &str, counts: &str, value: Option<f64>) -> CliResult<()> {
    if let Some(v) = value {
        out.line(&format!("{quantity},{counts},{}", num(v)))?;
    }
    Ok(())
}

fn fmt3(value: Option<f64>) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn human_tables(summary: &McSummary, l: usize, n: usize, t: usize, b: usize, alpha: f64) -> String {
    let mut text = String::new();
    text.push_str(&format!(
        "Selection rates (L={l}, N={n}, T={t}, R={})\n{:<10}{:>8}{:>8}{:>8}\n",
        summary.replications, "axis", "exact", "under", "over"
    ));
    for (axis, rates) in [
        ("global", &summary.rate_global),
        ("country", &summary.rate_country),
        ("industry", &summary.rate_industry),
    ] {
        if let Some(r) = rates {
            text.push_str(&format!(
                "{axis:<10}{:>8.3}{:>8.3}{:>8.3}\n",
                r.exact, r.under, r.over
            ));
        }
    }
    text.push_str(&format!(
        "\nEstimation error\n{:<16}{:>10}{:>10}\n",
        "quantity", "true", "selected"
    ));
    for (name, t_val, s_val) in [
        ("rmse_beta", summary.rmse_beta_true, summary.rmse_beta_selected),
        ("rmse_f_global", summary.rmse_f_global_true, summary.rmse_f_global_selected),
        ("rmse_f_country", summary.rmse_f_country_true, summary.rmse_f_country_selected),
        ("rmse_f_industry", summary.rmse_f_industry_true, summary.rmse_f_industry_selected),
    ] {
        text.push_str(&format!("{name:<16}{:>10}{:>10}\n", fmt3(t_val), fmt3(s_val)));
    }
    text.push_str(&format!(
        "\nCoverage (nominal {:.3}, B={b}): {}\n",
        1.0 - alpha,
        fmt3(summary.coverage)
    ));
    text
}

pub fn reproduce_tables(settings: &Settings) -> CliResult<()> {
    let l = settings.require(settings.l, "--L")?;
    let n = settings.require(settings.n, "--N")?;
    let t = settings.require(settings.t, "--T")?;
    let r = settings.require(settings.r, "--R")?;
    let d = settings.d.unwrap_or(2);
    let seed = settings.seed();
    let dgp = DgpConfig {
        d,
        ..DgpConfig::paper_design(l, n, t, seed)
    };
    let mut config = McConfig::full(dgp, r);
    config.selection = settings.selection_options();
    config.fit = settings.fit_options();
    // Coverage tables are the desk-scale harness, so the bootstrap default
    // is the smaller B = 199; --B overrides it.
    config.bootstrap = Some(settings.bootstrap_options(199));
    config.validate()?;
    let b_options = config.bootstrap.clone().expect("bootstrap configured above");
    let hash = config_hash(
        "reproduce-tables",
        &[
            ("L", l.to_string()),
            ("N", n.to_string()),
            ("T", t.to_string()),
            ("d", d.to_string()),
            ("R", r.to_string()),
            ("d-max", config.selection.d_max.to_string()),
            ("tol", format!("{:e}", config.fit.tol)),
            ("max-iter", config.fit.max_iter.to_string()),
            ("B", b_options.replications.to_string()),
            (
                "bandwidth",
                b_options.bandwidth.map_or_else(|| "auto".to_string(), |m| m.to_string()),
            ),
            ("alpha", format!("{:e}", b_options.alpha)),
            ("seed", seed.to_string()),
        ],
    );
    let prov = Provenance { seed, config_hash: hash };
    let summary = with_workers(settings.workers, || mc::run(&config))??;
    let dir = ensure_out(settings)?;

    let mut t1 = OutFile::create(&dir.join("table1.csv"), &prov)?;
    t1.line("axis,rate_exact,rate_under,rate_over")?;
    rate_row(&mut t1, "global", &summary.rate_global)?;
    rate_row(&mut t1, "country", &summary.rate_country)?;
    rate_row(&mut t1, "industry", &summary.rate_industry)?;
    t1.finish()?;

    let mut t2 = OutFile::create(&dir.join("table2.csv"), &prov)?;
    t2.line("quantity,counts,value")?;
    table2_row(&mut t2, "rmse_beta", "true", summary.rmse_beta_true)?;
    table2_row(&mut t2, "rmse_f_global", "true", summary.rmse_f_global_true)?;
    table2_row(&mut t2, "rmse_f_country", "true", summary.rmse_f_country_true)?;
    table2_row(&mut t2, "rmse_f_industry", "true", summary.rmse_f_industry_true)?;
    table2_row(&mut t2, "rmse_beta", "selected", summary.rmse_beta_selected)?;
    table2_row(&mut t2, "rmse_f_global", "selected", summary.rmse_f_global_selected)?;
    table2_row(&mut t2, "rmse_f_country", "selected", summary.rmse_f_country_selected)?;
    table2_row(&mut t2, "rmse_f_industry", "selected", summary.rmse_f_industry_selected)?;
    t2.finish()?;

    let mut t3 = OutFile::create(&dir.join("table3.csv"), &prov)?;
    t3.line("nominal,coverage")?;
    if let Some(cov) = summary.coverage {
        t3.line(&format!("{},{}", num(1.0 - b_options.alpha), num(cov)))?;
    }
    t3.finish()?;

    let text = human_tables(&summary, l, n, t, b_options.replications, b_options.alpha);
    let mut human = OutFile::create(&dir.join("tables.txt"), &prov)?;
    for line in text.lines() {
        human.line(line)?;
    }
    human.finish()?;

    let series = metric_series(&summary);
    io::write_json(
        &dir.join("metrics.json"),
        &serde_json::json!({
            "command": "reproduce-tables",
            "L": l, "N": n, "T": t, "d": d, "R": r,
            "B": b_options.replications,
            "alpha": b_options.alpha,
            "rates": {
                "global": rates_json(&summary.rate_global),
                "country": rates_json(&summary.rate_country),
                "industry": rates_json(&summary.rate_industry),
            },
            "rmse": {
                "beta_true": summary.rmse_beta_true,
                "f_global_true": summary.rmse_f_global_true,
                "f_country_true": summary.rmse_f_country_true,
                "f_industry_true": summary.rmse_f_industry_true,
                "beta_selected": summary.rmse_beta_selected,
                "f_global_selected": summary.rmse_f_global_selected,
                "f_country_selected": summary.rmse_f_country_selected,
                "f_industry_selected": summary.rmse_f_industry_selected,
            },
            "coverage": summary.coverage,
            "series": series,
            "provenance": prov.json(),
        }),
    )?;
    print!("{text}");
    println!("reproduce-tables: outputs in {}", dir.display());
    Ok(())
}

fn rates_json(rates: &Option<hpanel_core::metrics::SelectionRates>) -> serde_json::Value {
    match rates {
        Some(r) => serde_json::json!({ "exact": r.exact, "under": r.under, "over": r.over }),
        None => serde_json::Value::Null,
    }
}

/// Per-replication scalar series for external plotting.
fn metric_series(summary: &McSummary) -> serde_json::Value {
    let mut msq_beta_true = Vec::new();
    let mut msq_beta_selected = Vec::new();
    let mut global_true = Vec::new();
    let mut global_selected = Vec::new();
    let mut local_exact_fraction = Vec::new();
    let mut coverage_fraction = Vec::new();
    for rec in &summary.records {
        msq_beta_true.push(rec.msq_beta_true);
        msq_beta_selected.push(rec.msq_beta_selected);
        global_true.push(rec.true_counts.global);
        if let Some(sel) = &rec.selected_counts {
            global_selected.push(Some(sel.global));
            let total = sel.country.len() + sel.industry.len();
            let hits = sel
                .country
                .iter()
                .zip(&rec.true_counts.country)
                .chain(sel.industry.iter().zip(&rec.true_counts.industry))
                .filter(|(a, b)| a == b)
                .count();
            local_exact_fraction.push(Some(hits as f64 / total as f64));
        } else {
            global_selected.push(None);
            local_exact_fraction.push(None);
        }
        coverage_fraction.push(rec.coverage.map(|(hit, total)| hit as f64 / total as f64));
    }
    serde_json::json!({
        "msq_beta_true": msq_beta_true,
        "msq_beta_selected": msq_beta_selected,
        "global_count_true": global_true,
        "global_count_selected": global_selected,
        "local_exact_fraction": local_exact_fraction,
        "coverage_fraction": coverage_fraction,
    })
}
