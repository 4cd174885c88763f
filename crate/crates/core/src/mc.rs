//! Monte Carlo driver wiring simulation, selection, estimation, and
//! inference into replicated experiments.
//!
//! Every replication derives its own seeds from the master seed through
//! fixed substream paths, so results are independent of scheduling and of
//! which stages are enabled. Aggregates follow the root-mean convention:
//! squared errors are averaged within a replication, then across
//! replications, then rooted.

use crate::dgp::{simulate, DgpConfig};
use crate::error::{Error, Result};
use crate::estimator::{fit, FitOptions, FitResult};
use crate::inference::{bootstrap_beta, BootstrapOptions};
use crate::metrics::{block_mean_sq_err, mean_sq_projector_dist, selection_rates, ReplicationRecord, SelectionRates};
use crate::model::GroundTruth;
use crate::par;
use crate::rng::substream;
use crate::select::{select_all, SelectionOptions};

use rand::Rng;

/// Stages to run and their settings.
#[derive(Debug, Clone)]
pub struct McConfig {
    /// Data-generating design; its seed is the master seed.
    pub dgp: DgpConfig,
    pub replications: usize,
    pub selection: SelectionOptions,
    /// Tolerance and iteration budget for every fit; the seed field is
    /// ignored in favor of derived per-replication seeds.
    pub fit: FitOptions,
    /// Select factor counts each replication.
    pub run_selection: bool,
    /// Estimate under the true counts.
    pub fit_true_counts: bool,
    /// Estimate under the selected counts; requires `run_selection`.
    pub fit_selected_counts: bool,
    /// Bootstrap the last fitted model (selected counts when available,
    /// true counts otherwise); the seed field is ignored.
    pub bootstrap: Option<BootstrapOptions>,
}

impl McConfig {
    /// Full pipeline at the given design.
    pub fn full(dgp: DgpConfig, replications: usize) -> Self {
        Self {
            dgp,
            replications,
            selection: SelectionOptions::default(),
            fit: FitOptions::default(),
            run_selection: true,
            fit_true_counts: true,
            fit_selected_counts: true,
            bootstrap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.fit.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if self.fit_selected_counts && !self.run_selection {
            return Err(Error::InvalidConfig("fit_selected_counts requires run_selection".into()));
        }
        if self.bootstrap.is_some() && !(self.fit_true_counts || self.fit_selected_counts) {
            return Err(Error::InvalidConfig("bootstrap requires at least one fit stage".into()));
        }
        Ok(())
    }
}

/// Aggregate results over all replications.
#[derive(Debug, Clone)]
pub struct McSummary {
    pub replications: usize,
    /// Global count selection accuracy over replications.
    pub rate_global: Option<SelectionRates>,
    /// Local selection accuracy pooled over replications and units.
    pub rate_country: Option<SelectionRates>,
    pub rate_industry: Option<SelectionRates>,
    /// Root mean squared errors under true counts.
    pub rmse_beta_true: Option<f64>,
    pub rmse_f_global_true: Option<f64>,
    pub rmse_f_country_true: Option<f64>,
    pub rmse_f_industry_true: Option<f64>,
    /// Root mean squared errors under selected counts.
    pub rmse_beta_selected: Option<f64>,
    pub rmse_f_global_selected: Option<f64>,
    pub rmse_f_country_selected: Option<f64>,
    pub rmse_f_industry_selected: Option<f64>,
    /// Pooled confidence-interval coverage.
    pub coverage: Option<f64>,
    pub records: Vec<ReplicationRecord>,
}

fn derived_seed(master: u64, stage: u64, rep: usize) -> u64 {
    substream(master, &[stage, rep as u64]).random::<u64>()
}

fn projection_distances(fit_result: &FitResult, truth: &GroundTruth) -> Result<[f64; 3]> {
    let g = mean_sq_projector_dist(
        std::slice::from_ref(&fit_result.factors.global),
        std::slice::from_ref(&truth.f_global),
    )?;
    let c = mean_sq_projector_dist(&fit_result.factors.country, &truth.f_country)?;
    let i = mean_sq_projector_dist(&fit_result.factors.industry, &truth.f_industry)?;
    Ok([g, c, i])
}

fn run_rep(config: &McConfig, rep: usize) -> Result<ReplicationRecord> {
    let master = config.dgp.seed;
    let dgp_config = DgpConfig {
        seed: derived_seed(master, 200, rep),
        ..config.dgp.clone()
    };
    let (data, truth) = simulate(&dgp_config)?;
    let mut record = ReplicationRecord {
        rep,
        true_counts: truth.counts.clone(),
        selected_counts: None,
        msq_beta_true: None,
        msq_beta_selected: None,
        proj_true: None,
        proj_selected: None,
        coverage: None,
    };

    if config.run_selection {
        let options = FitOptions {
            seed: derived_seed(master, 201, rep),
            ..config.fit.clone()
        };
        let selection = select_all(&data, &config.selection, &options)?;
        record.selected_counts = Some(selection.counts);
    }

    let mut boot_target: Option<FitResult> = None;
    if config.fit_true_counts {
        let options = FitOptions {
            seed: derived_seed(master, 202, rep),
            ..config.fit.clone()
        };
        let fit_result = fit(&data, &truth.counts, &options)?;
        record.msq_beta_true = Some(block_mean_sq_err(&fit_result.beta_final, &truth.beta)?);
        record.proj_true = Some(projection_distances(&fit_result, &truth)?);
        boot_target = Some(fit_result);
    }
    if config.fit_selected_counts {
        let counts = record
            .selected_counts
            .as_ref()
            .expect("validated: selection runs before selected-count fit");
        let options = FitOptions {
            seed: derived_seed(master, 203, rep),
            ..config.fit.clone()
        };
        let fit_result = fit(&data, counts, &options)?;
        record.msq_beta_selected = Some(block_mean_sq_err(&fit_result.beta_final, &truth.beta)?);
        record.proj_selected = Some(projection_distances(&fit_result, &truth)?);
        boot_target = Some(fit_result);
    }

    if let Some(boot) = &config.bootstrap {
        let target = boot_target.as_ref().expect("validated: bootstrap follows a fit stage");
        let options = BootstrapOptions {
            seed: derived_seed(master, 204, rep),
            ..boot.clone()
        };
        let result = bootstrap_beta(&data, target, &options)?;
        let mut hits = 0usize;
        let mut total = 0usize;
        for (idx, beta) in truth.beta.iter().enumerate() {
            for covered in result.covers(idx, beta) {
                total += 1;
                if covered {
                    hits += 1;
                }
            }
        }
        record.coverage = Some((hits, total));
    }

    Ok(record)
}

fn root_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some((values.iter().sum::<f64>() / values.len() as f64).sqrt())
    }
}

fn aggregate(config: &McConfig, records: Vec<ReplicationRecord>) -> Result<McSummary> {
    let mut rate_global = None;
    let mut rate_country = None;
    let mut rate_industry = None;
    if config.run_selection {
        let mut sel_g = Vec::new();
        let mut true_g = Vec::new();
        let mut sel_c = Vec::new();
        let mut true_c = Vec::new();
        let mut sel_i = Vec::new();
        let mut true_i = Vec::new();
        for r in &records {
            let s = r.selected_counts.as_ref().expect("selection ran");
            sel_g.push(s.global);
            true_g.push(r.true_counts.global);
            sel_c.extend_from_slice(&s.country);
            true_c.extend_from_slice(&r.true_counts.country);
            sel_i.extend_from_slice(&s.industry);
            true_i.extend_from_slice(&r.true_counts.industry);
        }
        rate_global = Some(selection_rates(&sel_g, &true_g)?);
        rate_country = Some(selection_rates(&sel_c, &true_c)?);
        rate_industry = Some(selection_rates(&sel_i, &true_i)?);
    }

    let collect = |f: &dyn Fn(&ReplicationRecord) -> Option<f64>| -> Vec<f64> { records.iter().filter_map(f).collect() };
    let rmse_beta_true = root_mean(&collect(&|r| r.msq_beta_true));
    let rmse_f_global_true = root_mean(&collect(&|r| r.proj_true.map(|p| p[0])));
    let rmse_f_country_true = root_mean(&collect(&|r| r.proj_true.map(|p| p[1])));
    let rmse_f_industry_true = root_mean(&collect(&|r| r.proj_true.map(|p| p[2])));
    let rmse_beta_selected = root_mean(&collect(&|r| r.msq_beta_selected));
    let rmse_f_global_selected = root_mean(&collect(&|r| r.proj_selected.map(|p| p[0])));
    let rmse_f_country_selected = root_mean(&collect(&|r| r.proj_selected.map(|p| p[1])));
    let rmse_f_industry_selected = root_mean(&collect(&|r| r.proj_selected.map(|p| p[2])));

    let mut hits = 0usize;
    let mut total = 0usize;
    for r in &records {
        if let Some((h, n)) = r.coverage {
            hits += h;
            total += n;
        }
    }
    let coverage = if total > 0 { Some(hits as f64 / total as f64) } else { None };

    Ok(McSummary {
        replications: records.len(),
        rate_global,
        rate_country,
        rate_industry,
        rmse_beta_true,
        rmse_f_global_true,
        rmse_f_country_true,
        rmse_f_industry_true,
        rmse_beta_selected,
        rmse_f_global_selected,
        rmse_f_country_selected,
        rmse_f_industry_selected,
        coverage,
        records,
    })
}

/// Runs all replications and aggregates.
pub fn run(config: &McConfig) -> Result<McSummary> {
    config.validate()?;
    let records = par::try_map_indexed(config.replications, |rep| run_rep(config, rep))?;
    aggregate(config, records)
}
