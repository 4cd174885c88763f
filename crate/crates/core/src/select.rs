//! Eigenvalue-ratio selection of factor counts at every level.
//!
//! A preliminary fit with `d_max` factors at every level produces residuals
//! whose pooled covariance orders global factor strength; its top
//! eigenvectors then sandwich the local residual covariances. Each count is
//! chosen by minimizing the eigenvalue ratio `λ_{s+1}/λ_s` over
//! `s ∈ {0, …, d_max}`, with a mock eigenvalue `λ_0 = 1` and with ratios
//! disabled below the threshold `ω` so that pure-noise spectra select zero.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimator::{fit, global_residual_covariance, local_residual_spectra, FitOptions};
use crate::linalg::{orthonormalize_columns, sym_eig_desc};
use crate::model::{Axis, FactorCounts, PanelDataset};

/// Options for factor-count selection.
#[derive(Debug, Clone)]
pub struct SelectionOptions {
    /// Upper bound on every selected count; also the preliminary fit's count.
    pub d_max: usize,
    /// Eigenvalue threshold; `None` uses `1 / log(max(L, N, T))`.
    pub omega: Option<f64>,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            d_max: 5,
            omega: None,
        }
    }
}

/// Uniform overrides that pin counts instead of selecting them.
#[derive(Debug, Clone, Default)]
pub struct CountOverrides {
    pub global: Option<usize>,
    pub country: Option<usize>,
    pub industry: Option<usize>,
}

/// Selected counts plus the spectra that produced them.
#[derive(Debug, Clone)]
pub struct Selection {
    pub counts: FactorCounts,
    /// Threshold actually used.
    pub omega: f64,
    /// Top `d_max + 1` eigenvalues of the pooled residual covariance.
    pub global_spectrum: Vec<f64>,
    /// Per-unit local spectra, `d_max + 1` values each.
    pub country_spectra: Vec<Vec<f64>>,
    pub industry_spectra: Vec<Vec<f64>>,
}

/// Picks a count from a descending eigenvalue list.
///
/// `eigvals` must hold at least `d_max + 1` values. The criterion evaluates
/// `s = 0` through `d_max` with `λ_0 = 1` prepended, scoring
/// `λ_{s+1}/λ_s` when `λ_s ≥ ω` and `1` otherwise; ties break to the
/// smallest `s`.
pub fn select_count(eigvals: &[f64], omega: f64, d_max: usize) -> Result<usize> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::InvalidConfig(format!("omega must be positive and finite, got {omega}")));
    }
    if d_max == 0 {
        return Err(Error::InvalidConfig("d_max must be at least 1".into()));
    }
    if eigvals.len() < d_max + 1 {
        return Err(Error::dim(
            "select_count",
            format!("at least {} eigenvalues", d_max + 1),
            format!("{}", eigvals.len()),
        ));
    }
    if eigvals.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidConfig("eigenvalues must be sorted in descending order".into()));
    }
    let lambda = |s: usize| -> f64 {
        if s == 0 {
            1.0
        } else {
            eigvals[s - 1].max(0.0)
        }
    };
    let mut best_s = 0usize;
    let mut best_val = f64::INFINITY;
    for s in 0..=d_max {
        let ls = lambda(s);
        let val = if ls >= omega { lambda(s + 1) / ls } else { 1.0 };
        if val < best_val {
            best_val = val;
            best_s = s;
        }
    }
    Ok(best_s)
}

/// Default threshold `1 / log(max(L, N, T))`.
pub fn default_omega(dataset: &PanelDataset) -> f64 {
    let m = dataset.l().max(dataset.n_units()).max(dataset.t()) as f64;
    1.0 / m.ln()
}

/// Selects every factor count from a preliminary `d_max`-level fit.
pub fn select_all(dataset: &PanelDataset, options: &SelectionOptions, fit_options: &FitOptions) -> Result<Selection> {
    select_all_with(dataset, options, fit_options, &CountOverrides::default())
}

/// [`select_all`] with optional pinned counts.
///
/// A pinned global count still determines the sandwich for local selection;
/// pinned local counts skip their ratio decisions but the spectra are
/// reported either way.
pub fn select_all_with(
    dataset: &PanelDataset,
    options: &SelectionOptions,
    fit_options: &FitOptions,
    overrides: &CountOverrides,
) -> Result<Selection> {
    let d_max = options.d_max;
    if d_max == 0 {
        return Err(Error::InvalidConfig("d_max must be at least 1".into()));
    }
    if dataset.t() < d_max + 1 {
        return Err(Error::dim(
            "select_all",
            format!("T >= {}", d_max + 1),
            format!("T = {}", dataset.t()),
        ));
    }
    let omega = match options.omega {
        Some(w) if w > 0.0 && w.is_finite() => w,
        Some(w) => {
            return Err(Error::InvalidConfig(format!("omega must be positive and finite, got {w}")));
        }
        None => default_omega(dataset),
    };

    let max_counts = FactorCounts::uniform(dataset.l(), dataset.n_units(), d_max, d_max, d_max);
    max_counts.validate(dataset, 3 * d_max)?;
    let pre = fit(dataset, &max_counts, fit_options)?;
    let beta = &pre.beta_final;

    let cov = global_residual_covariance(dataset, beta)?;
    let pairs = sym_eig_desc(&cov, d_max + 1)?;
    let global_spectrum: Vec<f64> = pairs.values.iter().map(|v| v.max(0.0)).collect();
    let l_global = match overrides.global {
        Some(g) => g,
        None => select_count(&global_spectrum, omega, d_max)?,
    };
    let c_global = if l_global == 0 {
        DMatrix::zeros(dataset.t(), 0)
    } else if l_global <= d_max + 1 {
        orthonormalize_columns(&pairs.vectors.columns(0, l_global).clone_owned())?
    } else {
        return Err(Error::InvalidConfig(format!(
            "pinned global count {l_global} exceeds d_max = {d_max}"
        )));
    };

    let country_spectra = local_residual_spectra(dataset, beta, &c_global, Axis::Country, d_max + 1)?;
    let industry_spectra = local_residual_spectra(dataset, beta, &c_global, Axis::Industry, d_max + 1)?;
    let mut country = Vec::with_capacity(dataset.l());
    for spectrum in &country_spectra {
        let c = match overrides.country {
            Some(v) => v,
            None => select_count(spectrum, omega, d_max)?,
        };
        country.push(c);
    }
    let mut industry = Vec::with_capacity(dataset.n_units());
    for spectrum in &industry_spectra {
        let c = match overrides.industry {
            Some(v) => v,
            None => select_count(spectrum, omega, d_max)?,
        };
        industry.push(c);
    }

    Ok(Selection {
        counts: FactorCounts {
            global: l_global,
            country,
            industry,
        },
        omega,
        global_spectrum,
        country_spectra,
        industry_spectra,
    })
}
