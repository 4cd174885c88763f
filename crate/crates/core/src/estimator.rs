//! Two-step least-squares estimation with alternating factor extraction.
//!
//! Each sweep performs, in order:
//!
//! 1. per-block weighted least squares with the weight
//!    `C† = 2I − 2P_global − P_country − P_industry` built from the current
//!    factor blocks;
//! 2. principal-component updates of the global block from the pooled
//!    residual covariance, then of every local block from residual
//!    covariances sandwiched by the global annihilator;
//! 3. per-block regressions on factor-annihilated data, which produce the
//!    final coefficients.
//!
//! Convergence is declared when consecutive final coefficients differ by
//! less than `tol` in root mean square across blocks.
//!
//! Everything here walks blocks in their stored `(i, j)` order; parallel
//! loops collect per-index results and reduce sequentially, so output bits
//! never depend on the worker count.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, project_normalized, sym_eig_desc, RANK_REL_TOL};
use crate::model::{Axis, CoefficientEstimates, FactorCounts, FactorEstimates, PanelDataset};
use crate::par;
use crate::rng::substream;

/// Options controlling the alternating fit.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Convergence threshold on the root mean square coefficient change.
    pub tol: f64,
    /// Maximum number of sweeps.
    pub max_iter: usize,
    /// Seed for the random factor initialization.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Step-1 coefficients from the last sweep.
    pub beta_step1: CoefficientEstimates,
    /// Step-2 coefficients from the last sweep.
    pub beta_final: CoefficientEstimates,
    /// Factor blocks from the last sweep.
    pub factors: FactorEstimates,
    /// Number of sweeps performed.
    pub iterations: usize,
    /// Whether the coefficient change fell below `tol`.
    pub converged: bool,
    /// Objective value after the factor update of each sweep.
    pub objective_trace: Vec<f64>,
    /// Number of block regressions that hit a rank-deficient stacked factor
    /// matrix and fell back to a span projector with dropped columns.
    pub rank_drop_events: usize,
}

fn check_beta(dataset: &PanelDataset, beta: &CoefficientEstimates) -> Result<()> {
    if beta.values.len() != dataset.total_blocks() {
        return Err(Error::dim(
            "coefficients",
            format!("{} blocks", dataset.total_blocks()),
            format!("{}", beta.values.len()),
        ));
    }
    Ok(())
}

/// Applies the step-1 weight `C†_ij = 2I − 2P_g − P_c(i) − P_i(j)` to `m`.
///
/// Factor blocks must be `√T`-normalized; projections use the closed form
/// `C Cᵀ/T`.
pub fn c_dagger_apply(factors: &FactorEstimates, i: usize, j: usize, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if i >= factors.country.len() || j >= factors.industry.len() {
        return Err(Error::dim(
            "c_dagger_apply",
            format!("i < {}, j < {}", factors.country.len(), factors.industry.len()),
            format!("i = {i}, j = {j}"),
        ));
    }
    let t = factors.global.nrows();
    if m.nrows() != t {
        return Err(Error::dim("c_dagger_apply", format!("{t} rows"), format!("{}", m.nrows())));
    }
    let mut out = m * 2.0;
    if factors.global.ncols() > 0 {
        out -= project_normalized(&factors.global, m) * 2.0;
    }
    if factors.country[i].ncols() > 0 {
        out -= project_normalized(&factors.country[i], m);
    }
    if factors.industry[j].ncols() > 0 {
        out -= project_normalized(&factors.industry[j], m);
    }
    Ok(out)
}

fn symmetrize_in_place(g: &mut DMatrix<f64>) {
    for r in 0..g.nrows() {
        for c in (r + 1)..g.ncols() {
            let v = 0.5 * (g[(r, c)] + g[(c, r)]);
            g[(r, c)] = v;
            g[(c, r)] = v;
        }
    }
}

/// Solves the d×d block system, reporting a condition estimate on failure.
fn solve_block(mut gram: DMatrix<f64>, rhs: DVector<f64>, i: usize, j: usize) -> Result<DVector<f64>> {
    symmetrize_in_place(&mut gram);
    match Cholesky::new(gram.clone()) {
        Some(ch) => Ok(ch.solve(&rhs)),
        None => {
            let eig = gram.symmetric_eigen();
            let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            let cond = if min.abs() > 0.0 { max.abs() / min.abs() } else { f64::INFINITY };
            Err(Error::SingularBlock { i, j, cond })
        }
    }
}

/// Stacks `[x y]` into one `T × (d+1)` matrix so each projector is applied
/// once per block instead of once per column group.
fn design_with_response(dataset: &PanelDataset, idx: usize) -> DMatrix<f64> {
    let b = &dataset.blocks()[idx];
    let (t, d) = (dataset.t(), dataset.d());
    let mut a = DMatrix::<f64>::zeros(t, d + 1);
    a.columns_mut(0, d).copy_from(&b.x);
    a.column_mut(d).copy_from(&b.y);
    a
}

fn step1_block(dataset: &PanelDataset, factors: &FactorEstimates, idx: usize) -> Result<DVector<f64>> {
    let b = &dataset.blocks()[idx];
    let d = dataset.d();
    let a = design_with_response(dataset, idx);
    let wa = c_dagger_apply(factors, b.i, b.j, &a)?;
    let xt_wa = b.x.transpose() * wa;
    let gram = xt_wa.columns(0, d).clone_owned();
    let rhs = xt_wa.column(d).clone_owned();
    solve_block(gram, rhs, b.i, b.j)
}

/// Step-1 weighted least squares for every block.
pub fn step1_beta(dataset: &PanelDataset, factors: &FactorEstimates) -> Result<CoefficientEstimates> {
    let values = par::try_map_indexed(dataset.total_blocks(), |idx| step1_block(dataset, factors, idx))?;
    Ok(CoefficientEstimates { values })
}

/// Residual matrix, one column per block in `(i, j)` order.
fn residual_matrix(dataset: &PanelDataset, beta: &CoefficientEstimates) -> DMatrix<f64> {
    let t = dataset.t();
    let mut e = DMatrix::<f64>::zeros(t, dataset.total_blocks());
    for (idx, b) in dataset.blocks().iter().enumerate() {
        let r = &b.y - &b.x * &beta.values[idx];
        e.column_mut(idx).copy_from(&r);
    }
    e
}

/// Pooled residual covariance `Σ̂ = (1/(T·ΣᵢNᵢ)) Σ r rᵀ`.
pub fn global_residual_covariance(dataset: &PanelDataset, beta: &CoefficientEstimates) -> Result<DMatrix<f64>> {
    check_beta(dataset, beta)?;
    let e = residual_matrix(dataset, beta);
    Ok(covariance_of(&e, dataset))
}

fn covariance_of(e: &DMatrix<f64>, dataset: &PanelDataset) -> DMatrix<f64> {
    let t = dataset.t();
    let denom = (t * dataset.total_blocks()) as f64;
    let mut cov = DMatrix::<f64>::zeros(t, t);
    cov.gemm(1.0 / denom, e, &e.transpose(), 0.0);
    cov
}

/// Extracts the top `l` global factors from the pooled residual covariance.
pub fn update_global_factors(
    dataset: &PanelDataset,
    beta: &CoefficientEstimates,
    l: usize,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_beta(dataset, beta)?;
    let e = residual_matrix(dataset, beta);
    global_from_residuals(&e, dataset, l)
}

fn global_from_residuals(e: &DMatrix<f64>, dataset: &PanelDataset, l: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let t = dataset.t();
    if l == 0 {
        return Ok((DMatrix::zeros(t, 0), Vec::new()));
    }
    let cov = covariance_of(e, dataset);
    let pairs = sym_eig_desc(&cov, l)?;
    Ok((pairs.vectors, pairs.values))
}

/// Unit block column ranges for one axis: (unit, block positions).
fn axis_units(dataset: &PanelDataset, axis: Axis) -> usize {
    match axis {
        Axis::Country => dataset.l(),
        Axis::Industry => dataset.n_units(),
    }
}

fn axis_block_ids(dataset: &PanelDataset, axis: Axis, unit: usize) -> &[usize] {
    match axis {
        Axis::Country => dataset.country_block_ids(unit),
        Axis::Industry => dataset.industry_block_ids(unit),
    }
}

/// Gathers the residual columns of one unit into a `T × N_u` matrix.
fn gather_columns(e: &DMatrix<f64>, ids: &[usize]) -> DMatrix<f64> {
    let t = e.nrows();
    let mut g = DMatrix::<f64>::zeros(t, ids.len());
    for (c, &idx) in ids.iter().enumerate() {
        g.column_mut(c).copy_from(&e.column(idx));
    }
    g
}

/// Extracts local factors for every unit on one axis.
///
/// Residuals are sandwiched by the annihilator of `c_global` (which must be
/// `√T`-normalized), so the returned blocks are orthogonal to the global
/// block by construction. Unit `u` uses the covariance normalizer
/// `1/(N_u · T)` where `N_u` is its number of blocks.
pub fn update_local_factors(
    dataset: &PanelDataset,
    beta: &CoefficientEstimates,
    c_global: &DMatrix<f64>,
    axis: Axis,
    counts: &[usize],
) -> Result<(Vec<DMatrix<f64>>, Vec<Vec<f64>>)> {
    check_beta(dataset, beta)?;
    if counts.len() != axis_units(dataset, axis) {
        return Err(Error::dim(
            "update_local_factors",
            format!("{} counts", axis_units(dataset, axis)),
            format!("{}", counts.len()),
        ));
    }
    let e = residual_matrix(dataset, beta);
    let me = &e - project_normalized(c_global, &e);
    locals_from_residuals(&me, dataset, axis, counts)
}

fn locals_from_residuals(
    me: &DMatrix<f64>,
    dataset: &PanelDataset,
    axis: Axis,
    counts: &[usize],
) -> Result<(Vec<DMatrix<f64>>, Vec<Vec<f64>>)> {
    let t = dataset.t();
    let units = axis_units(dataset, axis);
    let results = par::try_map_indexed(units, |u| -> Result<(DMatrix<f64>, Vec<f64>)> {
        let ids = axis_block_ids(dataset, axis, u);
        if counts[u] == 0 {
            return Ok((DMatrix::zeros(t, 0), Vec::new()));
        }
        let g = gather_columns(me, ids);
        let denom = (ids.len() * t) as f64;
        let pairs = linalg::gram_top_eigpairs(&g, counts[u], denom)?;
        Ok((pairs.vectors, pairs.values))
    })?;
    let mut blocks = Vec::with_capacity(units);
    let mut values = Vec::with_capacity(units);
    for (b, v) in results {
        blocks.push(b);
        values.push(v);
    }
    Ok((blocks, values))
}

/// Top-`k` eigenvalues of each unit's sandwiched residual covariance,
/// zero-padded to length `k`. Input convention matches
/// [`update_local_factors`].
pub fn local_residual_spectra(
    dataset: &PanelDataset,
    beta: &CoefficientEstimates,
    c_global: &DMatrix<f64>,
    axis: Axis,
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    check_beta(dataset, beta)?;
    let e = residual_matrix(dataset, beta);
    let me = &e - project_normalized(c_global, &e);
    let t = dataset.t();
    let units = axis_units(dataset, axis);
    Ok(par::map_indexed(units, |u| {
        let ids = axis_block_ids(dataset, axis, u);
        let g = gather_columns(&me, ids);
        linalg::gram_spectrum(&g, k, (ids.len() * t) as f64)
    }))
}

/// Applies the stacked-factor annihilator `M_Ĉij` of block `(i, j)` to `a`.
/// Returns the result and whether rank deficiency forced the span-projector
/// fallback.
pub(crate) fn annihilate_block(
    factors: &FactorEstimates,
    i: usize,
    j: usize,
    a: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, bool)> {
    if i >= factors.country.len() || j >= factors.industry.len() {
        return Err(Error::dim(
            "annihilate_block",
            format!("i < {}, j < {}", factors.country.len(), factors.industry.len()),
            format!("i = {i}, j = {j}"),
        ));
    }
    let t = factors.global.nrows();
    if a.nrows() != t {
        return Err(Error::dim("annihilate_block", format!("{t} rows"), format!("{}", a.nrows())));
    }
    let cg = &factors.global;
    let cc = &factors.country[i];
    let ci = &factors.industry[j];
    let k_local = cc.ncols() + ci.ncols();

    let mut ma = a - project_normalized(cg, a);
    let mut dropped = false;
    if k_local > 0 {
        // The two local blocks are each orthogonal to the global block but
        // not to one another, so project on their joint span via the normal
        // equations of the stacked matrix.
        let mut dmat = DMatrix::<f64>::zeros(t, k_local);
        dmat.columns_mut(0, cc.ncols()).copy_from(cc);
        dmat.columns_mut(cc.ncols(), ci.ncols()).copy_from(ci);
        let dtd = dmat.transpose() * &dmat;
        let dta = dmat.transpose() * &ma;
        match Cholesky::new(dtd) {
            Some(ch) => {
                let coef = ch.solve(&dta);
                ma -= &dmat * coef;
            }
            None => {
                // Overlapping local spans: fall back to an orthonormal basis
                // of the full stacked span, dropping redundant columns.
                dropped = true;
                let mut stacked = DMatrix::<f64>::zeros(t, cg.ncols() + k_local);
                stacked.columns_mut(0, cg.ncols()).copy_from(cg);
                stacked.columns_mut(cg.ncols(), cc.ncols()).copy_from(cc);
                stacked.columns_mut(cg.ncols() + cc.ncols(), ci.ncols()).copy_from(ci);
                let svd = stacked.svd(true, false);
                let sigma = &svd.singular_values;
                let rank = if sigma[0] <= 0.0 {
                    0
                } else {
                    sigma.iter().filter(|s| **s >= RANK_REL_TOL * sigma[0]).count()
                };
                ma = a.clone();
                if rank > 0 {
                    let u = svd.u.expect("left singular vectors requested");
                    let ur = u.columns(0, rank);
                    ma -= &ur * (ur.transpose() * a);
                }
            }
        }
    }
    Ok((ma, dropped))
}

/// One block of step 2: regression on data annihilated by the stacked
/// factor blocks. Returns the coefficients and whether rank deficiency
/// forced the span-projector fallback.
fn step2_block(dataset: &PanelDataset, factors: &FactorEstimates, idx: usize) -> Result<(DVector<f64>, bool)> {
    let b = &dataset.blocks()[idx];
    let d = dataset.d();
    let a = design_with_response(dataset, idx);
    let (ma, dropped) = annihilate_block(factors, b.i, b.j, &a)?;
    let xt_ma = b.x.transpose() * ma;
    let gram = xt_ma.columns(0, d).clone_owned();
    let rhs = xt_ma.column(d).clone_owned();
    Ok((solve_block(gram, rhs, b.i, b.j)?, dropped))
}

fn step2_all(dataset: &PanelDataset, factors: &FactorEstimates) -> Result<(CoefficientEstimates, usize)> {
    let results = par::try_map_indexed(dataset.total_blocks(), |idx| step2_block(dataset, factors, idx))?;
    let mut values = Vec::with_capacity(results.len());
    let mut drops = 0usize;
    for (v, dropped) in results {
        values.push(v);
        if dropped {
            drops += 1;
        }
    }
    Ok((CoefficientEstimates { values }, drops))
}

/// Step-2 regression on factor-annihilated data for every block.
pub fn step2_beta(dataset: &PanelDataset, factors: &FactorEstimates) -> Result<CoefficientEstimates> {
    Ok(step2_all(dataset, factors)?.0)
}

/// Objective `Q = (1/(T·ΣᵢNᵢ)) Σᵢⱼ r̂ᵢⱼᵀ C†ᵢⱼ r̂ᵢⱼ` at the given state.
pub fn objective_value(dataset: &PanelDataset, beta: &CoefficientEstimates, factors: &FactorEstimates) -> Result<f64> {
    check_beta(dataset, beta)?;
    let e = residual_matrix(dataset, beta);
    Ok(objective_from_residuals(&e, dataset, factors))
}

fn objective_from_residuals(e: &DMatrix<f64>, dataset: &PanelDataset, factors: &FactorEstimates) -> f64 {
    let t = dataset.t() as f64;
    let mut q = 2.0 * e.norm_squared();
    for (idx, b) in dataset.blocks().iter().enumerate() {
        let col = e.column(idx);
        if factors.global.ncols() > 0 {
            q -= 2.0 * (factors.global.transpose() * col).norm_squared() / t;
        }
        let cc = &factors.country[b.i];
        if cc.ncols() > 0 {
            q -= (cc.transpose() * col).norm_squared() / t;
        }
        let ci = &factors.industry[b.j];
        if ci.ncols() > 0 {
            q -= (ci.transpose() * col).norm_squared() / t;
        }
    }
    q / (t * dataset.total_blocks() as f64)
}

/// Random `√T`-normalized starting factors; locals are drawn, projected off
/// the global block, and orthonormalized.
fn init_factors(dataset: &PanelDataset, counts: &FactorCounts, seed: u64) -> Result<FactorEstimates> {
    let t = dataset.t();
    let mut rng = substream(seed, &[10]);
    let mut draw = |k: usize| DMatrix::from_fn(t, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let global = if counts.global > 0 {
        linalg::orthonormalize_columns(&draw(counts.global))?
    } else {
        DMatrix::zeros(t, 0)
    };
    let mut country = Vec::with_capacity(counts.country.len());
    for &k in &counts.country {
        if k == 0 {
            country.push(DMatrix::zeros(t, 0));
        } else {
            let raw = draw(k);
            let proj = &raw - project_normalized(&global, &raw);
            country.push(linalg::orthonormalize_columns(&proj)?);
        }
    }
    let mut industry = Vec::with_capacity(counts.industry.len());
    for &k in &counts.industry {
        if k == 0 {
            industry.push(DMatrix::zeros(t, 0));
        } else {
            let raw = draw(k);
            let proj = &raw - project_normalized(&global, &raw);
            industry.push(linalg::orthonormalize_columns(&proj)?);
        }
    }
    Ok(FactorEstimates {
        global_eigvals: vec![0.0; global.ncols()],
        country_eigvals: country.iter().map(|c| vec![0.0; c.ncols()]).collect(),
        industry_eigvals: industry.iter().map(|c| vec![0.0; c.ncols()]).collect(),
        global,
        country,
        industry,
    })
}

/// Full alternating estimation with the requested factor counts.
pub fn fit(dataset: &PanelDataset, counts: &FactorCounts, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    dataset.validate().into_result()?;
    counts.validate(dataset, usize::MAX)?;

    let mut factors = init_factors(dataset, counts, options.seed)?;
    let mut trace = Vec::new();
    let mut rank_drops = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;
    let mut last_step1: Option<CoefficientEstimates> = None;
    let mut beta_tilde: Option<CoefficientEstimates> = None;

    for sweep in 1..=options.max_iter {
        iterations = sweep;
        let b_hat = step1_beta(dataset, &factors)?;
        let e = residual_matrix(dataset, &b_hat);

        let (global, global_eigvals) = global_from_residuals(&e, dataset, counts.global)?;
        factors.global = global;
        factors.global_eigvals = global_eigvals;

        let me = &e - project_normalized(&factors.global, &e);
        let (country, country_eigvals) = locals_from_residuals(&me, dataset, Axis::Country, &counts.country)?;
        factors.country = country;
        factors.country_eigvals = country_eigvals;
        let (industry, industry_eigvals) = locals_from_residuals(&me, dataset, Axis::Industry, &counts.industry)?;
        factors.industry = industry;
        factors.industry_eigvals = industry_eigvals;

        trace.push(objective_from_residuals(&e, dataset, &factors));

        let (b_tilde, drops) = step2_all(dataset, &factors)?;
        rank_drops += drops;
        let delta = beta_tilde
            .as_ref()
            .map(|prev| b_tilde.diff_norm(prev) / (dataset.total_blocks() as f64).sqrt());
        last_step1 = Some(b_hat);
        beta_tilde = Some(b_tilde);
        if let Some(delta) = delta {
            if delta < options.tol {
                converged = true;
                break;
            }
        }
    }

    Ok(FitResult {
        beta_step1: last_step1.expect("at least one sweep ran"),
        beta_final: beta_tilde.expect("at least one sweep ran"),
        factors,
        iterations,
        converged,
        objective_trace: trace,
        rank_drop_events: rank_drops,
    })
}
