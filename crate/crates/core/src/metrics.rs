//! Accuracy metrics for simulation studies.
//!
//! Coefficient error is the root mean, over replications, of the block-mean
//! squared coefficient distance. Factor accuracy compares column spans through
//! projector distance, which ignores rotation and scaling of the candidate
//! basis; a count of zero contributes the squared rank of whichever side is
//! nonempty.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::projector;
use crate::model::{CoefficientEstimates, FactorCounts};

/// Per-replication scalar outcomes, one record per Monte Carlo draw.
#[derive(Debug, Clone)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub true_counts: FactorCounts,
    pub selected_counts: Option<FactorCounts>,
    /// Block-mean squared coefficient error of the fit under true counts.
    pub msq_beta_true: Option<f64>,
    /// Same under selected counts.
    pub msq_beta_selected: Option<f64>,
    /// Squared projector distances under true counts: global, then the
    /// country and industry means.
    pub proj_true: Option<[f64; 3]>,
    /// Same under selected counts.
    pub proj_selected: Option<[f64; 3]>,
    /// Confidence-interval hits as (covered, total) over block coefficients.
    pub coverage: Option<(usize, usize)>,
}

/// Block-mean squared coefficient error for one replication.
pub fn block_mean_sq_err(estimates: &CoefficientEstimates, truth: &[DVector<f64>]) -> Result<f64> {
    if estimates.values.len() != truth.len() {
        return Err(Error::dim("block_mean_sq_err", format!("{} blocks", truth.len()), format!("{}", estimates.values.len())));
    }
    if truth.is_empty() {
        return Err(Error::InvalidData("no blocks to average".into()));
    }
    let mut acc = 0.0;
    for (b, t) in estimates.values.iter().zip(truth) {
        if b.len() != t.len() {
            return Err(Error::dim("block_mean_sq_err", format!("{} coefficients", t.len()), format!("{}", b.len())));
        }
        acc += (b - t).norm_squared();
    }
    Ok(acc / truth.len() as f64)
}

/// Root mean squared coefficient error over replications.
pub fn rmse_beta(estimates: &[CoefficientEstimates], truths: &[Vec<DVector<f64>>]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::dim("rmse_beta", format!("{} replications", truths.len()), format!("{}", estimates.len())));
    }
    if estimates.is_empty() {
        return Err(Error::InvalidData("no replications to average".into()));
    }
    let mut acc = 0.0;
    for (e, t) in estimates.iter().zip(truths) {
        acc += block_mean_sq_err(e, t)?;
    }
    Ok((acc / estimates.len() as f64).sqrt())
}

/// Mean squared projector distance over paired factor matrices.
///
/// Each pair contributes `‖P_est − P_true‖²_F` where `P` projects onto the
/// column span. Matrices must share row dimension; column counts may differ.
pub fn mean_sq_projector_dist(estimated: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(Error::dim("mean_sq_projector_dist", format!("{} matrices", truth.len()), format!("{}", estimated.len())));
    }
    if truth.is_empty() {
        return Err(Error::InvalidData("no factor matrices to average".into()));
    }
    let mut acc = 0.0;
    for (e, t) in estimated.iter().zip(truth) {
        if e.nrows() != t.nrows() {
            return Err(Error::dim("mean_sq_projector_dist", format!("{} rows", t.nrows()), format!("{}", e.nrows())));
        }
        acc += (projector(e) - projector(t)).norm_squared();
    }
    Ok(acc / truth.len() as f64)
}

/// Root mean squared projector distance over replications of factor lists.
pub fn rmse_factor_space(estimated: &[Vec<DMatrix<f64>>], truth: &[Vec<DMatrix<f64>>]) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(Error::dim("rmse_factor_space", format!("{} replications", truth.len()), format!("{}", estimated.len())));
    }
    if estimated.is_empty() {
        return Err(Error::InvalidData("no replications to average".into()));
    }
    let mut acc = 0.0;
    for (e, t) in estimated.iter().zip(truth) {
        acc += mean_sq_projector_dist(e, t)?;
    }
    Ok((acc / estimated.len() as f64).sqrt())
}

/// Fractions of exact, under-, and over-selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionRates {
    pub exact: f64,
    pub under: f64,
    pub over: f64,
}

/// Compares selected counts against the truth, pairwise.
pub fn selection_rates(selected: &[usize], truth: &[usize]) -> Result<SelectionRates> {
    if selected.len() != truth.len() {
        return Err(Error::dim("selection_rates", format!("{} entries", truth.len()), format!("{}", selected.len())));
    }
    if truth.is_empty() {
        return Err(Error::InvalidData("no selections to average".into()));
    }
    let n = truth.len() as f64;
    let mut exact = 0usize;
    let mut under = 0usize;
    let mut over = 0usize;
    for (&s, &t) in selected.iter().zip(truth) {
        match s.cmp(&t) {
            std::cmp::Ordering::Equal => exact += 1,
            std::cmp::Ordering::Less => under += 1,
            std::cmp::Ordering::Greater => over += 1,
        }
    }
    Ok(SelectionRates {
        exact: exact as f64 / n,
        under: under as f64 / n,
        over: over as f64 / n,
    })
}

/// Fraction of confidence intervals that covered the target.
pub fn coverage_rate(hits: &[bool]) -> Result<f64> {
    if hits.is_empty() {
        return Err(Error::InvalidData("no coverage indicators to average".into()));
    }
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}
