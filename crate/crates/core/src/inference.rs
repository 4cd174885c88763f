//! Dependent wild bootstrap and split-panel jackknife.
//!
//! The bootstrap perturbs step-1 residuals with a moving-average multiplier
//! series whose covariance is the Bartlett kernel at the chosen bandwidth,
//! then reruns only the final regression with factors held fixed. One
//! multiplier series per replication is shared by every block, preserving
//! cross-block error dependence.
//!
//! The jackknife removes first-order bias of a mean-group coefficient by
//! combining the full-sample estimate with four quarter-sample estimates,
//! where the target unit is kept inside both halves of its own axis.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimator::{annihilate_block, fit, FitOptions, FitResult};
use crate::model::{Axis, CoefficientEstimates, FactorCounts, PanelDataset};
use crate::par;
use crate::rng::substream;

/// Options for [`bootstrap_beta`].
#[derive(Debug, Clone)]
pub struct BootstrapOptions {
    /// Number of bootstrap replications.
    pub replications: usize,
    /// Block length of the multiplier series; `None` uses
    /// `⌊1.75 · T^(1/3)⌋`.
    pub bandwidth: Option<usize>,
    /// Two-sided confidence level is `1 − alpha`.
    pub alpha: f64,
    /// Seed for the multiplier draws; replication `r` (0-based) uses the
    /// substream at path `[r]`.
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replications: 399,
            bandwidth: None,
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// Default multiplier block length `⌊1.75 · T^(1/3)⌋`, at least 1.
pub fn default_bandwidth(t: usize) -> usize {
    let m = (1.75 * (t as f64).cbrt()).floor() as usize;
    m.max(1)
}

fn check_bandwidth(m: usize, t: usize) -> Result<()> {
    if m == 0 || m > t {
        return Err(Error::InvalidConfig(format!("bandwidth must lie in 1..={t}, got {m}")));
    }
    Ok(())
}

pub(crate) fn dwb_weights_from(rng: &mut ChaCha8Rng, t: usize, m: usize) -> Result<DVector<f64>> {
    if t == 0 {
        return Err(Error::InvalidConfig("multiplier series length must be positive".into()));
    }
    check_bandwidth(m, t)?;
    let eta: Vec<f64> = (0..t + m - 1).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let scale = 1.0 / (m as f64).sqrt();
    Ok(DVector::from_fn(t, |s, _| {
        let sum: f64 = eta[s..s + m].iter().sum();
        scale * sum
    }))
}

/// Draws one multiplier series of length `t` with block length `m`.
///
/// Entry `s` averages `m` consecutive standard normals starting at `s`, so
/// `cov(ξ_s, ξ_{s+h}) = max(0, 1 − |h|/m)`.
pub fn dwb_weights(t: usize, m: usize, seed: u64) -> Result<DVector<f64>> {
    let mut rng = substream(seed, &[]);
    dwb_weights_from(&mut rng, t, m)
}

/// Confidence intervals and raw draws from [`bootstrap_beta`].
#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// Per block, a `B × d` matrix of centered draws `b̃* − b̃`.
    pub draws: Vec<DMatrix<f64>>,
    /// Per-block lower confidence bounds.
    pub ci_lower: Vec<DVector<f64>>,
    /// Per-block upper confidence bounds.
    pub ci_upper: Vec<DVector<f64>>,
    /// Bandwidth actually used.
    pub bandwidth: usize,
    pub alpha: f64,
}

impl BootstrapResult {
    /// Whether `target` lies inside the interval of block `idx`, per
    /// coefficient.
    pub fn covers(&self, idx: usize, target: &DVector<f64>) -> Vec<bool> {
        (0..target.len())
            .map(|s| self.ci_lower[idx][s] <= target[s] && target[s] <= self.ci_upper[idx][s])
            .collect()
    }
}

/// 1-based order statistic at probability `p`: entry `⌈p·B⌉` of the sorted
/// draws, clamped to the valid range.
pub(crate) fn order_statistic(sorted: &[f64], p: f64) -> f64 {
    let b = sorted.len();
    let idx = ((p * b as f64).ceil() as usize).clamp(1, b);
    sorted[idx - 1]
}

struct BlockResampler {
    /// `(XᵀMX)⁻¹ XᵀM (X b̂)`, constant across replications.
    w: DVector<f64>,
    /// `(XᵀMX)⁻¹ XᵀM diag(Ê)`, multiplies the multiplier series.
    b: DMatrix<f64>,
}

/// Dependent wild bootstrap of the final coefficients.
///
/// Uses the step-1 coefficients of `fit_result` to build fitted values and
/// residuals, holds the factor blocks fixed, and reruns the final
/// annihilated regression on each pseudo-sample. Intervals invert the
/// distribution of `b̃* − b̃` through its order statistics.
pub fn bootstrap_beta(dataset: &PanelDataset, fit_result: &FitResult, options: &BootstrapOptions) -> Result<BootstrapResult> {
    let t = dataset.t();
    let n_blocks = dataset.total_blocks();
    if options.replications == 0 {
        return Err(Error::InvalidConfig("replications must be at least 1".into()));
    }
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {}", options.alpha)));
    }
    if fit_result.beta_step1.values.len() != n_blocks || fit_result.beta_final.values.len() != n_blocks {
        return Err(Error::dim(
            "bootstrap_beta",
            format!("{n_blocks} blocks"),
            format!("{}", fit_result.beta_step1.values.len()),
        ));
    }
    let m = options.bandwidth.unwrap_or_else(|| default_bandwidth(t));
    check_bandwidth(m, t)?;

    let factors = &fit_result.factors;
    let resamplers: Vec<BlockResampler> = par::try_map_indexed(n_blocks, |idx| {
        let blk = &dataset.blocks()[idx];
        let (mx, _) = annihilate_block(factors, blk.i, blk.j, &blk.x)?;
        let mut gram = blk.x.transpose() * &mx;
        // Symmetrize against rounding before the factorization.
        for r in 0..gram.nrows() {
            for c in (r + 1)..gram.ncols() {
                let v = 0.5 * (gram[(r, c)] + gram[(c, r)]);
                gram[(r, c)] = v;
                gram[(c, r)] = v;
            }
        }
        let chol = Cholesky::new(gram).ok_or(Error::SingularBlock {
            i: blk.i,
            j: blk.j,
            cond: f64::INFINITY,
        })?;
        let b_hat = &fit_result.beta_step1.values[idx];
        let fitted = &blk.x * b_hat;
        let ehat = &blk.y - &fitted;
        let w = chol.solve(&(mx.transpose() * fitted));
        let mut bt = mx.transpose();
        for s in 0..t {
            let scale = ehat[s];
            bt.column_mut(s).scale_mut(scale);
        }
        let b = chol.solve(&bt);
        Ok(BlockResampler { w, b })
    })?;

    let beta_tilde = &fit_result.beta_final;
    let per_rep: Vec<Vec<DVector<f64>>> = par::try_map_indexed(options.replications, |r| {
        let mut rng = substream(options.seed, &[r as u64]);
        let xi = dwb_weights_from(&mut rng, t, m)?;
        Ok((0..n_blocks)
            .map(|idx| {
                let rs = &resamplers[idx];
                &rs.w + &rs.b * &xi - &beta_tilde.values[idx]
            })
            .collect())
    })?;

    let d = dataset.d();
    let b_reps = options.replications;
    let summaries = par::map_indexed(n_blocks, |idx| {
        let mut draws = DMatrix::<f64>::zeros(b_reps, d);
        for (r, rep) in per_rep.iter().enumerate() {
            for s in 0..d {
                draws[(r, s)] = rep[idx][s];
            }
        }
        let mut lower = DVector::<f64>::zeros(d);
        let mut upper = DVector::<f64>::zeros(d);
        for s in 0..d {
            let mut col: Vec<f64> = (0..b_reps).map(|r| draws[(r, s)]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
            let q_lo = order_statistic(&col, options.alpha / 2.0);
            let q_hi = order_statistic(&col, 1.0 - options.alpha / 2.0);
            let center = beta_tilde.values[idx][s];
            lower[s] = center - q_hi;
            upper[s] = center - q_lo;
        }
        (draws, lower, upper)
    });

    let mut draws = Vec::with_capacity(n_blocks);
    let mut ci_lower = Vec::with_capacity(n_blocks);
    let mut ci_upper = Vec::with_capacity(n_blocks);
    for (dm, lo, hi) in summaries {
        draws.push(dm);
        ci_lower.push(lo);
        ci_upper.push(hi);
    }
    Ok(BootstrapResult {
        draws,
        ci_lower,
        ci_upper,
        bandwidth: m,
        alpha: options.alpha,
    })
}

/// Per-unit averages of block coefficients along one axis.
pub fn mean_group(dataset: &PanelDataset, beta: &CoefficientEstimates, axis: Axis) -> Result<Vec<DVector<f64>>> {
    if beta.values.len() != dataset.total_blocks() {
        return Err(Error::dim(
            "mean_group",
            format!("{} blocks", dataset.total_blocks()),
            format!("{}", beta.values.len()),
        ));
    }
    let units = match axis {
        Axis::Country => dataset.l(),
        Axis::Industry => dataset.n_units(),
    };
    let d = dataset.d();
    let mut out = Vec::with_capacity(units);
    for u in 0..units {
        let ids = match axis {
            Axis::Country => dataset.country_block_ids(u),
            Axis::Industry => dataset.industry_block_ids(u),
        };
        let mut acc = DVector::<f64>::zeros(d);
        for &idx in ids {
            acc += &beta.values[idx];
        }
        out.push(acc / ids.len() as f64);
    }
    Ok(out)
}

/// Jackknife combination `2·full − mean(quarters)`.
pub fn jackknife_combine(full: &DVector<f64>, quarters: &[DVector<f64>]) -> Result<DVector<f64>> {
    if quarters.is_empty() {
        return Err(Error::InvalidConfig("jackknife needs at least one quarter estimate".into()));
    }
    let mut mean = DVector::<f64>::zeros(full.len());
    for q in quarters {
        if q.len() != full.len() {
            return Err(Error::dim("jackknife_combine", format!("{} coefficients", full.len()), format!("{}", q.len())));
        }
        mean += q;
    }
    mean /= quarters.len() as f64;
    Ok(full * 2.0 - mean)
}

/// Output of [`jackknife_bias_correct`].
#[derive(Debug, Clone)]
pub struct JackknifeResult {
    /// Full-sample mean-group coefficient of the target unit.
    pub full: DVector<f64>,
    /// Quarter-sample mean-group coefficients in the order
    /// (own-half 1, other-half 1), (1, 2), (2, 1), (2, 2).
    pub quarters: Vec<DVector<f64>>,
    /// Bias-corrected combination.
    pub corrected: DVector<f64>,
}

fn half_split(units: usize) -> (Vec<usize>, Vec<usize>) {
    let cut = units.div_ceil(2);
    ((0..cut).collect(), (cut..units).collect())
}

fn with_target(half: &[usize], target: usize) -> Vec<usize> {
    let mut v = half.to_vec();
    if !v.contains(&target) {
        v.push(target);
        v.sort_unstable();
    }
    v
}

/// Split-panel jackknife for one unit's mean-group coefficient.
///
/// Fits the full panel, then the four quarter panels formed by crossing the
/// two halves of each axis; the target unit is added to both halves of its
/// own axis so every quarter contains it. Quarter fits derive their seeds
/// from `options.seed` so results do not depend on evaluation order.
pub fn jackknife_bias_correct(
    dataset: &PanelDataset,
    counts: &FactorCounts,
    options: &FitOptions,
    axis: Axis,
    index: usize,
) -> Result<JackknifeResult> {
    if dataset.l() < 4 || dataset.n_units() < 4 {
        return Err(Error::InvalidConfig(format!(
            "jackknife needs at least 4 units per axis, got L = {}, N = {}",
            dataset.l(),
            dataset.n_units()
        )));
    }
    let own_units = match axis {
        Axis::Country => dataset.l(),
        Axis::Industry => dataset.n_units(),
    };
    if index >= own_units {
        return Err(Error::dim("jackknife_bias_correct", format!("unit < {own_units}"), format!("{index}")));
    }

    let full_fit = fit(dataset, counts, options)?;
    let full = mean_group(dataset, &full_fit.beta_final, axis)?[index].clone();

    let (own_a, own_b) = half_split(own_units);
    let own_halves = [with_target(&own_a, index), with_target(&own_b, index)];
    let other_units = match axis {
        Axis::Country => dataset.n_units(),
        Axis::Industry => dataset.l(),
    };
    let (other_a, other_b) = half_split(other_units);
    let other_halves = [other_a, other_b];

    let mut quarters = Vec::with_capacity(4);
    for q in 0..4usize {
        let own = &own_halves[q / 2];
        let other = &other_halves[q % 2];
        let (keep_i, keep_j) = match axis {
            Axis::Country => (own.as_slice(), other.as_slice()),
            Axis::Industry => (other.as_slice(), own.as_slice()),
        };
        let (sub, map) = dataset.subset(keep_i, keep_j)?;
        let sub_counts = FactorCounts {
            global: counts.global,
            country: map.country.iter().map(|&i| counts.country[i]).collect(),
            industry: map.industry.iter().map(|&j| counts.industry[j]).collect(),
        };
        let quarter_seed = substream(options.seed, &[70, q as u64]).random::<u64>();
        let quarter_options = FitOptions {
            seed: quarter_seed,
            ..options.clone()
        };
        let sub_fit = fit(&sub, &sub_counts, &quarter_options)?;
        let kept = match axis {
            Axis::Country => &map.country,
            Axis::Industry => &map.industry,
        };
        let new_index = kept
            .iter()
            .position(|&orig| orig == index)
            .ok_or_else(|| Error::InvalidData("target unit missing from quarter sample".into()))?;
        quarters.push(mean_group(&sub, &sub_fit.beta_final, axis)?[new_index].clone());
    }

    let corrected = jackknife_combine(&full, &quarters)?;
    Ok(JackknifeResult {
        full,
        quarters,
        corrected,
    })
}
