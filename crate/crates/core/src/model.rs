//! Panel data containers and the quantities estimated from them.
//!
//! A dataset holds one observation block per (country, industry) pair that is
//! present in the panel. Blocks are stored sorted by `(i, j)` and every API in
//! the crate that aggregates over blocks walks them in that order, which pins
//! down floating point results regardless of thread count.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// The two local factor families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Factors shared within a country `i` across its industries.
    Country,
    /// Factors shared within an industry `j` across countries.
    Industry,
}

/// Observations for one (country, industry) pair over the common time span.
#[derive(Debug, Clone)]
pub struct Block {
    pub i: usize,
    pub j: usize,
    /// `T` responses.
    pub y: DVector<f64>,
    /// `T × d` regressors.
    pub x: DMatrix<f64>,
}

/// A three-dimensional panel with a common time span.
///
/// The industry index set is the union of labels observed across countries;
/// an industry absent from some country simply contributes fewer blocks to
/// that industry's aggregates.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    l: usize,
    n_units: usize,
    t: usize,
    d: usize,
    blocks: Vec<Block>,
    country_blocks: Vec<Vec<usize>>,
    industry_blocks: Vec<Vec<usize>>,
}

/// Mapping from a subset panel back to the indices of its parent.
#[derive(Debug, Clone)]
pub struct SubsetIndex {
    /// Parent country index for each subset country.
    pub country: Vec<usize>,
    /// Parent industry index for each subset industry.
    pub industry: Vec<usize>,
    /// Parent block position for each subset block.
    pub blocks: Vec<usize>,
}

impl PanelDataset {
    /// Builds a dataset from blocks, sorting them by `(i, j)`.
    ///
    /// Every country in `0..l` and industry in `0..n_units` must own at least
    /// one block, block shapes must agree, and (i, j) pairs must be unique.
    pub fn from_blocks(l: usize, n_units: usize, t: usize, d: usize, mut blocks: Vec<Block>) -> Result<Self> {
        if l == 0 || n_units == 0 || t == 0 || d == 0 {
            return Err(Error::InvalidData("all of L, N, T, d must be positive".into()));
        }
        blocks.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));
        let mut country_blocks = vec![Vec::new(); l];
        let mut industry_blocks = vec![Vec::new(); n_units];
        let mut last: Option<(usize, usize)> = None;
        for (idx, b) in blocks.iter().enumerate() {
            if b.i >= l || b.j >= n_units {
                return Err(Error::InvalidData(format!(
                    "block ({}, {}) outside declared index ranges {}x{}",
                    b.i, b.j, l, n_units
                )));
            }
            if last == Some((b.i, b.j)) {
                return Err(Error::InvalidData(format!("duplicate block ({}, {})", b.i, b.j)));
            }
            last = Some((b.i, b.j));
            if b.y.len() != t || b.x.nrows() != t || b.x.ncols() != d {
                return Err(Error::InvalidData(format!(
                    "block ({}, {}) has shape y:{} x:{}x{}, expected y:{} x:{}x{}",
                    b.i,
                    b.j,
                    b.y.len(),
                    b.x.nrows(),
                    b.x.ncols(),
                    t,
                    t,
                    d
                )));
            }
            country_blocks[b.i].push(idx);
            industry_blocks[b.j].push(idx);
        }
        for (i, ids) in country_blocks.iter().enumerate() {
            if ids.is_empty() {
                return Err(Error::InvalidData(format!("country {i} has no blocks")));
            }
        }
        for (j, ids) in industry_blocks.iter().enumerate() {
            if ids.is_empty() {
                return Err(Error::InvalidData(format!("industry {j} has no blocks")));
            }
        }
        Ok(Self {
            l,
            n_units,
            t,
            d,
            blocks,
            country_blocks,
            industry_blocks,
        })
    }

    /// Builds a balanced `L × N` panel from a per-block constructor.
    pub fn balanced<F>(l: usize, n: usize, t: usize, d: usize, mut make: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> (DVector<f64>, DMatrix<f64>),
    {
        let mut blocks = Vec::with_capacity(l * n);
        for i in 0..l {
            for j in 0..n {
                let (y, x) = make(i, j);
                blocks.push(Block { i, j, y, x });
            }
        }
        Self::from_blocks(l, n, t, d, blocks)
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Number of distinct industry labels (the union across countries).
    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of industries present in country `i`.
    pub fn n_for(&self, i: usize) -> usize {
        self.country_blocks[i].len()
    }

    /// Total block count `Σᵢ Nᵢ`.
    pub fn total_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Block positions belonging to country `i`, sorted by industry.
    pub fn country_block_ids(&self, i: usize) -> &[usize] {
        &self.country_blocks[i]
    }

    /// Block positions belonging to industry `j`, sorted by country.
    pub fn industry_block_ids(&self, j: usize) -> &[usize] {
        &self.industry_blocks[j]
    }

    /// Position of block `(i, j)` if that pair is observed.
    pub fn block_index(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.l {
            return None;
        }
        self.country_blocks[i]
            .binary_search_by(|&idx| self.blocks[idx].j.cmp(&j))
            .ok()
            .map(|pos| self.country_blocks[i][pos])
    }

    pub fn is_balanced(&self) -> bool {
        self.blocks.len() == self.l * self.n_units
    }

    /// Restricts the panel to the given parent countries and industries.
    ///
    /// Index lists must be strictly increasing. Countries or industries left
    /// without blocks are dropped; the returned map records the surviving
    /// parent indices in order.
    pub fn subset(&self, keep_i: &[usize], keep_j: &[usize]) -> Result<(PanelDataset, SubsetIndex)> {
        if keep_i.windows(2).any(|w| w[0] >= w[1]) || keep_j.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("subset index lists must be strictly increasing".into()));
        }
        if keep_i.iter().any(|&i| i >= self.l) || keep_j.iter().any(|&j| j >= self.n_units) {
            return Err(Error::InvalidConfig("subset index out of range".into()));
        }
        let in_i: Vec<bool> = (0..self.l).map(|i| keep_i.binary_search(&i).is_ok()).collect();
        let in_j: Vec<bool> = (0..self.n_units).map(|j| keep_j.binary_search(&j).is_ok()).collect();
        let mut survivors_i = BTreeMap::new();
        let mut survivors_j = BTreeMap::new();
        let mut block_map = Vec::new();
        for (idx, b) in self.blocks.iter().enumerate() {
            if in_i[b.i] && in_j[b.j] {
                survivors_i.entry(b.i).or_insert(0usize);
                survivors_j.entry(b.j).or_insert(0usize);
                block_map.push(idx);
            }
        }
        for (rank, v) in survivors_i.values_mut().enumerate() {
            *v = rank;
        }
        for (rank, v) in survivors_j.values_mut().enumerate() {
            *v = rank;
        }
        let blocks: Vec<Block> = block_map
            .iter()
            .map(|&idx| {
                let b = &self.blocks[idx];
                Block {
                    i: survivors_i[&b.i],
                    j: survivors_j[&b.j],
                    y: b.y.clone(),
                    x: b.x.clone(),
                }
            })
            .collect();
        let sub = PanelDataset::from_blocks(survivors_i.len(), survivors_j.len(), self.t, self.d, blocks)?;
        // from_blocks keeps (i, j) order, which matches block_map's order.
        let index = SubsetIndex {
            country: survivors_i.keys().copied().collect(),
            industry: survivors_j.keys().copied().collect(),
            blocks: block_map,
        };
        Ok((sub, index))
    }

    /// Checks structural and numeric soundness, returning every violation.
    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        if self.t <= self.d + 1 {
            issues.push(ValidationIssue::TimeTooShort { t: self.t, d: self.d });
        }
        for b in &self.blocks {
            let mut bad: Option<(usize, &'static str)> = None;
            for t in 0..self.t {
                if !b.y[t].is_finite() {
                    bad = Some((t, "y"));
                    break;
                }
                for s in 0..self.d {
                    if !b.x[(t, s)].is_finite() {
                        bad = Some((t, "x"));
                        break;
                    }
                }
                if bad.is_some() {
                    break;
                }
            }
            if let Some((t, what)) = bad {
                issues.push(ValidationIssue::NonFinite {
                    i: b.i,
                    j: b.j,
                    t,
                    what,
                });
            }
        }
        ValidationReport { issues }
    }
}

/// One violation found by [`PanelDataset::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    /// `T` must exceed `d + 1` for the block regressions to be identified.
    TimeTooShort { t: usize, d: usize },
    /// A non-finite value at the named observation.
    NonFinite {
        i: usize,
        j: usize,
        t: usize,
        what: &'static str,
    },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::TimeTooShort { t, d } => {
                write!(f, "time dimension T={t} must exceed d+1={}", d + 1)
            }
            ValidationIssue::NonFinite { i, j, t, what } => {
                write!(f, "non-finite {what} value at block (i={i}, j={j}), period {t}")
            }
        }
    }
}

/// Outcome of dataset validation; empty iff the dataset is usable.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    /// Converts a failed report into an error listing every violation.
    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            let text: Vec<String> = self.issues.iter().map(|i| i.to_string()).collect();
            Err(Error::InvalidData(text.join("; ")))
        }
    }
}

/// Numbers of factors at each level: one global count, one per country, one
/// per industry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorCounts {
    pub global: usize,
    pub country: Vec<usize>,
    pub industry: Vec<usize>,
}

impl FactorCounts {
    /// Same local count for every country and industry.
    pub fn uniform(l: usize, n_units: usize, global: usize, country: usize, industry: usize) -> Self {
        Self {
            global,
            country: vec![country; l],
            industry: vec![industry; n_units],
        }
    }

    pub fn zeros(l: usize, n_units: usize) -> Self {
        Self::uniform(l, n_units, 0, 0, 0)
    }

    /// Checks the counts against a dataset and a total-factor ceiling.
    ///
    /// The ceiling bounds `global + max country + max industry`; estimation
    /// additionally needs `T` to exceed the per-block factor count plus `d`.
    pub fn validate(&self, dataset: &PanelDataset, c_max: usize) -> Result<()> {
        if self.country.len() != dataset.l() {
            return Err(Error::dim(
                "FactorCounts::validate",
                format!("{} country counts", dataset.l()),
                format!("{}", self.country.len()),
            ));
        }
        if self.industry.len() != dataset.n_units() {
            return Err(Error::dim(
                "FactorCounts::validate",
                format!("{} industry counts", dataset.n_units()),
                format!("{}", self.industry.len()),
            ));
        }
        let max_c = self.country.iter().copied().max().unwrap_or(0);
        let max_i = self.industry.iter().copied().max().unwrap_or(0);
        if self.global + max_c + max_i > c_max {
            return Err(Error::InvalidConfig(format!(
                "total factor count {} exceeds ceiling {c_max}",
                self.global + max_c + max_i
            )));
        }
        for b in dataset.blocks() {
            let k = self.global + self.country[b.i] + self.industry[b.j];
            if dataset.t() <= k + dataset.d() {
                return Err(Error::InvalidConfig(format!(
                    "block ({}, {}) would have {} factors plus {} regressors with only T={} periods",
                    b.i,
                    b.j,
                    k,
                    dataset.d(),
                    dataset.t()
                )));
            }
        }
        Ok(())
    }
}

/// Estimated factor blocks, all `√T`-normalized.
///
/// Local blocks are constructed inside the column space orthogonal to the
/// global block, so `(1/T) global ᵀ · local ≈ 0` by construction.
#[derive(Debug, Clone)]
pub struct FactorEstimates {
    /// `T × ℓ` global factors.
    pub global: DMatrix<f64>,
    /// Per-country `T × ℓ°ᵢ` factors.
    pub country: Vec<DMatrix<f64>>,
    /// Per-industry `T × ℓ•ⱼ` factors.
    pub industry: Vec<DMatrix<f64>>,
    /// Eigenvalues behind each extracted block, descending.
    pub global_eigvals: Vec<f64>,
    pub country_eigvals: Vec<Vec<f64>>,
    pub industry_eigvals: Vec<Vec<f64>>,
}

impl FactorEstimates {
    /// Zero-count estimates: every block empty.
    pub fn empty(t: usize, l: usize, n_units: usize) -> Self {
        Self {
            global: DMatrix::zeros(t, 0),
            country: vec![DMatrix::zeros(t, 0); l],
            industry: vec![DMatrix::zeros(t, 0); n_units],
            global_eigvals: Vec::new(),
            country_eigvals: vec![Vec::new(); l],
            industry_eigvals: vec![Vec::new(); n_units],
        }
    }

    pub fn counts(&self) -> FactorCounts {
        FactorCounts {
            global: self.global.ncols(),
            country: self.country.iter().map(|c| c.ncols()).collect(),
            industry: self.industry.iter().map(|c| c.ncols()).collect(),
        }
    }

    /// Verifies normalization and orthogonality invariants.
    ///
    /// Every block must satisfy `(1/T) CᵀC = I` within `ortho_tol`, and local
    /// blocks must be orthogonal to the global block within `cross_tol`.
    pub fn check_invariants(&self, t: usize, ortho_tol: f64, cross_tol: f64) -> Result<()> {
        let check_block = |c: &DMatrix<f64>, name: &'static str| -> Result<()> {
            if c.nrows() != t {
                return Err(Error::dim("FactorEstimates", format!("{t} rows"), format!("{} rows in {name}", c.nrows())));
            }
            if c.ncols() == 0 {
                return Ok(());
            }
            let gram = c.transpose() * c / (t as f64);
            let eye = DMatrix::<f64>::identity(c.ncols(), c.ncols());
            if (gram - eye).norm() > ortho_tol {
                return Err(Error::Numerical {
                    context: "FactorEstimates",
                    detail: format!("{name} block is not orthonormal within {ortho_tol:e}"),
                });
            }
            Ok(())
        };
        check_block(&self.global, "global")?;
        for c in &self.country {
            check_block(c, "country")?;
        }
        for c in &self.industry {
            check_block(c, "industry")?;
        }
        if self.global.ncols() > 0 {
            for (name, list) in [("country", &self.country), ("industry", &self.industry)] {
                for c in list.iter() {
                    if c.ncols() == 0 {
                        continue;
                    }
                    let cross = self.global.transpose() * c / (t as f64);
                    if cross.norm() > cross_tol {
                        return Err(Error::Numerical {
                            context: "FactorEstimates",
                            detail: format!("global and {name} blocks are not orthogonal within {cross_tol:e}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-block coefficient vectors, aligned with `PanelDataset::blocks`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientEstimates {
    pub values: Vec<DVector<f64>>,
}

impl CoefficientEstimates {
    pub fn zeros(dataset: &PanelDataset) -> Self {
        Self {
            values: vec![DVector::zeros(dataset.d()); dataset.total_blocks()],
        }
    }

    /// Frobenius norm of the difference across all blocks.
    pub fn diff_norm(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Largest absolute coefficient difference across blocks and regressors.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs().max())
            .fold(0.0, f64::max)
    }
}

/// Everything the simulator knows about a generated panel.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// True coefficients, aligned with the dataset's blocks.
    pub beta: Vec<DVector<f64>>,
    pub counts: FactorCounts,
    /// `T × ℓ` global factors.
    pub f_global: DMatrix<f64>,
    /// Per-country and per-industry factor paths.
    pub f_country: Vec<DMatrix<f64>>,
    pub f_industry: Vec<DMatrix<f64>>,
    /// Response loadings per block, aligned with the dataset's blocks.
    pub gamma_global: Vec<DVector<f64>>,
    pub gamma_country: Vec<DVector<f64>>,
    pub gamma_industry: Vec<DVector<f64>>,
    /// Regressor loadings per block (`count × d`).
    pub phi_global: Vec<DMatrix<f64>>,
    pub phi_country: Vec<DMatrix<f64>>,
    pub phi_industry: Vec<DMatrix<f64>>,
}
