//! Shared linear algebra kernels for factor extraction.
//!
//! Factor blocks throughout the crate are stored column-wise and normalized
//! so that `(1/T) Cᵀ C = I`. Projectors built from such blocks reduce to
//! `C Cᵀ / T`, which the estimation loops exploit heavily. Eigenvector and
//! singular vector signs follow one convention everywhere: in each column the
//! entry of largest absolute value is positive, ties broken by the lowest row
//! index.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative singular value cutoff below which a matrix counts as rank deficient.
pub const RANK_REL_TOL: f64 = 1e-12;

/// Top eigenvalues, in descending order, with their `√T`-scaled eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// `T × k` matrix whose columns satisfy `(1/T) VᵀV = I`.
    pub vectors: DMatrix<f64>,
}

/// Fixes column signs: largest-magnitude entry positive, ties to lowest row.
pub(crate) fn sign_normalize_columns(m: &mut DMatrix<f64>) {
    for c in 0..m.ncols() {
        let mut best_row = 0usize;
        let mut best_abs = 0.0f64;
        for r in 0..m.nrows() {
            let a = m[(r, c)].abs();
            if a > best_abs {
                best_abs = a;
                best_row = r;
            }
        }
        if best_abs > 0.0 && m[(best_row, c)] < 0.0 {
            for r in 0..m.nrows() {
                m[(r, c)] = -m[(r, c)];
            }
        }
    }
}

/// Returns a `√T`-normalized orthonormal basis for the column span of `m`.
///
/// The result `C` satisfies `(1/T) CᵀC = I` and spans the same space as `m`.
/// A zero-column input passes through unchanged.
pub fn orthonormalize_columns(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (t, k) = (m.nrows(), m.ncols());
    if k == 0 {
        return Ok(m.clone());
    }
    if k > t {
        return Err(Error::dim("orthonormalize_columns", format!("k <= {t}"), format!("k = {k}")));
    }
    let svd = m.clone().svd(true, false);
    let sigma = &svd.singular_values;
    if sigma[0] <= 0.0 || sigma[k - 1] < RANK_REL_TOL * sigma[0] {
        return Err(Error::RankDeficient {
            context: "orthonormalize_columns",
            tol: RANK_REL_TOL,
        });
    }
    let mut c = svd.u.expect("left singular vectors requested") * (t as f64).sqrt();
    sign_normalize_columns(&mut c);
    Ok(c)
}

/// Orthogonal projector onto the column span of `c`.
///
/// Rank-deficient inputs project onto the span, so duplicate columns behave
/// like a single copy. A zero-column input yields the zero matrix.
pub fn projector(c: &DMatrix<f64>) -> DMatrix<f64> {
    let t = c.nrows();
    if c.ncols() == 0 {
        return DMatrix::zeros(t, t);
    }
    let svd = c.clone().svd(true, false);
    let sigma = &svd.singular_values;
    if sigma[0] <= 0.0 {
        return DMatrix::zeros(t, t);
    }
    let u = svd.u.expect("left singular vectors requested");
    let rank = sigma.iter().filter(|s| **s >= RANK_REL_TOL * sigma[0]).count();
    let ur = u.columns(0, rank);
    &ur * ur.transpose()
}

/// Annihilator `I − P` of the column span of `c`.
pub fn annihilator(c: &DMatrix<f64>) -> DMatrix<f64> {
    let t = c.nrows();
    let mut m = -projector(c);
    for r in 0..t {
        m[(r, r)] += 1.0;
    }
    m
}

/// Top-`k` eigenpairs of the symmetrized `s`, eigenvalues descending.
///
/// `s` is replaced by `(s + sᵀ)/2` before decomposition so callers may pass
/// matrices that are symmetric only up to rounding. Eigenvectors are scaled
/// by `√T` and sign-normalized.
pub fn sym_eig_desc(s: &DMatrix<f64>, k: usize) -> Result<EigenPairs> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::dim("sym_eig_desc", format!("{n}x{n}"), format!("{}x{}", n, s.ncols())));
    }
    if k > n {
        return Err(Error::dim("sym_eig_desc", format!("k <= {n}"), format!("k = {k}")));
    }
    if k == 0 {
        return Ok(EigenPairs {
            values: Vec::new(),
            vectors: DMatrix::zeros(n, 0),
        });
    }
    let mut sym = s.clone();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (sym[(r, c)] + sym[(c, r)]);
            sym[(r, c)] = v;
            sym[(c, r)] = v;
        }
    }
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
            .then(a.cmp(&b))
    });
    let scale = (n as f64).sqrt();
    let mut vectors = DMatrix::zeros(n, k);
    let mut values = Vec::with_capacity(k);
    for (out_col, &idx) in order.iter().take(k).enumerate() {
        values.push(eig.eigenvalues[idx]);
        for r in 0..n {
            vectors[(r, out_col)] = eig.eigenvectors[(r, idx)] * scale;
        }
    }
    sign_normalize_columns(&mut vectors);
    Ok(EigenPairs { values, vectors })
}

/// Applies `P_C` to `m` for a `√T`-normalized block: `C (Cᵀ m) / T`.
pub(crate) fn project_normalized(c: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let t = c.nrows();
    if c.ncols() == 0 {
        return DMatrix::zeros(t, m.ncols());
    }
    let coef = c.transpose() * m / (t as f64);
    c * coef
}

/// Top-`k` eigenvalues of `(G Gᵀ)/denom` via the `n × n` Gram matrix of the
/// `T × n` input, clipped at zero and zero-padded to length `k`.
///
/// Valid because `G Gᵀ` and `GᵀG` share nonzero eigenvalues; the remaining
/// `T − n` eigenvalues of the outer product are exactly zero.
pub(crate) fn gram_spectrum(g: &DMatrix<f64>, k: usize, denom: f64) -> Vec<f64> {
    let gram = g.transpose() * g;
    let mut vals: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().map(|v| (v / denom).max(0.0)).collect();
    vals.sort_by(|a, b| b.partial_cmp(a).expect("eigenvalues are finite"));
    vals.truncate(k);
    vals.resize(k, 0.0);
    vals
}

/// Top-`k` eigenpairs of `(G Gᵀ)/denom` for a `T × n` matrix `g`.
///
/// Uses the Gram route (`n × n` eigenproblem) when the requested pairs are
/// well separated from zero; otherwise falls back to the dense `T × T`
/// decomposition so near-null directions still come out orthonormal.
pub(crate) fn gram_top_eigpairs(g: &DMatrix<f64>, k: usize, denom: f64) -> Result<EigenPairs> {
    let (t, n) = (g.nrows(), g.ncols());
    if k == 0 {
        return Ok(EigenPairs {
            values: Vec::new(),
            vectors: DMatrix::zeros(t, 0),
        });
    }
    if k <= n {
        let gram = g.transpose() * g;
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("eigenvalues are finite")
                .then(a.cmp(&b))
        });
        let mu_max = eig.eigenvalues[order[0]].max(0.0);
        let mu_min = eig.eigenvalues[order[k - 1]];
        if mu_min > mu_max * 1e-26 && mu_min > 0.0 {
            let scale = (t as f64).sqrt();
            let mut vectors = DMatrix::zeros(t, k);
            let mut values = Vec::with_capacity(k);
            for (out_col, &idx) in order.iter().take(k).enumerate() {
                let mu = eig.eigenvalues[idx];
                values.push(mu / denom);
                let dir = g * eig.eigenvectors.column(idx);
                let inv_norm = scale / mu.sqrt();
                for r in 0..t {
                    vectors[(r, out_col)] = dir[r] * inv_norm;
                }
            }
            sign_normalize_columns(&mut vectors);
            return Ok(EigenPairs { values, vectors });
        }
    }
    // Degenerate or over-asked spectrum: decompose the outer product directly.
    let outer = g * g.transpose() / denom;
    sym_eig_desc(&outer, k.min(t))
}
