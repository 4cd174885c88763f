//! Property-based checks of the algebraic contracts the estimator relies on:
//! projector geometry, truncated eigendecompositions, the eigenvalue-ratio
//! criterion, and the reporting metrics.

use hpanel_core::linalg::{annihilator, orthonormalize_columns, projector, sym_eig_desc};
use hpanel_core::metrics::{mean_sq_projector_dist, rmse_beta, rmse_factor_space};
use hpanel_core::model::CoefficientEstimates;
use hpanel_core::select::select_count;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Random `t x k` matrix whose leading `k x k` block is diagonally dominated,
/// so the columns are linearly independent by construction.
fn full_rank_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (6usize..=20, 1usize..=4).prop_flat_map(|(t, k)| {
        prop::collection::vec(-1.0f64..1.0, t * k).prop_map(move |vals| {
            let mut m = DMatrix::from_vec(t, k, vals);
            for c in 0..k {
                m[(c, c)] += 50.0;
            }
            m
        })
    })
}

/// Random positive semidefinite matrix with a requested eigenpair count.
fn psd_with_k() -> impl Strategy<Value = (DMatrix<f64>, usize)> {
    (3usize..=10).prop_flat_map(|n| {
        (prop::collection::vec(-1.0f64..1.0, n * n), 1usize..=n).prop_map(move |(vals, k)| {
            let b = DMatrix::from_vec(n, n, vals);
            ((&b * b.transpose()) / n as f64, k)
        })
    })
}

/// Positive spectrum sorted in descending order, longer than `d_max + 1`
/// by a small tail.
fn spectrum() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2usize..=5, 0usize..=2).prop_flat_map(|(d_max, extra)| {
        prop::collection::vec(1e-6f64..4.0, d_max + 1 + extra).prop_map(move |mut v| {
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            (v, d_max)
        })
    })
}

/// Spectrum with `k` strong values decaying gently from 1, then a cliff to
/// values far below the threshold. The ratio criterion must pick `k`.
fn cliff_spectrum() -> impl Strategy<Value = (Vec<f64>, f64, usize, usize)> {
    (2usize..=5)
        .prop_flat_map(|d_max| {
            (
                Just(d_max),
                1usize..=d_max,
                0.05f64..0.30,
                prop::collection::vec(0.90f64..0.97, d_max + 1),
            )
        })
        .prop_map(|(d_max, k, omega, ratios)| {
            let mut vals = Vec::with_capacity(d_max + 1);
            let mut level = 1.0f64;
            for r in ratios.iter().take(k) {
                level *= r;
                vals.push(level);
            }
            let mut weak = omega * 1e-3;
            for r in ratios.iter().take(d_max + 1 - k) {
                weak *= r;
                vals.push(weak);
            }
            (vals, omega, k, d_max)
        })
}

/// Replication lists for the metric tests plus a permutation of their order.
#[allow(clippy::type_complexity)]
fn replications() -> impl Strategy<Value = (Vec<CoefficientEstimates>, Vec<Vec<DVector<f64>>>, Vec<usize>)> {
    (2usize..=5, 1usize..=3, 1usize..=3).prop_flat_map(|(r, blocks, d)| {
        let total = r * blocks * d;
        (
            prop::collection::vec(-3.0f64..3.0, total),
            prop::collection::vec(-3.0f64..3.0, total),
            Just((0..r).collect::<Vec<usize>>()).prop_shuffle(),
        )
            .prop_map(move |(e, t, perm)| {
                let mut est = Vec::with_capacity(r);
                let mut truth = Vec::with_capacity(r);
                let mut idx = 0;
                for _ in 0..r {
                    let mut ev = Vec::with_capacity(blocks);
                    let mut tv = Vec::with_capacity(blocks);
                    for _ in 0..blocks {
                        ev.push(DVector::from_fn(d, |q, _| e[idx + q]));
                        tv.push(DVector::from_fn(d, |q, _| t[idx + q]));
                        idx += d;
                    }
                    est.push(CoefficientEstimates { values: ev });
                    truth.push(tv);
                }
                (est, truth, perm)
            })
    })
}

/// Factor matrices sharing a column count, plus an orthogonal mix for them.
fn factor_pair() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    (6usize..=16, 1usize..=3).prop_flat_map(|(t, k)| {
        (
            prop::collection::vec(-1.0f64..1.0, t * k),
            prop::collection::vec(-1.0f64..1.0, t * k),
            prop::collection::vec(-1.0f64..1.0, k * k),
        )
            .prop_map(move |(a, b, g)| {
                let mut ma = DMatrix::from_vec(t, k, a);
                let mut mb = DMatrix::from_vec(t, k, b);
                let mut mg = DMatrix::from_vec(k, k, g);
                for c in 0..k {
                    ma[(c, c)] += 50.0;
                    mb[(c, c)] += 50.0;
                    mg[(c, c)] += 10.0;
                }
                (ma, mb, mg.qr().q())
            })
    })
}

proptest! {
    #[test]
    fn projector_is_idempotent_symmetric_and_rank_revealing(m in full_rank_matrix()) {
        let p = projector(&m);
        prop_assert!((&p * &p - &p).norm() < 1e-10);
        prop_assert!((p.transpose() - &p).norm() < 1e-12);
        prop_assert!((p.trace() - m.ncols() as f64).abs() < 1e-8);
        prop_assert!((&p * &m - &m).norm() <= 1e-9 * m.norm());
        // A duplicated column changes the basis but not the span.
        let mut wide = DMatrix::zeros(m.nrows(), m.ncols() + 1);
        wide.columns_mut(0, m.ncols()).copy_from(&m);
        wide.set_column(m.ncols(), &(m.column(0) * 2.0));
        prop_assert!((projector(&wide) - &p).norm() < 1e-9);
    }

    #[test]
    fn annihilator_complements_the_projector(m in full_rank_matrix()) {
        let p = projector(&m);
        let a = annihilator(&m);
        let eye = DMatrix::<f64>::identity(m.nrows(), m.nrows());
        prop_assert!((&p + &a - eye).norm() < 1e-12);
        prop_assert!((&a * &m).norm() <= 1e-9 * m.norm());
        prop_assert!((&a * &a - &a).norm() < 1e-10);
    }

    #[test]
    fn orthonormalization_preserves_the_span(m in full_rank_matrix()) {
        let c = orthonormalize_columns(&m).unwrap();
        let t = m.nrows() as f64;
        let gram = c.transpose() * &c / t;
        let eye = DMatrix::<f64>::identity(m.ncols(), m.ncols());
        prop_assert!((gram - eye).norm() < 1e-10);
        prop_assert!((projector(&c) - projector(&m)).norm() < 1e-8);
    }

    #[test]
    fn truncated_eigenexpansion_is_a_best_rank_k_approximation((s, k) in psd_with_k()) {
        let n = s.nrows();
        let pairs = sym_eig_desc(&s, k).unwrap();
        for w in pairs.values.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        let mut approx = DMatrix::<f64>::zeros(n, n);
        for c in 0..k {
            let v = pairs.vectors.column(c).clone_owned();
            prop_assert!((v.norm_squared() - n as f64).abs() < 1e-8 * n as f64);
            let resid = &s * &v - pairs.values[c] * &v;
            prop_assert!(resid.norm() <= 1e-8 * (1.0 + s.norm()) * v.norm());
            approx += (&v * v.transpose()) * (pairs.values[c] / n as f64);
        }
        let mut svd = s.clone().svd(true, true);
        for i in k..svd.singular_values.len() {
            svd.singular_values[i] = 0.0;
        }
        let best = svd.recompose().unwrap();
        prop_assert!((&s - &approx).norm() <= (&s - &best).norm() + 1e-8);
    }

    #[test]
    fn chosen_count_stays_in_bounds_and_ignores_the_tail(
        (vals, d_max) in spectrum(),
        omega in 0.01f64..1.5,
    ) {
        let count = select_count(&vals, omega, d_max).unwrap();
        prop_assert!(count <= d_max);
        let head = select_count(&vals[..d_max + 1], omega, d_max).unwrap();
        prop_assert_eq!(count, head);
    }

    #[test]
    fn raising_the_threshold_never_raises_the_count(
        (vals, d_max) in spectrum(),
        pair in (0.01f64..1.5, 0.01f64..1.5),
    ) {
        let (lo, hi) = if pair.0 <= pair.1 { pair } else { (pair.1, pair.0) };
        let c_lo = select_count(&vals, lo, d_max).unwrap();
        let c_hi = select_count(&vals, hi, d_max).unwrap();
        prop_assert!(c_hi <= c_lo);
    }

    #[test]
    fn cliff_position_is_selected_and_scale_free(
        (vals, omega, k, d_max) in cliff_spectrum(),
        c in 1.5f64..10.0,
    ) {
        prop_assert_eq!(select_count(&vals, omega, d_max).unwrap(), k);
        // Rescaling the values above the threshold preserves every ratio the
        // winner competes on, so the choice is unchanged.
        let scaled: Vec<f64> = vals.iter().map(|&v| if v >= omega { v * c } else { v }).collect();
        prop_assert_eq!(select_count(&scaled, omega, d_max).unwrap(), k);
    }

    #[test]
    fn coefficient_rmse_ignores_replication_order((est, truth, perm) in replications()) {
        let base = rmse_beta(&est, &truth).unwrap();
        let est_p: Vec<_> = perm.iter().map(|&i| est[i].clone()).collect();
        let truth_p: Vec<_> = perm.iter().map(|&i| truth[i].clone()).collect();
        let permuted = rmse_beta(&est_p, &truth_p).unwrap();
        prop_assert!((base - permuted).abs() <= 1e-12 * (1.0 + base));
    }

    #[test]
    fn factor_space_rmse_is_rotation_invariant((est, truth, q) in factor_pair()) {
        let base = rmse_factor_space(&[vec![est.clone()]], &[vec![truth.clone()]]).unwrap();
        let rotated = rmse_factor_space(&[vec![&est * &q]], &[vec![truth]]).unwrap();
        prop_assert!((base - rotated).abs() < 1e-10);
        // An orthogonal mix of the same basis spans the same space exactly.
        let same = mean_sq_projector_dist(&[&est * &q], &[est.clone()]).unwrap();
        prop_assert!(same < 1e-10);
    }
}
