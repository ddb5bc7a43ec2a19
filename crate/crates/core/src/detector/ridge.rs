use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

/// Ridge least squares: `argmin ‖HW − T‖² + λ‖W‖²`.
///
/// Solved through the normal equations `(HᵀH + λI) W = HᵀT` with a Cholesky
/// factorization. A singular system is reported rather than pseudo-inverted.
pub fn ridge_solve(h: &DMatrix<f64>, t: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if h.nrows() == 0 || h.ncols() == 0 {
        return Err(Error::Numerical(
            "ridge_solve needs a non-empty design matrix".into(),
        ));
    }
    if h.nrows() != t.nrows() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            found: t.nrows(),
        });
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Numerical(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if h.iter().chain(t.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "ridge_solve input contains non-finite entries".into(),
        ));
    }

    let mut gram = h.tr_mul(h);
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = h.tr_mul(t);
    let chol = Cholesky::new(gram).ok_or_else(|| {
        if lambda == 0.0 {
            Error::Numerical("normal equations are singular with lambda = 0; use lambda > 0".into())
        } else {
            Error::Numerical(format!(
                "normal equations are not positive definite (lambda = {lambda})"
            ))
        }
    })?;
    // A factorization can succeed on a numerically rank-deficient Gram matrix
    // and produce garbage; catch that through the diagonal of L.
    let l = chol.l_dirty();
    let (min, max) = (0..l.nrows()).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
        let d = l[(i, i)].abs();
        (lo.min(d), hi.max(d))
    });
    if lambda == 0.0 && (min == 0.0 || min / max < 1e-7) {
        return Err(Error::Numerical(
            "normal equations are singular with lambda = 0; use lambda > 0".into(),
        ));
    }
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("ridge solution is not finite".into()));
    }
    Ok(w)
}

/// Value of the regularized objective `‖HW − T‖² + λ‖W‖²`.
pub fn ridge_objective(h: &DMatrix<f64>, t: &DMatrix<f64>, w: &DMatrix<f64>, lambda: f64) -> f64 {
    (h * w - t).norm_squared() + lambda * w.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gauss-Jordan inverse with partial pivoting, kept independent of nalgebra's solvers.
    fn naive_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut m: Vec<Vec<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = row.clone();
                r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                r
            })
            .collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
                .unwrap();
            m.swap(col, pivot);
            let p = m[col][col];
            m[col].iter_mut().for_each(|v| *v /= p);
            for row in 0..n {
                if row != col {
                    let f = m[row][col];
                    let src = m[col].clone();
                    m[row].iter_mut().zip(&src).for_each(|(v, s)| *v -= f * s);
                }
            }
        }
        m.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    fn oracle(h: &DMatrix<f64>, t: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
        let (n, k) = h.shape();
        let gram: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        (0..n).map(|r| h[(r, i)] * h[(r, j)]).sum::<f64>()
                            + if i == j { lambda } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        let inv = naive_inverse(&gram);
        DMatrix::from_fn(k, t.ncols(), |i, c| {
            (0..k)
                .map(|j| inv[i][j] * (0..n).map(|r| h[(r, j)] * t[(r, c)]).sum::<f64>())
                .sum()
        })
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_cases() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!((ridge_solve(&i3, &i3, 0.0).unwrap() - &i3).amax() < 1e-15);
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert!((ridge_solve(&i2, &i2, 1.0).unwrap() - i2 * 0.5).amax() < 1e-15);
    }

    #[test]
    fn matches_dense_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random(&mut rng, 5, 3);
        let t = random(&mut rng, 5, 2);
        let w = ridge_solve(&h, &t, 0.1).unwrap();
        assert!((w - oracle(&h, &t, 0.1)).amax() < 1e-8);
    }

    #[test]
    fn singular_without_regularization_is_an_error() {
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let t = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        match ridge_solve(&h, &t, 0.0) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("lambda > 0")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(ridge_solve(&h, &t, 1e-3).is_ok());
    }

    #[test]
    fn rejects_bad_input() {
        let h = DMatrix::from_element(2, 2, 1.0);
        assert!(ridge_solve(&h, &DMatrix::from_element(3, 1, 1.0), 1.0).is_err());
        assert!(ridge_solve(&h, &DMatrix::from_element(2, 1, f64::NAN), 1.0).is_err());
        assert!(ridge_solve(&h, &DMatrix::from_element(2, 1, 1.0), -1.0).is_err());
    }

    #[test]
    fn perturbation_never_improves_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (n, k, d) = (
                rng.random_range(3..10),
                rng.random_range(1..6),
                rng.random_range(1..4),
            );
            let h = random(&mut rng, n, k);
            let t = random(&mut rng, n, d);
            let lambda = rng.random_range(0.01..2.0);
            let w = ridge_solve(&h, &t, lambda).unwrap();
            let best = ridge_objective(&h, &t, &w, lambda);
            for _ in 0..20 {
                let dw = random(&mut rng, k, d);
                let dw = &dw * (1e-3 / dw.norm());
                assert!(ridge_objective(&h, &t, &(&w + dw), lambda) >= best - 1e-12);
            }
        }
    }
}
