//! SVD, Moore-Penrose pseudo-inverse and ridge least squares.
//!
//! The decomposition is a one-sided Jacobi iteration: deterministic,
//! dependency-free, and accurate enough at the matrix sizes this engine
//! produces (design matrices of a few thousand rows by a few hundred
//! columns). Determinism matters because refitting the readout on identical
//! inputs must be bit-identical.

use crate::error::{Error, Result};
use crate::tensor::{matmul_unchecked, Tensor};

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 60;

/// Thin SVD `a = u * diag(s) * v^T`.
///
/// `u` is m x r, `s` has length r, `v` is n x r with r = min(m, n).
/// Singular values are sorted in descending order.
pub struct Svd {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub v: Tensor,
}

/// One-sided Jacobi SVD. Rotates column pairs of a working copy until all
/// pairs are numerically orthogonal, accumulating the rotations into `v`.
pub fn svd(a: &Tensor) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::numeric("svd input contains non-finite values"));
    }
    let (m, n) = (a.nrows(), a.ncols());
    if m >= n {
        svd_tall(a)
    } else {
        // Work on the transpose and swap factors back.
        let s = svd_tall(&a.transposed())?;
        Ok(Svd {
            u: s.v,
            s: s.s,
            v: s.u,
        })
    }
}

fn svd_tall(a: &Tensor) -> Result<Svd> {
    let (m, n) = (a.nrows(), a.ncols());
    debug_assert!(m >= n);
    // Column-major working copies keep the rotation inner loops contiguous.
    let mut b: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.at2(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut col = vec![0.0; n];
            col[j] = 1.0;
            col
        })
        .collect();

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (bp, bq) = pair_mut(&mut b, p, q);
                let alpha: f64 = bp.iter().map(|x| x * x).sum();
                let beta: f64 = bq.iter().map(|x| x * x).sum();
                let gamma: f64 = bp.iter().zip(bq.iter()).map(|(x, y)| x * y).sum();
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                // Jacobi rotation zeroing the off-diagonal of the 2x2 Gram block.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let bi = bp[i];
                    bp[i] = c * bi - s * bq[i];
                    bq[i] = s * bi + c * bq[i];
                }
                let (vp, vq) = pair_mut(&mut v, p, q);
                for i in 0..n {
                    let vi = vp[i];
                    vp[i] = c * vi - s * vq[i];
                    vq[i] = s * vi + c * vq[i];
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = b
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u = Tensor::zeros(&[m, n]);
    let mut vt = Tensor::zeros(&[n, n]);
    let mut s = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let nj = norms[j];
        s.push(nj);
        if nj > 0.0 {
            for i in 0..m {
                u.set2(i, k, b[j][i] / nj);
            }
        }
        for i in 0..n {
            vt.set2(i, k, v[j][i]);
        }
    }
    Ok(Svd { u, s, v: vt })
}

fn pair_mut(cols: &mut [Vec<f64>], p: usize, q: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    debug_assert!(p < q);
    let (lo, hi) = cols.split_at_mut(q);
    (&mut lo[p], &mut hi[0])
}

/// Moore-Penrose pseudo-inverse via SVD.
///
/// With `ridge > 0` singular values map to `s / (s^2 + ridge)` (Tikhonov
/// form); with `ridge == 0` values below `max(m,n) * eps * s_max` are
/// truncated to zero.
pub fn pinv(a: &Tensor, ridge: f64) -> Result<Tensor> {
    if !a.is_finite() {
        return Err(Error::numeric("pinv input contains non-finite values"));
    }
    if ridge < 0.0 {
        return Err(Error::usage("pinv ridge must be non-negative"));
    }
    let (m, n) = (a.nrows(), a.ncols());
    let dec = svd(a)?;
    let smax = dec.s.first().copied().unwrap_or(0.0);
    let cutoff = (m.max(n)) as f64 * f64::EPSILON * smax;
    let r = dec.s.len();
    // v * diag(f(s)) * u^T
    let mut vf = Tensor::zeros(&[n, r]);
    for k in 0..r {
        let s = dec.s[k];
        let f = if ridge > 0.0 {
            s / (s * s + ridge)
        } else if s > cutoff {
            1.0 / s
        } else {
            0.0
        };
        for i in 0..n {
            vf.set2(i, k, dec.v.at2(i, k) * f);
        }
    }
    Ok(matmul_unchecked(&vf, &dec.u.transposed()))
}

/// Ridge least squares `argmin_beta |h beta - y|^2 + ridge |beta|^2`,
/// solved as `pinv(h, ridge) * y`.
pub fn lstsq(h: &Tensor, y: &Tensor, ridge: f64) -> Result<Tensor> {
    if h.nrows() != y.nrows() {
        return Err(Error::dim(format!(
            "lstsq row mismatch: {:?} vs {:?}",
            h.shape(),
            y.shape()
        )));
    }
    let hp = pinv(h, ridge)?;
    Ok(matmul_unchecked(&hp, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_matrix(m: usize, n: usize, rng: &mut Rng) -> Tensor {
        Tensor::uniform(&[m, n], 1.0, rng)
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f64, what: &str) {
        let d = a.max_abs_diff(b);
        assert!(d < tol, "{what}: max abs diff {d} >= {tol}");
    }

    #[test]
    fn svd_reconstructs_input() {
        let mut rng = Rng::from_seed(1);
        for &(m, n) in &[(5, 3), (3, 5), (8, 8), (1, 4), (6, 1)] {
            let a = random_matrix(m, n, &mut rng);
            let dec = svd(&a).unwrap();
            let r = dec.s.len();
            let mut us = dec.u.clone();
            for k in 0..r {
                for i in 0..m {
                    us.set2(i, k, dec.u.at2(i, k) * dec.s[k]);
                }
            }
            let back = us.matmul(&dec.v.transposed()).unwrap();
            assert_close(&back, &a, 1e-10, "u s v^T");
        }
    }

    #[test]
    fn svd_singular_values_sorted_and_nonnegative() {
        let mut rng = Rng::from_seed(2);
        let a = random_matrix(7, 4, &mut rng);
        let dec = svd(&a).unwrap();
        for w in dec.s.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(dec.s.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn pinv_identity() {
        let id = Tensor::eye(4);
        let p = pinv(&id, 0.0).unwrap();
        assert_close(&p, &id, 1e-12, "pinv(I)");
    }

    #[test]
    fn pinv_diagonal_with_zero_entry() {
        let a = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]]);
        let p = pinv(&a, 0.0).unwrap();
        let expect = Tensor::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.0]]);
        assert_close(&p, &expect, 1e-12, "pinv(diag(2,0))");
    }

    #[test]
    fn pinv_is_idempotent_under_axiom_two() {
        let mut rng = Rng::from_seed(3);
        let a = random_matrix(5, 3, &mut rng);
        let p = pinv(&a, 0.0).unwrap();
        // p a p == p
        let pap = p.matmul(&a).unwrap().matmul(&p).unwrap();
        assert_close(&pap, &p, 1e-9, "A+ A A+");
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let mut a = Tensor::eye(2);
        a.data_mut()[1] = f64::NAN;
        assert!(matches!(pinv(&a, 0.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn moore_penrose_axioms_random() {
        let mut rng = Rng::from_seed(4);
        for &(m, n) in &[(6, 4), (4, 6), (9, 9), (12, 5)] {
            let a = random_matrix(m, n, &mut rng);
            let p = pinv(&a, 0.0).unwrap();
            let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
            assert_close(&apa, &a, 1e-8, "A A+ A = A");
            let pap = p.matmul(&a).unwrap().matmul(&p).unwrap();
            assert_close(&pap, &p, 1e-8, "A+ A A+ = A+");
            let ap = a.matmul(&p).unwrap();
            assert_close(&ap.transposed(), &ap, 1e-8, "(A A+)^T = A A+");
            let pa = p.matmul(&a).unwrap();
            assert_close(&pa.transposed(), &pa, 1e-8, "(A+ A)^T = A+ A");
        }
    }

    #[test]
    fn lstsq_identity_design() {
        let y = Tensor::from_rows(&[vec![3.0, -1.0], vec![0.5, 2.0]]);
        let beta = lstsq(&Tensor::eye(2), &y, 0.0).unwrap();
        assert_close(&beta, &y, 1e-12, "identity design");
    }

    #[test]
    fn lstsq_mean_case() {
        // Two equal rows regress onto the mean of the targets.
        let h = Tensor::from_rows(&[vec![1.0], vec![1.0]]);
        let y = Tensor::from_rows(&[vec![1.0], vec![3.0]]);
        let beta = lstsq(&h, &y, 0.0).unwrap();
        assert!((beta.at2(0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lstsq_residual_is_minimal_among_perturbations() {
        let mut rng = Rng::from_seed(5);
        let h = random_matrix(12, 4, &mut rng);
        let y = random_matrix(12, 2, &mut rng);
        let beta = lstsq(&h, &y, 0.0).unwrap();
        let base = h.matmul(&beta).unwrap().sub(&y).frob_norm();
        for _ in 0..100 {
            let noise = Tensor::uniform(&[4, 2], 0.3, &mut rng);
            let tweaked = beta.add(&noise);
            let r = h.matmul(&tweaked).unwrap().sub(&y).frob_norm();
            assert!(base <= r + 1e-12, "perturbation beat lstsq: {base} > {r}");
        }
    }

    #[test]
    fn ridge_shrinks_solution_monotonically() {
        let mut rng = Rng::from_seed(6);
        let h = random_matrix(10, 4, &mut rng);
        let y = random_matrix(10, 3, &mut rng);
        let norms: Vec<f64> = [1e-3, 1.0, 1e3]
            .iter()
            .map(|&r| lstsq(&h, &y, r).unwrap().frob_norm())
            .collect();
        assert!(norms[0] > norms[1] && norms[1] > norms[2], "{norms:?}");
    }

    #[test]
    fn repeat_solve_is_bit_identical() {
        let mut rng = Rng::from_seed(7);
        let h = random_matrix(15, 6, &mut rng);
        let y = random_matrix(15, 2, &mut rng);
        let b1 = lstsq(&h, &y, 1e-6).unwrap();
        let b2 = lstsq(&h, &y, 1e-6).unwrap();
        assert_eq!(b1, b2);
    }
}
