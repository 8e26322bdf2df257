//! Dense matrix kernels. Every output row is accumulated in a fixed order
//! that does not depend on how many rows are in the batch, so a sequence's
//! result is bit-identical whether it is evaluated alone or in a batch.

use crate::scalar::Scalar;

/// `c[m×n] = a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        let ai = &a[i * k..(i + 1) * k];
        for (p, &aip) in ai.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let bp = &b[p * n..(p + 1) * n];
            for (cv, &bv) in ci.iter_mut().zip(bp) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let bj = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in ai.iter().zip(bj) {
                acc += x * y;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// `c[k×n] = a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); k * n];
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        let bi = &b[i * n..(i + 1) * n];
        for (p, &aip) in ai.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let cp = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in cp.iter_mut().zip(bi) {
                *cv += aip * bv;
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn variants_agree_with_naive_product() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|v| (v as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64 * 0.71).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-12);
        assert!(close(&gemm_nn(&a, &b, m, k, n), &want));
        assert!(close(&gemm_nt(&a, &transpose(&b, k, n), m, k, n), &want));
        assert!(close(&gemm_tn(&transpose(&a, m, k), &b, k, m, n), &want));
    }
}
