//! Dense matrix kernels used by the tape. Row-major storage throughout.

use crate::scalar::Scalar;

/// out (m×n) += a (m×k) · b (k×n)
pub fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let brow = &b[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + av * bv;
            }
        }
    }
}

/// out (m×n) += a (m×k) · bᵀ where b is (n×k)
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                s = s + av * bv;
            }
            *o = *o + s;
        }
    }
}

/// out (k×n) += aᵀ · b where a is (m×k), b is (m×n)
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for r in 0..m {
        let arow = &a[r * k..(r + 1) * k];
        let brow = &b[r * n..(r + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let orow = &mut out[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_naive_triple_loop() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    want[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        let mut got = vec![0.0; m * n];
        matmul_nn(&a, &b, m, k, n, &mut got);
        assert_eq!(got, want);

        // a · bᵀ with b stored transposed
        let mut bt = vec![0.0; n * k];
        for l in 0..k {
            for j in 0..n {
                bt[j * k + l] = b[l * n + j];
            }
        }
        let mut got = vec![0.0; m * n];
        matmul_nt(&a, &bt, m, k, n, &mut got);
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // aᵀ · c
        let c: Vec<f64> = (0..m * n).map(|i| (i as f64 * 0.11).sin()).collect();
        let mut want_t = vec![0.0; k * n];
        for l in 0..k {
            for j in 0..n {
                for i in 0..m {
                    want_t[l * n + j] += a[i * k + l] * c[i * n + j];
                }
            }
        }
        let mut got_t = vec![0.0; k * n];
        matmul_tn(&a, &c, m, k, n, &mut got_t);
        for (x, y) in got_t.iter().zip(&want_t) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
