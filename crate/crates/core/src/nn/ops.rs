//! Elementwise activations, the column-masking primitive shared by the
//! training dropout path and the evaluation erasure path, and the
//! per-row power rescale.

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Elementwise `max(0, x)` in place.
pub fn relu_assign(x: &mut Matrix) {
    for v in x.as_mut_slice() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

pub fn relu(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    relu_assign(&mut out);
    out
}

/// Zeroes the entries of `row` whose mask bit is 0. All masking in the
/// crate funnels through this one function.
#[inline]
pub fn mask_row_assign(row: &mut [f64], bits: &[u8]) {
    debug_assert_eq!(row.len(), bits.len());
    for (v, &b) in row.iter_mut().zip(bits) {
        if b == 0 {
            *v = 0.0;
        }
    }
}

/// Applies one mask to every row of `x`, in place.
pub fn mask_columns_assign(x: &mut Matrix, bits: &[u8]) {
    assert_eq!(x.cols(), bits.len(), "mask length mismatch");
    for r in 0..x.rows() {
        mask_row_assign(x.row_mut(r), bits);
    }
}

pub fn mask_columns(x: &Matrix, bits: &[u8]) -> Matrix {
    let mut out = x.clone();
    mask_columns_assign(&mut out, bits);
    out
}

/// Rescales `row` so its squared norm equals its length (the fixed power
/// constraint). Returns the pre-rescale norm, which the backward pass needs.
pub fn scale_row_to_energy(row: &mut [f64]) -> Result<f64> {
    let norm_sq: f64 = row.iter().map(|v| v * v).sum();
    if norm_sq <= 0.0 || !norm_sq.is_finite() {
        return Err(Error::Numeric(format!(
            "cannot rescale a vector with squared norm {norm_sq} to fixed power"
        )));
    }
    let norm = norm_sq.sqrt();
    let scale = (row.len() as f64).sqrt() / norm;
    for v in row.iter_mut() {
        *v *= scale;
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_hand_case() {
        let x = Matrix::from_rows(&[&[-1.0, 0.0, 2.0]]);
        assert_eq!(relu(&x).row(0), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_identity_on_nonnegative() {
        let x = Matrix::from_rows(&[&[0.5, 0.0, 7.0], &[1.0, 2.0, 3.0]]);
        assert_eq!(relu(&x), x);
    }

    #[test]
    fn relu_zero_exactly_where_nonpositive() {
        let mut s = crate::rng::RngFactory::new(5).stream("relu");
        let data: Vec<f64> = (0..64).map(|_| s.normal()).collect();
        let x = Matrix::from_vec(8, 8, data).unwrap();
        let y = relu(&x);
        for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
            if *a <= 0.0 {
                assert_eq!(*b, 0.0);
            } else {
                assert_eq!(*b, *a);
            }
            assert!(*b >= 0.0);
        }
    }

    #[test]
    fn mask_columns_zeroes_where_bit_zero() {
        let x = Matrix::from_rows(&[&[5.0, 7.0, -2.0]]);
        let y = mask_columns(&x, &[1, 0, 1]);
        assert_eq!(y.row(0), &[5.0, 0.0, -2.0]);
    }

    #[test]
    fn mask_columns_idempotent() {
        let x = Matrix::from_rows(&[&[1.0, -4.0, 3.0], &[2.0, 5.0, -6.0]]);
        let bits = [0u8, 1, 0];
        let once = mask_columns(&x, &bits);
        let twice = mask_columns(&once, &bits);
        assert_eq!(once, twice);
    }
}
