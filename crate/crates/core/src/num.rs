//! Small shared numeric helpers.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub fn l2_norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Normalize to unit L2 norm; near-zero vectors are a numeric error.
pub fn l2_normalized(v: ArrayView1<f64>) -> Result<Array1<f64>> {
    let norm = l2_norm(v);
    if !norm.is_finite() || norm < 1e-12 {
        return Err(Error::Numeric(format!(
            "cannot normalize vector with norm {norm}"
        )));
    }
    Ok(&v / norm)
}

/// Cosine similarity. Zero-norm inputs are a numeric error.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na < 1e-12 || nb < 1e-12 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::Numeric(format!(
            "cosine of degenerate vectors (norms {na}, {nb})"
        )));
    }
    Ok(a.dot(&b) / (na * nb))
}

/// Mean over the rows of a nonempty matrix.
pub fn mean_rows(m: ArrayView2<f64>) -> Result<Array1<f64>> {
    if m.nrows() == 0 {
        return Err(Error::Shape("mean over zero rows".into()));
    }
    Ok(m.mean_axis(ndarray::Axis(0)).unwrap())
}

pub fn all_finite(m: ArrayView2<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};

    #[test]
    fn normalization_and_cosine_agree() {
        let v = arr1(&[3.0, 4.0]);
        let u = l2_normalized(v.view()).unwrap();
        assert_abs_diff_eq!(l2_norm(u.view()), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            cosine(v.view(), u.view()).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_vector_is_rejected() {
        assert!(l2_normalized(arr1(&[0.0, 0.0]).view()).is_err());
        assert!(cosine(arr1(&[0.0, 0.0]).view(), arr1(&[1.0, 0.0]).view()).is_err());
    }

    #[test]
    fn mean_rows_matches_hand_average() {
        let m = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(mean_rows(m.view()).unwrap(), arr1(&[0.5, 0.5]));
    }
}
