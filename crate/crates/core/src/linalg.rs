//! Small dense helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e8;

/// 2-norm condition number; `inf` for a singular matrix.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of `a`, or its condition number when that exceeds [`MAX_CONDITION`].
pub fn checked_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    let cond = condition_number(a);
    if !(cond < MAX_CONDITION) {
        return Err(cond);
    }
    a.clone().lu().try_inverse().ok_or(cond)
}

/// Clamp negatives to zero and rescale every column to unit sum. A column
/// with no mass left becomes uniform.
pub fn clamp_normalize_columns(a: &mut DMatrix<f64>) {
    let k = a.nrows();
    for mut col in a.column_iter_mut() {
        col.iter_mut().for_each(|x| *x = x.max(0.0));
        let s: f64 = col.iter().sum();
        if s > 0.0 && s.is_finite() {
            col /= s;
        } else {
            col.fill(1.0 / k as f64);
        }
    }
}

/// Reset entries below `delta` to `delta`, then rescale columns to unit sum.
pub fn floor_normalize_columns(a: &mut DMatrix<f64>, delta: f64) {
    a.iter_mut().for_each(|x| *x = x.max(delta));
    for mut col in a.column_iter_mut() {
        let s: f64 = col.iter().sum();
        col /= s;
    }
}

/// Vector analogue of [`clamp_normalize_columns`].
pub fn clamp_normalize(v: &mut DVector<f64>) {
    let k = v.len();
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        *v /= s;
    } else {
        v.fill(1.0 / k as f64);
    }
}

/// Vector analogue of [`floor_normalize_columns`].
pub fn floor_normalize(v: &mut DVector<f64>, delta: f64) {
    v.iter_mut().for_each(|x| *x = x.max(delta));
    let s: f64 = v.iter().sum();
    *v /= s;
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Reorder columns: column `i` of the result is column `perm[i]` of `a`.
pub fn permute_columns(a: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, perm[c])])
}
