//! Scalar-generic numeric kernels shared by the fuzzer, the performance
//! tester and the correlation report.

use num_traits::Float;

use crate::error::{Error, Result};

pub fn mean<T: Float>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + x);
    Some(sum / T::from(xs.len()).expect("length fits the scalar type"))
}

/// Sample Pearson correlation coefficient.
///
/// Constant series have no defined correlation and are reported as
/// [`Error::DegenerateInput`] instead of NaN.
pub fn pearson_correlation<T: Float>(xs: &[T], ys: &[T]) -> Result<T> {
    if xs.len() != ys.len() {
        return Err(Error::DegenerateInput(format!(
            "series lengths differ ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateInput(
            "need at least two observations".into(),
        ));
    }
    let mx = mean(xs).unwrap();
    let my = mean(ys).unwrap();
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// Divides every value by the maximum; all zeros when the maximum is not
/// positive.
pub fn normalize_by_max<T: Float>(xs: &[T]) -> Vec<T> {
    let max = xs.iter().fold(T::zero(), |m, &x| m.max(x));
    if max <= T::zero() {
        return vec![T::zero(); xs.len()];
    }
    xs.iter().map(|&x| x / max).collect()
}
