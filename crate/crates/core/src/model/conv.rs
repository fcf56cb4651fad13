use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// `f_i = ReLU(v . [x_i; ...; x_{i+k-1}])` for every window of the row-major
/// `n x d` sentence matrix, where `k = v.len() / d`.
pub fn feature_map<T: Scalar>(v: &[T], matrix: &[T], d: usize) -> Result<Vec<T>> {
    let (n, k) = dims(v, matrix, d)?;
    Ok((0..=n - k)
        .map(|i| dot(v, &matrix[i * d..(i + k) * d]).max(T::zero()))
        .collect())
}

/// Largest value and the lowest index attaining it.
pub fn max_pool<T: Scalar>(f: &[T]) -> Result<(T, usize)> {
    let (&first, rest) = f
        .split_first()
        .ok_or_else(|| Error::Validation("max-pool over an empty feature map".into()))?;
    let mut best = (first, 0);
    for (i, &x) in rest.iter().enumerate() {
        if x > best.0 {
            best = (x, i + 1);
        }
    }
    Ok(best)
}

/// [`feature_map`] followed by [`max_pool`] without materializing the map.
pub(crate) fn conv_max_pool<T: Scalar>(v: &[T], matrix: &[T], d: usize) -> Result<(T, usize)> {
    let (n, k) = dims(v, matrix, d)?;
    let mut best = (T::neg_infinity(), 0);
    for i in 0..=n - k {
        let f = dot(v, &matrix[i * d..(i + k) * d]).max(T::zero());
        if f > best.0 {
            best = (f, i);
        }
    }
    Ok(best)
}

fn dims<T>(v: &[T], matrix: &[T], d: usize) -> Result<(usize, usize)> {
    if d == 0 || !v.len().is_multiple_of(d) || !matrix.len().is_multiple_of(d) || v.is_empty() {
        return Err(Error::Mismatch(format!(
            "kernel length {} / sentence length {} incompatible with dimension {d}",
            v.len(),
            matrix.len()
        )));
    }
    let (n, k) = (matrix.len() / d, v.len() / d);
    if n < k {
        return Err(Error::Validation(format!(
            "sentence of {n} words is shorter than kernel width {k}"
        )));
    }
    Ok((n, k))
}
