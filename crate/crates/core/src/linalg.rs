use nalgebra::{DMatrix, DVector};

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Orthonormal basis (columns) of the complement of `c`, built from a
/// Householder reflection. Returns a `k x (k-1)` matrix.
pub(crate) fn null_space_of(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let vv = v.dot(&v);
    let mut h = DMatrix::<f64>::identity(k, k);
    if vv > 0.0 {
        h -= (&v * v.transpose()) * (2.0 / vv);
    }
    h.columns(1, k - 1).into_owned()
}

pub(crate) fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}
