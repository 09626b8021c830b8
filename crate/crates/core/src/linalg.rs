//! Dense row-major helpers for the small matrices used throughout the model.
//!
//! Every matrix is a flat `&[f64]` with an explicit column count. Products
//! use the row-vector convention `y = x · W`, so a weight of shape
//! `(in, out)` maps an `in`-wide input to an `out`-wide output.

/// `out += x · W` for `W` of shape `(x.len(), cols)`.
#[inline]
pub fn vec_mat_acc(x: &[f64], w: &[f64], cols: usize, out: &mut [f64]) {
    debug_assert_eq!(w.len(), x.len() * cols);
    debug_assert_eq!(out.len(), cols);
    for (xi, row) in x.iter().zip(w.chunks_exact(cols)) {
        if *xi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

/// Backward of [`vec_mat_acc`]: accumulates `dW += xᵀ · dout` and, when
/// requested, `dx += W · doutᵀ`.
#[inline]
pub fn vec_mat_backward(
    x: &[f64],
    w: &[f64],
    cols: usize,
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
) {
    debug_assert_eq!(dout.len(), cols);
    for (xi, drow) in x.iter().zip(dw.chunks_exact_mut(cols)) {
        if *xi == 0.0 {
            continue;
        }
        for (d, g) in drow.iter_mut().zip(dout) {
            *d += xi * g;
        }
    }
    if let Some(dx) = dx {
        for (dxi, row) in dx.iter_mut().zip(w.chunks_exact(cols)) {
            *dxi += dot(row, dout);
        }
    }
}

/// Row-major product of an `(n, k)` matrix with a `(k, m)` matrix.
pub fn mat_mat(a: &[f64], b: &[f64], k: usize, m: usize) -> Vec<f64> {
    let n = a.len() / k;
    let mut out = vec![0.0; n * m];
    for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(m)) {
        vec_mat_acc(arow, b, m, orow);
    }
    out
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}
