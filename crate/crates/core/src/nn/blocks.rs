//! Helpers for batched signals. A batch of `B` signals with `F` features on
//! `N` simplices is stored as one `N x (B*F)` matrix whose `b`-th block of
//! `F` columns is sample `b`. Left multiplication by operators acts on the
//! whole batch at once; feature maps act block by block.

use nalgebra::DMatrix;

pub(crate) fn blocks(x: &DMatrix<f64>, f: usize) -> usize {
    if f == 0 {
        0
    } else {
        x.ncols() / f
    }
}

/// `out_b = x_b w` for every block.
pub(crate) fn right_mul(x: &DMatrix<f64>, fin: usize, w: &DMatrix<f64>) -> DMatrix<f64> {
    let nb = blocks(x, fin);
    let mut out = DMatrix::zeros(x.nrows(), nb * w.ncols());
    right_mul_acc(&mut out, x, fin, w);
    out
}

/// `out_b += x_b w` for every block.
pub(crate) fn right_mul_acc(out: &mut DMatrix<f64>, x: &DMatrix<f64>, fin: usize, w: &DMatrix<f64>) {
    let fout = w.ncols();
    for b in 0..blocks(x, fin) {
        let xb = x.columns(b * fin, fin);
        out.columns_mut(b * fout, fout).gemm(1.0, &xb, w, 1.0);
    }
}

/// `out_b += d_b w^T` for every block, where `d` has blocks of width
/// `w.ncols()`.
pub(crate) fn right_mul_t_acc(out: &mut DMatrix<f64>, d: &DMatrix<f64>, w: &DMatrix<f64>) {
    let (fin, fout) = (w.nrows(), w.ncols());
    let wt = w.transpose();
    for b in 0..blocks(d, fout) {
        let db = d.columns(b * fout, fout);
        out.columns_mut(b * fin, fin).gemm(1.0, &db, &wt, 1.0);
    }
}

/// `sum_b x_b^T d_b`.
pub(crate) fn weight_grad(x: &DMatrix<f64>, fin: usize, d: &DMatrix<f64>, fout: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(fin, fout);
    for b in 0..blocks(x, fin) {
        g.gemm_tr(1.0, &x.columns(b * fin, fin), &d.columns(b * fout, fout), 1.0);
    }
    g
}

pub(crate) fn hcat(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts.first().map_or(0, |p| p.nrows());
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for p in parts {
        out.columns_mut(at, p.ncols()).copy_from(*p);
        at += p.ncols();
    }
    out
}

pub(crate) fn split(x: &DMatrix<f64>, f: usize) -> Vec<DMatrix<f64>> {
    (0..blocks(x, f)).map(|b| x.columns(b * f, f).into_owned()).collect()
}

/// Scale row `i` by `s[i]`.
pub(crate) fn scale_rows(x: &mut DMatrix<f64>, s: &[f64]) {
    for (i, &si) in s.iter().enumerate() {
        x.row_mut(i).scale_mut(si);
    }
}
