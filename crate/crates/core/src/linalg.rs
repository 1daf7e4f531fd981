//! Dense linear-algebra helpers shared by the reduction modules.

use nalgebra::{DMatrix, DVector};

/// Thin SVD `m = u * diag(s) * v^T` with singular values sorted non-increasing.
///
/// Each left singular vector has its largest-magnitude entry made positive,
/// with the matching right singular vector flipped alongside it.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let k = rows.min(cols);
        if k == 0 {
            return Self {
                u: DMatrix::zeros(rows, 0),
                s: DVector::zeros(0),
                v: DMatrix::zeros(cols, 0),
            };
        }
        let svd = m.clone().svd(true, true);
        let u_raw = svd.u.expect("left vectors requested");
        let vt_raw = svd.v_t.expect("right vectors requested");
        let s_raw = svd.singular_values;

        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| s_raw[j].total_cmp(&s_raw[i]));

        let mut u = DMatrix::zeros(rows, k);
        let mut v = DMatrix::zeros(cols, k);
        let mut s = DVector::zeros(k);
        for (dst, &src) in order.iter().enumerate() {
            s[dst] = s_raw[src];
            let mut ucol = u_raw.column(src).into_owned();
            let mut vcol = vt_raw.row(src).transpose();
            if leading_sign(&ucol) < 0.0 {
                ucol.neg_mut();
                vcol.neg_mut();
            }
            u.set_column(dst, &ucol);
            v.set_column(dst, &vcol);
        }
        Self { u, s, v }
    }

    /// Number of singular values above `rel_floor * s[0]`.
    pub fn numerical_rank(&self, rel_floor: f64) -> usize {
        match self.s.iter().next() {
            None => 0,
            Some(&s0) if s0 <= 0.0 => 0,
            Some(&s0) => self.s.iter().take_while(|&&x| x > rel_floor * s0).count(),
        }
    }

    /// Leading `r` triplets.
    pub fn truncate(&self, r: usize) -> ThinSvd {
        ThinSvd {
            u: self.u.columns(0, r).into_owned(),
            s: self.s.rows(0, r).into_owned(),
            v: self.v.columns(0, r).into_owned(),
        }
    }
}

fn leading_sign(v: &DVector<f64>) -> f64 {
    let mut best = 0.0f64;
    for &x in v.iter() {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted non-increasing.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut vals = DVector::zeros(n);
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vals[dst] = eig.eigenvalues[src];
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square-root factor `f` with `m ≈ f f^T` of a symmetric PSD matrix.
///
/// Tries Cholesky first. When that fails the factor comes from the symmetric
/// eigendecomposition with eigenvalues floored at `1e-14 * λ_max`. The flag
/// reports whether the fallback was taken.
pub fn psd_factor(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = symmetrize(m);
    if let Some(ch) = sym.clone().cholesky() {
        let l = ch.l();
        if l.iter().all(|x| x.is_finite()) {
            return (l, false);
        }
    }
    let (vals, vecs) = sym_eigen(&sym);
    let lmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let floor = 1e-14 * lmax;
    let mut f = vecs;
    for (j, &lam) in vals.iter().enumerate() {
        let scale = lam.max(floor).max(0.0).sqrt();
        f.column_mut(j).scale_mut(scale);
    }
    (f, true)
}

/// Moore–Penrose pseudo-inverse with singular values below
/// `rel_floor * s_max` discarded.
pub fn pinv(m: &DMatrix<f64>, rel_floor: f64) -> DMatrix<f64> {
    let svd = ThinSvd::new(m);
    let r = svd.numerical_rank(rel_floor);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for k in 0..r {
        out += svd.v.column(k) * svd.u.column(k).transpose() / svd.s[k];
    }
    out
}

/// Largest absolute entry of `a - b` divided by the largest absolute entry of `b`.
pub fn rel_max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.amax();
    let diff = (a - b).amax();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Two-norm condition number via singular values; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = m.clone().singular_values();
    let max = s.iter().cloned().fold(0.0f64, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
