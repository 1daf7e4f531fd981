use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

/// Largest order accepted by the dense Lyapunov solver.
pub const LYAPUNOV_MAX_ORDER: usize = 400;

/// Iteration budget of the Schur decomposition, per unit of order.
const SCHUR_SWEEPS_PER_ORDER: usize = 30;

type C64 = Complex<f64>;

/// Solves `A X + X Aᵀ + RHS = 0` for a stable `A`.
///
/// Bartels–Stewart on the complex Schur form `A = Z T Zᴴ`, followed by one
/// round of iterative refinement. The returned solution is symmetrized and
/// meets `‖A X + X Aᵀ + RHS‖_F ≤ 1e-8 ‖RHS‖_F`; otherwise a conditioning
/// error carries the achieved residual.
pub fn solve_lyapunov(a: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || rhs.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Lyapunov operands must be square and equal in size, got {:?} and {:?}",
            a.shape(),
            rhs.shape()
        )));
    }
    if n > LYAPUNOV_MAX_ORDER {
        return Err(Error::TooLarge { n, limit: LYAPUNOV_MAX_ORDER });
    }
    let (z, t) = a
        .map(|x| C64::new(x, 0.0))
        .try_schur(f64::EPSILON, SCHUR_SWEEPS_PER_ORDER * n.max(10))
        .ok_or_else(|| Error::Conditioning(format!("Schur iteration did not converge for order {n}")))?
        .unpack();
    if let Some(bad) = t.diagonal().iter().find(|l| !(l.re < 0.0)) {
        return Err(Error::Unstable(format!(
            "eigenvalue {:.6e}{:+.6e}i has non-negative real part; analytical Gramians are undefined",
            bad.re, bad.im
        )));
    }

    let rhs_norm = rhs.norm();
    if rhs_norm == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let residual = |x: &DMatrix<f64>| a * x + x * a.transpose() + rhs;

    let mut x = schur_solve(&z, &t, rhs);
    let r0 = residual(&x);
    if r0.norm() > 1e-14 * rhs_norm {
        x += schur_solve(&z, &t, &r0);
    }
    let x = symmetrize(&x);
    let res = residual(&x).norm();
    if !(res <= 1e-8 * rhs_norm) {
        return Err(Error::Conditioning(format!(
            "Lyapunov residual {res:.3e} exceeds 1e-8 x {rhs_norm:.3e}"
        )));
    }
    Ok(x)
}

fn schur_solve(z: &DMatrix<C64>, t: &DMatrix<C64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let n = t.nrows();
    let f = z.adjoint() * rhs.map(|x| C64::new(x, 0.0)) * z;
    // Column recursion for T Y + Y Tᴴ + F = 0, last column first.
    let mut y = DMatrix::<C64>::zeros(n, n);
    for j in (0..n).rev() {
        let mut g: DVector<C64> = -f.column(j);
        for k in (j + 1)..n {
            let coef = t[(j, k)].conj();
            if coef != C64::new(0.0, 0.0) {
                g.axpy(-coef, &y.column(k), C64::new(1.0, 0.0));
            }
        }
        let shift = t[(j, j)].conj();
        // Back substitution with (T + shift I).
        for i in (0..n).rev() {
            let mut acc = g[i];
            for l in (i + 1)..n {
                acc -= t[(i, l)] * g[l];
            }
            g[i] = acc / (t[(i, i)] + shift);
        }
        y.set_column(j, &g);
    }
    (z * y * z.adjoint()).map(|c| c.re)
}
