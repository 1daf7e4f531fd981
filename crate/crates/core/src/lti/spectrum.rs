use nalgebra::Complex;

use super::{StateSpace, TimeDomain};

/// Eigenvalues of `A` with the stability margins of both time domains.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Sorted by decreasing real part, then decreasing imaginary part.
    pub values: Vec<Complex<f64>>,
    /// Largest real part.
    pub abscissa: f64,
    /// Largest modulus.
    pub radius: f64,
    pub domain: TimeDomain,
}

impl Spectrum {
    /// Abscissa below zero for continuous systems, radius below one for
    /// discrete ones.
    pub fn is_stable(&self) -> bool {
        match self.domain {
            TimeDomain::Continuous => self.abscissa < 0.0,
            TimeDomain::Discrete { .. } => self.radius < 1.0,
        }
    }

    /// The margin that matters for the system's time domain.
    pub fn margin(&self) -> f64 {
        match self.domain {
            TimeDomain::Continuous => self.abscissa,
            TimeDomain::Discrete { .. } => self.radius,
        }
    }
}

/// Eigenvalues of `A`. If the dense eigensolver fails to converge the
/// value list is empty and both margins are NaN, which reads as unstable.
pub fn eigenvalues<S: StateSpace + ?Sized>(sys: &S) -> Spectrum {
    let a = sys.a();
    let m = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    let mut values: Vec<Complex<f64>> = match m.eigenvalues() {
        Ok(v) => v.iter().map(|z| Complex::new(z.re, z.im)).collect(),
        Err(e) => {
            log::warn!("eigenvalue iteration failed for order {}: {e:?}", a.nrows());
            return Spectrum { values: vec![], abscissa: f64::NAN, radius: f64::NAN, domain: sys.domain() };
        }
    };
    values.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    let abscissa = values.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let radius = values.iter().map(|l| l.norm()).fold(0.0, f64::max);
    Spectrum { values, abscissa, radius, domain: sys.domain() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::ContinuousLti;
    use nalgebra::{DMatrix, DVector};

    fn sys(a: DMatrix<f64>) -> ContinuousLti {
        let n = a.nrows();
        ContinuousLti::new(a, DMatrix::zeros(n, 1), DMatrix::zeros(1, n)).unwrap()
    }

    #[test]
    fn diagonal() {
        let s = eigenvalues(&sys(DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]))));
        assert_eq!(s.values[0], Complex::new(-1.0, 0.0));
        assert_eq!(s.values[1], Complex::new(-2.0, 0.0));
        assert_eq!(s.abscissa, -1.0);
        assert!(s.is_stable());
    }

    #[test]
    fn rotation() {
        let s = eigenvalues(&sys(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])));
        assert!((s.values[0] - Complex::new(0.0, 1.0)).norm() < 1e-14);
        assert!((s.values[1] - Complex::new(0.0, -1.0)).norm() < 1e-14);
        assert!(s.abscissa.abs() < 1e-14);
    }

    #[test]
    fn companion_roots() {
        // (x + 1)(x + 2)(x - 0.5)(x² + 2x + 5): roots -1, -2, 0.5, -1 ± 2i.
        let roots = [
            Complex::new(0.5, 0.0),
            Complex::new(-1.0, 2.0),
            Complex::new(-1.0, -2.0),
            Complex::new(-1.0, 0.0),
            Complex::new(-2.0, 0.0),
        ];
        // Expand the monic polynomial by repeated multiplication.
        let mut coeffs = vec![Complex::new(1.0, 0.0)];
        for r in roots.iter() {
            let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
            for (i, c) in coeffs.iter().enumerate() {
                next[i] += *c;
                next[i + 1] -= *c * r;
            }
            coeffs = next;
        }
        let n = roots.len();
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            a[(0, j)] = -coeffs[j + 1].re;
        }
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        let s = eigenvalues(&sys(a));
        for r in roots.iter() {
            let best = s.values.iter().map(|v| (v - r).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "root {r} missed by {best}");
        }
    }
}
