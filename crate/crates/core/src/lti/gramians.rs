use nalgebra::DMatrix;

use super::lyapunov::solve_lyapunov;
use super::{spectrum, ContinuousLti, DiscreteLti, StateSpace};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, symmetrize};

/// Reachability and observability Gramians.
#[derive(Debug, Clone, PartialEq)]
pub struct Gramians {
    pub reachability: DMatrix<f64>,
    pub observability: DMatrix<f64>,
}

impl Gramians {
    /// Checks symmetry to 1e-10 relative and that eigenvalues are no lower
    /// than `-1e-10 λ_max`.
    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("reachability", &self.reachability), ("observability", &self.observability)] {
            let scale = m.amax().max(f64::MIN_POSITIVE);
            if (m - m.transpose()).amax() > 1e-10 * scale {
                return Err(Error::Data(format!("{name} Gramian is not symmetric")));
            }
            let (vals, _) = sym_eigen(m);
            let lmax = vals.iter().cloned().fold(0.0f64, f64::max);
            if vals.iter().any(|&l| l < -1e-10 * lmax) {
                return Err(Error::Data(format!("{name} Gramian is indefinite")));
            }
        }
        Ok(())
    }
}

/// Infinite-horizon Gramians of a stable continuous system.
pub fn gramians_continuous(sys: &ContinuousLti) -> Result<Gramians> {
    let a = sys.a();
    let reach = solve_lyapunov(a, &(sys.b() * sys.b().transpose()))?;
    let obs = solve_lyapunov(&a.transpose(), &(sys.c().transpose() * sys.c()))?;
    Ok(Gramians { reachability: reach, observability: obs })
}

/// Finite-horizon discrete Gramians `Σ_{k<horizon} A^k B Bᵀ (Aᵀ)^k` and the
/// observability analogue, accumulated by recursion.
pub fn gramians_discrete(sys: &DiscreteLti, horizon: usize) -> Result<Gramians> {
    if horizon == 0 {
        return Err(Error::Config("Gramian horizon must be positive".into()));
    }
    let n = sys.n();
    let mut reach = DMatrix::zeros(n, n);
    let mut obs = DMatrix::zeros(n, n);
    let mut x = sys.b().clone();
    let mut y = sys.c().transpose();
    let at = sys.a().transpose();
    for k in 0..horizon {
        reach += &x * x.transpose();
        obs += &y * y.transpose();
        if k + 1 < horizon {
            x = sys.a() * &x;
            y = &at * &y;
        }
    }
    Ok(Gramians { reachability: symmetrize(&reach), observability: symmetrize(&obs) })
}

/// Infinite-horizon discrete Gramians by squared Smith iteration.
///
/// Requires spectral radius below one; stops when the update falls under
/// `1e-15` of the accumulated Gramian or after 64 doublings.
pub fn gramians_discrete_converged(sys: &DiscreteLti) -> Result<Gramians> {
    let radius = spectrum::eigenvalues(sys).radius;
    if !(radius < 1.0) {
        return Err(Error::Unstable(format!(
            "spectral radius {radius:.6} is not below one; discrete Gramians diverge"
        )));
    }
    let smith = |a: &DMatrix<f64>, q: DMatrix<f64>| -> DMatrix<f64> {
        let mut x = q;
        let mut ak = a.clone();
        for _ in 0..64 {
            let update = &ak * &x * ak.transpose();
            let done = update.amax() <= 1e-15 * x.amax();
            x += update;
            if done {
                break;
            }
            ak = &ak * &ak;
        }
        symmetrize(&x)
    };
    let reach = smith(sys.a(), sys.b() * sys.b().transpose());
    let obs = smith(&sys.a().transpose(), sys.c().transpose() * sys.c());
    Ok(Gramians { reachability: reach, observability: obs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cscalar(a: f64, b: f64, c: f64) -> ContinuousLti {
        ContinuousLti::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
        )
        .unwrap()
    }

    fn dscalar(a: f64) -> DiscreteLti {
        let one = DMatrix::from_element(1, 1, 1.0);
        DiscreteLti::new(DMatrix::from_element(1, 1, a), one.clone(), one, 1.0).unwrap()
    }

    #[test]
    fn symmetric_scalar_system() {
        let g = gramians_continuous(&cscalar(-1.0, 1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(g.reachability[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.observability[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn input_scaling() {
        let g = gramians_continuous(&cscalar(-1.0, 2.0, 1.0)).unwrap();
        assert_abs_diff_eq!(g.reachability[(0, 0)], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.observability[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn continuous_matches_quadrature() {
        // Quadrature oracle: composite Simpson on exp(At) B Bᵀ exp(Aᵀt) over
        // [0, T], with exp(A dt) propagated exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 6;
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        for i in 0..n {
            a[(i, i)] -= 3.0;
        }
        let b = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let sys = ContinuousLti::new(a.clone(), b.clone(), DMatrix::identity(n, n)).unwrap();
        let g = gramians_continuous(&sys).unwrap();

        let t_end = 40.0;
        let m = 8000; // even
        let h = t_end / m as f64;
        let step = (&a * h).exp();
        let mut e = DMatrix::<f64>::identity(n, n);
        let mut acc = DMatrix::<f64>::zeros(n, n);
        for k in 0..=m {
            let w = if k == 0 || k == m {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let eb = &e * &b;
            acc += &eb * eb.transpose() * w;
            e = &step * &e;
        }
        acc *= h / 3.0;
        assert!((acc - &g.reachability).amax() < 1e-5);
        g.validate().unwrap();
    }

    #[test]
    fn one_step_memory() {
        let g = gramians_discrete(&dscalar(0.0), 5).unwrap();
        assert_eq!(g.reachability[(0, 0)], 1.0);
        assert_eq!(g.observability[(0, 0)], 1.0);
    }

    #[test]
    fn geometric_series_limit() {
        let g = gramians_discrete(&dscalar(0.5), 200).unwrap();
        assert_abs_diff_eq!(g.reachability[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
        let s = gramians_discrete_converged(&dscalar(0.5)).unwrap();
        assert_abs_diff_eq!(s.observability[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn discrete_lyapunov_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4;
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let rho = crate::lti::eigenvalues(
            &DiscreteLti::new(a.clone(), DMatrix::zeros(n, 1), DMatrix::zeros(1, n), 1.0).unwrap(),
        )
        .radius;
        a *= 0.8 / rho;
        let b = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
        let sys = DiscreteLti::new(a.clone(), b.clone(), c.clone(), 1.0).unwrap();
        let g = gramians_discrete(&sys, 200).unwrap();
        let res = &a * &g.reachability * a.transpose() - &g.reachability + &b * b.transpose();
        assert!(res.amax() < 1e-8);
        let res_o = a.transpose() * &g.observability * &a - &g.observability + c.transpose() * &c;
        assert!(res_o.amax() < 1e-8);
        let conv = gramians_discrete_converged(&sys).unwrap();
        assert!((conv.reachability - g.reachability).amax() < 1e-12);
    }

    #[test]
    fn duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 5;
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        for i in 0..n {
            a[(i, i)] -= 2.0;
        }
        let b = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0));
        let g = gramians_continuous(&ContinuousLti::new(a.clone(), b.clone(), c.clone()).unwrap()).unwrap();
        let dual = gramians_continuous(
            &ContinuousLti::new(a.transpose(), c.transpose(), b.transpose()).unwrap(),
        )
        .unwrap();
        assert!((g.reachability - dual.observability).amax() < 1e-10);
    }
}
