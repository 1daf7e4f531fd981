use nalgebra::DMatrix;

use super::{ContinuousLti, DiscreteLti, StateSpace};
use crate::error::{Error, Result};

/// Zero-order-hold discretization.
///
/// `A_d = exp(A h)` and `B_d = ∫₀^h exp(A τ) dτ B`, both read off a single
/// exponential of the augmented matrix `[[A, B], [0, 0]] h` (scaling and
/// squaring with a Padé approximant). The integral is exact whether or not
/// `A` is singular.
pub fn discretize_exact(sys: &ContinuousLti, step: f64) -> Result<DiscreteLti> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("discretization step must be positive, got {step}")));
    }
    let n = sys.n();
    let p = sys.p();
    let mut aug = DMatrix::zeros(n + p, n + p);
    aug.view_mut((0, 0), (n, n)).copy_from(&(sys.a() * step));
    aug.view_mut((0, n), (n, p)).copy_from(&(sys.b() * step));
    let e = aug.exp();
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, p)).into_owned();
    if ad.iter().chain(bd.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Conditioning(
            "matrix exponential overflowed; the step is too long for this system".into(),
        ));
    }
    DiscreteLti::new(ad, bd, sys.c().clone(), step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(a: f64, b: f64) -> ContinuousLti {
        ContinuousLti::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn integrator() {
        let d = discretize_exact(&scalar(0.0, 1.0), 0.5).unwrap();
        assert_abs_diff_eq!(d.a()[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.b()[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn scalar_closed_form() {
        let d = discretize_exact(&scalar(-2.0, 1.0), 1.0).unwrap();
        let e2 = (-2.0f64).exp();
        assert_abs_diff_eq!(d.a()[(0, 0)], e2, epsilon = 1e-14);
        assert_abs_diff_eq!(d.b()[(0, 0)], (1.0 - e2) / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn semigroup_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 4;
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        for i in 0..n {
            a[(i, i)] -= 2.5;
        }
        let b = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let sys = ContinuousLti::new(a, b, DMatrix::identity(n, n)).unwrap();
        let full = discretize_exact(&sys, 0.3).unwrap();
        let half = discretize_exact(&sys, 0.15).unwrap();
        // Two half steps with the same held input: A² and (A + I) B.
        let a2 = half.a() * half.a();
        let b2 = half.a() * half.b() + half.b();
        assert!((a2 - full.a()).amax() < 1e-10);
        assert!((b2 - full.b()).amax() < 1e-10);
    }
}
