use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::gramians::{gramians_continuous, gramians_discrete_converged, Gramians};
use super::{ContinuousLti, DiscreteLti, StateSpace, TimeDomain, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{psd_factor, ThinSvd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytical,
    Era,
    EraTangential,
}

/// Balanced reduced model `(A_r, B_r, C_r)` with its retained Hankel
/// singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedRom {
    a_r: DMatrix<f64>,
    b_r: DMatrix<f64>,
    c_r: DMatrix<f64>,
    hsv: DVector<f64>,
    domain: TimeDomain,
    provenance: Provenance,
    impulse_step: Option<f64>,
}

impl BalancedRom {
    pub fn new(
        a_r: DMatrix<f64>,
        b_r: DMatrix<f64>,
        c_r: DMatrix<f64>,
        hsv: DVector<f64>,
        domain: TimeDomain,
        provenance: Provenance,
    ) -> Result<Self> {
        super::check_triple(&a_r, &b_r, &c_r)?;
        if hsv.len() != a_r.nrows() {
            return Err(Error::Dimension(format!(
                "{} Hankel singular values for a rank-{} model",
                hsv.len(),
                a_r.nrows()
            )));
        }
        if hsv.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Data("Hankel singular values must be strictly positive".into()));
        }
        if hsv.as_slice().windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Data("Hankel singular values must be non-increasing".into()));
        }
        if let TimeDomain::Discrete { step } = domain {
            if !(step > 0.0) {
                return Err(Error::Config(format!("sampling step must be positive, got {step}")));
            }
        }
        Ok(Self { a_r, b_r, c_r, hsv, domain, provenance, impulse_step: None })
    }

    /// Records the duration of the unit impulse used in training, when it
    /// differs from the model's own sampling period.
    pub fn with_impulse_step(mut self, step: Option<f64>) -> Self {
        self.impulse_step = step;
        self
    }

    pub fn hsv(&self) -> &DVector<f64> {
        &self.hsv
    }
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
    pub fn rank(&self) -> usize {
        self.a_r.nrows()
    }
    /// Input duration represented by one unit of ROM input; defaults to the
    /// sampling period.
    pub fn impulse_step(&self) -> Option<f64> {
        self.impulse_step.or(self.domain.step())
    }

    pub fn to_discrete(&self) -> Result<DiscreteLti> {
        match self.domain {
            TimeDomain::Discrete { step } => {
                DiscreteLti::new(self.a_r.clone(), self.b_r.clone(), self.c_r.clone(), step)
            }
            TimeDomain::Continuous => Err(Error::Config("model is continuous-time".into())),
        }
    }

    pub fn to_continuous(&self) -> Result<ContinuousLti> {
        match self.domain {
            TimeDomain::Continuous => {
                ContinuousLti::new(self.a_r.clone(), self.b_r.clone(), self.c_r.clone())
            }
            TimeDomain::Discrete { .. } => Err(Error::Config("model is discrete-time".into())),
        }
    }

    /// `C_r A_r^{k-1} B_r` for `k = 1..=count`.
    pub fn markov(&self, count: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(count);
        let mut x = self.b_r.clone();
        for _ in 0..count {
            out.push(&self.c_r * &x);
            x = &self.a_r * &x;
        }
        out
    }

    /// Runs the discrete recursion on per-step input columns from a zero
    /// state.
    pub fn simulate(&self, inputs: &DMatrix<f64>) -> Result<Trajectory> {
        self.to_discrete()?.simulate(inputs, &DVector::zeros(self.rank()))
    }
}

impl StateSpace for BalancedRom {
    fn a(&self) -> &DMatrix<f64> {
        &self.a_r
    }
    fn b(&self) -> &DMatrix<f64> {
        &self.b_r
    }
    fn c(&self) -> &DMatrix<f64> {
        &self.c_r
    }
    fn domain(&self) -> TimeDomain {
        self.domain
    }
}

/// Relative singular-value floor for rank decisions when a Gramian factor
/// came from the eigendecomposition fallback.
pub const FALLBACK_RANK_FLOOR: f64 = 1e-6;

/// Analytical balanced truncation output.
#[derive(Debug, Clone)]
pub struct BtResult {
    pub rom: BalancedRom,
    /// Direct modes `T_r` (n×r).
    pub t_direct: DMatrix<f64>,
    /// Adjoint modes `T_r^{-1}` (r×n).
    pub t_adjoint: DMatrix<f64>,
    /// Every singular value of `Uᵀ L`.
    pub hsv_all: DVector<f64>,
    /// Whether either Gramian needed the eigendecomposition fallback.
    pub factor_fallback: bool,
}

/// Square-root balanced truncation from precomputed Gramians.
///
/// Factors `W_p = U Uᵀ` and `W_o = L Lᵀ`, takes the SVD `Uᵀ L = W Σ Vᵀ`, and
/// projects with `T_r = U W_r Σ_r^{-1/2}`, `T_r^{-1} = Σ_r^{-1/2} V_rᵀ Lᵀ`.
pub fn analytical_bt_with<S: StateSpace + ?Sized>(
    sys: &S,
    gramians: &Gramians,
    r: usize,
) -> Result<BtResult> {
    let n = sys.n();
    if gramians.reachability.shape() != (n, n) || gramians.observability.shape() != (n, n) {
        return Err(Error::Dimension("Gramians do not match the state dimension".into()));
    }
    if r == 0 {
        return Err(Error::Config("reduced order must be positive".into()));
    }
    let (u, fb_p) = psd_factor(&gramians.reachability);
    let (l, fb_o) = psd_factor(&gramians.observability);
    let svd = ThinSvd::new(&(u.transpose() * &l));
    // An eigenvalue floor of 1e-14·λmax puts noise of order 1e-7 into the
    // factor, so the rank threshold follows it when the fallback was used.
    let floor = if fb_p || fb_o { FALLBACK_RANK_FLOOR } else { 1e-14 };
    let rank = svd.numerical_rank(floor);
    if r > rank {
        return Err(Error::Rank { requested: r, rank });
    }
    let s_r = svd.s.rows(0, r).into_owned();
    let inv_sqrt = DMatrix::from_diagonal(&s_r.map(|s| 1.0 / s.sqrt()));
    let t_direct = &u * svd.u.columns(0, r) * &inv_sqrt;
    let t_adjoint = &inv_sqrt * svd.v.columns(0, r).transpose() * l.transpose();

    let a_r = &t_adjoint * sys.a() * &t_direct;
    let b_r = &t_adjoint * sys.b();
    let c_r = sys.c() * &t_direct;
    if a_r.iter().chain(b_r.iter()).chain(c_r.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Conditioning("balancing transformation produced non-finite entries".into()));
    }
    let rom = BalancedRom::new(a_r, b_r, c_r, s_r, sys.domain(), Provenance::Analytical)?;
    Ok(BtResult { rom, t_direct, t_adjoint, hsv_all: svd.s, factor_fallback: fb_p || fb_o })
}

/// Balanced truncation with infinite-horizon Gramians: Lyapunov solves for
/// continuous systems, squared Smith iteration for discrete ones.
pub fn analytical_bt<S: StateSpace + ?Sized>(sys: &S, r: usize) -> Result<BtResult> {
    let gramians = match sys.domain() {
        TimeDomain::Continuous => gramians_continuous(&ContinuousLti::new(
            sys.a().clone(),
            sys.b().clone(),
            sys.c().clone(),
        )?)?,
        TimeDomain::Discrete { step } => gramians_discrete_converged(&DiscreteLti::new(
            sys.a().clone(),
            sys.b().clone(),
            sys.c().clone(),
            step,
        )?)?,
    };
    analytical_bt_with(sys, &gramians, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{frequency_points, transfer_function, unit_circle_grid};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn balanced_system_is_fixed_point() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-0.25, -0.5]));
        let sys = ContinuousLti::new(a.clone(), DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let g = gramians_continuous(&sys).unwrap();
        assert!((&g.reachability - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]))).amax() < 1e-14);
        let bt = analytical_bt(&sys, 2).unwrap();
        assert_abs_diff_eq!(bt.rom.hsv()[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bt.rom.hsv()[1], 1.0, epsilon = 1e-12);
        // Similar to the original: same diagonal dynamics up to ordering.
        assert!((bt.rom.a() - &a).amax() < 1e-12);
    }

    #[test]
    fn scalar_hsv() {
        let one = |x| DMatrix::from_element(1, 1, x);
        let sys = ContinuousLti::new(one(-1.0), one(2.0), one(1.0)).unwrap();
        let bt = analytical_bt(&sys, 1).unwrap();
        // sqrt(W_p W_o) = sqrt(2 * 0.5)
        assert_abs_diff_eq!(bt.rom.hsv()[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn full_order_balancing_is_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 6;
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let rho = crate::lti::eigenvalues(
            &DiscreteLti::new(a.clone(), DMatrix::zeros(n, 1), DMatrix::zeros(1, n), 1.0).unwrap(),
        )
        .radius;
        a *= 0.7 / rho;
        let b = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
        let sys = DiscreteLti::new(a, b, c, 1.0).unwrap();
        let bt = analytical_bt(&sys, n).unwrap();
        let pts = frequency_points(sys.domain(), &unit_circle_grid(1.0, 50));
        let g = transfer_function(&sys, &pts);
        let gr = transfer_function(&bt.rom, &pts);
        for (x, y) in g.iter().zip(gr.iter()) {
            let scale = x.value.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let err = (&x.value - &y.value).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(err <= 1e-8 * scale.max(1.0), "{err}");
        }
        // Biorthogonal modes.
        let id = &bt.t_adjoint * &bt.t_direct;
        assert!((id - DMatrix::identity(n, n)).amax() < 1e-8);
    }

    #[test]
    fn rank_error_reports_rank() {
        // Second state is unreachable.
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let sys = ContinuousLti::new(a, b, c).unwrap();
        match analytical_bt(&sys, 2) {
            Err(Error::Rank { requested: 2, rank: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unstable_system_rejected() {
        let one = |x| DMatrix::from_element(1, 1, x);
        let sys = ContinuousLti::new(one(0.5), one(1.0), one(1.0)).unwrap();
        assert!(matches!(analytical_bt(&sys, 1), Err(Error::Unstable(_))));
    }

    #[test]
    fn rom_validates_hsv_order() {
        let m = DMatrix::identity(2, 2);
        let bad = DVector::from_vec(vec![1.0, 2.0]);
        assert!(BalancedRom::new(m.clone(), m.clone(), m, bad, TimeDomain::Continuous, Provenance::Era).is_err());
    }
}
