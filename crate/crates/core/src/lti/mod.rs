//! Dense LTI state-space core.
//!
//! Continuous systems follow `ẋ = A x + B u`, `y = C x`; discrete systems
//! follow `x_{k+1} = A x_k + B u_k`, `y_k = C x_k`. There is no feedthrough
//! term anywhere in the toolkit.

mod balance;
mod discretize;
mod freq;
mod gramians;
mod lyapunov;
mod simulate;
mod spectrum;

pub use balance::{analytical_bt, analytical_bt_with, BalancedRom, BtResult, Provenance, FALLBACK_RANK_FLOOR};
pub use discretize::discretize_exact;
pub use freq::{
    frequency_points, hinf_error_estimate, hinf_error_refined, log_grid, transfer_function,
    unit_circle_grid, FrequencyResponse, HinfEstimate,
};
pub use gramians::{gramians_continuous, gramians_discrete, gramians_discrete_converged, Gramians};
pub use lyapunov::{solve_lyapunov, LYAPUNOV_MAX_ORDER};
pub use simulate::{markov_parameters, rk3_step, simulate_rk3, simulate_rk3_samples, Trajectory};
pub use spectrum::{eigenvalues, Spectrum};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeDomain {
    Continuous,
    Discrete { step: f64 },
}

impl TimeDomain {
    pub fn step(&self) -> Option<f64> {
        match self {
            TimeDomain::Continuous => None,
            TimeDomain::Discrete { step } => Some(*step),
        }
    }
}

/// Common read access to `(A, B, C)` triples.
pub trait StateSpace {
    fn a(&self) -> &DMatrix<f64>;
    fn b(&self) -> &DMatrix<f64>;
    fn c(&self) -> &DMatrix<f64>;
    fn domain(&self) -> TimeDomain;

    fn n(&self) -> usize {
        self.a().nrows()
    }
    fn p(&self) -> usize {
        self.b().ncols()
    }
    fn q(&self) -> usize {
        self.c().nrows()
    }
}

pub(crate) fn check_triple(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!("A is {}x{}, expected square", n, a.ncols())));
    }
    if n == 0 {
        return Err(Error::Dimension("state dimension must be positive".into()));
    }
    if b.nrows() != n || b.ncols() == 0 {
        return Err(Error::Dimension(format!(
            "B is {}x{}, expected {}xp with p > 0",
            b.nrows(),
            b.ncols(),
            n
        )));
    }
    if c.ncols() != n || c.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "C is {}x{}, expected qx{} with q > 0",
            c.nrows(),
            c.ncols(),
            n
        )));
    }
    for (name, m) in [("A", a), ("B", b), ("C", c)] {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data(format!("{name} contains non-finite entries")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLti {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl ContinuousLti {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        check_triple(&a, &b, &c)?;
        Ok(Self { a, b, c })
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (self.a, self.b, self.c)
    }
}

impl StateSpace for ContinuousLti {
    fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    fn domain(&self) -> TimeDomain {
        TimeDomain::Continuous
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLti {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    step: f64,
}

impl DiscreteLti {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, step: f64) -> Result<Self> {
        check_triple(&a, &b, &c)?;
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Config(format!("sampling step must be positive, got {step}")));
        }
        Ok(Self { a, b, c, step })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64) {
        (self.a, self.b, self.c, self.step)
    }

    /// Simulates the recursion from `x0` with one input column per step.
    ///
    /// The returned trajectory holds `inputs.ncols() + 1` samples: the initial
    /// state and the state after each step.
    pub fn simulate(&self, inputs: &DMatrix<f64>, x0: &nalgebra::DVector<f64>) -> Result<Trajectory> {
        if inputs.nrows() != self.p() {
            return Err(Error::Dimension(format!(
                "input has {} channels, system has {}",
                inputs.nrows(),
                self.p()
            )));
        }
        if x0.len() != self.n() {
            return Err(Error::Dimension(format!(
                "initial state has length {}, system has {}",
                x0.len(),
                self.n()
            )));
        }
        let steps = inputs.ncols();
        let mut states = DMatrix::zeros(self.n(), steps + 1);
        states.set_column(0, x0);
        let mut x = x0.clone();
        for k in 0..steps {
            x = &self.a * &x + &self.b * inputs.column(k);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    step: k + 1,
                    reason: "non-finite state".into(),
                });
            }
            states.set_column(k + 1, &x);
        }
        let outputs = &self.c * &states;
        let times = (0..=steps).map(|k| k as f64 * self.step).collect();
        Trajectory::new(times, states, outputs)
    }
}

impl StateSpace for DiscreteLti {
    fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    fn domain(&self) -> TimeDomain {
        TimeDomain::Discrete { step: self.step }
    }
}
