use nalgebra::{DMatrix, DVector};

use super::{ContinuousLti, DiscreteLti, StateSpace};
use crate::era::MarkovSequence;
use crate::error::{Error, Result};
use crate::testbed::InputSignal;

/// Uniformly sampled states and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: DMatrix<f64>,
    outputs: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self> {
        if times.len() != states.ncols() || times.len() != outputs.ncols() {
            return Err(Error::Dimension(format!(
                "trajectory lengths differ: {} times, {} states, {} outputs",
                times.len(),
                states.ncols(),
                outputs.ncols()
            )));
        }
        if times.len() >= 2 {
            let h = times[1] - times[0];
            if !(h > 0.0) {
                return Err(Error::Data("trajectory times must be strictly increasing".into()));
            }
            for w in times.windows(2) {
                let d = w[1] - w[0];
                if (d - h).abs() > 1e-12 * h.max(w[1].abs()) * 16.0 {
                    return Err(Error::Data(format!(
                        "non-uniform spacing: {d} vs {h} at t = {}",
                        w[0]
                    )));
                }
            }
        }
        Ok(Self { times, states, outputs })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
    /// States as columns, one per sample.
    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }
    /// Outputs as columns, one per sample.
    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// One explicit third-order SSP Runge–Kutta step of `ẋ = A x + B u` with
/// `u` held constant over the step.
pub fn rk3_step(
    a: &DMatrix<f64>,
    bu: &DVector<f64>,
    x: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    let f = |s: &DVector<f64>| a * s + bu;
    let x1 = x + f(x) * dt;
    let x2 = x * 0.75 + (&x1 + f(&x1) * dt) * 0.25;
    x / 3.0 + (&x2 + f(&x2) * dt) * (2.0 / 3.0)
}

/// Steps needed to cover `t_final` with a step no larger than `dt`.
pub(crate) fn step_count(dt: f64, t_final: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    if !(t_final >= dt * (1.0 - 1e-12)) || !t_final.is_finite() {
        return Err(Error::Config(format!("t_final {t_final} must be at least dt {dt}")));
    }
    Ok(((t_final / dt) - 1e-9).ceil().max(1.0) as usize)
}

/// Integrates a continuous system with the third-order Runge–Kutta scheme.
///
/// The scalar signal drives every input channel and is held constant over
/// each step. When `t_final` is not a multiple of `dt` the step is shrunk
/// uniformly so that the last sample lands on `t_final`.
pub fn simulate_rk3(
    sys: &ContinuousLti,
    input: &InputSignal,
    dt: f64,
    t_final: f64,
    x0: &DVector<f64>,
) -> Result<Trajectory> {
    let steps = step_count(dt, t_final)?;
    let h = t_final / steps as f64;
    let u = input.render(h, steps)?;
    let mut inputs = DMatrix::zeros(sys.p(), steps);
    for (k, &v) in u.iter().enumerate() {
        inputs.column_mut(k).fill(v);
    }
    simulate_rk3_samples(sys, &inputs, h, x0)
}

/// Integrates with explicit per-step input columns (zero-order hold).
pub fn simulate_rk3_samples(
    sys: &ContinuousLti,
    inputs: &DMatrix<f64>,
    dt: f64,
    x0: &DVector<f64>,
) -> Result<Trajectory> {
    if inputs.nrows() != sys.p() {
        return Err(Error::Dimension(format!(
            "input has {} channels, system has {}",
            inputs.nrows(),
            sys.p()
        )));
    }
    if x0.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, system has {}",
            x0.len(),
            sys.n()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let steps = inputs.ncols();
    let mut states = DMatrix::zeros(sys.n(), steps + 1);
    states.set_column(0, x0);
    let mut x = x0.clone();
    for k in 0..steps {
        let bu = sys.b() * inputs.column(k);
        x = rk3_step(sys.a(), &bu, &x, dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: k + 1,
                reason: "non-finite state".into(),
            });
        }
        states.set_column(k + 1, &x);
    }
    let outputs = sys.c() * &states;
    let times = (0..=steps).map(|k| k as f64 * dt).collect();
    Trajectory::new(times, states, outputs)
}

/// Impulse-response samples `h_k = C A^{k-1} B`, `k = 1..=count`.
pub fn markov_parameters(sys: &DiscreteLti, count: usize) -> Result<MarkovSequence> {
    if count == 0 {
        return Err(Error::Config("Markov parameter count must be at least 1".into()));
    }
    let mut samples = Vec::with_capacity(count);
    let mut x = sys.b().clone();
    for k in 0..count {
        samples.push(sys.c() * &x);
        if k + 1 < count {
            x = sys.a() * &x;
        }
    }
    MarkovSequence::new(samples, sys.step(), sys.step())
}
