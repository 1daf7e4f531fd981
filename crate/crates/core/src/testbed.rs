//! Full-order model supply: a synthetic stiff advection–diffusion–reaction
//! generator and forcing signals.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::condition_number;
use crate::lti::{eigenvalues, ContinuousLti, StateSpace};

/// Outlet back pressure of the reference flame configuration, Pa.
pub const REFERENCE_BACK_PRESSURE: f64 = 976_139.0;
/// Forcing amplitude of the reference prediction case as a fraction of the
/// back pressure.
pub const REFERENCE_FORCING_FRACTION: f64 = 1e-4;
/// Forcing frequency of the reference prediction case, Hz.
pub const REFERENCE_FORCING_FREQUENCY: f64 = 215e3;
/// Integrator step of the reference prediction case, s.
pub const REFERENCE_TIME_STEP: f64 = 1e-9;

/// Scalar forcing signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSignal {
    /// 1 at the first sample, 0 afterwards.
    UnitImpulse,
    /// `amplitude · sin(2π · frequency · t)`.
    Sinusoid { amplitude: f64, frequency: f64 },
    /// Sum of equal-amplitude sinusoids.
    SineSum { amplitude: f64, frequencies: Vec<f64> },
    /// `exp(-(t - mean)² / (2 std²))`.
    GaussianPulse { mean: f64, std: f64 },
    /// Explicit values, one per sample.
    Samples { values: Vec<f64> },
}

impl InputSignal {
    pub fn validate(&self) -> Result<()> {
        match self {
            InputSignal::UnitImpulse => Ok(()),
            InputSignal::Sinusoid { amplitude, frequency } => {
                if !(*amplitude > 0.0 && *frequency > 0.0 && amplitude.is_finite() && frequency.is_finite()) {
                    return Err(Error::Config(format!(
                        "sinusoid needs positive amplitude and frequency, got {amplitude} and {frequency}"
                    )));
                }
                Ok(())
            }
            InputSignal::SineSum { amplitude, frequencies } => {
                if frequencies.is_empty() {
                    return Err(Error::Config("sine sum needs at least one frequency".into()));
                }
                for f in frequencies {
                    InputSignal::Sinusoid { amplitude: *amplitude, frequency: *f }.validate()?;
                }
                Ok(())
            }
            InputSignal::GaussianPulse { mean, std } => {
                if !(*std > 0.0 && std.is_finite() && mean.is_finite()) {
                    return Err(Error::Config(format!("gaussian pulse needs positive std, got {std}")));
                }
                Ok(())
            }
            InputSignal::Samples { values } => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data("sampled signal has non-finite values".into()));
                }
                Ok(())
            }
        }
    }

    /// Values at `t_k = k·dt` for `k = 0..count`.
    pub fn render(&self, dt: f64, count: usize) -> Result<Vec<f64>> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        self.validate()?;
        let t = |k: usize| k as f64 * dt;
        Ok(match self {
            InputSignal::UnitImpulse => (0..count).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect(),
            InputSignal::Sinusoid { amplitude, frequency } => {
                (0..count).map(|k| amplitude * (2.0 * PI * frequency * t(k)).sin()).collect()
            }
            InputSignal::SineSum { amplitude, frequencies } => (0..count)
                .map(|k| frequencies.iter().map(|f| amplitude * (2.0 * PI * f * t(k)).sin()).sum())
                .collect(),
            InputSignal::GaussianPulse { mean, std } => (0..count)
                .map(|k| (-(t(k) - mean).powi(2) / (2.0 * std * std)).exp())
                .collect(),
            InputSignal::Samples { values } => {
                if values.len() < count {
                    return Err(Error::Config(format!(
                        "sampled signal has {} values, {count} requested",
                        values.len()
                    )));
                }
                values[..count].to_vec()
            }
        })
    }

    /// The forcing used for the reference unseen-frequency prediction.
    pub fn reference_forcing() -> Self {
        InputSignal::Sinusoid {
            amplitude: REFERENCE_FORCING_FRACTION * REFERENCE_BACK_PRESSURE,
            frequency: REFERENCE_FORCING_FREQUENCY,
        }
    }
}

/// Strength of the reactive relaxation coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stiffness {
    /// Relaxation rate in 1/s.
    Rate(f64),
    /// Rate tuned until the two-norm condition number of `A` is near this.
    TargetCondition(f64),
}

/// Synthetic one-dimensional advection–diffusion–reaction system.
///
/// Field 0 is advected with upwind differences and diffused with central
/// differences. The left ghost cell re-injects `recirculation` times the
/// outflow, the right ghost is zero. Every further field is advected and
/// diffused the same way and relaxes towards field 0 at the stiffness rate.
/// States are ordered field by field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticFomSpec {
    pub cells: usize,
    pub advection_speed: f64,
    pub diffusivity: f64,
    pub stiffness: Stiffness,
    pub dx: f64,
    pub variables: usize,
    pub recirculation: f64,
    pub input_cell: usize,
    pub input_field: usize,
}

impl Default for SyntheticFomSpec {
    fn default() -> Self {
        Self {
            cells: 50,
            advection_speed: 1.0,
            diffusivity: 1e-4,
            stiffness: Stiffness::Rate(0.0),
            dx: 0.01,
            variables: 1,
            recirculation: 0.0,
            input_cell: 0,
            input_field: 0,
        }
    }
}

/// Synthetic system together with build diagnostics.
#[derive(Debug, Clone)]
pub struct SyntheticFom {
    pub system: ContinuousLti,
    pub rate: f64,
    pub condition: f64,
    pub abscissa: f64,
}

impl SyntheticFomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cells < 3 {
            return Err(Error::Config(format!("need at least 3 cells, got {}", self.cells)));
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return Err(Error::Config(format!("dx must be positive, got {}", self.dx)));
        }
        if self.variables == 0 {
            return Err(Error::Config("need at least one field".into()));
        }
        if !(self.advection_speed >= 0.0 && self.advection_speed.is_finite()) {
            return Err(Error::Config("advection speed must be non-negative".into()));
        }
        if !(self.diffusivity >= 0.0 && self.diffusivity.is_finite()) {
            return Err(Error::Config("diffusivity must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.recirculation) {
            return Err(Error::Config(format!(
                "recirculation gain must lie in [0, 1), got {}",
                self.recirculation
            )));
        }
        if self.input_cell >= self.cells || self.input_field >= self.variables {
            return Err(Error::Config("input location outside the grid".into()));
        }
        match self.stiffness {
            Stiffness::Rate(k) if !(k >= 0.0 && k.is_finite()) => {
                return Err(Error::Config(format!("stiffness rate must be non-negative, got {k}")))
            }
            Stiffness::TargetCondition(c) if !(c > 1.0 && c.is_finite()) => {
                return Err(Error::Config(format!("target condition must exceed 1, got {c}")))
            }
            _ => {}
        }
        let coupled = matches!(self.stiffness, Stiffness::TargetCondition(_))
            || matches!(self.stiffness, Stiffness::Rate(k) if k > 0.0);
        if coupled && self.variables < 2 {
            return Err(Error::Config("reactive coupling needs at least two fields".into()));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.cells * self.variables
    }

    /// System matrix for a given relaxation rate.
    pub fn matrix(&self, rate: f64) -> DMatrix<f64> {
        let n = self.cells;
        let v = self.variables;
        let adv = self.advection_speed / self.dx;
        let dif = self.diffusivity / (self.dx * self.dx);
        let mut a = DMatrix::zeros(n * v, n * v);
        for f in 0..v {
            let o = f * n;
            for i in 0..n {
                a[(o + i, o + i)] += -adv - 2.0 * dif;
                if i > 0 {
                    a[(o + i, o + i - 1)] += adv + dif;
                }
                if i + 1 < n {
                    a[(o + i, o + i + 1)] += dif;
                }
            }
            if f == 0 && self.recirculation > 0.0 {
                a[(0, n - 1)] += (adv + dif) * self.recirculation;
            }
            if f > 0 {
                for i in 0..n {
                    a[(o + i, o + i)] -= rate;
                    a[(o + i, i)] += rate;
                }
            }
        }
        a
    }

    fn assemble(&self, rate: f64) -> Result<SyntheticFom> {
        let a = self.matrix(rate);
        let dim = self.state_dim();
        let mut b = DMatrix::zeros(dim, 1);
        b[(self.input_field * self.cells + self.input_cell, 0)] = 1.0;
        let system = ContinuousLti::new(a, b, DMatrix::identity(dim, dim))?;
        let spec = eigenvalues(&system);
        if !(spec.abscissa < 0.0) {
            return Err(Error::Unstable(format!(
                "synthetic system has spectral abscissa {:.3e}",
                spec.abscissa
            )));
        }
        let condition = condition_number(system.a());
        Ok(SyntheticFom { system, rate, condition, abscissa: spec.abscissa })
    }
}

/// Builds the synthetic system; a condition target is met by fixed-point
/// iteration on the relaxation rate and accepted within a factor of two.
pub fn build_synthetic_fom(spec: &SyntheticFomSpec) -> Result<SyntheticFom> {
    spec.validate()?;
    match spec.stiffness {
        Stiffness::Rate(rate) => spec.assemble(rate),
        Stiffness::TargetCondition(target) => {
            let base = spec.assemble(0.0)?;
            if base.condition >= target / 2.0 {
                return Err(Error::Config(format!(
                    "transport alone already has condition {:.3e}, above the target {target:.3e}",
                    base.condition
                )));
            }
            let scale = spec.advection_speed / spec.dx + spec.diffusivity / (spec.dx * spec.dx);
            let mut rate = scale.max(1.0) * target / base.condition;
            let mut best = base;
            for _ in 0..40 {
                let fom = spec.assemble(rate)?;
                let ratio = target / fom.condition;
                best = fom;
                if (0.5..=2.0).contains(&ratio) {
                    log::info!("synthetic system: rate {rate:.3e}, condition {:.3e}", best.condition);
                    return Ok(best);
                }
                rate *= ratio;
                if !rate.is_finite() || rate <= 0.0 {
                    break;
                }
            }
            Err(Error::Conditioning(format!(
                "condition target {target:.3e} not reached; achieved {:.3e} at rate {:.3e}",
                best.condition, best.rate
            )))
        }
    }
}
