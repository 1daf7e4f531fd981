//! Intrusive projection baselines: POD-Galerkin and least-squares
//! Petrov–Galerkin reduced models, plus the relative-error metric.

use nalgebra::{DMatrix, DVector, LU};

use crate::error::{Error, Result};
use crate::linalg::condition_number;
use crate::lti::{rk3_step, ContinuousLti, StateSpace, Trajectory};
use crate::snapshots::{PodBasis, VariableBlock};

/// Growth factor over the first nonzero state norm that counts as blow-up.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

/// Galerkin reduced model `q̂' = Â q̂ + B̂ u + f̂`.
#[derive(Debug, Clone)]
pub struct GalerkinRom {
    a_reduced: DMatrix<f64>,
    b_reduced: DMatrix<f64>,
    /// `Vᵀ S A q̄`, the constant drift from a nonzero reference state.
    offset: DVector<f64>,
    basis: PodBasis,
}

impl GalerkinRom {
    pub fn a_reduced(&self) -> &DMatrix<f64> {
        &self.a_reduced
    }
    pub fn b_reduced(&self) -> &DMatrix<f64> {
        &self.b_reduced
    }
    pub fn basis(&self) -> &PodBasis {
        &self.basis
    }
    pub fn m(&self) -> usize {
        self.a_reduced.nrows()
    }
    pub fn p(&self) -> usize {
        self.b_reduced.ncols()
    }
    /// `q̂(0) = Vᵀ S (q₀ - q̄)`.
    pub fn initial_state(&self, q0: &DVector<f64>) -> DVector<f64> {
        self.basis.project(q0)
    }
}

fn check_basis(sys: &ContinuousLti, basis: &PodBasis) -> Result<()> {
    if basis.n() != sys.n() {
        return Err(Error::Dimension(format!(
            "basis has {} rows, system has {} states",
            basis.n(),
            sys.n()
        )));
    }
    Ok(())
}

/// Scaled test/trial pieces shared by both projections: `S⁻¹V`, `VᵀS`.
fn scaled_bases(basis: &PodBasis) -> (DMatrix<f64>, DMatrix<f64>) {
    let s = basis.scaling().diagonal();
    let v = basis.modes();
    let mut trial = v.clone();
    let mut test_t = v.transpose();
    for i in 0..v.nrows() {
        trial.row_mut(i).scale_mut(1.0 / s[i]);
        test_t.column_mut(i).scale_mut(s[i]);
    }
    (trial, test_t)
}

/// `Â = Vᵀ S A S⁻¹ V`, `B̂ = Vᵀ S B`, checked against the explicit triple
/// products with diagonal `S`.
pub fn build_galerkin(sys: &ContinuousLti, basis: &PodBasis) -> Result<GalerkinRom> {
    check_basis(sys, basis)?;
    let (trial, test_t) = scaled_bases(basis);
    let a_reduced = &test_t * (sys.a() * &trial);
    let b_reduced = &test_t * sys.b();
    let offset = &test_t * (sys.a() * basis.reference_state());

    let s = DMatrix::from_diagonal(&basis.scaling().diagonal());
    let s_inv = DMatrix::from_diagonal(&basis.scaling().diagonal().map(|x| 1.0 / x));
    let v = basis.modes();
    let check_a = v.transpose() * &s * sys.a() * &s_inv * v;
    let check_b = v.transpose() * &s * sys.b();
    let tol = |m: &DMatrix<f64>| 1e-10 * m.amax().max(1.0);
    if (&check_a - &a_reduced).amax() > tol(&check_a) || (&check_b - &b_reduced).amax() > tol(&check_b) {
        return Err(Error::Conditioning("reduced operators failed the recomputation check".into()));
    }
    Ok(GalerkinRom { a_reduced, b_reduced, offset, basis: basis.clone() })
}

/// One RK3 step of the Galerkin model with `u` held over the step.
pub fn step_galerkin_rk3(rom: &GalerkinRom, state: &DVector<f64>, input: &DVector<f64>, dt: f64) -> DVector<f64> {
    let forcing = &rom.b_reduced * input + &rom.offset;
    rk3_step(&rom.a_reduced, &forcing, state, dt)
}

/// Where a reduced run stopped, if it blew up.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub step: usize,
    pub norm: f64,
}

/// Reduced states of a run, truncated at divergence.
#[derive(Debug, Clone)]
pub struct ReducedRun {
    /// `m × (steps + 1)` including the initial state.
    pub states: DMatrix<f64>,
    pub dt: f64,
    pub divergence: Option<DivergenceReport>,
}

impl ReducedRun {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }
}

struct Guard {
    reference: f64,
}

impl Guard {
    fn new(x0: &DVector<f64>) -> Self {
        Self { reference: x0.norm() }
    }
    fn check(&mut self, step: usize, x: &DVector<f64>) -> Option<DivergenceReport> {
        let norm = x.norm();
        if !norm.is_finite() {
            return Some(DivergenceReport { step, norm });
        }
        if self.reference == 0.0 {
            self.reference = norm;
            return None;
        }
        (norm > DIVERGENCE_FACTOR * self.reference).then_some(DivergenceReport { step, norm })
    }
}

fn run<F>(m: usize, inputs: &DMatrix<f64>, dt: f64, x0: &DVector<f64>, mut step: F) -> Result<ReducedRun>
where
    F: FnMut(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    if x0.len() != m {
        return Err(Error::Dimension(format!("initial state has length {}, ROM has {m}", x0.len())));
    }
    let steps = inputs.ncols();
    let mut states = DMatrix::zeros(m, steps + 1);
    states.set_column(0, x0);
    let mut x = x0.clone();
    let mut guard = Guard::new(x0);
    for k in 0..steps {
        x = step(&x, &inputs.column(k).into_owned())?;
        if let Some(report) = guard.check(k + 1, &x) {
            log::warn!("reduced run diverged at step {} (norm {:e})", report.step, report.norm);
            return Ok(ReducedRun { states: states.columns(0, k + 1).into_owned(), dt, divergence: Some(report) });
        }
        states.set_column(k + 1, &x);
    }
    Ok(ReducedRun { states, dt, divergence: None })
}

/// Integrates the Galerkin model over per-step input columns.
pub fn simulate_galerkin(rom: &GalerkinRom, inputs: &DMatrix<f64>, dt: f64, x0: &DVector<f64>) -> Result<ReducedRun> {
    check_inputs(inputs, rom.p())?;
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    run(rom.m(), inputs, dt, x0, |x, u| Ok(step_galerkin_rk3(rom, x, u, dt)))
}

fn check_inputs(inputs: &DMatrix<f64>, p: usize) -> Result<()> {
    if inputs.nrows() != p {
        return Err(Error::Dimension(format!("input has {} channels, model has {p}", inputs.nrows())));
    }
    Ok(())
}

/// Least-squares Petrov–Galerkin model with backward-Euler time stepping.
///
/// With `β₀ = 1` the test basis is `W = S (I - Δt A) S⁻¹ V` and each step
/// minimises the scaled backward-Euler residual, i.e. solves the normal
/// equations `WᵀW q̂ᵏ = Wᵀ (V q̂ᵏ⁻¹ + Δt S B uᵏ)`. With `β₀ = 0` the test
/// basis is `V` and stepping is the explicit Galerkin step.
#[derive(Debug, Clone)]
pub struct LspgRom {
    galerkin: GalerkinRom,
    test_basis: DMatrix<f64>,
    dt: f64,
    beta0: u8,
    normal: Option<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// `WᵀV`.
    reduced_mass: DMatrix<f64>,
    /// `Wᵀ V`, applied to the previous state.
    reduced_dynamics: DMatrix<f64>,
    /// `Δt Wᵀ S B`.
    reduced_input: DMatrix<f64>,
    /// `Δt Wᵀ S A q̄`.
    reduced_offset: DVector<f64>,
    mass_condition: f64,
}

impl LspgRom {
    pub fn test_basis(&self) -> &DMatrix<f64> {
        &self.test_basis
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn beta0(&self) -> u8 {
        self.beta0
    }
    pub fn reduced_mass(&self) -> &DMatrix<f64> {
        &self.reduced_mass
    }
    /// Two-norm condition number of `WᵀV`.
    pub fn mass_condition(&self) -> f64 {
        self.mass_condition
    }
    pub fn galerkin(&self) -> &GalerkinRom {
        &self.galerkin
    }
    pub fn m(&self) -> usize {
        self.galerkin.m()
    }
}

pub fn build_lspg(sys: &ContinuousLti, basis: &PodBasis, dt: f64, beta0: u8) -> Result<LspgRom> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    if beta0 > 1 {
        return Err(Error::Config(format!("beta0 must be 0 or 1, got {beta0}")));
    }
    let galerkin = build_galerkin(sys, basis)?;
    let v = basis.modes();
    if beta0 == 0 {
        let m = galerkin.m();
        return Ok(LspgRom {
            test_basis: v.clone(),
            dt,
            beta0,
            normal: None,
            reduced_mass: DMatrix::identity(m, m),
            reduced_dynamics: DMatrix::identity(m, m),
            reduced_input: galerkin.b_reduced.clone() * dt,
            reduced_offset: galerkin.offset.clone() * dt,
            mass_condition: 1.0,
            galerkin,
        });
    }
    let (trial, _) = scaled_bases(basis);
    let s = basis.scaling().diagonal();
    // W = S (I - Δt A) S⁻¹ V
    let mut w = &trial - sys.a() * &trial * dt;
    for i in 0..w.nrows() {
        w.row_mut(i).scale_mut(s[i]);
    }
    let wt = w.transpose();
    let reduced_mass = &wt * v;
    let mass_condition = condition_number(&reduced_mass);
    let normal_matrix = &wt * &w;
    let lu = normal_matrix.clone().lu();
    if !lu.is_invertible() || !mass_condition.is_finite() {
        return Err(Error::Conditioning(format!(
            "reduced LSPG system is singular (cond(WᵀV) = {mass_condition:e})"
        )));
    }
    log::info!("LSPG build: cond(WᵀV) = {mass_condition:.3e}");
    let sb = DMatrix::from_fn(sys.n(), sys.p(), |i, j| s[i] * sys.b()[(i, j)]);
    let sa_ref = (sys.a() * basis.reference_state()).component_mul(&s);
    Ok(LspgRom {
        reduced_dynamics: reduced_mass.clone(),
        reduced_input: &wt * sb * dt,
        reduced_offset: &wt * sa_ref * dt,
        test_basis: w,
        dt,
        beta0,
        normal: Some(lu),
        reduced_mass,
        mass_condition,
        galerkin,
    })
}

/// One LSPG step with input `u` applied over the step.
pub fn step_lspg(rom: &LspgRom, state: &DVector<f64>, input: &DVector<f64>) -> Result<DVector<f64>> {
    match &rom.normal {
        None => Ok(step_galerkin_rk3(&rom.galerkin, state, input, rom.dt)),
        Some(lu) => {
            let rhs = &rom.reduced_dynamics * state + &rom.reduced_input * input + &rom.reduced_offset;
            lu.solve(&rhs)
                .filter(|x| x.iter().all(|v| v.is_finite()))
                .ok_or_else(|| Error::Conditioning("LSPG normal-equation solve failed".into()))
        }
    }
}

/// Scaled full-order backward-Euler residual of an LSPG step.
pub fn lspg_residual(
    sys: &ContinuousLti,
    rom: &LspgRom,
    previous: &DVector<f64>,
    next: &DVector<f64>,
    input: &DVector<f64>,
) -> DVector<f64> {
    let basis = rom.galerkin.basis();
    let s = basis.scaling().diagonal();
    let x_prev = (basis.modes() * previous).component_div(&s);
    let x_next = (basis.modes() * next).component_div(&s);
    let dt = rom.dt;
    let r = &x_next - &x_prev - (sys.a() * (&x_next + basis.reference_state()) + sys.b() * input) * dt;
    r.component_mul(&s)
}

pub fn simulate_lspg(rom: &LspgRom, inputs: &DMatrix<f64>, x0: &DVector<f64>) -> Result<ReducedRun> {
    check_inputs(inputs, rom.galerkin.p())?;
    run(rom.m(), inputs, rom.dt, x0, |x, u| step_lspg(rom, x, u))
}

/// Row indices kept after dropping the last `exclude_tail` entries of each
/// block.
fn kept_rows(n: usize, blocks: Option<&[VariableBlock]>, exclude_tail: usize) -> Result<Vec<usize>> {
    let whole = [VariableBlock::new("state", 0, n)];
    let blocks = blocks.unwrap_or(&whole);
    crate::snapshots::validate_blocks(blocks, n)?;
    let mut rows = Vec::new();
    for b in blocks {
        let keep = b.len.saturating_sub(exclude_tail);
        rows.extend(b.start..b.start + keep);
    }
    if rows.is_empty() {
        return Err(Error::Config("tail exclusion removes every entry".into()));
    }
    Ok(rows)
}

/// Per-column `‖q - q̃‖₂ / ‖q‖₂`, with the last `exclude_tail` entries of
/// every block dropped first. Columns with a zero reference norm give
/// `None`.
pub fn relative_error_columns(
    reference: &DMatrix<f64>,
    approx: &DMatrix<f64>,
    blocks: Option<&[VariableBlock]>,
    exclude_tail: usize,
) -> Result<Vec<Option<f64>>> {
    if reference.shape() != approx.shape() {
        return Err(Error::Dimension(format!(
            "compared series are {:?} and {:?}",
            reference.shape(),
            approx.shape()
        )));
    }
    let rows = kept_rows(reference.nrows(), blocks, exclude_tail)?;
    Ok((0..reference.ncols())
        .map(|k| {
            let (mut num, mut den) = (0.0, 0.0);
            for &i in &rows {
                let q = reference[(i, k)];
                let d = q - approx[(i, k)];
                num += d * d;
                den += q * q;
            }
            (den > 0.0).then(|| (num / den).sqrt())
        })
        .collect())
}

/// Relative output error between trajectories on the same time grid.
pub fn relative_error(
    full: &Trajectory,
    reduced: &Trajectory,
    blocks: Option<&[VariableBlock]>,
    exclude_tail: usize,
) -> Result<Vec<Option<f64>>> {
    if full.len() != reduced.len() {
        return Err(Error::Dimension(format!(
            "trajectories have {} and {} samples",
            full.len(),
            reduced.len()
        )));
    }
    for (a, b) in full.times().iter().zip(reduced.times()) {
        if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
            return Err(Error::Data(format!("time grids differ: {a} vs {b}")));
        }
    }
    relative_error_columns(full.outputs(), reduced.outputs(), blocks, exclude_tail)
}
