//! Experiment pipeline shared by the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use nibrom_core::era::{
    period_ratio, sample_impulse_with_states, ImpulseData, ImpulseSource, MarkovSequence, RankSelector,
};
use nibrom_core::io::{self, LoadedSystem, SystemDescriptor};
use nibrom_core::lti::{
    discretize_exact, eigenvalues, simulate_rk3_samples, BalancedRom, ContinuousLti, DiscreteLti, Provenance,
    StateSpace, TimeDomain,
};
use nibrom_core::projection::{
    build_galerkin, build_lspg, relative_error_columns, simulate_galerkin, simulate_lspg, ReducedRun,
};
use nibrom_core::scalability::{
    simulate_dd, train_dd, BlockRom, DdRom, OutputPartition, TangentialProjection, TangentialSpec,
};
use nibrom_core::snapshots::{pod_per_block, pod_with, uniform_blocks, PodBasis, PodOptions, SnapshotMatrix, VariableBlock};
use nibrom_core::testbed::{build_synthetic_fom, InputSignal};
use nibrom_core::Error;

use crate::config::{ratio, BaselineConfig, Integrator, RunConfig, SplitSpec, SystemSource};
use crate::manifest::Manifest;

/// The system under study.
#[derive(Debug, Clone)]
pub enum Plant {
    Continuous(ContinuousLti),
    Discrete(DiscreteLti),
}

impl Plant {
    pub fn parts(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        match self {
            Plant::Continuous(s) => (s.a(), s.b(), s.c()),
            Plant::Discrete(s) => (s.a(), s.b(), s.c()),
        }
    }
    pub fn n(&self) -> usize {
        self.parts().0.nrows()
    }
    pub fn p(&self) -> usize {
        self.parts().1.ncols()
    }
    pub fn q(&self) -> usize {
        self.parts().2.nrows()
    }
    pub fn descriptor(&self, blocks: &[VariableBlock]) -> SystemDescriptor {
        let (kind, step) = match self {
            Plant::Continuous(_) => (io::SystemKind::Continuous, None),
            Plant::Discrete(s) => (io::SystemKind::Discrete, Some(s.step())),
        };
        SystemDescriptor { kind, step, blocks: blocks.to_vec() }
    }
}

/// Eigenvalue and conditioning report for a system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub domain: String,
    pub stable: bool,
    pub spectral_abscissa: f64,
    pub spectral_radius: f64,
    pub condition_number: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stiffness_rate: Option<f64>,
    /// `[re, im]` pairs, largest real part first.
    pub eigenvalues: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct PlantInfo {
    pub plant: Plant,
    pub blocks: Vec<VariableBlock>,
    pub diagnostics: Diagnostics,
}

fn diagnostics<S: StateSpace>(sys: &S, condition: f64, rate: Option<f64>) -> Diagnostics {
    let sp = eigenvalues(sys);
    Diagnostics {
        n: sys.n(),
        p: sys.p(),
        q: sys.q(),
        domain: match sys.domain() {
            TimeDomain::Continuous => "continuous".into(),
            TimeDomain::Discrete { step } => format!("discrete (step {step})"),
        },
        stable: sp.is_stable(),
        spectral_abscissa: sp.abscissa,
        spectral_radius: sp.radius,
        condition_number: condition,
        stiffness_rate: rate,
        eigenvalues: sp.values.iter().map(|z| [z.re, z.im]).collect(),
    }
}

pub fn build_plant(source: &SystemSource) -> Result<PlantInfo> {
    match source {
        SystemSource::Synthetic(spec) => {
            let fom = build_synthetic_fom(spec)?;
            let d = diagnostics(&fom.system, fom.condition, Some(fom.rate));
            Ok(PlantInfo {
                blocks: uniform_blocks(spec.variables, spec.cells),
                plant: Plant::Continuous(fom.system),
                diagnostics: d,
            })
        }
        SystemSource::External { a, b, c, descriptor } => {
            let desc: SystemDescriptor = io::read_json(descriptor)?;
            load_plant(a, b, c, &desc)
        }
    }
}

pub fn load_plant(a: &Path, b: &Path, c: &Path, desc: &SystemDescriptor) -> Result<PlantInfo> {
    let ext = io::load_external_system(a, b, c, desc)?;
    let plant = match ext.system {
        LoadedSystem::Continuous(s) => Plant::Continuous(s),
        LoadedSystem::Discrete(s) => Plant::Discrete(s),
    };
    let d = match &plant {
        Plant::Continuous(s) => diagnostics(s, ext.condition, None),
        Plant::Discrete(s) => diagnostics(s, ext.condition, None),
    };
    let blocks = if ext.blocks.is_empty() { uniform_blocks(1, plant.n()) } else { ext.blocks };
    Ok(PlantInfo { plant, blocks, diagnostics: d })
}

/// Writes `a.dmat`, `b.dmat`, `c.dmat`, `system.json` and `diagnostics.json`.
pub fn write_plant(dir: &Path, info: &PlantInfo, manifest: &mut Manifest) -> Result<()> {
    let (a, b, c) = info.plant.parts();
    for (name, m) in [("a.dmat", a), ("b.dmat", b), ("c.dmat", c)] {
        let path = dir.join(name);
        io::write_dmat(&path, m)?;
        manifest.add_file(&path)?;
    }
    let path = dir.join("system.json");
    io::write_json(&path, &info.plant.descriptor(&info.blocks))?;
    manifest.add_file(&path)?;
    let path = dir.join("diagnostics.json");
    io::write_json(&path, &info.diagnostics)?;
    manifest.add_file(&path)?;
    Ok(())
}

/// Reads a system directory written by [`write_plant`].
pub fn read_plant_dir(dir: &Path) -> Result<PlantInfo> {
    let desc: SystemDescriptor = io::read_json(&dir.join("system.json"))?;
    load_plant(&dir.join("a.dmat"), &dir.join("b.dmat"), &dir.join("c.dmat"), &desc)
}

/// Integrator step used for a plant: discrete plants force their own step.
pub fn integrator_step(plant: &Plant, dt: Option<f64>) -> Result<f64> {
    match (plant, dt) {
        (Plant::Discrete(s), None) => Ok(s.step()),
        (Plant::Discrete(s), Some(dt)) => {
            if (dt - s.step()).abs() > 1e-12 * s.step() {
                return Err(Error::Config(format!(
                    "discrete system has step {}, integrator step {dt} requested",
                    s.step()
                ))
                .into());
            }
            Ok(s.step())
        }
        (Plant::Continuous(_), Some(dt)) => Ok(dt),
        (Plant::Continuous(_), None) => {
            Err(Error::Config("continuous systems need an integrator step (--dt)".into()).into())
        }
    }
}

/// Runs the impulse experiment.
pub fn impulse(
    plant: &Plant,
    method: Integrator,
    dt: f64,
    period_steps: usize,
    count: usize,
    keep_states: bool,
) -> Result<ImpulseData> {
    let period = dt * period_steps as f64;
    let data = match (plant, method) {
        (Plant::Discrete(s), _) => sample_impulse_with_states(ImpulseSource::Discrete(s), period, count, keep_states)?,
        (Plant::Continuous(s), Integrator::Rk3) => {
            sample_impulse_with_states(ImpulseSource::Rk3 { system: s, dt }, period, count, keep_states)?
        }
        (Plant::Continuous(s), Integrator::Exact) => {
            let d = discretize_exact(s, dt)?;
            sample_impulse_with_states(ImpulseSource::Discrete(&d), period, count, keep_states)?
        }
    };
    Ok(data)
}

/// The scalar signal on every input channel, one column per step.
pub fn fine_inputs(signal: &InputSignal, p: usize, dt: f64, steps: usize) -> Result<DMatrix<f64>> {
    let u = signal.render(dt, steps)?;
    let mut m = DMatrix::zeros(p, steps);
    for (k, v) in u.into_iter().enumerate() {
        m.column_mut(k).fill(v);
    }
    Ok(m)
}

/// Number of integrator steps covering `t_final`.
pub fn step_count(dt: f64, t_final: f64) -> usize {
    ((t_final / dt) - 1e-9).ceil().max(1.0) as usize
}

/// Full-order reference run.
#[derive(Debug, Clone)]
pub struct FomRun {
    pub dt: f64,
    /// `p × K`.
    pub inputs: DMatrix<f64>,
    /// `q × (K + 1)`, column `k` at time `k·dt`.
    pub outputs: DMatrix<f64>,
}

pub fn simulate_plant(plant: &Plant, method: Integrator, dt: f64, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x0 = DVector::zeros(plant.n());
    let traj = match (plant, method) {
        (Plant::Discrete(s), _) => s.simulate(inputs, &x0)?,
        (Plant::Continuous(s), Integrator::Rk3) => simulate_rk3_samples(s, inputs, dt, &x0)?,
        (Plant::Continuous(s), Integrator::Exact) => discretize_exact(s, dt)?.simulate(inputs, &x0)?,
    };
    Ok(traj.outputs().clone())
}

pub fn run_fom(plant: &Plant, cfg: &RunConfig) -> Result<FomRun> {
    let dt = integrator_step(plant, Some(cfg.integrator.dt))?;
    let steps = step_count(dt, cfg.t_final);
    let signal = cfg.forcing.resolve()?;
    let inputs = fine_inputs(&signal, plant.p(), dt, steps)?;
    let outputs = simulate_plant(plant, cfg.integrator.method, dt, &inputs)?;
    Ok(FomRun { dt, inputs, outputs })
}

/// How to turn a sequence into a (possibly decomposed) ROM.
#[derive(Debug, Clone)]
pub struct TrainSpec {
    pub rank: RankSelector,
    pub split: SplitSpec,
    pub cap: u64,
    pub partition: Option<OutputPartition>,
    pub tangential: Option<TangentialSpec>,
}

impl TrainSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            rank: cfg.era.rank,
            split: cfg.era.split,
            cap: cfg.era.memory_cap_bytes,
            partition: cfg.partition.clone(),
            tangential: cfg.tangential,
        }
    }
}

/// Trains one ROM per output block. Without a partition there is a single
/// block covering every output, which reproduces plain ERA exactly.
pub fn train(seq: &MarkovSequence, spec: &TrainSpec) -> Result<DdRom> {
    let mut partition = match &spec.partition {
        Some(p) => p.clone(),
        None => OutputPartition::single(seq.q(), seq.sample_period(), spec.rank),
    };
    if (partition.base_period - seq.sample_period()).abs() > 1e-9 * seq.sample_period() {
        return Err(Error::Config(format!(
            "partition base period {} differs from the sequence period {}",
            partition.base_period,
            seq.sample_period()
        ))
        .into());
    }
    partition.validate(seq.q())?;
    let mut sources = Vec::with_capacity(partition.blocks.len());
    for block in &mut partition.blocks {
        let factor = period_ratio(block.sample_period, seq.sample_period())?;
        let sub = seq.output_rows(block.start, block.len)?.subsample(factor)?;
        if block.split.is_none() {
            block.split = Some(spec.split.resolve(sub.len(), sub.q(), sub.p(), spec.cap)?);
        }
        if block.tangential.is_none() {
            block.tangential = spec.tangential;
        }
        sources.push(sub);
    }
    train_dd(&sources, &partition, spec.cap).map_err(|e| match e {
        Error::MemoryCap { bytes, cap } => anyhow::Error::new(Error::MemoryCap { bytes, cap })
            .context("Hankel matrices exceed the memory cap; retry with --partition or --tangential"),
        other => other.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub rank: usize,
    pub sample_period: f64,
    pub impulse_step: f64,
    pub provenance: Provenance,
    pub m_o: usize,
    pub m_p: usize,
    pub captured_energy: f64,
    pub spectral_radius: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tangential: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tangential_energy: Option<(f64, f64)>,
}

fn block_info(name: &str, b: &BlockRom) -> BlockInfo {
    BlockInfo {
        name: name.to_string(),
        rank: b.rom.rank(),
        sample_period: b.rom.domain().step().unwrap_or(0.0),
        impulse_step: b.rom.impulse_step().unwrap_or(0.0),
        provenance: b.rom.provenance(),
        m_o: b.split.0,
        m_p: b.split.1,
        captured_energy: b.captured_energy,
        spectral_radius: eigenvalues(&b.rom).radius,
        tangential: b.projection.as_ref().map(|p| (p.l1(), p.l2())),
        tangential_energy: b.projection.as_ref().map(|p| (p.left_energy(), p.right_energy())),
    }
}

pub fn rom_summary(rom: &DdRom) -> Vec<BlockInfo> {
    rom.blocks.iter().zip(&rom.partition.blocks).map(|(b, s)| block_info(&s.name, b)).collect()
}

/// Persists every block under `dir/<block name>/` plus `partition.json`.
pub fn write_rom(dir: &Path, rom: &DdRom, manifest: &mut Manifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("partition.json");
    io::write_json(&path, &rom.partition)?;
    manifest.add_file(&path)?;
    for (b, spec) in rom.blocks.iter().zip(&rom.partition.blocks) {
        let sub = dir.join(&spec.name);
        std::fs::create_dir_all(&sub)?;
        let mut files: Vec<(&str, DMatrix<f64>)> = vec![
            ("a_r.dmat", b.rom.a().clone()),
            ("b_r.dmat", b.rom.b().clone()),
            ("c_r.dmat", b.rom.c().clone()),
            ("hsv.dmat", DMatrix::from_column_slice(b.rom.rank(), 1, b.rom.hsv().as_slice())),
            (
                "singular_values.dmat",
                DMatrix::from_column_slice(b.all_singular_values.len(), 1, b.all_singular_values.as_slice()),
            ),
        ];
        if let Some(p) = &b.projection {
            files.push(("tangential_left.dmat", p.left().clone()));
            files.push(("tangential_right.dmat", p.right().clone()));
        }
        for (name, m) in files {
            let path = sub.join(name);
            io::write_dmat(&path, &m)?;
            manifest.add_file(&path)?;
        }
        let path = sub.join("rom.json");
        io::write_json(&path, &block_info(&spec.name, b))?;
        manifest.add_file(&path)?;
    }
    Ok(())
}

/// Reads a ROM written by [`write_rom`]; `dir` may be a run directory
/// holding a `rom/` subdirectory.
pub fn read_rom(dir: &Path) -> Result<DdRom> {
    let dir: PathBuf = if dir.join("rom").join("partition.json").exists() { dir.join("rom") } else { dir.to_path_buf() };
    let partition: OutputPartition = io::read_json(&dir.join("partition.json"))?;
    let mut blocks = Vec::with_capacity(partition.blocks.len());
    for spec in &partition.blocks {
        let sub = dir.join(&spec.name);
        let info: BlockInfo = io::read_json(&sub.join("rom.json"))?;
        let read = |name: &str| io::read_dmat(&sub.join(name)).with_context(|| format!("block '{}'", spec.name));
        let hsv = read("hsv.dmat")?;
        let rom = BalancedRom::new(
            read("a_r.dmat")?,
            read("b_r.dmat")?,
            read("c_r.dmat")?,
            hsv.column(0).into_owned(),
            TimeDomain::Discrete { step: info.sample_period },
            info.provenance,
        )?
        .with_impulse_step(Some(info.impulse_step));
        let projection = match (sub.join("tangential_left.dmat").exists(), info.tangential_energy) {
            (true, Some((e1, e2))) => Some(TangentialProjection::new(
                read("tangential_left.dmat")?,
                read("tangential_right.dmat")?,
                e1,
                e2,
            )?),
            _ => None,
        };
        let sv = read("singular_values.dmat")?;
        blocks.push(BlockRom {
            rom,
            projection,
            split: (info.m_o, info.m_p),
            all_singular_values: sv.column(0).into_owned(),
            captured_energy: info.captured_energy,
        });
    }
    Ok(DdRom { blocks, partition })
}

/// Per-step error series of one model.
#[derive(Debug, Clone)]
pub struct ErrorSeries {
    pub model: String,
    /// `(time, error)`, skipping instants where the reference vanishes.
    pub points: Vec<(f64, f64)>,
}

/// Summary statistics of one model in a prediction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub samples: usize,
    pub mean_error: Option<f64>,
    pub median_error: Option<f64>,
    pub max_error: Option<f64>,
    pub final_error: Option<f64>,
    pub first_quartile_median: Option<f64>,
    pub last_quartile_median: Option<f64>,
    /// Last-quartile median below the first-quartile median.
    pub error_decays: Option<bool>,
    pub stable: bool,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence_step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectral_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) })
}

impl ModelSummary {
    fn from_series(series: &ErrorSeries) -> Self {
        let e: Vec<f64> = series.points.iter().map(|p| p.1).collect();
        let n = e.len();
        let quarter = n / 4;
        let (q1, q4) = if quarter > 0 { (median(&e[..quarter]), median(&e[n - quarter..])) } else { (None, None) };
        Self {
            model: series.model.clone(),
            samples: n,
            mean_error: (n > 0).then(|| e.iter().sum::<f64>() / n as f64),
            median_error: median(&e),
            max_error: e.iter().copied().reduce(f64::max),
            final_error: e.last().copied(),
            first_quartile_median: q1,
            last_quartile_median: q4,
            error_decays: q1.zip(q4).map(|(a, b)| b < a),
            stable: true,
            diverged: false,
            divergence_step: None,
            divergence_time: None,
            rank: None,
            spectral_radius: None,
            failure: None,
        }
    }

    fn failed(model: &str, err: &anyhow::Error) -> Self {
        let mut s = Self::from_series(&ErrorSeries { model: model.into(), points: vec![] });
        s.stable = false;
        s.failure = Some(format!("{err:#}"));
        s
    }
}

/// POD data shared by the projection baselines.
#[derive(Debug, Clone)]
pub struct BaselineData {
    pub basis: PodBasis,
}

/// Collects training snapshots and fits the POD basis.
pub fn prepare_baselines(info: &PlantInfo, cfg: &RunConfig, b: &BaselineConfig) -> Result<BaselineData> {
    let sys = match &info.plant {
        Plant::Continuous(s) => s,
        Plant::Discrete(_) => {
            return Err(Error::Config("projection baselines need a continuous-time system".into()).into())
        }
    };
    let dt = cfg.integrator.dt;
    let steps = step_count(dt, cfg.t_final);
    let signal = b.training_forcing.resolve()?;
    let inputs = fine_inputs(&signal, sys.p(), dt, steps)?;
    let x0 = DVector::zeros(sys.n());
    let states = match cfg.integrator.method {
        Integrator::Rk3 => simulate_rk3_samples(sys, &inputs, dt, &x0)?.states().clone(),
        Integrator::Exact => discretize_exact(sys, dt)?.simulate(&inputs, &x0)?.states().clone(),
    };
    let cols: Vec<usize> = (1..states.ncols()).step_by(b.snapshot_stride).collect();
    let data = states.select_columns(&cols);
    let snaps = SnapshotMatrix::new(data, dt * b.snapshot_stride as f64, info.blocks.clone())?;
    let opts = PodOptions::default();
    let basis = if b.per_variable && info.blocks.len() > 1 {
        pod_per_block(&snaps, &opts, b.pod_rank)?.0
    } else {
        pod_with(&snaps, &opts, b.pod_rank)?
    };
    Ok(BaselineData { basis })
}

/// Inputs on a coarser grid: window means of the fine inputs.
fn coarse_inputs(fine: &DMatrix<f64>, factor: usize) -> DMatrix<f64> {
    let steps = fine.ncols() / factor;
    DMatrix::from_fn(fine.nrows(), steps, |i, k| {
        (0..factor).map(|l| fine[(i, k * factor + l)]).sum::<f64>() / factor as f64
    })
}

/// Settings of one prediction cell.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CellSettings {
    pub sample_count: usize,
    pub period_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lspg_dt: Option<f64>,
}

/// What a prediction run reports.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PredictionSummary {
    pub settings: CellSettings,
    pub models: Vec<ModelSummary>,
    pub rom: Vec<BlockInfo>,
}

/// Fixed inputs of a prediction.
pub struct PredictionContext<'a> {
    pub cfg: &'a RunConfig,
    pub info: &'a PlantInfo,
    pub fom: &'a FomRun,
    pub baselines: Option<&'a BaselineData>,
}

fn error_blocks(info: &PlantInfo) -> Option<Vec<VariableBlock>> {
    (info.plant.q() == info.plant.n()).then(|| info.blocks.clone())
}

fn series_from(
    model: &str,
    ctx: &PredictionContext<'_>,
    fine_indices: &[usize],
    approx: &DMatrix<f64>,
) -> Result<ErrorSeries> {
    let reference = ctx.fom.outputs.select_columns(fine_indices);
    let blocks = error_blocks(ctx.info);
    let e = relative_error_columns(&reference, approx, blocks.as_deref(), ctx.cfg.error.exclude_tail_cells)?;
    let points = fine_indices
        .iter()
        .zip(e)
        .filter_map(|(&i, e)| e.map(|e| (i as f64 * ctx.fom.dt, e)))
        .collect();
    Ok(ErrorSeries { model: model.into(), points })
}

fn era_prediction(ctx: &PredictionContext<'_>, rom: &DdRom) -> Result<(ErrorSeries, DMatrix<f64>)> {
    let run = simulate_dd(rom, &ctx.fom.inputs, ctx.fom.dt)?;
    let horizon = ctx.fom.outputs.ncols() - 1;
    let keep: Vec<usize> = run.merged_indices.iter().copied().take_while(|&i| i <= horizon).collect();
    let approx = run.merged.columns(0, keep.len()).into_owned();
    Ok((series_from("era", ctx, &keep, &approx)?, approx))
}

fn reduced_outputs(info: &PlantInfo, basis: &PodBasis, run: &ReducedRun) -> DMatrix<f64> {
    info.plant.parts().2 * basis.reconstruct_all(&run.states)
}

fn baseline_prediction(
    ctx: &PredictionContext<'_>,
    basis: &PodBasis,
    model: &str,
    run: &ReducedRun,
    factor: usize,
) -> Result<(ModelSummary, ErrorSeries)> {
    let outputs = reduced_outputs(ctx.info, basis, run);
    let horizon = ctx.fom.outputs.ncols() - 1;
    let idx: Vec<usize> = (1..outputs.ncols()).map(|k| k * factor).take_while(|&i| i <= horizon).collect();
    let approx = outputs.columns(1, idx.len()).into_owned();
    let series = series_from(model, ctx, &idx, &approx)?;
    let mut s = ModelSummary::from_series(&series);
    if let Some(d) = &run.divergence {
        s.diverged = true;
        s.stable = false;
        s.divergence_step = Some(d.step);
        s.divergence_time = Some(d.step as f64 * run.dt);
    }
    s.rank = Some(basis.m());
    Ok((s, series))
}

fn write_errors_csv(path: &Path, series: &[ErrorSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "series", "value"])?;
    for s in series {
        for (t, e) in &s.points {
            w.write_record([t.to_string(), s.model.clone(), e.to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
    io::write_atomic(path, &bytes)?;
    Ok(())
}

/// Trains (unless a ROM is given), simulates every model and writes
/// `errors.csv`, `era_outputs.dmat` and `summary.json` into `dir`.
pub fn predict(
    ctx: &PredictionContext<'_>,
    seq: Option<&MarkovSequence>,
    trained: Option<DdRom>,
    settings: CellSettings,
    dir: &Path,
    label: &str,
    manifest: &mut Manifest,
) -> Result<PredictionSummary> {
    std::fs::create_dir_all(dir)?;
    let rom = match trained {
        Some(r) => r,
        None => {
            let seq = seq.ok_or_else(|| anyhow::anyhow!("no impulse data and no trained model"))?;
            manifest.time(&format!("{label}rom_build"), || train(seq, &TrainSpec::from_config(ctx.cfg)))?
        }
    };
    let (era_series, era_out) = manifest.time(&format!("{label}rom_simulation"), || era_prediction(ctx, &rom))?;
    let mut era = ModelSummary::from_series(&era_series);
    era.rank = Some(rom.blocks.iter().map(|b| b.rom.rank()).sum());
    let radius = rom.blocks.iter().map(|b| eigenvalues(&b.rom).radius).fold(0.0, f64::max);
    era.spectral_radius = Some(radius);
    era.stable = radius < 1.0;
    let mut models = vec![era];
    let mut series = vec![era_series];

    if let (Some(b), Some(data)) = (&ctx.cfg.baselines, ctx.baselines) {
        let sys = match &ctx.info.plant {
            Plant::Continuous(s) => s,
            Plant::Discrete(_) => unreachable!("baseline data implies a continuous system"),
        };
        let mut push = |outcome: Result<(ModelSummary, ErrorSeries)>, name: &str| match outcome {
            Ok((m, e)) => {
                models.push(m);
                series.push(e);
            }
            Err(e) => models.push(ModelSummary::failed(name, &e)),
        };
        if b.galerkin {
            let outcome = (|| {
                let g = build_galerkin(sys, &data.basis)?;
                let x0 = g.initial_state(&DVector::zeros(sys.n()));
                let run = simulate_galerkin(&g, &ctx.fom.inputs, ctx.fom.dt, &x0)?;
                baseline_prediction(ctx, &data.basis, "galerkin", &run, 1)
            })();
            push(outcome, "galerkin");
        }
        let lspg: Vec<_> = match settings.lspg_dt {
            Some(dt) => vec![(dt, b.lspg.first().map_or(1, |l| l.beta0))],
            None => b.lspg.iter().map(|l| (l.dt, l.beta0)).collect(),
        };
        for (dt, beta0) in lspg {
            let name = format!("lspg_dt{dt:e}_beta{beta0}");
            let outcome = (|| {
                let factor = ratio(dt, ctx.fom.dt)?;
                let rom = build_lspg(sys, &data.basis, dt, beta0)?;
                let inputs = coarse_inputs(&ctx.fom.inputs, factor);
                let x0 = rom.galerkin().initial_state(&DVector::zeros(sys.n()));
                let run = simulate_lspg(&rom, &inputs, &x0)?;
                baseline_prediction(ctx, &data.basis, &name, &run, factor)
            })();
            push(outcome, &name);
        }
    }

    let path = dir.join("errors.csv");
    write_errors_csv(&path, &series)?;
    manifest.add_file(&path)?;
    let path = dir.join("era_outputs.dmat");
    io::write_dmat(&path, &era_out)?;
    manifest.add_file(&path)?;
    let summary = PredictionSummary { settings, models, rom: rom_summary(&rom) };
    let path = dir.join("summary.json");
    io::write_json(&path, &summary)?;
    manifest.add_file(&path)?;
    Ok(summary)
}
