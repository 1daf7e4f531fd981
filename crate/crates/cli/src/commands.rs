//! Subcommand arguments and drivers.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use nibrom_core::era::{
    build_hankel_capped, era_modes, hankel_svd, period_ratio, RankSelector, DEFAULT_ENERGY, DEFAULT_MEMORY_CAP,
};
use nibrom_core::io::{self, SystemDescriptor, SystemKind};
use nibrom_core::scalability::{OutputPartition, TangentialSpec};
use nibrom_core::testbed::{Stiffness, SyntheticFomSpec};
use nibrom_core::Error;

use crate::config::{Integrator, RunConfig, SplitSpec, SystemSource};
use crate::manifest::{create_run_dir, Manifest};
use crate::workflow::{self, CellSettings, PredictionContext, PredictionSummary, TrainSpec};

#[derive(Debug, Parser)]
#[command(name = "nibrom", version, about = "Balanced reduced-order models identified from impulse responses")]
pub struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a synthetic system or ingest one from matrix files.
    Fom(FomArgs),
    /// Sample the impulse response of a system.
    Impulse(ImpulseArgs),
    /// Identify balanced reduced models from impulse samples.
    Train(TrainArgs),
    /// Compare reduced models with the full system under a forcing.
    Predict(PredictArgs),
    /// Repeat predictions over a grid of sampling settings.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KindArg {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["synthetic", "load"])))]
pub struct FomArgs {
    /// Build the synthetic advection–diffusion–reaction system.
    #[arg(long)]
    pub synthetic: bool,
    /// Load `A`, `B` and `C` from DMAT or CSV files.
    #[arg(long, num_args = 3, value_names = ["A", "B", "C"])]
    pub load: Option<Vec<PathBuf>>,
    /// JSON descriptor for loaded matrices.
    #[arg(long, requires = "load")]
    pub descriptor: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "continuous")]
    pub kind: KindArg,
    /// Sampling step of a discrete system.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub cells: usize,
    /// Number of fields; defaults to 2 when a stiffness is requested.
    #[arg(long)]
    pub variables: Option<usize>,
    /// Relaxation rate coupling the fields.
    #[arg(long, conflicts_with = "target_condition")]
    pub stiffness: Option<f64>,
    /// Tune the relaxation rate to reach this condition number.
    #[arg(long)]
    pub target_condition: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub advection: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub diffusivity: f64,
    #[arg(long, default_value_t = 0.01)]
    pub dx: f64,
    /// Fraction of the outflow fed back to the inlet.
    #[arg(long, default_value_t = 0.0)]
    pub recirculation: f64,
    #[arg(long, default_value_t = 0)]
    pub input_cell: usize,
    #[arg(long, default_value_t = 0)]
    pub input_field: usize,
    /// Root directory for run outputs.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

impl FomArgs {
    pub fn synthetic_spec(&self) -> SyntheticFomSpec {
        let stiffness = match (self.stiffness, self.target_condition) {
            (_, Some(c)) => Stiffness::TargetCondition(c),
            (Some(k), None) => Stiffness::Rate(k),
            (None, None) => Stiffness::Rate(0.0),
        };
        let coupled = !matches!(stiffness, Stiffness::Rate(k) if k == 0.0);
        SyntheticFomSpec {
            cells: self.cells,
            advection_speed: self.advection,
            diffusivity: self.diffusivity,
            stiffness,
            dx: self.dx,
            variables: self.variables.unwrap_or(if coupled { 2 } else { 1 }),
            recirculation: self.recirculation,
            input_cell: self.input_cell,
            input_field: self.input_field,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Rk3,
    Exact,
}

impl From<MethodArg> for Integrator {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rk3 => Integrator::Rk3,
            MethodArg::Exact => Integrator::Exact,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group(clap::ArgGroup::new("period_choice").required(true).args(["period_steps", "period"])))]
pub struct ImpulseArgs {
    /// System directory written by `fom`.
    #[arg(long)]
    pub system: PathBuf,
    /// Integrator step; discrete systems use their own step.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, value_enum, default_value = "rk3")]
    pub method: MethodArg,
    /// Sample period as a number of integrator steps.
    #[arg(long)]
    pub period_steps: Option<usize>,
    /// Sample period in time units; must be a multiple of the step.
    #[arg(long)]
    pub period: Option<f64>,
    /// Number of samples.
    #[arg(long)]
    pub count: usize,
    /// Also store the full states at every sample.
    #[arg(long)]
    pub states: bool,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Sequence data file written by `impulse` (sidecar JSON alongside).
    #[arg(long)]
    pub markov: PathBuf,
    /// Fixed rank.
    #[arg(long, conflicts_with = "energy")]
    pub rank: Option<usize>,
    /// Retained fraction of the Hankel singular value sum.
    #[arg(long)]
    pub energy: Option<f64>,
    /// `auto`, `square`, `observer:K` or `M_O,M_P`.
    #[arg(long, default_value = "auto")]
    pub split: String,
    /// JSON output partition.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// `auto`, `energy:E` or `L1,L2`.
    #[arg(long)]
    pub tangential: Option<String>,
    /// Hankel memory cap in bytes.
    #[arg(long, default_value_t = DEFAULT_MEMORY_CAP)]
    pub memory_cap: u64,
    /// Write direct and adjoint balancing modes (needs `--states`).
    #[arg(long, requires = "states")]
    pub modes: bool,
    /// Full-state impulse snapshots written by `impulse --states`.
    #[arg(long)]
    pub states: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Use a model written by `train` instead of training from the config.
    #[arg(long)]
    pub rom: Option<PathBuf>,
    /// Overrides the configured output root.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    /// JSON run configuration with a `sweep` section.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn config_err(msg: String) -> anyhow::Error {
    Error::Config(msg).into()
}

pub fn parse_split(s: &str) -> Result<SplitSpec> {
    let s = s.trim();
    match s {
        "auto" => return Ok(SplitSpec::Auto),
        "square" => return Ok(SplitSpec::Square),
        _ => {}
    }
    if let Some(k) = s.strip_prefix("observer:") {
        let k = k.parse().map_err(|_| config_err(format!("bad observer block count '{k}'")))?;
        return Ok(SplitSpec::ObserverBlocks(k));
    }
    match s.split_once(',') {
        Some((a, b)) => {
            let a = a.trim().parse().map_err(|_| config_err(format!("bad split '{s}'")))?;
            let b = b.trim().parse().map_err(|_| config_err(format!("bad split '{s}'")))?;
            Ok(SplitSpec::Explicit(a, b))
        }
        None => Err(config_err(format!("unknown split '{s}'; use auto, square, observer:K or M_O,M_P"))),
    }
}

pub fn parse_tangential(s: &str) -> Result<TangentialSpec> {
    let s = s.trim();
    if s == "auto" {
        return Ok(TangentialSpec::Energy(DEFAULT_ENERGY));
    }
    if let Some(e) = s.strip_prefix("energy:") {
        let e: f64 = e.parse().map_err(|_| config_err(format!("bad tangential energy '{e}'")))?;
        if !(e > 0.0 && e <= 1.0) {
            return Err(config_err(format!("tangential energy {e} outside (0, 1]")));
        }
        return Ok(TangentialSpec::Energy(e));
    }
    match s.split_once(',') {
        Some((a, b)) => {
            let l1 = a.trim().parse().map_err(|_| config_err(format!("bad tangential ranks '{s}'")))?;
            let l2 = b.trim().parse().map_err(|_| config_err(format!("bad tangential ranks '{s}'")))?;
            Ok(TangentialSpec::Fixed { l1, l2 })
        }
        None => Err(config_err(format!("unknown tangential setting '{s}'; use auto, energy:E or L1,L2"))),
    }
}

fn rank_selector(rank: Option<usize>, energy: Option<f64>) -> Result<RankSelector> {
    match (rank, energy) {
        (Some(0), _) => Err(config_err("rank must be positive".into())),
        (Some(r), _) => Ok(RankSelector::Rank(r)),
        (None, Some(e)) if !(e > 0.0 && e <= 1.0) => Err(config_err(format!("energy fraction {e} outside (0, 1]"))),
        (None, Some(e)) => Ok(RankSelector::Energy(e)),
        (None, None) => Ok(RankSelector::default()),
    }
}

fn echo<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

/// Dispatches a parsed command line; returns the run directory.
pub fn run(cli: Cli) -> Result<PathBuf> {
    match cli.command {
        Command::Fom(a) => cmd_fom(&a),
        Command::Impulse(a) => cmd_impulse(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

pub fn cmd_fom(args: &FomArgs) -> Result<PathBuf> {
    let start = Instant::now();
    let info = match &args.load {
        Some(files) => {
            let desc = match &args.descriptor {
                Some(p) => io::read_json::<SystemDescriptor>(p)?,
                None => SystemDescriptor {
                    kind: match args.kind {
                        KindArg::Continuous => SystemKind::Continuous,
                        KindArg::Discrete => SystemKind::Discrete,
                    },
                    step: args.step,
                    blocks: vec![],
                },
            };
            workflow::load_plant(&files[0], &files[1], &files[2], &desc)?
        }
        None => {
            let spec = args.synthetic_spec();
            spec.validate()?;
            workflow::build_plant(&SystemSource::Synthetic(spec))?
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    let config = echo(args);
    let dir = create_run_dir(&args.out, &config)?;
    let mut manifest = Manifest::new(&dir, "fom", config);
    manifest.add_timing("system_build", elapsed);
    workflow::write_plant(&dir, &info, &mut manifest)?;
    manifest.record("spectral_abscissa", info.diagnostics.spectral_abscissa);
    manifest.record("spectral_radius", info.diagnostics.spectral_radius);
    manifest.record("condition_number", info.diagnostics.condition_number);
    manifest.record("stable", info.diagnostics.stable);
    manifest.finish()?;
    Ok(dir)
}

pub fn cmd_impulse(args: &ImpulseArgs) -> Result<PathBuf> {
    let info = workflow::read_plant_dir(&args.system)
        .with_context(|| format!("loading system from {}", args.system.display()))?;
    let dt = workflow::integrator_step(&info.plant, args.dt)?;
    let period_steps = match (args.period_steps, args.period) {
        (Some(s), _) => s,
        (None, Some(t)) => period_ratio(t, dt)?,
        (None, None) => unreachable!("clap enforces a period"),
    };
    if period_steps == 0 {
        return Err(config_err("period must be at least one step".into()));
    }
    if args.count < 2 {
        return Err(config_err(format!("sample count must be at least 2, got {}", args.count)));
    }
    let config = echo(args);
    let start = Instant::now();
    let data = workflow::impulse(&info.plant, args.method.into(), dt, period_steps, args.count, args.states)?;
    let sampling = start.elapsed().as_secs_f64();
    let dir = create_run_dir(&args.out, &config)?;
    let mut manifest = Manifest::new(&dir, "impulse", config);
    manifest.add_timing("sampling", sampling);
    let (data_path, meta_path) = io::write_markov(&dir, "markov", &data.sequence)?;
    manifest.add_file(&data_path)?;
    manifest.add_file(&meta_path)?;
    if let Some(states) = &data.states {
        let path = dir.join("states.dmat");
        io::write_dmat(&path, states)?;
        manifest.add_file(&path)?;
    }
    manifest.record("integrator_step", dt);
    manifest.record("period_steps", period_steps);
    manifest.record("sample_period", data.sequence.sample_period());
    manifest.record("impulse_step", data.sequence.impulse_step());
    manifest.record("sample_count", data.sequence.len());
    manifest.finish()?;
    Ok(dir)
}

pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let rank = rank_selector(args.rank, args.energy)?;
    let split = parse_split(&args.split)?;
    let tangential = args.tangential.as_deref().map(parse_tangential).transpose()?;
    let partition: Option<OutputPartition> = args.partition.as_deref().map(io::read_json).transpose()?;
    if args.modes && (partition.is_some() || tangential.is_some()) {
        return Err(config_err("balancing modes are only available for plain ERA".into()));
    }
    let seq = io::read_markov(&args.markov)?;
    let spec = TrainSpec { rank, split, cap: args.memory_cap, partition, tangential };
    let config = echo(args);

    let mut phases = Vec::new();
    let mut modes = None;
    let rom = if args.modes {
        let states = io::read_matrix(args.states.as_deref().expect("clap enforces --states"))?;
        let (m_o, m_p) = split.resolve(seq.len(), seq.q(), seq.p(), args.memory_cap)?;
        let t = Instant::now();
        let pair = build_hankel_capped(&seq, m_o, m_p, args.memory_cap)?;
        phases.push(("hankel", t.elapsed().as_secs_f64()));
        let t = Instant::now();
        let svd = hankel_svd(&pair, rank)?;
        phases.push(("svd", t.elapsed().as_secs_f64()));
        let need = m_p * seq.p();
        if states.ncols() < need {
            return Err(Error::Data(format!("state snapshots have {} columns, {need} needed", states.ncols())).into());
        }
        let t = Instant::now();
        modes = Some(era_modes(&pair, &svd, &states.columns(0, need).into_owned())?);
        phases.push(("modes", t.elapsed().as_secs_f64()));
        let t = Instant::now();
        let rom = workflow::train(&seq, &spec)?;
        phases.push(("rom_build", t.elapsed().as_secs_f64()));
        rom
    } else {
        let t = Instant::now();
        let rom = workflow::train(&seq, &spec)?;
        phases.push(("rom_build", t.elapsed().as_secs_f64()));
        rom
    };

    let dir = create_run_dir(&args.out, &config)?;
    let mut manifest = Manifest::new(&dir, "train", config);
    for (name, secs) in phases {
        manifest.add_timing(name, secs);
    }
    workflow::write_rom(&dir.join("rom"), &rom, &mut manifest)?;
    if let Some(m) = modes {
        for (name, mat) in [("modes_direct.dmat", &m.direct), ("modes_adjoint.dmat", &m.adjoint)] {
            let path = dir.join(name);
            io::write_dmat(&path, mat)?;
            manifest.add_file(&path)?;
        }
    }
    let blocks = workflow::rom_summary(&rom);
    manifest.record("rank", blocks.iter().map(|b| b.rank).sum::<usize>());
    manifest.record(
        "captured_energy",
        blocks.iter().map(|b| b.captured_energy).fold(f64::INFINITY, f64::min),
    );
    manifest.record(
        "hsv",
        rom.blocks.iter().map(|b| b.rom.hsv().as_slice().to_vec()).collect::<Vec<_>>(),
    );
    manifest.record("blocks", &blocks);
    manifest.finish()?;
    Ok(dir)
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(e))
        .with_context(|| format!("reading {}", path.display()))?;
    RunConfig::from_json(&text)
}

fn write_fom_outputs(dir: &Path, fom: &workflow::FomRun, manifest: &mut Manifest) -> Result<()> {
    let path = dir.join("fom_outputs.dmat");
    io::write_dmat(&path, &fom.outputs)?;
    manifest.add_file(&path)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<PathBuf> {
    let cfg = read_config(&args.config)?;
    let trained = args.rom.as_deref().map(workflow::read_rom).transpose()?;
    let info = workflow::build_plant(&cfg.system)?;
    let root = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let config = serde_json::json!({ "command": echo(args), "run": echo(&cfg) });
    let dir = create_run_dir(&root, &config)?;
    let mut manifest = Manifest::new(&dir, "predict", config);

    let fom = manifest.time("fom_simulation", || workflow::run_fom(&info.plant, &cfg))?;
    write_fom_outputs(&dir, &fom, &mut manifest)?;
    let seq = match trained {
        Some(_) => None,
        None => Some(
            manifest
                .time("sampling", || {
                    workflow::impulse(
                        &info.plant,
                        cfg.integrator.method,
                        fom.dt,
                        cfg.era.period_steps,
                        cfg.era.sample_count,
                        false,
                    )
                })?
                .sequence,
        ),
    };
    let baselines = match &cfg.baselines {
        Some(b) => Some(manifest.time("pod", || workflow::prepare_baselines(&info, &cfg, b))?),
        None => None,
    };
    let ctx = PredictionContext { cfg: &cfg, info: &info, fom: &fom, baselines: baselines.as_ref() };
    let settings = CellSettings { sample_count: cfg.era.sample_count, period_steps: cfg.era.period_steps, lspg_dt: None };
    let summary = workflow::predict(&ctx, seq.as_ref(), trained, settings, &dir, "", &mut manifest)?;
    manifest.record("system", &info.diagnostics);
    manifest.record("summary", &summary);
    manifest.finish()?;
    Ok(dir)
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub index: usize,
    pub settings: CellSettings,
}

pub fn sweep_cells(cfg: &RunConfig) -> Vec<SweepCell> {
    let sweep = cfg.sweep.clone().unwrap_or_default();
    let counts = if sweep.sample_counts.is_empty() { vec![cfg.era.sample_count] } else { sweep.sample_counts };
    let periods = if sweep.period_steps.is_empty() { vec![cfg.era.period_steps] } else { sweep.period_steps };
    let dts: Vec<Option<f64>> =
        if sweep.lspg_dts.is_empty() { vec![None] } else { sweep.lspg_dts.into_iter().map(Some).collect() };
    let mut cells = Vec::new();
    for &period_steps in &periods {
        for &sample_count in &counts {
            for &lspg_dt in &dts {
                cells.push(SweepCell {
                    index: cells.len(),
                    settings: CellSettings { sample_count, period_steps, lspg_dt },
                });
            }
        }
    }
    cells
}

/// Outcome of one sweep cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: SweepCell,
    pub result: std::result::Result<PredictionSummary, String>,
}

/// Runs every cell of the sweep and returns the outcomes in grid order.
pub fn run_sweep(cfg: &RunConfig, dir: &Path, manifest: &mut Manifest) -> Result<Vec<CellOutcome>> {
    let info = workflow::build_plant(&cfg.system)?;
    let fom = manifest.time("fom_simulation", || workflow::run_fom(&info.plant, cfg))?;
    write_fom_outputs(dir, &fom, manifest)?;
    let baselines = match &cfg.baselines {
        Some(b) => Some(manifest.time("pod", || workflow::prepare_baselines(&info, cfg, b))?),
        None => None,
    };
    let cells = sweep_cells(cfg);

    // One impulse run per period, long enough for the largest count.
    let mut periods: Vec<usize> = cells.iter().map(|c| c.settings.period_steps).collect();
    periods.sort_unstable();
    periods.dedup();
    let sequences: Vec<(usize, std::result::Result<_, String>)> = manifest.time("sampling", || {
        periods
            .par_iter()
            .map(|&s| {
                let max = cells
                    .iter()
                    .filter(|c| c.settings.period_steps == s)
                    .map(|c| c.settings.sample_count)
                    .max()
                    .unwrap_or(2);
                let seq = workflow::impulse(&info.plant, cfg.integrator.method, fom.dt, s, max, false)
                    .map(|d| d.sequence)
                    .map_err(|e| format!("{e:#}"));
                (s, seq)
            })
            .collect()
    });

    let results: Vec<(CellOutcome, Manifest)> = cells
        .par_iter()
        .map(|cell| {
            let mut local = Manifest::new(dir, "sweep-cell", serde_json::Value::Null);
            let name = format!("cell_{:03}", cell.index);
            let result = (|| -> Result<PredictionSummary> {
                let mut cell_cfg = cfg.clone();
                cell_cfg.era.sample_count = cell.settings.sample_count;
                cell_cfg.era.period_steps = cell.settings.period_steps;
                cell_cfg.sweep = None;
                cell_cfg.validate()?;
                let seq = match &sequences.iter().find(|(s, _)| *s == cell.settings.period_steps).expect("sampled").1 {
                    Ok(seq) => seq.truncated(cell.settings.sample_count)?,
                    Err(e) => anyhow::bail!("impulse sampling failed: {e}"),
                };
                let ctx = PredictionContext { cfg: &cell_cfg, info: &info, fom: &fom, baselines: baselines.as_ref() };
                workflow::predict(
                    &ctx,
                    Some(&seq),
                    None,
                    cell.settings.clone(),
                    &dir.join("cells").join(&name),
                    &format!("{name}/"),
                    &mut local,
                )
            })();
            if let Err(e) = &result {
                log::warn!("sweep {name} failed: {e:#}");
            }
            (CellOutcome { cell: cell.clone(), result: result.map_err(|e| format!("{e:#}")) }, local)
        })
        .collect();

    let mut outcomes = Vec::with_capacity(results.len());
    for (outcome, local) in results {
        manifest.absorb(local);
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

/// Deterministic aggregate table, one row per cell and model.
pub fn write_sweep_csv(path: &Path, outcomes: &[CellOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "cell",
        "sample_count",
        "period_steps",
        "lspg_dt",
        "model",
        "rank",
        "mean_error",
        "median_error",
        "max_error",
        "final_error",
        "error_decays",
        "stable",
        "diverged",
        "divergence_step",
        "failure",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for o in outcomes {
        let s = &o.cell.settings;
        let head = [
            o.cell.index.to_string(),
            s.sample_count.to_string(),
            s.period_steps.to_string(),
            opt(s.lspg_dt),
        ];
        match &o.result {
            Ok(summary) => {
                for m in &summary.models {
                    let mut row: Vec<String> = head.to_vec();
                    row.extend([
                        m.model.clone(),
                        m.rank.map(|r| r.to_string()).unwrap_or_default(),
                        opt(m.mean_error),
                        opt(m.median_error),
                        opt(m.max_error),
                        opt(m.final_error),
                        m.error_decays.map(|b| b.to_string()).unwrap_or_default(),
                        m.stable.to_string(),
                        m.diverged.to_string(),
                        m.divergence_step.map(|k| k.to_string()).unwrap_or_default(),
                        m.failure.clone().unwrap_or_default(),
                    ]);
                    w.write_record(&row)?;
                }
            }
            Err(e) => {
                let mut row: Vec<String> = head.to_vec();
                row.extend(["era".into(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), "false".into(), "false".into(), String::new(), e.clone()]);
                w.write_record(&row)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
    io::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<PathBuf> {
    let cfg = read_config(&args.config)?;
    let root = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let config = serde_json::json!({ "command": echo(args), "run": echo(&cfg) });
    let dir = create_run_dir(&root, &config)?;
    let mut manifest = Manifest::new(&dir, "sweep", config);
    let outcomes = run_sweep(&cfg, &dir, &mut manifest)?;
    let path = dir.join("sweep.csv");
    write_sweep_csv(&path, &outcomes)?;
    manifest.add_file(&path)?;
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    manifest.record("cells", outcomes.len());
    manifest.record("failed_cells", failed);
    manifest.finish()?;
    Ok(dir)
}
