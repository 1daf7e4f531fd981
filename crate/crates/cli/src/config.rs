//! Run configuration.

use std::path::PathBuf;

use anyhow::Result;
use nibrom_core::era::{RankSelector, DEFAULT_MEMORY_CAP};
use nibrom_core::scalability::{OutputPartition, TangentialSpec};
use nibrom_core::testbed::{InputSignal, SyntheticFomSpec};
use nibrom_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemSource {
    Synthetic(SyntheticFomSpec),
    /// Matrix files plus a JSON descriptor; relative paths resolve against
    /// the working directory.
    External { a: PathBuf, b: PathBuf, c: PathBuf, descriptor: PathBuf },
}

/// Forcing as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ForcingSpec {
    File { samples_file: PathBuf },
    Signal(InputSignal),
}

impl ForcingSpec {
    pub fn resolve(&self) -> Result<InputSignal> {
        match self {
            ForcingSpec::Signal(s) => Ok(s.clone()),
            ForcingSpec::File { samples_file } => {
                let m = nibrom_core::io::read_matrix(samples_file)?;
                if m.nrows() != 1 && m.ncols() != 1 {
                    return Err(Error::Data("sample file must hold a single row or column".into()).into());
                }
                Ok(InputSignal::Samples { values: m.iter().copied().collect() })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Third-order Runge–Kutta with inputs held over each step.
    #[default]
    Rk3,
    /// Exact zero-order-hold discretization at the same step.
    Exact,
}

/// Hankel block split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// Square when the pair fits in 1/32 of the memory cap, otherwise one
    /// observer block.
    #[default]
    Auto,
    /// `m_o = m_p = ⌊N/2⌋`.
    Square,
    /// Fixed `m_o`, `m_p = N - m_o`.
    ObserverBlocks(usize),
    Explicit(usize, usize),
}

impl SplitSpec {
    pub fn resolve(&self, count: usize, q: usize, p: usize, cap: u64) -> Result<(usize, usize)> {
        let (m_o, m_p) = match *self {
            SplitSpec::Square => nibrom_core::era::default_split(count),
            SplitSpec::Auto => {
                let (a, b) = nibrom_core::era::default_split(count);
                if nibrom_core::era::hankel_bytes(q, p, a, b) <= cap / 32 {
                    (a, b)
                } else {
                    (1, count - 1)
                }
            }
            SplitSpec::ObserverBlocks(m_o) => {
                if m_o == 0 || m_o >= count {
                    return Err(config(format!("observer blocks {m_o} out of range for {count} samples")));
                }
                (m_o, count - m_o)
            }
            SplitSpec::Explicit(a, b) => (a, b),
        };
        if m_o == 0 || m_p == 0 {
            return Err(config("Hankel split needs at least one block each way".into()));
        }
        Ok((m_o, m_p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    #[serde(default)]
    pub method: Integrator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraConfig {
    /// Sample period as a multiple of the integrator step.
    pub period_steps: usize,
    pub sample_count: usize,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub rank: RankSelector,
    #[serde(default = "default_cap")]
    pub memory_cap_bytes: u64,
}

fn default_cap() -> u64 {
    DEFAULT_MEMORY_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LspgConfig {
    pub dt: f64,
    #[serde(default = "one")]
    pub beta0: u8,
}

fn one() -> u8 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    #[serde(default)]
    pub galerkin: bool,
    #[serde(default)]
    pub lspg: Vec<LspgConfig>,
    /// Forcing that generates the POD snapshots.
    pub training_forcing: ForcingSpec,
    #[serde(default)]
    pub pod_rank: RankSelector,
    /// Keep every `snapshot_stride`-th integrator step as a snapshot.
    #[serde(default = "stride")]
    pub snapshot_stride: usize,
    /// Separate basis per variable block.
    #[serde(default)]
    pub per_variable: bool,
}

fn stride() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ErrorConfig {
    #[serde(default)]
    pub exclude_tail_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SweepConfig {
    #[serde(default)]
    pub sample_counts: Vec<usize>,
    #[serde(default)]
    pub period_steps: Vec<usize>,
    #[serde(default)]
    pub lspg_dts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemSource,
    pub integrator: IntegratorConfig,
    pub forcing: ForcingSpec,
    pub t_final: f64,
    pub era: EraConfig,
    #[serde(default)]
    pub baselines: Option<BaselineConfig>,
    #[serde(default)]
    pub partition: Option<OutputPartition>,
    #[serde(default)]
    pub tangential: Option<TangentialSpec>,
    #[serde(default)]
    pub error: ErrorConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("run configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked before computing.
    pub fn validate(&self) -> Result<()> {
        if !(self.integrator.dt > 0.0 && self.integrator.dt.is_finite()) {
            return Err(config(format!("integrator dt must be positive, got {}", self.integrator.dt)));
        }
        if !(self.t_final >= self.integrator.dt) {
            return Err(config(format!("t_final {} shorter than dt", self.t_final)));
        }
        if self.era.period_steps == 0 {
            return Err(config("period_steps must be at least 1".into()));
        }
        if self.era.sample_count < 2 {
            return Err(config("sample_count must be at least 2".into()));
        }
        match self.era.rank {
            RankSelector::Rank(0) => return Err(config("rank must be positive".into())),
            RankSelector::Energy(e) if !(e > 0.0 && e <= 1.0) => {
                return Err(config(format!("energy fraction {e} outside (0, 1]")))
            }
            _ => {}
        }
        if let SystemSource::Synthetic(spec) = &self.system {
            spec.validate()?;
        }
        if let ForcingSpec::Signal(s) = &self.forcing {
            s.validate()?;
        }
        if let Some(b) = &self.baselines {
            if let ForcingSpec::Signal(s) = &b.training_forcing {
                s.validate()?;
            }
            if b.snapshot_stride == 0 {
                return Err(config("snapshot_stride must be at least 1".into()));
            }
            for l in &b.lspg {
                if !(l.dt > 0.0) || l.beta0 > 1 {
                    return Err(config(format!("invalid LSPG settings dt = {}, beta0 = {}", l.dt, l.beta0)));
                }
                ratio(l.dt, self.integrator.dt).map_err(|e| config(format!("LSPG dt: {e}")))?;
            }
        }
        if let Some(p) = &self.partition {
            let base = self.integrator.dt * self.era.period_steps as f64;
            if (p.base_period - base).abs() > 1e-9 * base {
                return Err(config(format!(
                    "partition base period {} must equal the sample period {base}",
                    p.base_period
                )));
            }
            p.validate(p.q())?;
        }
        if let Some(s) = &self.sweep {
            if s.sample_counts.iter().any(|&c| c < 2) || s.period_steps.contains(&0) {
                return Err(config("sweep values must be positive (counts at least 2)".into()));
            }
            for &dt in &s.lspg_dts {
                ratio(dt, self.integrator.dt).map_err(|e| config(format!("sweep LSPG dt: {e}")))?;
            }
        }
        Ok(())
    }
}

fn config(msg: String) -> anyhow::Error {
    Error::Config(msg).into()
}

/// Integer ratio of two steps.
pub fn ratio(big: f64, small: f64) -> Result<usize> {
    nibrom_core::era::period_ratio(big, small)
        .map_err(|_| config(format!("{big} is not an integer multiple of {small}")))
}
