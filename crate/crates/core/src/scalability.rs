//! Output domain decomposition and tangential interpolation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::era::{aggregate_inputs, default_split, era, period_ratio, MarkovSequence, RankSelector, RANK_FLOOR};
use crate::error::{Error, Result};
use crate::linalg::ThinSvd;
use crate::lti::{BalancedRom, Provenance, StateSpace, TimeDomain};

/// Tangential projection is skipped on blocks where `l1 ≥` this fraction of
/// the block's outputs.
pub const TANGENTIAL_SKIP_FRACTION: f64 = 0.8;

/// Tangential reduction requested for a block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TangentialSpec {
    /// Explicit numbers of left and right directions.
    Fixed { l1: usize, l2: usize },
    /// Smallest `l1` capturing this fraction of the left singular-value sum;
    /// all input directions kept.
    Energy(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
    pub sample_period: f64,
    #[serde(default)]
    pub rank: RankSelector,
    /// Hankel block counts; defaults to the square split of the budget.
    #[serde(default)]
    pub split: Option<(usize, usize)>,
    #[serde(default)]
    pub tangential: Option<TangentialSpec>,
}

/// Contiguous output blocks, each trained at its own sampling period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPartition {
    pub base_period: f64,
    pub blocks: Vec<OutputBlock>,
}

impl OutputPartition {
    /// One block covering all `q` outputs.
    pub fn single(q: usize, sample_period: f64, rank: RankSelector) -> Self {
        Self {
            base_period: sample_period,
            blocks: vec![OutputBlock {
                name: "all".into(),
                start: 0,
                len: q,
                sample_period,
                rank,
                split: None,
                tangential: None,
            }],
        }
    }

    pub fn q(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.start + b.len)
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        if !(self.base_period > 0.0 && self.base_period.is_finite()) {
            return Err(Error::Config("partition base period must be positive".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("partition has no blocks".into()));
        }
        let mut next = 0;
        for b in &self.blocks {
            if b.len == 0 || b.start != next {
                return Err(Error::Config(format!(
                    "block '{}' must start at {next} and be non-empty",
                    b.name
                )));
            }
            next += b.len;
            period_ratio(b.sample_period, self.base_period).map_err(|_| {
                Error::Config(format!(
                    "block '{}' period {} is not a multiple of the base period {}",
                    b.name, b.sample_period, self.base_period
                ))
            })?;
        }
        if next != q {
            return Err(Error::Config(format!("partition covers {next} outputs, system has {q}")));
        }
        Ok(())
    }
}

/// Orthonormal left (`q×l1`) and right (`p×l2`) tangential directions.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentialProjection {
    w1: DMatrix<f64>,
    w2: DMatrix<f64>,
    left_energy: f64,
    right_energy: f64,
}

impl TangentialProjection {
    pub fn new(w1: DMatrix<f64>, w2: DMatrix<f64>, left_energy: f64, right_energy: f64) -> Result<Self> {
        for (name, w) in [("left", &w1), ("right", &w2)] {
            let k = w.ncols();
            if k == 0 || k > w.nrows() {
                return Err(Error::Dimension(format!("{name} basis is {}x{k}", w.nrows())));
            }
            if (w.transpose() * w - DMatrix::identity(k, k)).amax() > 1e-10 {
                return Err(Error::Data(format!("{name} tangential basis is not orthonormal")));
            }
        }
        Ok(Self { w1, w2, left_energy, right_energy })
    }
    pub fn left(&self) -> &DMatrix<f64> {
        &self.w1
    }
    pub fn right(&self) -> &DMatrix<f64> {
        &self.w2
    }
    pub fn l1(&self) -> usize {
        self.w1.ncols()
    }
    pub fn l2(&self) -> usize {
        self.w2.ncols()
    }
    /// Fraction of `‖Q_L‖²_F` kept by the left projector.
    pub fn left_energy(&self) -> f64 {
        self.left_energy
    }
    pub fn right_energy(&self) -> f64 {
        self.right_energy
    }
}

fn leading(svd: &ThinSvd, basis: &DMatrix<f64>, l: usize, full: usize) -> Result<(DMatrix<f64>, f64)> {
    if l == 0 || l > full {
        return Err(Error::Config(format!("{l} tangential directions requested out of {full}")));
    }
    if l == full {
        return Ok((DMatrix::identity(full, full), 1.0));
    }
    let rank = svd.numerical_rank(RANK_FLOOR);
    if l > rank {
        return Err(Error::Rank { requested: l, rank });
    }
    let total: f64 = svd.s.iter().map(|x| x * x).sum();
    let kept: f64 = svd.s.iter().take(l).map(|x| x * x).sum();
    Ok((basis.columns(0, l).into_owned(), if total > 0.0 { kept / total } else { 1.0 }))
}

/// Leading left singular vectors of `Q_L = [h_1 … h_N]` and leading right
/// singular vectors of `Q_R = [h_1; …; h_N]`. A full count returns the
/// identity.
pub fn fit_tangential(seq: &MarkovSequence, l1: usize, l2: usize) -> Result<TangentialProjection> {
    let left = ThinSvd::new(&seq.hstack());
    let right = ThinSvd::new(&seq.vstack());
    let (w1, e1) = leading(&left, &left.u, l1, seq.q())?;
    let (w2, e2) = leading(&right, &right.v, l2, seq.p())?;
    TangentialProjection::new(w1, w2, e1, e2)
}

/// Left count capturing `eta` of the singular-value sum of `Q_L`.
pub fn tangential_rank(seq: &MarkovSequence, eta: f64) -> Result<usize> {
    let left = ThinSvd::new(&seq.hstack());
    crate::era::select_rank(&left.s, RankSelector::Energy(eta))
}

/// `ŷ_k = W₁ᵀ y_k W₂` for every sample.
pub fn project_markov(seq: &MarkovSequence, proj: &TangentialProjection) -> Result<MarkovSequence> {
    if proj.w1.nrows() != seq.q() || proj.w2.nrows() != seq.p() {
        return Err(Error::Dimension("tangential bases do not match the sequence".into()));
    }
    let w1t = proj.w1.transpose();
    let samples = seq.samples().iter().map(|y| &w1t * y * &proj.w2).collect();
    MarkovSequence::new(samples, seq.sample_period(), seq.impulse_step())
}

/// Restores original dimensions: `B_r = B̂ W₂ᵀ`, `C_r = W₁ Ĉ`.
pub fn recover_rom(projected: &BalancedRom, proj: &TangentialProjection) -> Result<BalancedRom> {
    if projected.p() != proj.l2() || projected.q() != proj.l1() {
        return Err(Error::Dimension("projected ROM does not match the tangential bases".into()));
    }
    Ok(BalancedRom::new(
        projected.a().clone(),
        projected.b() * proj.w2.transpose(),
        &proj.w1 * projected.c(),
        projected.hsv().clone(),
        projected.domain(),
        Provenance::EraTangential,
    )?
    .with_impulse_step(projected.impulse_step()))
}

/// Tangential directions actually used for a block, after the skip rule.
pub fn effective_tangential(seq: &MarkovSequence, spec: TangentialSpec) -> Result<Option<(usize, usize)>> {
    let (l1, l2) = match spec {
        TangentialSpec::Fixed { l1, l2 } => (l1, l2),
        TangentialSpec::Energy(eta) => (tangential_rank(seq, eta)?, seq.p()),
    };
    if l1 as f64 >= TANGENTIAL_SKIP_FRACTION * seq.q() as f64 && l2 == seq.p() {
        return Ok(None);
    }
    Ok(Some((l1, l2)))
}

/// One trained block.
#[derive(Debug, Clone)]
pub struct BlockRom {
    pub rom: BalancedRom,
    pub projection: Option<TangentialProjection>,
    pub split: (usize, usize),
    pub all_singular_values: nalgebra::DVector<f64>,
    pub captured_energy: f64,
}

/// Block ROMs of an output partition.
#[derive(Debug, Clone)]
pub struct DdRom {
    pub blocks: Vec<BlockRom>,
    pub partition: OutputPartition,
}

/// ERA on a sequence, optionally through a tangential projection.
pub fn train_block(
    seq: &MarkovSequence,
    block: &OutputBlock,
    cap: u64,
) -> Result<BlockRom> {
    let (m_o, m_p) = block.split.unwrap_or_else(|| default_split(seq.len()));
    let tangential = match block.tangential {
        Some(spec) => effective_tangential(seq, spec)?,
        None => None,
    };
    match tangential {
        None => {
            let out = era(seq, m_o, m_p, block.rank, cap)?;
            Ok(BlockRom {
                rom: out.rom,
                projection: None,
                split: (m_o, m_p),
                all_singular_values: out.svd.all_singular_values,
                captured_energy: out.svd.captured_energy,
            })
        }
        Some((l1, l2)) => {
            let proj = fit_tangential(seq, l1, l2)?;
            let projected = project_markov(seq, &proj)?;
            let out = era(&projected, m_o, m_p, block.rank, cap)?;
            Ok(BlockRom {
                rom: recover_rom(&out.rom, &proj)?,
                projection: Some(proj),
                split: (m_o, m_p),
                all_singular_values: out.svd.all_singular_values,
                captured_energy: out.svd.captured_energy,
            })
        }
    }
}

/// Trains every block independently from its own impulse samples.
pub fn train_dd(sources: &[MarkovSequence], partition: &OutputPartition, cap: u64) -> Result<DdRom> {
    if sources.len() != partition.blocks.len() {
        return Err(Error::Config(format!(
            "{} sequences for {} partition blocks",
            sources.len(),
            partition.blocks.len()
        )));
    }
    partition.validate(partition.q())?;
    let p = sources[0].p();
    for (seq, b) in sources.iter().zip(&partition.blocks) {
        if seq.q() != b.len || seq.p() != p {
            return Err(Error::Config(format!(
                "block '{}' expects {} outputs and {p} inputs, sequence has {}x{}",
                b.name,
                b.len,
                seq.q(),
                seq.p()
            )));
        }
        if (seq.sample_period() - b.sample_period).abs() > 1e-12 * b.sample_period {
            return Err(Error::Config(format!(
                "block '{}' period {} does not match its sequence period {}",
                b.name,
                b.sample_period,
                seq.sample_period()
            )));
        }
    }
    let blocks = sources
        .par_iter()
        .zip(partition.blocks.par_iter())
        .map(|(seq, b)| train_block(seq, b, cap))
        .collect::<Result<Vec<_>>>()?;
    Ok(DdRom { blocks, partition: partition.clone() })
}

impl DdRom {
    pub fn q(&self) -> usize {
        self.partition.q()
    }
    pub fn p(&self) -> usize {
        self.blocks[0].rom.p()
    }

    /// Assembled `(A_rdd, B_rdd, C_rdd)`: block-diagonal dynamics, stacked
    /// inputs, block-diagonal outputs.
    pub fn assembled(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let r: usize = self.blocks.iter().map(|b| b.rom.rank()).sum();
        let q = self.q();
        let p = self.p();
        let mut a = DMatrix::zeros(r, r);
        let mut b = DMatrix::zeros(r, p);
        let mut c = DMatrix::zeros(q, r);
        let mut o = 0;
        for (blk, spec) in self.blocks.iter().zip(&self.partition.blocks) {
            let k = blk.rom.rank();
            a.view_mut((o, o), (k, k)).copy_from(blk.rom.a());
            b.view_mut((o, 0), (k, p)).copy_from(blk.rom.b());
            c.view_mut((spec.start, o), (spec.len, k)).copy_from(blk.rom.c());
            o += k;
        }
        (a, b, c)
    }

    /// Assembled system when all blocks share one period.
    pub fn assembled_system(&self) -> Result<crate::lti::DiscreteLti> {
        let period = self.blocks[0].rom.domain().step().unwrap_or(0.0);
        if self.blocks.iter().any(|b| b.rom.domain() != TimeDomain::Discrete { step: period }) {
            return Err(Error::Config("blocks run at different periods".into()));
        }
        let (a, b, c) = self.assembled();
        crate::lti::DiscreteLti::new(a, b, c, period)
    }
}

/// Outputs of a decomposed simulation.
#[derive(Debug, Clone)]
pub struct DdRun {
    /// Per block: fine-grid indices of its samples and the outputs there.
    pub blocks: Vec<(Vec<usize>, DMatrix<f64>)>,
    /// Fine-grid indices of the common grid.
    pub merged_indices: Vec<usize>,
    /// All outputs stacked on the common grid.
    pub merged: DMatrix<f64>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Simulates every block on its own grid from rest.
///
/// `inputs` holds one column per fine step of length `dt`. Block `i` with
/// period `s_i·dt` reports its output `k` (1-based) at fine index
/// `1 + (k - 1)·s_i`. The merged output uses the grid of the least common
/// multiple of the ratios.
pub fn simulate_dd(rom: &DdRom, inputs: &DMatrix<f64>, dt: f64) -> Result<DdRun> {
    let ratios = rom
        .blocks
        .iter()
        .map(|b| {
            let period = b.rom.domain().step().ok_or_else(|| Error::Config("block ROM is not discrete".into()))?;
            period_ratio(period, dt).map_err(|_| {
                Error::Config(format!("block period {period} is not commensurate with the step {dt}"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let blocks = rom
        .blocks
        .par_iter()
        .zip(ratios.par_iter())
        .map(|(b, &s)| simulate_on_grid(&b.rom, inputs, dt, s))
        .collect::<Result<Vec<_>>>()?;
    let lcm = ratios.iter().fold(1usize, |acc, &s| acc / gcd(acc, s) * s);
    let horizon = blocks.iter().map(|(idx, _)| idx.last().copied().unwrap_or(0)).min().unwrap_or(0);
    let merged_indices: Vec<usize> = (0..).map(|j| 1 + j * lcm).take_while(|&i| i <= horizon).collect();
    let mut merged = DMatrix::zeros(rom.q(), merged_indices.len());
    for ((idx, out), (spec, &s)) in blocks.iter().zip(rom.partition.blocks.iter().zip(&ratios)) {
        for (col, &fine) in merged_indices.iter().enumerate() {
            let k = (fine - 1) / s;
            debug_assert_eq!(idx[k], fine);
            merged.view_mut((spec.start, col), (spec.len, 1)).copy_from(&out.column(k));
        }
    }
    Ok(DdRun { blocks, merged_indices, merged })
}

/// ROM outputs at fine indices `1 + k·s`, `k = 0, 1, …`, driven by window
/// sums of the fine inputs.
pub fn simulate_on_grid(rom: &BalancedRom, inputs: &DMatrix<f64>, dt: f64, ratio: usize) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let agg = aggregate_inputs(rom, inputs, dt)?;
    let traj = rom.simulate(&agg)?;
    let steps = agg.ncols();
    let out = traj.outputs().columns(1, steps).into_owned();
    let idx = (0..steps).map(|k| 1 + k * ratio).collect();
    Ok((idx, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::era::{ImpulseSource, sample_impulse, DEFAULT_MEMORY_CAP};
    use crate::lti::{markov_parameters, DiscreteLti};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stable(rng: &mut ChaCha8Rng, n: usize, p: usize, q: usize, rho: f64) -> DiscreteLti {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let r = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let b = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(q, n, |_, _| rng.random_range(-1.0..1.0));
        DiscreteLti::new(a * (rho / r), b, c, 1.0).unwrap()
    }

    fn block(name: &str, start: usize, len: usize, period: f64, rank: RankSelector) -> OutputBlock {
        OutputBlock { name: name.into(), start, len, sample_period: period, rank, split: None, tangential: None }
    }

    #[test]
    fn partition_validation() {
        let ok = OutputPartition {
            base_period: 0.1,
            blocks: vec![block("a", 0, 2, 0.1, RankSelector::Rank(1)), block("b", 2, 3, 0.3, RankSelector::Rank(1))],
        };
        assert!(ok.validate(5).is_ok());
        assert!(ok.validate(6).is_err());
        let mut bad = ok.clone();
        bad.blocks[1].sample_period = 0.25;
        assert!(bad.validate(5).is_err());
        let mut gap = ok;
        gap.blocks[1].start = 3;
        assert!(gap.validate(5).is_err());
    }

    #[test]
    fn single_block_is_monolithic_era() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sys = random_stable(&mut rng, 4, 1, 3, 0.8);
        let seq = markov_parameters(&sys, 20).unwrap();
        let part = OutputPartition::single(3, 1.0, RankSelector::Rank(4));
        let dd = train_dd(std::slice::from_ref(&seq), &part, DEFAULT_MEMORY_CAP).unwrap();
        let mono = era(&seq, 10, 10, RankSelector::Rank(4), DEFAULT_MEMORY_CAP).unwrap();
        assert_eq!(dd.blocks[0].rom, mono.rom);
        let inputs = DMatrix::from_fn(1, 30, |_, k| (k as f64 * 0.7).sin());
        let run = simulate_dd(&dd, &inputs, 1.0).unwrap();
        let plain = mono.rom.simulate(&inputs).unwrap();
        assert_eq!(run.merged, plain.outputs().columns(1, 30).into_owned());
    }

    #[test]
    fn two_equal_blocks_match_monolithic_and_assembled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sys = random_stable(&mut rng, 1, 1, 2, 0.7);
        let seq = markov_parameters(&sys, 10).unwrap();
        let part = OutputPartition {
            base_period: 1.0,
            blocks: vec![block("a", 0, 1, 1.0, RankSelector::Rank(1)), block("b", 1, 1, 1.0, RankSelector::Rank(1))],
        };
        let sources = vec![seq.output_rows(0, 1).unwrap(), seq.output_rows(1, 1).unwrap()];
        let dd = train_dd(&sources, &part, DEFAULT_MEMORY_CAP).unwrap();
        let mono = era(&seq, 5, 5, RankSelector::Rank(1), DEFAULT_MEMORY_CAP).unwrap();
        let inputs = DMatrix::from_fn(1, 25, |_, k| ((k * k) as f64).cos());
        let run = simulate_dd(&dd, &inputs, 1.0).unwrap();
        let plain = mono.rom.simulate(&inputs).unwrap().outputs().columns(1, 25).into_owned();
        assert!((&run.merged - &plain).amax() <= 1e-10 * plain.amax());
        let assembled = dd.assembled_system().unwrap();
        let whole = assembled
            .simulate(&inputs, &nalgebra::DVector::zeros(assembled.n()))
            .unwrap()
            .outputs()
            .columns(1, 25)
            .into_owned();
        assert!((&run.merged - whole).amax() <= 1e-12 * plain.amax());
    }

    #[test]
    fn mixed_periods_reproduce_own_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sys = random_stable(&mut rng, 3, 1, 2, 0.8);
        let fast = sample_impulse(ImpulseSource::Discrete(&sys), 1.0, 12).unwrap().output_rows(0, 1).unwrap();
        let slow = sample_impulse(ImpulseSource::Discrete(&sys), 2.0, 12).unwrap().output_rows(1, 1).unwrap();
        let part = OutputPartition {
            base_period: 1.0,
            blocks: vec![block("fast", 0, 1, 1.0, RankSelector::Rank(3)), block("slow", 1, 1, 2.0, RankSelector::Rank(3))],
        };
        let dd = train_dd(&[fast.clone(), slow.clone()], &part, DEFAULT_MEMORY_CAP).unwrap();
        for (blk, seq) in dd.blocks.iter().zip([&fast, &slow]) {
            for (h, g) in blk.rom.markov(seq.len()).iter().zip(seq.samples()) {
                assert!((h - g).amax() <= 1e-10 * g.amax().max(1e-300));
            }
        }
        let inputs = DMatrix::from_fn(1, 20, |_, k| if k == 0 { 1.0 } else { 0.0 });
        let run = simulate_dd(&dd, &inputs, 1.0).unwrap();
        assert_eq!(run.merged_indices[..3], [1, 3, 5]);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sys = random_stable(&mut rng, 2, 1, 2, 0.5);
        let seq = markov_parameters(&sys, 8).unwrap();
        let dd = train_dd(&[seq], &OutputPartition::single(2, 1.0, RankSelector::Rank(2)), DEFAULT_MEMORY_CAP).unwrap();
        let run = simulate_dd(&dd, &DMatrix::zeros(1, 10), 1.0).unwrap();
        assert!(run.merged.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn incommensurate_period_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sys = random_stable(&mut rng, 2, 1, 1, 0.5);
        let seq = markov_parameters(&sys, 8).unwrap();
        let dd = train_dd(&[seq], &OutputPartition::single(1, 1.0, RankSelector::Rank(2)), DEFAULT_MEMORY_CAP).unwrap();
        assert!(simulate_dd(&dd, &DMatrix::zeros(1, 10), 0.3).is_err());
    }

    #[test]
    fn full_tangential_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sys = random_stable(&mut rng, 3, 2, 4, 0.8);
        let seq = markov_parameters(&sys, 10).unwrap();
        let proj = fit_tangential(&seq, 4, 2).unwrap();
        assert_eq!(project_markov(&seq, &proj).unwrap(), seq);
    }

    #[test]
    fn rank_one_outputs_are_lossless() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 2.0]);
        let samples = (0..6).map(|k| &v * (0.5f64).powi(k)).collect();
        let seq = MarkovSequence::new(samples, 1.0, 1.0).unwrap();
        let proj = fit_tangential(&seq, 1, 1).unwrap();
        let w = proj.left().column(0);
        assert!((w.dot(&v.column(0)).abs() - v.norm()).abs() < 1e-12);
        let back: Vec<_> = project_markov(&seq, &proj).unwrap().samples().iter().map(|y| proj.left() * y).collect();
        for (b, s) in back.iter().zip(seq.samples()) {
            assert!((b - s).amax() < 1e-12);
        }
        assert!(matches!(fit_tangential(&seq, 2, 1), Err(Error::Rank { .. })));
    }

    #[test]
    fn left_projection_residual_is_discarded_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = (0..8).map(|_| DMatrix::from_fn(5, 1, |_, _| rng.random_range(-1.0..1.0))).collect();
        let seq = MarkovSequence::new(samples, 1.0, 1.0).unwrap();
        let proj = fit_tangential(&seq, 2, 1).unwrap();
        let ql = seq.hstack();
        let resid = (proj.left() * proj.left().transpose() * &ql - &ql).norm();
        let s = ql.clone().singular_values();
        let mut s: Vec<f64> = s.iter().cloned().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let discarded: f64 = s[2..].iter().map(|x| x * x).sum();
        assert!((resid - discarded.sqrt()).abs() < 1e-10);
        assert_eq!(proj.right().shape(), (1, 1));
        assert_eq!(proj.right()[(0, 0)].abs(), 1.0);
    }

    #[test]
    fn unprojection_is_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples = (0..6).map(|_| DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0))).collect();
        let seq = MarkovSequence::new(samples, 1.0, 1.0).unwrap();
        let proj = fit_tangential(&seq, 2, 2).unwrap();
        let pr = project_markov(&seq, &proj).unwrap();
        let p1 = proj.left() * proj.left().transpose();
        let p2 = proj.right() * proj.right().transpose();
        for (yh, y) in pr.samples().iter().zip(seq.samples()) {
            let a = proj.left() * yh * proj.right().transpose();
            assert!((a - &p1 * y * &p2).amax() < 1e-12);
        }
    }

    #[test]
    fn degenerate_basis_rejected() {
        let w1 = DMatrix::from_column_slice(2, 1, &[0.0, 0.0]);
        assert!(TangentialProjection::new(w1, DMatrix::identity(1, 1), 1.0, 1.0).is_err());
    }

    #[test]
    fn recovered_rom_matches_plain_era_at_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sys = random_stable(&mut rng, 3, 2, 3, 0.7);
        let seq = markov_parameters(&sys, 12).unwrap();
        let plain = era(&seq, 6, 6, RankSelector::Rank(3), DEFAULT_MEMORY_CAP).unwrap();
        let proj = fit_tangential(&seq, 3, 2).unwrap();
        let hat = era(&project_markov(&seq, &proj).unwrap(), 6, 6, RankSelector::Rank(3), DEFAULT_MEMORY_CAP).unwrap();
        let rec = recover_rom(&hat.rom, &proj).unwrap();
        assert_eq!(rec.provenance(), Provenance::EraTangential);
        for (a, b) in rec.markov(12).iter().zip(plain.rom.markov(12)) {
            assert!((a - &b).amax() <= 1e-10 * b.amax());
        }
    }

    #[test]
    fn reduced_left_rank_realises_projected_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let sys = random_stable(&mut rng, 3, 1, 6, 0.7);
        let seq = markov_parameters(&sys, 12).unwrap();
        let proj = fit_tangential(&seq, 2, 1).unwrap();
        let hat = era(&project_markov(&seq, &proj).unwrap(), 6, 6, RankSelector::Rank(3), DEFAULT_MEMORY_CAP).unwrap();
        let rec = recover_rom(&hat.rom, &proj).unwrap();
        let p1 = proj.left() * proj.left().transpose();
        for (a, y) in rec.markov(12).iter().zip(seq.samples()) {
            let want = &p1 * y;
            assert!((a - &want).amax() <= 1e-8 * want.amax().max(1e-12));
        }
        // Hankel rows shrink by l1/q.
        let pair = crate::era::build_hankel(&project_markov(&seq, &proj).unwrap(), 6, 6).unwrap();
        assert_eq!(pair.hankel.nrows() * 6, crate::era::build_hankel(&seq, 6, 6).unwrap().hankel.nrows() * 2);
    }

    #[test]
    fn skip_rule_for_small_blocks() {
        let samples = (0..6).map(|k| DMatrix::from_element(4, 1, 1.0 / (k + 1) as f64)).collect();
        let seq = MarkovSequence::new(samples, 1.0, 1.0).unwrap();
        assert_eq!(effective_tangential(&seq, TangentialSpec::Fixed { l1: 4, l2: 1 }).unwrap(), None);
        assert_eq!(effective_tangential(&seq, TangentialSpec::Fixed { l1: 1, l2: 1 }).unwrap(), Some((1, 1)));
    }
}
