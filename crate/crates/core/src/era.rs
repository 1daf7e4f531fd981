//! Eigensystem realization: balanced reduced models identified from
//! impulse-response samples alone.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv, ThinSvd};
use crate::lti::{rk3_step, BalancedRom, ContinuousLti, DiscreteLti, Provenance, StateSpace, TimeDomain};

/// Default cap on Hankel storage (both matrices together).
pub const DEFAULT_MEMORY_CAP: u64 = 8 << 30;
/// Default retained energy fraction.
pub const DEFAULT_ENERGY: f64 = 0.9999;
/// Singular values below this fraction of the largest count as zero.
pub const RANK_FLOOR: f64 = 1e-14;

/// Impulse-response samples `h_1, …, h_N`, each `q×p`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSequence {
    samples: Vec<DMatrix<f64>>,
    sample_period: f64,
    impulse_step: f64,
}

impl MarkovSequence {
    /// `impulse_step` is the duration of the unit input pulse that produced
    /// the samples; it equals `sample_period` for a plain discrete system.
    pub fn new(samples: Vec<DMatrix<f64>>, sample_period: f64, impulse_step: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Data(format!(
                "a Markov sequence needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        let shape = samples[0].shape();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::Dimension("Markov samples must be non-empty".into()));
        }
        for (k, s) in samples.iter().enumerate() {
            if s.shape() != shape {
                return Err(Error::Dimension(format!(
                    "sample {} is {}x{}, expected {}x{}",
                    k + 1,
                    s.nrows(),
                    s.ncols(),
                    shape.0,
                    shape.1
                )));
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("sample {} has non-finite entries", k + 1)));
            }
        }
        for (name, v) in [("sample period", sample_period), ("impulse step", impulse_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self { samples, sample_period, impulse_step })
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn q(&self) -> usize {
        self.samples[0].nrows()
    }
    pub fn p(&self) -> usize {
        self.samples[0].ncols()
    }
    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }
    pub fn impulse_step(&self) -> f64 {
        self.impulse_step
    }

    /// First `count` samples.
    pub fn truncated(&self, count: usize) -> Result<Self> {
        if count > self.len() {
            return Err(Error::SampleBudget { have: self.len(), need: count });
        }
        Self::new(self.samples[..count].to_vec(), self.sample_period, self.impulse_step)
    }

    /// The sequence `h_2, …, h_N`.
    pub fn shifted(&self) -> Result<Self> {
        Self::new(self.samples[1..].to_vec(), self.sample_period, self.impulse_step)
    }

    /// Rows `range` of every sample.
    pub fn output_rows(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.q() {
            return Err(Error::Dimension(format!(
                "rows {start}..{} outside {} outputs",
                start + len,
                self.q()
            )));
        }
        let samples = self.samples.iter().map(|s| s.rows(start, len).into_owned()).collect();
        Self::new(samples, self.sample_period, self.impulse_step)
    }

    /// Every `factor`-th sample starting from `h_1`: the same impulse
    /// experiment observed at `factor` times the period.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("subsampling factor must be positive".into()));
        }
        let samples = self.samples.iter().step_by(factor).cloned().collect();
        Self::new(samples, self.sample_period * factor as f64, self.impulse_step)
    }

    /// Horizontal concatenation `[h_1 h_2 … h_N]` (q × N·p).
    pub fn hstack(&self) -> DMatrix<f64> {
        let (q, p) = (self.q(), self.p());
        let mut out = DMatrix::zeros(q, p * self.len());
        for (k, s) in self.samples.iter().enumerate() {
            out.columns_mut(k * p, p).copy_from(s);
        }
        out
    }

    /// Vertical concatenation `[h_1; h_2; …; h_N]` (N·q × p).
    pub fn vstack(&self) -> DMatrix<f64> {
        let (q, p) = (self.q(), self.p());
        let mut out = DMatrix::zeros(q * self.len(), p);
        for (k, s) in self.samples.iter().enumerate() {
            out.rows_mut(k * q, q).copy_from(s);
        }
        out
    }

    /// Inverse of [`MarkovSequence::hstack`].
    pub fn from_hstack(m: &DMatrix<f64>, p: usize, sample_period: f64, impulse_step: f64) -> Result<Self> {
        if p == 0 || m.ncols() % p != 0 {
            return Err(Error::Dimension(format!(
                "{} columns is not a multiple of p = {p}",
                m.ncols()
            )));
        }
        let samples = (0..m.ncols() / p).map(|k| m.columns(k * p, p).into_owned()).collect();
        Self::new(samples, sample_period, impulse_step)
    }
}

/// Block-Hankel matrix and its one-step shift.
#[derive(Debug, Clone)]
pub struct HankelPair {
    pub hankel: DMatrix<f64>,
    pub shifted: DMatrix<f64>,
    pub m_o: usize,
    pub m_p: usize,
    pub q: usize,
    pub p: usize,
    pub sample_period: f64,
    pub impulse_step: f64,
}

/// Bytes needed for a Hankel pair of the given shape.
pub fn hankel_bytes(q: usize, p: usize, m_o: usize, m_p: usize) -> u64 {
    2 * (m_o * q) as u64 * (m_p * p) as u64 * std::mem::size_of::<f64>() as u64
}

/// Square split `m_o = m_p = ⌊N/2⌋` for a budget of `N` samples.
pub fn default_split(count: usize) -> (usize, usize) {
    (count / 2, count / 2)
}

pub fn build_hankel(seq: &MarkovSequence, m_o: usize, m_p: usize) -> Result<HankelPair> {
    build_hankel_capped(seq, m_o, m_p, DEFAULT_MEMORY_CAP)
}

/// Assembles `H` with block `(i, j) = h_{i+j-1}` and `H′` with block
/// `(i, j) = h_{i+j}`, refusing allocations above `cap` bytes.
pub fn build_hankel_capped(seq: &MarkovSequence, m_o: usize, m_p: usize, cap: u64) -> Result<HankelPair> {
    if m_o == 0 || m_p == 0 {
        return Err(Error::Config("block counts m_o and m_p must be at least 1".into()));
    }
    let need = m_o + m_p;
    if seq.len() < need {
        return Err(Error::SampleBudget { have: seq.len(), need });
    }
    let (q, p) = (seq.q(), seq.p());
    let bytes = hankel_bytes(q, p, m_o, m_p);
    log::info!(
        "Hankel pair {}x{} (m_o = {m_o}, m_p = {m_p}): {:.1} MiB",
        m_o * q,
        m_p * p,
        bytes as f64 / (1u64 << 20) as f64
    );
    if bytes > cap {
        return Err(Error::MemoryCap { bytes, cap });
    }
    let s = seq.samples();
    let mut hankel = DMatrix::zeros(m_o * q, m_p * p);
    let mut shifted = DMatrix::zeros(m_o * q, m_p * p);
    for j in 0..m_p {
        for i in 0..m_o {
            hankel.view_mut((i * q, j * p), (q, p)).copy_from(&s[i + j]);
            shifted.view_mut((i * q, j * p), (q, p)).copy_from(&s[i + j + 1]);
        }
    }
    let pair = HankelPair {
        hankel,
        shifted,
        m_o,
        m_p,
        q,
        p,
        sample_period: seq.sample_period(),
        impulse_step: seq.impulse_step(),
    };
    pair.spot_check(seq)?;
    Ok(pair)
}

impl HankelPair {
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.hankel.view((i * self.q, j * self.p), (self.q, self.p)).into_owned()
    }
    pub fn shifted_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.shifted.view((i * self.q, j * self.p), (self.q, self.p)).into_owned()
    }

    fn spot_check(&self, seq: &MarkovSequence) -> Result<()> {
        let corners = [
            (0, 0),
            (self.m_o - 1, 0),
            (0, self.m_p - 1),
            (self.m_o - 1, self.m_p - 1),
            (self.m_o / 2, self.m_p / 2),
        ];
        for (i, j) in corners {
            if self.block(i, j) != seq.samples()[i + j] || self.shifted_block(i, j) != seq.samples()[i + j + 1] {
                return Err(Error::Data(format!("Hankel block ({i}, {j}) does not match its sample")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSelector {
    Rank(usize),
    Energy(f64),
}

impl Default for RankSelector {
    fn default() -> Self {
        RankSelector::Energy(DEFAULT_ENERGY)
    }
}

/// Truncated Hankel SVD together with the full singular spectrum.
#[derive(Debug, Clone)]
pub struct HankelSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
    pub all_singular_values: DVector<f64>,
    pub numerical_rank: usize,
    /// `Σ_{j≤r} σ_j / Σ_j σ_j`.
    pub captured_energy: f64,
}

impl HankelSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }
}

/// Applies a selector to a non-increasing spectrum; returns the order.
pub fn select_rank(s: &DVector<f64>, selector: RankSelector) -> Result<usize> {
    let rank = match s.iter().next() {
        Some(&s0) if s0 > 0.0 => s.iter().take_while(|&&x| x > RANK_FLOOR * s0).count(),
        _ => 0,
    };
    match selector {
        RankSelector::Rank(r) => {
            if r == 0 {
                return Err(Error::Config("rank must be at least 1".into()));
            }
            if r > rank {
                return Err(Error::Rank { requested: r, rank });
            }
            Ok(r)
        }
        RankSelector::Energy(eta) => {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::Config(format!("energy fraction must lie in (0, 1], got {eta}")));
            }
            if rank == 0 {
                return Err(Error::Rank { requested: 1, rank: 0 });
            }
            let total: f64 = s.iter().take(rank).sum();
            let mut acc = 0.0;
            let mut r = rank;
            for (k, &x) in s.iter().take(rank).enumerate() {
                acc += x;
                if acc >= eta * total * (1.0 - 1e-15) {
                    r = k + 1;
                    break;
                }
            }
            while r < rank && (s[r] - s[r - 1]).abs() <= 1e-12 * s[0] {
                r += 1;
            }
            Ok(r)
        }
    }
}

pub fn hankel_svd(pair: &HankelPair, selector: RankSelector) -> Result<HankelSvd> {
    let full = ThinSvd::new(&pair.hankel);
    let numerical_rank = full.numerical_rank(RANK_FLOOR);
    let r = select_rank(&full.s, selector)?;
    let total: f64 = full.s.iter().sum();
    let captured: f64 = full.s.iter().take(r).sum();
    let t = full.truncate(r);
    Ok(HankelSvd {
        u: t.u,
        s: t.s,
        v: t.v,
        all_singular_values: full.s,
        numerical_rank,
        captured_energy: if total > 0.0 { captured / total } else { 0.0 },
    })
}

/// Balanced realization from the Hankel pair and its truncated SVD:
/// `A_r = Σ^{-1/2} Uᵀ H′ V Σ^{-1/2}`, `B_r` the first `p` columns of
/// `Σ^{1/2} Vᵀ`, `C_r` the first `q` rows of `U Σ^{1/2}`.
pub fn era_rom(pair: &HankelPair, svd: &HankelSvd) -> Result<BalancedRom> {
    let r = svd.rank();
    if svd.u.nrows() != pair.hankel.nrows() || svd.v.nrows() != pair.hankel.ncols() {
        return Err(Error::Dimension("SVD factors do not match the Hankel matrix".into()));
    }
    let inv_sqrt = svd.s.map(|x| 1.0 / x.sqrt());
    let sqrt = svd.s.map(f64::sqrt);
    let left = DMatrix::from_diagonal(&inv_sqrt) * svd.u.transpose();
    let right = &svd.v * DMatrix::from_diagonal(&inv_sqrt);
    let a_r = left * &pair.shifted * right;
    let b_r = DMatrix::from_diagonal(&sqrt) * svd.v.rows(0, pair.p).transpose();
    let c_r = svd.u.rows(0, pair.q) * DMatrix::from_diagonal(&sqrt);
    debug_assert_eq!(a_r.shape(), (r, r));
    Ok(BalancedRom::new(
        a_r,
        b_r,
        c_r,
        svd.s.clone(),
        TimeDomain::Discrete { step: pair.sample_period },
        Provenance::Era,
    )?
    .with_impulse_step(Some(pair.impulse_step)))
}

/// Full pipeline output.
#[derive(Debug, Clone)]
pub struct EraOutput {
    pub rom: BalancedRom,
    pub svd: HankelSvd,
    pub m_o: usize,
    pub m_p: usize,
}

/// Hankel assembly, SVD, rank selection and realization in one call.
pub fn era(seq: &MarkovSequence, m_o: usize, m_p: usize, selector: RankSelector, cap: u64) -> Result<EraOutput> {
    let pair = build_hankel_capped(seq, m_o, m_p, cap)?;
    let svd = hankel_svd(&pair, selector)?;
    let rom = era_rom(&pair, &svd)?;
    Ok(EraOutput { rom, svd, m_o, m_p })
}

/// Direct and adjoint balancing modes.
#[derive(Debug, Clone)]
pub struct EraModes {
    /// `n×r`, columns are direct modes.
    pub direct: DMatrix<f64>,
    /// `r×n`, rows are adjoint modes.
    pub adjoint: DMatrix<f64>,
}

/// Balancing modes from full-state impulse snapshots.
///
/// `snapshots` is the reachability matrix `𝒫` (n × m_p·p) whose block `j`
/// holds the states `j` samples after the impulse. Direct modes are
/// `𝒫 V_r Σ_r^{-1/2}`. The observability matrix is recovered from the
/// Hankel rows as `𝒪 = H 𝒫⁺`, giving adjoint modes `Σ_r^{-1/2} U_rᵀ 𝒪`.
pub fn era_modes(pair: &HankelPair, svd: &HankelSvd, snapshots: &DMatrix<f64>) -> Result<EraModes> {
    let n = snapshots.nrows();
    if pair.q != n {
        return Err(Error::FullStateRequired { q: pair.q, n });
    }
    if snapshots.ncols() != pair.m_p * pair.p {
        return Err(Error::Dimension(format!(
            "snapshot matrix has {} columns, Hankel has {}",
            snapshots.ncols(),
            pair.m_p * pair.p
        )));
    }
    let inv_sqrt = DMatrix::from_diagonal(&svd.s.map(|x| 1.0 / x.sqrt()));
    let direct = snapshots * &svd.v * &inv_sqrt;
    let observability = &pair.hankel * pinv(snapshots, 1e-13);
    let adjoint = &inv_sqrt * svd.u.transpose() * observability;
    Ok(EraModes { direct, adjoint })
}

/// Where impulse samples come from.
#[derive(Debug, Clone, Copy)]
pub enum ImpulseSource<'a> {
    /// Discrete recursion; the impulse lasts one step of the system.
    Discrete(&'a DiscreteLti),
    /// Runge–Kutta integration of a continuous system with step `dt`; the
    /// impulse is a unit input held for the first step.
    Rk3 { system: &'a ContinuousLti, dt: f64 },
}

impl ImpulseSource<'_> {
    fn step(&self) -> f64 {
        match self {
            ImpulseSource::Discrete(s) => s.step(),
            ImpulseSource::Rk3 { dt, .. } => *dt,
        }
    }
    fn dims(&self) -> (usize, usize, usize) {
        match self {
            ImpulseSource::Discrete(s) => (s.n(), s.p(), s.q()),
            ImpulseSource::Rk3 { system, .. } => (system.n(), system.p(), system.q()),
        }
    }
    fn c(&self) -> &DMatrix<f64> {
        match self {
            ImpulseSource::Discrete(s) => s.c(),
            ImpulseSource::Rk3 { system, .. } => system.c(),
        }
    }
    fn advance(&self, x: &DVector<f64>, bu: Option<&DVector<f64>>) -> DVector<f64> {
        match self {
            ImpulseSource::Discrete(s) => {
                let mut y = s.a() * x;
                if let Some(bu) = bu {
                    y += bu;
                }
                y
            }
            ImpulseSource::Rk3 { system, dt } => {
                let zero;
                let bu = match bu {
                    Some(v) => v,
                    None => {
                        zero = DVector::zeros(x.len());
                        &zero
                    }
                };
                rk3_step(system.a(), bu, x, *dt)
            }
        }
    }
    fn b_column(&self, j: usize) -> DVector<f64> {
        match self {
            ImpulseSource::Discrete(s) => s.b().column(j).into_owned(),
            ImpulseSource::Rk3 { system, .. } => system.b().column(j).into_owned(),
        }
    }
}

/// Integer ratio `period / step`, or a configuration error.
pub fn period_ratio(period: f64, step: f64) -> Result<usize> {
    if !(period > 0.0 && step > 0.0) {
        return Err(Error::Config("periods must be positive".into()));
    }
    let ratio = period / step;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Config(format!(
            "sample period {period} is not an integer multiple of the step {step}"
        )));
    }
    Ok(rounded as usize)
}

/// Impulse samples plus, optionally, the full states at the same instants.
#[derive(Debug, Clone)]
pub struct ImpulseData {
    pub sequence: MarkovSequence,
    /// `n × count·p`: block `k` holds the states at sample `k`.
    pub states: Option<DMatrix<f64>>,
}

/// Applies a unit impulse on each input channel during the first step and
/// records outputs after steps `1, 1 + s, 1 + 2s, …` where `s` is the
/// period ratio. For a discrete source with `s = 1` this is exactly the
/// Markov sequence.
pub fn sample_impulse(source: ImpulseSource<'_>, sample_period: f64, count: usize) -> Result<MarkovSequence> {
    Ok(sample_impulse_with_states(source, sample_period, count, false)?.sequence)
}

pub fn sample_impulse_with_states(
    source: ImpulseSource<'_>,
    sample_period: f64,
    count: usize,
    keep_states: bool,
) -> Result<ImpulseData> {
    if count < 2 {
        return Err(Error::Config(format!("sample count must be at least 2, got {count}")));
    }
    let step = source.step();
    let ratio = period_ratio(sample_period, step)?;
    let (n, p, q) = source.dims();
    let mut samples = vec![DMatrix::zeros(q, p); count];
    let mut states = keep_states.then(|| DMatrix::zeros(n, count * p));
    let mut initial_norm = 0.0f64;
    for j in 0..p {
        let bu = source.b_column(j);
        let mut x = source.advance(&DVector::zeros(n), Some(&bu));
        for k in 0..count {
            if k > 0 {
                for _ in 0..ratio {
                    x = source.advance(&x, None);
                }
            }
            let norm = x.norm();
            if initial_norm == 0.0 {
                initial_norm = norm;
            }
            if !norm.is_finite() || (initial_norm > 0.0 && norm > 1e12 * initial_norm) {
                return Err(Error::Divergence {
                    step: 1 + k * ratio,
                    reason: format!("impulse response state norm {norm:e}"),
                });
            }
            samples[k].set_column(j, &(source.c() * &x));
            if let Some(st) = states.as_mut() {
                st.set_column(k * p + j, &x);
            }
        }
    }
    Ok(ImpulseData {
        sequence: MarkovSequence::new(samples, sample_period, step)?,
        states,
    })
}

/// Sums a fine input sequence over windows centred on each ROM sample.
///
/// A ROM at period `T_s = s·dt` trained with an impulse of duration
/// `impulse_step` consumes, at its step `k`, the fine inputs whose indices
/// lie within half a period of `k·s`, weighted by `dt / impulse_step`. The
/// ROM output after step `k` then corresponds to time `dt + (k - 1)·T_s`.
pub fn aggregate_inputs(rom: &BalancedRom, fine: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    let period = rom
        .domain()
        .step()
        .ok_or_else(|| Error::Config("ROM is not discrete-time".into()))?;
    let s = period_ratio(period, dt)?;
    let weight = dt / rom.impulse_step().unwrap_or(period);
    if fine.nrows() != rom.p() {
        return Err(Error::Dimension(format!(
            "input has {} channels, ROM has {}",
            fine.nrows(),
            rom.p()
        )));
    }
    let fine_len = fine.ncols();
    let half = s / 2;
    let steps = (fine_len + half).div_ceil(s);
    let mut out = DMatrix::zeros(rom.p(), steps);
    for k in 0..steps {
        let centre = k * s;
        let lo = centre.saturating_sub(half);
        let hi = (centre + s - half).min(fine_len);
        for l in lo..hi {
            for c in 0..rom.p() {
                out[(c, k)] += fine[(c, l)] * weight;
            }
        }
    }
    Ok(out)
}
