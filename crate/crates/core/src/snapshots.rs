//! Snapshot matrices, per-variable scaling and proper orthogonal
//! decomposition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::era::{select_rank, RankSelector};
use crate::error::{Error, Result};
use crate::linalg::ThinSvd;

/// Contiguous row range belonging to one physical variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl VariableBlock {
    pub fn new(name: impl Into<String>, start: usize, len: usize) -> Self {
        Self { name: name.into(), start, len }
    }
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Checks that blocks are non-empty, in order, and tile `0..n` exactly.
pub fn validate_blocks(blocks: &[VariableBlock], n: usize) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::Config("at least one variable block is required".into()));
    }
    let mut next = 0;
    for b in blocks {
        if b.len == 0 {
            return Err(Error::Config(format!("variable block '{}' is empty", b.name)));
        }
        if b.start != next {
            return Err(Error::Config(format!(
                "variable block '{}' starts at {}, expected {next}",
                b.name, b.start
            )));
        }
        next = b.end();
    }
    if next != n {
        return Err(Error::Config(format!("variable blocks cover {next} rows, state has {n}")));
    }
    Ok(())
}

/// `count` equally sized blocks named `var0`, `var1`, ….
pub fn uniform_blocks(count: usize, len: usize) -> Vec<VariableBlock> {
    (0..count).map(|i| VariableBlock::new(format!("var{i}"), i * len, len)).collect()
}

/// Full-state samples as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: DMatrix<f64>,
    step: f64,
    blocks: Vec<VariableBlock>,
}

impl SnapshotMatrix {
    pub fn new(data: DMatrix<f64>, step: f64, blocks: Vec<VariableBlock>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(Error::Data("snapshot matrix must be non-empty".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("snapshot matrix has non-finite entries".into()));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Config(format!("snapshot step must be positive, got {step}")));
        }
        validate_blocks(&blocks, data.nrows())?;
        Ok(Self { data, step, blocks })
    }

    /// One block covering every row.
    pub fn single_block(data: DMatrix<f64>, step: f64) -> Result<Self> {
        let n = data.nrows();
        Self::new(data, step, vec![VariableBlock::new("state", 0, n)])
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }
    pub fn step(&self) -> f64 {
        self.step
    }
    pub fn blocks(&self) -> &[VariableBlock] {
        &self.blocks
    }
    pub fn n(&self) -> usize {
        self.data.nrows()
    }
    pub fn len(&self) -> usize {
        self.data.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    /// Rows of one block as a single-block snapshot matrix.
    pub fn block(&self, index: usize) -> Result<SnapshotMatrix> {
        let b = self
            .blocks
            .get(index)
            .ok_or_else(|| Error::Config(format!("no variable block {index}")))?;
        SnapshotMatrix::new(
            self.data.rows(b.start, b.len).into_owned(),
            self.step,
            vec![VariableBlock::new(b.name.clone(), 0, b.len)],
        )
    }
}

/// Per-block mean-square energies `α` and the derived scaling `S = 1/α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockScaling {
    pub blocks: Vec<VariableBlock>,
    pub alpha: Vec<f64>,
}

impl BlockScaling {
    pub fn identity(blocks: Vec<VariableBlock>) -> Self {
        let alpha = vec![1.0; blocks.len()];
        Self { blocks, alpha }
    }

    /// Diagonal of `S`, one entry per state row.
    pub fn diagonal(&self) -> DVector<f64> {
        let n = self.blocks.last().map_or(0, |b| b.end());
        let mut d = DVector::zeros(n);
        for (b, a) in self.blocks.iter().zip(&self.alpha) {
            d.rows_mut(b.start, b.len).fill(1.0 / a);
        }
        d
    }

    /// `S` values per block.
    pub fn factors(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| 1.0 / a).collect()
    }
}

/// `α_b = (1/n_t) Σ_j (1/n_b) Σ_{k∈b} q_{k,j}²` for every variable block.
pub fn compute_scaling(snaps: &SnapshotMatrix) -> Result<BlockScaling> {
    compute_scaling_of(snaps.data(), snaps.blocks())
}

fn compute_scaling_of(data: &DMatrix<f64>, blocks: &[VariableBlock]) -> Result<BlockScaling> {
    let nt = data.ncols() as f64;
    let mut alpha = Vec::with_capacity(blocks.len());
    for b in blocks {
        let energy = data.rows(b.start, b.len).norm_squared() / (nt * b.len as f64);
        if !(energy > 0.0) {
            return Err(Error::DegenerateBlock(b.name.clone()));
        }
        alpha.push(energy);
    }
    Ok(BlockScaling { blocks: blocks.to_vec(), alpha })
}

/// `Σ_{j≤k} σ_j / Σ_j σ_j` (sums of singular values, not their squares).
pub fn cumulative_energy(singular_values: &[f64], k: usize) -> f64 {
    let total: f64 = singular_values.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let k = k.min(singular_values.len());
    singular_values[..k].iter().sum::<f64>() / total
}

/// Trial basis with its centring and scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    modes: DMatrix<f64>,
    singular_values: DVector<f64>,
    all_singular_values: DVector<f64>,
    scaling: BlockScaling,
    reference_state: DVector<f64>,
}

impl PodBasis {
    /// Assembles a basis, checking orthonormality to 1e-10 and the other
    /// invariants.
    pub fn new(
        modes: DMatrix<f64>,
        singular_values: DVector<f64>,
        scaling: BlockScaling,
        reference_state: DVector<f64>,
    ) -> Result<Self> {
        let n = modes.nrows();
        let m = modes.ncols();
        if m == 0 || singular_values.len() != m || reference_state.len() != n {
            return Err(Error::Dimension("inconsistent POD basis dimensions".into()));
        }
        validate_blocks(&scaling.blocks, n)?;
        if scaling.alpha.len() != scaling.blocks.len() || scaling.alpha.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::Data("scaling entries must be strictly positive".into()));
        }
        if singular_values.as_slice().windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Data("singular values must be non-increasing".into()));
        }
        let gram = modes.transpose() * &modes;
        if (gram - DMatrix::identity(m, m)).amax() > 1e-10 {
            return Err(Error::Data("POD modes are not orthonormal".into()));
        }
        let all_singular_values = singular_values.clone();
        Ok(Self { modes, singular_values, all_singular_values, scaling, reference_state })
    }

    /// Identity basis with unit scaling and zero reference.
    pub fn identity(n: usize) -> Self {
        Self {
            modes: DMatrix::identity(n, n),
            singular_values: DVector::from_element(n, 1.0),
            all_singular_values: DVector::from_element(n, 1.0),
            scaling: BlockScaling::identity(vec![VariableBlock::new("state", 0, n)]),
            reference_state: DVector::zeros(n),
        }
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }
    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }
    /// Every singular value of the decomposed snapshot matrix.
    pub fn all_singular_values(&self) -> &DVector<f64> {
        &self.all_singular_values
    }
    pub fn scaling(&self) -> &BlockScaling {
        &self.scaling
    }
    pub fn reference_state(&self) -> &DVector<f64> {
        &self.reference_state
    }
    pub fn n(&self) -> usize {
        self.modes.nrows()
    }
    pub fn m(&self) -> usize {
        self.modes.ncols()
    }

    /// `q̂ = Vᵀ S (q - q̄)`.
    pub fn project(&self, q: &DVector<f64>) -> DVector<f64> {
        let s = self.scaling.diagonal();
        self.modes.transpose() * (q - &self.reference_state).component_mul(&s)
    }

    /// `q̃ = q̄ + S⁻¹ V q̂`.
    pub fn reconstruct(&self, qhat: &DVector<f64>) -> DVector<f64> {
        let s = self.scaling.diagonal();
        &self.reference_state + (&self.modes * qhat).component_div(&s)
    }

    /// Reconstructs each column of a reduced trajectory.
    pub fn reconstruct_all(&self, qhat: &DMatrix<f64>) -> DMatrix<f64> {
        let s = self.scaling.diagonal();
        let mut out = &self.modes * qhat;
        for mut col in out.column_iter_mut() {
            col.component_div_assign(&s);
            col += &self.reference_state;
        }
        out
    }
}

/// How snapshots are prepared before decomposition.
#[derive(Debug, Clone, Default)]
pub struct PodOptions {
    /// Subtracted from every snapshot; zero when absent.
    pub reference_state: Option<DVector<f64>>,
    /// Skip the energy scaling (S = I).
    pub unscaled: bool,
}

/// Joint POD with zero reference and energy scaling.
pub fn pod(snaps: &SnapshotMatrix, selector: RankSelector) -> Result<PodBasis> {
    pod_with(snaps, &PodOptions::default(), selector)
}

/// Centres, scales and decomposes the snapshots; the scaling is computed
/// from the centred data.
pub fn pod_with(snaps: &SnapshotMatrix, opts: &PodOptions, selector: RankSelector) -> Result<PodBasis> {
    let n = snaps.n();
    let reference = match &opts.reference_state {
        Some(r) if r.len() != n => {
            return Err(Error::Dimension(format!("reference state has length {}, expected {n}", r.len())))
        }
        Some(r) => r.clone(),
        None => DVector::zeros(n),
    };
    let mut centred = snaps.data().clone();
    for mut col in centred.column_iter_mut() {
        col -= &reference;
    }
    let scaling = if opts.unscaled {
        BlockScaling::identity(snaps.blocks().to_vec())
    } else {
        compute_scaling_of(&centred, snaps.blocks())?
    };
    let s = scaling.diagonal();
    for mut col in centred.column_iter_mut() {
        col.component_mul_assign(&s);
    }
    let svd = ThinSvd::new(&centred);
    let m = select_rank(&svd.s, selector)?;
    let t = svd.truncate(m);
    let mut basis = PodBasis::new(t.u, t.s, scaling, reference)?;
    basis.all_singular_values = svd.s;
    Ok(basis)
}

/// Independent POD of every variable block ("scalar-valued" POD), combined
/// into one block-diagonal trial basis. Columns are ordered block by block.
pub fn pod_per_block(snaps: &SnapshotMatrix, opts: &PodOptions, selector: RankSelector) -> Result<(PodBasis, Vec<PodBasis>)> {
    let n = snaps.n();
    let reference = opts.reference_state.clone().unwrap_or_else(|| DVector::zeros(n));
    if reference.len() != n {
        return Err(Error::Dimension("reference state length mismatch".into()));
    }
    let mut parts = Vec::new();
    for (i, b) in snaps.blocks().iter().enumerate() {
        let sub = snaps.block(i)?;
        let sub_opts = PodOptions {
            reference_state: Some(reference.rows(b.start, b.len).into_owned()),
            unscaled: opts.unscaled,
        };
        parts.push(pod_with(&sub, &sub_opts, selector)?);
    }
    let m: usize = parts.iter().map(|p| p.m()).sum();
    let mut modes = DMatrix::zeros(n, m);
    let mut values: Vec<f64> = Vec::with_capacity(m);
    let mut alpha = Vec::new();
    let mut col = 0;
    for (b, part) in snaps.blocks().iter().zip(&parts) {
        modes.view_mut((b.start, col), (b.len, part.m())).copy_from(part.modes());
        values.extend(part.singular_values().iter());
        alpha.push(part.scaling().alpha[0]);
        col += part.m();
    }
    // Singular values across blocks are not globally ordered; the combined
    // basis reports them sorted and keeps the block-major column order.
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let scaling = BlockScaling { blocks: snaps.blocks().to_vec(), alpha };
    let combined = PodBasis::new(modes, DVector::from_vec(sorted), scaling, reference)?;
    Ok((combined, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constant_field_scaling() {
        let s = SnapshotMatrix::single_block(DMatrix::from_element(3, 5, 2.0), 1.0).unwrap();
        let sc = compute_scaling(&s).unwrap();
        assert_eq!(sc.alpha, vec![4.0]);
        assert_eq!(sc.factors(), vec![0.25]);
        let s = SnapshotMatrix::single_block(DMatrix::from_element(2, 2, 1.0), 1.0).unwrap();
        assert_eq!(compute_scaling(&s).unwrap().alpha, vec![1.0]);
    }

    #[test]
    fn two_block_scaling() {
        let mut d = DMatrix::from_element(5, 4, 3.0);
        d.rows_mut(2, 3).fill(-0.5);
        let s = SnapshotMatrix::new(d, 1.0, vec![VariableBlock::new("u", 0, 2), VariableBlock::new("v", 2, 3)]).unwrap();
        let sc = compute_scaling(&s).unwrap();
        assert_eq!(sc.alpha, vec![9.0, 0.25]);
    }

    #[test]
    fn zero_block_is_degenerate() {
        let mut d = DMatrix::from_element(4, 3, 1.0);
        d.rows_mut(2, 2).fill(0.0);
        let s = SnapshotMatrix::new(d, 1.0, uniform_blocks(2, 2)).unwrap();
        match compute_scaling(&s) {
            Err(Error::DegenerateBlock(name)) => assert_eq!(name, "var1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn blocks_must_tile() {
        let d = DMatrix::from_element(4, 3, 1.0);
        assert!(SnapshotMatrix::new(d.clone(), 1.0, vec![VariableBlock::new("a", 0, 3)]).is_err());
        assert!(SnapshotMatrix::new(d, 1.0, vec![VariableBlock::new("a", 0, 2), VariableBlock::new("b", 3, 1)]).is_err());
    }

    #[test]
    fn cumulative_energy_examples() {
        assert_eq!(cumulative_energy(&[1.0], 1), 1.0);
        assert_eq!(cumulative_energy(&[3.0, 1.0], 1), 0.75);
        assert_eq!(cumulative_energy(&[4.0, 2.0, 1.0, 1.0], 2), 0.75);
    }

    #[test]
    fn rank_one_snapshots() {
        let v = DVector::from_vec(vec![1.0, 2.0, -2.0]);
        let amps = [1.0, -3.0, 0.5, 2.0];
        let data = DMatrix::from_fn(3, 4, |i, j| v[i] * amps[j]);
        let s = SnapshotMatrix::single_block(data, 1.0).unwrap();
        let basis = pod_with(&s, &PodOptions { unscaled: true, ..Default::default() }, RankSelector::Energy(0.5)).unwrap();
        assert_eq!(basis.m(), 1);
        let want = v.normalize();
        let got = basis.modes().column(0);
        assert!((got - &want).amax() < 1e-12 || (got + &want).amax() < 1e-12);
    }

    #[test]
    fn constructed_spectrum_ratio() {
        let mut data = DMatrix::zeros(3, 2);
        data[(0, 0)] = 3.0;
        data[(1, 1)] = 1.0;
        let s = SnapshotMatrix::single_block(data, 1.0).unwrap();
        let b = pod_with(&s, &PodOptions { unscaled: true, ..Default::default() }, RankSelector::Rank(2)).unwrap();
        assert_abs_diff_eq!(b.singular_values()[0] / b.singular_values()[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn eckart_young_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = random(&mut rng, 20, 10);
        let s = SnapshotMatrix::single_block(data.clone(), 1.0).unwrap();
        let opts = PodOptions { unscaled: true, ..Default::default() };
        let b = pod_with(&s, &opts, RankSelector::Rank(4)).unwrap();
        let v = b.modes();
        let resid = (&data - v * v.transpose() * &data).norm();
        let discarded: f64 = b.all_singular_values().iter().skip(4).map(|x| x * x).sum();
        assert_abs_diff_eq!(resid, discarded.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn project_reconstruct_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random(&mut rng, 6, 6);
        let s = SnapshotMatrix::new(data.clone(), 1.0, uniform_blocks(2, 3)).unwrap();
        let reference = DVector::from_fn(6, |i, _| i as f64);
        let opts = PodOptions { reference_state: Some(reference.clone()), unscaled: false };
        let b = pod_with(&s, &opts, RankSelector::Rank(6)).unwrap();
        assert_eq!(b.reconstruct(&DVector::zeros(6)), reference);
        let q = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        assert!((b.reconstruct(&b.project(&q)) - &q).amax() < 1e-10);
        let inside = data.column(2).into_owned();
        assert!((b.reconstruct(&b.project(&inside)) - &inside).amax() < 1e-10);
    }

    #[test]
    fn rank_error_beyond_numerical_rank() {
        let data = DMatrix::from_fn(4, 3, |i, j| (i + 1) as f64 * (j + 1) as f64);
        let s = SnapshotMatrix::single_block(data, 1.0).unwrap();
        assert!(matches!(pod(&s, RankSelector::Rank(2)), Err(Error::Rank { requested: 2, rank: 1 })));
    }

    #[test]
    fn per_block_basis_is_block_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = random(&mut rng, 6, 8);
        let s = SnapshotMatrix::new(data, 1.0, uniform_blocks(2, 3)).unwrap();
        let (combined, parts) = pod_per_block(&s, &PodOptions::default(), RankSelector::Rank(2)).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(combined.m(), 4);
        assert!(combined.modes().view((3, 0), (3, 2)).iter().all(|&x| x == 0.0));
        assert!(combined.modes().view((0, 2), (3, 2)).iter().all(|&x| x == 0.0));
    }
}
