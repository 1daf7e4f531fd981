use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nibrom_core::era::{era, RankSelector, DEFAULT_MEMORY_CAP};
use nibrom_core::io::{decode_dmat, encode_dmat};
use nibrom_core::lti::{
    analytical_bt, discretize_exact, eigenvalues, frequency_points, gramians_continuous, log_grid,
    markov_parameters, transfer_function, ContinuousLti, DiscreteLti, StateSpace, TimeDomain,
};
use nibrom_core::scalability::fit_tangential;
use nibrom_core::snapshots::{cumulative_energy, pod, SnapshotMatrix};
use nibrom_core::testbed::{build_synthetic_fom, Stiffness, SyntheticFomSpec};

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn discrete(seed: u64, n: usize, p: usize, q: usize, rho: f64) -> DiscreteLti {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random(&mut rng, n, n);
    let probe = DiscreteLti::new(a.clone(), DMatrix::zeros(n, 1), DMatrix::zeros(1, n), 1.0).unwrap();
    let a = a * (rho / eigenvalues(&probe).radius);
    DiscreteLti::new(a, random(&mut rng, n, p), random(&mut rng, q, n), 1.0).unwrap()
}

fn continuous(seed: u64, n: usize, p: usize, q: usize) -> ContinuousLti {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = random(&mut rng, n, n);
    let probe = ContinuousLti::new(m.clone(), DMatrix::zeros(n, 1), DMatrix::zeros(1, n)).unwrap();
    let a = m - DMatrix::identity(n, n) * (eigenvalues(&probe).abscissa + 0.5);
    ContinuousLti::new(a, random(&mut rng, n, p), random(&mut rng, q, n)).unwrap()
}

/// Random matrix with orthonormal columns.
fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    random(rng, n, k).qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn era_realizes_exactly(seed in any::<u64>(), n in 1usize..=6, p in 1usize..=3, q in 1usize..=3, rho in 0.1f64..0.95) {
        let sys = discrete(seed, n, p, q, rho);
        let seq = markov_parameters(&sys, 2 * n.max(2)).unwrap();
        let m = n.max(1);
        let out = era(&seq, m, m, RankSelector::Rank(n), DEFAULT_MEMORY_CAP).unwrap();
        let scale = seq.samples().iter().map(|h| h.norm()).fold(0.0, f64::max);
        for (a, b) in out.rom.markov(seq.len()).iter().zip(seq.samples()) {
            prop_assert!((a - b).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn hsv_are_similarity_invariant(seed in any::<u64>(), n in 2usize..=5, p in 1usize..=2, q in 1usize..=2) {
        let sys = continuous(seed, n, p, q);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let t = DMatrix::identity(n, n) + random(&mut rng, n, n) * 0.3;
        let t_inv = t.clone().try_inverse().unwrap();
        let moved = ContinuousLti::new(&t * sys.a() * &t_inv, &t * sys.b(), sys.c() * &t_inv).unwrap();
        let h0 = analytical_bt(&sys, n).unwrap().rom.hsv().clone();
        let h1 = analytical_bt(&moved, n).unwrap().rom.hsv().clone();
        prop_assert!((&h0 - &h1).norm() <= 1e-6 * h0.norm());
        // Discarded tails shrink as the order grows.
        let tails: Vec<f64> = (0..n).map(|r| h0.rows(r, n - r).sum()).collect();
        prop_assert!(tails.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn lyapunov_residuals_are_small(seed in any::<u64>(), n in 1usize..=8) {
        let sys = continuous(seed, n, 2, 2);
        let g = gramians_continuous(&sys).unwrap();
        let bbt = sys.b() * sys.b().transpose();
        let ctc = sys.c().transpose() * sys.c();
        let rp = sys.a() * &g.reachability + &g.reachability * sys.a().transpose() + &bbt;
        let ro = sys.a().transpose() * &g.observability + &g.observability * sys.a() + &ctc;
        prop_assert!(rp.norm() <= 1e-8 * bbt.norm());
        prop_assert!(ro.norm() <= 1e-8 * ctc.norm());
    }

    #[test]
    fn full_order_balancing_keeps_the_transfer_function(seed in any::<u64>(), n in 1usize..=6) {
        let sys = continuous(seed, n, 2, 2);
        let rom = analytical_bt(&sys, n).unwrap().rom;
        let points = frequency_points(TimeDomain::Continuous, &log_grid(1e-2, 1e2, 40));
        let full = transfer_function(&sys, &points);
        let red = transfer_function(&rom, &points);
        let scale = full.iter().map(|f| f.value.norm()).fold(0.0, f64::max);
        for (a, b) in full.iter().zip(&red) {
            prop_assert!((&a.value - &b.value).norm() <= 1e-8 * scale);
        }
    }

    #[test]
    fn pod_basis_is_orthonormal_and_optimal(seed in any::<u64>(), n in 4usize..=12, nt in 4usize..=20, k in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random(&mut rng, n, nt);
        let snaps = SnapshotMatrix::single_block(data, 1.0).unwrap();
        let basis = pod(&snaps, RankSelector::Rank(k)).unwrap();
        let v = basis.modes();
        prop_assert!((v.transpose() * v - DMatrix::identity(k, k)).amax() <= 1e-10);

        let sv = basis.all_singular_values().as_slice().to_vec();
        let mut last = 0.0;
        for j in 0..=sv.len() {
            let e = cumulative_energy(&sv, j);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&e) && e >= last);
            last = e;
        }

        let scaled = snaps.data() * (1.0 / basis.scaling().alpha[0]);
        let residual = |w: &DMatrix<f64>| (&scaled - w * (w.transpose() * &scaled)).norm();
        let best = residual(v);
        for _ in 0..20 {
            prop_assert!(best <= residual(&random_orthonormal(&mut rng, n, k)) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn tangential_directions_are_optimal(seed in any::<u64>(), q in 3usize..=6, l1 in 1usize..=2) {
        let sys = discrete(seed, 5, 2, q, 0.8);
        let seq = markov_parameters(&sys, 20).unwrap();
        let proj = fit_tangential(&seq, l1, 2).unwrap();
        let ql = seq.hstack();
        let kept = |w: &DMatrix<f64>| (w.transpose() * &ql).norm_squared();
        let best = kept(proj.left());
        prop_assert!((best / ql.norm_squared() - proj.left_energy()).abs() <= 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        for _ in 0..20 {
            prop_assert!(kept(&random_orthonormal(&mut rng, q, l1)) <= best * (1.0 + 1e-12));
        }
    }

    #[test]
    fn dmat_round_trip_is_bit_exact(r in 0usize..6, c in 0usize..6, bits in prop::collection::vec(any::<u64>(), 36)) {
        let m = DMatrix::from_fn(r, c, |i, j| f64::from_bits(bits[i * 6 + j]));
        let back = decode_dmat(&encode_dmat(&m)).unwrap();
        prop_assert_eq!(back.shape(), (r, c));
        prop_assert!(m.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthetic_impulse_energy_decays(
        cells in 3usize..=30,
        variables in 1usize..=3,
        rate in 0.0f64..50.0,
        recirculation in 0.0f64..0.9,
        diffusivity in 0.0f64..1e-3,
    ) {
        let stiffness = if variables > 1 { Stiffness::Rate(rate) } else { Stiffness::Rate(0.0) };
        let spec = SyntheticFomSpec { cells, variables, stiffness, recirculation, diffusivity, ..Default::default() };
        let sys = build_synthetic_fom(&spec).unwrap().system;
        let length = cells as f64 * spec.dx;
        let steps = 400;
        let d = discretize_exact(&sys, 20.0 * length / steps as f64).unwrap();
        let mut x: DVector<f64> = d.b().column(0).into_owned();
        let mut peak = x.norm();
        for _ in 0..steps {
            x = d.a() * &x;
            peak = peak.max(x.norm());
        }
        prop_assert!(x.norm() < peak);
    }
}
