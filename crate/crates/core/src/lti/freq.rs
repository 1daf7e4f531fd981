use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;

use super::{StateSpace, TimeDomain};
use crate::error::{Error, Result};

type C64 = Complex<f64>;

/// Transfer-function value at one complex point.
#[derive(Debug, Clone)]
pub struct FrequencyResponse {
    pub point: C64,
    pub value: DMatrix<C64>,
    /// Set when the resolvent pivot ratio exceeds 1e14: the point sits on or
    /// near a pole and the value is unreliable.
    pub pole_warning: bool,
}

/// Evaluates `G = C (s I - A)^{-1} B` at each point by a dense LU solve.
///
/// Points are Laplace variables for continuous systems and `z` values for
/// discrete ones. Evaluation runs in parallel; the output order follows the
/// input order.
pub fn transfer_function<S: StateSpace + Sync + ?Sized>(
    sys: &S,
    points: &[C64],
) -> Vec<FrequencyResponse> {
    let n = sys.n();
    let a = sys.a().map(|x| C64::new(x, 0.0));
    let b = sys.b().map(|x| C64::new(x, 0.0));
    let c = sys.c().map(|x| C64::new(x, 0.0));
    points
        .par_iter()
        .map(|&s| {
            let mut m = -&a;
            for i in 0..n {
                m[(i, i)] += s;
            }
            let lu = m.lu();
            let u = lu.u();
            let diag: Vec<f64> = (0..n).map(|i| u[(i, i)].norm()).collect();
            let dmax = diag.iter().cloned().fold(0.0, f64::max);
            let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
            let pole_warning = !(dmin > 0.0) || dmax / dmin > 1e14;
            let value = match lu.solve(&b) {
                Some(x) => &c * x,
                None => DMatrix::from_element(c.nrows(), b.ncols(), C64::new(f64::NAN, f64::NAN)),
            };
            let pole_warning = pole_warning || value_nan(&value);
            FrequencyResponse { point: s, value, pole_warning }
        })
        .collect()
}

fn value_nan(m: &DMatrix<C64>) -> bool {
    m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
}

/// Maps real angular frequencies (rad/s) onto evaluation points: `s = iω`
/// for continuous systems, `z = exp(iω h)` for discrete ones with step `h`.
pub fn frequency_points(domain: TimeDomain, omegas: &[f64]) -> Vec<C64> {
    match domain {
        TimeDomain::Continuous => omegas.iter().map(|&w| C64::new(0.0, w)).collect(),
        TimeDomain::Discrete { step } => {
            omegas.iter().map(|&w| C64::from_polar(1.0, w * step)).collect()
        }
    }
}

/// `n` log-spaced frequencies between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..n).map(|k| (l0 + (l1 - l0) * k as f64 / (n - 1) as f64).exp()).collect()
}

/// `n` uniformly spaced frequencies covering `[0, π/h]` inclusive.
pub fn unit_circle_grid(step: f64, n: usize) -> Vec<f64> {
    let top = std::f64::consts::PI / step;
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|k| top * k as f64 / (n - 1) as f64).collect()
}

/// Grid supremum of the largest singular value of `G - G_r`.
#[derive(Debug, Clone, Copy)]
pub struct HinfEstimate {
    /// A lower estimate of the true H∞ norm of the error system.
    pub sup_norm: f64,
    /// Frequency (rad/s) at which the supremum was attained.
    pub argmax_freq: f64,
}

fn check_pair<S: StateSpace + ?Sized, R: StateSpace + ?Sized>(full: &S, rom: &R) -> Result<()> {
    if full.p() != rom.p() || full.q() != rom.q() {
        return Err(Error::Dimension(format!(
            "systems differ in shape: {}x{} vs {}x{}",
            full.q(),
            full.p(),
            rom.q(),
            rom.p()
        )));
    }
    match (full.domain(), rom.domain()) {
        (TimeDomain::Continuous, TimeDomain::Continuous) => Ok(()),
        (TimeDomain::Discrete { step: a }, TimeDomain::Discrete { step: b })
            if (a - b).abs() <= 1e-12 * a.abs().max(b.abs()) =>
        {
            Ok(())
        }
        _ => Err(Error::Dimension("systems differ in time domain or sampling step".into())),
    }
}

/// Largest singular value of `G(iω) - G_r(iω)` over the grid.
///
/// The grid supremum never exceeds the true H∞ norm.
pub fn hinf_error_estimate<S, R>(full: &S, rom: &R, grid: &[f64]) -> Result<HinfEstimate>
where
    S: StateSpace + Sync + ?Sized,
    R: StateSpace + Sync + ?Sized,
{
    check_pair(full, rom)?;
    if grid.is_empty() {
        return Err(Error::Config("frequency grid is empty".into()));
    }
    let points = frequency_points(full.domain(), grid);
    let gf = transfer_function(full, &points);
    let gr = transfer_function(rom, &points);
    let mut best = HinfEstimate { sup_norm: f64::NEG_INFINITY, argmax_freq: grid[0] };
    for ((w, a), b) in grid.iter().zip(gf.iter()).zip(gr.iter()) {
        let diff = &a.value - &b.value;
        let sigma = diff.singular_values().iter().cloned().fold(0.0, f64::max);
        if sigma > best.sup_norm {
            best = HinfEstimate { sup_norm: sigma, argmax_freq: *w };
        }
    }
    Ok(best)
}

/// Grid supremum with three rounds of local refinement around the argmax.
///
/// `grid` must be sorted ascending. Each round re-samples the bracket formed
/// by the argmax's neighbours ten times more densely than the current grid.
pub fn hinf_error_refined<S, R>(full: &S, rom: &R, grid: &[f64]) -> Result<HinfEstimate>
where
    S: StateSpace + Sync + ?Sized,
    R: StateSpace + Sync + ?Sized,
{
    let mut est = hinf_error_estimate(full, rom, grid)?;
    let mut local: Vec<f64> = grid.to_vec();
    for _ in 0..3 {
        let idx = local.iter().position(|&w| w == est.argmax_freq).unwrap_or(0);
        let lo = local[idx.saturating_sub(1)];
        let hi = local[(idx + 1).min(local.len() - 1)];
        if !(hi > lo) {
            break;
        }
        let intervals = if idx == 0 || idx + 1 == local.len() { 10 } else { 20 };
        local = (0..=intervals).map(|k| lo + (hi - lo) * k as f64 / intervals as f64).collect();
        let round = hinf_error_estimate(full, rom, &local)?;
        if round.sup_norm > est.sup_norm {
            est = round;
        } else if !local.contains(&est.argmax_freq) {
            local.push(est.argmax_freq);
            local.sort_by(|a, b| a.total_cmp(b));
        }
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{ContinuousLti, DiscreteLti};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn integrator_at_one() {
        let sys = ContinuousLti::new(one(0.0), one(1.0), one(1.0)).unwrap();
        let g = transfer_function(&sys, &[C64::new(1.0, 0.0)]);
        assert_abs_diff_eq!(g[0].value[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert!(!g[0].pole_warning);
    }

    #[test]
    fn discrete_dc_gain() {
        let sys = DiscreteLti::new(one(0.5), one(1.0), one(1.0), 1.0).unwrap();
        let g = transfer_function(&sys, &frequency_points(sys.domain(), &[0.0]));
        assert_abs_diff_eq!(g[0].value[(0, 0)].re, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn pole_is_flagged() {
        let sys = ContinuousLti::new(one(-1.0), one(1.0), one(1.0)).unwrap();
        let g = transfer_function(&sys, &[C64::new(-1.0, 0.0)]);
        assert!(g[0].pole_warning);
    }

    #[test]
    fn matches_partial_fractions() {
        // A = V diag(λ) V⁻¹ with a known complex-conjugate pair.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let v = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)) + DMatrix::identity(3, 3) * 2.0;
        // Real block form of {-1 ± 2i, -0.5}.
        let d = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, -2.0, -1.0, 0.0, 0.0, 0.0, -0.5]);
        let vinv = v.clone().try_inverse().unwrap();
        let a = &v * &d * &vinv;
        let b = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
        let sys = ContinuousLti::new(a, b.clone(), c.clone()).unwrap();

        // Complex diagonalization of the 2x2 block: [[-1,2],[-2,-1]] has
        // eigenvectors [1, i] and [1, -i] for -1+2i and -1-2i.
        let i = C64::new(0.0, 1.0);
        let o = C64::new(1.0, 0.0);
        let z = C64::new(0.0, 0.0);
        let p = DMatrix::from_row_slice(3, 3, &[o, o, z, i, -i, z, z, z, o]);
        let lam = [C64::new(-1.0, 2.0), C64::new(-1.0, -2.0), C64::new(-0.5, 0.0)];
        let vc = v.map(|x| C64::new(x, 0.0)) * &p;
        let vc_inv = vc.clone().try_inverse().unwrap();
        let cl = c.map(|x| C64::new(x, 0.0)) * &vc;
        let br = &vc_inv * b.map(|x| C64::new(x, 0.0));

        let pts: Vec<C64> = (0..10).map(|k| C64::new(0.1 * k as f64, 0.3 + 0.7 * k as f64)).collect();
        let g = transfer_function(&sys, &pts);
        for (s, resp) in pts.iter().zip(g.iter()) {
            let mut oracle = DMatrix::<C64>::zeros(2, 2);
            for k in 0..3 {
                oracle += cl.column(k) * br.row(k) / (s - lam[k]);
            }
            assert!((&resp.value - oracle).iter().all(|e| e.norm() < 1e-9));
        }
    }

    #[test]
    fn identical_systems_have_zero_error() {
        let sys = ContinuousLti::new(one(-1.0), one(1.0), one(1.0)).unwrap();
        let est = hinf_error_estimate(&sys, &sys, &log_grid(1e-3, 1e3, 50)).unwrap();
        assert_eq!(est.sup_norm, 0.0);
    }

    #[test]
    fn dc_gain_against_zero_rom() {
        let full = ContinuousLti::new(one(-1.0), one(1.0), one(1.0)).unwrap();
        let zero = ContinuousLti::new(one(-1.0), one(0.0), one(0.0)).unwrap();
        let mut grid = vec![0.0];
        grid.extend(log_grid(1e-3, 1e3, 60));
        let est = hinf_error_estimate(&full, &zero, &grid).unwrap();
        assert_abs_diff_eq!(est.sup_norm, 1.0, epsilon = 1e-15);
        assert_eq!(est.argmax_freq, 0.0);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = ContinuousLti::new(one(-1.0), one(1.0), one(1.0)).unwrap();
        let b = ContinuousLti::new(one(-1.0), one(1.0), DMatrix::from_element(2, 1, 1.0)).unwrap();
        assert!(hinf_error_estimate(&a, &b, &[1.0]).is_err());
        let d = DiscreteLti::new(one(0.5), one(1.0), one(1.0), 1.0).unwrap();
        assert!(hinf_error_estimate(&a, &d, &[1.0]).is_err());
    }
}
