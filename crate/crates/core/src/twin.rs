//! Twin trajectories: two runs from nearby data and the growth of their gap
//! `d(t) = ‖u − s‖² + ‖b − y‖²`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::integrator::{make_initial, random_solenoidal, MhdState, Simulation, SolverConfig};
use crate::lemmas::{LemmaReport, LEMMA_TOL};
use crate::nonlinear::DampingSpec;
use crate::par::par_sum;
use crate::spectral::{GridSpec, PhysicalVectorField, SpectralVectorField, Transform, VOLUME};

/// Seed offsets of the two perturbation fields.
const SEED_DELTA_U: u64 = 0x5851_f42d_4c95_7f2d;
const SEED_DELTA_B: u64 = 0x1405_7b7e_f767_814f;

/// Slack of the exponential bound `d ≤ d(0)e^{Ĉt}`.
pub const BOUND_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TwinRunResult {
    pub eps: f64,
    pub times: Vec<f64>,
    pub gap: Vec<f64>,
    /// Smallest rate with `d(t) ≤ d(0)e^{Ĉt}` on the fit window.
    pub c_hat: f64,
    /// Least-squares slope of `log(d/d(0))` against `t` on the fit window.
    pub c_fit: f64,
    pub d0: f64,
    /// Number of leading samples in the fit window.
    pub window_len: usize,
    /// Time of a non-finite state in either run; samples stop at the last common time.
    pub blow_up_at: Option<f64>,
    pub config: SolverConfig,
    pub config_hash: String,
}

/// Unit-`H¹` solenoidal noise drawn from `seed`.
pub fn unit_noise(grid: GridSpec, seed: u64) -> SpectralVectorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut delta = random_solenoidal(grid, &mut rng);
    let norm = delta
        .sobolev_norm(1.0, false)
        .expect("order 1 is a valid Sobolev order");
    if norm > 0.0 {
        delta.scale(1.0 / norm);
    }
    delta
}

/// Hex SHA-256 of the canonical JSON of `config`.
pub fn config_hash(config: &SolverConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `config` and a copy started from `u⁰ + εδ, b⁰ + εδ′`.
pub fn twin_run(config: &SolverConfig, eps: f64) -> Result<TwinRunResult> {
    twin_run_pair(config, config, eps)
}

/// As [`twin_run`] with a separately configured perturbed run; grid, time
/// step, horizon and damping must match.
pub fn twin_run_pair(base: &SolverConfig, partner: &SolverConfig, eps: f64) -> Result<TwinRunResult> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("perturbation scale must be non-negative, got {eps}")));
    }
    base.validate()?;
    partner.validate()?;
    if base.grid != partner.grid {
        return Err(Error::GridMismatch(format!("twin runs use {} and {}", base.grid, partner.grid)));
    }
    if base.dt != partner.dt || base.t_end != partner.t_end || base.ledger_stride != partner.ledger_stride {
        return Err(Error::InvalidConfig("twin runs must share dt, t_end and ledger_stride".into()));
    }
    if base.damping != partner.damping {
        return Err(Error::InvalidConfig("twin runs must share the damping term".into()));
    }
    let grid = base.grid;
    let a0 = make_initial(&base.initial_condition, grid, base.seed)?;
    let mut b0 = a0.clone();
    if eps > 0.0 {
        b0.u.axpy(eps, &unit_noise(grid, base.seed ^ SEED_DELTA_U));
        b0.b.axpy(eps, &unit_noise(grid, base.seed ^ SEED_DELTA_B));
    }
    let mut sa = Simulation::with_initial_state(base.clone(), a0)?;
    let mut sb = Simulation::with_initial_state(partner.clone(), b0)?;

    let mut times = vec![0.0];
    let mut gap = vec![sa.state().distance_sq(sb.state())];
    let mut blow_up_at = None;
    while !sa.is_finished() {
        let (ra, rb) = rayon::join(|| sa.advance(), || sb.advance());
        match (ra, rb) {
            (Ok(()), Ok(())) => {}
            (Err(Error::BlowUp { t, .. }), _) | (_, Err(Error::BlowUp { t, .. })) => {
                tracing::warn!(t, "twin run blew up; truncating at the last common time");
                blow_up_at = Some(t);
                break;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
        let step = sa.steps_taken();
        if step % base.ledger_stride == 0 || sa.is_finished() {
            times.push(sa.state().t);
            gap.push(sa.state().distance_sq(sb.state()));
        }
    }
    let (c_hat, c_fit, window_len) = fit_rate(&times, &gap);
    Ok(TwinRunResult {
        eps,
        d0: gap[0],
        times,
        gap,
        c_hat,
        c_fit,
        window_len,
        blow_up_at,
        config_hash: config_hash(base),
        config: base.clone(),
    })
}

/// Length of the fit window: through the first interior local maximum of
/// `d`, else the whole series.
pub fn fit_window(gap: &[f64]) -> usize {
    (1..gap.len().saturating_sub(1))
        .find(|&i| gap[i] > gap[i - 1] && gap[i] >= gap[i + 1])
        .map_or(gap.len(), |i| i + 1)
}

/// `(Ĉ, least-squares slope, window length)`; rates are 0 when `d(0) = 0`.
pub fn fit_rate(times: &[f64], gap: &[f64]) -> (f64, f64, usize) {
    let w = fit_window(gap);
    let d0 = gap.first().copied().unwrap_or(0.0);
    if d0 <= 0.0 || w < 2 {
        return (0.0, 0.0, w);
    }
    let logs: Vec<(f64, f64)> = (1..w)
        .filter(|&i| times[i] > 0.0)
        .map(|i| (times[i], (gap[i] / d0).ln()))
        .collect();
    let envelope = logs.iter().map(|(t, l)| l / t).fold(f64::NEG_INFINITY, f64::max);
    let (stt, sty) = logs.iter().fold((0.0, 0.0), |(a, b), (t, l)| (a + t * t, b + t * l));
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    (envelope, slope, w)
}

impl TwinRunResult {
    pub fn bound(&self, t: f64) -> f64 {
        self.d0 * (self.c_hat * t).exp()
    }

    /// Worst relative excess `d/bound − 1` over the fit window.
    pub fn worst_excess(&self) -> f64 {
        (0..self.window_len)
            .map(|i| {
                let b = self.bound(self.times[i]);
                if b > 0.0 {
                    self.gap[i] / b - 1.0
                } else if self.gap[i] > 0.0 {
                    f64::INFINITY
                } else {
                    -1.0
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `d(t) ≤ d(0)e^{Ĉt}(1 + 1e−6)` on the fit window.
    pub fn bound_holds(&self) -> bool {
        self.worst_excess() <= BOUND_SLACK
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,d,bound")?;
        for (t, d) in self.times.iter().zip(&self.gap) {
            writeln!(out, "{t:.16e},{d:.16e},{:.16e}", self.bound(*t))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self) -> TwinSummary {
        TwinSummary {
            eps: self.eps,
            c_hat: self.c_hat,
            c_fit: self.c_fit,
            d0: self.d0,
            samples: self.times.len(),
            window_end: self.times.get(self.window_len.saturating_sub(1)).copied().unwrap_or(0.0),
            worst_excess: self.worst_excess(),
            blow_up_at: self.blow_up_at,
            config_hash: self.config_hash.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwinSummary {
    pub eps: f64,
    pub c_hat: f64,
    pub c_fit: f64,
    pub d0: f64,
    pub samples: usize,
    pub window_end: f64,
    pub worst_excess: f64,
    pub blow_up_at: Option<f64>,
    pub config_hash: String,
}

/// Pointwise `⟨F(u) − F(s), u − s⟩` of the damping force `F`.
pub fn damping_contraction_integrand(
    u: &PhysicalVectorField,
    s: &PhysicalVectorField,
    damping: &DampingSpec,
) -> Result<Vec<f64>> {
    u.grid().ensure_same(s.grid())?;
    damping.validate()?;
    Ok((0..u.grid().len())
        .into_par_iter()
        .map(|x| {
            let (a, b) = (u.at(x), s.at(x));
            let (fa, fb) = (damping.force(a), damping.force(b));
            (0..3).map(|i| (fa[i] - fb[i]) * (a[i] - b[i])).sum()
        })
        .collect())
}

/// Quadrature of `∫⟨F(u) − F(s), u − s⟩` over the box.
pub fn damping_contraction_check(u: &PhysicalVectorField, s: &PhysicalVectorField, damping: &DampingSpec) -> Result<f64> {
    let v = damping_contraction_integrand(u, s, damping)?;
    Ok(u.grid().cell_volume() * par_sum(v.len(), |i| v[i]))
}

/// Integral and pointwise forms of the damping monotonicity on `pairs`
/// random solenoidal field pairs, amplitudes log-uniform on `[1e−2, 1e2]`.
///
/// The integral report passes at `−1e−10·(2π)³`, the pointwise one at `−1e−12`.
pub fn check_contraction_fields(grid: GridSpec, damping: &DampingSpec, pairs: usize, seed: u64) -> Result<[LemmaReport; 2]> {
    damping.validate()?;
    let transform = Transform::new(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut integral = Vec::with_capacity(pairs);
    let mut pointwise = Vec::with_capacity(pairs);
    for i in 0..pairs {
        let field = |rng: &mut ChaCha8Rng| -> Result<PhysicalVectorField> {
            let amp = rng.gen_range((1e-2f64).ln()..=(1e2f64).ln()).exp();
            let mut s = random_solenoidal(grid, rng);
            let norm = s.l2_norm_sq().sqrt();
            if norm > 0.0 {
                s.scale(amp / norm * VOLUME.sqrt());
            }
            transform.inverse(&s)
        };
        let u = field(&mut rng)?;
        let s = field(&mut rng)?;
        let v = damping_contraction_integrand(&u, &s, damping)?;
        let (imin, vmin) = v
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (j, x)| if *x < acc.1 { (j, *x) } else { acc });
        integral.push((grid.cell_volume() * par_sum(v.len(), |j| v[j]), vec![i as f64]));
        pointwise.push((vmin, vec![i as f64, imin as f64]));
    }
    let mut a = LemmaReport::from_samples(format!("contraction-integral({damping})"), 1e-10 * VOLUME, integral);
    a.note = format!("N = {}", grid.n_modes());
    let mut b = LemmaReport::from_samples(format!("contraction-pointwise({damping})"), LEMMA_TOL, pointwise);
    b.note = "location: pair, grid index".into();
    Ok([a, b])
}

/// Initial state of the perturbed run, for inspection.
pub fn perturbed_initial(config: &SolverConfig, eps: f64) -> Result<MhdState> {
    let mut s = make_initial(&config.initial_condition, config.grid, config.seed)?;
    s.u.axpy(eps, &unit_noise(config.grid, config.seed ^ SEED_DELTA_U));
    s.b.axpy(eps, &unit_noise(config.grid, config.seed ^ SEED_DELTA_B));
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::InitialCondition;
    use crate::nonlinear::DampingFn;
    use crate::spectral::Transform;

    fn config(n: usize, damping: DampingSpec) -> SolverConfig {
        let mut c = SolverConfig::new(
            GridSpec::new(n).unwrap(),
            damping,
            0.01,
            0.1,
            InitialCondition::RandomDivfree { target_h1: 0.5 },
        );
        c.seed = 3;
        c
    }

    #[test]
    fn window_rule() {
        assert_eq!(fit_window(&[1.0, 0.5, 0.2]), 3);
        assert_eq!(fit_window(&[1.0, 2.0, 3.0, 2.5, 4.0]), 3);
        assert_eq!(fit_window(&[1.0, 2.0, 2.0, 1.0]), 2);
        assert_eq!(fit_window(&[1.0]), 1);
    }

    #[test]
    fn envelope_covers_convex_decay() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.02).collect();
        let d: Vec<f64> = t.iter().map(|t| (-10.0 * t).exp() + (-t).exp()).collect();
        let (c, ls, w) = fit_rate(&t, &d);
        assert_eq!(w, t.len());
        assert!(c > ls);
        for (ti, di) in t.iter().zip(&d) {
            assert!(*di <= d[0] * (c * ti).exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_perturbation_is_bitwise_identical() {
        let r = twin_run(&config(8, DampingSpec::Power { alpha: 1.0, beta: 4.0 }), 0.0).unwrap();
        assert!(r.gap.iter().all(|d| *d == 0.0));
        assert_eq!(r.c_hat, 0.0);
        assert!(r.bound_holds());
        assert_eq!(r.times.len(), 11);
    }

    #[test]
    fn small_perturbation_bound() {
        let r = twin_run(&config(8, DampingSpec::Generalized { alpha: 1.0, f: DampingFn::Log1 }), 1e-6).unwrap();
        assert!((r.d0 > 0.0) && r.c_hat.is_finite());
        assert!(r.bound_holds(), "{:?}", r.summary());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 12);
    }

    #[test]
    fn mismatched_pairs_rejected() {
        let a = config(8, DampingSpec::None);
        let mut b = a.clone();
        b.grid = GridSpec::new(16).unwrap();
        assert!(matches!(twin_run_pair(&a, &b, 1e-6), Err(Error::GridMismatch(_))));
        let mut b = a.clone();
        b.dt = 0.005;
        assert!(twin_run_pair(&a, &b, 1e-6).is_err());
        let mut b = a.clone();
        b.damping = DampingSpec::Power { alpha: 1.0, beta: 4.0 };
        assert!(twin_run_pair(&a, &b, 1e-6).is_err());
        assert!(twin_run(&a, -1.0).is_err());
    }

    #[test]
    fn contraction_edge_cases() {
        let g = GridSpec::new(8).unwrap();
        let t = Transform::new(g);
        let u = t.inverse(&unit_noise(g, 1).scaled(5.0)).unwrap();
        let zero = PhysicalVectorField::zeros(g);
        let d = DampingSpec::Generalized { alpha: 0.5, f: DampingFn::Log2 };
        assert_eq!(damping_contraction_check(&u, &u, &d).unwrap(), 0.0);
        let with_zero = damping_contraction_check(&u, &zero, &d).unwrap();
        let direct: f64 = (0..g.len())
            .map(|x| {
                let v = u.at(x);
                let s = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                0.5 * DampingFn::Log2.value(s) * s * s
            })
            .sum::<f64>()
            * g.cell_volume();
        assert!((with_zero - direct).abs() <= 1e-12 * direct);
        let other = GridSpec::new(16).unwrap();
        assert!(damping_contraction_check(&u, &PhysicalVectorField::zeros(other), &d).is_err());
    }

    #[test]
    fn contraction_on_random_fields() {
        let g = GridSpec::new(8).unwrap();
        let d = DampingSpec::Power { alpha: 2.0, beta: 3.5 };
        let [a, b] = check_contraction_fields(g, &d, 5, 1).unwrap();
        assert!(a.passed() && b.passed(), "{a}\n{b}");
        assert_eq!(a.samples, 5);
        assert!(a.worst_margin > 0.0);
    }

    #[test]
    fn hash_is_stable() {
        let c = config(8, DampingSpec::None);
        assert_eq!(config_hash(&c), config_hash(&c.clone()));
        assert_eq!(config_hash(&c).len(), 64);
        let mut d = c.clone();
        d.seed += 1;
        assert_ne!(config_hash(&c), config_hash(&d));
    }
}
