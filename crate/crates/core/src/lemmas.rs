//! Pointwise and scalar inequalities behind the energy estimates, checked on
//! sample grids independently of the solver.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::energy::Verdict;
use crate::error::{Error, Result};
use crate::nonlinear::DampingFn;

/// Default slack of a [`LemmaReport`].
pub const LEMMA_TOL: f64 = 1e-12;
/// Bound on `|margin(x*)|` for the interpolation inequality.
pub const SHARPNESS_TOL: f64 = 1e-10;

/// Outcome of one sampled inequality.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaReport {
    pub id: String,
    pub samples: usize,
    /// `min(rhs − lhs)` over the samples.
    pub worst_margin: f64,
    /// Sample coordinates of the worst margin.
    pub worst_location: Vec<f64>,
    pub verdict: Verdict,
    pub tolerance: f64,
    pub note: String,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn not_applicable(id: impl Into<String>, note: impl Into<String>) -> Self {
        LemmaReport {
            id: id.into(),
            samples: 0,
            worst_margin: f64::NAN,
            worst_location: Vec::new(),
            verdict: Verdict::NotApplicable,
            tolerance: LEMMA_TOL,
            note: note.into(),
        }
    }

    pub fn from_samples(id: impl Into<String>, tolerance: f64, margins: impl IntoParallelIterator<Item = (f64, Vec<f64>)>) -> Self {
        let (samples, worst_margin, worst_location) = margins
            .into_par_iter()
            .map(|(m, loc)| (1usize, m, loc))
            .reduce(
                || (0, f64::INFINITY, Vec::new()),
                |a, b| {
                    let n = a.0 + b.0;
                    // NaN margins dominate so they surface as failures
                    if b.1 < a.1 || b.1.is_nan() && !a.1.is_nan() {
                        (n, b.1, b.2)
                    } else {
                        (n, a.1, a.2)
                    }
                },
            );
        let verdict = if worst_margin >= -tolerance { Verdict::Pass } else { Verdict::Fail };
        LemmaReport {
            id: id.into(),
            samples,
            worst_margin,
            worst_location,
            verdict,
            tolerance,
            note: String::new(),
        }
    }

    pub const CSV_HEADER: &'static str = "lemma,verdict,samples,worst_margin,worst_location,tolerance,note";

    pub fn csv_row(&self) -> String {
        let loc: Vec<String> = self.worst_location.iter().map(|v| format!("{v:.16e}")).collect();
        format!(
            "{},{},{},{:.16e},{},{:.3e},{}",
            self.id,
            self.verdict,
            self.samples,
            self.worst_margin,
            loc.join(";"),
            self.tolerance,
            self.note.replace(',', ";")
        )
    }
}

impl fmt::Display for LemmaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<28} {:<15}", self.id, self.verdict.to_string())?;
        if self.verdict != Verdict::NotApplicable {
            write!(f, " {} samples, worst margin {:.6e} at {:?}", self.samples, self.worst_margin, self.worst_location)?;
        }
        if !self.note.is_empty() {
            write!(f, "  [{}]", self.note)?;
        }
        Ok(())
    }
}

fn check_alpha_beta(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if !(beta > 3.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("interpolation constant needs beta > 3, got {beta}")));
    }
    Ok(())
}

/// `c_{α,β} = ½ (β−3)/(β−1) · (α(β−1)/2)^{−2/(β−3)}`, the constant with
/// `x² ≤ 2c_{α,β} + αx^{β−1}` for all `x ≥ 0`.
pub fn c_alpha_beta(alpha: f64, beta: f64) -> Result<f64> {
    check_alpha_beta(alpha, beta)?;
    Ok(0.5 * (beta - 3.0) / (beta - 1.0) * (0.5 * alpha * (beta - 1.0)).powf(-2.0 / (beta - 3.0)))
}

/// Unique positive minimizer of `2c + αx^{β−1} − x²`.
pub fn interpolation_minimizer(alpha: f64, beta: f64) -> Result<f64> {
    check_alpha_beta(alpha, beta)?;
    Ok((2.0 / (alpha * (beta - 1.0))).powf(1.0 / (beta - 3.0)))
}

pub fn interpolation_margin(alpha: f64, beta: f64, c: f64, x: f64) -> f64 {
    2.0 * c + alpha * x.powf(beta - 1.0) - x * x
}

/// Margins `2c + αx^{β−1} − x²` on `x_grid` and at the minimizer; PASS iff
/// every margin is `≥ −1e−12` and `|margin(x*)| ≤ 1e−10`.
pub fn check_interpolation(alpha: f64, beta: f64, x_grid: &[f64]) -> Result<LemmaReport> {
    let c = c_alpha_beta(alpha, beta)?;
    let x_star = interpolation_minimizer(alpha, beta)?;
    if let Some(x) = x_grid.iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::InvalidParameter(format!("sample point {x} is outside [0, inf)")));
    }
    let mut rep = LemmaReport::from_samples(
        format!("interp(a={alpha},b={beta})"),
        LEMMA_TOL,
        x_grid
            .par_iter()
            .chain([x_star].par_iter())
            .map(|&x| (interpolation_margin(alpha, beta, c, x), vec![x])),
    );
    let sharp = interpolation_margin(alpha, beta, c, x_star);
    rep.note = format!("c = {c:.12e}, x* = {x_star:.12e}, margin(x*) = {sharp:.3e}");
    if sharp.abs() > SHARPNESS_TOL {
        rep.verdict = Verdict::Fail;
        rep.note.push_str(", not sharp");
    }
    Ok(rep)
}

/// `n` equispaced points covering `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn phi(f: DampingFn, v: [f64; 3]) -> (f64, f64) {
    let s = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    (f.value(s) * s, s)
}

/// `⟨f(|x|²)|x|²x − f(|y|²)|y|²y, x − y⟩`.
pub fn monotonicity_gap(x: [f64; 3], y: [f64; 3], f: DampingFn) -> f64 {
    let (px, _) = phi(f, x);
    let (py, _) = phi(f, y);
    (0..3).map(|i| (px * x[i] - py * y[i]) * (x[i] - y[i])).sum()
}

/// The same gap as `½(φ(x) + φ(y))|x − y|² + ½(φ(x) − φ(y))(|x|² − |y|²)`
/// with `φ(v) = f(|v|²)|v|²`; both terms are nonnegative for increasing `f`.
pub fn monotonicity_gap_split(x: [f64; 3], y: [f64; 3], f: DampingFn) -> (f64, f64) {
    let (px, sx) = phi(f, x);
    let (py, sy) = phi(f, y);
    let d2: f64 = (0..3).map(|i| (x[i] - y[i]).powi(2)).sum();
    (0.5 * (px + py) * d2, 0.5 * (px - py) * (sx - sy))
}

/// Monotonicity gap over sampled pairs.
pub fn check_monotonicity(f: DampingFn, pairs: &[([f64; 3], [f64; 3])]) -> LemmaReport {
    LemmaReport::from_samples(
        format!("monotone({f})"),
        LEMMA_TOL,
        pairs.par_iter().map(|(x, y)| {
            (monotonicity_gap(*x, *y, f), x.iter().chain(y.iter()).copied().collect())
        }),
    )
}

/// Random vector pairs with isotropic directions and magnitudes log-uniform
/// on `[lo, hi]`, drawn independently for both members.
pub fn random_pairs(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<([f64; 3], [f64; 3])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ll, lh) = (lo.ln(), hi.ln());
    let draw = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        let dir: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        let mag = rng.gen_range(ll..=lh).exp();
        dir.map(|c| c * mag / norm)
    };
    (0..n).map(|_| (draw(&mut rng), draw(&mut rng))).collect()
}

/// Trapezoidal running integral, starting at 0.
pub fn cumulative_trapezoid(t: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    let mut acc = 0.0;
    for i in 0..t.len() {
        if i > 0 {
            acc += 0.5 * (t[i] - t[i - 1]) * (v[i] + v[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// Sampled Grönwall lemma: if `f(t) + ∫g ≤ A + ∫hf` at every sample, then
/// `f(t) + ∫g ≤ A exp(∫h)`. Integrals are trapezoidal over the samples.
///
/// Margins are relative, `(rhs − lhs)/max(rhs, tiny)`. A sample series that
/// violates the hypothesis beyond `tolerance` is NOT-APPLICABLE.
pub fn gronwall_check(t: &[f64], f: &[f64], g: &[f64], h: &[f64], a: f64, tolerance: f64) -> LemmaReport {
    const ID: &str = "gronwall";
    let n = t.len();
    if n == 0 || f.len() != n || g.len() != n || h.len() != n {
        return LemmaReport::not_applicable(ID, "series lengths differ or are empty");
    }
    let rel = |lhs: f64, rhs: f64| (rhs - lhs) / rhs.abs().max(f64::MIN_POSITIVE);
    let int_g = cumulative_trapezoid(t, g);
    let hf: Vec<f64> = h.iter().zip(f).map(|(h, f)| h * f).collect();
    let int_hf = cumulative_trapezoid(t, &hf);
    let int_h = cumulative_trapezoid(t, h);
    let hyp = (0..n)
        .map(|i| (rel(f[i] + int_g[i], a + int_hf[i]), t[i]))
        .fold((f64::INFINITY, f64::NAN), |acc, x| if x.0 < acc.0 { x } else { acc });
    if hyp.0 < -tolerance {
        return LemmaReport::not_applicable(ID, format!("hypothesis fails at t = {:.6} (margin {:.3e})", hyp.1, hyp.0));
    }
    let mut rep = LemmaReport::from_samples(
        ID,
        tolerance,
        (0..n).into_par_iter().map(|i| (rel(f[i] + int_g[i], a * int_h[i].exp()), vec![t[i]])),
    );
    rep.note = format!("hypothesis margin {:.3e}", hyp.0);
    rep
}

/// Tightest constants of the growth window `a z² ≤ f(z) ≤ b z^{β−1}` over a
/// sampled range `z ≥ 1`, with the ranges where each ratio runs off.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthWindowReport {
    pub f: DampingFn,
    pub beta: f64,
    pub samples: usize,
    /// `min f(z)/z²` and where it is attained.
    pub lower_const: f64,
    pub lower_at: f64,
    /// `max f(z)/z^{β−1}` and where it is attained.
    pub upper_const: f64,
    pub upper_at: f64,
    /// Sub-range `[z₀, z_max]` on which `f(z)/z²` decreases to the end of the
    /// sample, so no positive lower constant survives `z → ∞`.
    pub lower_fails_from: Option<f64>,
    /// Sub-range on which `f(z)/z^{β−1}` increases to the end of the sample.
    pub upper_fails_from: Option<f64>,
}

/// Descriptive report on the growth window; see [`GrowthWindowReport`].
pub fn growth_window_report(f: DampingFn, beta: f64, z_grid: &[f64]) -> Result<GrowthWindowReport> {
    if z_grid.len() < 2 || z_grid.iter().any(|z| !(*z >= 1.0) || !z.is_finite()) {
        return Err(Error::InvalidParameter("growth-window grid needs at least two points in [1, inf)".into()));
    }
    let mut z: Vec<f64> = z_grid.to_vec();
    z.sort_by(f64::total_cmp);
    let lower: Vec<f64> = z.iter().map(|&z| f.value(z) / (z * z)).collect();
    let upper: Vec<f64> = z.iter().map(|&z| f.value(z) / z.powf(beta - 1.0)).collect();
    let arg = |v: &[f64], better: fn(f64, f64) -> bool| {
        (0..v.len()).fold(0, |best, i| if better(v[i], v[best]) { i } else { best })
    };
    let il = arg(&lower, |a, b| a < b);
    let iu = arg(&upper, |a, b| a > b);
    // start of the final strictly monotone run heading the wrong way
    let tail = |v: &[f64], bad: fn(f64, f64) -> bool| -> Option<f64> {
        let last = v.len() - 1;
        if !bad(v[last], v[last - 1]) {
            return None;
        }
        let mut i = last;
        while i > 0 && bad(v[i], v[i - 1]) {
            i -= 1;
        }
        Some(z[i])
    };
    Ok(GrowthWindowReport {
        f,
        beta,
        samples: z.len(),
        lower_const: lower[il],
        lower_at: z[il],
        upper_const: upper[iu],
        upper_at: z[iu],
        lower_fails_from: tail(&lower, |a, b| a < b),
        upper_fails_from: tail(&upper, |a, b| a > b),
    })
}

impl GrowthWindowReport {
    pub const CSV_HEADER: &'static str =
        "f,beta,samples,lower_const,lower_at,upper_const,upper_at,lower_fails_from,upper_fails_from";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.16e}"));
        format!(
            "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            self.f,
            self.beta,
            self.samples,
            self.lower_const,
            self.lower_at,
            self.upper_const,
            self.upper_at,
            opt(self.lower_fails_from),
            opt(self.upper_fails_from)
        )
    }
}

impl fmt::Display for GrowthWindowReport {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            fm,
            "growth window f={} beta={}: min f/z^2 = {:.3e} at z = {:.3e}; max f/z^(beta-1) = {:.3e} at z = {:.3e}",
            self.f, self.beta, self.lower_const, self.lower_at, self.upper_const, self.upper_at
        )?;
        match self.lower_fails_from {
            Some(z) => write!(fm, "; lower bound degenerates on [{z:.3e}, inf)")?,
            None => write!(fm, "; lower bound holds on the sample")?,
        }
        match self.upper_fails_from {
            Some(z) => write!(fm, "; upper bound degenerates on [{z:.3e}, inf)"),
            None => write!(fm, "; upper bound holds on the sample"),
        }
    }
}
