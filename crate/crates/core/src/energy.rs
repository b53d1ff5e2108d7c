//! Energy ledger and the `L²`/`H¹` inequality checks along discrete trajectories.
//!
//! Every row stores instantaneous norms and damping dissipation functionals,
//! together with their running time integrals (trapezoidal rule over ledger
//! rows). The integrator additionally supplies `int_visc_rk` and
//! `int_damp_rk`, the viscous and damping energy losses integrated with the
//! RK4 stage weights; the `L²` balance uses those, since they are consistent
//! with the time stepper to fourth order.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrator::MhdState;
use crate::lemmas::{c_alpha_beta, gronwall_check, LemmaReport};
use crate::nonlinear::{power_weight, DampingFn, DampingSpec};
use crate::par::par_sum_n;
use crate::spectral::{SpectralVectorField, Transform, VOLUME};

macro_rules! ledger_columns {
    (
        instant { $($inst:ident),* $(,)? }
        integrated { $($int:ident <- $src:ident),* $(,)? }
        supplied { $($sup:ident),* $(,)? }
    ) => {
        /// One sampled time of a trajectory.
        #[derive(Clone, Debug, Default, PartialEq)]
        pub struct LedgerRow {
            pub step: u64,
            pub t: f64,
            $(pub $inst: f64,)*
            $(pub $int: f64,)*
            $(pub $sup: f64,)*
        }

        impl LedgerRow {
            /// Column names in CSV order.
            pub const COLUMNS: &'static [&'static str] = &[
                "step", "t", $(stringify!($inst),)* $(stringify!($int),)* $(stringify!($sup),)*
            ];

            fn float_values(&self) -> Vec<f64> {
                vec![self.t, $(self.$inst,)* $(self.$int,)* $(self.$sup,)*]
            }

            fn from_float_values(step: u64, v: &[f64]) -> Self {
                let mut it = v.iter().copied();
                LedgerRow {
                    step,
                    t: it.next().unwrap(),
                    $($inst: it.next().unwrap(),)*
                    $($int: it.next().unwrap(),)*
                    $($sup: it.next().unwrap(),)*
                }
            }

            /// Trapezoidal update of every running integral from `prev`.
            fn integrate_from(&mut self, prev: &LedgerRow) {
                let dt = self.t - prev.t;
                $(self.$int = prev.$int + 0.5 * dt * (prev.$src + self.$src);)*
            }
        }
    };
}

ledger_columns! {
    instant {
        l2_sq, h1dot_sq, h2dot_sq, nu_h1dot_sq,
        lbeta, d_beta_grad, d_beta_sq,
        d_f4, d_fprime, d_fprime_lit, d_f_gradsq, d_f_grad,
    }
    integrated {
        int_h1dot_sq <- h1dot_sq,
        int_nu_h1dot_sq <- nu_h1dot_sq,
        int_h2dot_sq <- h2dot_sq,
        int_lbeta <- lbeta,
        int_d_beta_grad <- d_beta_grad,
        int_d_beta_sq <- d_beta_sq,
        int_d_f4 <- d_f4,
        int_d_fprime <- d_fprime,
        int_d_fprime_lit <- d_fprime_lit,
        int_d_f_gradsq <- d_f_gradsq,
        int_d_f_grad <- d_f_grad,
    }
    supplied { int_visc_rk, int_damp_rk }
}

/// Time series of [`LedgerRow`]s.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ledger {
    rows: Vec<LedgerRow>,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger::default()
    }

    /// Appends a row, filling its trapezoidal integrals from the previous row.
    pub fn push(&mut self, mut row: LedgerRow) {
        if let Some(prev) = self.rows.last() {
            row.integrate_from(prev);
        }
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[LedgerRow] {
        &self.rows
    }

    pub fn first(&self) -> Option<&LedgerRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&LedgerRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", LedgerRow::COLUMNS.join(","))?;
        for row in &self.rows {
            write!(out, "{}", row.step)?;
            for v in row.float_values() {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Parses the CSV written by [`Ledger::write_csv`]; stored integrals are kept.
    pub fn read_csv<R: BufRead>(input: R) -> std::result::Result<Self, String> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or("empty ledger")?
            .map_err(|e| e.to_string())?;
        if header.trim() != LedgerRow::COLUMNS.join(",") {
            return Err("unexpected ledger header".into());
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let step = fields
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| format!("line {}: bad step", n + 2))?;
            let values = fields
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| format!("line {}: {e}", n + 2))?;
            if values.len() + 1 != LedgerRow::COLUMNS.len() {
                return Err(format!("line {}: expected {} columns", n + 2, LedgerRow::COLUMNS.len()));
            }
            rows.push(LedgerRow::from_float_values(step, &values));
        }
        Ok(Ledger { rows })
    }
}

/// Pointwise dissipation integrands of `u`, integrated by collocation quadrature.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DampingIntegrals {
    /// `‖u‖^{β+1}_{L^{β+1}}`
    pub lbeta: f64,
    /// `‖|u|^{β−1}|∇u|²‖_{L¹}`
    pub d_beta_grad: f64,
    /// `‖|u|^{β−3}|∇|u|²|²‖_{L¹}`
    pub d_beta_sq: f64,
    /// `‖f(|u|²)|u|⁴‖_{L¹}`
    pub d_f4: f64,
    /// `‖f′(|u|²)|u|²|∇|u|²|²‖_{L¹}`
    pub d_fprime: f64,
    /// `‖f′(|u|²)|∇|u|²|²‖_{L¹}`
    pub d_fprime_lit: f64,
    /// `‖f(|u|²)|∇|u|²|²‖_{L¹}`
    pub d_f_gradsq: f64,
    /// `‖f(|u|²)|u|²|∇u|²‖_{L¹}`
    pub d_f_grad: f64,
}

/// Evaluates the damping integrands of `u` on the collocation grid.
///
/// `∇u` is differentiated spectrally and `∇|u|² = 2 u_i ∇u_i` is formed
/// pointwise, which is exact at the collocation points.
pub fn damping_integrals(transform: &Transform, u: &SpectralVectorField, damping: &DampingSpec) -> DampingIntegrals {
    let (beta, f): (Option<f64>, Option<DampingFn>) = match *damping {
        DampingSpec::None => return DampingIntegrals::default(),
        DampingSpec::Power { beta, .. } => (Some(beta), None),
        DampingSpec::Generalized { f, .. } => (None, Some(f)),
    };
    let g = *transform.grid();
    let grad = u.gradient();
    let mut specs: Vec<&[num_complex::Complex64]> = (0..3).map(|a| u.component(a)).collect();
    for i in 0..3 {
        for j in 0..3 {
            specs.push(grad.entry(i, j));
        }
    }
    let phys = transform.inverse_reals(&specs);
    let sums = par_sum_n::<8>(g.len(), |x| {
        let v = [phys[0][x], phys[1][x], phys[2][x]];
        let s = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let mut grad_u_sq = 0.0;
        let mut grad_s = [0.0; 3];
        for i in 0..3 {
            for (j, gs) in grad_s.iter_mut().enumerate() {
                let d = phys[3 + 3 * i + j][x];
                grad_u_sq += d * d;
                *gs += 2.0 * v[i] * d;
            }
        }
        let grad_s_sq = grad_s[0] * grad_s[0] + grad_s[1] * grad_s[1] + grad_s[2] * grad_s[2];
        let mut out = [0.0; 8];
        if let Some(beta) = beta {
            let w = power_weight(s, beta);
            out[0] = w * s;
            out[1] = w * grad_u_sq;
            out[2] = if s == 0.0 { 0.0 } else { s.powf(0.5 * (beta - 3.0)) * grad_s_sq };
        }
        if let Some(f) = f {
            let (fv, fd) = (f.value(s), f.derivative(s));
            out[3] = fv * s * s;
            out[4] = fd * s * grad_s_sq;
            out[5] = fd * grad_s_sq;
            out[6] = fv * grad_s_sq;
            out[7] = fv * s * grad_u_sq;
        }
        out
    });
    let w = g.cell_volume();
    DampingIntegrals {
        lbeta: w * sums[0],
        d_beta_grad: w * sums[1],
        d_beta_sq: w * sums[2],
        d_f4: w * sums[3],
        d_fprime: w * sums[4],
        d_fprime_lit: w * sums[5],
        d_f_gradsq: w * sums[6],
        d_f_grad: w * sums[7],
    }
}

/// Instantaneous diagnostics of `state`; running integrals are left at zero.
pub fn ledger_row(transform: &Transform, state: &MhdState, damping: &DampingSpec, nu_h: f64, nu_v: f64) -> LedgerRow {
    let d = damping_integrals(transform, &state.u, damping);
    LedgerRow {
        t: state.t,
        l2_sq: state.l2_norm_sq(),
        h1dot_sq: state.u.h1dot_norm_sq() + state.b.h1dot_norm_sq(),
        h2dot_sq: state.u.h2dot_norm_sq() + state.b.h2dot_norm_sq(),
        nu_h1dot_sq: state.viscous_dissipation(nu_h, nu_v),
        lbeta: d.lbeta,
        d_beta_grad: d.d_beta_grad,
        d_beta_sq: d.d_beta_sq,
        d_f4: d.d_f4,
        d_fprime: d.d_fprime,
        d_fprime_lit: d.d_fprime_lit,
        d_f_gradsq: d.d_f_gradsq,
        d_f_grad: d.d_f_grad,
        ..LedgerRow::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

impl Verdict {
    pub fn is_ok(self) -> bool {
        !matches!(self, Verdict::Fail)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::NotApplicable => "NOT-APPLICABLE",
        })
    }
}

/// `rhs − lhs` at one ledger time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Margin {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

/// Outcome of one inequality check over a ledger.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub verdict: Verdict,
    pub worst_margin: f64,
    pub worst_t: f64,
    pub threshold: f64,
    pub profile: Vec<Margin>,
    pub note: String,
    /// Reported but excluded from overall pass/fail decisions.
    pub informational: bool,
}

impl CheckReport {
    /// FAIL on a check that counts toward the overall verdict.
    pub fn is_failure(&self) -> bool {
        self.verdict == Verdict::Fail && !self.informational
    }

    fn not_applicable(name: &str, note: impl Into<String>) -> Self {
        CheckReport {
            name: name.to_string(),
            verdict: Verdict::NotApplicable,
            worst_margin: f64::NAN,
            worst_t: f64::NAN,
            threshold: f64::NAN,
            profile: Vec::new(),
            note: note.into(),
            informational: false,
        }
    }

    fn from_profile(name: &str, profile: Vec<Margin>, threshold: f64, note: impl Into<String>) -> Self {
        let (worst_margin, worst_t) = profile
            .iter()
            .fold((f64::INFINITY, f64::NAN), |(m, t), p| {
                if p.margin < m || p.margin.is_nan() {
                    (p.margin, p.t)
                } else {
                    (m, t)
                }
            });
        let verdict = if worst_margin >= threshold { Verdict::Pass } else { Verdict::Fail };
        CheckReport {
            name: name.to_string(),
            verdict,
            worst_margin,
            worst_t,
            threshold,
            profile,
            note: note.into(),
            informational: false,
        }
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<24} {:<15}", self.name, self.verdict.to_string())?;
        if self.verdict != Verdict::NotApplicable {
            write!(
                f,
                " worst margin {:.6e} at t = {:.6} (threshold {:.3e})",
                self.worst_margin, self.worst_t, self.threshold
            )?;
        }
        if !self.note.is_empty() {
            write!(f, "  [{}]", self.note)?;
        }
        if self.informational {
            write!(f, " (informational)")?;
        }
        Ok(())
    }
}

/// Default per-step slack of the `L²` balance.
pub const L2_TOL_STEP: f64 = 1e-9;

/// `L²` energy inequality: `residual(t) = ‖w⁰‖² − ‖w(t)‖² − 2∫ν‖∇w‖² − 2∫⟨F(u), u⟩`,
/// PASS iff `min residual ≥ −tol_step · steps`.
pub fn check_l2_inequality(ledger: &Ledger, tol_step: f64) -> CheckReport {
    const NAME: &str = "L2-energy";
    let Some(first) = ledger.first() else {
        return CheckReport::not_applicable(NAME, "empty ledger");
    };
    let steps = ledger.last().map_or(0, |r| r.step);
    let profile = ledger
        .rows()
        .iter()
        .map(|r| {
            let lhs = r.l2_sq + r.int_visc_rk + r.int_damp_rk;
            Margin {
                t: r.t,
                lhs,
                rhs: first.l2_sq,
                margin: first.l2_sq - lhs,
            }
        })
        .collect();
    CheckReport::from_profile(NAME, profile, -tol_step * steps as f64, "")
}

/// Grönwall rate `a_α = f⁻¹(1/(2α))`, or 0 when `1/(2α) ≤ f(0)` and the
/// damping dominates everywhere.
pub fn a_alpha(alpha: f64, f: DampingFn) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let level = 1.0 / (2.0 * alpha);
    Ok(match f.inverse(level) {
        Some(z) if level > f.at_zero() => z,
        _ => 0.0,
    })
}

/// Left-hand sides of the `H¹` bounds at one row.
fn h1_lhs(row: &LedgerRow, damping: &DampingSpec, literal_fprime: bool) -> f64 {
    let base = row.h1dot_sq + row.int_h2dot_sq;
    match *damping {
        DampingSpec::None => base,
        DampingSpec::Power { alpha, beta } => {
            base + alpha * 0.5 * (beta - 1.0) * row.int_d_beta_sq + alpha * row.int_d_beta_grad
        }
        DampingSpec::Generalized { alpha, .. } => {
            let fprime = if literal_fprime { row.int_d_fprime_lit } else { row.int_d_fprime };
            base + alpha * fprime + alpha * row.int_d_f_gradsq + 2.0 * alpha * row.int_d_f_grad
        }
    }
}

/// The `H¹` bounds for a completed run: additive and exponential forms.
///
/// Power damping (needs `β > 3`):
/// `‖∇w‖² + ∫‖Δw‖² + α(β−1)/2 ∫‖|u|^{β−3}|∇|u|²|²‖ + α∫‖|u|^{β−1}|∇u|²‖`
/// is bounded by `‖∇w⁰‖² + c_{α,β}‖w⁰‖²` and by `‖∇w⁰‖² e^{2c_{α,β}t}`.
///
/// Generalized damping: `‖∇w‖² + ∫‖Δw‖² + α∫‖f′(|u|²)|u|²|∇|u|²|²‖ +
/// α∫‖f(|u|²)|∇|u|²|²‖ + 2α∫‖f(|u|²)|u|²|∇u|²‖` is bounded by
/// `‖∇w⁰‖² + a_α‖w⁰‖²` and by `‖∇w⁰‖² e^{a_α t}`. A third report evaluates the
/// exponential form with the weight `f′(|u|²)` in place of `f′(|u|²)|u|²`.
///
/// The constants assume unit viscosity; other viscosities are NOT-APPLICABLE.
pub fn check_h1_inequalities(ledger: &Ledger, damping: &DampingSpec, nu_h: f64, nu_v: f64) -> Vec<CheckReport> {
    let names = ("H1-additive", "H1-exponential");
    if nu_h != 1.0 || nu_v != 1.0 {
        let note = "constants are stated for unit viscosity";
        return vec![CheckReport::not_applicable(names.0, note), CheckReport::not_applicable(names.1, note)];
    }
    let Some(first) = ledger.first() else {
        return vec![
            CheckReport::not_applicable(names.0, "empty ledger"),
            CheckReport::not_applicable(names.1, "empty ledger"),
        ];
    };
    let (additive_const, rate, note) = match *damping {
        DampingSpec::None => {
            let note = "no damping term, so no interpolation constant";
            return vec![CheckReport::not_applicable(names.0, note), CheckReport::not_applicable(names.1, note)];
        }
        DampingSpec::Power { alpha, beta } => match c_alpha_beta(alpha, beta) {
            Ok(c) => (c, 2.0 * c, format!("c = {c:.6e}")),
            Err(_) => {
                let note = format!("beta = {beta} <= 3: interpolation constant undefined");
                return vec![CheckReport::not_applicable(names.0, &note), CheckReport::not_applicable(names.1, note)];
            }
        },
        DampingSpec::Generalized { alpha, f } => {
            let a = a_alpha(alpha, f).expect("validated alpha");
            (a, a, format!("a_alpha = {a:.6e}"))
        }
    };
    let profile = |literal: bool, exponential: bool| -> Vec<Margin> {
        ledger
            .rows()
            .iter()
            .map(|r| {
                let lhs = h1_lhs(r, damping, literal);
                let rhs = if exponential {
                    first.h1dot_sq * (rate * r.t).exp()
                } else {
                    first.h1dot_sq + additive_const * first.l2_sq
                };
                Margin { t: r.t, lhs, rhs, margin: rhs - lhs }
            })
            .collect()
    };
    let mut reports = vec![
        CheckReport::from_profile(names.0, profile(false, false), 0.0, note.clone()),
        CheckReport::from_profile(names.1, profile(false, true), 0.0, note.clone()),
    ];
    if matches!(damping, DampingSpec::Generalized { .. }) {
        let mut literal = CheckReport::from_profile(
            "H1-exponential-literal",
            profile(true, true),
            0.0,
            format!("{note}; weight f'(|u|^2) without |u|^2"),
        );
        literal.informational = true;
        reports.push(literal);
    }
    reports
}

/// Grönwall self-check on ledger data: `f = ‖∇w‖²`, `g` = the dissipation
/// integrands of the exponential `H¹` bound, `h` = its rate, `A = ‖∇w⁰‖²`.
pub fn gronwall_from_ledger(ledger: &Ledger, damping: &DampingSpec) -> Option<LemmaReport> {
    let rate = match *damping {
        DampingSpec::Power { alpha, beta } => 2.0 * c_alpha_beta(alpha, beta).ok()?,
        DampingSpec::Generalized { alpha, f } => a_alpha(alpha, f).ok()?,
        DampingSpec::None => return None,
    };
    let rows = ledger.rows();
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let f: Vec<f64> = rows.iter().map(|r| r.h1dot_sq).collect();
    let g: Vec<f64> = rows
        .iter()
        .map(|r| {
            match *damping {
                DampingSpec::Power { alpha, beta } => {
                    r.h2dot_sq + alpha * 0.5 * (beta - 1.0) * r.d_beta_sq + alpha * r.d_beta_grad
                }
                DampingSpec::Generalized { alpha, .. } => {
                    r.h2dot_sq + alpha * r.d_fprime + alpha * r.d_f_gradsq + 2.0 * alpha * r.d_f_grad
                }
                DampingSpec::None => unreachable!(),
            }
        })
        .collect();
    let h = vec![rate; rows.len()];
    Some(gronwall_check(&t, &f, &g, &h, f.first().copied().unwrap_or(0.0), 1e-9))
}

/// Both sides of the integrated damping identity
/// `∫∇F(u):∇u = (dissipation decomposition)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_error: f64,
    pub verdict: Verdict,
}

/// Tolerance of [`check_damping_identity`].
pub const IDENTITY_TOL: f64 = 1e-6;

/// Checks `∫∇(|u|^{β−1}u):∇u = ‖|u|^{β−1}|∇u|²‖ + (β−1)/4 ‖|u|^{β−3}|∇|u|²|²‖`
/// (power damping, `β ≥ 3`) or
/// `∫∇(f(|u|²)|u|²u):∇u = ‖f|u|²|∇u|²‖ + ½‖(f′(|u|²)|u|² + f(|u|²))|∇|u|²|²‖`.
///
/// The left side is formed spectrally from the transformed nonlinearity, the
/// right side by collocation quadrature of the pointwise integrands.
pub fn check_damping_identity(transform: &Transform, u: &SpectralVectorField, damping: &DampingSpec) -> IdentityReport {
    let na = IdentityReport {
        lhs: f64::NAN,
        rhs: f64::NAN,
        rel_error: f64::NAN,
        verdict: Verdict::NotApplicable,
    };
    let unit = match *damping {
        DampingSpec::None => return na,
        DampingSpec::Power { beta, .. } if beta < 3.0 => return na,
        DampingSpec::Power { beta, .. } => DampingSpec::Power { alpha: 1.0, beta },
        DampingSpec::Generalized { f, .. } => DampingSpec::Generalized { alpha: 1.0, f },
    };
    let g = *transform.grid();
    let up = transform.inverse_unchecked(u);
    let force: Vec<[f64; 3]> = (0..g.len()).into_par_iter().map(|x| unit.force(up.at(x))).collect();
    let reals: Vec<Vec<f64>> = (0..3).map(|a| force.iter().map(|v| v[a]).collect()).collect();
    let refs: Vec<&[f64]> = reals.iter().map(|r| r.as_slice()).collect();
    let fhat = transform.forward_reals(&refs);
    let lhs = VOLUME
        * crate::par::par_sum(g.len(), |idx| {
            let k = g.derivative_wavevector(idx);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            (0..3)
                .map(|a| {
                    let (x, y) = (fhat[a][idx], u.component(a)[idx]);
                    k2 * (x.re * y.re + x.im * y.im)
                })
                .sum()
        });
    let d = damping_integrals(transform, u, &unit);
    let rhs = match unit {
        DampingSpec::Power { beta, .. } => d.d_beta_grad + 0.25 * (beta - 1.0) * d.d_beta_sq,
        DampingSpec::Generalized { .. } => d.d_f_grad + 0.5 * (d.d_fprime + d.d_f_gradsq),
        DampingSpec::None => unreachable!(),
    };
    let scale = lhs.abs().max(rhs.abs());
    let rel_error = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
    IdentityReport {
        lhs,
        rhs,
        rel_error,
        verdict: if rel_error <= IDENTITY_TOL { Verdict::Pass } else { Verdict::Fail },
    }
}
