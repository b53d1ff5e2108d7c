//! Time advancement of the truncated Galerkin system.
//!
//! The viscous term is integrated exactly through the factor
//! `exp(−ν(k)τ)`; nonlinear and damping terms use classical RK4 in the
//! transformed variable (Lawson / integrating-factor RK4). Energy dissipation
//! integrals are carried along as extra ODE components with the same stage
//! weights, so they are fourth-order consistent with the state.

use std::path::PathBuf;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::energy::{ledger_row, Ledger, LedgerRow};
use crate::error::{Error, Result};
use crate::nonlinear::{nonlinear_tendency, DampingSpec, Tendency};
use crate::spectral::{viscous_symbol, GridSpec, PhysicalVectorField, SpectralVectorField, Transform, VOLUME};

/// The pair `w = (u, b)` in coefficient form at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct MhdState {
    pub u: SpectralVectorField,
    pub b: SpectralVectorField,
    pub t: f64,
}

impl MhdState {
    pub fn zeros(grid: GridSpec) -> Self {
        MhdState {
            u: SpectralVectorField::zeros(grid),
            b: SpectralVectorField::zeros(grid),
            t: 0.0,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.u.grid()
    }

    /// `‖w‖²_{L²}`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.u.l2_norm_sq() + self.b.l2_norm_sq()
    }

    /// Inhomogeneous `‖(u, b)‖_{H¹}`.
    pub fn h1_norm(&self) -> f64 {
        let g = *self.grid();
        let w = |idx: usize| 1.0 + g.k_squared(idx);
        (self.u.weighted_norm_sq(w) + self.b.weighted_norm_sq(w)).sqrt()
    }

    /// `‖(u, b)‖_{Ḣ¹}`.
    pub fn h1dot_norm(&self) -> f64 {
        (self.u.h1dot_norm_sq() + self.b.h1dot_norm_sq()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.u.is_finite() && self.b.is_finite()
    }

    /// `max(‖div u‖_{L²}, ‖div b‖_{L²})`.
    pub fn max_divergence(&self) -> f64 {
        self.u.divergence_l2().max(self.b.divergence_l2())
    }

    /// `‖u − s‖² + ‖b − y‖²` for another state `(s, y)`.
    pub fn distance_sq(&self, other: &MhdState) -> f64 {
        self.u.sub(&other.u).l2_norm_sq() + self.b.sub(&other.b).l2_norm_sq()
    }

    /// Viscous dissipation rate `Σ ν(k)|ŵ(k)|²` in `L²` units.
    pub fn viscous_dissipation(&self, nu_h: f64, nu_v: f64) -> f64 {
        let g = *self.grid();
        let w = |idx: usize| viscous_symbol(&g, idx, nu_h, nu_v);
        self.u.weighted_norm_sq(w) + self.b.weighted_norm_sq(w)
    }
}

/// Initial data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Taylor–Green velocity `A(sin x₁ cos x₂ cos x₃, −cos x₁ sin x₂ cos x₃, 0)`
    /// with `b = A/2 (sin x₂, sin x₃, sin x₁)`.
    TaylorGreenLike { amplitude: f64 },
    /// Random solenoidal `u`, `b` with `|k|⁻⁴` coefficient decay, rescaled so
    /// that `‖(u, b)‖_{H¹}` equals the target.
    RandomDivfree { target_h1: f64 },
    /// `u = a sin(k·x) e` with `e ⟂ k`, `b = 0`.
    SingleMode { k: [i64; 3], amplitude: f64 },
    FromCheckpoint { path: PathBuf },
}

fn default_nu() -> f64 {
    1.0
}
fn default_stride() -> u64 {
    1
}
fn default_cfl() -> f64 {
    0.5
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub grid: GridSpec,
    #[serde(default = "default_nu")]
    pub nu_h: f64,
    #[serde(default = "default_nu")]
    pub nu_v: f64,
    pub damping: DampingSpec,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_stride")]
    pub ledger_stride: u64,
    #[serde(default)]
    pub seed: u64,
    pub initial_condition: InitialCondition,
    #[serde(default = "default_cfl")]
    pub cfl_target: f64,
}

impl SolverConfig {
    pub fn new(grid: GridSpec, damping: DampingSpec, dt: f64, t_end: f64, initial_condition: InitialCondition) -> Self {
        SolverConfig {
            grid,
            nu_h: 1.0,
            nu_v: 1.0,
            damping,
            dt,
            t_end,
            ledger_stride: 1,
            seed: 0,
            initial_condition,
            cfl_target: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.damping.validate()?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("nu_h", self.nu_h)?;
        positive("nu_v", self.nu_v)?;
        positive("dt", self.dt)?;
        positive("cfl_target", self.cfl_target)?;
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidConfig(format!("t_end must be non-negative, got {}", self.t_end)));
        }
        if self.ledger_stride == 0 {
            return Err(Error::InvalidConfig("ledger_stride must be at least 1".into()));
        }
        self.n_steps().map(|_| ())
    }

    /// Number of fixed steps of size `dt` reaching `t_end`.
    pub fn n_steps(&self) -> Result<u64> {
        let ratio = self.t_end / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "t_end = {} is not a whole number of steps dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(n as u64)
    }
}

/// Random solenoidal field: Gaussian coefficients with `|k|⁻⁴` envelope,
/// Hermitian-symmetrized, Leray-projected, truncated and mean-free.
pub fn random_solenoidal(grid: GridSpec, rng: &mut ChaCha8Rng) -> SpectralVectorField {
    let r = grid.truncation_radius().min(grid.dealias_radius());
    let comps: [Vec<Complex64>; 3] = std::array::from_fn(|_| {
        (0..grid.len())
            .map(|idx| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                let k2 = grid.k_squared(idx);
                if k2 == 0.0 || k2 >= r * r {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(re, im) * k2.powi(-2)
                }
            })
            .collect()
    });
    let sym = comps.map(|c| {
        (0..grid.len())
            .into_par_iter()
            .map(|idx| 0.5 * (c[idx] + c[grid.conj_index(idx)].conj()))
            .collect()
    });
    let mut field = SpectralVectorField::from_components(grid, sym).expect("grid-sized components");
    field.leray_project_in_place();
    field
}

/// Builds divergence-free initial data on `grid`.
pub fn make_initial(ic: &InitialCondition, grid: GridSpec, seed: u64) -> Result<MhdState> {
    let transform = Transform::new(grid);
    let mut state = match ic {
        InitialCondition::TaylorGreenLike { amplitude } => {
            let a = *amplitude;
            let u = PhysicalVectorField::from_fn(grid, |x| {
                [
                    a * x[0].sin() * x[1].cos() * x[2].cos(),
                    -a * x[0].cos() * x[1].sin() * x[2].cos(),
                    0.0,
                ]
            });
            let b = PhysicalVectorField::from_fn(grid, |x| {
                [0.5 * a * x[1].sin(), 0.5 * a * x[2].sin(), 0.5 * a * x[0].sin()]
            });
            MhdState {
                u: transform.forward(&u)?,
                b: transform.forward(&b)?,
                t: 0.0,
            }
        }
        InitialCondition::RandomDivfree { target_h1 } => {
            if !(*target_h1 >= 0.0) || !target_h1.is_finite() {
                return Err(Error::InvalidConfig(format!("target_h1 must be non-negative, got {target_h1}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut state = MhdState {
                u: random_solenoidal(grid, &mut rng),
                b: random_solenoidal(grid, &mut rng),
                t: 0.0,
            };
            let norm = state.h1_norm();
            let factor = if *target_h1 == 0.0 || norm == 0.0 { 0.0 } else { target_h1 / norm };
            state.u.scale(factor);
            state.b.scale(factor);
            state
        }
        InitialCondition::SingleMode { k, amplitude } => {
            let kf = k.map(|c| c as f64);
            let k2 = kf.iter().map(|c| c * c).sum::<f64>();
            if k2 == 0.0 || k2.sqrt() >= grid.truncation_radius() {
                return Err(Error::InvalidConfig(format!(
                    "single mode {k:?} must be nonzero and inside the truncation radius {}",
                    grid.truncation_radius()
                )));
            }
            let dir = match k.iter().position(|&c| c == 0) {
                Some(axis) => {
                    let mut e = [0.0; 3];
                    e[axis] = 1.0;
                    e
                }
                None => {
                    let e = [1.0 - kf[0] * kf[0] / k2, -kf[0] * kf[1] / k2, -kf[0] * kf[2] / k2];
                    let n = e.iter().map(|c| c * c).sum::<f64>().sqrt();
                    e.map(|c| c / n)
                }
            };
            let mut u = SpectralVectorField::zeros(grid);
            // a sin(θ) = (a/2i)(e^{iθ} − e^{−iθ})
            u.set_real_mode(*k, dir.map(|e| Complex64::new(0.0, -0.5 * amplitude * e)))?;
            MhdState {
                u,
                b: SpectralVectorField::zeros(grid),
                t: 0.0,
            }
        }
        InitialCondition::FromCheckpoint { path } => {
            let state = checkpoint::read(path)?;
            if state.grid().n_modes() != grid.n_modes()
                || state.grid().truncation_radius() != grid.truncation_radius()
            {
                return Err(Error::GridMismatch(format!(
                    "checkpoint {} holds {} but the configuration asks for {}",
                    path.display(),
                    state.grid(),
                    grid
                )));
            }
            MhdState {
                u: SpectralVectorField::from_components(grid, state.u.into_components())?,
                b: SpectralVectorField::from_components(grid, state.b.into_components())?,
                t: state.t,
            }
        }
    };
    let r = grid.truncation_radius();
    for f in [&mut state.u, &mut state.b] {
        f.leray_project_in_place();
        f.truncate_in_place(r);
    }
    if !state.is_finite() {
        return Err(Error::NonFinite("initial condition"));
    }
    Ok(state)
}

/// Result of one step: the new state and the increments of the
/// stage-quadrature energy integrals over the step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: MhdState,
    /// `∫ 2 Σν(k)|ŵ|² dt` over the step.
    pub viscous_integral: f64,
    /// `∫ 2⟨F(u), u⟩ dt` over the step.
    pub damping_integral: f64,
}

/// Integrating-factor RK4 for a fixed grid, viscosity, damping and step.
#[derive(Debug)]
pub struct Integrator {
    transform: Transform,
    nu_h: f64,
    nu_v: f64,
    damping: DampingSpec,
    dt: f64,
    half: Vec<f64>,
    full: Vec<f64>,
}

impl Integrator {
    pub fn new(grid: GridSpec, nu_h: f64, nu_v: f64, damping: DampingSpec, dt: f64) -> Result<Self> {
        grid.validate()?;
        damping.validate()?;
        if !(dt > 0.0) || !(nu_h > 0.0) || !(nu_v > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt, nu_h and nu_v must be positive (dt={dt}, nu_h={nu_h}, nu_v={nu_v})"
            )));
        }
        let factor = |tau: f64| -> Vec<f64> {
            (0..grid.len())
                .into_par_iter()
                .map(|idx| (-viscous_symbol(&grid, idx, nu_h, nu_v) * tau).exp())
                .collect()
        };
        Ok(Integrator {
            transform: Transform::new(grid),
            nu_h,
            nu_v,
            damping,
            dt,
            half: factor(0.5 * dt),
            full: factor(dt),
        })
    }

    pub fn from_config(config: &SolverConfig) -> Result<Self> {
        Self::new(config.grid, config.nu_h, config.nu_v, config.damping, config.dt)
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn damping(&self) -> &DampingSpec {
        &self.damping
    }

    pub fn viscosity(&self) -> (f64, f64) {
        (self.nu_h, self.nu_v)
    }

    fn stage(&self, w: &MhdState) -> Result<(Tendency, f64)> {
        let tend = nonlinear_tendency(&self.transform, &w.u, &w.b, &self.damping)?;
        let visc = w.viscous_dissipation(self.nu_h, self.nu_v);
        Ok((tend, visc))
    }

    /// Advances `state` by one step of size `dt`.
    pub fn step(&self, state: &MhdState) -> Result<StepOutput> {
        let h = self.dt;
        let g = *self.transform.grid();
        let (half, full) = (&self.half, &self.full);
        let blow_up = || Error::BlowUp {
            t: state.t + h,
            last_row: Box::new(ledger_row(&self.transform, state, &self.damping, self.nu_h, self.nu_v)),
        };
        let stage = |w: &MhdState| match self.stage(w) {
            Err(Error::NonFinite(_)) => Err(blow_up()),
            other => other,
        };

        let w0 = (&state.u, &state.b);
        let (ka, va) = stage(state)?;
        let wa = combine(&g, state.t + 0.5 * h, [w0, (&ka.du, &ka.db)], |i, x| {
            half[i] * (x[0] + 0.5 * h * x[1])
        });
        let (kb, vb) = stage(&wa)?;
        let wb = combine(&g, state.t + 0.5 * h, [w0, (&kb.du, &kb.db)], |i, x| {
            half[i] * x[0] + 0.5 * h * x[1]
        });
        let (kc, vc) = stage(&wb)?;
        let wc = combine(&g, state.t + h, [w0, (&kc.du, &kc.db)], |i, x| {
            full[i] * x[0] + h * half[i] * x[1]
        });
        let (kd, vd) = stage(&wc)?;
        let mut next = combine(
            &g,
            state.t + h,
            [w0, (&ka.du, &ka.db), (&kb.du, &kb.db), (&kc.du, &kc.db), (&kd.du, &kd.db)],
            |i, x| full[i] * x[0] + (h / 6.0) * (full[i] * x[1] + 2.0 * half[i] * (x[2] + x[3]) + x[4]),
        );
        let r = g.truncation_radius();
        for f in [&mut next.u, &mut next.b] {
            f.leray_project_in_place();
            f.truncate_in_place(r);
        }
        if !next.is_finite() {
            return Err(blow_up());
        }
        let viscous_integral = (h / 6.0) * 2.0 * (va + 2.0 * vb + 2.0 * vc + vd);
        let damping_integral =
            (h / 6.0) * 2.0 * (ka.damping_power + 2.0 * kb.damping_power + 2.0 * kc.damping_power + kd.damping_power);
        Ok(StepOutput {
            state: next,
            viscous_integral,
            damping_integral,
        })
    }
}

/// Coefficient-wise combination of several `(u, b)` pairs.
fn combine<const K: usize>(
    g: &GridSpec,
    t: f64,
    inputs: [(&SpectralVectorField, &SpectralVectorField); K],
    f: impl Fn(usize, [Complex64; K]) -> Complex64 + Sync,
) -> MhdState {
    let build = |fields: [&SpectralVectorField; K]| {
        let comps = std::array::from_fn(|a| {
            (0..g.len())
                .into_par_iter()
                .map(|idx| f(idx, std::array::from_fn(|s| fields[s].component(a)[idx])))
                .collect()
        });
        SpectralVectorField::from_components(*g, comps).expect("grid-sized components")
    };
    MhdState {
        u: build(inputs.map(|p| p.0)),
        b: build(inputs.map(|p| p.1)),
        t,
    }
}

/// Advances `state` by one step of `config.dt`.
pub fn step(state: &MhdState, config: &SolverConfig) -> Result<MhdState> {
    Ok(Integrator::from_config(config)?.step(state)?.state)
}

/// Advective CFL number `dt k_max (‖u‖_∞ + ‖b‖_∞)`.
pub fn cfl_number(transform: &Transform, state: &MhdState, dt: f64) -> f64 {
    let u = transform.inverse_unchecked(&state.u).max_magnitude();
    let b = transform.inverse_unchecked(&state.b).max_magnitude();
    dt * transform.grid().k_max() * (u + b)
}

/// A run in progress: state, step counter and ledger.
#[derive(Debug)]
pub struct Simulation {
    config: SolverConfig,
    integrator: Integrator,
    state: MhdState,
    step: u64,
    n_steps: u64,
    ledger: Ledger,
    viscous_integral: f64,
    damping_integral: f64,
    initial_cfl: f64,
}

impl Simulation {
    pub fn new(config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let state = make_initial(&config.initial_condition, config.grid, config.seed)?;
        Self::with_initial_state(config, state)
    }

    pub fn with_initial_state(config: SolverConfig, mut state: MhdState) -> Result<Self> {
        config.validate()?;
        config.grid.ensure_same(state.grid())?;
        let integrator = Integrator::from_config(&config)?;
        state.t = 0.0;
        let initial_cfl = cfl_number(integrator.transform(), &state, config.dt);
        if initial_cfl > config.cfl_target {
            tracing::warn!(
                cfl = initial_cfl,
                target = config.cfl_target,
                "time step exceeds the advective stability target"
            );
        }
        let mut ledger = Ledger::new();
        ledger.push(ledger_row(
            integrator.transform(),
            &state,
            &config.damping,
            config.nu_h,
            config.nu_v,
        ));
        Ok(Simulation {
            n_steps: config.n_steps()?,
            config,
            integrator,
            state,
            step: 0,
            ledger,
            viscous_integral: 0.0,
            damping_integral: 0.0,
            initial_cfl,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn state(&self) -> &MhdState {
        &self.state
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn n_steps(&self) -> u64 {
        self.n_steps
    }

    pub fn initial_cfl(&self) -> f64 {
        self.initial_cfl
    }

    pub fn integrator(&self) -> &Integrator {
        &self.integrator
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.n_steps
    }

    fn current_row(&self) -> LedgerRow {
        let mut row = ledger_row(
            self.integrator.transform(),
            &self.state,
            &self.config.damping,
            self.config.nu_h,
            self.config.nu_v,
        );
        row.step = self.step;
        row.int_visc_rk = self.viscous_integral;
        row.int_damp_rk = self.damping_integral;
        row
    }

    /// Takes one step, appending a ledger row on stride boundaries and at the end.
    pub fn advance(&mut self) -> Result<()> {
        if self.is_finished() {
            return Ok(());
        }
        let out = match self.integrator.step(&self.state) {
            Ok(out) => out,
            Err(Error::BlowUp { t, .. }) => {
                return Err(Error::BlowUp {
                    t,
                    last_row: Box::new(self.current_row()),
                })
            }
            Err(e) => return Err(e),
        };
        self.step += 1;
        self.state = out.state;
        // exact multiple of dt keeps ledger times free of accumulated round-off
        self.state.t = self.step as f64 * self.config.dt;
        self.viscous_integral += out.viscous_integral;
        self.damping_integral += out.damping_integral;
        if self.step.is_multiple_of(self.config.ledger_stride) || self.is_finished() {
            let row = self.current_row();
            self.ledger.push(row);
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.advance()?;
        }
        Ok(())
    }

    pub fn into_output(self) -> RunOutput {
        RunOutput {
            state: self.state,
            ledger: self.ledger,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: MhdState,
    pub ledger: Ledger,
}

/// Integrates `config` from its initial condition to `t_end`.
pub fn run(config: &SolverConfig) -> Result<RunOutput> {
    let mut sim = Simulation::new(config.clone())?;
    sim.run_to_end()?;
    Ok(sim.into_output())
}

/// `(2π)³/2`, the `L²` norm squared of a unit sine mode.
pub const UNIT_MODE_L2_SQ: f64 = 0.5 * VOLUME;
