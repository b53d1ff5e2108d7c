//! Pseudo-spectral nonlinear terms: convection, the Lorentz/induction coupling
//! and the two damping laws.
//!
//! Products are formed on the collocation grid and truncated to the 2/3
//! dealias sphere, which is exact for quadratic products of fields supported
//! in `|k| < N/3`.
//!
//! Sign convention: momentum carries `u·∇u − b·∇b` and induction carries
//! `u·∇b − b·∇u` (standard incompressible MHD). With these signs the coupling
//! terms cancel in the `L²` energy balance.

use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::MhdState;
use crate::par::par_sum;
use crate::spectral::{viscous_symbol, PhysicalVectorField, SpectralVectorField, Transform};

const E: f64 = std::f64::consts::E;
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Catalog of damping modifiers `f`, each strictly increasing on `[0, ∞)`
/// with `f(0) = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DampingFn {
    /// `f(z) = log(e + z)`
    Log1,
    /// `f(z) = log(log(e^e + z))`
    Log2,
    /// `f(z) = log(log(log(e^{e^e} + z)))`
    Log3,
}

impl DampingFn {
    pub const ALL: [DampingFn; 3] = [DampingFn::Log1, DampingFn::Log2, DampingFn::Log3];

    pub fn name(self) -> &'static str {
        match self {
            DampingFn::Log1 => "log1",
            DampingFn::Log2 => "log2",
            DampingFn::Log3 => "log3",
        }
    }

    // The offsets e, e^e, e^{e^e} are written as exp of the previous level so
    // that log(offset + z) = level + ln_1p(z / offset) keeps full precision.
    #[inline]
    fn offsets() -> (f64, f64, f64) {
        let e_e = E.exp();
        (E, e_e, e_e.exp())
    }

    pub fn value(self, z: f64) -> f64 {
        let (o1, o2, o3) = Self::offsets();
        match self {
            DampingFn::Log1 => 1.0 + (z / o1).ln_1p(),
            DampingFn::Log2 => (E + (z / o2).ln_1p()).ln(),
            DampingFn::Log3 => (E.exp() + (z / o3).ln_1p()).ln().ln(),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        let (o1, o2, o3) = Self::offsets();
        match self {
            DampingFn::Log1 => 1.0 / (o1 + z),
            DampingFn::Log2 => {
                let l = E + (z / o2).ln_1p();
                1.0 / ((o2 + z) * l)
            }
            DampingFn::Log3 => {
                let l = E.exp() + (z / o3).ln_1p();
                1.0 / ((o3 + z) * l * l.ln())
            }
        }
    }

    /// `f(0)`; equal to 1 for every catalog entry.
    pub fn at_zero(self) -> f64 {
        self.value(0.0)
    }

    /// `f⁻¹(y)` on the range `[f(0), ∞)`, `None` below it.
    pub fn inverse(self, y: f64) -> Option<f64> {
        if !(y >= self.at_zero()) {
            return None;
        }
        let (o1, o2, o3) = Self::offsets();
        Some(match self {
            DampingFn::Log1 => o1 * (y - 1.0).exp_m1(),
            DampingFn::Log2 => o2 * (y.exp() - E).exp_m1(),
            DampingFn::Log3 => o3 * (y.exp().exp() - E.exp()).exp_m1(),
        })
    }
}

impl fmt::Display for DampingFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DampingFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log1" => Ok(DampingFn::Log1),
            "log2" => Ok(DampingFn::Log2),
            "log3" => Ok(DampingFn::Log3),
            other => Err(Error::InvalidParameter(format!(
                "unknown damping function {other:?} (expected log1, log2 or log3)"
            ))),
        }
    }
}

/// Active damping term in the momentum equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DampingSpec {
    None,
    /// `α |u|^{β−1} u`
    Power { alpha: f64, beta: f64 },
    /// `α f(|u|²) |u|² u`
    Generalized { alpha: f64, f: DampingFn },
}

impl DampingSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DampingSpec::None => Ok(()),
            DampingSpec::Power { alpha, beta } => {
                check_alpha(alpha)?;
                if !(beta > 1.0) || !beta.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "power damping needs beta > 1, got {beta}"
                    )));
                }
                Ok(())
            }
            DampingSpec::Generalized { alpha, .. } => check_alpha(alpha),
        }
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            DampingSpec::None => 0.0,
            DampingSpec::Power { alpha, .. } | DampingSpec::Generalized { alpha, .. } => alpha,
        }
    }

    /// Pointwise damping force `F(u)`.
    #[inline]
    pub fn force(&self, u: [f64; 3]) -> [f64; 3] {
        let s = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        let w = match *self {
            DampingSpec::None => return [0.0; 3],
            DampingSpec::Power { alpha, beta } => alpha * power_weight(s, beta),
            DampingSpec::Generalized { alpha, f } => alpha * f.value(s) * s,
        };
        [w * u[0], w * u[1], w * u[2]]
    }

    pub fn is_active(&self) -> bool {
        !matches!(self, DampingSpec::None)
    }
}

impl fmt::Display for DampingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DampingSpec::None => f.write_str("none"),
            DampingSpec::Power { alpha, beta } => write!(f, "power(alpha={alpha},beta={beta})"),
            DampingSpec::Generalized { alpha, f: func } => write!(f, "{func}(alpha={alpha})"),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "damping coefficient alpha must be positive, got {alpha}"
        )));
    }
    Ok(())
}

/// `|u|^{β−1}` from `s = |u|²`; zero at `u = 0` since `β > 1`.
#[inline]
pub(crate) fn power_weight(s: f64, beta: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s.powf(0.5 * (beta - 1.0))
    }
}

fn apply_pointwise(u: &PhysicalVectorField, damping: &DampingSpec) -> PhysicalVectorField {
    let g = *u.grid();
    let vals: Vec<[f64; 3]> = (0..g.len())
        .into_par_iter()
        .map(|idx| damping.force(u.at(idx)))
        .collect();
    let comps = std::array::from_fn(|a| vals.iter().map(|v| v[a]).collect());
    PhysicalVectorField::from_raw(g, comps)
}

/// `α|u|^{β−1}u` at every collocation point.
pub fn damping_power(u: &PhysicalVectorField, alpha: f64, beta: f64) -> Result<PhysicalVectorField> {
    let spec = DampingSpec::Power { alpha, beta };
    spec.validate()?;
    Ok(apply_pointwise(u, &spec))
}

/// `α f(|u|²)|u|²u` at every collocation point.
pub fn damping_generalized(
    u: &PhysicalVectorField,
    alpha: f64,
    f: DampingFn,
) -> Result<PhysicalVectorField> {
    let spec = DampingSpec::Generalized { alpha, f };
    spec.validate()?;
    Ok(apply_pointwise(u, &spec))
}

/// Damping force for any [`DampingSpec`].
pub fn damping(u: &PhysicalVectorField, spec: &DampingSpec) -> Result<PhysicalVectorField> {
    spec.validate()?;
    Ok(apply_pointwise(u, spec))
}

/// Dealiased `v·∇w`: differentiate `w` spectrally, multiply on the grid,
/// transform back and truncate to the dealias sphere.
pub fn convection(
    transform: &Transform,
    v: &SpectralVectorField,
    w: &SpectralVectorField,
) -> Result<SpectralVectorField> {
    let g = *transform.grid();
    g.ensure_same(v.grid())?;
    g.ensure_same(w.grid())?;
    let grad = w.gradient();
    let mut specs: Vec<&[Complex64]> = (0..3).map(|a| v.component(a)).collect();
    for i in 0..3 {
        for j in 0..3 {
            specs.push(grad.entry(i, j));
        }
    }
    let phys = transform.inverse_reals(&specs);
    let (vp, gp) = phys.split_at(3);
    let prod: Vec<Vec<f64>> = (0..3)
        .map(|i| {
            (0..g.len())
                .into_par_iter()
                .map(|x| (0..3).map(|j| vp[j][x] * gp[3 * i + j][x]).sum())
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = prod.iter().map(|p| p.as_slice()).collect();
    let mut out = transform.forward_reals(&refs).into_iter();
    let mut s = SpectralVectorField::from_components(g, std::array::from_fn(|_| out.next().unwrap()))?;
    s.dealias_in_place();
    Ok(s)
}

/// Nonlinear and damping tendencies of both equations, without viscosity.
#[derive(Clone, Debug)]
pub struct Tendency {
    pub du: SpectralVectorField,
    pub db: SpectralVectorField,
    /// `⟨F(u), u⟩_{L²}`, the rate at which damping removes energy.
    pub damping_power: f64,
}

/// `P[−(u·∇u − b·∇b) − F(u)]` and `P[−(u·∇b − b·∇u)]`, truncated.
///
/// Evaluated in the divergence form built from the Elsasser variables
/// `z± = u ± b`: with `Q_ij = (z⁻_j z⁺_i)^`, the momentum nonlinearity is
/// `½ ik_j (Q_ij + Q_ji)` and the induction term is `½ ik_j (Q_ij − Q_ji)`.
/// Both identities use `div u = div b = 0`.
pub fn nonlinear_tendency(
    transform: &Transform,
    u: &SpectralVectorField,
    b: &SpectralVectorField,
    damping: &DampingSpec,
) -> Result<Tendency> {
    let g = *transform.grid();
    g.ensure_same(u.grid())?;
    g.ensure_same(b.grid())?;
    let phys = transform.inverse_reals(&[
        u.component(0),
        u.component(1),
        u.component(2),
        b.component(0),
        b.component(1),
        b.component(2),
    ]);
    let n = g.len();
    let zp: Vec<[f64; 3]> = (0..n)
        .into_par_iter()
        .map(|x| std::array::from_fn(|a| phys[a][x] + phys[3 + a][x]))
        .collect();
    let zm: Vec<[f64; 3]> = (0..n)
        .into_par_iter()
        .map(|x| std::array::from_fn(|a| phys[a][x] - phys[3 + a][x]))
        .collect();
    let mut reals: Vec<Vec<f64>> = Vec::with_capacity(12);
    for i in 0..3 {
        for j in 0..3 {
            reals.push((0..n).into_par_iter().map(|x| zm[x][j] * zp[x][i]).collect());
        }
    }
    let mut damping_power = 0.0;
    if damping.is_active() {
        let force: Vec<[f64; 3]> = (0..n)
            .into_par_iter()
            .map(|x| damping.force([phys[0][x], phys[1][x], phys[2][x]]))
            .collect();
        damping_power = g.cell_volume()
            * par_sum(n, |x| {
                force[x][0] * phys[0][x] + force[x][1] * phys[1][x] + force[x][2] * phys[2][x]
            });
        for a in 0..3 {
            reals.push(force.par_iter().map(|f| f[a]).collect());
        }
    }
    if !damping_power.is_finite() {
        return Err(Error::NonFinite("damping term"));
    }
    let refs: Vec<&[f64]> = reals.iter().map(|r| r.as_slice()).collect();
    let spec = transform.forward_reals(&refs);
    let q = |i: usize, j: usize| &spec[3 * i + j];
    let cutoff = g.dealias_radius().min(g.truncation_radius());
    let cutoff2 = cutoff * cutoff;

    let mut du = SpectralVectorField::zeros(g);
    let mut db = SpectralVectorField::zeros(g);
    for a in 0..3 {
        let (du_a, db_a) = (du.component_mut(a), db.component_mut(a));
        du_a.par_iter_mut()
            .zip(db_a.par_iter_mut())
            .enumerate()
            .for_each(|(idx, (du_x, db_x))| {
                if g.k_squared(idx) >= cutoff2 {
                    return;
                }
                let k = g.derivative_wavevector(idx);
                let mut sym = Complex64::new(0.0, 0.0);
                let mut anti = Complex64::new(0.0, 0.0);
                for j in 0..3 {
                    let (qij, qji) = (q(a, j)[idx], q(j, a)[idx]);
                    sym += k[j] * (qij + qji);
                    anti += k[j] * (qij - qji);
                }
                *du_x = -0.5 * I * sym;
                *db_x = -0.5 * I * anti;
                if damping.is_active() {
                    *du_x -= spec[9 + a][idx];
                }
            });
    }
    du.leray_project_in_place();
    db.leray_project_in_place();
    Ok(Tendency { du, db, damping_power })
}

/// Full right-hand side `(∂_t u, ∂_t b)` including the anisotropic viscous term.
pub fn rhs_mhd(
    transform: &Transform,
    state: &MhdState,
    nu_h: f64,
    nu_v: f64,
    damping: &DampingSpec,
) -> Result<(SpectralVectorField, SpectralVectorField)> {
    if !state.u.is_finite() || !state.b.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    let Tendency { mut du, mut db, .. } = nonlinear_tendency(transform, &state.u, &state.b, damping)?;
    let g = *transform.grid();
    for (out, field) in [(&mut du, &state.u), (&mut db, &state.b)] {
        for a in 0..3 {
            let src = field.component(a);
            out.component_mut(a)
                .par_iter_mut()
                .enumerate()
                .for_each(|(idx, z)| *z -= viscous_symbol(&g, idx, nu_h, nu_v) * src[idx]);
        }
    }
    Ok((du, db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::random_solenoidal;
    use crate::spectral::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ZERO: Complex64 = Complex64::new(0.0, 0.0);

    fn setup(n: usize) -> (GridSpec, Transform) {
        let g = GridSpec::new(n).unwrap();
        (g, Transform::new(g))
    }

    fn field(g: GridSpec, seed: u64, amp: f64) -> SpectralVectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_solenoidal(g, &mut rng).scaled(amp)
    }

    /// Direct convolution `Σ_{p+q=k} v̂_j(p) (i q_j) ŵ_i(q)` restricted to `|k| < R`.
    fn brute_convection(v: &SpectralVectorField, w: &SpectralVectorField) -> SpectralVectorField {
        let g = *v.grid();
        let r = g.dealias_radius();
        let support: Vec<usize> = (0..g.len())
            .filter(|&i| v.component(0)[i] != ZERO
                || v.component(1)[i] != ZERO
                || v.component(2)[i] != ZERO
                || w.component(0)[i] != ZERO
                || w.component(1)[i] != ZERO
                || w.component(2)[i] != ZERO)
            .collect();
        let mut out = SpectralVectorField::zeros(g);
        for &p in &support {
            for &q in &support {
                let kp = g.wavevector(p);
                let kq = g.wavevector(q);
                let k = [kp[0] + kq[0], kp[1] + kq[1], kp[2] + kq[2]];
                if k[0] * k[0] + k[1] * k[1] + k[2] * k[2] >= r * r {
                    continue;
                }
                let idx = g
                    .mode_index([k[0] as i64, k[1] as i64, k[2] as i64])
                    .unwrap();
                for i in 0..3 {
                    let mut acc = ZERO;
                    for j in 0..3 {
                        acc += v.component(j)[p] * I * kq[j] * w.component(i)[q];
                    }
                    out.component_mut(i)[idx] += acc;
                }
            }
        }
        out
    }

    #[test]
    fn catalog_functions() {
        for f in DampingFn::ALL {
            assert!((f.at_zero() - 1.0).abs() < 1e-15, "{f}");
            let mut prev = f.value(0.0);
            for i in 1..200 {
                let z = 1e-3 * 1.1f64.powi(i);
                let v = f.value(z);
                assert!(v > prev);
                prev = v;
                let h = 1e-6 * z.max(1.0);
                let fd = (f.value(z + h) - f.value(z - h)) / (2.0 * h);
                assert!((fd - f.derivative(z)).abs() <= 1e-6 * f.derivative(z).abs().max(1e-3));
                let back = f.inverse(v).unwrap();
                // forward rounding of v limits what the inverse can recover
                let cond = 4.0 * f64::EPSILON * v / f.derivative(z);
                assert!((back - z).abs() <= 1e-9 * z.max(1.0) + cond, "{f} {z} {back}");
            }
            assert_eq!(f.inverse(0.5), None);
            assert_eq!(f.inverse(1.0), Some(0.0));
            assert_eq!(f.name().parse::<DampingFn>().unwrap(), f);
        }
        assert!((DampingFn::Log1.value(1.0) - (E + 1.0).ln()).abs() < 1e-15);
        assert!((DampingFn::Log2.value(5.0) - (E.exp() + 5.0).ln().ln()).abs() < 1e-14);
    }

    #[test]
    fn damping_spec_validation_and_serde() {
        assert!(DampingSpec::Power { alpha: 1.0, beta: 1.0 }.validate().is_err());
        assert!(DampingSpec::Power { alpha: 0.0, beta: 4.0 }.validate().is_err());
        assert!(DampingSpec::Generalized { alpha: -1.0, f: DampingFn::Log1 }.validate().is_err());
        let s: DampingSpec =
            serde_json::from_str(r#"{"kind": "generalized", "alpha": 1.0, "f": "log2"}"#).unwrap();
        assert_eq!(s, DampingSpec::Generalized { alpha: 1.0, f: DampingFn::Log2 });
        let p: DampingSpec = serde_json::from_str(r#"{"kind": "power", "alpha": 1, "beta": 4}"#).unwrap();
        assert_eq!(p, DampingSpec::Power { alpha: 1.0, beta: 4.0 });
        let n: DampingSpec = serde_json::from_str(r#"{"kind": "none"}"#).unwrap();
        assert_eq!(n, DampingSpec::None);
    }

    #[test]
    fn pointwise_damping_values() {
        let p = DampingSpec::Power { alpha: 1.0, beta: 3.0 };
        assert_eq!(p.force([2.0, 0.0, 0.0]), [8.0, 0.0, 0.0]);
        assert_eq!(p.force([0.0; 3]), [0.0; 3]);
        let p = DampingSpec::Power { alpha: 0.5, beta: 5.0 };
        let v = p.force([1.0, 1.0, 0.0]);
        assert!((v[0] - 2.0).abs() < 1e-15 && (v[1] - 2.0).abs() < 1e-15 && v[2] == 0.0);
        let gen = DampingSpec::Generalized { alpha: 1.0, f: DampingFn::Log1 };
        assert_eq!(gen.force([0.0; 3]), [0.0; 3]);
        let v = gen.force([1.0, 0.0, 0.0]);
        assert!((v[0] - 1.313_261_687_518_222_8).abs() < 1e-15);
    }

    #[test]
    fn damping_fields_and_quadrature_identities() {
        let (g, t) = setup(16);
        let u = t.inverse(&field(g, 5, 0.3)).unwrap();
        let zero = PhysicalVectorField::zeros(g);
        assert_eq!(damping_power(&zero, 1.0, 4.0).unwrap(), zero);
        assert!(damping_power(&u, 1.0, 0.5).is_err());

        let (alpha, beta) = (0.7, 4.5);
        let d = damping_power(&u, alpha, beta).unwrap();
        let lhs = d.inner(&u);
        let norm = g.cell_volume()
            * (0..g.len())
                .map(|x| {
                    let v = u.at(x);
                    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().powf(beta + 1.0)
                })
                .sum::<f64>();
        assert!((lhs - alpha * norm).abs() <= 1e-10 * lhs.abs().max(1e-300));

        let f = DampingFn::Log2;
        let d = damping_generalized(&u, alpha, f).unwrap();
        let lhs = d.inner(&u);
        let norm = g.cell_volume()
            * (0..g.len())
                .map(|x| {
                    let v = u.at(x);
                    let s = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                    f.value(s) * s * s
                })
                .sum::<f64>();
        assert!((lhs - alpha * norm).abs() <= 1e-10 * lhs);
    }

    #[test]
    fn convection_of_sine_by_constant() {
        let (g, t) = setup(8);
        let v = t.forward(&PhysicalVectorField::from_fn(g, |_| [1.0, 0.0, 0.0])).unwrap();
        let w = t.forward(&PhysicalVectorField::from_fn(g, |x| [0.0, x[0].sin(), 0.0])).unwrap();
        let c = convection(&t, &v, &w).unwrap();
        let expect = t.forward(&PhysicalVectorField::from_fn(g, |x| [0.0, x[0].cos(), 0.0])).unwrap();
        assert!(c.sub(&expect).max_abs() < 1e-14);
        assert!(c.sub(&brute_convection(&v, &w)).max_abs() < 1e-14);
        assert_eq!(
            convection(&t, &SpectralVectorField::zeros(g), &w).unwrap().max_abs(),
            0.0
        );
    }

    #[test]
    fn convection_matches_direct_convolution() {
        let (g, t) = setup(8);
        for seed in 0..4 {
            let v = field(g, seed, 1.0);
            let w = field(g, seed + 100, 1.0);
            let fast = convection(&t, &v, &w).unwrap();
            let slow = brute_convection(&v, &w);
            assert!(fast.sub(&slow).max_abs() <= 1e-12 * slow.max_abs());
        }
    }

    #[test]
    fn convection_is_skew() {
        for n in [8, 16] {
            let (g, t) = setup(n);
            let v = field(g, 1, 1.0);
            let w = field(g, 2, 1.0);
            let c = convection(&t, &v, &w).unwrap();
            assert!(c.inner(&w).abs() <= 1e-10);
        }
    }

    #[test]
    fn rhs_zero_state() {
        let (g, t) = setup(8);
        let s = MhdState::zeros(g);
        let (du, db) = rhs_mhd(&t, &s, 1.0, 1.0, &DampingSpec::Power { alpha: 1.0, beta: 4.0 }).unwrap();
        assert_eq!(du.max_abs(), 0.0);
        assert_eq!(db.max_abs(), 0.0);
    }

    #[test]
    fn rhs_single_shear_mode_is_pure_decay() {
        let (g, t) = setup(16);
        let u = t.forward(&PhysicalVectorField::from_fn(g, |x| [x[2].sin(), 0.0, 0.0])).unwrap();
        let s = MhdState { u: u.clone(), b: SpectralVectorField::zeros(g), t: 0.0 };
        let tend = nonlinear_tendency(&t, &s.u, &s.b, &DampingSpec::None).unwrap();
        assert!(tend.du.max_abs() < 1e-15);
        let nu_v = 0.37;
        let (du, db) = rhs_mhd(&t, &s, 2.0, nu_v, &DampingSpec::None).unwrap();
        assert!(du.sub(&u.scaled(-nu_v)).max_abs() < 1e-15);
        assert!(db.max_abs() < 1e-15);
    }

    #[test]
    fn energy_flux_cancels() {
        let (g, t) = setup(16);
        let dampings = [
            DampingSpec::None,
            DampingSpec::Power { alpha: 1.0, beta: 4.0 },
            DampingSpec::Generalized { alpha: 0.5, f: DampingFn::Log1 },
        ];
        for (seed, damping) in dampings.iter().enumerate() {
            let s = MhdState {
                u: field(g, 10 + seed as u64, 0.8),
                b: field(g, 20 + seed as u64, 0.6),
                t: 0.0,
            };
            let (nu_h, nu_v) = (1.0, 1.0);
            let (du, db) = rhs_mhd(&t, &s, nu_h, nu_v, damping).unwrap();
            let up = t.inverse(&s.u).unwrap();
            let power = if damping.is_active() {
                apply_pointwise(&up, damping).inner(&up)
            } else {
                0.0
            };
            let budget = du.inner(&s.u)
                + db.inner(&s.b)
                + nu_h * s.u.h1dot_norm_sq()
                + nu_h * s.b.h1dot_norm_sq()
                + power;
            let scale = s.u.h1dot_norm_sq() + s.b.h1dot_norm_sq();
            assert!(budget.abs() <= 1e-9 * scale.max(1.0), "{damping:?}: {budget}");
        }
    }

    #[test]
    fn lorentz_and_induction_couplings_cancel() {
        let (g, t) = setup(16);
        let u = field(g, 31, 1.0);
        let b = field(g, 32, 1.0);
        let bb = convection(&t, &b, &b).unwrap();
        let bu = convection(&t, &b, &u).unwrap();
        assert!((bb.inner(&u) + bu.inner(&b)).abs() <= 1e-10);
    }

    #[test]
    fn tendency_is_solenoidal_and_truncated() {
        let (g, t) = setup(16);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_solenoidal(g, &mut rng).scaled(rng.gen_range(0.5..2.0));
        let b = random_solenoidal(g, &mut rng);
        let tend = nonlinear_tendency(&t, &u, &b, &DampingSpec::Generalized { alpha: 1.0, f: DampingFn::Log3 }).unwrap();
        assert!(tend.du.divergence_l2() <= 1e-10);
        assert!(tend.db.divergence_l2() <= 1e-10);
        assert_eq!(tend.du.max_abs_outside(g.truncation_radius()), 0.0);
        assert!(tend.du.hermitian_defect() <= 1e-12);
    }
}
