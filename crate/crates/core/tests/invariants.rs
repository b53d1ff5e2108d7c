use damped_mhd::checkpoint;
use damped_mhd::energy::{damping_integrals, Ledger};
use damped_mhd::integrator::{make_initial, random_solenoidal, Integrator};
use damped_mhd::lemmas::{
    c_alpha_beta, cumulative_trapezoid, gronwall_check, interpolation_margin, monotonicity_gap, LEMMA_TOL,
};
use damped_mhd::spectral::VOLUME;
use damped_mhd::twin::damping_contraction_check;
use damped_mhd::{
    run, DampingFn, DampingSpec, GridSpec, InitialCondition, PhysicalVectorField, SolverConfig, Transform, Verdict,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = [f64; 3]> {
    [lo..hi, lo..hi, lo..hi]
}

fn damping_fn() -> impl Strategy<Value = DampingFn> {
    prop::sample::select(DampingFn::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn leray_removes_gradients(seed in any::<u64>(), k in [-2i32..=2, -2i32..=2, -2i32..=2], amp in -3.0f64..3.0) {
        let g = GridSpec::new(8).unwrap();
        let t = Transform::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_solenoidal(g, &mut rng);
        let k = k.map(f64::from);
        // ∇ sin(k·x) = k cos(k·x)
        let grad = PhysicalVectorField::from_fn(g, |x| {
            let c = amp * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2]).cos();
            [k[0] * c, k[1] * c, k[2] * c]
        });
        let w = u.add(&t.forward(&grad).unwrap());
        let p = w.leray_project();
        let scale = w.l2_norm_sq().max(1e-300);
        prop_assert!(p.sub(&u).l2_norm_sq() <= 1e-26 * scale);
        prop_assert!(p.divergence_l2() <= 1e-12 * scale.sqrt());
        prop_assert!(p.leray_project().sub(&p).l2_norm_sq() <= 1e-28 * scale);
    }

    #[test]
    fn monotonicity_gap_is_symmetric_and_nonnegative(
        x in vec3(-50.0, 50.0),
        y in vec3(-50.0, 50.0),
        f in damping_fn(),
    ) {
        let a = monotonicity_gap(x, y, f);
        let b = monotonicity_gap(y, x, f);
        prop_assert!(a >= -LEMMA_TOL * (1.0 + a.abs()));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        prop_assert_eq!(monotonicity_gap(x, x, f), 0.0);
    }

    #[test]
    fn interpolation_margin_is_nonnegative(
        alpha in 0.05f64..20.0,
        beta in 3.2f64..8.0,
        x in 0.0f64..50.0,
    ) {
        let c = c_alpha_beta(alpha, beta).unwrap();
        let m = interpolation_margin(alpha, beta, c, x);
        prop_assert!(m >= -1e-12 * (1.0 + x * x), "margin {m} at x = {x}");
    }

    #[test]
    fn damping_inverse_round_trips(y in 1.0f64..30.0, f in damping_fn()) {
        let z = f.inverse(y).unwrap();
        if z.is_finite() {
            prop_assert!((f.value(z) - y).abs() <= 1e-9 * y);
        } else {
            // The preimage lies beyond the largest double.
            prop_assert!(f.value(f64::MAX) < y);
        }
    }

    #[test]
    fn contraction_integral_is_nonnegative(
        a in vec3(-3.0, 3.0),
        b in vec3(-3.0, 3.0),
        beta in 1.0f64..6.0,
    ) {
        let g = GridSpec::new(8).unwrap();
        let u = PhysicalVectorField::from_fn(g, |x| [a[0] * x[1].sin(), a[1] * x[2].cos(), a[2] * x[0].sin()]);
        let s = PhysicalVectorField::from_fn(g, |x| [b[0] * x[2].cos(), b[1] * x[0].sin(), b[2] * (x[1] + x[2]).sin()]);
        let v = damping_contraction_check(&u, &s, &DampingSpec::Power { alpha: 1.0, beta }).unwrap();
        prop_assert!(v >= -1e-10 * VOLUME);
        prop_assert_eq!(damping_contraction_check(&u, &u, &DampingSpec::Power { alpha: 1.0, beta }).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trip_is_bitwise(seed in any::<u64>(), t in 0.0f64..10.0) {
        let g = GridSpec::new(8).unwrap();
        let mut s = make_initial(&InitialCondition::RandomDivfree { target_h1: 1.0 }, g, seed).unwrap();
        s.t = t;
        let mut bytes = Vec::new();
        checkpoint::write_to(&s, &mut bytes).unwrap();
        let back = checkpoint::read_from(bytes.as_slice()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn parseval_matches_grid_quadrature(seed in any::<u64>()) {
        let g = GridSpec::new(8).unwrap();
        let t = Transform::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_solenoidal(g, &mut rng);
        let p = t.inverse(&u).unwrap();
        let quad = p.l2_norm_sq();
        prop_assert!((quad - u.l2_norm_sq()).abs() <= 1e-12 * quad);
    }
}

#[test]
fn ledger_csv_round_trip_is_exact() {
    let g = GridSpec::new(8).unwrap();
    let c = SolverConfig::new(
        g,
        DampingSpec::Generalized { alpha: 0.5, f: DampingFn::Log2 },
        0.01,
        0.05,
        InitialCondition::TaylorGreenLike { amplitude: 1.0 },
    );
    let ledger = run(&c).unwrap().ledger;
    let mut csv = Vec::new();
    ledger.write_csv(&mut csv).unwrap();
    let back = Ledger::read_csv(csv.as_slice()).unwrap();
    assert_eq!(back.rows(), ledger.rows());
    let mut again = Vec::new();
    back.write_csv(&mut again).unwrap();
    assert_eq!(again, csv);
}

#[test]
fn divergence_stays_at_roundoff() {
    let g = GridSpec::new(16).unwrap();
    let integ = Integrator::new(g, 1.0, 1.0, DampingSpec::Power { alpha: 1.0, beta: 4.0 }, 0.01).unwrap();
    let mut s = make_initial(&InitialCondition::TaylorGreenLike { amplitude: 2.0 }, g, 0).unwrap();
    for _ in 0..20 {
        s = integ.step(&s).unwrap().state;
        assert!(s.max_divergence() <= 1e-12, "divergence {}", s.max_divergence());
    }
}

#[test]
fn gronwall_holds_for_exact_exponential() {
    let t: Vec<f64> = (0..=200).map(|i| i as f64 * 0.01).collect();
    let f: Vec<f64> = t.iter().map(|t| (0.3 * t).exp()).collect();
    let zero = vec![0.0; t.len()];
    let h = vec![0.3; t.len()];
    let r = gronwall_check(&t, &f, &zero, &h, 1.0, 1e-9);
    assert_eq!(r.verdict, Verdict::Pass, "{r}");
    let area = cumulative_trapezoid(&t, &h);
    assert!((area[t.len() - 1] - 0.6).abs() <= 1e-12);
}

#[test]
fn cubic_integrals_match_resolved_quadrature() {
    // |u|²|∇u|² of a band-limited field is a trigonometric polynomial resolved
    // on the finer grid; the coarse grid must agree to roundoff.
    let coarse = GridSpec::new(8).unwrap();
    let fine = GridSpec::new(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = random_solenoidal(coarse, &mut rng);
    let beta3 = DampingSpec::Power { alpha: 1.0, beta: 3.0 };
    let a = damping_integrals(&Transform::new(GridSpec::new(16).unwrap()), &u.resampled(GridSpec::new(16).unwrap()), &beta3);
    let b = damping_integrals(&Transform::new(fine), &u.resampled(fine), &beta3);
    assert!((a.d_beta_grad - b.d_beta_grad).abs() <= 1e-12 * b.d_beta_grad);
}
