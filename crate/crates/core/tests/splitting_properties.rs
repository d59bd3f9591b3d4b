use proptest::prelude::*;
use splitcd::experiments::{builtin, run_sweep, KPolicySpec, SweepOptions, VelocitySpec};
use splitcd::flows::propagate;
use splitcd::mesh::{discrete_l2, sample, FaceField, GridField, Mesh};
use splitcd::operators::{BoundaryData, EllipticCoefficients};
use splitcd::splitting::{build_scheme, decompose_convection, integrate, lie_step, KPolicy, Problem, SchemeKind};

fn smooth_problem(n: usize, amp: f64, phase: f64) -> Problem {
    let mesh = Mesh::uniform(2, -0.5, 1.0, n).unwrap();
    let velocity = FaceField::from_fn(&mesh, |x, v| {
        v[0] = amp * (1.0 + 0.5 * (3.0 * x[1] + phase).sin());
        v[1] = amp * (0.5 - x[0] * x[0]);
    })
    .unwrap();
    Problem {
        mesh,
        coeffs: EllipticCoefficients::Isotropic { nu: 0.1 },
        velocity,
        boundary: BoundaryData::constant(1.0),
        source: None,
    }
}

fn bump(mesh: &Mesh) -> GridField {
    sample(|_, x| 1.0 + (-10.0 * ((x[0] - 0.2).powi(2) + (x[1] - 0.3).powi(2))).exp(), mesh, 0.0).unwrap()
}

fn l2_gap(like: &GridField, a: &[f64], b: &[f64]) -> f64 {
    discrete_l2(&like.with_values(a.iter().zip(b).map(|(x, y)| x - y).collect()))
}

#[test]
fn lie_step_has_second_order_local_error() {
    let p = smooth_problem(10, 1.0, 0.0);
    let tol = 1e-13;
    let scheme = build_scheme(SchemeKind::Classical, &p, &KPolicy::Median10, tol).unwrap();
    let full = p.full_system().unwrap();
    let u0 = bump(&p.mesh);
    let local = |tau: f64| {
        let split = lie_step(&scheme, u0.values(), 0.0, tau).unwrap();
        let exact = propagate(&full, u0.values(), 0.0, tau, tol).unwrap();
        l2_gap(&u0, &split, &exact)
    };
    let ratio = local(0.02) / local(0.01);
    assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn schemes_coincide_above_the_sup(amp in 0.1f64..5.0, phase in 0.0f64..6.0, extra in 1.0f64..100.0) {
        let p = smooth_problem(7, amp, phase);
        let tol = 1e-10;
        let k = p.velocity.max_magnitude() * extra;
        let u0 = bump(&p.mesh);
        let run = |kind| {
            let s = build_scheme(kind, &p, &KPolicy::Fixed(k), tol).unwrap();
            integrate(&s, u0.values(), 0.1, 0.025, false).unwrap().final_state().to_vec()
        };
        let (c, a) = (run(SchemeKind::Classical), run(SchemeKind::Adapted));
        prop_assert!(l2_gap(&u0, &c, &a) <= 10.0 * tol * discrete_l2(&u0).max(1.0));
    }

    #[test]
    fn decomposition_invariants(amp in 0.1f64..50.0, phase in 0.0f64..6.0, k in 0.01f64..30.0) {
        let p = smooth_problem(7, amp, phase);
        let (bounded, remainder) = decompose_convection(&p.velocity, k).unwrap();
        for ((c, b), r) in p.velocity.iter_vectors().zip(bounded.iter_vectors()).zip(remainder.iter_vectors()) {
            let mag = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(mag(b) <= k * (1.0 + 1e-15));
            if mag(c) <= k {
                prop_assert!(r.iter().all(|&x| x == 0.0));
            }
            for i in 0..c.len() {
                prop_assert!((b[i] + r[i] - c[i]).abs() <= f64::EPSILON * c[i].abs());
            }
        }
    }
}

#[test]
fn adapted_operators_sum_to_the_full_operator() {
    let p = smooth_problem(9, 3.0, 1.0);
    let full = p.full_system().unwrap();
    for k in [0.5, 2.0, 1e3] {
        let s = build_scheme(SchemeKind::Adapted, &p, &KPolicy::Fixed(k), 1e-10).unwrap();
        let sum = s.convection.operator().add(s.diffusion.operator()).unwrap();
        assert!(sum.max_abs_diff(full.operator()) <= 1e-12 * full.operator().norm1());
    }
}

#[test]
fn bounded_field_gives_first_order() {
    let mut spec = builtin("ex1").unwrap();
    spec.n = vec![28, 28];
    spec.velocity = VelocitySpec::Clipped { cap: 5.0 };
    spec.k_policy = KPolicySpec::Fixed { k: 1.0 };
    let out = run_sweep(&spec, &SweepOptions::default()).unwrap();
    println!("{}", out.report.table());
    let slope = out.report.slope_adapted.unwrap();
    assert!((0.85..=1.15).contains(&slope), "adapted slope {slope}");
}

#[test]
fn positivity_is_retained() {
    let mut spec = builtin("ex1").unwrap();
    spec.n = vec![28, 28];
    let problem = spec.problem().unwrap();
    let u0 = spec.initial_field().unwrap();
    let top = u0.values().iter().copied().fold(f64::MIN, f64::max);
    for kind in [SchemeKind::Classical, SchemeKind::Adapted] {
        let s = build_scheme(kind, &problem, &KPolicy::Fixed(1.0), 1e-10).unwrap();
        for tau in [0.1, 0.025] {
            let traj = integrate(&s, u0.values(), 0.1, tau, true).unwrap();
            assert!(traj.min_value >= -1e-10 * top, "{kind} tau {tau}: min {}", traj.min_value);
        }
    }
}
