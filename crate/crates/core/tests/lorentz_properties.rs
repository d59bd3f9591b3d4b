use proptest::prelude::*;
use splitcd::lorentz::{
    delta_threshold, distance_to_bounded, geometric_levels, inverse_radius, lorentz_norm, select_truncation_level,
    truncate, weak_norm, LorentzParams, SampledFunction, SamplingGrid,
};

/// Values on a shared set of cells, so products are pointwise.
fn field_pair() -> impl Strategy<Value = (SampledFunction, SampledFunction)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(0.001f64..1.0, n),
        )
            .prop_map(|(f, g, w)| (SampledFunction::new(f, w.clone()).unwrap(), SampledFunction::new(g, w).unwrap()))
    })
}

fn norm(g: &SampledFunction, p: f64, q: f64) -> f64 {
    if q.is_infinite() {
        weak_norm(g, p)
    } else {
        lorentz_norm(g, &LorentzParams::new(p, q, 2).unwrap()).unwrap()
    }
}

fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hoelder_inequality((f, g) in field_pair(), p in 1.05f64..8.0, q in 1.05f64..8.0) {
        let fg = SampledFunction::new(
            f.values().iter().zip(g.values()).map(|(a, b)| a * b).collect(),
            f.weights().to_vec(),
        )
        .unwrap();
        let lhs = fg.integral_abs();
        let rhs = norm(&f, p, q) * norm(&g, conjugate(p), conjugate(q));
        prop_assert!(lhs <= rhs, "{lhs} > {rhs}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// `|g|_{p,r} <= (q/p)^{1/q - 1/r} |g|_{p,q}` for `q < r`.
    #[test]
    fn inclusion_chain((g, _) in field_pair(), p in 1.1f64..6.0, q in 1.05f64..4.0, dr in 0.1f64..6.0) {
        let r = q + dr;
        let bound = (q / p).powf(1.0 / q - 1.0 / r);
        let ratio = norm(&g, p, r) / norm(&g, p, q);
        prop_assert!(ratio <= bound * (1.0 + 1e-12), "ratio {ratio} above {bound}");
        let weak = norm(&g, p, f64::INFINITY) / norm(&g, p, q);
        prop_assert!(weak <= (q / p).powf(1.0 / q) * (1.0 + 1e-12), "weak ratio {weak}");
    }

    #[test]
    fn remainder_vanishes_above_sup((g, _) in field_pair(), p in 1.5f64..4.0) {
        let top = g.sup_abs();
        let r = g.map(|s| s - truncate(s, top));
        prop_assert_eq!(weak_norm(&r, p), 0.0);
    }
}

#[test]
fn inclusion_ratios_are_reported() {
    let mut worst: f64 = 0.0;
    for seed in 0..100u32 {
        let n = 5 + (seed as usize % 30);
        let v: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * (seed as f64 + 0.37)).sin() * 7.0).collect();
        let w: Vec<f64> = (0..n).map(|i| 0.01 + ((i * 7 + seed as usize) % 11) as f64 / 10.0).collect();
        let g = SampledFunction::new(v, w).unwrap();
        worst = worst.max(norm(&g, 2.0, 4.0) / norm(&g, 2.0, 1.5));
    }
    let bound = 0.75f64.powf(1.0 / 1.5 - 0.25);
    println!("largest |g|_(2,4) / |g|_(2,1.5) = {worst:.4} (bound {bound:.4})");
    assert!(worst <= bound);
}

#[test]
fn distribution_of_inverse_radius_on_the_disk() {
    let grid = SamplingGrid::unit_disk(1e-12, 16);
    let g = SampledFunction::from_fn(&grid, inverse_radius(1.0)).unwrap();
    let area = splitcd::lorentz::distribution_function(&g, 2.0);
    assert!((area / (std::f64::consts::PI / 4.0) - 1.0).abs() < 0.02, "{area}");
}

#[test]
fn weak_norm_of_inverse_radius_in_three_dimensions() {
    let grid = SamplingGrid::unit_ball(1e-12, 4, 4);
    let g = SampledFunction::from_fn(&grid, inverse_radius(2.0)).unwrap();
    let exact = 2.0 * (4.0 * std::f64::consts::PI / 3.0f64).cbrt();
    assert!((weak_norm(&g, 3.0) / exact - 1.0).abs() < 0.05);
}

#[test]
fn certified_level_is_smallest_passing_level() {
    let grid = SamplingGrid::unit_ball(1e-12, 4, 4);
    // bounded part plus a small singular part
    let g = SampledFunction::from_fn(&grid, |x| {
        let r = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        2.0 + 0.05 / r
    })
    .unwrap();
    let delta = delta_threshold(1.0, 3).unwrap();
    let levels = geometric_levels(0.5, 1e4, 60);
    let level = select_truncation_level(&g, 3, delta, &levels).unwrap();
    assert!(level.certified);
    let i = levels.iter().position(|&k| k == level.k).unwrap();
    let remainder = |k: f64| weak_norm(&g.map(|s| s - truncate(s, k)), 3.0);
    assert!(remainder(level.k) <= delta);
    assert!((remainder(level.k) - level.delta).abs() <= 1e-12 * delta);
    if i > 0 {
        assert!(remainder(levels[i - 1]) > delta);
    }
}

#[test]
fn huge_delta_selects_the_smallest_level() {
    let grid = SamplingGrid::unit_square(40);
    let g = SampledFunction::from_fn(&grid, |x| 1.0 / x[0].abs().max(1e-3)).unwrap();
    let levels = geometric_levels(0.1, 100.0, 10);
    let level = select_truncation_level(&g, 2, 1e9, &levels).unwrap();
    assert_eq!(level.k, 0.1);
    assert!(level.certified);
}

#[test]
fn distance_sequence_decreases_to_the_inverse_radius_limit() {
    let grid = SamplingGrid::unit_disk(1e-12, 16);
    let g = SampledFunction::from_fn(&grid, inverse_radius(3.0)).unwrap();
    let d = distance_to_bounded(&g, 2, &geometric_levels(1.0, 1e3, 7)).unwrap();
    assert!(d.remainders.windows(2).all(|w| w[1] <= w[0]));
    let exact = 3.0 * std::f64::consts::PI.sqrt();
    assert!((d.value / exact - 1.0).abs() < 0.05, "{} vs {exact}", d.value);
}
