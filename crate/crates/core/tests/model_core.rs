mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use tardos_core::model::*;
use tardos_core::numeric::quad::{integrate_sin2, Tolerance};

#[test]
fn g_functions_at_symmetry_point() {
    assert_eq!(g1(0.5, 0.01).unwrap(), 1.0);
    assert_eq!(g0(0.5, 0.01).unwrap(), -1.0);
}

#[test]
fn g_pairing_cancels() {
    for p in [0.1, 0.3, 0.7] {
        let s = p * g1(p, 0.01).unwrap() + (1.0 - p) * g0(p, 0.01).unwrap();
        assert!(s.abs() < 1e-15, "p = {p}: {s}");
    }
}

#[test]
fn g0_mirrors_g1() {
    for k in 1..=19 {
        let p = k as f64 * 0.05;
        let a = g0(p, 0.01).unwrap();
        let b = -g1(1.0 - p, 0.01).unwrap();
        assert!((a - b).abs() <= 1e-15 * a.abs(), "p = {p}");
    }
}

#[test]
fn g_values_against_high_precision() {
    let h = common::Hp::new();
    let t = 1.0 / 3000.0;
    let exact = h.sqrt(&h.int(2999));
    let got = g1(t, t).unwrap();
    assert!((got / h.to_f64(&exact) - 1.0).abs() < 1e-14);
    assert!((got - 54.763).abs() < 5e-4);

    let nine = h.div(&h.f(0.9), &h.f(0.1));
    let exact = -h.to_f64(&h.sqrt(&nine));
    assert!((g0(0.9, 0.01).unwrap() - exact).abs() < 1e-14);
    assert!((exact + 3.0).abs() < 1e-14);
}

#[test]
fn g_outside_support_is_domain_error() {
    assert!(g1(0.001, 0.01).is_err());
    assert!(g0(0.995, 0.01).is_err());
}

#[test]
fn g_strictly_decreasing_on_grid() {
    let t = 1.0 / 300.0;
    let grid: Vec<f64> = (0..1000)
        .map(|k| t + (1.0 - 2.0 * t) * k as f64 / 999.0)
        .collect();
    for w in grid.windows(2) {
        assert!(g1(w[1], t).unwrap() < g1(w[0], t).unwrap());
        assert!(g0(w[1], t).unwrap() < g0(w[0], t).unwrap());
    }
}

#[test]
fn arcsine_density_at_centre_approaches_two_over_pi() {
    let d = BiasDistribution::tardos(1e-12).unwrap();
    assert!((bias_density(&d, 0.5).unwrap() - 2.0 / PI).abs() < 1e-5);
}

#[test]
fn densities_normalize() {
    for dist in [
        BiasDistribution::tardos(0.01).unwrap(),
        BiasDistribution::beta(0.5, 0.5, 0.01).unwrap(),
        BiasDistribution::beta(2.0, 2.0, 0.02).unwrap(),
        BiasDistribution::beta(0.7, 1.3, 0.005).unwrap(),
    ] {
        let t = dist.t();
        let area = integrate_sin2(|p, q| dist.density_pq(p, q), t, Tolerance::default())
            .unwrap()
            .value;
        assert!((area - 1.0).abs() < 1e-9, "{dist:?}: {area}");
    }
}

#[test]
fn beta_half_half_matches_arcsine() {
    let t = 0.01;
    let a = BiasDistribution::tardos(t).unwrap();
    let b = BiasDistribution::beta(0.5, 0.5, t).unwrap();
    for k in 0..=50 {
        let p = t + (1.0 - 2.0 * t) * k as f64 / 50.0;
        let (x, y) = (bias_density(&a, p).unwrap(), bias_density(&b, p).unwrap());
        assert!((x - y).abs() < 1e-9 * x, "p = {p}");
    }
}

#[test]
fn densities_symmetric() {
    for dist in [
        BiasDistribution::tardos(0.003).unwrap(),
        BiasDistribution::beta(3.0, 3.0, 0.01).unwrap(),
        BiasDistribution::beta(0.8, 0.8, 0.01).unwrap(),
    ] {
        for k in 0..100 {
            let p = 0.01 + 0.49 * k as f64 / 100.0;
            let (x, y) = (
                bias_density(&dist, p).unwrap(),
                bias_density(&dist, 1.0 - p).unwrap(),
            );
            assert!((x - y).abs() <= 1e-13 * x);
        }
    }
}

#[test]
fn nu_is_one_for_tardos_weights() {
    for dist in [
        BiasDistribution::tardos(1.0 / 3000.0).unwrap(),
        BiasDistribution::beta(0.5, 0.5, 0.01).unwrap(),
        BiasDistribution::beta(1.0, 1.0, 0.01).unwrap(),
        BiasDistribution::beta(2.0, 2.0, 0.01).unwrap(),
        BiasDistribution::beta(0.6, 0.9, 0.002).unwrap(),
    ] {
        let v = nu(&dist, &AccusationFn::TARDOS).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{dist:?}: {v}");
    }
}

#[test]
fn nu_for_constant_weights_matches_closed_form() {
    // With p = sin^2 r, f dp = 2 dr/(pi - 4t') and p/(1-p) = tan^2 r, so
    // nu = 4/(pi - 4t') [tan r - r] from t' to pi/4.
    let t = 0.01;
    let tp = tprime(t);
    let expect = 4.0 / arcsine_norm(t) * (1.0 - PI / 4.0 - tp.tan() + tp);
    let got = nu(
        &BiasDistribution::tardos(t).unwrap(),
        &AccusationFn::CONSTANT,
    )
    .unwrap();
    assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
}

#[test]
fn derived_constants() {
    let p = SchemeParams::direct(100, 1000, 10, 1e-3, 0.5, 1.0 / 3000.0, 50.0).unwrap();
    let d = DerivedConstants::for_params(&p).unwrap();
    assert!((d.tau - 1.0 / 300.0).abs() < 1e-15);
    assert!(d.tprime > 0.0 && d.tprime < PI / 4.0);
    assert!((d.nu - 1.0).abs() < 1e-9);
}

#[test]
fn params_from_ab_follow_ceiling_rules() {
    // ceil(ln 1e10) = 24.
    let p = SchemeParams::from_ab(1000, 20, 1e-10, 0.5, 1.0 / 6000.0, 41.31, 12.86).unwrap();
    assert_eq!(p.m(), (41.31f64 * 400.0 * 24.0).ceil() as u64);
    assert!((p.z() - 12.86 * 20.0 * 24.0).abs() < 1e-9);
}

#[test]
fn params_key_value_round_trip() {
    let p = SchemeParams::from_ab(1000, 20, 1e-10, 0.5, 1.0 / 6000.0, 41.31, 12.86).unwrap();
    let q = SchemeParams::parse_kv_str(&p.to_kv_string()).unwrap();
    assert_eq!(p, q);
    let d = SchemeParams::direct(7, 99, 3, 0.1, 0.2, 0.05, 3.25).unwrap();
    assert_eq!(SchemeParams::parse_kv_str(&d.to_kv_string()).unwrap(), d);
}

#[test]
fn params_validation() {
    assert!(SchemeParams::direct(0, 10, 2, 0.1, 0.1, 0.01, 1.0).is_err());
    assert!(SchemeParams::direct(10, 10, 2, 1.0, 0.1, 0.01, 1.0).is_err());
    assert!(SchemeParams::direct(10, 10, 2, 0.1, 0.1, 0.5, 1.0).is_err());
    assert!(SchemeParams::direct(10, 10, 200, 0.1, 0.1, 0.01, 1.0).is_err());
}

proptest! {
    #[test]
    fn pairing_holds_everywhere(p in 1e-6f64..(1.0 - 1e-6)) {
        let s = p * g1_raw(p) + (1.0 - p) * g0_raw(p);
        prop_assert!(s.abs() <= 4.0 * f64::EPSILON * (p * g1_raw(p)).abs().max(1.0));
    }

    #[test]
    fn power_family_pairing(p in 0.001f64..0.999, gamma in 0.0f64..0.99) {
        let g = AccusationFn::power(gamma).unwrap();
        let s = p * g.g1(p) + (1.0 - p) * g.g0(p);
        prop_assert!(s.abs() < 1e-12 * g.g1(p).abs().max(1.0));
    }
}
