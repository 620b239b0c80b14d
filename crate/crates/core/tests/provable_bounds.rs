#![allow(clippy::excessive_precision)]

mod common;

use std::f64::consts::PI;

use tardos_core::bounds::*;
use tardos_core::error::Error;
use tardos_core::model::{AccusationFn, BiasDistribution};
use tardos_core::rng::{Purpose, Stream};
use tardos_core::search::*;

fn inputs(c0: u32, tau: f64, omega: f64, eps1: f64, eps2: f64) -> TheoremInputs {
    TheoremInputs {
        c0,
        tau,
        omega,
        eps1,
        eps2,
    }
}

#[test]
fn provable_large_coalition_example() {
    let out = theorem1_params(&inputs(10_000, 0.01, 0.01, 1e-10, 0.5)).unwrap();
    let base = 4.0 * PI * PI;
    assert!(out.a > base && out.a < 1.3 * base, "A = {}", out.a);
    assert!((out.b * out.b / 4.0 - out.a).abs() < 1e-12 * out.a);
}

#[test]
fn provable_xi_limits() {
    let same = theorem1_params(&inputs(2000, 0.02, 0.05, 1e-8, 1e-8)).unwrap();
    assert!(same.xi > 0.0);
    let mut last = f64::INFINITY;
    for eps2 in [0.5, 0.9, 0.99, 0.999_999] {
        let out = theorem1_params(&inputs(2000, 0.02, 0.05, 1e-8, eps2)).unwrap();
        assert!(out.xi < last);
        last = out.xi;
    }
    assert!(last < 1e-8, "{last}");
}

// 40-digit reference values for c0 = 2000, tau = 0.02, omega = 0.05,
// eps1 = 1e-10, eps2 = 0.5.
const FROZEN_D: f64 = 0.002_351_454_868_909_208_7;
const FROZEN_DELTA: f64 = 0.197_079_632_679_489_66;
const FROZEN_XI: f64 = 3.846_750_558_960_757_7e-5;
const FROZEN_A: f64 = 61.241_835_598_405_515;
const FROZEN_B: f64 = 15.651_432_598_763_030;

#[test]
fn provable_frozen_regression() {
    let out = theorem1_params(&inputs(2000, 0.02, 0.05, 1e-10, 0.5)).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
    assert!(close(out.d, FROZEN_D), "{}", out.d);
    assert!(close(out.delta, FROZEN_DELTA), "{}", out.delta);
    assert!((out.xi - FROZEN_XI).abs() < 1e-15, "{}", out.xi);
    assert!(close(out.a, FROZEN_A), "{}", out.a);
    assert!(close(out.b, FROZEN_B), "{}", out.b);
    // ceil(ln 1e10) = 24
    assert_eq!(out.m, (FROZEN_A * 2000.0 * 2000.0 * 24.0).ceil() as u64);
}

#[test]
fn provable_matches_high_precision_recompute() {
    let mut h = common::Hp::new();
    let (c, tau, omega) = (h.int(2000), h.f(0.02), h.f(0.05));
    let one = h.int(1);
    let pi = h.pi();
    let e = h.exp(&one);
    let s17 = h.f(1.7);
    let ratio = h.div(&omega, &s17);
    let d = h.mul(&e, &h.mul(&ratio, &ratio));
    let expo = h.add(
        &tau,
        &h.mul(
            &h.div(&h.mul(&s17, &h.sqrt(&tau)), &omega),
            &h.sqrt(&h.sub(&c, &tau)),
        ),
    );
    let ln_d = h.ln(&d);
    let d_pow = h.exp(&h.mul(&expo, &ln_d));
    let e17 = h.exp(&s17);
    let tail = h.div(
        &h.mul(&h.mul(&e17, &pi), &c),
        &h.mul(&omega, &h.sub(&one, &d)),
    );
    let delta = h.add(
        &h.add(&h.mul(&h.int(2), &tau), &h.mul(&pi, &omega)),
        &h.mul(&tail, &d_pow),
    );
    let half = h.f(0.5);
    let ln_half = h.ln(&half);
    let ln_eps = h.ln(&h.f(1e-10));
    let r = h.div(&ln_half, &ln_eps);
    let one_m_delta = h.sub(&one, &delta);
    let inner = h.add(
        &one,
        &h.mul(&h.div(&one_m_delta, &h.mul(&h.mul(&pi, &omega), &c)), &r),
    );
    let xi = h.sub(&h.sqrt(&inner), &one);
    let opx = h.add(&one, &xi);
    let b = h.div(&h.mul(&h.mul(&h.int(4), &pi), &opx), &one_m_delta);
    let a = h.div(&h.mul(&b, &b), &h.int(4));

    let out = theorem1_params(&inputs(2000, 0.02, 0.05, 1e-10, 0.5)).unwrap();
    let (a, b, xi, delta) = (h.to_f64(&a), h.to_f64(&b), h.to_f64(&xi), h.to_f64(&delta));
    assert!((out.a - a).abs() <= 1e-12 * a, "{} vs {a}", out.a);
    assert!((out.b - b).abs() <= 1e-12 * b);
    assert!((out.xi - xi).abs() <= 1e-9 * xi);
    assert!((out.delta - delta).abs() <= 1e-13);
    assert!((a - FROZEN_A).abs() <= 1e-12 * a);
}

#[test]
fn provable_outside_regime() {
    assert!(matches!(
        theorem1_params(&inputs(5, 0.001, 0.05, 1e-6, 0.5)),
        Err(Error::Regime(_))
    ));
    // pi omega alone pushes delta past 1.
    assert!(theorem1_params(&inputs(10_000, 0.01, 0.4, 1e-6, 0.5)).is_err());
    assert!(theorem1_params(&inputs(10_000, 0.01, 0.01, 1e-6, 1.0)).is_err());
}

#[test]
fn window_optimum_is_upper_end() {
    let w = lemma1_window(1.0, 3.3, 0.002, 25, 1e-10, 0.5, None).unwrap();
    assert_eq!(w.b, w.b_opt);
    assert!((w.a_high - w.a_opt).abs() <= 1e-12 * w.a_opt);
    assert!(w.a_low < w.a_high);
    assert!(w.b_collapse < w.b_opt);
    let c = lemma1_window(1.0, 3.3, 0.002, 25, 1e-10, 0.5, Some(w.b_collapse)).unwrap();
    assert!((c.a_high - c.a_low).abs() <= 1e-9 * c.a_high);
    assert!(matches!(
        lemma1_window(1.0, 3.3, 0.002, 25, 1e-10, 0.5, Some(w.b_collapse * 0.999)),
        Err(Error::EmptyWindow { .. })
    ));
}

#[test]
fn window_small_psi_limit() {
    let w = lemma1_window(1.0, PI, 0.01, 100, 1e-10, 1.0 - 1e-12, None).unwrap();
    assert!(w.psi < 1e-12);
    assert!((w.a_opt - 4.0 * PI * PI).abs() < 1e-9);
    let w = lemma1_window(1.7, 2.9, 0.01, 100, 1e-10, 1.0 - 1e-12, None).unwrap();
    assert!((w.a_opt - 4.0 * 1.7 * 2.9 * 2.9).abs() < 1e-9);
}

#[test]
fn window_reproduces_closed_form() {
    for (c0, tau, omega, eps1, eps2) in [
        (2000, 0.02, 0.05, 1e-10, 0.5),
        (10_000, 0.01, 0.01, 1e-10, 0.5),
        (10_000, 0.01, 0.01, 1e-6, 1e-6),
        (50_000, 0.005, 0.02, 1e-12, 0.1),
    ] {
        let th = theorem1_params(&inputs(c0, tau, omega, eps1, eps2)).unwrap();
        let l = PI / (1.0 - th.delta);
        let w = lemma1_window(1.0, l, omega / c0 as f64, c0, eps1, eps2, None).unwrap();
        assert!(
            (w.a_opt - th.a).abs() <= 1e-9 * th.a,
            "{} vs {}",
            w.a_opt,
            th.a
        );
        assert!((w.b_opt - th.b).abs() <= 1e-9 * th.b);
        assert!((w.psi - th.xi).abs() <= 1e-9 * th.xi.max(1e-6));
    }
}

#[test]
fn general_condition_matches_tardos_specialization() {
    let mut s = Stream::new(31, Purpose::Search, 0);
    let mut checked = 0;
    while checked < 200 {
        let c0 = 2 + (s.next_u64() % 99) as u32;
        let t = (s.uniform_open((1e-5f64).ln(), (0.02f64).ln())).exp();
        let l = s.uniform_open(2.5, 6.0);
        // Keep D well below 1.
        let alpha2 = s.uniform_open(0.01, 0.9) * 1.7 / (c0 as f64 * std::f64::consts::E.sqrt());
        let tar = check_cond_tar(c0, t, alpha2, l).unwrap();
        let gen = check_general_condition(&GeneralConditionInputs {
            dist: BiasDistribution::tardos(t).unwrap(),
            g1: AccusationFn::TARDOS,
            c: c0,
            alpha2,
            l,
            beta: 0.5,
        })
        .unwrap();
        assert!(
            (tar.lhs - gen.check.lhs).abs() < 1e-10,
            "c0 = {c0}, t = {t}, alpha2 = {alpha2}: {} vs {}",
            tar.lhs,
            gen.check.lhs
        );
        assert_eq!(tar.rhs, gen.check.rhs);
        assert!((gen.nu - 1.0).abs() < 1e-9);
        checked += 1;
    }
}

#[test]
fn general_condition_small_alpha2() {
    // For alpha2 -> 0 the condition reads 1/L < c E[p^c g1] - K.
    let dist = BiasDistribution::tardos(0.001).unwrap();
    let probe = |l: f64, alpha2: f64| {
        check_general_condition(&GeneralConditionInputs {
            dist,
            g1: AccusationFn::TARDOS,
            c: 10,
            alpha2,
            l,
            beta: 0.5,
        })
        .unwrap()
    };
    let terms = probe(3.0, 1e-7);
    let lead = terms.c_e_pc_g1 - terms.k_sum;
    assert!(lead > 0.0);
    assert!(probe(1.02 / lead, 1e-7).check.satisfied);
    assert!(!probe(0.98 / lead, 1e-7).check.satisfied);
    assert!(!probe(3.0, 0.0).check.satisfied);
}

#[test]
fn general_condition_rejects_large_delta() {
    let r = check_general_condition(&GeneralConditionInputs {
        dist: BiasDistribution::tardos(0.001).unwrap(),
        g1: AccusationFn::TARDOS,
        c: 10,
        alpha2: 0.2,
        l: 3.0,
        beta: 0.5,
    });
    assert!(matches!(r, Err(Error::Regime(_))));
}

#[test]
fn search_is_deterministic_and_verified() {
    let a = search_min_a_ratio(12, 0.05, 20_000, 7).unwrap();
    let b = search_min_a_ratio(12, 0.05, 20_000, 7).unwrap();
    assert_eq!(a, b);
    let v = verify(&a).unwrap();
    assert!(v.all(), "{v:?}");
    assert!(a.a <= a.a_drawn + 1e-9);
    assert!((a.b - 2.0 * a.a.sqrt()).abs() < 0.05);
    let c = search_min_a_ratio(12, 0.05, 20_000, 8).unwrap();
    assert!(verify(&c).unwrap().all());
}

#[test]
fn search_independent_of_thread_count() {
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| search_min_a_ratio(20, 0.1, 30_000, 3).unwrap())
    };
    assert_eq!(run(1), run(8));
}

#[test]
fn search_rejects_bad_inputs() {
    assert!(search_min_a_ratio(10, 0.02, 0, 1).is_err());
    assert!(search_min_a_ratio(0, 0.02, 10, 1).is_err());
    assert!(search_min_a_ratio(10, -1.0, 10, 1).is_err());
    assert!(search_min_a(10, 1e-10, 1.5, 10, 1).is_err());
}

#[test]
fn search_by_epsilons_uses_log_ratio() {
    let a = search_min_a(15, 1e-10, 1e-10f64.powf(0.04), 5_000, 2).unwrap();
    let b = search_min_a_ratio(15, 0.04, 5_000, 2).unwrap();
    assert!((a.r - 0.04).abs() < 1e-12);
    assert!((a.a - b.a).abs() < 1e-9 * b.a);
}

#[test]
fn table_cell_equals_single_search() {
    let cells = emit_table1(&[10, 20], &[0.02, 0.1], 5_000, 11).unwrap();
    assert_eq!(cells.len(), 4);
    for cell in &cells {
        let single = search_min_a_ratio(cell.c0, cell.r, 5_000, 11).unwrap();
        assert_eq!(cell.result.as_ref().unwrap(), &single);
    }
    let csv = table_to_csv(&cells);
    assert!(csv.lines().count() >= 2);
    assert!(emit_table1(&[], &[0.02], 10, 1).is_err());
}
