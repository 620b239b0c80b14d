//! Globally adaptive Gauss-Kronrod (10/21 point) quadrature.
#![allow(clippy::excessive_precision)]

use std::collections::BinaryHeap;
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Requested accuracy: stop once the error estimate is below
/// `max(abs, rel * |estimate|)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Tolerance { abs, rel }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::new(1e-12, 1e-12)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

const MAX_INTERVALS: usize = 4000;

// Kronrod abscissae; odd indices are the 10-point Gauss nodes.
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_600_525_242_025,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    for k in 0..10 {
        let dx = half * XGK[k];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integrate `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<QuadResult> {
    integrate_with_breaks(f, &[a, b], tol)
}

/// Integrate over `[breaks[0], breaks[last]]`, seeding the subdivision with
/// the given interior points (kinks, peaks).
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<QuadResult> {
    assert!(breaks.len() >= 2, "need at least two break points");
    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(gk21(&f, w[0], w[1]));
            evaluations += 21;
        }
    }
    loop {
        let (value, error) = heap
            .iter()
            .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
        let target = tol.abs.max(tol.rel * value.abs());
        if !value.is_finite() {
            return Err(Error::Quadrature {
                estimate: value,
                achieved: error,
                requested: target,
            });
        }
        if error <= target {
            return Ok(QuadResult {
                value,
                error,
                evaluations,
            });
        }
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature {
                estimate: value,
                achieved: error,
                requested: target,
            });
        }
        let worst = heap.pop().expect("heap is never empty here");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            return Err(Error::Quadrature {
                estimate: value,
                achieved: error,
                requested: target,
            });
        }
        heap.push(gk21(&f, worst.a, mid));
        heap.push(gk21(&f, mid, worst.b));
        evaluations += 42;
    }
}

/// Integrate `g(p, 1 - p)` over `[t, 1 - t]` through the substitution
/// `p = sin^2 r`, `dp = 2 sin r cos r dr`.
///
/// The arcsine-type endpoint behaviour `p^{-1/2}`, `(1-p)^{-1/2}` becomes
/// smooth in `r`. The closure receives `p = sin^2 r` and `q = cos^2 r`
/// computed separately so that `1 - p` keeps full relative precision near
/// `p = 1`.
pub fn integrate_sin2<G: Fn(f64, f64) -> f64>(g: G, t: f64, tol: Tolerance) -> Result<QuadResult> {
    integrate_sin2_range(g, t, 1.0 - t, tol)
}

/// Like [`integrate_sin2`] but over an arbitrary `[lo, hi]` inside `[0, 1]`.
pub fn integrate_sin2_range<G: Fn(f64, f64) -> f64>(
    g: G,
    lo: f64,
    hi: f64,
    tol: Tolerance,
) -> Result<QuadResult> {
    let r_lo = lo.sqrt().asin();
    // acos(sqrt(1 - hi)) keeps precision when hi is close to 1.
    let r_hi = FRAC_PI_2 - (1.0 - hi).sqrt().asin();
    let integrand = |r: f64| {
        let (s, c) = r.sin_cos();
        g(s * s, c * c) * 2.0 * s * c
    };
    let mid = 0.5 * (r_lo + r_hi);
    integrate_with_breaks(integrand, &[r_lo, mid, r_hi], tol)
}
