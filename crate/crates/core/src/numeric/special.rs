//! Complementary error function, its inverse, and log-binomials.

use std::f64::consts::{FRAC_2_SQRT_PI, SQRT_2};

use crate::error::{domain, Result};

const FRAC_1_SQRT_PI: f64 = 0.5 * FRAC_2_SQRT_PI;

/// `exp(-x^2)` with the rounding error of `x*x` carried into the result.
fn exp_neg_sq(x: f64) -> f64 {
    let hi = x * x;
    let lo = x.mul_add(x, -hi);
    (-hi).exp() * (1.0 - lo)
}

fn erf_series(x: f64) -> f64 {
    // erf(x) = 2/sqrt(pi) e^{-x^2} sum_n 2^n x^{2n+1} / (2n+1)!!
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    FRAC_2_SQRT_PI * exp_neg_sq(x) * sum
}

fn erfc_cf(x: f64) -> f64 {
    // erfc(x) = e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    // evaluated with the modified Lentz algorithm.
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..5000 {
        let a = n as f64 * 0.5;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    FRAC_1_SQRT_PI * exp_neg_sq(x) / f
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.0 {
        1.0 - erf_series(x)
    } else if x > 27.3 {
        0.0
    } else {
        erfc_cf(x)
    }
}

pub fn erf(x: f64) -> f64 {
    if x.abs() < 2.0 {
        if x < 0.0 {
            -erf_series(-x)
        } else {
            erf_series(x)
        }
    } else {
        1.0 - erfc(x)
    }
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Inverse of [`erfc`] on `(0, 2)`.
pub fn erfc_inv(y: f64) -> Result<f64> {
    if !(y > 0.0 && y < 2.0) {
        return Err(domain("erfc_inv argument", y, "(0, 2)"));
    }
    if y == 1.0 {
        return Ok(0.0);
    }
    if y > 1.0 {
        return Ok(-erfc_inv_upper(2.0 - y));
    }
    Ok(erfc_inv_upper(y))
}

// Solves erfc(x) = y for y in (0, 1), x >= 0, by safeguarded Newton on
// h(x) = ln erfc(x) - ln y, which is concave and close to quadratic.
fn erfc_inv_upper(y: f64) -> f64 {
    let target = y.ln();
    let (mut lo, mut hi) = (0.0_f64, 27.3_f64);
    // Asymptotic start: erfc(x) ~ e^{-x^2}/(x sqrt(pi)).
    let mut x = if y < 0.1 {
        let l = -target - 0.5 * std::f64::consts::PI.ln();
        let x0 = l.max(0.5).sqrt();
        (l - x0.ln()).max(0.25).sqrt()
    } else {
        (1.0 - y) * 0.886
    };
    for _ in 0..100 {
        let e = erfc(x);
        let h = e.ln() - target;
        if h > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dh = -FRAC_2_SQRT_PI * exp_neg_sq(x) / e;
        let mut next = x - h / dh;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) {
            return next;
        }
        x = next;
    }
    x
}

/// Table of `ln k!` for `k = 0..=n`.
#[derive(Clone, Debug)]
pub struct LnFactorial {
    table: Vec<f64>,
}

impl LnFactorial {
    pub fn new(n: usize) -> Self {
        let mut table = Vec::with_capacity(n + 1);
        table.push(0.0);
        let mut acc = 0.0;
        for k in 1..=n {
            acc += (k as f64).ln();
            table.push(acc);
        }
        LnFactorial { table }
    }

    pub fn ln_fact(&self, k: usize) -> f64 {
        self.table[k]
    }

    /// `ln C(n, k)`.
    pub fn ln_choose(&self, n: usize, k: usize) -> f64 {
        self.table[n] - self.table[k] - self.table[n - k]
    }
}
