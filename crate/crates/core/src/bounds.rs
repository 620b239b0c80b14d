//! Closed-form provable parameters and the completeness conditions.

use std::f64::consts::{E, PI};

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::model::{arcsine_norm, ln_inv_eps_ceil, nu, AccusationFn, BiasDistribution};
use crate::numeric::quad::{integrate_sin2_range, integrate_with_breaks, Tolerance};

/// `e^{1.7}`.
fn e17() -> f64 {
    1.7_f64.exp()
}

/// `ln eps2 / ln eps1`.
pub fn log_ratio(eps1: f64, eps2: f64) -> Result<f64> {
    if !(eps1 > 0.0 && eps1 < 1.0) {
        return Err(domain("eps1", eps1, "(0, 1)"));
    }
    if !(eps2 > 0.0 && eps2 < 1.0) {
        return Err(domain("eps2", eps2, "(0, 1)"));
    }
    Ok(eps2.ln() / eps1.ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TheoremInputs {
    pub c0: u32,
    pub tau: f64,
    pub omega: f64,
    pub eps1: f64,
    pub eps2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TheoremOutputs {
    pub d: f64,
    pub delta: f64,
    pub xi: f64,
    pub a: f64,
    pub b: f64,
    pub m: u64,
    pub z: f64,
}

/// Smallest `c0` for which the closed form applies: `1/(tau (3.4 pi)^2)`.
pub fn theorem1_min_c0(tau: f64) -> f64 {
    1.0 / (tau * (3.4 * PI).powi(2))
}

pub fn theorem1_params(inp: &TheoremInputs) -> Result<TheoremOutputs> {
    let TheoremInputs {
        c0,
        tau,
        omega,
        eps1,
        eps2,
    } = *inp;
    let r = log_ratio(eps1, eps2)?;
    if c0 == 0 {
        return Err(Error::InvalidParams("c0 must be positive".into()));
    }
    let c = c0 as f64;
    if !(tau > 0.0 && tau / c < 0.5) {
        return Err(domain("tau", tau, "(0, c0/2)"));
    }
    if !(omega > 0.0 && omega < 1.0) {
        return Err(domain("omega", omega, "(0, 1)"));
    }
    let min_c0 = theorem1_min_c0(tau);
    if c < min_c0 {
        return Err(Error::Regime(format!(
            "c0 = {c0} is below 1/(tau (3.4 pi)^2) = {min_c0:.3}"
        )));
    }
    let d = E * (omega / 1.7).powi(2);
    if d >= 1.0 {
        return Err(Error::Regime(format!("D = {d} is not below 1")));
    }
    let expo = tau + 1.7 * tau.sqrt() / omega * (c - tau).sqrt();
    let delta = 2.0 * tau + PI * omega + e17() * PI * c / (omega * (1.0 - d)) * d.powf(expo);
    if delta >= 1.0 {
        return Err(Error::Regime(format!("delta = {delta} is not below 1")));
    }
    let xi = (1.0 + (1.0 - delta) / (PI * omega * c) * r).sqrt() - 1.0;
    let a = 4.0 * PI * PI * (1.0 + xi).powi(2) / (1.0 - delta).powi(2);
    let b = 4.0 * PI * (1.0 + xi) / (1.0 - delta);
    let k = ln_inv_eps_ceil(eps1);
    Ok(TheoremOutputs {
        d,
        delta,
        xi,
        a,
        b,
        m: (a * c * c * k).ceil() as u64,
        z: b * c * k,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Lemma1Window {
    pub a_low: f64,
    pub a_high: f64,
    /// The `B` the window was evaluated at.
    pub b: f64,
    /// `4 nu L (1 + psi)`.
    pub b_opt: f64,
    /// `B_opt^2/(4 nu) = 4 nu L^2 (1 + psi)^2`, the upper end of the window
    /// at `B_opt`.
    pub a_opt: f64,
    /// `sqrt(1 + R/(nu L alpha2 c0^2)) - 1`.
    pub psi: f64,
    /// Smallest `B` with a nonempty window, `2 nu L (1 + sqrt(1 + R/(nu L alpha2 c0^2)))`.
    pub b_collapse: f64,
    /// The single admissible `A` at `b_collapse`.
    pub a_collapse: f64,
}

/// The window `[L B + (L/(alpha2 c0^2)) R, B^2/(4 nu)]` of admissible `A`,
/// evaluated at `b` if given and at `B_opt` otherwise.
///
/// `B_opt` lies above the smallest feasible `B` whenever `R > 0`, so the
/// window at `B_opt` is a proper interval with `A_opt` as its upper end;
/// `b_collapse` is where the two ends meet.
pub fn lemma1_window(
    nu: f64,
    l: f64,
    alpha2: f64,
    c0: u32,
    eps1: f64,
    eps2: f64,
    b: Option<f64>,
) -> Result<Lemma1Window> {
    let r = log_ratio(eps1, eps2)?;
    for (name, v) in [("nu", nu), ("L", l), ("alpha2", alpha2)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(domain(name, v, "(0, inf)"));
        }
    }
    let c = c0 as f64;
    let root = (1.0 + r / (nu * l * alpha2 * c * c)).sqrt();
    let psi = root - 1.0;
    let b_opt = 4.0 * nu * l * (1.0 + psi);
    let a_opt = 4.0 * nu * l * l * (1.0 + psi).powi(2);
    let b_collapse = 2.0 * nu * l * (1.0 + root);
    let a_collapse = b_collapse * b_collapse / (4.0 * nu);
    let b = b.unwrap_or(b_opt);
    let a_low = l * b + l / (alpha2 * c * c) * r;
    let a_high = b * b / (4.0 * nu);
    // Rounding can push the collapsed window a few ulps out of order.
    if a_low > a_high * (1.0 + 1e-12) {
        return Err(Error::EmptyWindow {
            low: a_low,
            high: a_high,
        });
    }
    Ok(Lemma1Window {
        a_low,
        a_high,
        b,
        b_opt,
        a_opt,
        psi,
        b_collapse,
        a_collapse,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub satisfied: bool,
    /// `RHS - LHS`; positive when satisfied.
    pub slack: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl ConditionCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        ConditionCheck {
            satisfied: lhs < rhs,
            slack: rhs - lhs,
            lhs,
            rhs,
        }
    }

    fn degenerate() -> Self {
        ConditionCheck {
            satisfied: false,
            slack: 0.0,
            lhs: 1.0,
            rhs: 1.0,
        }
    }
}

/// Tardos-specialized completeness condition:
/// `1 - alpha2 (2(1-t)^c0 - 1)/(pi - 4t') + c0 alpha2^2 + e^{1.7} D^{c0-x_max}/(1-D)
///  < 1 - alpha2/L` with `D = e (c0 alpha2/1.7)^2`.
pub fn check_cond_tar(c0: u32, t: f64, alpha2: f64, l: f64) -> Result<ConditionCheck> {
    crate::model::check_cutoff(t)?;
    if !(l > 0.0) {
        return Err(domain("L", l, "(0, inf]"));
    }
    if alpha2 < 0.0 || alpha2.is_nan() {
        return Err(domain("alpha2", alpha2, "[0, inf)"));
    }
    if alpha2 == 0.0 {
        return Ok(ConditionCheck::degenerate());
    }
    let c = c0 as f64;
    let d = E * (c * alpha2 / 1.7).powi(2);
    if d >= 1.0 {
        return Err(Error::Regime(format!("D = {d} is not below 1")));
    }
    let q = (2.0 * (1.0 - t).powi(c0 as i32) - 1.0) / arcsine_norm(t);
    let expo = (c * t + 1.7 * (t * (1.0 - t)).sqrt() / alpha2).ceil();
    let lhs = 1.0 - alpha2 * q + c * alpha2 * alpha2 + e17() * d.powf(expo) / (1.0 - d);
    Ok(ConditionCheck::new(lhs, 1.0 - alpha2 / l))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeneralConditionInputs {
    pub dist: BiasDistribution,
    pub g1: AccusationFn,
    pub c: u32,
    pub alpha2: f64,
    pub l: f64,
    /// Exponent with `g1(p) >= (1-p)^beta` at the relevant points.
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeneralConditionTerms {
    /// `c E_p[p^c g1(p)]`.
    pub c_e_pc_g1: f64,
    /// `sum_x C(c,x) K_x^bound`.
    pub k_sum: f64,
    pub nu: f64,
    pub delta: f64,
    /// `c - x_max`.
    pub exponent: f64,
    pub check: ConditionCheck,
}

fn shape(dist: &BiasDistribution) -> (f64, f64) {
    match *dist {
        BiasDistribution::TardosArcsine { .. } => (0.5, 0.5),
        BiasDistribution::BetaFamily { a, b, .. } => (a, b),
    }
}

/// Derivative of `s(p) = p f(p) g1(p)`. On the lower half
/// `s = C p^{a-gamma} (1-p)^{b-1+gamma}`; the upper half mirrors the roles.
fn s_prime(dist: &BiasDistribution, g: &AccusationFn, p: f64, q: f64) -> f64 {
    let (a, b) = shape(dist);
    let gam = g.gamma();
    let s = p * dist.density_pq(p, q) * g.g1_pq(p, q);
    let (u, v) = (a - gam, b - 1.0 + gam);
    if p <= 0.5 {
        s * (u / p - v / q)
    } else {
        s * (v / p - u / q)
    }
}

/// The general completeness condition for arbitrary `f`, `g1` in the
/// supported families.
pub fn check_general_condition(inp: &GeneralConditionInputs) -> Result<GeneralConditionTerms> {
    let GeneralConditionInputs {
        dist,
        g1,
        c,
        alpha2,
        l,
        beta,
    } = *inp;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(domain("beta", beta, "(0, 1)"));
    }
    if !(l > 0.0) {
        return Err(domain("L", l, "(0, inf]"));
    }
    if alpha2 < 0.0 || alpha2.is_nan() {
        return Err(domain("alpha2", alpha2, "[0, inf)"));
    }
    if c == 0 {
        return Err(Error::InvalidParams("c must be positive".into()));
    }
    let cf = c as f64;
    let delta = E * (alpha2 * cf / 1.7).powf(1.0 / (1.0 - beta));
    if delta >= 1.0 {
        return Err(Error::Regime(format!("Delta = {delta} is not below 1")));
    }
    let t = dist.t();
    let tol = Tolerance::new(1e-14, 1e-13);
    let nu = nu(&dist, &g1)?;

    let c_e = cf
        * integrate_sin2_range(
            |p, q| dist.density_pq(p, q) * p.powi(c as i32) * g1.g1_pq(p, q),
            t,
            1.0 - t,
            tol,
        )?
        .value;

    let tail = |p: f64, q: f64| 1.0 - q.powi(c as i32) - p.powi(c as i32);
    let s_t = t * dist.density_pq(t, 1.0 - t) * g1.g1_pq(t, 1.0 - t);
    let mut k_sum = s_t * tail(t, 1.0 - t);
    let (a, b) = shape(&dist);
    let (u, v) = (a - g1.gamma(), b - 1.0 + g1.gamma());
    if u != 0.0 || v != 0.0 {
        let mut breaks = vec![t, 0.5, 1.0 - t];
        if u + v != 0.0 {
            let root = u / (u + v);
            if root > t && root < 0.5 {
                breaks.push(root);
                breaks.push(1.0 - root);
            }
        }
        breaks.sort_by(f64::total_cmp);
        let j = integrate_with_breaks(
            |p| {
                let q = 1.0 - p;
                tail(p, q) * s_prime(&dist, &g1, p, q).max(0.0)
            },
            &breaks,
            tol,
        )?;
        k_sum += j.value;
    }

    let (exponent, r_term) = if alpha2 == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let x_max = (cf * (1.0 - t) - 1.7 * (1.0 - t) / (alpha2 * g1.g1_pq(t, 1.0 - t))).floor();
        let e = cf - x_max;
        (e, e17() * delta.powf(e) / (1.0 - delta))
    };
    let check = if alpha2 == 0.0 {
        ConditionCheck::degenerate()
    } else {
        let lhs = 1.0 - alpha2 * c_e + alpha2 * k_sum + nu * cf * alpha2 * alpha2 + r_term;
        ConditionCheck::new(lhs, 1.0 - alpha2 / l)
    };
    Ok(GeneralConditionTerms {
        c_e_pc_g1: c_e,
        k_sum,
        nu,
        delta,
        exponent,
        check,
    })
}
