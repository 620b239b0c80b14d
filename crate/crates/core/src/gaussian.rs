//! Moments of the accusation sums, Gaussian-model code length and
//! threshold, and the CLT validity estimate.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::attacks::Strategy;
use crate::error::{domain, Error, Result};
use crate::model::{arcsine_norm, check_cutoff, tprime};
use crate::numeric::quad::{integrate, integrate_sin2, Tolerance};
use crate::numeric::special::{erfc_inv, LnFactorial};

const TOL: Tolerance = Tolerance::new(1e-14, 1e-12);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentSummary {
    /// Innocent mean, identically zero.
    pub mu_j: f64,
    /// `sigma~_j`, with `sigma_j^2 = m sigma~_j^2`.
    pub sigma_j_scaled: f64,
    /// `mu~`, with `mu = m mu~`.
    pub mu_scaled: f64,
    /// `sigma~`, with `sigma^2 = m sigma~^2`.
    pub sigma_scaled: f64,
    pub c: usize,
    pub c0: u32,
    pub t: f64,
    pub strategy: Vec<f64>,
}

impl MomentSummary {
    pub fn sigma_j2(&self) -> f64 {
        self.sigma_j_scaled * self.sigma_j_scaled
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma_scaled * self.sigma_scaled
    }

    pub fn to_csv(&self) -> String {
        format!(
            "c,c0,t,mu_j,sigma_j_scaled,mu_scaled,sigma_scaled\n{},{},{},{},{},{},{}\n",
            self.c,
            self.c0,
            self.t,
            self.mu_j,
            self.sigma_j_scaled,
            self.mu_scaled,
            self.sigma_scaled
        )
    }
}

/// Scaled moments for coalition size `c` using the column-symmetric
/// `strategy`, with Tardos `f`, `g1`, `g0` and cutoff `t`.
pub fn moments(strategy: &Strategy, c: usize, t: f64, c0: u32) -> Result<MomentSummary> {
    check_cutoff(t)?;
    if c != strategy.c() {
        return Err(Error::LengthMismatch {
            what: "strategy table coalition size",
            expected: c,
            got: strategy.c(),
        });
    }
    let psi = strategy.psi();
    let lf = LnFactorial::new(c);
    let norm = arcsine_norm(t);
    let (lt, l1t) = (t.ln(), (-t).ln_1p());
    let cf = c as f64;

    let mut mu = 0.0;
    for (x, &w) in psi.iter().enumerate().skip(1) {
        if w == 0.0 {
            continue;
        }
        let xf = x as f64;
        let lc = lf.ln_choose(c, x);
        let hi = (lc + xf * l1t + (cf - xf) * lt).exp();
        let lo = (lc + xf * lt + (cf - xf) * l1t).exp();
        mu += w * (hi - lo);
    }
    mu /= norm;

    // Per x: E_p[p^x (1-p)^{c-x}] and the second-moment integral, both
    // weighted by C(c, x) psi(x) inside the integrand (log space).
    let terms: Vec<Result<(f64, f64)>> = (1..=c)
        .into_par_iter()
        .map(|x| {
            let w = psi[x];
            if w == 0.0 {
                return Ok((0.0, 0.0));
            }
            let lc = lf.ln_choose(c, x);
            let xf = x as f64;
            let yj = integrate_sin2(
                |p, q| (lc + (xf - 0.5) * p.ln() + (cf - xf - 0.5) * q.ln()).exp(),
                t,
                TOL,
            )?
            .value;
            let s2 = integrate_sin2(
                |p, q| {
                    let d = xf * q - (cf - xf) * p;
                    d * d * (lc + (xf - 1.5) * p.ln() + (cf - xf - 1.5) * q.ln()).exp()
                },
                t,
                TOL,
            )?
            .value;
            Ok((w * yj, w * s2))
        })
        .collect();
    let (mut sj2, mut s2) = (0.0, 0.0);
    for r in terms {
        let (a, b) = r?;
        sj2 += a;
        s2 += b;
    }
    sj2 /= norm;
    s2 = s2 / norm - mu * mu;
    if !(s2 >= 0.0 && sj2 >= 0.0) {
        return Err(Error::Regime(format!(
            "negative variance from quadrature (sigma_j^2 = {sj2}, sigma^2 = {s2})"
        )));
    }
    Ok(MomentSummary {
        mu_j: 0.0,
        sigma_j_scaled: sj2.sqrt(),
        mu_scaled: mu,
        sigma_scaled: s2.sqrt(),
        c,
        c0,
        t,
        strategy: psi.to_vec(),
    })
}

fn check_eps(name: &'static str, e: f64) -> Result<()> {
    if e > 0.0 && e < 1.0 {
        Ok(())
    } else {
        Err(domain(name, e, "(0, 1)"))
    }
}

/// `G1^inv(eps) = sqrt(2) erfc^inv(2 eps)`.
pub fn g1_inv(eps: f64) -> Result<f64> {
    check_eps("eps1", eps)?;
    Ok(SQRT_2 * erfc_inv(2.0 * eps)?)
}

/// `G2^inv(eps) = -sqrt(2) erfc^inv(2 eps)`.
pub fn g2_inv(eps: f64) -> Result<f64> {
    check_eps("eps2", eps)?;
    Ok(-SQRT_2 * erfc_inv(2.0 * eps)?)
}

/// Smallest length for which the Gaussian-model threshold interval exists.
pub fn m_min(s: &MomentSummary, eps1: f64, eps2: f64, c0: u32) -> Result<f64> {
    if !(s.mu_scaled > 0.0) {
        return Err(domain("mu~", s.mu_scaled, "(0, inf)"));
    }
    let c = c0 as f64;
    let br = s.sigma_j_scaled * g1_inv(eps1)? - s.sigma_scaled / c * g2_inv(eps2)?;
    Ok(c * c * br * br / (s.mu_scaled * s.mu_scaled))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZInterval {
    pub low: f64,
    pub high: f64,
}

impl ZInterval {
    pub fn is_empty(&self) -> bool {
        self.low > self.high
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.low + self.high)
    }

    pub fn contains(&self, other: &ZInterval) -> bool {
        self.low <= other.low && other.high <= self.high
    }
}

/// `[sigma~_j sqrt(m) G1^inv(eps1), (mu~/c0) m + (sigma~/c0) sqrt(m) G2^inv(eps2)]`.
/// Empty (low > high) when `m < m_min`.
pub fn z_interval(s: &MomentSummary, m: f64, eps1: f64, eps2: f64, c0: u32) -> Result<ZInterval> {
    if !(m > 0.0) {
        return Err(domain("m", m, "(0, inf)"));
    }
    let c = c0 as f64;
    let rm = m.sqrt();
    Ok(ZInterval {
        low: s.sigma_j_scaled * rm * g1_inv(eps1)?,
        high: s.mu_scaled / c * m + s.sigma_scaled / c * rm * g2_inv(eps2)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GaussianPlan {
    /// Real-valued lower bound on the length.
    pub m_min: f64,
    pub z_low: f64,
    pub z_high: f64,
    /// Chosen length, `ceil(m_min)`.
    pub m: u64,
    /// Chosen threshold, the midpoint of the interval at `m`.
    pub z: f64,
}

/// Length and threshold interval that hold for every strategy, using the
/// bounds `sigma~_j < 1`, `sigma~ < sqrt(c0)`, `mu~ > (1 - 2 tau)/pi`.
pub fn theorem2_plan(c0: u32, tau: f64, eps1: f64, eps2: f64) -> Result<GaussianPlan> {
    if c0 == 0 {
        return Err(Error::InvalidParams("c0 must be positive".into()));
    }
    let c = c0 as f64;
    if !(tau > 0.0 && tau < 0.5 && tau / c < 0.5) {
        return Err(domain("tau", tau, "(0, 1/2)"));
    }
    check_eps("eps1", eps1)?;
    check_eps("eps2", eps2)?;
    let (e1, e2) = (erfc_inv(2.0 * eps1)?, erfc_inv(2.0 * eps2)?);
    let k = 1.0 - 2.0 * tau;
    let br = e1 + e2 / c.sqrt();
    let m_real = 2.0 * PI * PI / (k * k) * c * c * br * br;
    let m = m_real.ceil().max(1.0);
    let z_low = (2.0 * m).sqrt() * e1;
    let z_high = k / (PI * c) * m - (2.0 * m / c).sqrt() * e2;
    Ok(GaussianPlan {
        m_min: m_real,
        z_low,
        z_high,
        m: m as u64,
        z: 0.5 * (z_low + z_high),
    })
}

/// The large-`c0` simplification: `m = 2 pi^2/(1-2tau)^2 c0^2 ln(1/(eps1 sqrt(2 pi)))`,
/// `Z = 2 pi/(1-2tau) c0 ln(1/(eps1 sqrt(2 pi)))`.
pub fn large_coalition_plan(c0: u32, tau: f64, eps1: f64) -> Result<(f64, f64)> {
    check_eps("eps1", eps1)?;
    let c = c0 as f64;
    let k = 1.0 - 2.0 * tau;
    let l = (1.0 / (eps1 * (2.0 * PI).sqrt())).ln();
    Ok((2.0 * PI * PI / (k * k) * c * c * l, 2.0 * PI / k * c * l))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CltReport {
    pub kappa2: f64,
    pub kappa4: f64,
    /// Radius, in standard deviations, inside which the Gaussian
    /// approximation of an `m`-term sum is trustworthy.
    pub n_sigmas: f64,
    /// Depth of the tail that `eps1` probes, `sqrt(2) erfc^inv(2 eps1)`.
    pub required_sigmas: f64,
}

impl CltReport {
    pub fn covers(&self) -> bool {
        self.n_sigmas >= self.required_sigmas
    }
}

/// Cumulants of the per-column innocent weight `u`, whose density is
/// proportional to `1/(1+u^2)^2` on `sqrt(t/(1-t)) <= |u| <= sqrt((1-t)/t)`.
///
/// With `u = tan(theta)` the density becomes `cos^2(theta)` on
/// `[t', pi/2 - t']`.
pub fn clt_report(c0: u32, t: f64, eps1: f64, m: f64) -> Result<CltReport> {
    check_cutoff(t)?;
    let _ = c0;
    if !(m >= 1.0) {
        return Err(domain("m", m, "[1, inf)"));
    }
    let (a, b) = (tprime(t), FRAC_PI_2 - tprime(t));
    let norm = integrate(|th: f64| th.cos().powi(2), a, b, TOL)?.value;
    let m2 = integrate(|th: f64| th.sin().powi(2), a, b, TOL)?.value / norm;
    let m4 = integrate(
        |th: f64| {
            let (s, c) = th.sin_cos();
            s.powi(4) / (c * c)
        },
        a,
        b,
        TOL,
    )?
    .value
        / norm;
    let kappa2 = m2;
    let kappa4 = m4 - 3.0 * m2 * m2;
    if !(kappa4 > 0.0) {
        return Err(Error::Regime(format!(
            "fourth cumulant {kappa4} is not positive"
        )));
    }
    Ok(CltReport {
        kappa2,
        kappa4,
        n_sigmas: (24.0 * kappa2 * kappa2 / kappa4).powf(0.25) * m.powf(0.25),
        required_sigmas: g1_inv(eps1)?,
    })
}

/// Human-readable block for the CLI.
pub fn report_block(
    s: &MomentSummary,
    mmin: f64,
    zi: &ZInterval,
    plan: &GaussianPlan,
    clt: &CltReport,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "moments (c = {}, t = {:e})", s.c, s.t);
    let _ = writeln!(out, "  mu~       = {:.6}", s.mu_scaled);
    let _ = writeln!(
        out,
        "  sigma~_j  = {:.6}  (sigma~_j^2 = {:.6})",
        s.sigma_j_scaled,
        s.sigma_j2()
    );
    let _ = writeln!(
        out,
        "  sigma~    = {:.6}  (sigma~^2 = {:.6})",
        s.sigma_scaled,
        s.sigma2()
    );
    let _ = writeln!(out, "m_min       = {mmin:.2}");
    let _ = writeln!(
        out,
        "Z interval at m = {}: [{:.4}, {:.4}]",
        plan.m, zi.low, zi.high
    );
    let _ = writeln!(
        out,
        "worst-case plan: m = {}, Z = {:.4} in [{:.4}, {:.4}]",
        plan.m, plan.z, plan.z_low, plan.z_high
    );
    let _ = writeln!(
        out,
        "CLT: kappa2 = {:.6}, kappa4 = {:.4}, radius = {:.3} sigmas, needed = {:.3}",
        clt.kappa2, clt.kappa4, clt.n_sigmas, clt.required_sigmas
    );
    out
}
