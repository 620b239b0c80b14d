//! Scheme parameters, bias distributions and accusation functions.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::numeric::quad::{integrate_sin2_range, Tolerance};

/// `ceil(ln(1/eps1))` as used by the `(A, B)` parametrization.
pub fn ln_inv_eps_ceil(eps1: f64) -> f64 {
    (1.0 / eps1).ln().ceil()
}

/// `t' = arcsin(sqrt(t))`.
pub fn tprime(t: f64) -> f64 {
    t.sqrt().asin()
}

/// Normalizer `pi - 4 t'` of the arcsine density on `[t, 1 - t]`.
pub fn arcsine_norm(t: f64) -> f64 {
    PI - 4.0 * tprime(t)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemeParams {
    n: u64,
    m: u64,
    c0: u32,
    eps1: f64,
    eps2: f64,
    t: f64,
    z: f64,
    a: Option<f64>,
    b: Option<f64>,
}

impl SchemeParams {
    /// Length and threshold from the coefficients:
    /// `m = ceil(A c0^2 ceil(ln 1/eps1))`, `Z = B c0 ceil(ln 1/eps1)`.
    pub fn from_ab(n: u64, c0: u32, eps1: f64, eps2: f64, t: f64, a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(domain("A", a, "(0, inf)"));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(domain("B", b, "(0, inf)"));
        }
        let k = ln_inv_eps_ceil(eps1);
        let c = c0 as f64;
        let m = (a * c * c * k).ceil();
        if m > u64::MAX as f64 {
            return Err(domain("m", m, "u64 range"));
        }
        let p = SchemeParams {
            n,
            m: m as u64,
            c0,
            eps1,
            eps2,
            t,
            z: b * c * k,
            a: Some(a),
            b: Some(b),
        };
        p.validate()?;
        Ok(p)
    }

    /// Explicit `(m, Z)`, bypassing the coefficient parametrization.
    pub fn direct(n: u64, m: u64, c0: u32, eps1: f64, eps2: f64, t: f64, z: f64) -> Result<Self> {
        let p = SchemeParams {
            n,
            m,
            c0,
            eps1,
            eps2,
            t,
            z,
            a: None,
            b: None,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParams("n must be positive".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidParams("m must be positive".into()));
        }
        if self.c0 == 0 {
            return Err(Error::InvalidParams("c0 must be positive".into()));
        }
        check_open_unit("eps1", self.eps1)?;
        check_open_unit("eps2", self.eps2)?;
        check_cutoff(self.t)?;
        if self.c0 as f64 * self.t >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "c0 * t = {} must be below 1",
                self.c0 as f64 * self.t
            )));
        }
        if !(self.z.is_finite() && self.z > 0.0) {
            return Err(domain("Z", self.z, "(0, inf)"));
        }
        Ok(())
    }

    pub fn n(&self) -> u64 {
        self.n
    }
    pub fn m(&self) -> u64 {
        self.m
    }
    pub fn c0(&self) -> u32 {
        self.c0
    }
    pub fn eps1(&self) -> f64 {
        self.eps1
    }
    pub fn eps2(&self) -> f64 {
        self.eps2
    }
    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn a(&self) -> Option<f64> {
        self.a
    }
    pub fn b(&self) -> Option<f64> {
        self.b
    }

    pub fn with_z(&self, z: f64) -> Result<Self> {
        let mut p = self.clone();
        p.z = z;
        p.a = None;
        p.b = None;
        p.validate()?;
        Ok(p)
    }

    pub fn with_n(&self, n: u64) -> Result<Self> {
        let mut p = self.clone();
        p.n = n;
        p.validate()?;
        Ok(p)
    }

    /// Build from parsed key=value pairs. Either `m` and `z` or `A` and `B`
    /// must be present; if both are, they must agree.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let n = kv_u64(kv, "n")?.ok_or_else(|| missing("n"))?;
        let c0 = kv_u64(kv, "c0")?.ok_or_else(|| missing("c0"))?;
        let c0 = u32::try_from(c0).map_err(|_| Error::InvalidParams("c0 too large".into()))?;
        let eps1 = kv_f64(kv, "eps1")?.ok_or_else(|| missing("eps1"))?;
        let eps2 = kv_f64(kv, "eps2")?.ok_or_else(|| missing("eps2"))?;
        let t = kv_f64(kv, "t")?.ok_or_else(|| missing("t"))?;
        let m = kv_u64(kv, "m")?;
        let z = kv_f64(kv, "z")?;
        let a = kv_f64(kv, "a")?;
        let b = kv_f64(kv, "b")?;
        match (m, z, a, b) {
            (_, _, Some(a), Some(b)) => {
                let p = SchemeParams::from_ab(n, c0, eps1, eps2, t, a, b)?;
                if m.is_some_and(|m| m != p.m) || z.is_some_and(|z| (z - p.z).abs() > 1e-9 * p.z) {
                    return Err(Error::InvalidParams(
                        "m/z disagree with the values implied by A/B".into(),
                    ));
                }
                Ok(p)
            }
            (Some(m), Some(z), None, None) => SchemeParams::direct(n, m, c0, eps1, eps2, t, z),
            _ => Err(Error::InvalidParams(
                "need either both m and z, or both a and b".into(),
            )),
        }
    }

    /// Flat key=value text, one pair per line.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n={}", self.n);
        let _ = writeln!(s, "m={}", self.m);
        let _ = writeln!(s, "c0={}", self.c0);
        let _ = writeln!(s, "eps1={:?}", self.eps1);
        let _ = writeln!(s, "eps2={:?}", self.eps2);
        let _ = writeln!(s, "t={:?}", self.t);
        let _ = writeln!(s, "z={:?}", self.z);
        if let (Some(a), Some(b)) = (self.a, self.b) {
            let _ = writeln!(s, "a={a:?}");
            let _ = writeln!(s, "b={b:?}");
        }
        s
    }

    pub fn parse_kv_str(text: &str) -> Result<Self> {
        SchemeParams::from_kv(&parse_kv(text)?)
    }

    /// Raw fields as stored in a codebook file (`NaN` for absent A/B).
    pub(crate) fn raw(&self) -> (u64, u64, u32, [f64; 6]) {
        (
            self.n,
            self.m,
            self.c0,
            [
                self.eps1,
                self.eps2,
                self.t,
                self.z,
                self.a.unwrap_or(f64::NAN),
                self.b.unwrap_or(f64::NAN),
            ],
        )
    }

    pub(crate) fn from_raw(n: u64, m: u64, c0: u32, f: [f64; 6]) -> Result<Self> {
        let p = SchemeParams {
            n,
            m,
            c0,
            eps1: f[0],
            eps2: f[1],
            t: f[2],
            z: f[3],
            a: (!f[4].is_nan()).then_some(f[4]),
            b: (!f[5].is_nan()).then_some(f[5]),
        };
        p.validate()?;
        Ok(p)
    }
}

/// Parse `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; keys are lowercased.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected key=value, got `{line}`"),
        })?;
        let k = k.trim().to_ascii_lowercase();
        if k.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("duplicate key `{k}`"),
            });
        }
    }
    Ok(out)
}

fn missing(key: &str) -> Error {
    Error::InvalidParams(format!("missing key `{key}`"))
}

fn kv_u64(kv: &BTreeMap<String, String>, key: &str) -> Result<Option<u64>> {
    kv.get(key)
        .map(|v| {
            v.parse::<u64>()
                .map_err(|e| Error::InvalidParams(format!("{key}: {e}")))
        })
        .transpose()
}

fn kv_f64(kv: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    kv.get(key)
        .map(|v| {
            v.parse::<f64>()
                .map_err(|e| Error::InvalidParams(format!("{key}: {e}")))
        })
        .transpose()
}

fn check_open_unit(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(domain(name, v, "(0, 1)"))
    }
}

pub(crate) fn check_cutoff(t: f64) -> Result<()> {
    if t > 0.0 && t < 0.5 {
        Ok(())
    } else {
        Err(domain("t", t, "(0, 1/2)"))
    }
}

fn check_support(p: f64, t: f64) -> Result<()> {
    if p >= t && p <= 1.0 - t {
        Ok(())
    } else {
        Err(domain("p", p, "[t, 1 - t]"))
    }
}

/// Tardos accusation weight for a one in the user's row: `sqrt((1-p)/p)`.
#[inline]
pub fn g1_raw(p: f64) -> f64 {
    ((1.0 - p) / p).sqrt()
}

/// Tardos accusation weight for a zero in the user's row: `-sqrt(p/(1-p))`.
#[inline]
pub fn g0_raw(p: f64) -> f64 {
    -(p / (1.0 - p)).sqrt()
}

/// [`g1_raw`] with the support `[t, 1 - t]` checked.
pub fn g1(p: f64, t: f64) -> Result<f64> {
    check_support(p, t)?;
    Ok(g1_raw(p))
}

/// [`g0_raw`] with the support `[t, 1 - t]` checked.
pub fn g0(p: f64, t: f64) -> Result<f64> {
    check_support(p, t)?;
    Ok(g0_raw(p))
}

/// Distribution of the column biases `p_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasDistribution {
    /// `f(p) = 1/((pi - 4t') sqrt(p(1-p)))` on `[t, 1-t]`.
    TardosArcsine { t: f64 },
    /// `f(p) = p^{a-1}(1-p)^{b-1} / (2 I)` on `[t, 1/2]` with
    /// `I = int_t^{1/2} p^{a-1}(1-p)^{b-1} dp`, mirrored onto `[1/2, 1-t]`.
    BetaFamily {
        a: f64,
        b: f64,
        t: f64,
        half_norm: f64,
    },
}

impl BiasDistribution {
    pub fn tardos(t: f64) -> Result<Self> {
        check_cutoff(t)?;
        Ok(BiasDistribution::TardosArcsine { t })
    }

    pub fn beta(a: f64, b: f64, t: f64) -> Result<Self> {
        check_cutoff(t)?;
        if !(a > 0.0 && a.is_finite()) {
            return Err(domain("a", a, "(0, inf)"));
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(domain("b", b, "(0, inf)"));
        }
        let half_norm = integrate_sin2_range(
            |p, q| p.powf(a - 1.0) * q.powf(b - 1.0),
            t,
            0.5,
            Tolerance::new(0.0, 1e-13),
        )?
        .value;
        Ok(BiasDistribution::BetaFamily { a, b, t, half_norm })
    }

    pub fn t(&self) -> f64 {
        match *self {
            BiasDistribution::TardosArcsine { t } | BiasDistribution::BetaFamily { t, .. } => t,
        }
    }

    /// Density at `p` given `p` and `q = 1 - p` separately.
    #[inline]
    pub fn density_pq(&self, p: f64, q: f64) -> f64 {
        match *self {
            BiasDistribution::TardosArcsine { t } => 1.0 / (arcsine_norm(t) * (p * q).sqrt()),
            BiasDistribution::BetaFamily {
                a, b, half_norm, ..
            } => {
                let (lo, hi) = if p <= 0.5 { (p, q) } else { (q, p) };
                0.5 * lo.powf(a - 1.0) * hi.powf(b - 1.0) / half_norm
            }
        }
    }
}

/// Normalized bias density at `p`.
pub fn bias_density(dist: &BiasDistribution, p: f64) -> Result<f64> {
    check_support(p, dist.t())?;
    Ok(dist.density_pq(p, 1.0 - p))
}

/// Accusation function `g1` of the form `((1-p)/p)^gamma` on `(0, 1/2]`,
/// extended to `(1/2, 1)` by `g1(1-p) = p g1(p)/(1-p)`, which keeps
/// `p g1(p) + (1-p) g0(p) = 0` with `g0(p) = -g1(1-p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AccusationFn {
    gamma: f64,
}

impl AccusationFn {
    /// `gamma = 1/2`: the Tardos choice.
    pub const TARDOS: AccusationFn = AccusationFn { gamma: 0.5 };
    /// `gamma = 0`: constant on the lower half.
    pub const CONSTANT: AccusationFn = AccusationFn { gamma: 0.0 };

    pub fn power(gamma: f64) -> Result<Self> {
        if (0.0..1.0).contains(&gamma) {
            Ok(AccusationFn { gamma })
        } else {
            Err(domain("gamma", gamma, "[0, 1)"))
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn g1_pq(&self, p: f64, q: f64) -> f64 {
        if self.gamma == 0.5 {
            return (q / p).sqrt();
        }
        if p <= 0.5 {
            (q / p).powf(self.gamma)
        } else {
            (q / p).powf(1.0 - self.gamma)
        }
    }

    pub fn g1(&self, p: f64) -> f64 {
        self.g1_pq(p, 1.0 - p)
    }

    pub fn g0(&self, p: f64) -> f64 {
        -self.g1_pq(1.0 - p, p)
    }
}

/// `nu = 2 int_t^{1/2} f(p) p/(1-p) g1(p)^2 dp`.
pub fn nu(dist: &BiasDistribution, g: &AccusationFn) -> Result<f64> {
    let t = dist.t();
    let r = integrate_sin2_range(
        |p, q| {
            let g1 = g.g1_pq(p, q);
            dist.density_pq(p, q) * p / q * g1 * g1
        },
        t,
        0.5,
        Tolerance::new(1e-12, 1e-12),
    )?;
    Ok(2.0 * r.value)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub tau: f64,
    pub tprime: f64,
    pub nu: f64,
}

impl DerivedConstants {
    pub fn new(c0: u32, dist: &BiasDistribution, g: &AccusationFn) -> Result<Self> {
        let t = dist.t();
        let tau = c0 as f64 * t;
        if tau >= 1.0 {
            return Err(domain("tau", tau, "(0, 1)"));
        }
        Ok(DerivedConstants {
            tau,
            tprime: tprime(t),
            nu: nu(dist, g)?,
        })
    }

    pub fn for_params(params: &SchemeParams) -> Result<Self> {
        DerivedConstants::new(
            params.c0(),
            &BiasDistribution::tardos(params.t())?,
            &AccusationFn::TARDOS,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_ab_applies_ceilings() {
        // ceil(ln 1e6) = 14; m = ceil(40 * 100 * 14) = 56000; Z = 12.5 * 10 * 14
        let p = SchemeParams::from_ab(1000, 10, 1e-6, 0.5, 1.0 / 3000.0, 40.0, 12.5).unwrap();
        assert_eq!(p.m(), 56_000);
        assert!((p.z() - 1750.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SchemeParams::direct(0, 10, 2, 0.1, 0.1, 0.01, 1.0).is_err());
        assert!(SchemeParams::direct(10, 10, 2, 1.0, 0.1, 0.01, 1.0).is_err());
        assert!(SchemeParams::direct(10, 10, 2, 0.1, 0.1, 0.5, 1.0).is_err());
        // c0 t >= 1
        assert!(SchemeParams::direct(10, 10, 200, 0.1, 0.1, 0.01, 1.0).is_err());
    }

    #[test]
    fn kv_round_trip() {
        let p = SchemeParams::from_ab(50, 4, 1e-3, 0.2, 0.001, 41.3, 12.9).unwrap();
        let q = SchemeParams::parse_kv_str(&p.to_kv_string()).unwrap();
        assert_eq!(p, q);
        let d = SchemeParams::direct(50, 123, 4, 1e-3, 0.2, 0.001, 7.5).unwrap();
        assert_eq!(d, SchemeParams::parse_kv_str(&d.to_kv_string()).unwrap());
    }

    #[test]
    fn kv_parse_errors() {
        assert!(matches!(
            parse_kv("n=1\nbogus"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_kv("n=1\nn=2").is_err());
        assert!(SchemeParams::parse_kv_str("n=1\nc0=2\neps1=0.1\neps2=0.1\nt=0.01").is_err());
    }

    #[test]
    fn accusation_fn_pairing() {
        for g in [
            AccusationFn::TARDOS,
            AccusationFn::CONSTANT,
            AccusationFn::power(0.3).unwrap(),
        ] {
            for k in 1..20 {
                let p = k as f64 / 20.0;
                assert!((p * g.g1(p) + (1.0 - p) * g.g0(p)).abs() < 1e-14);
            }
        }
    }
}
