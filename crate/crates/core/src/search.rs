//! Randomized search for the smallest provable length coefficient `A`.

use std::f64::consts::E;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{check_cond_tar, log_ratio};
use crate::error::{Error, FailureCounts, Result};
use crate::model::arcsine_norm;
use crate::rng::{Purpose, Stream};

/// Points in the logarithmic `alpha2` scan.
pub const ALPHA2_GRID: usize = 256;
/// Decades spanned by the scan below the interval's upper end.
pub const ALPHA2_DECADES: f64 = 6.0;
/// Bisection steps inside the highest satisfied bracket.
pub const ALPHA2_BISECTIONS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SearchResult {
    pub a: f64,
    pub b: f64,
    pub t: f64,
    pub l: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub c0: u32,
    pub r: f64,
    pub iterations_used: u64,
    /// Iteration that produced the point.
    pub iteration: u64,
    /// `alpha1` as drawn in that iteration, before it was re-optimized.
    pub alpha1_drawn: f64,
    /// `A` computed with the drawn `alpha1`.
    pub a_drawn: f64,
    pub failures: FailureCounts,
}

impl SearchResult {
    /// `t / t^T` with `t^T = 1/(300 c0)`.
    pub fn t_ratio(&self) -> f64 {
        self.t * 300.0 * self.c0 as f64
    }
}

/// `(2(1-t)^c0 - 1)/(pi - 4t')`.
fn bracket(c0: u32, t: f64) -> f64 {
    (2.0 * (1.0 - t).powi(c0 as i32) - 1.0) / arcsine_norm(t)
}

/// `A` from the window with `B` eliminated, for `K = 1/(c0 alpha1) > L`
/// and `r = R/(c0^2 alpha2)`.
fn a_of(k: f64, l: f64, r: f64) -> f64 {
    l * k / (k - l) * (k + r)
}

enum Outcome {
    Found(Candidate),
    Failed(FailureKind),
}

#[derive(Clone, Copy)]
enum FailureKind {
    Cutoff,
    EmptyInterval,
    Unsatisfied,
}

#[derive(Clone, Copy)]
struct Candidate {
    a: f64,
    b: f64,
    t: f64,
    l: f64,
    alpha1: f64,
    alpha2: f64,
    alpha1_drawn: f64,
    a_drawn: f64,
    iteration: u64,
}

fn satisfied(c0: u32, t: f64, alpha2: f64, l: f64) -> bool {
    check_cond_tar(c0, t, alpha2, l).is_ok_and(|c| c.satisfied)
}

/// Largest `alpha2` in `(0, hi)` satisfying the Tardos condition: scan a
/// logarithmic grid, then bisect the bracket above the highest hit.
fn largest_alpha2(c0: u32, t: f64, l: f64, hi: f64) -> Option<f64> {
    let top = hi * (1.0 - 1e-12);
    let grid = |k: usize| {
        if k == ALPHA2_GRID - 1 {
            top
        } else {
            top * 10f64.powf(-ALPHA2_DECADES * (1.0 - k as f64 / (ALPHA2_GRID - 1) as f64))
        }
    };
    let best = (0..ALPHA2_GRID)
        .rev()
        .find(|&k| satisfied(c0, t, grid(k), l))?;
    let mut lo = grid(best);
    if best + 1 < ALPHA2_GRID {
        let mut up = grid(best + 1);
        for _ in 0..ALPHA2_BISECTIONS {
            let mid = 0.5 * (lo + up);
            if satisfied(c0, t, mid, l) {
                lo = mid;
            } else {
                up = mid;
            }
        }
    }
    Some(lo)
}

fn iterate(c0: u32, r_ratio: f64, seed: u64, it: u64) -> Outcome {
    let c = c0 as f64;
    let mut s = Stream::new(seed, Purpose::Search, it);
    let t = s.uniform_open(0.0, 0.5 / c);
    let q = bracket(c0, t);
    if q <= 0.0 {
        return Outcome::Failed(FailureKind::Cutoff);
    }
    let a1_cap = 1.7 * (t / (1.0 - t)).sqrt();
    let alpha1 = s.uniform_open(0.0, a1_cap.min(q / c));
    let k = 1.0 / (c * alpha1);
    let l = s.uniform_open(1.0 / q, k);
    // D = e (c0 alpha2 / 1.7)^2 must stay below 1.
    let d_cap = 1.7 / (c * E.sqrt());
    let hi = (2.0 * t.sqrt()).min((q - 1.0 / l) / c).min(d_cap);
    if !(hi > 0.0) {
        return Outcome::Failed(FailureKind::EmptyInterval);
    }
    let Some(alpha2) = largest_alpha2(c0, t, l, hi) else {
        return Outcome::Failed(FailureKind::Unsatisfied);
    };
    let r = r_ratio / (c * c * alpha2);
    let a_drawn = a_of(k, l, r);
    // For fixed (t, L, alpha2), A(K) is minimized at K* = L + sqrt(L^2 + L r),
    // where A = K*^2 and the window collapses with B = 2 sqrt(A).
    let k_star = l + (l * l + l * r).sqrt();
    let k_min = 1.0 / (c * a1_cap);
    let (k_used, a, b) = if k_star > k_min {
        (k_star, k_star * k_star, 2.0 * k_star)
    } else {
        let a = a_of(k_min, l, r);
        (k_min, a, a / l - r)
    };
    Outcome::Found(Candidate {
        a,
        b,
        t,
        l,
        alpha1: 1.0 / (c * k_used),
        alpha2,
        alpha1_drawn: alpha1,
        a_drawn,
        iteration: it,
    })
}

#[derive(Clone, Copy)]
struct Acc {
    best: Option<Candidate>,
    failures: FailureCounts,
}

impl Acc {
    fn empty() -> Self {
        Acc {
            best: None,
            failures: FailureCounts::default(),
        }
    }

    fn push(mut self, o: Outcome) -> Self {
        match o {
            Outcome::Found(c) => self.best = pick(self.best, Some(c)),
            Outcome::Failed(FailureKind::Cutoff) => self.failures.cutoff_too_large += 1,
            Outcome::Failed(FailureKind::EmptyInterval) => self.failures.empty_alpha2_interval += 1,
            Outcome::Failed(FailureKind::Unsatisfied) => self.failures.condition_unsatisfied += 1,
        }
        self
    }

    fn merge(self, other: Acc) -> Acc {
        Acc {
            best: pick(self.best, other.best),
            failures: self.failures.merge(other.failures),
        }
    }
}

// Minimum A, ties broken by the lower iteration index, so the reduction
// does not depend on how iterations were split across workers.
fn pick(x: Option<Candidate>, y: Option<Candidate>) -> Option<Candidate> {
    match (x, y) {
        (Some(a), Some(b)) => {
            let ord = a.a.total_cmp(&b.a).then(a.iteration.cmp(&b.iteration));
            Some(if ord.is_le() { a } else { b })
        }
        (a, None) => a,
        (None, b) => b,
    }
}

/// Search with the ratio `R = ln eps2 / ln eps1` given directly.
pub fn search_min_a_ratio(c0: u32, r: f64, iterations: u64, seed: u64) -> Result<SearchResult> {
    if iterations == 0 {
        return Err(Error::InvalidParams("iterations must be at least 1".into()));
    }
    if c0 == 0 {
        return Err(Error::InvalidParams("c0 must be positive".into()));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(crate::error::domain("R", r, "(0, inf)"));
    }
    let acc = (0..iterations)
        .into_par_iter()
        .fold(Acc::empty, |acc, it| acc.push(iterate(c0, r, seed, it)))
        .reduce(Acc::empty, Acc::merge);
    let Some(best) = acc.best else {
        return Err(Error::Infeasible {
            iterations,
            failures: acc.failures,
        });
    };
    Ok(SearchResult {
        a: best.a,
        b: best.b,
        t: best.t,
        l: best.l,
        alpha1: best.alpha1,
        alpha2: best.alpha2,
        c0,
        r,
        iterations_used: iterations,
        iteration: best.iteration,
        alpha1_drawn: best.alpha1_drawn,
        a_drawn: best.a_drawn,
        failures: acc.failures,
    })
}

pub fn search_min_a(
    c0: u32,
    eps1: f64,
    eps2: f64,
    iterations: u64,
    seed: u64,
) -> Result<SearchResult> {
    search_min_a_ratio(c0, log_ratio(eps1, eps2)?, iterations, seed)
}

/// Outcome of re-checking a search result against every constraint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Verification {
    /// `-A c0^2 alpha1^2 + B c0 alpha1 >= 1` (soundness).
    pub soundness: bool,
    /// `(A/L - B) c0^2 alpha2 >= R` (completeness).
    pub completeness: bool,
    /// `alpha1 < 1.7 sqrt(t/(1-t))`.
    pub alpha1_bound: bool,
    /// `alpha2 <= 2 sqrt(t)`.
    pub alpha2_bound: bool,
    /// Tardos completeness condition at `(t, alpha2, L)`.
    pub condition: bool,
    pub condition_slack: f64,
    /// `|B - 2 sqrt(A)|`.
    pub b_gap: f64,
    /// `|B - (A/L - R/(alpha2 c0^2))|`.
    pub b_window_gap: f64,
}

impl Verification {
    pub fn all(&self) -> bool {
        self.soundness
            && self.completeness
            && self.alpha1_bound
            && self.alpha2_bound
            && self.condition
            && self.b_window_gap <= 1e-6
    }
}

pub fn verify(res: &SearchResult) -> Result<Verification> {
    let c = res.c0 as f64;
    let tol = 1e-9;
    let cond = check_cond_tar(res.c0, res.t, res.alpha2, res.l)?;
    Ok(Verification {
        soundness: -res.a * c * c * res.alpha1.powi(2) + res.b * c * res.alpha1 >= 1.0 - tol,
        completeness: (res.a / res.l - res.b) * c * c * res.alpha2 >= res.r * (1.0 - tol),
        alpha1_bound: res.alpha1 < 1.7 * (res.t / (1.0 - res.t)).sqrt(),
        alpha2_bound: res.alpha2 <= 2.0 * res.t.sqrt(),
        condition: cond.satisfied,
        condition_slack: cond.slack,
        b_gap: (res.b - 2.0 * res.a.sqrt()).abs(),
        b_window_gap: (res.b - (res.a / res.l - res.r / (res.alpha2 * c * c))).abs(),
    })
}

#[derive(Clone, Debug)]
pub struct TableCell {
    pub c0: u32,
    pub r: f64,
    pub result: std::result::Result<SearchResult, String>,
}

/// One search per `(R, c0)` cell, each with the same seed, so a cell equals
/// the corresponding single search.
pub fn emit_table1(
    c0_list: &[u32],
    r_list: &[f64],
    iterations: u64,
    seed: u64,
) -> Result<Vec<TableCell>> {
    if c0_list.is_empty() || r_list.is_empty() {
        return Err(Error::InvalidParams(
            "c0 and R lists must be nonempty".into(),
        ));
    }
    if iterations == 0 {
        return Err(Error::InvalidParams("iterations must be at least 1".into()));
    }
    let mut cells = Vec::with_capacity(c0_list.len() * r_list.len());
    for &r in r_list {
        for &c0 in c0_list {
            cells.push(TableCell {
                c0,
                r,
                result: search_min_a_ratio(c0, r, iterations, seed).map_err(|e| e.to_string()),
            });
        }
    }
    Ok(cells)
}

/// Wide layout: one block of `A`, `B`, `t/tT` rows per `R`, one column per `c0`.
pub fn table_to_csv(cells: &[TableCell]) -> String {
    let mut c0s: Vec<u32> = Vec::new();
    let mut rs: Vec<f64> = Vec::new();
    for cell in cells {
        if !c0s.contains(&cell.c0) {
            c0s.push(cell.c0);
        }
        if !rs.contains(&cell.r) {
            rs.push(cell.r);
        }
    }
    let mut s = String::from("R,quantity");
    for c0 in &c0s {
        let _ = write!(s, ",c0={c0}");
    }
    s.push('\n');
    #[allow(clippy::type_complexity)]
    let rows: [(&str, fn(&SearchResult) -> f64); 3] = [
        ("A", |r| r.a),
        ("B", |r| r.b),
        ("t/tT", SearchResult::t_ratio),
    ];
    for &r in &rs {
        for (name, get) in rows {
            let _ = write!(s, "{r},{name}");
            for &c0 in &c0s {
                let cell = cells.iter().find(|x| x.c0 == c0 && x.r == r);
                match cell.map(|x| &x.result) {
                    Some(Ok(res)) => {
                        let _ = write!(s, ",{:.4}", get(res));
                    }
                    _ => s.push_str(",infeasible"),
                }
            }
            s.push('\n');
        }
    }
    s
}

/// Long layout with every auxiliary value, one cell per line.
pub fn table_to_long_csv(cells: &[TableCell]) -> String {
    let mut s = String::from("c0,R,A,B,t_over_tT,L_over_pi,alpha1,alpha2,iteration,status\n");
    for cell in cells {
        match &cell.result {
            Ok(r) => {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},ok",
                    cell.c0,
                    cell.r,
                    r.a,
                    r.b,
                    r.t_ratio(),
                    r.l / std::f64::consts::PI,
                    r.alpha1,
                    r.alpha2,
                    r.iteration
                );
            }
            Err(e) => {
                let _ = writeln!(
                    s,
                    "{},{},,,,,,,,\"{}\"",
                    cell.c0,
                    cell.r,
                    e.replace('"', "'")
                );
            }
        }
    }
    s
}
