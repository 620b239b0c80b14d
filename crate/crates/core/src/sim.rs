//! Monte Carlo harness: fresh codebook per trial, attack, trace, and
//! empirical error rates and score distributions.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::attacks::{column_counts, forge_from_counts, Strategy};
use crate::codegen::{gen_rows, row_key, sample_bias, DEFAULT_MATRIX_BUDGET};
use crate::error::{Error, Result};
use crate::model::SchemeParams;
use crate::numeric::special::normal_cdf;
use crate::rng::{Purpose, StreamKey};
use crate::tracer::ColumnWeights;

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_900_4;
pub const CI_METHOD: &str = "wilson-99";
pub const HISTOGRAM_BINS: usize = 100;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub params: SchemeParams,
    pub strategy: Strategy,
    /// Actual coalition size.
    pub c: usize,
    pub trials: u64,
    pub innocents_per_trial: usize,
    pub seed: u64,
    /// Accusation threshold, `params.z()` unless overridden.
    pub z: f64,
    pub budget_bytes: u64,
}

impl SimConfig {
    pub fn new(
        params: SchemeParams,
        strategy: Strategy,
        c: usize,
        trials: u64,
        innocents_per_trial: usize,
        seed: u64,
    ) -> Result<Self> {
        let cfg = SimConfig {
            z: params.z(),
            params,
            strategy,
            c,
            trials,
            innocents_per_trial,
            seed,
            budget_bytes: DEFAULT_MATRIX_BUDGET,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParams("trials must be at least 1".into()));
        }
        if self.c == 0 || self.c > self.params.c0() as usize {
            return Err(Error::InvalidParams(format!(
                "coalition size {} must lie in 1..={}",
                self.c,
                self.params.c0()
            )));
        }
        if self.strategy.c() != self.c {
            return Err(Error::LengthMismatch {
                what: "strategy table coalition size",
                expected: self.c,
                got: self.strategy.c(),
            });
        }
        if self.z.is_nan() {
            return Err(Error::InvalidParams("threshold is NaN".into()));
        }
        let m = self.params.m();
        let kept = self
            .trials
            .saturating_mul(self.innocents_per_trial as u64 + 1)
            .saturating_mul(8);
        let per_trial = (self.c as u64 + 1).saturating_mul(m / 8 + 8) + m.saturating_mul(40);
        let threads = rayon::current_num_threads() as u64;
        let need = kept.saturating_add(per_trial.saturating_mul(threads));
        if need > self.budget_bytes {
            return Err(Error::Capacity {
                requested: need,
                budget: self.budget_bytes,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trial: u64,
    pub ones: usize,
    pub coalition_score: f64,
    pub colluder_max: f64,
    pub colluders_accused: usize,
    pub innocents_accused: usize,
    pub innocents: usize,
}

struct TrialOutcome {
    summary: TrialSummary,
    innocent_scores: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateEstimate {
    pub events: u64,
    pub total: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Wilson score interval at quantile `z`.
pub fn wilson(events: u64, total: u64, z: f64) -> RateEstimate {
    let n = total as f64;
    let p = events as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / den;
    let half = z / den * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    RateEstimate {
        events,
        total,
        rate: p,
        ci_low: (centre - half).max(0.0),
        ci_high: (centre + half).min(1.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoreMoments {
    pub samples: u64,
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub low: f64,
    pub high: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins spanning the data range.
    pub fn from_samples(xs: &[f64], bins: usize) -> Histogram {
        let bins = bins.max(1);
        let low = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let mut high = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if xs.is_empty() {
            return Histogram {
                low: 0.0,
                high: 1.0,
                counts: vec![0; bins],
            };
        }
        if high <= low {
            high = low + 1.0;
        }
        let w = (high - low) / bins as f64;
        let mut counts = vec![0u64; bins];
        for &x in xs {
            let k = (((x - low) / w) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Histogram { low, high, counts }
    }

    pub fn width(&self) -> f64 {
        (self.high - self.low) / self.counts.len() as f64
    }

    pub fn density(&self) -> Vec<f64> {
        let n: u64 = self.counts.iter().sum();
        let w = self.width();
        self.counts
            .iter()
            .map(|&k| {
                if n == 0 {
                    0.0
                } else {
                    k as f64 / (n as f64 * w)
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let w = self.width();
        let mut s = String::from("bin_low,bin_high,count,density\n");
        for (k, (&n, d)) in self.counts.iter().zip(self.density()).enumerate() {
            let lo = self.low + k as f64 * w;
            let _ = writeln!(s, "{},{},{},{}", lo, lo + w, n, d);
        }
        s
    }
}

/// Kolmogorov-Smirnov distance between the sample and the standard normal.
pub fn ks_normal(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub m: u64,
    pub c: usize,
    pub z: f64,
    pub trials: u64,
    pub innocents_per_trial: usize,
    pub seed: u64,
    pub ci_method: &'static str,
    pub fp_hat: RateEstimate,
    pub fn_hat: RateEstimate,
    /// Raw innocent scores `S_j`.
    pub innocent_score_moments: ScoreMoments,
    /// Raw coalition sums `S`.
    pub coalition_score_moments: ScoreMoments,
    /// `S_j / sqrt(#ones in y)`, unit variance given `(p, y)`.
    pub innocent_histogram: Histogram,
    /// `S / (c sqrt(m))`.
    pub coalition_histogram: Histogram,
    pub ks_innocent: f64,
    #[serde(skip)]
    pub trial_summaries: Vec<TrialSummary>,
}

impl SimReport {
    /// One JSON object per trial, then an aggregate record.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for t in &self.trial_summaries {
            let mut v = serde_json::to_value(t).expect("trial summary serializes");
            v["record"] = "trial".into();
            s.push_str(&v.to_string());
            s.push('\n');
        }
        let mut v = serde_json::to_value(self).expect("report serializes");
        v["record"] = "aggregate".into();
        s.push_str(&v.to_string());
        s.push('\n');
        s
    }

    pub fn summary_text(&self) -> String {
        format!(
            "fp_hat = {:.6} [{:.6}, {:.6}] ({}/{})\nfn_hat = {:.6} [{:.6}, {:.6}] ({}/{})\n\
             innocent mean = {:.4}, var = {:.4}\ncoalition mean = {:.4}, var = {:.4}\nks_innocent = {:.5}\n",
            self.fp_hat.rate,
            self.fp_hat.ci_low,
            self.fp_hat.ci_high,
            self.fp_hat.events,
            self.fp_hat.total,
            self.fn_hat.rate,
            self.fn_hat.ci_low,
            self.fn_hat.ci_high,
            self.fn_hat.events,
            self.fn_hat.total,
            self.innocent_score_moments.mean,
            self.innocent_score_moments.variance,
            self.coalition_score_moments.mean,
            self.coalition_score_moments.variance,
            self.ks_innocent
        )
    }
}

/// Seed of the virtual codebook used by `trial`.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    StreamKey::new(seed, Purpose::Trial, trial).derive_seed(0)
}

/// Innocent score from regenerated bits, visiting only the `y = 1` columns.
/// Identical to scoring the full row of `user` with [`ColumnWeights::score_row`].
pub fn sparse_score(key: &StreamKey, ones: &[u32], thr: &[u64], w1: &[f64], w0: &[f64]) -> f64 {
    let mut s = 0.0;
    for (k, &i) in ones.iter().enumerate() {
        s += select(key.at(i as u64) < thr[k], w1[k], w0[k]);
    }
    s
}

/// Branch-free `if bit { a } else { b }`; the bits are unpredictable.
#[inline(always)]
fn select(bit: bool, a: f64, b: f64) -> f64 {
    let mask = 0u64.wrapping_sub(bit as u64);
    f64::from_bits((a.to_bits() & mask) | (b.to_bits() & !mask))
}

const LANES: usize = 4;

/// [`sparse_score`] for several users at once; each user's sum keeps the
/// ascending column order, so results are bit-identical.
fn sparse_scores(
    keys: &[StreamKey],
    ones: &[u32],
    thr: &[u64],
    w1: &[f64],
    w0: &[f64],
    out: &mut Vec<f64>,
) {
    let n = ones.len();
    let (thr, w1, w0) = (&thr[..n], &w1[..n], &w0[..n]);
    let mut blocks = keys.chunks_exact(LANES);
    for block in &mut blocks {
        let block: [StreamKey; LANES] = block.try_into().expect("exact chunk");
        let mut s = [0.0f64; LANES];
        for k in 0..n {
            let (i, t, a, b) = (ones[k] as u64, thr[k], w1[k], w0[k]);
            for l in 0..LANES {
                s[l] += select(block[l].at(i) < t, a, b);
            }
        }
        out.extend_from_slice(&s);
    }
    for key in blocks.remainder() {
        out.push(sparse_score(key, ones, thr, w1, w0));
    }
}

fn run_trial(cfg: &SimConfig, trial: u64) -> Result<TrialOutcome> {
    let m = cfg.params.m() as usize;
    let ts = trial_seed(cfg.seed, trial);
    let bias = sample_bias(m, cfg.params.t(), ts)?;
    let users: Vec<u64> = (0..cfg.c as u64).collect();
    let rows = gen_rows(ts, &users, &bias);
    let y = forge_from_counts(&column_counts(&rows), &cfg.strategy, ts)?;
    let weights = ColumnWeights::new(&bias);

    let mut coalition = 0.0;
    let mut colluder_max = f64::NEG_INFINITY;
    let mut colluders_accused = 0;
    for j in 0..cfg.c {
        let s = weights.score_row(rows.row(j), y.words());
        coalition += s;
        colluder_max = colluder_max.max(s);
        colluders_accused += (s > cfg.z) as usize;
    }

    let ones: Vec<u32> = y.ones().into_iter().map(|i| i as u32).collect();
    let all_thr = bias.thresholds();
    let thr: Vec<u64> = ones.iter().map(|&i| all_thr[i as usize]).collect();
    let w1: Vec<f64> = ones.iter().map(|&i| weights.g1(i as usize)).collect();
    let w0: Vec<f64> = ones.iter().map(|&i| weights.g0(i as usize)).collect();
    let keys: Vec<StreamKey> = (0..cfg.innocents_per_trial)
        .map(|k| row_key(ts, (cfg.c + k) as u64))
        .collect();
    let mut innocent_scores = Vec::with_capacity(keys.len());
    sparse_scores(&keys, &ones, &thr, &w1, &w0, &mut innocent_scores);
    let innocents_accused = innocent_scores.iter().filter(|&&s| s > cfg.z).count();

    Ok(TrialOutcome {
        summary: TrialSummary {
            trial,
            ones: ones.len(),
            coalition_score: coalition,
            colluder_max,
            colluders_accused,
            innocents_accused,
            innocents: cfg.innocents_per_trial,
        },
        innocent_scores,
    })
}

fn iid_moments(xs: &[f64]) -> ScoreMoments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in xs {
        let d = (x - mean) * (x - mean);
        m2 += d;
        m4 += d * d;
    }
    let variance = m2 / (n - 1.0);
    let mu4 = m4 / n;
    let pop = m2 / n;
    ScoreMoments {
        samples: xs.len() as u64,
        mean,
        variance,
        se_mean: (variance / n).sqrt(),
        se_variance: ((mu4 - pop * pop).max(0.0) / n).sqrt(),
    }
}

/// Moments of innocent scores; standard errors treat each trial as a
/// cluster, since innocents of one trial share `(p, y)`.
fn clustered_moments(outcomes: &[TrialOutcome]) -> ScoreMoments {
    let per: Vec<(f64, f64, f64)> = outcomes
        .iter()
        .filter(|o| !o.innocent_scores.is_empty())
        .map(|o| {
            let k = o.innocent_scores.len() as f64;
            let s1 = o.innocent_scores.iter().sum::<f64>() / k;
            let s2 = o.innocent_scores.iter().map(|x| x * x).sum::<f64>() / k;
            (k, s1, s2)
        })
        .collect();
    let total: f64 = per.iter().map(|p| p.0).sum();
    if total == 0.0 {
        return ScoreMoments {
            samples: 0,
            mean: f64::NAN,
            variance: f64::NAN,
            se_mean: f64::NAN,
            se_variance: f64::NAN,
        };
    }
    let mean = per.iter().map(|p| p.0 * p.1).sum::<f64>() / total;
    let second = per.iter().map(|p| p.0 * p.2).sum::<f64>() / total;
    let variance = (second - mean * mean) * total / (total - 1.0).max(1.0);
    let t = per.len() as f64;
    let spread = |f: &dyn Fn(&(f64, f64, f64)) -> f64, centre: f64| -> f64 {
        if t < 2.0 {
            return f64::NAN;
        }
        let ss: f64 = per.iter().map(|p| (f(p) - centre).powi(2)).sum();
        (ss / (t - 1.0) / t).sqrt()
    };
    ScoreMoments {
        samples: total as u64,
        mean,
        variance,
        se_mean: spread(&|p| p.1, mean),
        se_variance: spread(&|p| p.2 - mean * mean, variance),
    }
}

pub fn run(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect::<Result<_>>()?;

    let innocents_total = cfg.trials * cfg.innocents_per_trial as u64;
    let fp_events: u64 = outcomes
        .iter()
        .map(|o| o.summary.innocents_accused as u64)
        .sum();
    let fn_events = outcomes
        .iter()
        .filter(|o| o.summary.colluders_accused == 0)
        .count() as u64;

    let m = cfg.params.m() as f64;
    let coalition: Vec<f64> = outcomes.iter().map(|o| o.summary.coalition_score).collect();
    let coalition_norm: Vec<f64> = coalition
        .iter()
        .map(|s| s / (cfg.c as f64 * m.sqrt()))
        .collect();
    let innocent_norm: Vec<f64> = outcomes
        .iter()
        .flat_map(|o| {
            let r = (o.summary.ones.max(1) as f64).sqrt();
            o.innocent_scores.iter().map(move |s| s / r)
        })
        .collect();

    let report = SimReport {
        m: cfg.params.m(),
        c: cfg.c,
        z: cfg.z,
        trials: cfg.trials,
        innocents_per_trial: cfg.innocents_per_trial,
        seed: cfg.seed,
        ci_method: CI_METHOD,
        fp_hat: if innocents_total == 0 {
            RateEstimate {
                events: 0,
                total: 0,
                rate: f64::NAN,
                ci_low: 0.0,
                ci_high: 1.0,
            }
        } else {
            wilson(fp_events, innocents_total, Z99)
        },
        fn_hat: wilson(fn_events, cfg.trials, Z99),
        innocent_score_moments: clustered_moments(&outcomes),
        coalition_score_moments: iid_moments(&coalition),
        innocent_histogram: Histogram::from_samples(&innocent_norm, HISTOGRAM_BINS),
        coalition_histogram: Histogram::from_samples(&coalition_norm, HISTOGRAM_BINS),
        ks_innocent: if innocent_norm.is_empty() {
            f64::NAN
        } else {
            ks_normal(&innocent_norm)
        },
        trial_summaries: outcomes.into_iter().map(|o| o.summary).collect(),
    };
    Ok(report)
}

/// The two histograms, innocent then coalition.
pub fn score_histograms(cfg: &SimConfig) -> Result<(Histogram, Histogram, f64)> {
    let r = run(cfg)?;
    Ok((r.innocent_histogram, r.coalition_histogram, r.ks_innocent))
}
