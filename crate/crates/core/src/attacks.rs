//! Coalition strategies and pirate-copy forging under the marking condition.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::codegen::{words_for, BitMatrix};
use crate::error::{Error, Result};
use crate::rng::{bernoulli_threshold, Purpose, StreamKey};
use crate::tracer::PirateCopy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Emit a one whenever any colluder has a one.
    Extremal,
    /// Copy the symbol of a uniformly chosen colluder: `psi(x) = x/c`.
    Interleave,
    /// Majority vote, fair coin on a tie.
    Majority,
    /// Minority vote, fair coin on a tie.
    Minority,
    /// Fair coin in every detectable position.
    Coin,
    /// User-supplied table.
    Custom,
}

impl StrategyKind {
    pub const BUILT_IN: [StrategyKind; 5] = [
        StrategyKind::Extremal,
        StrategyKind::Interleave,
        StrategyKind::Majority,
        StrategyKind::Minority,
        StrategyKind::Coin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Extremal => "extremal",
            StrategyKind::Interleave => "interleave",
            StrategyKind::Majority => "majority",
            StrategyKind::Minority => "minority",
            StrategyKind::Coin => "coin",
            StrategyKind::Custom => "custom",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "extremal" => Ok(StrategyKind::Extremal),
            "interleave" => Ok(StrategyKind::Interleave),
            "majority" => Ok(StrategyKind::Majority),
            "minority" => Ok(StrategyKind::Minority),
            "coin" => Ok(StrategyKind::Coin),
            "custom" => Ok(StrategyKind::Custom),
            _ => Err(Error::UnknownStrategy(s.to_string())),
        }
    }
}

/// `psi(x)` for `x = 0..=c`: probability of emitting a one when `x` of the
/// `c` colluders hold a one in that column.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Strategy {
    kind: StrategyKind,
    psi: Vec<f64>,
}

/// Table of a built-in strategy for coalition size `c`.
pub fn strategy_psi(kind: StrategyKind, c: usize) -> Result<Vec<f64>> {
    if c == 0 {
        return Err(Error::InvalidParams(
            "coalition size must be positive".into(),
        ));
    }
    let vote = |x: usize, ones_win: bool| -> f64 {
        match (2 * x).cmp(&c) {
            std::cmp::Ordering::Equal => 0.5,
            std::cmp::Ordering::Greater => ones_win as u8 as f64,
            std::cmp::Ordering::Less => (!ones_win) as u8 as f64,
        }
    };
    let mut psi: Vec<f64> = (0..=c)
        .map(|x| match kind {
            StrategyKind::Extremal => 1.0,
            StrategyKind::Interleave => x as f64 / c as f64,
            StrategyKind::Majority => vote(x, true),
            StrategyKind::Minority => vote(x, false),
            StrategyKind::Coin => 0.5,
            StrategyKind::Custom => f64::NAN,
        })
        .collect();
    if kind == StrategyKind::Custom {
        return Err(Error::InvalidParams(
            "custom strategies need an explicit table".into(),
        ));
    }
    psi[0] = 0.0;
    psi[c] = 1.0;
    Ok(psi)
}

impl Strategy {
    pub fn built_in(kind: StrategyKind, c: usize) -> Result<Self> {
        Ok(Strategy {
            kind,
            psi: strategy_psi(kind, c)?,
        })
    }

    pub fn named(name: &str, c: usize) -> Result<Self> {
        Strategy::built_in(name.parse()?, c)
    }

    pub fn custom(psi: Vec<f64>) -> Result<Self> {
        if psi.len() < 2 {
            return Err(Error::InvalidParams(
                "custom table needs entries for x = 0..=c with c >= 1".into(),
            ));
        }
        let c = psi.len() - 1;
        if psi[0] != 0.0 || psi[c] != 1.0 {
            return Err(Error::InvalidParams(format!(
                "marking condition requires psi(0) = 0 and psi({c}) = 1"
            )));
        }
        if let Some((x, v)) = psi
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidParams(format!(
                "psi({x}) = {v} outside [0, 1]"
            )));
        }
        Ok(Strategy {
            kind: StrategyKind::Custom,
            psi,
        })
    }

    /// Load a custom table from `x,psi` lines; an optional header is skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (a, b) = line.split_once(',').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected `x,psi`".into(),
            })?;
            let (a, b) = (a.trim(), b.trim());
            let x = match a.parse::<usize>() {
                Ok(x) => x,
                Err(_) if entries.is_empty() && a.eq_ignore_ascii_case("x") => continue,
                Err(e) => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("x: {e}"),
                    })
                }
            };
            let v = b.parse::<f64>().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("psi: {e}"),
            })?;
            entries.push((x, v));
        }
        if entries.is_empty() {
            return Err(Error::Format("strategy table is empty".into()));
        }
        entries.sort_by_key(|e| e.0);
        for (k, &(x, _)) in entries.iter().enumerate() {
            if x != k {
                return Err(Error::Format(format!(
                    "strategy table must list x = 0..=c exactly once (problem at x = {x})"
                )));
            }
        }
        Strategy::custom(entries.into_iter().map(|e| e.1).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,psi\n");
        for (x, v) in self.psi.iter().enumerate() {
            s.push_str(&format!("{x},{v}\n"));
        }
        s
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn c(&self) -> usize {
        self.psi.len() - 1
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    fn is_deterministic(&self) -> bool {
        self.psi.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Number of ones per column among the rows.
pub fn column_counts(rows: &BitMatrix) -> Vec<u32> {
    let m = rows.cols();
    let mut counts = vec![0u32; m];
    for r in 0..rows.rows() {
        for (wi, &w) in rows.row(r).iter().enumerate() {
            let mut bits = w;
            while bits != 0 {
                counts[wi * 64 + bits.trailing_zeros() as usize] += 1;
                bits &= bits - 1;
            }
        }
    }
    counts
}

/// Forge from precomputed column counts. Column `i` uses draw `i` of the
/// forge stream, so the output does not depend on processing order.
pub fn forge_from_counts(counts: &[u32], strategy: &Strategy, seed: u64) -> Result<PirateCopy> {
    let c = strategy.c() as u32;
    if let Some(&x) = counts.iter().find(|&&x| x > c) {
        return Err(Error::InvalidParams(format!(
            "column count {x} exceeds coalition size {c}"
        )));
    }
    let m = counts.len();
    let mut words = vec![0u64; words_for(m)];
    let key = StreamKey::new(seed, Purpose::Forge, 0);
    let thr: Vec<u64> = strategy
        .psi
        .iter()
        .map(|&v| bernoulli_threshold(v))
        .collect();
    let deterministic = strategy.is_deterministic();
    for (i, &x) in counts.iter().enumerate() {
        let one = if x == 0 {
            false
        } else if x == c {
            true
        } else if deterministic {
            strategy.psi[x as usize] == 1.0
        } else {
            key.at(i as u64) < thr[x as usize]
        };
        words[i / 64] |= (one as u64) << (i % 64);
    }
    PirateCopy::from_words(words, m)
}

/// Pirate copy produced by the coalition holding `rows`.
pub fn forge(rows: &BitMatrix, strategy: &Strategy, seed: u64) -> Result<PirateCopy> {
    if rows.rows() == 0 {
        return Err(Error::InvalidParams("coalition has no rows".into()));
    }
    if rows.rows() != strategy.c() {
        return Err(Error::LengthMismatch {
            what: "strategy table coalition size",
            expected: rows.rows(),
            got: strategy.c(),
        });
    }
    forge_from_counts(&column_counts(rows), strategy, seed)
}
