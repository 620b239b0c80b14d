//! Accusation sums and the accused set.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::codegen::{get_bit, pack_bits, words_for, BiasVector, BitMatrix, Codebook};
use crate::error::{Error, Result};
use crate::model::{g0_raw, g1_raw};

/// The `m`-bit string found in an unauthorized copy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PirateCopy {
    len: usize,
    words: Vec<u64>,
}

impl PirateCopy {
    pub fn from_bits(bits: &[bool]) -> Self {
        PirateCopy {
            len: bits.len(),
            words: pack_bits(bits),
        }
    }

    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        if words.len() != words_for(len) {
            return Err(Error::LengthMismatch {
                what: "pirate copy words",
                expected: words_for(len),
                got: words.len(),
            });
        }
        let rem = len % 64;
        if rem != 0 && words[words.len() - 1] >> rem != 0 {
            return Err(Error::Format("nonzero padding bits in pirate copy".into()));
        }
        Ok(PirateCopy { len, words })
    }

    /// Parse a line of `0`/`1` characters; surrounding whitespace is ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let s = text.trim();
        let mut bits = Vec::with_capacity(s.len());
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => bits.push(false),
                '1' => bits.push(true),
                _ => {
                    return Err(Error::Format(format!(
                        "pirate copy: unexpected character {ch:?} at position {i}"
                    )))
                }
            }
        }
        if bits.is_empty() {
            return Err(Error::Format("pirate copy is empty".into()));
        }
        Ok(PirateCopy::from_bits(&bits))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        get_bit(&self.words, i)
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Column indices with `y_i = 1`, ascending.
    pub fn ones(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.count_ones());
        for (wi, &w) in self.words.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                out.push(wi * 64 + w.trailing_zeros() as usize);
                w &= w - 1;
            }
        }
        out
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.len)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect()
    }
}

/// Precomputed `g1(p_i)` and `g0(p_i)` for every column.
#[derive(Clone, Debug)]
pub struct ColumnWeights {
    w1: Vec<f64>,
    w0: Vec<f64>,
}

impl ColumnWeights {
    pub fn new(bias: &BiasVector) -> Self {
        ColumnWeights {
            w1: bias.values().iter().map(|&p| g1_raw(p)).collect(),
            w0: bias.values().iter().map(|&p| g0_raw(p)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.w1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w1.is_empty()
    }

    pub fn g1(&self, i: usize) -> f64 {
        self.w1[i]
    }

    pub fn g0(&self, i: usize) -> f64 {
        self.w0[i]
    }

    /// `S_j` for a packed row; columns are visited in ascending order.
    #[inline]
    pub fn score_row(&self, row: &[u64], y: &[u64]) -> f64 {
        let mut s = 0.0;
        for (wi, (&yw, &xw)) in y.iter().zip(row).enumerate() {
            let mut bits = yw;
            while bits != 0 {
                let k = bits.trailing_zeros() as usize;
                let i = wi * 64 + k;
                s += if (xw >> k) & 1 == 1 {
                    self.w1[i]
                } else {
                    self.w0[i]
                };
                bits &= bits - 1;
            }
        }
        s
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected,
            got,
        })
    }
}

/// `S_j = sum_{i: y_i = 1} g_{X_ji}(p_i)` for one packed row.
pub fn score_user(row: &[u64], y: &PirateCopy, bias: &BiasVector) -> Result<f64> {
    check_len("pirate copy", bias.len(), y.len())?;
    check_len("row words", words_for(bias.len()), row.len())?;
    Ok(ColumnWeights::new(bias).score_row(row, y.words()))
}

/// Collective sum `S = sum_{i: y_i=1} (x_i g1(p_i) + (c - x_i) g0(p_i))`.
pub fn coalition_score(rows: &BitMatrix, y: &PirateCopy, bias: &BiasVector) -> Result<f64> {
    if rows.rows() == 0 {
        return Err(Error::InvalidParams("coalition has no rows".into()));
    }
    check_len("pirate copy", bias.len(), y.len())?;
    check_len("coalition rows", bias.len(), rows.cols())?;
    let c = rows.rows();
    let p = bias.values();
    let mut s = 0.0;
    for i in y.ones() {
        let x = (0..c).filter(|&r| rows.get(r, i)).count() as f64;
        s += x * g1_raw(p[i]) + (c as f64 - x) * g0_raw(p[i]);
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccusationReport {
    pub scores: Vec<f64>,
    pub accused: Vec<usize>,
    pub threshold: f64,
    pub coalition_score: Option<f64>,
}

impl AccusationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("user_id,score,accused\n");
        let mut next = self.accused.iter().peekable();
        for (j, score) in self.scores.iter().enumerate() {
            let hit = next.peek() == Some(&&j);
            if hit {
                next.next();
            }
            let _ = writeln!(s, "{j},{score},{}", hit as u8);
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

/// Score every user and accuse those with `S_j > Z`.
pub fn trace(cb: &Codebook, y: &PirateCopy, z: f64) -> Result<AccusationReport> {
    if z.is_nan() {
        return Err(Error::InvalidParams("threshold is NaN".into()));
    }
    check_len("pirate copy", cb.m(), y.len())?;
    let weights = ColumnWeights::new(cb.bias());
    let mat = cb.matrix();
    let scores: Vec<f64> = (0..cb.n())
        .into_par_iter()
        .map(|j| weights.score_row(mat.row(j), y.words()))
        .collect();
    let accused = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > z)
        .map(|(j, _)| j)
        .collect();
    Ok(AccusationReport {
        scores,
        accused,
        threshold: z,
        coalition_score: None,
    })
}
