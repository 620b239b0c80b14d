//! Bias vector and codeword matrix generation, and the codebook file format.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_cutoff, tprime, SchemeParams};
use crate::rng::{bernoulli_threshold, Purpose, StreamKey};

/// Default ceiling on the bytes a generated matrix may occupy.
pub const DEFAULT_MATRIX_BUDGET: u64 = 4 << 30;

const MAGIC: &[u8; 4] = b"TRDC";
pub const FORMAT_VERSION: u32 = 1;
const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasVector {
    values: Vec<f64>,
    t: f64,
}

impl BiasVector {
    pub fn new(values: Vec<f64>, t: f64) -> Result<Self> {
        check_cutoff(t)?;
        if let Some(&p) = values.iter().find(|&&p| !(p >= t && p <= 1.0 - t)) {
            return Err(crate::error::domain("bias value", p, "[t, 1 - t]"));
        }
        Ok(BiasVector { values, t })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Per-column thresholds for [`bit_at`].
    pub fn thresholds(&self) -> Vec<u64> {
        self.values
            .iter()
            .map(|&p| bernoulli_threshold(p))
            .collect()
    }
}

/// `m` i.i.d. draws from the arcsine density on `[t, 1-t]`:
/// `p = sin^2 r` with `r` uniform on `[t', pi/2 - t']`.
pub fn sample_bias(m: usize, t: f64, seed: u64) -> Result<BiasVector> {
    check_cutoff(t)?;
    if m == 0 {
        return Err(Error::InvalidParams("m must be positive".into()));
    }
    let key = StreamKey::new(seed, Purpose::Bias, 0);
    let tp = tprime(t);
    let span = FRAC_PI_2 - 2.0 * tp;
    let values = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let r = tp + span * key.unit_at(i);
            r.sin().powi(2).clamp(t, 1.0 - t)
        })
        .collect();
    Ok(BiasVector { values, t })
}

/// Row-major packed bits, 64 columns per word, column `i` at bit `i % 64`
/// of word `i / 64`. Padding bits are zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    data: Vec<u64>,
}

pub fn words_for(cols: usize) -> usize {
    cols.div_ceil(64)
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let wpr = words_for(cols);
        BitMatrix {
            rows,
            cols,
            words_per_row: wpr,
            data: vec![0; rows * wpr],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>, cols: usize) -> Result<Self> {
        let wpr = words_for(cols);
        let n = rows.len();
        let mut data = Vec::with_capacity(n * wpr);
        for r in rows {
            if r.len() != wpr {
                return Err(Error::LengthMismatch {
                    what: "packed row",
                    expected: wpr,
                    got: r.len(),
                });
            }
            data.extend_from_slice(&r);
        }
        let m = BitMatrix {
            rows: n,
            cols,
            words_per_row: wpr,
            data,
        };
        m.check_padding()?;
        Ok(m)
    }

    fn check_padding(&self) -> Result<()> {
        let rem = self.cols % 64;
        if rem == 0 {
            return Ok(());
        }
        let mask = !0u64 << rem;
        for r in 0..self.rows {
            if self.row(r)[self.words_per_row - 1] & mask != 0 {
                return Err(Error::Format(format!("nonzero padding bits in row {r}")));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        get_bit(self.row(r), c)
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        let w = &mut self.data[r * self.words_per_row + c / 64];
        if v {
            *w |= 1 << (c % 64);
        } else {
            *w &= !(1 << (c % 64));
        }
    }

    pub fn words(&self) -> &[u64] {
        &self.data
    }
}

#[inline(always)]
pub fn get_bit(row: &[u64], c: usize) -> bool {
    (row[c / 64] >> (c % 64)) & 1 == 1
}

/// Pack a slice of booleans.
pub fn pack_bits(bits: &[bool]) -> Vec<u64> {
    let mut out = vec![0u64; words_for(bits.len())];
    for (i, &b) in bits.iter().enumerate() {
        out[i / 64] |= (b as u64) << (i % 64);
    }
    out
}

pub fn unpack_bits(words: &[u64], len: usize) -> Vec<bool> {
    (0..len).map(|i| get_bit(words, i)).collect()
}

/// Bit `(j, i)` of the matrix generated from `seed`: set iff the `i`-th draw
/// of row `j`'s stream falls below the column threshold.
#[inline(always)]
pub fn bit_at(row_key: &StreamKey, thresholds: &[u64], i: usize) -> bool {
    row_key.at(i as u64) < thresholds[i]
}

pub fn row_key(seed: u64, user: u64) -> StreamKey {
    StreamKey::new(seed, Purpose::Row, user)
}

/// Regenerate one user's packed row without touching any other row.
pub fn gen_row(seed: u64, user: u64, thresholds: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; words_for(thresholds.len())];
    fill_row(&row_key(seed, user), thresholds, &mut out);
    out
}

fn fill_row(key: &StreamKey, thresholds: &[u64], out: &mut [u64]) {
    for (wi, (w, chunk)) in out.iter_mut().zip(thresholds.chunks(64)).enumerate() {
        let base = (wi * 64) as u64;
        let mut word = 0u64;
        for (k, &thr) in chunk.iter().enumerate() {
            word |= ((key.at(base + k as u64) < thr) as u64) << k;
        }
        *w = word;
    }
}

/// Rows `users` of the matrix for `seed` and `bias`, e.g. a coalition.
pub fn gen_rows(seed: u64, users: &[u64], bias: &BiasVector) -> BitMatrix {
    let thr = bias.thresholds();
    let m = bias.len();
    let wpr = words_for(m);
    let mut data = vec![0u64; users.len() * wpr];
    data.par_chunks_mut(wpr.max(1))
        .zip(users.par_iter())
        .for_each(|(row, &u)| fill_row(&row_key(seed, u), &thr, row));
    BitMatrix {
        rows: users.len(),
        cols: m,
        words_per_row: wpr,
        data,
    }
}

/// Full `n x m` matrix.
pub fn gen_matrix(n: usize, bias: &BiasVector, seed: u64, budget_bytes: u64) -> Result<BitMatrix> {
    if n == 0 {
        return Err(Error::InvalidParams("n must be positive".into()));
    }
    let bytes = (n as u128) * (words_for(bias.len()) as u128) * 8;
    if bytes > budget_bytes as u128 {
        return Err(Error::Capacity {
            requested: bytes.min(u64::MAX as u128) as u64,
            budget: budget_bytes,
        });
    }
    let users: Vec<u64> = (0..n as u64).collect();
    Ok(gen_rows(seed, &users, bias))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    params: SchemeParams,
    seed: u64,
    bias: BiasVector,
    matrix: BitMatrix,
}

impl Codebook {
    pub fn new(
        params: SchemeParams,
        seed: u64,
        bias: BiasVector,
        matrix: BitMatrix,
    ) -> Result<Self> {
        let m = params.m() as usize;
        if bias.len() != m {
            return Err(Error::LengthMismatch {
                what: "bias vector",
                expected: m,
                got: bias.len(),
            });
        }
        if matrix.cols() != m {
            return Err(Error::LengthMismatch {
                what: "matrix columns",
                expected: m,
                got: matrix.cols(),
            });
        }
        if matrix.rows() as u64 != params.n() {
            return Err(Error::LengthMismatch {
                what: "matrix rows",
                expected: params.n() as usize,
                got: matrix.rows(),
            });
        }
        if bias.t() != params.t() {
            return Err(Error::InvalidParams(
                "bias cutoff differs from params.t".into(),
            ));
        }
        Ok(Codebook {
            params,
            seed,
            bias,
            matrix,
        })
    }

    /// Bias and matrix both derived from `seed`.
    pub fn generate(params: &SchemeParams, seed: u64, budget_bytes: u64) -> Result<Self> {
        let bias = sample_bias(params.m() as usize, params.t(), seed)?;
        let matrix = gen_matrix(params.n() as usize, &bias, seed, budget_bytes)?;
        Codebook::new(params.clone(), seed, bias, matrix)
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bias(&self) -> &BiasVector {
        &self.bias
    }

    pub fn matrix(&self) -> &BitMatrix {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn m(&self) -> usize {
        self.matrix.cols()
    }

    /// Rows for the given user indices.
    pub fn select_rows(&self, users: &[usize]) -> Result<BitMatrix> {
        let mut rows = Vec::with_capacity(users.len());
        for &u in users {
            if u >= self.n() {
                return Err(Error::InvalidParams(format!(
                    "user {u} out of range (n = {})",
                    self.n()
                )));
            }
            rows.push(self.matrix.row(u).to_vec());
        }
        BitMatrix::from_rows(rows, self.m())
    }
}

struct CrcWriter<'a, W: Write> {
    inner: W,
    digest: crc::Digest<'a, u64>,
}

impl<W: Write> CrcWriter<'_, W> {
    fn put(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.digest.update(bytes);
        self.inner.write_all(bytes)
    }
}

pub fn save_codebook(cb: &Codebook, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = CrcWriter {
        inner: BufWriter::new(file),
        digest: CRC64.digest(),
    };
    w.put(MAGIC)?;
    w.put(&FORMAT_VERSION.to_le_bytes())?;
    w.put(&cb.seed.to_le_bytes())?;
    let (n, m, c0, floats) = cb.params.raw();
    w.put(&n.to_le_bytes())?;
    w.put(&m.to_le_bytes())?;
    w.put(&c0.to_le_bytes())?;
    for f in floats {
        w.put(&f.to_le_bytes())?;
    }
    w.put(&(cb.bias.len() as u64).to_le_bytes())?;
    for &p in cb.bias.values() {
        w.put(&p.to_le_bytes())?;
    }
    w.put(&(cb.matrix.rows as u64).to_le_bytes())?;
    w.put(&(cb.matrix.words_per_row as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * 4096);
    for chunk in cb.matrix.data.chunks(4096) {
        buf.clear();
        for word in chunk {
            buf.extend_from_slice(&word.to_le_bytes());
        }
        w.put(&buf)?;
    }
    let sum = w.digest.finalize();
    w.inner.write_all(&sum.to_le_bytes())?;
    w.inner.flush()?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    let bytes = fs::read(path)?;
    decode_codebook(&bytes)
}

pub fn decode_codebook(bytes: &[u8]) -> Result<Codebook> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic bytes, not a codebook file".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version(version));
    }
    let seed = r.u64("seed")?;
    let n = r.u64("params")?;
    let m = r.u64("params")?;
    let c0 = r.u32("params")?;
    let mut floats = [0.0; 6];
    for f in &mut floats {
        *f = r.f64("params")?;
    }
    let bias_len = r.u64("bias length")?;
    let bias_bytes = checked_bytes(bias_len, 1)?;
    let bias_start = r.pos;
    r.take(bias_bytes, "bias")?;
    let rows = r.u64("matrix header")?;
    let wpr = r.u64("matrix header")?;
    let bit_bytes = checked_bytes(rows, wpr)?;
    let bits_start = r.pos;
    r.take(bit_bytes, "bit matrix")?;
    let body_end = r.pos;
    let stored = r.u64("checksum")?;
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checksum".into()));
    }
    let computed = CRC64.checksum(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let params = SchemeParams::from_raw(n, m, c0, floats)?;
    let values = bytes[bias_start..bias_start + bias_bytes]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let bias = BiasVector::new(values, params.t())?;
    if wpr as usize != words_for(m as usize) {
        return Err(Error::Format(format!(
            "{wpr} words per row does not fit m = {m}"
        )));
    }
    let data = bytes[bits_start..bits_start + bit_bytes]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let matrix = BitMatrix {
        rows: rows as usize,
        cols: m as usize,
        words_per_row: wpr as usize,
        data,
    };
    matrix.check_padding()?;
    Codebook::new(params, seed, bias, matrix)
}

fn checked_bytes(a: u64, b: u64) -> Result<usize> {
    a.checked_mul(b)
        .and_then(|x| x.checked_mul(8))
        .and_then(|x| usize::try_from(x).ok())
        .ok_or(Error::Truncated("declared size exceeds file"))
}
