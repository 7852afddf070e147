//! Small dense linear algebra kit: row-major `f64` matrices, vectors, the
//! activations used by the recurrent and attention layers, and a seeded
//! generator for parameter initialisation.

use std::fmt;
use std::ops::{Deref, DerefMut};

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense column vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vec64(Vec<f64>);

impl Vec64 {
    pub fn zeros(len: usize) -> Self {
        Vec64(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vec64(vec![value; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for Vec64 {
    fn from(v: Vec<f64>) -> Self {
        Vec64(v)
    }
}

impl From<&[f64]> for Vec64 {
    fn from(v: &[f64]) -> Self {
        Vec64(v.to_vec())
    }
}

impl Deref for Vec64 {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vec64 {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Display for Mat64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl Mat64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat64 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat64::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Mat64::from_vec",
                format!("{rows}x{cols}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Mat64 { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Mat64::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Mat64 {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · v` without shape checks. Callers inside the crate guarantee
    /// `v.len() == cols`.
    pub(crate) fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `out += selfᵀ · v`.
    pub(crate) fn add_mul_vec_t(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &vr) in v.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(r)) {
                *o += m * vr;
            }
        }
    }

    /// `self += a ⊗ b`.
    pub(crate) fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (x, &bc) in row.iter_mut().zip(b) {
                *x += ar * bc;
            }
        }
    }
}

/// Seeded, counter-based generator (ChaCha8). Equal seeds give identical
/// draw sequences on every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random()
    }

    /// Uniform in `[lo, hi]`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..=hi)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn matvec(m: &Mat64, v: &[f64]) -> Result<Vec64> {
    if v.len() != m.cols {
        return Err(Error::shape("matvec", m, format!("vector of length {}", v.len())));
    }
    Ok(Vec64(m.mul_vec(v)))
}

pub fn concat(a: &[f64], b: &[f64]) -> Vec64 {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    Vec64(out)
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)`, computed without overflow.
pub(crate) fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(v: &[f64]) -> Vec64 {
    Vec64(v.iter().map(|&x| sigmoid_scalar(x)).collect())
}

pub fn tanh_act(v: &[f64]) -> Vec64 {
    Vec64(v.iter().map(|x| x.tanh()).collect())
}

pub fn softmax(scores: &[f64]) -> Result<Vec64> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Vec64(exps.into_iter().map(|e| e / total).collect()))
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec64> {
    if a.len() != b.len() {
        return Err(Error::shape("hadamard", a.len(), b.len()));
    }
    Ok(Vec64(a.iter().zip(b).map(|(x, y)| x * y).collect()))
}

pub fn init_uniform(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Result<Mat64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "init scale must be positive, got {scale}"
        )));
    }
    let data = (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect();
    Ok(Mat64 { rows, cols, data })
}
