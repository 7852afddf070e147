//! Forward computation for the three model variants.
//!
//! * `LtCcp`  – stacked LSTM; the final top-layer hidden state feeds the readout.
//! * `AttBLt` – attention over the inputs reweights each timestep before the
//!   recurrence; the final hidden state feeds the readout.
//! * `AttALt` – attention over `[xᵗ; hᵗ]` after the recurrence; the
//!   attention-weighted average feeds the readout.
//!
//! Every variant ends in a monotone readout head: `H` softplus increments
//! accumulated on top of the last observed cumulative count.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::FeatureSequence;
use crate::error::{Error, Result};
use crate::numkit::{
    dot, init_uniform, sigmoid_scalar, softmax, softplus_scalar, Mat64, Rng, Vec64,
};

/// Uniform initialisation half-width for every weight and bias.
pub const INIT_SCALE: f64 = 0.08;
/// Initial forget-gate bias.
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    LtCcp,
    AttBLt,
    AttALt,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::LtCcp, Variant::AttBLt, Variant::AttALt];

    pub fn has_attention(self) -> bool {
        !matches!(self, Variant::LtCcp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::LtCcp => "lt-ccp",
            Variant::AttBLt => "att-b-lt",
            Variant::AttALt => "att-a-lt",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

/// What the after-recurrence attention averages: the raw inputs only, or
/// the joint `[xᵗ; hᵗ]` vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    Inputs,
    #[default]
    Joint,
}

impl PoolMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolMode::Inputs => "inputs",
            PoolMode::Joint => "joint",
        }
    }
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [PoolMode::Inputs, PoolMode::Joint]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown pool mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub hidden: usize,
    /// Length `K` of each input window.
    pub input_dim: usize,
    pub t_obs: usize,
    pub horizons: usize,
    pub attn: usize,
    pub pool: PoolMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::AttALt,
            layers: 2,
            hidden: 16,
            input_dim: 10,
            t_obs: 5,
            horizons: 5,
            attn: 16,
            pool: PoolMode::Joint,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("input_dim", self.input_dim),
            ("t_obs", self.t_obs),
            ("horizons", self.horizons),
            ("attn", self.attn),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Width of the vectors scored by the attention layer.
    pub fn attention_in_dim(&self) -> usize {
        match self.variant {
            Variant::AttALt => self.input_dim + self.hidden,
            _ => self.input_dim,
        }
    }

    /// Width of the vector handed to the readout.
    pub fn pooled_dim(&self) -> usize {
        match (self.variant, self.pool) {
            (Variant::AttALt, PoolMode::Joint) => self.input_dim + self.hidden,
            (Variant::AttALt, PoolMode::Inputs) => self.input_dim,
            _ => self.hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCellParams {
    pub w_i: Mat64,
    pub w_f: Mat64,
    pub w_c: Mat64,
    pub w_o: Mat64,
    pub b_i: Vec64,
    pub b_f: Vec64,
    pub b_c: Vec64,
    pub b_o: Vec64,
}

impl LstmCellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = Mat64::zeros(hidden, hidden + input);
        let b = Vec64::zeros(hidden);
        LstmCellParams {
            w_i: w.clone(),
            w_f: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_i: b.clone(),
            b_f: b.clone(),
            b_c: b.clone(),
            b_o: b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_i.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_i.cols() - self.w_i.rows()
    }

    fn check(&self, hidden: usize, input: usize) -> Result<()> {
        let want = (hidden, hidden + input);
        for (name, w) in [("w_i", &self.w_i), ("w_f", &self.w_f), ("w_c", &self.w_c), ("w_o", &self.w_o)] {
            if w.shape() != want {
                return Err(Error::shape(name, w, format!("{}x{}", want.0, want.1)));
            }
        }
        for (name, b) in [("b_i", &self.b_i), ("b_f", &self.b_f), ("b_c", &self.b_c), ("b_o", &self.b_o)] {
            if b.len() != hidden {
                return Err(Error::shape(name, b.len(), hidden));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec64,
    pub c: Vec64,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: Vec64::zeros(hidden),
            c: Vec64::zeros(hidden),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_a: Mat64,
    /// Direction onto which each `aᵗ` is projected to give a scalar score.
    pub u: Vec64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    pub w_r: Mat64,
    pub b_r: Vec64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lstm: Vec<LstmCellParams>,
    pub attention: Option<AttentionParams>,
    pub readout: ReadoutParams,
}

/// A named view of one parameter tensor; vectors have a one-element shape.
#[derive(Debug)]
pub struct Block<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [f64],
}

impl ModelParams {
    /// All-zero parameters with the shapes `config` requires. Also serves
    /// as the gradient accumulator.
    pub fn zeros(config: &ModelConfig) -> Self {
        let lstm = (0..config.layers)
            .map(|l| {
                let input = if l == 0 { config.input_dim } else { config.hidden };
                LstmCellParams::zeros(config.hidden, input)
            })
            .collect();
        let attention = config.variant.has_attention().then(|| AttentionParams {
            w_a: Mat64::zeros(config.attn, config.attention_in_dim()),
            u: Vec64::zeros(config.attn),
        });
        let readout = ReadoutParams {
            w_r: Mat64::zeros(config.horizons, config.pooled_dim()),
            b_r: Vec64::zeros(config.horizons),
        };
        ModelParams {
            lstm,
            attention,
            readout,
        }
    }

    /// Uniform `±INIT_SCALE` everywhere except the forget-gate biases, which
    /// start at `FORGET_BIAS_INIT`.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ModelParams::zeros(config);
        for (_, values) in params.blocks_mut() {
            let fresh = init_uniform(rng, 1, values.len(), INIT_SCALE)?;
            values.copy_from_slice(fresh.as_slice());
        }
        for cell in &mut params.lstm {
            cell.b_f.iter_mut().for_each(|b| *b = FORGET_BIAS_INIT);
        }
        Ok(params)
    }

    /// Shapes agree with `config` and every value is finite.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        config.validate()?;
        if self.lstm.len() != config.layers {
            return Err(Error::shape("lstm layers", self.lstm.len(), config.layers));
        }
        for (l, cell) in self.lstm.iter().enumerate() {
            let input = if l == 0 { config.input_dim } else { config.hidden };
            cell.check(config.hidden, input)?;
        }
        match (&self.attention, config.variant.has_attention()) {
            (Some(a), true) => {
                let want = (config.attn, config.attention_in_dim());
                if a.w_a.shape() != want {
                    return Err(Error::shape("attention.w_a", &a.w_a, format!("{}x{}", want.0, want.1)));
                }
                if a.u.len() != config.attn {
                    return Err(Error::shape("attention.u", a.u.len(), config.attn));
                }
            }
            (None, false) => {}
            (Some(_), false) => {
                return Err(Error::InvalidArgument(format!(
                    "variant {} takes no attention parameters",
                    config.variant
                )))
            }
            (None, true) => {
                return Err(Error::InvalidArgument(format!(
                    "variant {} requires attention parameters",
                    config.variant
                )))
            }
        }
        let want = (config.horizons, config.pooled_dim());
        if self.readout.w_r.shape() != want {
            return Err(Error::shape("readout.w_r", &self.readout.w_r, format!("{}x{}", want.0, want.1)));
        }
        if self.readout.b_r.len() != config.horizons {
            return Err(Error::shape("readout.b_r", self.readout.b_r.len(), config.horizons));
        }
        for b in self.blocks() {
            if b.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { block: b.name });
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = Vec::new();
        fn mat(name: String, m: &Mat64) -> Block<'_> {
            Block {
                name,
                shape: vec![m.rows(), m.cols()],
                values: m.as_slice(),
            }
        }
        fn vec(name: String, v: &Vec64) -> Block<'_> {
            Block {
                name,
                shape: vec![v.len()],
                values: v,
            }
        }
        for (l, c) in self.lstm.iter().enumerate() {
            out.push(mat(format!("lstm.{l}.w_i"), &c.w_i));
            out.push(mat(format!("lstm.{l}.w_f"), &c.w_f));
            out.push(mat(format!("lstm.{l}.w_c"), &c.w_c));
            out.push(mat(format!("lstm.{l}.w_o"), &c.w_o));
            out.push(vec(format!("lstm.{l}.b_i"), &c.b_i));
            out.push(vec(format!("lstm.{l}.b_f"), &c.b_f));
            out.push(vec(format!("lstm.{l}.b_c"), &c.b_c));
            out.push(vec(format!("lstm.{l}.b_o"), &c.b_o));
        }
        if let Some(a) = &self.attention {
            out.push(mat("attention.w_a".into(), &a.w_a));
            out.push(vec("attention.u".into(), &a.u));
        }
        out.push(mat("readout.w_r".into(), &self.readout.w_r));
        out.push(vec("readout.b_r".into(), &self.readout.b_r));
        out
    }

    /// Mutable views in the same order as [`ModelParams::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (l, c) in self.lstm.iter_mut().enumerate() {
            out.push((format!("lstm.{l}.w_i"), c.w_i.as_mut_slice()));
            out.push((format!("lstm.{l}.w_f"), c.w_f.as_mut_slice()));
            out.push((format!("lstm.{l}.w_c"), c.w_c.as_mut_slice()));
            out.push((format!("lstm.{l}.w_o"), c.w_o.as_mut_slice()));
            out.push((format!("lstm.{l}.b_i"), &mut c.b_i));
            out.push((format!("lstm.{l}.b_f"), &mut c.b_f));
            out.push((format!("lstm.{l}.b_c"), &mut c.b_c));
            out.push((format!("lstm.{l}.b_o"), &mut c.b_o));
        }
        if let Some(a) = &mut self.attention {
            out.push(("attention.w_a".into(), a.w_a.as_mut_slice()));
            out.push(("attention.u".into(), &mut a.u));
        }
        out.push(("readout.w_r".into(), self.readout.w_r.as_mut_slice()));
        out.push(("readout.b_r".into(), &mut self.readout.b_r));
        out
    }

    pub fn num_values(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.values.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::shape("set_flat", self.num_values(), flat.len()));
        }
        let mut offset = 0;
        for (_, values) in self.blocks_mut() {
            values.copy_from_slice(&flat[offset..offset + values.len()]);
            offset += values.len();
        }
        Ok(())
    }

    /// `self += scale * other`, block by block.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src = other.to_flat();
        let mut offset = 0;
        for (_, values) in self.blocks_mut() {
            for (v, s) in values.iter_mut().zip(&src[offset..]) {
                *v += scale * s;
            }
            offset += values.len();
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, values) in self.blocks_mut() {
            values.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.values.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub paper_id: String,
    pub horizon_cumulative: Vec<f64>,
    /// Attention weights per observed year; empty for `LtCcp`.
    pub alphas: Vec<f64>,
}

/// Network-side view of raw window counts.
pub fn transform_inputs(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    raw.iter()
        .map(|v| v.iter().map(|&c| c.ln_1p()).collect())
        .collect()
}

/// Gate activations of one cell step, kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct StepCache {
    /// `[hᵗ⁻¹; xᵗ]`
    pub z: Vec<f64>,
    pub gi: Vec<f64>,
    pub gf: Vec<f64>,
    pub gc: Vec<f64>,
    pub go: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

fn affine(w: &Mat64, b: &[f64], z: &[f64]) -> Vec<f64> {
    let mut out = w.mul_vec(z);
    out.iter_mut().zip(b).for_each(|(o, b)| *o += b);
    out
}

pub(crate) fn cell_step_traced(p: &LstmCellParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
    let mut z = Vec::with_capacity(h_prev.len() + x.len());
    z.extend_from_slice(h_prev);
    z.extend_from_slice(x);
    let gi: Vec<f64> = affine(&p.w_i, &p.b_i, &z).into_iter().map(sigmoid_scalar).collect();
    let gf: Vec<f64> = affine(&p.w_f, &p.b_f, &z).into_iter().map(sigmoid_scalar).collect();
    let gc: Vec<f64> = affine(&p.w_c, &p.b_c, &z).into_iter().map(f64::tanh).collect();
    let go: Vec<f64> = affine(&p.w_o, &p.b_o, &z).into_iter().map(sigmoid_scalar).collect();
    let c: Vec<f64> = (0..gi.len())
        .map(|k| gf[k] * c_prev[k] + gi[k] * gc[k])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = go.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    StepCache {
        z,
        gi,
        gf,
        gc,
        go,
        c_prev: c_prev.to_vec(),
        tanh_c,
        h,
        c,
    }
}

pub fn lstm_cell_step(p: &LstmCellParams, x: &[f64], prev: &LstmState) -> Result<LstmState> {
    let hidden = p.hidden();
    if x.len() != p.input_dim() {
        return Err(Error::shape("lstm_cell_step input", x.len(), p.input_dim()));
    }
    if prev.h.len() != hidden || prev.c.len() != hidden {
        return Err(Error::shape(
            "lstm_cell_step state",
            format!("h {} / c {}", prev.h.len(), prev.c.len()),
            hidden,
        ));
    }
    p.check(hidden, p.input_dim())?;
    let step = cell_step_traced(p, x, &prev.h, &prev.c);
    Ok(LstmState {
        h: step.h.into(),
        c: step.c.into(),
    })
}

/// Per-layer, per-step caches of a stacked LSTM run from zero state.
pub(crate) fn lstm_forward_traced(params: &[LstmCellParams], inputs: &[Vec<f64>]) -> Vec<Vec<StepCache>> {
    let mut layers: Vec<Vec<StepCache>> = Vec::with_capacity(params.len());
    for (l, p) in params.iter().enumerate() {
        let hidden = p.hidden();
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        let mut steps = Vec::with_capacity(inputs.len());
        for t in 0..inputs.len() {
            let x: &[f64] = if l == 0 { &inputs[t] } else { &layers[l - 1][t].h };
            let step = cell_step_traced(p, x, &h, &c);
            h.clone_from(&step.h);
            c.clone_from(&step.c);
            steps.push(step);
        }
        layers.push(steps);
    }
    layers
}

fn check_stack(params: &[LstmCellParams], input_dim: usize) -> Result<()> {
    let mut expect = input_dim;
    for (l, p) in params.iter().enumerate() {
        if p.input_dim() != expect {
            return Err(Error::shape(
                "lstm_forward layer input",
                format!("layer {l} takes {}", p.input_dim()),
                expect,
            ));
        }
        p.check(p.hidden(), p.input_dim())?;
        expect = p.hidden();
    }
    Ok(())
}

/// Runs the stack from zero state; returns the top layer's state at each step.
pub fn lstm_forward(params: &[LstmCellParams], inputs: &[Vec64]) -> Result<Vec<LstmState>> {
    if params.is_empty() || inputs.is_empty() {
        return Err(Error::InvalidArgument(
            "lstm_forward needs at least one layer and one step".into(),
        ));
    }
    let k = inputs[0].len();
    if let Some(bad) = inputs.iter().find(|x| x.len() != k) {
        return Err(Error::shape("lstm_forward inputs", bad.len(), k));
    }
    check_stack(params, k)?;
    let raw: Vec<Vec<f64>> = inputs.iter().map(|x| x.to_vec()).collect();
    let layers = lstm_forward_traced(params, &raw);
    Ok(layers
        .last()
        .expect("nonempty stack")
        .iter()
        .map(|s| LstmState {
            h: s.h.clone().into(),
            c: s.c.clone().into(),
        })
        .collect())
}

/// Scores `uᵀ tanh(W_a zᵗ)` with their tanh activations.
pub(crate) fn attention_traced(p: &AttentionParams, zs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let acts: Vec<Vec<f64>> = zs
        .iter()
        .map(|z| p.w_a.mul_vec(z).into_iter().map(f64::tanh).collect())
        .collect();
    let scores = acts.iter().map(|a| dot(&p.u, a)).collect();
    (acts, scores)
}

/// Attention weights over timesteps; `hs` entries may be empty (inputs only).
pub fn attention_scores(p: &AttentionParams, xs: &[Vec64], hs: &[Vec64]) -> Result<Vec64> {
    if xs.len() != hs.len() {
        return Err(Error::shape("attention_scores steps", xs.len(), hs.len()));
    }
    if p.u.len() != p.w_a.rows() {
        return Err(Error::shape("attention.u", p.u.len(), p.w_a.rows()));
    }
    let zs: Vec<Vec<f64>> = xs
        .iter()
        .zip(hs)
        .map(|(x, h)| {
            let mut z = x.to_vec();
            z.extend_from_slice(h);
            z
        })
        .collect();
    if let Some(z) = zs.iter().find(|z| z.len() != p.w_a.cols()) {
        return Err(Error::shape("attention_scores input", z.len(), &p.w_a));
    }
    let (_, scores) = attention_traced(p, &zs);
    softmax(&scores)
}

/// Attention-weighted average `Σ αᵗ vᵗ`.
pub fn attention_pool(alphas: &[f64], targets: &[Vec64]) -> Result<Vec64> {
    if alphas.len() != targets.len() || alphas.is_empty() {
        return Err(Error::shape("attention_pool", alphas.len(), targets.len()));
    }
    let total: f64 = alphas.iter().sum();
    if (total - 1.0).abs() > 1e-6 || alphas.iter().any(|&a| a < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "attention weights must be a distribution (sum {total})"
        )));
    }
    let dim = targets[0].len();
    if let Some(bad) = targets.iter().find(|t| t.len() != dim) {
        return Err(Error::shape("attention_pool targets", bad.len(), dim));
    }
    Ok(pool_unchecked(alphas, targets.iter().map(|t| &t[..])).into())
}

pub(crate) fn pool_unchecked<'a>(alphas: &[f64], targets: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for (a, t) in alphas.iter().zip(targets) {
        if out.is_empty() {
            out = vec![0.0; t.len()];
        }
        out.iter_mut().zip(t).for_each(|(o, v)| *o += a * v);
    }
    out
}

pub(crate) fn readout_raw(p: &ReadoutParams, pooled: &[f64]) -> Vec<f64> {
    affine(&p.w_r, &p.b_r, pooled)
}

pub(crate) fn accumulate_increments(raw: &[f64], last_observed: f64) -> Vec<f64> {
    let mut level = last_observed;
    raw.iter()
        .map(|&r| {
            level += softplus_scalar(r);
            level
        })
        .collect()
}

/// Monotone cumulative predictions `last + Σ_{i≤j} softplus(raw_i)`.
pub fn readout(p: &ReadoutParams, pooled: &[f64], last_observed: f64) -> Result<Vec<f64>> {
    if pooled.len() != p.w_r.cols() {
        return Err(Error::shape("readout", &p.w_r, format!("pooled length {}", pooled.len())));
    }
    if p.b_r.len() != p.w_r.rows() {
        return Err(Error::shape("readout bias", p.b_r.len(), p.w_r.rows()));
    }
    Ok(accumulate_increments(&readout_raw(p, pooled), last_observed))
}

#[derive(Clone, Debug)]
pub(crate) struct AttentionCache {
    /// Vectors the scores were computed from.
    pub zs: Vec<Vec<f64>>,
    pub acts: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Clone, Debug)]
pub(crate) struct ForwardTrace {
    /// Transformed inputs `xᵗ`.
    pub xs: Vec<Vec<f64>>,
    pub layers: Vec<Vec<StepCache>>,
    pub attention: Option<AttentionCache>,
    pub pooled: Vec<f64>,
    pub raw: Vec<f64>,
    pub output: Vec<f64>,
}

fn check_example(config: &ModelConfig, example: &FeatureSequence) -> Result<()> {
    if example.inputs.len() != config.t_obs {
        return Err(Error::shape("example steps", example.inputs.len(), config.t_obs));
    }
    if let Some(bad) = example.inputs.iter().find(|v| v.len() != config.input_dim) {
        return Err(Error::shape("example window", bad.len(), config.input_dim));
    }
    Ok(())
}

pub(crate) fn forward_traced(
    config: &ModelConfig,
    params: &ModelParams,
    example: &FeatureSequence,
) -> Result<ForwardTrace> {
    check_example(config, example)?;
    let xs = transform_inputs(&example.inputs);
    let attn = || {
        params.attention.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("variant {} requires attention parameters", config.variant))
        })
    };

    let (lstm_inputs, pre_attention) = match config.variant {
        Variant::AttBLt => {
            let p = attn()?;
            let (acts, scores) = attention_traced(p, &xs);
            let alphas = softmax(&scores)?.into_inner();
            let t_obs = xs.len() as f64;
            let reweighted = xs
                .iter()
                .zip(&alphas)
                .map(|(x, &a)| x.iter().map(|v| t_obs * a * v).collect())
                .collect();
            let cache = AttentionCache {
                zs: xs.clone(),
                acts,
                alphas,
            };
            (reweighted, Some(cache))
        }
        _ => (xs.clone(), None),
    };

    let layers = lstm_forward_traced(&params.lstm, &lstm_inputs);
    let top = layers.last().expect("at least one layer");

    let (pooled, attention) = match config.variant {
        Variant::LtCcp => (top[top.len() - 1].h.clone(), None),
        Variant::AttBLt => (top[top.len() - 1].h.clone(), pre_attention),
        Variant::AttALt => {
            let p = attn()?;
            let zs: Vec<Vec<f64>> = xs
                .iter()
                .zip(top)
                .map(|(x, s)| {
                    let mut z = x.clone();
                    z.extend_from_slice(&s.h);
                    z
                })
                .collect();
            let (acts, scores) = attention_traced(p, &zs);
            let alphas = softmax(&scores)?.into_inner();
            let pooled = match config.pool {
                PoolMode::Joint => pool_unchecked(&alphas, zs.iter().map(|z| &z[..])),
                PoolMode::Inputs => pool_unchecked(&alphas, xs.iter().map(|x| &x[..])),
            };
            (pooled, Some(AttentionCache { zs, acts, alphas }))
        }
    };

    let raw = readout_raw(&params.readout, &pooled);
    let output = accumulate_increments(&raw, example.last_observed as f64);
    Ok(ForwardTrace {
        xs,
        layers,
        attention,
        pooled,
        raw,
        output,
    })
}

/// Predicts cumulative citation counts for each horizon.
pub fn forward(config: &ModelConfig, params: &ModelParams, example: &FeatureSequence) -> Result<Prediction> {
    params.check(config)?;
    let trace = forward_traced(config, params, example)?;
    Ok(Prediction {
        paper_id: example.paper_id.clone(),
        horizon_cumulative: trace.output,
        alphas: trace.attention.map(|a| a.alphas).unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_cell(rng: &mut Rng, hidden: usize, input: usize) -> LstmCellParams {
        let mut p = LstmCellParams::zeros(hidden, input);
        for m in [&mut p.w_i, &mut p.w_f, &mut p.w_c, &mut p.w_o] {
            *m = init_uniform(rng, hidden, hidden + input, 0.7).unwrap();
        }
        for b in [&mut p.b_i, &mut p.b_f, &mut p.b_c, &mut p.b_o] {
            *b = init_uniform(rng, 1, hidden, 0.7).unwrap().as_slice().into();
        }
        p
    }

    #[test]
    fn zero_cell_zero_state() {
        let p = LstmCellParams::zeros(3, 2);
        let s = lstm_cell_step(&p, &[4.0, -1.0], &LstmState::zeros(3)).unwrap();
        assert!(s.h.iter().chain(s.c.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_cell_halves_memory() {
        let p = LstmCellParams::zeros(1, 1);
        let prev = LstmState {
            h: vec![0.0].into(),
            c: vec![2.0].into(),
        };
        let s = lstm_cell_step(&p, &[0.3], &prev).unwrap();
        assert_eq!(s.c[0], 1.0);
        assert_abs_diff_eq!(s.h[0], 0.5 * 1f64.tanh(), epsilon = 1e-15);
    }

    #[test]
    fn saturated_gates_keep_memory() {
        let mut rng = Rng::new(3);
        let mut p = random_cell(&mut rng, 4, 2);
        p.w_i = Mat64::zeros(4, 6);
        p.w_f = Mat64::zeros(4, 6);
        p.b_f = Vec64::filled(4, 30.0);
        p.b_i = Vec64::filled(4, -30.0);
        let prev = LstmState {
            h: vec![0.1, -0.2, 0.3, 0.0].into(),
            c: vec![1.5, -2.0, 0.25, 3.0].into(),
        };
        let s = lstm_cell_step(&p, &[0.5, -0.5], &prev).unwrap();
        for (a, b) in s.c.iter().zip(prev.c.iter()) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn cell_shape_mismatch() {
        let p = LstmCellParams::zeros(3, 2);
        assert!(lstm_cell_step(&p, &[1.0], &LstmState::zeros(3)).is_err());
        assert!(lstm_cell_step(&p, &[1.0, 2.0], &LstmState::zeros(2)).is_err());
    }

    #[test]
    fn single_step_forward_equals_cell() {
        let mut rng = Rng::new(11);
        let p = random_cell(&mut rng, 3, 2);
        let x: Vec64 = vec![0.4, -1.2].into();
        let states = lstm_forward(std::slice::from_ref(&p), &[x.clone()]).unwrap();
        let direct = lstm_cell_step(&p, &x, &LstmState::zeros(3)).unwrap();
        assert_eq!(states, vec![direct]);
    }

    #[test]
    fn zero_stack_gives_zero_hidden() {
        let stack = vec![LstmCellParams::zeros(4, 3), LstmCellParams::zeros(4, 4)];
        let xs: Vec<Vec64> = (0..5).map(|i| Vec64::filled(3, i as f64)).collect();
        for s in lstm_forward(&stack, &xs).unwrap() {
            assert!(s.h.iter().all(|&v| v == 0.0));
        }
        let bad = vec![LstmCellParams::zeros(4, 3), LstmCellParams::zeros(4, 3)];
        assert!(lstm_forward(&bad, &xs).is_err());
    }

    #[test]
    fn attention_uniform_cases() {
        let mut rng = Rng::new(5);
        let p = AttentionParams {
            w_a: init_uniform(&mut rng, 4, 3, 1.0).unwrap(),
            u: Vec64::zeros(4),
        };
        let xs: Vec<Vec64> = (0..3).map(|i| Vec64::filled(2, i as f64)).collect();
        let hs: Vec<Vec64> = (0..3).map(|_| Vec64::filled(1, 0.5)).collect();
        let a = attention_scores(&p, &xs, &hs).unwrap();
        a.iter().for_each(|&v| assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15));

        let p = AttentionParams {
            w_a: init_uniform(&mut rng, 4, 2, 1.0).unwrap(),
            u: init_uniform(&mut rng, 1, 4, 1.0).unwrap().as_slice().into(),
        };
        let same: Vec<Vec64> = (0..4).map(|_| vec![0.3, -0.9].into()).collect();
        let empty = vec![Vec64::default(); 4];
        let a = attention_scores(&p, &same, &empty).unwrap();
        a.iter().for_each(|&v| assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15));
        assert!(attention_scores(&p, &same, &empty[..3]).is_err());
    }

    #[test]
    fn pool_cases() {
        let targets: Vec<Vec64> = vec![vec![1.0].into(), vec![2.0].into(), vec![10.0].into()];
        assert_eq!(attention_pool(&[0.0, 0.0, 1.0], &targets).unwrap()[0], 10.0);
        assert_abs_diff_eq!(
            attention_pool(&[0.2, 0.3, 0.5], &targets).unwrap()[0],
            5.8,
            epsilon = 1e-12
        );
        let v: Vec64 = vec![1.5, -2.0].into();
        let neg: Vec64 = v.iter().map(|x| -x).collect::<Vec<_>>().into();
        let o = attention_pool(&[0.5, 0.5], &[v, neg]).unwrap();
        assert!(o.iter().all(|&x| x == 0.0));
        assert!(attention_pool(&[0.5, 0.6, 0.0], &targets).is_err());
        assert!(attention_pool(&[1.0], &targets).is_err());
    }

    #[test]
    fn readout_cases() {
        let p = ReadoutParams {
            w_r: Mat64::zeros(2, 3),
            b_r: Vec64::zeros(2),
        };
        let out = readout(&p, &[1.0, 2.0, 3.0], 10.0).unwrap();
        assert_abs_diff_eq!(out[0], 10.0 + 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 10.0 + 2.0 * 2f64.ln(), epsilon = 1e-12);

        let p = ReadoutParams {
            w_r: Mat64::zeros(3, 1),
            b_r: Vec64::filled(3, -50.0),
        };
        for v in readout(&p, &[7.0], 4.0).unwrap() {
            assert_abs_diff_eq!(v, 4.0, epsilon = 1e-20);
        }
        assert!(readout(&p, &[1.0, 2.0], 0.0).is_err());
    }

    fn example(config: &ModelConfig, rng: &mut Rng) -> FeatureSequence {
        FeatureSequence {
            paper_id: "e".into(),
            inputs: (0..config.t_obs)
                .map(|_| (0..config.input_dim).map(|_| rng.below(30) as f64).collect())
                .collect(),
            targets: vec![0; config.horizons],
            last_observed: 17,
        }
    }

    #[test]
    fn zero_model_lt_ccp() {
        let config = ModelConfig {
            variant: Variant::LtCcp,
            ..Default::default()
        };
        let params = ModelParams::zeros(&config);
        let ex = example(&config, &mut Rng::new(1));
        let pred = forward(&config, &params, &ex).unwrap();
        assert!(pred.alphas.is_empty());
        for (j, v) in pred.horizon_cumulative.iter().enumerate() {
            assert_abs_diff_eq!(*v, 17.0 + (j + 1) as f64 * 2f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn single_step_attention_after() {
        let config = ModelConfig {
            variant: Variant::AttALt,
            t_obs: 1,
            ..Default::default()
        };
        let mut rng = Rng::new(2);
        let params = ModelParams::init(&config, &mut rng).unwrap();
        let ex = example(&config, &mut rng);
        let trace = forward_traced(&config, &params, &ex).unwrap();
        assert_eq!(trace.attention.as_ref().unwrap().alphas, vec![1.0]);
        let mut joint = trace.xs[0].clone();
        joint.extend_from_slice(&trace.layers[1][0].h);
        assert_eq!(trace.pooled, joint);
    }

    #[test]
    fn variant_param_mismatch() {
        let att = ModelConfig::default();
        let plain = ModelConfig {
            variant: Variant::LtCcp,
            ..Default::default()
        };
        let ex = example(&att, &mut Rng::new(0));
        assert!(forward(&att, &ModelParams::zeros(&plain), &ex).is_err());
        let mut with_att = ModelParams::zeros(&att);
        with_att.readout = ModelParams::zeros(&plain).readout;
        assert!(forward(&plain, &with_att, &ex).is_err());
    }

    #[test]
    fn init_sets_forget_bias() {
        let config = ModelConfig::default();
        let p = ModelParams::init(&config, &mut Rng::new(4)).unwrap();
        assert!(p.lstm.iter().all(|c| c.b_f.iter().all(|&b| b == FORGET_BIAS_INIT)));
        assert!(p.lstm[0].w_i.as_slice().iter().all(|v| v.abs() <= INIT_SCALE));
        p.check(&config).unwrap();
        let q = ModelParams::init(&config, &mut Rng::new(4)).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn flat_round_trip() {
        let config = ModelConfig::default();
        let p = ModelParams::init(&config, &mut Rng::new(8)).unwrap();
        let mut q = ModelParams::zeros(&config);
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.blocks().len(), 2 * 8 + 2 + 2);
    }

    #[test]
    fn alpha_ranking_survives_positive_scaling() {
        let mut rng = Rng::new(21);
        let mut p = AttentionParams {
            w_a: init_uniform(&mut rng, 5, 3, 1.0).unwrap(),
            u: init_uniform(&mut rng, 1, 5, 1.0).unwrap().as_slice().into(),
        };
        let xs: Vec<Vec64> = (0..6)
            .map(|_| init_uniform(&mut rng, 1, 3, 2.0).unwrap().as_slice().into())
            .collect();
        let hs = vec![Vec64::default(); 6];
        let rank = |a: &Vec64| {
            let mut idx: Vec<usize> = (0..a.len()).collect();
            idx.sort_by(|&i, &j| a[i].partial_cmp(&a[j]).unwrap());
            idx
        };
        let base = attention_scores(&p, &xs, &hs).unwrap();
        p.u.iter_mut().for_each(|v| *v *= 3.7);
        let scaled = attention_scores(&p, &xs, &hs).unwrap();
        assert_ne!(base, scaled);
        assert_eq!(rank(&base), rank(&scaled));
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("gru".parse::<Variant>().is_err());
    }
}
