//! Shared test support: a deliberately naive re-derivation of the model
//! equations and random fixture generators.
#![allow(dead_code)]

use citecast::corpus::FeatureSequence;
use citecast::network::{ModelConfig, ModelParams, PoolMode, Variant};
use citecast::numkit::{Mat64, Rng};

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        (1.0 + x.exp()).ln()
    }
}

/// `b + W v`, element by element.
pub fn affine(w: &Mat64, b: Option<&[f64]>, v: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| {
            let mut acc = b.map_or(0.0, |b| b[r]);
            for (k, vk) in v.iter().enumerate() {
                acc += w.get(r, k) * vk;
            }
            acc
        })
        .collect()
}

pub struct NaiveCell<'a> {
    pub w: [&'a Mat64; 4],
    pub b: [&'a [f64]; 4],
}

/// One step with z = [h_prev; x]: input, forget, candidate and output
/// activations, then c' = f∗c + i∗c̃ and h' = o∗tanh(c').
pub fn naive_cell(cell: &NaiveCell, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut z = h.to_vec();
    z.extend_from_slice(x);
    let gi: Vec<f64> = affine(cell.w[0], Some(cell.b[0]), &z).into_iter().map(sig).collect();
    let gf: Vec<f64> = affine(cell.w[1], Some(cell.b[1]), &z).into_iter().map(sig).collect();
    let gc: Vec<f64> = affine(cell.w[2], Some(cell.b[2]), &z).into_iter().map(f64::tanh).collect();
    let go: Vec<f64> = affine(cell.w[3], Some(cell.b[3]), &z).into_iter().map(sig).collect();
    let c_new: Vec<f64> = (0..h.len()).map(|k| gf[k] * c[k] + gi[k] * gc[k]).collect();
    let h_new: Vec<f64> = (0..h.len()).map(|k| go[k] * c_new[k].tanh()).collect();
    (h_new, c_new)
}

pub fn cell_of(p: &citecast::network::LstmCellParams) -> NaiveCell<'_> {
    NaiveCell {
        w: [&p.w_i, &p.w_f, &p.w_c, &p.w_o],
        b: [&p.b_i, &p.b_f, &p.b_c, &p.b_o],
    }
}

/// Top-layer hidden states of the stack from zero state.
pub fn naive_stack(params: &ModelParams, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut seq = xs.to_vec();
    for layer in &params.lstm {
        let n = layer.w_i.rows();
        let (mut h, mut c) = (vec![0.0; n], vec![0.0; n]);
        let cell = cell_of(layer);
        let mut out = Vec::new();
        for x in &seq {
            let (h2, c2) = naive_cell(&cell, x, &h, &c);
            h = h2;
            c = c2;
            out.push(h.clone());
        }
        seq = out;
    }
    seq
}

/// score_t = u · tanh(W_a z_t), normalised with a plain softmax.
pub fn naive_alphas(w_a: &Mat64, u: &[f64], zs: &[Vec<f64>]) -> Vec<f64> {
    let scores: Vec<f64> = zs
        .iter()
        .map(|z| {
            affine(w_a, None, z)
                .into_iter()
                .zip(u)
                .map(|(a, u)| a.tanh() * u)
                .sum()
        })
        .collect();
    let e: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

pub fn naive_pool(alphas: &[f64], vs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; vs[0].len()];
    for (a, v) in alphas.iter().zip(vs) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += a * x;
        }
    }
    out
}

/// Full prediction of every variant, from the raw example.
pub fn naive_forward(config: &ModelConfig, params: &ModelParams, ex: &FeatureSequence) -> Vec<f64> {
    let xs: Vec<Vec<f64>> = ex
        .inputs
        .iter()
        .map(|v| v.iter().map(|c| (1.0 + c).ln()).collect())
        .collect();
    let pooled = match config.variant {
        Variant::LtCcp => naive_stack(params, &xs).pop().unwrap(),
        Variant::AttBLt => {
            let a = params.attention.as_ref().unwrap();
            let alphas = naive_alphas(&a.w_a, &a.u, &xs);
            let t = xs.len() as f64;
            let scaled: Vec<Vec<f64>> = xs
                .iter()
                .zip(&alphas)
                .map(|(x, al)| x.iter().map(|v| t * al * v).collect())
                .collect();
            naive_stack(params, &scaled).pop().unwrap()
        }
        Variant::AttALt => {
            let a = params.attention.as_ref().unwrap();
            let hs = naive_stack(params, &xs);
            let zs: Vec<Vec<f64>> = xs
                .iter()
                .zip(&hs)
                .map(|(x, h)| x.iter().chain(h).copied().collect())
                .collect();
            let alphas = naive_alphas(&a.w_a, &a.u, &zs);
            match config.pool {
                PoolMode::Joint => naive_pool(&alphas, &zs),
                PoolMode::Inputs => naive_pool(&alphas, &xs),
            }
        }
    };
    let raw = affine(&params.readout.w_r, Some(&params.readout.b_r), &pooled);
    let mut level = ex.last_observed as f64;
    raw.into_iter()
        .map(|r| {
            level += softplus(r);
            level
        })
        .collect()
}

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Mat64 {
    let data = (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect();
    Mat64::from_vec(rows, cols, data).unwrap()
}

/// Parameters with every value uniform in ±scale.
pub fn random_params(config: &ModelConfig, rng: &mut Rng, scale: f64) -> ModelParams {
    let mut p = ModelParams::zeros(config);
    for (_, vals) in p.blocks_mut() {
        vals.iter_mut().for_each(|v| *v = rng.uniform(-scale, scale));
    }
    p
}

pub fn random_example(config: &ModelConfig, rng: &mut Rng, max_yearly: usize) -> FeatureSequence {
    let inputs = (0..config.t_obs)
        .map(|_| (0..config.input_dim).map(|_| rng.below(max_yearly + 1) as f64).collect())
        .collect();
    let last = rng.below(500) as u64;
    let mut level = last;
    let targets = (0..config.horizons)
        .map(|_| {
            level += rng.below(40) as u64;
            level
        })
        .collect();
    FeatureSequence {
        paper_id: format!("r{}", rng.below(1_000_000)),
        inputs,
        targets,
        last_observed: last,
    }
}

/// Cycles through variants and pool modes with small random shapes.
pub fn random_config(rng: &mut Rng, i: usize) -> ModelConfig {
    ModelConfig {
        variant: Variant::ALL[i % 3],
        pool: if (i / 3) % 2 == 0 { PoolMode::Joint } else { PoolMode::Inputs },
        layers: 1 + rng.below(3),
        hidden: 1 + rng.below(6),
        attn: 1 + rng.below(5),
        input_dim: 1 + rng.below(10),
        t_obs: 1 + rng.below(6),
        horizons: 1 + rng.below(5),
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
