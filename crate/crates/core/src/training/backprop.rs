//! Reverse-mode differentiation of the forward pass through the readout,
//! the attention softmax, and the unrolled LSTM stack.

use crate::corpus::FeatureSequence;
use crate::error::{Error, Result};
use crate::network::{
    forward_traced, AttentionCache, AttentionParams, LstmCellParams, ModelConfig, ModelParams,
    PoolMode, StepCache, Variant,
};
use crate::numkit::{dot, sigmoid_scalar};

use super::{loss_from_residuals, residuals};

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// d loss / d prediction for the guarded MAPE loss given residuals
/// `pred − target`, with `sign(0) = 0`.
pub(crate) fn mape_loss_grad(res: &[f64], target: &[u64]) -> Vec<f64> {
    let h = res.len() as f64;
    res.iter()
        .zip(target)
        .map(|(&r, &t)| sign(r) / (h * (t as f64).max(1.0)))
        .collect()
}

/// Backpropagates one layer given the external gradient on each `hᵗ`;
/// returns the gradient on each step's input.
fn lstm_layer_backward(
    p: &LstmCellParams,
    steps: &[StepCache],
    dh_ext: &[Vec<f64>],
    grad: &mut LstmCellParams,
) -> Vec<Vec<f64>> {
    let hidden = p.hidden();
    let input = p.input_dim();
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dxs = vec![Vec::new(); steps.len()];
    let mut d_pre = [vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden]];

    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        for k in 0..hidden {
            let dh = dh_ext[t][k] + dh_next[k];
            let dgo = dh * s.tanh_c[k];
            let dc = dc_next[k] + dh * s.go[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            let dgf = dc * s.c_prev[k];
            let dgi = dc * s.gc[k];
            let dgc = dc * s.gi[k];
            dc_next[k] = dc * s.gf[k];
            d_pre[0][k] = dgi * s.gi[k] * (1.0 - s.gi[k]);
            d_pre[1][k] = dgf * s.gf[k] * (1.0 - s.gf[k]);
            d_pre[2][k] = dgc * (1.0 - s.gc[k] * s.gc[k]);
            d_pre[3][k] = dgo * s.go[k] * (1.0 - s.go[k]);
        }
        let mut dz = vec![0.0; hidden + input];
        let weights = [&p.w_i, &p.w_f, &p.w_c, &p.w_o];
        for (g, w) in weights.into_iter().enumerate() {
            w.add_mul_vec_t(&d_pre[g], &mut dz);
        }
        grad.w_i.add_outer(&d_pre[0], &s.z);
        grad.w_f.add_outer(&d_pre[1], &s.z);
        grad.w_c.add_outer(&d_pre[2], &s.z);
        grad.w_o.add_outer(&d_pre[3], &s.z);
        for (b, d) in [&mut grad.b_i, &mut grad.b_f, &mut grad.b_c, &mut grad.b_o]
            .into_iter()
            .zip(&d_pre)
        {
            b.iter_mut().zip(d).for_each(|(b, d)| *b += d);
        }
        dh_next.copy_from_slice(&dz[..hidden]);
        dxs[t] = dz[hidden..].to_vec();
    }
    dxs
}

/// Given `d loss / d αᵗ`, accumulates attention parameter gradients and
/// returns `d loss / d zᵗ` for each scored vector.
fn attention_backward(
    p: &AttentionParams,
    cache: &AttentionCache,
    d_alpha: &[f64],
    grad: &mut AttentionParams,
) -> Vec<Vec<f64>> {
    let mean = dot(&cache.alphas, d_alpha);
    cache
        .zs
        .iter()
        .zip(&cache.acts)
        .zip(cache.alphas.iter().zip(d_alpha))
        .map(|((z, a), (&alpha, &da))| {
            let ds = alpha * (da - mean);
            grad.u.iter_mut().zip(a).for_each(|(g, a)| *g += ds * a);
            let d_pre: Vec<f64> = p
                .u
                .iter()
                .zip(a)
                .map(|(u, a)| ds * u * (1.0 - a * a))
                .collect();
            grad.w_a.add_outer(&d_pre, z);
            let mut dz = vec![0.0; z.len()];
            p.w_a.add_mul_vec_t(&d_pre, &mut dz);
            dz
        })
        .collect()
}

fn check_finite(grad: &ModelParams) -> Result<()> {
    for b in grad.blocks() {
        if b.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { block: b.name });
        }
    }
    Ok(())
}

/// Loss and its exact gradient for one example.
pub fn backward(
    config: &ModelConfig,
    params: &ModelParams,
    example: &FeatureSequence,
) -> Result<(f64, ModelParams)> {
    params.check(config)?;
    let trace = forward_traced(config, params, example)?;
    let res = residuals(&trace.raw, example.last_observed, &example.targets)?;
    let loss = loss_from_residuals(&res, &example.targets);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            block: "loss".into(),
        });
    }
    let mut grad = ModelParams::zeros(config);
    let t_obs = config.t_obs;
    let k_in = config.input_dim;

    // readout: out_j = last + Σ_{i<=j} softplus(raw_i)
    let d_out = mape_loss_grad(&res, &example.targets);
    let mut suffix = 0.0;
    let mut d_raw = vec![0.0; d_out.len()];
    for j in (0..d_out.len()).rev() {
        suffix += d_out[j];
        d_raw[j] = suffix * sigmoid_scalar(trace.raw[j]);
    }
    grad.readout.w_r.add_outer(&d_raw, &trace.pooled);
    grad.readout.b_r.iter_mut().zip(&d_raw).for_each(|(g, d)| *g += d);
    let mut d_pooled = vec![0.0; trace.pooled.len()];
    params.readout.w_r.add_mul_vec_t(&d_raw, &mut d_pooled);

    let mut dh_top = vec![vec![0.0; config.hidden]; t_obs];
    match config.variant {
        Variant::LtCcp | Variant::AttBLt => {
            dh_top[t_obs - 1].copy_from_slice(&d_pooled);
        }
        Variant::AttALt => {
            let cache = trace.attention.as_ref().expect("attention trace");
            let p = params.attention.as_ref().expect("checked by forward");
            let pooled_from = |t: usize| -> &[f64] {
                match config.pool {
                    PoolMode::Joint => &cache.zs[t],
                    PoolMode::Inputs => &trace.xs[t],
                }
            };
            let d_alpha: Vec<f64> = (0..t_obs).map(|t| dot(&d_pooled, pooled_from(t))).collect();
            if config.pool == PoolMode::Joint {
                for t in 0..t_obs {
                    let alpha = cache.alphas[t];
                    dh_top[t]
                        .iter_mut()
                        .zip(&d_pooled[k_in..])
                        .for_each(|(g, d)| *g += alpha * d);
                }
            }
            let g_att = grad.attention.as_mut().expect("zeros has attention");
            let dz = attention_backward(p, cache, &d_alpha, g_att);
            for t in 0..t_obs {
                dh_top[t]
                    .iter_mut()
                    .zip(&dz[t][k_in..])
                    .for_each(|(g, d)| *g += d);
            }
        }
    }

    let mut dh_ext = dh_top;
    let mut d_inputs = Vec::new();
    for l in (0..config.layers).rev() {
        let dx = lstm_layer_backward(&params.lstm[l], &trace.layers[l], &dh_ext, &mut grad.lstm[l]);
        if l == 0 {
            d_inputs = dx;
        } else {
            dh_ext = dx;
        }
    }

    if config.variant == Variant::AttBLt {
        // x̃ᵗ = T αᵗ xᵗ
        let cache = trace.attention.as_ref().expect("attention trace");
        let p = params.attention.as_ref().expect("checked by forward");
        let scale = t_obs as f64;
        let d_alpha: Vec<f64> = (0..t_obs)
            .map(|t| scale * dot(&d_inputs[t], &trace.xs[t]))
            .collect();
        let g_att = grad.attention.as_mut().expect("zeros has attention");
        attention_backward(p, cache, &d_alpha, g_att);
    }

    check_finite(&grad)?;
    Ok((loss, grad))
}
