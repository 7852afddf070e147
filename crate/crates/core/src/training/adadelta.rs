use crate::error::{Error, Result};
use crate::network::{ModelConfig, ModelParams};

/// Running averages `E[g²]` and `E[Δx²]`, one slot per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState {
    pub sq_grad: ModelParams,
    pub sq_delta: ModelParams,
}

impl AdadeltaState {
    pub fn new(config: &ModelConfig) -> Self {
        AdadeltaState {
            sq_grad: ModelParams::zeros(config),
            sq_delta: ModelParams::zeros(config),
        }
    }
}

fn same_layout(a: &ModelParams, b: &ModelParams) -> bool {
    let (a, b) = (a.blocks(), b.blocks());
    a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape == y.shape)
}

/// One elementwise Adadelta step:
///
/// ```text
/// E[g²]  ← ρ E[g²] + (1 − ρ) g²
/// Δ      = −sqrt(E[Δx²] + ε) / sqrt(E[g²] + ε) · g
/// E[Δx²] ← ρ E[Δx²] + (1 − ρ) Δ²
/// θ      ← θ + Δ
/// ```
pub fn adadelta_update(
    state: &mut AdadeltaState,
    params: &mut ModelParams,
    grad: &ModelParams,
    rho: f64,
    eps: f64,
) -> Result<()> {
    if !same_layout(params, grad)
        || !same_layout(params, &state.sq_grad)
        || !same_layout(params, &state.sq_delta)
    {
        return Err(Error::shape(
            "adadelta_update",
            format!("{} params", params.num_values()),
            format!("{} gradient values", grad.num_values()),
        ));
    }
    let g_blocks = grad.blocks();
    let p_blocks = params.blocks_mut();
    let sg_blocks = state.sq_grad.blocks_mut();
    let sd_blocks = state.sq_delta.blocks_mut();
    for (((g, (_, p)), (_, sg)), (_, sd)) in g_blocks.iter().zip(p_blocks).zip(sg_blocks).zip(sd_blocks) {
        for i in 0..p.len() {
            let gi = g.values[i];
            sg[i] = rho * sg[i] + (1.0 - rho) * gi * gi;
            let delta = -((sd[i] + eps).sqrt() / (sg[i] + eps).sqrt()) * gi;
            sd[i] = rho * sd[i] + (1.0 - rho) * delta * delta;
            p[i] += delta;
        }
    }
    Ok(())
}
