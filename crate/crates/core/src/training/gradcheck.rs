//! Central finite differences as an independent check on [`super::backward`].

use serde::Serialize;

use crate::corpus::{make_examples, CitationSeries, FeatureSequence};
use crate::error::{Error, Result};
use crate::network::{forward_traced, ModelConfig, ModelParams};
use crate::numkit::Rng;

use super::{loss_from_residuals, residuals};

/// Per-coordinate step is `DEFAULT_REL_STEP * max(1, |θ|)`.
pub const DEFAULT_REL_STEP: f64 = 1e-5;
/// Largest acceptable relative discrepancy between the two gradients.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Coordinates where both gradients fall below this are not compared.
pub const NEGLIGIBLE_GRADIENT: f64 = 1e-10;

/// `(f(x + δ eᵢ) − f(x − δ eᵢ)) / 2δ` for every coordinate.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], rel_step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let step = rel_step * x[i].abs().max(1.0);
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn loss_at(config: &ModelConfig, params: &ModelParams, example: &FeatureSequence) -> Result<f64> {
    let trace = forward_traced(config, params, example)?;
    let res = residuals(&trace.raw, example.last_observed, &example.targets)?;
    Ok(loss_from_residuals(&res, &example.targets))
}

pub fn finite_diff_grad(
    config: &ModelConfig,
    params: &ModelParams,
    example: &FeatureSequence,
    rel_step: f64,
) -> Result<ModelParams> {
    params.check(config)?;
    // surface shape errors before the probe loop swallows them
    loss_at(config, params, example)?;
    let mut scratch = params.clone();
    let flat = params.to_flat();
    let numeric = central_difference(
        |theta| {
            scratch.set_flat(theta).expect("same layout");
            loss_at(config, &scratch, example).unwrap_or(f64::NAN)
        },
        &flat,
        rel_step,
    );
    let mut grad = ModelParams::zeros(config);
    grad.set_flat(&numeric)?;
    Ok(grad)
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockDiscrepancy {
    pub name: String,
    /// Over coordinates above [`NEGLIGIBLE_GRADIENT`].
    pub max_rel: f64,
    pub compared: usize,
    /// Over coordinates the finite difference can resolve.
    pub max_rel_resolved: f64,
    pub resolved: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel: f64,
    pub worst_block: String,
    pub worst_index: usize,
    pub max_rel_resolved: f64,
    pub worst_resolved_block: String,
    /// Smallest gradient magnitude the finite difference resolves to the
    /// tolerance; see [`resolution_threshold`].
    pub resolution: f64,
    pub blocks: Vec<BlockDiscrepancy>,
}

impl GradCheckReport {
    /// Literal criterion: every coordinate above [`NEGLIGIBLE_GRADIENT`].
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel <= tolerance
    }

    /// Criterion restricted to coordinates above the f64 resolution.
    pub fn passed_resolved(&self, tolerance: f64) -> bool {
        self.max_rel_resolved <= tolerance
    }

    /// Folds several reports into one that keeps the worst block per name.
    pub fn merge(reports: &[GradCheckReport]) -> Option<GradCheckReport> {
        let mut iter = reports.iter();
        let mut acc = iter.next()?.clone();
        for r in iter {
            for (a, b) in acc.blocks.iter_mut().zip(&r.blocks) {
                a.max_rel = a.max_rel.max(b.max_rel);
                a.compared += b.compared;
                a.max_rel_resolved = a.max_rel_resolved.max(b.max_rel_resolved);
                a.resolved += b.resolved;
            }
            if r.max_rel > acc.max_rel {
                acc.max_rel = r.max_rel;
                acc.worst_block = r.worst_block.clone();
                acc.worst_index = r.worst_index;
            }
            if r.max_rel_resolved > acc.max_rel_resolved {
                acc.max_rel_resolved = r.max_rel_resolved;
                acc.worst_resolved_block = r.worst_resolved_block.clone();
            }
            acc.resolution = acc.resolution.max(r.resolution);
        }
        Some(acc)
    }
}

pub fn relative_discrepancy(a: f64, b: f64) -> Option<f64> {
    let scale = a.abs().max(b.abs());
    if scale < NEGLIGIBLE_GRADIENT {
        None
    } else {
        Some((a - b).abs() / scale)
    }
}

/// Each loss evaluation carries roundoff near `ε·|L|`, so a central
/// difference with step `δ` has absolute noise near `ε·|L|/δ`. Coordinates
/// smaller than that noise over `tolerance` cannot be checked to `tolerance`.
pub fn resolution_threshold(loss: f64, rel_step: f64, tolerance: f64) -> f64 {
    f64::EPSILON * loss.abs().max(1.0) / rel_step / tolerance
}

pub fn compare_gradients(analytic: &ModelParams, numeric: &ModelParams, resolution: f64) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel: 0.0,
        worst_block: String::new(),
        worst_index: 0,
        max_rel_resolved: 0.0,
        worst_resolved_block: String::new(),
        resolution,
        blocks: Vec::new(),
    };
    for (a, n) in analytic.blocks().iter().zip(numeric.blocks()) {
        let mut block = BlockDiscrepancy {
            name: a.name.clone(),
            max_rel: 0.0,
            compared: 0,
            max_rel_resolved: 0.0,
            resolved: 0,
        };
        for (i, (&x, &y)) in a.values.iter().zip(n.values).enumerate() {
            // a NaN on either side is a failure, never a skip
            let rel = if x.is_finite() && y.is_finite() {
                match relative_discrepancy(x, y) {
                    Some(r) => r,
                    None => continue,
                }
            } else {
                f64::INFINITY
            };
            block.compared += 1;
            block.max_rel = block.max_rel.max(rel);
            if rel > report.max_rel || report.worst_block.is_empty() {
                report.max_rel = report.max_rel.max(rel);
                report.worst_block = a.name.clone();
                report.worst_index = i;
            }
            if !(x.abs().max(y.abs()) >= resolution) && rel.is_finite() {
                continue;
            }
            block.resolved += 1;
            block.max_rel_resolved = block.max_rel_resolved.max(rel);
            if rel > report.max_rel_resolved || report.worst_resolved_block.is_empty() {
                report.max_rel_resolved = report.max_rel_resolved.max(rel);
                report.worst_resolved_block = a.name.clone();
            }
        }
        report.blocks.push(block);
    }
    report
}

/// Analytic gradient vs central differences for one example.
pub fn gradient_check(
    config: &ModelConfig,
    params: &ModelParams,
    example: &FeatureSequence,
    rel_step: f64,
) -> Result<GradCheckReport> {
    let (loss, analytic) = super::backward(config, params, example)?;
    let numeric = finite_diff_grad(config, params, example, rel_step)?;
    let resolution = resolution_threshold(loss, rel_step, GRADCHECK_TOLERANCE);
    Ok(compare_gradients(&analytic, &numeric, resolution))
}

/// A check case: parameters from the model's own initialisation and an
/// example cut from a random citation history (up to 24 new citations a
/// year).
pub fn random_case(config: &ModelConfig, rng: &mut Rng) -> Result<(ModelParams, FeatureSequence)> {
    let params = ModelParams::init(config, rng)?;
    let mut total = 0;
    let cumulative = (0..config.t_obs + config.horizons)
        .map(|_| {
            total += rng.below(25) as u64;
            total
        })
        .collect();
    let series = CitationSeries {
        paper_id: "check".into(),
        pub_year: 0,
        cumulative,
    };
    let example = make_examples(&[series], config.t_obs, config.horizons, config.input_dim)?
        .examples
        .pop()
        .ok_or_else(|| Error::InvalidArgument("series too short for the config".into()))?;
    Ok((params, example))
}

/// Checks many random cases; `corrupt` may tamper with each analytic
/// gradient before comparison.
pub fn gradient_check_draws(
    config: &ModelConfig,
    rng: &mut Rng,
    draws: usize,
    rel_step: f64,
    mut corrupt: impl FnMut(&mut ModelParams),
) -> Result<Vec<GradCheckReport>> {
    (0..draws)
        .map(|_| {
            let (params, example) = random_case(config, rng)?;
            let (loss, mut analytic) = super::backward(config, &params, &example)?;
            corrupt(&mut analytic);
            let numeric = finite_diff_grad(config, &params, &example, rel_step)?;
            let resolution = resolution_threshold(loss, rel_step, GRADCHECK_TOLERANCE);
            Ok(compare_gradients(&analytic, &numeric, resolution))
        })
        .collect()
}
