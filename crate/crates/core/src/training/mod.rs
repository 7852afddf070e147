//! MAPE-loss training with backpropagation through time and Adadelta.

mod adadelta;
mod backprop;
pub mod gradcheck;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::FeatureSequence;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_predictions, EvalReport};
use crate::network::{forward, ModelConfig, ModelParams, Prediction};
use crate::numkit::{softplus_scalar, Rng};

pub use adadelta::{adadelta_update, AdadeltaState};
pub use backprop::backward;
pub use gradcheck::{finite_diff_grad, gradient_check, GradCheckReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub rho: f64,
    pub eps: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    /// Global gradient-norm ceiling.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            rho: 0.95,
            eps: 1e-6,
            seed: 0,
            early_stop_patience: 10,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidArgument(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {}", self.eps)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub seconds: Vec<f64>,
    pub initial_val_loss: Option<f64>,
    /// Epoch (1-based) whose parameters were returned; 0 means the initial ones.
    pub best_epoch: usize,
}

/// Mean over horizons of `|pred − target| / max(target, 1)`.
pub fn mape_loss(pred: &[f64], target: &[u64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape("mape_loss", pred.len(), target.len()));
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p - t as f64).abs() / (t as f64).max(1.0))
        .sum();
    Ok(total / pred.len() as f64)
}

/// Residuals `pred_j − target_j` formed as `(last − target_j) + Σ_{i≤j} softplus(raw_i)`,
/// so the integer offset is exact and no precision is lost to the level.
pub(crate) fn residuals(raw: &[f64], last_observed: u64, targets: &[u64]) -> Result<Vec<f64>> {
    if raw.len() != targets.len() || raw.is_empty() {
        return Err(Error::shape("residuals", raw.len(), targets.len()));
    }
    let mut inc = 0.0;
    Ok(raw
        .iter()
        .zip(targets)
        .map(|(&r, &t)| {
            inc += softplus_scalar(r);
            (last_observed as i128 - t as i128) as f64 + inc
        })
        .collect())
}

pub(crate) fn loss_from_residuals(res: &[f64], targets: &[u64]) -> f64 {
    let total: f64 = res
        .iter()
        .zip(targets)
        .map(|(r, &t)| r.abs() / (t as f64).max(1.0))
        .sum();
    total / res.len() as f64
}

pub fn predict_all(
    config: &ModelConfig,
    params: &ModelParams,
    examples: &[FeatureSequence],
) -> Result<Vec<Prediction>> {
    params.check(config)?;
    examples.par_iter().map(|ex| forward(config, params, ex)).collect()
}

/// Mean loss over a set of examples.
pub fn mean_loss(config: &ModelConfig, params: &ModelParams, examples: &[FeatureSequence]) -> Result<f64> {
    let losses: Vec<f64> = predict_all(config, params, examples)?
        .iter()
        .zip(examples)
        .map(|(p, ex)| mape_loss(&p.horizon_cumulative, &ex.targets))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Averaged loss and gradient of a batch. Per-example work runs in
/// parallel; the reduction runs in batch order.
pub fn batch_gradient(
    config: &ModelConfig,
    params: &ModelParams,
    batch: &[&FeatureSequence],
) -> Result<(f64, ModelParams)> {
    let parts: Vec<(f64, ModelParams)> = batch
        .par_iter()
        .map(|ex| backward(config, params, ex))
        .collect::<Result<_>>()?;
    let mut grad = ModelParams::zeros(config);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grad.add_scaled(g, 1.0);
    }
    let n = batch.len() as f64;
    grad.scale(1.0 / n);
    Ok((loss / n, grad))
}

fn clip(grad: &mut ModelParams, max_norm: f64) {
    let norm = grad.l2_norm();
    if norm > max_norm {
        grad.scale(max_norm / norm);
    }
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged { epoch, loss: f64::NAN },
        other => other,
    }
}

/// Trains from a fresh initialisation drawn from `rng`.
pub fn train(
    config: &TrainConfig,
    model: &ModelConfig,
    train_set: &[FeatureSequence],
    val_set: &[FeatureSequence],
    rng: &mut Rng,
) -> Result<(ModelParams, TrainTrace)> {
    let params = ModelParams::init(model, rng)?;
    train_from(config, model, params, train_set, val_set, rng)
}

/// Trains starting from `params`. Returns the parameters with the lowest
/// validation loss seen (training loss when `val_set` is empty).
pub fn train_from(
    config: &TrainConfig,
    model: &ModelConfig,
    mut params: ModelParams,
    train_set: &[FeatureSequence],
    val_set: &[FeatureSequence],
    rng: &mut Rng,
) -> Result<(ModelParams, TrainTrace)> {
    config.validate()?;
    params.check(model)?;
    let mut trace = TrainTrace::default();
    if config.epochs == 0 {
        return Ok((params, trace));
    }
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let monitor = if val_set.is_empty() { train_set } else { val_set };

    let mut best_loss = mean_loss(model, &params, monitor)?;
    trace.initial_val_loss = Some(best_loss);
    let mut best_params = params.clone();
    let mut stale = 0;
    let mut state = AdadeltaState::new(model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&FeatureSequence> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grad) = batch_gradient(model, &params, &batch).map_err(diverged(epoch))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            epoch_loss += loss * batch.len() as f64;
            if let Some(max_norm) = config.clip_norm {
                clip(&mut grad, max_norm);
            }
            adadelta_update(&mut state, &mut params, &grad, config.rho, config.eps)?;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            mean_loss(model, &params, train_set)
        } else {
            mean_loss(model, &params, val_set)
        }
        .map_err(diverged(epoch))?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_loss });
        }
        trace.train_loss.push(train_loss);
        trace.val_loss.push(val_loss);
        trace.seconds.push(started.elapsed().as_secs_f64());

        if val_loss < best_loss {
            best_loss = val_loss;
            best_params.clone_from(&params);
            trace.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if config.early_stop_patience > 0 && stale >= config.early_stop_patience {
                break;
            }
        }
    }
    Ok((best_params, trace))
}

/// Per-horizon MAPE and accuracy over `examples`.
pub fn evaluate_split(
    config: &ModelConfig,
    params: &ModelParams,
    examples: &[FeatureSequence],
    epsilon: f64,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Population("no examples to evaluate".into()));
    }
    let preds = predict_all(config, params, examples)?;
    let p: Vec<Vec<f64>> = preds.into_iter().map(|p| p.horizon_cumulative).collect();
    let t: Vec<Vec<f64>> = examples
        .iter()
        .map(|ex| ex.targets.iter().map(|&v| v as f64).collect())
        .collect();
    evaluate_predictions(&p, &t, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Variant;

    #[test]
    fn mape_loss_cases() {
        assert_eq!(mape_loss(&[4.0, 9.0], &[4, 9]).unwrap(), 0.0);
        assert!((mape_loss(&[13.0], &[10]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(mape_loss(&[1.0], &[0]).unwrap(), 1.0);
        assert!(mape_loss(&[1.0], &[1, 2]).is_err());
    }

    fn tiny() -> (ModelConfig, Vec<FeatureSequence>) {
        let config = ModelConfig {
            variant: Variant::LtCcp,
            hidden: 4,
            input_dim: 3,
            t_obs: 3,
            horizons: 2,
            ..Default::default()
        };
        let mut rng = Rng::new(77);
        let examples = (0..12)
            .map(|i| {
                let inputs: Vec<Vec<f64>> = (0..3)
                    .map(|_| (0..3).map(|_| rng.below(8) as f64).collect())
                    .collect();
                let last = 5 + i as u64;
                FeatureSequence {
                    paper_id: format!("p{i}"),
                    inputs,
                    targets: vec![last + 2, last + 5],
                    last_observed: last,
                }
            })
            .collect();
        (config, examples)
    }

    #[test]
    fn zero_epochs_returns_initial() {
        let (model, examples) = tiny();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (params, trace) = train(&cfg, &model, &examples, &[], &mut Rng::new(3)).unwrap();
        assert_eq!(params, ModelParams::init(&model, &mut Rng::new(3)).unwrap());
        assert!(trace.train_loss.is_empty() && trace.val_loss.is_empty());
    }

    #[test]
    fn seeded_training_is_repeatable() {
        let (model, examples) = tiny();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            ..Default::default()
        };
        let run = || train(&cfg, &model, &examples[..8], &examples[8..], &mut Rng::new(9)).unwrap();
        let (pa, ta) = run();
        let (pb, tb) = run();
        assert_eq!(pa, pb);
        assert_eq!(ta.train_loss, tb.train_loss);
        assert_eq!(ta.val_loss, tb.val_loss);
        assert_eq!(ta.train_loss.len(), ta.seconds.len());
    }

    #[test]
    fn perfect_predictions_score_perfectly() {
        let (model, examples) = tiny();
        let params = ModelParams::init(&model, &mut Rng::new(1)).unwrap();
        let preds = predict_all(&model, &params, &examples).unwrap();
        let oracle: Vec<FeatureSequence> = examples
            .iter()
            .zip(&preds)
            .map(|(ex, _)| ex.clone())
            .collect();
        let truths: Vec<Vec<f64>> = oracle
            .iter()
            .map(|ex| ex.targets.iter().map(|&v| v as f64).collect())
            .collect();
        let r = evaluate_predictions(&truths, &truths, 0.3).unwrap();
        assert!(r.horizons.iter().all(|h| h.mape == 0.0 && h.acc == 1.0));
    }

    #[test]
    fn evaluation_ignores_order() {
        let (model, examples) = tiny();
        let params = ModelParams::init(&model, &mut Rng::new(1)).unwrap();
        let a = evaluate_split(&model, &params, &examples, 0.3).unwrap();
        let mut rev = examples.clone();
        rev.reverse();
        let b = evaluate_split(&model, &params, &rev, 0.3).unwrap();
        for (x, y) in a.horizons.iter().zip(&b.horizons) {
            assert!((x.mape - y.mape).abs() < 1e-12);
            assert_eq!(x.acc, y.acc);
        }
        assert!(evaluate_split(&model, &params, &[], 0.3).is_err());
    }

    #[test]
    fn single_example_metrics_by_hand() {
        let (model, examples) = tiny();
        let params = ModelParams::zeros(&model);
        // zero params: pred = last + j ln 2; example 0 has last 5, targets [7, 10]
        let r = evaluate_split(&model, &params, &examples[..1], 0.3).unwrap();
        let ln2 = 2f64.ln();
        assert!((r.horizons[0].mape - (2.0 - ln2) / 7.0).abs() < 1e-12);
        assert!((r.horizons[1].mape - (5.0 - 2.0 * ln2) / 10.0).abs() < 1e-12);
        assert_eq!(r.horizons[0].acc, 1.0);
        assert_eq!(r.horizons[1].acc, 0.0);
    }

    #[test]
    fn constant_loss_when_already_fit() {
        // huge negative readout bias: predictions sit at last_observed and so
        // do the targets, so every gradient is zero and nothing moves
        let (model, mut examples) = tiny();
        let mut params = ModelParams::init(&model, &mut Rng::new(2)).unwrap();
        params.readout.b_r.iter_mut().for_each(|b| *b = -800.0);
        params.readout.w_r = crate::numkit::Mat64::zeros(2, 4);
        for ex in &mut examples {
            ex.targets = vec![ex.last_observed; 2];
        }
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            early_stop_patience: 0,
            ..Default::default()
        };
        let (_, trace) = train_from(&cfg, &model, params, &examples, &[], &mut Rng::new(0)).unwrap();
        assert!(trace.train_loss.iter().all(|&l| l == trace.train_loss[0]));
        assert_eq!(trace.train_loss[0], 0.0);
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let mut rng = Rng::new(5);
        for variant in Variant::ALL {
            for pool in [crate::network::PoolMode::Joint, crate::network::PoolMode::Inputs] {
                let model = ModelConfig {
                    variant,
                    pool,
                    hidden: 4,
                    attn: 3,
                    ..Default::default()
                };
                let mut params = ModelParams::init(&model, &mut rng).unwrap();
                for (_, vals) in params.blocks_mut() {
                    vals.iter_mut().for_each(|v| *v = rng.uniform(-0.5, 0.5));
                }
                let ex = FeatureSequence {
                    paper_id: "g".into(),
                    inputs: (0..model.t_obs)
                        .map(|_| (0..model.input_dim).map(|_| rng.below(20) as f64).collect())
                        .collect(),
                    targets: vec![40, 52, 61, 75, 90],
                    last_observed: 30,
                };
                let r = gradient_check(&model, &params, &ex, gradcheck::DEFAULT_REL_STEP).unwrap();
                assert!(r.passed_resolved(gradcheck::GRADCHECK_TOLERANCE), "{variant} {pool:?}: {r:?}");
            }
        }
    }

    /// Continuation data: every paper keeps its recent yearly rate.
    fn trend_set(n: usize, seed: u64) -> Vec<FeatureSequence> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| {
                let rate = 1 + rng.below(30) as u64;
                let yearly: Vec<u64> = (0..5).map(|_| rate / 2 + rng.below(rate as usize) as u64).collect();
                let last: u64 = yearly.iter().sum();
                let inputs = (0..5)
                    .map(|t| (0..10).map(|k| if k + t >= 9 { yearly[k + t - 9] as f64 } else { 0.0 }).collect())
                    .collect();
                FeatureSequence {
                    paper_id: format!("t{i}"),
                    inputs,
                    targets: (1..=5).map(|j| last + j * yearly[4]).collect(),
                    last_observed: last,
                }
            })
            .collect()
    }

    #[test]
    fn training_halves_mape_on_trend_data() {
        let examples = trend_set(200, 11);
        let model = ModelConfig {
            variant: Variant::AttALt,
            ..Default::default()
        };
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 20,
            early_stop_patience: 0,
            ..Default::default()
        };
        let (params, trace) = train(&cfg, &model, &examples, &[], &mut Rng::new(4)).unwrap();
        let initial = trace.initial_val_loss.unwrap();
        let fin = mean_loss(&model, &params, &examples).unwrap();
        eprintln!("initial {initial} final {fin}");
        assert!(fin <= 0.5 * initial, "initial {initial} final {fin}");
    }
}
