//! Evaluation metrics (MAPE and tolerance accuracy) over a filtered paper
//! population, and log-binned citation distributions for comparing actual
//! with predicted counts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::csv_io;
use crate::error::{Error, Result};

/// Relative error tolerance for accuracy.
pub const DEFAULT_EPSILON: f64 = 0.3;
pub const DEFAULT_BINS_PER_DECADE: usize = 5;

fn check_population(preds: &[f64], truths: &[f64]) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(Error::shape("metric population", preds.len(), truths.len()));
    }
    if preds.is_empty() {
        return Err(Error::Population("empty population".into()));
    }
    if let Some(i) = truths.iter().position(|&n| !(n > 0.0)) {
        return Err(Error::Population(format!(
            "paper {i} has observed count {}; the population must be filtered to positive counts",
            truths[i]
        )));
    }
    Ok(())
}

fn ratios<'a>(preds: &'a [f64], truths: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    preds.iter().zip(truths).map(|(p, n)| ((p - n) / n).abs())
}

/// `(1/M) Σ |n̂ − n| / n`.
pub fn mape(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check_population(preds, truths)?;
    Ok(ratios(preds, truths).sum::<f64>() / preds.len() as f64)
}

/// Fraction of papers with `|n̂ − n| / n ≤ epsilon`.
pub fn acc(preds: &[f64], truths: &[f64], epsilon: f64) -> Result<f64> {
    check_population(preds, truths)?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let hits = ratios(preds, truths).filter(|&r| r <= epsilon).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub mape: f64,
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub horizons: Vec<HorizonMetrics>,
    pub epsilon: f64,
    pub population: usize,
}

impl EvalReport {
    pub fn at(&self, horizon: usize) -> Option<&HorizonMetrics> {
        self.horizons.iter().find(|h| h.horizon == horizon)
    }
}

/// Metrics per horizon; `preds[d][j]` and `truths[d][j]` are paper `d` at
/// horizon `j + 1`.
pub fn evaluate_predictions(preds: &[Vec<f64>], truths: &[Vec<f64>], epsilon: f64) -> Result<EvalReport> {
    if preds.len() != truths.len() {
        return Err(Error::shape("evaluate_predictions", preds.len(), truths.len()));
    }
    let h = truths.first().map_or(0, |t| t.len());
    let mut horizons = Vec::with_capacity(h);
    for j in 0..h {
        let column = |rows: &[Vec<f64>]| -> Result<Vec<f64>> {
            rows.iter()
                .map(|r| r.get(j).copied().ok_or_else(|| Error::shape("horizon row", r.len(), h)))
                .collect()
        };
        let p = column(preds)?;
        let t = column(truths)?;
        horizons.push(HorizonMetrics {
            horizon: j + 1,
            mape: mape(&p, &t)?,
            acc: acc(&p, &t, epsilon)?,
        });
    }
    Ok(EvalReport {
        horizons,
        epsilon,
        population: preds.len(),
    })
}

/// MAPE of one rank-based slice of the population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileMape {
    pub group: usize,
    pub key_lo: f64,
    pub key_hi: f64,
    pub papers: usize,
    pub mape: f64,
}

/// Splits papers into `groups` equal-rank slices by `keys` (ties broken by
/// input order) and reports MAPE inside each. The last group holds the
/// largest keys.
pub fn quantile_mape(preds: &[f64], truths: &[f64], keys: &[f64], groups: usize) -> Result<Vec<QuantileMape>> {
    check_population(preds, truths)?;
    if keys.len() != preds.len() || groups == 0 || groups > preds.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} papers into {groups} groups with {} keys",
            preds.len(),
            keys.len()
        )));
    }
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    let n = order.len();
    (0..groups)
        .map(|g| {
            let slice = &order[g * n / groups..(g + 1) * n / groups];
            let p: Vec<f64> = slice.iter().map(|&i| preds[i]).collect();
            let t: Vec<f64> = slice.iter().map(|&i| truths[i]).collect();
            Ok(QuantileMape {
                group: g + 1,
                key_lo: keys[slice[0]],
                key_hi: keys[slice[slice.len() - 1]],
                papers: slice.len(),
                mape: mape(&p, &t)?,
            })
        })
        .collect()
}

/// Counts over bins `[edges[i], edges[i + 1])`. Bin 0 is `[0, 1)`, the
/// underflow bin for zero counts; the rest are log-spaced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub label: String,
}

impl DistHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn normalized(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }
}

/// `[0, 1, 10^(1/b), 10^(2/b), …]` with the last edge strictly above `max`.
pub fn log_edges(max: f64, bins_per_decade: usize) -> Vec<f64> {
    let b = bins_per_decade as f64;
    let mut edges = vec![0.0, 1.0];
    let mut k = 1;
    loop {
        let e = 10f64.powf(k as f64 / b);
        edges.push(e);
        if e > max {
            break;
        }
        k += 1;
    }
    edges
}

pub fn histogram_on_edges(values: &[f64], edges: &[f64], label: &str) -> DistHistogram {
    let mut counts = vec![0; edges.len() - 1];
    for &v in values {
        let i = edges.partition_point(|&e| e <= v).saturating_sub(1);
        let last = counts.len() - 1;
        counts[i.min(last)] += 1;
    }
    DistHistogram {
        edges: edges.to_vec(),
        counts,
        label: label.to_string(),
    }
}

fn check_bins(bins_per_decade: usize) -> Result<()> {
    if bins_per_decade == 0 {
        return Err(Error::InvalidArgument("bins_per_decade must be at least 1".into()));
    }
    Ok(())
}

pub fn citation_histogram(counts: &[u64], bins_per_decade: usize) -> Result<DistHistogram> {
    check_bins(bins_per_decade)?;
    if counts.is_empty() {
        return Err(Error::InvalidArgument("histogram of an empty population".into()));
    }
    let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    Ok(value_histogram(&values, bins_per_decade, "actual"))
}

fn value_histogram(values: &[f64], bins_per_decade: usize, label: &str) -> DistHistogram {
    let max = values.iter().copied().fold(0.0, f64::max);
    histogram_on_edges(values, &log_edges(max, bins_per_decade), label)
}

pub fn total_variation(a: &DistHistogram, b: &DistHistogram) -> Result<f64> {
    if a.edges != b.edges {
        return Err(Error::InvalidArgument("histograms do not share edges".into()));
    }
    let (p, q) = (a.normalized(), b.normalized());
    Ok(0.5 * p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub actual: DistHistogram,
    pub predicted: DistHistogram,
    pub tv_distance: f64,
}

/// Histograms of actual and predicted counts on shared edges, plus the
/// total-variation distance between their normalised forms.
pub fn distribution_report(actual: &[f64], predicted: &[f64], bins_per_decade: usize) -> Result<DistributionReport> {
    check_bins(bins_per_decade)?;
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(Error::shape("distribution_report", actual.len(), predicted.len()));
    }
    if actual.iter().chain(predicted).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("counts must be finite and non-negative".into()));
    }
    let max = actual.iter().chain(predicted).copied().fold(0.0, f64::max);
    let edges = log_edges(max, bins_per_decade);
    let actual = histogram_on_edges(actual, &edges, "actual");
    let predicted = histogram_on_edges(predicted, &edges, "predicted");
    let tv_distance = total_variation(&actual, &predicted)?;
    Ok(DistributionReport {
        actual,
        predicted,
        tv_distance,
    })
}

/// `bin_lo,bin_hi,count_actual,count_predicted`
pub fn write_distribution_csv(path: &Path, report: &DistributionReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["bin_lo", "bin_hi", "count_actual", "count_predicted"])
        .map_err(|e| csv_io(path, e))?;
    let edges = &report.actual.edges;
    for i in 0..report.actual.counts.len() {
        w.write_record([
            edges[i].to_string(),
            edges[i + 1].to_string(),
            report.actual.counts[i].to_string(),
            report.predicted.counts[i].to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| crate::error::Error::io(path, e))
}
