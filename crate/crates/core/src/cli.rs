//! Command-line front end. Tables go to CSV files, reports go to stdout as
//! JSON, and failures map onto exit codes 1 (usage), 2 (data) and
//! 3 (numeric).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::corpus::{
    filter_eligible_with, ingest_edge_list, is_eligible_with, make_examples, read_series_jsonl, split_train_test, synth_corpus,
    write_edges_csv, write_papers_csv, write_series_jsonl, CitationSeries, FeatureSequence, SynthParams, MIN_EARLY_CITATIONS,
};
use crate::error::{Error, Result};
use crate::metrics::{
    distribution_report, quantile_mape, write_distribution_csv, EvalReport, DEFAULT_BINS_PER_DECADE, DEFAULT_EPSILON,
};
use crate::model_io::{load_model, save_model, write_atomic, ModelMetadata, SplitInfo};
use crate::network::{ModelConfig, ModelParams, PoolMode, Variant};
use crate::numkit::Rng;
use crate::training::gradcheck::{gradient_check_draws, DEFAULT_REL_STEP, GRADCHECK_TOLERANCE};
use crate::training::{evaluate_split, predict_all, train, GradCheckReport, TrainConfig, TrainTrace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "citecast", version, about = "Long-term citation count prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build per-paper citation series from a paper table and edge lists.
    Ingest(IngestArgs),
    /// Generate a synthetic preferential-attachment corpus.
    Synth(SynthArgs),
    /// Train a model on a series file.
    Train(TrainArgs),
    /// Per-horizon MAPE/ACC and per-quantile MAPE of a trained model.
    Evaluate(EvaluateArgs),
    /// Actual vs predicted citation-count distribution at one horizon.
    Dist(DistArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// CSV with header `paper_id,pub_year`.
    #[arg(long)]
    pub papers: PathBuf,
    /// CSV with header `citing_id,cited_id,year`; may repeat.
    #[arg(long, required = true)]
    pub edges: Vec<PathBuf>,
    /// Series JSONL to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, requires = "span_end")]
    pub span_start: Option<i32>,
    #[arg(long, requires = "span_start")]
    pub span_end: Option<i32>,
    /// Keep only papers with enough citations in years 0-4 and full target coverage.
    #[arg(long)]
    pub filter: bool,
    /// Citations required in years 0-4 under `--filter`.
    #[arg(long, default_value_t = MIN_EARLY_CITATIONS)]
    pub min_early: u64,
    #[arg(long, default_value_t = 5)]
    pub t_obs: usize,
    #[arg(long, default_value_t = 5)]
    pub horizons: usize,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub papers: usize,
    #[arg(long, default_value_t = 25)]
    pub years: usize,
    #[arg(long, default_value_t = 8)]
    pub m_refs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 1990)]
    pub start_year: i32,
    #[arg(long)]
    pub seed: u64,
    /// Directory receiving papers.csv and edges.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value = "att-a-lt")]
    pub variant: Variant,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    /// Attention projection width.
    #[arg(long, default_value_t = 16)]
    pub attn: usize,
    #[arg(long, default_value_t = 5)]
    pub t_obs: usize,
    #[arg(long, default_value_t = 5)]
    pub horizons: usize,
    /// Years of yearly counts in each input vector.
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, default_value = "joint")]
    pub pool: PoolMode,
}

impl ModelArgs {
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            layers: self.layers,
            hidden: self.hidden,
            input_dim: self.window,
            t_obs: self.t_obs,
            horizons: self.horizons,
            attn: self.attn,
            pool: self.pool,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch trace CSV; defaults to `<out>.trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 0.95)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub adadelta_eps: f64,
    /// Citations required in years 0-4 for a paper to be trained on.
    #[arg(long, default_value_t = MIN_EARLY_CITATIONS)]
    pub min_early: u64,
    /// Citations required in years 0-4 for a paper to be scored.
    #[arg(long, default_value_t = MIN_EARLY_CITATIONS)]
    pub eval_min_early: u64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Share of the non-test papers held out for validation.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Record measured epoch times in the trace instead of zeros.
    #[arg(long)]
    pub wall_clock: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitPart {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub series: PathBuf,
    /// Per-horizon CSV (`metric,t1,..`).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-quantile CSV; defaults to `<out>.quantiles.csv`.
    #[arg(long)]
    pub quantiles_out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub quantiles: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Citations required in years 0-4 for a paper to be scored.
    #[arg(long, default_value_t = MIN_EARLY_CITATIONS)]
    pub min_early: u64,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitPart,
}

#[derive(Args, Debug)]
pub struct DistArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// 1-based horizon; defaults to the last one.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BINS_PER_DECADE)]
    pub bins_per_decade: usize,
    /// Citations required in years 0-4 for a paper to be scored.
    #[arg(long, default_value_t = MIN_EARLY_CITATIONS)]
    pub min_early: u64,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitPart,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub draws: usize,
    /// Checks every variant in turn when omitted.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub attn: usize,
    #[arg(long, default_value_t = 5)]
    pub t_obs: usize,
    #[arg(long, default_value_t = 5)]
    pub horizons: usize,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, default_value = "joint")]
    pub pool: PoolMode,
    #[arg(long, default_value_t = DEFAULT_REL_STEP)]
    pub step: f64,
    /// Fault injection: perturb the analytic gradient of this block.
    #[arg(long, hide = true)]
    pub corrupt_block: Option<String>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::NonFinite { .. } | Error::Diverged { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Dist(a) => cmd_dist(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
    }
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(Error::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        )),
        _ => Ok(()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<i32> {
    require_file(&a.papers)?;
    for e in &a.edges {
        require_file(e)?;
    }
    require_parent(&a.out)?;
    let span = a.span_start.zip(a.span_end);
    let edges: Vec<&Path> = a.edges.iter().map(PathBuf::as_path).collect();
    let (corpus, report) = ingest_edge_list(&a.papers, &edges, span)?;
    let ids: Vec<String> = if a.filter {
        filter_eligible_with(&corpus, a.t_obs, a.horizons, a.min_early)
    } else {
        corpus.papers().iter().map(|p| p.paper_id.clone()).collect()
    };
    let series = ids
        .iter()
        .map(|id| corpus.observed_series(id))
        .collect::<Result<Vec<_>>>()?;
    write_series_jsonl(&a.out, &series)?;
    print_json(&json!({
        "ingest": report,
        "filtered": a.filter,
        "series_written": series.len(),
    }))?;
    Ok(EXIT_OK)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    if !a.out.is_dir() {
        fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    }
    let params = SynthParams {
        n_papers: a.papers,
        years: a.years,
        m_refs: a.m_refs,
        fitness_spread: a.spread,
        start_year: a.start_year,
    };
    let corpus = synth_corpus(&mut Rng::new(a.seed), &params)?;
    write_papers_csv(&a.out.join("papers.csv"), corpus.papers())?;
    write_edges_csv(&a.out.join("edges.csv"), corpus.events())?;
    print_json(&json!({
        "papers": corpus.papers().len(),
        "events": corpus.events().len(),
        "span": corpus.span(),
        "seed": a.seed,
    }))?;
    Ok(EXIT_OK)
}

/// Eligible examples of a series file under `config`, in file order.
pub fn load_examples(path: &Path, config: &ModelConfig, min_early: u64) -> Result<Vec<FeatureSequence>> {
    require_file(path)?;
    examples_from(&read_series_jsonl(path)?, config, min_early)
}

fn examples_from(series: &[CitationSeries], config: &ModelConfig, min_early: u64) -> Result<Vec<FeatureSequence>> {
    let kept: Vec<CitationSeries> = series
        .iter()
        .filter(|s| is_eligible_with(s, config.t_obs, config.horizons, min_early))
        .cloned()
        .collect();
    Ok(make_examples(&kept, config.t_obs, config.horizons, config.input_dim)?.examples)
}

/// Keeps the examples whose paper meets a stricter early-citation rule.
fn restrict(examples: Vec<FeatureSequence>, allowed: &[FeatureSequence]) -> Vec<FeatureSequence> {
    let ids: std::collections::HashSet<&str> = allowed.iter().map(|e| e.paper_id.as_str()).collect();
    examples.into_iter().filter(|e| ids.contains(e.paper_id.as_str())).collect()
}

/// Partitions examples into train/val/test by paper with a generator
/// seeded only by `info.seed` so evaluation can replay it.
pub fn split_examples(
    examples: &[FeatureSequence],
    seed: u64,
    test_fraction: f64,
    val_fraction: f64,
) -> Result<(SplitInfo, [Vec<FeatureSequence>; 3])> {
    let mut rng = Rng::new(seed);
    let ids: Vec<String> = examples.iter().map(|e| e.paper_id.clone()).collect();
    let (rest, test) = split_train_test(&ids, &mut rng, test_fraction)?;
    let (train, val) = if val_fraction > 0.0 {
        split_train_test(&rest, &mut rng, val_fraction)?
    } else {
        (rest, Vec::new())
    };
    let pick = |wanted: &[String]| -> Vec<FeatureSequence> {
        let set: std::collections::HashSet<&str> = wanted.iter().map(String::as_str).collect();
        examples.iter().filter(|e| set.contains(e.paper_id.as_str())).cloned().collect()
    };
    let parts = [pick(&train), pick(&val), pick(&test)];
    let info = SplitInfo {
        seed,
        test_fraction,
        val_fraction,
        n_train: parts[0].len(),
        n_val: parts[1].len(),
        n_test: parts[2].len(),
    };
    Ok((info, parts))
}

fn write_trace_csv(path: &Path, trace: &TrainTrace, wall_clock: bool) -> Result<()> {
    let mut text = String::from("epoch,train_loss,val_loss,seconds\n");
    for (i, (t, v)) in trace.train_loss.iter().zip(&trace.val_loss).enumerate() {
        let secs = if wall_clock { trace.seconds[i] } else { 0.0 };
        text.push_str(&format!("{},{t},{v},{secs}\n", i + 1));
    }
    write_atomic(path, text.as_bytes())
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let config = a.model.config();
    config.validate()?;
    if !(a.val_fraction >= 0.0 && a.val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("val fraction must lie in [0, 1), got {}", a.val_fraction)));
    }
    let train_cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        rho: a.rho,
        eps: a.adadelta_eps,
        seed: a.seed,
        early_stop_patience: a.patience,
        clip_norm: (a.clip_norm > 0.0).then_some(a.clip_norm),
    };
    train_cfg.validate()?;
    require_parent(&a.out)?;
    let trace_path = a.trace.clone().unwrap_or_else(|| with_suffix(&a.out, ".trace.csv"));
    require_parent(&trace_path)?;

    require_file(&a.series)?;
    let all_series = read_series_jsonl(&a.series)?;
    let examples = examples_from(&all_series, &config, a.min_early)?;
    if examples.len() < 2 * a.batch_size {
        return Err(Error::Population(format!(
            "{} eligible examples; training needs at least 2 x batch size = {}",
            examples.len(),
            2 * a.batch_size
        )));
    }
    let (split, [train_set, val_set, _]) = split_examples(&examples, a.seed, a.test_fraction, a.val_fraction)?;
    let mut rng = Rng::new(a.seed);
    let (params, trace) = train(&train_cfg, &config, &train_set, &val_set, &mut rng)?;
    let monitor = if val_set.is_empty() { &train_set } else { &val_set };
    let scored = restrict(monitor.clone(), &examples_from(&all_series, &config, a.eval_min_early)?);
    let validation = if scored.is_empty() {
        None
    } else {
        Some(evaluate_split(&config, &params, &scored, a.epsilon)?)
    };
    let metadata = ModelMetadata {
        seed: a.seed,
        min_early_citations: a.min_early,
        train: Some(train_cfg),
        split: Some(split.clone()),
        best_epoch: Some(trace.best_epoch),
        validation: validation.clone(),
    };
    save_model(&a.out, &config, &params, &metadata)?;
    write_trace_csv(&trace_path, &trace, a.wall_clock)?;
    print_json(&json!({
        "examples": examples.len(),
        "split": split,
        "epochs_run": trace.train_loss.len(),
        "best_epoch": trace.best_epoch,
        "initial_val_loss": trace.initial_val_loss,
        "best_val_loss": trace.best_epoch.checked_sub(1).map(|i| trace.val_loss[i]).or(trace.initial_val_loss),
        "validation": validation,
    }))?;
    Ok(EXIT_OK)
}

/// The examples of `part` for a trained model, replaying its recorded
/// split, restricted to papers with at least `eval_min_early` early citations.
pub fn examples_for(
    series: &Path,
    config: &ModelConfig,
    metadata: &ModelMetadata,
    part: SplitPart,
    eval_min_early: u64,
) -> Result<Vec<FeatureSequence>> {
    require_file(series)?;
    let all_series = read_series_jsonl(series)?;
    let scored = examples_from(&all_series, config, eval_min_early)?;
    let examples = examples_from(&all_series, config, metadata.min_early_citations)?;
    if part == SplitPart::All {
        return Ok(restrict(examples, &scored));
    }
    let info = metadata
        .split
        .as_ref()
        .ok_or_else(|| Error::ModelFormat("model records no split; use --split all".into()))?;
    let (replayed, [train_set, val_set, test_set]) =
        split_examples(&examples, info.seed, info.test_fraction, info.val_fraction)?;
    if (replayed.n_train, replayed.n_val, replayed.n_test) != (info.n_train, info.n_val, info.n_test) {
        return Err(Error::Population(format!(
            "series file does not match the model's split ({} train / {} val / {} test recorded, {} / {} / {} found)",
            info.n_train, info.n_val, info.n_test, replayed.n_train, replayed.n_val, replayed.n_test
        )));
    }
    let chosen = match part {
        SplitPart::Train => train_set,
        SplitPart::Val => val_set,
        _ => test_set,
    };
    Ok(restrict(chosen, &scored))
}

fn write_report_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let h = report.horizons.len();
    let mut text = String::from("metric");
    for j in 1..=h {
        text.push_str(&format!(",t{j}"));
    }
    text.push('\n');
    for (name, get) in [("MAPE", (|m: &crate::metrics::HorizonMetrics| m.mape) as fn(&_) -> f64), ("ACC", |m| m.acc)] {
        text.push_str(name);
        for m in &report.horizons {
            text.push_str(&format!(",{}", get(m)));
        }
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<i32> {
    require_file(&a.model)?;
    require_parent(&a.out)?;
    let q_path = a.quantiles_out.clone().unwrap_or_else(|| with_suffix(&a.out, ".quantiles.csv"));
    require_parent(&q_path)?;
    let (config, params, metadata) = load_model(&a.model)?;
    let examples = examples_for(&a.series, &config, &metadata, a.split, a.min_early)?;
    let report = evaluate_split(&config, &params, &examples, a.epsilon)?;
    write_report_csv(&a.out, &report)?;

    let preds = predict_all(&config, &params, &examples)?;
    let truth = |j: usize| -> Vec<f64> { examples.iter().map(|e| e.targets[j] as f64).collect() };
    let keys = truth(config.horizons - 1);
    let mut per_horizon = Vec::new();
    for j in 0..config.horizons {
        let p: Vec<f64> = preds.iter().map(|p| p.horizon_cumulative[j]).collect();
        per_horizon.push(quantile_mape(&p, &truth(j), &keys, a.quantiles)?);
    }
    let mut text = String::from("group,key_lo,key_hi,papers");
    for j in 1..=config.horizons {
        text.push_str(&format!(",mape_t{j}"));
    }
    text.push('\n');
    for g in 0..a.quantiles {
        let q = &per_horizon[0][g];
        text.push_str(&format!("{},{},{},{}", q.group, q.key_lo, q.key_hi, q.papers));
        for h in &per_horizon {
            text.push_str(&format!(",{}", h[g].mape));
        }
        text.push('\n');
    }
    write_atomic(&q_path, text.as_bytes())?;
    print_json(&json!({
        "split": format!("{:?}", a.split).to_lowercase(),
        "report": report,
        "quantiles": per_horizon[config.horizons - 1],
    }))?;
    Ok(EXIT_OK)
}

pub fn cmd_dist(a: &DistArgs) -> Result<i32> {
    require_file(&a.model)?;
    require_parent(&a.out)?;
    let (config, params, metadata) = load_model(&a.model)?;
    let horizon = a.horizon.unwrap_or(config.horizons);
    if horizon == 0 || horizon > config.horizons {
        return Err(Error::InvalidArgument(format!(
            "horizon must lie in 1..={}, got {horizon}",
            config.horizons
        )));
    }
    let examples = examples_for(&a.series, &config, &metadata, a.split, a.min_early)?;
    let preds = predict_all(&config, &params, &examples)?;
    let actual: Vec<f64> = examples.iter().map(|e| e.targets[horizon - 1] as f64).collect();
    let predicted: Vec<f64> = preds.iter().map(|p| p.horizon_cumulative[horizon - 1]).collect();
    let report = distribution_report(&actual, &predicted, a.bins_per_decade)?;
    write_distribution_csv(&a.out, &report)?;
    print_json(&json!({
        "horizon": horizon,
        "papers": examples.len(),
        "bins": report.actual.counts.len(),
        "tv_distance": report.tv_distance,
    }))?;
    Ok(EXIT_OK)
}

/// Runs the draws of `cmd_gradcheck` and merges them.
pub fn run_gradcheck(a: &GradcheckArgs) -> Result<GradCheckReport> {
    let variants: Vec<Variant> = match a.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    let mut rng = Rng::new(a.seed);
    let mut reports = Vec::new();
    for i in 0..a.draws {
        let config = ModelConfig {
            variant: variants[i % variants.len()],
            layers: a.layers,
            hidden: a.hidden,
            input_dim: a.window,
            t_obs: a.t_obs,
            horizons: a.horizons,
            attn: a.attn,
            pool: a.pool,
        };
        config.validate()?;
        let corrupt = |g: &mut ModelParams| {
            if let Some(target) = &a.corrupt_block {
                for (name, vals) in g.blocks_mut() {
                    if &name == target {
                        vals.iter_mut().for_each(|v| *v = *v * 1.5 + 1e-3);
                    }
                }
            }
        };
        reports.extend(gradient_check_draws(&config, &mut rng, 1, a.step, corrupt)?);
    }
    GradCheckReport::merge(&reports).ok_or_else(|| Error::InvalidArgument("draws must be at least 1".into()))
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    if let Some(target) = &a.corrupt_block {
        let probe = ModelConfig {
            variant: a.variant.unwrap_or(Variant::AttALt),
            layers: a.layers,
            ..Default::default()
        };
        let known: Vec<String> = ModelParams::zeros(&probe).blocks().into_iter().map(|b| b.name).collect();
        if !known.contains(target) {
            return Err(Error::InvalidArgument(format!("unknown block {target}")));
        }
    }
    let report = run_gradcheck(a)?;
    let passed = report.passed_resolved(GRADCHECK_TOLERANCE);
    print_json(&json!({
        "draws": a.draws,
        "tolerance": GRADCHECK_TOLERANCE,
        "passed": passed,
        "max_rel": report.max_rel_resolved,
        "worst_block": report.worst_resolved_block,
        "resolution": report.resolution,
        "max_rel_all_coordinates": report.max_rel,
        "worst_block_all_coordinates": report.worst_block,
        "blocks": report.blocks,
    }))?;
    if passed {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "gradient check failed: max relative discrepancy {:e} in {}",
            report.max_rel_resolved, report.worst_resolved_block
        );
        Ok(EXIT_NUMERIC)
    }
}
