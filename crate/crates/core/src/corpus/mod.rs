//! Citation corpora: edge-list ingestion, per-paper cumulative series,
//! the early-citation eligibility rule, windowing into training examples,
//! and a preferential-attachment generator for synthetic corpora.

mod series;
mod synth;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Rng;

pub use series::{
    make_examples, read_series_jsonl, write_series_jsonl, CitationSeries, ExampleSet,
    FeatureSequence,
};
pub use synth::{synth_corpus, SynthParams};

/// A paper needs at least this many citations within its first
/// [`EARLY_WINDOW_YEARS`] years to enter the study population.
pub const MIN_EARLY_CITATIONS: u64 = 5;
/// Years-since-publication `0..EARLY_WINDOW_YEARS` form the early window.
pub const EARLY_WINDOW_YEARS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationEvent {
    pub citing_id: String,
    pub cited_id: String,
    pub year: i32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub paper_id: String,
    pub pub_year: i32,
}

/// Counts of what ingestion kept and dropped.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub paper_rows: usize,
    pub edge_rows: usize,
    pub papers: usize,
    pub events: usize,
    pub duplicates: usize,
    pub self_loops: usize,
    pub out_of_span: usize,
    pub papers_out_of_span: usize,
    /// Rows whose cited paper is missing from the paper table (dropped).
    pub unresolved_cited: usize,
    /// Kept events whose citing paper is missing from the paper table.
    pub unresolved_citing: usize,
    pub span: (i32, i32),
}

/// Immutable citation corpus. Events are deduplicated per
/// `(citing, cited)` pair and every `cited_id` resolves to a paper.
#[derive(Clone, Debug)]
pub struct Corpus {
    papers: Vec<PaperRecord>,
    events: Vec<CitationEvent>,
    span: (i32, i32),
    index: HashMap<String, usize>,
    // Sorted citation years per paper, one entry per distinct citing paper.
    incoming: Vec<Vec<i32>>,
}

impl Corpus {
    /// Validates and deduplicates raw rows. With `span = None` the span is
    /// the smallest year range covering every publication and citation.
    pub fn from_parts(
        papers: Vec<PaperRecord>,
        events: Vec<CitationEvent>,
        span: Option<(i32, i32)>,
    ) -> Result<(Corpus, IngestReport)> {
        let mut report = IngestReport {
            paper_rows: papers.len(),
            edge_rows: events.len(),
            ..Default::default()
        };
        if papers.is_empty() {
            return Err(Error::EmptyCorpus("no papers".into()));
        }
        let span = match span {
            Some((lo, hi)) if lo > hi => {
                return Err(Error::InvalidArgument(format!("span {lo}..{hi} is empty")))
            }
            Some(s) => s,
            None => {
                let years = papers
                    .iter()
                    .map(|p| p.pub_year)
                    .chain(events.iter().map(|e| e.year));
                let (lo, hi) = years.fold((i32::MAX, i32::MIN), |(lo, hi), y| {
                    (lo.min(y), hi.max(y))
                });
                (lo, hi)
            }
        };
        let in_span = |y: i32| y >= span.0 && y <= span.1;

        let mut index = HashMap::with_capacity(papers.len());
        let mut kept_papers = Vec::with_capacity(papers.len());
        for p in papers {
            if !in_span(p.pub_year) {
                report.papers_out_of_span += 1;
                continue;
            }
            if index.contains_key(&p.paper_id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate paper id `{}`",
                    p.paper_id
                )));
            }
            index.insert(p.paper_id.clone(), kept_papers.len());
            kept_papers.push(p);
        }
        if kept_papers.is_empty() {
            return Err(Error::EmptyCorpus(format!(
                "no papers inside span {}..{}",
                span.0, span.1
            )));
        }

        let mut pair_slot: HashMap<(String, String), usize> = HashMap::new();
        let mut kept: Vec<CitationEvent> = Vec::new();
        for e in events {
            if e.citing_id == e.cited_id {
                report.self_loops += 1;
                continue;
            }
            if !in_span(e.year) {
                report.out_of_span += 1;
                continue;
            }
            if !index.contains_key(&e.cited_id) {
                report.unresolved_cited += 1;
                continue;
            }
            let key = (e.citing_id.clone(), e.cited_id.clone());
            match pair_slot.get(&key) {
                Some(&slot) => {
                    report.duplicates += 1;
                    if e.year < kept[slot].year {
                        kept[slot].year = e.year;
                    }
                }
                None => {
                    pair_slot.insert(key, kept.len());
                    kept.push(e);
                }
            }
        }

        let mut incoming = vec![Vec::new(); kept_papers.len()];
        for e in &kept {
            if !index.contains_key(&e.citing_id) {
                report.unresolved_citing += 1;
            }
            incoming[index[&e.cited_id]].push(e.year);
        }
        for years in &mut incoming {
            years.sort_unstable();
        }

        report.papers = kept_papers.len();
        report.events = kept.len();
        report.span = span;
        let corpus = Corpus {
            papers: kept_papers,
            events: kept,
            span,
            index,
            incoming,
        };
        Ok((corpus, report))
    }

    pub fn papers(&self) -> &[PaperRecord] {
        &self.papers
    }

    pub fn events(&self) -> &[CitationEvent] {
        &self.events
    }

    pub fn span(&self) -> (i32, i32) {
        self.span
    }

    pub fn paper(&self, paper_id: &str) -> Option<&PaperRecord> {
        self.index.get(paper_id).map(|&i| &self.papers[i])
    }

    /// Number of distinct citing papers for `paper_id` over the whole span.
    pub fn in_degree(&self, paper_id: &str) -> Option<usize> {
        self.index.get(paper_id).map(|&i| self.incoming[i].len())
    }

    /// Cumulative citation counts for years-since-publication `0..=horizon`.
    pub fn build_series(&self, paper_id: &str, horizon: usize) -> Result<CitationSeries> {
        let &i = self
            .index
            .get(paper_id)
            .ok_or_else(|| Error::UnknownPaper(paper_id.to_string()))?;
        let paper = &self.papers[i];
        let years = &self.incoming[i];
        let cumulative = (0..=horizon)
            .map(|t| {
                let cutoff = paper.pub_year + t as i32;
                years.partition_point(|&y| y <= cutoff) as u64
            })
            .collect();
        Ok(CitationSeries {
            paper_id: paper.paper_id.clone(),
            pub_year: paper.pub_year,
            cumulative,
        })
    }

    /// Series covering every observable year up to the end of the span.
    pub fn observed_series(&self, paper_id: &str) -> Result<CitationSeries> {
        let paper = self
            .paper(paper_id)
            .ok_or_else(|| Error::UnknownPaper(paper_id.to_string()))?;
        let horizon = (self.span.1 - paper.pub_year).max(0) as usize;
        self.build_series(paper_id, horizon)
    }

    pub fn all_series(&self) -> Vec<CitationSeries> {
        self.papers
            .iter()
            .map(|p| self.observed_series(&p.paper_id).expect("indexed paper"))
            .collect()
    }
}

/// The early-citation rule plus the requirement that every target year
/// `pub_year + t_obs + horizons` lies inside the observed span.
pub fn is_eligible(series: &CitationSeries, t_obs: usize, horizons: usize) -> bool {
    is_eligible_with(series, t_obs, horizons, MIN_EARLY_CITATIONS)
}

/// [`is_eligible`] with a different early-citation threshold.
pub fn is_eligible_with(series: &CitationSeries, t_obs: usize, horizons: usize, min_early: u64) -> bool {
    let enough_years = series.cumulative.len() > t_obs + horizons;
    enough_years
        && series.cumulative.len() >= EARLY_WINDOW_YEARS
        && series.cumulative[EARLY_WINDOW_YEARS - 1] >= min_early
}

pub fn filter_eligible(corpus: &Corpus, t_obs: usize, horizons: usize) -> Vec<String> {
    filter_eligible_with(corpus, t_obs, horizons, MIN_EARLY_CITATIONS)
}

pub fn filter_eligible_with(corpus: &Corpus, t_obs: usize, horizons: usize, min_early: u64) -> Vec<String> {
    corpus
        .all_series()
        .into_iter()
        .filter(|s| is_eligible_with(s, t_obs, horizons, min_early))
        .map(|s| s.paper_id)
        .collect()
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn open_csv(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(reader)
}

fn records<'a>(
    path: &'a Path,
    reader: &'a mut csv::Reader<File>,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + 'a {
    reader.records().map(move |row| {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        Ok((line, row))
    })
}

fn parse_year(path: &Path, line: u64, raw: &str) -> Result<i32> {
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("invalid year `{raw}`")))
}

fn nonempty<'a>(path: &Path, line: u64, field: &str, raw: &'a str) -> Result<&'a str> {
    if raw.is_empty() {
        Err(parse_err(path, line, format!("empty {field}")))
    } else {
        Ok(raw)
    }
}

pub fn read_papers_csv(path: &Path) -> Result<Vec<PaperRecord>> {
    let mut reader = open_csv(path, &["paper_id", "pub_year"])?;
    records(path, &mut reader)
        .map(|row| {
            let (line, row) = row?;
            Ok(PaperRecord {
                paper_id: nonempty(path, line, "paper_id", &row[0])?.to_string(),
                pub_year: parse_year(path, line, &row[1])?,
            })
        })
        .collect()
}

pub fn read_edges_csv(path: &Path) -> Result<Vec<CitationEvent>> {
    let mut reader = open_csv(path, &["citing_id", "cited_id", "year"])?;
    records(path, &mut reader)
        .map(|row| {
            let (line, row) = row?;
            Ok(CitationEvent {
                citing_id: nonempty(path, line, "citing_id", &row[0])?.to_string(),
                cited_id: nonempty(path, line, "cited_id", &row[1])?.to_string(),
                year: parse_year(path, line, &row[2])?,
            })
        })
        .collect()
}

/// Reads a paper table and any number of edge lists into one corpus.
pub fn ingest_edge_list(
    papers_path: &Path,
    edge_paths: &[&Path],
    span: Option<(i32, i32)>,
) -> Result<(Corpus, IngestReport)> {
    let papers = read_papers_csv(papers_path)?;
    let mut events = Vec::new();
    for path in edge_paths {
        events.extend(read_edges_csv(path)?);
    }
    Corpus::from_parts(papers, events, span)
}

pub fn write_papers_csv(path: &Path, papers: &[PaperRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["paper_id", "pub_year"]).map_err(|e| csv_io(path, e))?;
    for p in papers {
        w.write_record([p.paper_id.as_str(), &p.pub_year.to_string()])
            .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_edges_csv(path: &Path, events: &[CitationEvent]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["citing_id", "cited_id", "year"])
        .map_err(|e| csv_io(path, e))?;
    for e in events {
        w.write_record([e.citing_id.as_str(), e.cited_id.as_str(), &e.year.to_string()])
            .map_err(|err| csv_io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Random partition by paper. The test share is rounded and clamped so
/// both sides are nonempty; each side keeps the input order.
pub fn split_train_test(
    ids: &[String],
    rng: &mut Rng,
    test_fraction: f64,
) -> Result<(Vec<String>, Vec<String>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if ids.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 ids to split, got {}",
            ids.len()
        )));
    }
    let n_test = ((ids.len() as f64 * test_fraction).round() as usize).clamp(1, ids.len() - 1);
    let mut order: Vec<usize> = (0..ids.len()).collect();
    rng.shuffle(&mut order);
    let test: HashSet<usize> = order[..n_test].iter().copied().collect();
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (i, id) in ids.iter().enumerate() {
        if test.contains(&i) {
            held.push(id.clone());
        } else {
            train.push(id.clone());
        }
    }
    Ok((train, held))
}
