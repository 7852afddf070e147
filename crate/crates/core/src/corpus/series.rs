use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative citation counts indexed by years since publication.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationSeries {
    pub paper_id: String,
    pub pub_year: i32,
    pub cumulative: Vec<u64>,
}

impl CitationSeries {
    /// New citations received in each year.
    pub fn yearly_new(&self) -> Vec<u64> {
        let mut prev = 0;
        self.cumulative
            .iter()
            .map(|&c| {
                let d = c.saturating_sub(prev);
                prev = c;
                d
            })
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }
}

/// One training/evaluation example: `t_obs` trailing windows of yearly
/// citation counts, plus cumulative targets for the next `H` years.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub paper_id: String,
    /// Raw yearly counts, oldest year first within each window.
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<u64>,
    pub last_observed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct ExampleSet {
    pub examples: Vec<FeatureSequence>,
    /// Papers without cumulative counts for every target year.
    pub skipped: Vec<String>,
}

/// Windows each series into a [`FeatureSequence`].
///
/// `inputs[t][k]` is the number of new citations in year `t - window + 1 + k`
/// (zero before publication); `targets[j]` is the cumulative count at year
/// `t_obs + j`.
pub fn make_examples(
    series: &[CitationSeries],
    t_obs: usize,
    horizons: usize,
    window: usize,
) -> Result<ExampleSet> {
    if t_obs == 0 || horizons == 0 || window == 0 {
        return Err(Error::InvalidArgument(format!(
            "t_obs, horizons and window must be positive (got {t_obs}, {horizons}, {window})"
        )));
    }
    let mut out = ExampleSet::default();
    for s in series {
        if s.cumulative.len() < t_obs + horizons {
            out.skipped.push(s.paper_id.clone());
            continue;
        }
        let new = s.yearly_new();
        let inputs = (0..t_obs)
            .map(|t| {
                (0..window)
                    .map(|k| {
                        let year = t as isize - window as isize + 1 + k as isize;
                        if year < 0 {
                            0.0
                        } else {
                            new[year as usize] as f64
                        }
                    })
                    .collect()
            })
            .collect();
        out.examples.push(FeatureSequence {
            paper_id: s.paper_id.clone(),
            inputs,
            targets: s.cumulative[t_obs..t_obs + horizons].to_vec(),
            last_observed: s.cumulative[t_obs - 1],
        });
    }
    Ok(out)
}

pub fn write_series_jsonl(path: &Path, series: &[CitationSeries]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in series {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_series_jsonl(path: &Path) -> Result<Vec<CitationSeries>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: CitationSeries = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        if s.cumulative.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i as u64 + 1,
                msg: format!("series for `{}` is not non-decreasing", s.paper_id),
            });
        }
        out.push(s);
    }
    Ok(out)
}
