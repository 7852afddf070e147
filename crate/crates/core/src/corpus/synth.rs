use serde::{Deserialize, Serialize};

use super::{CitationEvent, Corpus, PaperRecord};
use crate::error::{Error, Result};
use crate::numkit::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_papers: usize,
    pub years: usize,
    pub m_refs: usize,
    /// Standard deviation of log-fitness.
    pub fitness_spread: f64,
    pub start_year: i32,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_papers: 2000,
            years: 25,
            m_refs: 8,
            fitness_spread: 1.0,
            start_year: 1990,
        }
    }
}

/// Prefix-sum tree over non-negative weights with O(log n) sampling.
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick {
            tree: vec![0.0; n + 1],
        }
    }

    fn add(&mut self, i: usize, delta: f64) {
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    fn prefix(&self, i: usize) -> f64 {
        let mut k = i;
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k -= k & k.wrapping_neg();
        }
        s
    }

    /// Smallest index whose inclusive prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let mut pos = 0;
        let mut step = (self.tree.len() - 1).next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos.min(self.tree.len() - 2)
    }
}

/// Grows a citation network one paper at a time. Paper `i` is published in
/// year `start_year + i * years / n_papers` and cites `min(m_refs, i)`
/// distinct earlier papers, each drawn with probability proportional to
/// `(citations + 1) * fitness`.
pub fn synth_corpus(rng: &mut Rng, params: &SynthParams) -> Result<Corpus> {
    let SynthParams {
        n_papers,
        years,
        m_refs,
        fitness_spread,
        start_year,
    } = *params;
    if n_papers < 2 || m_refs < 1 || years < 1 {
        return Err(Error::InvalidArgument(format!(
            "synthetic corpus needs n_papers >= 2, m_refs >= 1, years >= 1 \
             (got {n_papers}, {m_refs}, {years})"
        )));
    }
    if !(fitness_spread >= 0.0 && fitness_spread.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "fitness spread must be non-negative, got {fitness_spread}"
        )));
    }

    let width = n_papers.to_string().len();
    let ids: Vec<String> = (0..n_papers).map(|i| format!("S{i:0width$}")).collect();
    let papers: Vec<PaperRecord> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| PaperRecord {
            paper_id: id.clone(),
            pub_year: start_year + (i * years / n_papers) as i32,
        })
        .collect();

    let fitness: Vec<f64> = (0..n_papers)
        .map(|_| (fitness_spread * rng.standard_normal()).exp())
        .collect();
    let mut weights = vec![0.0; n_papers];
    let mut tree = Fenwick::new(n_papers);
    let mut events = Vec::with_capacity(n_papers * m_refs);
    let mut chosen = Vec::with_capacity(m_refs);

    for i in 0..n_papers {
        let k = m_refs.min(i);
        chosen.clear();
        for _ in 0..k {
            let total = tree.prefix(i);
            let mut j = tree.find(rng.next_f64() * total).min(i - 1);
            while chosen.contains(&j) {
                // rounding residue left on an excluded slot
                j = tree.find(rng.next_f64() * total).min(i - 1);
            }
            // exclude from subsequent draws for this paper
            tree.add(j, -weights[j]);
            chosen.push(j);
        }
        for &j in &chosen {
            weights[j] += fitness[j];
            tree.add(j, weights[j]);
            events.push(CitationEvent {
                citing_id: ids[i].clone(),
                cited_id: ids[j].clone(),
                year: papers[i].pub_year,
            });
        }
        weights[i] = fitness[i];
        tree.add(i, weights[i]);
    }

    let span = (start_year, start_year + years as i32 - 1);
    Corpus::from_parts(papers, events, Some(span)).map(|(c, _)| c)
}
