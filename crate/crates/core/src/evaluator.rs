//! Ranking metrics, the test-set harness and prior-knowledge filtering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::rank;
use crate::lexicon::{DefinitionDataset, Vocabulary, WordFeatureTable};
use crate::model::Model;
use crate::tensor::TensorError;

/// Candidates considered by prior-knowledge filtering.
pub const PRIOR_WINDOW: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("cannot evaluate an empty test set")]
    EmptyTestSet,
    #[error("cannot compute metrics over zero ranks")]
    NoRanks,
    #[error("unknown POS tag {0:?}")]
    UnknownPos(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Number of words strictly ahead of `target`: higher score, or equal score
/// and lower index.
pub fn rank_of_target(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    scores
        .iter()
        .enumerate()
        .filter(|&(w, &s)| s > t || (s == t && w < target))
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub query_count: usize,
    pub median_rank: usize,
    pub acc1: f64,
    pub acc10: f64,
    pub acc100: f64,
    /// Population standard deviation of the ranks.
    pub rank_std: f64,
    /// 0-based rank of every query, in test-set order.
    pub ranks: Vec<usize>,
}

impl EvalReport {
    pub const TABLE_HEADER: [&'static str; 4] = ["median rank", "acc@1/10/100", "rank variance", "queries"];

    /// One row in the style of `median | .acc1/.acc10/.acc100 | variance`.
    pub fn table(&self, label: &str) -> String {
        let acc = format!(
            "{}/{}/{}",
            fmt_fraction(self.acc1),
            fmt_fraction(self.acc10),
            fmt_fraction(self.acc100)
        );
        let width = label.chars().count().max(16);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$} {:>12} {:>14} {:>14} {:>8}",
            "",
            Self::TABLE_HEADER[0],
            Self::TABLE_HEADER[1],
            Self::TABLE_HEADER[2],
            Self::TABLE_HEADER[3]
        );
        let _ = writeln!(
            out,
            "{:<width$} {:>12} {:>14} {:>14.0} {:>8}",
            label, self.median_rank, acc, self.rank_std, self.query_count
        );
        out
    }
}

fn fmt_fraction(x: f64) -> String {
    let s = format!("{x:.2}");
    match s.strip_prefix('0') {
        Some(rest) => rest.to_string(),
        None => s,
    }
}

/// acc@k is the fraction of ranks below k; the median is the lower median.
pub fn metrics(ranks: &[usize]) -> Result<EvalReport, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::NoRanks);
    }
    let n = ranks.len() as f64;
    let acc = |k: usize| ranks.iter().filter(|&&r| r < k).count() as f64 / n;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let mean = ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
    let var = ranks.iter().map(|&r| (r as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(EvalReport {
        query_count: ranks.len(),
        median_rank: sorted[(sorted.len() - 1) / 2],
        acc1: acc(1),
        acc10: acc(10),
        acc100: acc(100),
        rank_std: var.sqrt(),
        ranks: ranks.to_vec(),
    })
}

/// What is known about the target besides its description.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorKnowledge {
    pub pos: Option<String>,
    pub initial_letter: Option<char>,
    pub word_length: Option<usize>,
}

impl PriorKnowledge {
    pub fn is_empty(&self) -> bool {
        self.pos.is_none() && self.initial_letter.is_none() && self.word_length.is_none()
    }

    /// The prior of `kind` read off the target word itself, as in a
    /// crossword setting.
    pub fn of_target(kind: PriorKind, target: usize, vocab: &Vocabulary, table: &WordFeatureTable) -> Self {
        let word = vocab.word(target);
        match kind {
            PriorKind::Pos => Self {
                pos: table
                    .word(target)
                    .pos
                    .first()
                    .map(|&p| table.registry().pos[p].clone()),
                ..Self::default()
            },
            PriorKind::InitialLetter => Self {
                initial_letter: word.chars().next(),
                ..Self::default()
            },
            PriorKind::Length => Self {
                word_length: Some(word.chars().count()),
                ..Self::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    Pos,
    InitialLetter,
    Length,
}

impl std::str::FromStr for PriorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pos" => Ok(Self::Pos),
            "initial-letter" => Ok(Self::InitialLetter),
            "length" | "word-length" => Ok(Self::Length),
            other => Err(format!("unknown prior {other:?}; expected pos, initial-letter or length")),
        }
    }
}

fn fold(c: char) -> String {
    c.to_lowercase().collect()
}

/// Keeps, in order, the words that satisfy every set field of `pk`.
pub fn apply_prior_filter(
    ranked: &[usize],
    pk: &PriorKnowledge,
    table: &WordFeatureTable,
    vocab: &Vocabulary,
) -> Result<Vec<usize>, EvalError> {
    let pos = match &pk.pos {
        Some(name) => Some(
            table
                .registry()
                .pos_index(name)
                .ok_or_else(|| EvalError::UnknownPos(name.clone()))?,
        ),
        None => None,
    };
    let letter = pk.initial_letter.map(fold);
    Ok(ranked
        .iter()
        .copied()
        .filter(|&w| {
            let word = vocab.word(w);
            pos.map_or(true, |p| table.word(w).pos.contains(&p))
                && letter
                    .as_ref()
                    .map_or(true, |l| word.chars().next().map(fold).as_ref() == Some(l))
                && pk.word_length.map_or(true, |n| word.chars().count() == n)
        })
        .collect())
}

/// Rank of `target` after filtering the top-[`PRIOR_WINDOW`] words. A target
/// outside the filtered list gets the list length (worst) as its rank.
pub fn filtered_rank(
    scores: &[f64],
    target: usize,
    pk: &PriorKnowledge,
    table: &WordFeatureTable,
    vocab: &Vocabulary,
) -> Result<usize, EvalError> {
    let mut ranked = rank(scores);
    ranked.truncate(PRIOR_WINDOW);
    let kept = apply_prior_filter(&ranked, pk, table, vocab)?;
    Ok(kept.iter().position(|&w| w == target).unwrap_or(kept.len()))
}

/// Dropout-free evaluation of a test set, optionally under per-query prior
/// knowledge derived from each target.
pub fn evaluate(model: &Model, testset: &DefinitionDataset, prior: Option<PriorKind>) -> Result<EvalReport, EvalError> {
    if testset.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let lex = model.lexicon();
    let mut ranks = Vec::with_capacity(testset.len());
    for entry in &testset.entries {
        let scores = model.scores(&entry.tokens)?.fused;
        let r = match prior {
            None => rank_of_target(&scores, entry.target),
            Some(kind) => {
                let pk = PriorKnowledge::of_target(kind, entry.target, &lex.vocab, &lex.features);
                if pk.is_empty() {
                    rank_of_target(&scores, entry.target)
                } else {
                    filtered_rank(&scores, entry.target, &pk, &lex.features, &lex.vocab)?
                }
            }
        };
        ranks.push(r);
    }
    metrics(&ranks)
}
