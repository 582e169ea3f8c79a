use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{read_file, LexiconError, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Seen,
    Unseen,
    Description,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub target: usize,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefinitionDataset {
    pub split: Split,
    pub entries: Vec<Entry>,
    /// Lines dropped because the target was unknown or the definition empty.
    pub rejected: usize,
}

impl DefinitionDataset {
    pub fn new(split: Split, entries: Vec<Entry>) -> Self {
        Self {
            split,
            entries,
            rejected: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Lowercases, splits on whitespace and trims ASCII punctuation from each
/// token. Unknown tokens map to `vocab.unk()`.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<Vec<usize>, LexiconError> {
    let tokens: Vec<usize> = text
        .split_whitespace()
        .map(|raw| raw.to_lowercase())
        .filter_map(|lower| {
            let trimmed = lower.trim_matches(|c: char| c.is_ascii_punctuation());
            (!trimmed.is_empty()).then(|| vocab.index_of(trimmed).unwrap_or(vocab.unk()))
        })
        .collect();
    if tokens.is_empty() {
        return Err(LexiconError::EmptyQuery);
    }
    Ok(tokens)
}

/// Parses `word<TAB>definition` lines.
pub fn parse_dataset(text: &str, vocab: &Vocabulary, split: Split) -> Result<DefinitionDataset, LexiconError> {
    let mut entries = Vec::new();
    let mut rejected = 0;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (word, definition) = line
            .split_once('\t')
            .ok_or_else(|| LexiconError::parse(line_no, "expected word<TAB>definition"))?;
        let Some(target) = vocab.index_of(word.trim()) else {
            warn!(word = word.trim(), line = line_no, "target not in vocabulary; entry rejected");
            rejected += 1;
            continue;
        };
        match tokenize(definition, vocab) {
            Ok(tokens) => entries.push(Entry { target, tokens }),
            Err(_) => {
                warn!(line = line_no, "empty definition; entry rejected");
                rejected += 1;
            }
        }
    }
    if rejected > 0 {
        warn!(rejected, kept = entries.len(), "dataset entries rejected");
    }
    Ok(DefinitionDataset {
        split,
        entries,
        rejected,
    })
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    split: Split,
) -> Result<DefinitionDataset, LexiconError> {
    parse_dataset(&read_file(path.as_ref())?, vocab, split)
}
