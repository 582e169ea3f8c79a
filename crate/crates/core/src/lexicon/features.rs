use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use super::{read_file, LexiconError, Vocabulary};

/// Names of every POS tag, morpheme and sememe, plus the category count of
/// each hierarchy layer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    #[serde(default)]
    pub pos: Vec<String>,
    #[serde(default)]
    pub morphemes: Vec<String>,
    #[serde(default)]
    pub sememes: Vec<String>,
    #[serde(default)]
    pub category_layers: Vec<usize>,
}

impl FeatureRegistry {
    pub fn layer_count(&self) -> usize {
        self.category_layers.len()
    }

    pub fn pos_index(&self, name: &str) -> Option<usize> {
        self.pos.iter().position(|p| p.eq_ignore_ascii_case(name))
    }

    pub fn validate(&self) -> Result<(), LexiconError> {
        if let Some(k) = self.category_layers.iter().position(|&c| c == 0) {
            return Err(LexiconError::Registry(format!("category layer {} has no categories", k + 1)));
        }
        Ok(())
    }
}

/// Characteristics of one word. Sets are sorted and deduplicated; any of
/// them may be empty. `categories` has one slot per hierarchy layer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordFeatures {
    pub pos: Vec<usize>,
    pub morphemes: Vec<usize>,
    pub categories: Vec<Option<usize>>,
    pub sememes: Vec<usize>,
}

impl WordFeatures {
    /// Number of POS tags the word carries.
    pub fn pos_count(&self) -> usize {
        self.pos.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    word: String,
    #[serde(default)]
    pos: Vec<usize>,
    #[serde(default)]
    mor: Vec<usize>,
    #[serde(default)]
    cat: Vec<Option<usize>>,
    #[serde(default)]
    sem: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordFeatureTable {
    registry: FeatureRegistry,
    words: Vec<WordFeatures>,
    skipped: usize,
}

fn as_set(v: Vec<usize>) -> Vec<usize> {
    v.into_iter().collect::<BTreeSet<_>>().into_iter().collect()
}

impl WordFeatureTable {
    /// A table where every word of a vocabulary of `len` words has no features.
    pub fn empty(registry: FeatureRegistry, len: usize) -> Self {
        let k = registry.layer_count();
        let blank = WordFeatures {
            categories: vec![None; k],
            ..WordFeatures::default()
        };
        Self {
            registry,
            words: vec![blank; len],
            skipped: 0,
        }
    }

    /// Validates and stores the record for `index`.
    pub fn set(&mut self, index: usize, word: &str, features: WordFeatures) -> Result<(), LexiconError> {
        let reg = &self.registry;
        let check = |feature: &'static str, idxs: &[usize], size: usize| {
            match idxs.iter().find(|&&i| i >= size) {
                Some(&index) => Err(LexiconError::FeatureIndex {
                    word: word.to_string(),
                    feature,
                    index,
                    size,
                }),
                None => Ok(()),
            }
        };
        check("pos", &features.pos, reg.pos.len())?;
        check("mor", &features.morphemes, reg.morphemes.len())?;
        check("sem", &features.sememes, reg.sememes.len())?;
        if features.categories.len() != reg.layer_count() {
            return Err(LexiconError::FeatureIndex {
                word: word.to_string(),
                feature: "cat",
                index: features.categories.len(),
                size: reg.layer_count(),
            });
        }
        for (k, c) in features.categories.iter().enumerate() {
            if let Some(c) = c {
                check("cat", &[*c], reg.category_layers[k])?;
            }
        }
        self.words[index] = WordFeatures {
            pos: as_set(features.pos),
            morphemes: as_set(features.morphemes),
            sememes: as_set(features.sememes),
            categories: features.categories,
        };
        Ok(())
    }

    pub fn registry(&self) -> &FeatureRegistry {
        &self.registry
    }

    pub fn word(&self, index: usize) -> &WordFeatures {
        &self.words[index]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Records dropped at load time because their word was unknown.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// JSON-lines form: registry line, then one line per word with any
    /// feature set.
    pub fn to_jsonl(&self, vocab: &Vocabulary) -> String {
        let mut out = serde_json::to_string(&self.registry).expect("registry serializes");
        out.push('\n');
        for (i, f) in self.words.iter().enumerate() {
            let blank = f.pos.is_empty()
                && f.morphemes.is_empty()
                && f.sememes.is_empty()
                && f.categories.iter().all(Option::is_none);
            if blank {
                continue;
            }
            let rec = Record {
                word: vocab.word(i).to_string(),
                pos: f.pos.clone(),
                mor: f.morphemes.clone(),
                cat: f.categories.clone(),
                sem: f.sememes.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub(crate) fn content_hash(&self, vocab: &Vocabulary) -> String {
        let digest = Sha256::digest(self.to_jsonl(vocab).as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

pub fn parse_feature_table(text: &str, vocab: &Vocabulary) -> Result<WordFeatureTable, LexiconError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| LexiconError::parse(1, "missing registry line"))?;
    let registry: FeatureRegistry =
        serde_json::from_str(first).map_err(|e| LexiconError::parse(1, format!("registry: {e}")))?;
    registry.validate()?;

    let mut table = WordFeatureTable::empty(registry, vocab.len());
    let mut seen = vec![false; vocab.len()];
    for (i, line) in lines {
        let line_no = i + 1;
        let rec: Record =
            serde_json::from_str(line).map_err(|e| LexiconError::parse(line_no, e.to_string()))?;
        let Some(index) = vocab.index_of(&rec.word) else {
            warn!(word = %rec.word, line = line_no, "feature record for unknown word skipped");
            table.skipped += 1;
            continue;
        };
        if std::mem::replace(&mut seen[index], true) {
            return Err(LexiconError::parse(line_no, format!("second record for {:?}", rec.word)));
        }
        let features = WordFeatures {
            pos: rec.pos,
            morphemes: rec.mor,
            categories: rec.cat,
            sememes: rec.sem,
        };
        table.set(index, &rec.word, features)?;
    }
    Ok(table)
}

pub fn load_feature_table(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<WordFeatureTable, LexiconError> {
    parse_feature_table(&read_file(path.as_ref())?, vocab)
}
