use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{read_file, LexiconError};
use crate::tensor::Tensor;

/// Bijective word ↔ index mapping. Index `len()` is reserved for unknown
/// tokens and padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Result<Self, LexiconError> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(LexiconError::DuplicateWord(w.clone()));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Index used for out-of-vocabulary tokens and padding.
    pub fn unk(&self) -> usize {
        self.words.len()
    }
}

/// Fixed `|W| × d` pretrained embeddings. Never updated by training.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    matrix: Tensor,
}

impl EmbeddingMatrix {
    pub fn new(matrix: Tensor) -> Self {
        assert_eq!(matrix.shape().len(), 2, "embedding matrix must be rank 2");
        Self { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn row(&self, index: usize) -> &[f64] {
        self.matrix.row(index)
    }

    /// Embedding of a token; the unknown/padding index maps to zeros.
    pub fn lookup(&self, token: usize) -> Tensor {
        if token < self.rows() {
            Tensor::vector(self.row(token).to_vec())
        } else {
            Tensor::zeros(&[self.dim()])
        }
    }
}

/// SHA-256 over the words and the exact embedding bits.
pub(crate) fn lexicon_hash(vocab: &Vocabulary, embeddings: &EmbeddingMatrix) -> String {
    let mut h = Sha256::new();
    for w in vocab.words() {
        h.update(w.as_bytes());
        h.update([0u8]);
    }
    for v in embeddings.matrix().data() {
        h.update(v.to_le_bytes());
    }
    let mut out = String::with_capacity(64);
    for b in h.finalize() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn parse_embeddings(text: &str) -> Result<(Vocabulary, EmbeddingMatrix), LexiconError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| LexiconError::parse(1, "missing header"))?;
    let mut fields = header.split_whitespace();
    let mut header_num = |what: &str| -> Result<usize, LexiconError> {
        fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| LexiconError::parse(1, format!("header must be \"<count> <dim>\"; bad {what}")))
    };
    let count = header_num("count")?;
    let dim = header_num("dim")?;
    if dim == 0 {
        return Err(LexiconError::parse(1, "dimension must be positive"));
    }

    let mut words = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for (i, line) in lines {
        let line_no = i + 1;
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line").to_string();
        let before = data.len();
        for part in parts {
            let v: f64 = part
                .parse()
                .map_err(|_| LexiconError::parse(line_no, format!("invalid number {part:?}")))?;
            if !v.is_finite() {
                return Err(LexiconError::parse(line_no, "non-finite value"));
            }
            data.push(v);
        }
        let got = data.len() - before;
        if got != dim {
            return Err(LexiconError::parse(
                line_no,
                format!("expected {dim} values for {word:?}, found {got}"),
            ));
        }
        words.push(word);
    }
    if words.len() != count {
        return Err(LexiconError::parse(
            1,
            format!("header declares {count} words but file has {}", words.len()),
        ));
    }
    if words.is_empty() {
        return Err(LexiconError::parse(1, "no embeddings"));
    }
    let vocab = match Vocabulary::from_words(words) {
        Ok(v) => v,
        Err(LexiconError::DuplicateWord(w)) => {
            // report the line of the second occurrence
            let line = text
                .lines()
                .enumerate()
                .skip(1)
                .filter(|(_, l)| l.split_whitespace().next() == Some(w.as_str()))
                .nth(1)
                .map_or(0, |(i, _)| i + 1);
            return Err(LexiconError::parse(line, format!("duplicate word {w:?}")));
        }
        Err(e) => return Err(e),
    };
    let matrix = Tensor::matrix(vocab.len(), dim, data).expect("validated shape");
    Ok((vocab, EmbeddingMatrix::new(matrix)))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(Vocabulary, EmbeddingMatrix), LexiconError> {
    parse_embeddings(&read_file(path.as_ref())?)
}

/// Text format readable by [`parse_embeddings`]. Values use Rust's shortest
/// round-trip float formatting, so reloading is exact.
pub fn write_embeddings(vocab: &Vocabulary, embeddings: &EmbeddingMatrix) -> String {
    let mut out = format!("{} {}\n", vocab.len(), embeddings.dim());
    for (i, w) in vocab.words().iter().enumerate() {
        out.push_str(w);
        for v in embeddings.row(i) {
            let _ = write!(out, " {v:?}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let (vocab, emb) = parse_embeddings("2 3\ncat 1 0 0\ndog 0 1 0\n").unwrap();
        assert_eq!(vocab.len(), 2);
        assert_eq!(emb.dim(), 3);
        assert_eq!(vocab.index_of("dog"), Some(1));
        assert_eq!(emb.row(1), &[0.0, 1.0, 0.0]);
        assert_eq!(vocab.unk(), 2);
        assert_eq!(emb.lookup(vocab.unk()).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn short_row_reports_line_two() {
        let err = parse_embeddings("2 3\ncat 1 0\ndog 0 1 0\n").unwrap_err();
        assert!(matches!(err, LexiconError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_word_rejected() {
        let err = parse_embeddings("2 1\ncat 1\ncat 2\n").unwrap_err();
        assert!(matches!(err, LexiconError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn count_mismatch_and_bad_number() {
        assert!(parse_embeddings("3 1\na 1\nb 2\n").is_err());
        let err = parse_embeddings("1 2\na 1 x\n").unwrap_err();
        assert!(matches!(err, LexiconError::Parse { line: 2, .. }));
    }

    #[test]
    fn write_then_parse_is_exact() {
        let text = "3 2\na 0.1 -2.5e-7\nb 3 1e300\nc 0.30000000000000004 0\n";
        let (v, e) = parse_embeddings(text).unwrap();
        let (v2, e2) = parse_embeddings(&write_embeddings(&v, &e)).unwrap();
        assert_eq!(v, v2);
        assert_eq!(e, e2);
        assert_eq!(lexicon_hash(&v, &e), lexicon_hash(&v2, &e2));
    }
}
