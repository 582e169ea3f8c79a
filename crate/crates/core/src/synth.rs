//! Deterministic synthetic corpora whose feature tables agree with their
//! definitions.
//!
//! Every target word is spelled from morpheme syllables and carries a few
//! sememes. Each morpheme and sememe has a cue word; a definition of a target
//! is its cue words in random order mixed with filler words. Target
//! embeddings lean towards the prototypes of their sememes, so the word
//! channel alone generalizes somewhat, and the characteristic channels carry
//! the rest of the signal.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lexicon::{
    parse_dataset, DefinitionDataset, EmbeddingMatrix, FeatureRegistry, Split, Vocabulary, WordFeatureTable,
    WordFeatures,
};
use crate::model::{Lexicon, ModelError};
use crate::tensor::Tensor;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const FILLERS: &[&str] = &[
    "a", "the", "of", "that", "which", "is", "to", "for", "with", "in", "very", "one", "or", "and", "thing",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub dim: usize,
    /// Targets that receive training definitions.
    pub train_targets: usize,
    pub definitions_per_target: usize,
    /// Held-out targets, one definition each, never seen in training.
    pub unseen_targets: usize,
    /// Training pairs copied into the seen split (all when larger).
    pub seen_pairs: usize,
    pub morphemes: usize,
    pub sememes: usize,
    pub pos: usize,
    pub category_layers: Vec<usize>,
    pub morphemes_per_word: usize,
    pub sememes_per_word: usize,
    /// Filler tokens added to each definition.
    pub fillers_per_definition: usize,
    /// Weight of the sememe prototypes in a target's embedding, against
    /// unit-scale noise.
    pub embedding_signal: f64,
    /// Noise on cue word embeddings around their prototype.
    pub cue_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 16,
            train_targets: 100,
            definitions_per_target: 2,
            unseen_targets: 20,
            seen_pairs: 200,
            morphemes: 20,
            sememes: 20,
            pos: 3,
            category_layers: vec![4, 8],
            morphemes_per_word: 2,
            sememes_per_word: 2,
            fillers_per_definition: 2,
            embedding_signal: 0.5,
            cue_noise: 0.3,
        }
    }
}

/// Pairs as `(target word, definition text)`.
pub type Pairs = Vec<(String, String)>;

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub lexicon: Arc<Lexicon>,
    pub train_pairs: Pairs,
    pub seen_pairs: Pairs,
    pub unseen_pairs: Pairs,
    pub train: DefinitionDataset,
    pub seen: DefinitionDataset,
    pub unseen: DefinitionDataset,
}

impl SynthCorpus {
    pub fn generate(config: &SynthConfig) -> Result<Self, ModelError> {
        generate(config)
    }
}

/// Definitions as `target<TAB>definition` lines.
pub fn pairs_to_tsv(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (t, d) in pairs {
        let _ = writeln!(out, "{t}\t{d}");
    }
    out
}

struct Namer {
    used: HashSet<String>,
}

impl Namer {
    fn new() -> Self {
        Self {
            used: FILLERS.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn fresh<R: Rng>(&mut self, rng: &mut R, syllables: usize) -> String {
        loop {
            let w: String = (0..syllables).map(|_| syllable(rng)).collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn claim(&mut self, w: &str) -> bool {
        self.used.insert(w.to_string())
    }
}

fn syllable<R: Rng>(rng: &mut R) -> String {
    let c = *CONSONANTS.choose(rng).expect("nonempty") as char;
    let v = *VOWELS.choose(rng).expect("nonempty") as char;
    format!("{c}{v}")
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

fn unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    x.iter_mut().for_each(|v| *v /= n);
    x
}

struct Target {
    word: String,
    morphemes: Vec<usize>,
    sememes: Vec<usize>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus, ModelError> {
    assert!(config.morphemes_per_word >= 1 && config.sememes_per_word >= 1);
    assert!(config.sememes_per_word <= config.sememes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut namer = Namer::new();
    let d = config.dim;

    let morpheme_names: Vec<String> = (0..config.morphemes).map(|_| namer.fresh(&mut rng, 1)).collect();
    let sememe_names: Vec<String> = (0..config.sememes).map(|i| format!("sememe{i}")).collect();
    let mor_cues: Vec<String> = (0..config.morphemes).map(|_| namer.fresh(&mut rng, 3)).collect();
    let sem_cues: Vec<String> = (0..config.sememes).map(|_| namer.fresh(&mut rng, 3)).collect();

    let total = config.train_targets + config.unseen_targets;
    let mut targets = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while targets.len() < total {
        attempts += 1;
        assert!(attempts < 1000 * total.max(1), "not enough morpheme combinations for {total} targets");
        let morphemes: Vec<usize> = (0..config.morphemes_per_word)
            .map(|_| rng.random_range(0..config.morphemes))
            .collect();
        let word: String = morphemes.iter().map(|&m| morpheme_names[m].as_str()).collect();
        if !namer.claim(&word) {
            continue;
        }
        let mut sememes: Vec<usize> = (0..config.sememes).collect();
        sememes.shuffle(&mut rng);
        sememes.truncate(config.sememes_per_word);
        targets.push(Target {
            word,
            morphemes,
            sememes,
        });
    }

    let mut words: Vec<String> = targets.iter().map(|t| t.word.clone()).collect();
    words.extend(mor_cues.iter().cloned());
    words.extend(sem_cues.iter().cloned());
    words.extend(FILLERS.iter().map(|s| s.to_string()));

    let mor_protos: Vec<Vec<f64>> = (0..config.morphemes).map(|_| unit(&mut rng, d)).collect();
    let sem_protos: Vec<Vec<f64>> = (0..config.sememes).map(|_| unit(&mut rng, d)).collect();
    let mut emb = Vec::with_capacity(words.len() * d);
    for t in &targets {
        let noise = unit(&mut rng, d);
        for j in 0..d {
            let signal: f64 = t.sememes.iter().map(|&s| sem_protos[s][j]).sum();
            emb.push(config.embedding_signal * signal + noise[j]);
        }
    }
    for proto in mor_protos.iter().chain(&sem_protos) {
        let noise = unit(&mut rng, d);
        emb.extend((0..d).map(|j| proto[j] + config.cue_noise * noise[j]));
    }
    for _ in FILLERS {
        emb.extend(unit(&mut rng, d));
    }

    let vocab = Vocabulary::from_words(words)?;
    let embeddings = EmbeddingMatrix::new(Tensor::matrix(vocab.len(), d, emb)?);

    let registry = FeatureRegistry {
        pos: (0..config.pos).map(|i| format!("pos{i}")).collect(),
        morphemes: morpheme_names,
        sememes: sememe_names,
        category_layers: config.category_layers.clone(),
    };
    registry.validate()?;
    let mut table = WordFeatureTable::empty(registry, vocab.len());
    for (i, t) in targets.iter().enumerate() {
        let first = t.sememes[0];
        let categories = config
            .category_layers
            .iter()
            .enumerate()
            .map(|(k, &c)| Some((first * (k + 1) + t.sememes.get(k).copied().unwrap_or(0)) % c))
            .collect();
        let pos = if config.pos > 0 { vec![first % config.pos] } else { Vec::new() };
        table.set(
            i,
            &t.word,
            WordFeatures {
                pos,
                morphemes: t.morphemes.clone(),
                categories,
                sememes: t.sememes.clone(),
            },
        )?;
    }

    let definition = |t: &Target, rng: &mut ChaCha8Rng| -> String {
        let mut toks: Vec<&str> = t.morphemes.iter().map(|&m| mor_cues[m].as_str()).collect();
        toks.extend(t.sememes.iter().map(|&s| sem_cues[s].as_str()));
        for _ in 0..config.fillers_per_definition {
            toks.push(FILLERS.choose(rng).expect("nonempty"));
        }
        toks.shuffle(rng);
        toks.join(" ")
    };

    let mut train_pairs = Vec::new();
    for _ in 0..config.definitions_per_target {
        for t in &targets[..config.train_targets] {
            train_pairs.push((t.word.clone(), definition(t, &mut rng)));
        }
    }
    let unseen_pairs: Pairs = targets[config.train_targets..]
        .iter()
        .map(|t| (t.word.clone(), definition(t, &mut rng)))
        .collect();
    let seen_pairs: Pairs = train_pairs.iter().take(config.seen_pairs).cloned().collect();

    let lexicon = Arc::new(Lexicon::new(vocab, embeddings, table)?);
    let parse = |pairs: &Pairs, split| parse_dataset(&pairs_to_tsv(pairs), &lexicon.vocab, split);
    let train = parse(&train_pairs, Split::Train)?;
    let seen = parse(&seen_pairs, Split::Seen)?;
    let unseen = parse(&unseen_pairs, Split::Unseen)?;
    Ok(SynthCorpus {
        config: config.clone(),
        lexicon,
        train_pairs,
        seen_pairs,
        unseen_pairs,
        train,
        seen,
        unseen,
    })
}

/// A lexicon of random embeddings and random feature sets, for gradient and
/// invariant tests that do not need meaningful definitions.
pub fn random_lexicon(
    seed: u64,
    words: usize,
    dim: usize,
    registry: FeatureRegistry,
) -> Result<Arc<Lexicon>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut namer = Namer::new();
    let names: Vec<String> = (0..words).map(|_| namer.fresh(&mut rng, 3)).collect();
    let vocab = Vocabulary::from_words(names)?;
    let data = (0..words * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let embeddings = EmbeddingMatrix::new(Tensor::matrix(words, dim, data)?);
    let mut table = WordFeatureTable::empty(registry.clone(), words);
    let pick = |rng: &mut ChaCha8Rng, n: usize, k: usize| -> Vec<usize> {
        if n == 0 {
            return Vec::new();
        }
        (0..rng.random_range(0..=k)).map(|_| rng.random_range(0..n)).collect()
    };
    for i in 0..words {
        let features = WordFeatures {
            pos: pick(&mut rng, registry.pos.len(), 2),
            morphemes: pick(&mut rng, registry.morphemes.len(), 3),
            sememes: pick(&mut rng, registry.sememes.len(), 3),
            categories: registry
                .category_layers
                .iter()
                .map(|&c| rng.random_bool(0.8).then(|| rng.random_range(0..c)))
                .collect(),
        };
        let word = vocab.word(i).to_string();
        table.set(i, &word, features)?;
    }
    Ok(Arc::new(Lexicon::new(vocab, embeddings, table)?))
}

/// Registry with generated names of the given sizes.
pub fn registry(pos: usize, morphemes: usize, sememes: usize, category_layers: Vec<usize>) -> FeatureRegistry {
    FeatureRegistry {
        pos: (0..pos).map(|i| format!("pos{i}")).collect(),
        morphemes: (0..morphemes).map(|i| format!("mor{i}")).collect(),
        sememes: (0..sememes).map(|i| format!("sem{i}")).collect(),
        category_layers,
    }
}
