use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use mcrd_core::lexicon::{load_dataset, write_embeddings, DefinitionDataset, Split};
use mcrd_core::query::checkpoint_id;
use mcrd_core::synth::{generate, pairs_to_tsv, SynthConfig};
use mcrd_core::trainer::{load_checkpoint, model_from_checkpoint, save_checkpoint, TrainError, Trainer};
use mcrd_core::{evaluate, DataPaths, EvalReport, Lexicon, PriorKind, QueryEngine, QueryRequest, QueryResponse, TrainConfig};

pub struct TrainArgs {
    pub config: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub resume: Option<PathBuf>,
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let mut config: TrainConfig =
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    let base = std::path::absolute(path.parent().unwrap_or(Path::new(".")))?;
    config.data = config.data.map(|d| d.resolve(&base));
    Ok(config)
}

fn data_paths(config: &TrainConfig) -> Result<&DataPaths> {
    config
        .data
        .as_ref()
        .context("config has no \"data\" section naming the embeddings, features and training files")
}

fn load_lexicon(paths: &DataPaths) -> Result<Arc<Lexicon>> {
    let lexicon = Lexicon::load(paths).context("cannot load lexicon")?;
    let skipped = lexicon.features.skipped();
    if skipped > 0 {
        tracing::warn!(skipped, "feature lines for unknown words were skipped");
    }
    Ok(Arc::new(lexicon))
}

fn load_split(path: &Path, lexicon: &Lexicon, split: Split) -> Result<DefinitionDataset> {
    let data = load_dataset(path, &lexicon.vocab, split).with_context(|| format!("cannot load {}", path.display()))?;
    if data.rejected > 0 {
        tracing::warn!(file = %path.display(), rejected = data.rejected, "dropped unusable definition lines");
    }
    Ok(data)
}

/// Trains (or resumes), writing the checkpoint and a JSON line per epoch
/// after every epoch. Returns the checkpoint path.
pub fn train(args: TrainArgs) -> Result<PathBuf> {
    let mut config = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let ckpt_path = args.checkpoint.unwrap_or_else(|| args.config.with_extension("mcrd"));
    let log_path = args.log.unwrap_or_else(|| ckpt_path.with_extension("log.jsonl"));

    let mut trainer = match &args.resume {
        Some(path) => {
            let mut ckpt = load_checkpoint(path)?;
            if let Some(n) = args.epochs {
                ckpt.config.epochs = n;
            }
            let lexicon = load_lexicon(data_paths(&ckpt.config)?)?;
            Trainer::from_checkpoint(ckpt, lexicon)?
        }
        None => {
            if let Some(n) = args.epochs {
                config.epochs = n;
            }
            let lexicon = load_lexicon(data_paths(&config)?)?;
            Trainer::new(config, lexicon)?
        }
    };
    let paths = data_paths(trainer.config())?.clone();
    let lexicon = trainer.model().lexicon().clone();
    let train_set = load_split(&paths.train, &lexicon, Split::Train)?;
    let seen = paths
        .seen
        .as_deref()
        .map(|p| load_split(p, &lexicon, Split::Seen))
        .transpose()?;
    tracing::info!(
        train = train_set.len(),
        seen = seen.as_ref().map_or(0, |s| s.len()),
        vocab = lexicon.vocab.len(),
        params = trainer.model().params().component_count(),
        "training"
    );

    let log_file = if args.resume.is_some() {
        File::options().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    };
    let mut log = BufWriter::new(log_file.with_context(|| format!("cannot open log {}", log_path.display()))?);
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset.into());
    }
    while trainer.epoch() < trainer.config().epochs {
        match trainer.run_epoch(&train_set, seen.as_ref()) {
            Ok(entry) => {
                serde_json::to_writer(&mut log, &entry)?;
                writeln!(log)?;
                log.flush()?;
                save_checkpoint(&trainer.checkpoint(), &ckpt_path)?;
                tracing::info!(
                    epoch = entry.epoch,
                    loss = entry.loss,
                    acc1 = entry.acc1,
                    acc10 = entry.acc10,
                    seconds = entry.seconds,
                    "epoch done"
                );
            }
            Err(TrainError::Diverged {
                epoch,
                reason,
                checkpoint,
            }) => {
                save_checkpoint(&checkpoint, &ckpt_path)?;
                bail!(
                    "training diverged in epoch {epoch} ({reason}); checkpoint from epoch {} kept at {}",
                    checkpoint.epoch,
                    ckpt_path.display()
                );
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(ckpt_path)
}

/// Loads a checkpoint and the lexicon files it names, refusing on any
/// integrity or hash mismatch.
pub fn load_engine(path: &Path) -> Result<QueryEngine> {
    let ckpt = load_checkpoint(path)?;
    let lexicon = load_lexicon(data_paths(&ckpt.config)?)?;
    let model = model_from_checkpoint(&ckpt, lexicon)?;
    Ok(QueryEngine::new(model, checkpoint_id(&ckpt)))
}

pub fn eval(checkpoint: &Path, testset: &Path, prior: Option<PriorKind>) -> Result<(String, EvalReport)> {
    let engine = load_engine(checkpoint)?;
    let data = load_split(testset, engine.model().lexicon(), Split::Seen)?;
    let report = evaluate(engine.model(), &data, prior)?;
    let mut label = testset
        .file_stem()
        .map_or_else(|| "test".into(), |s| s.to_string_lossy().into_owned());
    if let Some(p) = prior {
        label = format!("{label}+{}", serde_json::to_value(p)?.as_str().unwrap_or_default());
    }
    Ok((label, report))
}

pub fn query(checkpoint: &Path, request: &QueryRequest) -> Result<QueryResponse> {
    Ok(load_engine(checkpoint)?.query(request)?)
}

/// Plain-text rendering: one result per line with its channel breakdown.
pub fn render(response: &QueryResponse) -> String {
    let mut out = String::new();
    for r in &response.results {
        let parts: Vec<String> = r.contributions.iter().map(|(c, v)| format!("{c}={v:.3}")).collect();
        out.push_str(&format!("{:>4}  {:<20} {:>10.4}  {}\n", r.rank, r.word, r.score, parts.join(" ")));
    }
    out
}

/// Writes a synthetic lexicon, definition splits and a matching training
/// config into `dir`. Returns the config path.
pub fn toy(dir: &Path, synth: SynthConfig) -> Result<PathBuf> {
    let corpus = generate(&synth)?;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let lex = &corpus.lexicon;
    let files = [
        ("embeddings.txt", write_embeddings(&lex.vocab, &lex.embeddings)),
        ("features.jsonl", lex.features.to_jsonl(&lex.vocab)),
        ("train.tsv", pairs_to_tsv(&corpus.train_pairs)),
        ("seen.tsv", pairs_to_tsv(&corpus.seen_pairs)),
        ("unseen.tsv", pairs_to_tsv(&corpus.unseen_pairs)),
        ("synth.json", serde_json::to_string_pretty(&synth)?),
    ];
    for (name, text) in files {
        fs::write(dir.join(name), text).with_context(|| format!("cannot write {name}"))?;
    }
    let mut config = TrainConfig {
        epochs: 40,
        learning_rate: 0.01,
        seed: synth.seed,
        data: Some(DataPaths {
            embeddings: "embeddings.txt".into(),
            features: "features.jsonl".into(),
            train: "train.tsv".into(),
            seen: Some("seen.tsv".into()),
        }),
        ..TrainConfig::default()
    };
    config.encoder.input_dim = synth.dim;
    config.encoder.hidden_dim = synth.dim;
    let path = dir.join("toy.json");
    fs::write(&path, serde_json::to_string_pretty(&config)? + "\n")?;
    Ok(path)
}
