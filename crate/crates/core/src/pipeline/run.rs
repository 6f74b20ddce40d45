//! In-memory experiment stages and the on-disk layout of their artifacts.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::{BestMetric, ExperimentConfig, Split};
use super::prepare::{prepare_corpus, CorpusStats, PreparedCorpus, SourceEncoder};
use crate::data::{
    generate_synthetic_corpus, ingest_alignment, read_records, write_alignment, write_records, AlignedUtterance,
    BinBoundaries, BpeModel, FactoredExample, InterleavedExample, Lexicon, Vocabulary,
};
use crate::decode::{beam_decode, DecodeOptions, TranslationRecord, TRANSLATION_FORMAT};
use crate::error::{Error, Result};
use crate::eval::{evaluate_records, EvalReport, ReferenceRecord, REFERENCE_FORMAT};
use crate::model::{evaluate_loss, train, Model, TrainOutcome, TrainingPair};

pub const FACTORED_FORMAT: &str = "factored";
pub const INTERLEAVED_FORMAT: &str = "interleaved";

/// Raw training and held-out utterances, and the lexicon if any.
pub fn load_utterances(cfg: &ExperimentConfig) -> Result<RawCorpus> {
    match &cfg.data.alignment {
        Some(path) => {
            let f = File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
            let mut train = ingest_alignment(BufReader::new(f), &cfg.timing())
                .map_err(|e| e.context(path.display().to_string()))?;
            let k = cfg.data.heldout_sentences;
            if k >= train.len() {
                return Err(Error::Config(format!("{k} held-out records leave nothing to train on")));
            }
            let heldout = train.split_off(train.len() - k);
            Ok(RawCorpus {
                train,
                heldout,
                lexicon: None,
            })
        }
        None => {
            let mut syn = cfg.synthetic.clone();
            syn.n_sentences += cfg.data.heldout_sentences;
            syn.timing_variants += cfg.data.heldout_variants;
            let corpus = generate_synthetic_corpus(&syn, &cfg.rng("synthetic"))?;
            let (n, v) = (cfg.synthetic.n_sentences, cfg.synthetic.timing_variants);
            let mut raw = RawCorpus {
                train: Vec::new(),
                heldout: Vec::new(),
                lexicon: Some(corpus.lexicon),
            };
            let mut extra = Vec::new();
            for (u, (s, var)) in corpus.utterances.into_iter().zip(corpus.origins) {
                match (s < n, var < v) {
                    (true, true) => raw.train.push(u),
                    (true, false) => raw.heldout.push(u),
                    (false, _) if var == 0 => extra.push(u),
                    _ => {}
                }
            }
            raw.heldout.extend(extra);
            Ok(raw)
        }
    }
}

pub struct RawCorpus {
    pub train: Vec<AlignedUtterance>,
    pub heldout: Vec<AlignedUtterance>,
    pub lexicon: Option<Lexicon>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedCorpus> {
    let raw = load_utterances(cfg)?;
    prepare_corpus(
        &raw.train,
        &raw.heldout,
        raw.lexicon,
        &cfg.prepare_options(),
        &cfg.rng("prepare"),
    )
}

impl PreparedCorpus {
    pub fn references(&self, split: Split) -> &[ReferenceRecord] {
        match split {
            Split::Train => &self.train_references,
            Split::Heldout => &self.heldout_references,
        }
    }
}

/// Decodes every reference sentence of a split, conditioning on its
/// reference segment durations.
pub fn translate_references(
    model: &Model,
    corpus: &PreparedCorpus,
    refs: &[ReferenceRecord],
    opts: &DecodeOptions,
) -> Result<Vec<TranslationRecord>> {
    refs.iter()
        .map(|r| {
            let src = corpus.source.encode(&r.source, &r.segments)?;
            let hyp =
                beam_decode(model, &src, &r.segments, opts).map_err(|e| e.context(format!("sentence {}", r.index)))?;
            let tokens = corpus
                .target_vocab
                .decode(&hyp.rows.iter().map(|r| r.0).collect::<Vec<_>>())?;
            let text = super::prepare::target_text(&tokens, corpus.lexicon.as_ref());
            TranslationRecord::from_hypothesis(r.index, &r.source, &r.segments, &hyp, &corpus.target_vocab, text)
        })
        .collect()
}

pub fn build_model(cfg: &ExperimentConfig, corpus: &PreparedCorpus) -> Result<Model> {
    Model::new(cfg.model_config(corpus.source.vocab.len(), corpus.target_vocab.len(), &corpus.stats)?)
}

pub fn training_pairs(model: &Model, examples: &[FactoredExample]) -> Result<Vec<TrainingPair>> {
    examples.iter().map(|e| TrainingPair::new(e, model.config())).collect()
}

/// Trains a fresh model and selects the best epoch by the configured metric.
pub fn train_model(
    cfg: &ExperimentConfig,
    corpus: &PreparedCorpus,
    mut on_epoch: Option<&mut dyn FnMut(&Model, &crate::model::EpochStats) -> Result<()>>,
) -> Result<TrainOutcome> {
    let mut model = build_model(cfg, corpus)?;
    let pairs = training_pairs(&model, &corpus.train)?;
    let refs = corpus.references(cfg.run.validation_split);
    if refs.is_empty() && cfg.run.best_metric != BestMetric::Last {
        return Err(Error::Config(format!(
            "validation split {} is empty",
            cfg.run.validation_split.name()
        )));
    }
    let opts = cfg.decode_options(&corpus.stats);
    let valid_pairs = match (cfg.run.best_metric, cfg.run.validation_split) {
        (BestMetric::Loss, Split::Train) => pairs.clone(),
        (BestMetric::Loss, Split::Heldout) => {
            return Err(Error::Config("loss-based selection needs the train split".into()));
        }
        _ => Vec::new(),
    };
    let mut score = |m: &Model| -> Result<f64> {
        if cfg.run.best_metric == BestMetric::Loss {
            return Ok(-evaluate_loss(m, &valid_pairs)?);
        }
        let hyps = translate_references(m, corpus, refs, &opts)?;
        let r = evaluate_records(&hyps, refs)?;
        Ok(match cfg.run.best_metric {
            BestMetric::Bleu => r.bleu,
            BestMetric::Overlap => r.speech_overlap,
            _ => r.exact_match,
        })
    };
    let validate: Option<&mut dyn FnMut(&Model) -> Result<f64>> = match cfg.run.best_metric {
        BestMetric::Last => None,
        _ => Some(&mut score),
    };
    train(&mut model, &pairs, &cfg.train_config(), validate, on_epoch.take())
}

/// File locations of every stage under the work directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn stage(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn prepared(&self, file: &str) -> PathBuf {
        self.stage("prepare").join(file)
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.stage("train").join("best.ckpt")
    }

    pub fn translations(&self, split: Split) -> PathBuf {
        self.stage("translate")
            .join(format!("{}.translations.jsonl", split.name()))
    }

    pub fn references(&self, split: Split) -> PathBuf {
        self.prepared(&format!("{}.references.jsonl", split.name()))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path, producer: &'static str) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer,
        });
    }
    let f = File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    Ok(BufReader::new(f))
}

fn ctx<T>(r: Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| e.context(path.display().to_string()))
}

pub const PREPARE_FILES: &[&str] = &[
    "utterances.txt",
    "lexicon.tsv",
    "bpe.txt",
    "bins.txt",
    "source.vocab",
    "target.vocab",
    "interleaved.vocab",
    "stats.json",
    "encoder.json",
    "train.factored.jsonl",
    "train.interleaved.jsonl",
    "train.references.jsonl",
    "heldout.references.jsonl",
];

#[derive(serde::Serialize, serde::Deserialize)]
struct EncoderMeta {
    source_tags: bool,
}

pub fn write_prepared(
    layout: &Layout,
    cfg: &ExperimentConfig,
    utts: &[AlignedUtterance],
    c: &PreparedCorpus,
) -> Result<()> {
    let p = |f: &str| layout.prepared(f);
    write_alignment(create(&p("utterances.txt"))?, utts, &cfg.timing())?;
    if let Some(l) = &c.lexicon {
        l.write(create(&p("lexicon.tsv"))?)?;
    }
    c.source.bpe.write(create(&p("bpe.txt"))?)?;
    c.source.bins.write(create(&p("bins.txt"))?)?;
    c.source.vocab.write(create(&p("source.vocab"))?)?;
    c.target_vocab.write(create(&p("target.vocab"))?)?;
    c.interleaved_vocab.write(create(&p("interleaved.vocab"))?)?;
    let mut w = create(&p("stats.json"))?;
    writeln!(w, "{}", serde_json::to_string_pretty(&c.stats)?)?;
    let mut w = create(&p("encoder.json"))?;
    writeln!(
        w,
        "{}",
        serde_json::to_string(&EncoderMeta {
            source_tags: c.source.source_tags
        })?
    )?;
    write_records(create(&p("train.factored.jsonl"))?, FACTORED_FORMAT, &c.train)?;
    write_records(
        create(&p("train.interleaved.jsonl"))?,
        INTERLEAVED_FORMAT,
        &c.train_interleaved,
    )?;
    write_records(
        create(&layout.references(Split::Train))?,
        REFERENCE_FORMAT,
        &c.train_references,
    )?;
    write_records(
        create(&layout.references(Split::Heldout))?,
        REFERENCE_FORMAT,
        &c.heldout_references,
    )?;
    Ok(())
}

fn records<T: serde::de::DeserializeOwned>(layout: &Layout, file: &str, format: &str) -> Result<Vec<T>> {
    let path = layout.prepared(file);
    ctx(read_records(open(&path, "prepare")?, format), &path)
}

pub fn read_prepared(layout: &Layout) -> Result<PreparedCorpus> {
    const BY: &str = "prepare";
    let p = |f: &str| layout.prepared(f);
    let vocab = |f: &str| -> Result<Vocabulary> { ctx(Vocabulary::read(open(&p(f), BY)?), &p(f)) };
    let lexicon = if p("lexicon.tsv").exists() {
        Some(ctx(Lexicon::read(open(&p("lexicon.tsv"), BY)?), &p("lexicon.tsv"))?)
    } else {
        None
    };
    let stats: CorpusStats = ctx(
        serde_json::from_reader(open(&p("stats.json"), BY)?).map_err(Error::from),
        &p("stats.json"),
    )?;
    let meta: EncoderMeta = ctx(
        serde_json::from_reader(open(&p("encoder.json"), BY)?).map_err(Error::from),
        &p("encoder.json"),
    )?;
    let train: Vec<FactoredExample> = records(layout, "train.factored.jsonl", FACTORED_FORMAT)?;
    let train_interleaved: Vec<InterleavedExample> = records(layout, "train.interleaved.jsonl", INTERLEAVED_FORMAT)?;
    let train_references: Vec<ReferenceRecord> = records(layout, "train.references.jsonl", REFERENCE_FORMAT)?;
    let heldout_references: Vec<ReferenceRecord> = records(layout, "heldout.references.jsonl", REFERENCE_FORMAT)?;
    Ok(PreparedCorpus {
        source: SourceEncoder {
            bpe: ctx(BpeModel::read(open(&p("bpe.txt"), BY)?), &p("bpe.txt"))?,
            vocab: vocab("source.vocab")?,
            bins: ctx(BinBoundaries::read(open(&p("bins.txt"), BY)?), &p("bins.txt"))?,
            source_tags: meta.source_tags,
        },
        lexicon,
        target_vocab: vocab("target.vocab")?,
        interleaved_vocab: vocab("interleaved.vocab")?,
        train,
        train_interleaved,
        train_references,
        heldout_references,
        stats,
    })
}

pub fn write_translations(path: &Path, records: &[TranslationRecord]) -> Result<()> {
    write_records(create(path)?, TRANSLATION_FORMAT, records)?;
    let text = path.with_extension("").with_extension("interleaved.txt");
    let mut w = create(&text)?;
    for r in records {
        writeln!(w, "{}", r.interleaved())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(layout: &Layout) -> Result<Model> {
    let path = layout.best_checkpoint();
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path,
            producer: "train",
        });
    }
    ctx(Model::load(&path), &path)
}

pub fn write_report(dir: &Path, name: &str, label: &str, report: &EvalReport) -> Result<()> {
    let mut w = create(&dir.join(format!("{name}.report.jsonl")))?;
    writeln!(w, "{}", report.summary_json()?)?;
    for d in &report.diagnostics {
        writeln!(w, "{}", serde_json::to_string(d)?)?;
    }
    w.flush()?;
    let mut t = create(&dir.join(format!("{name}.report.txt")))?;
    crate::eval::render_table(&mut t, "run", &[(label.to_string(), report)])?;
    t.flush()?;
    Ok(())
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).context(dir.display().to_string()))
}
