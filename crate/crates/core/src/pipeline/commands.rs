//! File-based pipeline stages behind the command-line subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, Split};
use super::prepare::prepare_corpus;
use super::run::{
    ensure_dir, load_model, load_utterances, read_prepared, train_model, translate_references, write_prepared,
    write_report, write_translations, Layout, PREPARE_FILES,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, EvalReport};
use crate::model::EpochStats;

/// Refuses to touch existing outputs unless `force` is set, in which case
/// exactly those files are removed.
pub(crate) fn claim_outputs(paths: &[PathBuf], force: bool) -> Result<()> {
    for p in paths {
        if p.exists() {
            if !force {
                return Err(Error::WouldOverwrite(p.clone()));
            }
            fs::remove_file(p).map_err(|e| Error::from(e).context(p.display().to_string()))?;
        }
    }
    Ok(())
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let path = dir.join("config.toml");
    let mut f = fs::File::create(&path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    f.write_all(cfg.to_toml()?.as_bytes())?;
    Ok(())
}

/// Generates or ingests the corpus and writes every prepared artifact.
pub fn cmd_prepare(cfg: &ExperimentConfig, force: bool) -> Result<PathBuf> {
    let layout = Layout::new(&cfg.work_dir);
    let dir = layout.stage("prepare");
    let files: Vec<PathBuf> = PREPARE_FILES.iter().map(|f| dir.join(f)).collect();
    claim_outputs(&files, force)?;
    ensure_dir(&dir)?;
    let raw = load_utterances(cfg)?;
    let corpus = prepare_corpus(
        &raw.train,
        &raw.heldout,
        raw.lexicon.clone(),
        &cfg.prepare_options(),
        &cfg.rng("prepare"),
    )?;
    let all: Vec<_> = raw.train.iter().chain(&raw.heldout).cloned().collect();
    write_prepared(&layout, cfg, &all, &corpus)?;
    write_config(&dir, cfg)?;
    Ok(dir)
}

fn epoch_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("epoch-") && name.ends_with(".ckpt") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Trains on the prepared corpus; writes the best checkpoint, optional
/// periodic checkpoints and the loss history.
pub fn cmd_train(cfg: &ExperimentConfig, force: bool) -> Result<PathBuf> {
    let layout = Layout::new(&cfg.work_dir);
    let corpus = read_prepared(&layout)?;
    let dir = layout.stage("train");
    let mut files = vec![layout.best_checkpoint(), dir.join("history.jsonl")];
    files.extend(epoch_checkpoints(&dir)?);
    claim_outputs(&files, force)?;
    ensure_dir(&dir)?;
    let every = cfg.run.checkpoint_every;
    let mut on_epoch = |m: &crate::model::Model, s: &EpochStats| -> Result<()> {
        if every > 0 && s.epoch % every == 0 {
            m.save(&dir.join(format!("epoch-{:05}.ckpt", s.epoch)))?;
        }
        Ok(())
    };
    let outcome = train_model(cfg, &corpus, Some(&mut on_epoch))?;
    outcome.best.save(&layout.best_checkpoint())?;
    let mut h = std::io::BufWriter::new(fs::File::create(dir.join("history.jsonl"))?);
    for s in &outcome.history {
        writeln!(h, "{}", serde_json::to_string(s)?)?;
    }
    writeln!(
        h,
        "{}",
        serde_json::json!({"best_epoch": outcome.best_epoch, "best_score": outcome.best_score})
    )?;
    h.flush()?;
    write_config(&dir, cfg)?;
    Ok(layout.best_checkpoint())
}

/// Decodes the reference sentences of a split with the best checkpoint.
pub fn cmd_translate(cfg: &ExperimentConfig, split: Split, force: bool) -> Result<PathBuf> {
    let layout = Layout::new(&cfg.work_dir);
    let corpus = read_prepared(&layout)?;
    let model = load_model(&layout)?;
    let out = layout.translations(split);
    let text = out.with_extension("").with_extension("interleaved.txt");
    claim_outputs(&[out.clone(), text], force)?;
    ensure_dir(&layout.stage("translate"))?;
    let refs = corpus.references(split);
    if refs.is_empty() {
        return Err(Error::Config(format!("split {} has no sentences", split.name())));
    }
    let records = translate_references(&model, &corpus, refs, &cfg.decode_options(&corpus.stats))?;
    write_translations(&out, &records)?;
    write_config(&layout.stage("translate"), cfg)?;
    Ok(out)
}

/// Scores the translations of a split against its references.
pub fn cmd_evaluate(cfg: &ExperimentConfig, split: Split, force: bool) -> Result<EvalReport> {
    let layout = Layout::new(&cfg.work_dir);
    let hyps = layout.translations(split);
    if !hyps.exists() {
        return Err(Error::MissingArtifact {
            path: hyps,
            producer: "translate",
        });
    }
    let refs = layout.references(split);
    if !refs.exists() {
        return Err(Error::MissingArtifact {
            path: refs,
            producer: "prepare",
        });
    }
    let dir = layout.stage("evaluate");
    let name = split.name();
    claim_outputs(
        &[
            dir.join(format!("{name}.report.jsonl")),
            dir.join(format!("{name}.report.txt")),
        ],
        force,
    )?;
    ensure_dir(&dir)?;
    let report = evaluate_run(&hyps, &refs)?;
    write_report(&dir, name, name, &report)?;
    write_config(&dir, cfg)?;
    Ok(report)
}
