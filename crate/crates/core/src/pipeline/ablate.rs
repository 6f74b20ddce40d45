//! Ablation sweeps: train and evaluate one configuration per grid cell.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::commands::claim_outputs;
use super::config::{validate_counters, ExperimentConfig};
use super::run::{ensure_dir, prepare, train_model, translate_references};
use crate::error::{Error, Result};
use crate::eval::{evaluate_records, render_table, EvalReport};
use crate::model::{FactorRole, FeedbackMode};

/// One point of the ablation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub counters: Vec<FactorRole>,
    pub source_tags: bool,
    pub noise_sigma: f64,
    pub feedback: FeedbackMode,
    pub factor_embedding_dim: Option<usize>,
    pub counter_loss_weight: f64,
}

impl AblationCell {
    pub fn label(&self) -> String {
        let counters: Vec<&str> = self.counters.iter().map(|r| r.name()).collect();
        let mut s = format!(
            "counters={} tags={} sigma={} feedback={}",
            if counters.is_empty() {
                "-".to_string()
            } else {
                counters.join("+")
            },
            if self.source_tags { "yes" } else { "no" },
            self.noise_sigma,
            match self.feedback {
                FeedbackMode::ExternallyComputed => "external",
                FeedbackMode::ModelPrediction => "model",
            }
        );
        if let Some(d) = self.factor_embedding_dim {
            s.push_str(&format!(" dim={d}"));
        }
        s.push_str(&format!(" cw={}", self.counter_loss_weight));
        s
    }

    /// The experiment configuration this cell trains and decodes with.
    pub fn apply(&self, base: &ExperimentConfig) -> Result<ExperimentConfig> {
        validate_counters(&self.counters)?;
        let mut c = base.clone();
        c.model.counters = self.counters.clone();
        c.data.source_tags = self.source_tags;
        c.data.noise_sigma = self.noise_sigma;
        c.decode.feedback = Some(self.feedback);
        if !self.counters.contains(&FactorRole::Pause) {
            c.decode.mask_pauses = false;
        }
        if let Some(d) = self.factor_embedding_dim {
            c.model.dur_embedding_dim = d;
            c.model.total_embedding_dim = d;
            c.model.segment_embedding_dim = d;
            c.model.pause_embedding_dim = (d / 2).max(1);
        }
        c.model.counter_loss_weight = self.counter_loss_weight;
        c.validate()?;
        Ok(c)
    }

    /// Configuration key of the trained model; cells differing only in
    /// decode feedback share one training run.
    fn training_key(&self, base: &ExperimentConfig) -> Result<String> {
        let mut c = self.apply(base)?;
        c.decode = base.decode.clone();
        c.to_toml()
    }
}

/// Cartesian product of the configured axes; empty axes take the base value.
pub fn expand_grid(cfg: &ExperimentConfig) -> Result<Vec<AblationCell>> {
    let g = &cfg.grid;
    let or = |v: &[FactorRole]| vec![v.to_vec()];
    let counters = if g.grid_counters.is_empty() {
        or(&cfg.model.counters)
    } else {
        g.grid_counters.clone()
    };
    for c in &counters {
        validate_counters(c)?;
    }
    let tags = if g.grid_source_tags.is_empty() {
        vec![cfg.data.source_tags]
    } else {
        g.grid_source_tags.clone()
    };
    let noise = if g.grid_noise_sigma.is_empty() {
        vec![cfg.data.noise_sigma]
    } else {
        g.grid_noise_sigma.clone()
    };
    let base_feedback = cfg.decode.feedback.unwrap_or(cfg.model.counter_feedback);
    let feedback = if g.grid_feedback.is_empty() {
        vec![base_feedback]
    } else {
        g.grid_feedback.clone()
    };
    let dims: Vec<Option<usize>> = if g.grid_factor_embedding_dim.is_empty() {
        vec![None]
    } else {
        g.grid_factor_embedding_dim.iter().map(|&d| Some(d)).collect()
    };
    let weights = if g.grid_counter_loss_weight.is_empty() {
        vec![cfg.model.counter_loss_weight]
    } else {
        g.grid_counter_loss_weight.clone()
    };
    let mut cells = Vec::new();
    for c in &counters {
        for &t in &tags {
            for &n in &noise {
                for &d in &dims {
                    for &w in &weights {
                        for &f in &feedback {
                            cells.push(AblationCell {
                                counters: c.clone(),
                                source_tags: t,
                                noise_sigma: n,
                                feedback: f,
                                factor_embedding_dim: d,
                                counter_loss_weight: w,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub index: usize,
    pub label: String,
    pub cell: AblationCell,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

pub struct AblationOutcome {
    pub cells: Vec<CellResult>,
    pub dir: PathBuf,
}

impl AblationOutcome {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

fn run_group(base: &ExperimentConfig, cells: &[(usize, AblationCell)], dir: &Path) -> Result<Vec<(usize, EvalReport)>> {
    let cfg = cells[0].1.apply(base)?;
    let corpus = prepare(&cfg)?;
    let outcome = train_model(&cfg, &corpus, None)?;
    ensure_dir(dir)?;
    outcome.best.save(&dir.join("best.ckpt"))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let refs = corpus.references(cfg.run.translate_split);
    let mut out = Vec::new();
    for (i, cell) in cells {
        let c = cell.apply(base)?;
        let hyps = translate_references(&outcome.best, &corpus, refs, &c.decode_options(&corpus.stats))?;
        super::run::write_translations(&dir.join(format!("cell-{i:03}.translations.jsonl")), &hyps)?;
        out.push((*i, evaluate_records(&hyps, refs)?));
    }
    Ok(out)
}

const ABLATE_FILES: &[&str] = &["cells.jsonl", "table.txt", "noise.tsv", "config.toml"];

/// Runs every grid cell. Failing cells are recorded and skipped; the
/// caller decides how to report them.
pub fn cmd_ablate(cfg: &ExperimentConfig, force: bool) -> Result<AblationOutcome> {
    let dir = cfg.work_dir.join("ablate");
    let files: Vec<PathBuf> = ABLATE_FILES.iter().map(|f| dir.join(f)).collect();
    claim_outputs(&files, force)?;
    if dir.exists() && force {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("group-"))
            {
                fs::remove_dir_all(&p)?;
            }
        }
    } else if dir.exists() && fs::read_dir(&dir)?.next().is_some() {
        return Err(Error::WouldOverwrite(dir));
    }
    ensure_dir(&dir)?;
    let cells = expand_grid(cfg)?;

    let mut groups: BTreeMap<String, Vec<(usize, AblationCell)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut results: Vec<CellResult> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| CellResult {
            index: i,
            label: c.label(),
            cell: c.clone(),
            report: None,
            error: None,
        })
        .collect();
    for (i, c) in cells.iter().enumerate() {
        match c.training_key(cfg) {
            Ok(k) => {
                if !groups.contains_key(&k) {
                    order.push(k.clone());
                }
                groups.entry(k).or_default().push((i, c.clone()));
            }
            Err(e) => results[i].error = Some(e.to_string()),
        }
    }
    let jobs: Vec<&Vec<(usize, AblationCell)>> = order.iter().map(|k| &groups[k]).collect();
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<(usize, Result<Vec<(usize, EvalReport)>>)>> = Mutex::new(Vec::new());
    let workers = cfg.grid.workers.max(1).min(jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                if j >= jobs.len() {
                    break;
                }
                let r = run_group(cfg, jobs[j], &dir.join(format!("group-{j:03}")));
                done.lock().expect("worker panicked").push((j, r));
            });
        }
    });
    for (j, r) in done.into_inner().expect("worker panicked") {
        match r {
            Ok(reports) => {
                for (i, rep) in reports {
                    results[i].report = Some(rep);
                }
            }
            Err(e) => {
                for (i, _) in jobs[j] {
                    results[*i].error = Some(e.to_string());
                }
            }
        }
    }
    write_outputs(&dir, cfg, &results)?;
    Ok(AblationOutcome { cells: results, dir })
}

fn write_outputs(dir: &Path, cfg: &ExperimentConfig, results: &[CellResult]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join("cells.jsonl"))?);
    for r in results {
        let mut r = r.clone();
        if let Some(rep) = r.report.as_mut() {
            rep.diagnostics.clear();
        }
        writeln!(w, "{}", serde_json::to_string(&r)?)?;
    }
    w.flush()?;

    let ok: Vec<(String, &EvalReport)> = results
        .iter()
        .filter_map(|r| r.report.as_ref().map(|rep| (r.label.clone(), rep)))
        .collect();
    let mut t = std::io::BufWriter::new(fs::File::create(dir.join("table.txt"))?);
    render_table(&mut t, "cell", &ok)?;
    for r in results.iter().filter(|r| r.error.is_some()) {
        writeln!(t, "{}  FAILED: {}", r.label, r.error.as_deref().unwrap_or(""))?;
    }
    t.flush()?;

    let mut n = std::io::BufWriter::new(fs::File::create(dir.join("noise.tsv"))?);
    writeln!(n, "sigma\tbleu\toverlap\texact_match\tcell")?;
    let mut series: Vec<&CellResult> = results.iter().filter(|r| r.report.is_some()).collect();
    series.sort_by(|a, b| {
        a.cell
            .noise_sigma
            .total_cmp(&b.cell.noise_sigma)
            .then(a.index.cmp(&b.index))
    });
    for r in series {
        let rep = r.report.as_ref().expect("filtered");
        writeln!(
            n,
            "{}\t{:.4}\t{:.6}\t{:.4}\t{}",
            r.cell.noise_sigma, rep.bleu, rep.speech_overlap, rep.exact_match, r.index
        )?;
    }
    n.flush()?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}
