//! Reproducible experiments: preparation, training, translation,
//! evaluation and ablation sweeps driven by one configuration file.

mod ablate;
mod commands;
mod config;
mod prepare;
mod run;

pub use ablate::{cmd_ablate, expand_grid, AblationCell, AblationOutcome, CellResult};
pub use commands::{cmd_evaluate, cmd_prepare, cmd_train, cmd_translate};
pub use config::{
    validate_counters, BestMetric, DataSection, ExperimentConfig, GridSection, ModelSection, RunSection, Split,
};
pub use prepare::{prepare_corpus, target_text, CorpusStats, PrepareOptions, PreparedCorpus, SourceEncoder};
pub use run::{
    build_model, load_model, load_utterances, prepare, read_prepared, train_model, training_pairs,
    translate_references, write_prepared, write_report, write_translations, Layout, RawCorpus, FACTORED_FORMAT,
    INTERLEAVED_FORMAT, PREPARE_FILES,
};
