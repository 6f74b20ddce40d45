#![allow(dead_code)]

use isochrony::data::{generate_synthetic_corpus, mark_pauses, AlignedUtterance, SyntheticConfig, Timing};
use isochrony::model::{Model, TrainingPair};
use isochrony::pipeline::{build_model, prepare, training_pairs, ExperimentConfig, PreparedCorpus};
use isochrony::rng::RngStream;

/// A small synthetic experiment; `extra` holds TOML lines overriding the base.
pub fn experiment(extra: &str) -> ExperimentConfig {
    let base = r#"
seed = 11
d_model = 16
heads = 2
d_ff = 32
encoder_layers = 1
decoder_layers = 1
main_embedding_dim = 16
dur_embedding_dim = 8
total_embedding_dim = 8
pause_embedding_dim = 4
segment_embedding_dim = 8
dropout = 0.0
n_sentences = 12
heldout_sentences = 6
words_per_sentence = [2, 4]
phones_per_word = [2, 3]
pause_probability = 0.4
n_bins = 6
bpe_merges = 20
"#;
    let mut merged: toml::Table = toml::from_str(base).unwrap();
    let over: toml::Table = toml::from_str(extra).unwrap();
    merged.extend(over);
    ExperimentConfig::from_toml(&toml::to_string(&merged).unwrap()).unwrap()
}

pub fn setup(extra: &str) -> (ExperimentConfig, PreparedCorpus, Model, Vec<TrainingPair>) {
    let cfg = experiment(extra);
    let corpus = prepare(&cfg).unwrap();
    let model = build_model(&cfg, &corpus).unwrap();
    let pairs = training_pairs(&model, &corpus.train).unwrap();
    (cfg, corpus, model, pairs)
}

pub mod oracles;

/// Pause-marked synthetic utterances with varied lengths and silences.
pub fn random_utterances(seed: u64, n: usize) -> Vec<AlignedUtterance> {
    let cfg = SyntheticConfig {
        n_sentences: n,
        words_per_sentence: (1, 8),
        phones_per_word: (1, 5),
        pause_probability: 0.35,
        short_silence_probability: 0.2,
        ..SyntheticConfig::default()
    };
    let corpus = generate_synthetic_corpus(&cfg, &RngStream::new(seed)).unwrap();
    let timing = Timing::default();
    corpus.utterances.iter().map(|u| mark_pauses(u, &timing)).collect()
}
