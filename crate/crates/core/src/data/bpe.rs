//! Byte-pair encoding over whitespace-separated words.
//!
//! Words are split into characters with an end-of-word marker on the last
//! symbol; merges are learned greedily by pair frequency. Applied output marks
//! every non-final subword of a word with a trailing `@@`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

const END: &str = "</w>";
pub const CONTINUATION: &str = "@@";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == chars.len() {
                format!("{c}{END}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn merge_word(symbols: &[String], pair: &(String, String)) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(format!("{}{}", pair.0, pair.1));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        let ranks = merges.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        BpeModel { merges, ranks }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Learns up to `num_merges` merges. Ties between equally frequent pairs
    /// go to the lexicographically smallest pair.
    pub fn learn<S: AsRef<str>>(corpus: &[S], num_merges: usize) -> Self {
        let mut word_counts: HashMap<&str, usize> = HashMap::new();
        for line in corpus {
            for w in line.as_ref().split_whitespace() {
                *word_counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<String>, usize)> =
            word_counts.into_iter().map(|(w, c)| (initial_symbols(w), c)).collect();
        words.sort();
        let mut merges = Vec::new();
        for _ in 0..num_merges {
            let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
            for (syms, c) in &words {
                for w in syms.windows(2) {
                    *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
                }
            }
            let Some(best) = pairs
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .map(|((a, b), _)| (a.to_string(), b.to_string()))
            else {
                break;
            };
            for (syms, _) in words.iter_mut() {
                if syms.len() > 1 {
                    *syms = merge_word(syms, &best);
                }
            }
            merges.push(best);
        }
        BpeModel::from_merges(merges)
    }

    fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms = initial_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w)))
                .min_by_key(|(r, _)| *r)
                .map(|(_, w)| (w[0].clone(), w[1].clone()));
            match best {
                Some(pair) => syms = merge_word(&syms, &pair),
                None => break,
            }
        }
        let n = syms.len();
        syms.into_iter()
            .enumerate()
            .map(|(i, s)| {
                if i + 1 == n {
                    s.strip_suffix(END).unwrap_or(&s).to_string()
                } else {
                    format!("{s}{CONTINUATION}")
                }
            })
            .collect()
    }

    pub fn apply(&self, text: &str) -> Vec<String> {
        text.split_whitespace().flat_map(|w| self.segment_word(w)).collect()
    }

    /// One merge per line, in learned order.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (a, b) in &self.merges {
            writeln!(w, "{a} {b}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut merges = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let (a, b) = line.split_once(' ').ok_or(Error::Parse {
                line: i + 1,
                message: format!("expected `left right`, got {line:?}"),
            })?;
            merges.push((a.to_string(), b.to_string()));
        }
        Ok(BpeModel::from_merges(merges))
    }
}

/// Inverse of [`BpeModel::apply`].
pub fn join_subwords<S: AsRef<str>>(subwords: &[S]) -> String {
    let joined = subwords.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(" ");
    joined.replace("@@ ", "")
}
