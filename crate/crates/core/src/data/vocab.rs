use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const NULL: &str = "<null>";
pub const EOS: &str = "</s>";
pub const EOW: &str = "<eow>";
pub const PAUSE: &str = "[pause]";
pub const SEP: &str = "<||>";

pub const NULL_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const EOW_ID: usize = 2;
pub const PAUSE_ID: usize = 3;
pub const SEP_ID: usize = 4;

pub fn bin_tag(bin: usize) -> String {
    format!("<bin{bin}>")
}

/// Dense token <-> id map. Ids 0..5 are the reserved markers, followed by
/// `n_bins` bin tags, followed by ordinary tokens in insertion order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    n_bins: usize,
}

impl Vocabulary {
    pub fn new(n_bins: usize) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            n_bins,
        };
        for t in [NULL, EOS, EOW, PAUSE, SEP] {
            v.push(t.to_string());
        }
        for b in 0..n_bins {
            v.push(bin_tag(b));
        }
        v
    }

    fn push(&mut self, t: String) -> usize {
        let id = self.tokens.len();
        self.index.insert(t.clone(), id);
        self.tokens.push(t);
        id
    }

    /// Id of `token`, adding it if unseen.
    pub fn add(&mut self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&id) => id,
            None => self.push(token.to_string()),
        }
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::Vocabulary(format!("unknown token {token:?}")))
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Vocabulary(format!("id {id} outside vocabulary of {}", self.tokens.len())))
    }

    pub fn bin_id(&self, bin: usize) -> Result<usize> {
        if bin >= self.n_bins {
            return Err(Error::Vocabulary(format!("bin {bin} outside {} bins", self.n_bins)));
        }
        Ok(SEP_ID + 1 + bin)
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.token(i).map(str::to_string)).collect()
    }

    /// One token per line; the first line records the bin count.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#bins\t{}", self.n_bins)?;
        for t in &self.tokens[SEP_ID + 1 + self.n_bins..] {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let n_bins = header
            .strip_prefix("#bins\t")
            .and_then(|s| s.parse().ok())
            .ok_or(Error::Parse {
                line: 1,
                message: "expected `#bins\\t<n>` header".into(),
            })?;
        let mut v = Vocabulary::new(n_bins);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if v.index.contains_key(&line) {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("duplicate token {line:?}"),
                });
            }
            v.push(line);
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::new(3);
        assert_eq!(v.id(NULL).unwrap(), NULL_ID);
        assert_eq!(v.id(PAUSE).unwrap(), PAUSE_ID);
        assert_eq!(v.id("<bin2>").unwrap(), v.bin_id(2).unwrap());
        assert!(v.bin_id(3).is_err());
        assert_eq!(v.len(), 8);
    }

    #[test]
    fn add_is_idempotent_and_round_trips() {
        let mut v = Vocabulary::new(2);
        let a = v.add("AA");
        assert_eq!(v.add("AA"), a);
        v.add("B");
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(Vocabulary::read(buf.as_slice()).unwrap(), v);
    }
}
