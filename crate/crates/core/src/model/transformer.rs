use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::config::{Activation, EmbeddingKind, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{read_checkpoint, write_checkpoint, Graph, ParameterStore, Tensor, Var};
use crate::rng::RngStream;

/// Decoder input at one position: the previous main token and the values of
/// every configured factor after that token, already mapped to embedding ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderRow {
    pub main: usize,
    pub factors: Vec<usize>,
}

/// Output-head logits of one forward pass, one row per decoder position.
pub struct HeadLogits {
    pub main: Var,
    /// Indexed like `ModelConfig::factors`; `None` when the factor has no head.
    pub factors: Vec<Option<Var>>,
}

/// Targets per decoder position; `None` entries are masked out of the loss.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadTargets {
    pub main: Vec<Option<usize>>,
    pub factors: Vec<Vec<Option<usize>>>,
}

/// Last-position log-probabilities of every head.
#[derive(Clone, Debug)]
pub struct StepScores {
    pub main: Vec<f64>,
    pub factors: Vec<Option<Vec<f64>>>,
}

fn sinusoid_table(rows: usize, dim: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * dim];
    for p in 0..rows {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            t[p * dim + 2 * i] = (p as f64 * freq).sin();
            t[p * dim + 2 * i + 1] = (p as f64 * freq).cos();
        }
    }
    t
}

pub struct Model {
    config: ModelConfig,
    params: ParameterStore,
    positions: Vec<f64>,
    fixed_tables: Vec<Option<Vec<f64>>>,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            config: self.config.clone(),
            params: self.params.clone(),
            positions: self.positions.clone(),
            fixed_tables: self.fixed_tables.clone(),
        }
    }
}

struct Ctx<'a> {
    train: bool,
    rng: &'a mut RngStream,
}

impl Model {
    /// Builds a model with freshly initialized parameters. Every parameter is
    /// drawn from its own stream keyed by name, so adding or removing a head
    /// leaves the remaining parameters unchanged.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let root = RngStream::new(config.init_seed);
        let mut params = ParameterStore::new();
        let d = config.d_model;
        let mut add = |name: String, shape: &[usize], init: Init| -> Result<()> {
            let mut rng = root.split_str(&name);
            let t = match init {
                Init::Xavier => {
                    let std = (2.0 / (shape[0] + shape[1]) as f64).sqrt();
                    Tensor::randn(shape, std, &mut rng)
                }
                Init::Embedding => Tensor::randn(shape, 1.0 / (shape[1] as f64).sqrt(), &mut rng),
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::full(shape, 1.0),
            };
            params.insert(name, t).map(|_| ())
        };
        let attn = |add: &mut dyn FnMut(String, &[usize], Init) -> Result<()>, p: &str| -> Result<()> {
            for m in ["q", "k", "v", "o"] {
                add(format!("{p}.{m}"), &[d, d], Init::Xavier)?;
            }
            Ok(())
        };
        let ln = |add: &mut dyn FnMut(String, &[usize], Init) -> Result<()>, p: &str| -> Result<()> {
            add(format!("{p}.g"), &[d], Init::Ones)?;
            add(format!("{p}.b"), &[d], Init::Zeros)
        };
        let ffn = |add: &mut dyn FnMut(String, &[usize], Init) -> Result<()>, p: &str| -> Result<()> {
            add(format!("{p}.w1"), &[d, config.d_ff], Init::Xavier)?;
            add(format!("{p}.b1"), &[config.d_ff], Init::Zeros)?;
            add(format!("{p}.w2"), &[config.d_ff, d], Init::Xavier)?;
            add(format!("{p}.b2"), &[d], Init::Zeros)
        };

        add("enc.emb".into(), &[config.src_vocab, d], Init::Embedding)?;
        for l in 0..config.encoder_layers {
            attn(&mut add, &format!("enc.{l}.attn"))?;
            ln(&mut add, &format!("enc.{l}.ln1"))?;
            ln(&mut add, &format!("enc.{l}.ln2"))?;
            ffn(&mut add, &format!("enc.{l}.ffn"))?;
        }
        ln(&mut add, "enc.ln")?;

        add(
            "dec.emb.main".into(),
            &[config.main_vocab, config.main_embedding_dim],
            Init::Embedding,
        )?;
        for f in &config.factors {
            if f.embedding_kind == EmbeddingKind::Learned {
                add(
                    format!("dec.emb.{}", f.name()),
                    &[f.vocab_size, f.embedding_dim],
                    Init::Embedding,
                )?;
            }
        }
        add("dec.in_proj".into(), &[config.decoder_concat_width(), d], Init::Xavier)?;
        for l in 0..config.decoder_layers {
            attn(&mut add, &format!("dec.{l}.self"))?;
            attn(&mut add, &format!("dec.{l}.cross"))?;
            ln(&mut add, &format!("dec.{l}.ln1"))?;
            ln(&mut add, &format!("dec.{l}.ln2"))?;
            ln(&mut add, &format!("dec.{l}.ln3"))?;
            ffn(&mut add, &format!("dec.{l}.ffn"))?;
        }
        ln(&mut add, "dec.ln")?;
        add("head.main.w".into(), &[d, config.main_vocab], Init::Xavier)?;
        add("head.main.b".into(), &[config.main_vocab], Init::Zeros)?;
        for f in &config.factors {
            if f.predicted {
                add(format!("head.{}.w", f.name()), &[d, f.vocab_size], Init::Xavier)?;
                add(format!("head.{}.b", f.name()), &[f.vocab_size], Init::Zeros)?;
            }
        }
        Ok(Model::assemble(config, params))
    }

    fn assemble(config: ModelConfig, params: ParameterStore) -> Self {
        let positions = sinusoid_table(config.max_positions, config.d_model);
        let fixed_tables = config
            .factors
            .iter()
            .map(|f| {
                (f.embedding_kind == EmbeddingKind::Sinusoidal).then(|| sinusoid_table(f.vocab_size, f.embedding_dim))
            })
            .collect();
        Model {
            config,
            params,
            positions,
            fixed_tables,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_positions {
            return Err(Error::Capacity {
                len,
                max: self.config.max_positions,
            });
        }
        Ok(())
    }

    fn add_positions(&self, g: &mut Graph, x: Var, len: usize) -> Result<Var> {
        let d = self.config.d_model;
        let pe = g.constant(&[len, d], self.positions[..len * d].to_vec())?;
        g.add(x, pe)
    }

    fn linear(&self, g: &mut Graph, x: Var, w: &str) -> Result<Var> {
        let w = g.param(w)?;
        g.matmul(x, w)
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, p: &str) -> Result<Var> {
        let gamma = g.param(&format!("{p}.g"))?;
        let beta = g.param(&format!("{p}.b"))?;
        g.layer_norm(x, gamma, beta, 1e-6)
    }

    fn mha(&self, g: &mut Graph, x: Var, memory: Var, p: &str, causal: bool) -> Result<Var> {
        let q = self.linear(g, x, &format!("{p}.q"))?;
        let k = self.linear(g, memory, &format!("{p}.k"))?;
        let v = self.linear(g, memory, &format!("{p}.v"))?;
        let a = g.attention(q, k, v, self.config.heads, causal)?;
        self.linear(g, a, &format!("{p}.o"))
    }

    fn ffn(&self, g: &mut Graph, x: Var, p: &str) -> Result<Var> {
        let w1 = g.param(&format!("{p}.w1"))?;
        let b1 = g.param(&format!("{p}.b1"))?;
        let w2 = g.param(&format!("{p}.w2"))?;
        let b2 = g.param(&format!("{p}.b2"))?;
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = match self.config.activation {
            Activation::Relu => g.relu(h),
            Activation::Gelu => g.gelu(h),
        };
        let o = g.matmul(h, w2)?;
        g.add_row(o, b2)
    }

    /// Pre-norm residual block: `x + dropout(f(layer_norm(x)))`.
    fn residual(
        &self,
        g: &mut Graph,
        ctx: &mut Ctx,
        x: Var,
        ln: &str,
        f: impl FnOnce(&Self, &mut Graph, Var) -> Result<Var>,
    ) -> Result<Var> {
        let n = self.layer_norm(g, x, ln)?;
        let y = f(self, g, n)?;
        let y = self.dropout(g, ctx, y);
        g.add(x, y)
    }

    fn dropout(&self, g: &mut Graph, ctx: &mut Ctx, x: Var) -> Var {
        if ctx.train {
            g.dropout(x, self.config.dropout, ctx.rng)
        } else {
            x
        }
    }

    fn encoder(&self, g: &mut Graph, ctx: &mut Ctx, src: &[usize]) -> Result<Var> {
        if src.is_empty() {
            return Err(Error::Validation("empty source sequence".into()));
        }
        self.check_len(src.len())?;
        let emb = g.param("enc.emb")?;
        let x = g.gather(emb, src)?;
        let x = self.add_positions(g, x, src.len())?;
        let mut x = self.dropout(g, ctx, x);
        for l in 0..self.config.encoder_layers {
            x = self.residual(g, ctx, x, &format!("enc.{l}.ln1"), |m, g, h| {
                m.mha(g, h, h, &format!("enc.{l}.attn"), false)
            })?;
            x = self.residual(g, ctx, x, &format!("enc.{l}.ln2"), |m, g, h| {
                m.ffn(g, h, &format!("enc.{l}.ffn"))
            })?;
        }
        self.layer_norm(g, x, "enc.ln")
    }

    /// Concatenated main and factor embeddings, projected to the model width.
    pub fn embed_decoder_inputs(&self, g: &mut Graph, rows: &[DecoderRow]) -> Result<Var> {
        let nf = self.config.factors.len();
        if let Some(r) = rows.iter().find(|r| r.factors.len() != nf) {
            return Err(Error::Vocabulary(format!(
                "decoder row carries {} factors, model has {nf}",
                r.factors.len()
            )));
        }
        let main_ids: Vec<usize> = rows.iter().map(|r| r.main).collect();
        let emb = g.param("dec.emb.main")?;
        let mut parts = vec![g.gather(emb, &main_ids)?];
        for (i, f) in self.config.factors.iter().enumerate() {
            let ids: Vec<usize> = rows.iter().map(|r| r.factors[i]).collect();
            if let Some(&bad) = ids.iter().find(|&&id| id >= f.vocab_size) {
                return Err(Error::Vocabulary(format!(
                    "{} id {bad} outside vocabulary of {}",
                    f.name(),
                    f.vocab_size
                )));
            }
            let table = match &self.fixed_tables[i] {
                Some(t) => g.constant(&[f.vocab_size, f.embedding_dim], t.clone())?,
                None => g.param(&format!("dec.emb.{}", f.name()))?,
            };
            parts.push(g.gather(table, &ids)?);
        }
        let x = g.concat_cols(&parts)?;
        self.linear(g, x, "dec.in_proj")
    }

    fn decoder(&self, g: &mut Graph, ctx: &mut Ctx, memory: Var, rows: &[DecoderRow]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Validation("empty decoder input".into()));
        }
        self.check_len(rows.len())?;
        let x = self.embed_decoder_inputs(g, rows)?;
        let x = self.add_positions(g, x, rows.len())?;
        let mut x = self.dropout(g, ctx, x);
        for l in 0..self.config.decoder_layers {
            x = self.residual(g, ctx, x, &format!("dec.{l}.ln1"), |m, g, h| {
                m.mha(g, h, h, &format!("dec.{l}.self"), true)
            })?;
            x = self.residual(g, ctx, x, &format!("dec.{l}.ln2"), |m, g, h| {
                m.mha(g, h, memory, &format!("dec.{l}.cross"), false)
            })?;
            x = self.residual(g, ctx, x, &format!("dec.{l}.ln3"), |m, g, h| {
                m.ffn(g, h, &format!("dec.{l}.ffn"))
            })?;
        }
        self.layer_norm(g, x, "dec.ln")
    }

    fn heads(&self, g: &mut Graph, hidden: Var) -> Result<HeadLogits> {
        let head = |g: &mut Graph, name: &str| -> Result<Var> {
            let w = g.param(&format!("head.{name}.w"))?;
            let b = g.param(&format!("head.{name}.b"))?;
            let z = g.matmul(hidden, w)?;
            g.add_row(z, b)
        };
        let main = head(g, "main")?;
        let factors = self
            .config
            .factors
            .iter()
            .map(|f| {
                if f.predicted {
                    head(g, f.name()).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        Ok(HeadLogits { main, factors })
    }

    /// Full teacher-forced forward pass. Dropout is active iff the graph is in
    /// training mode.
    pub fn forward(
        &self,
        g: &mut Graph,
        src: &[usize],
        rows: &[DecoderRow],
        rng: &mut RngStream,
    ) -> Result<HeadLogits> {
        let mut ctx = Ctx {
            train: g.is_training(),
            rng,
        };
        let memory = self.encoder(g, &mut ctx, src)?;
        let hidden = self.decoder(g, &mut ctx, memory, rows)?;
        self.heads(g, hidden)
    }

    /// `sum_h weight_h * smoothed_ce_h` over the main head and every factor head.
    pub fn loss(&self, g: &mut Graph, logits: &HeadLogits, targets: &HeadTargets) -> Result<Var> {
        let ls = self.config.label_smoothing;
        let mut terms = vec![(
            g.cross_entropy(logits.main, &targets.main, ls)?,
            self.config.main_loss_weight,
        )];
        for (i, f) in self.config.factors.iter().enumerate() {
            if let Some(l) = logits.factors[i] {
                let t = targets
                    .factors
                    .get(i)
                    .ok_or_else(|| Error::Validation(format!("missing targets for factor {}", f.name())))?;
                terms.push((g.cross_entropy(l, t, ls)?, f.loss_weight));
            }
        }
        g.weighted_sum(&terms)
    }

    /// Encoder output for inference.
    pub fn encode(&self, src: &[usize]) -> Result<Tensor> {
        let mut rng = RngStream::new(0);
        let mut g = Graph::new(&self.params, false);
        let mut ctx = Ctx {
            train: false,
            rng: &mut rng,
        };
        let m = self.encoder(&mut g, &mut ctx, src)?;
        Ok(g.tensor(m))
    }

    /// Log-probabilities of every head at the last decoder position.
    pub fn step_scores(&self, memory: &Tensor, rows: &[DecoderRow]) -> Result<StepScores> {
        let mut rng = RngStream::new(0);
        let mut g = Graph::new(&self.params, false);
        let mut ctx = Ctx {
            train: false,
            rng: &mut rng,
        };
        let mem = g.leaf(memory);
        let hidden = self.decoder(&mut g, &mut ctx, mem, rows)?;
        let d = self.config.d_model;
        let last = g.value(hidden)[(rows.len() - 1) * d..].to_vec();
        let last = g.constant(&[1, d], last)?;
        let logits = self.heads(&mut g, last)?;
        let lsm = |g: &Graph, v: Var| crate::numerics::log_softmax(g.value(v));
        Ok(StepScores {
            main: lsm(&g, logits.main),
            factors: logits.factors.iter().map(|l| l.map(|v| lsm(&g, v))).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = serde_json::to_string(&self.config)?;
        let w = BufWriter::new(File::create(path)?);
        write_checkpoint(w, &self.params, &manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let (params, manifest) = read_checkpoint(r)?;
        let config: ModelConfig =
            serde_json::from_str(&manifest).map_err(|e| Error::Checkpoint(format!("bad model manifest: {e}")))?;
        let mut fresh = Model::new(config)?;
        fresh.params.load_values(&params)?;
        Ok(fresh)
    }
}

#[derive(Clone, Copy)]
enum Init {
    Xavier,
    Embedding,
    Zeros,
    Ones,
}
