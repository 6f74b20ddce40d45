use serde::{Deserialize, Serialize};

use super::counters::{init_counters, CounterState};
use crate::data::{EOS_ID, EOW_ID, NULL_ID, PAUSE_ID, SEP_ID};
use crate::error::{Error, Result};
use crate::model::{DecoderRow, FactorRole, FeedbackMode, Model, StepScores};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOptions {
    /// Beam width; 1 is greedy search.
    pub beam: usize,
    /// Overrides the configured feedback mode of every counter.
    pub feedback: Option<FeedbackMode>,
    /// Masks `[pause]` once no segment is pending and end-of-sequence while
    /// one still is.
    pub mask_pauses: bool,
    /// Output length limit as a multiple of the frame-implied token budget.
    pub max_len_factor: f64,
    /// Expected frames per output token, used for the budget. The pipeline
    /// substitutes the training-corpus mean when this is not positive.
    pub frames_per_token: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam: 1,
            feedback: None,
            mask_pauses: true,
            max_len_factor: 3.0,
            frames_per_token: 5.0,
        }
    }
}

impl DecodeOptions {
    pub fn feedback_for(&self, configured: FeedbackMode) -> FeedbackMode {
        self.feedback.unwrap_or(configured)
    }

    /// Number of output tokens allowed before the hypothesis is cut off.
    pub fn max_len(&self, total_frames: i64, max_positions: usize) -> usize {
        let budget = (total_frames.max(1) as f64 / self.frames_per_token.max(1e-9)).ceil();
        let limit = (self.max_len_factor * budget).ceil().max(8.0) as usize;
        limit.min(max_positions.saturating_sub(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Emitted `(token id, duration)` rows, excluding end-of-sequence.
    pub rows: Vec<(usize, i64)>,
    pub state: CounterState,
    /// Raw factor values fed to the decoder at every step, in model factor
    /// order; position 0 is the initial column.
    pub trace: Vec<Vec<i64>>,
    pub log_prob: f64,
    pub finished: bool,
    /// `[pause]` tokens emitted with no pending segment (masking disabled).
    pub pause_overflows: usize,
    #[serde(skip)]
    inputs: Vec<DecoderRow>,
}

impl Hypothesis {
    /// Log-probability per emitted token, counting end-of-sequence.
    pub fn normalized_score(&self) -> f64 {
        let n = self.rows.len() + usize::from(self.finished);
        self.log_prob / n.max(1) as f64
    }

    /// Durations of the hypothesized speech segments (split at `[pause]`).
    pub fn segments(&self) -> Vec<i64> {
        segments_of(&self.rows)
    }

    pub fn num_pauses(&self) -> usize {
        self.rows.iter().filter(|r| r.0 == PAUSE_ID).count()
    }
}

pub fn segments_of(rows: &[(usize, i64)]) -> Vec<i64> {
    let mut out = vec![0];
    for &(tok, dur) in rows {
        if tok == PAUSE_ID {
            out.push(0);
        } else {
            *out.last_mut().expect("nonempty") += dur;
        }
    }
    out
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest finite entries, ties broken by lower index.
fn top_k(xs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).filter(|&i| xs[i].is_finite()).collect();
    idx.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

struct Searcher<'a> {
    model: &'a Model,
    memory: Tensor,
    opts: &'a DecodeOptions,
    dur_index: Option<usize>,
}

impl Searcher<'_> {
    fn factor_values(&self, state: &CounterState, dur: i64, scores: Option<&StepScores>) -> Vec<i64> {
        let [total, pause, segment] = state.values();
        self.model
            .config()
            .factors
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let predicted = match (self.opts.feedback_for(f.feedback), scores) {
                    (FeedbackMode::ModelPrediction, Some(s)) if f.role.is_counter() => {
                        s.factors[i].as_ref().map(|lp| argmax(lp) as i64)
                    }
                    _ => None,
                };
                predicted.unwrap_or(match f.role {
                    FactorRole::Duration => dur,
                    FactorRole::Total => total,
                    FactorRole::Pause => pause,
                    FactorRole::Segment => segment,
                })
            })
            .collect()
    }

    fn input_row(&self, main: usize, values: &[i64]) -> DecoderRow {
        DecoderRow {
            main,
            factors: self
                .model
                .config()
                .factors
                .iter()
                .zip(values)
                .map(|(f, &v)| f.clamp(v))
                .collect(),
        }
    }

    fn masked_main(&self, h: &Hypothesis, scores: &StepScores) -> Vec<f64> {
        let mut lp = scores.main.clone();
        for id in [NULL_ID, SEP_ID] {
            if id < lp.len() {
                lp[id] = f64::NEG_INFINITY;
            }
        }
        if self.opts.mask_pauses {
            let blocked = if h.state.pauses_remaining() == 0 {
                PAUSE_ID
            } else {
                EOS_ID
            };
            if blocked < lp.len() {
                lp[blocked] = f64::NEG_INFINITY;
            }
        }
        lp
    }

    fn extend(&self, h: &Hypothesis, scores: &StepScores, token: usize, token_lp: f64) -> Hypothesis {
        let mut next = h.clone();
        next.log_prob += token_lp;
        if token == EOS_ID {
            next.finished = true;
            return next;
        }
        let dur = match (token, self.dur_index) {
            (EOW_ID | PAUSE_ID, _) | (_, None) => 0,
            (_, Some(i)) => match &scores.factors[i] {
                Some(lp) => {
                    let d = argmax(lp);
                    next.log_prob += lp[d];
                    d as i64
                }
                None => 0,
            },
        };
        next.state.total_remaining -= dur;
        if token == PAUSE_ID {
            match next.state.pending_segments.pop_front() {
                Some(s) => next.state.segment_remaining = s,
                None => {
                    next.pause_overflows += 1;
                    next.state.segment_remaining = 0;
                }
            }
        } else {
            next.state.segment_remaining -= dur;
        }
        next.rows.push((token, dur));
        let values = self.factor_values(&next.state, dur, Some(scores));
        next.inputs.push(self.input_row(token, &values));
        next.trace.push(values);
        next
    }
}

/// Beam search over the factored model; width 1 is greedy decoding, and
/// wider beams also score the greedy path.
///
/// Durations are chosen by argmax for each expanded token and never branch
/// the beam. Counters for the next step come from the counter state machine
/// or from the model's own counter heads, per factor feedback mode.
pub fn beam_decode(
    model: &Model,
    source: &[usize],
    segment_durations: &[i64],
    opts: &DecodeOptions,
) -> Result<Hypothesis> {
    if opts.beam == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let state = init_counters(segment_durations)?;
    let searcher = Searcher {
        model,
        memory: model.encode(source)?,
        opts,
        dur_index: model.config().factor_index(FactorRole::Duration),
    };
    let values = searcher.factor_values(&state, 0, None);
    let max_len = opts.max_len(state.total_remaining, model.config().max_positions);
    let mut live = vec![Hypothesis {
        rows: Vec::new(),
        inputs: vec![searcher.input_row(NULL_ID, &values)],
        trace: vec![values],
        state,
        log_prob: 0.0,
        finished: false,
        pause_overflows: 0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut cut: Vec<Hypothesis> = Vec::new();

    while !live.is_empty() && (finished.len() < opts.beam || promising(&live, &finished, opts.beam)) {
        let mut cands = Vec::new();
        for h in &live {
            let scores = model.step_scores(&searcher.memory, &h.inputs)?;
            let lp = searcher.masked_main(h, &scores);
            for tok in top_k(&lp, 2 * opts.beam) {
                cands.push(searcher.extend(h, &scores, tok, lp[tok]));
            }
        }
        // Stable sort keeps earlier beams and lower token ids first on ties.
        cands.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
        let mut next = Vec::with_capacity(opts.beam);
        for h in cands {
            if next.len() == opts.beam {
                break;
            }
            if h.finished {
                finished.push(h);
            } else if h.rows.len() >= max_len {
                cut.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
    }
    if opts.beam > 1 {
        // The greedy path may fall off the beam; keep it as a fallback so a
        // wider beam never returns a worse-scoring hypothesis.
        let g = greedy_decode(model, source, segment_durations, opts)?;
        if g.finished {
            finished.push(g)
        } else {
            cut.push(g)
        }
    }
    if finished.is_empty() {
        cut.extend(live);
        return best_of(cut);
    }
    best_of(finished)
}

/// With width above 1 the search continues while some live hypothesis
/// already scores better per token than every finished one.
fn promising(live: &[Hypothesis], finished: &[Hypothesis], beam: usize) -> bool {
    if beam == 1 {
        return false;
    }
    let best = finished
        .iter()
        .map(Hypothesis::normalized_score)
        .fold(f64::NEG_INFINITY, f64::max);
    live.iter().any(|h| h.log_prob / (h.rows.len() + 1) as f64 > best)
}

fn best_of(mut hyps: Vec<Hypothesis>) -> Result<Hypothesis> {
    if hyps.is_empty() {
        return Err(Error::Consistency("search ended without any hypothesis".into()));
    }
    let mut best = 0;
    for i in 1..hyps.len() {
        if hyps[i].normalized_score() > hyps[best].normalized_score() {
            best = i;
        }
    }
    Ok(hyps.swap_remove(best))
}

pub fn greedy_decode(
    model: &Model,
    source: &[usize],
    segment_durations: &[i64],
    opts: &DecodeOptions,
) -> Result<Hypothesis> {
    let opts = DecodeOptions {
        beam: 1,
        ..opts.clone()
    };
    beam_decode(model, source, segment_durations, &opts)
}
