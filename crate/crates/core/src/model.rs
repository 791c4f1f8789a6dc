//! The word-selection model.
//!
//! A bi-directional recurrent encoder summarizes the embedded expression into
//! `h_n = [forward final hidden ; backward final hidden]`. A recurrent decoder,
//! initialized from tanh projections of `h_n`, visits the tokens left to right;
//! at step `i` it consumes the token embedding concatenated with an embedding
//! of the previous decision and emits `p_i = sigmoid(u · hidden_i + c)`, the
//! probability of keeping token `i`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::{
    bernoulli_log, dtanh_from_output, sigmoid, Affine, CellCache, GatedCell, GatedCellState, Param,
    ParamStore,
};
use crate::textproc::{EmbeddingTable, Token};
use crate::Scalar;

/// Width of the previous-decision embedding fed to the decoder.
pub const DECISION_DIM: usize = 8;

/// Previous-decision symbol fed to the decoder. The discriminant is the
/// row of the decision-embedding table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decision {
    Skip = 0,
    Keep = 1,
    Start = 2,
}

impl From<bool> for Decision {
    fn from(keep: bool) -> Self {
        if keep {
            Decision::Keep
        } else {
            Decision::Skip
        }
    }
}

/// A tokenized natural-language expression with its (frozen) word vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct NlExpression<F> {
    tokens: Vec<Token>,
    embedded: Vec<Vec<F>>,
}

impl<F: Scalar> NlExpression<F> {
    pub fn new(tokens: Vec<Token>, embedded: Vec<Vec<F>>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("expression has no tokens"));
        }
        if tokens.len() != embedded.len() {
            return Err(Error::Dimension {
                context: "expression embeddings",
                expected: tokens.len(),
                got: embedded.len(),
            });
        }
        let d = embedded[0].len();
        if let Some(v) = embedded.iter().find(|v| v.len() != d) {
            return Err(Error::Dimension {
                context: "expression embedding width",
                expected: d,
                got: v.len(),
            });
        }
        Ok(NlExpression { tokens, embedded })
    }

    pub fn embed(tokens: Vec<Token>, table: &EmbeddingTable) -> Result<Self> {
        let embedded = tokens
            .iter()
            .map(|t| table.vector(t).into_iter().map(F::lit).collect())
            .collect();
        Self::new(tokens, embedded)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn embedded(&self) -> &[Vec<F>] {
        &self.embedded
    }

    pub fn embed_dim(&self) -> usize {
        self.embedded[0].len()
    }
}

/// Binary keep/drop vector aligned with an expression's tokens.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SelectionMask(Vec<bool>);

impl SelectionMask {
    pub fn new(bits: Vec<bool>) -> Self {
        SelectionMask(bits)
    }

    pub fn zeros(n: usize) -> Self {
        SelectionMask(vec![false; n])
    }

    pub fn ones(n: usize) -> Self {
        SelectionMask(vec![true; n])
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        SelectionMask(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, keep: bool) {
        self.0[i] = keep;
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_all_zero(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| b as u8).collect()
    }
}

impl fmt::Display for SelectionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(if *b { "1" } else { "0" })?;
        }
        f.write_str(")")
    }
}

/// Concatenated final forward and backward encoder hidden states (length `2H`).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderSummary<F> {
    pub h_n: Vec<F>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(embed_dim: usize, hidden: usize, seed: u64) -> Self {
        ModelConfig {
            embed_dim,
            hidden,
            seed,
        }
    }
}

/// Parameters of the selection model.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionModel<F> {
    config: ModelConfig,
    pub encoder_forward: GatedCell<F>,
    pub encoder_backward: GatedCell<F>,
    pub init_hidden: Affine<F>,
    pub init_cell: Affine<F>,
    /// `3 × DECISION_DIM`, rows indexed by [`Decision`].
    pub decisions: Param<F>,
    pub decoder: GatedCell<F>,
    pub output: Affine<F>,
}

/// Everything a forward pass recorded, sufficient for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace<F> {
    enc_forward: Vec<CellCache<F>>,
    enc_backward: Vec<CellCache<F>>,
    h_n: Vec<F>,
    h0: Vec<F>,
    c0: Vec<F>,
    decoder: Vec<CellCache<F>>,
    hiddens: Vec<Vec<F>>,
    raw: Vec<F>,
    probs: Vec<F>,
    mask: SelectionMask,
    logprob: F,
}

impl<F: Scalar> Trace<F> {
    /// Keep-probabilities `p_i`, clamped to `[floor, 1 − floor]`.
    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    /// Decisions taken at each step (also the decisions fed back).
    pub fn mask(&self) -> &SelectionMask {
        &self.mask
    }

    /// `Σ_i log p(decision_i)` with guarded logs.
    pub fn logprob(&self) -> F {
        self.logprob
    }
}

/// A mask drawn from the model together with its log-probability.
#[derive(Clone, Debug)]
pub struct Sampled<F> {
    pub mask: SelectionMask,
    pub logprob: F,
    pub trace: Trace<F>,
}

impl<F: Scalar> SelectionModel<F> {
    /// Uniform initialization in `±1/sqrt(H)`, seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        Self::validate(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, h) = (config.embed_dim, config.hidden);
        let k = 1.0 / (h as f64).sqrt();
        Ok(SelectionModel {
            config,
            encoder_forward: GatedCell::uniform("encoder.forward", d, h, k, &mut rng),
            encoder_backward: GatedCell::uniform("encoder.backward", d, h, k, &mut rng),
            init_hidden: Affine::uniform("decoder.init_hidden", 2 * h, h, k, &mut rng),
            init_cell: Affine::uniform("decoder.init_cell", 2 * h, h, k, &mut rng),
            decisions: Param::uniform("decoder.decisions", 3, DECISION_DIM, 1.0, &mut rng),
            decoder: GatedCell::uniform("decoder.cell", d + DECISION_DIM, h, k, &mut rng),
            output: Affine::uniform("decoder.output", h, 1, k, &mut rng),
        })
    }

    /// Every parameter zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        Self::validate(&config)?;
        let (d, h) = (config.embed_dim, config.hidden);
        Ok(SelectionModel {
            config,
            encoder_forward: GatedCell::zeros("encoder.forward", d, h),
            encoder_backward: GatedCell::zeros("encoder.backward", d, h),
            init_hidden: Affine::zeros("decoder.init_hidden", 2 * h, h),
            init_cell: Affine::zeros("decoder.init_cell", 2 * h, h),
            decisions: Param::zeros("decoder.decisions", 3, DECISION_DIM),
            decoder: GatedCell::zeros("decoder.cell", d + DECISION_DIM, h),
            output: Affine::zeros("decoder.output", h, 1),
        })
    }

    fn validate(config: &ModelConfig) -> Result<()> {
        if config.embed_dim == 0 || config.hidden == 0 {
            return Err(Error::config("embed_dim and hidden must be positive"));
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn check_expression(&self, x: &NlExpression<F>) -> Result<()> {
        if x.embed_dim() != self.config.embed_dim {
            return Err(Error::Dimension {
                context: "expression embedding width",
                expected: self.config.embed_dim,
                got: x.embed_dim(),
            });
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn encode_traced(
        &self,
        x: &NlExpression<F>,
    ) -> Result<(Vec<F>, Vec<CellCache<F>>, Vec<CellCache<F>>)> {
        self.check_expression(x)?;
        let h = self.config.hidden;
        let mut fwd = GatedCellState::zeros(h);
        let mut fwd_caches = Vec::with_capacity(x.len());
        for e in x.embedded() {
            let (s, c) = self.encoder_forward.forward(&fwd, e)?;
            fwd = s;
            fwd_caches.push(c);
        }
        let mut bwd = GatedCellState::zeros(h);
        let mut bwd_caches = Vec::with_capacity(x.len());
        for e in x.embedded().iter().rev() {
            let (s, c) = self.encoder_backward.forward(&bwd, e)?;
            bwd = s;
            bwd_caches.push(c);
        }
        let mut h_n = fwd.hidden;
        h_n.extend_from_slice(&bwd.hidden);
        Ok((h_n, fwd_caches, bwd_caches))
    }

    pub fn encode(&self, x: &NlExpression<F>) -> Result<EncoderSummary<F>> {
        let (h_n, _, _) = self.encode_traced(x)?;
        Ok(EncoderSummary { h_n })
    }

    /// Decoder state before the first token: `tanh(W h_n + b)` for hidden and cell.
    pub fn decoder_init(&self, summary: &EncoderSummary<F>) -> Result<GatedCellState<F>> {
        if summary.h_n.len() != 2 * self.config.hidden {
            return Err(Error::Dimension {
                context: "encoder summary",
                expected: 2 * self.config.hidden,
                got: summary.h_n.len(),
            });
        }
        let hidden = self.init_hidden.forward(&summary.h_n)?.into_iter().map(F::tanh).collect();
        let cell = self.init_cell.forward(&summary.h_n)?.into_iter().map(F::tanh).collect();
        Ok(GatedCellState { hidden, cell })
    }

    fn decoder_input(&self, token: &[F], prev: Decision) -> Vec<F> {
        let mut v = Vec::with_capacity(token.len() + DECISION_DIM);
        v.extend_from_slice(token);
        v.extend_from_slice(self.decisions.row(prev as usize));
        v
    }

    /// One decoder step. Returns the clamped keep-probability and the next state.
    pub fn step(
        &self,
        state: &GatedCellState<F>,
        token: &[F],
        prev: Decision,
    ) -> Result<(F, GatedCellState<F>)> {
        if token.len() != self.config.embed_dim {
            return Err(Error::Dimension {
                context: "decoder token embedding",
                expected: self.config.embed_dim,
                got: token.len(),
            });
        }
        let (next, _) = self.decoder.forward(state, &self.decoder_input(token, prev))?;
        let raw = sigmoid(self.output.forward(&next.hidden)?[0]);
        Ok((clamp_prob(raw), next))
    }

    /// Runs encoder and decoder; `decide(i, p_i)` chooses decision `i`, which is
    /// then fed to step `i + 1`.
    pub fn forward<D>(&self, x: &NlExpression<F>, mut decide: D) -> Result<Trace<F>>
    where
        D: FnMut(usize, F) -> bool,
    {
        let (h_n, enc_forward, enc_backward) = self.encode_traced(x)?;
        let summary = EncoderSummary { h_n };
        let init = self.decoder_init(&summary)?;
        let n = x.len();
        let mut trace = Trace {
            enc_forward,
            enc_backward,
            h_n: summary.h_n,
            h0: init.hidden.clone(),
            c0: init.cell.clone(),
            decoder: Vec::with_capacity(n),
            hiddens: Vec::with_capacity(n),
            raw: Vec::with_capacity(n),
            probs: Vec::with_capacity(n),
            mask: SelectionMask::zeros(n),
            logprob: F::zero(),
        };
        let mut state = init;
        let mut prev = Decision::Start;
        for (i, e) in x.embedded().iter().enumerate() {
            let (next, cache) = self.decoder.forward(&state, &self.decoder_input(e, prev))?;
            let raw = sigmoid(self.output.forward(&next.hidden)?[0]);
            let p = clamp_prob(raw);
            let keep = decide(i, p);
            trace.logprob += bernoulli_log(raw, keep).0;
            trace.mask.set(i, keep);
            trace.decoder.push(cache);
            trace.hiddens.push(next.hidden.clone());
            trace.raw.push(raw);
            trace.probs.push(p);
            prev = keep.into();
            state = next;
        }
        Ok(trace)
    }

    /// Teacher-forced trace: step `i` is fed the gold decision `y_{i−1}`.
    pub fn teacher_forced(&self, x: &NlExpression<F>, y: &SelectionMask) -> Result<Trace<F>> {
        if y.len() != x.len() {
            return Err(Error::Dimension {
                context: "mask length",
                expected: x.len(),
                got: y.len(),
            });
        }
        self.forward(x, |i, _| y.get(i))
    }

    /// `Σ_i [y_i log p_i + (1 − y_i) log(1 − p_i)]` under teacher forcing.
    pub fn log_likelihood(&self, x: &NlExpression<F>, y: &SelectionMask) -> Result<F> {
        Ok(self.teacher_forced(x, y)?.logprob)
    }

    /// Adds `scale · ∇ log_likelihood(x, y)` into the gradient accumulators and
    /// returns the log-likelihood.
    pub fn accumulate_log_likelihood(
        &mut self,
        x: &NlExpression<F>,
        y: &SelectionMask,
        scale: F,
    ) -> Result<F> {
        let trace = self.teacher_forced(x, y)?;
        self.backward(x, &trace, scale);
        Ok(trace.logprob)
    }

    /// Draws `ŷ_i ~ Bernoulli(p_i)` step by step, feeding back the sampled decision.
    pub fn sample<R: Rng + ?Sized>(&self, x: &NlExpression<F>, rng: &mut R) -> Result<Sampled<F>> {
        let trace = self.forward(x, |_, p| F::lit(rng.random::<f64>()) < p)?;
        Ok(Sampled {
            mask: trace.mask.clone(),
            logprob: trace.logprob,
            trace,
        })
    }

    /// Keeps `i` iff `p_i ≥ 0.5`. An all-zero result is replaced by the single
    /// position with the largest `p_i` (first on ties).
    pub fn greedy(&self, x: &NlExpression<F>) -> Result<SelectionMask> {
        let half = F::lit(0.5);
        let trace = self.forward(x, |_, p| p >= half)?;
        let mut mask = trace.mask;
        if mask.is_all_zero() {
            let mut best = 0;
            for (i, &p) in trace.probs.iter().enumerate() {
                if p > trace.probs[best] {
                    best = i;
                }
            }
            mask.set(best, true);
        }
        Ok(mask)
    }

    /// Adds `scale · ∇ trace.logprob` into the gradient accumulators.
    ///
    /// `trace` must come from [`forward`](Self::forward) on `x` with the current parameters.
    pub fn backward(&mut self, x: &NlExpression<F>, trace: &Trace<F>, scale: F) {
        let h = self.config.hidden;
        let d = self.config.embed_dim;
        let n = x.len();

        let mut dh_next = vec![F::zero(); h];
        let mut dc_next = vec![F::zero(); h];
        let prev_of = |i: usize| -> Decision {
            if i == 0 {
                Decision::Start
            } else {
                trace.mask.get(i - 1).into()
            }
        };
        for i in (0..n).rev() {
            let (_, dz) = bernoulli_log(trace.raw[i], trace.mask.get(i));
            let dz = dz * scale;
            let dh_out = self.output.backward(&trace.hiddens[i], &[dz]);
            for (a, b) in dh_next.iter_mut().zip(&dh_out) {
                *a += *b;
            }
            let g = self.decoder.backward(&trace.decoder[i], &dh_next, &dc_next);
            let row = prev_of(i) as usize;
            let grad_row = &mut self.decisions.grad[row * DECISION_DIM..(row + 1) * DECISION_DIM];
            for (a, b) in grad_row.iter_mut().zip(&g.input[d..]) {
                *a += *b;
            }
            dh_next = g.hidden;
            dc_next = g.cell;
        }

        let dpre_h: Vec<F> = dh_next
            .iter()
            .zip(&trace.h0)
            .map(|(&g, &t)| g * dtanh_from_output(t))
            .collect();
        let dpre_c: Vec<F> = dc_next
            .iter()
            .zip(&trace.c0)
            .map(|(&g, &t)| g * dtanh_from_output(t))
            .collect();
        let mut dh_n = self.init_hidden.backward(&trace.h_n, &dpre_h);
        for (a, b) in dh_n.iter_mut().zip(self.init_cell.backward(&trace.h_n, &dpre_c)) {
            *a += b;
        }

        // Word embeddings are frozen; input gradients of the encoder are dropped.
        let (dh_f, dh_b) = dh_n.split_at(h);
        let mut dh = dh_f.to_vec();
        let mut dc = vec![F::zero(); h];
        for cache in trace.enc_forward.iter().rev() {
            let g = self.encoder_forward.backward(cache, &dh, &dc);
            dh = g.hidden;
            dc = g.cell;
        }
        let mut dh = dh_b.to_vec();
        let mut dc = vec![F::zero(); h];
        for cache in trace.enc_backward.iter().rev() {
            let g = self.encoder_backward.backward(cache, &dh, &dc);
            dh = g.hidden;
            dc = g.cell;
        }
    }
}

#[inline]
fn clamp_prob<F: Scalar>(p: F) -> F {
    let floor = F::prob_floor();
    p.max(floor).min(F::one() - floor)
}

impl<F: Scalar> ParamStore<F> for SelectionModel<F> {
    fn params(&self) -> Vec<&Param<F>> {
        let mut v = Vec::with_capacity(13);
        v.extend(self.encoder_forward.params());
        v.extend(self.encoder_backward.params());
        v.extend(self.init_hidden.params());
        v.extend(self.init_cell.params());
        v.push(&self.decisions);
        v.extend(self.decoder.params());
        v.extend(self.output.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v = Vec::with_capacity(13);
        v.extend(self.encoder_forward.params_mut());
        v.extend(self.encoder_backward.params_mut());
        v.extend(self.init_hidden.params_mut());
        v.extend(self.init_cell.params_mut());
        v.push(&mut self.decisions);
        v.extend(self.decoder.params_mut());
        v.extend(self.output.params_mut());
        v
    }
}
