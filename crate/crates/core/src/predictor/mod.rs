//! Conditional predictors over partially revealed sequences.
//!
//! A predictor answers `p(y_j | revealed, prompt)` for any set of masked
//! response positions `j`. Two toy models live here: a context-free
//! factorized model with analytically known behavior, and a smoothed
//! neighbor-bigram mixture whose predictions depend on what is revealed.

mod context_mix;
mod factorized;

pub use context_mix::ContextMixToyModel;
pub use factorized::FactorizedToyModel;

use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::TokenId;

/// Decoding state: prompt, response length and revealed response tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialSequence {
    prompt: Vec<TokenId>,
    slots: Vec<Option<TokenId>>,
}

impl PartialSequence {
    /// Fully masked response of `length` positions.
    pub fn new(prompt: Vec<TokenId>, length: usize) -> Self {
        Self { prompt, slots: vec![None; length] }
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.prompt
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, position: usize) -> Option<TokenId> {
        self.slots.get(position).copied().flatten()
    }

    pub fn is_masked(&self, position: usize) -> bool {
        matches!(self.slots.get(position), Some(None))
    }

    pub fn reveal(&mut self, position: usize, token: TokenId) -> Result<()> {
        match self.slots.get_mut(position) {
            Some(slot @ None) => {
                *slot = Some(token);
                Ok(())
            }
            Some(Some(_)) => Err(Error::InvalidQuery(format!("position {position} is already revealed"))),
            None => Err(Error::InvalidQuery(format!(
                "position {position} is outside a response of length {}",
                self.slots.len()
            ))),
        }
    }

    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i)
    }

    /// Revealed `(position, token)` pairs in ascending position order.
    pub fn revealed(&self) -> impl Iterator<Item = (usize, TokenId)> + '_ {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.map(|t| (i, t)))
    }

    pub fn revealed_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// The response if every position is revealed.
    pub fn tokens(&self) -> Option<Vec<TokenId>> {
        self.slots.iter().copied().collect()
    }
}

/// Distribution over the next token at one position, sorted by descending
/// probability with ties in ascending token id.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub position: usize,
    pub entries: Vec<(TokenId, f64)>,
    /// True when `entries` is a top-K truncation of the model's support.
    pub truncated: bool,
}

impl PredictiveDistribution {
    /// Builds a full distribution from dense per-token probabilities.
    pub fn from_dense(position: usize, probs: &[f64]) -> Self {
        let entries = probs.iter().enumerate().map(|(t, &p)| (t as TokenId, p)).collect();
        Self::from_entries(position, entries, false)
    }

    pub fn from_entries(position: usize, mut entries: Vec<(TokenId, f64)>, truncated: bool) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { position, entries, truncated }
    }

    pub fn prob_of(&self, token: TokenId) -> Option<f64> {
        self.entries.iter().find(|(t, _)| *t == token).map(|&(_, p)| p)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum()
    }

    /// Checks non-negativity, ordering and (for full distributions) unit mass.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidInput(format!("empty distribution at position {}", self.position)));
        }
        if self.entries.iter().any(|&(_, p)| !p.is_finite() || p < 0.0) {
            return Err(Error::InvalidInput(format!(
                "negative or non-finite probability at position {}",
                self.position
            )));
        }
        if self.entries.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(Error::InvalidInput(format!("entries not sorted at position {}", self.position)));
        }
        if !self.truncated && (self.total_mass() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "distribution at position {} sums to {}",
                self.position,
                self.total_mass()
            )));
        }
        Ok(())
    }
}

/// Conditional predictor `p(y_j | revealed, prompt)`.
pub trait Predictor: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// One distribution per queried position, in query order. Every queried
    /// position must be masked in `state`.
    fn predict(&self, state: &PartialSequence, positions: &[usize]) -> Result<Vec<PredictiveDistribution>>;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn predict(&self, state: &PartialSequence, positions: &[usize]) -> Result<Vec<PredictiveDistribution>> {
        (**self).predict(state, positions)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn predict(&self, state: &PartialSequence, positions: &[usize]) -> Result<Vec<PredictiveDistribution>> {
        (**self).predict(state, positions)
    }
}

/// Rejects queries on revealed or out-of-range positions.
pub fn check_query(state: &PartialSequence, positions: &[usize]) -> Result<()> {
    for &p in positions {
        if p >= state.len() {
            return Err(Error::InvalidQuery(format!("position {p} is outside a response of length {}", state.len())));
        }
        if !state.is_masked(p) {
            return Err(Error::InvalidQuery(format!("position {p} is already revealed")));
        }
    }
    Ok(())
}

/// One observed `predict` call.
#[derive(Debug, Clone)]
pub struct PredictCall {
    pub state: PartialSequence,
    pub positions: Vec<usize>,
    pub output: Vec<PredictiveDistribution>,
}

/// Wraps a predictor and records every call with its exact input state and output.
pub struct RecordingPredictor<P> {
    inner: P,
    calls: Mutex<Vec<PredictCall>>,
}

impl<P: Predictor> RecordingPredictor<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, calls: Mutex::new(Vec::new()) }
    }

    pub fn take_calls(&self) -> Vec<PredictCall> {
        std::mem::take(&mut *self.calls.lock().unwrap())
    }
}

impl<P: Predictor> Predictor for RecordingPredictor<P> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn predict(&self, state: &PartialSequence, positions: &[usize]) -> Result<Vec<PredictiveDistribution>> {
        let output = self.inner.predict(state, positions)?;
        self.calls.lock().unwrap().push(PredictCall {
            state: state.clone(),
            positions: positions.to_vec(),
            output: output.clone(),
        });
        Ok(output)
    }
}
