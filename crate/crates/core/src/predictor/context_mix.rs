use std::sync::OnceLock;

use super::{check_query, PartialSequence, PredictiveDistribution, Predictor};
use crate::error::{Error, Result};
use crate::TokenId;

const BOTH_SIDES: (f64, f64, f64) = (0.45, 0.45, 0.10);
const ONE_SIDE: (f64, f64) = (0.8, 0.2);
const MAX_CACHED_CONTEXTS: usize = 1 << 20;

/// Smoothed mixture of unigram, left-bigram and right-bigram conditionals.
///
/// For a masked position the left neighbor is the revealed token just before
/// it (the last prompt token for position 0) and the right neighbor is the
/// revealed token just after it. With both neighbors known the mixture is
/// 0.45 left / 0.45 right / 0.10 unigram; with one, 0.8 bigram / 0.2
/// unigram; with none, the unigram alone. A bigram conditional whose
/// smoothed row is empty (unseen context, `alpha = 0`) counts as unknown.
#[derive(Debug)]
pub struct ContextMixToyModel {
    vocab_size: usize,
    alpha: f64,
    unigram: Vec<u64>,
    // left[a * V + b]: count of `a` immediately followed by `b`
    left: Vec<u64>,
    // right[c * V + b]: count of `b` immediately followed by `c`
    right: Vec<u64>,
    left_rows: Vec<u64>,
    right_rows: Vec<u64>,
    cache: Option<Vec<OnceLock<Entries>>>,
}

type Entries = Vec<(TokenId, f64)>;

impl ContextMixToyModel {
    /// Trains on `corpus`, inferring the vocabulary as max token id + 1.
    pub fn train(corpus: &[Vec<TokenId>], alpha: f64) -> Result<Self> {
        let max = corpus.iter().flatten().copied().max();
        let vocab = max.map(|m| m as usize + 1).unwrap_or(0);
        Self::train_with_vocab(corpus, alpha, vocab)
    }

    /// Trains with an explicit vocabulary size, which must cover every corpus token.
    pub fn train_with_vocab(corpus: &[Vec<TokenId>], alpha: f64, vocab_size: usize) -> Result<Self> {
        if corpus.iter().all(Vec::is_empty) {
            return Err(Error::Training("corpus holds no tokens".into()));
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::Training(format!("smoothing constant must be finite and >= 0, got {alpha}")));
        }
        if let Some(&t) = corpus.iter().flatten().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::Training(format!("token {t} outside vocabulary of size {vocab_size}")));
        }
        let v = vocab_size;
        let mut unigram = vec![0u64; v];
        let mut left = vec![0u64; v * v];
        let mut right = vec![0u64; v * v];
        for seq in corpus {
            for &t in seq {
                unigram[t as usize] += 1;
            }
            for pair in seq.windows(2) {
                let (a, b) = (pair[0] as usize, pair[1] as usize);
                left[a * v + b] += 1;
                right[b * v + a] += 1;
            }
        }
        let row_sums = |table: &[u64]| table.chunks(v).map(|r| r.iter().sum()).collect::<Vec<u64>>();
        let left_rows = row_sums(&left);
        let right_rows = row_sums(&right);
        let contexts = (v + 1) * (v + 1);
        let cache = (contexts <= MAX_CACHED_CONTEXTS).then(|| (0..contexts).map(|_| OnceLock::new()).collect());
        Ok(Self { vocab_size: v, alpha, unigram, left, right, left_rows, right_rows, cache })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn unigram_count(&self, token: TokenId) -> u64 {
        self.unigram[token as usize]
    }

    /// Count of `first` immediately followed by `second`.
    pub fn left_count(&self, first: TokenId, second: TokenId) -> u64 {
        self.left[first as usize * self.vocab_size + second as usize]
    }

    /// Count of `token` immediately followed by `next`, indexed from the right context.
    pub fn right_count(&self, next: TokenId, token: TokenId) -> u64 {
        self.right[next as usize * self.vocab_size + token as usize]
    }

    pub fn unigram_probs(&self) -> Vec<f64> {
        let v = self.vocab_size as f64;
        let total: u64 = self.unigram.iter().sum();
        let denom = total as f64 + self.alpha * v;
        self.unigram.iter().map(|&c| (c as f64 + self.alpha) / denom).collect()
    }

    /// `P(next | left = prev)`; `None` when the smoothed row is empty.
    pub fn left_conditional(&self, prev: TokenId) -> Option<Vec<f64>> {
        let v = self.vocab_size;
        let row = &self.left[prev as usize * v..(prev as usize + 1) * v];
        smoothed_row(row, self.left_rows[prev as usize], self.alpha)
    }

    /// `P(token | right = next)`; `None` when the smoothed row is empty.
    pub fn right_conditional(&self, next: TokenId) -> Option<Vec<f64>> {
        let v = self.vocab_size;
        let row = &self.right[next as usize * v..(next as usize + 1) * v];
        smoothed_row(row, self.right_rows[next as usize], self.alpha)
    }

    /// Mixture for the given neighbor context.
    pub fn conditional(&self, left: Option<TokenId>, right: Option<TokenId>) -> Vec<f64> {
        let uni = self.unigram_probs();
        let l = left.and_then(|t| self.left_conditional(t));
        let r = right.and_then(|t| self.right_conditional(t));
        match (l, r) {
            (Some(l), Some(r)) => {
                let (wl, wr, wu) = BOTH_SIDES;
                (0..self.vocab_size).map(|i| wl * l[i] + wr * r[i] + wu * uni[i]).collect()
            }
            (Some(b), None) | (None, Some(b)) => {
                let (wb, wu) = ONE_SIDE;
                (0..self.vocab_size).map(|i| wb * b[i] + wu * uni[i]).collect()
            }
            (None, None) => uni,
        }
    }

    fn neighbors(&self, state: &PartialSequence, position: usize) -> (Option<TokenId>, Option<TokenId>) {
        let left = if position == 0 { state.prompt().last().copied() } else { state.get(position - 1) };
        (left, state.get(position + 1))
    }

    fn sorted_entries(&self, left: Option<TokenId>, right: Option<TokenId>) -> Entries {
        let build = || PredictiveDistribution::from_dense(0, &self.conditional(left, right)).entries;
        match &self.cache {
            Some(cache) => {
                let slot = |t: Option<TokenId>| t.map_or(0, |t| t as usize + 1);
                let idx = slot(left) * (self.vocab_size + 1) + slot(right);
                cache[idx].get_or_init(build).clone()
            }
            None => build(),
        }
    }
}

fn smoothed_row(row: &[u64], total: u64, alpha: f64) -> Option<Vec<f64>> {
    let denom = total as f64 + alpha * row.len() as f64;
    (denom > 0.0).then(|| row.iter().map(|&c| (c as f64 + alpha) / denom).collect())
}

impl Predictor for ContextMixToyModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn predict(&self, state: &PartialSequence, positions: &[usize]) -> Result<Vec<PredictiveDistribution>> {
        check_query(state, positions)?;
        if let Some(&t) = state.prompt().iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::InvalidToken { token: t, vocab_size: self.vocab_size });
        }
        positions
            .iter()
            .map(|&p| {
                let (left, right) = self.neighbors(state, p);
                for t in [left, right].into_iter().flatten() {
                    if t as usize >= self.vocab_size {
                        return Err(Error::InvalidToken { token: t, vocab_size: self.vocab_size });
                    }
                }
                Ok(PredictiveDistribution { position: p, entries: self.sorted_entries(left, right), truncated: false })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: TokenId = 0;
    const B: TokenId = 1;

    #[test]
    fn single_pair_counts() {
        let m = ContextMixToyModel::train(&[vec![A, B]], 0.0).unwrap();
        assert_eq!(m.left_count(A, B), 1);
        assert_eq!(m.left_count(A, A), 0);
        assert_eq!(m.left_count(B, A), 0);
        assert_eq!(m.left_count(B, B), 0);
        assert_eq!(m.right_count(B, A), 1);
    }

    #[test]
    fn counts_add_across_sequences() {
        let m = ContextMixToyModel::train(&[vec![A, B], vec![A, B]], 0.0).unwrap();
        assert_eq!(m.left_count(A, B), 2);
    }

    #[test]
    fn laplace_smoothed_left_conditional() {
        // "a b a": row `a` holds the single pair a->b, so (1 + 1) / (1 + 2).
        let m = ContextMixToyModel::train(&[vec![A, B, A]], 1.0).unwrap();
        let p = m.left_conditional(A).unwrap();
        assert!((p[B as usize] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[A as usize] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn alternating_corpus_bigram_is_deterministic() {
        let m = ContextMixToyModel::train(&[vec![A, B, A, B, A, B]], 0.0).unwrap();
        assert_eq!(m.left_conditional(A).unwrap(), vec![0.0, 1.0]);
        let mut s = PartialSequence::new(vec![], 4);
        s.reveal(0, A).unwrap();
        let d = m.predict(&s, &[1]).unwrap();
        // left bigram (0.8) says b surely, unigram (0.2) is 50/50
        assert_eq!(d[0].entries[0].0, B);
        assert!((d[0].prob_of(B).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn no_context_collapses_to_unigram() {
        let m = ContextMixToyModel::train(&[vec![A, B, B, 2, B]], 0.5).unwrap();
        let s = PartialSequence::new(vec![], 3);
        let d = m.predict(&s, &[1]).unwrap();
        let uni = m.unigram_probs();
        for (t, p) in &d[0].entries {
            assert_eq!(*p, uni[*t as usize]);
        }
    }

    #[test]
    fn prompt_supplies_left_context_of_first_position() {
        let m = ContextMixToyModel::train(&[vec![A, B, A, B]], 0.0).unwrap();
        let with_prompt = m.predict(&PartialSequence::new(vec![A], 2), &[0]).unwrap();
        let without = m.predict(&PartialSequence::new(vec![], 2), &[0]).unwrap();
        assert_ne!(with_prompt, without);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(ContextMixToyModel::train(&[], 0.0), Err(Error::Training(_))));
        assert!(matches!(ContextMixToyModel::train(&[vec![]], 0.0), Err(Error::Training(_))));
        assert!(ContextMixToyModel::train(&[vec![A]], -1.0).is_err());
    }

    #[test]
    fn all_contexts_are_distributions_and_order_matters() {
        let corpus = vec![vec![0, 1, 2, 3, 2, 1, 0, 3, 3, 1], vec![2, 2, 0, 1, 3]];
        let m = ContextMixToyModel::train(&corpus, 0.1).unwrap();
        let v = m.vocab_size() as TokenId;
        let ctx = || std::iter::once(None).chain((0..v).map(Some));
        for l in ctx() {
            for r in ctx() {
                let d = PredictiveDistribution::from_dense(0, &m.conditional(l, r));
                d.validate().unwrap();
            }
        }
        let mut s = PartialSequence::new(vec![], 3);
        let before = m.predict(&s, &[1]).unwrap();
        s.reveal(0, 3).unwrap();
        let after = m.predict(&s, &[1]).unwrap();
        assert_ne!(before[0].entries, after[0].entries);
    }
}
