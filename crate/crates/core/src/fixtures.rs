//! Deterministic synthetic corpora.

use rand::Rng;

use crate::rng::substream;
use crate::TokenId;

/// Shape of a sparse random Markov-chain corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovCorpusSpec {
    pub vocab_size: usize,
    /// Likely successors per token.
    pub successors: usize,
    /// Probability of jumping to a uniform token instead of a likely successor.
    pub noise: f64,
    pub sequences: usize,
    pub length: usize,
    pub seed: u64,
}

impl Default for MarkovCorpusSpec {
    fn default() -> Self {
        Self { vocab_size: 64, successors: 4, noise: 0.1, sequences: 200, length: 64, seed: 7 }
    }
}

/// Samples a corpus from a random sparse chain: each token has `successors`
/// preferred next tokens with random weights.
pub fn markov_corpus(spec: &MarkovCorpusSpec) -> Vec<Vec<TokenId>> {
    let v = spec.vocab_size as TokenId;
    let mut rng = substream(spec.seed, &["fixture", "chain"]);
    let table: Vec<Vec<(TokenId, f64)>> = (0..v)
        .map(|_| (0..spec.successors).map(|_| (rng.random_range(0..v), rng.random::<f64>() + 0.1)).collect())
        .collect();
    let mut rng = substream(spec.seed, &["fixture", "corpus"]);
    (0..spec.sequences)
        .map(|_| {
            let mut seq = vec![rng.random_range(0..v)];
            while seq.len() < spec.length {
                let prev = *seq.last().unwrap() as usize;
                let next = if rng.random::<f64>() < spec.noise {
                    rng.random_range(0..v)
                } else {
                    let row = &table[prev];
                    let total: f64 = row.iter().map(|e| e.1).sum();
                    let mut u = rng.random::<f64>() * total;
                    row.iter()
                        .find(|e| {
                            u -= e.1;
                            u < 0.0
                        })
                        .unwrap_or(&row[row.len() - 1])
                        .0
                };
                seq.push(next);
            }
            seq
        })
        .collect()
}
