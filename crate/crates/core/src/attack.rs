//! Random token-level post-editing: insertion, deletion, substitution.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Insert,
    Delete,
    Substitute,
}

impl AttackKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Insert => "insert",
            Self::Delete => "delete",
            Self::Substitute => "substitute",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub seed: u64,
    pub vocab_size: usize,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        if self.kind != AttackKind::Delete && self.vocab_size < 2 {
            return Err(Error::Config("attack vocabulary needs at least 2 tokens".into()));
        }
        Ok(())
    }

    /// `round(epsilon * n)`, halves rounded up.
    pub fn edit_count(&self, n: usize) -> usize {
        (self.epsilon * n as f64 + 0.5).floor() as usize
    }
}

/// Applies `spec` to `tokens`.
///
/// Insertions pick each gap (0..=n, gaps of the original sequence) with
/// replacement; several insertions in one gap keep their draw order.
/// Deletions and substitutions touch distinct positions, and a substituted
/// token always differs from the original.
pub fn apply_attack(tokens: &[TokenId], spec: &AttackSpec) -> Result<Vec<TokenId>> {
    spec.validate()?;
    if tokens.is_empty() {
        return Err(Error::InvalidInput("cannot attack an empty sequence".into()));
    }
    let n = tokens.len();
    let count = spec.edit_count(n);
    if count == 0 {
        return Ok(tokens.to_vec());
    }
    let mut rng = substream(spec.seed, &["attack", spec.kind.as_str()]);
    let vocab = spec.vocab_size as TokenId;
    match spec.kind {
        AttackKind::Insert => {
            let mut inserts: Vec<(usize, usize, TokenId)> =
                (0..count).map(|i| (rng.random_range(0..=n), i, rng.random_range(0..vocab))).collect();
            inserts.sort_unstable();
            let mut out = Vec::with_capacity(n + count);
            let mut pending = inserts.into_iter().peekable();
            for (gap, &token) in tokens.iter().enumerate() {
                while let Some((_, _, t)) = pending.next_if(|&(g, _, _)| g == gap) {
                    out.push(t);
                }
                out.push(token);
            }
            out.extend(pending.map(|(_, _, t)| t));
            Ok(out)
        }
        AttackKind::Delete => {
            if count >= n {
                return Err(Error::DegenerateAttack(format!("deleting {count} of {n} tokens leaves nothing")));
            }
            let mut drop = vec![false; n];
            for i in sample(&mut rng, n, count) {
                drop[i] = true;
            }
            Ok(tokens.iter().zip(&drop).filter(|(_, &d)| !d).map(|(&t, _)| t).collect())
        }
        AttackKind::Substitute => {
            let mut out = tokens.to_vec();
            for i in sample(&mut rng, n, count) {
                let orig = out[i];
                let mut r = rng.random_range(0..vocab - 1);
                if orig < vocab && r >= orig {
                    r += 1;
                }
                out[i] = r;
            }
            Ok(out)
        }
    }
}
