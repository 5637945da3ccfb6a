use super::{check_query, PartialSequence, PredictiveDistribution, Predictor};
use crate::error::{Error, Result};

/// Context-free model: position `i` always predicts `q_i`, whatever is revealed.
#[derive(Debug, Clone)]
pub struct FactorizedToyModel {
    vocab_size: usize,
    per_position: Vec<PredictiveDistribution>,
}

impl FactorizedToyModel {
    pub fn new(per_position: Vec<Vec<f64>>) -> Result<Self> {
        let vocab_size = per_position
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidInput("factorized model needs at least one position".into()))?;
        let mut dists = Vec::with_capacity(per_position.len());
        for (i, q) in per_position.iter().enumerate() {
            if q.len() != vocab_size {
                return Err(Error::InvalidInput(format!(
                    "position {i} has {} probabilities, expected {vocab_size}",
                    q.len()
                )));
            }
            let d = PredictiveDistribution::from_dense(i, q);
            d.validate()?;
            dists.push(d);
        }
        Ok(Self { vocab_size, per_position: dists })
    }

    /// Uniform `q_i` over `vocab_size` tokens at every one of `length` positions.
    pub fn uniform(vocab_size: usize, length: usize) -> Result<Self> {
        Self::new(vec![vec![1.0 / vocab_size as f64; vocab_size]; length])
    }

    pub fn len(&self) -> usize {
        self.per_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_position.is_empty()
    }

    pub fn distribution(&self, position: usize) -> Option<&PredictiveDistribution> {
        self.per_position.get(position)
    }
}

impl Predictor for FactorizedToyModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn predict(&self, state: &PartialSequence, positions: &[usize]) -> Result<Vec<PredictiveDistribution>> {
        check_query(state, positions)?;
        positions
            .iter()
            .map(|&p| {
                self.per_position.get(p).cloned().ok_or_else(|| {
                    Error::InvalidQuery(format!("factorized model covers {} positions, asked for {p}", self.len()))
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_q_regardless_of_context() {
        let m = FactorizedToyModel::new(vec![vec![0.9, 0.1], vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
        let empty = PartialSequence::new(vec![], 3);
        let mut partial = PartialSequence::new(vec![1, 0, 1], 3);
        partial.reveal(0, 1).unwrap();
        let a = m.predict(&empty, &[1, 2]).unwrap();
        let b = m.predict(&partial, &[1, 2]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].entries, vec![(0, 0.6), (1, 0.4)]);
        assert!(m.predict(&partial, &[0]).is_err());
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(FactorizedToyModel::new(vec![vec![0.5, 0.4]]).is_err());
        assert!(FactorizedToyModel::new(vec![vec![0.5, 0.5], vec![1.0]]).is_err());
        assert!(FactorizedToyModel::new(vec![]).is_err());
    }
}
