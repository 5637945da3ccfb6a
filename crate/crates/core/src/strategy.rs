//! Reward/candidate rules that drive the unmasking order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::PredictiveDistribution;
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Random,
    Confidence,
    Entropy,
    Margin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    Greedy,
    Multinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub selection: Selection,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    1.0
}

impl StrategySpec {
    pub fn new(kind: StrategyKind, selection: Selection) -> Self {
        Self { kind, selection, temperature: 1.0 }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// Margin is defined on the argmax token, so it only pairs with greedy selection.
    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.kind == StrategyKind::Margin && self.selection == Selection::Multinomial {
            return Err(Error::Config("margin strategy requires greedy selection".into()));
        }
        Ok(())
    }

    /// Number of uniform draws consumed per proposed position.
    pub fn draws_per_position(&self) -> usize {
        usize::from(self.kind == StrategyKind::Random) + usize::from(self.selection == Selection::Multinomial)
    }
}

/// Reward and candidate for one masked position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub position: usize,
    pub reward: f64,
    pub candidate: TokenId,
    /// Probability of `candidate` exactly as the predictor reported it.
    pub candidate_prob: f64,
}

/// Runs the strategy on each distribution in order.
///
/// Per position the stream is consumed as: one uniform reward draw (random
/// kind only), then one uniform selection draw (multinomial only).
pub fn propose<R: Rng + ?Sized>(
    spec: &StrategySpec,
    dists: &[PredictiveDistribution],
    rng: &mut R,
) -> Result<Vec<Proposal>> {
    spec.validate()?;
    dists.iter().map(|d| propose_one(spec, d, rng)).collect()
}

fn propose_one<R: Rng + ?Sized>(spec: &StrategySpec, dist: &PredictiveDistribution, rng: &mut R) -> Result<Proposal> {
    if dist.entries.is_empty() {
        return Err(Error::InvalidInput(format!("empty distribution at position {}", dist.position)));
    }
    if spec.kind == StrategyKind::Entropy && dist.truncated {
        return Err(Error::Truncation { position: dist.position });
    }
    let random_reward = (spec.kind == StrategyKind::Random).then(|| rng.random::<f64>());
    let (candidate, candidate_prob) = match spec.selection {
        Selection::Greedy => argmax(dist),
        Selection::Multinomial => sample(dist, spec.temperature, rng.random::<f64>()),
    };
    let reward = match spec.kind {
        StrategyKind::Random => random_reward.unwrap_or_default(),
        StrategyKind::Confidence => candidate_prob,
        StrategyKind::Entropy => -entropy(dist),
        StrategyKind::Margin => margin(dist),
    };
    Ok(Proposal { position: dist.position, reward, candidate, candidate_prob })
}

/// Highest-probability entry, lowest token id on ties.
pub fn argmax(dist: &PredictiveDistribution) -> (TokenId, f64) {
    dist.entries
        .iter()
        .copied()
        .reduce(|best, e| if e.1 > best.1 || (e.1 == best.1 && e.0 < best.0) { e } else { best })
        .expect("non-empty distribution")
}

/// Shannon entropy in nats.
pub fn entropy(dist: &PredictiveDistribution) -> f64 {
    dist.entries.iter().filter(|&&(_, p)| p > 0.0).map(|&(_, p)| -p * p.ln()).sum()
}

/// Gap between the two largest probabilities (the top one alone when there is no runner-up).
pub fn margin(dist: &PredictiveDistribution) -> f64 {
    let mut top = [0.0f64; 2];
    for &(_, p) in &dist.entries {
        if p > top[0] {
            top = [p, top[0]];
        } else if p > top[1] {
            top[1] = p;
        }
    }
    top[0] - top[1]
}

// Inverse-CDF draw over entries in their stored order. Temperature reshapes
// the weights as p^(1/T); the returned probability is always the original.
fn sample(dist: &PredictiveDistribution, temperature: f64, u: f64) -> (TokenId, f64) {
    let weight = |p: f64| if temperature == 1.0 { p } else { p.powf(1.0 / temperature) };
    let total: f64 = dist.entries.iter().map(|&(_, p)| weight(p)).sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for &(t, p) in &dist.entries {
        let w = weight(p);
        if w > 0.0 {
            last_positive = Some((t, p));
        }
        acc += w;
        if target < acc {
            return (t, p);
        }
    }
    last_positive.unwrap_or(dist.entries[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::stats::chi_square_sf;

    fn dist(probs: &[f64]) -> Vec<PredictiveDistribution> {
        vec![PredictiveDistribution::from_dense(0, probs)]
    }

    #[test]
    fn confidence_greedy_takes_argmax() {
        let mut rng = substream(0, &["t"]);
        let spec = StrategySpec::new(StrategyKind::Confidence, Selection::Greedy);
        let p = propose(&spec, &dist(&[0.7, 0.2, 0.1]), &mut rng).unwrap();
        assert_eq!(p[0].candidate, 0);
        assert_eq!(p[0].reward, 0.7);
    }

    #[test]
    fn margin_reward_is_top_gap() {
        let mut rng = substream(0, &["t"]);
        let spec = StrategySpec::new(StrategyKind::Margin, Selection::Greedy);
        let p = propose(&spec, &dist(&[0.7, 0.2, 0.1]), &mut rng).unwrap();
        assert!((p[0].reward - 0.5).abs() < 1e-12);
        assert_eq!(p[0].candidate, 0);
    }

    #[test]
    fn entropy_of_uniform_four() {
        let mut rng = substream(0, &["t"]);
        let spec = StrategySpec::new(StrategyKind::Entropy, Selection::Greedy);
        let p = propose(&spec, &dist(&[0.25; 4]), &mut rng).unwrap();
        assert!((p[0].reward - (-1.3863)).abs() < 1e-4);
        assert_eq!(p[0].candidate, 0);
    }

    #[test]
    fn entropy_rejects_truncated() {
        let mut rng = substream(0, &["t"]);
        let spec = StrategySpec::new(StrategyKind::Entropy, Selection::Greedy);
        let d = vec![PredictiveDistribution::from_entries(3, vec![(0, 0.6), (1, 0.3)], true)];
        assert!(matches!(propose(&spec, &d, &mut rng), Err(Error::Truncation { position: 3 })));
    }

    #[test]
    fn margin_multinomial_rejected() {
        let spec = StrategySpec::new(StrategyKind::Margin, Selection::Multinomial);
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        assert!(StrategySpec::new(StrategyKind::Confidence, Selection::Greedy)
            .with_temperature(0.0)
            .validate()
            .is_err());
    }

    #[test]
    fn greedy_ties_pick_lowest_token() {
        let d = PredictiveDistribution::from_entries(0, vec![(3, 0.4), (1, 0.4), (2, 0.2)], false);
        assert_eq!(argmax(&d), (1, 0.4));
    }

    #[test]
    fn random_rewards_are_uniform_draws() {
        let spec = StrategySpec::new(StrategyKind::Random, Selection::Greedy);
        let dists: Vec<_> = (0..4).map(|i| PredictiveDistribution::from_dense(i, &[0.5, 0.5])).collect();
        let mut a = substream(9, &["t"]);
        let mut b = substream(9, &["t"]);
        let pa = propose(&spec, &dists, &mut a).unwrap();
        let expected: Vec<f64> = (0..4).map(|_| b.random::<f64>()).collect();
        assert_eq!(pa.iter().map(|p| p.reward).collect::<Vec<_>>(), expected);
        assert!(pa.iter().all(|p| (0.0..1.0).contains(&p.reward)));
    }

    #[test]
    fn candidate_prob_is_reported_value_bit_for_bit() {
        let probs = [0.1 + 0.2, 0.7 - 0.2 - 0.1 + 1e-17, 1.0 - (0.1 + 0.2) - (0.7 - 0.2 - 0.1 + 1e-17)];
        let d = dist(&probs);
        let mut rng = substream(4, &["t"]);
        for kind in [StrategyKind::Random, StrategyKind::Confidence, StrategyKind::Entropy] {
            for temperature in [0.5, 1.0, 2.0] {
                let spec = StrategySpec::new(kind, Selection::Multinomial).with_temperature(temperature);
                for _ in 0..50 {
                    let p = propose(&spec, &d, &mut rng).unwrap()[0];
                    assert_eq!(p.candidate_prob.to_bits(), probs[p.candidate as usize].to_bits());
                }
            }
        }
    }

    #[test]
    fn multinomial_is_seed_deterministic() {
        let spec = StrategySpec::new(StrategyKind::Confidence, Selection::Multinomial);
        let d = dist(&[0.4, 0.3, 0.2, 0.1]);
        let run = |seed| {
            let mut rng = substream(seed, &["t"]);
            (0..100).map(|_| propose(&spec, &d, &mut rng).unwrap()[0].candidate).collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn multinomial_frequencies_pass_chi_square() {
        let probs = [0.4, 0.3, 0.2, 0.1];
        let spec = StrategySpec::new(StrategyKind::Confidence, Selection::Multinomial);
        let d = dist(&probs);
        let mut rng = substream(2024, &["chi-square"]);
        let draws = 100_000;
        let mut counts = [0u64; 4];
        for _ in 0..draws {
            counts[propose(&spec, &d, &mut rng).unwrap()[0].candidate as usize] += 1;
        }
        let stat: f64 = counts
            .iter()
            .zip(probs)
            .map(|(&o, p)| {
                let e = p * draws as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let p_value = chi_square_sf(stat, 3.0);
        assert!(p_value > 0.001, "chi-square {stat}, p {p_value}");
    }

    #[test]
    fn low_temperature_sharpens() {
        let spec = StrategySpec::new(StrategyKind::Confidence, Selection::Multinomial).with_temperature(0.05);
        let d = dist(&[0.6, 0.4]);
        let mut rng = substream(5, &["t"]);
        let top = (0..1000).filter(|_| propose(&spec, &d, &mut rng).unwrap()[0].candidate == 0).count();
        assert!(top > 990, "{top}");
    }
}
