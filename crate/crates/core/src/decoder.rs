//! Sequential unmasking decoders: plain, parity-steered, and parity-steered
//! with top-k one-step lookahead, each optionally run block by block.
//!
//! Randomness: each decode owns one stream, `substream(seed, ["decode"])`.
//! Every step predicts all masked positions of the active block in ascending
//! order and the strategy consumes its draws in that order. Lookahead
//! rollouts draw from a fork of the main stream that is thrown away, so the
//! main stream never depends on the beam width.

use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parity::ParityPartition;
use crate::predictor::{PartialSequence, Predictor};
use crate::rng::{substream, StreamRng};
use crate::strategy::{propose, Proposal, StrategySpec};
use crate::TokenId;

const LOOKAHEAD_STREAM: u64 = 0x6c6f_6f6b_6168_6564;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Plain,
    Dgmark,
    Lookahead,
}

impl DecodeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::Dgmark => "dgmark",
            Self::Lookahead => "lookahead",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub length: usize,
    pub block_size: usize,
    /// Lookahead beam width `k`; 1 is standard steering.
    pub beam: usize,
    pub strategy: StrategySpec,
    pub seed: u64,
}

impl DecodeConfig {
    /// Unblocked, beam 1.
    pub fn new(length: usize, strategy: StrategySpec, seed: u64) -> Self {
        Self { length, block_size: length, beam: 1, strategy, seed }
    }

    pub fn with_block_size(mut self, block_size: usize) -> Self {
        self.block_size = block_size;
        self
    }

    pub fn with_beam(mut self, beam: usize) -> Self {
        self.beam = beam;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if self.length == 0 {
            return Err(Error::Config("length must be positive".into()));
        }
        if self.beam == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if self.block_size == 0 || self.block_size > self.length || !self.length.is_multiple_of(self.block_size) {
            return Err(Error::Config(format!(
                "block size {} must be positive and divide length {}",
                self.block_size, self.length
            )));
        }
        Ok(())
    }
}

/// The committed position, token and reported probability of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub step: usize,
    pub position: usize,
    pub candidate: TokenId,
    pub candidate_prob: f64,
}

/// Lookahead evaluation of one beam member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LookaheadScore {
    pub position: usize,
    pub reward: f64,
    pub candidate: TokenId,
    /// Parity-matching candidates among the remaining pool after committing this one.
    pub next_match_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookaheadStep {
    pub step: usize,
    pub scores: Vec<LookaheadScore>,
    pub chosen: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    /// Response positions in commitment order.
    pub order: Vec<usize>,
    /// Steps where no pool position had a parity-matching candidate.
    pub fallback_steps: Vec<usize>,
    /// Final match bits; empty for plain decoding without a partition.
    pub match_bits: Vec<u8>,
    pub candidate_set_sizes: Vec<usize>,
    pub predictor_call_log: Vec<CommitRecord>,
    /// Steps where the beam held more than one member.
    pub lookahead: Vec<LookaheadStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub tokens: Vec<TokenId>,
    pub trace: DecodeTrace,
}

impl DecodeOutput {
    pub fn match_ratio(&self) -> Option<f64> {
        (!self.trace.match_bits.is_empty())
            .then(|| self.trace.match_bits.iter().map(|&b| b as f64).sum::<f64>() / self.trace.match_bits.len() as f64)
    }
}

#[derive(Clone, Copy)]
enum Policy<'a> {
    Plain,
    Steered { partition: &'a ParityPartition, beam: usize },
}

/// Generic decoding: commit the max-reward masked position each step.
pub fn decode_plain<P: Predictor + ?Sized>(
    model: &P,
    config: &DecodeConfig,
    prompt: &[TokenId],
) -> Result<DecodeOutput> {
    run(model, config, prompt, Policy::Plain, config.length)
}

/// Parity-steered decoding (beam ignored).
pub fn decode_watermarked<P: Predictor + ?Sized>(
    model: &P,
    config: &DecodeConfig,
    prompt: &[TokenId],
    partition: &ParityPartition,
) -> Result<DecodeOutput> {
    run(model, config, prompt, Policy::Steered { partition, beam: 1 }, config.length)
}

/// Parity-steered decoding with top-`config.beam` one-step lookahead.
pub fn decode_lookahead<P: Predictor + ?Sized>(
    model: &P,
    config: &DecodeConfig,
    prompt: &[TokenId],
    partition: &ParityPartition,
) -> Result<DecodeOutput> {
    run(model, config, prompt, Policy::Steered { partition, beam: config.beam }, config.length)
}

/// Block-wise decoding. Without a partition this is plain decoding; with one
/// it steers, with lookahead when `config.beam > 1`. Parity positions stay
/// global response indices.
pub fn decode_blockwise<P: Predictor + ?Sized>(
    model: &P,
    config: &DecodeConfig,
    prompt: &[TokenId],
    partition: Option<&ParityPartition>,
) -> Result<DecodeOutput> {
    let policy = match partition {
        None => Policy::Plain,
        Some(partition) => Policy::Steered { partition, beam: config.beam },
    };
    run(model, config, prompt, policy, config.block_size)
}

/// Dispatches on an explicit mode, honoring `config.block_size`.
pub fn decode<P: Predictor + ?Sized>(
    model: &P,
    config: &DecodeConfig,
    prompt: &[TokenId],
    partition: Option<&ParityPartition>,
    mode: DecodeMode,
) -> Result<DecodeOutput> {
    let policy = match (mode, partition) {
        (DecodeMode::Plain, _) => Policy::Plain,
        (DecodeMode::Dgmark, Some(partition)) => Policy::Steered { partition, beam: 1 },
        (DecodeMode::Lookahead, Some(partition)) => Policy::Steered { partition, beam: config.beam },
        (_, None) => return Err(Error::Config(format!("{} decoding needs a partition", mode.as_str()))),
    };
    run(model, config, prompt, policy, config.block_size)
}

fn run<P: Predictor + ?Sized>(
    model: &P,
    config: &DecodeConfig,
    prompt: &[TokenId],
    policy: Policy<'_>,
    block_size: usize,
) -> Result<DecodeOutput> {
    config.with_block_size(block_size).validate()?;
    let vocab = model.vocab_size();
    if let Some(&t) = prompt.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::InvalidToken { token: t, vocab_size: vocab });
    }
    if let Policy::Steered { partition, .. } = policy {
        if partition.vocab_size() != vocab {
            return Err(Error::Config(format!(
                "partition vocabulary {} does not match model vocabulary {vocab}",
                partition.vocab_size()
            )));
        }
    }

    let n = config.length;
    let mut rng = substream(config.seed, &["decode"]);
    let mut state = PartialSequence::new(prompt.to_vec(), n);
    let mut trace = DecodeTrace::default();

    for block_start in (0..n).step_by(block_size) {
        let block = block_start..block_start + block_size;
        for _ in block.clone() {
            let step = trace.order.len();
            let abort = |e: Error| Error::Decode { step, source: Box::new(e) };
            let pool: Vec<usize> = block.clone().filter(|&p| state.is_masked(p)).collect();
            let proposals = proposals_for(model, &config.strategy, &state, &pool, &mut rng).map_err(abort)?;

            let chosen = match policy {
                Policy::Plain => {
                    trace.candidate_set_sizes.push(proposals.len());
                    ranked(proposals.iter().collect())[0]
                }
                Policy::Steered { partition, beam } => {
                    let mut matching = Vec::new();
                    for p in &proposals {
                        if partition.in_matching_set(p.position, p.candidate).map_err(abort)? {
                            matching.push(p);
                        }
                    }
                    let candidates = if matching.is_empty() {
                        trace.fallback_steps.push(step);
                        proposals.iter().collect()
                    } else {
                        matching
                    };
                    trace.candidate_set_sizes.push(candidates.len());
                    let mut beam_members = ranked(candidates);
                    beam_members.truncate(beam);
                    if beam_members.len() == 1 {
                        beam_members[0]
                    } else {
                        let scored = beam_members
                            .iter()
                            .map(|p| {
                                let next = next_match_count(model, config, partition, &state, &pool, p, &rng)?;
                                Ok(LookaheadScore {
                                    position: p.position,
                                    reward: p.reward,
                                    candidate: p.candidate,
                                    next_match_count: next,
                                })
                            })
                            .collect::<Result<Vec<_>>>()
                            .map_err(abort)?;
                        // beam members are already ordered by (reward desc, position asc)
                        let best = scored.iter().enumerate().fold(0, |best, (i, s)| {
                            if s.next_match_count > scored[best].next_match_count {
                                i
                            } else {
                                best
                            }
                        });
                        trace.lookahead.push(LookaheadStep {
                            step,
                            scores: scored,
                            chosen: beam_members[best].position,
                        });
                        beam_members[best]
                    }
                }
            };

            state.reveal(chosen.position, chosen.candidate).map_err(abort)?;
            trace.order.push(chosen.position);
            trace.predictor_call_log.push(CommitRecord {
                step,
                position: chosen.position,
                candidate: chosen.candidate,
                candidate_prob: chosen.candidate_prob,
            });
        }
    }

    let tokens = state.tokens().expect("every position committed");
    if let Policy::Steered { partition, .. } = policy {
        trace.match_bits = partition.match_bits(&tokens)?;
    }
    Ok(DecodeOutput { tokens, trace })
}

fn proposals_for<P: Predictor + ?Sized>(
    model: &P,
    strategy: &StrategySpec,
    state: &PartialSequence,
    pool: &[usize],
    rng: &mut StreamRng,
) -> Result<Vec<Proposal>> {
    let dists = model.predict(state, pool)?;
    if dists.len() != pool.len() || dists.iter().zip(pool).any(|(d, &p)| d.position != p) {
        return Err(Error::InvalidInput("predictor answered different positions than queried".into()));
    }
    propose(strategy, &dists, rng)
}

/// Orders by reward descending, then position ascending.
fn ranked(mut candidates: Vec<&Proposal>) -> Vec<Proposal> {
    candidates.sort_by(|a, b| b.reward.total_cmp(&a.reward).then(a.position.cmp(&b.position)));
    candidates.into_iter().copied().collect()
}

fn lookahead_fork(rng: &StreamRng) -> StreamRng {
    let mut fork = StreamRng::from_seed(rng.get_seed());
    fork.set_stream(LOOKAHEAD_STREAM);
    fork.set_word_pos(rng.get_word_pos());
    fork
}

fn next_match_count<P: Predictor + ?Sized>(
    model: &P,
    config: &DecodeConfig,
    partition: &ParityPartition,
    state: &PartialSequence,
    pool: &[usize],
    member: &Proposal,
    rng: &StreamRng,
) -> Result<usize> {
    let remaining: Vec<usize> = pool.iter().copied().filter(|&p| p != member.position).collect();
    if remaining.is_empty() {
        return Ok(0);
    }
    let mut hypothetical = state.clone();
    hypothetical.reveal(member.position, member.candidate)?;
    let mut fork = lookahead_fork(rng);
    let proposals = proposals_for(model, &config.strategy, &hypothetical, &remaining, &mut fork)?;
    let mut count = 0;
    for p in &proposals {
        if partition.in_matching_set(p.position, p.candidate)? {
            count += 1;
        }
    }
    Ok(count)
}
