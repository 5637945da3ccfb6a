#![allow(dead_code)]

use dgmark_core::decoder::DecodeOutput;
use dgmark_core::fixtures::{markov_corpus, MarkovCorpusSpec};
use dgmark_core::parity::{ParityPartition, PartitionMode, WatermarkKey};
use dgmark_core::predictor::{ContextMixToyModel, PartialSequence, PredictCall};
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

pub const FIXTURE_VOCAB: usize = 64;
pub const FIXTURE_ALPHA: f64 = 0.1;

pub fn fixture_model() -> ContextMixToyModel {
    let corpus = markov_corpus(&MarkovCorpusSpec::default());
    ContextMixToyModel::train_with_vocab(&corpus, FIXTURE_ALPHA, FIXTURE_VOCAB).unwrap()
}

pub fn test_key() -> WatermarkKey {
    WatermarkKey::new("acceptance", (0u8..32).map(|b| b.wrapping_mul(37).wrapping_add(11)).collect()).unwrap()
}

pub fn keyed_partition(vocab: usize) -> ParityPartition {
    ParityPartition::build(&test_key(), vocab, PartitionMode::Keyed).unwrap()
}

pub fn binomial(n: u64, k: u64) -> BigUint {
    let mut c = BigUint::one();
    for i in 0..k {
        c = c * (n - i) / (i + 1);
    }
    c
}

/// P(Bin(n, 1/2) >= g), exact up to the final division.
pub fn fair_tail(n: u64, g: u64) -> f64 {
    let mut num = BigUint::zero();
    for k in g..=n {
        num += binomial(n, k);
    }
    ratio(&num, &(BigUint::one() << n as usize))
}

fn ratio(num: &BigUint, den: &BigUint) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let k = (den.bits() + 64).saturating_sub(num.bits()) as i32;
    let q = ((num << k as usize) / den).to_f64().unwrap();
    q * 2f64.powi(-(k / 2)) * 2f64.powi(-(k - k / 2))
}

/// Smallest g with P(G >= g) <= target under the fair null.
pub fn fair_threshold(n: u64, target: f64) -> u64 {
    (0..=n + 1).find(|&g| g > n || fair_tail(n, g) <= target).unwrap()
}

/// Two-sided exact binomial test p-value (sum of outcomes no more likely than `x`).
pub fn binomial_test_two_sided(x: u64, trials: u64, p: f64) -> f64 {
    let ln_pmf = |k: u64| {
        let (n, k) = (trials as f64, k as f64);
        ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0) + k * p.ln() + (n - k) * (1.0 - p).ln()
    };
    let observed = ln_pmf(x);
    let mut total = 0.0;
    for k in 0..=trials {
        let l = ln_pmf(k);
        if l <= observed + 1e-7 {
            total += l.exp();
        }
    }
    total.min(1.0)
}

fn ln_gamma(x: f64) -> f64 {
    // Stirling series with shift; accurate to ~1e-12 for x >= 1
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= x.ln();
        x += 1.0;
    }
    let x2 = x * x;
    acc + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x) - 1.0 / (360.0 * x * x2)
        + 1.0 / (1260.0 * x2 * x2 * x)
}

/// Replays a decode against the predictor calls it made. Every call must carry
/// exactly the committed state (plus one hypothetical reveal for lookahead),
/// and every committed probability must equal the reported one bit for bit.
pub fn audit_decode(out: &DecodeOutput, calls: &[PredictCall], prompt: &[u32], block_size: usize) {
    let n = out.tokens.len();
    let mut state = PartialSequence::new(prompt.to_vec(), n);
    let mut idx = 0;
    let mut lookahead = out.trace.lookahead.iter().peekable();
    for (step, &position) in out.trace.order.iter().enumerate() {
        let block_start = (step / block_size) * block_size;
        let pool: Vec<usize> = (block_start..block_start + block_size).filter(|&p| state.is_masked(p)).collect();
        let main = &calls[idx];
        idx += 1;
        assert_eq!(main.state, state, "step {step}: predictor saw a modified state");
        assert_eq!(main.positions, pool, "step {step}: unexpected query positions");
        let rec = out.trace.predictor_call_log[step];
        assert_eq!(rec.position, position);
        assert_eq!(rec.candidate, out.tokens[position]);
        let dist = main.output.iter().find(|d| d.position == position).expect("committed position was queried");
        let reported = dist.prob_of(rec.candidate).expect("committed token was in the support");
        assert_eq!(reported.to_bits(), rec.candidate_prob.to_bits(), "step {step}: probability reweighted");

        if lookahead.peek().is_some_and(|l| l.step == step) {
            let look = lookahead.next().unwrap();
            if pool.len() > 1 {
                for score in &look.scores {
                    let call = &calls[idx];
                    idx += 1;
                    let mut hyp = state.clone();
                    hyp.reveal(score.position, score.candidate).unwrap();
                    assert_eq!(call.state, hyp, "step {step}: lookahead state differs from one hypothetical reveal");
                    let rest: Vec<usize> = pool.iter().copied().filter(|&p| p != score.position).collect();
                    assert_eq!(call.positions, rest);
                }
            }
        }
        state.reveal(position, out.tokens[position]).unwrap();
    }
    assert_eq!(idx, calls.len(), "predictor was called outside the decode loop");
}
