//! Detection thresholds for a target false-positive rate.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::scan_bits;
use crate::error::{Error, Result};
use crate::null::NullModel;
use crate::rng::substream;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullMethod {
    ExactBinomial,
    MonteCarlo,
}

/// Threshold on the global statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZCalibration {
    pub method: NullMethod,
    pub n: usize,
    pub target_fpr: f64,
    /// Flag when the match count is at least this.
    pub match_threshold: usize,
    /// The same cut expressed on the z scale.
    pub z_threshold: f64,
    /// Null exceedance probability at the threshold (exact or simulated).
    pub achieved_fpr: f64,
}

/// Threshold on the window statistic, always by simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZWinCalibration {
    pub n: usize,
    pub window: usize,
    pub stride: usize,
    pub target_fpr: f64,
    pub threshold: f64,
    pub achieved_fpr: f64,
    pub samples: usize,
    pub seed: u64,
}

fn check_target(target_fpr: f64) -> Result<()> {
    if !(target_fpr > 0.0 && target_fpr <= 0.5) {
        return Err(Error::Config(format!("target fpr must lie in (0, 0.5], got {target_fpr}")));
    }
    Ok(())
}

/// Smallest match count whose exact null tail is at most `target_fpr`.
pub fn calibrate_z_exact(n: usize, null: &NullModel, target_fpr: f64) -> Result<ZCalibration> {
    check_target(target_fpr)?;
    if n == 0 {
        return Err(Error::Config("sequence length must be positive".into()));
    }
    let span = null.span(0, n);
    let pmf = span.pmf();
    let mut tail = 0.0;
    let mut threshold = None;
    // walk down from the top while the tail stays within target
    for g in (0..=n).rev() {
        let next = tail + pmf[g];
        if next > target_fpr {
            break;
        }
        tail = next;
        threshold = Some((g, tail));
    }
    let (match_threshold, achieved_fpr) =
        threshold.ok_or(Error::CalibrationInfeasible { target: target_fpr, floor: pmf[n] })?;
    Ok(ZCalibration {
        method: NullMethod::ExactBinomial,
        n,
        target_fpr,
        match_threshold,
        z_threshold: span.z(match_threshold),
        achieved_fpr,
    })
}

/// Global threshold from simulated null match counts.
pub fn calibrate_z_monte_carlo(
    n: usize,
    null: &NullModel,
    target_fpr: f64,
    samples: usize,
    seed: u64,
) -> Result<ZCalibration> {
    check_target(target_fpr)?;
    if n == 0 || samples == 0 {
        return Err(Error::Config("sequence length and sample count must be positive".into()));
    }
    let counts: Vec<f64> = simulate(samples, seed, "global", |rng, bits| {
        fill_null_bits(rng, null, n, bits);
        bits.iter().map(|&b| b as f64).sum()
    });
    let (threshold, achieved_fpr) = empirical_threshold(counts, target_fpr)?;
    let match_threshold = threshold.ceil() as usize;
    Ok(ZCalibration {
        method: NullMethod::MonteCarlo,
        n,
        target_fpr,
        match_threshold,
        z_threshold: null.span(0, n).z(match_threshold),
        achieved_fpr,
    })
}

/// Window-statistic threshold from `samples` simulated null sequences.
pub fn calibrate_z_win(
    n: usize,
    window: usize,
    stride: usize,
    null: &NullModel,
    target_fpr: f64,
    samples: usize,
    seed: u64,
) -> Result<ZWinCalibration> {
    check_target(target_fpr)?;
    if samples == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    if window > n {
        return Err(Error::InvalidWindow { window, len: n });
    }
    let stats = simulate(samples, seed, "z-win", |rng, bits| {
        fill_null_bits(rng, null, n, bits);
        scan_bits(bits, null, window, stride).expect("window fits").z_win
    });
    let (threshold, achieved_fpr) = empirical_threshold(stats, target_fpr)?;
    Ok(ZWinCalibration { n, window, stride, target_fpr, threshold, achieved_fpr, samples, seed })
}

/// Runs `stat` on `samples` null draws. Chunks of a fixed size each own a
/// substream, so results do not depend on the worker count.
fn simulate<F>(samples: usize, seed: u64, label: &str, stat: F) -> Vec<f64>
where
    F: Fn(&mut crate::rng::StreamRng, &mut Vec<u8>) -> f64 + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = substream(seed, &["calibrate", label, &c.to_string()]);
            let mut bits = Vec::new();
            let len = CHUNK.min(samples - c * CHUNK);
            (0..len).map(|_| stat(&mut rng, &mut bits)).collect::<Vec<_>>()
        })
        .collect()
}

pub(crate) fn fill_null_bits<R: RngCore>(rng: &mut R, null: &NullModel, n: usize, bits: &mut Vec<u8>) {
    bits.clear();
    if null.is_fair() {
        while bits.len() < n {
            let word = rng.next_u64();
            let take = (n - bits.len()).min(64);
            bits.extend((0..take).map(|i| (word >> i & 1) as u8));
        }
    } else {
        bits.extend((0..n).map(|i| u8::from(rng.random::<f64>() < null.prob_at(i))));
    }
}

/// Smallest observed value `t` with `#{x >= t} / N <= target`, or the next
/// float above the maximum when ties at the top already exceed the target.
fn empirical_threshold(mut values: Vec<f64>, target_fpr: f64) -> Result<(f64, f64)> {
    let total = values.len();
    let allowed = (target_fpr * total as f64).floor() as usize;
    if allowed == 0 {
        return Err(Error::CalibrationInfeasible { target: target_fpr, floor: 1.0 / total as f64 });
    }
    values.sort_by(|a, b| b.total_cmp(a));
    // values[..i] are the exceedances of threshold values[i - 1]
    let mut best = (values[0].next_up(), 0.0);
    let mut i = 0;
    while i < total {
        let v = values[i];
        let mut j = i;
        while j < total && values[j] == v {
            j += 1;
        }
        if j > allowed {
            break;
        }
        best = (v, j as f64 / total as f64);
        i = j;
    }
    Ok(best)
}
