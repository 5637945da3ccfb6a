//! Watermark evidence from tokens and key alone.
//!
//! The global statistic counts parity matches over the whole response and
//! standardizes the count against its null law. The window statistic does
//! the same over sliding windows and averages the squared scores, so runs of
//! anti-aligned windows (left behind by insertions and deletions) count as
//! evidence too.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::null::NullModel;
use crate::parity::ParityPartition;
use crate::TokenId;

pub const DEFAULT_WINDOW: usize = 8;
pub const DEFAULT_Z_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

fn default_stride() -> usize {
    1
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, stride: 1, thresholds: Thresholds::default() }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config("window and stride must be positive".into()));
        }
        Ok(())
    }
}

/// Decision cutoffs; a statistic at or above its cutoff flags the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_win: Option<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { z: DEFAULT_Z_THRESHOLD, z_win: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalStat {
    pub n: usize,
    pub match_count: usize,
    pub z: f64,
    /// `P(G >= match_count)` under the null.
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    pub start: usize,
    pub match_count: usize,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScan {
    pub window: usize,
    pub windows: Vec<WindowStat>,
    /// Mean squared window score.
    pub z_win: f64,
}

impl WindowScan {
    /// `G_s / w` for every window.
    pub fn ratios(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.match_count as f64 / self.window as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decisions {
    pub z: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_win: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub global: GlobalStat,
    pub scan: WindowScan,
    pub decisions: Decisions,
}

pub fn global_z(tokens: &[TokenId], partition: &ParityPartition) -> Result<GlobalStat> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("cannot detect on an empty sequence".into()));
    }
    let bits = partition.match_bits(tokens)?;
    Ok(global_from_bits(&bits, &NullModel::from_partition(partition)))
}

/// Global statistic over precomputed match bits.
pub fn global_from_bits(bits: &[u8], null: &NullModel) -> GlobalStat {
    let span = null.span(0, bits.len());
    let match_count = bits.iter().map(|&b| b as usize).sum();
    GlobalStat { n: bits.len(), match_count, z: span.z(match_count), p_value: span.upper_tail(match_count) }
}

pub fn window_scan(
    tokens: &[TokenId],
    partition: &ParityPartition,
    window: usize,
    stride: usize,
) -> Result<WindowScan> {
    let bits = partition.match_bits(tokens)?;
    scan_bits(&bits, &NullModel::from_partition(partition), window, stride)
}

/// Window statistic over precomputed match bits.
pub fn scan_bits(bits: &[u8], null: &NullModel, window: usize, stride: usize) -> Result<WindowScan> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    if window > bits.len() {
        return Err(Error::InvalidWindow { window, len: bits.len() });
    }
    // window nulls only depend on the start parity
    let spans = [null.span(0, window), null.span(1, window)];
    let mut prefix = Vec::with_capacity(bits.len() + 1);
    prefix.push(0usize);
    for &b in bits {
        prefix.push(prefix.last().unwrap() + b as usize);
    }
    let windows: Vec<WindowStat> = (0..=bits.len() - window)
        .step_by(stride)
        .map(|start| {
            let match_count = prefix[start + window] - prefix[start];
            WindowStat { start, match_count, z: spans[start % 2].z(match_count) }
        })
        .collect();
    let z_win = windows.iter().map(|w| w.z * w.z).sum::<f64>() / windows.len() as f64;
    Ok(WindowScan { window, windows, z_win })
}

/// One-sided decisions with `>=` semantics.
pub fn decide(global: &GlobalStat, z_win: Option<f64>, thresholds: &Thresholds) -> Decisions {
    Decisions { z: global.z >= thresholds.z, z_win: thresholds.z_win.zip(z_win).map(|(cut, stat)| stat >= cut) }
}

/// Full report: global statistic, window scan and decisions.
pub fn detect(tokens: &[TokenId], partition: &ParityPartition, config: &DetectorConfig) -> Result<DetectionReport> {
    config.validate()?;
    if tokens.is_empty() {
        return Err(Error::InvalidInput("cannot detect on an empty sequence".into()));
    }
    let bits = partition.match_bits(tokens)?;
    let null = NullModel::from_partition(partition);
    let global = global_from_bits(&bits, &null);
    let scan = scan_bits(&bits, &null, config.window, config.stride)?;
    let decisions = decide(&global, Some(scan.z_win), &config.thresholds);
    Ok(DetectionReport { global, scan, decisions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parity::{PartitionMode, WatermarkKey};
    use crate::rng::substream;
    use crate::stats::chi_square_sf;
    use rand::Rng;

    fn mod2(vocab: usize) -> ParityPartition {
        let key = WatermarkKey::new("t", vec![1; 16]).unwrap();
        ParityPartition::build(&key, vocab, PartitionMode::TokenIdMod2).unwrap()
    }

    /// Tokens under the mod-2 partition whose match bits are `bits`.
    fn tokens_for_bits(bits: &[u8]) -> Vec<TokenId> {
        bits.iter().enumerate().map(|(i, &b)| if b == 1 { (i % 2) as u32 } else { 1 - (i % 2) as u32 }).collect()
    }

    #[test]
    fn global_z_examples() {
        let p = mod2(2);
        let mut bits = vec![1u8; 128];
        bits.extend(vec![0u8; 128]);
        assert_eq!(global_z(&tokens_for_bits(&bits), &p).unwrap().z, 0.0);
        let mut bits = vec![1u8; 160];
        bits.extend(vec![0u8; 96]);
        let g = global_z(&tokens_for_bits(&bits), &p).unwrap();
        assert_eq!(g.match_count, 160);
        assert_eq!(g.z, 4.0);
        // exact big-integer tail, see tests/oracles.rs
        assert!((g.p_value - 3.802648956855043e-05).abs() < 1e-15, "{}", g.p_value);
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(matches!(global_z(&[], &mod2(2)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn window_examples() {
        let null = NullModel::FAIR;
        let scan = scan_bits(&[1, 1, 1, 1, 1, 1, 1, 1], &null, 8, 1).unwrap();
        assert!((scan.windows[0].z - 2.8284).abs() < 1e-4);
        assert!((scan.z_win - 8.0).abs() < 1e-12);
        let scan = scan_bits(&[1, 0, 1, 0, 1, 0, 1, 0], &null, 8, 1).unwrap();
        assert_eq!(scan.windows[0].z, 0.0);
        assert!(matches!(scan_bits(&[1, 0], &null, 8, 1), Err(Error::InvalidWindow { window: 8, len: 2 })));
    }

    #[test]
    fn stride_controls_window_starts() {
        let bits = vec![1u8; 20];
        let scan = scan_bits(&bits, &NullModel::FAIR, 8, 4).unwrap();
        assert_eq!(scan.windows.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0, 4, 8, 12]);
    }

    #[test]
    fn z_win_is_mean_of_squares() {
        let mut rng = substream(3, &["t"]);
        let bits: Vec<u8> = (0..50).map(|_| rng.random_range(0..2)).collect();
        let scan = scan_bits(&bits, &NullModel::FAIR, 8, 1).unwrap();
        let manual: f64 = (0..=42)
            .map(|s| {
                let g: usize = bits[s..s + 8].iter().map(|&b| b as usize).sum();
                let z = (g as f64 - 4.0) / 2f64.sqrt();
                z * z
            })
            .sum::<f64>()
            / 43.0;
        assert!((scan.z_win - manual).abs() < 1e-12);
    }

    #[test]
    fn null_z_win_near_one() {
        let mut rng = substream(11, &["null-zwin"]);
        let mean: f64 = (0..1000)
            .map(|_| {
                let bits: Vec<u8> = (0..4096).map(|_| rng.random_range(0..2)).collect();
                scan_bits(&bits, &NullModel::FAIR, 8, 1).unwrap().z_win
            })
            .sum::<f64>()
            / 1000.0;
        assert!((0.9..=1.1).contains(&mean), "{mean}");
    }

    #[test]
    fn decisions_are_one_sided_with_ge() {
        let g = |z| GlobalStat { n: 256, match_count: 0, z, p_value: 0.0 };
        let t = Thresholds { z: 4.0, z_win: Some(3.0) };
        assert!(decide(&g(4.2), None, &t).z);
        assert!(decide(&g(4.0), None, &t).z);
        let d = decide(&g(-6.0), Some(5.0), &t);
        assert!(!d.z);
        assert_eq!(d.z_win, Some(true));
        assert_eq!(decide(&g(0.0), Some(1.0), &Thresholds::default()).z_win, None);
    }

    #[test]
    fn parity_flip_after_index_shift() {
        // alternate-partition tokens; shifting a suffix by one flips its match bits
        let p = mod2(10);
        let mut rng = substream(5, &["flip"]);
        let tokens: Vec<TokenId> = (0..64).map(|_| rng.random_range(0..10)).collect();
        let bits = p.match_bits(&tokens).unwrap();
        let mut shifted = tokens.clone();
        shifted.insert(30, 4);
        let shifted_bits = p.match_bits(&shifted).unwrap();
        for i in 30..64 {
            assert_eq!(shifted_bits[i + 1], 1 - bits[i]);
        }
        assert_eq!(&shifted_bits[..30], &bits[..30]);
    }

    #[test]
    fn null_match_count_is_exact_binomial() {
        let p =
            ParityPartition::build(&WatermarkKey::new("k", vec![9; 32]).unwrap(), 1000, PartitionMode::Keyed).unwrap();
        let n = 64;
        let sims = 100_000;
        let mut rng = substream(77, &["exactness"]);
        let mut counts = vec![0u64; n + 1];
        let mut tokens = vec![0u32; n];
        for _ in 0..sims {
            tokens.iter_mut().for_each(|t| *t = rng.random_range(0..1000));
            counts[global_z(&tokens, &p).unwrap().match_count] += 1;
        }
        let pmf = NullModel::from_partition(&p).span(0, n).pmf();
        // pool sparse tails into bins with expectation >= 5
        let (mut stat, mut bins) = (0.0, 0);
        let (mut obs, mut exp) = (0.0, 0.0);
        for g in 0..=n {
            obs += counts[g] as f64;
            exp += pmf[g] * sims as f64;
            if exp >= 5.0 && pmf[g + 1..].iter().sum::<f64>() * sims as f64 >= 5.0 {
                stat += (obs - exp).powi(2) / exp;
                bins += 1;
                obs = 0.0;
                exp = 0.0;
            }
        }
        stat += (obs - exp).powi(2) / exp;
        bins += 1;
        let p_value = chi_square_sf(stat, (bins - 1) as f64);
        assert!(p_value > 0.001, "chi2 {stat} on {bins} bins, p {p_value}");
    }

    #[test]
    fn odd_vocab_null_standardization() {
        let p = ParityPartition::build(&WatermarkKey::new("k", vec![2; 16]).unwrap(), 5, PartitionMode::TokenIdMod2)
            .unwrap();
        // bit 0 holds {0,2,4}: even positions match w.p. 3/5, odd positions 2/5
        let g = global_z(&[0, 1, 2, 3], &p).unwrap();
        assert_eq!(g.match_count, 4);
        let mean = 2.0 * 0.6 + 2.0 * 0.4;
        let var = 2.0 * 0.24 + 2.0 * 0.24;
        assert!((g.z - (4.0 - mean) / f64::sqrt(var)).abs() < 1e-12);
        assert!((g.p_value - 0.6f64.powi(2) * 0.4f64.powi(2)).abs() < 1e-15);
    }
}
