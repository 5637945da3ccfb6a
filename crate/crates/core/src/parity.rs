//! Keyed balanced binary partition of the vocabulary.
//!
//! Every token gets a bit. The matching set at response position `i` is the
//! set of tokens whose bit equals `i mod 2`; the residual set is its
//! complement. Positions are 0-based from the first response token.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::TokenId;

pub const MIN_KEY_BYTES: usize = 16;

/// Secret watermark key.
#[derive(Clone, PartialEq, Eq)]
pub struct WatermarkKey {
    key_id: String,
    bytes: Vec<u8>,
}

impl WatermarkKey {
    pub fn new(key_id: impl Into<String>, bytes: Vec<u8>) -> Result<Self> {
        let key_id = key_id.into();
        if bytes.len() < MIN_KEY_BYTES {
            return Err(Error::InvalidKey(format!(
                "key must hold at least {MIN_KEY_BYTES} bytes, got {}",
                bytes.len()
            )));
        }
        if key_id.is_empty() || key_id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidKey(format!("key id {key_id:?} must be non-empty without whitespace")));
        }
        Ok(Self { key_id, bytes })
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Parses the single-record key file format: `<key_id> <hex bytes>`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let line = records.next().ok_or_else(|| Error::InvalidKey("key file holds no record".into()))?;
        if records.next().is_some() {
            return Err(Error::InvalidKey("key file must hold exactly one record".into()));
        }
        let mut fields = line.split_whitespace();
        let (Some(key_id), Some(hex_bytes), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::InvalidKey("expected `<key_id> <hex bytes>`".into()));
        };
        let bytes = hex::decode(hex_bytes).map_err(|e| Error::InvalidKey(format!("bad hex: {e}")))?;
        Self::new(key_id, bytes)
    }

    pub fn to_record(&self) -> String {
        format!("{} {}\n", self.key_id, hex::encode(&self.bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_record())?;
        Ok(())
    }
}

impl fmt::Debug for WatermarkKey {
    // Never print the secret.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WatermarkKey").field("key_id", &self.key_id).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    /// Key-dependent, exactly balanced assignment.
    #[default]
    Keyed,
    /// `bit = token id mod 2`, ignoring the key.
    TokenIdMod2,
}

/// Immutable token → bit labeling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityPartition {
    bits: Vec<u8>,
    mode: PartitionMode,
    ones: usize,
}

impl ParityPartition {
    /// Builds the partition for `vocab_size` tokens.
    ///
    /// Keyed mode: two 64-bit subkeys `(k0, k1)` are the first 16 bytes of
    /// `SHA-256("dgmark/partition/v1" || key)`. Token `v` gets the mix value
    /// `fmix64(fmix64(v ^ k0) + k1)` (murmur3 finalizer, wrapping add). Token
    /// ids are sorted by mix value, ties by id, and a token's bit is the
    /// parity of its rank. The result is balanced to within one token.
    pub fn build(key: &WatermarkKey, vocab_size: usize, mode: PartitionMode) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::InvalidVocabulary(format!("vocab_size must be >= 2, got {vocab_size}")));
        }
        if vocab_size > u32::MAX as usize {
            return Err(Error::InvalidVocabulary(format!("vocab_size {vocab_size} exceeds the token id range")));
        }
        let bits = match mode {
            PartitionMode::TokenIdMod2 => (0..vocab_size).map(|v| (v % 2) as u8).collect(),
            PartitionMode::Keyed => {
                let (k0, k1) = subkeys(key);
                let mut ranked: Vec<(u64, u32)> = (0..vocab_size as u32).map(|v| (keyed_mix(v, k0, k1), v)).collect();
                ranked.sort_unstable();
                let mut bits = vec![0u8; vocab_size];
                for (rank, &(_, v)) in ranked.iter().enumerate() {
                    bits[v as usize] = (rank % 2) as u8;
                }
                bits
            }
        };
        let ones = bits.iter().filter(|&&b| b == 1).count();
        Ok(Self { bits, mode, ones })
    }

    pub fn vocab_size(&self) -> usize {
        self.bits.len()
    }

    pub fn mode(&self) -> PartitionMode {
        self.mode
    }

    pub fn bit_of(&self, token: TokenId) -> Result<u8> {
        self.bits.get(token as usize).copied().ok_or(Error::InvalidToken { token, vocab_size: self.bits.len() })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Whether `token` lies in the matching set of `position`.
    pub fn in_matching_set(&self, position: usize, token: TokenId) -> Result<bool> {
        Ok(self.bit_of(token)? as usize == position % 2)
    }

    /// Number of tokens carrying `bit`.
    pub fn class_size(&self, bit: u8) -> usize {
        if bit == 0 {
            self.bits.len() - self.ones
        } else {
            self.ones
        }
    }

    /// Size of the matching set at `position`.
    pub fn matching_set_size(&self, position: usize) -> usize {
        self.class_size((position % 2) as u8)
    }

    /// Null probability that a uniform token matches at `position`: `|G_i| / |V|`.
    pub fn null_match_prob(&self, position: usize) -> f64 {
        self.matching_set_size(position) as f64 / self.bits.len() as f64
    }

    /// Match bits `m_i` of a response sequence.
    pub fn match_bits(&self, tokens: &[TokenId]) -> Result<Vec<u8>> {
        tokens.iter().enumerate().map(|(i, &t)| self.in_matching_set(i, t).map(u8::from)).collect()
    }
}

fn subkeys(key: &WatermarkKey) -> (u64, u64) {
    let digest = Sha256::new().chain_update(b"dgmark/partition/v1").chain_update(key.bytes()).finalize();
    let k0 = u64::from_le_bytes(digest[0..8].try_into().unwrap());
    let k1 = u64::from_le_bytes(digest[8..16].try_into().unwrap());
    (k0, k1)
}

fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

fn keyed_mix(token: u32, k0: u64, k1: u64) -> u64 {
    fmix64(fmix64(token as u64 ^ k0).wrapping_add(k1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(seed: u8) -> WatermarkKey {
        WatermarkKey::new("test", (0..32).map(|i| i ^ seed).collect()).unwrap()
    }

    #[test]
    fn mod2_mode_ignores_key() {
        let p = ParityPartition::build(&key(1), 4, PartitionMode::TokenIdMod2).unwrap();
        assert_eq!(p.bits(), &[0, 1, 0, 1]);
        let q = ParityPartition::build(&key(9), 4, PartitionMode::TokenIdMod2).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn two_token_vocab_splits() {
        for mode in [PartitionMode::Keyed, PartitionMode::TokenIdMod2] {
            let p = ParityPartition::build(&key(3), 2, mode).unwrap();
            let mut bits = p.bits().to_vec();
            bits.sort();
            assert_eq!(bits, vec![0, 1]);
        }
    }

    #[test]
    fn keyed_thousand_is_exactly_balanced_and_deterministic() {
        let a = ParityPartition::build(&key(5), 1000, PartitionMode::Keyed).unwrap();
        let b = ParityPartition::build(&key(5), 1000, PartitionMode::Keyed).unwrap();
        assert_eq!(a.bits().iter().filter(|&&b| b == 0).count(), 500);
        assert_eq!(a, b);
    }

    #[test]
    fn different_keys_give_different_partitions() {
        let a = ParityPartition::build(&key(5), 1000, PartitionMode::Keyed).unwrap();
        let b = ParityPartition::build(&key(6), 1000, PartitionMode::Keyed).unwrap();
        assert_ne!(a, b);
        let agree = a.bits().iter().zip(b.bits()).filter(|(x, y)| x == y).count();
        assert!((400..600).contains(&agree), "agreement {agree}");
    }

    #[test]
    fn vocab_below_two_rejected() {
        assert!(matches!(ParityPartition::build(&key(0), 1, PartitionMode::Keyed), Err(Error::InvalidVocabulary(_))));
    }

    #[test]
    fn matching_set_examples() {
        let p = ParityPartition::build(&key(0), 8, PartitionMode::TokenIdMod2).unwrap();
        assert!(p.in_matching_set(0, 4).unwrap());
        assert!(!p.in_matching_set(0, 5).unwrap());
        assert!(p.in_matching_set(3, 7).unwrap());
        assert!(matches!(p.in_matching_set(0, 8), Err(Error::InvalidToken { token: 8, .. })));
    }

    #[test]
    fn short_key_rejected() {
        assert!(WatermarkKey::new("k", vec![0; 15]).is_err());
        assert!(WatermarkKey::new("k", vec![0; 16]).is_ok());
    }

    #[test]
    fn key_file_round_trip() {
        let k = key(42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wm.key");
        k.save(&path).unwrap();
        assert_eq!(WatermarkKey::load(&path).unwrap(), k);
        assert!(WatermarkKey::parse("k zz").is_err());
        assert!(WatermarkKey::parse("").is_err());
        assert!(format!("{k:?}").find("bytes").is_none());
    }

    #[test]
    fn odd_vocab_class_sizes() {
        let p = ParityPartition::build(&key(2), 7, PartitionMode::Keyed).unwrap();
        assert_eq!(p.class_size(0), 4);
        assert_eq!(p.class_size(1), 3);
        assert_eq!(p.null_match_prob(0), 4.0 / 7.0);
        assert_eq!(p.null_match_prob(1), 3.0 / 7.0);
    }

    proptest! {
        #[test]
        fn balance_and_alternation(vocab in 2usize..600, seed in any::<u8>(), keyed in any::<bool>()) {
            let mode = if keyed { PartitionMode::Keyed } else { PartitionMode::TokenIdMod2 };
            let p = ParityPartition::build(&key(seed), vocab, mode).unwrap();
            let zeros = p.class_size(0) as i64;
            let ones = p.class_size(1) as i64;
            prop_assert!((zeros - ones).abs() <= 1);
            if vocab % 2 == 0 {
                prop_assert_eq!(zeros, ones);
                // exact-count probability of a uniform token matching
                for pos in 0..4 {
                    let hits = (0..vocab as u32).filter(|&t| p.in_matching_set(pos, t).unwrap()).count();
                    prop_assert_eq!(2 * hits, vocab);
                }
            }
            for pos in 0..6usize {
                for t in 0..vocab as u32 {
                    let g = p.in_matching_set(pos, t).unwrap();
                    prop_assert_eq!(g, p.in_matching_set(pos + 2, t).unwrap());
                    prop_assert_eq!(g, !p.in_matching_set(pos + 1, t).unwrap());
                }
                prop_assert_eq!(p.matching_set_size(pos) + p.matching_set_size(pos + 1), vocab);
            }
        }
    }
}
