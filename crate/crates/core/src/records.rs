//! JSONL record schemas shared by the command-line tools.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attack::AttackKind;
use crate::decoder::DecodeMode;
use crate::detector::Decisions;
use crate::error::{Error, Result};
use crate::TokenId;

/// Pre-tokenized corpus or prompt line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackInfo {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub seed: u64,
}

/// One generated sequence, optionally post-edited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: String,
    pub mode: DecodeMode,
    pub k: usize,
    pub block_size: usize,
    pub seed: u64,
    pub tokens: Vec<TokenId>,
    pub order: Vec<usize>,
    pub fallback_steps: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackInfo>,
}

/// Any record carrying an id and a token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct TokensRecord {
    pub id: String,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub id: String,
    pub n: usize,
    #[serde(rename = "G")]
    pub match_count: usize,
    pub z: f64,
    pub p_value: f64,
    pub z_win: f64,
    pub decisions: Decisions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_ratios: Option<Vec<f64>>,
}

/// Per-record failure written in place of a detection report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub id: String,
    pub error: String,
}

/// A detection-output line: a report or a per-record error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetectionLine {
    Report(DetectionRecord),
    Error(RecordError),
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_jsonl(BufReader::new(file))
}

pub fn parse_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::InvalidInput(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_record_field_names() {
        let r = DecodeRecord {
            id: "p0-s0".into(),
            mode: DecodeMode::Lookahead,
            k: 3,
            block_size: 8,
            seed: 5,
            tokens: vec![1, 2],
            order: vec![1, 0],
            fallback_steps: vec![],
            attack: None,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(
            json,
            r#"{"id":"p0-s0","mode":"lookahead","k":3,"block_size":8,"seed":5,"tokens":[1,2],"order":[1,0],"fallback_steps":[]}"#
        );
        let attacked =
            DecodeRecord { attack: Some(AttackInfo { kind: AttackKind::Delete, epsilon: 0.2, seed: 1 }), ..r };
        assert!(serde_json::to_string(&attacked)
            .unwrap()
            .ends_with(r#""attack":{"kind":"delete","epsilon":0.2,"seed":1}}"#));
    }

    #[test]
    fn detection_line_variants() {
        let rep = r#"{"id":"a","n":4,"G":3,"z":1.0,"p_value":0.3125,"z_win":0.5,"decisions":{"z":false}}"#;
        assert!(
            matches!(serde_json::from_str::<DetectionLine>(rep).unwrap(), DetectionLine::Report(r) if r.match_count == 3)
        );
        let err = r#"{"id":"b","error":"bad token"}"#;
        assert!(matches!(serde_json::from_str::<DetectionLine>(err).unwrap(), DetectionLine::Error(_)));
    }

    #[test]
    fn jsonl_round_trip_and_line_errors() {
        let recs =
            vec![CorpusRecord { id: "a".into(), tokens: vec![1, 2] }, CorpusRecord { id: "b".into(), tokens: vec![] }];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        assert_eq!(parse_jsonl::<CorpusRecord, _>(&buf[..]).unwrap(), recs);
        let bad = b"{\"id\":\"a\",\"tokens\":[1]}\nnot json\n";
        let err = parse_jsonl::<CorpusRecord, _>(&bad[..]).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
