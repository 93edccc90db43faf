//! Offline verification of exported enforcer histories and node chains.

use std::fmt;

use hybrid_core::ccc::{parse_history, verify_history, HistoryParseError, HISTORY_FORMAT};
use hybrid_core::ledger::{parse_chain, verify_exported_chain, ChainParseError, CHAIN_FORMAT};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    History,
    Chain,
}

impl fmt::Display for ExportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportKind::History => "history",
            ExportKind::Chain => "chain",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verified {
    pub kind: ExportKind,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unrecognised export format {0:?}")]
    UnknownFormat(String),
    /// `record` is zero-based; `line` counts the header as line 1.
    #[error("{kind} diverges at record {record} (line {line}): {detail}")]
    Divergence {
        kind: ExportKind,
        record: usize,
        line: usize,
        detail: String,
    },
}

impl From<HistoryParseError> for VerifyError {
    fn from(e: HistoryParseError) -> Self {
        match e {
            HistoryParseError::Malformed { line, message } => VerifyError::Parse { line, message },
            HistoryParseError::Empty => VerifyError::Parse {
                line: 1,
                message: "empty file".into(),
            },
        }
    }
}

impl From<ChainParseError> for VerifyError {
    fn from(e: ChainParseError) -> Self {
        match e {
            ChainParseError::Malformed { line, message } => VerifyError::Parse { line, message },
            ChainParseError::Empty => VerifyError::Parse {
                line: 1,
                message: "empty file".into(),
            },
        }
    }
}

#[derive(Deserialize)]
struct FormatProbe {
    format: String,
}

/// Detects the export format from its header and replays it.
pub fn verify_export(text: &str) -> Result<Verified, VerifyError> {
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or(VerifyError::Parse {
            line: 1,
            message: "empty file".into(),
        })?;
    let probe: FormatProbe = serde_json::from_str(first).map_err(|e| VerifyError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    match probe.format.as_str() {
        HISTORY_FORMAT => {
            let (spec, records) = parse_history(text)?;
            verify_history(&spec, &records).map_err(|d| VerifyError::Divergence {
                kind: ExportKind::History,
                record: d.index,
                line: d.index + 2,
                detail: d.detail,
            })?;
            Ok(Verified {
                kind: ExportKind::History,
                records: records.len(),
            })
        }
        CHAIN_FORMAT => {
            let (header, entries) = parse_chain(text)?;
            verify_exported_chain(&header.spec, &entries).map_err(|d| VerifyError::Divergence {
                kind: ExportKind::Chain,
                record: d.height as usize,
                line: d.height as usize + 2,
                detail: d.reason,
            })?;
            Ok(Verified {
                kind: ExportKind::Chain,
                records: entries.len(),
            })
        }
        other => Err(VerifyError::UnknownFormat(other.to_owned())),
    }
}
