//! Line-delimited JSON messages.
//!
//! Each message is one JSON object on one line, tagged by `"type"`. Fields
//! are written in declaration order, trapdoors as lowercase hex, records and
//! proofs as standard base64 (proofs in the encoding of
//! [`Proof::encode`](crate::vfks::Proof::encode)).
//!
//! ```text
//! {"type":"Hello","epoch":0}
//! {"type":"HelloAck","epoch":0,"kind":"trie","method":"wildcard","l":160,"n":4,"d":1,"multi_user":false}
//! {"type":"SearchReq","epoch":0,"k":1,"trapdoors":["9f3c...", ...]}
//! {"type":"SearchResp","epoch":0,"exact_hit":true,"records":["base64", ...],"proofs":["base64", ...]}
//! {"type":"ErrorResp","epoch":0,"code":"EDIT_BOUND","message":"..."}
//! ```

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::crypto::{EncryptedRecord, Trapdoor};
use crate::error::{Error, Result};
use crate::fuzzyset::Method;
use crate::index::{ResultSet, SearchRequest};
use crate::vfks::Proof;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    Malformed,
    EditBound,
    StaleEpoch,
    TooManyTrapdoors,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Malformed => "MALFORMED",
            ErrorCode::EditBound => "EDIT_BOUND",
            ErrorCode::StaleEpoch => "STALE_EPOCH",
            ErrorCode::TooManyTrapdoors => "TOO_MANY_TRAPDOORS",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum WireMessage {
    Hello {
        epoch: u64,
    },
    HelloAck {
        epoch: u64,
        kind: String,
        method: Method,
        l: usize,
        n: usize,
        d: usize,
        multi_user: bool,
    },
    SearchReq {
        epoch: u64,
        k: usize,
        trapdoors: Vec<String>,
    },
    SearchResp {
        epoch: u64,
        exact_hit: bool,
        records: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        proofs: Option<Vec<String>>,
    },
    ErrorResp {
        epoch: u64,
        code: ErrorCode,
        message: String,
    },
}

impl WireMessage {
    pub fn error(epoch: u64, code: ErrorCode, message: impl Into<String>) -> Self {
        WireMessage::ErrorResp {
            epoch,
            code,
            message: message.into().replace(['\n', '\r'], " "),
        }
    }

    /// One line, newline-terminated.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("wire messages always serialize");
        s.push('\n');
        s
    }

    /// Parses one line; a trailing `\n` or `\r\n` is allowed.
    pub fn from_line(line: &str) -> Result<Self> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.contains('\n') {
            return Err(Error::Malformed("embedded newline".into()));
        }
        serde_json::from_str(line).map_err(|e| Error::Malformed(e.to_string()))
    }

    pub fn search_request(req: &SearchRequest, epoch: u64) -> Self {
        WireMessage::SearchReq {
            epoch,
            k: req.k,
            trapdoors: req.trapdoors.iter().map(Trapdoor::to_hex).collect(),
        }
    }

    pub fn search_response(epoch: u64, results: &ResultSet, proofs: Option<&[Proof]>) -> Self {
        WireMessage::SearchResp {
            epoch,
            exact_hit: results.exact_hit,
            records: results.records.iter().map(|r| B64.encode(r.to_bytes())).collect(),
            proofs: proofs.map(|ps| ps.iter().map(|p| B64.encode(p.encode())).collect()),
        }
    }
}

/// Decodes a canonical trapdoor: exactly `2 * l / 8` lowercase hex digits.
pub fn decode_trapdoor(hex_text: &str, trapdoor_bits: usize) -> Result<Trapdoor> {
    if hex_text.len() != 2 * (trapdoor_bits / 8) {
        return Err(Error::Malformed(format!(
            "trapdoor has {} hex digits, expected {}",
            hex_text.len(),
            2 * (trapdoor_bits / 8)
        )));
    }
    if !hex_text.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return Err(Error::Malformed("trapdoor is not lowercase hex".into()));
    }
    Ok(Trapdoor::from_bytes(hex::decode(hex_text).map_err(|e| Error::Malformed(e.to_string()))?))
}

pub fn decode_record(b64: &str) -> Result<EncryptedRecord> {
    let bytes = B64.decode(b64).map_err(|e| Error::Malformed(e.to_string()))?;
    EncryptedRecord::from_bytes(&bytes)
}

pub fn decode_proof(b64: &str) -> Result<Proof> {
    let bytes = B64.decode(b64).map_err(|e| Error::Malformed(e.to_string()))?;
    Proof::decode(&bytes)
}
