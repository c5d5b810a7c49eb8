//! Server state, request handling and the TCP transport.

mod client;
mod server;
mod wire;

use std::sync::RwLock;
use std::time::Duration;

pub use client::{Client, SearchOutcome, ServerInfo};
pub use server::Server;
pub use wire::{decode_proof, decode_record, decode_trapdoor, ErrorCode, WireMessage};

pub use crate::index::{load_index, save_index};

use crate::error::Error;
use crate::index::{search_listing, search_trie, Index, SearchRequest};
use crate::multiuser::unblind_request;
use crate::vfks::search_with_proof;

/// Default TCP port of `fzk serve`.
pub const DEFAULT_PORT: u16 = 7341;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub max_trapdoors: usize,
    pub max_line_bytes: usize,
    pub read_timeout: Option<Duration>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            max_trapdoors: 4096,
            max_line_bytes: 1 << 20,
            read_timeout: Some(Duration::from_secs(60)),
        }
    }
}

#[derive(Clone, Debug)]
struct EpochKey {
    epoch: u64,
    xi: Option<Vec<u8>>,
}

/// One immutable index plus the replaceable `(xi, epoch)` pair.
#[derive(Debug)]
pub struct ServerState {
    index: Index,
    key: RwLock<EpochKey>,
    config: ServerConfig,
}

impl ServerState {
    /// Single-user server: requests carry plain trapdoors.
    pub fn new(index: Index, config: ServerConfig) -> Self {
        ServerState {
            index,
            key: RwLock::new(EpochKey { epoch: 0, xi: None }),
            config,
        }
    }

    /// Multi-user server: requests are blinded under `xi`.
    pub fn with_blinding(index: Index, config: ServerConfig, epoch: u64, xi: Vec<u8>) -> Self {
        ServerState {
            index,
            key: RwLock::new(EpochKey { epoch, xi: Some(xi) }),
            config,
        }
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn epoch(&self) -> u64 {
        self.key.read().expect("key lock poisoned").epoch
    }

    /// Installs a new blinding key atomically.
    pub fn rotate(&self, epoch: u64, xi: Vec<u8>) {
        *self.key.write().expect("key lock poisoned") = EpochKey { epoch, xi: Some(xi) };
    }

    /// Answers one parsed message.
    pub fn handle_message(&self, msg: WireMessage) -> WireMessage {
        let key = self.key.read().expect("key lock poisoned").clone();
        let meta = *self.index.meta();
        match msg {
            WireMessage::Hello { .. } => WireMessage::HelloAck {
                epoch: key.epoch,
                kind: self.index.kind().name().into(),
                method: meta.method,
                l: meta.trapdoor_bits,
                n: meta.symbol_bits,
                d: meta.d,
                multi_user: key.xi.is_some(),
            },
            WireMessage::SearchReq { epoch, k, trapdoors } => {
                let fail = |code, message: String| WireMessage::error(key.epoch, code, message);
                if epoch != key.epoch {
                    return fail(
                        ErrorCode::StaleEpoch,
                        format!("request epoch {epoch}, server epoch {}", key.epoch),
                    );
                }
                if trapdoors.is_empty() {
                    return fail(ErrorCode::Malformed, "empty request".into());
                }
                if trapdoors.len() > self.config.max_trapdoors {
                    return fail(
                        ErrorCode::TooManyTrapdoors,
                        format!("{} trapdoors, limit {}", trapdoors.len(), self.config.max_trapdoors),
                    );
                }
                if k > meta.d {
                    return fail(ErrorCode::EditBound, format!("k = {k} exceeds index d = {}", meta.d));
                }
                let trapdoors = match trapdoors
                    .iter()
                    .map(|t| decode_trapdoor(t, meta.trapdoor_bits))
                    .collect::<Result<Vec<_>, _>>()
                {
                    Ok(t) => t,
                    Err(e) => return fail(ErrorCode::Malformed, e.to_string()),
                };
                let mut req = SearchRequest { trapdoors, k };
                if let Some(xi) = &key.xi {
                    req = unblind_request(&req, xi);
                }
                let outcome = match &self.index {
                    Index::Listing(i) => search_listing(i, &req).map(|r| (r, None)),
                    Index::Trie(t) => search_trie(t, &req).map(|r| (r, None)),
                    Index::AuthTrie(a) => search_with_proof(a, &req).map(|(r, p)| (r, Some(p))),
                };
                match outcome {
                    Ok((results, proofs)) => WireMessage::search_response(key.epoch, &results, proofs.as_deref()),
                    Err(e @ Error::EditBoundExceeded { .. }) => fail(ErrorCode::EditBound, e.to_string()),
                    Err(e) => fail(ErrorCode::Malformed, e.to_string()),
                }
            }
            other => WireMessage::error(
                key.epoch,
                ErrorCode::Malformed,
                format!("unexpected message type {}", message_type(&other)),
            ),
        }
    }

    /// Parses and answers one raw line. Never panics on any input.
    pub fn handle_line(&self, line: &[u8]) -> WireMessage {
        let parsed = std::str::from_utf8(line)
            .map_err(|_| Error::Malformed("line is not UTF-8".into()))
            .and_then(WireMessage::from_line);
        match parsed {
            Ok(msg) => self.handle_message(msg),
            Err(e) => WireMessage::error(self.epoch(), ErrorCode::Malformed, e.to_string()),
        }
    }
}

fn message_type(msg: &WireMessage) -> &'static str {
    match msg {
        WireMessage::Hello { .. } => "Hello",
        WireMessage::HelloAck { .. } => "HelloAck",
        WireMessage::SearchReq { .. } => "SearchReq",
        WireMessage::SearchResp { .. } => "SearchResp",
        WireMessage::ErrorResp { .. } => "ErrorResp",
    }
}
