use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};

use super::{decode_proof, decode_record, WireMessage};
use crate::error::{Error, Result};
use crate::fuzzyset::Method;
use crate::index::{ResultSet, SearchRequest};
use crate::vfks::Proof;

/// Parameters announced by a server in its `HelloAck`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServerInfo {
    pub epoch: u64,
    pub kind: String,
    pub method: Method,
    pub trapdoor_bits: usize,
    pub symbol_bits: usize,
    pub d: usize,
    pub multi_user: bool,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub results: ResultSet,
    pub proofs: Option<Vec<Proof>>,
}

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    /// Sends one message and waits for the reply line.
    pub fn exchange(&mut self, msg: &WireMessage) -> Result<WireMessage> {
        self.writer.write_all(msg.to_line().as_bytes())?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(Error::Truncated);
        }
        WireMessage::from_line(&line)
    }

    pub fn hello(&mut self) -> Result<ServerInfo> {
        match self.exchange(&WireMessage::Hello { epoch: 0 })? {
            WireMessage::HelloAck { epoch, kind, method, l, n, d, multi_user } => Ok(ServerInfo {
                epoch,
                kind,
                method,
                trapdoor_bits: l,
                symbol_bits: n,
                d,
                multi_user,
            }),
            other => Err(unexpected(other)),
        }
    }

    pub fn search(&mut self, req: &SearchRequest, epoch: u64) -> Result<SearchOutcome> {
        match self.exchange(&WireMessage::search_request(req, epoch))? {
            WireMessage::SearchResp { exact_hit, records, proofs, .. } => Ok(SearchOutcome {
                results: ResultSet {
                    records: records.iter().map(|r| decode_record(r)).collect::<Result<_>>()?,
                    exact_hit,
                },
                proofs: proofs
                    .map(|ps| ps.iter().map(|p| decode_proof(p)).collect::<Result<Vec<_>>>())
                    .transpose()?,
            }),
            other => Err(unexpected(other)),
        }
    }
}

fn unexpected(msg: WireMessage) -> Error {
    match msg {
        WireMessage::ErrorResp { code, message, .. } => Error::Remote {
            code: code.as_str().into(),
            message,
        },
        other => Error::Malformed(format!("unexpected reply {other:?}")),
    }
}
