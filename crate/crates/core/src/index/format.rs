//! Index file format.
//!
//! ```text
//! "FZIX" | version u8 | flags u8 | n u8 | l u16 | d u8 | entry_count u64
//! flags: bit0 trie (else listing), bit1 verifiable, bit2 gram (else wildcard)
//!
//! listing body, entries sorted by trapdoor bytes:
//!   trapdoor[l/8] | record_count u32 | (len u32 | nonce || ciphertext)*
//!
//! trie body, nodes in depth-first pre-order starting at the root:
//!   [r1: len u8 | bytes]                      verifiable only
//!   leaf (depth l/n):
//!     [leaf_tag: len u8 | bytes]              verifiable only
//!     record_count u32 | (len u32 | record)*
//!   internal:
//!     child_count u16 | (symbol | node)*      symbol is 1 byte if n <= 8, else 2
//! ```
//!
//! `entry_count` is the number of distinct trapdoors (listing entries or trie
//! leaves). Integers are big-endian.

use std::path::Path;

use crate::codec::{bounded_capacity, Reader, Writer};
use crate::crypto::{EncryptedRecord, Trapdoor, NONCE_LEN};
use crate::error::{Error, Result};
use crate::fuzzyset::Method;
use crate::vfks::{AuthTrieIndex, ChainValue, CHAIN_LEN};

use super::trie::{Node, NIL};
use super::{IndexMeta, ListingIndex, Table, TrieIndex};

const MAGIC: &[u8; 4] = b"FZIX";
const VERSION: u8 = 1;

const FLAG_TRIE: u8 = 1;
const FLAG_VERIFIABLE: u8 = 1 << 1;
const FLAG_GRAM: u8 = 1 << 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexKind {
    Listing,
    Trie,
    AuthTrie,
}

impl IndexKind {
    pub fn name(self) -> &'static str {
        match self {
            IndexKind::Listing => "listing",
            IndexKind::Trie => "trie",
            IndexKind::AuthTrie => "auth",
        }
    }
}

impl std::str::FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "listing" => Ok(IndexKind::Listing),
            "trie" => Ok(IndexKind::Trie),
            "auth" | "verifiable" => Ok(IndexKind::AuthTrie),
            other => Err(Error::BadParameter(format!("unknown index kind {other:?}"))),
        }
    }
}

/// Any servable index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Index {
    Listing(ListingIndex),
    Trie(TrieIndex),
    AuthTrie(AuthTrieIndex),
}

impl Index {
    pub fn kind(&self) -> IndexKind {
        match self {
            Index::Listing(_) => IndexKind::Listing,
            Index::Trie(_) => IndexKind::Trie,
            Index::AuthTrie(_) => IndexKind::AuthTrie,
        }
    }

    pub fn meta(&self) -> &IndexMeta {
        match self {
            Index::Listing(i) => &i.meta,
            Index::Trie(t) => &t.meta,
            Index::AuthTrie(a) => &a.trie.meta,
        }
    }

    /// Distinct trapdoors stored.
    pub fn entry_count(&self) -> usize {
        match self {
            Index::Listing(i) => i.len(),
            Index::Trie(t) => t.leaf_count(),
            Index::AuthTrie(a) => a.trie.leaf_count(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.meta();
        let mut flags = 0;
        if self.kind() != IndexKind::Listing {
            flags |= FLAG_TRIE;
        }
        if self.kind() == IndexKind::AuthTrie {
            flags |= FLAG_VERIFIABLE;
        }
        if meta.method == Method::Gram {
            flags |= FLAG_GRAM;
        }
        let mut w = Writer::new();
        w.bytes(MAGIC)
            .u8(VERSION)
            .u8(flags)
            .u8(meta.symbol_bits as u8)
            .u16(meta.trapdoor_bits as u16)
            .u8(meta.d as u8)
            .u64(self.entry_count() as u64);
        match self {
            Index::Listing(i) => {
                for (t, records) in &i.table {
                    w.bytes(t.as_bytes());
                    write_records(&mut w, records);
                }
            }
            Index::Trie(t) => write_node(&mut w, t, None, 0, 0),
            Index::AuthTrie(a) => write_node(&mut w, &a.trie, Some(a), 0, 0),
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        r.header(MAGIC, VERSION)?;
        let flags = r.u8()?;
        if flags & !(FLAG_TRIE | FLAG_VERIFIABLE | FLAG_GRAM) != 0 {
            return Err(Error::Malformed(format!("unknown flag bits {flags:#04x}")));
        }
        if flags & FLAG_VERIFIABLE != 0 && flags & FLAG_TRIE == 0 {
            return Err(Error::Malformed("verifiable listing index".into()));
        }
        let n = r.u8()? as usize;
        let l = r.u16()? as usize;
        let d = r.u8()? as usize;
        let entries = r.u64()?;
        if l == 0 || l % 8 != 0 {
            return Err(Error::Malformed(format!("trapdoor length {l}")));
        }
        super::symbol::check_symbol_bits(l, n).map_err(|e| Error::Malformed(e.to_string()))?;
        let meta = IndexMeta {
            trapdoor_bits: l,
            symbol_bits: n,
            d,
            method: if flags & FLAG_GRAM != 0 { Method::Gram } else { Method::Wildcard },
        };

        let index = if flags & FLAG_TRIE == 0 {
            let mut table = Table::new();
            for _ in 0..entries {
                let t = Trapdoor::from_bytes(r.take(l / 8)?.to_vec());
                let records = read_records(&mut r)?;
                if let Some((last, _)) = table.last_key_value() {
                    if *last >= t {
                        return Err(Error::Malformed("listing entries out of order".into()));
                    }
                }
                table.insert(t, records);
            }
            Index::Listing(ListingIndex { meta, table })
        } else {
            let verifiable = flags & FLAG_VERIFIABLE != 0;
            let mut state = TrieReader {
                trie: TrieIndex::empty(meta),
                r1: Vec::new(),
                leaf_tags: Vec::new(),
                verifiable,
            };
            state.read_node(&mut r, 0, 0)?;
            if state.trie.leaf_count() as u64 != entries {
                return Err(Error::Malformed(format!(
                    "header says {entries} entries, found {}",
                    state.trie.leaf_count()
                )));
            }
            if verifiable {
                Index::AuthTrie(AuthTrieIndex {
                    trie: state.trie,
                    r1: state.r1,
                    leaf_tags: state.leaf_tags,
                })
            } else {
                Index::Trie(state.trie)
            }
        };
        r.expect_end()?;
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn save_index(index: &Index, path: impl AsRef<Path>) -> Result<()> {
    index.save(path)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<Index> {
    Index::load(path)
}

fn write_records(w: &mut Writer, records: &[EncryptedRecord]) {
    w.u32(records.len() as u32);
    for rec in records {
        w.u32_prefixed(&rec.to_bytes());
    }
}

fn read_records(r: &mut Reader<'_>) -> Result<Vec<EncryptedRecord>> {
    let count = r.u32()?;
    if count == 0 {
        return Err(Error::Malformed("entry without records".into()));
    }
    let mut out = Vec::with_capacity(bounded_capacity(count.into(), r.remaining(), 4 + NONCE_LEN));
    for _ in 0..count {
        out.push(EncryptedRecord::from_bytes(r.u32_prefixed()?)?);
    }
    Ok(out)
}

fn write_node(w: &mut Writer, trie: &TrieIndex, auth: Option<&AuthTrieIndex>, id: u32, depth: usize) {
    if let Some(a) = auth {
        w.u8_prefixed(&a.r1[id as usize]);
    }
    let node = &trie.nodes[id as usize];
    if depth == trie.meta.depth() {
        if let Some(a) = auth {
            w.u8_prefixed(&a.leaf_tags[node.leaf as usize]);
        }
        write_records(w, &trie.leaves[node.leaf as usize]);
        return;
    }
    let children: Vec<u32> = trie.children_of(id).collect();
    w.u16(children.len() as u16);
    for c in children {
        let symbol = trie.nodes[c as usize].symbol;
        if trie.meta.symbol_bits <= 8 {
            w.u8(symbol as u8);
        } else {
            w.u16(symbol);
        }
        write_node(w, trie, auth, c, depth + 1);
    }
}

struct TrieReader {
    trie: TrieIndex,
    r1: Vec<ChainValue>,
    leaf_tags: Vec<ChainValue>,
    verifiable: bool,
}

fn read_chain(r: &mut Reader<'_>) -> Result<ChainValue> {
    let bytes = r.u8_prefixed()?;
    bytes
        .try_into()
        .map_err(|_| Error::Malformed(format!("chain value of {} bytes, expected {CHAIN_LEN}", bytes.len())))
}

impl TrieReader {
    fn read_node(&mut self, r: &mut Reader<'_>, id: u32, depth: usize) -> Result<()> {
        if self.verifiable {
            self.r1.push(read_chain(r)?);
        }
        let meta = self.trie.meta;
        if depth == meta.depth() {
            if self.verifiable {
                self.leaf_tags.push(read_chain(r)?);
            }
            let records = read_records(r)?;
            self.trie.nodes[id as usize].leaf = self.trie.leaves.len() as u32;
            self.trie.leaves.push(records);
            return Ok(());
        }
        let count = r.u16()? as usize;
        if count == 0 && id != 0 {
            return Err(Error::Malformed("internal node without children".into()));
        }
        if count > 1 << meta.symbol_bits {
            return Err(Error::Malformed(format!("{count} children for {}-bit symbols", meta.symbol_bits)));
        }
        let mut prev: Option<(u16, u32)> = None;
        for _ in 0..count {
            let symbol = if meta.symbol_bits <= 8 { u16::from(r.u8()?) } else { r.u16()? };
            if u32::from(symbol) >> meta.symbol_bits != 0 {
                return Err(Error::Malformed(format!("symbol {symbol} out of range")));
            }
            if prev.is_some_and(|(s, _)| s >= symbol) {
                return Err(Error::Malformed("children out of order".into()));
            }
            let child = self.trie.nodes.len() as u32;
            self.trie.nodes.push(Node {
                symbol,
                first_child: NIL,
                next_sibling: NIL,
                leaf: NIL,
            });
            match prev {
                None => self.trie.nodes[id as usize].first_child = child,
                Some((_, p)) => self.trie.nodes[p as usize].next_sibling = child,
            }
            prev = Some((symbol, child));
            self.read_node(r, child, depth + 1)?;
        }
        Ok(())
    }
}
