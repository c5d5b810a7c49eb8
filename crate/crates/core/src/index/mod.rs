//! Server-side indexes and the search procedure.
//!
//! Both index kinds map trapdoors to lists of encrypted records. The listing
//! index is a flat table; the trie stores each trapdoor as a root-to-leaf path
//! of `l / n` symbols, so trapdoors sharing a prefix share nodes.

mod format;
mod listing;
mod symbol;
mod trie;

use std::collections::{BTreeMap, BTreeSet, HashSet};

pub use format::{load_index, save_index, Index, IndexKind};
pub use listing::{build_listing_index, search_listing, ListingIndex};
pub use symbol::{symbolize, SymbolSequence};
pub use trie::{build_trie_index, search_trie, NodeRef, TrieIndex};

pub(crate) use symbol::symbols_of;

use crate::crypto::{self, exact_trapdoor, EncryptedRecord, KeyMaterial, Trapdoor};
use crate::error::{Error, Result};
use crate::fuzzyset::{fuzzy_set, normalize_keyword, Keyword, Method};

/// Keywords mapped to the identifiers of the files containing them.
pub type Corpus = BTreeMap<Keyword, Vec<Vec<u8>>>;

/// Whitespace tokenization followed by normalization; tokens without letters
/// are dropped.
pub fn extract_keywords(text: &str) -> BTreeSet<Keyword> {
    text.split_whitespace()
        .filter_map(|tok| normalize_keyword(tok).ok())
        .collect()
}

/// Parameters an index was built with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexMeta {
    /// Trapdoor length `l` in bits.
    pub trapdoor_bits: usize,
    /// Symbol width `n` in bits.
    pub symbol_bits: usize,
    /// Edit bound `d`.
    pub d: usize,
    pub method: Method,
}

impl IndexMeta {
    fn new(km: &KeyMaterial, d: usize, method: Method) -> Result<Self> {
        if d > u8::MAX as usize {
            return Err(Error::BadParameter(format!("edit bound {d} too large")));
        }
        Ok(IndexMeta {
            trapdoor_bits: km.trapdoor_bits(),
            symbol_bits: km.symbol_bits(),
            d,
            method,
        })
    }

    /// Trie depth `l / n`.
    pub fn depth(&self) -> usize {
        self.trapdoor_bits / self.symbol_bits
    }
}

/// Trapdoor to record list, the content shared by both index kinds.
pub(crate) type Table = BTreeMap<Trapdoor, Vec<EncryptedRecord>>;

/// Trapdoors a keyword is filed under.
///
/// Wildcard indexes use the fuzzy set as is. Gram indexes also file the
/// keyword under its exact trapdoor, because a plain gram like `at` is shared
/// between the keyword `at` and the deletion of `cat`.
pub(crate) fn keyword_trapdoors(km: &KeyMaterial, w: &Keyword, d: usize, method: Method) -> Vec<Trapdoor> {
    let set = fuzzy_set(w, d, method);
    let mut out = Vec::with_capacity(set.len() + 1);
    if method == Method::Gram {
        out.push(exact_trapdoor(km, w));
    }
    out.extend(set.iter().map(|v| km.trapdoor(v)));
    out
}

pub(crate) fn build_table(corpus: &Corpus, d: usize, km: &KeyMaterial, method: Method) -> Result<Table> {
    let mut table = Table::new();
    for (w, fids) in corpus {
        let fids: BTreeSet<&Vec<u8>> = fids.iter().collect();
        let records = fids
            .into_iter()
            .map(|fid| crypto::encrypt_record_deterministic(km, fid, w))
            .collect::<Result<Vec<_>>>()?;
        if records.is_empty() {
            continue;
        }
        for t in keyword_trapdoors(km, w, d, method) {
            table.entry(t).or_default().extend(records.iter().cloned());
        }
    }
    Ok(table)
}

/// The trapdoors for a fuzzy query `(w, k)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchRequest {
    pub trapdoors: Vec<Trapdoor>,
    pub k: usize,
}

/// Trapdoors of `S_{w,k}`, the exact word's trapdoor first and the rest in
/// variant order.
pub fn make_request(w: &Keyword, k: usize, km: &KeyMaterial, method: Method) -> SearchRequest {
    let set = fuzzy_set(w, k, method);
    let mut trapdoors = Vec::with_capacity(set.len() + 1);
    match method {
        Method::Wildcard => {
            trapdoors.push(crypto::trapdoor(km, &w.into()));
            trapdoors.extend(
                set.iter()
                    .filter(|v| v.text() != w.as_str())
                    .map(|v| km.trapdoor(v)),
            );
        }
        Method::Gram => {
            trapdoors.push(exact_trapdoor(km, w));
            trapdoors.extend(set.iter().map(|v| km.trapdoor(v)));
        }
    }
    SearchRequest { trapdoors, k }
}

/// Encrypted records returned by a search.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ResultSet {
    pub records: Vec<EncryptedRecord>,
    /// The first (exact) trapdoor reached a leaf.
    pub exact_hit: bool,
}

impl ResultSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Decrypts every record.
    pub fn decrypt(&self, km: &KeyMaterial) -> Result<Vec<(Vec<u8>, Keyword)>> {
        self.records.iter().map(|r| crypto::decrypt_record(km, r)).collect()
    }
}

/// Something the search procedure can look trapdoors up in.
pub(crate) trait TrapdoorLookup {
    fn meta(&self) -> &IndexMeta;
    fn lookup(&self, t: &Trapdoor) -> Option<&[EncryptedRecord]>;
}

pub(crate) fn check_request(meta: &IndexMeta, req: &SearchRequest) -> Result<()> {
    if req.k > meta.d {
        return Err(Error::EditBoundExceeded { k: req.k, d: meta.d });
    }
    if let Some(t) = req.trapdoors.iter().find(|t| t.bits() != meta.trapdoor_bits) {
        return Err(Error::BadLength {
            expected: meta.trapdoor_bits,
            actual: t.bits(),
        });
    }
    Ok(())
}

/// Appends `records` to `out`, skipping ciphertexts already present.
pub(crate) fn append_unique(out: &mut Vec<EncryptedRecord>, seen: &mut HashSet<EncryptedRecord>, records: &[EncryptedRecord]) {
    for r in records {
        if seen.insert(r.clone()) {
            out.push(r.clone());
        }
    }
}

/// Looks up every trapdoor in order. A hit on the first trapdoor returns
/// that leaf's records alone.
pub(crate) fn run_search(index: &impl TrapdoorLookup, req: &SearchRequest) -> Result<ResultSet> {
    check_request(index.meta(), req)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, t) in req.trapdoors.iter().enumerate() {
        if let Some(records) = index.lookup(t) {
            append_unique(&mut out, &mut seen, records);
            if i == 0 {
                return Ok(ResultSet {
                    records: out,
                    exact_hit: true,
                });
            }
        }
    }
    Ok(ResultSet {
        records: out,
        exact_hit: false,
    })
}
