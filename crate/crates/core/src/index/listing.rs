use crate::crypto::{EncryptedRecord, KeyMaterial, Trapdoor};
use crate::error::Result;
use crate::fuzzyset::Method;

use super::{build_table, run_search, Corpus, IndexMeta, ResultSet, SearchRequest, Table, TrapdoorLookup};

/// Flat trapdoor → records table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ListingIndex {
    pub(crate) meta: IndexMeta,
    pub(crate) table: Table,
}

impl ListingIndex {
    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    /// Number of distinct trapdoors.
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, t: &Trapdoor) -> Option<&[EncryptedRecord]> {
        self.table.get(t).map(Vec::as_slice)
    }

    /// Entries in trapdoor byte order.
    pub fn iter(&self) -> impl Iterator<Item = (&Trapdoor, &[EncryptedRecord])> {
        self.table.iter().map(|(t, r)| (t, r.as_slice()))
    }
}

impl TrapdoorLookup for ListingIndex {
    fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    fn lookup(&self, t: &Trapdoor) -> Option<&[EncryptedRecord]> {
        self.get(t)
    }
}

pub fn build_listing_index(corpus: &Corpus, d: usize, km: &KeyMaterial, method: Method) -> Result<ListingIndex> {
    Ok(ListingIndex {
        meta: IndexMeta::new(km, d, method)?,
        table: build_table(corpus, d, km, method)?,
    })
}

pub fn search_listing(index: &ListingIndex, req: &SearchRequest) -> Result<ResultSet> {
    run_search(index, req)
}
