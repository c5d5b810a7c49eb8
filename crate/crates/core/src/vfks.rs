//! Verifiable search over the symbol trie.
//!
//! Every node carries a chain value `r1`: the root holds `PRF(sk0, "root")`
//! and a child at depth `j` reached by symbol `s` holds
//! `PRF(sk0, "node" || j || s || parent.r1)`. Leaves also carry
//! `leaf_tag = PRF(sk0, "leaf" || r1 || digest(records))`.
//!
//! The server returns one [`Proof`] per request trapdoor. Whoever holds `sk0`
//! recomputes the chain from the trapdoor's own symbols, so a proof can only
//! name the node the trapdoor actually leads to, and a full match binds the
//! exact record list of its leaf.
//!
//! A server that stops early at a real prefix node still presents a valid
//! chain value. That under-reporting is not detectable without knowing the
//! trie shape.
//!
//! # Proof encoding
//!
//! ```text
//! matched_len u8 | bit_count u16 | bits (MSB first, ceil(bit_count/8) bytes)
//! last_r1: len u8 | bytes
//! presence u8 (bit0 leaf_tag, bit1 record_digest)
//! [leaf_tag: len u8 | bytes] [record_digest: len u8 | bytes]
//! ref_count u32 | ref u32 *
//! ```
//!
//! `refs` are positions in the returned record list holding this leaf's
//! records, in stored order.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::codec::{bounded_capacity, Reader, Writer};
use crate::crypto::{EncryptedRecord, HmacSha1, KeyMaterial, Prf, Trapdoor};
use crate::error::{Error, Result};
use crate::fuzzyset::Method;
use crate::index::{append_unique, build_trie_index, check_request, symbols_of, Corpus, IndexMeta, ResultSet, SearchRequest, TrieIndex};

pub const CHAIN_LEN: usize = 20;
pub const DIGEST_LEN: usize = 32;

pub type ChainValue = [u8; CHAIN_LEN];
pub type RecordDigest = [u8; DIGEST_LEN];

fn chain_prf(sk0: &[u8], parts: &[&[u8]]) -> ChainValue {
    HmacSha1::eval(sk0, parts).try_into().expect("HMAC-SHA1 output is 20 bytes")
}

pub fn root_r1(sk0: &[u8]) -> ChainValue {
    chain_prf(sk0, &[b"root"])
}

pub fn child_r1(sk0: &[u8], depth: usize, symbol: u16, parent: &ChainValue) -> ChainValue {
    chain_prf(sk0, &[b"node", &(depth as u16).to_be_bytes(), &symbol.to_be_bytes(), parent])
}

/// `r1` of the node reached after the first `steps` symbols of `t`.
pub fn chain_r1(km: &KeyMaterial, t: &Trapdoor, steps: usize) -> ChainValue {
    symbols_of(t.as_bytes(), km.symbol_bits())
        .take(steps)
        .enumerate()
        .fold(root_r1(km.sk0()), |r1, (j, s)| child_r1(km.sk0(), j + 1, s, &r1))
}

/// SHA-256 over the length-prefixed record bytes, in order.
pub fn record_digest<'a>(records: impl IntoIterator<Item = &'a EncryptedRecord>) -> RecordDigest {
    let mut h = Sha256::new();
    for r in records {
        let bytes = r.to_bytes();
        h.update((bytes.len() as u32).to_be_bytes());
        h.update(&bytes);
    }
    h.finalize().into()
}

pub fn leaf_tag(sk0: &[u8], r1: &ChainValue, digest: &RecordDigest) -> ChainValue {
    chain_prf(sk0, &[b"leaf", r1, digest])
}

/// A trie whose nodes carry chain values and whose leaves carry tags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthTrieIndex {
    pub(crate) trie: TrieIndex,
    /// Indexed by node id.
    pub(crate) r1: Vec<ChainValue>,
    /// Indexed by leaf id.
    pub(crate) leaf_tags: Vec<ChainValue>,
}

impl AuthTrieIndex {
    pub fn trie(&self) -> &TrieIndex {
        &self.trie
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.trie.meta
    }

    /// Every node's chain value.
    pub fn chain_values(&self) -> &[ChainValue] {
        &self.r1
    }

    /// Chain value of the node `t` leads to after `steps` symbols, if that
    /// path exists.
    pub fn r1_at(&self, t: &Trapdoor, steps: usize) -> Option<ChainValue> {
        let mut cur = 0u32;
        for s in symbols_of(t.as_bytes(), self.trie.meta.symbol_bits).take(steps) {
            cur = self.trie.child(cur, s)?;
        }
        Some(self.r1[cur as usize])
    }
}

pub fn build_auth_trie(corpus: &Corpus, d: usize, km: &KeyMaterial, method: Method) -> Result<AuthTrieIndex> {
    let trie = build_trie_index(corpus, d, km, method)?;
    if trie.meta.depth() > u8::MAX as usize {
        return Err(Error::BadParameter(format!(
            "verifiable tries need l/n <= 255, got {}",
            trie.meta.depth()
        )));
    }
    let sk0 = km.sk0();
    let mut r1 = vec![[0u8; CHAIN_LEN]; trie.node_count()];
    let mut leaf_tags = vec![[0u8; CHAIN_LEN]; trie.leaf_count()];
    r1[0] = root_r1(sk0);
    let mut stack = vec![(0u32, 0usize)];
    while let Some((id, depth)) = stack.pop() {
        let parent = r1[id as usize];
        if let Some(records) = trie.leaf_records(id) {
            let leaf = trie.nodes[id as usize].leaf as usize;
            leaf_tags[leaf] = leaf_tag(sk0, &parent, &record_digest(records));
        }
        for c in trie.children_of(id) {
            r1[c as usize] = child_r1(sk0, depth + 1, trie.nodes[c as usize].symbol, &parent);
            stack.push((c, depth + 1));
        }
    }
    Ok(AuthTrieIndex { trie, r1, leaf_tags })
}

/// Search transcript for one trapdoor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proof {
    pub matched_len: usize,
    /// `m` ones followed by a zero on mismatch; `l/n` ones on a full match.
    pub match_bits: Vec<bool>,
    pub last_r1: ChainValue,
    pub leaf_tag: Option<ChainValue>,
    pub record_digest: Option<RecordDigest>,
    pub record_refs: Vec<u32>,
}

impl Proof {
    pub fn is_full_match(&self) -> bool {
        self.leaf_tag.is_some()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.matched_len as u8).u16(self.match_bits.len() as u16);
        let mut packed = vec![0u8; self.match_bits.len().div_ceil(8)];
        for (i, &b) in self.match_bits.iter().enumerate() {
            packed[i / 8] |= u8::from(b) << (7 - i % 8);
        }
        w.bytes(&packed).u8_prefixed(&self.last_r1);
        let presence = u8::from(self.leaf_tag.is_some()) | u8::from(self.record_digest.is_some()) << 1;
        w.u8(presence);
        if let Some(tag) = &self.leaf_tag {
            w.u8_prefixed(tag);
        }
        if let Some(d) = &self.record_digest {
            w.u8_prefixed(d);
        }
        w.u32(self.record_refs.len() as u32);
        for &r in &self.record_refs {
            w.u32(r);
        }
        w.finish()
    }

    pub fn decode(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        let matched_len = r.u8()? as usize;
        let bit_count = r.u16()? as usize;
        if bit_count > 256 {
            return Err(Error::Malformed(format!("{bit_count} match bits")));
        }
        let packed = r.take(bit_count.div_ceil(8))?;
        let match_bits = (0..bit_count).map(|i| packed[i / 8] >> (7 - i % 8) & 1 == 1).collect();
        let fixed = |b: &[u8]| -> Result<ChainValue> {
            b.try_into().map_err(|_| Error::Malformed("bad chain value length".into()))
        };
        let last_r1 = fixed(r.u8_prefixed()?)?;
        let presence = r.u8()?;
        if presence & !0b11 != 0 {
            return Err(Error::Malformed(format!("presence byte {presence:#04x}")));
        }
        let leaf_tag = if presence & 1 != 0 { Some(fixed(r.u8_prefixed()?)?) } else { None };
        let record_digest = if presence & 2 != 0 {
            let b = r.u8_prefixed()?;
            Some(b.try_into().map_err(|_| Error::Malformed("bad digest length".into()))?)
        } else {
            None
        };
        let count = r.u32()?;
        let mut record_refs = Vec::with_capacity(bounded_capacity(count.into(), r.remaining(), 4));
        for _ in 0..count {
            record_refs.push(r.u32()?);
        }
        r.expect_end()?;
        Ok(Proof {
            matched_len,
            match_bits,
            last_r1,
            leaf_tag,
            record_digest,
            record_refs,
        })
    }
}

/// Search with one proof per trapdoor. The result set equals that of a plain
/// trie search; proofs are produced for every trapdoor even after an exact
/// hit.
pub fn search_with_proof(index: &AuthTrieIndex, req: &SearchRequest) -> Result<(ResultSet, Vec<Proof>)> {
    let trie = &index.trie;
    check_request(&trie.meta, req)?;
    let depth = trie.meta.depth();
    let walks: Vec<(usize, u32)> = req.trapdoors.iter().map(|t| trie.walk(t)).collect();
    let full = |(m, _): (usize, u32)| m == depth;

    let exact_hit = walks.first().is_some_and(|&w| full(w));
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let binding: Vec<usize> = if exact_hit {
        vec![0]
    } else {
        (0..walks.len()).filter(|&i| full(walks[i])).collect()
    };
    for &i in &binding {
        let leaf = trie.leaf_records(walks[i].1).expect("full match ends at a leaf");
        append_unique(&mut records, &mut seen, leaf);
    }
    let position: HashMap<&EncryptedRecord, u32> = records.iter().enumerate().map(|(i, r)| (r, i as u32)).collect();

    let proofs = walks
        .iter()
        .enumerate()
        .map(|(i, &(m, node))| {
            let is_full = m == depth;
            let mut match_bits = vec![true; m];
            if !is_full {
                match_bits.push(false);
            }
            let mut proof = Proof {
                matched_len: m,
                match_bits,
                last_r1: index.r1[node as usize],
                leaf_tag: None,
                record_digest: None,
                record_refs: Vec::new(),
            };
            if is_full {
                let leaf_id = trie.nodes[node as usize].leaf as usize;
                let leaf = &trie.leaves[leaf_id];
                proof.leaf_tag = Some(index.leaf_tags[leaf_id]);
                proof.record_digest = Some(record_digest(leaf));
                if !exact_hit || i == 0 {
                    proof.record_refs = leaf.iter().map(|r| position[r]).collect();
                }
            }
            proof
        })
        .collect();
    Ok((ResultSet { records, exact_hit }, proofs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reason {
    Ok,
    CountMismatch,
    ChainMismatch,
    LeafTagMismatch,
    BitPatternInvalid,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub accepted: bool,
    pub reason: Reason,
    pub failing_index: Option<usize>,
}

impl Verdict {
    fn ok() -> Self {
        Verdict {
            accepted: true,
            reason: Reason::Ok,
            failing_index: None,
        }
    }

    fn reject(reason: Reason, failing_index: Option<usize>) -> Self {
        Verdict {
            accepted: false,
            reason,
            failing_index,
        }
    }
}

/// Checks a search transcript, sampling proofs at `sample_rate` (the first
/// proof is always checked).
pub fn verify(req: &SearchRequest, results: &ResultSet, proofs: &[Proof], km: &KeyMaterial, sample_rate: f64) -> Verdict {
    verify_with_rng(req, results, proofs, km, sample_rate, &mut rand::thread_rng())
}

pub fn verify_with_rng(
    req: &SearchRequest,
    results: &ResultSet,
    proofs: &[Proof],
    km: &KeyMaterial,
    sample_rate: f64,
    rng: &mut impl Rng,
) -> Verdict {
    if proofs.len() != req.trapdoors.len() {
        return Verdict::reject(Reason::CountMismatch, None);
    }
    let exact_hit = proofs.first().is_some_and(Proof::is_full_match);
    if results.exact_hit != exact_hit {
        return Verdict::reject(Reason::BitPatternInvalid, Some(0));
    }
    let depth = km.trapdoor_bits() / km.symbol_bits();
    let sample_rate = sample_rate.clamp(0.0, 1.0);
    let sk0 = km.sk0();

    for (i, (proof, t)) in proofs.iter().zip(&req.trapdoors).enumerate() {
        if i > 0 && !rng.gen_bool(sample_rate) {
            continue;
        }
        let binding = i == 0 || !exact_hit;
        if !well_formed(proof, depth, binding) {
            return Verdict::reject(Reason::BitPatternInvalid, Some(i));
        }
        if t.bits() != km.trapdoor_bits() || chain_r1(km, t, proof.matched_len) != proof.last_r1 {
            return Verdict::reject(Reason::ChainMismatch, Some(i));
        }
        if let (Some(tag), Some(digest)) = (&proof.leaf_tag, &proof.record_digest) {
            if leaf_tag(sk0, &proof.last_r1, digest) != *tag {
                return Verdict::reject(Reason::LeafTagMismatch, Some(i));
            }
            if binding {
                let gathered: Option<Vec<&EncryptedRecord>> =
                    proof.record_refs.iter().map(|&r| results.records.get(r as usize)).collect();
                if gathered.is_none_or(|g| record_digest(g) != *digest) {
                    return Verdict::reject(Reason::LeafTagMismatch, Some(i));
                }
            }
        }
    }

    // every returned record must belong to a bound leaf
    let mut covered = vec![false; results.records.len()];
    for (i, proof) in proofs.iter().enumerate() {
        if proof.is_full_match() && (i == 0 || !exact_hit) {
            for &r in &proof.record_refs {
                match covered.get_mut(r as usize) {
                    Some(c) => *c = true,
                    None => return Verdict::reject(Reason::LeafTagMismatch, Some(i)),
                }
            }
        }
    }
    if covered.iter().any(|c| !c) {
        return Verdict::reject(Reason::LeafTagMismatch, None);
    }
    Verdict::ok()
}

fn well_formed(p: &Proof, depth: usize, binding: bool) -> bool {
    let m = p.matched_len;
    if m > depth {
        return false;
    }
    let full = m == depth;
    let expected_bits = if full { m } else { m + 1 };
    if p.match_bits.len() != expected_bits || !p.match_bits[..m].iter().all(|&b| b) {
        return false;
    }
    if !full && p.match_bits[m] {
        return false;
    }
    if p.leaf_tag.is_some() != full || p.record_digest.is_some() != full {
        return false;
    }
    if (!full || !binding) && !p.record_refs.is_empty() {
        return false;
    }
    true
}
