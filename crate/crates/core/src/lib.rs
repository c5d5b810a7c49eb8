//! Fuzzy keyword search over encrypted indexes.
//!
//! A data owner builds an index of trapdoors for the fuzzy variants of every
//! keyword ([`fuzzyset`], [`index`]); a server answers trapdoor requests
//! without learning keywords, optionally with proofs ([`vfks`]); users blind
//! requests with a shared key that is rotated on revocation ([`multiuser`]).

mod codec;
pub mod bench;
pub mod crypto;
pub mod error;
pub mod fuzzyset;
pub mod index;
pub mod multiuser;
pub mod service;
pub mod vfks;

pub use crypto::{keygen, EncryptedRecord, KeyMaterial, Trapdoor};
pub use error::{Error, Result};
pub use fuzzyset::{edit_distance, normalize_keyword, FuzzySet, FuzzyVariant, Keyword, Method};
pub use index::{make_request, Corpus, Index, ListingIndex, ResultSet, SearchRequest, TrieIndex};
pub use vfks::{AuthTrieIndex, Proof, Verdict};
