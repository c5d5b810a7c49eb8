//! Fuzzy keyword sets.
//!
//! Three constructions are provided over the lowercase alphabet:
//!
//! * [`wildcard_fuzzy_set`]: one `*` stands for a substitution, deletion or
//!   insertion at a position, so a length-`l` word has `2l + 2` variants at
//!   `d = 1`.
//! * [`gram_fuzzy_set`]: every way of deleting up to `d` characters.
//! * [`enumeration_fuzzy_set`]: every concrete word within edit distance `d`.
//!   Exponentially large, used as a baseline and as the exact oracle.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The reserved wildcard byte.
pub const WILDCARD: u8 = b'*';

/// Default member cap for [`enumeration_fuzzy_set`].
pub const DEFAULT_ENUMERATION_BUDGET: usize = 10_000_000;

/// A normalized keyword over `a-z`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Keyword(String);

impl Keyword {
    /// Wraps an already-normalized word, rejecting anything outside `a-z`.
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::EmptyKeyword);
        }
        if !text.bytes().all(|b| b.is_ascii_lowercase()) {
            return Err(Error::InvalidKeyword(text));
        }
        Ok(Keyword(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Word length `l`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<String> for Keyword {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Keyword::new(value)
    }
}

impl From<Keyword> for String {
    fn from(value: Keyword) -> Self {
        value.0
    }
}

impl AsRef<str> for Keyword {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Keyword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Folds case and drops every non-letter character.
pub fn normalize_keyword(raw: &str) -> Result<Keyword> {
    let text: String = raw
        .chars()
        .filter(char::is_ascii_alphabetic)
        .map(|c| c.to_ascii_lowercase())
        .collect();
    if text.is_empty() {
        return Err(Error::EmptyKeyword);
    }
    Ok(Keyword(text))
}

/// Levenshtein distance with unit-cost substitution, deletion and insertion.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let (a, b) = (a.as_bytes(), b.as_bytes());
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// One member of a fuzzy set. May contain `*`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FuzzyVariant {
    text: String,
    wildcard_count: usize,
}

impl FuzzyVariant {
    fn from_text(text: String) -> Self {
        let wildcard_count = text.bytes().filter(|&b| b == WILDCARD).count();
        FuzzyVariant {
            text,
            wildcard_count,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn wildcard_count(&self) -> usize {
        self.wildcard_count
    }
}

impl From<&Keyword> for FuzzyVariant {
    fn from(value: &Keyword) -> Self {
        FuzzyVariant {
            text: value.0.clone(),
            wildcard_count: 0,
        }
    }
}

impl fmt::Display for FuzzyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// How fuzzy sets are built for an index or a request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Wildcard,
    Gram,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Wildcard => "wildcard",
            Method::Gram => "gram",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wildcard" => Ok(Method::Wildcard),
            "gram" => Ok(Method::Gram),
            other => Err(Error::BadParameter(format!("unknown method {other:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `S_{w,d}`: the variants of a keyword, sorted by byte value and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuzzySet {
    source: Keyword,
    d: usize,
    variants: Vec<FuzzyVariant>,
}

impl FuzzySet {
    fn from_texts(source: &Keyword, d: usize, texts: BTreeSet<String>) -> Self {
        FuzzySet {
            source: source.clone(),
            d,
            variants: texts.into_iter().map(FuzzyVariant::from_text).collect(),
        }
    }

    pub fn source(&self) -> &Keyword {
        &self.source
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn variants(&self) -> &[FuzzyVariant] {
        &self.variants
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    pub fn contains(&self, text: &str) -> bool {
        self.variants
            .binary_search_by(|v| v.text.as_str().cmp(text))
            .is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FuzzyVariant> {
        self.variants.iter()
    }

    /// True if the two sets share at least one variant.
    pub fn intersects(&self, other: &FuzzySet) -> bool {
        let (mut a, mut b) = (self.variants.iter().peekable(), other.variants.iter().peekable());
        while let (Some(x), Some(y)) = (a.peek(), b.peek()) {
            match x.text.cmp(&y.text) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }
}

/// Builds the fuzzy set with the chosen method.
///
/// For [`Method::Gram`] with `d >= w.len()` the deletions stop at one
/// character and the empty string stands for deleting everything. Any two
/// words no longer than `d` are within distance `d`, so they may share it.
pub fn fuzzy_set(w: &Keyword, d: usize, method: Method) -> FuzzySet {
    match method {
        Method::Wildcard => wildcard_fuzzy_set(w, d),
        Method::Gram if d < w.len() => gram_fuzzy_set(w, d).expect("d below word length"),
        Method::Gram => {
            let partial = gram_fuzzy_set(w, w.len() - 1).expect("d below word length");
            let mut texts: BTreeSet<String> = partial.iter().map(|v| v.text().to_string()).collect();
            texts.insert(String::new());
            FuzzySet::from_texts(w, d, texts)
        }
    }
}

fn wildcard_step(word: &str, out: &mut BTreeSet<String>) {
    let bytes = word.as_bytes();
    for i in 0..bytes.len() {
        let mut v = bytes.to_vec();
        v[i] = WILDCARD;
        out.insert(String::from_utf8(v).expect("ascii"));
    }
    for i in 0..=bytes.len() {
        let mut v = Vec::with_capacity(bytes.len() + 1);
        v.extend_from_slice(&bytes[..i]);
        v.push(WILDCARD);
        v.extend_from_slice(&bytes[i..]);
        out.insert(String::from_utf8(v).expect("ascii"));
    }
}

/// Wildcard-based fuzzy set: each level replaces one position with `*` or
/// inserts `*` into one gap of every member of the previous level.
pub fn wildcard_fuzzy_set(w: &Keyword, d: usize) -> FuzzySet {
    let mut all = BTreeSet::new();
    all.insert(w.0.clone());
    let mut frontier: Vec<String> = vec![w.0.clone()];
    for _ in 0..d {
        let mut next = BTreeSet::new();
        for member in &frontier {
            wildcard_step(member, &mut next);
        }
        frontier = next.into_iter().filter(|v| !all.contains(v)).collect();
        all.extend(frontier.iter().cloned());
    }
    FuzzySet::from_texts(w, d, all)
}

/// Gram-based (deletion) fuzzy set. Requires `d < w.len()`.
pub fn gram_fuzzy_set(w: &Keyword, d: usize) -> Result<FuzzySet> {
    if d >= w.len() {
        return Err(Error::DegenerateWord { d, len: w.len() });
    }
    let mut all = BTreeSet::new();
    all.insert(w.0.clone());
    let mut frontier = vec![w.0.clone()];
    for _ in 0..d {
        let mut next = BTreeSet::new();
        for member in &frontier {
            let bytes = member.as_bytes();
            for j in 0..bytes.len() {
                let mut v = bytes.to_vec();
                v.remove(j);
                next.insert(String::from_utf8(v).expect("ascii"));
            }
        }
        frontier = next.into_iter().filter(|v| !all.contains(v)).collect();
        all.extend(frontier.iter().cloned());
    }
    Ok(FuzzySet::from_texts(w, d, all))
}

/// Every concrete word over the first `alphabet_size` letters within edit
/// distance `d` of `w`. Limited to `d <= 2` and [`DEFAULT_ENUMERATION_BUDGET`]
/// members.
pub fn enumeration_fuzzy_set(w: &Keyword, d: usize, alphabet_size: usize) -> Result<FuzzySet> {
    enumeration_fuzzy_set_with_budget(w, d, alphabet_size, DEFAULT_ENUMERATION_BUDGET)
}

pub fn enumeration_fuzzy_set_with_budget(
    w: &Keyword,
    d: usize,
    alphabet_size: usize,
    budget: usize,
) -> Result<FuzzySet> {
    if d > 2 {
        return Err(Error::BadParameter(format!(
            "enumeration supports d <= 2, got {d}"
        )));
    }
    if !(1..=26).contains(&alphabet_size) {
        return Err(Error::BadParameter(format!(
            "alphabet size must be in 1..=26, got {alphabet_size}"
        )));
    }
    let alphabet: Vec<u8> = (b'a'..).take(alphabet_size).collect();
    let mut all = BTreeSet::new();
    all.insert(w.0.clone());
    let mut frontier = vec![w.0.clone()];
    for _ in 0..d {
        let mut next = Vec::new();
        for member in &frontier {
            let bytes = member.as_bytes();
            let mut emit = |v: Vec<u8>, all: &mut BTreeSet<String>| -> Result<()> {
                let s = String::from_utf8(v).expect("ascii");
                if !all.contains(&s) {
                    if all.len() >= budget {
                        return Err(Error::BudgetExceeded(budget));
                    }
                    all.insert(s.clone());
                    next.push(s);
                }
                Ok(())
            };
            for i in 0..bytes.len() {
                for &c in &alphabet {
                    if c != bytes[i] {
                        let mut v = bytes.to_vec();
                        v[i] = c;
                        emit(v, &mut all)?;
                    }
                }
                if bytes.len() > 1 {
                    let mut v = bytes.to_vec();
                    v.remove(i);
                    emit(v, &mut all)?;
                }
            }
            for i in 0..=bytes.len() {
                for &c in &alphabet {
                    let mut v = bytes.to_vec();
                    v.insert(i, c);
                    emit(v, &mut all)?;
                }
            }
        }
        frontier = next;
    }
    Ok(FuzzySet::from_texts(w, d, all))
}
