//! Desk-scale measurements: fuzzy-set construction, index build and size,
//! listing vs. trie search latency, gram accuracy and the wildcard storage
//! ratio. Everything is driven by a seeded corpus so reruns are comparable.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::crypto::{keygen_with, KeyMaterial, DEFAULT_SYMBOL_BITS, DEFAULT_TRAPDOOR_BITS};
use crate::error::{Error, Result};
use crate::fuzzyset::{
    edit_distance, enumeration_fuzzy_set, fuzzy_set, normalize_keyword, wildcard_fuzzy_set, Keyword, Method,
};
use crate::index::{
    build_listing_index, build_trie_index, make_request, search_listing, search_trie, Corpus, Index,
};

pub const CSV_HEADER: &str = "experiment,method,d,keyword_count,avg_word_len,elapsed_ms,bytes,result_count";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub experiment: String,
    pub method: String,
    pub d: usize,
    pub keyword_count: usize,
    pub avg_word_len: f64,
    pub elapsed_ms: f64,
    pub bytes: u64,
    pub result_count: u64,
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("in-memory csv write");
        }
        let mut out = String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8");
        if self.rows.is_empty() {
            out = format!("{CSV_HEADER}\n");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn rows_for<'a>(&'a self, experiment: &'a str) -> impl Iterator<Item = &'a BenchRow> + 'a {
        self.rows.iter().filter(move |r| r.experiment == experiment)
    }
}

/// `count` distinct lowercase words whose mean length is within 0.3 of
/// `avg_len` (exactly `avg_len` rounded to 1/count before spreading), each
/// with one synthetic fid.
pub fn synth_corpus(count: usize, avg_len: f64, seed: u64) -> Result<Corpus> {
    if count == 0 {
        return Err(Error::BadParameter("keyword count must be at least 1".into()));
    }
    if !(avg_len >= 1.0) || !avg_len.is_finite() {
        return Err(Error::BadParameter(format!("average length {avg_len} must be at least 1")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let base = avg_len.floor() as usize;
    let long = ((avg_len - base as f64) * count as f64).round() as usize;
    let mut lengths: Vec<usize> = (0..count).map(|i| if i < long { base + 1 } else { base }).collect();
    // Spread lengths symmetrically in pairs so the mean is unchanged.
    for pair in lengths.chunks_mut(2) {
        if let [a, b] = pair {
            let spread = rng.gen_range(0..=3usize).min(*a - 1).min(*b - 1);
            *a += spread;
            *b -= spread;
        }
    }
    lengths.shuffle(&mut rng);

    let mut seen = BTreeSet::new();
    let mut corpus = Corpus::new();
    for (i, len) in lengths.into_iter().enumerate() {
        let word = (0..10_000)
            .map(|_| random_word(&mut rng, len))
            .find(|w| !seen.contains(w))
            .ok_or_else(|| Error::BadParameter(format!("cannot draw {count} distinct words of length {len}")))?;
        seen.insert(word.clone());
        corpus.insert(Keyword::new(word)?, vec![format!("doc{i:06}").into_bytes()]);
    }
    Ok(corpus)
}

pub fn random_word(rng: &mut impl Rng, len: usize) -> String {
    (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

/// Applies `edits` random substitutions, insertions or deletions.
pub fn perturb(word: &str, edits: usize, rng: &mut impl Rng) -> String {
    let mut chars: Vec<u8> = word.bytes().collect();
    for _ in 0..edits {
        let c = rng.gen_range(b'a'..=b'z');
        match rng.gen_range(0..3) {
            0 if !chars.is_empty() => {
                let i = rng.gen_range(0..chars.len());
                chars[i] = c;
            }
            1 if chars.len() > 1 => {
                chars.remove(rng.gen_range(0..chars.len()));
            }
            _ => chars.insert(rng.gen_range(0..=chars.len()), c),
        }
    }
    String::from_utf8(chars).expect("ascii")
}

/// One word per line; blank or unusable lines are skipped. Repeated words
/// collect one fid per occurrence.
pub fn load_word_list(path: impl AsRef<Path>) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    let mut corpus = Corpus::new();
    for (n, line) in text.lines().enumerate() {
        if let Ok(w) = normalize_keyword(line.trim()) {
            corpus.entry(w).or_default().push(format!("line{:06}", n + 1).into_bytes());
        }
    }
    if corpus.is_empty() {
        return Err(Error::BadParameter("word list has no usable words".into()));
    }
    Ok(corpus)
}

pub fn mean_word_len(corpus: &Corpus) -> f64 {
    corpus.keys().map(Keyword::len).sum::<usize>() as f64 / corpus.len().max(1) as f64
}

/// Fastest of `reps` runs of building every keyword's fuzzy set, plus the
/// total variant count.
pub fn time_fuzzy_sets(corpus: &Corpus, d: usize, method: Method, reps: usize) -> (Duration, usize) {
    let mut best = Duration::MAX;
    let mut total = 0;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        total = corpus.keys().map(|w| fuzzy_set(w, d, method).len()).sum();
        best = best.min(start.elapsed());
    }
    (best, total)
}

/// Wildcard entries versus exact-enumeration entries for one word over a–z.
pub fn storage_ratio(w: &Keyword, d: usize) -> Result<(usize, usize)> {
    Ok((wildcard_fuzzy_set(w, d).len(), enumeration_fuzzy_set(w, d, 26)?.len()))
}

/// Search quality against the edit-distance ball `{u : ed(w,u) <= k}`, with
/// the exact-match rule: a query that is itself indexed expects only itself.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Accuracy {
    pub queries: usize,
    pub expected: usize,
    pub found: usize,
    pub false_positives: usize,
    pub returned: usize,
}

impl Accuracy {
    pub fn completeness(&self) -> f64 {
        if self.expected == 0 {
            1.0
        } else {
            self.found as f64 / self.expected as f64
        }
    }

    pub fn false_positive_rate(&self) -> f64 {
        if self.returned == 0 {
            0.0
        } else {
            self.false_positives as f64 / self.returned as f64
        }
    }
}

/// Runs `queries` perturbed and random queries against a trie over
/// `corpus` and scores decrypted keywords against the oracle.
pub fn measure_accuracy(corpus: &Corpus, method: Method, queries: usize, seed: u64) -> Result<Accuracy> {
    let km = keygen_with(128, DEFAULT_TRAPDOOR_BITS, DEFAULT_SYMBOL_BITS, Some(&seed.to_le_bytes()))?;
    let index = build_trie_index(corpus, 1, &km, method)?;
    let words: Vec<&Keyword> = corpus.keys().collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    let mut acc = Accuracy::default();
    for _ in 0..queries {
        let q = sample_query(&words, &mut rng);
        let expected = oracle(corpus, &q, 1);
        let got: BTreeSet<Keyword> = search_trie(&index, &make_request(&q, 1, &km, method))?
            .decrypt(&km)?
            .into_iter()
            .map(|(_, w)| w)
            .collect();
        acc.queries += 1;
        acc.expected += expected.len();
        acc.returned += got.len();
        acc.found += got.intersection(&expected).count();
        acc.false_positives += got.difference(&expected).count();
    }
    Ok(acc)
}

pub const ACCURACY_CSV_HEADER: &str =
    "label,method,keyword_count,queries,expected,found,false_positives,returned,completeness,fp_rate";

#[derive(Clone, Debug, Serialize)]
pub struct AccuracyRow {
    pub label: String,
    pub method: String,
    pub keyword_count: usize,
    pub queries: usize,
    pub expected: usize,
    pub found: usize,
    pub false_positives: usize,
    pub returned: usize,
    pub completeness: f64,
    pub fp_rate: f64,
}

impl AccuracyRow {
    pub fn new(label: impl Into<String>, method: Method, keyword_count: usize, acc: &Accuracy) -> Self {
        AccuracyRow {
            label: label.into(),
            method: method.name().into(),
            keyword_count,
            queries: acc.queries,
            expected: acc.expected,
            found: acc.found,
            false_positives: acc.false_positives,
            returned: acc.returned,
            completeness: acc.completeness(),
            fp_rate: acc.false_positive_rate(),
        }
    }
}

pub fn accuracy_csv(rows: &[AccuracyRow]) -> String {
    if rows.is_empty() {
        return format!("{ACCURACY_CSV_HEADER}\n");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

pub fn sample_query(words: &[&Keyword], rng: &mut impl Rng) -> Keyword {
    loop {
        let base = words[rng.gen_range(0..words.len())].as_str();
        let text = match rng.gen_range(0..4) {
            0 => base.to_string(),
            1 => perturb(base, 1, rng),
            2 => perturb(base, 2, rng),
            _ => random_word(rng, base.len()),
        };
        if let Ok(k) = Keyword::new(text) {
            return k;
        }
    }
}

fn oracle(corpus: &Corpus, q: &Keyword, k: usize) -> BTreeSet<Keyword> {
    if corpus.contains_key(q) {
        return BTreeSet::from([q.clone()]);
    }
    corpus
        .keys()
        .filter(|u| edit_distance(q.as_str(), u.as_str()) <= k)
        .cloned()
        .collect()
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub keyword_counts: Vec<usize>,
    pub methods: Vec<Method>,
    pub ds: Vec<usize>,
    pub avg_len: f64,
    pub seed: u64,
    pub queries: usize,
    pub reps: usize,
    pub word_list: Option<PathBuf>,
    pub trapdoor_bits: usize,
    pub symbol_bits: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            keyword_counts: vec![500, 1000, 2000],
            methods: vec![Method::Wildcard, Method::Gram],
            ds: vec![1, 2],
            avg_len: 7.44,
            seed: 7,
            queries: 200,
            reps: 3,
            word_list: None,
            trapdoor_bits: DEFAULT_TRAPDOOR_BITS,
            symbol_bits: DEFAULT_SYMBOL_BITS,
        }
    }
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    let km = keygen_with(128, config.trapdoor_bits, config.symbol_bits, Some(&config.seed.to_le_bytes()))?;
    let source = config.word_list.as_ref().map(load_word_list).transpose()?;
    let mut report = BenchReport::default();
    for &count in &config.keyword_counts {
        let corpus = match &source {
            Some(all) => all.iter().take(count).map(|(k, v)| (k.clone(), v.clone())).collect(),
            None => synth_corpus(count, config.avg_len, config.seed)?,
        };
        bench_corpus(config, &km, &corpus, &mut report)?;
    }
    Ok(report)
}

fn bench_corpus(config: &BenchConfig, km: &KeyMaterial, corpus: &Corpus, report: &mut BenchReport) -> Result<()> {
    let count = corpus.len();
    let avg = mean_word_len(corpus);
    let mut row = |experiment: &str, method: Method, d: usize, elapsed: Duration, bytes: usize, results: usize| {
        report.rows.push(BenchRow {
            experiment: experiment.into(),
            method: method.name().into(),
            d,
            keyword_count: count,
            avg_word_len: (avg * 100.0).round() / 100.0,
            elapsed_ms: elapsed.as_secs_f64() * 1e3,
            bytes: bytes as u64,
            result_count: results as u64,
        });
    };
    let words: Vec<&Keyword> = corpus.keys().collect();
    for &method in &config.methods {
        for &d in &config.ds {
            let (t, variants) = time_fuzzy_sets(corpus, d, method, config.reps);
            row("fuzzy_set", method, d, t, 0, variants);

            let start = Instant::now();
            let listing = build_listing_index(corpus, d, km, method)?;
            let t_listing = start.elapsed();
            let start = Instant::now();
            let trie = build_trie_index(corpus, d, km, method)?;
            let t_trie = start.elapsed();
            let listing = Index::Listing(listing);
            let trie = Index::Trie(trie);
            row("build_listing", method, d, t_listing, listing.to_bytes().len(), listing.entry_count());
            row("build_trie", method, d, t_trie, trie.to_bytes().len(), trie.entry_count());

            let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ d as u64);
            for (label, edits) in [("exact", 0), ("fuzzy", 1)] {
                let reqs: Vec<_> = (0..config.queries.max(1))
                    .map(|_| {
                        let base = words[rng.gen_range(0..words.len())].as_str();
                        let q = Keyword::new(perturb(base, edits, &mut rng)).unwrap_or_else(|_| words[0].clone());
                        make_request(&q, d.min(1), km, method)
                    })
                    .collect();
                for (name, index) in [("listing", &listing), ("trie", &trie)] {
                    let start = Instant::now();
                    let mut hits = 0;
                    for req in &reqs {
                        hits += match index {
                            Index::Listing(i) => search_listing(i, req)?.len(),
                            Index::Trie(t) => search_trie(t, req)?.len(),
                            Index::AuthTrie(_) => unreachable!(),
                        };
                    }
                    let mean = start.elapsed() / reqs.len() as u32;
                    row(&format!("search_{name}_{label}"), method, d, mean, 0, hits);
                }
            }
        }
    }
    Ok(())
}
