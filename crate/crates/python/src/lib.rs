//! Python bindings: keys, fuzzy sets, indexes, search, verification and
//! multi-user blinding.

use std::collections::BTreeMap;

use fuzzkey::crypto::keygen_with;
use fuzzkey::fuzzyset::{enumeration_fuzzy_set, fuzzy_set as build_fuzzy_set};
use fuzzkey::index::{build_listing_index, build_trie_index, search_listing, search_trie, IndexKind};
use fuzzkey::multiuser::{blind_request, unblind_request, PublishedDirectory};
use fuzzkey::vfks::{build_auth_trie, search_with_proof, verify as verify_transcript, Proof};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use rand::rngs::OsRng;

create_exception!(fuzzkey_py, FuzzkeyError, PyException);

fn py_err(e: fuzzkey::Error) -> PyErr {
    FuzzkeyError::new_err(e.to_string())
}

fn keyword(word: &str) -> PyResult<fuzzkey::Keyword> {
    fuzzkey::Keyword::new(word).map_err(py_err)
}

fn method(name: &str) -> PyResult<fuzzkey::Method> {
    name.parse().map_err(|_| FuzzkeyError::new_err(format!("unknown method {name:?}")))
}

#[pyfunction]
fn edit_distance(a: &str, b: &str) -> usize {
    fuzzkey::edit_distance(a, b)
}

#[pyfunction]
fn normalize_keyword(raw: &str) -> PyResult<String> {
    Ok(fuzzkey::normalize_keyword(raw).map_err(py_err)?.as_str().to_string())
}

/// Sorted variant strings of the fuzzy set of `word`.
#[pyfunction]
#[pyo3(signature = (word, d, method = "wildcard"))]
fn fuzzy_set(word: &str, d: usize, method: &str) -> PyResult<Vec<String>> {
    let set = build_fuzzy_set(&keyword(word)?, d, self::method(method)?);
    Ok(set.iter().map(|v| v.text().to_string()).collect())
}

/// Number of concrete words within distance `d` of `word`.
#[pyfunction]
#[pyo3(signature = (word, d, alphabet_size = 26))]
fn enumeration_count(word: &str, d: usize, alphabet_size: usize) -> PyResult<usize> {
    Ok(enumeration_fuzzy_set(&keyword(word)?, d, alphabet_size).map_err(py_err)?.len())
}

#[pyclass(module = "fuzzkey_py")]
#[derive(Clone)]
struct KeyMaterial(fuzzkey::KeyMaterial);

#[pymethods]
impl KeyMaterial {
    #[staticmethod]
    #[pyo3(signature = (lambda_ = 128, bits = 160, symbol_bits = 4, seed = None))]
    fn generate(lambda_: usize, bits: usize, symbol_bits: usize, seed: Option<&[u8]>) -> PyResult<Self> {
        Ok(KeyMaterial(keygen_with(lambda_, bits, symbol_bits, seed).map_err(py_err)?))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(KeyMaterial(fuzzkey::KeyMaterial::load(path).map_err(py_err)?))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    #[getter]
    fn trapdoor_bits(&self) -> usize {
        self.0.trapdoor_bits()
    }

    #[getter]
    fn symbol_bits(&self) -> usize {
        self.0.symbol_bits()
    }

    #[getter]
    fn xi<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new_bound(py, self.0.xi())
    }
}

#[pyclass(module = "fuzzkey_py")]
#[derive(Clone)]
struct SearchRequest(fuzzkey::SearchRequest);

#[pymethods]
impl SearchRequest {
    #[getter]
    fn k(&self) -> usize {
        self.0.k
    }

    /// Trapdoors as lowercase hex, exact trapdoor first.
    #[getter]
    fn trapdoors(&self) -> Vec<String> {
        self.0.trapdoors.iter().map(|t| t.to_hex()).collect()
    }

    fn blind(&self, xi: &[u8]) -> Self {
        SearchRequest(blind_request(&self.0, xi))
    }

    fn unblind(&self, xi: &[u8]) -> Self {
        SearchRequest(unblind_request(&self.0, xi))
    }

    fn __len__(&self) -> usize {
        self.0.trapdoors.len()
    }
}

#[pyfunction]
#[pyo3(signature = (word, k, key, method = "wildcard"))]
fn make_request(word: &str, k: usize, key: &KeyMaterial, method: &str) -> PyResult<SearchRequest> {
    Ok(SearchRequest(fuzzkey::make_request(&keyword(word)?, k, &key.0, self::method(method)?)))
}

#[pyclass(module = "fuzzkey_py")]
struct SearchResult {
    results: fuzzkey::ResultSet,
    proofs: Option<Vec<Proof>>,
}

#[pymethods]
impl SearchResult {
    #[getter]
    fn exact_hit(&self) -> bool {
        self.results.exact_hit
    }

    #[getter]
    fn records<'py>(&self, py: Python<'py>) -> Vec<Bound<'py, PyBytes>> {
        self.results.records.iter().map(|r| PyBytes::new_bound(py, &r.to_bytes())).collect()
    }

    #[getter]
    fn has_proofs(&self) -> bool {
        self.proofs.is_some()
    }

    /// `(fid, keyword)` pairs.
    fn decrypt<'py>(&self, py: Python<'py>, key: &KeyMaterial) -> PyResult<Vec<(Bound<'py, PyBytes>, String)>> {
        let pairs = self.results.decrypt(&key.0).map_err(py_err)?;
        Ok(pairs
            .into_iter()
            .map(|(fid, w)| (PyBytes::new_bound(py, &fid), w.as_str().to_string()))
            .collect())
    }

    /// `(accepted, reason)`; raises if the index returned no proofs.
    #[pyo3(signature = (request, key, sample_rate = 1.0))]
    fn verify(&self, request: &SearchRequest, key: &KeyMaterial, sample_rate: f64) -> PyResult<(bool, String)> {
        let proofs = self
            .proofs
            .as_ref()
            .ok_or_else(|| FuzzkeyError::new_err("result carries no proofs"))?;
        let v = verify_transcript(&request.0, &self.results, proofs, &key.0, sample_rate);
        Ok((v.accepted, format!("{:?}", v.reason)))
    }

    fn __len__(&self) -> usize {
        self.results.records.len()
    }
}

#[derive(FromPyObject)]
enum Fid {
    Text(String),
    Raw(Vec<u8>),
}

#[pyclass(module = "fuzzkey_py")]
struct Index(fuzzkey::Index);

#[pymethods]
impl Index {
    /// Builds from `{keyword: [fid, ...]}`; kind is `listing`, `trie` or `auth`.
    #[staticmethod]
    #[pyo3(signature = (corpus, d, key, method = "wildcard", kind = "trie"))]
    fn build(corpus: BTreeMap<String, Vec<Fid>>, d: usize, key: &KeyMaterial, method: &str, kind: &str) -> PyResult<Self> {
        let mut c = fuzzkey::Corpus::new();
        for (w, fids) in corpus {
            let entry: &mut Vec<Vec<u8>> = c.entry(keyword(&w)?).or_default();
            entry.extend(fids.into_iter().map(|f| match f {
                Fid::Text(s) => s.into_bytes(),
                Fid::Raw(b) => b,
            }));
        }
        let method = self::method(method)?;
        let kind: IndexKind = kind.parse().map_err(|_| FuzzkeyError::new_err(format!("unknown kind {kind:?}")))?;
        let index = match kind {
            IndexKind::Listing => fuzzkey::Index::Listing(build_listing_index(&c, d, &key.0, method).map_err(py_err)?),
            IndexKind::Trie => fuzzkey::Index::Trie(build_trie_index(&c, d, &key.0, method).map_err(py_err)?),
            IndexKind::AuthTrie => fuzzkey::Index::AuthTrie(build_auth_trie(&c, d, &key.0, method).map_err(py_err)?),
        };
        Ok(Index(index))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Index(fuzzkey::Index::load(path).map_err(py_err)?))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Index(fuzzkey::Index::from_bytes(data).map_err(py_err)?))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new_bound(py, &self.0.to_bytes())
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind().name()
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.0.meta().method.name()
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.meta().d
    }

    #[getter]
    fn entry_count(&self) -> usize {
        self.0.entry_count()
    }

    /// Runs the search; authenticated indexes also return proofs.
    fn search(&self, request: &SearchRequest) -> PyResult<SearchResult> {
        let (results, proofs) = match &self.0 {
            fuzzkey::Index::Listing(i) => (search_listing(i, &request.0).map_err(py_err)?, None),
            fuzzkey::Index::Trie(t) => (search_trie(t, &request.0).map_err(py_err)?, None),
            fuzzkey::Index::AuthTrie(a) => {
                let (r, p) = search_with_proof(a, &request.0).map_err(py_err)?;
                (r, Some(p))
            }
        };
        Ok(SearchResult { results, proofs })
    }
}

/// Owner-side user directory.
#[pyclass(module = "fuzzkey_py")]
struct UserDirectory(fuzzkey::multiuser::UserDirectory);

#[pymethods]
impl UserDirectory {
    #[new]
    fn new(xi: &[u8]) -> Self {
        UserDirectory(fuzzkey::multiuser::UserDirectory::new(xi.to_vec()))
    }

    #[getter]
    fn epoch(&self) -> u64 {
        self.0.epoch()
    }

    #[getter]
    fn xi<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new_bound(py, self.0.current_xi())
    }

    #[getter]
    fn users(&self) -> Vec<String> {
        self.0.users().map(str::to_string).collect()
    }

    fn enroll(&mut self, user: &str, user_key: &[u8]) -> PyResult<()> {
        self.0.enroll_user(user, user_key, &mut OsRng).map_err(py_err)
    }

    /// Returns the new blinding key.
    fn revoke<'py>(&mut self, py: Python<'py>, user: &str) -> PyResult<Bound<'py, PyBytes>> {
        let xi = self.0.revoke_user(user, &mut OsRng).map_err(py_err)?;
        Ok(PyBytes::new_bound(py, &xi))
    }

    /// The published directory in its file encoding.
    fn publish<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new_bound(py, &self.0.publish().to_bytes())
    }
}

/// Recovers the current blinding key from a published directory.
#[pyfunction]
fn unwrap_xi<'py>(py: Python<'py>, published: &[u8], user: &str, user_key: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    let dir = PublishedDirectory::from_bytes(published).map_err(py_err)?;
    Ok(PyBytes::new_bound(py, &dir.unwrap_for(user, user_key).map_err(py_err)?))
}

#[pymodule]
fn fuzzkey_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FuzzkeyError", m.py().get_type_bound::<FuzzkeyError>())?;
    m.add_class::<KeyMaterial>()?;
    m.add_class::<SearchRequest>()?;
    m.add_class::<SearchResult>()?;
    m.add_class::<Index>()?;
    m.add_class::<UserDirectory>()?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_keyword, m)?)?;
    m.add_function(wrap_pyfunction!(fuzzy_set, m)?)?;
    m.add_function(wrap_pyfunction!(enumeration_count, m)?)?;
    m.add_function(wrap_pyfunction!(make_request, m)?)?;
    m.add_function(wrap_pyfunction!(unwrap_xi, m)?)?;
    Ok(())
}
