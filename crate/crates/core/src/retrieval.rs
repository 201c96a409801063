//! Lexical retrieval over a small corpus of code fragments, template
//! definitions and API notes, plus token-budgeted context selection.
//!
//! Scoring is Okapi BM25:
//!
//! ```text
//! score(d, q) = Σ_{t ∈ q} idf(t) · tf(t,d)·(k1+1) / (tf(t,d) + k1·(1 − b + b·len(d)/avglen))
//! idf(t)      = ln(1 + (N − n_t + 0.5) / (n_t + 0.5))
//! ```
//!
//! with `k1 = 1.2`, `b = 0.75`. Query terms are deduplicated; `len(d)` counts
//! analyzed terms (lowercased alphanumeric runs).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocKind {
    CodeFragment,
    TemplateDefinition,
    ApiDoc,
}

impl DocKind {
    /// Kind from the top-level corpus subdirectory. Anything outside
    /// `templates/` and `api/` is treated as code.
    pub fn from_top_dir(dir: &str) -> Self {
        match dir {
            "templates" => DocKind::TemplateDefinition,
            "api" => DocKind::ApiDoc,
            _ => DocKind::CodeFragment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub doc_id: String,
    pub kind: DocKind,
    pub text: String,
    pub token_count: usize,
}

impl CorpusDocument {
    pub fn new(doc_id: impl Into<String>, kind: DocKind, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            doc_id: doc_id.into(),
            kind,
            token_count: text.split_whitespace().count(),
            text,
        }
    }
}

/// Lowercase, split on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params<S> {
    pub k1: S,
    pub b: S,
}

impl<S: Scalar> Default for Bm25Params<S> {
    fn default() -> Self {
        Self {
            k1: S::lit(1.2),
            b: S::lit(0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit<S> {
    pub doc_id: String,
    pub score: S,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalIndex {
    documents: BTreeMap<String, CorpusDocument>,
    /// term -> doc_id -> term frequency
    postings: BTreeMap<String, BTreeMap<String, u32>>,
    doc_len: BTreeMap<String, usize>,
    avg_len: f64,
}

impl RetrievalIndex {
    pub fn from_documents(docs: impl IntoIterator<Item = CorpusDocument>) -> Self {
        let mut idx = Self::default();
        for doc in docs {
            let terms = tokenize(&doc.text);
            idx.doc_len.insert(doc.doc_id.clone(), terms.len());
            for term in terms {
                *idx.postings
                    .entry(term)
                    .or_default()
                    .entry(doc.doc_id.clone())
                    .or_insert(0) += 1;
            }
            idx.documents.insert(doc.doc_id.clone(), doc);
        }
        let total: usize = idx.doc_len.values().sum();
        idx.avg_len = if idx.documents.is_empty() {
            0.0
        } else {
            total as f64 / idx.documents.len() as f64
        };
        idx
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> impl Iterator<Item = &CorpusDocument> {
        self.documents.values()
    }

    pub fn document(&self, doc_id: &str) -> Option<&CorpusDocument> {
        self.documents.get(doc_id)
    }

    pub fn postings(&self) -> &BTreeMap<String, BTreeMap<String, u32>> {
        &self.postings
    }

    pub fn average_len(&self) -> f64 {
        self.avg_len
    }

    /// Ranked hits with the default parameters in `f64`.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<Hit<f64>> {
        self.retrieve_with(query, k, Bm25Params::default())
    }

    pub fn retrieve_with<S: Scalar>(&self, query: &str, k: usize, params: Bm25Params<S>) -> Vec<Hit<S>> {
        if k == 0 || self.documents.is_empty() {
            return Vec::new();
        }
        let n = S::from_count(self.documents.len());
        let half = S::lit(0.5);
        let avg = S::lit(self.avg_len);
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();

        let mut scores: BTreeMap<&str, S> = BTreeMap::new();
        for term in &terms {
            let Some(docs) = self.postings.get(term) else {
                continue;
            };
            let n_t = S::from_count(docs.len());
            let idf = (S::one() + (n - n_t + half) / (n_t + half)).ln();
            for (doc_id, &tf) in docs {
                let tf = S::from_u32(tf).expect("term frequency fits scalar");
                let len = S::from_count(self.doc_len[doc_id]);
                let norm = S::one() - params.b + params.b * len / avg;
                let part = idf * tf * (params.k1 + S::one()) / (tf + params.k1 * norm);
                let entry = scores.entry(doc_id.as_str()).or_insert_with(S::zero);
                *entry = *entry + part;
            }
        }

        let mut hits: Vec<Hit<S>> = scores
            .into_iter()
            .map(|(doc_id, score)| Hit {
                doc_id: doc_id.to_string(),
                score,
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        hits.truncate(k);
        hits
    }
}

/// Takes documents in rank order until the next one would overflow `budget_tokens`.
pub fn trim_to_budget<S>(results: &[Hit<S>], idx: &RetrievalIndex, budget_tokens: usize) -> Vec<CorpusDocument> {
    let mut used = 0;
    let mut out = Vec::new();
    for hit in results {
        let Some(doc) = idx.document(&hit.doc_id) else {
            continue;
        };
        if used + doc.token_count > budget_tokens {
            break;
        }
        used += doc.token_count;
        out.push(doc.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
struct Fingerprint {
    doc_id: String,
    size: u64,
    mtime_ns: u128,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexCache {
    fingerprints: Vec<Fingerprint>,
    documents: Vec<CorpusDocument>,
}

fn corpus_files(corpus_dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    if !corpus_dir.exists() {
        return Ok(out);
    }
    let mut stack = vec![corpus_dir.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::storage(dir.display(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::storage(dir.display(), e))?;
            let path = entry.path();
            let ft = entry.file_type().map_err(|e| Error::storage(path.display(), e))?;
            if ft.is_dir() {
                stack.push(path);
            } else if ft.is_file() {
                let rel = path.strip_prefix(corpus_dir).expect("walked path is below corpus root");
                let doc_id = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                out.push((doc_id, path));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn fingerprints(files: &[(String, PathBuf)]) -> Result<Vec<Fingerprint>> {
    files
        .iter()
        .map(|(doc_id, path)| {
            let meta = std::fs::metadata(path).map_err(|e| Error::storage(path.display(), e))?;
            let mtime_ns = meta
                .modified()
                .ok()
                .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
                .map_or(0, |d| d.as_nanos());
            Ok(Fingerprint {
                doc_id: doc_id.clone(),
                size: meta.len(),
                mtime_ns,
            })
        })
        .collect()
}

fn read_documents(files: &[(String, PathBuf)]) -> Result<Vec<CorpusDocument>> {
    files
        .iter()
        .map(|(doc_id, path)| {
            let bytes = std::fs::read(path).map_err(|e| Error::storage(path.display(), e))?;
            let top = doc_id.split('/').next().unwrap_or_default();
            let kind = if doc_id.contains('/') {
                DocKind::from_top_dir(top)
            } else {
                DocKind::CodeFragment
            };
            Ok(CorpusDocument::new(doc_id.clone(), kind, String::from_utf8_lossy(&bytes)))
        })
        .collect()
}

/// One document per file below `corpus_dir`.
pub fn build_index(corpus_dir: &Path) -> Result<RetrievalIndex> {
    let files = corpus_files(corpus_dir)?;
    Ok(RetrievalIndex::from_documents(read_documents(&files)?))
}

/// Like [`build_index`], reusing `cache_path` when no file's size or
/// modification time changed. Cache write failures are logged, not fatal.
pub fn load_or_build_index(corpus_dir: &Path, cache_path: &Path) -> Result<RetrievalIndex> {
    let files = corpus_files(corpus_dir)?;
    let current = fingerprints(&files)?;
    if let Ok(text) = std::fs::read_to_string(cache_path) {
        match serde_json::from_str::<IndexCache>(&text) {
            Ok(cache) if cache.fingerprints == current => {
                return Ok(RetrievalIndex::from_documents(cache.documents));
            }
            Ok(_) => log::info!("corpus changed, rebuilding {}", cache_path.display()),
            Err(e) => log::warn!("ignoring unreadable index cache {}: {e}", cache_path.display()),
        }
    }
    let documents = read_documents(&files)?;
    let cache = IndexCache {
        fingerprints: current,
        documents: documents.clone(),
    };
    match serde_json::to_vec_pretty(&cache) {
        Ok(bytes) => {
            if let Err(e) = std::fs::write(cache_path, bytes) {
                log::warn!("could not write index cache {}: {e}", cache_path.display());
            }
        }
        Err(e) => log::warn!("could not encode index cache: {e}"),
    }
    Ok(RetrievalIndex::from_documents(documents))
}

/// Loads a cache written by [`load_or_build_index`] without its corpus.
pub fn load_index_cache(cache_path: &Path) -> Result<RetrievalIndex> {
    let text = match std::fs::read_to_string(cache_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArtifact(cache_path.display().to_string()))
        }
        Err(e) => return Err(Error::storage(cache_path.display(), e)),
    };
    let cache: IndexCache = serde_json::from_str(&text)?;
    Ok(RetrievalIndex::from_documents(cache.documents))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> CorpusDocument {
        CorpusDocument::new(id, DocKind::CodeFragment, text)
    }

    fn three_docs() -> RetrievalIndex {
        RetrievalIndex::from_documents([
            doc("d1", "axi stream buffer load"),
            doc("d2", "multiplier compute unroll"),
            doc("d3", "axi master burst"),
        ])
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("AXI-Stream buffer_X, 42"), ["axi", "stream", "buffer", "x", "42"]);
    }

    #[test]
    fn token_count_is_whitespace_words() {
        assert_eq!(doc("a", "sc_fifo_in<DATA> din1;\n  x").token_count, 3);
    }

    #[test]
    fn unique_term_ranks_first() {
        let idx = three_docs();
        let hits = idx.retrieve("multiplier", 3);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, "d2");
    }

    #[test]
    fn axi_buffer_ranking() {
        let hits = three_docs().retrieve("axi buffer", 3);
        let ids: Vec<_> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["d1", "d3"]);
    }

    #[test]
    fn zero_k_and_empty_index() {
        assert!(three_docs().retrieve("axi", 0).is_empty());
        assert!(RetrievalIndex::default().retrieve("axi", 5).is_empty());
    }

    #[test]
    fn f32_and_f64_agree_on_order() {
        let idx = three_docs();
        let a: Vec<_> = idx.retrieve("axi buffer burst", 3).into_iter().map(|h| h.doc_id).collect();
        let b: Vec<_> = idx
            .retrieve_with::<f32>("axi buffer burst", 3, Bm25Params::default())
            .into_iter()
            .map(|h| h.doc_id)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_examples() {
        let idx = RetrievalIndex::from_documents([
            doc("a", &"w ".repeat(50)),
            doc("b", &"w ".repeat(60)),
            doc("c", &"w ".repeat(70)),
        ]);
        let ranked: Vec<Hit<f64>> = ["a", "b", "c"]
            .iter()
            .map(|id| Hit {
                doc_id: id.to_string(),
                score: 1.0,
            })
            .collect();
        let ids = |docs: Vec<CorpusDocument>| docs.into_iter().map(|d| d.doc_id).collect::<Vec<_>>();
        assert_eq!(ids(trim_to_budget(&ranked, &idx, 120)), ["a", "b"]);
        assert!(trim_to_budget(&ranked, &idx, 0).is_empty());
        assert_eq!(ids(trim_to_budget(&ranked, &idx, 1000)), ["a", "b", "c"]);
    }

    #[test]
    fn build_index_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(build_index(dir.path()).unwrap().len(), 0);
        for (sub, name, text) in [
            ("code", "a.cc", "axi stream"),
            ("templates", "vecmul.json", "load compute store"),
            ("api", "axi.md", "dma api"),
        ] {
            std::fs::create_dir_all(dir.path().join(sub)).unwrap();
            std::fs::write(dir.path().join(sub).join(name), text).unwrap();
        }
        let idx = build_index(dir.path()).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.document("templates/vecmul.json").unwrap().kind, DocKind::TemplateDefinition);
        assert_eq!(idx.document("api/axi.md").unwrap().kind, DocKind::ApiDoc);
        assert_eq!(idx, build_index(dir.path()).unwrap());

        let cache_dir = tempfile::tempdir().unwrap();
        let cache = cache_dir.path().join("index.json");
        let fresh = load_or_build_index(dir.path(), &cache).unwrap();
        assert!(cache.is_file());
        assert_eq!(fresh, idx);
        assert_eq!(load_index_cache(&cache).unwrap(), idx);
        assert_eq!(load_or_build_index(dir.path(), &cache).unwrap(), idx);
    }
}
