//! BM25 index over a concept-tagged corpus.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CACHE_FORMAT: &str = "cika-bm25";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate document id `{id}` on lines {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("cache: {0}")]
    Cache(String),
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub concept_tags: Vec<String>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

/// Lowercased alphanumeric runs of at least two characters, plus each
/// `$...$` segment kept verbatim as one token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut rest = text;
    loop {
        let Some(open) = rest.find('$') else {
            push_words(rest, &mut tokens);
            break;
        };
        let Some(len) = rest[open + 1..].find('$') else {
            push_words(rest, &mut tokens);
            break;
        };
        push_words(&rest[..open], &mut tokens);
        let close = open + 1 + len;
        if close > open + 1 {
            tokens.push(rest[open..=close].to_string());
        }
        rest = &rest[close + 1..];
    }
    tokens
}

fn push_words(text: &str, out: &mut Vec<String>) {
    for word in text.split(|c: char| !c.is_alphanumeric()) {
        if word.chars().count() >= 2 {
            out.push(word.to_lowercase());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexedDoc {
    id: String,
    concept_tags: Vec<String>,
    length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    params: Bm25Params,
    docs: Vec<IndexedDoc>,
    /// term -> (doc position, term frequency), positions ascending.
    postings: BTreeMap<String, Vec<(usize, u32)>>,
    avgdl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
    pub concept_tags: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    format: String,
    version: u32,
    index: Bm25Index,
}

/// `ln((N − df + 0.5) / (df + 0.5) + 1)`.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    ((n_docs as f64 - df as f64 + 0.5) / (df as f64 + 0.5) + 1.0).ln()
}

/// Saturated term-frequency factor of one term in one document.
pub fn term_weight(tf: f64, doc_len: f64, avgdl: f64, params: Bm25Params) -> f64 {
    let norm = params.k1 * (1.0 - params.b + params.b * doc_len / avgdl);
    tf * (params.k1 + 1.0) / (tf + norm)
}

impl Bm25Index {
    /// Builds from `(line number, doc)` pairs; documents are stored in id order.
    pub fn from_numbered_docs(
        docs: Vec<(usize, CorpusDoc)>,
        params: Bm25Params,
    ) -> Result<Self, RetrievalError> {
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (line, doc) in &docs {
            if let Some(&first) = seen.get(&doc.id) {
                return Err(RetrievalError::DuplicateId {
                    id: doc.id.clone(),
                    first,
                    second: *line,
                });
            }
            seen.insert(doc.id.clone(), *line);
        }
        let mut docs: Vec<CorpusDoc> = docs.into_iter().map(|(_, d)| d).collect();
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
        let mut indexed = Vec::with_capacity(docs.len());
        let mut total = 0usize;
        for (pos, doc) in docs.into_iter().enumerate() {
            let tokens = tokenize(&doc.text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((pos, count));
            }
            total += tokens.len();
            indexed.push(IndexedDoc {
                id: doc.id,
                concept_tags: doc.concept_tags,
                length: tokens.len(),
            });
        }
        let avgdl = if indexed.is_empty() {
            0.0
        } else {
            total as f64 / indexed.len() as f64
        };
        Ok(Self {
            params,
            docs: indexed,
            postings,
            avgdl,
        })
    }

    pub fn from_docs(docs: Vec<CorpusDoc>) -> Result<Self, RetrievalError> {
        Self::from_numbered_docs(
            docs.into_iter()
                .enumerate()
                .map(|(i, d)| (i + 1, d))
                .collect(),
            Bm25Params::default(),
        )
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn doc_length(&self, id: &str) -> Option<usize> {
        self.docs.iter().find(|d| d.id == id).map(|d| d.length)
    }

    /// Top `k` documents by BM25 score, ties by id. Every query token
    /// occurrence contributes. Documents without a matching term score 0.
    pub fn query(&self, text: &str, k: usize) -> Result<Vec<Hit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if self.docs.is_empty() {
            return Ok(vec![]);
        }
        let n = self.docs.len();
        let mut scores = vec![0.0f64; n];
        for token in tokenize(text) {
            let Some(list) = self.postings.get(&token) else {
                continue;
            };
            let w = idf(n, list.len());
            for &(pos, tf) in list {
                scores[pos] += w * term_weight(
                    f64::from(tf),
                    self.docs[pos].length as f64,
                    self.avgdl,
                    self.params,
                );
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| self.docs[a].id.cmp(&self.docs[b].id))
        });
        Ok(order
            .into_iter()
            .take(k)
            .map(|i| Hit {
                id: self.docs[i].id.clone(),
                score: scores[i],
                concept_tags: self.docs[i].concept_tags.clone(),
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer(
            file,
            &CacheFile {
                format: CACHE_FORMAT.into(),
                version: CACHE_VERSION,
                index: self.clone(),
            },
        )
        .map_err(|e| RetrievalError::Cache(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let file = BufReader::new(File::open(path)?);
        let cache: CacheFile =
            serde_json::from_reader(file).map_err(|e| RetrievalError::Cache(e.to_string()))?;
        if cache.format != CACHE_FORMAT || cache.version != CACHE_VERSION {
            return Err(RetrievalError::Cache(format!(
                "unsupported cache {} v{}",
                cache.format, cache.version
            )));
        }
        Ok(cache.index)
    }
}

/// Reads a JSONL corpus. Blank lines are skipped.
pub fn ingest(path: &Path) -> Result<Bm25Index, RetrievalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: CorpusDoc =
            serde_json::from_str(&line).map_err(|e| RetrievalError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        docs.push((i + 1, doc));
    }
    Bm25Index::from_numbered_docs(docs, Bm25Params::default())
}

/// Concept tags of the hits in rank order, first occurrence kept.
pub fn extract_concepts(hits: &[Hit]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for hit in hits {
        for tag in &hit.concept_tags {
            if !out.contains(tag) {
                out.push(tag.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str, tags: &[&str]) -> CorpusDoc {
        CorpusDoc {
            id: id.into(),
            text: text.into(),
            concept_tags: tags.iter().map(|t| t.to_string()).collect(),
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("Let $x^2 + 1$ be a Prime, i.e. odd-number!"),
            vec!["let", "$x^2 + 1$", "be", "prime", "odd", "number"]
        );
        assert_eq!(
            tokenize("unclosed $math here"),
            vec!["unclosed", "math", "here"]
        );
    }

    #[test]
    fn duplicate_ids_name_both_lines() {
        let err = Bm25Index::from_docs(vec![
            doc("a", "x", &[]),
            doc("b", "y", &[]),
            doc("a", "z", &[]),
        ])
        .unwrap_err();
        match err {
            RetrievalError::DuplicateId { id, first, second } => {
                assert_eq!((id.as_str(), first, second), ("a", 1, 3));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_index_queries_empty() {
        let idx = Bm25Index::from_docs(vec![]).unwrap();
        assert!(idx.query("anything", 5).unwrap().is_empty());
        assert!(idx.query("anything", 0).is_err());
    }

    #[test]
    fn concept_union_order() {
        let hits = vec![
            Hit {
                id: "1".into(),
                score: 2.0,
                concept_tags: vec!["a".into(), "b".into()],
            },
            Hit {
                id: "2".into(),
                score: 1.0,
                concept_tags: vec!["b".into(), "c".into()],
            },
        ];
        assert_eq!(extract_concepts(&hits), vec!["a", "b", "c"]);
        assert!(extract_concepts(&[Hit {
            id: "x".into(),
            score: 0.0,
            concept_tags: vec![]
        }])
        .is_empty());
    }

    #[test]
    fn cache_round_trip() {
        let idx = Bm25Index::from_docs(vec![doc("a", "prime numbers", &["primes"])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.json");
        idx.save(&path).unwrap();
        assert_eq!(Bm25Index::load(&path).unwrap(), idx);
    }
}
