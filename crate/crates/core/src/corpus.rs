//! Corpus ingestion, normalization and document embeddings.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{normalize_label, seeded_hash, word_tokens};

/// A single document with free text and list-valued metadata fields
/// (`categories`, `brand`, `material`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, Vec<String>>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            title: title.into(),
            text: text.into(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_field<I, S>(mut self, field: &str, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.metadata
            .entry(field.to_string())
            .or_default()
            .extend(values.into_iter().map(Into::into));
        self
    }

    /// Trim text fields, lowercase metadata values and drop empty entries.
    fn normalized(mut self) -> Self {
        self.doc_id = self.doc_id.trim().to_string();
        self.title = self.title.trim().to_string();
        self.text = self.text.trim().to_string();
        self.metadata = std::mem::take(&mut self.metadata)
            .into_iter()
            .filter_map(|(field, values)| {
                let field = field.trim().to_string();
                let values: Vec<String> = values
                    .iter()
                    .map(|v| normalize_label(v))
                    .filter(|v| !v.is_empty())
                    .collect();
                (!field.is_empty() && !values.is_empty()).then_some((field, values))
            })
            .collect();
        self
    }
}

/// The document collection, sorted by `doc_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    index: BTreeMap<String, usize>,
}

impl Corpus {
    /// Normalize, sort and check `doc_id` uniqueness.
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut documents: Vec<Document> = documents.into_iter().map(Document::normalized).collect();
        documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let mut index = BTreeMap::new();
        for (i, doc) in documents.iter().enumerate() {
            if doc.doc_id.is_empty() {
                return Err(Error::invalid("doc_id must be non-empty"));
            }
            if index.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateDocId(doc.doc_id.clone()));
            }
        }
        Ok(Corpus { documents, index })
    }

    pub fn from_jsonl_str(raw: &str) -> Result<Self> {
        let mut docs = Vec::new();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (i, line) in raw.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let id = doc.doc_id.trim().to_string();
            if id.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty doc_id".into(),
                });
            }
            if let Some(first) = seen.insert(id.clone(), line_no) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate doc_id {id:?} (first seen on line {first})"),
                });
            }
            docs.push(doc);
        }
        if docs.is_empty() {
            return Err(Error::Empty("corpus".into()));
        }
        Corpus::new(docs)
    }

    pub fn ingest_jsonl(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Corpus::from_jsonl_str(&raw)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&serde_json::to_string(doc).expect("document serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_jsonl().as_bytes())
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.documents.iter()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.index.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.index.contains_key(doc_id)
    }

    /// Position of a document in `doc_id` order.
    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.index.get(doc_id).copied()
    }
}

/// One dense vector per document, all of the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    rows: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    doc_id: String,
    vector: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn from_rows(rows: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let dim = rows
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::Empty("embedding matrix".into()))?;
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        for (id, row) in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    id: id.clone(),
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite embedding for {id:?}")));
            }
        }
        Ok(EmbeddingMatrix { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, doc_id: &str) -> Option<&[f64]> {
        self.rows.get(doc_id).map(Vec::as_slice)
    }

    pub fn rows(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.rows
    }

    /// Check that every corpus document has a row.
    pub fn covers(&self, corpus: &Corpus) -> Result<()> {
        match corpus.iter().find(|d| !self.rows.contains_key(&d.doc_id)) {
            Some(doc) => Err(Error::invalid(format!("no embedding for document {:?}", doc.doc_id))),
            None => Ok(()),
        }
    }

    pub fn from_jsonl_str(raw: &str) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if rows.insert(rec.doc_id.clone(), rec.vector).is_some() {
                return Err(Error::DuplicateDocId(rec.doc_id));
            }
        }
        EmbeddingMatrix::from_rows(rows)
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EmbeddingMatrix::from_jsonl_str(&raw)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (doc_id, vector) in &self.rows {
            let rec = EmbeddingRecord {
                doc_id: doc_id.clone(),
                vector: vector.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("embedding serializes"));
            out.push('\n');
        }
        out
    }
}

/// Bucket index of a token under the seeded feature hash.
pub fn token_bucket(token: &str, dim: usize, seed: u64) -> usize {
    (seeded_hash(token, seed) % dim as u64) as usize
}

/// Hashed term-frequency embedding of title + text, L2-normalized.
pub fn embed_corpus(corpus: &Corpus, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    if dim < 2 {
        return Err(Error::invalid(format!("embedding dim must be >= 2, got {dim}")));
    }
    if corpus.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    let mut rows = BTreeMap::new();
    for doc in corpus.iter() {
        let mut row = vec![0.0f64; dim];
        let mut n = 0usize;
        for tok in word_tokens(&doc.title).chain(word_tokens(&doc.text)) {
            row[token_bucket(&tok, dim, seed)] += 1.0;
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyDocument(doc.doc_id.clone()));
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
        rows.insert(doc.doc_id.clone(), row);
    }
    EmbeddingMatrix::from_rows(rows)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
