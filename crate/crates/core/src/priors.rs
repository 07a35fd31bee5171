//! Per-document keyword priors harvested from metadata.
//!
//! Two strategies: `category` keeps curated labels whole and drops generic
//! ones through a blocklist; `attribute` tokenizes free-text attribute
//! fields and drops stopwords.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_file, Corpus, Document};
use crate::error::{Error, Result};
use crate::text::{normalize_label, word_tokens};

/// Keyword used when neither metadata nor title yields anything.
pub const FALLBACK_KEYWORD: &str = "doc";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Category,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    pub strategy: Strategy,
    pub fields: Vec<String>,
    #[serde(default)]
    pub blocklist: BTreeSet<String>,
    #[serde(default)]
    pub stopwords: BTreeSet<String>,
    #[serde(default = "default_max_keywords")]
    pub max_keywords_per_doc: usize,
}

fn default_max_keywords() -> usize {
    16
}

impl ExtractorConfig {
    pub fn new(strategy: Strategy, fields: &[&str]) -> Self {
        ExtractorConfig {
            strategy,
            fields: fields.iter().map(|f| f.to_string()).collect(),
            blocklist: BTreeSet::new(),
            stopwords: BTreeSet::new(),
            max_keywords_per_doc: default_max_keywords(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::invalid("extractor needs at least one metadata field"));
        }
        if self.max_keywords_per_doc < 1 {
            return Err(Error::invalid("max_keywords_per_doc must be >= 1"));
        }
        Ok(())
    }

    fn blocked(&self, kw: &str) -> bool {
        self.blocklist.iter().any(|b| normalize_label(b) == kw)
    }

    fn stopword(&self, kw: &str) -> bool {
        self.stopwords.contains(kw)
    }
}

pub type KeywordCounts = Vec<(String, u64)>;

/// Sort by (count desc, keyword asc) and keep the first `max`.
pub fn rank_counts(counts: BTreeMap<String, u64>, max: usize) -> KeywordCounts {
    let mut ranked: KeywordCounts = counts.into_iter().filter(|(_, c)| *c > 0).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max);
    ranked
}

pub fn extract_category_keywords(doc: &Document, cfg: &ExtractorConfig) -> KeywordCounts {
    let mut counts = BTreeMap::new();
    for field in &cfg.fields {
        for value in doc.metadata.get(field).into_iter().flatten() {
            let label = normalize_label(value);
            if label.is_empty() || cfg.blocked(&label) || cfg.stopword(&label) {
                continue;
            }
            *counts.entry(label).or_insert(0) += 1;
        }
    }
    rank_counts(counts, cfg.max_keywords_per_doc)
}

fn count_tokens<'a>(texts: impl Iterator<Item = &'a str>, cfg: &ExtractorConfig) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for text in texts {
        for tok in word_tokens(text) {
            if tok.chars().count() < 2 || cfg.stopword(&tok) || cfg.blocked(&tok) {
                continue;
            }
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    counts
}

pub fn extract_attribute_keywords(doc: &Document, cfg: &ExtractorConfig) -> KeywordCounts {
    let values = cfg
        .fields
        .iter()
        .flat_map(|f| doc.metadata.get(f).into_iter().flatten())
        .map(String::as_str);
    rank_counts(count_tokens(values, cfg), cfg.max_keywords_per_doc)
}

/// Keywords of every document, with title and constant fallbacks.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KeywordTable {
    pub per_doc: BTreeMap<String, KeywordCounts>,
}

#[derive(Serialize, Deserialize)]
struct KeywordRecord {
    doc_id: String,
    keywords: Vec<(String, u64)>,
}

impl KeywordTable {
    pub fn get(&self, doc_id: &str) -> Option<&KeywordCounts> {
        self.per_doc.get(doc_id)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (doc_id, kws) in &self.per_doc {
            let rec = KeywordRecord {
                doc_id: doc_id.clone(),
                keywords: kws.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("keywords serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl_str(raw: &str) -> Result<Self> {
        let mut per_doc = BTreeMap::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: KeywordRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if per_doc.insert(rec.doc_id.clone(), rec.keywords).is_some() {
                return Err(Error::DuplicateDocId(rec.doc_id));
            }
        }
        Ok(KeywordTable { per_doc })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KeywordTable::from_jsonl_str(&raw)
    }
}

pub fn extract_keywords(doc: &Document, cfg: &ExtractorConfig) -> KeywordCounts {
    let kws = match cfg.strategy {
        Strategy::Category => extract_category_keywords(doc, cfg),
        Strategy::Attribute => extract_attribute_keywords(doc, cfg),
    };
    if !kws.is_empty() {
        return kws;
    }
    let from_title = rank_counts(count_tokens(std::iter::once(doc.title.as_str()), cfg), cfg.max_keywords_per_doc);
    if !from_title.is_empty() {
        return from_title;
    }
    vec![(FALLBACK_KEYWORD.to_string(), 1)]
}

pub fn extract_table(corpus: &Corpus, cfg: &ExtractorConfig) -> Result<KeywordTable> {
    cfg.validate()?;
    let per_doc = corpus
        .iter()
        .map(|doc| (doc.doc_id.clone(), extract_keywords(doc, cfg)))
        .collect();
    Ok(KeywordTable { per_doc })
}
