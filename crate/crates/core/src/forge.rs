//! Docid rendering: textual cluster labels and the baseline schemes.
//!
//! Every numeric label on a codebook path is replaced by the top-K
//! keywords aggregated over the documents under that node, and the
//! per-level strings are joined into a single identifier:
//!
//! ```text
//! [TopK(r_0)] - [TopK(r_1)] - ... - [TopK(r_m)]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterTree, NodeId, NumericPath};
use crate::corpus::{write_file, Corpus};
use crate::error::{Error, Result};
use crate::priors::KeywordTable;
use crate::text::word_tokens;

/// doc_id -> rendered docid string.
pub type DocidMap = BTreeMap<String, String>;

/// Prefix of the collision suffix appended to duplicate docids.
pub const DISAMBIGUATOR_PREFIX: char = '#';

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    /// Keywords per node label.
    pub top_k: usize,
    pub intra_sep: String,
    pub level_sep: String,
    pub ancestor_dedup: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            top_k: 3,
            intra_sep: "-".into(),
            level_sep: "-".into(),
            ancestor_dedup: false,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::invalid("top_k must be >= 1"));
        }
        for sep in [&self.intra_sep, &self.level_sep] {
            if sep.is_empty() {
                return Err(Error::invalid("separators must be non-empty"));
            }
            if sep.contains(DISAMBIGUATOR_PREFIX) || sep.chars().any(|c| c.is_alphanumeric() || c == '_') {
                return Err(Error::invalid(format!("separator {sep:?} collides with the keyword alphabet")));
            }
        }
        Ok(())
    }

    /// Map a raw keyword onto the docid alphabet: whitespace, separator
    /// characters and `#` become `_`.
    pub fn sanitize(&self, keyword: &str) -> Option<String> {
        let reserved = |c: char| {
            c.is_whitespace() || c == DISAMBIGUATOR_PREFIX || self.intra_sep.contains(c) || self.level_sep.contains(c)
        };
        let mapped: String = keyword.chars().map(|c| if reserved(c) { '_' } else { c }).collect();
        let parts: Vec<&str> = mapped.split('_').filter(|p| !p.is_empty()).collect();
        (!parts.is_empty()).then(|| parts.join("_"))
    }
}

/// Keyword counts summed over every document under each node.
pub fn aggregate_node_keywords(
    tree: &ClusterTree,
    table: &KeywordTable,
    cfg: &LabelConfig,
) -> Result<BTreeMap<NodeId, BTreeMap<String, u64>>> {
    let mut out: BTreeMap<NodeId, BTreeMap<String, u64>> = BTreeMap::new();
    // deepest nodes first so parents can sum their children
    let mut order: Vec<&crate::cluster::ClusterNode> = tree.nodes.values().collect();
    order.sort_by(|a, b| b.depth.cmp(&a.depth).then(a.node_id.cmp(&b.node_id)));
    for node in order {
        let mut counts = BTreeMap::new();
        if node.is_leaf() {
            for doc in &node.members {
                for (kw, c) in doc_keywords(table, doc, cfg)? {
                    *counts.entry(kw).or_insert(0) += c;
                }
            }
        } else {
            for child in &node.children {
                for (kw, c) in &out[child] {
                    *counts.entry(kw.clone()).or_insert(0) += c;
                }
            }
        }
        out.insert(node.node_id, counts);
    }
    Ok(out)
}

/// A document's sanitized keyword counts.
fn doc_keywords(table: &KeywordTable, doc: &str, cfg: &LabelConfig) -> Result<BTreeMap<String, u64>> {
    let kws = table.get(doc).ok_or_else(|| Error::UnknownDocument(doc.to_string()))?;
    let mut counts = BTreeMap::new();
    for (kw, c) in kws {
        if let Some(kw) = cfg.sanitize(kw) {
            *counts.entry(kw).or_insert(0) += c;
        }
    }
    Ok(counts)
}

/// All keywords ordered by (count desc, keyword asc).
pub fn rank_keywords(counts: &BTreeMap<String, u64>) -> Vec<String> {
    let mut v: Vec<(&String, &u64)> = counts.iter().filter(|(_, c)| **c > 0).collect();
    v.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter().map(|(k, _)| k.clone()).collect()
}

pub fn select_top_k(counts: &BTreeMap<String, u64>, k: usize) -> Result<Vec<String>> {
    if k < 1 {
        return Err(Error::invalid("K must be >= 1"));
    }
    let mut ranked = rank_keywords(counts);
    if ranked.is_empty() {
        return Err(Error::Empty("keyword counts".into()));
    }
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLabel {
    pub node_id: NodeId,
    pub ranked_keywords: Vec<String>,
    pub rendered: String,
}

/// Labels for every non-root node plus the full keyword ranking behind
/// each one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLabels {
    pub labels: BTreeMap<NodeId, NodeLabel>,
    /// Full ranking per node after ancestor exclusion, used for backfill.
    pub rankings: BTreeMap<NodeId, Vec<String>>,
}

impl NodeLabels {
    /// Compute labels top-down. Siblings never share a rendered label: a
    /// duplicate swaps its last keyword for the next-ranked one, and as a
    /// last resort gets its sibling index appended.
    pub fn build(tree: &ClusterTree, table: &KeywordTable, cfg: &LabelConfig) -> Result<Self> {
        cfg.validate()?;
        let agg = aggregate_node_keywords(tree, table, cfg)?;
        let mut labels = BTreeMap::new();
        let mut rankings = BTreeMap::new();
        let mut used: BTreeMap<NodeId, BTreeSet<String>> = BTreeMap::new();
        used.insert(tree.root, BTreeSet::new());

        let mut stack = vec![tree.root];
        while let Some(parent) = stack.pop() {
            let pnode = tree.node(parent);
            let mut taken: BTreeSet<String> = BTreeSet::new();
            for &cid in &pnode.children {
                let inherited = used[&parent].clone();
                let mut ranked = rank_keywords(&agg[&cid]);
                if cfg.ancestor_dedup {
                    let filtered: Vec<String> = ranked.iter().filter(|k| !inherited.contains(*k)).cloned().collect();
                    if !filtered.is_empty() {
                        ranked = filtered;
                    }
                }
                if ranked.is_empty() {
                    return Err(Error::Empty(format!("keywords of node {cid}")));
                }
                let chosen = distinct_label(&ranked, cfg, &taken, tree.node(cid).label);
                let rendered = chosen.join(&cfg.intra_sep);
                taken.insert(rendered.clone());
                let mut child_used = inherited;
                child_used.extend(chosen.iter().cloned());
                used.insert(cid, child_used);
                rankings.insert(cid, ranked);
                labels.insert(
                    cid,
                    NodeLabel {
                        node_id: cid,
                        ranked_keywords: chosen,
                        rendered,
                    },
                );
                stack.push(cid);
            }
        }
        Ok(NodeLabels { labels, rankings })
    }

    pub fn label(&self, node: NodeId) -> &NodeLabel {
        &self.labels[&node]
    }

    /// Keywords each node's label has consumed together with its ancestors.
    fn used_along(&self, nodes: &[NodeId]) -> BTreeSet<String> {
        nodes
            .iter()
            .flat_map(|n| self.labels[n].ranked_keywords.iter().cloned())
            .collect()
    }
}

fn distinct_label(ranked: &[String], cfg: &LabelConfig, taken: &BTreeSet<String>, sibling_label: u32) -> Vec<String> {
    let base: Vec<String> = ranked.iter().take(cfg.top_k).cloned().collect();
    let free = |v: &Vec<String>| !taken.contains(&v.join(&cfg.intra_sep));
    if free(&base) {
        return base;
    }
    for alt in ranked.iter().skip(base.len()) {
        let mut cand = base.clone();
        *cand.last_mut().expect("base is non-empty") = alt.clone();
        if free(&cand) {
            return cand;
        }
    }
    let mut n = 0u32;
    loop {
        let mut cand = base.clone();
        cand.push(if n == 0 {
            sibling_label.to_string()
        } else {
            format!("{sibling_label}_{n}")
        });
        if free(&cand) {
            return cand;
        }
        n += 1;
    }
}

/// A rendered textual identifier with its structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct C2tId {
    pub doc_id: String,
    pub numeric_path: NumericPath,
    /// Tree nodes behind every segment except the final document segment.
    pub nodes: Vec<NodeId>,
    /// One rendered string per path position; the last one is the
    /// document's own keywords.
    pub segments: Vec<String>,
    pub full: String,
    pub disambiguator: Option<u32>,
}

impl C2tId {
    pub fn body(&self, cfg: &LabelConfig) -> String {
        self.segments.join(&cfg.level_sep)
    }

    /// Keywords of every segment.
    pub fn segment_keywords(&self, cfg: &LabelConfig) -> Vec<Vec<String>> {
        self.segments
            .iter()
            .map(|s| s.split(cfg.intra_sep.as_str()).map(str::to_string).collect())
            .collect()
    }
}

pub fn render_c2t_ids(
    tree: &ClusterTree,
    paths: &BTreeMap<String, NumericPath>,
    table: &KeywordTable,
    cfg: &LabelConfig,
) -> Result<BTreeMap<String, C2tId>> {
    let labels = NodeLabels::build(tree, table, cfg)?;
    render_with_labels(tree, paths, table, &labels, cfg)
}

pub fn render_with_labels(
    tree: &ClusterTree,
    paths: &BTreeMap<String, NumericPath>,
    table: &KeywordTable,
    labels: &NodeLabels,
    cfg: &LabelConfig,
) -> Result<BTreeMap<String, C2tId>> {
    cfg.validate()?;
    let mut ids = BTreeMap::new();
    for (doc_id, path) in paths {
        let nodes = tree.path_nodes(path)?;
        let mut segments: Vec<String> = nodes.iter().map(|n| labels.label(*n).rendered.clone()).collect();
        let own = doc_keywords(table, doc_id, cfg)?;
        let mut ranked = rank_keywords(&own);
        if cfg.ancestor_dedup {
            let used = labels.used_along(&nodes);
            let filtered: Vec<String> = ranked.iter().filter(|k| !used.contains(*k)).cloned().collect();
            if !filtered.is_empty() {
                ranked = filtered;
            }
        }
        if ranked.is_empty() {
            return Err(Error::Empty(format!("keywords of document {doc_id:?}")));
        }
        ranked.truncate(cfg.top_k);
        segments.push(ranked.join(&cfg.intra_sep));
        let full = segments.join(&cfg.level_sep);
        ids.insert(
            doc_id.clone(),
            C2tId {
                doc_id: doc_id.clone(),
                numeric_path: path.clone(),
                nodes,
                segments,
                full,
                disambiguator: None,
            },
        );
    }

    let mut by_full: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (doc_id, id) in &ids {
        by_full.entry(id.full.clone()).or_default().push(doc_id.clone());
    }
    for docs in by_full.values().filter(|d| d.len() > 1) {
        // docs are already in doc_id order; the first keeps the bare string
        for (n, doc_id) in docs.iter().enumerate().skip(1) {
            let id = ids.get_mut(doc_id).expect("present");
            id.disambiguator = Some(n as u32);
            id.full = format!("{}{DISAMBIGUATOR_PREFIX}{n}", id.full);
        }
    }
    Ok(ids)
}

pub fn c2t_docid_map(ids: &BTreeMap<String, C2tId>) -> DocidMap {
    ids.iter().map(|(d, id)| (d.clone(), id.full.clone())).collect()
}

/// Split a trailing `#n` collision suffix off a docid.
pub fn split_disambiguator(s: &str) -> (&str, Option<&str>) {
    if let Some(pos) = s.rfind(DISAMBIGUATOR_PREFIX) {
        let digits = &s[pos + 1..];
        if pos > 0 && !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            return (&s[..pos], Some(&s[pos..]));
        }
    }
    (s, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Atomic,
    Codebook,
    Title,
    C2t,
    C2tSmoothed,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Atomic, Scheme::Codebook, Scheme::Title, Scheme::C2t, Scheme::C2tSmoothed];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Atomic => "atomic",
            Scheme::Codebook => "codebook",
            Scheme::Title => "title",
            Scheme::C2t => "c2t",
            Scheme::C2tSmoothed => "c2t_smoothed",
        }
    }

    /// Row name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Scheme::Atomic => "Atomic DocID",
            Scheme::Codebook => "Semantic Codebook DocID",
            Scheme::Title => "Textual DocID (Title)",
            Scheme::C2t => "C2T-ID",
            Scheme::C2tSmoothed => "C2T-ID (smoothed)",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scheme {s:?}")))
    }
}

/// The three baseline docid schemes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DocidSchemeSet {
    pub atomic: DocidMap,
    pub codebook: DocidMap,
    pub title: DocidMap,
}

pub fn normalize_title(title: &str) -> String {
    let words: Vec<String> = word_tokens(title).collect();
    if words.is_empty() {
        "untitled".to_string()
    } else {
        words.join(" ")
    }
}

pub fn render_baseline_schemes(corpus: &Corpus, paths: &BTreeMap<String, NumericPath>) -> Result<DocidSchemeSet> {
    let mut set = DocidSchemeSet::default();
    let mut title_seen: BTreeMap<String, u32> = BTreeMap::new();
    for (i, doc) in corpus.iter().enumerate() {
        let path = paths
            .get(&doc.doc_id)
            .ok_or_else(|| Error::invalid(format!("no numeric path for {:?}", doc.doc_id)))?;
        set.atomic.insert(doc.doc_id.clone(), i.to_string());
        set.codebook.insert(doc.doc_id.clone(), path.to_string());
        let title = normalize_title(&doc.title);
        let n = title_seen.entry(title.clone()).or_insert(0);
        let docid = if *n == 0 {
            title
        } else {
            format!("{title}{DISAMBIGUATOR_PREFIX}{n}")
        };
        *n += 1;
        set.title.insert(doc.doc_id.clone(), docid);
    }
    Ok(set)
}

pub fn docids_to_tsv(map: &DocidMap) -> String {
    map.iter().map(|(d, s)| format!("{d}\t{s}\n")).collect()
}

pub fn docids_from_tsv(raw: &str) -> Result<DocidMap> {
    let mut out = DocidMap::new();
    for (i, line) in raw.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (d, s) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected doc_id<TAB>docid".into(),
        })?;
        if out.insert(d.to_string(), s.to_string()).is_some() {
            return Err(Error::DuplicateDocId(d.to_string()));
        }
    }
    Ok(out)
}

pub fn save_docids(map: &DocidMap, path: &Path) -> Result<()> {
    write_file(path, docids_to_tsv(map).as_bytes())
}

pub fn load_docids(path: &Path) -> Result<DocidMap> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    docids_from_tsv(&raw)
}
