//! Phrase-level rewriting of textual identifiers that keeps the decoding
//! trie's branch structure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterTree, NodeId};
use crate::error::{Error, Result};
use crate::forge::{C2tId, DocidMap, LabelConfig, NodeLabels, DISAMBIGUATOR_PREFIX};
use crate::trie::{DocidTrie, Tokenizer, TokenizerMode};

/// Word separator of smoothed identifiers.
pub const WORD_SEP: &str = " ";

/// What a rewritten span belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanOwner<'a> {
    Node(NodeId),
    Doc(&'a str),
}

impl fmt::Display for SpanOwner<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpanOwner::Node(n) => write!(f, "{n}"),
            SpanOwner::Doc(d) => write!(f, "doc {d:?}"),
        }
    }
}

pub trait Rewriter {
    /// Reorder or paraphrase the keywords of one span.
    fn rewrite_phrase(&self, owner: SpanOwner<'_>, keywords: &[String]) -> Vec<String>;
    /// One word joining a parent span to a child span.
    fn connective(&self, owner: SpanOwner<'_>, parent_phrase: &[String], child_phrase: &[String]) -> String;
}

/// Moves the head keyword to the end behind "for" and joins levels with
/// "with": `[phone, battery, charger]` reads "battery charger for phone".
#[derive(Debug, Clone, Copy, Default)]
pub struct MockRewriter;

impl Rewriter for MockRewriter {
    fn rewrite_phrase(&self, _owner: SpanOwner<'_>, keywords: &[String]) -> Vec<String> {
        match keywords {
            [head, rest @ ..] if !rest.is_empty() => {
                let mut words = rest.to_vec();
                words.push("for".into());
                words.push(head.clone());
                words
            }
            _ => keywords.to_vec(),
        }
    }

    fn connective(&self, _owner: SpanOwner<'_>, _parent: &[String], _child: &[String]) -> String {
        "with".into()
    }
}

/// Keeps keyword order; the connective stands in for the level separator.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRewriter;

impl Rewriter for IdentityRewriter {
    fn rewrite_phrase(&self, _owner: SpanOwner<'_>, keywords: &[String]) -> Vec<String> {
        keywords.to_vec()
    }

    fn connective(&self, _owner: SpanOwner<'_>, _parent: &[String], _child: &[String]) -> String {
        "/".into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayEntry {
    pub node_id: NodeId,
    pub phrase: String,
    pub connective: String,
}

/// Replays recorded node phrases. Nodes without an entry and document
/// spans keep their keywords; missing connectives default to "with".
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayRewriter {
    pub entries: BTreeMap<NodeId, ReplayEntry>,
}

impl ReplayRewriter {
    pub fn from_jsonl_str(raw: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ReplayEntry = serde_json::from_str(line).map_err(|err| Error::Parse {
                line: i + 1,
                message: err.to_string(),
            })?;
            if entries.insert(e.node_id, e).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "repeated node_id".into(),
                });
            }
        }
        Ok(ReplayRewriter { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ReplayRewriter::from_jsonl_str(&raw)
    }
}

impl Rewriter for ReplayRewriter {
    fn rewrite_phrase(&self, owner: SpanOwner<'_>, keywords: &[String]) -> Vec<String> {
        match owner {
            SpanOwner::Node(n) => match self.entries.get(&n) {
                Some(e) => e.phrase.split_whitespace().map(str::to_string).collect(),
                None => keywords.to_vec(),
            },
            SpanOwner::Doc(_) => keywords.to_vec(),
        }
    }

    fn connective(&self, owner: SpanOwner<'_>, _parent: &[String], _child: &[String]) -> String {
        match owner {
            SpanOwner::Node(n) => self.entries.get(&n).map_or_else(|| "with".into(), |e| e.connective.clone()),
            SpanOwner::Doc(_) => "with".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    Node(NodeId),
    Doc,
}

/// Token range of one span inside a smoothed identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub owner: Owner,
    pub start: usize,
    /// 1 when the span opens with a connective, else 0.
    pub connective_len: usize,
    /// Total length, connective included.
    pub len: usize,
}

impl Span {
    /// Connective plus the first phrase word.
    pub fn entry_len(&self) -> usize {
        self.connective_len + 1
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// How a node's entry word was made distinct from its siblings'.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Rewritten,
    Prepended,
    Hyphen,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePhrase {
    pub connective: Option<String>,
    pub words: Vec<String>,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoothOptions {
    /// Keep sibling entries distinct. Off only to build counterexamples.
    pub resolve_collisions: bool,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        SmoothOptions {
            resolve_collisions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedIds {
    pub docids: DocidMap,
    pub spans: BTreeMap<String, Vec<Span>>,
    pub node_phrases: BTreeMap<NodeId, NodePhrase>,
}

fn check_word(owner: SpanOwner<'_>, w: &str, cfg: &LabelConfig, what: &str) -> Result<()> {
    let bad = w.is_empty()
        || w.chars().any(|c| c.is_whitespace() || c == DISAMBIGUATOR_PREFIX)
        || w.contains(cfg.intra_sep.as_str())
        || w.contains(cfg.level_sep.as_str());
    if bad {
        return Err(Error::Rewriter {
            node: owner.to_string(),
            message: format!("{what} {w:?} is empty or contains a separator"),
        });
    }
    Ok(())
}

fn checked_phrase(rw: &dyn Rewriter, owner: SpanOwner<'_>, keywords: &[String], cfg: &LabelConfig) -> Result<Vec<String>> {
    let words = rw.rewrite_phrase(owner, keywords);
    if words.is_empty() {
        return Err(Error::Rewriter {
            node: owner.to_string(),
            message: "empty phrase".into(),
        });
    }
    for w in &words {
        check_word(owner, w, cfg, "word")?;
    }
    Ok(words)
}

fn checked_connective(
    rw: &dyn Rewriter,
    owner: SpanOwner<'_>,
    parent: &[String],
    child: &[String],
    cfg: &LabelConfig,
) -> Result<String> {
    let c = rw.connective(owner, parent, child);
    check_word(owner, &c, cfg, "connective")?;
    Ok(c)
}

/// Rewrite every node once, then assemble each document's identifier from
/// the cached node phrases plus its own rewritten keywords.
pub fn smooth_ids(
    ids: &BTreeMap<String, C2tId>,
    tree: &ClusterTree,
    labels: &NodeLabels,
    cfg: &LabelConfig,
    rw: &dyn Rewriter,
    opts: SmoothOptions,
) -> Result<SmoothedIds> {
    cfg.validate()?;
    let mut node_phrases: BTreeMap<NodeId, NodePhrase> = BTreeMap::new();
    let mut stack = vec![tree.root];
    while let Some(parent) = stack.pop() {
        let parent_words: Vec<String> = node_phrases.get(&parent).map(|p| p.words.clone()).unwrap_or_default();
        let is_root = parent == tree.root;
        let mut taken: BTreeSet<(Option<String>, String)> = BTreeSet::new();
        for &cid in &tree.node(parent).children {
            let owner = SpanOwner::Node(cid);
            let label = labels.label(cid);
            let connective = |words: &[String]| -> Result<Option<String>> {
                if is_root {
                    Ok(None)
                } else {
                    checked_connective(rw, owner, &parent_words, words, cfg).map(Some)
                }
            };

            let words = checked_phrase(rw, owner, &label.ranked_keywords, cfg)?;
            let mut phrase = NodePhrase {
                connective: connective(&words)?,
                words,
                resolution: Resolution::Rewritten,
            };
            let entry = |p: &NodePhrase| (p.connective.clone(), p.words[0].clone());
            if opts.resolve_collisions && taken.contains(&entry(&phrase)) {
                let unused = labels
                    .rankings
                    .get(&cid)
                    .and_then(|r| r.iter().find(|k| !label.ranked_keywords.contains(k) && !phrase.words.contains(k)));
                let mut resolved = false;
                if let Some(extra) = unused {
                    let mut words = vec![extra.clone()];
                    words.extend(phrase.words.iter().cloned());
                    let cand = NodePhrase {
                        connective: connective(&words)?,
                        words,
                        resolution: Resolution::Prepended,
                    };
                    if !taken.contains(&entry(&cand)) {
                        phrase = cand;
                        resolved = true;
                    }
                }
                if !resolved {
                    let words = vec![label.rendered.clone()];
                    phrase = NodePhrase {
                        connective: connective(&words)?,
                        words,
                        resolution: Resolution::Hyphen,
                    };
                }
            }
            taken.insert(entry(&phrase));
            node_phrases.insert(cid, phrase);
            stack.push(cid);
        }
    }

    let mut docids = DocidMap::new();
    let mut spans = BTreeMap::new();
    for (doc_id, id) in ids {
        let owner = SpanOwner::Doc(doc_id);
        let mut words: Vec<String> = Vec::new();
        let mut doc_spans = Vec::with_capacity(id.nodes.len() + 1);
        for n in &id.nodes {
            let p = node_phrases
                .get(n)
                .ok_or_else(|| Error::invalid(format!("node {n} of {doc_id:?} is not in the tree")))?;
            let start = words.len();
            let mut connective_len = 0;
            if let Some(c) = &p.connective {
                words.push(c.clone());
                connective_len = 1;
            }
            words.extend(p.words.iter().cloned());
            doc_spans.push(Span {
                owner: Owner::Node(*n),
                start,
                connective_len,
                len: words.len() - start,
            });
        }
        let keywords: Vec<String> = id
            .segments
            .last()
            .ok_or_else(|| Error::Empty(format!("segments of {doc_id:?}")))?
            .split(cfg.intra_sep.as_str())
            .map(str::to_string)
            .collect();
        let phrase = checked_phrase(rw, owner, &keywords, cfg)?;
        let start = words.len();
        let mut connective_len = 0;
        if let Some(last) = id.nodes.last() {
            words.push(checked_connective(rw, owner, &node_phrases[last].words, &phrase, cfg)?);
            connective_len = 1;
        }
        words.extend(phrase);
        doc_spans.push(Span {
            owner: Owner::Doc,
            start,
            connective_len,
            len: words.len() - start,
        });
        let mut s = words.join(WORD_SEP);
        if let Some(n) = id.disambiguator {
            s.push_str(&format!("{DISAMBIGUATOR_PREFIX}{n}"));
        }
        docids.insert(doc_id.clone(), s);
        spans.insert(doc_id.clone(), doc_spans);
    }

    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    for (doc_id, s) in &docids {
        if let Some(prev) = seen.insert(s, doc_id) {
            return Err(Error::DuplicateDocid {
                doc_id: format!("{prev}, {doc_id}"),
                docid: s.clone(),
            });
        }
    }
    Ok(SmoothedIds {
        docids,
        spans,
        node_phrases,
    })
}

/// Word-level tokenizer for smoothed identifiers.
pub fn smoothed_tokenizer(docids: &DocidMap) -> Result<Tokenizer> {
    Tokenizer::build(TokenizerMode::Word, WORD_SEP, WORD_SEP, docids.values().map(String::as_str))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TerminalCount { original: usize, smoothed: usize },
    DocSet { doc_id: String },
    BadSpan { doc_id: String },
    SpanMismatch { node: NodeId },
    InteriorBranch { node: NodeId, position: usize, fanout: usize },
    SiblingPrefixCollision { node: NodeId, members: usize, reachable: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TerminalCount { original, smoothed } => {
                write!(f, "terminal count {smoothed} differs from original {original}")
            }
            Violation::DocSet { doc_id } => write!(f, "document {doc_id:?} is not in both tries"),
            Violation::BadSpan { doc_id } => write!(f, "spans of {doc_id:?} do not cover its token sequence"),
            Violation::SpanMismatch { node } => write!(f, "node {node} has different spans across documents"),
            Violation::InteriorBranch { node, position, fanout } => {
                write!(f, "node {node} branches {fanout}-way inside its span at token {position}")
            }
            Violation::SiblingPrefixCollision { node, members, reachable } => write!(
                f,
                "sibling-prefix collision at node {node}: entry reaches {reachable} documents, node has {members}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

/// Check that the smoothed trie only branches where the cluster tree does.
///
/// Past a node's entry (connective plus first word) every position must
/// have a single continuation, and the entry prefix must reach exactly the
/// node's documents. Document spans are free.
pub fn verify_topology(
    original: &DocidTrie,
    smoothed: &DocidTrie,
    spans: &BTreeMap<String, Vec<Span>>,
    tree: &ClusterTree,
) -> TopologyReport {
    let mut v: BTreeSet<Violation> = BTreeSet::new();
    if original.terminal_count() != smoothed.terminal_count() {
        v.insert(Violation::TerminalCount {
            original: original.terminal_count(),
            smoothed: smoothed.terminal_count(),
        });
    }
    let orig_docs: BTreeSet<String> = original.entries().into_iter().map(|(d, _)| d).collect();
    let entries: BTreeMap<String, Vec<u32>> = smoothed.entries().into_iter().collect();
    for d in orig_docs.symmetric_difference(&entries.keys().cloned().collect()) {
        v.insert(Violation::DocSet { doc_id: d.clone() });
    }

    let below = smoothed.subtree_terminals();
    let mut node_tokens: BTreeMap<NodeId, &[u32]> = BTreeMap::new();
    for (doc_id, tokens) in &entries {
        let Some(doc_spans) = spans.get(doc_id) else {
            v.insert(Violation::BadSpan { doc_id: doc_id.clone() });
            continue;
        };
        let contiguous = doc_spans.windows(2).all(|w| w[0].end() == w[1].start);
        let fits = doc_spans.first().is_some_and(|s| s.start == 0)
            && doc_spans.last().is_some_and(|s| s.end() < tokens.len())
            && doc_spans.iter().all(|s| s.len >= s.entry_len());
        if !contiguous || !fits {
            v.insert(Violation::BadSpan { doc_id: doc_id.clone() });
            continue;
        }
        for s in doc_spans {
            let Owner::Node(node) = s.owner else { continue };
            let own = &tokens[s.start..s.end()];
            if *node_tokens.entry(node).or_insert(own) != own {
                v.insert(Violation::SpanMismatch { node });
            }
            let entry_end = s.start + s.entry_len();
            let members = tree.nodes.get(&node).map_or(0, |n| n.members.len());
            if let Some(at) = smoothed.node_at(&tokens[..entry_end]) {
                if below[at] != members {
                    v.insert(Violation::SiblingPrefixCollision {
                        node,
                        members,
                        reachable: below[at],
                    });
                }
            }
            for pos in entry_end..s.end() {
                if let Some(at) = smoothed.node_at(&tokens[..pos]) {
                    let fanout = smoothed.fanout(at);
                    if fanout != 1 {
                        v.insert(Violation::InteriorBranch {
                            node,
                            position: pos,
                            fanout,
                        });
                    }
                }
            }
        }
    }
    let violations: Vec<Violation> = v.into_iter().collect();
    TopologyReport {
        ok: violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{assign_numeric_paths, ClusterNode};
    use crate::forge::{c2t_docid_map, render_with_labels};
    use crate::priors::KeywordTable;
    use crate::trie::build_trie;

    fn words(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn mock_phrase_examples() {
        let m = MockRewriter;
        let n = SpanOwner::Node(1);
        assert_eq!(m.rewrite_phrase(n, &words(&["phone", "battery", "charger"])).join(" "), "battery charger for phone");
        assert_eq!(m.rewrite_phrase(n, &words(&["case"])), words(&["case"]));
        assert_eq!(m.rewrite_phrase(n, &words(&["a", "b"])).join(" "), "b for a");
        assert_eq!(m.connective(n, &[], &[]), "with");
    }

    fn node(id: NodeId, parent: Option<NodeId>, label: u32, members: &[&str], children: &[NodeId]) -> ClusterNode {
        ClusterNode {
            node_id: id,
            parent,
            depth: parent.map_or(0, |_| 1),
            label,
            members: words(members),
            children: children.to_vec(),
        }
    }

    fn table(rows: &[(&str, &[(&str, u64)])]) -> KeywordTable {
        KeywordTable {
            per_doc: rows
                .iter()
                .map(|(d, kws)| (d.to_string(), kws.iter().map(|(k, c)| (k.to_string(), *c)).collect()))
                .collect(),
        }
    }

    /// Root with two leaves: {d1, d2} and {d3}.
    fn fixture(t: KeywordTable) -> (ClusterTree, BTreeMap<String, C2tId>, NodeLabels, LabelConfig) {
        let mut nodes = BTreeMap::new();
        nodes.insert(0, node(0, None, 0, &["d1", "d2", "d3"], &[1, 2]));
        nodes.insert(1, node(1, Some(0), 0, &["d1", "d2"], &[]));
        nodes.insert(2, node(2, Some(0), 1, &["d3"], &[]));
        let tree = ClusterTree { root: 0, nodes };
        let paths = assign_numeric_paths(&tree);
        let cfg = LabelConfig::default();
        let labels = NodeLabels::build(&tree, &t, &cfg).unwrap();
        let ids = render_with_labels(&tree, &paths, &t, &labels, &cfg).unwrap();
        (tree, ids, labels, cfg)
    }

    fn tries(ids: &BTreeMap<String, C2tId>, sm: &SmoothedIds) -> (DocidTrie, DocidTrie) {
        let orig_map = c2t_docid_map(ids);
        let ot = Tokenizer::build(TokenizerMode::Word, "-", "-", orig_map.values().map(String::as_str)).unwrap();
        let st = smoothed_tokenizer(&sm.docids).unwrap();
        (build_trie(&orig_map, &ot).unwrap(), build_trie(&sm.docids, &st).unwrap())
    }

    #[test]
    fn two_segment_example() {
        // one leaf labelled phone-case-battery holding a doc with
        // charger-cable-adapter
        let t = table(&[
            ("d1", &[("phone", 9), ("case", 8), ("battery", 7)]),
            ("d2", &[("phone", 9), ("case", 8), ("battery", 7), ("charger", 3), ("cable", 2), ("adapter", 1)]),
            ("d3", &[("tv", 1)]),
        ]);
        let (tree, ids, labels, cfg) = fixture(t);
        assert_eq!(ids["d1"].full, "phone-case-battery-phone-case-battery");
        let sm = smooth_ids(&ids, &tree, &labels, &cfg, &MockRewriter, SmoothOptions::default()).unwrap();
        assert_eq!(sm.docids["d1"], "case battery for phone with case battery for phone");
        assert_eq!(sm.docids["d2"], "case battery for phone with case battery for phone#1");
        assert_eq!(sm.docids["d3"], "tv with tv");

        let mut single = BTreeMap::new();
        let mut id = ids["d2"].clone();
        id.segments = vec!["phone-case-battery".into(), "charger-cable-adapter".into()];
        id.disambiguator = None;
        single.insert("d2".to_string(), id);
        let sm = smooth_ids(&single, &tree, &labels, &cfg, &MockRewriter, SmoothOptions::default()).unwrap();
        assert_eq!(sm.docids["d2"], "case battery for phone with cable adapter for charger");
    }

    #[test]
    fn spans_and_topology_hold() {
        let t = table(&[
            ("d1", &[("phone", 3), ("case", 2)]),
            ("d2", &[("phone", 3), ("cable", 2)]),
            ("d3", &[("tv", 4), ("remote", 1)]),
        ]);
        let (tree, ids, labels, cfg) = fixture(t);
        for rw in [&MockRewriter as &dyn Rewriter, &IdentityRewriter] {
            let sm = smooth_ids(&ids, &tree, &labels, &cfg, rw, SmoothOptions::default()).unwrap();
            let s = &sm.spans["d3"];
            assert_eq!(s.len(), 2);
            assert_eq!((s[0].start, s[0].connective_len), (0, 0));
            assert_eq!(s[1].start, s[0].len);
            assert_eq!(s[1].connective_len, 1);
            let (o, sm_trie) = tries(&ids, &sm);
            let report = verify_topology(&o, &sm_trie, &sm.spans, &tree);
            assert!(report.ok, "{:?}", report.violations);
        }
    }

    #[test]
    fn sibling_entry_collision_is_resolved() {
        // both leaves start with "phone" after reversal
        let t = table(&[
            ("d1", &[("case", 3), ("phone", 2), ("red", 1)]),
            ("d3", &[("cable", 3), ("phone", 2), ("blue", 1)]),
            ("d2", &[("case", 3), ("phone", 2)]),
        ]);
        let (tree, _, _, _) = fixture(t.clone());
        let cfg = LabelConfig { top_k: 2, ..LabelConfig::default() };
        let labels = NodeLabels::build(&tree, &t, &cfg).unwrap();
        let ids = render_with_labels(&tree, &assign_numeric_paths(&tree), &t, &labels, &cfg).unwrap();
        assert_eq!(labels.label(1).rendered, "case-phone");
        assert_eq!(labels.label(2).rendered, "cable-phone");

        let sm = smooth_ids(&ids, &tree, &labels, &cfg, &MockRewriter, SmoothOptions::default()).unwrap();
        assert_eq!(sm.node_phrases[&1].words, words(&["phone", "for", "case"]));
        assert_eq!(sm.node_phrases[&2].resolution, Resolution::Prepended);
        assert_eq!(sm.node_phrases[&2].words, words(&["blue", "phone", "for", "cable"]));
        let (o, st) = tries(&ids, &sm);
        assert!(verify_topology(&o, &st, &sm.spans, &tree).ok);

        let raw = smooth_ids(&ids, &tree, &labels, &cfg, &MockRewriter, SmoothOptions { resolve_collisions: false }).unwrap();
        let (o, st) = tries(&ids, &raw);
        let report = verify_topology(&o, &st, &raw.spans, &tree);
        assert!(!report.ok);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::SiblingPrefixCollision { .. })));
    }

    /// Sends every node to the same first word.
    struct Adversary;

    impl Rewriter for Adversary {
        fn rewrite_phrase(&self, owner: SpanOwner<'_>, keywords: &[String]) -> Vec<String> {
            match owner {
                SpanOwner::Node(_) => std::iter::once("same".to_string()).chain(keywords.iter().cloned()).collect(),
                SpanOwner::Doc(_) => keywords.to_vec(),
            }
        }

        fn connective(&self, _o: SpanOwner<'_>, _p: &[String], _c: &[String]) -> String {
            "and".into()
        }
    }

    #[test]
    fn adversarial_rewriter_fails_check() {
        let t = table(&[("d1", &[("a", 2)]), ("d2", &[("a", 1), ("b", 1)]), ("d3", &[("c", 1)])]);
        let (tree, ids, labels, cfg) = fixture(t);
        let sm = smooth_ids(&ids, &tree, &labels, &cfg, &Adversary, SmoothOptions { resolve_collisions: false }).unwrap();
        let (o, st) = tries(&ids, &sm);
        let report = verify_topology(&o, &st, &sm.spans, &tree);
        assert!(!report.ok);
        assert!(report.violations.contains(&Violation::SiblingPrefixCollision {
            node: 1,
            members: 2,
            reachable: 3
        }));
        // with resolution on, the label's hyphen form takes over
        let fixed = smooth_ids(&ids, &tree, &labels, &cfg, &Adversary, SmoothOptions::default()).unwrap();
        assert_eq!(fixed.node_phrases[&2].resolution, Resolution::Hyphen);
        let (o, st) = tries(&ids, &fixed);
        assert!(verify_topology(&o, &st, &fixed.spans, &tree).ok);
    }

    struct Bad(&'static str);

    impl Rewriter for Bad {
        fn rewrite_phrase(&self, _o: SpanOwner<'_>, _k: &[String]) -> Vec<String> {
            if self.0.is_empty() {
                Vec::new()
            } else {
                vec![self.0.to_string()]
            }
        }

        fn connective(&self, _o: SpanOwner<'_>, _p: &[String], _c: &[String]) -> String {
            "with".into()
        }
    }

    #[test]
    fn invalid_rewrites_name_the_node() {
        let t = table(&[("d1", &[("a", 2)]), ("d2", &[("a", 1)]), ("d3", &[("c", 1)])]);
        let (tree, ids, labels, cfg) = fixture(t);
        for bad in ["", "two words", "a-b", "x#1"] {
            let err = smooth_ids(&ids, &tree, &labels, &cfg, &Bad(bad), SmoothOptions::default()).unwrap_err();
            assert!(matches!(&err, Error::Rewriter { node, .. } if node == "1"), "{bad:?}: {err}");
        }
    }

    #[test]
    fn replay_rewriter() {
        let raw = "{\"node_id\":1,\"phrase\":\"cases for phones\",\"connective\":\"plus\"}\n\n";
        let r = ReplayRewriter::from_jsonl_str(raw).unwrap();
        assert_eq!(r.rewrite_phrase(SpanOwner::Node(1), &words(&["x"])), words(&["cases", "for", "phones"]));
        assert_eq!(r.rewrite_phrase(SpanOwner::Node(2), &words(&["x"])), words(&["x"]));
        assert_eq!(r.connective(SpanOwner::Node(1), &[], &[]), "plus");
        assert!(ReplayRewriter::from_jsonl_str("{\"node_id\":1}").is_err());
        assert!(ReplayRewriter::from_jsonl_str(&format!("{raw}{raw}")).is_err());
    }

    #[test]
    fn tampered_spans_reported() {
        let t = table(&[("d1", &[("a", 2)]), ("d2", &[("b", 1)]), ("d3", &[("c", 1)])]);
        let (tree, ids, labels, cfg) = fixture(t);
        let sm = smooth_ids(&ids, &tree, &labels, &cfg, &MockRewriter, SmoothOptions::default()).unwrap();
        let (o, st) = tries(&ids, &sm);
        let mut spans = sm.spans.clone();
        spans.get_mut("d1").unwrap()[0].len += 5;
        let report = verify_topology(&o, &st, &spans, &tree);
        assert_eq!(report.violations, vec![Violation::BadSpan { doc_id: "d1".into() }]);
    }
}
