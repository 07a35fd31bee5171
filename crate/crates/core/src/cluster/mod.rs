//! Hierarchical k-means codebook: the cluster tree and numeric paths.

mod kmeans;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans, kmeans_traced, KMeansOutcome};

use crate::corpus::{write_file, Corpus, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::text::splitmix64;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterParams {
    /// Maximum children per internal split.
    pub k: usize,
    /// Maximum documents per leaf.
    pub c: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            k: 30,
            c: 30,
            seed: 0,
            max_iters: 50,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!("k must be >= 2, got {}", self.k)));
        }
        if self.c < 1 {
            return Err(Error::invalid("c must be >= 1"));
        }
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterNode {
    pub node_id: NodeId,
    pub parent: Option<NodeId>,
    pub depth: u32,
    /// Index among siblings; 0 for the root.
    pub label: u32,
    /// Sorted by doc_id.
    pub members: Vec<String>,
    /// Ordered by label.
    pub children: Vec<NodeId>,
}

impl ClusterNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTree {
    pub root: NodeId,
    pub nodes: BTreeMap<NodeId, ClusterNode>,
}

/// Root-to-document routing path: sibling labels of every node below the
/// root, then the document's index inside its leaf.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NumericPath {
    pub doc_id: String,
    pub labels: Vec<u32>,
}

impl fmt::Display for NumericPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.labels.iter().map(u32::to_string).collect();
        f.write_str(&parts.join("."))
    }
}

impl NumericPath {
    /// Labels of the cluster nodes on the path (everything but the leaf index).
    pub fn node_labels(&self) -> &[u32] {
        &self.labels[..self.labels.len() - 1]
    }

    pub fn leaf_index(&self) -> u32 {
        *self.labels.last().expect("paths are non-empty")
    }
}

impl ClusterTree {
    pub fn node(&self, id: NodeId) -> &ClusterNode {
        &self.nodes[&id]
    }

    pub fn root_node(&self) -> &ClusterNode {
        self.node(self.root)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &ClusterNode> {
        self.nodes.values().filter(|n| n.is_leaf())
    }

    /// Child of `parent` carrying sibling label `label`.
    pub fn child(&self, parent: NodeId, label: u32) -> Option<NodeId> {
        self.node(parent).children.get(label as usize).copied()
    }

    /// Nodes below the root visited by a path, ending at the leaf.
    pub fn path_nodes(&self, path: &NumericPath) -> Result<Vec<NodeId>> {
        let mut cur = self.root;
        let mut out = Vec::with_capacity(path.labels.len());
        for &label in path.node_labels() {
            cur = self.child(cur, label).ok_or_else(|| {
                Error::invalid(format!("path {path} of {:?} leaves the tree", path.doc_id))
            })?;
            out.push(cur);
        }
        Ok(out)
    }

    /// Leaf holding each document.
    pub fn leaf_of(&self) -> BTreeMap<&str, NodeId> {
        self.leaves()
            .flat_map(|l| l.members.iter().map(move |m| (m.as_str(), l.node_id)))
            .collect()
    }

    /// Check the structural invariants: single root, connectivity, member
    /// partitioning, child fan-out and leaf capacity, compact sibling labels.
    pub fn validate(&self, params: &ClusterParams) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        let root = match self.nodes.get(&self.root) {
            Some(r) => r,
            None => return bad("root node missing".into()),
        };
        if root.parent.is_some() || self.nodes.values().filter(|n| n.parent.is_none()).count() != 1 {
            return bad("tree must have exactly one root".into());
        }
        let mut seen = 0usize;
        let mut queue = VecDeque::from([self.root]);
        while let Some(id) = queue.pop_front() {
            seen += 1;
            let node = match self.nodes.get(&id) {
                Some(n) => n,
                None => return bad(format!("dangling node id {id}")),
            };
            if node.is_leaf() {
                if node.members.len() > params.c {
                    return bad(format!("leaf {id} holds {} > c={} members", node.members.len(), params.c));
                }
                continue;
            }
            if node.children.len() < 2 || node.children.len() > params.k {
                return bad(format!("node {id} has {} children (k={})", node.children.len(), params.k));
            }
            let mut union: Vec<&String> = Vec::new();
            for (i, cid) in node.children.iter().enumerate() {
                let child = match self.nodes.get(cid) {
                    Some(c) => c,
                    None => return bad(format!("dangling child {cid}")),
                };
                if child.parent != Some(id) || child.label as usize != i || child.depth != node.depth + 1 {
                    return bad(format!("child {cid} of {id} is mislinked"));
                }
                union.extend(child.members.iter());
                queue.push_back(*cid);
            }
            union.sort();
            if union.windows(2).any(|w| w[0] == w[1]) {
                return bad(format!("children of {id} overlap"));
            }
            if !union.iter().copied().eq(node.members.iter()) {
                return bad(format!("children of {id} do not partition its members"));
            }
        }
        if seen != self.nodes.len() {
            return bad("tree is not connected".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        Ok(serde_json::from_str(raw)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ClusterTree::from_json(&raw)
    }
}

/// Recursive k-means over the document embeddings until every leaf holds
/// at most `c` documents. Node ids are assigned breadth-first.
pub fn build_tree(emb: &EmbeddingMatrix, corpus: &Corpus, params: &ClusterParams) -> Result<ClusterTree> {
    params.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    emb.covers(corpus)?;

    let mut nodes = BTreeMap::new();
    let root = ClusterNode {
        node_id: 0,
        parent: None,
        depth: 0,
        label: 0,
        members: corpus.iter().map(|d| d.doc_id.clone()).collect(),
        children: Vec::new(),
    };
    nodes.insert(0, root);
    let mut next_id: NodeId = 1;
    let mut queue = VecDeque::from([0 as NodeId]);

    while let Some(id) = queue.pop_front() {
        let (members, depth) = {
            let n = &nodes[&id];
            (n.members.clone(), n.depth)
        };
        if members.len() <= params.c {
            continue;
        }
        let groups = split(&members, emb, params, id)?;
        let mut child_ids = Vec::with_capacity(groups.len());
        for (label, group) in groups.into_iter().enumerate() {
            let cid = next_id;
            next_id += 1;
            nodes.insert(
                cid,
                ClusterNode {
                    node_id: cid,
                    parent: Some(id),
                    depth: depth + 1,
                    label: label as u32,
                    members: group,
                    children: Vec::new(),
                },
            );
            child_ids.push(cid);
            queue.push_back(cid);
        }
        nodes.get_mut(&id).expect("node exists").children = child_ids;
    }
    Ok(ClusterTree { root: 0, nodes })
}

/// Split one over-full node. Groups come back sorted by smallest member.
fn split(members: &[String], emb: &EmbeddingMatrix, params: &ClusterParams, node: NodeId) -> Result<Vec<Vec<String>>> {
    let points: Vec<(&str, &[f64])> = members
        .iter()
        .map(|m| (m.as_str(), emb.row(m).expect("coverage checked")))
        .collect();
    let seed = splitmix64(params.seed ^ splitmix64(u64::from(node)));
    let assign = kmeans(&points, params.k, seed, params.max_iters)?;
    let n_groups = assign.values().max().map_or(0, |m| m + 1);
    if n_groups <= 1 {
        // anti-stall: identical points, deal them out round-robin
        let n = params.k.min(members.len());
        let mut groups = vec![Vec::new(); n];
        for (i, m) in members.iter().enumerate() {
            groups[i % n].push(m.clone());
        }
        return Ok(groups);
    }
    let mut groups = vec![Vec::new(); n_groups];
    // members are sorted, so groups stay sorted and label order follows the
    // smallest member
    for m in members {
        groups[assign[m]].push(m.clone());
    }
    Ok(groups)
}

/// Numeric path of every document; the final label is the index inside
/// the leaf under ascending doc_id order.
pub fn assign_numeric_paths(tree: &ClusterTree) -> BTreeMap<String, NumericPath> {
    let mut out = BTreeMap::new();
    for leaf in tree.leaves() {
        let mut prefix = Vec::new();
        let mut cur = leaf;
        while let Some(parent) = cur.parent {
            prefix.push(cur.label);
            cur = tree.node(parent);
        }
        prefix.reverse();
        for (i, doc) in leaf.members.iter().enumerate() {
            let mut labels = prefix.clone();
            labels.push(i as u32);
            out.insert(
                doc.clone(),
                NumericPath {
                    doc_id: doc.clone(),
                    labels,
                },
            );
        }
    }
    out
}

pub fn paths_to_tsv(paths: &BTreeMap<String, NumericPath>) -> String {
    let mut out = String::new();
    for (doc, p) in paths {
        out.push_str(&format!("{doc}\t{p}\n"));
    }
    out
}

pub fn paths_from_tsv(raw: &str) -> Result<BTreeMap<String, NumericPath>> {
    let mut out = BTreeMap::new();
    for (i, line) in raw.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parse_err = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_string(),
        };
        let (doc, path) = line.split_once('\t').ok_or_else(|| parse_err("expected doc_id<TAB>path"))?;
        let labels = path
            .split('.')
            .map(|s| s.parse::<u32>().map_err(|_| parse_err("non-numeric label")))
            .collect::<Result<Vec<_>>>()?;
        let np = NumericPath {
            doc_id: doc.to_string(),
            labels,
        };
        if out.insert(doc.to_string(), np).is_some() {
            return Err(Error::DuplicateDocId(doc.to_string()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn corpus_and_emb(points: &[(&str, Vec<f64>)]) -> (Corpus, EmbeddingMatrix) {
        let corpus = Corpus::new(points.iter().map(|(id, _)| Document::new(*id, "", "x")).collect()).unwrap();
        let emb = EmbeddingMatrix::from_rows(points.iter().map(|(id, v)| (id.to_string(), v.clone())).collect()).unwrap();
        (corpus, emb)
    }

    fn four_points() -> (Corpus, EmbeddingMatrix) {
        corpus_and_emb(&[
            ("p1", vec![0.0, 0.0]),
            ("p2", vec![0.0, 1.0]),
            ("p3", vec![10.0, 10.0]),
            ("p4", vec![10.0, 11.0]),
        ])
    }

    #[test]
    fn four_points_binary_tree() {
        let (corpus, emb) = four_points();
        let params = ClusterParams { k: 2, c: 1, seed: 3, max_iters: 50 };
        let tree = build_tree(&emb, &corpus, &params).unwrap();
        tree.validate(&params).unwrap();
        // root -> {p1,p2}, {p3,p4} -> four singleton leaves at depth 2
        assert_eq!(tree.root_node().children.len(), 2);
        let leaves: Vec<_> = tree.leaves().collect();
        assert_eq!(leaves.len(), 4);
        assert!(leaves.iter().all(|l| l.depth == 2 && l.members.len() == 1));
        assert_eq!(tree.node(tree.root_node().children[0]).members, ["p1", "p2"]);

        let paths = assign_numeric_paths(&tree);
        assert_eq!(paths["p1"].labels, [0, 0, 0]);
        assert_eq!(paths["p2"].labels, [0, 1, 0]);
        assert_eq!(paths["p3"].labels, [1, 0, 0]);
        assert_eq!(paths["p4"].labels, [1, 1, 0]);
    }

    #[test]
    fn small_corpus_is_single_leaf() {
        let (corpus, emb) = corpus_and_emb(&[("d1", vec![1.0, 0.0]), ("d2", vec![0.0, 1.0]), ("d3", vec![1.0, 1.0])]);
        let tree = build_tree(&emb, &corpus, &ClusterParams::default()).unwrap();
        assert_eq!(tree.len(), 1);
        assert!(tree.root_node().is_leaf());
        let paths = assign_numeric_paths(&tree);
        assert_eq!(paths["d1"].labels, [0]);
        assert_eq!(paths["d2"].labels, [1]);
        assert_eq!(paths["d3"].labels, [2]);
    }

    #[test]
    fn identical_points_round_robin() {
        let pts: Vec<(String, Vec<f64>)> = (0..7).map(|i| (format!("d{i}"), vec![1.0, 1.0])).collect();
        let refs: Vec<(&str, Vec<f64>)> = pts.iter().map(|(a, b)| (a.as_str(), b.clone())).collect();
        let (corpus, emb) = corpus_and_emb(&refs);
        let params = ClusterParams { k: 3, c: 2, seed: 0, max_iters: 10 };
        let tree = build_tree(&emb, &corpus, &params).unwrap();
        tree.validate(&params).unwrap();
        assert_eq!(tree.node(tree.root_node().children[0]).members, ["d0", "d3", "d6"]);
        assert_eq!(assign_numeric_paths(&tree).len(), 7);
    }

    #[test]
    fn missing_embedding_rejected() {
        let (corpus, _) = four_points();
        let (_, emb) = corpus_and_emb(&[("p1", vec![0.0, 0.0])]);
        assert!(build_tree(&emb, &corpus, &ClusterParams::default()).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let (corpus, emb) = four_points();
        for p in [
            ClusterParams { k: 1, ..Default::default() },
            ClusterParams { c: 0, ..Default::default() },
            ClusterParams { max_iters: 0, ..Default::default() },
        ] {
            assert!(build_tree(&emb, &corpus, &p).is_err());
        }
    }

    #[test]
    fn tsv_round_trip() {
        let (corpus, emb) = four_points();
        let params = ClusterParams { k: 2, c: 1, seed: 3, max_iters: 50 };
        let paths = assign_numeric_paths(&build_tree(&emb, &corpus, &params).unwrap());
        let tsv = paths_to_tsv(&paths);
        assert!(tsv.starts_with("p1\t0.0.0\n"));
        assert_eq!(paths_from_tsv(&tsv).unwrap(), paths);
    }

    #[test]
    fn path_nodes_walks_to_leaf() {
        let (corpus, emb) = four_points();
        let params = ClusterParams { k: 2, c: 1, seed: 3, max_iters: 50 };
        let tree = build_tree(&emb, &corpus, &params).unwrap();
        let paths = assign_numeric_paths(&tree);
        let leaf_of = tree.leaf_of();
        for (doc, p) in &paths {
            let nodes = tree.path_nodes(p).unwrap();
            assert_eq!(nodes.len(), 2);
            assert_eq!(*nodes.last().unwrap(), leaf_of[doc.as_str()]);
        }
    }
}
