//! Docid tokenization and the prefix trie that constrains decoding.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::write_file;
use crate::error::{Error, Result};
use crate::forge::{split_disambiguator, DocidMap};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const SEP: TokenId = 2;
const RESERVED: [&str; 3] = ["<bos>", "<eos>", "<sep>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    /// One token per keyword with a SEP token between levels.
    Segment,
    /// One token per word; separators are implicit.
    Word,
}

/// Vocabulary built from a docid set plus the splitting rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub mode: TokenizerMode,
    pub intra_sep: String,
    pub level_sep: String,
    /// Token strings indexed by id.
    tokens: Vec<String>,
    #[serde(skip)]
    vocab: BTreeMap<String, TokenId>,
}

impl Tokenizer {
    /// Build the vocabulary from every docid and check that each one
    /// round-trips.
    pub fn build<'a>(
        mode: TokenizerMode,
        intra_sep: &str,
        level_sep: &str,
        docids: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        if intra_sep.is_empty() || level_sep.is_empty() {
            return Err(Error::invalid("tokenizer separators must be non-empty"));
        }
        let mut tok = Tokenizer {
            mode,
            intra_sep: intra_sep.to_string(),
            level_sep: level_sep.to_string(),
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
            vocab: BTreeMap::new(),
        };
        let docids: Vec<&str> = docids.into_iter().collect();
        let mut words = BTreeSet::new();
        for d in &docids {
            for piece in tok.pieces(d)? {
                if let Piece::Word(w) = piece {
                    words.insert(w.to_string());
                }
            }
        }
        tok.tokens.extend(words.into_iter().filter(|w| !RESERVED.contains(&w.as_str())));
        tok.reindex();
        for d in &docids {
            let ids = tok.tokenize(d)?;
            let back = tok.detokenize(&ids);
            if back != *d {
                return Err(Error::NotInvertible {
                    docid: d.to_string(),
                    got: back,
                });
            }
        }
        Ok(tok)
    }

    fn reindex(&mut self) {
        self.vocab = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.vocab.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Split a docid into words and level breaks, before vocabulary lookup.
    fn pieces<'s>(&self, docid: &'s str) -> Result<Vec<Piece<'s>>> {
        if docid.is_empty() {
            return Err(Error::invalid("docid must be non-empty"));
        }
        let (body, suffix) = split_disambiguator(docid);
        let mut out = Vec::new();
        match self.mode {
            TokenizerMode::Word => {
                let seps = [self.intra_sep.as_str(), self.level_sep.as_str()];
                out.extend(split_multi(body, &seps).into_iter().map(Piece::Word));
            }
            TokenizerMode::Segment => {
                for (i, seg) in body.split(self.level_sep.as_str()).enumerate() {
                    if i > 0 {
                        out.push(Piece::Sep);
                    }
                    out.extend(seg.split(self.intra_sep.as_str()).map(Piece::Word));
                }
            }
        }
        if let Some(s) = suffix {
            out.push(Piece::Word(s));
        }
        Ok(out)
    }

    /// Token ids of a docid, EOS-terminated.
    pub fn tokenize(&self, docid: &str) -> Result<Vec<TokenId>> {
        let mut ids = Vec::new();
        for piece in self.pieces(docid)? {
            ids.push(match piece {
                Piece::Sep => SEP,
                Piece::Word(w) => self.id(w).ok_or_else(|| Error::UnknownToken(w.to_string()))?,
            });
        }
        ids.push(EOS);
        Ok(ids)
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let ids = match ids.last() {
            Some(&EOS) => &ids[..ids.len() - 1],
            _ => ids,
        };
        let mut out = String::new();
        let mut prev_word = false;
        for &id in ids {
            if id == SEP {
                out.push_str(&self.level_sep);
                prev_word = false;
                continue;
            }
            let w = self.token(id).unwrap_or("<unk>");
            if w.starts_with(crate::forge::DISAMBIGUATOR_PREFIX) {
                out.push_str(w);
            } else {
                if prev_word {
                    out.push_str(match self.mode {
                        TokenizerMode::Word => &self.level_sep,
                        TokenizerMode::Segment => &self.intra_sep,
                    });
                }
                out.push_str(w);
            }
            prev_word = true;
        }
        out
    }

    /// Vocabulary as `token<TAB>id` lines.
    pub fn vocab_tsv(&self) -> String {
        self.tokens.iter().enumerate().map(|(i, t)| format!("{t}\t{i}\n")).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tokenizer serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let mut tok: Tokenizer = serde_json::from_str(raw)?;
        tok.reindex();
        Ok(tok)
    }
}

enum Piece<'s> {
    Word(&'s str),
    Sep,
}

/// Split on any of `seps` or on whitespace. Empty pieces are kept so that
/// malformed docids fail the round-trip check instead of silently merging.
fn split_multi<'s>(s: &'s str, seps: &[&str]) -> Vec<&'s str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    let bytes_len = s.len();
    while i < bytes_len {
        let rest = &s[i..];
        let sep_len = seps
            .iter()
            .filter(|sep| rest.starts_with(**sep))
            .map(|sep| sep.len())
            .max()
            .or_else(|| rest.chars().next().filter(|c| c.is_whitespace()).map(char::len_utf8));
        match sep_len {
            Some(n) => {
                out.push(&s[start..i]);
                i += n;
                start = i;
            }
            None => i += rest.chars().next().map_or(1, char::len_utf8),
        }
    }
    out.push(&s[start..]);
    out
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: BTreeMap<TokenId, usize>,
    terminal: Option<String>,
}

/// Prefix trie over tokenized docids; every inserted sequence ends in EOS.
#[derive(Debug, Clone)]
pub struct DocidTrie {
    nodes: Vec<TrieNode>,
    terminals: usize,
    max_depth: usize,
}

pub fn build_trie(docids: &DocidMap, tok: &Tokenizer) -> Result<DocidTrie> {
    let mut trie = DocidTrie {
        nodes: vec![TrieNode::default()],
        terminals: 0,
        max_depth: 0,
    };
    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    for (doc_id, docid) in docids {
        if seen.insert(docid.as_str(), doc_id.as_str()).is_some() {
            return Err(Error::DuplicateDocid {
                doc_id: doc_id.clone(),
                docid: docid.clone(),
            });
        }
        trie.insert(&tok.tokenize(docid)?, doc_id)?;
    }
    Ok(trie)
}

impl DocidTrie {
    fn insert(&mut self, tokens: &[TokenId], doc_id: &str) -> Result<()> {
        let mut cur = 0;
        for &t in tokens {
            cur = match self.nodes[cur].children.get(&t) {
                Some(&n) => n,
                None => {
                    self.nodes.push(TrieNode::default());
                    let n = self.nodes.len() - 1;
                    self.nodes[cur].children.insert(t, n);
                    n
                }
            };
        }
        let node = &mut self.nodes[cur];
        if let Some(prev) = &node.terminal {
            return Err(Error::invalid(format!("{doc_id:?} and {prev:?} tokenize identically")));
        }
        node.terminal = Some(doc_id.to_string());
        self.terminals += 1;
        self.max_depth = self.max_depth.max(tokens.len());
        Ok(())
    }

    /// Node reached by following `prefix` from the root.
    pub fn node_at(&self, prefix: &[TokenId]) -> Option<usize> {
        let mut cur = 0;
        for t in prefix {
            cur = *self.nodes[cur].children.get(t)?;
        }
        Some(cur)
    }

    /// Tokens that extend `prefix` towards some inserted docid, ascending.
    pub fn allowed_next(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        self.node_at(prefix)
            .map(|n| self.nodes[n].children.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn complete(&self, tokens: &[TokenId]) -> Option<&str> {
        self.node_at(tokens).and_then(|n| self.nodes[n].terminal.as_deref())
    }

    pub fn fanout(&self, node: usize) -> usize {
        self.nodes[node].children.len()
    }

    pub fn child(&self, node: usize, token: TokenId) -> Option<usize> {
        self.nodes[node].children.get(&token).copied()
    }

    pub fn terminal_count(&self) -> usize {
        self.terminals
    }

    pub fn is_empty(&self) -> bool {
        self.terminals == 0
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).sum()
    }

    /// Every inserted (doc_id, token sequence), in token order.
    pub fn entries(&self) -> Vec<(String, Vec<TokenId>)> {
        let mut out = Vec::with_capacity(self.terminals);
        let mut stack: Vec<(usize, Vec<TokenId>)> = vec![(0, Vec::new())];
        while let Some((n, path)) = stack.pop() {
            if let Some(d) = &self.nodes[n].terminal {
                out.push((d.clone(), path.clone()));
            }
            for (&t, &c) in self.nodes[n].children.iter().rev() {
                let mut p = path.clone();
                p.push(t);
                stack.push((c, p));
            }
        }
        out
    }

    /// Longest inserted token sequence (EOS included).
    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Number of terminals in the subtree of every node.
    pub fn subtree_terminals(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.nodes.len()];
        // children always have larger indices than their parent
        for i in (0..self.nodes.len()).rev() {
            let own = usize::from(self.nodes[i].terminal.is_some());
            counts[i] = own + self.nodes[i].children.values().map(|&c| counts[c]).sum::<usize>();
        }
        counts
    }

    pub fn to_json(&self) -> String {
        let view = TrieJson {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| TrieNodeJson {
                    id: i,
                    children: n.children.iter().map(|(&t, &c)| (t, c)).collect(),
                    terminal: n.terminal.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&view).expect("trie serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let view: TrieJson = serde_json::from_str(raw)?;
        let mut nodes = vec![TrieNode::default(); view.nodes.len()];
        for n in view.nodes {
            if n.id >= nodes.len() || n.children.iter().any(|(_, c)| *c >= nodes.len() || *c <= n.id) {
                return Err(Error::invalid(format!("malformed trie node {}", n.id)));
            }
            nodes[n.id] = TrieNode {
                children: n.children.into_iter().collect(),
                terminal: n.terminal,
            };
        }
        if nodes.is_empty() {
            nodes.push(TrieNode::default());
        }
        let mut trie = DocidTrie {
            nodes,
            terminals: 0,
            max_depth: 0,
        };
        let entries = trie.entries();
        trie.terminals = entries.len();
        trie.max_depth = entries.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
        Ok(trie)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DocidTrie::from_json(&raw)
    }
}

#[derive(Serialize, Deserialize)]
struct TrieJson {
    nodes: Vec<TrieNodeJson>,
}

#[derive(Serialize, Deserialize)]
struct TrieNodeJson {
    id: usize,
    children: Vec<(TokenId, usize)>,
    terminal: Option<String>,
}
