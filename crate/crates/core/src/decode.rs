//! Trie-constrained beam search with pluggable next-token scorers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::write_file;
use crate::error::{Error, Result};
use crate::forge::{DocidMap, DISAMBIGUATOR_PREFIX};
use crate::text::word_tokens;
use crate::trie::{DocidTrie, TokenId, Tokenizer, BOS, EOS, SEP};

/// Tolerance on the normalization of scorer outputs.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Next-token model standing in for the generative backbone.
///
/// Implementations return a log-probability for exactly the tokens in
/// `allowed`, normalized over that set.
pub trait Scorer {
    fn score_next(&self, query: &str, prefix: &[TokenId], allowed: &[TokenId]) -> Result<BTreeMap<TokenId, f64>>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score_next(&self, query: &str, prefix: &[TokenId], allowed: &[TokenId]) -> Result<BTreeMap<TokenId, f64>> {
        (**self).score_next(query, prefix, allowed)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniformScorer;

pub fn uniform_scorer() -> UniformScorer {
    UniformScorer
}

impl Scorer for UniformScorer {
    fn score_next(&self, _query: &str, _prefix: &[TokenId], allowed: &[TokenId]) -> Result<BTreeMap<TokenId, f64>> {
        if allowed.is_empty() {
            return Err(Error::Empty("allowed token set".into()));
        }
        let lp = -(allowed.len() as f64).ln();
        Ok(allowed.iter().map(|&t| (t, lp)).collect())
    }
}

/// The last `order` tokens of a prefix, left-padded with BOS.
pub type Context = Vec<TokenId>;

pub fn context(prefix: &[TokenId], order: usize) -> Context {
    let take = prefix.len().min(order);
    let mut ctx = vec![BOS; order - take];
    ctx.extend_from_slice(&prefix[prefix.len() - take..]);
    ctx
}

/// Context slot holding position-independent counts.
fn any_context() -> Context {
    Vec::new()
}

/// Distinct lowercased words of a query.
pub fn query_terms(query: &str) -> BTreeSet<String> {
    word_tokens(query).collect()
}

/// How per-term next-token estimates are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    /// Arithmetic mean of the term distributions.
    #[default]
    Mixture,
    /// Normalized product of the term distributions.
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Additive smoothing.
    pub alpha: f64,
    /// Context length in tokens.
    pub order: usize,
    /// Weight of the context-free estimate each context backs off to;
    /// 0 disables backoff.
    pub backoff: f64,
    pub combine: Combine,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            alpha: 0.1,
            order: 2,
            backoff: 0.0,
            combine: Combine::Mixture,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.backoff.is_finite() && self.backoff >= 0.0) {
            return Err(Error::invalid(format!("backoff must be finite and >= 0, got {}", self.backoff)));
        }
        if self.order < 1 {
            return Err(Error::invalid("order must be >= 1"));
        }
        Ok(())
    }
}

/// Bag-of-words conditional counts `(query term, context) -> next token`.
///
/// Each query term predicts the next token with its own add-alpha
/// estimate over the allowed set, optionally backed off to the term's
/// context-free estimate. Terms with any evidence for that set are
/// combined; without evidence the distribution is uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramScorerModel {
    pub config: ModelConfig,
    terms: HashMap<String, u32>,
    counts: HashMap<(u32, Context), HashMap<TokenId, u64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    config: ModelConfig,
    /// (term, context, next token, count), sorted; an empty context holds
    /// the context-free counts.
    counts: Vec<(String, Context, TokenId, u64)>,
}

impl NgramScorerModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(NgramScorerModel {
            config,
            terms: HashMap::new(),
            counts: HashMap::new(),
        })
    }

    fn term_id(&mut self, term: &str) -> u32 {
        let next = self.terms.len() as u32;
        *self.terms.entry(term.to_string()).or_insert(next)
    }

    /// Count every (term, context, next token) along one token sequence.
    pub fn observe(&mut self, query: &str, tokens: &[TokenId]) {
        let terms: Vec<u32> = query_terms(query).iter().map(|t| self.term_id(t)).collect();
        for (i, &next) in tokens.iter().enumerate() {
            let ctx = context(&tokens[..i], self.config.order);
            for &t in &terms {
                for c in [ctx.clone(), any_context()] {
                    *self.counts.entry((t, c)).or_default().entry(next).or_insert(0) += 1;
                }
            }
        }
    }

    pub fn count(&self, term: &str, ctx: &[TokenId], next: TokenId) -> u64 {
        self.terms
            .get(term)
            .and_then(|t| self.counts.get(&(*t, ctx.to_vec())))
            .and_then(|m| m.get(&next))
            .copied()
            .unwrap_or(0)
    }

    /// Sum of all in-context counts.
    pub fn total(&self) -> u64 {
        self.counts
            .iter()
            .filter(|((_, c), _)| !c.is_empty())
            .flat_map(|(_, m)| m.values())
            .sum()
    }

    pub fn known_terms(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }

    /// Per-token probabilities over `allowed`.
    pub fn probabilities(&self, query: &str, prefix: &[TokenId], allowed: &[TokenId]) -> Vec<f64> {
        let ctx = context(prefix, self.config.order);
        let ModelConfig {
            alpha,
            backoff,
            combine,
            ..
        } = self.config;
        let n = allowed.len() as f64;
        let mut acc = vec![0.0; allowed.len()];
        let mut experts = 0usize;
        let empty = HashMap::new();
        for term in query_terms(query) {
            let Some(&t) = self.terms.get(&term) else { continue };
            let counts_at = |c: &Context| -> (Vec<u64>, u64) {
                let m = self.counts.get(&(t, c.clone())).unwrap_or(&empty);
                let seen: Vec<u64> = allowed.iter().map(|a| m.get(a).copied().unwrap_or(0)).collect();
                let total = seen.iter().sum();
                (seen, total)
            };
            let (seen, total) = counts_at(&ctx);
            let q: Vec<f64> = if backoff > 0.0 {
                let (seen_any, total_any) = counts_at(&any_context());
                if total == 0 && total_any == 0 {
                    continue;
                }
                let denom_any = total_any as f64 + alpha * n;
                let denom = total as f64 + backoff;
                seen.iter()
                    .zip(&seen_any)
                    .map(|(c, u)| {
                        let prior = if denom_any > 0.0 { (*u as f64 + alpha) / denom_any } else { 1.0 / n };
                        (*c as f64 + backoff * prior) / denom
                    })
                    .collect()
            } else {
                if total == 0 {
                    continue;
                }
                let denom = total as f64 + alpha * n;
                seen.iter().map(|c| (*c as f64 + alpha) / denom).collect()
            };
            for (p, q) in acc.iter_mut().zip(q) {
                match combine {
                    Combine::Mixture => *p += q,
                    Combine::Product => *p += q.max(f64::MIN_POSITIVE).ln(),
                }
            }
            experts += 1;
        }
        if experts == 0 {
            return vec![1.0 / n; allowed.len()];
        }
        match combine {
            Combine::Mixture => acc.iter().map(|p| p / experts as f64).collect(),
            Combine::Product => {
                let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = acc.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exp.iter().sum();
                exp.into_iter().map(|e| e / z).collect()
            }
        }
    }

    pub fn to_json(&self) -> String {
        let names: BTreeMap<u32, &str> = self.terms.iter().map(|(k, v)| (*v, k.as_str())).collect();
        let names = &names;
        let mut counts: Vec<(String, Context, TokenId, u64)> = self
            .counts
            .iter()
            .flat_map(|((t, ctx), m)| m.iter().map(move |(next, c)| (names[t].to_string(), ctx.clone(), *next, *c)))
            .collect();
        counts.sort();
        serde_json::to_string(&ModelJson {
            config: self.config,
            counts,
        })
        .expect("model serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let view: ModelJson = serde_json::from_str(raw)?;
        let mut model = NgramScorerModel::new(view.config)?;
        for (term, ctx, next, c) in view.counts {
            let t = model.term_id(&term);
            *model.counts.entry((t, ctx)).or_default().entry(next).or_insert(0) += c;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        NgramScorerModel::from_json(&raw)
    }
}

impl Scorer for NgramScorerModel {
    fn score_next(&self, query: &str, prefix: &[TokenId], allowed: &[TokenId]) -> Result<BTreeMap<TokenId, f64>> {
        if allowed.is_empty() {
            return Err(Error::Empty("allowed token set".into()));
        }
        let probs = self.probabilities(query, prefix, allowed);
        // alpha = 0 can leave a token with zero mass; keep it finite
        Ok(allowed
            .iter()
            .zip(probs)
            .map(|(&t, p)| (t, p.max(f64::MIN_POSITIVE).ln()))
            .collect())
    }
}

/// Count model plus a lexical-match expert: when some allowed tokens
/// spell a query word, `weight` of the mass goes uniformly to them.
#[derive(Debug, Clone)]
pub struct LexicalScorer<'a> {
    model: &'a NgramScorerModel,
    /// Words spelled by each token id.
    spelled: Vec<BTreeSet<String>>,
    weight: f64,
}

impl<'a> LexicalScorer<'a> {
    pub fn new(model: &'a NgramScorerModel, tok: &Tokenizer, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::invalid(format!("lexical weight must be in [0, 1], got {weight}")));
        }
        let spelled = (0..tok.vocab_size() as TokenId)
            .map(|id| match tok.token(id) {
                Some(t) if id > SEP && !t.starts_with(DISAMBIGUATOR_PREFIX) => word_tokens(t).collect(),
                _ => BTreeSet::new(),
            })
            .collect();
        Ok(LexicalScorer { model, spelled, weight })
    }
}

impl Scorer for LexicalScorer<'_> {
    fn score_next(&self, query: &str, prefix: &[TokenId], allowed: &[TokenId]) -> Result<BTreeMap<TokenId, f64>> {
        if allowed.is_empty() {
            return Err(Error::Empty("allowed token set".into()));
        }
        let mut probs = self.model.probabilities(query, prefix, allowed);
        if self.weight > 0.0 {
            let terms = query_terms(query);
            let hit: Vec<bool> = allowed
                .iter()
                .map(|&a| {
                    self.spelled
                        .get(a as usize)
                        .is_some_and(|w| w.iter().any(|x| terms.contains(x)))
                })
                .collect();
            let n_hit = hit.iter().filter(|h| **h).count();
            if n_hit > 0 {
                for (p, h) in probs.iter_mut().zip(&hit) {
                    *p = (1.0 - self.weight) * *p + if *h { self.weight / n_hit as f64 } else { 0.0 };
                }
            }
        }
        Ok(allowed
            .iter()
            .zip(probs)
            .map(|(&t, p)| (t, p.max(f64::MIN_POSITIVE).ln()))
            .collect())
    }
}

/// Count training pairs `(query or document text, doc_id)` against the
/// tokenized docid of each document.
pub fn train_ngram(
    pairs: &[(String, String)],
    docids: &DocidMap,
    tok: &Tokenizer,
    config: ModelConfig,
) -> Result<NgramScorerModel> {
    let mut model = NgramScorerModel::new(config)?;
    add_pairs(&mut model, pairs, docids, tok)?;
    Ok(model)
}

pub fn add_pairs(model: &mut NgramScorerModel, pairs: &[(String, String)], docids: &DocidMap, tok: &Tokenizer) -> Result<()> {
    let mut cache: HashMap<&str, Vec<TokenId>> = HashMap::new();
    for (query, doc_id) in pairs {
        if !cache.contains_key(doc_id.as_str()) {
            let docid = docids.get(doc_id).ok_or_else(|| Error::UnknownDocument(doc_id.clone()))?;
            cache.insert(doc_id.as_str(), tok.tokenize(docid)?);
        }
        model.observe(query, &cache[doc_id.as_str()]);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub max_len: usize,
    /// Rank by mean per-token log-probability instead of the sum.
    pub length_normalize: bool,
}

impl BeamConfig {
    pub fn new(beam_width: usize, max_len: usize) -> Self {
        BeamConfig {
            beam_width,
            max_len,
            length_normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: String,
    pub log_prob: f64,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub query: String,
    pub beam_width: usize,
    pub ranked: Vec<RankedDoc>,
}

#[derive(Serialize, Deserialize)]
struct DecodeLine {
    query: String,
    ranked: Vec<(String, f64)>,
}

impl DecodeResult {
    pub fn doc_ids(&self) -> Vec<&str> {
        self.ranked.iter().map(|r| r.doc_id.as_str()).collect()
    }

    /// `{"query": ..., "ranked": [[doc_id, logprob], ...]}`
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&DecodeLine {
            query: self.query.clone(),
            ranked: self.ranked.iter().map(|r| (r.doc_id.clone(), r.log_prob)).collect(),
        })
        .expect("decode line serializes")
    }
}

/// Parse one decode output line back into `(query, [(doc_id, logprob)])`.
pub fn parse_decode_line(line: &str) -> Result<(String, Vec<(String, f64)>)> {
    let d: DecodeLine = serde_json::from_str(line)?;
    Ok((d.query, d.ranked))
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    log_prob: f64,
}

impl Hyp {
    fn score(&self, normalize: bool) -> f64 {
        if normalize {
            self.log_prob / self.tokens.len().max(1) as f64
        } else {
            self.log_prob
        }
    }
}

/// Check a scorer's output against the allowed-set contract.
pub fn check_scores(scores: &BTreeMap<TokenId, f64>, allowed: &[TokenId]) -> Result<()> {
    if scores.len() != allowed.len() || !allowed.iter().all(|a| scores.contains_key(a)) {
        return Err(Error::ScorerContract(format!(
            "scored tokens {:?} differ from allowed {:?}",
            scores.keys().collect::<Vec<_>>(),
            allowed
        )));
    }
    if let Some((t, v)) = scores.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::ScorerContract(format!("token {t} has non-finite score {v}")));
    }
    let max = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.values().map(|v| (v - max).exp()).sum::<f64>().ln();
    if lse.abs() > NORMALIZATION_TOL {
        return Err(Error::ScorerContract(format!("log-sum-exp over allowed set is {lse}")));
    }
    Ok(())
}

/// Beam search restricted to trie continuations.
///
/// Candidates are ranked by cumulative log-probability, ties going to the
/// lower token id and then to the earlier parent beam. Hypotheses that
/// emit EOS leave the beam and compete in the final ranking.
pub fn beam_search<S: Scorer + ?Sized>(query: &str, scorer: &S, trie: &DocidTrie, cfg: BeamConfig) -> Result<DecodeResult> {
    if cfg.beam_width < 1 {
        return Err(Error::invalid("beam_width must be >= 1"));
    }
    if trie.is_empty() {
        return Err(Error::Empty("docid trie".into()));
    }
    if cfg.max_len < trie.max_depth() {
        return Err(Error::invalid(format!(
            "max_len {} is shorter than the longest docid ({} tokens)",
            cfg.max_len,
            trie.max_depth()
        )));
    }

    let mut live = vec![Hyp {
        tokens: Vec::new(),
        log_prob: 0.0,
    }];
    let mut finished: Vec<Hyp> = Vec::new();

    for _ in 0..cfg.max_len {
        if live.is_empty() {
            break;
        }
        let mut candidates: Vec<(f64, TokenId, usize, f64)> = Vec::new();
        for (bi, h) in live.iter().enumerate() {
            let allowed = trie.allowed_next(&h.tokens);
            if allowed.is_empty() {
                continue;
            }
            let scores = scorer.score_next(query, &h.tokens, &allowed)?;
            check_scores(&scores, &allowed)?;
            for &a in &allowed {
                let lp = h.log_prob + scores[&a];
                let rank = if cfg.length_normalize {
                    lp / (h.tokens.len() + 1) as f64
                } else {
                    lp
                };
                candidates.push((rank, a, bi, lp));
            }
        }
        candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

        let mut next_live = Vec::with_capacity(cfg.beam_width);
        for (_, tok, bi, lp) in candidates {
            let mut tokens = live[bi].tokens.clone();
            tokens.push(tok);
            let h = Hyp { tokens, log_prob: lp };
            if tok == EOS {
                finished.push(h);
            } else if next_live.len() < cfg.beam_width {
                next_live.push(h);
            }
        }
        live = next_live;

        if !cfg.length_normalize && finished.len() >= cfg.beam_width {
            // scores only decrease along a path
            let mut scores: Vec<f64> = finished.iter().map(|h| h.log_prob).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let cutoff = scores[cfg.beam_width - 1];
            if live.iter().all(|h| h.log_prob < cutoff) {
                break;
            }
        }
    }

    finished.sort_by(|a, b| {
        b.score(cfg.length_normalize)
            .total_cmp(&a.score(cfg.length_normalize))
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    finished.truncate(cfg.beam_width);
    let ranked = finished
        .into_iter()
        .map(|h| {
            let doc_id = trie
                .complete(&h.tokens)
                .ok_or_else(|| Error::invalid("beam produced a sequence outside the trie"))?
                .to_string();
            Ok(RankedDoc {
                doc_id,
                log_prob: h.log_prob,
                tokens: h.tokens,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DecodeResult {
        query: query.to_string(),
        beam_width: cfg.beam_width,
        ranked,
    })
}

/// Score every docid in the trie under `scorer` and rank them the way
/// beam search ranks its finished hypotheses.
pub fn enumerate_all<S: Scorer + ?Sized>(query: &str, scorer: &S, trie: &DocidTrie) -> Result<Vec<RankedDoc>> {
    let mut all = Vec::new();
    for (doc_id, tokens) in trie.entries() {
        let mut lp = 0.0;
        for i in 0..tokens.len() {
            let allowed = trie.allowed_next(&tokens[..i]);
            let scores = scorer.score_next(query, &tokens[..i], &allowed)?;
            lp += scores[&tokens[i]];
        }
        all.push(RankedDoc {
            doc_id,
            log_prob: lp,
            tokens,
        });
    }
    all.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then_with(|| a.tokens.cmp(&b.tokens)));
    Ok(all)
}
