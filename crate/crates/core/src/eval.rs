//! Synthetic corpora, scheme-vs-scheme retrieval experiments and Hits@K /
//! MRR@K.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{assign_numeric_paths, build_tree, ClusterParams, ClusterTree, NumericPath};
use crate::corpus::{embed_corpus, write_file, Corpus, Document};
use crate::decode::{beam_search, train_ngram, BeamConfig, DecodeResult, LexicalScorer, ModelConfig, NgramScorerModel};
use crate::error::{Error, Result};
use crate::forge::{
    c2t_docid_map, render_baseline_schemes, render_with_labels, C2tId, DocidMap, DocidSchemeSet, LabelConfig,
    NodeLabels, Scheme,
};
use crate::priors::{extract_table, ExtractorConfig, KeywordTable, Strategy};
use crate::smooth::{smooth_ids, smoothed_tokenizer, MockRewriter, SmoothOptions, SmoothedIds};
use crate::trie::{build_trie, DocidTrie, Tokenizer, TokenizerMode};

pub fn hits_at_k<S: AsRef<str>>(ranked: &[S], target: &str, k: usize) -> u32 {
    u32::from(ranked.iter().take(k).any(|d| d.as_ref() == target))
}

pub fn mrr_at_k<S: AsRef<str>>(ranked: &[S], target: &str, k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .position(|d| d.as_ref() == target)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Hits@5, Hits@20 and MRR@20 as fractions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub queries: usize,
    pub hits_at_5: f64,
    pub hits_at_20: f64,
    pub mrr_at_20: f64,
}

/// Metrics over `(ranking, target)` pairs.
pub fn score_rankings<S: AsRef<str>>(log: &[(Vec<S>, String)]) -> Metrics {
    let n = log.len();
    if n == 0 {
        return Metrics::default();
    }
    let (mut h5, mut h20, mut rr) = (0u32, 0u32, 0.0);
    for (ranked, target) in log {
        h5 += hits_at_k(ranked, target, 5);
        h20 += hits_at_k(ranked, target, 20);
        rr += mrr_at_k(ranked, target, 20);
    }
    Metrics {
        queries: n,
        hits_at_5: f64::from(h5) / n as f64,
        hits_at_20: f64::from(h20) / n as f64,
        mrr_at_20: rr / n as f64,
    }
}

/// Percentage with one decimal.
pub fn percent(x: f64) -> f64 {
    (x * 1000.0).round() / 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Supervised,
    ZeroShot,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Mode::Supervised),
            "zero_shot" => Ok(Mode::ZeroShot),
            _ => Err(Error::invalid(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub query: String,
    #[serde(rename = "target_doc_id")]
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuerySet {
    pub entries: Vec<Query>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every target must be a corpus document.
    pub fn check_targets(&self, corpus: &Corpus) -> Result<()> {
        match self.entries.iter().find(|q| !corpus.contains(&q.doc_id)) {
            Some(q) => Err(Error::UnknownDocument(q.doc_id.clone())),
            None => Ok(()),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for q in &self.entries {
            out.push_str(&serde_json::to_string(q).expect("query serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl_str(raw: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(QuerySet { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        QuerySet::from_jsonl_str(&raw)
    }

    /// Seeded shuffle, then the first `train_fraction` goes to training.
    pub fn split(&self, seed: u64, train_fraction: f64) -> Result<(QuerySet, QuerySet)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::invalid(format!("train_fraction must be in [0, 1], got {train_fraction}")));
        }
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (self.entries.len() as f64 * train_fraction).round() as usize;
        let pick = |ix: &[usize]| {
            let mut v: Vec<usize> = ix.to_vec();
            v.sort_unstable();
            QuerySet {
                entries: v.into_iter().map(|i| self.entries[i].clone()).collect(),
            }
        };
        Ok((pick(&idx[..cut]), pick(&idx[cut..])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_docs: usize,
    pub n_topics: usize,
    pub subtopics_per_topic: usize,
    pub vocab_size: usize,
    pub queries_per_doc: usize,
    pub doc_len: usize,
    /// Entity words available to each subtopic.
    pub entity_pool: usize,
    /// Topic, subtopic and entity shares of body words; the rest is
    /// background.
    pub text_mix: [f64; 3],
    /// Same shares for query words after the leading entity word.
    pub query_mix: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_docs: 500,
            n_topics: 20,
            subtopics_per_topic: 3,
            vocab_size: 3000,
            queries_per_doc: 5,
            doc_len: 40,
            entity_pool: 20,
            text_mix: [0.35, 0.35, 0.02],
            query_mix: [0.35, 0.35, 0.1],
        }
    }
}

const TOPIC_WORDS: usize = 15;
const SUBTOPIC_WORDS: usize = 10;
const OWN_WORDS: usize = 3;
const MIN_BACKGROUND: usize = 50;

impl SynthConfig {
    fn n_subtopics(&self) -> usize {
        self.n_topics * self.subtopics_per_topic
    }

    fn structured_words(&self) -> usize {
        self.n_topics * TOPIC_WORDS + self.n_subtopics() * (SUBTOPIC_WORDS + self.entity_pool)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_topics < 2 || self.n_docs < self.n_topics {
            return Err(Error::invalid("need n_docs >= n_topics >= 2"));
        }
        if self.subtopics_per_topic < 1 || self.doc_len < 1 || self.queries_per_doc < 1 {
            return Err(Error::invalid("subtopics_per_topic, doc_len and queries_per_doc must be >= 1"));
        }
        if self.entity_pool < OWN_WORDS {
            return Err(Error::invalid(format!("entity_pool must be >= {OWN_WORDS}")));
        }
        for mix in [&self.text_mix, &self.query_mix] {
            if mix.iter().any(|x| !(0.0..=1.0).contains(x)) || mix.iter().sum::<f64>() > 1.0 {
                return Err(Error::invalid(format!("mixture {mix:?} is not a sub-distribution")));
            }
        }
        let need = self.structured_words() + MIN_BACKGROUND;
        if self.vocab_size < need {
            return Err(Error::invalid(format!(
                "vocab_size {} too small for {} topics, need at least {need}",
                self.vocab_size, self.n_topics
            )));
        }
        Ok(())
    }
}

/// Distinct pronounceable pseudo-words.
fn pseudo_words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    const C: &[u8] = b"bcdfghjklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syll = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syll {
            w.push(*C.choose(rng).expect("non-empty") as char);
            w.push(*V.choose(rng).expect("non-empty") as char);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

struct Subtopic {
    topic: usize,
    words: Vec<String>,
    pool: Vec<String>,
}

/// Generate a corpus over a two-level topic hierarchy with queries.
///
/// Documents mix words of their topic, subtopic, a few entity words of
/// their own and background vocabulary. Metadata lists the topic and
/// subtopic labels as categories and the entity words as tags.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<(Corpus, QuerySet)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = pseudo_words(&mut rng, cfg.vocab_size);
    let mut words = vocab.into_iter();
    let mut take = |n: usize| -> Vec<String> { words.by_ref().take(n).collect() };

    let topics: Vec<Vec<String>> = (0..cfg.n_topics).map(|_| take(TOPIC_WORDS)).collect();
    let subtopics: Vec<Subtopic> = (0..cfg.n_subtopics())
        .map(|s| Subtopic {
            topic: s / cfg.subtopics_per_topic,
            words: take(SUBTOPIC_WORDS),
            pool: take(cfg.entity_pool),
        })
        .collect();
    let background = take(cfg.vocab_size - cfg.structured_words());

    let width = (cfg.n_docs - 1).to_string().len();
    let mut docs = Vec::with_capacity(cfg.n_docs);
    let mut queries = Vec::new();
    for i in 0..cfg.n_docs {
        let sub = &subtopics[rng.random_range(0..subtopics.len())];
        let topic = &topics[sub.topic];
        let own: Vec<String> = sub.pool.choose_multiple(&mut rng, OWN_WORDS).cloned().collect();
        let draw = |rng: &mut ChaCha8Rng, mix: &[f64; 3]| -> String {
            let r: f64 = rng.random();
            let list = if r < mix[0] {
                topic
            } else if r < mix[0] + mix[1] {
                &sub.words
            } else if r < mix[0] + mix[1] + mix[2] {
                &own
            } else {
                &background
            };
            list.choose(rng).expect("non-empty").clone()
        };
        let text: Vec<String> = (0..cfg.doc_len).map(|_| draw(&mut rng, &cfg.text_mix)).collect();

        let doc_id = format!("doc{i:0width$}");
        let title = format!("{} {} {}", own[0], own[1], sub.words[0]);
        let noise = background.choose(&mut rng).expect("non-empty").clone();
        let tags = [&own[0], &own[0], &own[0], &own[1], &own[1], &own[2], &noise];
        docs.push(
            Document::new(doc_id.clone(), title, text.join(" "))
                .with_field("categories", [topic[0].as_str(), sub.words[0].as_str(), "All pages"])
                .with_field("tags", tags.iter().map(|s| s.as_str())),
        );

        for _ in 0..cfg.queries_per_doc {
            let len = rng.random_range(4..=6);
            let mut q = vec![own.choose(&mut rng).expect("non-empty").clone()];
            while q.len() < len {
                q.push(draw(&mut rng, &cfg.query_mix));
            }
            queries.push(Query {
                query: q.join(" "),
                doc_id: doc_id.clone(),
            });
        }
    }
    Ok((Corpus::new(docs)?, QuerySet { entries: queries }))
}

/// Extractor settings matching the synthetic metadata.
pub fn synth_extractor() -> ExtractorConfig {
    let mut cfg = ExtractorConfig::new(Strategy::Category, &["categories", "tags"]);
    cfg.blocklist.insert("all pages".into());
    cfg
}

/// Text a document contributes as its own training query.
pub fn doc_text(doc: &Document) -> String {
    doc.text.clone()
}

/// Training pairs: every document's text, plus the training queries when
/// supervised.
pub fn training_pairs(corpus: &Corpus, train: &QuerySet, mode: Mode) -> Vec<(String, String)> {
    let mut pairs: Vec<(String, String)> = corpus.iter().map(|d| (doc_text(d), d.doc_id.clone())).collect();
    if mode == Mode::Supervised {
        pairs.extend(train.entries.iter().map(|q| (q.query.clone(), q.doc_id.clone())));
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentParams {
    pub seed: u64,
    pub cluster: ClusterParams,
    pub embed_dim: usize,
    pub extractor: ExtractorConfig,
    pub labels: LabelConfig,
    pub beam_width: usize,
    pub model: ModelConfig,
    pub lexical_weight: f64,
    pub train_fraction: f64,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            seed: 7,
            cluster: ClusterParams::default(),
            embed_dim: 256,
            extractor: synth_extractor(),
            labels: LabelConfig::default(),
            beam_width: 20,
            model: ModelConfig::default(),
            lexical_weight: 0.2,
            train_fraction: 0.8,
        }
    }
}

/// Everything derived from the corpus that the schemes share.
#[derive(Debug, Clone)]
pub struct Built {
    pub tree: ClusterTree,
    pub paths: BTreeMap<String, NumericPath>,
    pub table: KeywordTable,
    pub labels: NodeLabels,
    pub c2t: BTreeMap<String, C2tId>,
    pub baselines: DocidSchemeSet,
}

impl Built {
    pub fn new(corpus: &Corpus, params: &ExperimentParams) -> Result<Self> {
        let emb = embed_corpus(corpus, params.embed_dim, params.seed)?;
        let cluster = ClusterParams {
            seed: params.seed,
            ..params.cluster
        };
        let tree = build_tree(&emb, corpus, &cluster)?;
        let paths = assign_numeric_paths(&tree);
        let table = extract_table(corpus, &params.extractor)?;
        let labels = NodeLabels::build(&tree, &table, &params.labels)?;
        let c2t = render_with_labels(&tree, &paths, &table, &labels, &params.labels)?;
        let baselines = render_baseline_schemes(corpus, &paths)?;
        Ok(Built {
            tree,
            paths,
            table,
            labels,
            c2t,
            baselines,
        })
    }

    pub fn smoothed(&self, params: &ExperimentParams) -> Result<SmoothedIds> {
        smooth_ids(&self.c2t, &self.tree, &self.labels, &params.labels, &MockRewriter, SmoothOptions::default())
    }

    pub fn docids(&self, scheme: Scheme, params: &ExperimentParams) -> Result<DocidMap> {
        Ok(match scheme {
            Scheme::Atomic => self.baselines.atomic.clone(),
            Scheme::Codebook => self.baselines.codebook.clone(),
            Scheme::Title => self.baselines.title.clone(),
            Scheme::C2t => c2t_docid_map(&self.c2t),
            Scheme::C2tSmoothed => self.smoothed(params)?.docids,
        })
    }
}

/// Tokenizer each scheme's docids are decoded with.
pub fn scheme_tokenizer(scheme: Scheme, docids: &DocidMap, labels: &LabelConfig) -> Result<Tokenizer> {
    let values = docids.values().map(String::as_str);
    match scheme {
        Scheme::Atomic | Scheme::Codebook => Tokenizer::build(TokenizerMode::Word, ".", ".", values),
        Scheme::Title => Tokenizer::build(TokenizerMode::Word, " ", " ", values),
        Scheme::C2t => Tokenizer::build(TokenizerMode::Word, &labels.intra_sep, &labels.level_sep, values),
        Scheme::C2tSmoothed => smoothed_tokenizer(docids),
    }
}

/// Docids, tokenizer and trie of one scheme.
#[derive(Debug, Clone)]
pub struct SchemeIndex {
    pub scheme: Scheme,
    pub docids: DocidMap,
    pub tokenizer: Tokenizer,
    pub trie: DocidTrie,
}

impl SchemeIndex {
    pub fn new(scheme: Scheme, docids: DocidMap, labels: &LabelConfig) -> Result<Self> {
        let tokenizer = scheme_tokenizer(scheme, &docids, labels)?;
        let trie = build_trie(&docids, &tokenizer)?;
        Ok(SchemeIndex {
            scheme,
            docids,
            tokenizer,
            trie,
        })
    }

    pub fn train(&self, pairs: &[(String, String)], params: &ExperimentParams) -> Result<NgramScorerModel> {
        train_ngram(pairs, &self.docids, &self.tokenizer, params.model)
    }

    pub fn decode(&self, model: &NgramScorerModel, query: &str, params: &ExperimentParams) -> Result<DecodeResult> {
        let scorer = LexicalScorer::new(model, &self.tokenizer, params.lexical_weight)?;
        let cfg = BeamConfig::new(params.beam_width, self.trie.max_depth());
        beam_search(query, &scorer, &self.trie, cfg)
    }

    /// Ranked doc_ids for one query.
    pub fn retrieve(&self, model: &NgramScorerModel, query: &str, params: &ExperimentParams) -> Result<Vec<String>> {
        Ok(self
            .decode(model, query, params)?
            .ranked
            .into_iter()
            .map(|r| r.doc_id)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRow {
    pub scheme: Scheme,
    pub hits_at_5: f64,
    pub hits_at_20: f64,
    pub mrr_at_20: f64,
}

impl SchemeRow {
    pub fn from_metrics(scheme: Scheme, m: &Metrics) -> Self {
        SchemeRow {
            scheme,
            hits_at_5: percent(m.hits_at_5),
            hits_at_20: percent(m.hits_at_20),
            mrr_at_20: percent(m.mrr_at_20),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub seed: u64,
    pub queries: usize,
    pub config: ExperimentParams,
    pub rows: Vec<SchemeRow>,
}

impl EvalReport {
    pub fn row(&self, scheme: Scheme) -> Option<&SchemeRow> {
        self.rows.iter().find(|r| r.scheme == scheme)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        Ok(serde_json::from_str(raw)?)
    }

    /// Aligned table with one row per scheme.
    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.scheme.display_name().len())
            .chain(["Method".len()])
            .max()
            .unwrap_or(6);
        let mut out = String::new();
        let mode = match self.mode {
            Mode::Supervised => "supervised",
            Mode::ZeroShot => "zero-shot",
        };
        let _ = writeln!(out, "# {mode}, seed {}, {} test queries", self.seed, self.queries);
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>8}  {:>7}", "Method", "Hits@5", "Hits@20", "MRR@20");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.1}  {:>8.1}  {:>7.1}",
                r.scheme.display_name(),
                r.hits_at_5,
                r.hits_at_20,
                r.mrr_at_20
            );
        }
        out
    }
}

/// Run every scheme through index, training, decoding and scoring.
pub fn run_experiment(
    corpus: &Corpus,
    queries: &QuerySet,
    schemes: &[Scheme],
    params: &ExperimentParams,
    mode: Mode,
) -> Result<EvalReport> {
    queries.check_targets(corpus)?;
    let (train, test) = queries.split(params.seed, params.train_fraction)?;
    let built = Built::new(corpus, params)?;
    let pairs = training_pairs(corpus, &train, mode);
    let mut rows = Vec::with_capacity(schemes.len());
    for &scheme in schemes {
        let index = SchemeIndex::new(scheme, built.docids(scheme, params)?, &params.labels)?;
        let model = index.train(&pairs, params)?;
        let log = test
            .entries
            .iter()
            .map(|q| Ok((index.retrieve(&model, &q.query, params)?, q.doc_id.clone())))
            .collect::<Result<Vec<_>>>()?;
        rows.push(SchemeRow::from_metrics(scheme, &score_rankings(&log)));
    }
    Ok(EvalReport {
        mode,
        seed: params.seed,
        queries: test.len(),
        config: params.clone(),
        rows,
    })
}
