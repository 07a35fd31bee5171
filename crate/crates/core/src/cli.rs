//! Command-line driver. Every stage reads and writes plain files in a work
//! directory, so stages can be run one at a time or all at once through
//! `pipeline` with identical outputs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cluster::{assign_numeric_paths, build_tree, paths_from_tsv, paths_to_tsv, ClusterParams, ClusterTree};
use crate::corpus::{embed_corpus, write_file, Corpus, EmbeddingMatrix};
use crate::decode::{ModelConfig, NgramScorerModel};
use crate::eval::{
    score_rankings, synth_corpus, synth_extractor, training_pairs, EvalReport, ExperimentParams, Mode, QuerySet,
    SchemeIndex, SchemeRow, SynthConfig,
};
use crate::forge::{
    c2t_docid_map, load_docids, render_baseline_schemes, render_with_labels, save_docids, DocidMap, LabelConfig,
    NodeLabels, Scheme,
};
use crate::priors::{extract_table, ExtractorConfig, KeywordTable};
use crate::smooth::{
    smooth_ids, verify_topology, MockRewriter, NodePhrase, ReplayRewriter, Rewriter, SmoothOptions, TopologyReport,
};
use crate::text::read_word_list;
use crate::trie::{DocidTrie, Tokenizer};

/// All pipeline parameters in one JSON document.
///
/// Relative paths are resolved against the directory of the config file.
/// `synth.seed` is replaced by `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Corpus JSONL; a synthetic corpus is generated when absent.
    pub corpus: Option<PathBuf>,
    /// Query JSONL for training and evaluation.
    pub queries: Option<PathBuf>,
    /// Precomputed embeddings; hashed term frequencies when absent.
    pub embeddings: Option<PathBuf>,
    pub synth: SynthConfig,
    pub embed_dim: usize,
    pub k: usize,
    pub c: usize,
    pub max_iters: usize,
    pub top_k: usize,
    pub intra_sep: String,
    pub level_sep: String,
    pub ancestor_dedup: bool,
    pub extractor: ExtractorConfig,
    pub stopwords_file: Option<PathBuf>,
    pub blocklist_file: Option<PathBuf>,
    pub schemes: Vec<Scheme>,
    /// Adds the smoothed identifiers to the evaluated schemes.
    pub smoothing: bool,
    /// Replay-rewriter file; the mock rewriter is used when absent.
    pub replay: Option<PathBuf>,
    pub beam_width: usize,
    pub model: ModelConfig,
    pub lexical_weight: f64,
    pub train_fraction: f64,
    pub mode: Mode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let exp = ExperimentParams::default();
        let labels = LabelConfig::default();
        let cluster = ClusterParams::default();
        PipelineConfig {
            seed: exp.seed,
            corpus: None,
            queries: None,
            embeddings: None,
            synth: SynthConfig::default(),
            embed_dim: exp.embed_dim,
            k: cluster.k,
            c: cluster.c,
            max_iters: cluster.max_iters,
            top_k: labels.top_k,
            intra_sep: labels.intra_sep,
            level_sep: labels.level_sep,
            ancestor_dedup: labels.ancestor_dedup,
            extractor: synth_extractor(),
            stopwords_file: None,
            blocklist_file: None,
            schemes: vec![Scheme::Atomic, Scheme::Codebook, Scheme::Title, Scheme::C2t],
            smoothing: true,
            replay: None,
            beam_width: exp.beam_width,
            model: exp.model,
            lexical_weight: exp.lexical_weight,
            train_fraction: exp.train_fraction,
            mode: Mode::Supervised,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.corpus,
            &mut cfg.queries,
            &mut cfg.embeddings,
            &mut cfg.stopwords_file,
            &mut cfg.blocklist_file,
            &mut cfg.replay,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.synth.seed = self.seed;
        self
    }

    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            k: self.k,
            c: self.c,
            seed: self.seed,
            max_iters: self.max_iters,
        }
    }

    pub fn label_config(&self) -> LabelConfig {
        LabelConfig {
            top_k: self.top_k,
            intra_sep: self.intra_sep.clone(),
            level_sep: self.level_sep.clone(),
            ancestor_dedup: self.ancestor_dedup,
        }
    }

    /// Extractor with the word-list files merged in.
    pub fn extractor_config(&self) -> anyhow::Result<ExtractorConfig> {
        let mut ex = self.extractor.clone();
        if let Some(p) = &self.stopwords_file {
            ex.stopwords.extend(read_word_list(p)?);
        }
        if let Some(p) = &self.blocklist_file {
            ex.blocklist.extend(read_word_list(p)?);
        }
        Ok(ex)
    }

    pub fn experiment(&self) -> anyhow::Result<ExperimentParams> {
        Ok(ExperimentParams {
            seed: self.seed,
            cluster: self.cluster_params(),
            embed_dim: self.embed_dim,
            extractor: self.extractor_config()?,
            labels: self.label_config(),
            beam_width: self.beam_width,
            model: self.model,
            lexical_weight: self.lexical_weight,
            train_fraction: self.train_fraction,
        })
    }

    /// Schemes in evaluation order, smoothed last when enabled.
    pub fn all_schemes(&self) -> Vec<Scheme> {
        let mut out: Vec<Scheme> = Vec::new();
        for &s in &self.schemes {
            if !out.contains(&s) {
                out.push(s);
            }
        }
        if self.smoothing && !out.contains(&Scheme::C2tSmoothed) {
            out.push(Scheme::C2tSmoothed);
        }
        out
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.cluster_params().validate()?;
        self.label_config().validate()?;
        self.extractor.validate()?;
        self.model.validate()?;
        if self.beam_width < 1 {
            bail!("beam_width must be >= 1");
        }
        if self.embed_dim < 1 {
            bail!("embed_dim must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.lexical_weight) {
            bail!("lexical_weight must lie in [0, 1]");
        }
        if self.schemes.is_empty() && !self.smoothing {
            bail!("no schemes selected");
        }
        Ok(())
    }
}

/// File names inside the work directory.
pub struct Work {
    pub dir: PathBuf,
}

impl Work {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Work { dir: dir.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn corpus(&self) -> PathBuf {
        self.path("corpus.jsonl")
    }
    pub fn queries(&self) -> PathBuf {
        self.path("queries.jsonl")
    }
    pub fn train_queries(&self) -> PathBuf {
        self.path("queries.train.jsonl")
    }
    pub fn test_queries(&self) -> PathBuf {
        self.path("queries.test.jsonl")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.path("embeddings.jsonl")
    }
    pub fn tree(&self) -> PathBuf {
        self.path("tree.json")
    }
    pub fn paths(&self) -> PathBuf {
        self.path("paths.tsv")
    }
    pub fn keywords(&self) -> PathBuf {
        self.path("keywords.jsonl")
    }
    pub fn labels(&self) -> PathBuf {
        self.path("labels.tsv")
    }
    pub fn smoothing(&self) -> PathBuf {
        self.path("smoothing.json")
    }
    pub fn docids(&self, s: Scheme) -> PathBuf {
        self.path(&format!("docids.{s}.tsv"))
    }
    pub fn tokenizer(&self, s: Scheme) -> PathBuf {
        self.path(&format!("tokenizer.{s}.json"))
    }
    pub fn vocab(&self, s: Scheme) -> PathBuf {
        self.path(&format!("vocab.{s}.tsv"))
    }
    pub fn trie(&self, s: Scheme) -> PathBuf {
        self.path(&format!("trie.{s}.json"))
    }
    pub fn model(&self, s: Scheme) -> PathBuf {
        self.path(&format!("model.{s}.json"))
    }
    pub fn decoded(&self, s: Scheme) -> PathBuf {
        self.path(&format!("decode.{s}.jsonl"))
    }
    pub fn report_json(&self) -> PathBuf {
        self.path("report.json")
    }
    pub fn report_table(&self) -> PathBuf {
        self.path("report.txt")
    }
}

fn need(path: &Path, producer: &str) -> anyhow::Result<()> {
    if !path.exists() {
        bail!("missing input {} (run `{producer}` first)", path.display());
    }
    Ok(())
}

fn read(path: &Path, producer: &str) -> anyhow::Result<String> {
    need(path, producer)?;
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_corpus(w: &Work) -> anyhow::Result<Corpus> {
    need(&w.corpus(), "ingest")?;
    Ok(Corpus::ingest_jsonl(&w.corpus())?)
}

fn load_tree(w: &Work) -> anyhow::Result<ClusterTree> {
    Ok(ClusterTree::from_json(&read(&w.tree(), "cluster")?)?)
}

fn load_table(w: &Work) -> anyhow::Result<KeywordTable> {
    need(&w.keywords(), "extract")?;
    Ok(KeywordTable::load(&w.keywords())?)
}

pub fn stage_synth(cfg: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let (corpus, queries) = synth_corpus(&cfg.synth)?;
    corpus.write_jsonl(&out.join("corpus.jsonl"))?;
    queries.save(&out.join("queries.jsonl"))?;
    Ok(())
}

/// Load or generate the corpus and queries, split the queries and embed
/// every document.
pub fn stage_ingest(cfg: &PipelineConfig, w: &Work) -> anyhow::Result<()> {
    let (corpus, queries) = match &cfg.corpus {
        Some(p) => {
            let corpus = Corpus::ingest_jsonl(p)?;
            let queries = match &cfg.queries {
                Some(q) => QuerySet::load(q)?,
                None => QuerySet::default(),
            };
            (corpus, queries)
        }
        None => synth_corpus(&cfg.synth)?,
    };
    queries.check_targets(&corpus)?;
    let (train, test) = queries.split(cfg.seed, cfg.train_fraction)?;
    let emb = match &cfg.embeddings {
        Some(p) => {
            let emb = EmbeddingMatrix::load_jsonl(p)?;
            emb.covers(&corpus)?;
            emb
        }
        None => embed_corpus(&corpus, cfg.embed_dim, cfg.seed)?,
    };
    corpus.write_jsonl(&w.corpus())?;
    queries.save(&w.queries())?;
    train.save(&w.train_queries())?;
    test.save(&w.test_queries())?;
    write_file(&w.embeddings(), emb.to_jsonl().as_bytes())?;
    Ok(())
}

pub fn stage_cluster(cfg: &PipelineConfig, w: &Work) -> anyhow::Result<()> {
    let corpus = load_corpus(w)?;
    need(&w.embeddings(), "ingest")?;
    let emb = EmbeddingMatrix::load_jsonl(&w.embeddings())?;
    let params = cfg.cluster_params();
    let tree = build_tree(&emb, &corpus, &params)?;
    tree.validate(&params)?;
    tree.save(&w.tree())?;
    write_file(&w.paths(), paths_to_tsv(&assign_numeric_paths(&tree)).as_bytes())?;
    Ok(())
}

pub fn stage_extract(cfg: &PipelineConfig, w: &Work) -> anyhow::Result<()> {
    let corpus = load_corpus(w)?;
    extract_table(&corpus, &cfg.extractor_config()?)?.save(&w.keywords())?;
    Ok(())
}

struct Forged {
    tree: ClusterTree,
    labels: NodeLabels,
    c2t: std::collections::BTreeMap<String, crate::forge::C2tId>,
}

fn forge_c2t(cfg: &PipelineConfig, w: &Work) -> anyhow::Result<Forged> {
    let tree = load_tree(w)?;
    let paths = paths_from_tsv(&read(&w.paths(), "cluster")?)?;
    let table = load_table(w)?;
    let lc = cfg.label_config();
    let labels = NodeLabels::build(&tree, &table, &lc)?;
    let c2t = render_with_labels(&tree, &paths, &table, &labels, &lc)?;
    Ok(Forged { tree, labels, c2t })
}

/// Render and save the docid map of each requested scheme.
pub fn stage_forge(cfg: &PipelineConfig, w: &Work, schemes: &[Scheme]) -> anyhow::Result<()> {
    if schemes.contains(&Scheme::C2tSmoothed) {
        bail!("c2t_smoothed identifiers are produced by `smooth`");
    }
    let corpus = load_corpus(w)?;
    let paths = paths_from_tsv(&read(&w.paths(), "cluster")?)?;
    let baselines = render_baseline_schemes(&corpus, &paths)?;
    for &s in schemes {
        let map = match s {
            Scheme::Atomic => baselines.atomic.clone(),
            Scheme::Codebook => baselines.codebook.clone(),
            Scheme::Title => baselines.title.clone(),
            Scheme::C2t => {
                let f = forge_c2t(cfg, w)?;
                let mut out = String::new();
                for &id in f.tree.nodes.keys().filter(|id| **id != f.tree.root) {
                    let _ = writeln!(out, "{id}\t{}", f.labels.label(id).rendered);
                }
                write_file(&w.labels(), out.as_bytes())?;
                c2t_docid_map(&f.c2t)
            }
            Scheme::C2tSmoothed => unreachable!(),
        };
        save_docids(&map, &w.docids(s))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SmoothingRecord<'a> {
    rewriter: &'a str,
    topology: &'a TopologyReport,
    node_phrases: &'a std::collections::BTreeMap<u32, NodePhrase>,
}

/// Smooth the C2T identifiers and refuse output that changes the trie's
/// branch structure.
pub fn stage_smooth(cfg: &PipelineConfig, w: &Work) -> anyhow::Result<()> {
    let f = forge_c2t(cfg, w)?;
    let lc = cfg.label_config();
    let replay;
    let (rw, name): (&dyn Rewriter, &str) = match &cfg.replay {
        Some(p) => {
            replay = ReplayRewriter::load(p)?;
            (&replay, "replay")
        }
        None => (&MockRewriter, "mock"),
    };
    let smoothed = smooth_ids(&f.c2t, &f.tree, &f.labels, &lc, rw, SmoothOptions::default())?;
    let original = SchemeIndex::new(Scheme::C2t, c2t_docid_map(&f.c2t), &lc)?;
    let after = SchemeIndex::new(Scheme::C2tSmoothed, smoothed.docids.clone(), &lc)?;
    let report = verify_topology(&original.trie, &after.trie, &smoothed.spans, &f.tree);
    let rec = SmoothingRecord {
        rewriter: name,
        topology: &report,
        node_phrases: &smoothed.node_phrases,
    };
    write_file(&w.smoothing(), (serde_json::to_string_pretty(&rec)? + "\n").as_bytes())?;
    if !report.ok {
        let first = report.violations.first().map(ToString::to_string).unwrap_or_default();
        bail!("{} topology violation(s), first: {first}", report.violations.len());
    }
    save_docids(&smoothed.docids, &w.docids(Scheme::C2tSmoothed))?;
    Ok(())
}

fn producer(s: Scheme) -> &'static str {
    if s == Scheme::C2tSmoothed {
        "smooth"
    } else {
        "forge"
    }
}

pub fn stage_build_trie(cfg: &PipelineConfig, w: &Work, schemes: &[Scheme]) -> anyhow::Result<()> {
    for &s in schemes {
        need(&w.docids(s), producer(s))?;
        let index = SchemeIndex::new(s, load_docids(&w.docids(s))?, &cfg.label_config())
            .with_context(|| format!("scheme {s}"))?;
        write_file(&w.tokenizer(s), index.tokenizer.to_json().as_bytes())?;
        write_file(&w.vocab(s), index.tokenizer.vocab_tsv().as_bytes())?;
        index.trie.save(&w.trie(s))?;
    }
    Ok(())
}

fn load_index(w: &Work, s: Scheme) -> anyhow::Result<SchemeIndex> {
    need(&w.docids(s), producer(s))?;
    let docids: DocidMap = load_docids(&w.docids(s))?;
    let tokenizer = Tokenizer::from_json(&read(&w.tokenizer(s), "build-trie")?)?;
    need(&w.trie(s), "build-trie")?;
    let trie = DocidTrie::load(&w.trie(s))?;
    Ok(SchemeIndex {
        scheme: s,
        docids,
        tokenizer,
        trie,
    })
}

pub fn stage_train(cfg: &PipelineConfig, w: &Work, schemes: &[Scheme]) -> anyhow::Result<()> {
    let corpus = load_corpus(w)?;
    need(&w.train_queries(), "ingest")?;
    let train = QuerySet::load(&w.train_queries())?;
    let pairs = training_pairs(&corpus, &train, cfg.mode);
    let params = cfg.experiment()?;
    for &s in schemes {
        let index = load_index(w, s)?;
        index.train(&pairs, &params)?.save(&w.model(s))?;
    }
    Ok(())
}

fn decode_lines(cfg: &PipelineConfig, w: &Work, s: Scheme, queries: &[String]) -> anyhow::Result<String> {
    let index = load_index(w, s)?;
    need(&w.model(s), "train")?;
    let model = NgramScorerModel::load(&w.model(s))?;
    let params = cfg.experiment()?;
    let mut out = String::new();
    for q in queries {
        out.push_str(&index.decode(&model, q, &params)?.to_json_line());
        out.push('\n');
    }
    Ok(out)
}

/// Decode the held-out queries of every scheme and write the report.
pub fn stage_eval(cfg: &PipelineConfig, w: &Work) -> anyhow::Result<EvalReport> {
    need(&w.test_queries(), "ingest")?;
    let test = QuerySet::load(&w.test_queries())?;
    if test.is_empty() {
        bail!("no held-out queries to evaluate");
    }
    let queries: Vec<String> = test.entries.iter().map(|q| q.query.clone()).collect();
    let mut rows = Vec::new();
    for s in cfg.all_schemes() {
        let lines = decode_lines(cfg, w, s, &queries).with_context(|| format!("scheme {s}"))?;
        write_file(&w.decoded(s), lines.as_bytes())?;
        let log = lines
            .lines()
            .zip(&test.entries)
            .map(|(line, q)| {
                let (_, ranked) = crate::decode::parse_decode_line(line)?;
                Ok((ranked.into_iter().map(|(d, _)| d).collect::<Vec<_>>(), q.doc_id.clone()))
            })
            .collect::<crate::Result<Vec<_>>>()?;
        rows.push(SchemeRow::from_metrics(s, &score_rankings(&log)));
    }
    let report = EvalReport {
        mode: cfg.mode,
        seed: cfg.seed,
        queries: test.len(),
        config: cfg.experiment()?,
        rows,
    };
    write_file(&w.report_json(), report.to_json().as_bytes())?;
    write_file(&w.report_table(), report.to_table().as_bytes())?;
    Ok(report)
}

pub fn run_pipeline(cfg: &PipelineConfig, w: &Work) -> anyhow::Result<EvalReport> {
    let schemes = cfg.all_schemes();
    let forged: Vec<Scheme> = schemes.iter().copied().filter(|s| *s != Scheme::C2tSmoothed).collect();
    stage_ingest(cfg, w).context("stage ingest")?;
    stage_cluster(cfg, w).context("stage cluster")?;
    stage_extract(cfg, w).context("stage extract")?;
    stage_forge(cfg, w, &forged).context("stage forge")?;
    if schemes.contains(&Scheme::C2tSmoothed) {
        stage_smooth(cfg, w).context("stage smooth")?;
    }
    stage_build_trie(cfg, w, &schemes).context("stage build-trie")?;
    stage_train(cfg, w, &schemes).context("stage train")?;
    stage_eval(cfg, w).context("stage eval")
}

#[derive(Debug, Parser)]
#[command(name = "c2tid", version, about = "Textual docids from clustering codebooks, with trie-constrained retrieval")]
pub struct Cli {
    /// Pipeline config (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory holding stage inputs and outputs.
    #[arg(long, global = true, default_value = "work")]
    pub work: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the resolved config.
    Config,
    /// Write a synthetic corpus.jsonl and queries.jsonl.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Load the corpus and queries, split the queries, embed documents.
    Ingest,
    /// Hierarchical k-means tree and numeric paths.
    Cluster,
    /// Per-document keyword priors.
    Extract,
    /// Docid maps for the given scheme, or for every configured one.
    Forge {
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Smoothed C2T identifiers with a topology check.
    Smooth,
    /// Tokenizer, vocabulary and trie per scheme.
    BuildTrie {
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Fit the n-gram scorer per scheme.
    Train {
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Rank docids for one query or a query file.
    Decode {
        #[arg(long, default_value = "c2t")]
        scheme: Scheme,
        #[arg(long, conflicts_with = "queries")]
        query: Option<String>,
        /// Query JSONL.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode held-out queries and write the report.
    Eval,
    /// Every stage in order.
    Pipeline,
}

fn pick(cfg: &PipelineConfig, scheme: Option<Scheme>) -> Vec<Scheme> {
    scheme.map(|s| vec![s]).unwrap_or_else(|| cfg.all_schemes())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    }
    .with_seed(cli.seed);
    cfg.validate().context("invalid config")?;
    let w = Work::new(&cli.work);
    match cli.command {
        Command::Config => print!("{}", serde_json::to_string_pretty(&cfg)? + "\n"),
        Command::Synth { out } => stage_synth(&cfg, &out).context("stage synth")?,
        Command::Ingest => stage_ingest(&cfg, &w).context("stage ingest")?,
        Command::Cluster => stage_cluster(&cfg, &w).context("stage cluster")?,
        Command::Extract => stage_extract(&cfg, &w).context("stage extract")?,
        Command::Forge { scheme } => {
            let schemes = match scheme {
                Some(s) => vec![s],
                None => cfg.all_schemes().into_iter().filter(|s| *s != Scheme::C2tSmoothed).collect(),
            };
            stage_forge(&cfg, &w, &schemes).context("stage forge")?
        }
        Command::Smooth => stage_smooth(&cfg, &w).context("stage smooth")?,
        Command::BuildTrie { scheme } => stage_build_trie(&cfg, &w, &pick(&cfg, scheme)).context("stage build-trie")?,
        Command::Train { scheme } => stage_train(&cfg, &w, &pick(&cfg, scheme)).context("stage train")?,
        Command::Decode {
            scheme,
            query,
            queries,
            out,
        } => {
            let qs: Vec<String> = match (query, queries) {
                (Some(q), _) => vec![q],
                (None, Some(p)) => QuerySet::load(&p)
                    .context("stage decode")?
                    .entries
                    .into_iter()
                    .map(|q| q.query)
                    .collect(),
                (None, None) => bail!("stage decode: pass --query or --queries"),
            };
            let lines = decode_lines(&cfg, &w, scheme, &qs).context("stage decode")?;
            match out {
                Some(p) => write_file(&p, lines.as_bytes()).context("stage decode")?,
                None => print!("{lines}"),
            }
        }
        Command::Eval => print!("{}", stage_eval(&cfg, &w).context("stage eval")?.to_table()),
        Command::Pipeline => print!("{}", run_pipeline(&cfg, &w)?.to_table()),
    }
    Ok(())
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn main() -> i32 {
    main_with(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_parameters() {
        let cfg = PipelineConfig::default();
        assert_eq!((cfg.k, cfg.c, cfg.top_k), (30, 30, 3));
        assert_eq!(cfg.beam_width, 20);
        assert_eq!(cfg.all_schemes().last(), Some(&Scheme::C2tSmoothed));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<PipelineConfig>(r#"{"k": 10, "colour": 1}"#).unwrap_err();
        assert!(err.to_string().contains("colour"));
        let cfg: PipelineConfig = serde_json::from_str(r#"{"k": 10}"#).unwrap();
        assert_eq!(cfg.k, 10);
        assert_eq!(cfg.c, 30);
    }

    #[test]
    fn seed_override_reaches_synth() {
        let cfg = PipelineConfig::default().with_seed(Some(3));
        assert_eq!((cfg.seed, cfg.synth.seed, cfg.cluster_params().seed), (3, 3, 3));
    }

    #[test]
    fn scheme_list_deduplicates() {
        let cfg = PipelineConfig {
            schemes: vec![Scheme::C2t, Scheme::C2t, Scheme::Atomic],
            smoothing: false,
            ..PipelineConfig::default()
        };
        assert_eq!(cfg.all_schemes(), vec![Scheme::C2t, Scheme::Atomic]);
    }

    #[test]
    fn missing_stage_input_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let w = Work::new(dir.path());
        let err = stage_cluster(&PipelineConfig::default(), &w).unwrap_err();
        assert!(format!("{err:#}").contains("run `ingest` first"));
    }

    #[test]
    fn bad_arguments_exit_nonzero() {
        assert_eq!(main_with(["c2tid", "frobnicate"]), 2);
        assert_eq!(main_with(["c2tid", "--help"]), 0);
    }
}
