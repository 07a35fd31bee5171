//! One PASS/FAIL line per acceptance criterion. Oracles here are written
//! independently of the library code they check.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use c2tid::cluster::{assign_numeric_paths, build_tree, paths_to_tsv, ClusterParams, ClusterTree};
use c2tid::corpus::embed_corpus;
use c2tid::decode::{beam_search, BeamConfig, LexicalScorer, Scorer};
use c2tid::eval::{
    hits_at_k, mrr_at_k, percent, run_experiment, score_rankings, synth_corpus, training_pairs, Built, EvalReport,
    ExperimentParams, Mode, SchemeIndex, SchemeRow, SynthConfig,
};
use c2tid::forge::{c2t_docid_map, select_top_k, DocidMap, Scheme};
use c2tid::smooth::verify_topology;
use c2tid::trie::{build_trie, TokenId, Tokenizer, TokenizerMode};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn seeded(seed: u64) -> (SynthConfig, ExperimentParams) {
    let synth = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let params = ExperimentParams {
        seed,
        ..ExperimentParams::default()
    };
    (synth, params)
}

fn tree_violations(tree: &ClusterTree, k: usize, c: usize) -> Vec<String> {
    let mut bad = Vec::new();
    for node in tree.nodes.values() {
        if node.children.is_empty() && node.members.len() > c {
            bad.push(format!("leaf {} has {} members", node.node_id, node.members.len()));
        }
        if node.children.len() > k {
            bad.push(format!("node {} has {} children", node.node_id, node.children.len()));
        }
    }
    bad
}

fn criterion_1() -> Outcome {
    let synth = SynthConfig {
        n_docs: 900,
        ..SynthConfig::default()
    };
    let (corpus, _) = synth_corpus(&synth).map_err(|e| e.to_string())?;
    let params = ClusterParams {
        k: 30,
        c: 30,
        seed: 7,
        ..ClusterParams::default()
    };
    let start = Instant::now();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let emb = embed_corpus(&corpus, 256, 7).map_err(|e| e.to_string())?;
        let tree = build_tree(&emb, &corpus, &params).map_err(|e| e.to_string())?;
        let paths = assign_numeric_paths(&tree);
        runs.push((tree, paths));
    }
    let elapsed = start.elapsed() / 2;
    let (tree, paths) = &runs[0];
    let bad = tree_violations(tree, 30, 30);
    let distinct: BTreeSet<String> = paths.values().map(|p| p.to_string()).collect();
    let same = tree.to_json() == runs[1].0.to_json() && paths_to_tsv(paths) == paths_to_tsv(&runs[1].1);
    let leaves = tree.nodes.values().filter(|n| n.children.is_empty()).count();
    check(
        bad.is_empty() && distinct.len() == 900 && paths.len() == 900 && same && elapsed < Duration::from_secs(30),
        format!(
            "{} nodes, {leaves} leaves, {} unique paths, violations {bad:?}, identical reruns {same}, {:.2}s per run",
            tree.nodes.len(),
            distinct.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let words: Vec<String> = (0..40).map(|i| format!("w{i:02}")).collect();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..25);
        let counts: BTreeMap<String, u64> = (0..n)
            .map(|_| (words.choose(&mut rng).unwrap().clone(), rng.random_range(1..8)))
            .collect();
        let k = rng.random_range(1..6);
        let mut all: Vec<(u64, String)> = counts.iter().map(|(w, c)| (*c, w.clone())).collect();
        all.sort_by(|a, b| (std::cmp::Reverse(a.0), &a.1).cmp(&(std::cmp::Reverse(b.0), &b.1)));
        let expect: Vec<String> = all.into_iter().take(k).map(|(_, w)| w).collect();
        if select_top_k(&counts, k).ok() != Some(expect) {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches in 1000 maps"))
}

fn c2t_index(built: &Built, params: &ExperimentParams) -> (DocidMap, Tokenizer) {
    let docids = c2t_docid_map(&built.c2t);
    let tok = Tokenizer::build(
        TokenizerMode::Word,
        &params.labels.intra_sep,
        &params.labels.level_sep,
        docids.values().map(String::as_str),
    )
    .unwrap();
    (docids, tok)
}

fn criterion_3() -> Outcome {
    let (synth, params) = seeded(7);
    let (corpus, _) = synth_corpus(&synth).map_err(|e| e.to_string())?;
    let built = Built::new(&corpus, &params).map_err(|e| e.to_string())?;
    let (docids, tok) = c2t_index(&built, &params);
    let trie = build_trie(&docids, &tok).map_err(|e| e.to_string())?;
    let seqs: Vec<(String, Vec<TokenId>)> = docids
        .iter()
        .map(|(d, s)| (d.clone(), tok.tokenize(s).unwrap()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut dead = 0;
    for i in 0..1000 {
        let (_, base) = seqs.choose(&mut rng).unwrap();
        let mut prefix = base[..rng.random_range(0..=base.len())].to_vec();
        if i % 10 == 0 && !prefix.is_empty() {
            let last = prefix.len() - 1;
            prefix[last] = rng.random_range(3..tok.vocab_size() as TokenId);
        }
        let expect: BTreeSet<TokenId> = seqs
            .iter()
            .filter(|(_, s)| s.len() > prefix.len() && s.starts_with(&prefix))
            .map(|(_, s)| s[prefix.len()])
            .collect();
        if expect.is_empty() {
            dead += 1;
        }
        let got: BTreeSet<TokenId> = trie.allowed_next(&prefix).into_iter().collect();
        if got != expect {
            mismatches += 1;
        }
    }
    let round_trip = seqs
        .iter()
        .filter(|(d, s)| trie.complete(s) == Some(d.as_str()) && tok.detokenize(s) == docids[d])
        .count();
    check(
        mismatches == 0 && round_trip == docids.len(),
        format!(
            "{mismatches} mismatches in 1000 prefixes ({dead} with no continuation), {round_trip}/{} complete() round-trips",
            docids.len()
        ),
    )
}

fn criterion_4() -> Outcome {
    let (synth, params) = seeded(7);
    let (corpus, queries) = synth_corpus(&synth).map_err(|e| e.to_string())?;
    let (train, _) = queries.split(params.seed, params.train_fraction).map_err(|e| e.to_string())?;
    let built = Built::new(&corpus, &params).map_err(|e| e.to_string())?;
    let pairs = training_pairs(&corpus, &train, Mode::Supervised);
    let mut decodes = 0;
    let mut invalid = 0;
    let mut entries = 0;
    for scheme in [Scheme::Atomic, Scheme::Codebook, Scheme::C2t, Scheme::C2tSmoothed] {
        let docids = built.docids(scheme, &params).map_err(|e| e.to_string())?;
        let index = SchemeIndex::new(scheme, docids, &params.labels).map_err(|e| e.to_string())?;
        let valid: BTreeMap<Vec<TokenId>, &str> = index
            .docids
            .iter()
            .map(|(d, s)| (index.tokenizer.tokenize(s).unwrap(), d.as_str()))
            .collect();
        let model = index.train(&pairs, &params).map_err(|e| e.to_string())?;
        for q in &queries.entries {
            let res = index.decode(&model, &q.query, &params).map_err(|e| e.to_string())?;
            decodes += 1;
            for r in &res.ranked {
                entries += 1;
                if valid.get(&r.tokens) != Some(&r.doc_id.as_str()) {
                    invalid += 1;
                }
            }
        }
    }
    check(
        decodes >= 10_000 && invalid == 0,
        format!("{decodes} decodes, {entries} ranked sequences, {invalid} invalid"),
    )
}

fn criterion_5() -> Outcome {
    let synth = SynthConfig {
        n_docs: 50,
        n_topics: 5,
        subtopics_per_topic: 2,
        vocab_size: 1200,
        queries_per_doc: 2,
        ..SynthConfig::default()
    };
    let params = ExperimentParams {
        cluster: ClusterParams {
            k: 3,
            c: 5,
            ..ClusterParams::default()
        },
        beam_width: 50,
        ..ExperimentParams::default()
    };
    let (corpus, queries) = synth_corpus(&synth).map_err(|e| e.to_string())?;
    let built = Built::new(&corpus, &params).map_err(|e| e.to_string())?;
    let index = SchemeIndex::new(Scheme::C2t, built.docids(Scheme::C2t, &params).unwrap(), &params.labels)
        .map_err(|e| e.to_string())?;
    let pairs = training_pairs(&corpus, &queries, Mode::Supervised);
    let model = index.train(&pairs, &params).map_err(|e| e.to_string())?;
    let scorer = LexicalScorer::new(&model, &index.tokenizer, params.lexical_weight).map_err(|e| e.to_string())?;
    let seqs: Vec<(String, Vec<TokenId>)> = index
        .docids
        .iter()
        .map(|(d, s)| (d.clone(), index.tokenizer.tokenize(s).unwrap()))
        .collect();
    let allowed = |prefix: &[TokenId]| -> Vec<TokenId> {
        let set: BTreeSet<TokenId> = seqs
            .iter()
            .filter(|(_, s)| s.len() > prefix.len() && s.starts_with(prefix))
            .map(|(_, s)| s[prefix.len()])
            .collect();
        set.into_iter().collect()
    };
    let mut differ = 0;
    let n_queries = 40;
    for q in queries.entries.iter().take(n_queries) {
        let mut brute: Vec<(f64, &Vec<TokenId>, &str)> = seqs
            .iter()
            .map(|(d, s)| {
                let lp: f64 = (0..s.len())
                    .map(|i| scorer.score_next(&q.query, &s[..i], &allowed(&s[..i])).unwrap()[&s[i]])
                    .sum();
                (lp, s, d.as_str())
            })
            .collect();
        brute.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let res = beam_search(
            &q.query,
            &scorer,
            &index.trie,
            BeamConfig::new(params.beam_width, index.trie.max_depth()),
        )
        .map_err(|e| e.to_string())?;
        let same = res.ranked.len() == brute.len()
            && res
                .ranked
                .iter()
                .zip(&brute)
                .all(|(r, b)| r.doc_id == b.2 && (r.log_prob - b.0).abs() < 1e-9);
        if !same {
            differ += 1;
        }
    }
    check(
        differ == 0 && seqs.len() == 50,
        format!("{} docs, {differ}/{n_queries} queries ranked differently from enumeration", seqs.len()),
    )
}

fn criterion_6() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for n_docs in [500, 900] {
        let synth = SynthConfig {
            n_docs,
            ..SynthConfig::default()
        };
        let params = ExperimentParams::default();
        let (corpus, _) = synth_corpus(&synth).map_err(|e| e.to_string())?;
        let built = Built::new(&corpus, &params).map_err(|e| e.to_string())?;
        let ids: Vec<_> = built.c2t.values().collect();
        // every segment prefix (final segment removed) <-> the node it ends at
        let mut fwd: BTreeMap<Vec<&str>, BTreeSet<u32>> = BTreeMap::new();
        let mut back: BTreeMap<u32, BTreeSet<Vec<&str>>> = BTreeMap::new();
        let mut not_prefix = 0;
        for id in &ids {
            let stripped: Vec<&str> = id.segments[..id.segments.len() - 1].iter().map(String::as_str).collect();
            if !id.full.starts_with(&stripped.join(&params.labels.level_sep)) {
                not_prefix += 1;
            }
            for j in 1..=stripped.len() {
                fwd.entry(stripped[..j].to_vec()).or_default().insert(id.nodes[j - 1]);
                back.entry(id.nodes[j - 1]).or_default().insert(stripped[..j].to_vec());
            }
        }
        let non_root: BTreeSet<u32> = built.tree.nodes.keys().copied().filter(|n| *n != built.tree.root).collect();
        let bijective = fwd.values().all(|s| s.len() == 1)
            && back.values().all(|s| s.len() == 1)
            && back.keys().copied().collect::<BTreeSet<_>>() == non_root;
        let mut iff_fail = 0u64;
        let mut pairs = 0u64;
        for (a, x) in ids.iter().enumerate() {
            for y in &ids[a + 1..] {
                let depth = x.nodes.len().min(y.nodes.len());
                for j in 1..=depth {
                    pairs += 1;
                    let seg = x.segments[..j] == y.segments[..j];
                    let num = x.numeric_path.node_labels()[..j] == y.numeric_path.node_labels()[..j];
                    if seg != num {
                        iff_fail += 1;
                    }
                }
            }
        }
        ok &= bijective && iff_fail == 0 && not_prefix == 0;
        notes.push(format!(
            "{n_docs} docs: {} nodes bijective {bijective}, {iff_fail}/{pairs} prefix-iff failures",
            non_root.len()
        ));
    }
    check(ok, notes.join("; "))
}

struct SeedRun {
    seed: u64,
    supervised: EvalReport,
    zero_shot: EvalReport,
    elapsed: Duration,
    topology_ok: bool,
    unique: bool,
}

const SCHEMES: [Scheme; 4] = [Scheme::Atomic, Scheme::Codebook, Scheme::C2t, Scheme::C2tSmoothed];

fn run_seed(seed: u64) -> Result<SeedRun, String> {
    let (synth, params) = seeded(seed);
    let start = Instant::now();
    let (corpus, queries) = synth_corpus(&synth).map_err(|e| e.to_string())?;
    let supervised = run_experiment(&corpus, &queries, &SCHEMES, &params, Mode::Supervised).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let zero_shot = run_experiment(&corpus, &queries, &SCHEMES, &params, Mode::ZeroShot).map_err(|e| e.to_string())?;
    let built = Built::new(&corpus, &params).map_err(|e| e.to_string())?;
    let smoothed = built.smoothed(&params).map_err(|e| e.to_string())?;
    let original = SchemeIndex::new(Scheme::C2t, c2t_docid_map(&built.c2t), &params.labels).map_err(|e| e.to_string())?;
    let after =
        SchemeIndex::new(Scheme::C2tSmoothed, smoothed.docids.clone(), &params.labels).map_err(|e| e.to_string())?;
    let topology = verify_topology(&original.trie, &after.trie, &smoothed.spans, &built.tree);
    let distinct: BTreeSet<&String> = smoothed.docids.values().collect();
    Ok(SeedRun {
        seed,
        supervised,
        zero_shot,
        elapsed,
        topology_ok: topology.ok,
        unique: distinct.len() == corpus.len(),
    })
}

fn h5(r: &EvalReport, s: Scheme) -> f64 {
    r.row(s).map(|row: &SchemeRow| row.hits_at_5).unwrap_or(f64::NAN)
}

fn seed_protocol(runs: &[SeedRun], holds: impl Fn(&SeedRun) -> bool) -> (bool, usize) {
    let fixed = runs.iter().find(|r| r.seed == 7).map(&holds).unwrap_or(false);
    (fixed, runs.iter().filter(|r| holds(r)).count())
}

fn criterion_7(runs: &[SeedRun]) -> Outcome {
    let holds = |r: &SeedRun| {
        let s = &r.supervised;
        h5(s, Scheme::C2t) > h5(s, Scheme::Codebook) && h5(s, Scheme::Codebook) > h5(s, Scheme::Atomic)
    };
    let (fixed, n) = seed_protocol(runs, holds);
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap_or_default();
    let s7 = &runs.iter().find(|r| r.seed == 7).unwrap().supervised;
    check(
        fixed && n >= 8 && slowest < Duration::from_secs(120),
        format!(
            "seed 7 Hits@5 c2t {:.1} > codebook {:.1} > atomic {:.1}; ordering holds on {n}/10 seeds; slowest seed {:.1}s",
            h5(s7, Scheme::C2t),
            h5(s7, Scheme::Codebook),
            h5(s7, Scheme::Atomic),
            slowest.as_secs_f64()
        ),
    )
}

fn criterion_8(runs: &[SeedRun]) -> Outcome {
    let holds = |r: &SeedRun| {
        let z = &r.zero_shot;
        h5(z, Scheme::C2t) > h5(z, Scheme::Atomic) && h5(z, Scheme::C2t) >= h5(z, Scheme::Codebook)
    };
    let (fixed, n) = seed_protocol(runs, holds);
    let z7 = &runs.iter().find(|r| r.seed == 7).unwrap().zero_shot;
    check(
        fixed && n >= 8,
        format!(
            "seed 7 zero-shot Hits@5 c2t {:.1}, codebook {:.1}, atomic {:.1}; ordering holds on {n}/10 seeds",
            h5(z7, Scheme::C2t),
            h5(z7, Scheme::Codebook),
            h5(z7, Scheme::Atomic)
        ),
    )
}

fn criterion_9(runs: &[SeedRun]) -> Outcome {
    let topology = runs.iter().all(|r| r.topology_ok);
    let unique = runs.iter().all(|r| r.unique);
    let holds = |r: &SeedRun| h5(&r.supervised, Scheme::C2tSmoothed) >= h5(&r.supervised, Scheme::C2t) - 2.0;
    let (fixed, n) = seed_protocol(runs, holds);
    let gaps: Vec<String> = runs
        .iter()
        .map(|r| format!("{:+.1}", h5(&r.supervised, Scheme::C2tSmoothed) - h5(&r.supervised, Scheme::C2t)))
        .collect();
    check(
        topology && unique && fixed && n >= 8,
        format!(
            "topology ok on all {} corpora {topology}, unique {unique}; smoothed minus c2t Hits@5 per seed [{}], within 2.0 on {n}/10",
            runs.len(),
            gaps.join(", ")
        ),
    )
}

fn criterion_10() -> Outcome {
    let ranks: Vec<String> = (1..=25).map(|i| format!("d{i}")).collect();
    let log = vec![
        (ranks[..3].to_vec(), "d2".to_string()),
        (ranks.clone(), "d21".to_string()),
        (ranks.clone(), "d4".to_string()),
        (ranks.clone(), "x".to_string()),
    ];
    let m = score_rankings(&log);
    let singles = hits_at_k(&ranks, "d5", 5) == 1
        && hits_at_k(&ranks, "d6", 5) == 0
        && mrr_at_k(&ranks, "d2", 20) == 0.5
        && mrr_at_k(&ranks, "d21", 20) == 0.0
        && mrr_at_k(&ranks, "d1", 20) == 1.0;
    let agg = m.hits_at_5 == 0.5 && m.hits_at_20 == 0.5 && m.mrr_at_20 == 0.1875;
    let pct = (percent(m.hits_at_5), percent(m.mrr_at_20));
    check(
        singles && agg && pct == (50.0, 18.8),
        format!(
            "hits@5 {} hits@20 {} mrr@20 {} (percent {:?})",
            m.hits_at_5, m.hits_at_20, m.mrr_at_20, pct
        ),
    )
}

fn main() {
    let start = Instant::now();
    let results: Vec<(usize, Outcome)> = std::thread::scope(|s| {
        let singles: Vec<(usize, std::thread::ScopedJoinHandle<'_, Outcome>)> = vec![
            (1, s.spawn(criterion_1)),
            (2, s.spawn(criterion_2)),
            (3, s.spawn(criterion_3)),
            (4, s.spawn(criterion_4)),
            (5, s.spawn(criterion_5)),
            (6, s.spawn(criterion_6)),
            (10, s.spawn(criterion_10)),
        ];
        let seeds: Vec<_> = (0..10u64).map(|seed| s.spawn(move || run_seed(seed))).collect();
        let mut out: Vec<(usize, Outcome)> = singles
            .into_iter()
            .map(|(i, h)| (i, h.join().unwrap_or_else(|_| Err("panicked".into()))))
            .collect();
        let runs: Result<Vec<SeedRun>, String> = seeds
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("panicked".into())))
            .collect();
        match runs {
            Ok(runs) => {
                out.push((7, criterion_7(&runs)));
                out.push((8, criterion_8(&runs)));
                out.push((9, criterion_9(&runs)));
            }
            Err(e) => {
                for i in [7, 8, 9] {
                    out.push((i, Err(e.clone())));
                }
            }
        }
        out
    });
    let mut results = results;
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (i, r) in &results {
        match r {
            Ok(d) => println!("criterion {i:>2}: PASS  {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {i:>2}: FAIL  {d}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
