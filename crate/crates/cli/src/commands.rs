use std::io::Read;
use std::path::{Path, PathBuf};

use serde_json::json;
use wordsel::checkpoint::{self, CheckpointConfig};
use wordsel::dataset::{
    build_pair_set, dataset_stats, format_topics, load_pairs, load_topics, pairs_to_jsonl, synth_generate,
    PairRecord, PairSet, SynthConfig, Topic,
};
use wordsel::eval::{evaluate, BaselineKind, EvalConfig};
use wordsel::model::{ModelConfig, NlExpression, SelectionModel};
use wordsel::numgrad::AdamConfig;
use wordsel::search::{analyze_corpus, load_corpus, load_qrels, Bm25Params, Index, RelevanceJudgments};
use wordsel::textproc::{build_vocab, join_tokens, load_embeddings, Analyzer, EmbeddingTable, OovPolicy};
use wordsel::trainers::{rewrite, train_mle, train_rl, RewardContext, TrainConfig};

use crate::config::FileConfig;
use crate::failure::Failure;
use crate::output::write_atomic;
use crate::{DataArgs, IndexArgs, EvalArgs, RewriteArgs, StatsArgs, SynthArgs, TrainArgs, TrainFlags};

type Res<T> = Result<T, Failure>;

pub struct Ctx {
    pub seed: Option<u64>,
    pub file: FileConfig,
}

impl Ctx {
    fn seed(&self, command: &str) -> Res<u64> {
        self.seed
            .or(self.file.seed)
            .ok_or_else(|| Failure::usage(format!("{command} requires --seed")))
    }
}

fn read_stopwords(path: Option<&Path>) -> Res<Vec<String>> {
    let Some(path) = path else {
        return Ok(Vec::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    let mut words: Vec<String> = text.split_whitespace().map(|w| w.to_lowercase()).collect();
    words.sort();
    words.dedup();
    Ok(words)
}

fn bm25_params(flags_k1: Option<f64>, flags_b: Option<f64>, file: &FileConfig) -> Res<Bm25Params> {
    let d = Bm25Params::default();
    let p = Bm25Params {
        k1: flags_k1.or(file.bm25.k1).unwrap_or(d.k1),
        b: flags_b.or(file.bm25.b).unwrap_or(d.b),
    };
    if !(p.k1 >= 0.0 && (0.0..=1.0).contains(&p.b)) {
        return Err(Failure::usage("bm25 requires k1 >= 0 and b in [0, 1]"));
    }
    Ok(p)
}

struct Data {
    analyzer: Analyzer,
    stopwords: Vec<String>,
}

impl Data {
    fn new(args: &DataArgs, file: &FileConfig) -> Res<Data> {
        let stopwords = read_stopwords(args.stopwords.as_deref().or(file.paths.stopwords.as_deref()))?;
        Ok(Data {
            analyzer: Analyzer::with_stopwords(&stopwords),
            stopwords,
        })
    }
}

fn pair_records(args: &DataArgs, file: &FileConfig) -> Res<Vec<PairRecord>> {
    let pairs = args.pairs.clone().or(file.paths.pairs.clone());
    let topics = args.topics.clone().or(file.paths.topics.clone());
    match (pairs, topics) {
        (Some(p), None) => Ok(load_pairs(&p)?),
        (None, Some(t)) => Ok(load_topics(&t)?.iter().map(Topic::to_pair_record).collect()),
        (Some(_), Some(_)) => Err(Failure::usage("give either --pairs or --topics, not both")),
        (None, None) => Err(Failure::usage("missing --pairs or --topics")),
    }
}

fn embeddings_path(args: &DataArgs, file: &FileConfig) -> Res<PathBuf> {
    args.embeddings
        .clone()
        .or(file.paths.embeddings.clone())
        .ok_or_else(|| Failure::usage("missing --embeddings"))
}

fn load_pair_set(
    records: &[PairRecord],
    analyzer: &Analyzer,
    embeddings: &Path,
    oov: OovPolicy,
) -> Res<(PairSet<f64>, EmbeddingTable)> {
    let analyzed: Vec<_> = records.iter().map(|r| analyzer.analyze(&r.nl)).collect();
    let table = load_embeddings(embeddings, &build_vocab(&analyzed), oov)?;
    let set = build_pair_set(records, analyzer, &table)?;
    Ok((set, table))
}

fn load_index(args: &DataArgs, file: &FileConfig, analyzer: &Analyzer) -> Res<Option<Index>> {
    if let Some(path) = args.index.clone().or(file.paths.index.clone()) {
        let bytes = std::fs::read(&path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
        return Ok(Some(Index::from_bytes(&bytes)?));
    }
    if let Some(path) = args.corpus.clone().or(file.paths.corpus.clone()) {
        let params = bm25_params(args.k1, args.b, file)?;
        let docs = analyze_corpus(&load_corpus(&path)?, analyzer);
        return Ok(Some(Index::build_with(&docs, params)?));
    }
    Ok(None)
}

fn load_judgments(args: &DataArgs, file: &FileConfig) -> Res<Option<RelevanceJudgments>> {
    match args.qrels.clone().or(file.paths.qrels.clone()) {
        Some(p) => Ok(Some(load_qrels(&p)?)),
        None => Ok(None),
    }
}

fn train_config(flags: &TrainFlags, file: &FileConfig, seed: u64) -> TrainConfig {
    let t = &file.train;
    let d = TrainConfig::default();
    let a = AdamConfig::default();
    TrainConfig {
        batch_size: flags.batch_size.or(t.batch_size).unwrap_or(d.batch_size),
        mle_iterations: flags.mle_iterations.or(t.mle_iterations).unwrap_or(d.mle_iterations),
        rl_iterations: flags.rl_iterations.or(t.rl_iterations).unwrap_or(d.rl_iterations),
        adam: AdamConfig {
            lr: flags.adam_lr.or(t.adam_lr).unwrap_or(a.lr),
            beta1: t.adam_beta1.unwrap_or(a.beta1),
            beta2: t.adam_beta2.unwrap_or(a.beta2),
            eps: t.adam_eps.unwrap_or(a.eps),
        },
        sgd_lr: flags.sgd_lr.or(t.sgd_lr).unwrap_or(d.sgd_lr),
        baseline_decay: flags.baseline_decay.or(t.baseline_decay).unwrap_or(d.baseline_decay),
        rl_samples: flags.rl_samples.or(t.rl_samples).unwrap_or(d.rl_samples),
        seed,
    }
}

fn hidden(flags: &TrainFlags, file: &FileConfig) -> usize {
    flags.hidden.or(file.train.hidden).unwrap_or(100)
}

fn rank_depth(args: &DataArgs, file: &FileConfig) -> Res<usize> {
    let d = args.rank_depth.or(file.rank_depth).unwrap_or(1000);
    if d == 0 {
        return Err(Failure::usage("rank depth must be at least 1"));
    }
    Ok(d)
}

fn jsonl(events: &[serde_json::Value]) -> String {
    let mut s = String::new();
    for e in events {
        s.push_str(&e.to_string());
        s.push('\n');
    }
    s
}

pub fn index(ctx: &Ctx, args: &IndexArgs) -> Res<()> {
    let file = &ctx.file;
    let corpus = args
        .corpus
        .clone()
        .or(file.paths.corpus.clone())
        .ok_or_else(|| Failure::usage("missing --corpus"))?;
    let out = args
        .out
        .clone()
        .or(file.paths.index.clone())
        .ok_or_else(|| Failure::usage("missing --out"))?;
    let stopwords = read_stopwords(args.stopwords.as_deref().or(file.paths.stopwords.as_deref()))?;
    let analyzer = Analyzer::with_stopwords(&stopwords);
    let params = bm25_params(args.k1, args.b, file)?;
    let index = Index::build_with(&analyze_corpus(&load_corpus(&corpus)?, &analyzer), params)?;
    write_atomic(&out, &index.to_bytes()?)?;
    println!(
        "indexed {} documents, {} terms, avgdl {:.3} -> {}",
        index.num_docs(),
        index.num_terms(),
        index.avgdl(),
        out.display()
    );
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Smt,
    Rl,
    SmtRl,
}

impl Mode {
    fn parse(s: &str) -> Res<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "smt" => Ok(Mode::Smt),
            "rl" => Ok(Mode::Rl),
            "smt+rl" | "smt-rl" | "smt_rl" => Ok(Mode::SmtRl),
            _ => Err(Failure::usage(format!("unknown mode '{s}' (expected smt, rl or smt+rl)"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Mode::Smt => "smt",
            Mode::Rl => "rl",
            Mode::SmtRl => "smt+rl",
        }
    }
}

pub fn train(ctx: &Ctx, args: &TrainArgs) -> Res<()> {
    let file = &ctx.file;
    let seed = ctx.seed("train")?;
    let mode = Mode::parse(args.mode.as_deref().or(file.train.mode.as_deref()).unwrap_or("smt+rl"))?;
    let out = args
        .out
        .clone()
        .or(file.paths.checkpoint.clone())
        .ok_or_else(|| Failure::usage("missing --out"))?;
    let data = Data::new(&args.data, file)?;
    let records = pair_records(&args.data, file)?;
    let emb_path = embeddings_path(&args.data, file)?;
    let oov = file.oov.unwrap_or_default();
    let (pairs, table) = load_pair_set(&records, &data.analyzer, &emb_path, oov)?;
    let tcfg = train_config(&args.train, file, seed);
    tcfg.validate(pairs.len())?;
    let mcfg = ModelConfig::new(table.dim(), hidden(&args.train, file), seed);

    let needs_rl = mode != Mode::Smt;
    let rl_inputs = if needs_rl {
        let judgments = load_judgments(&args.data, file)?
            .ok_or_else(|| Failure::usage(format!("mode {} requires --qrels", mode.name())))?;
        let index = load_index(&args.data, file, &data.analyzer)?
            .ok_or_else(|| Failure::usage(format!("mode {} requires --corpus or --index", mode.name())))?;
        Some((index, judgments))
    } else {
        None
    };

    let mut model = SelectionModel::<f64>::new(mcfg)?;
    let mut stages = Vec::new();
    let mut events = vec![json!({
        "event": "run",
        "command": "train",
        "mode": mode.name(),
        "seed": seed,
        "pairs": pairs.len(),
        "model": mcfg,
        "train": tcfg,
    })];
    if mode != Mode::Rl {
        let curve = train_mle(&mut model, &pairs, &tcfg)?;
        events.push(json!({"event": "stage", "stage": "smt", "fold": null, "epochs": curve.len(), "curve": curve}));
        stages.push("smt".to_string());
    }
    if let Some((index, judgments)) = &rl_inputs {
        let reward = RewardContext {
            rank_depth: rank_depth(&args.data, file)?,
            ..RewardContext::new(index, judgments)
        };
        reward.check_topics(pairs.pairs.iter().map(|p| p.topic_id.as_str()))?;
        let curve = train_rl(&mut model, &pairs, &reward, &tcfg)?;
        events.push(json!({"event": "stage", "stage": "rl", "fold": null, "epochs": curve.len(), "curve": curve}));
        stages.push("rl".to_string());
    }

    let ck = CheckpointConfig {
        model: mcfg,
        stages,
        train: Some(tcfg),
        embeddings: Some(emb_path.to_string_lossy().into_owned()),
        oov,
        stopwords: data.stopwords.clone(),
    };
    let bytes = checkpoint::to_bytes(&model, &ck)?;
    events.push(json!({"event": "checkpoint", "path": out.to_string_lossy(), "config_hash": ck.hash()}));
    let manifest = args.manifest.clone().unwrap_or_else(|| {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.jsonl");
        out.with_file_name(name)
    });
    write_atomic(&out, &bytes)?;
    write_atomic(&manifest, jsonl(&events).as_bytes())?;
    println!("{} checkpoint -> {}", mode.name(), out.display());
    Ok(())
}

pub fn evaluate_cmd(ctx: &Ctx, args: &EvalArgs) -> Res<()> {
    let file = &ctx.file;
    let seed = ctx.seed("evaluate")?;
    let kinds: Vec<BaselineKind> = match args.baselines.clone().or(file.eval.baselines.clone()) {
        Some(list) => list
            .iter()
            .flat_map(|s| s.split(','))
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<BaselineKind>())
            .collect::<Result<_, _>>()?,
        None => BaselineKind::ALL.to_vec(),
    };
    if kinds.is_empty() {
        return Err(Failure::usage("no baselines selected"));
    }
    let data = Data::new(&args.data, file)?;
    let records = pair_records(&args.data, file)?;
    let emb_path = embeddings_path(&args.data, file)?;
    let (pairs, _) = load_pair_set(&records, &data.analyzer, &emb_path, file.oov.unwrap_or_default())?;
    let judgments = load_judgments(&args.data, file)?.ok_or_else(|| Failure::usage("evaluate requires --qrels"))?;
    let index = load_index(&args.data, file, &data.analyzer)?
        .ok_or_else(|| Failure::usage("evaluate requires --corpus or --index"))?;
    let cfg = EvalConfig {
        folds: args.folds.or(file.eval.folds).unwrap_or(10),
        hidden: hidden(&args.train, file),
        rank_depth: rank_depth(&args.data, file)?,
        train: train_config(&args.train, file, seed),
        seed,
    };
    let ctx_r = RewardContext::new(&index, &judgments);
    let (report, folds) = evaluate(&pairs, &ctx_r, &kinds, &cfg)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = args.out_dir.clone().or(file.paths.report_dir.clone()) {
        let mut events = vec![json!({
            "event": "run",
            "command": "evaluate",
            "seed": seed,
            "baselines": kinds.iter().map(|k| k.label()).collect::<Vec<_>>(),
            "config": cfg,
        })];
        for f in &folds {
            for (stage, curve) in [("smt", &f.mle_curve), ("smt+rl", &f.rl_curve), ("rl", &f.rl_scratch_curve)] {
                if !curve.is_empty() {
                    events.push(json!({"event": "stage", "stage": stage, "fold": f.fold, "epochs": curve.len(), "curve": curve}));
                }
            }
        }
        let full = json!({ "report": report, "per_topic": folds });
        write_atomic(&dir.join("report.tsv"), report.to_tsv().as_bytes())?;
        write_atomic(&dir.join("report.txt"), text.as_bytes())?;
        write_atomic(
            &dir.join("report.json"),
            (serde_json::to_string_pretty(&full).map_err(|e| Failure::data(e.to_string()))? + "\n").as_bytes(),
        )?;
        write_atomic(&dir.join("manifest.jsonl"), jsonl(&events).as_bytes())?;
    }
    Ok(())
}

pub fn rewrite_cmd(_ctx: &Ctx, args: &RewriteArgs) -> Res<()> {
    let text = if args.text.is_empty() || args.text == ["-"] {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| Failure::data(format!("cannot read standard input: {e}")))?;
        s
    } else {
        args.text.join(" ")
    };
    let bytes = std::fs::read(&args.checkpoint)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", args.checkpoint.display())))?;
    let (model, ck) = checkpoint::from_bytes::<f64>(&bytes)?;
    let analyzer = Analyzer::with_stopwords(&ck.stopwords);
    let tokens = analyzer.analyze(&text);
    if tokens.is_empty() {
        return Err(Failure::usage("rewrite needs a non-empty natural-language input"));
    }
    let emb_path = args
        .embeddings
        .clone()
        .or(ck.embeddings.as_ref().map(PathBuf::from))
        .ok_or_else(|| Failure::usage("missing --embeddings"))?;
    let table = load_embeddings(&emb_path, &build_vocab([&tokens]), ck.oov)?;
    if table.dim() != model.embed_dim() {
        return Err(Failure::data(format!(
            "embedding dimension {} does not match checkpoint dimension {}",
            table.dim(),
            model.embed_dim()
        )));
    }
    let x = NlExpression::embed(tokens, &table)?;
    println!("{}", join_tokens(&rewrite(&model, &x)?));
    Ok(())
}

pub fn stats(ctx: &Ctx, args: &StatsArgs) -> Res<()> {
    let file = &ctx.file;
    let data = Data::new(&args.data, file)?;
    let records = pair_records(&args.data, file)?;
    let analyzed: Vec<_> = records
        .iter()
        .map(|r| (data.analyzer.analyze(&r.nl), data.analyzer.analyze(&r.query)))
        .collect();
    let s = dataset_stats(&analyzed);
    println!("pairs\t{}", s.pair_count);
    println!("avg_nl_length\t{:.3}", s.avg_nl_length);
    println!("avg_duplicate_words\t{:.3}", s.avg_duplicate_words);
    Ok(())
}

pub fn synth(ctx: &Ctx, args: &SynthArgs) -> Res<()> {
    let file = &ctx.file;
    let seed = ctx.seed("synth")?;
    let s = &file.synth;
    let cfg = SynthConfig {
        seed,
        n_docs: args.docs.or(s.docs).unwrap_or(200),
        n_pairs: args.pairs.or(s.pairs).unwrap_or(60),
        vocab_size: args.vocab.or(s.vocab).unwrap_or(1500),
        embed_dim: args.dim.or(s.dim).unwrap_or(16),
    };
    let out = args
        .out_dir
        .clone()
        .ok_or_else(|| Failure::usage("missing --out-dir"))?;
    let data = synth_generate(&cfg)?;
    let mut corpus = String::new();
    for r in &data.corpus {
        corpus.push_str(&serde_json::to_string(r).map_err(|e| Failure::data(e.to_string()))?);
        corpus.push('\n');
    }
    let topics: Vec<Topic> = data
        .pairs
        .iter()
        .map(|p| Topic {
            topic_id: p.topic_id.clone(),
            title: p.query.clone(),
            description: p.nl.clone(),
            narrative: None,
        })
        .collect();
    let mut vectors = Vec::new();
    data.embeddings
        .write_text(&mut vectors)
        .map_err(|e| Failure::data(e.to_string()))?;
    write_atomic(&out.join("corpus.jsonl"), corpus.as_bytes())?;
    write_atomic(&out.join("pairs.jsonl"), pairs_to_jsonl(&data.pairs).as_bytes())?;
    write_atomic(&out.join("topics.txt"), format_topics(&topics).as_bytes())?;
    write_atomic(&out.join("qrels.txt"), data.judgments.to_qrels_string().as_bytes())?;
    write_atomic(&out.join("embeddings.txt"), &vectors)?;
    println!(
        "wrote {} documents, {} pairs, {}-dimensional vectors -> {}",
        data.corpus.len(),
        data.pairs.len(),
        cfg.embed_dim,
        out.display()
    );
    Ok(())
}
