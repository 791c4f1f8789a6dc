use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wordsel::checkpoint;
use wordsel::dataset::{load_pairs, load_topics, project_query};
use wordsel::search::{load_corpus, load_qrels, Index};
use wordsel::textproc::Analyzer;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wordsel"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout: {}\nstderr: {}", o.status.code(), stdout(o), stderr(o));
}

fn error_line(o: &Output) -> serde_json::Value {
    let line = stderr(o).lines().last().unwrap_or_default().to_string();
    serde_json::from_str(&line).unwrap_or_else(|e| panic!("stderr is not a JSON line ({e}): {line}"))
}

fn synth(dir: &Path, seed: &str) {
    assert_ok(&run(&[
        "--seed", seed, "synth", "--out-dir", s(dir), "--docs", "40", "--pairs", "12", "--vocab", "300", "--dim", "8",
    ]));
}

struct Synth {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Synth {
    fn new() -> Synth {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("data");
        synth(&dir, "5");
        Synth { _tmp: tmp, dir }
    }

    fn path(&self, name: &str) -> String {
        s(&self.dir.join(name)).to_string()
    }
}

const TINY_TRAIN: [&str; 8] = ["--hidden", "4", "--batch-size", "4", "--mle-iterations", "2", "--rl-iterations", "2"];

#[test]
fn index_round_trips_and_rebuilds_identically() {
    let d = Synth::new();
    let (a, b) = (d.dir.join("a.idx"), d.dir.join("b.idx"));
    assert_ok(&run(&["index", "--corpus", &d.path("corpus.jsonl"), "--out", s(&a)]));
    assert_ok(&run(&["index", "--corpus", &d.path("corpus.jsonl"), "--out", s(&b)]));
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    let index = Index::from_bytes(&bytes).unwrap();
    assert_eq!(index.num_docs(), load_corpus(&d.dir.join("corpus.jsonl")).unwrap().len());
    assert_eq!(index.to_bytes().unwrap(), bytes);
}

#[test]
fn duplicate_doc_id_is_rejected_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c.jsonl");
    fs::write(
        &corpus,
        "{\"id\":\"d1\",\"text\":\"alpha beta\"}\n{\"id\":\"dupe7\",\"text\":\"gamma\"}\n{\"id\":\"dupe7\",\"text\":\"delta\"}\n",
    )
    .unwrap();
    let out = tmp.path().join("i.idx");
    let o = run(&["index", "--corpus", s(&corpus), "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(error_line(&o)["message"].as_str().unwrap().contains("dupe7"));
    assert!(!out.exists());
}

#[test]
fn corrupt_index_is_a_data_error() {
    let d = Synth::new();
    let idx = d.dir.join("bad.idx");
    fs::write(&idx, b"{\"not\": \"an index\"").unwrap();
    let o = run(&[
        "--seed", "1", "train", "--mode", "rl", "--pairs", &d.path("pairs.jsonl"), "--embeddings", &d.path("embeddings.txt"),
        "--qrels", &d.path("qrels.txt"), "--index", s(&idx), "--out", s(&d.dir.join("m.ckpt")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(error_line(&o)["code"], 3);
}

#[test]
fn train_smt_writes_a_loadable_checkpoint() {
    let d = Synth::new();
    let ckpt = d.dir.join("smt.ckpt");
    let (pairs, emb) = (d.path("pairs.jsonl"), d.path("embeddings.txt"));
    let mut args = vec!["--seed", "3", "train", "--mode", "smt", "--pairs", &pairs, "--embeddings", &emb, "--out", s(&ckpt)];
    args.extend(TINY_TRAIN);
    assert_ok(&run(&args));
    let (model, cfg) = checkpoint::from_bytes::<f64>(&fs::read(&ckpt).unwrap()).unwrap();
    assert_eq!(cfg.stages, vec!["smt".to_string()]);
    assert_eq!(model.embed_dim(), 8);
}

#[test]
fn rl_without_qrels_is_a_usage_error() {
    let d = Synth::new();
    let o = run(&[
        "--seed", "3", "train", "--mode", "rl", "--pairs", &d.path("pairs.jsonl"), "--embeddings", &d.path("embeddings.txt"),
        "--corpus", &d.path("corpus.jsonl"), "--out", s(&d.dir.join("rl.ckpt")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "usage");
}

#[test]
fn smt_rl_manifest_records_default_epoch_counts() {
    let d = Synth::new();
    let ckpt = d.dir.join("full.ckpt");
    assert_ok(&run(&[
        "--seed", "9", "train", "--pairs", &d.path("pairs.jsonl"), "--embeddings", &d.path("embeddings.txt"),
        "--qrels", &d.path("qrels.txt"), "--corpus", &d.path("corpus.jsonl"), "--hidden", "4", "--out", s(&ckpt),
    ]));
    let manifest = fs::read_to_string(d.dir.join("full.ckpt.manifest.jsonl")).unwrap();
    let stages: Vec<(String, u64)> = manifest
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["event"] == "stage")
        .map(|v| (v["stage"].as_str().unwrap().to_string(), v["epochs"].as_u64().unwrap()))
        .collect();
    assert_eq!(stages, vec![("smt".to_string(), 100), ("rl".to_string(), 1000)]);
    let (_, cfg) = checkpoint::from_bytes::<f64>(&fs::read(&ckpt).unwrap()).unwrap();
    assert_eq!(cfg.stages, vec!["smt".to_string(), "rl".to_string()]);
}

fn eval_args<'a>(d: &'a Synth, out: &'a str) -> Vec<String> {
    let mut v: Vec<String> = [
        "--seed", "4", "evaluate", "--pairs", &d.path("pairs.jsonl"), "--embeddings", &d.path("embeddings.txt"),
        "--qrels", &d.path("qrels.txt"), "--corpus", &d.path("corpus.jsonl"), "--folds", "3", "--out-dir", out,
    ]
    .iter()
    .map(|x| x.to_string())
    .collect();
    v.extend(TINY_TRAIN.iter().map(|x| x.to_string()));
    v
}

fn tsv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect()
}

#[test]
fn evaluate_reports_all_baselines_and_is_deterministic() {
    let d = Synth::new();
    let (r1, r2) = (d.dir.join("r1"), d.dir.join("r2"));
    assert_ok(&bin().args(eval_args(&d, s(&r1))).output().unwrap());
    assert_ok(&bin().args(eval_args(&d, s(&r2))).output().unwrap());
    let rows = tsv_rows(&r1.join("report.tsv"));
    assert_eq!(rows, ["NL", "Q", "Q bin", "Random", "SMT", "RL", "SMT+RL"]);
    assert_eq!(fs::read(r1.join("report.tsv")).unwrap(), fs::read(r2.join("report.tsv")).unwrap());
    for f in ["report.txt", "report.json", "manifest.jsonl"] {
        assert!(r1.join(f).exists(), "{f} missing");
    }
}

#[test]
fn evaluate_baseline_subset_restricts_rows() {
    let d = Synth::new();
    let r = d.dir.join("sub");
    let mut args = eval_args(&d, s(&r));
    args.extend(["--baselines".to_string(), "NL,Random".to_string()]);
    assert_ok(&bin().args(args).output().unwrap());
    assert_eq!(tsv_rows(&r.join("report.tsv")), ["NL", "Random"]);
}

fn memorized_checkpoint(tmp: &Path) -> PathBuf {
    fs::write(
        tmp.join("pairs.jsonl"),
        "{\"topic_id\":\"t1\",\"nl\":\"find reports about solar panel efficiency in deserts\",\"query\":\"solar efficiency deserts\"}\n",
    )
    .unwrap();
    let words = ["find", "reports", "about", "solar", "panel", "efficiency", "in", "deserts"];
    let mut emb = format!("{} 4\n", words.len());
    for (i, w) in words.iter().enumerate() {
        let v: Vec<String> = (0..4).map(|j| format!("{:.3}", ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0)).collect();
        emb.push_str(&format!("{w} {}\n", v.join(" ")));
    }
    fs::write(tmp.join("emb.txt"), emb).unwrap();
    let ckpt = tmp.join("mem.ckpt");
    assert_ok(&run(&[
        "--seed", "2", "train", "--mode", "smt", "--pairs", s(&tmp.join("pairs.jsonl")), "--embeddings",
        s(&tmp.join("emb.txt")), "--hidden", "32", "--batch-size", "1", "--mle-iterations", "200", "--out", s(&ckpt),
    ]));
    ckpt
}

#[test]
fn rewrite_reproduces_a_memorized_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = memorized_checkpoint(tmp.path());
    let o = run(&["rewrite", "--checkpoint", s(&ckpt), "find reports about solar panel efficiency in deserts"]);
    assert_ok(&o);
    assert_eq!(stdout(&o).trim(), "solar efficiency deserts");

    let o = run(&["rewrite", "--checkpoint", s(&ckpt), "  "]);
    assert_eq!(o.status.code(), Some(2));

    let input = "deserts in solar reports about unknownword efficiency";
    let o = bin()
        .args(["rewrite", "--checkpoint", s(&ckpt)])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut c| {
            use std::io::Write;
            c.stdin.take().unwrap().write_all(input.as_bytes())?;
            c.wait_with_output()
        })
        .unwrap();
    assert_ok(&o);
    let out = stdout(&o);
    let mut rest = input.split_whitespace();
    for w in out.split_whitespace() {
        assert!(rest.any(|x| x == w), "'{w}' is not an in-order subsequence of the input: {out}");
    }
}

#[test]
fn stats_match_hand_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let pairs = tmp.path().join("p.jsonl");
    fs::write(
        &pairs,
        "{\"topic_id\":\"a\",\"nl\":\"apple banana apple cherry apple\",\"query\":\"apple cherry\"}\n\
         {\"topic_id\":\"b\",\"nl\":\"red green\",\"query\":\"red\"}\n",
    )
    .unwrap();
    let o = run(&["stats", "--pairs", s(&pairs)]);
    assert_ok(&o);
    assert_eq!(stdout(&o), "pairs\t2\navg_nl_length\t3.500\navg_duplicate_words\t1.000\n");
}

#[test]
fn synth_is_reproducible_and_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, "11");
    synth(&b, "11");
    synth(&c, "12");
    let files = ["corpus.jsonl", "pairs.jsonl", "topics.txt", "qrels.txt", "embeddings.txt"];
    for f in files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert_ne!(fs::read(a.join("corpus.jsonl")).unwrap(), fs::read(c.join("corpus.jsonl")).unwrap());

    let pairs = load_pairs(&a.join("pairs.jsonl")).unwrap();
    let topics = load_topics(&a.join("topics.txt")).unwrap();
    assert_eq!(pairs.len(), 12);
    assert_eq!(topics.iter().map(|t| t.to_pair_record()).collect::<Vec<_>>(), pairs);
    let qrels = load_qrels(&a.join("qrels.txt")).unwrap();
    let docs: std::collections::BTreeSet<String> =
        load_corpus(&a.join("corpus.jsonl")).unwrap().into_iter().map(|d| d.id).collect();
    let analyzer = Analyzer::default();
    for p in &pairs {
        let rel = qrels.relevant(&p.topic_id).expect("every topic is judged");
        assert!(!rel.is_empty(), "{} has no relevant documents", p.topic_id);
        assert!(rel.iter().all(|d| docs.contains(d)));
        let projected = project_query(&analyzer.analyze(&p.nl), &analyzer.analyze(&p.query));
        assert!(!projected.is_empty());
    }
}

#[test]
fn missing_seed_is_a_usage_error_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--out-dir", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_line(&o);
    assert_eq!(e["error"], "usage");
    assert!(e["message"].as_str().unwrap().contains("--seed"));
    assert!(stdout(&o).is_empty());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("run.toml"),
        "seed = 11\n\n[synth]\ndocs = 30\npairs = 6\nvocab = 200\ndim = 8\n",
    )
    .unwrap();
    let cfg = tmp.path().join("run.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_ok(&run(&["--config", s(&cfg), "synth", "--out-dir", s(&a)]));
    assert_ok(&run(&["--config", s(&cfg), "--seed", "12", "synth", "--out-dir", s(&b), "--pairs", "9"]));
    assert_eq!(load_pairs(&a.join("pairs.jsonl")).unwrap().len(), 6);
    assert_eq!(load_pairs(&b.join("pairs.jsonl")).unwrap().len(), 9);

    let d = tmp.path().join("d");
    assert_ok(&run(&["--seed", "11", "synth", "--out-dir", s(&d), "--docs", "30", "--pairs", "6", "--vocab", "200", "--dim", "8"]));
    assert_eq!(fs::read(a.join("corpus.jsonl")).unwrap(), fs::read(d.join("corpus.jsonl")).unwrap());
}
