//! Self-contained retrieval: an inverted index with BM25 scoring, top-k
//! ranking with deterministic tie-breaking, and average precision.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::textproc::{Analyzer, Token};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<Token>,
}

/// Corpus file record: one JSON object per line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Ordinal of the document; ordinals follow ascending `doc_id`.
    pub doc: u32,
    pub tf: u32,
}

/// Frozen inverted index. Documents are stored in ascending `doc_id` order, so
/// posting lists sorted by ordinal are also sorted by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

/// Descending-score result list, ties broken by ascending `doc_id`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ranking {
    pub entries: Vec<(String, f64)>,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(d, _)| d.as_str())
    }
}

/// Relevant documents per topic. Ids need not exist in the corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RelevanceJudgments {
    topics: BTreeMap<String, BTreeSet<String>>,
}

impl RelevanceJudgments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, topic: impl Into<String>, doc: impl Into<String>) {
        self.topics.entry(topic.into()).or_default().insert(doc.into());
    }

    pub fn relevant(&self, topic: &str) -> Option<&BTreeSet<String>> {
        self.topics.get(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    /// Writes `topic 0 doc 1` lines in sorted order.
    pub fn to_qrels_string(&self) -> String {
        let mut s = String::new();
        for (t, docs) in &self.topics {
            for d in docs {
                s.push_str(&format!("{t} 0 {d} 1\n"));
            }
        }
        s
    }
}

/// Parses whitespace-separated `topic_id iteration doc_id relevance` lines.
/// Lines with relevance `<= 0` are read but not recorded as relevant.
pub fn parse_qrels<R: Read>(reader: R) -> Result<RelevanceJudgments> {
    let mut out = RelevanceJudgments::new();
    let mut seen_topics = BTreeSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 4 {
            return Err(Error::Format {
                line: i + 1,
                message: format!("qrels line needs 4 columns, got {}", cols.len()),
            });
        }
        let rel: i64 = cols[3].parse().map_err(|_| Error::Format {
            line: i + 1,
            message: format!("relevance {:?} is not an integer", cols[3]),
        })?;
        seen_topics.insert(cols[0].to_string());
        if rel > 0 {
            out.add(cols[0], cols[2]);
        }
    }
    // Topics judged but with nothing relevant still count as judged.
    for t in seen_topics {
        out.topics.entry(t).or_default();
    }
    Ok(out)
}

pub fn load_qrels(path: &Path) -> Result<RelevanceJudgments> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(f)
}

/// Reads a JSON-lines corpus (`{"id": .., "text": ..}` per line).
pub fn parse_corpus<R: Read>(reader: R) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(f)
}

pub fn analyze_corpus(records: &[CorpusRecord], analyzer: &Analyzer) -> Vec<Document> {
    records
        .iter()
        .map(|r| Document {
            doc_id: r.id.clone(),
            tokens: analyzer.analyze(&r.text),
        })
        .collect()
}

#[inline]
fn idf(n_docs: f64, df: f64) -> f64 {
    (1.0 + (n_docs - df + 0.5) / (df + 0.5)).ln()
}

/// Counts query-term multiplicities, keyed in lexicographic order.
pub fn query_term_counts(query: &[Token]) -> BTreeMap<&str, u32> {
    let mut m = BTreeMap::new();
    for t in query {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

impl Index {
    pub fn build(corpus: &[Document]) -> Result<Index> {
        Self::build_with(corpus, Bm25Params::default())
    }

    pub fn build_with(corpus: &[Document], params: Bm25Params) -> Result<Index> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut order: Vec<&Document> = corpus.iter().collect();
        order.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        for w in order.windows(2) {
            if w[0].doc_id == w[1].doc_id {
                return Err(Error::DuplicateDoc(w[0].doc_id.clone()));
            }
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(order.len());
        for (ord, doc) in order.iter().enumerate() {
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &doc.tokens {
                *tf.entry(t.as_str()).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term.to_string()).or_default().push(Posting {
                    doc: ord as u32,
                    tf: count,
                });
            }
            doc_lengths.push(doc.tokens.len() as u32);
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        Ok(Index {
            params,
            doc_ids: order.iter().map(|d| d.doc_id.clone()).collect(),
            avgdl: total as f64 / doc_lengths.len() as f64,
            doc_lengths,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.ordinal(doc_id).map(|o| self.doc_lengths[o])
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    fn ordinal(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(doc_id)).ok()
    }

    #[inline]
    fn term_weight(&self, df: usize, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = k1 * (1.0 - b + b * doc_len as f64 / self.avgdl);
        idf(self.num_docs() as f64, df as f64) * tf * (k1 + 1.0) / (tf + norm)
    }

    /// BM25 score of one document. Terms are visited in lexicographic order.
    pub fn bm25(&self, query: &[Token], doc_id: &str) -> Result<f64> {
        let ord = self
            .ordinal(doc_id)
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))?;
        let mut score = 0.0;
        for (term, qtf) in query_term_counts(query) {
            let list = self.postings(term);
            if let Ok(pos) = list.binary_search_by(|p| p.doc.cmp(&(ord as u32))) {
                score += qtf as f64 * self.term_weight(list.len(), list[pos].tf, self.doc_lengths[ord]);
            }
        }
        Ok(score)
    }

    /// Top-`k` documents with positive score.
    pub fn search(&self, query: &[Token], k: usize) -> Ranking {
        if k == 0 || query.is_empty() {
            return Ranking::default();
        }
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for (term, qtf) in query_term_counts(query) {
            let list = self.postings(term);
            for p in list {
                let w = qtf as f64 * self.term_weight(list.len(), p.tf, self.doc_lengths[p.doc as usize]);
                *acc.entry(p.doc).or_insert(0.0) += w;
            }
        }
        let mut hits: Vec<(u32, f64)> = acc.into_iter().filter(|&(_, s)| s > 0.0).collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        Ranking {
            entries: hits
                .into_iter()
                .map(|(d, s)| (self.doc_ids[d as usize].clone(), s))
                .collect(),
        }
    }

    /// Version-stamped JSON with a SHA-256 checksum of the body.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body = serde_json::to_string(self).map_err(|e| Error::invalid(e.to_string()))?;
        let file = IndexFile {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            checksum: checksum(body.as_bytes()),
            index: self.clone(),
        };
        let mut out = serde_json::to_vec(&file).map_err(|e| Error::invalid(e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Index> {
        let file: IndexFile = serde_json::from_slice(bytes)
            .map_err(|e| Error::Checkpoint(format!("index file unreadable: {e}")))?;
        if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported index format {} v{}",
                file.format, file.version
            )));
        }
        let body = serde_json::to_string(&file.index).map_err(|e| Error::invalid(e.to_string()))?;
        if checksum(body.as_bytes()) != file.checksum {
            return Err(Error::Checkpoint("index checksum mismatch".into()));
        }
        file.index.validate()?;
        Ok(file.index)
    }

    fn validate(&self) -> Result<()> {
        let n = self.doc_ids.len();
        let bad = |m: &str| Err(Error::Checkpoint(format!("index inconsistent: {m}")));
        if n == 0 || self.doc_lengths.len() != n {
            return bad("document table");
        }
        if self.doc_ids.windows(2).any(|w| w[0] >= w[1]) {
            return bad("document ids not strictly sorted");
        }
        for list in self.postings.values() {
            if list.windows(2).any(|w| w[0].doc >= w[1].doc) || list.iter().any(|p| p.doc as usize >= n) {
                return bad("posting list order");
            }
        }
        Ok(())
    }
}

const INDEX_FORMAT: &str = "wordsel-index";
const INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    checksum: String,
    index: Index,
}

pub(crate) fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `(1/|R|) Σ_{r : entry r relevant} (relevant in top r) / r`.
pub fn average_precision(ranking: &Ranking, relevant: &BTreeSet<String>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::invalid("average precision needs a non-empty relevant set"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, doc) in ranking.doc_ids().enumerate() {
        if relevant.contains(doc) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::tokenize;

    fn toy() -> Index {
        let docs = [("d1", "a b"), ("d2", "a c"), ("d3", "b c")]
            .iter()
            .map(|(id, t)| Document {
                doc_id: id.to_string(),
                tokens: tokenize(t),
            })
            .collect::<Vec<_>>();
        Index::build(&docs).unwrap()
    }

    fn rel(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn index_statistics() {
        let ix = toy();
        assert_eq!(ix.num_docs(), 3);
        assert_eq!(ix.avgdl(), 2.0);
        assert_eq!(ix.df("a"), 2);
        let one = Index::build(&[Document {
            doc_id: "d".into(),
            tokens: tokenize("a a a"),
        }])
        .unwrap();
        assert_eq!(one.postings("a"), &[Posting { doc: 0, tf: 3 }]);
    }

    #[test]
    fn index_errors() {
        assert!(matches!(Index::build(&[]), Err(Error::EmptyCorpus)));
        let docs = vec![
            Document { doc_id: "x".into(), tokens: tokenize("a") },
            Document { doc_id: "x".into(), tokens: tokenize("b") },
        ];
        match Index::build(&docs) {
            Err(Error::DuplicateDoc(id)) => assert_eq!(id, "x"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bm25_hand_evaluated() {
        let ix = toy();
        let s = ix.bm25(&tokenize("a"), "d1").unwrap();
        // idf = ln(1 + (3 - 2 + 0.5) / (2 + 0.5)) = ln 1.6; tf part = 2.2 / (1 + 1.2) = 1
        assert!((s - 1.6f64.ln()).abs() < 1e-15);
        assert!((s - 0.4700).abs() < 1e-4);
        assert_eq!(ix.bm25(&tokenize("a"), "d3").unwrap(), 0.0);
        for d in ["d1", "d2", "d3"] {
            assert_eq!(ix.bm25(&tokenize("z"), d).unwrap(), 0.0);
        }
        assert!(matches!(ix.bm25(&tokenize("a"), "nope"), Err(Error::UnknownDoc(_))));
    }

    #[test]
    fn query_term_frequency_multiplies() {
        let ix = toy();
        let one = ix.bm25(&tokenize("a"), "d1").unwrap();
        let two = ix.bm25(&tokenize("a a"), "d1").unwrap();
        assert!((two - 2.0 * one).abs() < 1e-15);
    }

    #[test]
    fn search_ties_and_truncation() {
        let ix = toy();
        let r = ix.search(&tokenize("a"), 10);
        assert_eq!(r.doc_ids().collect::<Vec<_>>(), vec!["d1", "d2"]);
        assert_eq!(r.entries[0].1, r.entries[1].1);
        assert!(ix.search(&[], 10).is_empty());
        assert_eq!(ix.search(&tokenize("a"), 1).len(), 1);
    }

    #[test]
    fn average_precision_examples() {
        let r = Ranking {
            entries: vec![("x".into(), 3.0), ("n".into(), 2.0), ("y".into(), 1.0)],
        };
        let ap = average_precision(&r, &rel(&["x", "y"])).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&r, &rel(&["x", "n"])).unwrap(), 1.0);
        assert_eq!(average_precision(&r, &rel(&["q"])).unwrap(), 0.0);
        assert!(average_precision(&r, &rel(&[])).is_err());
    }

    #[test]
    fn qrels_parsing() {
        let q = parse_qrels("301 0 FBIS3-1 1\n301 0 FBIS3-2 0\n\n302 0 LA-9 2\n".as_bytes()).unwrap();
        assert_eq!(q.relevant("301").unwrap(), &rel(&["FBIS3-1"]));
        assert_eq!(q.relevant("302").unwrap(), &rel(&["LA-9"]));
        assert!(parse_qrels("".as_bytes()).unwrap().is_empty());
        assert!(matches!(
            parse_qrels("301 0 d\n".as_bytes()),
            Err(Error::Format { line: 1, .. })
        ));
        let back = parse_qrels(q.to_qrels_string().as_bytes()).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn corpus_parsing() {
        let text = "{\"id\":\"d1\",\"text\":\"Hello, world\"}\n\n{\"id\":\"d2\",\"text\":\"x\"}\n";
        let recs = parse_corpus(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(matches!(
            parse_corpus("{\"id\":1}\n".as_bytes()),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn index_bytes_round_trip_and_corruption() {
        let ix = toy();
        let bytes = ix.to_bytes().unwrap();
        assert_eq!(Index::from_bytes(&bytes).unwrap(), ix);
        assert_eq!(bytes, toy().to_bytes().unwrap());
        let tampered = String::from_utf8(bytes).unwrap().replacen("\"tf\":1", "\"tf\":2", 1);
        assert!(matches!(
            Index::from_bytes(tampered.as_bytes()),
            Err(Error::Checkpoint(_))
        ));
        assert!(Index::from_bytes(b"garbage").is_err());
    }
}
