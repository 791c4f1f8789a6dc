//! Pair construction from topics, mask derivation, dataset statistics and a
//! seeded synthetic collection for license-free end-to-end runs.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NlExpression, SelectionMask};
use crate::search::{CorpusRecord, RelevanceJudgments};
use crate::textproc::{Analyzer, EmbeddingTable, OovPolicy, Token};
use crate::Scalar;

/// A legacy topic: keyword title plus natural-language description.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topic {
    pub topic_id: String,
    pub title: String,
    pub description: String,
    pub narrative: Option<String>,
}

impl Topic {
    /// The title becomes the keyword query, the description the expression.
    pub fn to_pair_record(&self) -> PairRecord {
        PairRecord {
            topic_id: self.topic_id.clone(),
            nl: self.description.clone(),
            query: self.title.clone(),
        }
    }
}

/// Raw (description, title) pair as stored in the JSON-lines pair file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub topic_id: String,
    pub nl: String,
    pub query: String,
}

/// An analyzed training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair<F> {
    pub topic_id: String,
    pub nl: NlExpression<F>,
    pub mask: SelectionMask,
    /// Original query tokens, which may contain words absent from `nl`.
    pub query: Vec<Token>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairSet<F> {
    pub pairs: Vec<Pair<F>>,
}

impl<F: Scalar> PairSet<F> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> PairSet<F> {
        PairSet {
            pairs: idx.iter().map(|&i| self.pairs[i].clone()).collect(),
        }
    }
}

/// Analyzes records, derives gold masks and embeds the expressions.
pub fn build_pair_set<F: Scalar>(
    records: &[PairRecord],
    analyzer: &Analyzer,
    embeddings: &EmbeddingTable,
) -> Result<PairSet<F>> {
    let mut pairs = Vec::with_capacity(records.len());
    for r in records {
        let nl = analyzer.analyze(&r.nl);
        if nl.is_empty() {
            return Err(Error::Topic {
                topic: r.topic_id.clone(),
                message: "description has no tokens".into(),
            });
        }
        let query = analyzer.analyze(&r.query);
        let mask = derive_mask(&nl, &query).mask;
        pairs.push(Pair {
            topic_id: r.topic_id.clone(),
            nl: NlExpression::embed(nl, embeddings)?,
            mask,
            query,
        });
    }
    Ok(PairSet { pairs })
}

/// A derived mask and the fraction of distinct query tokens found in the expression.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivedMask {
    pub mask: SelectionMask,
    pub coverage: f64,
}

/// Marks the first contiguous occurrence of `query` inside `nl`; failing that,
/// the first occurrence of each distinct query token. Tokens missing from `nl`
/// are skipped and lower `coverage`.
pub fn derive_mask(nl: &[Token], query: &[Token]) -> DerivedMask {
    let mut mask = SelectionMask::zeros(nl.len());
    let distinct: Vec<&Token> = {
        let mut seen = HashSet::new();
        query.iter().filter(|t| seen.insert(t.as_str())).collect()
    };
    if distinct.is_empty() {
        return DerivedMask {
            mask,
            coverage: 1.0,
        };
    }
    let found = distinct.iter().filter(|t| nl.contains(t)).count();
    let coverage = found as f64 / distinct.len() as f64;

    if query.len() <= nl.len() {
        if let Some(start) = nl.windows(query.len()).position(|w| w == query) {
            for i in start..start + query.len() {
                mask.set(i, true);
            }
            return DerivedMask { mask, coverage };
        }
    }
    for t in distinct {
        if let Some(i) = nl.iter().position(|x| x == t) {
            mask.set(i, true);
        }
    }
    DerivedMask { mask, coverage }
}

/// Tokens at kept positions, in order.
pub fn mask_to_query(nl: &[Token], mask: &SelectionMask) -> Result<Vec<Token>> {
    if nl.len() != mask.len() {
        return Err(Error::Dimension {
            context: "mask length",
            expected: nl.len(),
            got: mask.len(),
        });
    }
    Ok(nl
        .iter()
        .zip(mask.bits())
        .filter(|(_, &b)| b)
        .map(|(t, _)| t.clone())
        .collect())
}

/// The query projected onto the expression's tokens.
pub fn project_query(nl: &[Token], query: &[Token]) -> Vec<Token> {
    let m = derive_mask(nl, query).mask;
    mask_to_query(nl, &m).expect("derived mask matches nl length")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub pair_count: usize,
    pub avg_nl_length: f64,
    /// Mean of `|tokens| − |distinct tokens|` over expressions.
    pub avg_duplicate_words: f64,
}

pub fn dataset_stats<N, Q>(pairs: &[(N, Q)]) -> DatasetStats
where
    N: AsRef<[Token]>,
    Q: AsRef<[Token]>,
{
    if pairs.is_empty() {
        return DatasetStats::default();
    }
    let mut len = 0usize;
    let mut dup = 0usize;
    for (nl, _) in pairs {
        let nl = nl.as_ref();
        let distinct: HashSet<&str> = nl.iter().map(|t| t.as_str()).collect();
        len += nl.len();
        dup += nl.len() - distinct.len();
    }
    let n = pairs.len() as f64;
    DatasetStats {
        pair_count: pairs.len(),
        avg_nl_length: len as f64 / n,
        avg_duplicate_words: dup as f64 / n,
    }
}

pub fn parse_pairs<R: Read>(reader: R) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(f)
}

pub fn pairs_to_jsonl(records: &[PairRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("pair record serializes"));
        s.push('\n');
    }
    s
}

const TOPIC_FIELDS: [&str; 4] = ["num", "title", "desc", "narr"];
const FIELD_PREFIXES: [&str; 5] = ["number:", "topic:", "description:", "desc:", "narrative:"];

/// Finds `<tag>` / `</tag>` markers (ASCII letters only), returning
/// `(start, end, lowercase name, closing)`.
fn scan_tags(s: &str) -> Vec<(usize, usize, String, bool)> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'<' {
            let mut j = i + 1;
            let closing = j < b.len() && b[j] == b'/';
            if closing {
                j += 1;
            }
            let name_start = j;
            while j < b.len() && b[j].is_ascii_alphabetic() {
                j += 1;
            }
            if j > name_start && j < b.len() && b[j] == b'>' {
                out.push((i, j + 1, s[name_start..j].to_ascii_lowercase(), closing));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn clean_field(raw: &str) -> String {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    let lower = collapsed.to_ascii_lowercase();
    for p in FIELD_PREFIXES {
        if lower.starts_with(p) {
            return collapsed[p.len()..].trim().to_string();
        }
    }
    collapsed
}

/// Parses tag-delimited topic files (`<top>`, `<num>`, `<title>`, `<desc>`, `<narr>`).
/// Tags are case-insensitive, unknown tags are ignored and field prefixes such
/// as `Number:` or `Description:` are stripped.
pub fn parse_topics(text: &str) -> Result<Vec<Topic>> {
    let tags = scan_tags(text);
    let mut topics = Vec::new();
    let mut k = 0;
    while k < tags.len() {
        if !(tags[k].2 == "top" && !tags[k].3) {
            k += 1;
            continue;
        }
        let mut fields: HashMap<&str, String> = HashMap::new();
        let mut j = k + 1;
        while j < tags.len() && tags[j].2 != "top" {
            let (_, end, ref name, closing) = tags[j];
            let next_start = tags.get(j + 1).map_or(text.len(), |t| t.0);
            if !closing {
                if let Some(f) = TOPIC_FIELDS.iter().find(|f| **f == name.as_str()) {
                    fields.entry(f).or_insert_with(|| clean_field(&text[end..next_start]));
                }
            }
            j += 1;
        }
        k = j;
        let id = fields.remove("num").unwrap_or_default();
        let nonempty = |s: Option<String>| s.filter(|v| !v.is_empty());
        let title = nonempty(fields.remove("title"));
        let desc = nonempty(fields.remove("desc"));
        let label = if id.is_empty() { format!("#{}", topics.len() + 1) } else { id.clone() };
        let title = title.ok_or_else(|| Error::Topic {
            topic: label.clone(),
            message: "missing title".into(),
        })?;
        let description = desc.ok_or_else(|| Error::Topic {
            topic: label.clone(),
            message: "missing description".into(),
        })?;
        topics.push(Topic {
            topic_id: if id.is_empty() { label } else { id },
            title,
            description,
            narrative: nonempty(fields.remove("narr")),
        });
    }
    Ok(topics)
}

/// Renders topics in the tag-delimited format read by [`parse_topics`].
pub fn format_topics(topics: &[Topic]) -> String {
    let mut s = String::new();
    for t in topics {
        s.push_str(&format!(
            "<top>\n<num> Number: {}\n<title> {}\n\n<desc> Description:\n{}\n",
            t.topic_id, t.title, t.description
        ));
        if let Some(n) = &t.narrative {
            s.push_str(&format!("\n<narr> Narrative:\n{n}\n"));
        }
        s.push_str("</top>\n\n");
    }
    s
}

pub fn load_topics(path: &Path) -> Result<Vec<Topic>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_topics(&text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_docs: usize,
    pub n_pairs: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
}

impl SynthConfig {
    pub fn new(seed: u64, n_docs: usize, n_pairs: usize, vocab_size: usize) -> Self {
        SynthConfig {
            seed,
            n_docs,
            n_pairs,
            vocab_size,
            embed_dim: 16,
        }
    }
}

/// A generated collection: documents, pairs, judgments and word vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub corpus: Vec<CorpusRecord>,
    pub pairs: Vec<PairRecord>,
    pub judgments: RelevanceJudgments,
    pub embeddings: EmbeddingTable,
    /// Keywords planted for each pair (all present in its expression).
    pub keywords: Vec<Vec<String>>,
}

impl SynthData {
    pub fn pair_set<F: Scalar>(&self, analyzer: &Analyzer) -> Result<PairSet<F>> {
        build_pair_set(&self.pairs, analyzer, &self.embeddings)
    }
}

const FUNCTION_WORDS: &[&str] = &[
    "the", "of", "and", "to", "in", "a", "is", "for", "on", "that", "with", "as", "by", "was",
    "it", "at", "from", "this", "be", "are", "or", "an", "which", "has", "were",
];

// Each template is duplicate-free. `{}` is the keyword slot; `{last}` splits
// the last keyword off behind "of".
const TEMPLATES: &[&str] = &[
    "find documents that discuss {}",
    "what are some useful sites containing information about {}",
    "identify reports describing {}",
    "what are {} of {last}",
    "are there any articles on {} available",
    "locate information regarding recent {} developments",
    "give examples of {} mentioned in news",
];

const TEMPLATE_WORDS: &[&str] = &[
    "find", "documents", "that", "discuss", "what", "are", "some", "useful", "sites",
    "containing", "information", "about", "identify", "reports", "describing", "of", "there",
    "any", "articles", "on", "available", "locate", "regarding", "recent", "developments",
    "give", "examples", "mentioned", "in", "news",
];

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st", "pl"];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
    let syllables = rng.random_range(2..=4);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
        w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
    }
    if rng.random_bool(0.4) {
        w.push_str(["n", "r", "s", "x"][rng.random_range(0..4)]);
    }
    w
}

fn render_template(template: &str, keywords: &[String]) -> String {
    if template.contains("{last}") {
        let (head, last) = keywords.split_at(keywords.len() - 1);
        template
            .replace("{last}", &last[0])
            .replace("{}", &head.join(" "))
    } else {
        template.replace("{}", &keywords.join(" "))
    }
}

/// Builds a seeded synthetic collection.
///
/// Every pair gets 2–4 content keywords wrapped in a verbose template; the
/// keywords are planted in 1–3 relevant documents. A few distractor documents
/// receive all but one keyword plus the template's own words, and every
/// document is padded with function words, template words and random content
/// words, so template words act as retrieval noise.
/// Some titles carry one extra planted word that never appears in the
/// expression.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    let SynthConfig {
        seed,
        n_docs,
        n_pairs,
        vocab_size,
        embed_dim,
    } = *cfg;
    if n_pairs == 0 || n_docs < n_pairs {
        return Err(Error::config("synthetic data needs n_docs >= n_pairs >= 1"));
    }
    if vocab_size < 8 {
        return Err(Error::config("synthetic vocabulary needs at least 8 content words"));
    }
    if embed_dim == 0 {
        return Err(Error::config("embedding dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let reserved: HashSet<&str> = FUNCTION_WORDS.iter().chain(TEMPLATE_WORDS).copied().collect();
    let mut content: Vec<String> = Vec::with_capacity(vocab_size);
    let mut seen = HashSet::new();
    let mut attempts = 0usize;
    while content.len() < vocab_size {
        attempts += 1;
        if attempts > vocab_size * 1000 {
            return Err(Error::config("could not generate enough distinct content words"));
        }
        let w = pseudo_word(&mut rng);
        if !reserved.contains(w.as_str()) && seen.insert(w.clone()) {
            content.push(w);
        }
    }

    // Relevant document allocation: one each, then extras while at least a third
    // of the collection stays pure background.
    let mut doc_order: Vec<usize> = (0..n_docs).collect();
    doc_order.shuffle(&mut rng);
    let mut relevant: Vec<Vec<usize>> = doc_order[..n_pairs].iter().map(|&d| vec![d]).collect();
    let mut next = n_pairs;
    let budget = n_docs - n_docs / 3;
    for rel in relevant.iter_mut() {
        let want = rng.random_range(1..=3usize);
        while rel.len() < want && next < budget.max(n_pairs) {
            rel.push(doc_order[next]);
            next += 1;
        }
    }

    let mut docs: Vec<Vec<String>> = (0..n_docs)
        .map(|_| {
            let len = rng.random_range(40..=80);
            (0..len)
                .map(|_| {
                    let r: f64 = rng.random();
                    if r < 0.40 {
                        FUNCTION_WORDS[rng.random_range(0..FUNCTION_WORDS.len())].to_string()
                    } else if r < 0.55 {
                        TEMPLATE_WORDS[rng.random_range(0..TEMPLATE_WORDS.len())].to_string()
                    } else {
                        content[rng.random_range(0..content.len())].clone()
                    }
                })
                .collect()
        })
        .collect();

    let mut pairs = Vec::with_capacity(n_pairs);
    let mut keywords_out = Vec::with_capacity(n_pairs);
    let mut judgments = RelevanceJudgments::new();
    let width = n_pairs.to_string().len().max(3);
    let doc_width = n_docs.to_string().len().max(4);
    let doc_id = |d: usize| format!("doc{d:0doc_width$}");
    for (k, rel_docs) in relevant.iter().enumerate() {
        let n_kw = rng.random_range(2..=4usize);
        let mut kws: Vec<String> = Vec::with_capacity(n_kw);
        while kws.len() < n_kw {
            let w = content[rng.random_range(0..content.len())].clone();
            if !kws.contains(&w) {
                kws.push(w);
            }
        }
        let extra = if rng.random_bool(0.25) {
            loop {
                let w = content[rng.random_range(0..content.len())].clone();
                if !kws.contains(&w) {
                    break Some(w);
                }
            }
        } else {
            None
        };

        for &d in rel_docs {
            for w in kws.iter().chain(extra.iter()) {
                for _ in 0..rng.random_range(1..=3) {
                    let pos = rng.random_range(0..=docs[d].len());
                    docs[d].insert(pos, w.clone());
                }
            }
            judgments.add(format!("S{k:0width$}"), doc_id(d));
        }
        let template = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
        let template_words: Vec<&str> = template
            .split_whitespace()
            .filter(|w| !w.starts_with('{'))
            .collect();
        // Distractors share all but one keyword and are dense in template words.
        for _ in 0..rng.random_range(2..=3) {
            let d = rng.random_range(0..n_docs);
            if rel_docs.contains(&d) {
                continue;
            }
            let mut partial = kws.clone();
            partial.shuffle(&mut rng);
            partial.pop();
            let mut planted: Vec<String> = Vec::new();
            for w in &partial {
                for _ in 0..rng.random_range(1..=3) {
                    planted.push(w.clone());
                }
            }
            for w in &template_words {
                for _ in 0..rng.random_range(1..=2) {
                    planted.push(w.to_string());
                }
            }
            for w in planted {
                let pos = rng.random_range(0..=docs[d].len());
                docs[d].insert(pos, w);
            }
        }

        let nl = render_template(template, &kws);
        let mut title = kws.clone();
        if let Some(e) = extra {
            title.push(e);
        }
        pairs.push(PairRecord {
            topic_id: format!("S{k:0width$}"),
            nl,
            query: title.join(" "),
        });
        keywords_out.push(kws);
    }

    let corpus = docs
        .into_iter()
        .enumerate()
        .map(|(d, words)| CorpusRecord {
            id: doc_id(d),
            text: words.join(" "),
        })
        .collect();

    // Content words sit on one side of a random direction, everything else on the other.
    let axis: Vec<f64> = {
        let v: Vec<f64> = (0..embed_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / norm).collect()
    };
    let sd = 1.0 / (embed_dim as f64).sqrt();
    let mut vectors = HashMap::new();
    let mut words: Vec<(String, f64)> = content.iter().map(|w| (w.clone(), 0.5)).collect();
    let others: BTreeSet<&str> = FUNCTION_WORDS.iter().chain(TEMPLATE_WORDS).copied().collect();
    words.extend(others.into_iter().map(|w| (w.to_string(), -0.5)));
    for (w, side) in words {
        let v = axis
            .iter()
            .map(|&a| {
                let z: f64 = StandardNormal.sample(&mut rng);
                side * a + sd * z
            })
            .collect();
        vectors.insert(w, v);
    }
    let embeddings = EmbeddingTable::from_vectors(
        embed_dim,
        vectors,
        OovPolicy::HashSeededRandom { seed, scale: 1.0 },
    )?;

    Ok(SynthData {
        corpus,
        pairs,
        judgments,
        embeddings,
        keywords: keywords_out,
    })
}
