//! Tokenization, vocabularies and pretrained word vectors.
//!
//! One analyzer is shared by documents, natural-language expressions and
//! keyword queries so that BM25 sees identical term forms on both sides.

use std::borrow::Borrow;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Deref;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A lowercase word with no whitespace or punctuation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    /// Builds a token from an already-analyzed string.
    ///
    /// Returns `None` when the string is empty or is not in analyzed form.
    pub fn new(s: impl Into<String>) -> Option<Token> {
        let s = s.into();
        let ok = !s.is_empty()
            && s.chars().all(|c| c.is_alphanumeric())
            && s.chars().flat_map(char::to_lowercase).eq(s.chars());
        ok.then_some(Token(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Deref for Token {
    type Target = str;
    fn deref(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for Token {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Lowercases and splits on every non-alphanumeric character. Punctuation is dropped.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase().filter(|l| l.is_alphanumeric()));
        } else if !cur.is_empty() {
            out.push(Token(std::mem::take(&mut cur)));
        }
    }
    if !cur.is_empty() {
        out.push(Token(cur));
    }
    out
}

/// Joins tokens with single spaces.
pub fn join_tokens(tokens: &[Token]) -> String {
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(t);
    }
    s
}

/// [`tokenize`] followed by an optional stopword filter. The default has no stopwords.
#[derive(Clone, Debug, Default)]
pub struct Analyzer {
    stopwords: HashSet<String>,
}

impl Analyzer {
    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let stopwords = words
            .into_iter()
            .flat_map(|w| tokenize(w.as_ref()))
            .map(|t| t.0)
            .collect();
        Analyzer { stopwords }
    }

    pub fn analyze(&self, text: &str) -> Vec<Token> {
        let mut toks = tokenize(text);
        if !self.stopwords.is_empty() {
            toks.retain(|t| !self.stopwords.contains(t.as_str()));
        }
        toks
    }
}

/// Dense, lexicographically ordered term ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    terms: Vec<Token>,
    ids: HashMap<Token, usize>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<usize> {
        self.ids.get(term).copied()
    }

    pub fn term(&self, id: usize) -> Option<&Token> {
        self.terms.get(id)
    }

    pub fn terms(&self) -> &[Token] {
        &self.terms
    }

    pub fn contains(&self, term: &str) -> bool {
        self.ids.contains_key(term)
    }
}

pub fn build_vocab<'a, I, S>(corpus: I) -> Vocab
where
    I: IntoIterator<Item = S>,
    S: AsRef<[Token]> + 'a,
{
    let mut set = BTreeSet::new();
    for seq in corpus {
        for t in seq.as_ref() {
            set.insert(t.clone());
        }
    }
    let terms: Vec<Token> = set.into_iter().collect();
    let ids = terms.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
    Vocab { terms, ids }
}

/// How vectors are produced for words missing from the embedding file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OovPolicy {
    /// Gaussian vector seeded by a hash of `(seed, word)`; each component has
    /// standard deviation `scale / sqrt(dim)`, so the expected squared norm is `scale²`.
    HashSeededRandom { seed: u64, scale: f64 },
    Zero,
}

impl Default for OovPolicy {
    fn default() -> Self {
        OovPolicy::HashSeededRandom {
            seed: 0,
            scale: 1.0,
        }
    }
}

impl OovPolicy {
    fn vector(&self, word: &str, dim: usize) -> Vec<f64> {
        match *self {
            OovPolicy::Zero => vec![0.0; dim],
            OovPolicy::HashSeededRandom { seed, scale } => {
                let mut h = Sha256::new();
                h.update(seed.to_le_bytes());
                h.update(word.as_bytes());
                let digest = h.finalize();
                let mut key = [0u8; 32];
                key.copy_from_slice(&digest);
                let mut rng = ChaCha8Rng::from_seed(key);
                let sd = scale / (dim as f64).sqrt();
                (0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * sd
                    })
                    .collect()
            }
        }
    }
}

/// Frozen word vectors for a vocabulary, with a deterministic fallback for unknown words.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    oov: OovPolicy,
}

impl EmbeddingTable {
    pub fn from_vectors(
        dim: usize,
        vectors: HashMap<String, Vec<f64>>,
        oov: OovPolicy,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        for v in vectors.values() {
            if v.len() != dim {
                return Err(Error::Dimension {
                    context: "embedding vector",
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        Ok(EmbeddingTable { dim, vectors, oov })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov
    }

    /// Number of materialized vectors, one per vocabulary term after loading.
    pub fn stored(&self) -> usize {
        self.vectors.len()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    pub fn vector(&self, word: &str) -> Vec<f64> {
        match self.vectors.get(word) {
            Some(v) => v.clone(),
            None => self.oov.vector(word, self.dim),
        }
    }

    /// Writes the stored vectors in the text vector format, words in lexicographic order.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut words: Vec<&String> = self.vectors.keys().collect();
        words.sort();
        writeln!(w, "{} {}", words.len(), self.dim)?;
        for word in words {
            write!(w, "{word}")?;
            for x in &self.vectors[word] {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Loads vectors for `vocab` from a text vector file.
///
/// File words are lowercased before matching and the first occurrence wins.
/// Vocabulary terms that are absent from the file get vectors from `oov`.
pub fn load_embeddings(path: &Path, vocab: &Vocab, oov: OovPolicy) -> Result<EmbeddingTable> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(f, vocab, oov)
}

pub fn read_embeddings<R: Read>(reader: R, vocab: &Vocab, oov: OovPolicy) -> Result<EmbeddingTable> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::Format {
            line: 1,
            message: e.to_string(),
        })?,
        None => {
            return Err(Error::Format {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parsed = match fields.as_slice() {
        [c, d] => c.parse::<usize>().ok().zip(d.parse::<usize>().ok()),
        _ => None,
    };
    let (count, dim) = match parsed {
        Some((c, d)) if d > 0 => (c, d),
        _ => {
            return Err(Error::Format {
                line: 1,
                message: format!("header must be \"<count> <dim>\", got {header:?}"),
            })
        }
    };

    let mut vectors = HashMap::new();
    let mut seen = 0usize;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::Format {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        seen += 1;
        let mut parts = line.split_whitespace();
        let word = parts.next().unwrap_or_default().to_lowercase();
        let comps: Vec<&str> = parts.collect();
        if comps.len() != dim {
            return Err(Error::Format {
                line: lineno,
                message: format!("expected {dim} components, found {}", comps.len()),
            });
        }
        if !vocab.contains(&word) || vectors.contains_key(&word) {
            continue;
        }
        let mut v = Vec::with_capacity(dim);
        for c in comps {
            match c.parse::<f64>() {
                Ok(x) if x.is_finite() => v.push(x),
                _ => {
                    return Err(Error::Format {
                        line: lineno,
                        message: format!("bad component {c:?}"),
                    })
                }
            }
        }
        vectors.insert(word, v);
    }
    if seen != count {
        return Err(Error::Format {
            line: 1,
            message: format!("header declares {count} vectors, file has {seen}"),
        });
    }
    for term in vocab.terms() {
        if !vectors.contains_key(term.as_str()) {
            vectors.insert(term.to_string(), oov.vector(term, dim));
        }
    }
    EmbeddingTable::from_vectors(dim, vectors, oov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(ws: &[&str]) -> Vec<Token> {
        ws.iter().map(|w| Token::new(*w).unwrap()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Lewis and Clark expedition"),
            toks(&["lewis", "and", "clark", "expedition"])
        );
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("sick building syndrome."),
            toks(&["sick", "building", "syndrome"])
        );
        assert_eq!(tokenize("  U.S.-based,   (co-op)!"), toks(&["u", "s", "based", "co", "op"]));
    }

    #[test]
    fn token_rejects_unanalyzed() {
        assert!(Token::new("").is_none());
        assert!(Token::new("Abc").is_none());
        assert!(Token::new("a b").is_none());
        assert!(Token::new("x.").is_none());
        assert!(Token::new("café").is_some());
    }

    #[test]
    fn analyzer_stopwords() {
        let a = Analyzer::with_stopwords(["The", "of"]);
        assert_eq!(a.analyze("The Rise of Rome"), toks(&["rise", "rome"]));
        assert_eq!(Analyzer::default().analyze("The of"), toks(&["the", "of"]));
    }

    #[test]
    fn vocab_examples() {
        let v = build_vocab([toks(&["a", "b"]), toks(&["b", "c"])]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("a"), Some(0));
        assert_eq!(v.id("b"), Some(1));
        assert_eq!(v.id("c"), Some(2));
        let empty = build_vocab(Vec::<Vec<Token>>::new());
        assert!(empty.is_empty());
        let one = build_vocab([toks(&["a", "a", "a"])]);
        assert_eq!(one.terms(), toks(&["a"]).as_slice());
    }

    #[test]
    fn embeddings_exact_parse() {
        let vocab = build_vocab([toks(&["a", "b"])]);
        let t = read_embeddings("2 3\na 1 0 0\nb 0 1 0".as_bytes(), &vocab, OovPolicy::Zero).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.vector("a"), vec![1.0, 0.0, 0.0]);
        assert_eq!(t.vector("b"), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn embeddings_zero_oov() {
        let vocab = build_vocab([toks(&["a", "z"])]);
        let t = read_embeddings("2 3\na 1 0 0\nb 0 1 0".as_bytes(), &vocab, OovPolicy::Zero).unwrap();
        assert_eq!(t.vector("z"), vec![0.0; 3]);
        assert!(!t.contains("b"));
    }

    #[test]
    fn embeddings_arity_error_names_line() {
        let vocab = build_vocab([toks(&["a"])]);
        let err = read_embeddings("2 3\na 1 0\nb 0 1 0".as_bytes(), &vocab, OovPolicy::Zero)
            .unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");
    }

    #[test]
    fn embeddings_bad_header() {
        let vocab = Vocab::default();
        for bad in ["", "3", "x 3", "2 0", "1 2 3"] {
            let err = read_embeddings(bad.as_bytes(), &vocab, OovPolicy::Zero).unwrap_err();
            assert!(matches!(err, Error::Format { line: 1, .. }), "{bad:?}: {err}");
        }
    }

    #[test]
    fn hashed_oov_is_deterministic_and_seeded() {
        let p = OovPolicy::HashSeededRandom { seed: 9, scale: 1.0 };
        let a = p.vector("zebra", 300);
        assert_eq!(a, p.vector("zebra", 300));
        assert_ne!(a, p.vector("zebras", 300));
        let q = OovPolicy::HashSeededRandom { seed: 10, scale: 1.0 };
        assert_ne!(a, q.vector("zebra", 300));
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 0.2, "norm {norm}");
    }

    #[test]
    fn write_then_read_round_trips() {
        let mut m = HashMap::new();
        m.insert("b".to_string(), vec![0.1, -2.5e-7]);
        m.insert("a".to_string(), vec![1.0 / 3.0, 7.0]);
        let t = EmbeddingTable::from_vectors(2, m, OovPolicy::Zero).unwrap();
        let mut buf = Vec::new();
        t.write_text(&mut buf).unwrap();
        let vocab = build_vocab([toks(&["a", "b"])]);
        let back = read_embeddings(buf.as_slice(), &vocab, OovPolicy::Zero).unwrap();
        assert_eq!(back, t);
    }

    proptest::proptest! {
        #[test]
        fn tokenize_idempotent(s in "\\PC{0,60}") {
            let once = tokenize(&s);
            let twice = tokenize(&join_tokens(&once));
            proptest::prop_assert_eq!(once, twice);
        }
    }
}
