//! Text features from scene-text transcriptions.
//!
//! A record's words are tokenized, the `k` most discriminative tokens are
//! picked by tf-idf against the corpus, and their embeddings are summed into
//! one fixed-size vector. Tokens the lexicon does not know are skipped and
//! counted, never an error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscribedWord {
    pub token: String,
    #[serde(rename = "conf")]
    pub confidence: f64,
}

impl TranscribedWord {
    pub fn new(token: impl Into<String>, confidence: f64) -> Result<Self> {
        let token = token.into();
        if token.is_empty() {
            return Err(Error::InvalidArgument("empty token".into()));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidArgument(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(TranscribedWord { token, confidence })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptionRecord {
    pub image_id: String,
    pub words: Vec<TranscribedWord>,
}

impl TranscriptionRecord {
    pub fn new(image_id: impl Into<String>, words: Vec<TranscribedWord>) -> Self {
        TranscriptionRecord {
            image_id: image_id.into(),
            words,
        }
    }

    pub fn empty(image_id: impl Into<String>) -> Self {
        Self::new(image_id, Vec::new())
    }

    /// Tokens of all words in order. A recognised word may yield several
    /// tokens ("Wi-Fi" gives "wi", "fi"); an already tokenized word yields
    /// itself.
    pub fn tokens(&self) -> Vec<String> {
        self.words.iter().flat_map(|w| tokenize(&w.token)).collect()
    }
}

/// Keeps only words with `confidence >= threshold`, order preserved.
pub fn filter_by_confidence(record: &TranscriptionRecord, threshold: f64) -> TranscriptionRecord {
    TranscriptionRecord {
        image_id: record.image_id.clone(),
        words: record
            .words
            .iter()
            .filter(|w| w.confidence >= threshold)
            .cloned()
            .collect(),
    }
}

/// Document frequencies over a corpus of transcriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfModel {
    doc_count: usize,
    doc_freq: BTreeMap<String, usize>,
}

impl TfIdfModel {
    pub fn fit<'a, I>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a TranscriptionRecord>,
    {
        let mut doc_count = 0;
        let mut doc_freq = BTreeMap::new();
        for record in corpus {
            doc_count += 1;
            let present: BTreeSet<String> = record.tokens().into_iter().collect();
            for token in present {
                *doc_freq.entry(token).or_insert(0) += 1;
            }
        }
        if doc_count == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(TfIdfModel {
            doc_count,
            doc_freq,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    /// Document frequency, `None` for tokens never seen while fitting.
    pub fn doc_freq(&self, token: &str) -> Option<usize> {
        self.doc_freq.get(token).copied()
    }

    /// `ln(N / df)`, with unseen tokens treated as `df = 1`.
    pub fn idf(&self, token: &str) -> f64 {
        let df = self.doc_freq(token).unwrap_or(1);
        (self.doc_count as f64 / df as f64).ln()
    }

    /// Raw-count tf-idf score of every distinct token in `record`.
    pub fn scores(&self, record: &TranscriptionRecord) -> BTreeMap<String, f64> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for token in record.tokens() {
            *counts.entry(token).or_insert(0) += 1;
        }
        counts
            .into_iter()
            .map(|(token, tf)| {
                let score = tf as f64 * self.idf(&token);
                (token, score)
            })
            .collect()
    }

    /// Up to `k` distinct tokens by descending score; equal scores are
    /// ordered lexicographically.
    pub fn select_top_k(&self, record: &TranscriptionRecord, k: usize) -> Vec<String> {
        let mut scored: Vec<(String, f64)> = self.scores(record).into_iter().collect();
        scored.sort_by(|(ta, sa), (tb, sb)| sb.total_cmp(sa).then_with(|| ta.cmp(tb)));
        scored.truncate(k);
        scored.into_iter().map(|(t, _)| t).collect()
    }
}

pub fn fit_tfidf(corpus: &[TranscriptionRecord]) -> Result<TfIdfModel> {
    TfIdfModel::fit(corpus)
}

pub fn select_top_k(
    record: &TranscriptionRecord,
    model: &TfIdfModel,
    k: usize,
) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(model.select_top_k(record, k))
}

/// Token to dense vector lexicon with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: IndexMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dim must be positive".into(),
            ));
        }
        Ok(EmbeddingTable {
            dim,
            entries: IndexMap::new(),
        })
    }

    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut table = Self::new(dim)?;
        for (token, vector) in entries {
            table.insert(token, vector)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let token = token.into();
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "embedding entry",
                expected: self.dim,
                found: vector.len(),
            });
        }
        if self.entries.contains_key(&token) {
            return Err(Error::InvalidArgument(format!("duplicate token {token:?}")));
        }
        self.entries.insert(token, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(t, v)| (t.as_str(), v.as_slice()))
    }

    /// Parses the word2vec text layout: a `<count> <dim>` header, then one
    /// `<token> <v1> ... <vdim>` line per entry.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (count, dim) = match lines.next() {
            Some((n, header)) => parse_header(header, path, n)?,
            None => return Err(Error::parse(path, 1, "missing \"<count> <dim>\" header")),
        };
        if dim == 0 {
            return Err(Error::parse(path, 1, "dim must be positive"));
        }
        let mut table = EmbeddingTable::new(dim)?;
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_ascii_whitespace();
            let token = fields.next().unwrap_or_default();
            let values = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, n, format!("bad float: {e}")))?;
            if values.len() != dim {
                return Err(Error::parse(
                    path,
                    n,
                    format!("expected {dim} values after token, found {}", values.len()),
                ));
            }
            if table.entries.contains_key(token) {
                return Err(Error::parse(path, n, format!("duplicate token {token:?}")));
            }
            table.entries.insert(token.to_owned(), values);
        }
        if table.len() != count {
            return Err(Error::parse(
                path,
                1,
                format!("header declares {count} entries, found {}", table.len()),
            ));
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (token, values) in &self.entries {
            out.push_str(token);
            for v in values {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn parse_header(line: &str, path: &Path, n: usize) -> Result<(usize, usize)> {
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    match fields.as_slice() {
        [count, dim] => {
            let count = count
                .parse()
                .map_err(|_| Error::parse(path, n, format!("bad count {count:?}")))?;
            let dim = dim
                .parse()
                .map_err(|_| Error::parse(path, n, format!("bad dim {dim:?}")))?;
            Ok((count, dim))
        }
        _ => Err(Error::parse(path, n, "expected header \"<count> <dim>\"")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextFeature {
    pub vector: Vec<f64>,
    pub selected: Vec<String>,
    /// Selected tokens missing from the lexicon.
    pub miss_count: usize,
}

/// Sums the embeddings of `tokens`.
///
/// Summation runs in ascending token order whatever the input order, so the
/// result is exactly permutation invariant.
pub fn aggregate(tokens: &[String], table: &EmbeddingTable) -> TextFeature {
    let mut order: Vec<&String> = tokens.iter().collect();
    order.sort();
    let mut vector = vec![0.0; table.dim()];
    let mut miss_count = 0;
    for token in order {
        match table.get(token) {
            Some(embedding) => {
                for (acc, v) in vector.iter_mut().zip(embedding) {
                    *acc += v;
                }
            }
            None => miss_count += 1,
        }
    }
    TextFeature {
        vector,
        selected: tokens.to_vec(),
        miss_count,
    }
}

/// Full scene-text path for one record: top-k selection, then embedding sum.
/// A selected token missing from the lexicon still uses one of the k slots.
pub fn text_feature(
    record: &TranscriptionRecord,
    model: &TfIdfModel,
    table: &EmbeddingTable,
    k: usize,
) -> Result<TextFeature> {
    let selected = select_top_k(record, model, k)?;
    Ok(aggregate(&selected, table))
}
