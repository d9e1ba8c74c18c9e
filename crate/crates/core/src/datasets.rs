//! File formats, joins, corpus cleaning and synthetic data.
//!
//! | file | layout |
//! |------|--------|
//! | features | `<count> <dim>` header, then `<image_id>\t<v1> ... <vdim>` |
//! | embeddings | `<count> <dim>` header, then `<token> <v1> ... <vdim>` |
//! | transcriptions | JSON lines `{"image_id": .., "words": [{"token": .., "conf": ..}]}` |
//! | manifest | TSV `image_id\tlabel\tsplit`, split is `train` or `test` |
//! | VQA | JSON lines `{"image_id": .., "question": .., "answer": ..}` |
//! | cleaning report | JSON [`CleaningReport`] |

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::sketch_fusion::FeatureVector;
use crate::text_features::{
    filter_by_confidence, parse_header, TranscribedWord, TranscriptionRecord,
};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Id-keyed feature vectors of one common dimension, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    rows: IndexMap<String, FeatureVector>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        FeatureTable {
            dim,
            rows: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, v: FeatureVector) -> Result<()> {
        let id = id.into();
        if v.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "feature table row",
                expected: self.dim,
                found: v.dim(),
            });
        }
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("invalid image id {id:?}")));
        }
        if self.rows.contains_key(&id) {
            return Err(Error::InvalidArgument(format!("duplicate image id {id:?}")));
        }
        self.rows.insert(id, v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&FeatureVector> {
        self.rows.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rows.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FeatureVector)> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (count, dim) = match lines.next() {
            Some((n, header)) => parse_header(header, path, n)?,
            None => return Err(Error::parse(path, 1, "missing \"<count> <dim>\" header")),
        };
        if dim == 0 {
            return Err(Error::parse(path, 1, "dim must be positive"));
        }
        let mut table = FeatureTable::new(dim);
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (id, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, n, "expected \"<image_id>\\t<values>\""))?;
            let values = values
                .split_ascii_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, n, format!("bad float: {e}")))?;
            if values.len() != dim {
                return Err(Error::parse(
                    path,
                    n,
                    format!("expected {dim} values, found {}", values.len()),
                ));
            }
            if table.contains(id) {
                return Err(Error::DuplicateId {
                    path: path.to_owned(),
                    id: id.to_owned(),
                });
            }
            let v = FeatureVector::new(values).map_err(|e| Error::parse(path, n, e.to_string()))?;
            table
                .insert(id, v)
                .map_err(|e| Error::parse(path, n, e.to_string()))?;
        }
        if table.len() != count {
            return Err(Error::parse(
                path,
                1,
                format!("header declares {count} rows, found {}", table.len()),
            ));
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (id, v) in &self.rows {
            out.push_str(id);
            for (i, x) in v.as_slice().iter().enumerate() {
                out.push(if i == 0 { '\t' } else { ' ' });
                write!(out, "{x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read(path)?, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write(path.as_ref(), &self.to_text())
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureTable> {
    FeatureTable::load(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}, expected train or test")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_id: String,
    pub label: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for row in &rows {
            if !seen.insert(row.image_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate image id {:?} in manifest",
                    row.image_id
                )));
            }
        }
        Ok(Manifest { rows })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn split_of(&self, image_id: &str) -> Option<Split> {
        self.rows
            .iter()
            .find(|r| r.image_id == image_id)
            .map(|r| r.split)
    }

    /// Distinct labels in ascending order; a label's position is its class
    /// index.
    pub fn class_names(&self) -> Vec<String> {
        let labels: BTreeSet<&str> = self.rows.iter().map(|r| r.label.as_str()).collect();
        labels.into_iter().map(str::to_owned).collect()
    }

    /// Fails unless both splits are non-empty.
    pub fn check_trainable(&self) -> Result<()> {
        for split in [Split::Train, Split::Test] {
            if self.split(split).next().is_none() {
                return Err(Error::InvalidArgument(format!(
                    "manifest has no {} rows",
                    split.as_str()
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, label, split] = fields[..] else {
                return Err(Error::parse(
                    path,
                    n,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            };
            if id.is_empty() || label.is_empty() {
                return Err(Error::parse(path, n, "empty image id or label"));
            }
            let split = split
                .parse()
                .map_err(|e: String| Error::parse(path, n, e))?;
            if !seen.insert(id.to_owned()) {
                return Err(Error::DuplicateId {
                    path: path.to_owned(),
                    id: id.to_owned(),
                });
            }
            rows.push(ManifestRow {
                image_id: id.to_owned(),
                label: label.to_owned(),
                split,
            });
        }
        Ok(Manifest { rows })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            writeln!(out, "{}\t{}\t{}", r.image_id, r.label, r.split.as_str()).unwrap();
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read(path)?, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write(path.as_ref(), &self.to_text())
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    Manifest::load(path)
}

/// Transcriptions keyed by image id, in file order.
pub type Transcriptions = IndexMap<String, TranscriptionRecord>;

pub fn parse_transcriptions(text: &str, path: &Path) -> Result<Transcriptions> {
    let mut out = Transcriptions::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: TranscriptionRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(path, n, e.to_string()))?;
        for w in &record.words {
            TranscribedWord::new(w.token.clone(), w.confidence)
                .map_err(|e| Error::parse(path, n, e.to_string()))?;
        }
        if out.contains_key(&record.image_id) {
            return Err(Error::DuplicateId {
                path: path.to_owned(),
                id: record.image_id,
            });
        }
        out.insert(record.image_id.clone(), record);
    }
    Ok(out)
}

pub fn transcriptions_to_text(records: &Transcriptions) -> Result<String> {
    let mut out = String::new();
    for record in records.values() {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn load_transcriptions(path: impl AsRef<Path>) -> Result<Transcriptions> {
    let path = path.as_ref();
    parse_transcriptions(&read(path)?, path)
}

pub fn save_transcriptions(records: &Transcriptions, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &transcriptions_to_text(records)?)
}

/// The record for `image_id`, or an empty one when the image has no
/// transcription (its text feature is then the zero vector).
pub fn transcription_for(records: &Transcriptions, image_id: &str) -> TranscriptionRecord {
    records
        .get(image_id)
        .cloned()
        .unwrap_or_else(|| TranscriptionRecord::empty(image_id))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaRecord {
    pub image_id: String,
    pub question: String,
    pub answer: String,
}

pub fn parse_vqa(text: &str, path: &Path) -> Result<Vec<VqaRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let r: VqaRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(path, n, e.to_string()))?;
        if r.image_id.is_empty() || r.question.is_empty() || r.answer.is_empty() {
            return Err(Error::parse(
                path,
                n,
                "image_id, question and answer must be non-empty",
            ));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn vqa_to_text(records: &[VqaRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn load_vqa(path: impl AsRef<Path>) -> Result<Vec<VqaRecord>> {
    let path = path.as_ref();
    parse_vqa(&read(path)?, path)
}

/// Pairs each id with its feature vector, failing with every missing id.
pub fn join_features<'a, I>(ids: I, features: &'a FeatureTable) -> Result<Vec<&'a FeatureVector>>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for id in ids {
        match features.get(id) {
            Some(v) => found.push(v),
            None => missing.push(id.to_owned()),
        }
    }
    if missing.is_empty() {
        Ok(found)
    } else {
        Err(Error::MissingFeatures(missing))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub threshold: f64,
    pub records: usize,
    pub total_words: usize,
    pub surviving_words: usize,
    pub removed_words: usize,
    /// Records left with no words after cleaning.
    pub emptied_records: Vec<String>,
    /// Removed word count per image, for images that lost at least one word.
    pub removed_per_image: BTreeMap<String, usize>,
}

impl CleaningReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.70;

/// Drops low-confidence words from every record. Records that end up empty
/// are kept (with no words) and listed in the report.
pub fn clean_corpus(
    records: &Transcriptions,
    threshold: f64,
) -> Result<(Transcriptions, CleaningReport)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let mut report = CleaningReport {
        threshold,
        records: records.len(),
        total_words: 0,
        surviving_words: 0,
        removed_words: 0,
        emptied_records: Vec::new(),
        removed_per_image: BTreeMap::new(),
    };
    let mut cleaned = Transcriptions::with_capacity(records.len());
    for (id, record) in records {
        let kept = filter_by_confidence(record, threshold);
        let removed = record.words.len() - kept.words.len();
        report.total_words += record.words.len();
        report.surviving_words += kept.words.len();
        if removed > 0 {
            report.removed_per_image.insert(id.clone(), removed);
        }
        if kept.words.is_empty() {
            report.emptied_records.push(id.clone());
        }
        cleaned.insert(id.clone(), kept);
    }
    report.removed_words = report.total_words - report.surviving_words;
    Ok((cleaned, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interaction {
    /// Each view alone determines the class.
    Additive,
    /// Only the pair of views determines the class.
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    pub n_classes: usize,
    pub interaction: Interaction,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 || self.dim_a == 0 || self.dim_b == 0 {
            return Err(Error::InvalidArgument(
                "synthetic sizes and dims must be positive".into(),
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidArgument(
                "synthetic data needs at least two classes".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bad noise sigma {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedExample {
    pub a: FeatureVector,
    pub b: FeatureVector,
    pub label: usize,
    /// Prototype indices used for the two views.
    pub prototypes: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub train: Vec<PairedExample>,
    pub test: Vec<PairedExample>,
    pub n_classes: usize,
}

impl SyntheticDataset {
    pub fn class_names(&self) -> Vec<String> {
        // Zero-padded so lexicographic order equals index order.
        let width = (self.n_classes - 1).to_string().len();
        (0..self.n_classes)
            .map(|c| format!("c{c:0width$}"))
            .collect()
    }

    /// Feature files for both views plus a manifest, ids `s000000`, ...
    pub fn to_tables(&self) -> Result<(FeatureTable, FeatureTable, Manifest)> {
        let dim_a = self.train[0].a.dim();
        let dim_b = self.train[0].b.dim();
        let names = self.class_names();
        let mut fa = FeatureTable::new(dim_a);
        let mut fb = FeatureTable::new(dim_b);
        let mut rows = Vec::new();
        let all = self
            .train
            .iter()
            .map(|e| (e, Split::Train))
            .chain(self.test.iter().map(|e| (e, Split::Test)));
        for (i, (ex, split)) in all.enumerate() {
            let id = format!("s{i:06}");
            fa.insert(id.clone(), ex.a.clone())?;
            fb.insert(id.clone(), ex.b.clone())?;
            rows.push(ManifestRow {
                image_id: id,
                label: names[ex.label].clone(),
                split,
            });
        }
        Ok((fa, fb, Manifest::new(rows)?))
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<SynthFiles> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (fa, fb, manifest) = self.to_tables()?;
        let files = SynthFiles {
            features_a: dir.join("features_a.txt"),
            features_b: dir.join("features_b.txt"),
            manifest: dir.join("manifest.tsv"),
        };
        fa.save(&files.features_a)?;
        fb.save(&files.features_b)?;
        manifest.save(&files.manifest)?;
        Ok(files)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthFiles {
    pub features_a: PathBuf,
    pub features_b: PathBuf,
    pub manifest: PathBuf,
}

fn gaussian_vector(rng: &mut SplitMix64, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

fn noisy(rng: &mut SplitMix64, prototype: &[f64], sigma: f64) -> FeatureVector {
    let noise = gaussian_vector(rng, prototype.len(), sigma);
    FeatureVector::new(prototype.iter().zip(noise).map(|(p, e)| p + e).collect())
        .expect("gaussian samples are finite")
}

/// Two-view classification data with a known interaction structure.
///
/// Each view has `n_classes` standard-normal prototypes. An example of class
/// `c` picks prototype indices `(i, j)`: additively `i = j = c`, so either
/// view alone reveals the class; multiplicatively `i` is uniform and
/// `j = (c − i) mod n_classes`, so `c = (i + j) mod n_classes` and each
/// view on its own is independent of the label. Both views then receive
/// isotropic Gaussian noise of scale `noise_sigma`.
pub fn make_synthetic(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let n = cfg.n_classes;
    let mut rng = SplitMix64::new(cfg.seed);
    let protos_a: Vec<Vec<f64>> = (0..n)
        .map(|_| gaussian_vector(&mut rng, cfg.dim_a, 1.0))
        .collect();
    let protos_b: Vec<Vec<f64>> = (0..n)
        .map(|_| gaussian_vector(&mut rng, cfg.dim_b, 1.0))
        .collect();
    let mut draw = |count: usize| -> Vec<PairedExample> {
        (0..count)
            .map(|_| {
                let label = rng.random_range(0..n);
                let (i, j) = match cfg.interaction {
                    Interaction::Additive => (label, label),
                    Interaction::Multiplicative => {
                        let i = rng.random_range(0..n);
                        (i, (label + n - i) % n)
                    }
                };
                PairedExample {
                    a: noisy(&mut rng, &protos_a[i], cfg.noise_sigma),
                    b: noisy(&mut rng, &protos_b[j], cfg.noise_sigma),
                    label,
                    prototypes: (i, j),
                }
            })
            .collect()
    };
    let train = draw(cfg.n_train);
    let test = draw(cfg.n_test);
    Ok(SyntheticDataset {
        train,
        test,
        n_classes: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn feature_table_round_trip() {
        let mut t = FeatureTable::new(2);
        t.insert("img1", fv(&[0.1, -3.5e-9])).unwrap();
        t.insert("img2", fv(&[1.0 / 7.0, 12.0])).unwrap();
        let text = t.to_text();
        assert!(text.starts_with("2 2\nimg1\t0.1 -0.0000000035\n"));
        assert_eq!(FeatureTable::parse(&text, Path::new("f")).unwrap(), t);
    }

    #[test]
    fn feature_table_errors() {
        let p = Path::new("f.txt");
        let err = FeatureTable::parse("1 2\na\t1\n", p).unwrap_err();
        assert!(err.to_string().starts_with("f.txt:2:"), "{err}");
        assert!(matches!(
            FeatureTable::parse("2 1\na\t1\na\t2\n", p),
            Err(Error::DuplicateId { .. })
        ));
        assert!(FeatureTable::parse("2 1\na\t1\n", p).is_err());
        assert!(FeatureTable::parse("1 1\na 1\n", p).is_err());
        assert!(FeatureTable::parse("1 1\na\tNaN\n", p).is_err());
    }

    #[test]
    fn manifest_parse_and_classes() {
        let m = Manifest::parse(
            "a\tsports\ttrain\nb\tfood\ttest\nc\tsports\ttest\n",
            Path::new("m"),
        )
        .unwrap();
        assert_eq!(m.class_names(), vec!["food", "sports"]);
        assert_eq!(m.split(Split::Test).count(), 2);
        assert_eq!(m.split_of("a"), Some(Split::Train));
        m.check_trainable().unwrap();
        assert_eq!(Manifest::parse(&m.to_text(), Path::new("m")).unwrap(), m);
    }

    #[test]
    fn manifest_rejects_duplicates_and_bad_rows() {
        let p = Path::new("m.tsv");
        let err = Manifest::parse("a\tx\ttrain\na\ty\ttest\n", p).unwrap_err();
        assert!(err.to_string().contains("duplicate id \"a\""), "{err}");
        assert!(Manifest::parse("a\tx\tvalid\n", p).is_err());
        assert!(Manifest::parse("a\tx\n", p).is_err());
        let train_only = Manifest::parse("a\tx\ttrain\n", p).unwrap();
        assert!(train_only.check_trainable().is_err());
    }

    #[test]
    fn join_reports_missing_ids() {
        let mut t = FeatureTable::new(1);
        t.insert("a", fv(&[1.0])).unwrap();
        let err = join_features(["a", "b", "c"], &t).unwrap_err();
        assert_eq!(err.to_string(), "ids without feature vectors: b, c");
        assert_eq!(join_features(["a"], &t).unwrap(), vec![&fv(&[1.0])]);
    }

    #[test]
    fn transcriptions_parse() {
        let text = r#"{"image_id":"a","words":[{"token":"Nike","conf":0.9},{"token":"x","conf":0.2}]}
{"image_id":"b","words":[]}
"#;
        let t = parse_transcriptions(text, Path::new("t")).unwrap();
        assert_eq!(t["a"].words.len(), 2);
        assert!(t["b"].words.is_empty());
        assert_eq!(
            parse_transcriptions(&transcriptions_to_text(&t).unwrap(), Path::new("t")).unwrap(),
            t
        );
        assert!(transcription_for(&t, "zzz").words.is_empty());

        let bad_conf = r#"{"image_id":"a","words":[{"token":"n","conf":1.2}]}"#;
        assert!(parse_transcriptions(bad_conf, Path::new("t")).is_err());
        let dup = "{\"image_id\":\"a\",\"words\":[]}\n{\"image_id\":\"a\",\"words\":[]}\n";
        assert!(parse_transcriptions(dup, Path::new("t")).is_err());
    }

    #[test]
    fn vqa_parse() {
        let text = r#"{"image_id":"a","question":"What is it?","answer":"shoes"}"#;
        let v = parse_vqa(text, Path::new("q")).unwrap();
        assert_eq!(v[0].answer, "shoes");
        assert!(parse_vqa(
            r#"{"image_id":"a","question":"","answer":"x"}"#,
            Path::new("q")
        )
        .is_err());
    }

    fn corpus() -> Transcriptions {
        let rec = |id: &str, words: &[(&str, f64)]| {
            TranscriptionRecord::new(
                id,
                words
                    .iter()
                    .map(|(t, c)| TranscribedWord::new(*t, *c).unwrap())
                    .collect(),
            )
        };
        [
            rec("a", &[("hi", 0.9), ("lo", 0.3)]),
            rec("b", &[("faint", 0.1)]),
            rec("c", &[("sure", 1.0), ("also", 0.7)]),
        ]
        .into_iter()
        .map(|r| (r.image_id.clone(), r))
        .collect()
    }

    #[test]
    fn cleaning_counts() {
        let (cleaned, report) = clean_corpus(&corpus(), DEFAULT_CONFIDENCE_THRESHOLD).unwrap();
        assert_eq!(cleaned.len(), 3);
        assert_eq!(
            (
                report.total_words,
                report.surviving_words,
                report.removed_words
            ),
            (5, 3, 2)
        );
        assert_eq!(report.emptied_records, vec!["b"]);
        assert_eq!(report.removed_per_image.get("a"), Some(&1));
        assert_eq!(cleaned["c"].words.len(), 2);

        let (again, _) = clean_corpus(&cleaned, DEFAULT_CONFIDENCE_THRESHOLD).unwrap();
        assert_eq!(again, cleaned);
        assert_eq!(clean_corpus(&corpus(), 0.0).unwrap().0, corpus());
        assert!(clean_corpus(&corpus(), 1.5).is_err());
    }

    fn synth(interaction: Interaction, sigma: f64) -> SynthConfig {
        SynthConfig {
            n_train: 50,
            n_test: 20,
            dim_a: 4,
            dim_b: 3,
            n_classes: 4,
            interaction,
            noise_sigma: sigma,
            seed: 17,
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = synth(Interaction::Multiplicative, 0.1);
        assert_eq!(make_synthetic(&cfg).unwrap(), make_synthetic(&cfg).unwrap());
        let other = SynthConfig {
            seed: 18,
            ..cfg.clone()
        };
        assert_ne!(
            make_synthetic(&cfg).unwrap(),
            make_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn synthetic_structure() {
        let ds = make_synthetic(&synth(Interaction::Multiplicative, 0.0)).unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (50, 20));
        for ex in ds.train.iter().chain(&ds.test) {
            assert_eq!((ex.prototypes.0 + ex.prototypes.1) % 4, ex.label);
            assert_eq!((ex.a.dim(), ex.b.dim()), (4, 3));
        }
        let ds = make_synthetic(&synth(Interaction::Additive, 0.0)).unwrap();
        assert!(ds.train.iter().all(|e| e.prototypes == (e.label, e.label)));
        // Without noise, same class means same vectors.
        let firsts: Vec<_> = ds
            .train
            .iter()
            .filter(|e| e.label == ds.train[0].label)
            .collect();
        assert!(firsts.iter().all(|e| e.a == firsts[0].a));
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        let cfg = SynthConfig {
            n_classes: 1,
            ..synth(Interaction::Additive, 0.0)
        };
        assert!(make_synthetic(&cfg).is_err());
        let cfg = SynthConfig {
            noise_sigma: -1.0,
            ..synth(Interaction::Additive, 0.0)
        };
        assert!(make_synthetic(&cfg).is_err());
    }

    #[test]
    fn synthetic_files_round_trip() {
        let ds = make_synthetic(&synth(Interaction::Additive, 0.5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = ds.write(dir.path()).unwrap();
        let (fa, fb, m) = ds.to_tables().unwrap();
        assert_eq!(load_features(&files.features_a).unwrap(), fa);
        assert_eq!(load_features(&files.features_b).unwrap(), fb);
        assert_eq!(load_manifest(&files.manifest).unwrap(), m);
        assert_eq!(m.split(Split::Train).count(), 50);
        assert_eq!(m.class_names(), ds.class_names());
    }
}
