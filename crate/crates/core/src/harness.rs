//! End-to-end runs: text featurization, fusion, topic classification and
//! VQA answer classification, with results shaped as accuracy tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate, train, ClassifierModel, LabeledExample, TrainConfig};
use crate::datasets::{
    clean_corpus, join_features, transcription_for, CleaningReport, FeatureTable, Manifest, Split,
    Transcriptions, VqaRecord,
};
use crate::error::{Error, Result};
use crate::sketch_fusion::{concat_fuse, FeatureVector, Fuser, FusionSpec};
use crate::text_features::{aggregate, tokenize, EmbeddingTable, TfIdfModel, TranscriptionRecord};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_K: usize = 5;
pub const TABLE1_KS: [usize; 4] = [5, 10, 35, 100];
pub const TABLE2_KS: [usize; 3] = [5, 35, 100];
pub const DEFAULT_MAX_ANSWERS: usize = 1000;

/// Everything needed to rerun a command, plus what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub results: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: impl Serialize, results: impl Serialize) -> Result<Self> {
        Ok(RunManifest {
            tool: "scenefuse".into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            config: serde_json::to_value(config)?,
            results: serde_json::to_value(results)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextConfig {
    pub k: usize,
    pub threshold: f64,
    /// Leave out images whose transcription is empty after cleaning.
    pub drop_empty: bool,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            k: DEFAULT_K,
            threshold: crate::datasets::DEFAULT_CONFIDENCE_THRESHOLD,
            drop_empty: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatures {
    pub features: FeatureTable,
    pub cleaning: CleaningReport,
    pub dropped: Vec<String>,
    /// Selected tokens absent from the lexicon, summed over images.
    pub misses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextSummary {
    pub images: usize,
    pub dropped: Vec<String>,
    pub misses: usize,
    pub cleaning: CleaningReport,
}

impl TextFeatures {
    pub fn summary(&self) -> TextSummary {
        TextSummary {
            images: self.features.len(),
            dropped: self.dropped.clone(),
            misses: self.misses,
            cleaning: self.cleaning.clone(),
        }
    }
}

/// Clean, fit tf-idf on the cleaned corpus, select the top `k` tokens per
/// image and sum their embeddings.
pub fn featurize_text(
    transcriptions: &Transcriptions,
    table: &EmbeddingTable,
    cfg: &TextConfig,
) -> Result<TextFeatures> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let (cleaned, cleaning) = clean_corpus(transcriptions, cfg.threshold)?;
    let (kept, dropped): (Vec<TranscriptionRecord>, Vec<TranscriptionRecord>) = cleaned
        .into_values()
        .partition(|r| !(cfg.drop_empty && r.words.is_empty()));
    let model = TfIdfModel::fit(&kept)?;
    let mut features = FeatureTable::new(table.dim());
    let mut misses = 0;
    for record in &kept {
        let selected = model.select_top_k(record, cfg.k);
        let feature = aggregate(&selected, table);
        misses += feature.miss_count;
        features.insert(record.image_id.clone(), FeatureVector::new(feature.vector)?)?;
    }
    Ok(TextFeatures {
        features,
        cleaning,
        dropped: dropped.into_iter().map(|r| r.image_id).collect(),
        misses,
    })
}

fn id_mismatch(a: &FeatureTable, b: &FeatureTable) -> Option<Error> {
    let ids_a: BTreeSet<&str> = a.ids().collect();
    let ids_b: BTreeSet<&str> = b.ids().collect();
    if ids_a == ids_b {
        return None;
    }
    Some(Error::IdMismatch {
        only_first: ids_a.difference(&ids_b).map(|s| s.to_string()).collect(),
        only_second: ids_b.difference(&ids_a).map(|s| s.to_string()).collect(),
    })
}

/// Fuses two feature files row by row. Both must hold the same ids; the
/// output follows the first file's order.
pub fn fuse_tables(a: &FeatureTable, b: &FeatureTable, spec: &FusionSpec) -> Result<FeatureTable> {
    if let Some(err) = id_mismatch(a, b) {
        return Err(err);
    }
    let fuser = Fuser::new(*spec, a.dim(), b.dim())?;
    let mut out = FeatureTable::new(fuser.output_dim());
    for (id, x) in a.iter() {
        let y = b.get(id).expect("id sets checked equal");
        out.insert(id, fuser.fuse(x, y)?)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Top-1 test accuracy in `[0, 1]`.
    pub accuracy: f64,
    pub class_names: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
    pub n_train: usize,
    pub n_test: usize,
    pub loss_history: Vec<f64>,
}

impl Metrics {
    pub fn accuracy_percent(&self) -> String {
        format!("{:.2}", 100.0 * self.accuracy)
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "test accuracy: {}% ({} train, {} test)\nconfusion (rows true, columns predicted):\n",
            self.accuracy_percent(),
            self.n_train,
            self.n_test
        );
        let width = self.class_names.iter().map(String::len).max().unwrap_or(0);
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
            writeln!(out, "  {name:<width$} {}", cells.join("")).unwrap();
        }
        out
    }
}

fn labeled(
    manifest: &Manifest,
    split: Split,
    features: &FeatureTable,
    class_index: &BTreeMap<&str, usize>,
) -> Result<Vec<LabeledExample>> {
    let rows: Vec<_> = manifest.split(split).collect();
    let vectors = join_features(rows.iter().map(|r| r.image_id.as_str()), features)?;
    Ok(rows
        .iter()
        .zip(vectors)
        .map(|(r, v)| LabeledExample::new(v.clone(), class_index[r.label.as_str()]))
        .collect())
}

/// Trains on the manifest's train split and reports test accuracy. Class
/// indices follow the sorted label set; the model is initialised from
/// `cfg.seed`.
pub fn train_eval(
    features: &FeatureTable,
    manifest: &Manifest,
    cfg: &TrainConfig,
) -> Result<Metrics> {
    Ok(train_eval_model(features, manifest, cfg)?.1)
}

/// [`train_eval`], also returning the trained model.
pub fn train_eval_model(
    features: &FeatureTable,
    manifest: &Manifest,
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, Metrics)> {
    manifest.check_trainable()?;
    let class_names = manifest.class_names();
    let class_index: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let train_set = labeled(manifest, Split::Train, features, &class_index)?;
    let test_set = labeled(manifest, Split::Test, features, &class_index)?;
    let init = ClassifierModel::init(features.dim(), class_names.clone(), cfg.seed)?;
    let (model, loss_history) = train(&init, &train_set, cfg)?;
    let eval = evaluate(&model, &test_set)?;
    let metrics = Metrics {
        accuracy: eval.accuracy,
        class_names,
        confusion: eval.confusion,
        n_train: train_set.len(),
        n_test: test_set.len(),
        loss_history,
    };
    Ok((model, metrics))
}

/// Accuracy table with named rows and columns; cells are fractions in
/// `[0, 1]`, shown as percentages with two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub title: String,
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub cells: Vec<Option<f64>>,
}

impl AccuracyTable {
    pub fn new(
        title: impl Into<String>,
        row_header: impl Into<String>,
        columns: Vec<String>,
    ) -> Self {
        AccuracyTable {
            title: title.into(),
            row_header: row_header.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, name: impl Into<String>, cells: Vec<Option<f64>>) {
        assert_eq!(
            cells.len(),
            self.columns.len(),
            "row width must match columns"
        );
        self.rows.push(TableRow {
            name: name.into(),
            cells,
        });
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|n| n == column)?;
        self.rows.iter().find(|r| r.name == row)?.cells[c]
    }

    pub fn render(&self) -> String {
        let mut grid: Vec<Vec<String>> = vec![std::iter::once(self.row_header.clone())
            .chain(self.columns.iter().cloned())
            .collect()];
        for row in &self.rows {
            grid.push(
                std::iter::once(row.name.clone())
                    .chain(row.cells.iter().map(|c| match c {
                        Some(v) => format!("{:.2}", 100.0 * v),
                        None => "-".into(),
                    }))
                    .collect(),
            );
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|j| grid.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!("{}\n", self.title);
        for (i, row) in grid.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            writeln!(out, "| {} |", cells.join(" | ")).unwrap();
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                writeln!(out, "|-{}-|", rule.join("-|-")).unwrap();
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicGridConfig {
    pub ks: Vec<usize>,
    pub schemes: Vec<FusionSpec>,
    pub threshold: f64,
    /// Leave out images with no confident text, as in the cleaned corpus.
    pub drop_empty: bool,
    pub train: TrainConfig,
}

/// Results shaped like the two topic-classification tables: single views
/// (image, then text for every k) and fusion schemes against k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicGrid {
    pub single: AccuracyTable,
    pub fused: AccuracyTable,
    pub dropped: Vec<String>,
}

/// Runs image-only, text-only for each k, and every fusion scheme for each
/// k. Images missing a transcription get a zero text feature unless
/// `drop_empty` removes them.
pub fn topic_grid(
    image: &FeatureTable,
    transcriptions: &Transcriptions,
    embeddings: &EmbeddingTable,
    manifest: &Manifest,
    cfg: &TopicGridConfig,
) -> Result<TopicGrid> {
    if cfg.ks.is_empty() {
        return Err(Error::InvalidArgument("no k values given".into()));
    }
    join_features(manifest.rows().iter().map(|r| r.image_id.as_str()), image)?;
    let records: Transcriptions = manifest
        .rows()
        .iter()
        .map(|r| {
            (
                r.image_id.clone(),
                transcription_for(transcriptions, &r.image_id),
            )
        })
        .collect();

    let mut text_by_k = Vec::with_capacity(cfg.ks.len());
    for &k in &cfg.ks {
        let text_cfg = TextConfig {
            k,
            threshold: cfg.threshold,
            drop_empty: cfg.drop_empty,
        };
        text_by_k.push(featurize_text(&records, embeddings, &text_cfg)?);
    }
    let dropped = text_by_k[0].dropped.clone();
    let dropped_set: BTreeSet<&str> = dropped.iter().map(String::as_str).collect();
    let manifest = Manifest::new(
        manifest
            .rows()
            .iter()
            .filter(|r| !dropped_set.contains(r.image_id.as_str()))
            .cloned()
            .collect(),
    )?;
    let mut image_kept = FeatureTable::new(image.dim());
    for row in manifest.rows() {
        image_kept.insert(
            row.image_id.clone(),
            image.get(&row.image_id).expect("joined above").clone(),
        )?;
    }

    let k_label = |k: usize| format!("k={k}");
    let mut single_cols = vec!["Image".to_string()];
    single_cols.extend(cfg.ks.iter().map(|&k| format!("Text {}", k_label(k))));
    let mut single = AccuracyTable::new(
        "Topic classification accuracy (%) by single view",
        "View",
        single_cols,
    );
    let mut cells = vec![Some(
        train_eval(&image_kept, &manifest, &cfg.train)?.accuracy,
    )];
    for text in &text_by_k {
        cells.push(Some(
            train_eval(&text.features, &manifest, &cfg.train)?.accuracy,
        ));
    }
    single.push_row("accuracy", cells);

    let fused_cols = cfg
        .ks
        .iter()
        .map(|&k| format!("Image Text {}", k_label(k)))
        .collect();
    let mut fused = AccuracyTable::new(
        "Topic classification accuracy (%) by fusion scheme",
        "Fusion",
        fused_cols,
    );
    for spec in &cfg.schemes {
        let mut cells = Vec::with_capacity(cfg.ks.len());
        for text in &text_by_k {
            let features = fuse_tables(&image_kept, &text.features, spec)?;
            cells.push(Some(train_eval(&features, &manifest, &cfg.train)?.accuracy));
        }
        fused.push_row(scheme_label(spec), cells);
    }
    Ok(TopicGrid {
        single,
        fused,
        dropped,
    })
}

fn scheme_label(spec: &FusionSpec) -> &'static str {
    match spec {
        FusionSpec::Concat => "Concat",
        FusionSpec::Average => "Average",
        FusionSpec::Mcb { .. } => "MCB",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VqaInputs {
    Question,
    QuestionImage,
    QuestionImageText,
}

impl VqaInputs {
    pub const ALL: [VqaInputs; 3] = [
        VqaInputs::Question,
        VqaInputs::QuestionImage,
        VqaInputs::QuestionImageText,
    ];

    pub fn label(self) -> &'static str {
        match self {
            VqaInputs::Question => "Question",
            VqaInputs::QuestionImage => "Question Image",
            VqaInputs::QuestionImageText => "Question Image Text",
        }
    }

    pub fn uses_image(self) -> bool {
        self != VqaInputs::Question
    }

    pub fn uses_text(self) -> bool {
        self == VqaInputs::QuestionImageText
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaConfig {
    pub inputs: VqaInputs,
    /// How the question feature is combined with the (concatenated) image
    /// and text features.
    pub fusion: FusionSpec,
    pub max_answers: usize,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaMetrics {
    pub inputs: VqaInputs,
    /// Correct test answers over all test questions, out-of-vocabulary
    /// answers included as errors.
    pub accuracy: f64,
    pub answers: Vec<String>,
    pub n_train: usize,
    pub n_train_dropped: usize,
    pub n_test: usize,
    pub n_test_oov: usize,
}

/// Answers ranked by training frequency, ties in lexicographic order,
/// truncated to `max_answers`.
pub fn answer_vocabulary<'a, I>(answers: I, max_answers: usize) -> Vec<String>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in answers {
        *counts.entry(a).or_insert(0) += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(max_answers)
        .map(|(a, _)| a.to_owned())
        .collect()
}

/// Embedding sum of every question token (no tf-idf selection).
pub fn question_feature(question: &str, embeddings: &EmbeddingTable) -> Result<FeatureVector> {
    FeatureVector::new(aggregate(&tokenize(question), embeddings).vector)
}

/// VQA as closed-set answer classification. Splits come from the manifest
/// by image id. Image features are required for every record when used;
/// missing text features fall back to zeros.
pub fn vqa(
    records: &[VqaRecord],
    splits: &Manifest,
    embeddings: &EmbeddingTable,
    image: Option<&FeatureTable>,
    text: Option<&FeatureTable>,
    cfg: &VqaConfig,
) -> Result<VqaMetrics> {
    if cfg.max_answers == 0 {
        return Err(Error::InvalidArgument(
            "answer vocabulary size must be positive".into(),
        ));
    }
    let image = match (cfg.inputs.uses_image(), image) {
        (true, None) => return Err(Error::InvalidArgument("image features required".into())),
        (true, Some(t)) => Some(t),
        (false, _) => None,
    };
    let text = match (cfg.inputs.uses_text(), text) {
        (true, None) => return Err(Error::InvalidArgument("text features required".into())),
        (true, Some(t)) => Some(t),
        (false, _) => None,
    };

    let mut unsplit = Vec::new();
    let mut by_split: BTreeMap<Split, Vec<&VqaRecord>> = BTreeMap::new();
    let split_index: BTreeMap<&str, Split> = splits
        .rows()
        .iter()
        .map(|r| (r.image_id.as_str(), r.split))
        .collect();
    for r in records {
        match split_index.get(r.image_id.as_str()).copied() {
            Some(s) => by_split.entry(s).or_default().push(r),
            None => unsplit.push(r.image_id.clone()),
        }
    }
    if !unsplit.is_empty() {
        unsplit.dedup();
        return Err(Error::InvalidArgument(format!(
            "VQA images missing from the split manifest: {}",
            unsplit.join(", ")
        )));
    }
    let train_records = by_split.remove(&Split::Train).unwrap_or_default();
    let test_records = by_split.remove(&Split::Test).unwrap_or_default();
    if train_records.is_empty() || test_records.is_empty() {
        return Err(Error::InvalidArgument(
            "VQA needs both train and test questions".into(),
        ));
    }
    if let Some(image) = image {
        join_features(records.iter().map(|r| r.image_id.as_str()), image)?;
    }

    let answers = answer_vocabulary(
        train_records.iter().map(|r| r.answer.as_str()),
        cfg.max_answers,
    );
    let answer_index: BTreeMap<&str, usize> = answers
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i))
        .collect();

    let text_zero = text.map(|t| FeatureVector::zeros(t.dim()));
    let other_view = |id: &str| -> Option<FeatureVector> {
        let img = image?.get(id).expect("joined above");
        Some(match (text, &text_zero) {
            (Some(t), Some(zero)) => concat_fuse(img, t.get(id).unwrap_or(zero)),
            _ => img.clone(),
        })
    };
    let q_dim = embeddings.dim();
    let other_dim = image.map(|i| i.dim()).unwrap_or(0) + text.map(|t| t.dim()).unwrap_or(0);
    let fuser = if cfg.inputs == VqaInputs::Question {
        None
    } else {
        Some(Fuser::new(cfg.fusion, q_dim, other_dim)?)
    };
    let featurize = |r: &VqaRecord| -> Result<FeatureVector> {
        let q = question_feature(&r.question, embeddings)?;
        match (&fuser, other_view(&r.image_id)) {
            (Some(f), Some(other)) => f.fuse(&q, &other),
            _ => Ok(q),
        }
    };

    let mut train_set = Vec::new();
    let mut n_train_dropped = 0;
    for r in &train_records {
        match answer_index.get(r.answer.as_str()) {
            Some(&label) => train_set.push(LabeledExample::new(featurize(r)?, label)),
            None => n_train_dropped += 1,
        }
    }
    let mut test_set = Vec::new();
    let mut n_test_oov = 0;
    for r in &test_records {
        match answer_index.get(r.answer.as_str()) {
            Some(&label) => test_set.push(LabeledExample::new(featurize(r)?, label)),
            None => n_test_oov += 1,
        }
    }

    let dim = fuser.as_ref().map(Fuser::output_dim).unwrap_or(q_dim);
    let init = ClassifierModel::init(dim, answers.clone(), cfg.train.seed)?;
    let (model, _) = train(&init, &train_set, &cfg.train)?;
    let mut correct = 0usize;
    for ex in &test_set {
        correct += usize::from(model.predict(&ex.feature)? == ex.label);
    }
    Ok(VqaMetrics {
        inputs: cfg.inputs,
        accuracy: correct as f64 / test_records.len() as f64,
        answers,
        n_train: train_set.len(),
        n_train_dropped,
        n_test: test_records.len(),
        n_test_oov,
    })
}

/// The VQA table: one row for the fusion scheme, one column per input
/// configuration.
pub fn vqa_table(rows: &[(FusionSpec, Vec<VqaMetrics>)]) -> AccuracyTable {
    let columns = VqaInputs::ALL
        .iter()
        .map(|c| c.label().to_string())
        .collect();
    let mut table = AccuracyTable::new("VQA answer classification accuracy (%)", "Fusion", columns);
    for (spec, metrics) in rows {
        let cells = VqaInputs::ALL
            .iter()
            .map(|c| metrics.iter().find(|m| m.inputs == *c).map(|m| m.accuracy))
            .collect();
        table.push_row(scheme_label(spec), cells);
    }
    table
}
