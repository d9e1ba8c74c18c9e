use std::path::{Path, PathBuf};

use scenefuse::classifier::TrainConfig;
use scenefuse::datasets::{
    load_features, load_manifest, load_transcriptions, load_vqa, make_synthetic, FeatureTable,
    Interaction, Manifest, SynthConfig,
};
use scenefuse::harness::{
    featurize_text, fuse_tables, topic_grid, train_eval, vqa, vqa_table, TextConfig,
    TopicGridConfig, VqaConfig, VqaInputs, TABLE1_KS, TABLE2_KS,
};
use scenefuse::sketch_fusion::FusionSpec;
use scenefuse::text_features::{tokenize, EmbeddingTable};
use scenefuse::Error;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn embeddings() -> EmbeddingTable {
    EmbeddingTable::load(fixture("embeddings.txt")).unwrap()
}

fn small_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.5,
        epochs: 100,
        batch_size: 4,
        seed: 1,
        l2: 0.0,
    }
}

#[test]
fn k1_text_feature_is_one_embedding() {
    let t = load_transcriptions(fixture("transcriptions.jsonl")).unwrap();
    let emb = embeddings();
    let text = featurize_text(
        &t,
        &emb,
        &TextConfig {
            k: 1,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(text.features.len(), t.len());
    for (id, v) in text.features.iter() {
        let is_zero = v.as_slice().iter().all(|x| *x == 0.0);
        let is_entry = emb.iter().any(|(_, e)| e == v.as_slice());
        assert!(is_zero || is_entry, "{id}: {v:?}");
    }
    // ad09: car, drive and fast each occur in two cleaned images, so they
    // tie at ln(12 / 2) and "car" wins lexicographically.
    assert_eq!(
        text.features.get("ad09").unwrap().as_slice(),
        emb.get("car").unwrap()
    );
    // ad08 loses every word to cleaning, ad12 never had any.
    assert!(text
        .features
        .get("ad08")
        .unwrap()
        .as_slice()
        .iter()
        .all(|x| *x == 0.0));
    assert_eq!(text.cleaning.emptied_records, vec!["ad08", "ad12"]);
}

#[test]
fn table1_k_values_are_accepted() {
    let t = load_transcriptions(fixture("transcriptions.jsonl")).unwrap();
    for k in TABLE1_KS {
        let text = featurize_text(
            &t,
            &embeddings(),
            &TextConfig {
                k,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(text.features.len(), 12);
    }
}

#[test]
fn drop_mode_removes_empty_images() {
    let t = load_transcriptions(fixture("transcriptions.jsonl")).unwrap();
    let text = featurize_text(
        &t,
        &embeddings(),
        &TextConfig {
            drop_empty: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(text.features.len(), 10);
    assert_eq!(text.dropped, vec!["ad08", "ad12"]);
}

#[test]
fn missing_features_are_reported() {
    let manifest = load_manifest(fixture("manifest.tsv")).unwrap();
    let mut partial = FeatureTable::new(6);
    for (id, v) in load_features(fixture("image_features.txt")).unwrap().iter() {
        if id != "ad07" {
            partial.insert(id, v.clone()).unwrap();
        }
    }
    match train_eval(&partial, &manifest, &small_train()) {
        Err(Error::MissingFeatures(ids)) => assert_eq!(ids, vec!["ad07"]),
        other => panic!("expected missing features, got {other:?}"),
    }
}

#[test]
fn fixture_fusion_dims() {
    let image = load_features(fixture("image_features.txt")).unwrap();
    let t = load_transcriptions(fixture("transcriptions.jsonl")).unwrap();
    let text = featurize_text(&t, &embeddings(), &TextConfig::default())
        .unwrap()
        .features;
    assert_eq!(
        fuse_tables(&image, &text, &FusionSpec::Concat)
            .unwrap()
            .dim(),
        10
    );
    assert_eq!(
        fuse_tables(&image, &text, &FusionSpec::mcb(64, (1, 2), true))
            .unwrap()
            .dim(),
        64
    );
    assert!(fuse_tables(&image, &text, &FusionSpec::Average).is_err());
}

#[test]
fn image_features_classify_fixture_topics() {
    let image = load_features(fixture("image_features.txt")).unwrap();
    let manifest = load_manifest(fixture("manifest.tsv")).unwrap();
    let metrics = train_eval(&image, &manifest, &small_train()).unwrap();
    assert_eq!(metrics.class_names, vec!["cars", "food", "sports"]);
    assert_eq!((metrics.n_train, metrics.n_test), (6, 6));
    assert_eq!(metrics.accuracy, 1.0);
    assert_eq!(
        metrics,
        train_eval(&image, &manifest, &small_train()).unwrap()
    );
}

#[test]
fn grid_has_table_shapes() {
    let cfg = TopicGridConfig {
        ks: TABLE2_KS.to_vec(),
        schemes: vec![FusionSpec::Concat, FusionSpec::mcb(64, (1, 2), true)],
        threshold: 0.7,
        drop_empty: false,
        train: small_train(),
    };
    let grid = topic_grid(
        &load_features(fixture("image_features.txt")).unwrap(),
        &load_transcriptions(fixture("transcriptions.jsonl")).unwrap(),
        &embeddings(),
        &load_manifest(fixture("manifest.tsv")).unwrap(),
        &cfg,
    )
    .unwrap();
    assert_eq!(
        grid.single.columns,
        vec!["Image", "Text k=5", "Text k=35", "Text k=100"]
    );
    assert_eq!(
        grid.fused.columns,
        vec!["Image Text k=5", "Image Text k=35", "Image Text k=100"]
    );
    let rows: Vec<&str> = grid.fused.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(rows, vec!["Concat", "MCB"]);
    assert!(grid
        .fused
        .rows
        .iter()
        .all(|r| r.cells.iter().all(|c| c.is_some())));
    let json = serde_json::to_string(&grid).unwrap();
    assert!(json.contains("\"Image Text k=35\""));
    assert!(grid.fused.render().contains("| MCB"));
}

#[test]
fn grid_drop_mode_shrinks_the_test_set() {
    let cfg = TopicGridConfig {
        ks: vec![5],
        schemes: vec![FusionSpec::Concat],
        threshold: 0.7,
        drop_empty: true,
        train: small_train(),
    };
    let grid = topic_grid(
        &load_features(fixture("image_features.txt")).unwrap(),
        &load_transcriptions(fixture("transcriptions.jsonl")).unwrap(),
        &embeddings(),
        &load_manifest(fixture("manifest.tsv")).unwrap(),
        &cfg,
    )
    .unwrap();
    assert_eq!(grid.dropped, vec!["ad08", "ad12"]);
}

fn vqa_cfg(inputs: VqaInputs) -> VqaConfig {
    VqaConfig {
        inputs,
        fusion: FusionSpec::Concat,
        max_answers: 1000,
        train: small_train(),
    }
}

#[test]
fn vqa_fixture_configurations() {
    let records = load_vqa(fixture("vqa.jsonl")).unwrap();
    let splits = load_manifest(fixture("manifest.tsv")).unwrap();
    let emb = embeddings();
    let image = load_features(fixture("image_features.txt")).unwrap();
    let t = load_transcriptions(fixture("transcriptions.jsonl")).unwrap();
    let text = featurize_text(&t, &emb, &TextConfig::default())
        .unwrap()
        .features;

    let q = vqa(
        &records,
        &splits,
        &emb,
        None,
        None,
        &vqa_cfg(VqaInputs::Question),
    )
    .unwrap();
    assert_eq!(q.answers, vec!["run", "shoes"]);
    assert_eq!((q.n_train, q.n_test, q.n_test_oov), (6, 6, 1));
    // Questions determine the answer except for the out-of-vocabulary one.
    assert!((q.accuracy - 5.0 / 6.0).abs() < 1e-12);

    let qi = vqa(
        &records,
        &splits,
        &emb,
        Some(&image),
        None,
        &vqa_cfg(VqaInputs::QuestionImage),
    )
    .unwrap();
    let qit = vqa(
        &records,
        &splits,
        &emb,
        Some(&image),
        Some(&text),
        &vqa_cfg(VqaInputs::QuestionImageText),
    )
    .unwrap();
    let table = vqa_table(&[(FusionSpec::Concat, vec![q, qi, qit])]);
    assert_eq!(
        table.columns,
        vec!["Question", "Question Image", "Question Image Text"]
    );
    assert!(table.rows[0].cells.iter().all(Option::is_some));
}

#[test]
fn single_answer_vocabulary_is_rejected() {
    let records = load_vqa(fixture("vqa.jsonl")).unwrap();
    let splits = load_manifest(fixture("manifest.tsv")).unwrap();
    let cfg = VqaConfig {
        max_answers: 1,
        ..vqa_cfg(VqaInputs::Question)
    };
    // One answer is not a classification problem.
    assert!(vqa(&records, &splits, &embeddings(), None, None, &cfg).is_err());
}

#[test]
fn vqa_needs_requested_features() {
    let records = load_vqa(fixture("vqa.jsonl")).unwrap();
    let splits = load_manifest(fixture("manifest.tsv")).unwrap();
    assert!(vqa(
        &records,
        &splits,
        &embeddings(),
        None,
        None,
        &vqa_cfg(VqaInputs::QuestionImage)
    )
    .is_err());
}

#[test]
fn question_tokens_hit_the_lexicon() {
    let emb = embeddings();
    let hits = tokenize("What is the brand selling?")
        .iter()
        .filter(|t| emb.get(t).is_some())
        .count();
    assert_eq!(hits, 2);
}

fn synth(interaction: Interaction, sigma: f64) -> (FeatureTable, FeatureTable, Manifest) {
    let cfg = SynthConfig {
        n_train: 800,
        n_test: 400,
        dim_a: 16,
        dim_b: 16,
        n_classes: 5,
        interaction,
        noise_sigma: sigma,
        seed: 77,
    };
    make_synthetic(&cfg).unwrap().to_tables().unwrap()
}

#[test]
fn additive_single_view_is_enough() {
    let (fa, fb, manifest) = synth(Interaction::Additive, 0.0);
    let cfg = TrainConfig {
        epochs: 30,
        ..Default::default()
    };
    assert_eq!(train_eval(&fa, &manifest, &cfg).unwrap().accuracy, 1.0);
    let (fa, _, manifest) = synth(Interaction::Additive, 0.1);
    assert!(train_eval(&fa, &manifest, &cfg).unwrap().accuracy > 0.95);
    assert!(
        train_eval(&fb, &synth(Interaction::Additive, 0.0).2, &cfg)
            .unwrap()
            .accuracy
            > 0.95
    );
}

#[test]
fn multiplicative_single_view_is_chance() {
    let (fa, fb, manifest) = synth(Interaction::Multiplicative, 0.0);
    let cfg = TrainConfig {
        epochs: 30,
        ..Default::default()
    };
    for view in [&fa, &fb] {
        let acc = train_eval(view, &manifest, &cfg).unwrap().accuracy;
        assert!((acc - 0.2).abs() <= 0.1, "single view accuracy {acc}");
    }
}
