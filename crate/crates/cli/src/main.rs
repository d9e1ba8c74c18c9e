use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use scenefuse::classifier::{ClassifierModel, TrainConfig};
use scenefuse::datasets::{
    self, load_features, load_manifest, load_transcriptions, load_vqa, make_synthetic,
    FeatureTable, Interaction, Manifest, SynthConfig,
};
use scenefuse::harness::{
    self, featurize_text, fuse_tables, topic_grid, train_eval_model, vqa, vqa_table, RunManifest,
    TextConfig, TopicGridConfig, VqaConfig, VqaInputs,
};
use scenefuse::sketch_fusion::{FusionSpec, DEFAULT_SKETCH_DIM};
use scenefuse::text_features::EmbeddingTable;

/// Scene-text features, feature fusion and topic / VQA classification.
#[derive(Debug, Parser)]
#[command(name = "scenefuse", version)]
struct Cli {
    /// Seed for weight init, shuffling, sketches and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output file (or directory for `synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Write the run manifest (config and results) as JSON here.
    #[arg(long, global = true)]
    report_json: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn transcriptions into text features (clean, tf-idf top-k, embedding sum).
    FeaturizeText(FeaturizeArgs),
    /// Fuse two feature files id by id.
    Fuse(FuseArgs),
    /// Train a softmax classifier on the train split and report test accuracy.
    TrainEval(TrainEvalArgs),
    /// VQA as answer classification over question / image / text features.
    Vqa(VqaArgs),
    /// Write a synthetic two-view dataset.
    Synth(SynthArgs),
    /// Parse, rewrite and re-parse files to check they follow the formats.
    FormatsCheck(FormatsArgs),
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    #[arg(long)]
    transcriptions: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = harness::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = datasets::DEFAULT_CONFIDENCE_THRESHOLD)]
    threshold: f64,
    /// Leave out images with no word above the threshold.
    #[arg(long)]
    drop_empty: bool,
    /// Write the cleaning report (JSON) here.
    #[arg(long)]
    cleaning_report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scheme {
    Concat,
    Average,
    Mcb,
}

#[derive(Debug, Clone, Args)]
struct FusionArgs {
    #[arg(long, value_enum, default_value_t = Scheme::Mcb)]
    scheme: Scheme,
    #[arg(long, default_value_t = DEFAULT_SKETCH_DIM)]
    sketch_dim: usize,
    /// Sketch seeds for the two views; defaults to `seed, seed + 1`.
    #[arg(long, num_args = 2, value_names = ["FIRST", "SECOND"])]
    sketch_seeds: Option<Vec<u64>>,
    /// Skip signed square root and L2 normalisation of MCB output.
    #[arg(long)]
    no_normalize: bool,
}

impl FusionArgs {
    fn spec_for(&self, scheme: Scheme, seed: u64) -> FusionSpec {
        match scheme {
            Scheme::Concat => FusionSpec::Concat,
            Scheme::Average => FusionSpec::Average,
            Scheme::Mcb => {
                let seeds = match self.sketch_seeds.as_deref() {
                    Some([a, b]) => (*a, *b),
                    _ => (seed, seed.wrapping_add(1)),
                };
                FusionSpec::mcb(self.sketch_dim, seeds, !self.no_normalize)
            }
        }
    }
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[arg(long)]
    first: PathBuf,
    #[arg(long)]
    second: PathBuf,
    #[command(flatten)]
    fusion: FusionArgs,
}

#[derive(Debug, Clone, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch,
            seed,
            l2: self.l2,
        }
    }
}

#[derive(Debug, Args)]
struct TrainEvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Single run on one feature file.
    #[arg(long, conflicts_with_all = ["image_features", "transcriptions"])]
    features: Option<PathBuf>,
    /// Grid run: image features (needs transcriptions and embeddings too).
    #[arg(long, requires_all = ["transcriptions", "embeddings"])]
    image_features: Option<PathBuf>,
    #[arg(long)]
    transcriptions: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// k values (grid run).
    #[arg(long, value_delimiter = ',', default_values_t = harness::TABLE2_KS)]
    ks: Vec<usize>,
    /// Fusion schemes (grid run).
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Scheme::Concat, Scheme::Mcb])]
    schemes: Vec<Scheme>,
    #[arg(long, default_value_t = datasets::DEFAULT_CONFIDENCE_THRESHOLD)]
    threshold: f64,
    /// Keep images without confident text (zero text feature) in grid runs.
    #[arg(long)]
    keep_empty: bool,
    #[command(flatten)]
    fusion: FusionArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputsArg {
    Question,
    QuestionImage,
    QuestionImageText,
    All,
}

#[derive(Debug, Args)]
struct VqaArgs {
    #[arg(long)]
    questions: PathBuf,
    /// Manifest supplying the train/test split of each image.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    image_features: Option<PathBuf>,
    #[arg(long)]
    text_features: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = InputsArg::All)]
    inputs: InputsArg,
    #[arg(long, default_value_t = harness::DEFAULT_MAX_ANSWERS)]
    max_answers: usize,
    #[command(flatten)]
    fusion: FusionArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InteractionArg {
    Additive,
    Multiplicative,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4000)]
    n_train: usize,
    #[arg(long, default_value_t = 1000)]
    n_test: usize,
    #[arg(long, default_value_t = 32)]
    dim_a: usize,
    #[arg(long, default_value_t = 32)]
    dim_b: usize,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, value_enum, default_value_t = InteractionArg::Multiplicative)]
    interaction: InteractionArg,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
}

#[derive(Debug, Args)]
struct FormatsArgs {
    #[arg(long)]
    features: Vec<PathBuf>,
    #[arg(long)]
    embeddings: Vec<PathBuf>,
    #[arg(long)]
    transcriptions: Vec<PathBuf>,
    #[arg(long)]
    manifest: Vec<PathBuf>,
    #[arg(long)]
    vqa: Vec<PathBuf>,
    #[arg(long)]
    model: Vec<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let manifest = match &cli.command {
        Command::FeaturizeText(args) => featurize(&cli, args)?,
        Command::Fuse(args) => fuse(&cli, args)?,
        Command::TrainEval(args) => train_eval_cmd(&cli, args)?,
        Command::Vqa(args) => vqa_cmd(&cli, args)?,
        Command::Synth(args) => synth(&cli, args)?,
        Command::FormatsCheck(args) => formats_check(args)?,
    };
    if let Some(path) = &cli.report_json {
        manifest
            .save(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn require_out(cli: &Cli) -> Result<&Path> {
    match &cli.out {
        Some(p) => Ok(p),
        None => bail!("--out is required for this command"),
    }
}

/// Saves the run manifest next to an output file as `<out>.run.json`.
fn save_beside(out: &Path, manifest: &RunManifest) -> Result<()> {
    let mut name = out.as_os_str().to_owned();
    name.push(".run.json");
    manifest.save(PathBuf::from(name))?;
    Ok(())
}

fn featurize(cli: &Cli, args: &FeaturizeArgs) -> Result<RunManifest> {
    let out = require_out(cli)?;
    let transcriptions = load_transcriptions(&args.transcriptions)?;
    let embeddings = EmbeddingTable::load(&args.embeddings)?;
    let cfg = TextConfig {
        k: args.k,
        threshold: args.threshold,
        drop_empty: args.drop_empty,
    };
    let text = featurize_text(&transcriptions, &embeddings, &cfg)?;
    text.features.save(out)?;
    if let Some(path) = &args.cleaning_report {
        std::fs::write(path, text.cleaning.to_json()? + "\n")?;
    }
    println!(
        "wrote {} text features (dim {}) to {}; {} words removed by cleaning, {} lexicon misses",
        text.features.len(),
        text.features.dim(),
        out.display(),
        text.cleaning.removed_words,
        text.misses
    );
    let config = json!({
        "transcriptions": args.transcriptions,
        "embeddings": args.embeddings,
        "text": cfg,
        "out": out,
    });
    let manifest = RunManifest::new("featurize-text", config, text.summary())?;
    save_beside(out, &manifest)?;
    Ok(manifest)
}

fn fuse(cli: &Cli, args: &FuseArgs) -> Result<RunManifest> {
    let out = require_out(cli)?;
    let spec = args.fusion.spec_for(args.fusion.scheme, cli.seed);
    let a = load_features(&args.first)?;
    let b = load_features(&args.second)?;
    let fused = fuse_tables(&a, &b, &spec)?;
    fused.save(out)?;
    println!(
        "wrote {} {} features (dim {}) to {}",
        fused.len(),
        spec.name(),
        fused.dim(),
        out.display()
    );
    let config = json!({ "first": args.first, "second": args.second, "fusion": spec, "out": out });
    let manifest = RunManifest::new(
        "fuse",
        config,
        json!({ "rows": fused.len(), "dim": fused.dim() }),
    )?;
    save_beside(out, &manifest)?;
    Ok(manifest)
}

fn train_eval_cmd(cli: &Cli, args: &TrainEvalArgs) -> Result<RunManifest> {
    let manifest = load_manifest(&args.manifest)?;
    let train = args.train.config(cli.seed);
    if let Some(features_path) = &args.features {
        let features = load_features(features_path)?;
        let (model, metrics) = train_eval_model(&features, &manifest, &train)?;
        print!("{}", metrics.render());
        if let Some(out) = &cli.out {
            model.save(out)?;
        }
        let config =
            json!({ "features": features_path, "manifest": args.manifest, "train": train });
        return Ok(RunManifest::new("train-eval", config, &metrics)?);
    }
    let (Some(image), Some(transcriptions), Some(embeddings)) =
        (&args.image_features, &args.transcriptions, &args.embeddings)
    else {
        bail!("give either --features, or --image-features with --transcriptions and --embeddings");
    };
    let grid_cfg = TopicGridConfig {
        ks: args.ks.clone(),
        schemes: args
            .schemes
            .iter()
            .map(|&s| args.fusion.spec_for(s, cli.seed))
            .collect(),
        threshold: args.threshold,
        drop_empty: !args.keep_empty,
        train,
    };
    let grid = topic_grid(
        &load_features(image)?,
        &load_transcriptions(transcriptions)?,
        &EmbeddingTable::load(embeddings)?,
        &manifest,
        &grid_cfg,
    )?;
    println!("{}", grid.single.render());
    print!("{}", grid.fused.render());
    let config = json!({
        "image_features": image,
        "transcriptions": transcriptions,
        "embeddings": embeddings,
        "manifest": args.manifest,
        "grid": grid_cfg,
    });
    Ok(RunManifest::new("train-eval", config, &grid)?)
}

fn vqa_cmd(cli: &Cli, args: &VqaArgs) -> Result<RunManifest> {
    let inputs: Vec<VqaInputs> = match args.inputs {
        InputsArg::Question => vec![VqaInputs::Question],
        InputsArg::QuestionImage => vec![VqaInputs::QuestionImage],
        InputsArg::QuestionImageText => vec![VqaInputs::QuestionImageText],
        InputsArg::All => VqaInputs::ALL.to_vec(),
    };
    let records = load_vqa(&args.questions)?;
    let splits = load_manifest(&args.manifest)?;
    let embeddings = EmbeddingTable::load(&args.embeddings)?;
    let needs_image = inputs.iter().any(|i| i.uses_image());
    let needs_text = inputs.iter().any(|i| i.uses_text());
    let image = match (&args.image_features, needs_image) {
        (Some(p), true) => Some(load_features(p)?),
        (None, true) => bail!("--image-features is required for image inputs"),
        _ => None,
    };
    let text = match (&args.text_features, needs_text) {
        (Some(p), true) => Some(load_features(p)?),
        (None, true) => bail!("--text-features is required for text inputs"),
        _ => None,
    };
    let fusion = args.fusion.spec_for(args.fusion.scheme, cli.seed);
    let train = args.train.config(cli.seed);
    let mut results = Vec::new();
    for &which in &inputs {
        let cfg = VqaConfig {
            inputs: which,
            fusion,
            max_answers: args.max_answers,
            train,
        };
        results.push(vqa(
            &records,
            &splits,
            &embeddings,
            image.as_ref(),
            text.as_ref(),
            &cfg,
        )?);
    }
    let table = vqa_table(&[(fusion, results.clone())]);
    print!("{}", table.render());
    let config = json!({
        "questions": args.questions,
        "manifest": args.manifest,
        "embeddings": args.embeddings,
        "image_features": args.image_features,
        "text_features": args.text_features,
        "inputs": inputs,
        "fusion": fusion,
        "max_answers": args.max_answers,
        "train": train,
    });
    Ok(RunManifest::new(
        "vqa",
        config,
        json!({ "table": table, "runs": results }),
    )?)
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<RunManifest> {
    let out = require_out(cli)?;
    let cfg = SynthConfig {
        n_train: args.n_train,
        n_test: args.n_test,
        dim_a: args.dim_a,
        dim_b: args.dim_b,
        n_classes: args.classes,
        interaction: match args.interaction {
            InteractionArg::Additive => Interaction::Additive,
            InteractionArg::Multiplicative => Interaction::Multiplicative,
        },
        noise_sigma: args.sigma,
        seed: cli.seed,
    };
    let files = make_synthetic(&cfg)?.write(out)?;
    println!(
        "wrote {}, {} and {}",
        files.features_a.display(),
        files.features_b.display(),
        files.manifest.display()
    );
    let manifest = RunManifest::new("synth", &cfg, &files)?;
    manifest.save(out.join("run.json"))?;
    Ok(manifest)
}

fn check<T: PartialEq>(
    path: &Path,
    parse: impl Fn(&str, &Path) -> scenefuse::Result<T>,
    write: impl Fn(&T) -> scenefuse::Result<String>,
) -> Result<()> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = parse(&text, path)?;
    let second = parse(&write(&first)?, path).context("re-reading rewritten contents")?;
    if first != second {
        bail!(
            "{}: contents changed after a write/read round trip",
            path.display()
        );
    }
    Ok(())
}

fn formats_check(args: &FormatsArgs) -> Result<RunManifest> {
    let mut checked = Vec::new();
    let mut failures = Vec::new();
    let mut run = |kind: &str, path: &Path, result: Result<()>| {
        match &result {
            Ok(()) => println!("ok    {kind:<14} {}", path.display()),
            Err(e) => {
                println!("FAIL  {kind:<14} {}: {e:#}", path.display());
                failures.push(json!({ "kind": kind, "path": path, "error": format!("{e:#}") }));
            }
        }
        checked.push(json!({ "kind": kind, "path": path, "ok": result.is_ok() }));
    };
    for p in &args.features {
        run(
            "features",
            p,
            check(p, FeatureTable::parse, |t| Ok(t.to_text())),
        );
    }
    for p in &args.embeddings {
        run(
            "embeddings",
            p,
            check(p, EmbeddingTable::parse, |t| Ok(t.to_text())),
        );
    }
    for p in &args.transcriptions {
        run(
            "transcriptions",
            p,
            check(
                p,
                datasets::parse_transcriptions,
                datasets::transcriptions_to_text,
            ),
        );
    }
    for p in &args.manifest {
        run(
            "manifest",
            p,
            check(p, Manifest::parse, |m| Ok(m.to_text())),
        );
    }
    for p in &args.vqa {
        run(
            "vqa",
            p,
            check(p, datasets::parse_vqa, |v| datasets::vqa_to_text(v)),
        );
    }
    for p in &args.model {
        run(
            "model",
            p,
            check(p, ClassifierModel::parse, |m| Ok(m.to_text())),
        );
    }
    if checked.is_empty() {
        bail!("no files given");
    }
    let n_failed = failures.len();
    let manifest = RunManifest::new(
        "formats-check",
        json!({}),
        json!({ "checked": checked, "failures": failures }),
    )?;
    if n_failed > 0 {
        bail!("{n_failed} file(s) failed the format check");
    }
    Ok(manifest)
}
