//! `edseq` — pipeline driver for the event-detection toolkit. Every verb is
//! a thin, deterministic composition of library operations: given identical
//! inputs and seed it writes identical artifacts. Success exits 0; any
//! failure prints one `error: ...` line on stderr and exits nonzero.

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use edseq_core::checkpoint::{load_checkpoint, restore_model, save_checkpoint};
use edseq_core::corpus::{load_corpus, split_corpus, Corpus, SplitManifest};
use edseq_core::domain::{
    apply_strategy, run_uda, strip_labels, MdspHook, Strategy, UdaSplits,
};
use edseq_core::infer::{
    load_predictions, predict_corpus, save_predictions, tune_threshold, TuneMode,
};
use edseq_core::metrics::{avg_wasserstein, cohen_kappa, corpus_stats, score, word_trigger_mismatch};
use edseq_core::model::{FeatureHook, IdentityHook, Model};
use edseq_core::params::ParamStore;
use edseq_core::schema::EventSchema;
use edseq_core::synth::generate_synthetic_corpus;
use edseq_core::train::{format_loss_log, prepare_instances, train};
use edseq_core::vocab::Vocab;
use edseq_core::{Error, Result};

use config::{echo_threshold, one_line, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "edseq",
    version,
    about = "Event-detection toolkit: synthesize, split, train, tune, predict, evaluate, analyze"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic synthetic multi-domain corpus.
    Synth(SynthArgs),
    /// Partition a corpus into train/dev/test (8:1:1 over documents).
    Split(SplitArgs),
    /// Train a model under the configured strategy; writes checkpoint + loss log.
    Train(TrainArgs),
    /// Scan the threshold grid on the dev split and echo tau* into the config.
    TuneThreshold(TuneArgs),
    /// Decode a split with a trained model and write predictions.
    Predict(PredictArgs),
    /// Score predictions against gold annotations and write a report.
    Eval(EvalArgs),
    /// Corpus analytics: domain heterogeneity, corpus statistics, optional
    /// word/trigger mismatch and annotator agreement.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Config file (flat key-value TOML with sections); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override synth.docs_per_domain.
    #[arg(long)]
    docs_per_domain: Option<usize>,
    /// Write the corpus here instead of paths.corpus.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Read the corpus from here instead of paths.corpus.
    #[arg(long)]
    corpus: Option<String>,
    /// Write the split manifest here instead of paths.splits.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Sentences per optimizer step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Optimizer learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Teacher-forcing probability.
    #[arg(long)]
    rho: Option<f64>,
    /// Weight of the attention loss term.
    #[arg(long)]
    alpha_loss: Option<f64>,
    /// Weight of the bag-of-labels loss term.
    #[arg(long)]
    beta_loss: Option<f64>,
    /// Strategy kind: sd, pd, pdmt, mdsp or ada.
    #[arg(long)]
    strategy: Option<String>,
    /// Corpus file; overrides paths.corpus.
    #[arg(long)]
    corpus: Option<String>,
    /// Split manifest; overrides paths.splits.
    #[arg(long)]
    splits: Option<String>,
    /// Checkpoint destination; overrides paths.checkpoint.
    #[arg(long)]
    checkpoint: Option<String>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Micro-F1 task driving the grid scan.
    #[arg(long, value_parser = ["identification", "classification"],
          default_value = "classification")]
    mode: String,
    /// Beam width for decoding the dev split.
    #[arg(long)]
    beam_width: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Attention threshold; overrides the config value.
    #[arg(long)]
    tau: Option<f64>,
    /// Beam width for decoding.
    #[arg(long)]
    beam_width: Option<usize>,
    /// Which split of the manifest to decode.
    #[arg(long, value_parser = ["train", "dev", "test"], default_value = "test")]
    split: String,
    /// Checkpoint to decode with; overrides paths.checkpoint.
    #[arg(long)]
    checkpoint: Option<String>,
    /// Write predictions here instead of paths.predictions.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Gold corpus file; default is the manifest's test split of paths.corpus.
    #[arg(long)]
    gold: Option<String>,
    /// Predictions file; overrides paths.predictions.
    #[arg(long)]
    predictions: Option<String>,
    /// Write the report here instead of paths.eval_report.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus file; overrides paths.corpus.
    #[arg(long)]
    corpus: Option<String>,
    /// Word segmentation file: one line per sentence, words joined by '/'.
    #[arg(long)]
    segmentation: Option<PathBuf>,
    /// Paired annotations JSON {"a": [...], "b": [...]} for Cohen's kappa.
    #[arg(long)]
    paired: Option<PathBuf>,
    /// Write the report here instead of paths.analysis_report.
    #[arg(long)]
    out: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Split(a) => cmd_split(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::TuneThreshold(a) => cmd_tune(a),
        Cmd::Predict(a) => cmd_predict(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Analyze(a) => cmd_analyze(a),
    };
    if let Err(e) = outcome {
        eprintln!("error: {}", one_line(&e.to_string()));
        std::process::exit(1);
    }
}

fn resolve(common: &CommonArgs, over: Overrides) -> Result<RunConfig> {
    let over = Overrides { seed: common.seed, ..over };
    RunConfig::resolve(common.config.as_deref(), &over)
}

fn ensure_parent(path: &str) -> Result<()> {
    if let Some(parent) = Path::new(path).parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn write_text(path: &str, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

/// Keep only documents from the declared strategy domains; the split must
/// stay non-empty or downstream stages have nothing to work with.
fn restrict(corpus: &Corpus, domains: &[String], what: &str) -> Result<Corpus> {
    let documents: Vec<_> = corpus
        .documents
        .iter()
        .filter(|d| domains.contains(&d.domain))
        .cloned()
        .collect();
    if documents.is_empty() {
        return Err(Error::invalid(format!(
            "{what} split holds no documents from domains [{}]",
            domains.join(", ")
        )));
    }
    Ok(Corpus { documents })
}

/// Name the file in the error when it is missing; format errors from the
/// loaders already carry their own detail.
fn must_exist(what: &str, path: &str) -> Result<()> {
    if !std::path::Path::new(path).exists() {
        return Err(Error::invalid(format!("{what} not found: {path}")));
    }
    Ok(())
}

fn load_splits(cfg: &RunConfig, schema: &EventSchema) -> Result<(Corpus, Corpus, Corpus)> {
    must_exist("corpus", &cfg.paths.corpus)?;
    must_exist("split manifest", &cfg.paths.splits)?;
    let corpus = load_corpus(&cfg.paths.corpus, schema)?;
    let manifest = SplitManifest::load(&cfg.paths.splits)?;
    manifest.apply(&corpus)
}

/// Feature transform matching the trained strategy; MDSP reattaches its
/// stored head parameters, everything else decodes raw encoder features.
fn hook_for(cfg: &RunConfig, store: &ParamStore) -> Result<Box<dyn FeatureHook>> {
    let scfg = cfg.strategy_config();
    match scfg.strategy {
        Strategy::Mdsp => Ok(Box::new(MdspHook::attach(store, &scfg.domains, scfg.combine)?)),
        _ if store.id("mdsp.shared").is_some() => Err(Error::invalid(
            "checkpoint holds shared-private head parameters; set strategy.kind = mdsp",
        )),
        _ => Ok(Box::new(IdentityHook)),
    }
}

fn restored(cfg: &RunConfig) -> Result<(ParamStore, Model, Vocab)> {
    must_exist("checkpoint", &cfg.paths.checkpoint)?;
    must_exist("vocabulary", &cfg.paths.vocab)?;
    let ckpt = load_checkpoint(&cfg.paths.checkpoint)?;
    let (store, model) = restore_model(&ckpt)?;
    let vocab = Vocab::load(&cfg.paths.vocab)?;
    if vocab.len() != model.cfg.vocab_size {
        return Err(Error::invalid(format!(
            "vocabulary file has {} entries but the checkpoint was trained with {}",
            vocab.len(),
            model.cfg.vocab_size
        )));
    }
    Ok((store, model, vocab))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = resolve(
        &a.common,
        Overrides { docs_per_domain: a.docs_per_domain, corpus: a.out, ..Overrides::default() },
    )?;
    let spec = cfg.synth_spec();
    let corpus = generate_synthetic_corpus(cfg.seed, &spec)?;
    ensure_parent(&cfg.paths.corpus)?;
    corpus.save(&cfg.paths.corpus)?;
    println!(
        "wrote {} documents ({} sentences, {} domains) to {}",
        corpus.documents.len(),
        corpus.num_sentences(),
        corpus.domains().len(),
        cfg.paths.corpus
    );
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let cfg = resolve(
        &a.common,
        Overrides { corpus: a.corpus, splits: a.out, ..Overrides::default() },
    )?;
    must_exist("corpus", &cfg.paths.corpus)?;
    let corpus = load_corpus(&cfg.paths.corpus, &EventSchema::default())?;
    let (tr, dv, te, manifest) = split_corpus(&corpus, cfg.seed)?;
    ensure_parent(&cfg.paths.splits)?;
    manifest.save(&cfg.paths.splits)?;
    println!(
        "split {} documents into {}/{}/{} (train/dev/test), manifest at {}",
        corpus.documents.len(),
        tr.documents.len(),
        dv.documents.len(),
        te.documents.len(),
        cfg.paths.splits
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = resolve(
        &a.common,
        Overrides {
            epochs: a.epochs,
            batch_size: a.batch_size,
            learning_rate: a.learning_rate,
            rho: a.rho,
            alpha_loss: a.alpha_loss,
            beta_loss: a.beta_loss,
            strategy: a.strategy,
            corpus: a.corpus,
            splits: a.splits,
            checkpoint: a.checkpoint,
            ..Overrides::default()
        },
    )?;
    let schema = EventSchema::default();
    let scfg = cfg.strategy_config();
    scfg.validate()?;
    let (tr, dv, te) = load_splits(&cfg, &schema)?;

    if scfg.strategy == Strategy::Ada {
        return train_ada(&cfg, &schema, &tr, &dv, &te);
    }

    let tr = restrict(&tr, &scfg.domains, "train")?;
    let dv = restrict(&dv, &scfg.domains, "dev")?;
    let vocab = Vocab::build(&tr)?;
    ensure_parent(&cfg.paths.vocab)?;
    vocab.save(&cfg.paths.vocab)?;

    let mut store = ParamStore::new();
    let model = Model::new(&mut store, cfg.model_config(schema.clone(), vocab.len()), cfg.seed);
    let plan = apply_strategy(&mut store, cfg.model.d_h, &tr, &scfg, cfg.seed)?;
    let train_split = prepare_instances(&plan.corpus, &vocab, &schema);
    let dev_split = prepare_instances(&dv, &vocab, &schema);
    let logs = train(
        &model,
        &mut store,
        &train_split,
        &dev_split,
        &cfg.train_config(),
        plan.hook.as_ref(),
        plan.aux.as_ref(),
    )?;

    ensure_parent(&cfg.paths.checkpoint)?;
    save_checkpoint(&cfg.paths.checkpoint, &model.cfg, &store)?;
    write_text(&cfg.paths.loss_log, &format_loss_log(&logs))?;
    let last = logs.last().expect("at least one epoch");
    println!(
        "trained {} epochs (strategy {}): J={} dev_J={}; checkpoint at {}, loss log at {}",
        logs.len(),
        cfg.strategy.kind,
        last.j,
        last.dev_j,
        cfg.paths.checkpoint,
        cfg.paths.loss_log
    );
    Ok(())
}

/// Unsupervised adaptation: the target side of the manifest is stripped of
/// labels before training ever sees it; evaluation reports source (in-domain)
/// and target (out-of-domain) blocks.
fn train_ada(
    cfg: &RunConfig,
    schema: &EventSchema,
    tr: &Corpus,
    dv: &Corpus,
    te: &Corpus,
) -> Result<()> {
    let scfg = cfg.strategy_config();
    let source = std::slice::from_ref(&scfg.domains[0]);
    let target = std::slice::from_ref(&scfg.domains[1]);
    let source_train = restrict(tr, source, "source train")?;
    let source_dev = restrict(dv, source, "source dev")?;
    let source_test = restrict(te, source, "source test")?;
    let target_train = strip_labels(&restrict(tr, target, "target train")?);
    let target_test = restrict(te, target, "target test")?;

    // The unlabeled target text is legitimately available in adaptation, so
    // the vocabulary covers both sides.
    let mut vocab_docs = source_train.documents.clone();
    vocab_docs.extend(target_train.documents.iter().cloned());
    let vocab = Vocab::build(&Corpus { documents: vocab_docs })?;
    ensure_parent(&cfg.paths.vocab)?;
    vocab.save(&cfg.paths.vocab)?;

    let mut store = ParamStore::new();
    let model = Model::new(&mut store, cfg.model_config(schema.clone(), vocab.len()), cfg.seed);
    let splits = UdaSplits {
        source_train: &source_train,
        source_dev: &source_dev,
        source_test: &source_test,
        target_train: &target_train,
        target_test: &target_test,
    };
    let uda = run_uda(
        &model,
        &mut store,
        &splits,
        &vocab,
        &scfg,
        &cfg.train_config(),
        cfg.decode.beam_width,
        cfg.decode.max_len,
    )?;

    ensure_parent(&cfg.paths.checkpoint)?;
    save_checkpoint(&cfg.paths.checkpoint, &model.cfg, &store)?;
    write_text(&cfg.paths.loss_log, &format_loss_log(&uda.logs))?;
    let text = format!(
        "# adaptation report\n\n{}\n# resolved config\n{}",
        report::uda_report(&uda),
        cfg.echo()
    );
    write_text(&cfg.paths.uda_report, &text)?;
    println!(
        "adapted {} -> {}: tau={} in-domain F1={} out-of-domain F1={}; report at {}",
        scfg.domains[0],
        scfg.domains[1],
        uda.tau,
        uda.in_domain.classification.f1,
        uda.out_of_domain.classification.f1,
        cfg.paths.uda_report
    );
    Ok(())
}

fn cmd_tune(a: TuneArgs) -> Result<()> {
    let path = a.common.config.clone().ok_or_else(|| {
        Error::invalid("tune-threshold needs --config FILE so tau* can be echoed back into it")
    })?;
    let cfg = resolve(&a.common, Overrides { beam_width: a.beam_width, ..Overrides::default() })?;
    let (store, model, vocab) = restored(&cfg)?;
    let scfg = cfg.strategy_config();
    let (_, dv, _) = load_splits(&cfg, &model.cfg.schema)?;
    // Adaptation tunes on the labeled source side only.
    let tune_domains: &[String] = if scfg.strategy == Strategy::Ada {
        std::slice::from_ref(&scfg.domains[0])
    } else {
        &scfg.domains
    };
    let dv = restrict(&dv, tune_domains, "dev")?;
    let hook = hook_for(&cfg, &store)?;
    let mode = match a.mode.as_str() {
        "identification" => TuneMode::Identification,
        _ => TuneMode::Classification,
    };
    let outcome = tune_threshold(
        &model,
        &store,
        hook.as_ref(),
        &dv,
        &vocab,
        cfg.decode.beam_width,
        cfg.decode.max_len,
        mode,
    )?;
    for (tau, f1) in &outcome.grid {
        println!("tau={tau} {}_f1={f1}", a.mode);
    }
    echo_threshold(&path, outcome.tau)?;
    println!("tau_star={} echoed into {}", outcome.tau, path.display());
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let cfg = resolve(
        &a.common,
        Overrides {
            threshold: a.tau,
            beam_width: a.beam_width,
            checkpoint: a.checkpoint,
            predictions: a.out,
            ..Overrides::default()
        },
    )?;
    let tau = cfg.decode.threshold.fixed().ok_or_else(|| {
        Error::invalid("decode.threshold is \"tune\"; run tune-threshold first or pass --tau")
    })?;
    let (store, model, vocab) = restored(&cfg)?;
    let scfg = cfg.strategy_config();
    let (tr, dv, te) = load_splits(&cfg, &model.cfg.schema)?;
    let chosen = match a.split.as_str() {
        "train" => tr,
        "dev" => dv,
        _ => te,
    };
    let chosen = restrict(&chosen, &scfg.domains, &a.split)?;
    let hook = hook_for(&cfg, &store)?;
    let preds = predict_corpus(
        &model,
        &store,
        hook.as_ref(),
        &chosen,
        &vocab,
        cfg.decode.beam_width,
        cfg.decode.max_len,
        tau,
    )?;
    ensure_parent(&cfg.paths.predictions)?;
    save_predictions(&preds, &cfg.paths.predictions)?;
    println!(
        "decoded {} sentences from the {} split (tau={tau}) into {}",
        preds.len(),
        a.split,
        cfg.paths.predictions
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = resolve(
        &a.common,
        Overrides { predictions: a.predictions, ..Overrides::default() },
    )?;
    let schema = EventSchema::default();
    let gold = match &a.gold {
        Some(path) => {
            must_exist("gold corpus", path)?;
            load_corpus(path, &schema)?
        }
        None => {
            let (_, _, te) = load_splits(&cfg, &schema)?;
            restrict(&te, &cfg.strategy_config().domains, "test")?
        }
    };
    must_exist("predictions", &cfg.paths.predictions)?;
    let preds = load_predictions(&cfg.paths.predictions)?;
    let report = score(&gold, &preds)?;
    let out = a.out.as_deref().unwrap_or(&cfg.paths.eval_report);
    let text = format!(
        "# evaluation report\n\n{}\n# resolved config\n{}",
        report::eval_report(&report),
        cfg.echo()
    );
    write_text(out, &text)?;
    println!(
        "identification: P={} R={} F1={}",
        report.identification.precision, report.identification.recall, report.identification.f1
    );
    println!(
        "classification: P={} R={} F1={}",
        report.classification.precision, report.classification.recall, report.classification.f1
    );
    println!("report at {out}");
    Ok(())
}

#[derive(serde::Deserialize)]
struct PairedAnnotations {
    a: Vec<String>,
    b: Vec<String>,
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let cfg = resolve(&a.common, Overrides { corpus: a.corpus, ..Overrides::default() })?;
    let schema = EventSchema::default();
    must_exist("corpus", &cfg.paths.corpus)?;
    let corpus = load_corpus(&cfg.paths.corpus, &schema)?;
    let mut text = String::from("# corpus analysis\n\n");

    let stats = corpus_stats(&corpus);
    text.push_str(&report::corpus_stats(&stats));

    if corpus.domains().len() >= 2 {
        let het = avg_wasserstein(&corpus, &schema)?;
        text.push('\n');
        text.push_str(&report::heterogeneity(&het));
        println!("avg_wasserstein={}", het.avg_wasserstein);
    } else {
        text.push_str("\nheterogeneity.skipped = single-domain corpus\n");
    }

    if let Some(seg) = &a.segmentation {
        let lines: Vec<String> = fs::read_to_string(seg)
            .map_err(|e| Error::invalid(format!("cannot read segmentation {}: {e}", seg.display())))?
            .lines()
            .map(|l| l.to_string())
            .collect();
        let mm = word_trigger_mismatch(&corpus, &lines)?;
        text.push('\n');
        text.push_str(&report::mismatch(&mm));
        println!(
            "mismatch: regular={}% cross_word={}% inside_word={}%",
            mm.regular_pct, mm.cross_word_pct, mm.inside_word_pct
        );
    }

    if let Some(paired) = &a.paired {
        let raw = fs::read_to_string(paired)
            .map_err(|e| Error::invalid(format!("cannot read paired file {}: {e}", paired.display())))?;
        let pa: PairedAnnotations = serde_json::from_str(&raw)
            .map_err(|e| Error::invalid(format!("bad paired annotations: {e}")))?;
        let kappa = cohen_kappa(&pa.a, &pa.b)?;
        text.push_str(&format!("\nkappa = {kappa}\n"));
        println!("kappa={kappa}");
    }

    text.push_str(&format!("\n# resolved config\n{}", cfg.echo()));
    let out = a.out.as_deref().unwrap_or(&cfg.paths.analysis_report);
    write_text(out, &text)?;
    println!(
        "multi_event_proportion={} report at {out}",
        stats.multi_event_proportion
    );
    Ok(())
}
