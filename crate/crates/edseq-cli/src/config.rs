//! Run configuration: a flat key-value file with sections (TOML), loaded
//! once per command, overridden by command-line flags, then validated as a
//! whole. Reports echo the resolved form so every artifact names the exact
//! settings that produced it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use edseq_core::decoder::MaskVariant;
use edseq_core::domain::{CombineRule, Strategy, StrategyConfig};
use edseq_core::model::ModelConfig;
use edseq_core::params::UpdateRule;
use edseq_core::schema::EventSchema;
use edseq_core::synth::SynthSpec;
use edseq_core::train::TrainConfig;
use edseq_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single top-level seed; every random decision flows from it through
    /// named substreams.
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub decode: DecodeSection,
    pub synth: SynthSection,
    pub strategy: StrategySection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_emb: usize,
    pub d_h: usize,
    pub s_dim: usize,
    pub d_lab: usize,
    /// "one_hot" or "elementwise".
    pub mask_variant: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Teacher-forcing probability.
    pub rho: f64,
    pub alpha_loss: f64,
    pub beta_loss: f64,
    /// "adam" or "sgd".
    pub optimizer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub beam_width: usize,
    pub max_len: usize,
    /// Either a number in (0, 1) or the string "tune"; the tune-threshold
    /// command replaces "tune" with the grid winner.
    pub threshold: Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    Fixed(f64),
    Mode(String),
}

impl Threshold {
    pub fn fixed(&self) -> Option<f64> {
        match self {
            Threshold::Fixed(v) => Some(*v),
            Threshold::Mode(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub docs_per_domain: usize,
    pub sentences_per_doc: [usize; 2],
    pub sentence_len_range: [usize; 2],
    pub multi_event_proportion: f64,
    pub eventless_proportion: f64,
    pub vocab_size: usize,
    pub lexemes_per_type: usize,
    pub trigger_pool_per_type: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    /// "sd", "pd", "pdmt", "mdsp" or "ada".
    pub kind: String,
    /// Declared domains; SD takes exactly one, ADA exactly [source, target].
    pub domains: Vec<String>,
    pub lambda_dom: f64,
    pub lambda_grl: f64,
    /// 0 = pick automatically from the combine rule and d_h.
    pub shared_dim: usize,
    pub private_dim: usize,
    /// "concat" or "sum".
    pub combine: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub corpus: String,
    pub splits: String,
    pub vocab: String,
    pub checkpoint: String,
    pub predictions: String,
    pub loss_log: String,
    pub eval_report: String,
    pub analysis_report: String,
    pub uda_report: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            model: ModelSection::default(),
            train: TrainSection::default(),
            decode: DecodeSection::default(),
            synth: SynthSection::default(),
            strategy: StrategySection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d_emb: 32,
            d_h: 32,
            s_dim: 64,
            d_lab: 16,
            mask_variant: "one_hot".into(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 10,
            batch_size: 8,
            learning_rate: 0.01,
            rho: 0.8,
            alpha_loss: 1.0,
            beta_loss: 1.0,
            optimizer: "adam".into(),
        }
    }
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection { beam_width: 4, max_len: 8, threshold: Threshold::Fixed(0.3) }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthSpec::standard(1);
        SynthSection {
            docs_per_domain: 100,
            sentences_per_doc: [s.sentences_per_doc.0, s.sentences_per_doc.1],
            sentence_len_range: [s.sentence_len_range.0, s.sentence_len_range.1],
            multi_event_proportion: s.multi_event_proportion,
            eventless_proportion: s.eventless_proportion,
            vocab_size: s.vocab_size,
            lexemes_per_type: s.lexemes_per_type,
            trigger_pool_per_type: s.trigger_pool_per_type,
        }
    }
}

impl Default for StrategySection {
    fn default() -> Self {
        StrategySection {
            kind: "pd".into(),
            domains: vec!["review".into(), "text_conv".into(), "phone_conv".into()],
            lambda_dom: 0.1,
            lambda_grl: 1.0,
            shared_dim: 0,
            private_dim: 0,
            combine: "concat".into(),
        }
    }
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            corpus: "run/corpus.jsonl".into(),
            splits: "run/splits.json".into(),
            vocab: "run/vocab.txt".into(),
            checkpoint: "run/checkpoint.json".into(),
            predictions: "run/predictions.jsonl".into(),
            loss_log: "run/loss_log.txt".into(),
            eval_report: "run/eval_report.txt".into(),
            analysis_report: "run/analysis_report.txt".into(),
            uda_report: "run/uda_report.txt".into(),
        }
    }
}

/// Optional command-line overrides, applied after the file is read.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub rho: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub beta_loss: Option<f64>,
    pub beam_width: Option<usize>,
    pub max_len: Option<usize>,
    pub threshold: Option<f64>,
    pub strategy: Option<String>,
    pub docs_per_domain: Option<usize>,
    pub corpus: Option<String>,
    pub splits: Option<String>,
    pub checkpoint: Option<String>,
    pub predictions: Option<String>,
}

impl RunConfig {
    /// Defaults, then the file (when given), then flag overrides; validated
    /// before anything runs.
    pub fn resolve(path: Option<&Path>, over: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    Error::invalid(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| Error::invalid(format!("bad config: {}", one_line(&e.to_string()))))?
            }
            None => RunConfig::default(),
        };
        cfg.apply(over);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, over: &Overrides) {
        if let Some(v) = over.seed {
            self.seed = v;
        }
        if let Some(v) = over.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = over.batch_size {
            self.train.batch_size = v;
        }
        if let Some(v) = over.learning_rate {
            self.train.learning_rate = v;
        }
        if let Some(v) = over.rho {
            self.train.rho = v;
        }
        if let Some(v) = over.alpha_loss {
            self.train.alpha_loss = v;
        }
        if let Some(v) = over.beta_loss {
            self.train.beta_loss = v;
        }
        if let Some(v) = over.beam_width {
            self.decode.beam_width = v;
        }
        if let Some(v) = over.max_len {
            self.decode.max_len = v;
        }
        if let Some(v) = over.threshold {
            self.decode.threshold = Threshold::Fixed(v);
        }
        if let Some(v) = &over.strategy {
            self.strategy.kind = v.clone();
        }
        if let Some(v) = over.docs_per_domain {
            self.synth.docs_per_domain = v;
        }
        if let Some(v) = &over.corpus {
            self.paths.corpus = v.clone();
        }
        if let Some(v) = &over.splits {
            self.paths.splits = v.clone();
        }
        if let Some(v) = &over.checkpoint {
            self.paths.checkpoint = v.clone();
        }
        if let Some(v) = &over.predictions {
            self.paths.predictions = v.clone();
        }
    }

    /// Collect every offending key so one run reports them all.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let mut check = |ok: bool, key: &str, why: &str| {
            if !ok {
                bad.push(format!("{key} ({why})"));
            }
        };
        check(self.model.d_emb > 0, "model.d_emb", "must be positive");
        check(self.model.d_h > 0, "model.d_h", "must be positive");
        check(self.model.s_dim > 0, "model.s_dim", "must be positive");
        check(self.model.d_lab > 0, "model.d_lab", "must be positive");
        check(
            matches!(self.model.mask_variant.as_str(), "one_hot" | "elementwise"),
            "model.mask_variant",
            "must be one_hot or elementwise",
        );
        check(self.train.epochs > 0, "train.epochs", "must be positive");
        check(self.train.batch_size > 0, "train.batch_size", "must be positive");
        check(
            self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite(),
            "train.learning_rate",
            "must be positive and finite",
        );
        check((0.0..=1.0).contains(&self.train.rho), "train.rho", "must lie in [0, 1]");
        check(
            self.train.alpha_loss >= 0.0 && self.train.alpha_loss.is_finite(),
            "train.alpha_loss",
            "must be non-negative",
        );
        check(
            self.train.beta_loss >= 0.0 && self.train.beta_loss.is_finite(),
            "train.beta_loss",
            "must be non-negative",
        );
        check(
            matches!(self.train.optimizer.as_str(), "adam" | "sgd"),
            "train.optimizer",
            "must be adam or sgd",
        );
        check(self.decode.beam_width > 0, "decode.beam_width", "must be positive");
        check(self.decode.max_len >= 2, "decode.max_len", "must be at least 2");
        match &self.decode.threshold {
            Threshold::Fixed(v) => check(
                *v > 0.0 && *v < 1.0,
                "decode.threshold",
                "must lie strictly inside (0, 1)",
            ),
            Threshold::Mode(m) => {
                check(m == "tune", "decode.threshold", "string form must be \"tune\"")
            }
        }
        check(self.synth.docs_per_domain > 0, "synth.docs_per_domain", "must be positive");
        check(
            self.synth.sentences_per_doc[0] > 0
                && self.synth.sentences_per_doc[0] <= self.synth.sentences_per_doc[1],
            "synth.sentences_per_doc",
            "must be a non-empty ascending range",
        );
        check(
            self.synth.sentence_len_range[0] > 0
                && self.synth.sentence_len_range[0] <= self.synth.sentence_len_range[1],
            "synth.sentence_len_range",
            "must be a non-empty ascending range",
        );
        check(
            (0.0..=1.0).contains(&self.synth.multi_event_proportion),
            "synth.multi_event_proportion",
            "must lie in [0, 1]",
        );
        check(
            (0.0..=1.0).contains(&self.synth.eventless_proportion),
            "synth.eventless_proportion",
            "must lie in [0, 1]",
        );
        check(self.synth.vocab_size > 0, "synth.vocab_size", "must be positive");
        check(self.synth.lexemes_per_type > 0, "synth.lexemes_per_type", "must be positive");
        check(
            self.synth.trigger_pool_per_type > 0,
            "synth.trigger_pool_per_type",
            "must be positive",
        );
        check(
            matches!(self.strategy.kind.as_str(), "sd" | "pd" | "pdmt" | "mdsp" | "ada"),
            "strategy.kind",
            "must be one of sd, pd, pdmt, mdsp, ada",
        );
        check(!self.strategy.domains.is_empty(), "strategy.domains", "must not be empty");
        check(
            self.strategy.lambda_dom >= 0.0 && self.strategy.lambda_dom.is_finite(),
            "strategy.lambda_dom",
            "must be non-negative",
        );
        check(
            self.strategy.lambda_grl >= 0.0 && self.strategy.lambda_grl.is_finite(),
            "strategy.lambda_grl",
            "must be non-negative",
        );
        check(
            matches!(self.strategy.combine.as_str(), "concat" | "sum"),
            "strategy.combine",
            "must be concat or sum",
        );
        let paths = self.path_list();
        for (key, p) in &paths {
            check(!p.is_empty(), key, "must not be empty");
        }
        for i in 0..paths.len() {
            for j in i + 1..paths.len() {
                if !paths[i].1.is_empty() && paths[i].1 == paths[j].1 {
                    bad.push(format!(
                        "{} and {} (conflict: both are {:?})",
                        paths[i].0, paths[j].0, paths[i].1
                    ));
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid config keys: {}", bad.join("; "))))
        }
    }

    fn path_list(&self) -> Vec<(&'static str, &str)> {
        vec![
            ("paths.corpus", &self.paths.corpus),
            ("paths.splits", &self.paths.splits),
            ("paths.vocab", &self.paths.vocab),
            ("paths.checkpoint", &self.paths.checkpoint),
            ("paths.predictions", &self.paths.predictions),
            ("paths.loss_log", &self.paths.loss_log),
            ("paths.eval_report", &self.paths.eval_report),
            ("paths.analysis_report", &self.paths.analysis_report),
            ("paths.uda_report", &self.paths.uda_report),
        ]
    }

    pub fn mask_variant(&self) -> MaskVariant {
        match self.model.mask_variant.as_str() {
            "elementwise" => MaskVariant::Elementwise,
            _ => MaskVariant::OneHot,
        }
    }

    pub fn model_config(&self, schema: EventSchema, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            schema,
            vocab_size,
            d_emb: self.model.d_emb,
            d_h: self.model.d_h,
            s_dim: self.model.s_dim,
            d_lab: self.model.d_lab,
            mask_variant: self.mask_variant(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            rho: self.train.rho,
            alpha_loss: self.train.alpha_loss,
            beta_loss: self.train.beta_loss,
            seed: self.seed,
            optimizer: match self.train.optimizer.as_str() {
                "sgd" => UpdateRule::Sgd,
                _ => UpdateRule::adam_default(),
            },
        }
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        let strategy = match self.strategy.kind.as_str() {
            "sd" => Strategy::Sd,
            "pdmt" => Strategy::Pdmt,
            "mdsp" => Strategy::Mdsp,
            "ada" => Strategy::Ada,
            _ => Strategy::Pd,
        };
        let combine = match self.strategy.combine.as_str() {
            "sum" => CombineRule::Sum,
            _ => CombineRule::Concat,
        };
        // Width 0 means "derive from the combine rule": the heads must
        // reproduce the encoder output width 2*d_h after combination.
        let auto = match combine {
            CombineRule::Concat => self.model.d_h,
            CombineRule::Sum => 2 * self.model.d_h,
        };
        let shared_dim = if self.strategy.shared_dim == 0 { auto } else { self.strategy.shared_dim };
        let private_dim =
            if self.strategy.private_dim == 0 { auto } else { self.strategy.private_dim };
        StrategyConfig {
            strategy,
            domains: self.strategy.domains.clone(),
            lambda_dom: self.strategy.lambda_dom,
            lambda_grl: self.strategy.lambda_grl,
            shared_dim,
            private_dim,
            combine,
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let mut spec = SynthSpec::standard(self.synth.docs_per_domain);
        spec.sentences_per_doc = (self.synth.sentences_per_doc[0], self.synth.sentences_per_doc[1]);
        spec.sentence_len_range =
            (self.synth.sentence_len_range[0], self.synth.sentence_len_range[1]);
        spec.multi_event_proportion = self.synth.multi_event_proportion;
        spec.eventless_proportion = self.synth.eventless_proportion;
        spec.vocab_size = self.synth.vocab_size;
        spec.lexemes_per_type = self.synth.lexemes_per_type;
        spec.trigger_pool_per_type = self.synth.trigger_pool_per_type;
        spec
    }

    /// Flat `config.key = value` lines embedded in every report.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "config.{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("model.d_emb", self.model.d_emb.to_string());
        kv("model.d_h", self.model.d_h.to_string());
        kv("model.s_dim", self.model.s_dim.to_string());
        kv("model.d_lab", self.model.d_lab.to_string());
        kv("model.mask_variant", self.model.mask_variant.clone());
        kv("train.epochs", self.train.epochs.to_string());
        kv("train.batch_size", self.train.batch_size.to_string());
        kv("train.learning_rate", self.train.learning_rate.to_string());
        kv("train.rho", self.train.rho.to_string());
        kv("train.alpha_loss", self.train.alpha_loss.to_string());
        kv("train.beta_loss", self.train.beta_loss.to_string());
        kv("train.optimizer", self.train.optimizer.clone());
        kv("decode.beam_width", self.decode.beam_width.to_string());
        kv("decode.max_len", self.decode.max_len.to_string());
        kv(
            "decode.threshold",
            match &self.decode.threshold {
                Threshold::Fixed(v) => v.to_string(),
                Threshold::Mode(m) => m.clone(),
            },
        );
        kv("synth.docs_per_domain", self.synth.docs_per_domain.to_string());
        kv(
            "synth.sentences_per_doc",
            format!("{}..{}", self.synth.sentences_per_doc[0], self.synth.sentences_per_doc[1]),
        );
        kv(
            "synth.sentence_len_range",
            format!("{}..{}", self.synth.sentence_len_range[0], self.synth.sentence_len_range[1]),
        );
        kv("synth.multi_event_proportion", self.synth.multi_event_proportion.to_string());
        kv("synth.eventless_proportion", self.synth.eventless_proportion.to_string());
        kv("synth.vocab_size", self.synth.vocab_size.to_string());
        kv("synth.lexemes_per_type", self.synth.lexemes_per_type.to_string());
        kv("synth.trigger_pool_per_type", self.synth.trigger_pool_per_type.to_string());
        kv("strategy.kind", self.strategy.kind.clone());
        kv("strategy.domains", self.strategy.domains.join(","));
        kv("strategy.lambda_dom", self.strategy.lambda_dom.to_string());
        kv("strategy.lambda_grl", self.strategy.lambda_grl.to_string());
        kv("strategy.shared_dim", self.strategy.shared_dim.to_string());
        kv("strategy.private_dim", self.strategy.private_dim.to_string());
        kv("strategy.combine", self.strategy.combine.clone());
        for (k, p) in self.path_list() {
            kv(k, p.to_string());
        }
        s
    }
}

/// Rewrite the threshold in an existing config file, keeping every other
/// key; the file is round-tripped through its parsed form.
pub fn echo_threshold(path: &Path, tau: f64) -> Result<()> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
    let mut table: toml::Table = toml::from_str(&text)
        .map_err(|e| Error::invalid(format!("bad config: {}", one_line(&e.to_string()))))?;
    let decode = table
        .entry("decode")
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match decode {
        toml::Value::Table(t) => {
            t.insert("threshold".into(), toml::Value::Float(tau));
        }
        _ => return Err(Error::invalid("config key decode is not a section")),
    }
    let out = toml::to_string(&table)
        .map_err(|e| Error::invalid(format!("cannot render config: {e}")))?;
    fs::write(path, out)?;
    Ok(())
}

/// Error lines must stay machine-parseable: one line, no embedded newlines.
pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
