//! Experiment configuration and the pipeline stages run by the CLI.
//!
//! Every stage reads its inputs from the output directory, writes its
//! artifacts there and records the fully resolved configuration beside
//! them. Randomness comes from the root seed, split per stage with
//! [`derive_seed`].
//!
//! ```text
//! <out>/resolved_config.json
//! <out>/vocab.json
//! <out>/corpora/<domain>.tsv
//! <out>/tasks/{meta_train,meta_validation,meta_test}.json
//! <out>/checkpoints/{pretrained,meta_trained,pool_finetuned}.ckpt
//! <out>/reports/*.csv|*.txt|*.json|*.svg
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{FdCheck, FdReport, ParamGroup, ParamView};
use crate::baselines::{run_comparison, finetune_on_pool, AdaptConfig, AdaptationReport, Checkpoints, Strategy};
use crate::corpus::{
    learn_bpe, load_parallel, synth_domain, BaseLanguage, ParallelCorpus, RawCorpus, SentencePair,
    SyntheticDomainSpec, TokenizerMode, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{sweep_query, sweep_support, DecodeConfig, SweepContext, SweepResult};
use crate::meta::{meta_train_model, MetaTrainConfig, MetaTrainLog, Selection};
use crate::model::{
    init_model, load_checkpoint, loss_and_grad, loss_builder, save_checkpoint, Batch, Checkpoint, Mode,
    ModelParameters, TransformerConfig,
};
use crate::seed::derive_seed;
use crate::tasks::{build_meta_dataset, Budgets, MetaDataset, Split, SplitSpec, TaskManifest};
use crate::train::{pretrain, pretrain_checkpoint, resume_state, PretrainConfig, TrainRecord};

/// One domain, either generated or read from two aligned text files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSource {
    pub id: String,
    /// Generator chain such as `lexicon:3+reverse`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<String>,
    /// Number of generated pairs.
    #[serde(default)]
    pub pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
}

impl DomainSource {
    pub fn synthetic(id: &str, spec: &str, pairs: usize) -> Self {
        Self {
            id: id.to_string(),
            synthetic: Some(spec.to_string()),
            pairs,
            source: None,
            target: None,
        }
    }

    pub fn files(id: &str, source: impl Into<PathBuf>, target: impl Into<PathBuf>) -> Self {
        Self {
            id: id.to_string(),
            synthetic: None,
            pairs: 0,
            source: Some(source.into()),
            target: Some(target.into()),
        }
    }

    fn validate(&self) -> Result<()> {
        match (&self.synthetic, &self.source, &self.target) {
            (Some(spec), None, None) => {
                spec.parse::<SyntheticDomainSpec>()?;
                if self.pairs == 0 {
                    return Err(Error::Config(format!("domain `{}`: `pairs` must be positive", self.id)));
                }
                Ok(())
            }
            (None, Some(_), Some(_)) => Ok(()),
            _ => Err(Error::Config(format!(
                "domain `{}` needs either `synthetic` or both `source` and `target`",
                self.id
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub base: BaseLanguage,
    pub domains: Vec<DomainSource>,
    /// Domains used for pretraining. They never feed meta-learning tasks.
    pub pretrain_domains: Vec<String>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let mut domains = vec![DomainSource::synthetic("general", "copy", 4000)];
        for i in 1..=6 {
            domains.push(DomainSource::synthetic(&format!("d{i}"), &format!("lexicon:100:30+lexicon:{i}:20"), 3000));
        }
        Self {
            base: BaseLanguage::default(),
            domains,
            pretrain_domains: vec!["general".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub mode: TokenizerMode,
    /// Merge count in BPE mode.
    pub merges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Total meta-train support words held fixed across the support sweep.
    pub support_total: usize,
    pub support_sizes: Vec<usize>,
    pub query_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            support_total: 16_000,
            support_sizes: vec![250, 500, 1000, 2000],
            query_sizes: vec![125, 250, 500, 1000],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub samples: usize,
    pub epsilon: f64,
    pub sentences: usize,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            samples: 64,
            epsilon: 1e-5,
            sentences: 4,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub decode: DecodeConfig,
    /// Strategy letters for `adapt` and `compare`.
    pub strategies: Vec<String>,
    pub sweep: SweepConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            decode: DecodeConfig::default(),
            strategies: Strategy::ALL.iter().map(|s| s.letter().to_string()).collect(),
            sweep: SweepConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub tokenizer: TokenizerConfig,
    /// `vocab_size` 0 means "take it from the vocabulary".
    pub model: TransformerConfig,
    pub tasks: SplitSpec,
    pub pretrain: PretrainConfig,
    pub meta: MetaTrainConfig,
    pub adapt: AdaptConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let d = |i: usize| format!("d{i}");
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            corpus: CorpusConfig::default(),
            tokenizer: TokenizerConfig::default(),
            model: TransformerConfig::lab(0),
            tasks: SplitSpec {
                meta_train_domains: (1..=4).map(d).collect(),
                meta_validation_domains: Vec::new(),
                meta_test_domains: (5..=6).map(d).collect(),
                unseen_domains: true,
                train_tasks_per_domain: 16,
                validation_tasks_per_domain: 1,
                test_tasks_per_domain: 1,
                test_replicates: 3,
                train_budgets: Budgets {
                    support_words: 250,
                    query_words: 500,
                },
                eval_budgets: None,
            },
            pretrain: PretrainConfig::default(),
            meta: MetaTrainConfig::default(),
            adapt: AdaptConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads and validates a JSON config. Missing fields take defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.domains.is_empty() {
            return Err(Error::Config("corpus.domains is empty".into()));
        }
        let mut ids = BTreeSet::new();
        for d in &c.domains {
            d.validate()?;
            if d.id.is_empty() || d.id.contains(['/', '\\']) {
                return Err(Error::Config(format!("domain id `{}` must be a plain file name", d.id)));
            }
            if !ids.insert(d.id.as_str()) {
                return Err(Error::Config(format!("duplicate domain id `{}`", d.id)));
            }
        }
        if c.pretrain_domains.is_empty() {
            return Err(Error::Config("corpus.pretrain_domains is empty".into()));
        }
        let pre: BTreeSet<&str> = c.pretrain_domains.iter().map(String::as_str).collect();
        for name in &pre {
            if !ids.contains(name) {
                return Err(Error::Config(format!("pretrain domain `{name}` is not in corpus.domains")));
            }
        }
        let t = &self.tasks;
        for name in t.meta_train_domains.iter().chain(&t.meta_validation_domains).chain(&t.meta_test_domains) {
            if !ids.contains(name.as_str()) {
                return Err(Error::Config(format!("task domain `{name}` is not in corpus.domains")));
            }
            if pre.contains(name.as_str()) {
                return Err(Error::Config(format!("task domain `{name}` is also a pretrain domain")));
            }
        }
        if ids.len() == pre.len() {
            return Err(Error::Config("no domains left for meta-learning tasks".into()));
        }
        if self.tokenizer.mode == TokenizerMode::Bpe && self.tokenizer.merges == 0 {
            return Err(Error::Config("tokenizer.merges must be positive in bpe mode".into()));
        }
        c.base.validate()?;
        self.meta.validate()?;
        self.strategies()?;
        if self.eval.decode.beam_size == 0 {
            return Err(Error::Config("eval.decode.beam_size must be positive".into()));
        }
        let s = &self.eval.sweep;
        if s.seeds.is_empty() {
            return Err(Error::Config("eval.sweep.seeds is empty".into()));
        }
        if s.support_sizes.contains(&0) || s.query_sizes.contains(&0) {
            return Err(Error::Config("sweep sizes must be positive".into()));
        }
        let g = &self.eval.gradcheck;
        if g.samples == 0 || g.sentences == 0 || g.epsilon <= 0.0 || g.tolerance <= 0.0 {
            return Err(Error::Config("eval.gradcheck fields must be positive".into()));
        }
        if self.model.vocab_size != 0 {
            self.model.validate()?;
        }
        Ok(())
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>> {
        parse_strategies(&self.eval.strategies)
    }

    pub fn artifacts(&self) -> Artifacts {
        Artifacts::new(&self.output_dir)
    }

    /// The model config with `vocab_size` taken from `vocab`.
    pub fn model_for(&self, vocab: &Vocabulary) -> Result<TransformerConfig> {
        let mut m = self.model.clone();
        if m.vocab_size == 0 {
            m.vocab_size = vocab.len();
        } else if m.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "model.vocab_size {} differs from the vocabulary's {} tokens",
                m.vocab_size,
                vocab.len()
            )));
        }
        m.validate()?;
        Ok(m)
    }

    fn is_pretrain_domain(&self, id: &str) -> bool {
        self.corpus.pretrain_domains.iter().any(|d| d == id)
    }
}

pub fn parse_strategies(letters: &[String]) -> Result<Vec<Strategy>> {
    if letters.is_empty() {
        return Err(Error::Config("no strategies selected".into()));
    }
    let mut out: Vec<Strategy> = letters.iter().map(|l| Strategy::from_letter(l.trim())).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

/// Paths inside an output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.root.join("resolved_config.json")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.json")
    }

    pub fn corpus(&self, domain: &str) -> PathBuf {
        self.root.join("corpora").join(format!("{domain}.tsv"))
    }

    pub fn manifest(&self, split: Split) -> PathBuf {
        self.root.join("tasks").join(format!("{}.json", split.as_str()))
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
}

pub const PRETRAINED: &str = "pretrained";
pub const META_TRAINED: &str = "meta_trained";
pub const POOL_FINETUNED: &str = "pool_finetuned";
const SPLITS: [Split; 3] = [Split::MetaTrain, Split::MetaValidation, Split::MetaTest];

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    ensure_parent(path)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn save_model(model: &ModelParameters<f32>, path: &Path) -> Result<PathBuf> {
    ensure_parent(path)?;
    save_checkpoint(model, path)?;
    Ok(path.to_path_buf())
}

fn write_resolved(cfg: &ExperimentConfig, vocab: Option<&Vocabulary>) -> Result<PathBuf> {
    let mut resolved = cfg.clone();
    if let Some(v) = vocab {
        resolved.model = cfg.model_for(v)?;
    }
    write(&cfg.artifacts().resolved_config(), serde_json::to_string_pretty(&resolved)? + "\n")
}

/// Builds every domain and the joint vocabulary in memory.
pub fn build_corpora(cfg: &ExperimentConfig) -> Result<(Vec<RawCorpus>, Vocabulary)> {
    cfg.validate()?;
    let corpus_seed = derive_seed(cfg.seed, "corpus");
    let raws = cfg
        .corpus
        .domains
        .iter()
        .map(|d| match (&d.synthetic, &d.source, &d.target) {
            (Some(spec), _, _) => synth_domain(&d.id, &spec.parse()?, &cfg.corpus.base, d.pairs, corpus_seed),
            (None, Some(s), Some(t)) => Ok(load_parallel(s, t, &d.id)?.0),
            _ => unreachable!("validated above"),
        })
        .collect::<Result<Vec<_>>>()?;
    let lines = raws.iter().flat_map(RawCorpus::lines);
    let vocab = match cfg.tokenizer.mode {
        TokenizerMode::Word => Vocabulary::build_word(lines)?,
        TokenizerMode::Bpe => learn_bpe(lines, cfg.tokenizer.merges)?,
    };
    Ok((raws, vocab))
}

/// Writes one TSV per domain and the vocabulary.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let (raws, vocab) = build_corpora(cfg)?;
    let a = cfg.artifacts();
    let mut out = Vec::new();
    for r in &raws {
        out.push(write(&a.corpus(&r.domain_id), r.to_tsv())?);
    }
    out.push(write(&a.vocab(), vocab.to_json()? + "\n")?);
    out.push(write_resolved(cfg, Some(&vocab))?);
    Ok(out)
}

/// Output of `prepare`, read back from disk.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub corpora: Vec<ParallelCorpus>,
}

impl Prepared {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let a = cfg.artifacts();
        let vocab = Vocabulary::load(&a.vocab())?;
        let corpora = cfg
            .corpus
            .domains
            .iter()
            .map(|d| RawCorpus::from_tsv(&d.id, &read(&a.corpus(&d.id))?)?.tokenize(&vocab))
            .collect::<Result<_>>()?;
        Ok(Self { vocab, corpora })
    }

    pub fn general_pairs(&self, cfg: &ExperimentConfig) -> Vec<SentencePair> {
        self.corpora
            .iter()
            .filter(|c| cfg.is_pretrain_domain(&c.domain_id))
            .flat_map(|c| c.pairs.iter().cloned())
            .collect()
    }

    /// Domains available to meta-learning tasks.
    pub fn task_corpora(&self, cfg: &ExperimentConfig) -> Vec<ParallelCorpus> {
        self.corpora.iter().filter(|c| !cfg.is_pretrain_domain(&c.domain_id)).cloned().collect()
    }
}

pub fn make_tasks(cfg: &ExperimentConfig) -> Result<(MetaDataset, Vec<PathBuf>)> {
    let prep = Prepared::load(cfg)?;
    let ds = build_meta_dataset(&prep.task_corpora(cfg), &cfg.tasks, derive_seed(cfg.seed, "tasks"))?;
    let a = cfg.artifacts();
    let all = ds.manifest();
    let mut out = Vec::new();
    for split in SPLITS {
        let m = TaskManifest {
            tasks: all.tasks.iter().filter(|e| e.split == split).cloned().collect(),
        };
        let path = a.manifest(split);
        ensure_parent(&path)?;
        m.save(&path)?;
        out.push(path);
    }
    out.push(write_resolved(cfg, Some(&prep.vocab))?);
    Ok((ds, out))
}

pub fn load_tasks(cfg: &ExperimentConfig, prep: &Prepared) -> Result<MetaDataset> {
    let a = cfg.artifacts();
    let mut all = TaskManifest::default();
    for split in SPLITS {
        all.tasks.extend(TaskManifest::load(&a.manifest(split))?.tasks);
    }
    MetaDataset::from_manifest(&all, &prep.task_corpora(cfg))
}

#[derive(Debug, Clone)]
pub struct PretrainStage {
    pub model: ModelParameters<f32>,
    pub records: Vec<TrainRecord>,
    pub written: Vec<PathBuf>,
}

/// Pretraining in checkpointed chunks. A failing chunk leaves the last
/// saved checkpoint in place. With `resume`, an existing checkpoint and its
/// optimizer state are continued up to `pretrain.steps`.
pub fn pretrain_stage(cfg: &ExperimentConfig, resume: bool, deterministic: bool) -> Result<PretrainStage> {
    let prep = Prepared::load(cfg)?;
    let a = cfg.artifacts();
    let ckpt_path = a.checkpoint(PRETRAINED);
    let metrics_path = a.report("pretrain_metrics.csv");
    let mut written = vec![write_resolved(cfg, Some(&prep.vocab))?];
    let (mut model, mut adam, mut previous) = if resume && ckpt_path.exists() {
        let c = Checkpoint::<f32>::load(&ckpt_path)?;
        let state = resume_state(&c, cfg.pretrain.scope)?;
        let csv = if metrics_path.exists() { read(&metrics_path)? } else { String::new() };
        (c.model, state, csv)
    } else {
        let m = init_model::<f32>(&cfg.model_for(&prep.vocab)?, derive_seed(cfg.seed, "init"))?;
        (m, None, String::new())
    };
    if model.config != cfg.model_for(&prep.vocab)? {
        return Err(Error::Config(format!(
            "{} was trained with a different model config",
            ckpt_path.display()
        )));
    }
    let general = prep.general_pairs(cfg);
    let seed = derive_seed(cfg.seed, "pretrain");
    let every = match cfg.pretrain.checkpoint_every {
        0 => cfg.pretrain.steps.max(1),
        n => n,
    };
    let mut records = Vec::new();
    loop {
        let done = model.counters.pretrain_steps;
        let target = (done + every).min(cfg.pretrain.steps).max(done);
        let chunk = PretrainConfig {
            steps: target,
            ..cfg.pretrain.clone()
        };
        let out = pretrain(&model, &general, &chunk, adam.take(), seed, deterministic)?;
        // chunk ends are not logging points of the whole run
        let log_every = cfg.pretrain.log_every.max(1);
        records.extend(
            out.records
                .iter()
                .filter(|r| r.step % log_every == 0 || r.step == cfg.pretrain.steps)
                .cloned(),
        );
        let c = pretrain_checkpoint(&out);
        ensure_parent(&ckpt_path)?;
        c.save(&ckpt_path)?;
        model = out.model;
        adam = Some(out.adam);
        if target >= cfg.pretrain.steps {
            break;
        }
    }
    written.push(ckpt_path);
    let csv = crate::meta::to_csv(&records)?;
    let csv = match previous.is_empty() {
        true => csv,
        false => {
            previous.extend(csv.lines().skip(1).map(|l| format!("{l}\n")));
            previous
        }
    };
    written.push(write(&metrics_path, csv)?);
    Ok(PretrainStage { model, records, written })
}

fn load_model(cfg: &ExperimentConfig, name: &str) -> Result<ModelParameters<f32>> {
    load_checkpoint(&cfg.artifacts().checkpoint(name))
}

pub fn meta_train_stage(cfg: &ExperimentConfig, deterministic: bool) -> Result<(MetaTrainLog, Vec<PathBuf>)> {
    let prep = Prepared::load(cfg)?;
    let ds = load_tasks(cfg, &prep)?;
    let pretrained = load_model(cfg, PRETRAINED)?;
    let mut meta = cfg.meta.clone();
    meta.parallel &= !deterministic;
    let bleu = (meta.selection == Selection::Bleu).then_some((&prep.vocab, cfg.eval.decode));
    let (model, log) = meta_train_model(&pretrained, &ds, &meta, bleu, derive_seed(cfg.seed, "meta"), deterministic)?;
    let a = cfg.artifacts();
    let written = vec![
        write_resolved(cfg, Some(&prep.vocab))?,
        save_model(&model, &a.checkpoint(META_TRAINED))?,
        write(&a.report("meta_train_log.csv"), log.to_csv()?)?,
        write(&a.report("meta_validation.csv"), log.epochs_csv()?)?,
    ];
    Ok((log, written))
}

fn pool_checkpoint(
    cfg: &ExperimentConfig,
    pretrained: &ModelParameters<f32>,
    ds: &MetaDataset,
    written: &mut Vec<PathBuf>,
) -> Result<(ModelParameters<f32>, usize)> {
    let path = cfg.artifacts().checkpoint(POOL_FINETUNED);
    if path.exists() {
        let c = Checkpoint::<f32>::load(&path)?;
        let words = c.aux_meta["pool_words"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint(format!("{} has no `pool_words`", path.display())))?;
        return Ok((c.model, words as usize));
    }
    let pool = finetune_on_pool(pretrained, &ds.meta_train, &cfg.adapt.pool, derive_seed(cfg.seed, "pool"))?;
    let mut c = Checkpoint::new(pool.model.model.clone());
    c.aux_meta = serde_json::json!({ "pool_words": pool.pool_words, "epoch_losses": pool.model.epoch_losses });
    ensure_parent(&path)?;
    c.save(&path)?;
    written.push(path);
    Ok((pool.model.model, pool.pool_words))
}

fn comparison(
    cfg: &ExperimentConfig,
    strategies: &[Strategy],
    written: &mut Vec<PathBuf>,
) -> Result<(AdaptationReport, Prepared)> {
    let prep = Prepared::load(cfg)?;
    let ds = load_tasks(cfg, &prep)?;
    let pretrained = load_model(cfg, PRETRAINED)?;
    let pool = match strategies.contains(&Strategy::FineTuneOnMetaTrainPool) {
        true => Some(pool_checkpoint(cfg, &pretrained, &ds, written)?),
        false => None,
    };
    let meta = match strategies.contains(&Strategy::MetaMt) {
        true => Some(load_model(cfg, META_TRAINED)?),
        false => None,
    };
    let cks = Checkpoints {
        pretrained: &pretrained,
        pool: pool.as_ref().map(|(m, w)| (m, *w)),
        meta: meta.as_ref(),
    };
    let report = run_comparison(
        &ds.test_replicates(),
        strategies,
        &cks,
        &cfg.adapt,
        &prep.vocab,
        &cfg.eval.decode,
        derive_seed(cfg.seed, "compare"),
    )?;
    written.push(write_resolved(cfg, Some(&prep.vocab))?);
    Ok((report, prep))
}

/// Per-task scores for each strategy, as JSON.
pub fn adapt_stage(cfg: &ExperimentConfig, strategies: &[Strategy]) -> Result<(AdaptationReport, Vec<PathBuf>)> {
    let mut written = Vec::new();
    let (report, _) = comparison(cfg, strategies, &mut written)?;
    let json = serde_json::to_string_pretty(&report.results)? + "\n";
    written.push(write(&cfg.artifacts().report("adapt.json"), json)?);
    Ok((report, written))
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    domain: &'a str,
    strategy: &'static str,
    zero_shot_mean: f64,
    zero_shot_std: f64,
    adapted_mean: f64,
    adapted_std: f64,
}

/// The strategy-by-domain table with per-task and per-cell CSVs.
pub fn compare_stage(cfg: &ExperimentConfig, strategies: &[Strategy]) -> Result<(AdaptationReport, Vec<PathBuf>)> {
    let mut written = Vec::new();
    let (report, _) = comparison(cfg, strategies, &mut written)?;
    let a = cfg.artifacts();
    let zero = report.cells(true);
    let adapted = report.cells(false);
    let rows: Vec<SummaryRow> = adapted
        .iter()
        .map(|((domain, s), adapted)| {
            let z = &zero[&(domain.clone(), *s)];
            SummaryRow {
                domain,
                strategy: s.letter(),
                zero_shot_mean: z.mean,
                zero_shot_std: z.std,
                adapted_mean: adapted.mean,
                adapted_std: adapted.std,
            }
        })
        .collect();
    written.push(write(&a.report("comparison.txt"), report.table())?);
    written.push(write(&a.report("comparison_tasks.csv"), report.to_csv()?)?);
    written.push(write(&a.report("comparison_summary.csv"), crate::meta::to_csv(&rows)?)?);
    Ok((report, written))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepSelection {
    Support,
    Query,
    Both,
}

pub fn sweep_stage(cfg: &ExperimentConfig, which: SweepSelection, deterministic: bool) -> Result<(Vec<SweepResult>, Vec<PathBuf>)> {
    let prep = Prepared::load(cfg)?;
    let pretrained = load_model(cfg, PRETRAINED)?;
    let corpora = prep.task_corpora(cfg);
    let mut meta = cfg.meta.clone();
    meta.parallel &= !deterministic;
    let sw = &cfg.eval.sweep;
    let ctx = SweepContext {
        pretrained: &pretrained,
        corpora: &corpora,
        split: &cfg.tasks,
        meta: &meta,
        adapt: &cfg.adapt,
        vocab: &prep.vocab,
        decode: &cfg.eval.decode,
        seeds: &sw.seeds,
    };
    let mut results = Vec::new();
    if which != SweepSelection::Query {
        results.push(("support", sweep_support(&ctx, sw.support_total, &sw.support_sizes)?));
    }
    if which != SweepSelection::Support {
        results.push(("query", sweep_query(&ctx, &sw.query_sizes)?));
    }
    let a = cfg.artifacts();
    let mut written = vec![write_resolved(cfg, Some(&prep.vocab))?];
    for (name, r) in &results {
        written.push(write(&a.report(&format!("sweep_{name}.csv")), r.to_csv()?)?);
        written.push(write(&a.report(&format!("sweep_{name}.svg")), r.to_svg())?);
    }
    Ok((results.into_iter().map(|(_, r)| r).collect(), written))
}

/// Perturbs adapter weights so their gradients are not trivially zero.
fn live_adapters(model: &mut ModelParameters<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..model.params.len() {
        if model.params.group(i) == ParamGroup::Adapter {
            for x in model.params.get_mut(i).data_mut() {
                *x += rng.random_range(-0.2..0.2);
            }
        }
    }
}

/// Finite-difference check of the configured model in f64 on a few
/// general-domain sentences. `corrupt` negates the analytic gradient, which
/// must make the check fail.
pub fn gradcheck(cfg: &ExperimentConfig, model: &TransformerConfig, pairs: &[SentencePair], corrupt: bool) -> Result<FdReport> {
    let g = &cfg.eval.gradcheck;
    let take = g.sentences.min(pairs.len());
    if take == 0 {
        return Err(Error::EmptyCorpus);
    }
    let seed = derive_seed(cfg.seed, "gradcheck");
    let mut m = init_model::<f64>(model, seed)?;
    live_adapters(&mut m, derive_seed(seed, "adapters"));
    let batch = Batch::new("gradcheck", &pairs[..take])?;
    let view = ParamView::all(&m.params);
    let dropout_seed = derive_seed(seed, "dropout");
    let loss = loss_builder(&m, &batch, Mode::Train, dropout_seed);
    let check = FdCheck::new(g.epsilon, g.samples, seed);
    let mut bundle = loss_and_grad(&m, &view, &batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(dropout_seed))?;
    if corrupt {
        for gr in &mut bundle.grads {
            *gr = gr.scale(-1.0);
        }
    }
    check.compare(&m.params, &view, &bundle, &loss)
}

/// Runs [`gradcheck`] on corpora built in memory and writes the report.
/// Exceeding the tolerance is a numerical error raised after writing.
pub fn gradcheck_stage(cfg: &ExperimentConfig, corrupt: bool) -> Result<(FdReport, Vec<PathBuf>)> {
    let (raws, vocab) = build_corpora(cfg)?;
    let pairs: Vec<SentencePair> = raws
        .iter()
        .filter(|r| cfg.is_pretrain_domain(&r.domain_id))
        .map(|r| r.tokenize(&vocab))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flat_map(|c| c.pairs)
        .collect();
    let report = gradcheck(cfg, &cfg.model_for(&vocab)?, &pairs, corrupt)?;
    let a = cfg.artifacts();
    let written = vec![
        write_resolved(cfg, Some(&vocab))?,
        write(&a.report("gradcheck.csv"), report.to_csv())?,
        write(&a.report("gradcheck.txt"), report.to_table())?,
    ];
    let tol = cfg.eval.gradcheck.tolerance;
    if !(report.max_rel_error < tol) {
        return Err(Error::GradientCheck {
            max_rel_error: report.max_rel_error,
            tolerance: tol,
        });
    }
    Ok((report, written))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 4}"#).unwrap();
        assert_eq!(partial.seed, 4);
        assert_eq!(partial.tasks, c.tasks);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sede": 4}"#).is_err());
        let mut c = ExperimentConfig::default();
        c.tasks.meta_test_domains.push("nowhere".into());
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::default();
        c.corpus.domains[1].source = Some("x.txt".into());
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::default();
        c.eval.strategies = vec!["E".into()];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::default();
        c.tasks.meta_train_domains.push("general".into());
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn strategy_lists_parse_sorted_and_deduplicated() {
        let s = parse_strategies(&["d".into(), "A".into(), "D".into()]).unwrap();
        assert_eq!(s, vec![Strategy::NoFineTune, Strategy::MetaMt]);
        assert!(parse_strategies(&[]).is_err());
    }
}
