//! The test-time protocol and the four strategies compared on meta-test
//! tasks: A no adaptation, B fine-tune on the support set, C fine-tune on
//! the pooled meta-train supports, D fine-tune a meta-trained model.

use std::collections::BTreeMap;
use std::fmt::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{SentencePair, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_bleu, summarize, DecodeConfig, Summary};
use crate::meta::MetaOptimizer;
use crate::model::{CheckpointKind, ModelParameters, ParameterScope};
use crate::seed::derive_seed;
use crate::tasks::Task;
use crate::tensor::Scalar;
use crate::train::{fine_tune, FineTuneConfig, FineTuneOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// A: decode with the pretrained model.
    NoFineTune,
    /// B: fine-tune the pretrained model on the task's support set.
    FineTuneOnTask,
    /// C: decode with a model fine-tuned on all meta-train supports.
    FineTuneOnMetaTrainPool,
    /// D: fine-tune the meta-trained model on the task's support set.
    MetaMt,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::NoFineTune,
        Strategy::FineTuneOnTask,
        Strategy::FineTuneOnMetaTrainPool,
        Strategy::MetaMt,
    ];

    pub fn letter(self) -> &'static str {
        match self {
            Strategy::NoFineTune => "A",
            Strategy::FineTuneOnTask => "B",
            Strategy::FineTuneOnMetaTrainPool => "C",
            Strategy::MetaMt => "D",
        }
    }

    pub fn from_letter(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.letter().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}` (expected A, B, C or D)")))
    }

    fn accepts(self, kind: CheckpointKind) -> bool {
        match self {
            Strategy::NoFineTune | Strategy::FineTuneOnTask => {
                matches!(kind, CheckpointKind::Pretrained | CheckpointKind::Initialized)
            }
            Strategy::FineTuneOnMetaTrainPool => kind == CheckpointKind::FineTuned,
            Strategy::MetaMt => kind == CheckpointKind::MetaTrained,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.letter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    /// Test-time fine-tuning, shared by B and D.
    pub test_time: FineTuneConfig,
    /// Pool fine-tuning for C.
    pub pool: FineTuneConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            test_time: FineTuneConfig::default(),
            pool: FineTuneConfig {
                epochs: 3,
                optimizer: MetaOptimizer::Adam,
                lr: 3e-4,
                warmup_steps: 0,
                batch_sentences: 32,
                scope: ParameterScope::AllParameters,
                ..FineTuneConfig::default()
            },
        }
    }
}

impl AdaptConfig {
    /// Pool settings derived from a pretraining peak rate.
    pub fn with_pool_rate_from_peak(mut self, peak: f64) -> Self {
        self.pool.lr = peak / 10.0;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationResult {
    pub strategy: Strategy,
    pub task_id: String,
    pub domain_id: String,
    pub replicate: usize,
    pub zero_shot_bleu: f64,
    pub adapted_bleu: f64,
    pub tokens_seen: usize,
    pub seed: u64,
}

fn check_kind<T>(strategy: Strategy, model: &ModelParameters<T>) -> Result<()> {
    if !strategy.accepts(model.kind) {
        return Err(Error::Config(format!(
            "strategy {strategy} cannot run from a {:?} checkpoint",
            model.kind
        )));
    }
    Ok(())
}

/// Scores one strategy on one task. `pool_words` is the C checkpoint's
/// training-pool size; other strategies ignore it.
#[allow(clippy::too_many_arguments)]
pub fn adapt_and_eval<T: Scalar>(
    strategy: Strategy,
    checkpoint: &ModelParameters<T>,
    task: &Task,
    config: &FineTuneConfig,
    vocab: &Vocabulary,
    decode: &DecodeConfig,
    pool_words: usize,
    seed: u64,
) -> Result<AdaptationResult> {
    let run = || -> Result<AdaptationResult> {
        check_kind(strategy, checkpoint)?;
        let zero_shot = evaluate_bleu(checkpoint, vocab, &task.query, decode)?.score;
        let (adapted, tokens_seen) = match strategy {
            Strategy::NoFineTune => (zero_shot, 0),
            Strategy::FineTuneOnMetaTrainPool => (zero_shot, pool_words),
            Strategy::FineTuneOnTask | Strategy::MetaMt => {
                let ft = fine_tune(checkpoint, &task.support, config, derive_seed(seed, &task.task_id))?;
                let bleu = if ft.steps == 0 {
                    zero_shot
                } else {
                    evaluate_bleu(&ft.model, vocab, &task.query, decode)?.score
                };
                (bleu, task.support_words())
            }
        };
        Ok(AdaptationResult {
            strategy,
            task_id: task.task_id.clone(),
            domain_id: task.domain_id.clone(),
            replicate: task.replicate,
            zero_shot_bleu: zero_shot,
            adapted_bleu: adapted,
            tokens_seen,
            seed,
        })
    };
    run().map_err(|e| e.in_task(&task.task_id))
}

#[derive(Debug, Clone)]
pub struct PoolOutcome<T> {
    pub model: FineTuneOutcome<T>,
    pub pool_words: usize,
}

/// Strategy C's checkpoint: fine-tuning on the concatenated meta-train
/// support sets.
pub fn finetune_on_pool<T: Scalar>(
    pretrained: &ModelParameters<T>,
    meta_train: &[Task],
    config: &FineTuneConfig,
    seed: u64,
) -> Result<PoolOutcome<T>> {
    if meta_train.is_empty() {
        return Err(Error::Config("pool fine-tuning needs meta-train tasks".into()));
    }
    let pool: Vec<SentencePair> = meta_train.iter().flat_map(|t| t.support.iter().cloned()).collect();
    let pool_words = meta_train.iter().map(Task::support_words).sum();
    let mut model = fine_tune(pretrained, &pool, config, derive_seed(seed, "pool"))?;
    model.model.kind = CheckpointKind::FineTuned;
    Ok(PoolOutcome { model, pool_words })
}

/// Checkpoints for the strategies being compared.
#[derive(Debug, Clone, Copy)]
pub struct Checkpoints<'a, T> {
    pub pretrained: &'a ModelParameters<T>,
    pub pool: Option<(&'a ModelParameters<T>, usize)>,
    pub meta: Option<&'a ModelParameters<T>>,
}

impl<'a, T> Checkpoints<'a, T> {
    fn for_strategy(&self, s: Strategy) -> Result<(&'a ModelParameters<T>, usize)> {
        let missing = |what: &str| Error::Config(format!("strategy {s} needs a {what} checkpoint"));
        match s {
            Strategy::NoFineTune | Strategy::FineTuneOnTask => Ok((self.pretrained, 0)),
            Strategy::FineTuneOnMetaTrainPool => self.pool.ok_or_else(|| missing("pool fine-tuned")),
            Strategy::MetaMt => self.meta.map(|m| (m, 0)).ok_or_else(|| missing("meta-trained")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationReport {
    pub results: Vec<AdaptationResult>,
    pub strategies: Vec<Strategy>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    domain: &'a str,
    strategy: &'a str,
    replicate: usize,
    zero_shot_bleu: f64,
    adapted_bleu: f64,
    tokens_seen: usize,
    seed: u64,
}

impl AdaptationReport {
    pub fn to_csv(&self) -> Result<String> {
        let rows: Vec<CsvRow> = self
            .results
            .iter()
            .map(|r| CsvRow {
                domain: &r.domain_id,
                strategy: r.strategy.letter(),
                replicate: r.replicate,
                zero_shot_bleu: r.zero_shot_bleu,
                adapted_bleu: r.adapted_bleu,
                tokens_seen: r.tokens_seen,
                seed: r.seed,
            })
            .collect();
        crate::meta::to_csv(&rows)
    }

    /// Per (domain, strategy): tasks of one replicate are averaged first,
    /// then mean and sample std are taken across replicates.
    pub fn cells(&self, zero_shot: bool) -> BTreeMap<(String, Strategy), Summary> {
        let per_rep = aggregate(self.results.iter().map(|r| {
            let v = if zero_shot { r.zero_shot_bleu } else { r.adapted_bleu };
            ((r.domain_id.clone(), r.strategy, r.replicate), v)
        }));
        aggregate(per_rep.into_iter().map(|((d, s, _), sum)| ((d, s), sum.mean)))
    }

    /// Mean over domains of each strategy's per-domain mean.
    pub fn strategy_means(&self) -> BTreeMap<Strategy, f64> {
        aggregate(self.cells(false).into_iter().map(|((_, s), c)| (s, c.mean)))
            .into_iter()
            .map(|(s, c)| (s, c.mean))
            .collect()
    }

    /// Aligned table: domains as rows, strategies as columns, `mean ± std`.
    pub fn table(&self) -> String {
        let cells = self.cells(false);
        let domains: Vec<&String> = {
            let mut d: Vec<&String> = cells.keys().map(|(d, _)| d).collect();
            d.dedup();
            d
        };
        let width = domains.iter().map(|d| d.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = write!(s, "{:<width$}", "domain");
        for st in &self.strategies {
            let _ = write!(s, "  {:>15}", st.letter());
        }
        s.push('\n');
        for d in &domains {
            let _ = write!(s, "{d:<width$}");
            for st in &self.strategies {
                match cells.get(&((*d).clone(), *st)) {
                    Some(c) => {
                        let _ = write!(s, "  {:>15}", format!("{:.2} ± {:.2}", c.mean, c.std));
                    }
                    None => {
                        let _ = write!(s, "  {:>15}", "-");
                    }
                }
            }
            s.push('\n');
        }
        let means = self.strategy_means();
        let _ = write!(s, "{:<width$}", "mean");
        for st in &self.strategies {
            let _ = write!(s, "  {:>15}", means.get(st).map(|m| format!("{m:.2}")).unwrap_or_else(|| "-".into()));
        }
        s.push('\n');
        s
    }
}

/// Runs every strategy on every task of every meta-test replicate.
#[allow(clippy::too_many_arguments)]
pub fn run_comparison<T: Scalar>(
    replicates: &[Vec<&Task>],
    strategies: &[Strategy],
    checkpoints: &Checkpoints<'_, T>,
    config: &AdaptConfig,
    vocab: &Vocabulary,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<AdaptationReport> {
    if replicates.is_empty() || replicates.iter().any(Vec::is_empty) {
        return Err(Error::Config("comparison needs at least one non-empty meta-test replicate".into()));
    }
    let mut jobs = Vec::new();
    for tasks in replicates {
        for t in tasks {
            for &s in strategies {
                let (ck, pool_words) = checkpoints.for_strategy(s)?;
                jobs.push((s, ck, *t, pool_words));
            }
        }
    }
    let results = jobs
        .par_iter()
        .map(|&(s, ck, t, pool_words)| adapt_and_eval(s, ck, t, &config.test_time, vocab, decode, pool_words, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(AdaptationReport {
        results,
        strategies: strategies.to_vec(),
    })
}

/// Mean of `d − b` per replicate differences, used for advantage checks.
pub fn advantage(report: &AdaptationReport, over: Strategy, under: Strategy) -> Summary {
    let means = |s: Strategy| -> BTreeMap<usize, f64> {
        aggregate(
            report
                .results
                .iter()
                .filter(|r| r.strategy == s)
                .map(|r| (r.replicate, r.adapted_bleu)),
        )
        .into_iter()
        .map(|(k, v)| (k, v.mean))
        .collect()
    };
    let (a, b) = (means(over), means(under));
    let diffs: Vec<f64> = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x - y)).collect();
    summarize(&diffs)
}
