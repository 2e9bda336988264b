use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_bleu, line_plot_svg, summarize, DecodeConfig};
use crate::baselines::{run_comparison, AdaptConfig, AdaptationReport, Checkpoints, Strategy};
use crate::corpus::{ParallelCorpus, SentencePair, Vocabulary};
use crate::error::{Error, Result};
use crate::meta::{meta_train_model, MetaTrainConfig};
use crate::model::{ModelParameters, ParameterScope};
use crate::seed::derive_seed;
use crate::tasks::{build_meta_dataset, sweep_plan, Budgets, MetaDataset, SplitSpec};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SupportSize,
    QuerySize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub size: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: usize,
    pub strategy: Strategy,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.rows.iter().map(|r| r.size).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let mut groups: BTreeMap<(usize, Strategy), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.size, r.strategy)).or_default().push(r.bleu);
        }
        groups
            .into_iter()
            .map(|((size, strategy), v)| {
                let s = summarize(&v);
                SweepPoint {
                    size,
                    strategy,
                    mean: s.mean,
                    std: s.std,
                    n: s.n,
                }
            })
            .collect()
    }

    /// Per seed, `over − under` BLEU at each size.
    pub fn advantages(&self, over: Strategy, under: Strategy) -> BTreeMap<u64, Vec<(usize, f64)>> {
        let get = |s: Strategy| -> BTreeMap<(u64, usize), f64> {
            self.rows
                .iter()
                .filter(|r| r.strategy == s)
                .map(|r| ((r.seed, r.size), r.bleu))
                .collect()
        };
        let (a, b) = (get(over), get(under));
        let mut out: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
        for (&(seed, size), x) in &a {
            if let Some(y) = b.get(&(seed, size)) {
                out.entry(seed).or_default().push((size, x - y));
            }
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        crate::meta::to_csv(&self.rows)
    }

    pub fn to_svg(&self) -> String {
        let mut series: BTreeMap<Strategy, Vec<(f64, f64)>> = BTreeMap::new();
        for p in self.points() {
            series.entry(p.strategy).or_default().push((p.size as f64, p.mean));
        }
        let named: Vec<(String, Vec<(f64, f64)>)> = series.into_iter().map(|(s, v)| (label(s).to_string(), v)).collect();
        let x = match self.axis {
            SweepAxis::SupportSize => "support words per task",
            SweepAxis::QuerySize => "query words per task",
        };
        line_plot_svg("adapted BLEU", x, "BLEU", &named)
    }
}

fn label(s: Strategy) -> &'static str {
    match s {
        Strategy::NoFineTune => "A no fine-tuning",
        Strategy::FineTuneOnTask => "B fine-tuning",
        Strategy::FineTuneOnMetaTrainPool => "C pool fine-tuning",
        Strategy::MetaMt => "D meta-learned",
    }
}

/// Everything a sweep point needs besides its own budgets.
#[derive(Debug, Clone, Copy)]
pub struct SweepContext<'a, T> {
    pub pretrained: &'a ModelParameters<T>,
    pub corpora: &'a [ParallelCorpus],
    pub split: &'a SplitSpec,
    pub meta: &'a MetaTrainConfig,
    pub adapt: &'a AdaptConfig,
    pub vocab: &'a Vocabulary,
    pub decode: &'a DecodeConfig,
    pub seeds: &'a [u64],
}

impl<T: Scalar> SweepContext<'_, T> {
    fn train_domain_count(&self) -> usize {
        if self.split.meta_train_domains.is_empty() {
            self.corpora.len()
        } else {
            self.split.meta_train_domains.len()
        }
    }

    /// Meta-trains on `split` and compares D with B on its meta-test tasks.
    fn point(&self, axis: SweepAxis, size: usize, split: &SplitSpec, seed: u64) -> Result<Vec<SweepRow>> {
        let ds = build_meta_dataset(self.corpora, split, derive_seed(seed, "tasks"))?;
        let report = compare_d_b(self, &ds, seed)?;
        Ok(report
            .strategy_means()
            .into_iter()
            .map(|(strategy, bleu)| SweepRow {
                axis,
                size,
                strategy,
                seed,
                bleu,
            })
            .collect())
    }
}

fn compare_d_b<T: Scalar>(ctx: &SweepContext<'_, T>, ds: &MetaDataset, seed: u64) -> Result<AdaptationReport> {
    let (meta, _) = meta_train_model(ctx.pretrained, ds, ctx.meta, None, derive_seed(seed, "meta"), true)?;
    let cks = Checkpoints {
        pretrained: ctx.pretrained,
        pool: None,
        meta: Some(&meta),
    };
    run_comparison(
        &ds.test_replicates(),
        &[Strategy::FineTuneOnTask, Strategy::MetaMt],
        &cks,
        ctx.adapt,
        ctx.vocab,
        ctx.decode,
        seed,
    )
}

fn run_points<T: Scalar>(
    ctx: &SweepContext<'_, T>,
    axis: SweepAxis,
    points: Vec<(usize, SplitSpec)>,
) -> Result<SweepResult> {
    if ctx.seeds.is_empty() {
        return Err(Error::Config("a sweep needs at least one seed".into()));
    }
    let jobs: Vec<(usize, &SplitSpec, u64)> = points
        .iter()
        .flat_map(|(size, split)| ctx.seeds.iter().map(move |&s| (*size, split, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(size, split, seed)| {
            ctx.point(axis, size, split, seed)
                .map_err(|e| Error::Plan(format!("sweep point {axis:?}={size}, seed {seed}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        axis,
        rows: rows.into_iter().flatten().collect(),
    })
}

/// Support-size sweep at constant total meta-training support data. Test
/// tasks use the same support size, queries stay at the split's sizes.
pub fn sweep_support<T: Scalar>(ctx: &SweepContext<'_, T>, total_support_words: usize, sizes: &[usize]) -> Result<SweepResult> {
    let plan = sweep_plan(total_support_words, sizes)?;
    let domains = ctx.train_domain_count().max(1);
    let eval = ctx.split.eval_budgets.unwrap_or(ctx.split.train_budgets);
    let points = plan
        .into_iter()
        .map(|(size, n)| {
            if n % domains != 0 {
                return Err(Error::Plan(format!(
                    "{n} tasks at support size {size} do not split evenly over {domains} domains"
                )));
            }
            let split = SplitSpec {
                train_tasks_per_domain: n / domains,
                train_budgets: Budgets {
                    support_words: size,
                    ..ctx.split.train_budgets
                },
                eval_budgets: Some(Budgets {
                    support_words: size,
                    ..eval
                }),
                ..ctx.split.clone()
            };
            Ok((size, split))
        })
        .collect::<Result<Vec<_>>>()?;
    run_points(ctx, SweepAxis::SupportSize, points)
}

/// Query-size sweep over meta-training tasks; support sizes and test tasks
/// are fixed by the split.
pub fn sweep_query<T: Scalar>(ctx: &SweepContext<'_, T>, sizes: &[usize]) -> Result<SweepResult> {
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::Plan("query sizes must be positive".into()));
    }
    let eval = ctx.split.eval_budgets.unwrap_or(ctx.split.train_budgets);
    let points = sizes
        .iter()
        .map(|&size| {
            let split = SplitSpec {
                train_budgets: Budgets {
                    query_words: size,
                    ..ctx.split.train_budgets
                },
                eval_budgets: Some(eval),
                ..ctx.split.clone()
            };
            (size, split)
        })
        .collect();
    run_points(ctx, SweepAxis::QuerySize, points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub scope: ParameterScope,
    pub domain: String,
    pub zero_shot_bleu: f64,
    pub adapted_bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    /// Zero-shot BLEU on general-domain data after meta-training, per scope.
    pub general_zero_shot: BTreeMap<String, f64>,
    pub pretrained_general_bleu: f64,
    /// General-domain BLEU of the adapter-scope model with adapters zeroed.
    pub ablated_general_bleu: f64,
    pub ablation_exact: bool,
}

impl ProbeReport {
    pub fn to_csv(&self) -> Result<String> {
        crate::meta::to_csv(&self.rows)
    }
}

fn scope_name(s: ParameterScope) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Meta-trains under adapter-only and all-parameter scopes and reports the
/// zero-shot and post-adaptation BLEU of each, plus the ablation check.
pub fn architecture_probe<T: Scalar>(
    ctx: &SweepContext<'_, T>,
    dataset: &MetaDataset,
    general: &[SentencePair],
    seed: u64,
) -> Result<ProbeReport> {
    if general.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pretrained_general = evaluate_bleu(ctx.pretrained, ctx.vocab, general, ctx.decode)?.score;
    let mut rows = Vec::new();
    let mut general_zero_shot = BTreeMap::new();
    let mut ablated = f64::NAN;
    for scope in [ParameterScope::AdaptersOnly, ParameterScope::AllParameters] {
        let meta_cfg = MetaTrainConfig { scope, ..ctx.meta.clone() };
        let mut adapt = ctx.adapt.clone();
        adapt.test_time.scope = scope;
        let (meta, _) = meta_train_model(ctx.pretrained, dataset, &meta_cfg, None, derive_seed(seed, "meta"), true)?;
        let cks = Checkpoints {
            pretrained: ctx.pretrained,
            pool: None,
            meta: Some(&meta),
        };
        let report = run_comparison(&dataset.test_replicates(), &[Strategy::MetaMt], &cks, &adapt, ctx.vocab, ctx.decode, seed)?;
        let zs = report.cells(true);
        for ((domain, _), c) in report.cells(false) {
            rows.push(ProbeRow {
                scope,
                zero_shot_bleu: zs[&(domain.clone(), Strategy::MetaMt)].mean,
                domain,
                adapted_bleu: c.mean,
            });
        }
        general_zero_shot.insert(scope_name(scope), evaluate_bleu(&meta, ctx.vocab, general, ctx.decode)?.score);
        if scope == ParameterScope::AdaptersOnly {
            ablated = evaluate_bleu(&meta.ablate_adapters(), ctx.vocab, general, ctx.decode)?.score;
        }
    }
    Ok(ProbeReport {
        rows,
        general_zero_shot,
        pretrained_general_bleu: pretrained_general,
        ablation_exact: ablated == pretrained_general,
        ablated_general_bleu: ablated,
    })
}
