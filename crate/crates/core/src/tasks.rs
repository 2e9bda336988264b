//! Few-shot adaptation tasks and meta-datasets.
//!
//! A task draws sentences from one domain's corpus, uniformly without
//! replacement, and accumulates them into the support set until its word
//! budget is first met or exceeded, then likewise into the query set. Tasks
//! of the same domain are sampled independently and may overlap; within a
//! task support and query never share a pair.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    MetaTrain,
    MetaValidation,
    MetaTest,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::MetaTrain => "meta_train",
            Split::MetaValidation => "meta_validation",
            Split::MetaTest => "meta_test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub task_id: String,
    pub domain_id: String,
    pub split: Split,
    pub replicate: usize,
    pub support: Vec<SentencePair>,
    pub query: Vec<SentencePair>,
    pub support_indices: Vec<usize>,
    pub query_indices: Vec<usize>,
    pub support_budget_words: usize,
    pub query_budget_words: usize,
}

impl Task {
    pub fn support_words(&self) -> usize {
        self.support.iter().map(|p| p.source_word_count).sum()
    }

    pub fn query_words(&self) -> usize {
        self.query.iter().map(|p| p.source_word_count).sum()
    }
}

/// Support and query pair indices into the parent corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDraw {
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

pub fn sample_task(
    corpus: &ParallelCorpus,
    support_budget: usize,
    query_budget: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TaskDraw> {
    if support_budget == 0 || query_budget == 0 {
        return Err(Error::Config("task budgets must be at least one word".into()));
    }
    let available = corpus.total_source_words();
    let required = support_budget + query_budget;
    let insufficient = || Error::InsufficientData {
        domain: corpus.domain_id.clone(),
        available,
        required,
    };
    if available < required {
        return Err(insufficient());
    }
    let mut order: Vec<usize> = (0..corpus.pairs.len()).collect();
    order.shuffle(rng);
    let mut order = order.into_iter();
    let mut take = |budget: usize| -> Option<Vec<usize>> {
        let mut picked = Vec::new();
        let mut words = 0;
        while words < budget {
            let i = order.next()?;
            words += corpus.pairs[i].source_word_count;
            picked.push(i);
        }
        Some(picked)
    };
    let support = take(support_budget).ok_or_else(insufficient)?;
    let query = take(query_budget).ok_or_else(insufficient)?;
    Ok(TaskDraw { support, query })
}

fn materialize(
    corpus: &ParallelCorpus,
    draw: TaskDraw,
    task_id: String,
    split: Split,
    replicate: usize,
    budgets: Budgets,
) -> Task {
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus.pairs[i].clone()).collect();
    Task {
        task_id,
        domain_id: corpus.domain_id.clone(),
        split,
        replicate,
        support: pick(&draw.support),
        query: pick(&draw.query),
        support_indices: draw.support,
        query_indices: draw.query,
        support_budget_words: budgets.support_words,
        query_budget_words: budgets.query_words,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    pub support_words: usize,
    pub query_words: usize,
}

/// Split layout for [`build_meta_dataset`]. Empty domain lists mean "all
/// domains"; validation defaults to the meta-train domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub meta_train_domains: Vec<String>,
    pub meta_validation_domains: Vec<String>,
    pub meta_test_domains: Vec<String>,
    /// Require meta-test domains to be absent from meta-train.
    pub unseen_domains: bool,
    pub train_tasks_per_domain: usize,
    pub validation_tasks_per_domain: usize,
    pub test_tasks_per_domain: usize,
    /// Independent meta-test sets, reported as mean and spread.
    pub test_replicates: usize,
    pub train_budgets: Budgets,
    /// Budgets for validation and test tasks; defaults to `train_budgets`.
    pub eval_budgets: Option<Budgets>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            meta_train_domains: Vec::new(),
            meta_validation_domains: Vec::new(),
            meta_test_domains: Vec::new(),
            unseen_domains: false,
            train_tasks_per_domain: 16,
            validation_tasks_per_domain: 1,
            test_tasks_per_domain: 1,
            test_replicates: 1,
            train_budgets: Budgets {
                support_words: 4000,
                query_words: 32000,
            },
            eval_budgets: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetaDataset {
    pub meta_train: Vec<Task>,
    pub meta_validation: Vec<Task>,
    pub meta_test: Vec<Task>,
}

impl MetaDataset {
    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.meta_train
            .iter()
            .chain(&self.meta_validation)
            .chain(&self.meta_test)
    }

    pub fn domains(tasks: &[Task]) -> BTreeSet<&str> {
        tasks.iter().map(|t| t.domain_id.as_str()).collect()
    }

    /// Meta-test tasks grouped by replicate index.
    pub fn test_replicates(&self) -> Vec<Vec<&Task>> {
        let n = self.meta_test.iter().map(|t| t.replicate + 1).max().unwrap_or(0);
        (0..n)
            .map(|r| self.meta_test.iter().filter(|t| t.replicate == r).collect())
            .collect()
    }

    pub fn manifest(&self) -> TaskManifest {
        TaskManifest {
            tasks: self.tasks().map(ManifestEntry::from_task).collect(),
        }
    }

    /// Rebuilds tasks from a manifest without re-sampling.
    pub fn from_manifest(manifest: &TaskManifest, corpora: &[ParallelCorpus]) -> Result<Self> {
        let mut out = MetaDataset::default();
        for e in &manifest.tasks {
            let corpus = corpora
                .iter()
                .find(|c| c.domain_id == e.domain_id)
                .ok_or_else(|| Error::Config(format!("manifest references unknown domain `{}`", e.domain_id)))?;
            if let Some(&bad) = e.support.iter().chain(&e.query).find(|&&i| i >= corpus.pairs.len()) {
                return Err(Error::Config(format!(
                    "task `{}` references pair {bad} beyond corpus `{}`",
                    e.task_id, e.domain_id
                )));
            }
            let task = materialize(
                corpus,
                TaskDraw {
                    support: e.support.clone(),
                    query: e.query.clone(),
                },
                e.task_id.clone(),
                e.split,
                e.replicate,
                Budgets {
                    support_words: e.support_budget_words,
                    query_words: e.query_budget_words,
                },
            );
            match e.split {
                Split::MetaTrain => out.meta_train.push(task),
                Split::MetaValidation => out.meta_validation.push(task),
                Split::MetaTest => out.meta_test.push(task),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub task_id: String,
    pub domain_id: String,
    pub split: Split,
    pub replicate: usize,
    pub support_budget_words: usize,
    pub query_budget_words: usize,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

impl ManifestEntry {
    fn from_task(t: &Task) -> Self {
        Self {
            task_id: t.task_id.clone(),
            domain_id: t.domain_id.clone(),
            split: t.split,
            replicate: t.replicate,
            support_budget_words: t.support_budget_words,
            query_budget_words: t.query_budget_words,
            support: t.support_indices.clone(),
            query: t.query_indices.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TaskManifest {
    pub tasks: Vec<ManifestEntry>,
}

impl TaskManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn count(&self, split: Split) -> usize {
        self.tasks.iter().filter(|t| t.split == split).count()
    }
}

fn resolve<'a>(corpora: &'a [ParallelCorpus], names: &[String], fallback: &[String]) -> Result<Vec<&'a ParallelCorpus>> {
    let names = if names.is_empty() { fallback } else { names };
    if names.is_empty() {
        return Ok(corpora.iter().collect());
    }
    names
        .iter()
        .map(|n| {
            corpora
                .iter()
                .find(|c| &c.domain_id == n)
                .ok_or_else(|| Error::Config(format!("unknown domain `{n}` in split spec")))
        })
        .collect()
}

pub fn build_meta_dataset(corpora: &[ParallelCorpus], spec: &SplitSpec, seed: u64) -> Result<MetaDataset> {
    let mut ids = BTreeSet::new();
    for c in corpora {
        if !ids.insert(c.domain_id.as_str()) {
            return Err(Error::Config(format!("duplicate domain id `{}`", c.domain_id)));
        }
    }
    let train = resolve(corpora, &spec.meta_train_domains, &[])?;
    let validation = resolve(corpora, &spec.meta_validation_domains, &spec.meta_train_domains)?;
    let test = resolve(corpora, &spec.meta_test_domains, &[])?;
    if spec.unseen_domains {
        if let Some(shared) = test.iter().find(|t| train.iter().any(|c| c.domain_id == t.domain_id)) {
            return Err(Error::Config(format!(
                "domain `{}` is in both meta-train and meta-test in unseen-domain mode",
                shared.domain_id
            )));
        }
    }
    let eval_budgets = spec.eval_budgets.unwrap_or(spec.train_budgets);
    let mut out = MetaDataset::default();
    let plan = [
        (Split::MetaTrain, &train, spec.train_tasks_per_domain, 1, spec.train_budgets),
        (Split::MetaValidation, &validation, spec.validation_tasks_per_domain, 1, eval_budgets),
        (Split::MetaTest, &test, spec.test_tasks_per_domain, spec.test_replicates.max(1), eval_budgets),
    ];
    // one stream per split, so meta-test draws do not depend on the
    // meta-train task count
    for (split, domains, per_domain, replicates, budgets) in plan {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, split.as_str()));
        for rep in 0..replicates {
            for corpus in domains.iter() {
                for t in 0..per_domain {
                    let draw = sample_task(corpus, budgets.support_words, budgets.query_words, &mut rng)?;
                    let id = format!("{}/{}/r{rep}/{t}", split.as_str(), corpus.domain_id);
                    let task = materialize(corpus, draw, id, split, rep, budgets);
                    match split {
                        Split::MetaTrain => out.meta_train.push(task),
                        Split::MetaValidation => out.meta_validation.push(task),
                        Split::MetaTest => out.meta_test.push(task),
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Task counts that keep total meta-training support data constant across
/// support sizes.
pub fn sweep_plan(total_support_words: usize, support_sizes: &[usize]) -> Result<Vec<(usize, usize)>> {
    support_sizes
        .iter()
        .map(|&s| {
            if s == 0 || total_support_words % s != 0 {
                Err(Error::Plan(format!(
                    "support size {s} does not divide total {total_support_words}"
                )))
            } else {
                Ok((s, total_support_words / s))
            }
        })
        .collect()
}
