//! Benchmark runs through an LLM backend, plus mocks with known scores.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use lmd_core::benchmark::{
    flipped_spatial_layout, generate_tasks, plural_collapse_layout, reference_layout,
    BenchmarkReport, BenchmarkTask, TaskKind, TaskResult,
};
use lmd_core::Canvas;
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use crate::backend::{initial_messages, LlmBackend, MockLlm};
use crate::config::PromptRole;
use crate::prompt::{completion_text, PromptTemplate};
use crate::{parse_completion, LlmError};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRun {
    pub kinds: Vec<TaskKind>,
    pub n: usize,
    pub seed: u64,
    /// Upper bound on concurrent requests.
    pub parallelism: usize,
    pub role: PromptRole,
}

impl Default for BenchmarkRun {
    fn default() -> Self {
        Self {
            kinds: TaskKind::ALL.to_vec(),
            n: 100,
            seed: 0,
            parallelism: 8,
            role: PromptRole::User,
        }
    }
}

impl BenchmarkRun {
    pub fn tasks(&self) -> Vec<BenchmarkTask> {
        self.kinds
            .iter()
            .flat_map(|&k| generate_tasks(k, self.n, self.seed))
            .collect()
    }
}

async fn run_task(
    backend: &dyn LlmBackend,
    template: &PromptTemplate,
    role: PromptRole,
    task: BenchmarkTask,
) -> TaskResult {
    let messages = match initial_messages(template, &task.prompt, role) {
        Ok(m) => m,
        Err(e) => return TaskResult::failed(task, e.to_string()),
    };
    match backend.complete(&messages).await {
        Err(e) => TaskResult::failed(task, format!("request failed: {e}")),
        Ok(text) => match parse_completion(&text, Canvas::default()) {
            Ok(layout) => TaskResult::checked(task, layout),
            Err(d) => TaskResult::failed(task, format!("parse failed: {d}")),
        },
    }
}

/// Builds, requests, parses and checks every task; per-task failures are
/// recorded, only configuration errors abort.
pub async fn run_benchmark(
    backend: Arc<dyn LlmBackend>,
    template: &PromptTemplate,
    run: &BenchmarkRun,
) -> Result<BenchmarkReport, LlmError> {
    if run.parallelism == 0 {
        return Err(LlmError::Config("parallelism must be at least 1".into()));
    }
    let tasks = run.tasks();
    let permits = Arc::new(Semaphore::new(run.parallelism));
    let template = Arc::new(template.clone());
    let mut set = JoinSet::new();
    for (i, task) in tasks.into_iter().enumerate() {
        let (backend, template, permits) = (backend.clone(), template.clone(), permits.clone());
        let role = run.role;
        set.spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore open");
            (i, run_task(backend.as_ref(), &template, role, task).await)
        });
    }
    let mut results = BTreeMap::new();
    while let Some(joined) = set.join_next().await {
        let (i, r) = joined.map_err(|e| LlmError::Config(format!("benchmark worker: {e}")))?;
        results.insert(i, r);
    }
    Ok(BenchmarkReport::from_results(
        results.into_values().collect(),
        run.n,
    ))
}

/// Mock answering every task prompt with a passing layout.
pub fn oracle_mock(tasks: &[BenchmarkTask]) -> MockLlm {
    tasks.iter().fold(MockLlm::new(), |m, t| {
        m.exact(&t.prompt, completion_text(&reference_layout(t)))
    })
}

/// Distinct prompts (with their multiplicities) picked so the multiplicities
/// add up to exactly `target`, preferring prompts seen once.
fn pick_prompts<'a>(
    candidates: impl Iterator<Item = &'a BenchmarkTask>,
    all: &[BenchmarkTask],
    target: usize,
) -> Option<Vec<&'a BenchmarkTask>> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in all {
        *counts.entry(&t.prompt).or_default() += 1;
    }
    let mut seen = std::collections::HashSet::new();
    let mut distinct: Vec<(&BenchmarkTask, usize)> = candidates
        .filter(|t| seen.insert(t.prompt.clone()))
        .map(|t| (t, counts[t.prompt.as_str()]))
        .collect();
    distinct.sort_by_key(|(_, c)| *c);
    // subset sum over multiplicities, first-found in sorted order
    let mut reach: Vec<Option<Vec<usize>>> = vec![None; target + 1];
    reach[0] = Some(Vec::new());
    for (idx, (_, c)) in distinct.iter().enumerate() {
        for s in (*c..=target).rev() {
            if reach[s].is_none() {
                if let Some(prev) = reach[s - c].clone() {
                    let mut v = prev;
                    v.push(idx);
                    reach[s] = Some(v);
                }
            }
        }
    }
    reach[target]
        .take()
        .map(|ix| ix.into_iter().map(|i| distinct[i].0).collect())
}

/// Mock that passes everything except exactly `numeracy_failures` numeracy
/// tasks (answered with one plural box) and `spatial_failures` spatial tasks
/// (answered with the locations swapped).
pub fn scripted_failure_mock(
    tasks: &[BenchmarkTask],
    numeracy_failures: usize,
    spatial_failures: usize,
) -> Result<MockLlm, LlmError> {
    let numeracy: Vec<BenchmarkTask> = tasks
        .iter()
        .filter(|t| plural_collapse_layout(t).is_some())
        .cloned()
        .collect();
    let spatial: Vec<BenchmarkTask> = tasks
        .iter()
        .filter(|t| t.kind == TaskKind::SpatialRelationship)
        .cloned()
        .collect();
    let fail_n = pick_prompts(numeracy.iter(), tasks, numeracy_failures).ok_or_else(|| {
        LlmError::Config(format!(
            "cannot script {numeracy_failures} numeracy failures"
        ))
    })?;
    let fail_s = pick_prompts(spatial.iter(), tasks, spatial_failures).ok_or_else(|| {
        LlmError::Config(format!("cannot script {spatial_failures} spatial failures"))
    })?;

    let mut mock = MockLlm::new();
    for t in fail_n {
        let l = plural_collapse_layout(t).expect("filtered above");
        mock = mock.exact(&t.prompt, completion_text(&l));
    }
    for t in fail_s {
        let l = flipped_spatial_layout(t).expect("spatial task");
        mock = mock.exact(&t.prompt, completion_text(&l));
    }
    // failing rules come first, so they shadow the oracle entries
    Ok(tasks.iter().fold(mock, |m, t| {
        m.exact(&t.prompt, completion_text(&reference_layout(t)))
    }))
}
