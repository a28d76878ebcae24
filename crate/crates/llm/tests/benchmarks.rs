use std::sync::Arc;
use std::time::{Duration, Instant};

use lmd_core::benchmark::TaskKind;
use lmd_llm::{oracle_mock, run_benchmark, scripted_failure_mock, BenchmarkRun, PromptTemplate};

fn run(seed: u64) -> BenchmarkRun {
    BenchmarkRun {
        seed,
        ..BenchmarkRun::default()
    }
}

#[tokio::test]
async fn oracle_mock_scores_everything() {
    let r = run(0);
    let start = Instant::now();
    let report = run_benchmark(
        Arc::new(oracle_mock(&r.tasks())),
        &PromptTemplate::default(),
        &r,
    )
    .await
    .unwrap();
    assert!(start.elapsed() < Duration::from_secs(5));
    assert_eq!(report.per_task.len(), 400);
    for kind in TaskKind::ALL {
        assert_eq!(report.percent(kind), Some(100), "{kind}");
    }
}

#[tokio::test]
async fn scripted_failures_reproduce_table() {
    for seed in [0, 1, 7] {
        let r = run(seed);
        let mock = scripted_failure_mock(&r.tasks(), 7, 2).unwrap();
        let report = run_benchmark(Arc::new(mock), &PromptTemplate::default(), &r)
            .await
            .unwrap();
        let got: Vec<_> = TaskKind::ALL
            .iter()
            .map(|&k| report.percent(k).unwrap())
            .collect();
        assert_eq!(got, [100, 93, 100, 98], "seed {seed}");
        for kind in TaskKind::ALL {
            let rows: Vec<_> = report
                .per_task
                .iter()
                .filter(|t| t.task.kind == kind)
                .collect();
            let pass = rows.iter().filter(|t| t.passed).count();
            assert_eq!(
                report.accuracy_by_kind[&kind],
                pass as f64 / rows.len() as f64
            );
        }
        let failures: Vec<_> = report
            .per_task
            .iter()
            .filter(|t| !t.passed && t.task.kind == TaskKind::Numeracy)
            .collect();
        assert!(failures
            .iter()
            .all(|t| t.layout.as_ref().unwrap().objects.len() == 1));
        assert_eq!(
            report.to_table(),
            "Benchmarks              Accuracy (%)\n\
             Negation                100%\n\
             Generative Numeracy     93%\n\
             Attribute Assignment    100%\n\
             Spatial Relationships   98%\n"
        );
    }
}

#[tokio::test]
async fn reports_are_reproducible_and_empty_runs_are_empty() {
    let r = run(3);
    let once = || async {
        run_benchmark(
            Arc::new(scripted_failure_mock(&r.tasks(), 7, 2).unwrap()),
            &PromptTemplate::default(),
            &r,
        )
        .await
        .unwrap()
    };
    assert_eq!(once().await, once().await);
    let empty = BenchmarkRun {
        kinds: vec![],
        n: 0,
        ..BenchmarkRun::default()
    };
    let report = run_benchmark(
        Arc::new(oracle_mock(&[])),
        &PromptTemplate::default(),
        &empty,
    )
    .await
    .unwrap();
    assert!(report.per_task.is_empty() && report.accuracy_by_kind.is_empty());
}
