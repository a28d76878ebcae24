use std::io::Read;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use lmd_core::diffusion::read_trajectory_dump;
use lmd_core::generator::measure::{count_regions, object_region};
use lmd_core::{scale_layout, Layout};

fn lmd(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lmd"));
    c.args(args)
        .env_remove("LMD_API_KEY")
        .env_remove("LMD_API_BASE")
        .env_remove("LMD_MODEL")
        .env_remove("LMD_DATA_DIR");
    c
}

fn run(c: &mut Command) -> Output {
    c.output().expect("spawn lmd")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_dir(o: &Output) -> PathBuf {
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).expect("run summary JSON");
    PathBuf::from(v["dir"].as_str().unwrap())
}

fn pipeline(data: &Path) -> Output {
    run(lmd(&[
        "pipeline",
        "two pandas in a forest",
        "--mock",
        "--seed",
        "7",
    ])
    .arg("--data-dir")
    .arg(data))
}

#[test]
fn mock_pipeline_is_deterministic_and_persists_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let a = pipeline(&tmp.path().join("a"));
    let b = pipeline(&tmp.path().join("b"));
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    let (da, db) = (run_dir(&a), run_dir(&b));
    assert_ne!(da, db);
    for name in [
        "run.json",
        "completion.txt",
        "layout.json",
        "layout.svg",
        "asset_0_inversion.bin",
        "asset_0_mask.pbm",
        "asset_1_inversion.bin",
        "asset_1_mask.pbm",
        "latent.bin",
        "image.png",
    ] {
        assert!(da.join(name).is_file(), "missing {name}");
    }
    let png_a = std::fs::read(da.join("image.png")).unwrap();
    assert_eq!(png_a, std::fs::read(db.join("image.png")).unwrap());

    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(da.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["status"], "image_done");
    assert_eq!(record["config"]["seed"], 7);

    let layout =
        Layout::from_json(&std::fs::read_to_string(da.join("layout.json")).unwrap()).unwrap();
    assert_eq!(layout.objects.len(), 2);
    let bytes = std::fs::read(da.join("latent.bin")).unwrap();
    let (_, traj) = read_trajectory_dump(std::io::Cursor::new(bytes)).unwrap();
    let image = &traj.latents[0];
    assert_eq!(count_regions(image), 2);
    let latent_canvas =
        lmd_core::Canvas::new(image.shape().width as u32, image.shape().height as u32).unwrap();
    let small = scale_layout(&layout, latent_canvas);
    let r0 = object_region(image, &small.objects[0].bbox);
    let r1 = object_region(image, &small.objects[1].bbox);
    assert!(!r0.is_empty() && !r1.is_empty());
    assert!(r0.pixels().all(|(row, col)| !r1.get(row, col)));
}

#[test]
fn layout_without_caption_is_a_usage_error() {
    let o = run(&mut lmd(&["layout"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_benchmark_kind_is_a_usage_error() {
    let o = run(&mut lmd(&["benchmark", "--kind", "counting", "--mock"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("counting"));
}

#[test]
fn negation_benchmark_with_perfect_mock() {
    let o = run(&mut lmd(&[
        "benchmark",
        "--kind",
        "negation",
        "--n",
        "5",
        "--mock",
    ]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "Benchmarks              Accuracy (%)\nNegation                100%\n"
    );
}

#[test]
fn layout_prints_json_and_render_writes_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&mut lmd(&["layout", "a skier on a snowy hill", "--mock"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let file = tmp.path().join("layout.json");
    std::fs::write(&file, stdout(&o)).unwrap();
    let layout = Layout::from_json(&stdout(&o)).unwrap();
    assert!(!layout.objects.is_empty());

    let out = tmp.path().join("layout.svg");
    let o = run(lmd(&["render", "--layout"])
        .arg(&file)
        .arg("--out")
        .arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let svg = std::fs::read_to_string(&out).unwrap();
    assert_eq!(svg.matches("<rect").count(), layout.objects.len());
}

#[test]
fn generate_accepts_the_tuple_format() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("layout.txt");
    std::fs::write(
        &file,
        "[('a red circle', [48, 176, 160, 160]), ('a blue square', [304, 176, 160, 160])]\n\
         Background prompt: a white room\n",
    )
    .unwrap();
    let o = run(lmd(&["generate", "--seed", "3", "--layout"])
        .arg(&file)
        .arg("--data-dir")
        .arg(tmp.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(run_dir(&o).join("image.png").is_file());

    let missing = run(lmd(&["generate", "--layout"]).arg(tmp.path().join("nope.json")));
    assert_eq!(missing.status.code(), Some(2));
}

/// Listener that counts every inbound connection and answers 500.
fn counting_listener() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut s) = stream else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let _ = s.set_read_timeout(Some(Duration::from_millis(200)));
            let mut buf = [0u8; 4096];
            let _ = s.read(&mut buf);
            let _ = std::io::Write::write_all(
                &mut s,
                b"HTTP/1.1 500 Internal Server Error\r\ncontent-length: 0\r\nconnection: close\r\n\r\n",
            );
        }
    });
    (base, hits)
}

fn fast_fail_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, r#"{"llm":{"max_retries":0,"timeout":2000}}"#).unwrap();
    path
}

#[test]
fn mock_mode_opens_no_sockets() {
    let tmp = tempfile::tempdir().unwrap();
    let (base, hits) = counting_listener();
    let config = fast_fail_config(tmp.path());
    let with_env = |args: &[&str]| {
        let mut c = lmd(args);
        c.env("LMD_API_BASE", &base)
            .env("LMD_API_KEY", "sk-test-not-a-real-key")
            .arg("--config")
            .arg(&config)
            .arg("--data-dir")
            .arg(tmp.path());
        run(&mut c)
    };

    for args in [
        &[
            "pipeline",
            "two pandas in a forest",
            "--mock",
            "--seed",
            "7",
        ][..],
        &["layout", "a skier", "--mock"][..],
        &["benchmark", "--n", "3", "--mock"][..],
    ] {
        let o = with_env(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(hits.load(Ordering::SeqCst), 0);

    // Without --mock the same environment reaches the listener, so the
    // counter above would have seen any leak.
    let o = with_env(&["layout", "a skier"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(hits.load(Ordering::SeqCst) >= 1);
    assert!(!stderr(&o).contains("sk-test-not-a-real-key"));
}

#[test]
fn unreachable_llm_is_a_stage_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let o = run(lmd(&["pipeline", "a cat", "-vv"])
        .env("LMD_API_BASE", format!("http://127.0.0.1:{port}/v1"))
        .env("LMD_API_KEY", "sk-secret-value")
        .arg("--config")
        .arg(fast_fail_config(tmp.path()))
        .arg("--data-dir")
        .arg(tmp.path()));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("layout stage failed"), "{err}");
    assert!(!err.contains("sk-secret-value"));

    let runs: Vec<_> = std::fs::read_dir(tmp.path().join("runs"))
        .unwrap()
        .collect();
    assert_eq!(runs.len(), 1);
    let dir = runs.into_iter().next().unwrap().unwrap().path();
    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["status"], "failed");
    assert_eq!(record["error"]["stage"], "layout");
    assert!(!dir.join("image.png").exists());
}
