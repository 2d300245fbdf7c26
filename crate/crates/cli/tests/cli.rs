use std::path::Path;
use std::process::{Command, Output};

fn capqual(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capqual"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn pairs(dir: &Path, n: usize) {
    let body: String = (0..n)
        .map(|i| format!("{{\"id\":\"q{i}\",\"image_ref\":\"img/{i}.png\",\"caption\":\"A boat {i} on a lake.\"}}\n"))
        .collect();
    std::fs::write(dir.join("pairs.jsonl"), body).unwrap();
}

#[test]
fn top_k_zero_writes_an_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    pairs(dir.path(), 20);
    let out = capqual(dir.path(), &["--seed", "1", "--mock", "filter", "--input", "pairs.jsonl", "--output", "top.jsonl", "--top-k", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(dir.path().join("top.jsonl")).unwrap(), b"");
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("top.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["counts"]["selected"], 0);
    assert_eq!(manifest["counts"]["scored"], 20);
}

#[test]
fn top_k_selects_in_rank_order() {
    let dir = tempfile::tempdir().unwrap();
    pairs(dir.path(), 50);
    let out = capqual(dir.path(), &["--seed", "1", "--mock", "filter", "--input", "pairs.jsonl", "--output", "top.jsonl", "--top-k", "7"]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("top.jsonl")).unwrap();
    let scores: Vec<u64> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["overall"].as_u64().unwrap())
        .collect();
    assert_eq!(scores.len(), 7);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
}

#[test]
fn configuration_errors_exit_with_status_2() {
    let dir = tempfile::tempdir().unwrap();
    pairs(dir.path(), 3);
    let inverted = capqual(
        dir.path(),
        &["--seed", "1", "--mock", "--low-threshold", "8", "--high-threshold", "7", "annotate", "--input", "pairs.jsonl", "--output", "a.jsonl"],
    );
    assert_eq!(inverted.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&inverted.stderr).contains("low threshold 8"));
    assert!(!dir.path().join("a.jsonl").exists(), "nothing is written on a config error");

    let unseeded = capqual(dir.path(), &["--mock", "annotate", "--input", "pairs.jsonl", "--output", "a.jsonl"]);
    assert_eq!(unseeded.status.code(), Some(2));

    let clash = capqual(dir.path(), &["--seed", "1", "--mock", "annotate", "--input", "pairs.jsonl", "--output", "./pairs.jsonl"]);
    assert_eq!(clash.status.code(), Some(2));

    std::fs::write(dir.path().join("run.toml"), "seed = 1\napi_key = \"sk-nope\"\n").unwrap();
    let unknown = capqual(dir.path(), &["--config", "run.toml", "annotate", "--input", "pairs.jsonl", "--output", "a.jsonl"]);
    assert_eq!(unknown.status.code(), Some(2));

    let flag = capqual(dir.path(), &["--seed", "1", "--api-key", "sk-nope", "annotate"]);
    assert_eq!(flag.status.code(), Some(2), "credentials are not accepted as flags");
}

#[test]
fn malformed_input_records_exit_with_status_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pairs.jsonl"), "{\"id\":\"a\"}\n").unwrap();
    let out = capqual(dir.path(), &["--seed", "1", "--mock", "annotate", "--input", "pairs.jsonl", "--output", "a.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn unreachable_backend_quarantines_and_exits_with_status_3() {
    let dir = tempfile::tempdir().unwrap();
    pairs(dir.path(), 2);
    std::fs::create_dir(dir.path().join("img")).unwrap();
    for i in 0..2 {
        std::fs::write(dir.path().join(format!("img/{i}.png")), [0x89, b'P', b'N', b'G']).unwrap();
    }
    std::fs::write(
        dir.path().join("run.toml"),
        "seed = 1\n[backend]\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\nretry_limit = 1\nbackoff = 1\ntimeout = 2000\ncredential_env = \"CAPQUAL_CLI_TEST_KEY\"\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_capqual"))
        .current_dir(dir.path())
        .env("CAPQUAL_CLI_TEST_KEY", "sk-test")
        .args(["--config", "run.toml", "annotate", "--input", "pairs.jsonl", "--output", "a.jsonl"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let quarantine = std::fs::read_to_string(dir.path().join("a.jsonl.quarantine.jsonl")).unwrap();
    assert_eq!(quarantine.lines().count(), 2);
    assert!(quarantine.contains("backend_unavailable"));
    assert_eq!(std::fs::read(dir.path().join("a.jsonl")).unwrap(), b"");
}

#[test]
fn sample_reports_rejects_and_respects_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::new();
    for i in 0..100 {
        body.push_str(&format!("s{i}\timg/{i}.png\tcaption {i}\n"));
    }
    body.push_str("broken line without tabs\n");
    std::fs::write(dir.path().join("shard.tsv"), body).unwrap();
    let run = |seed: &str, out: &str| {
        capqual(dir.path(), &["--seed", seed, "sample", "shard.tsv", "--format", "tab-separated", "-n", "10", "--output", out])
    };
    assert!(run("3", "a.jsonl").status.success());
    assert!(run("3", "b.jsonl").status.success());
    assert!(run("4", "c.jsonl").status.success());
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
    assert_eq!(String::from_utf8(read("a.jsonl.rejects")).unwrap().lines().count(), 1);
}
