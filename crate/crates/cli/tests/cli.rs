use std::path::Path;
use std::process::{Command, Output};

fn lesionforge<S: AsRef<std::ffi::OsStr>>(args: &[S], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lesionforge"))
        .args(args)
        .env("LESIONFORGE_CACHE", cache)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn synth_validate_and_staged_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cache = dir.path().join("cache");
    ok(&lesionforge(&["synth", "--out", data.to_str().unwrap(), "--count", "10", "--seed", "2"], &cache));
    let manifest = data.join("manifest.csv");
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "classifiers = [{ model = \"svm_linear\", cost = 1.0 }]\n[transfer]\nmax_iters = 5\n[cp]\nrestarts = 1\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let common = [
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--test-mode",
        "--content-global",
        "--ranks",
        "2",
    ];
    let with = |verb: &'static str| -> Vec<String> { std::iter::once(verb).chain(common).map(String::from).collect() };

    let v = ok(&lesionforge(&with("validate"), &cache));
    assert!(v.contains("10 images"), "{v}");

    let early = lesionforge(&with("transfer"), &cache);
    assert!(!early.status.success());
    assert!(String::from_utf8_lossy(&early.stderr).contains("preprocess"));

    for verb in ["preprocess", "segment", "content-image", "transfer", "features", "decompose", "classify", "report"] {
        ok(&lesionforge(&with(verb), &cache));
    }
    assert!(cache.join("transfer").is_dir());
    let metrics = std::fs::read(run.join("metrics.csv")).unwrap();
    let resolved = std::fs::read_to_string(run.join("config.resolved.json")).unwrap();
    assert!(resolved.contains("\"global\""));

    let again = ok(&lesionforge(&with("run"), &cache));
    let stage_lines: Vec<&str> = again.lines().filter(|l| l.contains(" computed ")).collect();
    assert!(!stage_lines.is_empty());
    assert!(stage_lines.iter().all(|l| l.contains("computed     0")), "{again}");
    assert!(again.contains("svm_linear"));
    assert_eq!(std::fs::read(run.join("metrics.csv")).unwrap(), metrics);
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let missing = lesionforge(&["validate", "--manifest", "/nonexistent/manifest.csv"], &cache);
    assert!(!missing.status.success());

    let data = dir.path().join("data");
    ok(&lesionforge(&["synth", "--out", data.to_str().unwrap(), "--count", "6"], &cache));
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"grid": {"ratios": [3.0]}}"#).unwrap();
    let manifest = data.join("manifest.csv");
    let mut args = vec!["validate", "--manifest", manifest.to_str().unwrap(), "--config", cfg.to_str().unwrap()];
    let custom = lesionforge(&args, &cache);
    assert!(!custom.status.success());
    assert!(String::from_utf8_lossy(&custom.stderr).contains("allow-custom"));
    args.push("--allow-custom");
    ok(&lesionforge(&args, &cache));
}
