use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_fastslow");

fn smoke() -> &'static str {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml")
}

fn run(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(BIN).args(args).arg("--out").arg(out).output().expect("binary runs")
}

#[test]
fn density_run_is_reproducible_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        let r = run(&["density", "--config", smoke(), "--threads", "2"], o);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let mut csvs = 0;
    for entry in std::fs::read_dir(&a).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "csv") {
            csvs += 1;
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(b.join(p.file_name().unwrap())).unwrap());
        }
    }
    assert!(csvs > 0);
    assert!(a.join("config.resolved.toml").exists());
}

#[test]
fn invalid_epsilon_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&["density", "--config", smoke(), "--eps", "-0.5"], dir.path());
    assert_eq!(r.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&r.stderr);
    let line = stderr.lines().find(|l| l.starts_with('{')).expect("json error line");
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(v["exit_code"], 2);
}

#[test]
fn missing_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&["classify", "--config", "/nonexistent/x.toml"], dir.path());
    assert_eq!(r.status.code(), Some(2));
}
