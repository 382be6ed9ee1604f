use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
# integration-test scale
seed = 3
vocab_size = 4
max_len = 4
train_utts = 24
dev_utts = 6
elm_sentences = 80
ce_epochs = 1
ft_epochs = 1
elm_steps = 5
lambda1_grid = 0, 0.3
lambda2_grid = 0, 0.2
rho_grid = 0.5
context1_tables = false
";

fn tslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tslab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, TINY).unwrap();
    path.display().to_string()
}

#[test]
fn phases_run_from_a_config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let work = dir.path().join("run");
    let work = work.to_str().unwrap();
    let run = |sub: &str| {
        let out = tslab(&[sub, "--config", &cfg, "--work_dir", work, "--dev_utts", "5"]);
        assert!(out.status.success(), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    run("gen-data");
    let dev = std::fs::read_to_string(Path::new(work).join("dev.txt")).unwrap();
    assert_eq!(dev.lines().filter(|l| l.starts_with("UTT ")).count(), 5, "flag overrides the file");
    let written = std::fs::read_to_string(Path::new(work).join("config.txt")).unwrap();
    assert!(written.contains("dev_utts = 5"));
    assert!(run("train-ce").contains("final loss"));
    run("gen-nbest");
    assert!(run("train-seq").contains("mbr_nbest.bigram"));
    assert!(run("decode").contains("WER"));
    assert!(run("ilm-ppl").contains("w/o renorm"));
    assert_eq!(run("swap-eval").lines().count(), 10);
    let tables = run("tables");
    assert!(tables.contains("T4"), "{tables}");
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("empty");
    let work = work.to_str().unwrap();
    let out = tslab(&["train-ce", "--work_dir", work]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("pipeline order"));

    let out = tslab(&["gen-data", "--work_dir", work, "--vocab_size", "0"]);
    assert!(!out.status.success());
    let out = tslab(&["gen-data", "--no_such_key", "1"]);
    assert!(!out.status.success());
    let out = tslab(&["decode", "--work_dir", work, "--mode", "sf_unknown"]);
    assert!(!out.status.success());
}
