//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use tslab_harness::oracle::{self, CheckReport};
use tslab_harness::pipeline::run_pipeline;
use tslab_harness::tables::findings;
use tslab_harness::ExperimentConfig;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn directional_replication() -> CheckReport {
    let start = Instant::now();
    let mut counts = [0usize; 4];
    let mut errors = Vec::new();
    for seed in SEEDS {
        let dir = tempfile::tempdir().expect("temp dir");
        // The context-1 companion run feeds only the second WER table.
        let c = ExperimentConfig {
            seed,
            work_dir: dir.path().to_path_buf(),
            context1_tables: false,
            ..ExperimentConfig::default()
        };
        let outcome = run_pipeline(&c).and_then(|records| findings(&records, &c));
        match outcome {
            Ok(f) => {
                let held =
                    [f.ilm_subtraction_helps(), f.gap_shrinks(), f.raw_ppl_drops_renorm_flat(), f.blank_suppressed()];
                for (n, h) in counts.iter_mut().zip(held) {
                    *n += usize::from(h);
                }
                for line in f.lines() {
                    eprintln!("    seed {seed} {line}");
                }
            }
            Err(e) => errors.push(format!("seed {seed}: {e}")),
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let need = 4;
    let passed = errors.is_empty() && counts.iter().all(|n| *n >= need) && seconds < 900.0;
    let mut detail = format!(
        "of {} seeds: (a) {} (b) {} (c) {} (d) {}; need ≥ {need} each",
        SEEDS.len(),
        counts[0],
        counts[1],
        counts[2],
        counts[3]
    );
    if !errors.is_empty() {
        detail.push_str(&format!("; errors: {}", errors.join("; ")));
    }
    if seconds >= 900.0 {
        detail.push_str("; over the 15 min budget");
    }
    CheckReport { id: 9, name: "directional replication", passed, detail, seconds }
}

fn small_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        work_dir: dir.to_path_buf(),
        seed: 7,
        train_utts: 48,
        dev_utts: 12,
        elm_sentences: 200,
        ce_epochs: 3,
        ft_epochs: 2,
        elm_steps: 20,
        lambda1_grid: vec![0.0, 0.3],
        lambda2_grid: vec![0.0, 0.2],
        rho_grid: vec![0.5],
        ..ExperimentConfig::default()
    }
}

/// Every regular file under `root`, keyed by relative path.
fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("under root").display().to_string();
                out.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    out
}

fn determinism() -> CheckReport {
    let start = Instant::now();
    let body = || -> Result<(bool, String), String> {
        let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
        let ra = run_pipeline(&small_config(a.path())).map_err(|e| e.to_string())?;
        let rb = run_pipeline(&small_config(b.path())).map_err(|e| e.to_string())?;
        let (fa, fb) = (files(a.path()), files(b.path()));
        let compared: Vec<&String> =
            fa.keys().filter(|k| k.ends_with(".ckpt") || k.ends_with(".jsonl") || k.ends_with("tables.txt")).collect();
        let differing: Vec<&&String> = compared.iter().filter(|k| fa.get(**k) != fb.get(**k)).collect();
        let same_keys = fa.keys().eq(fb.keys());
        let ckpts = compared.iter().filter(|k| k.ends_with(".ckpt")).count();
        let records_equal =
            ra.len() == rb.len() && ra.iter().zip(&rb).all(|(x, y)| x == y && x.value.to_bits() == y.value.to_bits());
        Ok((
            same_keys && differing.is_empty() && records_equal && ckpts > 0,
            format!(
                "{} files compared ({ckpts} checkpoints), {} differ; {} records bitwise equal: {records_equal}",
                compared.len(),
                differing.len(),
                ra.len()
            ),
        ))
    };
    let (passed, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckReport { id: 10, name: "determinism", passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn main() {
    let mut reports = Vec::new();
    for r in oracle::run_all() {
        println!("{r}");
        reports.push(r);
    }
    let r = directional_replication();
    println!("{r}");
    reports.push(r);
    let r = determinism();
    println!("{r}");
    reports.push(r);
    let failed: Vec<usize> = reports.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", reports.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
