mod common;

use common::tiny;
use tslab_core::decoder::FusionMode;
use tslab_core::model::TransducerParams;
use tslab_harness::pipeline::{
    decode_phase, evaluate, gen_data, gen_nbest_phase, load_model, run_pipeline, train_ce_phase, train_seq_phase,
    WorkDir, CE,
};
use tslab_harness::records::lookup;
use tslab_harness::tables::experiment_tables;
use tslab_harness::HarnessError;

#[test]
fn phases_enforce_their_order() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    assert!(matches!(train_ce_phase(&c), Err(HarnessError::PipelineOrder(_))));
    gen_data(&c).unwrap();
    assert!(matches!(gen_nbest_phase(&c), Err(HarnessError::PipelineOrder(_))));
    // Fine-tune-only invocation without a CE checkpoint.
    assert!(matches!(train_seq_phase(&c), Err(HarnessError::PipelineOrder(_))));
    train_ce_phase(&c).unwrap();
    assert!(matches!(train_seq_phase(&c), Err(HarnessError::PipelineOrder(_))));
    gen_nbest_phase(&c).unwrap();
    let trained = train_seq_phase(&c).unwrap();
    let names: Vec<_> = trained.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["mmi_nbest.full", "mmi_nbest.bigram", "mbr_nbest.full", "mbr_nbest.bigram"]);
}

#[test]
fn zero_finetune_epochs_copy_the_ce_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.ft_epochs = 0;
    gen_data(&c).unwrap();
    train_ce_phase(&c).unwrap();
    gen_nbest_phase(&c).unwrap();
    train_seq_phase(&c).unwrap();
    let wd = WorkDir::new(&c.work_dir);
    let ce = std::fs::read(wd.checkpoint(CE)).unwrap();
    for name in ["mmi_nbest.full", "mbr_nbest.bigram"] {
        assert_eq!(std::fs::read(wd.checkpoint(name)).unwrap(), ce, "{name}");
    }
}

#[test]
fn bigram_and_full_lm_share_the_nbest_lists() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    gen_data(&c).unwrap();
    train_ce_phase(&c).unwrap();
    gen_nbest_phase(&c).unwrap();
    let wd = WorkDir::new(&c.work_dir);
    let before = std::fs::read(wd.nbest()).unwrap();
    train_seq_phase(&c).unwrap();
    assert_eq!(std::fs::read(wd.nbest()).unwrap(), before, "N-best lists are never regenerated");
    let full = std::fs::read(wd.checkpoint("mmi_nbest.full")).unwrap();
    let bigram = std::fs::read(wd.checkpoint("mmi_nbest.bigram")).unwrap();
    assert_ne!(full, bigram);
    let records = evaluate(&c).unwrap();
    let f = lookup(&records, "ppl/mmi_nbest.full", "raw").unwrap();
    let b = lookup(&records, "ppl/mmi_nbest.bigram", "raw").unwrap();
    assert_ne!(f.to_bits(), b.to_bits());
}

#[test]
fn tables_name_a_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.finetune = vec!["mmi_nbest".into()];
    c.train_lms = vec!["full".into()];
    gen_data(&c).unwrap();
    train_ce_phase(&c).unwrap();
    gen_nbest_phase(&c).unwrap();
    train_seq_phase(&c).unwrap();
    match experiment_tables(&c) {
        Err(HarnessError::MissingCheckpoint(p)) => assert!(p.contains("mbr_nbest.full"), "{p}"),
        other => panic!("expected a missing checkpoint, got {other:?}"),
    }
}

#[test]
fn full_run_reports_consistent_tables() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    let records = run_pipeline(&c).unwrap();
    let wd = WorkDir::new(&c.work_dir);
    let report = std::fs::read_to_string(wd.tables()).unwrap();
    for title in ["T1", "T3", "T4", "Findings"] {
        assert!(report.contains(title), "{title} missing from\n{report}");
    }
    // swap(M, M) = M.
    for m in ["ce", "mmi_nbest.full", "mbr_nbest.full"] {
        let diag = lookup(&records, &format!("swap/{m}/{m}"), "wer").unwrap();
        let plain = lookup(&records, &format!("best/{m}/sf"), "wer").unwrap();
        assert_eq!(diag.to_bits(), plain.to_bits(), "{m}");
        assert!(lookup(&records, &format!("ppl/{m}"), "renorm").is_some());
    }
    // Every grid point is recorded: 2 λ₁ × 2 λ₂ for sf_ilm.
    let ilm_points = records.iter().filter(|r| r.experiment.starts_with("sweep/ce/sf_ilm/")).count();
    assert_eq!(ilm_points, 4);
    assert!(records.iter().all(|r| r.config_hash == c.hash() && r.seed == c.seed));
}

#[test]
fn reloaded_checkpoint_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    let records = run_pipeline(&c).unwrap();
    let wd = WorkDir::new(&c.work_dir);
    let model = load_model(&c, CE).unwrap();
    let copy = dir.path().join("copy.ckpt");
    model.save(&copy).unwrap();
    assert_eq!(std::fs::read(&copy).unwrap(), std::fs::read(wd.checkpoint(CE)).unwrap());
    assert_eq!(TransducerParams::load(&copy).unwrap(), model);

    let l1 = lookup(&records, "best/ce/sf", "lambda1").unwrap();
    let wer = decode_phase(&c, CE, FusionMode::Sf, l1, 0.0, None).unwrap();
    assert_eq!(wer.to_bits(), lookup(&records, "best/ce/sf", "wer").unwrap().to_bits());
    let lines = std::fs::read_to_string(wd.decode(CE, FusionMode::Sf)).unwrap();
    assert_eq!(lines.lines().filter(|l| l.starts_with("UTT ")).count(), c.dev_utts);
}

#[test]
fn context1_companion_run_adds_lf_mmi() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.context1_tables = true;
    c.train_lms = vec!["full".into()];
    c.decode_modes = vec!["none".into(), "sf".into(), "sf_ilm".into()];
    run_pipeline(&c).unwrap();
    let sub = WorkDir::new(&c.work_dir).context1();
    assert!(sub.checkpoint("lf_mmi.bigram").exists());
    let report = std::fs::read_to_string(WorkDir::new(&c.work_dir).tables()).unwrap();
    assert!(report.contains("T2 (context_one predictor)"));
    assert!(report.contains("lf_mmi.bigram"));
}

#[test]
fn lf_mmi_requires_a_context_one_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.finetune = vec!["lf_mmi".into()];
    gen_data(&c).unwrap();
    train_ce_phase(&c).unwrap();
    gen_nbest_phase(&c).unwrap();
    assert!(matches!(train_seq_phase(&c), Err(HarnessError::Config(_))));
}

#[test]
fn table_model_flag_reaches_the_mmi_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.table_model = true;
    c.finetune = vec!["mmi_exact".into()];
    c.beta = 0.5;
    let records = run_pipeline(&c).unwrap();
    let tv = lookup(&records, "table_model/mmi_exact", "total_variation").unwrap();
    assert!(tv <= 1e-3, "{tv}");
    c.finetune = vec!["mbr_nbest".into()];
    assert!(run_pipeline(&c).is_err());
}
