//! Work-directory phases: data, CE, N-best, fine-tuning and evaluation.
//!
//! Every phase reads its inputs from and writes its outputs to `work_dir`, so
//! the CLI can run them one at a time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use tslab_core::decoder::{format_decode_line, BeamConfig, BlankReduction, FusionMode};
use tslab_core::ilm::{density_ratio_ilm, zero_encoder_ilm, DensityRatioConfig, IlmEstimate};
use tslab_core::lm::{read_corpus, write_corpus, NeuralLm};
use tslab_core::model::{Container, LabelSequence, PredictorKind, TransducerParams, Vocabulary};
use tslab_core::seqtrain::{read_nbest, write_nbest, NBestList};

use crate::config::ExperimentConfig;
use crate::data::{
    generate_dataset, generate_text, read_utterances, write_utterances, SyntheticDatasetConfig, Utterance,
};
use crate::error::{HarnessError, Result};
use crate::eval::{best, decode_set, mean_blank_probability, sweep, zero_ilm_perplexities, SweepPoint, SweepScorers};
use crate::oracle::table_mmi_run;
use crate::records::{write_records, RecordSink, ResultRecord};
use crate::train::{finetune, generate_nbest, initial_model, model_config, train_bigram, train_ce, train_elm};

pub const CE: &str = "ce";

/// File layout of one run.
#[derive(Clone, Debug)]
pub struct WorkDir {
    root: PathBuf,
}

impl WorkDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("train.txt")
    }

    pub fn dev(&self) -> PathBuf {
        self.root.join("dev.txt")
    }

    pub fn elm_text(&self) -> PathBuf {
        self.root.join("elm_text.txt")
    }

    pub fn elm(&self) -> PathBuf {
        self.root.join("elm.ckpt")
    }

    pub fn nbest(&self) -> PathBuf {
        self.root.join("nbest.txt")
    }

    pub fn checkpoint(&self, model: &str) -> PathBuf {
        self.root.join(format!("{model}.ckpt"))
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.jsonl")
    }

    pub fn tables(&self) -> PathBuf {
        self.root.join("tables.txt")
    }

    pub fn decode(&self, model: &str, mode: FusionMode) -> PathBuf {
        self.root.join(format!("decode_{model}_{}.txt", mode.name()))
    }

    /// The context-1 companion run.
    pub fn context1(&self) -> WorkDir {
        WorkDir::new(self.root.join("context1"))
    }
}

fn require(path: &Path, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(HarnessError::PipelineOrder(format!("{} is missing; run {produced_by} first", path.display())))
    }
}

/// Checkpoint name of a fine-tuned model.
pub fn finetuned_name(criterion: &str, lm: &str) -> String {
    format!("{criterion}.{lm}")
}

/// (criterion, training LM) pairs the config fine-tunes, in order.
pub fn finetune_plan(c: &ExperimentConfig) -> Vec<(String, String)> {
    let mut plan = Vec::new();
    for crit in &c.finetune {
        if crit == "lf_mmi" {
            plan.push((crit.clone(), "bigram".to_string()));
        } else {
            plan.extend(c.train_lms.iter().map(|lm| (crit.clone(), lm.clone())));
        }
    }
    plan
}

/// CE first, then every fine-tuned model.
pub fn model_names(c: &ExperimentConfig) -> Vec<String> {
    let mut names = vec![CE.to_string()];
    names.extend(finetune_plan(c).iter().map(|(crit, lm)| finetuned_name(crit, lm)));
    names
}

/// The MMI and MBR models the ILM and swap analyses compare against CE.
pub fn reference_models(c: &ExperimentConfig) -> Result<(String, String)> {
    let lm = c.train_lms.first().ok_or_else(|| HarnessError::Config("train_lms is empty".into()))?;
    Ok((finetuned_name("mmi_nbest", lm), finetuned_name("mbr_nbest", lm)))
}

pub struct Corpus {
    pub vocab: Vocabulary,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub elm_text: Vec<LabelSequence>,
}

impl Corpus {
    pub fn train_transcripts(&self) -> Vec<LabelSequence> {
        self.train.iter().map(|u| u.labels.clone()).collect()
    }

    pub fn dev_transcripts(&self) -> Vec<LabelSequence> {
        self.dev.iter().map(|u| u.labels.clone()).collect()
    }
}

fn write_utterance_file(path: &Path, vocab: &Vocabulary, utts: &[Utterance]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_utterances(&mut w, vocab, utts)?;
    w.flush()?;
    Ok(())
}

pub fn gen_data(c: &ExperimentConfig) -> Result<()> {
    c.validate()?;
    let wd = WorkDir::new(&c.work_dir);
    std::fs::create_dir_all(wd.root())?;
    let data = generate_dataset(&SyntheticDatasetConfig::from_experiment(c))?;
    let text = generate_text(&data.prior, c.elm_sentences, c.derived_seed("text"));
    write_utterance_file(&wd.train(), &data.vocab, &data.train)?;
    write_utterance_file(&wd.dev(), &data.vocab, &data.dev)?;
    write_corpus(wd.elm_text(), &data.vocab, &text)?;
    std::fs::write(wd.config(), c.to_text())?;
    Ok(())
}

pub fn load_corpus(c: &ExperimentConfig) -> Result<Corpus> {
    let wd = WorkDir::new(&c.work_dir);
    for p in [wd.train(), wd.dev(), wd.elm_text()] {
        require(&p, "gen-data")?;
    }
    let vocab = Vocabulary::with_size(c.vocab_size)?;
    let train = read_utterances(BufReader::new(File::open(wd.train())?), &vocab)?;
    let dev = read_utterances(BufReader::new(File::open(wd.dev())?), &vocab)?;
    let elm_text = read_corpus(wd.elm_text(), &vocab)?;
    Ok(Corpus { vocab, train, dev, elm_text })
}

pub fn load_model(c: &ExperimentConfig, name: &str) -> Result<TransducerParams> {
    let path = WorkDir::new(&c.work_dir).checkpoint(name);
    if !path.exists() {
        return Err(HarnessError::MissingCheckpoint(path.display().to_string()));
    }
    let model = TransducerParams::load(&path)?;
    if model.config() != &model_config(c)? {
        return Err(HarnessError::Config(format!("{} does not match the configured model", path.display())));
    }
    Ok(model)
}

/// Trains the CE model from scratch and writes `ce.ckpt`; returns per-epoch losses.
pub fn train_ce_phase(c: &ExperimentConfig) -> Result<Vec<f64>> {
    let corpus = load_corpus(c)?;
    let mut model = initial_model(c)?;
    let trace = train_ce(&mut model, &corpus.train, c)?;
    model.save(WorkDir::new(&c.work_dir).checkpoint(CE))?;
    Ok(trace)
}

/// The external LM written by `gen-nbest`.
pub fn load_elm(c: &ExperimentConfig) -> Result<NeuralLm> {
    let path = WorkDir::new(&c.work_dir).elm();
    require(&path, "gen-nbest")?;
    Ok(NeuralLm::from_container(&Container::load(&path)?)?)
}

/// Trains the external LM on `elm_text.txt` (written to `elm.ckpt`), decodes
/// the training set with the CE model and that LM and writes `nbest.txt`. The lists are never regenerated during fine-tuning.
pub fn gen_nbest_phase(c: &ExperimentConfig) -> Result<()> {
    let corpus = load_corpus(c)?;
    let wd = WorkDir::new(&c.work_dir);
    require(&wd.checkpoint(CE), "train-ce")?;
    let model = load_model(c, CE)?;
    let elm = train_elm(&corpus.elm_text, c)?;
    elm.to_container().save(wd.elm())?;
    let lists = generate_nbest(&model, &corpus.train, &elm, c)?;
    let mut w = BufWriter::new(File::create(wd.nbest())?);
    write_nbest(&mut w, &corpus.vocab, &lists)?;
    w.flush()?;
    Ok(())
}

fn load_nbest(c: &ExperimentConfig, vocab: &Vocabulary) -> Result<Vec<NBestList>> {
    let path = WorkDir::new(&c.work_dir).nbest();
    require(&path, "gen-nbest")?;
    Ok(read_nbest(BufReader::new(File::open(path)?), vocab)?)
}

/// Fine-tunes a copy of the CE model for every planned (criterion, LM) pair.
/// Returns each model name with its per-epoch losses.
pub fn train_seq_phase(c: &ExperimentConfig) -> Result<Vec<(String, Vec<f64>)>> {
    let wd = WorkDir::new(&c.work_dir);
    require(&wd.checkpoint(CE), "train-ce")?;
    let corpus = load_corpus(c)?;
    let ce = load_model(c, CE)?;
    let full_lists = load_nbest(c, &corpus.vocab)?;
    let elm = load_elm(c)?;
    let bigram = train_bigram(&corpus.elm_text, c)?;
    let bigram_lists = full_lists.iter().map(|l| l.rescore_lm(&bigram)).collect::<tslab_core::Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (crit, lm_name) in finetune_plan(c) {
        if crit == "lf_mmi" && ce.config().predictor != PredictorKind::ContextOne {
            return Err(HarnessError::Config("lf_mmi needs predictor = context_one".into()));
        }
        let mut model = ce.clone();
        let trace = if lm_name == "full" {
            finetune(&mut model, &corpus.train, &full_lists, &elm, &crit, c)?
        } else {
            finetune(&mut model, &corpus.train, &bigram_lists, &bigram, &crit, c)?
        };
        let name = finetuned_name(&crit, &lm_name);
        model.save(wd.checkpoint(&name))?;
        out.push((name, trace));
    }
    Ok(out)
}

fn density_ratio(c: &ExperimentConfig, corpus: &Corpus) -> Result<IlmEstimate> {
    let dr = DensityRatioConfig::NGram { order: c.dr_order, delta: c.ngram_delta };
    Ok(density_ratio_ilm(&corpus.train_transcripts(), c.vocab_size, &dr)?)
}

fn decode_modes(c: &ExperimentConfig) -> Result<Vec<FusionMode>> {
    Ok(c.decode_modes.iter().map(|m| FusionMode::parse(m)).collect::<tslab_core::Result<Vec<_>>>()?)
}

fn point_id(model: &str, p: &SweepPoint) -> String {
    let mut id = format!("sweep/{model}/{}/l1={}/l2={}", p.mode.name(), p.lambda1, p.lambda2);
    if let Some(r) = p.rho {
        id.push_str(&format!("/rho={r}"));
    }
    id
}

fn push_sweep(sink: &mut RecordSink, model: &str, points: &[SweepPoint]) {
    for p in points {
        sink.push(point_id(model, p), "wer", "dev", p.wer);
    }
    let b = best(points);
    let id = format!("best/{model}/{}", b.mode.name());
    sink.push(&id, "wer", "dev", b.wer);
    sink.push(&id, "lambda1", "dev", b.lambda1);
    sink.push(&id, "lambda2", "dev", b.lambda2);
    if let Some(r) = b.rho {
        sink.push(&id, "rho", "dev", r);
    }
}

/// Decoding sweeps, ILM perplexities and blank statistics for every model,
/// plus the ILM-transfer and component-swap analyses when their inputs exist.
/// Writes `results.jsonl`.
pub fn evaluate(c: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let wd = WorkDir::new(&c.work_dir);
    let corpus = load_corpus(c)?;
    let elm = load_elm(c)?;
    let dr = density_ratio(c, &corpus)?;
    let modes = decode_modes(c)?;
    let scorers = SweepScorers { elm: &elm, density_ratio: &dr, ilm_override: None };
    let dev_text = corpus.dev_transcripts();
    let mut sink = RecordSink::new(c);

    let names = model_names(c);
    let mut models = Vec::new();
    for name in &names {
        models.push(load_model(c, name)?);
    }
    for (name, model) in names.iter().zip(&models) {
        for &mode in &modes {
            push_sweep(&mut sink, name, &sweep(model, &corpus.dev, mode, &scorers, c)?);
        }
        let (renorm, raw) = zero_ilm_perplexities(model, &dev_text)?;
        sink.push(format!("ppl/{name}"), "renorm", "dev", renorm);
        sink.push(format!("ppl/{name}"), "raw", "dev", raw);
        sink.push(format!("blank/{name}"), "mean_blank_prob", "dev", mean_blank_probability(model, &corpus.dev)?);
    }

    let (mmi, mbr) = reference_models(c)?;
    let find = |n: &str| names.iter().position(|x| x == n).map(|i| &models[i]);
    if let (Some(ce), Some(mmi_m), Some(mbr_m)) = (find(CE), find(&mmi), find(&mbr)) {
        if modes.contains(&FusionMode::SfIlm) {
            for (src, m) in [(&mmi, mmi_m), (&mbr, mbr_m)] {
                let ilm = zero_encoder_ilm(m, true);
                let s = SweepScorers { ilm_override: Some(&ilm), ..scorers };
                let points = sweep(ce, &corpus.dev, FusionMode::SfIlm, &s, c)?;
                sink.push(format!("ilm_transfer/{src}"), "wer", "dev", best(&points).wer);
            }
        }
        if modes.contains(&FusionMode::Sf) {
            let trio = [(CE, ce), (mmi.as_str(), mmi_m), (mbr.as_str(), mbr_m)];
            for (enc, pj, wer) in swap_wers(trio, &corpus.dev, &scorers, c)? {
                sink.push(format!("swap/{enc}/{pj}"), "wer", "dev", wer);
            }
        }
    }

    let records = sink.into_records();
    let mut w = BufWriter::new(File::create(wd.results())?);
    write_records(&mut w, &records)?;
    w.flush()?;
    Ok(records)
}

/// Best SF WER of every encoder × prediction+joint combination.
fn swap_wers(
    trio: [(&str, &TransducerParams); 3],
    dev: &[Utterance],
    scorers: &SweepScorers<'_>,
    c: &ExperimentConfig,
) -> Result<Vec<(String, String, f64)>> {
    let mut out = Vec::new();
    for (enc_name, enc) in trio {
        for (pj_name, pj) in trio {
            let swapped = TransducerParams::swap_components(enc, pj)?;
            let points = sweep(&swapped, dev, FusionMode::Sf, scorers, c)?;
            out.push((enc_name.to_string(), pj_name.to_string(), best(&points).wer));
        }
    }
    Ok(out)
}

/// Renorm and raw zero-encoder ILM perplexity of every configured model.
pub fn ilm_ppl_phase(c: &ExperimentConfig) -> Result<Vec<(String, f64, f64)>> {
    let corpus = load_corpus(c)?;
    let text = corpus.dev_transcripts();
    model_names(c)
        .into_iter()
        .map(|name| {
            let (renorm, raw) = zero_ilm_perplexities(&load_model(c, &name)?, &text)?;
            Ok((name, renorm, raw))
        })
        .collect()
}

/// The component-swap grid over CE, MMI and MBR.
pub fn swap_phase(c: &ExperimentConfig) -> Result<Vec<(String, String, f64)>> {
    let corpus = load_corpus(c)?;
    let elm = load_elm(c)?;
    let dr = density_ratio(c, &corpus)?;
    let (mmi, mbr) = reference_models(c)?;
    let (ce_m, mmi_m, mbr_m) = (load_model(c, CE)?, load_model(c, &mmi)?, load_model(c, &mbr)?);
    let scorers = SweepScorers { elm: &elm, density_ratio: &dr, ilm_override: None };
    swap_wers([(CE, &ce_m), (&mmi, &mmi_m), (&mbr, &mbr_m)], &corpus.dev, &scorers, c)
}

/// One decoding configuration of one model; writes the per-utterance lines to
/// `decode_<model>_<mode>.txt` and returns the WER.
pub fn decode_phase(
    c: &ExperimentConfig,
    model_name: &str,
    mode: FusionMode,
    lambda1: f64,
    lambda2: f64,
    rho: Option<f64>,
) -> Result<f64> {
    let wd = WorkDir::new(&c.work_dir);
    let corpus = load_corpus(c)?;
    let model = load_model(c, model_name)?;
    let elm = if mode.uses_elm() { Some(load_elm(c)?) } else { None };
    let ilm = match mode {
        FusionMode::SfIlm => Some(zero_encoder_ilm(&model, true)),
        FusionMode::SfDr => Some(density_ratio(c, &corpus)?),
        _ => None,
    };
    let config = BeamConfig {
        fusion_mode: mode,
        lambda1,
        lambda2,
        blank_reduction: rho.map_or(BlankReduction::Off, BlankReduction::Linear),
        ..BeamConfig::plain(c.beam_size)
    };
    let elm_ref = elm.as_ref().map(|l| l as &dyn tslab_core::lm::SequenceScorer);
    let (hyps, wer) = decode_set(&model, &corpus.dev, elm_ref, ilm.as_ref(), &config)?;
    let mut w = BufWriter::new(File::create(wd.decode(model_name, mode))?);
    for (u, h) in corpus.dev.iter().zip(&hyps) {
        writeln!(w, "{}", format_decode_line(&u.id, &corpus.vocab, &u.labels, h)?)?;
    }
    writeln!(w, "WER {wer}")?;
    w.flush()?;
    Ok(wer)
}

/// Table-model stand-in: exact MMI on a free table model, reported as the
/// distance to the analytic optimum.
fn table_model_run(c: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let mut sink = RecordSink::new(c);
    for crit in &c.finetune {
        if crit != "mmi_exact" {
            return Err(HarnessError::Config(format!("table_model supports mmi_exact only, not {crit}")));
        }
        let r = table_mmi_run(c.alpha, c.beta)?;
        sink.push("table_model/mmi_exact", "total_variation", "train", r.total_variation);
        sink.push("table_model/mmi_exact", "target_vs_empirical", "train", r.target_vs_empirical);
    }
    let records = sink.into_records();
    std::fs::create_dir_all(&c.work_dir)?;
    let mut w = BufWriter::new(File::create(WorkDir::new(&c.work_dir).results())?);
    write_records(&mut w, &records)?;
    w.flush()?;
    Ok(records)
}

/// Config of the context-1 companion run.
pub fn context1_config(c: &ExperimentConfig) -> ExperimentConfig {
    let mut sub = c.clone();
    sub.work_dir = WorkDir::new(&c.work_dir).context1().root().to_path_buf();
    sub.predictor = PredictorKind::ContextOne.name().to_string();
    if !sub.finetune.iter().any(|f| f == "lf_mmi") {
        sub.finetune.push("lf_mmi".into());
    }
    sub.context1_tables = false;
    sub
}

/// Every phase in order, then `results.jsonl` and `tables.txt`. With
/// `context1_tables` the context-1 companion run goes first.
pub fn run_pipeline(c: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    c.validate()?;
    if c.table_model {
        return table_model_run(c);
    }
    if c.context1_tables {
        run_single(&context1_config(c))?;
    }
    let records = run_single(c)?;
    let report = crate::tables::experiment_tables(c)?;
    std::fs::write(WorkDir::new(&c.work_dir).tables(), report)?;
    Ok(records)
}

fn run_single(c: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    gen_data(c)?;
    train_ce_phase(c)?;
    gen_nbest_phase(c)?;
    train_seq_phase(c)?;
    evaluate(c)
}
