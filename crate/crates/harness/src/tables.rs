//! Plain-text tables and directional findings from result records.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;

use tslab_core::decoder::FusionMode;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::pipeline::{model_names, reference_models, WorkDir, CE};
use crate::records::{lookup, read_records, ResultRecord};

const TABLE_MODES: [FusionMode; 5] =
    [FusionMode::None, FusionMode::Sf, FusionMode::SfDr, FusionMode::SfIlm, FusionMode::SfReduceBlank];

fn mode_title(m: FusionMode) -> &'static str {
    match m {
        FusionMode::None => "no LM",
        FusionMode::Sf => "SF",
        FusionMode::SfDr => "SF+DR",
        FusionMode::SfIlm => "SF+zero-ILM",
        FusionMode::SfReduceBlank => "SF+reduce-Pblank",
    }
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn best_wer(records: &[ResultRecord], model: &str, mode: FusionMode) -> Option<f64> {
    lookup(records, &format!("best/{model}/{}", mode.name()), "wer")
}

fn load_records(wd: &WorkDir) -> Result<Vec<ResultRecord>> {
    let path = wd.results();
    if !path.exists() {
        return Err(HarnessError::PipelineOrder(format!("{} is missing; run the evaluation first", path.display())));
    }
    read_records(BufReader::new(File::open(path)?))
}

fn wer_table(out: &mut String, title: &str, records: &[ResultRecord], names: &[String]) {
    let _ = writeln!(out, "{title}: dev WER [%], best over the λ grid");
    let mut header = format!("{:<18}", "model");
    for m in TABLE_MODES {
        header.push_str(&format!("{:>18}", mode_title(m)));
    }
    let _ = writeln!(out, "{header}");
    for name in names {
        let mut row = format!("{name:<18}");
        for m in TABLE_MODES {
            row.push_str(&format!("{:>18}", cell(best_wer(records, name, m), 2)));
        }
        let _ = writeln!(out, "{row}");
    }
    out.push('\n');
}

/// The four table analogs for the run in `c.work_dir` (T2 from the
/// context-1 companion run when present), followed by the findings.
pub fn experiment_tables(c: &ExperimentConfig) -> Result<String> {
    let wd = WorkDir::new(&c.work_dir);
    let (mmi, mbr) = reference_models(c)?;
    for name in [CE, mmi.as_str(), mbr.as_str()] {
        let p = wd.checkpoint(name);
        if !p.exists() {
            return Err(HarnessError::MissingCheckpoint(p.display().to_string()));
        }
    }
    let records = load_records(&wd)?;
    let mut out = String::new();
    wer_table(&mut out, &format!("T1 ({} predictor)", c.predictor), &records, &model_names(c));
    let sub = crate::pipeline::context1_config(c);
    if WorkDir::new(&sub.work_dir).results().exists() {
        let r2 = load_records(&WorkDir::new(&sub.work_dir))?;
        wer_table(&mut out, "T2 (context_one predictor)", &r2, &model_names(&sub));
    }

    let _ = writeln!(
        out,
        "T3: zero-encoder ILM perplexity on dev transcripts; WER [%] of the CE model with that ILM subtracted"
    );
    let _ = writeln!(out, "{:<18}{:>14}{:>16}{:>14}", "ILM from", "w/ renorm", "w/o renorm", "CE + ILM");
    for name in [CE, mmi.as_str(), mbr.as_str()] {
        let id = format!("ppl/{name}");
        let transfer = if name == CE {
            best_wer(&records, CE, FusionMode::SfIlm)
        } else {
            lookup(&records, &format!("ilm_transfer/{name}"), "wer")
        };
        let _ = writeln!(
            out,
            "{name:<18}{:>14}{:>16}{:>14}",
            cell(lookup(&records, &id, "renorm"), 3),
            cell(lookup(&records, &id, "raw"), 3),
            cell(transfer, 2)
        );
    }
    out.push('\n');

    let _ = writeln!(out, "T4: dev WER [%] under SF with swapped components");
    let _ = writeln!(out, "{:<18}{:<18}{:>10}", "encoder", "pred+joint", "WER");
    for enc in [CE, mmi.as_str(), mbr.as_str()] {
        for pj in [CE, mmi.as_str(), mbr.as_str()] {
            let w = lookup(&records, &format!("swap/{enc}/{pj}"), "wer");
            let _ = writeln!(out, "{enc:<18}{pj:<18}{:>10}", cell(w, 2));
        }
    }
    out.push('\n');

    let _ = writeln!(out, "Findings");
    match findings(&records, c) {
        Ok(f) => {
            for line in f.lines() {
                let _ = writeln!(out, "{line}");
            }
        }
        Err(e) => {
            let _ = writeln!(out, "unavailable: {e}");
        }
    }
    Ok(out)
}

/// The four directional comparisons between CE and the fine-tuned models.
#[derive(Clone, Debug)]
pub struct Findings {
    pub ce_sf: f64,
    pub ce_sf_ilm: f64,
    /// SF WER minus SF+zero-ILM WER for CE, MMI, MBR.
    pub gaps: [f64; 3],
    /// Renorm and raw zero-encoder ILM perplexity for CE, MMI, MBR.
    pub ppl_renorm: [f64; 3],
    pub ppl_raw: [f64; 3],
    /// Mean blank probability for CE and MMI.
    pub blank: [f64; 2],
}

/// Largest relative renorm perplexity change still counted as unchanged.
pub const RENORM_TOLERANCE: f64 = 0.1;

impl Findings {
    /// ILM subtraction strictly helps the CE model.
    pub fn ilm_subtraction_helps(&self) -> bool {
        self.ce_sf_ilm < self.ce_sf
    }

    /// The SF vs SF+ILM gap is smaller after MMI or after MBR.
    pub fn gap_shrinks(&self) -> bool {
        self.gaps[1] < self.gaps[0] || self.gaps[2] < self.gaps[0]
    }

    /// For MMI or MBR: lower raw perplexity with the renorm one within tolerance.
    pub fn raw_ppl_drops_renorm_flat(&self) -> bool {
        (1..3).any(|i| {
            self.ppl_raw[i] < self.ppl_raw[0]
                && (self.ppl_renorm[i] / self.ppl_renorm[0] - 1.0).abs() < RENORM_TOLERANCE
        })
    }

    pub fn blank_suppressed(&self) -> bool {
        self.blank[1] < self.blank[0]
    }

    pub fn lines(&self) -> Vec<String> {
        let yn = |b: bool| if b { "holds" } else { "does not hold" };
        vec![
            format!(
                "(a) SF+zero-ILM vs SF for CE: {:.2} vs {:.2} -> {}",
                self.ce_sf_ilm,
                self.ce_sf,
                yn(self.ilm_subtraction_helps())
            ),
            format!(
                "(b) SF - SF+ILM gap CE/MMI/MBR: {:.2}/{:.2}/{:.2} -> {}",
                self.gaps[0],
                self.gaps[1],
                self.gaps[2],
                yn(self.gap_shrinks())
            ),
            format!(
                "(c) ILM PPL renorm {:.3}/{:.3}/{:.3}, raw {:.3}/{:.3}/{:.3} -> {}",
                self.ppl_renorm[0],
                self.ppl_renorm[1],
                self.ppl_renorm[2],
                self.ppl_raw[0],
                self.ppl_raw[1],
                self.ppl_raw[2],
                yn(self.raw_ppl_drops_renorm_flat())
            ),
            format!(
                "(d) mean blank probability CE/MMI: {:.4}/{:.4} -> {}",
                self.blank[0],
                self.blank[1],
                yn(self.blank_suppressed())
            ),
        ]
    }
}

pub fn findings(records: &[ResultRecord], c: &ExperimentConfig) -> Result<Findings> {
    let (mmi, mbr) = reference_models(c)?;
    let get = |exp: String, metric: &str| {
        lookup(records, &exp, metric).ok_or_else(|| HarnessError::PipelineOrder(format!("no record {exp} {metric}")))
    };
    let trio = [CE, mmi.as_str(), mbr.as_str()];
    let mut gaps = [0.0; 3];
    let mut ppl_renorm = [0.0; 3];
    let mut ppl_raw = [0.0; 3];
    for (i, m) in trio.iter().enumerate() {
        gaps[i] = get(format!("best/{m}/sf"), "wer")? - get(format!("best/{m}/sf_ilm"), "wer")?;
        ppl_renorm[i] = get(format!("ppl/{m}"), "renorm")?;
        ppl_raw[i] = get(format!("ppl/{m}"), "raw")?;
    }
    Ok(Findings {
        ce_sf: get(format!("best/{CE}/sf"), "wer")?,
        ce_sf_ilm: get(format!("best/{CE}/sf_ilm"), "wer")?,
        gaps,
        ppl_renorm,
        ppl_raw,
        blank: [get(format!("blank/{CE}"), "mean_blank_prob")?, get(format!("blank/{mmi}"), "mean_blank_prob")?],
    })
}
