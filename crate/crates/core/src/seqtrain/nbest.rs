use std::io::{BufRead, Write};

use super::{check_space, normalize, risk_weights, SeqScales, SequenceModel};
use crate::error::{Error, Result};
use crate::lattice::{seq_log_prob, LossResult};
use crate::lm::SequenceScorer;
use crate::model::{Label, LabelSequence, TransducerParams, Vocabulary};
use crate::nn::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct NBestEntry {
    pub labels: LabelSequence,
    /// Cached `log P_RNNT(labels | X)` of the generating model.
    pub transducer: f64,
    /// Cached `log P_LM(labels)`.
    pub lm: f64,
}

/// Hypotheses for one utterance, unique and non-empty.
#[derive(Clone, Debug, PartialEq)]
pub struct NBestList {
    id: String,
    entries: Vec<NBestEntry>,
    reference_appended: bool,
}

impl NBestList {
    pub fn new(id: impl Into<String>, entries: Vec<NBestEntry>) -> Result<Self> {
        let id = id.into();
        if entries.is_empty() {
            return Err(Error::Contract(format!("N-best list {id} is empty")));
        }
        let space: Vec<LabelSequence> = entries.iter().map(|e| e.labels.clone()).collect();
        check_space(&space)?;
        Ok(Self { id, entries, reference_appended: false })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn entries(&self) -> &[NBestEntry] {
        &self.entries
    }

    pub fn reference_appended(&self) -> bool {
        self.reference_appended
    }

    pub fn contains(&self, labels: &[Label]) -> bool {
        self.entries.iter().any(|e| e.labels == labels)
    }

    /// Appends `reference` with the given cached scores unless already present.
    pub fn with_reference(mut self, reference: NBestEntry) -> Self {
        if !self.contains(&reference.labels) {
            self.entries.push(reference);
            self.reference_appended = true;
        }
        self
    }

    /// Same hypotheses with the LM column recomputed by `lm`.
    pub fn rescore_lm(&self, lm: &dyn SequenceScorer) -> Result<Self> {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.lm = lm.score(&e.labels)?;
        }
        Ok(out)
    }

    /// Whether every cached score regenerates bitwise from `model` and `lm`.
    pub fn verify_cache(&self, model: &TransducerParams, features: &Matrix, lm: &dyn SequenceScorer) -> Result<bool> {
        for e in &self.entries {
            let t = seq_log_prob(model, features, &e.labels)?.value();
            if t.to_bits() != e.transducer.to_bits() || lm.score(&e.labels)?.to_bits() != e.lm.to_bits() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// `UTT <id> <n>` then `n` lines of `log_p_rnnt<TAB>log_p_lm<TAB>labels`.
pub fn write_nbest<W: Write>(w: &mut W, vocab: &Vocabulary, lists: &[NBestList]) -> Result<()> {
    for list in lists {
        writeln!(w, "UTT {} {}", list.id, list.entries.len())?;
        for e in &list.entries {
            writeln!(w, "{}\t{}\t{}", e.transducer, e.lm, vocab.format_sequence(&e.labels)?)?;
        }
    }
    Ok(())
}

pub fn read_nbest<R: BufRead>(r: R, vocab: &Vocabulary) -> Result<Vec<NBestList>> {
    let mut lines = r.lines();
    let mut out = Vec::new();
    while let Some(header) = lines.next() {
        let header = header?;
        if header.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (id, n) = match parts.as_slice() {
            ["UTT", id, n] => (
                id.to_string(),
                n.parse::<usize>().map_err(|_| Error::Format(format!("bad N-best count in {header:?}")))?,
            ),
            _ => return Err(Error::Format(format!("bad N-best header {header:?}"))),
        };
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let line = lines.next().ok_or_else(|| Error::Format(format!("N-best list {id} is truncated")))??;
            let mut fields = line.splitn(3, '\t');
            let mut num = |what: &str| -> Result<f64> {
                fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad {what} score in {line:?}")))
            };
            let transducer = num("transducer")?;
            let lm = num("LM")?;
            let labels = vocab.parse_sequence(fields.next().unwrap_or(""))?;
            entries.push(NBestEntry { labels, transducer, lm });
        }
        out.push(NBestList::new(id, entries)?);
    }
    Ok(out)
}

/// The N-best space with the reference appended when missing, the cached LM
/// column, and the reference index.
fn training_space(
    nbest: &NBestList,
    reference: &[Label],
    lm: &dyn SequenceScorer,
) -> Result<(Vec<LabelSequence>, Vec<f64>, usize)> {
    let mut space: Vec<LabelSequence> = nbest.entries.iter().map(|e| e.labels.clone()).collect();
    let mut lm_scores: Vec<f64> = nbest.entries.iter().map(|e| e.lm).collect();
    let r = match space.iter().position(|a| a == reference) {
        Some(r) => r,
        None => {
            space.push(reference.to_vec());
            lm_scores.push(lm.score(reference)?);
            space.len() - 1
        }
    };
    Ok((space, lm_scores, r))
}

/// `−log P_seq(reference)` normalized over the N-best list plus the reference.
/// Transducer scores are recomputed; LM scores come from the cache.
pub fn mmi_loss_nbest<M: SequenceModel>(
    model: &M,
    input: &M::Input,
    lm: &dyn SequenceScorer,
    scales: SeqScales,
    nbest: &NBestList,
    reference: &[Label],
) -> Result<LossResult> {
    let (space, lm_scores, r) = training_space(nbest, reference, lm)?;
    let (lp, cache) = model.forward(input, &space)?;
    if lp[r] == f64::NEG_INFINITY {
        return Err(Error::TrainingData(format!("reference of length {} cannot be scored", reference.len())));
    }
    let combined: Vec<f64> = lp.iter().zip(&lm_scores).map(|(t, l)| scales.combine(*t, *l)).collect();
    let (q, log_z) = normalize(&combined)?;
    let mut weights: Vec<f64> = q.iter().map(|v| scales.alpha() * v).collect();
    weights[r] -= scales.alpha();
    let mut grad = vec![0.0; model.param_count()];
    model.backward(&cache, &weights, &mut grad);
    Ok(LossResult { loss: log_z - combined[r], grad })
}

/// `Σ_h P_seq(h) R(h, reference)` over the N-best list plus the reference.
pub fn mbr_loss_nbest<M, R>(
    model: &M,
    input: &M::Input,
    lm: &dyn SequenceScorer,
    scales: SeqScales,
    nbest: &NBestList,
    reference: &[Label],
    risk: R,
) -> Result<LossResult>
where
    M: SequenceModel,
    R: Fn(&[Label], &[Label]) -> f64,
{
    let (space, lm_scores, r) = training_space(nbest, reference, lm)?;
    let (lp, cache) = model.forward(input, &space)?;
    if lp[r] == f64::NEG_INFINITY {
        return Err(Error::TrainingData(format!("reference of length {} cannot be scored", reference.len())));
    }
    let combined: Vec<f64> = lp.iter().zip(&lm_scores).map(|(t, l)| scales.combine(*t, *l)).collect();
    let (q, _) = normalize(&combined)?;
    let risks: Vec<f64> = space.iter().map(|h| risk(h, reference)).collect();
    let mut weights = vec![0.0; space.len()];
    let loss = risk_weights(&q, &risks, &mut weights);
    weights.iter_mut().for_each(|w| *w *= scales.alpha());
    let mut grad = vec![0.0; model.param_count()];
    model.backward(&cache, &weights, &mut grad);
    Ok(LossResult { loss, grad })
}
