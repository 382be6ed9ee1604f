use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ilm::{IlmEstimate, IlmKind};
use crate::lattice::seq_log_prob;
use crate::lm::{SequenceScorer, StepLogProbs};
use crate::model::{length_then_lex, Label, LabelSequence, PredState, TransducerParams, Vocabulary, BLANK};
use crate::nn::Matrix;
use crate::numerics::log_add;
use crate::seqtrain::{NBestEntry, NBestList};

use super::edit_distance;

/// Decode-time blank suppression.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum BlankReduction {
    #[default]
    Off,
    /// Blank mass multiplied by `ρ ∈ [0, 1]`.
    Linear(f64),
    /// Blank probability raised to `γ ≥ 1`.
    Exponential(f64),
}

impl BlankReduction {
    pub fn validate(self) -> Result<()> {
        match self {
            BlankReduction::Off => Ok(()),
            BlankReduction::Linear(rho) if (0.0..=1.0).contains(&rho) => Ok(()),
            BlankReduction::Linear(rho) => {
                Err(Error::Config(format!("linear blank reduction needs ρ in [0, 1], got {rho}")))
            }
            BlankReduction::Exponential(g) if g >= 1.0 => Ok(()),
            BlankReduction::Exponential(g) => {
                Err(Error::Config(format!("exponential blank reduction needs γ ≥ 1, got {g}")))
            }
        }
    }
}

/// Scales or exponentiates the blank entry (index 0) and renormalizes.
pub fn reduce_blank(step_dist: &[f64], reduction: BlankReduction) -> Result<Vec<f64>> {
    reduction.validate()?;
    let total: f64 = step_dist.iter().sum();
    if step_dist.is_empty() || (total - 1.0).abs() > 1e-9 || step_dist.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Contract(format!("step distribution must be a probability vector, sums to {total}")));
    }
    let mut out = step_dist.to_vec();
    match reduction {
        BlankReduction::Off => return Ok(out),
        BlankReduction::Linear(rho) => out[BLANK] *= rho,
        BlankReduction::Exponential(g) => out[BLANK] = out[BLANK].powf(g),
    }
    let z: f64 = out.iter().sum();
    if z == 0.0 {
        return Err(Error::DegenerateSpace);
    }
    out.iter_mut().for_each(|p| *p /= z);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionMode {
    None,
    Sf,
    SfIlm,
    SfDr,
    SfReduceBlank,
}

impl FusionMode {
    pub const ALL: [FusionMode; 5] =
        [FusionMode::None, FusionMode::Sf, FusionMode::SfIlm, FusionMode::SfDr, FusionMode::SfReduceBlank];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Sf => "sf",
            FusionMode::SfIlm => "sf_ilm",
            FusionMode::SfDr => "sf_dr",
            FusionMode::SfReduceBlank => "sf_reduce_blank",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Config(format!("unknown fusion mode {s:?}")))
    }

    pub fn uses_elm(self) -> bool {
        self != FusionMode::None
    }

    pub fn uses_ilm(self) -> bool {
        matches!(self, FusionMode::SfIlm | FusionMode::SfDr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub fusion_mode: FusionMode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub blank_reduction: BlankReduction,
    pub n_best_out: usize,
}

impl BeamConfig {
    /// Plain search without any LM.
    pub fn plain(beam_size: usize) -> Self {
        Self {
            beam_size,
            fusion_mode: FusionMode::None,
            lambda1: 0.0,
            lambda2: 0.0,
            blank_reduction: BlankReduction::Off,
            n_best_out: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.n_best_out == 0 {
            return Err(Error::Config("beam size and n_best_out must be at least 1".into()));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !self.fusion_mode.uses_elm() && self.lambda1 != 0.0 {
            return Err(Error::Config("lambda1 is only used with an external LM".into()));
        }
        if !self.fusion_mode.uses_ilm() && self.lambda2 != 0.0 {
            return Err(Error::Config(format!("lambda2 is not used in mode {}", self.fusion_mode.name())));
        }
        if self.fusion_mode != FusionMode::SfReduceBlank && self.blank_reduction != BlankReduction::Off {
            return Err(Error::Config("blank reduction is only used in mode sf_reduce_blank".into()));
        }
        self.blank_reduction.validate()
    }
}

/// A partial or final search output with its score decomposition.
#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub labels: LabelSequence,
    /// Alignment-summed transducer log-score (with blank reduction when enabled).
    pub transducer: f64,
    /// External LM log-score; includes the EOS factor once finalized.
    pub elm: f64,
    pub ilm: f64,
    pub state: PredState,
    pub combined: f64,
}

fn combine(transducer: f64, elm: f64, ilm: f64, config: &BeamConfig) -> f64 {
    // Zero-scaled terms are skipped so that λ = 0 reproduces the reduced rule bitwise.
    let mut c = transducer;
    if config.lambda1 != 0.0 {
        c += config.lambda1 * elm;
    }
    if config.lambda2 != 0.0 {
        c -= config.lambda2 * ilm;
    }
    c
}

impl Hypothesis {
    /// `transducer + λ₁·elm − λ₂·ilm`, recomputed from the components.
    pub fn recombined(&self, config: &BeamConfig) -> f64 {
        combine(self.transducer, self.elm, self.ilm, config)
    }
}

/// Memoized next-step distributions of one scorer.
struct StepCache<'a> {
    scorer: &'a dyn SequenceScorer,
    steps: BTreeMap<LabelSequence, StepLogProbs>,
}

impl<'a> StepCache<'a> {
    fn new(scorer: &'a dyn SequenceScorer) -> Self {
        Self { scorer, steps: BTreeMap::new() }
    }

    fn get(&mut self, history: &[Label]) -> &StepLogProbs {
        if !self.steps.contains_key(history) {
            let step = self.scorer.next_log_probs(history);
            self.steps.insert(history.to_vec(), step);
        }
        &self.steps[history]
    }
}

/// Adds `transducer` into an existing entry for `labels`; false when there is none.
fn merge(
    next: &mut BTreeMap<LabelSequence, Hypothesis>,
    labels: &[Label],
    transducer: f64,
    config: &BeamConfig,
) -> bool {
    match next.get_mut(labels) {
        Some(existing) => {
            existing.transducer = log_add(existing.transducer, transducer);
            existing.combined = combine(existing.transducer, existing.elm, existing.ilm, config);
            true
        }
        None => false,
    }
}

fn rank(a: &Hypothesis, b: &Hypothesis, scale: f64) -> std::cmp::Ordering {
    (scale * b.combined).total_cmp(&(scale * a.combined)).then_with(|| length_then_lex(&a.labels, &b.labels))
}

fn check_scorers(
    model: &TransducerParams,
    elm: Option<&dyn SequenceScorer>,
    ilm: Option<&IlmEstimate>,
    config: &BeamConfig,
) -> Result<()> {
    config.validate()?;
    let v = model.vocab().len();
    let mode = config.fusion_mode;
    match elm {
        Some(e) if e.vocab_size() != v => {
            return Err(Error::Config("external LM vocabulary differs from the model".into()))
        }
        None if mode.uses_elm() => {
            return Err(Error::Config(format!("mode {} needs an external LM", mode.name())));
        }
        _ => {}
    }
    match ilm {
        Some(i) if i.vocab_size() != v => return Err(Error::Config("ILM vocabulary differs from the model".into())),
        Some(i) if mode == FusionMode::SfDr && i.kind() != IlmKind::DensityRatio => {
            return Err(Error::Config(format!("mode sf_dr needs a density-ratio ILM, got {}", i.kind().name())));
        }
        None if mode.uses_ilm() => return Err(Error::Config(format!("mode {} needs an ILM", mode.name()))),
        _ => {}
    }
    Ok(())
}

/// Time-synchronous beam search over the strictly monotonic topology.
/// Returns up to `n_best_out` finalized hypotheses, best first.
pub fn beam_search(
    model: &TransducerParams,
    features: &Matrix,
    elm: Option<&dyn SequenceScorer>,
    ilm: Option<&IlmEstimate>,
    config: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    search(model, features, elm, ilm, config, 1.0)
}

/// `scale` multiplies every ranking score; the output order must not depend on it.
pub(crate) fn search(
    model: &TransducerParams,
    features: &Matrix,
    elm: Option<&dyn SequenceScorer>,
    ilm: Option<&IlmEstimate>,
    config: &BeamConfig,
    scale: f64,
) -> Result<Vec<Hypothesis>> {
    check_scorers(model, elm, ilm, config)?;
    if features.rows() == 0 {
        return Err(Error::EmptyInput("beam search over zero frames".into()));
    }
    let enc = model.encode(features)?;
    let use_elm = config.fusion_mode.uses_elm();
    let use_ilm = config.fusion_mode.uses_ilm();
    let mut elm_cache = elm.filter(|_| use_elm).map(StepCache::new);
    let mut ilm_cache = ilm.filter(|_| use_ilm).map(|i| StepCache::new(i as &dyn SequenceScorer));
    let v = model.vocab().len();

    let mut beam = vec![Hypothesis {
        labels: Vec::new(),
        transducer: 0.0,
        elm: 0.0,
        ilm: 0.0,
        state: model.start_state(),
        combined: 0.0,
    }];
    for t in 0..enc.rows() {
        let h = enc.row(t);
        let mut next: BTreeMap<LabelSequence, Hypothesis> = BTreeMap::new();
        for hyp in &beam {
            let mut lp = model.step_log_posterior(h, hyp.state.context())?;
            if config.blank_reduction != BlankReduction::Off {
                let probs: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
                lp = reduce_blank(&probs, config.blank_reduction)?.iter().map(|p| p.ln()).collect();
            }
            let tr = hyp.transducer + lp[BLANK];
            if !merge(&mut next, &hyp.labels, tr, config) {
                let combined = combine(tr, hyp.elm, hyp.ilm, config);
                next.insert(hyp.labels.clone(), Hypothesis { transducer: tr, combined, ..hyp.clone() });
            }
            let elm_step = elm_cache.as_mut().map(|c| c.get(&hyp.labels).labels.clone());
            let ilm_step = ilm_cache.as_mut().map(|c| c.get(&hyp.labels).labels.clone());
            for k in 0..v {
                let label = Label::new(k as u32);
                let tr = hyp.transducer + lp[label.output_index()];
                let mut labels = hyp.labels.clone();
                labels.push(label);
                if merge(&mut next, &labels, tr, config) {
                    continue;
                }
                let e = elm_step.as_ref().map_or(hyp.elm, |s| hyp.elm + s[k]);
                let i = ilm_step.as_ref().map_or(hyp.ilm, |s| hyp.ilm + s[k]);
                let state = model.advance_state(&hyp.state, label);
                let combined = combine(tr, e, i, config);
                next.insert(labels.clone(), Hypothesis { labels, transducer: tr, elm: e, ilm: i, state, combined });
            }
        }
        let mut merged: Vec<Hypothesis> = next.into_values().collect();
        merged.sort_by(|a, b| rank(a, b, scale));
        merged.truncate(config.beam_size);
        beam = merged;
    }
    if let Some(cache) = elm_cache.as_mut() {
        for hyp in &mut beam {
            if let Some(eos) = cache.get(&hyp.labels).eos {
                hyp.elm += eos;
                hyp.combined = combine(hyp.transducer, hyp.elm, hyp.ilm, config);
            }
        }
    }
    beam.sort_by(|a, b| rank(a, b, scale));
    beam.truncate(config.n_best_out);
    Ok(beam)
}

/// Search output as an N-best list with exact transducer and LM scores.
pub fn to_nbest_list(
    id: &str,
    model: &TransducerParams,
    features: &Matrix,
    lm: &dyn SequenceScorer,
    hypotheses: &[Hypothesis],
) -> Result<NBestList> {
    let entries = hypotheses
        .iter()
        .map(|h| {
            Ok(NBestEntry {
                labels: h.labels.clone(),
                transducer: seq_log_prob(model, features, &h.labels)?.value(),
                lm: lm.score(&h.labels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    NBestList::new(id, entries)
}

/// `UTT <id>\t<edits> <reference length>\t<labels>`.
pub fn format_decode_line(id: &str, vocab: &Vocabulary, reference: &[Label], hypothesis: &[Label]) -> Result<String> {
    Ok(format!(
        "UTT {id}\t{} {}\t{}",
        edit_distance(reference, hypothesis),
        reference.len(),
        vocab.format_sequence(hypothesis)?
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ilm::zero_encoder_ilm;
    use crate::lm::train_ngram;
    use crate::model::{ModelConfig, PredictorKind};
    use proptest::prelude::*;

    fn model(seed: u64) -> TransducerParams {
        let mut c = ModelConfig::new(Vocabulary::with_size(3).unwrap(), 2);
        c.predictor = PredictorKind::Lstm;
        c.encoder_hidden = 4;
        c.encoder_dim = 3;
        c.predictor_dim = 3;
        c.joint_hidden = 4;
        TransducerParams::new(c, seed, 0.9).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn ranking_is_invariant_to_a_common_positive_scale(seed in 0u64..1000, scale in 0.05f64..20.0, beam in 1usize..5) {
            let m = model(seed);
            let x = Matrix::from_vec(5, 2, (0..10).map(|i| ((i + 1) as f64 * (seed as f64 + 0.3)).cos()).collect()).unwrap();
            let l = |i: u32| Label::new(i);
            let elm = train_ngram(&[vec![l(0), l(2)], vec![l(1)], vec![l(2), l(2), l(0)]], 3, 2, 0.5).unwrap();
            let ilm = zero_encoder_ilm(&m, true);
            let config = BeamConfig {
                beam_size: beam,
                fusion_mode: FusionMode::SfIlm,
                lambda1: 0.6,
                lambda2: 0.3,
                blank_reduction: BlankReduction::Off,
                n_best_out: 6,
            };
            let base = search(&m, &x, Some(&elm), Some(&ilm), &config, 1.0).unwrap();
            let scaled = search(&m, &x, Some(&elm), Some(&ilm), &config, scale).unwrap();
            let labels = |h: &[Hypothesis]| h.iter().map(|h| h.labels.clone()).collect::<Vec<_>>();
            prop_assert_eq!(labels(&base), labels(&scaled));
        }
    }
}
