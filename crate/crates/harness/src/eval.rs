//! Decoding sweeps, ILM perplexities and blank statistics.

use tslab_core::decoder::{beam_search, wer, BeamConfig, BlankReduction, FusionMode};
use tslab_core::ilm::{zero_encoder_ilm, IlmEstimate};
use tslab_core::lattice::expected_blank_probability;
use tslab_core::lm::{perplexity, SequenceScorer};
use tslab_core::model::{LabelSequence, TransducerParams};

use crate::config::ExperimentConfig;
use crate::data::Utterance;
use crate::error::Result;

/// Top-1 hypotheses and WER of one decoding configuration.
pub fn decode_set(
    model: &TransducerParams,
    utts: &[Utterance],
    elm: Option<&dyn SequenceScorer>,
    ilm: Option<&IlmEstimate>,
    config: &BeamConfig,
) -> Result<(Vec<LabelSequence>, f64)> {
    let hyps = utts
        .iter()
        .map(|u| Ok(beam_search(model, &u.features, elm, ilm, config)?.swap_remove(0).labels))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<LabelSequence> = utts.iter().map(|u| u.labels.clone()).collect();
    let w = wer(&refs, &hyps)?;
    Ok((hyps, w))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub mode: FusionMode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho: Option<f64>,
    pub wer: f64,
}

/// Scorers a sweep may need. The zero-encoder ILM is always that of the decoded model
/// unless `ilm_override` is set.
pub struct SweepScorers<'a> {
    pub elm: &'a dyn SequenceScorer,
    pub density_ratio: &'a IlmEstimate,
    pub ilm_override: Option<&'a IlmEstimate>,
}

/// Every grid point of `mode`, in grid order.
pub fn sweep(
    model: &TransducerParams,
    utts: &[Utterance],
    mode: FusionMode,
    scorers: &SweepScorers<'_>,
    c: &ExperimentConfig,
) -> Result<Vec<SweepPoint>> {
    let base = BeamConfig { fusion_mode: mode, n_best_out: 1, ..BeamConfig::plain(c.beam_size) };
    let zero;
    let ilm: Option<&IlmEstimate> = match mode {
        FusionMode::SfIlm => match scorers.ilm_override {
            Some(i) => Some(i),
            None => {
                zero = zero_encoder_ilm(model, true);
                Some(&zero)
            }
        },
        FusionMode::SfDr => Some(scorers.density_ratio),
        _ => None,
    };
    let elm = mode.uses_elm().then_some(scorers.elm);
    let mut grid = Vec::new();
    match mode {
        FusionMode::None => grid.push((0.0, 0.0, None)),
        FusionMode::Sf => grid.extend(c.lambda1_grid.iter().map(|l| (*l, 0.0, None))),
        FusionMode::SfIlm | FusionMode::SfDr => {
            for l1 in &c.lambda1_grid {
                grid.extend(c.lambda2_grid.iter().map(|l2| (*l1, *l2, None)));
            }
        }
        FusionMode::SfReduceBlank => {
            for l1 in &c.lambda1_grid {
                grid.extend(c.rho_grid.iter().map(|r| (*l1, 0.0, Some(*r))));
            }
        }
    }
    grid.into_iter()
        .map(|(lambda1, lambda2, rho)| {
            let config = BeamConfig {
                lambda1,
                lambda2,
                blank_reduction: rho.map_or(BlankReduction::Off, BlankReduction::Linear),
                ..base
            };
            let (_, w) = decode_set(model, utts, elm, ilm, &config)?;
            Ok(SweepPoint { mode, lambda1, lambda2, rho, wer: w })
        })
        .collect()
}

/// Lowest WER; the earliest grid point wins ties.
pub fn best(points: &[SweepPoint]) -> &SweepPoint {
    points.iter().fold(&points[0], |b, p| if p.wer < b.wer { p } else { b })
}

/// Zero-encoder ILM perplexity with and without renorm-ε.
pub fn zero_ilm_perplexities(model: &TransducerParams, corpus: &[LabelSequence]) -> Result<(f64, f64)> {
    let renorm = perplexity(&zero_encoder_ilm(model, true), corpus)?.value();
    let raw = perplexity(&zero_encoder_ilm(model, false), corpus)?.value();
    Ok((renorm, raw))
}

/// Mean over utterances of the alignment-posterior-weighted per-frame blank probability.
pub fn mean_blank_probability(model: &TransducerParams, utts: &[Utterance]) -> Result<f64> {
    let mut total = 0.0;
    for u in utts {
        total += expected_blank_probability(model, &u.features, &u.labels)?;
    }
    Ok(total / utts.len().max(1) as f64)
}
