//! Time-synchronous beam search with shallow fusion, ILM subtraction and
//! blank reduction, plus WER scoring.

mod metrics;
mod search;

pub use metrics::{edit_distance, error_counts, wer};
pub use search::{
    beam_search, format_decode_line, reduce_blank, to_nbest_list, BeamConfig, BlankReduction, FusionMode, Hypothesis,
};
