// SPDX-License-Identifier: MIT OR Apache-2.0

//! Interpretation scores, alignment and divergence measures, and the
//! statistics used to aggregate them.

pub mod alignment;
pub mod divergence;
pub mod ranking;
pub mod scores;
pub mod stats;
pub mod sweep;

pub use alignment::{kernel_alignment, kernel_alignment_items, DEFAULT_K};
pub use divergence::{cosine, head_value_cosine, span_value_vector, QueryRow};
pub use ranking::{rank_heads, HeadEffect, HeadId, HeadSets, DEFAULT_HEAD_SET_SIZE};
pub use scores::{delta_i, interpretation_scores, InterpretationScore, ScoreDelta};
pub use stats::{bootstrap_ci, paired_t_test, ConfidenceInterval, TTest};
pub use sweep::{
    aggregate, derive_seed, AggregateOptions, CellSamples, MetricStat, SweepAxis, SweepCell, SweepResult, DELTA_F, DELTA_L,
};
