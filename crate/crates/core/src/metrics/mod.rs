//! Set-overlap, positional, feature and masking analyses over attribution
//! records.
//!
//! Mass is `|score|` unless [`Mass::Signed`] is requested. Distances count
//! back from the most recent word, which sits at 0.

mod features;
mod masking;
mod report;
mod stats;
mod topset;

pub use features::{feature_share, FeatureShare};
pub use masking::{brain_masking, nwp_masking, MaskSelection, MaskedTr, MaskingResult};
pub use report::{
    analyze, AnalysisOptions, ComRow, FeatureRow, IouRow, MaskingRow, MetricsReport, PositionRow, SpreadRow, StatRow,
};
pub use stats::{benjamini_hochberg, paired_t_test, PairedTest};
pub use topset::{
    center_of_mass, iou, positional_histogram, random_baseline_iou, ranking, spread_auc, spread_counts, top_set,
    ComMode, Mass, TopSet, DEFAULT_THRESHOLDS,
};
