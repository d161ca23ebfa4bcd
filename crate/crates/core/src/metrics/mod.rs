//! Dice, boundary distances and evaluation reports.

pub mod distance;
pub mod overlap;
pub mod report;

pub use distance::{boundary_pixels, class_boundary, hd95, hd95_brute_force, hd95_with_spacing, percentile95};
pub use overlap::{confusion_counts, dice_from_counts, dice_score, Confusion};
pub use report::{evaluate, predict_masks, slice_metrics, MetricsReport, SliceMetrics, ZoneMetrics, PZ, TZ};
