//! Outcome classification, failure statistics and rule complexity.

mod classify;
mod complexity;
mod labels;
mod metrics;
mod variation;

pub use classify::{analyze_records, classify_outcome, spectrum, Spectrum, SpectrumBucket};
pub use complexity::{complexity_report, ComplexityReport, ComplexityRow};
pub use labels::{OutcomeCategory, OutcomeLabel, ReasoningStyle};
pub use metrics::{compression_ratio, edit_distance, failure_entropy, Compression, CompressionRatio};
pub use variation::{variation_stats, write_plot_data, PayloadScope, VariationOptions, VariationStats, UNPARSEABLE_SENTINEL};
