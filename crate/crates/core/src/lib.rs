pub mod canonical;
pub mod task;
pub mod value;
pub mod golden;
pub mod runtime;
pub mod verification;
pub mod remap;
pub mod scalar;
pub mod llm;
pub mod pipeline;
pub mod offline;
pub mod evaluation;
pub mod analysis;

/// Exact rational used for accuracies and score gaps.
pub type Exact = num_rational::Ratio<i64>;
/// Exact dollar amounts.
pub type Money = num_rational::Ratio<i128>;
/// Floating-point measures (entropy, compression ratios, means of metrics).
pub type Real = f64;

pub use scalar::Scalar;
