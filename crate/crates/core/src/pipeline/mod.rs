//! Chronological splitting and site-local preprocessing: outlier clipping,
//! median imputation, min-max scaling (optionally with a federation-wide
//! scaler) and category indexing.

mod matrix;
mod preprocess;
mod split;

pub use matrix::FeatureMatrix;
pub use preprocess::{
    fit_preprocessor, merge_scaler_stats, percentile, CategoryMap, ContinuousStats, FitOptions, Preprocessor,
    ScalerStats, AGE_FEATURE, PROCEDURE_FEATURE,
};
pub use split::{chronological_split, Split, SplitSpec};

#[cfg(test)]
mod tests;
