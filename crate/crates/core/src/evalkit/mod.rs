//! Dataset splitting, multi-view prediction aggregation, the accuracy
//! metrics and a nearest-centroid baseline classifier.

mod aggregate;
mod baseline;
mod metrics;
mod records;
mod split;

pub use aggregate::{aggregate_predictions, TreePrediction};
pub use baseline::{baseline_classify, image_features, CentroidAccumulator, NearestCentroid};
pub use metrics::{compute_metrics, ConfusionMatrix, EvalReport, SpeciesMetrics};
pub use records::{read_truth_csv, ProbabilityRecord, ProbabilityTable, TruthRecord};
pub use split::{grouped_split, SplitOutcome};
