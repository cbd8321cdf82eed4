//! Max aggregation, classification head, training loops and evaluation.

mod aggregate;
mod eval;
mod model;
mod slice;
mod train;
mod variants;

pub use aggregate::{active_point_count, aggregate_max, GlobalFeature};
pub use eval::{evaluate, report_from_predictions, ClassReport, EvalReport};
pub use model::{Embedding, Model, Predictor};
pub use slice::{dump_slice, SliceGrid};
pub use train::{softmax_cross_entropy, EpochRecord, TrainConfig, TrainOutcome};
pub use variants::{train, variant, variants, Approx, Direct, LatticeE2e, MlpBaseline, Variant, VariantFactory};
