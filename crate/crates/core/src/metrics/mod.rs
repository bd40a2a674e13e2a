//! Benchmark metrics for multi-identity generation: optimal face matching,
//! identity similarity to ground truth and to references, copy-paste,
//! identity blending, CLIP scores and the evaluation report.

mod eval;
mod matching;
mod scores;

pub use eval::{
    evaluate, subset_label, Aggregate, EvalConfig, EvalInputs, EvalReport, SampleMetrics, SkippedSample,
    EVAL_SCHEMA_VERSION, METRICS,
};
pub use matching::{match_faces, match_similarity, MatchedFaces};
pub use scores::{blend, clip_scores, copy_paste, id_similarity, Channel, ClipScores, IdSimilarity, COPY_PASTE_SATURATION};
