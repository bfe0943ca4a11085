//! Training-free compression of visual tokens for vision-language-action
//! backbones.
//!
//! Stage one runs before the backbone: each language token anchors its most
//! similar image patch ([`similarity`]), anchors grow into regions through a
//! density map ([`expand`]), and a strided context sample is added
//! ([`sampling`]). Stage two runs at a middle layer: the `m` patches most
//! relevant to guidance tokens become sources and the rest are merged into
//! them ([`merge`]). [`pipeline`] chains both, [`costmodel`] prices the
//! resulting token schedule.

pub mod bench;
pub mod cli;
pub mod costmodel;
pub mod error;
pub mod expand;
pub mod io;
pub mod merge;
pub mod pipeline;
pub mod registry;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod similarity;
pub mod types;
pub mod workload;

pub use error::{DecodeError, Error, Result};
pub use expand::{density_map, expand_mask, ExpandParams};
pub use merge::{rms_norm, soft_bipartite_merge, split_source_target, MergeParams, MergeReport};
pub use pipeline::{merge_stage, prune_stage, run_pipeline, CompressionConfig, PipelineReport, TokenSchedule};
pub use rng::RngState;
pub use sampling::{context_indices, keep_set};
pub use similarity::{anchor_mask, cosine_similarity_matrix, relevance_scores, top_m, AnchorScope, ScoreVector};
pub use types::{BinaryMask, DensityMap, IndexSet, PatchGrid, TokenMatrix};
