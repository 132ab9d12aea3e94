//! Descriptor-consuming pipelines: image morphing, part segmentation, and
//! sketch-to-model retrieval with view estimation.

mod morph;
mod retrieval;
mod segment;

pub use morph::{
    alpha_blend_weight, morph, morph_traced, morph_with_correspondences, Correspondence,
    MorphConfig,
};
pub use retrieval::{
    build_retrieval_index, retrieve, ModelScore, RetrievalIndex, RetrievalResult,
};
pub use segment::{segment, train_segmenter, KernelKind, SegmenterModel};
