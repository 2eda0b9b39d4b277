//! The patch-based quality network: farthest-point patch sampling,
//! hierarchical point-wise feature extraction with per-block max pooling,
//! and the weighted quality index over patches.

mod net;
mod patch;

pub use net::{
    aggregate, backward, ActivationPattern, extract_features, forward, patch_input, quality_index, Forward, NetOptions, PatchScore,
};
pub use patch::{
    default_radius, farthest_point_sample, farthest_point_sample_from, make_patches, paired_patches, sample_paired,
    sample_patches, IndexedCloud, Patch, PatchConfig, PatchSet,
};
