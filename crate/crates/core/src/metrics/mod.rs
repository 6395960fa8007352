//! Histograms, EMD, refinement losses and the CDD metric.

mod histogram;
mod losses;

pub use histogram::{
    cdd, cdd_aggregate, channel_emd, emd_1d, histogram, CddAggregate, ColorHistogram, DEFAULT_BINS,
    REPORT_SCALE,
};
pub use losses::{
    l_distance, l_distribution, l_nonshadow, l_texture, l_texture_with, l_total, patch_descriptor,
    ColorIndex, DescriptorDistance, LossComponents, LossReport, LossWeights, PatchDistance,
    PooledLosses, RegionLosses, DESCRIPTOR_LEN,
};
