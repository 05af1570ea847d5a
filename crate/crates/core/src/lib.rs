//! Spatially varying blur synthesis and its physical companions.
//!
//! - [`kernels`]: motion, defocus and identity point spread functions.
//! - [`masks`]: label maps and soft partition-of-unity region weights.
//! - [`forward`]: the masked multi-kernel blur, its exact adjoint and noise.
//! - [`descriptor`]: PCA kernel embeddings, dense descriptor fields and the
//!   `3 + d` channel conditioning tensor.
//! - [`solver`]: conjugate-gradient Tikhonov deconvolution against the
//!   operator pair.
//! - [`metrics`]: PSNR and SSIM.
//! - [`pipeline`]: seed-deterministic dataset synthesis and validation.

pub mod boundary;
pub mod descriptor;
pub mod error;
pub mod forward;
pub mod image;
pub mod kernels;
pub mod masks;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod solver;

mod binio;


pub use crate::error::{Error, Result};
pub use crate::forward::{
    apply_adjoint, apply_forward, apply_forward_linear, sample_degradation_field,
    DegradationField, MaskSource,
};
pub use crate::image::ImageTensor;
pub use crate::kernels::{
    delta_kernel, gen_defocus_kernel, gen_motion_kernel, sample_kernel, DefocusParams, Kernel,
    KernelSamplingConfig, MotionParams,
};
pub use crate::masks::{soften, synth_segmentation, SegmentationMap, SoftMaskField};
pub use crate::seed::{derive_seed, rng_from_seed, SvRng};
pub use crate::descriptor::{
    assemble_conditioning, build_descriptor_field, fit_pca, perturb_kernels, ConditioningTensor,
    DescriptorField, PcaBasis,
};
pub use crate::metrics::{psnr, ssim, MetricReport};
pub use crate::solver::{cg_deconvolve, normal_residual, Regularizer, SolveReport, SolverConfig};
pub use crate::pipeline::{synth_dataset, synth_record, validate_manifest, DatasetRecord, SynthesisConfig};
