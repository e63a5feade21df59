//! Sparse-representation classifiers built on one-shot basic thresholding:
//! linear and kernel variants, automatic parameter estimation, random
//! projection ensembles with rejection, and spatial-spectral smoothing of
//! image scenes.

pub mod btc;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod kbtc;
pub mod linalg;
pub mod spatial;
pub mod synth;

pub use btc::{
    btc_beta_average, btc_beta_profile, btc_beta_sample, btc_classify, btc_classify_batch,
    btc_estimate_threshold, btc_residuals_on_support, corr_classify, threshold_code, BtcParams,
    ResidualVector, SparseCode, ThresholdEstimate,
};
pub use data::{
    build_dictionary, load_dense_dataset, load_hsi_cube, mask_from_blocks, split_by_mask,
    ClassPartition, Dictionary, HsiCube, LabelMap, MaskSplit, NormMode, ScalingParams,
};
pub use ensemble::{
    default_tau_grid, ensemble_classify, fuse_residuals, make_sparse_projection, rejection_margin,
    roc_auc, roc_sweep, BtcEnsemble, EnsembleConfig, RejectionDecision, RocPoint, SeedSchedule,
    SparseProjection,
};
pub use error::{Error, ErrorKind, Result};
pub use eval::{evaluate, EvalReport};
pub use kbtc::{
    default_gamma_grid, kbtc_beta_sample, kbtc_classify, kbtc_classify_batch,
    kbtc_estimate_params, kbtc_gamma_profile, kbtc_residuals_on_support, kbtc_threshold_profile,
    kernel_cache, KbtcEstimate, KbtcParams, KernelCache, KernelSpec,
};
pub use linalg::{mutual_coherence, pca_first_component, top_m_select, IndexSet, SelectionMode};
pub use spatial::{
    box_smooth, build_residual_cube, classify_scene, decide_from_cube, mask_by_classmap,
    wls_smooth, CubeNormalization, PixelClassifier, Preconditioner, ResidualCube, SceneOptions,
    SceneResult, Smoothing, WlsParams,
};
