//! Statistical point/patch distribution matching.
//!
//! The crate compares the internal statistics of two signals (point sets,
//! images, normal maps) by treating each as a bag of feature points and
//! measuring the divergence between the two empirical distributions. The
//! centerpiece is the contextual loss — a tractable softmax-affinity
//! approximation to the KL divergence between feature distributions — next
//! to the reference estimators it approximates (KDE-grid KL and χ², sliced
//! Wasserstein-1), the Chamfer-distance baseline, analytic gradients for
//! every differentiable loss, and a first-order optimizer that matches a
//! generated signal's patch statistics to a target's.
//!
//! All numeric code is generic over the scalar type via [`scalar::Real`];
//! `f32`/`f64` aliases for the main types live at the crate root.

pub mod affinity;
pub mod divergence;
pub mod error;
pub mod feature_set;
pub mod gradcheck;
pub mod gradients;
pub mod io;
pub mod optimize;
pub mod scalar;

pub use affinity::{
    affinities, best_matches, chamfer_distance, contextual_loss, delta_limit_coverage,
    distance_matrix, nearest_matches, normalize_distances, AffinityMatrix, DistanceKind,
    DistanceMatrix, MatchReport,
};
pub use divergence::{
    chi2_divergence, divergence_report, kde_fit, kde_fit_pair, kl_divergence, random_projection,
    sliced_emd, Density2D, DivergenceReport, Projection2D,
};
pub use error::{Error, Result};
pub use feature_set::{equalize, extract_patches, subsample, FeatureSet, ImageGrid, PatchSpec};
pub use gradcheck::{gradcheck, GradCheckInstance, GradCheckReport, LossId};
pub use gradients::{
    gaussian_blur, grad_chamfer, grad_contextual, grad_contextual_image, grad_l1, grad_lowfreq_l2,
    BlurKernel,
};
pub use optimize::{
    optimize_image, optimize_points, trace_correlations, Algorithm, ObjectiveConfig,
    OptimizerConfig, PointLoss, Trace, TraceRow,
};
pub use scalar::Real;

pub type FeatureSet32 = FeatureSet<f32>;
pub type FeatureSet64 = FeatureSet<f64>;
pub type ImageGrid32 = ImageGrid<f32>;
pub type ImageGrid64 = ImageGrid<f64>;
