//! Distances, similarities, losses and triplet mining.

mod distance;
mod loss;
mod mining;

pub(crate) use distance::snr_distance_grad;
pub use distance::{
    cosine_similarity, euclidean, normalize_distance, pairwise_distances, population_variance, snr_distance,
    DistanceMatrix, MetricKind, EPS,
};
pub use loss::{
    ntxent_loss, sem_guided_loss, snr_contrastive_from_distances, snr_contrastive_loss, triplet_margin_loss, LossKind,
    LossOutput, MarginMode, MetricLoss, NtXentLoss, SnrContrastiveLoss, TripletMarginLoss,
};
pub use mining::{mine_triplets, MinerKind, Triplet};
