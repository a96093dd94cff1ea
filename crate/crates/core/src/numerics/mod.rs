//! Dense matrices and the two-stage trunk + embedder MLP.

mod matrix;
mod mlp;

pub use matrix::{DenseMatrix, Real};
pub use mlp::{
    average_params, embed_batch, mlp_backward, mlp_forward, sgd_step, sgd_step_model, Activation, Architecture,
    EmbedderModel, ForwardCache, Layer, LayerGrad, MlpGrads, MlpParams, ModelGrads,
};
