use crate::data::SegmentSample;
use crate::error::{HemlError, Result};
use crate::metric::snr_distance_grad;
use crate::numerics::{mlp_backward, mlp_forward, DenseMatrix, EmbedderModel};

use super::InferenceModel;

/// A scalar decision with an exact input gradient.
pub trait Decision {
    fn input_dim(&self) -> usize;
    /// Value and gradient with respect to every input feature.
    fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Per-feature importance: the gradient of the decision at `x`.
pub fn gradient_importance<D: Decision + ?Sized>(decision: &D, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != decision.input_dim() {
        return Err(HemlError::Shape(format!(
            "decision expects {} features, got {}",
            decision.input_dim(),
            x.len()
        )));
    }
    let (_, grad) = decision.evaluate(x)?;
    Ok(grad)
}

/// Sum of per-feature importance over a segment's mask.
pub fn segment_importance(importance: &[f64], mask: &[bool]) -> f64 {
    importance.iter().zip(mask).filter(|(_, &m)| m).map(|(g, _)| g).sum()
}

/// Local decision of a node as a function of one query's features, the
/// other query's embedding held fixed:
/// `1 - D / (1 + D)` with `D` the symmetrized SNR distance.
pub struct PairDecision<'a> {
    pub model: &'a EmbedderModel,
    pub reference: Vec<f64>,
}

impl Decision for PairDecision<'_> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let batch = DenseMatrix::new(1, x.len(), x.to_vec())?;
        let (emb, cache) = mlp_forward(self.model, &batch)?;
        let e = emb.row(0);
        let (d_er, g_e_as_anchor, _) = snr_distance_grad(e, &self.reference)?;
        let (d_re, _, g_e_as_target) = snr_distance_grad(&self.reference, e)?;
        let d = 0.5 * (d_er + d_re);
        let value = 1.0 / (1.0 + d);
        let slope = -1.0 / ((1.0 + d) * (1.0 + d));
        let upstream: Vec<f64> = g_e_as_anchor
            .iter()
            .zip(&g_e_as_target)
            .map(|(a, b)| slope * 0.5 * (a + b))
            .collect();
        let upstream = DenseMatrix::new(1, upstream.len(), upstream)?;
        let (_, dx) = mlp_backward(self.model, &cache, &upstream)?;
        Ok((value, dx.into_values()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuerySide {
    #[default]
    A,
    B,
}

/// Gradient of the node's local decision with respect to one query's
/// features (query `a` unless `side` says otherwise).
pub fn feature_importance(
    inference: &InferenceModel,
    a: &SegmentSample,
    b: &SegmentSample,
    side: QuerySide,
) -> Result<Vec<f64>> {
    let (target, other) = match side {
        QuerySide::A => (a, b),
        QuerySide::B => (b, a),
    };
    inference.check_sample(target)?;
    let reference = inference.embed(other)?;
    let decision = PairDecision {
        model: &inference.model,
        reference,
    };
    let x: Vec<f64> = target.features.iter().map(|&v| v as f64).collect();
    gradient_importance(&decision, &x)
}
