use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveLoss {
    pub loss: f64,
    /// `∂loss/∂scores`, same shape as the score matrix.
    pub grad: Matrix,
}

/// In-batch-negative contrastive loss over a square score matrix whose
/// diagonal holds the positives:
///
/// `loss = −(1/B) Σ_i log softmax_j(s_ij / τ)[i]`
///
/// with gradient `(softmax − onehot) / (B·τ)` per row.
pub fn contrastive_loss(scores: &Matrix, tau: f64) -> Result<ContrastiveLoss> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::param(format!("temperature must be positive, got {tau}")));
    }
    let b = scores.rows();
    if b == 0 || scores.cols() != b {
        return Err(Error::shape(format!("score matrix must be square and nonempty, got {:?}", scores.shape())));
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(b, b);
    let inv = 1.0 / (b as f64 * tau);
    for i in 0..b {
        let row = scores.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s / tau));
        // −log p_i = log(1 + Σ_{j≠i} e^{z_j − z_i}) keeps precision as p_i → 1.
        let z_i = row[i] / tau;
        let others: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &s)| (s / tau - z_i).exp())
            .sum();
        loss += others.ln_1p();
        let denom: f64 = row.iter().map(|&s| (s / tau - max).exp()).sum();
        let g = grad.row_mut(i);
        for (j, &s) in row.iter().enumerate() {
            let p = (s / tau - max).exp() / denom;
            g[j] = (p - if i == j { 1.0 } else { 0.0 }) * inv;
        }
    }
    Ok(ContrastiveLoss { loss: loss / b as f64, grad })
}
