use super::{PoolingGrads, PoolingParams};
use crate::error::{Error, Result};
use crate::numerics::{l2_normalize_rows, l2_normalize_rows_backward, Matrix};

/// Output of [`project_global`] together with what its backward pass needs.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalProjection {
    /// `l_g × d_t`, unit rows.
    pub e_g: Matrix,
    /// Rows that were zero before normalisation.
    pub degenerate: usize,
    input: Matrix,
    hidden_pre: Matrix,
    hidden: Matrix,
    norms: Vec<f64>,
}

impl GlobalProjection {
    /// The projection before per-token normalisation.
    pub fn raw(&self) -> Matrix {
        let mut raw = self.e_g.clone();
        for (r, &n) in self.norms.iter().enumerate() {
            raw.row_mut(r).iter_mut().for_each(|v| *v *= n);
        }
        raw
    }
}

/// Two-layer MLP from the global visual vector to `l_g` text-space tokens.
pub fn project_global(v_g: &[f64], params: &PoolingParams) -> Result<GlobalProjection> {
    let dims = params.dims;
    if v_g.len() != dims.d_v {
        return Err(Error::shape(format!(
            "global visual vector has {} values, expected {}",
            v_g.len(),
            dims.d_v
        )));
    }
    let input = Matrix::new(1, dims.d_v, v_g.to_vec())?;
    let hidden_pre = params.global_in.forward(&input)?;
    let hidden = Matrix::new(
        1,
        dims.hidden,
        hidden_pre.data().iter().map(|&x| params.activation.apply(x)).collect(),
    )?;
    let flat = params.global_out.forward(&hidden)?;
    let mut e_g = Matrix::new(dims.l_g, dims.d_t, flat.into_data())?;
    let (norms, degenerate) = l2_normalize_rows(&mut e_g);
    Ok(GlobalProjection {
        e_g,
        degenerate,
        input,
        hidden_pre,
        hidden,
        norms,
    })
}

/// Accumulates MLP gradients given `∂L/∂E_g`.
pub fn project_global_backward(
    params: &PoolingParams,
    proj: &GlobalProjection,
    grad_e_g: &Matrix,
    grads: &mut PoolingGrads,
) -> Result<()> {
    if grad_e_g.shape() != proj.e_g.shape() {
        return Err(Error::shape("gradient does not match E_g"));
    }
    let d_raw = l2_normalize_rows_backward(&proj.e_g, &proj.norms, grad_e_g);
    backward_from_raw(params, proj, &d_raw, grads)
}

/// Backward pass starting from `∂L/∂raw`, the pre-normalisation projection.
fn backward_from_raw(
    params: &PoolingParams,
    proj: &GlobalProjection,
    d_raw: &Matrix,
    grads: &mut PoolingGrads,
) -> Result<()> {
    let d_flat = Matrix::new(1, d_raw.data().len(), d_raw.data().to_vec())?;
    let d_hidden = params
        .global_out
        .backward_into(&proj.hidden, &d_flat, &mut grads.global_out)?;
    let d_pre = Matrix::new(
        1,
        d_hidden.cols(),
        d_hidden
            .data()
            .iter()
            .zip(proj.hidden_pre.data())
            .map(|(g, &x)| g * params.activation.derivative(x))
            .collect(),
    )?;
    params
        .global_in
        .backward_into(&proj.input, &d_pre, &mut grads.global_in)?;
    Ok(())
}
