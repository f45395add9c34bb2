use serde::{Deserialize, Serialize};

use super::{
    attentive_pool, attentive_pool_backward, project_global, project_global_backward, GlobalProjection,
    PoolingGrads, PoolingParams, PooledVisual,
};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Which tokens make up the query representation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// `[E_g; E_m]`; text tokens steer attention but are not scored.
    #[default]
    Alignment,
    /// `[E_g; E_m; E_t]`.
    Inference,
}

/// Frozen encoder outputs for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalQueryInput {
    pub id: String,
    /// `l_t × d_t` text tokens.
    pub e_t: Matrix,
    /// Global visual vector of length `d_v`.
    pub v_g: Option<Vec<f64>>,
    /// `l_v × d_v` patch embeddings.
    pub v_m: Option<Matrix>,
}

impl MultimodalQueryInput {
    pub fn new(id: impl Into<String>, e_t: Matrix, v_g: Vec<f64>, v_m: Matrix) -> Self {
        Self { id: id.into(), e_t, v_g: Some(v_g), v_m: Some(v_m) }
    }

    pub fn text_only(id: impl Into<String>, e_t: Matrix) -> Self {
        Self { id: id.into(), e_t, v_g: None, v_m: None }
    }

    pub fn has_visual(&self) -> bool {
        self.v_g.is_some() && self.v_m.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssembledQuery {
    pub id: String,
    pub stage: Stage,
    pub global: GlobalProjection,
    pub pooled: PooledVisual,
    /// Copy of the input text tokens.
    pub e_t: Matrix,
}

impl AssembledQuery {
    pub fn e_g(&self) -> &Matrix {
        &self.global.e_g
    }

    pub fn e_m(&self) -> &Matrix {
        &self.pooled.e_m
    }

    /// `E_Q` for the assembled stage.
    pub fn tokens(&self) -> Matrix {
        let mut parts = vec![&self.global.e_g, &self.pooled.e_m];
        if self.stage == Stage::Inference {
            parts.push(&self.e_t);
        }
        Matrix::vstack(&parts).expect("assembled parts share d_t")
    }

    pub fn num_tokens(&self) -> usize {
        let n = self.global.e_g.rows() + self.pooled.e_m.rows();
        match self.stage {
            Stage::Alignment => n,
            Stage::Inference => n + self.e_t.rows(),
        }
    }

    /// Routes `∂L/∂E_Q` into the pooling parameters. Gradient rows for the
    /// frozen text tokens, if present, are ignored.
    pub fn backward(
        &self,
        params: &PoolingParams,
        input: &MultimodalQueryInput,
        grad_tokens: &Matrix,
        grads: &mut PoolingGrads,
    ) -> Result<()> {
        if grad_tokens.rows() != self.num_tokens() || grad_tokens.cols() != self.global.e_g.cols() {
            return Err(Error::shape("gradient does not match E_Q"));
        }
        let (l_g, h) = (self.global.e_g.rows(), self.pooled.e_m.rows());
        let v_m = input
            .v_m
            .as_ref()
            .ok_or_else(|| Error::Assembly(format!("query {} has no patch embeddings", input.id)))?;
        project_global_backward(params, &self.global, &grad_tokens.row_block(0, l_g), grads)?;
        attentive_pool_backward(params, &input.e_t, v_m, &self.pooled, &grad_tokens.row_block(l_g, h), grads)?;
        Ok(())
    }
}

/// Builds the query representation from frozen encoder outputs.
pub fn assemble_query(
    input: &MultimodalQueryInput,
    params: &PoolingParams,
    stage: Stage,
) -> Result<AssembledQuery> {
    let (v_g, v_m) = match (&input.v_g, &input.v_m) {
        (Some(g), Some(m)) => (g, m),
        _ => {
            return Err(Error::Assembly(format!(
                "query {} lacks visual inputs required for the {stage:?} stage",
                input.id
            )))
        }
    };
    let global = project_global(v_g, params)?;
    let pooled = attentive_pool(&input.e_t, v_m, params)?;
    Ok(AssembledQuery {
        id: input.id.clone(),
        stage,
        global,
        pooled,
        e_t: input.e_t.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_gradients, Rng};
    use crate::qap::{Activation, PoolingDims};

    fn random_matrix(r: usize, c: usize, rng: &mut Rng) -> Matrix {
        Matrix::new(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    fn input(l_t: usize, dims: PoolingDims, rng: &mut Rng) -> MultimodalQueryInput {
        MultimodalQueryInput::new(
            "q",
            random_matrix(l_t, dims.d_t, rng),
            (0..dims.d_v).map(|_| rng.normal()).collect(),
            random_matrix(9, dims.d_v, rng),
        )
    }

    #[test]
    fn default_token_counts() {
        let dims = PoolingDims::new(16);
        let p = PoolingParams::init(dims, Activation::Silu, 0).unwrap();
        let mut rng = Rng::new(0);
        let x = input(5, dims, &mut rng);
        let a = assemble_query(&x, &p, Stage::Alignment).unwrap();
        assert_eq!(a.tokens().shape(), (28, 128));
        let i = assemble_query(&x, &p, Stage::Inference).unwrap();
        assert_eq!(i.tokens().shape(), (33, 128));
        assert_eq!(i.num_tokens(), 33);
    }

    #[test]
    fn text_passes_through_unchanged() {
        let dims = PoolingDims::new(8).with_text_dim(16);
        let p = PoolingParams::init(dims, Activation::Silu, 1).unwrap();
        let mut rng = Rng::new(1);
        let x = input(5, dims, &mut rng);
        let q = assemble_query(&x, &p, Stage::Inference).unwrap();
        let tokens = q.tokens();
        let tail = tokens.row_block(28, 5);
        let same = tail.data().iter().zip(x.e_t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }

    #[test]
    fn missing_visual_inputs() {
        let dims = PoolingDims::new(8).with_text_dim(16);
        let p = PoolingParams::init(dims, Activation::Silu, 1).unwrap();
        let x = MultimodalQueryInput::text_only("q", Matrix::zeros(3, 16));
        for stage in [Stage::Alignment, Stage::Inference] {
            assert!(matches!(assemble_query(&x, &p, stage), Err(Error::Assembly(_))));
        }
    }

    #[test]
    fn assembled_gradient_matches_finite_differences() {
        let dims = PoolingDims { d_v: 5, d_t: 4, l_g: 2, heads: 3, hidden: 4 };
        let mut rng = Rng::new(7);
        let mut p = PoolingParams::init(dims, Activation::Silu, 7).unwrap();
        for (_, l) in p.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = 0.1 * rng.normal());
        }
        let x = input(3, dims, &mut rng);
        for stage in [Stage::Alignment, Stage::Inference] {
            let q = assemble_query(&x, &p, stage).unwrap();
            // Rows against the frozen text tokens only add a constant to the
            // loss, and with it roundoff, so they are left at zero.
            let mut c = Matrix::zeros(q.num_tokens(), 4);
            for r in 0..5 {
                c.row_mut(r).iter_mut().for_each(|v| *v = rng.normal());
            }
            let mut grads = p.zero_grads();
            q.backward(&p, &x, &c, &mut grads).unwrap();
            let mut scratch = p.clone();
            let report = check_gradients(
                |flat| {
                    scratch.load_flat(flat).unwrap();
                    let t = assemble_query(&x, &scratch, stage).unwrap().tokens();
                    t.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
                },
                &p.flatten(),
                &grads.flatten(),
                1e-5,
            )
            .unwrap();
            assert!(report.max_relative_error < 1e-4, "{stage:?}: {report:?}");
        }
    }
}
