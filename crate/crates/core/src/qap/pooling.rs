use super::{PoolingGrads, PoolingParams};
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize_rows, l2_normalize_rows_backward, softmax_rows, Matrix};

/// Attention weights and intermediates of one pooling forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    /// One `l_t × l_v` row-stochastic matrix per head.
    pub attention: Vec<Matrix>,
    /// `h × d_v`, attention-weighted patch mean per head. Values are affine
    /// in the patches, so projecting this mean equals pooling projected
    /// patches.
    mixed: Matrix,
    /// `h × d_t`, sequence-mean of the attended values per head.
    pooled: Matrix,
    norms: Vec<f64>,
    clamped: bool,
}

impl AttentionTrace {
    /// Head-pooled outputs before the output projection.
    pub fn pooled(&self) -> &Matrix {
        &self.pooled
    }

    /// True when the attention was supplied by the caller rather than
    /// computed from the text tokens.
    pub fn is_clamped(&self) -> bool {
        self.clamped
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PooledVisual {
    /// `h × d_t`, unit rows.
    pub e_m: Matrix,
    pub degenerate: usize,
    pub trace: AttentionTrace,
}

impl PooledVisual {
    /// `out_proj(pooled)` before per-token normalisation.
    pub fn pre_norm(&self) -> Matrix {
        let mut raw = self.e_m.clone();
        for (r, &n) in self.trace.norms.iter().enumerate() {
            raw.row_mut(r).iter_mut().for_each(|v| *v *= n);
        }
        raw
    }
}

fn check_inputs(e_t: &Matrix, v_m: &Matrix, params: &PoolingParams) -> Result<()> {
    let d = params.dims;
    if e_t.rows() == 0 {
        return Err(Error::EmptyInput("no text tokens".into()));
    }
    if v_m.rows() == 0 {
        return Err(Error::EmptyInput("no visual patches".into()));
    }
    if e_t.cols() != d.d_t {
        return Err(Error::shape(format!("text tokens have dim {}, expected {}", e_t.cols(), d.d_t)));
    }
    if v_m.cols() != d.d_v {
        return Err(Error::shape(format!("patches have dim {}, expected {}", v_m.cols(), d.d_v)));
    }
    Ok(())
}

/// Query-guided attentive pooling.
///
/// Text tokens act only as attention queries over the projected patches;
/// the pooled output carries values computed from patches alone, averaged
/// over the text sequence and passed through a shared linear layer, with no
/// residual path from the text.
pub fn attentive_pool(e_t: &Matrix, v_m: &Matrix, params: &PoolingParams) -> Result<PooledVisual> {
    check_inputs(e_t, v_m, params)?;
    let d = params.dims;
    let scale = 1.0 / (d.d_t as f64).sqrt();
    let mut attention = Vec::with_capacity(d.heads);
    for h in 0..d.heads {
        // E_t (V_m W_hᵀ + b_h)ᵀ computed as (E_t W_h) V_mᵀ, which is cheaper
        // when there are fewer text tokens than patches. The bias only adds
        // E_t b_h to every score in a row, which the softmax cancels.
        let scores = head_product(e_t, &params.key_proj.weight, h * d.d_t).matmul_transposed(v_m)?.scale(scale);
        attention.push(softmax_rows(&scores));
    }
    pool_from_attention(attention, v_m, params, false)
}

/// Pooling with caller-supplied attention weights. The text tokens are
/// validated but otherwise unused, which makes the absence of any other
/// text path directly testable.
pub fn attentive_pool_clamped(
    e_t: &Matrix,
    v_m: &Matrix,
    params: &PoolingParams,
    attention: &[Matrix],
) -> Result<PooledVisual> {
    check_inputs(e_t, v_m, params)?;
    let d = params.dims;
    if attention.len() != d.heads
        || attention.iter().any(|a| a.shape() != (e_t.rows(), v_m.rows()))
    {
        return Err(Error::shape(format!(
            "clamped attention must be {} matrices of {}x{}",
            d.heads,
            e_t.rows(),
            v_m.rows()
        )));
    }
    pool_from_attention(attention.to_vec(), v_m, params, true)
}

fn pool_from_attention(
    attention: Vec<Matrix>,
    v_m: &Matrix,
    params: &PoolingParams,
    clamped: bool,
) -> Result<PooledVisual> {
    let d = params.dims;
    let mut mixed = Matrix::zeros(d.heads, d.d_v);
    let mut pooled = Matrix::zeros(d.heads, d.d_t);
    for (h, a) in attention.iter().enumerate() {
        let weights = row_mean(a);
        let m = mixed.row_mut(h);
        for (j, &w) in weights.iter().enumerate() {
            for (o, &x) in m.iter_mut().zip(v_m.row(j)) {
                *o += w * x;
            }
        }
        // Attention rows sum to one, so the value bias passes through whole.
        let b_h = &params.value_proj.bias[h * d.d_t..(h + 1) * d.d_t];
        let m = mixed.row(h);
        for (c, o) in pooled.row_mut(h).iter_mut().enumerate() {
            *o = dot(params.value_proj.weight.row(h * d.d_t + c), m) + b_h[c];
        }
    }
    let mut e_m = params.out_proj.forward(&pooled)?;
    let (norms, degenerate) = l2_normalize_rows(&mut e_m);
    Ok(PooledVisual {
        e_m,
        degenerate,
        trace: AttentionTrace {
            attention,
            mixed,
            pooled,
            norms,
            clamped,
        },
    })
}

/// `x · W[offset..offset + x.cols(), ·]`, one head's block of a projection
/// weight applied from the output side.
fn head_product(x: &Matrix, weight: &Matrix, offset: usize) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), weight.cols());
    for i in 0..x.rows() {
        let o = out.row_mut(i);
        for (c, &a) in x.row(i).iter().enumerate() {
            for (o, &w) in o.iter_mut().zip(weight.row(offset + c)) {
                *o += a * w;
            }
        }
    }
    out
}

/// Mean over rows: `(1/l_t) Σ_i A[i, ·]`.
fn row_mean(a: &Matrix) -> Vec<f64> {
    let mut m = vec![0.0; a.cols()];
    for r in a.row_iter() {
        for (o, &x) in m.iter_mut().zip(r) {
            *o += x;
        }
    }
    let n = a.rows() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Backward pass of [`attentive_pool`]. Accumulates key, value and output
/// projection gradients and returns `∂L/∂E_t`.
pub fn attentive_pool_backward(
    params: &PoolingParams,
    e_t: &Matrix,
    v_m: &Matrix,
    out: &PooledVisual,
    grad_e_m: &Matrix,
    grads: &mut PoolingGrads,
) -> Result<Matrix> {
    let tr = &out.trace;
    if tr.clamped {
        return Err(Error::Assembly("cannot differentiate through clamped attention".into()));
    }
    if grad_e_m.shape() != out.e_m.shape() {
        return Err(Error::shape("gradient does not match E_m"));
    }
    let d = params.dims;
    let (l_t, l_v) = (e_t.rows(), v_m.rows());
    let scale = 1.0 / (d.d_t as f64).sqrt();

    let d_z = l2_normalize_rows_backward(&out.e_m, &tr.norms, grad_e_m);
    let d_pooled = params.out_proj.backward_into(&tr.pooled, &d_z, &mut grads.out_proj)?;

    let mut d_e_t = Matrix::zeros(l_t, d.d_t);
    let (gk, gv) = (&mut grads.key_proj, &mut grads.value_proj);
    for (h, a) in tr.attention.iter().enumerate() {
        let cols = h * d.d_t..(h + 1) * d.d_t;
        let g_out = d_pooled.row(h);
        let mixed = tr.mixed.row(h);

        // pooled_h = W_h mixed_h + b_h, mixed_h = Σ_j w_j V_m[j]
        let mut d_mixed = vec![0.0; d.d_v];
        for (c, &g) in g_out.iter().enumerate() {
            let r = h * d.d_t + c;
            for (o, &x) in gv.weight.row_mut(r).iter_mut().zip(mixed) {
                *o += g * x;
            }
            gv.bias[r] += g;
            for (o, &w) in d_mixed.iter_mut().zip(params.value_proj.weight.row(r)) {
                *o += g * w;
            }
        }
        let bias_term = dot(&params.value_proj.bias[cols.clone()], g_out);
        let d_w: Vec<f64> = (0..l_v).map(|j| dot(v_m.row(j), &d_mixed) + bias_term).collect();

        // w = mean_i A[i]; every row of ∂L/∂A equals d_w / l_t. Softmax
        // backward per row gives the score gradient, already scaled.
        let mut d_s = Matrix::zeros(l_t, l_v);
        for i in 0..l_t {
            let ar = a.row(i);
            let mean_g: f64 = ar.iter().zip(&d_w).map(|(p, g)| p * g).sum::<f64>() / l_t as f64;
            for (j, o) in d_s.row_mut(i).iter_mut().enumerate() {
                *o = ar[j] * (d_w[j] / l_t as f64 - mean_g) * scale;
            }
        }
        // scores = (E_t W_h) V_mᵀ; the key bias gets no gradient.
        let d_q = d_s.matmul(v_m)?;
        let d_wk = e_t.transposed_matmul(&d_q)?;
        for c in 0..d.d_t {
            let r = h * d.d_t + c;
            for (o, &x) in gk.weight.row_mut(r).iter_mut().zip(d_wk.row(c)) {
                *o += x;
            }
        }
        for i in 0..l_t {
            for (c, o) in d_e_t.row_mut(i).iter_mut().enumerate() {
                *o += dot(d_q.row(i), params.key_proj.weight.row(h * d.d_t + c));
            }
        }
    }
    Ok(d_e_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_gradients, LinearLayer, Rng};
    use crate::qap::{Activation, PoolingDims};

    fn dims() -> PoolingDims {
        PoolingDims { d_v: 5, d_t: 4, l_g: 2, heads: 3, hidden: 4 }
    }

    fn random_matrix(r: usize, c: usize, rng: &mut Rng) -> Matrix {
        Matrix::new(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    fn randomized_params(seed: u64) -> PoolingParams {
        let mut rng = Rng::new(seed ^ 0xabc);
        let mut p = PoolingParams::init(dims(), Activation::Silu, seed).unwrap();
        for (_, l) in p.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = 0.2 * rng.normal());
        }
        p
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = Rng::new(1);
        let p = randomized_params(1);
        let out = attentive_pool(&random_matrix(3, 4, &mut rng), &random_matrix(7, 5, &mut rng), &p).unwrap();
        assert_eq!(out.trace.attention.len(), 3);
        for a in &out.trace.attention {
            assert_eq!(a.shape(), (3, 7));
            for r in a.row_iter() {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn default_shape_single_text_token() {
        let mut rng = Rng::new(2);
        let p = PoolingParams::init(PoolingDims::new(16), Activation::Silu, 0).unwrap();
        let out = attentive_pool(&random_matrix(1, 128, &mut rng), &random_matrix(49, 16, &mut rng), &p).unwrap();
        assert_eq!(out.e_m.shape(), (12, 128));
        // With one text token the sequence mean is that token's context row.
        let a = &out.trace.attention[0];
        let values = p.value_proj.forward(&random_matrix(0, 16, &mut rng)).unwrap();
        assert_eq!(values.rows(), 0);
        assert_eq!(a.rows(), 1);
    }

    #[test]
    fn identical_keys_give_uniform_attention() {
        let mut rng = Rng::new(3);
        let mut p = randomized_params(3);
        // Zero key weights: every patch gets the same key (the bias).
        p.key_proj = LinearLayer::from_parts(Matrix::zeros(12, 5), p.key_proj.bias.clone()).unwrap();
        let e_t = random_matrix(2, 4, &mut rng);
        let v_m = random_matrix(6, 5, &mut rng);
        let out = attentive_pool(&e_t, &v_m, &p).unwrap();
        for a in &out.trace.attention {
            assert!(a.data().iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
        }
        let values = p.value_proj.forward(&v_m).unwrap();
        let mut mean = Matrix::zeros(3, 4);
        for h in 0..3 {
            for j in 0..6 {
                for c in 0..4 {
                    let v = mean.get(h, c) + values.get(j, h * 4 + c) / 6.0;
                    mean.set(h, c, v);
                }
            }
        }
        let want = p.out_proj.forward(&mean).unwrap();
        assert!(out.pre_norm().max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let p = randomized_params(0);
        let mut rng = Rng::new(0);
        assert!(attentive_pool(&random_matrix(2, 5, &mut rng), &random_matrix(3, 5, &mut rng), &p).is_err());
        assert!(attentive_pool(&random_matrix(2, 4, &mut rng), &random_matrix(3, 4, &mut rng), &p).is_err());
        assert!(attentive_pool(&Matrix::zeros(0, 4), &random_matrix(3, 5, &mut rng), &p).is_err());
    }

    #[test]
    fn patch_permutation_invariance() {
        let mut rng = Rng::new(4);
        let p = randomized_params(4);
        let e_t = random_matrix(3, 4, &mut rng);
        let v_m = random_matrix(8, 5, &mut rng);
        let mut order: Vec<usize> = (0..8).collect();
        rng.shuffle(&mut order);
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| v_m.row(i).to_vec()).collect();
        let permuted = Matrix::from_rows(&rows).unwrap();
        let a = attentive_pool(&e_t, &v_m, &p).unwrap();
        let b = attentive_pool(&e_t, &permuted, &p).unwrap();
        assert!(a.e_m.max_abs_diff(&b.e_m) < 1e-9);
    }

    #[test]
    fn clamped_attention_ignores_text() {
        let mut rng = Rng::new(5);
        let p = randomized_params(5);
        let e_t = random_matrix(3, 4, &mut rng);
        let v_m = random_matrix(6, 5, &mut rng);
        let base = attentive_pool(&e_t, &v_m, &p).unwrap();
        let other_text = random_matrix(3, 4, &mut rng);
        let clamped = attentive_pool_clamped(&other_text, &v_m, &p, &base.trace.attention).unwrap();
        assert!(base.e_m.max_abs_diff(&clamped.e_m) <= 1e-12);
        // Without clamping the change in text does move E_m.
        let free = attentive_pool(&other_text, &v_m, &p).unwrap();
        assert!(base.e_m.max_abs_diff(&free.e_m) > 1e-6);
    }

    #[test]
    fn value_scaling_is_homogeneous() {
        let mut rng = Rng::new(6);
        let mut p = randomized_params(6);
        p.out_proj.bias.iter_mut().for_each(|b| *b = 0.0);
        let e_t = random_matrix(2, 4, &mut rng);
        let v_m = random_matrix(5, 5, &mut rng);
        let base = attentive_pool(&e_t, &v_m, &p).unwrap().pre_norm();
        for c in [0.5, 2.0] {
            let mut q = p.clone();
            q.value_proj.weight = q.value_proj.weight.scale(c);
            q.value_proj.bias.iter_mut().for_each(|b| *b *= c);
            let scaled = attentive_pool(&e_t, &v_m, &q).unwrap().pre_norm();
            assert!(scaled.max_abs_diff(&base.scale(c)) <= 1e-12 * c);
        }
    }

    /// Loss `Σ C ⊙ E_m` checked against central differences over every
    /// parameter and every text-token entry.
    #[test]
    fn full_backward_matches_finite_differences() {
        for seed in 0..6 {
            let mut rng = Rng::new(50 + seed);
            let p = randomized_params(seed);
            let l_t = 1 + rng.below(4);
            let l_v = 1 + rng.below(6);
            let e_t = random_matrix(l_t, 4, &mut rng);
            let v_m = random_matrix(l_v, 5, &mut rng);
            let c = random_matrix(3, 4, &mut rng);

            let out = attentive_pool(&e_t, &v_m, &p).unwrap();
            let mut grads = p.zero_grads();
            let d_e_t = attentive_pool_backward(&p, &e_t, &v_m, &out, &c, &mut grads).unwrap();
            let mut analytic = grads.flatten();
            analytic.extend_from_slice(d_e_t.data());
            let mut point = p.flatten();
            point.extend_from_slice(e_t.data());
            let n_params = p.param_count();

            let mut scratch = p.clone();
            let report = check_gradients(
                |flat| {
                    scratch.load_flat(&flat[..n_params]).unwrap();
                    let et = Matrix::new(l_t, 4, flat[n_params..].to_vec()).unwrap();
                    let e = attentive_pool(&et, &v_m, &scratch).unwrap().e_m;
                    e.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
                },
                &point,
                &analytic,
                1e-5,
            )
            .unwrap();
            assert!(report.max_relative_error < 1e-4, "seed {seed}: {report:?}");
        }
    }
}
