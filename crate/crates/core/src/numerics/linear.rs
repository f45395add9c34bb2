use super::{Matrix, Rng};
use crate::error::{Error, Result};

/// Gradient buffers shaped like a [`LinearLayer`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearGrads {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn add_assign(&mut self, other: &LinearGrads) {
        for (a, b) in self.weight.data_mut().iter_mut().zip(other.weight.data()) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weight.data().iter().all(|&v| v == 0.0) && self.bias.iter().all(|&v| v == 0.0)
    }
}

/// Affine layer `y = x Wᵀ + b` with gradient accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    /// `out_dim × in_dim`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub grad: LinearGrads,
}

impl LinearLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
            grad: LinearGrads::zeros(in_dim, out_dim),
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let mut layer = Self::zeros(in_dim, out_dim);
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        for w in layer.weight.data_mut() {
            *w = rng.uniform_range(-limit, limit);
        }
        layer
    }

    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(format!(
                "bias length {} for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        let grad = LinearGrads::zeros(weight.cols(), weight.rows());
        Ok(Self { weight, bias, grad })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn zero_grad(&mut self) {
        self.grad = LinearGrads::zeros(self.in_dim(), self.out_dim());
    }

    pub fn zero_grads_like(&self) -> LinearGrads {
        LinearGrads::zeros(self.in_dim(), self.out_dim())
    }

    /// `x` is `n × in_dim`; returns `n × out_dim`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "linear layer expects {} inputs, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let mut y = x.matmul_transposed(&self.weight)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `self.grad` and returns `∂L/∂x`.
    pub fn backward(&mut self, x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
        let mut grad = std::mem::replace(&mut self.grad, LinearGrads::zeros(0, 0));
        let out = self.backward_into(x, upstream, &mut grad);
        self.grad = grad;
        out
    }

    /// Like [`backward`](Self::backward) but accumulates into an external
    /// buffer, leaving the layer untouched.
    pub fn backward_into(
        &self,
        x: &Matrix,
        upstream: &Matrix,
        grad: &mut LinearGrads,
    ) -> Result<Matrix> {
        if x.cols() != self.in_dim()
            || upstream.cols() != self.out_dim()
            || x.rows() != upstream.rows()
        {
            return Err(Error::shape(format!(
                "linear backward: x {:?}, upstream {:?}, layer {}->{}",
                x.shape(),
                upstream.shape(),
                self.in_dim(),
                self.out_dim()
            )));
        }
        if grad.weight.shape() != self.weight.shape() || grad.bias.len() != self.bias.len() {
            return Err(Error::shape("gradient buffer does not match layer"));
        }
        let dw = upstream.transposed_matmul(x)?;
        grad.weight.add_assign(&dw)?;
        for r in 0..upstream.rows() {
            for (b, g) in grad.bias.iter_mut().zip(upstream.row(r)) {
                *b += g;
            }
        }
        upstream.matmul(&self.weight)
    }

    pub fn param_count(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_gradients;

    #[test]
    fn zero_layer() {
        let mut layer = LinearLayer::zeros(3, 2);
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let y = layer.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let dx = layer.backward(&x, &Matrix::new(1, 2, vec![1.0, 1.0]).unwrap()).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_layer() {
        let layer =
            LinearLayer::from_parts(Matrix::new(1, 1, vec![2.0]).unwrap(), vec![1.0]).unwrap();
        let y = layer.forward(&Matrix::new(1, 1, vec![3.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn shape_errors() {
        let mut layer = LinearLayer::zeros(3, 2);
        assert!(layer.forward(&Matrix::zeros(1, 4)).is_err());
        assert!(layer
            .backward(&Matrix::zeros(1, 3), &Matrix::zeros(1, 3))
            .is_err());
    }

    #[test]
    fn zero_grad_clears_accumulators() {
        let mut rng = Rng::new(3);
        let mut layer = LinearLayer::init(4, 3, &mut rng);
        let x = Matrix::new(2, 4, (0..8).map(|i| i as f64).collect()).unwrap();
        layer.backward(&x, &Matrix::new(2, 3, vec![1.0; 6]).unwrap()).unwrap();
        assert!(!layer.grad.is_zero());
        layer.zero_grad();
        assert!(layer.grad.is_zero());
        assert_eq!(layer.grad.weight.shape(), layer.weight.shape());
    }

    /// Loss `Σ c ⊙ layer(x)` for fixed random `c`, checked against central
    /// differences over weights, bias, and input.
    fn check_random_layer(seed: u64) -> f64 {
        let mut rng = Rng::new(seed);
        let (n, din, dout) = (1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(5));
        let mut layer = LinearLayer::init(din, dout, &mut rng);
        for b in layer.bias.iter_mut() {
            *b = rng.normal();
        }
        let x = Matrix::new(n, din, (0..n * din).map(|_| rng.normal()).collect()).unwrap();
        let c = Matrix::new(n, dout, (0..n * dout).map(|_| rng.normal()).collect()).unwrap();

        let dx = layer.backward(&x, &c).unwrap();
        let mut analytic = layer.grad.weight.data().to_vec();
        analytic.extend_from_slice(&layer.grad.bias);
        analytic.extend_from_slice(dx.data());

        let mut point = layer.weight.data().to_vec();
        point.extend_from_slice(&layer.bias);
        point.extend_from_slice(x.data());

        let eval = |p: &[f64]| {
            let w = Matrix::new(dout, din, p[..dout * din].to_vec()).unwrap();
            let b = p[dout * din..dout * din + dout].to_vec();
            let xx = Matrix::new(n, din, p[dout * din + dout..].to_vec()).unwrap();
            let l = LinearLayer::from_parts(w, b).unwrap();
            let y = l.forward(&xx).unwrap();
            y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
        };
        check_gradients(eval, &point, &analytic, 1e-5).unwrap().max_relative_error
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let err = check_random_layer(seed);
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }
}
