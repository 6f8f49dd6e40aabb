use rand::Rng;

use super::init;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Op, Scalar, Tensor};

/// Fully connected affine layer `y = x·W + b` with `W` stored `[n_in × n_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    /// He-uniform initialization, for layers feeding a ReLU.
    pub fn he<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        Self {
            weight: init::he_uniform(&[n_in, n_out], n_in, rng),
            bias: Tensor::zeros(&[n_out]),
        }
    }

    /// Glorot-uniform initialization, for the softmax output layer.
    pub fn glorot<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        Self {
            weight: init::glorot_uniform(&[n_in, n_out], n_in, n_out, rng),
            bias: Tensor::zeros(&[n_out]),
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, n_out) = weight.as_matrix()?;
        if bias.shape() != [n_out] {
            return Err(Error::Shape(format!(
                "dense bias must have {n_out} entries, got {:?}",
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Single-sample forward over a flat input of length `n_in`.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_len(x.len(), 1)?;
        let mut y = self.bias.data().to_vec();
        gemm(
            1,
            self.inputs(),
            self.outputs(),
            x,
            Op::N,
            self.weight.data(),
            Op::N,
            &mut y,
            true,
        );
        Ok(y)
    }

    /// Row-wise forward over a `[rows × n_in]` flat buffer.
    pub fn forward_rows(&self, xs: &[T], rows: usize) -> Result<Vec<T>> {
        self.check_len(xs.len(), rows)?;
        let mut y = Vec::with_capacity(rows * self.outputs());
        for _ in 0..rows {
            y.extend_from_slice(self.bias.data());
        }
        gemm(
            rows,
            self.inputs(),
            self.outputs(),
            xs,
            Op::N,
            self.weight.data(),
            Op::N,
            &mut y,
            true,
        );
        Ok(y)
    }

    pub fn backward(&self, x: &[T], grad_out: &[T]) -> Result<DenseGrads<T>> {
        self.backward_rows(x, grad_out, 1)
    }

    /// Gradients for a batch of rows; parameter gradients are summed over rows.
    pub fn backward_rows(&self, xs: &[T], grad_out: &[T], rows: usize) -> Result<DenseGrads<T>> {
        self.check_len(xs.len(), rows)?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        if grad_out.len() != rows * n_out {
            return Err(Error::Shape(format!(
                "dense grad_out has {} elements, expected {}",
                grad_out.len(),
                rows * n_out
            )));
        }
        let mut grad_w = vec![T::zero(); n_in * n_out];
        gemm(n_in, rows, n_out, xs, Op::T, grad_out, Op::N, &mut grad_w, false);
        let mut grad_b = vec![T::zero(); n_out];
        for row in grad_out.chunks_exact(n_out) {
            for (acc, &g) in grad_b.iter_mut().zip(row) {
                *acc = *acc + g;
            }
        }
        let mut grad_x = vec![T::zero(); rows * n_in];
        gemm(
            rows,
            n_out,
            n_in,
            grad_out,
            Op::N,
            self.weight.data(),
            Op::T,
            &mut grad_x,
            false,
        );
        let x_shape: Vec<usize> = if rows == 1 { vec![n_in] } else { vec![rows, n_in] };
        Ok(DenseGrads {
            grad_x: Tensor::new(&x_shape, grad_x)?,
            grad_w: Tensor::new(&[n_in, n_out], grad_w)?,
            grad_b: Tensor::new(&[n_out], grad_b)?,
        })
    }

    fn check_len(&self, len: usize, rows: usize) -> Result<()> {
        if len != rows * self.inputs() || rows == 0 {
            return Err(Error::Shape(format!(
                "dense layer expects {rows}×{} inputs, got {len} values",
                self.inputs()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights() {
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0f32 } else { 0.0 });
        let d = Dense::from_parts(w, Tensor::zeros(&[3])).unwrap();
        assert_eq!(d.forward(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn light_cnn_head_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(Dense::<f32>::glorot(6272, 3, &mut rng).parameter_count(), 18_819);
    }

    #[test]
    fn rejects_wrong_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dense::<f32>::he(4, 2, &mut rng);
        assert!(d.forward(&[1.0; 3]).is_err());
        assert!(d.backward(&[1.0; 4], &[1.0; 3]).is_err());
    }

    #[test]
    fn rows_agree_with_single_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Dense::<f64>::he(5, 4, &mut rng);
        let xs: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let batched = d.forward_rows(&xs, 3).unwrap();
        for (r, x) in xs.chunks(5).enumerate() {
            let single = d.forward(x).unwrap();
            for (a, b) in single.iter().zip(&batched[r * 4..(r + 1) * 4]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
