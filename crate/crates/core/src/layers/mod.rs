//! Hand-written forward and backward passes for every layer the networks use.

mod activation;
mod conv;
mod dense;
mod lstm;
mod pool;

pub use activation::{relu, relu_backward, relu_in_place, softmax, Dropout};
pub use conv::{Conv2d, ConvCache, ConvGrads, KERNEL};
pub use dense::{Dense, DenseGrads};
pub use lstm::{Lstm, LstmGrads, LstmState, LstmTrace};
pub use pool::{maxpool2d, maxpool2d_backward, PoolIndices};

pub(crate) mod init {
    use rand::Rng;

    use crate::tensor::{Scalar, Tensor};

    fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::of(rng.gen_range(-limit..limit)))
    }

    pub fn he_uniform<T: Scalar, R: Rng + ?Sized>(
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Tensor<T> {
        uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
    }

    pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Tensor<T> {
        uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
    }
}
