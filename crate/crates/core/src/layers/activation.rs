use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        *v = v.max(T::zero());
    }
}

/// Masks `grad` by the positivity of the forward *output*.
pub fn relu_backward<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Inverted dropout: surviving units are scaled by `1 / (1 - ratio)` during
/// training so inference is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    ratio: f64,
}

impl Dropout {
    pub fn new(ratio: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::InvalidArgument(format!(
                "dropout ratio must lie in [0, 1), got {ratio}"
            )));
        }
        Ok(Self { ratio })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Returns the output and, in training mode, the per-unit multiplier
    /// needed by [`Dropout::backward`].
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        x: &[T],
        training: bool,
        rng: &mut R,
    ) -> (Vec<T>, Option<Vec<T>>) {
        if !training || self.ratio == 0.0 {
            return (x.to_vec(), None);
        }
        let keep = T::of(1.0 / (1.0 - self.ratio));
        let mask: Vec<T> = x
            .iter()
            .map(|_| {
                if rng.gen::<f64>() < self.ratio {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = x.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        (out, Some(mask))
    }

    pub fn backward<T: Scalar>(mask: Option<&[T]>, grad: &mut [T]) {
        if let Some(mask) = mask {
            for (g, &m) in grad.iter_mut().zip(mask) {
                *g = *g * m;
            }
        }
    }
}
