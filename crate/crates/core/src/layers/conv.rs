//! 3×3 convolution, stride 1, zero padding 1, lowered to a matrix product
//! through an im2col patch matrix.

use rand::Rng;

use super::init;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Op, Scalar, Tensor};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Cross-correlation layer (no kernel flip). Weights are stored
/// `[ky][kx][c_in][filter]`, which is exactly the row order of the im2col
/// patch matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T = f32> {
    in_channels: usize,
    filters: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Patch matrix retained from a training forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    height: usize,
    width: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub grad_x: Option<Tensor<T>>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(in_channels: usize, filters: usize, rng: &mut R) -> Self {
        let fan_in = TAPS * in_channels;
        let weight = init::he_uniform(&[KERNEL, KERNEL, in_channels, filters], fan_in, rng);
        Self {
            in_channels,
            filters,
            weight,
            bias: Tensor::zeros(&[filters]),
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (in_channels, filters) = match weight.shape()[..] {
            [KERNEL, KERNEL, c, f] => (c, f),
            _ => {
                return Err(Error::Shape(format!(
                    "conv weight must be 3×3×C×F, got {:?}",
                    weight.shape()
                )))
            }
        };
        if bias.shape() != [filters] {
            return Err(Error::Shape(format!(
                "conv bias must have {filters} entries, got {:?}",
                bias.shape()
            )));
        }
        Ok(Self {
            in_channels,
            filters,
            weight,
            bias,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_train(x).map(|(out, _)| out)
    }

    /// Forward pass that keeps the patch matrix for [`Conv2d::backward_cached`].
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (h, w) = self.check_input(x)?;
        let cols = im2col(x.data(), h, w, self.in_channels);
        let rows = h * w;
        let mut out = Vec::with_capacity(rows * self.filters);
        for _ in 0..rows {
            out.extend_from_slice(self.bias.data());
        }
        gemm(
            rows,
            TAPS * self.in_channels,
            self.filters,
            &cols,
            Op::N,
            self.weight.data(),
            Op::N,
            &mut out,
            true,
        );
        let out = Tensor::new(&[h, w, self.filters], out)?;
        Ok((
            out,
            ConvCache {
                cols,
                height: h,
                width: w,
            },
        ))
    }

    /// Gradients with respect to input, weights and bias for the input `x`.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        let (_, cache) = self.forward_train(x)?;
        self.backward_cached(&cache, grad_out, true)
    }

    /// As [`Conv2d::backward`] but reuses the forward patch matrix. The input
    /// gradient is skipped when `input_grad` is false (first layer).
    pub fn backward_cached(
        &self,
        cache: &ConvCache<T>,
        grad_out: &Tensor<T>,
        input_grad: bool,
    ) -> Result<ConvGrads<T>> {
        let (h, w) = (cache.height, cache.width);
        if grad_out.shape() != [h, w, self.filters] {
            return Err(Error::Shape(format!(
                "conv grad_out must be {h}×{w}×{}, got {:?}",
                self.filters,
                grad_out.shape()
            )));
        }
        let rows = h * w;
        let depth = TAPS * self.in_channels;
        let g = grad_out.data();

        let mut grad_w = vec![T::zero(); depth * self.filters];
        gemm(
            depth,
            rows,
            self.filters,
            &cache.cols,
            Op::T,
            g,
            Op::N,
            &mut grad_w,
            false,
        );

        let mut grad_b = vec![T::zero(); self.filters];
        for row in g.chunks_exact(self.filters) {
            for (acc, &v) in grad_b.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }

        let grad_x = if input_grad {
            let mut grad_cols = vec![T::zero(); rows * depth];
            gemm(
                rows,
                self.filters,
                depth,
                g,
                Op::N,
                self.weight.data(),
                Op::T,
                &mut grad_cols,
                false,
            );
            Some(Tensor::new(
                &[h, w, self.in_channels],
                col2im(&grad_cols, h, w, self.in_channels),
            )?)
        } else {
            None
        };

        Ok(ConvGrads {
            grad_x,
            grad_w: Tensor::new(self.weight.shape(), grad_w)?,
            grad_b: Tensor::new(&[self.filters], grad_b)?,
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let (h, w, c) = x.as_image()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        Ok((h, w))
    }
}

/// Output columns `x0` whose tap `kx` lands inside a row of width `w`.
fn tap_columns(kx: usize, w: usize) -> std::ops::Range<usize> {
    let lo = usize::from(kx == 0);
    let hi = if kx + 1 == KERNEL { w.saturating_sub(1) } else { w };
    lo..hi.max(lo)
}

/// Rows are output pixels, columns are `(ky, kx, c)` taps of the padded
/// input.
fn im2col<T: Scalar>(x: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let depth = TAPS * c;
    let mut cols = vec![T::zero(); h * w * depth];
    for (y, dst_rows) in cols.chunks_exact_mut(w * depth).enumerate() {
        for ky in 0..KERNEL {
            let Some(sy) = (y + ky).checked_sub(1).filter(|&sy| sy < h) else {
                continue;
            };
            let src_row = &x[sy * w * c..(sy + 1) * w * c];
            for kx in 0..KERNEL {
                let off = (ky * KERNEL + kx) * c;
                for x0 in tap_columns(kx, w) {
                    let d = x0 * depth + off;
                    let s = (x0 + kx - 1) * c;
                    for (o, &v) in dst_rows[d..d + c].iter_mut().zip(&src_row[s..s + c]) {
                        *o = v;
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let depth = TAPS * c;
    let mut out = vec![T::zero(); h * w * c];
    for (y, src_rows) in cols.chunks_exact(w * depth).enumerate() {
        for ky in 0..KERNEL {
            let Some(sy) = (y + ky).checked_sub(1).filter(|&sy| sy < h) else {
                continue;
            };
            let dst_row = &mut out[sy * w * c..(sy + 1) * w * c];
            for kx in 0..KERNEL {
                let off = (ky * KERNEL + kx) * c;
                for x0 in tap_columns(kx, w) {
                    let s = x0 * depth + off;
                    let d = (x0 + kx - 1) * c;
                    for (o, &v) in dst_row[d..d + c].iter_mut().zip(&src_rows[s..s + c]) {
                        *o = *o + v;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn center_tap_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = vec![0.0f32; 9];
        w[4] = 1.0;
        let conv = Conv2d::from_parts(
            Tensor::new(&[3, 3, 1, 1], w).unwrap(),
            Tensor::zeros(&[1]),
        )
        .unwrap();
        let x = Tensor::from_fn(&[5, 4, 1], |_| rng.gen_range(-1.0..1.0));
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn center_tap_sums_channels() {
        let mut w = vec![0.0f32; 9 * 2];
        w[4 * 2] = 1.0;
        w[4 * 2 + 1] = 1.0;
        let conv = Conv2d::from_parts(
            Tensor::new(&[3, 3, 2, 1], w).unwrap(),
            Tensor::zeros(&[1]),
        )
        .unwrap();
        let x = Tensor::from_fn(&[2, 2, 2], |i| i as f32);
        assert_eq!(conv.forward(&x).unwrap().data(), &[1.0, 5.0, 9.0, 13.0]);
    }

    #[test]
    fn network_input_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::<f32>::new(3, 16, &mut rng);
        let out = conv.forward(&Tensor::zeros(&[112, 112, 3])).unwrap();
        assert_eq!(out.shape(), &[112, 112, 16]);
        assert_eq!(conv.parameter_count(), 9 * 3 * 16 + 16);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::<f32>::new(2, 4, &mut rng);
        let err = conv.forward(&Tensor::zeros(&[4, 4, 3])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn bias_only_output() {
        let conv = Conv2d::from_parts(
            Tensor::<f64>::zeros(&[3, 3, 1, 2]),
            Tensor::vector(&[0.5, -1.0]),
        )
        .unwrap();
        let out = conv.forward(&Tensor::full(&[3, 3, 1], 7.0)).unwrap();
        for px in out.data().chunks(2) {
            assert_eq!(px, &[0.5, -1.0]);
        }
    }

    #[test]
    fn skipping_input_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = Conv2d::<f64>::new(2, 3, &mut rng);
        let x = Tensor::from_fn(&[4, 4, 2], |_| rng.gen_range(-1.0..1.0));
        let (out, cache) = conv.forward_train(&x).unwrap();
        let full = conv.backward(&x, &out).unwrap();
        let partial = conv.backward_cached(&cache, &out, false).unwrap();
        assert!(partial.grad_x.is_none());
        assert_eq!(partial.grad_w, full.grad_w);
        assert_eq!(partial.grad_b, full.grad_b);
    }

    proptest::proptest! {
        #[test]
        fn output_keeps_spatial_extent(h in 1usize..12, w in 1usize..12, c in 1usize..5, f in 1usize..5, seed in proptest::prelude::any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let conv = Conv2d::<f32>::new(c, f, &mut rng);
            let y = conv.forward(&Tensor::full(&[h, w, c], 1.0)).unwrap();
            proptest::prop_assert_eq!(y.shape(), &[h, w, f][..]);
        }
    }
}
