//! 2×2 max pooling with stride 2.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Flat input offsets of each output element's window maximum.
#[derive(Debug, Clone)]
pub struct PoolIndices {
    argmax: Vec<usize>,
    input_shape: [usize; 3],
}

/// Halves both spatial axes, keeping the maximum of each 2×2 window. Ties go
/// to the first element in row-major order.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (h, w, c) = x.as_image()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "max pooling needs even spatial extents, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            let base = [
                ((2 * oy) * w + 2 * ox) * c,
                ((2 * oy) * w + 2 * ox + 1) * c,
                ((2 * oy + 1) * w + 2 * ox) * c,
                ((2 * oy + 1) * w + 2 * ox + 1) * c,
            ];
            for ch in 0..c {
                let mut best = base[0] + ch;
                for b in &base[1..] {
                    if data[b + ch] > data[best] {
                        best = b + ch;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(&[oh, ow, c], out)?,
        PoolIndices {
            argmax,
            input_shape: [h, w, c],
        },
    ))
}

/// Routes each output gradient to the position that won its window.
pub fn maxpool2d_backward<T: Scalar>(
    indices: &PoolIndices,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::Shape(format!(
            "pool grad_out has {} elements, expected {}",
            grad_out.len(),
            indices.argmax.len()
        )));
    }
    let [h, w, c] = indices.input_shape;
    let mut grad = vec![T::zero(); h * w * c];
    for (&pos, &g) in indices.argmax.iter().zip(grad_out.data()) {
        grad[pos] = grad[pos] + g;
    }
    Tensor::new(&indices.input_shape, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window() {
        let x = Tensor::new(&[2, 2, 1], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (out, _) = maxpool2d(&x).unwrap();
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn ties_route_to_first_element() {
        let x = Tensor::full(&[4, 4, 1], 5.0f32);
        let (out, idx) = maxpool2d(&x).unwrap();
        assert!(out.data().iter().all(|&v| v == 5.0));
        let g = maxpool2d_backward(&idx, &Tensor::full(&[2, 2, 1], 1.0)).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(g.data(), &expected);
    }

    #[test]
    fn halves_feature_maps() {
        let (out, _) = maxpool2d(&Tensor::<f32>::zeros(&[112, 112, 16])).unwrap();
        assert_eq!(out.shape(), &[56, 56, 16]);
    }

    #[test]
    fn rejects_odd_extent() {
        assert!(maxpool2d(&Tensor::<f32>::zeros(&[3, 4, 1])).is_err());
        assert!(maxpool2d(&Tensor::<f32>::zeros(&[4, 5, 1])).is_err());
    }

    #[test]
    fn channels_pool_independently() {
        // channel 0 peaks at top-left, channel 1 at bottom-right
        let x = Tensor::new(&[2, 2, 2], vec![9.0f32, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 8.0]).unwrap();
        let (out, idx) = maxpool2d(&x).unwrap();
        assert_eq!(out.data(), &[9.0, 8.0]);
        let g = maxpool2d_backward(&idx, &Tensor::vector(&[1.0, 2.0]).reshape(&[1, 1, 2]).unwrap())
            .unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    proptest::proptest! {
        #[test]
        fn backward_conserves_gradient_mass(h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in proptest::prelude::any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::from_fn(&[2 * h, 2 * w, c], |_| rng.gen_range(-1.0f64..1.0));
            let (y, idx) = maxpool2d(&x).unwrap();
            let g = Tensor::from_fn(y.shape(), |_| rng.gen_range(-1.0f64..1.0));
            let back = maxpool2d_backward(&idx, &g).unwrap();
            let (a, b): (f64, f64) = (back.data().iter().sum(), g.data().iter().sum());
            proptest::prop_assert!((a - b).abs() < 1e-12);
            proptest::prop_assert_eq!(back.shape(), x.shape());
        }
    }
}
