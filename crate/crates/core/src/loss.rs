//! Class-weighted cross-entropy and class-weight derivation.

use crate::data::NeedleState;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

const PROB_FLOOR: f64 = 1e-12;

/// Per-class loss multipliers, indexed by [`NeedleState::index`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights(pub [f64; NeedleState::COUNT]);

impl ClassWeights {
    pub fn uniform() -> Self {
        Self([1.0; NeedleState::COUNT])
    }

    /// Weights inversely proportional to class frequency, normalized so the
    /// majority class gets 1.0.
    pub fn from_counts(counts: [usize; NeedleState::COUNT]) -> Result<Self> {
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "cannot derive class weights: class {} has no training frames",
                NeedleState::ALL[c]
            )));
        }
        let max = *counts.iter().max().expect("non-empty") as f64;
        Ok(Self(counts.map(|n| max / n as f64)))
    }

    pub fn new(weights: [f64; NeedleState::COUNT]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "class weights must be positive and finite, got {weights:?}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn weight(&self, state: NeedleState) -> f64 {
        self.0[state.index()]
    }
}

/// Loss `-w·ln p_true` and its gradient with respect to the pre-softmax
/// logits, `w·(p − onehot)`. `probs` must come from a softmax.
pub fn weighted_cross_entropy<T: Scalar>(
    probs: &[T],
    target: NeedleState,
    weights: &ClassWeights,
) -> (T, Vec<T>) {
    let w = T::of(weights.weight(target));
    let t = target.index();
    let p_true = probs[t].max(T::of(PROB_FLOOR));
    let loss = -w * p_true.ln();
    let grad = probs
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let onehot = if k == t { T::one() } else { T::zero() };
            w * (p - onehot)
        })
        .collect();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::softmax;
    use proptest::prelude::*;

    #[test]
    fn confident_correct_prediction_has_no_loss() {
        let (loss, grad) =
            weighted_cross_entropy(&[1.0f64, 0.0, 0.0], NeedleState::NoNeedle, &ClassWeights::uniform());
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn zero_probability_is_clamped() {
        let (loss, _) =
            weighted_cross_entropy(&[1.0f64, 0.0, 0.0], NeedleState::Infil, &ClassWeights::uniform());
        assert!(loss.is_finite());
        assert!((loss - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn uniform_prediction_with_fist_weight() {
        let w = ClassWeights::new([1.0, 3.96, 3.79]).unwrap();
        let third = 1.0f64 / 3.0;
        let (loss, _) = weighted_cross_entropy(&[third; 3], NeedleState::Fist, &w);
        assert!((loss - 3.96 * 3.0f64.ln()).abs() < 1e-12);
        assert!((loss - 4.3505).abs() < 5e-4);
    }

    #[test]
    fn table_one_training_counts() {
        let w = ClassWeights::from_counts([32946, 8316, 8700]).unwrap();
        let expected = [1.0, 3.96, 3.79];
        for (got, want) in w.0.iter().zip(expected) {
            assert!((got - want).abs() <= 0.005, "{got} vs {want}");
            assert_eq!((got * 100.0).round() / 100.0, want);
        }
    }

    #[test]
    fn exact_ratio_weights() {
        assert_eq!(ClassWeights::from_counts([100, 50, 25]).unwrap().0, [1.0, 2.0, 4.0]);
        assert_eq!(ClassWeights::from_counts([7, 7, 7]).unwrap().0, [1.0, 1.0, 1.0]);
        assert!(ClassWeights::from_counts([7, 0, 7]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_through_softmax() {
        let w = ClassWeights::new([1.0, 3.96, 3.79]).unwrap();
        let logits = [0.3f64, -1.2, 0.8];
        for target in NeedleState::ALL {
            let (_, grad) = weighted_cross_entropy(&softmax(&logits), target, &w);
            for k in 0..3 {
                let eps = 1e-6;
                let mut up = logits;
                up[k] += eps;
                let mut down = logits;
                down[k] -= eps;
                let lu = weighted_cross_entropy(&softmax(&up), target, &w).0;
                let ld = weighted_cross_entropy(&softmax(&down), target, &w).0;
                let numeric = (lu - ld) / (2.0 * eps);
                assert!((numeric - grad[k]).abs() < 1e-6, "{numeric} vs {}", grad[k]);
            }
        }
    }

    proptest! {
        #[test]
        fn weights_are_scale_invariant(a in 1usize..5000, b in 1usize..5000, c in 1usize..5000, k in 1usize..50) {
            let base = ClassWeights::from_counts([a, b, c]).unwrap();
            let scaled = ClassWeights::from_counts([a * k, b * k, c * k]).unwrap();
            for (x, y) in base.0.iter().zip(scaled.0) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!(base.0.iter().all(|&w| w >= 1.0));
            prop_assert!(base.0.iter().any(|&w| w == 1.0));
        }

        #[test]
        fn loss_is_non_negative(l0 in -10.0f64..10.0, l1 in -10.0f64..10.0, l2 in -10.0f64..10.0, t in 0usize..3) {
            let (loss, _) = weighted_cross_entropy(&softmax(&[l0, l1, l2]), NeedleState::ALL[t], &ClassWeights::new([1.0, 3.96, 3.79]).unwrap());
            prop_assert!(loss >= 0.0);
        }
    }
}
