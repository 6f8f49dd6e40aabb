//! Convolutional-recurrent network: frozen light-CNN conv stack, a ReLU
//! dense layer, an LSTM and a softmax output applied at every time step.

use rand::Rng;

use super::light_cnn::{ConvStack, LightCnn};
use super::spec::{CrnnSpec, CRNN_BASE};
use crate::data::NeedleState;
use crate::error::{CheckpointError, Error, Result};
use crate::layers::{relu_backward, relu_in_place, softmax, Dense, Dropout, Lstm, LstmState, LstmTrace};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Crnn<T = f32> {
    spec: CrnnSpec,
    convs: ConvStack<T>,
    fc: Dense<T>,
    lstm: Lstm<T>,
    out: Dense<T>,
    dropout: Dropout,
}

/// Activations of one training window.
pub struct CrnnTrace<T> {
    steps: usize,
    features: Vec<T>,
    fc_out: Vec<T>,
    lstm: LstmTrace<T>,
    masks: Option<Vec<T>>,
    dropped: Vec<T>,
}

pub struct CrnnGrads<T> {
    /// Gradients for [`Crnn::head_parameters`], in order.
    pub head: Vec<Tensor<T>>,
    /// `[steps × feature_len]`, for training an unfrozen conv stack.
    pub grad_features: Vec<T>,
}

impl<T: Scalar> Crnn<T> {
    /// Copies the conv stack of a trained ⟨16-32-32⟩ light CNN and adds a
    /// freshly initialized recurrent head.
    pub fn from_base<R: Rng + ?Sized>(base: &LightCnn<T>, time_steps: usize, rng: &mut R) -> Result<Self> {
        if base.spec().blocks() != CRNN_BASE {
            return Err(CheckpointError::SpecMismatch(format!(
                "CRNN base must be <16-32-32>, got {}",
                base.spec()
            ))
            .into());
        }
        let spec = CrnnSpec::on_base(base.spec().clone(), time_steps)?;
        Self::with_conv_stack(spec, base.convs().clone(), rng)
    }

    /// Any light-CNN conv stack as the base (used for small test networks).
    pub fn with_conv_stack<R: Rng + ?Sized>(spec: CrnnSpec, convs: ConvStack<T>, rng: &mut R) -> Result<Self> {
        if convs.spec() != &spec.base {
            return Err(CheckpointError::SpecMismatch(format!(
                "conv stack {} does not match CRNN base {}",
                convs.spec(),
                spec.base
            ))
            .into());
        }
        let fc = Dense::he(spec.base.feature_len(), spec.dense_units, rng);
        let lstm = Lstm::new(spec.dense_units, spec.lstm_units, rng);
        let out = Dense::glorot(spec.lstm_units, NeedleState::COUNT, rng);
        let dropout = Dropout::new(spec.dropout)?;
        Ok(Self {
            spec,
            convs,
            fc,
            lstm,
            out,
            dropout,
        })
    }

    pub fn from_parts(spec: CrnnSpec, convs: ConvStack<T>, fc: Dense<T>, lstm: Lstm<T>, out: Dense<T>) -> Result<Self> {
        let fits = convs.spec() == &spec.base
            && fc.inputs() == spec.base.feature_len()
            && fc.outputs() == spec.dense_units
            && lstm.inputs() == spec.dense_units
            && lstm.units() == spec.lstm_units
            && out.inputs() == spec.lstm_units
            && out.outputs() == NeedleState::COUNT;
        if !fits {
            return Err(Error::Shape("CRNN layers do not fit the spec".into()));
        }
        let dropout = Dropout::new(spec.dropout)?;
        Ok(Self {
            spec,
            convs,
            fc,
            lstm,
            out,
            dropout,
        })
    }

    pub fn spec(&self) -> &CrnnSpec {
        &self.spec
    }

    pub fn set_conv_frozen(&mut self, frozen: bool) {
        self.spec.freeze_conv = frozen;
    }

    pub fn convs(&self) -> &ConvStack<T> {
        &self.convs
    }

    pub fn convs_mut(&mut self) -> &mut ConvStack<T> {
        &mut self.convs
    }

    pub fn lstm(&self) -> &Lstm<T> {
        &self.lstm
    }

    pub fn feature_len(&self) -> usize {
        self.spec.base.feature_len()
    }

    pub fn zero_state(&self) -> LstmState<T> {
        self.lstm.zero_state()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn features(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        self.convs.features(x)
    }

    /// One time step from precomputed conv features; updates `state` and
    /// returns class probabilities. Dropout is inactive.
    pub fn step_features(&self, state: &mut LstmState<T>, features: &[T]) -> Result<Vec<T>> {
        let mut a = self.fc.forward(features)?;
        relu_in_place(&mut a);
        let h = self.lstm.step(state, &a)?;
        Ok(softmax(&self.out.forward(&h)?))
    }

    /// One time step from a preprocessed frame.
    pub fn step_frame(&self, state: &mut LstmState<T>, x: &Tensor<T>) -> Result<Vec<T>> {
        let f = self.features(x)?;
        self.step_features(state, &f)
    }

    /// Frame-by-frame inference with the state carried across the whole
    /// sequence from zero.
    pub fn predict_sequential(&self, frames: &[Tensor<T>]) -> Result<Vec<Vec<T>>> {
        let mut state = self.zero_state();
        frames.iter().map(|f| self.step_frame(&mut state, f)).collect()
    }

    /// Batched inference over `steps` feature rows continuing from `state`.
    /// Returns `[steps × 3]` probabilities.
    pub fn forward_sequence(&self, state: &mut LstmState<T>, features: &[T], steps: usize) -> Result<Vec<T>> {
        let mut a = self.fc.forward_rows(features, steps)?;
        relu_in_place(&mut a);
        let (hs, _) = self.lstm.forward_sequence(state, &a, steps)?;
        let logits = self.out.forward_rows(&hs, steps)?;
        Ok(logits.chunks_exact(NeedleState::COUNT).flat_map(softmax).collect())
    }

    /// Training-mode forward over one window starting from a zero state.
    /// Returns `[steps × 3]` probabilities.
    pub fn forward_window<R: Rng + ?Sized>(
        &self,
        features: &[T],
        steps: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<(Vec<T>, CrnnTrace<T>)> {
        let mut fc_out = self.fc.forward_rows(features, steps)?;
        relu_in_place(&mut fc_out);
        let mut state = self.zero_state();
        let (hs, lstm) = self.lstm.forward_sequence(&mut state, &fc_out, steps)?;
        let (dropped, masks) = self.dropout.forward(&hs, training, rng);
        let logits = self.out.forward_rows(&dropped, steps)?;
        let probs = logits.chunks_exact(NeedleState::COUNT).flat_map(softmax).collect();
        Ok((
            probs,
            CrnnTrace {
                steps,
                features: features.to_vec(),
                fc_out,
                lstm,
                masks,
                dropped,
            },
        ))
    }

    /// Backpropagation through one window given per-step logit gradients
    /// (`[steps × 3]`; zero rows for padded steps).
    pub fn backward_window(&self, trace: &CrnnTrace<T>, grad_logits: &[T]) -> Result<CrnnGrads<T>> {
        let steps = trace.steps;
        let og = self.out.backward_rows(&trace.dropped, grad_logits, steps)?;
        let mut grad_hs = og.grad_x.into_data();
        Dropout::backward(trace.masks.as_deref(), &mut grad_hs);
        let lg = self.lstm.backward(&trace.lstm, &grad_hs)?;
        let mut grad_fc = lg.grad_xs;
        relu_backward(&trace.fc_out, &mut grad_fc);
        let fg = self.fc.backward_rows(&trace.features, &grad_fc, steps)?;
        Ok(CrnnGrads {
            head: vec![
                fg.grad_w,
                fg.grad_b,
                lg.grad_input_kernel,
                lg.grad_recurrent_kernel,
                lg.grad_bias,
                og.grad_w,
                og.grad_b,
            ],
            grad_features: fg.grad_x.into_data(),
        })
    }

    pub fn head_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("fc.weight".into(), &self.fc.weight),
            ("fc.bias".into(), &self.fc.bias),
            ("lstm.input_kernel".into(), &self.lstm.input_kernel),
            ("lstm.recurrent_kernel".into(), &self.lstm.recurrent_kernel),
            ("lstm.bias".into(), &self.lstm.bias),
            ("out.weight".into(), &self.out.weight),
            ("out.bias".into(), &self.out.bias),
        ]
    }

    pub fn head_parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Self::head_fields_mut(&mut self.fc, &mut self.lstm, &mut self.out)
    }

    fn head_fields_mut<'a>(fc: &'a mut Dense<T>, lstm: &'a mut Lstm<T>, out: &'a mut Dense<T>) -> Vec<&'a mut Tensor<T>> {
        vec![
            &mut fc.weight,
            &mut fc.bias,
            &mut lstm.input_kernel,
            &mut lstm.recurrent_kernel,
            &mut lstm.bias,
            &mut out.weight,
            &mut out.bias,
        ]
    }

    /// Conv parameters followed by head parameters.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut p = self.convs.parameters();
        p.extend(self.head_parameters());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.convs.parameters_mut();
        p.extend(Self::head_fields_mut(&mut self.fc, &mut self.lstm, &mut self.out));
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::LightCnnSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn base() -> LightCnn<f32> {
        LightCnn::new(&LightCnnSpec::new(&CRNN_BASE).unwrap(), &mut ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn parameter_count_any_time_steps() {
        let base = base();
        for t in [1, 5, 30, 40] {
            let crnn = Crnn::from_base(&base, t, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            assert_eq!(crnn.parameter_count(), 223_491);
            assert_eq!(crnn.convs(), base.convs());
        }
    }

    #[test]
    fn rejects_other_bases() {
        let other = LightCnn::<f32>::new(&LightCnnSpec::new(&[16, 32]).unwrap(), &mut ChaCha8Rng::seed_from_u64(0));
        let err = Crnn::from_base(&other, 30, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(CheckpointError::SpecMismatch(_))));
    }

    #[test]
    fn window_emits_one_triple_per_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = LightCnnSpec::with_input_side(&[2, 2], 8).unwrap();
        let convs = ConvStack::<f64>::new(&spec, &mut rng);
        let crnn = Crnn::with_conv_stack(CrnnSpec::on_base(spec, 6).unwrap(), convs, &mut rng).unwrap();
        let feats: Vec<f64> = (0..6 * crnn.feature_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (probs, _) = crnn.forward_window(&feats, 6, false, &mut rng).unwrap();
        assert_eq!(probs.len(), 18);
        for p in probs.chunks(3) {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // batched inference agrees with the training path at inference time
        let mut state = crnn.zero_state();
        let batched = crnn.forward_sequence(&mut state, &feats, 6).unwrap();
        for (a, b) in batched.iter().zip(&probs) {
            assert!((a - b).abs() < 1e-12);
        }
        // and with the per-step path
        let mut state = crnn.zero_state();
        for (t, f) in feats.chunks(crnn.feature_len()).enumerate() {
            let p = crnn.step_features(&mut state, f).unwrap();
            for (a, b) in p.iter().zip(&probs[t * 3..t * 3 + 3]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
