use rand::Rng;

use super::spec::LightCnnSpec;
use crate::data::NeedleState;
use crate::error::{Error, Result};
use crate::layers::{
    maxpool2d, maxpool2d_backward, relu_backward, relu_in_place, softmax, Conv2d, ConvCache, Dense,
    PoolIndices,
};
use crate::tensor::{Scalar, Tensor};

/// The conv(3×3)+ReLU+maxpool blocks shared by light CNNs and CRNNs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack<T = f32> {
    spec: LightCnnSpec,
    layers: Vec<Conv2d<T>>,
}

/// Activations of one block retained for backpropagation.
#[derive(Debug, Clone)]
struct BlockTrace<T> {
    conv: ConvCache<T>,
    activated: Tensor<T>,
    pool: PoolIndices,
}

#[derive(Debug, Clone)]
pub struct ConvStackTrace<T> {
    blocks: Vec<BlockTrace<T>>,
}

impl<T: Scalar> ConvStack<T> {
    pub fn new<R: Rng + ?Sized>(spec: &LightCnnSpec, rng: &mut R) -> Self {
        let layers = spec
            .conv_shapes()
            .into_iter()
            .map(|(c, f)| Conv2d::new(c, f, rng))
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn from_layers(spec: &LightCnnSpec, layers: Vec<Conv2d<T>>) -> Result<Self> {
        let shapes: Vec<_> = layers.iter().map(|l| (l.in_channels(), l.filters())).collect();
        if shapes != spec.conv_shapes() {
            return Err(Error::Shape(format!(
                "conv layers {shapes:?} do not match {spec}"
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &LightCnnSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Conv2d<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Conv2d<T>] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Conv2d::parameter_count).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.spec.input_shape() {
            return Err(Error::Shape(format!(
                "{} expects input {:?}, got {:?}",
                self.spec,
                self.spec.input_shape(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Flattened output of the last pooling layer.
    pub fn features(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for conv in &self.layers {
            let mut a = conv.forward(&h)?;
            relu_in_place(a.data_mut());
            h = maxpool2d(&a)?.0;
        }
        Ok(h.into_data())
    }

    pub fn features_train(&self, x: &Tensor<T>) -> Result<(Vec<T>, ConvStackTrace<T>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut blocks = Vec::with_capacity(self.layers.len());
        for conv in &self.layers {
            let (mut a, conv_cache) = conv.forward_train(&h)?;
            relu_in_place(a.data_mut());
            let (pooled, pool) = maxpool2d(&a)?;
            blocks.push(BlockTrace {
                conv: conv_cache,
                activated: a,
                pool,
            });
            h = pooled;
        }
        Ok((h.into_data(), ConvStackTrace { blocks }))
    }

    /// Backward from the flattened-feature gradient; returns
    /// `[weight, bias]` gradients per layer in layer order.
    pub fn backward(&self, trace: &ConvStackTrace<T>, grad_features: &[T]) -> Result<Vec<Tensor<T>>> {
        let side = self.spec.feature_side();
        let last = *self.spec.blocks().last().expect("non-empty");
        let mut grad = Tensor::new(&[side, side, last], grad_features.to_vec())?;
        let mut grads = vec![None; self.layers.len()];
        for (i, (conv, block)) in self.layers.iter().zip(&trace.blocks).enumerate().rev() {
            let mut g = maxpool2d_backward(&block.pool, &grad)?;
            relu_backward(block.activated.data(), g.data_mut());
            let cg = conv.backward_cached(&block.conv, &g, i > 0)?;
            if let Some(gx) = cg.grad_x {
                grad = gx;
            }
            grads[i] = Some([cg.grad_w, cg.grad_b]);
        }
        Ok(grads.into_iter().flat_map(|g| g.expect("every layer visited")).collect())
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("conv{i}.weight"), &l.weight), (format!("conv{i}.bias"), &l.bias)])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Conv blocks followed directly by a 3-way softmax layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LightCnn<T = f32> {
    convs: ConvStack<T>,
    head: Dense<T>,
}

pub struct LightCnnTrace<T> {
    features: Vec<T>,
    convs: ConvStackTrace<T>,
}

impl<T: Scalar> LightCnn<T> {
    pub fn new<R: Rng + ?Sized>(spec: &LightCnnSpec, rng: &mut R) -> Self {
        let convs = ConvStack::new(spec, rng);
        let head = Dense::glorot(spec.feature_len(), NeedleState::COUNT, rng);
        Self { convs, head }
    }

    pub fn from_parts(convs: ConvStack<T>, head: Dense<T>) -> Result<Self> {
        let spec = convs.spec();
        if head.inputs() != spec.feature_len() || head.outputs() != NeedleState::COUNT {
            return Err(Error::Shape(format!(
                "output layer {}→{} does not fit {spec}",
                head.inputs(),
                head.outputs()
            )));
        }
        Ok(Self { convs, head })
    }

    pub fn spec(&self) -> &LightCnnSpec {
        self.convs.spec()
    }

    pub fn convs(&self) -> &ConvStack<T> {
        &self.convs
    }

    pub fn head(&self) -> &Dense<T> {
        &self.head
    }

    pub fn parameter_count(&self) -> usize {
        self.convs.parameter_count() + self.head.parameter_count()
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        self.head.forward(&self.convs.features(x)?)
    }

    /// Class probabilities for one preprocessed frame.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn classify(&self, x: &Tensor<T>) -> Result<NeedleState> {
        Ok(NeedleState::argmax(&self.predict(x)?))
    }

    /// Forward pass keeping everything `backward` needs; returns probabilities.
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Vec<T>, LightCnnTrace<T>)> {
        let (features, convs) = self.convs.features_train(x)?;
        let probs = softmax(&self.head.forward(&features)?);
        Ok((probs, LightCnnTrace { features, convs }))
    }

    /// Parameter gradients in [`LightCnn::parameters`] order, given the loss
    /// gradient with respect to the output logits.
    pub fn backward(&self, trace: &LightCnnTrace<T>, grad_logits: &[T]) -> Result<Vec<Tensor<T>>> {
        let hg = self.head.backward(&trace.features, grad_logits)?;
        let mut grads = self.convs.backward(&trace.convs, hg.grad_x.data())?;
        grads.push(hg.grad_w);
        grads.push(hg.grad_b);
        Ok(grads)
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut p = self.convs.parameters();
        p.push(("head.weight".into(), &self.head.weight));
        p.push(("head.bias".into(), &self.head.bias));
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.convs.parameters_mut();
        p.push(&mut self.head.weight);
        p.push(&mut self.head.bias);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tiny_architecture_shape_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = LightCnn::<f32>::new(&LightCnnSpec::new(&[2, 4]).unwrap(), &mut rng);
        let x = Tensor::from_fn(&[112, 112, 3], |i| ((i % 255) as f32) - 120.0);
        let p = model.predict(&x).unwrap();
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        assert!(model.predict(&Tensor::zeros(&[56, 56, 3])).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = LightCnnSpec::new(&[16, 32, 32]).unwrap();
        let a = LightCnn::<f32>::new(&spec, &mut ChaCha8Rng::seed_from_u64(17));
        let b = LightCnn::<f32>::new(&spec, &mut ChaCha8Rng::seed_from_u64(17));
        let c = LightCnn::<f32>::new(&spec, &mut ChaCha8Rng::seed_from_u64(18));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn allocated_parameters_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in LightCnnSpec::table() {
            let model = LightCnn::<f32>::new(&spec, &mut rng);
            let allocated: usize = model.parameters().iter().map(|(_, t)| t.len()).sum();
            assert_eq!(allocated, spec.parameter_count(), "{spec}");
            assert_eq!(model.parameter_count(), allocated);
        }
    }

    #[test]
    fn gradient_list_mirrors_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = LightCnnSpec::with_input_side(&[2, 3], 8).unwrap();
        let model = LightCnn::<f64>::new(&spec, &mut rng);
        let x = Tensor::from_fn(&[8, 8, 3], |_| rng.gen_range(-1.0..1.0));
        let (_, trace) = model.forward_train(&x).unwrap();
        let grads = model.backward(&trace, &[0.1, -0.2, 0.1]).unwrap();
        let params = model.parameters();
        assert_eq!(grads.len(), params.len());
        for (g, (_, p)) in grads.iter().zip(params) {
            assert_eq!(g.shape(), p.shape());
        }
    }
}
