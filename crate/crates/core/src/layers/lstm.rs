//! LSTM layer without peepholes.
//!
//! Gate pre-activations are packed as `[i | f | g | o]` blocks of `units`
//! columns, so the input kernel is `[n_in × 4·units]` and the recurrent
//! kernel `[units × 4·units]`:
//!
//! ```text
//! i, f, o = σ(x·Wx + h·Wh + b)     g = tanh(...)
//! c' = f ⊙ c + i ⊙ g               h' = o ⊙ tanh(c')
//! ```

use rand::Rng;

use super::init;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Op, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<T = f32> {
    inputs: usize,
    units: usize,
    pub input_kernel: Tensor<T>,
    pub recurrent_kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(units: usize) -> Self {
        Self {
            h: vec![T::zero(); units],
            c: vec![T::zero(); units],
        }
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = T::zero());
        self.c.iter_mut().for_each(|v| *v = T::zero());
    }
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmTrace<T> {
    steps: usize,
    xs: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads<T> {
    /// `[steps × n_in]`
    pub grad_xs: Vec<T>,
    pub grad_input_kernel: Tensor<T>,
    pub grad_recurrent_kernel: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl<T: Scalar> Lstm<T> {
    /// Glorot-uniform kernels, zero biases except the forget gate at 1.
    pub fn new<R: Rng + ?Sized>(inputs: usize, units: usize, rng: &mut R) -> Self {
        let width = 4 * units;
        let mut bias = vec![T::zero(); width];
        bias[units..2 * units].iter_mut().for_each(|b| *b = T::one());
        Self {
            inputs,
            units,
            input_kernel: init::glorot_uniform(&[inputs, width], inputs, width, rng),
            recurrent_kernel: init::glorot_uniform(&[units, width], units, width, rng),
            bias: Tensor::new(&[width], bias).expect("bias shape"),
        }
    }

    pub fn from_parts(
        input_kernel: Tensor<T>,
        recurrent_kernel: Tensor<T>,
        bias: Tensor<T>,
    ) -> Result<Self> {
        let (inputs, width) = input_kernel.as_matrix()?;
        let units = width / 4;
        if width % 4 != 0
            || recurrent_kernel.shape() != [units, width]
            || bias.shape() != [width]
        {
            return Err(Error::Shape(format!(
                "inconsistent LSTM parameter shapes {:?} / {:?} / {:?}",
                input_kernel.shape(),
                recurrent_kernel.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            inputs,
            units,
            input_kernel,
            recurrent_kernel,
            bias,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn parameter_count(&self) -> usize {
        self.input_kernel.len() + self.recurrent_kernel.len() + self.bias.len()
    }

    pub fn zero_state(&self) -> LstmState<T> {
        LstmState::zeros(self.units)
    }

    /// Advances `state` by one input and returns the new hidden state.
    pub fn step(&self, state: &mut LstmState<T>, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x.len(), 1)?;
        let mut z = self.bias.data().to_vec();
        gemm(
            1,
            self.inputs,
            4 * self.units,
            x,
            Op::N,
            self.input_kernel.data(),
            Op::N,
            &mut z,
            true,
        );
        self.finish_step(state, &mut z, None);
        Ok(state.h.clone())
    }

    /// Runs a sequence of `steps` inputs (`[steps × n_in]`) from `state`,
    /// leaving `state` at the final step. Returns hidden states
    /// `[steps × units]` and the trace for [`Lstm::backward`].
    pub fn forward_sequence(
        &self,
        state: &mut LstmState<T>,
        xs: &[T],
        steps: usize,
    ) -> Result<(Vec<T>, LstmTrace<T>)> {
        self.check_input(xs.len(), steps)?;
        let (n, width) = (self.units, 4 * self.units);
        let mut pre = Vec::with_capacity(steps * width);
        for _ in 0..steps {
            pre.extend_from_slice(self.bias.data());
        }
        gemm(
            steps,
            self.inputs,
            width,
            xs,
            Op::N,
            self.input_kernel.data(),
            Op::N,
            &mut pre,
            true,
        );
        let mut trace = LstmTrace {
            steps,
            xs: xs.to_vec(),
            h_prev: Vec::with_capacity(steps * n),
            c_prev: Vec::with_capacity(steps * n),
            gates: Vec::with_capacity(steps * width),
            tanh_c: Vec::with_capacity(steps * n),
        };
        let mut hs = Vec::with_capacity(steps * n);
        for z in pre.chunks_exact_mut(width) {
            trace.h_prev.extend_from_slice(&state.h);
            trace.c_prev.extend_from_slice(&state.c);
            let tanh_c = self.finish_step(state, z, Some(&mut trace.gates));
            trace.tanh_c.extend_from_slice(&tanh_c);
            hs.extend_from_slice(&state.h);
        }
        Ok((hs, trace))
    }

    /// Adds the recurrent term to `z`, applies the gates and updates `state`.
    /// Returns `tanh(c')`.
    fn finish_step(&self, state: &mut LstmState<T>, z: &mut [T], gates: Option<&mut Vec<T>>) -> Vec<T> {
        let n = self.units;
        gemm(
            1,
            n,
            4 * n,
            &state.h,
            Op::N,
            self.recurrent_kernel.data(),
            Op::N,
            z,
            true,
        );
        for j in 0..n {
            z[j] = sigmoid(z[j]);
            z[n + j] = sigmoid(z[n + j]);
            z[2 * n + j] = z[2 * n + j].tanh();
            z[3 * n + j] = sigmoid(z[3 * n + j]);
        }
        let mut tanh_c = Vec::with_capacity(n);
        for j in 0..n {
            let c = z[n + j] * state.c[j] + z[j] * z[2 * n + j];
            state.c[j] = c;
            let t = c.tanh();
            tanh_c.push(t);
            state.h[j] = z[3 * n + j] * t;
        }
        if let Some(gates) = gates {
            gates.extend_from_slice(z);
        }
        tanh_c
    }

    /// Backpropagation through the traced window. `grad_hs` is the loss
    /// gradient with respect to each emitted hidden state (`[steps × units]`);
    /// gradients do not flow into the state the window started from.
    pub fn backward(&self, trace: &LstmTrace<T>, grad_hs: &[T]) -> Result<LstmGrads<T>> {
        let (n, width, steps) = (self.units, 4 * self.units, trace.steps);
        if grad_hs.len() != steps * n {
            return Err(Error::Shape(format!(
                "LSTM grad_hs has {} values, expected {}",
                grad_hs.len(),
                steps * n
            )));
        }
        let mut dz_all = vec![T::zero(); steps * width];
        let mut dh_next = vec![T::zero(); n];
        let mut dc_next = vec![T::zero(); n];
        for t in (0..steps).rev() {
            let gates = &trace.gates[t * width..(t + 1) * width];
            let tanh_c = &trace.tanh_c[t * n..(t + 1) * n];
            let c_prev = &trace.c_prev[t * n..(t + 1) * n];
            let dz = &mut dz_all[t * width..(t + 1) * width];
            for j in 0..n {
                let (i, f, g, o) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
                let dh = grad_hs[t * n + j] + dh_next[j];
                let d_o = dh * tanh_c[j];
                let dc = dh * o * (T::one() - tanh_c[j] * tanh_c[j]) + dc_next[j];
                dz[j] = dc * g * i * (T::one() - i);
                dz[n + j] = dc * c_prev[j] * f * (T::one() - f);
                dz[2 * n + j] = dc * i * (T::one() - g * g);
                dz[3 * n + j] = d_o * o * (T::one() - o);
                dc_next[j] = dc * f;
            }
            gemm(
                1,
                width,
                n,
                dz,
                Op::N,
                self.recurrent_kernel.data(),
                Op::T,
                &mut dh_next,
                false,
            );
        }

        let mut grad_ik = vec![T::zero(); self.inputs * width];
        gemm(
            self.inputs,
            steps,
            width,
            &trace.xs,
            Op::T,
            &dz_all,
            Op::N,
            &mut grad_ik,
            false,
        );
        let mut grad_rk = vec![T::zero(); n * width];
        gemm(
            n,
            steps,
            width,
            &trace.h_prev,
            Op::T,
            &dz_all,
            Op::N,
            &mut grad_rk,
            false,
        );
        let mut grad_b = vec![T::zero(); width];
        for row in dz_all.chunks_exact(width) {
            for (acc, &v) in grad_b.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        let mut grad_xs = vec![T::zero(); steps * self.inputs];
        gemm(
            steps,
            width,
            self.inputs,
            &dz_all,
            Op::N,
            self.input_kernel.data(),
            Op::T,
            &mut grad_xs,
            false,
        );
        Ok(LstmGrads {
            grad_xs,
            grad_input_kernel: Tensor::new(&[self.inputs, width], grad_ik)?,
            grad_recurrent_kernel: Tensor::new(&[n, width], grad_rk)?,
            grad_bias: Tensor::new(&[width], grad_b)?,
        })
    }

    fn check_input(&self, len: usize, steps: usize) -> Result<()> {
        if steps == 0 || len != steps * self.inputs {
            return Err(Error::Shape(format!(
                "LSTM expects {steps}×{} inputs, got {len} values",
                self.inputs
            )));
        }
        Ok(())
    }
}
