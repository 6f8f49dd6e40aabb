use std::fmt;
use std::str::FromStr;

use crate::data::{NeedleState, INPUT_SIDE};
use crate::error::{Error, Result};
use crate::layers::KERNEL;

/// Filter counts of a stack of conv(3×3)+maxpool(2×2) blocks that feeds a
/// softmax output directly.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LightCnnSpec {
    blocks: Vec<usize>,
    input_side: usize,
}

/// Every architecture compared in the light-CNN table, in table order.
pub const LIGHT_CNN_TABLE: [&[usize]; 9] = [
    &[2, 4],
    &[4, 8],
    &[8, 16],
    &[16, 32],
    &[32, 64],
    &[64, 128],
    &[128, 256],
    &[8, 16, 32],
    &[16, 32, 32],
];

pub const CRNN_BASE: [usize; 3] = [16, 32, 32];
pub const CRNN_DENSE_UNITS: usize = 32;
pub const CRNN_LSTM_UNITS: usize = 32;
pub const CRNN_DROPOUT: f64 = 0.5;
pub const INPUT_CHANNELS: usize = 3;

impl LightCnnSpec {
    pub fn new(blocks: &[usize]) -> Result<Self> {
        Self::with_input_side(blocks, INPUT_SIDE)
    }

    /// Same block family on a square input of another side length, which must
    /// survive one halving per block.
    pub fn with_input_side(blocks: &[usize], input_side: usize) -> Result<Self> {
        if !(2..=3).contains(&blocks.len()) {
            return Err(Error::InvalidArgument(format!(
                "light CNNs have 2 or 3 blocks, got {}",
                blocks.len()
            )));
        }
        if blocks.contains(&0) {
            return Err(Error::InvalidArgument("filter counts must be positive".into()));
        }
        let factor = 1 << blocks.len();
        if input_side == 0 || !input_side.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "input side {input_side} is not divisible by {factor}"
            )));
        }
        Ok(Self {
            blocks: blocks.to_vec(),
            input_side,
        })
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn input_side(&self) -> usize {
        self.input_side
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.input_side, self.input_side, INPUT_CHANNELS]
    }

    /// Spatial side after the last pooling layer.
    pub fn feature_side(&self) -> usize {
        self.input_side >> self.blocks.len()
    }

    /// Length of the flattened last pooling output.
    pub fn feature_len(&self) -> usize {
        let side = self.feature_side();
        side * side * self.blocks.last().copied().unwrap_or(0)
    }

    /// `(in_channels, filters)` per conv layer.
    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        let mut c_in = INPUT_CHANNELS;
        self.blocks
            .iter()
            .map(|&f| {
                let shape = (c_in, f);
                c_in = f;
                shape
            })
            .collect()
    }

    pub fn conv_parameter_count(&self) -> usize {
        self.conv_shapes()
            .iter()
            .map(|&(c, f)| KERNEL * KERNEL * c * f + f)
            .sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.conv_parameter_count() + dense_params(self.feature_len(), NeedleState::COUNT)
    }

    pub fn arch_string(&self) -> String {
        self.blocks
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn table() -> Vec<LightCnnSpec> {
        LIGHT_CNN_TABLE
            .iter()
            .map(|b| LightCnnSpec::new(b).expect("table specs are valid"))
            .collect()
    }
}

impl fmt::Display for LightCnnSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.arch_string())
    }
}

impl FromStr for LightCnnSpec {
    type Err = Error;

    /// Parses dash-separated filter counts such as `16-32-32`; angle brackets
    /// are optional.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('<').trim_end_matches('>');
        let blocks = inner
            .split('-')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad architecture string {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        LightCnnSpec::new(&blocks)
    }
}

fn dense_params(n_in: usize, n_out: usize) -> usize {
    n_in * n_out + n_out
}

fn lstm_params(n_in: usize, units: usize) -> usize {
    4 * (n_in * units + units * units + units)
}

/// Frozen light-CNN conv stack + dense + LSTM + softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct CrnnSpec {
    pub base: LightCnnSpec,
    pub dense_units: usize,
    pub lstm_units: usize,
    pub time_steps: usize,
    pub dropout: f64,
    pub freeze_conv: bool,
}

impl CrnnSpec {
    /// The configuration built on the ⟨16-32-32⟩ base.
    pub fn new(time_steps: usize) -> Result<Self> {
        Self::on_base(LightCnnSpec::new(&CRNN_BASE)?, time_steps)
    }

    pub fn on_base(base: LightCnnSpec, time_steps: usize) -> Result<Self> {
        if time_steps == 0 {
            return Err(Error::InvalidArgument("time steps must be at least 1".into()));
        }
        Ok(Self {
            base,
            dense_units: CRNN_DENSE_UNITS,
            lstm_units: CRNN_LSTM_UNITS,
            time_steps,
            dropout: CRNN_DROPOUT,
            freeze_conv: true,
        })
    }

    pub fn head_parameter_count(&self) -> usize {
        dense_params(self.base.feature_len(), self.dense_units)
            + lstm_params(self.dense_units, self.lstm_units)
            + dense_params(self.lstm_units, NeedleState::COUNT)
    }

    pub fn parameter_count(&self) -> usize {
        self.base.conv_parameter_count() + self.head_parameter_count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    LightCnn(LightCnnSpec),
    Crnn(CrnnSpec),
}

/// Parameter totals; `frozen` is included in `total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterCount {
    pub total: usize,
    pub frozen: usize,
}

impl ParameterCount {
    pub fn trainable(&self) -> usize {
        self.total - self.frozen
    }
}

pub fn count_parameters(spec: &ModelSpec) -> ParameterCount {
    match spec {
        ModelSpec::LightCnn(s) => ParameterCount {
            total: s.parameter_count(),
            frozen: 0,
        },
        ModelSpec::Crnn(s) => ParameterCount {
            total: s.parameter_count(),
            frozen: if s.freeze_conv {
                s.base.conv_parameter_count()
            } else {
                0
            },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form count written out layer by layer, independent of the
    /// spec helpers.
    fn by_hand(blocks: &[usize]) -> usize {
        let mut total = 0;
        let mut c = 3;
        for &f in blocks {
            total += 3 * 3 * c * f + f;
            c = f;
        }
        let side = 112 / (1 << blocks.len());
        total + side * side * c * 3 + 3
    }

    #[test]
    fn table_counts() {
        let expected = [9_543, 19_227, 39_027, 80_355, 169_923, 376_707, 900_867, 24_851, 33_155];
        for (spec, want) in LightCnnSpec::table().iter().zip(expected) {
            assert_eq!(spec.parameter_count(), want, "{spec}");
            assert_eq!(by_hand(spec.blocks()), want);
        }
    }

    #[test]
    fn table_counts_round_to_reported_thousands() {
        let reported = [10, 19, 39, 80, 170, 377, 901, 25, 33];
        for (spec, k) in LightCnnSpec::table().iter().zip(reported) {
            let rounded = (spec.parameter_count() as f64 / 1000.0).round() as usize;
            assert_eq!(rounded, k, "{spec}");
        }
    }

    #[test]
    fn flatten_size_of_three_block_base() {
        let spec: LightCnnSpec = "16-32-32".parse().unwrap();
        assert_eq!(spec.feature_side(), 14);
        assert_eq!(spec.feature_len(), 6272);
    }

    #[test]
    fn crnn_count_is_independent_of_time_steps() {
        for t in 5..=40 {
            let spec = CrnnSpec::new(t).unwrap();
            let count = count_parameters(&ModelSpec::Crnn(spec));
            assert_eq!(count.total, 223_491);
            assert_eq!(count.frozen, 14_336);
            assert_eq!(count.trainable(), 200_736 + 8_320 + 99);
        }
    }

    #[test]
    fn rejects_block_counts_outside_family() {
        assert!(LightCnnSpec::new(&[16]).is_err());
        assert!(LightCnnSpec::new(&[16, 32, 32, 64]).is_err());
        assert!("16-x".parse::<LightCnnSpec>().is_err());
        assert!(LightCnnSpec::with_input_side(&[2, 4], 6).is_err());
    }

    #[test]
    fn parses_bracket_notation() {
        let spec: LightCnnSpec = "<8-16-32>".parse().unwrap();
        assert_eq!(spec.blocks(), &[8, 16, 32]);
        assert_eq!(spec.arch_string(), "8-16-32");
    }
}
