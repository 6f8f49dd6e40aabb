//! Light CNNs, the CRNN, parameter counting and checkpoint files.

mod checkpoint;
mod crnn;
mod light_cnn;
mod spec;

pub use checkpoint::{Checkpoint, CheckpointMeta, Model, EXTENSION, FORMAT_VERSION};
pub use crnn::{Crnn, CrnnGrads, CrnnTrace};
pub use light_cnn::{ConvStack, ConvStackTrace, LightCnn, LightCnnTrace};
pub use spec::{
    count_parameters, CrnnSpec, LightCnnSpec, ModelSpec, ParameterCount, CRNN_BASE, CRNN_DENSE_UNITS,
    CRNN_DROPOUT, CRNN_LSTM_UNITS, INPUT_CHANNELS, LIGHT_CNN_TABLE,
};
