//! `.nsnet` checkpoint files.
//!
//! A checkpoint is a UTF-8 header of `key = value` lines and `array` lines,
//! closed by a line reading `end`, followed by the parameter arrays as
//! little-endian `f32` values in the declared order:
//!
//! ```text
//! NSNET
//! version = 1
//! model = crnn
//! arch = 16-32-32
//! ...
//! array conv0.weight 3x3x3x16
//! ...
//! payload_bytes = 894964
//! end
//! <payload>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::crnn::Crnn;
use super::light_cnn::{ConvStack, LightCnn};
use super::spec::{CrnnSpec, LightCnnSpec, ModelSpec};
use crate::data::MEAN_RGB;
use crate::error::{CheckpointError, Error, Result};
use crate::layers::{Conv2d, Dense, Lstm};
use crate::tensor::Tensor;

pub const EXTENSION: &str = "nsnet";
pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "NSNET";

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    LightCnn(LightCnn<f32>),
    Crnn(Crnn<f32>),
}

impl Model {
    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::LightCnn(m) => ModelSpec::LightCnn(m.spec().clone()),
            Model::Crnn(m) => ModelSpec::Crnn(m.spec().clone()),
        }
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor<f32>)> {
        match self {
            Model::LightCnn(m) => m.parameters(),
            Model::Crnn(m) => m.parameters(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::LightCnn(_) => "light-cnn",
            Model::Crnn(_) => "crnn",
        }
    }
}

/// Training provenance stored next to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: Option<usize>,
    pub val_acc: Option<f64>,
    pub seed: u64,
    pub mean_rgb: [f32; 3],
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        Self {
            epoch: None,
            val_acc: None,
            seed: 0,
            mean_rgb: MEAN_RGB,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

fn shape_string(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn corrupt(msg: impl Into<String>) -> Error {
    CheckpointError::Corrupt(msg.into()).into()
}

fn mismatch(msg: impl Into<String>) -> Error {
    CheckpointError::SpecMismatch(msg.into()).into()
}

impl Checkpoint {
    pub fn new(model: Model, meta: CheckpointMeta) -> Self {
        Self { model, meta }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC}\nversion = {FORMAT_VERSION}\nmodel = {}\n", self.model.kind());
        let base = match &self.model {
            Model::LightCnn(m) => m.spec().clone(),
            Model::Crnn(m) => m.spec().base.clone(),
        };
        header += &format!("arch = {}\ninput_side = {}\n", base.arch_string(), base.input_side());
        if let Model::Crnn(m) = &self.model {
            let s = m.spec();
            header += &format!(
                "time_steps = {}\ndense_units = {}\nlstm_units = {}\ndropout = {:?}\nfrozen_conv = {}\n",
                s.time_steps, s.dense_units, s.lstm_units, s.dropout, s.freeze_conv
            );
        }
        if let Some(e) = self.meta.epoch {
            header += &format!("epoch = {e}\n");
        }
        if let Some(v) = self.meta.val_acc {
            header += &format!("val_acc = {v:?}\n");
        }
        let [r, g, b] = self.meta.mean_rgb;
        header += &format!("seed = {}\nmean_rgb = {r:?},{g:?},{b:?}\nendianness = little\ndtype = f32\n", self.meta.seed);
        let params = self.model.parameters();
        let mut payload = Vec::new();
        for (name, t) in &params {
            header += &format!("array {name} {}\n", shape_string(t.shape()));
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        header += &format!("payload_bytes = {}\nend\n", payload.len());
        let mut out = header.into_bytes();
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = split_header(bytes)?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(corrupt("missing NSNET magic line"));
        }
        let mut keys = BTreeMap::new();
        let mut arrays = Vec::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix("array ") {
                let (name, shape) = rest
                    .split_once(' ')
                    .ok_or_else(|| corrupt(format!("bad array line {line:?}")))?;
                let shape = shape
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| corrupt(format!("bad array shape {shape:?}")))?;
                arrays.push((name.to_string(), shape));
            } else if let Some((k, v)) = line.split_once('=') {
                keys.insert(k.trim().to_string(), v.trim().to_string());
            } else if !line.trim().is_empty() {
                return Err(corrupt(format!("unrecognized header line {line:?}")));
            }
        }
        let get = |k: &str| keys.get(k).map(String::as_str).ok_or_else(|| corrupt(format!("missing header key {k:?}")));
        fn num<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
            v.parse().map_err(|_| corrupt(format!("bad value {v:?} for {k}")))
        }

        let version: u32 = num("version", get("version")?)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            }
            .into());
        }
        if get("endianness")? != "little" || get("dtype")? != "f32" {
            return Err(corrupt("only little-endian f32 payloads are supported"));
        }
        let declared: usize = num("payload_bytes", get("payload_bytes")?)?;
        if payload.len() != declared {
            return Err(corrupt(format!(
                "payload has {} bytes, header declares {declared}",
                payload.len()
            )));
        }
        let expected_bytes: usize = arrays.iter().map(|(_, s)| s.iter().product::<usize>() * 4).sum();
        if expected_bytes != declared {
            return Err(corrupt("array shapes disagree with payload size"));
        }

        let blocks: Vec<usize> = get("arch")?
            .split('-')
            .map(|b| num("arch", b))
            .collect::<Result<_>>()?;
        let base = LightCnnSpec::with_input_side(&blocks, num("input_side", get("input_side")?)?)
            .map_err(|e| mismatch(e.to_string()))?;
        let spec = match get("model")? {
            "light-cnn" => ModelSpec::LightCnn(base),
            "crnn" => ModelSpec::Crnn(CrnnSpec {
                base,
                time_steps: num("time_steps", get("time_steps")?)?,
                dense_units: num("dense_units", get("dense_units")?)?,
                lstm_units: num("lstm_units", get("lstm_units")?)?,
                dropout: num("dropout", get("dropout")?)?,
                freeze_conv: num("frozen_conv", get("frozen_conv")?)?,
            }),
            other => return Err(mismatch(format!("unknown model kind {other:?}"))),
        };

        let mut tensors = Vec::with_capacity(arrays.len());
        let mut offset = 0;
        for (name, shape) in &arrays {
            let len: usize = shape.iter().product();
            let data = payload[offset..offset + 4 * len]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            offset += 4 * len;
            tensors.push((name.clone(), Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))?));
        }

        let model = build_model(&spec, tensors)?;
        let mean: Vec<f32> = get("mean_rgb")?
            .split(',')
            .map(|v| num("mean_rgb", v))
            .collect::<Result<_>>()?;
        let mean_rgb: [f32; 3] = mean.try_into().map_err(|_| corrupt("mean_rgb needs three values"))?;
        let meta = CheckpointMeta {
            epoch: keys.get("epoch").map(|v| num("epoch", v)).transpose()?,
            val_acc: keys.get("val_acc").map(|v| num("val_acc", v)).transpose()?,
            seed: num("seed", get("seed")?)?,
            mean_rgb,
        };
        Ok(Checkpoint { model, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn into_light_cnn(self) -> Result<(LightCnn<f32>, CheckpointMeta)> {
        match self.model {
            Model::LightCnn(m) => Ok((m, self.meta)),
            Model::Crnn(_) => Err(mismatch("expected a light CNN checkpoint, found a CRNN")),
        }
    }

    pub fn into_crnn(self) -> Result<(Crnn<f32>, CheckpointMeta)> {
        match self.model {
            Model::Crnn(m) => Ok((m, self.meta)),
            Model::LightCnn(_) => Err(mismatch("expected a CRNN checkpoint, found a light CNN")),
        }
    }
}

fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    const END: &[u8] = b"\nend\n";
    let pos = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| corrupt("header terminator not found (truncated file?)"))?;
    let header = std::str::from_utf8(&bytes[..pos]).map_err(|_| corrupt("header is not UTF-8"))?;
    Ok((header, &bytes[pos + END.len()..]))
}

/// Assembles a model from named arrays, checking names and shapes against
/// the spec.
fn build_model(spec: &ModelSpec, tensors: Vec<(String, Tensor<f32>)>) -> Result<Model> {
    let mut it = tensors.into_iter();
    let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
        let (found, t) = it.next().ok_or_else(|| mismatch(format!("missing array {name}")))?;
        if found != name || t.shape() != shape {
            return Err(mismatch(format!(
                "expected array {name} {shape:?}, found {found} {:?}",
                t.shape()
            )));
        }
        Ok(t)
    };
    let base = match spec {
        ModelSpec::LightCnn(s) => s,
        ModelSpec::Crnn(s) => &s.base,
    };
    let mut convs = Vec::new();
    for (i, (c, f)) in base.conv_shapes().into_iter().enumerate() {
        let w = take(&format!("conv{i}.weight"), &[3, 3, c, f])?;
        let b = take(&format!("conv{i}.bias"), &[f])?;
        convs.push(Conv2d::from_parts(w, b)?);
    }
    let convs = ConvStack::from_layers(base, convs)?;
    let model = match spec {
        ModelSpec::LightCnn(s) => {
            let w = take("head.weight", &[s.feature_len(), 3])?;
            let b = take("head.bias", &[3])?;
            Model::LightCnn(LightCnn::from_parts(convs, Dense::from_parts(w, b)?)?)
        }
        ModelSpec::Crnn(s) => {
            let (n_f, d, u) = (s.base.feature_len(), s.dense_units, s.lstm_units);
            let fc = Dense::from_parts(take("fc.weight", &[n_f, d])?, take("fc.bias", &[d])?)?;
            let lstm = Lstm::from_parts(
                take("lstm.input_kernel", &[d, 4 * u])?,
                take("lstm.recurrent_kernel", &[u, 4 * u])?,
                take("lstm.bias", &[4 * u])?,
            )?;
            let out = Dense::from_parts(take("out.weight", &[u, 3])?, take("out.bias", &[3])?)?;
            Model::Crnn(Crnn::from_parts(s.clone(), convs, fc, lstm, out)?)
        }
    };
    if it.next().is_some() {
        return Err(mismatch("checkpoint has extra arrays"));
    }
    Ok(model)
}
