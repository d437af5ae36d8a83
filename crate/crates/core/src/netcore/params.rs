use rand::Rng as _;

use super::checkpoint::NamedTensors;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

pub(crate) const CONV1_W: usize = 0;
pub(crate) const CONV1_B: usize = 1;
pub(crate) const CONV2_W: usize = 2;
pub(crate) const CONV2_B: usize = 3;
pub(crate) const EST_W: usize = 4;
pub(crate) const EST_B: usize = 5;
pub(crate) const DISC_FG: usize = 6;
pub(crate) const DISC_BG: usize = 10;

/// Checkpoint names, in storage order.
pub const PARAM_NAMES: [&str; 14] = [
    "extractor.conv1.weight",
    "extractor.conv1.bias",
    "extractor.conv2.weight",
    "extractor.conv2.bias",
    "estimator.weight",
    "estimator.bias",
    "discriminator.fg.fc1.weight",
    "discriminator.fg.fc1.bias",
    "discriminator.fg.fc2.weight",
    "discriminator.fg.fc2.bias",
    "discriminator.bg.fc1.weight",
    "discriminator.bg.fc1.bias",
    "discriminator.bg.fc2.weight",
    "discriminator.bg.fc2.bias",
];

/// Initial estimator bias; softplus(-4) keeps the untrained density small.
const EST_BIAS_INIT: f64 = -4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Extractor,
    Estimator,
    Discriminator,
}

impl ParamGroup {
    pub fn of(idx: usize) -> ParamGroup {
        match idx {
            0..=3 => ParamGroup::Extractor,
            4 | 5 => ParamGroup::Estimator,
            _ => ParamGroup::Discriminator,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub channels: usize,
    pub disc_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 8,
            disc_hidden: 16,
        }
    }
}

impl ModelConfig {
    pub fn shapes(&self) -> [Vec<usize>; 14] {
        let (c, hd) = (self.channels, self.disc_hidden);
        let head = || [vec![hd, c, 1, 1], vec![hd], vec![1, hd, 1, 1], vec![1]];
        let [a, b, cc, d] = head();
        let [e, f, g, h] = head();
        [
            vec![c, 3, 3, 3],
            vec![c],
            vec![c, c, 3, 3],
            vec![c],
            vec![1, c, 1, 1],
            vec![1],
            a,
            b,
            cc,
            d,
            e,
            f,
            g,
            h,
        ]
    }
}

/// All network weights. Values are kept representable in f32 so checkpoints
/// reload bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

fn fan_in(shape: &[usize]) -> usize {
    shape[1..].iter().product()
}

impl ModelParams {
    /// Seeded He-uniform weights, zero biases except the estimator's.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let tensors = config
            .shapes()
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                let n: usize = shape.iter().product();
                let data = if shape.len() == 1 {
                    let v = if i == EST_B { EST_BIAS_INIT } else { 0.0 };
                    vec![v; n]
                } else {
                    let bound = (6.0 / fan_in(&shape) as f64).sqrt();
                    let mut r = rng::stream(seed, "init", i as u64);
                    (0..n).map(|_| r.random_range(-bound..bound)).collect()
                };
                Tensor::new(shape, data).expect("shape product")
            })
            .collect();
        let mut p = ModelParams { config, tensors };
        p.round_to_f32();
        p
    }

    /// Builds parameters from explicit tensors, checking shapes against `config`.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = config.shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::shape(shapes.len(), tensors.len()));
        }
        for (t, s) in tensors.iter().zip(&shapes) {
            if t.shape() != s.as_slice() {
                return Err(Error::shape(s, t.shape()));
            }
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite parameter".into()));
            }
        }
        let mut p = ModelParams { config, tensors };
        p.round_to_f32();
        Ok(p)
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    pub(crate) fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }

    pub fn to_named(&self) -> NamedTensors {
        NamedTensors {
            tensors: PARAM_NAMES
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    /// Inverse of [`ModelParams::to_named`]; channel counts are read off
    /// the tensor shapes.
    pub fn from_named(named: &NamedTensors) -> Result<Self> {
        let mut tensors = Vec::with_capacity(PARAM_NAMES.len());
        for name in PARAM_NAMES {
            let t = named
                .tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Format {
                    what: "checkpoint",
                    detail: format!("missing tensor {name}"),
                })?;
            tensors.push(t);
        }
        if named.tensors.len() != PARAM_NAMES.len() {
            return Err(Error::Format {
                what: "checkpoint",
                detail: format!("expected {} tensors, found {}", PARAM_NAMES.len(), named.tensors.len()),
            });
        }
        let (c_shape, h_shape) = (tensors[CONV1_W].shape(), tensors[DISC_FG].shape());
        if c_shape.len() != 4 || h_shape.len() != 4 {
            return Err(Error::Format {
                what: "checkpoint",
                detail: "weight tensors must be rank 4".into(),
            });
        }
        let config = ModelConfig {
            channels: c_shape[0],
            disc_hidden: h_shape[0],
        };
        ModelParams::from_tensors(config, tensors).map_err(|e| Error::Format {
            what: "checkpoint",
            detail: e.to_string(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_named().encode()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ModelParams::from_named(&NamedTensors::decode(bytes)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ModelParams::from_bytes(&bytes)
    }
}
