//! `FSRC` checkpoint container.
//!
//! ```text
//! "FSRC" | u32 version | u64 seed | u32 network count
//! per network:
//!   u32 kind | u32 n | n × u32 config | u32 tensor count
//!   per tensor: u32 rank | rank × u32 dims | prod(dims) × f64
//!   u32 has_optimizer
//!   if 1: u64 step | first moments (same shapes, no headers) | second moments
//! ```
//! Every integer and float is little-endian.

use std::fs;
use std::path::Path;

use super::discriminator::{
    FourierDiscriminator, FourierDiscriminatorConfig, SpatialDiscriminator,
    SpatialDiscriminatorConfig,
};
use super::generator::{Generator, GeneratorConfig};
use super::layers::Module;
use crate::error::{Error, Result};
use crate::tensor::ScaleFactor;

pub const MAGIC: &[u8; 4] = b"FSRC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkKind {
    Generator = 0,
    SpatialDiscriminator = 1,
    FourierDiscriminator = 2,
}

impl NetworkKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            0 => Ok(Self::Generator),
            1 => Ok(Self::SpatialDiscriminator),
            2 => Ok(Self::FourierDiscriminator),
            _ => Err(Error::MalformedHeader(format!("unknown network kind {v}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Adam moments for each tensor of a network, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerRecord {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRecord {
    pub kind: NetworkKind,
    pub config: Vec<u32>,
    pub tensors: Vec<TensorRecord>,
    pub optimizer: Option<OptimizerRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub networks: Vec<NetworkRecord>,
}

impl Checkpoint {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            networks: Vec::new(),
        }
    }

    pub fn network(&self, kind: NetworkKind) -> Option<&NetworkRecord> {
        self.networks.iter().find(|n| n.kind == kind)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u64(self.seed);
        w.u32(self.networks.len() as u32);
        for net in &self.networks {
            w.u32(net.kind as u32);
            w.u32(net.config.len() as u32);
            net.config.iter().for_each(|&v| w.u32(v));
            w.u32(net.tensors.len() as u32);
            for t in &net.tensors {
                w.u32(t.shape.len() as u32);
                t.shape.iter().for_each(|&d| w.u32(d as u32));
                t.data.iter().for_each(|&v| w.f64(v));
            }
            match &net.optimizer {
                None => w.u32(0),
                Some(opt) => {
                    w.u32(1);
                    w.u64(opt.step);
                    for m in opt.first.iter().chain(&opt.second) {
                        m.iter().for_each(|&v| w.f64(v));
                    }
                }
            }
        }
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::MalformedHeader("expected FSRC magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::MalformedHeader(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let seed = r.u64()?;
        let n_nets = r.u32()?;
        let mut networks = Vec::new();
        for _ in 0..n_nets {
            let kind = NetworkKind::from_u32(r.u32()?)?;
            let n_cfg = r.u32()? as usize;
            let config = (0..n_cfg).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n_tensors = r.u32()? as usize;
            let mut tensors = Vec::with_capacity(n_tensors);
            for _ in 0..n_tensors {
                let rank = r.u32()? as usize;
                let shape = (0..rank)
                    .map(|_| r.u32().map(|d| d as usize))
                    .collect::<Result<Vec<_>>>()?;
                let n: usize = shape.iter().product();
                tensors.push(TensorRecord {
                    data: r.f64s(n)?,
                    shape,
                });
            }
            let optimizer = match r.u32()? {
                0 => None,
                1 => {
                    let step = r.u64()?;
                    let moments = |r: &mut Reader| {
                        tensors
                            .iter()
                            .map(|t| r.f64s(t.data.len()))
                            .collect::<Result<Vec<_>>>()
                    };
                    let first = moments(&mut r)?;
                    let second = moments(&mut r)?;
                    Some(OptimizerRecord {
                        step,
                        first,
                        second,
                    })
                }
                v => {
                    return Err(Error::MalformedHeader(format!(
                        "bad optimizer flag {v}"
                    )))
                }
            };
            networks.push(NetworkRecord {
                kind,
                config,
                tensors,
                optimizer,
            });
        }
        Ok(Self { seed, networks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

/// Networks that can be written to and rebuilt from a [`NetworkRecord`].
pub trait Checkpointable: Module + Sized {
    const KIND: NetworkKind;

    fn config_block(&self) -> Vec<u32>;

    fn from_config_block(block: &[u32], seed: u64) -> Result<Self>;

    fn to_record(&self) -> NetworkRecord {
        NetworkRecord {
            kind: Self::KIND,
            config: self.config_block(),
            tensors: self
                .params()
                .iter()
                .map(|p| TensorRecord {
                    shape: p.shape.clone(),
                    data: p.value.clone(),
                })
                .collect(),
            optimizer: None,
        }
    }

    fn from_record(record: &NetworkRecord, seed: u64) -> Result<Self> {
        if record.kind != Self::KIND {
            return Err(Error::Config(format!(
                "record holds {:?}, expected {:?}",
                record.kind,
                Self::KIND
            )));
        }
        let mut net = Self::from_config_block(&record.config, seed)?;
        let mut params = net.params_mut();
        if params.len() != record.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} tensors, network has {}",
                record.tensors.len(),
                params.len()
            )));
        }
        for (p, t) in params.iter_mut().zip(&record.tensors) {
            if p.shape != t.shape {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {} shape {:?} vs checkpoint {:?}",
                    p.name, p.shape, t.shape
                )));
            }
            p.value.copy_from_slice(&t.data);
        }
        drop(params);
        Ok(net)
    }
}

fn config_error(what: &str, block: &[u32]) -> Error {
    Error::MalformedHeader(format!("bad {what} config block {block:?}"))
}

impl Checkpointable for Generator {
    const KIND: NetworkKind = NetworkKind::Generator;

    fn config_block(&self) -> Vec<u32> {
        let c = self.config();
        vec![
            c.channels as u32,
            c.base_channels as u32,
            c.num_blocks as u32,
            c.scale.get() as u32,
        ]
    }

    fn from_config_block(block: &[u32], seed: u64) -> Result<Self> {
        let [channels, base, blocks, scale] = block else {
            return Err(config_error("generator", block));
        };
        let config = GeneratorConfig {
            channels: *channels as usize,
            base_channels: *base as usize,
            num_blocks: *blocks as usize,
            scale: ScaleFactor::new(*scale as usize)?,
        };
        Generator::new(config, seed)
    }
}

impl Checkpointable for SpatialDiscriminator {
    const KIND: NetworkKind = NetworkKind::SpatialDiscriminator;

    fn config_block(&self) -> Vec<u32> {
        let c = self.config();
        let mut v = vec![
            c.channels as u32,
            c.height as u32,
            c.width as u32,
            c.widths.len() as u32,
        ];
        v.extend(c.widths.iter().map(|&w| w as u32));
        v
    }

    fn from_config_block(block: &[u32], seed: u64) -> Result<Self> {
        if block.len() < 4 || block.len() != 4 + block[3] as usize {
            return Err(config_error("spatial discriminator", block));
        }
        let config = SpatialDiscriminatorConfig {
            channels: block[0] as usize,
            height: block[1] as usize,
            width: block[2] as usize,
            widths: block[4..].iter().map(|&w| w as usize).collect(),
        };
        SpatialDiscriminator::new(config, seed)
    }
}

impl Checkpointable for FourierDiscriminator {
    const KIND: NetworkKind = NetworkKind::FourierDiscriminator;

    fn config_block(&self) -> Vec<u32> {
        let c = self.config();
        let mut v = vec![
            c.channels as u32,
            c.height as u32,
            c.width as u32,
            c.num_layers as u32,
        ];
        v.extend(c.hidden_widths.iter().map(|&w| w as u32));
        v
    }

    fn from_config_block(block: &[u32], seed: u64) -> Result<Self> {
        if block.len() < 4 || block.len() != 3 + block[3] as usize {
            return Err(config_error("Fourier discriminator", block));
        }
        let config = FourierDiscriminatorConfig {
            channels: block[0] as usize,
            height: block[1] as usize,
            width: block[2] as usize,
            num_layers: block[3] as usize,
            hidden_widths: block[4..].iter().map(|&w| w as usize).collect(),
        };
        FourierDiscriminator::new(config, seed)
    }
}
