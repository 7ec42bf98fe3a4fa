//! Binary network checkpoints.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! "NSRM"                  4 bytes magic
//! version                 u32 (= 1)
//! in_channels             u32
//! layer_count             u32
//! layer_count times:
//!   tag                   u8  (0 = conv, 1 = maxpool)
//!   conv only:
//!     out_channels        u32
//!     kernel              u32
//!     activation          u8  (0 = linear, 1 = leaky)
//! value_count             u64
//! value_count times       f32, per conv: weight (out, in, k, k) row-major, then bias
//! ```

use std::io::{Read, Write};

use super::network::{Activation, Layer, NetSpec, Network, Params};
use super::tensor::Real;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NSRM";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<T: Real, W: Write>(net: &Network<T>, mut w: W) -> Result<()> {
    let spec = net.spec();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(spec.in_channels as u32).to_le_bytes())?;
    w.write_all(&(spec.layers.len() as u32).to_le_bytes())?;
    for layer in &spec.layers {
        match *layer {
            Layer::Conv {
                out_channels,
                kernel,
                activation,
            } => {
                w.write_all(&[0])?;
                w.write_all(&(out_channels as u32).to_le_bytes())?;
                w.write_all(&(kernel as u32).to_le_bytes())?;
                w.write_all(&[match activation {
                    Activation::Linear => 0,
                    Activation::Leaky => 1,
                }])?;
            }
            Layer::MaxPool => w.write_all(&[1])?,
        }
    }
    w.write_all(&(net.params().len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(net.params().len() * 4);
    for t in net.params().tensors() {
        for v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn checkpoint_bytes<T: Real>(net: &Network<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<Network<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let in_channels = read_u32(&mut r)? as usize;
    let layer_count = read_u32(&mut r)? as usize;
    if layer_count > 4096 {
        return Err(Error::Format(format!("implausible layer count {layer_count}")));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        match read_u8(&mut r)? {
            0 => {
                let out_channels = read_u32(&mut r)? as usize;
                let kernel = read_u32(&mut r)? as usize;
                let activation = match read_u8(&mut r)? {
                    0 => Activation::Linear,
                    1 => Activation::Leaky,
                    a => return Err(Error::Format(format!("unknown activation tag {a}"))),
                };
                layers.push(Layer::Conv {
                    out_channels,
                    kernel,
                    activation,
                });
            }
            1 => layers.push(Layer::MaxPool),
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        }
    }
    let spec = NetSpec {
        in_channels,
        layers,
    };
    spec.validate()?;
    let mut count = [0u8; 8];
    r.read_exact(&mut count)?;
    let count = u64::from_le_bytes(count) as usize;
    if count != spec.parameter_count() {
        return Err(Error::Consistency(format!(
            "checkpoint holds {count} values, spec needs {}",
            spec.parameter_count()
        )));
    }
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw)?;
    let mut values = raw
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64));
    let mut params = Params::zeros(&spec);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = values.next().expect("count checked above");
        }
    }
    Network::new(spec, params)
}
