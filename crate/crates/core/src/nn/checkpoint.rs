//! Binary checkpoint container for one or more named networks.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "GFBSDENN"
//! version      u32      FORMAT_VERSION
//! count        u32      number of networks
//! per network:
//!   name_len   u32, name utf-8 bytes
//!   input_dim  u32
//!   hidden     u32 count, then u32 widths
//!   output_dim u32
//!   activation u8, output_activation u8
//!   param_ver  u64
//!   per layer: weight (fan_out x fan_in, row-major f64), bias (fan_out f64)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, Mlp, MlpSpec};

pub const MAGIC: &[u8; 8] = b"GFBSDENN";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_networks<W: Write>(mut w: W, nets: &[(&str, &Mlp)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(nets.len() as u32).to_le_bytes())?;
    for (name, net) in nets {
        let spec = net.spec();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(spec.input_dim as u32).to_le_bytes())?;
        w.write_all(&(spec.hidden_widths.len() as u32).to_le_bytes())?;
        for &h in &spec.hidden_widths {
            w.write_all(&(h as u32).to_le_bytes())?;
        }
        w.write_all(&(spec.output_dim as u32).to_le_bytes())?;
        w.write_all(&[spec.activation.code(), spec.output_activation.code()])?;
        w.write_all(&net.version().to_le_bytes())?;
        for layer in net.layers() {
            for v in layer.weight.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in layer.bias.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_networks<R: Read>(mut r: R) -> Result<Vec<(String, Mlp)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not utf-8".into()))?;
        let input_dim = read_u32(&mut r)? as usize;
        let n_hidden = read_u32(&mut r)? as usize;
        let hidden_widths = (0..n_hidden)
            .map(|_| read_u32(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let output_dim = read_u32(&mut r)? as usize;
        let mut acts = [0u8; 2];
        r.read_exact(&mut acts)?;
        let decode = |c| {
            Activation::from_code(c)
                .ok_or_else(|| Error::Checkpoint(format!("unknown activation code {c}")))
        };
        let spec = MlpSpec {
            input_dim,
            hidden_widths,
            output_dim,
            activation: decode(acts[0])?,
            output_activation: decode(acts[1])?,
        };
        spec.validate()
            .map_err(|e| Error::Checkpoint(format!("invalid network spec: {e}")))?;
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let param_version = u64::from_le_bytes(buf);
        let mut layers = Vec::new();
        for (fan_in, fan_out) in spec.layer_dims() {
            let w = read_f64s(&mut r, fan_in * fan_out)?;
            let b = read_f64s(&mut r, fan_out)?;
            layers.push(Layer {
                weight: Array2::from_shape_vec((fan_out, fan_in), w)
                    .expect("length matches shape"),
                bias: Array1::from(b),
            });
        }
        let mut net = Mlp::from_layers(spec, layers)?;
        net.set_version(param_version);
        out.push((name, net));
    }
    Ok(out)
}

pub fn save_networks(path: impl AsRef<Path>, nets: &[(&str, &Mlp)]) -> Result<()> {
    let file = File::create(path)?;
    write_networks(BufWriter::new(file), nets)
}

pub fn load_networks(path: impl AsRef<Path>) -> Result<Vec<(String, Mlp)>> {
    let file = File::open(path)?;
    read_networks(BufReader::new(file))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    (0..n)
        .map(|_| {
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        })
        .collect()
}
