//! Binary model checkpoints.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FMLC"
//! 4       2     format version (u16, currently 1)
//! 6       2     layer count L (u16)
//! then L times:
//!         4     out_dim (u32)
//!         4     in_dim (u32)
//!         8*out_dim*in_dim   weights, row-major f64
//!         8*out_dim          bias, f64
//! ```
//!
//! Activations are not stored; the reader supplies the hidden-layer activation.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::model::{Activation, LayerParams, Matrix, ModelParams, ModelSpec};

pub const MAGIC: &[u8; 4] = b"FMLC";
pub const VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(model: &ModelParams, mut out: W) -> Result<()> {
    let layers = u16::try_from(model.num_layers()).map_err(|_| Error::Checkpoint("more than 65535 layers".into()))?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&layers.to_le_bytes())?;
    for layer in model.layers() {
        let dim = |d: usize| u32::try_from(d).map_err(|_| Error::Checkpoint("dimension exceeds u32".into()));
        out.write_all(&dim(layer.out_dim())?.to_le_bytes())?;
        out.write_all(&dim(layer.in_dim())?.to_le_bytes())?;
        for v in layer.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn checkpoint_bytes(model: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + model.num_layers() * 8 + model.num_params() * 8);
    write_checkpoint(model, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(buf)
}

fn read_reals<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| read_array::<8, _>(input).map(f64::from_le_bytes))
        .collect()
}

pub fn read_checkpoint<R: Read>(mut input: R, hidden_activation: Activation) -> Result<ModelParams> {
    if &read_array::<4, _>(&mut input)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut input)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u16::from_le_bytes(read_array(&mut input)?) as usize;
    if count == 0 {
        return Err(Error::Checkpoint("zero layers".into()));
    }
    let mut dims = Vec::with_capacity(count);
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let out_dim = u32::from_le_bytes(read_array(&mut input)?) as usize;
        let in_dim = u32::from_le_bytes(read_array(&mut input)?) as usize;
        let weights = Matrix::from_vec(out_dim, in_dim, read_reals(&mut input, out_dim * in_dim)?)?;
        let bias = read_reals(&mut input, out_dim)?;
        dims.push((in_dim, out_dim));
        layers.push(LayerParams { weights, bias });
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last layer".into()));
    }
    let spec = ModelSpec::new(dims, vec![hidden_activation; count - 1])?;
    ModelParams::from_layers(spec, layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn header_layout() {
        let spec = ModelSpec::mlp(2, &[3], 2, Activation::Tanh).unwrap();
        let m = ModelParams::init(&spec, &mut rng_from(1));
        let bytes = checkpoint_bytes(&m);
        assert_eq!(&bytes[..4], b"FMLC");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..8], &[2, 0]);
        assert_eq!(&bytes[8..12], &[3, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[2, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &m.layers()[0].weights.get(0, 0).to_le_bytes());
        assert_eq!(bytes.len(), 8 + 2 * 8 + m.num_params() * 8);
    }

    #[test]
    fn round_trip_and_corruption() {
        let spec = ModelSpec::mlp(4, &[5, 3], 2, Activation::Relu).unwrap();
        let m = ModelParams::init(&spec, &mut rng_from(2));
        let bytes = checkpoint_bytes(&m);
        assert_eq!(read_checkpoint(&bytes[..], Activation::Relu).unwrap(), m);
        assert!(read_checkpoint(&bytes[..bytes.len() - 1], Activation::Relu).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra[..], Activation::Relu).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..], Activation::Relu).is_err());
    }
}
