//! Binary checkpoint format.
//!
//! ```text
//! "ODNN" | u16 version | u32 layer_count | layer*
//! input norm:  u8 3 | u32 dim | f64[dim] shift | f64[dim] scale
//! dense layer: u8 1 | u32 out_dim | u32 in_dim | f64[out*in] weights | f64[out] bias
//! batch norm:  u8 2 | u32 dim | f64 eps | f64 momentum
//!              | f64[dim] gamma | f64[dim] beta | f64[dim] running_mean | f64[dim] running_var
//! ```
//!
//! All integers and reals are little-endian; matrices are row-major. The
//! first four layers are the discriminator (input norm, FC6, FC7, FC8); an
//! optional generator follows as FC1, BN1, FC2, BN2.

use std::io::{Read, Write};
use std::path::Path;

use super::layers::{BatchNormLayer, DenseLayer};
use super::networks::{Discriminator, Generator, InputNorm};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ODNN";
pub const CHECKPOINT_VERSION: u16 = 1;

const KIND_DENSE: u8 = 1;
const KIND_BATCHNORM: u8 = 2;
const KIND_INPUT_NORM: u8 = 3;
const DISC_LAYERS: u32 = 4;
const GAN_LAYERS: u32 = 8;

/// Trained networks as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub discriminator: Discriminator,
    pub generator: Option<Generator>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(self, &mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let ckpt = read_checkpoint(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                cursor.len()
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let d = &ckpt.discriminator;
    let count = if ckpt.generator.is_some() { GAN_LAYERS } else { DISC_LAYERS };
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&[KIND_INPUT_NORM])?;
    w.write_all(&(d.input_norm.dim() as u32).to_le_bytes())?;
    write_f64s(&mut w, d.input_norm.shift())?;
    write_f64s(&mut w, d.input_norm.scale())?;
    for layer in [&d.fc6, &d.fc7, &d.fc8] {
        write_dense(&mut w, layer)?;
    }
    if let Some(g) = &ckpt.generator {
        write_dense(&mut w, &g.fc1)?;
        write_batchnorm(&mut w, &g.bn1)?;
        write_dense(&mut w, &g.fc2)?;
        write_batchnorm(&mut w, &g.bn2)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not an ODNN checkpoint".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)?;
    if count != DISC_LAYERS && count != GAN_LAYERS {
        return Err(Error::Format(format!("unexpected layer count {count}")));
    }
    let norm = read_input_norm(&mut r)?;
    let fc6 = read_dense(&mut r, "fc6")?;
    let fc7 = read_dense(&mut r, "fc7")?;
    let fc8 = read_dense(&mut r, "fc8")?;
    let discriminator = Discriminator::from_layers(fc6, fc7, fc8)?.with_input_norm(norm)?;
    let generator = if count == GAN_LAYERS {
        let fc1 = read_dense(&mut r, "fc1")?;
        let bn1 = read_batchnorm(&mut r, "bn1")?;
        let fc2 = read_dense(&mut r, "fc2")?;
        let bn2 = read_batchnorm(&mut r, "bn2")?;
        Some(Generator::from_layers(fc1, bn1, fc2, bn2)?)
    } else {
        None
    };
    Ok(Checkpoint {
        discriminator,
        generator,
    })
}

fn write_dense<W: Write>(w: &mut W, layer: &DenseLayer) -> Result<()> {
    w.write_all(&[KIND_DENSE])?;
    w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
    w.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
    write_f64s(w, layer.weights())?;
    write_f64s(w, layer.bias())
}

fn write_batchnorm<W: Write>(w: &mut W, layer: &BatchNormLayer) -> Result<()> {
    w.write_all(&[KIND_BATCHNORM])?;
    w.write_all(&(layer.dim() as u32).to_le_bytes())?;
    w.write_all(&layer.eps.to_le_bytes())?;
    w.write_all(&layer.momentum.to_le_bytes())?;
    write_f64s(w, &layer.gamma)?;
    write_f64s(w, &layer.beta)?;
    write_f64s(w, &layer.running_mean)?;
    write_f64s(w, &layer.running_var)
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_input_norm<R: Read>(r: &mut R) -> Result<InputNorm> {
    let [kind] = read_array::<R, 1>(r)?;
    if kind != KIND_INPUT_NORM {
        return Err(Error::Format(format!("input norm: expected layer kind {KIND_INPUT_NORM}, found {kind}")));
    }
    let dim = read_u32(r)? as usize;
    let shift = read_f64s(r, dim)?;
    let scale = read_f64s(r, dim)?;
    InputNorm::from_parts(shift, scale).map_err(|e| Error::Format(format!("input norm: {e}")))
}

fn read_dense<R: Read>(r: &mut R, name: &str) -> Result<DenseLayer> {
    expect_kind(r, KIND_DENSE, name)?;
    let out = read_u32(r)? as usize;
    let inp = read_u32(r)? as usize;
    let weights = read_f64s(r, out * inp)?;
    let bias = read_f64s(r, out)?;
    DenseLayer::from_parts(name, inp, out, weights, bias)
}

fn read_batchnorm<R: Read>(r: &mut R, name: &str) -> Result<BatchNormLayer> {
    expect_kind(r, KIND_BATCHNORM, name)?;
    let dim = read_u32(r)? as usize;
    let eps = f64::from_le_bytes(read_array(r)?);
    let momentum = f64::from_le_bytes(read_array(r)?);
    let gamma = read_f64s(r, dim)?;
    let beta = read_f64s(r, dim)?;
    let mean = read_f64s(r, dim)?;
    let var = read_f64s(r, dim)?;
    BatchNormLayer::from_parts(name, gamma, beta, mean, var, eps, momentum)
}

fn expect_kind<R: Read>(r: &mut R, kind: u8, name: &str) -> Result<()> {
    let [k] = read_array::<R, 1>(r)?;
    if k != kind {
        return Err(Error::Format(format!("{name}: expected layer kind {kind}, found {k}")));
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| Ok(f64::from_le_bytes(read_array(r)?))).collect()
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated checkpoint".into()),
        _ => Error::Io(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Parameterized;
    use crate::types::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn models(seed: u64) -> Checkpoint {
        let mut cfg = ModelConfig::new(4, 6, 5);
        cfg.noise_dim = 3;
        cfg.gen_hidden_dim = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = InputNorm::from_parts(vec![0.5, -1.0, 0.0, 2.0, 0.1, 0.3], vec![1.0, 2.0, 0.5, 3.0, 1.0, 0.25]).unwrap();
        let discriminator = Discriminator::new(&cfg, &mut rng).with_input_norm(norm).unwrap();
        let mut generator = Generator::new(&cfg, &mut rng);
        generator.bn1.running_var[1] = 0.123456789;
        Checkpoint {
            discriminator,
            generator: Some(generator),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = models(11);
        let bytes = ckpt.to_bytes();
        assert_eq!(&bytes[..4], b"ODNN");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), CHECKPOINT_VERSION);
        let mut back = Checkpoint::from_bytes(&bytes).unwrap();
        let mut orig = ckpt.clone();
        let a: Vec<u64> = orig.discriminator.param_vector().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.discriminator.param_vector().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn discriminator_only_checkpoint() {
        let mut ckpt = models(2);
        ckpt.generator = None;
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert!(back.generator.is_none());
        assert_eq!(back, ckpt);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = models(3).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(Checkpoint::from_bytes(&bad_version).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
