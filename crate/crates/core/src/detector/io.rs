//! `ADM1` model files.
//!
//! Layout (little-endian): magic `ADM1`, u16 format version, u8 kind tag,
//! u32 layer-size count followed by u32 sizes, u8 hidden activation tag,
//! u32 layer count, then per layer: u8 activation tag, u32 rows, u32 cols,
//! `rows * cols` f64 weights in row-major order and `cols` f64 biases.
//! The file ends with a u8 threshold flag and, when set, the f64 threshold.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use super::{Activation, Architecture, DetectorKind, DetectorModel, Layer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ADM1";
pub const MODEL_FORMAT_VERSION: u16 = 1;

fn kind_tag(k: DetectorKind) -> u8 {
    match k {
        DetectorKind::Daef => 0,
        DetectorKind::ElmAe => 1,
    }
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Tanh => 0,
        Activation::Linear => 1,
    }
}

fn activation_from(tag: u8) -> Result<Activation> {
    match tag {
        0 => Ok(Activation::Tanh),
        1 => Ok(Activation::Linear),
        t => Err(Error::Format(format!("unknown activation tag {t}"))),
    }
}

pub fn write_model(model: &DetectorModel, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(MODEL_FORMAT_VERSION)?;
    w.write_u8(kind_tag(model.kind))?;
    let sizes = model.architecture.layer_sizes();
    w.write_u32::<LittleEndian>(sizes.len() as u32)?;
    for &s in sizes {
        w.write_u32::<LittleEndian>(s as u32)?;
    }
    w.write_u8(activation_tag(model.activation))?;
    w.write_u32::<LittleEndian>(model.layers.len() as u32)?;
    for layer in &model.layers {
        w.write_u8(activation_tag(layer.activation))?;
        let (rows, cols) = layer.weights.shape();
        w.write_u32::<LittleEndian>(rows as u32)?;
        w.write_u32::<LittleEndian>(cols as u32)?;
        for r in 0..rows {
            for c in 0..cols {
                w.write_f64::<LittleEndian>(layer.weights[(r, c)])?;
            }
        }
        for &b in layer.bias.iter() {
            w.write_f64::<LittleEndian>(b)?;
        }
    }
    match model.threshold {
        Some(mu) => {
            w.write_u8(1)?;
            w.write_f64::<LittleEndian>(mu)?;
        }
        None => w.write_u8(0)?,
    }
    Ok(())
}

pub fn save_model(model: &DetectorModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("truncated model file: {e}"))
}

pub fn read_model(r: &mut impl Read) -> Result<DetectorModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, not an ADM1 model file".into()));
    }
    let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "model format version {version} is not supported (expected {MODEL_FORMAT_VERSION})"
        )));
    }
    let kind = match r.read_u8().map_err(truncated)? {
        0 => DetectorKind::Daef,
        1 => DetectorKind::ElmAe,
        t => return Err(Error::Format(format!("unknown detector kind tag {t}"))),
    };
    let n_sizes = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    if n_sizes > 1024 {
        return Err(Error::Format(format!("implausible layer count {n_sizes}")));
    }
    let sizes = (0..n_sizes)
        .map(|_| {
            r.read_u32::<LittleEndian>()
                .map(|v| v as usize)
                .map_err(truncated)
        })
        .collect::<Result<Vec<_>>>()?;
    let architecture = Architecture::new(sizes).map_err(|e| Error::Format(e.to_string()))?;
    let activation = activation_from(r.read_u8().map_err(truncated)?)?;
    let n_layers = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    if n_layers > 1024 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let act = activation_from(r.read_u8().map_err(truncated)?)?;
        let rows = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let cols = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut data = vec![0.0; rows * cols];
        r.read_f64_into::<LittleEndian>(&mut data)
            .map_err(truncated)?;
        let mut bias = vec![0.0; cols];
        r.read_f64_into::<LittleEndian>(&mut bias)
            .map_err(truncated)?;
        layers.push(Layer {
            weights: DMatrix::from_row_slice(rows, cols, &data),
            bias: DVector::from_vec(bias),
            activation: act,
        });
    }
    let threshold = match r.read_u8().map_err(truncated)? {
        0 => None,
        1 => Some(r.read_f64::<LittleEndian>().map_err(truncated)?),
        t => return Err(Error::Format(format!("bad threshold flag {t}"))),
    };
    let model = DetectorModel {
        kind,
        architecture,
        activation,
        layers,
        threshold,
    };
    model.validate()?;
    Ok(model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DetectorModel> {
    let mut r = BufReader::new(File::open(path)?);
    read_model(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{train_daef, DaefConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> DetectorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = DMatrix::from_fn(30, 6, |_, _| rng.random_range(-1.0..1.0));
        let cfg = DaefConfig {
            architecture: Architecture::new(vec![6, 3, 4, 6]).unwrap(),
            lambda_hid: 0.1,
            lambda_last: 0.1,
            seed: 1,
        };
        train_daef(&x, &cfg).unwrap()
    }

    fn round_trip(m: &DetectorModel) -> DetectorModel {
        let mut buf = Vec::new();
        write_model(m, &mut buf).unwrap();
        read_model(&mut &buf[..]).unwrap()
    }

    #[test]
    fn round_trip_preserves_forward_pass() {
        let m = model().with_threshold(0.37);
        let back = round_trip(&m);
        assert_eq!(back, m);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let probes = DMatrix::from_fn(5, 6, |_, _| rng.random_range(-2.0..2.0));
        let a = m.score_batch(&probes).unwrap();
        let b = back.score_batch(&probes).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.threshold, Some(0.37));
    }

    #[test]
    fn threshold_stays_absent() {
        let m = model();
        assert_eq!(round_trip(&m).threshold, None);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut buf = Vec::new();
        write_model(&model(), &mut buf).unwrap();
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(matches!(read_model(&mut &wrong[..]), Err(Error::Format(_))));
        let mut future = buf.clone();
        future[4] = 2;
        match read_model(&mut &future[..]) {
            Err(Error::Format(msg)) => assert!(msg.contains("version")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_model(&mut &buf[..buf.len() - 4]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let m = model().with_threshold(1.5);
        save_model(&m, f.path()).unwrap();
        assert_eq!(load_model(f.path()).unwrap(), m);
    }
}
