//! `HGW1` weight checkpoints.
//!
//! Layout (all integers little-endian `u32`):
//! magic `HGW1`, layer count, then per layer: name length, name bytes
//! (UTF-8), tensor count, then per tensor: rank, extents, and the values as
//! little-endian `f32` in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::binio::{expect_magic, read_f32s, read_u32, to_u32, write_f32s, write_u32};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HGW1";

/// Parameter tensors of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensors {
    pub name: String,
    pub tensors: Vec<Tensor<f32>>,
}

pub fn write_checkpoint<W: Write>(w: &mut W, layers: &[NamedTensors]) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, to_u32(layers.len(), "layer count")?)?;
    for layer in layers {
        write_u32(w, to_u32(layer.name.len(), "name length")?)?;
        w.write_all(layer.name.as_bytes())?;
        write_u32(w, to_u32(layer.tensors.len(), "tensor count")?)?;
        for t in &layer.tensors {
            write_u32(w, to_u32(t.rank(), "rank")?)?;
            for &e in t.shape() {
                write_u32(w, to_u32(e, "extent")?)?;
            }
            write_f32s(w, t.data())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Vec<NamedTensors>> {
    expect_magic(r, MAGIC)?;
    let layer_count = read_u32(r)? as usize;
    let mut layers = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Format("layer name is not UTF-8".into()))?;
        let tensor_count = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(tensor_count.min(64));
        for _ in 0..tensor_count {
            let rank = read_u32(r)? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::Format(format!("implausible tensor rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| read_u32(r).map(|e| e as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| Error::Format(format!("tensor shape {shape:?} overflows")))?;
            let values = read_f32s(r, n)?;
            tensors.push(Tensor::new(shape, values).map_err(|e| Error::Format(e.to_string()))?);
        }
        layers.push(NamedTensors { name, tensors });
    }
    Ok(layers)
}

pub fn save_checkpoint(path: impl AsRef<Path>, layers: &[NamedTensors]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, layers)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<NamedTensors>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{init_gaussian, RngState};
    use proptest::prelude::*;

    fn layers_from(seed: u64, shapes: &[Vec<usize>]) -> Vec<NamedTensors> {
        let mut rng = RngState::new(seed);
        shapes
            .iter()
            .enumerate()
            .map(|(i, s)| NamedTensors {
                name: format!("layer{i}"),
                tensors: vec![
                    init_gaussian(&mut rng, s.clone(), 0.0, 1.0).unwrap(),
                    init_gaussian(&mut rng, vec![s[0]], 0.0, 1.0).unwrap(),
                ],
            })
            .collect()
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..5), 0..4)) {
            let layers = layers_from(seed, &shapes);
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &layers).unwrap();
            let back = read_checkpoint(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), layers.len());
            for (a, b) in back.iter().zip(&layers) {
                prop_assert_eq!(&a.name, &b.name);
                for (x, y) in a.tensors.iter().zip(&b.tensors) {
                    prop_assert_eq!(x.shape(), y.shape());
                    let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
                    let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
                    prop_assert_eq!(xb, yb);
                }
            }
        }
    }

    #[test]
    fn header_bytes() {
        let layers = vec![NamedTensors {
            name: "fc".into(),
            tensors: vec![Tensor::new(vec![1], vec![1.5f32]).unwrap()],
        }];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &layers).unwrap();
        let mut expect = b"HGW1".to_vec();
        expect.extend(1u32.to_le_bytes());
        expect.extend(2u32.to_le_bytes());
        expect.extend(b"fc");
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.extend(1.5f32.to_le_bytes());
        assert_eq!(buf, expect);
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(
            read_checkpoint(&mut &b"XXXX\0\0\0\0"[..]),
            Err(Error::Format(_))
        ));
        let layers = layers_from(1, &[vec![3, 2]]);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &layers).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            read_checkpoint(&mut buf.as_slice()),
            Err(Error::Io(_))
        ));
    }
}
