//! Flat binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "QRWKV1"
//! u64 × 10   n_embd n_layer n_intermediate n_head n_qubits q_depth
//!            variant(0 classical, 1 quantum) input_dim output_dim input_norm
//! per parameter, in registration order, until end of file:
//!   u32 name length, name bytes (UTF-8)
//!   u32 rank, u64 × rank dims
//!   f64 × numel values
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, ModelConfig, Variant};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"QRWKV1";

fn header_fields(c: &ModelConfig) -> [u64; 10] {
    [
        c.n_embd as u64,
        c.n_layer as u64,
        c.n_intermediate as u64,
        c.n_head as u64,
        c.n_qubits as u64,
        c.q_depth as u64,
        match c.variant {
            Variant::Classical => 0,
            Variant::Quantum => 1,
        },
        c.input_dim as u64,
        c.output_dim as u64,
        c.input_norm as u64,
    ]
}

const FIELD_NAMES: [&str; 10] = [
    "n_embd",
    "n_layer",
    "n_intermediate",
    "n_head",
    "n_qubits",
    "q_depth",
    "variant",
    "input_dim",
    "output_dim",
    "input_norm",
];

pub fn write_to(model: &Model, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    for f in header_fields(model.config()) {
        w.write_all(&f.to_le_bytes())?;
    }
    for (_, p) in model.params().iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(model, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_exact_or<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))?;
    Ok(buf)
}

/// Reads a checkpoint written for `expected`; any header or parameter
/// mismatch is an error.
pub fn read_from(mut r: impl Read, expected: &ModelConfig) -> Result<Model> {
    let magic: [u8; 6] = read_exact_or(&mut r, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a QRWKV1 checkpoint".into()));
    }
    let want = header_fields(expected);
    for (i, name) in FIELD_NAMES.iter().enumerate() {
        let got = u64::from_le_bytes(read_exact_or(&mut r, name)?);
        if got != want[i] {
            return Err(Error::Checkpoint(format!(
                "config mismatch: checkpoint {name} = {got}, expected {}",
                want[i]
            )));
        }
    }
    let mut model = Model::new(expected.clone(), 0)?;
    let mut seen = HashSet::new();
    loop {
        let mut len = [0u8; 4];
        match r.read(&mut len[..1])? {
            0 => break,
            _ => r
                .read_exact(&mut len[1..])
                .map_err(|e| Error::Checkpoint(format!("truncated name length: {e}")))?,
        }
        let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = u32::from_le_bytes(read_exact_or(&mut r, "rank")?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_exact_or(&mut r, "shape")?) as usize);
        }
        let param = model
            .params_mut()
            .by_name_mut(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {name}")))?;
        if param.value.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {shape:?}, expected {:?}",
                param.value.shape()
            )));
        }
        for v in param.value.data_mut() {
            *v = f64::from_le_bytes(read_exact_or(&mut r, "values")?);
        }
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint(format!("parameter {name} repeated")));
        }
    }
    if seen.len() != model.params().len() {
        let missing: Vec<_> = model
            .params()
            .iter()
            .filter(|(_, p)| !seen.contains(&p.name))
            .map(|(_, p)| p.name.clone())
            .collect();
        return Err(Error::Checkpoint(format!("missing parameters: {missing:?}")));
    }
    Ok(model)
}

pub fn load(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Model> {
    read_from(BufReader::new(File::open(path)?), expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: Variant) -> ModelConfig {
        ModelConfig {
            n_embd: 4,
            n_layer: 1,
            n_intermediate: 8,
            n_head: 2,
            n_qubits: 2,
            q_depth: 1,
            ..ModelConfig::desk(variant)
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Model::new(small(Variant::Quantum), 7).unwrap();
        let mut buf = Vec::new();
        write_to(&m, &mut buf).unwrap();
        assert_eq!(&buf[..6], MAGIC);
        let back = read_from(buf.as_slice(), m.config()).unwrap();
        for ((_, a), (_, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn header_layout() {
        let m = Model::new(small(Variant::Classical), 1).unwrap();
        let mut buf = Vec::new();
        write_to(&m, &mut buf).unwrap();
        let field = |i: usize| u64::from_le_bytes(buf[6 + 8 * i..14 + 8 * i].try_into().unwrap());
        assert_eq!(field(0), 4);
        assert_eq!(field(1), 1);
        assert_eq!(field(2), 8);
        assert_eq!(field(6), 0);
        let name_len = u32::from_le_bytes(buf[86..90].try_into().unwrap()) as usize;
        assert_eq!(&buf[90..90 + name_len], b"emb.weight");
    }

    #[test]
    fn rejects_config_mismatch() {
        let m = Model::new(small(Variant::Quantum), 7).unwrap();
        let mut buf = Vec::new();
        write_to(&m, &mut buf).unwrap();
        let err = read_from(buf.as_slice(), &small(Variant::Classical)).unwrap_err();
        assert!(err.to_string().contains("variant"), "{err}");
        let wider = ModelConfig {
            n_embd: 8,
            n_intermediate: 16,
            ..small(Variant::Quantum)
        };
        assert!(read_from(buf.as_slice(), &wider).is_err());
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let m = Model::new(small(Variant::Classical), 7).unwrap();
        let mut buf = Vec::new();
        write_to(&m, &mut buf).unwrap();
        assert!(read_from(&buf[..buf.len() - 3], m.config()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_from(bad.as_slice(), m.config()).is_err());
    }
}
