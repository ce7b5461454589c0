//! Binary checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! "KGDBCKPT" u32:version u64:global_step
//! u32:n_meta   { str:key str:value }*          (sorted by key)
//! u32:n_tensor { str:name u32:rank u64:dim*rank
//!                f64:value* u64:adam_t f64:m* f64:v* }*   (sorted by name)
//! str = u32:len utf8-bytes
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AdamSlots, ParameterStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"KGDBCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub store: ParameterStore,
    pub metadata: BTreeMap<String, String>,
}

pub fn write_checkpoint(
    store: &ParameterStore,
    metadata: &BTreeMap<String, String>,
    mut out: impl Write,
) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&store.step().to_le_bytes())?;
    write_len(&mut out, metadata.len())?;
    for (k, v) in metadata {
        write_str(&mut out, k)?;
        write_str(&mut out, v)?;
    }
    let mut ids: Vec<_> = store.ids().collect();
    ids.sort_by(|a, b| store.name(*a).cmp(store.name(*b)));
    write_len(&mut out, ids.len())?;
    for id in ids {
        let tensor = store.get(id);
        let slots = store.slots(id);
        write_str(&mut out, store.name(id))?;
        write_len(&mut out, tensor.shape().len())?;
        for &d in tensor.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        write_f64s(&mut out, tensor.values())?;
        out.write_all(&slots.t.to_le_bytes())?;
        write_f64s(&mut out, &slots.m)?;
        write_f64s(&mut out, &slots.v)?;
    }
    Ok(())
}

pub fn read_checkpoint(mut input: impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let step = read_u64(&mut input)?;
    let mut metadata = BTreeMap::new();
    for _ in 0..read_u32(&mut input)? {
        let k = read_str(&mut input)?;
        let v = read_str(&mut input)?;
        metadata.insert(k, v);
    }
    let mut store = ParameterStore::new();
    for _ in 0..read_u32(&mut input)? {
        let name = read_str(&mut input)?;
        let rank = read_u32(&mut input)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let values = read_f64s(&mut input, n)?;
        let t = read_u64(&mut input)?;
        let m = read_f64s(&mut input, n)?;
        let v = read_f64s(&mut input, n)?;
        let id = store.insert(name, Tensor::new(shape, values)?)?;
        store.set_slots(id, AdamSlots { m, v, t });
    }
    store.set_step(step);
    Ok(Checkpoint { store, metadata })
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    store: &ParameterStore,
    metadata: &BTreeMap<String, String>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_checkpoint(store, metadata, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

fn write_len(out: &mut impl Write, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Format("length exceeds u32".into()))?;
    out.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn write_str(out: &mut impl Write, s: &str) -> Result<()> {
    write_len(out, s.len())?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn write_f64s(out: &mut impl Write, xs: &[f64]) -> Result<()> {
    for x in xs {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(input: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(input: &mut impl Read) -> Result<String> {
    let n = read_u32(input)? as usize;
    let mut buf = vec![0u8; n];
    input.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("non-utf8 string".into()))
}

fn read_f64s(input: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    input.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}
