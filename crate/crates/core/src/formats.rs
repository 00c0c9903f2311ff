//! Little-endian binary formats.
//!
//! `GVEC` (precomputed base vectors):
//!
//! ```text
//! "GVEC" u32 version=1 u32 count u32 d_base
//! count × { u32 text_len, text_len bytes UTF-8, d_base × f32 }
//! ```
//!
//! `GCKP` (model checkpoint):
//!
//! ```text
//! "GCKP" u32 version=1 u32 d_base u32 d u32 kind (0 precomputed, 1 bag) u32 vocab_buckets
//! f32 arrays: bag table (kind 1 only), W_μ, b_μ, W_σ, b_σ
//! ```
//!
//! Weights are row-major `d_base × d`; the bag table is row-major
//! `vocab_buckets × d_base`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::encoder::{BagEncoder, BaseEncoder, Model, PrecomputedVectors, ProjectionHeads};
use crate::error::{Error, Result};

pub const GVEC_MAGIC: &[u8; 4] = b"GVEC";
pub const GCKP_MAGIC: &[u8; 4] = b"GCKP";
pub const FORMAT_VERSION: u32 = 1;

const KIND_PRECOMPUTED: u32 = 0;
const KIND_BAG: u32 = 1;

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} exceeds u32")))
}

pub fn write_vectors<W: Write>(w: &mut W, vectors: &PrecomputedVectors) -> Result<()> {
    w.write_all(GVEC_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(to_u32(vectors.len(), "count")?)?;
    w.write_u32::<LittleEndian>(to_u32(vectors.dim(), "d_base")?)?;
    for (text, v) in vectors.iter() {
        w.write_u32::<LittleEndian>(to_u32(text.len(), "text length")?)?;
        w.write_all(text.as_bytes())?;
        for &x in v {
            w.write_f32::<LittleEndian>(x)?;
        }
    }
    Ok(())
}

pub fn read_vectors<R: Read>(r: &mut R) -> Result<PrecomputedVectors> {
    read_header(r, GVEC_MAGIC)?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    if dim == 0 {
        return Err(Error::Format("d_base is zero".into()));
    }
    let mut vectors = PrecomputedVectors::new(dim);
    let mut buf = vec![0f32; dim];
    for record in 0..count {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format(format!("record {record}: text is not UTF-8")))?;
        r.read_f32_into::<LittleEndian>(&mut buf)?;
        vectors.insert(text, &buf)?;
    }
    Ok(vectors)
}

pub fn save_vectors(path: impl AsRef<Path>, vectors: &PrecomputedVectors) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_vectors(&mut w, vectors)?;
    w.flush()?;
    Ok(())
}

pub fn load_vectors(path: impl AsRef<Path>) -> Result<PrecomputedVectors> {
    read_vectors(&mut BufReader::new(File::open(path)?))
}

fn write_f32s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for &x in xs {
        w.write_f32::<LittleEndian>(x as f32)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0f32; n];
    r.read_f32_into::<LittleEndian>(&mut buf)?;
    if let Some(index) = buf.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "checkpoint parameter", index });
    }
    Ok(buf.into_iter().map(f64::from).collect())
}

/// Serialise a model. Parameters are rounded to f32.
pub fn write_checkpoint<W: Write>(w: &mut W, model: &Model) -> Result<()> {
    let heads = &model.heads;
    w.write_all(GCKP_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(to_u32(heads.base_dim(), "d_base")?)?;
    w.write_u32::<LittleEndian>(to_u32(heads.dim(), "d")?)?;
    match &model.base {
        BaseEncoder::Precomputed(_) => {
            w.write_u32::<LittleEndian>(KIND_PRECOMPUTED)?;
            w.write_u32::<LittleEndian>(0)?;
        }
        BaseEncoder::Bag(bag) => {
            w.write_u32::<LittleEndian>(KIND_BAG)?;
            w.write_u32::<LittleEndian>(to_u32(bag.buckets(), "vocab_buckets")?)?;
            write_f32s(w, bag.table())?;
        }
    }
    write_f32s(w, heads.mean_weight())?;
    write_f32s(w, heads.mean_bias())?;
    write_f32s(w, heads.var_weight())?;
    write_f32s(w, heads.var_bias())?;
    Ok(())
}

/// Deserialise a model. Precomputed checkpoints do not carry their vectors,
/// so `vectors` must be supplied for them.
pub fn read_checkpoint<R: Read>(r: &mut R, vectors: Option<Arc<PrecomputedVectors>>) -> Result<Model> {
    read_header(r, GCKP_MAGIC)?;
    let base_dim = r.read_u32::<LittleEndian>()? as usize;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let kind = r.read_u32::<LittleEndian>()?;
    let buckets = r.read_u32::<LittleEndian>()? as usize;
    let base = match kind {
        KIND_PRECOMPUTED => {
            let vectors = vectors.ok_or_else(|| {
                Error::Format("checkpoint uses precomputed vectors but none were supplied".into())
            })?;
            BaseEncoder::Precomputed(vectors)
        }
        KIND_BAG => {
            let table = read_f64s(r, buckets * base_dim)?;
            BaseEncoder::Bag(BagEncoder::from_table(buckets, base_dim, table)?)
        }
        other => return Err(Error::Format(format!("unknown encoder kind {other}"))),
    };
    let mean_weight = read_f64s(r, base_dim * dim)?;
    let mean_bias = read_f64s(r, dim)?;
    let var_weight = read_f64s(r, base_dim * dim)?;
    let var_bias = read_f64s(r, dim)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let heads = ProjectionHeads::from_parts(base_dim, dim, mean_weight, mean_bias, var_weight, var_bias)?;
    Model::new(base, heads)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>, vectors: Option<Arc<PrecomputedVectors>>) -> Result<Model> {
    read_checkpoint(&mut BufReader::new(File::open(path)?), vectors)
}
