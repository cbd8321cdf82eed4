//! On-disk formats.
//!
//! LUT files are little-endian: a 72-byte header (`LUTI`, version, d, k, bounds, mode hint,
//! 7 zero bytes) followed by `d³ · k` `f32` values, node-major with channels innermost.
//! Tables live in memory as `f64`; values are rounded to `f32` when written.
//!
//! Models are a single JSON document whose floats use the shortest round-trip encoding, so a
//! read-back model is bit-identical. Records are JSON Lines with fields in declaration order.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::luti::{BasisTable, EmbedMode, Table};
use crate::nn::MlpParams;
use crate::pipeline::{Embedding, Model};

pub const LUT_MAGIC: [u8; 4] = *b"LUTI";
pub const LUT_VERSION: u32 = 1;
pub const LUT_HEADER_LEN: usize = 72;

pub const MODEL_FORMAT: &str = "luti-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LutFileHeader {
    pub version: u32,
    pub d: u32,
    pub k: u32,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    /// 0 = uniform, 1 = irregular-capable.
    pub mode_hint: u8,
}

impl LutFileHeader {
    fn payload_len(&self) -> Option<u64> {
        let d = self.d as u64;
        d.checked_mul(d)?.checked_mul(d)?.checked_mul(self.k as u64)?.checked_mul(4)
    }
}

pub fn mode_hint(mode: EmbedMode) -> u8 {
    match mode {
        EmbedMode::Irregular => 1,
        EmbedMode::Uniform | EmbedMode::Nearest => 0,
    }
}

pub fn encode_lut(tbl: &BasisTable, hint: u8) -> Vec<u8> {
    let lat = tbl.lattice();
    let mut out = Vec::with_capacity(LUT_HEADER_LEN + tbl.data().len() * 4);
    out.extend_from_slice(&LUT_MAGIC);
    out.extend_from_slice(&LUT_VERSION.to_le_bytes());
    out.extend_from_slice(&(lat.d() as u32).to_le_bytes());
    out.extend_from_slice(&(tbl.k() as u32).to_le_bytes());
    for v in lat.lo().iter().chain(&lat.hi()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(hint);
    out.extend_from_slice(&[0u8; 7]);
    debug_assert_eq!(out.len(), LUT_HEADER_LEN);
    for &v in tbl.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn le_f64(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn decode_lut_header(bytes: &[u8]) -> Result<LutFileHeader> {
    if bytes.len() >= 4 && bytes[..4] != LUT_MAGIC {
        return Err(Error::LutFormat("bad magic".into()));
    }
    if bytes.len() < LUT_HEADER_LEN {
        return Err(Error::LutTruncated(bytes.len()));
    }
    let version = le_u32(bytes, 4);
    if version != LUT_VERSION {
        return Err(Error::LutVersion(version));
    }
    let header = LutFileHeader {
        version,
        d: le_u32(bytes, 8),
        k: le_u32(bytes, 12),
        lo: [le_f64(bytes, 16), le_f64(bytes, 24), le_f64(bytes, 32)],
        hi: [le_f64(bytes, 40), le_f64(bytes, 48), le_f64(bytes, 56)],
        mode_hint: bytes[64],
    };
    if header.d < 2 {
        return Err(Error::LutFormat(format!("d must be at least 2, got {}", header.d)));
    }
    if header.k < 1 {
        return Err(Error::LutFormat("k must be at least 1".into()));
    }
    if header.mode_hint > 1 {
        return Err(Error::LutFormat(format!("unknown mode hint {}", header.mode_hint)));
    }
    if bytes[65..72].iter().any(|&b| b != 0) {
        return Err(Error::LutFormat("reserved header bytes are not zero".into()));
    }
    Ok(header)
}

pub fn decode_lut(bytes: &[u8]) -> Result<(LutFileHeader, BasisTable)> {
    let header = decode_lut_header(bytes)?;
    let expected = header
        .payload_len()
        .ok_or_else(|| Error::LutFormat("table dimensions overflow".into()))?;
    let actual = (bytes.len() - LUT_HEADER_LEN) as u64;
    if actual != expected {
        return Err(Error::LutSizeMismatch { expected, actual });
    }
    let lattice = Lattice::with_bounds(header.d as usize, header.lo, header.hi)
        .map_err(|e| Error::LutFormat(e.to_string()))?;
    let data: Vec<f64> = bytes[LUT_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let tbl = BasisTable::from_data(lattice, header.k as usize, data).map_err(|e| Error::LutFormat(e.to_string()))?;
    Ok((header, tbl))
}

pub fn write_lut_with_hint(tbl: &BasisTable, hint: u8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_lut(tbl, hint)).map_err(|e| Error::io(path, e))
}

pub fn write_lut(tbl: &BasisTable, path: impl AsRef<Path>) -> Result<()> {
    write_lut_with_hint(tbl, 0, path)
}

pub fn read_lut_with_header(path: impl AsRef<Path>) -> Result<(LutFileHeader, BasisTable)> {
    let path = path.as_ref();
    decode_lut(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_lut(path: impl AsRef<Path>) -> Result<BasisTable> {
    Ok(read_lut_with_header(path)?.1)
}

#[derive(Serialize, Deserialize)]
struct TableDoc {
    lattice: Lattice,
    k: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum EmbeddingDoc {
    Mlp {
        mlp: MlpParams,
    },
    Lattice {
        mlp: MlpParams,
        lattice: Lattice,
        mode: EmbedMode,
    },
    Table {
        table: TableDoc,
        mode: EmbedMode,
    },
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u32,
    variant: String,
    class_names: Vec<String>,
    embedding: EmbeddingDoc,
    head: MlpParams,
}

pub fn model_to_string(model: &Model) -> Result<String> {
    let embedding = match &model.embedding {
        Embedding::Mlp(m) => EmbeddingDoc::Mlp { mlp: m.clone() },
        Embedding::Lattice { mlp, lattice, mode } => EmbeddingDoc::Lattice {
            mlp: mlp.clone(),
            lattice: *lattice,
            mode: *mode,
        },
        Embedding::Table { table, mode } => EmbeddingDoc::Table {
            table: TableDoc {
                lattice: *table.lattice(),
                k: table.k(),
                data: table.data().to_vec(),
            },
            mode: *mode,
        },
    };
    let doc = ModelDoc {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        variant: model.variant.clone(),
        class_names: model.class_names.clone(),
        embedding,
        head: model.head.clone(),
    };
    serde_json::to_string(&doc).map_err(|e| Error::ModelFormat(e.to_string()))
}

pub fn model_from_str(text: &str) -> Result<Model> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if doc.format != MODEL_FORMAT {
        return Err(Error::ModelFormat(format!("unexpected format tag `{}`", doc.format)));
    }
    if doc.version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!("unsupported model version {}", doc.version)));
    }
    let embedding = match doc.embedding {
        EmbeddingDoc::Mlp { mlp } => Embedding::Mlp(mlp),
        EmbeddingDoc::Lattice { mlp, lattice, mode } => {
            let lattice = Lattice::with_bounds(lattice.d(), lattice.lo(), lattice.hi())
                .map_err(|e| Error::ModelFormat(e.to_string()))?;
            Embedding::Lattice { mlp, lattice, mode }
        }
        EmbeddingDoc::Table { table, mode } => {
            let lattice = Lattice::with_bounds(table.lattice.d(), table.lattice.lo(), table.lattice.hi())
                .map_err(|e| Error::ModelFormat(e.to_string()))?;
            Embedding::Table {
                table: BasisTable::from_data(lattice, table.k, table.data)
                    .map_err(|e| Error::ModelFormat(e.to_string()))?,
                mode,
            }
        }
    };
    match &embedding {
        Embedding::Mlp(m) | Embedding::Lattice { mlp: m, .. } => {
            m.validate().map_err(|e| Error::ModelFormat(e.to_string()))?
        }
        Embedding::Table { .. } => {}
    }
    let model = Model {
        variant: doc.variant,
        embedding,
        head: doc.head,
        class_names: doc.class_names,
    };
    model.validate().map_err(|e| Error::ModelFormat(e.to_string()))?;
    Ok(model)
}

pub fn write_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_string(model)?).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text)
}

/// Writes one compact JSON object per line.
pub fn write_records_to<W: Write, R: Serialize>(mut w: W, records: &[R]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_records<R: Serialize>(records: &[R], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records_to(BufWriter::new(file), records).map_err(|e| Error::io(path, e))
}
