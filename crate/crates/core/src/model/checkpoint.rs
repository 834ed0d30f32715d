//! Binary model checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! "RIMMDL" u8:version
//! u32 F, u32 d, u32 V, u32 L, u32 K
//! u8 interaction (0 inner, 1 kernel, 2 micro), u8 task (0 binary, 1 regression), u8 use_labels
//! u32 count, u32 width × count      MLP hidden widths
//! u32 count, u32 width × count      micro-network hidden widths
//! u32 blocks, then per block: u64 len, f64 × len   (canonical block order)
//! ```

use std::path::Path;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Result, RimError};

use super::{InteractionKind, ModelParams, ModelShape, TaskKind};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"RIMMDL";
pub const CHECKPOINT_VERSION: u8 = 1;

fn widths(w: &mut ByteWriter, v: &[usize]) {
    w.u32(v.len() as u32);
    for &x in v {
        w.u32(x as u32);
    }
}

fn read_widths(r: &mut ByteReader) -> Result<Vec<usize>> {
    let n = r.u32()? as usize;
    if n > 64 {
        return Err(r.corrupt(format!("{n} layers")));
    }
    (0..n).map(|_| r.u32().map(|x| x as usize)).collect()
}

impl ModelParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.shape;
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u8(CHECKPOINT_VERSION);
        for v in [s.num_fields, s.dim, s.vocab, s.classes, s.retrieval_size] {
            w.u32(v as u32);
        }
        w.u8(match s.interaction {
            InteractionKind::Inner => 0,
            InteractionKind::Kernel => 1,
            InteractionKind::Micro => 2,
        });
        w.u8(match s.task {
            TaskKind::Binary => 0,
            TaskKind::Regression => 1,
        });
        w.u8(u8::from(s.use_labels));
        widths(&mut w, &s.hidden);
        widths(&mut w, &s.micro_hidden);
        let blocks = self.blocks();
        w.u32(blocks.len() as u32);
        for b in blocks {
            w.f64s(b.values);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let [num_fields, dim, vocab, classes, retrieval_size] = dims;
        let interaction = match r.u8()? {
            0 => InteractionKind::Inner,
            1 => InteractionKind::Kernel,
            2 => InteractionKind::Micro,
            t => return Err(r.corrupt(format!("unknown interaction tag {t}"))),
        };
        let task = match r.u8()? {
            0 => TaskKind::Binary,
            1 => TaskKind::Regression,
            t => return Err(r.corrupt(format!("unknown task tag {t}"))),
        };
        let use_labels = match r.u8()? {
            0 => false,
            1 => true,
            t => return Err(r.corrupt(format!("bad use_labels flag {t}"))),
        };
        let hidden = read_widths(&mut r)?;
        let micro_hidden = read_widths(&mut r)?;
        if num_fields == 0 || dim == 0 || hidden.contains(&0) || micro_hidden.contains(&0) {
            return Err(r.corrupt("zero-sized dimension".into()));
        }
        let shape = ModelShape {
            num_fields,
            dim,
            vocab,
            classes,
            retrieval_size,
            interaction,
            hidden,
            micro_hidden,
            task,
            use_labels,
        };
        // sizes are checked against the remaining bytes before allocating
        let n_blocks = r.u32()? as usize;
        let mut stored = Vec::with_capacity(n_blocks.min(1024));
        for _ in 0..n_blocks {
            stored.push(r.f64s()?);
        }
        r.finish()?;

        let mut params = ModelParams::zeros(shape);
        let mut blocks = params.blocks_mut();
        if blocks.len() != stored.len() {
            return Err(RimError::Corruption(format!(
                "checkpoint: {} blocks, shape implies {}",
                stored.len(),
                blocks.len()
            )));
        }
        for (b, values) in blocks.iter_mut().zip(&stored) {
            if b.values.len() != values.len() {
                return Err(RimError::Corruption(format!(
                    "checkpoint: block {} has {} values, expected {}",
                    b.name,
                    values.len(),
                    b.values.len()
                )));
            }
            b.values.copy_from_slice(values);
        }
        drop(blocks);
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| RimError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| RimError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
