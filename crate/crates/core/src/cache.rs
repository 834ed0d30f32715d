//! Offline retrieval results keyed by target sample id.
//!
//! # File layout
//!
//! ```text
//! "RIMCCH"            6 bytes magic
//! version             u8 (= 1)
//! index fingerprint   u64
//! K                   u32
//! mode tag, param     u8, u64   (0 bm25, 1 random(seed), 2 filtered(field), 3 none)
//! k1, b               f64, f64
//! entry count         u64
//! per entry, ascending target id:
//!     target id       u64
//!     neighbor count  u32
//!     per neighbor:   id u64, score f64, label f64, class u32 (u32::MAX if none),
//!                     slot count u32, slots
//! slot: tag u8 then 0 -> id u32 | 1 -> count u32, ids u32.. | 2 -> present u8, value f64
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::codec::{ByteReader, ByteWriter};
use crate::dataset::{SampleId, Slot, Table};
use crate::error::{Result, RimError};
use crate::retrieval::{make_query, Neighbor, RankingParams, RetrievalMode, RetrievedSet, Retriever};

pub const CACHE_MAGIC: &[u8; 6] = b"RIMCCH";
pub const CACHE_VERSION: u8 = 1;

/// What a cache was computed from; lookups against a different provenance
/// are rejected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub index_fingerprint: u64,
    pub k: u32,
    pub mode: RetrievalMode,
    pub params: RankingParams,
}

impl Provenance {
    pub fn of(retriever: &Retriever, k: usize, mode: RetrievalMode) -> Self {
        Provenance {
            index_fingerprint: retriever.index().fingerprint(),
            k: k as u32,
            mode,
            params: *retriever.params(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalCache {
    provenance: Provenance,
    entries: BTreeMap<SampleId, RetrievedSet>,
}

impl RetrievalCache {
    pub fn new(provenance: Provenance) -> Self {
        RetrievalCache {
            provenance,
            entries: BTreeMap::new(),
        }
    }

    /// Runs retrieval for every target and stores the results.
    pub fn precompute(retriever: &Retriever, targets: &Table, k: usize, mode: RetrievalMode) -> Result<Self> {
        let mut cache = RetrievalCache::new(Provenance::of(retriever, k, mode));
        for t in targets.samples() {
            let set = retriever.retrieve(mode, &make_query(t), k)?;
            cache.entries.insert(t.id, set);
        }
        Ok(cache)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, target: SampleId, set: RetrievedSet) {
        self.entries.insert(target, set);
    }

    /// `Ok(None)` on a miss; an error when `expected` differs from the
    /// provenance the cache was built with.
    pub fn lookup(&self, target: SampleId, expected: &Provenance) -> Result<Option<&RetrievedSet>> {
        if *expected != self.provenance {
            return Err(RimError::StaleCache(format!(
                "cache built for {:?}, requested {:?}",
                self.provenance, expected
            )));
        }
        Ok(self.entries.get(&target))
    }

    /// Unchecked lookup for callers that validated the provenance up front.
    pub fn get(&self, target: SampleId) -> Option<&RetrievedSet> {
        self.entries.get(&target)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CACHE_MAGIC);
        w.u8(CACHE_VERSION);
        let p = &self.provenance;
        w.u64(p.index_fingerprint);
        w.u32(p.k);
        let (tag, param) = p.mode.tag();
        w.u8(tag);
        w.u64(param);
        w.f64(p.params.k1);
        w.f64(p.params.b);
        w.u64(self.entries.len() as u64);
        for (&target, set) in &self.entries {
            w.u64(target);
            w.u32(set.neighbors.len() as u32);
            for n in &set.neighbors {
                w.u64(n.id);
                w.f64(n.score);
                w.f64(n.label);
                w.u32(n.class.unwrap_or(u32::MAX));
                w.u32(n.slots.len() as u32);
                for slot in &n.slots {
                    write_slot(&mut w, slot);
                }
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "cache");
        r.header(CACHE_MAGIC, CACHE_VERSION)?;
        let index_fingerprint = r.u64()?;
        let k = r.u32()?;
        let (tag, param) = (r.u8()?, r.u64()?);
        let mode = RetrievalMode::from_tag(tag, param)
            .ok_or_else(|| r.corrupt(format!("unknown retrieval mode tag {tag}")))?;
        let params = RankingParams {
            k1: r.f64()?,
            b: r.f64()?,
        };
        let count = r.len(12)?;
        let mut entries = BTreeMap::new();
        let mut last = None;
        for _ in 0..count {
            let target = r.u64()?;
            if last.is_some_and(|l| target <= l) {
                return Err(r.corrupt(format!("target ids not ascending at {target}")));
            }
            last = Some(target);
            let n = r.u32()?;
            let mut neighbors = Vec::new();
            for _ in 0..n {
                let id = r.u64()?;
                let score = r.f64()?;
                let label = r.f64()?;
                let class = Some(r.u32()?).filter(|&c| c != u32::MAX);
                let slots = (0..r.u32()?).map(|_| read_slot(&mut r)).collect::<Result<Vec<_>>>()?;
                neighbors.push(Neighbor {
                    id,
                    score,
                    slots,
                    label,
                    class,
                });
            }
            entries.insert(target, RetrievedSet { neighbors });
        }
        r.finish()?;
        Ok(RetrievalCache {
            provenance: Provenance {
                index_fingerprint,
                k,
                mode,
                params,
            },
            entries,
        })
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

fn write_slot(w: &mut ByteWriter, slot: &Slot) {
    match slot {
        Slot::One(id) => {
            w.u8(0);
            w.u32(*id);
        }
        Slot::Many(ids) => {
            w.u8(1);
            w.u32(ids.len() as u32);
            for &id in ids {
                w.u32(id);
            }
        }
        Slot::Raw(v) => {
            w.u8(2);
            w.u8(u8::from(v.is_some()));
            w.f64(v.unwrap_or(0.0));
        }
    }
}

fn read_slot(r: &mut ByteReader<'_>) -> Result<Slot> {
    Ok(match r.u8()? {
        0 => Slot::One(r.u32()?),
        1 => {
            let n = r.u32()?;
            Slot::Many((0..n).map(|_| r.u32()).collect::<Result<_>>()?)
        }
        2 => {
            let present = r.u8()? != 0;
            let v = r.f64()?;
            Slot::Raw(present.then_some(v))
        }
        t => return Err(r.corrupt(format!("unknown slot tag {t}"))),
    })
}
