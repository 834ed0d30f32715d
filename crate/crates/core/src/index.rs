//! Feature-based inverted index over the retrieval pool.
//!
//! Every pool row is a document and every feature value a term. Document ids
//! are the row positions `0..N_pool` of the pool table the index was built
//! from. Values of a multi-valued slot each get their own posting.
//!
//! # File layout
//!
//! All integers little-endian.
//!
//! ```text
//! "RIMIDX"              6 bytes magic
//! version               u8  (= 1)
//! num_docs              u64
//! num_fields            u32
//! stop bitmap           ceil(num_fields / 8) bytes, field i -> bit (i % 8) of byte i / 8
//! feature_count         u32 (non-empty postings)
//! repeated feature_count times, ascending feature id:
//!     feature id        u32
//!     df                u32 (posting length)
//!     df x u32          first doc id, then gaps to the previous id
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use crate::codec::{fingerprint, ByteReader, ByteWriter};
use crate::dataset::{FeatureId, Slot, Table};
use crate::error::{Result, RimError};

pub const INDEX_MAGIC: &[u8; 6] = b"RIMIDX";
pub const INDEX_VERSION: u8 = 1;

pub type DocId = u32;

/// Default document-frequency ratio above which a field is treated as a stop-field.
pub const DEFAULT_STOP_RATIO: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvertedIndex {
    num_docs: u64,
    stop_fields: Vec<bool>,
    /// Indexed by feature id; empty for unseen or stopped features.
    postings: Vec<Vec<DocId>>,
}

/// Flags every feature field whose most frequent value occurs in more than
/// `max_df_ratio` of the pool's documents.
pub fn detect_stop_fields(pool: &Table, max_df_ratio: f64) -> BTreeSet<usize> {
    let n = pool.len();
    let mut stopped = BTreeSet::new();
    if n == 0 {
        return stopped;
    }
    let mut counts = vec![0usize; pool.vocab().len()];
    for field in 0..pool.num_features() {
        for s in pool.samples() {
            for &id in s.slots[field].ids() {
                counts[id as usize] += 1;
            }
        }
        let most = pool
            .vocab()
            .field_ids(field)
            .into_iter()
            .map(|id| std::mem::take(&mut counts[id as usize]))
            .max()
            .unwrap_or(0);
        if most as f64 > max_df_ratio * n as f64 {
            stopped.insert(field);
        }
    }
    stopped
}

/// Builds the index; every sample is appended to the posting of every feature
/// value it carries outside the stop-fields.
pub fn build_index(pool: &Table, stop_fields: &BTreeSet<usize>) -> Result<InvertedIndex> {
    let num_fields = pool.num_features();
    if let Some(&f) = stop_fields.iter().find(|&&f| f >= num_fields) {
        return Err(RimError::Config(format!(
            "stop-field {f} out of range (F = {num_fields})"
        )));
    }
    if u32::try_from(pool.len()).is_err() {
        return Err(RimError::Data("pool too large for 32-bit document ids".into()));
    }
    let mut postings: Vec<Vec<DocId>> = vec![Vec::new(); pool.vocab().len()];
    for (doc, s) in pool.samples().iter().enumerate() {
        for (field, slot) in s.slots.iter().enumerate() {
            if let Slot::Raw(_) = slot {
                return Err(RimError::Data(format!(
                    "field `{}` must be discretized before indexing",
                    pool.schema().feature(field).name
                )));
            }
            if stop_fields.contains(&field) {
                continue;
            }
            for &id in slot.ids() {
                postings[id as usize].push(doc as DocId);
            }
        }
    }
    let mut stop = vec![false; num_fields];
    for &f in stop_fields {
        stop[f] = true;
    }
    let mut index = InvertedIndex {
        num_docs: pool.len() as u64,
        stop_fields: stop,
        postings,
    };
    index.trim();
    Ok(index)
}

impl InvertedIndex {
    fn trim(&mut self) {
        while self.postings.last().is_some_and(Vec::is_empty) {
            self.postings.pop();
        }
    }

    /// Total number of documents (𝒩).
    pub fn num_docs(&self) -> u64 {
        self.num_docs
    }

    pub fn num_fields(&self) -> usize {
        self.stop_fields.len()
    }

    pub fn is_stop_field(&self, field: usize) -> bool {
        self.stop_fields.get(field).copied().unwrap_or(false)
    }

    pub fn stop_fields(&self) -> BTreeSet<usize> {
        (0..self.stop_fields.len()).filter(|&f| self.stop_fields[f]).collect()
    }

    /// Posting of `feature`; empty for unseen or stopped features.
    pub fn posting(&self, feature: FeatureId) -> &[DocId] {
        self.postings.get(feature as usize).map_or(&[], Vec::as_slice)
    }

    /// Document frequency 𝒩(c).
    pub fn doc_freq(&self, feature: FeatureId) -> u64 {
        self.posting(feature).len() as u64
    }

    /// Number of features with a non-empty posting.
    pub fn num_indexed_features(&self) -> usize {
        self.postings.iter().filter(|p| !p.is_empty()).count()
    }

    pub fn total_postings(&self) -> usize {
        self.postings.iter().map(Vec::len).sum()
    }

    /// `(feature, posting)` pairs in ascending feature order.
    pub fn iter(&self) -> impl Iterator<Item = (FeatureId, &[DocId])> {
        self.postings
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.is_empty())
            .map(|(f, p)| (f as FeatureId, p.as_slice()))
    }

    /// Histogram of posting lengths in power-of-two buckets: bucket `i`
    /// counts postings with length in `[2^i, 2^(i+1))`.
    pub fn posting_length_histogram(&self) -> Vec<usize> {
        let mut hist = Vec::new();
        for (_, p) in self.iter() {
            let bucket = (usize::BITS - 1 - p.len().leading_zeros()) as usize;
            if hist.len() <= bucket {
                hist.resize(bucket + 1, 0);
            }
            hist[bucket] += 1;
        }
        hist
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(INDEX_MAGIC);
        w.u8(INDEX_VERSION);
        w.u64(self.num_docs);
        w.u32(self.stop_fields.len() as u32);
        let mut bitmap = vec![0u8; self.stop_fields.len().div_ceil(8)];
        for (f, &s) in self.stop_fields.iter().enumerate() {
            if s {
                bitmap[f / 8] |= 1 << (f % 8);
            }
        }
        w.bytes(&bitmap);
        w.u32(self.num_indexed_features() as u32);
        for (feature, posting) in self.iter() {
            w.u32(feature);
            w.u32(posting.len() as u32);
            let mut prev = 0;
            for (i, &doc) in posting.iter().enumerate() {
                w.u32(if i == 0 { doc } else { doc - prev });
                prev = doc;
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "index");
        r.header(INDEX_MAGIC, INDEX_VERSION)?;
        let num_docs = r.u64()?;
        let num_fields = r.u32()? as usize;
        let bitmap = r.take(num_fields.div_ceil(8))?;
        let stop_fields: Vec<bool> = (0..num_fields).map(|f| bitmap[f / 8] & (1 << (f % 8)) != 0).collect();
        let count = r.u32()?;
        let mut postings: Vec<Vec<DocId>> = Vec::new();
        let mut last_feature: Option<FeatureId> = None;
        for _ in 0..count {
            let feature = r.u32()?;
            if last_feature.is_some_and(|l| feature <= l) {
                return Err(r.corrupt(format!("feature ids not ascending at {feature}")));
            }
            last_feature = Some(feature);
            let df = r.u32()? as usize;
            if df == 0 {
                return Err(r.corrupt(format!("empty posting for feature {feature}")));
            }
            let mut posting = Vec::with_capacity(df.min(bytes.len() / 4));
            let mut doc: u64 = 0;
            for i in 0..df {
                let gap = u64::from(r.u32()?);
                if i > 0 && gap == 0 {
                    return Err(r.corrupt(format!("posting of feature {feature} not strictly increasing")));
                }
                doc += gap;
                if doc >= num_docs {
                    return Err(r.corrupt(format!("document id {doc} out of range")));
                }
                posting.push(doc as DocId);
            }
            let slot = feature as usize;
            if postings.len() <= slot {
                postings.resize(slot + 1, Vec::new());
            }
            postings[slot] = posting;
        }
        r.finish()?;
        Ok(InvertedIndex {
            num_docs,
            stop_fields,
            postings,
        })
    }

    /// Fingerprint of the canonical serialization.
    pub fn fingerprint(&self) -> u64 {
        fingerprint(&self.to_bytes())
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
