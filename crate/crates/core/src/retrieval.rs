//! Query formulation, BM25 scoring over feature fields and top-K retrieval.
//!
//! A query is the feature part of the target row with OR semantics: any pool
//! document sharing at least one non-stopped feature value is a candidate.
//! Every document has exactly F fields, so the BM25 length ratio is the
//! constant 1 and the per-field denominator reduces to `TF + k1`.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Sample, SampleId, Slot, Table};
use crate::error::{Result, RimError};
use crate::index::{DocId, InvertedIndex};

/// `|x_D| / avgdl`: constant because all documents have F fields.
const LENGTH_RATIO: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankingParams {
    pub k1: f64,
    pub b: f64,
}

impl Default for RankingParams {
    fn default() -> Self {
        RankingParams { k1: 1.2, b: 0.75 }
    }
}

impl RankingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) || !(0.0..=1.0).contains(&self.b) {
            return Err(RimError::Config(format!(
                "ranking params out of range: k1 = {}, b = {}",
                self.k1, self.b
            )));
        }
        Ok(())
    }

    /// One field's contribution: `idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * ratio))`.
    #[inline]
    pub fn field_term(&self, idf: f64, tf: f64) -> f64 {
        idf * (tf * (self.k1 + 1.0)) / (tf + self.k1 * (1.0 - self.b + self.b * LENGTH_RATIO))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub slots: Vec<Slot>,
    /// Sample id never returned (the target itself).
    pub exclude: Option<SampleId>,
    pub target: SampleId,
}

pub fn make_query(target: &Sample) -> Query {
    Query {
        slots: target.slots.clone(),
        exclude: Some(target.id),
        target: target.id,
    }
}

/// 0/1 match for single values, Jaccard similarity for value sets.
pub fn term_frequency(query: &Slot, doc: &Slot) -> f64 {
    match (query, doc) {
        (Slot::One(a), Slot::One(b)) => f64::from(u8::from(a == b)),
        (Slot::Raw(_), _) | (_, Slot::Raw(_)) => 0.0,
        _ => {
            let (a, b) = (query.ids(), doc.ids());
            let inter = sorted_intersection_len(a, b);
            let union = a.len() + b.len() - inter;
            if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            }
        }
    }
}

fn sorted_intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// `ln((N - n + 0.5) / (n + 0.5))`, where `n` is the document frequency of
/// the slot's value, or the mean document frequency over a value set.
pub fn idf(index: &InvertedIndex, slot: &Slot) -> f64 {
    let ids = slot.ids();
    let df = if ids.is_empty() {
        0.0
    } else {
        ids.iter().map(|&v| index.doc_freq(v) as f64).sum::<f64>() / ids.len() as f64
    };
    let n = index.num_docs() as f64;
    ((n - df + 0.5) / (df + 0.5)).ln()
}

/// Full BM25 score of one document, summed field by field in field order.
pub fn bm25_score(query: &Query, doc: &Sample, index: &InvertedIndex, params: &RankingParams) -> f64 {
    let mut score = 0.0;
    for (field, (q, d)) in query.slots.iter().zip(&doc.slots).enumerate() {
        if index.is_stop_field(field) {
            continue;
        }
        score += params.field_term(idf(index, q), term_frequency(q, d));
    }
    score
}

/// One retrieved row.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: SampleId,
    pub score: f64,
    pub slots: Vec<Slot>,
    pub label: f64,
    pub class: Option<u32>,
}

/// Up to K neighbors ordered by descending score, ties by ascending id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievedSet {
    pub neighbors: Vec<Neighbor>,
}

impl RetrievedSet {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn ids(&self) -> Vec<SampleId> {
        self.neighbors.iter().map(|n| n.id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDoc {
    pub doc: DocId,
    pub id: SampleId,
    pub score: f64,
}

/// Total order used for ranking: score descending, then sample id ascending.
pub fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// How neighbors are chosen for a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum RetrievalMode {
    /// BM25 ranking over the whole pool.
    Bm25,
    /// Uniform random rows, seeded per target.
    Random { seed: u64 },
    /// BM25 ranking restricted to rows sharing the target's value in `field`.
    Filtered { field: usize },
    /// No neighbors at all.
    None,
}

impl RetrievalMode {
    pub(crate) fn tag(self) -> (u8, u64) {
        match self {
            RetrievalMode::Bm25 => (0, 0),
            RetrievalMode::Random { seed } => (1, seed),
            RetrievalMode::Filtered { field } => (2, field as u64),
            RetrievalMode::None => (3, 0),
        }
    }

    pub(crate) fn from_tag(tag: u8, param: u64) -> Option<Self> {
        Some(match tag {
            0 => RetrievalMode::Bm25,
            1 => RetrievalMode::Random { seed: param },
            2 => RetrievalMode::Filtered {
                field: usize::try_from(param).ok()?,
            },
            3 => RetrievalMode::None,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            RetrievalMode::Bm25 => "bm25",
            RetrievalMode::Random { .. } => "random",
            RetrievalMode::Filtered { .. } => "filtered",
            RetrievalMode::None => "none",
        }
    }
}

/// An index together with the pool table it was built from.
#[derive(Debug, Clone)]
pub struct Retriever {
    index: InvertedIndex,
    pool: Table,
    params: RankingParams,
}

impl Retriever {
    pub fn new(index: InvertedIndex, pool: Table, params: RankingParams) -> Result<Self> {
        params.validate()?;
        if index.num_docs() != pool.len() as u64 {
            return Err(RimError::Data(format!(
                "index covers {} documents but the pool has {} rows",
                index.num_docs(),
                pool.len()
            )));
        }
        if index.num_fields() != pool.num_features() {
            return Err(RimError::Data(format!(
                "index has {} fields but the pool has {}",
                index.num_fields(),
                pool.num_features()
            )));
        }
        Ok(Retriever { index, pool, params })
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn pool(&self) -> &Table {
        &self.pool
    }

    pub fn params(&self) -> &RankingParams {
        &self.params
    }

    /// Union of the postings of every non-stopped query value, ascending.
    pub fn candidates(&self, query: &Query) -> Vec<DocId> {
        let mut docs = Vec::new();
        for (field, slot) in query.slots.iter().enumerate() {
            if self.index.is_stop_field(field) {
                continue;
            }
            for &v in slot.ids() {
                docs.extend_from_slice(self.index.posting(v));
            }
        }
        docs.sort_unstable();
        docs.dedup();
        docs
    }

    fn score_docs(&self, query: &Query, docs: impl Iterator<Item = DocId>) -> Vec<ScoredDoc> {
        let idfs: Vec<Option<f64>> = query
            .slots
            .iter()
            .enumerate()
            .map(|(f, q)| (!self.index.is_stop_field(f)).then(|| idf(&self.index, q)))
            .collect();
        let samples = self.pool.samples();
        docs.filter_map(|doc| {
            let s = &samples[doc as usize];
            if query.exclude == Some(s.id) {
                return None;
            }
            let mut score = 0.0;
            for ((q, d), w) in query.slots.iter().zip(&s.slots).zip(&idfs) {
                if let Some(w) = w {
                    score += self.params.field_term(*w, term_frequency(q, d));
                }
            }
            Some(ScoredDoc { doc, id: s.id, score })
        })
        .collect()
    }

    /// Scored top-K documents for `query`.
    pub fn topk_docs(&self, query: &Query, k: usize) -> Vec<ScoredDoc> {
        let scored = self.score_docs(query, self.candidates(query).into_iter());
        select_top(scored, k)
    }

    pub fn retrieve_topk(&self, query: &Query, k: usize) -> RetrievedSet {
        self.materialize(&self.topk_docs(query, k))
    }

    /// Top-K among candidates sharing the query's value(s) in `filter_field`.
    pub fn retrieve_filtered(&self, query: &Query, k: usize, filter_field: usize) -> Result<RetrievedSet> {
        let wanted = query
            .slots
            .get(filter_field)
            .ok_or_else(|| RimError::Config(format!("filter field {filter_field} out of range")))?;
        if wanted.ids().is_empty() {
            return Err(RimError::Config(format!(
                "filter field {filter_field} holds no categorical value"
            )));
        }
        let samples = self.pool.samples();
        let docs = self
            .candidates(query)
            .into_iter()
            .filter(|&d| sorted_intersection_len(samples[d as usize].slots[filter_field].ids(), wanted.ids()) > 0);
        let scored = self.score_docs(query, docs);
        Ok(self.materialize(&select_top(scored, k)))
    }

    /// Exhaustive scoring of every pool row that matches the query; used for
    /// cross-checking the index path.
    pub fn brute_force_topk(&self, query: &Query, k: usize) -> Vec<ScoredDoc> {
        let mut scored = Vec::new();
        for (doc, s) in self.pool.samples().iter().enumerate() {
            if query.exclude == Some(s.id) {
                continue;
            }
            let matches = query
                .slots
                .iter()
                .zip(&s.slots)
                .enumerate()
                .any(|(f, (q, d))| !self.index.is_stop_field(f) && term_frequency(q, d) > 0.0);
            if matches {
                scored.push(ScoredDoc {
                    doc: doc as DocId,
                    id: s.id,
                    score: bm25_score(query, s, &self.index, &self.params),
                });
            }
        }
        select_top(scored, k)
    }

    pub fn retrieve_random(&self, query: &Query, k: usize, seed: u64) -> RetrievedSet {
        retrieve_random(&self.pool, query, k, seed)
    }

    /// Dispatches on `mode`.
    pub fn retrieve(&self, mode: RetrievalMode, query: &Query, k: usize) -> Result<RetrievedSet> {
        Ok(match mode {
            RetrievalMode::Bm25 => self.retrieve_topk(query, k),
            RetrievalMode::Random { seed } => self.retrieve_random(query, k, seed),
            RetrievalMode::Filtered { field } => self.retrieve_filtered(query, k, field)?,
            RetrievalMode::None => RetrievedSet::default(),
        })
    }

    pub fn materialize(&self, docs: &[ScoredDoc]) -> RetrievedSet {
        materialize(&self.pool, docs)
    }
}

fn materialize(pool: &Table, docs: &[ScoredDoc]) -> RetrievedSet {
    RetrievedSet {
        neighbors: docs
            .iter()
            .map(|d| {
                let s = &pool.samples()[d.doc as usize];
                Neighbor {
                    id: s.id,
                    score: d.score,
                    slots: s.slots.clone(),
                    label: s.label,
                    class: s.class,
                }
            })
            .collect(),
    }
}

/// Keeps the best `k` entries under [`rank_order`], sorted.
pub fn select_top(mut scored: Vec<ScoredDoc>, k: usize) -> Vec<ScoredDoc> {
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored
}

/// Seeded uniform sample of `k` pool rows without replacement, excluding the
/// query's own id. Scores are 0; rows are returned in ascending id order.
pub fn retrieve_random(pool: &Table, query: &Query, k: usize, seed: u64) -> RetrievedSet {
    let eligible: Vec<usize> = (0..pool.len())
        .filter(|&r| query.exclude != Some(pool.samples()[r].id))
        .collect();
    let amount = k.min(eligible.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ query.target.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut docs: Vec<ScoredDoc> = rand::seq::index::sample(&mut rng, eligible.len(), amount)
        .into_iter()
        .map(|i| {
            let doc = eligible[i];
            ScoredDoc {
                doc: doc as DocId,
                id: pool.samples()[doc].id,
                score: 0.0,
            }
        })
        .collect();
    docs.sort_unstable_by(rank_order);
    materialize(pool, &docs)
}
