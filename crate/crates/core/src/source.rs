//! Where a target's neighbors come from during training and prediction.

use std::collections::{BTreeSet, HashMap};

use crate::cache::RetrievalCache;
use crate::dataset::{FoldAssignment, Sample, SampleId, Table};
use crate::error::{Result, RimError};
use crate::index::build_index;
use crate::retrieval::{make_query, RankingParams, RetrievalMode, RetrievedSet, Retriever};

pub trait NeighborSource: Send + Sync {
    fn neighbors(&self, target: &Sample) -> Result<RetrievedSet>;
}

/// Retrieval from one fixed pool (the global-time setting, or test targets
/// retrieving from the whole training set).
#[derive(Debug, Clone)]
pub struct PoolSource {
    pub retriever: Retriever,
    pub mode: RetrievalMode,
    pub k: usize,
}

impl NeighborSource for PoolSource {
    fn neighbors(&self, target: &Sample) -> Result<RetrievedSet> {
        self.retriever.retrieve(self.mode, &make_query(target), self.k)
    }
}

/// k-fold protocol: a training target in fold `i` retrieves from the other
/// folds; any other target retrieves from the full training set.
#[derive(Debug, Clone)]
pub struct KFoldSource {
    folds: Vec<Retriever>,
    fold_of: HashMap<SampleId, usize>,
    full: Retriever,
    mode: RetrievalMode,
    k: usize,
}

impl KFoldSource {
    /// Builds one index per fold plus one over all of `train`. Stop-fields
    /// are shared, fixed from the full training set.
    pub fn build(
        train: &Table,
        folds: &FoldAssignment,
        stop_fields: &BTreeSet<usize>,
        params: RankingParams,
        mode: RetrievalMode,
        k: usize,
    ) -> Result<Self> {
        let mut fold_retrievers = Vec::with_capacity(folds.k());
        for i in 0..folds.k() {
            let pool = train.select(&folds.pool_rows(i));
            let index = build_index(&pool, stop_fields)?;
            fold_retrievers.push(Retriever::new(index, pool, params)?);
        }
        let fold_of = train
            .samples()
            .iter()
            .enumerate()
            .map(|(row, s)| (s.id, folds.fold_of(row)))
            .collect();
        let full = Retriever::new(build_index(train, stop_fields)?, train.clone(), params)?;
        Ok(KFoldSource {
            folds: fold_retrievers,
            fold_of,
            full,
            mode,
            k,
        })
    }

    pub fn full(&self) -> &Retriever {
        &self.full
    }

    pub fn retriever_for(&self, target: SampleId) -> &Retriever {
        match self.fold_of.get(&target) {
            Some(&f) => &self.folds[f],
            None => &self.full,
        }
    }
}

impl NeighborSource for KFoldSource {
    fn neighbors(&self, target: &Sample) -> Result<RetrievedSet> {
        self.retriever_for(target.id)
            .retrieve(self.mode, &make_query(target), self.k)
    }
}

/// Serves precomputed results; a target missing from the cache is an error.
#[derive(Debug, Clone)]
pub struct CacheSource {
    pub cache: RetrievalCache,
}

impl NeighborSource for CacheSource {
    fn neighbors(&self, target: &Sample) -> Result<RetrievedSet> {
        self.cache
            .get(target.id)
            .cloned()
            .ok_or_else(|| RimError::Data(format!("target {} not in retrieval cache", target.id)))
    }
}

/// Retrieval disabled: every target gets an empty set.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoRetrieval;

impl NeighborSource for NoRetrieval {
    fn neighbors(&self, _target: &Sample) -> Result<RetrievedSet> {
        Ok(RetrievedSet::default())
    }
}

/// Runs `source` for every sample of `targets`.
pub fn gather(source: &dyn NeighborSource, targets: &Table) -> Result<Vec<RetrievedSet>> {
    targets.samples().iter().map(|t| source.neighbors(t)).collect()
}
