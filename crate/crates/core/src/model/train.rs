//! Loss, Adam, and the minibatch training loop.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::Table;
use crate::error::{Result, RimError};
use crate::metrics::binary_cross_entropy;
use crate::retrieval::RetrievedSet;
use crate::source::{gather, NeighborSource};

use super::{AdamConfig, ModelParams, ModelShape, TaskKind, TrainConfig};

/// Per-sample data loss.
pub fn sample_loss(y_hat: f64, y: f64, task: TaskKind) -> f64 {
    match task {
        TaskKind::Binary => binary_cross_entropy(y_hat, y),
        TaskKind::Regression => (y_hat - y).powi(2),
    }
}

/// Batch objective: mean data loss plus `λ‖θ‖²` over the weight blocks.
pub fn loss(predictions: &[f64], labels: &[f64], task: TaskKind, l2: f64, params: &ModelParams) -> f64 {
    let n = predictions.len().max(1) as f64;
    let data: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| sample_loss(p, y, task))
        .sum();
    data / n + l2 * params.weight_norm_sq()
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter block.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let blocks = params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(state.m.blocks_mut().into_iter().zip(state.v.blocks_mut()));
    for ((p, g), (m, v)) in blocks {
        for i in 0..p.values.len() {
            let gi = g.values[i];
            m.values[i] = cfg.beta1 * m.values[i] + (1.0 - cfg.beta1) * gi;
            v.values[i] = cfg.beta2 * v.values[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m.values[i] / c1;
            let v_hat = v.values[i] / c2;
            p.values[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Metric name to value on the evaluation split, when one was given.
    pub eval: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Owns the parameters and optimizer state across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams,
    adam: AdamState,
    grads: ModelParams,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, shape: ModelShape) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(shape, config.seed);
        Ok(Trainer {
            adam: AdamState::new(&params),
            grads: params.zeros_like(),
            params,
            config,
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Accumulates the objective's gradient for `rows` into the internal
    /// buffer and returns the summed data loss.
    fn batch_gradient(&mut self, table: &Table, neighbors: &[RetrievedSet], rows: &[usize]) -> Result<f64> {
        self.grads.fill_zero();
        let scale = 1.0 / rows.len() as f64;
        let mut total = 0.0;
        for &row in rows {
            let s = &table.samples()[row];
            let trace = self.params.forward(&s.slots, &neighbors[row])?;
            total += sample_loss(trace.y_hat, s.label, self.params.shape.task);
            self.params.backward(&trace, s.label, scale, &mut self.grads)?;
        }
        let l2 = self.config.l2;
        if l2 > 0.0 {
            for (g, p) in self.grads.blocks_mut().into_iter().zip(self.params.blocks()) {
                if p.decay {
                    for (gi, pi) in g.values.iter_mut().zip(p.values) {
                        *gi += 2.0 * l2 * pi;
                    }
                }
            }
        }
        Ok(total)
    }

    /// One pass over `table` in a seeded shuffled order; returns the mean
    /// per-sample data loss seen during the epoch.
    pub fn run_epoch(&mut self, table: &Table, neighbors: &[RetrievedSet]) -> Result<f64> {
        if neighbors.len() != table.len() {
            return Err(RimError::Data(format!(
                "{} retrieved sets for {} training rows",
                neighbors.len(),
                table.len()
            )));
        }
        if table.is_empty() {
            return Err(RimError::Data("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..table.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(1 + self.epoch as u64));
        order.shuffle(&mut rng);

        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            total += self.batch_gradient(table, neighbors, batch)?;
            if !self.grads.is_finite() {
                return Err(RimError::Numeric {
                    layer: "gradient".into(),
                    msg: format!("non-finite gradient in epoch {}", self.epoch),
                });
            }
            adam_step(
                &mut self.params,
                &self.grads,
                &mut self.adam,
                self.config.learning_rate,
                &self.config.adam,
            );
        }
        if !self.params.is_finite() {
            return Err(RimError::Numeric {
                layer: "adam".into(),
                msg: "parameters became non-finite".into(),
            });
        }
        self.epoch += 1;
        Ok(total / table.len() as f64)
    }
}

/// Trains for `config.epochs` epochs. Neighbors are fetched once up front.
pub fn train(config: &TrainConfig, task: TaskKind, train: &Table, source: &dyn NeighborSource) -> Result<TrainOutput> {
    let neighbors = gather(source, train)?;
    fit(config, task, train, &neighbors)
}

/// [`train`] with the training rows' neighbors already gathered.
pub fn fit(config: &TrainConfig, task: TaskKind, train: &Table, neighbors: &[RetrievedSet]) -> Result<TrainOutput> {
    let shape = ModelShape::for_table(train, config, task)?;
    let mut trainer = Trainer::new(config.clone(), shape)?;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let train_loss = trainer.run_epoch(train, neighbors)?;
        log::debug!("epoch {epoch}: train loss {train_loss:.6}");
        log.push(EpochLog {
            epoch,
            train_loss,
            eval: BTreeMap::new(),
        });
    }
    Ok(TrainOutput {
        params: trainer.params,
        log,
    })
}

/// Model outputs for every row of `targets`.
pub fn predict(params: &ModelParams, targets: &Table, neighbors: &[RetrievedSet]) -> Result<Vec<f64>> {
    if neighbors.len() != targets.len() {
        return Err(RimError::Data("one retrieved set per target required".into()));
    }
    targets
        .samples()
        .iter()
        .zip(neighbors)
        .map(|(s, n)| params.forward(&s.slots, n).map(|t| t.y_hat))
        .collect()
}
