//! Prediction module: embeddings, attention aggregation over the retrieved
//! rows, pairwise interactions over `[x_t, r, l]`, and an MLP whose output
//! layer also sees the aggregated label embedding directly.
//!
//! All gradients are derived by hand for this fixed architecture; see
//! [`network`] for the forward and reverse passes.

mod checkpoint;
mod network;
mod train;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Table;
use crate::error::{Result, RimError};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{softmax, ForwardTrace};
pub use train::{adam_step, fit, loss, predict, sample_loss, train, AdamState, EpochLog, TrainOutput, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Sigmoid output, cross-entropy loss. Also used for top-n ranking.
    Binary,
    /// Linear output, squared-error loss.
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    /// `e_p · e_q`
    Inner,
    /// `e_p^T Φ e_q` with one shared `d × d` kernel.
    Kernel,
    /// Shared micro-network on `[e_p, e_q]`.
    Micro,
}

impl InteractionKind {
    pub fn name(self) -> &'static str {
        match self {
            InteractionKind::Inner => "inner",
            InteractionKind::Kernel => "kernel",
            InteractionKind::Micro => "micro",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    /// Retrieval size K.
    pub k: usize,
    pub learning_rate: f64,
    /// L2 weight λ on all weight matrices (embeddings included, biases not).
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub interaction: InteractionKind,
    pub hidden: Vec<usize>,
    pub micro_hidden: Vec<usize>,
    pub adam: AdamConfig,
    /// When false the label path is removed (`l = 0`).
    pub use_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_dim: 16,
            k: 10,
            learning_rate: 5e-4,
            l2: 1e-4,
            batch_size: 100,
            epochs: 10,
            seed: 0,
            interaction: InteractionKind::Inner,
            hidden: vec![200, 80],
            micro_hidden: vec![40, 5],
            adam: AdamConfig::default(),
            use_labels: true,
        }
    }
}

impl TrainConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RimError::Config(m.to_string()));
        if self.embedding_dim == 0 || self.batch_size == 0 {
            return bad("embedding_dim and batch_size must be positive");
        }
        if self.hidden.contains(&0) || self.micro_hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        if !(self.l2 >= 0.0) || !(self.learning_rate > 0.0) {
            return bad("need l2 >= 0 and learning_rate > 0");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam parameters out of range");
        }
        Ok(())
    }
}

/// Everything that fixes the parameter shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelShape {
    pub num_fields: usize,
    pub dim: usize,
    pub vocab: usize,
    pub classes: usize,
    pub retrieval_size: usize,
    pub interaction: InteractionKind,
    pub hidden: Vec<usize>,
    pub micro_hidden: Vec<usize>,
    pub task: TaskKind,
    pub use_labels: bool,
}

impl ModelShape {
    pub fn for_table(table: &Table, config: &TrainConfig, task: TaskKind) -> Result<Self> {
        let classes = table
            .label_binning()
            .ok_or_else(|| RimError::Config("labels must be discretized before training".into()))?
            .classes as usize;
        Ok(ModelShape {
            num_fields: table.num_features(),
            dim: config.embedding_dim,
            vocab: table.vocab().len(),
            classes,
            retrieval_size: config.k,
            interaction: config.interaction,
            hidden: config.hidden.clone(),
            micro_hidden: config.micro_hidden.clone(),
            task,
            use_labels: config.use_labels,
        })
    }

    /// Blocks in `c_combine`: F target fields, F aggregated fields, one label block.
    pub fn num_blocks(&self) -> usize {
        2 * self.num_fields + 1
    }

    /// `(2F + 1)(2F) / 2`
    pub fn num_pairs(&self) -> usize {
        let p = self.num_blocks();
        p * (p - 1) / 2
    }

    /// Block pairs `(p, q)`, `p < q`, in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let p = self.num_blocks();
        (0..p).flat_map(|a| (a + 1..p).map(move |b| (a, b))).collect()
    }

    /// Length of `inp = [x_t, r, l, e_inter]`.
    pub fn input_dim(&self) -> usize {
        self.num_blocks() * self.dim + self.num_pairs()
    }

    fn last_hidden(&self) -> usize {
        self.hidden.last().copied().unwrap_or_else(|| self.input_dim())
    }
}

/// Fully connected layer, weights `outputs × inputs` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, &b)| b + dot(row, x))
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and input gradients into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut grad.weight[o * self.inputs..(o + 1) * self.inputs];
            for (w, &xi) in row.iter_mut().zip(x) {
                *w += g * xi;
            }
            grad.bias[o] += g;
        }
        if let Some(dx) = dx {
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                for (d, &w) in dx.iter_mut().zip(row) {
                    *d += w * g;
                }
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub enum InteractionParams {
    Inner,
    /// `d × d` row-major.
    Kernel(Vec<f64>),
    /// Hidden layers with ReLU, then a linear map to one scalar.
    Micro(Vec<Dense>),
}

/// All trainable parameters. Gradients and Adam moments reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    /// `V × d`
    pub embeddings: Vec<f64>,
    /// `L × d`
    pub label_embeddings: Vec<f64>,
    /// `Fd × Fd` bilinear attention matrix.
    pub attention: Vec<f64>,
    pub interaction: InteractionParams,
    pub mlp: Vec<Dense>,
    /// Maps `[last hidden, l]` to the output logit.
    pub output: Dense,
}

/// A view of one parameter block.
pub struct ParamBlock<'a> {
    pub name: String,
    pub values: &'a [f64],
    /// Weight matrices take the L2 penalty; biases do not.
    pub decay: bool,
}

pub struct ParamBlockMut<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub decay: bool,
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        let d = shape.dim;
        let fd = shape.num_fields * d;
        let interaction = match shape.interaction {
            InteractionKind::Inner => InteractionParams::Inner,
            InteractionKind::Kernel => InteractionParams::Kernel(vec![0.0; d * d]),
            InteractionKind::Micro => {
                let mut layers = Vec::new();
                let mut width = 2 * d;
                for &h in &shape.micro_hidden {
                    layers.push(Dense::zeros(width, h));
                    width = h;
                }
                layers.push(Dense::zeros(width, 1));
                InteractionParams::Micro(layers)
            }
        };
        let mut mlp = Vec::new();
        let mut width = shape.input_dim();
        for &h in &shape.hidden {
            mlp.push(Dense::zeros(width, h));
            width = h;
        }
        ModelParams {
            embeddings: vec![0.0; shape.vocab * d],
            label_embeddings: vec![0.0; shape.classes * d],
            attention: vec![0.0; fd * fd],
            interaction,
            mlp,
            output: Dense::zeros(shape.last_hidden() + d, 1),
            shape,
        }
    }

    /// Seeded initialization: embeddings uniform in `±1/√d`, weight matrices
    /// uniform in `±1/√fan_in`, biases zero.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut p = ModelParams::zeros(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = p.shape.dim;
        let fd = p.shape.num_fields * d;
        let mut fill = |values: &mut [f64], fan_in: usize| {
            let a = 1.0 / (fan_in.max(1) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a);
            for v in values {
                *v = dist.sample(&mut rng);
            }
        };
        fill(&mut p.embeddings, d);
        fill(&mut p.label_embeddings, d);
        fill(&mut p.attention, fd);
        match &mut p.interaction {
            InteractionParams::Inner => {}
            InteractionParams::Kernel(k) => fill(k, d),
            InteractionParams::Micro(layers) => {
                for l in layers {
                    fill(&mut l.weight, l.inputs);
                }
            }
        }
        for l in &mut p.mlp {
            fill(&mut l.weight, l.inputs);
        }
        fill(&mut p.output.weight, p.output.inputs);
        p
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.shape.clone())
    }

    /// Parameter blocks in canonical order (also the checkpoint order).
    pub fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = vec![
            ParamBlock {
                name: "embeddings".into(),
                values: &self.embeddings,
                decay: true,
            },
            ParamBlock {
                name: "label_embeddings".into(),
                values: &self.label_embeddings,
                decay: true,
            },
            ParamBlock {
                name: "attention".into(),
                values: &self.attention,
                decay: true,
            },
        ];
        match &self.interaction {
            InteractionParams::Inner => {}
            InteractionParams::Kernel(k) => out.push(ParamBlock {
                name: "interaction.kernel".into(),
                values: k,
                decay: true,
            }),
            InteractionParams::Micro(layers) => {
                for (i, l) in layers.iter().enumerate() {
                    out.push(ParamBlock {
                        name: format!("interaction.micro.{i}.weight"),
                        values: &l.weight,
                        decay: true,
                    });
                    out.push(ParamBlock {
                        name: format!("interaction.micro.{i}.bias"),
                        values: &l.bias,
                        decay: false,
                    });
                }
            }
        }
        for (i, l) in self.mlp.iter().enumerate() {
            out.push(ParamBlock {
                name: format!("mlp.{i}.weight"),
                values: &l.weight,
                decay: true,
            });
            out.push(ParamBlock {
                name: format!("mlp.{i}.bias"),
                values: &l.bias,
                decay: false,
            });
        }
        out.push(ParamBlock {
            name: "output.weight".into(),
            values: &self.output.weight,
            decay: true,
        });
        out.push(ParamBlock {
            name: "output.bias".into(),
            values: &self.output.bias,
            decay: false,
        });
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        let mut out = vec![
            ParamBlockMut {
                name: "embeddings".into(),
                values: &mut self.embeddings,
                decay: true,
            },
            ParamBlockMut {
                name: "label_embeddings".into(),
                values: &mut self.label_embeddings,
                decay: true,
            },
            ParamBlockMut {
                name: "attention".into(),
                values: &mut self.attention,
                decay: true,
            },
        ];
        match &mut self.interaction {
            InteractionParams::Inner => {}
            InteractionParams::Kernel(k) => out.push(ParamBlockMut {
                name: "interaction.kernel".into(),
                values: k,
                decay: true,
            }),
            InteractionParams::Micro(layers) => {
                for (i, l) in layers.iter_mut().enumerate() {
                    out.push(ParamBlockMut {
                        name: format!("interaction.micro.{i}.weight"),
                        values: &mut l.weight,
                        decay: true,
                    });
                    out.push(ParamBlockMut {
                        name: format!("interaction.micro.{i}.bias"),
                        values: &mut l.bias,
                        decay: false,
                    });
                }
            }
        }
        for (i, l) in self.mlp.iter_mut().enumerate() {
            out.push(ParamBlockMut {
                name: format!("mlp.{i}.weight"),
                values: &mut l.weight,
                decay: true,
            });
            out.push(ParamBlockMut {
                name: format!("mlp.{i}.bias"),
                values: &mut l.bias,
                decay: false,
            });
        }
        out.push(ParamBlockMut {
            name: "output.weight".into(),
            values: &mut self.output.weight,
            decay: true,
        });
        out.push(ParamBlockMut {
            name: "output.bias".into(),
            values: &mut self.output.bias,
            decay: false,
        });
        out
    }

    /// `‖θ‖²` over the decayed (weight) blocks.
    pub fn weight_norm_sq(&self) -> f64 {
        self.blocks()
            .iter()
            .filter(|b| b.decay)
            .map(|b| b.values.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn fill_zero(&mut self) {
        for b in self.blocks_mut() {
            b.values.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.values.iter().all(|v| v.is_finite()))
    }

    /// Embedding row of feature `id`.
    pub fn embedding(&self, id: u32) -> &[f64] {
        let d = self.shape.dim;
        &self.embeddings[id as usize * d..(id as usize + 1) * d]
    }

    pub fn label_embedding(&self, class: u32) -> &[f64] {
        let d = self.shape.dim;
        &self.label_embeddings[class as usize * d..(class as usize + 1) * d]
    }
}
