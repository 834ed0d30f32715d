//! Forward pass with cached intermediates, and the matching reverse pass.

use crate::dataset::Slot;
use crate::error::{Result, RimError};
use crate::retrieval::RetrievedSet;

use super::{dot, InteractionParams, ModelParams, TaskKind};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NeighborTrace {
    pub ids: Vec<Vec<u32>>,
    pub class: Option<u32>,
    pub x: Vec<f64>,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub(crate) target_ids: Vec<Vec<u32>>,
    /// Neighbors in ascending sample-id order.
    pub(crate) neighbors: Vec<NeighborTrace>,
    /// Target embedding `x_t` (length Fd).
    pub x_t: Vec<f64>,
    /// `W x_t`
    pub(crate) u: Vec<f64>,
    pub logits: Vec<f64>,
    /// Attention weights, aligned with neighbors sorted by sample id.
    pub alpha: Vec<f64>,
    /// Aggregated neighbor features (length Fd).
    pub r: Vec<f64>,
    /// Aggregated neighbor label embedding (length d).
    pub l: Vec<f64>,
    /// Pairwise interaction outputs, lexicographic in `(p, q)`.
    pub e_inter: Vec<f64>,
    /// Hidden activations of the micro-network per pair.
    pub(crate) micro_acts: Vec<Vec<Vec<f64>>>,
    /// `[x_t, r, l, e_inter]`
    pub inp: Vec<f64>,
    /// Post-ReLU activations of each MLP layer.
    pub hidden: Vec<Vec<f64>>,
    /// `[last hidden, l]`
    pub(crate) output_input: Vec<f64>,
    pub logit: f64,
    pub y_hat: f64,
}

fn check_finite(values: &[f64], layer: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(RimError::Numeric {
            layer: layer.to_string(),
            msg: "non-finite activation".into(),
        })
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

impl ModelParams {
    fn slot_ids(&self, slots: &[Slot]) -> Result<Vec<Vec<u32>>> {
        if slots.len() != self.shape.num_fields {
            return Err(RimError::Data(format!(
                "sample has {} fields, model expects {}",
                slots.len(),
                self.shape.num_fields
            )));
        }
        slots
            .iter()
            .map(|slot| {
                if slot.is_raw() {
                    return Err(RimError::Data("numeric field not discretized".into()));
                }
                let ids = slot.ids().to_vec();
                if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.shape.vocab) {
                    return Err(RimError::Data(format!(
                        "feature id {bad} out of range (V = {})",
                        self.shape.vocab
                    )));
                }
                Ok(ids)
            })
            .collect()
    }

    /// Concatenated field embeddings; a multi-valued slot is the mean of its
    /// values' embeddings.
    fn embed_ids(&self, ids: &[Vec<u32>]) -> Vec<f64> {
        let d = self.shape.dim;
        let mut x = vec![0.0; ids.len() * d];
        for (field, values) in ids.iter().enumerate() {
            if values.is_empty() {
                continue;
            }
            let block = &mut x[field * d..(field + 1) * d];
            for &id in values {
                for (b, e) in block.iter_mut().zip(self.embedding(id)) {
                    *b += e;
                }
            }
            if values.len() > 1 {
                let m = values.len() as f64;
                for b in block.iter_mut() {
                    *b /= m;
                }
            }
        }
        x
    }

    /// Embeds one row: `F · d` values.
    pub fn embed_sample(&self, slots: &[Slot]) -> Result<Vec<f64>> {
        Ok(self.embed_ids(&self.slot_ids(slots)?))
    }

    /// Attention weights of `neighbors` (each an embedded row) for target `x_t`.
    pub fn attention_weights(&self, x_t: &[f64], neighbors: &[Vec<f64>]) -> Vec<f64> {
        let u = self.attention_times(x_t);
        let logits: Vec<f64> = neighbors.iter().map(|x| dot(x, &u)).collect();
        softmax(&logits)
    }

    fn attention_times(&self, x_t: &[f64]) -> Vec<f64> {
        let fd = x_t.len();
        self.attention.chunks_exact(fd).map(|row| dot(row, x_t)).collect()
    }

    /// Interaction outputs for the blocks in `combined` (length `(2F+1)·d`).
    pub fn interact(&self, combined: &[f64]) -> Vec<f64> {
        self.interact_traced(combined).0
    }

    fn interact_traced(&self, combined: &[f64]) -> (Vec<f64>, Vec<Vec<Vec<f64>>>) {
        let d = self.shape.dim;
        let block = |p: usize| &combined[p * d..(p + 1) * d];
        let pairs = self.shape.pairs();
        let mut out = Vec::with_capacity(pairs.len());
        let mut acts = Vec::new();
        match &self.interaction {
            InteractionParams::Inner => {
                for (p, q) in pairs {
                    out.push(dot(block(p), block(q)));
                }
            }
            InteractionParams::Kernel(kernel) => {
                for (p, q) in pairs {
                    let kq: Vec<f64> = kernel.chunks_exact(d).map(|row| dot(row, block(q))).collect();
                    out.push(dot(block(p), &kq));
                }
            }
            InteractionParams::Micro(layers) => {
                for (p, q) in pairs {
                    let mut h: Vec<f64> = block(p).iter().chain(block(q)).copied().collect();
                    let mut pair_acts = Vec::with_capacity(layers.len() - 1);
                    for layer in &layers[..layers.len() - 1] {
                        h = layer.forward(&h);
                        relu_in_place(&mut h);
                        pair_acts.push(h.clone());
                    }
                    out.push(layers[layers.len() - 1].forward(&h)[0]);
                    acts.push(pair_acts);
                }
            }
        }
        (out, acts)
    }

    /// Full forward pass for one target and its retrieved set.
    pub fn forward(&self, target: &[Slot], retrieved: &RetrievedSet) -> Result<ForwardTrace> {
        let shape = &self.shape;
        let d = shape.dim;
        let fd = shape.num_fields * d;

        let target_ids = self.slot_ids(target)?;
        let x_t = self.embed_ids(&target_ids);

        // canonical summation order, independent of how neighbors were listed
        let mut ordered: Vec<_> = retrieved.neighbors.iter().collect();
        ordered.sort_by_key(|n| n.id);
        let mut neighbors = Vec::with_capacity(ordered.len());
        for n in ordered {
            let ids = self.slot_ids(&n.slots)?;
            let class = if shape.use_labels {
                let c = n
                    .class
                    .ok_or_else(|| RimError::Data(format!("neighbor {} has no label class", n.id)))?;
                if c as usize >= shape.classes {
                    return Err(RimError::Data(format!(
                        "label class {c} out of range (L = {})",
                        shape.classes
                    )));
                }
                Some(c)
            } else {
                None
            };
            let x = self.embed_ids(&ids);
            neighbors.push(NeighborTrace { ids, class, x });
        }

        let u = self.attention_times(&x_t);
        let logits: Vec<f64> = neighbors.iter().map(|n| dot(&n.x, &u)).collect();
        check_finite(&logits, "attention")?;
        let alpha = softmax(&logits);

        let mut r = vec![0.0; fd];
        let mut l = vec![0.0; d];
        for (n, &a) in neighbors.iter().zip(&alpha) {
            for (ri, xi) in r.iter_mut().zip(&n.x) {
                *ri += a * xi;
            }
            if let Some(c) = n.class {
                for (li, ei) in l.iter_mut().zip(self.label_embedding(c)) {
                    *li += a * ei;
                }
            }
        }

        let mut inp = Vec::with_capacity(shape.input_dim());
        inp.extend_from_slice(&x_t);
        inp.extend_from_slice(&r);
        inp.extend_from_slice(&l);
        let (e_inter, micro_acts) = self.interact_traced(&inp);
        check_finite(&e_inter, "interaction")?;
        inp.extend_from_slice(&e_inter);

        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(self.mlp.len());
        for (i, layer) in self.mlp.iter().enumerate() {
            let mut h = layer.forward(hidden.last().unwrap_or(&inp));
            relu_in_place(&mut h);
            check_finite(&h, &format!("mlp.{i}"))?;
            hidden.push(h);
        }
        let mut output_input = hidden.last().unwrap_or(&inp).clone();
        output_input.extend_from_slice(&l);
        let logit = self.output.forward(&output_input)[0];
        let y_hat = match shape.task {
            TaskKind::Binary => sigmoid(logit),
            TaskKind::Regression => logit,
        };
        check_finite(&[y_hat], "output")?;

        Ok(ForwardTrace {
            target_ids,
            neighbors,
            x_t,
            u,
            logits,
            alpha,
            r,
            l,
            e_inter,
            micro_acts,
            inp,
            hidden,
            output_input,
            logit,
            y_hat,
        })
    }

    /// Reverse pass: adds `scale · ∂loss/∂θ` of the data term into `grads`.
    pub fn backward(&self, trace: &ForwardTrace, y: f64, scale: f64, grads: &mut ModelParams) -> Result<()> {
        let shape = &self.shape;
        if grads.shape != *shape || trace.x_t.len() != shape.num_fields * shape.dim {
            return Err(RimError::Data(
                "trace or gradient shape does not match the model".into(),
            ));
        }
        let d = shape.dim;
        let fd = shape.num_fields * d;

        let dz = scale
            * match shape.task {
                TaskKind::Binary => trace.y_hat - y,
                TaskKind::Regression => 2.0 * (trace.y_hat - y),
            };

        // output layer over [last hidden, l]
        let mut d_out_in = vec![0.0; trace.output_input.len()];
        self.output
            .backward(&trace.output_input, &[dz], &mut grads.output, Some(&mut d_out_in));
        let h_last = d_out_in.len() - d;
        let mut d_l = d_out_in[h_last..].to_vec();
        let mut d_h = d_out_in;
        d_h.truncate(h_last);

        for i in (0..self.mlp.len()).rev() {
            for (g, &a) in d_h.iter_mut().zip(&trace.hidden[i]) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let input = if i == 0 { &trace.inp } else { &trace.hidden[i - 1] };
            let mut d_in = vec![0.0; input.len()];
            self.mlp[i].backward(input, &d_h, &mut grads.mlp[i], Some(&mut d_in));
            d_h = d_in;
        }
        let d_inp = d_h;

        let combined_len = shape.num_blocks() * d;
        let mut d_comb = d_inp[..combined_len].to_vec();
        self.interaction_backward(trace, &d_inp[combined_len..], &mut d_comb, grads);

        let mut d_x_t = d_comb[..fd].to_vec();
        let d_r = &d_comb[fd..2 * fd];
        for (a, b) in d_l.iter_mut().zip(&d_comb[2 * fd..]) {
            *a += b;
        }

        // aggregation: r = Σ α_k x_k, l = Σ α_k Λ[y_k]
        let k = trace.neighbors.len();
        let mut d_alpha = vec![0.0; k];
        let mut d_xs: Vec<Vec<f64>> = Vec::with_capacity(k);
        for (j, (n, &a)) in trace.neighbors.iter().zip(&trace.alpha).enumerate() {
            d_alpha[j] = dot(&n.x, d_r);
            d_xs.push(d_r.iter().map(|g| a * g).collect());
            if let Some(c) = n.class {
                d_alpha[j] += dot(self.label_embedding(c), &d_l);
                let row = &mut grads.label_embeddings[c as usize * d..(c as usize + 1) * d];
                for (g, dl) in row.iter_mut().zip(&d_l) {
                    *g += a * dl;
                }
            }
        }

        // softmax, then logits s_k = x_k · u with u = W x_t
        let weighted: f64 = trace.alpha.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
        let mut d_u = vec![0.0; fd];
        for (j, n) in trace.neighbors.iter().enumerate() {
            let d_logit = trace.alpha[j] * (d_alpha[j] - weighted);
            if d_logit == 0.0 {
                continue;
            }
            for (du, x) in d_u.iter_mut().zip(&n.x) {
                *du += d_logit * x;
            }
            for (dx, u) in d_xs[j].iter_mut().zip(&trace.u) {
                *dx += d_logit * u;
            }
        }
        for (i, &du) in d_u.iter().enumerate() {
            if du == 0.0 {
                continue;
            }
            let w_row = &self.attention[i * fd..(i + 1) * fd];
            let g_row = &mut grads.attention[i * fd..(i + 1) * fd];
            for ((g, x), (dx, w)) in g_row.iter_mut().zip(&trace.x_t).zip(d_x_t.iter_mut().zip(w_row)) {
                *g += du * x;
                *dx += w * du;
            }
        }

        scatter_embedding_grad(&trace.target_ids, &d_x_t, d, &mut grads.embeddings);
        for (n, dx) in trace.neighbors.iter().zip(&d_xs) {
            scatter_embedding_grad(&n.ids, dx, d, &mut grads.embeddings);
        }
        Ok(())
    }

    fn interaction_backward(&self, trace: &ForwardTrace, d_inter: &[f64], d_comb: &mut [f64], grads: &mut ModelParams) {
        let d = self.shape.dim;
        let comb = &trace.inp[..self.shape.num_blocks() * d];
        let block = |p: usize| &comb[p * d..(p + 1) * d];
        let pairs = self.shape.pairs();
        match (&self.interaction, &mut grads.interaction) {
            (InteractionParams::Inner, _) => {
                for (&(p, q), &g) in pairs.iter().zip(d_inter) {
                    for i in 0..d {
                        d_comb[p * d + i] += g * block(q)[i];
                        d_comb[q * d + i] += g * block(p)[i];
                    }
                }
            }
            (InteractionParams::Kernel(kernel), InteractionParams::Kernel(g_kernel)) => {
                for (&(p, q), &g) in pairs.iter().zip(d_inter) {
                    if g == 0.0 {
                        continue;
                    }
                    let (ep, eq) = (block(p), block(q));
                    for i in 0..d {
                        let row = &kernel[i * d..(i + 1) * d];
                        // ∂/∂e_p = Φ e_q
                        d_comb[p * d + i] += g * dot(row, eq);
                        for j in 0..d {
                            g_kernel[i * d + j] += g * ep[i] * eq[j];
                            // ∂/∂e_q = Φᵀ e_p
                            d_comb[q * d + j] += g * row[j] * ep[i];
                        }
                    }
                }
            }
            (InteractionParams::Micro(layers), InteractionParams::Micro(g_layers)) => {
                let last = layers.len() - 1;
                for (idx, (&(p, q), &g)) in pairs.iter().zip(d_inter).enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let acts = &trace.micro_acts[idx];
                    let z: Vec<f64> = block(p).iter().chain(block(q)).copied().collect();
                    let mut d_h = vec![0.0; layers[last].inputs];
                    let top_in = acts.last().unwrap_or(&z);
                    layers[last].backward(top_in, &[g], &mut g_layers[last], Some(&mut d_h));
                    for i in (0..last).rev() {
                        for (dh, &a) in d_h.iter_mut().zip(&acts[i]) {
                            if a <= 0.0 {
                                *dh = 0.0;
                            }
                        }
                        let input = if i == 0 { &z } else { &acts[i - 1] };
                        let mut d_in = vec![0.0; input.len()];
                        layers[i].backward(input, &d_h, &mut g_layers[i], Some(&mut d_in));
                        d_h = d_in;
                    }
                    for i in 0..d {
                        d_comb[p * d + i] += d_h[i];
                        d_comb[q * d + i] += d_h[d + i];
                    }
                }
            }
            _ => unreachable!("gradient buffer shaped like the model"),
        }
    }
}

fn scatter_embedding_grad(ids: &[Vec<u32>], dx: &[f64], d: usize, grads: &mut [f64]) {
    for (field, values) in ids.iter().enumerate() {
        if values.is_empty() {
            continue;
        }
        let m = values.len() as f64;
        let block = &dx[field * d..(field + 1) * d];
        for &id in values {
            let row = &mut grads[id as usize * d..(id as usize + 1) * d];
            for (g, b) in row.iter_mut().zip(block) {
                *g += if values.len() > 1 { b / m } else { *b };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::tests::shape;
    use crate::model::InteractionKind;
    use crate::retrieval::Neighbor;

    const KINDS: [InteractionKind; 3] = [InteractionKind::Inner, InteractionKind::Kernel, InteractionKind::Micro];

    fn random_slots(rng: &mut ChaCha8Rng, f: usize, vocab: u32) -> Vec<Slot> {
        (0..f)
            .map(|field| {
                if field == 1 {
                    let mut v: Vec<u32> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..vocab)).collect();
                    v.sort_unstable();
                    v.dedup();
                    Slot::Many(v)
                } else {
                    Slot::One(rng.gen_range(0..vocab))
                }
            })
            .collect()
    }

    fn random_case(seed: u64, f: usize, k: usize, vocab: u32) -> (Vec<Slot>, RetrievedSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = random_slots(&mut rng, f, vocab);
        let neighbors = (0..k)
            .map(|i| {
                let class = rng.gen_range(0..2u32);
                Neighbor {
                    id: 10 + (k - i) as u64,
                    score: 1.0,
                    slots: random_slots(&mut rng, f, vocab),
                    label: f64::from(class),
                    class: Some(class),
                }
            })
            .collect();
        (target, RetrievedSet { neighbors })
    }

    fn objective(p: &ModelParams, target: &[Slot], set: &RetrievedSet, y: f64) -> f64 {
        let y_hat = p.forward(target, set).unwrap().y_hat;
        super::super::sample_loss(y_hat, y, p.shape.task)
    }

    /// Central differences on every parameter; relative error per block.
    fn gradient_check(p: &mut ModelParams, target: &[Slot], set: &RetrievedSet, y: f64) {
        let h = 1e-5;
        let trace = p.forward(target, set).unwrap();
        let mut analytic = p.zeros_like();
        p.backward(&trace, y, 1.0, &mut analytic).unwrap();

        let n_blocks = p.blocks().len();
        for b in 0..n_blocks {
            let len = p.blocks()[b].values.len();
            let mut numeric = vec![0.0; len];
            for (i, slot) in numeric.iter_mut().enumerate() {
                let orig = p.blocks()[b].values[i];
                p.blocks_mut()[b].values[i] = orig + h;
                let plus = objective(p, target, set, y);
                p.blocks_mut()[b].values[i] = orig - h;
                let minus = objective(p, target, set, y);
                p.blocks_mut()[b].values[i] = orig;
                *slot = (plus - minus) / (2.0 * h);
            }
            let blocks = analytic.blocks();
            let a = blocks[b].values;
            let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let norm: f64 =
                a.iter().map(|x| x * x).sum::<f64>().sqrt() + numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
            let rel = if norm < 1e-9 { diff } else { diff / norm };
            assert!(rel < 1e-4, "block {} relative error {rel:e}", blocks[b].name);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in KINDS {
            for seed in 0..5 {
                let mut p = ModelParams::init(shape(3, 4, kind), 100 + seed);
                // nonzero biases exercise those paths and keep pre-activations off the ReLU kink
                for b in p.blocks_mut() {
                    if !b.decay {
                        b.values
                            .iter_mut()
                            .enumerate()
                            .for_each(|(i, v)| *v = 0.05 * ((i % 5) as f64 - 2.0) + 0.013);
                    }
                }
                let (target, set) = random_case(seed, 3, 2, 12);
                gradient_check(&mut p, &target, &set, (seed % 2) as f64);
            }
        }
    }

    #[test]
    fn regression_gradients_match_finite_differences() {
        for kind in KINDS {
            let mut s = shape(3, 4, kind);
            s.task = TaskKind::Regression;
            let mut p = ModelParams::init(s, 7);
            let (target, set) = random_case(3, 3, 2, 12);
            gradient_check(&mut p, &target, &set, 0.7);
        }
    }

    #[test]
    fn gradients_without_labels_or_neighbors() {
        let mut s = shape(3, 4, InteractionKind::Kernel);
        s.use_labels = false;
        let mut p = ModelParams::init(s, 1);
        let (target, set) = random_case(4, 3, 2, 12);
        gradient_check(&mut p, &target, &set, 1.0);
        let mut q = ModelParams::init(shape(3, 4, InteractionKind::Inner), 2);
        gradient_check(&mut q, &target, &RetrievedSet::default(), 0.0);
    }

    #[test]
    fn softmax_examples() {
        let a = softmax(&[0.0, 0.0]);
        assert_eq!(a, vec![0.5, 0.5]);
        let b = softmax(&[1000.0, 0.0]);
        assert!((b[0] - 1.0).abs() < 1e-15 && b[1] >= 0.0 && b[1] < 1e-300);
        let c = softmax(&[1.0, 2.0, 3.0]);
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_retrieval_gives_zero_aggregates() {
        let p = ModelParams::init(shape(3, 4, InteractionKind::Inner), 3);
        let (target, _) = random_case(1, 3, 0, 12);
        let t = p.forward(&target, &RetrievedSet::default()).unwrap();
        assert!(t.r.iter().all(|&v| v == 0.0));
        assert!(t.l.iter().all(|&v| v == 0.0));
        assert!(t.alpha.is_empty());
    }

    #[test]
    fn disabled_labels_zero_l() {
        let mut s = shape(3, 4, InteractionKind::Inner);
        s.use_labels = false;
        let p = ModelParams::init(s, 3);
        let (target, set) = random_case(2, 3, 3, 12);
        let t = p.forward(&target, &set).unwrap();
        assert!(t.l.iter().all(|&v| v == 0.0));
        assert!(t.r.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn neighbor_order_does_not_matter() {
        let p = ModelParams::init(shape(3, 4, InteractionKind::Micro), 4);
        let (target, set) = random_case(5, 3, 4, 12);
        let mut rev = set.clone();
        rev.neighbors.reverse();
        let a = p.forward(&target, &set).unwrap();
        let b = p.forward(&target, &rev).unwrap();
        assert_eq!(a.y_hat.to_bits(), b.y_hat.to_bits());
    }

    #[test]
    fn identity_kernel_equals_inner_product() {
        let s = shape(3, 4, InteractionKind::Kernel);
        let mut p = ModelParams::init(s.clone(), 6);
        if let InteractionParams::Kernel(k) = &mut p.interaction {
            k.fill(0.0);
            for i in 0..4 {
                k[i * 4 + i] = 1.0;
            }
        }
        let mut inner = p.clone();
        inner.interaction = InteractionParams::Inner;
        let comb: Vec<f64> = (0..s.num_blocks() * 4).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = p.interact(&comb);
        let b = inner.interact(&comb);
        assert_eq!(a.len(), s.num_pairs());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn multi_value_slot_is_mean_embedding() {
        let p = ModelParams::init(shape(1, 4, InteractionKind::Inner), 8);
        let x = p.embed_sample(&[Slot::Many(vec![2, 5])]).unwrap();
        for (i, v) in x.iter().enumerate() {
            let mean = (p.embedding(2)[i] + p.embedding(5)[i]) / 2.0;
            assert!((v - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn untouched_embeddings_get_no_data_gradient() {
        let p = ModelParams::init(shape(3, 4, InteractionKind::Inner), 9);
        let (target, set) = random_case(6, 3, 2, 6);
        let mut g = p.zeros_like();
        let t = p.forward(&target, &set).unwrap();
        p.backward(&t, 1.0, 1.0, &mut g).unwrap();
        // ids >= 6 never appear
        assert!(g.embeddings[6 * 4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn raw_slot_is_rejected() {
        let p = ModelParams::init(shape(1, 4, InteractionKind::Inner), 8);
        assert!(p.embed_sample(&[Slot::Raw(Some(1.0))]).is_err());
    }
}
