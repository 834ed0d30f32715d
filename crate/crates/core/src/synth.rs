//! Seeded synthetic tables for tests, benchmarks and the demo.

use rand::distributions::{Distribution, Uniform};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureVocab, FieldKind, FieldSpec, Sample, Schema, Slot, Table};
use crate::error::{Result, RimError};

/// Rows grouped so that a row's label is a noisy copy of its group's
/// propensity. Each group has rows in the pool (`ts = 0`) and rows that are
/// all in train (`ts = 1`) or all in test (`ts = 2`), so test groups are
/// never seen during training and only the pool reveals their labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborSignalSpec {
    pub groups: usize,
    pub pool_per_group: usize,
    pub targets_per_group: usize,
    /// Share of groups whose target rows go to train.
    pub train_group_fraction: f64,
    /// Probability that a row's label disagrees with its group.
    pub noise: f64,
    pub segments: usize,
    pub items: usize,
    pub tags: usize,
    pub max_tags: usize,
    pub seed: u64,
}

impl Default for NeighborSignalSpec {
    fn default() -> Self {
        NeighborSignalSpec {
            groups: 1000,
            pool_per_group: 10,
            targets_per_group: 10,
            train_group_fraction: 0.7,
            noise: 0.05,
            segments: 40,
            items: 100,
            tags: 30,
            max_tags: 3,
            seed: 0,
        }
    }
}

impl NeighborSignalSpec {
    pub fn rows(&self) -> usize {
        self.groups * (self.pool_per_group + self.targets_per_group)
    }

    /// Split times separating pool, train and test.
    pub const T1: i64 = 1;
    pub const T2: i64 = 2;
}

/// Schema `id, group, segment, item, tags (multi), gender, ts, y`.
pub fn neighbor_signal(spec: &NeighborSignalSpec) -> Result<Table> {
    if spec.groups == 0 || spec.segments == 0 || spec.items == 0 || spec.tags == 0 || spec.max_tags == 0 {
        return Err(RimError::Config("neighbor-signal spec needs positive sizes".into()));
    }
    if !(0.0..=0.5).contains(&spec.noise) || !(0.0..=1.0).contains(&spec.train_group_fraction) {
        return Err(RimError::Config(
            "noise must be in [0, 0.5], train_group_fraction in [0, 1]".into(),
        ));
    }
    let schema = Schema::new(vec![
        FieldSpec::new("id", FieldKind::SampleId),
        FieldSpec::new("group", FieldKind::Categorical),
        FieldSpec::new("segment", FieldKind::Categorical),
        FieldSpec::new("item", FieldKind::Categorical),
        FieldSpec::new("tags", FieldKind::MultiCategorical),
        FieldSpec::new("gender", FieldKind::Categorical),
        FieldSpec::new("ts", FieldKind::Timestamp),
        FieldSpec::new("y", FieldKind::Label),
    ])?;
    let mut vocab = FeatureVocab::new(schema.num_features());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let n_train_groups = (spec.groups as f64 * spec.train_group_fraction).round() as usize;
    let mut group_order: Vec<usize> = (0..spec.groups).collect();
    rand::seq::SliceRandom::shuffle(group_order.as_mut_slice(), &mut rng);
    let mut in_train = vec![false; spec.groups];
    for &g in &group_order[..n_train_groups] {
        in_train[g] = true;
    }

    let mut samples = Vec::with_capacity(spec.rows());
    let per_group = spec.pool_per_group + spec.targets_per_group;
    for (g, &train_group) in in_train.iter().enumerate() {
        let high = rng.gen_bool(0.5);
        let p = if high { 1.0 - spec.noise } else { spec.noise };
        for j in 0..per_group {
            let ts = if j < spec.pool_per_group {
                0
            } else if train_group {
                NeighborSignalSpec::T1
            } else {
                NeighborSignalSpec::T2
            };
            let n_tags = rng.gen_range(1..=spec.max_tags.min(spec.tags));
            let tags: Vec<u32> = sample(&mut rng, spec.tags, n_tags)
                .into_iter()
                .map(|t| vocab.intern(3, &format!("t{t}")))
                .collect();
            let slots = vec![
                Slot::One(vocab.intern(0, &format!("g{g}"))),
                Slot::One(vocab.intern(1, &format!("s{}", g % spec.segments))),
                Slot::One(vocab.intern(2, &format!("i{}", rng.gen_range(0..spec.items)))),
                Slot::many(tags),
                Slot::One(vocab.intern(4, if rng.gen_bool(0.5) { "f" } else { "m" })),
            ];
            let label = f64::from(u8::from(rng.gen_bool(p)));
            samples.push(Sample {
                id: samples.len() as u64,
                slots,
                label,
                class: None,
                timestamp: Some(ts),
            });
        }
    }
    Table::new(schema, vocab, samples)
}

/// Shape of a random pool: per-field cardinalities, and which fields are
/// multi-valued (with up to `max_values` values each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomTableSpec {
    pub rows: usize,
    pub cardinalities: Vec<usize>,
    pub multi_fields: Vec<usize>,
    pub max_values: usize,
    pub seed: u64,
}

/// Uniformly random values per field, binary labels.
pub fn random_table(spec: &RandomTableSpec) -> Result<Table> {
    if spec.cardinalities.is_empty() || spec.cardinalities.contains(&0) || spec.max_values == 0 {
        return Err(RimError::Config("random table needs positive cardinalities".into()));
    }
    if let Some(&f) = spec.multi_fields.iter().find(|&&f| f >= spec.cardinalities.len()) {
        return Err(RimError::Config(format!("multi field {f} out of range")));
    }
    let mut fields: Vec<FieldSpec> = spec
        .cardinalities
        .iter()
        .enumerate()
        .map(|(f, _)| {
            let kind = if spec.multi_fields.contains(&f) {
                FieldKind::MultiCategorical
            } else {
                FieldKind::Categorical
            };
            FieldSpec::new(format!("f{f}"), kind)
        })
        .collect();
    fields.push(FieldSpec::new("y", FieldKind::Label));
    let schema = Schema::new(fields)?;
    let mut vocab = FeatureVocab::new(spec.cardinalities.len());
    // intern in field-major order so ids are dense per field
    let ids: Vec<Vec<u32>> = spec
        .cardinalities
        .iter()
        .enumerate()
        .map(|(f, &c)| (0..c).map(|v| vocab.intern(f, &format!("v{v}"))).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let samples = (0..spec.rows)
        .map(|row| {
            let slots = spec
                .cardinalities
                .iter()
                .enumerate()
                .map(|(f, &c)| {
                    if spec.multi_fields.contains(&f) {
                        let n = rng.gen_range(1..=spec.max_values.min(c));
                        Slot::many(sample(&mut rng, c, n).into_iter().map(|v| ids[f][v]).collect())
                    } else {
                        Slot::One(ids[f][Uniform::new(0, c).sample(&mut rng)])
                    }
                })
                .collect();
            Sample {
                id: row as u64,
                slots,
                label: f64::from(u8::from(rng.gen_bool(0.5))),
                class: None,
                timestamp: None,
            }
        })
        .collect();
    Table::new(schema, vocab, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::split_by_time;

    #[test]
    fn neighbor_signal_layout() {
        let spec = NeighborSignalSpec {
            groups: 50,
            ..NeighborSignalSpec::default()
        };
        let t = neighbor_signal(&spec).unwrap();
        assert_eq!(t.len(), 1000);
        let (pool, train, test) = split_by_time(&t, NeighborSignalSpec::T1, NeighborSignalSpec::T2).unwrap();
        assert_eq!(pool.len(), 500);
        assert_eq!(train.len(), 350);
        assert_eq!(test.len(), 150);
        let group = |s: &Sample| s.slots[0].ids()[0];
        let train_groups: std::collections::BTreeSet<_> = train.samples().iter().map(group).collect();
        assert!(test.samples().iter().all(|s| !train_groups.contains(&group(s))));
        assert_eq!(t, neighbor_signal(&spec).unwrap());
    }

    #[test]
    fn random_table_respects_spec() {
        let spec = RandomTableSpec {
            rows: 200,
            cardinalities: vec![5, 20, 8],
            multi_fields: vec![1],
            max_values: 3,
            seed: 4,
        };
        let t = random_table(&spec).unwrap();
        assert_eq!(t.len(), 200);
        assert_eq!(t.vocab().len(), 33);
        for s in t.samples() {
            assert!(matches!(s.slots[0], Slot::One(_)));
            let n = s.slots[1].ids().len();
            assert!((1..=3).contains(&n));
        }
        assert_eq!(t, random_table(&spec).unwrap());
    }
}
