//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed:
//! `cargo test -p rim-core --test acceptance`. Pass criterion numbers to run
//! a subset, e.g. `cargo test -p rim-core --test acceptance -- 1 2`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rim_core::cache::RetrievalCache;
use rim_core::dataset::{read_table, split_by_time, Sample, Slot, Table};
use rim_core::experiment::{ablate_command, Experiment, ExperimentConfig};
use rim_core::index::{build_index, detect_stop_fields, InvertedIndex, DEFAULT_STOP_RATIO};
use rim_core::metrics::{auc, hr_at_k, log_loss, mrr, ndcg_at_k, rmse, PredictionRecord, RankedList};
use rim_core::model::{
    predict, sample_loss, train, InteractionKind, InteractionParams, ModelParams, ModelShape, TaskKind, TrainConfig,
};
use rim_core::retrieval::{
    bm25_score, idf, make_query, term_frequency, Neighbor, Query, RankingParams, RetrievalMode, RetrievedSet, Retriever,
};
use rim_core::source::{gather, PoolSource};
use rim_core::synth::{neighbor_signal, random_table, NeighborSignalSpec, RandomTableSpec};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

// ---------------------------------------------------------------- 1

/// Exhaustive BM25 written from the definitions, independent of the index.
fn oracle_topk(pool: &Table, stops: &BTreeSet<usize>, p: &RankingParams, q: &Sample, k: usize) -> Vec<(u64, f64)> {
    let n = pool.len() as f64;
    let mut df: HashMap<u32, f64> = HashMap::new();
    for s in pool.samples() {
        for (f, slot) in s.slots.iter().enumerate() {
            if !stops.contains(&f) {
                for &v in slot.ids() {
                    *df.entry(v).or_default() += 1.0;
                }
            }
        }
    }
    let idfs: Vec<f64> = q
        .slots
        .iter()
        .map(|slot| {
            let ids = slot.ids();
            let m = ids.iter().map(|v| df.get(v).copied().unwrap_or(0.0)).sum::<f64>() / ids.len() as f64;
            ((n - m + 0.5) / (m + 0.5)).ln()
        })
        .collect();
    let tf = |a: &Slot, b: &Slot| -> f64 {
        match (a, b) {
            (Slot::One(x), Slot::One(y)) => f64::from(u8::from(x == y)),
            _ => {
                let x: BTreeSet<u32> = a.ids().iter().copied().collect();
                let y: BTreeSet<u32> = b.ids().iter().copied().collect();
                x.intersection(&y).count() as f64 / x.union(&y).count() as f64
            }
        }
    };
    let mut scored = Vec::new();
    for s in pool.samples() {
        if s.id == q.id {
            continue;
        }
        let mut matched = false;
        let mut score = 0.0;
        for (f, (a, b)) in q.slots.iter().zip(&s.slots).enumerate() {
            if stops.contains(&f) {
                continue;
            }
            let t = tf(a, b);
            matched |= t > 0.0;
            score += idfs[f] * (t * (p.k1 + 1.0)) / (t + p.k1 * (1.0 - p.b + p.b * 1.0));
        }
        if matched {
            scored.push((s.id, score));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn retrieval_oracle() -> Outcome {
    let start = Instant::now();
    let pools = [
        (2000, vec![2, 10, 50, 200, 30], vec![4], 3),
        (1500, vec![5, 5, 20, 1000, 40, 8], vec![1, 4], 4),
        (1000, vec![3, 100, 12, 60], vec![0, 2], 2),
    ];
    let params = [
        RankingParams::default(),
        RankingParams { k1: 2.0, b: 0.3 },
        RankingParams { k1: 0.5, b: 1.0 },
    ];
    let ks = [1, 5, 10, 50];
    let mut queries = 0;
    let mut stopped = 0;
    for (i, ((rows, cards, multi, max_values), p)) in pools.into_iter().zip(params).enumerate() {
        let spec = RandomTableSpec {
            rows,
            cardinalities: cards,
            multi_fields: multi,
            max_values,
            seed: 100 + i as u64,
        };
        let pool = random_table(&spec).map_err(|e| e.to_string())?;
        let fresh = random_table(&RandomTableSpec {
            rows: 70,
            seed: 900 + i as u64,
            ..spec.clone()
        })
        .map_err(|e| e.to_string())?;
        let stops = detect_stop_fields(&pool, DEFAULT_STOP_RATIO);
        stopped += stops.len();
        let index = build_index(&pool, &stops).map_err(|e| e.to_string())?;
        let retriever = Retriever::new(index, pool.clone(), p).map_err(|e| e.to_string())?;
        // 70 unseen rows plus 30 pool rows, which must not retrieve themselves
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let targets: Vec<&Sample> = fresh
            .samples()
            .iter()
            .chain((0..30).map(|_| &pool.samples()[rng.gen_range(0..pool.len())]))
            .collect();
        for (j, t) in targets.into_iter().enumerate() {
            let k = ks[j % ks.len()];
            let got: Vec<(u64, f64)> = retriever
                .retrieve_topk(&make_query(t), k)
                .neighbors
                .iter()
                .map(|n| (n.id, n.score))
                .collect();
            let want = oracle_topk(&pool, &stops, &p, t, k);
            let ids = |v: &[(u64, f64)]| v.iter().map(|x| x.0).collect::<Vec<_>>();
            ensure(ids(&got) == ids(&want), || {
                format!("pool {i} target {}: ids {:?} != {:?}", t.id, ids(&got), ids(&want))
            })?;
            for (g, w) in got.iter().zip(&want) {
                ensure(rel_close(g.1, w.1, 1e-9), || {
                    format!("pool {i} doc {}: score {} vs {}", g.0, g.1, w.1)
                })?;
            }
            queries += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(stopped > 0, || "no pool exercised a stop-field".into())?;
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{queries} queries on 3 pools identical to brute force ({secs:.2}s)"
    ))
}

// ---------------------------------------------------------------- 2

fn formula_checks() -> Outcome {
    let tol = 1e-12;
    let check =
        |what: &str, got: f64, want: f64| ensure((got - want).abs() <= tol, || format!("{what}: {got} != {want}"));
    check("tf Nike/Nike", term_frequency(&Slot::One(3), &Slot::One(3)), 1.0)?;
    check("tf Nike/Adidas", term_frequency(&Slot::One(3), &Slot::One(4)), 0.0)?;
    check(
        "tf {a,b}/{b,c}",
        term_frequency(&Slot::many(vec![1, 2]), &Slot::many(vec![2, 3])),
        1.0 / 3.0,
    )?;
    check(
        "tf identical",
        term_frequency(&Slot::many(vec![5, 1, 2]), &Slot::many(vec![2, 5, 1])),
        1.0,
    )?;
    check(
        "tf disjoint",
        term_frequency(&Slot::many(vec![1, 2]), &Slot::many(vec![3, 4])),
        0.0,
    )?;

    let text = "a:cat,b:cat,c:cat,tags:mcat,y:label\n\
                x1,p,m,v1|v2,1\n\
                x2,p,n,v1|v2,0\n\
                x3,q,n,v1,1\n\
                x4,r,o,v1,0\n\
                x5,s,o,w,1\n\
                x6,t,o,w,0\n";
    let table = read_table(text.as_bytes(), None).map_err(|e| e.to_string())?;
    let index = build_index(&table, &BTreeSet::new()).map_err(|e| e.to_string())?;
    let v = table.vocab();
    let id = |f: usize, tok: &str| v.id(f, tok).unwrap();

    // N = 6; `o` is in three docs, {v1, v2} has mean df (4 + 2) / 2
    check("idf df=1", idf(&index, &Slot::One(id(0, "x1"))), (5.5f64 / 1.5).ln())?;
    // ln((6 - 3 + 0.5) / (3 + 0.5)) = ln 1
    check("idf df=3", idf(&index, &Slot::One(id(2, "o"))), 0.0)?;
    check(
        "idf multi",
        idf(&index, &Slot::many(vec![id(3, "v1"), id(3, "v2")])),
        0.0,
    )?;
    check(
        "idf multi {v2,w}",
        idf(&index, &Slot::many(vec![id(3, "v2"), id(3, "w")])),
        (4.5f64 / 2.5).ln(),
    )?;

    let small = read_table("a:cat,y:label\nc,1\nc,0\nd,1\n".as_bytes(), None).map_err(|e| e.to_string())?;
    let small_index = build_index(&small, &BTreeSet::new()).map_err(|e| e.to_string())?;
    check(
        "idf N=3 df=1",
        idf(&small_index, &Slot::One(small.vocab().id(0, "d").unwrap())),
        (2.5f64 / 1.5).ln(),
    )?;
    let every = read_table("a:cat,y:label\nc,1\nc,0\nc,1\n".as_bytes(), None).map_err(|e| e.to_string())?;
    let every_index = build_index(&every, &BTreeSet::new()).map_err(|e| e.to_string())?;
    let neg = idf(&every_index, &Slot::One(every.vocab().id(0, "c").unwrap()));
    check("idf df=N", neg, (0.5f64 / 3.5).ln())?;
    ensure(neg < 0.0, || "idf at df=N should be negative".into())?;

    for p in [
        RankingParams::default(),
        RankingParams { k1: 2.0, b: 0.3 },
        RankingParams { k1: 0.4, b: 1.0 },
    ] {
        for w in [-1.3, 0.0, 0.51, 7.25] {
            check("field term at tf=1", p.field_term(w, 1.0), w)?;
        }
        // query (x9, p, n, {w}) where x9 is new to the pool
        let query = Query {
            slots: vec![
                Slot::One(999),
                Slot::One(id(1, "p")),
                Slot::One(id(2, "n")),
                Slot::many(vec![id(3, "w")]),
            ],
            exclude: None,
            target: 999,
        };
        let docs = table.samples();
        let idf_p = (4.5f64 / 2.5).ln();
        let idf_n = (4.5f64 / 2.5).ln();
        check("one matched field", bm25_score(&query, &docs[0], &index, &p), idf_p)?;
        check(
            "two matched fields",
            bm25_score(&query, &docs[1], &index, &p),
            idf_p + idf_n,
        )?;
        check("no shared feature", bm25_score(&query, &docs[3], &index, &p), 0.0)?;
        // Jaccard 1/2 on the tag slot: idf * 0.5 (k1 + 1) / (0.5 + k1)
        let q2 = Query {
            slots: vec![
                Slot::One(999),
                Slot::One(999),
                Slot::One(999),
                Slot::many(vec![id(3, "w"), id(3, "v2")]),
            ],
            exclude: None,
            target: 999,
        };
        let idf_set = ((6.0f64 - 2.0 + 0.5) / 2.5).ln();
        check(
            "jaccard field",
            bm25_score(&q2, &docs[4], &index, &p),
            idf_set * 0.5 * (p.k1 + 1.0) / (0.5 + p.k1),
        )?;
    }
    Ok("tf, idf, bm25 and the tf=1 identity agree to 1e-12".into())
}

// ---------------------------------------------------------------- 3

fn grad_shape(kind: InteractionKind) -> ModelShape {
    ModelShape {
        num_fields: 3,
        dim: 4,
        vocab: 20,
        classes: 3,
        retrieval_size: 2,
        interaction: kind,
        hidden: vec![8, 6],
        micro_hidden: vec![5, 3],
        task: TaskKind::Binary,
        use_labels: true,
    }
}

fn random_slots(rng: &mut ChaCha8Rng, vocab: u32) -> Vec<Slot> {
    vec![
        Slot::One(rng.gen_range(0..vocab)),
        Slot::many((0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..vocab)).collect()),
        Slot::One(rng.gen_range(0..vocab)),
    ]
}

fn random_neighbors(rng: &mut ChaCha8Rng, k: usize, vocab: u32, classes: u32) -> RetrievedSet {
    RetrievedSet {
        neighbors: (0..k)
            .map(|i| {
                let class = rng.gen_range(0..classes);
                Neighbor {
                    id: 100 + i as u64,
                    score: 1.0,
                    slots: random_slots(rng, vocab),
                    label: f64::from(class),
                    class: Some(class),
                }
            })
            .collect(),
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    let mut checked = 0usize;
    for kind in [InteractionKind::Inner, InteractionKind::Kernel, InteractionKind::Micro] {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut p = ModelParams::init(grad_shape(kind), seed);
            for b in p.blocks_mut() {
                if !b.decay {
                    b.values.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
                }
            }
            let target = random_slots(&mut rng, 20);
            let set = random_neighbors(&mut rng, 2, 20, 3);
            let y = f64::from(u8::from(rng.gen_bool(0.5)));
            let trace = p.forward(&target, &set).map_err(|e| e.to_string())?;
            let mut analytic = p.zeros_like();
            p.backward(&trace, y, 1.0, &mut analytic).map_err(|e| e.to_string())?;
            let objective = |q: &ModelParams| sample_loss(q.forward(&target, &set).unwrap().y_hat, y, TaskKind::Binary);

            let names: Vec<String> = p.blocks().iter().map(|b| b.name.clone()).collect();
            for (b, name) in names.iter().enumerate() {
                let len = p.blocks()[b].values.len();
                let mut numeric = vec![0.0; len];
                for (i, slot) in numeric.iter_mut().enumerate() {
                    let orig = p.blocks()[b].values[i];
                    p.blocks_mut()[b].values[i] = orig + h;
                    let plus = objective(&p);
                    p.blocks_mut()[b].values[i] = orig - h;
                    let minus = objective(&p);
                    p.blocks_mut()[b].values[i] = orig;
                    *slot = (plus - minus) / (2.0 * h);
                }
                let blocks = analytic.blocks();
                let a = blocks[b].values;
                let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                let norm =
                    a.iter().map(|x| x * x).sum::<f64>().sqrt() + numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
                let rel = if norm < 1e-9 { diff } else { diff / norm };
                if rel > worst.0 {
                    worst = (rel, format!("{} {name} seed {seed}", kind.name()));
                }
                checked += len;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst.0 < 1e-4, || {
        format!("relative error {:.2e} at {}", worst.0, worst.1)
    })?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{checked} coordinates over 3 kinds x 5 seeds, worst block error {:.1e} ({secs:.2}s)",
        worst.0
    ))
}

// ---------------------------------------------------------------- 4

fn ablation() -> Outcome {
    let config_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/neighbor_signal.json");
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let overrides = [format!("output_dir={}", out.path().display())];
    let config = ExperimentConfig::load(&config_path, &overrides).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let exp = Experiment::prepare(config).map_err(|e| e.to_string())?;
    ensure(exp.full.len() == 20_000, || {
        format!("dataset has {} rows", exp.full.len())
    })?;
    let report = ablate_command(&exp).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    println!(
        "{}",
        report
            .table()
            .trim_end()
            .lines()
            .map(|l| format!("    {l}"))
            .collect::<Vec<_>>()
            .join("\n")
    );

    let k = exp.config.train.k;
    let get = |mode: &str, labels: bool, kind: InteractionKind, k: usize| -> Result<f64, String> {
        report
            .find(mode, labels, kind, k)
            .and_then(|r| r.metrics.get("auc").copied())
            .ok_or_else(|| format!("missing row {mode} labels={labels} {} K={k}", kind.name()))
    };
    let mut summary = Vec::new();
    for kind in [InteractionKind::Inner, InteractionKind::Kernel, InteractionKind::Micro] {
        let rim = get("bm25", true, kind, k)?;
        let none = get("none", true, kind, 0)?;
        let rand = get("random", true, kind, k)?;
        let nolabel = get("bm25", false, kind, k)?;
        let n = kind.name();
        ensure(rim >= 0.85, || format!("{n}: RIM AUC {rim:.4} < 0.85"))?;
        ensure(none <= 0.65, || format!("{n}: no-retrieval AUC {none:.4} > 0.65"))?;
        ensure(rim - rand >= 0.10, || format!("{n}: RIM {rim:.4} vs random {rand:.4}"))?;
        ensure(rim - nolabel >= 0.03, || {
            format!("{n}: RIM {rim:.4} vs no-label {nolabel:.4}")
        })?;
        summary.push(format!("{n} {rim:.3}/{none:.3}/{rand:.3}/{nolabel:.3}"));
    }
    ensure(secs < 600.0, || format!("ablation took {secs:.0}s"))?;
    Ok(format!(
        "AUC rim/none/random/no-label at K={k}: {} ({} runs, {secs:.0}s)",
        summary.join(", "),
        report.rows.len()
    ))
}

// ---------------------------------------------------------------- 5

fn brute_auc(r: &[PredictionRecord]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for p in r.iter().filter(|x| x.label >= 0.5) {
        for n in r.iter().filter(|x| x.label < 0.5) {
            pairs += 1.0;
            if p.score > n.score {
                wins += 1.0;
            } else if p.score == n.score {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Position of the positive after sorting by score, the positive placed
/// after every candidate it ties with.
fn brute_rank(scores: &[f64], positive: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then((a == positive).cmp(&(b == positive)))
    });
    order.iter().position(|&i| i == positive).unwrap() + 1
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tol = 1e-12;
    for i in 0..1000 {
        let n = rng.gen_range(2..=50);
        // coarse scores produce ties
        let mut recs: Vec<PredictionRecord> = (0..n)
            .map(|_| {
                PredictionRecord::new(
                    f64::from(rng.gen_range(1..20u32)) / 20.0,
                    f64::from(u8::from(rng.gen_bool(0.5))),
                )
            })
            .collect();
        recs[0].label = 1.0;
        recs[1].label = 0.0;
        let got = auc(&recs).map_err(|e| e.to_string())?;
        ensure(close(got, brute_auc(&recs), tol), || format!("auc instance {i}"))?;

        let ll: f64 = recs
            .iter()
            .map(|r| -(r.label * r.score.ln() + (1.0 - r.label) * (1.0 - r.score).ln()))
            .sum::<f64>()
            / n as f64;
        ensure(close(log_loss(&recs).unwrap(), ll, tol), || {
            format!("log-loss instance {i}")
        })?;

        let reg: Vec<PredictionRecord> = (0..n)
            .map(|_| PredictionRecord::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
            .collect();
        let mse = reg
            .iter()
            .map(|r| (r.score - r.label) * (r.score - r.label))
            .sum::<f64>()
            / n as f64;
        ensure(close(rmse(&reg).unwrap(), mse.sqrt(), tol), || {
            format!("rmse instance {i}")
        })?;

        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..10u32))).collect();
        let positive = rng.gen_range(0..n);
        let k = rng.gen_range(1..=n);
        let list = RankedList::with_positive(scores.clone(), positive).map_err(|e| e.to_string())?;
        let rank = brute_rank(&scores, positive);
        // DCG over the sorted list: only the positive has gain 1; ideal DCG is 1
        let dcg: f64 = (1..=k.min(n))
            .map(|pos| {
                if pos == rank {
                    1.0 / (pos as f64 + 1.0).log2()
                } else {
                    0.0
                }
            })
            .sum();
        ensure(hr_at_k(&list, k) == f64::from(u8::from(rank <= k)), || {
            format!("hr instance {i}")
        })?;
        ensure(close(ndcg_at_k(&list, k), dcg, tol), || format!("ndcg instance {i}"))?;
        ensure(close(mrr(&list), 1.0 / rank as f64, tol), || {
            format!("mrr instance {i}")
        })?;
    }
    Ok("AUC, log-loss, RMSE, HR@K, NDCG@K, MRR match enumeration on 1000 instances each".into())
}

// ---------------------------------------------------------------- 6

fn model_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_sum = 0.0f64;
    for kind in [InteractionKind::Inner, InteractionKind::Kernel, InteractionKind::Micro] {
        for seed in 0..20u64 {
            let p = ModelParams::init(grad_shape(kind), seed);
            let target = random_slots(&mut rng, 20);
            let k = rng.gen_range(1..9);
            let mut set = random_neighbors(&mut rng, k, 20, 3);
            let base = p.forward(&target, &set).map_err(|e| e.to_string())?;
            worst_sum = worst_sum.max((base.alpha.iter().sum::<f64>() - 1.0).abs());
            for _ in 0..5 {
                rand::seq::SliceRandom::shuffle(set.neighbors.as_mut_slice(), &mut rng);
                let y = p.forward(&target, &set).map_err(|e| e.to_string())?.y_hat;
                ensure(y.to_bits() == base.y_hat.to_bits(), || {
                    format!("permutation changed y_hat: {y} vs {}", base.y_hat)
                })?;
            }
        }
    }
    ensure(worst_sum <= 1e-12, || format!("attention sum off by {worst_sum:e}"))?;

    let mut worst_kernel = 0.0f64;
    for seed in 0..20u64 {
        let mut kernel = ModelParams::init(grad_shape(InteractionKind::Kernel), seed);
        let d = kernel.shape.dim;
        if let InteractionParams::Kernel(phi) = &mut kernel.interaction {
            phi.fill(0.0);
            (0..d).for_each(|i| phi[i * d + i] = 1.0);
        }
        let mut inner = kernel.clone();
        inner.shape.interaction = InteractionKind::Inner;
        inner.interaction = InteractionParams::Inner;
        let target = random_slots(&mut rng, 20);
        let set = random_neighbors(&mut rng, 3, 20, 3);
        let a = kernel.forward(&target, &set).map_err(|e| e.to_string())?;
        let b = inner.forward(&target, &set).map_err(|e| e.to_string())?;
        for (x, y) in a.e_inter.iter().zip(&b.e_inter).chain([(&a.y_hat, &b.y_hat)]) {
            worst_kernel = worst_kernel.max((x - y).abs());
        }
    }
    ensure(worst_kernel <= 1e-12, || {
        format!("identity kernel differs from inner product by {worst_kernel:e}")
    })?;

    for f in 1..=12 {
        let shape = ModelShape {
            num_fields: f,
            ..grad_shape(InteractionKind::Inner)
        };
        let want = (2 * f + 1) * (2 * f) / 2;
        ensure(shape.num_pairs() == want && shape.pairs().len() == want, || {
            format!("pair count at F={f}")
        })?;
    }
    let p = ModelParams::init(grad_shape(InteractionKind::Micro), 0);
    let t = p
        .forward(&random_slots(&mut rng, 20), &random_neighbors(&mut rng, 2, 20, 3))
        .map_err(|e| e.to_string())?;
    ensure(t.e_inter.len() == 21, || {
        format!("F=3 produced {} interactions", t.e_inter.len())
    })?;
    Ok(format!("sum(alpha) within {worst_sum:.0e}, permutations bit-exact, kernel(I) = inner within {worst_kernel:.0e}, pairs (2F+1)F"))
}

// ---------------------------------------------------------------- 7

fn round_trip<T>(
    name: &str,
    value: &T,
    to_bytes: impl Fn(&T) -> Vec<u8>,
    from_bytes: impl Fn(&[u8]) -> rim_core::Result<T>,
    save: impl Fn(&T, &Path) -> rim_core::Result<()>,
    load: impl Fn(&Path) -> rim_core::Result<T>,
    dir: &Path,
) -> Result<T, String> {
    let first = to_bytes(value);
    let again = to_bytes(&from_bytes(&first).map_err(|e| e.to_string())?);
    ensure(first == again, || format!("{name}: bytes changed on reload"))?;
    let (a, b) = (dir.join(format!("{name}.a")), dir.join(format!("{name}.b")));
    save(value, &a).map_err(|e| e.to_string())?;
    let loaded = load(&a).map_err(|e| e.to_string())?;
    save(&loaded, &b).map_err(|e| e.to_string())?;
    let (fa, fb) = (
        std::fs::read(&a).map_err(|e| e.to_string())?,
        std::fs::read(&b).map_err(|e| e.to_string())?,
    );
    ensure(fa == fb && fa == first, || {
        format!("{name}: save/load/save not byte-identical")
    })?;
    Ok(loaded)
}

fn same_sets(a: &RetrievedSet, b: &RetrievedSet) -> bool {
    a.neighbors.len() == b.neighbors.len()
        && a.neighbors
            .iter()
            .zip(&b.neighbors)
            .all(|(x, y)| x.id == y.id && x.score.to_bits() == y.score.to_bits() && x == y)
}

fn persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut table = neighbor_signal(&NeighborSignalSpec {
        groups: 80,
        seed: 3,
        ..NeighborSignalSpec::default()
    })
    .map_err(|e| e.to_string())?;
    table.discretize_labels(2).map_err(|e| e.to_string())?;
    let (pool, train_rows, test) =
        split_by_time(&table, NeighborSignalSpec::T1, NeighborSignalSpec::T2).map_err(|e| e.to_string())?;
    let stops = detect_stop_fields(&pool, DEFAULT_STOP_RATIO);
    let index = build_index(&pool, &stops).map_err(|e| e.to_string())?;
    let loaded_index = round_trip(
        "index",
        &index,
        InvertedIndex::to_bytes,
        InvertedIndex::from_bytes,
        |v, p| v.save(p),
        |p| InvertedIndex::load(p),
        dir.path(),
    )?;

    let params = RankingParams::default();
    let live = Retriever::new(index, pool.clone(), params).map_err(|e| e.to_string())?;
    let reloaded = Retriever::new(loaded_index, pool, params).map_err(|e| e.to_string())?;
    for t in test.samples() {
        let q = make_query(t);
        ensure(
            same_sets(&live.retrieve_topk(&q, 10), &reloaded.retrieve_topk(&q, 10)),
            || format!("index reload changed results for {}", t.id),
        )?;
    }

    let cache = RetrievalCache::precompute(&live, &test, 10, RetrievalMode::Bm25).map_err(|e| e.to_string())?;
    let loaded_cache = round_trip(
        "cache",
        &cache,
        RetrievalCache::to_bytes,
        RetrievalCache::from_bytes,
        |v, p| v.save(p),
        |p| RetrievalCache::load(p),
        dir.path(),
    )?;
    for t in test.samples() {
        let (a, b) = (cache.get(t.id), loaded_cache.get(t.id));
        ensure(a.is_some() && b.is_some() && same_sets(a.unwrap(), b.unwrap()), || {
            format!("cache entry {} differs", t.id)
        })?;
    }

    let source = PoolSource {
        retriever: live,
        mode: RetrievalMode::Bm25,
        k: 10,
    };
    let cfg = TrainConfig {
        embedding_dim: 4,
        hidden: vec![16, 8],
        micro_hidden: vec![4],
        epochs: 1,
        interaction: InteractionKind::Micro,
        learning_rate: 0.005,
        ..TrainConfig::default()
    };
    let model = train(&cfg, TaskKind::Binary, &train_rows, &source)
        .map_err(|e| e.to_string())?
        .params;
    let loaded_model = round_trip(
        "model",
        &model,
        ModelParams::to_bytes,
        ModelParams::from_bytes,
        |v, p| v.save(p),
        |p| ModelParams::load(p),
        dir.path(),
    )?;
    let neighbors = gather(&source, &test).map_err(|e| e.to_string())?;
    let a = predict(&model, &test, &neighbors).map_err(|e| e.to_string())?;
    let b = predict(&loaded_model, &test, &neighbors).map_err(|e| e.to_string())?;
    ensure(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), || {
        "reloaded model predicts differently".into()
    })?;
    Ok(format!(
        "index, cache ({} entries) and checkpoint canonical; {} predictions bit-identical",
        cache.len(),
        a.len()
    ))
}

// ---------------------------------------------------------------- 8

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Per-query seconds for every target, best of `passes` timings.
fn query_times(retriever: &Retriever, targets: &Table, k: usize, passes: usize) -> Vec<f64> {
    let queries: Vec<Query> = targets.samples().iter().map(make_query).collect();
    let mut best = vec![f64::INFINITY; queries.len()];
    for _ in 0..passes {
        for (q, b) in queries.iter().zip(best.iter_mut()) {
            let start = Instant::now();
            std::hint::black_box(retriever.topk_docs(q, k));
            *b = b.min(start.elapsed().as_secs_f64());
        }
    }
    best
}

fn complexity() -> Outcome {
    // F fixed, |pool| and per-field cardinality V varied
    let f = 8;
    let grid = [
        (10_000, 1000),
        (20_000, 500),
        (20_000, 100),
        (50_000, 200),
        (50_000, 100),
        (100_000, 200),
        (100_000, 100),
        (50_000, 50),
        (100_000, 50),
    ];
    let mut setups = Vec::new();
    for (i, &(rows, v)) in grid.iter().enumerate() {
        let spec = RandomTableSpec {
            rows,
            cardinalities: vec![v; f],
            multi_fields: vec![],
            max_values: 1,
            seed: 80 + i as u64,
        };
        let pool = random_table(&spec).map_err(|e| e.to_string())?;
        let targets = random_table(&RandomTableSpec {
            rows: 200,
            seed: 800 + i as u64,
            ..spec
        })
        .map_err(|e| e.to_string())?;
        let stops = detect_stop_fields(&pool, DEFAULT_STOP_RATIO);
        let retriever = Retriever::new(
            build_index(&pool, &stops).map_err(|e| e.to_string())?,
            pool,
            RankingParams::default(),
        )
        .map_err(|e| e.to_string())?;
        setups.push((retriever, targets, vec![f64::INFINITY; 200]));
    }
    // passes interleave the pools so drifting machine load hits all of them
    for _ in 0..5 {
        for (retriever, targets, best) in &mut setups {
            for (b, t) in best.iter_mut().zip(query_times(retriever, targets, 10, 1)) {
                *b = b.min(t);
            }
        }
    }
    let xs: Vec<f64> = grid.iter().map(|&(rows, v)| (f * rows) as f64 / v as f64).collect();
    let ys: Vec<f64> = setups
        .iter()
        .map(|s| s.2.iter().sum::<f64>() / s.2.len() as f64)
        .collect();
    let r2 = r_squared(&xs, &ys);

    let spec = RandomTableSpec {
        rows: 100_000,
        cardinalities: vec![2, 10, 20, 50, 100, 200, 500, 1000, 5000, 30],
        multi_fields: vec![9],
        max_values: 3,
        seed: 88,
    };
    let pool = random_table(&spec).map_err(|e| e.to_string())?;
    let targets = random_table(&RandomTableSpec {
        rows: 200,
        seed: 888,
        ..spec
    })
    .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let stops = detect_stop_fields(&pool, DEFAULT_STOP_RATIO);
    let index = build_index(&pool, &stops).map_err(|e| e.to_string())?;
    let build = start.elapsed().as_secs_f64();
    let retriever = Retriever::new(index, pool, RankingParams::default()).map_err(|e| e.to_string())?;
    let mut times = query_times(&retriever, &targets, 10, 1);
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];

    let detail = format!(
        "R^2 {r2:.3} over {} pools; 100k x 10 build {build:.2}s; median query {:.2}ms",
        grid.len(),
        median * 1e3
    );
    ensure(r2 >= 0.9, || format!("{detail}: fit too weak"))?;
    ensure(build < 10.0, || format!("{detail}: build too slow"))?;
    ensure(median < 0.05, || format!("{detail}: queries too slow"))?;
    Ok(detail)
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "retrieval oracle", retrieval_oracle),
        (2, "formula checks", formula_checks),
        (3, "gradient check", gradient_check),
        (4, "directional ablations", ablation),
        (5, "metric oracles", metric_oracles),
        (6, "model invariants", model_invariants),
        (7, "persistence", persistence),
        (8, "complexity", complexity),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        match run() {
            Ok(detail) => println!("criterion {n} ({name}): PASS: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
