//! Browser bindings. Every export returns a JSON string so the page needs
//! no generated types; the plain functions underneath are what the tests call.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use rim_core::dataset::{split_by_time, Slot, Table};
use rim_core::index::{build_index, detect_stop_fields, DEFAULT_STOP_RATIO};
use rim_core::metrics::{auc, PredictionRecord};
use rim_core::model::{predict, InteractionKind, ModelShape, TaskKind, TrainConfig, Trainer};
use rim_core::retrieval::{idf, make_query, term_frequency, RankingParams, RetrievalMode, Retriever};
use rim_core::source::{gather, NeighborSource, NoRetrieval, PoolSource};
use rim_core::synth::{neighbor_signal, NeighborSignalSpec};
use rim_core::Result;

/// Pool, train and test tables of a small neighbor-signal dataset.
fn demo_tables(groups: usize, seed: u64) -> Result<(Table, Table, Table)> {
    let mut table = neighbor_signal(&NeighborSignalSpec {
        groups,
        seed,
        ..NeighborSignalSpec::default()
    })?;
    table.discretize_labels(2)?;
    split_by_time(&table, NeighborSignalSpec::T1, NeighborSignalSpec::T2)
}

fn slot_text(table: &Table, slot: &Slot) -> String {
    slot.ids()
        .iter()
        .map(|&id| table.vocab().token(id).map_or("?", |(_, t)| t))
        .collect::<Vec<_>>()
        .join("|")
}

/// Top-K neighbors of one target row with each field's contribution.
pub fn explore(k1: f64, b: f64, k: usize, target: usize) -> Result<Value> {
    let (pool, train, test) = demo_tables(30, 1)?;
    let params = RankingParams { k1, b };
    params.validate()?;
    let stops = detect_stop_fields(&pool, DEFAULT_STOP_RATIO);
    let retriever = Retriever::new(build_index(&pool, &stops)?, pool.clone(), params)?;
    let targets: Vec<_> = train.samples().iter().chain(test.samples()).collect();
    let t = targets[target % targets.len()];
    let query = make_query(t);
    let names: Vec<&str> = (0..pool.num_features())
        .map(|f| pool.schema().feature(f).name.as_str())
        .collect();

    let neighbors: Vec<Value> = retriever
        .retrieve_topk(&query, k)
        .neighbors
        .iter()
        .map(|n| {
            let terms: Vec<Value> = query
                .slots
                .iter()
                .zip(&n.slots)
                .enumerate()
                .map(|(f, (q, d))| {
                    if stops.contains(&f) {
                        return Value::Null;
                    }
                    let tf = term_frequency(q, d);
                    json!({"tf": tf, "term": params.field_term(idf(retriever.index(), q), tf)})
                })
                .collect();
            json!({
                "id": n.id,
                "score": n.score,
                "label": n.label,
                "values": n.slots.iter().map(|s| slot_text(&pool, s)).collect::<Vec<_>>(),
                "terms": terms,
            })
        })
        .collect();
    Ok(json!({
        "fields": names,
        "stop_fields": stops.iter().map(|&f| names[f]).collect::<Vec<_>>(),
        "pool_size": pool.len(),
        "targets": targets.len(),
        "target": {
            "row": target % targets.len(),
            "id": t.id,
            "label": t.label,
            "values": t.slots.iter().map(|s| slot_text(&pool, s)).collect::<Vec<_>>(),
            "idf": query.slots.iter().enumerate()
                .map(|(f, s)| if stops.contains(&f) { Value::Null } else { json!(idf(retriever.index(), s)) })
                .collect::<Vec<_>>(),
        },
        "neighbors": neighbors,
    }))
}

/// `(df, idf)` for every document frequency of a pool of `n` rows.
pub fn idf_points(n: u32) -> Vec<(u32, f64)> {
    let n_f = f64::from(n);
    (0..=n)
        .map(|df| {
            let df_f = f64::from(df);
            (df, ((n_f - df_f + 0.5) / (df_f + 0.5)).ln())
        })
        .collect()
}

fn run(cfg: &TrainConfig, source: &dyn NeighborSource, train: &Table, test: &Table) -> Result<Vec<Value>> {
    let train_neighbors = gather(source, train)?;
    let test_neighbors = gather(source, test)?;
    let mut trainer = Trainer::new(cfg.clone(), ModelShape::for_table(train, cfg, TaskKind::Binary)?)?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let loss = trainer.run_epoch(train, &train_neighbors)?;
        let preds = predict(&trainer.params, test, &test_neighbors)?;
        let records: Vec<PredictionRecord> = preds
            .iter()
            .zip(test.samples())
            .map(|(&p, s)| PredictionRecord::new(p, s.label))
            .collect();
        curve.push(json!({"epoch": epoch + 1, "train_loss": loss, "test_auc": auc(&records)?}));
    }
    Ok(curve)
}

/// Trains the same small model with BM25 neighbors and with none.
pub fn compare(epochs: usize, seed: u64) -> Result<Value> {
    let (pool, train, test) = demo_tables(60, seed)?;
    let stops = detect_stop_fields(&pool, DEFAULT_STOP_RATIO);
    let retriever = Retriever::new(build_index(&pool, &stops)?, pool, RankingParams::default())?;
    let cfg = TrainConfig {
        embedding_dim: 8,
        hidden: vec![32, 16],
        epochs,
        k: 5,
        learning_rate: 0.005,
        interaction: InteractionKind::Inner,
        seed,
        ..TrainConfig::default()
    };
    let bm25 = PoolSource {
        retriever,
        mode: RetrievalMode::Bm25,
        k: cfg.k,
    };
    Ok(json!({
        "train_rows": train.len(),
        "test_rows": test.len(),
        "bm25": run(&cfg, &bm25, &train, &test)?,
        "none": run(&TrainConfig { k: 0, ..cfg.clone() }, &NoRetrieval, &train, &test)?,
    }))
}

fn to_js(v: Result<Value>) -> std::result::Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn bm25_explorer(k1: f64, b: f64, k: usize, target: usize) -> std::result::Result<String, JsError> {
    to_js(explore(k1, b, k, target))
}

#[wasm_bindgen]
pub fn idf_curve(n: u32) -> String {
    json!(idf_points(n)).to_string()
}

#[wasm_bindgen]
pub fn train_comparison(epochs: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(compare(epochs, u64::from(seed)))
}
