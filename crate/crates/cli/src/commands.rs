//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use tkgcast::backends::{HeuristicBackend, HttpChatBackend, HttpCompletionBackend, MockBackend, MockScript};
use tkgcast::evaluation::{run, test_queries, HitsTable, HITS_AT};
use tkgcast::kg_store::{load_dataset_with, DatasetStats, LoadOptions};
use tkgcast::{Backend, BackendKind};

use crate::config::RunSpec;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn stats(dataset: &Path, interval: Option<u32>) -> Result<DatasetStats> {
    let kg = load_dataset_with(dataset, &LoadOptions { interval })
        .with_context(|| format!("cannot load dataset {}", dataset.display()))?;
    Ok(kg.stats())
}

pub fn build_backend(spec: &RunSpec) -> Result<Box<dyn Backend<f64>>> {
    let backend: Box<dyn Backend<f64>> = match spec.backend.kind {
        BackendKind::Frequency => Box::new(HeuristicBackend::frequency()),
        BackendKind::Recency => Box::new(HeuristicBackend::recency()),
        BackendKind::Mock => match &spec.backend.script {
            Some(path) => Box::new(MockBackend::<f64>::from_json_file(path, spec.mock_fallback()?)?),
            None => Box::new(MockBackend::<f64>::new(MockScript::new(), spec.mock_fallback()?)),
        },
        BackendKind::HttpCompletion => Box::new(HttpCompletionBackend::new(spec.backend.http.clone())?),
        BackendKind::HttpChat => Box::new(HttpChatBackend::new(spec.backend.http.clone())?),
    };
    Ok(backend)
}

#[derive(Debug, Serialize)]
pub struct Counts {
    pub queries: usize,
    pub gold_facts: usize,
    pub no_prediction: usize,
    pub errors: usize,
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub dataset: String,
    pub config: &'a RunSpec,
    pub hits: HitsTable<f64>,
    pub counts: Counts,
    pub wall_time: f64,
}

/// Runs one evaluation. Writes `results.jsonl` and `summary.json` when an
/// output directory is configured and returns the summary as JSON.
pub fn run_spec(spec: &RunSpec) -> Result<Value> {
    spec.validate()?;
    let cfg = spec.eval_config()?;
    let backend = build_backend(spec)?;

    let started = Instant::now();
    let kg = load_dataset_with(&spec.dataset, &LoadOptions { interval: spec.interval })
        .with_context(|| format!("cannot load dataset {}", spec.dataset.display()))?;
    let queries = test_queries(&kg, cfg.directions);
    log::info!(
        "{}: {} queries, backend {}, mode {}",
        kg.name(),
        queries.len(),
        spec.backend.kind,
        cfg.mode
    );
    let report = run(&kg, &queries, &backend, &cfg);
    let summary = Summary {
        dataset: kg.name().to_string(),
        config: spec,
        hits: report.hits,
        counts: Counts {
            queries: report.num_queries,
            gold_facts: report.num_gold_facts,
            no_prediction: report.num_no_prediction,
            errors: report.results.iter().filter(|r| r.error.is_some()).count(),
        },
        wall_time: started.elapsed().as_secs_f64(),
    };
    let summary = serde_json::to_value(&summary)?;

    if let Some(out) = &spec.out {
        std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
        let mut w = BufWriter::new(File::create(out.join(RESULTS_FILE))?);
        report.write_jsonl(&mut w)?;
        w.flush()?;
        std::fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(summary)
}

fn read_hits(v: &Value, name: &str) -> Result<[[f64; 3]; 2]> {
    let mut out = [[0.0; 3]; 2];
    for (i, filter) in ["raw", "time_aware"].iter().enumerate() {
        for (j, k) in HITS_AT.iter().enumerate() {
            out[i][j] = v
                .pointer(&format!("/hits/{filter}/hits@{k}"))
                .and_then(Value::as_f64)
                .with_context(|| format!("{name}: missing hits.{filter}.hits@{k}; not a summary file"))?;
        }
    }
    Ok(out)
}

/// Per-metric `a - b` deltas between two summaries.
pub fn compare(a_path: &Path, b_path: &Path) -> Result<Value> {
    let load = |p: &Path| -> Result<Value> {
        let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{} is not JSON", p.display()))
    };
    let (a, b) = (load(a_path)?, load(b_path)?);
    let (ha, hb) = (read_hits(&a, &a_path.display().to_string())?, read_hits(&b, &b_path.display().to_string())?);
    let dataset = |v: &Value| v.get("dataset").and_then(Value::as_str).map(str::to_owned);
    let (da, db) = (dataset(&a), dataset(&b));
    if da.is_none() || db.is_none() {
        bail!("summary files must name their dataset");
    }
    let mut rows = serde_json::Map::new();
    for (i, filter) in ["raw", "time_aware"].iter().enumerate() {
        let mut m = serde_json::Map::new();
        for (j, k) in HITS_AT.iter().enumerate() {
            m.insert(
                format!("hits@{k}"),
                json!({"a": ha[i][j], "b": hb[i][j], "delta": ha[i][j] - hb[i][j]}),
            );
        }
        rows.insert(filter.to_string(), Value::Object(m));
    }
    Ok(json!({
        "a": a_path.display().to_string(),
        "b": b_path.display().to_string(),
        "dataset_a": da,
        "dataset_b": db,
        "dataset_mismatch": da != db,
        "deltas": rows,
    }))
}

pub fn print_compare_table(cmp: &Value) {
    println!("{:<12} {:<8} {:>8} {:>8} {:>9}", "filter", "metric", "a", "b", "a-b");
    for filter in ["raw", "time_aware"] {
        for k in HITS_AT {
            let row = &cmp["deltas"][filter][format!("hits@{k}")];
            println!(
                "{:<12} {:<8} {:>8.4} {:>8.4} {:>+9.4}",
                filter,
                format!("hits@{k}"),
                row["a"].as_f64().unwrap_or(f64::NAN),
                row["b"].as_f64().unwrap_or(f64::NAN),
                row["delta"].as_f64().unwrap_or(f64::NAN)
            );
        }
    }
}
