//! Single plan runs and the benchmark sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mediator::{execute_plan, CompositionPlan, ExecOptions, Execution, InputBinding, Mode};
use crate::service::Service;

use super::data::{generate, load_dataset, Deployment};
use super::{default_plan, optimization_label, ExperimentConfig, Optimization};

/// One benchmark cell. `alpha_k` is 0 for unprotected runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset_size: usize,
    pub alpha_k: usize,
    pub mode: String,
    pub optimizations: String,
    pub wall_time_ms: f64,
    pub selectivity_queries: u64,
    pub invocations: u64,
    pub reused_ranges: u64,
    pub result_rows: usize,
}

pub fn write_metrics(rows: &[MetricsRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Keep candidate ranges for `k` maintained on the service from now on.
pub fn offline_precompute(service: &Service, k: usize) {
    service.write_store().enable_offline(k);
}

struct Cell<'a> {
    plan: &'a CompositionPlan,
    mode: Mode,
    opts: &'a BTreeSet<Optimization>,
    alpha: usize,
    city: &'a str,
    record: bool,
}

// Execute once, timing only the plan execution itself. Offline ranges are
// prepared before the clock starts and dropped afterwards.
fn execute_cell(dep: &Deployment, cell: &Cell<'_>) -> Result<(Execution, f64)> {
    let offline = cell.mode == Mode::Protected && cell.opts.contains(&Optimization::Offline);
    let mut prepared = Vec::new();
    if offline {
        for n in cell.plan.nodes().iter().filter(|n| !cell.plan.is_root(&n.id)) {
            let k = cell.plan.effective_k(&n.id)?;
            let svc = &dep.services[&n.service].service;
            if !svc.store().offline_enabled(k) {
                offline_precompute(svc, k);
                prepared.push((svc.clone(), k));
            }
        }
    }
    let inputs: BTreeMap<String, String> = cell
        .plan
        .nodes()
        .iter()
        .filter(|n| matches!(n.input, InputBinding::Const { value: None, .. }))
        .map(|n| (n.id.clone(), cell.city.to_string()))
        .collect();
    let opts = ExecOptions {
        mode: cell.mode,
        alpha: Some(cell.alpha),
        consent: Some(cell.opts.contains(&Optimization::Consent)),
        cache: cell.opts.contains(&Optimization::Cache),
        parallel: false,
        record: cell.record,
    };
    let start = Instant::now();
    let result = execute_plan(cell.plan, &dep.services, &inputs, &opts);
    let ms = start.elapsed().as_secs_f64() * 1e3;
    for (svc, k) in prepared {
        svc.write_store().disable_offline(k);
    }
    Ok((result?, ms))
}

fn check_services(plan: &CompositionPlan, dep: &Deployment) -> Result<()> {
    for n in plan.nodes() {
        if !dep.services.contains_key(&n.service) {
            let have: Vec<&str> = dep.services.keys().map(String::as_str).collect();
            return Err(Error::Plan(format!(
                "node `{}` names service `{}`, the deployment has {}",
                n.id,
                n.service,
                have.join(", ")
            )));
        }
    }
    Ok(())
}

fn row(size: usize, alpha_k: usize, mode: Mode, opts: String, ms: f64, ex: &Execution) -> MetricsRow {
    MetricsRow {
        dataset_size: size,
        alpha_k,
        mode: mode.as_str().into(),
        optimizations: opts,
        wall_time_ms: ms,
        selectivity_queries: ex.metrics.selectivity_queries,
        invocations: ex.metrics.invocations,
        reused_ranges: ex.metrics.reused_ranges,
        result_rows: ex.table.len(),
    }
}

pub struct RunOutput {
    pub row: MetricsRow,
    pub execution: Execution,
    pub deployment: Deployment,
}

/// Execute `plan` (the default chain when `None`) once on the first
/// configured size, loaded from `<data_dir>/<size>`, and write
/// `results.csv`, `transcript.ndjson` and `metrics.csv` into `out`.
/// Protected runs use the configured optimizations.
pub fn run(config: &ExperimentConfig, plan: Option<&CompositionPlan>, mode: Mode, out: &Path) -> Result<RunOutput> {
    config.validate()?;
    let size = config.dataset_sizes[0];
    let data = load_dataset(&config.data_dir.join(size.to_string()))?;
    let dep = Deployment::new(&data, config.bucket_sizes[0], config.k, config.transport)?;
    let default;
    let plan = match plan {
        Some(p) => p,
        None => {
            default = default_plan(config.k, config.alpha);
            &default
        }
    };
    check_services(plan, &dep)?;
    let none = BTreeSet::new();
    let opts = match mode {
        Mode::Protected => &config.optimizations,
        Mode::Unprotected => &none,
    };
    let (execution, ms) = execute_cell(
        &dep,
        &Cell {
            plan,
            mode,
            opts,
            alpha: config.alpha,
            city: &config.city,
            record: true,
        },
    )?;
    let alpha_k = match mode {
        Mode::Protected => config.alpha * config.k,
        Mode::Unprotected => 0,
    };
    let row = row(size, alpha_k, mode, optimization_label(opts), ms, &execution);

    fs::create_dir_all(out)?;
    execution
        .table
        .write_csv(BufWriter::new(File::create(out.join("results.csv"))?))?;
    let mut t = BufWriter::new(File::create(out.join("transcript.ndjson"))?);
    execution.transcript.write_ndjson(&mut t)?;
    t.flush()?;
    write_metrics(
        std::slice::from_ref(&row),
        BufWriter::new(File::create(out.join("metrics.csv"))?),
    )?;
    Ok(RunOutput {
        row,
        execution,
        deployment: dep,
    })
}

/// Sweep sizes x bucket sizes x {unprotected, protected per `alpha * k` and
/// optimization set}. Data is generated in memory from the config seed. Wall
/// time is the mean over `repetitions`; counts come from the first run, as
/// they are deterministic. With several bucket sizes the optimization label
/// carries an `@bucket=N` suffix.
pub fn bench(config: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for &size in &config.dataset_sizes {
        let data = generate(config.seed, size, config.cities)?;
        for &bucket in &config.bucket_sizes {
            let dep = Deployment::new(&data, bucket, config.k, config.transport)?;
            let suffix = if config.bucket_sizes.len() > 1 {
                format!("@bucket={bucket}")
            } else {
                String::new()
            };
            let mut cells: Vec<(Mode, usize, BTreeSet<Optimization>)> = vec![(Mode::Unprotected, 0, BTreeSet::new())];
            for beta in config.betas() {
                for set in config.optimization_sets() {
                    cells.push((Mode::Protected, beta, set));
                }
            }
            for (mode, beta, set) in cells {
                let alpha = config.alpha_for_beta(beta.max(1));
                let plan = default_plan(config.k, alpha);
                let cell = Cell {
                    plan: &plan,
                    mode,
                    opts: &set,
                    alpha,
                    city: &config.city,
                    record: false,
                };
                let (first, mut total) = execute_cell(&dep, &cell)?;
                for _ in 1..config.repetitions {
                    total += execute_cell(&dep, &cell)?.1;
                }
                let alpha_k = if mode == Mode::Protected { alpha * config.k } else { 0 };
                let label = format!("{}{suffix}", optimization_label(&set));
                rows.push(row(
                    size,
                    alpha_k,
                    mode,
                    label,
                    total / config.repetitions as f64,
                    &first,
                ));
            }
        }
    }
    Ok(rows)
}
