//! Train-and-evaluate runs, ablation grids and sweeps, with outputs in
//! run-hash directories.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use mgcast_core::{param_count, ModelConfig, OpChoice, Variant};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::data::{RawSeries, Split};
use crate::error::{Error, Result};
use crate::records::{MetricsRecord, ResultTable};
use crate::train::{self, EvalMetrics, PreparedData};

pub const CHECKPOINT_FILE: &str = "checkpoint.fvmg";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

pub fn ops_label(model: &ModelConfig) -> String {
    format!("{}-{}", model.op_a.name(), model.op_b.name())
}

pub fn metrics_record(
    run: &RunConfig,
    eval: &EvalMetrics,
    split: Split,
    epoch_time_s: f64,
) -> Result<MetricsRecord> {
    Ok(MetricsRecord {
        dataset: run.data.label(),
        variant: run.model.variant.name().into(),
        ops: ops_label(&run.model),
        input_len: run.model.input_len,
        output_len: run.model.output_len,
        seed: run.seed,
        split: split.name().into(),
        mse: eval.mse,
        mae: eval.mae,
        n_windows: eval.n_windows,
        param_count: param_count(&run.model)?,
        epoch_time_s,
        config_hash: run.hash(),
    })
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub record: MetricsRecord,
    /// Outputs already existed and were left untouched.
    pub reused: bool,
}

/// Trains `run` on `data`, evaluates on the test split and writes the
/// checkpoint, metrics line and config under `out/<hash>/`. Existing
/// outputs for the same hash are reused, never overwritten.
pub fn train_run(run: &RunConfig, data: &PreparedData, out: &Path) -> Result<RunArtifacts> {
    let dir = out.join(run.short_hash());
    let checkpoint = dir.join(CHECKPOINT_FILE);
    let metrics = dir.join(METRICS_FILE);
    if checkpoint.is_file() && metrics.is_file() {
        let text = std::fs::read_to_string(&metrics)?;
        if let Some(Ok(record)) = text
            .lines()
            .next()
            .map(serde_json::from_str::<MetricsRecord>)
        {
            return Ok(RunArtifacts {
                dir,
                checkpoint,
                metrics,
                record,
                reused: true,
            });
        }
    }

    let outcome = train::train(run, data)?;
    let eval = train::evaluate(&outcome.checkpoint, data, Split::Test)?;
    let record = metrics_record(run, &eval, Split::Test, outcome.median_epoch_time())?;

    std::fs::create_dir_all(&dir)?;
    write_new(&dir.join(CONFIG_FILE), run.to_toml_string()?.as_bytes())?;
    write_new(&checkpoint, &outcome.checkpoint.to_bytes())?;
    write_new(&metrics, format!("{}\n", record.to_line()).as_bytes())?;
    Ok(RunArtifacts {
        dir,
        checkpoint,
        metrics,
        record,
        reused: false,
    })
}

/// Writes via a temporary file and rename so readers never see partial output.
fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Locates the data a checkpoint was trained on.
pub fn checkpoint_data(ckpt: &Checkpoint, data_override: Option<&Path>) -> Result<PreparedData> {
    let source = match (data_override, &ckpt.data_path) {
        (Some(p), _) => DataSource::File(p.to_path_buf()),
        (None, Some(p)) if Path::new(p).is_file() => DataSource::File(PathBuf::from(p)),
        _ => ckpt.run.data.resolve(None)?,
    };
    let data = PreparedData::from_source(&ckpt.run, source)?;
    if data.scaler != ckpt.standardizer {
        return Err(Error::Data(
            "data file does not reproduce the checkpoint's standardizer statistics".into(),
        ));
    }
    Ok(data)
}

/// One column of an ablation or sweep table at one horizon.
#[derive(Debug, Clone)]
pub struct Cell {
    pub column: String,
    pub horizon: usize,
    pub run: std::result::Result<RunConfig, String>,
}

fn model_for_variant(base: &ModelConfig, variant: Variant, residual_iters: usize) -> ModelConfig {
    match variant {
        Variant::Residual => ModelConfig {
            variant,
            grids: 1,
            smoothing_iters: vec![residual_iters],
            ..base.clone()
        },
        _ => ModelConfig {
            variant,
            ..base.clone()
        },
    }
}

fn checked(run: &RunConfig, model: ModelConfig) -> std::result::Result<RunConfig, String> {
    model.validate().map_err(|e| e.to_string())?;
    Ok(run.cell(model))
}

/// Cells of `[ablate]`: variants, operator pairs, or their product, for each horizon.
pub fn ablation_cells(run: &RunConfig) -> Result<Vec<Cell>> {
    let spec = run
        .ablate
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [ablate] section".into()))?;
    if spec.variants.is_empty() && spec.ops.is_empty() {
        return Err(Error::Config("[ablate] needs variants and/or ops".into()));
    }
    let base = &run.model;
    let residual_iters = spec
        .residual_iters
        .unwrap_or_else(|| base.smoothing_iters.iter().sum());
    let variants: Vec<Option<Variant>> = if spec.variants.is_empty() {
        vec![None]
    } else {
        spec.variants.iter().copied().map(Some).collect()
    };
    let ops: Vec<Option<(OpChoice, OpChoice)>> = if spec.ops.is_empty() {
        vec![None]
    } else {
        spec.ops.iter().copied().map(Some).collect()
    };
    let horizons = if spec.horizons.is_empty() {
        vec![base.output_len]
    } else {
        spec.horizons.clone()
    };

    let mut cells = Vec::new();
    for &horizon in &horizons {
        for v in &variants {
            for o in &ops {
                let mut model = ModelConfig {
                    output_len: horizon,
                    ..base.clone()
                };
                if let Some(v) = v {
                    model = model_for_variant(&model, *v, residual_iters);
                }
                if let Some((a, b)) = o {
                    model = model.with_ops(*a, *b);
                }
                let column = match (v, o) {
                    (Some(v), None) => v.name().to_owned(),
                    (None, Some(_)) => ops_label(&model),
                    _ => format!("{}/{}", model.variant.name(), ops_label(&model)),
                };
                cells.push(Cell {
                    column,
                    horizon,
                    run: checked(run, model),
                });
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Grids,
    Iters,
    InputLen,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Grids => "grids",
            SweepAxis::Iters => "iters",
            SweepAxis::InputLen => "input_len",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grids" => Ok(SweepAxis::Grids),
            "iters" => Ok(SweepAxis::Iters),
            "input_len" | "input-len" | "input" => Ok(SweepAxis::InputLen),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?} (grids, iters, input_len)"
            ))),
        }
    }
}

/// Cells of `[sweep]` along one axis. Grid and iteration sweeps use a
/// uniform iteration count, taken from `model.smoothing_iters[0]` for the
/// grids axis.
pub fn sweep_cells(run: &RunConfig, axis: SweepAxis) -> Result<Vec<Cell>> {
    let spec = run
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [sweep] section".into()))?;
    let base = &run.model;
    let values = match axis {
        SweepAxis::Grids => &spec.grids,
        SweepAxis::Iters => &spec.iters,
        SweepAxis::InputLen => &spec.input_len,
    };
    if values.is_empty() {
        return Err(Error::Config(format!(
            "[sweep] lists no values for axis {axis:?}"
        )));
    }
    Ok(values
        .iter()
        .map(|&v| {
            let model = match axis {
                SweepAxis::Grids => ModelConfig {
                    grids: v,
                    smoothing_iters: vec![base.smoothing_iters[0]; v],
                    ..base.clone()
                },
                SweepAxis::Iters => ModelConfig {
                    smoothing_iters: vec![v; base.grids],
                    ..base.clone()
                },
                SweepAxis::InputLen => ModelConfig {
                    input_len: v,
                    ..base.clone()
                },
            };
            Cell {
                column: v.to_string(),
                horizon: base.output_len,
                run: checked(run, model),
            }
        })
        .collect())
}

#[derive(Debug)]
pub struct CellOutcome {
    pub cell: Cell,
    pub result: Result<RunArtifacts>,
}

/// Trains every cell on a pool of `jobs` threads. Results keep cell order.
pub fn run_cells(
    cells: Vec<Cell>,
    series: &RawSeries,
    source: &DataSource,
    out: &Path,
    jobs: usize,
) -> Vec<CellOutcome> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunArtifacts>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let work = |k: usize| -> Result<RunArtifacts> {
        let run = cells[k].run.clone().map_err(Error::Config)?;
        let data = PreparedData::from_series(&run, series.clone(), source.clone())?;
        train_run(&run, &data, out)
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, cells.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= cells.len() {
                    break;
                }
                let r = work(k);
                *slots[k].lock().expect("slot lock") = Some(r);
            });
        }
    });
    cells
        .into_iter()
        .zip(slots)
        .map(|(cell, slot)| CellOutcome {
            cell,
            result: slot
                .into_inner()
                .expect("slot lock")
                .expect("every cell ran"),
        })
        .collect()
}

pub fn table(outcomes: &[CellOutcome]) -> ResultTable {
    let mut columns: Vec<String> = Vec::new();
    let mut horizons: Vec<usize> = Vec::new();
    for o in outcomes {
        if !columns.contains(&o.cell.column) {
            columns.push(o.cell.column.clone());
        }
        if !horizons.contains(&o.cell.horizon) {
            horizons.push(o.cell.horizon);
        }
    }
    let rows = horizons
        .iter()
        .map(|&h| {
            let cells = columns
                .iter()
                .map(|c| {
                    outcomes
                        .iter()
                        .find(|o| o.cell.horizon == h && &o.cell.column == c)
                        .and_then(|o| o.result.as_ref().ok())
                        .map(|a| (a.record.mse, a.record.mae))
                })
                .collect();
            (h, cells)
        })
        .collect();
    ResultTable { columns, rows }
}
