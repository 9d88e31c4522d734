//! Command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mgcast_core::{forward, param_count, Vector};
use serde_json::json;

use crate::checkpoint::{Checkpoint, FORMAT_VERSION};
use crate::config::RunConfig;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::experiment::{self, Cell, SweepAxis};
use crate::records;
use crate::train::{self, PreparedData};

#[derive(Debug, Parser)]
#[command(
    name = "mgcast",
    version,
    about = "Long-horizon time-series forecasting with V-cycle MgNet"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (TOML).
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output root; each run writes into a subdirectory named by its config hash.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Worker threads for ablation and sweep cells.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model, then write its checkpoint and test metrics.
    Train(RunArgs),
    /// Evaluate a checkpoint on a data split.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Data file to use instead of the one recorded in the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and compare the variants or operator pairs listed under [ablate].
    Ablate(RunArgs),
    /// Train one cell per value of a [sweep] axis.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// One of grids, iters, input_len.
        #[arg(long)]
        axis: SweepAxis,
    },
    /// Export one forecast window as CSV (t, truth, prediction).
    Predict {
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Window start within the split, counted per channel.
        #[arg(long, conflicts_with = "timestamp")]
        window: Option<usize>,
        /// Timestamp of the first forecast step.
        #[arg(long)]
        timestamp: Option<String>,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Report values on the original scale.
        #[arg(long)]
        denormalize: bool,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Write to this file instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Time training epochs and estimate memory use.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 3)]
        epochs: usize,
    },
    /// Summarize a checkpoint, metrics file or table.
    Inspect {
        path: PathBuf,
        /// Exit non-zero if the artifact is malformed or inconsistent.
        #[arg(long)]
        validate: bool,
    },
}

fn load_run(args: &RunArgs) -> Result<RunConfig> {
    let mut run = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        run.seed = seed;
    }
    Ok(run)
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args, stdout),
        Command::Eval {
            checkpoint,
            split,
            data,
        } => cmd_eval(&checkpoint, split, data.as_deref(), stdout),
        Command::Ablate(args) => {
            let run = load_run(&args)?;
            let cells = experiment::ablation_cells(&run)?;
            run_grid(&run, cells, &args, "ablation.csv", stdout)
        }
        Command::Sweep { run: args, axis } => {
            let run = load_run(&args)?;
            let cells = experiment::sweep_cells(&run, axis)?;
            let name = format!("sweep-{}.csv", axis.name());
            run_grid(&run, cells, &args, &name, stdout)
        }
        Command::Predict {
            checkpoint,
            split,
            window,
            timestamp,
            channel,
            denormalize,
            data,
            output,
        } => {
            let csv = cmd_predict(
                &checkpoint,
                split,
                window,
                timestamp.as_deref(),
                channel,
                denormalize,
                data.as_deref(),
            )?;
            match output {
                Some(path) => std::fs::write(path, csv)?,
                None => stdout.write_all(csv.as_bytes())?,
            }
            Ok(())
        }
        Command::Bench { run: args, epochs } => {
            let run = load_run(&args)?;
            let data = PreparedData::load(&run)?;
            let report = train::benchmark(&run, &data, epochs)?;
            writeln!(
                stdout,
                "{}",
                serde_json::to_string(&report).expect("report serializes")
            )?;
            Ok(())
        }
        Command::Inspect { path, validate } => cmd_inspect(&path, validate, stdout),
    }
}

fn cmd_train(args: &RunArgs, stdout: &mut dyn Write) -> Result<()> {
    let run = load_run(args)?;
    let data = PreparedData::load(&run)?;
    let art = experiment::train_run(&run, &data, &args.out)?;
    if art.reused {
        eprintln!(
            "outputs for config {} already exist; left unchanged",
            run.short_hash()
        );
    }
    writeln!(stdout, "checkpoint: {}", art.checkpoint.display())?;
    writeln!(stdout, "metrics: {}", art.metrics.display())?;
    writeln!(stdout, "{}", art.record.to_line())?;
    Ok(())
}

fn cmd_eval(path: &Path, split: Split, data: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(path)?;
    let data = experiment::checkpoint_data(&ckpt, data)?;
    let eval = train::evaluate(&ckpt, &data, split)?;
    let record = experiment::metrics_record(&ckpt.run, &eval, split, 0.0)?;
    writeln!(stdout, "{}", record.to_line())?;
    Ok(())
}

fn run_grid(
    run: &RunConfig,
    cells: Vec<Cell>,
    args: &RunArgs,
    table_name: &str,
    stdout: &mut dyn Write,
) -> Result<()> {
    let source = run.data.resolve(run.base_dir.as_deref())?;
    let series = train::load_series(&source)?;
    let outcomes = experiment::run_cells(cells, &series, &source, &args.out, args.jobs);

    let dir = args.out.join(format!("grid-{}", run.short_hash()));
    std::fs::create_dir_all(&dir)?;
    let table = experiment::table(&outcomes).to_csv();
    let mut lines = String::new();
    let mut first_error: Option<Error> = None;
    for o in &outcomes {
        match &o.result {
            Ok(a) => {
                lines.push_str(&a.record.to_line());
                lines.push('\n');
            }
            Err(e) => {
                eprintln!(
                    "cell {} (horizon {}) failed: {e}",
                    o.cell.column, o.cell.horizon
                );
                if first_error.is_none() {
                    first_error = Some(match e {
                        Error::Config(m) => Error::Config(m.clone()),
                        Error::Numeric(m) => Error::Numeric(m.clone()),
                        Error::Model(m) => Error::Model(m.clone()),
                        other => Error::Data(other.to_string()),
                    });
                }
            }
        }
    }
    let table_path = dir.join(table_name);
    std::fs::write(&table_path, &table)?;
    if !lines.is_empty() {
        std::fs::write(dir.join(experiment::METRICS_FILE), &lines)?;
    }
    write!(stdout, "{table}")?;
    writeln!(stdout, "table: {}", table_path.display())?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// CSV rows `t,truth,prediction` for one window.
pub fn cmd_predict(
    path: &Path,
    split: Split,
    window: Option<usize>,
    timestamp: Option<&str>,
    channel: usize,
    denormalize: bool,
    data: Option<&Path>,
) -> Result<String> {
    let ckpt = Checkpoint::load(path)?;
    let data = experiment::checkpoint_data(&ckpt, data)?;
    let model = &ckpt.run.model;
    let set = data.windows(split, model)?;
    if channel >= set.dim() {
        return Err(Error::Config(format!(
            "channel {channel} out of range (dataset has {})",
            set.dim()
        )));
    }
    let start = match (window, timestamp) {
        (Some(w), _) => w,
        (None, Some(ts)) => {
            let row = (0..data.series.len())
                .find(|&r| data.series.timestamp(r) == ts)
                .ok_or_else(|| Error::Config(format!("timestamp {ts:?} not found")))?;
            row.checked_sub(set.row_offset + model.input_len)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "timestamp {ts:?} has no full lookback inside the {} split",
                        split.name()
                    ))
                })?
        }
        (None, None) => 0,
    };
    let index = set.index_of(channel, start).ok_or_else(|| {
        Error::Config(format!(
            "window {start} out of range: the {} split has {} windows per channel",
            split.name(),
            set.windows_per_channel()
        ))
    })?;
    let w = set.get(index);
    let y = forward(&ckpt.params, model, &Vector::from(w.input))?;

    let first_row = set.row_offset + start + model.input_len;
    let mut out = String::from("t,truth,prediction\n");
    for (k, (z, p)) in w.target.iter().zip(y.as_slice()).enumerate() {
        let row = first_row + k;
        let (truth, pred) = if denormalize {
            (
                data.series.values.get(row, channel),
                ckpt.standardizer.invert(channel, *p),
            )
        } else {
            (*z, *p)
        };
        out.push_str(&format!("{},{truth},{pred}\n", data.series.timestamp(row)));
    }
    Ok(out)
}

fn cmd_inspect(path: &Path, validate: bool, stdout: &mut dyn Write) -> Result<()> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    if Checkpoint::is_checkpoint(&bytes) {
        let ckpt = Checkpoint::from_bytes(&bytes)?;
        let expected = param_count(&ckpt.run.model)?;
        let recomputed = ckpt.run.hash();
        let finite = ckpt.params.values().iter().all(|v| v.is_finite());
        let best_val = ckpt
            .history
            .get(ckpt.best_epoch.wrapping_sub(1))
            .map(|h| h.val_mse);
        let summary = json!({
            "kind": "checkpoint",
            "format_version": FORMAT_VERSION,
            "config_hash": ckpt.config_hash,
            "config_hash_matches": recomputed == ckpt.config_hash,
            "param_count": expected,
            "stored_params": ckpt.params.len(),
            "variant": ckpt.run.model.variant.name(),
            "input_len": ckpt.run.model.input_len,
            "output_len": ckpt.run.model.output_len,
            "epochs": ckpt.history.len(),
            "best_epoch": ckpt.best_epoch,
            "best_val_mse": best_val,
            "data_path": ckpt.data_path,
        });
        writeln!(
            stdout,
            "{}",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        )?;
        if validate {
            if recomputed != ckpt.config_hash {
                return Err(Error::Data(
                    "stored config hash does not match the stored config".into(),
                ));
            }
            if ckpt.params.len() != expected {
                return Err(Error::Data(format!(
                    "checkpoint holds {} parameters, model needs {expected}",
                    ckpt.params.len()
                )));
            }
            if !finite {
                return Err(Error::Data(
                    "checkpoint parameters contain non-finite values".into(),
                ));
            }
            if best_val.is_none() {
                return Err(Error::Data("best epoch is missing from the history".into()));
            }
        }
        return Ok(());
    }

    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Data(format!("{} is not UTF-8 text", path.display())))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let (kind, n) = match ext {
        "jsonl" => ("metrics", records::validate_metrics(&text)),
        "csv" => ("table", records::validate_table(&text)),
        _ => {
            return Err(Error::Data(format!(
                "{}: unrecognized artifact type",
                path.display()
            )))
        }
    };
    match n {
        Ok(n) => {
            writeln!(
                stdout,
                "{}",
                json!({"kind": kind, "records": n, "valid": true})
            )?;
            Ok(())
        }
        Err(e) if validate => Err(e),
        Err(e) => {
            writeln!(
                stdout,
                "{}",
                json!({"kind": kind, "valid": false, "error": e.to_string()})
            )?;
            Ok(())
        }
    }
}
