//! Mini-batch training with early stopping, evaluation and timing.

use std::path::PathBuf;
use std::time::Instant;

use mgcast_core::metrics::MetricSums;
use mgcast_core::optim::{adam_step, clip_global_norm, AdamState};
use mgcast_core::{
    forward_batch, param_count, record_forward_batch, InitSpec, Matrix, ModelConfig, ModelParams,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, RunConfig, SyntheticKind, TrainConfig};
use crate::data::{self, CsvSchema, RawSeries, Split, SplitRanges, Standardizer, WindowedDataset};
use crate::error::{Error, Result};

/// Windows evaluated per forward call.
const EVAL_CHUNK: usize = 512;

pub fn load_series(source: &DataSource) -> Result<RawSeries> {
    match source {
        DataSource::File(path) => data::load_csv(path, CsvSchema::default()),
        DataSource::Synthetic(s) => Ok(match s.kind {
            SyntheticKind::TwoTone => data::two_tone(s.len),
        }),
    }
}

/// A loaded, split and standardized dataset.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub series: RawSeries,
    pub ranges: SplitRanges,
    pub scaler: Standardizer,
    pub source: DataSource,
}

impl PreparedData {
    pub fn load(run: &RunConfig) -> Result<Self> {
        let source = run.data.resolve(run.base_dir.as_deref())?;
        Self::from_source(run, source)
    }

    pub fn from_source(run: &RunConfig, source: DataSource) -> Result<Self> {
        let series = load_series(&source)?;
        Self::from_series(run, series, source)
    }

    pub fn from_series(run: &RunConfig, series: RawSeries, source: DataSource) -> Result<Self> {
        let min_len = run.model.input_len + run.model.output_len;
        let ranges = data::split(series.len(), run.data.split_spec()?, min_len)?;
        let scaler = Standardizer::fit(&series.values, ranges.train.clone())?;
        Ok(PreparedData {
            series,
            ranges,
            scaler,
            source,
        })
    }

    pub fn windows(&self, split: Split, model: &ModelConfig) -> Result<WindowedDataset> {
        data::make_windows(
            &self.series,
            self.ranges.get(split),
            &self.scaler,
            model.input_len,
            model.output_len,
        )
    }

    pub fn data_path(&self) -> Option<PathBuf> {
        match &self.source {
            DataSource::File(p) => Some(p.clone()),
            DataSource::Synthetic(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of per-batch losses.
    pub train_loss: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mse: f64,
    pub mae: f64,
    pub n_windows: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Wall time of each epoch, validation pass included.
    pub epoch_times: Vec<f64>,
}

impl TrainOutcome {
    pub fn median_epoch_time(&self) -> f64 {
        median(&self.epoch_times)
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean squared error over all elements and its gradient with respect to `y`.
pub fn mse_loss(y: &Matrix, target: &Matrix) -> (f64, Matrix) {
    let n = y.as_slice().len() as f64;
    let mut grad = Matrix::zeros(y.rows(), y.cols());
    let mut loss = 0.0;
    for ((g, a), b) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(y.as_slice())
        .zip(target.as_slice())
    {
        let d = a - b;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    (loss / n, grad)
}

/// One optimizer step on a batch; returns the pre-step loss.
pub fn train_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    model: &ModelConfig,
    train: &TrainConfig,
    x: &Matrix,
    target: &Matrix,
) -> Result<f64> {
    let (loss, mut grads) = {
        let (y, tape) = record_forward_batch(params, model, x)?;
        let (loss, dl_dy) = mse_loss(&y, target);
        (loss, tape.backward(&dl_dy)?)
    };
    if !loss.is_finite() {
        return Ok(loss);
    }
    if train.clip_norm > 0.0 {
        clip_global_norm(&mut grads.0, train.clip_norm);
    }
    adam_step(params.values_mut(), grads.as_slice(), state, &train.adam());
    Ok(loss)
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Trains from a fresh initialization and returns the best-validation checkpoint.
pub fn train(run: &RunConfig, data: &PreparedData) -> Result<TrainOutcome> {
    let model = &run.model;
    let cfg = &run.train;
    let train_set = data.windows(Split::Train, model)?;
    let val_set = data.windows(Split::Val, model)?;

    let mut params = ModelParams::init(model, InitSpec::new(run.seed))?;
    let mut state = AdamState::new(params.len());
    let mut rng = shuffle_rng(run.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut epoch_times = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (x, t) = train_set.batch(batch);
            let loss = train_step(&mut params, &mut state, model, cfg, &x, &t)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged: non-finite loss at epoch {epoch}, step {}",
                    step + 1
                )));
            }
            loss_sum += loss;
            steps += 1;
        }
        let val = evaluate_params(&params, model, &val_set)?;
        if !val.mse.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged: non-finite validation MSE at epoch {epoch}"
            )));
        }
        epoch_times.push(start.elapsed().as_secs_f64());
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / steps as f64,
            val_mse: val.mse,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val.mse < *b) {
            best = Some((val.mse, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            run: run.clone(),
            config_hash: run.hash(),
            params,
            standardizer: data.scaler.clone(),
            history,
            best_epoch,
            data_path: data.data_path().map(|p| p.display().to_string()),
        },
        epoch_times,
    })
}

/// Full deterministic pass over `set`.
pub fn evaluate_params(
    params: &ModelParams,
    model: &ModelConfig,
    set: &WindowedDataset,
) -> Result<EvalMetrics> {
    let mut sums = MetricSums::default();
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, t) = set.batch(chunk);
        let y = forward_batch(params, model, &x)?;
        for r in 0..y.rows() {
            sums.add_window(t.row(r), y.row(r))?;
        }
    }
    Ok(EvalMetrics {
        mse: sums.mse(),
        mae: sums.mae(),
        n_windows: set.len(),
    })
}

pub fn evaluate(ckpt: &Checkpoint, data: &PreparedData, split: Split) -> Result<EvalMetrics> {
    let set = data.windows(split, &ckpt.run.model)?;
    evaluate_params(&ckpt.params, &ckpt.run.model, &set)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub param_count: usize,
    pub epoch_wall_time_s: f64,
    pub peak_resident_estimate_bytes: usize,
    pub train_windows: usize,
}

/// Times `epochs` training epochs (no validation) and reports the median.
pub fn benchmark(run: &RunConfig, data: &PreparedData, epochs: usize) -> Result<BenchReport> {
    let model = &run.model;
    let train_set = data.windows(Split::Train, model)?;
    let mut params = ModelParams::init(model, InitSpec::new(run.seed))?;
    let mut state = AdamState::new(params.len());
    let mut rng = shuffle_rng(run.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut times = Vec::with_capacity(epochs);
    for _ in 0..epochs.max(1) {
        let start = Instant::now();
        order.shuffle(&mut rng);
        for batch in order.chunks(run.train.batch_size) {
            let (x, t) = train_set.batch(batch);
            train_step(&mut params, &mut state, model, &run.train, &x, &t)?;
        }
        times.push(start.elapsed().as_secs_f64());
    }

    let full = run.train.batch_size.min(train_set.len());
    let (x, _) = train_set.batch(&order[..full]);
    let (_, tape) = record_forward_batch(&params, model, &x)?;
    let n = params.len();
    // Parameters, gradients and the two Adam moments.
    let resident = 4 * n * std::mem::size_of::<f64>() + tape.value_bytes();
    Ok(BenchReport {
        param_count: param_count(model)?,
        epoch_wall_time_s: median(&times),
        peak_resident_estimate_bytes: resident,
        train_windows: train_set.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DataConfig, SyntheticConfig};

    fn tiny_run(lr: f64, patience: usize, epochs: usize) -> RunConfig {
        let data = DataConfig {
            synthetic: Some(SyntheticConfig {
                kind: SyntheticKind::TwoTone,
                len: 300,
            }),
            ..Default::default()
        };
        let train = TrainConfig {
            learning_rate: lr,
            patience,
            max_epochs: epochs,
            ..Default::default()
        };
        RunConfig::new(data, ModelConfig::fv_mgnet(16, 8, vec![1, 1]), train, 3)
    }

    #[test]
    fn loss_gradient_hand_values() {
        let y = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let t = Matrix::from_vec(1, 2, vec![0.0, 2.0]).unwrap();
        let (loss, g) = mse_loss(&y, &t);
        assert_eq!(loss, 2.5);
        assert_eq!(g.as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0]), 2.5);
    }

    #[test]
    fn zero_lr_stops_after_patience() {
        let run = tiny_run(0.0, 1, 20);
        let data = PreparedData::load(&run).unwrap();
        let out = train(&run, &data).unwrap();
        assert_eq!(out.checkpoint.history.len(), 2);
        assert_eq!(out.checkpoint.best_epoch, 1);
    }

    #[test]
    fn same_seed_same_history() {
        let run = tiny_run(1e-3, 3, 3);
        let data = PreparedData::load(&run).unwrap();
        let a = train(&run, &data).unwrap().checkpoint;
        let b = train(&run, &data).unwrap().checkpoint;
        let bits = |c: &Checkpoint| {
            c.history
                .iter()
                .map(|h| (h.train_loss.to_bits(), h.val_mse.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.params.values(), b.params.values());
    }

    #[test]
    fn returns_best_validation_parameters() {
        let run = tiny_run(3e-3, 2, 8);
        let data = PreparedData::load(&run).unwrap();
        let ck = train(&run, &data).unwrap().checkpoint;
        let min = ck
            .history
            .iter()
            .map(|h| h.val_mse)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(ck.history[ck.best_epoch - 1].val_mse, min);
        let val = evaluate(&ck, &data, Split::Val).unwrap();
        assert_eq!(val.mse, min);
    }

    #[test]
    fn evaluation_is_repeatable() {
        let run = tiny_run(1e-3, 1, 1);
        let data = PreparedData::load(&run).unwrap();
        let ck = train(&run, &data).unwrap().checkpoint;
        let a = evaluate(&ck, &data, Split::Test).unwrap();
        let b = evaluate(&ck, &data, Split::Test).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_windows, data.ranges.test.len() - 16 - 8 + 1);
    }

    #[test]
    fn benchmark_delegates_param_count() {
        let run = tiny_run(1e-3, 1, 1);
        let data = PreparedData::load(&run).unwrap();
        let report = benchmark(&run, &data, 1).unwrap();
        assert_eq!(report.param_count, param_count(&run.model).unwrap());
        assert!(report.peak_resident_estimate_bytes > 4 * 8 * report.param_count);
    }
}
