//! CSV ingestion, chronological splits, train-statistics standardization
//! and sliding-window extraction.

use std::fs::File;
use std::ops::Range;
use std::path::Path;

use mgcast_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multivariate series as read from disk: `len` rows by `dim` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub name: String,
    pub columns: Vec<String>,
    /// Opaque timestamp strings, present when the file has a date column.
    pub timestamps: Option<Vec<String>>,
    pub values: Matrix,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    /// Values of one channel over a row range.
    pub fn channel(&self, channel: usize, rows: Range<usize>) -> Vec<f64> {
        rows.map(|r| self.values.get(r, channel)).collect()
    }

    pub fn timestamp(&self, row: usize) -> String {
        match &self.timestamps {
            Some(ts) => ts[row].clone(),
            None => row.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DateColumn {
    /// A leading column is treated as timestamps when its header is `date`.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CsvSchema {
    pub date_column: DateColumn,
}

pub fn load_csv(path: &Path, schema: CsvSchema) -> Result<RawSeries> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, &name, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, name: &str, schema: CsvSchema) -> Result<RawSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("{name}: cannot read header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(Error::Data(format!("{name}: empty header row")));
    }
    let has_date = match schema.date_column {
        DateColumn::Present => true,
        DateColumn::Absent => false,
        DateColumn::Auto => headers
            .get(0)
            .is_some_and(|h| h.eq_ignore_ascii_case("date")),
    };
    let skip = usize::from(has_date);
    let columns: Vec<String> = headers.iter().skip(skip).map(str::to_owned).collect();
    if columns.is_empty() {
        return Err(Error::Data(format!("{name}: no numeric columns")));
    }
    let dim = columns.len();

    let mut timestamps = has_date.then(Vec::new);
    let mut data = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{name}: row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "{name}: row {row} has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        if let Some(ts) = timestamps.as_mut() {
            ts.push(record[0].to_owned());
        }
        for (col, cell) in record.iter().skip(skip).enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => data.push(v),
                _ => {
                    return Err(Error::Data(format!(
                        "{name}: row {row}, column {} ({}): non-numeric value {cell:?}",
                        col + skip,
                        columns[col]
                    )))
                }
            }
        }
    }
    let len = data.len() / dim;
    let values = Matrix::from_vec(len, dim, data).map_err(|e| Error::Data(e.to_string()))?;
    Ok(RawSeries {
        name: name.to_owned(),
        columns,
        timestamps,
        values,
    })
}

/// Train/validation/test fractions, applied chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    pub const STANDARD: SplitSpec = SplitSpec {
        train: 0.7,
        val: 0.1,
        test: 0.2,
    };
    pub const ETT: SplitSpec = SplitSpec {
        train: 0.6,
        val: 0.2,
        test: 0.2,
    };

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::Config(format!(
                "split fractions must be positive, got {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn get(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

fn floor_frac(len: usize, frac: f64) -> usize {
    // Tolerate representation error such as (0.7 + 0.1) * 100 = 79.999…
    ((len as f64 * frac) + 1e-9).floor() as usize
}

/// Contiguous chronological ranges; each must hold at least `min_len` rows.
pub fn split(len: usize, spec: SplitSpec, min_len: usize) -> Result<SplitRanges> {
    spec.validate()?;
    let a = floor_frac(len, spec.train).min(len);
    let b = floor_frac(len, spec.train + spec.val).clamp(a, len);
    let ranges = SplitRanges {
        train: 0..a,
        val: a..b,
        test: b..len,
    };
    for (name, r) in [
        ("train", &ranges.train),
        ("val", &ranges.val),
        ("test", &ranges.test),
    ] {
        if r.len() < min_len {
            return Err(Error::Config(format!(
                "{name} split has {} rows, fewer than input_len + output_len = {min_len}",
                r.len()
            )));
        }
    }
    Ok(ranges)
}

pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel z-scoring with train-split statistics (population std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub eps: f64,
}

impl Standardizer {
    /// Fits on `rows` of `values`.
    pub fn fit(values: &Matrix, rows: Range<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data(
                "cannot fit standardizer on an empty train split".into(),
            ));
        }
        let n = rows.len() as f64;
        let dim = values.cols();
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(values.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(values.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Standardizer {
            mean,
            std,
            eps: STD_FLOOR,
        })
    }

    fn scale(&self, channel: usize) -> f64 {
        self.std[channel].max(self.eps)
    }

    pub fn apply(&self, channel: usize, x: f64) -> f64 {
        (x - self.mean[channel]) / self.scale(channel)
    }

    pub fn invert(&self, channel: usize, z: f64) -> f64 {
        z * self.scale(channel) + self.mean[channel]
    }

    pub fn apply_matrix(&self, values: &Matrix) -> Matrix {
        let mut out = values.clone();
        let dim = values.cols();
        for (k, v) in out.as_mut_slice().iter_mut().enumerate() {
            *v = self.apply(k % dim, *v);
        }
        out
    }

    pub fn invert_matrix(&self, values: &Matrix) -> Matrix {
        let mut out = values.clone();
        let dim = values.cols();
        for (k, v) in out.as_mut_slice().iter_mut().enumerate() {
            *v = self.invert(k % dim, *v);
        }
        out
    }
}

/// Sliding (input, target) windows over one split, flattened across
/// channels in channel-major, start-ascending order.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    /// Standardized split values, one vector per channel.
    channels: Vec<Vec<f64>>,
    /// First row of the split in the full series.
    pub row_offset: usize,
    pub input_len: usize,
    pub output_len: usize,
    per_channel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window<'a> {
    pub channel: usize,
    /// Start row relative to the split.
    pub start: usize,
    pub input: &'a [f64],
    pub target: &'a [f64],
}

impl WindowedDataset {
    pub fn new(
        channels: Vec<Vec<f64>>,
        row_offset: usize,
        input_len: usize,
        output_len: usize,
    ) -> Result<Self> {
        let split_len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != split_len) {
            return Err(Error::Data("channels of unequal length".into()));
        }
        let need = input_len + output_len;
        if split_len < need {
            return Err(Error::Config(format!(
                "split of {split_len} rows is shorter than input_len + output_len = {need}"
            )));
        }
        Ok(WindowedDataset {
            channels,
            row_offset,
            input_len,
            output_len,
            per_channel: split_len - need + 1,
        })
    }

    pub fn len(&self) -> usize {
        self.per_channel * self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    pub fn windows_per_channel(&self) -> usize {
        self.per_channel
    }

    pub fn get(&self, index: usize) -> Window<'_> {
        let channel = index / self.per_channel;
        let start = index % self.per_channel;
        let c = &self.channels[channel];
        Window {
            channel,
            start,
            input: &c[start..start + self.input_len],
            target: &c[start + self.input_len..start + self.input_len + self.output_len],
        }
    }

    pub fn index_of(&self, channel: usize, start: usize) -> Option<usize> {
        (channel < self.channels.len() && start < self.per_channel)
            .then(|| channel * self.per_channel + start)
    }

    pub fn iter(&self) -> impl Iterator<Item = Window<'_>> + '_ {
        (0..self.len()).map(|k| self.get(k))
    }

    /// Copies the selected windows into `[n × I]` inputs and `[n × O]` targets.
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Matrix) {
        let mut x = Vec::with_capacity(indices.len() * self.input_len);
        let mut y = Vec::with_capacity(indices.len() * self.output_len);
        for &k in indices {
            let w = self.get(k);
            x.extend_from_slice(w.input);
            y.extend_from_slice(w.target);
        }
        (
            Matrix::from_vec(indices.len(), self.input_len, x).expect("window shape"),
            Matrix::from_vec(indices.len(), self.output_len, y).expect("window shape"),
        )
    }
}

/// Standardizes `rows` of `series` and cuts stride-1 windows from them.
pub fn make_windows(
    series: &RawSeries,
    rows: Range<usize>,
    scaler: &Standardizer,
    input_len: usize,
    output_len: usize,
) -> Result<WindowedDataset> {
    let channels = (0..series.dim())
        .map(|c| {
            rows.clone()
                .map(|r| scaler.apply(c, series.values.get(r, c)))
                .collect()
        })
        .collect();
    WindowedDataset::new(channels, rows.start, input_len, output_len)
}

/// Benchmark dataset conventions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetPreset {
    pub name: &'static str,
    pub file: &'static str,
    pub len: usize,
    /// Numeric columns in the canonical file (date column excluded).
    pub dim: usize,
    pub split: SplitSpec,
}

pub const PRESETS: &[DatasetPreset] = &[
    DatasetPreset {
        name: "ettm2",
        file: "ETTm2.csv",
        len: 69680,
        dim: 7,
        split: SplitSpec::ETT,
    },
    DatasetPreset {
        name: "electricity",
        file: "electricity.csv",
        len: 26304,
        dim: 321,
        split: SplitSpec::STANDARD,
    },
    DatasetPreset {
        name: "exchange",
        file: "exchange_rate.csv",
        len: 7588,
        dim: 8,
        split: SplitSpec::STANDARD,
    },
    DatasetPreset {
        name: "traffic",
        file: "traffic.csv",
        len: 17544,
        dim: 862,
        split: SplitSpec::STANDARD,
    },
    DatasetPreset {
        name: "weather",
        file: "weather.csv",
        len: 52696,
        dim: 21,
        split: SplitSpec::STANDARD,
    },
    DatasetPreset {
        name: "ili",
        file: "national_illness.csv",
        len: 966,
        dim: 7,
        split: SplitSpec::STANDARD,
    },
];

pub fn preset(name: &str) -> Option<&'static DatasetPreset> {
    PRESETS.iter().find(|p| p.name.eq_ignore_ascii_case(name))
}

/// Noiseless sum of two sinusoids with periods 24 and 96 (single channel).
pub fn two_tone(len: usize) -> RawSeries {
    use std::f64::consts::TAU;
    let data = (0..len)
        .map(|t| {
            let t = t as f64;
            (TAU * t / 24.0).sin() + 0.5 * (TAU * t / 96.0).sin()
        })
        .collect();
    RawSeries {
        name: "two-tone".into(),
        columns: vec!["value".into()],
        timestamps: None,
        values: Matrix::from_vec(len, 1, data).expect("single column"),
    }
}
