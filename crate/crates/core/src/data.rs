//! Synthetic models, latent noise, time-series ingestion and lag embedding.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unsupported latent distribution {0:?} (expected `uniform` or `normal`)")]
    UnknownDistribution(String),
    #[error("unknown statistic {0:?} (expected `sum` or `component:<k>`)")]
    UnknownStatistic(String),
    #[error("statistic needs component {component} but rows have {width} columns")]
    StatisticOutOfRange { component: usize, width: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: malformed header: {msg}")]
    MalformedHeader { path: String, msg: String },
    #[error("{path}: row {row}: expected {expected} cells, found {found}")]
    Ragged {
        path: String,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: row {row}, column {column:?}: cannot parse {value:?}")]
    BadCell {
        path: String,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: row {row}: timestamps must be strictly increasing")]
    NotIncreasing { path: String, row: usize },
    #[error("{path}: {msg}")]
    Csv { path: String, msg: String },
    #[error("column {0} is constant on the fitting range; cannot normalize")]
    ConstantColumn(usize),
    #[error("empty fitting range")]
    EmptyRange,
    #[error("series has {len} rows, lag {lag} needs at least {}", lag + 1)]
    SeriesTooShort { len: usize, lag: usize },
    #[error("lag must be >= 1")]
    ZeroLag,
    #[error("column {column} out of range for {width} columns")]
    ColumnOutOfRange { column: usize, width: usize },
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, DataError>;

// ---- latent noise ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentDistribution {
    /// `U[0,1]` per coordinate.
    Uniform,
    /// `N(0,1)` per coordinate, unclipped.
    Normal,
}

impl FromStr for LatentDistribution {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "normal" => Ok(Self::Normal),
            other => Err(DataError::UnknownDistribution(other.to_string())),
        }
    }
}

impl fmt::Display for LatentDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Normal => "normal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LatentSpec {
    pub distribution: LatentDistribution,
    pub dim: usize,
}

impl LatentSpec {
    pub fn uniform(dim: usize) -> Self {
        Self {
            distribution: LatentDistribution::Uniform,
            dim,
        }
    }

    pub fn normal(dim: usize) -> Self {
        Self {
            distribution: LatentDistribution::Normal,
            dim,
        }
    }
}

/// `count × dim` i.i.d. draws.
pub fn sample_latent<R: Rng + ?Sized>(spec: LatentSpec, count: usize, rng: &mut R) -> Array2<f64> {
    match spec.distribution {
        LatentDistribution::Uniform => Array2::from_shape_simple_fn((count, spec.dim), || rng.random::<f64>()),
        LatentDistribution::Normal => {
            Array2::from_shape_simple_fn((count, spec.dim), || StandardNormal.sample(rng))
        }
    }
}

// ---- synthetic models ------------------------------------------------------

pub const SYNTH_X_DIM: usize = 10;
pub const SYNTH_LATENT_DIM: usize = 3;
pub const SYNTH_COND_LATENT_DIM: usize = 7;
pub const SYNTH_COND_DIM: usize = 3;

/// The ten-component test function on `[0,1]³`. The last component is
/// `2z₁⁴ − z₂³`.
pub fn g_star(z: [f64; 3]) -> [f64; 10] {
    let [z1, z2, z3] = z;
    let prod = z1 * z2 * z3;
    let sum = z1 + z2 + z3;
    [
        z1.sin(),
        z2.sin(),
        z3.sin(),
        z1.exp(),
        z2 * z2 + 2.0 * z3.powi(3),
        (2.0 * std::f64::consts::PI * prod).cos(),
        prod,
        sum * sum,
        sum,
        2.0 * z1.powi(4) - z2.powi(3),
    ]
}

/// Encoder of the conditional model: seven latent and three conditioning
/// coordinates mapped to the three inputs of [`g_star`].
pub fn h_encoder(z: &[f64], y: &[f64]) -> [f64; 3] {
    [
        z[0] + z[1] * z[1] + z[2].powi(3),
        z[3] * z[4] + z[5] * z[6],
        y[0].sin() - y[1] * y[2],
    ]
}

pub fn g_star_conditional(z: &[f64], y: &[f64]) -> [f64; 10] {
    g_star(h_encoder(z, y))
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    SyntheticUnconditional,
    SyntheticConditional,
    LagEmbedded,
    File(String),
}

/// Samples `X` with optional conditioning `Y`, one observation per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub x: Array2<f64>,
    pub y: Option<Array2<f64>>,
    pub provenance: Provenance,
}

impl PairedDataset {
    pub fn new(x: Array2<f64>, y: Option<Array2<f64>>, provenance: Provenance) -> Result<Self> {
        if let Some(y) = &y {
            if y.nrows() != x.nrows() {
                return Err(DataError::Dimension {
                    expected: x.nrows(),
                    got: y.nrows(),
                });
            }
        }
        Ok(Self { x, y, provenance })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn x_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn y_dim(&self) -> usize {
        self.y.as_ref().map_or(0, |y| y.ncols())
    }

    pub fn is_conditional(&self) -> bool {
        self.y.is_some()
    }

    /// `[X | Y]` row-wise.
    pub fn joint(&self) -> Array2<f64> {
        match &self.y {
            Some(y) => concatenate![Axis(1), self.x, *y],
            None => self.x.clone(),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            y: self.y.as_ref().map(|y| y.select(Axis(0), rows)),
            provenance: self.provenance.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
            && self.y.as_ref().is_none_or(|y| y.iter().all(|v| v.is_finite()))
    }
}

pub fn synth_unconditional<R: Rng + ?Sized>(n: usize, rng: &mut R) -> PairedDataset {
    let z = sample_latent(LatentSpec::uniform(SYNTH_LATENT_DIM), n, rng);
    let mut x = Array2::zeros((n, SYNTH_X_DIM));
    for (zi, mut xi) in z.rows().into_iter().zip(x.rows_mut()) {
        xi.assign(&ndarray::ArrayView1::from(&g_star([zi[0], zi[1], zi[2]])));
    }
    PairedDataset {
        x,
        y: None,
        provenance: Provenance::SyntheticUnconditional,
    }
}

pub fn synth_conditional<R: Rng + ?Sized>(n: usize, rng: &mut R) -> PairedDataset {
    let zy = sample_latent(
        LatentSpec::uniform(SYNTH_COND_LATENT_DIM + SYNTH_COND_DIM),
        n,
        rng,
    );
    let y = zy.slice(s![.., SYNTH_COND_LATENT_DIM..]).to_owned();
    let x = conditional_given_rows(zy.slice(s![.., ..SYNTH_COND_LATENT_DIM]), y.view());
    PairedDataset {
        x,
        y: Some(y),
        provenance: Provenance::SyntheticConditional,
    }
}

/// Draws `count` samples of `X | Y = y` from the conditional model.
pub fn synth_conditional_given<R: Rng + ?Sized>(y: &[f64], count: usize, rng: &mut R) -> Array2<f64> {
    let z = sample_latent(LatentSpec::uniform(SYNTH_COND_LATENT_DIM), count, rng);
    let ys = Array2::from_shape_fn((count, y.len()), |(_, j)| y[j]);
    conditional_given_rows(z.view(), ys.view())
}

fn conditional_given_rows(z: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    let mut x = Array2::zeros((z.nrows(), SYNTH_X_DIM));
    for ((zi, yi), mut xi) in z.rows().into_iter().zip(y.rows()).zip(x.rows_mut()) {
        let v = g_star_conditional(&zi.to_vec(), &yi.to_vec());
        xi.assign(&ndarray::ArrayView1::from(&v));
    }
    x
}

// ---- statistics ------------------------------------------------------------

/// Scalar summary `T` of an observation vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Sum,
    Component(usize),
}

impl Statistic {
    pub fn apply(&self, row: &[f64]) -> f64 {
        match *self {
            Self::Sum => row.iter().sum(),
            Self::Component(k) => row[k],
        }
    }

    pub fn check_width(&self, width: usize) -> Result<()> {
        match *self {
            Self::Component(k) if k >= width => Err(DataError::StatisticOutOfRange {
                component: k,
                width,
            }),
            _ => Ok(()),
        }
    }

    /// One value per row.
    pub fn apply_rows(&self, rows: ArrayView2<f64>) -> Vec<f64> {
        rows.rows()
            .into_iter()
            .map(|r| match *self {
                Self::Sum => r.sum(),
                Self::Component(k) => r[k],
            })
            .collect()
    }
}

impl FromStr for Statistic {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "sum" {
            return Ok(Self::Sum);
        }
        s.strip_prefix("component:")
            .and_then(|k| k.parse().ok())
            .map(Self::Component)
            .ok_or_else(|| DataError::UnknownStatistic(s.to_string()))
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sum => f.write_str("sum"),
            Self::Component(k) => write!(f, "component:{k}"),
        }
    }
}

// ---- time series -----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Timestamp {
    Index(i64),
    Date(NaiveDate),
}

impl Timestamp {
    fn parse(s: &str) -> Option<Self> {
        if let Ok(i) = s.parse::<i64>() {
            return Some(Self::Index(i));
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(Self::Date)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Index(i) => write!(f, "{i}"),
            Self::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
        }
    }
}

/// Multichannel series, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    pub timestamps: Vec<Timestamp>,
    pub values: Array2<f64>,
    pub columns: Vec<String>,
}

impl SeriesFrame {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn rows(&self, range: Range<usize>) -> Self {
        Self {
            timestamps: self.timestamps[range.clone()].to_vec(),
            values: self.values.slice(s![range, ..]).to_owned(),
            columns: self.columns.clone(),
        }
    }

    /// First `n_train` rows and the remainder.
    pub fn split_at(&self, n_train: usize) -> (Self, Self) {
        let n = n_train.min(self.len());
        (self.rows(0..n), self.rows(n..self.len()))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Reads a series CSV: header row, first column a strictly increasing
/// timestamp (`YYYY-MM-DD` or integer), remaining columns numeric. Row
/// numbers in errors count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>) -> Result<SeriesFrame> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: p.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| DataError::MalformedHeader {
            path: p.clone(),
            msg: e.to_string(),
        })?
        .clone();
    if header.len() < 2 || header.iter().any(str::is_empty) {
        return Err(DataError::MalformedHeader {
            path: p,
            msg: format!("need a timestamp column and at least one value column, got {header:?}"),
        });
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let width = columns.len();

    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DataError::Csv {
            path: p.clone(),
            msg: e.to_string(),
        })?;
        if record.len() != width + 1 {
            return Err(DataError::Ragged {
                path: p,
                row,
                expected: width + 1,
                found: record.len(),
            });
        }
        let ts = Timestamp::parse(&record[0]).ok_or_else(|| DataError::BadCell {
            path: p.clone(),
            row,
            column: header[0].to_string(),
            value: record[0].to_string(),
        })?;
        if let Some(prev) = timestamps.last() {
            let comparable = matches!(
                (prev, &ts),
                (Timestamp::Index(_), Timestamp::Index(_)) | (Timestamp::Date(_), Timestamp::Date(_))
            );
            if !comparable || *prev >= ts {
                return Err(DataError::NotIncreasing { path: p, row });
            }
        }
        timestamps.push(ts);
        for (j, cell) in record.iter().enumerate().skip(1) {
            let v = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::BadCell {
                    path: p.clone(),
                    row,
                    column: columns[j - 1].clone(),
                    value: cell.to_string(),
                })?;
            data.push(v);
        }
    }
    let values = Array2::from_shape_vec((timestamps.len(), width), data).expect("row lengths checked");
    Ok(SeriesFrame {
        timestamps,
        values,
        columns,
    })
}

/// Pairs `(T(A_i), (A_{i−1}, …, A_{i−r}))` for `i = r..n`, conditioning on
/// every column.
pub fn lag_embed(series: &SeriesFrame, r: usize, statistic: Statistic) -> Result<PairedDataset> {
    let all: Vec<usize> = (0..series.width()).collect();
    lag_embed_columns(series, r, statistic, &all)
}

/// Like [`lag_embed`], but the conditioning vector only uses `cond_columns`
/// of each lagged row. The statistic always sees the full row.
pub fn lag_embed_columns(
    series: &SeriesFrame,
    r: usize,
    statistic: Statistic,
    cond_columns: &[usize],
) -> Result<PairedDataset> {
    if r == 0 {
        return Err(DataError::ZeroLag);
    }
    let n = series.len();
    if n < r + 1 {
        return Err(DataError::SeriesTooShort { len: n, lag: r });
    }
    let width = series.width();
    statistic.check_width(width)?;
    if let Some(&column) = cond_columns.iter().find(|&&c| c >= width) {
        return Err(DataError::ColumnOutOfRange { column, width });
    }
    let k = cond_columns.len();
    let mut x = Array2::zeros((n - r, 1));
    let mut y = Array2::zeros((n - r, r * k));
    for (out, i) in (r..n).enumerate() {
        let row = series.values.row(i);
        x[[out, 0]] = match statistic {
            Statistic::Sum => row.sum(),
            Statistic::Component(c) => row[c],
        };
        for lag in 1..=r {
            let past = series.values.row(i - lag);
            for (j, &c) in cond_columns.iter().enumerate() {
                y[[out, (lag - 1) * k + j]] = past[c];
            }
        }
    }
    Ok(PairedDataset {
        x,
        y: Some(y),
        provenance: Provenance::LagEmbedded,
    })
}

// ---- normalization ---------------------------------------------------------

/// Per-column affine map onto `[0,1]` fitted on a training range. Values
/// outside the fitting range map outside `[0,1]`; nothing is clipped.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(values: ArrayView2<f64>, rows: Range<usize>) -> Result<Self> {
        if rows.is_empty() || rows.end > values.nrows() {
            return Err(DataError::EmptyRange);
        }
        let block = values.slice(s![rows, ..]);
        let mut min = Vec::with_capacity(values.ncols());
        let mut max = Vec::with_capacity(values.ncols());
        for (j, col) in block.columns().into_iter().enumerate() {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi <= lo {
                return Err(DataError::ConstantColumn(j));
            }
            min.push(lo);
            max.push(hi);
        }
        Ok(Self { min, max })
    }

    pub fn fit_frame(frame: &SeriesFrame, rows: Range<usize>) -> Result<Self> {
        Self::fit(frame.values.view(), rows)
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    fn check(&self, values: &ArrayView2<f64>) -> Result<()> {
        if values.ncols() != self.width() {
            return Err(DataError::Dimension {
                expected: self.width(),
                got: values.ncols(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, values: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&values)?;
        let mut out = values.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (lo, span) = (self.min[j], self.max[j] - self.min[j]);
            col.mapv_inplace(|v| (v - lo) / span);
        }
        Ok(out)
    }

    pub fn invert(&self, values: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&values)?;
        let mut out = values.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (lo, span) = (self.min[j], self.max[j] - self.min[j]);
            col.mapv_inplace(|v| v * span + lo);
        }
        Ok(out)
    }

    pub fn apply_value(&self, column: usize, v: f64) -> f64 {
        (v - self.min[column]) / (self.max[column] - self.min[column])
    }

    pub fn invert_value(&self, column: usize, v: f64) -> f64 {
        v * (self.max[column] - self.min[column]) + self.min[column]
    }
}

// ---- paired CSV ------------------------------------------------------------

/// Writes `x1..x_d[, y1..y_k]` with a header row and no index column.
pub fn write_paired_csv(path: impl AsRef<Path>, data: &PairedDataset) -> Result<()> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let csv_err = |e: csv::Error| DataError::Csv {
        path: p.clone(),
        msg: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = (1..=data.x_dim()).map(|j| format!("x{j}")).collect();
    header.extend((1..=data.y_dim()).map(|j| format!("y{j}")));
    w.write_record(&header).map_err(csv_err)?;
    let joint = data.joint();
    for row in joint.rows() {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(csv_err)?;
    }
    w.flush().map_err(|source| DataError::Io { path: p, source })?;
    Ok(())
}

/// Reads a paired CSV; the first `x_dim` columns are `X` (all of them when
/// `None`), any remaining columns are `Y`.
pub fn read_paired_csv(path: impl AsRef<Path>, x_dim: Option<usize>) -> Result<PairedDataset> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: p.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| DataError::MalformedHeader {
            path: p.clone(),
            msg: e.to_string(),
        })?
        .clone();
    let width = header.len();
    let x_dim = x_dim.unwrap_or(width);
    if x_dim == 0 || width < x_dim {
        return Err(DataError::MalformedHeader {
            path: p,
            msg: format!("{width} columns, but x dimension is {x_dim}"),
        });
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DataError::Csv {
            path: p.clone(),
            msg: e.to_string(),
        })?;
        if record.len() != width {
            return Err(DataError::Ragged {
                path: p,
                row,
                expected: width,
                found: record.len(),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::BadCell {
                    path: p.clone(),
                    row,
                    column: header[j].to_string(),
                    value: cell.to_string(),
                })?;
            data.push(v);
        }
        rows += 1;
    }
    let all = Array2::from_shape_vec((rows, width), data).expect("row lengths checked");
    let x = all.slice(s![.., ..x_dim]).to_owned();
    let y = (width > x_dim).then(|| all.slice(s![.., x_dim..]).to_owned());
    PairedDataset::new(x, y, Provenance::File(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use std::io::Write;

    #[test]
    fn g_star_at_corners() {
        assert_eq!(g_star([0.0; 3]), [0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let s1 = 1f64.sin();
        let v = g_star([1.0; 3]);
        let expected = [s1, s1, s1, std::f64::consts::E, 3.0, 1.0, 1.0, 9.0, 3.0, 1.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn conditional_encoder_examples() {
        let x = g_star_conditional(&[0.0; 7], &[0.0; 3]);
        assert_eq!(x, g_star([0.0; 3]));
        let z = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let y = [0.0, 1.0, 1.0];
        assert_eq!(h_encoder(&z, &y), [1.0, 1.0, -1.0]);
        assert_eq!(g_star_conditional(&z, &y), g_star([1.0, 1.0, -1.0]));
    }

    #[test]
    fn synthetic_sizes_and_bounds() {
        let d = synth_unconditional(500, &mut substream(1, Stream::Data, 0));
        assert_eq!(d.x.dim(), (500, 10));
        assert!(d.y.is_none());
        for row in d.x.rows() {
            assert!((row[8].powi(2) - row[7]).abs() < 1e-12);
            assert!((1.0..=std::f64::consts::E).contains(&row[3]));
        }
        let c = synth_conditional(200, &mut substream(1, Stream::Data, 0));
        assert_eq!(c.x.dim(), (200, 10));
        assert_eq!(c.y.as_ref().unwrap().dim(), (200, 3));
        for y in c.y.as_ref().unwrap().rows() {
            let h3 = y[0].sin() - y[1] * y[2];
            assert!((-1.0..=1f64.sin()).contains(&h3));
        }
    }

    #[test]
    fn latent_names() {
        assert_eq!("uniform".parse::<LatentDistribution>().unwrap(), LatentDistribution::Uniform);
        assert_eq!("normal".parse::<LatentDistribution>().unwrap(), LatentDistribution::Normal);
        assert!("cauchy".parse::<LatentDistribution>().is_err());
    }

    #[test]
    fn latent_is_reproducible() {
        let a = sample_latent(LatentSpec::uniform(3), 2, &mut substream(5, Stream::Latent, 0));
        let b = sample_latent(LatentSpec::uniform(3), 2, &mut substream(5, Stream::Latent, 0));
        assert_eq!(a, b);
        assert_eq!(a.dim(), (2, 3));
        assert!(a.iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn statistic_parsing() {
        assert_eq!("sum".parse::<Statistic>().unwrap(), Statistic::Sum);
        assert_eq!("component:4".parse::<Statistic>().unwrap(), Statistic::Component(4));
        assert!("component:x".parse::<Statistic>().is_err());
        assert!("median".parse::<Statistic>().is_err());
        assert_eq!(Statistic::Component(2).to_string(), "component:2");
    }

    fn frame(rows: &[[f64; 2]]) -> SeriesFrame {
        SeriesFrame {
            timestamps: (0..rows.len() as i64).map(Timestamp::Index).collect(),
            values: Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]),
            columns: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn lag_embed_index_arithmetic() {
        let f = frame(&[[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]]);
        let d = lag_embed(&f, 1, Statistic::Component(0)).unwrap();
        assert_eq!(d.x.column(0).to_vec(), vec![2.0, 3.0]);
        let y = d.y.unwrap();
        assert_eq!(y.row(0).to_vec(), vec![1.0, 10.0]);
        assert_eq!(y.row(1).to_vec(), vec![2.0, 20.0]);

        let d2 = lag_embed(&f, 2, Statistic::Sum).unwrap();
        assert_eq!(d2.len(), 1);
        assert_eq!(d2.x[[0, 0]], 33.0);
        assert_eq!(d2.y.unwrap().row(0).to_vec(), vec![2.0, 20.0, 1.0, 10.0]);

        assert!(matches!(
            lag_embed(&f, 3, Statistic::Sum),
            Err(DataError::SeriesTooShort { len: 3, lag: 3 })
        ));
        assert!(matches!(lag_embed(&f, 0, Statistic::Sum), Err(DataError::ZeroLag)));
        assert!(lag_embed(&f, 1, Statistic::Component(2)).is_err());
    }

    #[test]
    fn lag_embed_column_subset() {
        let f = frame(&[[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]]);
        let d = lag_embed_columns(&f, 1, Statistic::Sum, &[1]).unwrap();
        assert_eq!(d.y.unwrap().column(0).to_vec(), vec![10.0, 20.0]);
        assert_eq!(d.x.column(0).to_vec(), vec![22.0, 33.0]);
    }

    #[test]
    fn normalizer_basics() {
        let v = ndarray::array![[0.0, 5.0], [10.0, 7.0], [20.0, 9.0]];
        let n = Normalizer::fit(v.view(), 0..2).unwrap();
        assert_eq!(n.apply_value(0, 5.0), 0.5);
        let t = n.apply(v.view()).unwrap();
        assert_eq!(t[[2, 0]], 2.0); // not clipped
        let back = n.invert(t.view()).unwrap();
        assert!((&back - &v).iter().all(|d| d.abs() < 1e-12));
        let c = ndarray::array![[1.0, 2.0], [1.0, 3.0]];
        assert!(matches!(Normalizer::fit(c.view(), 0..2), Err(DataError::ConstantColumn(0))));
        assert!(matches!(Normalizer::fit(c.view(), 1..1), Err(DataError::EmptyRange)));
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_well_formed() {
        let f = write_tmp("date,berlin,bremen\n2006-07-01,20.5,19.0\n2006-07-02,21.0,18.5\n2006-07-03,22.25,18.0\n");
        let frame = load_csv(f.path()).unwrap();
        assert_eq!(frame.len(), 3);
        assert_eq!(frame.width(), 2);
        assert_eq!(frame.columns, vec!["berlin", "bremen"]);
        assert_eq!(frame.values[[2, 0]], 22.25);
        assert_eq!(frame.timestamps[0].to_string(), "2006-07-01");
    }

    #[test]
    fn load_csv_names_bad_row() {
        let f = write_tmp("t,a,b\n0,1,2\n1,oops,3\n2,4,5\n");
        match load_csv(f.path()) {
            Err(DataError::BadCell { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("t,a,b\n0,1,2\n1,3\n");
        assert!(matches!(load_csv(f.path()), Err(DataError::Ragged { row: 2, .. })));
        let f = write_tmp("t,a\n1,1\n1,2\n");
        assert!(matches!(load_csv(f.path()), Err(DataError::NotIncreasing { row: 2, .. })));
        let f = write_tmp("t\n1\n");
        assert!(matches!(load_csv(f.path()), Err(DataError::MalformedHeader { .. })));
        assert!(matches!(load_csv("/nonexistent/file.csv"), Err(DataError::Io { .. })));
    }

    #[test]
    fn split_matches_temperature_layout() {
        let n = 4779;
        let f = SeriesFrame {
            timestamps: (0..n as i64).map(Timestamp::Index).collect(),
            values: Array2::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f64),
            columns: vec!["a".into(), "b".into(), "c".into()],
        };
        let (train, test) = f.split_at(4300);
        assert_eq!((train.len(), test.len()), (4300, 479));
        let test_pairs = lag_embed(&test, 1, Statistic::Component(0)).unwrap();
        assert_eq!(test_pairs.len(), 478);
    }

    #[test]
    fn paired_csv_roundtrip() {
        let d = synth_conditional(5, &mut substream(2, Stream::Data, 0));
        let f = tempfile::NamedTempFile::new().unwrap();
        write_paired_csv(f.path(), &d).unwrap();
        let back = read_paired_csv(f.path(), Some(10)).unwrap();
        assert_eq!(back.x, d.x);
        assert_eq!(back.y, d.y);
    }
}
