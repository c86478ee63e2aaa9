//! Experiment runs: data preparation, model directories, evaluation and
//! reports, shared by the command-line tool and the test suites.
//!
//! A run directory holds
//!
//! ```text
//! model/generator.net   model/critic.net   model/model.json
//! history.csv           report.jsonl       summary.txt
//! config.txt            intervals.csv      (per-observation evaluations only)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::confidence::Interval;
use crate::config::{ConfigError, DataKind, ExperimentConfig};
use crate::data::{
    lag_embed_columns, load_csv, read_paired_csv, synth_conditional, synth_conditional_given, synth_unconditional,
    write_paired_csv, LatentSpec, Normalizer, PairedDataset, SeriesFrame, Statistic, Timestamp, SYNTH_COND_DIM,
    SYNTH_X_DIM,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    conditional_truths, per_observation_coverage, per_observation_sigma_bands, shared_interval_coverage,
    unconditional_truths, GeneratorSampler,
};
use crate::gan::{train_with_observer, IterationRecord, TrainedModel};
use crate::network::{Architecture, Network};
use crate::rng::{substream, Stream};
use crate::transport::{ot_report, DatasetSource, FixedSource, FnSource, SampleSource, TransportEstimate};

// ---- series setup -----------------------------------------------------------

/// Everything needed to turn a raw series into model inputs and model
/// outputs back into the series' units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSetup {
    pub lags: usize,
    pub statistic: String,
    pub condition_columns: Vec<usize>,
    pub column_names: Vec<String>,
    /// Per-column map of the series, applied to conditioning lags.
    pub condition_normalizer: Option<Normalizer>,
    /// Map of the scalar target `T(A_i)`.
    pub target_normalizer: Option<Normalizer>,
}

impl SeriesSetup {
    fn statistic(&self) -> Result<Statistic> {
        Ok(self.statistic.parse()?)
    }

    fn fit(cfg: &ExperimentConfig, frame: &SeriesFrame, n_train: usize) -> Result<Self> {
        let condition_columns = resolve_columns(&cfg.data_condition_columns, frame)?;
        let mut setup = Self {
            lags: cfg.data_lags,
            statistic: cfg.data_statistic.to_string(),
            condition_columns,
            column_names: frame.columns.clone(),
            condition_normalizer: None,
            target_normalizer: None,
        };
        if cfg.data_normalize {
            setup.condition_normalizer = Some(Normalizer::fit_frame(frame, 0..n_train)?);
            let (raw, _) = setup.embed(&frame.rows(0..n_train))?;
            setup.target_normalizer = Some(Normalizer::fit(raw.view(), 0..raw.nrows())?);
        }
        Ok(setup)
    }

    /// Raw targets `T(A_i)` (`(n − r) × 1`) and normalized conditioning lags.
    fn embed(&self, frame: &SeriesFrame) -> Result<(Array2<f64>, Array2<f64>)> {
        if frame.columns != self.column_names {
            return Err(Error::ModelMismatch(format!(
                "series columns {:?} differ from the training columns {:?}",
                frame.columns, self.column_names
            )));
        }
        let stat = self.statistic()?;
        let raw = lag_embed_columns(frame, self.lags, stat, &self.condition_columns)?;
        let y = match &self.condition_normalizer {
            Some(norm) => {
                let scaled = SeriesFrame {
                    timestamps: frame.timestamps.clone(),
                    values: norm.apply(frame.values.view())?,
                    columns: frame.columns.clone(),
                };
                lag_embed_columns(&scaled, self.lags, stat, &self.condition_columns)?.y
            }
            None => raw.y,
        };
        Ok((raw.x, y.expect("lag embedding always conditions")))
    }

    /// Model-space pairs of a frame, plus the raw targets.
    fn pairs(&self, frame: &SeriesFrame) -> Result<(PairedDataset, Vec<f64>)> {
        let (raw, y) = self.embed(frame)?;
        let x = match &self.target_normalizer {
            Some(norm) => norm.apply(raw.view())?,
            None => raw.clone(),
        };
        let data = PairedDataset::new(x, Some(y), crate::data::Provenance::LagEmbedded)?;
        Ok((data, raw.column(0).to_vec()))
    }

    fn denormalize(&self, iv: Interval) -> Interval {
        match &self.target_normalizer {
            Some(norm) => iv.map(|v| norm.invert_value(0, v)),
            None => iv,
        }
    }
}

fn resolve_columns(names: &[String], frame: &SeriesFrame) -> Result<Vec<usize>> {
    if names.is_empty() {
        return Ok((0..frame.width()).collect());
    }
    names
        .iter()
        .map(|name| {
            frame
                .column_index(name)
                .or_else(|| name.parse::<usize>().ok().filter(|&i| i < frame.width()))
                .ok_or_else(|| {
                    Error::Config(ConfigError::Invalid(format!(
                        "data.condition_columns: no column {name:?} in {:?}",
                        frame.columns
                    )))
                })
        })
        .collect()
}

// ---- data preparation -------------------------------------------------------

pub struct Prepared {
    pub train: PairedDataset,
    /// Held-out pairs, series data only.
    pub test: Option<PairedDataset>,
    pub series: Option<SeriesSetup>,
    pub train_targets: Vec<f64>,
    pub test_targets: Vec<f64>,
    /// Timestamps of the predicted days, series data only.
    pub train_timestamps: Vec<Timestamp>,
    pub test_timestamps: Vec<Timestamp>,
}

/// Loads or generates the experiment's data. Series normalizers are fitted
/// on the training rows unless `setup` supplies them.
pub fn prepare(cfg: &ExperimentConfig, setup: Option<&SeriesSetup>) -> Result<Prepared> {
    let plain = |train: PairedDataset| Prepared {
        train,
        test: None,
        series: None,
        train_targets: Vec::new(),
        test_targets: Vec::new(),
        train_timestamps: Vec::new(),
        test_timestamps: Vec::new(),
    };
    let path = || cfg.data_path.clone().ok_or_else(|| ConfigError::Invalid("data.path is required".into()));
    match cfg.data_kind {
        DataKind::Unconditional => Ok(plain(synth_unconditional(
            cfg.data_n,
            &mut substream(cfg.seed, Stream::Data, 0),
        ))),
        DataKind::Conditional => Ok(plain(synth_conditional(
            cfg.data_n,
            &mut substream(cfg.seed, Stream::Data, 0),
        ))),
        DataKind::Paired => Ok(plain(read_paired_csv(path()?, cfg.data_x_dim)?)),
        DataKind::Series => {
            let frame = load_csv(path()?)?;
            let n_train = cfg.data_n_train.min(frame.len());
            let setup = match setup {
                Some(s) => s.clone(),
                None => SeriesSetup::fit(cfg, &frame, n_train)?,
            };
            let (train_frame, test_frame) = frame.split_at(n_train);
            let (train, train_targets) = setup.pairs(&train_frame)?;
            let (test, test_targets) = if test_frame.len() > setup.lags {
                let (d, t) = setup.pairs(&test_frame)?;
                (Some(d), t)
            } else {
                (None, Vec::new())
            };
            let predicted = |f: &SeriesFrame| f.timestamps.iter().skip(setup.lags).copied().collect::<Vec<_>>();
            let (train_timestamps, test_timestamps) = (predicted(&train_frame), predicted(&test_frame));
            Ok(Prepared {
                train,
                test,
                series: Some(setup),
                train_targets,
                test_targets,
                train_timestamps,
                test_timestamps,
            })
        }
    }
}

/// Writes a synthetic dataset for `data.kind = unconditional | conditional`.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<PairedDataset> {
    if !matches!(cfg.data_kind, DataKind::Unconditional | DataKind::Conditional) {
        return Err(ConfigError::Invalid(format!("cannot simulate data.kind = {}", cfg.data_kind)).into());
    }
    let data = prepare(cfg, None)?.train;
    ensure_parent(out)?;
    write_paired_csv(out, &data)?;
    Ok(data)
}

// ---- model directory --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format: u32,
    pub data_kind: String,
    pub latent: LatentSpec,
    pub x_dim: usize,
    pub y_dim: usize,
    pub seed: u64,
    pub series: Option<SeriesSetup>,
}

pub struct LoadedModel {
    pub generator: Network,
    pub critic: Network,
    pub meta: ModelMeta,
}

impl LoadedModel {
    pub fn sampler(&self) -> GeneratorSampler<'_> {
        GeneratorSampler {
            generator: &self.generator,
            latent: self.meta.latent,
        }
    }

    fn check_data(&self, data: &PairedDataset) -> Result<()> {
        if data.x_dim() != self.meta.x_dim || data.y_dim() != self.meta.y_dim {
            return Err(Error::ModelMismatch(format!(
                "model expects X in {} and Y in {} dimensions, data has {} and {}",
                self.meta.x_dim,
                self.meta.y_dim,
                data.x_dim(),
                data.y_dim()
            )));
        }
        Ok(())
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn save_model(dir: &Path, generator: &Network, critic: &Network, meta: &ModelMeta) -> Result<()> {
    ensure_dir(dir)?;
    let net_err = |p: PathBuf| move |e| match e {
        crate::network::NetworkError::Io(source) => Error::io(p, source),
        other => Error::Network(other),
    };
    let g = dir.join("generator.net");
    generator.save(&g).map_err(net_err(g.clone()))?;
    let c = dir.join("critic.net");
    critic.save(&c).map_err(net_err(c.clone()))?;
    let json = serde_json::to_string_pretty(meta).expect("model metadata serializes");
    write_file(&dir.join("model.json"), &json)
}

/// Loads a model directory; a `train` run directory is accepted too.
pub fn load_model(dir: &Path) -> Result<LoadedModel> {
    let nested = dir.join("model");
    let dir = if !dir.join("model.json").exists() && nested.join("model.json").exists() {
        nested.as_path()
    } else {
        dir
    };
    let meta_path = dir.join("model.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: meta_path.clone(),
        msg: e.to_string(),
    })?;
    let load = |name: &str| {
        let p = dir.join(name);
        Network::load(&p).map_err(|e| match e {
            crate::network::NetworkError::Io(source) => Error::io(p, source),
            other => Error::Network(other),
        })
    };
    let generator = load("generator.net")?;
    let critic = load("critic.net")?;
    if generator.architecture().input_dim() != meta.latent.dim + meta.y_dim
        || generator.architecture().output_dim() != meta.x_dim
    {
        return Err(Error::Format {
            path: meta_path,
            msg: "generator architecture disagrees with model metadata".into(),
        });
    }
    Ok(LoadedModel {
        generator,
        critic,
        meta,
    })
}

pub fn write_history(path: &Path, history: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    for r in history {
        w.serialize(r).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---- reports ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub iterations: usize,
    pub epochs: usize,
    pub critic_updates: usize,
    pub latent_draws: u64,
    pub final_critic_objective: f64,
    pub final_penalty: f64,
    pub final_generator_objective: f64,
}

impl TrainingSummary {
    pub fn from_history(history: &[IterationRecord]) -> Self {
        let last = history.last();
        Self {
            iterations: history.len(),
            epochs: last.map_or(0, |r| r.epoch + 1),
            critic_updates: history.iter().map(|r| r.critic_iterations).sum(),
            latent_draws: last.map_or(0, |r| r.latent_draws),
            final_critic_objective: last.map_or(f64::NAN, |r| r.critic_objective),
            final_penalty: last.map_or(f64::NAN, |r| r.penalty),
            final_generator_objective: last.map_or(f64::NAN, |r| r.generator_objective),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportRecord {
    pub split: String,
    #[serde(flatten)]
    pub estimate: TransportEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub split: String,
    pub statistic: String,
    pub alpha: f64,
    pub samples_per_interval: usize,
    pub total: usize,
    pub covered: usize,
    pub rate: f64,
    /// The shared interval, when all truths are compared with one interval.
    pub interval: Option<Interval>,
}

/// One per-observation interval, for plotting interval bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub split: String,
    pub index: usize,
    pub timestamp: String,
    pub lower: f64,
    pub upper: f64,
    pub truth: f64,
    pub covered: bool,
    /// `mean ± k·std` of the same draws, with `eval.sigma_band = k`.
    pub band_lower: Option<f64>,
    pub band_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub training: Option<TrainingSummary>,
    pub transport: Vec<TransportRecord>,
    pub coverage: Vec<CoverageRecord>,
    pub wall_clock_secs: f64,
}

fn tagged(record: &str, value: impl Serialize) -> String {
    let mut v = serde_json::to_value(value).expect("report records serialize");
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("record".into(), record.into());
    }
    v.to_string()
}

impl RunReport {
    /// The report with its timing zeroed; equal across repeated runs.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json_lines(&self) -> String {
        let mut lines = vec![
            tagged(
                "run",
                serde_json::json!({
                    "command": self.command,
                    "seed": self.seed,
                    "wall_clock_secs": self.wall_clock_secs,
                }),
            ),
            tagged("config", serde_json::json!({ "values": self.config })),
        ];
        if let Some(t) = &self.training {
            lines.push(tagged("training", t));
        }
        lines.extend(self.transport.iter().map(|t| tagged("transport", t)));
        lines.extend(self.coverage.iter().map(|c| tagged("coverage", c)));
        lines.join("\n") + "\n"
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} (seed {}) finished in {:.1}s\n",
            self.command, self.seed, self.wall_clock_secs
        );
        if let Some(t) = &self.training {
            s += &format!(
                "training: {} generator iterations over {} epochs, {} critic updates\n  final critic objective {:.5}, penalty {:.5}, generator objective {:.5}\n",
                t.iterations,
                t.epochs,
                t.critic_updates,
                t.final_critic_objective,
                t.final_penalty,
                t.final_generator_objective
            );
        }
        for t in &self.transport {
            s += &format!(
                "OT [{}]: {:.4} (sd {:.4}, {} x {} samples)\n",
                t.split, t.estimate.mean, t.estimate.std, t.estimate.repetitions, t.estimate.batch_size
            );
        }
        for c in &self.coverage {
            s += &format!(
                "coverage [{}] of {} at level {}: {:.2}% ({}/{})",
                c.split,
                c.statistic,
                1.0 - c.alpha,
                100.0 * c.rate,
                c.covered,
                c.total
            );
            if let Some(iv) = &c.interval {
                s += &format!(", interval ({:.4}, {:.4}]", iv.lower, iv.upper);
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        write_file(&dir.join("report.jsonl"), &self.to_json_lines())?;
        write_file(&dir.join("summary.txt"), &self.summary())
    }
}

fn write_intervals(path: &Path, rows: &[IntervalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---- evaluation -------------------------------------------------------------

#[derive(Debug, Default)]
pub struct Evaluation {
    pub transport: Vec<TransportRecord>,
    pub coverage: Vec<CoverageRecord>,
    pub intervals: Vec<IntervalRow>,
}

fn shared_record(split: &str, cfg: &ExperimentConfig, samples: usize, iv: Interval, report: &crate::confidence::CoverageReport) -> CoverageRecord {
    CoverageRecord {
        split: split.into(),
        statistic: cfg.eval_statistic.to_string(),
        alpha: cfg.eval_alpha,
        samples_per_interval: samples,
        total: report.total,
        covered: report.covered,
        rate: report.rate,
        interval: Some(iv),
    }
}

/// OT between a finite dataset and the model; the batch is capped at the
/// dataset size.
fn dataset_transport(
    cfg: &ExperimentConfig,
    model: &LoadedModel,
    data: &PairedDataset,
    split: &str,
) -> Result<TransportRecord> {
    let joint = data.joint();
    let real = DatasetSource::new(joint.view());
    let cond_source = data.y.as_ref().map(|y| DatasetSource::new(y.view()));
    let batch = cfg.eval_ot_batch.min(data.len());
    let estimate = ot_report(
        &real,
        &model.generator,
        model.meta.latent,
        cond_source.as_ref().map(|c| c as &dyn SampleSource),
        batch,
        cfg.eval_ot_repetitions,
        cfg.seed,
        cfg.execution(),
    )?;
    Ok(TransportRecord {
        split: split.into(),
        estimate,
    })
}

type Band = (Option<f64>, Option<f64>);

/// Optional `mean ± k·std` bands, mapped like the intervals.
fn sigma_bands(
    cfg: &ExperimentConfig,
    model: &LoadedModel,
    conditions: ArrayView2<f64>,
    statistic: Statistic,
    samples: usize,
    stream_offset: u64,
    map: &dyn Fn(Interval) -> Interval,
) -> Result<Vec<Band>> {
    let Some(k) = cfg.eval_sigma_band else {
        return Ok(vec![(None, None); conditions.nrows()]);
    };
    let raw = per_observation_sigma_bands(
        &model.sampler(),
        conditions,
        statistic,
        samples,
        k,
        cfg.seed,
        stream_offset,
        cfg.execution(),
    )?;
    Ok(raw
        .into_iter()
        .map(|(lower, upper)| {
            let b = map(Interval {
                lower,
                upper,
                level: cfg.eval_alpha,
            });
            (Some(b.lower), Some(b.upper))
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn per_observation(
    cfg: &ExperimentConfig,
    model: &LoadedModel,
    split: &str,
    data: &PairedDataset,
    truths: &[f64],
    statistic: Statistic,
    samples: usize,
    stream_offset: u64,
    map: &dyn Fn(Interval) -> Interval,
    timestamps: Option<&[Timestamp]>,
    out: &mut Evaluation,
) -> Result<()> {
    let y = data.y.as_ref().expect("per-observation evaluation needs conditions");
    let (intervals, report) = per_observation_coverage(
        &model.sampler(),
        y.view(),
        truths,
        statistic,
        samples,
        cfg.eval_alpha,
        cfg.seed,
        stream_offset,
        cfg.execution(),
        map,
    )?;
    out.coverage.push(CoverageRecord {
        split: split.into(),
        statistic: statistic.to_string(),
        alpha: cfg.eval_alpha,
        samples_per_interval: samples,
        total: report.total,
        covered: report.covered,
        rate: report.rate,
        interval: None,
    });
    let bands = sigma_bands(cfg, model, y.view(), statistic, samples, stream_offset, map)?;
    out.intervals.extend(intervals.iter().enumerate().map(|(i, iv)| IntervalRow {
        split: split.into(),
        index: i,
        timestamp: timestamps.map(|t| t[i].to_string()).unwrap_or_default(),
        lower: iv.lower,
        upper: iv.upper,
        truth: truths[i],
        covered: report.flags[i],
        band_lower: bands[i].0,
        band_upper: bands[i].1,
    }));
    Ok(())
}

/// Transport and coverage of a model on the experiment's data.
pub fn evaluate(cfg: &ExperimentConfig, model: &LoadedModel, prepared: &Prepared) -> Result<Evaluation> {
    model.check_data(&prepared.train)?;
    let mut out = Evaluation::default();
    let sampler = model.sampler();
    let mode = cfg.execution();
    let stat = cfg.eval_statistic;
    match cfg.data_kind {
        DataKind::Unconditional => {
            let truths = unconditional_truths(stat, cfg.eval_truths, cfg.seed);
            let (iv, report) =
                shared_interval_coverage(&sampler, None, stat, cfg.eval_n_test, cfg.eval_alpha, &truths, cfg.seed)?;
            out.coverage.push(shared_record("fresh", cfg, cfg.eval_n_test, iv, &report));
            let real = FnSource::new(SYNTH_X_DIM, |count, rng: &mut crate::rng::Rng| {
                synth_unconditional(count, rng).x
            });
            let estimate = ot_report(
                &real,
                &model.generator,
                model.meta.latent,
                None,
                cfg.eval_ot_batch,
                cfg.eval_ot_repetitions,
                cfg.seed,
                mode,
            )?;
            out.transport.push(TransportRecord {
                split: "fresh".into(),
                estimate,
            });
        }
        DataKind::Conditional => {
            let y = &cfg.eval_condition;
            let truths = conditional_truths(stat, y, cfg.eval_truths, cfg.seed);
            let (iv, report) =
                shared_interval_coverage(&sampler, Some(y), stat, cfg.eval_n_test, cfg.eval_alpha, &truths, cfg.seed)?;
            out.coverage.push(shared_record("condition", cfg, cfg.eval_n_test, iv, &report));
            // both sides carry the same fixed y, so only X | Y = y contributes
            let fixed = y.clone();
            let real = FnSource::new(SYNTH_X_DIM + SYNTH_COND_DIM, move |count, rng: &mut crate::rng::Rng| {
                let x = synth_conditional_given(&fixed, count, rng);
                let ys = Array2::from_shape_fn((count, fixed.len()), |(_, j)| fixed[j]);
                ndarray::concatenate![ndarray::Axis(1), x, ys]
            });
            let cond = FixedSource(y.clone());
            let estimate = ot_report(
                &real,
                &model.generator,
                model.meta.latent,
                Some(&cond),
                cfg.eval_ot_batch,
                cfg.eval_ot_repetitions,
                cfg.seed,
                mode,
            )?;
            out.transport.push(TransportRecord {
                split: "condition".into(),
                estimate,
            });
        }
        DataKind::Paired => {
            let data = &prepared.train;
            stat.check_width(data.x_dim())?;
            let truths = stat.apply_rows(data.x.view());
            if data.is_conditional() {
                per_observation(
                    cfg,
                    model,
                    "data",
                    data,
                    &truths,
                    stat,
                    cfg.eval_n_train,
                    0,
                    &|iv| iv,
                    None,
                    &mut out,
                )?;
            } else {
                let (iv, report) =
                    shared_interval_coverage(&sampler, None, stat, cfg.eval_n_test, cfg.eval_alpha, &truths, cfg.seed)?;
                out.coverage.push(shared_record("data", cfg, cfg.eval_n_test, iv, &report));
            }
            out.transport.push(dataset_transport(cfg, model, data, "data")?);
        }
        DataKind::Series => {
            let setup = prepared.series.as_ref().expect("series data has a setup");
            let map = |iv: Interval| setup.denormalize(iv);
            let target = Statistic::Component(0);
            per_observation(
                cfg,
                model,
                "train",
                &prepared.train,
                &prepared.train_targets,
                target,
                cfg.eval_n_train,
                0,
                &map,
                Some(&prepared.train_timestamps),
                &mut out,
            )?;
            if let Some(test) = &prepared.test {
                per_observation(
                    cfg,
                    model,
                    "test",
                    test,
                    &prepared.test_targets,
                    target,
                    cfg.eval_n_test,
                    prepared.train.len() as u64,
                    &map,
                    Some(&prepared.test_timestamps),
                    &mut out,
                )?;
                out.transport.push(dataset_transport(cfg, model, test, "test")?);
            } else {
                out.transport.push(dataset_transport(cfg, model, &prepared.train, "train")?);
            }
        }
    }
    Ok(out)
}

// ---- commands ---------------------------------------------------------------

pub fn architectures(cfg: &ExperimentConfig, data: &PairedDataset) -> Result<(Architecture, Architecture)> {
    let (d, dy) = (data.x_dim(), data.y_dim());
    let mut gen = Architecture::mlp(cfg.latent.dim + dy, &cfg.gen_widths, d)?;
    if let Some(f) = cfg.gen_bound {
        gen = gen.with_output_bound(f)?;
    }
    let critic = Architecture::mlp(d + dy, &cfg.critic_widths, 1)?;
    Ok((gen, critic))
}

fn config_echo(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    cfg.entries()
        .into_iter()
        .filter(|(k, _)| *k != "report.dir")
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// Trains on the experiment's data, saves the model under `out/model`,
/// evaluates it and writes the run's reports.
pub fn train_run(
    cfg: &ExperimentConfig,
    out: &Path,
    observe: &mut dyn FnMut(&IterationRecord),
) -> Result<(RunReport, TrainedModel)> {
    cfg.validate()?;
    let start = Instant::now();
    let prepared = prepare(cfg, None)?;
    let data = &prepared.train;
    let (gen_arch, critic_arch) = architectures(cfg, data)?;
    let tc = cfg.train_config(data.is_conditional());
    let mut model = train_with_observer(&tc, data, gen_arch, critic_arch, |r| observe(r))?;
    if cfg.gen_bound.is_some() {
        model.generator = model.generator.with_clamping(true)?;
    }

    let meta = ModelMeta {
        format: 1,
        data_kind: cfg.data_kind.to_string(),
        latent: cfg.latent,
        x_dim: data.x_dim(),
        y_dim: data.y_dim(),
        seed: cfg.seed,
        series: prepared.series.clone(),
    };
    ensure_dir(out)?;
    save_model(&out.join("model"), &model.generator, &model.critic, &meta)?;
    write_history(&out.join("history.csv"), &model.history)?;
    write_file(&out.join("config.txt"), &cfg.to_text())?;

    let loaded = LoadedModel {
        generator: model.generator.clone(),
        critic: model.critic.clone(),
        meta,
    };
    let eval = evaluate(cfg, &loaded, &prepared)?;
    if !eval.intervals.is_empty() {
        write_intervals(&out.join("intervals.csv"), &eval.intervals)?;
    }
    let report = RunReport {
        command: "train".into(),
        seed: cfg.seed,
        config: config_echo(cfg),
        training: Some(TrainingSummary::from_history(&model.history)),
        transport: eval.transport,
        coverage: eval.coverage,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    report.write(out)?;
    Ok((report, model))
}

/// Evaluates a saved model on the experiment's data.
pub fn evaluate_run(cfg: &ExperimentConfig, model_dir: &Path, out: &Path) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let model = load_model(model_dir)?;
    let prepared = prepare(cfg, model.meta.series.as_ref())?;
    let eval = evaluate(cfg, &model, &prepared)?;
    ensure_dir(out)?;
    if !eval.intervals.is_empty() {
        write_intervals(&out.join("intervals.csv"), &eval.intervals)?;
    }
    let report = RunReport {
        command: "evaluate".into(),
        seed: cfg.seed,
        config: config_echo(cfg),
        training: None,
        transport: eval.transport,
        coverage: eval.coverage,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    report.write(out)?;
    Ok(report)
}

/// Across-seed means and standard deviations of a repeated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub seeds: Vec<u64>,
    /// `(split, mean, std)` of the coverage rates.
    pub coverage: Vec<(String, f64, f64)>,
    /// `(split, mean, std)` of the transport means.
    pub transport: Vec<(String, f64, f64)>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let est = TransportEstimate::from_values(values, 0);
    (est.mean, est.std)
}

/// `repeats` training runs with seeds `seed, seed + 1, …`, each in
/// `out/seed-<s>`, plus an aggregate `out/repeats.json`.
pub fn repeat_train(
    cfg: &ExperimentConfig,
    repeats: usize,
    out: &Path,
    observe: &mut dyn FnMut(u64, &IterationRecord),
) -> Result<(Vec<RunReport>, RepeatSummary)> {
    let mut reports = Vec::with_capacity(repeats);
    for k in 0..repeats as u64 {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed.wrapping_add(k);
        let seed = run_cfg.seed;
        let (report, _) = train_run(&run_cfg, &out.join(format!("seed-{seed}")), &mut |r| observe(seed, r))?;
        reports.push(report);
    }
    let first = &reports[0];
    let coverage = first
        .coverage
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let rates: Vec<f64> = reports.iter().map(|r| r.coverage[i].rate).collect();
            let (m, s) = mean_std(&rates);
            (c.split.clone(), m, s)
        })
        .collect();
    let transport = first
        .transport
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let means: Vec<f64> = reports.iter().map(|r| r.transport[i].estimate.mean).collect();
            let (m, s) = mean_std(&means);
            (t.split.clone(), m, s)
        })
        .collect();
    let summary = RepeatSummary {
        seeds: reports.iter().map(|r| r.seed).collect(),
        coverage,
        transport,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&out.join("repeats.json"), &json)?;
    Ok((reports, summary))
}

/// One forecast day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub timestamp: String,
    pub lower: f64,
    pub upper: f64,
    pub truth: f64,
    pub covered: bool,
    pub band_lower: Option<f64>,
    pub band_upper: Option<f64>,
}

/// Intervals for every day of `series_path` after the first `r`, in the
/// series' units, written as CSV to `out`.
pub fn forecast_run(cfg: &ExperimentConfig, model_dir: &Path, series_path: &Path, out: &Path) -> Result<Vec<ForecastRow>> {
    cfg.validate()?;
    let model = load_model(model_dir)?;
    let setup = model
        .meta
        .series
        .clone()
        .ok_or_else(|| Error::ModelMismatch("model was not trained on series data".into()))?;
    let frame = load_csv(series_path)?;
    let (data, truths) = setup.pairs(&frame)?;
    model.check_data(&data)?;
    let y = data.y.as_ref().expect("series pairs are conditional");
    let (intervals, report) = per_observation_coverage(
        &model.sampler(),
        y.view(),
        &truths,
        Statistic::Component(0),
        cfg.eval_n_test,
        cfg.eval_alpha,
        cfg.seed,
        0,
        cfg.execution(),
        |iv| setup.denormalize(iv),
    )?;
    let denormalize = |iv| setup.denormalize(iv);
    let bands = sigma_bands(cfg, &model, y.view(), Statistic::Component(0), cfg.eval_n_test, 0, &denormalize)?;
    let rows: Vec<ForecastRow> = intervals
        .iter()
        .enumerate()
        .map(|(i, iv)| ForecastRow {
            timestamp: frame.timestamps[i + setup.lags].to_string(),
            lower: iv.lower,
            upper: iv.upper,
            truth: truths[i],
            covered: report.flags[i],
            band_lower: bands[i].0,
            band_upper: bands[i].1,
        })
        .collect();
    ensure_parent(out)?;
    let mut w = csv::Writer::from_path(out).map_err(|e| Error::Format {
        path: out.to_path_buf(),
        msg: e.to_string(),
    })?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::Format {
            path: out.to_path_buf(),
            msg: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(rows)
}
