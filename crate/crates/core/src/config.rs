//! Flat `key = value` experiment configuration.
//!
//! Keys are namespaced (`train.lambda`, `arch.gen.widths`, `eval.N_test`).
//! Lines starting with `#` and blank lines are ignored. Lists are
//! comma-separated; an empty value means "unset" for optional keys.
//! Unknown keys are rejected.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::data::{LatentDistribution, LatentSpec, Statistic};
use crate::exec::Execution;
use crate::gan::TrainConfig;

/// Environment variable naming the default report directory.
pub const REPORT_DIR_ENV: &str = "CWGAN_REPORT_DIR";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key}: cannot parse {value:?}: {msg}")]
    BadValue {
        key: String,
        value: String,
        msg: String,
    },
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    /// Synthetic `X = g*(Z)`.
    Unconditional,
    /// Synthetic `X = g*(h(Z, Y))` with conditioning `Y`.
    Conditional,
    /// Paired CSV from `data.path`.
    Paired,
    /// Time series CSV from `data.path`, lag-embedded.
    Series,
}

impl FromStr for DataKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "unconditional" => Ok(Self::Unconditional),
            "conditional" => Ok(Self::Conditional),
            "paired" => Ok(Self::Paired),
            "series" => Ok(Self::Series),
            _ => Err("expected unconditional, conditional, paired or series".into()),
        }
    }
}

impl std::fmt::Display for DataKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Unconditional => "unconditional",
            Self::Conditional => "conditional",
            Self::Paired => "paired",
            Self::Series => "series",
        })
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "root seed for all random streams"),
    ("data.kind", "unconditional | conditional | paired | series"),
    ("data.n", "sample size for synthetic data"),
    ("data.path", "CSV input for paired and series data"),
    ("data.x_dim", "number of leading X columns in a paired CSV (empty: all)"),
    ("data.lags", "lag order r for series data"),
    ("data.statistic", "target statistic for series data: sum | component:<k>"),
    ("data.condition_columns", "series columns used as conditioning (empty: all)"),
    ("data.n_train", "number of leading series rows used for training"),
    ("data.normalize", "min-max normalize series data on the training rows"),
    ("latent.distribution", "uniform | normal"),
    ("latent.dim", "latent dimension d_Z"),
    ("arch.gen.widths", "generator hidden widths"),
    ("arch.gen.bound", "generator output bound F, clamped (empty: none)"),
    ("arch.critic.widths", "critic hidden widths"),
    ("train.lr", "Adam learning rate"),
    ("train.lambda", "gradient penalty weight"),
    ("train.batch", "batch size m"),
    ("train.n_critic", "critic updates per generator update"),
    ("train.beta1", "Adam beta1"),
    ("train.beta2", "Adam beta2"),
    ("train.adam_eps", "Adam epsilon"),
    ("train.weight_decay", "coupled L2 weight decay"),
    ("train.decay_biases", "apply weight decay to biases"),
    ("train.epochs", "number of epochs"),
    ("train.warmup_initial", "leading generator iterations with long critic phases"),
    ("train.warmup_every", "period of long critic phases (0: never)"),
    ("train.warmup_critic", "critic updates in a long phase"),
    ("eval.alpha", "interval level; nominal coverage is 1 - alpha"),
    ("eval.N_train", "generated samples per interval on training observations"),
    ("eval.N_test", "generated samples per interval on test observations"),
    ("eval.truths", "fresh truths drawn for synthetic coverage"),
    ("eval.statistic", "statistic T for intervals: sum | component:<k>"),
    ("eval.condition", "condition y for synthetic conditional intervals"),
    ("eval.ot_batch", "samples per optimal transport batch"),
    ("eval.ot_repetitions", "optimal transport repetitions"),
    ("eval.sigma_band", "also report a mean ± k·std band per observation (empty: none)"),
    ("eval.parallel", "evaluate with the thread pool"),
    ("report.dir", "default output directory"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data_kind: DataKind,
    pub data_n: usize,
    pub data_path: Option<PathBuf>,
    pub data_x_dim: Option<usize>,
    pub data_lags: usize,
    pub data_statistic: Statistic,
    pub data_condition_columns: Vec<String>,
    pub data_n_train: usize,
    pub data_normalize: bool,
    pub latent: LatentSpec,
    pub gen_widths: Vec<usize>,
    pub gen_bound: Option<f64>,
    pub critic_widths: Vec<usize>,
    pub train: TrainConfig,
    pub eval_alpha: f64,
    pub eval_n_train: usize,
    pub eval_n_test: usize,
    pub eval_truths: usize,
    pub eval_statistic: Statistic,
    pub eval_condition: Vec<f64>,
    pub eval_ot_batch: usize,
    pub eval_ot_repetitions: usize,
    pub eval_sigma_band: Option<f64>,
    pub eval_parallel: bool,
    pub report_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: 0,
            data_kind: DataKind::Unconditional,
            data_n: 3200,
            data_path: None,
            data_x_dim: None,
            data_lags: 1,
            data_statistic: Statistic::Sum,
            data_condition_columns: Vec::new(),
            data_n_train: 4300,
            data_normalize: true,
            latent: train.latent,
            gen_widths: vec![32; 3],
            gen_bound: None,
            critic_widths: vec![128; 5],
            train,
            eval_alpha: 0.05,
            eval_n_train: 1000,
            eval_n_test: 10000,
            eval_truths: 1000,
            eval_statistic: Statistic::Sum,
            eval_condition: vec![0.5; 3],
            eval_ot_batch: 1000,
            eval_ot_repetitions: 1,
            eval_sigma_band: None,
            eval_parallel: true,
            report_dir: std::env::var_os(REPORT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("reports")),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        msg: e.to_string(),
    })
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if value.is_empty() {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data.kind" => self.data_kind = parse(key, v)?,
            "data.n" => self.data_n = parse(key, v)?,
            "data.path" => self.data_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.x_dim" => self.data_x_dim = parse_opt(key, v)?,
            "data.lags" => self.data_lags = parse(key, v)?,
            "data.statistic" => self.data_statistic = parse(key, v)?,
            "data.condition_columns" => self.data_condition_columns = parse_list(key, v)?,
            "data.n_train" => self.data_n_train = parse(key, v)?,
            "data.normalize" => self.data_normalize = parse(key, v)?,
            "latent.distribution" => self.latent.distribution = parse::<LatentDistribution>(key, v)?,
            "latent.dim" => self.latent.dim = parse(key, v)?,
            "arch.gen.widths" => self.gen_widths = parse_list(key, v)?,
            "arch.gen.bound" => self.gen_bound = parse_opt(key, v)?,
            "arch.critic.widths" => self.critic_widths = parse_list(key, v)?,
            "train.lr" => t.learning_rate = parse(key, v)?,
            "train.lambda" => t.penalty_weight = parse(key, v)?,
            "train.batch" => t.batch_size = parse(key, v)?,
            "train.n_critic" => t.n_critic = parse(key, v)?,
            "train.beta1" => t.beta1 = parse(key, v)?,
            "train.beta2" => t.beta2 = parse(key, v)?,
            "train.adam_eps" => t.adam_eps = parse(key, v)?,
            "train.weight_decay" => t.weight_decay = parse(key, v)?,
            "train.decay_biases" => t.decay_biases = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.warmup_initial" => t.warmup.initial_iters = parse(key, v)?,
            "train.warmup_every" => t.warmup.every = parse(key, v)?,
            "train.warmup_critic" => t.warmup.critic_iters = parse(key, v)?,
            "eval.alpha" => self.eval_alpha = parse(key, v)?,
            "eval.N_train" => self.eval_n_train = parse(key, v)?,
            "eval.N_test" => self.eval_n_test = parse(key, v)?,
            "eval.truths" => self.eval_truths = parse(key, v)?,
            "eval.statistic" => self.eval_statistic = parse(key, v)?,
            "eval.condition" => self.eval_condition = parse_list(key, v)?,
            "eval.ot_batch" => self.eval_ot_batch = parse(key, v)?,
            "eval.ot_repetitions" => self.eval_ot_repetitions = parse(key, v)?,
            "eval.sigma_band" => self.eval_sigma_band = parse_opt(key, v)?,
            "eval.parallel" => self.eval_parallel = parse(key, v)?,
            "report.dir" => self.report_dir = PathBuf::from(v),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        KEYS.iter()
            .map(|&(key, _)| {
                let value = match key {
                    "seed" => self.seed.to_string(),
                    "data.kind" => self.data_kind.to_string(),
                    "data.n" => self.data_n.to_string(),
                    "data.path" => opt(&self.data_path.as_ref().map(|p| p.display())),
                    "data.x_dim" => opt(&self.data_x_dim),
                    "data.lags" => self.data_lags.to_string(),
                    "data.statistic" => self.data_statistic.to_string(),
                    "data.condition_columns" => join(&self.data_condition_columns),
                    "data.n_train" => self.data_n_train.to_string(),
                    "data.normalize" => self.data_normalize.to_string(),
                    "latent.distribution" => self.latent.distribution.to_string(),
                    "latent.dim" => self.latent.dim.to_string(),
                    "arch.gen.widths" => join(&self.gen_widths),
                    "arch.gen.bound" => opt(&self.gen_bound),
                    "arch.critic.widths" => join(&self.critic_widths),
                    "train.lr" => t.learning_rate.to_string(),
                    "train.lambda" => t.penalty_weight.to_string(),
                    "train.batch" => t.batch_size.to_string(),
                    "train.n_critic" => t.n_critic.to_string(),
                    "train.beta1" => t.beta1.to_string(),
                    "train.beta2" => t.beta2.to_string(),
                    "train.adam_eps" => t.adam_eps.to_string(),
                    "train.weight_decay" => t.weight_decay.to_string(),
                    "train.decay_biases" => t.decay_biases.to_string(),
                    "train.epochs" => t.epochs.to_string(),
                    "train.warmup_initial" => t.warmup.initial_iters.to_string(),
                    "train.warmup_every" => t.warmup.every.to_string(),
                    "train.warmup_critic" => t.warmup.critic_iters.to_string(),
                    "eval.alpha" => self.eval_alpha.to_string(),
                    "eval.N_train" => self.eval_n_train.to_string(),
                    "eval.N_test" => self.eval_n_test.to_string(),
                    "eval.truths" => self.eval_truths.to_string(),
                    "eval.statistic" => self.eval_statistic.to_string(),
                    "eval.condition" => join(&self.eval_condition),
                    "eval.ot_batch" => self.eval_ot_batch.to_string(),
                    "eval.ot_repetitions" => self.eval_ot_repetitions.to_string(),
                    "eval.sigma_band" => opt(&self.eval_sigma_band),
                    "eval.parallel" => self.eval_parallel.to_string(),
                    "report.dir" => self.report_dir.display().to_string(),
                    _ => unreachable!("KEYS and entries() out of sync: {key}"),
                };
                (key, value)
            })
            .collect()
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(key.trim(), value)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        Ok(Self::from_text(&text)?)
    }

    /// The training configuration with the experiment's seed and latent spec
    /// and the conditional flag implied by the data kind.
    pub fn train_config(&self, conditional: bool) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            latent: self.latent,
            conditional,
            ..self.train.clone()
        }
    }

    pub fn execution(&self) -> Execution {
        if self.eval_parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if !(self.eval_alpha > 0.0 && self.eval_alpha < 1.0) {
            return bad(format!("eval.alpha must lie in (0, 1), got {}", self.eval_alpha));
        }
        if self.eval_n_train < 2 || self.eval_n_test < 2 {
            return bad("eval.N_train and eval.N_test must be >= 2".into());
        }
        if self.eval_ot_batch == 0 || self.eval_ot_repetitions == 0 || self.eval_truths == 0 {
            return bad("eval.ot_batch, eval.ot_repetitions and eval.truths must be >= 1".into());
        }
        if self.data_lags == 0 {
            return bad("data.lags must be >= 1".into());
        }
        if matches!(self.data_kind, DataKind::Paired | DataKind::Series) && self.data_path.is_none() {
            return bad(format!("data.kind = {} needs data.path", self.data_kind));
        }
        if matches!(self.data_kind, DataKind::Unconditional | DataKind::Conditional) && self.data_n == 0 {
            return bad("data.n must be >= 1".into());
        }
        if self.data_kind == DataKind::Conditional
            && self.eval_condition.len() != crate::data::SYNTH_COND_DIM
        {
            return bad(format!(
                "eval.condition needs {} values, got {}",
                crate::data::SYNTH_COND_DIM,
                self.eval_condition.len()
            ));
        }
        if let Some(f) = self.gen_bound {
            if !(f > 0.0) {
                return bad("arch.gen.bound must be > 0".into());
            }
        }
        if let Some(k) = self.eval_sigma_band {
            if !(k > 0.0) {
                return bad("eval.sigma_band must be > 0".into());
            }
        }
        self.train_config(false)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::WarmupSchedule;
    use proptest::prelude::*;

    #[test]
    fn defaults_mirror_training_table() {
        let c = ExperimentConfig::default();
        assert_eq!(c.train.learning_rate, 1e-4);
        assert_eq!(c.train.penalty_weight, 0.1);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.train.n_critic, 5);
        assert_eq!((c.train.beta1, c.train.beta2), (0.5, 0.9));
        assert_eq!(c.gen_widths, vec![32; 3]);
        assert_eq!(c.critic_widths, vec![128; 5]);
        assert_eq!(c.train.warmup, WarmupSchedule::default());
    }

    #[test]
    fn text_roundtrip_is_a_fixed_point() {
        let text = "# comment\nseed = 7\ntrain.lambda=0.5\narch.gen.widths = 16, 8\ndata.x_dim = 4\n\neval.condition = 0.1,0.2,0.3\n";
        let a = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(a.seed, 7);
        assert_eq!(a.gen_widths, vec![16, 8]);
        let b = ExperimentConfig::from_text(&a.to_text()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert_eq!(
            ExperimentConfig::from_text("train.lambada = 1"),
            Err(ConfigError::UnknownKey("train.lambada".into()))
        );
        assert!(matches!(
            ExperimentConfig::from_text("train.batch = many"),
            Err(ConfigError::BadValue { .. })
        ));
        assert_eq!(
            ExperimentConfig::from_text("seed 3"),
            Err(ConfigError::Syntax { line: 1 })
        );
    }

    #[test]
    fn every_key_is_settable() {
        let base = ExperimentConfig::default();
        for (key, value) in base.entries() {
            let mut c = base.clone();
            c.set(key, &value).unwrap();
            assert_eq!(c, base, "{key}");
        }
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.data_kind = DataKind::Series;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.eval_alpha = 1.5;
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn numeric_values_roundtrip(seed in any::<u64>(), lr in 1e-9f64..1.0, widths in prop::collection::vec(1usize..512, 1..6)) {
            let mut c = ExperimentConfig::default();
            c.seed = seed;
            c.train.learning_rate = lr;
            c.critic_widths = widths;
            let back = ExperimentConfig::from_text(&c.to_text()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
