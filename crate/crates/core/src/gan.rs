//! WGAN-GP training, unconditional and conditional.
//!
//! One generator iteration runs `n_critic` critic updates followed by one
//! generator update. Each critic update maximizes the batch estimate
//!
//! ```text
//! (1/m) Σ f(Xᵢ) − (1/m) Σ f(g(Zᵢ))  −  λ (1/m) Σ (‖∇ₓ f(X̃ᵢ)‖₂ − 1)²
//! ```
//!
//! with `X̃ᵢ = Uᵢ Xᵢ + (1 − Uᵢ) g(Zᵢ)` and a scalar `Uᵢ ~ U[0,1]` per sample.
//! The generator then maximizes `(1/m) Σ f(g(Zᵢ))`. Both networks are trained
//! by descent on a loss (the negated objectives) with Adam and coupled L2
//! weight decay.
//!
//! In the conditional case every critic input is `[x | y]` and every
//! generator input is `[z | y]`; the interpolation mixes `x` only and passes
//! `y` through unchanged.
//!
//! The first `warmup.initial_iters` generator iterations (counted from 1) and
//! every iteration divisible by `warmup.every` use `warmup.critic_iters`
//! critic updates instead of `n_critic`.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, NodeId};
use crate::data::{sample_latent, LatentSpec, PairedDataset};
use crate::network::{Architecture, Network, NetworkError};
use crate::optim::{AdamConfig, AdamState, OptimError};
use crate::rng::{substream, Rng, Stream};

/// Smoothing inside the penalty's norm, `sqrt(Σ g² + ε)`.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset has {n} samples, fewer than one batch of {m}")]
    DatasetTooSmall { n: usize, m: usize },
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("batch length mismatch: {0}")]
    BatchLength(String),
    #[error(transparent)]
    Graph(#[from] AutodiffError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

pub type Result<T> = std::result::Result<T, GanError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub initial_iters: usize,
    /// `0` disables the periodic long critic phase.
    pub every: usize,
    pub critic_iters: usize,
}

impl WarmupSchedule {
    pub fn disabled() -> Self {
        Self {
            initial_iters: 0,
            every: 0,
            critic_iters: 0,
        }
    }

    /// Whether 1-based generator iteration `iteration` uses the long schedule.
    pub fn applies(&self, iteration: usize) -> bool {
        self.critic_iters > 0
            && (iteration <= self.initial_iters || (self.every > 0 && iteration.is_multiple_of(self.every)))
    }
}

impl Default for WarmupSchedule {
    fn default() -> Self {
        Self {
            initial_iters: 25,
            every: 100,
            critic_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub penalty_weight: f64,
    pub batch_size: usize,
    pub n_critic: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Apply weight decay to biases as well as weight matrices.
    pub decay_biases: bool,
    pub epochs: usize,
    pub warmup: WarmupSchedule,
    pub latent: LatentSpec,
    pub seed: u64,
    pub conditional: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            penalty_weight: 0.1,
            batch_size: 64,
            n_critic: 5,
            beta1: 0.5,
            beta2: 0.9,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            decay_biases: true,
            epochs: 700,
            warmup: WarmupSchedule::default(),
            latent: LatentSpec::uniform(3),
            seed: 0,
            conditional: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(GanError::InvalidConfig(msg.to_string()));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.n_critic < 1 {
            return bad("n_critic must be >= 1");
        }
        if !(self.penalty_weight >= 0.0) {
            return bad("penalty weight must be >= 0");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be >= 0");
        }
        if self.latent.dim < 1 {
            return bad("latent dimension must be >= 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    /// Per-tensor decay coefficients for a network's parameter list.
    pub fn decay_for(&self, net: &Network) -> Vec<f64> {
        (0..net.params().len())
            .map(|i| {
                if Network::is_bias_slot(i) && !self.decay_biases {
                    0.0
                } else {
                    self.weight_decay
                }
            })
            .collect()
    }
}

/// One line of training history, written after each generator iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based generator iteration.
    pub iteration: usize,
    /// 0-based epoch the iteration belongs to.
    pub epoch: usize,
    /// Wasserstein estimate of the last critic update.
    pub critic_objective: f64,
    /// Penalty term (including `λ`) of the last critic update.
    pub penalty: f64,
    /// `(1/m) Σ f(g(Zᵢ))` at the generator update.
    pub generator_objective: f64,
    pub critic_iterations: usize,
    /// Cumulative number of latent vectors drawn so far.
    pub latent_draws: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub generator: Network,
    pub critic: Network,
    pub history: Vec<IterationRecord>,
    pub latent: LatentSpec,
    pub conditional: bool,
}

/// The critic objective and penalty of one batch, as a graph whose
/// parameter leaves are the critic's.
pub struct CriticGraph {
    pub graph: Graph,
    pub params: Vec<NodeId>,
    pub objective: NodeId,
    pub penalty: NodeId,
    /// `penalty − objective`, the quantity the critic descends on.
    pub loss: NodeId,
}

impl CriticGraph {
    /// `(objective, penalty)` values.
    pub fn values(&mut self) -> Result<(f64, f64)> {
        self.graph.evaluate(self.loss)?;
        let o = self.graph.scalar(self.objective).expect("evaluated");
        let p = self.graph.scalar(self.penalty).expect("evaluated");
        Ok((o, p))
    }

    pub fn loss_gradient(&mut self) -> Result<Vec<Array2<f64>>> {
        Ok(self.graph.gradient(self.loss, &self.params)?.tensors)
    }
}

fn join(a: ArrayView2<f64>, b: Option<ArrayView2<f64>>) -> Array2<f64> {
    match b {
        Some(b) => concatenate![Axis(1), a, b],
        None => a.to_owned(),
    }
}

fn check_rows(what: &str, m: usize, got: usize) -> Result<()> {
    if got != m {
        return Err(GanError::BatchLength(format!("{what} has {got} rows, expected {m}")));
    }
    Ok(())
}

/// Builds the critic objective and gradient penalty for one batch.
///
/// `real` is `m × d`, `cond` is `m × d_Y` (conditional case only), `latent`
/// is `m × d_Z` and `mix` holds the `m` interpolation weights.
pub fn critic_objective(
    critic: &Network,
    generator: &Network,
    real: ArrayView2<f64>,
    cond: Option<ArrayView2<f64>>,
    latent: ArrayView2<f64>,
    mix: &[f64],
    penalty_weight: f64,
) -> Result<CriticGraph> {
    if !(penalty_weight >= 0.0) {
        return Err(GanError::InvalidConfig("penalty weight must be >= 0".into()));
    }
    let m = real.nrows();
    check_rows("latent batch", m, latent.nrows())?;
    check_rows("mixing batch", m, mix.len())?;
    if let Some(c) = cond {
        check_rows("condition batch", m, c.nrows())?;
    }

    let fake = generator.forward_batch(join(latent, cond).view())?;
    let mut interp = fake.clone();
    for ((mut row, x), &u) in interp.rows_mut().into_iter().zip(real.rows()).zip(mix) {
        row.zip_mut_with(&x, |f, &x| *f = u * x + (1.0 - u) * *f);
    }

    let mut stacked = concatenate![Axis(0), real, fake];
    if let Some(c) = cond {
        let cc = concatenate![Axis(0), c, c];
        stacked = concatenate![Axis(1), stacked, cc];
    }
    let weights = Array2::from_shape_fn((2 * m, 1), |(i, _)| if i < m { 1.0 } else { -1.0 } / m as f64);

    let mut g = Graph::new();
    let params = critic.parameter_leaves(&mut g);
    let both = g.input(stacked);
    let scores = critic.build_forward(&mut g, both, &params)?;
    let w = g.input(weights);
    let weighted = g.mul(scores, w)?;
    let objective = g.sum(weighted)?;

    let x_tilde = g.input(interp);
    let critic_in = match cond {
        Some(c) => {
            let y = g.input(c.to_owned());
            g.concat_cols(x_tilde, y)?
        }
        None => x_tilde,
    };
    let f_interp = critic.build_forward(&mut g, critic_in, &params)?;
    let total = g.sum(f_interp)?;
    let grad_x = g.gradient_nodes(total, &[x_tilde])?[0];
    let norms = g.row_norm(grad_x, NORM_EPS)?;
    let dev = g.affine(norms, 1.0, -1.0)?;
    let sq = g.square(dev)?;
    let mean_sq = g.mean(sq)?;
    let penalty = g.scale(mean_sq, penalty_weight)?;
    let loss = g.sub(penalty, objective)?;

    Ok(CriticGraph {
        graph: g,
        params,
        objective,
        penalty,
        loss,
    })
}

/// One Adam step on the critic. Returns `(objective, penalty)` before the
/// update.
#[allow(clippy::too_many_arguments)]
pub fn critic_step(
    critic: &mut Network,
    adam: &mut AdamState,
    decay: &[f64],
    generator: &Network,
    real: ArrayView2<f64>,
    cond: Option<ArrayView2<f64>>,
    latent: ArrayView2<f64>,
    mix: &[f64],
    penalty_weight: f64,
) -> Result<(f64, f64)> {
    let mut cg = critic_objective(critic, generator, real, cond, latent, mix, penalty_weight)?;
    let values = cg.values()?;
    let grads = cg.loss_gradient()?;
    adam.step(critic.params_mut(), &grads, decay)?;
    Ok(values)
}

/// Generator objective `(1/m) Σ f(g(Zᵢ[, Yᵢ])[, Yᵢ])` as a graph over the
/// generator's parameters. Returns `(graph, generator params, objective)`.
pub fn generator_objective(
    critic: &Network,
    generator: &Network,
    cond: Option<ArrayView2<f64>>,
    latent: ArrayView2<f64>,
) -> Result<(Graph, Vec<NodeId>, NodeId)> {
    if let Some(c) = cond {
        check_rows("condition batch", latent.nrows(), c.nrows())?;
    }
    let mut g = Graph::new();
    let gen_params = generator.parameter_leaves(&mut g);
    let input = g.input(join(latent, cond));
    let fake = generator.build_forward(&mut g, input, &gen_params)?;
    let critic_in = match cond {
        Some(c) => {
            let y = g.input(c.to_owned());
            g.concat_cols(fake, y)?
        }
        None => fake,
    };
    let critic_params: Vec<NodeId> = critic.params().iter().map(|p| g.input(p.clone())).collect();
    let scores = critic.build_forward(&mut g, critic_in, &critic_params)?;
    let objective = g.mean(scores)?;
    Ok((g, gen_params, objective))
}

/// One Adam step on the generator. Returns the objective before the update.
pub fn generator_step(
    generator: &mut Network,
    adam: &mut AdamState,
    decay: &[f64],
    critic: &Network,
    cond: Option<ArrayView2<f64>>,
    latent: ArrayView2<f64>,
) -> Result<f64> {
    let (mut g, params, objective) = generator_objective(critic, generator, cond, latent)?;
    let loss = g.scale(objective, -1.0)?;
    let value = g.evaluate(objective)?[[0, 0]];
    let grads = g.gradient(loss, &params)?.tensors;
    adam.step(generator.params_mut(), &grads, decay)?;
    Ok(value)
}

/// Epoch-wise shuffled batches, without replacement inside an epoch.
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    rng: Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, mut rng: Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self {
            order,
            cursor: 0,
            batch,
            rng,
        }
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor += self.batch;
        &self.order[start..self.cursor]
    }
}

pub fn check_architectures(
    config: &TrainConfig,
    data: &PairedDataset,
    gen_arch: &Architecture,
    critic_arch: &Architecture,
) -> Result<()> {
    let d = data.x_dim();
    let dy = data.y_dim();
    if config.conditional != data.is_conditional() {
        return Err(GanError::Architecture(format!(
            "config conditional={} but dataset {} conditioning variables",
            config.conditional,
            if data.is_conditional() { "has" } else { "has no" }
        )));
    }
    let expect = |what: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(GanError::Architecture(format!("{what} is {got}, expected {want}")))
        }
    };
    expect("critic input dimension", critic_arch.input_dim(), d + dy)?;
    expect("critic output dimension", critic_arch.output_dim(), 1)?;
    expect("generator input dimension", gen_arch.input_dim(), config.latent.dim + dy)?;
    expect("generator output dimension", gen_arch.output_dim(), d)?;
    Ok(())
}

pub fn train(
    config: &TrainConfig,
    data: &PairedDataset,
    gen_arch: Architecture,
    critic_arch: Architecture,
) -> Result<TrainedModel> {
    train_with_observer(config, data, gen_arch, critic_arch, |_| {})
}

/// [`train`], calling `observe` after every generator iteration.
pub fn train_with_observer(
    config: &TrainConfig,
    data: &PairedDataset,
    gen_arch: Architecture,
    critic_arch: Architecture,
    mut observe: impl FnMut(&IterationRecord),
) -> Result<TrainedModel> {
    config.validate()?;
    let (n, m) = (data.len(), config.batch_size);
    if n < m {
        return Err(GanError::DatasetTooSmall { n, m });
    }
    check_architectures(config, data, &gen_arch, &critic_arch)?;

    let seed = config.seed;
    let mut generator = Network::init(gen_arch, &mut substream(seed, Stream::GeneratorInit, 0));
    let mut critic = Network::init(critic_arch, &mut substream(seed, Stream::CriticInit, 0));
    let mut gen_adam = AdamState::new(config.adam(), generator.params());
    let mut critic_adam = AdamState::new(config.adam(), critic.params());
    let gen_decay = config.decay_for(&generator);
    let critic_decay = config.decay_for(&critic);

    let mut sampler = BatchSampler::new(n, m, substream(seed, Stream::Shuffle, 0));
    let mut latent_rng = substream(seed, Stream::Latent, 0);
    let mut mix_rng = substream(seed, Stream::Mixing, 0);

    let per_epoch = n / m;
    let total = config.epochs * per_epoch;
    let mut history = Vec::with_capacity(total);
    let mut latent_draws = 0u64;

    for iteration in 1..=total {
        let critic_iters = if config.warmup.applies(iteration) {
            config.warmup.critic_iters
        } else {
            config.n_critic
        };
        let mut last = (0.0, 0.0);
        for _ in 0..critic_iters {
            let idx = sampler.next_batch();
            let real = data.x.select(Axis(0), idx);
            let cond = data.y.as_ref().map(|y| y.select(Axis(0), idx));
            let z = sample_latent(config.latent, m, &mut latent_rng);
            let mix: Vec<f64> = (0..m).map(|_| mix_rng.random::<f64>()).collect();
            last = critic_step(
                &mut critic,
                &mut critic_adam,
                &critic_decay,
                &generator,
                real.view(),
                cond.as_ref().map(|c| c.view()),
                z.view(),
                &mix,
                config.penalty_weight,
            )?;
            latent_draws += m as u64;
        }

        // conditioning values for the generator step come from the next data batch
        let cond = data
            .y
            .as_ref()
            .map(|y| y.select(Axis(0), sampler.next_batch()));
        let z = sample_latent(config.latent, m, &mut latent_rng);
        let generator_objective = generator_step(
            &mut generator,
            &mut gen_adam,
            &gen_decay,
            &critic,
            cond.as_ref().map(|c| c.view()),
            z.view(),
        )?;
        latent_draws += m as u64;

        let record = IterationRecord {
            iteration,
            epoch: (iteration - 1) / per_epoch,
            critic_objective: last.0,
            penalty: last.1,
            generator_objective,
            critic_iterations: critic_iters,
            latent_draws,
        };
        observe(&record);
        history.push(record);
    }

    Ok(TrainedModel {
        generator,
        critic,
        history,
        latent: config.latent,
        conditional: config.conditional,
    })
}

impl TrainedModel {
    /// `count` generator samples `g(Z)` (unconditional) or `g(Z, y)` at a
    /// fixed condition `y`.
    pub fn sample(&self, count: usize, condition: Option<&[f64]>, rng: &mut Rng) -> Result<Array2<f64>> {
        sample_generator(&self.generator, self.latent, count, condition, rng)
    }
}

/// `count` samples from a generator, optionally at a fixed condition.
pub fn sample_generator(
    generator: &Network,
    latent: LatentSpec,
    count: usize,
    condition: Option<&[f64]>,
    rng: &mut Rng,
) -> Result<Array2<f64>> {
    let z = sample_latent(latent, count, rng);
    let input = match condition {
        Some(y) => {
            let ys = Array2::from_shape_fn((count, y.len()), |(_, j)| y[j]);
            concatenate![Axis(1), z, ys]
        }
        None => z,
    };
    Ok(generator.forward_batch(input.view())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Provenance;
    use ndarray::array;

    fn linear(w: &[f64]) -> Network {
        let arch = Architecture::new(vec![w.len(), 1]).unwrap();
        Network::from_params(arch, vec![Array2::from_shape_vec((1, w.len()), w.to_vec()).unwrap()]).unwrap()
    }

    fn zero_generator(dz: usize, d: usize) -> Network {
        Network::zeros(Architecture::new(vec![dz, 4, d]).unwrap())
    }

    #[test]
    fn warmup_counting() {
        let w = WarmupSchedule::default();
        assert!(w.applies(1));
        assert!(w.applies(25));
        assert!(!w.applies(26));
        assert!(!w.applies(99));
        assert!(w.applies(100));
        assert!(w.applies(200));
        assert!(!WarmupSchedule::disabled().applies(1));
    }

    #[test]
    fn hand_evaluated_objective() {
        let critic = linear(&[2.0]);
        let gen = zero_generator(1, 1);
        let mut cg = critic_objective(
            &critic,
            &gen,
            array![[1.0]].view(),
            None,
            array![[0.3]].view(),
            &[0.5],
            0.1,
        )
        .unwrap();
        let (o, p) = cg.values().unwrap();
        assert!((o - 2.0).abs() < 1e-12);
        assert!((p - 0.1).abs() < 1e-10);
    }

    #[test]
    fn constant_critic_has_unit_penalty() {
        let critic = Network::zeros(Architecture::new(vec![2, 3, 1]).unwrap());
        let gen = zero_generator(1, 2);
        let mut cg = critic_objective(
            &critic,
            &gen,
            array![[1.0, 2.0], [0.5, 0.1]].view(),
            None,
            array![[0.1], [0.9]].view(),
            &[0.2, 0.7],
            0.3,
        )
        .unwrap();
        let (o, p) = cg.values().unwrap();
        assert_eq!(o, 0.0);
        // smoothing gives (sqrt(ε) − 1)² instead of 1
        assert!((p - 0.3 * (1.0 - NORM_EPS.sqrt()).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn unit_linear_critic_has_no_penalty() {
        let critic = linear(&[0.6, 0.8]);
        let gen = zero_generator(1, 2);
        let mut cg = critic_objective(
            &critic,
            &gen,
            array![[1.0, 2.0], [0.5, 0.1], [3.0, -1.0]].view(),
            None,
            array![[0.1], [0.9], [0.4]].view(),
            &[0.2, 0.7, 1.0],
            10.0,
        )
        .unwrap();
        let (_, p) = cg.values().unwrap();
        assert!(p.abs() < 1e-10);
    }

    #[test]
    fn batch_length_and_lambda_errors() {
        let critic = linear(&[1.0]);
        let gen = zero_generator(1, 1);
        let r = critic_objective(&critic, &gen, array![[1.0], [2.0]].view(), None, array![[0.1]].view(), &[0.5, 0.5], 0.1);
        assert!(matches!(r, Err(GanError::BatchLength(_))));
        let r = critic_objective(&critic, &gen, array![[1.0]].view(), None, array![[0.1]].view(), &[0.5], -1.0);
        assert!(matches!(r, Err(GanError::InvalidConfig(_))));
    }

    #[test]
    fn conditional_critic_sees_condition() {
        // f(x, y) = x + 3y; gradient in x is 1, so the penalty vanishes
        let critic = linear(&[1.0, 3.0]);
        let gen = zero_generator(3, 1);
        let mut cg = critic_objective(
            &critic,
            &gen,
            array![[1.0], [2.0]].view(),
            Some(array![[0.5], [1.0]].view()),
            array![[0.1, 0.2], [0.3, 0.4]].view(),
            &[0.25, 0.75],
            1.0,
        )
        .unwrap();
        let (o, p) = cg.values().unwrap();
        // real mean (1+1.5 + 2+3)/2 = 3.75, fake mean (0+1.5 + 0+3)/2 = 2.25
        assert!((o - 1.5).abs() < 1e-12);
        assert!(p.abs() < 1e-10);
    }

    #[test]
    fn generator_moves_toward_higher_critic_score() {
        // critic f(x) = x, generator g(z) = θ z, latent z > 0
        let critic = linear(&[1.0]);
        let mut gen = linear(&[0.5]);
        let mut adam = AdamState::new(AdamConfig::default(), gen.params());
        let before = gen.params()[0][[0, 0]];
        let obj = generator_step(&mut gen, &mut adam, &[0.0], &critic, None, array![[0.4], [0.8]].view()).unwrap();
        assert!((obj - 0.5 * 0.6).abs() < 1e-12);
        assert!(gen.params()[0][[0, 0]] > before);
    }

    #[test]
    fn constant_critic_or_zero_latent_leaves_generator_fixed() {
        let critic = Network::zeros(Architecture::new(vec![1, 2, 1]).unwrap());
        let mut gen = linear(&[0.5]);
        let mut adam = AdamState::new(AdamConfig::default(), gen.params());
        generator_step(&mut gen, &mut adam, &[0.0], &critic, None, array![[0.4]].view()).unwrap();
        assert_eq!(gen.params()[0][[0, 0]], 0.5);

        let critic = linear(&[1.0]);
        let mut adam = AdamState::new(AdamConfig::default(), gen.params());
        generator_step(&mut gen, &mut adam, &[0.0], &critic, None, array![[0.0], [0.0]].view()).unwrap();
        assert_eq!(gen.params()[0][[0, 0]], 0.5);
    }

    fn tiny_dataset(n: usize) -> PairedDataset {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 3 + j) % 7) as f64 / 7.0);
        PairedDataset::new(x, None, Provenance::SyntheticUnconditional).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            warmup: WarmupSchedule::disabled(),
            latent: LatentSpec::uniform(2),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_epoch_loop_arithmetic() {
        let data = tiny_dataset(64);
        let cfg = tiny_config();
        let model = train(
            &cfg,
            &data,
            Architecture::mlp(2, &[8], 2).unwrap(),
            Architecture::mlp(2, &[8, 8], 1).unwrap(),
        )
        .unwrap();
        assert_eq!(model.history.len(), 1);
        assert_eq!(model.history[0].critic_iterations, 5);
        assert_eq!(model.history[0].latent_draws, 6 * 64);
        assert!(model.history[0].penalty >= 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(96);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            warmup: WarmupSchedule {
                initial_iters: 2,
                every: 5,
                critic_iters: 7,
            },
            ..tiny_config()
        };
        let run = || {
            train(
                &cfg,
                &data,
                Architecture::mlp(2, &[8], 2).unwrap(),
                Architecture::mlp(2, &[8, 8], 1).unwrap(),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 18);
        let iters: Vec<usize> = a.history.iter().map(|r| r.critic_iterations).collect();
        assert_eq!(&iters[..6], &[7, 7, 5, 5, 7, 5]);
        assert!(a.history.windows(2).all(|w| w[0].iteration < w[1].iteration
            && w[0].latent_draws < w[1].latent_draws));
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let data = tiny_dataset(10);
        let cfg = tiny_config();
        let g = Architecture::mlp(2, &[4], 2).unwrap();
        let c = Architecture::mlp(2, &[4], 1).unwrap();
        assert!(matches!(
            train(&cfg, &data, g.clone(), c.clone()),
            Err(GanError::DatasetTooSmall { n: 10, m: 64 })
        ));
        let data = tiny_dataset(64);
        let wrong = Architecture::mlp(3, &[4], 1).unwrap();
        assert!(matches!(train(&cfg, &data, g.clone(), wrong), Err(GanError::Architecture(_))));
        let bad = TrainConfig { n_critic: 0, ..cfg };
        assert!(matches!(train(&bad, &data, g, c), Err(GanError::InvalidConfig(_))));
    }

    #[test]
    fn batch_sampler_epochs_are_permutations() {
        let mut s = BatchSampler::new(10, 5, substream(0, Stream::Shuffle, 0));
        let mut seen: Vec<usize> = s.next_batch().to_vec();
        seen.extend_from_slice(s.next_batch());
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }
}
