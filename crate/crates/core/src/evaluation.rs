//! Interval and coverage protocols for generators.
//!
//! A [`Sampler`] produces draws of `X`, optionally at a fixed condition `y`.
//! Trained generators and the known synthetic laws both implement it, so the
//! same protocol evaluates a model and the oracle it is compared with.

use ndarray::{concatenate, Array2, ArrayView2, Axis};

use crate::confidence::{coverage, coverage_single, quantile_interval, sigma_band, CoverageReport, Interval};
use crate::data::{sample_latent, synth_conditional_given, synth_unconditional, LatentSpec, Statistic};
use crate::error::Result;
use crate::exec::{map_indexed, Execution};
use crate::network::Network;
use crate::rng::{substream, Rng, Stream};

/// Evaluation sub-streams below this index are reserved for transport
/// repetitions.
const INTERVAL_STREAM_BASE: u64 = 1 << 32;

pub trait Sampler: Sync {
    fn sample(&self, count: usize, condition: Option<&[f64]>, rng: &mut Rng) -> Result<Array2<f64>>;
}

pub struct GeneratorSampler<'a> {
    pub generator: &'a Network,
    pub latent: LatentSpec,
}

impl Sampler for GeneratorSampler<'_> {
    fn sample(&self, count: usize, condition: Option<&[f64]>, rng: &mut Rng) -> Result<Array2<f64>> {
        let z = sample_latent(self.latent, count, rng);
        let input = match condition {
            Some(y) => {
                let ys = Array2::from_shape_fn((count, y.len()), |(_, j)| y[j]);
                concatenate![Axis(1), z, ys]
            }
            None => z,
        };
        Ok(self.generator.forward_batch(input.view())?)
    }
}

/// The synthetic unconditional law `g*(Z)`; ignores any condition.
pub struct TrueUnconditional;

impl Sampler for TrueUnconditional {
    fn sample(&self, count: usize, _condition: Option<&[f64]>, rng: &mut Rng) -> Result<Array2<f64>> {
        Ok(synth_unconditional(count, rng).x)
    }
}

/// The synthetic conditional law `g*(h(Z, y))`.
pub struct TrueConditional;

impl Sampler for TrueConditional {
    fn sample(&self, count: usize, condition: Option<&[f64]>, rng: &mut Rng) -> Result<Array2<f64>> {
        let y = condition.ok_or_else(|| {
            crate::Error::ModelMismatch("conditional law needs a condition".into())
        })?;
        Ok(synth_conditional_given(y, count, rng))
    }
}

/// Interval from `samples` draws of `T(X)` at one condition.
pub fn interval_at(
    sampler: &dyn Sampler,
    condition: Option<&[f64]>,
    statistic: Statistic,
    samples: usize,
    alpha: f64,
    rng: &mut Rng,
) -> Result<Interval> {
    let draws = sampler.sample(samples, condition, rng)?;
    statistic.check_width(draws.ncols())?;
    Ok(quantile_interval(&statistic.apply_rows(draws.view()), alpha)?)
}

/// One interval at a fixed condition and its coverage of many truths.
pub fn shared_interval_coverage(
    sampler: &dyn Sampler,
    condition: Option<&[f64]>,
    statistic: Statistic,
    samples: usize,
    alpha: f64,
    truths: &[f64],
    seed: u64,
) -> Result<(Interval, CoverageReport)> {
    let mut rng = substream(seed, Stream::Evaluation, INTERVAL_STREAM_BASE);
    let interval = interval_at(sampler, condition, statistic, samples, alpha, &mut rng)?;
    Ok((interval, coverage_single(&interval, truths)))
}

/// One interval per observation, conditioned on row `i` of `conditions`.
/// Observation `i` draws from its own sub-stream offset by `stream_offset`,
/// so results do not depend on the execution mode.
#[allow(clippy::too_many_arguments)]
pub fn per_observation_intervals(
    sampler: &dyn Sampler,
    conditions: ArrayView2<f64>,
    statistic: Statistic,
    samples: usize,
    alpha: f64,
    seed: u64,
    stream_offset: u64,
    mode: Execution,
) -> Result<Vec<Interval>> {
    map_indexed(mode, conditions.nrows(), |i| {
        let y = conditions.row(i).to_vec();
        let mut rng = observation_stream(seed, stream_offset, i);
        interval_at(sampler, Some(&y), statistic, samples, alpha, &mut rng)
    })
    .into_iter()
    .collect()
}

fn observation_stream(seed: u64, stream_offset: u64, i: usize) -> Rng {
    substream(seed, Stream::Evaluation, INTERVAL_STREAM_BASE + stream_offset + i as u64 + 1)
}

/// `mean ± k·std` bands from the same draws [`per_observation_intervals`]
/// uses for the same arguments.
#[allow(clippy::too_many_arguments)]
pub fn per_observation_sigma_bands(
    sampler: &dyn Sampler,
    conditions: ArrayView2<f64>,
    statistic: Statistic,
    samples: usize,
    k: f64,
    seed: u64,
    stream_offset: u64,
    mode: Execution,
) -> Result<Vec<(f64, f64)>> {
    map_indexed(mode, conditions.nrows(), |i| {
        let y = conditions.row(i).to_vec();
        let draws = sampler.sample(samples, Some(&y), &mut observation_stream(seed, stream_offset, i))?;
        statistic.check_width(draws.ncols())?;
        Ok(sigma_band(&statistic.apply_rows(draws.view()), k)?)
    })
    .into_iter()
    .collect()
}

/// Per-observation intervals, mapped through `map` (e.g. de-normalization),
/// and their coverage of `truths`.
#[allow(clippy::too_many_arguments)]
pub fn per_observation_coverage(
    sampler: &dyn Sampler,
    conditions: ArrayView2<f64>,
    truths: &[f64],
    statistic: Statistic,
    samples: usize,
    alpha: f64,
    seed: u64,
    stream_offset: u64,
    mode: Execution,
    map: impl Fn(Interval) -> Interval,
) -> Result<(Vec<Interval>, CoverageReport)> {
    let intervals: Vec<Interval> =
        per_observation_intervals(sampler, conditions, statistic, samples, alpha, seed, stream_offset, mode)?
            .into_iter()
            .map(map)
            .collect();
    let report = coverage(&intervals, truths)?;
    Ok((intervals, report))
}

/// `T` of `count` fresh draws from the synthetic unconditional law.
pub fn unconditional_truths(statistic: Statistic, count: usize, seed: u64) -> Vec<f64> {
    let x = synth_unconditional(count, &mut substream(seed, Stream::Truth, 0)).x;
    statistic.apply_rows(x.view())
}

/// `T` of `count` fresh draws from the synthetic law of `X | Y = y`.
pub fn conditional_truths(statistic: Statistic, y: &[f64], count: usize, seed: u64) -> Vec<f64> {
    let x = synth_conditional_given(y, count, &mut substream(seed, Stream::Truth, 0));
    statistic.apply_rows(x.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;

    #[test]
    fn oracle_conditional_coverage_is_nominal() {
        let y = [0.5, 0.5, 0.5];
        let truths = conditional_truths(Statistic::Sum, &y, 4000, 3);
        let (iv, report) =
            shared_interval_coverage(&TrueConditional, Some(&y), Statistic::Sum, 20_000, 0.05, &truths, 3).unwrap();
        assert!(iv.width() > 0.0);
        assert!((report.rate - 0.95).abs() <= 0.02, "{}", report.rate);
    }

    #[test]
    fn oracle_unconditional_coverage_is_nominal() {
        let truths = unconditional_truths(Statistic::Component(8), 4000, 5);
        let (_, report) =
            shared_interval_coverage(&TrueUnconditional, None, Statistic::Component(8), 20_000, 0.05, &truths, 5)
                .unwrap();
        assert!((report.rate - 0.95).abs() <= 0.02, "{}", report.rate);
    }

    #[test]
    fn per_observation_modes_agree() {
        let arch = Architecture::mlp(3, &[8], 1).unwrap();
        let net = Network::init(arch, &mut substream(1, Stream::GeneratorInit, 0));
        let sampler = GeneratorSampler {
            generator: &net,
            latent: LatentSpec::normal(2),
        };
        let conds = Array2::from_shape_fn((6, 1), |(i, _)| i as f64 / 6.0);
        let run = |mode| {
            per_observation_intervals(&sampler, conds.view(), Statistic::Component(0), 50, 0.1, 9, 0, mode).unwrap()
        };
        assert_eq!(run(Execution::Parallel), run(Execution::Sequential));
    }

    #[test]
    fn sigma_bands_use_the_observation_streams() {
        let conds = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64 / 8.0);
        let bands =
            per_observation_sigma_bands(&TrueConditional, conds.view(), Statistic::Sum, 400, 3.0, 2, 7, Execution::Parallel)
                .unwrap();
        for (i, (lo, hi)) in bands.iter().enumerate() {
            let y = conds.row(i).to_vec();
            let draws = synth_conditional_given(&y, 400, &mut observation_stream(2, 7, i));
            let t = Statistic::Sum.apply_rows(draws.view());
            let mean = t.iter().sum::<f64>() / 400.0;
            let sd = (t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 399.0).sqrt();
            assert!((lo - (mean - 3.0 * sd)).abs() < 1e-9 && (hi - (mean + 3.0 * sd)).abs() < 1e-9);
        }
    }

    #[test]
    fn per_observation_mapping_and_coverage() {
        let conds = Array2::from_shape_fn((3, 3), |(i, _)| i as f64 / 3.0);
        let shift = |iv: Interval| iv.map(|v| v + 100.0);
        let (ivs, report) = per_observation_coverage(
            &TrueConditional,
            conds.view(),
            &[0.0, 0.0, 0.0],
            Statistic::Sum,
            100,
            0.05,
            1,
            0,
            Execution::Sequential,
            shift,
        )
        .unwrap();
        assert!(ivs.iter().all(|iv| iv.lower > 100.0));
        assert_eq!(report.covered, 0);
    }
}
