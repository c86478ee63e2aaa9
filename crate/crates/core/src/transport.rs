//! Exact 1-Wasserstein distance between equal-size point clouds with
//! uniform weights, and repeated batch estimates of it.
//!
//! Between two uniform empirical measures of the same size `n`, every
//! optimal coupling can be taken to be a permutation, so
//!
//! ```text
//! W₁(a, b) = (1/n) · min_π Σᵢ ‖aᵢ − b_π(i)‖₂
//! ```
//!
//! which is a linear assignment problem. It is solved exactly with the
//! shortest-augmenting-path Hungarian method in `O(n³)`; the dense cost
//! matrix is materialized, which puts the practical ceiling around
//! `n ≈ 2000` (32 MB of costs).

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{sample_latent, LatentSpec};
use crate::exec::{map_indexed, Execution};
use crate::network::{Network, NetworkError};
use crate::rng::{substream, Rng, Stream};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("point clouds must have equal size, got {0} and {1}")]
    SizeMismatch(usize, usize),
    #[error("point clouds must live in the same dimension, got {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty point cloud")]
    Empty,
    #[error("non-finite coordinate in point cloud")]
    NonFinite,
    #[error("brute force is limited to n <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error("source holds {available} samples, {needed} requested")]
    InsufficientData { needed: usize, available: usize },
    #[error("repetitions and batch size must be >= 1")]
    EmptyReport,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

pub type Result<T> = std::result::Result<T, TransportError>;

/// `n` points in `ℝᵈ`, one per row, each carrying mass `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud(Array2<f64>);

impl PointCloud {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(TransportError::Empty);
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(TransportError::NonFinite);
        }
        Ok(Self(points))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn translated(&self, t: &[f64]) -> Self {
        let shift = Array1::from(t.to_vec());
        Self(&self.0 + &shift)
    }
}

fn check_pair(a: &PointCloud, b: &PointCloud) -> Result<usize> {
    if a.len() != b.len() {
        return Err(TransportError::SizeMismatch(a.len(), b.len()));
    }
    if a.dim() != b.dim() {
        return Err(TransportError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(a.len())
}

fn euclidean(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Dense `n × n` Euclidean cost matrix, row-major.
pub fn cost_matrix(a: &PointCloud, b: &PointCloud) -> Vec<f64> {
    let n = a.len();
    let mut cost = vec![0.0; n * n];
    for (i, ai) in a.0.rows().into_iter().enumerate() {
        for (j, bj) in b.0.rows().into_iter().enumerate() {
            cost[i * n + j] = euclidean(ai, bj);
        }
    }
    cost
}

/// Minimum-cost perfect matching on a dense square cost matrix. Returns the
/// column assigned to each row.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    // 1-based potentials and matching; column 0 is a virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_to = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        min_to.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = row[j - 1] - ui0 - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

/// Exact `W₁` between two uniform empirical measures of equal size.
pub fn exact_w1(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let n = check_pair(a, b)?;
    let cost = cost_matrix(a, b);
    let assignment = solve_assignment(&cost, n);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok(total / n as f64)
}

pub const BRUTE_FORCE_MAX: usize = 8;

/// Minimum average matching cost over all `n!` permutations. Test oracle,
/// limited to `n ≤ 8`.
pub fn brute_force_w1(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let n = check_pair(a, b)?;
    if n > BRUTE_FORCE_MAX {
        return Err(TransportError::TooLarge {
            n,
            max: BRUTE_FORCE_MAX,
        });
    }
    let cost = cost_matrix(a, b);
    let eval = |perm: &[usize]| -> f64 { perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum() };

    // Heap's algorithm, iterative form.
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best / n as f64)
}

/// Mean and spread of repeated exact `W₁` evaluations on fresh batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportEstimate {
    pub mean: f64,
    /// Sample standard deviation; 0 when `repetitions == 1`.
    pub std: f64,
    pub repetitions: usize,
    pub batch_size: usize,
}

impl TransportEstimate {
    pub fn from_values(values: &[f64], batch_size: usize) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            repetitions: n,
            batch_size,
        }
    }
}

/// Anything that can hand out batches of vectors on demand.
pub trait SampleSource: Sync {
    fn dim(&self) -> usize;
    fn draw(&self, count: usize, rng: &mut Rng) -> Result<Array2<f64>>;
}

/// Rows of a finite sample, drawn without replacement per batch.
pub struct DatasetSource<'a> {
    rows: ArrayView2<'a, f64>,
}

impl<'a> DatasetSource<'a> {
    pub fn new(rows: ArrayView2<'a, f64>) -> Self {
        Self { rows }
    }
}

impl SampleSource for DatasetSource<'_> {
    fn dim(&self) -> usize {
        self.rows.ncols()
    }

    fn draw(&self, count: usize, rng: &mut Rng) -> Result<Array2<f64>> {
        let available = self.rows.nrows();
        if count > available {
            return Err(TransportError::InsufficientData {
                needed: count,
                available,
            });
        }
        let idx = sample(rng, available, count).into_vec();
        Ok(self.rows.select(Axis(0), &idx))
    }
}

/// The same vector repeated, e.g. a fixed conditioning value `y`.
pub struct FixedSource(pub Vec<f64>);

impl SampleSource for FixedSource {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn draw(&self, count: usize, _rng: &mut Rng) -> Result<Array2<f64>> {
        Ok(Array2::from_shape_fn((count, self.0.len()), |(_, j)| self.0[j]))
    }
}

/// Draws from a closure, for infinite sources such as a known model.
pub struct FnSource<F> {
    dim: usize,
    f: F,
}

impl<F> FnSource<F>
where
    F: Fn(usize, &mut Rng) -> Array2<f64> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> SampleSource for FnSource<F>
where
    F: Fn(usize, &mut Rng) -> Array2<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw(&self, count: usize, rng: &mut Rng) -> Result<Array2<f64>> {
        Ok((self.f)(count, rng))
    }
}

/// Generator samples. Unconditional: rows `g(Z)`. Conditional: rows
/// `[g(Z, Y) | Y]` with `Y` drawn from the condition source.
pub struct GeneratorSource<'a> {
    pub generator: &'a Network,
    pub latent: LatentSpec,
    pub condition: Option<&'a dyn SampleSource>,
}

impl SampleSource for GeneratorSource<'_> {
    fn dim(&self) -> usize {
        self.generator.architecture().output_dim() + self.condition.map_or(0, |c| c.dim())
    }

    fn draw(&self, count: usize, rng: &mut Rng) -> Result<Array2<f64>> {
        let y = self.condition.map(|c| c.draw(count, rng)).transpose()?;
        let z = sample_latent(self.latent, count, rng);
        match y {
            None => Ok(self.generator.forward_batch(z.view())?),
            Some(y) => {
                let input = concatenate![Axis(1), z, y];
                let x = self.generator.forward_batch(input.view())?;
                Ok(concatenate![Axis(1), x, y])
            }
        }
    }
}

/// Exact `W₁` between `repetitions` independent pairs of batches. Each
/// repetition draws from its own seeded sub-stream, so the result does not
/// depend on the execution mode.
pub fn ot_between(
    real: &dyn SampleSource,
    generated: &dyn SampleSource,
    batch_size: usize,
    repetitions: usize,
    seed: u64,
    mode: Execution,
) -> Result<TransportEstimate> {
    if batch_size == 0 || repetitions == 0 {
        return Err(TransportError::EmptyReport);
    }
    if real.dim() != generated.dim() {
        return Err(TransportError::DimensionMismatch(real.dim(), generated.dim()));
    }
    let values = map_indexed(mode, repetitions, |rep| -> Result<f64> {
        let rep = rep as u64;
        let a = real.draw(batch_size, &mut substream(seed, Stream::Evaluation, 2 * rep))?;
        let b = generated.draw(batch_size, &mut substream(seed, Stream::Evaluation, 2 * rep + 1))?;
        exact_w1(&PointCloud::new(a)?, &PointCloud::new(b)?)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(TransportEstimate::from_values(&values, batch_size))
}

/// [`ot_between`] against samples of a trained generator.
#[allow(clippy::too_many_arguments)]
pub fn ot_report(
    real: &dyn SampleSource,
    generator: &Network,
    latent: LatentSpec,
    condition: Option<&dyn SampleSource>,
    batch_size: usize,
    repetitions: usize,
    seed: u64,
    mode: Execution,
) -> Result<TransportEstimate> {
    let generated = GeneratorSource {
        generator,
        latent,
        condition,
    };
    ot_between(real, &generated, batch_size, repetitions, seed, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cloud(a: Array2<f64>) -> PointCloud {
        PointCloud::new(a).unwrap()
    }

    #[test]
    fn identical_and_singleton() {
        let a = cloud(array![[0.0, 1.0], [2.0, 3.0], [5.0, -1.0]]);
        assert_eq!(exact_w1(&a, &a).unwrap(), 0.0);
        let p = cloud(array![[0.0, 0.0]]);
        let q = cloud(array![[3.0, 4.0]]);
        assert_eq!(exact_w1(&p, &q).unwrap(), 5.0);
        assert_eq!(brute_force_w1(&p, &q).unwrap(), 5.0);
    }

    #[test]
    fn one_dimensional_pairs() {
        let a = cloud(array![[0.0], [2.0]]);
        let b = cloud(array![[1.0], [3.0]]);
        assert_eq!(exact_w1(&a, &b).unwrap(), 1.0);
        assert_eq!(brute_force_w1(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn shuffled_copy_is_free() {
        let a = cloud(array![[0.0], [2.0], [7.0], [-1.0]]);
        let b = cloud(array![[7.0], [-1.0], [0.0], [2.0]]);
        assert_eq!(brute_force_w1(&a, &b).unwrap(), 0.0);
        assert_eq!(exact_w1(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let a = cloud(array![[0.0], [1.0]]);
        let b = cloud(array![[0.0]]);
        assert!(matches!(exact_w1(&a, &b), Err(TransportError::SizeMismatch(2, 1))));
        let c = cloud(array![[0.0, 1.0], [1.0, 1.0]]);
        assert!(matches!(exact_w1(&a, &c), Err(TransportError::DimensionMismatch(1, 2))));
        assert!(matches!(PointCloud::new(Array2::zeros((0, 2))), Err(TransportError::Empty)));
        let big = cloud(Array2::zeros((9, 1)));
        assert!(matches!(brute_force_w1(&big, &big), Err(TransportError::TooLarge { n: 9, .. })));
    }

    #[test]
    fn assignment_on_known_matrix() {
        // optimum picks (0,1), (1,0), (2,2) for 1 + 2 + 2 = 5
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = solve_assignment(&cost, 3);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i * 3 + j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn replaying_source_gives_zero() {
        let data = array![[0.0, 1.0], [2.0, 3.0], [4.0, 4.0], [1.0, -1.0]];
        let real = DatasetSource::new(data.view());
        let replay = DatasetSource::new(data.view());
        let est = ot_between(&real, &replay, 4, 3, 11, Execution::Sequential).unwrap();
        assert_eq!((est.mean, est.std), (0.0, 0.0));
    }

    #[test]
    fn single_repetition_has_zero_std() {
        let data = array![[0.0], [1.0], [5.0]];
        let real = DatasetSource::new(data.view());
        let other = FixedSource(vec![0.5]);
        let est = ot_between(&real, &other, 2, 1, 0, Execution::Sequential).unwrap();
        assert_eq!(est.std, 0.0);
        assert_eq!(est.repetitions, 1);
    }

    #[test]
    fn insufficient_data() {
        let data = array![[0.0], [1.0]];
        let real = DatasetSource::new(data.view());
        let err = ot_between(&real, &FixedSource(vec![0.0]), 3, 1, 0, Execution::Sequential).unwrap_err();
        assert!(matches!(err, TransportError::InsufficientData { needed: 3, available: 2 }));
    }

    #[test]
    fn execution_modes_agree() {
        let data = Array2::from_shape_fn((40, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let real = DatasetSource::new(data.view());
        let shifted = FnSource::new(2, |n, rng: &mut Rng| {
            use rand::Rng as _;
            Array2::from_shape_simple_fn((n, 2), || rng.random::<f64>() * 10.0)
        });
        let a = ot_between(&real, &shifted, 20, 4, 3, Execution::Parallel).unwrap();
        let b = ot_between(&real, &shifted, 20, 4, 3, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }
}
