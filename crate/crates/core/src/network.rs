//! Feed-forward ReLU networks.
//!
//! A network with depth `L` and width vector `p = (p₀, …, p_{L+1})` computes
//!
//! ```text
//! h(x) = W⁽ᴸ⁾ σ(W⁽ᴸ⁻¹⁾ ⋯ σ(W⁽⁰⁾ x + b⁽¹⁾) ⋯ + b⁽ᴸ⁾)
//! ```
//!
//! with `σ` the componentwise ReLU, no bias on the input and no bias on the
//! output layer. The shifted activation `σ_v(u) = max(u − v, 0)` is stored
//! with the sign absorbed, `b = −v`, so every bias is added before the ReLU.
//!
//! # Serialized format
//!
//! Plain UTF-8 text, one item per line, floats in Rust `{:e}` notation
//! (shortest round-trip representation):
//!
//! ```text
//! cwgan-network 1
//! widths <p0> <p1> ... <p_{L+1}>
//! bound <F | none>
//! clamp <0 | 1>
//! W0 <rows> <cols>
//! <row 0 values, space separated>
//! ...
//! b1 1 <p1>
//! <values>
//! W1 <rows> <cols>
//! ...
//! ```
//!
//! Tensors appear in layer order `W0, b1, W1, b2, …, bL, WL`, each row-major.
//! The bias lines hold `b = −v`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, NodeId};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("input dimension mismatch: network expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input gradient needs a scalar-output network, output dimension is {0}")]
    OutputNotScalar(usize),
    #[error("parameter {index} has shape {got:?}, architecture requires {expected:?}")]
    ParameterShape {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("network file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("network file: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Graph(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

/// Depth and widths of a ReLU network, plus the optional output bound `F`
/// and sparsity budget `s` of the theoretical network class.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    widths: Vec<usize>,
    output_bound: Option<f64>,
    sparsity_budget: Option<usize>,
}

impl Architecture {
    /// `widths` is the full vector `(p₀, …, p_{L+1})`.
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(NetworkError::InvalidArchitecture(format!(
                "need input and output widths, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(NetworkError::InvalidArchitecture(format!(
                "all widths must be >= 1, got {widths:?}"
            )));
        }
        Ok(Self {
            widths,
            output_bound: None,
            sparsity_budget: None,
        })
    }

    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self::new(widths)
    }

    pub fn with_output_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(NetworkError::InvalidArchitecture(format!(
                "output bound must be positive, got {bound}"
            )));
        }
        self.output_bound = Some(bound);
        Ok(self)
    }

    pub fn with_sparsity_budget(mut self, s: usize) -> Self {
        self.sparsity_budget = Some(s);
        self
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn hidden(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn output_bound(&self) -> Option<f64> {
        self.output_bound
    }

    pub fn sparsity_budget(&self) -> Option<usize> {
        self.sparsity_budget
    }

    /// Shapes of the parameter tensors in storage order `W0, b1, W1, …, WL`.
    pub fn parameter_shapes(&self) -> Vec<(usize, usize)> {
        let l = self.depth();
        let mut shapes = Vec::with_capacity(2 * l + 1);
        for k in 0..=l {
            shapes.push((self.widths[k + 1], self.widths[k]));
            if k < l {
                shapes.push((1, self.widths[k + 1]));
            }
        }
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes().iter().map(|(r, c)| r * c).sum()
    }
}

/// A ReLU network with concrete parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    params: Vec<Array2<f64>>,
    clamp_output: bool,
}

impl Network {
    /// Uniform fan-based initialization, `±√(6/(p_l + p_{l+1}))`, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let params = arch
            .parameter_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, (r, c))| {
                if Self::is_bias_slot(i) {
                    Array2::zeros((r, c))
                } else {
                    let bound = (6.0 / (r + c) as f64).sqrt();
                    Array2::from_shape_simple_fn((r, c), || rng.random_range(-bound..=bound))
                }
            })
            .collect();
        Self {
            arch,
            params,
            clamp_output: false,
        }
    }

    pub fn from_params(arch: Architecture, params: Vec<Array2<f64>>) -> Result<Self> {
        let shapes = arch.parameter_shapes();
        if shapes.len() != params.len() {
            return Err(NetworkError::InvalidArchitecture(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (index, (expected, p)) in shapes.iter().zip(&params).enumerate() {
            if *expected != p.dim() {
                return Err(NetworkError::ParameterShape {
                    index,
                    expected: *expected,
                    got: p.dim(),
                });
            }
        }
        Ok(Self {
            arch,
            params,
            clamp_output: false,
        })
    }

    pub fn zeros(arch: Architecture) -> Self {
        let params = arch
            .parameter_shapes()
            .into_iter()
            .map(Array2::zeros)
            .collect();
        Self {
            arch,
            params,
            clamp_output: false,
        }
    }

    /// Enables clipping of every output coordinate to `[−F, F]`. Requires an
    /// output bound on the architecture.
    pub fn with_clamping(mut self, enabled: bool) -> Result<Self> {
        if enabled && self.arch.output_bound.is_none() {
            return Err(NetworkError::InvalidArchitecture(
                "clamping needs an output bound".into(),
            ));
        }
        self.clamp_output = enabled;
        Ok(self)
    }

    pub fn clamps_output(&self) -> bool {
        self.clamp_output
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    /// `W⁽ˡ⁾`, shape `p_{l+1} × p_l`.
    pub fn weight(&self, l: usize) -> &Array2<f64> {
        &self.params[2 * l]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut Array2<f64> {
        &mut self.params[2 * l]
    }

    /// Additive bias of hidden layer `l ∈ 1..=L`, shape `1 × p_l`.
    pub fn bias(&self, l: usize) -> &Array2<f64> {
        &self.params[2 * l - 1]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut Array2<f64> {
        &mut self.params[2 * l - 1]
    }

    /// Whether storage slot `i` holds a bias (as opposed to a weight matrix).
    pub fn is_bias_slot(i: usize) -> bool {
        i % 2 == 1
    }

    /// Batch forward pass, one sample per row.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.arch.input_dim() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.arch.input_dim(),
                got: x.ncols(),
            });
        }
        let l = self.arch.depth();
        let mut h = x.dot(&self.weight(0).t());
        for k in 1..=l {
            h += self.bias(k);
            h.mapv_inplace(|u| u.max(0.0));
            h = h.dot(&self.weight(k).t());
        }
        if self.clamp_output {
            let f = self.arch.output_bound.expect("checked in with_clamping");
            h.mapv_inplace(|u| u.clamp(-f, f));
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        Ok(self.forward_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// Exact gradient of the (unclamped) scalar output with respect to the
    /// input. ReLU has derivative 0 at 0.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.arch.output_dim() != 1 {
            return Err(NetworkError::OutputNotScalar(self.arch.output_dim()));
        }
        if x.len() != self.arch.input_dim() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.arch.input_dim(),
                got: x.len(),
            });
        }
        let l = self.arch.depth();
        let mut pre = Vec::with_capacity(l);
        let mut h = ndarray::Array1::from(x.to_vec());
        for k in 0..l {
            let u = self.weight(k).dot(&h) + self.bias(k + 1).row(0);
            h = u.mapv(|v| v.max(0.0));
            pre.push(u);
        }
        let mut g = self.weight(l).row(0).to_owned();
        for k in (0..l).rev() {
            g.zip_mut_with(&pre[k], |gi, &u| {
                if u <= 0.0 {
                    *gi = 0.0
                }
            });
            g = self.weight(k).t().dot(&g);
        }
        Ok(g.to_vec())
    }

    /// Number of parameters (weights and biases) with `|θ| > threshold`.
    pub fn sparsity(&self, threshold: f64) -> usize {
        self.params
            .iter()
            .map(|p| p.iter().filter(|v| v.abs() > threshold).count())
            .sum()
    }

    /// `max |θ|` over all parameters; the theoretical class bounds it by 1.
    pub fn max_abs_parameter(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Adds one leaf per parameter tensor to `g`.
    pub fn parameter_leaves(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params.iter().map(|p| g.parameter(p.clone())).collect()
    }

    /// Appends the forward pass on `input` (one sample per row) to `g`, using
    /// previously created parameter leaves. Output clamping is not part of
    /// the differentiable path.
    pub fn build_forward(&self, g: &mut Graph, input: NodeId, params: &[NodeId]) -> Result<NodeId> {
        let l = self.arch.depth();
        let mut h = g.matmul_t(input, params[0], false, true)?;
        for k in 1..=l {
            h = g.add_row(h, params[2 * k - 1])?;
            h = g.relu(h)?;
            h = g.matmul_t(h, params[2 * k], false, true)?;
        }
        Ok(h)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("cwgan-network 1\n");
        let widths: Vec<String> = self.arch.widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(out, "widths {}", widths.join(" "));
        match self.arch.output_bound {
            Some(f) => {
                let _ = writeln!(out, "bound {f:e}");
            }
            None => out.push_str("bound none\n"),
        }
        let _ = writeln!(out, "clamp {}", u8::from(self.clamp_output));
        for (i, p) in self.params.iter().enumerate() {
            let tag = if Self::is_bias_slot(i) {
                format!("b{}", i.div_ceil(2))
            } else {
                format!("W{}", i / 2)
            };
            let _ = writeln!(out, "{tag} {} {}", p.nrows(), p.ncols());
            for row in p.axis_iter(Axis(0)) {
                let vals: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                out.push_str(&vals.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| NetworkError::Parse {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            })
        };
        let err = |line: usize, msg: String| NetworkError::Parse { line, msg };

        let (n, header) = next("header")?;
        if header != "cwgan-network 1" {
            return Err(err(n, format!("unknown header {header:?}")));
        }
        let (n, line) = next("widths")?;
        let widths = keyed(line, "widths")
            .ok_or_else(|| err(n, "expected `widths`".into()))?
            .split_whitespace()
            .map(|w| w.parse::<usize>().map_err(|e| err(n, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut arch = Architecture::new(widths)?;
        let (n, line) = next("bound")?;
        match keyed(line, "bound").ok_or_else(|| err(n, "expected `bound`".into()))? {
            "none" => {}
            f => arch = arch.with_output_bound(f.parse().map_err(|e| err(n, format!("{e}")))?)?,
        }
        let (n, line) = next("clamp")?;
        let clamp = match keyed(line, "clamp") {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(err(n, "expected `clamp 0|1`".into())),
        };

        let mut params = Vec::new();
        for (rows, cols) in arch.parameter_shapes() {
            let (n, line) = next("tensor header")?;
            let dims: Vec<&str> = line.split_whitespace().collect();
            if dims.len() != 3 || dims[1].parse() != Ok(rows) || dims[2].parse() != Ok(cols) {
                return Err(err(n, format!("expected tensor of shape {rows}x{cols}, got {line:?}")));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (n, line) = next("tensor row")?;
                let before = data.len();
                for v in line.split_whitespace() {
                    data.push(v.parse::<f64>().map_err(|e| err(n, format!("{e}: {v:?}")))?);
                }
                if data.len() - before != cols {
                    return Err(err(n, format!("expected {cols} values")));
                }
            }
            params.push(Array2::from_shape_vec((rows, cols), data).expect("sizes checked"));
        }
        Self::from_params(arch, params)?.with_clamping(clamp)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn keyed<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.strip_prefix(key)
        .filter(|rest| rest.starts_with(' '))
        .map(str::trim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use ndarray::array;

    fn one_unit(w0: f64, b: f64, w1: f64) -> Network {
        let arch = Architecture::new(vec![1, 1, 1]).unwrap();
        Network::from_params(arch, vec![array![[w0]], array![[b]], array![[w1]]]).unwrap()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let arch = Architecture::new(vec![2, 3, 1]).unwrap();
        let a = Network::init(arch.clone(), &mut substream(1, Stream::GeneratorInit, 0));
        let b = Network::init(arch, &mut substream(1, Stream::GeneratorInit, 0));
        assert_eq!(a, b);
        assert_eq!(a.weight(0).dim(), (3, 2));
        assert_eq!(a.weight(1).dim(), (1, 3));
        assert_eq!(a.bias(1).dim(), (1, 3));
        assert!(a.bias(1).iter().all(|&v| v == 0.0));
        assert_eq!(a.sparsity(0.0), 9);
    }

    #[test]
    fn init_weights_are_centered() {
        let arch = Architecture::new(vec![4, 4, 1]).unwrap();
        let mut rng = substream(3, Stream::CriticInit, 0);
        let mut sum = 0.0;
        let mut count = 0usize;
        while count < 10_000 {
            let net = Network::init(arch.clone(), &mut rng);
            for (i, p) in net.params().iter().enumerate() {
                if !Network::is_bias_slot(i) {
                    sum += p.sum();
                    count += p.len();
                }
            }
        }
        assert!((sum / count as f64).abs() < 0.02);
    }

    #[test]
    fn forward_single_unit() {
        let net = one_unit(1.0, 0.0, 1.0);
        assert_eq!(net.forward(&[2.0]).unwrap(), vec![2.0]);
        assert_eq!(net.forward(&[-2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn forward_two_units() {
        let arch = Architecture::new(vec![1, 2, 1]).unwrap();
        let net = Network::from_params(
            arch,
            vec![array![[1.0], [-1.0]], array![[0.0, 0.0]], array![[1.0, 1.0]]],
        )
        .unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![3.0]);
        assert_eq!(net.forward(&[-3.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let net = one_unit(1.0, 0.0, 1.0);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(NetworkError::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn input_gradient_cases() {
        let arch = Architecture::new(vec![3, 1]).unwrap();
        let lin = Network::from_params(arch, vec![array![[0.5, -2.0, 1.5]]]).unwrap();
        assert_eq!(lin.input_gradient(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5, -2.0, 1.5]);

        // relu(x - 1) at 0
        let net = one_unit(1.0, -1.0, 1.0);
        assert_eq!(net.input_gradient(&[0.0]).unwrap(), vec![0.0]);

        let arch = Architecture::new(vec![2, 3, 2]).unwrap();
        let net = Network::zeros(arch);
        assert!(matches!(
            net.input_gradient(&[0.0, 0.0]),
            Err(NetworkError::OutputNotScalar(2))
        ));
    }

    #[test]
    fn sparsity_counts() {
        let arch = Architecture::new(vec![2, 3, 1]).unwrap();
        let mut net = Network::zeros(arch);
        assert_eq!(net.sparsity(0.0), 0);
        net.weight_mut(0)[[0, 0]] = 1.0;
        net.bias_mut(1)[[0, 2]] = 1.0;
        net.weight_mut(1)[[0, 1]] = 1.0;
        assert_eq!(net.sparsity(0.5), 3);
        assert_eq!(net.sparsity(1.0), 0);
    }

    #[test]
    fn clamping_bounds_output() {
        let arch = Architecture::new(vec![1, 1, 1]).unwrap().with_output_bound(1.5).unwrap();
        let net = Network::from_params(arch, vec![array![[1.0]], array![[0.0]], array![[1.0]]])
            .unwrap()
            .with_clamping(true)
            .unwrap();
        assert_eq!(net.forward(&[4.0]).unwrap(), vec![1.5]);
        assert_eq!(net.forward(&[1.0]).unwrap(), vec![1.0]);
        assert!(one_unit(1.0, 0.0, 1.0).with_clamping(true).is_err());
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let arch = Architecture::new(vec![3, 5, 4, 2]).unwrap().with_output_bound(2.5).unwrap();
        let mut net = Network::init(arch, &mut substream(9, Stream::CriticInit, 0));
        net.bias_mut(2)[[0, 1]] = -1.0 / 3.0;
        let back = Network::from_text(&net.to_text()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn malformed_text_reports_line() {
        let net = one_unit(1.0, 0.0, 1.0);
        let text = net.to_text().replace("b1 1 1", "b1 1 2");
        match Network::from_text(&text) {
            Err(NetworkError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn graph_forward_matches_numeric_forward() {
        let arch = Architecture::new(vec![3, 6, 5, 2]).unwrap();
        let mut net = Network::init(arch, &mut substream(4, Stream::CriticInit, 0));
        net.bias_mut(1).fill(0.1);
        let x = array![[0.2, 0.4, 0.9], [0.7, 0.1, 0.3]];
        let mut g = Graph::new();
        let params = net.parameter_leaves(&mut g);
        let input = g.input(x.clone());
        let out = net.build_forward(&mut g, input, &params).unwrap();
        let via_graph = g.evaluate(out).unwrap().clone();
        let direct = net.forward_batch(x.view()).unwrap();
        assert!((&via_graph - &direct).iter().all(|d| d.abs() < 1e-14));
    }
}
