//! Dense and LSTM layers plus the tanh-squashed Gaussian head.

use rand::Rng;

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Lower and upper clamp applied to the predicted log standard deviation.
pub const LOG_SIGMA_MIN: f64 = -5.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

/// Largest magnitude a squashed action may take. `tanh` rounds to exactly
/// 1.0 for arguments beyond ~19, which would leave the open interval.
pub const ACTION_BOUND: f64 = 1.0 - f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl DenseSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "dense layer dims must be positive, got {in_dim}x{out_dim}"
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub spec: DenseSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    /// Registers `{name}.w` (out x in, uniform fan-in init) and `{name}.b` (zeros).
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: DenseSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let weight =
            store.register_uniform(format!("{name}.w"), spec.out_dim, spec.in_dim, spec.in_dim, rng)?;
        let bias = store.register(format!("{name}.b"), Matrix::zeros(1, spec.out_dim))?;
        Ok(Self { spec, weight, bias })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let cols = g.value(x).cols();
        if cols != self.spec.in_dim {
            return Err(Error::DimensionMismatch {
                context: "dense input",
                expected: self.spec.in_dim,
                got: cols,
            });
        }
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.linear(x, w, Some(b))?;
        Ok(match self.spec.activation {
            Activation::Tanh => g.tanh(y),
            Activation::Identity => y,
        })
    }
}

/// Eager single-vector evaluation of a dense layer.
pub fn forward_dense(store: &ParamStore, layer: &Dense, input: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new(store);
    let x = g.input_row(input);
    let y = layer.forward(&mut g, x)?;
    Ok(g.value(y).data().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmSpec {
    pub in_dim: usize,
    pub hidden_dim: usize,
}

impl LstmSpec {
    pub fn new(in_dim: usize, hidden_dim: usize) -> Result<Self> {
        if in_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config(format!(
                "lstm dims must be positive, got {in_dim}->{hidden_dim}"
            )));
        }
        Ok(Self { in_dim, hidden_dim })
    }
}

/// Hidden and cell state of an LSTM, as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// LSTM cell with gates stacked as `[input, forget, candidate, output]`
/// in one `4H x (in + H)` matrix acting on `[x, h]`.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub spec: LstmSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Lstm {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: LstmSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let h = spec.hidden_dim;
        let fan_in = spec.in_dim + h;
        let weight = store.register_uniform(format!("{name}.w"), 4 * h, fan_in, fan_in, rng)?;
        let mut bias = Matrix::zeros(1, 4 * h);
        for j in h..2 * h {
            bias.set(0, j, 1.0);
        }
        let bias = store.register(format!("{name}.b"), bias)?;
        Ok(Self { spec, weight, bias })
    }

    /// One cell step on graph nodes; returns `(h', c')`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.spec.hidden_dim;
        for (v, expected, context) in [
            (x, self.spec.in_dim, "lstm input"),
            (h, hd, "lstm hidden state"),
            (c, hd, "lstm cell state"),
        ] {
            let got = g.value(v).cols();
            if got != expected {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    got,
                });
            }
        }
        let xh = g.concat_cols(x, h)?;
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let z = g.linear(xh, w, Some(b))?;
        let zi = g.slice_cols(z, 0, hd)?;
        let zf = g.slice_cols(z, hd, hd)?;
        let zg = g.slice_cols(z, 2 * hd, hd)?;
        let zo = g.slice_cols(z, 3 * hd, hd)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

/// Eager LSTM step; returns the output (equal to `h'`) and the new state.
pub fn forward_lstm(
    store: &ParamStore,
    cell: &Lstm,
    input: &[f64],
    state: &LstmState,
) -> Result<(Vec<f64>, LstmState)> {
    let mut g = Graph::new(store);
    let x = g.input_row(input);
    let h = g.input_row(&state.h);
    let c = g.input_row(&state.c);
    let (h2, c2) = cell.forward(&mut g, x, h, c)?;
    let h2 = g.value(h2).data().to_vec();
    let c2 = g.value(c2).data().to_vec();
    Ok((h2.clone(), LstmState { h: h2, c: c2 }))
}

/// Graph nodes of a squashed Gaussian sample.
#[derive(Debug, Clone, Copy)]
pub struct SquashedSample {
    pub mu: Var,
    pub log_sigma: Var,
    pub action: Var,
}

/// `a = tanh(mu + exp(clamp(log_sigma)) * noise)` with `raw = [mu | log_sigma]`.
///
/// `noise` holds one row of `k` standard-normal draws per row of `raw`,
/// row-major. It enters as a constant so gradients reach `mu` and `log_sigma`.
pub fn squashed_gaussian(g: &mut Graph<'_>, raw: Var, noise: &[f64]) -> Result<SquashedSample> {
    let (rows, cols) = g.value(raw).shape();
    if cols % 2 != 0 {
        return Err(Error::DimensionMismatch {
            context: "gaussian head width",
            expected: cols + 1,
            got: cols,
        });
    }
    let k = cols / 2;
    if noise.len() != rows * k {
        return Err(Error::DimensionMismatch {
            context: "gaussian head noise",
            expected: rows * k,
            got: noise.len(),
        });
    }
    let mu = g.slice_cols(raw, 0, k)?;
    let ls_raw = g.slice_cols(raw, k, k)?;
    let log_sigma = g.clamp(ls_raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
    let sigma = g.exp(log_sigma);
    let phi = g.input(Matrix::from_vec(rows, k, noise.to_vec()));
    let spread = g.mul(sigma, phi)?;
    let pre = g.add(mu, spread)?;
    let squashed = g.tanh(pre);
    let action = g.clamp(squashed, -ACTION_BOUND, ACTION_BOUND);
    Ok(SquashedSample {
        mu,
        log_sigma,
        action,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHeadOutput {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub action: Vec<f64>,
}

/// Eager form of [`squashed_gaussian`] for a single raw head output.
pub fn sample_squashed_gaussian(raw: &[f64], noise: &[f64]) -> Result<GaussianHeadOutput> {
    let k = noise.len();
    if raw.len() != 2 * k {
        return Err(Error::DimensionMismatch {
            context: "gaussian head",
            expected: 2 * k,
            got: raw.len(),
        });
    }
    let mu = raw[..k].to_vec();
    let log_sigma: Vec<f64> = raw[k..]
        .iter()
        .map(|l| l.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX))
        .collect();
    let action = mu
        .iter()
        .zip(&log_sigma)
        .zip(noise)
        .map(|((m, ls), n)| (m + ls.exp() * n).tanh().clamp(-ACTION_BOUND, ACTION_BOUND))
        .collect();
    Ok(GaussianHeadOutput {
        mu,
        log_sigma,
        action,
    })
}
