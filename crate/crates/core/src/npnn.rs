//! NP-NN: a single-hidden-layer network whose hidden layer starts as random
//! Fourier features, trained online by the shared Lagrangian SGD loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::RunTrace;
use crate::learner::{Discriminant, NpState, StepSize};
use crate::rff::FrequencyBank;
use crate::sample::{Label, LabeledSample};
use crate::seed::derive_seed;

pub use crate::learner::{sigmoid_loss, FprWindow, Hyperparams};

/// Hidden RFF layer plus affine output layer.
#[derive(Debug, Clone)]
pub struct RffNet {
    bank: FrequencyBank,
    w: Vec<f64>,
    b: f64,
    features: Vec<f64>,
}

impl PartialEq for RffNet {
    fn eq(&self, other: &Self) -> bool {
        self.bank == other.bank && self.w == other.w && self.b == other.b
    }
}

impl RffNet {
    pub fn new(bank: FrequencyBank, w: Vec<f64>, b: f64) -> Result<Self> {
        if w.len() != bank.num_features() {
            return Err(Error::invalid(format!(
                "output weights have length {}, expected {}",
                w.len(),
                bank.num_features()
            )));
        }
        let features = vec![0.0; w.len()];
        Ok(Self {
            bank,
            w,
            b,
            features,
        })
    }

    /// Samples the bank and draws `w`, `b` uniformly in `[-init_scale, init_scale]`.
    pub fn init(params: &Hyperparams, dim_in: usize, seed: u64) -> Result<Self> {
        let bank = FrequencyBank::sample(
            dim_in,
            params.pairs,
            params.bandwidth,
            derive_seed(seed, "bank", 0),
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init", 0));
        let s = params.init_scale;
        let mut draw = || if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
        let w = (0..bank.num_features()).map(|_| draw()).collect();
        let b = draw();
        Self::new(bank, w, b)
    }

    pub fn bank(&self) -> &FrequencyBank {
        &self.bank
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn bias(&self) -> f64 {
        self.b
    }

    pub fn set_bias(&mut self, b: f64) {
        self.b = b;
    }

    pub fn set_weights(&mut self, w: Vec<f64>) -> Result<()> {
        if w.len() != self.w.len() {
            return Err(Error::invalid("output weight length mismatch"));
        }
        self.w = w;
        Ok(())
    }
}

impl Discriminant for RffNet {
    fn dim_in(&self) -> usize {
        self.bank.dim_in()
    }

    fn score(&self, x: &[f64]) -> f64 {
        let scale = (1.0 / self.bank.num_pairs() as f64).sqrt();
        let acc: f64 = self
            .bank
            .rows()
            .zip(self.w.chunks_exact(2))
            .map(|(row, wp)| {
                let (s, c) = crate::rff::dot(row, x).sin_cos();
                wp[0] * c + wp[1] * s
            })
            .sum();
        scale * acc + self.b
    }

    fn score_cached(&mut self, x: &[f64]) -> f64 {
        self.bank.transform_into(x, &mut self.features);
        crate::rff::dot(&self.w, &self.features) + self.b
    }

    /// Expects `score_cached(x)` to have been called on the same `x`.
    fn descend(&mut self, x: &[f64], slope: f64, step: &StepSize, train_hidden: bool) {
        let g = step.eta * step.mu * slope;
        if train_hidden {
            // Uses the pre-step output weights.
            for (i, (wp, fp)) in self
                .w
                .chunks_exact(2)
                .zip(self.features.chunks_exact(2))
                .enumerate()
            {
                let c = -wp[0] * fp[1] + wp[1] * fp[0];
                if c != 0.0 {
                    for (a, xi) in self.bank.row_mut(i).iter_mut().zip(x) {
                        *a -= g * c * xi;
                    }
                }
            }
        }
        for (wk, fk) in self.w.iter_mut().zip(&self.features) {
            *wk -= step.eta * step.lambda * *wk + g * fk;
        }
        self.b -= g;
    }
}

/// Complete NP-NN learner state.
pub type ModelState = NpState<RffNet>;

/// Gradients of the unweighted loss `l(y f(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w: Vec<f64>,
    pub b: f64,
    /// One row per frequency vector.
    pub freqs: Vec<Vec<f64>>,
}

pub fn forward<W>(state: &NpState<RffNet, W>, x: &[f64]) -> Result<f64>
where
    W: crate::learner::FprEstimate,
{
    state.forward(x)
}

pub fn predict<W>(state: &NpState<RffNet, W>, x: &[f64]) -> Result<Label>
where
    W: crate::learner::FprEstimate,
{
    state.predict(x)
}

/// Loss gradients of a network at `sample`, with `s = -l(m)^2 exp(m) y`:
/// `grad_w = s phi(x)`, `grad_b = s`, and for pair `i`
/// `grad_alpha_i = s sqrt(1/D) (-w_{2i-1} sin(alpha_i' x) + w_{2i} cos(alpha_i' x)) x`.
pub fn gradients(net: &RffNet, sample: &LabeledSample) -> Result<Gradients> {
    net.bank.check_input(&sample.x)?;
    let phi = net.bank.transform(&sample.x)?;
    let f = crate::rff::dot(&net.w, phi.as_slice()) + net.b;
    let y = sample.y.sign();
    let s = crate::learner::sigmoid_loss_slope(y * f) * y;
    let scale = (1.0 / net.bank.num_pairs() as f64).sqrt();
    let freqs = net
        .bank
        .rows()
        .zip(net.w.chunks_exact(2))
        .map(|(row, wp)| {
            let proj = crate::rff::dot(row, &sample.x);
            let c = s * scale * (-wp[0] * proj.sin() + wp[1] * proj.cos());
            sample.x.iter().map(|xi| c * xi).collect()
        })
        .collect();
    Ok(Gradients {
        w: phi.as_slice().iter().map(|v| s * v).collect(),
        b: s,
        freqs,
    })
}

/// Fresh NP-NN state for inputs of dimension `dim_in`.
pub fn init_state(params: &Hyperparams, dim_in: usize, seed: u64) -> Result<ModelState> {
    params.validate()?;
    let net = RffNet::init(params, dim_in, seed)?;
    ModelState::new(params.clone(), seed, net)
}

/// Runs the NP-NN prequentially over `stream`.
pub fn run_stream(
    params: &Hyperparams,
    stream: &[LabeledSample],
    seed: u64,
) -> Result<(ModelState, RunTrace)> {
    let first = stream
        .first()
        .ok_or_else(|| Error::invalid("stream is empty"))?;
    let mut state = init_state(params, first.dim(), seed)?;
    let trace = state.run(stream)?;
    Ok((state, trace))
}
