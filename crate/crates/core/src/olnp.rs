//! Linear online NP baseline: the same Lagrangian SGD loop with `f(x) = w'x + b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::RunTrace;
use crate::learner::{sigmoid_loss_slope, Discriminant, Hyperparams, NpState, StepSize};
use crate::rff::dot;
use crate::sample::{Label, LabeledSample};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    w: Vec<f64>,
    b: f64,
}

impl LinearModel {
    pub fn new(w: Vec<f64>, b: f64) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("linear model needs at least one weight"));
        }
        Ok(Self { w, b })
    }

    pub fn init(params: &Hyperparams, dim_in: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init", 0));
        let s = params.init_scale;
        let mut draw = || if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
        let w = (0..dim_in).map(|_| draw()).collect();
        let b = draw();
        Self::new(w, b)
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn bias(&self) -> f64 {
        self.b
    }
}

impl Discriminant for LinearModel {
    fn dim_in(&self) -> usize {
        self.w.len()
    }

    fn score(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    fn descend(&mut self, x: &[f64], slope: f64, step: &StepSize, _train_hidden: bool) {
        let g = step.eta * step.mu * slope;
        for (wk, xk) in self.w.iter_mut().zip(x) {
            *wk -= step.eta * step.lambda * *wk + g * xk;
        }
        self.b -= g;
    }
}

pub type LinearState = NpState<LinearModel>;

/// Loss gradients `(s x, s)` with `s = l'(y f(x)) y`.
pub fn linear_gradients(model: &LinearModel, sample: &LabeledSample) -> Result<(Vec<f64>, f64)> {
    if sample.dim() != model.dim_in() {
        return Err(Error::invalid("input dimension mismatch"));
    }
    let y = sample.y.sign();
    let s = sigmoid_loss_slope(y * model.score(&sample.x)) * y;
    Ok((sample.x.iter().map(|v| s * v).collect(), s))
}

pub fn init_state(params: &Hyperparams, dim_in: usize, seed: u64) -> Result<LinearState> {
    params.validate()?;
    LinearState::new(params.clone(), seed, LinearModel::init(params, dim_in, seed)?)
}

pub fn linear_step(state: &mut LinearState, sample: &LabeledSample) -> Result<Label> {
    state.step(sample)
}

pub fn run_stream(
    params: &Hyperparams,
    stream: &[LabeledSample],
    seed: u64,
) -> Result<(LinearState, RunTrace)> {
    let first = stream
        .first()
        .ok_or_else(|| Error::invalid("stream is empty"))?;
    let mut state = init_state(params, first.dim(), seed)?;
    let trace = state.run(stream)?;
    Ok((state, trace))
}
