//! Lagrangian SGD loop shared by the nonlinear and linear NP classifiers.
//!
//! [`NpState`] owns everything except the discriminant itself: the Lagrange
//! multiplier, class counters, step-size schedule and the false-positive
//! window. The discriminant (`RffNet` or `LinearModel`) only knows how to
//! score a point and take a gradient step on its own parameters.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::RunTrace;
use crate::sample::{Label, LabeledSample};

/// Which discriminant a learner trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Npnn,
    Olnp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Npnn => "npnn",
            ModelKind::Olnp => "olnp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "npnn" => Some(ModelKind::Npnn),
            "olnp" => Some(ModelKind::Olnp),
            _ => None,
        }
    }
}

/// Lower bound on the multiplicative factor of a single windowed γ update.
pub const MIN_GAMMA_FACTOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Target false positive rate.
    pub tau: f64,
    /// rbf bandwidth `g` in `exp(-g ||x - y||^2)`.
    pub bandwidth: f64,
    /// Number of cos/sin pairs `D`; the hidden layer has `2D` units.
    pub pairs: usize,
    pub lambda: f64,
    pub eta1: f64,
    pub beta1: f64,
    pub gamma1: f64,
    /// Sliding window length over past negatives.
    pub window: usize,
    /// Negatives required in the window before γ starts moving.
    /// `None` means `min(window, 20)`.
    pub window_min_fill: Option<usize>,
    pub gamma_min: f64,
    pub train_hidden: bool,
    /// Use the instantaneous-loss γ update instead of the windowed one.
    pub stochastic_gamma: bool,
    /// Half-width of the uniform initialization of output weights and bias.
    pub init_scale: f64,
}

impl Hyperparams {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            ..Self::default()
        }
    }

    pub fn min_fill(&self) -> usize {
        self.window_min_fill
            .unwrap_or_else(|| self.window.min(20))
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        positive("bandwidth", self.bandwidth)?;
        positive("eta1", self.eta1)?;
        positive("beta1", self.beta1)?;
        positive("gamma1", self.gamma1)?;
        positive("gamma_min", self.gamma_min)?;
        if self.pairs == 0 {
            return Err(Error::invalid("pairs must be at least 1"));
        }
        if self.window == 0 {
            return Err(Error::invalid("window must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init_scale must be >= 0"));
        }
        if let Some(m) = self.window_min_fill {
            if m == 0 || m > self.window {
                return Err(Error::invalid(format!(
                    "window_min_fill must lie in [1, {}], got {m}",
                    self.window
                )));
            }
        }
        if self.gamma_min > self.gamma1 {
            return Err(Error::invalid("gamma_min must not exceed gamma1"));
        }
        let ratio = self.beta1 / self.eta1;
        if !(0.01..=0.1).contains(&ratio) {
            warn!("beta1/eta1 = {ratio:.4} is outside the usual [0.01, 0.1] range");
        }
        Ok(())
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            tau: 0.1,
            bandwidth: 1.0,
            pairs: 50,
            lambda: 0.0,
            eta1: 0.01,
            beta1: 0.0005,
            gamma1: 1.0,
            window: 200,
            window_min_fill: None,
            gamma_min: 1e-6,
            train_hidden: true,
            stochastic_gamma: false,
            init_scale: 0.01,
        }
    }
}

/// Source of the false-positive estimate that drives the γ update.
pub trait FprEstimate {
    /// Records the 0-1 error of a negative-class decision.
    fn record(&mut self, false_positive: bool);
    /// Current estimate, or `None` while too few negatives have been seen.
    fn current(&self) -> Option<f64>;
}

/// Ring buffer of 0-1 errors on the most recent negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FprWindow {
    bits: Vec<bool>,
    next: usize,
    count: usize,
    ones: usize,
    min_fill: usize,
}

impl FprWindow {
    pub fn new(capacity: usize, min_fill: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be positive");
        Self {
            bits: vec![false; capacity],
            next: 0,
            count: 0,
            ones: 0,
            min_fill: min_fill.clamp(1, capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.bits.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn min_fill(&self) -> usize {
        self.min_fill
    }

    pub fn push(&mut self, false_positive: bool) {
        let cap = self.bits.len();
        if self.count == cap {
            if self.bits[self.next] {
                self.ones -= 1;
            }
        } else {
            self.count += 1;
        }
        self.bits[self.next] = false_positive;
        if false_positive {
            self.ones += 1;
        }
        self.next = (self.next + 1) % cap;
    }

    /// Window mean; zero when empty.
    pub fn estimate(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.ones as f64 / self.count as f64
        }
    }

    /// Stored errors, oldest first.
    pub fn contents(&self) -> Vec<bool> {
        let cap = self.bits.len();
        let start = (self.next + cap - self.count) % cap;
        (0..self.count).map(|k| self.bits[(start + k) % cap]).collect()
    }

    pub(crate) fn from_contents(capacity: usize, min_fill: usize, contents: &[bool]) -> Result<Self> {
        if capacity == 0 || contents.len() > capacity {
            return Err(Error::invalid("window contents exceed capacity"));
        }
        let mut w = Self::new(capacity, min_fill);
        for &b in contents {
            w.push(b);
        }
        Ok(w)
    }
}

impl FprEstimate for FprWindow {
    fn record(&mut self, false_positive: bool) {
        self.push(false_positive);
    }

    fn current(&self) -> Option<f64> {
        (self.count >= self.min_fill).then(|| self.estimate())
    }
}

/// Sigmoid surrogate `l(m) = 1 / (1 + exp(m))`, stable for large `|m|`.
pub fn sigmoid_loss(m: f64) -> f64 {
    if m >= 0.0 {
        let e = (-m).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + m.exp())
    }
}

/// `dl/dm = -l(m)^2 exp(m) = -l(m) (1 - l(m))`.
pub fn sigmoid_loss_slope(m: f64) -> f64 {
    let l = sigmoid_loss(m);
    -l * sigmoid_loss(-m)
}

/// Windowed multiplier update `γ (1 + β (p_fa - τ))` with both clamps applied.
pub fn windowed_gamma_update(gamma: f64, beta: f64, p_fa: f64, tau: f64, gamma_min: f64) -> f64 {
    let factor = (1.0 + beta * (p_fa - tau)).max(MIN_GAMMA_FACTOR);
    (gamma * factor).max(gamma_min)
}

/// A trainable score function `f(x)`.
pub trait Discriminant {
    fn dim_in(&self) -> usize;

    fn score(&self, x: &[f64]) -> f64;

    /// Same as [`Discriminant::score`] but may keep intermediates for the
    /// next [`Discriminant::descend`] call on the same `x`.
    fn score_cached(&mut self, x: &[f64]) -> f64 {
        self.score(x)
    }

    /// One SGD step: output weights move by `-eta (lambda w + mu slope grad_w)`,
    /// the bias by `-eta mu slope`, hidden parameters (if any and if
    /// `train_hidden`) by `-eta mu` times their loss gradient. `slope` is
    /// `l'(y f(x)) y`, evaluated before the step.
    fn descend(&mut self, x: &[f64], slope: f64, step: &StepSize, train_hidden: bool);
}

#[derive(Debug, Clone, Copy)]
pub struct StepSize {
    pub eta: f64,
    pub mu: f64,
    pub lambda: f64,
}

/// Full online learner state: discriminant plus the NP machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct NpState<M, W = FprWindow> {
    pub(crate) params: Hyperparams,
    pub(crate) seed: u64,
    pub(crate) model: M,
    pub(crate) gamma: f64,
    pub(crate) t: u64,
    pub(crate) n_pos: u64,
    pub(crate) n_neg: u64,
    pub(crate) eta: f64,
    pub(crate) beta: f64,
    pub(crate) window: W,
}

impl<M: Discriminant> NpState<M, FprWindow> {
    pub fn new(params: Hyperparams, seed: u64, model: M) -> Result<Self> {
        let window = FprWindow::new(params.window, params.min_fill());
        Self::with_estimator(params, seed, model, window)
    }
}

impl<M: Discriminant, W: FprEstimate> NpState<M, W> {
    /// Builds a fresh state around any false-positive estimator.
    pub fn with_estimator(params: Hyperparams, seed: u64, model: M, window: W) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            gamma: params.gamma1,
            eta: params.eta1,
            beta: params.beta1,
            params,
            seed,
            model,
            t: 0,
            n_pos: 0,
            n_neg: 0,
            window,
        })
    }

    pub fn params(&self) -> &Hyperparams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut M {
        &mut self.model
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn n_pos(&self) -> u64 {
        self.n_pos
    }

    pub fn n_neg(&self) -> u64 {
        self.n_neg
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn window(&self) -> &W {
        &self.window
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.model.score(x))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        self.forward(x).map(Label::from_score)
    }

    /// Cost weight of the current sample: `t / n+` for positives,
    /// `γ t / n-` for negatives. Counters include the current sample.
    pub fn mu(&self, y: Label) -> Result<f64> {
        let t = self.t as f64;
        match y {
            Label::Positive if self.n_pos > 0 => Ok(t / self.n_pos as f64),
            Label::Negative if self.n_neg > 0 => Ok(self.gamma * t / self.n_neg as f64),
            _ => Err(Error::Internal(format!("class counter for {y} is zero"))),
        }
    }

    /// Predict, then update on the revealed label. Returns the decision made
    /// before any parameter moved.
    pub fn step(&mut self, sample: &LabeledSample) -> Result<Label> {
        self.check_dim(&sample.x)?;
        let score = self.model.score_cached(&sample.x);
        let decision = Label::from_score(score);

        self.t += 1;
        match sample.y {
            Label::Positive => self.n_pos += 1,
            Label::Negative => {
                self.n_neg += 1;
                self.window.record(decision.is_positive());
            }
        }

        let mu = self.mu(sample.y)?;
        let y = sample.y.sign();
        let margin = y * score;
        let step = StepSize {
            eta: self.eta,
            mu,
            lambda: self.params.lambda,
        };
        self.model
            .descend(&sample.x, sigmoid_loss_slope(margin) * y, &step, self.params.train_hidden);

        if self.params.stochastic_gamma {
            let indicator = if sample.y == Label::Negative {
                self.t as f64 / self.n_neg as f64
            } else {
                0.0
            };
            let grad = indicator * sigmoid_loss(margin) - self.params.tau;
            self.gamma = (self.gamma + self.beta * grad).max(self.params.gamma_min);
        } else if sample.y == Label::Negative {
            if let Some(p_fa) = self.window.current() {
                self.gamma = windowed_gamma_update(
                    self.gamma,
                    self.beta,
                    p_fa,
                    self.params.tau,
                    self.params.gamma_min,
                );
            }
        }

        let decay = 1.0 / (1.0 + self.params.lambda * self.t as f64);
        self.eta = self.params.eta1 * decay;
        self.beta = self.params.beta1 * decay;
        Ok(decision)
    }

    /// Folds [`NpState::step`] over `stream`, logging every decision.
    pub fn run(&mut self, stream: &[LabeledSample]) -> Result<RunTrace> {
        let mut trace = RunTrace::with_capacity(stream.len());
        for (i, sample) in stream.iter().enumerate() {
            if sample.dim() != self.model.dim_in() {
                return Err(Error::invalid(format!(
                    "sample at index {i} has dimension {}, expected {}",
                    sample.dim(),
                    self.model.dim_in()
                )));
            }
            let decision = self.step(sample)?;
            trace.push(self.t, sample.y, decision);
        }
        Ok(trace)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.model.dim_in() {
            return Err(Error::invalid(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.model.dim_in()
            )));
        }
        Ok(())
    }
}
