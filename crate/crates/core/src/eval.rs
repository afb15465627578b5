//! Metrics and the experiment protocol.
//!
//! * [`RunTrace`] logs prequential decisions and yields time-accumulated FPR/TPR.
//! * [`np_score`] is `kappa max(fpr - tau, 0) + miss`, with `kappa = 1/tau` by default.
//! * [`roc_over_grid`] trains one model per target FPR and builds a [`RocCurve`].
//! * [`protocol_run`] repeats that over seeded permutations and aggregates
//!   mean and sample standard deviation per grid point.
//!
//! A `RocCurve` carries two areas. `auc` integrates achieved (FPR, TPR)
//! points; `auc_tfpr` integrates TPR against the target rate that produced
//! it. Summary records report the target-indexed area as `auc_*` and the
//! achieved-FPR area as `auc_fpr_*`. Both add `(0,0)` and `(1,1)` anchors.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{epoch_sequence, permute_and_split, stratified_folds, Dataset, Normalizer, NormalizerKind};
use crate::error::{Error, Result};
use crate::learner::{Discriminant, FprEstimate, Hyperparams, ModelKind, NpState};
use crate::sample::{Label, LabeledSample};
use crate::seed::{derive_seed, derive_seed2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub label: Label,
    pub decision: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: u64,
    pub fpr: Option<f64>,
    pub tpr: Option<f64>,
}

/// Per-step prequential decision log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTrace {
    records: Vec<StepRecord>,
}

impl RunTrace {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            records: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, step: u64, label: Label, decision: Label) {
        self.records.push(StepRecord {
            step,
            label,
            decision,
        });
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Accumulated FPR and TPR after every step.
    pub fn cumulative(&self) -> Vec<TracePoint> {
        let mut c = Counts::default();
        self.records
            .iter()
            .map(|r| {
                c.add(r.label, r.decision);
                TracePoint {
                    step: r.step,
                    fpr: c.fpr(),
                    tpr: c.tpr(),
                }
            })
            .collect()
    }

    pub fn final_rates(&self) -> Rates {
        rates_from_decisions(self.records.iter().map(|r| (r.label, r.decision)))
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    tp: u64,
    pos: u64,
    fp: u64,
    neg: u64,
}

impl Counts {
    fn add(&mut self, label: Label, decision: Label) {
        match label {
            Label::Positive => {
                self.pos += 1;
                self.tp += u64::from(decision.is_positive());
            }
            Label::Negative => {
                self.neg += 1;
                self.fp += u64::from(decision.is_positive());
            }
        }
    }

    fn fpr(&self) -> Option<f64> {
        (self.neg > 0).then(|| self.fp as f64 / self.neg as f64)
    }

    fn tpr(&self) -> Option<f64> {
        (self.pos > 0).then(|| self.tp as f64 / self.pos as f64)
    }
}

/// Empirical error rates; a rate is `None` when its class never appeared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub fpr: Option<f64>,
    pub tpr: Option<f64>,
    pub miss: Option<f64>,
    pub positives: u64,
    pub negatives: u64,
}

pub fn rates_from_decisions<I>(pairs: I) -> Rates
where
    I: IntoIterator<Item = (Label, Label)>,
{
    let mut c = Counts::default();
    for (label, decision) in pairs {
        c.add(label, decision);
    }
    let tpr = c.tpr();
    Rates {
        fpr: c.fpr(),
        tpr,
        miss: tpr.map(|t| 1.0 - t),
        positives: c.pos,
        negatives: c.neg,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpScoreParams {
    pub tau: f64,
    pub kappa: f64,
}

impl NpScoreParams {
    /// `kappa = 1 / tau`.
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            kappa: 1.0 / tau,
        }
    }

    pub fn with_kappa(tau: f64, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) {
            return Err(Error::invalid(format!("kappa must be >= 0, got {kappa}")));
        }
        Ok(Self { tau, kappa })
    }
}

/// `kappa max(fpr - tau, 0) + miss`; lower is better.
pub fn np_score(fpr: f64, miss: f64, params: &NpScoreParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&fpr) || !(0.0..=1.0).contains(&miss) {
        return Err(Error::invalid(format!(
            "rates must lie in [0, 1], got fpr={fpr}, miss={miss}"
        )));
    }
    Ok(params.kappa * (fpr - params.tau).max(0.0) + miss)
}

/// Anything that labels points.
pub trait Classifier {
    fn classify(&self, x: &[f64]) -> Label;
}

impl<M: Discriminant, W: FprEstimate> Classifier for NpState<M, W> {
    fn classify(&self, x: &[f64]) -> Label {
        Label::from_score(self.model().score(x))
    }
}

pub type BoxedClassifier = Box<dyn Classifier + Send + Sync>;

/// Produces a classifier for target rate `tau` from a training sequence.
pub trait Learner: Sync {
    fn fit(&self, train: &[LabeledSample], tau: f64, seed: u64) -> Result<BoxedClassifier>;
}

/// NP-NN or OLNP trained by a single pass over the given sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineLearner {
    pub kind: ModelKind,
    pub params: Hyperparams,
}

impl Learner for OnlineLearner {
    fn fit(&self, train: &[LabeledSample], tau: f64, seed: u64) -> Result<BoxedClassifier> {
        let params = Hyperparams {
            tau,
            ..self.params.clone()
        };
        Ok(match self.kind {
            ModelKind::Npnn => Box::new(crate::npnn::run_stream(&params, train, seed)?.0),
            ModelKind::Olnp => Box::new(crate::olnp::run_stream(&params, train, seed)?.0),
        })
    }
}

pub fn evaluate(model: &dyn Classifier, test: &[LabeledSample]) -> Rates {
    rates_from_decisions(test.iter().map(|s| (s.y, model.classify(&s.x))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub tfpr: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    /// Area under achieved (FPR, TPR).
    pub auc: f64,
    /// Area under (target FPR, TPR).
    pub auc_tfpr: f64,
}

impl RocCurve {
    pub fn from_points(points: Vec<RocPoint>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].tfpr >= w[1].tfpr) {
            return Err(Error::invalid("target rates must be strictly increasing"));
        }
        let achieved: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
        let targeted: Vec<(f64, f64)> = points.iter().map(|p| (p.tfpr, p.tpr)).collect();
        Ok(Self {
            auc: anchored_auc(&achieved),
            auc_tfpr: anchored_auc(&targeted),
            points,
        })
    }
}

/// Trapezoid area under `(x, y)` points augmented with `(0,0)` and `(1,1)`,
/// sorted by `x` then `y`.
pub fn anchored_auc(points: &[(f64, f64)]) -> f64 {
    let mut pts = Vec::with_capacity(points.len() + 2);
    pts.push((0.0, 0.0));
    pts.extend_from_slice(points);
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("target rate grid is empty"));
    }
    if grid.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::invalid("target rates must lie in (0, 1)"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("target rate grid must be strictly increasing"));
    }
    Ok(())
}

/// One train/test split.
#[derive(Debug, Clone)]
pub struct Split {
    pub name: String,
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

impl Split {
    fn check(&self) -> Result<()> {
        let has = |v: &[LabeledSample], l: Label| v.iter().any(|s| s.y == l);
        if !has(&self.train, Label::Positive) || !has(&self.train, Label::Negative) {
            return Err(Error::Protocol(format!(
                "fold `{}`: training part lacks a class",
                self.name
            )));
        }
        if self.test.is_empty() {
            return Err(Error::Protocol(format!("fold `{}`: test part is empty", self.name)));
        }
        Ok(())
    }
}

/// Model seed for a grid point, keyed by the target rate itself.
pub fn grid_seed(seed: u64, tau: f64) -> u64 {
    derive_seed(seed, "model", tau.to_bits())
}

/// Outcome of one grid point on one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub tau: f64,
    pub rates: Rates,
}

/// Builds a curve from per-point outcomes; `None` if any point lacks a rate.
pub fn curve_from_outcomes(outcomes: &[GridOutcome]) -> Option<RocCurve> {
    let points = outcomes
        .iter()
        .map(|o| {
            Some(RocPoint {
                tfpr: o.tau,
                fpr: o.rates.fpr?,
                tpr: o.rates.tpr?,
            })
        })
        .collect::<Option<Vec<_>>>()?;
    RocCurve::from_points(points).ok()
}

/// Trains one model per target rate on `split.train`, evaluates on `split.test`.
pub fn roc_over_grid<L: Learner + ?Sized>(
    learner: &L,
    split: &Split,
    grid: &[f64],
    seed: u64,
) -> Result<RocCurve> {
    validate_grid(grid)?;
    split.check()?;
    let outcomes = grid
        .iter()
        .map(|&tau| {
            let model = learner.fit(&split.train, tau, grid_seed(seed, tau))?;
            Ok(GridOutcome {
                tau,
                rates: evaluate(model.as_ref(), &split.test),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    curve_from_outcomes(&outcomes).ok_or_else(|| {
        Error::Protocol(format!("fold `{}`: test part lacks a class", split.name))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub permutations: usize,
    pub train_fraction: f64,
    pub epochs: usize,
    pub tfpr_grid: Vec<f64>,
    pub seed: u64,
    pub normalization: NormalizerKind,
    /// `None` uses `1 / tau`.
    pub kappa: Option<f64>,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            permutations: 15,
            train_fraction: 0.75,
            epochs: 1,
            tfpr_grid: vec![0.05, 0.1, 0.2, 0.3, 0.4],
            seed: 0,
            normalization: NormalizerKind::None,
            kappa: None,
            workers: None,
        }
    }
}

impl ProtocolConfig {
    fn validate(&self) -> Result<()> {
        if self.permutations == 0 {
            return Err(Error::invalid("permutations must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        validate_grid(&self.tfpr_grid)
    }

    fn score_params(&self, tau: f64) -> Result<NpScoreParams> {
        match self.kappa {
            Some(k) => NpScoreParams::with_kappa(tau, k),
            None => Ok(NpScoreParams::new(tau)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub permutation: usize,
    pub outcomes: Vec<GridOutcome>,
    pub np_scores: Vec<Option<f64>>,
    pub curve: Option<RocCurve>,
    /// Hyperparameters picked by cross-validation, per grid point.
    pub selected: Vec<Option<CvChoice>>,
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub dataset: String,
    pub tau: f64,
    pub tpr_mean: Option<f64>,
    pub tpr_std: Option<f64>,
    pub fpr_mean: Option<f64>,
    pub fpr_std: Option<f64>,
    pub npscore_mean: Option<f64>,
    pub npscore_std: Option<f64>,
    pub auc_mean: Option<f64>,
    pub auc_std: Option<f64>,
    pub auc_fpr_mean: Option<f64>,
    pub auc_fpr_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub dataset: String,
    pub records: Vec<SummaryRecord>,
    pub permutations: Vec<PermutationResult>,
}

/// Mean and sample standard deviation of the present values; std is 0 for a
/// single value.
pub fn mean_std<I: IntoIterator<Item = Option<f64>>>(values: I) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() < 2 {
        0.0
    } else {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

/// Inputs handed to the per-job fitting routine.
pub struct JobInput<'a> {
    pub permutation: usize,
    pub tau: f64,
    /// Normalized training fold, original length.
    pub train: &'a [LabeledSample],
    /// Training sequence after epoch concatenation.
    pub train_seq: &'a [LabeledSample],
    pub seed: u64,
}

type FitFn<'a> = dyn Fn(&JobInput<'_>) -> Result<(BoxedClassifier, Option<CvChoice>)> + Sync + 'a;

struct PreparedPermutation {
    train: Vec<LabeledSample>,
    train_seq: Vec<LabeledSample>,
    test: Vec<LabeledSample>,
}

fn prepare(ds: &Dataset, cfg: &ProtocolConfig, p: usize) -> Result<PreparedPermutation> {
    let (train, test) = permute_and_split(ds, derive_seed(cfg.seed, "perm", p as u64), cfg.train_fraction)?;
    let split = Split {
        name: format!("permutation {p}"),
        train: train.into_samples(),
        test: test.into_samples(),
    };
    split.check()?;
    let norm = Normalizer::fit(cfg.normalization, &split.train);
    let train = norm.apply_all(&split.train);
    let test = norm.apply_all(&split.test);
    let train_seq = epoch_sequence(&train, cfg.epochs, derive_seed(cfg.seed, "epochs", p as u64));
    Ok(PreparedPermutation {
        train,
        train_seq,
        test,
    })
}

/// Runs `f` on a dedicated pool of `workers` threads, or inline on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn run_protocol(ds: &Dataset, cfg: &ProtocolConfig, fit: &FitFn<'_>) -> Result<ProtocolSummary> {
    cfg.validate()?;
    if ds.n_pos() == 0 || ds.n_neg() == 0 {
        return Err(Error::Protocol(format!(
            "dataset `{}` must contain both classes",
            ds.provenance()
        )));
    }
    let prepared = (0..cfg.permutations)
        .map(|p| prepare(ds, cfg, p))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.permutations)
        .flat_map(|p| (0..cfg.tfpr_grid.len()).map(move |g| (p, g)))
        .collect();

    let results = with_workers(cfg.workers, || {
        jobs.par_iter()
            .map(|&(p, g)| {
                let tau = cfg.tfpr_grid[g];
                let prep = &prepared[p];
                let input = JobInput {
                    permutation: p,
                    tau,
                    train: &prep.train,
                    train_seq: &prep.train_seq,
                    seed: derive_seed2(cfg.seed, "model", p as u64, tau.to_bits()),
                };
                let (model, choice) = fit(&input)?;
                Ok((
                    GridOutcome {
                        tau,
                        rates: evaluate(model.as_ref(), &prep.test),
                    },
                    choice,
                ))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut perms = Vec::with_capacity(cfg.permutations);
    for (p, chunk) in results.chunks(cfg.tfpr_grid.len()).enumerate() {
        let outcomes: Vec<GridOutcome> = chunk.iter().map(|(o, _)| *o).collect();
        let np_scores = outcomes
            .iter()
            .map(|o| {
                let (fpr, miss) = (o.rates.fpr?, o.rates.miss?);
                np_score(fpr, miss, &cfg.score_params(o.tau).ok()?).ok()
            })
            .collect();
        perms.push(PermutationResult {
            permutation: p,
            curve: curve_from_outcomes(&outcomes),
            outcomes,
            np_scores,
            selected: chunk.iter().map(|(_, c)| *c).collect(),
        });
    }

    let records = cfg
        .tfpr_grid
        .iter()
        .enumerate()
        .map(|(g, &tau)| {
            let (tpr_mean, tpr_std) = mean_std(perms.iter().map(|r| r.outcomes[g].rates.tpr));
            let (fpr_mean, fpr_std) = mean_std(perms.iter().map(|r| r.outcomes[g].rates.fpr));
            let (npscore_mean, npscore_std) = mean_std(perms.iter().map(|r| r.np_scores[g]));
            let (auc_mean, auc_std) = mean_std(perms.iter().map(|r| r.curve.as_ref().map(|c| c.auc_tfpr)));
            let (auc_fpr_mean, auc_fpr_std) = mean_std(perms.iter().map(|r| r.curve.as_ref().map(|c| c.auc)));
            SummaryRecord {
                dataset: ds.provenance().to_string(),
                tau,
                tpr_mean,
                tpr_std,
                fpr_mean,
                fpr_std,
                npscore_mean,
                npscore_std,
                auc_mean,
                auc_std,
                auc_fpr_mean,
                auc_fpr_std,
            }
        })
        .collect();

    Ok(ProtocolSummary {
        dataset: ds.provenance().to_string(),
        records,
        permutations: perms,
    })
}

/// Permutation/split/grid protocol with fixed learner hyperparameters.
pub fn protocol_run<L: Learner + ?Sized>(
    ds: &Dataset,
    cfg: &ProtocolConfig,
    learner: &L,
) -> Result<ProtocolSummary> {
    run_protocol(ds, cfg, &|job: &JobInput<'_>| {
        Ok((learner.fit(job.train_seq, job.tau, job.seed)?, None))
    })
}

/// Same protocol, but `(g, D)` is chosen per permutation and grid point by
/// cross-validation on the training fold.
pub fn protocol_run_tuned(
    ds: &Dataset,
    cfg: &ProtocolConfig,
    base: &OnlineLearner,
    cv: &CvConfig,
) -> Result<ProtocolSummary> {
    run_protocol(ds, cfg, &|job: &JobInput<'_>| {
        let cv_cfg = CvConfig {
            seed: derive_seed2(cv.seed, "cv", job.permutation as u64, job.tau.to_bits()),
            ..cv.clone()
        };
        // Folds are already normalized by the permutation's normalizer.
        let report = cross_validate(job.train, base, job.tau, &cv_cfg, NormalizerKind::None, cfg.kappa)?;
        let tuned = report.best.apply(base);
        Ok((tuned.fit(job.train_seq, job.tau, job.seed)?, Some(report.best)))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub bandwidths: Vec<f64>,
    /// Hidden widths as multiples of the input dimension.
    pub width_multipliers: Vec<usize>,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 3,
            bandwidths: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0],
            width_multipliers: vec![2, 5, 10, 20, 40, 80, 100],
            epochs: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvChoice {
    pub bandwidth: f64,
    pub pairs: usize,
}

impl CvChoice {
    pub fn apply(&self, base: &OnlineLearner) -> OnlineLearner {
        OnlineLearner {
            kind: base.kind,
            params: Hyperparams {
                bandwidth: self.bandwidth,
                pairs: self.pairs,
                ..base.params.clone()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub bandwidth: f64,
    pub pairs: usize,
    pub mean_np_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub tau: f64,
    pub rows: Vec<CvRow>,
    pub best: CvChoice,
}

/// k-fold grid search over `(g, D)` minimizing mean validation NP-score.
/// Ties go to the smaller `D`, then the smaller `g`.
pub fn cross_validate(
    samples: &[LabeledSample],
    base: &OnlineLearner,
    tau: f64,
    cv: &CvConfig,
    normalization: NormalizerKind,
    kappa: Option<f64>,
) -> Result<CvReport> {
    if cv.folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if cv.bandwidths.is_empty() || cv.width_multipliers.is_empty() {
        return Err(Error::invalid("cross-validation grids must be nonempty"));
    }
    let dim = samples.first().map_or(0, LabeledSample::dim);
    let score_params = match kappa {
        Some(k) => NpScoreParams::with_kappa(tau, k)?,
        None => NpScoreParams::new(tau),
    };
    let folds = stratified_folds(samples, cv.folds, cv.seed);
    let splits = folds
        .iter()
        .enumerate()
        .map(|(k, held)| {
            let mut in_held = vec![false; samples.len()];
            held.iter().for_each(|&i| in_held[i] = true);
            let raw_train: Vec<LabeledSample> = samples
                .iter()
                .zip(&in_held)
                .filter(|(_, h)| !**h)
                .map(|(s, _)| s.clone())
                .collect();
            let split = Split {
                name: format!("cv fold {k}"),
                train: raw_train,
                test: held.iter().map(|&i| samples[i].clone()).collect(),
            };
            split.check()?;
            let norm = Normalizer::fit(normalization, &split.train);
            let train = norm.apply_all(&split.train);
            Ok(Split {
                name: split.name,
                train: epoch_sequence(&train, cv.epochs, derive_seed(cv.seed, "cv-epochs", k as u64)),
                test: norm.apply_all(&split.test),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut candidates: Vec<CvChoice> = cv
        .width_multipliers
        .iter()
        .flat_map(|&m| {
            cv.bandwidths.iter().map(move |&g| CvChoice {
                bandwidth: g,
                pairs: m * dim,
            })
        })
        .collect();
    candidates.sort_by(|a, b| a.pairs.cmp(&b.pairs).then(a.bandwidth.total_cmp(&b.bandwidth)));
    candidates.dedup();

    let rows = candidates
        .par_iter()
        .map(|choice| {
            let learner = choice.apply(base);
            let scores = splits
                .iter()
                .enumerate()
                .map(|(k, split)| {
                    let model = learner.fit(&split.train, tau, derive_seed(cv.seed, "cv-model", k as u64))?;
                    let r = evaluate(model.as_ref(), &split.test);
                    Ok(match (r.fpr, r.miss) {
                        (Some(f), Some(m)) => Some(np_score(f, m, &score_params)?),
                        _ => None,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CvRow {
                bandwidth: choice.bandwidth,
                pairs: choice.pairs,
                mean_np_score: mean_std(scores).0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // rows are ordered by (pairs, bandwidth), so the first minimum wins ties
    let best = rows
        .iter()
        .filter_map(|r| r.mean_np_score.map(|s| (s, r)))
        .fold(None::<(f64, &CvRow)>, |acc, (s, r)| match acc {
            Some((bs, _)) if bs <= s => acc,
            _ => Some((s, r)),
        })
        .map(|(_, r)| CvChoice {
            bandwidth: r.bandwidth,
            pairs: r.pairs,
        })
        .ok_or_else(|| Error::Protocol("no cross-validation candidate produced a score".into()))?;
    Ok(CvReport { tau, rows, best })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "dataset",
    "tau",
    "tpr_mean",
    "tpr_std",
    "fpr_mean",
    "fpr_std",
    "npscore_mean",
    "npscore_std",
    "auc_mean",
    "auc_std",
    "auc_fpr_mean",
    "auc_fpr_std",
];

/// Tab-separated summary, one header row then one row per grid point.
pub fn format_summary(records: &[SummaryRecord]) -> String {
    let mut out = SUMMARY_COLUMNS.join("\t");
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.dataset,
            r.tau,
            opt(r.tpr_mean),
            opt(r.tpr_std),
            opt(r.fpr_mean),
            opt(r.fpr_std),
            opt(r.npscore_mean),
            opt(r.npscore_std),
            opt(r.auc_mean),
            opt(r.auc_std),
            opt(r.auc_fpr_mean),
            opt(r.auc_fpr_std),
        );
    }
    out
}

/// `step cum_fpr cum_tpr` rows, keeping every `every`-th step and the last.
pub fn format_trace(trace: &RunTrace, every: usize) -> String {
    let every = every.max(1);
    let points = trace.cumulative();
    let mut out = String::from("step\tcum_fpr\tcum_tpr\n");
    let last = points.len().saturating_sub(1);
    for (i, p) in points.iter().enumerate() {
        if (i + 1) % every == 0 || i == last {
            let _ = writeln!(out, "{}\t{}\t{}", p.step, opt(p.fpr), opt(p.tpr));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use Label::{Negative as N, Positive as P};

    #[test]
    fn np_score_values() {
        let p = NpScoreParams::with_kappa(0.05, 20.0).unwrap();
        assert!((np_score(0.1, 0.2, &p).unwrap() - 1.2).abs() < 1e-12);
        assert_eq!(np_score(0.03, 0.37, &p).unwrap(), 0.37);
        assert_eq!(np_score(0.05, 0.37, &p).unwrap(), 0.37);
        let a = np_score(0.3, 0.0, &NpScoreParams::new(0.2)).unwrap();
        let b = np_score(0.003, 0.0, &NpScoreParams::new(0.002)).unwrap();
        assert!((a - 0.5).abs() < 1e-12);
        assert!((b - 0.5).abs() < 1e-12);
        assert!(np_score(1.1, 0.0, &p).is_err());
        assert!(np_score(0.1, -0.1, &p).is_err());
        assert!(NpScoreParams::with_kappa(0.1, -1.0).is_err());
    }

    #[test]
    fn rates_examples() {
        let all = rates_from_decisions([(P, P), (N, N), (P, P)]);
        assert_eq!((all.fpr, all.tpr, all.miss), (Some(0.0), Some(1.0), Some(0.0)));
        let r = rates_from_decisions([(N, P), (N, N), (P, P), (P, N)]);
        assert_eq!((r.fpr, r.tpr), (Some(0.5), Some(0.5)));
        let one = rates_from_decisions([(N, P), (N, N)]);
        assert_eq!(one.tpr, None);
        assert_eq!(one.miss, None);
        assert_eq!(one.fpr, Some(0.5));
    }

    #[test]
    fn cumulative_trace_absent_until_class_seen() {
        let mut t = RunTrace::default();
        t.push(1, N, P);
        t.push(2, N, N);
        t.push(3, P, P);
        let c = t.cumulative();
        assert_eq!(c[0].fpr, Some(1.0));
        assert_eq!(c[0].tpr, None);
        assert_eq!(c[1].fpr, Some(0.5));
        assert_eq!(c[2].tpr, Some(1.0));
        assert_eq!(format_trace(&t, 2), "step\tcum_fpr\tcum_tpr\n2\t0.500000\tNA\n3\t0.500000\t1.000000\n");
    }

    #[test]
    fn auc_with_anchors() {
        let single = RocCurve::from_points(vec![RocPoint { tfpr: 0.1, fpr: 0.1, tpr: 0.6 }]).unwrap();
        // (0,0) (0.1,0.6) (1,1): 0.03 + 0.72
        assert!((single.auc - 0.75).abs() < 1e-12);
        let perfect = RocCurve::from_points(vec![
            RocPoint { tfpr: 0.05, fpr: 0.0, tpr: 1.0 },
            RocPoint { tfpr: 0.1, fpr: 0.0, tpr: 1.0 },
        ])
        .unwrap();
        assert_eq!(perfect.auc, 1.0);
        assert!(RocCurve::from_points(vec![
            RocPoint { tfpr: 0.2, fpr: 0.0, tpr: 1.0 },
            RocPoint { tfpr: 0.1, fpr: 0.0, tpr: 1.0 },
        ])
        .is_err());
        assert!((anchored_auc(&[]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn auc_ignores_duplicated_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mut pts: Vec<(f64, f64)> = (0..5).map(|_| (rng.random(), rng.random())).collect();
            let base = anchored_auc(&pts);
            let k = rng.random_range(0..pts.len());
            pts.push(pts[k]);
            assert!((anchored_auc(&pts) - base).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[]).is_err());
        assert!(validate_grid(&[0.1, 0.1]).is_err());
        assert!(validate_grid(&[0.0, 0.1]).is_err());
        assert!(validate_grid(&[0.05, 0.1, 0.2, 0.3, 0.4]).is_ok());
    }

    #[test]
    fn mean_std_single_value() {
        assert_eq!(mean_std([Some(0.3)]), (Some(0.3), Some(0.0)));
        assert_eq!(mean_std([None, None]), (None, None));
        let (m, s) = mean_std([Some(1.0), Some(3.0), None]);
        assert_eq!(m, Some(2.0));
        assert!((s.unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn np_score_monotone(f1 in 0.0..1.0f64, f2 in 0.0..1.0f64, m1 in 0.0..1.0f64, m2 in 0.0..1.0f64, tau in 0.001..0.999f64) {
                let p = NpScoreParams::new(tau);
                let (flo, fhi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
                let (mlo, mhi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
                prop_assert!(np_score(flo, mlo, &p).unwrap() <= np_score(fhi, mlo, &p).unwrap());
                prop_assert!(np_score(flo, mlo, &p).unwrap() <= np_score(flo, mhi, &p).unwrap());
            }

            #[test]
            fn cumulative_matches_prefix_counts(bits in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
                let mut t = RunTrace::default();
                let as_label = |b: bool| if b { P } else { N };
                for (i, (l, d)) in bits.iter().enumerate() {
                    t.push(i as u64 + 1, as_label(*l), as_label(*d));
                }
                for (k, point) in t.cumulative().iter().enumerate() {
                    let r = rates_from_decisions(bits[..=k].iter().map(|(l, d)| (as_label(*l), as_label(*d))));
                    prop_assert_eq!(point.fpr, r.fpr);
                    prop_assert_eq!(point.tpr, r.tpr);
                }
            }
        }
    }
}
