//! Datasets: loading, normalization, permutation/splitting and synthetic
//! generators with analytic oracles.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::sample::{Label, LabeledSample};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    dim: usize,
    provenance: String,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, provenance: impl Into<String>) -> Result<Self> {
        let dim = samples.first().map_or(0, LabeledSample::dim);
        if let Some(i) = samples.iter().position(|s| s.dim() != dim) {
            return Err(Error::Schema(format!(
                "sample {i} has dimension {}, expected {dim}",
                samples[i].dim()
            )));
        }
        Ok(Self {
            samples,
            dim,
            provenance: provenance.into(),
        })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample> {
        self.samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn n_pos(&self) -> usize {
        self.samples.iter().filter(|s| s.y.is_positive()).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    /// Flips labels if needed so that the smaller class is the positive one.
    pub fn with_minority_positive(mut self) -> Self {
        if self.n_pos() > self.n_neg() {
            for s in &mut self.samples {
                s.y = s.y.flipped();
            }
        }
        self
    }

    pub fn subset(&self, indices: &[usize], provenance: impl Into<String>) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            dim: self.dim,
            provenance: provenance.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizerKind {
    None,
    ZScore,
    UnitNorm,
}

impl NormalizerKind {
    pub fn name(self) -> &'static str {
        match self {
            NormalizerKind::None => "none",
            NormalizerKind::ZScore => "zscore",
            NormalizerKind::UnitNorm => "unitnorm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(NormalizerKind::None),
            "zscore" => Some(NormalizerKind::ZScore),
            "unitnorm" => Some(NormalizerKind::UnitNorm),
            _ => None,
        }
    }
}

/// Feature scaling fitted on a training fold and applied frozen elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub enum Normalizer {
    Identity,
    /// Per-feature mean and population standard deviation.
    ZScore { mean: Vec<f64>, std: Vec<f64> },
    UnitNorm,
}

impl Normalizer {
    pub fn fit(kind: NormalizerKind, samples: &[LabeledSample]) -> Self {
        match kind {
            NormalizerKind::None => Normalizer::Identity,
            NormalizerKind::UnitNorm => Normalizer::UnitNorm,
            NormalizerKind::ZScore => {
                let d = samples.first().map_or(0, LabeledSample::dim);
                let n = samples.len().max(1) as f64;
                let mut mean = vec![0.0; d];
                for s in samples {
                    for (m, v) in mean.iter_mut().zip(&s.x) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; d];
                for s in samples {
                    for ((acc, v), m) in var.iter_mut().zip(&s.x).zip(&mean) {
                        *acc += (v - m) * (v - m);
                    }
                }
                let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
                Normalizer::ZScore { mean, std }
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Normalizer::Identity => x.to_vec(),
            Normalizer::UnitNorm => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    x.iter().map(|v| v / norm).collect()
                } else {
                    x.to_vec()
                }
            }
            Normalizer::ZScore { mean, std } => x
                .iter()
                .zip(mean.iter().zip(std))
                .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
                .collect(),
        }
    }

    pub fn apply_all(&self, samples: &[LabeledSample]) -> Vec<LabeledSample> {
        samples
            .iter()
            .map(|s| LabeledSample {
                x: self.apply(&s.x),
                y: s.y,
            })
            .collect()
    }
}

/// Which column carries the label in a delimited file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    First,
    Last,
    Index(usize),
}

impl LabelColumn {
    fn resolve(self, ncols: usize) -> Option<usize> {
        match self {
            LabelColumn::First => (ncols > 0).then_some(0),
            LabelColumn::Last => ncols.checked_sub(1),
            LabelColumn::Index(i) => (i < ncols).then_some(i),
        }
    }
}

fn parse_label(token: &str, line: usize) -> Result<Label> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("label `{token}` is not numeric")))?;
    if v == 1.0 {
        Ok(Label::Positive)
    } else if v == -1.0 || v == 0.0 {
        Ok(Label::Negative)
    } else {
        Err(Error::parse(line, format!("label `{token}` is not one of -1, 0, +1")))
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses delimited text. Blank lines and lines starting with `#` are skipped.
pub fn parse_delimited(
    text: &str,
    label_column: LabelColumn,
    delimiter: char,
    header: bool,
    provenance: &str,
) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut dim: Option<usize> = None;
    let mut skipped_header = !header;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !skipped_header {
            skipped_header = true;
            continue;
        }
        let cells: Vec<&str> = line.split(delimiter).map(str::trim).collect();
        let label_at = label_column
            .resolve(cells.len())
            .ok_or_else(|| Error::parse(line_no, "label column out of range"))?;
        let y = parse_label(cells[label_at], line_no)?;
        let x = cells
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != label_at)
            .map(|(j, c)| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(line_no, format!("column {} value `{c}` is not a finite number", j + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(x.len()),
            Some(d) if d != x.len() => {
                return Err(Error::Schema(format!(
                    "line {line_no} has {} features, expected {d}",
                    x.len()
                )))
            }
            _ => {}
        }
        samples.push(LabeledSample { x, y });
    }
    Dataset::new(samples, provenance)
}

pub fn load_delimited(
    path: impl AsRef<Path>,
    label_column: LabelColumn,
    delimiter: char,
    header: bool,
) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_delimited(&text, label_column, delimiter, header, &path.display().to_string())
}

/// Parses `label idx:value ...` lines with 1-based strictly increasing indices.
pub fn parse_sparse(text: &str, provenance: &str) -> Result<Dataset> {
    let mut rows: Vec<(Vec<(usize, f64)>, Label)> = Vec::new();
    let mut dim = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let y = parse_label(tokens.next().unwrap_or_default(), line_no)?;
        let mut entries = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(line_no, format!("token `{tok}` is not index:value")))?;
            let i: usize = i
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad feature index `{i}`")))?;
            if i == 0 {
                return Err(Error::parse(line_no, "feature indices are 1-based"));
            }
            if i <= last {
                return Err(Error::parse(
                    line_no,
                    format!("feature index {i} does not increase (previous {last})"),
                ));
            }
            let v: f64 = v
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(line_no, format!("bad feature value `{v}`")))?;
            last = i;
            entries.push((i, v));
        }
        dim = dim.max(last);
        rows.push((entries, y));
    }
    let samples = rows
        .into_iter()
        .map(|(entries, y)| {
            let mut x = vec![0.0; dim];
            for (i, v) in entries {
                x[i - 1] = v;
            }
            LabeledSample { x, y }
        })
        .collect();
    Dataset::new(samples, provenance)
}

pub fn load_sparse(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_sparse(&text, &path.display().to_string())
}

/// Canonical delimited form: features then label (`1` / `-1`), one row per line.
pub fn format_delimited(ds: &Dataset, delimiter: char) -> String {
    let mut out = String::new();
    for s in ds.samples() {
        for v in &s.x {
            let _ = write!(out, "{v:?}{delimiter}");
        }
        let _ = writeln!(out, "{}", if s.y.is_positive() { "1" } else { "-1" });
    }
    out
}

/// Canonical sparse form: nonzero features only.
pub fn format_sparse(ds: &Dataset) -> String {
    let mut out = String::new();
    for s in ds.samples() {
        out.push_str(if s.y.is_positive() { "+1" } else { "-1" });
        for (j, v) in s.x.iter().enumerate() {
            if *v != 0.0 {
                let _ = write!(out, " {}:{v:?}", j + 1);
            }
        }
        out.push('\n');
    }
    out
}

/// Seeded uniform permutation; the first `ceil(fraction * N)` go to training.
pub fn permute_and_split(ds: &Dataset, seed: u64, train_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let order = permutation(ds.len(), seed);
    let n_train = ((train_fraction * ds.len() as f64).ceil() as usize).min(ds.len());
    let train = ds.subset(&order[..n_train], format!("{}#train", ds.provenance()));
    let test = ds.subset(&order[n_train..], format!("{}#test", ds.provenance()));
    Ok((train, test))
}

pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Training sequence for multi-epoch SGD: the original order followed by
/// `epochs - 1` freshly shuffled copies.
pub fn epoch_sequence(samples: &[LabeledSample], epochs: usize, seed: u64) -> Vec<LabeledSample> {
    let mut seq = Vec::with_capacity(samples.len() * epochs.max(1));
    seq.extend_from_slice(samples);
    for e in 1..epochs {
        let order = permutation(samples.len(), crate::seed::derive_seed(seed, "epoch", e as u64));
        seq.extend(order.into_iter().map(|i| samples[i].clone()));
    }
    seq
}

/// Random stratified folds: each class is shuffled and dealt round-robin.
pub fn stratified_folds(samples: &[LabeledSample], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k.max(1)];
    let mut pos: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].y.is_positive()).collect();
    let mut neg: Vec<usize> = (0..samples.len()).filter(|&i| !samples[i].y.is_positive()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    for (j, i) in pos.into_iter().chain(neg).enumerate() {
        folds[j % k.max(1)].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub fn normal_cdf(z: f64) -> f64 {
    standard_normal().cdf(z)
}

pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

/// Analytic NP test for two unit-covariance Gaussians with means `±(sep/2) e1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoGaussianOracle {
    pub separation: f64,
}

impl TwoGaussianOracle {
    /// Threshold on `x1` at the `(1 - tau)` quantile of the negative class.
    pub fn threshold(&self, tau: f64) -> f64 {
        -self.separation / 2.0 + normal_quantile(1.0 - tau)
    }

    /// Power of the optimal test, `Phi(Phi^-1(tau) + sep)`.
    pub fn tpr(&self, tau: f64) -> f64 {
        normal_cdf(normal_quantile(tau) + self.separation)
    }

    pub fn decide(&self, tau: f64, x: &[f64]) -> Label {
        Label::from_score(x[0] - self.threshold(tau))
    }
}

fn balanced_labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<Label> {
    let mut labels: Vec<Label> = (0..n)
        .map(|i| if i < n / 2 { Label::Positive } else { Label::Negative })
        .collect();
    labels.shuffle(rng);
    labels
}

/// Balanced two-Gaussian data with identity covariance and means `±(sep/2) e1`.
pub fn gen_two_gaussians(
    n: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> Result<(Dataset, TwoGaussianOracle)> {
    if n < 2 || d == 0 {
        return Err(Error::invalid("two-Gaussian generator needs n >= 2 and d >= 1"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!("separation must be positive, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = balanced_labels(n, &mut rng);
    let samples = labels
        .into_iter()
        .map(|y| {
            let mut x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            x[0] += y.sign() * separation / 2.0;
            LabeledSample { x, y }
        })
        .collect();
    let ds = Dataset::new(samples, format!("two_gaussians(n={n},d={d},sep={separation},seed={seed})"))?;
    Ok((ds, TwoGaussianOracle { separation }))
}

/// Balanced 2-d ring: positives fill the inner disk, negatives the annulus
/// between the two radii; radii get Gaussian noise.
pub fn gen_ring(n: usize, inner: f64, outer: f64, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("ring generator needs n >= 1"));
    }
    if !(inner > 0.0 && outer > inner && outer.is_finite()) {
        return Err(Error::invalid(format!(
            "ring radii must satisfy 0 < inner < outer, got {inner}, {outer}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid("ring noise must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = balanced_labels(n, &mut rng);
    let samples = labels
        .into_iter()
        .map(|y| {
            let u: f64 = rng.random();
            let r = match y {
                Label::Positive => inner * u.sqrt(),
                Label::Negative => (inner * inner + u * (outer * outer - inner * inner)).sqrt(),
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            let r = r + noise * z;
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            LabeledSample {
                x: vec![r * theta.cos(), r * theta.sin()],
                y,
            }
        })
        .collect();
    Dataset::new(samples, format!("ring(n={n},inner={inner},outer={outer},noise={noise},seed={seed})"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delimited_basic() {
        let ds = parse_delimited("1,2,+1\n3,4,-1\n5,6,+1\n", LabelColumn::Last, ',', false, "t").unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.n_pos(), 2);
        assert_eq!(ds.n_neg(), 1);
        assert_eq!(ds.samples()[1].x, vec![3.0, 4.0]);
    }

    #[test]
    fn delimited_bad_cell_cites_line() {
        let err = parse_delimited("1,2,1\n3,x,-1\n", LabelColumn::Last, ',', false, "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn delimited_zero_one_labels() {
        let ds = parse_delimited("0;1;0\n1;1;1\n1;0;0\n", LabelColumn::Last, ';', false, "t").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.n_neg(), 2);
        assert_eq!(ds.n_pos(), 1);
    }

    #[test]
    fn delimited_header_and_label_first() {
        let ds = parse_delimited("y,a,b\n-1,0.5,2\n1,1,1\n", LabelColumn::First, ',', true, "t").unwrap();
        assert_eq!(ds.samples()[0].x, vec![0.5, 2.0]);
        assert_eq!(ds.samples()[0].y, Label::Negative);
    }

    #[test]
    fn delimited_mixed_dimensions() {
        let err = parse_delimited("1,2,1\n3,-1\n", LabelColumn::Last, ',', false, "t").unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn sparse_lines() {
        let ds = parse_sparse("+1 1:0.5 3:2.0\n-1\n", "t").unwrap();
        assert_eq!(ds.samples()[0].x, vec![0.5, 0.0, 2.0]);
        assert_eq!(ds.samples()[0].y, Label::Positive);
        assert_eq!(ds.samples()[1].x, vec![0.0; 3]);
        assert_eq!(ds.samples()[1].y, Label::Negative);
    }

    #[test]
    fn sparse_rejects_bad_indices() {
        assert!(matches!(parse_sparse("1 1:1 1:2\n", "t"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_sparse("1 1:1\n-1 0:2\n", "t"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_sparse("1 3:1 2:2\n", "t"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn minority_becomes_positive() {
        let ds = parse_delimited("1,1\n2,1\n3,-1\n", LabelColumn::Last, ',', false, "t").unwrap();
        let ds = ds.with_minority_positive();
        assert_eq!(ds.n_pos(), 1);
        assert_eq!(ds.samples()[2].y, Label::Positive);
    }

    #[test]
    fn zscore_standardizes_fitting_set() {
        let (ds, _) = gen_two_gaussians(500, 3, 2.0, 4).unwrap();
        let mut samples = ds.into_samples();
        for s in &mut samples {
            s.x[1] = s.x[1] * 7.0 + 3.0;
            s.x[2] = 5.0;
        }
        let norm = Normalizer::fit(NormalizerKind::ZScore, &samples);
        let out = norm.apply_all(&samples);
        let n = out.len() as f64;
        for j in 0..2 {
            let m = out.iter().map(|s| s.x[j]).sum::<f64>() / n;
            let v = out.iter().map(|s| (s.x[j] - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 1e-9);
            assert!((v.sqrt() - 1.0).abs() < 1e-9);
        }
        assert!(out.iter().all(|s| s.x[2] == 0.0));
    }

    #[test]
    fn unitnorm_rows() {
        let norm = Normalizer::fit(NormalizerKind::UnitNorm, &[]);
        let x = norm.apply(&[3.0, -4.0, 12.0]);
        assert!((x.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        assert_eq!(norm.apply(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn normalizer_fitted_on_train_only() {
        let (ds, _) = gen_two_gaussians(400, 2, 1.0, 9).unwrap();
        let (train, test) = permute_and_split(&ds, 3, 0.75).unwrap();
        let norm = Normalizer::fit(NormalizerKind::ZScore, train.samples());
        let out = norm.apply_all(test.samples());
        let m = out.iter().map(|s| s.x[0]).sum::<f64>() / out.len() as f64;
        assert!(m.abs() > 1e-9);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (ds, _) = gen_two_gaussians(10, 2, 1.0, 0).unwrap();
        let (a, b) = permute_and_split(&ds, 5, 0.75).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a.len() + b.len(), 10);
        let (a2, b2) = permute_and_split(&ds, 5, 0.75).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert!(permute_and_split(&ds, 5, 1.0).is_err());
    }

    #[test]
    fn permutations_differ_across_seeds() {
        let perms: Vec<Vec<usize>> = (0..100).map(|s| permutation(10, s)).collect();
        for i in 0..perms.len() {
            for j in i + 1..perms.len() {
                assert_ne!(perms[i], perms[j], "seeds {i} and {j} collide");
            }
        }
    }

    #[test]
    fn folds_are_stratified_partition() {
        let (ds, _) = gen_two_gaussians(31, 1, 1.0, 2).unwrap();
        let folds = stratified_folds(ds.samples(), 3, 1);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..31).collect::<Vec<_>>());
        for f in &folds {
            let pos = f.iter().filter(|&&i| ds.samples()[i].y.is_positive()).count();
            assert!((5..=6).contains(&pos));
        }
    }

    #[test]
    fn epochs_concatenate() {
        let (ds, _) = gen_two_gaussians(6, 1, 1.0, 2).unwrap();
        let seq = epoch_sequence(ds.samples(), 3, 4);
        assert_eq!(seq.len(), 18);
        assert_eq!(&seq[..6], ds.samples());
        assert_eq!(epoch_sequence(ds.samples(), 1, 4), ds.samples());
    }

    #[test]
    fn oracle_power() {
        let o = TwoGaussianOracle { separation: 2.0 };
        // Phi(Phi^-1(0.1) + 2) = Phi(0.71844843) = 0.76375958 (scipy.stats.norm)
        assert!((normal_quantile(0.1) + 2.0 - 0.718_448_434_455_399_6).abs() < 1e-9);
        assert!((o.tpr(0.1) - 0.763_759_584_105_883_2).abs() < 1e-9);
        assert!((o.tpr(0.5) - 0.977_249_868_051_820_8).abs() < 1e-9);
        let flat = TwoGaussianOracle { separation: 0.0 };
        for tau in [0.01, 0.1, 0.3] {
            assert!((flat.tpr(tau) - tau).abs() < 1e-9);
        }
    }

    #[test]
    fn two_gaussians_balanced_with_expected_means() {
        let (ds, o) = gen_two_gaussians(20_000, 2, 2.0, 1).unwrap();
        assert_eq!(ds.n_pos(), 10_000);
        let mean_pos = ds.samples().iter().filter(|s| s.y.is_positive()).map(|s| s.x[0]).sum::<f64>() / 1e4;
        assert!((mean_pos - 1.0).abs() < 0.05);
        // empirical power of the oracle test
        let tp = ds
            .samples()
            .iter()
            .filter(|s| s.y.is_positive() && o.decide(0.1, &s.x).is_positive())
            .count() as f64
            / 1e4;
        assert!((tp - o.tpr(0.1)).abs() < 0.02);
        assert!(gen_two_gaussians(1, 2, 1.0, 0).is_err());
        assert!(gen_two_gaussians(10, 2, 0.0, 0).is_err());
    }

    #[test]
    fn ring_geometry() {
        assert!(gen_ring(0, 1.0, 2.0, 0.05, 0).is_err());
        assert!(gen_ring(10, 2.0, 1.0, 0.05, 0).is_err());
        let ds = gen_ring(2000, 1.0, 2.0, 0.0, 3).unwrap();
        assert_eq!(ds.n_pos(), 1000);
        for s in ds.samples() {
            let r = s.x[0].hypot(s.x[1]);
            match s.y {
                Label::Positive => assert!(r <= 1.0),
                Label::Negative => assert!((1.0..=2.0).contains(&r)),
            }
        }
    }

    #[test]
    fn ring_defeats_linear_separators() {
        let ds = gen_ring(10_000, 1.0, 2.0, 0.05, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut best: f64 = 0.0;
        for _ in 0..10_000 {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let offset = rng.random_range(-2.5..2.5);
            let (c, s) = (theta.cos(), theta.sin());
            let correct = ds
                .samples()
                .iter()
                .filter(|p| Label::from_score(c * p.x[0] + s * p.x[1] - offset) == p.y)
                .count();
            best = best.max(correct as f64 / ds.len() as f64);
        }
        assert!(best <= 0.75, "best linear accuracy {best}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dataset() -> impl Strategy<Value = Dataset> {
            (1usize..5).prop_flat_map(|d| {
                prop::collection::vec(
                    (prop::collection::vec(-1e6..1e6f64, d), any::<bool>()),
                    1..30,
                )
                .prop_map(|rows| {
                    let samples = rows
                        .into_iter()
                        .map(|(x, p)| LabeledSample {
                            x,
                            y: if p { Label::Positive } else { Label::Negative },
                        })
                        .collect();
                    Dataset::new(samples, "p").unwrap()
                })
            })
        }

        proptest! {
            #[test]
            fn delimited_round_trip(ds in dataset()) {
                let text = format_delimited(&ds, ',');
                let back = parse_delimited(&text, LabelColumn::Last, ',', false, "p").unwrap();
                prop_assert_eq!(format_delimited(&back, ','), text);
                prop_assert_eq!(back.samples(), ds.samples());
            }

            #[test]
            fn sparse_round_trip(ds in dataset()) {
                let text = format_sparse(&ds);
                let back = parse_sparse(&text, "p").unwrap();
                prop_assert_eq!(format_sparse(&back), text);
            }
        }
    }
}
