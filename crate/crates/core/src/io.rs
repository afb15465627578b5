//! Run configuration files and model snapshots.
//!
//! # Config format
//!
//! Line-oriented `key = value` pairs grouped under `[section]` headers.
//! `#` starts a comment. A key may also be written fully qualified
//! (`model.tau = 0.1`) anywhere in the file. Unknown keys are rejected.
//! Lists are comma separated. Only `model.tau` and `data.source` are
//! required; every other key has a default (see [`CONFIG_KEYS`]).
//!
//! ```text
//! [model]
//! kind = npnn            # npnn | olnp
//! tau = 0.1              # target false positive rate, in (0, 1)
//! bandwidth = 1.0        # rbf g
//! pairs = 50             # D; the hidden layer has 2D units
//! lambda = 0.0
//! eta1 = 0.01
//! beta1 = auto           # auto = 0.05 * eta1
//! gamma1 = 1.0
//! window = 200
//! window_min_fill = auto # auto = min(window, 20)
//! gamma_min = 1e-6
//! train_hidden = true
//! stochastic_gamma = false
//! init_scale = 0.01
//!
//! [data]
//! source = data/spambase.csv   # a path, or two_gaussians | ring
//! format = delimited           # delimited | sparse
//! label_column = last          # first | last | 1-based column number
//! delimiter = ,                # a single character, or `tab`
//! header = false
//! normalization = zscore       # none | zscore | unitnorm
//! minority_positive = true
//! n = 10000                    # generator size
//! dim = 2                      # two_gaussians dimension
//! separation = 2.0             # two_gaussians mean distance
//! inner = 1.0                  # ring radii and radial noise
//! outer = 2.0
//! noise = 0.05
//! gen_seed = 0
//!
//! [protocol]
//! permutations = 15
//! split = 0.75
//! epochs = 1
//! tfpr_grid = 0.05, 0.1, 0.2, 0.3, 0.4
//! kappa = auto                 # auto = 1 / tau
//! cv = false                   # tune (g, D) per permutation
//! cv_folds = 3
//! cv_bandwidths = 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1, 2, 5, 10
//! cv_width_multipliers = 2, 5, 10, 20, 40, 80, 100
//!
//! [output]
//! dir = out
//! trace_every = 1
//!
//! [run]
//! seed = 42
//! workers = auto
//! ```
//!
//! # Snapshot format
//!
//! Plain text, one `name value...` record per line, opened by
//! `npnn-snapshot <version>` and closed by `end`. Floats are written in
//! Rust's shortest round-trip decimal form, so loading restores every
//! parameter bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{self, Dataset, LabelColumn, NormalizerKind};
use crate::error::{Error, Result};
use crate::eval::{CvConfig, OnlineLearner, ProtocolConfig};
use crate::learner::{FprWindow, Hyperparams, ModelKind, NpState};
use crate::npnn::{ModelState, RffNet};
use crate::olnp::{LinearModel, LinearState};
use crate::rff::FrequencyBank;

pub const SNAPSHOT_VERSION: u32 = 1;
const SNAPSHOT_MAGIC: &str = "npnn-snapshot";

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Delimited {
        path: PathBuf,
        label_column: LabelColumn,
        delimiter: char,
        header: bool,
    },
    Sparse {
        path: PathBuf,
    },
    TwoGaussians {
        n: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
    Ring {
        n: usize,
        inner: f64,
        outer: f64,
        noise: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub params: Hyperparams,
    pub data: DataSource,
    pub normalization: NormalizerKind,
    pub minority_positive: bool,
    pub permutations: usize,
    pub split: f64,
    pub epochs: usize,
    pub tfpr_grid: Vec<f64>,
    pub kappa: Option<f64>,
    pub cv: bool,
    pub cv_folds: usize,
    pub cv_bandwidths: Vec<f64>,
    pub cv_width_multipliers: Vec<usize>,
    pub output_dir: PathBuf,
    pub trace_every: usize,
    pub seed: u64,
    pub workers: Option<usize>,
}

/// Every accepted key with its default (`None` = required).
pub const CONFIG_KEYS: &[(&str, Option<&str>)] = &[
    ("model.kind", Some("npnn")),
    ("model.tau", None),
    ("model.bandwidth", Some("1.0")),
    ("model.pairs", Some("50")),
    ("model.lambda", Some("0.0")),
    ("model.eta1", Some("0.01")),
    ("model.beta1", Some("auto")),
    ("model.gamma1", Some("1.0")),
    ("model.window", Some("200")),
    ("model.window_min_fill", Some("auto")),
    ("model.gamma_min", Some("1e-6")),
    ("model.train_hidden", Some("true")),
    ("model.stochastic_gamma", Some("false")),
    ("model.init_scale", Some("0.01")),
    ("data.source", None),
    ("data.format", Some("delimited")),
    ("data.label_column", Some("last")),
    ("data.delimiter", Some(",")),
    ("data.header", Some("false")),
    ("data.normalization", Some("none")),
    ("data.minority_positive", Some("true")),
    ("data.n", Some("10000")),
    ("data.dim", Some("2")),
    ("data.separation", Some("2.0")),
    ("data.inner", Some("1.0")),
    ("data.outer", Some("2.0")),
    ("data.noise", Some("0.05")),
    ("data.gen_seed", Some("0")),
    ("protocol.permutations", Some("15")),
    ("protocol.split", Some("0.75")),
    ("protocol.epochs", Some("1")),
    ("protocol.tfpr_grid", Some("0.05, 0.1, 0.2, 0.3, 0.4")),
    ("protocol.kappa", Some("auto")),
    ("protocol.cv", Some("false")),
    ("protocol.cv_folds", Some("3")),
    ("protocol.cv_bandwidths", Some("0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1, 2, 5, 10")),
    ("protocol.cv_width_multipliers", Some("2, 5, 10, 20, 40, 80, 100")),
    ("output.dir", Some("out")),
    ("output.trace_every", Some("1")),
    ("run.seed", Some("0")),
    ("run.workers", Some("auto")),
];

/// Raw `section.key -> value` pairs from a config text, unknown keys rejected.
pub fn parse_config_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut section = String::new();
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}", idx + 1), format!("expected `key = value`, got `{line}`"))
        })?;
        let key = key.trim();
        let full = if key.contains('.') || section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        set_entry(&mut entries, &full, value.trim())?;
    }
    Ok(entries)
}

/// Inserts or overrides one entry after checking the key is known.
pub fn set_entry(entries: &mut BTreeMap<String, String>, key: &str, value: &str) -> Result<()> {
    if !CONFIG_KEYS.iter().any(|(k, _)| *k == key) {
        return Err(Error::config(key, "unknown key"));
    }
    entries.insert(key.to_string(), value.to_string());
    Ok(())
}

fn strip_comment(line: &str) -> &str {
    // `#` inside a delimiter value is written as `data.delimiter = #`; allow that one case.
    match line.find('#') {
        Some(pos) if !line[..pos].trim_end().ends_with('=') => &line[..pos],
        _ => line,
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    Ok(parse_config_with_defaults(text)?.0)
}

/// Parses and validates; also returns the keys that fell back to defaults.
pub fn parse_config_with_defaults(text: &str) -> Result<(RunConfig, Vec<&'static str>)> {
    resolve_config(&parse_config_entries(text)?)
}

struct Resolver<'a> {
    entries: &'a BTreeMap<String, String>,
    defaulted: Vec<&'static str>,
}

impl Resolver<'_> {
    fn raw(&mut self, key: &'static str) -> Result<String> {
        if let Some(v) = self.entries.get(key) {
            return Ok(v.clone());
        }
        let default = CONFIG_KEYS
            .iter()
            .find(|(k, _)| *k == key)
            .and_then(|(_, d)| *d)
            .ok_or_else(|| Error::config(key, "missing required key"))?;
        self.defaulted.push(key);
        Ok(default.to_string())
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::config(key, format!("cannot parse `{raw}`")))
    }

    fn float(&mut self, key: &'static str) -> Result<f64> {
        let v: f64 = self.parse(key)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::config(key, "must be finite"))
        }
    }

    fn auto_or<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<Option<T>> {
        let raw = self.raw(key)?;
        if raw == "auto" {
            return Ok(None);
        }
        raw.parse()
            .map(Some)
            .map_err(|_| Error::config(key, format!("cannot parse `{raw}`")))
    }

    fn list<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<Vec<T>> {
        let raw = self.raw(key)?;
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::config(key, format!("cannot parse list item `{}`", s.trim())))
            })
            .collect()
    }
}

fn resolve_config(entries: &BTreeMap<String, String>) -> Result<(RunConfig, Vec<&'static str>)> {
    let mut r = Resolver {
        entries,
        defaulted: Vec::new(),
    };
    let kind_raw = r.raw("model.kind")?;
    let kind = ModelKind::parse(&kind_raw)
        .ok_or_else(|| Error::config("model.kind", format!("expected npnn or olnp, got `{kind_raw}`")))?;

    let tau = r.float("model.tau")?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::config("model.tau", format!("must lie in (0, 1), got {tau}")));
    }
    let eta1 = r.float("model.eta1")?;
    let beta1 = r.auto_or::<f64>("model.beta1")?.unwrap_or(0.05 * eta1);
    let params = Hyperparams {
        tau,
        bandwidth: r.float("model.bandwidth")?,
        pairs: r.parse("model.pairs")?,
        lambda: r.float("model.lambda")?,
        eta1,
        beta1,
        gamma1: r.float("model.gamma1")?,
        window: r.parse("model.window")?,
        window_min_fill: r.auto_or("model.window_min_fill")?,
        gamma_min: r.float("model.gamma_min")?,
        train_hidden: r.parse("model.train_hidden")?,
        stochastic_gamma: r.parse("model.stochastic_gamma")?,
        init_scale: r.float("model.init_scale")?,
    };
    params.validate().map_err(|e| Error::config("model", e.to_string()))?;

    let source = r.raw("data.source")?;
    let format = r.raw("data.format")?;
    let label_raw = r.raw("data.label_column")?;
    let label_column = match label_raw.as_str() {
        "first" => LabelColumn::First,
        "last" => LabelColumn::Last,
        other => match other.parse::<usize>() {
            Ok(k) if k >= 1 => LabelColumn::Index(k - 1),
            _ => return Err(Error::config("data.label_column", format!("bad value `{other}`"))),
        },
    };
    let delim_raw = r.raw("data.delimiter")?;
    let delimiter = match delim_raw.as_str() {
        "tab" | "\\t" => '\t',
        "space" => ' ',
        s if s.chars().count() == 1 => s.chars().next().unwrap_or(','),
        s => return Err(Error::config("data.delimiter", format!("expected one character, got `{s}`"))),
    };
    let header: bool = r.parse("data.header")?;
    let n: usize = r.parse("data.n")?;
    let dim: usize = r.parse("data.dim")?;
    let separation = r.float("data.separation")?;
    let inner = r.float("data.inner")?;
    let outer = r.float("data.outer")?;
    let noise = r.float("data.noise")?;
    let gen_seed: u64 = r.parse("data.gen_seed")?;
    let data = match source.as_str() {
        "two_gaussians" => {
            if n < 2 || dim == 0 || !(separation > 0.0) {
                return Err(Error::config("data", "two_gaussians needs n >= 2, dim >= 1, separation > 0"));
            }
            DataSource::TwoGaussians {
                n,
                dim,
                separation,
                seed: gen_seed,
            }
        }
        "ring" => {
            if n == 0 || !(inner > 0.0 && outer > inner) || !(noise >= 0.0) {
                return Err(Error::config("data", "ring needs n >= 1, 0 < inner < outer, noise >= 0"));
            }
            DataSource::Ring {
                n,
                inner,
                outer,
                noise,
                seed: gen_seed,
            }
        }
        "" => return Err(Error::config("data.source", "must not be empty")),
        path => match format.as_str() {
            "delimited" => DataSource::Delimited {
                path: PathBuf::from(path),
                label_column,
                delimiter,
                header,
            },
            "sparse" => DataSource::Sparse {
                path: PathBuf::from(path),
            },
            other => {
                return Err(Error::config(
                    "data.format",
                    format!("expected delimited or sparse, got `{other}`"),
                ))
            }
        },
    };
    let norm_raw = r.raw("data.normalization")?;
    let normalization = NormalizerKind::parse(&norm_raw).ok_or_else(|| {
        Error::config("data.normalization", format!("expected none, zscore or unitnorm, got `{norm_raw}`"))
    })?;
    let minority_positive: bool = r.parse("data.minority_positive")?;

    let permutations: usize = r.parse("protocol.permutations")?;
    if permutations == 0 {
        return Err(Error::config("protocol.permutations", "must be at least 1"));
    }
    let split = r.float("protocol.split")?;
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::config("protocol.split", format!("must lie in (0, 1), got {split}")));
    }
    let epochs: usize = r.parse("protocol.epochs")?;
    if epochs == 0 {
        return Err(Error::config("protocol.epochs", "must be at least 1"));
    }
    let tfpr_grid: Vec<f64> = r.list("protocol.tfpr_grid")?;
    crate::eval::validate_grid(&tfpr_grid).map_err(|e| Error::config("protocol.tfpr_grid", e.to_string()))?;
    let kappa: Option<f64> = r.auto_or("protocol.kappa")?;
    if kappa.is_some_and(|k| !(k >= 0.0 && k.is_finite())) {
        return Err(Error::config("protocol.kappa", "must be >= 0"));
    }
    let cv: bool = r.parse("protocol.cv")?;
    let cv_folds: usize = r.parse("protocol.cv_folds")?;
    if cv_folds < 2 {
        return Err(Error::config("protocol.cv_folds", "must be at least 2"));
    }
    let cv_bandwidths: Vec<f64> = r.list("protocol.cv_bandwidths")?;
    if cv_bandwidths.is_empty() || cv_bandwidths.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(Error::config("protocol.cv_bandwidths", "values must be positive"));
    }
    let cv_width_multipliers: Vec<usize> = r.list("protocol.cv_width_multipliers")?;
    if cv_width_multipliers.is_empty() || cv_width_multipliers.contains(&0) {
        return Err(Error::config("protocol.cv_width_multipliers", "values must be positive"));
    }

    let output_dir = PathBuf::from(r.raw("output.dir")?);
    let trace_every: usize = r.parse("output.trace_every")?;
    if trace_every == 0 {
        return Err(Error::config("output.trace_every", "must be at least 1"));
    }
    let seed: u64 = r.parse("run.seed")?;
    let workers: Option<usize> = r.auto_or("run.workers")?;
    if workers == Some(0) {
        return Err(Error::config("run.workers", "must be at least 1"));
    }

    let config = RunConfig {
        kind,
        params,
        data,
        normalization,
        minority_positive,
        permutations,
        split,
        epochs,
        tfpr_grid,
        kappa,
        cv,
        cv_folds,
        cv_bandwidths,
        cv_width_multipliers,
        output_dir,
        trace_every,
        seed,
        workers,
    };
    Ok((config, r.defaulted))
}

fn join<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

fn auto<T: std::fmt::Debug>(v: Option<T>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| format!("{x:?}"))
}

/// Canonical text form with every key resolved.
pub fn serialize_config(c: &RunConfig) -> String {
    let p = &c.params;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("[model]\nkind", c.kind.name().into());
    kv("tau", format!("{:?}", p.tau));
    kv("bandwidth", format!("{:?}", p.bandwidth));
    kv("pairs", p.pairs.to_string());
    kv("lambda", format!("{:?}", p.lambda));
    kv("eta1", format!("{:?}", p.eta1));
    kv("beta1", format!("{:?}", p.beta1));
    kv("gamma1", format!("{:?}", p.gamma1));
    kv("window", p.window.to_string());
    kv("window_min_fill", auto(p.window_min_fill));
    kv("gamma_min", format!("{:?}", p.gamma_min));
    kv("train_hidden", p.train_hidden.to_string());
    kv("stochastic_gamma", p.stochastic_gamma.to_string());
    kv("init_scale", format!("{:?}", p.init_scale));

    let defaults = (10000usize, 2usize, 2.0f64, 1.0f64, 2.0f64, 0.05f64, 0u64);
    let (mut n, mut dim, mut sep, mut inner, mut outer, mut noise, mut gen_seed) = defaults;
    let (source, format, label, delim, header) = match &c.data {
        DataSource::Delimited {
            path,
            label_column,
            delimiter,
            header,
        } => (
            path.display().to_string(),
            "delimited",
            match label_column {
                LabelColumn::First => "first".to_string(),
                LabelColumn::Last => "last".to_string(),
                LabelColumn::Index(i) => (i + 1).to_string(),
            },
            *delimiter,
            *header,
        ),
        DataSource::Sparse { path } => (path.display().to_string(), "sparse", "last".into(), ',', false),
        DataSource::TwoGaussians {
            n: nn,
            dim: dd,
            separation,
            seed,
        } => {
            (n, dim, sep, gen_seed) = (*nn, *dd, *separation, *seed);
            ("two_gaussians".into(), "delimited", "last".into(), ',', false)
        }
        DataSource::Ring {
            n: nn,
            inner: i,
            outer: o,
            noise: z,
            seed,
        } => {
            (n, inner, outer, noise, gen_seed) = (*nn, *i, *o, *z, *seed);
            ("ring".into(), "delimited", "last".into(), ',', false)
        }
    };
    kv("\n[data]\nsource", source);
    kv("format", format.into());
    kv("label_column", label);
    kv(
        "delimiter",
        match delim {
            '\t' => "tab".into(),
            ' ' => "space".into(),
            ch => ch.to_string(),
        },
    );
    kv("header", header.to_string());
    kv("normalization", c.normalization.name().into());
    kv("minority_positive", c.minority_positive.to_string());
    kv("n", n.to_string());
    kv("dim", dim.to_string());
    kv("separation", format!("{sep:?}"));
    kv("inner", format!("{inner:?}"));
    kv("outer", format!("{outer:?}"));
    kv("noise", format!("{noise:?}"));
    kv("gen_seed", gen_seed.to_string());

    kv("\n[protocol]\npermutations", c.permutations.to_string());
    kv("split", format!("{:?}", c.split));
    kv("epochs", c.epochs.to_string());
    kv("tfpr_grid", join(&c.tfpr_grid));
    kv("kappa", auto(c.kappa));
    kv("cv", c.cv.to_string());
    kv("cv_folds", c.cv_folds.to_string());
    kv("cv_bandwidths", join(&c.cv_bandwidths));
    kv("cv_width_multipliers", join(&c.cv_width_multipliers));

    kv("\n[output]\ndir", c.output_dir.display().to_string());
    kv("trace_every", c.trace_every.to_string());

    kv("\n[run]\nseed", c.seed.to_string());
    kv("workers", auto(c.workers));
    out
}

impl RunConfig {
    pub fn learner(&self) -> OnlineLearner {
        OnlineLearner {
            kind: self.kind,
            params: self.params.clone(),
        }
    }

    pub fn protocol(&self, grid: Vec<f64>) -> ProtocolConfig {
        ProtocolConfig {
            permutations: self.permutations,
            train_fraction: self.split,
            epochs: self.epochs,
            tfpr_grid: grid,
            seed: self.seed,
            normalization: self.normalization,
            kappa: self.kappa,
            workers: self.workers,
        }
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            folds: self.cv_folds,
            bandwidths: self.cv_bandwidths.clone(),
            width_multipliers: self.cv_width_multipliers.clone(),
            epochs: self.epochs,
            seed: crate::seed::derive_seed(self.seed, "cv", 0),
        }
    }

    /// Loads or generates the dataset this config names.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let ds = match &self.data {
            DataSource::Delimited {
                path,
                label_column,
                delimiter,
                header,
            } => data::load_delimited(path, *label_column, *delimiter, *header)?,
            DataSource::Sparse { path } => data::load_sparse(path)?,
            DataSource::TwoGaussians {
                n,
                dim,
                separation,
                seed,
            } => data::gen_two_gaussians(*n, *dim, *separation, *seed)?.0,
            DataSource::Ring {
                n,
                inner,
                outer,
                noise,
                seed,
            } => data::gen_ring(*n, *inner, *outer, *noise, *seed)?,
        };
        Ok(if self.minority_positive {
            ds.with_minority_positive()
        } else {
            ds
        })
    }
}

/// Writes `contents` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("`{}` has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Model bodies that can be snapshotted.
pub trait SnapshotModel: Sized {
    const KIND: ModelKind;
    fn write_body(&self, out: &mut String);
    fn read_body(reader: &mut SnapshotReader<'_>, params: &Hyperparams) -> Result<Self>;
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

impl SnapshotModel for RffNet {
    const KIND: ModelKind = ModelKind::Npnn;

    fn write_body(&self, out: &mut String) {
        let bank = self.bank();
        let _ = writeln!(out, "dim_in {}", bank.dim_in());
        let _ = writeln!(out, "pairs {}", bank.num_pairs());
        for row in bank.rows() {
            let _ = writeln!(out, "freq {}", floats(row));
        }
        let _ = writeln!(out, "w {}", floats(self.weights()));
        let _ = writeln!(out, "b {:?}", self.bias());
    }

    fn read_body(r: &mut SnapshotReader<'_>, params: &Hyperparams) -> Result<Self> {
        let dim_in: usize = r.scalar("dim_in")?;
        let pairs: usize = r.scalar("pairs")?;
        let rows = (0..pairs)
            .map(|_| r.floats("freq", Some(dim_in)))
            .collect::<Result<Vec<_>>>()?;
        let bank = FrequencyBank::from_rows(&rows, params.bandwidth).map_err(|e| Error::Snapshot(e.to_string()))?;
        let w = r.floats("w", Some(2 * pairs))?;
        let b: f64 = r.scalar("b")?;
        RffNet::new(bank, w, b).map_err(|e| Error::Snapshot(e.to_string()))
    }
}

impl SnapshotModel for LinearModel {
    const KIND: ModelKind = ModelKind::Olnp;

    fn write_body(&self, out: &mut String) {
        let _ = writeln!(out, "dim_in {}", self.weights().len());
        let _ = writeln!(out, "w {}", floats(self.weights()));
        let _ = writeln!(out, "b {:?}", self.bias());
    }

    fn read_body(r: &mut SnapshotReader<'_>, _params: &Hyperparams) -> Result<Self> {
        let dim_in: usize = r.scalar("dim_in")?;
        let w = r.floats("w", Some(dim_in))?;
        let b: f64 = r.scalar("b")?;
        LinearModel::new(w, b).map_err(|e| Error::Snapshot(e.to_string()))
    }
}

/// Sequential reader over `name value...` snapshot lines.
pub struct SnapshotReader<'a> {
    lines: std::iter::Peekable<std::str::Lines<'a>>,
}

impl<'a> SnapshotReader<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().peekable(),
        }
    }

    fn record(&mut self, name: &str) -> Result<&'a str> {
        let line = self
            .lines
            .next()
            .ok_or_else(|| Error::Snapshot(format!("truncated: expected `{name}`")))?;
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        if key != name {
            return Err(Error::Snapshot(format!("expected `{name}`, found `{key}`")));
        }
        Ok(rest)
    }

    pub fn scalar<T: std::str::FromStr>(&mut self, name: &str) -> Result<T> {
        let raw = self.record(name)?;
        raw.trim()
            .parse()
            .map_err(|_| Error::Snapshot(format!("bad value for `{name}`: `{raw}`")))
    }

    pub fn floats(&mut self, name: &str, expected: Option<usize>) -> Result<Vec<f64>> {
        let raw = self.record(name)?;
        let v = raw
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Snapshot(format!("bad number `{t}` in `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(n) = expected {
            if v.len() != n {
                return Err(Error::Snapshot(format!(
                    "`{name}` has {} values, expected {n}",
                    v.len()
                )));
            }
        }
        Ok(v)
    }
}

pub fn snapshot_to_string<M: SnapshotModel>(state: &NpState<M>) -> String {
    let p = &state.params;
    let mut out = String::new();
    let _ = writeln!(out, "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}");
    let _ = writeln!(out, "kind {}", M::KIND.name());
    let _ = writeln!(out, "seed {}", state.seed);
    let _ = writeln!(out, "tau {:?}", p.tau);
    let _ = writeln!(out, "bandwidth {:?}", p.bandwidth);
    let _ = writeln!(out, "pairs_param {}", p.pairs);
    let _ = writeln!(out, "lambda {:?}", p.lambda);
    let _ = writeln!(out, "eta1 {:?}", p.eta1);
    let _ = writeln!(out, "beta1 {:?}", p.beta1);
    let _ = writeln!(out, "gamma1 {:?}", p.gamma1);
    let _ = writeln!(out, "window_size {}", p.window);
    let _ = writeln!(out, "window_min_fill {}", auto(p.window_min_fill));
    let _ = writeln!(out, "gamma_min {:?}", p.gamma_min);
    let _ = writeln!(out, "train_hidden {}", p.train_hidden);
    let _ = writeln!(out, "stochastic_gamma {}", p.stochastic_gamma);
    let _ = writeln!(out, "init_scale {:?}", p.init_scale);
    let _ = writeln!(out, "t {}", state.t);
    let _ = writeln!(out, "n_pos {}", state.n_pos);
    let _ = writeln!(out, "n_neg {}", state.n_neg);
    let _ = writeln!(out, "gamma {:?}", state.gamma);
    let _ = writeln!(out, "eta {:?}", state.eta);
    let _ = writeln!(out, "beta {:?}", state.beta);
    let bits: String = state
        .window
        .contents()
        .iter()
        .map(|b| if *b { '1' } else { '0' })
        .collect();
    let _ = writeln!(out, "window {}", if bits.is_empty() { "-".into() } else { bits });
    state.model.write_body(&mut out);
    out.push_str("end\n");
    out
}

struct Header {
    kind: ModelKind,
}

fn read_header(r: &mut SnapshotReader<'_>) -> Result<Header> {
    let version: u32 = r.scalar(SNAPSHOT_MAGIC)?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!(
            "unsupported snapshot version {version} (expected {SNAPSHOT_VERSION})"
        )));
    }
    let kind_raw: String = r.scalar("kind")?;
    let kind = ModelKind::parse(&kind_raw)
        .ok_or_else(|| Error::Snapshot(format!("unknown model kind `{kind_raw}`")))?;
    Ok(Header { kind })
}

fn snapshot_body<M: SnapshotModel>(r: &mut SnapshotReader<'_>) -> Result<NpState<M>> {
    let seed: u64 = r.scalar("seed")?;
    let tau: f64 = r.scalar("tau")?;
    let bandwidth: f64 = r.scalar("bandwidth")?;
    let pairs: usize = r.scalar("pairs_param")?;
    let lambda: f64 = r.scalar("lambda")?;
    let eta1: f64 = r.scalar("eta1")?;
    let beta1: f64 = r.scalar("beta1")?;
    let gamma1: f64 = r.scalar("gamma1")?;
    let window: usize = r.scalar("window_size")?;
    let min_fill_raw: String = r.scalar("window_min_fill")?;
    let window_min_fill = if min_fill_raw == "auto" {
        None
    } else {
        Some(
            min_fill_raw
                .parse()
                .map_err(|_| Error::Snapshot("bad window_min_fill".into()))?,
        )
    };
    let params = Hyperparams {
        tau,
        bandwidth,
        pairs,
        lambda,
        eta1,
        beta1,
        gamma1,
        window,
        window_min_fill,
        gamma_min: r.scalar("gamma_min")?,
        train_hidden: r.scalar("train_hidden")?,
        stochastic_gamma: r.scalar("stochastic_gamma")?,
        init_scale: r.scalar("init_scale")?,
    };
    params
        .validate()
        .map_err(|e| Error::Snapshot(format!("invalid hyperparameters: {e}")))?;
    let t: u64 = r.scalar("t")?;
    let n_pos: u64 = r.scalar("n_pos")?;
    let n_neg: u64 = r.scalar("n_neg")?;
    if n_pos + n_neg != t {
        return Err(Error::Snapshot("class counters do not add up to t".into()));
    }
    let gamma: f64 = r.scalar("gamma")?;
    let eta: f64 = r.scalar("eta")?;
    let beta: f64 = r.scalar("beta")?;
    if !(gamma > 0.0) {
        return Err(Error::Snapshot("gamma must be positive".into()));
    }
    let bits_raw: String = r.scalar("window")?;
    let bits = if bits_raw == "-" {
        Vec::new()
    } else {
        bits_raw
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::Snapshot("window bits must be 0 or 1".into())),
            })
            .collect::<Result<Vec<_>>>()?
    };
    let fpr_window = FprWindow::from_contents(params.window, params.min_fill(), &bits)
        .map_err(|e| Error::Snapshot(e.to_string()))?;
    let model = M::read_body(r, &params)?;
    let _: String = r
        .lines
        .next()
        .filter(|l| *l == "end")
        .map(str::to_string)
        .ok_or_else(|| Error::Snapshot("missing `end` trailer".into()))?;
    if r.lines.peek().is_some_and(|l| !l.trim().is_empty()) {
        return Err(Error::Snapshot("trailing data after `end`".into()));
    }
    Ok(NpState {
        params,
        seed,
        model,
        gamma,
        t,
        n_pos,
        n_neg,
        eta,
        beta,
        window: fpr_window,
    })
}

pub fn snapshot_from_str<M: SnapshotModel>(text: &str) -> Result<NpState<M>> {
    let mut r = SnapshotReader::new(text);
    let header = read_header(&mut r)?;
    if header.kind != M::KIND {
        return Err(Error::Snapshot(format!(
            "snapshot holds a {} model, expected {}",
            header.kind.name(),
            M::KIND.name()
        )));
    }
    snapshot_body(&mut r)
}

/// A snapshot of either model kind.
#[derive(Debug, Clone, PartialEq)]
pub enum AnySnapshot {
    Npnn(ModelState),
    Olnp(LinearState),
}

pub fn any_snapshot_from_str(text: &str) -> Result<AnySnapshot> {
    let mut r = SnapshotReader::new(text);
    match read_header(&mut r)?.kind {
        ModelKind::Npnn => snapshot_body(&mut r).map(AnySnapshot::Npnn),
        ModelKind::Olnp => snapshot_body(&mut r).map(AnySnapshot::Olnp),
    }
}

pub fn save_snapshot<M: SnapshotModel>(path: impl AsRef<Path>, state: &NpState<M>) -> Result<()> {
    write_atomic(path, &snapshot_to_string(state))
}

pub fn load_snapshot<M: SnapshotModel>(path: impl AsRef<Path>) -> Result<NpState<M>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    snapshot_from_str(&text)
}

pub fn load_any_snapshot(path: impl AsRef<Path>) -> Result<AnySnapshot> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    any_snapshot_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::Discriminant;

    #[test]
    fn minimal_config_gets_defaults() {
        let (c, defaulted) = parse_config_with_defaults("[data]\nsource = ring\n[model]\ntau = 0.05\n").unwrap();
        assert_eq!(c.params.eta1, 0.01);
        assert_eq!(c.params.gamma1, 1.0);
        assert_eq!(c.params.window, 200);
        assert!((c.params.beta1 - 0.0005).abs() < 1e-18);
        assert_eq!(c.tfpr_grid, vec![0.05, 0.1, 0.2, 0.3, 0.4]);
        assert_eq!(c.cv_bandwidths.len(), 10);
        assert_eq!(c.cv_width_multipliers, vec![2, 5, 10, 20, 40, 80, 100]);
        assert!(defaulted.contains(&"run.seed"));
        assert!(!defaulted.contains(&"model.tau"));
    }

    #[test]
    fn config_errors_name_the_key() {
        let err = parse_config("model.tau = 1.5\ndata.source = ring\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "model.tau"), "{err}");
        let err = parse_config("data.source = ring\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "model.tau"));
        let err = parse_config("model.tau = 0.1\ndata.source = ring\n[model]\nflavor = x\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "model.flavor"));
        let err = parse_config("model.tau = 0.1\ndata.source = ring\nprotocol.tfpr_grid = 0.2, 0.1\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "protocol.tfpr_grid"));
    }

    #[test]
    fn serialize_round_trip() {
        let text = "\
# experiment
[model]
kind = olnp
tau = 0.01   # tight
pairs = 7
[data]
source = data/x.tsv
delimiter = tab
label_column = 1
header = true
normalization = zscore
[protocol]
tfpr_grid = 0.01, 0.02
kappa = 3
[run]
seed = 99
workers = 2
";
        let c = parse_config(text).unwrap();
        let canonical = serialize_config(&c);
        let again = parse_config(&canonical).unwrap();
        assert_eq!(again, c);
        assert_eq!(serialize_config(&again), canonical);
        for gen in ["source = ring\nn = 30", "source = two_gaussians\ndim = 3"] {
            let c = parse_config(&format!("model.tau = 0.2\n[data]\n{gen}\n")).unwrap();
            assert_eq!(parse_config(&serialize_config(&c)).unwrap(), c);
        }
    }

    fn trained_npnn() -> ModelState {
        let (ds, _) = data::gen_two_gaussians(300, 3, 2.0, 1).unwrap();
        let params = Hyperparams {
            pairs: 6,
            window_min_fill: Some(5),
            ..Hyperparams::new(0.1)
        };
        crate::npnn::run_stream(&params, ds.samples(), 3).unwrap().0
    }

    #[test]
    fn snapshot_round_trip_is_bitwise() {
        let state = trained_npnn();
        let text = snapshot_to_string(&state);
        let back: ModelState = snapshot_from_str(&text).unwrap();
        assert_eq!(back, state);
        assert_eq!(snapshot_to_string(&back), text);
        assert_eq!(back.gamma().to_bits(), state.gamma().to_bits());
        let x = [0.3, -0.2, 1.0];
        assert_eq!(back.model().score(&x).to_bits(), state.model().score(&x).to_bits());

        let (ds, _) = data::gen_two_gaussians(100, 2, 2.0, 1).unwrap();
        let lin = crate::olnp::run_stream(&Hyperparams::new(0.2), ds.samples(), 1).unwrap().0;
        let back: LinearState = snapshot_from_str(&snapshot_to_string(&lin)).unwrap();
        assert_eq!(back, lin);
    }

    #[test]
    fn snapshot_rejects_damage() {
        let text = snapshot_to_string(&trained_npnn());
        let cut = &text[..text.len() / 2];
        assert!(matches!(snapshot_from_str::<RffNet>(cut), Err(Error::Snapshot(_))));
        let no_end = text.trim_end().trim_end_matches("end");
        assert!(matches!(snapshot_from_str::<RffNet>(no_end), Err(Error::Snapshot(_))));
        let wrong_version = text.replacen("npnn-snapshot 1", "npnn-snapshot 9", 1);
        assert!(matches!(snapshot_from_str::<RffNet>(&wrong_version), Err(Error::Snapshot(_))));
        assert!(matches!(snapshot_from_str::<LinearModel>(&text), Err(Error::Snapshot(_))));
        assert!(matches!(any_snapshot_from_str(&text), Ok(AnySnapshot::Npnn(_))));
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.snap");
        let state = trained_npnn();
        save_snapshot(&path, &state).unwrap();
        let back: ModelState = load_snapshot(&path).unwrap();
        assert_eq!(back, state);
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
