use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::warn;

use npnn_core::data::{self, Dataset, Normalizer, NormalizerKind};
use npnn_core::eval::{self, ProtocolSummary};
use npnn_core::io::{self, AnySnapshot, DataSource, RunConfig};
use npnn_core::learner::{Discriminant, NpState};
use npnn_core::seed::derive_seed;
use npnn_core::{npnn as nn, olnp, Error, ModelKind};

#[derive(Parser)]
#[command(name = "npnn", version, about = "Online Neyman-Pearson classification with random Fourier features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Config file (key = value lines, [sections] allowed)
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.tau=0.05` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed (same as run.seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (same as run.workers)
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (same as output.dir)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Permutation protocol at model.tau, plus a snapshot trained on all data
    Train(ConfigArgs),
    /// Single prequential pass over the data in file order
    Stream(ConfigArgs),
    /// Permutation protocol over protocol.tfpr_grid with ROC/AUC records
    Sweep(ConfigArgs),
    /// Cross-validated (g, D) selection at model.tau
    Cv(ConfigArgs),
    /// Write a synthetic dataset to a file
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Destination file
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the state stored in a snapshot file
    InspectSnapshot { path: PathBuf },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) => 2,
        Error::Parse { .. } | Error::Schema(_) | Error::Io { .. } | Error::Snapshot(_) => 3,
        Error::Protocol(_) | Error::Internal(_) => 4,
    }
}

fn load_config(args: &ConfigArgs) -> npnn_core::Result<RunConfig> {
    let mut entries = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
                key: "--config".into(),
                message: format!("cannot read {}: {e}", path.display()),
            })?;
            io::parse_config_entries(&text)?
        }
        None => BTreeMap::new(),
    };
    for item in &args.overrides {
        let (k, v) = item.split_once('=').ok_or_else(|| Error::Config {
            key: item.clone(),
            message: "expected KEY=VALUE".into(),
        })?;
        io::set_entry(&mut entries, k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        io::set_entry(&mut entries, "run.seed", &seed.to_string())?;
    }
    if let Some(w) = args.workers {
        io::set_entry(&mut entries, "run.workers", &w.to_string())?;
    }
    if let Some(dir) = &args.out_dir {
        io::set_entry(&mut entries, "output.dir", &dir.display().to_string())?;
    }
    let text: String = entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    let (config, defaulted) = io::parse_config_with_defaults(&text)?;
    if defaulted.contains(&"run.seed") {
        warn!("no seed given; using run.seed = {} (pass --seed for reproducible publication runs)", config.seed);
    }
    Ok(config)
}

/// Header shared by every output file; the timestamp is confined to its first line.
fn header(command: &str, config: &RunConfig) -> String {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let mut out = format!("# npnn {command} unix_time={now}\n# seed {}\n", config.seed);
    for line in io::serialize_config(config).lines().filter(|l| !l.is_empty()) {
        let _ = writeln!(out, "# {line}");
    }
    out
}

fn write_output(config: &RunConfig, command: &str, name: &str, body: &str) -> npnn_core::Result<PathBuf> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let path = dir.join(name);
    io::write_atomic(&path, &format!("{}{body}", header(command, config)))?;
    Ok(path)
}

fn normalized(ds: &Dataset, kind: NormalizerKind) -> npnn_core::Result<Dataset> {
    let norm = Normalizer::fit(kind, ds.samples());
    Dataset::new(norm.apply_all(ds.samples()), ds.provenance())
}

fn save_any(path: &Path, snap: &AnySnapshot) -> npnn_core::Result<()> {
    match snap {
        AnySnapshot::Npnn(s) => io::save_snapshot(path, s),
        AnySnapshot::Olnp(s) => io::save_snapshot(path, s),
    }
}

fn fit_state(config: &RunConfig, samples: &[npnn_core::LabeledSample], seed: u64) -> npnn_core::Result<(AnySnapshot, eval::RunTrace)> {
    let params = &config.params;
    Ok(match config.kind {
        ModelKind::Npnn => {
            let (s, t) = nn::run_stream(params, samples, seed)?;
            (AnySnapshot::Npnn(s), t)
        }
        ModelKind::Olnp => {
            let (s, t) = olnp::run_stream(params, samples, seed)?;
            (AnySnapshot::Olnp(s), t)
        }
    })
}

fn run_grid(config: &RunConfig, ds: &Dataset, grid: Vec<f64>) -> npnn_core::Result<ProtocolSummary> {
    let cfg = config.protocol(grid);
    if config.cv {
        eval::protocol_run_tuned(ds, &cfg, &config.learner(), &config.cv_config())
    } else {
        eval::protocol_run(ds, &cfg, &config.learner())
    }
}

fn cmd_train(config: &RunConfig) -> npnn_core::Result<()> {
    let ds = config.load_dataset()?;
    let summary = run_grid(config, &ds, vec![config.params.tau])?;
    let path = write_output(config, "train", "summary.tsv", &eval::format_summary(&summary.records))?;
    print!("{}", eval::format_summary(&summary.records));
    println!("summary: {}", path.display());

    let full = normalized(&ds, config.normalization)?;
    let mut final_cfg = config.clone();
    if config.cv {
        let report = eval::cross_validate(full.samples(), &config.learner(), config.params.tau, &config.cv_config(), NormalizerKind::None, config.kappa)?;
        final_cfg.params = report.best.apply(&config.learner()).params;
    }
    let seq = data::epoch_sequence(full.samples(), config.epochs, derive_seed(config.seed, "final-epochs", 0));
    let (snap, _) = fit_state(&final_cfg, &seq, derive_seed(config.seed, "final", 0))?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::Io {
        path: config.output_dir.clone(),
        source: e,
    })?;
    let snap_path = config.output_dir.join("model.snap");
    save_any(&snap_path, &snap)?;
    println!("snapshot: {}", snap_path.display());
    Ok(())
}

fn cmd_stream(config: &RunConfig) -> npnn_core::Result<()> {
    let ds = config.load_dataset()?;
    if config.normalization != NormalizerKind::None {
        warn!("stream: normalization statistics are fitted on the whole stream");
    }
    let ds = normalized(&ds, config.normalization)?;
    let (snap, trace) = fit_state(config, ds.samples(), derive_seed(config.seed, "stream", 0))?;
    let rates = trace.final_rates();
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
    let mut body = eval::format_trace(&trace, config.trace_every);
    let _ = writeln!(
        body,
        "# final steps={} cum_fpr={} cum_tpr={} negatives={} positives={}",
        trace.len(),
        fmt(rates.fpr),
        fmt(rates.tpr),
        rates.negatives,
        rates.positives
    );
    let path = write_output(config, "stream", "trace.tsv", &body)?;
    println!(
        "steps {}\tcum_fpr {}\tcum_tpr {}\ttrace {}",
        trace.len(),
        fmt(rates.fpr),
        fmt(rates.tpr),
        path.display()
    );
    let snap_path = config.output_dir.join("model.snap");
    save_any(&snap_path, &snap)?;
    Ok(())
}

fn cmd_sweep(config: &RunConfig) -> npnn_core::Result<()> {
    let ds = config.load_dataset()?;
    let summary = run_grid(config, &ds, config.tfpr_grid.clone())?;
    let table = eval::format_summary(&summary.records);
    write_output(config, "sweep", "summary.tsv", &table)?;

    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
    let mut roc = String::from("permutation\ttfpr\tfpr\ttpr\tauc_tfpr\tauc_fpr\n");
    for perm in &summary.permutations {
        let (auc_t, auc_f) = perm
            .curve
            .as_ref()
            .map_or((None, None), |c| (Some(c.auc_tfpr), Some(c.auc)));
        for o in &perm.outcomes {
            let _ = writeln!(
                roc,
                "{}\t{}\t{}\t{}\t{}\t{}",
                perm.permutation,
                o.tau,
                fmt(o.rates.fpr),
                fmt(o.rates.tpr),
                fmt(auc_t),
                fmt(auc_f)
            );
        }
    }
    let path = write_output(config, "sweep", "roc.tsv", &roc)?;
    print!("{table}");
    println!("roc: {}", path.display());
    Ok(())
}

fn cmd_cv(config: &RunConfig) -> npnn_core::Result<()> {
    let ds = config.load_dataset()?;
    let report = eval::cross_validate(
        ds.samples(),
        &config.learner(),
        config.params.tau,
        &config.cv_config(),
        config.normalization,
        config.kappa,
    )?;
    let mut body = String::from("bandwidth\tpairs\tmean_np_score\n");
    for row in &report.rows {
        let score = row.mean_np_score.map_or_else(|| "NA".to_string(), |s| format!("{s:.6}"));
        let _ = writeln!(body, "{}\t{}\t{score}", row.bandwidth, row.pairs);
    }
    let _ = writeln!(body, "# best bandwidth={} pairs={}", report.best.bandwidth, report.best.pairs);
    let path = write_output(config, "cv", "cv.tsv", &body)?;
    println!(
        "best bandwidth {} pairs {}\ttable {}",
        report.best.bandwidth,
        report.best.pairs,
        path.display()
    );
    Ok(())
}

fn cmd_gen(config: &RunConfig, out: &Path) -> npnn_core::Result<()> {
    let delimiter = match &config.data {
        DataSource::TwoGaussians { .. } | DataSource::Ring { .. } => ',',
        _ => {
            return Err(Error::Config {
                key: "data.source".into(),
                message: "gen needs a generator source (two_gaussians or ring)".into(),
            })
        }
    };
    let ds = config.load_dataset()?;
    let sparse = out.extension().is_some_and(|e| e == "svm" || e == "libsvm");
    let text = if sparse {
        data::format_sparse(&ds)
    } else {
        data::format_delimited(&ds, delimiter)
    };
    io::write_atomic(out, &text)?;
    println!("wrote {} samples ({} positive) to {}", ds.len(), ds.n_pos(), out.display());
    Ok(())
}

fn describe<M: Discriminant>(s: &NpState<M>, kind: &str) -> String {
    let p = s.params();
    format!(
        "kind\t{kind}\nseed\t{}\ntau\t{}\nbandwidth\t{}\ndim_in\t{}\nt\t{}\nn_pos\t{}\nn_neg\t{}\ngamma\t{}\neta\t{}\nbeta\t{}\nwindow\t{}/{}\nwindow_fpr\t{}\n",
        s.seed(),
        p.tau,
        p.bandwidth,
        s.model().dim_in(),
        s.t(),
        s.n_pos(),
        s.n_neg(),
        s.gamma(),
        s.eta(),
        s.beta(),
        s.window().count(),
        s.window().capacity(),
        s.window().estimate(),
    )
}

fn cmd_inspect(path: &Path) -> npnn_core::Result<()> {
    match io::load_any_snapshot(path)? {
        AnySnapshot::Npnn(s) => {
            print!("{}", describe(&s, "npnn"));
            println!("pairs\t{}", s.model().bank().num_pairs());
        }
        AnySnapshot::Olnp(s) => print!("{}", describe(&s, "olnp")),
    }
    Ok(())
}

fn run(cli: Cli) -> npnn_core::Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&load_config(&args)?),
        Command::Stream(args) => cmd_stream(&load_config(&args)?),
        Command::Sweep(args) => cmd_sweep(&load_config(&args)?),
        Command::Cv(args) => cmd_cv(&load_config(&args)?),
        Command::Gen { cfg, out } => cmd_gen(&load_config(&cfg)?, &out),
        Command::InspectSnapshot { path } => cmd_inspect(&path),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
