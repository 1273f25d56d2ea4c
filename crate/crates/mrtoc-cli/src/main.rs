//! Command-line front end for the mrtoc library.
//!
//! One subcommand per experiment step: `gen-data`, `train`, `eval`,
//! `sweep`, `select-level`, `dump-codebook`. Configuration comes from a
//! TOML file or a named preset; flags override file values, and the
//! `MRTOC_SEED` environment variable overrides the seed (a `--seed` flag
//! overrides both). The fully-resolved config is written next to every
//! output, so a run can always be reproduced from its artifacts.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use mrtoc::channel::{select_level, RateContext};
use mrtoc::checkpoint::Checkpoint;
use mrtoc::config::{DatasetSpec, ExperimentConfig};
use mrtoc::evaluation::{sweep_ber, sweep_levels_eps, SweepResult};
use mrtoc::training::train_progressive;
use mrtoc::{Error, Result};

#[derive(Parser)]
#[command(name = "mrtoc", version, about = "Multi-rate task-oriented communication simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset CSV.
    GenData(GenDataArgs),
    /// Train encoder, codebook, and head; write checkpoint and log.
    Train(TrainArgs),
    /// Evaluate a checkpoint at one channel point.
    Eval(EvalArgs),
    /// Evaluate a checkpoint across levels and channel conditions.
    Sweep(SweepArgs),
    /// Pick the deepest coding level that fits a latency budget.
    SelectLevel(SelectLevelArgs),
    /// Write a checkpoint's codeword table as CSV.
    DumpCodebook(DumpArgs),
}

/// Options shared by every subcommand that resolves a config.
#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset: `desk` (minutes) or `full` (hours).
    #[arg(long)]
    preset: Option<String>,
    /// Seed override; beats both the config file and MRTOC_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Where outputs go.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => ExperimentConfig::desk(),
        };
        self.apply(&mut cfg)?;
        Ok(cfg)
    }

    /// Applies the seed/output overrides to an already-loaded config, in
    /// increasing precedence: environment, then flags.
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Ok(text) = std::env::var("MRTOC_SEED") {
            let seed = text.parse().map_err(|_| {
                Error::Config(format!("MRTOC_SEED must be an unsigned integer, got {text:?}"))
            })?;
            cfg.set_seed(seed);
        }
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        Ok(())
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    /// Output CSV path; defaults to `<output_dir>/data.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    epochs_per_level: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    eps_train: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Checkpoint path; defaults to `<output_dir>/checkpoint.mrtoc`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Coding level; defaults to the deepest trained level.
    #[arg(long)]
    level: Option<usize>,
    /// Channel symbol error rate.
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long)]
    trials: Option<usize>,
    /// Output CSV path; defaults to `<output_dir>/eval.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Checkpoint path; defaults to `<output_dir>/checkpoint.mrtoc`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated levels; defaults to every trained level.
    #[arg(long)]
    levels: Option<String>,
    /// Comma-separated symbol error rates; defaults to `eval.eps_list`.
    #[arg(long)]
    eps_list: Option<String>,
    /// Comma-separated bit error rates; defaults to `eval.p_e_list`.
    #[arg(long)]
    p_e_list: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output CSV path; defaults to `<output_dir>/sweep.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectLevelArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Link rate in bits per second; falls back to `rate.v_bit`.
    #[arg(long)]
    vbit: Option<f64>,
    /// Latency budget in seconds; falls back to `rate.tau`.
    #[arg(long)]
    tau: Option<f64>,
    /// Sub-vectors per transmission; falls back to `train.m`.
    #[arg(long)]
    m: Option<usize>,
    /// Codebook size; falls back to `train.k_max`.
    #[arg(long)]
    kmax: Option<usize>,
    /// Bit error rate of the link.
    #[arg(long, default_value_t = 0.0)]
    p_e: f64,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Checkpoint path; defaults to `<output_dir>/checkpoint.mrtoc`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let kind = e.kind();
            // clap renders help and version through its error path.
            if kind == ErrorKind::DisplayHelp || kind == ErrorKind::DisplayVersion {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        // A consumer closing our stdout early is not a failure.
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData(args) => gen_data(args),
        Cmd::Train(args) => train(args),
        Cmd::Eval(args) => eval(args),
        Cmd::Sweep(args) => sweep(args),
        Cmd::SelectLevel(args) => run_select_level(args),
        Cmd::DumpCodebook(args) => dump_codebook(args),
    }
}

/// Writes the resolved config beside the outputs it produced.
fn echo_config(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.resolved.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut cfg = args.cfg.resolve()?;
    let mut spec = match cfg.data {
        DatasetSpec::Blobs { .. } => cfg.data.clone(),
        // Flags describe synthetic data, so a file-backed spec is replaced
        // by the default blob shape before overrides land.
        _ => {
            let DatasetSpec::Blobs { num_classes, dim, samples_per_class, spread } =
                ExperimentConfig::desk().data
            else {
                unreachable!("desk preset data is synthetic")
            };
            DatasetSpec::Blobs { num_classes, dim, samples_per_class, spread }
        }
    };
    if let DatasetSpec::Blobs { num_classes, dim, samples_per_class, spread } = &mut spec {
        if let Some(v) = args.classes {
            *num_classes = v;
        }
        if let Some(v) = args.dim {
            *dim = v;
        }
        if let Some(v) = args.per_class {
            *samples_per_class = v;
        }
        if let Some(v) = args.spread {
            *spread = v;
        }
    }
    cfg.data = spec;
    cfg.validate()?;

    let ds = cfg.data.load(cfg.seed)?;
    let path = args.out.unwrap_or_else(|| cfg.output_dir.join("data.csv"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    echo_config(&cfg)?;
    let mut w = BufWriter::new(File::create(&path)?);
    ds.write_csv(&mut w, &cfg.preamble()?)?;
    w.flush()?;
    println!("wrote {} samples to {}", ds.len(), path.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.cfg.resolve()?;
    if let Some(v) = args.epochs_per_level {
        cfg.train.epochs_per_level = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.eps_train {
        cfg.train.eps_train = v;
    }
    if let Some(v) = args.k_max {
        cfg.train.k_max = v;
    }
    if let Some(v) = args.m {
        cfg.train.m = v;
    }
    if let Some(v) = args.d {
        cfg.train.d = v;
    }
    cfg.validate()?;

    let ds = cfg.data.load(cfg.seed)?;
    let (train_split, _) = ds.split(cfg.train_fraction, cfg.seed)?;
    let (model, log) = train_progressive(&cfg.train, &train_split)?;

    echo_config(&cfg)?;
    let ckpt_path = cfg.output_dir.join("checkpoint.mrtoc");
    Checkpoint::new(cfg.clone(), model).save(&ckpt_path)?;
    let log_path = cfg.output_dir.join("train_log.csv");
    let mut w = BufWriter::new(File::create(&log_path)?);
    log.write_csv(&mut w, &cfg.preamble()?)?;
    w.flush()?;

    match log.rows.last() {
        Some(last) => println!(
            "trained {} levels on {} samples; final train accuracy {:.4}",
            cfg.train.levels(),
            train_split.len(),
            last.train_acc
        ),
        None => println!("initialized {} levels without training epochs", cfg.train.levels()),
    }
    println!("wrote {}", ckpt_path.display());
    println!("wrote {}", log_path.display());
    Ok(())
}

fn load_checkpoint(explicit: Option<PathBuf>, cfg: &ConfigArgs) -> Result<(Checkpoint, PathBuf)> {
    let path = match explicit {
        Some(p) => p,
        None => cfg.resolve()?.output_dir.join("checkpoint.mrtoc"),
    };
    let ckpt = Checkpoint::load(&path).map_err(|e| match e {
        Error::Io(io) => {
            Error::Contract(format!("cannot read checkpoint {}: {io}", path.display()))
        }
        other => other,
    })?;
    Ok((ckpt, path))
}

fn eval(args: EvalArgs) -> Result<()> {
    let (ckpt, _) = load_checkpoint(args.checkpoint, &args.cfg)?;
    let mut cfg = ckpt.config.clone();
    args.cfg.apply(&mut cfg)?;

    let ds = cfg.data.load(cfg.seed)?;
    let (_, test_split) = ds.split(cfg.train_fraction, cfg.seed)?;
    let trained = ckpt.model.codebook.trained_levels();
    let level = args.level.unwrap_or(trained);
    let trials = args.trials.unwrap_or(cfg.eval.trials);

    let result =
        sweep_levels_eps(&ckpt.model, &[level], &[args.eps], &test_split, trials, cfg.seed)?;
    let row = &result.rows[0];
    let path = args.out.unwrap_or_else(|| cfg.output_dir.join("eval.csv"));
    echo_config(&cfg)?;
    let mut w = BufWriter::new(File::create(&path)?);
    result.write_csv(&mut w, &cfg.preamble()?)?;
    w.flush()?;

    println!(
        "level {} ({} bits) at eps {}: accuracy {:.4} (stderr {:.4}, n {})",
        row.level, row.bits, row.eps_test, row.accuracy, row.stderr, row.n
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>().map_err(|_| Error::Config(format!("{what} entry {s:?} is not a number")))
        })
        .collect()
}

fn sweep(args: SweepArgs) -> Result<()> {
    let (ckpt, _) = load_checkpoint(args.checkpoint, &args.cfg)?;
    let mut cfg = ckpt.config.clone();
    args.cfg.apply(&mut cfg)?;

    let ds = cfg.data.load(cfg.seed)?;
    let (_, test_split) = ds.split(cfg.train_fraction, cfg.seed)?;
    let trained = ckpt.model.codebook.trained_levels();
    let levels: Vec<usize> = match &args.levels {
        Some(text) => parse_list(text, "--levels")?,
        None => (1..=trained).collect(),
    };
    let eps_list = match &args.eps_list {
        Some(text) => parse_list(text, "--eps-list")?,
        None => cfg.eval.eps_list.clone(),
    };
    let p_e_list = match &args.p_e_list {
        Some(text) => parse_list(text, "--p-e-list")?,
        None => cfg.eval.p_e_list.clone(),
    };
    let trials = args.trials.unwrap_or(cfg.eval.trials);

    let mut result = SweepResult { rows: Vec::new() };
    if !eps_list.is_empty() {
        result.rows.extend(
            sweep_levels_eps(&ckpt.model, &levels, &eps_list, &test_split, trials, cfg.seed)?.rows,
        );
    }
    if !p_e_list.is_empty() {
        result.rows.extend(
            sweep_ber(&ckpt.model, &levels, &p_e_list, &test_split, trials, cfg.seed)?.rows,
        );
    }
    if result.rows.is_empty() {
        return Err(Error::Config(
            "nothing to sweep: eval.eps_list and eval.p_e_list are both empty".into(),
        ));
    }

    let path = args.out.unwrap_or_else(|| cfg.output_dir.join("sweep.csv"));
    echo_config(&cfg)?;
    let mut w = BufWriter::new(File::create(&path)?);
    result.write_csv(&mut w, &cfg.preamble()?)?;
    w.flush()?;
    println!("wrote {} rows to {}", result.rows.len(), path.display());
    Ok(())
}

fn run_select_level(args: SelectLevelArgs) -> Result<()> {
    let cfg = args.cfg.resolve()?;
    let need = |flag: &str, key: &str| {
        Error::Config(format!("select-level needs {flag} (or {key} in the config)"))
    };
    let v_bit = args
        .vbit
        .or(cfg.rate.as_ref().map(|r| r.v_bit))
        .ok_or_else(|| need("--vbit", "rate.v_bit"))?;
    let tau =
        args.tau.or(cfg.rate.as_ref().map(|r| r.tau)).ok_or_else(|| need("--tau", "rate.tau"))?;
    let m = args.m.unwrap_or(cfg.train.m);
    let k_max = args.kmax.unwrap_or(cfg.train.k_max);

    let ctx = RateContext { v_bit, tau, m_subvectors: m, k_max, p_e: args.p_e };
    let level = select_level(&ctx)?;
    println!("{level}");
    Ok(())
}

fn dump_codebook(args: DumpArgs) -> Result<()> {
    let (ckpt, _) = load_checkpoint(args.checkpoint, &args.cfg)?;
    let mut cfg = ckpt.config.clone();
    args.cfg.apply(&mut cfg)?;
    let preamble = cfg.preamble()?;
    match args.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let mut w = BufWriter::new(File::create(&path)?);
            for line in &preamble {
                writeln!(w, "# {line}")?;
            }
            ckpt.model.codebook.write_csv(&mut w)?;
            w.flush()?;
            println!("wrote {}", path.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for line in &preamble {
                writeln!(w, "# {line}")?;
            }
            ckpt.model.codebook.write_csv(&mut w)?;
        }
    }
    Ok(())
}
