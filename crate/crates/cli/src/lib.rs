//! Command-line front end: certify, search, attack, train and report.

pub mod error;
pub mod report;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polyenv::attack::{attack_dataset, AttackConfig};
use polyenv::envelope::{certify_dataset, search_bisection, search_optimal_eps};
use polyenv::model::{load_dataset, load_model, save_model};
use polyenv::synthetic::random_network;
use polyenv::train::{train_with_log, EpsilonSchedule, TrainConfig};
use polyenv::{Activation, AdversarialBudget, Dataset, InputBox, NeuralNetwork, Norm, Propagator};
use rayon::prelude::*;

use crate::error::{CliError, Result};
use crate::report::{Format, Report};

#[derive(Parser, Debug)]
#[command(name = "polyenv", version, about = "Polyhedral envelope certification and robust training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Certify every row of a dataset and write a report.
    Certify(CertifyArgs),
    /// Search the largest certifiable ε per row.
    Search(SearchArgs),
    /// Run PGD on every row and print the empirical robust error.
    Attack(AttackArgs),
    /// Train a network and save it.
    Train(TrainArgs),
    /// Summarize a report file after checking its aggregates.
    Report(ReportArgs),
}

fn parse_norm(s: &str) -> std::result::Result<Norm, String> {
    Norm::parse(s).map_err(|e| e.to_string())
}

fn parse_propagator(s: &str) -> std::result::Result<Propagator, String> {
    Propagator::parse(s).map_err(|e| e.to_string())
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    Activation::parse(s).map_err(|e| e.to_string())
}

fn parse_box(s: &str) -> std::result::Result<InputBox, String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("`{lo}` is not a number"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("`{hi}` is not a number"))?;
    InputBox::new(lo, hi).map_err(|e| e.to_string())
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    Format::parse(s)
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Model file (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset file (CSV, label first).
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct BudgetArgs {
    /// Norm of the adversarial ball: 2 or inf.
    #[arg(long, value_parser = parse_norm)]
    pub norm: Norm,
    /// Input box as `lo,hi`.
    #[arg(long = "box", value_parser = parse_box, default_value = "0,1", conflicts_with = "no_box")]
    pub input_box: InputBox,
    /// Do not intersect the ball with an input box.
    #[arg(long)]
    pub no_box: bool,
}

impl BudgetArgs {
    fn budget(&self, eps: f64) -> Result<AdversarialBudget> {
        let budget = AdversarialBudget::new(self.norm, eps).map_err(|e| CliError::flag("--eps", e))?;
        Ok(if self.no_box { budget } else { budget.with_box(self.input_box) })
    }

    fn bounds(&self) -> Option<InputBox> {
        (!self.no_box).then_some(self.input_box)
    }
}

#[derive(Args, Debug, Clone)]
pub struct PgdArgs {
    /// PGD iterations.
    #[arg(long, default_value_t = 40)]
    pub steps: usize,
    /// PGD restarts; later restarts start at random points of the ball.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// PGD step size (default 2.5·ε/steps).
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Seed of the attack; row i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl PgdArgs {
    fn config(&self) -> Result<AttackConfig> {
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CliError::flag("--step-size", format!("must be positive, got {s}")));
            }
        }
        Ok(AttackConfig {
            steps: self.steps,
            step_size: self.step_size,
            restarts: self.restarts,
            seed: self.seed,
        })
    }
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    /// Radius of the adversarial budget.
    #[arg(long, allow_negative_numbers = true)]
    pub eps: f64,
    #[arg(long, value_parser = parse_propagator, default_value = "backward")]
    pub propagator: Propagator,
    /// Also run PGD and record per-row success.
    #[arg(long)]
    pub attack: bool,
    #[command(flatten)]
    pub pgd: PgdArgs,
    /// Report path; printed as CSV to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format: csv or json (default from the --out extension).
    #[arg(long, value_parser = parse_format)]
    pub format: Option<Format>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[arg(long, value_parser = parse_propagator, default_value = "backward")]
    pub propagator: Propagator,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub lo: f64,
    #[arg(long, default_value_t = 0.4)]
    pub hi: f64,
    /// Bracket width at which the search stops (default (hi − lo)/4096).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Per-row CSV path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub eps: f64,
    #[command(flatten)]
    pub pgd: PgdArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Initial model; use --init to start from a random network instead.
    #[arg(long, conflicts_with = "init", required_unless_present = "init")]
    pub model: Option<PathBuf>,
    /// Layer widths of a random initial network, e.g. 2,16,16,2.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub init: Option<Vec<usize>>,
    /// Activation of the random initial network.
    #[arg(long, value_parser = parse_activation, default_value = "relu")]
    pub activation: Activation,
    /// Seed of the random initial network.
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub budget: BudgetArgs,
    /// Target ε of the training budget.
    #[arg(long, allow_negative_numbers = true)]
    pub eps: f64,
    /// Training config (JSON); flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Rows per batch that get the regularizer.
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Number of smallest distances in the hinge.
    #[arg(long)]
    pub top: Option<usize>,
    /// Epochs without the regularizer.
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Anchor the loss at PGD points (PER+at; plain adversarial training with --gamma 0).
    #[arg(long)]
    pub use_at: bool,
    /// Start ε here and double it every --eps-every epochs up to --eps.
    #[arg(long, requires = "eps_every")]
    pub eps_initial: Option<f64>,
    #[arg(long, requires = "eps_initial")]
    pub eps_every: Option<usize>,
    #[arg(long, value_parser = parse_propagator)]
    pub propagator: Option<Propagator>,
    /// Training seed (shuffling, subsampling, attack starts).
    #[arg(long)]
    pub seed: Option<u64>,
    /// PGD iterations used during training.
    #[arg(long)]
    pub attack_steps: Option<usize>,
    /// Where to save the trained model.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch log (CSV).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Report file (CSV or JSON by extension).
    pub input: PathBuf,
}

fn load_inputs(args: &DataArgs, bounds: Option<InputBox>) -> Result<(NeuralNetwork, Dataset)> {
    let net = load_model(&args.model).map_err(|e| CliError::flag("--model", e))?;
    let data = load_dataset(&args.data).map_err(|e| CliError::flag("--data", e))?;
    data.validate(net.input_dim(), net.num_classes(), bounds)
        .map_err(|e| CliError::flag("--data", e))?;
    Ok((net, data))
}

fn write_text(path: Option<&Path>, text: &str, out: &mut dyn std::io::Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => out.write_all(text.as_bytes()).map_err(|source| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{:.2}%", 100.0 * v))
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"))
}

fn summary(report: &Report) -> String {
    let a = &report.aggregates;
    let [full, partial, none] = report.phase_counts();
    let binary = a.binary_average_bound(report.epsilon);
    let mut s = String::new();
    writeln!(
        s,
        "{} inputs, l{} ball, eps {}, {} propagation",
        report.records.len(),
        report.norm.name(),
        report.epsilon,
        report.propagator.name()
    )
    .unwrap();
    writeln!(s, "phases: {full} full, {partial} partial, {none} none").unwrap();
    writeln!(s, "CTE {}  PGD {}  CRE {}", pct(a.clean_error), pct(a.pgd_error), pct(a.certified_error)).unwrap();
    writeln!(s, "ACB {}  (binary certifier {})", num(a.average_bound), num(binary)).unwrap();
    s
}

fn certify(args: &CertifyArgs, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> Result<()> {
    let budget = args.budget.budget(args.eps)?;
    let attack = args.pgd.config()?;
    let (net, data) = load_inputs(&args.data, args.budget.bounds())?;
    let certs = certify_dataset(&net, &data, &budget, args.propagator)?;
    let flags = if args.attack {
        Some(attack_dataset(&net, &data, &budget, &attack)?)
    } else {
        None
    };
    let report = Report::new(&certs, &budget, args.propagator, flags.as_deref());
    let format = args
        .format
        .or_else(|| args.out.as_deref().map(Format::from_path))
        .unwrap_or(Format::Csv);
    match &args.out {
        Some(path) => {
            report::write_report(&report, path, format)?;
            let _ = write!(out, "{}", summary(&report));
        }
        None => {
            write_text(None, &report::render(&report, format)?, out)?;
            let _ = write!(err, "{}", summary(&report));
        }
    }
    Ok(())
}

fn search(args: &SearchArgs, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> Result<()> {
    if !(args.lo >= 0.0 && args.lo.is_finite()) {
        return Err(CliError::flag("--lo", format!("must be a finite value >= 0, got {}", args.lo)));
    }
    if !(args.hi > args.lo && args.hi.is_finite()) {
        return Err(CliError::flag("--hi", format!("must be finite and above --lo, got {}", args.hi)));
    }
    let tol = args.tol.unwrap_or((args.hi - args.lo) / 4096.0);
    if !(tol > 0.0) {
        return Err(CliError::flag("--tol", format!("must be positive, got {tol}")));
    }
    let budget = args.budget.budget(args.hi)?;
    let (net, data) = load_inputs(&args.data, args.budget.bounds())?;
    let rows: Vec<_> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = (&data.inputs[i], data.labels[i]);
            let pec = search_optimal_eps(&net, x, y, &budget, args.lo, args.hi, tol, args.propagator)?;
            let binary = search_bisection(&net, x, y, &budget, args.lo, args.hi, tol, args.propagator)?;
            Ok((pec, binary))
        })
        .collect::<polyenv::Result<_>>()?;

    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::flag("--out", e);
    writer
        .write_record(["index", "label", "epsilon", "iterations", "bisection_epsilon", "bisection_iterations"])
        .map_err(csv_err)?;
    for (i, (pec, binary)) in rows.iter().enumerate() {
        writer
            .write_record([
                i.to_string(),
                data.labels[i].to_string(),
                pec.epsilon.to_string(),
                pec.iterations.to_string(),
                binary.epsilon.to_string(),
                binary.iterations.to_string(),
            ])
            .map_err(csv_err)?;
    }
    let text = String::from_utf8(writer.into_inner().map_err(|e| CliError::flag("--out", e))?).expect("utf-8");
    write_text(args.out.as_deref(), &text, out)?;

    if !rows.is_empty() {
        let n = rows.len() as f64;
        let pec_calls = rows.iter().map(|(p, _)| p.iterations).sum::<usize>() as f64 / n;
        let bin_calls = rows.iter().map(|(_, b)| b.iterations).sum::<usize>() as f64 / n;
        let mean_eps = rows.iter().map(|(p, _)| p.epsilon).sum::<f64>() / n;
        let sink: &mut dyn std::io::Write = if args.out.is_some() { out } else { err };
        let _ = writeln!(
            sink,
            "{} inputs: mean optimal eps {mean_eps:.6}, mean calls {pec_calls:.2} vs bisection {bin_calls:.2} (ratio {:.3})",
            rows.len(),
            pec_calls / bin_calls
        );
    }
    Ok(())
}

fn attack(args: &AttackArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let budget = args.budget.budget(args.eps)?;
    let config = args.pgd.config()?;
    let (net, data) = load_inputs(&args.data, args.budget.bounds())?;
    let flags = attack_dataset(&net, &data, &budget, &config)?;
    let clean = polyenv::attack::clean_error(&net, &data)?;
    let robust = if flags.is_empty() {
        0.0
    } else {
        flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
    };
    let _ = writeln!(
        out,
        "{} inputs, l{} ball, eps {}: clean error {}, PGD error {}",
        data.len(),
        budget.norm.name(),
        budget.epsilon,
        pct(Some(clean)),
        pct(Some(robust))
    );
    Ok(())
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            serde_json::from_str::<TrainConfig>(&text).map_err(|e| CliError::flag("--config", e))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.subsample {
        cfg.subsample = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.top {
        cfg.top = v;
    }
    if let Some(v) = args.warmup {
        cfg.warmup_epochs = v;
    }
    if args.use_at {
        cfg.use_at = true;
    }
    if let (Some(initial), Some(every)) = (args.eps_initial, args.eps_every) {
        cfg.schedule = EpsilonSchedule::Doubling { initial, every };
    }
    if let Some(v) = args.propagator {
        cfg.propagator = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.attack_steps {
        cfg.attack.steps = v;
    }
    Ok(cfg)
}

fn train(args: &TrainArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let budget = args.budget.budget(args.eps)?;
    let mut config = train_config(args)?;
    let initial = match (&args.model, &args.init) {
        (Some(path), _) => load_model(path).map_err(|e| CliError::flag("--model", e))?,
        (None, Some(widths)) => {
            if widths.len() < 2 || widths.contains(&0) {
                return Err(CliError::flag("--init", "need at least two positive widths, e.g. 2,16,2"));
            }
            random_network(widths, args.activation, args.init_seed)
        }
        (None, None) => return Err(CliError::flag("--model", "either --model or --init is required")),
    };
    // A two-class network has a single competing class.
    if args.top.is_none() && initial.num_classes() <= config.top {
        config.top = initial.num_classes() - 1;
    }
    config.validate(initial.num_classes()).map_err(|e| CliError::flag("--config", e))?;
    let data = load_dataset(&args.data).map_err(|e| CliError::flag("--data", e))?;
    data.validate(initial.input_dim(), initial.num_classes(), budget.bounds)
        .map_err(|e| CliError::flag("--data", e))?;
    let (net, log) = train_with_log(&initial, &data, &config, &budget)?;
    save_model(&net, &args.out).map_err(|e| CliError::flag("--out", e))?;
    if let Some(path) = &args.log {
        let mut text = String::from("epoch,epsilon,regularized,mean_loss\n");
        for r in &log {
            writeln!(text, "{},{},{},{}", r.epoch, r.epsilon, r.regularized, r.mean_loss).unwrap();
        }
        write_text(Some(path), &text, out)?;
    }
    let last = log.last().map_or_else(|| "no epochs run".into(), |r| format!("final mean loss {:.6}", r.mean_loss));
    let _ = writeln!(out, "trained {} epochs, {last}; saved {}", log.len(), args.out.display());
    Ok(())
}

fn report_cmd(args: &ReportArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let report = report::read_report(&args.input)?;
    let _ = write!(out, "{}", summary(&report));
    Ok(())
}

/// Runs a parsed command, writing results to `out` and diagnostics to `err`.
pub fn run(cli: &Cli, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> Result<()> {
    match &cli.command {
        Command::Certify(a) => certify(a, out, err),
        Command::Search(a) => search(a, out, err),
        Command::Attack(a) => attack(a, out),
        Command::Train(a) => train(a, out),
        Command::Report(a) => report_cmd(a, out),
    }
}

/// Exit codes: 0 success, 1 runtime or input error, 2 usage error.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    match run(&cli, &mut stdout.lock(), &mut stderr.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
