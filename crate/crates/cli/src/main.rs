use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use shuffle_rdp::mc::{estimate_beta_at_alpha, estimate_renyi_plugin_orders, McEstimate};
use shuffle_rdp::sgd::{
    plan_epsilon0, run_shuffled_sgd, two_blobs, LogisticLoss, PlanOutcome, PlanTarget, SgdConfig, SquaredLoss,
};
use shuffle_rdp::tradeoff::{h_closed_form_with_tol, ClosedFormPoint};
use shuffle_rdp::{
    corollary2_rdp, feldman_ref, gdp_to_rdp, girgis_lower, girgis_upper, renyi_direct, theorem2_gdp, Error,
    RdpPoint, ShuffleAccountant, ShuffleParams, DEFAULT_TAIL_TOL,
};

const CSV_HEADER: &str = "epsilon0,n,lambda,method,epsilon,error_bound,flags";

const EXIT_IO: u8 = 1;
const EXIT_ARGS: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "shuffle-rdp", version, about = "Renyi DP accountant for shuffled LDP reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact RDP of the shuffled process at one order.
    Rdp(RdpArgs),
    /// Exact RDP against the closed-form bounds over a grid, as CSV.
    Compare(CompareArgs),
    /// Export the exact trade-off curve as CSV.
    Tradeoff(TradeoffArgs),
    /// Monte Carlo estimates of type-II errors and Renyi divergences.
    Simulate(SimulateArgs),
    /// Train shuffled noisy SGD on synthetic two-blob data.
    Sgd(SgdArgs),
    /// Choose the local budget epsilon0 that meets a privacy target.
    Plan(PlanArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct RdpArgs {
    #[arg(long)]
    epsilon0: f64,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_TAIL_TOL)]
    tail_tol: f64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
enum Method {
    Exact,
    Corollary2,
    Theorem2Gdp,
    GirgisUpper,
    GirgisLower,
    FeldmanRef,
}

impl Method {
    const ALL: [Method; 6] = [
        Method::Exact,
        Method::Corollary2,
        Method::Theorem2Gdp,
        Method::GirgisUpper,
        Method::GirgisLower,
        Method::FeldmanRef,
    ];

    fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Corollary2 => "corollary2",
            Method::Theorem2Gdp => "theorem2_gdp",
            Method::GirgisUpper => "girgis_upper",
            Method::GirgisLower => "girgis_lower",
            Method::FeldmanRef => "feldman_ref",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// lambda = 4, n = 10^4, fifteen epsilon0 values in [0.1, 3].
    Fig2,
    /// epsilon0 = 2, n = 10^4, lambda = 2..16.
    Fig3,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Comma-separated epsilon0 values.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    epsilon0: Vec<f64>,
    /// Evenly spaced epsilon0 values as `start:stop:count`.
    #[arg(long, conflicts_with = "epsilon0")]
    epsilon0_range: Option<String>,
    #[arg(long)]
    n: Option<u64>,
    /// Comma-separated orders.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    lambda: Vec<f64>,
    /// Integer orders as `start:stop`.
    #[arg(long, conflicts_with = "lambda")]
    lambda_range: Option<String>,
    /// Comma-separated methods; all by default.
    #[arg(long, value_enum, value_delimiter = ',', num_args = 0..)]
    methods: Option<Vec<Method>>,
    #[arg(long, default_value_t = DEFAULT_TAIL_TOL)]
    tail_tol: f64,
    /// Output file; stdout if omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TradeoffArgs {
    #[arg(long)]
    epsilon0: f64,
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = DEFAULT_TAIL_TOL)]
    tail_tol: f64,
    /// Replace the curve with its symmetrization.
    #[arg(long)]
    symmetrize: bool,
    /// Instead of the exact curve, evaluate the threshold closed form on this many evenly spaced alphas.
    #[arg(long)]
    closed_form: Option<usize>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    epsilon0: f64,
    /// Comma-separated type-I errors at which to estimate the type-II error.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    alpha: Vec<f64>,
    /// Comma-separated orders for plug-in Renyi estimates.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `csv` prints `alpha,beta_hat,stderr` rows only.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossKind {
    Logistic,
    Squared,
}

#[derive(Args)]
struct SgdArgs {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    blocks: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    /// Local budget; `inf` trains without noise.
    #[arg(long)]
    epsilon0: f64,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 2000)]
    examples: usize,
    /// Distance between the two blob centers.
    #[arg(long, default_value_t = 2.0)]
    separation: f64,
    #[arg(long, value_enum, default_value = "logistic")]
    loss: LossKind,
    #[arg(long, default_value_t = 2.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the loss trace as CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("target").required(true).args(["rdp_slope", "target_rdp", "target_gdp"]))]
struct PlanArgs {
    /// Target `(lambda, s * lambda)`-RDP for every order.
    #[arg(long)]
    rdp_slope: Option<f64>,
    /// Target epsilon at the order given by `--lambda`.
    #[arg(long, requires = "lambda")]
    target_rdp: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Target mu-GDP.
    #[arg(long)]
    target_gdp: Option<f64>,
    #[arg(long)]
    epochs: usize,
    #[arg(long)]
    blocks: usize,
}

enum Failure {
    Io(io::Error),
    Args(String),
    Lib(Error),
    Infeasible,
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Rdp(a) => cmd_rdp(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Tradeoff(a) => cmd_tradeoff(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sgd(a) => cmd_sgd(a),
        Command::Plan(a) => cmd_plan(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_IO)
        }
        Err(Failure::Args(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ARGS)
        }
        Err(Failure::Lib(e @ Error::Domain(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ARGS)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_IO)
        }
        Err(Failure::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
    }
}

fn open_output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn print_json<T: Serialize>(value: &T) -> CmdResult {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct OutputRecord {
    epsilon0: f64,
    n: u64,
    lambda: f64,
    method: Method,
    epsilon: f64,
    error_bound: f64,
    flags: Vec<&'static str>,
}

impl OutputRecord {
    fn new(params: &ShuffleParams, method: Method, point: &RdpPoint) -> Self {
        Self {
            epsilon0: params.epsilon0,
            n: params.n,
            lambda: point.lambda,
            method,
            epsilon: point.epsilon,
            error_bound: point.error_bound,
            flags: point.flags.iter().map(|f| f.as_str()).collect(),
        }
    }

    fn csv_row(&self) -> String {
        format!(
            "{:?},{},{:?},{},{:?},{:?},{}",
            self.epsilon0,
            self.n,
            self.lambda,
            self.method.name(),
            self.epsilon,
            self.error_bound,
            self.flags.join(";")
        )
    }
}

fn cmd_rdp(a: RdpArgs) -> CmdResult {
    let params = ShuffleParams::new(a.epsilon0, a.n)?;
    let point = ShuffleAccountant::new(&params, a.tail_tol)?.rdp(a.lambda)?;
    let record = OutputRecord::new(&params, Method::Exact, &point);
    match a.format {
        Format::Json => print_json(&record),
        Format::Csv => {
            let mut out = io::stdout().lock();
            writeln!(out, "{CSV_HEADER}")?;
            writeln!(out, "{}", record.csv_row())?;
            Ok(())
        }
    }
}

fn parse_range(spec: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Failure::Args(format!("cannot parse range `{spec}`"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    match parts.as_slice() {
        [start, stop, count] => {
            let (start, stop) = (num(start)?, num(stop)?);
            let count: usize = count.trim().parse().map_err(|_| bad())?;
            Ok(match count {
                0 => Vec::new(),
                1 => vec![start],
                _ => (0..count)
                    .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
                    .collect(),
            })
        }
        [start, stop] => {
            let (start, stop): (i64, i64) = (
                start.trim().parse().map_err(|_| bad())?,
                stop.trim().parse().map_err(|_| bad())?,
            );
            Ok((start..=stop).map(|v| v as f64).collect())
        }
        _ => Err(bad()),
    }
}

fn method_point(acc: Option<&ShuffleAccountant>, params: &ShuffleParams, method: Method, lambda: f64) -> Result<Option<RdpPoint>, Error> {
    Ok(Some(match method {
        Method::Exact => acc.expect("accountant built for exact rows").rdp(lambda)?,
        Method::Corollary2 => corollary2_rdp(params, lambda)?,
        Method::Theorem2Gdp => {
            let mut p = gdp_to_rdp(&theorem2_gdp(params)?, lambda)?;
            p.flags.push(shuffle_rdp::Flag::Asymptotic);
            p
        }
        Method::GirgisUpper => {
            if lambda.fract() != 0.0 || lambda > u32::MAX as f64 {
                log::warn!("girgis_upper needs an integer order; skipping lambda = {lambda}");
                return Ok(None);
            }
            girgis_upper(params, lambda as u32)?
        }
        Method::GirgisLower => girgis_lower(params, lambda)?,
        Method::FeldmanRef => feldman_ref(params, lambda)?,
    }))
}

fn cmd_compare(a: CompareArgs) -> CmdResult {
    let (mut eps, mut n, mut lambdas) = (a.epsilon0.clone(), a.n, a.lambda.clone());
    match a.preset {
        Some(Preset::Fig2) => {
            eps = parse_range("0.1:3:15")?;
            n = n.or(Some(10_000));
            lambdas = vec![4.0];
        }
        Some(Preset::Fig3) => {
            eps = vec![2.0];
            n = n.or(Some(10_000));
            lambdas = (2..=16).map(f64::from).collect();
        }
        None => {}
    }
    if let Some(r) = &a.epsilon0_range {
        eps = parse_range(r)?;
    }
    if let Some(r) = &a.lambda_range {
        lambdas = parse_range(r)?;
    }
    let n = n.ok_or_else(|| Failure::Args("--n is required without a preset".into()))?;
    let methods = match &a.methods {
        None => Method::ALL.to_vec(),
        Some(m) if m.is_empty() => return Err(Failure::Args("--methods must name at least one method".into())),
        Some(m) => {
            let mut m = m.clone();
            m.sort();
            m.dedup();
            m
        }
    };
    if eps.is_empty() || lambdas.is_empty() {
        return Err(Failure::Args("the epsilon0 and lambda grids must be nonempty".into()));
    }
    let params: Vec<ShuffleParams> = eps
        .iter()
        .map(|&e| ShuffleParams::new(e, n))
        .collect::<Result<_, _>>()?;
    let mut out = open_output(&a.output)?;

    let need_exact = methods.contains(&Method::Exact);
    let rows: Vec<OutputRecord> = params
        .par_iter()
        .map(|p| -> Result<Vec<OutputRecord>, Error> {
            let acc = if need_exact {
                Some(ShuffleAccountant::new(p, a.tail_tol)?)
            } else {
                None
            };
            let mut rows = Vec::new();
            for &l in &lambdas {
                for &m in &methods {
                    if let Some(point) = method_point(acc.as_ref(), p, m, l)? {
                        rows.push(OutputRecord::new(p, m, &point));
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut rows = rows;
    rows.sort_by(|x, y| {
        x.epsilon0
            .total_cmp(&y.epsilon0)
            .then(x.lambda.total_cmp(&y.lambda))
            .then(x.method.name().cmp(y.method.name()))
    });
    writeln!(out, "{CSV_HEADER}")?;
    for r in &rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_tradeoff(a: TradeoffArgs) -> CmdResult {
    let params = ShuffleParams::new(a.epsilon0, a.n)?;
    if let Some(k) = a.closed_form {
        if k < 2 {
            return Err(Failure::Args("--closed-form needs at least 2 points".into()));
        }
        let grid: Vec<f64> = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
        let points: Vec<ClosedFormPoint> = h_closed_form_with_tol(&params, &grid, a.tail_tol)?;
        let mut out = open_output(&a.output)?;
        writeln!(out, "alpha,beta,achieved_alpha,threshold")?;
        for p in points {
            writeln!(out, "{:?},{:?},{:?},{:?}", p.alpha, p.beta, p.achieved_alpha, p.threshold)?;
        }
        out.flush()?;
        return Ok(());
    }
    let acc = ShuffleAccountant::new(&params, a.tail_tol)?;
    let curve = if a.symmetrize {
        acc.curve().symmetrize()
    } else {
        acc.curve().clone()
    };
    let mut out = open_output(&a.output)?;
    writeln!(out, "alpha,beta")?;
    for (alpha, beta) in curve.breakpoints() {
        writeln!(out, "{alpha:?},{beta:?}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BetaPoint {
    alpha: f64,
    beta_hat: f64,
    stderr: f64,
    exact_beta: f64,
}

#[derive(Serialize)]
struct RenyiEstimate {
    lambda: f64,
    estimate: McEstimate,
    exact: f64,
}

#[derive(Serialize)]
struct SimulateReport {
    epsilon0: f64,
    n: u64,
    samples: u64,
    seed: u64,
    beta: Vec<BetaPoint>,
    renyi: Vec<RenyiEstimate>,
}

fn cmd_simulate(a: SimulateArgs) -> CmdResult {
    let params = ShuffleParams::new(a.epsilon0, a.n)?;
    if a.alpha.is_empty() && a.lambda.is_empty() {
        return Err(Failure::Args("give --alpha and/or --lambda".into()));
    }
    let acc = ShuffleAccountant::new(&params, DEFAULT_TAIL_TOL)?;
    let mut beta = Vec::new();
    for &alpha in &a.alpha {
        let est = estimate_beta_at_alpha(&params, alpha, a.samples, a.seed)?;
        beta.push(BetaPoint {
            alpha,
            beta_hat: est.value,
            stderr: est.stderr,
            exact_beta: acc.curve().eval(alpha)?,
        });
    }
    let mut renyi = Vec::new();
    if !a.lambda.is_empty() {
        let ests = estimate_renyi_plugin_orders(&params, &a.lambda, a.samples, a.seed)?;
        for (&lambda, estimate) in a.lambda.iter().zip(ests) {
            let exact = renyi_direct(&acc.pair().p, &acc.pair().q, lambda)?.epsilon;
            renyi.push(RenyiEstimate { lambda, estimate, exact });
        }
    }
    match a.format {
        Format::Json => print_json(&SimulateReport {
            epsilon0: a.epsilon0,
            n: a.n,
            samples: a.samples,
            seed: a.seed,
            beta,
            renyi,
        }),
        Format::Csv => {
            let mut out = io::stdout().lock();
            writeln!(out, "alpha,beta_hat,stderr")?;
            for b in beta {
                writeln!(out, "{:?},{:?},{:?}", b.alpha, b.beta_hat, b.stderr)?;
            }
            Ok(())
        }
    }
}

fn cmd_sgd(a: SgdArgs) -> CmdResult {
    let cfg = SgdConfig {
        eta: a.eta,
        epochs: a.epochs,
        blocks: a.blocks,
        clip: a.clip,
        epsilon0: a.epsilon0,
        dim: a.dim,
        seed: a.seed,
    };
    let data = two_blobs(a.examples, a.dim, a.separation, a.seed);
    let report = match a.loss {
        LossKind::Logistic => run_shuffled_sgd(&data, &LogisticLoss, &cfg, a.lambda)?,
        LossKind::Squared => run_shuffled_sgd(&data, &SquaredLoss, &cfg, a.lambda)?,
    };
    if let Some(path) = &a.loss_csv {
        let mut f = BufWriter::new(File::create(path)?);
        report.write_loss_csv(&mut f)?;
        f.flush()?;
    }
    print_json(&report)
}

#[derive(Serialize)]
struct PlanReport {
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'static str>,
    /// Privacy reached as epsilon0 -> 0+, in the target's units.
    #[serde(skip_serializing_if = "Option::is_none")]
    minimal: Option<f64>,
}

fn cmd_plan(a: PlanArgs) -> CmdResult {
    let target = match (a.rdp_slope, a.target_rdp, a.target_gdp) {
        // epsilon0 from the slope does not depend on the order
        (Some(s), _, _) => PlanTarget::Rdp { lambda: 2.0, epsilon: 2.0 * s },
        (_, Some(e), _) => PlanTarget::Rdp {
            lambda: a.lambda.expect("clap enforces --lambda"),
            epsilon: e,
        },
        (_, _, Some(mu)) => PlanTarget::Gdp { mu },
        _ => unreachable!("clap enforces one target"),
    };
    let outcome = plan_epsilon0(&target, a.epochs, a.blocks)?;
    match outcome {
        PlanOutcome::Feasible { epsilon0 } => print_json(&PlanReport {
            status: "feasible",
            epsilon0: Some(epsilon0),
            reason: None,
            minimal: None,
        }),
        PlanOutcome::Infeasible { minimal } => {
            let minimal = match (a.rdp_slope, target) {
                (Some(_), PlanTarget::Rdp { lambda, .. }) => minimal / lambda,
                _ => minimal,
            };
            print_json(&PlanReport {
                status: "infeasible",
                epsilon0: None,
                reason: Some("infeasible"),
                minimal: Some(minimal),
            })?;
            Err(Failure::Infeasible)
        }
    }
}
