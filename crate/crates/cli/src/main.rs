//! Command-line front end for subgroup construction, maxT testing, power
//! estimation and figure reproduction.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use subgroup_power::construction::{ConstructionSpec, Strategy, DEFAULT_POOL_SIZE};
use subgroup_power::invariance::{maxt, single_test_pvalue, ReferenceSet};
use subgroup_power::power::{fullgroup_power_approx, oracle_power, EffSignals, LeakMode};
use subgroup_power::rng::{substream, CONSTRUCTION_STREAM};
use subgroup_power::simulation::{
    estimate, figure_csv, format_sig6, reproduce_figure_with, Method, Scale, Scenario,
};
use subgroup_power::{DataMatrix, Subgroup, UnitVector};

#[derive(Debug, Parser)]
#[command(
    name = "subgroup-power",
    version,
    about = "Sign-flip invariance tests with selected subgroups"
)]
struct Cli {
    /// Seed for every random stream (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true, env = "SUBGROUP_POWER_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a subgroup and write it in text form.
    Construct(ConstructArgs),
    /// Single-hypothesis invariance test on one data column.
    Test(TestArgs),
    /// maxT multiple test on every column of an n x p data file.
    Maxt(MaxtArgs),
    /// Estimate power and FWER of one scenario by simulation or semi-analytically.
    Power(PowerArgs),
    /// Relative-efficiency signals and the crossover inequality.
    Releff(ReleffArgs),
    /// Reproduce the result grid behind one of the figures as CSV.
    Figure(FigureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum StrategyArg {
    Sylvester,
    Nonpositive,
    Nested,
    Greedy,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Sylvester => Strategy::SylvesterOracle,
            StrategyArg::Nonpositive => Strategy::NonPositive,
            StrategyArg::Nested => Strategy::NestedChain,
            StrategyArg::Greedy => Strategy::GreedyExtend,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ConstructArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    size: usize,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pool_size: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[group(required = true, multiple = false)]
struct ReferenceArgs {
    /// Subgroup file written by `construct`.
    #[arg(long)]
    subgroup: Option<PathBuf>,
    /// Monte Carlo reference: identity plus M - 1 uniform sign-flips.
    #[arg(long, value_name = "M")]
    mc: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct TestArgs {
    /// Headerless CSV, rows = observations.
    #[arg(long)]
    data: PathBuf,
    /// Zero-based column to test.
    #[arg(long, default_value_t = 0)]
    column: usize,
    #[command(flatten)]
    reference: ReferenceArgs,
    #[arg(long)]
    alpha: f64,
}

#[derive(Debug, Args, Serialize)]
struct MaxtArgs {
    /// Headerless CSV, rows = observations, columns = hypotheses.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    reference: ReferenceArgs,
    #[arg(long)]
    alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum MethodArg {
    Mc,
    Oracle,
    Nonpositive,
    Nested,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Analytic {
    /// Semi-analytic oracle-subgroup power of size `--size`.
    Oracle,
    /// Full-group approximation with a Gaussian leak.
    FullgroupGaussian,
    /// Full-group approximation with the exact sphere-coordinate leak.
    FullgroupSphere,
}

#[derive(Debug, Args, Serialize)]
struct PowerArgs {
    /// TOML or JSON file with the scenario fields; replaces the scenario flags.
    #[arg(long, conflicts_with_all = ["n", "p", "mu", "prop_false", "alpha", "method", "size", "reps", "pool_size"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    n: Option<usize>,
    #[arg(long, required_unless_present = "config")]
    p: Option<usize>,
    #[arg(long, required_unless_present = "config")]
    mu: Option<f64>,
    #[arg(long)]
    prop_false: Option<f64>,
    #[arg(long, required_unless_present = "config")]
    alpha: Option<f64>,
    #[arg(long, value_enum, required_unless_present = "config")]
    method: Option<MethodArg>,
    /// Subgroup size, or number of Monte Carlo draws.
    #[arg(long, required_unless_present = "config")]
    size: Option<usize>,
    #[arg(long, required_unless_present = "config")]
    reps: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    /// Use a semi-analytic formula instead of simulating data.
    #[arg(long, value_enum)]
    analytic: Option<Analytic>,
    /// Write runtime as 0 so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args, Serialize)]
struct ReleffArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ScaleArg {
    Desk,
    Full,
}

#[derive(Debug, Args, Serialize)]
struct FigureArgs {
    /// Figure number, 1 to 4.
    #[arg(long)]
    id: u8,
    #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write runtime_s as 0 so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Lib(#[from] subgroup_power::Error),
    #[error("{0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_domain() => 3,
            CliError::Lib(_) | CliError::Config(_) => 2,
            CliError::Write { .. } => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Construct(args) => construct(&args, seed),
        Command::Test(args) => test(&args, seed),
        Command::Maxt(args) => run_maxt(&args, seed),
        Command::Power(args) => power(&args, cli.seed),
        Command::Releff(args) => releff(&args, seed),
        Command::Figure(args) => figure(&args, seed),
    }
}

/// Logs the resolved configuration to stderr and returns it as a `# ` header line.
fn config_line(command: &str, seed: u64, args: &impl Serialize) -> String {
    let value = serde_json::json!({ "command": command, "seed": seed, "args": args });
    let line = format!("# config {value}");
    eprintln!("{line}");
    line
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Write {
            path: path.display().to_string(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|source| CliError::Write {
                    path: "stdout".into(),
                    source,
                })
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn read_data(path: &Path) -> CliResult<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    CliError::Config(format!(
                        "{}: row {} has non-numeric value {field:?}",
                        path.display(),
                        i + 1
                    ))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Config(format!(
            "{} contains no rows",
            path.display()
        )));
    }
    Ok(DataMatrix::from_rows(&rows)?)
}

fn reference_set(args: &ReferenceArgs, n: usize, seed: u64) -> CliResult<ReferenceSet> {
    match (&args.subgroup, args.mc) {
        (Some(path), _) => {
            let group = Subgroup::from_text(&read_text(path)?)?;
            if group.n() != n {
                return Err(CliError::Config(format!(
                    "subgroup has n = {}, data has {n} rows",
                    group.n()
                )));
            }
            Ok(ReferenceSet::exact(&group))
        }
        (None, Some(m)) => Ok(ReferenceSet::monte_carlo(n, m, &mut substream(seed, 0))?),
        (None, None) => Err(CliError::Config(
            "one of --subgroup or --mc is required".into(),
        )),
    }
}

fn construct(args: &ConstructArgs, seed: u64) -> CliResult<()> {
    let header = config_line("construct", seed, args);
    let spec = ConstructionSpec {
        n: args.n,
        target_size: args.size,
        strategy: args.strategy.into(),
        pool_size: args.pool_size,
    };
    let group = spec.build(&mut substream(seed, CONSTRUCTION_STREAM))?;
    emit(
        args.out.as_deref(),
        &format!("{header}\n{}", group.to_text()),
    )
}

fn test(args: &TestArgs, seed: u64) -> CliResult<()> {
    let header = config_line("test", seed, args);
    let x = read_data(&args.data)?;
    if args.column >= x.cols() {
        return Err(CliError::Config(format!(
            "column {} out of range, data has {}",
            args.column,
            x.cols()
        )));
    }
    let column = x.column(args.column);
    let reference = reference_set(&args.reference, x.rows(), seed)?;
    let iota = UnitVector::canonical(x.rows());
    let p_value = single_test_pvalue(&column, iota.as_slice(), &reference)?;
    let t: f64 = column.iter().zip(iota.as_slice()).map(|(x, w)| x * w).sum();
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Config(format!(
            "alpha must lie in (0, 1), got {}",
            args.alpha
        )));
    }
    let reject = p_value <= args.alpha;
    emit(
        None,
        &format!(
            "{header}\nt,p_value,reject\n{},{},{reject}\n",
            format_sig6(t),
            format_sig6(p_value)
        ),
    )
}

fn run_maxt(args: &MaxtArgs, seed: u64) -> CliResult<()> {
    let header = config_line("maxt", seed, args);
    let x = read_data(&args.data)?;
    let reference = reference_set(&args.reference, x.rows(), seed)?;
    let iota = UnitVector::canonical(x.rows());
    let outcome = maxt(&x, iota.as_slice(), &reference, args.alpha)?;
    let mut text = format!("{header}\nhypothesis,t,p_value,reject\n");
    for (j, ((t, p), r)) in outcome
        .statistics
        .iter()
        .zip(&outcome.p_values)
        .zip(&outcome.rejected)
        .enumerate()
    {
        text.push_str(&format!(
            "{j},{},{},{r}\n",
            format_sig6(*t),
            format_sig6(*p)
        ));
    }
    text.push_str(&format!(
        "# rejections={} critical_value={}\n",
        outcome.rejection_count(),
        format_sig6(outcome.critical_value())
    ));
    emit(None, &text)
}

fn scenario_from_flags(args: &PowerArgs, seed: u64) -> CliResult<Scenario> {
    let missing = |flag: &str| CliError::Config(format!("--{flag} is required without --config"));
    let size = args.size.ok_or_else(|| missing("size"))?;
    let pool_size = args.pool_size.unwrap_or(DEFAULT_POOL_SIZE);
    let method = match args.method.ok_or_else(|| missing("method"))? {
        MethodArg::Mc => Method::monte_carlo(size),
        other => {
            let strategy = match other {
                MethodArg::Oracle => Strategy::SylvesterOracle,
                MethodArg::Nonpositive => Strategy::NonPositive,
                MethodArg::Nested => Strategy::NestedChain,
                _ => Strategy::GreedyExtend,
            };
            Method::ExactSubgroup {
                strategy,
                size,
                pool_size,
            }
        }
    };
    Ok(Scenario {
        n: args.n.ok_or_else(|| missing("n"))?,
        p: args.p.ok_or_else(|| missing("p"))?,
        mu_value: args.mu.ok_or_else(|| missing("mu"))?,
        prop_false: args.prop_false.unwrap_or(1.0),
        alpha: args.alpha.ok_or_else(|| missing("alpha"))?,
        method,
        reps: args.reps.ok_or_else(|| missing("reps"))?,
        seed,
    })
}

fn scenario_from_file(path: &Path, seed: Option<u64>) -> CliResult<Scenario> {
    let text = read_text(path)?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut scenario: Scenario = if is_json {
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn power(args: &PowerArgs, seed: Option<u64>) -> CliResult<()> {
    let scenario = match &args.config {
        Some(path) => scenario_from_file(path, seed)?,
        None => scenario_from_flags(args, seed.unwrap_or(0))?,
    };
    scenario.validate()?;
    let resolved = serde_json::json!({ "scenario": &scenario, "analytic": args.analytic, "no_timing": args.no_timing });
    let header = config_line("power", scenario.seed, &resolved);

    let text = match args.analytic {
        None => {
            let r = estimate(&scenario)?;
            let runtime = if args.no_timing {
                "0".to_string()
            } else {
                format_sig6(r.runtime_s)
            };
            format!(
                "{header}\nmethod,power,se,fwer,se_fwer,runtime_s,seed\n{},{},{},{},{},{runtime},{}\n",
                scenario.method.label(),
                format_sig6(r.power),
                format_sig6(r.se_power),
                format_sig6(r.fwer),
                format_sig6(r.se_fwer),
                scenario.seed
            )
        }
        Some(kind) => {
            let mut rng = substream(scenario.seed, 0);
            let est = match kind {
                Analytic::Oracle => {
                    let size = match scenario.method {
                        Method::ExactSubgroup { size, .. } => size,
                        Method::MonteCarlo { draws } => draws,
                    };
                    let mu = scenario.means();
                    let k = scenario.false_count();
                    oracle_power(
                        scenario.n,
                        &mu,
                        k,
                        size,
                        scenario.alpha,
                        scenario.reps,
                        &mut rng,
                        None,
                    )?
                }
                Analytic::FullgroupGaussian | Analytic::FullgroupSphere => {
                    let mode = if kind == Analytic::FullgroupSphere {
                        LeakMode::SphereLeak
                    } else {
                        LeakMode::GaussianLeak
                    };
                    fullgroup_power_approx(
                        scenario.n,
                        scenario.p,
                        scenario.mu_value,
                        scenario.alpha,
                        scenario.reps,
                        &mut rng,
                        mode,
                    )?
                }
            };
            format!(
                "{header}\npower,se,seed\n{},{},{}\n",
                format_sig6(est.value),
                format_sig6(est.se),
                scenario.seed
            )
        }
    };
    emit(None, &text)
}

fn releff(args: &ReleffArgs, seed: u64) -> CliResult<()> {
    let header = config_line("releff", seed, args);
    let s = EffSignals::compute(args.n, args.p, args.alpha)?;
    let favored = if s.oracle_favored() {
        "oracle_subgroup"
    } else {
        "full_group"
    };
    let text = format!(
        "{header}\nmu_os={}\nmu_h={}\na={}\nb={}\nc={}\nlhs={}\nrhs={}\nfavored={favored}\n",
        format_sig6(s.mu_os),
        format_sig6(s.mu_h),
        format_sig6(s.a),
        format_sig6(s.b),
        format_sig6(s.c),
        format_sig6(s.lhs),
        format_sig6(s.rhs),
    );
    emit(None, &text)
}

fn figure(args: &FigureArgs, seed: u64) -> CliResult<()> {
    config_line("figure", seed, args);
    let scale = match args.scale {
        ScaleArg::Desk => Scale::Desk,
        ScaleArg::Full => Scale::Full,
    };
    let rows = reproduce_figure_with(args.id, scale, seed, |row| {
        eprintln!(
            "figure {} panel {} curve {} x {}: power {}",
            row.figure,
            row.panel,
            row.curve,
            format_sig6(row.x),
            format_sig6(row.power)
        );
    })?;
    emit(args.out.as_deref(), &figure_csv(&rows, !args.no_timing))
}
