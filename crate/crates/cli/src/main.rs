//! `latinev` command-line driver.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use latinev::combinatorics::{count_arrangements, count_derangements, count_partial, count_permutations};
use latinev::effects::{decompose, error_grid, estimate_all, observe_all, pairwise_error_matrix, ErrorGrid};
use latinev::enumeration::{enumerate, square_cover, AssembleOptions, CapPolicy, CoverConfig, EnumConfig, EnumerationError, Scope};
use latinev::harness::curves::{even_steps, learning_curve, CurveConfig, CurveRecord, Task};
use latinev::harness::estimators::{estimator_benchmark, plan_for, BenchConfig};
use latinev::harness::experiments::{flatness_study, omitted_study, ordering_study, OmittedStudy, OrderingStudy};
use latinev::harness::{logo_task, LearnerKind, LogoConfig};
use latinev::orderings::Strategy;
use latinev::power::{bisection_simulate, power_report, MinSplitMode};
use latinev::sample::{load_sample, subpop_index, LoadOptions, Sample};
use latinev::simgen::{generate, Case, GenSpec, OutcomeKind};
use serde::Serialize;
use serde_json::json;

const EXIT_INPUT: u8 = 2;
const EXIT_CAP: u8 = 3;

#[derive(Parser)]
#[command(name = "latinev", version, about = "External validity of effect observations in binary-factor samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Input {
    /// Sample CSV: header row, 0/1 factor columns
    #[arg(long)]
    input: PathBuf,
    /// Outcome column name
    #[arg(long)]
    outcome: Option<String>,
}

#[derive(Args)]
struct Output {
    /// Output file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Permutation, derangement and fixed-point class counts
    Count {
        #[arg(short, long)]
        m: usize,
        #[arg(short, long, default_value_t = 0)]
        d: usize,
    },
    /// Permutation matrix and square inventory
    Enumerate {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        output: Output,
        /// One square per line
        #[arg(long)]
        squares: Option<PathBuf>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long, default_value_t = latinev::enumeration::DEFAULT_ROW_CAP)]
        row_cap: usize,
        /// Keep the first rows instead of failing at the cap
        #[arg(long)]
        truncate: bool,
        #[arg(long, default_value_t = 2)]
        min_size: usize,
        /// Keep one square per reference instead of per rotation orbit
        #[arg(long)]
        per_reference: bool,
    },
    /// Per-factor effect estimates and external validity from a square cover
    Ev {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        output: Output,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        min_size: usize,
        #[arg(long)]
        max_size: Option<usize>,
        /// Include the pairwise error matrix
        #[arg(long)]
        pairwise: bool,
        /// Write the factor-by-depth error grid of this square size
        #[arg(long, requires = "grid_out")]
        grid_size: Option<usize>,
        #[arg(long)]
        grid_out: Option<PathBuf>,
    },
    /// Required sample sizes from the minimum split probability
    Power {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        output: Output,
        #[arg(long)]
        n_target: Option<u64>,
        /// Minimum over all orderings instead of the marginal bound
        #[arg(long)]
        exact: bool,
    },
    /// Frequencies of orderings built from random blocks
    Bisect {
        #[arg(short, long)]
        m: usize,
        #[arg(short, long)]
        k: usize,
        #[arg(long, default_value_t = 100_000)]
        draws: u64,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Order the sample's units
    Order {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        output: Output,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        seed: u64,
    },
    /// Generate a synthetic sample and its ground truth
    Simulate {
        #[command(flatten)]
        gen: Gen,
        /// Sample CSV
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Learning curve under one ordering
    Curve {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        output: Output,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long, default_value = "logistic")]
        learner: LearnerKind,
        /// Number of evenly spaced steps over the internal section
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 0.25)]
        external_fraction: f64,
        #[arg(long, default_value = "outcome")]
        task: Task,
        #[arg(long)]
        seed: u64,
        /// csv or json; inferred from --out when omitted
        #[arg(long)]
        format: Option<String>,
    },
    /// Estimator benchmark across orderings
    Bench {
        #[command(flatten)]
        gen: Gen,
        #[command(flatten)]
        output: Output,
        #[arg(long)]
        n_sub: usize,
        #[arg(long, default_value_t = 30)]
        runs: usize,
        #[arg(long, value_delimiter = ',', default_value = "random,square_vertical,square_horizontal")]
        strategies: Vec<Strategy>,
        #[arg(long, default_value_t = 0.05)]
        caliper: f64,
        /// Average g-computation over the generator's profile distribution
        #[arg(long)]
        standardize: bool,
    },
    /// Two-way decomposition of a factor-by-depth error grid
    Decompose {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Leave-one-group-out prediction
    Logo {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        output: Output,
        #[arg(long)]
        group: String,
        #[arg(long, default_value = "logistic")]
        learner: LearnerKind,
        /// Append each group's common square error as a feature
        #[arg(long)]
        with_eps_sq: bool,
        #[arg(long, default_value_t = 2)]
        square_size: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Multi-run simulation studies
    Study {
        #[command(subcommand)]
        kind: StudyKind,
    },
}

#[derive(Subcommand)]
enum StudyKind {
    /// External accuracy of orderings against random, paired over runs
    Ordering {
        #[command(flatten)]
        gen: Gen,
        #[command(flatten)]
        output: Output,
        #[arg(long, default_value_t = 30)]
        runs: usize,
        #[arg(long, value_delimiter = ',', default_value = "random,square_vertical,tsp")]
        strategies: Vec<Strategy>,
        #[arg(long, default_value = "logistic")]
        learner: LearnerKind,
    },
    /// Pairwise error level and depth slope by square size
    Flatness {
        #[command(flatten)]
        gen: Gen,
        #[command(flatten)]
        output: Output,
        #[arg(long, default_value_t = 30)]
        runs: usize,
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6")]
        sizes: Vec<usize>,
    },
    /// Common square error as columns are removed
    Omitted {
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 30)]
        runs: usize,
        #[arg(long, default_value_t = 2)]
        square_size: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Args)]
struct Gen {
    #[arg(long, default_value = "additive")]
    case: Case,
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Copy probability for the correlated case
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value = "bernoulli")]
    outcome_kind: OutcomeKind,
}

impl Gen {
    fn spec(&self) -> GenSpec {
        GenSpec { rho: self.rho, outcome: self.outcome_kind, ..GenSpec::new(self.case, self.m, self.n, self.seed) }
    }
}

fn load(input: &Input, group: Option<&str>) -> Result<Sample> {
    let f = File::open(&input.input).with_context(|| format!("opening {}", input.input.display()))?;
    let opts = LoadOptions { outcome: input.outcome.clone(), group: group.map(str::to_string) };
    Ok(load_sample(BufReader::new(f), &opts)?)
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn emit<T: Serialize>(out: &Output, value: &T) -> Result<()> {
    let mut w = sink(out.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_curve_csv(w: &mut dyn Write, records: &[CurveRecord]) -> Result<()> {
    writeln!(w, "step,n,strategy,learner,task,internal_acc,external_acc,seed,external_digest")?;
    for r in records {
        let task = match r.task {
            Task::Outcome => "outcome",
            Task::Diff => "diff",
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.step, r.n, r.strategy, r.learner, task, r.internal_acc, r.external_acc, r.seed, r.external_digest
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Count { m, d } => {
            if d > m {
                bail!("d = {d} exceeds m = {m}");
            }
            let value = json!({
                "m": m,
                "d": d,
                "permutations": count_permutations(m)?,
                "derangements": count_derangements(m)?,
                "partial": count_partial(m, d)?,
                "arrangements": count_arrangements(m, d)?,
            });
            emit(&Output { out: None }, &value)
        }
        Command::Enumerate { input, output, squares, max_len, row_cap, truncate, min_size, per_reference } => {
            let s = load(&input, None)?;
            let cfg = EnumConfig { max_len, row_cap, on_cap: if truncate { CapPolicy::Truncate } else { CapPolicy::Error } };
            let scope = if per_reference { Scope::PerReference } else { Scope::Orbit };
            let (sqs, inv) = enumerate(&s, &cfg, &AssembleOptions { min_size, scope })?;
            if let Some(path) = squares {
                let mut w = sink(Some(&path))?;
                for q in &sqs {
                    serde_json::to_writer(&mut w, q)?;
                    writeln!(w)?;
                }
                w.flush()?;
            }
            emit(&output, &inv)
        }
        Command::Ev { input, output, seed, min_size, max_size, pairwise, grid_size, grid_out } => {
            let s = load(&input, None)?;
            if !s.has_outcomes() {
                bail!("ev needs an outcome column (--outcome)");
            }
            let cover = CoverConfig { min_size, max_size: max_size.unwrap_or(usize::MAX), ..CoverConfig::default() };
            let squares = square_cover(&s, &cover, seed);
            let obs = observe_all(&squares, &s);
            let factors: Vec<_> = estimate_all(&obs, s.m())
                .into_iter()
                .enumerate()
                .map(|(i, e)| json!({ "factor": i, "name": s.factor_names()[i], "estimate": e }))
                .collect();
            if let (Some(k), Some(path)) = (grid_size, grid_out) {
                let grid = error_grid(&obs, k, &(0..s.m()).collect::<Vec<_>>());
                grid.write_csv(File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
            }
            let mut value = json!({
                "m": s.m(),
                "n": s.n(),
                "seed": seed,
                "squares": squares.len(),
                "observations": obs.len(),
                "factors": factors,
            });
            if pairwise {
                value["pairwise"] = serde_json::to_value(pairwise_error_matrix(&obs, None))?;
            }
            emit(&output, &value)
        }
        Command::Power { input, output, n_target, exact } => {
            let s = load(&input, None)?;
            let mode = if exact { MinSplitMode::Exact } else { MinSplitMode::Marginal };
            let mut value = serde_json::to_value(power_report(&s, n_target, mode)?)?;
            value["subpopulations"] = serde_json::to_value(subpop_index(&s).stats())?;
            emit(&output, &value)
        }
        Command::Bisect { m, k, draws, seed, output } => {
            let r = bisection_simulate(m, k, draws, seed)?;
            let test = r.uniformity();
            emit(&output, &json!({ "result": r, "uniformity": test }))
        }
        Command::Order { input, output, strategy, seed } => {
            let s = load(&input, None)?;
            emit(&output, &plan_for(&s, strategy, &CoverConfig::default(), seed))
        }
        Command::Simulate { gen, out, truth } => {
            let (s, t) = generate(&gen.spec())?;
            let mut w = sink(Some(&out))?;
            s.write_csv(&mut w, "y")?;
            w.flush()?;
            if let Some(path) = truth {
                emit(&Output { out: Some(path) }, &t)?;
            }
            Ok(())
        }
        Command::Curve { input, output, strategy, learner, steps, external_fraction, task, seed, format } => {
            let s = load(&input, None)?;
            let plan = plan_for(&s, strategy, &CoverConfig::default(), seed);
            let internal = s.n() - (s.n() as f64 * external_fraction).round() as usize;
            let cfg = CurveConfig {
                external_fraction,
                task,
                ..CurveConfig::new(learner, even_steps(internal, steps), seed)
            };
            let records = learning_curve(&s, &plan, &cfg)?;
            let csv = match format.as_deref() {
                Some("csv") => true,
                Some("json") => false,
                Some(other) => bail!("unknown format '{other}' (expected csv or json)"),
                None => output.out.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "csv")),
            };
            if csv {
                let mut w = sink(output.out.as_deref())?;
                write_curve_csv(&mut w, &records)?;
                w.flush()?;
                Ok(())
            } else {
                emit(&output, &records)
            }
        }
        Command::Bench { gen, output, n_sub, runs, strategies, caliper, standardize } => {
            let cfg = BenchConfig { caliper, standardize_gcomp: standardize, ..BenchConfig::new(strategies, n_sub, runs, gen.seed) };
            emit(&output, &estimator_benchmark(&gen.spec(), &cfg)?)
        }
        Command::Decompose { grid, baseline, output } => {
            let read = |p: &Path| -> Result<ErrorGrid> {
                let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                Ok(ErrorGrid::read_csv(BufReader::new(f))?)
            };
            let g = read(&grid)?;
            let b = baseline.as_deref().map(read).transpose()?;
            emit(&output, &decompose(&g, b.as_ref())?)
        }
        Command::Logo { input, output, group, learner, with_eps_sq, square_size, seed } => {
            let s = load(&input, Some(&group))?;
            let cfg = LogoConfig { square_size, ..LogoConfig::new(learner, with_eps_sq, seed) };
            emit(&output, &logo_task(&s, &cfg)?)
        }
        Command::Study { kind } => match kind {
            StudyKind::Ordering { gen, output, runs, strategies, learner } => {
                let mut study = OrderingStudy::new(gen.spec(), runs, gen.seed);
                study.strategies = strategies;
                study.learner = learner;
                emit(&output, &ordering_study(&study)?)
            }
            StudyKind::Flatness { gen, output, runs, sizes } => {
                emit(&output, &flatness_study(&gen.spec(), &sizes, runs, gen.seed)?)
            }
            StudyKind::Omitted { m, n, runs, square_size, seed, output } => {
                let study = OmittedStudy { m, square_size, ..OmittedStudy::new(n, runs, seed) };
                emit(&output, &omitted_study(&study)?)
            }
        },
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<EnumerationError>() {
        Some(EnumerationError::RowCap { .. }) => EXIT_CAP,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
