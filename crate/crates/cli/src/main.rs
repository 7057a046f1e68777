//! `causal-panel`: reconstruct survey histories, code regional policies,
//! estimate staggered-adoption effects and run simulation benchmarks.

mod commands;
mod config;
mod filter;
mod output;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use causal_panel::did::{BasePeriod, ControlGroup};
use causal_panel::policy::DateRule;
use causal_panel::Year;
use clap::{Args, Parser, Subcommand};

use config::{ClusterBy, DidInference, Method, RunConfig};

#[derive(Parser)]
#[command(name = "causal-panel", version, about)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for the estimators (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write wall-clock timings as JSON to this file.
    #[arg(long, global = true)]
    timings: Option<PathBuf>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rebuild annual smoking histories from survey records.
    Reconstruct(ReconstructArgs),
    /// Code policy effective dates into annual regional indicators.
    Policies(PolicyArgs),
    /// Estimate event-time effects from a panel CSV.
    Estimate(EstimateArgs),
    /// Draw a synthetic panel with known effects.
    Simulate(SimulateArgs),
    /// Monte Carlo bias, RMSE and coverage of the estimators.
    Benchmark(BenchmarkArgs),
    /// Run the `[[sweep]]` columns of the configuration in one invocation.
    Sweep(SweepArgs),
}

fn parse_years(s: &str) -> Result<(Year, Year), String> {
    let (a, b) = s.split_once(':').ok_or("expected FROM:TO")?;
    let a: Year = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: Year = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a > b {
        return Err(format!("{a} is after {b}"));
    }
    Ok((a, b))
}

fn parse_window(s: &str) -> Result<(i32, i32), String> {
    let (a, b) = s.split_once(':').ok_or("expected FROM:TO, e.g. -10:5")?;
    let a: i32 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: i32 = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((a, b))
}

#[derive(Args, Default)]
struct OutArg {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Default)]
struct ReconstructFlags {
    #[arg(long)]
    min_age: Option<u32>,
    #[arg(long)]
    earliest_year: Option<Year>,
    /// Keep at most this many years of history per respondent.
    #[arg(long)]
    history_cap: Option<u32>,
    #[arg(long, value_enum)]
    date_rule: Option<DateRuleArg>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DateRuleArg {
    CalendarYear,
    MidYear,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    survey: Option<PathBuf>,
    #[arg(long)]
    policies: Option<PathBuf>,
    #[command(flatten)]
    flags: ReconstructFlags,
    /// Also write composition shares of the panel against the survey.
    #[arg(long)]
    composition: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long)]
    policies: Option<PathBuf>,
    /// Years to code, FROM:TO.
    #[arg(long, value_parser = parse_years)]
    years: Option<(Year, Year)>,
    #[arg(long, value_enum)]
    date_rule: Option<DateRuleArg>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Default)]
struct EstimateFlags {
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Row predicate applied before estimation, e.g. `gender=1`; repeatable.
    #[arg(long)]
    filter: Vec<String>,
    /// Treat the outcome as continuous rather than 0/1.
    #[arg(long)]
    continuous_outcome: bool,
    #[arg(long, value_enum)]
    cluster_by: Option<ClusterBy>,
    #[arg(long, value_enum)]
    did_inference: Option<DidInference>,
    /// IFEct point estimates only.
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long, value_enum)]
    control_group: Option<ControlGroupArg>,
    /// Comma-separated covariate names.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long)]
    interact: bool,
    #[arg(long, value_enum)]
    base_period: Option<BasePeriodArg>,
    /// Event-time window FROM:TO.
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    window: Option<(i32, i32)>,
    #[arg(long)]
    max_rank: Option<usize>,
    /// Fixed IFEct rank, skipping cross-validation.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    bootstrap_reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ControlGroupArg {
    NotYetTreated,
    NeverTreated,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum BasePeriodArg {
    VaryingPre,
    AnchorGMinus1,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    panel: Option<PathBuf>,
    #[command(flatten)]
    flags: EstimateFlags,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct SimulateArgs {
    /// DGP spec as TOML or JSON; replaces the `[simulate]` section.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n_units: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    survey: Option<PathBuf>,
    #[arg(long)]
    policies: Option<PathBuf>,
    #[command(flatten)]
    flags: EstimateFlags,
    #[command(flatten)]
    out: OutArg,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

fn date_rule(arg: Option<DateRuleArg>) -> Option<DateRule> {
    arg.map(|a| match a {
        DateRuleArg::CalendarYear => DateRule::CalendarYear,
        DateRuleArg::MidYear => DateRule::MidYear,
    })
}

impl ReconstructFlags {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.reconstruct.min_age, self.min_age);
        set(&mut cfg.reconstruct.earliest_year, self.earliest_year);
        if self.history_cap.is_some() {
            cfg.reconstruct.history_cap_years = self.history_cap;
        }
        set(&mut cfg.policy.date_rule, date_rule(self.date_rule));
    }
}

impl EstimateFlags {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.estimate.method, self.method);
        if !self.filter.is_empty() {
            cfg.estimate.filters = self.filter;
        }
        cfg.estimate.continuous_outcome |= self.continuous_outcome;
        set(&mut cfg.estimate.cluster_by, self.cluster_by);
        set(&mut cfg.estimate.did_inference, self.did_inference);
        cfg.estimate.skip_ifect_bootstrap |= self.no_bootstrap;
        set(
            &mut cfg.did.control_group,
            self.control_group.map(|c| match c {
                ControlGroupArg::NotYetTreated => ControlGroup::NotYetTreated,
                ControlGroupArg::NeverTreated => ControlGroup::NeverTreated,
            }),
        );
        if let Some(c) = self.covariates {
            cfg.did.covariates = c.clone();
            cfg.ifect.covariates = c;
        }
        cfg.did.interact_covariates |= self.interact;
        set(
            &mut cfg.did.base_period,
            self.base_period.map(|b| match b {
                BasePeriodArg::VaryingPre => BasePeriod::VaryingPre,
                BasePeriodArg::AnchorGMinus1 => BasePeriod::AnchorGMinus1,
            }),
        );
        if let Some(w) = self.window {
            cfg.did.window = w;
            cfg.ifect.window = w;
        }
        set(&mut cfg.ifect.max_rank, self.max_rank);
        if self.rank.is_some() {
            cfg.ifect.rank = self.rank;
        }
        if let Some(r) = self.bootstrap_reps {
            cfg.bootstrap.reps = r;
            cfg.ifect.bootstrap_reps = r;
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
    }
}

fn resolve(cli_config: Option<&PathBuf>, command: Command) -> Result<(&'static str, RunConfig)> {
    let mut cfg = match cli_config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let name = match command {
        Command::Reconstruct(a) => {
            set_path(&mut cfg.paths.survey, a.survey);
            set_path(&mut cfg.paths.policies, a.policies);
            set_path(&mut cfg.paths.out, a.out.out);
            a.flags.apply(&mut cfg);
            cfg.composition |= a.composition;
            "reconstruct"
        }
        Command::Policies(a) => {
            set_path(&mut cfg.paths.policies, a.policies);
            set_path(&mut cfg.paths.out, a.out.out);
            if a.years.is_some() {
                cfg.policy.years = a.years;
            }
            set(&mut cfg.policy.date_rule, date_rule(a.date_rule));
            "policies"
        }
        Command::Estimate(a) => {
            set_path(&mut cfg.paths.panel, a.panel);
            set_path(&mut cfg.paths.out, a.out.out);
            a.flags.apply(&mut cfg);
            "estimate"
        }
        Command::Simulate(a) => {
            if let Some(p) = &a.spec {
                cfg.simulate = config::load_spec(p)?;
            }
            set_path(&mut cfg.paths.spec, a.spec);
            set_path(&mut cfg.paths.out, a.out.out);
            set(&mut cfg.simulate.n_units, a.n_units);
            if a.seed.is_some() {
                cfg.seed = a.seed;
            }
            "simulate"
        }
        Command::Benchmark(a) => {
            set_path(&mut cfg.paths.out, a.out.out);
            set(&mut cfg.benchmark.reps, a.reps);
            if a.seed.is_some() {
                cfg.seed = a.seed;
            }
            "benchmark"
        }
        Command::Sweep(a) => {
            set_path(&mut cfg.paths.panel, a.panel);
            set_path(&mut cfg.paths.survey, a.survey);
            set_path(&mut cfg.paths.policies, a.policies);
            set_path(&mut cfg.paths.out, a.out.out);
            a.flags.apply(&mut cfg);
            "sweep"
        }
    };
    cfg.resolve_seed();
    cfg.paths.validate()?;
    Ok((name, cfg))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let timings_path = cli.timings.clone();
    let (name, cfg) = resolve(cli.config.as_ref(), cli.command)?;
    if cli.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let mut timings = commands::Timings::default();
    match name {
        "reconstruct" => commands::reconstruct(&cfg, &mut timings)?,
        "policies" => commands::policies(&cfg, &mut timings)?,
        "estimate" => commands::estimate(&cfg, &mut timings)?,
        "simulate" => commands::simulate(&cfg, &mut timings)?,
        "benchmark" => commands::run_benchmark(&cfg, &mut timings)?,
        "sweep" => commands::sweep(&cfg, &mut timings)?,
        _ => unreachable!(),
    }
    if let Some(p) = timings_path {
        let text = serde_json::to_string_pretty(&timings)?;
        std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
