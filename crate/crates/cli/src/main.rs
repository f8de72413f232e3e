//! `swmcrt`: stepped-wedge analysis with nested conditional randomization
//! tests.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 data error, 3 a
//! requested check failed.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use swmcrt::ci::{invert_combined, CIConfig};
use swmcrt::combine::{combine_result, weights_from_result, CombineMethod, Sidedness};
use swmcrt::io::{read_trial_csv, write_interval_csv, write_trial_csv, IntervalRow, TrialFile};
use swmcrt::mcrt::{build_schedule, run_mcrts, TestConfig};
use swmcrt::seed::{derive_seed, rng_from_seed, TAG_DATA};
use swmcrt::sim::{gen_outcomes, parse_study_config, preset, run_study, write_table, StudyConfig, Variances, PRESETS};
use swmcrt::validate::{builtin_scenario, parse_scenario, run_scenario, BUILTIN_SCENARIOS};

/// Seed used when `--seed` is absent.
const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "swmcrt", version, about = "Nested conditional randomization tests for stepped-wedge trials")]
struct App {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true, env = "SWMCRT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the lag schedule: one line per subset of time steps
    Schedule {
        /// Number of time steps
        #[arg(long = "T", visible_alias = "n-times")]
        n_times: usize,
        #[arg(long)]
        lag: usize,
        #[arg(long, value_enum, default_value_t = ScheduleFormat::Csv)]
        format: ScheduleFormat,
    },
    /// Test for a lagged effect and invert the test into an interval
    Analyze {
        /// Trial CSV: unit,crossover_time,y0..yT
        input: PathBuf,
        #[arg(long)]
        lag: usize,
        /// fisher, z (weighted Z-score) or bonferroni
        #[arg(long, default_value = "z")]
        combiner: CombineMethod,
        /// greater, less or two-sided
        #[arg(long, default_value = "two-sided")]
        alternative: Sidedness,
        /// The interval has level 1 - alpha
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Monte-Carlo draws per test when exact enumeration is too large
        #[arg(long, default_value_t = 999)]
        budget: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Per-test CSV (default: standard output)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Interval CSV
        #[arg(long)]
        ci_out: Option<PathBuf>,
    },
    /// Run a power or coverage study
    Simulate {
        /// Built-in study
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        /// TOML study file
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<usize>,
        /// Overrides the study's seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        budget: Option<usize>,
        /// Result CSV (default: standard output)
        #[arg(long)]
        out: Option<PathBuf>,
        /// No progress on standard error
        #[arg(long)]
        quiet: bool,
    },
    /// Check partition, nestedness and dominance conditions on a scenario
    Validate {
        /// Scenario TOML file
        #[arg(required_unless_present_any = ["builtin", "list"])]
        file: Option<PathBuf>,
        #[arg(long, conflicts_with = "file")]
        builtin: Option<String>,
        /// List built-in scenarios
        #[arg(long)]
        list: bool,
    },
    /// Write a synthetic trial CSV
    Generate {
        #[arg(long)]
        n_units: usize,
        #[arg(long = "T", visible_alias = "n-times")]
        n_times: usize,
        /// Effects by lag, comma separated (missing lags are 0)
        #[arg(long, value_delimiter = ',', default_value = "0")]
        taus: Vec<f64>,
        /// Unit-by-time interaction shape, 0 to 3
        #[arg(long, default_value_t = 0)]
        interaction: u8,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleFormat {
    Csv,
    Text,
}

/// An error plus the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, err: e.into() })
    }

    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 2, err: e.into() })
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn schedule(n_times: usize, lag: usize, format: ScheduleFormat) -> Result<u8, Failure> {
    let s = build_schedule(n_times, lag).usage()?;
    let mut out = io::stdout().lock();
    for (j, subset) in s.subsets().iter().enumerate() {
        let items: Vec<String> = subset.iter().map(|t| t.to_string()).collect();
        match format {
            ScheduleFormat::Csv => writeln!(out, "{}", items.join(",")),
            ScheduleFormat::Text => writeln!(out, "C_{} = {{{}}}", j + 1, items.join(", ")),
        }
        .data()?;
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn analyze(
    input: &Path,
    lag: usize,
    combiner: CombineMethod,
    side: Sidedness,
    alpha: f64,
    budget: usize,
    seed: u64,
    out: Option<&Path>,
    ci_out: Option<&Path>,
) -> Result<u8, Failure> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(anyhow!("--alpha must be in (0, 1), got {alpha}")).usage();
    }
    if budget == 0 {
        return Err(anyhow!("--budget must be positive")).usage();
    }
    let file = File::open(input).with_context(|| format!("cannot open {}", input.display())).data()?;
    let trial = read_trial_csv(file).with_context(|| input.display().to_string()).data()?;
    let data = &trial.data;
    let cfg = TestConfig { budget, seed, ..Default::default() };
    let result = run_mcrts(data, lag, &cfg).data()?;
    let weights = weights_from_result(&result).ok();
    let combined = combine_result(&result, combiner, side).data()?;
    let ci_cfg = CIConfig { alpha, budget, seed, ..Default::default() };
    let ci = invert_combined(data, lag, &ci_cfg, combiner);

    let mut w = output(out).data()?;
    writeln!(w, "k,subset,outcome_time,n_treated,n_control,statistic,p_less,p_greater,weight").data()?;
    for (i, t) in result.tests.iter().enumerate() {
        let weight = weights.as_ref().map_or("NA".to_string(), |wv| wv.weights()[i].to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            t.group.k,
            t.group.subset.map_or(0, |s| s + 1),
            t.group.outcome_time,
            t.n_treated,
            t.n_control,
            t.result.stat_obs,
            t.result.p_less,
            t.result.p_greater,
            weight
        )
        .data()?;
    }
    w.flush().data()?;
    drop(w);

    let mut summary: Box<dyn Write> = if out.is_some() { Box::new(io::stdout()) } else { Box::new(io::stderr()) };
    let s = &mut summary;
    let _ = writeln!(s, "lag {lag}: {} test(s), {} skipped", result.tests.len(), result.skipped.len());
    for sk in &result.skipped {
        let _ = writeln!(s, "  skipped k={}: {}", sk.k, sk.reason);
    }
    let _ = writeln!(s, "{combiner} ({side:?}): statistic {:.6}, p = {:.6}", combined.statistic, combined.p);
    match &ci {
        Ok(ci) => {
            let _ = writeln!(s, "{:.0}% interval for tau_{lag}: [{:.6}, {:.6}]", ci.level * 100.0, ci.lo, ci.hi);
        }
        Err(e) => {
            let _ = writeln!(s, "interval: {e}");
        }
    }
    if let Some(path) = ci_out {
        let ci = ci.data()?;
        let f = File::create(path).with_context(|| format!("cannot create {}", path.display())).data()?;
        write_interval_csv(BufWriter::new(f), &[IntervalRow { lag, method: combiner, interval: ci }]).data()?;
    }
    Ok(0)
}

fn simulate(
    preset_name: Option<&str>,
    config: Option<&Path>,
    replicates: Option<usize>,
    seed: Option<u64>,
    budget: Option<usize>,
    out: Option<&Path>,
    quiet: bool,
) -> Result<u8, Failure> {
    let mut cfg: StudyConfig = match (preset_name, config) {
        (Some(name), _) => preset(name).usage()?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).usage()?;
            parse_study_config(&text).with_context(|| path.display().to_string()).usage()?
        }
        (None, None) => return Err(anyhow!("give --preset ({}) or --config", PRESETS.join(", "))).usage(),
    };
    match replicates {
        Some(0) => return Err(anyhow!("--replicates must be positive")).usage(),
        Some(n) => cfg.set_replicates(n),
        None => {}
    }
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    match budget {
        Some(0) => return Err(anyhow!("--budget must be positive")).usage(),
        Some(b) => cfg.set_budget(b),
        None => {}
    }
    let mut progress = |done: usize, total: usize| {
        if !quiet {
            eprintln!("[{done}/{total}] done");
        }
    };
    let result = run_study(&cfg, &mut progress).data()?;
    for s in &result.skipped {
        eprintln!("skipped {s}");
    }
    let mut w = output(out).data()?;
    write_table(&mut w, &result.rows).data()?;
    w.flush().data()?;
    Ok(0)
}

fn validate(file: Option<&Path>, builtin: Option<&str>, list: bool) -> Result<u8, Failure> {
    if list {
        for (name, _) in BUILTIN_SCENARIOS {
            println!("{name}");
        }
        return Ok(0);
    }
    let scenario = match (file, builtin) {
        (_, Some(name)) => builtin_scenario(name).usage()?,
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).usage()?;
            parse_scenario(&text).with_context(|| path.display().to_string()).usage()?
        }
        (None, None) => return Err(anyhow!("give a scenario file or --builtin")).usage(),
    };
    let report = run_scenario(&scenario).data()?;
    println!("{report}");
    Ok(if report.passed() { 0 } else { 3 })
}

fn generate(
    n_units: usize,
    n_times: usize,
    taus: &[f64],
    interaction: u8,
    seed: u64,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let mut rng = rng_from_seed(derive_seed(seed, TAG_DATA));
    let data = gen_outcomes(n_units, n_times, taus, interaction, &Variances::default(), &mut rng).usage()?;
    let units = (1..=n_units).map(|i| format!("u{i}")).collect();
    let mut w = output(out).data()?;
    write_trial_csv(&mut w, &TrialFile { units, data }).data()?;
    w.flush().data()?;
    Ok(0)
}

fn run(app: App) -> Result<u8, Failure> {
    if let Some(n) = app.threads {
        if n == 0 {
            return Err(anyhow!("--threads must be positive")).usage();
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().usage()?;
    }
    match app.command {
        Command::Schedule { n_times, lag, format } => schedule(n_times, lag, format),
        Command::Analyze { input, lag, combiner, alternative, alpha, budget, seed, out, ci_out } => analyze(
            &input,
            lag,
            combiner,
            alternative,
            alpha,
            budget,
            seed,
            out.as_deref(),
            ci_out.as_deref(),
        ),
        Command::Simulate { preset, config, replicates, seed, budget, out, quiet } => simulate(
            preset.as_deref(),
            config.as_deref(),
            replicates,
            seed,
            budget,
            out.as_deref(),
            quiet,
        ),
        Command::Validate { file, builtin, list } => validate(file.as_deref(), builtin.as_deref(), list),
        Command::Generate { n_units, n_times, taus, interaction, seed, out } => {
            generate(n_units, n_times, &taus, interaction, seed, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let app = match App::try_parse() {
        Ok(app) => app,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(app) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
