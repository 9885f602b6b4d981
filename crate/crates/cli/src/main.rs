use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sectoral::analysis::{collapse_country, correlate_rural};
use sectoral::fit::{default_bounds, fit_all, FitConfig, DEFAULT_MIN_OBS, DEFAULT_THRESHOLD};
use sectoral::ingest::{
    self, assemble_series, format_for_path, join_auxiliary, parse_exclusions, read_exclusions, read_indicators,
    read_results, write_results, write_rows, Assembly, CleaningConfig, Format, HeaderFields, IndicatorTable,
    ParseOptions, SeriesCodes, DEFAULT_EXCLUSIONS, RURAL_POPULATION,
};
use sectoral::numerics::{rk4_integrate, uniform_grid};
use sectoral::sce::Bounds;
use sectoral::{ModelParams, SectorShares};

/// Fit and analyse the three-sector GDP composition transfer model.
#[derive(Debug, Parser)]
#[command(name = "sectoral", version)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "Shared options")]
struct Shared {
    /// Base seed for the optimizer
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Largest summed per-sector MSE of an accepted fit
    #[arg(long, global = true, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Listed countries keep only years from this one on
    #[arg(long, global = true, default_value_t = 1995)]
    cutoff_year: i32,
    /// File of country codes subject to the cutoff (default: built-in list)
    #[arg(long, global = true, value_name = "PATH")]
    exclusions: Option<PathBuf>,
    /// Minimum number of usable years for a country to be fitted (not used by correlate)
    #[arg(long, global = true, default_value_t = DEFAULT_MIN_OBS)]
    min_years: usize,
    /// First year read from indicator files
    #[arg(long, global = true, default_value_t = ingest::DEFAULT_FIRST_YEAR)]
    first_year: i32,
    /// Last year read from indicator files
    #[arg(long, global = true, default_value_t = ingest::DEFAULT_LAST_YEAR)]
    last_year: i32,
    /// Output file (default: standard output; `fit` writes results.csv)
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Output format (default: from the --out extension, else csv)
    #[arg(long, global = true, value_name = "csv|json")]
    format: Option<Format>,
    /// Worker threads for fitting (default: all processors)
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit every eligible country and write the results file
    Fit(FitArgs),
    /// Transform observations with fitted parameters onto the collapse diagonal
    Collapse(CollapseArgs),
    /// Tabulate model shares over a range of g
    Simulate(SimulateArgs),
    /// Correlate ln(agrarian share) with the rural population fraction
    Correlate(CorrelateArgs),
    /// Print the transfer type of a parameter set or of a results file
    Classify(ClassifyArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Indicator file(s), wide or long layout
    #[arg(long = "input", short, required = true, value_name = "PATH")]
    inputs: Vec<PathBuf>,
    /// Search interval for k2
    #[arg(long, value_name = "LO,HI", value_parser = parse_interval)]
    k2_bounds: Option<(f64, f64)>,
    /// Search interval for alpha
    #[arg(long, value_name = "LO,HI", value_parser = parse_interval)]
    alpha_bounds: Option<(f64, f64)>,
    /// Search interval for g0
    #[arg(long, value_name = "LO,HI", value_parser = parse_interval)]
    g0_bounds: Option<(f64, f64)>,
    /// Optimizer evaluation budget per country
    #[arg(long, default_value_t = 50_000)]
    max_evaluations: usize,
}

#[derive(Debug, Args)]
struct CollapseArgs {
    /// Indicator file(s) holding the observations
    #[arg(long = "input", short, required = true, value_name = "PATH")]
    inputs: Vec<PathBuf>,
    /// Results file written by `fit`
    #[arg(long, value_name = "PATH")]
    results: PathBuf,
    /// Restrict to these countries (repeatable; default: every fitted country)
    #[arg(long = "country", value_name = "CODE")]
    countries: Vec<String>,
    /// Skip countries whose fit was not accepted
    #[arg(long)]
    accepted_only: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Rate of transfer out of agriculture
    #[arg(long, allow_negative_numbers = true)]
    k1: f64,
    /// Rate of transfer from industry to services
    #[arg(long, allow_negative_numbers = true)]
    k2: f64,
    /// Fraction of the agrarian outflow that goes to industry
    #[arg(long, allow_negative_numbers = true)]
    alpha: f64,
    /// g at which a = 1
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
    g0: f64,
    /// Start of the g range (default: g0)
    #[arg(long, allow_negative_numbers = true)]
    g_start: Option<f64>,
    /// End of the g range (default: g0 + 6)
    #[arg(long, allow_negative_numbers = true)]
    g_end: Option<f64>,
    /// Spacing of output rows
    #[arg(long, default_value_t = 0.01)]
    interval: f64,
    /// Integrate the ODE with RK4 from g0 instead of using closed forms
    #[arg(long)]
    rk4: bool,
    /// RK4 step size
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    /// Indicator file(s) with GDP per capita and sector shares
    #[arg(long = "input", short, required = true, value_name = "PATH")]
    inputs: Vec<PathBuf>,
    /// Indicator file holding the rural population series
    #[arg(long, value_name = "PATH")]
    rural: PathBuf,
    /// Series code of the rural population percentage
    #[arg(long, default_value = RURAL_POPULATION)]
    rural_series: String,
    /// Year of the cross-section
    #[arg(long, default_value_t = 2005)]
    year: i32,
    /// Restrict to countries present in this results file
    #[arg(long, value_name = "PATH")]
    results: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    /// Rate of transfer out of agriculture
    #[arg(long, allow_negative_numbers = true, default_value_t = 1.0)]
    k1: f64,
    /// Rate of transfer from industry to services
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.5)]
    k2: f64,
    /// Fraction of the agrarian outflow that goes to industry
    #[arg(long, allow_negative_numbers = true, required_unless_present = "results")]
    alpha: Option<f64>,
    /// Classify every row of a results file instead
    #[arg(long, value_name = "PATH", conflicts_with = "alpha")]
    results: Option<PathBuf>,
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi}: {e}"))?;
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(format!("empty interval {lo},{hi}"));
    }
    Ok((lo, hi))
}

impl Shared {
    fn cleaning(&self) -> Result<CleaningConfig> {
        let excluded_before_cutoff = match &self.exclusions {
            Some(path) => read_exclusions(path)?,
            None => parse_exclusions(DEFAULT_EXCLUSIONS),
        };
        Ok(CleaningConfig {
            cutoff_year: self.cutoff_year,
            excluded_before_cutoff,
            min_years: self.min_years,
            ..CleaningConfig::default()
        })
    }

    fn parse_options(&self, series: &[&str]) -> Result<ParseOptions> {
        if self.first_year > self.last_year {
            bail!(
                "--first-year {} is after --last-year {}",
                self.first_year,
                self.last_year
            );
        }
        Ok(ParseOptions::for_series(series.iter().copied()).with_years(self.first_year, self.last_year))
    }

    fn output_format(&self) -> Format {
        self.format
            .unwrap_or_else(|| self.out.as_deref().map(format_for_path).unwrap_or_default())
    }
}

fn read_tables(paths: &[PathBuf], opts: &ParseOptions) -> Result<IndicatorTable> {
    let mut table = IndicatorTable::default();
    for path in paths {
        let part = read_indicators(path, opts).map_err(|e| match e {
            e @ ingest::IngestError::Io { .. } => anyhow!(e),
            e => anyhow!(e).context(format!("reading {}", path.display())),
        })?;
        table.merge(part);
    }
    Ok(table)
}

fn load_series(shared: &Shared, paths: &[PathBuf], cleaning: &CleaningConfig) -> Result<(IndicatorTable, Assembly)> {
    let codes = SeriesCodes::default();
    let table = read_tables(paths, &shared.parse_options(&codes.all())?)?;
    let assembly = assemble_series(&table, &codes, cleaning);
    Ok((table, assembly))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
}

fn emit<T: Serialize + HeaderFields>(shared: &Shared, rows: &[T]) -> Result<()> {
    let format = shared.output_format();
    match &shared.out {
        Some(path) => {
            let mut w = create(path)?;
            write_rows(rows, &mut w, format)?;
            w.flush().with_context(|| format!("writing {}", path.display()))?;
        }
        None => write_rows(rows, io::stdout().lock(), format)?,
    }
    Ok(())
}

fn cmd_fit(shared: &Shared, args: &FitArgs) -> Result<ExitCode> {
    let (_, assembly) = load_series(shared, &args.inputs, &shared.cleaning()?)?;
    let defaults = default_bounds();
    let range = |k: usize, over: Option<(f64, f64)>| over.unwrap_or((defaults.lower()[k], defaults.upper()[k]));
    let bounds = Bounds::new(&[
        range(0, args.k2_bounds),
        range(1, args.alpha_bounds),
        range(2, args.g0_bounds),
    ])?;
    let mut config = FitConfig {
        threshold: shared.threshold,
        bounds,
        seed: shared.seed,
        min_obs: shared.min_years,
        ..FitConfig::default()
    };
    config.optimizer.max_evaluations = args.max_evaluations;

    let report = fit_all(&assembly.series, &config, shared.jobs.map(|n| n as usize));
    for failure in &report.failures {
        eprintln!("{}: {}", failure.code, failure.error);
    }
    let out = shared.out.clone().unwrap_or_else(|| match shared.output_format() {
        Format::Csv => PathBuf::from("results.csv"),
        Format::Json => PathBuf::from("results.json"),
    });
    write_results(&report.results, &out, shared.output_format())?;

    if !assembly.excluded.is_empty() {
        println!("excluded: {}", assembly.excluded.len());
    }
    println!("{}", report.summary);
    Ok(if report.summary.accepted == 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_collapse(shared: &Shared, args: &CollapseArgs) -> Result<ExitCode> {
    let records = read_results(&args.results)?;
    let by_code: BTreeMap<&str, _> = records.iter().map(|r| (r.code.as_str(), r)).collect();
    let requested: BTreeSet<&str> = args.countries.iter().map(String::as_str).collect();
    for code in &requested {
        if !by_code.contains_key(code) {
            bail!("no fit for {code} in {}", args.results.display());
        }
    }
    let (_, assembly) = load_series(shared, &args.inputs, &shared.cleaning()?)?;
    let mut points = Vec::new();
    for series in &assembly.series {
        if !requested.is_empty() && !requested.contains(series.code.as_str()) {
            continue;
        }
        let Some(record) = by_code.get(series.code.as_str()) else {
            continue;
        };
        if args.accepted_only && !record.accepted {
            continue;
        }
        points.extend(collapse_country(series, record));
    }
    for code in &requested {
        if !assembly.series.iter().any(|s| s.code == *code) {
            eprintln!("{code}: no usable observations");
        }
    }
    emit(shared, &points)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    g: f64,
    a: f64,
    i: f64,
    s: f64,
}

impl HeaderFields for TrajectoryRow {
    const FIELDS: &'static [&'static str] = &["g", "a", "i", "s"];
}

fn cmd_simulate(shared: &Shared, args: &SimulateArgs) -> Result<ExitCode> {
    let params = ModelParams::new(args.k1, args.k2, args.alpha, args.g0);
    let start = args.g_start.unwrap_or(args.g0);
    let end = args.g_end.unwrap_or(args.g0 + 6.0);
    let grid = uniform_grid(start, end, args.interval)
        .map_err(|_| anyhow!("invalid g range [{start}, {end}] with interval {}", args.interval))?;
    let rows: Vec<TrajectoryRow> = if args.rk4 {
        if start < args.g0 {
            bail!(
                "--rk4 integrates forward from g0 = {}; --g-start {start} lies before it",
                args.g0
            );
        }
        let mut state = SectorShares::new(1.0, 0.0, 0.0);
        let mut at = args.g0;
        let mut rows = Vec::with_capacity(grid.len());
        for &g in &grid {
            if g > at {
                let traj = rk4_integrate(&params, at, state, g, args.step)?;
                state = traj.last().expect("trajectory has a start point").1;
                at = g;
            }
            rows.push(TrajectoryRow {
                g,
                a: state.a,
                i: state.i,
                s: state.s,
            });
        }
        rows
    } else {
        grid.iter()
            .map(|&g| {
                let sh = params.shares(g);
                TrajectoryRow {
                    g,
                    a: sh.a,
                    i: sh.i,
                    s: sh.s,
                }
            })
            .collect()
    };
    emit(shared, &rows)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Serialize)]
struct QuartileRow {
    quartile: usize,
    count: usize,
    gdp_min: f64,
    gdp_max: f64,
    mean_ln_a: f64,
    std_ln_a: f64,
    mean_rural: f64,
    std_rural: f64,
}

impl HeaderFields for QuartileRow {
    const FIELDS: &'static [&'static str] = &[
        "quartile",
        "count",
        "gdp_min",
        "gdp_max",
        "mean_ln_a",
        "std_ln_a",
        "mean_rural",
        "std_rural",
    ];
}

fn cmd_correlate(shared: &Shared, args: &CorrelateArgs) -> Result<ExitCode> {
    // A cross-section needs only the chosen year.
    let cleaning = CleaningConfig {
        min_years: 1,
        ..shared.cleaning()?
    };
    let (table, assembly) = load_series(shared, &args.inputs, &cleaning)?;
    if !table.years.contains(&args.year) {
        bail!("year {} is not covered by the indicator input", args.year);
    }
    let rural_table = read_tables(
        std::slice::from_ref(&args.rural),
        &shared.parse_options(&[&args.rural_series])?,
    )?;
    let rural = join_auxiliary(&rural_table, &args.rural_series, args.year)
        .with_context(|| format!("reading {}", args.rural.display()))?;
    let mut series = assembly.series;
    if let Some(path) = &args.results {
        let fitted: BTreeSet<String> = read_results(path)?.into_iter().map(|r| r.code).collect();
        series.retain(|s| fitted.contains(&s.code));
    }
    let corr = correlate_rural(&series, &rural, args.year)
        .map_err(|e| anyhow!("degenerate sample for year {}: {e}", args.year))?;

    println!("year: {}", args.year);
    println!("countries: {}", corr.codes.len());
    println!("pearson r: {:.6}", corr.r);
    let rows: Vec<QuartileRow> = match &corr.quartiles {
        Some(q) => q
            .groups
            .iter()
            .enumerate()
            .map(|(k, g)| QuartileRow {
                quartile: k + 1,
                count: g.count,
                gdp_min: g.key_min,
                gdp_max: g.key_max,
                mean_ln_a: g.mean_u,
                std_ln_a: g.std_u,
                mean_rural: g.mean_v,
                std_rural: g.std_v,
            })
            .collect(),
        None => {
            eprintln!("fewer than four countries, no quartile table");
            Vec::new()
        }
    };
    if !rows.is_empty() {
        println!(
            "{:>8} {:>5} {:>10} {:>10} {:>10} {:>9} {:>10} {:>9}",
            "quartile", "n", "gdp_min", "gdp_max", "mean_ln_a", "std_ln_a", "mean_rur", "std_rur"
        );
        for r in &rows {
            println!(
                "{:>8} {:>5} {:>10.0} {:>10.0} {:>10.4} {:>9.4} {:>10.4} {:>9.4}",
                r.quartile, r.count, r.gdp_min, r.gdp_max, r.mean_ln_a, r.std_ln_a, r.mean_rural, r.std_rural
            );
        }
    }
    if shared.out.is_some() {
        emit(shared, &rows)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_classify(args: &ClassifyArgs) -> Result<ExitCode> {
    if let Some(path) = &args.results {
        for r in read_results(path)? {
            match r.params().classify() {
                Ok(t) => println!("{}\t{t}\t{}", r.code, t.directions()),
                Err(e) => println!("{}\tunclassified\t{e}", r.code),
            }
        }
        return Ok(ExitCode::SUCCESS);
    }
    let alpha = args.alpha.expect("clap enforces --alpha without --results");
    let t = ModelParams::new(args.k1, args.k2, alpha, 0.0).classify()?;
    println!("{t}");
    println!("{}", t.directions());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(&cli.shared, a),
        Command::Collapse(a) => cmd_collapse(&cli.shared, a),
        Command::Simulate(a) => cmd_simulate(&cli.shared, a),
        Command::Correlate(a) => cmd_correlate(&cli.shared, a),
        Command::Classify(a) => cmd_classify(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
