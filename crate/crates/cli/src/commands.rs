use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use covbal::approx::{prob_declared_balanced, prob_dim_imbalanced, table1, table1_csv, ApproxQuery};
use covbal::pseudo_p::{adhoc_rates, AdhocRate, Assessor, DEFAULT_GRID_MAX, DEFAULT_GRID_STEP};
use covbal::rng::derive_seed;
use covbal::simulation::{
    best_design_shares, run_scenario, threshold_shares, write_best_design_csv, write_boxplot_csv, write_p_below_csv,
    write_p_star_below_csv, write_results_csv, SimulationResult,
};
use covbal::{
    adhoc_assess, assess_with_reference, build_reference, BalanceConfig, BalanceReport, GridSpec, Population,
    ReferenceMode, ReferenceSet, SamplingScheme, SchemeKind,
};
use log::info;
use serde::Serialize;

use crate::config::SimConfig;
use crate::error::{CliError, Result};
use crate::io::{read_covariates, read_split};

/// Schemes with at most this many outcomes are enumerated under `--mode auto`.
pub const AUTO_ENUMERATION_LIMIT: u128 = 200_000;
pub const DEFAULT_ROUNDS: u64 = 10_000;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "covbal", version, about = "Covariate balance assessment with pseudo p-values")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Text)]
    pub out_format: OutFormat,

    /// Only log errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Enumerate when the scheme has at most 200,000 outcomes, else Monte Carlo.
    Auto,
    Enumerate,
    MonteCarlo,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pseudo p-value, p* and SMD table for an observed split.
    Assess(AssessArgs),
    /// Run simulation scenarios from a TOML config.
    Simulate(SimulateArgs),
    /// Normal-binomial approximation to the ad hoc check under SRS.
    Approx(ApproxArgs),
    /// Build a reference set and save it for later `assess --reference` runs.
    Reference(ReferenceArgs),
}

#[derive(Debug, Args)]
pub struct SchemeArgs {
    /// srs, segregated, partial:<f>, matched, r_partial, natural or cluster:1,2|3,4 (1-based rows).
    #[arg(long)]
    pub scheme: Option<String>,

    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    pub mode: ModeArg,

    /// Monte Carlo rounds.
    #[arg(long, default_value_t = DEFAULT_ROUNDS)]
    pub rounds: u64,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    /// Covariate CSV: unit id column, then one numeric column per covariate.
    pub covariates: PathBuf,

    /// Split CSV with columns unit_id,arm (arm M or N).
    #[arg(long)]
    pub split: PathBuf,

    #[command(flatten)]
    pub scheme: SchemeArgs,

    /// Grid spacing (default .01).
    #[arg(long)]
    pub grid_step: Option<f64>,

    /// Largest grid cutoff (default 3.00, extended to cover every SMD).
    #[arg(long)]
    pub grid_max: Option<f64>,

    /// Use every distinct SMD as a cutoff instead of a regular grid.
    #[arg(long, conflicts_with_all = ["grid_step", "grid_max"])]
    pub exact_grid: bool,

    /// Saved reference set; skips rebuilding it.
    #[arg(long)]
    pub reference: Option<PathBuf>,

    /// Write p(g,h) of every reference row to this CSV.
    #[arg(long)]
    pub dump_pgh: Option<PathBuf>,

    /// Ad hoc checks as delta:r pairs.
    #[arg(long, default_value = "0.1:2,0.2:2,0.3:2,0.3:4")]
    pub adhoc: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub config: PathBuf,

    #[arg(long)]
    pub out_dir: PathBuf,

    /// Overrides the iteration count of every scenario.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ApproxArgs {
    /// Print all eight settings of the standard table.
    #[arg(long, conflicts_with_all = ["n", "m", "delta"])]
    pub table1: bool,

    /// Size of arm N.
    #[arg(long)]
    pub n: Option<u64>,

    /// Size of arm M.
    #[arg(long)]
    pub m: Option<u64>,

    #[arg(long)]
    pub delta: Option<f64>,

    /// Number of covariates.
    #[arg(long, default_value_t = 10)]
    pub j: u64,

    /// Largest number of imbalanced covariates still declared balanced.
    #[arg(long, default_value_t = 1)]
    pub r: u64,
}

#[derive(Debug, Args)]
pub struct ReferenceArgs {
    pub covariates: PathBuf,

    #[command(flatten)]
    pub scheme: SchemeArgs,

    #[arg(long)]
    pub m_size: usize,

    #[arg(long)]
    pub n_size: usize,

    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command line, writing the primary output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Io(e.to_string()))?;
    let mut buf = Vec::new();
    pool.install(|| match &cli.command {
        Command::Assess(a) => cmd_assess(cli, a, &mut buf),
        Command::Simulate(a) => cmd_simulate(cli, a, &mut buf),
        Command::Approx(a) => cmd_approx(cli, a, &mut buf),
        Command::Reference(a) => cmd_reference(cli, a, &mut buf),
    })?;
    out.write_all(&buf).map_err(out_err)
}

/// Parses `args` (without the program name) and runs them in-process, returning stdout bytes.
pub fn run_args<I, T>(args: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("covbal")).chain(args.into_iter().map(Into::into));
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut buf = Vec::new();
    run(&cli, &mut buf)?;
    Ok(buf)
}

fn out_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("writing output: {e}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn resolve_mode(scheme: &SamplingScheme, k: usize, args: &SchemeArgs) -> Result<ReferenceMode> {
    let mc = || {
        if args.rounds == 0 {
            Err(CliError::Validation("--rounds must be >= 1".into()))
        } else {
            Ok(ReferenceMode::MonteCarlo { rounds: args.rounds })
        }
    };
    match args.mode {
        ModeArg::Enumerate => Ok(ReferenceMode::Enumerate),
        ModeArg::MonteCarlo => mc(),
        ModeArg::Auto => {
            let support = scheme.plan(k)?.support_size();
            if support <= AUTO_ENUMERATION_LIMIT {
                info!("enumerating all {support} splits of the ideal scheme");
                Ok(ReferenceMode::Enumerate)
            } else {
                info!("{support} possible splits; drawing {} Monte Carlo rounds", args.rounds);
                mc()
            }
        }
    }
}

fn scheme_kind(args: &SchemeArgs) -> Result<SchemeKind> {
    Ok(args.scheme.as_deref().unwrap_or("srs").parse::<SchemeKind>()?)
}

fn build(pop: &Population, args: &SchemeArgs, m: usize, n: usize, seed: u64) -> Result<ReferenceSet> {
    let scheme = SamplingScheme::new(scheme_kind(args)?, m, n);
    scheme.validate(pop.k())?;
    let mode = resolve_mode(&scheme, pop.k(), args)?;
    let start = std::time::Instant::now();
    let r = build_reference(pop, &scheme, mode, seed)?;
    info!("reference set: {} rows in {:.2?}", r.len(), start.elapsed());
    Ok(r)
}

fn load_reference(path: &Path, pop: &Population, args: &SchemeArgs) -> Result<ReferenceSet> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let (reference, names) =
        ReferenceSet::read_csv(BufReader::new(f)).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    if names != pop.covariate_names() {
        return Err(CliError::Validation(format!(
            "{}: covariate names differ from the covariate file",
            path.display()
        )));
    }
    if args.scheme.is_some() {
        let wanted = scheme_kind(args)?.to_string();
        if wanted != reference.provenance().scheme {
            return Err(CliError::Validation(format!(
                "{}: reference was built under scheme '{}', not '{wanted}'",
                path.display(),
                reference.provenance().scheme
            )));
        }
    }
    Ok(reference)
}

pub fn parse_adhoc(s: &str) -> Result<Vec<BalanceConfig>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let bad = || CliError::Usage(format!("--adhoc: expected delta:r, got '{t}'"));
            let (d, r) = t.trim().split_once(':').ok_or_else(bad)?;
            let d: f64 = d.parse().map_err(|_| bad())?;
            let r: usize = r.parse().map_err(|_| bad())?;
            BalanceConfig::new(d, r).map_err(|e| CliError::Usage(format!("--adhoc: {e}")))
        })
        .collect()
}

fn grid_spec(a: &AssessArgs) -> Result<GridSpec> {
    if a.exact_grid {
        return Ok(GridSpec::Exact);
    }
    if a.grid_step.is_none() && a.grid_max.is_none() {
        return Ok(GridSpec::Default);
    }
    let step = a.grid_step.unwrap_or(DEFAULT_GRID_STEP);
    let max = a.grid_max.unwrap_or(DEFAULT_GRID_MAX);
    if !(step > 0.0 && max >= step) {
        return Err(CliError::Usage(format!("grid needs 0 < step <= max, got step {step}, max {max}")));
    }
    Ok(GridSpec::Regular { step, max })
}

#[derive(Serialize)]
struct CovariateSmd<'a> {
    name: &'a str,
    smd: f64,
}

#[derive(Serialize)]
struct AdhocLine {
    delta: f64,
    max_imbalanced: usize,
    observed_imbalanced: usize,
    observed_balanced: bool,
    reference_balanced_fraction: f64,
}

#[derive(Serialize)]
struct AssessOutput<'a> {
    #[serde(flatten)]
    report: &'a BalanceReport,
    covariates: Vec<CovariateSmd<'a>>,
    adhoc: Vec<AdhocLine>,
}

fn cmd_assess(cli: &Cli, a: &AssessArgs, out: &mut dyn Write) -> Result<()> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let adhoc_cfg = parse_adhoc(&a.adhoc)?;
    let pop = read_covariates(&a.covariates)?;
    let split = read_split(&a.split, &pop)?;
    let grid = grid_spec(a)?;
    let (m, n) = split.sizes();
    let reference = match &a.reference {
        Some(path) => load_reference(path, &pop, &a.scheme)?,
        None => build(&pop, &a.scheme, m, n, seed)?,
    };
    let (report, assessor) = assess_with_reference(&pop, &split, reference, &grid)?;

    let rates = adhoc_rates(assessor.reference(), &adhoc_cfg);
    let adhoc: Vec<AdhocLine> = adhoc_cfg
        .iter()
        .zip(&rates)
        .map(|(cfg, rate): (&BalanceConfig, &AdhocRate)| {
            let o = adhoc_assess(&report.smds, cfg);
            AdhocLine {
                delta: cfg.delta_cutoff(),
                max_imbalanced: cfg.max_imbalanced(),
                observed_imbalanced: o.r_delta,
                observed_balanced: o.balanced,
                reference_balanced_fraction: rate.fraction,
            }
        })
        .collect();

    if let Some(path) = &a.dump_pgh {
        write_pgh(path, &assessor)?;
    }

    let covariates: Vec<CovariateSmd> = pop
        .covariate_names()
        .iter()
        .zip(report.smds.as_slice())
        .map(|(name, &smd)| CovariateSmd { name, smd })
        .collect();
    let output = AssessOutput { report: &report, covariates, adhoc };
    match cli.out_format {
        OutFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, &output).map_err(out_err)?;
            writeln!(out).map_err(out_err)
        }
        OutFormat::Csv => write_assess_csv(&output, out),
        OutFormat::Text => write_assess_text(&output, out).map_err(out_err),
    }
}

fn write_pgh(path: &Path, assessor: &Assessor) -> Result<()> {
    let mut cw = csv::Writer::from_writer(create(path)?);
    let werr = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    cw.write_record(["row", "weight", "p"]).map_err(werr)?;
    let dist = assessor.distribution();
    for (i, (v, w)) in dist.values().iter().zip(dist.weights()).enumerate() {
        cw.write_record([(i + 1).to_string(), w.to_string(), v.to_string()]).map_err(werr)?;
    }
    cw.flush().map_err(|e| CliError::io(path, e))
}

fn write_assess_csv(o: &AssessOutput, out: &mut dyn Write) -> Result<()> {
    let r = o.report;
    let mut cw = csv::Writer::from_writer(out);
    let mut rows: Vec<(String, String)> = vec![
        ("p".into(), r.p.to_string()),
        ("p_star".into(), r.p_star.to_string()),
        ("p_tail_weight".into(), r.p_tail_weight.to_string()),
        ("reference_weight".into(), r.reference_weight.to_string()),
        ("argmin_delta".into(), r.argmin_delta.to_string()),
        ("reference_rows".into(), r.reference_rows.to_string()),
        ("scheme".into(), r.provenance.scheme.clone()),
        ("m_size".into(), r.provenance.m_size.to_string()),
        ("n_size".into(), r.provenance.n_size.to_string()),
        ("mode".into(), r.provenance.mode.to_string()),
        ("seed".into(), r.provenance.seed.to_string()),
        ("population_hash".into(), r.provenance.population_hash.clone()),
        ("grid_points".into(), r.grid.points.to_string()),
        ("grid_min".into(), r.grid.min.to_string()),
        ("grid_max".into(), r.grid.max.to_string()),
        ("smd_min".into(), r.smd_summary.min.to_string()),
        ("smd_q1".into(), r.smd_summary.q1.to_string()),
        ("smd_median".into(), r.smd_summary.median.to_string()),
        ("smd_q3".into(), r.smd_summary.q3.to_string()),
        ("smd_max".into(), r.smd_summary.max.to_string()),
    ];
    rows.extend(o.covariates.iter().map(|c| (format!("smd:{}", c.name), c.smd.to_string())));
    for a in &o.adhoc {
        let key = format!("{}:{}", a.delta, a.max_imbalanced);
        rows.push((format!("adhoc_observed_imbalanced:{key}"), a.observed_imbalanced.to_string()));
        rows.push((format!("adhoc_observed_balanced:{key}"), a.observed_balanced.to_string()));
        rows.push((format!("adhoc_reference_balanced:{key}"), a.reference_balanced_fraction.to_string()));
    }
    cw.write_record(["metric", "value"]).map_err(out_err)?;
    for (k, v) in rows {
        cw.write_record([k, v]).map_err(out_err)?;
    }
    cw.flush().map_err(out_err)
}

fn write_assess_text(o: &AssessOutput, out: &mut dyn Write) -> std::io::Result<()> {
    let r = o.report;
    let pv = &r.provenance;
    writeln!(out, "Pseudo p-value p     {:.3}  ({} / {})", r.p, r.p_tail_weight, r.reference_weight)?;
    writeln!(out, "Standardized p*      {:.1}%", 100.0 * r.p_star)?;
    writeln!(out, "Minimizing cutoff    {}", r.argmin_delta)?;
    writeln!(
        out,
        "Reference            {} with |M|={}, |N|={}; {} ({} rows, seed {})",
        pv.scheme, pv.m_size, pv.n_size, pv.mode, r.reference_rows, pv.seed
    )?;
    writeln!(out, "Grid                 {} cutoffs from {} to {}", r.grid.points, r.grid.min, r.grid.max)?;
    writeln!(out)?;
    let width = o.covariates.iter().map(|c| c.name.len()).max().unwrap_or(0).max(9);
    writeln!(out, "{:<width$}  SMD", "Covariate")?;
    for c in &o.covariates {
        writeln!(out, "{:<width$}  {:.3}", c.name, c.smd)?;
    }
    writeln!(out)?;
    let s = r.smd_summary;
    writeln!(out, "SMD    Min    Q1     Median Q3     Max")?;
    writeln!(out, "       {:.3}  {:.3}  {:.3}  {:.3}  {:.3}", s.min, s.q1, s.median, s.q3, s.max)?;
    if !o.adhoc.is_empty() {
        writeln!(out)?;
        writeln!(out, "Ad hoc check        observed R  verdict     share of reference balanced")?;
        for a in &o.adhoc {
            writeln!(
                out,
                "delta {:<5} r {:<4} {:<11} {:<11} {:.4}",
                a.delta,
                a.max_imbalanced,
                a.observed_imbalanced,
                if a.observed_balanced { "balanced" } else { "imbalanced" },
                a.reference_balanced_fraction
            )?;
        }
    }
    Ok(())
}

fn cmd_reference(cli: &Cli, a: &ReferenceArgs, out: &mut dyn Write) -> Result<()> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let pop = read_covariates(&a.covariates)?;
    let reference = build(&pop, &a.scheme, a.m_size, a.n_size, seed)?;
    let mut w = create(&a.out)?;
    reference.write_csv(&mut w, pop.covariate_names())?;
    w.flush().map_err(|e| CliError::io(&a.out, e))?;
    let pv = reference.provenance();
    match cli.out_format {
        OutFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, pv).map_err(out_err)?;
            writeln!(out).map_err(out_err)
        }
        OutFormat::Csv => {
            writeln!(out, "scheme,m_size,n_size,mode,seed,rows,population_hash").map_err(out_err)?;
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                pv.scheme,
                pv.m_size,
                pv.n_size,
                pv.mode,
                pv.seed,
                reference.len(),
                pv.population_hash
            )
            .map_err(out_err)
        }
        OutFormat::Text => writeln!(
            out,
            "wrote {} reference rows ({}, |M|={}, |N|={}, {}) to {}",
            reference.len(),
            pv.scheme,
            pv.m_size,
            pv.n_size,
            pv.mode,
            a.out.display()
        )
        .map_err(out_err),
    }
}

#[derive(Serialize)]
struct ApproxOutput {
    n: u64,
    m: u64,
    delta: f64,
    j: u64,
    r: u64,
    p_dim: f64,
    p_balanced: f64,
}

fn cmd_approx(cli: &Cli, a: &ApproxArgs, out: &mut dyn Write) -> Result<()> {
    if a.table1 {
        let rows = table1();
        return match cli.out_format {
            OutFormat::Csv => out.write_all(table1_csv(&rows).as_bytes()).map_err(out_err),
            OutFormat::Json => {
                serde_json::to_writer_pretty(&mut *out, &rows).map_err(out_err)?;
                writeln!(out).map_err(out_err)
            }
            OutFormat::Text => {
                writeln!(out, "delta  |g|  |m|  P(dim)  P(bal) J=10,r=1  P(bal) J=20,r=2").map_err(out_err)?;
                for r in rows {
                    writeln!(
                        out,
                        "{:<5}  {:<3}  {:<3}  {:.3}   {:.3}            {:.3}",
                        r.delta, r.g, r.m, r.p_dim, r.p_bal_j10_r1, r.p_bal_j20_r2
                    )
                    .map_err(out_err)?;
                }
                Ok(())
            }
        };
    }
    let (Some(n), Some(m), Some(delta)) = (a.n, a.m, a.delta) else {
        return Err(CliError::Usage("approx needs --n, --m and --delta, or --table1".into()));
    };
    let q = ApproxQuery { n, m, delta, j_dims: a.j, r_max: a.r };
    let o = ApproxOutput {
        n,
        m,
        delta,
        j: a.j,
        r: a.r,
        p_dim: prob_dim_imbalanced(n, m, delta)?,
        p_balanced: prob_declared_balanced(&q)?,
    };
    match cli.out_format {
        OutFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, &o).map_err(out_err)?;
            writeln!(out).map_err(out_err)
        }
        OutFormat::Csv => writeln!(
            out,
            "n,m,delta,j,r,p_dim,p_balanced\n{},{},{},{},{},{},{}",
            o.n, o.m, o.delta, o.j, o.r, o.p_dim, o.p_balanced
        )
        .map_err(out_err),
        OutFormat::Text => writeln!(
            out,
            "P(one covariate has SMD >= {delta})      {:.4}\nP(at most {} of {} covariates imbalanced)  {:.4}",
            o.p_dim, o.r, o.j, o.p_balanced
        )
        .map_err(out_err),
    }
}

#[derive(Serialize)]
struct DesignSummary<'a> {
    scenario: &'a str,
    design: &'static str,
    best_share: f64,
    p_below: f64,
    p_star_below: f64,
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = SimConfig::load(&a.config)?;
    let mut jobs = cfg.jobs()?;
    if let Some(it) = a.iterations {
        if it == 0 {
            return Err(CliError::Usage("--iterations must be >= 1".into()));
        }
        jobs.iter_mut().for_each(|j| j.iterations = it);
    }
    let seed = cli.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(&a.out_dir, e))?;

    let mut results = Vec::with_capacity(jobs.len());
    for (i, job) in jobs.iter().enumerate() {
        let start = std::time::Instant::now();
        info!("{}: {} iterations, {}", job.scenario.name, job.iterations, job.scenario.mode);
        let res = run_scenario(&job.scenario, job.iterations, derive_seed(seed, i as u64))?;
        info!("{}: done in {:.1?}", job.scenario.name, start.elapsed());
        results.push(res);
    }

    let (p_cut, p_star_cut) = (cfg.p_cut(), cfg.p_star_cut());
    let file = |name: &str| create(&a.out_dir.join(name));
    let flush = |mut w: BufWriter<File>, name: &str| w.flush().map_err(|e| CliError::io(&a.out_dir.join(name), e));
    let mut w = file("results.csv")?;
    write_results_csv(&mut w, &results)?;
    flush(w, "results.csv")?;
    let mut w = file("best_design.csv")?;
    write_best_design_csv(&mut w, &results)?;
    flush(w, "best_design.csv")?;
    let mut w = file("p_below.csv")?;
    write_p_below_csv(&mut w, &results, p_cut)?;
    flush(w, "p_below.csv")?;
    let mut w = file("pstar_below.csv")?;
    write_p_star_below_csv(&mut w, &results, p_star_cut)?;
    flush(w, "pstar_below.csv")?;
    let mut w = file("boxplot.csv")?;
    write_boxplot_csv(&mut w, &results)?;
    flush(w, "boxplot.csv")?;
    let mut w = file("p_histogram.csv")?;
    write_histogram_csv(&mut w, &results)?;
    flush(w, "p_histogram.csv")?;

    let summary: Vec<DesignSummary> = results
        .iter()
        .flat_map(|res| {
            let best = best_design_shares(res);
            let thr = threshold_shares(res, p_cut, p_star_cut);
            best.into_iter().zip(thr).map(move |(b, t)| DesignSummary {
                scenario: &res.scenario.name,
                design: b.design.label(),
                best_share: b.share,
                p_below: t.p_below,
                p_star_below: t.p_star_below,
            })
        })
        .collect();
    match cli.out_format {
        OutFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, &summary).map_err(out_err)?;
            writeln!(out).map_err(out_err)
        }
        OutFormat::Csv => {
            let mut cw = csv::Writer::from_writer(out);
            cw.write_record(["scenario", "design", "best_share", "p_below", "p_star_below"]).map_err(out_err)?;
            for s in &summary {
                cw.write_record([
                    s.scenario.to_string(),
                    s.design.to_string(),
                    s.best_share.to_string(),
                    s.p_below.to_string(),
                    s.p_star_below.to_string(),
                ])
                .map_err(out_err)?;
            }
            cw.flush().map_err(out_err)
        }
        OutFormat::Text => {
            writeln!(
                out,
                "{:<18} {:<11} {:>8} {:>8} {:>8}",
                "scenario",
                "design",
                "largest",
                format!("p<{p_cut}"),
                format!("p*<{p_star_cut}")
            )
            .map_err(out_err)?;
            for s in &summary {
                writeln!(
                    out,
                    "{:<18} {:<11} {:>8.3} {:>8.3} {:>8.3}",
                    s.scenario, s.design, s.best_share, s.p_below, s.p_star_below
                )
                .map_err(out_err)?;
            }
            writeln!(out, "results written to {}", a.out_dir.display()).map_err(out_err)
        }
    }
}

const HIST_BINS: usize = 20;

/// Counts of p and p* per design in 20 equal bins on [0, 1]; the last bin is closed.
pub fn write_histogram_csv<W: Write>(w: W, results: &[SimulationResult]) -> Result<()> {
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(["scenario", "design", "statistic", "bin_low", "bin_high", "count"]).map_err(out_err)?;
    for res in results {
        for (d, design) in res.designs().iter().enumerate() {
            for (stat, values) in [("p", res.p_values(d)), ("p_star", res.p_star_values(d))] {
                let mut counts = [0usize; HIST_BINS];
                for v in values {
                    counts[((v * HIST_BINS as f64) as usize).min(HIST_BINS - 1)] += 1;
                }
                for (b, c) in counts.iter().enumerate() {
                    cw.write_record([
                        res.scenario.name.clone(),
                        design.label().to_string(),
                        stat.to_string(),
                        (b as f64 / HIST_BINS as f64).to_string(),
                        ((b + 1) as f64 / HIST_BINS as f64).to_string(),
                        c.to_string(),
                    ])
                    .map_err(out_err)?;
                }
            }
        }
    }
    cw.flush().map_err(out_err)
}
