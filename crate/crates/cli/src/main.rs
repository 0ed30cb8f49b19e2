use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use sepdirect_core::dgp::{read_params_csv, variance_scenarios};
use sepdirect_core::oracle::{
    error_decomposition, positivity_cde, positivity_sde, rare_event_approximations,
    DEFAULT_POSITIVITY_EPS,
};
use sepdirect_core::simharness::{
    run_error_sweep_streaming, run_variance_study, write_sweep_csv_header, write_sweep_row,
    write_variance_csv, SweepAccumulator, SweepGrid, VarianceStudyConfig,
};
use sepdirect_core::survival::{
    bootstrap_percentile_ci, contrast_at, read_subjects_csv, run_analysis, simulate_cohort,
    write_curves_csv, write_subjects_csv, AnalysisPlan, SyntheticCohortSpec, DEFAULT_HORIZON,
};
use sepdirect_core::{Error, Estimand};

#[derive(Parser, Debug)]
#[command(
    name = "sepdirect",
    version,
    about = "Controlled vs separable direct effects with competing events"
)]
struct Cli {
    /// TOML file with default values; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Master seed for every random draw.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Threshold for near positivity violation warnings.
    #[arg(long)]
    positivity_eps: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact estimands, targets and error decomposition for parameter rows.
    Oracle(OracleArgs),
    /// Variance study of the two weighted estimators.
    Simulate(SimulateArgs),
    /// Oracle sweep over the coefficient grid.
    Sweep(SweepArgs),
    /// Risk curves, contrasts and bootstrap intervals for a survival cohort.
    Analyze(AnalyzeArgs),
    /// Write a synthetic trial-shaped cohort in the subject CSV format.
    Cohort(CohortArgs),
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// CSV with columns theta0..theta6, beta0..beta6, p_l, p_u (optional p_a).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Keep only the separable-effect fields for this a_D.
    #[arg(long)]
    ad: Option<u8>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario id (s1..s6) or `all`.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    ad: Option<u8>,
    /// `desk` (n = 20000, reps = 2000) or `full` (n = 100000, reps = 20000).
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// TOML grid file.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Override beta0 of the grid.
    #[arg(long, allow_hyphen_values = true)]
    beta0: Option<f64>,
    /// Number of grid points to draw (default 100000).
    #[arg(long)]
    subsample: Option<usize>,
    /// Evaluate every grid point.
    #[arg(long)]
    full: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Subject CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<u32>,
    /// Bootstrap replicates (0 disables intervals).
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Comma-separated months for the contrast table.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<u32>>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct CohortArgs {
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    positivity_eps: Option<f64>,
    #[serde(default)]
    oracle: OracleSection,
    #[serde(default)]
    simulate: SimulateSection,
    #[serde(default)]
    sweep: SweepSection,
    #[serde(default)]
    analyze: AnalyzeSection,
    #[serde(default)]
    cohort: CohortSection,
}

#[derive(Deserialize, Debug, Default, Clone)]
struct SectionCommon {
    seed: Option<u64>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    positivity_eps: Option<f64>,
}

#[derive(Deserialize, Debug, Default)]
struct OracleSection {
    params: Option<PathBuf>,
    ad: Option<u8>,
    #[serde(flatten)]
    common: SectionCommon,
}

#[derive(Deserialize, Debug, Default)]
struct SimulateSection {
    scenario: Option<String>,
    n: Option<usize>,
    reps: Option<usize>,
    ad: Option<u8>,
    preset: Option<String>,
    #[serde(flatten)]
    common: SectionCommon,
}

#[derive(Deserialize, Debug, Default)]
struct SweepSection {
    grid: Option<PathBuf>,
    beta0: Option<f64>,
    subsample: Option<usize>,
    full: Option<bool>,
    #[serde(flatten)]
    common: SectionCommon,
}

#[derive(Deserialize, Debug, Default)]
struct AnalyzeSection {
    data: Option<PathBuf>,
    horizon: Option<u32>,
    bootstrap: Option<usize>,
    times: Option<Vec<u32>>,
    #[serde(flatten)]
    common: SectionCommon,
}

#[derive(Deserialize, Debug, Default)]
struct CohortSection {
    n: Option<usize>,
    #[serde(flatten)]
    common: SectionCommon,
}

/// Grid file: every field optional, missing ones fall back to the standard grid.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct GridFile {
    theta0: Option<f64>,
    beta0: Option<f64>,
    p_l: Option<f64>,
    p_u: Option<Vec<f64>>,
    /// Same candidate values for all twelve coordinates.
    values: Option<Vec<f64>>,
    /// Per-coordinate candidate values.
    levels: Option<Vec<Vec<f64>>>,
}

/// Resolved common options: flag, then command section, then top level.
struct Resolved {
    seed: Option<u64>,
    jobs: usize,
    out: Option<PathBuf>,
    eps: f64,
}

fn resolve(flags: &Common, section: &SectionCommon, top: &ConfigFile) -> anyhow::Result<Resolved> {
    let eps = flags
        .positivity_eps
        .or(section.positivity_eps)
        .or(top.positivity_eps)
        .unwrap_or(DEFAULT_POSITIVITY_EPS);
    if !(eps > 0.0 && eps < 1.0) {
        return Err(usage(format!(
            "--positivity-eps must lie in (0, 1), got {eps}"
        )));
    }
    Ok(Resolved {
        seed: flags.seed.or(section.seed).or(top.seed),
        jobs: flags.jobs.or(section.jobs).or(top.jobs).unwrap_or(0),
        out: flags
            .out
            .clone()
            .or_else(|| section.out.clone())
            .or_else(|| top.out.clone()),
        eps,
    })
}

/// Usage and input problems; these exit with code 2.
fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(msg.into())
}

impl Resolved {
    fn seed(&self, command: &str) -> anyhow::Result<u64> {
        self.seed.ok_or_else(|| {
            usage(format!(
                "`{command}` is randomized and needs an explicit --seed"
            ))
        })
    }

    fn out_dir(&self, command: &str) -> anyhow::Result<&Path> {
        let dir = self.out.as_deref().ok_or_else(|| {
            usage(format!(
                "`{command}` writes several files and needs --out <dir>"
            ))
        })?;
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    /// A file in `--out`, or stdout when no directory was given.
    fn sink(&self, name: &str) -> anyhow::Result<Box<dyn Write>> {
        match &self.out {
            Some(dir) => {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                Ok(Box::new(BufWriter::new(create(&dir.join(name))?)))
            }
            None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        }
    }
}

fn create(path: &Path) -> anyhow::Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn open(path: &Path) -> anyhow::Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn check_ad(ad: u8) -> anyhow::Result<u8> {
    if ad > 1 {
        return Err(usage(format!("--ad must be 0 or 1, got {ad}")));
    }
    Ok(ad)
}

fn cmd_oracle(args: OracleArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let sec = &cfg.oracle;
    let opts = resolve(&args.common, &sec.common, cfg)?;
    let path = args
        .params
        .or_else(|| sec.params.clone())
        .ok_or_else(|| usage("`oracle` needs --params <csv>"))?;
    let ad = args.ad.or(sec.ad).map(check_ad).transpose()?;
    let rows =
        read_params_csv(open(&path)?).with_context(|| format!("reading {}", path.display()))?;
    let mut out = opts.sink("oracle.jsonl")?;
    for (i, params) in rows.iter().enumerate() {
        let report = error_decomposition(params);
        let mut value = report.to_json(ad);
        let map = value.as_object_mut().expect("flat object");
        map.insert("row".into(), json!(i + 1));
        let rare = rare_event_approximations(params);
        for k in 0..2u8 {
            if ad.is_some_and(|a| a != k) {
                continue;
            }
            map.insert(
                format!("rare_estimand_error_ad{k}"),
                json!(rare.approx_estimand_error[k as usize]),
            );
            map.insert(
                format!("rare_sign_ratio_ad{k}"),
                json!(rare.sign_ratio[k as usize]),
            );
        }
        let mut warnings: Vec<String> = positivity_cde(params, opts.eps)
            .into_iter()
            .map(|w| format!("CDE: Pr(D=0 | A={}, L={}) = {:e}", w.a, w.l, w.survival))
            .collect();
        for k in 0..2u8 {
            if ad.is_some_and(|a| a != k) {
                continue;
            }
            warnings.extend(positivity_sde(params, k, opts.eps).into_iter().map(|w| {
                format!(
                    "SDE_aD{k}: Pr(D=0 | A={}, L={}) = {:e}",
                    w.a, w.l, w.survival
                )
            }));
        }
        map.insert("positivity_warnings".into(), json!(warnings));
        serde_json::to_writer(&mut out, &value)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let sec = &cfg.simulate;
    let opts = resolve(&args.common, &sec.common, cfg)?;
    let seed = opts.seed("simulate")?;
    let scenario = args
        .scenario
        .or_else(|| sec.scenario.clone())
        .ok_or_else(|| usage("`simulate` needs --scenario <id|all>"))?;
    let preset = args
        .preset
        .or_else(|| sec.preset.clone())
        .unwrap_or_else(|| "desk".into());
    let ids: Vec<String> = if scenario == "all" {
        variance_scenarios().into_iter().map(|s| s.id).collect()
    } else {
        vec![scenario]
    };
    let mut reports = Vec::new();
    for id in ids {
        let base = match preset.as_str() {
            "desk" => VarianceStudyConfig::desk(&id, seed),
            "full" => VarianceStudyConfig::full(&id, seed),
            other => {
                return Err(usage(format!(
                    "unknown preset `{other}` (expected desk or full)"
                )))
            }
        };
        let config = VarianceStudyConfig {
            n: args.n.or(sec.n).unwrap_or(base.n),
            reps: args.reps.or(sec.reps).unwrap_or(base.reps),
            a_d: check_ad(args.ad.or(sec.ad).unwrap_or(0))?,
            jobs: opts.jobs,
            positivity_eps: opts.eps,
            ..base
        };
        let report = run_variance_study(&config).map_err(|e| match e {
            Error::ScenarioNotFound(id) => usage(format!("unknown scenario `{id}`")),
            other => other.into(),
        })?;
        reports.push(report);
    }
    let mut out = opts.sink("variance.csv")?;
    write_variance_csv(&mut out, &reports)?;
    out.flush()?;
    Ok(())
}

fn load_grid(path: Option<&Path>) -> anyhow::Result<SweepGrid> {
    let file: GridFile = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text)
                .map_err(|e| usage(format!("invalid grid file {}: {e}", p.display())))?
        }
        None => GridFile::default(),
    };
    let std = SweepGrid::standard(file.beta0.unwrap_or(-1.0));
    let levels = match (file.levels, file.values) {
        (Some(_), Some(_)) => return Err(usage("grid file sets both `levels` and `values`")),
        (Some(l), None) => l,
        (None, Some(v)) => vec![v; 12],
        (None, None) => std.levels.clone(),
    };
    Ok(SweepGrid {
        theta0: file.theta0.unwrap_or(std.theta0),
        beta0: std.beta0,
        p_l: file.p_l.unwrap_or(std.p_l),
        p_u: file.p_u.unwrap_or(std.p_u.clone()),
        levels,
    })
}

const DEFAULT_SUBSAMPLE: usize = 100_000;

fn cmd_sweep(args: SweepArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let sec = &cfg.sweep;
    let opts = resolve(&args.common, &sec.common, cfg)?;
    let mut grid = load_grid(args.grid.as_deref().or(sec.grid.as_deref()))?;
    if let Some(b) = args.beta0.or(sec.beta0) {
        grid.beta0 = b;
    }
    grid.validate().map_err(|e| usage(e.to_string()))?;
    let full = args.full || sec.full.unwrap_or(false);
    let count = args
        .subsample
        .or(sec.subsample)
        .unwrap_or(DEFAULT_SUBSAMPLE);
    let subsample = if full || (count as u128) >= grid.size() {
        None
    } else {
        Some((count, opts.seed("sweep")?))
    };
    let dir = opts.out_dir("sweep")?;
    let mut w = csv::Writer::from_writer(BufWriter::new(create(&dir.join("sweep_points.csv"))?));
    write_sweep_csv_header(&mut w)?;
    let mut acc = SweepAccumulator::default();
    run_error_sweep_streaming(&grid, subsample, opts.jobs, |p| {
        acc.add(p);
        write_sweep_row(&mut w, p)
    })?;
    w.flush()?;
    let summary = acc.finish();
    let mut value = summary.to_json();
    value["grid"] = serde_json::to_value(&grid)?;
    value["subsample"] = match subsample {
        Some((n, seed)) => json!({ "count": n, "seed": seed }),
        None => json!(null),
    };
    let mut f = BufWriter::new(create(&dir.join("sweep_summary.json"))?);
    serde_json::to_writer_pretty(&mut f, &value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

const DEFAULT_TIMES: [u32; 4] = [12, 24, 36, 48];
const DEFAULT_BOOTSTRAP: usize = 1000;

fn cmd_analyze(args: AnalyzeArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let sec = &cfg.analyze;
    let opts = resolve(&args.common, &sec.common, cfg)?;
    let path = args
        .data
        .or_else(|| sec.data.clone())
        .ok_or_else(|| usage("`analyze` needs --data <csv>"))?;
    let horizon = args.horizon.or(sec.horizon).unwrap_or(DEFAULT_HORIZON);
    if horizon == 0 {
        return Err(usage("--horizon must be positive"));
    }
    let b = args
        .bootstrap
        .or(sec.bootstrap)
        .unwrap_or(DEFAULT_BOOTSTRAP);
    let times = args
        .times
        .or_else(|| sec.times.clone())
        .unwrap_or_else(|| DEFAULT_TIMES.to_vec());
    if let Some(t) = times.iter().find(|&&t| t < 1 || t > horizon) {
        return Err(usage(format!("time {t} is outside 1..={horizon}")));
    }
    let seed = if b > 0 {
        Some(opts.seed("analyze")?)
    } else {
        None
    };
    let subjects = read_subjects_csv(open(&path)?, horizon)
        .with_context(|| format!("reading {}", path.display()))?;
    let plan = AnalysisPlan {
        horizon,
        positivity_eps: opts.eps,
        ..AnalysisPlan::default()
    };
    let dir = opts.out_dir("analyze")?;
    let curves = run_analysis(&subjects, &plan)?;
    let ci = match seed {
        Some(seed) => Some(bootstrap_percentile_ci(
            &subjects, &plan, b, seed, opts.jobs,
        )?),
        None => None,
    };
    write_curves_csv(
        BufWriter::new(create(&dir.join("curves.csv"))?),
        &curves,
        ci.as_ref(),
    )?;

    let contrasts = contrast_at(&times, &curves, ci.as_ref())?;
    let mut w = csv::Writer::from_writer(BufWriter::new(create(&dir.join("contrasts.csv"))?));
    w.write_record(["month", "estimand", "value", "lo", "hi"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &contrasts {
        w.write_record([
            c.month.to_string(),
            c.estimand.label(),
            c.value.to_string(),
            opt(c.lo),
            opt(c.hi),
        ])?;
    }
    w.flush()?;

    let coef_path = dir.join("hazard_coefficients.csv");
    match &curves.model {
        Some(m) => m.write_coefficients_csv(BufWriter::new(create(&coef_path)?))?,
        None => {
            let mut f = create(&coef_path)?;
            writeln!(f, "term,estimate,std_error")?;
        }
    }

    let estimands = [
        Estimand::Cde,
        Estimand::Sde { a_d: 0 },
        Estimand::Sde { a_d: 1 },
    ];
    let max_weights: serde_json::Map<String, serde_json::Value> = estimands
        .iter()
        .map(|e| (e.label(), json!(curves.max_weight(*e))))
        .collect();
    let diagnostics = json!({
        "subjects": subjects.len(),
        "horizon": horizon,
        "competing_events": subjects.iter().filter(|s| s.event_type == sepdirect_core::survival::EventType::Competing).count(),
        "max_weight": max_weights,
        "hazard_iterations": curves.model.as_ref().map(|m| m.iterations),
        "bootstrap": ci.as_ref().map(|c| json!({ "replicates": c.replicates, "failed": c.failed, "seed": seed })),
        "warnings": curves.warnings,
    });
    let mut f = BufWriter::new(create(&dir.join("diagnostics.json"))?);
    serde_json::to_writer_pretty(&mut f, &diagnostics)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn cmd_cohort(args: CohortArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let sec = &cfg.cohort;
    let opts = resolve(&args.common, &sec.common, cfg)?;
    let seed = opts.seed("cohort")?;
    let n = args.n.or(sec.n).unwrap_or(500);
    let subjects = simulate_cohort(&SyntheticCohortSpec::trial_like(n), seed)?;
    let mut out = opts.sink("cohort.csv")?;
    write_subjects_csv(&mut out, &subjects)?;
    out.flush()?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("reading config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Oracle(a) => cmd_oracle(a, &cfg),
        Command::Simulate(a) => cmd_simulate(a, &cfg),
        Command::Sweep(a) => cmd_sweep(a, &cfg),
        Command::Analyze(a) => cmd_analyze(a, &cfg),
        Command::Cohort(a) => cmd_cohort(a, &cfg),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) {
        if e.is_numerical() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
