//! Command-line front end: data generation, Monte Carlo runs, single-dataset
//! estimation and the exact appendix checks.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use cartps::appendix::{
    appendix_b_check, appendix_c_check, random_joint, random_joint_v_first, verify_gamma_identities,
    verify_phi_identities,
};
use cartps::causal::{EstimationMode, PsConfig, PsMethod};
use cartps::data::{Dataset, Schema};
use cartps::dgp::{generate_cohort, inject_missingness, ScenarioConfig};
use cartps::ensemble::{fit_boosted, mean_ks_balance};
use cartps::harness::{
    emit_report, estimate_dataset, run_scenario_with_progress, study_estimators, EstimatorSpec, Handling,
    HarnessConfig, Preset, ReportFormat,
};
use cartps::impute::MiceConfig;
use cartps::stats::{Purpose, RngStream};

use config::{ConfigFile, UsageError};

#[derive(Parser, Debug)]
#[command(name = "cartps", version, about = "Tree-based propensity scores under missing covariate data")]
struct Cli {
    /// TOML file with a table per subcommand; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one cohort of a simulation scenario, with missingness applied.
    Generate(GenerateArgs),
    /// Run the Monte Carlo study for one or more scenarios.
    Simulate(SimulateArgs),
    /// Estimate the ATT log odds ratio on a CSV dataset.
    Estimate(EstimateArgs),
    /// Check the weighting identities and the two counterexamples exactly.
    VerifyAppendix(VerifyArgs),
}

fn scenario_parser() -> clap::builder::PossibleValuesParser {
    clap::builder::PossibleValuesParser::new(ScenarioConfig::IDS)
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenerateArgs {
    /// Scenario id.
    #[arg(long, value_parser = scenario_parser())]
    pub scenario: Option<String>,
    /// Cohort size [default: 2000].
    #[arg(long)]
    pub n: Option<usize>,
    /// Master seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Oracle-only sidecar with true scores, noise and counterfactual outcomes.
    #[arg(long, value_name = "FILE")]
    pub latent: Option<PathBuf>,
    /// Write the cohort before missingness is injected.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub complete: Option<bool>,
    /// Also write the column schema as JSON, for use with `estimate`.
    #[arg(long, value_name = "FILE")]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Ipw,
    Match,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<EstimationMode> {
        match self {
            ModeArg::Ipw => vec![EstimationMode::Ipw],
            ModeArg::Match => vec![EstimationMode::Match],
            ModeArg::Both => vec![EstimationMode::Ipw, EstimationMode::Match],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetArg {
    Desk,
    Full,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Full => Preset::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Md,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateArgs {
    /// Scenario ids, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = scenario_parser())]
    pub scenario: Option<Vec<String>>,
    /// Replications per scenario [default: from preset].
    #[arg(long)]
    pub reps: Option<usize>,
    /// desk: 500 replications, 5000 boosting iterations; full: 5000 and 20000 [default: desk].
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Estimators, comma separated: [before+|cca+|mi+]{bacart,bcart,lrc,lrm}, or `all` [default: all].
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// Effect estimation mode [default: ipw].
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Master seed [default: preset seed].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cohort size [default: 2000].
    #[arg(long)]
    pub n: Option<usize>,
    /// Known true log OR; skips the oracle.
    #[arg(long)]
    pub truth: Option<f64>,
    /// Population size of the true-effect oracle [default: 10000000].
    #[arg(long)]
    pub truth_n: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Report formats, comma separated [default: csv,md].
    #[arg(long, value_enum, value_delimiter = ',')]
    pub format: Option<Vec<FormatArg>>,
    /// Suppress progress lines.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub quiet: Option<bool>,
    /// Overrides of the preset's learner and imputation settings (config file only).
    #[arg(skip)]
    pub harness: Option<toml::Table>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingArg {
    Direct,
    Cca,
    Mi,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EstimateArgs {
    /// Input CSV; empty cells or NA are missing.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// JSON schema with each column's name, kind and role.
    #[arg(long, value_name = "FILE")]
    pub schema: Option<PathBuf>,
    /// Propensity score method: bacart, bcart, lrc or lrm.
    #[arg(long)]
    pub ps: Option<String>,
    /// Missing-data handling [default: direct].
    #[arg(long, value_enum)]
    pub missing: Option<MissingArg>,
    /// Effect estimation mode [default: ipw].
    #[arg(long, value_enum)]
    pub mode: Option<EstimateMode>,
    /// Seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learner settings preset [default: desk].
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Write the boosting balance trace (bcart only).
    #[arg(long, value_name = "FILE")]
    pub ks_trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateMode {
    Ipw,
    Match,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct VerifyArgs {
    /// Random joints per identity family [default: 100].
    #[arg(long)]
    pub joints: Option<usize>,
    /// Seed of the random joints [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tolerance for floating-point identities [default: 1e-12].
    #[arg(long)]
    pub tol: Option<f64>,
}

fn provenance(command: &str, seed: u64, resolved: &impl Serialize) -> anyhow::Result<Vec<String>> {
    Ok(vec![
        format!("cartps {}", env!("CARGO_PKG_VERSION")),
        format!("command: {command}"),
        format!("seed: {seed}"),
        format!("config: {}", serde_json::to_string(resolved)?),
    ])
}

fn run_generate(args: GenerateArgs) -> anyhow::Result<()> {
    let id = args.scenario.ok_or(UsageError("generate needs --scenario".into()))?;
    let cfg = ScenarioConfig::preset(&id).ok_or(UsageError(format!("unknown scenario `{id}`")))?;
    let out = args.out.ok_or(UsageError("generate needs --out".into()))?;
    let n = args.n.unwrap_or(2000);
    let seed = args.seed.unwrap_or(1);
    let complete = args.complete.unwrap_or(false);
    let resolved = serde_json::json!({ "scenario": id, "n": n, "complete": complete });
    let prov = provenance("generate", seed, &resolved)?;

    let cohort = generate_cohort(n, &cfg, &mut RngStream::new(seed, 0, Purpose::Cohort))?;
    let data = if complete {
        cohort.data.clone()
    } else {
        inject_missingness(&cohort, &cfg, &mut RngStream::new(seed, 0, Purpose::Missingness))?
    };
    let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    data.write_csv(&mut w, &prov)?;
    w.flush()?;
    if let Some(path) = args.schema {
        let schema = Schema {
            columns: data.columns().to_vec(),
        };
        std::fs::write(&path, serde_json::to_string_pretty(&schema)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = args.latent {
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(w, "# ORACLE ONLY: latent quantities, never available to an estimator")?;
        for line in &prov {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "row,true_ps,eps_y,y0,y1")?;
        for i in 0..n {
            writeln!(
                w,
                "{},{},{},{},{}",
                i, cohort.propensity[i], cohort.eps_y[i], cohort.y0[i], cohort.y1[i]
            )?;
        }
        w.flush()?;
    }
    Ok(())
}

fn parse_estimators(list: &[String], modes: &[EstimationMode]) -> anyhow::Result<Vec<EstimatorSpec>> {
    let mut specs = Vec::new();
    for item in list {
        if item.eq_ignore_ascii_case("all") {
            specs.extend(study_estimators(modes));
            continue;
        }
        for &mode in modes {
            let s = EstimatorSpec::parse(item, mode).map_err(|e| UsageError(e.to_string()))?;
            specs.push(s);
        }
    }
    // group by mode so the report lists each mode as a block
    specs.sort_by_key(|s| s.mode);
    let mut seen = Vec::new();
    specs.retain(|s| {
        let fresh = !seen.contains(s);
        seen.push(*s);
        fresh
    });
    if specs.is_empty() {
        return Err(UsageError("no estimators selected".into()).into());
    }
    Ok(specs)
}

#[derive(Serialize)]
struct SimulateResolved<'a> {
    scenarios: &'a [String],
    estimators: Vec<String>,
    formats: &'a [FormatArg],
    harness: &'a HarnessConfig,
}

fn run_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let scenarios = args.scenario.ok_or(UsageError("simulate needs --scenario".into()))?;
    let mut cfgs = Vec::new();
    for id in &scenarios {
        cfgs.push(ScenarioConfig::preset(id).ok_or(UsageError(format!("unknown scenario `{id}`")))?);
    }
    let out = args.out.ok_or(UsageError("simulate needs --out".into()))?;
    let preset: Preset = args.preset.unwrap_or(PresetArg::Desk).into();
    let mut h = HarnessConfig::preset(preset);
    if let Some(over) = args.harness {
        h = config::merge_into(&h, over).map_err(|e| UsageError(format!("invalid [simulate.harness] table: {e}")))?;
    }
    if let Some(r) = args.reps {
        h.reps = r;
    }
    if let Some(s) = args.seed {
        h.seed = s;
    }
    if let Some(n) = args.n {
        h.n = n;
    }
    if args.truth.is_some() {
        h.truth = args.truth;
    }
    if let Some(t) = args.truth_n {
        h.truth_n = t;
    }
    h.validate().map_err(|e| UsageError(e.to_string()))?;
    let modes = args.mode.unwrap_or(ModeArg::Ipw).modes();
    let specs = parse_estimators(&args.estimators.unwrap_or_else(|| vec!["all".into()]), &modes)?;
    let formats = args.format.unwrap_or_else(|| vec![FormatArg::Csv, FormatArg::Md]);
    let quiet = args.quiet.unwrap_or(false);
    let resolved = SimulateResolved {
        scenarios: &scenarios,
        estimators: specs.iter().map(|s| s.to_string()).collect(),
        formats: &formats,
        harness: &h,
    };
    let prov = provenance("simulate", h.seed, &resolved)?;

    let mut reports = Vec::new();
    for cfg in &cfgs {
        let done = AtomicUsize::new(0);
        let step = (h.reps / 20).max(1);
        let progress = |_: usize| {
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            if !quiet && (k % step == 0 || k == h.reps) {
                eprintln!("scenario {}: {k}/{} replications", cfg.id, h.reps);
            }
        };
        let report = run_scenario_with_progress(cfg, &specs, &h, &progress)?;
        if !report.is_valid() {
            eprintln!("warning: scenario {}: more than 1% of replications failed for some estimator", cfg.id);
        }
        reports.push(report);
    }
    for f in formats {
        let fmt = match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Md => ReportFormat::Markdown,
        };
        let path = emit_report(&reports, fmt, &out, "report", &prov)?;
        if !quiet {
            eprintln!("wrote {}", path.display());
        }
    }
    if reports.iter().any(|r| !r.is_valid()) {
        bail!("report invalid: failure rate above 1% (see failures column)");
    }
    Ok(())
}

fn run_estimate(args: EstimateArgs) -> anyhow::Result<()> {
    let data_path = args.data.ok_or(UsageError("estimate needs --data".into()))?;
    let schema_path = args.schema.ok_or(UsageError("estimate needs --schema".into()))?;
    let ps_name = args.ps.ok_or(UsageError("estimate needs --ps".into()))?;
    let handling = match args.missing.unwrap_or(MissingArg::Direct) {
        MissingArg::Direct => Handling::Direct,
        MissingArg::Cca => Handling::Cca,
        MissingArg::Mi => Handling::Mi,
    };
    let mode = match args.mode.unwrap_or(EstimateMode::Ipw) {
        EstimateMode::Ipw => EstimationMode::Ipw,
        EstimateMode::Match => EstimationMode::Match,
    };
    let method: PsMethod = ps_name.parse().map_err(|e: cartps::Error| UsageError(e.to_string()))?;
    let schema = Schema::from_json_file(&schema_path).with_context(|| format!("reading {}", schema_path.display()))?;
    let d = Dataset::read_csv_path(&data_path, &schema).with_context(|| format!("reading {}", data_path.display()))?;
    let handling = if handling == Handling::Direct && !d.has_missing() {
        Handling::None
    } else {
        handling
    };
    let spec = EstimatorSpec::new(method, handling, mode).map_err(|e| UsageError(e.to_string()))?;
    let seed = args.seed.unwrap_or(1);
    let ps = match args.preset.unwrap_or(PresetArg::Desk) {
        PresetArg::Desk => PsConfig::desk(),
        PresetArg::Full => PsConfig::default(),
    };
    let mice = MiceConfig::default();
    let (e, scores) = estimate_dataset(&d, &spec, &ps, &mice, seed, 0)?;

    println!("point,se,ci_lower,ci_upper");
    println!("{},{},{},{}", e.point, e.se, e.ci.0, e.ci.1);
    let mut diag = serde_json::json!({
        "estimator": spec.to_string(),
        "rows": d.nrows(),
        "complete_rows": (0..d.nrows()).filter(|&r| d.row_is_complete(r)).count(),
        "exposed": d.column(d.exposure_index()).iter().filter(|&&a| a == 1.0).count(),
        "df": if e.df.is_finite() { serde_json::json!(e.df) } else { serde_json::json!("inf") },
        "n_used": e.n_used,
        "ridge_fallback": e.ridge,
        "seed": seed,
    });
    if let Some(s) = &scores {
        let lo = s.scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        diag["ps_range"] = serde_json::json!([lo, hi]);
        diag["generalised_score"] = serde_json::json!(s.generalised);
        let analysed = if handling == Handling::Cca { d.complete_cases()? } else { d.clone() };
        if let Ok(ks) = mean_ks_balance(&analysed, &s.scores) {
            diag["mean_ks"] = serde_json::json!(ks);
        }
    }
    println!("{diag}");

    if let Some(path) = args.ks_trace {
        if method != PsMethod::BCart || handling == Handling::Mi {
            return Err(UsageError("--ks-trace needs --ps bcart without --missing mi".into()).into());
        }
        let analysed = if handling == Handling::Cca { d.complete_cases()? } else { d };
        // the same stream fit_ps used, so the trace belongs to the reported fit
        let mut rng = RngStream::new(seed, 0, Purpose::Estimator).child(handling as u64 * 16 + method as u64);
        let m = fit_boosted(&analysed, analysed.exposure_index(), &ps.boost, &mut rng)?;
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "iteration,mean_ks")?;
        for (t, ks) in &m.ks_trace {
            writeln!(w, "{t},{ks}")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn run_verify(args: VerifyArgs) -> anyhow::Result<()> {
    let joints = args.joints.unwrap_or(100);
    let seed = args.seed.unwrap_or(1);
    let tol = args.tol.unwrap_or(1e-12);
    let mut ok = true;
    let b = appendix_b_check();
    println!("{}", b.report);
    ok &= b.report.passed();
    let c = appendix_c_check();
    println!("{}", c.report);
    ok &= c.report.passed();

    let mut rng = RngStream::new(seed, 0, Purpose::Oracle);
    let (mut phi_ok, mut gamma_ok) = (0, 0);
    for _ in 0..joints {
        let j = random_joint(&mut rng, 4, true);
        phi_ok += verify_phi_identities(&j, tol).map(|r| r.passed() && r.exchangeable)? as usize;
        let g = random_joint_v_first(&mut rng, 4, true);
        gamma_ok += verify_gamma_identities(&g, tol).map(|r| r.passed() && r.exchangeable)? as usize;
    }
    println!("Random joints (tolerance {tol:e})");
    println!("| identity family | joints | passed | result |");
    println!("|---|---:|---:|---|");
    for (name, passed) in [("phi weights given W", phi_ok), ("gamma weights given V", gamma_ok)] {
        println!(
            "| {name} | {joints} | {passed} | {} |",
            if passed == joints { "PASS" } else { "FAIL" }
        );
        ok &= passed == joints;
    }
    if !ok {
        bail!("some appendix checks failed");
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Generate(a) => run_generate(config::overlay(a, file.generate)?),
        Command::Simulate(a) => run_simulate(config::overlay(a, file.simulate)?),
        Command::Estimate(a) => run_estimate(config::overlay(a, file.estimate)?),
        Command::VerifyAppendix(a) => run_verify(config::overlay(a, file.verify_appendix)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
