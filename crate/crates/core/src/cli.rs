//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage or input error.
//! Settings resolve as command-line flag, then the `--config` TOML file,
//! then the built-in default.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, read_bundle, write_atomic, write_bundle};
use crate::loss::{CapConvention, LossConfig, Peril, Policy, DEFAULT_RC};
use crate::oracle::{check_samplings, Verdict, MIN_DRAWS};
use crate::pipeline::{charged_premiums, evaluate_policy, policy_grid, prepare, run_scheme, SchemeParams};
use crate::report::{self, PolicyResult, SchemeDocument};
use crate::scheme::{check_epsilons, BoundInputs, BoundMode, DEFAULT_EPS1, DEFAULT_EPS2, DEFAULT_SAMPLINGS};
use crate::synth::{generate_portfolio, Profile, SynthOptions, DEFAULT_N, DEFAULT_SEED};

pub const DEFAULT_DRAWS: usize = 100_000;
/// Relative slack when re-checking a stored φ against its target.
const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(
    name = "catrisk",
    version,
    about = "Seismic and flood loss assessment, indifference pricing and solvency schemes"
)]
pub struct Cli {
    /// TOML file with [synth], [assess], [scheme] and [simulate] tables;
    /// flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic input bundle.
    Synth(SynthArgs),
    /// Expected annual losses per municipality for one peril.
    Assess(AssessArgs),
    /// Premiums, fund size and probabilities of the public-private scheme.
    Scheme(SchemeArgs),
    /// Monte Carlo check of the tail bounds of a scheme run.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerilArg {
    Seismic,
    Flood,
    Multi,
}

impl From<PerilArg> for Peril {
    fn from(p: PerilArg) -> Peril {
        match p {
            PerilArg::Seismic => Peril::Seismic,
            PerilArg::Flood => Peril::Flood,
            PerilArg::Multi => Peril::Multi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Simplified,
    Generic,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of municipalities.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generator profile.
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Side of the square region in km (default 25·√n).
    #[arg(long)]
    pub extent_km: Option<f64>,
    /// Log-normal noise on exceedance probabilities (default 0).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    /// Input bundle directory.
    #[arg(long)]
    pub in_dir: Option<PathBuf>,
    /// Peril to assess.
    #[arg(long, value_enum)]
    pub peril: Option<PerilArg>,
    /// Reconstruction cost per square metre.
    #[arg(long)]
    pub rc: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SchemeArgs {
    /// Input bundle directory.
    #[arg(long)]
    pub in_dir: Option<PathBuf>,
    /// Peril covered by the policy.
    #[arg(long, value_enum)]
    pub peril: Option<PerilArg>,
    /// Deductible per square metre; with --max-coverage selects one policy
    /// instead of the default four-policy grid.
    #[arg(long)]
    pub deductible: Option<f64>,
    /// Maximum coverage per square metre.
    #[arg(long)]
    pub max_coverage: Option<f64>,
    /// Pay E − D once the loss reaches E instead of E once it reaches E + D.
    #[arg(long)]
    pub cap_net_of_deductible: bool,
    /// Target insolvency probability.
    #[arg(long)]
    pub eps1: Option<f64>,
    /// Target probability of a public refill (at least eps1).
    #[arg(long)]
    pub eps2: Option<f64>,
    /// Independence distance in km.
    #[arg(long)]
    pub r_km: Option<f64>,
    /// Number of random groupings.
    #[arg(long)]
    pub samplings: Option<usize>,
    /// Base seed of the groupings.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tail bound.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Fixed h for the generic bound (optimized when absent).
    #[arg(long)]
    pub h: Option<f64>,
    /// Reconstruction cost per square metre.
    #[arg(long)]
    pub rc: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Input bundle; when given, its municipalities must match the scheme.
    #[arg(long)]
    pub in_dir: Option<PathBuf>,
    /// Output directory of a `scheme` run.
    #[arg(long)]
    pub scheme_out: Option<PathBuf>,
    /// Number of Monte Carlo draws (at least 10000).
    #[arg(long)]
    pub draws: Option<usize>,
    /// Simulation seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (defaults to --scheme-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    #[serde(default)]
    synth: SynthConfig,
    #[serde(default)]
    assess: AssessConfig,
    #[serde(default)]
    scheme: SchemeConfig,
    #[serde(default)]
    simulate: SimulateConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthConfig {
    n: Option<u64>,
    seed: Option<u64>,
    profile: Option<Profile>,
    extent_km: Option<f64>,
    noise: Option<f64>,
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssessConfig {
    in_dir: Option<PathBuf>,
    peril: Option<PerilArg>,
    rc: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeConfig {
    in_dir: Option<PathBuf>,
    peril: Option<PerilArg>,
    deductible: Option<f64>,
    max_coverage: Option<f64>,
    cap_net_of_deductible: Option<bool>,
    eps1: Option<f64>,
    eps2: Option<f64>,
    r_km: Option<f64>,
    samplings: Option<usize>,
    seed: Option<u64>,
    mode: Option<ModeArg>,
    h: Option<f64>,
    rc: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    in_dir: Option<PathBuf>,
    scheme_out: Option<PathBuf>,
    draws: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    let Some(path) = path else { return Ok(Config::default()) };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

fn required<T>(flag: Option<T>, config: Option<T>, name: &str) -> Result<T> {
    flag.or(config)
        .ok_or_else(|| Error::input(format!("--{name} is required (flag or config file)")))
}

/// Failure of a validation step, reported with exit code 1.
#[derive(Debug)]
enum Outcome {
    Ok,
    ValidationFailed(String),
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    settings: &'a T,
    outputs: Vec<&'a str>,
}

fn write_manifest<T: Serialize>(dir: &Path, command: &'static str, settings: &T, outputs: &[&str]) -> Result<()> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        settings,
        outputs: outputs.to_vec(),
    };
    let text = serde_json::to_string_pretty(&m).map_err(|e| Error::input(e.to_string()))? + "\n";
    write_atomic(&dir.join(format!("manifest-{command}.json")), text.as_bytes())
}

#[derive(Serialize)]
struct SynthSettings<'a> {
    options: SynthOptions,
    out_dir: &'a Path,
}

fn cmd_synth(a: SynthArgs, c: SynthConfig) -> Result<Outcome> {
    let n = a.n.or(c.n).unwrap_or(DEFAULT_N as u64);
    let opts = SynthOptions {
        n: n as usize,
        seed: a.seed.or(c.seed).unwrap_or(DEFAULT_SEED),
        profile: a.profile.or(c.profile).unwrap_or(Profile::ItalyLike),
        extent_km: a.extent_km.or(c.extent_km),
        noise: a.noise.or(c.noise).unwrap_or(0.0),
    };
    let out = required(a.out_dir, c.out_dir, "out-dir")?;
    let p = generate_portfolio(&opts)?;
    write_bundle(&out, &p.bundle)?;
    let mut outputs = vec![io::MUNICIPALITIES, io::PGA_EXCEEDANCE];
    if p.bundle.flood.is_some() {
        outputs.extend([io::FLOOD_COUNTS, io::FLOOD_CLUSTERS, io::FLOOD_DEPTHS]);
    }
    write_manifest(
        &out,
        "synth",
        &SynthSettings {
            options: opts,
            out_dir: &out,
        },
        &outputs,
    )?;
    println!(
        "wrote {} municipalities to {}",
        p.bundle.municipalities.len(),
        out.display()
    );
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct AssessSettings<'a> {
    in_dir: &'a Path,
    peril: Peril,
    rc: f64,
    out: &'a Path,
}

fn cmd_assess(a: AssessArgs, c: AssessConfig) -> Result<Outcome> {
    let in_dir = required(a.in_dir, c.in_dir, "in-dir")?;
    let out = required(a.out, c.out, "out")?;
    let peril: Peril = required(a.peril, c.peril, "peril")?.into();
    if peril == Peril::Multi {
        return Err(Error::input("assess takes --peril seismic or --peril flood"));
    }
    let rc = a.rc.or(c.rc).unwrap_or(DEFAULT_RC);
    let bundle = read_bundle(&in_dir)?;
    let cfg = LossConfig {
        rc,
        ..LossConfig::default()
    };
    let prep = prepare(&bundle, peril, &cfg, &[])?;
    let cells = match peril {
        Peril::Seismic => prep.seismic.as_ref(),
        _ => prep.flood.as_ref(),
    }
    .expect("prepared for the requested peril");
    let table = report::loss_table(&prep.municipalities, peril, cells);
    let mut text = table.summary.clone();
    if !prep.dropped.is_empty() {
        let _ = writeln!(text, "dropped for missing data: {}", prep.dropped.join(", "));
    }
    if let Some(f) = &prep.flood_fits {
        for (cluster, fr) in &f.frequencies {
            let _ = writeln!(
                text,
                "cluster {cluster}: negative binomial size {:.6}, prob {:.6}, mean {:.4} floods per year",
                fr.nb_size,
                fr.nb_prob,
                fr.mean()
            );
        }
        let d = &f.depth;
        let _ = writeln!(
            text,
            "flood depth: gamma shape {:.6}, rate {:.6}, SSE {:.6}, SAE {:.6}",
            d.dist.shape, d.dist.rate, d.sse, d.sae
        );
    }
    if !prep.hazards.is_empty() {
        let (lo, hi) = prep
            .hazards
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), z| {
                (l.min(z.beta), h.max(z.beta))
            });
        let _ = writeln!(
            text,
            "power-law hazards: {} fitted, beta in [{lo:.4}, {hi:.4}]",
            prep.hazards.len()
        );
    }
    io::create_dir(&out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::input(format!("csv serialization: {e}"));
    w.write_record(&table.header).map_err(csv_err)?;
    for r in &table.rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
    write_atomic(&out.join("losses.csv"), &bytes)?;
    write_atomic(&out.join("assessment.txt"), text.as_bytes())?;
    write_manifest(
        &out,
        "assess",
        &AssessSettings {
            in_dir: &in_dir,
            peril,
            rc,
            out: &out,
        },
        &["losses.csv", "assessment.txt"],
    )?;
    print!("{text}");
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct SchemeSettings<'a> {
    in_dir: &'a Path,
    peril: Peril,
    rc: f64,
    policies: &'a [Policy],
    params: &'a SchemeParams,
    out: &'a Path,
}

fn cmd_scheme(a: SchemeArgs, c: SchemeConfig) -> Result<Outcome> {
    let in_dir = required(a.in_dir, c.in_dir, "in-dir")?;
    let out = required(a.out, c.out, "out")?;
    let peril: Peril = required(a.peril, c.peril, "peril")?.into();
    let rc = a.rc.or(c.rc).unwrap_or(DEFAULT_RC);
    let eps1 = a.eps1.or(c.eps1).unwrap_or(DEFAULT_EPS1);
    let eps2 = a.eps2.or(c.eps2).unwrap_or(DEFAULT_EPS2);
    check_epsilons(eps1, eps2)?;
    let h = a.h.or(c.h);
    let mode = match (a.mode.or(c.mode).unwrap_or(ModeArg::Simplified), h) {
        (ModeArg::Simplified, Some(_)) => return Err(Error::input("--h applies to --mode generic only")),
        (ModeArg::Simplified, None) => BoundMode::SimplifiedBernoulli,
        (ModeArg::Generic, h) => BoundMode::GenericMgf { h },
    };
    let params = SchemeParams {
        eps1,
        eps2,
        r_km: a.r_km.or(c.r_km).unwrap_or(crate::geo::DEFAULT_R_KM),
        samplings: a.samplings.or(c.samplings).unwrap_or(DEFAULT_SAMPLINGS),
        seed: a.seed.or(c.seed).unwrap_or(DEFAULT_SEED),
        mode,
    };
    params.validate()?;
    let cap = if a.cap_net_of_deductible || c.cap_net_of_deductible.unwrap_or(false) {
        CapConvention::CapNetOfDeductible
    } else {
        CapConvention::CapAtCoverage
    };
    let policies = match (a.deductible.or(c.deductible), a.max_coverage.or(c.max_coverage)) {
        (None, None) if cap == CapConvention::CapAtCoverage => policy_grid(),
        (None, None) => policy_grid()
            .iter()
            .map(|p| Policy::with_cap(p.deductible, p.max_coverage, cap))
            .collect::<Result<_>>()?,
        (d, e) => vec![Policy::with_cap(d.unwrap_or(0.0), e.unwrap_or(rc), cap)?],
    };

    let bundle = read_bundle(&in_dir)?;
    let cfg = LossConfig {
        rc,
        ..LossConfig::default()
    };
    let prep = prepare(&bundle, peril, &cfg, &policies)?;
    let groupings = params.groupings(&prep.municipalities)?;

    let mut results = Vec::new();
    let mut quotes = Vec::new();
    let mut premiums = Vec::new();
    for policy in &policies {
        let eval = evaluate_policy(&prep, peril, policy)?;
        let run = run_scheme(&eval.severity, eval.sum_p_h, &groupings, &params)?;
        let charged = charged_premiums(&eval, &run);
        premiums.push(eval.municipal_p_h.iter().copied().zip(charged).collect::<Vec<_>>());
        results.push(PolicyResult {
            policy: *policy,
            sum_p_h: eval.sum_p_h,
            severity: eval.severity.clone(),
            phi: run.per_sampling.iter().map(|s| s.phi).collect(),
            per_sampling: run.per_sampling,
            aggregate: Some(run.aggregate),
        });
        quotes.push((*policy, eval.quotes));
    }
    let doc = SchemeDocument {
        peril,
        params,
        rc,
        municipality_ids: prep.municipalities.iter().map(|m| m.id.clone()).collect(),
        dropped: prep.dropped.clone(),
        groupings,
        policies: results,
    };

    io::create_dir(&out)?;
    let table = report::scheme_table(&doc);
    let json = serde_json::to_string_pretty(&doc).map_err(|e| Error::input(e.to_string()))? + "\n";
    write_atomic(&out.join("scheme.json"), json.as_bytes())?;
    write_atomic(&out.join("scheme_report.txt"), table.as_bytes())?;
    write_atomic(
        &out.join("premiums.csv"),
        &report::premiums_csv(&prep.municipalities, &policies, &premiums)?,
    )?;
    write_atomic(
        &out.join("premiums.geojson"),
        report::premiums_geojson(&prep.municipalities, &policies, &premiums).as_bytes(),
    )?;
    write_atomic(
        &out.join("quotes.csv"),
        &report::quotes_csv(&prep.municipalities, &quotes)?,
    )?;
    write_manifest(
        &out,
        "scheme",
        &SchemeSettings {
            in_dir: &in_dir,
            peril,
            rc,
            policies: &policies,
            params: &params,
            out: &out,
        },
        &[
            "scheme.json",
            "scheme_report.txt",
            "premiums.csv",
            "premiums.geojson",
            "quotes.csv",
        ],
    )?;
    print!("{table}");
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct SimulateSettings<'a> {
    in_dir: Option<&'a Path>,
    scheme_out: &'a Path,
    draws: usize,
    seed: u64,
    out: &'a Path,
}

fn cmd_simulate(a: SimulateArgs, c: SimulateConfig) -> Result<Outcome> {
    let scheme_out = required(a.scheme_out, c.scheme_out, "scheme-out")?;
    let draws = a.draws.or(c.draws).unwrap_or(DEFAULT_DRAWS);
    if draws < MIN_DRAWS {
        return Err(Error::input(format!(
            "--draws must be at least {MIN_DRAWS}, got {draws}"
        )));
    }
    let seed = a.seed.or(c.seed).unwrap_or(DEFAULT_SEED);
    let out = a.out.or(c.out).unwrap_or_else(|| scheme_out.clone());
    let in_dir = a.in_dir.or(c.in_dir);

    let path = scheme_out.join("scheme.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let doc: SchemeDocument =
        serde_json::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    if doc.groupings.len() != doc.params.samplings {
        return Err(Error::input(format!(
            "{}: grouping count does not match samplings",
            path.display()
        )));
    }
    if let Some(dir) = &in_dir {
        let bundle = read_bundle(dir)?;
        let known: std::collections::HashSet<&str> = bundle.municipalities.iter().map(|m| m.id.as_str()).collect();
        if let Some(id) = doc.municipality_ids.iter().find(|id| !known.contains(id.as_str())) {
            return Err(Error::input(format!(
                "scheme municipality '{id}' is not in {}",
                dir.display()
            )));
        }
    }

    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for r in &doc.policies {
        if r.phi.len() != doc.groupings.len() {
            return Err(Error::input(format!(
                "{}: phi count does not match samplings",
                path.display()
            )));
        }
        let cases: Vec<_> = doc.groupings.iter().zip(r.phi.iter().copied()).collect();
        for (i, (g, phi)) in cases.iter().enumerate() {
            let bound = BoundInputs::new(&r.severity, g, doc.params.mode)?.bound(*phi);
            if bound > doc.params.eps1 * (1.0 + CONSISTENCY_TOL) {
                problems.push(format!(
                    "D={} E={} sampling {i}: stored phi {phi} gives bound {bound:.6} above eps1 = {}",
                    r.policy.deductible, r.policy.max_coverage, doc.params.eps1
                ));
            }
        }
        let reports = check_samplings(&r.severity, &cases, doc.params.mode, draws, seed)?;
        for (i, rep) in reports.into_iter().enumerate() {
            if rep.verdict == Verdict::BoundViolated {
                problems.push(format!(
                    "D={} E={} sampling {i}: empirical {:.6} (Wilson lower {:.6}) exceeds bound {:.6}",
                    r.policy.deductible,
                    r.policy.max_coverage,
                    rep.empirical_exceedance,
                    rep.wilson_lo,
                    rep.analytic_bound
                ));
            }
            rows.push((r.policy, i, doc.groupings[i].seed, rep));
        }
    }

    let mut text = String::new();
    let _ = writeln!(
        text,
        "{} scheme, {} policies x {} samplings, {draws} draws, seed {seed}",
        doc.peril.label(),
        doc.policies.len(),
        doc.groupings.len()
    );
    let max_emp = rows.iter().map(|r| r.3.empirical_exceedance).fold(0.0, f64::max);
    let _ = writeln!(text, "largest empirical exceedance at the solved phi: {max_emp:.6}");
    if problems.is_empty() {
        let _ = writeln!(text, "all bounds respected");
    } else {
        let _ = writeln!(text, "{} problems:", problems.len());
        for p in &problems {
            let _ = writeln!(text, "  {p}");
        }
    }
    io::create_dir(&out)?;
    write_atomic(&out.join("simulation.csv"), &report::simulation_csv(&rows)?)?;
    write_atomic(&out.join("simulation_report.txt"), text.as_bytes())?;
    write_manifest(
        &out,
        "simulate",
        &SimulateSettings {
            in_dir: in_dir.as_deref(),
            scheme_out: &scheme_out,
            draws,
            seed,
            out: &out,
        },
        &["simulation.csv", "simulation_report.txt"],
    )?;
    print!("{text}");
    Ok(if problems.is_empty() {
        Outcome::Ok
    } else {
        Outcome::ValidationFailed(format!("{} problems", problems.len()))
    })
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) | Error::Consistency(_) => 1,
        _ => 2,
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a, config.synth),
        Command::Assess(a) => cmd_assess(a, config.assess),
        Command::Scheme(a) => cmd_scheme(a, config.scheme),
        Command::Simulate(a) => cmd_simulate(a, config.simulate),
    };
    match result {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::ValidationFailed(msg)) => {
            eprintln!("validation failed: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
