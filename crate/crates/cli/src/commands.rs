use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Serialize, Serializer};

use phasenet::counting::{grouped_probability, GroupedDistribution, GroupedSpec};
use phasenet::entanglement::{chain_setup, epr_witness, mpartite_witness, steering_witness, WitnessReport};
use phasenet::model::{ModeKind, ModeSpec, Ordering, SeededStream, SubEnsembleLayout};
use phasenet::network::{bs_chain_matrix, haar_unitary, BeamSplitterChainSpec, TransmissionMatrix};
use phasenet::pipeline::Experiment;
use phasenet::sampler::InputSpec;
use phasenet::stats::{chi_square, exact_independent_click_total, exact_thermal_total, ChiSquareReport, ReferenceDistribution};

use crate::config;

/// Errors raised by the driver itself rather than the library.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Validation(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Validation(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Failure::Usage(msg.into()).into()
}

/// Phase-space Monte Carlo for linear bosonic networks.
#[derive(Parser, Debug)]
#[command(name = "phasenet", version, about)]
pub struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Flat key=value config file, or any result file with embedded config.
    /// Command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a Haar-random or beam-splitter-chain transmission matrix.
    #[command(args_override_self = true)]
    Matgen(MatgenArgs),
    /// Grouped click-count distribution of a Gaussian boson sampling network.
    #[command(args_override_self = true)]
    Gbs(GbsArgs),
    /// Entanglement witnesses for squeezed inputs on a beam-splitter chain.
    #[command(args_override_self = true)]
    Entangle(EntangleArgs),
    /// Chi-square comparison of a distribution file against a reference.
    #[command(args_override_self = true)]
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    Haar,
    Bschain,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    Identity,
    Haar,
    Bschain,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WitnessChoice {
    Mpartite,
    Epr,
    Steering,
}

fn modes_arg(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("mode count must be at least 1".into()),
        Ok(m) => Ok(m),
        Err(e) => Err(e.to_string()),
    }
}

fn display<T: fmt::Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct MatgenArgs {
    #[arg(long, value_enum, default_value = "haar")]
    kind: MatrixKind,
    #[arg(long, value_parser = modes_arg)]
    modes: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma-separated chain reflectivities R_1..R_{M-1}.
    #[arg(long)]
    reflectivities: Option<String>,
    #[arg(short, long)]
    #[serde(skip)]
    output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GbsArgs {
    #[arg(long, value_parser = modes_arg)]
    modes: usize,
    /// Input modes: `vacuum`, `thermal:N` or `squeezed:R[:EPS]`, one entry
    /// for all modes or a comma-separated entry per mode.
    #[arg(long, default_value = "thermal:1")]
    input: String,
    #[arg(long, value_enum, default_value = "identity")]
    network: NetworkKind,
    /// Transmission matrix file; replaces --network.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Detector sets, e.g. `0-19;20-39`. Defaults to one set of all modes.
    #[arg(long)]
    groups: Option<String>,
    #[arg(long, default_value_t = 120)]
    repeats: usize,
    #[arg(long, default_value_t = 1000)]
    chunk: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Reference distribution file for a chi-square comparison.
    #[arg(long, conflicts_with = "exact")]
    reference: Option<PathBuf>,
    /// Compare against the exact total-count distribution (uniform thermal
    /// inputs, or any inputs with the identity network).
    #[arg(long)]
    exact: bool,
    /// Event count deciding bin validity (defaults to the sample count).
    #[arg(long)]
    events: Option<f64>,
    /// Exit with status 4 when chi2/k exceeds this value.
    #[arg(long)]
    max_chi2_per_k: Option<f64>,
    /// Distribution CSV (stdout if omitted).
    #[arg(short, long)]
    #[serde(skip)]
    output: Option<PathBuf>,
    /// Chi-square report as JSON.
    #[arg(long)]
    #[serde(skip)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EntangleArgs {
    /// Mode counts: a comma list of `M`, `A..B` or `A..B:STEP` (inclusive).
    #[arg(long, default_value = "2")]
    modes: String,
    /// Squeezing of both squeezed inputs.
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    /// Override the squeezing of input 1.
    #[arg(long)]
    r1: Option<f64>,
    /// Override the squeezing of input 2.
    #[arg(long)]
    r2: Option<f64>,
    #[arg(long, value_enum, default_value = "mpartite")]
    witness: WitnessChoice,
    #[arg(long, default_value = "wigner")]
    #[serde(serialize_with = "display")]
    representation: Ordering,
    #[arg(long, default_value_t = 120)]
    repeats: usize,
    #[arg(long, default_value_t = 1000)]
    chunk: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// JSON report (a table goes to stdout either way).
    #[arg(short, long)]
    #[serde(skip)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CompareArgs {
    /// Simulated distribution CSV.
    #[arg(long)]
    sim: PathBuf,
    /// Reference distribution CSV.
    #[arg(long, required_unless_present = "thermal", conflicts_with = "thermal")]
    reference: Option<PathBuf>,
    /// Use the exact uniform-thermal total distribution with this occupation.
    #[arg(long)]
    thermal: Option<f64>,
    #[arg(long)]
    events: Option<f64>,
    #[arg(long)]
    max_chi2_per_k: Option<f64>,
    /// Chi-square report as JSON (stdout if omitted).
    #[arg(short, long)]
    #[serde(skip)]
    output: Option<PathBuf>,
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Matgen(a) => matgen(&a),
        Command::Gbs(a) => gbs(&a),
        Command::Entangle(a) => entangle(&a),
        Command::Compare(a) => compare(&a),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| usage(format!("bad {what} '{s}'"))))
        .collect()
}

fn chain_spec(modes: usize, reflectivities: Option<&str>) -> Result<BeamSplitterChainSpec> {
    Ok(match reflectivities {
        Some(list) => {
            let spec = BeamSplitterChainSpec::new(parse_list(list, "reflectivity")?)?;
            if spec.modes() != modes {
                return Err(usage(format!("{modes} modes need {} reflectivities", modes - 1)));
            }
            spec
        }
        None => BeamSplitterChainSpec::default_for(modes)?,
    })
}

fn matgen(a: &MatgenArgs) -> Result<()> {
    let t = match a.kind {
        MatrixKind::Haar => haar_unitary(a.modes, SeededStream::new(a.seed, 0))?,
        MatrixKind::Bschain => bs_chain_matrix(&chain_spec(a.modes, a.reflectivities.as_deref())?),
    };
    let comments = config::comment_lines(&config::pairs("matgen", a));
    t.save(&a.output, &comments)
        .with_context(|| format!("writing {}", a.output.display()))?;
    Ok(())
}

fn parse_mode(text: &str) -> Result<ModeSpec> {
    let parts: Vec<&str> = text.trim().split(':').collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| usage(format!("bad number '{s}' in input '{text}'")));
    Ok(match parts[..] {
        ["vacuum"] => ModeSpec::vacuum(),
        ["thermal", n] => ModeSpec::thermal(num(n)?)?,
        ["squeezed", r] => ModeSpec::squeezed(num(r)?, 0.0)?,
        ["squeezed", r, eps] => ModeSpec::squeezed(num(r)?, num(eps)?)?,
        _ => return Err(usage(format!("unknown input '{text}'"))),
    })
}

fn parse_inputs(text: &str, modes: usize) -> Result<Vec<ModeSpec>> {
    let specs = text.split(',').map(parse_mode).collect::<Result<Vec<_>>>()?;
    match specs.len() {
        1 => Ok(vec![specs[0]; modes]),
        n if n == modes => Ok(specs),
        n => Err(usage(format!("{n} input specs for {modes} modes"))),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Exact total-click reference for a single detector set, when one is known.
fn exact_reference(specs: &[ModeSpec], t: Option<&TransmissionMatrix>, set: &[usize]) -> Result<ReferenceDistribution> {
    let thermal = specs
        .iter()
        .all(|s| s.kind() == ModeKind::Thermal && s.n_thermal() == specs[0].n_thermal());
    let identity = t.is_none_or(|t| *t == TransmissionMatrix::identity(t.modes()));
    if thermal && t.is_none_or(TransmissionMatrix::is_unitary) {
        // Uniform thermal light is invariant under any unitary network.
        return Ok(exact_thermal_total(set.len(), specs[0].n_thermal())?);
    }
    if identity {
        let chosen: Vec<ModeSpec> = set.iter().map(|&j| specs[j]).collect();
        return Ok(exact_independent_click_total(&chosen));
    }
    Err(usage("--exact needs uniform thermal inputs or the identity network"))
}

fn check_chi2(report: &ChiSquareReport, limit: Option<f64>) -> Result<()> {
    eprintln!(
        "chi2 = {:.4}, k = {}, chi2/k = {:.4}, excluded bins = {}",
        report.chi2,
        report.k_valid,
        report.chi2_per_k,
        report.excluded_bins.len()
    );
    match limit {
        // NaN counts as a failure.
        Some(l) if report.chi2_per_k.is_nan() || report.chi2_per_k > l => Err(Failure::Validation(format!(
            "chi2/k = {:.4} exceeds {l}",
            report.chi2_per_k
        ))
        .into()),
        _ => Ok(()),
    }
}

fn gbs(a: &GbsArgs) -> Result<()> {
    let specs = parse_inputs(&a.input, a.modes)?;
    let t = match (&a.matrix, a.network) {
        (Some(path), _) => Some(
            TransmissionMatrix::load(path).with_context(|| format!("reading matrix {}", path.display()))?,
        ),
        (None, NetworkKind::Identity) => None,
        (None, NetworkKind::Haar) => Some(haar_unitary(a.modes, SeededStream::new(a.seed, 0))?),
        (None, NetworkKind::Bschain) => Some(bs_chain_matrix(&BeamSplitterChainSpec::default_for(a.modes)?)),
    };
    let groups = match &a.groups {
        Some(g) => GroupedSpec::parse(g)?,
        None => GroupedSpec::total(a.modes)?,
    };
    let layout = SubEnsembleLayout::new(a.repeats, a.chunk)?;
    let input = InputSpec::new(specs.clone(), Ordering::PositiveP)?;
    let experiment = Experiment::new(input, t.clone(), layout, a.seed)?;
    let dist = grouped_probability(&experiment, &groups)?.with_seed(a.seed);

    let pairs = config::pairs("gbs", a);
    let mut out = open_output(a.output.as_deref())?;
    dist.write_csv(&mut out, &config::comment_lines(&pairs))?;
    out.flush()?;

    let reference = match (&a.reference, a.exact) {
        (Some(path), _) => Some(ReferenceDistribution::load(path).with_context(|| format!("reading {}", path.display()))?),
        (None, true) => {
            let [set] = groups.sets() else {
                return Err(usage("--exact needs a single detector set"));
            };
            Some(exact_reference(&specs, t.as_ref(), set)?)
        }
        (None, false) => None,
    };
    if let Some(mut reference) = reference {
        if let Some(e) = a.events {
            reference = reference.with_event_count(e);
        }
        let report = chi_square(&dist, &reference)?;
        if let Some(path) = &a.report {
            let json = serde_json::json!({ "config": config::json_object(&pairs), "chi_square": report });
            std::fs::write(path, serde_json::to_string_pretty(&json)? + "\n")
                .with_context(|| format!("writing {}", path.display()))?;
        }
        check_chi2(&report, a.max_chi2_per_k)?;
    }
    Ok(())
}

fn parse_mode_counts(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim) {
        let bad = || usage(format!("bad mode count '{item}'"));
        match item.split_once("..") {
            Some((lo, rest)) => {
                let (hi, step) = rest.split_once(':').unwrap_or((rest, "1"));
                let lo: usize = lo.parse().map_err(|_| bad())?;
                let hi: usize = hi.parse().map_err(|_| bad())?;
                let step: usize = step.parse().ok().filter(|&s| s > 0).ok_or_else(bad)?;
                out.extend((lo..=hi).step_by(step));
            }
            None => out.push(item.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() || out.iter().any(|&m| m < 2) {
        return Err(usage("witnesses need mode counts of at least 2"));
    }
    Ok(out)
}

fn entangle(a: &EntangleArgs) -> Result<()> {
    let counts = parse_mode_counts(&a.modes)?;
    let (r1, r2) = (a.r1.unwrap_or(a.r), a.r2.unwrap_or(a.r));
    if matches!(a.witness, WitnessChoice::Steering) && counts.iter().any(|&m| m != 2) {
        return Err(usage("the steering witness is defined for two modes only"));
    }
    let layout = SubEnsembleLayout::new(a.repeats, a.chunk)?;
    let mut reports: Vec<WitnessReport> = Vec::new();
    for &m in &counts {
        let (input, t) = chain_setup(m, r1, r2, None, a.representation)?;
        let experiment = Experiment::new(input, Some(t), layout, a.seed)?;
        let report = match a.witness {
            WitnessChoice::Mpartite => mpartite_witness(&experiment, m, Some((r1, r2)))?,
            WitnessChoice::Epr => epr_witness(&experiment, (0, 1), 1.0, 1.0)?,
            WitnessChoice::Steering => {
                steering_witness(&experiment, r1, r2, std::f64::consts::FRAC_1_SQRT_2, None)?
            }
        };
        reports.push(report);
    }

    println!(
        "{:>6} {:>12} {:>10} {:>10} {:>5} {:>12} {:>10} {:>10} {:>5}",
        "modes", "product", "se", "threshold", "pass", "sum", "se", "threshold", "pass"
    );
    for r in &reports {
        println!(
            "{:>6} {:>12.6e} {:>10.2e} {:>10.4e} {:>5} {:>12.6e} {:>10.2e} {:>10.4e} {:>5}",
            r.modes,
            r.product.value,
            r.product.std_error,
            r.product_threshold,
            r.product_passes(),
            r.sum.value,
            r.sum.std_error,
            r.sum_threshold,
            r.sum_passes()
        );
    }

    if let Some(path) = &a.output {
        let entries: Vec<serde_json::Value> = reports
            .iter()
            .map(|r| {
                let mut v = serde_json::to_value(r)?;
                v["records"] = serde_json::to_value(r.records())?;
                Ok(v)
            })
            .collect::<Result<_, serde_json::Error>>()?;
        let json = serde_json::json!({
            "config": config::json_object(&config::pairs("entangle", a)),
            "reports": entries,
        });
        std::fs::write(path, serde_json::to_string_pretty(&json)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn compare(a: &CompareArgs) -> Result<()> {
    let sim = GroupedDistribution::load(&a.sim).with_context(|| format!("reading {}", a.sim.display()))?;
    let mut reference = match (&a.reference, a.thermal) {
        (Some(path), _) => ReferenceDistribution::load(path).with_context(|| format!("reading {}", path.display()))?,
        (None, Some(n)) => {
            let [bins] = sim.shape() else {
                return Err(usage("--thermal needs a one-set distribution"));
            };
            exact_thermal_total(bins - 1, n)?
        }
        (None, None) => return Err(usage("give --reference or --thermal")),
    };
    if let Some(e) = a.events {
        reference = reference.with_event_count(e);
    }
    let report = chi_square(&sim, &reference)?;
    let json = serde_json::json!({
        "config": config::json_object(&config::pairs("compare", a)),
        "chi_square": report,
    });
    let mut out = open_output(a.output.as_deref())?;
    writeln!(out, "{}", serde_json::to_string_pretty(&json)?)?;
    out.flush()?;
    check_chi2(&report, a.max_chi2_per_k)
}
