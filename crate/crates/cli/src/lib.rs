//! Command-line pipeline: experiment design, simulation, fitting, model
//! selection, wildcard error, RB analysis and report generation.

pub mod config;
pub mod io;
pub mod report;
pub mod svg;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use xtalkgst_core::circuits::{build_gst_design, circuits_from_text, circuits_to_text, sample_rb_circuits, RbCircuit, RbMode};
use xtalkgst_core::errorgen::{model_error_reports, GateErrorReport, MRAD};
use xtalkgst_core::fit::{bootstrap_ci, fit_nested, FitConfig, FitResult};
use xtalkgst_core::models::{GateSetModel, ModelFamily, ModelFile};
use xtalkgst_core::noise::{log_spaced, NoiseSpec};
use xtalkgst_core::rb::{context_variation_rb, rb_analyze, DEFAULT_RB_REPLICATES};
use xtalkgst_core::select::{
    avg_diamond_error, compare, select_by_lambda, wildcard_fit, CompareOptions, DEFAULT_ALPHA, DEFAULT_GAMMA_THRESHOLD,
};
use xtalkgst_core::simulate::{sample, Dataset};

use crate::config::{pick, require, RunConfig};
use crate::io::{check_input, check_output, read_json, read_text, sha256_hex, to_json, write_atomic};
use crate::report::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<xtalkgst_core::Error> for CliError {
    fn from(e: xtalkgst_core::Error) -> Self {
        use xtalkgst_core::Error as E;
        let code = match e {
            E::Io(_) => EXIT_IO,
            E::Numerical(_) | E::BranchCut { .. } => EXIT_NONCONVERGENCE,
            _ => EXIT_VALIDATION,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "xtalkgst", version, about = "Crosstalk characterization with nested gate-set models")]
pub struct Cli {
    /// JSON file supplying values for any flag; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a GST design (or RB circuits with --rb), one circuit per line.
    Design(DesignArgs),
    /// Sample counts for a design from a model, a noise specification or a ZZ strength.
    Simulate(SimulateArgs),
    /// Fit nested model families and compare them.
    Fit(FitArgs),
    /// Apply the evidence-ratio rule to a fit file.
    Select(SelectArgs),
    /// Wildcard error budgets of fitted models.
    Wildcard(WildcardArgs),
    /// Randomized-benchmarking decay analysis.
    Rb(RbArgs),
    /// Merge command outputs into report.json and SVG figures.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[arg(long)]
    pub lmax: Option<usize>,
    /// Emit simultaneous-RB circuits instead of the GST design.
    #[arg(long)]
    pub rb: bool,
    #[arg(long, value_delimiter = ',')]
    pub rb_depths: Option<Vec<usize>>,
    #[arg(long)]
    pub rb_per_depth: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// RB metadata output (default: `<out>.meta.json`).
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Model file (`{family, theta}`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Noise specification file.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// ZZ coupling strength on every layer.
    #[arg(long)]
    pub zz: Option<f64>,
    /// Write one dataset per exponentially spaced ZZ strength into the --out directory.
    #[arg(long)]
    pub zz_sweep: bool,
    #[arg(long)]
    pub sweep_points: Option<usize>,
    #[arg(long)]
    pub sweep_min: Option<f64>,
    #[arg(long)]
    pub sweep_max: Option<f64>,
    /// Pauli-stochastic rate added to every layer with --zz or --zz-sweep.
    #[arg(long)]
    pub background: Option<f64>,
    #[arg(long)]
    pub shots: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "family", value_delimiter = ',')]
    pub families: Option<Vec<ModelFamily>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma_threshold: Option<f64>,
    /// Parametric bootstrap replicates for error bars (0 disables).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub no_wildcard: bool,
    #[arg(long)]
    pub no_diamond: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Output of `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub gamma_threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WildcardArgs {
    /// Output of `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "family", value_delimiter = ',')]
    pub families: Option<Vec<ModelFamily>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RbArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// RB metadata written by `design --rb`.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Outputs of fit, select, wildcard or rb.
    #[arg(long = "fragment")]
    pub fragments: Vec<PathBuf>,
    /// Directory receiving report.json and the figures.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const DEFAULT_LMAX: usize = 8;
pub const DEFAULT_SHOTS: u64 = 1000;
pub const DEFAULT_RB_DEPTHS: [usize; 8] = [2, 4, 8, 16, 32, 64, 128, 256];
pub const DEFAULT_RB_PER_DEPTH: usize = 30;

/// Runs one command; `Ok` carries the exit code (0, or 3 when a fit did not converge).
pub fn run(cli: Cli) -> Result<i32, CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Design(a) => cmd_design(a, &cfg),
        Command::Simulate(a) => cmd_simulate(a, &cfg),
        Command::Fit(a) => cmd_fit(a, &cfg),
        Command::Select(a) => cmd_select(a, &cfg),
        Command::Wildcard(a) => cmd_wildcard(a, &cfg),
        Command::Rb(a) => cmd_rb(a, &cfg),
        Command::Report(a) => cmd_report(a),
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn read_hashed(path: &Path, inputs: &mut BTreeMap<String, String>) -> Result<String, CliError> {
    let text = read_text(path)?;
    inputs.insert(file_name(path), sha256_hex(text.as_bytes()));
    Ok(text)
}

fn cmd_design(a: DesignArgs, cfg: &RunConfig) -> Result<i32, CliError> {
    let out = require(a.out, cfg.out.clone(), "out")?;
    check_output(&out)?;
    if !a.rb {
        let design = build_gst_design(pick(a.lmax, cfg.lmax, DEFAULT_LMAX))?;
        write_atomic(&out, design.to_text().as_bytes())?;
        return Ok(EXIT_OK);
    }
    let seed = require(a.seed, cfg.seed, "seed")?;
    let depths = pick(a.rb_depths, cfg.rb_depths.clone(), DEFAULT_RB_DEPTHS.to_vec());
    let per_depth = pick(a.rb_per_depth, cfg.rb_per_depth, DEFAULT_RB_PER_DEPTH);
    if depths.is_empty() || per_depth == 0 {
        return Err(CliError::validation("RB designs need at least one depth and one circuit per depth"));
    }
    let meta_path = a.meta.or(cfg.meta.clone()).unwrap_or_else(|| PathBuf::from(format!("{}.meta.json", out.display())));
    check_output(&meta_path)?;
    let meta: Vec<RbCircuit> = RbMode::ALL.into_iter().flat_map(|m| sample_rb_circuits(&depths, per_depth, m, seed)).collect();
    let circuits: Vec<_> = meta.iter().map(|c| c.circuit.clone()).collect();
    write_atomic(&out, circuits_to_text(&circuits).as_bytes())?;
    write_atomic(&meta_path, to_json(&meta).as_bytes())?;
    Ok(EXIT_OK)
}

fn cmd_simulate(a: SimulateArgs, cfg: &RunConfig) -> Result<i32, CliError> {
    let design_path = require(a.design, cfg.design.clone(), "design")?;
    let out = require(a.out, cfg.out.clone(), "out")?;
    let seed = require(a.seed, cfg.seed, "seed")?;
    let shots = pick(a.shots, cfg.shots, DEFAULT_SHOTS);
    let background = pick(a.background, cfg.background, 0.0);
    check_input(&design_path)?;
    let model_path = a.model.or(cfg.model.clone());
    let noise_path = a.noise.or(cfg.noise.clone());
    let sources = [model_path.is_some(), noise_path.is_some(), a.zz.is_some(), a.zz_sweep].iter().filter(|&&b| b).count();
    if sources != 1 {
        return Err(CliError::validation("give exactly one of --model, --noise, --zz or --zz-sweep"));
    }
    for p in model_path.iter().chain(&noise_path) {
        check_input(p)?;
    }
    let circuits = circuits_from_text(&read_text(&design_path)?)?;
    let simulate = |model: &GateSetModel, description: String, path: &Path| -> Result<(), CliError> {
        let mut ds = sample(model, &circuits, shots, seed)?;
        ds.metadata.model = description;
        write_atomic(path, ds.to_jsonl().as_bytes())
    };
    if a.zz_sweep {
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(format!("cannot create {}: {e}", out.display())))?;
        let (lo, hi) = (pick(a.sweep_min, cfg.sweep_min, 1e-3), pick(a.sweep_max, cfg.sweep_max, 3e-2));
        let points = pick(a.sweep_points, cfg.sweep_points, 10);
        if !(lo > 0.0 && hi >= lo) || points == 0 {
            return Err(CliError::validation("sweep needs 0 < sweep-min <= sweep-max and at least one point"));
        }
        let eps = log_spaced(lo, hi, points);
        let mut index = Vec::new();
        for (i, &e) in eps.iter().enumerate() {
            let spec = NoiseSpec::zz(e).with_background_stochastic(background);
            let name = format!("zz_{i:02}.jsonl");
            simulate(&spec.build(None)?, spec.description.clone(), &out.join(&name))?;
            index.push(serde_json::json!({ "file": name, "eps": e }));
        }
        write_atomic(&out.join("sweep.json"), to_json(&index).as_bytes())?;
        return Ok(EXIT_OK);
    }
    check_output(&out)?;
    let (model, description) = if let Some(p) = model_path {
        let file: ModelFile = read_json(&p)?;
        let d = file.metadata.description.clone();
        (file.into_model()?, d)
    } else if let Some(p) = noise_path {
        let spec = NoiseSpec::from_json(&read_text(&p)?)?;
        (spec.build(None)?, spec.description)
    } else {
        let spec = NoiseSpec::zz(a.zz.expect("checked above")).with_background_stochastic(background);
        (spec.build(None)?, spec.description)
    };
    simulate(&model, description, &out)?;
    Ok(EXIT_OK)
}

/// Bootstrap half-widths of every reported generator coefficient (and of ε̄⋄).
fn attach_bootstrap(
    fit: &FitResult,
    ds: &Dataset,
    cfg: &FitConfig,
    replicates: usize,
    seed: u64,
    diamond: bool,
    reports: &mut [GateErrorReport],
) -> Result<Option<f64>, CliError> {
    let ci = bootstrap_ci(fit, ds, cfg, replicates, seed, |m| {
        let mut q = Vec::new();
        for r in model_error_reports(m)? {
            q.extend(r.hamiltonian_mrad.iter().map(|h| h / MRAD));
            q.extend(r.stochastic);
        }
        if diamond {
            q.push(avg_diamond_error(m)?.mean);
        }
        Ok(q)
    })?;
    let mut i = 0;
    for r in reports.iter_mut() {
        let n = r.labels.len();
        r.hamiltonian_halfwidth_mrad = Some(ci.half_widths[i..i + n].iter().map(|h| h * MRAD).collect());
        r.stochastic_halfwidth = Some(ci.half_widths[i + n..i + 2 * n].to_vec());
        i += 2 * n;
    }
    Ok(if diamond { ci.half_widths.get(i).copied() } else { None })
}

fn cmd_fit(a: FitArgs, cfg: &RunConfig) -> Result<i32, CliError> {
    let data_path = require(a.data, cfg.data.clone(), "data")?;
    let out = require(a.out, cfg.out.clone(), "out")?;
    check_input(&data_path)?;
    check_output(&out)?;
    let families = pick(a.families, cfg.families.clone(), ModelFamily::ALL.to_vec());
    if families.is_empty() {
        return Err(CliError::validation("no model families requested"));
    }
    let alpha = pick(a.alpha, cfg.alpha, DEFAULT_ALPHA);
    let gamma_threshold = pick(a.gamma_threshold, cfg.gamma_threshold, DEFAULT_GAMMA_THRESHOLD);
    let replicates = pick(a.bootstrap, cfg.bootstrap_replicates, 0);
    let seed = pick(a.seed, cfg.seed, 0);
    if replicates > 0 && replicates < 20 {
        return Err(CliError::validation("--bootstrap needs at least 20 replicates"));
    }
    let mut fit_cfg = cfg.fit.clone().unwrap_or_default();
    fit_cfg.seed = seed;
    if let Some(m) = a.max_iter {
        fit_cfg.max_iter = m;
    }
    fit_cfg.validate()?;
    let mut inputs = BTreeMap::new();
    let ds = Dataset::from_jsonl(&read_hashed(&data_path, &mut inputs)?)?;
    let fits = fit_nested(&families, &ds, &fit_cfg)?;
    let opts = CompareOptions { alpha, gamma_threshold, wildcard: !a.no_wildcard, diamond: !a.no_diamond };
    let mut comparison = compare(&fits, &ds, &opts)?;
    let mut gate_errors = Vec::new();
    for (i, fit) in fits.iter().enumerate() {
        let mut reports = model_error_reports(&fit.model)?;
        if replicates > 0 {
            let seed_i = seed.wrapping_add(i as u64 + 1);
            let hw = attach_bootstrap(fit, &ds, &fit_cfg, replicates, seed_i, opts.diamond, &mut reports)?;
            if let Some(m) = comparison.models.iter_mut().find(|m| m.family == fit.family()) {
                m.avg_diamond_halfwidth = hw;
            }
        }
        gate_errors.push(FamilyGateErrors { family: fit.family(), reports });
    }
    let converged = fits.iter().all(|f| f.diagnostics.converged);
    let fragment = Fragment::Fit(FitFragment {
        version: FRAGMENT_VERSION,
        provenance: Provenance::new(inputs),
        config: FitEcho { families, alpha, gamma_threshold, bootstrap_replicates: replicates, seed, fit: fit_cfg },
        converged,
        fits: fits.iter().map(FitResult::to_record).collect(),
        comparison,
        gate_errors,
    });
    write_atomic(&out, to_json(&fragment).as_bytes())?;
    if converged {
        Ok(EXIT_OK)
    } else {
        eprintln!("warning: at least one fit did not converge; see `converged` in {}", out.display());
        Ok(EXIT_NONCONVERGENCE)
    }
}

fn read_fit_fragment(path: &Path, inputs: &mut BTreeMap<String, String>) -> Result<FitFragment, CliError> {
    check_input(path)?;
    let text = read_hashed(path, inputs)?;
    match serde_json::from_str::<Fragment>(&text) {
        Ok(Fragment::Fit(f)) => Ok(f),
        Ok(_) => Err(CliError::validation(format!("{} is not a fit file", path.display()))),
        Err(e) => Err(CliError::validation(format!("{}: {e}", path.display()))),
    }
}

fn emit(out: Option<PathBuf>, text: String) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(&p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_select(a: SelectArgs, cfg: &RunConfig) -> Result<i32, CliError> {
    let out = a.out.or(cfg.out.clone());
    if let Some(p) = &out {
        check_output(p)?;
    }
    let mut inputs = BTreeMap::new();
    let frag = read_fit_fragment(&a.fit, &mut inputs)?;
    let threshold = pick(a.gamma_threshold, cfg.gamma_threshold, frag.config.gamma_threshold);
    let entries: Vec<(ModelFamily, f64)> = frag.fits.iter().map(|f| (f.family, f.lambda)).collect();
    let selection = select_by_lambda(&entries, threshold)?;
    let fragment = Fragment::Select(SelectFragment { version: FRAGMENT_VERSION, provenance: Provenance::new(inputs), selection });
    emit(out, to_json(&fragment))?;
    Ok(EXIT_OK)
}

fn cmd_wildcard(a: WildcardArgs, cfg: &RunConfig) -> Result<i32, CliError> {
    let data_path = require(a.data, cfg.data.clone(), "data")?;
    check_input(&data_path)?;
    let out = a.out.or(cfg.out.clone());
    if let Some(p) = &out {
        check_output(p)?;
    }
    let mut inputs = BTreeMap::new();
    let frag = read_fit_fragment(&a.fit, &mut inputs)?;
    let ds = Dataset::from_jsonl(&read_hashed(&data_path, &mut inputs)?)?;
    let alpha = pick(a.alpha, cfg.alpha, frag.config.alpha);
    let families = pick(a.families, cfg.families.clone(), frag.fits.iter().map(|f| f.family).collect());
    let mut results = Vec::new();
    for family in families {
        let record = frag
            .fits
            .iter()
            .find(|f| f.family == family)
            .ok_or_else(|| CliError::validation(format!("{} has no {family} fit", a.fit.display())))?;
        let fit = FitResult::from_record(record.clone(), &ds)?;
        results.push(FamilyWildcard { family, wildcard: wildcard_fit(&fit, &ds, alpha)? });
    }
    let fragment = Fragment::Wildcard(WildcardFragment { version: FRAGMENT_VERSION, provenance: Provenance::new(inputs), results });
    emit(out, to_json(&fragment))?;
    Ok(EXIT_OK)
}

fn cmd_rb(a: RbArgs, cfg: &RunConfig) -> Result<i32, CliError> {
    let data_path = require(a.data, cfg.data.clone(), "data")?;
    let meta_path = require(a.meta, cfg.meta.clone(), "meta")?;
    let out = require(a.out, cfg.out.clone(), "out")?;
    check_input(&data_path)?;
    check_input(&meta_path)?;
    check_output(&out)?;
    let replicates = pick(a.replicates, cfg.rb_replicates, DEFAULT_RB_REPLICATES);
    let seed = pick(a.seed, cfg.seed, 0);
    let mut inputs = BTreeMap::new();
    let ds = Dataset::from_jsonl(&read_hashed(&data_path, &mut inputs)?)?;
    let meta: Vec<RbCircuit> = serde_json::from_str(&read_hashed(&meta_path, &mut inputs)?)
        .map_err(|e| CliError::validation(format!("{}: {e}", meta_path.display())))?;
    let result = rb_analyze(&ds, &meta, replicates, seed)?;
    let variation = (0..2).filter_map(|q| context_variation_rb(&result, q).ok()).collect();
    let fragment = Fragment::Rb(RbFragment {
        version: FRAGMENT_VERSION,
        provenance: Provenance::new(inputs),
        config: RbEcho { replicates, seed },
        result,
        variation,
    });
    write_atomic(&out, to_json(&fragment).as_bytes())?;
    Ok(EXIT_OK)
}

fn slug(text: &str) -> String {
    text.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

fn cmd_report(a: ReportArgs) -> Result<i32, CliError> {
    if a.fragments.is_empty() {
        return Err(CliError::validation("report needs at least one --fragment"));
    }
    let out_dir = a.out.ok_or_else(|| CliError::validation("--out is required"))?;
    for f in &a.fragments {
        check_input(f)?;
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut inputs = BTreeMap::new();
    let mut report = Report {
        format: REPORT_FORMAT.into(),
        version: FRAGMENT_VERSION,
        provenance: Provenance::new(BTreeMap::new()),
        fits: Vec::new(),
        selections: Vec::new(),
        wildcards: Vec::new(),
        rb: Vec::new(),
        figures: Vec::new(),
    };
    let mut figures: Vec<(String, String)> = Vec::new();
    for (fi, path) in a.fragments.iter().enumerate() {
        let text = read_hashed(path, &mut inputs)?;
        let fragment: Fragment = serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let source = file_name(path);
        let prefix = if a.fragments.len() > 1 { format!("{fi}_") } else { String::new() };
        match fragment {
            Fragment::Fit(f) => {
                let section = fit_section(&source, &f);
                figures.push((format!("{prefix}comparison.svg"), svg::comparison_table(&section)));
                let mut gates: BTreeMap<(ModelFamily, String), Vec<&ReportGate>> = BTreeMap::new();
                for g in &section.gates {
                    gates.entry((g.family, g.gate.clone())).or_default().push(g);
                }
                for ((family, gate), reports) in &gates {
                    let name = format!("{prefix}hamiltonian_{}_{}.svg", slug(family.tag()), slug(gate));
                    figures.push((name, svg::hamiltonian_arrows(&format!("{gate} ({family})"), reports)));
                }
                report.fits.push(section);
            }
            Fragment::Select(s) => report.selections.push(s.selection),
            Fragment::Wildcard(w) => {
                for r in w.results {
                    report.wildcards.push(ReportWildcard {
                        source: source.clone(),
                        family: r.family,
                        w: Estimate::bare(r.wildcard.w),
                        lambda_relaxed: Estimate::bare(r.wildcard.lambda_relaxed),
                    });
                }
            }
            Fragment::Rb(r) => {
                for cell in &r.result.cells {
                    let context = match cell.context {
                        xtalkgst_core::rb::RbContext::SpectatorIdle => "idle",
                        xtalkgst_core::rb::RbContext::SpectatorDriven => "driven",
                    };
                    figures.push((format!("{prefix}rb_q{}_{context}.svg", cell.qubit), svg::decay_curve(cell)));
                }
                report.rb.push(rb_section(&source, &r));
            }
        }
    }
    report.provenance = Provenance::new(inputs);
    report.figures = figures.iter().map(|(n, _)| n.clone()).collect();
    for (name, body) in &figures {
        write_atomic(&out_dir.join(name), body.as_bytes())?;
    }
    write_atomic(&out_dir.join("report.json"), to_json(&report).as_bytes())?;
    Ok(EXIT_OK)
}
