//! Command outputs ("fragments") and the merged report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use xtalkgst_core::errorgen::GateErrorReport;
use xtalkgst_core::fit::{FitConfig, FitRecord};
use xtalkgst_core::models::ModelFamily;
use xtalkgst_core::rb::{ContextVariation, RBResult, RbContext};
use xtalkgst_core::select::{ComparisonReport, Selection, WildcardResult};

pub const FRAGMENT_VERSION: u32 = 1;
pub const REPORT_FORMAT: &str = "xtalk-gst-report";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// Input file name → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(inputs: BTreeMap<String, String>) -> Self {
        Self { tool: env!("CARGO_PKG_NAME").into(), version: env!("CARGO_PKG_VERSION").into(), inputs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEcho {
    pub families: Vec<ModelFamily>,
    pub alpha: f64,
    pub gamma_threshold: f64,
    pub bootstrap_replicates: usize,
    pub seed: u64,
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyGateErrors {
    pub family: ModelFamily,
    pub reports: Vec<GateErrorReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFragment {
    pub version: u32,
    pub provenance: Provenance,
    pub config: FitEcho,
    pub converged: bool,
    pub fits: Vec<FitRecord>,
    pub comparison: ComparisonReport,
    pub gate_errors: Vec<FamilyGateErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectFragment {
    pub version: u32,
    pub provenance: Provenance,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyWildcard {
    pub family: ModelFamily,
    pub wildcard: WildcardResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WildcardFragment {
    pub version: u32,
    pub provenance: Provenance,
    pub results: Vec<FamilyWildcard>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbEcho {
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbFragment {
    pub version: u32,
    pub provenance: Provenance,
    pub config: RbEcho,
    pub result: RBResult,
    pub variation: Vec<ContextVariation>,
}

/// Any file the `report` command accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Fragment {
    Fit(FitFragment),
    Select(SelectFragment),
    Wildcard(WildcardFragment),
    Rb(RbFragment),
}

/// A number with its uncertainty; `halfwidth` is null when none was computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub halfwidth: Option<f64>,
}

impl Estimate {
    pub fn bare(value: f64) -> Self {
        Self { value, halfwidth: None }
    }

    pub fn new(value: f64, halfwidth: Option<f64>) -> Self {
        Self { value, halfwidth }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportModel {
    pub family: ModelFamily,
    pub n_params: usize,
    pub n_free_params: usize,
    pub k: i64,
    pub lambda: Estimate,
    pub n_sigma: Estimate,
    pub wildcard: Option<Estimate>,
    pub avg_diamond: Option<Estimate>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportGamma {
    pub larger: ModelFamily,
    pub smaller: ModelFamily,
    pub gamma: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTerm {
    pub label: String,
    pub hamiltonian_mrad: Estimate,
    pub stochastic: Estimate,
    pub gauge_dependent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportGate {
    pub family: ModelFamily,
    pub gate: String,
    pub context: String,
    pub terms: Vec<ReportTerm>,
    pub residual: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFitSection {
    pub source: String,
    pub models: Vec<ReportModel>,
    pub gamma: Vec<ReportGamma>,
    pub selected: ModelFamily,
    pub rule: String,
    pub gates: Vec<ReportGate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRbCell {
    pub qubit: usize,
    pub context: RbContext,
    pub a: Estimate,
    pub b: Estimate,
    pub p: Estimate,
    pub r: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRbVariation {
    pub qubit: usize,
    pub r_idle: Estimate,
    pub r_driven: Estimate,
    pub variation: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRbSection {
    pub source: String,
    pub cells: Vec<ReportRbCell>,
    pub variation: Vec<ReportRbVariation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportWildcard {
    pub source: String,
    pub family: ModelFamily,
    pub w: Estimate,
    pub lambda_relaxed: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub version: u32,
    pub provenance: Provenance,
    pub fits: Vec<ReportFitSection>,
    pub selections: Vec<Selection>,
    pub wildcards: Vec<ReportWildcard>,
    pub rb: Vec<ReportRbSection>,
    pub figures: Vec<String>,
}

pub fn fit_section(source: &str, frag: &FitFragment) -> ReportFitSection {
    let models = frag
        .comparison
        .models
        .iter()
        .map(|m| ReportModel {
            family: m.family,
            n_params: m.n_params,
            n_free_params: m.n_free_params,
            k: m.k,
            lambda: Estimate::bare(m.lambda),
            n_sigma: Estimate::bare(m.n_sigma),
            wildcard: m.wildcard.map(|w| Estimate::new(w, m.wildcard_halfwidth)),
            avg_diamond: m.avg_diamond.map(|d| Estimate::new(d, m.avg_diamond_halfwidth)),
            converged: m.converged,
        })
        .collect();
    let gamma = frag
        .comparison
        .gamma
        .iter()
        .map(|g| ReportGamma { larger: g.larger, smaller: g.smaller, gamma: Estimate::bare(g.gamma) })
        .collect();
    let mut gates = Vec::new();
    for fam in &frag.gate_errors {
        for r in &fam.reports {
            let terms = r
                .labels
                .iter()
                .enumerate()
                .map(|(i, label)| ReportTerm {
                    label: label.clone(),
                    hamiltonian_mrad: Estimate::new(r.hamiltonian_mrad[i], r.hamiltonian_halfwidth_mrad.as_ref().map(|h| h[i])),
                    stochastic: Estimate::new(r.stochastic[i], r.stochastic_halfwidth.as_ref().map(|h| h[i])),
                    gauge_dependent: r.gauge_note.contains(label),
                })
                .collect();
            gates.push(ReportGate {
                family: fam.family,
                gate: r.gate.clone(),
                context: r.context.clone(),
                terms,
                residual: Estimate::bare(r.residual),
            });
        }
    }
    ReportFitSection {
        source: source.to_string(),
        models,
        gamma,
        selected: frag.comparison.selected,
        rule: frag.comparison.rule.clone(),
        gates,
    }
}

pub fn rb_section(source: &str, frag: &RbFragment) -> ReportRbSection {
    let cells = frag
        .result
        .cells
        .iter()
        .map(|c| ReportRbCell {
            qubit: c.qubit,
            context: c.context,
            a: Estimate::bare(c.decay.a),
            b: Estimate::bare(c.decay.b),
            p: Estimate::new(c.decay.p, Some(c.p_halfwidth)),
            r: Estimate::new(c.r, Some(c.r_halfwidth)),
        })
        .collect();
    let variation = frag
        .variation
        .iter()
        .map(|v| {
            let hw = |cell: RbContext| frag.result.cell(v.qubit, cell).map(|c| c.r_halfwidth);
            ReportRbVariation {
                qubit: v.qubit,
                r_idle: Estimate::new(v.r_idle, hw(RbContext::SpectatorIdle)),
                r_driven: Estimate::new(v.r_driven, hw(RbContext::SpectatorDriven)),
                variation: Estimate::new(v.variation, Some(v.halfwidth)),
            }
        })
        .collect();
    ReportRbSection { source: source.to_string(), cells, variation }
}
