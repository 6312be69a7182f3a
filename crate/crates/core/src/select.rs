//! Model comparison: likelihood ratios, evidence ratios, wildcard error and
//! diamond-distance summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::circuits::Layer;
use crate::engine::pairwise_sum;
use crate::error::{invalid, Error, Result};
use crate::errorgen::Target;
use crate::fit::{circuit_llr, per_circuit_llr, FitResult};
use crate::models::{GateSetModel, ModelFamily};
use crate::sdp::{diamond_distance, DiamondResult};
use crate::simulate::{clip_probabilities, probabilities_many, Dataset};

pub use crate::fit::n_sigma;

pub const DEFAULT_GAMMA_THRESHOLD: f64 = 2.0;
pub const DEFAULT_ALPHA: f64 = 0.05;
const WILDCARD_TOL: f64 = 1e-5;

/// `λ = −2 (log 𝓛 − log 𝓛_max)` of a fit on its dataset.
pub fn lambda_llr(fit: &FitResult, ds: &Dataset) -> Result<f64> {
    if fit.per_circuit_llr.len() != ds.len() {
        return Err(Error::CircuitMismatch(format!("fit covers {} circuits, dataset {}", fit.per_circuit_llr.len(), ds.len())));
    }
    Ok(pairwise_sum(&per_circuit_llr(&fit.model, ds)))
}

/// `γ = (λ_small − λ_large) / (N_p,large − N_p,small)`.
pub fn evidence_ratio_values(lambda_large: f64, np_large: usize, lambda_small: f64, np_small: usize) -> Result<f64> {
    if np_large <= np_small {
        return Err(Error::NotNested(format!("{np_large} parameters do not extend {np_small}")));
    }
    Ok((lambda_small - lambda_large) / (np_large - np_small) as f64)
}

/// Evidence ratio between nested fits, using gauge-free parameter counts.
pub fn evidence_ratio(fit_large: &FitResult, fit_small: &FitResult) -> Result<f64> {
    let (large, small) = (fit_large.family(), fit_small.family());
    if !large.contains(small) || large == small {
        return Err(Error::NotNested(format!("{large} does not strictly contain {small}")));
    }
    evidence_ratio_values(fit_large.lambda, large.n_free_params(), fit_small.lambda, small.n_free_params())
}

/// Water-filled prediction closest in likelihood to the data within total-variation `budget`.
pub fn relax_prediction(counts: &[f64; 4], p: &[f64; 4], budget: f64) -> [f64; 4] {
    let n: f64 = counts.iter().sum();
    if n <= 0.0 || budget <= 0.0 {
        return *p;
    }
    let f = counts.map(|c| c / n);
    let tvd = 0.5 * (0..4).map(|a| (p[a] - f[a]).abs()).sum::<f64>();
    let delta = budget.min(tvd);
    if delta <= 0.0 {
        return *p;
    }
    let mut out = *p;
    // raise under-predicted outcomes to a common floor α f
    let added = |alpha: f64| (0..4).filter(|&a| p[a] < f[a]).map(|a| (alpha * f[a] - p[a]).max(0.0)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if added(mid) < delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let mut moved_in = 0.0;
    for a in 0..4 {
        if p[a] < f[a] {
            out[a] = p[a].max(alpha * f[a]);
            moved_in += out[a] - p[a];
        }
    }
    // lower over-predicted outcomes to a common ceiling β f; unobserved ones go first
    let free: f64 = (0..4).filter(|&a| p[a] > f[a] && f[a] == 0.0).map(|a| p[a]).sum();
    if moved_in <= free {
        let scale = 1.0 - moved_in / free;
        for a in 0..4 {
            if p[a] > f[a] && f[a] == 0.0 {
                out[a] = p[a] * scale;
            }
        }
        return out;
    }
    let removed = |beta: f64| (0..4).filter(|&a| p[a] > f[a]).map(|a| (p[a] - beta * f[a]).max(0.0)).sum::<f64>();
    let top = (0..4).filter(|&a| p[a] > f[a] && f[a] > 0.0).map(|a| p[a] / f[a]).fold(1.0, f64::max);
    let (mut lo, mut hi) = (1.0, top);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if removed(mid) > moved_in {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = 0.5 * (lo + hi);
    for a in 0..4 {
        if p[a] > f[a] {
            out[a] = p[a].min(beta * f[a]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WildcardResult {
    /// Per-layer total-variation budget.
    pub w: f64,
    pub alpha: f64,
    pub lambda_relaxed: f64,
    pub lambda_threshold: f64,
    pub max_circuit_llr: f64,
    pub circuit_threshold: f64,
    pub passes_unrelaxed: bool,
}

impl WildcardResult {
    /// Budget of a circuit with `layers` layers.
    pub fn circuit_budget(&self, layers: usize) -> f64 {
        self.w * layers.max(1) as f64
    }
}

struct WildcardProblem {
    counts: Vec<[f64; 4]>,
    probs: Vec<[f64; 4]>,
    sizes: Vec<f64>,
    lambda_threshold: f64,
    circuit_threshold: f64,
}

impl WildcardProblem {
    fn relaxed(&self, w: f64) -> (f64, f64) {
        let llr: Vec<f64> = (0..self.counts.len())
            .into_par_iter()
            .map(|i| {
                let q = relax_prediction(&self.counts[i], &self.probs[i], w * self.sizes[i]);
                circuit_llr(&self.counts[i], &q)
            })
            .collect();
        (pairwise_sum(&llr), llr.iter().copied().fold(0.0, f64::max))
    }

    fn passes(&self, w: f64) -> (bool, f64, f64) {
        let (total, worst) = self.relaxed(w);
        (total <= self.lambda_threshold && worst <= self.circuit_threshold, total, worst)
    }
}

/// Smallest per-layer budget `W` for which the relaxed model passes both the
/// aggregate test `λ_W ≤ k + 2√(2k)` and every Bonferroni-corrected per-circuit test.
pub fn wildcard_fit(fit: &FitResult, ds: &Dataset, alpha: f64) -> Result<WildcardResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    if fit.per_circuit_llr.len() != ds.len() {
        return Err(Error::CircuitMismatch("fit and dataset differ".into()));
    }
    let k = fit.k.max(1) as f64;
    let chi2 = ChiSquared::new(3.0).expect("dof > 0");
    let problem = WildcardProblem {
        counts: ds.counts(),
        probs: probabilities_many(&fit.model, &ds.circuits()).iter().map(clip_probabilities).collect(),
        sizes: ds.rows.iter().map(|r| r.circuit.depth().max(1) as f64).collect(),
        lambda_threshold: k + 2.0 * (2.0 * k).sqrt(),
        circuit_threshold: chi2.inverse_cdf(1.0 - alpha / ds.len() as f64),
    };
    let (ok, total, worst) = problem.passes(0.0);
    let mut result = WildcardResult {
        w: 0.0,
        alpha,
        lambda_relaxed: total,
        lambda_threshold: problem.lambda_threshold,
        max_circuit_llr: worst,
        circuit_threshold: problem.circuit_threshold,
        passes_unrelaxed: ok,
    };
    if ok {
        return Ok(result);
    }
    let mut lo = 0.0;
    let mut hi = 1e-4;
    while !problem.passes(hi).0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1.0 {
            hi = 1.0;
            break;
        }
    }
    while hi - lo > WILDCARD_TOL {
        let mid = 0.5 * (lo + hi);
        if problem.passes(mid).0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (_, total, worst) = problem.passes(hi);
    result.w = hi;
    result.lambda_relaxed = total;
    result.max_circuit_llr = worst;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgDiamond {
    pub mean: f64,
    pub per_layer: Vec<DiamondResult>,
    pub converged: bool,
}

/// Mean diamond distance of the nine layer channels from their ideal targets.
pub fn avg_diamond_error(m: &GateSetModel) -> Result<AvgDiamond> {
    let per_layer: Vec<DiamondResult> =
        Layer::all().into_iter().map(|l| diamond_distance(&m.layer_channel(l), &Target::Layer(l).ideal())).collect::<Result<_>>()?;
    let mean = per_layer.iter().map(|d| d.value).sum::<f64>() / per_layer.len() as f64;
    let converged = per_layer.iter().all(|d| d.converged);
    Ok(AvgDiamond { mean, per_layer, converged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaEntry {
    pub larger: ModelFamily,
    pub smaller: ModelFamily,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: ModelFamily,
    pub threshold: f64,
    pub rule: String,
    pub gamma: Vec<GammaEntry>,
}

/// Walks the nest upward from the smallest fitted family, stopping at the first
/// family whose next-larger neighbour has `γ ≤ threshold`.
pub fn select_model(fits: &[FitResult], threshold: f64) -> Result<Selection> {
    let entries: Vec<(ModelFamily, f64)> = fits.iter().map(|f| (f.family(), f.lambda)).collect();
    select_by_lambda(&entries, threshold)
}

/// [`select_model`] on `(family, λ)` pairs.
pub fn select_by_lambda(entries: &[(ModelFamily, f64)], threshold: f64) -> Result<Selection> {
    if !threshold.is_finite() {
        return invalid("gamma threshold must be finite");
    }
    let mut sorted = entries.to_vec();
    sorted.sort_by_key(|e| e.0);
    sorted.dedup_by_key(|e| e.0);
    let Some(&(first, _)) = sorted.first() else {
        return invalid("no fits to select from");
    };
    let mut selected = first;
    let mut gamma = Vec::new();
    let mut stopped = false;
    for pair in sorted.windows(2) {
        let ((small, lambda_small), (large, lambda_large)) = (pair[0], pair[1]);
        if !large.contains(small) {
            return Err(Error::NotNested(format!("{large} does not contain {small}")));
        }
        let g = evidence_ratio_values(lambda_large, large.n_free_params(), lambda_small, small.n_free_params())?;
        gamma.push(GammaEntry { larger: large, smaller: small, gamma: g });
        if !stopped {
            if g <= threshold {
                stopped = true;
            } else {
                selected = large;
            }
        }
    }
    let rule = format!("walk the nest from {first}: keep the smaller model when gamma(next larger vs it) <= {threshold}");
    Ok(Selection { selected, threshold, rule, gamma })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub family: ModelFamily,
    pub n_params: usize,
    pub n_free_params: usize,
    pub lambda: f64,
    pub k: i64,
    pub n_sigma: f64,
    pub wildcard: Option<f64>,
    pub wildcard_halfwidth: Option<f64>,
    pub avg_diamond: Option<f64>,
    pub avg_diamond_halfwidth: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub models: Vec<ModelSummary>,
    pub gamma: Vec<GammaEntry>,
    pub selected: ModelFamily,
    pub rule: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub alpha: f64,
    pub gamma_threshold: f64,
    pub wildcard: bool,
    pub diamond: bool,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, gamma_threshold: DEFAULT_GAMMA_THRESHOLD, wildcard: true, diamond: true }
    }
}

pub fn compare(fits: &[FitResult], ds: &Dataset, opts: &CompareOptions) -> Result<ComparisonReport> {
    let selection = select_model(fits, opts.gamma_threshold)?;
    let mut models = Vec::with_capacity(fits.len());
    for f in fits {
        let wildcard = if opts.wildcard { Some(wildcard_fit(f, ds, opts.alpha)?.w) } else { None };
        let avg_diamond = if opts.diamond { Some(avg_diamond_error(&f.model)?.mean) } else { None };
        models.push(ModelSummary {
            family: f.family(),
            n_params: f.n_params(),
            n_free_params: f.family().n_free_params(),
            lambda: f.lambda,
            k: f.k,
            n_sigma: f.n_sigma,
            wildcard,
            wildcard_halfwidth: None,
            avg_diamond,
            avg_diamond_halfwidth: None,
            converged: f.diagnostics.converged,
        });
    }
    models.sort_by_key(|m| m.family);
    Ok(ComparisonReport { models, gamma: selection.gamma, selected: selection.selected, rule: selection.rule })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evidence_ratio_table_values() {
        let g = evidence_ratio_values(77.60e3, 230, 148.82e3, 86).unwrap();
        assert!((g - 494.58).abs() < 0.5, "{g}");
        assert_eq!(evidence_ratio_values(5.0, 100, 5.0, 10).unwrap(), 0.0);
        assert!(evidence_ratio_values(1.0, 10, 2.0, 10).is_err());
    }

    #[test]
    fn relaxation_moves_toward_data() {
        let n = [60.0, 40.0, 0.0, 0.0];
        let p = [0.4, 0.4, 0.1, 0.1];
        let q = relax_prediction(&n, &p, 0.05);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(0.5 * (0..4).map(|a| (q[a] - p[a]).abs()).sum::<f64>() <= 0.05 + 1e-12);
        assert!(circuit_llr(&n, &q) < circuit_llr(&n, &p));
        // unobserved outcomes give up mass first
        assert!((q[1] - 0.4).abs() < 1e-12);
        // a large budget reaches the frequencies
        let q = relax_prediction(&n, &p, 1.0);
        assert!((q[0] - 0.6).abs() < 1e-9 && (q[1] - 0.4).abs() < 1e-9 && q[2].abs() < 1e-9);
        assert_eq!(relax_prediction(&n, &p, 0.0), p);
    }

    #[test]
    fn relaxation_shares_removal_by_ratio() {
        let n = [10.0, 30.0, 30.0, 30.0];
        let p = [0.4, 0.2, 0.2, 0.2];
        let q = relax_prediction(&n, &p, 0.1);
        // over-predicted outcome 0 gives 0.1; the three others each gain a third
        assert!((q[0] - 0.3).abs() < 1e-9);
        for a in 1..4 {
            assert!((q[a] - (0.2 + 0.1 / 3.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn selection_rule() {
        use crate::fit::{FitDiagnostics, FitResult};
        let fake = |family: ModelFamily, lambda: f64| FitResult {
            model: GateSetModel::ideal(family),
            loglikelihood: 0.0,
            max_loglikelihood: 0.0,
            lambda,
            k: 1,
            n_sigma: 0.0,
            per_circuit_llr: Vec::new(),
            diagnostics: FitDiagnostics {
                iterations: 0,
                evaluations: 0,
                converged: true,
                grad_norm: 0.0,
                cp_violation: 0.0,
                max_cp_violation: 0.0,
                starts: 1,
                seeded: false,
                kept_seed: false,
                message: String::new(),
            },
        };
        let cf = ModelFamily::CrosstalkFree.n_free_params() as f64;
        let cd = ModelFamily::ContextDependent.n_free_params() as f64;
        let gen = ModelFamily::General.n_free_params() as f64;
        let flat = [fake(ModelFamily::CrosstalkFree, 1000.0), fake(ModelFamily::ContextDependent, 1000.0 - 0.5 * (cd - cf)), fake(ModelFamily::General, 900.0 - 0.5 * (gen - cd))];
        assert_eq!(select_model(&flat, 2.0).unwrap().selected, ModelFamily::CrosstalkFree);
        let aqt = [fake(ModelFamily::CrosstalkFree, 1e5), fake(ModelFamily::ContextDependent, 1e5 - 400.0 * (cd - cf)), fake(ModelFamily::General, 1e5 - 400.0 * (cd - cf) - 0.9 * (gen - cd))];
        let s = select_model(&aqt, 2.0).unwrap();
        assert_eq!(s.selected, ModelFamily::ContextDependent);
        assert!((s.gamma[0].gamma - 400.0).abs() < 1e-9 && (s.gamma[1].gamma - 0.9).abs() < 1e-9);
        let zz = [fake(ModelFamily::CrosstalkFree, 1e5), fake(ModelFamily::ContextDependent, 1e5 - 10.0 * (cd - cf)), fake(ModelFamily::General, 1e5 - 10.0 * (cd - cf) - 5.0 * (gen - cd))];
        assert_eq!(select_model(&zz, 2.0).unwrap().selected, ModelFamily::General);
        let embedded = fake(ModelFamily::ContextDependent, 1000.0);
        assert_eq!(evidence_ratio(&embedded, &fake(ModelFamily::CrosstalkFree, 1000.0)).unwrap(), 0.0);
        assert!(evidence_ratio(&flat[0], &flat[1]).is_err());
    }
}
