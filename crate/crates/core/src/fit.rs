//! Maximum-likelihood estimation of gate-set models.
//!
//! Fits run in two stages: a frequency-weighted χ² surrogate, then the exact
//! log-likelihood, each with a quadratic penalty on negative Choi eigenvalues.
//! Larger families are seeded from the embedded optimum of a smaller one.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{pairwise_sum, CircuitTrie};
use crate::error::{invalid, Error, Result};
use crate::models::{GateSetModel, Init, ModelFamily, ModelFile, ModelMetadata};
use crate::optimize::{lbfgs, LbfgsConfig};
use crate::simulate::{clip_probabilities, multinomial, probabilities_many, Counts, Dataset};

/// Below this probability the log-likelihood is continued by its second-order expansion.
const P_MIN: f64 = 1e-4;
/// Smallest frequency used as a χ² weight denominator.
const CHI_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    pub cp_weights: Vec<f64>,
    /// Escalation along `cp_weights` stops once the largest negative Choi
    /// eigenvalue magnitude is at most this.
    pub cp_tol: f64,
    pub n_starts: usize,
    pub perturbation: f64,
    pub seed: u64,
    pub bootstrap_replicates: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 4000,
            grad_tol: 1e-4,
            f_tol: 1e-11,
            cp_weights: vec![1e2, 1e4, 1e6],
            cp_tol: 1e-2,
            n_starts: 3,
            perturbation: 1e-3,
            seed: 0,
            bootstrap_replicates: 20,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.f_tol > 0.0) {
            return invalid("fit tolerances must be positive");
        }
        if self.max_iter == 0 || self.n_starts == 0 {
            return invalid("max_iter and n_starts must be positive");
        }
        if !(self.cp_tol >= 0.0) {
            return invalid("cp_tol must be nonnegative");
        }
        if self.cp_weights.is_empty() || self.cp_weights.iter().any(|w| !(*w >= 0.0)) {
            return invalid("the CP weight schedule must be a nonempty list of nonnegative weights");
        }
        Ok(())
    }

    fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig { max_iter: self.max_iter, grad_tol: self.grad_tol, f_tol: self.f_tol, patience: 8, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// Sum of squared negative Choi eigenvalues of the returned model.
    pub cp_violation: f64,
    pub max_cp_violation: f64,
    pub starts: usize,
    pub seeded: bool,
    pub kept_seed: bool,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: GateSetModel,
    pub loglikelihood: f64,
    pub max_loglikelihood: f64,
    pub lambda: f64,
    pub k: i64,
    pub n_sigma: f64,
    /// Per-circuit contributions to `lambda`, in dataset row order.
    pub per_circuit_llr: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub family: ModelFamily,
    pub n_params: usize,
    pub loglikelihood: f64,
    pub max_loglikelihood: f64,
    pub lambda: f64,
    pub k: i64,
    pub n_sigma: f64,
    pub diagnostics: FitDiagnostics,
    pub model: ModelFile,
}

impl FitResult {
    pub fn family(&self) -> ModelFamily {
        self.model.family()
    }

    pub fn n_params(&self) -> usize {
        self.model.n_params()
    }

    pub fn to_record(&self) -> FitRecord {
        FitRecord {
            family: self.family(),
            n_params: self.n_params(),
            loglikelihood: self.loglikelihood,
            max_loglikelihood: self.max_loglikelihood,
            lambda: self.lambda,
            k: self.k,
            n_sigma: self.n_sigma,
            diagnostics: self.diagnostics.clone(),
            model: self.model.to_file(ModelMetadata { seed: None, description: "maximum-likelihood estimate".into() }),
        }
    }

    /// Rebuilds a result from its record and the dataset it was fitted to.
    pub fn from_record(record: FitRecord, ds: &Dataset) -> Result<Self> {
        let model = record.model.into_model()?;
        if model.family() != record.family {
            return invalid(format!("record says {} but holds a {} model", record.family, model.family()));
        }
        let per_circuit_llr = per_circuit_llr(&model, ds);
        let lambda = pairwise_sum(&per_circuit_llr);
        if (lambda - record.lambda).abs() > 1e-6 * record.lambda.abs().max(1.0) {
            return Err(Error::CircuitMismatch(format!("recorded lambda {} but {lambda} on this dataset", record.lambda)));
        }
        Ok(Self {
            model,
            loglikelihood: record.loglikelihood,
            max_loglikelihood: record.max_loglikelihood,
            lambda: record.lambda,
            k: record.k,
            n_sigma: record.n_sigma,
            per_circuit_llr,
            diagnostics: record.diagnostics,
        })
    }
}

/// `Σ n log p` with clipped, renormalized probabilities.
pub fn loglikelihood(m: &GateSetModel, ds: &Dataset) -> f64 {
    let probs = probabilities_many(m, &ds.circuits());
    let terms: Vec<f64> = ds
        .rows
        .iter()
        .zip(&probs)
        .map(|(r, p)| {
            let q = clip_probabilities(p);
            r.counts.as_f64().iter().zip(&q).filter(|(n, _)| **n > 0.0).map(|(n, p)| n * p.ln()).sum()
        })
        .collect();
    pairwise_sum(&terms)
}

/// `Σ n log f` with `0 log 0 = 0`.
pub fn max_loglikelihood(ds: &Dataset) -> f64 {
    let terms: Vec<f64> = ds.rows.iter().map(|r| max_ll_row(&r.counts)).collect();
    pairwise_sum(&terms)
}

fn max_ll_row(c: &Counts) -> f64 {
    let n = c.total() as f64;
    c.as_f64().iter().filter(|x| **x > 0.0).map(|x| x * (x / n).ln()).sum()
}

/// Per-circuit `2 Σ n log(f/p)` with clipped probabilities.
pub fn per_circuit_llr(m: &GateSetModel, ds: &Dataset) -> Vec<f64> {
    let probs = probabilities_many(m, &ds.circuits());
    ds.rows.iter().zip(&probs).map(|(r, p)| circuit_llr(&r.counts.as_f64(), &clip_probabilities(p))).collect()
}

/// `2 Σ_a n_a log(f_a / p_a)` for one circuit.
pub fn circuit_llr(counts: &[f64; 4], p: &[f64; 4]) -> f64 {
    let n: f64 = counts.iter().sum();
    let mut s = 0.0;
    for a in 0..4 {
        if counts[a] > 0.0 {
            s += counts[a] * (counts[a] / (n * p[a])).ln();
        }
    }
    (2.0 * s).max(0.0)
}

/// Wilks degrees of freedom: three free probabilities per circuit minus the
/// family's gauge-free parameter count.
pub fn wilks_k(n_circuits: usize, family: ModelFamily) -> i64 {
    3 * n_circuits as i64 - family.n_free_params() as i64
}

/// Standardized model violation `(λ − k)/√(2k)`.
pub fn n_sigma(lambda: f64, k: i64) -> Result<f64> {
    if k <= 0 {
        return invalid(format!("n_sigma needs k > 0, got {k}"));
    }
    Ok((lambda - k as f64) / (2.0 * k as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ChiSquared,
    LogLikelihood,
}

/// Objective over one dataset; the trie is built once and reused.
pub struct Objective {
    trie: CircuitTrie,
    counts: Vec<[f64; 4]>,
    totals: Vec<f64>,
    log_f: Vec<[f64; 4]>,
}

impl Objective {
    pub fn new(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return invalid("cannot fit an empty dataset");
        }
        let counts = ds.counts();
        let totals: Vec<f64> = counts.iter().map(|c| c.iter().sum()).collect();
        if totals.iter().any(|t| *t <= 0.0) {
            return invalid("every circuit needs at least one count");
        }
        let log_f = counts
            .iter()
            .zip(&totals)
            .map(|(c, n)| c.map(|x| if x > 0.0 { (x / n).ln() } else { 0.0 }))
            .collect();
        Ok(Self { trie: CircuitTrie::new(&ds.circuits()), counts, totals, log_f })
    }

    /// Stage objective plus `weight · cp_violation`; writes the θ-gradient into `grad` if given.
    pub fn value(&self, m: &GateSetModel, stage: Stage, weight: f64, grad: Option<&mut [f64]>) -> f64 {
        let want = grad.is_some();
        let term = |ci: usize, p: &[f64; 4]| match stage {
            Stage::LogLikelihood => nll_term(&self.counts[ci], self.totals[ci], &self.log_f[ci], p),
            Stage::ChiSquared => chi2_term(&self.counts[ci], self.totals[ci], p),
        };
        let (v, g) = self.trie.evaluate(m.compiled(), term, want);
        let mut total = v;
        if let Some(out) = grad {
            out.iter_mut().for_each(|x| *x = 0.0);
            m.pullback(&g.expect("gradient requested"), out);
            if weight > 0.0 {
                let mut cg = vec![0.0; out.len()];
                total += weight * m.cp_violation(Some(&mut cg));
                for (o, c) in out.iter_mut().zip(&cg) {
                    *o += weight * c;
                }
            }
        } else if weight > 0.0 {
            total += weight * m.cp_violation(None);
        }
        total
    }
}

/// Poisson-form negative log-likelihood `Σ [N p − n log p + n log f − n]`, which
/// equals `λ/2` for normalized predictions that are all at least `P_MIN`. Below `P_MIN` each outcome is continued
/// by a quadratic with curvature at least `N / P_MIN`, so negative predictions for
/// unobserved outcomes are penalized.
fn nll_term(n: &[f64; 4], total: f64, log_f: &[f64; 4], p: &[f64; 4]) -> (f64, [f64; 4]) {
    let mut v = 0.0;
    let mut d = [0.0; 4];
    for a in 0..4 {
        let base = if n[a] > 0.0 { n[a] * (log_f[a] - 1.0) } else { 0.0 };
        if p[a] >= P_MIN {
            let log_term = if n[a] > 0.0 { n[a] * p[a].ln() } else { 0.0 };
            v += total * p[a] - log_term + base;
            d[a] = total - n[a] / p[a];
        } else {
            let g0 = total * P_MIN - if n[a] > 0.0 { n[a] * P_MIN.ln() } else { 0.0 } + base;
            let g1 = total - n[a] / P_MIN;
            let g2 = (n[a] / (P_MIN * P_MIN)).max(total / P_MIN);
            let t = p[a] - P_MIN;
            v += g0 + g1 * t + 0.5 * g2 * t * t;
            d[a] = g1 + g2 * t;
        }
    }
    (v, d)
}

/// `½ Σ N (p − f)² / max(f, CHI_FLOOR)`.
fn chi2_term(n: &[f64; 4], total: f64, p: &[f64; 4]) -> (f64, [f64; 4]) {
    let mut v = 0.0;
    let mut d = [0.0; 4];
    for a in 0..4 {
        let f = n[a] / total;
        let w = total / f.max(CHI_FLOOR);
        let r = p[a] - f;
        v += 0.5 * w * r * r;
        d[a] = w * r;
    }
    (v, d)
}

struct StageOutcome {
    model: GateSetModel,
    iterations: usize,
    evaluations: usize,
    converged: bool,
    grad_norm: f64,
    message: String,
}

fn run_stage(obj: &Objective, start: &GateSetModel, stage: Stage, weight: f64, cfg: &FitConfig) -> Result<StageOutcome> {
    let family = start.family();
    let mut failure = None;
    let out = lbfgs(
        |x, g| match GateSetModel::new(family, x.to_vec()) {
            Ok(m) => obj.value(&m, stage, weight, Some(g)),
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        },
        start.theta(),
        &cfg.lbfgs(),
    );
    if !out.f.is_finite() {
        return Err(failure.unwrap_or_else(|| Error::Numerical(out.message.clone())));
    }
    Ok(StageOutcome {
        model: start.with_theta(out.x)?,
        iterations: out.iterations,
        evaluations: out.evaluations,
        converged: out.converged,
        grad_norm: out.grad_norm,
        message: out.message,
    })
}

fn fit_from(obj: &Objective, start: &GateSetModel, cfg: &FitConfig, warm: bool) -> Result<(StageOutcome, f64, f64)> {
    let mut iterations = 0;
    let mut evaluations = 0;
    let first = cfg.cp_weights[0];
    let mut current = start.clone();
    if !warm {
        let chi = run_stage(obj, start, Stage::ChiSquared, first, cfg)?;
        iterations += chi.iterations;
        evaluations += chi.evaluations;
        current = chi.model;
    }
    let mut last = None;
    let mut weight = first;
    for &w in &cfg.cp_weights {
        weight = w;
        let s = run_stage(obj, &current, Stage::LogLikelihood, w, cfg)?;
        iterations += s.iterations;
        evaluations += s.evaluations;
        current = s.model.clone();
        last = Some(s);
        if current.max_cp_violation() <= cfg.cp_tol {
            break;
        }
    }
    let mut last = last.expect("nonempty schedule");
    last.iterations = iterations;
    last.evaluations = evaluations;
    let value = obj.value(&last.model, Stage::LogLikelihood, weight, None);
    Ok((last, value, weight))
}

fn start_seed(seed: u64, start: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((start as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Maximum-likelihood fit of `family` to `ds`. A `seed_model` from a nested smaller
/// family is embedded and used as the single starting point.
pub fn mle_fit(family: ModelFamily, ds: &Dataset, cfg: &FitConfig, seed_model: Option<&GateSetModel>) -> Result<FitResult> {
    cfg.validate()?;
    let obj = Objective::new(ds)?;
    let starts: Vec<GateSetModel> = match seed_model {
        Some(s) => vec![s.embed(family)?],
        None => {
            let n = if family == ModelFamily::CrosstalkFree { cfg.n_starts } else { 1 };
            (0..n)
                .map(|i| {
                    GateSetModel::instantiate(family, Init::Perturbed { seed: start_seed(cfg.seed, i), scale: cfg.perturbation })
                })
                .collect()
        }
    };
    let mut best: Option<(StageOutcome, f64, f64)> = None;
    for s in &starts {
        let (out, value, weight) = fit_from(&obj, s, cfg, false)?;
        if best.as_ref().is_none_or(|(_, v, _)| value < *v) {
            best = Some((out, value, weight));
        }
    }
    let (mut out, _, _) = best.expect("at least one start");
    let mut kept_seed = false;
    if seed_model.is_some() {
        let refined: f64 = per_circuit_llr(&out.model, ds).iter().sum();
        let seeded: f64 = per_circuit_llr(&starts[0], ds).iter().sum();
        if seeded <= refined {
            out.model = starts[0].clone();
            kept_seed = true;
        }
    }
    Ok(summarize(out, ds, starts.len(), seed_model.is_some(), kept_seed))
}

/// Likelihood-only refit starting at `start`, for data expected to lie close to its optimum.
pub fn warm_fit(start: &GateSetModel, ds: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let obj = Objective::new(ds)?;
    let (out, _, _) = fit_from(&obj, start, cfg, true)?;
    Ok(summarize(out, ds, 1, true, false))
}

fn summarize(out: StageOutcome, ds: &Dataset, starts: usize, seeded: bool, kept_seed: bool) -> FitResult {
    let model = out.model;
    let per = per_circuit_llr(&model, ds);
    let lambda = pairwise_sum(&per);
    let max_ll = max_loglikelihood(ds);
    let k = wilks_k(ds.len(), model.family());
    let ns = n_sigma(lambda, k).unwrap_or(f64::NAN);
    let diagnostics = FitDiagnostics {
        iterations: out.iterations,
        evaluations: out.evaluations,
        converged: out.converged || kept_seed,
        grad_norm: out.grad_norm,
        cp_violation: model.cp_violation(None),
        max_cp_violation: model.max_cp_violation(),
        starts,
        seeded,
        kept_seed,
        message: if kept_seed { "seed model retained: refinement did not improve it".into() } else { out.message },
    };
    FitResult {
        loglikelihood: max_ll - 0.5 * lambda,
        max_loglikelihood: max_ll,
        lambda,
        k,
        n_sigma: ns,
        per_circuit_llr: per,
        diagnostics,
        model,
    }
}

/// Fits each family in nesting order, seeding every fit from the previous optimum.
pub fn fit_nested(families: &[ModelFamily], ds: &Dataset, cfg: &FitConfig) -> Result<Vec<FitResult>> {
    let mut order = families.to_vec();
    order.sort();
    order.dedup();
    let mut out: Vec<FitResult> = Vec::with_capacity(order.len());
    for f in order {
        let seed = out.last().map(|r| r.model.clone());
        out.push(mle_fit(f, ds, cfg, seed.as_ref())?);
    }
    Ok(out)
}

/// Resamples every row's total count from the model's predictions.
pub fn resample(m: &GateSetModel, ds: &Dataset, seed: u64) -> Result<Dataset> {
    let probs = probabilities_many(m, &ds.circuits());
    let counts: Vec<Counts> = ds
        .rows
        .iter()
        .zip(&probs)
        .enumerate()
        .map(|(i, (r, p))| {
            let mut rng = ChaCha20Rng::seed_from_u64(start_seed(seed, i));
            Counts::from_array(multinomial(&mut rng, r.counts.total(), &clip_probabilities(p)))
        })
        .collect();
    ds.with_counts(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub estimates: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub replicates_used: usize,
    pub dropped: usize,
}

impl BootstrapCi {
    pub fn covers(&self, i: usize, value: f64) -> bool {
        self.lower[i] <= value && value <= self.upper[i]
    }
}

/// Linear-interpolated percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Relative-decrease tolerance for bootstrap refits, which start at the original optimum.
pub const BOOTSTRAP_F_TOL: f64 = 1e-9;

/// Parametric bootstrap: resample from the fit, refit seeded from it and report
/// 2.5/97.5 percentile half-widths of each quantity.

pub fn bootstrap_ci<Q>(fit: &FitResult, ds: &Dataset, cfg: &FitConfig, replicates: usize, seed: u64, quantities: Q) -> Result<BootstrapCi>
where
    Q: Fn(&GateSetModel) -> Result<Vec<f64>>,
{
    if replicates < 20 {
        return invalid(format!("bootstrap needs at least 20 replicates, got {replicates}"));
    }
    let estimates = quantities(&fit.model)?;
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(replicates); estimates.len()];
    let mut dropped = 0;
    let rcfg = FitConfig { n_starts: 1, f_tol: cfg.f_tol.max(BOOTSTRAP_F_TOL), ..cfg.clone() };
    for r in 0..replicates {
        let data = resample(&fit.model, ds, start_seed(seed, r))?;
        let refit = warm_fit(&fit.model, &data, &rcfg);
        match refit.and_then(|f| if f.diagnostics.converged { quantities(&f.model) } else { Err(Error::Numerical("replicate did not converge".into())) }) {
            Ok(q) if q.len() == estimates.len() => {
                for (s, v) in samples.iter_mut().zip(q) {
                    s.push(v);
                }
            }
            _ => dropped += 1,
        }
    }
    let used = replicates - dropped;
    if used == 0 {
        return Err(Error::Numerical("every bootstrap replicate failed".into()));
    }
    let mut lower = Vec::with_capacity(estimates.len());
    let mut upper = Vec::with_capacity(estimates.len());
    for s in samples.iter_mut() {
        s.sort_by(f64::total_cmp);
        lower.push(percentile(s, 0.025));
        upper.push(percentile(s, 0.975));
    }
    let half_widths = lower.iter().zip(&upper).map(|(l, u)| 0.5 * (u - l)).collect();
    Ok(BootstrapCi { estimates, lower, upper, half_widths, replicates_used: used, dropped })
}
