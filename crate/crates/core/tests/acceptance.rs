//! End-to-end acceptance criteria. Each criterion prints one `PASS`/`FAIL` line;
//! the process fails if any criterion fails.
//!
//! Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 4 8`.

use std::io::Write;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use xtalkgst_core::circuits::{build_gst_design, circuits_from_text, sample_rb_circuits, Circuit, GateLabel, Layer, RbMode};
use xtalkgst_core::errorgen::{build_gate, context_variation, decompose_gate, zz_strength, HamiltonianCoeffs, StochasticCoeffs, Target};
use xtalkgst_core::fit::{bootstrap_ci, fit_nested, mle_fit, FitConfig, FitResult};
use xtalkgst_core::models::{GateSetModel, Init, ModelFamily};
use xtalkgst_core::noise::{log_spaced, NoiseSpec};
use xtalkgst_core::rb::{context_variation_rb, rb_analyze, DEFAULT_RB_REPLICATES};
use xtalkgst_core::sdp::diamond_distance;
use xtalkgst_core::select::{compare, evidence_ratio_values, CompareOptions};
use xtalkgst_core::simulate::{probabilities_many, sample, Dataset};
use xtalkgst_core::superop::{is_cptp, ProcessMatrix};

const PAPER_THRESHOLD: f64 = 4.6e-3;
const SWEEP_POINTS: usize = 10;
const SWEEP_SEEDS: [u64; 3] = [0, 1, 2];
const SWEEP_LMAX: usize = 8;
const SHOTS: u64 = 1000;
const WILKS_SHOTS: u64 = 10_000;
const BACKGROUND: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn idle_zz(m: &GateSetModel) -> xtalkgst_core::Result<Vec<f64>> {
    let idle = Layer::from_index(0);
    let d = decompose_gate(&m.layer_channel(idle), Target::Layer(idle))?;
    Ok(vec![zz_strength(&d.dh)?])
}

struct SeedRun {
    n_sigma: [f64; 3],
    wildcard: [f64; 3],
    lambda: [f64; 3],
    converged: bool,
    selected: ModelFamily,
    zz: f64,
    zz_ci: Option<(f64, f64)>,
}

struct SweepPoint {
    eps: f64,
    runs: Vec<SeedRun>,
}

impl SweepPoint {
    fn median_n_sigma(&self, model: usize) -> f64 {
        median(&self.runs.iter().map(|r| r.n_sigma[model]).collect::<Vec<_>>())
    }

    fn median_wildcard(&self, model: usize) -> f64 {
        median(&self.runs.iter().map(|r| r.wildcard[model]).collect::<Vec<_>>())
    }
}

struct Sweep {
    points: Vec<SweepPoint>,
    max_depth: usize,
    /// Index of the first point from which the crosstalk-free wildcard stays positive.
    threshold: Option<usize>,
}

fn run_sweep() -> Sweep {
    let design = build_gst_design(SWEEP_LMAX).unwrap();
    let max_depth = design.circuits.iter().map(Circuit::depth).max().unwrap_or(0);
    let cfg = FitConfig::default();
    let opts = CompareOptions { wildcard: true, diamond: false, ..Default::default() };
    let mut points = Vec::new();
    for (i, eps) in log_spaced(1e-3, 3e-2, SWEEP_POINTS).into_iter().enumerate() {
        let truth = NoiseSpec::zz(eps).with_background_stochastic(BACKGROUND).build(None).unwrap();
        let mut runs = Vec::new();
        for seed in SWEEP_SEEDS {
            let t = Instant::now();
            let ds = sample(&truth, &design.circuits, SHOTS, 1000 * seed + i as u64).unwrap();
            let fits = fit_nested(&ModelFamily::ALL, &ds, &cfg).unwrap();
            let report = compare(&fits, &ds, &opts).unwrap();
            let zz = idle_zz(&fits[2].model).unwrap()[0];
            let zz_ci = (eps >= 1e-2).then(|| {
                let ci = bootstrap_ci(&fits[2], &ds, &cfg, cfg.bootstrap_replicates, 77 + seed, idle_zz).unwrap();
                (ci.lower[0], ci.upper[0])
            });
            let pick = |f: fn(&xtalkgst_core::select::ModelSummary) -> f64| -> [f64; 3] {
                [f(&report.models[0]), f(&report.models[1]), f(&report.models[2])]
            };
            let run = SeedRun {
                n_sigma: pick(|m| m.n_sigma),
                wildcard: pick(|m| m.wildcard.unwrap_or(f64::NAN)),
                lambda: pick(|m| m.lambda),
                converged: fits.iter().all(|f| f.diagnostics.converged),
                selected: report.selected,
                zz,
                zz_ci,
            };
            progress(&format!(
                "  sweep eps {eps:.3e} seed {seed}: N_sigma {:.2}/{:.2}/{:.2} W_cf {:.3e} selected {} zz {zz:.4e}{} ({:.0}s)",
                run.n_sigma[0],
                run.n_sigma[1],
                run.n_sigma[2],
                run.wildcard[0],
                run.selected,
                zz_ci.map(|(l, u)| format!(" CI [{l:.4e}, {u:.4e}]")).unwrap_or_default(),
                t.elapsed().as_secs_f64()
            ));
            runs.push(run);
        }
        points.push(SweepPoint { eps, runs });
    }
    let positive: Vec<bool> = points.iter().map(|p| p.median_wildcard(0) > 0.0).collect();
    let threshold = (0..points.len()).find(|&i| positive[i..].iter().all(|&b| b));
    Sweep { points, max_depth, threshold }
}

static SWEEP: OnceLock<Sweep> = OnceLock::new();

fn sweep() -> &'static Sweep {
    SWEEP.get_or_init(run_sweep)
}

fn progress(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn threshold_reproduction() -> Outcome {
    let s = sweep();
    let Some(t) = s.threshold else {
        return outcome(false, "crosstalk-free wildcard never stays positive; no threshold".into());
    };
    let eps_star = s.points[t].eps;
    let mut failures = Vec::new();
    if !(eps_star >= PAPER_THRESHOLD / 2.0 && eps_star <= PAPER_THRESHOLD * 2.0) {
        failures.push(format!("threshold {eps_star:.3e} outside factor 2 of {PAPER_THRESHOLD:e}"));
    }
    for p in &s.points[..t] {
        for m in 0..3 {
            let (ns, w) = (p.median_n_sigma(m), p.median_wildcard(m));
            if ns.abs() > 5.0 || w != 0.0 {
                failures.push(format!("below threshold eps {:.3e} model {m}: N_sigma {ns:.2} W {w:.2e}", p.eps));
            }
        }
    }
    let above = &s.points[t..];
    for m in 0..2 {
        for w in above.windows(2) {
            if w[1].median_n_sigma(m) <= w[0].median_n_sigma(m) {
                failures.push(format!("model {m} N_sigma not increasing at eps {:.3e}", w[1].eps));
            }
        }
    }
    for p in above {
        let ns = p.median_n_sigma(2);
        if ns.abs() > 5.0 {
            failures.push(format!("general N_sigma {ns:.2} at eps {:.3e}", p.eps));
        }
    }
    for p in s.points.iter().filter(|p| p.eps >= 2.0 * eps_star) {
        for (seed, r) in SWEEP_SEEDS.iter().zip(&p.runs) {
            if r.selected != ModelFamily::General {
                failures.push(format!("eps {:.3e} seed {seed} selected {}", p.eps, r.selected));
            }
        }
    }
    let unconverged = s.points.iter().flat_map(|p| &p.runs).filter(|r| !r.converged).count();
    let general: Vec<String> = above.iter().map(|p| format!("{:.2}", p.median_n_sigma(2))).collect();
    let detail = format!(
        "threshold {eps_star:.3e} (paper {PAPER_THRESHOLD:e}); general N_sigma above threshold [{}]; {unconverged} unconverged seed runs{}",
        general.join(", "),
        if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
    );
    outcome(failures.is_empty(), detail)
}

fn zz_recovery() -> Outcome {
    let s = sweep();
    let mut failures = Vec::new();
    let (mut covered, mut total) = (0, 0);
    let mut worst: f64 = 0.0;
    for p in s.points.iter().filter(|p| p.eps >= 1e-2) {
        for (seed, r) in SWEEP_SEEDS.iter().zip(&p.runs) {
            let rel = (r.zz - p.eps).abs() / p.eps;
            worst = worst.max(rel);
            if rel > 0.15 {
                failures.push(format!("eps {:.3e} seed {seed}: estimate {:.4e}", p.eps, r.zz));
            }
            if let Some((lo, hi)) = r.zz_ci {
                total += 1;
                if lo <= p.eps && p.eps <= hi {
                    covered += 1;
                }
            }
        }
    }
    let coverage = if total > 0 { covered as f64 / total as f64 } else { 0.0 };
    if total == 0 {
        failures.push("no sweep point at or above 1e-2".into());
    }
    if coverage < 0.8 {
        failures.push(format!("bootstrap coverage {covered}/{total}"));
    }
    outcome(
        failures.is_empty(),
        format!(
            "worst relative error {worst:.3}; CI covers eps in {covered}/{total} (eps, seed) runs{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn wildcard_behavior() -> Outcome {
    let s = sweep();
    let Some(t) = s.threshold else {
        return outcome(false, "no threshold; crosstalk-free wildcard never stays positive".into());
    };
    let mut failures = Vec::new();
    let w: Vec<f64> = s.points.iter().map(|p| p.median_wildcard(0)).collect();
    if w[..t].iter().any(|&x| x != 0.0) {
        failures.push("nonzero wildcard below threshold".into());
    }
    if w[t..].windows(2).any(|p| p[1] < p[0]) {
        failures.push("wildcard decreases above threshold".into());
    }
    let xs: Vec<f64> = s.points[t..].iter().map(|p| p.eps).collect();
    let ys = &w[t..];
    let (slope, r2) = linear_fit(&xs, ys);
    if !(slope > 0.0) {
        failures.push(format!("slope {slope:e}"));
    }
    if !(r2 >= 0.9) {
        failures.push(format!("R^2 {r2:.3}"));
    }
    for p in &s.points {
        for r in &p.runs {
            if r.wildcard[0] > p.eps * s.max_depth as f64 {
                failures.push(format!("W {:.3e} exceeds eps * depth at eps {:.3e}", r.wildcard[0], p.eps));
            }
        }
    }
    let values: Vec<String> = w.iter().map(|x| format!("{x:.2e}")).collect();
    outcome(
        failures.is_empty(),
        format!(
            "median W [{}]; slope {slope:.4} R^2 {r2:.3}; max depth {}{}",
            values.join(", "),
            s.max_depth,
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, sxy * sxy / (sxx * syy))
}

fn evidence_ratio_arithmetic() -> Outcome {
    let g = evidence_ratio_values(77.60e3, 230, 148.82e3, 86).unwrap();
    outcome((g - 494.58).abs() <= 0.5, format!("gamma = {g:.3} (target 494.58 +/- 0.5)"))
}

fn wilks_calibration() -> Outcome {
    const TRIALS: u64 = 50;
    let design = build_gst_design(4).unwrap();
    let mut spec = NoiseSpec::depolarizing(2e-3);
    spec.spam.prep_flip = [0.01, 0.015];
    spec.spam.readout_flip = [0.02, 0.012];
    let truth = spec.build(Some(ModelFamily::CrosstalkFree)).unwrap();
    let cfg = FitConfig::default();
    let mut lambdas = Vec::new();
    let mut within = 0;
    let mut k = 0;
    let mut unconverged = 0;
    for seed in 0..TRIALS {
        let ds = sample(&truth, &design.circuits, WILKS_SHOTS, 5000 + seed).unwrap();
        let fit = mle_fit(ModelFamily::CrosstalkFree, &ds, &FitConfig { seed, ..cfg.clone() }, None).unwrap();
        k = fit.k;
        if !fit.diagnostics.converged {
            unconverged += 1;
        }
        if fit.n_sigma.abs() <= 4.0 {
            within += 1;
        }
        lambdas.push(fit.lambda);
    }
    let mean = lambdas.iter().sum::<f64>() / lambdas.len() as f64;
    let band = 3.0 * (2.0 * k as f64 / TRIALS as f64).sqrt();
    let frac = within as f64 / TRIALS as f64;
    let pass = (mean - k as f64).abs() <= band && frac >= 0.95;
    outcome(
        pass,
        format!("{TRIALS} fits: mean lambda {mean:.1} vs k {k} +/- {band:.1}; |N_sigma| <= 4 in {within}/{TRIALS}; {unconverged} unconverged"),
    )
}

fn context_dependence_recovery() -> Outcome {
    let design = build_gst_design(SWEEP_LMAX).unwrap();
    let injected = 0.020;
    let mut spec = NoiseSpec::depolarizing(2e-3).with_gate_term(GateLabel::Gxpi2, 0, Some(GateLabel::Gypi2), "X", injected);
    spec.spam.prep_flip = [0.01, 0.01];
    spec.spam.readout_flip = [0.01, 0.01];
    let truth = spec.build(None).unwrap();
    let ds = sample(&truth, &design.circuits, SHOTS, 606).unwrap();
    let fits = fit_nested(&ModelFamily::ALL, &ds, &FitConfig::default()).unwrap();
    let report = compare(&fits, &ds, &CompareOptions { wildcard: false, diamond: false, ..Default::default() }).unwrap();
    let cd = &fits[1].model;
    let target = Target::Single(GateLabel::Gxpi2);
    let dh = |other: GateLabel| decompose_gate(&cd.layer_factor(Layer::new(GateLabel::Gxpi2, other), 0).unwrap(), target).unwrap().dh;
    let in_context = dh(GateLabel::Gypi2);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for other in [GateLabel::Gi, GateLabel::Gxpi2] {
        let v = context_variation(&in_context, &dh(other)).unwrap()[0];
        worst = worst.max((v - injected * 1e3).abs());
        parts.push(format!("vs {other}: {v:.2} mrad"));
    }
    let pass = worst <= 3.0 && report.selected == ModelFamily::ContextDependent;
    let gammas: Vec<String> = report.gamma.iter().map(|g| format!("{:.2}", g.gamma)).collect();
    outcome(
        pass,
        format!(
            "X variation of Gxpi2 on qubit 0 in context Gypi2 {} (injected {:.1}); selected {} (gamma [{}])",
            parts.join(", "),
            injected * 1e3,
            report.selected,
            gammas.join(", ")
        ),
    )
}

fn rb_pipeline() -> Outcome {
    const SEEDS: u64 = 100;
    let depths: Vec<usize> = (1..=8).map(|k| 1 << k).collect();
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for r in [1e-3, 5e-3] {
        let truth = NoiseSpec::depolarizing(r).build(None).unwrap();
        let (mut covered, mut cells) = (0, 0);
        let (mut zero_covered, mut variations) = (0, 0);
        for seed in 0..SEEDS {
            let meta: Vec<_> = RbMode::ALL.into_iter().flat_map(|m| sample_rb_circuits(&depths, 30, m, 900 + seed)).collect();
            let circuits: Vec<Circuit> = meta.iter().map(|c| c.circuit.clone()).collect();
            let ds = sample(&truth, &circuits, SHOTS, 1900 + seed).unwrap();
            let res = rb_analyze(&ds, &meta, DEFAULT_RB_REPLICATES, seed).unwrap();
            for cell in &res.cells {
                cells += 1;
                if cell.covers(r) {
                    covered += 1;
                }
            }
            for q in 0..2 {
                let v = context_variation_rb(&res, q).unwrap();
                variations += 1;
                if v.covers(0.0) {
                    zero_covered += 1;
                }
            }
        }
        let (c, z) = (covered as f64 / cells as f64, zero_covered as f64 / variations as f64);
        if c < 0.9 {
            failures.push(format!("r={r:e}: CI covers r in {covered}/{cells}"));
        }
        if z < 0.9 {
            failures.push(format!("r={r:e}: variation CI covers 0 in {zero_covered}/{variations}"));
        }
        parts.push(format!("r={r:e}: r covered {covered}/{cells}, zero variation covered {zero_covered}/{variations}"));
    }
    outcome(
        failures.is_empty(),
        format!("{}{}", parts.join("; "), if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }),
    )
}

fn design_counts() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (lmax, expected) in [(8, 11_813), (32, 20_577)] {
        let d = build_gst_design(lmax).unwrap();
        let round_trip = circuits_from_text(&d.to_text()).unwrap() == d.circuits;
        if d.len() != expected || !round_trip {
            pass = false;
            let mut by_germ = vec![0usize; 25];
            for c in &d.circuits {
                if let Some(tag) = &c.tag {
                    by_germ[tag.germ] += 1;
                }
            }
            parts.push(format!("lmax={lmax}: {} circuits, expected {expected}, round trip {round_trip}; per germ {by_germ:?}", d.len()));
        } else {
            parts.push(format!("lmax={lmax}: {} circuits", d.len()));
        }
    }
    outcome(pass, parts.join("; "))
}

/// Deterministic spot checks of the invariants the property suite samples at random.
fn property_spot_checks() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    let dh = HamiltonianCoeffs::new((0..15).map(|i| 0.003 * (i as f64 - 7.0)).collect()).unwrap();
    let s = StochasticCoeffs::new((0..15).map(|i| 1e-4 * (1 + i % 4) as f64).collect()).unwrap();
    let mut roundtrip = 0.0f64;
    for layer in Layer::all() {
        let g = build_gate(Target::Layer(layer), &dh, &s).unwrap();
        check(is_cptp(&g, 1e-10) && g.tp_violation() < 1e-12, "built gate not CPTP");
        let d = decompose_gate(&g, Target::Layer(layer)).unwrap();
        for (a, b) in d.dh.h.iter().zip(&dh.h).chain(d.s.s.iter().zip(&s.s)) {
            roundtrip = roundtrip.max((a - b).abs());
        }
    }
    check(roundtrip < 1e-8, "build/decompose round trip");

    let design = build_gst_design(2).unwrap();
    let text = design.to_text();
    check(circuits_from_text(&text).unwrap() == design.circuits, "circuit text round trip");
    let m = GateSetModel::instantiate(ModelFamily::General, Init::Perturbed { seed: 3, scale: 0.02 });
    let norm = probabilities_many(&m, &design.circuits).iter().map(|p| (p.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    check(norm < 1e-12, "probability normalization");

    let rot = build_gate(Target::Single(GateLabel::Gi), &HamiltonianCoeffs::new(vec![0.1, -0.2, 0.05]).unwrap(), &StochasticCoeffs::zeros(1)).unwrap();
    let oracle = (0.1f64.powi(2) + 0.2f64.powi(2) + 0.05f64.powi(2)).sqrt().sin();
    let dd = diamond_distance(&rot, &ProcessMatrix::identity(4)).unwrap().value;
    check((dd - oracle).abs() < 1e-4, "diamond distance oracle");

    let truth = NoiseSpec::depolarizing(3e-3).build(None).unwrap();
    let small = build_gst_design(1).unwrap();
    let a = sample(&truth, &small.circuits, 300, 9).unwrap();
    let b = sample(&truth, &small.circuits, 300, 9).unwrap();
    check(a.to_jsonl() == b.to_jsonl(), "sampling rerun differs");
    check(Dataset::from_jsonl(&a.to_jsonl()).unwrap().to_jsonl() == a.to_jsonl(), "dataset round trip");
    let cfg = FitConfig::default();
    let f1 = mle_fit(ModelFamily::CrosstalkFree, &a, &cfg, None).unwrap();
    let f2 = mle_fit(ModelFamily::CrosstalkFree, &b, &cfg, None).unwrap();
    check(serde_json::to_string(&f1.to_record()).unwrap() == serde_json::to_string(&f2.to_record()).unwrap(), "fit rerun differs");

    let fits: Vec<FitResult> = fit_nested(&ModelFamily::ALL, &a, &cfg).unwrap();
    check(fits[1].lambda <= fits[0].lambda + 1e-6 && fits[2].lambda <= fits[1].lambda + 1e-6, "lambda nest monotonicity");

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "CPTP, round trips, normalization, diamond oracle, reruns and nesting hold; randomized suites live in the properties target".into()
        } else {
            failures.join("; ")
        },
    )
}

fn sweep_nesting() -> Option<String> {
    let s = SWEEP.get()?;
    let bad = s.points.iter().flat_map(|p| &p.runs).filter(|r| r.lambda[1] > r.lambda[0] + 1e-6 || r.lambda[2] > r.lambda[1] + 1e-6).count();
    Some(format!("lambda nesting violated in {bad} sweep fits"))
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (4, "evidence-ratio arithmetic", evidence_ratio_arithmetic),
        (8, "design generation", design_counts),
        (9, "property invariants", property_spot_checks),
        (6, "context-dependence recovery", context_dependence_recovery),
        (7, "RB pipeline", rb_pipeline),
        (5, "Wilks null calibration", wilks_calibration),
        (1, "ZZ threshold reproduction", threshold_reproduction),
        (2, "ZZ coefficient recovery", zz_recovery),
        (3, "wildcard behavior", wildcard_behavior),
    ];
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    if !args.is_empty() && selected.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    let mut all = true;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        all &= o.pass;
        let line = format!("criterion {id} ({name}): {} [{:.0}s] {}", if o.pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64(), o.detail);
        println!("{line}");
    }
    if let Some(n) = sweep_nesting() {
        println!("note: {n}");
    }
    println!("acceptance: {}", if all { "all selected criteria pass" } else { "FAILURES" });
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
