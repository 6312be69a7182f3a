//! Error generators: `G = exp(L) · exp(H + ΔH)` with Hamiltonian and
//! Pauli-stochastic sectors.
//!
//! Hamiltonian coefficients follow `H_eff = h·σ` with unitary `exp(−i H_eff)`,
//! so the ideal `Gxpi2` has `h_X = π/4`. Coefficient vectors are indexed by the
//! non-identity Pauli strings in index order (3 entries for one qubit, 15 for two).

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuits::{GateLabel, Layer};
use crate::error::{invalid, Error, Result};
use crate::linalg::{expm_matrix, log_near_identity};
use crate::models::{GateSetModel, ModelFamily};
use crate::superop::{pauli_matrix, tensor, Pauli, ProcessMatrix};

pub const MRAD: f64 = 1e3;

fn generator_tables(n_qubits: usize) -> &'static (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    static ONE: OnceLock<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> = OnceLock::new();
    static TWO: OnceLock<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> = OnceLock::new();
    let cell = if n_qubits == 1 { &ONE } else { &TWO };
    cell.get_or_init(|| {
        let dim = 1usize << (2 * n_qubits);
        let d = (1usize << n_qubits) as f64;
        let sig: Vec<_> = (0..dim).map(|k| pauli_matrix(k, n_qubits)).collect();
        let mut ham = Vec::with_capacity(dim);
        let mut sto = Vec::with_capacity(dim);
        let minus_i = Complex64::new(0.0, -1.0);
        for p in &sig {
            let mut h = DMatrix::zeros(dim, dim);
            let mut s = DMatrix::zeros(dim, dim);
            for (j, sj) in sig.iter().enumerate() {
                let comm = (p * sj - sj * p) * minus_i;
                let flip = p * sj * p - sj;
                for (i, si) in sig.iter().enumerate() {
                    h[(i, j)] = (si * &comm).trace().re / d;
                    s[(i, j)] = (si * &flip).trace().re / d;
                }
            }
            ham.push(h);
            sto.push(s);
        }
        (ham, sto)
    })
}

/// Superoperator of `ρ ↦ −i[P, ρ]`.
pub fn hamiltonian_generator(p: &Pauli) -> Result<DMatrix<f64>> {
    if p.is_identity() {
        return invalid("the identity Pauli generates no Hamiltonian error");
    }
    Ok(generator_tables(p.n_qubits()).0[p.index()].clone())
}

/// Superoperator of `ρ ↦ PρP − ρ`.
pub fn stochastic_generator(p: &Pauli) -> Result<DMatrix<f64>> {
    if p.is_identity() {
        return invalid("the identity Pauli generates no stochastic error");
    }
    Ok(generator_tables(p.n_qubits()).1[p.index()].clone())
}

fn n_terms(n_qubits: usize) -> usize {
    (1usize << (2 * n_qubits)) - 1
}

fn combine(coeffs: &[f64], gens: &[DMatrix<f64>]) -> DMatrix<f64> {
    let dim = gens[0].nrows();
    let mut out = DMatrix::zeros(dim, dim);
    for (c, g) in coeffs.iter().zip(&gens[1..]) {
        if *c != 0.0 {
            out += g * *c;
        }
    }
    out
}

/// Hamiltonian coefficients in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianCoeffs {
    pub h: Vec<f64>,
}

impl HamiltonianCoeffs {
    pub fn zeros(n_qubits: usize) -> Self {
        Self { h: vec![0.0; n_terms(n_qubits)] }
    }

    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.len() != 3 && h.len() != 15 {
            return invalid(format!("expected 3 or 15 Hamiltonian coefficients, got {}", h.len()));
        }
        Ok(Self { h })
    }

    pub fn n_qubits(&self) -> usize {
        if self.h.len() == 3 {
            1
        } else {
            2
        }
    }

    /// Coefficient of a Pauli string such as `"X"` or `"ZZ"`.
    pub fn get(&self, label: &str) -> Result<f64> {
        let p = Pauli::parse(label)?;
        if p.n_qubits() != self.n_qubits() || p.is_identity() {
            return invalid(format!("no coefficient `{label}` in a {}-qubit generator", self.n_qubits()));
        }
        Ok(self.h[p.index() - 1])
    }

    pub fn set(&mut self, label: &str, value: f64) -> Result<()> {
        let p = Pauli::parse(label)?;
        if p.n_qubits() != self.n_qubits() || p.is_identity() {
            return invalid(format!("no coefficient `{label}` in a {}-qubit generator", self.n_qubits()));
        }
        self.h[p.index() - 1] = value;
        Ok(())
    }

    pub fn mrad(&self) -> Vec<f64> {
        self.h.iter().map(|x| x * MRAD).collect()
    }

    pub fn norm(&self) -> f64 {
        self.h.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Pauli-stochastic rates; nonnegative for a physical gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticCoeffs {
    pub s: Vec<f64>,
}

impl StochasticCoeffs {
    pub fn zeros(n_qubits: usize) -> Self {
        Self { s: vec![0.0; n_terms(n_qubits)] }
    }

    pub fn new(s: Vec<f64>) -> Result<Self> {
        if s.len() != 3 && s.len() != 15 {
            return invalid(format!("expected 3 or 15 stochastic rates, got {}", s.len()));
        }
        Ok(Self { s })
    }

    pub fn uniform(n_qubits: usize, rate: f64) -> Self {
        Self { s: vec![rate; n_terms(n_qubits)] }
    }

    pub fn validate(&self) -> Result<()> {
        match self.s.iter().position(|&x| !(x >= 0.0)) {
            Some(i) => invalid(format!("stochastic rate {i} is negative ({})", self.s[i])),
            None => Ok(()),
        }
    }
}

/// A gate whose ideal action is known: a single-qubit gate or a two-qubit layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Single(GateLabel),
    Layer(Layer),
}

impl Target {
    pub fn n_qubits(self) -> usize {
        match self {
            Target::Single(_) => 1,
            Target::Layer(_) => 2,
        }
    }

    pub fn dim(self) -> usize {
        1 << (2 * self.n_qubits())
    }

    pub fn label(self) -> String {
        match self {
            Target::Single(g) => g.name().to_string(),
            Target::Layer(l) => l.to_string(),
        }
    }

    /// Ideal Hamiltonian coefficients.
    pub fn hamiltonian(self) -> HamiltonianCoeffs {
        let quarter = std::f64::consts::FRAC_PI_4;
        let mut h = HamiltonianCoeffs::zeros(self.n_qubits());
        let axis = |g: GateLabel| match g {
            GateLabel::Gi => None,
            GateLabel::Gxpi2 => Some(1usize),
            GateLabel::Gypi2 => Some(2usize),
        };
        match self {
            Target::Single(g) => {
                if let Some(a) = axis(g) {
                    h.h[a - 1] = quarter;
                }
            }
            Target::Layer(l) => {
                if let Some(a) = axis(l.q0) {
                    h.h[4 * a - 1] = quarter;
                }
                if let Some(a) = axis(l.q1) {
                    h.h[a - 1] = quarter;
                }
            }
        }
        h
    }

    /// Exact ideal channel (signed permutation matrices, no rounding).
    pub fn ideal(self) -> ProcessMatrix {
        match self {
            Target::Single(g) => ideal_single(g),
            Target::Layer(l) => tensor(&ideal_single(l.q0), &ideal_single(l.q1)).expect("1q factors"),
        }
    }
}

fn ideal_single(g: GateLabel) -> ProcessMatrix {
    let mut m = DMatrix::<f64>::identity(4, 4);
    let (a, b) = match g {
        GateLabel::Gi => return ProcessMatrix::from_matrix(m).expect("4x4"),
        // X: Y → Z, Z → −Y
        GateLabel::Gxpi2 => (2, 3),
        // Y: Z → X, X → −Z
        GateLabel::Gypi2 => (3, 1),
    };
    m[(a, a)] = 0.0;
    m[(b, b)] = 0.0;
    m[(b, a)] = 1.0;
    m[(a, b)] = -1.0;
    ProcessMatrix::from_matrix(m).expect("4x4")
}

fn build_matrix(target: Target, dh: &[f64], s: &[f64]) -> Result<DMatrix<f64>> {
    let (ham, sto) = generator_tables(target.n_qubits());
    let h0 = target.hamiltonian();
    let total: Vec<f64> = h0.h.iter().zip(dh).map(|(a, b)| a + b).collect();
    let unitary = expm_matrix(&combine(&total, ham))?;
    if s.iter().all(|&x| x == 0.0) {
        return Ok(unitary);
    }
    Ok(expm_matrix(&combine(s, sto))? * unitary)
}

/// `exp(L) · exp(H + ΔH)` for the target's ideal Hamiltonian `H`.
pub fn build_gate(target: Target, dh: &HamiltonianCoeffs, s: &StochasticCoeffs) -> Result<ProcessMatrix> {
    let n = n_terms(target.n_qubits());
    if dh.h.len() != n {
        return Err(Error::DimensionMismatch(dh.h.len(), n));
    }
    if s.s.len() != n {
        return Err(Error::DimensionMismatch(s.s.len(), n));
    }
    s.validate()?;
    ProcessMatrix::from_matrix(build_matrix(target, &dh.h, &s.s)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub dh: HamiltonianCoeffs,
    pub s: StochasticCoeffs,
    /// Frobenius distance between `g` and the rebuilt gate; measures error outside
    /// the Hamiltonian and Pauli-stochastic sectors.
    pub residual: f64,
}

/// Recovers `(ΔH, s)` from a gate near `target`.
///
/// The starting point projects `log(g · T⁻¹)` onto both generator sectors; the
/// estimate is then refined by damped Gauss–Newton on `‖build(ΔH, s) − g‖_F`, so
/// gates produced by [`build_gate`] are recovered exactly. Rates are not
/// constrained to be nonnegative here since fitted gates may be slightly non-CP.
pub fn decompose_gate(g: &ProcessMatrix, target: Target) -> Result<Decomposition> {
    let dim = target.dim();
    if g.dim() != dim {
        return Err(Error::DimensionMismatch(g.dim(), dim));
    }
    let nq = target.n_qubits();
    let n = n_terms(nq);
    let (ham, sto) = generator_tables(nq);
    let ideal = target.ideal();
    let rel = g.matrix() * ideal.inverse()?.matrix();
    let log = log_near_identity(&ProcessMatrix::from_matrix(rel)?)?;

    let mut x = vec![0.0; 2 * n];
    for k in 0..n {
        let gen = &ham[k + 1];
        x[k] = gen.dot(&log) / gen.dot(gen);
    }
    let mut gram = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for a in 0..n {
        rhs[a] = sto[a + 1].dot(&log);
        for b in 0..n {
            gram[(a, b)] = sto[a + 1].dot(&sto[b + 1]);
        }
    }
    if let Some(sol) = gram.lu().solve(&rhs) {
        x[n..].copy_from_slice(sol.as_slice());
    }

    let target_m = g.matrix();
    let eval = |x: &[f64]| -> Result<DMatrix<f64>> { Ok(build_matrix(target, &x[..n], &x[n..])? - target_m) };
    let mut r = eval(&x)?;
    let mut cost = r.norm_squared();
    let mut damping = 1e-12;
    let step = 1e-7;
    for _ in 0..60 {
        if cost < 1e-30 {
            break;
        }
        let mut jac = DMatrix::zeros(dim * dim, 2 * n);
        for p in 0..2 * n {
            let mut xp = x.clone();
            xp[p] += step;
            let rp = eval(&xp)?;
            let col = (rp - &r) / step;
            jac.column_mut(p).copy_from_slice(col.as_slice());
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * DVector::from_column_slice(r.as_slice());
        let mut improved = false;
        for _ in 0..20 {
            let mut lhs = jtj.clone();
            for d in 0..2 * n {
                lhs[(d, d)] += damping * (1.0 + jtj[(d, d)]);
            }
            let Some(delta) = lhs.lu().solve(&(-&jtr)) else {
                damping *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let rt = eval(&trial)?;
            let ct = rt.norm_squared();
            if ct < cost {
                let moved = delta.amax();
                x = trial;
                r = rt;
                cost = ct;
                damping = (damping * 0.1).max(1e-15);
                improved = moved > 1e-14;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(Decomposition {
        dh: HamiltonianCoeffs { h: x[..n].to_vec() },
        s: StochasticCoeffs { s: x[n..].to_vec() },
        residual: cost.sqrt(),
    })
}

/// Difference `a − b` of one gate's Hamiltonian coefficients in two contexts, in mrad.
pub fn context_variation(a: &HamiltonianCoeffs, b: &HamiltonianCoeffs) -> Result<Vec<f64>> {
    if a.h.len() != b.h.len() {
        return Err(Error::DimensionMismatch(a.h.len(), b.h.len()));
    }
    Ok(a.h.iter().zip(&b.h).map(|(x, y)| (x - y) * MRAD).collect())
}

/// Gauge-invariant part of `ΔH` that commutes with the target, in mrad.
///
/// `Gxpi2` and `Gypi2` give the signed over-rotation along their axis. For idle
/// targets (and general two-qubit layers) the norm of the commuting components is
/// returned.
pub fn commuting_error_rate(dh: &HamiltonianCoeffs, target: Target) -> Result<f64> {
    if dh.n_qubits() != target.n_qubits() {
        return Err(Error::DimensionMismatch(dh.h.len(), n_terms(target.n_qubits())));
    }
    match target {
        Target::Single(GateLabel::Gxpi2) => Ok(dh.h[0] * MRAD),
        Target::Single(GateLabel::Gypi2) => Ok(dh.h[1] * MRAD),
        Target::Single(GateLabel::Gi) => Ok(dh.norm() * MRAD),
        Target::Layer(_) => {
            let h0 = target.hamiltonian();
            let ham = &generator_tables(2).0;
            let h_target = combine(&h0.h, ham);
            let mut sq = 0.0;
            for (k, c) in dh.h.iter().enumerate() {
                let gen = &ham[k + 1];
                if (&h_target * gen - gen * &h_target).amax() < 1e-12 {
                    sq += c * c;
                }
            }
            Ok(sq.sqrt() * MRAD)
        }
    }
}

/// Entangling `ZZ` strength `ε` of a two-qubit generator, with `ΔH ∋ (ε/2) ZZ`.
pub fn zz_strength(dh: &HamiltonianCoeffs) -> Result<f64> {
    Ok(2.0 * dh.get("ZZ")?)
}

/// Labels of the coefficients whose values depend on the gauge.
pub fn gauge_dependent_terms(target: Target) -> Vec<String> {
    match target {
        Target::Single(GateLabel::Gi) => Vec::new(),
        Target::Single(GateLabel::Gxpi2) => vec!["Y".into(), "Z".into()],
        Target::Single(GateLabel::Gypi2) => vec!["X".into(), "Z".into()],
        Target::Layer(_) => {
            let h0 = target.hamiltonian();
            let ham = &generator_tables(2).0;
            let h_target = combine(&h0.h, ham);
            Pauli::non_identity(2)
                .into_iter()
                .filter(|p| {
                    let gen = &ham[p.index()];
                    (&h_target * gen - gen * &h_target).amax() >= 1e-12
                })
                .map(|p| p.label())
                .collect()
        }
    }
}

/// Per-gate error summary in mrad (Hamiltonian) and plain rates (stochastic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateErrorReport {
    pub gate: String,
    pub context: String,
    pub labels: Vec<String>,
    pub hamiltonian_mrad: Vec<f64>,
    pub hamiltonian_halfwidth_mrad: Option<Vec<f64>>,
    pub stochastic: Vec<f64>,
    pub stochastic_halfwidth: Option<Vec<f64>>,
    pub residual: f64,
    /// Coefficients carrying unobservable gauge offsets; only their context
    /// differences are meaningful.
    pub gauge_note: Vec<String>,
}

impl GateErrorReport {
    pub fn new(gate: &str, context: &str, target: Target, d: &Decomposition) -> Self {
        Self {
            gate: gate.to_string(),
            context: context.to_string(),
            labels: Pauli::non_identity(target.n_qubits()).iter().map(Pauli::label).collect(),
            hamiltonian_mrad: d.dh.mrad(),
            hamiltonian_halfwidth_mrad: None,
            stochastic: d.s.s.clone(),
            stochastic_halfwidth: None,
            residual: d.residual,
            gauge_note: gauge_dependent_terms(target),
        }
    }
}

/// Decomposed errors of every gate of a model: single-qubit gates per context for
/// the factored families, whole layers for the general family.
pub fn model_error_reports(m: &GateSetModel) -> Result<Vec<GateErrorReport>> {
    let mut out = Vec::new();
    match m.family() {
        ModelFamily::General => {
            for layer in Layer::all() {
                let target = Target::Layer(layer);
                let d = decompose_gate(&m.layer_channel(layer), target)?;
                out.push(GateErrorReport::new(&layer.to_string(), "layer", target, &d));
            }
        }
        family => {
            for qubit in 0..2 {
                for gate in GateLabel::ALL {
                    let contexts: &[GateLabel] = if family == ModelFamily::CrosstalkFree { &[GateLabel::Gi] } else { &GateLabel::ALL };
                    for &other in contexts {
                        let layer = if qubit == 0 { Layer::new(gate, other) } else { Layer::new(other, gate) };
                        let target = Target::Single(gate);
                        let d = decompose_gate(&m.layer_factor(layer, qubit)?, target)?;
                        let context = if family == ModelFamily::CrosstalkFree { "any".to_string() } else { other.to_string() };
                        out.push(GateErrorReport::new(&format!("{gate}:{qubit}"), &context, target, &d));
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_reports_locate_injected_context_error() {
        let spec = crate::noise::NoiseSpec::default().with_gate_term(GateLabel::Gxpi2, 0, Some(GateLabel::Gypi2), "X", 0.02);
        let reports = model_error_reports(&spec.build(None).unwrap()).unwrap();
        assert_eq!(reports.len(), 2 * 3 * 3);
        let find = |ctx: &str| reports.iter().find(|r| r.gate == "Gxpi2:0" && r.context == ctx).unwrap();
        assert!((find("Gypi2").hamiltonian_mrad[0] - 20.0).abs() < 1e-6);
        assert!(find("Gi").hamiltonian_mrad[0].abs() < 1e-6);
        let general = model_error_reports(&GateSetModel::ideal(ModelFamily::General)).unwrap();
        assert_eq!(general.len(), 9);
        assert!(general.iter().all(|r| r.hamiltonian_mrad.iter().all(|h| h.abs() < 1e-9)));
    }
    use crate::superop::{compose, is_cptp, ptm_from_unitary, CMatrix};

    fn rot(pauli: usize, n: usize, theta: f64) -> CMatrix {
        let p = pauli_matrix(pauli, n);
        let d = p.nrows();
        CMatrix::identity(d, d) * Complex64::new(theta.cos(), 0.0) + p * Complex64::new(0.0, -theta.sin())
    }

    #[test]
    fn hamiltonian_generator_exponentiates_to_rotation() {
        let theta = 0.31;
        let gen = hamiltonian_generator(&Pauli::parse("Z").unwrap()).unwrap();
        let g = expm_matrix(&(gen * theta)).unwrap();
        let oracle = ptm_from_unitary(&rot(3, 1, theta)).unwrap();
        assert!((g - oracle.matrix()).amax() < 1e-13);
    }

    #[test]
    fn x_quarter_gives_ideal_gate() {
        let gen = hamiltonian_generator(&Pauli::parse("X").unwrap()).unwrap();
        let g = expm_matrix(&(gen * std::f64::consts::FRAC_PI_4)).unwrap();
        assert!((g - ideal_single(GateLabel::Gxpi2).matrix()).amax() < 1e-12);
        let oracle = ptm_from_unitary(&rot(1, 1, std::f64::consts::FRAC_PI_4)).unwrap();
        assert!((oracle.matrix() - ideal_single(GateLabel::Gxpi2).matrix()).amax() < 1e-12);
        let oracle = ptm_from_unitary(&rot(2, 1, std::f64::consts::FRAC_PI_4)).unwrap();
        assert!((oracle.matrix() - ideal_single(GateLabel::Gypi2).matrix()).amax() < 1e-12);
    }

    #[test]
    fn zz_generator_matches_commutator() {
        let eps = 4.6e-3;
        let mut dh = HamiltonianCoeffs::zeros(2);
        dh.set("ZZ", eps / 2.0).unwrap();
        let g = build_gate(Target::Layer(Layer::IDLE), &dh, &StochasticCoeffs::zeros(2)).unwrap();
        let oracle = ptm_from_unitary(&rot(15, 2, eps / 2.0)).unwrap();
        assert!((g.matrix() - oracle.matrix()).amax() < 1e-14);
        assert!((zz_strength(&dh).unwrap() - eps).abs() < 1e-15);
    }

    #[test]
    fn identity_pauli_rejected() {
        let id = Pauli::parse("I").unwrap();
        assert!(hamiltonian_generator(&id).is_err());
        assert!(stochastic_generator(&id).is_err());
    }

    #[test]
    fn generators_are_orthogonal_sectors() {
        for n in [1, 2] {
            let (ham, sto) = generator_tables(n);
            for a in 1..ham.len() {
                assert!((&ham[a] + ham[a].transpose()).amax() < 1e-14);
                for b in 1..ham.len() {
                    assert!(ham[a].dot(&sto[b]).abs() < 1e-12);
                    if a != b {
                        assert!(ham[a].dot(&ham[b]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn depolarizing_from_equal_rates() {
        let s = 0.01;
        let g = build_gate(
            Target::Single(GateLabel::Gi),
            &HamiltonianCoeffs::zeros(1),
            &StochasticCoeffs::uniform(1, s),
        )
        .unwrap();
        // each Bloch axis anticommutes with two of the three Paulis
        let expected = (-4.0 * s).exp();
        for k in 1..4 {
            assert!((g.get(k, k) - expected).abs() < 1e-14);
        }
        assert!(is_cptp(&g, 1e-12));
    }

    #[test]
    fn negative_rate_rejected() {
        let s = StochasticCoeffs::new(vec![0.01, -1e-4, 0.0]).unwrap();
        assert!(build_gate(Target::Single(GateLabel::Gi), &HamiltonianCoeffs::zeros(1), &s).is_err());
    }

    #[test]
    fn over_rotation_round_trip() {
        let target = Target::Single(GateLabel::Gxpi2);
        let dh = HamiltonianCoeffs::new(vec![0.010, 0.0, 0.0]).unwrap();
        let g = build_gate(target, &dh, &StochasticCoeffs::zeros(1)).unwrap();
        let d = decompose_gate(&g, target).unwrap();
        assert!((d.dh.h[0] - 0.010).abs() < 1e-9);
        assert!((commuting_error_rate(&d.dh, target).unwrap() - 10.0).abs() < 1e-6);
        // total rotation angle is 2 h_X
        assert!((g.get(2, 2) + 0.020f64.sin()).abs() < 1e-13);
    }

    #[test]
    fn ideal_decomposes_to_zero() {
        for l in Layer::all() {
            let t = Target::Layer(l);
            let d = decompose_gate(&t.ideal(), t).unwrap();
            assert!(d.dh.norm() < 1e-12 && d.residual < 1e-12);
            assert!(d.s.s.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn zz_recovered_on_idle() {
        let eps = 1e-2;
        let mut dh = HamiltonianCoeffs::zeros(2);
        dh.set("ZZ", eps / 2.0).unwrap();
        let t = Target::Layer(Layer::IDLE);
        let g = build_gate(t, &dh, &StochasticCoeffs::zeros(2)).unwrap();
        let d = decompose_gate(&g, t).unwrap();
        assert!((zz_strength(&d.dh).unwrap() - eps).abs() / eps < 1e-8);
    }

    #[test]
    fn context_variation_arithmetic() {
        let a = HamiltonianCoeffs::new(vec![0.0, 0.0, 3.0e-3]).unwrap();
        let b = HamiltonianCoeffs::new(vec![0.0, 0.0, -10.2e-3]).unwrap();
        let v = context_variation(&a, &b).unwrap();
        assert!((v[2] - 13.2).abs() < 1e-9);
        let w = context_variation(&b, &a).unwrap();
        assert!((v[2] + w[2]).abs() < 1e-12);
        assert!(context_variation(&a, &a).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn composed_small_rotation_log_is_near_sum() {
        let t = Target::Single(GateLabel::Gxpi2);
        let small = ptm_from_unitary(&rot(3, 1, 0.004)).unwrap();
        let g = compose(&t.ideal(), &small).unwrap();
        let log = log_near_identity(&ProcessMatrix::from_matrix(g.matrix() * t.ideal().inverse().unwrap().matrix()).unwrap()).unwrap();
        let zgen = hamiltonian_generator(&Pauli::parse("Z").unwrap()).unwrap();
        assert!((log - zgen * 0.004).amax() < 1e-12);
    }

    #[test]
    fn gauge_note_for_x_gate() {
        assert_eq!(gauge_dependent_terms(Target::Single(GateLabel::Gxpi2)), vec!["Y", "Z"]);
        assert!(gauge_dependent_terms(Target::Layer(Layer::IDLE)).is_empty());
        assert_eq!(
            gauge_dependent_terms(Target::Layer(Layer::new(GateLabel::Gxpi2, GateLabel::Gi))).len(),
            // Paulis anticommuting with X on qubit 0: {Y,Z} ⊗ {I,X,Y,Z}
            8
        );
    }
}
