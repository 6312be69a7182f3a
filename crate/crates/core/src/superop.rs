//! Pauli-transfer-matrix algebra for one- and two-qubit channels.
//!
//! Every superoperator is expressed in the Hilbert–Schmidt orthonormal Pauli
//! basis `{I, X, Y, Z}/√2` (tensored per qubit, qubit 0 as the left factor),
//! which makes all channel representations real. `compose(a, b)` means
//! "apply `a`, then `b`", matching circuit reading order.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type CMatrix = DMatrix<Complex64>;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);
const CI: Complex64 = Complex64::new(0.0, 1.0);

/// An n-qubit Pauli string, stored as a base-4 index with qubit 0 as the
/// most significant digit (`I=0, X=1, Y=2, Z=3`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pauli {
    n_qubits: usize,
    index: usize,
}

impl Pauli {
    pub fn new(n_qubits: usize, index: usize) -> Result<Self> {
        if !(1..=2).contains(&n_qubits) || index >= 4usize.pow(n_qubits as u32) {
            return invalid(format!("no Pauli with index {index} on {n_qubits} qubit(s)"));
        }
        Ok(Self { n_qubits, index })
    }

    pub fn parse(label: &str) -> Result<Self> {
        let n = label.len();
        if !(1..=2).contains(&n) {
            return invalid(format!("Pauli label `{label}` must have 1 or 2 characters"));
        }
        let mut index = 0;
        for ch in label.chars() {
            let digit = match ch {
                'I' => 0,
                'X' => 1,
                'Y' => 2,
                'Z' => 3,
                _ => return invalid(format!("bad Pauli character `{ch}` in `{label}`")),
            };
            index = index * 4 + digit;
        }
        Ok(Self { n_qubits: n, index })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn is_identity(&self) -> bool {
        self.index == 0
    }

    /// All non-identity Pauli strings on `n` qubits, in index order.
    pub fn non_identity(n_qubits: usize) -> Vec<Pauli> {
        (1..4usize.pow(n_qubits as u32))
            .map(|index| Pauli { n_qubits, index })
            .collect()
    }

    pub fn label(&self) -> String {
        (0..self.n_qubits)
            .rev()
            .map(|q| ['I', 'X', 'Y', 'Z'][(self.index >> (2 * q)) & 3])
            .collect()
    }

    /// Unnormalized Pauli operator as a dense complex matrix.
    pub fn matrix(&self) -> CMatrix {
        pauli_matrix(self.index, self.n_qubits)
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn single_pauli(k: usize) -> CMatrix {
    match k {
        0 => DMatrix::from_row_slice(2, 2, &[C1, C0, C0, C1]),
        1 => DMatrix::from_row_slice(2, 2, &[C0, C1, C1, C0]),
        2 => DMatrix::from_row_slice(2, 2, &[C0, -CI, CI, C0]),
        _ => DMatrix::from_row_slice(2, 2, &[C1, C0, C0, -C1]),
    }
}

pub(crate) fn kron_c(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Unnormalized Pauli matrix for base-4 index `k` on `n` qubits.
pub fn pauli_matrix(k: usize, n_qubits: usize) -> CMatrix {
    let mut m = single_pauli((k >> (2 * (n_qubits - 1))) & 3);
    for q in 1..n_qubits {
        let digit = (k >> (2 * (n_qubits - 1 - q))) & 3;
        m = kron_c(&m, &single_pauli(digit));
    }
    m
}

fn qubits_for_dim(dim: usize) -> Result<usize> {
    match dim {
        4 => Ok(1),
        16 => Ok(2),
        _ => invalid(format!("superoperator dimension {dim} is not 4 or 16")),
    }
}

/// Real superoperator in the normalized Pauli basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessMatrix {
    m: DMatrix<f64>,
}

impl ProcessMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(m.nrows(), m.ncols()));
        }
        qubits_for_dim(m.nrows())?;
        Ok(Self { m })
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch(data.len(), dim * dim));
        }
        Self::from_matrix(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn identity(dim: usize) -> Self {
        Self { m: DMatrix::identity(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_qubits(&self) -> usize {
        if self.dim() == 4 {
            1
        } else {
            2
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.m[(r, c)]
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.m.transpose().as_slice().to_vec()
    }

    pub fn apply(&self, state: &StateVecRep) -> Result<StateVecRep> {
        if state.coords.len() != self.dim() {
            return Err(Error::DimensionMismatch(state.coords.len(), self.dim()));
        }
        Ok(StateVecRep { coords: &self.m * &state.coords })
    }

    pub fn inverse(&self) -> Result<Self> {
        self.m
            .clone()
            .try_inverse()
            .map(|m| Self { m })
            .ok_or_else(|| Error::Numerical("process matrix is singular".into()))
    }

    /// Largest deviation of the first row from `(1, 0, …, 0)`.
    pub fn tp_violation(&self) -> f64 {
        (0..self.dim())
            .map(|c| (self.m[(0, c)] - if c == 0 { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }
}

/// Superoperator of `ρ ↦ u ρ u†`.
pub fn ptm_from_unitary(u: &CMatrix) -> Result<ProcessMatrix> {
    let d = u.nrows();
    if u.ncols() != d || !(d == 2 || d == 4) {
        return invalid(format!("unitary must be 2x2 or 4x4, got {}x{}", d, u.ncols()));
    }
    let dev = (u.adjoint() * u - CMatrix::identity(d, d)).norm();
    if dev > 1e-10 {
        return invalid(format!("matrix is not unitary (‖u†u − I‖ = {dev:.2e})"));
    }
    let n = if d == 2 { 1 } else { 2 };
    let dim = d * d;
    let paulis: Vec<CMatrix> = (0..dim).map(|k| pauli_matrix(k, n)).collect();
    let mut m = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let image = u * &paulis[j] * u.adjoint();
        for i in 0..dim {
            m[(i, j)] = (&paulis[i] * &image).trace().re / d as f64;
        }
    }
    ProcessMatrix::from_matrix(m)
}

/// Channel "`b` after `a`".
pub fn compose(a: &ProcessMatrix, b: &ProcessMatrix) -> Result<ProcessMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(ProcessMatrix { m: &b.m * &a.m })
}

/// Composition of a sequence in application order; empty sequences give the identity.
pub fn compose_all<'a>(dim: usize, seq: impl IntoIterator<Item = &'a ProcessMatrix>) -> Result<ProcessMatrix> {
    seq.into_iter().try_fold(ProcessMatrix::identity(dim), |acc, g| compose(&acc, g))
}

/// Two-qubit channel with `a` on qubit 0 and `b` on qubit 1.
pub fn tensor(a: &ProcessMatrix, b: &ProcessMatrix) -> Result<ProcessMatrix> {
    if a.dim() != 4 {
        return Err(Error::DimensionMismatch(a.dim(), 4));
    }
    if b.dim() != 4 {
        return Err(Error::DimensionMismatch(b.dim(), 4));
    }
    Ok(ProcessMatrix { m: a.m.kronecker(&b.m) })
}

/// Monomial form of `σ_k^T ⊗ σ_l`: a single nonzero `(col, phase)` per row.
#[derive(Debug, Clone)]
pub(crate) struct Monomial {
    pub cols: Vec<usize>,
    pub phases: Vec<Complex64>,
}

impl Monomial {
    fn from_dense(m: &CMatrix) -> Self {
        let n = m.nrows();
        let mut cols = Vec::with_capacity(n);
        let mut phases = Vec::with_capacity(n);
        for r in 0..n {
            let c = (0..n).find(|&c| m[(r, c)].norm() > 0.5).expect("Pauli rows are monomial");
            cols.push(c);
            phases.push(m[(r, c)]);
        }
        Self { cols, phases }
    }
}

/// Cached `σ_k^T ⊗ σ_l` monomials, indexed `[l * dim + k]` to mirror PTM entry `(l, k)`.
pub(crate) struct ChoiBasis {
    pub d: usize,
    pub terms: Vec<Monomial>,
}

impl ChoiBasis {
    fn build(n_qubits: usize) -> Self {
        let d = 1 << n_qubits;
        let dim = d * d;
        let paulis: Vec<CMatrix> = (0..dim).map(|k| pauli_matrix(k, n_qubits)).collect();
        let mut terms = Vec::with_capacity(dim * dim);
        for l in 0..dim {
            for k in 0..dim {
                terms.push(Monomial::from_dense(&kron_c(&paulis[k].transpose(), &paulis[l])));
            }
        }
        Self { d, terms }
    }

    pub fn for_dim(dim: usize) -> &'static ChoiBasis {
        use std::sync::OnceLock;
        static ONE: OnceLock<ChoiBasis> = OnceLock::new();
        static TWO: OnceLock<ChoiBasis> = OnceLock::new();
        if dim == 4 {
            ONE.get_or_init(|| ChoiBasis::build(1))
        } else {
            TWO.get_or_init(|| ChoiBasis::build(2))
        }
    }

    /// Normalized Choi matrix of a PTM given as a row-major slice.
    pub fn choi(&self, ptm: &[f64]) -> CMatrix {
        let dim = self.d * self.d;
        let scale = 1.0 / (self.d * self.d) as f64;
        let mut j = CMatrix::zeros(dim, dim);
        for (idx, term) in self.terms.iter().enumerate() {
            let r = ptm[idx];
            if r == 0.0 {
                continue;
            }
            let w = r * scale;
            for row in 0..dim {
                j[(row, term.cols[row])] += term.phases[row] * w;
            }
        }
        j
    }

    /// Adjoint of [`ChoiBasis::choi`]: gradient w.r.t. PTM entries of `Re tr(D J)`.
    pub fn choi_adjoint(&self, d_choi: &CMatrix, out: &mut [f64]) {
        let dim = self.d * self.d;
        let scale = 1.0 / (self.d * self.d) as f64;
        for (idx, term) in self.terms.iter().enumerate() {
            let mut acc = C0;
            for row in 0..dim {
                acc += term.phases[row] * d_choi[(term.cols[row], row)];
            }
            out[idx] += acc.re * scale;
        }
    }
}

/// Choi matrix (input ⊗ output ordering) in the computational basis, trace 1.
pub fn choi_of(g: &ProcessMatrix) -> CMatrix {
    ChoiBasis::for_dim(g.dim()).choi(&g.to_row_major())
}

/// Inverse of [`choi_of`].
pub fn ptm_from_choi(j: &CMatrix) -> Result<ProcessMatrix> {
    let dim = j.nrows();
    if j.ncols() != dim {
        return Err(Error::DimensionMismatch(dim, j.ncols()));
    }
    qubits_for_dim(dim)?;
    let basis = ChoiBasis::for_dim(dim);
    let mut m = DMatrix::zeros(dim, dim);
    for l in 0..dim {
        for k in 0..dim {
            let term = &basis.terms[l * dim + k];
            let mut acc = C0;
            for row in 0..dim {
                acc += term.phases[row] * j[(term.cols[row], row)];
            }
            m[(l, k)] = acc.re;
        }
    }
    ProcessMatrix::from_matrix(m)
}

pub fn hermitian_eigenvalues(h: &CMatrix) -> Vec<f64> {
    let herm = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
    let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_choi_eigenvalue(g: &ProcessMatrix) -> f64 {
    hermitian_eigenvalues(&choi_of(g))[0]
}

pub fn is_cptp(g: &ProcessMatrix, tol: f64) -> bool {
    g.tp_violation() <= tol && min_choi_eigenvalue(g) >= -tol
}

/// Density operator expanded in the normalized Pauli basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVecRep {
    pub coords: DVector<f64>,
}

impl StateVecRep {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        qubits_for_dim(coords.len())?;
        Ok(Self { coords: DVector::from_vec(coords) })
    }

    /// `|0…0⟩⟨0…0|` on `n` qubits.
    pub fn zero_state(n_qubits: usize) -> Self {
        let d = 1usize << n_qubits;
        let mut ket = CMatrix::zeros(d, d);
        ket[(0, 0)] = C1;
        Self::from_density(&ket)
    }

    pub fn from_density(rho: &CMatrix) -> Self {
        let d = rho.nrows();
        let n = if d == 2 { 1 } else { 2 };
        let dim = d * d;
        let norm = (d as f64).sqrt();
        let coords = (0..dim)
            .map(|k| (pauli_matrix(k, n) * rho).trace().re / norm)
            .collect::<Vec<_>>();
        Self { coords: DVector::from_vec(coords) }
    }

    pub fn to_density(&self) -> CMatrix {
        vector_to_operator(&self.coords)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn tensor(&self, other: &StateVecRep) -> StateVecRep {
        StateVecRep { coords: self.coords.kronecker(&other.coords) }
    }
}

pub(crate) fn vector_to_operator(v: &DVector<f64>) -> CMatrix {
    let dim = v.len();
    let n = if dim == 4 { 1 } else { 2 };
    let d = 1usize << n;
    let norm = (d as f64).sqrt();
    let mut op = CMatrix::zeros(d, d);
    for k in 0..dim {
        if v[k] != 0.0 {
            op += pauli_matrix(k, n) * Complex64::new(v[k] / norm, 0.0);
        }
    }
    op
}

/// Measurement effects in the normalized Pauli basis, one per outcome label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovmRep {
    pub labels: Vec<String>,
    pub effects: Vec<DVector<f64>>,
}

impl PovmRep {
    /// Computational-basis measurement on `n` qubits; labels are bit strings with qubit 0 first.
    pub fn computational(n_qubits: usize) -> Self {
        let d = 1usize << n_qubits;
        let mut labels = Vec::with_capacity(d);
        let mut effects = Vec::with_capacity(d);
        for outcome in 0..d {
            let mut proj = CMatrix::zeros(d, d);
            proj[(outcome, outcome)] = C1;
            effects.push(StateVecRep::from_density(&proj).coords);
            labels.push(format!("{:0width$b}", outcome, width = n_qubits));
        }
        Self { labels, effects }
    }

    pub fn dim(&self) -> usize {
        self.effects.first().map_or(0, |e| e.len())
    }

    pub fn probabilities(&self, state: &StateVecRep) -> Vec<f64> {
        self.effects.iter().map(|e| e.dot(&state.coords)).collect()
    }

    /// Largest deviation of the effect sum from the identity.
    pub fn completeness_violation(&self) -> f64 {
        let dim = self.dim();
        let mut total = -identity_coords(dim);
        for e in &self.effects {
            total += e;
        }
        total.amax()
    }

    pub fn tensor(&self, other: &PovmRep) -> PovmRep {
        let mut labels = Vec::new();
        let mut effects = Vec::new();
        for (la, ea) in self.labels.iter().zip(&self.effects) {
            for (lb, eb) in other.labels.iter().zip(&other.effects) {
                labels.push(format!("{la}{lb}"));
                effects.push(ea.kronecker(eb));
            }
        }
        PovmRep { labels, effects }
    }
}

/// Pauli-basis coordinates of the identity operator on `dim`-dimensional superoperator space.
pub fn identity_coords(dim: usize) -> DVector<f64> {
    let mut v = DVector::zeros(dim);
    v[0] = (dim as f64).sqrt().sqrt();
    v
}
