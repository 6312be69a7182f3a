//! A small primal-dual interior-point solver for linear matrix inequalities and
//! the diamond distance built on it.
//!
//! Problem form: minimize `cᵀx` subject to `F(x) = F₀ + Σ xᵢ Fᵢ ⪰ 0`, with `F`
//! block-diagonal Hermitian. The primal iterate stays strictly feasible; the dual
//! variable `Z` may be infeasible and is driven to feasibility by HKM Newton steps
//! with a Mehrotra-style centering parameter.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::superop::{choi_of, CMatrix, ProcessMatrix};

const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// One nonzero of a sparse Hermitian coefficient matrix.
#[derive(Debug, Clone, Copy)]
pub struct Entry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: Complex64,
}

#[derive(Debug, Clone)]
pub struct Lmi {
    pub f0: Vec<CMatrix>,
    pub terms: Vec<Vec<Entry>>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub x: Vec<f64>,
    pub z: Vec<CMatrix>,
    pub iterations: usize,
    pub converged: bool,
}

fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

fn min_eig(m: &CMatrix) -> f64 {
    hermitize(m).symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

fn max_eig(m: &CMatrix) -> f64 {
    hermitize(m).symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn trace_re(a: &CMatrix, b: &CMatrix) -> f64 {
    // Re Tr(A B) for Hermitian A, B
    a.iter().zip(b.transpose().iter()).map(|(x, y)| (x * y).re).sum()
}

impl Lmi {
    fn n_blocks(&self) -> usize {
        self.f0.len()
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<CMatrix> {
        let mut s = self.f0.clone();
        for (xi, t) in x.iter().zip(&self.terms) {
            if *xi == 0.0 {
                continue;
            }
            for e in t {
                s[e.block][(e.row, e.col)] += e.value * *xi;
            }
        }
        s
    }

    fn apply_adjoint(&self, z: &[CMatrix]) -> Vec<f64> {
        self.terms.iter().map(|t| t.iter().map(|e| (e.value * z[e.block][(e.col, e.row)]).re).sum()).collect()
    }

    fn direction(&self, dx: &[f64]) -> Vec<CMatrix> {
        let mut d: Vec<CMatrix> = self.f0.iter().map(|b| CMatrix::zeros(b.nrows(), b.ncols())).collect();
        for (xi, t) in dx.iter().zip(&self.terms) {
            for e in t {
                d[e.block][(e.row, e.col)] += e.value * *xi;
            }
        }
        d
    }
}

/// Largest step `α ≤ 1/0.95` keeping `M + α D ⪰ 0`, scaled by 0.95 and capped at 1.
fn step_length(m: &[CMatrix], d: &[CMatrix]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (mb, db) in m.iter().zip(d) {
        let Some(ch) = Cholesky::new(hermitize(mb)) else {
            return 0.0;
        };
        let l = ch.l();
        let Some(linv) = l.clone().try_inverse() else {
            return 0.0;
        };
        let t = &linv * db * linv.adjoint();
        let lo = min_eig(&t);
        if lo < 0.0 {
            alpha = alpha.min(-1.0 / lo);
        }
    }
    (0.95 * alpha).min(1.0)
}

enum SchurSolver {
    Cholesky(Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl SchurSolver {
    /// Cholesky when `m` is numerically positive definite, LU otherwise.
    fn new(m: DMatrix<f64>) -> Option<Self> {
        match Cholesky::new(m.clone()) {
            Some(c) => Some(Self::Cholesky(c)),
            None => {
                let lu = m.lu();
                lu.is_invertible().then_some(Self::Lu(lu))
            }
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Self::Cholesky(c) => Some(c.solve(rhs)),
            Self::Lu(l) => l.solve(rhs),
        }
    }
}

/// Solves the LMI from a strictly feasible `x0`.
pub fn solve_lmi(p: &Lmi, x0: &[f64], max_iter: usize, stop: &mut dyn FnMut(&[f64], &[CMatrix]) -> bool) -> Result<LmiSolution> {
    let m = p.terms.len();
    if x0.len() != m || p.c.len() != m {
        return Err(Error::DimensionMismatch(x0.len(), m));
    }
    let mut x = x0.to_vec();
    let mut s = p.evaluate(&x);
    if s.iter().any(|b| min_eig(b) <= 0.0) {
        return Err(Error::Numerical("starting point is not strictly feasible".into()));
    }
    let n_total: usize = s.iter().map(|b| b.nrows()).sum();
    let mut z: Vec<CMatrix> = s.iter().map(|b| CMatrix::identity(b.nrows(), b.nrows())).collect();
    for it in 0..max_iter {
        if stop(&x, &z) {
            return Ok(LmiSolution { x, z, iterations: it, converged: true });
        }
        let az = p.apply_adjoint(&z);
        let rd: Vec<f64> = p.c.iter().zip(&az).map(|(c, a)| c - a).collect();
        let mu = s.iter().zip(&z).map(|(a, b)| trace_re(a, b)).sum::<f64>() / n_total as f64;
        let sinv: Vec<CMatrix> = s
            .iter()
            .map(|b| hermitize(b).try_inverse().ok_or_else(|| Error::Numerical("singular slack".into())))
            .collect::<Result<_>>()?;

        // Schur complement M_ij = Re Tr(F_i S⁻¹ F_j Z)
        let g: Vec<Vec<CMatrix>> = p
            .terms
            .iter()
            .map(|t| {
                let mut out: Vec<CMatrix> = s.iter().map(|b| CMatrix::zeros(b.nrows(), b.ncols())).collect();
                for e in t {
                    let col = sinv[e.block].column(e.row) * e.value;
                    let row = z[e.block].row(e.col);
                    out[e.block] += &col * row;
                }
                out
            })
            .collect();
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            for i in 0..m {
                schur[(i, j)] = p.terms[i].iter().map(|e| (e.value * g[j][e.block][(e.col, e.row)]).re).sum();
            }
        }
        let schur = (&schur + schur.transpose()) * 0.5;
        let Some(chol) = SchurSolver::new(schur) else {
            // numerically singular near the optimum; report the current iterate
            return Ok(LmiSolution { x, z, iterations: it, converged: false });
        };

        let solve = |sigma_mu: f64, corr: Option<&[CMatrix]>| -> (Vec<f64>, Vec<CMatrix>, Vec<CMatrix>) {
            // ΔZ = σμ S⁻¹ − Z − sym(S⁻¹ ΔS Z) − corr
            let base: Vec<CMatrix> = sinv
                .iter()
                .zip(&z)
                .enumerate()
                .map(|(b, (si, zb))| {
                    let mut t = si * Complex64::new(sigma_mu, 0.0) - zb;
                    if let Some(c) = corr {
                        t -= &c[b];
                    }
                    t
                })
                .collect();
            let a_base = p.apply_adjoint(&base);
            let rhs = DVector::from_iterator(m, a_base.iter().zip(&rd).map(|(a, r)| a - r));
            let dx: Vec<f64> = match chol.solve(&rhs) {
                Some(v) => v.iter().copied().collect(),
                None => vec![0.0; m],
            };
            let ds = p.direction(&dx);
            let dz: Vec<CMatrix> = base
                .iter()
                .enumerate()
                .map(|(b, bb)| {
                    let t = &sinv[b] * &ds[b] * &z[b];
                    bb - hermitize(&t)
                })
                .collect();
            let dz = dz.iter().map(hermitize).collect();
            (dx, ds, dz)
        };

        // predictor
        let (_, ds_a, dz_a) = solve(0.0, None);
        let ap = step_length(&s, &ds_a);
        let ad = step_length(&z, &dz_a);
        let mu_aff = s
            .iter()
            .zip(&ds_a)
            .zip(z.iter().zip(&dz_a))
            .map(|((sb, dsb), (zb, dzb))| {
                let sn = sb + dsb * Complex64::new(ap, 0.0);
                let zn = zb + dzb * Complex64::new(ad, 0.0);
                trace_re(&sn, &zn)
            })
            .sum::<f64>()
            / n_total as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3).max(1e-3);
        // corrector with the second-order term S⁻¹ ΔS_a ΔZ_a
        let corr: Vec<CMatrix> = (0..p.n_blocks()).map(|b| hermitize(&(&sinv[b] * &ds_a[b] * &dz_a[b]))).collect();
        let (dx, ds, dz) = solve(sigma * mu, Some(&corr));
        let ap = step_length(&s, &ds);
        let ad = step_length(&z, &dz);
        if ap.min(ad) < 1e-10 {
            return Ok(LmiSolution { x, z, iterations: it, converged: false });
        }
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += ap * d;
        }
        s = p.evaluate(&x);
        for (zb, dzb) in z.iter_mut().zip(&dz) {
            *zb = hermitize(&(&*zb + dzb * Complex64::new(ad, 0.0)));
        }
    }
    let converged = stop(&x, &z);
    Ok(LmiSolution { x, z, iterations: max_iter, converged })
}

/// Half diamond norm with certified bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiamondResult {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Hermitian basis of `n × n` matrices: diagonal units, then symmetric and
/// antisymmetric off-diagonal pairs.
fn hermitian_basis(n: usize, traceless: bool) -> Vec<Vec<(usize, usize, Complex64)>> {
    let mut out = Vec::new();
    for k in 0..n {
        if traceless {
            if k > 0 {
                out.push(vec![(0, 0, ONE), (k, k, -ONE)]);
            }
        } else {
            out.push(vec![(k, k, ONE)]);
        }
    }
    for k in 0..n {
        for l in k + 1..n {
            out.push(vec![(k, l, ONE), (l, k, ONE)]);
            out.push(vec![(k, l, I), (l, k, -I)]);
        }
    }
    out
}

/// Certified gap accepted as convergence: absolute plus relative part.
const DIAMOND_TOL: (f64, f64) = (1e-9, 1e-7);
/// Largest certified gap reported as converged.
const DIAMOND_ACCEPT: (f64, f64) = (1e-8, 1e-6);

/// Half the diamond norm of `a − b`, i.e. the diamond distance between two TP channels.
///
/// Solves `max ⟨J, W⟩` over `0 ⪯ W ⪯ ρ ⊗ 1`, `ρ` a density matrix, where `J` is the
/// unnormalized Choi matrix of `a − b`. The lower bound is the primal value of the
/// feasible iterate; the upper bound comes from the dual variable of `W ⪯ ρ ⊗ 1`
/// shifted until it is dual feasible.
pub fn diamond_distance(a: &ProcessMatrix, b: &ProcessMatrix) -> Result<DiamondResult> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let d = (a.dim() as f64).sqrt().round() as usize;
    let scale = Complex64::new(d as f64, 0.0);
    let j = hermitize(&((choi_of(a) - choi_of(b)) * scale));
    let n = d * d;
    if j.iter().all(|v| v.norm() < 1e-15) {
        return Ok(DiamondResult { value: 0.0, lower: 0.0, upper: 0.0, converged: true, iterations: 0 });
    }

    // blocks: 0: ρ⊗1 − W, 1: W, 2: ρ
    let mut terms = Vec::new();
    let mut c = Vec::new();
    let w_basis = hermitian_basis(n, false);
    for e in &w_basis {
        let mut t = Vec::new();
        let mut tr = 0.0;
        for &(r, col, v) in e {
            t.push(Entry { block: 0, row: r, col, value: -v });
            t.push(Entry { block: 1, row: r, col, value: v });
            tr += (v * j[(col, r)]).re;
        }
        terms.push(t);
        c.push(-tr);
    }
    for e in &hermitian_basis(d, true) {
        let mut t = Vec::new();
        for &(r, col, v) in e {
            for o in 0..d {
                t.push(Entry { block: 0, row: r * d + o, col: col * d + o, value: v });
            }
            t.push(Entry { block: 2, row: r, col, value: v });
        }
        terms.push(t);
        c.push(0.0);
    }
    let inv_d = Complex64::new(1.0 / d as f64, 0.0);
    let f0 = vec![CMatrix::identity(n, n) * inv_d, CMatrix::zeros(n, n), CMatrix::identity(d, d) * inv_d];
    let lmi = Lmi { f0, terms, c };
    let mut x0 = vec![0.0; lmi.terms.len()];
    for (k, e) in w_basis.iter().enumerate() {
        if e.len() == 1 {
            x0[k] = 0.5 / d as f64;
        }
    }

    let bounds = |x: &[f64], z: &[CMatrix]| -> (f64, f64) {
        let lower = -x.iter().zip(&lmi.c).map(|(a, b)| a * b).sum::<f64>();
        // Z₀ ⪰ J and Z₀ ⪰ 0 after a shift; bound is λ_max(Tr_out Z₀)
        let z0 = &z[0];
        let shift = (-min_eig(&(z0 - &j))).max(-min_eig(z0)).max(0.0);
        let z0 = z0 + CMatrix::identity(n, n) * Complex64::new(shift, 0.0);
        let mut reduced = CMatrix::zeros(d, d);
        for r in 0..d {
            for col in 0..d {
                for o in 0..d {
                    reduced[(r, col)] += z0[(r * d + o, col * d + o)];
                }
            }
        }
        (lower, max_eig(&reduced))
    };
    // every iterate certifies bounds; late steps can lose dual accuracy
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    let mut stop = |x: &[f64], z: &[CMatrix]| {
        let (lo, hi) = bounds(x, z);
        best.0 = best.0.max(lo);
        best.1 = best.1.min(hi);
        best.1 - best.0 <= DIAMOND_TOL.0 + DIAMOND_TOL.1 * best.1.abs()
    };
    let sol = solve_lmi(&lmi, &x0, 100, &mut stop)?;
    let (lo, hi) = bounds(&sol.x, &sol.z);
    let lower = best.0.max(lo).max(0.0);
    let upper = best.1.min(hi);
    Ok(DiamondResult {
        value: 0.5 * (lower + upper),
        lower,
        upper,
        converged: upper - lower <= DIAMOND_ACCEPT.0 + DIAMOND_ACCEPT.1 * upper.abs(),
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::GateLabel;
    use crate::errorgen::{build_gate, HamiltonianCoeffs, StochasticCoeffs, Target};

    #[test]
    fn identical_channels_have_zero_distance() {
        let g = Target::Single(GateLabel::Gxpi2).ideal();
        let r = diamond_distance(&g, &g).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn z_rotation_closed_form() {
        // exp(−i h Z) vs identity: rotation angle 2h, distance sin(h)
        for h in [0.01, 0.2, 0.7] {
            let g = build_gate(Target::Single(GateLabel::Gi), &HamiltonianCoeffs::new(vec![0.0, 0.0, h]).unwrap(), &StochasticCoeffs::zeros(1)).unwrap();
            let r = diamond_distance(&g, &ProcessMatrix::identity(4)).unwrap();
            assert!(r.converged);
            assert!(r.lower <= r.upper + 1e-12);
            assert!((r.value - h.sin()).abs() < 1e-7, "{h}: {r:?}");
        }
    }

    #[test]
    fn depolarizing_closed_form() {
        // ρ ↦ (1−p)ρ + p 1/2 vs identity: distance 3p/4
        for p in [0.01, 0.5, 1.0] {
            let mut m = DMatrix::<f64>::identity(4, 4);
            for k in 1..4 {
                m[(k, k)] = 1.0 - p;
            }
            let g = ProcessMatrix::from_matrix(m).unwrap();
            let r = diamond_distance(&g, &ProcessMatrix::identity(4)).unwrap();
            assert!((r.value - 0.75 * p).abs() < 1e-7, "{p}: {r:?}");
        }
    }

    #[test]
    fn two_qubit_zz_rotation() {
        let mut h = HamiltonianCoeffs::zeros(2);
        h.set("ZZ", 0.05).unwrap();
        let layer = crate::circuits::Layer::IDLE;
        let g = build_gate(Target::Layer(layer), &h, &StochasticCoeffs::zeros(2)).unwrap();
        let r = diamond_distance(&g, &ProcessMatrix::identity(16)).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.value - 0.05f64.sin()).abs() < 1e-6, "{r:?}");
    }
}
