//! The three nested model families and their parameter vectors.
//!
//! Every family is a linear, trace-preserving parameterization: gates store the
//! rows below the fixed first row of their PTM, states store all coordinates but
//! the trace, and the last POVM effect is fixed by completeness.
//!
//! | family | gates | SPAM | total |
//! |---|---|---|---|
//! | crosstalk-free | 2 × 3 × 12 | 2 × (3 + 4) | 86 |
//! | context-dependent | 2 × 3 × 3 × 12 | 14 | 230 |
//! | general | 9 × 240 | 15 + 3 × 16 | 2223 |

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::circuits::{GateLabel, Layer};
use crate::error::{invalid, Error, Result};
use crate::errorgen::Target;
use crate::superop::{identity_coords, pauli_matrix, tensor, ChoiBasis, CMatrix, PovmRep, ProcessMatrix, StateVecRep};

pub type Ptm16 = [f64; 256];
pub type Vec16 = [f64; 16];

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;
const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    CrosstalkFree,
    ContextDependent,
    General,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [ModelFamily::CrosstalkFree, ModelFamily::ContextDependent, ModelFamily::General];

    pub fn tag(self) -> &'static str {
        match self {
            ModelFamily::CrosstalkFree => "crosstalk-free",
            ModelFamily::ContextDependent => "context-dependent",
            ModelFamily::General => "general",
        }
    }

    pub fn n_params(self) -> usize {
        match self {
            ModelFamily::CrosstalkFree => 86,
            ModelFamily::ContextDependent => 230,
            ModelFamily::General => 2223,
        }
    }

    /// Parameter counts quoted for the same families in the literature this
    /// model hierarchy comes from; reported alongside ours, never used.
    pub fn published_n_params(self) -> &'static [usize] {
        match self {
            ModelFamily::CrosstalkFree => &[86],
            ModelFamily::ContextDependent => &[230, 240],
            ModelFamily::General => &[1683, 1697],
        }
    }

    /// Dimension of the gauge group acting on the family (local invertible maps
    /// for factored families, full invertible TP maps otherwise).
    pub fn gauge_dim(self) -> usize {
        match self {
            ModelFamily::CrosstalkFree | ModelFamily::ContextDependent => 24,
            ModelFamily::General => 240,
        }
    }

    /// Parameters that change predictions: `n_params − gauge_dim`.
    pub fn n_free_params(self) -> usize {
        self.n_params() - self.gauge_dim()
    }

    fn rank(self) -> u8 {
        self as u8
    }

    pub fn contains(self, other: ModelFamily) -> bool {
        self.rank() >= other.rank()
    }

    fn spam_offset(self) -> usize {
        match self {
            ModelFamily::CrosstalkFree => 72,
            ModelFamily::ContextDependent => 216,
            ModelFamily::General => 2160,
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelFamily::ALL
            .into_iter()
            .find(|f| f.tag() == s)
            .ok_or_else(|| Error::Validation(format!("unknown model family `{s}`")))
    }
}

/// Flat channel and SPAM arrays consumed by the likelihood engine.
#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    /// Row-major 16×16 PTMs indexed by [`Layer::index`].
    pub layers: Vec<Ptm16>,
    pub rho: Vec16,
    /// Effects for outcomes `00, 01, 10, 11`.
    pub effects: [Vec16; 4],
}

impl Compiled {
    pub fn zeros() -> Self {
        Self { layers: vec![[0.0; 256]; 9], rho: [0.0; 16], effects: [[0.0; 16]; 4] }
    }

    pub fn add_assign(&mut self, other: &Compiled) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.rho.iter_mut().zip(&other.rho) {
            *x += y;
        }
        for (a, b) in self.effects.iter_mut().zip(&other.effects) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Ideal,
    Perturbed { seed: u64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateSetModel {
    family: ModelFamily,
    theta: Vec<f64>,
    compiled: Compiled,
}

fn ideal_1q_block(g: GateLabel) -> [f64; 12] {
    let m = Target::Single(g).ideal();
    let mut out = [0.0; 12];
    for r in 1..4 {
        for c in 0..4 {
            out[(r - 1) * 4 + c] = m.get(r, c);
        }
    }
    out
}

fn ptm4_from_block(block: &[f64]) -> [f64; 16] {
    let mut m = [0.0; 16];
    m[0] = 1.0;
    m[4..16].copy_from_slice(&block[..12]);
    m
}

fn kron4(a: &[f64; 16], b: &[f64; 16]) -> Ptm16 {
    let mut out = [0.0; 256];
    for i in 0..4 {
        for j in 0..4 {
            let aij = a[i * 4 + j];
            if aij == 0.0 {
                continue;
            }
            for k in 0..4 {
                let row = (4 * i + k) * 16 + 4 * j;
                for l in 0..4 {
                    out[row + l] = aij * b[k * 4 + l];
                }
            }
        }
    }
    out
}

fn kron_vec(a: &[f64; 4], b: &[f64; 4]) -> Vec16 {
    let mut out = [0.0; 16];
    for i in 0..4 {
        for k in 0..4 {
            out[4 * i + k] = a[i] * b[k];
        }
    }
    out
}

/// Adds `∂/∂A` and `∂/∂B` of `⟨G, A ⊗ B⟩` into `da` and `db` (rows ≥ 1 only).
fn kron4_pullback(g: &Ptm16, a: &[f64; 16], b: &[f64; 16], da: &mut [f64], db: &mut [f64]) {
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                let row = (4 * i + k) * 16 + 4 * j;
                for l in 0..4 {
                    let gv = g[row + l];
                    if i > 0 {
                        da[(i - 1) * 4 + j] += gv * b[k * 4 + l];
                    }
                    if k > 0 {
                        db[(k - 1) * 4 + l] += gv * a[i * 4 + j];
                    }
                }
            }
        }
    }
}

fn kron_vec_pullback(g: &Vec16, a: &[f64; 4], b: &[f64; 4], da: &mut [f64; 4], db: &mut [f64; 4]) {
    for i in 0..4 {
        for k in 0..4 {
            da[i] += g[4 * i + k] * b[k];
            db[k] += g[4 * i + k] * a[i];
        }
    }
}

/// Parameter offsets of the two single-qubit factors of a layer.
fn factor_offsets(family: ModelFamily, layer: Layer) -> (usize, usize) {
    let (g0, g1) = (layer.q0.index(), layer.q1.index());
    match family {
        ModelFamily::CrosstalkFree => (g0 * 12, (3 + g1) * 12),
        ModelFamily::ContextDependent => ((g0 * 3 + g1) * 12, ((3 + g1) * 3 + g0) * 12),
        ModelFamily::General => unreachable!("general layers are not factored"),
    }
}

/// Offsets of every single-qubit gate factor in a factored family.
fn all_factor_offsets(family: ModelFamily) -> Vec<usize> {
    match family {
        ModelFamily::CrosstalkFree => (0..6).map(|i| i * 12).collect(),
        ModelFamily::ContextDependent => (0..18).map(|i| i * 12).collect(),
        ModelFamily::General => Vec::new(),
    }
}

struct FactoredSpam {
    states: [[f64; 4]; 2],
    effect0: [[f64; 4]; 2],
}

impl FactoredSpam {
    fn read(theta: &[f64], offset: usize) -> Self {
        let mut states = [[0.0; 4]; 2];
        let mut effect0 = [[0.0; 4]; 2];
        for q in 0..2 {
            let base = offset + 7 * q;
            states[q] = [SQRT_HALF, theta[base], theta[base + 1], theta[base + 2]];
            effect0[q].copy_from_slice(&theta[base + 3..base + 7]);
        }
        Self { states, effect0 }
    }

    fn effects(&self, q: usize) -> [[f64; 4]; 2] {
        let e0 = self.effect0[q];
        [e0, [SQRT2 - e0[0], -e0[1], -e0[2], -e0[3]]]
    }
}

impl GateSetModel {
    pub fn new(family: ModelFamily, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != family.n_params() {
            return Err(Error::DimensionMismatch(theta.len(), family.n_params()));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return invalid("model parameters must be finite");
        }
        let compiled = compile(family, &theta);
        Ok(Self { family, theta, compiled })
    }

    pub fn instantiate(family: ModelFamily, init: Init) -> Self {
        let mut theta = ideal_theta(family);
        if let Init::Perturbed { seed, scale } = init {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, scale.abs()).expect("finite scale");
            for t in theta.iter_mut() {
                *t += normal.sample(&mut rng);
            }
        }
        Self::new(family, theta).expect("instantiated parameters are valid")
    }

    pub fn ideal(family: ModelFamily) -> Self {
        Self::instantiate(family, Init::Ideal)
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn compiled(&self) -> &Compiled {
        &self.compiled
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(self.family, theta)
    }

    pub fn layer_channel(&self, layer: Layer) -> ProcessMatrix {
        ProcessMatrix::from_row_slice(16, &self.compiled.layers[layer.index()]).expect("16x16")
    }

    /// Single-qubit factor of a layer on `qubit` (factored families only).
    pub fn layer_factor(&self, layer: Layer, qubit: usize) -> Result<ProcessMatrix> {
        if self.family == ModelFamily::General {
            return invalid("general-model layers do not factor");
        }
        let (o0, o1) = factor_offsets(self.family, layer);
        let off = if qubit == 0 { o0 } else { o1 };
        ProcessMatrix::from_row_slice(4, &ptm4_from_block(&self.theta[off..off + 12]))
    }

    pub fn rho(&self) -> StateVecRep {
        StateVecRep::new(self.compiled.rho.to_vec()).expect("16 coords")
    }

    pub fn povm(&self) -> PovmRep {
        PovmRep {
            labels: OUTCOMES.iter().map(|s| s.to_string()).collect(),
            effects: self.compiled.effects.iter().map(|e| DVector::from_column_slice(e)).collect(),
        }
    }

    /// Builds a factored model from per-qubit gates `gates[q][g]` (crosstalk-free)
    /// or `gates[q][g * 3 + spectator]` (context-dependent), single-qubit states and
    /// the `0` effect of each qubit.
    pub fn from_factors(
        family: ModelFamily,
        gates: &[Vec<ProcessMatrix>; 2],
        states: &[StateVecRep; 2],
        effect0: &[DVector<f64>; 2],
    ) -> Result<Self> {
        let per_qubit = match family {
            ModelFamily::CrosstalkFree => 3,
            ModelFamily::ContextDependent => 9,
            ModelFamily::General => return invalid("use from_layers for the general family"),
        };
        let mut theta = Vec::with_capacity(family.n_params());
        for qubit_gates in gates {
            if qubit_gates.len() != per_qubit {
                return Err(Error::DimensionMismatch(qubit_gates.len(), per_qubit));
            }
            for g in qubit_gates {
                if g.dim() != 4 {
                    return Err(Error::DimensionMismatch(g.dim(), 4));
                }
                let rm = g.to_row_major();
                theta.extend_from_slice(&rm[4..16]);
            }
        }
        for q in 0..2 {
            if states[q].dim() != 4 || effect0[q].len() != 4 {
                return Err(Error::DimensionMismatch(states[q].dim(), 4));
            }
            theta.extend(states[q].coords.iter().skip(1));
            theta.extend(effect0[q].iter());
        }
        Self::new(family, theta)
    }

    /// Builds a general model from nine layer channels (indexed by [`Layer::index`]),
    /// a state and a four-outcome POVM whose last effect is implied by completeness.
    pub fn from_layers(layers: &[ProcessMatrix], rho: &StateVecRep, povm: &PovmRep) -> Result<Self> {
        if layers.len() != 9 {
            return Err(Error::DimensionMismatch(layers.len(), 9));
        }
        if povm.effects.len() != 4 {
            return Err(Error::DimensionMismatch(povm.effects.len(), 4));
        }
        let mut theta = Vec::with_capacity(2223);
        for l in layers {
            if l.dim() != 16 {
                return Err(Error::DimensionMismatch(l.dim(), 16));
            }
            theta.extend_from_slice(&l.to_row_major()[16..]);
        }
        theta.extend(rho.coords.iter().skip(1));
        for e in &povm.effects[..3] {
            theta.extend(e.iter());
        }
        Self::new(ModelFamily::General, theta)
    }

    /// The same predictions expressed in a family at least as large.
    pub fn embed(&self, target: ModelFamily) -> Result<Self> {
        if !target.contains(self.family) {
            return Err(Error::NotNested(format!("cannot embed {} into {}", self.family, target)));
        }
        if target == self.family {
            return Ok(self.clone());
        }
        match target {
            ModelFamily::ContextDependent => {
                let mut theta = Vec::with_capacity(230);
                for q in 0..2 {
                    for g in 0..3 {
                        let block = &self.theta[(3 * q + g) * 12..(3 * q + g + 1) * 12];
                        for _ in 0..3 {
                            theta.extend_from_slice(block);
                        }
                    }
                }
                theta.extend_from_slice(&self.theta[72..86]);
                Self::new(target, theta)
            }
            ModelFamily::General => {
                let mut theta = Vec::with_capacity(2223);
                for l in &self.compiled.layers {
                    theta.extend_from_slice(&l[16..]);
                }
                theta.extend_from_slice(&self.compiled.rho[1..]);
                for e in &self.compiled.effects[..3] {
                    theta.extend_from_slice(e);
                }
                Self::new(target, theta)
            }
            ModelFamily::CrosstalkFree => unreachable!(),
        }
    }

    /// Applies the local gauge `S₀ ⊗ S₁`: gates `G ↦ S G S⁻¹`, `ρ ↦ S ρ`, `E ↦ S⁻ᵀ E`.
    pub fn gauge_transform(&self, s0: &ProcessMatrix, s1: &ProcessMatrix) -> Result<Self> {
        let inv0 = s0.inverse()?;
        let inv1 = s1.inverse()?;
        match self.family {
            ModelFamily::General => {
                let s = tensor(s0, s1)?;
                let si = tensor(&inv0, &inv1)?;
                let layers: Vec<ProcessMatrix> = Layer::all()
                    .iter()
                    .map(|&l| ProcessMatrix::from_matrix(s.matrix() * self.layer_channel(l).matrix() * si.matrix()))
                    .collect::<Result<_>>()?;
                let rho = StateVecRep { coords: s.matrix() * &self.rho().coords };
                let povm = self.povm();
                let sit = si.matrix().transpose();
                let povm = PovmRep { labels: povm.labels, effects: povm.effects.iter().map(|e| &sit * e).collect() };
                Self::from_layers(&layers, &rho, &povm)
            }
            family => {
                let per_qubit = if family == ModelFamily::CrosstalkFree { 3 } else { 9 };
                let spam = FactoredSpam::read(&self.theta, family.spam_offset());
                let mut gates: [Vec<ProcessMatrix>; 2] = [Vec::new(), Vec::new()];
                let mut states = Vec::new();
                let mut effects = Vec::new();
                for (q, (s, si)) in [(s0, &inv0), (s1, &inv1)].into_iter().enumerate() {
                    for i in 0..per_qubit {
                        let off = (q * per_qubit + i) * 12;
                        let g = DMatrix::from_row_slice(4, 4, &ptm4_from_block(&self.theta[off..off + 12]));
                        gates[q].push(ProcessMatrix::from_matrix(s.matrix() * g * si.matrix())?);
                    }
                    states.push(StateVecRep { coords: s.matrix() * DVector::from_column_slice(&spam.states[q]) });
                    effects.push(si.matrix().transpose() * DVector::from_column_slice(&spam.effect0[q]));
                }
                let states: [StateVecRep; 2] = [states[0].clone(), states[1].clone()];
                let effects: [DVector<f64>; 2] = [effects[0].clone(), effects[1].clone()];
                Self::from_factors(family, &gates, &states, &effects)
            }
        }
    }

    /// Maps a gradient with respect to compiled arrays onto `theta`.
    pub fn pullback(&self, grad: &Compiled, out: &mut [f64]) {
        pullback(self.family, &self.theta, grad, out);
    }

    /// Sum of squared negative eigenvalues of all gate Choi matrices and SPAM
    /// operators; accumulates its gradient into `grad`.
    pub fn cp_violation(&self, grad: Option<&mut [f64]>) -> f64 {
        cp_violation(self.family, &self.theta, &self.compiled, grad)
    }

    /// Largest negative eigenvalue magnitude over gate Choi matrices and SPAM.
    pub fn max_cp_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        let mut check = |h: &CMatrix| {
            let ev = SymmetricEigen::new(h.clone()).eigenvalues;
            for &l in ev.iter() {
                worst = worst.max(-l);
            }
        };
        visit_psd_operators(self.family, &self.theta, &self.compiled, &mut |op, _| check(&op));
        worst
    }

    pub fn to_file(&self, metadata: ModelMetadata) -> ModelFile {
        ModelFile { family: self.family, theta: self.theta.clone(), metadata }
    }
}

pub const OUTCOMES: [&str; 4] = ["00", "01", "10", "11"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub description: String,
}

/// Serialized model: `{family, theta, metadata}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub family: ModelFamily,
    pub theta: Vec<f64>,
    #[serde(default)]
    pub metadata: ModelMetadata,
}

impl ModelFile {
    pub fn into_model(self) -> Result<GateSetModel> {
        GateSetModel::new(self.family, self.theta)
    }
}

fn ideal_theta(family: ModelFamily) -> Vec<f64> {
    let state = [SQRT_HALF, 0.0, 0.0, SQRT_HALF];
    match family {
        ModelFamily::General => {
            let ideal = GateSetModel::ideal(ModelFamily::CrosstalkFree);
            ideal.embed(ModelFamily::General).expect("nested").theta
        }
        ModelFamily::CrosstalkFree | ModelFamily::ContextDependent => {
            let copies = if family == ModelFamily::CrosstalkFree { 1 } else { 3 };
            let mut theta = Vec::with_capacity(family.n_params());
            for _q in 0..2 {
                for g in GateLabel::ALL {
                    for _ in 0..copies {
                        theta.extend_from_slice(&ideal_1q_block(g));
                    }
                }
            }
            for _q in 0..2 {
                theta.extend_from_slice(&state[1..]);
                theta.extend_from_slice(&state);
            }
            theta
        }
    }
}

fn compile(family: ModelFamily, theta: &[f64]) -> Compiled {
    let mut out = Compiled::zeros();
    match family {
        ModelFamily::General => {
            for (l, layer) in out.layers.iter_mut().enumerate() {
                layer[0] = 1.0;
                layer[16..].copy_from_slice(&theta[l * 240..(l + 1) * 240]);
            }
            out.rho[0] = 0.5;
            out.rho[1..].copy_from_slice(&theta[2160..2175]);
            let id = identity_coords(16);
            let mut last: Vec16 = [0.0; 16];
            for (k, slot) in last.iter_mut().enumerate() {
                *slot = id[k];
            }
            for a in 0..3 {
                out.effects[a].copy_from_slice(&theta[2175 + 16 * a..2175 + 16 * (a + 1)]);
                for k in 0..16 {
                    last[k] -= out.effects[a][k];
                }
            }
            out.effects[3] = last;
        }
        _ => {
            for layer in Layer::all() {
                let (o0, o1) = factor_offsets(family, layer);
                out.layers[layer.index()] =
                    kron4(&ptm4_from_block(&theta[o0..o0 + 12]), &ptm4_from_block(&theta[o1..o1 + 12]));
            }
            let spam = FactoredSpam::read(theta, family.spam_offset());
            out.rho = kron_vec(&spam.states[0], &spam.states[1]);
            let (e0, e1) = (spam.effects(0), spam.effects(1));
            for a in 0..2 {
                for b in 0..2 {
                    out.effects[2 * a + b] = kron_vec(&e0[a], &e1[b]);
                }
            }
        }
    }
    out
}

fn pullback(family: ModelFamily, theta: &[f64], grad: &Compiled, out: &mut [f64]) {
    match family {
        ModelFamily::General => {
            for (l, g) in grad.layers.iter().enumerate() {
                for (o, v) in out[l * 240..(l + 1) * 240].iter_mut().zip(&g[16..]) {
                    *o += v;
                }
            }
            for k in 1..16 {
                out[2160 + k - 1] += grad.rho[k];
            }
            for a in 0..3 {
                for k in 0..16 {
                    out[2175 + 16 * a + k] += grad.effects[a][k] - grad.effects[3][k];
                }
            }
        }
        _ => {
            for layer in Layer::all() {
                let (o0, o1) = factor_offsets(family, layer);
                let a = ptm4_from_block(&theta[o0..o0 + 12]);
                let b = ptm4_from_block(&theta[o1..o1 + 12]);
                let mut da = [0.0; 12];
                let mut db = [0.0; 12];
                kron4_pullback(&grad.layers[layer.index()], &a, &b, &mut da, &mut db);
                for k in 0..12 {
                    out[o0 + k] += da[k];
                    out[o1 + k] += db[k];
                }
            }
            let off = family.spam_offset();
            let spam = FactoredSpam::read(theta, off);
            let mut ds = [[0.0; 4]; 2];
            let (s0, s1) = (spam.states[0], spam.states[1]);
            let (mut d0, mut d1) = ([0.0; 4], [0.0; 4]);
            kron_vec_pullback(&grad.rho, &s0, &s1, &mut d0, &mut d1);
            ds[0] = d0;
            ds[1] = d1;
            let (e0, e1) = (spam.effects(0), spam.effects(1));
            let mut de = [[[0.0; 4]; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    let (mut da, mut db) = ([0.0; 4], [0.0; 4]);
                    kron_vec_pullback(&grad.effects[2 * a + b], &e0[a], &e1[b], &mut da, &mut db);
                    for k in 0..4 {
                        de[0][a][k] += da[k];
                        de[1][b][k] += db[k];
                    }
                }
            }
            for q in 0..2 {
                let base = off + 7 * q;
                for k in 1..4 {
                    out[base + k - 1] += ds[q][k];
                }
                for k in 0..4 {
                    out[base + 3 + k] += de[q][0][k] - de[q][1][k];
                }
            }
        }
    }
}

/// What a PSD-constrained operator depends on, for gradient routing.
enum PsdSource {
    /// A gate PTM: row-major `dim × dim`, rows ≥ 1 stored at `offset`.
    Gate { offset: usize, dim: usize },
    /// Operator `Σ c_k σ_k / √d`; `sign` and `offsets[k]` (if any) map coordinates to theta.
    Coords { sign: f64, offsets: Vec<Option<usize>> },
    /// Completeness remainder `I − Σ effects`: gradient flows with a minus sign to several offsets.
    Remainder { bases: Vec<usize> },
}

fn coords_operator(coords: &[f64]) -> CMatrix {
    crate::superop::vector_to_operator(&DVector::from_column_slice(coords))
}

fn visit_psd_operators(family: ModelFamily, theta: &[f64], compiled: &Compiled, f: &mut dyn FnMut(CMatrix, PsdSource)) {
    match family {
        ModelFamily::General => {
            let basis = ChoiBasis::for_dim(16);
            for (l, layer) in compiled.layers.iter().enumerate() {
                f(basis.choi(layer), PsdSource::Gate { offset: l * 240, dim: 16 });
            }
            let mut rho_offsets = vec![None];
            rho_offsets.extend((0..15).map(|k| Some(2160 + k)));
            f(coords_operator(&compiled.rho), PsdSource::Coords { sign: 1.0, offsets: rho_offsets });
            for a in 0..3 {
                let offs = (0..16).map(|k| Some(2175 + 16 * a + k)).collect();
                f(coords_operator(&compiled.effects[a]), PsdSource::Coords { sign: 1.0, offsets: offs });
            }
            f(coords_operator(&compiled.effects[3]), PsdSource::Remainder { bases: vec![2175, 2191, 2207] });
        }
        _ => {
            let basis = ChoiBasis::for_dim(4);
            for off in all_factor_offsets(family) {
                f(basis.choi(&ptm4_from_block(&theta[off..off + 12])), PsdSource::Gate { offset: off, dim: 4 });
            }
            let soff = family.spam_offset();
            let spam = FactoredSpam::read(theta, soff);
            for q in 0..2 {
                let base = soff + 7 * q;
                let st = vec![None, Some(base), Some(base + 1), Some(base + 2)];
                f(coords_operator(&spam.states[q]), PsdSource::Coords { sign: 1.0, offsets: st });
                let ef: Vec<Option<usize>> = (0..4).map(|k| Some(base + 3 + k)).collect();
                let effs = spam.effects(q);
                f(coords_operator(&effs[0]), PsdSource::Coords { sign: 1.0, offsets: ef.clone() });
                f(coords_operator(&effs[1]), PsdSource::Coords { sign: -1.0, offsets: ef });
            }
        }
    }
}

fn cp_violation(family: ModelFamily, theta: &[f64], compiled: &Compiled, mut grad: Option<&mut [f64]>) -> f64 {
    let mut total = 0.0;
    visit_psd_operators(family, theta, compiled, &mut |op, source| {
        let n = op.nrows();
        let eig = SymmetricEigen::new(op);
        let mut d: Option<CMatrix> = None;
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam < 0.0 {
                total += lam * lam;
                if grad.is_some() {
                    let v = eig.eigenvectors.column(i);
                    let outer = &v * v.adjoint() * Complex64::new(2.0 * lam, 0.0);
                    match d.as_mut() {
                        Some(acc) => *acc += outer,
                        None => d = Some(outer),
                    }
                }
            }
        }
        let (Some(g), Some(d)) = (grad.as_deref_mut(), d) else { return };
        match source {
            PsdSource::Gate { offset, dim } => {
                let mut buf = vec![0.0; dim * dim];
                ChoiBasis::for_dim(dim).choi_adjoint(&d, &mut buf);
                for (k, v) in buf[dim..].iter().enumerate() {
                    g[offset + k] += v;
                }
            }
            PsdSource::Coords { sign, offsets } => {
                let nq = if n == 2 { 1 } else { 2 };
                let norm = (n as f64).sqrt();
                for (k, off) in offsets.iter().enumerate() {
                    if let Some(o) = off {
                        g[*o] += sign * (&d * pauli_matrix(k, nq)).trace().re / norm;
                    }
                }
            }
            PsdSource::Remainder { bases } => {
                for k in 0..16 {
                    let dk = (&d * pauli_matrix(k, 2)).trace().re / 2.0;
                    for b in &bases {
                        g[b + k] -= dk;
                    }
                }
            }
        }
    });
    total
}
