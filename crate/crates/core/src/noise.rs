//! Noise models described by error-generator coefficients, and their gate sets.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::circuits::{GateLabel, Layer};
use crate::error::{invalid, Error, Result};
use crate::errorgen::{build_gate, HamiltonianCoeffs, StochasticCoeffs, Target};
use crate::models::{GateSetModel, ModelFamily};
use crate::superop::{PovmRep, ProcessMatrix, StateVecRep};

pub const NOISE_FORMAT: &str = "xtalk-gst-noise";

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    /// Hamiltonian coefficients by Pauli label, radians.
    #[serde(default)]
    pub hamiltonian: BTreeMap<String, f64>,
    #[serde(default)]
    pub stochastic: BTreeMap<String, f64>,
}

impl Terms {
    fn is_zero(&self) -> bool {
        self.hamiltonian.values().chain(self.stochastic.values()).all(|v| *v == 0.0)
    }
}

/// Error on one gate of one qubit, optionally only while the other qubit runs `context`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateNoise {
    pub gate: GateLabel,
    pub qubit: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<GateLabel>,
    #[serde(flatten)]
    pub terms: Terms,
}

/// Bit-flip probabilities of preparation and readout, per qubit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpamNoise {
    #[serde(default)]
    pub prep_flip: [f64; 2],
    #[serde(default)]
    pub readout_flip: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub gates: Vec<GateNoise>,
    /// Two-qubit terms applied concurrently with every layer.
    #[serde(default)]
    pub every_layer: Terms,
    #[serde(default)]
    pub spam: SpamNoise,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            format: NOISE_FORMAT.into(),
            version: 1,
            description: String::new(),
            gates: Vec::new(),
            every_layer: Terms::default(),
            spam: SpamNoise::default(),
        }
    }
}

fn add_terms(target: &mut [f64], terms: &BTreeMap<String, f64>, n_qubits: usize) -> Result<()> {
    let mut h = HamiltonianCoeffs::zeros(n_qubits);
    for (label, v) in terms {
        let cur = h.get(label)?;
        h.set(label, cur + v)?;
    }
    for (t, v) in target.iter_mut().zip(&h.h) {
        *t += v;
    }
    Ok(())
}

/// Two-qubit label carrying a single-qubit label on `qubit`.
fn lift(label: &str, qubit: usize) -> String {
    if qubit == 0 {
        format!("{label}I")
    } else {
        format!("I{label}")
    }
}

fn is_local(label: &str) -> bool {
    label.chars().filter(|c| *c != 'I').count() <= 1
}

impl NoiseSpec {
    /// The ideal gate set plus a `(ε/2) Z⊗Z` Hamiltonian term on every layer.
    pub fn zz(eps: f64) -> Self {
        let mut spec = Self { description: format!("ZZ coupling eps={eps:e} on every layer"), ..Default::default() };
        spec.every_layer.hamiltonian.insert("ZZ".into(), 0.5 * eps);
        spec
    }

    /// Equal X, Y and Z stochastic rates on every gate of both qubits, chosen so the
    /// single-qubit error per gate `(1 − p)/2` equals `r`.
    pub fn depolarizing(r: f64) -> Self {
        let s = -(1.0 - 2.0 * r).ln() / 4.0;
        let mut spec = Self { description: format!("local depolarizing r={r:e}"), ..Default::default() };
        for qubit in 0..2 {
            for gate in GateLabel::ALL {
                let mut terms = Terms::default();
                for a in ["X", "Y", "Z"] {
                    terms.stochastic.insert(a.into(), s);
                }
                spec.gates.push(GateNoise { gate, qubit, context: None, terms });
            }
        }
        spec
    }

    /// Adds a Hamiltonian term to one gate, optionally only in one context.
    pub fn with_gate_term(mut self, gate: GateLabel, qubit: usize, context: Option<GateLabel>, label: &str, value: f64) -> Self {
        let mut terms = Terms::default();
        terms.hamiltonian.insert(label.into(), value);
        self.gates.push(GateNoise { gate, qubit, context, terms });
        self
    }

    /// Adds equal stochastic rates on every axis of every gate and qubit.
    pub fn with_background_stochastic(mut self, rate: f64) -> Self {
        for qubit in 0..2 {
            for gate in GateLabel::ALL {
                let mut terms = Terms::default();
                for a in ["X", "Y", "Z"] {
                    terms.stochastic.insert(a.into(), rate);
                }
                self.gates.push(GateNoise { gate, qubit, context: None, terms });
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != NOISE_FORMAT || self.version != 1 {
            return invalid(format!("unsupported noise format `{}` version {}", self.format, self.version));
        }
        for g in &self.gates {
            if g.qubit > 1 {
                return invalid(format!("qubit index {} out of range", g.qubit));
            }
            for label in g.terms.hamiltonian.keys().chain(g.terms.stochastic.keys()) {
                HamiltonianCoeffs::zeros(1).get(label)?;
            }
            if g.terms.stochastic.values().any(|v| !(*v >= 0.0)) {
                return invalid("stochastic rates must be nonnegative");
            }
        }
        for label in self.every_layer.hamiltonian.keys().chain(self.every_layer.stochastic.keys()) {
            HamiltonianCoeffs::zeros(2).get(label)?;
        }
        if self.every_layer.stochastic.values().any(|v| !(*v >= 0.0)) {
            return invalid("stochastic rates must be nonnegative");
        }
        for p in self.spam.prep_flip.iter().chain(&self.spam.readout_flip) {
            if !(0.0..=1.0).contains(p) {
                return invalid(format!("flip probability {p} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Smallest family that represents this noise exactly.
    pub fn minimal_family(&self) -> ModelFamily {
        let nonlocal = |m: &BTreeMap<String, f64>| m.iter().any(|(l, v)| *v != 0.0 && !is_local(l));
        if nonlocal(&self.every_layer.hamiltonian) || nonlocal(&self.every_layer.stochastic) {
            ModelFamily::General
        } else if self.gates.iter().any(|g| g.context.is_some() && !g.terms.is_zero()) {
            ModelFamily::ContextDependent
        } else {
            ModelFamily::CrosstalkFree
        }
    }

    /// Single-qubit error coefficients of `gate` on `qubit` while the other qubit runs `spectator`.
    fn local_coeffs(&self, gate: GateLabel, qubit: usize, spectator: GateLabel) -> Result<(HamiltonianCoeffs, StochasticCoeffs)> {
        let mut h = vec![0.0; 3];
        let mut s = vec![0.0; 3];
        for g in &self.gates {
            if g.gate == gate && g.qubit == qubit && g.context.is_none_or(|c| c == spectator) {
                add_terms(&mut h, &g.terms.hamiltonian, 1)?;
                add_terms(&mut s, &g.terms.stochastic, 1)?;
            }
        }
        // local parts of the every-layer terms
        let mut h2 = vec![0.0; 15];
        let mut s2 = vec![0.0; 15];
        let local = |m: &BTreeMap<String, f64>| m.iter().filter(|(l, _)| is_local(l)).map(|(l, v)| (l.clone(), *v)).collect();
        add_terms(&mut h2, &local(&self.every_layer.hamiltonian), 2)?;
        add_terms(&mut s2, &local(&self.every_layer.stochastic), 2)?;
        for (a, label) in ["X", "Y", "Z"].iter().enumerate() {
            let two = HamiltonianCoeffs { h: h2.clone() };
            h[a] += two.get(&lift(label, qubit))?;
            let two = HamiltonianCoeffs { h: s2.clone() };
            s[a] += two.get(&lift(label, qubit))?;
        }
        Ok((HamiltonianCoeffs::new(h)?, StochasticCoeffs::new(s)?))
    }

    fn layer_coeffs(&self, layer: Layer) -> Result<(HamiltonianCoeffs, StochasticCoeffs)> {
        let mut h = vec![0.0; 15];
        let mut s = vec![0.0; 15];
        for q in 0..2 {
            let (lh, ls) = self.local_coeffs(layer.gate(q), q, layer.gate(1 - q))?;
            for a in 0..3 {
                let idx = if q == 0 { 4 * (a + 1) - 1 } else { a };
                h[idx] += lh.h[a];
                s[idx] += ls.s[a];
            }
        }
        let nonlocal = |m: &BTreeMap<String, f64>| m.iter().filter(|(l, _)| !is_local(l)).map(|(l, v)| (l.clone(), *v)).collect();
        add_terms(&mut h, &nonlocal(&self.every_layer.hamiltonian), 2)?;
        add_terms(&mut s, &nonlocal(&self.every_layer.stochastic), 2)?;
        Ok((HamiltonianCoeffs::new(h)?, StochasticCoeffs::new(s)?))
    }

    fn spam_factors(&self) -> ([StateVecRep; 2], [DVector<f64>; 2]) {
        let state = |p: f64| StateVecRep { coords: DVector::from_vec(vec![SQRT_HALF, 0.0, 0.0, (1.0 - 2.0 * p) * SQRT_HALF]) };
        let effect = |p: f64| DVector::from_vec(vec![SQRT_HALF, 0.0, 0.0, (1.0 - 2.0 * p) * SQRT_HALF]);
        (
            [state(self.spam.prep_flip[0]), state(self.spam.prep_flip[1])],
            [effect(self.spam.readout_flip[0]), effect(self.spam.readout_flip[1])],
        )
    }

    /// Gate set in `family` (the minimal family if `None`).
    pub fn build(&self, family: Option<ModelFamily>) -> Result<GateSetModel> {
        self.validate()?;
        let minimal = self.minimal_family();
        let family = family.unwrap_or(minimal);
        if !family.contains(minimal) {
            return Err(Error::NotNested(format!("this noise needs at least the {minimal} family, not {family}")));
        }
        let (states, effects) = self.spam_factors();
        if family == ModelFamily::General {
            let layers: Vec<ProcessMatrix> = Layer::all()
                .into_iter()
                .map(|l| {
                    let (h, s) = self.layer_coeffs(l)?;
                    build_gate(Target::Layer(l), &h, &s)
                })
                .collect::<Result<_>>()?;
            let rho = states[0].tensor(&states[1]);
            let e1 = |e: &DVector<f64>| {
                let mut o = -e.clone();
                o[0] += std::f64::consts::SQRT_2;
                o
            };
            let single = |e: &DVector<f64>| PovmRep {
                labels: vec!["0".into(), "1".into()],
                effects: vec![e.clone(), e1(e)],
            };
            let povm = single(&effects[0]).tensor(&single(&effects[1]));
            return GateSetModel::from_layers(&layers, &rho, &povm);
        }
        let mut gates: [Vec<ProcessMatrix>; 2] = [Vec::new(), Vec::new()];
        for (q, list) in gates.iter_mut().enumerate() {
            for g in GateLabel::ALL {
                let spectators: &[GateLabel] = if family == ModelFamily::CrosstalkFree { &[GateLabel::Gi] } else { &GateLabel::ALL };
                for &c in spectators {
                    let (h, s) = self.local_coeffs(g, q, c)?;
                    list.push(build_gate(Target::Single(g), &h, &s)?);
                }
            }
        }
        GateSetModel::from_factors(family, &gates, &states, &effects)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("noise spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// `n` exponentially spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).powf(1.0 / (n - 1) as f64);
    (0..n).map(|i| if i + 1 == n { hi } else { lo * ratio.powi(i as i32) }).collect()
}
