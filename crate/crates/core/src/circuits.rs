//! Two-qubit circuits of parallel single-qubit layers.
//!
//! Text grammar:
//!
//! ```text
//! circuit := layer* ; layer := "[" gate ("," gate)* "]" ; gate := name ":" qubit
//! name    := "Gi" | "Gxpi2" | "Gypi2" ; qubit := "0" | "1"
//! ```
//!
//! A qubit not mentioned inside a layer idles. Serialization always writes both
//! qubits, so `parse(serialize(c)) == c`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateLabel {
    Gi,
    Gxpi2,
    Gypi2,
}

impl GateLabel {
    pub const ALL: [GateLabel; 3] = [GateLabel::Gi, GateLabel::Gxpi2, GateLabel::Gypi2];

    pub fn name(self) -> &'static str {
        match self {
            GateLabel::Gi => "Gi",
            GateLabel::Gxpi2 => "Gxpi2",
            GateLabel::Gypi2 => "Gypi2",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> GateLabel {
        Self::ALL[i]
    }
}

impl fmt::Display for GateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Gi" => Ok(GateLabel::Gi),
            "Gxpi2" => Ok(GateLabel::Gxpi2),
            "Gypi2" => Ok(GateLabel::Gypi2),
            _ => Err(Error::UnknownGate(s.to_string())),
        }
    }
}

/// One gate per qubit, applied in parallel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Layer {
    pub q0: GateLabel,
    pub q1: GateLabel,
}

impl Layer {
    pub const fn new(q0: GateLabel, q1: GateLabel) -> Self {
        Self { q0, q1 }
    }

    pub const IDLE: Layer = Layer::new(GateLabel::Gi, GateLabel::Gi);

    /// The nine layers, indexed `3 * q0 + q1`.
    pub fn all() -> [Layer; 9] {
        let mut out = [Layer::IDLE; 9];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = Layer::from_index(i);
        }
        out
    }

    pub fn index(self) -> usize {
        3 * self.q0.index() + self.q1.index()
    }

    pub fn from_index(i: usize) -> Layer {
        Layer::new(GateLabel::from_index(i / 3), GateLabel::from_index(i % 3))
    }

    pub fn gate(self, qubit: usize) -> GateLabel {
        if qubit == 0 {
            self.q0
        } else {
            self.q1
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}:0,{}:1]", self.q0, self.q1)
    }
}

/// Where a GST circuit came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GstTag {
    pub prep: usize,
    pub germ: usize,
    pub power: usize,
    pub meas: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Circuit {
    pub layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<GstTag>,
}

impl PartialEq for Circuit {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Eq for Circuit {}

impl std::hash::Hash for Circuit {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.layers.hash(state);
    }
}

impl Circuit {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers, tag: None }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn concat(&self, other: &Circuit) -> Circuit {
        let mut layers = self.layers.clone();
        layers.extend_from_slice(&other.layers);
        Circuit::new(layers)
    }

    pub fn repeat(&self, n: usize) -> Circuit {
        Circuit::new(self.layers.iter().copied().cycle().take(self.layers.len() * n).collect())
    }

    pub fn serialize(&self) -> String {
        let mut s = String::with_capacity(16 * self.layers.len());
        for layer in &self.layers {
            s.push_str(&layer.to_string());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Circuit> {
        Parser { src: text.as_bytes(), pos: 0 }.circuit()
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl FromStr for Circuit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Circuit::parse(s)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { offset: self.pos, message: message.into() })
    }

    fn expect(&mut self, byte: u8) -> Result<()> {
        match self.src.get(self.pos) {
            Some(&b) if b == byte => {
                self.pos += 1;
                Ok(())
            }
            Some(&b) => self.fail(format!("expected `{}`, found `{}`", byte as char, b as char)),
            None => self.fail(format!("expected `{}`, found end of input", byte as char)),
        }
    }

    fn circuit(mut self) -> Result<Circuit> {
        let mut layers = Vec::new();
        while self.pos < self.src.len() {
            layers.push(self.layer()?);
        }
        Ok(Circuit::new(layers))
    }

    fn layer(&mut self) -> Result<Layer> {
        self.expect(b'[')?;
        let mut slots: [Option<GateLabel>; 2] = [None, None];
        loop {
            let (gate, qubit) = self.gate()?;
            if slots[qubit].is_some() {
                return self.fail(format!("qubit {qubit} appears twice in one layer"));
            }
            slots[qubit] = Some(gate);
            match self.src.get(self.pos) {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    break;
                }
                Some(&b) => return self.fail(format!("expected `,` or `]`, found `{}`", b as char)),
                None => return self.fail("unterminated layer"),
            }
        }
        Ok(Layer::new(slots[0].unwrap_or(GateLabel::Gi), slots[1].unwrap_or(GateLabel::Gi)))
    }

    fn gate(&mut self) -> Result<(GateLabel, usize)> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.fail("expected a gate name");
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let gate = match name.parse::<GateLabel>() {
            Ok(g) => g,
            Err(e) => {
                self.pos = start;
                return Err(e);
            }
        };
        self.expect(b':')?;
        let qubit = match self.src.get(self.pos) {
            Some(b'0') => 0,
            Some(b'1') => 1,
            Some(&b) => return self.fail(format!("qubit index must be 0 or 1, found `{}`", b as char)),
            None => return self.fail("missing qubit index"),
        };
        self.pos += 1;
        if self.src.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
            return self.fail("qubit index must be 0 or 1");
        }
        Ok((gate, qubit))
    }
}

pub(crate) fn parse_many(items: &[&str]) -> Vec<Circuit> {
    items.iter().map(|s| Circuit::parse(s).expect("built-in circuit parses")).collect()
}

/// Preparation fiducials (qubit 0 = `j`, qubit 1 = `k`).
pub const PREP_FIDUCIALS: [&str; 16] = [
    "",
    "[Gxpi2:1]",
    "[Gypi2:1]",
    "[Gxpi2:1][Gxpi2:1]",
    "[Gxpi2:0]",
    "[Gxpi2:0,Gxpi2:1][Gxpi2:0,Gxpi2:1][Gxpi2:0,Gxpi2:1]",
    "[Gxpi2:0,Gypi2:1]",
    "[Gxpi2:0,Gxpi2:1][Gxpi2:1]",
    "[Gypi2:0]",
    "[Gypi2:0,Gxpi2:1]",
    "[Gypi2:0,Gypi2:1][Gypi2:0,Gypi2:1][Gypi2:0,Gypi2:1]",
    "[Gypi2:0,Gxpi2:1][Gxpi2:1]",
    "[Gxpi2:0][Gxpi2:0]",
    "[Gxpi2:0,Gxpi2:1][Gxpi2:0]",
    "[Gxpi2:0,Gypi2:1][Gxpi2:0]",
    "[Gxpi2:0,Gxpi2:1][Gxpi2:0,Gxpi2:1]",
];

pub const GERMS: [&str; 25] = [
    "[Gi:0,Gi:1]",
    "[Gxpi2:1]",
    "[Gypi2:1]",
    "[Gxpi2:0]",
    "[Gypi2:0]",
    "[Gxpi2:0,Gxpi2:1]",
    "[Gypi2:0,Gypi2:1]",
    "[Gxpi2:0,Gypi2:1]",
    "[Gypi2:0,Gxpi2:1]",
    "[Gxpi2:0,Gxpi2:1][Gypi2:0,Gxpi2:1][Gypi2:0,Gypi2:1]",
    "[Gxpi2:0,Gxpi2:1][Gxpi2:0,Gypi2:1][Gypi2:0,Gypi2:1]",
    "[Gypi2:0][Gypi2:0,Gxpi2:1][Gxpi2:0,Gxpi2:1]",
    "[Gypi2:1][Gxpi2:0,Gypi2:1][Gxpi2:0,Gxpi2:1]",
    "[Gypi2:0,Gxpi2:1][Gxpi2:1][Gxpi2:0,Gypi2:1][Gxpi2:0]",
    "[Gxpi2:0][Gypi2:0,Gypi2:1][Gxpi2:0,Gypi2:1]",
    "[Gxpi2:1][Gxpi2:0,Gxpi2:1][Gxpi2:0,Gypi2:1]",
    "[Gypi2:0][Gypi2:0,Gypi2:1][Gypi2:1][Gxpi2:0]",
    "[Gypi2:0,Gypi2:1][Gxpi2:0,Gypi2:1][Gypi2:0,Gxpi2:1]",
    "[Gypi2:0][Gxpi2:0,Gypi2:1][Gypi2:0,Gypi2:1]",
    "[Gypi2:1][Gypi2:0,Gxpi2:1][Gxpi2:0]",
    "[Gxpi2:1][Gypi2:1]",
    "[Gypi2:0,Gypi2:1][Gypi2:0,Gxpi2:1]",
    "[Gxpi2:0][Gypi2:0]",
    "[Gxpi2:0][Gxpi2:0][Gypi2:0]",
    "[Gxpi2:1][Gxpi2:1][Gypi2:1]",
];

pub const MEAS_FIDUCIALS: [&str; 11] = [
    "",
    "[Gxpi2:1]",
    "[Gypi2:1]",
    "[Gxpi2:1][Gxpi2:1]",
    "[Gxpi2:0]",
    "[Gypi2:0]",
    "[Gxpi2:0][Gxpi2:0]",
    "[Gxpi2:0,Gxpi2:1][Gxpi2:0,Gxpi2:1][Gxpi2:0,Gxpi2:1]",
    "[Gxpi2:0,Gypi2:1]",
    "[Gypi2:0,Gxpi2:1]",
    "[Gypi2:0,Gypi2:1][Gypi2:0,Gypi2:1][Gypi2:0,Gypi2:1]",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignProvenance {
    pub prep_fiducials: Vec<String>,
    pub germs: Vec<String>,
    pub meas_fiducials: Vec<String>,
    pub lengths: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentDesign {
    pub circuits: Vec<Circuit>,
    pub lmax: usize,
    pub provenance: DesignProvenance,
}

impl ExperimentDesign {
    pub fn len(&self) -> usize {
        self.circuits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.circuits.is_empty()
    }

    /// One serialized circuit per line, LF terminated.
    pub fn to_text(&self) -> String {
        circuits_to_text(&self.circuits)
    }
}

pub fn circuits_to_text(circuits: &[Circuit]) -> String {
    let mut out = String::new();
    for c in circuits {
        out.push_str(&c.serialize());
        out.push('\n');
    }
    out
}

/// Parses a design file; blank lines are not allowed except the trailing newline.
pub fn circuits_from_text(text: &str) -> Result<Vec<Circuit>> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() && text.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .map(|line| Circuit::parse(line.strip_suffix('\r').unwrap_or(line)))
        .collect()
}

/// Powers of two `1, 2, 4, …, lmax`.
pub fn max_lengths(lmax: usize) -> Result<Vec<usize>> {
    if lmax == 0 || !lmax.is_power_of_two() {
        return invalid(format!("lmax must be a power of two, got {lmax}"));
    }
    Ok(std::iter::successors(Some(1usize), |l| Some(l * 2)).take_while(|&l| l <= lmax).collect())
}

/// Every `prep · germ^n · meas` with `n = ⌊L / len(germ)⌋`, deduplicated by serialized form.
pub fn build_gst_design(lmax: usize) -> Result<ExperimentDesign> {
    let lengths = max_lengths(lmax)?;
    let preps = parse_many(&PREP_FIDUCIALS);
    let germs = parse_many(&GERMS);
    let meas = parse_many(&MEAS_FIDUCIALS);
    let mut seen = HashSet::new();
    let mut circuits = Vec::new();
    for &l in &lengths {
        for (gi, germ) in germs.iter().enumerate() {
            let power = l / germ.depth();
            let body = germ.repeat(power);
            for (pi, prep) in preps.iter().enumerate() {
                let head = prep.concat(&body);
                for (mi, m) in meas.iter().enumerate() {
                    let mut c = head.concat(m);
                    if seen.insert(c.serialize()) {
                        c.tag = Some(GstTag { prep: pi, germ: gi, power, meas: mi });
                        circuits.push(c);
                    }
                }
            }
        }
    }
    Ok(ExperimentDesign {
        circuits,
        lmax,
        provenance: DesignProvenance {
            prep_fiducials: PREP_FIDUCIALS.iter().map(|s| s.to_string()).collect(),
            germs: GERMS.iter().map(|s| s.to_string()).collect(),
            meas_fiducials: MEAS_FIDUCIALS.iter().map(|s| s.to_string()).collect(),
            lengths,
        },
    })
}

/// Which qubits receive random gates in a simultaneous-RB circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RbMode {
    Simultaneous,
    /// Qubit 0 idles, qubit 1 is driven.
    Q0Idle,
    /// Qubit 1 idles, qubit 0 is driven.
    Q1Idle,
}

impl RbMode {
    pub const ALL: [RbMode; 3] = [RbMode::Simultaneous, RbMode::Q0Idle, RbMode::Q1Idle];

    pub fn name(self) -> &'static str {
        match self {
            RbMode::Simultaneous => "simultaneous",
            RbMode::Q0Idle => "q0-idle",
            RbMode::Q1Idle => "q1-idle",
        }
    }

    pub fn drives(self, qubit: usize) -> bool {
        match self {
            RbMode::Simultaneous => true,
            RbMode::Q0Idle => qubit == 1,
            RbMode::Q1Idle => qubit == 0,
        }
    }
}

impl FromStr for RbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RbMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown RB mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbCircuit {
    pub circuit: Circuit,
    pub mode: RbMode,
    pub depth: usize,
    /// Expected outcome, qubit 0 first (e.g. `"01"`).
    pub target: String,
}

/// Signed permutation acting on the Bloch vector.
type Bloch = [[i8; 3]; 3];

const BLOCH_ID: Bloch = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
// X: y → z, z → −y
const BLOCH_X: Bloch = [[1, 0, 0], [0, 0, -1], [0, 1, 0]];
// Y: z → x, x → −z
const BLOCH_Y: Bloch = [[0, 0, 1], [0, 1, 0], [-1, 0, 0]];

fn bloch_mul(a: &Bloch, b: &Bloch) -> Bloch {
    let mut out = [[0i8; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn gate_bloch(g: GateLabel) -> &'static Bloch {
    match g {
        GateLabel::Gi => &BLOCH_ID,
        GateLabel::Gxpi2 => &BLOCH_X,
        GateLabel::Gypi2 => &BLOCH_Y,
    }
}

/// The 24 single-qubit Cliffords with a shortest `{Gxpi2, Gypi2}` word producing each.
pub fn clifford_words() -> Vec<(Bloch, Vec<GateLabel>)> {
    let mut found: Vec<(Bloch, Vec<GateLabel>)> = vec![(BLOCH_ID, Vec::new())];
    let mut frontier = 0;
    while frontier < found.len() {
        let (elem, word) = found[frontier].clone();
        for g in [GateLabel::Gxpi2, GateLabel::Gypi2] {
            let next = bloch_mul(gate_bloch(g), &elem);
            if !found.iter().any(|(e, _)| *e == next) {
                let mut w = word.clone();
                w.push(g);
                found.push((next, w));
            }
        }
        frontier += 1;
    }
    found
}

/// Shortest word returning the Bloch vector `net · ẑ` to `±ẑ`, plus the resulting bit.
fn inversion_word(net: &Bloch, table: &[(Bloch, Vec<GateLabel>)]) -> (Vec<GateLabel>, u8) {
    table
        .iter()
        .filter_map(|(elem, word)| {
            let total = bloch_mul(elem, net);
            match total[2][2] {
                1 => Some((word.clone(), 0u8)),
                -1 => Some((word.clone(), 1u8)),
                _ => None,
            }
        })
        .min_by_key(|(w, _)| w.len())
        .expect("some Clifford maps z to ±z")
}

fn rb_circuit(random_layers: &[Layer], mode: RbMode, table: &[(Bloch, Vec<GateLabel>)]) -> RbCircuit {
    let mut per_qubit: [Vec<GateLabel>; 2] = [Vec::new(), Vec::new()];
    for (q, seq) in per_qubit.iter_mut().enumerate() {
        *seq = random_layers
            .iter()
            .map(|l| if mode.drives(q) { l.gate(q) } else { GateLabel::Gi })
            .collect();
    }
    let mut suffixes: [Vec<GateLabel>; 2] = [Vec::new(), Vec::new()];
    let mut bits = [0u8; 2];
    for q in 0..2 {
        let net = per_qubit[q].iter().fold(BLOCH_ID, |acc, &g| bloch_mul(gate_bloch(g), &acc));
        let (word, bit) = inversion_word(&net, table);
        suffixes[q] = word;
        bits[q] = bit;
    }
    let tail = suffixes[0].len().max(suffixes[1].len());
    let mut layers: Vec<Layer> = (0..random_layers.len()).map(|i| Layer::new(per_qubit[0][i], per_qubit[1][i])).collect();
    for i in 0..tail {
        let g0 = suffixes[0].get(i).copied().unwrap_or(GateLabel::Gi);
        let g1 = suffixes[1].get(i).copied().unwrap_or(GateLabel::Gi);
        layers.push(Layer::new(g0, g1));
    }
    RbCircuit {
        circuit: Circuit::new(layers),
        mode,
        depth: random_layers.len(),
        target: format!("{}{}", bits[0], bits[1]),
    }
}

/// Random simultaneous-RB circuits with a compiled per-qubit inversion suffix.
///
/// Random layers are drawn uniformly from the nine-layer set; the idle modes are
/// derived from the same draws with one qubit's gates replaced by idles, so calls
/// with equal `seed` and different `mode` describe one experiment.
pub fn sample_rb_circuits(depths: &[usize], per_depth: usize, mode: RbMode, seed: u64) -> Vec<RbCircuit> {
    let table = clifford_words();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(depths.len() * per_depth);
    for &d in depths {
        for _ in 0..per_depth {
            let random: Vec<Layer> = (0..d).map(|_| Layer::from_index(rng.random_range(0..9))).collect();
            out.push(rb_circuit(&random, mode, &table));
        }
    }
    out
}

/// Seeded shuffle of the union of several circuit lists; duplicates are kept.
pub fn interleave(designs: &[Vec<Circuit>], seed: u64) -> Vec<Circuit> {
    let mut all: Vec<Circuit> = designs.iter().flatten().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all
}
