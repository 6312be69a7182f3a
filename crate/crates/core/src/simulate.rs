//! Outcome probabilities, seeded multinomial sampling, dataset files,
//! aggregation and two-sample consistency testing.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::circuits::Circuit;
use crate::engine::CircuitTrie;
use crate::error::{invalid, Error, Result};
use crate::models::GateSetModel;

pub const CLIP: f64 = 1e-12;
pub const DATASET_FORMAT: &str = "xtalk-gst-dataset";

/// Clips each probability to `[CLIP, 1]` and renormalizes.
pub fn clip_probabilities(p: &[f64; 4]) -> [f64; 4] {
    let mut q = p.map(|x| if x.is_nan() { CLIP } else { x.clamp(CLIP, 1.0) });
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x /= s);
    q
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probabilities {
    pub raw: [f64; 4],
    pub clipped: [f64; 4],
}

/// Outcome distribution of one circuit over `00, 01, 10, 11`.
pub fn probabilities(m: &GateSetModel, c: &Circuit) -> Probabilities {
    let raw = CircuitTrie::new(std::slice::from_ref(c)).probabilities(m.compiled())[0];
    Probabilities { raw, clipped: clip_probabilities(&raw) }
}

/// Raw outcome distributions of many circuits, sharing common prefixes.
pub fn probabilities_many(m: &GateSetModel, circuits: &[Circuit]) -> Vec<[f64; 4]> {
    CircuitTrie::new(circuits).probabilities(m.compiled())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    #[serde(rename = "00")]
    pub c00: u64,
    #[serde(rename = "01")]
    pub c01: u64,
    #[serde(rename = "10")]
    pub c10: u64,
    #[serde(rename = "11")]
    pub c11: u64,
}

impl Counts {
    pub fn from_array(a: [u64; 4]) -> Self {
        Self { c00: a[0], c01: a[1], c10: a[2], c11: a[3] }
    }

    pub fn as_array(&self) -> [u64; 4] {
        [self.c00, self.c01, self.c10, self.c11]
    }

    pub fn as_f64(&self) -> [f64; 4] {
        self.as_array().map(|x| x as f64)
    }

    pub fn total(&self) -> u64 {
        self.as_array().iter().sum()
    }

    pub fn frequencies(&self) -> [f64; 4] {
        let n = self.total().max(1) as f64;
        self.as_f64().map(|x| x / n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub circuit: Circuit,
    pub counts: Counts,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    #[serde(default)]
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<DataRow>,
    pub metadata: DatasetMetadata,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(flatten)]
    metadata: DatasetMetadata,
}

#[derive(Serialize, Deserialize)]
struct Line {
    circuit: String,
    counts: Counts,
}

impl Dataset {
    pub fn new(rows: Vec<DataRow>, metadata: DatasetMetadata) -> Result<Self> {
        let ds = Self { rows, metadata };
        let mut seen = std::collections::HashSet::new();
        for r in &ds.rows {
            if !seen.insert(r.circuit.to_string()) {
                return invalid(format!("circuit `{}` appears twice in a dataset", r.circuit));
            }
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn circuits(&self) -> Vec<Circuit> {
        self.rows.iter().map(|r| r.circuit.clone()).collect()
    }

    pub fn counts(&self) -> Vec<[f64; 4]> {
        self.rows.iter().map(|r| r.counts.as_f64()).collect()
    }

    pub fn total_shots(&self) -> u64 {
        self.rows.iter().map(|r| r.counts.total()).sum()
    }

    pub fn index(&self) -> HashMap<String, usize> {
        self.rows.iter().enumerate().map(|(i, r)| (r.circuit.to_string(), i)).collect()
    }

    pub fn get(&self, c: &Circuit) -> Option<&Counts> {
        self.rows.iter().find(|r| &r.circuit == c).map(|r| &r.counts)
    }

    /// Same circuits with new counts (e.g. a bootstrap resample).
    pub fn with_counts(&self, counts: Vec<Counts>) -> Result<Self> {
        if counts.len() != self.rows.len() {
            return Err(Error::DimensionMismatch(counts.len(), self.rows.len()));
        }
        let rows = self.rows.iter().zip(counts).map(|(r, c)| DataRow { circuit: r.circuit.clone(), counts: c }).collect();
        Ok(Self { rows, metadata: self.metadata.clone() })
    }

    /// JSON Lines: a header object followed by one object per circuit.
    pub fn to_jsonl(&self) -> String {
        let header = Header { format: DATASET_FORMAT.into(), version: 1, metadata: self.metadata.clone() };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.rows {
            let line = Line { circuit: r.circuit.to_string(), counts: r.counts };
            out.push_str(&serde_json::to_string(&line).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::Validation("dataset file is empty".into()))?;
        let header: Header = serde_json::from_str(first)?;
        if header.format != DATASET_FORMAT || header.version != 1 {
            return invalid(format!("unsupported dataset format `{}` version {}", header.format, header.version));
        }
        let mut rows = Vec::new();
        for (no, l) in lines {
            let line: Line = serde_json::from_str(l)
                .map_err(|e| Error::Validation(format!("dataset line {}: {e}", no + 1)))?;
            rows.push(DataRow { circuit: Circuit::parse(&line.circuit)?, counts: line.counts });
        }
        Self::new(rows, header.metadata)
    }
}

fn substream(seed: u64, circuit: &str, occurrence: u64) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(circuit.as_bytes());
    h.update(occurrence.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}

/// One multinomial draw via sequential binomials.
pub fn multinomial<R: rand::Rng>(rng: &mut R, shots: u64, p: &[f64; 4]) -> [u64; 4] {
    let mut out = [0u64; 4];
    let mut left = shots;
    let mut mass = 1.0;
    for a in 0..3 {
        if left == 0 {
            break;
        }
        let q = if mass > 0.0 { (p[a] / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = if q >= 1.0 {
            left
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(left, q).expect("valid binomial").sample(rng)
        };
        out[a] = k;
        left -= k;
        mass -= p[a];
    }
    out[3] = left;
    out
}

/// Samples `shots` outcomes per circuit. Each occurrence of a circuit gets its
/// own RNG keyed by `(seed, circuit, occurrence)`; repeated circuits are merged.
pub fn sample(m: &GateSetModel, circuits: &[Circuit], shots: u64, seed: u64) -> Result<Dataset> {
    if shots == 0 {
        return invalid("shots must be positive");
    }
    let probs = probabilities_many(m, circuits);
    let keys: Vec<String> = circuits.iter().map(Circuit::to_string).collect();
    let mut occurrence = Vec::with_capacity(circuits.len());
    let mut seen: HashMap<&str, u64> = HashMap::new();
    for k in &keys {
        let e = seen.entry(k.as_str()).or_insert(0);
        occurrence.push(*e);
        *e += 1;
    }
    let draws: Vec<[u64; 4]> = (0..circuits.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &keys[i], occurrence[i]);
            multinomial(&mut rng, shots, &clip_probabilities(&probs[i]))
        })
        .collect();
    let mut rows: Vec<DataRow> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, d) in draws.iter().enumerate() {
        match index.get(keys[i].as_str()) {
            Some(&r) => {
                let mut c = rows[r].counts.as_array();
                for a in 0..4 {
                    c[a] += d[a];
                }
                rows[r].counts = Counts::from_array(c);
            }
            None => {
                index.insert(keys[i].as_str(), rows.len());
                rows.push(DataRow { circuit: circuits[i].clone(), counts: Counts::from_array(*d) });
            }
        }
    }
    Ok(Dataset { rows, metadata: DatasetMetadata { seed: Some(seed), shots: Some(shots), model: String::new(), timestamp: None } })
}

fn same_circuits(a: &Dataset, b: &Dataset) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::CircuitMismatch(format!("{} vs {} circuits", a.len(), b.len())));
    }
    let idx = b.index();
    a.rows
        .iter()
        .map(|r| {
            idx.get(&r.circuit.to_string())
                .copied()
                .ok_or_else(|| Error::CircuitMismatch(format!("`{}` missing from second dataset", r.circuit)))
        })
        .collect()
}

/// Element-wise sum of datasets over identical circuit sets.
pub fn aggregate(datasets: &[Dataset]) -> Result<Dataset> {
    let (first, rest) = datasets.split_first().ok_or_else(|| Error::Validation("nothing to aggregate".into()))?;
    let mut out = first.clone();
    for ds in rest {
        let map = same_circuits(first, ds)?;
        for (row, &j) in out.rows.iter_mut().zip(&map) {
            let mut c = row.counts.as_array();
            let d = ds.rows[j].counts.as_array();
            for a in 0..4 {
                c[a] += d[a];
            }
            row.counts = Counts::from_array(c);
        }
    }
    out.metadata.shots = None;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitConsistency {
    pub circuit: String,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub per_circuit: Vec<CircuitConsistency>,
    pub alpha: f64,
    /// Bonferroni-corrected per-circuit level `alpha / N`.
    pub threshold: f64,
    pub min_p_value: f64,
    pub consistent: bool,
}

/// Two-sample likelihood-ratio statistic of one circuit against the pooled distribution.
pub fn two_sample_llr(a: &[u64; 4], b: &[u64; 4]) -> f64 {
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return 0.0;
    }
    let n = (na + nb) as f64;
    let mut s = 0.0;
    for k in 0..4 {
        let pooled = (a[k] + b[k]) as f64 / n;
        for (x, tot) in [(a[k], na), (b[k], nb)] {
            if x > 0 {
                s += x as f64 * (x as f64 / (tot as f64 * pooled)).ln();
            }
        }
    }
    (2.0 * s).max(0.0)
}

/// Per-circuit two-sample LLR tests against χ²₃ with a Bonferroni-corrected verdict.
pub fn consistency_test(a: &Dataset, b: &Dataset, alpha: f64) -> Result<ConsistencyReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    let map = same_circuits(a, b)?;
    let chi2 = ChiSquared::new(3.0).expect("dof > 0");
    let per_circuit: Vec<CircuitConsistency> = a
        .rows
        .iter()
        .zip(&map)
        .map(|(r, &j)| {
            let stat = two_sample_llr(&r.counts.as_array(), &b.rows[j].counts.as_array());
            CircuitConsistency { circuit: r.circuit.to_string(), statistic: stat, p_value: chi2.sf(stat) }
        })
        .collect();
    let threshold = alpha / a.len().max(1) as f64;
    let min_p_value = per_circuit.iter().map(|c| c.p_value).fold(1.0, f64::min);
    Ok(ConsistencyReport { per_circuit, alpha, threshold, min_p_value, consistent: min_p_value >= threshold })
}
