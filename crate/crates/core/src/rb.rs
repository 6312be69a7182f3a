//! Simultaneous randomized-benchmarking analysis.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::RbCircuit;
use crate::error::{invalid, Error, Result};
use crate::fit::percentile;
use crate::simulate::Dataset;

pub const DEFAULT_RB_REPLICATES: usize = 1000;

/// What the other qubit does while a qubit is benchmarked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RbContext {
    SpectatorIdle,
    SpectatorDriven,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitSuccess {
    pub circuit: String,
    pub success: f64,
    /// Shots attributed to this cell's draws of the circuit.
    pub shots: u64,
    /// Times the circuit was drawn at this depth for this cell; repeated draws share merged counts.
    #[serde(default = "one")]
    pub draws: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSuccess {
    pub depth: usize,
    pub circuits: Vec<CircuitSuccess>,
}

impl DepthSuccess {
    /// Mean success over draws.
    pub fn mean(&self) -> f64 {
        let n: u64 = self.circuits.iter().map(|c| c.draws).sum();
        self.circuits.iter().map(|c| c.success * c.draws as f64).sum::<f64>() / n.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbCell {
    pub qubit: usize,
    pub context: RbContext,
    pub depths: Vec<DepthSuccess>,
}

/// Per-qubit marginal success of every benchmarked circuit, grouped by qubit,
/// context and depth.
pub fn rb_success(ds: &Dataset, meta: &[RbCircuit]) -> Result<Vec<RbCell>> {
    let mut total_draws: HashMap<String, u64> = HashMap::new();
    for rb in meta {
        *total_draws.entry(rb.circuit.to_string()).or_insert(0) += 1;
    }
    let mut cells: BTreeMap<(usize, RbContext), BTreeMap<usize, Vec<CircuitSuccess>>> = BTreeMap::new();
    for rb in meta {
        let counts = ds.get(&rb.circuit).ok_or_else(|| Error::CircuitMismatch(format!("no data for RB circuit {}", rb.circuit)))?;
        let target: Vec<u8> = rb.target.bytes().map(|b| b - b'0').collect();
        if target.len() != 2 || target.iter().any(|&b| b > 1) {
            return invalid(format!("bad RB target `{}`", rb.target));
        }
        let key = rb.circuit.to_string();
        let n = counts.as_array();
        let shots = counts.total();
        let per_draw = shots / total_draws[&key];
        for qubit in 0..2 {
            if !rb.mode.drives(qubit) {
                continue;
            }
            let context = if rb.mode.drives(1 - qubit) { RbContext::SpectatorDriven } else { RbContext::SpectatorIdle };
            let list = cells.entry((qubit, context)).or_default().entry(rb.depth).or_default();
            if let Some(c) = list.iter_mut().find(|c| c.circuit == key) {
                c.draws += 1;
                c.shots += per_draw;
                continue;
            }
            let hits: u64 = (0..4).filter(|&a| ((a >> (1 - qubit)) & 1) as u8 == target[qubit]).map(|a| n[a]).sum();
            let success = if shots == 0 { f64::NAN } else { hits as f64 / shots as f64 };
            list.push(CircuitSuccess { circuit: key.clone(), success, shots: per_draw, draws: 1 });
        }
    }
    Ok(cells
        .into_iter()
        .map(|((qubit, context), depths)| RbCell {
            qubit,
            context,
            depths: depths.into_iter().map(|(depth, circuits)| DepthSuccess { depth, circuits }).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decay {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub weighted_sse: f64,
}

impl Decay {
    /// Error per gate for a single-qubit marginal, `(1 − p)/2`.
    pub fn r(&self) -> f64 {
        (1.0 - self.p) / 2.0
    }

    pub fn eval(&self, depth: f64) -> f64 {
        self.a + self.b * self.p.powf(depth)
    }
}

/// Best `(A, B)` within bounds for fixed decay `p`, with its weighted SSE.
fn linear_part(x: &[f64], y: &[f64], w: &[f64], p: f64) -> (f64, f64, f64) {
    let basis: Vec<f64> = x.iter().map(|&d| p.powf(d)).collect();
    let sse = |a: f64, b: f64| (0..y.len()).map(|i| w[i] * (y[i] - a - b * basis[i]).powi(2)).sum::<f64>();
    let (mut sw, mut su, mut suu, mut sy, mut suy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..y.len() {
        sw += w[i];
        su += w[i] * basis[i];
        suu += w[i] * basis[i] * basis[i];
        sy += w[i] * y[i];
        suy += w[i] * basis[i] * y[i];
    }
    let in_bounds = |a: f64, b: f64| (0.0..=1.0).contains(&a) && (-1.0..=1.0).contains(&b);
    let det = sw * suu - su * su;
    if det > 1e-14 * sw * suu.max(1e-300) {
        let b = (sw * suy - su * sy) / det;
        let a = (sy - b * su) / sw;
        if in_bounds(a, b) {
            return (a, b, sse(a, b));
        }
    }
    // optimum on the boundary: fix one coordinate and solve for the other
    let mut best = (f64::NAN, f64::NAN, f64::INFINITY);
    let mut consider = |a: f64, b: f64| {
        let (a, b) = (a.clamp(0.0, 1.0), b.clamp(-1.0, 1.0));
        let v = sse(a, b);
        if v < best.2 {
            best = (a, b, v);
        }
    };
    for a in [0.0, 1.0] {
        let b = if suu > 0.0 { (suy - a * su) / suu } else { 0.0 };
        consider(a, b);
    }
    for b in [-1.0, 1.0] {
        consider((sy - b * su) / sw, b);
    }
    best
}

/// Weighted least-squares fit of `A + B pᵈ` with `A ∈ [0,1]`, `B ∈ [−1,1]`, `p ∈ [0,1]`.
pub fn fit_decay(depths: &[f64], successes: &[f64], weights: &[f64]) -> Result<Decay> {
    if depths.len() != successes.len() || depths.len() != weights.len() {
        return invalid("depths, successes and weights differ in length");
    }
    if depths.iter().chain(successes).chain(weights).any(|v| !v.is_finite()) || weights.iter().any(|&w| w < 0.0) {
        return invalid("non-finite data or negative weight");
    }
    let mut distinct: Vec<f64> = depths.iter().zip(weights).filter(|(_, &w)| w > 0.0).map(|(&d, _)| d).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return invalid(format!("degenerate depth set: {} distinct depths, need 3", distinct.len()));
    }
    let scale = weights.iter().copied().fold(0.0, f64::max);
    // the model depends on depth only, so weighted means per depth carry the fit
    let mut groups: BTreeMap<u64, (f64, f64, f64, f64)> = BTreeMap::new();
    for i in 0..depths.len() {
        let w = weights[i] / scale;
        let g = groups.entry(depths[i].to_bits()).or_insert((depths[i], 0.0, 0.0, 0.0));
        g.1 += w;
        g.2 += w * successes[i];
        g.3 += w * successes[i] * successes[i];
    }
    let groups: Vec<(f64, f64, f64, f64)> = groups.into_values().filter(|g| g.1 > 0.0).collect();
    let x: Vec<f64> = groups.iter().map(|g| g.0).collect();
    let w: Vec<f64> = groups.iter().map(|g| g.1).collect();
    let y: Vec<f64> = groups.iter().map(|g| g.2 / g.1).collect();
    let within: f64 = groups.iter().map(|g| (g.3 - g.2 * g.2 / g.1).max(0.0)).sum();
    let (depths, successes) = (&x[..], &y[..]);
    let profile = |p: f64| linear_part(depths, successes, &w, p).2;
    let mut grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
    grid.extend((300..=1000).map(|i| 1.0 - 10f64.powf(-(i as f64) / 100.0)));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let values: Vec<f64> = grid.iter().map(|&p| profile(p)).collect();
    let best = (0..grid.len()).min_by(|&i, &j| values[i].total_cmp(&values[j])).expect("grid");
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let (mut fc, mut fd) = (profile(c), profile(d));
    while hi - lo > 1e-14 {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = profile(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = profile(d);
        }
    }
    let mut p = 0.5 * (lo + hi);
    if values[best] < profile(p) {
        p = grid[best];
    }
    let (a, b, sse) = linear_part(depths, successes, &w, p);
    Ok(Decay { a, b, p, weighted_sse: (sse + within) * scale })
}

fn fit_cell(depths: &[DepthSuccess]) -> Result<Decay> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for d in depths {
        for c in &d.circuits {
            if c.shots > 0 {
                x.push(d.depth as f64);
                y.push(c.success);
                w.push(c.shots as f64);
            }
        }
    }
    fit_decay(&x, &y, &w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbCellFit {
    pub qubit: usize,
    pub context: RbContext,
    pub decay: Decay,
    pub r: f64,
    pub r_lower: f64,
    pub r_upper: f64,
    pub r_halfwidth: f64,
    pub p_halfwidth: f64,
    pub r_replicates: Vec<f64>,
    pub depths: Vec<DepthSuccess>,
}

impl RbCellFit {
    pub fn covers(&self, r: f64) -> bool {
        self.r_lower <= r && r <= self.r_upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RBResult {
    pub cells: Vec<RbCellFit>,
    pub replicates: usize,
    pub seed: u64,
}

impl RBResult {
    pub fn cell(&self, qubit: usize, context: RbContext) -> Option<&RbCellFit> {
        self.cells.iter().find(|c| c.qubit == qubit && c.context == context)
    }
}

fn interval(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    (percentile(&sorted, 0.025), percentile(&sorted, 0.975))
}

/// Resamples draws within each depth. A circuit drawn `m` times carries merged
/// counts whose shot noise is `m` times too small per draw, so each resampled draw
/// gets an extra binomial deviation scaled by `√(1 − 1/m)`.
fn resample_cell(depths: &[DepthSuccess], rng: &mut ChaCha8Rng) -> Vec<DepthSuccess> {
    depths
        .iter()
        .map(|d| {
            let pool: Vec<&CircuitSuccess> = d.circuits.iter().flat_map(|c| std::iter::repeat_n(c, c.draws as usize)).collect();
            let circuits = (0..pool.len())
                .map(|_| {
                    let c = pool[rng.random_range(0..pool.len())];
                    let per_draw = c.shots / c.draws.max(1);
                    let mut success = c.success;
                    if c.draws > 1 && per_draw > 0 && success.is_finite() {
                        let b = Binomial::new(per_draw, success.clamp(0.0, 1.0)).expect("valid binomial").sample(rng);
                        success += (1.0 - 1.0 / c.draws as f64).sqrt() * (b as f64 / per_draw as f64 - success);
                    }
                    CircuitSuccess { circuit: c.circuit.clone(), success, shots: per_draw, draws: 1 }
                })
                .collect();
            DepthSuccess { depth: d.depth, circuits }
        })
        .collect()
}

/// Fits every (qubit, context) cell and attaches bootstrap intervals on `r`,
/// resampling circuit draws within each depth.
pub fn rb_analyze(ds: &Dataset, meta: &[RbCircuit], replicates: usize, seed: u64) -> Result<RBResult> {
    if replicates < 2 {
        return invalid("at least two bootstrap replicates are needed");
    }
    let cells = rb_success(ds, meta)?;
    let fits = cells
        .into_par_iter()
        .enumerate()
        .map(|(index, cell)| {
            let decay = fit_cell(&cell.depths)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut rs = Vec::with_capacity(replicates);
            let mut ps = Vec::with_capacity(replicates);
            for _ in 0..replicates {
                if let Ok(d) = fit_cell(&resample_cell(&cell.depths, &mut rng)) {
                    rs.push(d.r());
                    ps.push(d.p);
                }
            }
            let (r_lower, r_upper) = interval(&rs);
            let (p_lower, p_upper) = interval(&ps);
            let p_halfwidth = 0.5 * (p_upper - p_lower);
            Ok(RbCellFit {
                qubit: cell.qubit,
                context: cell.context,
                decay,
                r: decay.r(),
                r_lower,
                r_upper,
                r_halfwidth: 0.5 * (r_upper - r_lower),
                p_halfwidth,
                r_replicates: rs,
                depths: cell.depths,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RBResult { cells: fits, replicates, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextVariation {
    pub qubit: usize,
    pub r_idle: f64,
    pub r_driven: f64,
    /// `r_s − r_i`.
    pub variation: f64,
    pub lower: f64,
    pub upper: f64,
    pub halfwidth: f64,
}

impl ContextVariation {
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Driven-minus-idle error rate of one qubit with a percentile interval from
/// independent bootstrap replicates of the two cells.
pub fn context_variation_rb(res: &RBResult, qubit: usize) -> Result<ContextVariation> {
    let idle = res.cell(qubit, RbContext::SpectatorIdle).ok_or_else(|| Error::Validation(format!("qubit {qubit} has no idle-context fit")))?;
    let driven =
        res.cell(qubit, RbContext::SpectatorDriven).ok_or_else(|| Error::Validation(format!("qubit {qubit} has no driven-context fit")))?;
    let diffs: Vec<f64> = driven.r_replicates.iter().zip(&idle.r_replicates).map(|(s, i)| s - i).collect();
    let (lower, upper) = interval(&diffs);
    Ok(ContextVariation {
        qubit,
        r_idle: idle.r,
        r_driven: driven.r,
        variation: driven.r - idle.r,
        lower,
        upper,
        halfwidth: 0.5 * (upper - lower),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_curve_recovered() {
        let depths: Vec<f64> = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0].to_vec();
        let y: Vec<f64> = depths.iter().map(|&d| 0.5 + 0.5 * 0.9f64.powf(d)).collect();
        let fit = fit_decay(&depths, &y, &vec![1.0; depths.len()]).unwrap();
        assert!((fit.p - 0.9).abs() < 1e-9 && (fit.a - 0.5).abs() < 1e-9 && (fit.b - 0.5).abs() < 1e-9, "{fit:?}");
        assert!((fit.r() - 0.05).abs() < 1e-9);
    }

    #[test]
    fn weights_scale_out() {
        let depths = [2.0, 4.0, 8.0, 16.0, 32.0];
        let y = [0.97, 0.95, 0.9, 0.86, 0.74];
        let w = [1.0, 2.0, 1.0, 3.0, 1.0];
        let a = fit_decay(&depths, &y, &w).unwrap();
        let b = fit_decay(&depths, &y, &w.map(|v| v * 1234.5)).unwrap();
        assert!((a.p - b.p).abs() < 1e-12 && (a.a - b.a).abs() < 1e-12 && (a.b - b.b).abs() < 1e-12);
    }

    #[test]
    fn negative_b_stays_in_bounds() {
        let depths = [1.0, 2.0, 4.0, 8.0, 16.0];
        let y: Vec<f64> = depths.iter().map(|&d| 0.6 - 0.3 * 0.8f64.powf(d)).collect();
        let fit = fit_decay(&depths, &y, &[1.0; 5]).unwrap();
        assert!(fit.b < 0.0 && (fit.p - 0.8).abs() < 1e-8);
        let wild = [1.2, -0.5, 2.0, 0.1, 0.9];
        let fit = fit_decay(&depths, &wild, &[1.0; 5]).unwrap();
        assert!((0.0..=1.0).contains(&fit.a) && (-1.0..=1.0).contains(&fit.b) && (0.0..=1.0).contains(&fit.p));
    }

    #[test]
    fn degenerate_depths_rejected() {
        assert!(fit_decay(&[1.0, 1.0, 2.0], &[0.9, 0.9, 0.8], &[1.0; 3]).is_err());
    }

    #[test]
    fn depolarizing_rate_recovered() {
        use crate::circuits::{sample_rb_circuits, RbMode};
        use crate::noise::NoiseSpec;
        use crate::simulate::sample;
        let r = 5e-3;
        let model = NoiseSpec::depolarizing(r).build(None).unwrap();
        let depths = [0, 2, 4, 8, 16, 32, 64];
        let meta: Vec<_> = RbMode::ALL.into_iter().flat_map(|m| sample_rb_circuits(&depths, 20, m, 11)).collect();
        let circuits: Vec<_> = meta.iter().map(|c| c.circuit.clone()).collect();
        let ds = sample(&model, &circuits, 500, 5).unwrap();
        let res = rb_analyze(&ds, &meta, 100, 3).unwrap();
        assert_eq!(res.cells.len(), 4);
        for cell in &res.cells {
            assert!(cell.r_halfwidth > 0.0 && cell.r_halfwidth < 2e-3, "{}", cell.r_halfwidth);
            assert!((cell.r - r).abs() < 2.0 * cell.r_halfwidth, "{} vs {r} ± {}", cell.r, cell.r_halfwidth);
        }
        for q in 0..2 {
            let v = context_variation_rb(&res, q).unwrap();
            assert!(v.lower <= 1e-4 && v.upper >= -1e-4, "{v:?}");
        }
    }

    #[test]
    fn ideal_data_succeeds_everywhere() {
        use crate::circuits::{sample_rb_circuits, RbMode};
        use crate::models::{GateSetModel, ModelFamily};
        use crate::simulate::sample;
        let meta = sample_rb_circuits(&[0, 3, 9], 4, RbMode::Simultaneous, 2);
        let circuits: Vec<_> = meta.iter().map(|c| c.circuit.clone()).collect();
        let ds = sample(&GateSetModel::ideal(ModelFamily::CrosstalkFree), &circuits, 50, 1).unwrap();
        for cell in rb_success(&ds, &meta).unwrap() {
            assert!(cell.depths.iter().all(|d| d.mean() == 1.0));
        }
    }
}
