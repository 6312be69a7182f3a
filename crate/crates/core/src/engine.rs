//! Batched circuit evaluation over a prefix trie.
//!
//! Circuits are inserted in sorted order, so trie nodes are numbered in
//! depth-first preorder and every child of the root owns a contiguous node range.
//! Forward passes propagate the state through each node once; backward passes
//! push covectors up the trie and accumulate layer gradients as outer products.

use std::ops::Range;

use rayon::prelude::*;

use crate::circuits::Circuit;
use crate::models::{Compiled, Ptm16, Vec16};

#[derive(Debug, Clone)]
pub struct CircuitTrie {
    parent: Vec<u32>,
    layer: Vec<u8>,
    /// Trie node of each circuit, in input order.
    ends: Vec<u32>,
    /// Circuits ending at each node (several only for repeated circuits).
    ends_at: Vec<Vec<u32>>,
    subtrees: Vec<Range<usize>>,
}

#[inline]
fn matvec(m: &Ptm16, v: &Vec16) -> Vec16 {
    let mut out = [0.0; 16];
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[16 * r..16 * r + 16];
        let mut acc = 0.0;
        for c in 0..16 {
            acc += row[c] * v[c];
        }
        *o = acc;
    }
    out
}

#[inline]
fn matvec_t_add(m: &Ptm16, u: &Vec16, out: &mut Vec16) {
    for r in 0..16 {
        let ur = u[r];
        if ur == 0.0 {
            continue;
        }
        let row = &m[16 * r..16 * r + 16];
        for c in 0..16 {
            out[c] += row[c] * ur;
        }
    }
}

#[inline]
fn outer_add(g: &mut Ptm16, u: &Vec16, v: &Vec16) {
    for r in 0..16 {
        let ur = u[r];
        if ur == 0.0 {
            continue;
        }
        let row = &mut g[16 * r..16 * r + 16];
        for c in 0..16 {
            row[c] += ur * v[c];
        }
    }
}

#[inline]
fn dot(a: &Vec16, b: &Vec16) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CircuitTrie {
    pub fn new(circuits: &[Circuit]) -> Self {
        let keys: Vec<Vec<u8>> =
            circuits.iter().map(|c| c.layers.iter().map(|l| l.index() as u8).collect()).collect();
        let mut order: Vec<usize> = (0..circuits.len()).collect();
        order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));

        let mut parent = vec![0u32];
        let mut layer = vec![u8::MAX];
        let mut ends = vec![0u32; circuits.len()];
        let mut path: Vec<u32> = vec![0];
        let mut prev: &[u8] = &[];
        for &ci in &order {
            let key = &keys[ci];
            let common = key.iter().zip(prev).take_while(|(a, b)| a == b).count();
            path.truncate(common + 1);
            for &l in &key[common..] {
                let id = parent.len() as u32;
                parent.push(*path.last().expect("root on path"));
                layer.push(l);
                path.push(id);
            }
            ends[ci] = *path.last().expect("root on path");
            prev = key;
        }
        let mut ends_at = vec![Vec::new(); parent.len()];
        for (ci, &n) in ends.iter().enumerate() {
            ends_at[n as usize].push(ci as u32);
        }
        let mut subtrees = Vec::new();
        let mut start = 1;
        for n in 2..parent.len() {
            if parent[n] == 0 {
                subtrees.push(start..n);
                start = n;
            }
        }
        if parent.len() > 1 {
            subtrees.push(start..parent.len());
        }
        Self { parent, layer, ends, ends_at, subtrees }
    }

    pub fn n_nodes(&self) -> usize {
        self.parent.len()
    }

    pub fn n_circuits(&self) -> usize {
        self.ends.len()
    }

    /// Final states of every node; node 0 holds `ρ`.
    fn forward(&self, c: &Compiled) -> Vec<Vec16> {
        let mut states = vec![[0.0; 16]; self.parent.len()];
        states[0] = c.rho;
        let rho = c.rho;
        let (_, rest) = states.split_at_mut(1);
        let mut chunks: Vec<(usize, &mut [Vec16])> = Vec::with_capacity(self.subtrees.len());
        let mut tail = rest;
        for r in &self.subtrees {
            let (head, t) = tail.split_at_mut(r.len());
            chunks.push((r.start, head));
            tail = t;
        }
        chunks.into_par_iter().for_each(|(start, chunk)| {
            for i in 0..chunk.len() {
                let node = start + i;
                let p = self.parent[node] as usize;
                let input = if p == 0 { rho } else { chunk[p - start] };
                chunk[i] = matvec(&c.layers[self.layer[node] as usize], &input);
            }
        });
        states
    }

    pub fn probabilities(&self, c: &Compiled) -> Vec<[f64; 4]> {
        let states = self.forward(c);
        self.ends
            .iter()
            .map(|&n| {
                let s = &states[n as usize];
                [dot(&c.effects[0], s), dot(&c.effects[1], s), dot(&c.effects[2], s), dot(&c.effects[3], s)]
            })
            .collect()
    }

    /// Evaluates `Σ_c term(c, p_c)` and, optionally, its gradient with respect to
    /// the compiled arrays. `term` returns the value and `∂/∂p` for one circuit.
    pub fn evaluate<F>(&self, c: &Compiled, term: F, want_grad: bool) -> (f64, Option<Compiled>)
    where
        F: Fn(usize, &[f64; 4]) -> (f64, [f64; 4]) + Sync,
    {
        let states = self.forward(c);
        let per_circuit: Vec<(f64, [f64; 4])> = self
            .ends
            .par_iter()
            .enumerate()
            .map(|(ci, &n)| {
                let s = &states[n as usize];
                let p = [dot(&c.effects[0], s), dot(&c.effects[1], s), dot(&c.effects[2], s), dot(&c.effects[3], s)];
                term(ci, &p)
            })
            .collect();
        let value = pairwise_sum(&per_circuit.iter().map(|t| t.0).collect::<Vec<_>>());
        if !want_grad {
            return (value, None);
        }

        let seed = |node: usize| -> Vec16 {
            let mut w = [0.0; 16];
            for &ci in &self.ends_at[node] {
                let dp = &per_circuit[ci as usize].1;
                for (a, e) in c.effects.iter().enumerate() {
                    if dp[a] != 0.0 {
                        for k in 0..16 {
                            w[k] += dp[a] * e[k];
                        }
                    }
                }
            }
            w
        };

        let partials: Vec<(Compiled, Vec16)> = self
            .subtrees
            .par_iter()
            .map(|r| {
                let mut grad = Compiled::zeros();
                let mut u: Vec<Vec16> = (r.start..r.end).map(seed).collect();
                let mut root_u = [0.0; 16];
                for node in (r.start..r.end).rev() {
                    let un = u[node - r.start];
                    let p = self.parent[node] as usize;
                    let l = self.layer[node] as usize;
                    outer_add(&mut grad.layers[l], &un, &states[p]);
                    if p == 0 {
                        matvec_t_add(&c.layers[l], &un, &mut root_u);
                    } else {
                        matvec_t_add(&c.layers[l], &un, &mut u[p - r.start]);
                    }
                }
                (grad, root_u)
            })
            .collect();

        let mut grad = Compiled::zeros();
        let mut root_u = seed(0);
        for (g, ru) in &partials {
            grad.add_assign(g);
            for k in 0..16 {
                root_u[k] += ru[k];
            }
        }
        grad.rho = root_u;
        for (ci, &n) in self.ends.iter().enumerate() {
            let dp = &per_circuit[ci].1;
            let s = &states[n as usize];
            for a in 0..4 {
                if dp[a] != 0.0 {
                    for k in 0..16 {
                        grad.effects[a][k] += dp[a] * s[k];
                    }
                }
            }
        }
        (value, Some(grad))
    }
}

/// Order-independent summation with bounded rounding growth.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::{build_gst_design, Circuit};
    use crate::models::{GateSetModel, Init, ModelFamily};
    use crate::superop::compose_all;

    fn direct(m: &GateSetModel, c: &Circuit) -> [f64; 4] {
        let chans: Vec<_> = c.layers.iter().map(|&l| m.layer_channel(l)).collect();
        let g = compose_all(16, chans.iter()).unwrap();
        let s = g.apply(&m.rho()).unwrap();
        let p = m.povm().probabilities(&s);
        [p[0], p[1], p[2], p[3]]
    }

    #[test]
    fn trie_matches_direct_products() {
        let design = build_gst_design(2).unwrap();
        let m = GateSetModel::instantiate(ModelFamily::General, Init::Perturbed { seed: 9, scale: 0.01 });
        let trie = CircuitTrie::new(&design.circuits);
        assert!(trie.n_nodes() < design.circuits.iter().map(Circuit::depth).sum::<usize>());
        let probs = trie.probabilities(m.compiled());
        for (c, p) in design.circuits.iter().zip(&probs).step_by(13) {
            let q = direct(&m, c);
            for a in 0..4 {
                assert!((p[a] - q[a]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn repeated_and_empty_circuits() {
        let cs: Vec<Circuit> = ["", "[Gxpi2:0]", "[Gxpi2:0]", "[Gxpi2:0][Gxpi2:0]"]
            .iter()
            .map(|s| Circuit::parse(s).unwrap())
            .collect();
        let trie = CircuitTrie::new(&cs);
        assert_eq!(trie.n_nodes(), 3);
        let m = GateSetModel::ideal(ModelFamily::CrosstalkFree);
        let p = trie.probabilities(m.compiled());
        assert!((p[0][0] - 1.0).abs() < 1e-15);
        assert!((p[1][0] - 0.5).abs() < 1e-15 && (p[1][2] - 0.5).abs() < 1e-15);
        assert_eq!(p[1], p[2]);
        assert!((p[3][2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let design = build_gst_design(2).unwrap();
        let circuits: Vec<Circuit> = design.circuits.into_iter().step_by(7).collect();
        let trie = CircuitTrie::new(&circuits);
        let weights: Vec<[f64; 4]> =
            (0..circuits.len()).map(|i| [(i % 5) as f64, 1.0, (i % 3) as f64 * 0.5, 2.0]).collect();
        // smooth nonlinear term: Σ w_a p_a²
        let term = |ci: usize, p: &[f64; 4]| {
            let w = &weights[ci];
            let v = (0..4).map(|a| w[a] * p[a] * p[a]).sum();
            (v, [2.0 * w[0] * p[0], 2.0 * w[1] * p[1], 2.0 * w[2] * p[2], 2.0 * w[3] * p[3]])
        };
        for family in ModelFamily::ALL {
            let m = GateSetModel::instantiate(family, Init::Perturbed { seed: 21, scale: 0.03 });
            let (_, g) = trie.evaluate(m.compiled(), term, true);
            let mut grad = vec![0.0; family.n_params()];
            m.pullback(&g.unwrap(), &mut grad);
            for idx in (0..family.n_params()).step_by(11) {
                let h = 1e-6;
                let mut tp = m.theta().to_vec();
                tp[idx] += h;
                let mut tm = m.theta().to_vec();
                tm[idx] -= h;
                let fp = trie.evaluate(m.with_theta(tp).unwrap().compiled(), term, false).0;
                let fm = trie.evaluate(m.with_theta(tm).unwrap().compiled(), term, false).0;
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - grad[idx]).abs() <= 1e-5 * (1.0 + fd.abs()), "{family} {idx}: {fd} vs {}", grad[idx]);
            }
        }
    }
}
