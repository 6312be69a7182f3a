//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the largest gradient component falls below this.
    pub grad_tol: f64,
    /// Stop when the objective improves by less than `f_tol · max(|f|, 1)` over
    /// `patience` consecutive iterations.
    pub f_tol: f64,
    pub patience: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { memory: 20, max_iter: 2000, grad_tol: 1e-6, f_tol: 1e-12, patience: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub message: String,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

struct Counter<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Counter<F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evals += 1;
        g.iter_mut().for_each(|v| *v = 0.0);
        (self.f)(x, g)
    }
}

/// Minimizes `f`, which writes its gradient into the second argument.
pub fn lbfgs<F>(f: F, x0: &[f64], cfg: &LbfgsConfig) -> OptOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut fun = Counter { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = fun.eval(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut stall = 0;
    let mut message = String::from("iteration limit reached");
    let mut converged = false;
    let mut iterations = 0;

    if !fx.is_finite() {
        return OptOutcome {
            grad_norm: inf_norm(&g),
            x,
            f: fx,
            iterations: 0,
            evaluations: fun.evals,
            converged: false,
            message: "objective is not finite at the starting point".into(),
        };
    }

    while iterations < cfg.max_iter {
        if inf_norm(&g) <= cfg.grad_tol {
            converged = true;
            message = "gradient tolerance reached".into();
            break;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut dg = dot(&d, &g);
        if !(dg < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            dg = dot(&d, &g);
        }
        let init = if history.is_empty() { (1.0 / inf_norm(&g).max(1e-300)).min(1.0) } else { 1.0 };

        let Some((step, fnew, gnew)) = line_search(&mut fun, &x, fx, &d, dg, init) else {
            if history.is_empty() {
                message = "line search failed along steepest descent".into();
                break;
            }
            history.clear();
            continue;
        };
        iterations += 1;
        let s: Vec<f64> = d.iter().map(|v| v * step).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let decrease = fx - fnew;
        fx = fnew;
        g = gnew;
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        if decrease <= cfg.f_tol * fx.abs().max(1.0) {
            stall += 1;
            if stall >= cfg.patience {
                converged = true;
                message = "objective stopped improving".into();
                break;
            }
        } else {
            stall = 0;
        }
    }
    OptOutcome { grad_norm: inf_norm(&g), x, f: fx, iterations, evaluations: fun.evals, converged, message }
}

type Probe = (f64, f64, f64, Vec<f64>);

/// Strong-Wolfe line search (bracketing followed by zoom with cubic interpolation).
fn line_search<F>(
    fun: &mut Counter<F>,
    x: &[f64],
    f0: f64,
    d: &[f64],
    dg0: f64,
    init: f64,
) -> Option<(f64, f64, Vec<f64>)>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let n = x.len();
    let mut probe = |a: f64, fun: &mut Counter<F>| -> Probe {
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + a * di).collect();
        let mut gt = vec![0.0; n];
        let ft = fun.eval(&xt, &mut gt);
        let dgt = dot(&gt, d);
        (a, ft, dgt, gt)
    };
    let mut prev: Probe = (0.0, f0, dg0, Vec::new());
    let mut a = init;
    for i in 0..30 {
        let cur = probe(a, fun);
        if !cur.1.is_finite() {
            a = 0.5 * (prev.0 + a);
            continue;
        }
        if cur.1 > f0 + C1 * a * dg0 || (i > 0 && cur.1 >= prev.1) {
            return zoom(fun, &mut probe, prev, cur, f0, dg0);
        }
        if cur.2.abs() <= -C2 * dg0 {
            return Some((cur.0, cur.1, cur.3));
        }
        if cur.2 >= 0.0 {
            return zoom(fun, &mut probe, cur, prev, f0, dg0);
        }
        prev = cur;
        a *= 2.5;
    }
    None
}

fn cubic_min(a: &Probe, b: &Probe) -> Option<f64> {
    let (x0, f0, g0) = (a.0, a.1, a.2);
    let (x1, f1, g1) = (b.0, b.1, b.2);
    let d1 = g0 + g1 - 3.0 * (f0 - f1) / (x0 - x1);
    let disc = d1 * d1 - g0 * g1;
    if disc < 0.0 {
        return None;
    }
    let d2 = disc.sqrt() * (x1 - x0).signum();
    let t = x1 - (x1 - x0) * (g1 + d2 - d1) / (g1 - g0 + 2.0 * d2);
    t.is_finite().then_some(t)
}

fn zoom<F, P>(fun: &mut Counter<F>, probe: &mut P, mut lo: Probe, mut hi: Probe, f0: f64, dg0: f64) -> Option<(f64, f64, Vec<f64>)>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    P: FnMut(f64, &mut Counter<F>) -> Probe,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    for _ in 0..40 {
        let (a_min, a_max) = if lo.0 < hi.0 { (lo.0, hi.0) } else { (hi.0, lo.0) };
        let width = a_max - a_min;
        let mut a = cubic_min(&lo, &hi).unwrap_or(0.5 * (lo.0 + hi.0));
        if !(a > a_min + 0.1 * width && a < a_max - 0.1 * width) {
            a = 0.5 * (lo.0 + hi.0);
        }
        let cur = probe(a, fun);
        if !cur.1.is_finite() || cur.1 > f0 + C1 * a * dg0 || cur.1 >= lo.1 {
            hi = cur;
        } else {
            if cur.2.abs() <= -C2 * dg0 {
                return Some((cur.0, cur.1, cur.3));
            }
            if cur.2 * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
        if (hi.0 - lo.0).abs() < 1e-16 * lo.0.abs().max(1e-300) {
            break;
        }
    }
    // accept the best sufficient-decrease point found, if any
    if lo.0 > 0.0 && lo.1 < f0 {
        let gl = if lo.3.is_empty() { None } else { Some(lo.3) };
        return gl.map(|g| (lo.0, lo.1, g));
    }
    None
}
