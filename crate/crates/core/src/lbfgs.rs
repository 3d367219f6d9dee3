//! Limited-memory BFGS with a bisection line search for the weak Wolfe
//! conditions, which stays usable on objectives that are only piecewise
//! smooth.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsParams {
    pub memory: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// No step satisfying the Wolfe conditions was found.
    LineSearchFailed,
    /// The objective was undefined at the starting point.
    InvalidStart,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two-loop recursion: returns `-H g`.
fn search_direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

/// Minimizes `f`, which returns the value and gradient or `None` where the
/// objective is undefined (treated as an infinitely bad point).
pub fn minimize<F>(mut f: F, x0: &[f64], params: &LbfgsParams) -> LbfgsResult
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    let Some((mut fx, mut g)) = f(&x) else {
        return LbfgsResult {
            x,
            value: f64::NAN,
            iterations: 0,
            termination: Termination::InvalidStart,
        };
    };
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(params.memory);

    for iter in 0..params.max_iterations {
        if norm(&g) < params.gradient_tolerance {
            return LbfgsResult {
                x,
                value: fx,
                iterations: iter,
                termination: Termination::GradientTolerance,
            };
        }
        let mut d = search_direction(&g, &history);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut lo = 0.0;
        let mut hi = f64::INFINITY;
        let mut t = if history.is_empty() { 1.0 / norm(&g).max(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..params.max_line_search {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            match f(&xt) {
                Some((ft, gt)) if ft <= fx + params.c1 * t * slope => {
                    if dot(&gt, &d) < params.c2 * slope {
                        lo = t;
                    } else {
                        accepted = Some((xt, ft, gt));
                        break;
                    }
                }
                _ => hi = t,
            }
            t = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo.max(t) };
        }
        let Some((xn, fn_, gn)) = accepted else {
            return LbfgsResult {
                x,
                value: fx,
                iterations: iter,
                termination: Termination::LineSearchFailed,
            };
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * norm(&s) * norm(&y) {
            if history.len() == params.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    LbfgsResult {
        x,
        value: fx,
        iterations: params.max_iterations,
        termination: Termination::MaxIterations,
    }
}
