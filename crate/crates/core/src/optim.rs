//! Small unconstrained minimizers: Adam for the relaxed integer search and
//! L-BFGS with a backtracking line search for timing refinement.

use std::collections::VecDeque;

/// Objective returning `f(x)` and writing `∇f(x)` into the second argument.
pub trait Objective {
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Objective for F {
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        self(x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamOptions {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iterations: usize,
    /// Box constraint |x_i| ≤ clip applied after every step.
    pub clip: f64,
}

impl Default for AdamOptions {
    fn default() -> Self {
        Self { lr: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8, iterations: 2000, clip: f64::INFINITY }
    }
}

/// Minimize with Adam; returns the best point seen and its value.
pub fn adam<O: Objective>(obj: &mut O, x0: &[f64], opts: &AdamOptions) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut best = (x.clone(), f64::INFINITY);
    for it in 1..=opts.iterations {
        let f = obj.eval(&x, &mut g);
        if f < best.1 {
            best = (x.clone(), f);
        }
        let c1 = 1.0 - opts.beta1.powi(it as i32);
        let c2 = 1.0 - opts.beta2.powi(it as i32);
        for i in 0..n {
            m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * g[i];
            v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * g[i] * g[i];
            x[i] -= opts.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + opts.eps);
            x[i] = x[i].clamp(-opts.clip, opts.clip);
        }
    }
    let f = obj.eval(&x, &mut g);
    if f < best.1 {
        best = (x, f);
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when an iteration improves f by less than this.
    pub ftol: f64,
    pub gtol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, memory: 10, ftol: 1e-14, gtol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS with Armijo backtracking. Never returns a point worse than `x0`.
pub fn lbfgs<O: Objective>(obj: &mut O, x0: &[f64], opts: &LbfgsOptions) -> LbfgsResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, &mut g);
    let mut evals = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if !(gnorm > opts.gtol) || !f.is_finite() {
            break;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        let gamma = hist.back().map_or(1.0 / gnorm, |(s, y, _)| dot(s, y) / dot(y, y));
        d.iter_mut().for_each(|di| *di *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            hist.clear();
            d = g.iter().map(|v| -v / gnorm).collect();
            slope = -gnorm;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            let f_new = obj.eval(&x_new, &mut g_new);
            evals += 1;
            if f_new.is_finite() && f_new <= f + 1e-4 * step * slope {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-300 {
                    if hist.len() == opts.memory {
                        hist.pop_front();
                    }
                    hist.push_back((s, y, 1.0 / sy));
                }
                let improvement = f - f_new;
                x.copy_from_slice(&x_new);
                g.copy_from_slice(&g_new);
                f = f_new;
                accepted = true;
                iterations += 1;
                if improvement < opts.ftol {
                    return LbfgsResult { x, f, iterations, evaluations: evals };
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if hist.is_empty() {
                break;
            }
            hist.clear();
        }
    }
    LbfgsResult { x, f, iterations, evaluations: evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let mut f = rosenbrock;
        let r = lbfgs(&mut f, &[-1.2, 1.0], &LbfgsOptions { max_iter: 1000, ftol: 0.0, ..Default::default() });
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r);
    }

    #[test]
    fn lbfgs_never_worse() {
        let mut f = |x: &[f64], g: &mut [f64]| {
            g[0] = (10.0 * x[0]).cos() * 10.0 + 0.2 * x[0];
            (10.0 * x[0]).sin() + 0.1 * x[0] * x[0]
        };
        let mut g = [0.0];
        let start = f(&[0.3], &mut g);
        let r = lbfgs(&mut f, &[0.3], &LbfgsOptions::default());
        assert!(r.f <= start);
    }

    #[test]
    fn adam_quadratic_with_clip() {
        let mut f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            g[1] = 2.0 * (x[1] + 0.5);
            (x[0] - 3.0).powi(2) + (x[1] + 0.5).powi(2)
        };
        let (x, fx) = adam(&mut f, &[0.0, 0.0], &AdamOptions { iterations: 3000, clip: 2.0, ..Default::default() });
        assert!((x[0] - 2.0).abs() < 1e-9);
        assert!((x[1] + 0.5).abs() < 1e-3);
        assert!((fx - 1.0).abs() < 1e-3);
    }
}
