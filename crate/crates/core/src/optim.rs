//! Box-constrained minimizers: Levenberg–Marquardt on a Gauss–Newton model,
//! with Nelder–Mead as a derivative-free fallback.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub max_iter: usize,
    /// Scaled-gradient tolerance.
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `max_i |g_i|·max(|x_i|, 1) / max(f, 1)` at the returned point, with
    /// gradient components pushing into an active bound zeroed.
    pub scaled_gradient: f64,
}

/// Value, gradient and a positive semidefinite curvature model.
pub type Evaluated = (f64, DVector<f64>, DMatrix<f64>);

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((xi, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *xi = xi.clamp(*l, *h);
    }
}

/// Scaled projected gradient used as the convergence measure.
pub fn scaled_gradient(x: &[f64], f: f64, g: &DVector<f64>, lo: &[f64], hi: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let gi = g[i];
        let at_lo = x[i] <= lo[i] && gi > 0.0;
        let at_hi = x[i] >= hi[i] && gi < 0.0;
        if at_lo || at_hi {
            continue;
        }
        worst = worst.max(gi.abs() * x[i].abs().max(1.0));
    }
    worst / f.abs().max(1.0)
}

/// Levenberg–Marquardt with projection onto the box.
pub fn levenberg_marquardt(
    mut eval: impl FnMut(&[f64]) -> Result<Evaluated>,
    x0: &[f64],
    opts: &OptimOptions,
) -> Result<OptimResult> {
    let (lo, hi) = (&opts.lower, &opts.upper);
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut f, mut g, mut b) = eval(&x)?;
    let mut mu = 1e-3;
    let mut iterations = 0;
    let k = x.len();
    loop {
        let sg = scaled_gradient(&x, f, &g, lo, hi);
        if sg <= opts.tol {
            return Ok(OptimResult {
                x,
                value: f,
                iterations,
                converged: true,
                scaled_gradient: sg,
            });
        }
        if iterations >= opts.max_iter {
            return Ok(OptimResult {
                x,
                value: f,
                iterations,
                converged: false,
                scaled_gradient: sg,
            });
        }
        iterations += 1;
        let mut accepted = false;
        while mu < 1e16 {
            let mut m = b.clone();
            for i in 0..k {
                m[(i, i)] += mu * (b[(i, i)].abs() + 1e-12);
            }
            let step = match m.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match m.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        mu *= 10.0;
                        continue;
                    }
                },
            };
            let mut xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
            project(&mut xn, lo, hi);
            if xn == x {
                mu *= 10.0;
                continue;
            }
            match eval(&xn) {
                Ok((fn_, gn, bn)) if fn_.is_finite() && fn_ <= f => {
                    let progressed = fn_ < f;
                    x = xn;
                    f = fn_;
                    g = gn;
                    b = bn;
                    mu = (mu * 0.3).max(1e-12);
                    accepted = progressed;
                    break;
                }
                _ => mu *= 10.0,
            }
        }
        if !accepted {
            let sg = scaled_gradient(&x, f, &g, lo, hi);
            return Ok(OptimResult {
                x,
                value: f,
                iterations,
                converged: sg <= opts.tol,
                scaled_gradient: sg,
            });
        }
    }
}

/// Nelder–Mead on the box (vertices are projected). Returns the best vertex;
/// `converged` reports simplex collapse, not a gradient test.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &OptimOptions,
) -> (Vec<f64>, f64, usize, bool) {
    let k = x0.len();
    let (lo, hi) = (&opts.lower, &opts.upper);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    let mut start = x0.to_vec();
    project(&mut start, lo, hi);
    simplex.push(start.clone());
    for i in 0..k {
        let mut v = start.clone();
        let step = 0.05 * v[i].abs().max(0.1);
        v[i] = if v[i] + step <= hi[i] { v[i] + step } else { v[i] - step };
        project(&mut v, lo, hi);
        simplex.push(v);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|v| nan_high(f(v))).collect();
    let max_evals = opts.max_iter * 20 * (k + 1);
    let mut evals = k + 1;
    let mut converged = false;
    while evals < max_evals {
        let mut idx: Vec<usize> = (0..=k).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        let spread = (vals[k] - vals[0]).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)))
            .fold(0.0, f64::max);
        if spread <= 1e-15 * vals[0].abs().max(1e-300) || size < 1e-12 {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..k)
            .map(|j| simplex[..k].iter().map(|v| v[j]).sum::<f64>() / k as f64)
            .collect();
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[k])
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut p, lo, hi);
            p
        };
        let xr = along(1.0);
        let fr = nan_high(f(&xr));
        evals += 1;
        if fr < vals[0] {
            let xe = along(2.0);
            let fe = nan_high(f(&xe));
            evals += 1;
            if fe < fr {
                simplex[k] = xe;
                vals[k] = fe;
            } else {
                simplex[k] = xr;
                vals[k] = fr;
            }
        } else if fr < vals[k - 1] {
            simplex[k] = xr;
            vals[k] = fr;
        } else {
            let (xc, fc) = if fr < vals[k] {
                let p = along(0.5);
                let v = nan_high(f(&p));
                (p, v)
            } else {
                let p = along(-0.5);
                let v = nan_high(f(&p));
                (p, v)
            };
            evals += 1;
            if fc < vals[k].min(fr) {
                simplex[k] = xc;
                vals[k] = fc;
            } else {
                for i in 1..=k {
                    let best = simplex[0].clone();
                    for (a, b) in simplex[i].iter_mut().zip(&best) {
                        *a = b + 0.5 * (*a - b);
                    }
                    vals[i] = nan_high(f(&simplex[i]));
                    evals += 1;
                }
            }
        }
    }
    let best = (0..=k).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (simplex[best].clone(), vals[best], evals, converged)
}

fn nan_high(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosen(x: &[f64]) -> Evaluated {
        // Residuals r = (10(x1 − x0²), 1 − x0); f = r′r.
        let r = DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
        let j = DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]);
        let f = r.dot(&r);
        let g = j.transpose() * &r * 2.0;
        let b = j.transpose() * &j * 2.0;
        (f, g, b)
    }

    fn opts(lo: f64, hi: f64) -> OptimOptions {
        OptimOptions {
            lower: vec![lo; 2],
            upper: vec![hi; 2],
            max_iter: 500,
            tol: 1e-10,
        }
    }

    #[test]
    fn lm_solves_rosenbrock() {
        let r = levenberg_marquardt(|x| Ok(rosen(x)), &[-1.2, 1.0], &opts(-5.0, 5.0)).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn lm_respects_bounds() {
        let r = levenberg_marquardt(|x| Ok(rosen(x)), &[0.0, 0.0], &opts(-0.5, 0.5)).unwrap();
        assert!(r.x.iter().all(|v| v.abs() <= 0.5));
        assert!((r.x[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn nelder_mead_finds_minimum() {
        let (x, f, _, _) = nelder_mead(|x| rosen(x).0, &[-1.2, 1.0], &opts(-5.0, 5.0));
        assert!(f < 1e-10, "{f}");
        assert!((x[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn golden_section_quadratic() {
        let (x, _) = golden_section(|x| (x - 0.3).powi(2), -1.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
    }
}
