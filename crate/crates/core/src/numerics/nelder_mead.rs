//! Box-constrained Nelder–Mead simplex search.
//!
//! Vertices are projected onto the box after every reflection, expansion and
//! contraction, so the objective is only ever evaluated at feasible points.

#[derive(Debug, Clone)]
pub struct NelderMeadConfig {
    /// Stop once the largest vertex distance from the best vertex drops below this.
    pub diameter_tol: f64,
    pub max_iter: usize,
    /// Initial simplex edge length per coordinate.
    pub initial_step: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl NelderMeadConfig {
    pub fn unbounded(dim: usize, step: f64) -> Self {
        Self {
            diameter_tol: 1e-8,
            max_iter: 1000,
            initial_step: vec![step; dim],
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn diameter(simplex: &[(Vec<f64>, f64)]) -> f64 {
    let best = &simplex[0].0;
    simplex[1..]
        .iter()
        .map(|(x, _)| {
            x.iter()
                .zip(best)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

pub fn minimize<F>(mut f: F, start: &[f64], cfg: &NelderMeadConfig) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = start.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut x0 = start.to_vec();
    project(&mut x0, &cfg.lower, &cfg.upper);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(&x0, &mut evals);
    simplex.push((x0.clone(), v0));
    for j in 0..dim {
        let mut x = x0.clone();
        x[j] += cfg.initial_step[j];
        project(&mut x, &cfg.lower, &cfg.upper);
        if (x[j] - x0[j]).abs() < 1e-15 {
            // pinned at the upper bound: step inward instead
            x[j] = x0[j] - cfg.initial_step[j];
            project(&mut x, &cfg.lower, &cfg.upper);
        }
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if diameter(&simplex) < cfg.diameter_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let worst = simplex[dim].clone();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut p, &cfg.lower, &cfg.upper);
            p
        };

        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = eval(&xe, &mut evals);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < worst.1.min(fr) {
            simplex[dim] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = best
                .iter()
                .zip(&entry.0)
                .map(|(b, v)| b + sigma * (v - b))
                .collect();
            project(&mut x, &cfg.lower, &cfg.upper);
            let v = eval(&x, &mut evals);
            *entry = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        iterations,
        evaluations: evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let mut cfg = NelderMeadConfig::unbounded(2, 0.5);
        cfg.max_iter = 5000;
        cfg.diameter_tol = 1e-10;
        let m = minimize(f, &[-1.2, 1.0], &cfg);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn respects_box() {
        let f = |x: &[f64]| (x[0] + 3.0).powi(2) + (x[1] - 2.0).powi(2);
        let mut cfg = NelderMeadConfig::unbounded(2, 0.3);
        cfg.lower = vec![0.0, 0.0];
        cfg.upper = vec![5.0, 1.5];
        let m = minimize(f, &[1.0, 1.0], &cfg);
        assert!(m.x[0].abs() < 1e-6);
        assert!((m.x[1] - 1.5).abs() < 1e-6);
    }
}
