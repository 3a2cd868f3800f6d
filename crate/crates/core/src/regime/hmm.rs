//! Two-state Gaussian hidden Markov model fitted by Baum–Welch on pooled
//! player sequences that share one parameter set.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moran::TransitionMatrix2;
use crate::numerics::stream_rng;
use crate::panel::State;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub n_starts: usize,
    /// Report transitions counted along Viterbi paths instead of the EM matrix.
    pub viterbi_transitions: bool,
    pub sigma_floor: f64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
            seed: 0,
            n_starts: 5,
            viterbi_transitions: false,
            sigma_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionSource {
    Em,
    ViterbiCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmFit {
    pub mu_l: f64,
    pub mu_h: f64,
    pub sigma_l: f64,
    pub sigma_h: f64,
    pub trans: TransitionMatrix2,
    pub transition_source: TransitionSource,
    /// EM transition matrix, whichever matrix `trans` reports.
    pub em_trans: TransitionMatrix2,
    pub initial: [f64; 2],
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Emission means closer than 0.3: the two states are not separated.
    pub collapsed: bool,
    pub viterbi_paths: Vec<Vec<State>>,
    /// Posterior probability of High, averaged across players, by position.
    pub high_share_by_round: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Params {
    pi: [f64; 2],
    a: [[f64; 2]; 2],
    mu: [f64; 2],
    sigma: [f64; 2],
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

fn log_density(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

struct Accum {
    loglik: f64,
    pi: [f64; 2],
    trans: [[f64; 2]; 2],
    w: [f64; 2],
    wx: [f64; 2],
    wxx: [f64; 2],
}

impl Accum {
    fn new() -> Self {
        Self {
            loglik: 0.0,
            pi: [0.0; 2],
            trans: [[0.0; 2]; 2],
            w: [0.0; 2],
            wx: [0.0; 2],
            wxx: [0.0; 2],
        }
    }
}

/// Scaled forward–backward over one sequence; returns posteriors γ.
fn forward_backward(x: &[f64], p: &Params, acc: &mut Accum) -> Vec<[f64; 2]> {
    let t_len = x.len();
    let dens: Vec<[f64; 2]> = x
        .iter()
        .map(|&v| {
            let l0 = log_density(v, p.mu[0], p.sigma[0]);
            let l1 = log_density(v, p.mu[1], p.sigma[1]);
            [l0, l1]
        })
        .collect();
    // per-step max shift keeps exp() in range; it is added back to the log-likelihood
    let shift: Vec<f64> = dens.iter().map(|d| d[0].max(d[1])).collect();
    let e: Vec<[f64; 2]> = dens
        .iter()
        .zip(&shift)
        .map(|(d, s)| [(d[0] - s).exp(), (d[1] - s).exp()])
        .collect();

    let mut alpha = vec![[0.0; 2]; t_len];
    let mut scale = vec![0.0; t_len];
    for s in 0..2 {
        alpha[0][s] = p.pi[s] * e[0][s];
    }
    scale[0] = alpha[0][0] + alpha[0][1];
    alpha[0][0] /= scale[0];
    alpha[0][1] /= scale[0];
    for t in 1..t_len {
        for s in 0..2 {
            alpha[t][s] = (alpha[t - 1][0] * p.a[0][s] + alpha[t - 1][1] * p.a[1][s]) * e[t][s];
        }
        scale[t] = alpha[t][0] + alpha[t][1];
        alpha[t][0] /= scale[t];
        alpha[t][1] /= scale[t];
    }
    let mut beta = vec![[1.0; 2]; t_len];
    for t in (0..t_len - 1).rev() {
        for r in 0..2 {
            beta[t][r] = (p.a[r][0] * e[t + 1][0] * beta[t + 1][0]
                + p.a[r][1] * e[t + 1][1] * beta[t + 1][1])
                / scale[t + 1];
        }
    }
    let gamma: Vec<[f64; 2]> = (0..t_len)
        .map(|t| {
            let g0 = alpha[t][0] * beta[t][0];
            let g1 = alpha[t][1] * beta[t][1];
            let z = g0 + g1;
            [g0 / z, g1 / z]
        })
        .collect();

    acc.loglik += scale.iter().map(|s| s.ln()).sum::<f64>() + shift.iter().sum::<f64>();
    for s in 0..2 {
        acc.pi[s] += gamma[0][s];
    }
    for t in 0..t_len - 1 {
        let mut xi = [[0.0; 2]; 2];
        let mut z = 0.0;
        for r in 0..2 {
            for s in 0..2 {
                xi[r][s] = alpha[t][r] * p.a[r][s] * e[t + 1][s] * beta[t + 1][s];
                z += xi[r][s];
            }
        }
        for r in 0..2 {
            for s in 0..2 {
                acc.trans[r][s] += xi[r][s] / z;
            }
        }
    }
    for (t, g) in gamma.iter().enumerate() {
        for s in 0..2 {
            acc.w[s] += g[s];
            acc.wx[s] += g[s] * x[t];
            acc.wxx[s] += g[s] * x[t] * x[t];
        }
    }
    gamma
}

fn e_step(paths: &[Vec<f64>], p: &Params) -> Accum {
    let mut acc = Accum::new();
    for x in paths {
        forward_backward(x, p, &mut acc);
    }
    acc
}

fn m_step(acc: &Accum, floor: f64) -> Result<Params> {
    let n_seq = acc.pi[0] + acc.pi[1];
    let mut a = [[0.0; 2]; 2];
    for r in 0..2 {
        let row = acc.trans[r][0] + acc.trans[r][1];
        for s in 0..2 {
            a[r][s] = if row > 0.0 { acc.trans[r][s] / row } else { if r == s { 1.0 } else { 0.0 } };
        }
    }
    let mut mu = [0.0; 2];
    let mut sigma = [0.0; 2];
    for s in 0..2 {
        if acc.w[s] <= 1e-12 {
            return Err(Error::DegenerateEmission(0.0));
        }
        mu[s] = acc.wx[s] / acc.w[s];
        let var = (acc.wxx[s] / acc.w[s] - mu[s] * mu[s]).max(0.0);
        sigma[s] = var.sqrt();
        if sigma[s] < floor {
            return Err(Error::DegenerateEmission(sigma[s]));
        }
    }
    Ok(Params {
        pi: [acc.pi[0] / n_seq, acc.pi[1] / n_seq],
        a,
        mu,
        sigma,
    })
}

/// Lloyd's 2-means on pooled observations, started from the extremes.
fn two_means(xs: &[f64]) -> ([f64; 2], [f64; 2]) {
    let mut c = [
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    ];
    for _ in 0..100 {
        let mut sum = [0.0; 2];
        let mut n = [0usize; 2];
        for &x in xs {
            let k = ((x - c[0]).abs() > (x - c[1]).abs()) as usize;
            sum[k] += x;
            n[k] += 1;
        }
        let next = [
            if n[0] > 0 { sum[0] / n[0] as f64 } else { c[0] },
            if n[1] > 0 { sum[1] / n[1] as f64 } else { c[1] },
        ];
        if next == c {
            break;
        }
        c = next;
    }
    let mut ss = [0.0; 2];
    let mut n = [0usize; 2];
    for &x in xs {
        let k = ((x - c[0]).abs() > (x - c[1]).abs()) as usize;
        ss[k] += (x - c[k]).powi(2);
        n[k] += 1;
    }
    let sd = [
        if n[0] > 1 { (ss[0] / n[0] as f64).sqrt() } else { 1.0 },
        if n[1] > 1 { (ss[1] / n[1] as f64).sqrt() } else { 1.0 },
    ];
    (c, sd)
}

struct Run {
    params: Params,
    trace: Vec<f64>,
    converged: bool,
}

fn run_em(paths: &[Vec<f64>], init: Params, cfg: &HmmConfig) -> Result<Run> {
    let mut p = init;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let acc = e_step(paths, &p);
        let ll = acc.loglik;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (ll - prev).abs() <= cfg.tol * (1.0 + prev.abs()) {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        p = m_step(&acc, cfg.sigma_floor)?;
    }
    Ok(Run {
        params: p,
        trace,
        converged,
    })
}

fn viterbi(x: &[f64], p: &Params) -> Vec<usize> {
    let la = [[p.a[0][0].ln(), p.a[0][1].ln()], [p.a[1][0].ln(), p.a[1][1].ln()]];
    let mut delta = [
        p.pi[0].ln() + log_density(x[0], p.mu[0], p.sigma[0]),
        p.pi[1].ln() + log_density(x[0], p.mu[1], p.sigma[1]),
    ];
    let mut back = vec![[0usize; 2]; x.len()];
    for t in 1..x.len() {
        let mut next = [0.0; 2];
        for s in 0..2 {
            let from0 = delta[0] + la[0][s];
            let from1 = delta[1] + la[1][s];
            let (best, arg) = if from1 > from0 { (from1, 1) } else { (from0, 0) };
            next[s] = best + log_density(x[t], p.mu[s], p.sigma[s]);
            back[t][s] = arg;
        }
        delta = next;
    }
    let mut path = vec![0; x.len()];
    path[x.len() - 1] = (delta[1] > delta[0]) as usize;
    for t in (1..x.len()).rev() {
        path[t - 1] = back[t][path[t]];
    }
    path
}

pub fn fit_hmm2(paths: &[Vec<f64>], cfg: &HmmConfig) -> Result<HmmFit> {
    if paths.len() < 2 {
        return Err(Error::TooFewPlayers {
            needed: 2,
            found: paths.len(),
        });
    }
    if paths.iter().any(|p| p.len() < 2) {
        return Err(Error::TooFewRounds {
            needed: 2,
            found: paths.iter().map(Vec::len).min().unwrap_or(0),
        });
    }
    if paths.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParams("observations must be finite".into()));
    }
    let pooled: Vec<f64> = paths.iter().flatten().copied().collect();
    let (centers, sds) = two_means(&pooled);
    let spread = (centers[1] - centers[0]).abs().max(1e-6);
    let base = Params {
        pi: [0.5, 0.5],
        a: [[0.9, 0.1], [0.1, 0.9]],
        mu: centers,
        sigma: [sds[0].max(cfg.sigma_floor * 10.0), sds[1].max(cfg.sigma_floor * 10.0)],
    };
    let starts: Vec<Params> = (0..cfg.n_starts.max(1))
        .map(|s| {
            if s == 0 {
                return base;
            }
            let mut rng = stream_rng(cfg.seed, s as u64);
            let mut p = base;
            for m in p.mu.iter_mut() {
                *m += rng.random_range(-0.25..0.25) * spread;
            }
            let stay = [rng.random_range(0.6..0.98), rng.random_range(0.6..0.98)];
            p.a = [[stay[0], 1.0 - stay[0]], [1.0 - stay[1], stay[1]]];
            p
        })
        .collect();
    let runs: Vec<Result<Run>> = starts.par_iter().map(|&s| run_em(paths, s, cfg)).collect();
    let mut best: Option<Run> = None;
    let mut first_err = None;
    for r in runs {
        match r {
            Ok(run) => {
                let ll = *run.trace.last().unwrap_or(&f64::NEG_INFINITY);
                let better = best
                    .as_ref()
                    .is_none_or(|b| ll > *b.trace.last().unwrap_or(&f64::NEG_INFINITY));
                if better {
                    best = Some(run);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let run = match best {
        Some(r) => r,
        None => return Err(first_err.expect("at least one start")),
    };

    // sort states so that index 0 is Low
    let mut p = run.params;
    if p.mu[0] > p.mu[1] {
        p = Params {
            pi: [p.pi[1], p.pi[0]],
            a: [[p.a[1][1], p.a[1][0]], [p.a[0][1], p.a[0][0]]],
            mu: [p.mu[1], p.mu[0]],
            sigma: [p.sigma[1], p.sigma[0]],
        };
    }

    let mut acc = Accum::new();
    let max_len = paths.iter().map(Vec::len).max().unwrap_or(0);
    let mut high = vec![0.0; max_len];
    let mut at = vec![0usize; max_len];
    for x in paths {
        let g = forward_backward(x, &p, &mut acc);
        for (t, gt) in g.iter().enumerate() {
            high[t] += gt[1];
            at[t] += 1;
        }
    }
    let loglik = acc.loglik;
    let decoded: Vec<Vec<usize>> = paths.iter().map(|x| viterbi(x, &p)).collect();
    let em_trans = TransitionMatrix2 { p: p.a };
    let (trans, source) = if cfg.viterbi_transitions {
        let mut counts = [[0u64; 2]; 2];
        for path in &decoded {
            for w in path.windows(2) {
                counts[w[0]][w[1]] += 1;
            }
        }
        (TransitionMatrix2::from_counts(counts), TransitionSource::ViterbiCounts)
    } else {
        (em_trans, TransitionSource::Em)
    };

    let iterations = run.trace.len();
    Ok(HmmFit {
        mu_l: p.mu[0],
        mu_h: p.mu[1],
        sigma_l: p.sigma[0],
        sigma_h: p.sigma[1],
        trans,
        transition_source: source,
        em_trans,
        initial: p.pi,
        loglik,
        loglik_trace: run.trace,
        iterations,
        converged: run.converged,
        collapsed: (p.mu[1] - p.mu[0]).abs() < 0.3,
        viterbi_paths: decoded
            .into_iter()
            .map(|v| v.into_iter().map(|s| if s == 1 { State::H } else { State::L }).collect())
            .collect(),
        high_share_by_round: high.iter().zip(&at).map(|(h, n)| h / *n as f64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn simulate_chain(
        n: usize,
        len: usize,
        mu: [f64; 2],
        sd: f64,
        stay: [f64; 2],
        seed: u64,
    ) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, 0);
        let noise = Normal::new(0.0, sd).unwrap();
        (0..n)
            .map(|_| {
                let mut s = rng.random_bool(0.5) as usize;
                (0..len)
                    .map(|t| {
                        if t > 0 && !rng.random_bool(stay[s]) {
                            s = 1 - s;
                        }
                        mu[s] + noise.sample(&mut rng)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn recovers_planted_chain_with_monotone_em() {
        let paths = simulate_chain(600, 10, [2.0, 10.0], 1.0, [0.9, 0.85], 17);
        let fit = fit_hmm2(&paths, &HmmConfig { n_starts: 2, ..HmmConfig::default() }).unwrap();
        assert!((fit.mu_l - 2.0).abs() < 0.2 && (fit.mu_h - 10.0).abs() < 0.2);
        assert!((fit.trans.p_ll() - 0.9).abs() < 0.05);
        assert!((fit.trans.p_hh() - 0.85).abs() < 0.05);
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs());
        }
        assert!(!fit.collapsed);
        assert_eq!(fit.viterbi_paths.len(), 600);
    }

    #[test]
    fn viterbi_counting_is_labelled() {
        let paths = simulate_chain(200, 10, [2.0, 10.0], 1.0, [0.9, 0.9], 5);
        let cfg = HmmConfig {
            viterbi_transitions: true,
            n_starts: 1,
            ..HmmConfig::default()
        };
        let fit = fit_hmm2(&paths, &cfg).unwrap();
        assert_eq!(fit.transition_source, TransitionSource::ViterbiCounts);
        assert!(fit.trans.is_row_stochastic(1e-12));
    }

    #[test]
    fn single_state_data_is_flagged_or_rejected() {
        let mut rng = stream_rng(3, 0);
        let noise = Normal::new(6.0, 1.0).unwrap();
        let paths: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..10).map(|_| noise.sample(&mut rng)).collect())
            .collect();
        match fit_hmm2(&paths, &HmmConfig { n_starts: 2, ..HmmConfig::default() }) {
            Err(Error::DegenerateEmission(_)) => {}
            Ok(fit) => {
                // two overlapping halves of one Gaussian: the emission SDs
                // overlap the gap between the means
                assert!(fit.collapsed || (fit.mu_h - fit.mu_l) < 2.0 * (fit.sigma_l + fit.sigma_h));
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn constant_observations_breach_the_floor() {
        let paths = vec![vec![3.0; 10], vec![3.0; 10], vec![9.0; 10]];
        assert!(matches!(
            fit_hmm2(&paths, &HmmConfig::default()),
            Err(Error::DegenerateEmission(_))
        ));
    }

    #[test]
    fn input_checks() {
        assert!(fit_hmm2(&[vec![1.0, 2.0]], &HmmConfig::default()).is_err());
        assert!(fit_hmm2(&[vec![1.0], vec![2.0, 3.0]], &HmmConfig::default()).is_err());
    }
}
