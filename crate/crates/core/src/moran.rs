//! Binary High/Low Moran birth–death process with Fermi selection, and the
//! utility-weighted weak-selection variant.
//!
//! A round is `events_per_round` birth–death events inside every interaction
//! unit. Units are fixed groups of `group_size` agents, or the whole
//! population when `group_size` is `None`. Setting `group_size = None` and
//! `events_per_round = population` gives one population-wide sweep per round.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::loo_block_mean;
use crate::error::{Error, Result};
use crate::numerics::stream_rng;
use crate::stage_game::{utility_unchecked, ModelParams, RoundContext, ENDOWMENT};

/// Row-stochastic 2×2 matrix, rows and columns ordered (L, H).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix2 {
    pub p: [[f64; 2]; 2],
}

impl TransitionMatrix2 {
    pub fn new(p: [[f64; 2]; 2]) -> Result<Self> {
        let m = Self { p };
        if m.is_row_stochastic(1e-9) {
            Ok(m)
        } else {
            Err(Error::NonStochasticTarget)
        }
    }

    pub fn identity() -> Self {
        Self {
            p: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    /// Normalizes counts by row; an empty row becomes the identity row.
    pub fn from_counts(counts: [[u64; 2]; 2]) -> Self {
        let mut p = [[0.0; 2]; 2];
        for r in 0..2 {
            let tot = counts[r][0] + counts[r][1];
            if tot == 0 {
                p[r][r] = 1.0;
            } else {
                p[r][0] = counts[r][0] as f64 / tot as f64;
                p[r][1] = 1.0 - p[r][0];
            }
        }
        Self { p }
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.p.iter().all(|row| {
            row.iter().all(|v| (0.0..=1.0).contains(v)) && (row[0] + row[1] - 1.0).abs() <= tol
        })
    }

    pub fn p_ll(&self) -> f64 {
        self.p[0][0]
    }
    pub fn p_lh(&self) -> f64 {
        self.p[0][1]
    }
    pub fn p_hl(&self) -> f64 {
        self.p[1][0]
    }
    pub fn p_hh(&self) -> f64 {
        self.p[1][1]
    }

    /// Squared Frobenius distance.
    pub fn rss(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                let d = self.p[r][c] - other.p[r][c];
                s += d * d;
            }
        }
        s
    }

    /// Swap the roles of L and H in rows and columns.
    pub fn relabeled(&self) -> Self {
        Self {
            p: [[self.p[1][1], self.p[1][0]], [self.p[0][1], self.p[0][0]]],
        }
    }
}

/// Long-run High share `p_LH / (p_LH + p_HL)` of the two-state chain.
pub fn stationary_share(m: &TransitionMatrix2) -> Result<f64> {
    let den = m.p_lh() + m.p_hl();
    if den <= 0.0 {
        return Err(Error::AbsorbingBothStates);
    }
    Ok(m.p_lh() / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FermiVariant {
    Multinomial,
    Pairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FermiParams {
    /// Fitness tilt toward High: `w = 1 + d·1{H}`.
    pub d_tilt: f64,
    /// Imitation intensity `k ≥ 0`.
    pub k_intensity: f64,
    pub population: usize,
    /// Interaction unit size; `None` means well mixed.
    pub group_size: Option<usize>,
    /// Birth–death events per unit per round.
    pub events_per_round: usize,
    pub rounds: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for FermiParams {
    fn default() -> Self {
        Self {
            d_tilt: 0.0,
            k_intensity: 0.0,
            population: 100,
            group_size: Some(5),
            events_per_round: 1,
            rounds: 9,
            replicates: 1000,
            seed: 0,
        }
    }
}

impl FermiParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.k_intensity >= 0.0) || !self.k_intensity.is_finite() {
            return bad("k_intensity must be finite and ≥ 0".into());
        }
        if !self.d_tilt.is_finite() {
            return bad("d_tilt must be finite".into());
        }
        if self.population < 2 {
            return bad("population must be ≥ 2".into());
        }
        if self.replicates < 1 {
            return bad("replicates must be ≥ 1".into());
        }
        if let Some(g) = self.group_size {
            if g < 2 || self.population % g != 0 {
                return bad(format!(
                    "group size {g} must be ≥ 2 and divide population {}",
                    self.population
                ));
            }
        }
        Ok(())
    }

    fn unit(&self) -> usize {
        self.group_size.unwrap_or(self.population)
    }
}

/// Simulated transition matrix plus the raw material behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FermiOutcome {
    pub matrix: TransitionMatrix2,
    /// Start-state → end-state agent counts pooled over replicates.
    pub counts: [[u64; 2]; 2],
    /// Rows with no agents starting in them (reported as identity rows).
    pub empty_rows: Vec<usize>,
    /// Mean High share after each round, entry 0 being the initial state.
    pub high_share: Vec<f64>,
}

struct RepTally {
    counts: [[u64; 2]; 2],
    high: Vec<u64>,
}

impl RepTally {
    fn new(rounds: usize) -> Self {
        Self {
            counts: [[0; 2]; 2],
            high: vec![0; rounds + 1],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for r in 0..2 {
            for c in 0..2 {
                self.counts[r][c] += other.counts[r][c];
            }
        }
        for (a, b) in self.high.iter_mut().zip(other.high) {
            *a += b;
        }
        self
    }

    fn finish(self, population: usize, replicates: usize) -> FermiOutcome {
        let matrix = TransitionMatrix2::from_counts(self.counts);
        let empty_rows = (0..2)
            .filter(|&r| self.counts[r][0] + self.counts[r][1] == 0)
            .collect();
        let denom = (population * replicates) as f64;
        FermiOutcome {
            matrix,
            counts: self.counts,
            empty_rows,
            high_share: self.high.iter().map(|&h| h as f64 / denom).collect(),
        }
    }
}

/// Index of the `k`-th member of `unit` whose state equals `want`.
fn kth_of_state(unit: &[bool], want: bool, k: usize) -> usize {
    unit.iter()
        .enumerate()
        .filter(|(_, s)| **s == want)
        .nth(k)
        .map(|(i, _)| i)
        .expect("k within type count")
}

/// One birth–death event inside `unit` (`true` = High).
/// `kd` is the product k·d, the only combination the update rules depend on.
fn fermi_event<R: Rng>(unit: &mut [bool], kd: f64, variant: FermiVariant, rng: &mut R) {
    let g = unit.len();
    let u01 = Uniform::new(0.0f64, 1.0).expect("valid range");
    match variant {
        FermiVariant::Multinomial => {
            // reproduce ∝ exp(k w): relative weight of a High agent is exp(k d)
            let n_h = unit.iter().filter(|s| **s).count();
            let n_l = g - n_h;
            let wh = n_h as f64 * kd.exp();
            let p_h = if n_h == 0 {
                0.0
            } else if n_l == 0 {
                1.0
            } else {
                wh / (wh + n_l as f64)
            };
            let parent_high = u01.sample(rng) < p_h;
            let n_type = if parent_high { n_h } else { n_l };
            let k = rng.random_range(0..n_type);
            let i = kth_of_state(unit, parent_high, k);
            let mut j = rng.random_range(0..g - 1);
            if j >= i {
                j += 1;
            }
            unit[j] = unit[i];
        }
        FermiVariant::Pairwise => {
            // focal j may adopt the state of model i with logistic probability
            let j = rng.random_range(0..g);
            let mut i = rng.random_range(0..g - 1);
            if i >= j {
                i += 1;
            }
            let dw = match (unit[i], unit[j]) {
                (true, false) => kd,
                (false, true) => -kd,
                _ => 0.0,
            };
            let adopt = 1.0 / (1.0 + (-dw).exp());
            if u01.sample(rng) < adopt {
                unit[j] = unit[i];
            }
        }
    }
}

pub fn simulate_fermi(
    params: &FermiParams,
    initial_high_share: f64,
    variant: FermiVariant,
) -> Result<FermiOutcome> {
    params.validate()?;
    if !(0.0..=1.0).contains(&initial_high_share) {
        return Err(Error::InvalidParams("initial_high_share must lie in [0, 1]".into()));
    }
    let kd = params.k_intensity * params.d_tilt;
    let unit = params.unit();
    let tally = (0..params.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(params.seed, rep as u64);
            let start: Vec<bool> = (0..params.population)
                .map(|_| rng.random::<f64>() < initial_high_share)
                .collect();
            let mut state = start.clone();
            let mut t = RepTally::new(params.rounds);
            t.high[0] = state.iter().filter(|s| **s).count() as u64;
            for round in 1..=params.rounds {
                for block in state.chunks_mut(unit) {
                    for _ in 0..params.events_per_round {
                        fermi_event(block, kd, variant, &mut rng);
                    }
                }
                t.high[round] = state.iter().filter(|s| **s).count() as u64;
            }
            for (a, b) in start.iter().zip(&state) {
                t.counts[*a as usize][*b as usize] += 1;
            }
            t
        })
        .reduce(|| RepTally::new(params.rounds), RepTally::merge);
    Ok(tally.finish(params.population, params.replicates))
}

/// Starting contributions for the utility-weighted process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialContributions {
    /// Independent uniform draws on [0, 12] per replicate.
    Uniform,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityMoranConfig {
    pub population: usize,
    pub rounds: usize,
    pub replicates: usize,
    pub seed: u64,
    pub initial: InitialContributions,
}

impl Default for UtilityMoranConfig {
    fn default() -> Self {
        Self {
            population: 100,
            rounds: 9,
            replicates: 1000,
            seed: 0,
            initial: InitialContributions::Uniform,
        }
    }
}

/// Weak-selection Moran process on contributions: every round payoffs are
/// evaluated within fixed groups of N, then `population` events follow in a
/// well-mixed pool where the parent is drawn with probability ∝ `1 + δ π` and
/// a uniformly drawn other agent copies the parent's contribution. States
/// use the round-1 mean as threshold (ties High).
pub fn simulate_moran_utility(params: &ModelParams, cfg: &UtilityMoranConfig) -> Result<FermiOutcome> {
    params.validate()?;
    let n = params.n;
    let pop = cfg.population;
    if pop < n || pop % n != 0 {
        return Err(Error::InvalidParams(format!(
            "population {pop} must be a positive multiple of N = {n}"
        )));
    }
    if cfg.replicates < 1 {
        return Err(Error::InvalidParams("replicates must be ≥ 1".into()));
    }
    params.check_players(pop)?;
    if let InitialContributions::Given(v) = &cfg.initial {
        if v.len() != pop || v.iter().any(|c| !(0.0..=ENDOWMENT).contains(c)) {
            return Err(Error::InvalidParams(
                "given contributions must match the population and lie in [0, 12]".into(),
            ));
        }
    }

    let results: Vec<Result<RepTally>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(cfg.seed, rep as u64);
            let start: Vec<f64> = match &cfg.initial {
                InitialContributions::Uniform => {
                    (0..pop).map(|_| rng.random_range(0.0..=ENDOWMENT)).collect()
                }
                InitialContributions::Given(v) => v.clone(),
            };
            let threshold = start.iter().sum::<f64>() / pop as f64;
            let high = |c: f64| c >= threshold;
            let mut t = RepTally::new(cfg.rounds);
            t.high[0] = start.iter().filter(|c| high(**c)).count() as u64;
            let mut lag = start.clone();
            let mut cur = start.clone();
            for round in 1..=cfg.rounds {
                let w: Vec<f64> = (0..pop)
                    .map(|i| {
                        let ctx = RoundContext {
                            own: cur[i],
                            peers_now: loo_block_mean(&cur, i, n),
                            peers_lag: loo_block_mean(&lag, i, n),
                        };
                        1.0 + params.delta * utility_unchecked(params, i, &ctx)
                    })
                    .collect();
                let w_min = w.iter().cloned().fold(f64::INFINITY, f64::min);
                if !(w_min > 0.0) {
                    return Err(Error::NegativeFitness(w_min));
                }
                let total: f64 = w.iter().sum();
                let before = cur.clone();
                for _ in 0..pop {
                    let mut x = rng.random::<f64>() * total;
                    let mut parent = pop - 1;
                    for (i, wi) in w.iter().enumerate() {
                        if x < *wi {
                            parent = i;
                            break;
                        }
                        x -= wi;
                    }
                    let mut j = rng.random_range(0..pop - 1);
                    if j >= parent {
                        j += 1;
                    }
                    cur[j] = cur[parent];
                }
                lag = before;
                t.high[round] = cur.iter().filter(|c| high(**c)).count() as u64;
            }
            for (a, b) in start.iter().zip(&cur) {
                t.counts[high(*a) as usize][high(*b) as usize] += 1;
            }
            Ok(t)
        })
        .collect();
    let mut acc = RepTally::new(cfg.rounds);
    for r in results {
        acc = acc.merge(r?);
    }
    Ok(acc.finish(pop, cfg.replicates))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(d: f64, k: f64, reps: usize, seed: u64) -> FermiParams {
        FermiParams {
            d_tilt: d,
            k_intensity: k,
            replicates: reps,
            seed,
            ..FermiParams::default()
        }
    }

    #[test]
    fn stationary_share_examples() {
        let m = TransitionMatrix2::new([[0.608, 0.392], [0.372, 0.628]]).unwrap();
        assert!((stationary_share(&m).unwrap() - 0.513).abs() < 1e-3);
        let s = TransitionMatrix2::new([[0.7, 0.3], [0.3, 0.7]]).unwrap();
        assert_eq!(stationary_share(&s).unwrap(), 0.5);
        let a = TransitionMatrix2::new([[1.0, 0.0], [0.5, 0.5]]).unwrap();
        assert_eq!(stationary_share(&a).unwrap(), 0.0);
        assert_eq!(
            stationary_share(&TransitionMatrix2::identity()),
            Err(Error::AbsorbingBothStates)
        );
    }

    #[test]
    fn rejects_non_stochastic() {
        assert!(TransitionMatrix2::new([[0.5, 0.4], [0.3, 0.7]]).is_err());
        assert!(TransitionMatrix2::new([[1.2, -0.2], [0.3, 0.7]]).is_err());
    }

    #[test]
    fn rows_sum_to_one_and_deterministic() {
        let a = simulate_fermi(&fp(0.7, 0.4, 300, 11), 0.5, FermiVariant::Multinomial).unwrap();
        let b = simulate_fermi(&fp(0.7, 0.4, 300, 11), 0.5, FermiVariant::Multinomial).unwrap();
        assert_eq!(a, b);
        for row in a.matrix.p {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
        assert_eq!(a.high_share.len(), 10);
    }

    #[test]
    fn zero_intensity_is_relabeling_symmetric() {
        for variant in [FermiVariant::Multinomial, FermiVariant::Pairwise] {
            let params = FermiParams {
                rounds: 1,
                group_size: None,
                events_per_round: 100,
                ..fp(0.8, 0.0, 2000, 3)
            };
            let m = simulate_fermi(&params, 0.5, variant).unwrap().matrix;
            assert!((m.p_ll() - m.p_hh()).abs() < 0.02, "{variant:?} {m:?}");
        }
    }

    #[test]
    fn zero_tilt_is_symmetric() {
        for variant in [FermiVariant::Multinomial, FermiVariant::Pairwise] {
            let m = simulate_fermi(&fp(0.0, 1.2, 2000, 5), 0.5, variant).unwrap().matrix;
            assert!((m.p_ll() - m.p_hh()).abs() < 0.02, "{variant:?} {m:?}");
        }
    }

    #[test]
    fn variants_agree_on_tilt_sign() {
        for d in [-0.6, -0.3, 0.3, 0.6] {
            let a = simulate_fermi(&fp(d, 0.5, 5000, 8), 0.5, FermiVariant::Multinomial).unwrap().matrix;
            let b = simulate_fermi(&fp(d, 0.5, 5000, 8), 0.5, FermiVariant::Pairwise).unwrap().matrix;
            let sa = (a.p_hh() - a.p_ll()).signum();
            let sb = (b.p_hh() - b.p_ll()).signum();
            assert_eq!(sa, sb, "d={d}: {a:?} vs {b:?}");
            assert_eq!(sa, d.signum());
        }
    }

    #[test]
    fn only_the_product_kd_matters() {
        let a = simulate_fermi(&fp(-0.5, 0.5, 400, 2), 0.589, FermiVariant::Multinomial).unwrap();
        let b = simulate_fermi(&fp(-0.25, 1.0, 400, 2), 0.589, FermiVariant::Multinomial).unwrap();
        assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn invalid_params() {
        let mut p = fp(0.0, -1.0, 10, 0);
        assert!(simulate_fermi(&p, 0.5, FermiVariant::Pairwise).is_err());
        p.k_intensity = 1.0;
        p.group_size = Some(7);
        assert!(simulate_fermi(&p, 0.5, FermiVariant::Pairwise).is_err());
        assert!(simulate_fermi(&fp(0.0, 1.0, 10, 0), 1.5, FermiVariant::Pairwise).is_err());
    }

    fn ucfg(reps: usize, initial: InitialContributions) -> UtilityMoranConfig {
        UtilityMoranConfig {
            population: 100,
            rounds: 3,
            replicates: reps,
            seed: 4,
            initial,
        }
    }

    #[test]
    fn utility_neutral_at_zero_delta() {
        let p = ModelParams {
            delta: 0.0,
            ..ModelParams::homogeneous(1.0, 0.3)
        };
        // symmetric start: half at 3, half at 9, threshold 6
        let init: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 3.0 } else { 9.0 }).collect();
        let m = simulate_moran_utility(&p, &ucfg(2000, InitialContributions::Given(init)))
            .unwrap()
            .matrix;
        assert!((m.p_ll() - m.p_hh()).abs() < 0.02, "{m:?}");
    }

    #[test]
    fn material_game_favours_free_riding() {
        let p = ModelParams {
            delta: 0.1,
            ..ModelParams::homogeneous(0.0, 0.0)
        };
        let m = simulate_moran_utility(&p, &ucfg(2000, InitialContributions::Uniform))
            .unwrap()
            .matrix;
        assert!(m.p_ll() > m.p_hh(), "{m:?}");
    }

    #[test]
    fn monomorphic_high_never_produces_low() {
        let p = ModelParams {
            delta: 0.05,
            ..ModelParams::homogeneous(1.0, 0.0)
        };
        let out = simulate_moran_utility(&p, &ucfg(50, InitialContributions::Given(vec![10.0; 100]))).unwrap();
        assert_eq!(out.matrix.p_hl(), 0.0);
        assert_eq!(out.empty_rows, vec![0]);
    }

    #[test]
    fn negative_fitness_is_reported() {
        // huge norm penalty and altruism swing push 1 + δπ below zero
        let p = ModelParams {
            delta: 0.9,
            ..ModelParams::homogeneous(0.0, 0.0)
        };
        let init: Vec<f64> = (0..100).map(|i| if i % 5 == 0 { 12.0 } else { 0.0 }).collect();
        assert!(matches!(
            simulate_moran_utility(&p, &ucfg(4, InitialContributions::Given(init))),
            Err(Error::NegativeFitness(_))
        ));
    }
}
