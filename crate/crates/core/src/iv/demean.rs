//! Absorbing two sets of fixed effects from panel columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::densify;

pub const SWEEP_TOL: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemeanScheme {
    /// z − z̄_t − z̄_v + z̄ (exact for balanced panels).
    RoundVillage,
    /// Player and village×round effects by alternating projections.
    PlayerVillageRound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemeanPlan {
    pub scheme: DemeanScheme,
    /// Dense ids of the first dimension (round, or player).
    pub a: Vec<usize>,
    /// Dense ids of the second dimension (village, or village×round).
    pub b: Vec<usize>,
    pub na: usize,
    pub nb: usize,
}

fn cover<T: Ord + Clone>(ids: &[Option<T>]) -> Result<(Vec<usize>, usize)> {
    if let Some(i) = ids.iter().position(Option::is_none) {
        return Err(Error::UncoveredRow(i));
    }
    let ids: Vec<T> = ids.iter().map(|x| x.clone().unwrap()).collect();
    Ok(densify(&ids))
}

fn cell_means(x: &[f64], ids: &[usize], n: usize) -> Vec<f64> {
    let mut s = vec![0.0; n];
    let mut c = vec![0usize; n];
    for (v, &g) in x.iter().zip(ids) {
        s[g] += v;
        c[g] += 1;
    }
    s.iter().zip(&c).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
}

impl DemeanPlan {
    pub fn new<A: Ord + Clone, B: Ord + Clone>(scheme: DemeanScheme, a: &[Option<A>], b: &[Option<B>]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::UncoveredRow(a.len().min(b.len())));
        }
        let (a, na) = cover(a)?;
        let (b, nb) = cover(b)?;
        Ok(Self { scheme, a, b, na, nb })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Demeaned column and the number of sweeps used.
    pub fn apply_counted(&self, x: &[f64]) -> Result<(Vec<f64>, usize)> {
        if x.len() != self.a.len() {
            return Err(Error::UncoveredRow(x.len().min(self.a.len())));
        }
        match self.scheme {
            DemeanScheme::RoundVillage => {
                let ma = cell_means(x, &self.a, self.na);
                let mb = cell_means(x, &self.b, self.nb);
                let grand = x.iter().sum::<f64>() / x.len().max(1) as f64;
                Ok((
                    x.iter()
                        .enumerate()
                        .map(|(i, v)| v - ma[self.a[i]] - mb[self.b[i]] + grand)
                        .collect(),
                    1,
                ))
            }
            DemeanScheme::PlayerVillageRound => {
                let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let mut z = x.to_vec();
                for sweep in 1..=MAX_SWEEPS {
                    let ma = cell_means(&z, &self.a, self.na);
                    for (i, v) in z.iter_mut().enumerate() {
                        *v -= ma[self.a[i]];
                    }
                    let mb = cell_means(&z, &self.b, self.nb);
                    for (i, v) in z.iter_mut().enumerate() {
                        *v -= mb[self.b[i]];
                    }
                    let left = cell_means(&z, &self.a, self.na)
                        .iter()
                        .fold(0.0f64, |m, v| m.max(v.abs()));
                    if left < SWEEP_TOL * scale {
                        return Ok((z, sweep));
                    }
                }
                Ok((z, MAX_SWEEPS))
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.apply_counted(x).map(|(z, _)| z)
    }
}
