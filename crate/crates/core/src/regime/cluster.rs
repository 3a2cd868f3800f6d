//! Ward (D²) agglomerative clustering of z-scored trajectories, via the
//! nearest-neighbour chain on a condensed matrix of squared distances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{RegimePath, State};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Cluster ids: leaves are `0..n`, the cluster formed by merge `i` is `n + i`.
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.n * i - i * (i + 1) / 2 + j - i - 1
    }
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map(Vec::len).ok_or(Error::EmptyInput)?;
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Dimension("points differ in length".into()));
    }
    Ok(dim)
}

/// Merges sorted by height (non-decreasing).
pub fn ward_linkage(points: &[Vec<f64>]) -> Result<Vec<Merge>> {
    check_points(points)?;
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPlayers { needed: 2, found: n });
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| sq_dist(&points[i], &points[j])).collect())
        .collect();
    let mut dm = Condensed {
        n,
        d: rows.into_iter().flatten().collect(),
    };

    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    // (slot_a, slot_b, squared height); the merged cluster lives in slot_a
    let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);

    while raw.len() < n - 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("an active slot"));
        }
        let (a, b, dab) = loop {
            let a = *chain.last().unwrap();
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            let (mut best, mut best_d) = match prev {
                Some(p) => (p, dm.get(a, p)),
                None => (usize::MAX, f64::INFINITY),
            };
            for k in 0..n {
                if k != a && active[k] {
                    let d = dm.get(a, k);
                    if d < best_d {
                        best = k;
                        best_d = d;
                    }
                }
            }
            if Some(best) == prev {
                chain.pop();
                chain.pop();
                break (a, best, best_d);
            }
            chain.push(best);
        };
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if k != a && k != b && active[k] {
                let nk = size[k] as f64;
                let v = ((na + nk) * dm.get(a, k) + (nb + nk) * dm.get(b, k) - nk * dab)
                    / (na + nb + nk);
                dm.set(a, k, v);
            }
        }
        active[b] = false;
        size[a] += size[b];
        raw.push((a, b, dab));
    }

    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&i, &j| raw[i].2.total_cmp(&raw[j].2));
    // replay merges in height order, tracking the id currently held by each slot
    let mut id_of_slot: Vec<usize> = (0..n).collect();
    let mut size_of_slot = vec![1usize; n];
    let mut slot_parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(n - 1);
    for (step, &i) in order.iter().enumerate() {
        let (a, b, d2) = raw[i];
        let ra = root(&mut slot_parent, a);
        let rb = root(&mut slot_parent, b);
        let (l, r) = (id_of_slot[ra].min(id_of_slot[rb]), id_of_slot[ra].max(id_of_slot[rb]));
        slot_parent[rb] = ra;
        size_of_slot[ra] += size_of_slot[rb];
        id_of_slot[ra] = n + step;
        merges.push(Merge {
            left: l,
            right: r,
            height: d2.max(0.0).sqrt(),
            size: size_of_slot[ra],
        });
    }
    Ok(merges)
}

/// Flat labels `0..k` from the first `n − k` merges, numbered by first leaf.
pub fn cut_tree(merges: &[Merge], n: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > n || merges.len() + 1 != n {
        return Err(Error::InvalidParams(format!("cannot cut {n} leaves into {k} clusters")));
    }
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, m) in merges.iter().take(n - k).enumerate() {
        let a = root(&mut parent, m.left);
        let b = root(&mut parent, m.right);
        parent[a] = n + i;
        parent[b] = n + i;
    }
    let mut label_of_root = std::collections::HashMap::new();
    Ok((0..n)
        .map(|i| {
            let r = root(&mut parent, i);
            let next = label_of_root.len();
            *label_of_root.entry(r).or_insert(next)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouette {
    pub per_point: Vec<f64>,
    pub per_cluster: Vec<f64>,
    pub mean: f64,
}

/// Silhouette widths on Euclidean distances; singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize], k: usize) -> Result<Silhouette> {
    check_points(points)?;
    if labels.len() != points.len() || labels.iter().any(|&l| l >= k) {
        return Err(Error::Dimension("labels do not match points".into()));
    }
    let n = points.len();
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let per_point: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] += sq_dist(&points[i], &points[j]).sqrt();
                }
            }
            let own = labels[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 && b.is_finite() {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    let mut per_cluster = vec![0.0; k];
    for (i, &l) in labels.iter().enumerate() {
        per_cluster[l] += per_point[i];
    }
    for c in 0..k {
        if sizes[c] > 0 {
            per_cluster[c] /= sizes[c] as f64;
        }
    }
    let mean = per_point.iter().sum::<f64>() / n as f64;
    Ok(Silhouette {
        per_point,
        per_cluster,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFit {
    pub k: usize,
    /// Cluster per clustered player, 0 = highest mean z-score.
    pub assignments: Vec<usize>,
    pub silhouette_mean: f64,
    pub sizes: Vec<usize>,
    pub per_cluster_silhouette: Vec<f64>,
    pub mean_z: Vec<f64>,
    /// Per cluster: counts of first/last-round states `[HH, HL, LH, LL]`.
    pub confusion_vs_endstate: Vec<[u64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAnalysis {
    pub player_ids: Vec<String>,
    pub excluded_incomplete: usize,
    pub merges: Vec<Merge>,
    pub fits: Vec<ClusterFit>,
    /// k with the largest mean silhouette.
    pub best_k: usize,
}

fn end_state_cell(first: State, last: State) -> usize {
    match (first, last) {
        (State::H, State::H) => 0,
        (State::H, State::L) => 1,
        (State::L, State::H) => 2,
        (State::L, State::L) => 3,
    }
}

/// Clusters the complete paths; players with a missing round are left out.
pub fn cluster_trajectories(
    paths: &[RegimePath],
    k_min: usize,
    k_max: usize,
) -> Result<ClusterAnalysis> {
    if k_min < 2 || k_max < k_min {
        return Err(Error::InvalidParams(format!("bad k range {k_min}..{k_max}")));
    }
    let complete: Vec<&RegimePath> = paths
        .iter()
        .filter(|p| p.is_complete() && p.z_scores.iter().all(Option::is_some))
        .collect();
    if complete.is_empty() {
        return Err(Error::IncompletePaths);
    }
    if complete.len() < 2 * k_max {
        return Err(Error::TooFewPlayers {
            needed: 2 * k_max,
            found: complete.len(),
        });
    }
    let points: Vec<Vec<f64>> = complete
        .iter()
        .map(|p| p.z_scores.iter().map(|z| z.unwrap()).collect())
        .collect();
    check_points(&points)?;
    let first = &points[0];
    if points.iter().all(|p| p == first) {
        return Err(Error::DegenerateGeometry(
            "all trajectories coincide; silhouettes are undefined".into(),
        ));
    }
    let n = points.len();
    let merges = ward_linkage(&points)?;
    let row_mean: Vec<f64> = points
        .iter()
        .map(|p| p.iter().sum::<f64>() / p.len() as f64)
        .collect();

    let fits: Vec<ClusterFit> = (k_min..=k_max)
        .into_par_iter()
        .map(|k| -> Result<ClusterFit> {
            let raw = cut_tree(&merges, n, k)?;
            let mut sums = vec![(0.0, 0usize); k];
            for (i, &l) in raw.iter().enumerate() {
                sums[l].0 += row_mean[i];
                sums[l].1 += 1;
            }
            let means: Vec<f64> = sums.iter().map(|(s, c)| s / *c as f64).collect();
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| means[b].total_cmp(&means[a]));
            let mut relabel = vec![0; k];
            for (new, &old) in order.iter().enumerate() {
                relabel[old] = new;
            }
            let assignments: Vec<usize> = raw.iter().map(|&l| relabel[l]).collect();
            let sil = silhouette(&points, &assignments, k)?;
            let mut sizes = vec![0usize; k];
            let mut confusion = vec![[0u64; 4]; k];
            for (i, &c) in assignments.iter().enumerate() {
                sizes[c] += 1;
                let st = &complete[i].states;
                if let (Some(Some(a)), Some(Some(b))) = (st.first(), st.last()) {
                    confusion[c][end_state_cell(*a, *b)] += 1;
                }
            }
            Ok(ClusterFit {
                k,
                assignments,
                silhouette_mean: sil.mean,
                sizes,
                per_cluster_silhouette: sil.per_cluster,
                mean_z: order.iter().map(|&o| means[o]).collect(),
                confusion_vs_endstate: confusion,
            })
        })
        .collect::<Result<_>>()?;
    let best_k = fits
        .iter()
        .fold(None::<&ClusterFit>, |best, f| match best {
            Some(b) if b.silhouette_mean >= f.silhouette_mean => Some(b),
            _ => Some(f),
        })
        .map(|f| f.k)
        .unwrap_or(k_min);

    Ok(ClusterAnalysis {
        player_ids: complete.iter().map(|p| p.player_id.clone()).collect(),
        excluded_incomplete: paths.len() - n,
        merges,
        fits,
        best_k,
    })
}
