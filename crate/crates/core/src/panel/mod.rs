//! Player-round panel: records, group structure, peer means and H/L states.

mod csv_io;
mod states;
mod synthetic;

pub use csv_io::{load_panel, read_panel, write_panel, write_panel_csv, Schema};
pub use states::{classify_states, state_of, RegimeMeta, RegimePath, RegimeSet, State, ThresholdRule};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Religion {
    None,
    Protestant,
    Catholic,
}

impl Religion {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "0" => Some(Religion::None),
            "protestant" | "1" => Some(Religion::Protestant),
            "catholic" | "2" => Some(Religion::Catholic),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Religion::None => "none",
            Religion::Protestant => "protestant",
            Religion::Catholic => "catholic",
        }
    }
}

/// Player covariates; any field may be absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub age: Option<f64>,
    pub male: Option<bool>,
    pub friends: Option<f64>,
    pub adversaries: Option<f64>,
    pub food_insecurity: Option<bool>,
    pub marital: Option<bool>,
    pub education: Option<u8>,
    pub indigenous: Option<bool>,
    pub religion: Option<Religion>,
    pub access_routes: Option<f64>,
    pub friendship_density: Option<f64>,
    pub adversarial_density: Option<f64>,
    pub network_size: Option<f64>,
}

/// Binary traits usable for composition instruments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trait {
    Male,
    NoReligion,
    Indigenous,
    Protestant,
}

impl Trait {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "male" => Some(Trait::Male),
            "no_religion" | "none" => Some(Trait::NoReligion),
            "indigenous" => Some(Trait::Indigenous),
            "protestant" => Some(Trait::Protestant),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Trait::Male => "male",
            Trait::NoReligion => "no_religion",
            Trait::Indigenous => "indigenous",
            Trait::Protestant => "protestant",
        }
    }
}

impl Covariates {
    pub fn trait_value(&self, t: Trait) -> Option<f64> {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        match t {
            Trait::Male => self.male.map(b),
            Trait::Indigenous => self.indigenous.map(b),
            Trait::NoReligion => self.religion.map(|r| b(r == Religion::None)),
            Trait::Protestant => self.religion.map(|r| b(r == Religion::Protestant)),
        }
    }
}

/// One player-round decision. `contribution` is `None` when the cell is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub player_id: String,
    pub village_id: String,
    pub group_id: String,
    pub round: u32,
    pub contribution: Option<f64>,
    pub covariates: Covariates,
}

#[derive(Debug, Clone)]
struct PlayerInfo {
    id: String,
    group: usize,
    village: usize,
    covariates: Covariates,
}

#[derive(Debug, Clone)]
struct GroupInfo {
    id: String,
    village: usize,
    members: Vec<usize>,
}

/// Immutable validated panel with dense player/group/village indices.
///
/// Players are indexed in ascending id order; rounds are 1-based.
#[derive(Debug, Clone)]
pub struct Panel {
    group_size: usize,
    rounds: u32,
    players: Vec<PlayerInfo>,
    groups: Vec<GroupInfo>,
    villages: Vec<String>,
    contrib: Vec<Option<f64>>,
    index: BTreeMap<String, usize>,
}

impl Panel {
    /// Validates and indexes a record set.
    pub fn from_records(records: Vec<PanelRecord>, group_size: usize, rounds: u32) -> Result<Self> {
        if group_size < 2 || rounds < 1 {
            return Err(Error::InvalidParams("group size ≥ 2 and rounds ≥ 1 required".into()));
        }
        let mut seen: BTreeMap<(String, u32), ()> = BTreeMap::new();
        // (group, village, covariates) per player, first occurrence wins for covariates
        let mut by_player: BTreeMap<String, (String, String, Covariates)> = BTreeMap::new();
        for (row, r) in records.iter().enumerate() {
            if r.round < 1 || r.round > rounds {
                return Err(Error::RangeViolation {
                    row: row + 1,
                    field: "round".into(),
                });
            }
            if let Some(c) = r.contribution {
                if !(0.0..=12.0).contains(&c) {
                    return Err(Error::RangeViolation {
                        row: row + 1,
                        field: "contribution".into(),
                    });
                }
            }
            if seen.insert((r.player_id.clone(), r.round), ()).is_some() {
                return Err(Error::DuplicateKey {
                    player: r.player_id.clone(),
                    round: r.round,
                });
            }
            match by_player.get(&r.player_id) {
                None => {
                    by_player.insert(
                        r.player_id.clone(),
                        (r.group_id.clone(), r.village_id.clone(), r.covariates.clone()),
                    );
                }
                Some((g, v, _)) => {
                    if *g != r.group_id {
                        return Err(Error::InconsistentMembership {
                            player: r.player_id.clone(),
                            what: "group",
                        });
                    }
                    if *v != r.village_id {
                        return Err(Error::InconsistentMembership {
                            player: r.player_id.clone(),
                            what: "village",
                        });
                    }
                }
            }
        }
        if by_player.is_empty() {
            return Err(Error::EmptyPanel);
        }

        let mut village_ix: BTreeMap<String, usize> = BTreeMap::new();
        let mut group_ix: BTreeMap<String, usize> = BTreeMap::new();
        let mut villages = Vec::new();
        let mut groups: Vec<GroupInfo> = Vec::new();
        let mut players = Vec::with_capacity(by_player.len());
        let mut index = BTreeMap::new();
        for (p, (pid, (gid, vid, cov))) in by_player.into_iter().enumerate() {
            let v = *village_ix.entry(vid.clone()).or_insert_with(|| {
                villages.push(vid.clone());
                villages.len() - 1
            });
            let g = match group_ix.get(&gid) {
                Some(&g) => {
                    if groups[g].village != v {
                        return Err(Error::InconsistentMembership {
                            player: pid,
                            what: "village for its group",
                        });
                    }
                    g
                }
                None => {
                    groups.push(GroupInfo {
                        id: gid.clone(),
                        village: v,
                        members: Vec::new(),
                    });
                    group_ix.insert(gid.clone(), groups.len() - 1);
                    groups.len() - 1
                }
            };
            groups[g].members.push(p);
            index.insert(pid.clone(), p);
            players.push(PlayerInfo {
                id: pid,
                group: g,
                village: v,
                covariates: cov,
            });
        }
        for g in &groups {
            if g.members.len() != group_size {
                return Err(Error::GroupSize {
                    group: g.id.clone(),
                    found: g.members.len(),
                    expected: group_size,
                });
            }
        }
        let t = rounds as usize;
        let mut contrib = vec![None; players.len() * t];
        for r in &records {
            let p = index[&r.player_id];
            contrib[p * t + (r.round as usize - 1)] = r.contribution;
        }
        Ok(Self {
            group_size,
            rounds,
            players,
            groups,
            villages,
            contrib,
            index,
        })
    }

    /// Builds a panel from per-player contribution paths. Players are seated
    /// in consecutive groups of `group_size`, groups in consecutive villages
    /// of `groups_per_village`; ids follow the synthetic-panel layout.
    pub fn from_paths(
        paths: &[Vec<Option<f64>>],
        group_size: usize,
        groups_per_village: usize,
    ) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::EmptyPanel);
        }
        if groups_per_village < 1 {
            return Err(Error::InvalidParams("groups_per_village must be ≥ 1".into()));
        }
        let rounds = paths[0].len() as u32;
        if paths.iter().any(|p| p.len() != rounds as usize) {
            return Err(Error::Dimension("paths differ in length".into()));
        }
        let mut records = Vec::new();
        for (i, path) in paths.iter().enumerate() {
            let g = i / group_size;
            let v = g / groups_per_village;
            for (t, c) in path.iter().enumerate() {
                records.push(PanelRecord {
                    player_id: format!("v{v:04}g{g:05}p{}", i % group_size),
                    village_id: format!("v{v:04}"),
                    group_id: format!("g{g:05}"),
                    round: t as u32 + 1,
                    contribution: *c,
                    covariates: Covariates::default(),
                });
            }
        }
        Self::from_records(records, group_size, rounds)
    }

    /// Replaces covariates player by player (indexed as in this panel).
    pub fn with_covariates(mut self, covs: Vec<Covariates>) -> Result<Self> {
        if covs.len() != self.players.len() {
            return Err(Error::Dimension("one covariate row per player required".into()));
        }
        for (p, c) in self.players.iter_mut().zip(covs) {
            p.covariates = c;
        }
        Ok(self)
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_villages(&self) -> usize {
        self.villages.len()
    }

    pub fn player_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn player_id(&self, p: usize) -> &str {
        &self.players[p].id
    }

    pub fn group_of(&self, p: usize) -> usize {
        self.players[p].group
    }

    pub fn village_of(&self, p: usize) -> usize {
        self.players[p].village
    }

    pub fn group_id(&self, g: usize) -> &str {
        &self.groups[g].id
    }

    pub fn group_village(&self, g: usize) -> usize {
        self.groups[g].village
    }

    pub fn village_id(&self, v: usize) -> &str {
        &self.villages[v]
    }

    pub fn members(&self, g: usize) -> &[usize] {
        &self.groups[g].members
    }

    pub fn covariates(&self, p: usize) -> &Covariates {
        &self.players[p].covariates
    }

    /// Contribution of player index `p` in 1-based round `t`.
    pub fn contribution(&self, p: usize, t: u32) -> Option<f64> {
        if t < 1 || t > self.rounds {
            return None;
        }
        self.contrib[p * self.rounds as usize + (t as usize - 1)]
    }

    pub fn path(&self, p: usize) -> &[Option<f64>] {
        let t = self.rounds as usize;
        &self.contrib[p * t..(p + 1) * t]
    }

    pub fn complete_path(&self, p: usize) -> Option<Vec<f64>> {
        self.path(p).iter().copied().collect()
    }

    /// Mean of the other N−1 group members in round `t`, or `None` when any is missing.
    pub fn loo_mean_at(&self, p: usize, t: u32) -> Option<f64> {
        let mut sum = 0.0;
        for &q in self.members(self.group_of(p)) {
            if q != p {
                sum += self.contribution(q, t)?;
            }
        }
        Some(sum / (self.group_size - 1) as f64)
    }

    /// Leave-one-out peer mean by player id.
    pub fn loo_peer_mean(&self, player_id: &str, round: u32) -> Result<f64> {
        let p = self
            .player_index(player_id)
            .ok_or_else(|| Error::UnknownPlayer(player_id.to_string()))?;
        if round < 1 || round > self.rounds || self.contribution(p, round).is_none() {
            return Err(Error::IncompleteGroup {
                player: player_id.to_string(),
                round,
            });
        }
        self.loo_mean_at(p, round).ok_or_else(|| Error::IncompleteGroup {
            player: player_id.to_string(),
            round,
        })
    }

    /// All records, sorted by (player_id, round); missing cells are skipped.
    pub fn records(&self) -> Vec<PanelRecord> {
        let mut out = Vec::new();
        for (p, info) in self.players.iter().enumerate() {
            for t in 1..=self.rounds {
                if let Some(c) = self.contribution(p, t) {
                    out.push(PanelRecord {
                        player_id: info.id.clone(),
                        village_id: self.villages[info.village].clone(),
                        group_id: self.groups[info.group].id.clone(),
                        round: t,
                        contribution: Some(c),
                        covariates: info.covariates.clone(),
                    });
                }
            }
        }
        out
    }

    /// Mean contribution over players observed in round `t`.
    pub fn round_values(&self, t: u32) -> Vec<f64> {
        (0..self.n_players())
            .filter_map(|p| self.contribution(p, t))
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// One group per entry of `groups`, rows are rounds, columns members.
    pub fn panel_from_groups(groups: &[Vec<Vec<f64>>]) -> Panel {
        let n = groups[0][0].len();
        let rounds = groups[0].len() as u32;
        let mut recs = Vec::new();
        for (g, rows) in groups.iter().enumerate() {
            for (t, row) in rows.iter().enumerate() {
                for (m, &c) in row.iter().enumerate() {
                    recs.push(PanelRecord {
                        player_id: format!("g{g:03}m{m}"),
                        village_id: format!("v{}", g % 3),
                        group_id: format!("g{g:03}"),
                        round: t as u32 + 1,
                        contribution: Some(c),
                        covariates: Covariates::default(),
                    });
                }
            }
        }
        Panel::from_records(recs, n, rounds).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::panel_from_groups;
    use super::*;

    #[test]
    fn loo_examples() {
        let p = panel_from_groups(&[
            vec![vec![12.0; 5]],
            vec![vec![0.0, 3.0, 6.0, 9.0, 12.0]],
            vec![vec![5.0, 5.0, 5.0, 5.0, 0.0]],
        ]);
        assert_eq!(p.loo_peer_mean("g000m2", 1).unwrap(), 12.0);
        assert_eq!(p.loo_peer_mean("g001m0", 1).unwrap(), 7.5);
        assert_eq!(p.loo_peer_mean("g002m1", 1).unwrap(), 3.75);
        assert!(matches!(p.loo_peer_mean("nobody", 1), Err(Error::UnknownPlayer(_))));
        assert!(matches!(
            p.loo_peer_mean("g000m0", 2),
            Err(Error::IncompleteGroup { .. })
        ));
    }

    #[test]
    fn loo_identity_holds_for_every_member() {
        let rows = vec![vec![1.5, 7.0, 0.0, 12.0, 4.25]];
        let p = panel_from_groups(&[rows.clone()]);
        let sum: f64 = rows[0].iter().sum();
        for m in 0..5 {
            let id = format!("g000m{m}");
            let loo = p.loo_peer_mean(&id, 1).unwrap();
            assert!((4.0 * loo + rows[0][m] - sum).abs() < 1e-12);
        }
    }

    fn rec(pid: &str, gid: &str, vid: &str, t: u32, c: f64) -> PanelRecord {
        PanelRecord {
            player_id: pid.into(),
            village_id: vid.into(),
            group_id: gid.into(),
            round: t,
            contribution: Some(c),
            covariates: Covariates::default(),
        }
    }

    #[test]
    fn validation_errors() {
        let dup = vec![rec("a", "g", "v", 1, 1.0), rec("a", "g", "v", 1, 2.0), rec("b", "g", "v", 1, 0.0)];
        assert!(matches!(
            Panel::from_records(dup, 2, 1),
            Err(Error::DuplicateKey { .. })
        ));
        let moved = vec![rec("a", "g", "v", 1, 1.0), rec("a", "h", "v", 2, 2.0)];
        assert!(matches!(
            Panel::from_records(moved, 2, 2),
            Err(Error::InconsistentMembership { .. })
        ));
        let short = vec![rec("a", "g", "v", 1, 1.0)];
        assert!(matches!(
            Panel::from_records(short, 2, 1),
            Err(Error::GroupSize { .. })
        ));
        let high = vec![rec("a", "g", "v", 1, 13.0), rec("b", "g", "v", 1, 0.0)];
        assert!(matches!(
            Panel::from_records(high, 2, 1),
            Err(Error::RangeViolation { .. })
        ));
        assert_eq!(Panel::from_records(vec![], 5, 10).unwrap_err(), Error::EmptyPanel);
    }

    #[test]
    fn records_are_sorted() {
        let p = panel_from_groups(&[vec![vec![1.0, 2.0], vec![3.0, 4.0]]]);
        let keys: Vec<(String, u32)> = p.records().into_iter().map(|r| (r.player_id, r.round)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
