use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Covariates, Panel, PanelRecord, Religion};
use crate::error::{Error, Result};

/// Maps logical fields to CSV header names. Covariate columns are optional:
/// when a mapped column is absent from the file the covariate is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub player_id: String,
    pub village_id: String,
    pub group_id: String,
    pub round: String,
    pub contribution: String,
    pub age: String,
    pub gender: String,
    pub friends: String,
    pub adversaries: String,
    pub food_insecurity: String,
    pub marital: String,
    pub education: String,
    pub indigenous: String,
    pub religion: String,
    pub access_routes: String,
    pub friendship_density: String,
    pub adversarial_density: String,
    pub network_size: String,
    pub delimiter: u8,
    pub group_size: usize,
    pub rounds: u32,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            player_id: "player_id".into(),
            village_id: "village_id".into(),
            group_id: "group_id".into(),
            round: "round".into(),
            contribution: "contribution".into(),
            age: "age".into(),
            gender: "gender".into(),
            friends: "friends".into(),
            adversaries: "adversaries".into(),
            food_insecurity: "food_insecurity".into(),
            marital: "marital".into(),
            education: "education".into(),
            indigenous: "indigenous".into(),
            religion: "religion".into(),
            access_routes: "access_routes".into(),
            friendship_density: "friendship_density".into(),
            adversarial_density: "adversarial_density".into(),
            network_size: "network_size".into(),
            delimiter: b',',
            group_size: 5,
            rounds: 10,
        }
    }
}

struct Row<'a> {
    rec: &'a csv::StringRecord,
    cols: &'a HashMap<String, usize>,
    row: usize,
}

impl Row<'_> {
    fn raw(&self, name: &str) -> Option<&str> {
        let i = *self.cols.get(name)?;
        let s = self.rec.get(i)?.trim();
        (!s.is_empty()).then_some(s)
    }

    fn parse_err(&self, field: &str) -> Error {
        Error::Parse {
            row: self.row,
            field: field.to_string(),
        }
    }

    fn range_err(&self, field: &str) -> Error {
        Error::RangeViolation {
            row: self.row,
            field: field.to_string(),
        }
    }

    fn required(&self, name: &str) -> Result<&str> {
        self.raw(name).ok_or_else(|| self.parse_err(name))
    }

    fn real(&self, name: &str, lo: f64, hi: f64) -> Result<Option<f64>> {
        match self.raw(name) {
            None => Ok(None),
            Some(s) => {
                let v: f64 = s.parse().map_err(|_| self.parse_err(name))?;
                if !v.is_finite() {
                    return Err(self.parse_err(name));
                }
                if v < lo || v > hi {
                    return Err(self.range_err(name));
                }
                Ok(Some(v))
            }
        }
    }

    fn binary(&self, name: &str) -> Result<Option<bool>> {
        match self.raw(name) {
            None => Ok(None),
            Some(s) => match s.to_ascii_lowercase().as_str() {
                "1" | "1.0" | "true" => Ok(Some(true)),
                "0" | "0.0" | "false" => Ok(Some(false)),
                _ => {
                    if s.parse::<f64>().is_ok() {
                        Err(self.range_err(name))
                    } else {
                        Err(self.parse_err(name))
                    }
                }
            },
        }
    }
}

/// Reads a panel from any CSV source.
pub fn read_panel<R: Read>(reader: R, schema: &Schema) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(Error::Io(e.to_string())),
    };
    let cols: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    for name in [
        &schema.player_id,
        &schema.village_id,
        &schema.group_id,
        &schema.round,
        &schema.contribution,
    ] {
        if !cols.contains_key(name) {
            return Err(Error::MissingColumn(name.clone()));
        }
    }

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|_| Error::Parse {
            row,
            field: "<record>".into(),
        })?;
        let r = Row {
            rec: &rec,
            cols: &cols,
            row,
        };
        let round_s = r.required(&schema.round)?;
        let round: i64 = round_s
            .parse::<i64>()
            .or_else(|_| {
                round_s
                    .parse::<f64>()
                    .ok()
                    .filter(|f| f.fract() == 0.0)
                    .map(|f| f as i64)
                    .ok_or(())
            })
            .map_err(|_| r.parse_err(&schema.round))?;
        if round < 1 || round > schema.rounds as i64 {
            return Err(r.range_err(&schema.round));
        }
        let contribution = r.real(&schema.contribution, 0.0, 12.0)?;
        let education = match r.real(&schema.education, 0.0, 13.0)? {
            Some(e) if e.fract() != 0.0 => return Err(r.range_err(&schema.education)),
            e => e.map(|e| e as u8),
        };
        let religion = match r.raw(&schema.religion) {
            None => None,
            Some(s) => Some(Religion::parse(s).ok_or_else(|| r.range_err(&schema.religion))?),
        };
        let covariates = Covariates {
            age: r.real(&schema.age, 0.0, 150.0)?,
            male: r.binary(&schema.gender)?,
            friends: r.real(&schema.friends, 0.0, f64::INFINITY)?,
            adversaries: r.real(&schema.adversaries, 0.0, f64::INFINITY)?,
            food_insecurity: r.binary(&schema.food_insecurity)?,
            marital: r.binary(&schema.marital)?,
            education,
            indigenous: r.binary(&schema.indigenous)?,
            religion,
            access_routes: r.real(&schema.access_routes, 1.0, 5.0)?,
            friendship_density: r.real(&schema.friendship_density, 0.0, 1.0)?,
            adversarial_density: r.real(&schema.adversarial_density, 0.0, 1.0)?,
            network_size: r.real(&schema.network_size, 0.0, f64::INFINITY)?,
        };
        records.push(PanelRecord {
            player_id: r.required(&schema.player_id)?.to_string(),
            village_id: r.required(&schema.village_id)?.to_string(),
            group_id: r.required(&schema.group_id)?.to_string(),
            round: round as u32,
            contribution,
            covariates,
        });
    }
    Panel::from_records(records, schema.group_size, schema.rounds)
}

pub fn load_panel(path: impl AsRef<Path>, schema: &Schema) -> Result<Panel> {
    let file = std::fs::File::open(path)?;
    read_panel(std::io::BufReader::new(file), schema)
}

fn fmt_real(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn fmt_bool(x: Option<bool>) -> String {
    x.map(|b| if b { "1" } else { "0" }.to_string())
        .unwrap_or_default()
}

/// Writes the panel using the default column names, six fractional digits.
pub fn write_panel_csv<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let s = Schema::default();
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record([
        &s.player_id,
        &s.village_id,
        &s.group_id,
        &s.round,
        &s.contribution,
        &s.age,
        &s.gender,
        &s.friends,
        &s.adversaries,
        &s.food_insecurity,
        &s.marital,
        &s.education,
        &s.indigenous,
        &s.religion,
        &s.access_routes,
        &s.friendship_density,
        &s.adversarial_density,
        &s.network_size,
    ])
    .map_err(io)?;
    for r in panel.records() {
        let c = &r.covariates;
        w.write_record([
            r.player_id,
            r.village_id,
            r.group_id,
            r.round.to_string(),
            fmt_real(r.contribution),
            fmt_real(c.age),
            fmt_bool(c.male),
            fmt_real(c.friends),
            fmt_real(c.adversaries),
            fmt_bool(c.food_insecurity),
            fmt_bool(c.marital),
            c.education.map(|e| e.to_string()).unwrap_or_default(),
            fmt_bool(c.indigenous),
            c.religion.map(|r| r.as_str().to_string()).unwrap_or_default(),
            fmt_real(c.access_routes),
            fmt_real(c.friendship_density),
            fmt_real(c.adversarial_density),
            fmt_real(c.network_size),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel(panel: &Panel, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_panel_csv(panel, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "player_id,village_id,group_id,round,contribution\n";

    fn read(s: &str, n: usize, t: u32) -> Result<Panel> {
        let schema = Schema {
            group_size: n,
            rounds: t,
            ..Schema::default()
        };
        read_panel(s.as_bytes(), &schema)
    }

    #[test]
    fn empty_file_is_missing_column() {
        assert!(matches!(read("", 2, 1), Err(Error::MissingColumn(_))));
    }

    #[test]
    fn contribution_above_endowment_is_rejected_with_row() {
        let csv = format!("{HEADER}a,v,g,1,5\nb,v,g,1,13\n");
        assert_eq!(
            read(&csv, 2, 1).unwrap_err(),
            Error::RangeViolation {
                row: 2,
                field: "contribution".into()
            }
        );
    }

    #[test]
    fn unparsable_field_reports_row() {
        let csv = format!("{HEADER}a,v,g,one,5\n");
        assert_eq!(
            read(&csv, 2, 1).unwrap_err(),
            Error::Parse {
                row: 1,
                field: "round".into()
            }
        );
    }

    #[test]
    fn blank_contribution_is_missing_not_zero() {
        let csv = format!("{HEADER}a,v,g,1,\nb,v,g,1,4\n");
        let p = read(&csv, 2, 1).unwrap();
        assert_eq!(p.contribution(0, 1), None);
        assert_eq!(p.contribution(1, 1), Some(4.0));
    }

    #[test]
    fn custom_delimiter_and_names() {
        let schema = Schema {
            player_id: "pid".into(),
            delimiter: b';',
            group_size: 2,
            rounds: 1,
            ..Schema::default()
        };
        let csv = "pid;village_id;group_id;round;contribution;religion\na;v;g;1;3;catholic\nb;v;g;1;4;0\n";
        let p = read_panel(csv.as_bytes(), &schema).unwrap();
        assert_eq!(p.covariates(0).religion, Some(Religion::Catholic));
        assert_eq!(p.covariates(1).religion, Some(Religion::None));
    }

    #[test]
    fn bad_category_is_rejected() {
        let csv = "player_id,village_id,group_id,round,contribution,religion\na,v,g,1,3,pagan\n";
        assert!(matches!(read(csv, 2, 1), Err(Error::RangeViolation { .. })));
    }
}
