//! CSV formats of the scenario files. Readers skip `#` comment lines, so
//! the units header that writers put on top reads back cleanly.

use super::{ProsumerSpec, ScenarioError};
use crate::feeder::Line;
use crate::units::Units;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Per-node voltage band, linear p.u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeBound {
    pub node: usize,
    #[serde(rename = "v_lower_pu")]
    pub lower: f64,
    #[serde(rename = "v_upper_pu")]
    pub upper: f64,
}

#[derive(Deserialize)]
struct TopologyRow {
    from: usize,
    to: usize,
    r_pu: f64,
    x_pu: f64,
}

#[derive(Deserialize)]
struct ProfileRow {
    prosumer_id: usize,
    t: usize,
    net_supply_kw: f64,
}

fn read_rows<T: serde::de::DeserializeOwned>(
    text: &str,
    path: &Path,
    header: &[&str],
) -> Result<Vec<T>, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let parse_err = |line: usize, message: String| ScenarioError::Parse {
        path: path.to_path_buf(),
        line,
        column: 1,
        message,
    };
    let found = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        let line = text
            .lines()
            .position(|l| !l.trim_start().starts_with('#'))
            .map_or(1, |p| p + 1);
        return Err(parse_err(
            line,
            format!("expected header `{}`", header.join(",")),
        ));
    }
    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(0, |p| p.line() as usize);
                let row = record.deserialize(Some(&found)).map_err(|e| {
                    let column = match e.kind() {
                        csv::ErrorKind::Deserialize { err, .. } => {
                            err.field().map_or(1, |f| f as usize + 1)
                        }
                        _ => 1,
                    };
                    ScenarioError::Parse {
                        path: path.to_path_buf(),
                        line,
                        column,
                        message: e.to_string(),
                    }
                })?;
                rows.push(row);
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                return Err(parse_err(line, e.to_string()));
            }
        }
    }
    Ok(rows)
}

/// `from,to,r_pu,x_pu`.
pub fn read_topology(text: &str, path: &Path) -> Result<Vec<Line>, ScenarioError> {
    let rows: Vec<TopologyRow> = read_rows(text, path, &["from", "to", "r_pu", "x_pu"])?;
    if rows.is_empty() {
        return Err(ScenarioError::invalid("feeder.topology", "no lines"));
    }
    Ok(rows
        .into_iter()
        .map(|r| Line::new(r.from, r.to, r.r_pu, r.x_pu))
        .collect())
}

pub fn write_topology(lines: &[Line], units: &Units) -> String {
    let mut out = format!("{}\nfrom,to,r_pu,x_pu\n", units.header_comment());
    for l in lines {
        let _ = writeln!(out, "{},{},{},{}", l.from, l.to, l.resistance, l.reactance);
    }
    out
}

/// `node,v_lower_pu,v_upper_pu`.
pub fn read_bounds(text: &str, path: &Path) -> Result<Vec<NodeBound>, ScenarioError> {
    read_rows(text, path, &["node", "v_lower_pu", "v_upper_pu"])
}

pub fn write_bounds(bounds: &[NodeBound], units: &Units) -> String {
    let mut out = format!("{}\nnode,v_lower_pu,v_upper_pu\n", units.header_comment());
    for b in bounds {
        let _ = writeln!(out, "{},{},{}", b.node, b.lower, b.upper);
    }
    out
}

/// `prosumer_id,t,net_supply_kw`, one row per prosumer and step. Every
/// listed prosumer must cover `0..horizon` exactly once.
pub fn read_profiles(
    text: &str,
    path: &Path,
    horizon: usize,
) -> Result<BTreeMap<usize, Vec<f64>>, ScenarioError> {
    let rows: Vec<ProfileRow> = read_rows(text, path, &["prosumer_id", "t", "net_supply_kw"])?;
    let mut seen: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    for r in rows {
        if r.t >= horizon {
            return Err(ScenarioError::invalid(
                "fleet.profiles",
                format!(
                    "prosumer {}: step {} beyond horizon {horizon}",
                    r.prosumer_id, r.t
                ),
            ));
        }
        let slot = &mut seen
            .entry(r.prosumer_id)
            .or_insert_with(|| vec![None; horizon])[r.t];
        if slot.replace(r.net_supply_kw).is_some() {
            return Err(ScenarioError::invalid(
                "fleet.profiles",
                format!("prosumer {}: step {} given twice", r.prosumer_id, r.t),
            ));
        }
    }
    seen.into_iter()
        .map(|(id, v)| {
            let full: Option<Vec<f64>> = v.into_iter().collect();
            full.map(|f| (id, f)).ok_or_else(|| {
                ScenarioError::invalid("fleet.profiles", format!("prosumer {id}: profile has gaps"))
            })
        })
        .collect()
}

pub fn write_profiles(fleet: &[ProsumerSpec], units: &Units) -> String {
    let mut out = format!("{}\nprosumer_id,t,net_supply_kw\n", units.header_comment());
    for p in fleet {
        for (t, v) in p.net_supply_kw.iter().enumerate() {
            let _ = writeln!(out, "{},{t},{v}", p.id);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_round_trip() {
        let lines = vec![Line::new(0, 1, 0.01, 0.02), Line::new(1, 2, 7.584e-4, 1e-3)];
        let text = write_topology(&lines, &Units::default());
        assert_eq!(read_topology(&text, Path::new("t.csv")).unwrap(), lines);
    }

    #[test]
    fn comments_and_whitespace_are_ignored() {
        let text = "# units\nnode, v_lower_pu, v_upper_pu\n# note\n3, 0.96, 1.04\n";
        let b = read_bounds(text, Path::new("b.csv")).unwrap();
        assert_eq!(
            b,
            vec![NodeBound {
                node: 3,
                lower: 0.96,
                upper: 1.04
            }]
        );
    }

    #[test]
    fn bad_cell_reports_line_and_column() {
        let text = "from,to,r_pu,x_pu\n0,1,0.1,0.1\n1,2,oops,0.1\n";
        match read_topology(text, Path::new("t.csv")) {
            Err(ScenarioError::Parse { line, column, .. }) => assert_eq!((line, column), (3, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_a_parse_error() {
        let err = read_topology("# c\na,b,c,d\n", Path::new("t.csv")).unwrap_err();
        assert!(
            matches!(err, ScenarioError::Parse { line: 2, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn profiles_must_be_complete() {
        let p = Path::new("p.csv");
        let ok = "prosumer_id,t,net_supply_kw\n4,0,1.5\n4,1,-2\n";
        assert_eq!(read_profiles(ok, p, 2).unwrap()[&4], vec![1.5, -2.0]);
        assert!(read_profiles("prosumer_id,t,net_supply_kw\n4,0,1\n", p, 2).is_err());
        assert!(read_profiles("prosumer_id,t,net_supply_kw\n4,0,1\n4,0,1\n4,1,1\n", p, 2).is_err());
        assert!(read_profiles("prosumer_id,t,net_supply_kw\n4,2,1\n", p, 2).is_err());
    }
}
