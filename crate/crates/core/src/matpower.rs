//! Converter for MATPOWER version 2 case files (`mpc.bus`, `mpc.gen`,
//! `mpc.branch`, `mpc.baseMVA`).
//!
//! External bus numbers are mapped to contiguous ids in the order the bus
//! rows appear. Out-of-service branches and generators are dropped. Series
//! impedance `r + jx` becomes the admittance `1/(r + jx)`, the total line
//! charging is split in half, a zero tap ratio means 1 and the phase shift
//! is converted from degrees.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grid::{Branch, Bus, BusKind, NominalInjection, PowerSystem};

struct Matrix {
    rows: Vec<(usize, Vec<f64>)>,
}

fn strip_comment(line: &str) -> &str {
    line.split('%').next().unwrap_or("")
}

/// Named matrices, `baseMVA` and the case function name.
type Parsed = (HashMap<String, Matrix>, Option<f64>, Option<String>);

fn parse_matrices(text: &str) -> Result<Parsed> {
    let mut matrices = HashMap::new();
    let mut base = None;
    let mut name = None;
    let mut current: Option<(String, Matrix)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some((key, mat)) = current.as_mut() {
            let (body, closes) = match line.find(']') {
                Some(pos) => (&line[..pos], true),
                None => (line, false),
            };
            for row in body.split(';') {
                let vals: Vec<&str> = row
                    .split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|s| !s.is_empty())
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let parsed = vals
                    .iter()
                    .map(|v| {
                        v.parse::<f64>().map_err(|_| Error::Parse {
                            line: line_no,
                            msg: format!("invalid number '{v}' in mpc.{key}"),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                mat.rows.push((line_no, parsed));
            }
            if closes {
                let (key, mat) = current.take().unwrap();
                matrices.insert(key, mat);
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("function") {
            if let Some(pos) = rest.find('=') {
                name = Some(rest[pos + 1..].trim().to_string());
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("mpc.") {
            let Some(eq) = rest.find('=') else {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "expected assignment".into(),
                });
            };
            let key = rest[..eq].trim().to_string();
            let value = rest[eq + 1..].trim();
            if key == "baseMVA" {
                let v = value.trim_end_matches(';').trim();
                base = Some(v.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("invalid baseMVA '{v}'"),
                })?);
            } else if let Some(body) = value.strip_prefix('[') {
                let mut mat = Matrix { rows: Vec::new() };
                let (inner, closes) = match body.find(']') {
                    Some(pos) => (&body[..pos], true),
                    None => (body, false),
                };
                for row in inner.split(';') {
                    let vals: Vec<f64> = row
                        .split(|c: char| c.is_whitespace() || c == ',')
                        .filter(|s| !s.is_empty())
                        .map(|v| {
                            v.parse::<f64>().map_err(|_| Error::Parse {
                                line: line_no,
                                msg: format!("invalid number '{v}'"),
                            })
                        })
                        .collect::<Result<_>>()?;
                    if !vals.is_empty() {
                        mat.rows.push((line_no, vals));
                    }
                }
                if closes {
                    matrices.insert(key, mat);
                } else {
                    current = Some((key, mat));
                }
            }
            continue;
        }
    }
    if let Some((key, _)) = current {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("unterminated matrix mpc.{key}"),
        });
    }
    Ok((matrices, base, name))
}

fn need<'a>(row: &'a (usize, Vec<f64>), cols: usize, what: &str) -> Result<&'a [f64]> {
    if row.1.len() < cols {
        return Err(Error::Parse {
            line: row.0,
            msg: format!("{what} row has {} columns, expected at least {cols}", row.1.len()),
        });
    }
    Ok(&row.1)
}

pub fn parse_matpower(text: &str) -> Result<PowerSystem> {
    let (mats, base, name) = parse_matrices(text)?;
    let base_mva = base.unwrap_or(100.0);
    let bus_mat = mats
        .get("bus")
        .ok_or_else(|| Error::Validation("missing mpc.bus".into()))?;
    let branch_mat = mats
        .get("branch")
        .ok_or_else(|| Error::Validation("missing mpc.branch".into()))?;

    let mut index = HashMap::new();
    let mut buses = Vec::new();
    let mut nominal = Vec::new();
    for row in &bus_mat.rows {
        let r = need(row, 13, "bus")?;
        let ext = r[0] as i64;
        let id = buses.len();
        if index.insert(ext, id).is_some() {
            return Err(Error::Validation(format!("duplicate bus id {ext}")));
        }
        let kind = match r[1] as i64 {
            1 => BusKind::Load,
            2 => BusKind::Generation,
            3 => BusKind::Reference,
            t => {
                return Err(Error::Parse {
                    line: row.0,
                    msg: format!("unsupported bus type {t}"),
                })
            }
        };
        buses.push(Bus {
            id,
            kind,
            shunt_conductance: r[4] / base_mva,
            shunt_susceptance: r[5] / base_mva,
        });
        nominal.push(NominalInjection {
            load_p: r[2] / base_mva,
            load_q: r[3] / base_mva,
            gen_p: 0.0,
            gen_q: 0.0,
            voltage_setpoint: 1.0,
        });
    }

    if let Some(gen_mat) = mats.get("gen") {
        let mut has_gen = vec![false; buses.len()];
        for row in &gen_mat.rows {
            let r = need(row, 8, "gen")?;
            if r[7] <= 0.0 {
                continue;
            }
            let bus = *index.get(&(r[0] as i64)).ok_or_else(|| {
                Error::Validation(format!("generator at unknown bus {}", r[0]))
            })?;
            let inj = &mut nominal[bus];
            inj.gen_p += r[1] / base_mva;
            inj.gen_q += r[2] / base_mva;
            if !has_gen[bus] {
                inj.voltage_setpoint = r[5];
                has_gen[bus] = true;
            }
        }
    }

    let mut branches = Vec::new();
    for row in &branch_mat.rows {
        let r = need(row, 11, "branch")?;
        if r[10] <= 0.0 {
            continue;
        }
        let from = *index
            .get(&(r[0] as i64))
            .ok_or_else(|| Error::Validation(format!("branch references unknown bus {}", r[0])))?;
        let to = *index
            .get(&(r[1] as i64))
            .ok_or_else(|| Error::Validation(format!("branch references unknown bus {}", r[1])))?;
        let (res, reac) = (r[2], r[3]);
        let denom = res * res + reac * reac;
        if denom == 0.0 {
            return Err(Error::Parse {
                line: row.0,
                msg: "branch with zero impedance".into(),
            });
        }
        branches.push(Branch {
            from,
            to,
            series_conductance: res / denom,
            series_susceptance: -reac / denom,
            half_shunt_susceptance: r[4] / 2.0,
            tap: if r[8] == 0.0 { 1.0 } else { r[8] },
            shift: r[9].to_radians(),
        });
    }

    PowerSystem::new(
        name.unwrap_or_else(|| "matpower".into()),
        buses,
        branches,
        base_mva,
        Some(nominal),
    )
}

/// IEEE 30-bus system (MATPOWER `case30`).
pub fn ieee30() -> PowerSystem {
    parse_matpower(include_str!("../data/case30.m")).expect("bundled case30 is valid")
}

/// IEEE 118-bus system (MATPOWER `case118`).
pub fn ieee118() -> PowerSystem {
    parse_matpower(include_str!("../data/case118.m")).expect("bundled case118 is valid")
}

/// Loads a case by bundled name (`ieee30`, `ieee118`) or from a file path;
/// `.m` files go through the MATPOWER converter, anything else through the
/// native parser.
pub fn load_case(spec: &str) -> Result<PowerSystem> {
    match spec {
        "ieee30" | "case30" => Ok(ieee30()),
        "ieee118" | "case118" => Ok(ieee118()),
        path => {
            let text = std::fs::read_to_string(path)?;
            if path.ends_with(".m") {
                parse_matpower(&text)
            } else {
                crate::grid::parse_case(&text)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ieee30_shape() {
        let sys = ieee30();
        assert_eq!(sys.n_buses(), 30);
        assert_eq!(sys.branches.len(), 41);
        assert_eq!(sys.reference_bus(), 0);
        assert!(sys.is_connected());
        // bus 5 (external) carries the 0.19 p.u. shunt
        assert!((sys.buses[4].shunt_susceptance - 0.0019).abs() < 1e-15);
    }

    #[test]
    fn ieee118_shape() {
        let sys = ieee118();
        assert_eq!(sys.n_buses(), 118);
        assert_eq!(sys.branches.len(), 186);
        assert!(sys.is_connected());
        let taps = sys.branches.iter().filter(|b| b.tap != 1.0).count();
        assert!(taps > 0);
    }

    #[test]
    fn ieee30_degrees_match_case_file() {
        // degree count straight from the branch table of case30.m
        let text = include_str!("../data/case30.m");
        let mut deg = [0usize; 31];
        let mut in_branch = false;
        for line in text.lines() {
            if line.starts_with("mpc.branch") {
                in_branch = true;
                continue;
            }
            if in_branch {
                if line.starts_with("];") {
                    break;
                }
                let f: Vec<usize> = line
                    .trim()
                    .trim_end_matches(';')
                    .split_whitespace()
                    .take(2)
                    .map(|s| s.parse().unwrap())
                    .collect();
                deg[f[0]] += 1;
                deg[f[1]] += 1;
            }
        }
        let sys = ieee30();
        for bus in 0..30 {
            assert_eq!(sys.incident_branches(bus).unwrap().len(), deg[bus + 1]);
        }
    }

    #[test]
    fn inline_matrix_and_status() {
        let text = "function mpc = tiny\nmpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 135 1 1.1 0.9; 2 1 50 20 0 0 1 1 0 135 1 1.1 0.9];\nmpc.gen = [1 0 0 10 -10 1.02 100 1 100 0];\nmpc.branch = [\n1 2 0.01 0.1 0.02 0 0 0 0 0 1 -360 360;\n1 2 0.01 0.1 0.02 0 0 0 0 0 0 -360 360;\n];\n";
        let sys = parse_matpower(text).unwrap();
        assert_eq!(sys.name, "tiny");
        assert_eq!(sys.branches.len(), 1);
        assert!((sys.nominal[1].load_p - 0.5).abs() < 1e-15);
        assert_eq!(sys.nominal[0].voltage_setpoint, 1.02);
        let br = &sys.branches[0];
        assert!((br.series_conductance - 0.01 / 0.0101).abs() < 1e-12);
        assert!((br.half_shunt_susceptance - 0.01).abs() < 1e-15);
    }
}
