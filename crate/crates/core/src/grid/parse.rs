//! Sectioned CSV case format.
//!
//! ```text
//! [meta]
//! name,ieee14
//! base_mva,100
//! [bus]
//! # id,type,p_load_mw,q_load_mvar,gs,bs,vm,va_deg
//! [branch]
//! # from,to,r,x,b,tap,status
//! [gen]
//! # bus,p_mw,vset,qmin,qmax
//! ```
//!
//! Loads, shunts and generator outputs are given in MW / MVAr and are
//! converted to per-unit on `base_mva`. Impedances are already per-unit.
//! A generator row overrides the voltage setpoint of its bus.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Branch, Bus, BusType, Generator, Network};
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Meta,
    Bus,
    Branch,
    Gen,
}

struct RawBus {
    line: usize,
    number: u32,
    bus_type: BusType,
    fields: [f64; 6],
}

struct RawBranch {
    line: usize,
    from: u32,
    to: u32,
    fields: [f64; 4],
    status: bool,
}

struct RawGen {
    line: usize,
    bus: u32,
    fields: [f64; 4],
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{}'", s.trim())))
}

fn columns<'a>(line: usize, section: &str, row: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let cols: Vec<&str> = row.split(',').map(str::trim).collect();
    if cols.len() != n {
        return Err(parse_err(
            line,
            format!("[{section}] row needs {n} columns, found {}", cols.len()),
        ));
    }
    Ok(cols)
}

/// Parses case-file text into a validated [`Network`].
pub fn parse_case(text: &str) -> Result<Network> {
    let mut section = Section::None;
    let mut name = String::new();
    let mut base_mva = None;
    let mut buses = Vec::new();
    let mut branches = Vec::new();
    let mut gens = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let row = raw.split('#').next().unwrap_or("").trim();
        if row.is_empty() {
            continue;
        }
        if row.starts_with('[') {
            section = match row {
                "[meta]" => Section::Meta,
                "[bus]" => Section::Bus,
                "[branch]" => Section::Branch,
                "[gen]" => Section::Gen,
                other => return Err(parse_err(line, format!("unknown section {other}"))),
            };
            continue;
        }
        match section {
            Section::None => return Err(parse_err(line, "data before the first section header")),
            Section::Meta => {
                let c = columns(line, "meta", row, 2)?;
                match c[0] {
                    "base_mva" => base_mva = Some(num::<f64>(line, "base_mva", c[1])?),
                    "name" => name = c[1].to_string(),
                    other => return Err(parse_err(line, format!("unknown meta key '{other}'"))),
                }
            }
            Section::Bus => {
                let c = columns(line, "bus", row, 8)?;
                let bus_type = c[1].parse().map_err(|e: String| parse_err(line, e))?;
                let mut fields = [0.0; 6];
                for (k, f) in fields.iter_mut().enumerate() {
                    *f = num(line, "bus value", c[k + 2])?;
                }
                buses.push(RawBus {
                    line,
                    number: num(line, "bus id", c[0])?,
                    bus_type,
                    fields,
                });
            }
            Section::Branch => {
                let c = columns(line, "branch", row, 7)?;
                let mut fields = [0.0; 4];
                for (k, f) in fields.iter_mut().enumerate() {
                    *f = num(line, "branch value", c[k + 2])?;
                }
                let status = match c[6] {
                    "1" => true,
                    "0" => false,
                    s => return Err(parse_err(line, format!("invalid status '{s}'"))),
                };
                branches.push(RawBranch {
                    line,
                    from: num(line, "from bus", c[0])?,
                    to: num(line, "to bus", c[1])?,
                    fields,
                    status,
                });
            }
            Section::Gen => {
                let c = columns(line, "gen", row, 5)?;
                let mut fields = [0.0; 4];
                for (k, f) in fields.iter_mut().enumerate() {
                    *f = num(line, "generator value", c[k + 1])?;
                }
                gens.push(RawGen {
                    line,
                    bus: num(line, "generator bus", c[0])?,
                    fields,
                });
            }
        }
    }

    let base = base_mva.ok_or_else(|| Error::Validation("missing base_mva in [meta]".into()))?;
    if !(base > 0.0) {
        return Err(Error::Validation(format!("base_mva must be positive, got {base}")));
    }

    let mut index: HashMap<u32, usize> = HashMap::new();
    for (i, b) in buses.iter().enumerate() {
        if index.insert(b.number, i).is_some() {
            return Err(Error::Validation(format!(
                "duplicate bus id {} (line {})",
                b.number, b.line
            )));
        }
    }
    let lookup = |number: u32, line: usize| {
        index
            .get(&number)
            .copied()
            .ok_or_else(|| parse_err(line, format!("unknown bus id {number}")))
    };

    let mut net = Network {
        name,
        base_mva: base,
        buses: buses
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let [pd, qd, gs, bs, vm, va] = b.fields;
                Bus {
                    id: i,
                    number: b.number,
                    bus_type: b.bus_type,
                    p_load: pd / base,
                    q_load: qd / base,
                    v_setpoint: vm,
                    angle_setpoint: va.to_radians(),
                    shunt_g: gs / base,
                    shunt_b: bs / base,
                }
            })
            .collect(),
        branches: Vec::with_capacity(branches.len()),
        generators: Vec::with_capacity(gens.len()),
    };
    for br in &branches {
        let [r, x, b, tap] = br.fields;
        let (from_bus, to_bus) = (lookup(br.from, br.line)?, lookup(br.to, br.line)?);
        if r == 0.0 && x == 0.0 {
            return Err(Error::Validation(format!(
                "zero-impedance branch {}-{} (line {})",
                br.from, br.to, br.line
            )));
        }
        net.branches.push(Branch {
            from_bus,
            to_bus,
            r,
            x,
            b_charging: b,
            tap,
            in_service: br.status,
        });
    }
    for g in &gens {
        let bus = lookup(g.bus, g.line)?;
        let [p, vset, qmin, qmax] = g.fields;
        net.buses[bus].v_setpoint = vset;
        net.generators.push(Generator {
            bus,
            p_gen: p / base,
            v_setpoint: vset,
            q_min: qmin / base,
            q_max: qmax / base,
        });
    }
    net.validate()?;
    Ok(net)
}

/// Renders a network back into the case format.
pub fn render_case(net: &Network) -> String {
    let base = net.base_mva;
    let mut s = String::new();
    s.push_str("[meta]\n");
    if !net.name.is_empty() {
        let _ = writeln!(s, "name,{}", net.name);
    }
    let _ = writeln!(s, "base_mva,{base:?}");
    s.push_str("\n[bus]\n# id,type,p_load_mw,q_load_mvar,gs,bs,vm,va_deg\n");
    for b in &net.buses {
        let _ = writeln!(
            s,
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
            b.number,
            b.bus_type,
            b.p_load * base,
            b.q_load * base,
            b.shunt_g * base,
            b.shunt_b * base,
            b.v_setpoint,
            b.angle_setpoint.to_degrees()
        );
    }
    s.push_str("\n[branch]\n# from,to,r,x,b,tap,status\n");
    for br in &net.branches {
        let _ = writeln!(
            s,
            "{},{},{:?},{:?},{:?},{:?},{}",
            net.buses[br.from_bus].number,
            net.buses[br.to_bus].number,
            br.r,
            br.x,
            br.b_charging,
            br.tap,
            u8::from(br.in_service)
        );
    }
    s.push_str("\n[gen]\n# bus,p_mw,vset,qmin,qmax\n");
    for g in &net.generators {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?}",
            net.buses[g.bus].number,
            g.p_gen * base,
            g.v_setpoint,
            g.q_min * base,
            g.q_max * base
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "\
# minimal case
[meta]
base_mva,100
[bus]
# id,type,p_load_mw,q_load_mvar,gs,bs,vm,va_deg
7,slack,0,0,0,0,1.0,0
9,pq,10,5,0,0,1.0,0   # load bus
[branch]
7,9,0,0.1,0,1,1
[gen]
7,0,1.02,-50,50
";

    #[test]
    fn parses_two_bus() {
        let net = parse_case(TWO_BUS).unwrap();
        assert_eq!(net.n_bus(), 2);
        assert_eq!(net.branches.len(), 1);
        assert_eq!(net.buses_of_type(BusType::Slack), vec![0]);
        assert_eq!(net.buses[1].number, 9);
        assert_eq!(net.branches[0].to_bus, 1);
        assert!((net.buses[1].p_load - 0.1).abs() < 1e-15);
        assert!((net.buses[1].q_load - 0.05).abs() < 1e-15);
        // generator row wins over the bus row
        assert_eq!(net.buses[0].v_setpoint, 1.02);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = TWO_BUS.replace("9,pq,10,5,0,0,1.0,0", "9,pq,ten,5,0,0,1.0,0");
        match parse_case(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn short_row_reports_line() {
        let text = TWO_BUS.replace("7,9,0,0.1,0,1,1", "7,9,0,0.1");
        assert!(matches!(parse_case(&text), Err(Error::Parse { line: 9, .. })));
    }

    #[test]
    fn duplicate_bus_rejected() {
        let text = TWO_BUS.replace("9,pq", "7,pq");
        assert!(matches!(parse_case(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn zero_impedance_rejected() {
        let text = TWO_BUS.replace("7,9,0,0.1,0,1,1", "7,9,0,0,0,1,1");
        assert!(matches!(parse_case(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_slack_rejected() {
        let text = TWO_BUS.replace("7,slack", "7,pv");
        assert!(matches!(parse_case(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_bus_reference() {
        let text = TWO_BUS.replace("7,9,0,0.1", "7,8,0,0.1");
        assert!(matches!(parse_case(&text), Err(Error::Parse { line: 9, .. })));
    }

    #[test]
    fn round_trip_two_bus() {
        let net = parse_case(TWO_BUS).unwrap();
        let again = parse_case(&render_case(&net)).unwrap();
        assert!(net.approx_eq(&again, 1e-12));
    }
}
