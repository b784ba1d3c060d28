//! TNTP-style network and trips files.
//!
//! Network rows are `tail head capacity length free_flow_time b power
//! speed_limit toll type ;`. The per-row `b` and `power` columns are read but
//! not used: travel times always follow the global BPR coefficient vector.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::{build_network, Link, Network, ODPair};

const LINK_COLUMNS: usize = 10;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('~') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Reads `<KEY> value` lines up to `<END OF METADATA>`; returns the metadata
/// and the 1-based line number where the body starts.
fn read_metadata(text: &str) -> Result<(BTreeMap<String, String>, usize)> {
    let mut meta = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if !line.starts_with('<') {
            return Err(parse_err(i + 1, "expected metadata line before <END OF METADATA>"));
        }
        let close = line.find('>').ok_or_else(|| parse_err(i + 1, "malformed metadata tag"))?;
        let key = line[1..close].trim().to_ascii_uppercase();
        if key == "END OF METADATA" {
            return Ok((meta, i + 2));
        }
        meta.insert(key, line[close + 1..].trim().to_string());
    }
    Err(parse_err(text.lines().count(), "missing <END OF METADATA>"))
}

fn required<'a>(meta: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| parse_err(1, format!("missing metadata <{key}>")))
}

fn number<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{}'", s.trim())))
}

pub fn parse_network(text: &str) -> Result<Network> {
    let (meta, body_start) = read_metadata(text)?;
    let declared_nodes: usize = number(required(&meta, "NUMBER OF NODES")?, 1, "node count")?;
    let declared_links: usize = number(required(&meta, "NUMBER OF LINKS")?, 1, "link count")?;
    let mut links = Vec::with_capacity(declared_links);
    for (i, raw) in text.lines().enumerate().skip(body_start - 1) {
        let lineno = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches(';').split_whitespace().collect();
        if fields.len() != LINK_COLUMNS {
            return Err(parse_err(
                lineno,
                format!("expected {LINK_COLUMNS} columns, found {}", fields.len()),
            ));
        }
        let tail: usize = number(fields[0], lineno, "tail node")?;
        let head: usize = number(fields[1], lineno, "head node")?;
        let capacity: f64 = number(fields[2], lineno, "capacity")?;
        let length: f64 = number(fields[3], lineno, "length")?;
        let t0: f64 = number(fields[4], lineno, "free-flow time")?;
        for (col, what) in [(5, "b"), (6, "power"), (7, "speed limit"), (8, "toll")] {
            number::<f64>(fields[col], lineno, what)?;
        }
        number::<i64>(fields[9], lineno, "link type")?;
        links.push(Link::new(links.len() + 1, tail, head, t0, capacity, length));
    }
    if links.len() != declared_links {
        return Err(parse_err(
            body_start,
            format!("declared {declared_links} links, found {}", links.len()),
        ));
    }
    let net = build_network(links)?;
    if net.node_count() > declared_nodes {
        return Err(parse_err(
            1,
            format!("declared {declared_nodes} nodes, links reference {}", net.node_count()),
        ));
    }
    Ok(net)
}

/// Demand table aggregated per O-D pair, sorted by (origin, destination).
/// Zero entries and origin-to-itself entries are dropped.
pub fn parse_trips(text: &str) -> Result<Vec<ODPair>> {
    let (meta, body_start) = read_metadata(text)?;
    number::<f64>(required(&meta, "TOTAL OD FLOW")?, 1, "total O-D flow")?;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut origin: Option<usize> = None;
    for (i, raw) in text.lines().enumerate().skip(body_start - 1) {
        let lineno = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("Origin") {
            origin = Some(number(rest, lineno, "origin")?);
            continue;
        }
        let o = origin.ok_or_else(|| parse_err(lineno, "demand entry before any 'Origin' line"))?;
        for entry in line.split(';').map(str::trim).filter(|e| !e.is_empty()) {
            let (d, flow) = entry
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("expected 'dest : flow', found '{entry}'")))?;
            let d: usize = number(d, lineno, "destination")?;
            let flow: f64 = number(flow, lineno, "flow")?;
            if flow < 0.0 || !flow.is_finite() {
                return Err(parse_err(lineno, format!("negative demand {flow} for {o}->{d}")));
            }
            if d != o && flow > 0.0 {
                *table.entry((o, d)).or_insert(0.0) += flow;
            }
        }
    }
    Ok(table
        .into_iter()
        .map(|((o, d), g)| ODPair::new(o, d, g))
        .collect())
}

pub fn parse_network_files(net_text: &str, trips_text: &str) -> Result<(Network, Vec<ODPair>)> {
    let net = parse_network(net_text)?;
    let ods = parse_trips(trips_text)?;
    for od in &ods {
        net.validate_od(od)?;
    }
    Ok((net, ods))
}

pub fn write_network(net: &Network) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<NUMBER OF ZONES> {}", net.node_count());
    let _ = writeln!(out, "<NUMBER OF NODES> {}", net.node_count());
    let _ = writeln!(out, "<FIRST THRU NODE> 1");
    let _ = writeln!(out, "<NUMBER OF LINKS> {}", net.link_count());
    let _ = writeln!(out, "<END OF METADATA>");
    let _ = writeln!(out);
    let _ = writeln!(out, "~\ttail\thead\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\ttype\t;");
    for l in net.links() {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t0.15\t4\t0\t0\t1\t;",
            l.tail, l.head, l.capacity, l.length, l.free_flow_time
        );
    }
    out
}

pub fn write_trips(ods: &[ODPair]) -> String {
    let mut by_origin: BTreeMap<usize, Vec<&ODPair>> = BTreeMap::new();
    for od in ods {
        by_origin.entry(od.origin).or_default().push(od);
    }
    let zones = ods
        .iter()
        .flat_map(|od| [od.origin, od.destination])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "<NUMBER OF ZONES> {zones}");
    let _ = writeln!(out, "<TOTAL OD FLOW> {:?}", ods.iter().map(|od| od.demand).sum::<f64>());
    let _ = writeln!(out, "<END OF METADATA>");
    for (o, list) in by_origin {
        let _ = writeln!(out, "\nOrigin {o}");
        for od in list {
            let _ = write!(out, "    {} : {:?};", od.destination, od.demand);
        }
        let _ = writeln!(out);
    }
    out
}
