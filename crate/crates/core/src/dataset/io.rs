//! CSV formats for measurements and road networks.
//!
//! Measurements: header `road_id,timestamp,speed,flow`, one row per road
//! and hour, ISO-8601 timestamps. Every road must cover the same
//! contiguous range of hours.
//!
//! Network: a `road_id,length` block followed by a `road_a,road_b` edge
//! block in the same file.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use chrono::NaiveDateTime;

use crate::error::{Error, Result};
use crate::graphs::RoadNetwork;
use crate::numcore::Tensor;

use super::{Channel, TrafficSeries};

const TIMESTAMP_FORMATS: [&str; 3] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S"];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

struct RoadRows {
    id: String,
    first: NaiveDateTime,
    last: NaiveDateTime,
    last_line: usize,
    values: Vec<[f64; 2]>,
}

fn parse_number(source: &str, line: usize, field: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::parse(source, line, format!("{field} '{raw}' is not a number")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::parse(
            source,
            line,
            format!("{field} {v} must be finite and >= 0"),
        ));
    }
    Ok(v)
}

/// Reads measurement rows into a series ordered by first appearance of each road.
pub fn read_measurements(reader: impl Read, source: &str) -> Result<TrafficSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(source, 1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["road_id", "timestamp", "speed", "flow"] {
        return Err(Error::parse(
            source,
            1,
            "expected header road_id,timestamp,speed,flow",
        ));
    }

    let mut roads: Vec<RoadRows> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(source, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 4 {
            return Err(Error::parse(source, line, "expected 4 fields"));
        }
        let id = record[0].to_string();
        let ts = parse_timestamp(&record[1])
            .ok_or_else(|| Error::parse(source, line, format!("bad timestamp '{}'", &record[1])))?;
        let speed = parse_number(source, line, "speed", &record[2])?;
        let flow = parse_number(source, line, "flow", &record[3])?;
        match index.get(&id) {
            None => {
                index.insert(id.clone(), roads.len());
                roads.push(RoadRows {
                    id,
                    first: ts,
                    last: ts,
                    last_line: line,
                    values: vec![[speed, flow]],
                });
            }
            Some(&i) => {
                let r = &mut roads[i];
                let expected = r.last + chrono::Duration::hours(1);
                if ts != expected {
                    let what = if ts > expected {
                        "missing hour(s)"
                    } else {
                        "out-of-order or duplicate hour"
                    };
                    return Err(Error::parse(
                        source,
                        line,
                        format!(
                            "{what} for road {}: expected {}, found {}",
                            r.id,
                            format_timestamp(expected),
                            format_timestamp(ts)
                        ),
                    ));
                }
                r.last = ts;
                r.last_line = line;
                r.values.push([speed, flow]);
            }
        }
    }

    let first = roads
        .first()
        .ok_or_else(|| Error::parse(source, 2, "no measurement rows"))?;
    let (start, hours) = (first.first, first.values.len());
    for r in &roads {
        if r.first != start {
            return Err(Error::parse(
                source,
                r.last_line,
                format!(
                    "road {} starts at {}, expected {}",
                    r.id,
                    format_timestamp(r.first),
                    format_timestamp(start)
                ),
            ));
        }
        if r.values.len() != hours {
            return Err(Error::parse(
                source,
                r.last_line,
                format!(
                    "road {} has {} hours, expected {hours}",
                    r.id,
                    r.values.len()
                ),
            ));
        }
    }
    let data = roads
        .iter()
        .flat_map(|r| r.values.iter().flat_map(|v| v.iter().copied()))
        .collect();
    let ids = roads.into_iter().map(|r| r.id).collect::<Vec<_>>();
    let values = Tensor::new(vec![ids.len(), hours, 2], data)?;
    TrafficSeries::new(ids, start, values)
}

pub fn write_measurements(series: &TrafficSeries, mut out: impl Write) -> Result<()> {
    writeln!(out, "road_id,timestamp,speed,flow")?;
    for road in 0..series.road_count() {
        let id = &series.road_ids()[road];
        for t in 0..series.hours() {
            writeln!(
                out,
                "{id},{},{},{}",
                format_timestamp(series.timestamp(t)),
                series.value(road, t, Channel::Speed),
                series.value(road, t, Channel::Flow)
            )?;
        }
    }
    Ok(())
}

pub fn read_network(reader: impl Read, source: &str) -> Result<RoadNetwork> {
    let mut ids = Vec::new();
    let mut lengths = Vec::new();
    let mut edges = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut section = 0;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match (section, fields.as_slice()) {
            (0, ["road_id", "length"]) => section = 1,
            (0, _) => {
                return Err(Error::parse(
                    source,
                    lineno,
                    "expected header road_id,length",
                ))
            }
            (1, ["road_a", "road_b"]) => section = 2,
            (1, [id, len]) => {
                let len: f64 = len.parse().map_err(|_| {
                    Error::parse(source, lineno, format!("length '{len}' is not a number"))
                })?;
                if !(len > 0.0 && len.is_finite()) {
                    return Err(Error::parse(
                        source,
                        lineno,
                        format!("length {len} must be > 0"),
                    ));
                }
                if index.insert(id.to_string(), ids.len()).is_some() {
                    return Err(Error::parse(source, lineno, format!("duplicate road {id}")));
                }
                ids.push(id.to_string());
                lengths.push(len);
            }
            (2, [a, b]) => {
                let lookup = |id: &str| {
                    index
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::parse(source, lineno, format!("unknown road {id}")))
                };
                let (a, b) = (lookup(a)?, lookup(b)?);
                if a == b {
                    return Err(Error::parse(source, lineno, "self-edge"));
                }
                edges.push((a, b));
            }
            _ => return Err(Error::parse(source, lineno, "expected two fields")),
        }
    }
    if ids.is_empty() {
        return Err(Error::parse(source, 1, "no roads"));
    }
    RoadNetwork::new(ids, lengths, edges)
}

pub fn write_network(net: &RoadNetwork, mut out: impl Write) -> Result<()> {
    writeln!(out, "road_id,length")?;
    for (id, len) in net.ids().iter().zip(net.lengths()) {
        writeln!(out, "{id},{len}")?;
    }
    writeln!(out, "road_a,road_b")?;
    for &(a, b) in net.edges() {
        writeln!(out, "{},{}", net.ids()[a], net.ids()[b])?;
    }
    Ok(())
}

impl TrafficSeries {
    /// Reorders roads to match `ids` (e.g. a network's road order).
    pub fn select_roads(&self, ids: &[String]) -> Result<TrafficSeries> {
        let position: HashMap<&str, usize> = self
            .road_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let t = self.hours();
        let mut data = Vec::with_capacity(ids.len() * t * 2);
        for id in ids {
            let &src = position
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(format!("no measurements for road {id}")))?;
            data.extend_from_slice(&self.values().data()[src * t * 2..(src + 1) * t * 2]);
        }
        TrafficSeries::new(
            ids.to_vec(),
            self.start(),
            Tensor::new(vec![ids.len(), t, 2], data)?,
        )
    }
}
