//! GPS log ingestion: T-Drive and Geolife parsing, bounding-box filtering,
//! and discretization to grid-cell trajectories at fixed time steps.

use crate::error::{Error, Result};
use crate::grid::{CellId, GridMap};
use crate::mobility::Trajectory;
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Tdrive,
    Geolife,
}

impl std::str::FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tdrive" => Ok(LogFormat::Tdrive),
            "geolife" => Ok(LogFormat::Geolife),
            other => Err(Error::InvalidArgument(format!(
                "unknown log format `{other}` (expected tdrive or geolife)"
            ))),
        }
    }
}

/// One GPS fix.
#[derive(Clone, Debug, PartialEq)]
pub struct GpsRecord {
    pub id: String,
    pub timestamp: NaiveDateTime,
    pub lon: f64,
    pub lat: f64,
}

/// Malformed lines are collected here instead of aborting the stream.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParseIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParseReport {
    pub parsed: usize,
    pub issues: Vec<ParseIssue>,
}

const TDRIVE_TIME: &str = "%Y-%m-%d %H:%M:%S";

/// T-Drive lines: `id,YYYY-MM-DD HH:MM:SS,lon,lat`. Fatal only when no line
/// parses.
pub fn parse_tdrive<R: BufRead>(reader: R) -> Result<(Vec<GpsRecord>, ParseReport)> {
    let (records, report) = parse_tdrive_lenient(reader)?;
    if records.is_empty() {
        return Err(Error::EmptyInput("no valid T-Drive records"));
    }
    Ok((records, report))
}

/// Like [`parse_tdrive`] but an all-malformed stream is not an error, so the
/// caller can still report every bad line.
pub fn parse_tdrive_lenient<R: BufRead>(reader: R) -> Result<(Vec<GpsRecord>, ParseReport)> {
    let mut records = Vec::new();
    let mut report = ParseReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_tdrive_line(&line) {
            Ok(rec) => {
                records.push(rec);
                report.parsed += 1;
            }
            Err(message) => report.issues.push(ParseIssue {
                line: idx + 1,
                message,
            }),
        }
    }
    Ok((records, report))
}

fn parse_tdrive_line(line: &str) -> std::result::Result<GpsRecord, String> {
    let fields: Vec<&str> = line.trim().split(',').collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, got {}", fields.len()));
    }
    let timestamp = NaiveDateTime::parse_from_str(fields[1].trim(), TDRIVE_TIME)
        .map_err(|e| format!("bad timestamp `{}`: {e}", fields[1]))?;
    let lon: f64 = fields[2]
        .trim()
        .parse()
        .map_err(|_| format!("bad longitude `{}`", fields[2]))?;
    let lat: f64 = fields[3]
        .trim()
        .parse()
        .map_err(|_| format!("bad latitude `{}`", fields[3]))?;
    Ok(GpsRecord {
        id: fields[0].trim().to_string(),
        timestamp,
        lon,
        lat,
    })
}

/// Geolife `.plt`: six preamble lines, then
/// `lat,lon,0,altitude,days,YYYY-MM-DD,HH:MM:SS`. The user id comes from the
/// caller (Geolife encodes it in the directory name).
pub fn parse_geolife<R: BufRead>(reader: R, id: &str) -> Result<(Vec<GpsRecord>, ParseReport)> {
    let (records, report) = parse_geolife_lenient(reader, id)?;
    if records.is_empty() {
        return Err(Error::EmptyInput("no valid Geolife records"));
    }
    Ok((records, report))
}

/// Like [`parse_geolife`] without the zero-valid-lines check.
pub fn parse_geolife_lenient<R: BufRead>(
    reader: R,
    id: &str,
) -> Result<(Vec<GpsRecord>, ParseReport)> {
    let mut records = Vec::new();
    let mut report = ParseReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if idx < 6 || line.trim().is_empty() {
            continue;
        }
        match parse_geolife_line(&line, id) {
            Ok(rec) => {
                records.push(rec);
                report.parsed += 1;
            }
            Err(message) => report.issues.push(ParseIssue {
                line: idx + 1,
                message,
            }),
        }
    }
    Ok((records, report))
}

fn parse_geolife_line(line: &str, id: &str) -> std::result::Result<GpsRecord, String> {
    let fields: Vec<&str> = line.trim().split(',').collect();
    if fields.len() != 7 {
        return Err(format!("expected 7 fields, got {}", fields.len()));
    }
    let lat: f64 = fields[0]
        .trim()
        .parse()
        .map_err(|_| format!("bad latitude `{}`", fields[0]))?;
    let lon: f64 = fields[1]
        .trim()
        .parse()
        .map_err(|_| format!("bad longitude `{}`", fields[1]))?;
    let stamp = format!("{} {}", fields[5].trim(), fields[6].trim());
    let timestamp = NaiveDateTime::parse_from_str(&stamp, TDRIVE_TIME)
        .map_err(|e| format!("bad timestamp `{stamp}`: {e}"))?;
    Ok(GpsRecord {
        id: id.to_string(),
        timestamp,
        lon,
        lat,
    })
}

/// Bins fixes at the map's time step and keeps the last in-bounds fix per
/// bin; empty bins carry the previous cell forward; leading bins without an
/// in-bounds fix are dropped. Timesteps renumber from zero.
pub fn discretize(records: &[GpsRecord], map: &GridMap) -> Result<Trajectory> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no records to discretize"));
    }
    let mut sorted: Vec<&GpsRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.timestamp);
    let t0 = sorted[0].timestamp;
    let step = map.time_step_s();

    let mut bins: BTreeMap<i64, CellId> = BTreeMap::new();
    for rec in &sorted {
        if let Ok(cell) = map.cell_of_coords(rec.lat, rec.lon) {
            let dt = (rec.timestamp - t0).num_seconds() as f64;
            let bin = (dt / step).floor() as i64;
            bins.insert(bin, cell); // later fixes in the bin overwrite
        }
    }
    if bins.is_empty() {
        return Err(Error::InvalidArgument(
            "no fixes fall inside the map bounding box".into(),
        ));
    }

    let first = *bins.keys().next().unwrap();
    let last = *bins.keys().last().unwrap();
    let mut steps = Vec::with_capacity((last - first + 1) as usize);
    let mut current = bins[&first];
    for bin in first..=last {
        if let Some(&cell) = bins.get(&bin) {
            current = cell;
        }
        steps.push(((bin - first) as u32, current));
    }
    Trajectory::new(sorted[0].id.clone(), steps)
}

/// Writes the normalized per-trajectory CSV: header then `t,cell_index`.
pub fn write_normalized_csv<W: Write>(trajectory: &Trajectory, mut w: W) -> Result<()> {
    writeln!(w, "t,cell_index")?;
    for &(t, cell) in trajectory.steps() {
        writeln!(w, "{t},{}", cell.0)?;
    }
    Ok(())
}

/// Reads the normalized CSV back; the user id comes from the caller.
pub fn read_normalized_csv<R: BufRead>(reader: R, user_id: &str) -> Result<Trajectory> {
    let mut steps = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == "t,cell_index" {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |tok: Option<&str>, what: &str| -> Result<u32> {
            tok.and_then(|t| t.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    message: format!("bad {what} in `{line}`"),
                })
        };
        let t = parse(parts.next(), "timestep")?;
        let cell = parse(parts.next(), "cell index")?;
        steps.push((t, CellId(cell)));
    }
    if steps.is_empty() {
        return Err(Error::EmptyInput("normalized trajectory CSV"));
    }
    Trajectory::new(user_id, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use std::io::Cursor;

    fn map() -> GridMap {
        // paper-style defaults: 620 m cells, 177 s bins
        GridMap::new(8, 8, 620.0, (39.8, 116.2), 177.0).unwrap()
    }

    fn ts(secs: i64) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2008, 2, 2)
            .unwrap()
            .and_hms_opt(13, 30, 44)
            .unwrap()
            + chrono::Duration::seconds(secs)
    }

    #[test]
    fn tdrive_line_parses() {
        let (recs, report) =
            parse_tdrive(Cursor::new("1,2008-02-02 13:30:44,116.36422,39.88781\n")).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].id, "1");
        assert_eq!(recs[0].lon, 116.36422);
        assert_eq!(recs[0].lat, 39.88781);
        assert!(report.issues.is_empty());
    }

    #[test]
    fn empty_stream_is_fatal() {
        assert!(matches!(
            parse_tdrive(Cursor::new("")),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn malformed_lines_are_collected_not_fatal() {
        let text = "1,2008-02-02 13:30:44,116.3,39.9\nbad,line\n1,2008-02-02 13:33:41,116.31,39.9\n";
        let (recs, report) = parse_tdrive(Cursor::new(text)).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].line, 2);
    }

    #[test]
    fn all_malformed_is_fatal() {
        assert!(matches!(
            parse_tdrive(Cursor::new("x\ny\n")),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn geolife_skips_preamble_and_maps_fields() {
        let mut text = String::new();
        for i in 0..6 {
            text.push_str(&format!("header {i}\n"));
        }
        text.push_str("39.88781,116.36422,0,492,39480.5,2008-02-02,13:30:44\n");
        let (recs, report) = parse_geolife(Cursor::new(text), "007").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].id, "007");
        assert_eq!(recs[0].lat, 39.88781);
        assert_eq!(recs[0].lon, 116.36422);
        assert_eq!(recs[0].timestamp, ts(0));
        assert!(report.issues.is_empty());
    }

    fn record_at(map: &GridMap, cell: CellId, secs: i64) -> GpsRecord {
        let (lat, lon) = map.center_coords(cell);
        GpsRecord {
            id: "u".into(),
            timestamp: ts(secs),
            lon,
            lat,
        }
    }

    #[test]
    fn one_fix_per_bin() {
        let m = map();
        let recs = vec![
            record_at(&m, CellId(0), 0),
            record_at(&m, CellId(1), 177),
            record_at(&m, CellId(2), 354),
        ];
        let tr = discretize(&recs, &m).unwrap();
        let cells: Vec<u32> = tr.cells().map(|c| c.0).collect();
        assert_eq!(cells, vec![0, 1, 2]);
        let times: Vec<u32> = tr.steps().iter().map(|&(t, _)| t).collect();
        assert_eq!(times, vec![0, 1, 2]);
    }

    #[test]
    fn last_fix_in_bin_wins() {
        let m = map();
        let recs = vec![
            record_at(&m, CellId(0), 0),
            record_at(&m, CellId(5), 100), // same bin, later fix
            record_at(&m, CellId(1), 200),
        ];
        let tr = discretize(&recs, &m).unwrap();
        let cells: Vec<u32> = tr.cells().map(|c| c.0).collect();
        assert_eq!(cells, vec![5, 1]);
    }

    #[test]
    fn gaps_carry_forward() {
        let m = map();
        let recs = vec![
            record_at(&m, CellId(3), 0),
            record_at(&m, CellId(9), 4 * 177),
        ];
        let tr = discretize(&recs, &m).unwrap();
        let cells: Vec<u32> = tr.cells().map(|c| c.0).collect();
        assert_eq!(cells, vec![3, 3, 3, 3, 9]);
    }

    #[test]
    fn leading_out_of_bounds_bins_dropped() {
        let m = map();
        let mut recs = vec![GpsRecord {
            id: "u".into(),
            timestamp: ts(0),
            lon: 10.0,
            lat: 10.0,
        }];
        recs.push(record_at(&m, CellId(7), 2 * 177));
        recs.push(record_at(&m, CellId(8), 3 * 177));
        let tr = discretize(&recs, &m).unwrap();
        let steps: Vec<(u32, u32)> = tr.steps().iter().map(|&(t, c)| (t, c.0)).collect();
        assert_eq!(steps, vec![(0, 7), (1, 8)]);

        let out_only = vec![recs[0].clone()];
        assert!(discretize(&out_only, &m).is_err());
    }

    #[test]
    fn synthetic_round_trip_is_exact() {
        let m = map();
        let cells: Vec<u32> = vec![0, 1, 2, 10, 10, 18, 19, 27, 35, 34];
        let recs: Vec<GpsRecord> = cells
            .iter()
            .enumerate()
            .map(|(i, &c)| record_at(&m, CellId(c), i as i64 * 177))
            .collect();
        let tr = discretize(&recs, &m).unwrap();
        let got: Vec<u32> = tr.cells().map(|c| c.0).collect();
        assert_eq!(got, cells);
    }

    #[test]
    fn normalized_csv_round_trip() {
        let tr = Trajectory::new("u", vec![(0, CellId(4)), (1, CellId(5)), (2, CellId(4))])
            .unwrap();
        let mut buf = Vec::new();
        write_normalized_csv(&tr, &mut buf).unwrap();
        let back = read_normalized_csv(Cursor::new(buf), "u").unwrap();
        assert_eq!(back, tr);
    }
}
