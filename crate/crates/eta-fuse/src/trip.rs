//! Trip data model: orders, road topology, weather, and their text formats.
//!
//! A trip ("order") is a header of scalars plus two step sequences: the link
//! steps actually driven and the intersection (cross) steps between them.
//! All types are immutable after construction and the parsers are pure
//! functions of their input stream.
//!
//! File formats (UTF-8, one record per line):
//!
//! * trips: `order_id ata distance simple_eta driver_id slice_id date|`
//!   `link_id:link_time:link_ratio:link_status ...|cross_id:cross_time ...`
//!   — head fields single-space separated, the three sections separated by
//!   `|`, the cross section possibly empty, dates `YYYY-MM-DD`.
//! * road network: `link_id succ,succ,...` (one line per link with successors)
//! * weather: `date,weather_code,temp_low,temp_high`

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;

use chrono::NaiveDate;
use thiserror::Error;

/// Number of five-minute departure slices in a day.
pub const SLICES_PER_DAY: u16 = 288;

#[derive(Debug, Error)]
pub enum TripDataError {
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: field `{field}`: {msg}")]
    Invalid {
        line: usize,
        field: &'static str,
        msg: String,
    },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, TripDataError>;

/// One driven road segment of a trip.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkStep {
    pub link_id: u64,
    /// Estimated traversal time in seconds, >= 0.
    pub link_time: f64,
    /// Fraction of the link traversed, in [0, 1].
    pub link_ratio: f64,
    /// Road condition: 0 unknown, 1 free, 2 slow, 3 congested.
    pub link_status: u8,
}

/// One intersection traversal between links.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossStep {
    pub cross_id: u64,
    /// Delay in seconds, >= 0.
    pub cross_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripHeader {
    pub order_id: String,
    /// Actual travel time in seconds (the label), > 0.
    pub ata: f64,
    /// Trip distance in meters, > 0.
    pub distance: f64,
    /// The routing engine's naive estimate in seconds, > 0.
    pub simple_eta: f64,
    pub driver_id: u64,
    /// Five-minute departure bucket, 0..=287.
    pub slice_id: u16,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub header: TripHeader,
    /// Non-empty ordered link sequence.
    pub links: Vec<LinkStep>,
    /// Ordered cross sequence; may be empty, never longer than `links`.
    pub crosses: Vec<CrossStep>,
}

impl Trip {
    /// Link sequence length `s`.
    pub fn seq_len(&self) -> usize {
        self.links.len()
    }
}

/// Which end of an over-long link sequence to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Truncation {
    Front,
    Back,
}

impl Truncation {
    pub fn as_str(self) -> &'static str {
        match self {
            Truncation::Front => "front",
            Truncation::Back => "back",
        }
    }
}

impl std::str::FromStr for Truncation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "front" | "Front" => Ok(Truncation::Front),
            "back" | "Back" => Ok(Truncation::Back),
            other => Err(format!("unknown truncation mode `{other}`")),
        }
    }
}

/// Directed road topology: each link maps to its downstream successor links.
///
/// Degrees are derived at parse time for every link mentioned anywhere, so a
/// link that only ever appears as a successor still has an (out-degree 0)
/// entry.
#[derive(Debug, Clone, Default)]
pub struct RoadNetwork {
    successors: BTreeMap<u64, Vec<u64>>,
    in_degree: HashMap<u64, u32>,
    out_degree: HashMap<u64, u32>,
}

impl RoadNetwork {
    /// Builds a network from explicit adjacency, deriving degree counts.
    pub fn from_successors(successors: BTreeMap<u64, Vec<u64>>) -> Self {
        let mut in_degree: HashMap<u64, u32> = HashMap::new();
        let mut out_degree: HashMap<u64, u32> = HashMap::new();
        for (&link, succs) in &successors {
            out_degree.entry(link).or_insert(0);
            in_degree.entry(link).or_insert(0);
            *out_degree.get_mut(&link).unwrap() += succs.len() as u32;
            for &s in succs {
                *in_degree.entry(s).or_insert(0) += 1;
                out_degree.entry(s).or_insert(0);
            }
        }
        RoadNetwork {
            successors,
            in_degree,
            out_degree,
        }
    }

    pub fn successors(&self, link: u64) -> &[u64] {
        self.successors.get(&link).map_or(&[], Vec::as_slice)
    }

    /// Number of links with upstream edges into `link`; 0 for unknown links.
    pub fn in_degree(&self, link: u64) -> u32 {
        self.in_degree.get(&link).copied().unwrap_or(0)
    }

    /// Number of downstream successors of `link`; 0 for unknown links.
    pub fn out_degree(&self, link: u64) -> u32 {
        self.out_degree.get(&link).copied().unwrap_or(0)
    }

    /// Every link mentioned anywhere in the network.
    pub fn links(&self) -> impl Iterator<Item = u64> + '_ {
        self.out_degree.keys().copied()
    }

    pub fn num_links(&self) -> usize {
        self.out_degree.len()
    }

    pub fn edge_count(&self) -> u64 {
        self.successors.values().map(|v| v.len() as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherRecord {
    pub date: NaiveDate,
    pub weather_code: i32,
    pub temp_low: f64,
    pub temp_high: f64,
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

fn parse_num<T: std::str::FromStr>(raw: &str, line: usize, field: &'static str) -> Result<T> {
    raw.parse().map_err(|_| TripDataError::Invalid {
        line,
        field,
        msg: format!("cannot parse `{raw}`"),
    })
}

fn parse_date(raw: &str, line: usize, field: &'static str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|_| TripDataError::Invalid {
        line,
        field,
        msg: format!("cannot parse `{raw}` as YYYY-MM-DD"),
    })
}

fn invalid(line: usize, field: &'static str, msg: impl Into<String>) -> TripDataError {
    TripDataError::Invalid {
        line,
        field,
        msg: msg.into(),
    }
}

fn parse_trip_line(line_no: usize, line: &str) -> Result<Trip> {
    let mut sections = line.split('|');
    let head = sections.next().unwrap_or("");
    let links_sec = sections.next().ok_or_else(|| TripDataError::Malformed {
        line: line_no,
        msg: "missing link section".into(),
    })?;
    let crosses_sec = sections.next().ok_or_else(|| TripDataError::Malformed {
        line: line_no,
        msg: "missing cross section".into(),
    })?;
    if sections.next().is_some() {
        return Err(TripDataError::Malformed {
            line: line_no,
            msg: "more than three `|` sections".into(),
        });
    }

    let head_fields: Vec<&str> = head.split(' ').collect();
    if head_fields.len() != 7 {
        return Err(TripDataError::Malformed {
            line: line_no,
            msg: format!("expected 7 head fields, found {}", head_fields.len()),
        });
    }
    let order_id = head_fields[0].to_string();
    if order_id.is_empty() {
        return Err(invalid(line_no, "order_id", "empty"));
    }
    let ata: f64 = parse_num(head_fields[1], line_no, "ata")?;
    let distance: f64 = parse_num(head_fields[2], line_no, "distance")?;
    let simple_eta: f64 = parse_num(head_fields[3], line_no, "simple_eta")?;
    let driver_id: u64 = parse_num(head_fields[4], line_no, "driver_id")?;
    let slice_id: u16 = parse_num(head_fields[5], line_no, "slice_id")?;
    let date = parse_date(head_fields[6], line_no, "date")?;

    if !(ata.is_finite() && ata > 0.0) {
        return Err(invalid(line_no, "ata", "must be finite and > 0"));
    }
    if !(distance.is_finite() && distance > 0.0) {
        return Err(invalid(line_no, "distance", "must be finite and > 0"));
    }
    if !(simple_eta.is_finite() && simple_eta > 0.0) {
        return Err(invalid(line_no, "simple_eta", "must be finite and > 0"));
    }
    if slice_id >= SLICES_PER_DAY {
        return Err(invalid(line_no, "slice_id", "must be in 0..=287"));
    }

    let mut links = Vec::new();
    for step in links_sec.split(' ').filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = step.split(':').collect();
        if parts.len() != 4 {
            return Err(TripDataError::Malformed {
                line: line_no,
                msg: format!("link step `{step}` needs 4 `:`-separated fields"),
            });
        }
        let link_id: u64 = parse_num(parts[0], line_no, "link_id")?;
        let link_time: f64 = parse_num(parts[1], line_no, "link_time")?;
        let link_ratio: f64 = parse_num(parts[2], line_no, "link_ratio")?;
        let link_status: u8 = parse_num(parts[3], line_no, "link_status")?;
        if !(link_time.is_finite() && link_time >= 0.0) {
            return Err(invalid(line_no, "link_time", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&link_ratio) {
            return Err(invalid(line_no, "link_ratio", "must be in [0, 1]"));
        }
        if link_status > 3 {
            return Err(invalid(line_no, "link_status", "must be in 0..=3"));
        }
        links.push(LinkStep {
            link_id,
            link_time,
            link_ratio,
            link_status,
        });
    }
    if links.is_empty() {
        return Err(invalid(line_no, "links", "link sequence must be non-empty"));
    }

    let mut crosses = Vec::new();
    for step in crosses_sec.split(' ').filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = step.split(':').collect();
        if parts.len() != 2 {
            return Err(TripDataError::Malformed {
                line: line_no,
                msg: format!("cross step `{step}` needs 2 `:`-separated fields"),
            });
        }
        let cross_id: u64 = parse_num(parts[0], line_no, "cross_id")?;
        let cross_time: f64 = parse_num(parts[1], line_no, "cross_time")?;
        if !(cross_time.is_finite() && cross_time >= 0.0) {
            return Err(invalid(line_no, "cross_time", "must be finite and >= 0"));
        }
        crosses.push(CrossStep {
            cross_id,
            cross_time,
        });
    }
    if crosses.len() > links.len() {
        return Err(invalid(
            line_no,
            "crosses",
            "cross sequence longer than link sequence",
        ));
    }

    Ok(Trip {
        header: TripHeader {
            order_id,
            ata,
            distance,
            simple_eta,
            driver_id,
            slice_id,
            date,
        },
        links,
        crosses,
    })
}

/// Parses a trips stream, one trip per non-empty line.
pub fn parse_trips<R: BufRead>(reader: R) -> Result<Vec<Trip>> {
    let mut trips = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        trips.push(parse_trip_line(idx + 1, &line)?);
    }
    Ok(trips)
}

pub fn parse_trips_str(text: &str) -> Result<Vec<Trip>> {
    parse_trips(text.as_bytes())
}

/// Parses a road-network stream (`link_id succ,succ,...` per line).
///
/// Cycles are permitted; a repeated `link_id` line is an error.
pub fn parse_road_network<R: BufRead>(reader: R) -> Result<RoadNetwork> {
    let mut successors: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (link_raw, succ_raw) =
            line.split_once(' ')
                .ok_or_else(|| TripDataError::Malformed {
                    line: line_no,
                    msg: "expected `link_id successors`".into(),
                })?;
        let link: u64 = parse_num(link_raw, line_no, "link_id")?;
        let mut succs = Vec::new();
        for s in succ_raw.split(',').filter(|s| !s.is_empty()) {
            succs.push(parse_num::<u64>(s, line_no, "successor_id")?);
        }
        if succs.is_empty() {
            return Err(invalid(line_no, "successors", "empty successor list"));
        }
        if successors.insert(link, succs).is_some() {
            return Err(TripDataError::Duplicate {
                line: line_no,
                key: link_raw.to_string(),
            });
        }
    }
    Ok(RoadNetwork::from_successors(successors))
}

pub fn parse_road_network_str(text: &str) -> Result<RoadNetwork> {
    parse_road_network(text.as_bytes())
}

/// Parses a weather stream into a date-keyed table.
pub fn parse_weather<R: BufRead>(reader: R) -> Result<BTreeMap<NaiveDate, WeatherRecord>> {
    let mut out = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(TripDataError::Malformed {
                line: line_no,
                msg: format!("expected 4 comma-separated fields, found {}", parts.len()),
            });
        }
        let date = parse_date(parts[0], line_no, "date")?;
        let weather_code: i32 = parse_num(parts[1], line_no, "weather_code")?;
        let temp_low: f64 = parse_num(parts[2], line_no, "temp_low")?;
        let temp_high: f64 = parse_num(parts[3], line_no, "temp_high")?;
        if temp_low > temp_high {
            return Err(invalid(line_no, "temp_low", "temp_low > temp_high"));
        }
        let record = WeatherRecord {
            date,
            weather_code,
            temp_low,
            temp_high,
        };
        if out.insert(date, record).is_some() {
            return Err(TripDataError::Duplicate {
                line: line_no,
                key: parts[0].to_string(),
            });
        }
    }
    Ok(out)
}

pub fn parse_weather_str(text: &str) -> Result<BTreeMap<NaiveDate, WeatherRecord>> {
    parse_weather(text.as_bytes())
}

// ---------------------------------------------------------------------------
// Serialization (canonical form; shortest round-trip float formatting)
// ---------------------------------------------------------------------------

pub fn trip_to_line(trip: &Trip) -> String {
    let h = &trip.header;
    let mut out = String::new();
    write!(
        out,
        "{} {} {} {} {} {} {}|",
        h.order_id,
        h.ata,
        h.distance,
        h.simple_eta,
        h.driver_id,
        h.slice_id,
        h.date.format("%Y-%m-%d")
    )
    .unwrap();
    for (i, step) in trip.links.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(
            out,
            "{}:{}:{}:{}",
            step.link_id, step.link_time, step.link_ratio, step.link_status
        )
        .unwrap();
    }
    out.push('|');
    for (i, step) in trip.crosses.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{}:{}", step.cross_id, step.cross_time).unwrap();
    }
    out
}

pub fn trips_to_string(trips: &[Trip]) -> String {
    let mut out = String::new();
    for t in trips {
        out.push_str(&trip_to_line(t));
        out.push('\n');
    }
    out
}

/// Writes the network as `link_id succ,succ,...` lines sorted by link id.
pub fn road_network_to_string(network: &RoadNetwork) -> String {
    let mut out = String::new();
    for (link, succs) in &network.successors {
        let list: Vec<String> = succs.iter().map(u64::to_string).collect();
        writeln!(out, "{} {}", link, list.join(",")).unwrap();
    }
    out
}

pub fn weather_to_string(records: &BTreeMap<NaiveDate, WeatherRecord>) -> String {
    let mut out = String::new();
    for r in records.values() {
        writeln!(
            out,
            "{},{},{},{}",
            r.date.format("%Y-%m-%d"),
            r.weather_code,
            r.temp_low,
            r.temp_high
        )
        .unwrap();
    }
    out
}

// ---------------------------------------------------------------------------
// Trip transforms
// ---------------------------------------------------------------------------

/// Keeps at most `max_len` link steps, from the chosen end. Header and
/// crosses are untouched; trips already short enough come back unchanged.
pub fn truncate_links(trip: &Trip, max_len: usize, mode: Truncation) -> Trip {
    assert!(max_len >= 1, "max_len must be >= 1");
    if trip.links.len() <= max_len {
        return trip.clone();
    }
    let links = match mode {
        Truncation::Front => trip.links[..max_len].to_vec(),
        Truncation::Back => trip.links[trip.links.len() - max_len..].to_vec(),
    };
    Trip {
        header: trip.header.clone(),
        links,
        crosses: trip.crosses.clone(),
    }
}

/// Temporal holdout: trips strictly before `cutoff` train, the rest validate.
/// Order within each part is preserved.
pub fn split_by_date(trips: Vec<Trip>, cutoff: NaiveDate) -> (Vec<Trip>, Vec<Trip>) {
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for t in trips {
        if t.header.date < cutoff {
            train.push(t);
        } else {
            validation.push(t);
        }
    }
    (train, validation)
}
