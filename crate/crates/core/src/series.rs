//! Correlated series storage, CSV ingestion, test-gap insertion and
//! candidate neighbor sets.
//!
//! Instants are 0-based in memory and 1-based in every file.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quantizer::{Quantizer, State};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Station {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

impl Station {
    pub fn new(id: impl Into<String>, x: f64, y: f64) -> Self {
        Self { id: id.into(), x, y }
    }

    pub fn distance(&self, other: &Station) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// `p` stations by `T` instants of measurements; `None` is a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesGrid {
    stations: Vec<Station>,
    values: Vec<Vec<Option<f64>>>,
}

impl SeriesGrid {
    pub fn new(stations: Vec<Station>, values: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if stations.is_empty() {
            return Err(Error::InvalidParameter("at least one station required".into()));
        }
        if stations.len() != values.len() {
            return Err(Error::InvalidParameter(format!(
                "{} stations but {} series",
                stations.len(),
                values.len()
            )));
        }
        let horizon = values[0].len();
        if horizon < 2 {
            return Err(Error::InvalidParameter(format!(
                "horizon must be >= 2, got {horizon}"
            )));
        }
        if values.iter().any(|row| row.len() != horizon) {
            return Err(Error::InvalidParameter("ragged series rows".into()));
        }
        for v in values.iter().flatten().flatten() {
            if !v.is_finite() {
                return Err(Error::NonFinite(*v));
            }
            if *v < 0.0 {
                return Err(Error::NegativeMeasurement(*v));
            }
        }
        let mut seen = HashMap::new();
        for s in &stations {
            if seen.insert(s.id.as_str(), ()).is_some() {
                return Err(Error::DuplicateStation(s.id.clone()));
            }
        }
        Ok(Self { stations, values })
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn num_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn horizon(&self) -> usize {
        self.values[0].len()
    }

    /// Station-major matrix, `values()[i][t]`.
    pub fn values(&self) -> &[Vec<Option<f64>>] {
        &self.values
    }

    pub fn get(&self, station: usize, t: usize) -> Option<f64> {
        self.values[station][t]
    }

    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }

    pub fn non_gap_count(&self, station: usize) -> usize {
        self.values[station].iter().filter(|v| v.is_some()).count()
    }

    /// Read the two CSV files. `horizon` declares `T`; when absent the largest
    /// instant found in the series file is used.
    pub fn load_csv(
        stations_path: impl AsRef<Path>,
        series_path: impl AsRef<Path>,
        horizon: Option<usize>,
    ) -> Result<Self> {
        let stations = read_stations(std::fs::File::open(stations_path)?)?;
        Self::from_series_reader(stations, std::fs::File::open(series_path)?, horizon)
    }

    pub fn from_series_reader<R: Read>(
        stations: Vec<Station>,
        series: R,
        horizon: Option<usize>,
    ) -> Result<Self> {
        let ids: HashMap<&str, usize> = {
            let mut ids = HashMap::new();
            for (i, s) in stations.iter().enumerate() {
                if ids.insert(s.id.as_str(), i).is_some() {
                    return Err(Error::DuplicateStation(s.id.clone()));
                }
            }
            ids
        };

        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(series);
        let headers = rdr.headers()?.clone();
        let mut entries: Vec<(usize, i64, Option<f64>)> = Vec::new();
        if !headers.is_empty() {
            let col = |name: &str| {
                headers.iter().position(|h| h == name).ok_or_else(|| Error::Format {
                    path: "series".into(),
                    reason: format!("missing column `{name}`"),
                })
            };
            let (c_id, c_t, c_v) = (col("station_id")?, col("t")?, col("value")?);
            for rec in rdr.records() {
                let rec = rec?;
                let line = rec.position().map_or(0, |p| p.line());
                let field = |c: usize| rec.get(c).unwrap_or("");
                let id = field(c_id);
                let station = *ids
                    .get(id)
                    .ok_or_else(|| Error::UnknownStation(id.to_string()))?;
                let t = field(c_t).parse::<i64>().map_err(|_| Error::UnparseableValue {
                    value: field(c_t).to_string(),
                    line,
                })?;
                let raw = field(c_v);
                let value = if raw == "NA" {
                    None
                } else {
                    let v = raw.parse::<f64>().map_err(|_| Error::UnparseableValue {
                        value: raw.to_string(),
                        line,
                    })?;
                    if !v.is_finite() {
                        return Err(Error::UnparseableValue {
                            value: raw.to_string(),
                            line,
                        });
                    }
                    if v < 0.0 {
                        return Err(Error::NegativeMeasurement(v));
                    }
                    Some(v)
                };
                entries.push((station, t, value));
            }
        }

        let horizon = match horizon {
            Some(h) => h,
            None => entries.iter().map(|e| e.1).max().unwrap_or(0).max(0) as usize,
        };
        let mut values = vec![vec![None; horizon]; stations.len()];
        let mut seen = vec![vec![false; horizon]; stations.len()];
        for (station, t, value) in entries {
            if t < 1 || t as usize > horizon {
                return Err(Error::InstantOutOfRange { t, horizon });
            }
            let ti = t as usize - 1;
            if std::mem::replace(&mut seen[station][ti], true) {
                return Err(Error::DuplicateEntry {
                    station: stations[station].id.clone(),
                    t: t as usize,
                });
            }
            values[station][ti] = value;
        }
        Self::new(stations, values)
    }

    /// Write in the input schema `station_id,t,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["station_id", "t", "value"])?;
        for (i, s) in self.stations.iter().enumerate() {
            for (t, v) in self.values[i].iter().enumerate() {
                w.write_record([s.id.clone(), (t + 1).to_string(), fmt_value(*v)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_stations_csv<W: Write>(&self, out: W) -> Result<()> {
        write_stations(&self.stations, out)
    }

    pub(crate) fn with_values(&self, values: Vec<Vec<Option<f64>>>) -> Result<Self> {
        Self::new(self.stations.clone(), values)
    }
}

pub(crate) fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn read_stations<R: Read>(input: R) -> Result<Vec<Station>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut stations = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |c: usize| {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::UnparseableValue {
                value: raw.to_string(),
                line,
            })
        };
        let id = rec.get(0).unwrap_or("").to_string();
        if seen.insert(id.clone(), ()).is_some() {
            return Err(Error::DuplicateStation(id));
        }
        stations.push(Station::new(id, num(1)?, num(2)?));
    }
    Ok(stations)
}

pub fn write_stations<W: Write>(stations: &[Station], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "x", "y"])?;
    for s in stations {
        w.write_record([s.id.clone(), s.x.to_string(), s.y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One artificially hidden measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TestEntry {
    pub station: usize,
    pub t: usize,
    pub value: f64,
    pub state: State,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TestSet {
    pub entries: Vec<TestEntry>,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV `station_id,t,value,state`.
    pub fn write_csv<W: Write>(&self, stations: &[Station], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["station_id", "t", "value", "state"])?;
        for e in &self.entries {
            w.write_record([
                stations[e.station].id.clone(),
                (e.t + 1).to_string(),
                e.value.to_string(),
                e.state.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(stations: &[Station], input: R) -> Result<Self> {
        let ids: HashMap<&str, usize> = stations
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = |c: usize| rec.get(c).unwrap_or("");
            let bad = |c: usize| Error::UnparseableValue {
                value: field(c).to_string(),
                line,
            };
            let station = *ids
                .get(field(0))
                .ok_or_else(|| Error::UnknownStation(field(0).to_string()))?;
            let t: usize = field(1).parse().map_err(|_| bad(1))?;
            if t == 0 {
                return Err(Error::InstantOutOfRange { t: 0, horizon: 0 });
            }
            entries.push(TestEntry {
                station,
                t: t - 1,
                value: field(2).parse().map_err(|_| bad(2))?,
                state: field(3).parse().map_err(|_| bad(3))?,
            });
        }
        Ok(Self { entries })
    }
}

/// Hide `floor(fraction · non-gap count)` entries of every station, chosen
/// uniformly without replacement. The hidden values and their states under
/// `quantizer` form the test set.
pub fn insert_test_gaps(
    grid: &SeriesGrid,
    fraction: f64,
    seed: u64,
    quantizer: &Quantizer,
) -> Result<(SeriesGrid, TestSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gap fraction must be in (0,1), got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = grid.values().to_vec();
    let mut entries = Vec::new();
    for (i, row) in values.iter_mut().enumerate() {
        let observed: Vec<usize> = (0..row.len()).filter(|&t| row[t].is_some()).collect();
        let count = (fraction * observed.len() as f64).floor() as usize;
        let mut picked: Vec<usize> = index::sample(&mut rng, observed.len(), count)
            .into_iter()
            .map(|k| observed[k])
            .collect();
        picked.sort_unstable();
        for t in picked {
            let value = row[t].take().expect("picked among observed entries");
            entries.push(TestEntry {
                station: i,
                t,
                value,
                state: quantizer.quantize(value, 1)?,
            });
        }
    }
    Ok((grid.with_values(values)?, TestSet { entries }))
}

/// Candidate set `M_i`: the center first, then the `m - 1` nearest other
/// stations by Euclidean distance, ties broken by file order.
pub fn nearest_candidates(grid: &SeriesGrid, center: usize, m: usize) -> Result<Vec<usize>> {
    nearest_stations(grid.stations(), center, m)
}

/// [`nearest_candidates`] over a bare station list.
pub fn nearest_stations(stations: &[Station], center: usize, m: usize) -> Result<Vec<usize>> {
    let p = stations.len();
    if center >= p {
        return Err(Error::InvalidParameter(format!(
            "station index {center} out of range"
        )));
    }
    if m == 0 || m > p {
        return Err(Error::InvalidParameter(format!(
            "candidate set size must be in 1..={p}, got {m}"
        )));
    }
    let mut others: Vec<(f64, usize)> = (0..p)
        .filter(|&j| j != center)
        .map(|j| (stations[center].distance(&stations[j]), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = Vec::with_capacity(m);
    out.push(center);
    out.extend(others.into_iter().take(m - 1).map(|(_, j)| j));
    Ok(out)
}

/// Provenance of a value in an output series file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Observed,
    Filled,
    Predicted,
    Unfilled,
    KalmanFilled,
    KalmanPredicted,
    Skipped,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Observed => "observed",
            Source::Filled => "filled",
            Source::Predicted => "predicted",
            Source::Unfilled => "unfilled",
            Source::KalmanFilled => "kalman_filled",
            Source::KalmanPredicted => "kalman_predicted",
            Source::Skipped => "skipped",
        }
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Source::Observed,
            Source::Filled,
            Source::Predicted,
            Source::Unfilled,
            Source::KalmanFilled,
            Source::KalmanPredicted,
            Source::Skipped,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::Format {
            path: "output series".into(),
            reason: format!("unknown source `{s}`"),
        })
    }
}

/// One line of an output series file.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputRecord {
    pub station: usize,
    pub t: usize,
    pub value: Option<f64>,
    pub source: Source,
}

/// CSV `station_id,t,value,source`, rows sorted by station then instant.
pub fn write_output_series<W: Write>(
    stations: &[Station],
    records: &[OutputRecord],
    out: W,
) -> Result<()> {
    let mut sorted: BTreeMap<(usize, usize), &OutputRecord> = BTreeMap::new();
    for r in records {
        sorted.insert((r.station, r.t), r);
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["station_id", "t", "value", "source"])?;
    for r in sorted.values() {
        w.write_record([
            stations[r.station].id.clone(),
            (r.t + 1).to_string(),
            fmt_value(r.value),
            r.source.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_output_series`].
pub fn read_output_series<R: Read>(stations: &[Station], input: R) -> Result<Vec<OutputRecord>> {
    let ids: HashMap<&str, usize> = stations
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |c: usize| rec.get(c).unwrap_or("");
        let bad = |c: usize| Error::UnparseableValue {
            value: field(c).to_string(),
            line,
        };
        let station = *ids
            .get(field(0))
            .ok_or_else(|| Error::UnknownStation(field(0).to_string()))?;
        let t: usize = field(1).parse().map_err(|_| bad(1))?;
        if t == 0 {
            return Err(Error::InstantOutOfRange { t: 0, horizon: 0 });
        }
        let value = match field(2) {
            "NA" => None,
            v => Some(v.parse::<f64>().map_err(|_| bad(2))?),
        };
        out.push(OutputRecord {
            station,
            t: t - 1,
            value,
            source: field(3).parse()?,
        });
    }
    Ok(out)
}
