//! Hit ratios on a test set and side-by-side report tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::engine::{EngineReport, StateGrid};
use crate::error::{Error, Result};
use crate::quantizer::State;
use crate::series::{Station, TestSet};

/// Output state per position; `None` for a position left without a value.
pub type Outcomes = HashMap<(usize, usize), Option<State>>;

pub fn outcomes_from_report(report: &EngineReport) -> Outcomes {
    report
        .outcomes
        .iter()
        .map(|o| ((o.station, o.t), o.outcome.state()))
        .collect()
}

/// Every position of a state grid.
pub fn outcomes_from_grid(grid: &StateGrid) -> Outcomes {
    grid.iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(t, s)| ((i, t), *s)))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub hits: usize,
    pub count: usize,
}

impl Tally {
    pub fn ratio(&self) -> Option<f64> {
        (self.count > 0).then(|| self.hits as f64 / self.count as f64)
    }

    fn add(&mut self, hit: bool) {
        self.count += 1;
        self.hits += usize::from(hit);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationEval {
    pub station_id: String,
    pub overall: Tally,
    /// Keyed by the true state; only states present in the test set.
    pub intervals: BTreeMap<State, Tally>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// One entry per station, in grid order.
    pub stations: Vec<StationEval>,
}

impl EvalReport {
    /// Pooled over all stations.
    pub fn pooled(&self) -> StationEval {
        let mut all = StationEval {
            station_id: "all".into(),
            overall: Tally::default(),
            intervals: BTreeMap::new(),
        };
        for s in &self.stations {
            all.overall.hits += s.overall.hits;
            all.overall.count += s.overall.count;
            for (k, t) in &s.intervals {
                let e = all.intervals.entry(*k).or_default();
                e.hits += t.hits;
                e.count += t.count;
            }
        }
        all
    }

    /// CSV `station_id,interval,hits,count`; `interval` is `overall` or a state.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["station_id", "interval", "hits", "count"])?;
        for s in &self.stations {
            w.write_record([
                s.station_id.as_str(),
                "overall",
                &s.overall.hits.to_string(),
                &s.overall.count.to_string(),
            ])?;
            for (k, t) in &s.intervals {
                w.write_record([
                    s.station_id.clone(),
                    k.to_string(),
                    t.hits.to_string(),
                    t.count.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`EvalReport::write_csv`]. Stations keep their first
    /// appearance order.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let mut stations: Vec<StationEval> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = |c: usize| rec.get(c).unwrap_or("");
            let num = |c: usize| {
                field(c).parse::<usize>().map_err(|_| Error::UnparseableValue {
                    value: field(c).to_string(),
                    line,
                })
            };
            let tally = Tally {
                hits: num(2)?,
                count: num(3)?,
            };
            if tally.hits > tally.count {
                return Err(Error::Format {
                    path: "evaluation".into(),
                    reason: format!("line {line}: more hits than positions"),
                });
            }
            let id = field(0);
            if stations.last().is_none_or(|s| s.station_id != id) {
                if stations.iter().any(|s| s.station_id == id) {
                    return Err(Error::DuplicateStation(id.to_string()));
                }
                stations.push(StationEval {
                    station_id: id.to_string(),
                    overall: Tally::default(),
                    intervals: BTreeMap::new(),
                });
            }
            let st = stations.last_mut().expect("just pushed");
            match field(1) {
                "overall" => st.overall = tally,
                k => {
                    let k: State = k.parse().map_err(|_| Error::UnparseableValue {
                        value: k.to_string(),
                        line,
                    })?;
                    st.intervals.insert(k, tally);
                }
            }
        }
        Ok(Self { stations })
    }
}

/// A test position is a hit when its output state equals its true state.
/// Positions left without a value are misses.
pub fn evaluate(stations: &[Station], test: &TestSet, outcomes: &Outcomes) -> Result<EvalReport> {
    let mut evals: Vec<StationEval> = stations
        .iter()
        .map(|s| StationEval {
            station_id: s.id.clone(),
            overall: Tally::default(),
            intervals: BTreeMap::new(),
        })
        .collect();
    for e in &test.entries {
        let Some(out) = outcomes.get(&(e.station, e.t)) else {
            return Err(Error::MissingOutcome {
                station: stations
                    .get(e.station)
                    .map_or_else(|| e.station.to_string(), |s| s.id.clone()),
                t: e.t + 1,
            });
        };
        let ev = evals
            .get_mut(e.station)
            .ok_or_else(|| Error::UnknownStation(e.station.to_string()))?;
        let hit = *out == Some(e.state);
        ev.overall.add(hit);
        ev.intervals.entry(e.state).or_default().add(hit);
    }
    Ok(EvalReport { stations: evals })
}

/// Two reports on the same test set, shown side by side.
#[derive(Debug, Clone)]
pub struct Comparison<'a> {
    pub title: &'a str,
    pub automaton: &'a EvalReport,
    pub kalman: &'a EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub text: String,
    pub csv: String,
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn milli(v: f64) -> i64 {
    fmt3(v).replace('.', "").parse().expect("formatted ratio")
}

fn cell(own: Option<f64>, other: Option<f64>) -> (String, bool) {
    match own {
        None => (String::new(), false),
        Some(v) => {
            let best = other.is_some_and(|o| milli(v) > milli(o));
            (fmt3(v), best)
        }
    }
}

/// Text tables (one per method) plus a CSV twin with columns
/// `table,station_id,column,value,best`. Ratios print to three decimals;
/// a `*` marks a value strictly better than its counterpart at that precision.
pub fn render_report(comparisons: &[Comparison<'_>]) -> Result<RenderedReport> {
    let mut text = String::new();
    let mut csv_out = csv::Writer::from_writer(Vec::new());
    csv_out.write_record(["table", "station_id", "column", "value", "best"])?;

    for cmp in comparisons {
        let ids = |r: &EvalReport| r.stations.iter().map(|s| s.station_id.clone()).collect::<Vec<_>>();
        if ids(cmp.automaton) != ids(cmp.kalman) {
            return Err(Error::MismatchedStations);
        }
        let ca_rows: Vec<StationEval> = cmp
            .automaton
            .stations
            .iter()
            .cloned()
            .chain(std::iter::once(cmp.automaton.pooled()))
            .collect();
        let k_rows: Vec<StationEval> = cmp
            .kalman
            .stations
            .iter()
            .cloned()
            .chain(std::iter::once(cmp.kalman.pooled()))
            .collect();
        let columns: Vec<State> = ca_rows
            .iter()
            .chain(&k_rows)
            .flat_map(|s| s.intervals.keys().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let id_width = ca_rows.iter().map(|s| s.station_id.len()).max().unwrap_or(0).max(7);

        for (method, own, other) in [
            ("cellular automata", &ca_rows, &k_rows),
            ("Kalman", &k_rows, &ca_rows),
        ] {
            let table = format!("{} / {}", cmp.title, method);
            writeln!(text, "{table}").unwrap();
            write!(text, "{:<id_width$}  {:<8}", "station", "overall").unwrap();
            for c in &columns {
                write!(text, "  {c:<6}").unwrap();
            }
            let trimmed = text.trim_end_matches(' ').len();
            text.truncate(trimmed);
            writeln!(text).unwrap();
            for (row, peer) in own.iter().zip(other.iter()) {
                write!(text, "{:<id_width$}", row.station_id).unwrap();
                let mut emit = |column: String, own: Option<f64>, peer: Option<f64>, width: usize| {
                    let (v, best) = cell(own, peer);
                    let shown = if best { format!("{v}*") } else { v.clone() };
                    write!(text, "  {shown:<width$}").unwrap();
                    csv_out
                        .write_record([
                            table.as_str(),
                            row.station_id.as_str(),
                            column.as_str(),
                            v.as_str(),
                            if best { "1" } else { "0" },
                        ])
                        .map_err(Error::from)
                };
                emit("overall".into(), row.overall.ratio(), peer.overall.ratio(), 8)?;
                for c in &columns {
                    let get = |s: &StationEval| s.intervals.get(c).and_then(Tally::ratio);
                    emit(c.to_string(), get(row), get(peer), 6)?;
                }
                let trimmed = text.trim_end_matches(' ').len();
                text.truncate(trimmed);
                writeln!(text).unwrap();
            }
            writeln!(text).unwrap();
        }
    }
    let csv = String::from_utf8(csv_out.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("csv output is utf-8");
    Ok(RenderedReport { text, csv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::TestEntry;

    fn stations(n: usize) -> Vec<Station> {
        (0..n).map(|i| Station::new(format!("c{}", i + 1), 0.0, 0.0)).collect()
    }

    fn entry(station: usize, t: usize, state: State) -> TestEntry {
        TestEntry {
            station,
            t,
            value: f64::from(state),
            state,
        }
    }

    #[test]
    fn hand_count() {
        let test = TestSet {
            entries: vec![entry(0, 1, 0), entry(0, 2, 0), entry(0, 3, 1)],
        };
        let outcomes: Outcomes = [((0, 1), Some(0)), ((0, 2), Some(1)), ((0, 3), Some(1))]
            .into_iter()
            .collect();
        let r = evaluate(&stations(1), &test, &outcomes).unwrap();
        let s = &r.stations[0];
        assert_eq!(s.overall, Tally { hits: 2, count: 3 });
        assert!((s.overall.ratio().unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.intervals[&0].ratio(), Some(0.5));
        assert_eq!(s.intervals[&1].ratio(), Some(1.0));
        assert_eq!(s.intervals.len(), 2);
    }

    #[test]
    fn perfect_outputs_score_one() {
        let test = TestSet {
            entries: vec![entry(0, 1, 3), entry(1, 4, 0), entry(1, 5, 2)],
        };
        let outcomes: Outcomes = test
            .entries
            .iter()
            .map(|e| ((e.station, e.t), Some(e.state)))
            .collect();
        let r = evaluate(&stations(2), &test, &outcomes).unwrap();
        for s in &r.stations {
            assert_eq!(s.overall.ratio(), Some(1.0));
            assert!(s.intervals.values().all(|t| t.ratio() == Some(1.0)));
        }
    }

    #[test]
    fn unfilled_is_a_miss_in_its_interval() {
        let test = TestSet {
            entries: vec![entry(0, 1, 4)],
        };
        let outcomes: Outcomes = [((0, 1), None)].into_iter().collect();
        let r = evaluate(&stations(1), &test, &outcomes).unwrap();
        assert_eq!(r.stations[0].intervals[&4], Tally { hits: 0, count: 1 });
    }

    #[test]
    fn missing_outcome_is_an_error() {
        let test = TestSet {
            entries: vec![entry(0, 1, 4)],
        };
        assert!(matches!(
            evaluate(&stations(1), &test, &Outcomes::new()),
            Err(Error::MissingOutcome { t: 2, .. })
        ));
    }

    fn report(ratios: &[(usize, usize)]) -> EvalReport {
        EvalReport {
            stations: ratios
                .iter()
                .enumerate()
                .map(|(i, &(hits, count))| StationEval {
                    station_id: format!("c{}", i + 1),
                    overall: Tally { hits, count },
                    intervals: [(0, Tally { hits, count })].into_iter().collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn identical_reports_have_no_marks() {
        let a = report(&[(3, 4), (1, 3)]);
        let r = render_report(&[Comparison {
            title: "fill",
            automaton: &a,
            kalman: &a,
        }])
        .unwrap();
        assert!(!r.text.contains('*'));
        assert!(r.csv.lines().skip(1).all(|l| l.ends_with(",0")));
    }

    #[test]
    fn strictly_better_value_is_marked() {
        let ca = report(&[(717, 1000)]);
        let k = report(&[(344, 1000)]);
        let r = render_report(&[Comparison {
            title: "fill",
            automaton: &ca,
            kalman: &k,
        }])
        .unwrap();
        assert!(r.text.contains("0.717*"));
        assert!(r.text.contains("0.344"));
        assert!(!r.text.contains("0.344*"));
        assert!(r.csv.contains("fill / cellular automata,c1,overall,0.717,1"));
        assert!(r.csv.contains("fill / Kalman,c1,overall,0.344,0"));
    }

    #[test]
    fn equal_at_three_decimals_is_not_marked() {
        let ca = report(&[(7171, 10000)]);
        let k = report(&[(7169, 10000)]);
        let r = render_report(&[Comparison {
            title: "fill",
            automaton: &ca,
            kalman: &k,
        }])
        .unwrap();
        assert!(!r.text.contains('*'));
    }

    #[test]
    fn absent_interval_is_blank() {
        let mut ca = report(&[(1, 2), (1, 1)]);
        ca.stations[1].intervals = [(2, Tally { hits: 1, count: 1 })].into_iter().collect();
        let r = render_report(&[Comparison {
            title: "fill",
            automaton: &ca,
            kalman: &ca,
        }])
        .unwrap();
        assert!(r.csv.contains("fill / Kalman,c2,0,,0"));
        assert!(r.csv.contains("fill / Kalman,c1,2,,0"));
        let row = r.text.lines().find(|l| l.starts_with("c1")).unwrap();
        assert!(row.ends_with("0.500"), "{row:?}");
    }

    #[test]
    fn mismatched_stations_rejected() {
        let a = report(&[(1, 2)]);
        let b = report(&[(1, 2), (1, 2)]);
        assert!(matches!(
            render_report(&[Comparison {
                title: "x",
                automaton: &a,
                kalman: &b,
            }]),
            Err(Error::MismatchedStations)
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut r = report(&[(3, 4), (0, 2)]);
        r.stations[1].intervals.insert(3, Tally { hits: 0, count: 1 });
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(EvalReport::read_csv(buf.as_slice()).unwrap(), r);
    }

    #[test]
    fn overall_equals_sum_of_intervals() {
        let test = TestSet {
            entries: (0..40).map(|k| entry(k % 3, k, (k % 5) as State)).collect(),
        };
        let outcomes: Outcomes = test
            .entries
            .iter()
            .map(|e| ((e.station, e.t), Some(((e.t * 7) % 5) as State)))
            .collect();
        let r = evaluate(&stations(3), &test, &outcomes).unwrap();
        for s in &r.stations {
            let hits: usize = s.intervals.values().map(|t| t.hits).sum();
            let count: usize = s.intervals.values().map(|t| t.count).sum();
            assert_eq!((hits, count), (s.overall.hits, s.overall.count));
        }
    }
}
