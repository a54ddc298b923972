//! On-disk training artifacts and run outputs.
//!
//! A model directory holds:
//!
//! - `quantizer.txt`: `key = value` lines of the quantizer;
//! - `params.txt`: the GA parameters used, as `key = value` lines;
//! - `cell_<id>.genomes.csv`: `rank,fitness,g1,...,g<m-1>`, fittest first;
//! - `cell_<id>.candidates.json`: `{"center": id, "candidates": [id, ...]}`,
//!   the station behind each label position;
//! - `cell_<id>.history.csv`: `generation,best,mean,best_ever`.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::parse_key_values;
use crate::engine::{CellModel, EngineReport, Outcome, StateGrid};
use crate::error::{Error, Result};
use crate::eval::Outcomes;
use crate::evolution::{CellTraining, GaParams};
use crate::genome::Genome;
use crate::quantizer::Quantizer;
use crate::series::{OutputRecord, SeriesGrid, Source, Station, TestSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CandidateFile {
    center: String,
    candidates: Vec<String>,
}

fn cell_file(dir: &Path, id: &str, suffix: &str) -> PathBuf {
    dir.join(format!("cell_{id}.{suffix}"))
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| format_err(path, e.to_string()))
}

pub fn params_to_text(p: &GaParams) -> String {
    format!(
        "population = {}\ngenerations = {}\nelite-rate = {}\ncrossover-prob = {}\n\
         selection-pressure = {}\nweight-ratio = {}\nneighborhood-size = {}\n\
         candidates = {}\nmax-groups = {}\nseed = {}\n",
        p.population,
        p.generations,
        p.elite_rate,
        p.crossover_prob,
        p.selection_pressure,
        p.weight_ratio,
        p.neighborhood_size,
        p.candidates,
        p.max_groups,
        p.seed
    )
}

/// Write everything [`load_models`] needs plus the fitness histories.
pub fn save_training(
    dir: &Path,
    stations: &[Station],
    quantizer: &Quantizer,
    params: &GaParams,
    trainings: &[CellTraining],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("quantizer.txt"), quantizer.to_text())?;
    fs::write(dir.join("params.txt"), params_to_text(params))?;
    for tr in trainings {
        let id = &stations[tr.center].id;

        let mut w = csv::Writer::from_path(cell_file(dir, id, "genomes.csv"))?;
        let mut header = vec!["rank".to_string(), "fitness".to_string()];
        header.extend((1..=tr.candidates.len()).map(|k| format!("g{k}")));
        w.write_record(&header)?;
        for (rank, (genome, fit)) in tr.outcome.top.iter().enumerate() {
            let mut row = vec![(rank + 1).to_string(), fit.to_string()];
            row.extend(genome.to_csv_fields());
            w.write_record(&row)?;
        }
        w.flush()?;

        let side = CandidateFile {
            center: id.clone(),
            candidates: tr.candidates.iter().map(|&j| stations[j].id.clone()).collect(),
        };
        fs::write(
            cell_file(dir, id, "candidates.json"),
            serde_json::to_string_pretty(&side)? + "\n",
        )?;

        let mut w = csv::Writer::from_path(cell_file(dir, id, "history.csv"))?;
        w.write_record(["generation", "best", "mean", "best_ever"])?;
        for h in &tr.outcome.history {
            w.write_record([
                h.generation.to_string(),
                h.best.to_string(),
                h.mean.to_string(),
                h.best_ever.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn load_quantizer(dir: &Path) -> Result<Quantizer> {
    Quantizer::from_text(&read_file(&dir.join("quantizer.txt"))?)
}

/// Cell models for every station of `stations`, in station order.
pub fn load_models(dir: &Path, stations: &[Station]) -> Result<Vec<CellModel>> {
    let index: HashMap<&str, usize> = stations
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let lookup = |path: &Path, id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| format_err(path, format!("unknown station `{id}`")))
    };
    let mut models = Vec::with_capacity(stations.len());
    for (i, st) in stations.iter().enumerate() {
        let side_path = cell_file(dir, &st.id, "candidates.json");
        let side: CandidateFile = serde_json::from_str(&read_file(&side_path)?)?;
        if lookup(&side_path, &side.center)? != i {
            return Err(format_err(&side_path, "center does not match file name"));
        }
        let candidates: Vec<usize> = side
            .candidates
            .iter()
            .map(|id| lookup(&side_path, id))
            .collect::<Result<_>>()?;

        let path = cell_file(dir, &st.id, "genomes.csv");
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&path)?;
        let mut specs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != candidates.len() + 2 {
                return Err(format_err(
                    &path,
                    format!("expected {} labels per genome", candidates.len()),
                ));
            }
            let fit: f64 = rec[1]
                .parse()
                .map_err(|_| format_err(&path, format!("bad fitness `{}`", &rec[1])))?;
            let labels: Vec<u8> = rec
                .iter()
                .skip(2)
                .map(|f| f.parse().map_err(|_| format_err(&path, format!("bad label `{f}`"))))
                .collect::<Result<_>>()?;
            specs.push((Genome::new(labels).decode(&candidates, i)?, fit));
        }
        models.push(CellModel::new(i, specs)?);
    }
    Ok(models)
}

/// What kind of run produced a state grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Fill,
    Predict,
    KalmanFill,
    KalmanPredict,
}

/// Output rows for every position. Produced states are written as their
/// interval midpoints.
pub fn output_records(
    kind: RunKind,
    input: &SeriesGrid,
    states: &StateGrid,
    quantizer: &Quantizer,
) -> Result<Vec<OutputRecord>> {
    let mut out = Vec::with_capacity(input.num_stations() * input.horizon());
    for (i, row) in states.iter().enumerate() {
        for (t, state) in row.iter().enumerate() {
            let observed = input.get(i, t);
            let predicting = matches!(kind, RunKind::Predict | RunKind::KalmanPredict);
            let (value, source) = if (!predicting && observed.is_some()) || (predicting && t == 0) {
                (observed, Source::Observed)
            } else {
                match (state, kind) {
                    (Some(s), _) => {
                        let source = match kind {
                            RunKind::Fill => Source::Filled,
                            RunKind::Predict => Source::Predicted,
                            RunKind::KalmanFill => Source::KalmanFilled,
                            RunKind::KalmanPredict => Source::KalmanPredicted,
                        };
                        (Some(quantizer.representative(usize::from(*s), 1)?), source)
                    }
                    (None, RunKind::Fill | RunKind::Predict) => (None, Source::Unfilled),
                    (None, _) => (None, Source::Skipped),
                }
            };
            out.push(OutputRecord {
                station: i,
                t,
                value,
                source,
            });
        }
    }
    Ok(out)
}

/// Produced values (re-quantized) keyed by position; observed rows are left
/// out, so they never count as outputs.
pub fn outcomes_from_records(records: &[OutputRecord], quantizer: &Quantizer) -> Result<Outcomes> {
    records
        .iter()
        .filter(|r| r.source != Source::Observed)
        .map(|r| {
            let state = r.value.map(|v| quantizer.quantize(v, 1)).transpose()?;
            Ok(((r.station, r.t), state))
        })
        .collect()
}

/// CSV `station_id,t,outcome,strategy,true_state`. `outcome` is
/// `produced` or `unfilled`, `strategy` names the producing rule or the
/// reason nothing was produced; `true_state` is blank off the test set.
pub fn write_engine_report<W: Write>(
    stations: &[Station],
    report: &EngineReport,
    test: Option<&TestSet>,
    out: W,
) -> Result<()> {
    let truth: HashMap<(usize, usize), u8> = test
        .map(|ts| ts.entries.iter().map(|e| ((e.station, e.t), e.state)).collect())
        .unwrap_or_default();
    let mut rows: Vec<_> = report.outcomes.iter().collect();
    rows.sort_by_key(|o| (o.station, o.t));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["station_id", "t", "outcome", "strategy", "true_state"])?;
    for o in rows {
        let (outcome, strategy) = match o.outcome {
            Outcome::Value { strategy, .. } => ("produced", strategy.to_string()),
            Outcome::Unfilled(reason) => ("unfilled", reason.to_string()),
        };
        w.write_record([
            stations[o.station].id.clone(),
            (o.t + 1).to_string(),
            outcome.to_string(),
            strategy,
            truth.get(&(o.station, o.t)).map_or(String::new(), u8::to_string),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Put back the test entries of the first instant, which prediction needs.
pub fn restore_first_instant(gapped: &SeriesGrid, test: &TestSet) -> Result<SeriesGrid> {
    let mut values = gapped.values().to_vec();
    for e in test.entries.iter().filter(|e| e.t == 0) {
        values[e.station][0] = Some(e.value);
    }
    SeriesGrid::new(gapped.stations().to_vec(), values)
}

/// Test entries after the first instant.
pub fn without_first_instant(test: &TestSet) -> TestSet {
    TestSet {
        entries: test.entries.iter().filter(|e| e.t > 0).cloned().collect(),
    }
}

pub fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Read a `key = value` file into a lookup.
pub fn read_key_values(path: &Path) -> Result<HashMap<String, String>> {
    Ok(parse_key_values(&read_file(path)?)?.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::train_all;
    use crate::planted::{gen_planted, PlantedConfig};

    fn small() -> (SeriesGrid, Quantizer, GaParams) {
        let cfg = PlantedConfig {
            stations: 5,
            horizon: 80,
            candidates: 4,
            neighborhood_size: 3,
            max_groups: 2,
            zero_inflation: 0.5,
            ..PlantedConfig::default()
        };
        let (grid, _) = gen_planted(&cfg, 1).unwrap();
        let q = Quantizer::fit_range(&grid, 10).unwrap();
        let params = GaParams {
            population: 20,
            generations: 3,
            neighborhood_size: 3,
            candidates: 4,
            max_groups: 2,
            seed: 3,
            ..GaParams::default()
        };
        (grid, q, params)
    }

    #[test]
    fn models_round_trip_through_directory() {
        let (grid, q, params) = small();
        let trainings = train_all(&grid, &q, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_training(dir.path(), grid.stations(), &q, &params, &trainings).unwrap();
        assert_eq!(load_quantizer(dir.path()).unwrap(), q);
        let models = load_models(dir.path(), grid.stations()).unwrap();
        for (m, tr) in models.iter().zip(&trainings) {
            assert_eq!(m.specs.len(), tr.outcome.top.len());
            for ((spec, f), (g, gf)) in m.specs.iter().zip(&tr.outcome.top) {
                assert_eq!(*spec, g.decode(&tr.candidates, tr.center).unwrap());
                assert_eq!(f, gf);
            }
        }
        let hist = fs::read_to_string(dir.path().join("cell_s1.history.csv")).unwrap();
        assert_eq!(hist.lines().count(), 1 + 1 + params.generations);
        let kv = read_key_values(&dir.path().join("params.txt")).unwrap();
        assert_eq!(kv["population"], "20");
    }

    #[test]
    fn bad_genome_file_is_a_format_error() {
        let (grid, q, params) = small();
        let trainings = train_all(&grid, &q, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_training(dir.path(), grid.stations(), &q, &params, &trainings).unwrap();
        fs::write(dir.path().join("cell_s2.genomes.csv"), "rank,fitness,g1\n1,0.5,1\n").unwrap();
        assert!(matches!(
            load_models(dir.path(), grid.stations()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn records_and_outcomes() {
        let st = vec![Station::new("a", 0.0, 0.0)];
        let q = Quantizer::new(10, 90.0).unwrap();
        let grid = SeriesGrid::new(st.clone(), vec![vec![Some(5.0), None, None]]).unwrap();
        let states = vec![vec![Some(1), Some(3), None]];
        let recs = output_records(RunKind::Fill, &grid, &states, &q).unwrap();
        let sources: Vec<Source> = recs.iter().map(|r| r.source).collect();
        assert_eq!(sources, [Source::Observed, Source::Filled, Source::Unfilled]);
        assert_eq!(recs[1].value, Some(25.0));
        let oc = outcomes_from_records(&recs, &q).unwrap();
        assert_eq!(oc.len(), 2);
        assert_eq!(oc[&(0, 1)], Some(3));
        assert_eq!(oc[&(0, 2)], None);

        let recs = output_records(RunKind::KalmanPredict, &grid, &vec![vec![None, None, None]], &q).unwrap();
        let sources: Vec<Source> = recs.iter().map(|r| r.source).collect();
        assert_eq!(sources, [Source::Observed, Source::Skipped, Source::Skipped]);
    }

    #[test]
    fn output_series_round_trip() {
        let st = vec![Station::new("a", 0.0, 0.0), Station::new("b", 1.0, 0.0)];
        let q = Quantizer::new(10, 90.0).unwrap();
        let grid = SeriesGrid::new(st.clone(), vec![vec![Some(5.0), None], vec![None, Some(0.0)]]).unwrap();
        let states = vec![vec![Some(1), Some(9)], vec![None, Some(0)]];
        let recs = output_records(RunKind::KalmanFill, &grid, &states, &q).unwrap();
        let mut buf = Vec::new();
        crate::series::write_output_series(&st, &recs, &mut buf).unwrap();
        let back = crate::series::read_output_series(&st, buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }
}
