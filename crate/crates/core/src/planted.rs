//! Synthetic corpora generated by a known automaton.
//!
//! Stations are scattered over a square. Every cell gets a random
//! neighborhood that the GA could represent (drawn from its own candidate set
//! with at most `n - 1` neighbors and labels up to `u`) and a random rule.
//! Rules are created lazily: the first time an input shows up its output is
//! drawn, 0 with probability `zero_inflation`, otherwise uniform over the
//! nonzero states. With probability `noise` the state produced at an instant
//! is replaced by a uniform random state, which then drives the dynamics.
//!
//! States become reals through the interval midpoints of a base quantizer.
//! Inputs are computed with the quantizer that [`Quantizer::fit_range`]
//! recovers from the generated grid, so with `noise = 0` every distinct input
//! in the corpus has a single output under that quantizer.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::Genome;
use crate::quantizer::{Quantizer, State};
use crate::rule_table::{compute_input, NeighborhoodSpec};
use crate::series::{nearest_stations, SeriesGrid, Station};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub stations: usize,
    pub horizon: usize,
    pub num_states: usize,
    /// Candidate set size `m`, center included.
    pub candidates: usize,
    /// Neighborhood size `n`, center included.
    pub neighborhood_size: usize,
    /// Largest group label `u`.
    pub max_groups: u8,
    pub noise: f64,
    pub zero_inflation: f64,
    /// Range of the base quantizer that turns states into reals.
    pub value_range: f64,
    /// Side of the square holding the stations.
    pub extent: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            stations: 12,
            horizon: 500,
            num_states: 10,
            candidates: 6,
            neighborhood_size: 4,
            max_groups: 3,
            noise: 0.0,
            zero_inflation: 0.0,
            value_range: 100.0,
            extent: 100.0,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.stations < 1 || self.horizon < 2 {
            return bad("need at least one station and two instants".into());
        }
        if self.num_states < 2 || self.num_states > usize::from(State::MAX) + 1 {
            return bad(format!("unsupported number of states {}", self.num_states));
        }
        if self.candidates < 1 || self.candidates > self.stations {
            return bad(format!(
                "candidate set size must be in 1..={}, got {}",
                self.stations, self.candidates
            ));
        }
        if self.neighborhood_size < 1 || self.neighborhood_size > self.candidates {
            return bad("need 1 <= neighborhood size <= candidates".into());
        }
        if self.max_groups < 1 {
            return bad("max groups must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad(format!("noise must be in [0,1), got {}", self.noise));
        }
        if !(0.0..=1.0).contains(&self.zero_inflation) {
            return bad("zero inflation must be in [0,1]".into());
        }
        if !(self.value_range > 0.0 && self.value_range.is_finite())
            || !(self.extent > 0.0 && self.extent.is_finite())
        {
            return bad("value range and extent must be positive".into());
        }
        Ok(())
    }

    fn base_quantizer(&self) -> Result<Quantizer> {
        Quantizer::new(self.num_states, self.value_range)
    }

    /// The quantizer that inputs are keyed with; it is also what
    /// [`Quantizer::fit_range`] returns on a generated grid.
    pub fn data_quantizer(&self) -> Result<Quantizer> {
        let base = self.base_quantizer()?;
        Quantizer::new(self.num_states, base.representative(self.num_states - 1, 1)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCell {
    pub center: usize,
    /// Candidate set without the center, in label-position order.
    pub candidates: Vec<usize>,
    pub genome: Vec<u8>,
    /// Known part of the rule, sorted by input.
    pub rule: Vec<(Vec<State>, State)>,
}

impl PlantedCell {
    pub fn spec(&self) -> Result<NeighborhoodSpec> {
        Genome::new(self.genome.clone()).decode(&self.candidates, self.center)
    }

    pub fn genome(&self) -> Genome {
        Genome::new(self.genome.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub config: PlantedConfig,
    pub seed: u64,
    pub stations: Vec<Station>,
    pub cells: Vec<PlantedCell>,
    pub initial: Vec<State>,
    /// `(station, t)` positions (0-based) where noise replaced the state.
    pub noised: Vec<(usize, usize)>,
}

impl PlantedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

struct Sim {
    specs: Vec<NeighborhoodSpec>,
    rules: Vec<BTreeMap<Vec<State>, State>>,
    reals: Vec<f64>,
    data_q: Quantizer,
}

impl Sim {
    fn new(cfg: &PlantedConfig, cells: &[PlantedCell]) -> Result<Self> {
        let base = cfg.base_quantizer()?;
        Ok(Self {
            specs: cells.iter().map(PlantedCell::spec).collect::<Result<_>>()?,
            rules: cells.iter().map(|c| c.rule.iter().cloned().collect()).collect(),
            reals: (0..cfg.num_states)
                .map(|k| base.representative(k, 1))
                .collect::<Result<_>>()?,
            data_q: cfg.data_quantizer()?,
        })
    }

    /// Input of cell `i` at `t`; the grid is complete so it is always defined.
    fn input(&self, values: &[Vec<Option<f64>>], i: usize, t: usize) -> Result<Vec<State>> {
        Ok(compute_input(values, t, &self.specs[i], &self.data_q)?
            .expect("simulated grids have no gaps")
            .0)
    }
}

/// Generate a planted corpus. Deterministic given `seed`.
pub fn gen_planted(config: &PlantedConfig, seed: u64) -> Result<(SeriesGrid, PlantedModel)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = config.stations;
    let s = config.num_states;
    let width = p.to_string().len();
    let stations: Vec<Station> = (0..p)
        .map(|i| {
            let x = rng.gen_range(0.0..config.extent);
            let y = rng.gen_range(0.0..config.extent);
            Station::new(format!("s{:0width$}", i + 1), x, y)
        })
        .collect();

    let mut cells = Vec::with_capacity(p);
    for i in 0..p {
        let mut candidates = nearest_stations(&stations, i, config.candidates)?;
        candidates.remove(0);
        let mut genome = vec![0u8; candidates.len()];
        let k = (config.neighborhood_size - 1).min(candidates.len());
        for pos in index::sample(&mut rng, candidates.len(), k) {
            genome[pos] = rng.gen_range(1..=config.max_groups);
        }
        cells.push(PlantedCell {
            center: i,
            candidates,
            genome,
            rule: Vec::new(),
        });
    }

    let mut initial: Vec<State> = (0..p).map(|_| rng.gen_range(0..s) as State).collect();
    initial[0] = (s - 1) as State;

    let mut sim = Sim::new(config, &cells)?;
    let mut values: Vec<Vec<Option<f64>>> = vec![vec![None; config.horizon]; p];
    for i in 0..p {
        values[i][0] = Some(sim.reals[usize::from(initial[i])]);
    }
    let mut noised = Vec::new();
    for t in 1..config.horizon {
        for i in 0..p {
            let input = sim.input(&values, i, t - 1)?;
            let state = *sim.rules[i].entry(input).or_insert_with(|| {
                if rng.gen_bool(config.zero_inflation) {
                    0
                } else {
                    rng.gen_range(1..s) as State
                }
            });
            let state = if config.noise > 0.0 && rng.gen_bool(config.noise) {
                noised.push((i, t));
                rng.gen_range(0..s) as State
            } else {
                state
            };
            values[i][t] = Some(sim.reals[usize::from(state)]);
        }
    }

    for (cell, rule) in cells.iter_mut().zip(sim.rules) {
        cell.rule = rule.into_iter().collect();
    }
    let grid = SeriesGrid::new(stations.clone(), values)?;
    let model = PlantedModel {
        config: config.clone(),
        seed,
        stations,
        cells,
        initial,
        noised,
    };
    Ok((grid, model))
}

/// Run the stored rules forward from the stored initial instant, without
/// noise. Fails if the trajectory reaches an input the rules never saw.
pub fn resimulate(model: &PlantedModel) -> Result<SeriesGrid> {
    let cfg = &model.config;
    let sim = Sim::new(cfg, &model.cells)?;
    let p = model.stations.len();
    let mut values: Vec<Vec<Option<f64>>> = vec![vec![None; cfg.horizon]; p];
    for i in 0..p {
        values[i][0] = Some(sim.reals[usize::from(model.initial[i])]);
    }
    for t in 1..cfg.horizon {
        for i in 0..p {
            let input = sim.input(&values, i, t - 1)?;
            let state = *sim.rules[i].get(&input).ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "planted rule of cell {i} has no output for input {input:?}"
                ))
            })?;
            values[i][t] = Some(sim.reals[usize::from(state)]);
        }
    }
    SeriesGrid::new(model.stations.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::fitness;

    fn cfg() -> PlantedConfig {
        PlantedConfig {
            stations: 6,
            horizon: 300,
            ..PlantedConfig::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = gen_planted(&cfg(), 9).unwrap();
        let b = gen_planted(&cfg(), 9).unwrap();
        assert_eq!(a, b);
        let c = gen_planted(&cfg(), 10).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn noiseless_resimulation_reproduces_grid() {
        for seed in 0..5 {
            let (grid, model) = gen_planted(&cfg(), seed).unwrap();
            assert_eq!(resimulate(&model).unwrap(), grid);
        }
    }

    #[test]
    fn fit_range_recovers_data_quantizer() {
        let (grid, model) = gen_planted(&cfg(), 3).unwrap();
        let q = Quantizer::fit_range(&grid, 10).unwrap();
        assert_eq!(q, model.config.data_quantizer().unwrap());
    }

    #[test]
    fn true_genome_is_fully_consistent() {
        for seed in 0..5 {
            let (grid, model) = gen_planted(&cfg(), seed).unwrap();
            let q = Quantizer::fit_range(&grid, 10).unwrap();
            for cell in &model.cells {
                let f = fitness(&cell.genome(), &cell.candidates, cell.center, grid.values(), &q, 5.0)
                    .unwrap();
                assert_eq!(f, 1.0, "seed {seed} cell {}", cell.center);
            }
        }
    }

    #[test]
    fn true_genomes_respect_search_bounds() {
        let c = cfg();
        let (_, model) = gen_planted(&c, 1).unwrap();
        for cell in &model.cells {
            assert_eq!(cell.candidates.len(), c.candidates - 1);
            assert!(cell.genome().is_valid(c.max_groups, c.neighborhood_size - 1));
            assert_eq!(cell.genome().nonzero_count(), c.neighborhood_size - 1);
        }
    }

    #[test]
    fn noise_rate_concentrates() {
        let c = PlantedConfig {
            stations: 4,
            horizon: 1000,
            candidates: 4,
            neighborhood_size: 3,
            noise: 0.1,
            ..PlantedConfig::default()
        };
        let (_, model) = gen_planted(&c, 5).unwrap();
        let frac = model.noised.len() as f64 / (4 * 999) as f64;
        assert!((frac - 0.1).abs() <= 0.03, "{frac}");
    }

    #[test]
    fn zero_inflation_biases_toward_zero() {
        let c = PlantedConfig {
            zero_inflation: 0.8,
            ..cfg()
        };
        let (grid, _) = gen_planted(&c, 2).unwrap();
        let zeros = grid.values().iter().flatten().filter(|v| **v == Some(0.0)).count();
        assert!(zeros * 2 > 6 * 300);
    }

    #[test]
    fn json_round_trip() {
        let (_, model) = gen_planted(&cfg(), 4).unwrap();
        let back = PlantedModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn invalid_config_rejected() {
        let c = PlantedConfig {
            neighborhood_size: 9,
            ..cfg()
        };
        assert!(gen_planted(&c, 0).is_err());
        let c = PlantedConfig { noise: 1.0, ..cfg() };
        assert!(gen_planted(&c, 0).is_err());
    }
}
