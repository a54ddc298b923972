//! Gap filling and one-step prediction with learned rule tables.
//!
//! Every cell carries up to five neighborhoods, fittest first. A value is
//! produced by the first neighborhood whose input is defined and whose table
//! has a row. When all of them fail, each neighborhood is diminished one cell
//! at a time (dropping the cell whose removal keeps the unweighted fitness
//! highest) and retried, until every neighborhood is down to the cell alone.
//!
//! Filled and predicted states re-enter the corpus as interval midpoints, so
//! they take part in later sums like measured values.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::genome::table_fitness;
use crate::quantizer::{Quantizer, State};
use crate::rule_table::{
    build_table_until, compute_input, record_example, NeighborhoodSpec, RuleTable,
};
use crate::series::SeriesGrid;

/// Ranked neighborhoods of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellModel {
    pub center: usize,
    /// Fittest first; never empty.
    pub specs: Vec<(NeighborhoodSpec, f64)>,
}

impl CellModel {
    pub fn new(center: usize, specs: Vec<(NeighborhoodSpec, f64)>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "cell {center} has no neighborhood"
            )));
        }
        if specs.iter().any(|(s, _)| s.center() != center) {
            return Err(Error::InvalidParameter(format!(
                "neighborhood centered elsewhere in model of cell {center}"
            )));
        }
        Ok(Self { center, specs })
    }

    pub fn single(spec: NeighborhoodSpec) -> Self {
        Self {
            center: spec.center(),
            specs: vec![(spec, 1.0)],
        }
    }
}

/// How a value was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// The `rank`-th neighborhood (1-based) as trained.
    Rank(usize),
    /// The `rank`-th neighborhood after removing `level` cells.
    Diminished { rank: usize, level: usize },
    /// No table had any row; the zero state was emitted.
    Default,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Rank(r) => write!(f, "rank{r}"),
            Strategy::Diminished { rank, level } => write!(f, "rank{rank}-minus{level}"),
            Strategy::Default => f.write_str("default"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnfilledReason {
    /// Gap at the first instant.
    NoPriorInstant,
    /// The cell's own previous value is a gap, so no input is ever defined.
    SelfGap,
    /// Every neighborhood, down to the cell alone, failed.
    Exhausted,
}

impl fmt::Display for UnfilledReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnfilledReason::NoPriorInstant => "no_prior_instant",
            UnfilledReason::SelfGap => "self_gap",
            UnfilledReason::Exhausted => "exhausted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Value { state: State, strategy: Strategy },
    Unfilled(UnfilledReason),
}

impl Outcome {
    pub fn state(&self) -> Option<State> {
        match self {
            Outcome::Value { state, .. } => Some(*state),
            Outcome::Unfilled(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionOutcome {
    pub station: usize,
    pub t: usize,
    pub outcome: Outcome,
}

/// Outcomes in processing order (instant, then station).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EngineReport {
    pub outcomes: Vec<PositionOutcome>,
}

impl EngineReport {
    pub fn get(&self, station: usize, t: usize) -> Option<&Outcome> {
        self.outcomes
            .iter()
            .find(|o| o.station == station && o.t == t)
            .map(|o| &o.outcome)
    }

    pub fn as_map(&self) -> HashMap<(usize, usize), Outcome> {
        self.outcomes
            .iter()
            .map(|o| ((o.station, o.t), o.outcome))
            .collect()
    }
}

/// Per-cell state at every instant; `None` where nothing could be produced.
pub type StateGrid = Vec<Vec<Option<State>>>;

/// Mutable corpus plus one table per (cell, neighborhood rank).
struct Workspace<'a> {
    values: Vec<Vec<Option<f64>>>,
    models: &'a [CellModel],
    tables: Vec<Vec<RuleTable>>,
    quantizer: &'a Quantizer,
    /// Examples with output instant `< end` form the corpus.
    end: usize,
    /// Diminished tables and their unweighted fitness for the current corpus.
    cache: HashMap<NeighborhoodSpec, (RuleTable, f64)>,
}

impl<'a> Workspace<'a> {
    fn new(
        values: Vec<Vec<Option<f64>>>,
        models: &'a [CellModel],
        quantizer: &'a Quantizer,
        end: usize,
        build: bool,
    ) -> Result<Self> {
        let tables = models
            .iter()
            .map(|m| {
                m.specs
                    .iter()
                    .map(|(s, _)| {
                        if build {
                            build_table_until(&values, s, quantizer, end)
                        } else {
                            Ok(RuleTable::new(s.arity()))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            values,
            models,
            tables,
            quantizer,
            end,
            cache: HashMap::new(),
        })
    }

    fn corpus_changed(&mut self) {
        self.cache.clear();
    }

    fn try_spec(&self, spec: &NeighborhoodSpec, table: &RuleTable, t: usize) -> Result<Option<State>> {
        match compute_input(&self.values, t - 1, spec, self.quantizer)? {
            Some(input) => Ok(table.lookup(&input)?.map(|r| r.output)),
            None => Ok(None),
        }
    }

    fn cached(&mut self, spec: &NeighborhoodSpec) -> Result<&(RuleTable, f64)> {
        if !self.cache.contains_key(spec) {
            let table = build_table_until(&self.values, spec, self.quantizer, self.end)?;
            let fit = table_fitness(&table, 1.0);
            self.cache.insert(spec.clone(), (table, fit));
        }
        Ok(&self.cache[spec])
    }

    /// `spec` without the neighbor whose removal leaves the highest unweighted
    /// fitness; ties go to the smaller cell index.
    fn diminish(&mut self, spec: &NeighborhoodSpec) -> Result<NeighborhoodSpec> {
        let mut cells: Vec<usize> = spec.neighbors().collect();
        cells.sort_unstable();
        let mut best: Option<(f64, NeighborhoodSpec)> = None;
        for j in cells {
            let reduced = spec.without(j);
            let fit = self.cached(&reduced)?.1;
            if best.as_ref().is_none_or(|(b, _)| fit > *b) {
                best = Some((fit, reduced));
            }
        }
        Ok(best.expect("spec has at least one neighbor").1)
    }

    /// Full ladder for cell `i` at instant `t >= 1`.
    fn resolve(&mut self, i: usize, t: usize) -> Result<std::result::Result<(State, Strategy), UnfilledReason>> {
        if self.values[i][t - 1].is_none() {
            return Ok(Err(UnfilledReason::SelfGap));
        }
        let model = &self.models[i];
        if let Some(state) = self.try_spec(&model.specs[0].0, &self.tables[i][0], t)? {
            return Ok(Ok((state, Strategy::Rank(1))));
        }
        Ok(self.fallback(i, t)?.ok_or(UnfilledReason::Exhausted))
    }

    /// Neighborhoods 2..=5 as trained, then diminishing rounds over all of
    /// them until each is reduced to the cell alone.
    fn fallback(&mut self, i: usize, t: usize) -> Result<Option<(State, Strategy)>> {
        let model = self.models[i].clone();
        for (rank, (spec, _)) in model.specs.iter().enumerate().skip(1) {
            if let Some(state) = self.try_spec(spec, &self.tables[i][rank], t)? {
                return Ok(Some((state, Strategy::Rank(rank + 1))));
            }
        }
        let mut current: Vec<NeighborhoodSpec> = model.specs.iter().map(|(s, _)| s.clone()).collect();
        let mut level = 0;
        loop {
            level += 1;
            let mut progressed = false;
            for rank in 0..current.len() {
                if current[rank].is_self_only() {
                    continue;
                }
                progressed = true;
                current[rank] = self.diminish(&current[rank])?;
                let spec = current[rank].clone();
                let Some(input) = compute_input(&self.values, t - 1, &spec, self.quantizer)? else {
                    continue;
                };
                let hit = self.cached(&spec)?.0.lookup(&input)?.map(|r| r.output);
                if let Some(state) = hit {
                    return Ok(Some((
                        state,
                        Strategy::Diminished {
                            rank: rank + 1,
                            level,
                        },
                    )));
                }
            }
            if !progressed {
                return Ok(None);
            }
        }
    }

    /// Record every example of cell `i`'s tables with output at `t`.
    fn record_all(&mut self, i: usize, t: usize) -> Result<()> {
        for (rank, (spec, _)) in self.models[i].specs.iter().enumerate() {
            record_example(&mut self.tables[i][rank], &self.values, t, spec, self.quantizer)?;
        }
        Ok(())
    }
}

fn check_models(grid: &SeriesGrid, models: &[CellModel]) -> Result<()> {
    if models.len() != grid.num_stations() {
        return Err(Error::InvalidParameter(format!(
            "{} models for {} cells",
            models.len(),
            grid.num_stations()
        )));
    }
    for (i, m) in models.iter().enumerate() {
        if m.center != i || m.specs.is_empty() {
            return Err(Error::InvalidParameter(format!("model {i} is malformed")));
        }
        for (spec, _) in &m.specs {
            if spec.cells().any(|c| c >= grid.num_stations()) {
                return Err(Error::InvalidParameter(format!(
                    "model {i} refers to an unknown cell"
                )));
            }
        }
    }
    Ok(())
}

fn quantize_grid(grid: &SeriesGrid, q: &Quantizer) -> Result<StateGrid> {
    grid.values()
        .iter()
        .map(|row| {
            row.iter()
                .map(|v| v.map(|v| q.quantize(v, 1)).transpose())
                .collect()
        })
        .collect()
}

/// Fill the gaps of `grid`, sweeping instants upward.
///
/// Tables start from the gap-bearing corpus. Gaps at one instant are filled
/// from the previous instant only; once an instant is done its fills join the
/// corpus and every example they make computable is added to the tables.
pub fn fill_gaps(
    grid: &SeriesGrid,
    models: &[CellModel],
    quantizer: &Quantizer,
) -> Result<(StateGrid, EngineReport)> {
    fill_gaps_inner(grid, models, quantizer).map(|(s, r, _)| (s, r))
}

/// Also hands back the final corpus and tables.
fn fill_gaps_inner<'a>(
    grid: &SeriesGrid,
    models: &'a [CellModel],
    quantizer: &'a Quantizer,
) -> Result<(StateGrid, EngineReport, Workspace<'a>)> {
    check_models(grid, models)?;
    let p = grid.num_stations();
    let horizon = grid.horizon();
    let mut states = quantize_grid(grid, quantizer)?;
    let mut ws = Workspace::new(grid.values().to_vec(), models, quantizer, horizon, true)?;
    let mut report = EngineReport::default();

    for i in 0..p {
        if grid.get(i, 0).is_none() {
            report.outcomes.push(PositionOutcome {
                station: i,
                t: 0,
                outcome: Outcome::Unfilled(UnfilledReason::NoPriorInstant),
            });
        }
    }

    for t in 1..horizon {
        let mut filled: Vec<(usize, State)> = Vec::new();
        for i in 0..p {
            if grid.get(i, t).is_some() {
                continue;
            }
            let outcome = match ws.resolve(i, t)? {
                Ok((state, strategy)) => {
                    filled.push((i, state));
                    Outcome::Value { state, strategy }
                }
                Err(reason) => Outcome::Unfilled(reason),
            };
            report.outcomes.push(PositionOutcome {
                station: i,
                t,
                outcome,
            });
        }
        if filled.is_empty() {
            continue;
        }

        let mut touched = vec![false; p];
        for &(i, state) in &filled {
            ws.values[i][t] = Some(quantizer.midpoint(state));
            states[i][t] = Some(state);
            touched[i] = true;
        }
        // Examples whose output is a new fill.
        for &(i, _) in &filled {
            ws.record_all(i, t)?;
        }
        // Examples at t + 1 whose input at t only now became complete.
        if t + 1 < horizon {
            for j in 0..p {
                if grid.get(j, t + 1).is_none() {
                    continue;
                }
                for (rank, (spec, _)) in models[j].specs.iter().enumerate() {
                    if spec.cells().any(|c| touched[c]) {
                        record_example(&mut ws.tables[j][rank], &ws.values, t + 1, spec, quantizer)?;
                    }
                }
            }
        }
        ws.corpus_changed();
    }
    Ok((states, report, ws))
}

/// One-step-ahead prediction for every cell at every instant `t >= 2`.
///
/// Tables grow as time advances: before predicting instant `t` they absorb
/// the examples ending at `t - 1`. A measurement gap is replaced by the
/// prediction previously made for it. When no table has any row the zero
/// state is predicted.
pub fn predict(
    grid: &SeriesGrid,
    models: &[CellModel],
    quantizer: &Quantizer,
) -> Result<(StateGrid, EngineReport)> {
    check_models(grid, models)?;
    let p = grid.num_stations();
    let horizon = grid.horizon();
    for i in 0..p {
        if grid.get(i, 0).is_none() {
            return Err(Error::InitialInstantIncomplete(grid.stations()[i].id.clone()));
        }
    }
    let mut ws = Workspace::new(grid.values().to_vec(), models, quantizer, 1, false)?;
    let mut predictions: StateGrid = vec![vec![None; horizon]; p];
    let mut report = EngineReport::default();

    for t in 1..horizon {
        if t >= 2 {
            for i in 0..p {
                ws.record_all(i, t - 1)?;
            }
        }
        ws.end = t;
        ws.corpus_changed();
        for i in 0..p {
            let (state, strategy) = ws
                .resolve(i, t)?
                .unwrap_or((0, Strategy::Default));
            predictions[i][t] = Some(state);
            report.outcomes.push(PositionOutcome {
                station: i,
                t,
                outcome: Outcome::Value { state, strategy },
            });
        }
        for i in 0..p {
            if ws.values[i][t].is_none() {
                ws.values[i][t] = Some(quantizer.midpoint(predictions[i][t].expect("set above")));
            }
        }
    }
    Ok((predictions, report))
}
