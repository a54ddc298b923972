//! Table form of a cell's update rule.
//!
//! The input of cell `i` at instant `t` is its own state at `t - 1` followed
//! by one state per neighbor group. A group's component is the discretized
//! sum of the group's real values, using the quantizer stretched to the
//! group's size. The table keeps one row per observed `(input, output)` pair
//! together with how often the pair occurred.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::quantizer::{Quantizer, State};

/// A cell's neighborhood and its partition into sum groups.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NeighborhoodSpec {
    center: usize,
    groups: Vec<Vec<usize>>,
}

impl NeighborhoodSpec {
    pub fn new(center: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for g in &groups {
            if g.is_empty() {
                return Err(Error::InvalidParameter("empty neighbor group".into()));
            }
            for &j in g {
                if j == center {
                    return Err(Error::InvalidParameter(
                        "the center cell cannot be in a neighbor group".into(),
                    ));
                }
                if !seen.insert(j) {
                    return Err(Error::InvalidParameter(format!(
                        "cell {j} appears in more than one group"
                    )));
                }
            }
        }
        Ok(Self { center, groups })
    }

    pub fn self_only(center: usize) -> Self {
        Self {
            center,
            groups: Vec::new(),
        }
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Number of groups `q`.
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Input length `1 + q`.
    pub fn arity(&self) -> usize {
        1 + self.groups.len()
    }

    /// Neighborhood size `n`, the center included.
    pub fn size(&self) -> usize {
        1 + self.groups.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_self_only(&self) -> bool {
        self.groups.is_empty()
    }

    /// Neighbors other than the center, group by group.
    pub fn neighbors(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().flatten().copied()
    }

    /// Every cell read by the rule, center first.
    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.center).chain(self.neighbors())
    }

    /// The spec with `cell` dropped; a group left empty disappears.
    pub fn without(&self, cell: usize) -> Self {
        let groups = self
            .groups
            .iter()
            .map(|g| g.iter().copied().filter(|&j| j != cell).collect::<Vec<_>>())
            .filter(|g| !g.is_empty())
            .collect();
        Self {
            center: self.center,
            groups,
        }
    }
}

/// `(self_state, group_sum_state_1, ..., group_sum_state_q)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InputKey(pub Vec<State>);

impl InputKey {
    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn hamming(&self, other: &InputKey) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl fmt::Display for InputKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, s) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str("|")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// Rule input for `spec.center()` built from the values at instant `t`, or
/// `None` when any cell of the neighborhood is a gap there.
pub fn compute_input(
    values: &[Vec<Option<f64>>],
    t: usize,
    spec: &NeighborhoodSpec,
    quantizer: &Quantizer,
) -> Result<Option<InputKey>> {
    let Some(own) = values[spec.center][t] else {
        return Ok(None);
    };
    let mut key = Vec::with_capacity(spec.arity());
    key.push(quantizer.quantize(own, 1)?);
    for group in &spec.groups {
        let mut sum = 0.0;
        for &j in group {
            match values[j][t] {
                Some(v) => sum += v,
                None => return Ok(None),
            }
        }
        key.push(quantizer.quantize(sum, group.len())?);
    }
    Ok(Some(InputKey(key)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub input: InputKey,
    pub output: State,
    pub count: u32,
}

#[derive(Debug, Clone)]
pub struct RuleTable {
    arity: usize,
    rows: Vec<Row>,
    index: HashMap<InputKey, Vec<usize>>,
}

impl RuleTable {
    pub fn new(arity: usize) -> Self {
        Self {
            arity,
            rows: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sum of all counts, i.e. the number of examples consumed.
    pub fn total_count(&self) -> u64 {
        self.rows.iter().map(|r| u64::from(r.count)).sum()
    }

    /// Number of distinct inputs.
    pub fn distinct_inputs(&self) -> usize {
        self.index.len()
    }

    /// Row indices grouped by input.
    pub fn by_input(&self) -> impl Iterator<Item = (&InputKey, &[usize])> {
        self.index.iter().map(|(k, v)| (k, v.as_slice()))
    }

    fn check_arity(&self, input: &InputKey) -> Result<()> {
        if input.arity() != self.arity {
            return Err(Error::ArityMismatch {
                expected: self.arity,
                got: input.arity(),
            });
        }
        Ok(())
    }

    /// Count one occurrence of `(input, output)`.
    pub fn record(&mut self, input: InputKey, output: State) -> Result<()> {
        self.check_arity(&input)?;
        let rows = &mut self.rows;
        if let Some(slots) = self.index.get_mut(&input) {
            if let Some(&r) = slots.iter().find(|&&r| rows[r].output == output) {
                rows[r].count += 1;
            } else {
                slots.push(rows.len());
                rows.push(Row {
                    input,
                    output,
                    count: 1,
                });
            }
            return Ok(());
        }
        self.index.insert(input.clone(), vec![rows.len()]);
        rows.push(Row {
            input,
            output,
            count: 1,
        });
        Ok(())
    }

    /// The row nearest to `query` by Hamming distance; among equally near rows
    /// the one with the greatest count, then the smallest output, then the
    /// lexicographically smallest input. `None` for an empty table.
    pub fn lookup(&self, query: &InputKey) -> Result<Option<&Row>> {
        self.check_arity(query)?;
        let mut best: Option<(usize, &Row)> = None;
        for row in &self.rows {
            let d = row.input.hamming(query);
            let better = match best {
                None => true,
                Some((bd, b)) => d
                    .cmp(&bd)
                    .then(b.count.cmp(&row.count))
                    .then(row.output.cmp(&b.output))
                    .then_with(|| row.input.cmp(&b.input))
                    == Ordering::Less,
            };
            if better {
                best = Some((d, row));
            }
        }
        Ok(best.map(|(_, r)| r))
    }

    /// Rows sorted by input then output.
    pub fn sorted_rows(&self) -> Vec<&Row> {
        let mut rows: Vec<&Row> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.input.cmp(&b.input).then(a.output.cmp(&b.output)));
        rows
    }

    /// Debug dump: `input;output;count`, input components joined by `|`.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "input;output;count")?;
        for r in self.sorted_rows() {
            writeln!(out, "{};{};{}", r.input, r.output, r.count)?;
        }
        Ok(())
    }
}

/// Record the example whose output is the value of `spec.center()` at `t`
/// (`t >= 1`), if both that value and the input at `t - 1` are available.
pub fn record_example(
    table: &mut RuleTable,
    values: &[Vec<Option<f64>>],
    t: usize,
    spec: &NeighborhoodSpec,
    quantizer: &Quantizer,
) -> Result<bool> {
    let Some(out) = values[spec.center][t] else {
        return Ok(false);
    };
    match compute_input(values, t - 1, spec, quantizer)? {
        Some(input) => {
            table.record(input, quantizer.quantize(out, 1)?)?;
            Ok(true)
        }
        None => Ok(false),
    }
}

/// Table from every usable example with output instant in `1..T`.
pub fn build_table(
    values: &[Vec<Option<f64>>],
    spec: &NeighborhoodSpec,
    quantizer: &Quantizer,
) -> Result<RuleTable> {
    build_table_until(values, spec, quantizer, values[spec.center].len())
}

/// Table from usable examples whose output instant lies in `1..end`.
pub fn build_table_until(
    values: &[Vec<Option<f64>>],
    spec: &NeighborhoodSpec,
    quantizer: &Quantizer,
    end: usize,
) -> Result<RuleTable> {
    let mut table = RuleTable::new(spec.arity());
    for t in 1..end.min(values[spec.center].len()) {
        record_example(&mut table, values, t, spec, quantizer)?;
    }
    Ok(table)
}
