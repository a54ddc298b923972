//! Integer-label encoding of neighborhoods and the consistency fitness.
//!
//! A genome has one label per candidate neighbor (the candidate set minus
//! the center, in its fixed order). Label 0 leaves the candidate out; equal
//! nonzero labels put candidates in the same sum group.
//!
//! The fitness of a neighborhood is computed from its rule table. For each
//! distinct input `l`, let `C_l` be the count of its most frequent output and
//! `Z_l` the total count of the input. With weights `w_l` falling linearly
//! from `W` (rarest input) to 1 (most frequent input),
//!
//! ```text
//! fitness = Σ_l w_l·C_l / Σ_l w_l·Z_l
//! ```
//!
//! which is 1 exactly when every input has a single output.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::quantizer::Quantizer;
use crate::rule_table::{build_table, NeighborhoodSpec, RuleTable};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genome(Vec<u8>);

impl Genome {
    pub fn new(labels: Vec<u8>) -> Self {
        Self(labels)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn labels(&self) -> &[u8] {
        &self.0
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn nonzero_count(&self) -> usize {
        self.0.iter().filter(|&&l| l != 0).count()
    }

    /// Labels in `0..=max_label` and at most `max_nonzero` of them nonzero.
    pub fn is_valid(&self, max_label: u8, max_nonzero: usize) -> bool {
        self.0.iter().all(|&l| l <= max_label) && self.nonzero_count() <= max_nonzero
    }

    /// Neighborhood of `center`, where `candidates[k]` is the cell behind
    /// label position `k`. Groups come out in ascending label order.
    pub fn decode(&self, candidates: &[usize], center: usize) -> Result<NeighborhoodSpec> {
        if candidates.len() != self.0.len() {
            return Err(Error::InvalidParameter(format!(
                "genome has {} labels for {} candidates",
                self.0.len(),
                candidates.len()
            )));
        }
        let mut groups: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (&label, &cell) in self.0.iter().zip(candidates) {
            if label != 0 {
                groups.entry(label).or_default().push(cell);
            }
        }
        NeighborhoodSpec::new(center, groups.into_values().collect())
    }

    /// Same partition with labels renumbered 1, 2, ... in order of first
    /// appearance. Genomes describe the same neighborhood iff their
    /// canonical forms are equal.
    pub fn canonical(&self) -> Genome {
        let mut map = [0u8; 256];
        let mut next = 0u8;
        Genome(
            self.0
                .iter()
                .map(|&l| {
                    if l == 0 {
                        return 0;
                    }
                    if map[usize::from(l)] == 0 {
                        next += 1;
                        map[usize::from(l)] = next;
                    }
                    map[usize::from(l)]
                })
                .collect(),
        )
    }

    /// Comma-separated labels.
    pub fn to_csv_fields(&self) -> Vec<String> {
        self.0.iter().map(u8::to_string).collect()
    }
}

/// Linear weights for counts listed in caller order: the smallest count gets
/// `w_max`, the largest gets 1. Equal counts keep their list order. A single
/// count gets `w_max`.
pub fn weights(counts: &[u32], w_max: f64) -> Vec<f64> {
    let l = counts.len();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by_key(|&k| counts[k]);
    let mut out = vec![0.0; l];
    for (rank, &k) in order.iter().enumerate() {
        out[k] = rank_weight(rank, l, w_max);
    }
    out
}

/// Weight of the 0-based `rank` among `len` ranks, `w_max` down to 1.
pub(crate) fn rank_weight(rank: usize, len: usize, w_max: f64) -> f64 {
    if len <= 1 {
        return w_max;
    }
    w_max - (w_max - 1.0) / (len - 1) as f64 * rank as f64
}

/// Weighted consistency score of a table, in `[0, 1]`; 0 for an empty table.
///
/// Distinct inputs are ranked by their largest count, then by their total
/// count, then by input order.
pub fn table_fitness(table: &RuleTable, w_max: f64) -> f64 {
    if table.is_empty() {
        return 0.0;
    }
    let rows = table.rows();
    let mut per_input: Vec<(u32, u64, &crate::rule_table::InputKey)> = table
        .by_input()
        .map(|(input, slots)| {
            let max = slots.iter().map(|&r| rows[r].count).max().unwrap_or(0);
            let total = slots.iter().map(|&r| u64::from(rows[r].count)).sum();
            (max, total, input)
        })
        .collect();
    per_input.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(b.2)));
    let len = per_input.len();
    let (mut num, mut den) = (0.0, 0.0);
    for (rank, (max, total, _)) in per_input.iter().enumerate() {
        let w = rank_weight(rank, len, w_max);
        num += w * f64::from(*max);
        den += w * *total as f64;
    }
    num / den
}

pub fn spec_fitness(
    values: &[Vec<Option<f64>>],
    spec: &NeighborhoodSpec,
    quantizer: &Quantizer,
    w_max: f64,
) -> Result<f64> {
    Ok(table_fitness(&build_table(values, spec, quantizer)?, w_max))
}

pub fn fitness(
    genome: &Genome,
    candidates: &[usize],
    center: usize,
    values: &[Vec<Option<f64>>],
    quantizer: &Quantizer,
    w_max: f64,
) -> Result<f64> {
    spec_fitness(values, &genome.decode(candidates, center)?, quantizer, w_max)
}
