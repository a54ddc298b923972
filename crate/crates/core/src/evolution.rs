//! Generational genetic algorithm over neighborhood genomes.
//!
//! Each generation keeps its fittest fraction unchanged, then refills by
//! rank-proportional selection followed by either mask crossover (two
//! parents, two children) or single-label mutation. Children that exceed
//! the neighbor cap are repaired by zeroing randomly chosen nonzero labels.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::genome::{fitness, Genome};
use crate::quantizer::Quantizer;
use crate::series::{nearest_candidates, SeriesGrid};

/// Number of genomes handed to the engine per cell.
pub const TOP_GENOMES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct GaParams {
    /// Individuals per generation (`K`).
    pub population: usize,
    pub generations: usize,
    pub elite_rate: f64,
    /// Probability of crossover, mutation otherwise.
    pub crossover_prob: f64,
    /// Selection weight of the fittest relative to the least fit (`Φ`).
    pub selection_pressure: f64,
    /// Largest-to-smallest fitness weight ratio (`W`).
    pub weight_ratio: f64,
    /// Neighborhood size `n`, the center included.
    pub neighborhood_size: usize,
    /// Candidate set size `m`, the center included.
    pub candidates: usize,
    /// Largest group label `u`.
    pub max_groups: u8,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 1000,
            generations: 100,
            elite_rate: 0.02,
            crossover_prob: 0.5,
            selection_pressure: 40.0,
            weight_ratio: 5.0,
            neighborhood_size: 20,
            candidates: 30,
            max_groups: 15,
            seed: 0,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.population < 2 {
            return bad(format!("population must be >= 2, got {}", self.population));
        }
        if self.generations < 1 {
            return bad("generations must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.elite_rate) {
            return bad(format!("elite rate must be in [0,1), got {}", self.elite_rate));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return bad(format!(
                "crossover probability must be in [0,1], got {}",
                self.crossover_prob
            ));
        }
        if !(1.0..f64::INFINITY).contains(&self.selection_pressure) {
            return bad("selection pressure must be >= 1".into());
        }
        if !(1.0..f64::INFINITY).contains(&self.weight_ratio) {
            return bad("weight ratio must be >= 1".into());
        }
        if self.neighborhood_size < 1 || self.neighborhood_size > self.candidates {
            return bad(format!(
                "need 1 <= neighborhood size ({}) <= candidates ({})",
                self.neighborhood_size, self.candidates
            ));
        }
        if self.max_groups < 1 {
            return bad("max groups must be >= 1".into());
        }
        Ok(())
    }

    pub fn elite_count(&self) -> usize {
        ((self.elite_rate * self.population as f64).ceil() as usize).min(self.population)
    }

    fn max_nonzero(&self) -> usize {
        self.neighborhood_size - 1
    }
}

/// Unnormalized selection weight of the `rank`-th fittest (1-based) of `k`.
pub fn selection_weight(rank: usize, k: usize, pressure: f64) -> f64 {
    pressure - (pressure - 1.0) / (k - 1) as f64 * (rank - 1) as f64
}

/// Zero randomly chosen nonzero labels until at most `max_nonzero` remain.
pub fn repair<R: Rng>(genome: &mut Genome, max_nonzero: usize, rng: &mut R) {
    let nonzero: Vec<usize> = (0..genome.len())
        .filter(|&k| genome.labels()[k] != 0)
        .collect();
    if nonzero.len() <= max_nonzero {
        return;
    }
    let labels = genome.labels_mut();
    for k in index::sample(rng, nonzero.len(), nonzero.len() - max_nonzero) {
        labels[nonzero[k]] = 0;
    }
}

/// Mask crossover: the first child takes mask-0 positions from `a` and mask-1
/// positions from `b`, the second child the complement.
pub fn crossover<R: Rng>(
    a: &Genome,
    b: &Genome,
    mask: &[bool],
    max_nonzero: usize,
    rng: &mut R,
) -> (Genome, Genome) {
    let (mut c1, mut c2) = (a.clone(), b.clone());
    for (k, &take) in mask.iter().enumerate() {
        if take {
            c1.labels_mut()[k] = b.labels()[k];
            c2.labels_mut()[k] = a.labels()[k];
        }
    }
    repair(&mut c1, max_nonzero, rng);
    repair(&mut c2, max_nonzero, rng);
    (c1, c2)
}

/// Redraw one uniformly chosen label from `0..=max_label`.
pub fn mutate<R: Rng>(genome: &Genome, max_label: u8, max_nonzero: usize, rng: &mut R) -> Genome {
    let mut g = genome.clone();
    if g.is_empty() {
        return g;
    }
    let pos = rng.gen_range(0..g.len());
    g.labels_mut()[pos] = rng.gen_range(0..=max_label);
    repair(&mut g, max_nonzero, rng);
    g
}

/// Genome with exactly `nonzero` labels drawn from `1..=max_label` at
/// uniformly chosen positions.
pub fn random_genome<R: Rng>(len: usize, nonzero: usize, max_label: u8, rng: &mut R) -> Genome {
    let mut g = Genome::zeros(len);
    for k in index::sample(rng, len, nonzero.min(len)) {
        g.labels_mut()[k] = rng.gen_range(1..=max_label);
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub best_ever: f64,
}

#[derive(Debug, Clone)]
pub struct GaOutcome {
    /// Up to [`TOP_GENOMES`] genomes describing distinct neighborhoods, in
    /// canonical form, fittest first.
    pub top: Vec<(Genome, f64)>,
    /// Generation 0 is the initial population.
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
}

fn by_rank(a: &(Genome, f64), b: &(Genome, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Evolve neighborhoods of `center` over `candidates` (the candidate set
/// without the center, in label-position order).
pub fn run_ga(
    values: &[Vec<Option<f64>>],
    center: usize,
    candidates: &[usize],
    quantizer: &Quantizer,
    params: &GaParams,
    rng: &mut ChaCha8Rng,
) -> Result<GaOutcome> {
    params.validate()?;
    if candidates.len() + 1 != params.candidates {
        return Err(Error::InvalidParameter(format!(
            "expected {} candidates besides the center, got {}",
            params.candidates - 1,
            candidates.len()
        )));
    }
    let len = candidates.len();
    let k = params.population;
    let cap = params.max_nonzero();
    let mut cache: HashMap<Genome, f64> = HashMap::new();

    // Keyed by canonical form: relabelings share one evaluation.
    let evaluate = |population: &[Genome], cache: &mut HashMap<Genome, f64>| -> Result<Vec<f64>> {
        let keys: Vec<Genome> = population.iter().map(Genome::canonical).collect();
        let mut fresh: Vec<&Genome> = keys.iter().filter(|g| !cache.contains_key(*g)).collect();
        fresh.sort();
        fresh.dedup();
        let scored: Vec<(Genome, f64)> = fresh
            .par_iter()
            .map(|g| {
                fitness(g, candidates, center, values, quantizer, params.weight_ratio)
                    .map(|f| ((*g).clone(), f))
            })
            .collect::<Result<_>>()?;
        cache.extend(scored);
        Ok(keys.iter().map(|g| cache[g]).collect())
    };

    let mut population: Vec<Genome> = (0..k)
        .map(|_| random_genome(len, cap, params.max_groups, rng))
        .collect();
    let mut scores = evaluate(&population, &mut cache)?;

    let stats = |generation: usize, scores: &[f64], best_ever: f64| GenerationStats {
        generation,
        best: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: scores.iter().sum::<f64>() / scores.len() as f64,
        best_ever,
    };
    let mut best_ever = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut history = vec![stats(0, &scores, best_ever)];

    let selector = WeightedIndex::new(
        (1..=k).map(|rank| selection_weight(rank, k, params.selection_pressure)),
    )
    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let elites = params.elite_count();

    for generation in 1..=params.generations {
        let mut ranked: Vec<(Genome, f64)> = population.into_iter().zip(scores).collect();
        ranked.sort_by(by_rank);

        let mut next: Vec<Genome> = ranked.iter().take(elites).map(|(g, _)| g.clone()).collect();
        while next.len() < k {
            if rng.gen_bool(params.crossover_prob) {
                let a = &ranked[selector.sample(rng)].0;
                let b = &ranked[selector.sample(rng)].0;
                let mask: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.5)).collect();
                let (c1, c2) = crossover(a, b, &mask, cap, rng);
                next.push(c1);
                if next.len() < k {
                    next.push(c2);
                }
            } else {
                let a = &ranked[selector.sample(rng)].0;
                next.push(mutate(a, params.max_groups, cap, rng));
            }
        }
        population = next;
        scores = evaluate(&population, &mut cache)?;
        best_ever = scores.iter().copied().fold(best_ever, f64::max);
        history.push(stats(generation, &scores, best_ever));
    }

    let evaluations = cache.len();
    let mut all: Vec<(Genome, f64)> = cache.into_iter().collect();
    all.sort_by(by_rank);
    all.truncate(TOP_GENOMES);
    Ok(GaOutcome {
        top: all,
        history,
        evaluations,
    })
}

/// Result of training one cell.
#[derive(Debug, Clone)]
pub struct CellTraining {
    pub center: usize,
    /// Candidate set without the center, in label-position order.
    pub candidates: Vec<usize>,
    pub outcome: GaOutcome,
}

/// Candidate set by distance, then the GA on its own random stream.
pub fn train_cell(
    grid: &SeriesGrid,
    center: usize,
    quantizer: &Quantizer,
    params: &GaParams,
) -> Result<CellTraining> {
    let mut cands = nearest_candidates(grid, center, params.candidates)?;
    cands.remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(center as u64);
    let outcome = run_ga(grid.values(), center, &cands, quantizer, params, &mut rng)?;
    Ok(CellTraining {
        center,
        candidates: cands,
        outcome,
    })
}

/// Train every cell; cells run in parallel, each on its own stream.
pub fn train_all(
    grid: &SeriesGrid,
    quantizer: &Quantizer,
    params: &GaParams,
) -> Result<Vec<CellTraining>> {
    (0..grid.num_stations())
        .into_par_iter()
        .map(|i| train_cell(grid, i, quantizer, params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn selection_weight_examples() {
        let w: Vec<f64> = (1..=4).map(|r| selection_weight(r, 4, 40.0)).collect();
        assert_eq!(w, vec![40.0, 27.0, 14.0, 1.0]);
        assert_eq!(selection_weight(7, 7, 12.0), 1.0);
        assert!((1..=5).all(|r| selection_weight(r, 5, 1.0) == 1.0));
    }

    #[test]
    fn crossover_examples() {
        let a = Genome::new(vec![1, 0, 2]);
        let b = Genome::new(vec![0, 3, 0]);
        let (c1, c2) = crossover(&a, &b, &[false, true, false], 3, &mut rng(0));
        assert_eq!(c1, Genome::new(vec![1, 3, 2]));
        assert_eq!(c2, Genome::new(vec![0, 0, 0]));

        let (c1, c2) = crossover(&a, &b, &[false; 3], 3, &mut rng(0));
        assert_eq!((c1, c2), (a.clone(), b.clone()));

        // Cap of two nonzero labels: one of the three is zeroed.
        for seed in 0..20 {
            let (c1, _) = crossover(&a, &b, &[false, true, false], 2, &mut rng(seed));
            assert_eq!(c1.nonzero_count(), 2);
            for (k, &l) in c1.labels().iter().enumerate() {
                assert!(l == 0 || l == [1, 3, 2][k]);
            }
        }
    }

    #[test]
    fn mutate_examples() {
        let g = Genome::new(vec![0, 2, 2, 0, 7]);
        // Find a seed that drew position 2 and label 0.
        let mut seen_removal = false;
        let mut seen_same = false;
        for seed in 0..2000 {
            let m = mutate(&g, 7, 10, &mut rng(seed));
            let diff: Vec<usize> = (0..5).filter(|&k| m.labels()[k] != g.labels()[k]).collect();
            assert!(diff.len() <= 1);
            if m == Genome::new(vec![0, 2, 0, 0, 7]) {
                seen_removal = true;
            }
            if m == g {
                seen_same = true;
            }
        }
        assert!(seen_removal && seen_same);
    }

    #[test]
    fn mutate_at_cap_repairs() {
        let g = Genome::new(vec![1, 1, 0, 0, 0, 0]);
        for seed in 0..200 {
            let m = mutate(&g, 3, 2, &mut rng(seed));
            assert!(m.nonzero_count() <= 2);
            assert!(m.is_valid(3, 2));
        }
    }

    #[test]
    fn random_genome_has_exact_nonzero_count() {
        for seed in 0..50 {
            let g = random_genome(29, 19, 15, &mut rng(seed));
            assert_eq!(g.nonzero_count(), 19);
            assert!(g.is_valid(15, 19));
        }
    }

    #[test]
    fn elite_count_rounds_up() {
        let p = GaParams {
            population: 1000,
            ..GaParams::default()
        };
        assert_eq!(p.elite_count(), 20);
        let p = GaParams {
            population: 30,
            elite_rate: 0.02,
            ..GaParams::default()
        };
        assert_eq!(p.elite_count(), 1);
    }

    #[test]
    fn params_validation() {
        assert!(GaParams::default().validate().is_ok());
        let bad = [
            GaParams { population: 1, ..GaParams::default() },
            GaParams { generations: 0, ..GaParams::default() },
            GaParams { elite_rate: 1.0, ..GaParams::default() },
            GaParams { crossover_prob: 1.5, ..GaParams::default() },
            GaParams { selection_pressure: 0.5, ..GaParams::default() },
            GaParams { weight_ratio: 0.0, ..GaParams::default() },
            GaParams { neighborhood_size: 31, ..GaParams::default() },
            GaParams { max_groups: 0, ..GaParams::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn selection_frequencies_follow_rank_weights() {
        let k = 10;
        let weights: Vec<f64> = (1..=k).map(|r| selection_weight(r, k, 40.0)).collect();
        let total: f64 = weights.iter().sum();
        let dist = WeightedIndex::new(&weights).unwrap();
        let mut r = rng(99);
        let draws = 100_000;
        let mut counts = vec![0usize; k];
        for _ in 0..draws {
            counts[dist.sample(&mut r)] += 1;
        }
        for (c, w) in counts.iter().zip(&weights) {
            let p = w / total;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            let freq = *c as f64 / draws as f64;
            assert!((freq - p).abs() <= 3.0 * se, "freq {freq} vs p {p}");
        }
    }

    fn toy_values() -> Vec<Vec<Option<f64>>> {
        (0..4)
            .map(|i| {
                (0..40)
                    .map(|t| Some((((t * (i + 2)) % 7) as f64) * 2.0))
                    .collect()
            })
            .collect()
    }

    fn toy_params() -> GaParams {
        GaParams {
            population: 12,
            generations: 6,
            elite_rate: 0.1,
            neighborhood_size: 3,
            candidates: 4,
            max_groups: 2,
            seed: 5,
            ..GaParams::default()
        }
    }

    #[test]
    fn elitism_keeps_fittest_initial() {
        let q = Quantizer::new(10, 12.0).unwrap();
        let params = GaParams {
            population: 2,
            generations: 1,
            elite_rate: 0.5,
            ..toy_params()
        };
        let mut r = rng(3);
        let out = run_ga(&toy_values(), 0, &[1, 2, 3], &q, &params, &mut r).unwrap();
        assert!(out.history[1].best >= out.history[0].best);
    }

    #[test]
    fn ga_is_deterministic_and_monotone() {
        let q = Quantizer::new(10, 12.0).unwrap();
        let params = toy_params();
        let a = run_ga(&toy_values(), 0, &[1, 2, 3], &q, &params, &mut rng(1)).unwrap();
        let b = run_ga(&toy_values(), 0, &[1, 2, 3], &q, &params, &mut rng(1)).unwrap();
        assert_eq!(a.top, b.top);
        assert_eq!(a.history, b.history);
        assert!(a.history.windows(2).all(|w| w[1].best_ever >= w[0].best_ever));
        assert!(a.top.len() <= TOP_GENOMES);
        assert!(a.top.windows(2).all(|w| w[0].1 >= w[1].1 && w[0].0 != w[1].0));
        assert!(a.top.iter().all(|(g, _)| *g == g.canonical()));
        for (g, _) in &a.top {
            assert!(g.is_valid(params.max_groups, params.neighborhood_size - 1));
        }
        assert_eq!(a.top[0].1, a.history.last().unwrap().best_ever);
    }
}
