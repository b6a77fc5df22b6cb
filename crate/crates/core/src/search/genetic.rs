//! Genetic-algorithm baseline over index chromosomes.
//!
//! A chromosome is the triple of axis indices (cores, frequency, lidar).
//! Each generation keeps the elite, then fills up with children of
//! tournament-selected parents via one-point crossover and per-gene
//! mutation. Members of a generation are proposed one at a time; points
//! already evaluated are skipped.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Proposal, ProposalContext, SearchError, Strategy};
use crate::design_space::{enumerate, DesignPoint, DesignSpace};
use crate::orchestrator::MemoryRecord;
use crate::rng::{substream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaParams {
    pub population: usize,
    pub tournament_size: usize,
    pub mutation_rate: f64,
    pub elitism: usize,
    /// Infeasible points lose this multiple of the scenario timeout.
    pub timeout_penalty_factor: f64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 5,
            tournament_size: 2,
            mutation_rate: 0.2,
            elitism: 1,
            timeout_penalty_factor: 10.0,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.population == 0 {
            return Err("ga.population must be at least 1".into());
        }
        if self.tournament_size == 0 {
            return Err("ga.tournament_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err("ga.mutation_rate must lie in [0, 1]".into());
        }
        if self.elitism > self.population {
            return Err("ga.elitism cannot exceed ga.population".into());
        }
        if !(self.timeout_penalty_factor.is_finite() && self.timeout_penalty_factor >= 0.0) {
            return Err("ga.timeout_penalty_factor must be non-negative".into());
        }
        Ok(())
    }
}

/// Genes `[0, cut)` from `a`, the rest from `b`.
pub fn crossover(a: [usize; 3], b: [usize; 3], cut: usize) -> [usize; 3] {
    let mut c = b;
    c[..cut].copy_from_slice(&a[..cut]);
    c
}

/// With probability `rate` per gene, move to a uniformly chosen other index.
pub fn mutate(mut ch: [usize; 3], dims: [usize; 3], rate: f64, rng: &mut Rng) -> [usize; 3] {
    for g in 0..3 {
        if dims[g] > 1 && rng.gen::<f64>() < rate {
            let other = rng.gen_range(0..dims[g] - 1);
            ch[g] = if other >= ch[g] { other + 1 } else { other };
        }
    }
    ch
}

fn tournament<'a>(pop: &'a [(DesignPoint, f64)], k: usize, rng: &mut Rng) -> &'a DesignPoint {
    let mut best = &pop[rng.gen_range(0..pop.len())];
    for _ in 1..k {
        let c = &pop[rng.gen_range(0..pop.len())];
        if c.1 > best.1 {
            best = c;
        }
    }
    &best.0
}

/// Next generation from an evaluated population (higher fitness is better).
pub fn genetic_step(
    population: &[(DesignPoint, f64)],
    params: &GaParams,
    space: &DesignSpace,
    rng: &mut Rng,
) -> Vec<DesignPoint> {
    assert!(!population.is_empty(), "population must be non-empty");
    let dims = space.dims();
    let mut ranked: Vec<&(DesignPoint, f64)> = population.iter().collect();
    // stable: earlier members win fitness ties
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut next: Vec<DesignPoint> = ranked
        .iter()
        .take(params.elitism.min(params.population))
        .map(|(p, _)| *p)
        .collect();
    while next.len() < params.population {
        let a = space.index_of(tournament(population, params.tournament_size, rng)).expect("member");
        let b = space.index_of(tournament(population, params.tournament_size, rng)).expect("member");
        let cut = rng.gen_range(1..=2);
        let child = mutate(crossover(a, b, cut), dims, params.mutation_rate, rng);
        next.push(space.point_at(child));
    }
    next
}

pub struct GeneticStrategy {
    params: GaParams,
    rng: Rng,
    generation: Vec<DesignPoint>,
    queue: VecDeque<DesignPoint>,
    generations: usize,
}

impl GeneticStrategy {
    pub fn new(params: GaParams, seed: u64) -> Self {
        Self {
            params,
            rng: substream(seed, "strategy/ga"),
            generation: Vec::new(),
            queue: VecDeque::new(),
            generations: 0,
        }
    }

    fn fitness(&self, r: &MemoryRecord, timeout_s: f64) -> f64 {
        let penalty = if r.feasible {
            0.0
        } else {
            self.params.timeout_penalty_factor * timeout_s
        };
        -r.metrics.nav_time_s - penalty
    }
}

impl Strategy for GeneticStrategy {
    fn name(&self) -> &str {
        "ga"
    }

    fn propose(&mut self, ctx: &ProposalContext<'_>) -> Result<Proposal, SearchError> {
        let seen = ctx.seen();
        let all = enumerate(ctx.space);
        if all.iter().all(|p| seen.contains(p)) {
            return Err(SearchError::Exhausted);
        }
        loop {
            while let Some(p) = self.queue.pop_front() {
                if !seen.contains(&p) {
                    return Ok(Proposal::next(
                        p,
                        format!("generation {} member", self.generations),
                    ));
                }
            }
            if self.generation.is_empty() {
                self.generation = (0..self.params.population)
                    .map(|_| *all.choose(&mut self.rng).expect("space is non-empty"))
                    .collect();
            } else {
                let fit: HashMap<DesignPoint, f64> = ctx
                    .history
                    .iter()
                    .map(|r| (r.point, self.fitness(r, ctx.scenario.timeout_s)))
                    .collect();
                let pop: Vec<(DesignPoint, f64)> = self
                    .generation
                    .iter()
                    .map(|p| (*p, fit.get(p).copied().unwrap_or(f64::NEG_INFINITY)))
                    .collect();
                self.generation = genetic_step(&pop, &self.params, ctx.space, &mut self.rng);
                if self.generation.iter().all(|p| seen.contains(p)) {
                    // the population has collapsed onto known points; inject
                    // a fresh immigrant so the search keeps moving
                    let fresh: Vec<&DesignPoint> = all.iter().filter(|p| !seen.contains(p)).collect();
                    let imm = **fresh.choose(&mut self.rng).expect("checked above");
                    let last = self.generation.len() - 1;
                    self.generation[last] = imm;
                }
            }
            self.generations += 1;
            self.queue = self.generation.iter().copied().collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::test_support::model_record;
    use crate::scenario::robotaxi;

    #[test]
    fn crossover_after_first_gene() {
        let space = DesignSpace::default();
        let child = crossover([2, 1, 0], [27, 4, 1], 1);
        assert_eq!(child, [2, 4, 1]);
        assert_eq!(space.point_at(child), DesignPoint::new(3, 2.1, 14));
    }

    #[test]
    fn mutation_on_single_value_axes_is_identity() {
        let mut rng = substream(1, "t");
        for _ in 0..100 {
            assert_eq!(mutate([0, 0, 0], [1, 1, 1], 1.0, &mut rng), [0, 0, 0]);
        }
    }

    #[test]
    fn full_mutation_always_moves() {
        let mut rng = substream(2, "t");
        for _ in 0..100 {
            let m = mutate([3, 2, 1], [28, 5, 2], 1.0, &mut rng);
            assert!(m[0] != 3 && m[1] != 2 && m[2] != 1 && m[0] < 28 && m[1] < 5);
        }
    }

    #[test]
    fn identical_parents_without_mutation_breed_true() {
        let space = DesignSpace::default();
        let p = DesignPoint::new(9, 1.8, 14);
        let params = GaParams {
            mutation_rate: 0.0,
            ..GaParams::default()
        };
        let mut rng = substream(3, "t");
        let next = genetic_step(&[(p, -1.0), (p, -1.0)], &params, &space, &mut rng);
        assert!(next.iter().all(|q| *q == p));
    }

    #[test]
    fn elite_survives() {
        let space = DesignSpace::default();
        let mut rng = substream(4, "t");
        let pop = [
            (DesignPoint::new(2, 1.0, 7), -900.0),
            (DesignPoint::new(12, 2.1, 14), -160.0),
            (DesignPoint::new(5, 1.2, 7), -1800.0),
        ];
        for _ in 0..50 {
            let next = genetic_step(&pop, &GaParams::default(), &space, &mut rng);
            assert_eq!(next[0], DesignPoint::new(12, 2.1, 14));
            assert_eq!(next.len(), 5);
        }
    }

    #[test]
    fn proposals_are_members_and_fresh() {
        let s = robotaxi();
        let space = DesignSpace::default();
        let mut st = GeneticStrategy::new(GaParams::default(), 9);
        let mut hist: Vec<MemoryRecord> = Vec::new();
        for i in 0..60 {
            let ctx = ProposalContext {
                history: &hist,
                last_report: None,
                space: &space,
                scenario: &s,
            };
            let p = st.propose(&ctx).unwrap().point;
            assert!(space.index_of(&p).is_some());
            assert!(!hist.iter().any(|r| r.point == p));
            hist.push(model_record(i + 1, p, &[]));
        }
    }
}
