//! Genetic-algorithm fuzzing of action traces, seeded by the reference trace.
//!
//! Each generation consists entirely of offspring of the previous one,
//! produced by crossover of two fitness-proportionally selected parents or by
//! repeated mutation of one. Fitness combines the number of states not
//! covered by earlier generations with the positive and negative reward a
//! trace collects, each normalized within its generation.

use std::collections::BTreeSet;

use num_traits::Float;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, Rng, TAG_ENV};
use crate::stats::normalize_by_max;
use crate::trace::{exec_action_trace, ActionId, ActionTrace, Environment, StateId, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessWeights<T> {
    pub coverage: T,
    pub positive: T,
    pub negative: T,
}

impl<T: Float> FitnessWeights<T> {
    pub fn new(coverage: T, positive: T, negative: T) -> Self {
        FitnessWeights {
            coverage,
            positive,
            negative,
        }
    }

    fn validate(&self) -> Result<()> {
        for w in [self.coverage, self.positive, self.negative] {
            if !w.is_finite() || w < T::zero() {
                return Err(Error::Domain("fitness weights must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

impl Default for FitnessWeights<f64> {
    fn default() -> Self {
        FitnessWeights::new(2.0, 1.5, 1.0)
    }
}

/// `λ_cov·fc + λ_pos·r_pos + λ_neg·(1 − r_neg)` over normalized terms.
pub fn fitness<T: Float>(fc: T, r_pos: T, r_neg: T, weights: &FitnessWeights<T>) -> Result<T> {
    for (name, v) in [("fc", fc), ("r_pos", r_pos), ("r_neg", r_neg)] {
        if !(v >= T::zero() && v <= T::one()) {
            return Err(Error::Domain(format!(
                "normalized term {name} = {} outside [0, 1]",
                v.to_f64().unwrap_or(f64::NAN)
            )));
        }
    }
    Ok(weights.coverage * fc + weights.positive * r_pos + weights.negative * (T::one() - r_neg))
}

/// Newly covered states relative to the generation maximum; 0 if nothing new
/// was covered by anyone.
pub fn coverage_term(new_states: usize, max_new_states: usize) -> f64 {
    if max_new_states == 0 {
        0.0
    } else {
        new_states as f64 / max_new_states as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzParams {
    pub generations: usize,
    pub population_size: usize,
    pub mutation_effect_size: usize,
    pub mutation_stop_probability: f64,
    pub crossover_probability: f64,
    pub weights: FitnessWeights<f64>,
    pub seed: u64,
    /// Executions averaged per fitness evaluation.
    pub evaluation_resets: usize,
    #[serde(default = "one")]
    pub jobs: usize,
}

fn one() -> usize {
    1
}

impl Default for FuzzParams {
    fn default() -> Self {
        FuzzParams {
            generations: 50,
            population_size: 50,
            mutation_effect_size: 15,
            mutation_stop_probability: 0.2,
            crossover_probability: 0.25,
            weights: FitnessWeights::default(),
            seed: 0,
            evaluation_resets: 1,
            jobs: 1,
        }
    }
}

impl FuzzParams {
    pub fn validate(&self) -> Result<()> {
        if self.generations == 0 || self.population_size == 0 || self.mutation_effect_size == 0 {
            return Err(Error::Domain(
                "generations, population_size and mutation_effect_size must be >= 1".into(),
            ));
        }
        if !(self.mutation_stop_probability > 0.0 && self.mutation_stop_probability <= 1.0) {
            return Err(Error::Domain("mutation_stop_probability must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.crossover_probability) {
            return Err(Error::Domain("crossover_probability must lie in [0, 1)".into()));
        }
        if self.evaluation_resets == 0 {
            return Err(Error::Domain("evaluation_resets must be >= 1".into()));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MutationOp {
    Insert,
    Remove,
    Change,
    Append,
}

impl MutationOp {
    pub const ALL: [MutationOp; 4] = [
        MutationOp::Insert,
        MutationOp::Remove,
        MutationOp::Change,
        MutationOp::Append,
    ];
}

fn random_actions(n: usize, actions: &[ActionId], rng: &mut Rng) -> Vec<ActionId> {
    (0..n)
        .map(|_| actions[rng.gen_range(0..actions.len())].clone())
        .collect()
}

/// Applies one mutation operator with effect size `x`.
pub fn apply_mutation(
    trace: &ActionTrace,
    op: MutationOp,
    x: usize,
    actions: &[ActionId],
    rng: &mut Rng,
) -> ActionTrace {
    let mut body = trace.actions.clone();
    let len = body.len();
    match op {
        MutationOp::Insert => {
            let at = rng.gen_range(0..=len);
            let fresh = random_actions(x, actions, rng);
            body.splice(at..at, fresh);
        }
        MutationOp::Remove => {
            if len > 1 {
                let from = rng.gen_range(0..len);
                let count = x.min(len - from).min(len - 1);
                body.drain(from..from + count);
            }
        }
        MutationOp::Change => {
            if len > 0 {
                let from = rng.gen_range(0..len);
                let count = x.min(len - from);
                let fresh = random_actions(count, actions, rng);
                body.splice(from..from + count, fresh);
            }
        }
        MutationOp::Append => body.extend(random_actions(x, actions, rng)),
    }
    ActionTrace::new(body)
}

/// Repeated mutation; returns the offspring and the operators applied.
pub fn mutate_traced(
    trace: &ActionTrace,
    ms: usize,
    p_mstop: f64,
    actions: &[ActionId],
    rng: &mut Rng,
) -> (ActionTrace, Vec<MutationOp>) {
    let mut current = trace.clone();
    let mut applied = Vec::new();
    loop {
        let x = rng.gen_range(1..=ms.max(1));
        let op = MutationOp::ALL[rng.gen_range(0..4)];
        current = apply_mutation(&current, op, x, actions, rng);
        applied.push(op);
        if rng.gen::<f64>() < p_mstop {
            return (current, applied);
        }
    }
}

pub fn mutate(
    trace: &ActionTrace,
    ms: usize,
    p_mstop: f64,
    actions: &[ActionId],
    rng: &mut Rng,
) -> ActionTrace {
    mutate_traced(trace, ms, p_mstop, actions, rng).0
}

/// `τ1^{-i} · τ2^{+i}`.
pub fn crossover_at(first: &ActionTrace, second: &ActionTrace, i: usize) -> ActionTrace {
    let mut body = first.actions[..i].to_vec();
    body.extend_from_slice(&second.actions[i..]);
    ActionTrace::new(body)
}

/// Single-point crossover at a uniform point in `1..min(|τ1|, |τ2|)`.
pub fn crossover(first: &ActionTrace, second: &ActionTrace, rng: &mut Rng) -> Result<ActionTrace> {
    let shorter = first.len().min(second.len());
    if shorter < 2 {
        return Err(Error::TooShort(first.len(), second.len()));
    }
    Ok(crossover_at(first, second, rng.gen_range(1..shorter)))
}

/// Roulette-wheel index over non-negative fitnesses; uniform if all are 0.
pub fn select_index(fitnesses: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = fitnesses.iter().sum();
    if total <= 0.0 {
        return rng.gen_range(0..fitnesses.len());
    }
    let mut ball = rng.gen::<f64>() * total;
    for (i, &f) in fitnesses.iter().enumerate() {
        if ball < f {
            return i;
        }
        ball -= f;
    }
    // float slack: land on the last positive slot
    fitnesses.iter().rposition(|&f| f > 0.0).unwrap_or(0)
}

pub fn select_parent<'a>(generation: &'a [EvaluatedTrace], rng: &mut Rng) -> &'a EvaluatedTrace {
    let f: Vec<f64> = generation.iter().map(|e| e.fitness).collect();
    &generation[select_index(&f, rng)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedTrace {
    pub actions: ActionTrace,
    /// First execution of the trace.
    pub executed: Trace,
    /// Sum of positive rewards (averaged over evaluation resets).
    pub r_pos_raw: f64,
    /// Magnitude of the sum of negative rewards.
    pub r_neg_raw: f64,
    pub coverage: BTreeSet<StateId>,
    pub new_states: usize,
    pub fc: f64,
    pub r_pos: f64,
    pub r_neg: f64,
    pub fitness: f64,
}

/// Per-trace normalized `(r_pos, r_neg)` against the generation maxima.
pub fn normalize_rewards(generation: &[EvaluatedTrace]) -> Vec<(f64, f64)> {
    let pos: Vec<f64> = generation.iter().map(|e| e.r_pos_raw).collect();
    let neg: Vec<f64> = generation.iter().map(|e| e.r_neg_raw).collect();
    normalize_by_max(&pos)
        .into_iter()
        .zip(normalize_by_max(&neg))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub population: Vec<EvaluatedTrace>,
    /// Index of the fittest member (lowest index on ties).
    pub fittest: usize,
    /// `|Cov_ppop|` after this generation.
    pub coverage_after: usize,
}

impl Generation {
    pub fn fittest(&self) -> &EvaluatedTrace {
        &self.population[self.fittest]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzRun {
    /// The evaluated seed population `{τ_ref}`.
    pub initial: Generation,
    pub generations: Vec<Generation>,
    pub cumulative_coverage: BTreeSet<StateId>,
}

impl FuzzRun {
    /// Fittest trace per generation, cut to the actions actually executed.
    pub fn fittest_traces(&self) -> Vec<ActionTrace> {
        self.generations
            .iter()
            .map(|g| g.fittest().executed.action_trace())
            .collect()
    }

    pub fn to_json(&self) -> FuzzTracesJson {
        FuzzTracesJson {
            generations: self.generations.len(),
            traces: self
                .generations
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    let best = g.fittest();
                    FuzzTraceEntry {
                        generation: i + 1,
                        actions: best.executed.action_trace().labels(),
                        fitness: best.fitness,
                        ret: best.executed.accumulated_reward(),
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzTracesJson {
    pub generations: usize,
    pub traces: Vec<FuzzTraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzTraceEntry {
    pub generation: usize,
    pub actions: Vec<String>,
    pub fitness: f64,
    #[serde(rename = "return")]
    pub ret: f64,
}

impl FuzzTracesJson {
    pub fn action_traces(&self, actions: &[ActionId]) -> Result<Vec<ActionTrace>> {
        self.traces
            .iter()
            .map(|t| ActionTrace::from_labels(&t.actions, actions))
            .collect()
    }
}

/// Executes the trace `resets` times and records raw reward terms and the
/// union of visited states.
fn evaluate_raw(
    env: &mut dyn Environment,
    actions: ActionTrace,
    resets: usize,
    seed: u64,
) -> Result<EvaluatedTrace> {
    env.reseed(seed);
    let mut coverage = BTreeSet::new();
    let (mut pos, mut neg) = (0.0, 0.0);
    let mut first = None;
    for _ in 0..resets {
        let t = exec_action_trace(env, &actions)?;
        for s in &t.steps {
            if s.reward > 0.0 {
                pos += s.reward;
            } else {
                neg += s.reward;
            }
        }
        coverage.extend(t.states().cloned());
        first.get_or_insert(t);
    }
    Ok(EvaluatedTrace {
        actions,
        executed: first.expect("resets >= 1"),
        r_pos_raw: pos / resets as f64,
        r_neg_raw: (neg / resets as f64).abs(),
        coverage,
        new_states: 0,
        fc: 0.0,
        r_pos: 0.0,
        r_neg: 0.0,
        fitness: 0.0,
    })
}

/// Fills in novelty, normalized terms and fitness for a whole generation and
/// folds its coverage into `covered`.
fn score_generation(
    mut population: Vec<EvaluatedTrace>,
    covered: &mut BTreeSet<StateId>,
    weights: &FitnessWeights<f64>,
) -> Result<Generation> {
    for e in &mut population {
        e.new_states = e.coverage.difference(covered).count();
    }
    let max_new = population.iter().map(|e| e.new_states).max().unwrap_or(0);
    let norm = normalize_rewards(&population);
    for (e, (r_pos, r_neg)) in population.iter_mut().zip(norm) {
        e.fc = coverage_term(e.new_states, max_new);
        e.r_pos = r_pos;
        e.r_neg = r_neg;
        e.fitness = fitness(e.fc, e.r_pos, e.r_neg, weights)?;
    }
    let mut fittest = 0;
    for (i, e) in population.iter().enumerate() {
        if e.fitness > population[fittest].fitness {
            fittest = i;
        }
    }
    for e in &population {
        covered.extend(e.coverage.iter().cloned());
    }
    Ok(Generation {
        population,
        fittest,
        coverage_after: covered.len(),
    })
}

fn breed(
    parents: &[EvaluatedTrace],
    params: &FuzzParams,
    actions: &[ActionId],
    rng: &mut Rng,
) -> ActionTrace {
    if rng.gen::<f64>() < params.crossover_probability {
        let a = select_parent(parents, rng).actions.clone();
        let b = select_parent(parents, rng).actions.clone();
        if let Ok(child) = crossover(&a, &b, rng) {
            return child;
        }
        return mutate(&a, params.mutation_effect_size, params.mutation_stop_probability, actions, rng);
    }
    let parent = &select_parent(parents, rng).actions;
    mutate(parent, params.mutation_effect_size, params.mutation_stop_probability, actions, rng)
}

/// Runs the genetic search for `params.generations` generations.
pub fn fuzz_traces(
    env: &dyn Environment,
    reference: &ActionTrace,
    params: &FuzzParams,
) -> Result<FuzzRun> {
    params.validate()?;
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let actions = env.action_set().to_vec();
    let mut covered = BTreeSet::new();
    let seed_eval = {
        let mut worker = env.fork();
        evaluate_raw(
            worker.as_mut(),
            reference.clone(),
            params.evaluation_resets,
            derive_seed(params.seed, &[0, 0, TAG_ENV]),
        )?
    };
    let initial = score_generation(vec![seed_eval], &mut covered, &params.weights)?;

    let pool = if params.jobs > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(params.jobs)
                .build()
                .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut generations: Vec<Generation> = Vec::with_capacity(params.generations);
    for g in 1..=params.generations {
        let parents = &generations.last().unwrap_or(&initial).population;
        let make = |j: usize| -> Result<EvaluatedTrace> {
            let mut rng = stream(params.seed, &[g as u64, j as u64]);
            let child = breed(parents, params, &actions, &mut rng);
            let mut worker = env.fork();
            evaluate_raw(
                worker.as_mut(),
                child,
                params.evaluation_resets,
                derive_seed(params.seed, &[g as u64, j as u64, TAG_ENV]),
            )
        };
        let offspring = match &pool {
            Some(pool) => pool.install(|| {
                (0..params.population_size)
                    .into_par_iter()
                    .map(make)
                    .collect::<Result<Vec<_>>>()
            })?,
            None => (0..params.population_size)
                .map(make)
                .collect::<Result<Vec<_>>>()?,
        };
        generations.push(score_generation(offspring, &mut covered, &params.weights)?);
    }

    Ok(FuzzRun {
        initial,
        generations,
        cumulative_coverage: covered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::gridworld::{Gridworld, GridworldConfig};
    use crate::rng::stream;
    use proptest::prelude::*;

    fn ab() -> Vec<ActionId> {
        ActionId::set(&["a", "b"])
    }

    fn trace(labels: &str) -> ActionTrace {
        let set = ab();
        ActionTrace::from_labels(&labels.chars().map(|c| c.to_string()).collect::<Vec<_>>(), &set)
            .unwrap()
    }

    #[test]
    fn fitness_arithmetic() {
        let w = FitnessWeights::default();
        assert!((fitness(1.0, 1.0, 0.0, &w).unwrap() - 4.5).abs() < 1e-12);
        assert!((fitness(0.0, 0.0, 1.0, &w).unwrap() - 0.0).abs() < 1e-12);
        assert!((fitness(0.5, 0.2, 0.4, &w).unwrap() - 1.9).abs() < 1e-12);
        assert!(matches!(fitness(1.5, 0.0, 0.0, &w), Err(Error::Domain(_))));
        assert!(fitness(0.0, -0.1, 0.0, &w).is_err());
        let w32 = FitnessWeights::new(2.0f32, 1.5, 1.0);
        assert!((fitness(0.5f32, 0.2, 0.4, &w32).unwrap() - 1.9).abs() < 1e-6);
    }

    #[test]
    fn coverage_term_guards() {
        assert_eq!(coverage_term(4, 4), 1.0);
        assert_eq!(coverage_term(0, 3), 0.0);
        assert_eq!(coverage_term(0, 0), 0.0);
    }

    #[test]
    fn append_keeps_prefix() {
        let mut rng = stream(1, &[]);
        let out = apply_mutation(&trace("a"), MutationOp::Append, 3, &ab(), &mut rng);
        assert_eq!(out.len(), 4);
        assert_eq!(out.actions[0].label(), "a");
    }

    #[test]
    fn remove_never_empties() {
        let mut rng = stream(2, &[]);
        for _ in 0..200 {
            let out = apply_mutation(&trace("abab"), MutationOp::Remove, 10, &ab(), &mut rng);
            assert!(!out.is_empty());
        }
        let out = apply_mutation(&trace("a"), MutationOp::Remove, 3, &ab(), &mut rng);
        assert_eq!(out, trace("a"));
    }

    #[test]
    fn single_application_when_stop_is_certain() {
        let mut rng = stream(3, &[]);
        for _ in 0..50 {
            let (_, ops) = mutate_traced(&trace("ab"), 15, 1.0, &ab(), &mut rng);
            assert_eq!(ops.len(), 1);
        }
    }

    #[test]
    fn crossover_examples() {
        assert_eq!(crossover_at(&trace("aaaa"), &trace("bbbb"), 2), trace("aabb"));
        let mut rng = stream(4, &[]);
        for _ in 0..20 {
            assert_eq!(crossover(&trace("abba"), &trace("abba"), &mut rng).unwrap(), trace("abba"));
            let c = crossover(&trace("aaaaaa"), &trace("bbb"), &mut rng).unwrap();
            assert_eq!(c.len(), 3);
        }
        assert!(matches!(
            crossover(&trace("a"), &trace("bbb"), &mut rng),
            Err(Error::TooShort(1, 3))
        ));
    }

    #[test]
    fn roulette_frequencies() {
        let mut rng = stream(5, &[]);
        let draws = 10_000;
        let hits = (0..draws).filter(|_| select_index(&[1.0, 3.0], &mut rng) == 1).count();
        assert!((hits as f64 / draws as f64 - 0.75).abs() < 0.02);

        let zero_hits = (0..draws).filter(|_| select_index(&[0.0, 0.0], &mut rng) == 1).count();
        assert!((zero_hits as f64 / draws as f64 - 0.5).abs() < 0.02);
        assert_eq!(select_index(&[0.7], &mut rng), 0);
    }

    #[test]
    fn minimal_run_shape() {
        let env = Gridworld::new(GridworldConfig::open(4, 4, [0, 0], [3, 3]), 0).unwrap();
        let reference = ActionTrace::from_labels(&["right", "right", "right"], env.action_set()).unwrap();
        let params = FuzzParams {
            generations: 1,
            population_size: 1,
            crossover_probability: 0.0,
            ..Default::default()
        };
        let run = fuzz_traces(&env, &reference, &params).unwrap();
        assert_eq!(run.fittest_traces().len(), 1);
        assert_eq!(run.generations[0].population.len(), 1);
        assert!(matches!(
            fuzz_traces(&env, &ActionTrace::default(), &params),
            Err(Error::EmptyReference)
        ));
    }

    #[test]
    fn parallel_evaluation_matches_sequential() {
        let env = Gridworld::new(GridworldConfig::open(5, 5, [0, 0], [4, 4]).with_slip(0.1), 3).unwrap();
        let reference = ActionTrace::from_labels(&["right"; 8], env.action_set()).unwrap();
        let base = FuzzParams {
            generations: 4,
            population_size: 12,
            seed: 42,
            ..Default::default()
        };
        let seq = fuzz_traces(&env, &reference, &base).unwrap();
        let par = fuzz_traces(&env, &reference, &FuzzParams { jobs: 4, ..base }).unwrap();
        assert_eq!(seq, par);
    }

    proptest! {
        #[test]
        fn fitness_is_monotone(fc in 0.0f64..=1.0, rp in 0.0f64..=1.0, rn in 0.0f64..=1.0,
                               d in 0.0f64..=1.0, wc in 0.0f64..5.0, wp in 0.0f64..5.0, wn in 0.0f64..5.0) {
            let w = FitnessWeights::new(wc, wp, wn);
            let f = fitness(fc, rp, rn, &w).unwrap();
            prop_assert!(fitness((fc + d).min(1.0), rp, rn, &w).unwrap() >= f);
            prop_assert!(fitness(fc, (rp + d).min(1.0), rn, &w).unwrap() >= f);
            prop_assert!(fitness(fc, rp, (rn + d).min(1.0), &w).unwrap() <= f);
        }

        #[test]
        fn mutation_stays_in_action_set(seed in any::<u64>(), len in 1usize..20) {
            let set = ActionId::set(&["w", "x", "y", "z"]);
            let start = ActionTrace::new((0..len).map(|i| set[i % 4].clone()).collect());
            let mut rng = stream(seed, &[]);
            let out = mutate(&start, 15, 0.2, &set, &mut rng);
            prop_assert!(!out.is_empty());
            for a in &out.actions {
                prop_assert!(set.contains(a));
            }
        }
    }
}
