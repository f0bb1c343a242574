use std::collections::{HashMap, VecDeque};

use rand::Rng as _;

use crate::env::gridworld::{Cell, Gridworld, GridworldConfig};
use crate::rng::{derive_seed, Rng};
use crate::trace::{ActionId, Policy, StateId};

/// Uniformly random actions. The salt decorrelates agents that share a
/// caller-provided stream.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub salt: u64,
}

impl Policy for RandomPolicy {
    fn act(&self, _state: &StateId, actions: &[ActionId], rng: &mut Rng) -> ActionId {
        let draw = derive_seed(self.salt, &[rng.gen::<u64>()]);
        actions[(draw % actions.len() as u64) as usize].clone()
    }
}

/// Always the same action index.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub usize);

impl Policy for ConstantPolicy {
    fn act(&self, _state: &StateId, actions: &[ActionId], _rng: &mut Rng) -> ActionId {
        actions[self.0.min(actions.len() - 1)].clone()
    }
}

/// Deterministic state -> action-index table with a fallback index.
#[derive(Debug, Clone, Default)]
pub struct LookupPolicy {
    pub table: HashMap<StateId, usize>,
    pub fallback: usize,
}

impl Policy for LookupPolicy {
    fn act(&self, state: &StateId, actions: &[ActionId], _rng: &mut Rng) -> ActionId {
        let idx = self.table.get(state).copied().unwrap_or(self.fallback);
        actions[idx.min(actions.len() - 1)].clone()
    }
}

/// Breadth-first distances over deterministic (slip-free) moves towards
/// `targets`, never routing through `blocked` cells. Returns, per reachable
/// cell, the lowest-index action that makes progress.
fn route_towards(cfg: &GridworldConfig, targets: &[Cell], blocked: &[Cell]) -> LookupPolicy {
    let mut plain = cfg.clone();
    plain.slip_probability = 0.0;
    plain.goal_cells.clear();
    plain.pit_cells.clear();
    let world = Gridworld::new(plain, 0).expect("validated layout");
    let cells: Vec<Cell> = (0..cfg.height)
        .flat_map(|y| (0..cfg.width).map(move |x| [x, y]))
        .filter(|c| !cfg.wall_cells.contains(c))
        .collect();
    let next = |c: Cell, a: usize| world.outcomes(c, a)[0].1;

    let mut dist: HashMap<Cell, usize> = targets.iter().map(|&t| (t, 0)).collect();
    let mut queue: VecDeque<Cell> = targets.iter().copied().collect();
    while let Some(c) = queue.pop_front() {
        let d = dist[&c];
        for &p in &cells {
            if dist.contains_key(&p) || blocked.contains(&p) || targets.contains(&p) {
                continue;
            }
            if (0..4).any(|a| next(p, a) == c) {
                dist.insert(p, d + 1);
                queue.push_back(p);
            }
        }
    }

    let mut table = HashMap::new();
    for &c in &cells {
        let Some(&d) = dist.get(&c) else { continue };
        if d == 0 {
            continue;
        }
        if let Some(a) = (0..4).find(|&a| dist.get(&next(c, a)) == Some(&(d - 1))) {
            table.insert(GridworldConfig::state_id(c), a);
        }
    }
    LookupPolicy { table, fallback: 0 }
}

/// Shortest path to the nearest goal that never enters a pit.
pub fn shortest_safe_policy(cfg: &GridworldConfig) -> LookupPolicy {
    route_towards(cfg, &cfg.goal_cells, &cfg.pit_cells)
}

/// Walks straight into the nearest pit.
pub fn into_pit_policy(cfg: &GridworldConfig) -> LookupPolicy {
    route_towards(cfg, &cfg.pit_cells, &cfg.goal_cells)
}
