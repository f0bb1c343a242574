use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::env::explicit::{ExplicitMdp, Outcome};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::trace::{
    check_action, ActionId, Environment, Snapshot, StateId, TerminalClass, Transition,
};

/// `[x, y]`; `x` grows to the right, `y` grows downward.
pub type Cell = [usize; 2];

pub const ACTION_LABELS: [&str; 4] = ["right", "down", "left", "up"];
const MOVES: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    #[default]
    Sparse,
    /// Adds the signed horizontal displacement of every move.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridworldConfig {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    #[serde(default)]
    pub goal_cells: Vec<Cell>,
    #[serde(default)]
    pub pit_cells: Vec<Cell>,
    #[serde(default)]
    pub wall_cells: Vec<Cell>,
    #[serde(default)]
    pub slip_probability: f64,
    #[serde(default)]
    pub reward_mode: RewardMode,
    #[serde(default = "default_step_reward")]
    pub step_reward: f64,
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
    #[serde(default = "default_pit_reward")]
    pub pit_reward: f64,
    #[serde(default = "default_max_episode_steps")]
    pub max_episode_steps: usize,
}

fn default_step_reward() -> f64 {
    -1.0
}
fn default_goal_reward() -> f64 {
    100.0
}
fn default_pit_reward() -> f64 {
    -25.0
}
fn default_max_episode_steps() -> usize {
    200
}

impl GridworldConfig {
    /// Empty `width x height` grid with default rewards and no slip.
    pub fn open(width: usize, height: usize, start: Cell, goal: Cell) -> Self {
        GridworldConfig {
            width,
            height,
            start,
            goal_cells: vec![goal],
            pit_cells: Vec::new(),
            wall_cells: Vec::new(),
            slip_probability: 0.0,
            reward_mode: RewardMode::Sparse,
            step_reward: default_step_reward(),
            goal_reward: default_goal_reward(),
            pit_reward: default_pit_reward(),
            max_episode_steps: default_max_episode_steps(),
        }
    }

    pub fn with_pits(mut self, pits: &[Cell]) -> Self {
        self.pit_cells = pits.to_vec();
        self
    }

    pub fn with_slip(mut self, p: f64) -> Self {
        self.slip_probability = p;
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.width == 0 || self.height == 0 {
            return bad("grid dimensions must be positive".into());
        }
        let in_bounds = |c: &Cell| c[0] < self.width && c[1] < self.height;
        for (name, cells) in [
            ("start", std::slice::from_ref(&self.start)),
            ("goal_cells", &self.goal_cells[..]),
            ("pit_cells", &self.pit_cells[..]),
            ("wall_cells", &self.wall_cells[..]),
        ] {
            if let Some(c) = cells.iter().find(|c| !in_bounds(c)) {
                return bad(format!("{name} contains out-of-bounds cell {c:?}"));
            }
        }
        if self.pit_cells.contains(&self.start) || self.wall_cells.contains(&self.start) {
            return bad("start must not be a pit or wall cell".into());
        }
        if let Some(c) = self.goal_cells.iter().find(|c| self.pit_cells.contains(c)) {
            return bad(format!("goal_cells and pit_cells overlap at {c:?}"));
        }
        if let Some(c) = self
            .wall_cells
            .iter()
            .find(|c| self.goal_cells.contains(c) || self.pit_cells.contains(c))
        {
            return bad(format!("wall cell {c:?} is also a goal or pit"));
        }
        if !(0.0..1.0).contains(&self.slip_probability) {
            return bad(format!(
                "slip_probability must lie in [0, 1), got {}",
                self.slip_probability
            ));
        }
        Ok(())
    }

    pub fn min_transition_probability(&self) -> f64 {
        let p = self.slip_probability;
        if p == 0.0 {
            1.0
        } else {
            (1.0 - p).min(p / 2.0)
        }
    }

    pub fn state_id(cell: Cell) -> StateId {
        StateId::new(format!("({},{})", cell[0], cell[1]))
    }

    pub fn parse_state(state: &StateId) -> Option<Cell> {
        let inner = state.as_str().strip_prefix('(')?.strip_suffix(')')?;
        let (x, y) = inner.split_once(',')?;
        Some([x.parse().ok()?, y.parse().ok()?])
    }
}

#[derive(Debug, Clone)]
struct Layout {
    config: GridworldConfig,
    goals: BTreeSet<Cell>,
    pits: BTreeSet<Cell>,
    walls: BTreeSet<Cell>,
}

impl Layout {
    fn class(&self, c: Cell) -> TerminalClass {
        if self.pits.contains(&c) {
            TerminalClass::Unsafe
        } else if self.goals.contains(&c) {
            TerminalClass::Goal
        } else {
            TerminalClass::NonTerminal
        }
    }

    fn shift(&self, c: Cell, dir: usize) -> Cell {
        let (dx, dy) = MOVES[dir];
        let x = c[0] as i64 + dx;
        let y = c[1] as i64 + dy;
        if x < 0 || y < 0 || x >= self.config.width as i64 || y >= self.config.height as i64 {
            return c;
        }
        let next = [x as usize, y as usize];
        if self.walls.contains(&next) {
            c
        } else {
            next
        }
    }

    /// Intended direction plus the two perpendicular deviations.
    fn directions(dir: usize) -> [usize; 3] {
        // right -> (up, down); down -> (right, left); ...
        [dir, (dir + 3) % 4, (dir + 1) % 4]
    }

    fn reward(&self, from: Cell, to: Cell) -> f64 {
        let cfg = &self.config;
        match self.class(to) {
            TerminalClass::Unsafe => cfg.pit_reward,
            TerminalClass::Goal => cfg.goal_reward,
            TerminalClass::NonTerminal => match cfg.reward_mode {
                RewardMode::Sparse => cfg.step_reward,
                RewardMode::Dense => cfg.step_reward + to[0] as f64 - from[0] as f64,
            },
        }
    }
}

/// Slippery gridworld with pits (unsafe) and goal cells.
#[derive(Debug, Clone)]
pub struct Gridworld {
    layout: std::sync::Arc<Layout>,
    actions: Vec<ActionId>,
    cell: Cell,
    rng: Rng,
}

#[derive(Debug, Clone, Copy)]
struct GridToken {
    world: usize,
    cell: Cell,
}

impl Gridworld {
    pub fn new(config: GridworldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout {
            goals: config.goal_cells.iter().copied().collect(),
            pits: config.pit_cells.iter().copied().collect(),
            walls: config.wall_cells.iter().copied().collect(),
            config,
        };
        let cell = layout.config.start;
        Ok(Gridworld {
            layout: std::sync::Arc::new(layout),
            actions: ActionId::set(&ACTION_LABELS),
            cell,
            rng: Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &GridworldConfig {
        &self.layout.config
    }

    pub fn cell(&self) -> Cell {
        self.cell
    }

    fn identity(&self) -> usize {
        std::sync::Arc::as_ptr(&self.layout) as usize
    }

    /// Exact transition distribution of `action` in `cell`, merged by target.
    pub fn outcomes(&self, cell: Cell, action: usize) -> Vec<(f64, Cell)> {
        let p = self.layout.config.slip_probability;
        let dirs = Layout::directions(action);
        let weights = [1.0 - p, p / 2.0, p / 2.0];
        let mut out: Vec<(f64, Cell)> = Vec::new();
        for (d, w) in dirs.into_iter().zip(weights) {
            if w <= 0.0 {
                continue;
            }
            let next = self.layout.shift(cell, d);
            match out.iter_mut().find(|(_, c)| *c == next) {
                Some(entry) => entry.0 += w,
                None => out.push((w, next)),
            }
        }
        out
    }

    /// Explicit MDP over all non-wall cells, for analysis.
    pub fn to_explicit(&self) -> ExplicitMdp {
        let cfg = &self.layout.config;
        let cells: Vec<Cell> = (0..cfg.height)
            .flat_map(|y| (0..cfg.width).map(move |x| [x, y]))
            .filter(|c| !self.layout.walls.contains(c))
            .collect();
        let index = |c: Cell| cells.iter().position(|&x| x == c).unwrap();
        let transitions = cells
            .iter()
            .map(|&c| {
                if self.layout.class(c).is_terminal() {
                    return vec![Vec::new(); 4];
                }
                (0..4)
                    .map(|a| {
                        self.outcomes(c, a)
                            .into_iter()
                            .map(|(p, n)| Outcome {
                                probability: p,
                                next: index(n),
                                reward: self.layout.reward(c, n),
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        ExplicitMdp {
            states: cells
                .iter()
                .map(|&c| GridworldConfig::state_id(c).to_string())
                .collect(),
            initial: index(cfg.start),
            actions: ACTION_LABELS.iter().map(|s| s.to_string()).collect(),
            transitions,
            terminal: cells.iter().map(|&c| self.layout.class(c)).collect(),
        }
    }
}

impl Environment for Gridworld {
    fn action_set(&self) -> &[ActionId] {
        &self.actions
    }

    fn reset(&mut self) -> StateId {
        self.cell = self.layout.config.start;
        GridworldConfig::state_id(self.cell)
    }

    fn step(&mut self, action: &ActionId) -> Result<Transition> {
        check_action(&self.actions, action)?;
        if self.layout.class(self.cell).is_terminal() {
            return Err(Error::EpisodeOver);
        }
        let p = self.layout.config.slip_probability;
        let dirs = Layout::directions(action.index());
        let dir = if p == 0.0 {
            dirs[0]
        } else {
            let u: f64 = self.rng.gen();
            if u < 1.0 - p {
                dirs[0]
            } else if u < 1.0 - p / 2.0 {
                dirs[1]
            } else {
                dirs[2]
            }
        };
        let from = self.cell;
        self.cell = self.layout.shift(from, dir);
        Ok(Transition {
            state: GridworldConfig::state_id(self.cell),
            reward: self.layout.reward(from, self.cell),
            terminal: self.layout.class(self.cell),
        })
    }

    fn current_state(&self) -> StateId {
        GridworldConfig::state_id(self.cell)
    }

    fn terminal_class(&self) -> TerminalClass {
        self.layout.class(self.cell)
    }

    fn snapshot(&self) -> Result<Snapshot> {
        Ok(Snapshot::new(GridToken {
            world: self.identity(),
            cell: self.cell,
        }))
    }

    fn restore(&mut self, token: &Snapshot) -> Result<()> {
        let t = token.downcast::<GridToken>()?;
        if t.world != self.identity() {
            return Err(Error::ForeignSnapshot);
        }
        self.cell = t.cell;
        Ok(())
    }

    fn min_transition_probability(&self) -> f64 {
        self.layout.config.min_transition_probability()
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = Rng::seed_from_u64(seed);
    }

    fn fork(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
