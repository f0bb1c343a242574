//! Built-in environments and agents-under-test.

pub mod explicit;
pub mod gridworld;
pub mod policies;
pub mod qlearning;

pub use explicit::{fig2_mdp, fig2_mdp_table, ExplicitEnv, ExplicitMdp, Outcome};
pub use gridworld::{Cell, Gridworld, GridworldConfig, RewardMode};
pub use policies::{
    into_pit_policy, shortest_safe_policy, ConstantPolicy, LookupPolicy, RandomPolicy,
};
pub use qlearning::{train_tabular_q, EpsilonSchedule, QLearningParams, QTablePolicy};
