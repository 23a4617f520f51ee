//! Deterministic gridworld navigation with a lossless lowering to
//! [`FiniteMdp`].
//!
//! The agent moves in four directions; moves into walls or off-grid leave it
//! in place. Reaching the goal pays `goal_reward` and the goal cell is
//! absorbing (further steps pay nothing). Cell `(x, y)` has state id
//! `y * width + x`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::env::{EnvState, Environment, Transition};
use crate::error::CoreError;
use crate::mdp::FiniteMdp;
use crate::rng::Stream;
use crate::theory::DeterministicPolicy;
use crate::Result;

/// Movement actions in fixed order.
pub const GRID_ACTIONS: [(i64, i64); 4] = [(0, 1), (0, -1), (-1, 0), (1, 0)];
pub const ACTION_UP: usize = 0;
pub const ACTION_DOWN: usize = 1;
pub const ACTION_LEFT: usize = 2;
pub const ACTION_RIGHT: usize = 3;

pub type Cell = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    pub start_cell: Cell,
    pub goal_cell: Cell,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub walls: BTreeSet<Cell>,
    pub horizon: usize,
}

impl GridWorld {
    pub fn new(
        width: usize,
        height: usize,
        start_cell: Cell,
        goal_cell: Cell,
        step_reward: f64,
        goal_reward: f64,
        walls: BTreeSet<Cell>,
        horizon: usize,
    ) -> Result<Self> {
        let gw = GridWorld {
            width,
            height,
            start_cell,
            goal_cell,
            step_reward,
            goal_reward,
            walls,
            horizon,
        };
        if width == 0 || height == 0 {
            return Err(CoreError::InvalidArgument("degenerate grid".into()));
        }
        if !gw.in_bounds(start_cell) || !gw.in_bounds(goal_cell) {
            return Err(CoreError::InvalidArgument(
                "start or goal outside grid".into(),
            ));
        }
        if gw.walls.contains(&start_cell) || gw.walls.contains(&goal_cell) {
            return Err(CoreError::InvalidArgument(
                "start or goal inside a wall".into(),
            ));
        }
        if horizon == 0 {
            return Err(CoreError::InvalidArgument("zero horizon".into()));
        }
        Ok(gw)
    }

    fn in_bounds(&self, cell: Cell) -> bool {
        cell.0 < self.width && cell.1 < self.height
    }

    pub fn cell_id(&self, cell: Cell) -> usize {
        cell.1 * self.width + cell.0
    }

    pub fn id_cell(&self, id: usize) -> Cell {
        (id % self.width, id / self.width)
    }

    /// Destination of `action` from `cell`; blocked or off-grid moves stay.
    pub fn move_from(&self, cell: Cell, action: usize) -> Cell {
        let (dx, dy) = GRID_ACTIONS[action];
        let nx = cell.0 as i64 + dx;
        let ny = cell.1 as i64 + dy;
        if nx < 0 || ny < 0 {
            return cell;
        }
        let next = (nx as usize, ny as usize);
        if !self.in_bounds(next) || self.walls.contains(&next) {
            return cell;
        }
        next
    }

    /// Reward for taking `action` in `cell`. The goal cell is absorbing and
    /// pays nothing.
    pub fn reward_from(&self, cell: Cell, action: usize) -> f64 {
        if cell == self.goal_cell {
            return 0.0;
        }
        let next = self.move_from(cell, action);
        let mut r = self.step_reward;
        if next == self.goal_cell {
            r += self.goal_reward;
        }
        r
    }

    /// Copy with extra blocked cells.
    pub fn with_extra_walls(&self, extra: &[Cell]) -> Result<GridWorld> {
        let mut walls = self.walls.clone();
        for &c in extra {
            if c == self.start_cell {
                return Err(CoreError::InvalidPerturbation(format!(
                    "obstacle covers the start cell {c:?}"
                )));
            }
            if !self.in_bounds(c) {
                return Err(CoreError::InvalidPerturbation(format!(
                    "obstacle cell {c:?} outside grid"
                )));
            }
            walls.insert(c);
        }
        GridWorld::new(
            self.width,
            self.height,
            self.start_cell,
            self.goal_cell,
            self.step_reward,
            self.goal_reward,
            walls,
            self.horizon,
        )
    }

    /// Lossless lowering to an explicit tabular MDP: state = cell id,
    /// deterministic transitions, undiscounted with the grid's horizon.
    pub fn to_finite_mdp(&self) -> Result<FiniteMdp> {
        let n = self.width * self.height;
        let n_actions = GRID_ACTIONS.len();
        let mut transition = vec![0.0; n * n_actions * n];
        let mut reward = vec![0.0; n * n_actions];
        for id in 0..n {
            let cell = self.id_cell(id);
            for a in 0..n_actions {
                let next = if cell == self.goal_cell || self.walls.contains(&cell) {
                    cell
                } else {
                    self.move_from(cell, a)
                };
                transition[(id * n_actions + a) * n + self.cell_id(next)] = 1.0;
                if !self.walls.contains(&cell) {
                    reward[id * n_actions + a] = self.reward_from(cell, a);
                }
            }
        }
        let mut initial = vec![0.0; n];
        initial[self.cell_id(self.start_cell)] = 1.0;
        FiniteMdp::new(
            n,
            n_actions,
            transition,
            reward,
            1.0,
            initial,
            Some(self.horizon),
        )
    }

    /// Undiscounted return of a fixed deterministic policy, simulated on
    /// the grid directly (not through the lowering).
    pub fn simulate_policy_return(&self, policy: &DeterministicPolicy) -> f64 {
        let mut cell = self.start_cell;
        let mut total = 0.0;
        for _ in 0..self.horizon {
            if cell == self.goal_cell {
                break;
            }
            let a = policy.action(self.cell_id(cell));
            total += self.reward_from(cell, a);
            cell = self.move_from(cell, a);
        }
        total
    }

    /// Whether a trajectory of state ids reaches the goal cell.
    pub fn reaches_goal(&self, state_ids: &[usize]) -> bool {
        let goal = self.cell_id(self.goal_cell);
        state_ids.iter().any(|&id| id == goal)
    }
}

impl Environment for GridWorld {
    fn n_actions(&self) -> usize {
        GRID_ACTIONS.len()
    }

    fn n_state_ids(&self) -> usize {
        self.width * self.height
    }

    fn max_steps(&self) -> usize {
        self.horizon
    }

    fn reset(&self, _rng: &mut Stream) -> EnvState {
        EnvState::discrete(self.cell_id(self.start_cell), 0)
    }

    fn step(&self, state: &EnvState, action: usize, _rng: &mut Stream) -> Result<Transition> {
        self.check_action(action)?;
        if state.id >= self.n_state_ids() {
            return Err(CoreError::InvalidState {
                state: state.id,
                n_states: self.n_state_ids(),
            });
        }
        let cell = self.id_cell(state.id);
        let (next, reward) = if cell == self.goal_cell {
            (cell, 0.0)
        } else {
            (self.move_from(cell, action), self.reward_from(cell, action))
        };
        Ok(Transition {
            next: EnvState::discrete(self.cell_id(next), state.t + 1),
            reward,
        })
    }

    fn is_terminal(&self, state: &EnvState) -> bool {
        state.id == self.cell_id(self.goal_cell)
    }
}

/// A 5x5 grid whose interior is walled off, leaving a short corridor
/// (right, then up) and a longer detour (up, over the top, then down) to the
/// goal at (4, 3). Used by perturbation demos and tests: blocking the short
/// corridor leaves the detour as the only route.
pub fn two_corridor_grid(horizon: usize) -> GridWorld {
    let walls: BTreeSet<Cell> = (1..4).flat_map(|x| (1..4).map(move |y| (x, y))).collect();
    GridWorld::new(5, 5, (0, 0), (4, 3), -1.0, 0.0, walls, horizon).expect("valid grid")
}

/// Cells of the short corridor of [`two_corridor_grid`], ordered away from
/// the start, used as a progressive obstacle ladder.
pub fn two_corridor_short_path_cells() -> Vec<Cell> {
    vec![(4, 1), (3, 0), (2, 0)]
}
