//! Structured environment perturbations: obstacles, time-windowed forces and
//! motor failures.
//!
//! A perturbation wraps an environment without mutating it. Obstacles make
//! cells or a region blocking; a force adds a fixed displacement to the
//! executed action during `[window_start, window_end]` (inclusive); a motor
//! failure replaces the affected actions with no-ops during
//! `[window_start, window_start + magnitude)`.

use serde::{Deserialize, Serialize};

use crate::env::{EnvState, Environment, Transition};
use crate::error::CoreError;
use crate::gridworld::{Cell, GridWorld};
use crate::pointmass::{PointMassEnv, Rect};
use crate::rng::Stream;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbationKind {
    Obstacle,
    Force,
    MotorFailure,
}

impl std::fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PerturbationKind::Obstacle => write!(f, "obstacle"),
            PerturbationKind::Force => write!(f, "force"),
            PerturbationKind::MotorFailure => write!(f, "motor_failure"),
        }
    }
}

/// Where an obstacle sits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Location {
    /// Grid cells, ordered; `magnitude` selects how many are activated.
    Cells(Vec<Cell>),
    /// Planar region at full extent; `magnitude` scales it about its center.
    Region(Rect),
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    /// Obstacle extent (cell count or region scale), force displacement per
    /// axis, or failure duration in steps.
    pub magnitude: f64,
    pub window_start: usize,
    pub window_end: usize,
    /// Actions affected by a motor failure.
    pub affected_actions: Vec<usize>,
    pub location: Location,
}

impl PerturbationSpec {
    pub fn obstacle_cells(cells: Vec<Cell>, count: usize) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::Obstacle,
            magnitude: count as f64,
            window_start: 0,
            window_end: 0,
            affected_actions: Vec::new(),
            location: Location::Cells(cells),
        }
    }

    pub fn obstacle_region(region: Rect, scale: f64) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::Obstacle,
            magnitude: scale,
            window_start: 0,
            window_end: 0,
            affected_actions: Vec::new(),
            location: Location::Region(region),
        }
    }

    pub fn force(magnitude: f64, window_start: usize, window_end: usize) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::Force,
            magnitude,
            window_start,
            window_end,
            affected_actions: Vec::new(),
            location: Location::None,
        }
    }

    pub fn motor_failure(duration: usize, window_start: usize, affected: Vec<usize>) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::MotorFailure,
            magnitude: duration as f64,
            window_start,
            window_end: window_start + duration,
            affected_actions: affected,
            location: Location::None,
        }
    }

    /// Copy with a different magnitude (used by level sweeps).
    pub fn at_magnitude(&self, magnitude: f64) -> Self {
        let mut spec = self.clone();
        spec.magnitude = magnitude;
        if spec.kind == PerturbationKind::MotorFailure {
            spec.window_end = spec.window_start + magnitude as usize;
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_start > self.window_end {
            return Err(CoreError::InvalidPerturbation(format!(
                "window_start {} > window_end {}",
                self.window_start, self.window_end
            )));
        }
        if self.kind == PerturbationKind::MotorFailure {
            if self.affected_actions.is_empty() {
                return Err(CoreError::InvalidPerturbation(
                    "motor failure needs a nonempty affected-action set".into(),
                ));
            }
            if self.magnitude < 0.0 || self.magnitude.fract() != 0.0 {
                return Err(CoreError::InvalidPerturbation(
                    "motor failure duration must be a nonnegative integer".into(),
                ));
            }
        }
        if self.kind == PerturbationKind::Obstacle && self.magnitude < 0.0 {
            return Err(CoreError::InvalidPerturbation(
                "obstacle extent must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Whether a force window covers step `t` (inclusive bounds).
    fn force_active(&self, t: usize) -> bool {
        t >= self.window_start && t <= self.window_end
    }

    /// Whether a motor failure covers step `t`
    /// (`[window_start, window_start + magnitude)`).
    fn failure_active(&self, t: usize) -> bool {
        let duration = self.magnitude as usize;
        t >= self.window_start && t < self.window_start + duration
    }
}

fn clip_window(spec: &mut PerturbationSpec, horizon: usize) {
    if spec.window_end >= horizon && spec.kind != PerturbationKind::Obstacle {
        log::warn!(
            "perturbation window [{}, {}] extends past horizon {}; clipping",
            spec.window_start,
            spec.window_end,
            horizon
        );
        spec.window_end = horizon.saturating_sub(1).max(spec.window_start);
    }
}

/// A perturbed gridworld; wraps the base, never mutates it.
#[derive(Clone, Debug)]
pub struct PerturbedGrid {
    base: GridWorld,
    spec: PerturbationSpec,
    /// Base grid with obstacle cells added as walls (obstacle kind only).
    obstacle_grid: Option<GridWorld>,
}

impl PerturbedGrid {
    pub fn spec(&self) -> &PerturbationSpec {
        &self.spec
    }

    pub fn base(&self) -> &GridWorld {
        &self.base
    }

    /// The stationary grid this perturbation is equivalent to, when one
    /// exists (obstacles only).
    pub fn as_stationary(&self) -> Option<&GridWorld> {
        self.obstacle_grid.as_ref()
    }
}

/// Build a perturbed gridworld.
pub fn apply_to_gridworld(base: &GridWorld, spec: &PerturbationSpec) -> Result<PerturbedGrid> {
    spec.validate()?;
    let mut spec = spec.clone();
    clip_window(&mut spec, base.horizon);
    let obstacle_grid = match (&spec.kind, &spec.location) {
        (PerturbationKind::Obstacle, Location::Cells(cells)) => {
            let count = (spec.magnitude as usize).min(cells.len());
            Some(base.with_extra_walls(&cells[..count])?)
        }
        (PerturbationKind::Obstacle, _) => {
            return Err(CoreError::InvalidPerturbation(
                "gridworld obstacles need a cell list".into(),
            ));
        }
        _ => None,
    };
    Ok(PerturbedGrid {
        base: base.clone(),
        spec,
        obstacle_grid,
    })
}

impl Environment for PerturbedGrid {
    fn n_actions(&self) -> usize {
        self.base.n_actions()
    }

    fn n_state_ids(&self) -> usize {
        self.base.n_state_ids()
    }

    fn max_steps(&self) -> usize {
        self.base.max_steps()
    }

    fn reset(&self, rng: &mut Stream) -> EnvState {
        self.base.reset(rng)
    }

    fn is_terminal(&self, state: &EnvState) -> bool {
        self.base.is_terminal(state)
    }

    fn step(&self, state: &EnvState, action: usize, rng: &mut Stream) -> Result<Transition> {
        match self.spec.kind {
            PerturbationKind::Obstacle => self
                .obstacle_grid
                .as_ref()
                .expect("obstacle grid precomputed")
                .step(state, action, rng),
            PerturbationKind::MotorFailure => {
                self.base.check_action(action)?;
                if self.spec.failure_active(state.t)
                    && self.spec.affected_actions.contains(&action)
                {
                    // No-op: stay in place, still paying the step cost.
                    let cell = self.base.id_cell(state.id);
                    let reward = if cell == self.base.goal_cell {
                        0.0
                    } else {
                        self.base.step_reward
                    };
                    Ok(Transition {
                        next: EnvState::discrete(state.id, state.t + 1),
                        reward,
                    })
                } else {
                    self.base.step(state, action, rng)
                }
            }
            PerturbationKind::Force => {
                let tr = self.base.step(state, action, rng)?;
                if !self.spec.force_active(state.t) {
                    return Ok(tr);
                }
                // Push the outcome cell leftward by `magnitude` cells,
                // stopping at walls or the grid edge.
                let mut cell = self.base.id_cell(tr.next.id);
                for _ in 0..(self.spec.magnitude.abs() as usize) {
                    let pushed = self.base.move_from(cell, crate::gridworld::ACTION_LEFT);
                    if pushed == cell {
                        break;
                    }
                    cell = pushed;
                }
                Ok(Transition {
                    next: EnvState::discrete(self.base.cell_id(cell), tr.next.t),
                    reward: tr.reward,
                })
            }
        }
    }
}

/// A perturbed point-mass environment; wraps the base, never mutates it.
#[derive(Clone, Debug)]
pub struct PerturbedPointMass {
    base: PointMassEnv,
    spec: PerturbationSpec,
    /// Obstacle region scaled to the spec magnitude (obstacle kind only).
    region: Option<Rect>,
}

impl PerturbedPointMass {
    pub fn spec(&self) -> &PerturbationSpec {
        &self.spec
    }

    pub fn base(&self) -> &PointMassEnv {
        &self.base
    }
}

/// Build a perturbed point-mass environment.
pub fn apply_to_point_mass(
    base: &PointMassEnv,
    spec: &PerturbationSpec,
) -> Result<PerturbedPointMass> {
    spec.validate()?;
    let mut spec = spec.clone();
    clip_window(&mut spec, base.max_steps);
    let region = match (&spec.kind, &spec.location) {
        (PerturbationKind::Obstacle, Location::Region(rect)) => {
            let scaled = rect.scaled(spec.magnitude);
            if !scaled.is_empty() && scaled.contains(base.start) {
                return Err(CoreError::InvalidPerturbation(
                    "obstacle covers the start position".into(),
                ));
            }
            if scaled.is_empty() {
                None
            } else {
                Some(scaled)
            }
        }
        (PerturbationKind::Obstacle, _) => {
            return Err(CoreError::InvalidPerturbation(
                "point-mass obstacles need a region".into(),
            ));
        }
        _ => None,
    };
    Ok(PerturbedPointMass {
        base: base.clone(),
        spec,
        region,
    })
}

impl Environment for PerturbedPointMass {
    fn n_actions(&self) -> usize {
        self.base.n_actions()
    }

    fn n_state_ids(&self) -> usize {
        self.base.n_state_ids()
    }

    fn max_steps(&self) -> usize {
        self.base.max_steps()
    }

    fn reset(&self, rng: &mut Stream) -> EnvState {
        self.base.reset(rng)
    }

    fn step(&self, state: &EnvState, action: usize, _rng: &mut Stream) -> Result<Transition> {
        match self.spec.kind {
            PerturbationKind::Obstacle => {
                self.base
                    .step_with(state, action, [0.0, 0.0], self.region.as_ref())
            }
            PerturbationKind::Force => {
                // A fixed displacement opposing progress along x, added to
                // the executed action during the window.
                let bias = if self.spec.force_active(state.t) {
                    [-self.spec.magnitude, 0.0]
                } else {
                    [0.0, 0.0]
                };
                self.base.step_with(state, action, bias, None)
            }
            PerturbationKind::MotorFailure => {
                self.base.check_action(action)?;
                let effective = if self.spec.failure_active(state.t)
                    && self.spec.affected_actions.contains(&action)
                {
                    crate::pointmass::POINT_MASS_STAY_ACTION
                } else {
                    action
                };
                self.base.step_with(state, effective, [0.0, 0.0], None)
            }
        }
    }
}

/// Obstacle gridworld as a standalone grid (for exact lowering to a tabular
/// MDP). Only obstacle perturbations are stationary, so only they lower.
pub fn gridworld_with_obstacle(base: &GridWorld, spec: &PerturbationSpec) -> Result<GridWorld> {
    if spec.kind != PerturbationKind::Obstacle {
        return Err(CoreError::Unsupported(
            "only obstacle perturbations lower to a stationary MDP".into(),
        ));
    }
    let perturbed = apply_to_gridworld(base, spec)?;
    Ok(perturbed
        .as_stationary()
        .expect("obstacle perturbations are stationary")
        .clone())
}
