//! 2D point-mass navigation in a square arena.
//!
//! The agent starts in the bottom-left corner and moves toward a goal in the
//! upper-right corner. Actions are the nine per-axis displacement combos
//! `{-1, 0, +1}^2` scaled by `action_scale`, positions are clipped to the
//! arena after every step, and the per-step reward is the negative Euclidean
//! distance to the goal at the post-step position. Episodes are fixed-length.
//!
//! States are discretized for tabular learners by a uniform tiling of the
//! arena; `EnvState::id` is the tile index.

use serde::{Deserialize, Serialize};

use crate::env::{EnvState, Environment, Transition};
use crate::error::CoreError;
use crate::rng::Stream;
use crate::Result;

/// Axis-aligned rectangle used for blocking regions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    pub fn is_empty(&self) -> bool {
        self.x_min >= self.x_max || self.y_min >= self.y_max
    }

    /// Rectangle scaled about its center by `factor` per axis.
    pub fn scaled(&self, factor: f64) -> Rect {
        let cx = 0.5 * (self.x_min + self.x_max);
        let cy = 0.5 * (self.y_min + self.y_max);
        let hx = 0.5 * (self.x_max - self.x_min) * factor;
        let hy = 0.5 * (self.y_max - self.y_min) * factor;
        Rect {
            x_min: cx - hx,
            x_max: cx + hx,
            y_min: cy - hy,
            y_max: cy + hy,
        }
    }

    /// First entry parameter `t` in `(0, 1]` where the segment `from + t*(to-from)`
    /// hits the rectangle, by the slab method. `None` when the segment misses.
    pub fn segment_entry(&self, from: [f64; 2], to: [f64; 2]) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let d = [to[0] - from[0], to[1] - from[1]];
        let mut t_min = 0.0f64;
        let mut t_max = 1.0f64;
        for axis in 0..2 {
            let (lo, hi) = if axis == 0 {
                (self.x_min, self.x_max)
            } else {
                (self.y_min, self.y_max)
            };
            if d[axis].abs() < 1e-15 {
                if from[axis] < lo || from[axis] > hi {
                    return None;
                }
            } else {
                let mut t0 = (lo - from[axis]) / d[axis];
                let mut t1 = (hi - from[axis]) / d[axis];
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                t_min = t_min.max(t0);
                t_max = t_max.min(t1);
                if t_min > t_max {
                    return None;
                }
            }
        }
        if t_max <= 0.0 || t_min > 1.0 {
            return None;
        }
        Some(t_min.max(0.0))
    }
}

/// Per-axis action offsets in fixed order; index 4 is "stay".
pub fn point_mass_action_offsets() -> [(f64, f64); 9] {
    let mut out = [(0.0, 0.0); 9];
    let dirs = [-1.0, 0.0, 1.0];
    for (iy, &dy) in dirs.iter().enumerate() {
        for (ix, &dx) in dirs.iter().enumerate() {
            out[iy * 3 + ix] = (dx, dy);
        }
    }
    out
}

pub const POINT_MASS_STAY_ACTION: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMassEnv {
    pub arena_side: f64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub max_steps: usize,
    /// Maximum per-step displacement per axis.
    pub action_scale: f64,
    /// Tiles per side for state discretization.
    pub tiles_per_side: usize,
}

impl Default for PointMassEnv {
    fn default() -> Self {
        PointMassEnv {
            arena_side: 4.0,
            start: [0.0, 0.0],
            goal: [3.5, 3.5],
            goal_radius: 0.5,
            max_steps: 50,
            action_scale: 0.25,
            tiles_per_side: 16,
        }
    }
}

impl PointMassEnv {
    pub fn validate(&self) -> Result<()> {
        if self.arena_side <= 0.0 || self.action_scale <= 0.0 || self.tiles_per_side == 0 {
            return Err(CoreError::InvalidArgument(
                "point-mass parameters must be positive".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(CoreError::InvalidArgument("zero max_steps".into()));
        }
        Ok(())
    }

    pub fn clip(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0].clamp(0.0, self.arena_side),
            p[1].clamp(0.0, self.arena_side),
        ]
    }

    pub fn distance_to_goal(&self, p: [f64; 2]) -> f64 {
        ((p[0] - self.goal[0]).powi(2) + (p[1] - self.goal[1]).powi(2)).sqrt()
    }

    /// Tile index of a position.
    pub fn tile_id(&self, p: [f64; 2]) -> usize {
        let n = self.tiles_per_side;
        let w = self.arena_side / n as f64;
        let ix = ((p[0] / w) as usize).min(n - 1);
        let iy = ((p[1] / w) as usize).min(n - 1);
        iy * n + ix
    }

    /// Displacement of `action`, before any perturbation.
    pub fn action_displacement(&self, action: usize) -> [f64; 2] {
        let (dx, dy) = point_mass_action_offsets()[action];
        [dx * self.action_scale, dy * self.action_scale]
    }

    /// Apply a displacement from `pos`, clipping to the arena and truncating
    /// at the boundary of `obstacle` when the move would cross it.
    pub fn resolve_move(
        &self,
        pos: [f64; 2],
        displacement: [f64; 2],
        obstacle: Option<&Rect>,
    ) -> [f64; 2] {
        let target = self.clip([pos[0] + displacement[0], pos[1] + displacement[1]]);
        if let Some(rect) = obstacle {
            if let Some(t) = rect.segment_entry(pos, target) {
                // Stop just short of the blocking boundary.
                let back = (t - 1e-9).max(0.0);
                return [
                    pos[0] + back * (target[0] - pos[0]),
                    pos[1] + back * (target[1] - pos[1]),
                ];
            }
        }
        target
    }

    pub fn state_at(&self, pos: [f64; 2], t: usize) -> EnvState {
        EnvState::planar(self.tile_id(pos), pos, t)
    }

    /// Full step with optional force bias and obstacle; shared with the
    /// perturbation wrapper.
    pub fn step_with(
        &self,
        state: &EnvState,
        action: usize,
        bias: [f64; 2],
        obstacle: Option<&Rect>,
    ) -> Result<Transition> {
        self.check_action(action)?;
        let pos = state.pos.ok_or_else(|| {
            CoreError::InvalidArgument("point-mass state without a position".into())
        })?;
        let d = self.action_displacement(action);
        let next = self.resolve_move(pos, [d[0] + bias[0], d[1] + bias[1]], obstacle);
        let reward = -self.distance_to_goal(next);
        Ok(Transition {
            next: self.state_at(next, state.t + 1),
            reward,
        })
    }

    /// Whether a position counts as having reached the goal.
    pub fn at_goal(&self, p: [f64; 2]) -> bool {
        self.distance_to_goal(p) <= self.goal_radius
    }
}

impl Environment for PointMassEnv {
    fn n_actions(&self) -> usize {
        9
    }

    fn n_state_ids(&self) -> usize {
        self.tiles_per_side * self.tiles_per_side
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&self, _rng: &mut Stream) -> EnvState {
        self.state_at(self.start, 0)
    }

    fn step(&self, state: &EnvState, action: usize, _rng: &mut Stream) -> Result<Transition> {
        self.step_with(state, action, [0.0, 0.0], None)
    }
}
