use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, Result, Step};
use crate::pomdp::{GroupActionBinding, Pomdp, PomdpTables};
use crate::group::Group;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// A car on the integer line `[-H, H]` with flags at both ends. The goal
/// side is revealed only while the car sits on the information cell `offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarFlag1dConfig {
    pub half_size: i64,
    pub offset: i64,
    pub max_steps: usize,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub red_reward: f64,
}

impl Default for CarFlag1dConfig {
    fn default() -> Self {
        Self {
            half_size: 25,
            offset: 0,
            max_steps: 50,
            step_reward: -0.01,
            goal_reward: 1.0,
            red_reward: -1.0,
        }
    }
}

impl CarFlag1dConfig {
    pub fn validate(&self) -> Result<()> {
        if self.half_size < 2 {
            return Err(EnvError::Config(format!("half_size must be at least 2, got {}", self.half_size)));
        }
        if self.offset.abs() >= self.half_size {
            return Err(EnvError::Config(format!(
                "offset {} must lie strictly inside (-{h}, {h})",
                self.offset,
                h = self.half_size
            )));
        }
        Ok(())
    }

    /// `(position, side)` pairs, side 0 away from the information cell.
    pub fn n_observations(&self) -> usize {
        (2 * self.half_size as usize + 1) * 3
    }

    pub fn obs_index(&self, pos: i64, side: i64) -> usize {
        ((pos + self.half_size) * 3 + side + 1) as usize
    }

    pub fn n_states(&self) -> usize {
        (2 * self.half_size as usize + 1) * 2
    }

    pub fn state_index(&self, pos: i64, goal_side: i64) -> usize {
        ((pos + self.half_size) * 2 + (goal_side > 0) as i64) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Obs1d {
    pub pos: i64,
    /// Goal side (±1) at the information cell, 0 elsewhere.
    pub side: i64,
}

#[derive(Clone, Debug)]
pub struct CarFlag1d {
    config: CarFlag1dConfig,
    pos: i64,
    goal_side: i64,
    steps: usize,
}

impl CarFlag1d {
    pub fn new(config: CarFlag1dConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            pos: 0,
            goal_side: 1,
            steps: 0,
        })
    }

    pub fn config(&self) -> &CarFlag1dConfig {
        &self.config
    }

    pub fn position(&self) -> i64 {
        self.pos
    }

    pub fn goal_side(&self) -> i64 {
        self.goal_side
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn state_index(&self) -> usize {
        self.config.state_index(self.pos, self.goal_side)
    }

    pub fn observe(&self) -> Obs1d {
        Obs1d {
            pos: self.pos,
            side: if self.pos == self.config.offset { self.goal_side } else { 0 },
        }
    }

    pub fn reset(&mut self, rng: &mut impl Rng) -> Obs1d {
        let h = self.config.half_size;
        self.goal_side = if rng.random_bool(0.5) { 1 } else { -1 };
        // uniform over the 2h - 2 interior cells other than the information cell
        let k = rng.random_range(0..2 * h - 2);
        let mut pos = -h + 1 + k;
        if pos >= self.config.offset {
            pos += 1;
        }
        self.pos = pos;
        self.steps = 0;
        self.observe()
    }

    /// Places the car directly; for tests and scripted episodes.
    pub fn set_state(&mut self, pos: i64, goal_side: i64) -> Result<()> {
        let h = self.config.half_size;
        if pos.abs() >= h || goal_side.abs() != 1 {
            return Err(EnvError::Placement(format!("car at {pos} with goal side {goal_side}")));
        }
        self.pos = pos;
        self.goal_side = goal_side;
        self.steps = 0;
        Ok(())
    }

    pub fn step(&mut self, action: usize) -> Result<Step<Obs1d>> {
        let delta = match action {
            LEFT => -1,
            RIGHT => 1,
            _ => return Err(EnvError::InvalidAction { action, n_actions: 2 }),
        };
        let h = self.config.half_size;
        self.pos = (self.pos + delta).clamp(-h, h);
        self.steps += 1;
        let (reward, terminal, success) = if self.pos == self.goal_side * h {
            (self.config.goal_reward, true, true)
        } else if self.pos == -self.goal_side * h {
            (self.config.red_reward, true, false)
        } else {
            (self.config.step_reward, false, false)
        };
        Ok(Step {
            obs: self.observe(),
            reward,
            terminal,
            truncated: !terminal && self.steps > self.config.max_steps,
            success,
        })
    }
}

/// Flip acting by `pos ↦ -pos`, `side ↦ -side` and `Left ↔ Right` on the
/// exported index sets.
pub fn binding(config: &CarFlag1dConfig) -> Result<GroupActionBinding> {
    config.validate()?;
    let h = config.half_size;
    let mut states = vec![0; config.n_states()];
    let mut obs = vec![0; config.n_observations()];
    for pos in -h..=h {
        for side in [-1, 1] {
            states[config.state_index(pos, side)] = config.state_index(-pos, -side);
        }
        for side in -1..=1 {
            obs[config.obs_index(pos, side)] = config.obs_index(-pos, -side);
        }
    }
    Ok(GroupActionBinding::from_generator(Group::reflection(), states, vec![RIGHT, LEFT], obs)?)
}

/// Explicit tables mirroring `reset`/`step`; the flag cells are absorbing
/// with zero reward.
pub fn export(config: &CarFlag1dConfig, discount: f64) -> Result<Pomdp> {
    config.validate()?;
    let h = config.half_size;
    let mut t = PomdpTables::zeros(config.n_states(), 2, config.n_observations(), discount);
    let starts = (2 * h - 2) as f64 * 2.0;
    let obs_of = |pos: i64, side: i64| config.obs_index(pos, if pos == config.offset { side } else { 0 });
    for pos in -h..=h {
        for side in [-1, 1] {
            let s = config.state_index(pos, side);
            if pos.abs() < h && pos != config.offset {
                t.b0[s] = 1.0 / starts;
            }
            let o0 = t.o0_index(s, obs_of(pos, side));
            t.o0[o0] = 1.0;
            for a in [LEFT, RIGHT] {
                let oi = t.o_index(a, s, obs_of(pos, side));
                t.o[oi] = 1.0;
                if pos.abs() == h {
                    let ti = t.t_index(s, a, s);
                    t.t[ti] = 1.0;
                    continue;
                }
                let next = pos + if a == LEFT { -1 } else { 1 };
                let ti = t.t_index(s, a, config.state_index(next, side));
                t.t[ti] = 1.0;
                let ri = t.r_index(s, a);
                t.r[ri] = if next == side * h {
                    config.goal_reward
                } else if next == -side * h {
                    config.red_reward
                } else {
                    config.step_reward
                };
            }
        }
    }
    Ok(Pomdp::new(t)?)
}
