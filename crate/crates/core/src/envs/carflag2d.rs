use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, Result, Step};
use crate::group::{grid_permutation, Element, Group};
use crate::pomdp::{GroupActionBinding, Pomdp, PomdpTables};

pub const RIGHT: usize = 0;
pub const UP: usize = 1;
pub const LEFT: usize = 2;
pub const DOWN: usize = 3;

/// Largest grid whose explicit tables (`N⁴` states) are exported.
pub const MAX_EXPORT_SIZE: usize = 7;

/// An agent on an `N × N` grid looking for a goal cell that is only shown
/// while the agent is inside a square information region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarFlag2dConfig {
    pub size: usize,
    /// Column shift of the information region from the grid centre.
    pub offset: i64,
    /// Half-width of the information region; `None` means 0 for `N = 3`
    /// and 1 otherwise.
    pub info_radius: Option<usize>,
    pub max_steps: usize,
    pub goal_reward: f64,
}

impl Default for CarFlag2dConfig {
    fn default() -> Self {
        Self {
            size: 7,
            offset: 0,
            info_radius: None,
            max_steps: 50,
            goal_reward: 1.0,
        }
    }
}

impl CarFlag2dConfig {
    pub fn radius(&self) -> usize {
        self.info_radius.unwrap_or(if self.size <= 3 { 0 } else { 1 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 3 || self.size % 2 == 0 {
            return Err(EnvError::Config(format!("grid size must be odd and at least 3, got {}", self.size)));
        }
        let (n, r) = (self.size as i64, self.radius() as i64);
        let c = n / 2 + self.offset;
        if c - r < 0 || c + r >= n {
            return Err(EnvError::Config(format!(
                "information region (radius {r}, offset {}) leaves the {n}x{n} grid",
                self.offset
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.size * self.size
    }

    pub fn in_info_region(&self, cell: usize) -> bool {
        let (n, r) = (self.size as i64, self.radius() as i64);
        let (row, col) = ((cell / self.size) as i64, (cell % self.size) as i64);
        (row - n / 2).abs() <= r && (col - n / 2 - self.offset).abs() <= r
    }

    /// Agent cell times (goal cell, or "hidden" as index `N²`).
    pub fn n_observations(&self) -> usize {
        self.cells() * (self.cells() + 1)
    }

    pub fn obs_index(&self, agent: usize, goal: usize) -> usize {
        let shown = if self.in_info_region(agent) { goal } else { self.cells() };
        agent * (self.cells() + 1) + shown
    }

    pub fn n_states(&self) -> usize {
        self.cells() * self.cells()
    }

    pub fn state_index(&self, agent: usize, goal: usize) -> usize {
        agent * self.cells() + goal
    }

    /// Valid `(agent, goal)` starts: both outside the information region,
    /// Manhattan distance at least two.
    pub fn start_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.size;
        let dist = |a: usize, b: usize| (a / n).abs_diff(b / n) + (a % n).abs_diff(b % n);
        let free: Vec<usize> = (0..self.cells()).filter(|&c| !self.in_info_region(c)).collect();
        let mut pairs = Vec::new();
        for &a in &free {
            for &g in &free {
                if dist(a, g) >= 2 {
                    pairs.push((a, g));
                }
            }
        }
        pairs
    }

    pub fn move_cell(&self, cell: usize, action: usize) -> usize {
        let n = self.size;
        let (r, c) = (cell / n, cell % n);
        let (r, c) = match action {
            RIGHT => (r, (c + 1).min(n - 1)),
            UP => (r.saturating_sub(1), c),
            LEFT => (r, c.saturating_sub(1)),
            _ => ((r + 1).min(n - 1), c),
        };
        r * n + c
    }
}

#[derive(Clone, Debug)]
pub struct CarFlag2d {
    config: CarFlag2dConfig,
    starts: Vec<(usize, usize)>,
    agent: usize,
    goal: usize,
    steps: usize,
}

impl CarFlag2d {
    pub fn new(config: CarFlag2dConfig) -> Result<Self> {
        config.validate()?;
        let starts = config.start_pairs();
        if starts.is_empty() {
            return Err(EnvError::Placement(format!(
                "no agent/goal placement satisfies the start rules on a {n}x{n} grid",
                n = config.size
            )));
        }
        let (agent, goal) = starts[0];
        Ok(Self {
            config,
            starts,
            agent,
            goal,
            steps: 0,
        })
    }

    pub fn config(&self) -> &CarFlag2dConfig {
        &self.config
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn state_index(&self) -> usize {
        self.config.state_index(self.agent, self.goal)
    }

    pub fn obs_index(&self) -> usize {
        self.config.obs_index(self.agent, self.goal)
    }

    /// `2 × N × N` image, channel-major: agent one-hot, then the goal one-hot
    /// when the agent is inside the information region.
    pub fn observe(&self) -> Vec<f64> {
        let cells = self.config.cells();
        let mut img = vec![0.0; 2 * cells];
        img[self.agent] = 1.0;
        if self.config.in_info_region(self.agent) {
            img[cells + self.goal] = 1.0;
        }
        img
    }

    pub fn reset(&mut self, rng: &mut impl Rng) -> Vec<f64> {
        let (agent, goal) = self.starts[rng.random_range(0..self.starts.len())];
        self.agent = agent;
        self.goal = goal;
        self.steps = 0;
        self.observe()
    }

    pub fn set_state(&mut self, agent: usize, goal: usize) -> Result<()> {
        let cells = self.config.cells();
        if agent >= cells || goal >= cells {
            return Err(EnvError::Placement(format!("cells {agent}, {goal} outside the grid")));
        }
        self.agent = agent;
        self.goal = goal;
        self.steps = 0;
        Ok(())
    }

    pub fn step(&mut self, action: usize) -> Result<Step<Vec<f64>>> {
        if action > DOWN {
            return Err(EnvError::InvalidAction { action, n_actions: 4 });
        }
        self.agent = self.config.move_cell(self.agent, action);
        self.steps += 1;
        let terminal = self.agent == self.goal;
        Ok(Step {
            obs: self.observe(),
            reward: if terminal { self.config.goal_reward } else { 0.0 },
            terminal,
            truncated: !terminal && self.steps > self.config.max_steps,
            success: terminal,
        })
    }
}

/// C₄ acting by quarter turns of both cells and the action cycle
/// Right → Up → Left → Down.
pub fn binding(config: &CarFlag2dConfig) -> Result<GroupActionBinding> {
    config.validate()?;
    let n = config.size;
    let group = Group::cyclic(4)?;
    let rot = grid_permutation(&group, Element(1), n, n)?;
    let cells = config.cells();
    let states = (0..config.n_states())
        .map(|s| config.state_index(rot[s / cells], rot[s % cells]))
        .collect();
    let obs = (0..config.n_observations())
        .map(|o| {
            let (agent, shown) = (o / (cells + 1), o % (cells + 1));
            let shown = if shown == cells { cells } else { rot[shown] };
            rot[agent] * (cells + 1) + shown
        })
        .collect();
    Ok(GroupActionBinding::from_generator(group, states, vec![UP, LEFT, DOWN, RIGHT], obs)?)
}

/// Explicit tables mirroring `reset`/`step`; states with the agent on the
/// goal are absorbing with zero reward.
pub fn export(config: &CarFlag2dConfig, discount: f64) -> Result<Pomdp> {
    config.validate()?;
    if config.size > MAX_EXPORT_SIZE {
        return Err(EnvError::Config(format!(
            "exporting a {n}x{n} grid needs {} states; the limit is grid size {MAX_EXPORT_SIZE}",
            config.n_states(),
            n = config.size
        )));
    }
    let cells = config.cells();
    let mut t = PomdpTables::zeros(config.n_states(), 4, config.n_observations(), discount);
    let starts = config.start_pairs();
    if starts.is_empty() {
        return Err(EnvError::Placement("no valid start".into()));
    }
    for &(a, g) in &starts {
        t.b0[config.state_index(a, g)] = 1.0 / starts.len() as f64;
    }
    for agent in 0..cells {
        for goal in 0..cells {
            let s = config.state_index(agent, goal);
            let o = config.obs_index(agent, goal);
            let i = t.o0_index(s, o);
            t.o0[i] = 1.0;
            for a in 0..4 {
                let i = t.o_index(a, s, o);
                t.o[i] = 1.0;
                if agent == goal {
                    let i = t.t_index(s, a, s);
                    t.t[i] = 1.0;
                    continue;
                }
                let next = config.move_cell(agent, a);
                let i = t.t_index(s, a, config.state_index(next, goal));
                t.t[i] = 1.0;
                if next == goal {
                    let i = t.r_index(s, a);
                    t.r[i] = config.goal_reward;
                }
            }
        }
    }
    Ok(Pomdp::new(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{FeatureField, Representation, Spatial};
    use crate::pomdp::check_invariance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(offset: i64) -> CarFlag2dConfig {
        CarFlag2dConfig {
            size: 3,
            offset,
            ..Default::default()
        }
    }

    #[test]
    fn three_by_three_starts_hide_the_goal() {
        let mut env = CarFlag2d::new(small(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let obs = env.reset(&mut rng);
            assert!(obs[9..].iter().all(|&x| x == 0.0));
            assert_ne!(env.agent(), 4);
            assert_ne!(env.goal(), 4);
        }
    }

    #[test]
    fn border_moves_are_blocked() {
        let mut env = CarFlag2d::new(small(0)).unwrap();
        env.set_state(0, 8).unwrap();
        assert_eq!(env.step(UP).unwrap().reward, 0.0);
        assert_eq!(env.agent(), 0);
        env.step(LEFT).unwrap();
        assert_eq!(env.agent(), 0);
        env.step(RIGHT).unwrap();
        assert_eq!(env.agent(), 1);
        assert!(env.step(4).is_err());
    }

    #[test]
    fn info_region_reveals_goal() {
        let mut env = CarFlag2d::new(small(0)).unwrap();
        env.set_state(1, 6).unwrap();
        let s = env.step(DOWN).unwrap();
        assert_eq!(s.obs[4], 1.0);
        assert_eq!(s.obs[9 + 6], 1.0);
        let s = env.step(LEFT).unwrap();
        assert!(s.obs[9..].iter().all(|&x| x == 0.0));
        let s = env.step(DOWN).unwrap();
        assert!(s.terminal && s.success && s.reward == 1.0);
    }

    #[test]
    fn truncation_after_fifty_steps() {
        let mut env = CarFlag2d::new(small(0)).unwrap();
        env.set_state(0, 8).unwrap();
        for k in 1..=51 {
            let s = env.step(UP).unwrap();
            assert_eq!(s.truncated, k == 51);
        }
    }

    #[test]
    fn quarter_turn_maps_right_to_up() {
        let b = binding(&small(0)).unwrap();
        assert_eq!(b.action(Element(1), RIGHT), UP);
        assert_eq!(b.action(Element(0), RIGHT), RIGHT);
    }

    #[test]
    fn simulator_commutes_with_rotation() {
        for size in [3, 5, 7] {
            let cfg = CarFlag2dConfig { size, ..Default::default() };
            let group = Group::cyclic(4).unwrap();
            let obs_rep = Representation::multiple(&Representation::trivial(&group), 2).unwrap();
            let spatial = Spatial::Grid { height: size, width: size };
            let rot = grid_permutation(&group, Element(1), size, size).unwrap();
            let cells = cfg.cells();
            for agent in 0..cells {
                for goal in (0..cells).filter(|&g| g != agent) {
                    for a in 0..4 {
                        let mut e = CarFlag2d::new(cfg.clone()).unwrap();
                        e.set_state(agent, goal).unwrap();
                        let s = e.step(a).unwrap();
                        let mut m = CarFlag2d::new(cfg.clone()).unwrap();
                        m.set_state(rot[agent], rot[goal]).unwrap();
                        let gs = m.step((a + 1) % 4).unwrap();
                        let expected = FeatureField::new(obs_rep.clone(), spatial, s.obs.clone()).unwrap().act(Element(1)).unwrap();
                        assert_eq!(gs.obs, expected.into_values());
                        assert_eq!((gs.reward, gs.terminal), (s.reward, s.terminal));
                    }
                }
            }
        }
    }

    #[test]
    fn offset_breaks_symmetry_only_where_membership_changes() {
        let cfg = small(1);
        let group = Group::cyclic(4).unwrap();
        let rot = grid_permutation(&group, Element(1), 3, 3).unwrap();
        for agent in 0..9 {
            for goal in (0..9).filter(|&g| g != agent) {
                for a in 0..4 {
                    let mut e = CarFlag2d::new(cfg.clone()).unwrap();
                    e.set_state(agent, goal).unwrap();
                    let s = e.step(a).unwrap();
                    let mut m = CarFlag2d::new(cfg.clone()).unwrap();
                    m.set_state(rot[agent], rot[goal]).unwrap();
                    let gs = m.step((a + 1) % 4).unwrap();
                    let next = e.agent();
                    let changes = cfg.in_info_region(next) != cfg.in_info_region(rot[next]);
                    let agrees = gs.obs[9..].iter().any(|&x| x > 0.0) == s.obs[9..].iter().any(|&x| x > 0.0);
                    assert_eq!(agrees, !changes);
                }
            }
        }
    }

    #[test]
    fn export_is_deterministic_and_invariant() {
        let p = export(&small(0), 0.99).unwrap();
        for s in 0..p.n_states() {
            for a in 0..4 {
                assert_eq!(p.successors(s, a).len(), 1);
                assert_eq!(p.successors(s, a)[0].1, 1.0);
            }
        }
        assert!(check_invariance(&p, &binding(&small(0)).unwrap()).unwrap().passed());
        let asym = check_invariance(&export(&small(1), 0.99).unwrap(), &binding(&small(1)).unwrap()).unwrap();
        assert!(!asym.passed());
    }

    #[test]
    fn region_must_fit() {
        assert!(CarFlag2dConfig { size: 3, offset: 2, ..Default::default() }.validate().is_err());
        assert!(CarFlag2dConfig { size: 4, ..Default::default() }.validate().is_err());
        assert!(export(&CarFlag2dConfig { size: 9, ..Default::default() }, 0.99).is_err());
    }
}
