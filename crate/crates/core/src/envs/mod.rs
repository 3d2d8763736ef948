//! CarFlag domains, their symmetry groups, and explicit table exports.

pub mod carflag1d;
pub mod carflag2d;

pub use carflag1d::{CarFlag1d, CarFlag1dConfig, Obs1d};
pub use carflag2d::{CarFlag2d, CarFlag2dConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{Group, GroupError, Representation, Spatial};
use crate::pomdp::{GroupActionBinding, History, Pomdp, PomdpError, QTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("no valid placement: {0}")]
    Placement(String),
    #[error("action {action} is not one of the {n_actions} actions")]
    InvalidAction { action: usize, n_actions: usize },
    #[error("env {index}: {source}")]
    InEnv { index: usize, source: Box<EnvError> },
    #[error(transparent)]
    Pomdp(#[from] PomdpError),
    #[error(transparent)]
    Group(#[from] GroupError),
}

pub type Result<T> = std::result::Result<T, EnvError>;

/// One transition. `terminal` marks a reached flag or goal; `truncated`
/// marks the step limit, after which the value of `obs` should still be
/// bootstrapped.
#[derive(Clone, Debug, PartialEq)]
pub struct Step<O> {
    pub obs: O,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
    pub success: bool,
}

impl<O> Step<O> {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    Carflag1d(CarFlag1dConfig),
    Carflag2d(CarFlag2dConfig),
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Carflag1d(_) => "carflag1d",
            EnvConfig::Carflag2d(_) => "carflag2d",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Carflag1d(c) => c.validate(),
            EnvConfig::Carflag2d(c) => c.validate(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            EnvConfig::Carflag1d(_) => 2,
            EnvConfig::Carflag2d(_) => 4,
        }
    }

    pub fn max_steps(&self) -> usize {
        match self {
            EnvConfig::Carflag1d(c) => c.max_steps,
            EnvConfig::Carflag2d(c) => c.max_steps,
        }
    }

    pub fn offset(&self) -> i64 {
        match self {
            EnvConfig::Carflag1d(c) => c.offset,
            EnvConfig::Carflag2d(c) => c.offset,
        }
    }
}

/// How the domain's group acts on network inputs and outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSymmetry {
    pub group: Group,
    pub obs_rep: Representation,
    pub obs_spatial: Spatial,
    pub action_rep: Representation,
}

/// The symmetry group of a domain, as a binding on exported index sets and as
/// representations on observation features and action logits.
///
/// CarFlag-1D: reflection, observation `sign ⊕ sign` (position and goal side
/// negate), actions regular (Left ↔ Right). CarFlag-2D: C₄, two trivial
/// channels over the grid, actions regular.
pub fn env_group_binding(config: &EnvConfig) -> Result<(GroupActionBinding, EnvSymmetry)> {
    match config {
        EnvConfig::Carflag1d(c) => {
            let group = Group::reflection();
            let sign = Representation::sign(&group)?;
            Ok((
                carflag1d::binding(c)?,
                EnvSymmetry {
                    obs_rep: Representation::multiple(&sign, 2)?,
                    obs_spatial: Spatial::Scalar,
                    action_rep: Representation::regular(&group),
                    group,
                },
            ))
        }
        EnvConfig::Carflag2d(c) => {
            let group = Group::cyclic(4)?;
            Ok((
                carflag2d::binding(c)?,
                EnvSymmetry {
                    obs_rep: Representation::multiple(&Representation::trivial(&group), 2)?,
                    obs_spatial: Spatial::Grid {
                        height: c.size,
                        width: c.size,
                    },
                    action_rep: Representation::regular(&group),
                    group,
                },
            ))
        }
    }
}

/// Explicit POMDP tables for the domain together with its binding.
pub fn export_pomdp(config: &EnvConfig, discount: f64) -> Result<(Pomdp, GroupActionBinding)> {
    let (binding, _) = env_group_binding(config)?;
    let pomdp = match config {
        EnvConfig::Carflag1d(c) => carflag1d::export(c, discount)?,
        EnvConfig::Carflag2d(c) => carflag2d::export(c, discount)?,
    };
    Ok((pomdp, binding))
}

#[derive(Clone, Debug)]
pub enum Env {
    CarFlag1d(CarFlag1d),
    CarFlag2d(CarFlag2d),
}

impl Env {
    pub fn new(config: &EnvConfig) -> Result<Self> {
        Ok(match config {
            EnvConfig::Carflag1d(c) => Env::CarFlag1d(CarFlag1d::new(c.clone())?),
            EnvConfig::Carflag2d(c) => Env::CarFlag2d(CarFlag2d::new(c.clone())?),
        })
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Env::CarFlag1d(_) => 2,
            Env::CarFlag2d(_) => 4,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Env::CarFlag1d(_) => 2,
            Env::CarFlag2d(e) => 2 * e.config().cells(),
        }
    }

    /// Index of the current state in the exported tables.
    pub fn state_index(&self) -> usize {
        match self {
            Env::CarFlag1d(e) => e.state_index(),
            Env::CarFlag2d(e) => e.state_index(),
        }
    }

    /// Index of the current observation in the exported tables.
    pub fn obs_index(&self) -> usize {
        match self {
            Env::CarFlag1d(e) => {
                let o = e.observe();
                e.config().obs_index(o.pos, o.side)
            }
            Env::CarFlag2d(e) => e.obs_index(),
        }
    }

    /// Network input for the current observation: `(pos / H, side)` in 1D,
    /// the two-channel image in 2D.
    pub fn features(&self) -> Vec<f64> {
        match self {
            Env::CarFlag1d(e) => features_1d(e.config(), e.observe()),
            Env::CarFlag2d(e) => e.observe(),
        }
    }

    /// Hidden state as one line of text, for episode traces.
    pub fn describe(&self) -> String {
        match self {
            Env::CarFlag1d(e) => {
                let goal = if e.goal_side() < 0 { "left" } else { "right" };
                format!("pos={} goal={goal} t={}", e.position(), e.steps())
            }
            Env::CarFlag2d(e) => {
                let n = e.config().size;
                let (a, g) = (e.agent(), e.goal());
                format!("agent=({},{}) goal=({},{}) t={}", a / n, a % n, g / n, g % n, e.steps())
            }
        }
    }

    pub fn action_name(&self, action: usize) -> &'static str {
        const NAMES_1D: [&str; 2] = ["left", "right"];
        const NAMES_2D: [&str; 4] = ["right", "up", "left", "down"];
        let names: &[&str] = match self {
            Env::CarFlag1d(_) => &NAMES_1D,
            Env::CarFlag2d(_) => &NAMES_2D,
        };
        names.get(action).copied().unwrap_or("?")
    }

    pub fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Env::CarFlag1d(e) => {
                e.reset(rng);
            }
            Env::CarFlag2d(e) => {
                e.reset(rng);
            }
        }
        self.features()
    }

    pub fn step(&mut self, action: usize) -> Result<Step<Vec<f64>>> {
        match self {
            Env::CarFlag1d(e) => {
                let s = e.step(action)?;
                Ok(Step {
                    obs: features_1d(e.config(), s.obs),
                    reward: s.reward,
                    terminal: s.terminal,
                    truncated: s.truncated,
                    success: s.success,
                })
            }
            Env::CarFlag2d(e) => e.step(action),
        }
    }
}

fn features_1d(config: &CarFlag1dConfig, o: Obs1d) -> Vec<f64> {
    vec![o.pos as f64 / config.half_size as f64, o.side as f64]
}

/// Per-env RNG: the global seed selects the key, the env index the stream.
pub fn env_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Outcome of stepping one env of a [`VecEnv`]; `next_obs` is what the
/// policy sees next (a fresh reset observation after `done`).
#[derive(Clone, Debug, PartialEq)]
pub struct VecStep {
    pub step: Step<Vec<f64>>,
    pub next_obs: Vec<f64>,
}

/// Independent env copies, each with its own RNG stream, reset on `done`.
#[derive(Clone, Debug)]
pub struct VecEnv {
    envs: Vec<Env>,
    rngs: Vec<ChaCha8Rng>,
}

impl VecEnv {
    pub fn new(config: &EnvConfig, n: usize, seed: u64) -> Result<Self> {
        let envs = (0..n).map(|_| Env::new(config)).collect::<Result<Vec<_>>>()?;
        let rngs = (0..n).map(|i| env_rng(seed, i)).collect();
        Ok(Self { envs, rngs })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[Env] {
        &self.envs
    }

    pub fn reset_all(&mut self) -> Vec<Vec<f64>> {
        self.envs
            .iter_mut()
            .zip(&mut self.rngs)
            .map(|(e, r)| e.reset(r))
            .collect()
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<Vec<VecStep>> {
        let mut out = Vec::with_capacity(self.envs.len());
        for (index, ((env, rng), &a)) in self.envs.iter_mut().zip(&mut self.rngs).zip(actions).enumerate() {
            let step = env.step(a).map_err(|e| EnvError::InEnv {
                index,
                source: Box::new(e),
            })?;
            let next_obs = if step.done() { env.reset(rng) } else { step.obs.clone() };
            out.push(VecStep { step, next_obs });
        }
        Ok(out)
    }
}

/// Outcome of playing a table policy in the simulator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TablePolicyEval {
    pub episodes: usize,
    pub successes: usize,
    pub mean_return: f64,
    /// Episodes that reached a history deeper than the table and were
    /// counted as failures there.
    pub left_table: usize,
}

impl TablePolicyEval {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.episodes.max(1) as f64
    }
}

/// Plays the greedy policy of an exact Q table (lowest-index argmax) in the
/// simulator; episode `i` resets from [`env_rng`]`(seed, i)`. The table's
/// histories index observations and actions exactly as the export does.
pub fn evaluate_table_policy(config: &EnvConfig, table: &QTable, episodes: usize, seed: u64) -> Result<TablePolicyEval> {
    let mut env = Env::new(config)?;
    let mut out = TablePolicyEval {
        episodes,
        successes: 0,
        mean_return: 0.0,
        left_table: 0,
    };
    for i in 0..episodes {
        env.reset(&mut env_rng(seed, i));
        let mut h = History::initial(env.obs_index());
        loop {
            let Some(a) = table.greedy_action(&h) else {
                out.left_table += 1;
                break;
            };
            let step = env.step(a)?;
            out.mean_return += step.reward;
            if step.done() {
                out.successes += step.success as usize;
                break;
            }
            h.push(a, env.obs_index());
        }
    }
    out.mean_return /= episodes.max(1) as f64;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{Element, FeatureField};

    #[test]
    fn exact_greedy_policy_solves_small_grid() {
        let cfg = EnvConfig::Carflag2d(CarFlag2dConfig {
            size: 3,
            ..Default::default()
        });
        let (pomdp, _) = export_pomdp(&cfg, 0.99).unwrap();
        let q = crate::pomdp::exact_q(&pomdp, 6, crate::pomdp::DEFAULT_NODE_BUDGET).unwrap();
        let eval = evaluate_table_policy(&cfg, &q, 200, 3).unwrap();
        assert_eq!(eval.successes, 200, "{eval:?}");
        assert_eq!(eval.left_table, 0);
    }

    #[test]
    fn describe_names_hidden_state() {
        let mut env = Env::new(&EnvConfig::Carflag2d(CarFlag2dConfig::default())).unwrap();
        if let Env::CarFlag2d(e) = &mut env {
            e.set_state(0, 8).unwrap();
        }
        assert_eq!(env.describe(), "agent=(0,0) goal=(1,1) t=0");
        assert_eq!(env.action_name(1), "up");
        assert_eq!(env.action_name(9), "?");
    }

    #[test]
    fn flip_negates_position_and_side() {
        let cfg = EnvConfig::Carflag1d(CarFlag1dConfig::default());
        let (b, sym) = env_group_binding(&cfg).unwrap();
        let x = FeatureField::scalar(sym.obs_rep.clone(), vec![7.0, 1.0]).unwrap();
        assert_eq!(x.act(Element(1)).unwrap().values(), &[-7.0, -1.0]);
        let c = CarFlag1dConfig::default();
        assert_eq!(b.obs(Element(1), c.obs_index(7, 1)), c.obs_index(-7, -1));
        assert_eq!(b.action(Element(1), carflag1d::LEFT), carflag1d::RIGHT);
        assert_eq!(b.obs(Element(0), c.obs_index(7, 1)), c.obs_index(7, 1));
    }

    #[test]
    fn env_config_reads_tagged_tables() {
        let cfg: EnvConfig = toml::from_str("kind = \"carflag2d\"\nsize = 5\noffset = 1").unwrap();
        assert_eq!(
            cfg,
            EnvConfig::Carflag2d(CarFlag2dConfig {
                size: 5,
                offset: 1,
                ..Default::default()
            })
        );
        assert!(toml::from_str::<EnvConfig>("kind = \"carflag1d\"\nsize = 5").is_err());
    }

    #[test]
    fn vec_env_is_seeded_per_index() {
        let cfg = EnvConfig::Carflag2d(CarFlag2dConfig::default());
        let mut a = VecEnv::new(&cfg, 4, 9).unwrap();
        let mut b = VecEnv::new(&cfg, 4, 9).unwrap();
        let (oa, ob) = (a.reset_all(), b.reset_all());
        assert_eq!(oa, ob);
        // different streams give different starts somewhere
        assert!(oa.windows(2).any(|w| w[0] != w[1]));
        for t in 0..120 {
            let acts: Vec<usize> = (0..4).map(|i| (t + i) % 4).collect();
            assert_eq!(a.step(&acts).unwrap(), b.step(&acts).unwrap());
        }
        let err = a.step(&[0, 9, 0, 0]).unwrap_err();
        assert!(matches!(err, EnvError::InEnv { index: 1, .. }));
    }
}
