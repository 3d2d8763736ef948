//! Recurrent advantage actor-critic over vectors of CarFlag environments.
//!
//! One training iteration collects `n_steps` transitions from each of
//! `n_envs` environments, computes n-step targets, and takes one optimizer
//! step on the loss unrolled through the LSTM across the whole segment. LSTM
//! states are carried between segments as constants.

mod equivariance;
mod network;
mod rollout;
mod train;
mod update;

pub use equivariance::{equivariance_suite, EQUIVARIANCE_TOL, sequence_equivariance, EquivarianceReport, SequenceResidual};
pub use network::{NetworkConfig, PolicyNetwork, PolicyState, PolicyStep, RealizedPolicy};
pub use rollout::{collect_rollouts, compute_returns, Collector, Returns, RolloutBatch};
pub use train::{
    evaluate, run_episode, steps_to_threshold, train, CurveRow, EpisodeTrace, EvalMode, EvalResult, TrainOutput,
    CURVE_HEADER,
};
pub use update::{
    a2c_gradient_check, a2c_gradients, a2c_loss_value, a2c_update, loss_gradient_error, LossCoefficients, LossStats,
    GRADCHECK_TOL,
};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::envs::EnvError;
use crate::equi_nn::{InitMode, NnError};
use crate::group::GroupError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("non-finite loss at update {update}: policy {policy_loss}, value {value_loss}, entropy {entropy}")]
    NonFiniteLoss {
        update: usize,
        policy_loss: f64,
        value_loss: f64,
        entropy: f64,
    },
}

pub type Result<T> = std::result::Result<T, AgentError>;

/// Which parts of the network are constrained to be equivariant. The
/// actor-only and critic-only ablations give the actor and the critic
/// separate encoders and LSTMs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Equi,
    Plain,
    EquiActorOnly,
    EquiCriticOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Equi,
        Variant::Plain,
        Variant::EquiActorOnly,
        Variant::EquiCriticOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Equi => "equi",
            Variant::Plain => "plain",
            Variant::EquiActorOnly => "equi-actor-only",
            Variant::EquiCriticOnly => "equi-critic-only",
        }
    }

    pub fn actor_equivariant(self) -> bool {
        matches!(self, Variant::Equi | Variant::EquiActorOnly)
    }

    pub fn critic_equivariant(self) -> bool {
        matches!(self, Variant::Equi | Variant::EquiCriticOnly)
    }

    pub fn shares_trunk(self) -> bool {
        matches!(self, Variant::Equi | Variant::Plain)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| AgentError::Config(format!("unknown agent variant `{s}` (equi, plain, equi-actor-only, equi-critic-only)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub variant: Variant,
    pub lstm_init: InitMode,
    pub n_envs: usize,
    pub n_steps: usize,
    pub gamma: f64,
    pub lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub greedy_eval: bool,
    pub seed: u64,
    pub network: NetworkConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Equi,
            lstm_init: InitMode::Zero,
            n_envs: 16,
            n_steps: 5,
            gamma: 0.99,
            lr: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            total_steps: 100_000,
            eval_interval: 5_000,
            eval_episodes: 100,
            greedy_eval: false,
            seed: 0,
            network: NetworkConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AgentError::Config(m.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        for (name, x) in [
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(AgentError::Config(format!("{name} must be a finite number >= 0")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.n_envs == 0 || self.n_steps == 0 {
            return bad("n_envs and n_steps must be positive");
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("eval_interval and eval_episodes must be positive");
        }
        self.network.validate()
    }

    pub fn coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            value: self.value_coef,
            entropy: self.entropy_coef,
        }
    }

    pub fn steps_per_update(&self) -> usize {
        self.n_envs * self.n_steps
    }
}

/// Independent RNG streams derived from one seed. Environment `i` of a
/// training run uses stream `i`, matching [`crate::envs::env_rng`].
pub(crate) fn rng_stream(seed: u64, purpose: Purpose, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | index as u64);
    rng
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Purpose {
    // drawn through envs::env_rng, never named here
    #[allow(dead_code)]
    TrainEnv = 0,
    Actions = 1,
    EvalEnv = 2,
    EvalActions = 3,
    Init = 4,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let toml_text = toml::to_string(&AgentConfig {
                variant: v,
                ..Default::default()
            })
            .unwrap();
            assert!(toml_text.contains(&format!("variant = \"{v}\"")), "{toml_text}");
        }
        assert!("equivariant".parse::<Variant>().is_err());
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut c = AgentConfig::default();
        c.validate().unwrap();
        c.gamma = 1.0;
        assert!(c.validate().is_err());
        c.gamma = 0.0;
        c.entropy_coef = -0.1;
        assert!(c.validate().is_err());
        assert!(toml::from_str::<AgentConfig>("gama = 0.9").is_err());
        let c: AgentConfig = toml::from_str("n_envs = 4\nlstm_init = \"random\"").unwrap();
        assert_eq!((c.n_envs, c.lstm_init, c.n_steps), (4, InitMode::Random, 5));
    }

    #[test]
    fn training_env_streams_match_vec_env() {
        use rand::Rng;
        let mut a = rng_stream(5, Purpose::TrainEnv, 3);
        let mut b = crate::envs::env_rng(5, 3);
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }
}
