use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{rng_stream, PolicyNetwork, PolicyState, Purpose, Result};
use crate::autodiff::{Matrix, ParamStore, Tape};
use crate::envs::{EnvConfig, VecEnv};
use crate::equi_nn::InitMode;

/// One segment of `n_steps` transitions from each environment, indexed
/// `[t][env]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub n_steps: usize,
    /// Network inputs, `input_dim × n_envs` per step.
    pub inputs: Vec<Matrix>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    pub terminals: Vec<Vec<bool>>,
    pub truncations: Vec<Vec<bool>>,
    pub log_probs: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub entropies: Vec<Vec<f64>>,
    /// Value of the last observation of a truncated episode (0 elsewhere).
    pub truncation_values: Vec<Vec<f64>>,
    /// Value of the observation following the segment.
    pub bootstrap: Vec<f64>,
    /// LSTM state entering the segment.
    pub initial_state: PolicyState,
    /// After step `t`, env `e` restarted from `resets[t]` entry `(e, state)`.
    pub resets: Vec<Vec<(usize, PolicyState)>>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.n_envs * self.n_steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn done(&self, t: usize, e: usize) -> bool {
        self.terminals[t][e] || self.truncations[t][e]
    }
}

/// n-step targets `G` and advantages `G − V`, indexed `[t][env]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Returns {
    pub targets: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
}

/// Targets cut at terminals and bootstrapped at truncations and at the end
/// of the segment.
pub fn compute_returns(batch: &RolloutBatch, gamma: f64) -> Returns {
    let (n, b) = (batch.n_steps, batch.n_envs);
    let mut targets = vec![vec![0.0; b]; n];
    for e in 0..b {
        let mut next = batch.bootstrap[e];
        for t in (0..n).rev() {
            let r = batch.rewards[t][e];
            let g = if batch.terminals[t][e] {
                r
            } else if batch.truncations[t][e] {
                r + gamma * batch.truncation_values[t][e]
            } else {
                r + gamma * next
            };
            targets[t][e] = g;
            next = g;
        }
    }
    let advantages = targets
        .iter()
        .zip(&batch.values)
        .map(|(g, v)| g.iter().zip(v).map(|(g, v)| g - v).collect())
        .collect();
    Returns { targets, advantages }
}

/// Environments plus everything carried between segments: current
/// observations, previous actions, LSTM states, and episode statistics.
#[derive(Clone, Debug)]
pub struct Collector {
    envs: VecEnv,
    raw_obs: Vec<Vec<f64>>,
    prev_actions: Vec<Option<usize>>,
    state: PolicyState,
    init_mode: InitMode,
    rng: ChaCha8Rng,
    env_steps: usize,
    episodes: usize,
}

impl Collector {
    pub fn new(net: &PolicyNetwork, env: &EnvConfig, n_envs: usize, seed: u64, init_mode: InitMode) -> Result<Self> {
        let mut envs = VecEnv::new(env, n_envs, seed)?;
        let raw_obs = envs.reset_all();
        let mut rng = rng_stream(seed, Purpose::Actions, 0);
        let state = net.initial_state(init_mode, n_envs, &mut rng);
        Ok(Self {
            envs,
            raw_obs,
            prev_actions: vec![None; n_envs],
            state,
            init_mode,
            rng,
            env_steps: 0,
            episodes: 0,
        })
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn state(&self) -> &PolicyState {
        &self.state
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    /// Training episodes finished so far.
    pub fn episodes(&self) -> usize {
        self.episodes
    }

    fn inputs(&self, net: &PolicyNetwork) -> Matrix {
        let cols: Vec<Vec<f64>> = self
            .raw_obs
            .iter()
            .zip(&self.prev_actions)
            .map(|(o, &a)| net.input_features(o, a))
            .collect();
        Matrix::from_columns(&cols)
    }
}

/// Samples from the categorical distribution with the given logits column,
/// returning `(action, log π(action), entropy)`.
pub(crate) fn sample_categorical(logits: &[f64], rng: &mut impl Rng) -> (usize, f64, f64) {
    let log_probs = log_softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut action = log_probs.len() - 1;
    for (a, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            action = a;
            break;
        }
    }
    (action, log_probs[action], entropy(&log_probs))
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs.iter().map(|lp| lp.exp() * lp).sum::<f64>()
}

/// Steps every environment `n_steps` times with actions sampled from the
/// actor, carrying LSTM states and resetting them on episode ends.
pub fn collect_rollouts(
    net: &PolicyNetwork,
    store: &ParamStore,
    collector: &mut Collector,
    n_steps: usize,
) -> Result<RolloutBatch> {
    let b = collector.n_envs();
    let tape = Tape::new();
    let policy = net.realize(&tape, store)?;
    let initial_state = collector.state.clone();
    let mut batch = RolloutBatch {
        n_envs: b,
        n_steps,
        inputs: Vec::with_capacity(n_steps),
        actions: Vec::with_capacity(n_steps),
        rewards: Vec::with_capacity(n_steps),
        terminals: Vec::with_capacity(n_steps),
        truncations: Vec::with_capacity(n_steps),
        log_probs: Vec::with_capacity(n_steps),
        values: Vec::with_capacity(n_steps),
        entropies: Vec::with_capacity(n_steps),
        truncation_values: Vec::with_capacity(n_steps),
        bootstrap: Vec::new(),
        initial_state,
        resets: Vec::with_capacity(n_steps),
    };
    for _ in 0..n_steps {
        let x = collector.inputs(net);
        let vars = collector.state.to_tape(&tape);
        let step = policy.step(&tape, tape.constant(x.clone()), &vars)?;
        let logits = tape.value(step.logits);
        let mut actions = Vec::with_capacity(b);
        let mut log_probs = Vec::with_capacity(b);
        let mut entropies = Vec::with_capacity(b);
        for e in 0..b {
            let (a, lp, h) = sample_categorical(&logits.col(e), &mut collector.rng);
            actions.push(a);
            log_probs.push(lp);
            entropies.push(h);
        }
        let steps = collector.envs.step(&actions)?;
        let mut state = PolicyState::from_tape(&tape, &step.state);

        let truncated: Vec<bool> = steps.iter().map(|s| s.step.truncated).collect();
        let mut truncation_values = vec![0.0; b];
        if truncated.iter().any(|&t| t) {
            let final_inputs: Vec<Vec<f64>> = steps
                .iter()
                .zip(&actions)
                .map(|(s, &a)| net.input_features(&s.step.obs, Some(a)))
                .collect();
            let tail = policy.step(&tape, tape.constant(Matrix::from_columns(&final_inputs)), &step.state)?;
            let v = tape.value(tail.value);
            for e in (0..b).filter(|&e| truncated[e]) {
                truncation_values[e] = v.get(0, e);
            }
        }

        let mut resets = Vec::new();
        for (e, s) in steps.iter().enumerate() {
            if s.step.done() {
                let fresh = net.initial_state(collector.init_mode, 1, &mut collector.rng);
                state.set_column_from(e, &fresh, 0);
                debug_assert!(state
                    .trunks
                    .iter()
                    .zip(&fresh.trunks)
                    .all(|(s, f)| s.column(e) == f.column(0)));
                resets.push((e, fresh));
                collector.episodes += 1;
                collector.prev_actions[e] = None;
            } else {
                collector.prev_actions[e] = Some(actions[e]);
            }
            collector.raw_obs[e] = s.next_obs.clone();
        }
        collector.state = state;
        collector.env_steps += b;

        batch.inputs.push(x);
        batch.values.push(tape.value(step.value).into_data());
        batch.rewards.push(steps.iter().map(|s| s.step.reward).collect());
        batch.terminals.push(steps.iter().map(|s| s.step.terminal).collect());
        batch.truncations.push(truncated);
        batch.actions.push(actions);
        batch.log_probs.push(log_probs);
        batch.entropies.push(entropies);
        batch.truncation_values.push(truncation_values);
        batch.resets.push(resets);
    }
    let x = collector.inputs(net);
    let vars = collector.state.to_tape(&tape);
    let last = policy.step(&tape, tape.constant(x), &vars)?;
    batch.bootstrap = tape.value(last.value).into_data();
    Ok(batch)
}
