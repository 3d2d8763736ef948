use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rollout::sample_categorical;
use super::{
    a2c_update, collect_rollouts, compute_returns, rng_stream, AgentConfig, Collector, LossStats, PolicyNetwork,
    Purpose, Result,
};
use crate::autodiff::{Matrix, OptimizerConfig, ParamStore, Tape};
use crate::envs::{Env, EnvConfig};
use crate::equi_nn::InitMode;

pub const CURVE_HEADER: &str = "step,episodes,success_rate,mean_return,policy_loss,value_loss,entropy,seed";

/// One evaluation point of a learning curve. Losses are averaged over the
/// updates since the previous row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Sample from the actor, as during training.
    #[default]
    Sample,
    /// Take the first maximizing action.
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

fn choose(logits: &[f64], mode: EvalMode, rng: &mut impl Rng) -> usize {
    match mode {
        EvalMode::Sample => sample_categorical(logits, rng).0,
        EvalMode::Greedy => {
            let mut best = 0;
            for (a, &x) in logits.iter().enumerate() {
                if x > logits[best] {
                    best = a;
                }
            }
            best
        }
    }
}

/// Runs `episodes` independent episodes side by side; episode `i` resets
/// from stream `i` of `seed`, so evaluations with one seed see the same
/// starts.
pub fn evaluate(
    net: &PolicyNetwork,
    store: &ParamStore,
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
    mode: EvalMode,
    init: InitMode,
) -> Result<EvalResult> {
    let mut envs = (0..episodes).map(|_| Env::new(env)).collect::<crate::envs::Result<Vec<_>>>()?;
    let mut obs: Vec<Vec<f64>> = envs
        .iter_mut()
        .enumerate()
        .map(|(i, e)| e.reset(&mut rng_stream(seed, Purpose::EvalEnv, i)))
        .collect();
    let mut rng = rng_stream(seed, Purpose::EvalActions, 0);
    let mut prev: Vec<Option<usize>> = vec![None; episodes];
    let mut active = vec![true; episodes];
    let mut returns = vec![0.0; episodes];
    let mut successes = 0usize;
    let tape = Tape::new();
    let policy = net.realize(&tape, store)?;
    let mut state = net.initial_state(init, episodes, &mut rng).to_tape(&tape);
    while active.iter().any(|&a| a) {
        let cols: Vec<Vec<f64>> = obs.iter().zip(&prev).map(|(o, &a)| net.input_features(o, a)).collect();
        let step = policy.step(&tape, tape.constant(Matrix::from_columns(&cols)), &state)?;
        let logits = tape.value(step.logits);
        for i in 0..episodes {
            if !active[i] {
                continue;
            }
            let a = choose(&logits.col(i), mode, &mut rng);
            let s = envs[i].step(a)?;
            returns[i] += s.reward;
            if s.done() {
                active[i] = false;
                successes += s.success as usize;
            }
            obs[i] = s.obs;
            prev[i] = Some(a);
        }
        state = step.state;
    }
    let n = episodes.max(1) as f64;
    Ok(EvalResult {
        episodes,
        success_rate: successes as f64 / n,
        mean_return: returns.iter().sum::<f64>() / n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub logits: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub states: Vec<usize>,
    pub success: bool,
    pub total_return: f64,
}

/// Plays one episode from the env's current state (reset it first).
pub fn run_episode(
    net: &PolicyNetwork,
    store: &ParamStore,
    env: &mut Env,
    mode: EvalMode,
    init: InitMode,
    rng: &mut impl Rng,
) -> Result<EpisodeTrace> {
    let tape = Tape::new();
    let policy = net.realize(&tape, store)?;
    let mut state = net.initial_state(init, 1, rng).to_tape(&tape);
    let mut obs = env.features();
    let mut prev = None;
    let mut trace = EpisodeTrace {
        actions: Vec::new(),
        rewards: Vec::new(),
        logits: Vec::new(),
        values: Vec::new(),
        states: vec![env.state_index()],
        success: false,
        total_return: 0.0,
    };
    loop {
        let x = tape.constant(Matrix::column(net.input_features(&obs, prev)));
        let step = policy.step(&tape, x, &state)?;
        let logits = tape.value(step.logits).into_data();
        let a = choose(&logits, mode, rng);
        let s = env.step(a)?;
        trace.actions.push(a);
        trace.rewards.push(s.reward);
        trace.logits.push(logits);
        trace.values.push(tape.value(step.value).item());
        trace.states.push(env.state_index());
        trace.total_return += s.reward;
        if s.done() {
            trace.success = s.success;
            return Ok(trace);
        }
        obs = s.obs;
        prev = Some(a);
        state = step.state;
    }
}

/// First curve step whose success rate reaches `threshold`.
pub fn steps_to_threshold(curve: &[CurveRow], threshold: f64) -> Option<usize> {
    curve.iter().find(|r| r.success_rate >= threshold).map(|r| r.step)
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub curve: Vec<CurveRow>,
    pub net: PolicyNetwork,
    pub store: ParamStore,
    /// Parameters as initialized, before any update.
    pub initial: ParamStore,
    /// Parameters at the best evaluation so far (the initial ones if none).
    pub best: ParamStore,
    pub best_success: f64,
    pub env_steps: usize,
    pub updates: usize,
}

#[derive(Default)]
struct LossMeans {
    n: usize,
    sum: LossStats,
}

impl LossMeans {
    fn add(&mut self, s: LossStats) {
        self.n += 1;
        self.sum.policy_loss += s.policy_loss;
        self.sum.value_loss += s.value_loss;
        self.sum.entropy += s.entropy;
    }

    fn take(&mut self) -> (f64, f64, f64) {
        let n = self.n.max(1) as f64;
        let out = (self.sum.policy_loss / n, self.sum.value_loss / n, self.sum.entropy / n);
        *self = Self::default();
        out
    }
}

/// Alternates collection and updates until `total_steps` env steps, then
/// evaluates every `eval_interval` steps and once at the end. Every curve row
/// is passed to `on_row` as soon as it exists.
pub fn train(env: &EnvConfig, config: &AgentConfig, mut on_row: impl FnMut(&CurveRow)) -> Result<TrainOutput> {
    config.validate()?;
    let mut rng = rng_stream(config.seed, Purpose::Init, 0);
    let mut store = ParamStore::new();
    let net = PolicyNetwork::new(&mut store, env, &config.network, config.variant, &mut rng)?;
    let initial = store.clone();
    let mut optimizer = OptimizerConfig::adam(config.lr).build(&store);
    let mut collector = Collector::new(&net, env, config.n_envs, config.seed, config.lstm_init)?;
    let mode = if config.greedy_eval {
        EvalMode::Greedy
    } else {
        EvalMode::Sample
    };
    let mut curve = Vec::new();
    let mut best = store.clone();
    let mut best_success = f64::NEG_INFINITY;
    let mut losses = LossMeans::default();
    let mut next_eval = config.eval_interval;
    let mut updates = 0;
    while collector.env_steps() < config.total_steps {
        let batch = collect_rollouts(&net, &store, &mut collector, config.n_steps)?;
        let returns = compute_returns(&batch, config.gamma);
        let stats = a2c_update(
            &net,
            &mut store,
            &mut optimizer,
            &batch,
            &returns,
            config.coefficients(),
            config.max_grad_norm,
            updates,
        )?;
        updates += 1;
        losses.add(stats);
        let steps = collector.env_steps();
        if steps >= next_eval || steps >= config.total_steps {
            let eval = evaluate(&net, &store, env, config.eval_episodes, config.seed, mode, config.lstm_init)?;
            let (policy_loss, value_loss, entropy) = losses.take();
            let row = CurveRow {
                step: steps,
                episodes: collector.episodes(),
                success_rate: eval.success_rate,
                mean_return: eval.mean_return,
                policy_loss,
                value_loss,
                entropy,
                seed: config.seed,
            };
            on_row(&row);
            curve.push(row);
            if eval.success_rate > best_success {
                best_success = eval.success_rate;
                best = store.clone();
            }
            while next_eval <= steps {
                next_eval += config.eval_interval;
            }
        }
    }
    Ok(TrainOutput {
        curve,
        net,
        store,
        initial,
        best,
        best_success: best_success.max(0.0),
        env_steps: collector.env_steps(),
        updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{sequence_equivariance, NetworkConfig, PolicyNetwork, Variant};
    use crate::envs::{carflag1d, CarFlag1dConfig, CarFlag2dConfig};
    use crate::group::Element;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_1d() -> EnvConfig {
        EnvConfig::Carflag1d(CarFlag1dConfig {
            half_size: 5,
            ..Default::default()
        })
    }

    fn quick(variant: Variant, total_steps: usize) -> AgentConfig {
        AgentConfig {
            variant,
            n_envs: 4,
            total_steps,
            eval_interval: 200,
            eval_episodes: 8,
            network: NetworkConfig {
                hidden_fields: 4,
                head_fields: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_gives_empty_curve() {
        let out = train(&small_1d(), &quick(Variant::Equi, 0), |_| {}).unwrap();
        assert!(out.curve.is_empty());
        assert_eq!(out.updates, 0);
        assert_eq!(out.best.to_checkpoint(), out.store.to_checkpoint());
        assert_eq!(out.initial.to_checkpoint(), out.store.to_checkpoint());
    }

    #[test]
    fn checkpoint_restores_the_trained_policy() {
        let env = small_1d();
        let cfg = quick(Variant::EquiActorOnly, 200);
        let out = train(&env, &cfg, |_| {}).unwrap();
        let (net, store) = PolicyNetwork::from_checkpoint(&env, &cfg.network, cfg.variant, &out.store.to_checkpoint()).unwrap();
        assert_eq!(store.to_checkpoint(), out.store.to_checkpoint());
        let a = evaluate(&out.net, &out.store, &env, 6, 1, EvalMode::Sample, InitMode::Zero).unwrap();
        let b = evaluate(&net, &store, &env, 6, 1, EvalMode::Sample, InitMode::Zero).unwrap();
        assert_eq!(a, b);
        assert!(PolicyNetwork::from_checkpoint(&env, &cfg.network, Variant::Plain, &out.store.to_checkpoint()).is_err());
    }

    #[test]
    fn training_is_deterministic_and_logs_every_interval() {
        let env = small_1d();
        let mut seen = 0;
        let a = train(&env, &quick(Variant::Equi, 500), |_| seen += 1).unwrap();
        let b = train(&env, &quick(Variant::Equi, 500), |_| {}).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(seen, a.curve.len());
        // 20 steps per update: evals after 200, 400 and the final 500
        let steps: Vec<usize> = a.curve.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![200, 400, 500]);
        assert_eq!(a.store.to_checkpoint(), b.store.to_checkpoint());
        let c = train(&env, &AgentConfig { seed: 1, ..quick(Variant::Equi, 500) }, |_| {}).unwrap();
        assert_ne!(a.curve, c.curve);
    }

    #[test]
    fn equivariance_survives_training() {
        let env = EnvConfig::Carflag2d(CarFlag2dConfig {
            size: 5,
            ..Default::default()
        });
        let cfg = AgentConfig {
            lr: 1e-2,
            ..quick(Variant::Equi, 100 * 20)
        };
        let out = train(&env, &cfg, |_| {}).unwrap();
        assert_eq!(out.updates, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs: Vec<Matrix> = (0..12)
            .map(|_| Matrix::new(50, 3, (0..150).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let init = out.net.initial_state(InitMode::Zero, 3, &mut rng);
        let r = sequence_equivariance(&out.net, &out.store, &inputs, &init).unwrap();
        assert!(r.actor < 1e-8 && r.critic < 1e-8, "{r:?}");
        assert_ne!(out.store.to_checkpoint(), train(&env, &quick(Variant::Equi, 0), |_| {}).unwrap().store.to_checkpoint());
    }

    #[test]
    fn adversarial_policy_never_succeeds() {
        // a network whose actor always prefers Left, evaluated on starts with
        // the goal on the right
        let env_cfg = small_1d();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = PolicyNetwork::new(&mut store, &env_cfg, &NetworkConfig::default(), Variant::Plain, &mut rng).unwrap();
        let bias = store.find("actor.out.bias").unwrap();
        store.values_mut(bias).copy_from_slice(&[50.0, -50.0]);
        let mut env = Env::new(&env_cfg).unwrap();
        for pos in [-4, -1, 2, 4] {
            if let Env::CarFlag1d(e) = &mut env {
                e.set_state(pos, 1).unwrap();
            }
            let t = run_episode(&net, &store, &mut env, EvalMode::Greedy, InitMode::Zero, &mut rng).unwrap();
            assert!(!t.success);
            assert!(t.actions.iter().all(|&a| a == carflag1d::LEFT));
        }
    }

    #[test]
    fn mirrored_starts_give_mirrored_greedy_episodes() {
        let env_cfg = EnvConfig::Carflag1d(CarFlag1dConfig::default());
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = PolicyNetwork::new(&mut store, &env_cfg, &NetworkConfig::default(), Variant::Equi, &mut rng).unwrap();
        let flip = Element(1);
        let mut env = Env::new(&env_cfg).unwrap();
        for (pos, goal) in [(3, 1), (-7, 1), (12, -1), (-20, -1)] {
            let mut run = |p: i64, g: i64| {
                if let Env::CarFlag1d(e) = &mut env {
                    e.set_state(p, g).unwrap();
                }
                run_episode(&net, &store, &mut env, EvalMode::Greedy, InitMode::Zero, &mut rng).unwrap()
            };
            let a = run(pos, goal);
            let b = run(-pos, -goal);
            assert_eq!(a.success, b.success);
            assert_eq!(a.total_return, b.total_return);
            for (x, y) in a.logits.iter().zip(&b.logits) {
                let gx = net.act_on_logits(flip, &Matrix::column(x.clone())).unwrap();
                assert!(gx.max_abs_diff(&Matrix::column(y.clone())) < 1e-10);
            }
            let mirrored: Vec<usize> = a.actions.iter().map(|&x| 1 - x).collect();
            assert_eq!(mirrored, b.actions);
        }
    }

    #[test]
    fn curve_header_matches_row_fields() {
        let row = CurveRow {
            step: 1,
            episodes: 2,
            success_rate: 0.5,
            mean_return: 0.1,
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.6,
            seed: 7,
        };
        let names: Vec<&str> = CURVE_HEADER.split(',').collect();
        let toml_text = toml::to_string(&row).unwrap();
        for n in names {
            assert!(toml_text.contains(&format!("{n} =")), "{n}");
        }
    }
}
