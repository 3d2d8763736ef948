use super::{
    collect_rollouts, compute_returns, rng_stream, AgentError, Collector, NetworkConfig, PolicyNetwork, Purpose, Result, Returns,
    RolloutBatch, Variant,
};
use crate::envs::EnvConfig;
use crate::equi_nn::{InitMode, LayerSpec};
use crate::group::RepSpec;
use crate::autodiff::{clip_grad_norm, Gradients, Matrix, Optimizer, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossCoefficients {
    pub value: f64,
    pub entropy: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

struct LossVars {
    total: Var,
    policy: Var,
    value: Var,
    entropy: Var,
}

/// Unrolls the network over the segment from the carried state, restarting
/// columns at episode boundaries exactly as during collection, and builds
/// `−mean(A·log π(a)) + c_v·mean((G − V)²) − c_e·mean(H)`.
fn build_loss(
    tape: &Tape,
    net: &PolicyNetwork,
    store: &ParamStore,
    batch: &RolloutBatch,
    returns: &Returns,
    coefs: LossCoefficients,
) -> Result<LossVars> {
    let policy = net.realize(tape, store)?;
    let b = batch.n_envs;
    let ones = tape.constant(Matrix::filled(1, net.n_actions(), 1.0));
    let mut state = batch.initial_state.to_tape(tape);
    let (mut pterms, mut vterms, mut hterms) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..batch.n_steps {
        let step = policy.step(tape, tape.constant(batch.inputs[t].clone()), &state)?;
        let lsm = tape.log_softmax(step.logits);
        let logp = tape.gather(lsm, &batch.actions[t])?;
        let adv = tape.constant(Matrix::new(1, b, returns.advantages[t].clone()));
        pterms.push(tape.hadamard(logp, adv)?);
        // Σ_a p log p, the negated entropy
        let plogp = tape.hadamard(tape.exp(lsm), lsm)?;
        hterms.push(tape.matmul(ones, plogp)?);
        let target = tape.constant(Matrix::new(1, b, returns.targets[t].clone()));
        let err = tape.sub(step.value, target)?;
        vterms.push(tape.hadamard(err, err)?);

        state = step.state;
        if !batch.resets[t].is_empty() {
            state = restart_columns(tape, &state, &batch.resets[t], b)?;
        }
    }
    let policy_loss = tape.scale(tape.mean(tape.concat(&pterms)?), -1.0);
    let value_loss = tape.mean(tape.concat(&vterms)?);
    let entropy = tape.scale(tape.mean(tape.concat(&hterms)?), -1.0);
    let total = tape.add(
        tape.add(policy_loss, tape.scale(value_loss, coefs.value))?,
        tape.scale(entropy, -coefs.entropy),
    )?;
    Ok(LossVars {
        total,
        policy: policy_loss,
        value: value_loss,
        entropy,
    })
}

/// `state ⊙ keep + fresh`, where `keep` zeroes the restarted columns and
/// `fresh` holds their initial states.
fn restart_columns(
    tape: &Tape,
    state: &[(Var, Var)],
    resets: &[(usize, super::PolicyState)],
    batch: usize,
) -> Result<Vec<(Var, Var)>> {
    let mut out = Vec::with_capacity(state.len());
    for (k, &(h, c)) in state.iter().enumerate() {
        let d = tape.shape(h).0;
        let mut keep = Matrix::filled(d, batch, 1.0);
        let mut fresh_h = Matrix::zeros(d, batch);
        let mut fresh_c = Matrix::zeros(d, batch);
        for (e, s) in resets {
            let (fh, fc) = s.trunks[k].column(0);
            for r in 0..d {
                keep.set(r, *e, 0.0);
                fresh_h.set(r, *e, fh[r]);
                fresh_c.set(r, *e, fc[r]);
            }
        }
        let keep = tape.constant(keep);
        let h = tape.add(tape.hadamard(h, keep)?, tape.constant(fresh_h))?;
        let c = tape.add(tape.hadamard(c, keep)?, tape.constant(fresh_c))?;
        out.push((h, c));
    }
    Ok(out)
}

/// The scalar loss at the current parameters.
pub fn a2c_loss_value(
    net: &PolicyNetwork,
    store: &ParamStore,
    batch: &RolloutBatch,
    returns: &Returns,
    coefs: LossCoefficients,
) -> Result<f64> {
    let tape = Tape::new();
    let vars = build_loss(&tape, net, store, batch, returns, coefs)?;
    Ok(tape.value(vars.total).item())
}

/// Loss gradients with respect to every stored parameter (unclipped).
pub fn a2c_gradients(
    net: &PolicyNetwork,
    store: &ParamStore,
    batch: &RolloutBatch,
    returns: &Returns,
    coefs: LossCoefficients,
) -> Result<(Gradients, LossStats)> {
    let tape = Tape::new();
    let vars = build_loss(&tape, net, store, batch, returns, coefs)?;
    let grads = tape.backward(vars.total)?.params(store);
    let stats = LossStats {
        total: tape.value(vars.total).item(),
        policy_loss: tape.value(vars.policy).item(),
        value_loss: tape.value(vars.value).item(),
        entropy: tape.value(vars.entropy).item(),
        grad_norm: grads.norm(),
    };
    Ok((grads, stats))
}

/// One clipped optimizer step. A non-finite loss aborts before any parameter
/// changes.
#[allow(clippy::too_many_arguments)]
pub fn a2c_update(
    net: &PolicyNetwork,
    store: &mut ParamStore,
    optimizer: &mut Optimizer,
    batch: &RolloutBatch,
    returns: &Returns,
    coefs: LossCoefficients,
    max_grad_norm: f64,
    update: usize,
) -> Result<LossStats> {
    let (mut grads, stats) = a2c_gradients(net, store, batch, returns, coefs)?;
    if !stats.total.is_finite() {
        return Err(AgentError::NonFiniteLoss {
            update,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
        });
    }
    clip_grad_norm(&mut grads, max_grad_norm);
    optimizer.step(store, &grads)?;
    Ok(stats)
}

/// Toy network (two fields per layer) on `env` with parameters nudged off
/// their initial values, plus one collected `n_envs × n_steps` batch.
fn toy_setup(
    env: &EnvConfig,
    variant: Variant,
    mode: InitMode,
    n_envs: usize,
    n_steps: usize,
    seed: u64,
) -> Result<(ParamStore, PolicyNetwork, RolloutBatch)> {
    let cfg = NetworkConfig {
        hidden_fields: 2,
        head_fields: 2,
        encoder: match env {
            EnvConfig::Carflag1d(_) => Some(vec![
                LayerSpec::Linear {
                    fields: 2,
                    rep: RepSpec::Single("regular".into()),
                },
                LayerSpec::Relu,
            ]),
            EnvConfig::Carflag2d(c) => Some(vec![LayerSpec::Conv {
                fields: 2,
                rep: RepSpec::Single("regular".into()),
                kernel: c.size,
                padding: 0,
                stride: 1,
            }]),
        },
        double_tanh: true,
    };
    let mut store = ParamStore::new();
    let mut rng = rng_stream(seed, Purpose::Init, 0);
    let net = PolicyNetwork::new(&mut store, env, &cfg, variant, &mut rng)?;
    // push some parameters away from init so biases are exercised
    for id in store.ids().collect::<Vec<_>>() {
        for (k, v) in store.values_mut(id).iter_mut().enumerate() {
            *v += 0.05 * ((k * 7 + id.index() * 3) % 11) as f64 / 11.0 - 0.02;
        }
    }
    let mut c = Collector::new(&net, env, n_envs, seed, mode)?;
    let _ = collect_rollouts(&net, &store, &mut c, 1)?;
    let batch = collect_rollouts(&net, &store, &mut c, n_steps)?;
    Ok((store, net, batch))
}

/// Norm-wise relative error of the tape gradient against central
/// differences over every scalar parameter.
pub fn loss_gradient_error(net: &PolicyNetwork, store: &ParamStore, batch: &RolloutBatch, coefs: LossCoefficients) -> Result<f64> {
    let returns = compute_returns(batch, 0.9);
    let (grads, _) = a2c_gradients(net, store, batch, &returns, coefs)?;
    let h = 1e-6;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    let mut probe = store.clone();
    for id in store.ids() {
        for k in 0..store.values(id).len() {
            let x0 = store.values(id)[k];
            probe.values_mut(id)[k] = x0 + h;
            let up = a2c_loss_value(net, &probe, batch, &returns, coefs)?;
            probe.values_mut(id)[k] = x0 - h;
            let down = a2c_loss_value(net, &probe, batch, &returns, coefs)?;
            probe.values_mut(id)[k] = x0;
            let fd = (up - down) / (2.0 * h);
            let an = grads.get(id)[k];
            num += (fd - an).powi(2);
            den = den.max(fd.abs()).max(an.abs());
        }
    }
    Ok(num.sqrt() / den.max(1e-12))
}

/// Bound on the relative error of tape gradients against central differences.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Gradient check of the full recurrent A2C loss on a toy batch for `env`.
pub fn a2c_gradient_check(
    env: &EnvConfig,
    variant: Variant,
    init: InitMode,
    n_envs: usize,
    n_steps: usize,
    seed: u64,
) -> Result<f64> {
    let (store, net, batch) = toy_setup(env, variant, init, n_envs, n_steps, seed)?;
    loss_gradient_error(&net, &store, &batch, LossCoefficients { value: 0.5, entropy: 0.01 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{CarFlag1dConfig, CarFlag2dConfig};

    fn tiny(env: &EnvConfig, variant: Variant, mode: InitMode, n_envs: usize, n_steps: usize) -> (ParamStore, PolicyNetwork, RolloutBatch) {
        toy_setup(env, variant, mode, n_envs, n_steps, 11).unwrap()
    }

    fn fd_relative_error(net: &PolicyNetwork, store: &ParamStore, batch: &RolloutBatch, coefs: LossCoefficients) -> f64 {
        loss_gradient_error(net, store, batch, coefs).unwrap()
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let coefs = LossCoefficients {
            value: 0.5,
            entropy: 0.01,
        };
        // max_steps 1 truncates on the second step, exercising restarts
        let env = EnvConfig::Carflag1d(CarFlag1dConfig {
            half_size: 4,
            max_steps: 1,
            ..Default::default()
        });
        for variant in [Variant::Equi, Variant::Plain, Variant::EquiActorOnly] {
            let (store, net, batch) = tiny(&env, variant, InitMode::Zero, 3, 2);
            assert!(batch.resets.iter().any(|r| !r.is_empty()));
            let err = fd_relative_error(&net, &store, &batch, coefs);
            assert!(err < 1e-4, "{variant}: {err}");
        }
        let env = EnvConfig::Carflag2d(CarFlag2dConfig {
            size: 3,
            ..Default::default()
        });
        let (store, net, batch) = tiny(&env, Variant::Equi, InitMode::Random, 2, 2);
        let err = fd_relative_error(&net, &store, &batch, coefs);
        assert!(err < 1e-4, "2d: {err}");
    }

    #[test]
    fn only_entropy_drives_gradient_without_advantage_or_value_error() {
        let env = EnvConfig::Carflag1d(CarFlag1dConfig::default());
        let (store, net, batch) = tiny(&env, Variant::Equi, InitMode::Zero, 4, 3);
        let returns = Returns {
            targets: batch.values.clone(),
            advantages: vec![vec![0.0; 4]; 3],
        };
        let no_entropy = LossCoefficients {
            value: 0.5,
            entropy: 0.0,
        };
        let (g, stats) = a2c_gradients(&net, &store, &batch, &returns, no_entropy).unwrap();
        assert_eq!(g.norm(), 0.0);
        assert_eq!(stats.value_loss, 0.0);
        let with_entropy = LossCoefficients {
            value: 0.5,
            entropy: 0.01,
        };
        let (g, stats) = a2c_gradients(&net, &store, &batch, &returns, with_entropy).unwrap();
        assert!(g.norm() > 0.0);
        let mean_h: f64 = batch.entropies.iter().flatten().sum::<f64>() / 12.0;
        assert!((stats.entropy - mean_h).abs() < 1e-12);
    }

    #[test]
    fn recomputed_values_match_collection() {
        let env = EnvConfig::Carflag1d(CarFlag1dConfig {
            half_size: 3,
            max_steps: 3,
            ..Default::default()
        });
        let (store, net, batch) = tiny(&env, Variant::Equi, InitMode::Random, 5, 8);
        // zero advantages: the value loss is exactly the squared gap between
        // recomputed and recorded values, which must vanish
        let returns = Returns {
            targets: batch.values.clone(),
            advantages: vec![vec![0.0; 5]; 8],
        };
        let (_, stats) = a2c_gradients(&net, &store, &batch, &returns, LossCoefficients { value: 1.0, entropy: 0.0 }).unwrap();
        assert_eq!(stats.value_loss, 0.0);
    }
}
