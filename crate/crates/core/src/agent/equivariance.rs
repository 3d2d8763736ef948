use std::fmt;

use rand::Rng;

use super::{rng_stream, NetworkConfig, PolicyNetwork, PolicyState, Purpose, Result, Variant};
use crate::autodiff::{Matrix, ParamStore};
use crate::envs::EnvConfig;
use crate::equi_nn::InitMode;
use crate::group::Element;

/// Residual bound for networks that are equivariant by construction.
pub const EQUIVARIANCE_TOL: f64 = 1e-8;

/// Largest deviations over a batch of histories and all group elements:
/// `‖π(g·h) − g·π(h)‖∞` on logits and `|V(g·h) − V(h)|` on values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SequenceResidual {
    pub actor: f64,
    pub critic: f64,
}

impl SequenceResidual {
    pub fn max(self, other: Self) -> Self {
        Self {
            actor: self.actor.max(other.actor),
            critic: self.critic.max(other.critic),
        }
    }
}

/// Feeds every history (one column per history, one matrix per step) and
/// each of its images under the group through the network and compares every
/// step's outputs. All copies of a history start from the same initial state
/// column, so a non-invariant initial state shows up as a residual.
pub fn sequence_equivariance(
    net: &PolicyNetwork,
    store: &ParamStore,
    inputs: &[Matrix],
    initial: &PolicyState,
) -> Result<SequenceResidual> {
    let elements: Vec<Element> = net.symmetry().group.elements().collect();
    let k = initial.batch();
    let mut big_inputs = Vec::with_capacity(inputs.len());
    for x in inputs {
        let parts = elements
            .iter()
            .map(|&g| net.act_on_inputs(g, x))
            .collect::<Result<Vec<_>>>()?;
        big_inputs.push(hstack(&parts));
    }
    let mut state = PolicyState {
        trunks: initial.trunks.clone(),
    };
    for (s, orig) in state.trunks.iter_mut().zip(&initial.trunks) {
        s.hidden = hstack(&vec![orig.hidden.clone(); elements.len()]);
        s.cell = hstack(&vec![orig.cell.clone(); elements.len()]);
    }
    let (outputs, _) = net.forward_sequence(store, &big_inputs, &state)?;
    let mut res = SequenceResidual::default();
    for (logits, values) in &outputs {
        let base_logits = columns(logits, 0, k);
        let base_values = columns(values, 0, k);
        for (gi, &g) in elements.iter().enumerate() {
            let expected = net.act_on_logits(g, &base_logits)?;
            res.actor = res.actor.max(columns(logits, gi * k, k).max_abs_diff(&expected));
            res.critic = res.critic.max(columns(values, gi * k, k).max_abs_diff(&base_values));
        }
    }
    Ok(res)
}

fn hstack(parts: &[Matrix]) -> Matrix {
    let cols: Vec<Vec<f64>> = parts.iter().flat_map(|m| (0..m.cols()).map(|c| m.col(c))).collect();
    Matrix::from_columns(&cols)
}

fn columns(m: &Matrix, start: usize, len: usize) -> Matrix {
    let cols: Vec<Vec<f64>> = (start..start + len).map(|c| m.col(c)).collect();
    Matrix::from_columns(&cols)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivarianceReport {
    pub env: String,
    pub variant: Variant,
    pub init: InitMode,
    pub networks: usize,
    pub histories: usize,
    pub max_len: usize,
    pub elements: usize,
    pub residual: SequenceResidual,
}

impl EquivarianceReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.residual.actor < tol && self.residual.critic < tol
    }
}

impl fmt::Display for EquivarianceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} (lstm init {:?}): {} networks x {} histories (len <= {}) x {} elements, max actor residual {:.3e}, max critic residual {:.3e}",
            self.env,
            self.variant,
            self.init,
            self.networks,
            self.histories,
            self.max_len,
            self.elements,
            self.residual.actor,
            self.residual.critic
        )
    }
}

/// Random networks × random input histories × all group elements.
///
/// Each network gets fresh initial weights plus Gaussian noise of std 0.1 on
/// every stored parameter (biases included); inputs are standard normal and
/// each network draws one history length in `1..=max_len`.
#[allow(clippy::too_many_arguments)]
pub fn equivariance_suite(
    env: &EnvConfig,
    config: &NetworkConfig,
    variant: Variant,
    init: InitMode,
    networks: usize,
    histories: usize,
    max_len: usize,
    seed: u64,
) -> Result<EquivarianceReport> {
    use rand_distr::{Distribution, StandardNormal};
    let mut residual = SequenceResidual::default();
    let mut elements = 0;
    for i in 0..networks {
        let mut rng = rng_stream(seed, Purpose::Init, i);
        let mut store = ParamStore::new();
        let net = PolicyNetwork::new(&mut store, env, config, variant, &mut rng)?;
        for id in store.ids().collect::<Vec<_>>() {
            for v in store.values_mut(id) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += 0.1 * z;
            }
        }
        elements = net.symmetry().group.order();
        let len = rng.random_range(1..=max_len.max(1));
        let dim = net.input_dim();
        let inputs: Vec<Matrix> = (0..len)
            .map(|_| {
                let data = (0..dim * histories).map(|_| StandardNormal.sample(&mut rng)).collect();
                Matrix::new(dim, histories, data)
            })
            .collect();
        let initial = net.initial_state(init, histories, &mut rng);
        residual = residual.max(sequence_equivariance(&net, &store, &inputs, &initial)?);
    }
    Ok(EquivarianceReport {
        env: env.name().into(),
        variant,
        init,
        networks,
        histories,
        max_len,
        elements,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{CarFlag1dConfig, CarFlag2dConfig};

    fn envs() -> [EnvConfig; 2] {
        [
            EnvConfig::Carflag1d(CarFlag1dConfig::default()),
            EnvConfig::Carflag2d(CarFlag2dConfig {
                size: 5,
                ..Default::default()
            }),
        ]
    }

    #[test]
    fn equi_network_is_equivariant_with_zero_init() {
        for env in envs() {
            let r = equivariance_suite(&env, &NetworkConfig::default(), Variant::Equi, InitMode::Zero, 3, 4, 20, 0).unwrap();
            assert!(r.passed(1e-8), "{r}");
        }
    }

    #[test]
    fn random_init_breaks_equivariance() {
        for env in envs() {
            let r = equivariance_suite(&env, &NetworkConfig::default(), Variant::Equi, InitMode::Random, 3, 4, 20, 0).unwrap();
            assert!(r.residual.actor > 1e-3 || r.residual.critic > 1e-3, "{r}");
        }
    }

    #[test]
    fn ablations_constrain_only_their_head() {
        let env = EnvConfig::Carflag1d(CarFlag1dConfig::default());
        let cfg = NetworkConfig::default();
        let plain = equivariance_suite(&env, &cfg, Variant::Plain, InitMode::Zero, 2, 4, 10, 1).unwrap();
        assert!(plain.residual.actor > 1e-3 && plain.residual.critic > 1e-3, "{plain}");
        let actor = equivariance_suite(&env, &cfg, Variant::EquiActorOnly, InitMode::Zero, 2, 4, 10, 1).unwrap();
        assert!(actor.residual.actor < 1e-8 && actor.residual.critic > 1e-3, "{actor}");
        let critic = equivariance_suite(&env, &cfg, Variant::EquiCriticOnly, InitMode::Zero, 2, 4, 10, 1).unwrap();
        assert!(critic.residual.critic < 1e-8 && critic.residual.actor > 1e-3, "{critic}");
    }
}
