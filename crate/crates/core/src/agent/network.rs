use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentError, Result, Variant};
use crate::autodiff::{Matrix, ParamStore, Tape, Var};
use crate::envs::{carflag1d, env_group_binding, EnvConfig, EnvSymmetry};
use crate::equi_nn::{
    InitMode, LayerSpec, LstmCell, LstmState, Outputter, RealizedLstm, RealizedSequential, Sequential,
};
use crate::group::{Element, RepSpec, Representation, Spatial};

/// Widths are counts of regular-representation fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_fields: usize,
    pub head_fields: usize,
    /// Encoder layers before the LSTM; `None` picks the domain default.
    pub encoder: Option<Vec<LayerSpec>>,
    pub double_tanh: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_fields: 16,
            head_fields: 16,
            encoder: None,
            double_tanh: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_fields == 0 || self.head_fields == 0 {
            return Err(AgentError::Config("hidden_fields and head_fields must be positive".into()));
        }
        Ok(())
    }

    /// 1D: one linear layer to 16 regular fields. 2D: two padded 3×3 convs
    /// (4 and 8 fields) and a full-size conv collapsing the grid to 16 fields.
    pub fn default_encoder(env: &EnvConfig) -> Vec<LayerSpec> {
        let regular = || RepSpec::Single("regular".into());
        match env {
            EnvConfig::Carflag1d(_) => vec![
                LayerSpec::Linear {
                    fields: 16,
                    rep: regular(),
                },
                LayerSpec::Relu,
            ],
            EnvConfig::Carflag2d(c) => {
                let conv = |fields, kernel, padding| LayerSpec::Conv {
                    fields,
                    rep: regular(),
                    kernel,
                    padding,
                    stride: 1,
                };
                vec![
                    conv(4, 3, 1),
                    LayerSpec::Relu,
                    conv(8, 3, 1),
                    LayerSpec::Relu,
                    conv(16, c.size, 0),
                    LayerSpec::Relu,
                ]
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Trunk {
    encoder: Sequential,
    lstm: LstmCell,
}

/// Encoder → LSTM → actor and critic heads.
///
/// In 1D the per-step input is `(pos / H, side, previous action)`, the last
/// encoded as −1 (Left), +1 (Right) or 0 at the first step, so the flip acts
/// on all three entries by negation. In 2D the input is the observation
/// image.
#[derive(Clone, Debug)]
pub struct PolicyNetwork {
    variant: Variant,
    env: EnvConfig,
    symmetry: EnvSymmetry,
    input_rep: Representation,
    input_spatial: Spatial,
    trunks: Vec<Trunk>,
    actor: Outputter,
    critic: Outputter,
}

impl PolicyNetwork {
    /// Rebuilds the network described by `config` and loads parameter values
    /// from checkpoint text written by [`ParamStore::to_checkpoint`].
    pub fn from_checkpoint(env: &EnvConfig, config: &NetworkConfig, variant: Variant, text: &str) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let net = Self::new(&mut store, env, config, variant, &mut super::rng_stream(0, super::Purpose::Init, 0))?;
        store.load_from(&ParamStore::from_checkpoint(text)?)?;
        Ok((net, store))
    }

    pub fn new(
        store: &mut ParamStore,
        env: &EnvConfig,
        config: &NetworkConfig,
        variant: Variant,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        env.validate()?;
        let (_, symmetry) = env_group_binding(env)?;
        let group = symmetry.group.clone();
        let (input_rep, input_spatial) = match env {
            EnvConfig::Carflag1d(_) => (Representation::multiple(&Representation::sign(&group)?, 3)?, Spatial::Scalar),
            EnvConfig::Carflag2d(_) => (symmetry.obs_rep.clone(), symmetry.obs_spatial),
        };
        let specs = config.encoder.clone().unwrap_or_else(|| NetworkConfig::default_encoder(env));
        let hidden = Representation::multiple(&Representation::regular(&group), config.hidden_fields)?;
        let head = Representation::multiple(&Representation::regular(&group), config.head_fields)?;

        let mut build_trunk = |name: &str, equivariant: bool, rng: &mut _| -> Result<Trunk> {
            let encoder = Sequential::from_specs(
                store,
                &format!("{name}.encoder"),
                &input_rep,
                input_spatial,
                &specs,
                equivariant,
                rng,
            )?;
            if encoder.out_spatial() != Spatial::Scalar {
                return Err(AgentError::Config(format!(
                    "encoder must end in a scalar field before the LSTM, got {:?}",
                    encoder.out_spatial()
                )));
            }
            let lname = format!("{name}.lstm");
            let mut lstm = if equivariant {
                LstmCell::equivariant(store, &lname, encoder.out_rep(), &hidden, rng)?
            } else {
                LstmCell::free(store, &lname, encoder.out_rep(), &hidden, rng)?
            };
            lstm.double_tanh = config.double_tanh;
            Ok(Trunk { encoder, lstm })
        };

        let trunks = if variant.shares_trunk() {
            vec![build_trunk("trunk", variant == Variant::Equi, rng)?]
        } else {
            vec![
                build_trunk("actor_trunk", variant.actor_equivariant(), rng)?,
                build_trunk("critic_trunk", variant.critic_equivariant(), rng)?,
            ]
        };
        let actor = Outputter::actor(
            store,
            "actor",
            &hidden,
            &head,
            &symmetry.action_rep,
            variant.actor_equivariant(),
            rng,
        )?;
        let critic = Outputter::critic(store, "critic", &hidden, &head, variant.critic_equivariant(), rng)?;
        Ok(Self {
            variant,
            env: env.clone(),
            symmetry,
            input_rep,
            input_spatial,
            trunks,
            actor,
            critic,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn env(&self) -> &EnvConfig {
        &self.env
    }

    pub fn symmetry(&self) -> &EnvSymmetry {
        &self.symmetry
    }

    pub fn input_rep(&self) -> &Representation {
        &self.input_rep
    }

    pub fn input_spatial(&self) -> Spatial {
        self.input_spatial
    }

    pub fn input_dim(&self) -> usize {
        self.input_rep.dim() * self.input_spatial.size()
    }

    pub fn n_actions(&self) -> usize {
        self.symmetry.action_rep.dim()
    }

    pub fn n_trunks(&self) -> usize {
        self.trunks.len()
    }

    pub fn hidden_rep(&self) -> &Representation {
        self.trunks[0].lstm.hidden_rep()
    }

    /// Network input for raw environment features and the previous action.
    pub fn input_features(&self, raw: &[f64], prev_action: Option<usize>) -> Vec<f64> {
        let mut x = raw.to_vec();
        if let EnvConfig::Carflag1d(_) = self.env {
            x.push(match prev_action {
                None => 0.0,
                Some(carflag1d::LEFT) => -1.0,
                Some(_) => 1.0,
            });
        }
        x
    }

    /// Applies `g` to every column of a batch of network inputs.
    pub fn act_on_inputs(&self, g: Element, batch: &Matrix) -> Result<Matrix> {
        Ok(crate::equi_nn::act_on_columns(&self.input_rep, self.input_spatial, g, batch)?)
    }

    /// Applies `g` to every column of a batch of actor logits.
    pub fn act_on_logits(&self, g: Element, batch: &Matrix) -> Result<Matrix> {
        Ok(crate::equi_nn::act_on_columns(&self.symmetry.action_rep, Spatial::Scalar, g, batch)?)
    }

    pub fn initial_state(&self, mode: InitMode, batch: usize, rng: &mut impl Rng) -> PolicyState {
        PolicyState {
            trunks: self.trunks.iter().map(|t| t.lstm.initial_state(mode, batch, rng)).collect(),
        }
    }

    pub fn realize(&self, tape: &Tape, store: &ParamStore) -> Result<RealizedPolicy> {
        let trunks = self
            .trunks
            .iter()
            .map(|t| Ok((t.encoder.realize(tape, store)?, t.lstm.realize(tape, store)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(RealizedPolicy {
            trunks,
            actor: self.actor.realize(tape, store)?,
            critic: self.critic.realize(tape, store)?,
            critic_trunk: self.trunks.len() - 1,
        })
    }

    /// Runs the network over a sequence of input batches (one column per
    /// sequence) from `state`, returning per-step logits and values.
    pub fn forward_sequence(
        &self,
        store: &ParamStore,
        inputs: &[Matrix],
        state: &PolicyState,
    ) -> Result<(Vec<(Matrix, Matrix)>, PolicyState)> {
        let tape = Tape::new();
        let net = self.realize(&tape, store)?;
        let mut vars = state.to_tape(&tape);
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            let step = net.step(&tape, tape.constant(x.clone()), &vars)?;
            out.push((tape.value(step.logits), tape.value(step.value)));
            vars = step.state;
        }
        Ok((out, PolicyState::from_tape(&tape, &vars)))
    }
}

/// LSTM state of every trunk, one column per environment.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState {
    pub trunks: Vec<LstmState>,
}

impl PolicyState {
    pub fn batch(&self) -> usize {
        self.trunks[0].batch()
    }

    pub fn to_tape(&self, tape: &Tape) -> Vec<(Var, Var)> {
        self.trunks
            .iter()
            .map(|s| (tape.constant(s.hidden.clone()), tape.constant(s.cell.clone())))
            .collect()
    }

    pub fn from_tape(tape: &Tape, vars: &[(Var, Var)]) -> Self {
        Self {
            trunks: vars
                .iter()
                .map(|&(h, c)| LstmState {
                    hidden: tape.value(h),
                    cell: tape.value(c),
                })
                .collect(),
        }
    }

    /// Overwrites column `c` with column `src` of `other`.
    pub fn set_column_from(&mut self, c: usize, other: &PolicyState, src: usize) {
        for (s, o) in self.trunks.iter_mut().zip(&other.trunks) {
            let (h, cell) = o.column(src);
            s.set_column(c, &h, &cell);
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.trunks
            .iter()
            .zip(&other.trunks)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct PolicyStep {
    /// `n_actions × batch`
    pub logits: Var,
    /// `1 × batch`
    pub value: Var,
    pub state: Vec<(Var, Var)>,
}

/// A [`PolicyNetwork`] with its weights placed on one tape.
#[derive(Clone, Debug)]
pub struct RealizedPolicy {
    trunks: Vec<(RealizedSequential, RealizedLstm)>,
    actor: RealizedSequential,
    critic: RealizedSequential,
    critic_trunk: usize,
}

impl RealizedPolicy {
    pub fn step(&self, tape: &Tape, x: Var, state: &[(Var, Var)]) -> Result<PolicyStep> {
        let mut next = Vec::with_capacity(self.trunks.len());
        for ((encoder, lstm), &(h, c)) in self.trunks.iter().zip(state) {
            let z = encoder.apply(tape, x)?;
            next.push(lstm.step(tape, z, h, c)?);
        }
        let logits = self.actor.apply(tape, next[0].0)?;
        let value = self.critic.apply(tape, next[self.critic_trunk].0)?;
        Ok(PolicyStep {
            logits,
            value,
            state: next,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{CarFlag1dConfig, CarFlag2dConfig};
    use crate::group::FeatureField;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(env: &EnvConfig, variant: Variant, seed: u64) -> (ParamStore, PolicyNetwork) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = PolicyNetwork::new(&mut store, env, &NetworkConfig::default(), variant, &mut rng).unwrap();
        (store, n)
    }

    #[test]
    fn shapes_and_trunks() {
        let env = EnvConfig::Carflag2d(CarFlag2dConfig {
            size: 5,
            ..Default::default()
        });
        for v in Variant::ALL {
            let (store, n) = net(&env, v, 0);
            assert_eq!(n.n_trunks(), if v.shares_trunk() { 1 } else { 2 });
            assert_eq!((n.input_dim(), n.n_actions()), (50, 4));
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let s = n.initial_state(InitMode::Zero, 3, &mut rng);
            let x = Matrix::new(50, 3, (0..150).map(|i| (i % 7) as f64 * 0.1).collect());
            let (out, s2) = n.forward_sequence(&store, &[x.clone(), x], &s).unwrap();
            assert_eq!(out[1].0.shape(), (4, 3));
            assert_eq!(out[1].1.shape(), (1, 3));
            assert_eq!(s2.batch(), 3);
        }
    }

    #[test]
    fn previous_action_is_a_sign_feature() {
        let env = EnvConfig::Carflag1d(CarFlag1dConfig::default());
        let (_, n) = net(&env, Variant::Equi, 0);
        assert_eq!(n.input_features(&[0.2, 0.0], None), vec![0.2, 0.0, 0.0]);
        assert_eq!(n.input_features(&[0.2, 1.0], Some(carflag1d::LEFT)), vec![0.2, 1.0, -1.0]);
        let x = FeatureField::scalar(n.input_rep().clone(), vec![0.2, 1.0, 1.0]).unwrap();
        assert_eq!(x.act(Element(1)).unwrap().values(), &[-0.2, -1.0, -1.0]);
    }

    #[test]
    fn plain_variant_has_more_parameters() {
        let env = EnvConfig::Carflag1d(CarFlag1dConfig::default());
        let (equi, _) = net(&env, Variant::Equi, 0);
        let (plain, _) = net(&env, Variant::Plain, 0);
        assert!(plain.num_scalars() > equi.num_scalars());
        assert!(plain.ids().all(|id| !plain.name(id).ends_with("coeff")));
    }

    #[test]
    fn asymmetric_encoder_is_rejected_for_equi() {
        let env = EnvConfig::Carflag2d(CarFlag2dConfig {
            size: 5,
            ..Default::default()
        });
        let cfg = NetworkConfig {
            encoder: Some(vec![LayerSpec::Conv {
                fields: 2,
                rep: RepSpec::Single("regular".into()),
                kernel: 2,
                padding: 0,
                stride: 2,
            }]),
            ..Default::default()
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(PolicyNetwork::new(&mut store, &env, &cfg, Variant::Equi, &mut rng).is_err());
    }
}
