use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_rep, Conv2d, ConvSpec, Linear, NnError, RealizedConv2d, RealizedLinear, Result};
use crate::autodiff::{Matrix, ParamStore, Tape, Var};
use crate::group::{FeatureField, Representation, RepSpec, Spatial};

/// One entry of a layer list in a network config. Output representations are
/// `fields` copies of `rep`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Linear {
        fields: usize,
        #[serde(default = "regular")]
        rep: RepSpec,
    },
    Conv {
        fields: usize,
        #[serde(default = "regular")]
        rep: RepSpec,
        kernel: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Relu,
}

fn regular() -> RepSpec {
    RepSpec::Single("regular".into())
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug)]
pub enum Layer {
    Linear(Linear),
    Conv(Conv2d),
    Relu,
}

/// Layers applied in order. A grid collapsed to a single pixel is treated as
/// a scalar field from then on.
#[derive(Clone, Debug)]
pub struct Sequential {
    in_rep: Representation,
    in_spatial: Spatial,
    out_rep: Representation,
    out_spatial: Spatial,
    equivariant: bool,
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(in_rep: &Representation, in_spatial: Spatial, equivariant: bool) -> Self {
        Self {
            in_rep: in_rep.clone(),
            in_spatial,
            out_rep: in_rep.clone(),
            out_spatial: in_spatial,
            equivariant,
            layers: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_specs(
        store: &mut ParamStore,
        name: &str,
        in_rep: &Representation,
        in_spatial: Spatial,
        specs: &[LayerSpec],
        equivariant: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut net = Self::new(in_rep, in_spatial, equivariant);
        let group = in_rep.group().clone();
        for (i, spec) in specs.iter().enumerate() {
            let lname = format!("{name}.{i}");
            match spec {
                LayerSpec::Linear { fields, rep } => {
                    let out = Representation::multiple(&rep.build(&group)?, *fields)?;
                    net.push_linear(store, &lname, &out, rng)?;
                }
                LayerSpec::Conv {
                    fields,
                    rep,
                    kernel,
                    padding,
                    stride,
                } => {
                    let out = Representation::multiple(&rep.build(&group)?, *fields)?;
                    let spec = ConvSpec {
                        kernel: *kernel,
                        padding: *padding,
                        stride: *stride,
                    };
                    net.push_conv(store, &lname, &out, spec, rng)?;
                }
                LayerSpec::Relu => net.push_relu()?,
            }
        }
        Ok(net)
    }

    pub fn push_linear(
        &mut self,
        store: &mut ParamStore,
        name: &str,
        out_rep: &Representation,
        rng: &mut impl Rng,
    ) -> Result<()> {
        if self.out_spatial != Spatial::Scalar {
            return Err(NnError::Config(format!(
                "linear layer `{name}` needs a scalar input, got {:?}",
                self.out_spatial
            )));
        }
        let layer = if self.equivariant {
            Linear::equivariant(store, name, &self.out_rep, out_rep, relu_gain(), rng)?
        } else {
            Linear::free(store, name, &self.out_rep, out_rep, relu_gain(), rng)?
        };
        self.out_rep = out_rep.clone();
        self.layers.push(Layer::Linear(layer));
        Ok(())
    }

    pub fn push_conv(
        &mut self,
        store: &mut ParamStore,
        name: &str,
        out_rep: &Representation,
        spec: ConvSpec,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let Spatial::Grid { height, width } = self.out_spatial else {
            return Err(NnError::Config(format!("conv layer `{name}` needs a grid input")));
        };
        let layer = if self.equivariant {
            Conv2d::equivariant(store, name, &self.out_rep, out_rep, height, width, spec, relu_gain(), rng)?
        } else {
            Conv2d::free(store, name, &self.out_rep, out_rep, height, width, spec, relu_gain(), rng)?
        };
        self.out_rep = out_rep.clone();
        self.out_spatial = match layer.out_spatial() {
            Spatial::Grid { height: 1, width: 1 } => Spatial::Scalar,
            s => s,
        };
        self.layers.push(Layer::Conv(layer));
        Ok(())
    }

    pub fn push_relu(&mut self) -> Result<()> {
        if self.equivariant && !self.out_rep.supports_pointwise() {
            return Err(NnError::Config(format!(
                "ReLU on {} breaks equivariance",
                self.out_rep.label()
            )));
        }
        self.layers.push(Layer::Relu);
        Ok(())
    }

    pub fn in_rep(&self) -> &Representation {
        &self.in_rep
    }

    pub fn in_spatial(&self) -> Spatial {
        self.in_spatial
    }

    pub fn out_rep(&self) -> &Representation {
        &self.out_rep
    }

    pub fn out_spatial(&self) -> Spatial {
        self.out_spatial
    }

    pub fn is_equivariant(&self) -> bool {
        self.equivariant
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn realize(&self, tape: &Tape, store: &ParamStore) -> Result<RealizedSequential> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(match l {
                    Layer::Linear(lin) => RealizedLayer::Linear(lin.realize(tape, store)?),
                    Layer::Conv(conv) => RealizedLayer::Conv(conv.realize(tape, store)?),
                    Layer::Relu => RealizedLayer::Relu,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RealizedSequential { layers })
    }

    pub fn forward_field(&self, store: &ParamStore, field: &FeatureField) -> Result<FeatureField> {
        check_rep(&self.in_rep, field.rep())?;
        if field.spatial() != self.in_spatial {
            return Err(NnError::UnsupportedSpatial(format!(
                "expected {:?}, got {:?}",
                self.in_spatial,
                field.spatial()
            )));
        }
        let tape = Tape::new();
        let net = self.realize(&tape, store)?;
        let x = tape.constant(Matrix::column(field.values().to_vec()));
        let y = net.apply(&tape, x)?;
        Ok(FeatureField::new(
            self.out_rep.clone(),
            self.out_spatial,
            tape.value(y).into_data(),
        )?)
    }
}

fn relu_gain() -> f64 {
    std::f64::consts::SQRT_2
}

#[derive(Clone, Copy, Debug)]
enum RealizedLayer {
    Linear(RealizedLinear),
    Conv(RealizedConv2d),
    Relu,
}

#[derive(Clone, Debug)]
pub struct RealizedSequential {
    layers: Vec<RealizedLayer>,
}

impl RealizedSequential {
    pub fn apply(&self, tape: &Tape, mut x: Var) -> Result<Var> {
        for l in &self.layers {
            x = match l {
                RealizedLayer::Linear(lin) => lin.apply(tape, x)?,
                RealizedLayer::Conv(conv) => conv.apply(tape, x)?,
                RealizedLayer::Relu => tape.relu(x),
            };
        }
        Ok(x)
    }
}

/// Actor or critic head: a hidden layer with ReLU, then a linear map to the
/// action's regular representation (actor) or to one trivial field (critic).
#[derive(Clone, Debug)]
pub struct Outputter {
    net: Sequential,
}

impl Outputter {
    #[allow(clippy::too_many_arguments)]
    pub fn actor(
        store: &mut ParamStore,
        name: &str,
        in_rep: &Representation,
        hidden: &Representation,
        action_rep: &Representation,
        equivariant: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::build(store, name, in_rep, hidden, action_rep, equivariant, 0.01, rng)
    }

    pub fn critic(
        store: &mut ParamStore,
        name: &str,
        in_rep: &Representation,
        hidden: &Representation,
        equivariant: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let out = Representation::trivial(in_rep.group());
        Self::build(store, name, in_rep, hidden, &out, equivariant, 1.0, rng)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        store: &mut ParamStore,
        name: &str,
        in_rep: &Representation,
        hidden: &Representation,
        out_rep: &Representation,
        equivariant: bool,
        out_gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut net = Sequential::new(in_rep, Spatial::Scalar, equivariant);
        net.push_linear(store, &format!("{name}.hidden"), hidden, rng)?;
        net.push_relu()?;
        // small final layer so the initial policy is close to uniform
        let layer = if equivariant {
            Linear::equivariant(store, &format!("{name}.out"), hidden, out_rep, out_gain, rng)?
        } else {
            Linear::free(store, &format!("{name}.out"), hidden, out_rep, out_gain, rng)?
        };
        net.out_rep = out_rep.clone();
        net.layers.push(Layer::Linear(layer));
        Ok(Self { net })
    }

    pub fn network(&self) -> &Sequential {
        &self.net
    }

    pub fn out_rep(&self) -> &Representation {
        self.net.out_rep()
    }

    pub fn realize(&self, tape: &Tape, store: &ParamStore) -> Result<RealizedSequential> {
        self.net.realize(tape, store)
    }

    pub fn forward_field(&self, store: &ParamStore, field: &FeatureField) -> Result<FeatureField> {
        self.net.forward_field(store, field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equi_nn::gaussian;
    use crate::group::{Element, Group, Representation as Rep};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randomize_all(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for id in store.ids().collect::<Vec<_>>() {
            let n = store.values(id).len();
            store.values_mut(id).copy_from_slice(&gaussian(rng, n, 1.0));
        }
    }

    #[test]
    fn critic_is_invariant() {
        let g = Group::cyclic(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rin = Rep::multiple(&Rep::regular(&g), 4).unwrap();
        let hidden = Rep::multiple(&Rep::regular(&g), 3).unwrap();
        for _ in 0..20 {
            let mut store = ParamStore::new();
            let critic = Outputter::critic(&mut store, "v", &rin, &hidden, true, &mut rng).unwrap();
            randomize_all(&mut store, &mut rng);
            let x = FeatureField::scalar(rin.clone(), gaussian(&mut rng, rin.dim(), 1.0)).unwrap();
            let v = critic.forward_field(&store, &x).unwrap().values()[0];
            for e in g.elements() {
                let gv = critic.forward_field(&store, &x.act(e).unwrap()).unwrap().values()[0];
                assert!((gv - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn uniform_logits_are_fixed_points() {
        let g = Group::cyclic(4).unwrap();
        let logits = FeatureField::scalar(Rep::regular(&g), vec![0.3; 4]).unwrap();
        for e in g.elements() {
            assert_eq!(logits.act(e).unwrap(), logits);
        }
    }

    #[test]
    fn rotating_history_turns_right_into_up() {
        // a 3x3 one-hot image through convolutions and the actor head
        let g = Group::cyclic(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let specs = [
            LayerSpec::Conv { fields: 2, rep: regular(), kernel: 3, padding: 1, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv { fields: 4, rep: regular(), kernel: 3, padding: 0, stride: 1 },
            LayerSpec::Relu,
        ];
        let grid = Spatial::Grid { height: 3, width: 3 };
        let trunk = Sequential::from_specs(&mut store, "f", &Rep::trivial(&g), grid, &specs, true, &mut rng).unwrap();
        assert_eq!(trunk.out_spatial(), Spatial::Scalar);
        let actor = Outputter::actor(&mut store, "pi", trunk.out_rep(), &Rep::multiple(&Rep::regular(&g), 2).unwrap(), &Rep::regular(&g), true, &mut rng).unwrap();
        randomize_all(&mut store, &mut rng);
        // agent to the left of center
        let mut img = vec![0.0; 9];
        img[3] = 1.0;
        let x = FeatureField::new(Rep::trivial(&g), grid, img).unwrap();
        let logits = actor.forward_field(&store, &trunk.forward_field(&store, &x).unwrap()).unwrap();
        let rotated = actor
            .forward_field(&store, &trunk.forward_field(&store, &x.act(Element(1)).unwrap()).unwrap())
            .unwrap();
        // actions 0=Right 1=Up 2=Left 3=Down; a quarter turn maps a to a+1
        for a in 0..4 {
            assert!((rotated.values()[(a + 1) % 4] - logits.values()[a]).abs() < 1e-10);
        }
    }

    #[test]
    fn relu_on_standard_rep_is_rejected() {
        let g = Group::cyclic(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mut net = Sequential::new(&Rep::trivial(&g), Spatial::Scalar, true);
        net.push_linear(&mut store, "a", &Rep::standard(&g), &mut rng).unwrap();
        assert!(net.push_relu().is_err());
        let mut plain = Sequential::new(&Rep::trivial(&g), Spatial::Scalar, false);
        plain.push_linear(&mut store, "b", &Rep::standard(&g), &mut rng).unwrap();
        assert!(plain.push_relu().is_ok());
    }

    #[test]
    fn layer_spec_parses_from_toml() {
        let spec: LayerSpec = toml::from_str("kind = \"conv\"\nfields = 4\nkernel = 3\npadding = 1").unwrap();
        assert_eq!(spec, LayerSpec::Conv { fields: 4, rep: regular(), kernel: 3, padding: 1, stride: 1 });
        let bad: std::result::Result<LayerSpec, _> = toml::from_str("kind = \"linear\"\nfields = 2\nkernel = 3");
        assert!(bad.is_err());
    }
}
