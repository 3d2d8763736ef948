use std::sync::Arc;

use rand::Rng;

use super::linear::Constraint;
use super::{check_rep, gaussian, IntertwinerBasis, NnError, Result};
use crate::autodiff::{ConvGeometry, Matrix, ParamId, ParamStore, SparseMatrix, Tape, Var};
use crate::group::{FeatureField, Representation, Spatial};

/// Kernel size, zero padding and stride of a square convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn same(kernel: usize) -> Self {
        Self {
            kernel,
            padding: kernel / 2,
            stride: 1,
        }
    }
}

/// Grid convolution between per-pixel channel representations.
///
/// The equivariant version solves the steerable-kernel constraint
/// `K(g·p) = ρ_out(g) K(p) ρ_in(g)⁻¹` as an intertwiner problem from
/// `ρ_in ⊗ ρ_grid(k×k)` to `ρ_out`; one shared coefficient set thus yields
/// every rotated/flipped copy of the kernel.
#[derive(Clone, Debug)]
pub struct Conv2d {
    in_rep: Representation,
    out_rep: Representation,
    geom: ConvGeometry,
    constraint: Constraint,
    bias_expand: Arc<SparseMatrix>,
    kernel: ParamId,
    bias: ParamId,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn equivariant(
        store: &mut ParamStore,
        name: &str,
        in_rep: &Representation,
        out_rep: &Representation,
        height: usize,
        width: usize,
        spec: ConvSpec,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let geom = geometry(in_rep, out_rep, height, width, spec)?;
        let group = in_rep.group();
        // both the input grid and the kernel footprint must carry an exact group action
        Representation::grid(group, height, width)?;
        let kernel_grid = Representation::grid(group, spec.kernel, spec.kernel)?;
        if !geom.is_symmetric() {
            return Err(NnError::UnsupportedSpatial(format!(
                "{height}x{width} input with kernel {} padding {} stride {} samples an asymmetric output grid",
                spec.kernel, spec.padding, spec.stride
            )));
        }
        let k2 = spec.kernel * spec.kernel;
        let kcols = geom.kernel_cols();
        let mut entries = Vec::new();
        let mut count = 0;
        // fields repeat, so only a handful of distinct leaf pairs get solved
        let mut solved: Vec<(&Representation, &Representation, IntertwinerBasis)> = Vec::new();
        let in_leaves = in_rep.leaves();
        for (out_off, out_leaf) in out_rep.leaves() {
            for &(in_off, in_leaf) in &in_leaves {
                let k = match solved.iter().position(|(i, o, _)| *i == in_leaf && *o == out_leaf) {
                    Some(k) => k,
                    None => {
                        let lifted = Representation::tensor(in_leaf, &kernel_grid)?;
                        solved.push((in_leaf, out_leaf, IntertwinerBasis::solve(&lifted, out_leaf)?));
                        solved.len() - 1
                    }
                };
                let basis = &solved[k].2;
                for e in basis.elements() {
                    for &(r, c, v) in e {
                        // lifted coordinate c = a·k² + p for input channel a at offset p
                        let col = (in_off + c / k2) * k2 + c % k2;
                        entries.push(((out_off + r) * kcols + col, count, v));
                    }
                    count += 1;
                }
            }
        }
        let weight = Arc::new(SparseMatrix::new(geom.out_channels * kcols, count, entries));
        let bias_basis = IntertwinerBasis::solve(&Representation::trivial(group), out_rep)?;
        let spatial = geom.out_height() * geom.out_width();
        let bias_entries = bias_basis
            .elements()
            .iter()
            .enumerate()
            .flat_map(|(k, e)| {
                e.iter()
                    .flat_map(move |&(r, _, v)| (0..spatial).map(move |p| (r * spatial + p, k, v)))
            })
            .collect();
        let bias_map = Arc::new(SparseMatrix::new(geom.output_len(), bias_basis.count(), bias_entries));
        let std = if count > 0 {
            gain * (geom.out_channels as f64 / count as f64).sqrt()
        } else {
            0.0
        };
        let kernel = store.add(&format!("{name}.coeff"), count, 1, gaussian(rng, count, std))?;
        let bias = store.add(&format!("{name}.bias_coeff"), bias_basis.count(), 1, vec![0.0; bias_basis.count()])?;
        Ok(Self {
            in_rep: in_rep.clone(),
            out_rep: out_rep.clone(),
            geom,
            constraint: Constraint::Equivariant {
                weight,
                bias: Arc::clone(&bias_map),
            },
            bias_expand: bias_map,
            kernel,
            bias,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn free(
        store: &mut ParamStore,
        name: &str,
        in_rep: &Representation,
        out_rep: &Representation,
        height: usize,
        width: usize,
        spec: ConvSpec,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let geom = geometry(in_rep, out_rep, height, width, spec)?;
        let (cout, kcols) = (geom.out_channels, geom.kernel_cols());
        let std = gain / (kcols as f64).sqrt();
        let kernel = store.add(&format!("{name}.kernel"), cout, kcols, gaussian(rng, cout * kcols, std))?;
        let bias = store.add(&format!("{name}.bias"), cout, 1, vec![0.0; cout])?;
        let spatial = geom.out_height() * geom.out_width();
        let expand = (0..cout)
            .flat_map(|c| (0..spatial).map(move |p| (c * spatial + p, c, 1.0)))
            .collect();
        Ok(Self {
            in_rep: in_rep.clone(),
            out_rep: out_rep.clone(),
            geom,
            constraint: Constraint::Free,
            bias_expand: Arc::new(SparseMatrix::new(geom.output_len(), cout, expand)),
            kernel,
            bias,
        })
    }

    pub fn in_rep(&self) -> &Representation {
        &self.in_rep
    }

    pub fn out_rep(&self) -> &Representation {
        &self.out_rep
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.geom
    }

    pub fn is_equivariant(&self) -> bool {
        matches!(self.constraint, Constraint::Equivariant { .. })
    }

    pub fn kernel_param(&self) -> ParamId {
        self.kernel
    }

    pub fn bias_param(&self) -> ParamId {
        self.bias
    }

    pub fn out_spatial(&self) -> Spatial {
        Spatial::Grid {
            height: self.geom.out_height(),
            width: self.geom.out_width(),
        }
    }

    pub fn realize(&self, tape: &Tape, store: &ParamStore) -> Result<RealizedConv2d> {
        let k = tape.param(store, self.kernel);
        let b = tape.param(store, self.bias);
        let kernel = match &self.constraint {
            Constraint::Equivariant { weight, .. } => {
                let flat = tape.sparse_linear(weight, k)?;
                tape.reshape(flat, self.geom.out_channels, self.geom.kernel_cols())?
            }
            Constraint::Free => k,
        };
        Ok(RealizedConv2d {
            kernel,
            bias: tape.sparse_linear(&self.bias_expand, b)?,
            geom: self.geom,
        })
    }

    /// The dense `out_channels × (in_channels·k·k)` kernel.
    pub fn kernel_matrix(&self, store: &ParamStore) -> Matrix {
        match &self.constraint {
            Constraint::Equivariant { weight, .. } => Matrix::new(
                self.geom.out_channels,
                self.geom.kernel_cols(),
                weight.mul(&store.matrix(self.kernel)).into_data(),
            ),
            Constraint::Free => store.matrix(self.kernel),
        }
    }

    pub fn forward_field(&self, store: &ParamStore, field: &FeatureField) -> Result<FeatureField> {
        check_rep(&self.in_rep, field.rep())?;
        let expected = Spatial::Grid {
            height: self.geom.height,
            width: self.geom.width,
        };
        if field.spatial() != expected {
            return Err(NnError::UnsupportedSpatial(format!(
                "expected {expected:?}, got {:?}",
                field.spatial()
            )));
        }
        let tape = Tape::new();
        let realized = self.realize(&tape, store)?;
        let x = tape.constant(Matrix::column(field.values().to_vec()));
        let y = realized.apply(&tape, x)?;
        Ok(FeatureField::new(
            self.out_rep.clone(),
            self.out_spatial(),
            tape.value(y).into_data(),
        )?)
    }
}

pub fn equi_conv2d_forward(layer: &Conv2d, store: &ParamStore, field: &FeatureField) -> Result<FeatureField> {
    layer.forward_field(store, field)
}

fn geometry(
    in_rep: &Representation,
    out_rep: &Representation,
    height: usize,
    width: usize,
    spec: ConvSpec,
) -> Result<ConvGeometry> {
    if in_rep.group() != out_rep.group() {
        return Err(NnError::Config("conv input and output use different groups".into()));
    }
    let geom = ConvGeometry {
        in_channels: in_rep.dim(),
        out_channels: out_rep.dim(),
        height,
        width,
        kernel: spec.kernel,
        padding: spec.padding,
        stride: spec.stride,
    };
    if !geom.is_valid() {
        return Err(NnError::UnsupportedSpatial(format!(
            "kernel {} does not fit a {height}x{width} input with padding {}",
            spec.kernel, spec.padding
        )));
    }
    Ok(geom)
}

#[derive(Clone, Copy, Debug)]
pub struct RealizedConv2d {
    pub kernel: Var,
    pub bias: Var,
    geom: ConvGeometry,
}

impl RealizedConv2d {
    pub fn apply(&self, tape: &Tape, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, self.kernel, self.geom)?;
        Ok(tape.add(y, self.bias)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equi_nn::Linear;
    use crate::group::{Group, Representation as Rep};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randomize(store: &mut ParamStore, id: ParamId, rng: &mut ChaCha8Rng) {
        let n = store.values(id).len();
        store.values_mut(id).copy_from_slice(&gaussian(rng, n, 1.0));
    }

    #[test]
    fn constant_input_gives_constant_interior() {
        let g = Group::cyclic(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let rin = Rep::trivial(&g);
        let rout = Rep::regular(&g);
        let conv = Conv2d::equivariant(&mut store, "c", &rin, &rout, 5, 5, ConvSpec::same(3), 1.0, &mut rng).unwrap();
        let x = FeatureField::new(rin, Spatial::Grid { height: 5, width: 5 }, vec![1.5; 25]).unwrap();
        let y = conv.forward_field(&store, &x).unwrap();
        for c in 0..4 {
            let v = y.values()[c * 25 + 6];
            for r in 1..4 {
                for col in 1..4 {
                    assert!((y.values()[c * 25 + r * 5 + col] - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn random_convs_commute_with_group_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for group in [Group::cyclic(4).unwrap(), Group::reflection()] {
            let rin = Rep::direct_sum(&[Rep::trivial(&group), Rep::regular(&group)]).unwrap();
            let rout = Rep::multiple(&Rep::regular(&group), 2).unwrap();
            let specs = [
                (5, ConvSpec::same(3)),
                (5, ConvSpec { kernel: 3, padding: 1, stride: 2 }),
                (5, ConvSpec { kernel: 5, padding: 0, stride: 1 }),
            ];
            for (trial, (n, spec)) in specs.iter().cycle().take(30).enumerate() {
                let mut store = ParamStore::new();
                let conv = Conv2d::equivariant(&mut store, &format!("c{trial}"), &rin, &rout, *n, *n, *spec, 1.0, &mut rng).unwrap();
                randomize(&mut store, conv.bias_param(), &mut rng);
                for _ in 0..5 {
                    let x = FeatureField::new(
                        rin.clone(),
                        Spatial::Grid { height: *n, width: *n },
                        gaussian(&mut rng, rin.dim() * n * n, 1.0),
                    )
                    .unwrap();
                    let y = conv.forward_field(&store, &x).unwrap();
                    for g in group.elements() {
                        let lhs = conv.forward_field(&store, &x.act(g).unwrap()).unwrap();
                        let rhs = y.act(g).unwrap();
                        assert!(lhs.max_abs_diff(&rhs) < 1e-10, "{group} {g} {spec:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn one_by_one_kernel_is_pointwise_linear() {
        let g = Group::cyclic(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rin = Rep::direct_sum(&[Rep::trivial(&g), Rep::regular(&g)]).unwrap();
        let rout = Rep::multiple(&Rep::regular(&g), 2).unwrap();
        let mut store = ParamStore::new();
        let conv = Conv2d::equivariant(&mut store, "c", &rin, &rout, 3, 3, ConvSpec::same(1), 1.0, &mut rng).unwrap();
        randomize(&mut store, conv.bias_param(), &mut rng);
        // the same coefficients drive a linear layer over the same basis
        let mut lin_store = ParamStore::new();
        let lin = Linear::equivariant(&mut lin_store, "l", &rin, &rout, 1.0, &mut rng).unwrap();
        lin_store.values_mut(lin.weight_param()).copy_from_slice(store.values(conv.kernel_param()));
        lin_store.values_mut(lin.bias_param()).copy_from_slice(store.values(conv.bias_param()));
        let x = FeatureField::new(rin.clone(), Spatial::Grid { height: 3, width: 3 }, gaussian(&mut rng, rin.dim() * 9, 1.0)).unwrap();
        let y = conv.forward_field(&store, &x).unwrap();
        for p in 0..9 {
            let px: Vec<f64> = (0..rin.dim()).map(|c| x.values()[c * 9 + p]).collect();
            let py = lin.forward_field(&lin_store, &FeatureField::scalar(rin.clone(), px).unwrap()).unwrap();
            for c in 0..rout.dim() {
                assert!((y.values()[c * 9 + p] - py.values()[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_square_input_is_rejected_for_rotations() {
        let g = Group::cyclic(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let err = Conv2d::equivariant(&mut store, "c", &Rep::trivial(&g), &Rep::regular(&g), 3, 5, ConvSpec::same(3), 1.0, &mut rng);
        assert!(err.is_err());
        let err = Conv2d::equivariant(&mut store, "d", &Rep::trivial(&g), &Rep::regular(&g), 6, 6, ConvSpec { kernel: 3, padding: 1, stride: 2 }, 1.0, &mut rng);
        assert!(matches!(err, Err(NnError::UnsupportedSpatial(_))));
    }

    #[test]
    fn free_conv_has_full_kernel() {
        let g = Group::cyclic(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let conv = Conv2d::free(&mut store, "c", &Rep::trivial(&g), &Rep::regular(&g), 5, 5, ConvSpec::same(3), 1.0, &mut rng).unwrap();
        assert_eq!(store.shape(conv.kernel_param()), (4, 9));
        assert!(!conv.is_equivariant());
    }
}
