use std::sync::Arc;

use rand::Rng;

use super::{check_rep, gaussian, IntertwinerBasis, Result};
use crate::autodiff::{Matrix, ParamId, ParamStore, SparseMatrix, Tape, Var};
use crate::group::{FeatureField, Representation, Spatial};

#[derive(Clone, Debug)]
pub(crate) enum Constraint {
    /// Weight and bias are realized from coefficients through these maps.
    Equivariant {
        weight: Arc<SparseMatrix>,
        bias: Arc<SparseMatrix>,
    },
    Free,
}

/// Affine map `y = Wx + b` between two representations.
///
/// When equivariant, `W = Σ cᵢBᵢ` over an [`IntertwinerBasis`] and `b` lies in
/// the `ρ_out`-invariant subspace.
#[derive(Clone, Debug)]
pub struct Linear {
    in_rep: Representation,
    out_rep: Representation,
    constraint: Constraint,
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    /// Coefficients are drawn so that the realized weight has the same
    /// expected squared norm as a fan-in scaled dense init with this `gain`.
    pub fn equivariant(
        store: &mut ParamStore,
        name: &str,
        in_rep: &Representation,
        out_rep: &Representation,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let basis = IntertwinerBasis::solve(in_rep, out_rep)?;
        let bias_basis = IntertwinerBasis::solve(&Representation::trivial(in_rep.group()), out_rep)?;
        let k = basis.count();
        let std = if k > 0 {
            gain * (out_rep.dim() as f64 / k as f64).sqrt()
        } else {
            0.0
        };
        let weight = store.add(&format!("{name}.coeff"), k, 1, gaussian(rng, k, std))?;
        let bias = store.add(&format!("{name}.bias_coeff"), bias_basis.count(), 1, vec![0.0; bias_basis.count()])?;
        Ok(Self {
            in_rep: in_rep.clone(),
            out_rep: out_rep.clone(),
            constraint: Constraint::Equivariant {
                weight: basis.realizer(),
                bias: bias_basis.realizer(),
            },
            weight,
            bias,
        })
    }

    pub fn free(
        store: &mut ParamStore,
        name: &str,
        in_rep: &Representation,
        out_rep: &Representation,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (din, dout) = (in_rep.dim(), out_rep.dim());
        let std = gain / (din.max(1) as f64).sqrt();
        let weight = store.add(&format!("{name}.weight"), dout, din, gaussian(rng, dout * din, std))?;
        let bias = store.add(&format!("{name}.bias"), dout, 1, vec![0.0; dout])?;
        Ok(Self {
            in_rep: in_rep.clone(),
            out_rep: out_rep.clone(),
            constraint: Constraint::Free,
            weight,
            bias,
        })
    }

    pub fn in_rep(&self) -> &Representation {
        &self.in_rep
    }

    pub fn out_rep(&self) -> &Representation {
        &self.out_rep
    }

    pub fn is_equivariant(&self) -> bool {
        matches!(self.constraint, Constraint::Equivariant { .. })
    }

    pub fn weight_param(&self) -> ParamId {
        self.weight
    }

    pub fn bias_param(&self) -> ParamId {
        self.bias
    }

    pub fn realize(&self, tape: &Tape, store: &ParamStore) -> Result<RealizedLinear> {
        let (din, dout) = (self.in_rep.dim(), self.out_rep.dim());
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        Ok(match &self.constraint {
            Constraint::Equivariant { weight, bias } => {
                let flat = tape.sparse_linear(weight, w)?;
                RealizedLinear {
                    weight: tape.reshape(flat, dout, din)?,
                    bias: tape.sparse_linear(bias, b)?,
                }
            }
            Constraint::Free => RealizedLinear { weight: w, bias: b },
        })
    }

    /// The dense `W` currently encoded by the parameters.
    pub fn weight_matrix(&self, store: &ParamStore) -> Matrix {
        let (din, dout) = (self.in_rep.dim(), self.out_rep.dim());
        match &self.constraint {
            Constraint::Equivariant { weight, .. } => {
                let flat = weight.mul(&store.matrix(self.weight));
                Matrix::new(dout, din, flat.into_data())
            }
            Constraint::Free => store.matrix(self.weight),
        }
    }

    pub fn bias_vector(&self, store: &ParamStore) -> Vec<f64> {
        match &self.constraint {
            Constraint::Equivariant { bias, .. } => bias.mul(&store.matrix(self.bias)).into_data(),
            Constraint::Free => store.values(self.bias).to_vec(),
        }
    }

    /// Applies the layer to a scalar field of `in_rep`.
    pub fn forward_field(&self, store: &ParamStore, field: &FeatureField) -> Result<FeatureField> {
        check_rep(&self.in_rep, field.rep())?;
        if field.spatial() != Spatial::Scalar {
            return Err(super::NnError::UnsupportedSpatial(
                "linear layers take scalar fields; use a 1x1 convolution per pixel".into(),
            ));
        }
        let w = self.weight_matrix(store);
        let mut y = w.matmul(&Matrix::column(field.values().to_vec())).into_data();
        for (v, b) in y.iter_mut().zip(self.bias_vector(store)) {
            *v += b;
        }
        Ok(FeatureField::scalar(self.out_rep.clone(), y)?)
    }
}

pub fn equi_linear_forward(layer: &Linear, store: &ParamStore, field: &FeatureField) -> Result<FeatureField> {
    layer.forward_field(store, field)
}

/// A [`Linear`] whose weight and bias have been placed on a tape.
#[derive(Clone, Copy, Debug)]
pub struct RealizedLinear {
    pub weight: Var,
    pub bias: Var,
}

impl RealizedLinear {
    pub fn apply(&self, tape: &Tape, x: Var) -> Result<Var> {
        let wx = tape.matmul(self.weight, x)?;
        Ok(tape.add(wx, self.bias)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equi_nn::{act_on_columns, NnError};
    use crate::group::{Group, Representation as Rep};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_field(rep: &Rep, rng: &mut ChaCha8Rng) -> FeatureField {
        FeatureField::scalar(rep.clone(), gaussian(rng, rep.dim(), 1.0)).unwrap()
    }

    fn randomize_bias(layer: &Linear, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let n = store.values(layer.bias_param()).len();
        store.values_mut(layer.bias_param()).copy_from_slice(&gaussian(rng, n, 1.0));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let g = Group::cyclic(4).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = Rep::multiple(&Rep::regular(&g), 2).unwrap();
        let layer = Linear::equivariant(&mut store, "l", &r, &r, 1.0, &mut rng).unwrap();
        let y = layer.forward_field(&store, &FeatureField::zeros(r.clone(), Spatial::Scalar)).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_coefficients_give_constant_invariant_bias() {
        let g = Group::cyclic(4).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rin = Rep::direct_sum(&[Rep::trivial(&g), Rep::standard(&g)]).unwrap();
        let rout = Rep::direct_sum(&[Rep::regular(&g), Rep::trivial(&g)]).unwrap();
        let layer = Linear::equivariant(&mut store, "l", &rin, &rout, 1.0, &mut rng).unwrap();
        store.values_mut(layer.weight_param()).fill(0.0);
        randomize_bias(&layer, &mut store, &mut rng);
        let b = layer.bias_vector(&store);
        // invariant bias is constant on the regular block
        assert!((b[0] - b[1]).abs() < 1e-12 && (b[1] - b[2]).abs() < 1e-12);
        for _ in 0..5 {
            let y = layer.forward_field(&store, &random_field(&rin, &mut rng)).unwrap();
            assert_eq!(y.values(), b.as_slice());
        }
    }

    #[test]
    fn rep_mismatch_is_reported() {
        let g = Group::cyclic(4).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = Linear::equivariant(&mut store, "l", &Rep::regular(&g), &Rep::trivial(&g), 1.0, &mut rng).unwrap();
        let wrong = FeatureField::zeros(Rep::standard(&g), Spatial::Scalar);
        assert!(matches!(layer.forward_field(&store, &wrong), Err(NnError::RepMismatch { .. })));
    }

    #[test]
    fn random_layers_are_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for group in [Group::cyclic(4).unwrap(), Group::reflection()] {
            let sign_or_std = Rep::sign(&group).unwrap_or_else(|_| Rep::standard(&group));
            let rin = Rep::direct_sum(&[Rep::regular(&group), Rep::trivial(&group), sign_or_std]).unwrap();
            let rout = Rep::direct_sum(&[Rep::regular(&group), Rep::regular(&group), Rep::trivial(&group)]).unwrap();
            for trial in 0..100 {
                let mut store = ParamStore::new();
                let layer = Linear::equivariant(&mut store, &format!("l{trial}"), &rin, &rout, 1.0, &mut rng).unwrap();
                randomize_bias(&layer, &mut store, &mut rng);
                for _ in 0..10 {
                    let x = random_field(&rin, &mut rng);
                    let fx = layer.forward_field(&store, &x).unwrap();
                    for g in group.elements() {
                        let lhs = layer.forward_field(&store, &x.act(g).unwrap()).unwrap();
                        let rhs = fx.act(g).unwrap();
                        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn tape_realization_matches_dense_oracle() {
        let g = Group::cyclic(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rin = Rep::multiple(&Rep::regular(&g), 3).unwrap();
        let rout = Rep::multiple(&Rep::regular(&g), 2).unwrap();
        let mut store = ParamStore::new();
        let layer = Linear::equivariant(&mut store, "l", &rin, &rout, 1.0, &mut rng).unwrap();
        randomize_bias(&layer, &mut store, &mut rng);
        let x = Matrix::new(rin.dim(), 3, gaussian(&mut rng, rin.dim() * 3, 1.0));
        let tape = Tape::new();
        let realized = layer.realize(&tape, &store).unwrap();
        let xv = tape.constant(x.clone());
        let y = tape.value(realized.apply(&tape, xv).unwrap());
        // dense layer with the realized W
        let w = layer.weight_matrix(&store);
        let b = layer.bias_vector(&store);
        let mut expected = w.matmul(&x);
        for r in 0..expected.rows() {
            for c in 0..expected.cols() {
                expected.set(r, c, expected.get(r, c) + b[r]);
            }
        }
        assert!(y.max_abs_diff(&expected) < 1e-12);
        // and the batched action agrees with per-column fields
        let gx = act_on_columns(&rin, Spatial::Scalar, g.generator(), &x).unwrap();
        let tape = Tape::new();
        let realized = layer.realize(&tape, &store).unwrap();
        let gxv = tape.constant(gx);
        let gy = tape.value(realized.apply(&tape, gxv).unwrap());
        let expected_gy = act_on_columns(&rout, Spatial::Scalar, g.generator(), &y).unwrap();
        assert!(gy.max_abs_diff(&expected_gy) < 1e-10);
    }

    #[test]
    fn weights_stay_in_subspace_for_any_coefficients() {
        let g = Group::reflection();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rin = Rep::direct_sum(&[Rep::sign(&g).unwrap(), Rep::regular(&g)]).unwrap();
        let rout = Rep::multiple(&Rep::regular(&g), 3).unwrap();
        let mut store = ParamStore::new();
        let layer = Linear::equivariant(&mut store, "l", &rin, &rout, 1.0, &mut rng).unwrap();
        for _ in 0..20 {
            let n = store.values(layer.weight_param()).len();
            store.values_mut(layer.weight_param()).copy_from_slice(&gaussian(&mut rng, n, 10.0));
            let w = layer.weight_matrix(&store);
            let w = nalgebra::DMatrix::from_row_slice(w.rows(), w.cols(), w.data());
            for e in g.elements() {
                let d = rout.matrix(e).unwrap() * &w - &w * rin.matrix(e).unwrap();
                assert!(d.amax() < 1e-10);
            }
        }
    }
}
