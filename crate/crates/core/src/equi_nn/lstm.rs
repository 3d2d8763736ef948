use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_rep, gaussian, Linear, NnError, RealizedLinear, Result};
use crate::autodiff::{Matrix, ParamStore, Tape, Var};
use crate::group::{Element, FeatureField, Representation, Spatial};

/// How the recurrent state is seeded at the start of an episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    #[default]
    Zero,
    /// Standard normal draws; breaks equivariance of the whole network.
    Random,
}

/// Batched LSTM state, one column per sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub hidden: Matrix,
    pub cell: Matrix,
}

impl LstmState {
    pub fn batch(&self) -> usize {
        self.hidden.cols()
    }

    pub fn column(&self, c: usize) -> (Vec<f64>, Vec<f64>) {
        (self.hidden.col(c), self.cell.col(c))
    }

    pub fn set_column(&mut self, c: usize, hidden: &[f64], cell: &[f64]) {
        for (r, (&h, &x)) in hidden.iter().zip(cell).enumerate() {
            self.hidden.set(r, c, h);
            self.cell.set(r, c, x);
        }
    }

    pub fn act(&self, rep: &Representation, g: Element) -> Result<Self> {
        Ok(Self {
            hidden: super::act_on_columns(rep, Spatial::Scalar, g, &self.hidden)?,
            cell: super::act_on_columns(rep, Spatial::Scalar, g, &self.cell)?,
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.hidden
            .max_abs_diff(&other.hidden)
            .max(self.cell.max_abs_diff(&other.cell))
    }
}

/// LSTM whose fused gate map `[x; h] ↦ [i; f; o; g]` is a single linear
/// layer, equivariant when built with [`LstmCell::equivariant`].
///
/// The candidate goes through tanh twice when `double_tanh` is set:
/// `g = tanh(W_g [x; h] + b_g)` and `c' = f ⊙ c + i ⊙ tanh(g)`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    input_rep: Representation,
    hidden_rep: Representation,
    gates: Linear,
    pub double_tanh: bool,
}

impl LstmCell {
    pub fn equivariant(
        store: &mut ParamStore,
        name: &str,
        input_rep: &Representation,
        hidden_rep: &Representation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !hidden_rep.supports_pointwise() {
            return Err(NnError::Config(format!(
                "LSTM hidden representation {} does not commute with pointwise gates",
                hidden_rep.label()
            )));
        }
        let (joint, stacked) = Self::gate_reps(input_rep, hidden_rep)?;
        let gates = Linear::equivariant(store, &format!("{name}.gates"), &joint, &stacked, 1.0, rng)?;
        Ok(Self::from_gates(input_rep, hidden_rep, gates))
    }

    pub fn free(
        store: &mut ParamStore,
        name: &str,
        input_rep: &Representation,
        hidden_rep: &Representation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (joint, stacked) = Self::gate_reps(input_rep, hidden_rep)?;
        let gates = Linear::free(store, &format!("{name}.gates"), &joint, &stacked, 1.0, rng)?;
        Ok(Self::from_gates(input_rep, hidden_rep, gates))
    }

    fn gate_reps(input: &Representation, hidden: &Representation) -> Result<(Representation, Representation)> {
        Ok((
            Representation::direct_sum(&[input.clone(), hidden.clone()])?,
            Representation::multiple(hidden, 4)?,
        ))
    }

    fn from_gates(input_rep: &Representation, hidden_rep: &Representation, gates: Linear) -> Self {
        Self {
            input_rep: input_rep.clone(),
            hidden_rep: hidden_rep.clone(),
            gates,
            double_tanh: true,
        }
    }

    pub fn input_rep(&self) -> &Representation {
        &self.input_rep
    }

    pub fn hidden_rep(&self) -> &Representation {
        &self.hidden_rep
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_rep.dim()
    }

    pub fn gates(&self) -> &Linear {
        &self.gates
    }

    pub fn is_equivariant(&self) -> bool {
        self.gates.is_equivariant()
    }

    pub fn initial_state(&self, mode: InitMode, batch: usize, rng: &mut impl Rng) -> LstmState {
        let d = self.hidden_dim();
        match mode {
            InitMode::Zero => LstmState {
                hidden: Matrix::zeros(d, batch),
                cell: Matrix::zeros(d, batch),
            },
            InitMode::Random => LstmState {
                hidden: Matrix::new(d, batch, gaussian(rng, d * batch, 1.0)),
                cell: Matrix::new(d, batch, gaussian(rng, d * batch, 1.0)),
            },
        }
    }

    pub fn realize(&self, tape: &Tape, store: &ParamStore) -> Result<RealizedLstm> {
        Ok(RealizedLstm {
            gates: self.gates.realize(tape, store)?,
            hidden: self.hidden_dim(),
            double_tanh: self.double_tanh,
        })
    }

    /// One step on single fields, evaluated off-tape.
    pub fn step_fields(
        &self,
        store: &ParamStore,
        x: &FeatureField,
        hidden: &FeatureField,
        cell: &FeatureField,
    ) -> Result<(FeatureField, FeatureField)> {
        check_rep(&self.input_rep, x.rep())?;
        check_rep(&self.hidden_rep, hidden.rep())?;
        check_rep(&self.hidden_rep, cell.rep())?;
        let tape = Tape::new();
        let cell_fn = self.realize(&tape, store)?;
        let xv = tape.constant(Matrix::column(x.values().to_vec()));
        let hv = tape.constant(Matrix::column(hidden.values().to_vec()));
        let cv = tape.constant(Matrix::column(cell.values().to_vec()));
        let (h, c) = cell_fn.step(&tape, xv, hv, cv)?;
        Ok((
            FeatureField::scalar(self.hidden_rep.clone(), tape.value(h).into_data())?,
            FeatureField::scalar(self.hidden_rep.clone(), tape.value(c).into_data())?,
        ))
    }
}

pub fn lstm_step(
    cell: &LstmCell,
    store: &ParamStore,
    x: &FeatureField,
    hidden: &FeatureField,
    state_cell: &FeatureField,
) -> Result<(FeatureField, FeatureField)> {
    cell.step_fields(store, x, hidden, state_cell)
}

#[derive(Clone, Copy, Debug)]
pub struct RealizedLstm {
    gates: RealizedLinear,
    hidden: usize,
    double_tanh: bool,
}

impl RealizedLstm {
    /// Returns `(h', c')` for batched `x`, `h`, `c`.
    pub fn step(&self, tape: &Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let d = self.hidden;
        let joint = tape.concat(&[x, h])?;
        let pre = self.gates.apply(tape, joint)?;
        let i = tape.sigmoid(tape.slice_rows(pre, 0, d)?);
        let f = tape.sigmoid(tape.slice_rows(pre, d, d)?);
        let o = tape.sigmoid(tape.slice_rows(pre, 2 * d, d)?);
        let mut g = tape.tanh(tape.slice_rows(pre, 3 * d, d)?);
        if self.double_tanh {
            g = tape.tanh(g);
        }
        let c_next = tape.add(tape.hadamard(f, c)?, tape.hadamard(i, g)?)?;
        let h_next = tape.hadamard(o, tape.tanh(c_next))?;
        Ok((h_next, c_next))
    }
}
